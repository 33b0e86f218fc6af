import io
from importlib import resources

import numpy as np
import pytest

from microsys.corpus import Document, parse_conllu
from microsys.microsystems import (MS_NAMES, NONE_LABEL, AlignmentError, GoldSite, builtin_microsystems,
                                   evaluate_extraction, extract_occurrences, get_microsystem, load_microsystems,
                                   read_gold, read_occurrences, report_from_confusion, resolve_occurrences,
                                   write_occurrences)
from microsys.query import PatternError
from oracles import random_sentence

DATA = resources.files("microsys") / "data"


@pytest.fixture(scope="module")
def gold_docs():
    return parse_conllu(DATA.joinpath("gold_mini.conllu").read_bytes())


@pytest.fixture(scope="module")
def gold():
    with DATA.joinpath("gold_mini.csv").open(encoding="utf-8") as fh:
        return read_gold(fh)


def _find(docs, text):
    for d in docs:
        for n, s in enumerate(d.sentences, start=1):
            if s.text == text:
                return d, n, s
    raise LookupError(text)


def test_seven_builtins():
    specs = builtin_microsystems()
    assert [s.name for s in specs] == list(MS_NAMES)
    assert get_microsystem("PRF").k == 3 and get_microsystem("QUANT2").k == 2
    assert get_microsystem("DET").forms == ("a", "the", "zero")
    with pytest.raises(KeyError, match="PRF, DET, MLTNN"):
        get_microsystem("MODAL")


def test_zero_article_uses_negated_edges():
    zero = get_microsystem("DET").patterns["zero"]
    rels = {r for p in zero for e in p.edges if e.negated for r in (e.deprels or ())}
    assert {"det", "nmod:poss"} <= rels


def test_gold_corpus_shape(gold_docs, gold):
    assert len(gold_docs) == 6
    assert sum(len(d.sentences) for d in gold_docs) == 30
    assert {g.ms for g in gold} == set(MS_NAMES)


@pytest.mark.parametrize("ms", MS_NAMES)
def test_gold_extraction_is_perfect(ms, gold_docs, gold):
    spec = get_microsystem(ms)
    diags = []
    occ = extract_occurrences(spec, gold_docs, diags)
    rep = evaluate_extraction(occ, [g for g in gold if g.ms == ms], spec.forms)
    assert not diags
    for j, f in enumerate(spec.forms):
        assert rep.precision[j] == 1.0 and rep.recall[j] == 1.0, (ms, f)
    assert rep.accuracy == 1.0


def test_table3_example_column(gold_docs):
    d, n, s = _find(gold_docs, "The student cares for this .")
    sites = {ms: [(o.form, o.idx) for o in extract_occurrences(get_microsystem(ms), [d]) if o.sent == n]
             for ms in MS_NAMES}
    assert ("this", 5) in sites["PRF"]
    assert ("the", 1) in sites["DET"]  # articles anchor on the article token
    assert sites["DUR"] == []
    d, n, s = _find(gold_docs, "She took a student loan .")
    mltnn = [(o.form, o.idx) for o in extract_occurrences(get_microsystem("MLTNN"), [d]) if o.sent == n]
    assert mltnn == [("N2_N1", 5)]  # anchored on the last noun


def test_who_interrogative_excluded(gold_docs):
    d, n, s = _find(gold_docs, "Who lives here ?")
    assert [o for o in extract_occurrences(get_microsystem("REL"), [d]) if o.sent == n] == []


def test_empty_corpus():
    assert extract_occurrences(get_microsystem("PRF"), []) == []


def test_forms_partition_random_sentences():
    rng = np.random.default_rng(0)
    docs = [Document("r", "B1", sentences=[random_sentence(rng) for _ in range(200)])]
    for spec in builtin_microsystems():
        diags = []
        occ = extract_occurrences(spec, docs, diags)
        assert len({o.site for o in occ}) == len(occ)
        assert not diags


def test_overlap_is_reported_and_dropped(gold_docs):
    text = """MICROSYSTEM X
FUNCTION test
FORMS one two
PATTERN X:one
NODE n[upos=NOUN]
ANCHOR n
PATTERN X:two
NODE n[upos=NOUN]
ANCHOR n
"""
    spec = load_microsystems(text)[0]
    diags = []
    assert extract_occurrences(spec, gold_docs[:1], diags) == []
    assert diags and diags[0].forms == ("one", "two")


def test_definition_errors():
    with pytest.raises(PatternError):
        load_microsystems("MICROSYSTEM X\nFORMS a b\nPATTERN X:a\nNODE n[]\nANCHOR n\n")


def test_occurrence_tsv_round_trip(gold_docs):
    spec = get_microsystem("DET")
    occ = extract_occurrences(spec, gold_docs)
    text = write_occurrences(occ)
    assert text.splitlines()[0] == "ms\tform\twriting_id\tcefr\tnationality\ttopic\tsent\tidx"
    rows = read_occurrences(io.StringIO(text))
    back = resolve_occurrences(rows, gold_docs, spec)
    assert back == occ
    assert all(b.sentence is not None for b in back)
    bad = text.replace("\tthe\t", "\ta\t", 1)
    with pytest.raises(AlignmentError):
        resolve_occurrences(read_occurrences(io.StringIO(bad)), gold_docs, spec)


def test_report_from_stated_confusion():
    # labels it, this, that, NONE; gold rows, predicted columns
    conf = np.zeros((4, 4), dtype=int)
    conf[0, 0] = 40
    conf[0, 3] = 10
    rep = report_from_confusion(("it", "this", "that", NONE_LABEL), conf)
    assert rep.recall[0] == pytest.approx(0.8)
    assert rep.precision[0] == pytest.approx(1.0)
    assert rep.f1[0] == pytest.approx(8 / 9)
    assert rep.support[0] == 50


def test_report_invariants():
    rng = np.random.default_rng(2)
    for _ in range(50):
        conf = rng.integers(0, 20, size=(4, 4))
        rep = report_from_confusion(("a", "b", "c", NONE_LABEL), conf)
        assert rep.accuracy == pytest.approx(np.trace(conf) / conf.sum())
        assert np.array_equal(rep.support, conf.sum(axis=1))
        f1 = [f for f, s in zip(rep.f1, rep.support) if s > 0]
        assert min(f1) - 1e-12 <= rep.weighted()[2] <= max(f1) + 1e-12


def test_perfect_ten_sites(gold_docs):
    spec = get_microsystem("DET")
    occ = extract_occurrences(spec, gold_docs)[:10]
    gold = [GoldSite(o.writing_id, o.sent, o.idx, "DET", o.form) for o in occ]
    rep = evaluate_extraction(occ, gold, spec.forms)
    present = [j for j, s in enumerate(rep.support) if s]
    assert all(rep.precision[j] == rep.recall[j] == rep.f1[j] == 1.0 for j in present)


def test_alignment_errors(gold_docs):
    spec = get_microsystem("DET")
    occ = extract_occurrences(spec, gold_docs)
    # sentences outside the gold set are not scored; a missing site inside one is an error
    assert evaluate_extraction(occ, [], spec.forms).n == 0
    first = occ[0]
    others = [GoldSite(o.writing_id, o.sent, o.idx, "DET", o.form) for o in occ[1:]
              if (o.writing_id, o.sent) == (first.writing_id, first.sent)]
    others.append(GoldSite(first.writing_id, first.sent, 99, "DET", NONE_LABEL))
    with pytest.raises(AlignmentError, match="absent from the gold"):
        evaluate_extraction(occ, others, spec.forms)
    g = GoldSite(occ[0].writing_id, occ[0].sent, occ[0].idx, "DET", "an")
    with pytest.raises(AlignmentError):
        evaluate_extraction(occ[:1], [g], spec.forms)


def test_appendix_d_layout(gold_docs, gold):
    spec = get_microsystem("PRF")
    rep = evaluate_extraction(extract_occurrences(spec, gold_docs), [g for g in gold if g.ms == "PRF"],
                              spec.forms)
    lines = rep.to_csv("PRF").splitlines()
    assert lines[0] == ",precision,recall,f1-score,support"
    assert [l.split(",")[0] for l in lines[1:]] == ["PRF it", "PRF this", "PRF that", "NONE", "accuracy",
                                                     "macro avg", "weighted avg"]
    assert lines[5].split(",")[1:3] == ["", ""]


def test_gold_header_checked():
    with pytest.raises(ValueError):
        read_gold(io.StringIO("a,b\n1,2\n"))
