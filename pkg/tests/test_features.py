import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microsys.corpus import SentenceGraph, Token
from microsys.features import (BOS, EOS, INTERCEPT, NULL, OTHER, DesignMatrix, FeatureConfigError, FeatureSchema,
                               FeatureVector, build_schema, encode, extract_all, extract_features, select_features,
                               write_features)
from microsys.features import Column
from microsys.microsystems import MS_NAMES, Occurrence
from oracles import random_sentence


def _occ(sentence, idx, form="it", ms="PRF", nat="fr", bindings=()):
    return Occurrence(ms, form, "w", "B1", nat, None, 1, idx, sentence, bindings)


def _star(n):
    """Token 1 is the root, every other token hangs off it."""
    toks = [Token(1, "go", "go", "VERB", "VB", {"Tense": "Pres"}, 0, "root")]
    toks += [Token(i, "dog", "dog", "NOUN", "NNS", {"Number": "Plur"}, 1, "obj") for i in range(2, n + 1)]
    return SentenceGraph(toks)


def test_prf_schema_columns():
    s = build_schema("PRF")
    names = s.names
    for off in ("minus3", "minus2", "minus1", "plus1", "plus2", "plus3", "plus4", "plus5"):
        assert f"{off}_upos" in names and f"{off}_xpos" in names
    assert "minus4_upos" not in names and "plus6_upos" not in names
    for n in ("head_upos", "deprel", "root_distance", "pattern_tokens", "plus1_Number", "plus1_Person",
              "plus1_Mood", "plus1_Tense", "nationality"):
        assert n in names
    assert not any("lemma" in n or "form" in n for n in names)


def test_det_has_head_number_and_wider_window():
    names = build_schema("DET").names
    assert "head_Number" in names
    assert "minus5_xpos" in names


@pytest.mark.parametrize("ms", MS_NAMES)
def test_schemas_deterministic_and_unique(ms):
    a, b = build_schema(ms), build_schema(ms)
    assert a == b
    assert len(set(a.names)) == len(a)


def test_unknown_schema_and_duplicates():
    with pytest.raises(KeyError):
        build_schema("MODAL")
    c = Column("x", "numeric", ("root_distance",))
    with pytest.raises(FeatureConfigError):
        FeatureSchema("X", (c, c))


def test_boundary_sentinels():
    s = _star(4)
    v = dict(zip(build_schema("PRF").names, extract_features(build_schema("PRF"), _occ(s, 1)).values))
    assert v["minus1_upos"] == v["minus3_xpos"] == BOS
    assert v["plus3_upos"] == "NOUN" and v["plus4_upos"] == EOS
    assert v["head_upos"] == NULL  # the root has no head


def test_root_distance_one_tenth():
    s = _star(10)
    schema = build_schema("PRF")
    v = dict(zip(schema.names, extract_features(schema, _occ(s, 2)).values))
    assert v["root_distance"] == pytest.approx(0.1)


def test_next_token_morphology_passthrough():
    s = _star(3)
    schema = build_schema("PRF")
    v = dict(zip(schema.names, extract_features(schema, _occ(s, 2)).values))
    assert v["plus1_Number"] == "Plur"
    assert v["plus1_Tense"] == NULL


def test_pattern_tokens_is_span():
    s = _star(6)
    schema = build_schema("PRF")
    v = dict(zip(schema.names, extract_features(schema, _occ(s, 2, bindings=(("A", 2), ("B", 5)))).values))
    assert v["pattern_tokens"] == 4.0


def test_missing_sentence_rejected():
    with pytest.raises(FeatureConfigError):
        extract_features(build_schema("PRF"), _occ(None, 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_extraction_is_total(seed):
    rng = np.random.default_rng(seed)
    s = random_sentence(rng)
    for ms in MS_NAMES:
        schema = build_schema(ms)
        for i in range(1, len(s) + 1):
            vec = extract_features(schema, _occ(s, i, ms=ms))
            assert len(vec.values) == len(schema)
            for c, x in zip(schema.columns, vec.values):
                if c.kind == "numeric":
                    assert np.isfinite(x)


# ------------------------------------------------------------ selection

def _vectors(cols, rows):
    schema = FeatureSchema("T", tuple(Column(n, "categorical", ("deprel",)) for n in cols))
    return schema, [FeatureVector(None, tuple(r)) for r in rows]


def test_selection_rules():
    rows = [(NULL, BOS, "x")] * 6 + [("a", "b", "x")] * 4
    schema, vecs = _vectors(("nully", "bossy", "full"), rows)
    kept = select_features(schema, vecs)
    assert kept.names == ("bossy", "full")


def test_selection_threshold_is_strict():
    rows = [(NULL,)] * 5 + [("a",)] * 5
    schema, vecs = _vectors(("half",), rows)
    assert select_features(schema, vecs).names == ("half",)


def test_selection_all_dropped():
    schema, vecs = _vectors(("a",), [(NULL,)] * 3)
    with pytest.raises(FeatureConfigError):
        select_features(schema, vecs)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.sampled_from([NULL, "a", BOS]), min_size=3, max_size=3), min_size=1, max_size=20),
       st.integers(0, 20))
def test_selection_monotone_in_complete_rows(rows, extra):
    schema, vecs = _vectors(("c0", "c1", "c2"), rows)
    try:
        before = set(select_features(schema, vecs).names)
    except FeatureConfigError:
        return
    _, more = _vectors(("c0", "c1", "c2"), rows + [("a", "a", "a")] * extra)
    assert before <= set(select_features(schema, more).names)


# ------------------------------------------------------------ encoding

class _O:
    def __init__(self, form):
        self.form = form


def _cat_schema():
    return FeatureSchema("T", (Column("c", "categorical", ("deprel",)),))


def test_two_levels_give_two_indicators_plus_other_and_intercept():
    schema = _cat_schema()
    vecs = [FeatureVector(_O("u"), (v,)) for v in "abab"]
    dm = encode(schema, vecs, classes=["u", "v"])
    assert dm.columns == ("c=a", "c=b", f"c={OTHER}", INTERCEPT)
    X = dm.dense()
    assert np.array_equal(X[:, :2], [[1, 0], [0, 1], [1, 0], [0, 1]])
    assert not X[:, 2].any() and X[:, 3].all()
    assert dm.y.tolist() == [0, 0, 0, 0]


def test_unseen_level_maps_to_other():
    schema = _cat_schema()
    train = encode(schema, [FeatureVector(_O("u"), (v,)) for v in "ab"], classes=["u"])
    test = encode(schema, [FeatureVector(_O("u"), ("c",))], levels=train.levels)
    assert test.columns == train.columns
    assert test.dense()[0].tolist() == [0, 0, 1, 1]


def test_numeric_zscores_use_population_sd():
    schema = FeatureSchema("T", (Column("n", "numeric", ("root_distance",)),))
    dm = encode(schema, [FeatureVector(_O("u"), (x,)) for x in (1.0, 2.0, 3.0)], classes=["u"])
    assert dm.dense()[:, 0] == pytest.approx([-1.224744871391589, 0.0, 1.224744871391589])


def test_constant_numeric_dropped_and_empty_rejected():
    schema = FeatureSchema("T", (Column("n", "numeric", ("root_distance",)),))
    dm = encode(schema, [FeatureVector(_O("u"), (2.0,))] * 3, classes=["u"])
    assert dm.columns == (INTERCEPT,)
    with pytest.raises(FeatureConfigError):
        encode(schema, [], classes=["u"])


def test_frozen_levels_reject_other_schema():
    train = encode(_cat_schema(), [FeatureVector(_O("u"), ("a",))], classes=["u"])
    other = FeatureSchema("T", (Column("d", "categorical", ("deprel",)),))
    with pytest.raises(FeatureConfigError):
        encode(other, [FeatureVector(_O("u"), ("a",))], levels=train.levels)


def _real_vectors(n=40, seed=0):
    rng = np.random.default_rng(seed)
    occs = []
    for _ in range(n):
        s = random_sentence(rng)
        i = int(rng.integers(1, len(s) + 1))
        occs.append(_occ(s, i, form=("it", "this", "that")[int(rng.integers(3))]))
    schema = build_schema("PRF")
    return schema, extract_all(schema, occs)


def test_decode_round_trip():
    schema, vecs = _real_vectors()
    dm = encode(schema, vecs)
    cat = [i for i, c in enumerate(schema.columns) if c.kind == "categorical"]
    for r, v in enumerate(vecs):
        back = dm.decode_row(r)
        assert all(back[schema.columns[i].name] == v.values[i] for i in cat)


def test_only_other_columns_can_be_all_zero():
    schema, vecs = _real_vectors()
    dm = encode(schema, vecs)
    empty = [c for c, nz in zip(dm.columns, dm.X.getnnz(axis=0)) if nz == 0]
    assert all(c.endswith(f"={OTHER}") for c in empty)


def test_design_matrix_save_load(tmp_path):
    schema, vecs = _real_vectors(10)
    dm = encode(schema, vecs)
    dm.save(tmp_path / "x.npy")
    back = DesignMatrix.load(tmp_path / "x.npy")
    assert back.columns == dm.columns and back.levels == dm.levels
    assert np.array_equal(back.dense(), dm.dense()) and np.array_equal(back.y, dm.y)


def test_feature_dump_header():
    schema, vecs = _real_vectors(3)
    text = write_features(schema, vecs)
    assert text.splitlines()[0].split(",")[:5] == ["writing_id", "sent", "idx", "form", "minus3_upos"]
    assert len(text.splitlines()) == 4
