"""Built-in microsystems, occurrence extraction and extraction scoring."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .query import PatternError, PatternSyntaxError, load_patterns, match_sentence

log = logging.getLogger(__name__)

NONE_LABEL = "NONE"
OCCURRENCE_COLUMNS = ("ms", "form", "writing_id", "cefr", "nationality", "topic", "sent", "idx")
GOLD_COLUMNS = ("writing_id", "sent_no", "anchor_index", "ms", "annotation")


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class MicrosystemSpec:
    name: str
    forms: tuple
    patterns: dict = field(hash=False)  # form -> tuple of Pattern alternatives
    function: str = ""

    def __post_init__(self):
        if len(self.forms) < 2:
            raise ValueError(f"{self.name}: a microsystem needs at least two forms")
        if set(self.patterns) != set(self.forms):
            raise ValueError(f"{self.name}: patterns {sorted(self.patterns)} do not cover forms {list(self.forms)}")

    @property
    def k(self):
        return len(self.forms)

    def form_index(self, form):
        return self.forms.index(form)


@dataclass(frozen=True)
class Occurrence:
    ms: str
    form: str
    writing_id: str
    cefr: str
    nationality: str
    topic: str | None
    sent: int
    idx: int
    sentence: object = field(default=None, compare=False, repr=False)
    bindings: tuple = field(default=(), compare=False, repr=False)

    @property
    def site(self):
        return (self.writing_id, self.sent, self.idx)

    @property
    def span(self):
        if not self.bindings:
            return 1
        idx = [i for _, i in self.bindings]
        return max(idx) - min(idx) + 1


@dataclass(frozen=True)
class OverlapDiagnostic:
    ms: str
    writing_id: str
    sent: int
    idx: int
    forms: tuple


# ------------------------------------------------------------ definitions

def load_microsystems(text: str) -> list:
    """Parse a microsystem definition file (headers plus PATTERN blocks)."""
    headers = []
    body = []
    current = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        key, _, rest = s.partition(" ")
        if key in ("MICROSYSTEM", "FUNCTION", "FORMS"):
            rest = rest.strip()
            if key == "MICROSYSTEM":
                current = {"name": rest, "function": "", "forms": None, "line": line_no}
                headers.append(current)
            elif current is None:
                raise PatternSyntaxError(f"{key} before any MICROSYSTEM header", line_no, 1)
            elif key == "FUNCTION":
                current["function"] = rest
            else:
                current["forms"] = tuple(rest.split())
            body.append("#")
        else:
            body.append(line)
    patterns = load_patterns("\n".join(body))
    specs = []
    seen = set()
    for h in headers:
        if h["name"] in seen:
            raise PatternError(f"microsystem {h['name']} defined twice")
        seen.add(h["name"])
        if not h["forms"]:
            raise PatternError(f"microsystem {h['name']} (line {h['line']}) has no FORMS")
        by_form = {f: [] for f in h["forms"]}
        for pname, pat in patterns.items():
            parts = pname.split(":")
            if parts[0] != h["name"]:
                continue
            if len(parts) < 2 or parts[1] not in by_form:
                raise PatternError(f"pattern {pname} names no form of {h['name']}")
            by_form[parts[1]].append(pat)
        missing = [f for f, ps in by_form.items() if not ps]
        if missing:
            raise PatternError(f"microsystem {h['name']}: no pattern for form(s) {missing}")
        specs.append(MicrosystemSpec(h["name"], h["forms"], {f: tuple(ps) for f, ps in by_form.items()},
                                     h["function"]))
    orphans = [p for p in patterns if p.split(":")[0] not in seen]
    if orphans:
        raise PatternError(f"patterns outside any microsystem: {orphans}")
    return specs


@lru_cache(maxsize=1)
def _builtin():
    text = resources.files("microsys").joinpath("data/microsystems.msq").read_text(encoding="utf-8")
    return tuple(load_microsystems(text))


def builtin_microsystems() -> list:
    return list(_builtin())


MS_NAMES = ("PRF", "DET", "MLTNN", "DUR", "QUANT1", "QUANT2", "REL")


def get_microsystem(name: str) -> MicrosystemSpec:
    for spec in _builtin():
        if spec.name == name:
            return spec
    raise KeyError(f"unknown microsystem {name!r}; choose from {', '.join(MS_NAMES)}")


# ------------------------------------------------------------ extraction

def _sentence_matches(spec, sentence):
    """form -> {anchor: first match} for one sentence."""
    out = {}
    for form in spec.forms:
        sites = {}
        for pat in spec.patterns[form]:
            for m in match_sentence(pat, sentence):
                sites.setdefault(m.anchor_index, m)
        if sites:
            out[form] = sites
    return out


def extract_occurrences(spec: MicrosystemSpec, docs, diagnostics: list | None = None) -> list:
    """One :class:`Occurrence` per anchor site; sites claimed by two forms are dropped.

    Dropped sites are appended to ``diagnostics`` as :class:`OverlapDiagnostic`.
    """
    out = []
    memo = {}  # shared sentence objects are matched once
    for doc in docs:
        for sent_no, sent in enumerate(doc.sentences, start=1):
            key = id(sent)
            if key not in memo:
                memo[key] = (sent, _sentence_matches(spec, sent))
            found = memo[key][1]
            if not found:
                continue
            claims = {}
            for form, sites in found.items():
                for anchor, m in sites.items():
                    claims.setdefault(anchor, []).append((form, m))
            for anchor in sorted(claims):
                forms = claims[anchor]
                if len(forms) > 1:
                    diag = OverlapDiagnostic(spec.name, doc.writing_id, sent_no, anchor,
                                             tuple(f for f, _ in forms))
                    log.warning("overlapping forms %s at %s/%s/%s; site dropped",
                                diag.forms, doc.writing_id, sent_no, anchor)
                    if diagnostics is not None:
                        diagnostics.append(diag)
                    continue
                form, m = forms[0]
                out.append(Occurrence(
                    ms=spec.name, form=form, writing_id=doc.writing_id, cefr=doc.cefr,
                    nationality=doc.nationality, topic=doc.topic_id, sent=sent_no, idx=anchor,
                    sentence=sent, bindings=m.bindings,
                ))
    return out


def write_occurrences(occs, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(OCCURRENCE_COLUMNS)
    for o in occs:
        w.writerow([o.ms, o.form, o.writing_id, o.cefr, o.nationality, o.topic or "", o.sent, o.idx])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def read_occurrences(stream) -> list:
    """Read an occurrence TSV back; the rows carry no sentence context."""
    reader = csv.DictReader(stream, delimiter="\t")
    if reader.fieldnames is None or tuple(reader.fieldnames) != OCCURRENCE_COLUMNS:
        raise ValueError(f"occurrence TSV must have header {OCCURRENCE_COLUMNS}, got {reader.fieldnames}")
    return [Occurrence(r["ms"], r["form"], r["writing_id"], r["cefr"], r["nationality"],
                       r["topic"] or None, int(r["sent"]), int(r["idx"])) for r in reader]


def resolve_occurrences(rows, docs, spec: MicrosystemSpec) -> list:
    """Re-attach sentence context and bindings to occurrences read from TSV."""
    by_id = {d.writing_id: d for d in docs}
    out = []
    cache = {}
    for r in rows:
        if r.ms != spec.name:
            continue
        doc = by_id.get(r.writing_id)
        if doc is None:
            raise AlignmentError(f"occurrence refers to unknown writing {r.writing_id}")
        if not 1 <= r.sent <= len(doc.sentences):
            raise AlignmentError(f"{r.writing_id}: no sentence {r.sent}")
        sent = doc.sentences[r.sent - 1]
        key = (r.writing_id, r.sent)
        if key not in cache:
            cache[key] = _sentence_matches(spec, sent)
        m = cache[key].get(r.form, {}).get(r.idx)
        if m is None:
            raise AlignmentError(f"{r.writing_id}/{r.sent}/{r.idx}: pattern for {spec.name}:{r.form} does not match")
        out.append(Occurrence(r.ms, r.form, r.writing_id, doc.cefr, doc.nationality, doc.topic_id,
                              r.sent, r.idx, sentence=sent, bindings=m.bindings))
    return out


# ------------------------------------------------------------ evaluation

@dataclass(frozen=True)
class GoldSite:
    writing_id: str
    sent_no: int
    anchor_index: int
    ms: str
    annotation: str

    @property
    def site(self):
        return (self.writing_id, self.sent_no, self.anchor_index)


def read_gold(stream) -> list:
    """Gold standard CSV: ``writing_id, sent_no, anchor_index, ms, annotation``."""
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != list(GOLD_COLUMNS):
        raise ValueError(f"gold CSV must have header {GOLD_COLUMNS}, got {reader.fieldnames}")
    out = []
    for r in reader:
        r = {k.strip(): (v or "").strip() for k, v in r.items()}
        ann = r["annotation"]
        out.append(GoldSite(r["writing_id"], int(r["sent_no"]), int(r["anchor_index"]), r["ms"],
                            NONE_LABEL if ann.lower() == "none" else ann))
    return out


@dataclass(frozen=True)
class ExtractionReport:
    labels: tuple  # forms followed by NONE
    confusion: np.ndarray  # rows gold, columns predicted
    precision: tuple
    recall: tuple
    f1: tuple
    support: tuple

    @property
    def accuracy(self):
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else float("nan")

    @property
    def n(self):
        return int(self.confusion.sum())

    def macro(self):
        return tuple(float(np.mean(v)) for v in (self.precision, self.recall, self.f1))

    def weighted(self):
        w = np.asarray(self.support, dtype=float)
        if w.sum() == 0:
            return (float("nan"),) * 3
        return tuple(float(np.dot(w, v) / w.sum()) for v in (self.precision, self.recall, self.f1))

    def row(self, label):
        i = self.labels.index(label)
        return self.precision[i], self.recall[i], self.f1[i], self.support[i]

    def to_csv(self, ms="", out=None) -> str:
        """Per-label precision/recall/F1/support with accuracy, macro and weighted rows."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["", "precision", "recall", "f1-score", "support"])
        for i, lab in enumerate(self.labels):
            name = lab if lab == NONE_LABEL else f"{ms} {lab}".strip()
            w.writerow([name, f"{self.precision[i]:.2f}", f"{self.recall[i]:.2f}", f"{self.f1[i]:.2f}",
                        self.support[i]])
        w.writerow(["accuracy", "", "", f"{self.accuracy:.2f}", self.n])
        for name, vals in (("macro avg", self.macro()), ("weighted avg", self.weighted())):
            w.writerow([name] + [f"{v:.2f}" for v in vals] + [self.n])
        text = buf.getvalue()
        if out is not None:
            out.write(text)
        return text


def _prf(conf):
    tp = np.diag(conf).astype(float)
    pred = conf.sum(axis=0).astype(float)
    gold = conf.sum(axis=1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(pred > 0, tp / pred, 0.0)
        r = np.where(gold > 0, tp / gold, 0.0)
        f = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
    return p, r, f, gold.astype(int)


def report_from_confusion(labels, confusion) -> ExtractionReport:
    conf = np.asarray(confusion, dtype=int)
    p, r, f, s = _prf(conf)
    return ExtractionReport(tuple(labels), conf, tuple(p.tolist()), tuple(r.tolist()),
                            tuple(f.tolist()), tuple(s.tolist()))


def evaluate_extraction(predicted, gold, forms=None) -> ExtractionReport:
    """Score extracted occurrences against gold sites, NONE being its own class.

    Only sentences present in the gold set are scored. A predicted site in such
    a sentence that the gold set does not list raises :class:`AlignmentError`.
    """
    gold = list(gold)
    predicted = list(predicted)
    if forms is None:
        seen = []
        for o in predicted:
            if o.form not in seen:
                seen.append(o.form)
        for g in gold:
            if g.annotation != NONE_LABEL and g.annotation not in seen:
                seen.append(g.annotation)
        forms = tuple(seen)
    labels = tuple(forms) + (NONE_LABEL,)
    gold_map = {}
    for g in gold:
        if g.site in gold_map:
            raise AlignmentError(f"gold site {g.site} listed twice")
        if g.annotation not in labels:
            raise AlignmentError(f"gold label {g.annotation!r} is not one of {labels}")
        gold_map[g.site] = g.annotation
    sentences = {(w, s) for w, s, _ in gold_map}
    pred_map = {}
    for o in predicted:
        if (o.writing_id, o.sent) not in sentences:
            continue
        if o.site not in gold_map:
            raise AlignmentError(f"predicted site {o.site} ({o.form}) is absent from the gold standard")
        pred_map[o.site] = o.form
    conf = np.zeros((len(labels), len(labels)), dtype=int)
    for site, g in gold_map.items():
        conf[labels.index(g), labels.index(pred_map.get(site, NONE_LABEL))] += 1
    return report_from_confusion(labels, conf)
