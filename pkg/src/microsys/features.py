"""Per-microsystem feature schemas, feature extraction, selection and encoding.

Categorical windows use three sentinel values: ``__BOS__``/``__EOS__`` for
positions before/after the sentence and ``__NULL__`` for attributes that do
not apply (a noun has no Tense, a root has no head). Only ``__NULL__`` counts
as missing during selection.

The left window is three tokens for proforms and five for the other
microsystems, following the per-microsystem feature tables.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

BOS = "__BOS__"
EOS = "__EOS__"
NULL = "__NULL__"
OTHER = "__OTHER__"
INTERCEPT = "(intercept)"

VERBAL = ("VERB", "AUX")


class FeatureConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "categorical" or "numeric"
    source: tuple

    @property
    def description(self):
        kind = self.source[0]
        if kind == "window":
            _, off, attr = self.source
            return f"{attr} at offset {off:+d}"
        if kind == "head":
            return f"{self.source[1]} of head"
        if kind == "head_verb_feat":
            return f"feats.{self.source[1]} of head if verbal"
        return {
            "deprel": "deprel(anchor)",
            "root_distance": "norm-root-distance",
            "pattern_tokens": "pattern token count",
            "head_position": "head position",
            "anchor_position": "anchor position",
            "nationality": "nationality",
        }[kind]


@dataclass(frozen=True)
class FeatureSchema:
    ms: str
    columns: tuple

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise FeatureConfigError(f"{self.ms}: duplicate column names")

    @property
    def names(self):
        return tuple(c.name for c in self.columns)

    def __len__(self):
        return len(self.columns)

    def keep(self, names):
        names = set(names)
        return replace(self, columns=tuple(c for c in self.columns if c.name in names))

    def to_json(self):
        return {"ms": self.ms, "columns": [[c.name, c.kind, list(c.source)] for c in self.columns]}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["ms"], tuple(Column(n, k, tuple(s)) for n, k, s in obj["columns"]))


def _offset_name(off):
    return f"minus{-off}" if off < 0 else f"plus{off}"


def _window(left, right):
    cols = []
    for off in list(range(-left, 0)) + list(range(1, right + 1)):
        for attr in ("upos", "xpos"):
            cols.append(Column(f"{_offset_name(off)}_{attr}", "categorical", ("window", off, attr)))
    return cols


def _morph(off, feat):
    return Column(f"{_offset_name(off)}_{feat}", "categorical", ("window", off, f"feats.{feat}"))


def _head_pos(xpos=True):
    cols = [Column("head_upos", "categorical", ("head", "upos"))]
    if xpos:
        cols.append(Column("head_xpos", "categorical", ("head", "xpos")))
    return cols


_DEPREL = Column("deprel", "categorical", ("deprel",))
_ROOTDIST = Column("root_distance", "numeric", ("root_distance",))
_SPAN = Column("pattern_tokens", "numeric", ("pattern_tokens",))
_HEADPOS = Column("head_position", "numeric", ("head_position",))
_ANCHORPOS = Column("anchor_position", "numeric", ("anchor_position",))
_NAT = Column("nationality", "categorical", ("nationality",))


def _schema_columns(ms):
    if ms == "PRF":
        return (_window(3, 5) + _head_pos() + [_DEPREL, _ROOTDIST, _SPAN]
                + [_morph(1, f) for f in ("Number", "Person", "Mood", "Tense")] + [_NAT])
    if ms == "DET":
        return (_window(5, 5) + _head_pos() + [_DEPREL, _ROOTDIST, _HEADPOS, _ANCHORPOS,
                Column("head_Number", "categorical", ("head", "feats.Number")), _NAT])
    if ms == "DUR":
        return (_window(5, 5) + [_DEPREL, _ROOTDIST, _ANCHORPOS]
                + [_morph(1, "Number"), _morph(2, "Number"), _morph(-1, "Number"), _NAT])
    if ms == "QUANT1":
        return (_window(5, 5) + _head_pos() + [_DEPREL, _ROOTDIST, _HEADPOS, _ANCHORPOS]
                + [_morph(1, "Number"), _morph(2, "Number"), _morph(-1, "Number"), _NAT])
    if ms == "QUANT2":
        return (_window(5, 5) + _head_pos() + [_DEPREL, _ROOTDIST, _HEADPOS, _ANCHORPOS]
                + [_morph(1, "Number"), _NAT])
    if ms == "MLTNN":
        return _window(5, 5) + _head_pos(xpos=False) + [_DEPREL, _ROOTDIST, _NAT]
    if ms == "REL":
        return (_window(5, 5) + _head_pos() + [_DEPREL, _ROOTDIST, _HEADPOS, _ANCHORPOS]
                + [_morph(1, "Mood"), _morph(1, "VerbForm"), _morph(1, "Tense"),
                   Column("head_Tense", "categorical", ("head_verb_feat", "Tense")),
                   _morph(-1, "Number"), _NAT])
    raise KeyError(f"no feature schema for microsystem {ms!r}")


def build_schema(ms: str) -> FeatureSchema:
    return FeatureSchema(ms, tuple(_schema_columns(ms)))


# ------------------------------------------------------------ extraction

@dataclass(frozen=True)
class FeatureVector:
    occurrence: object
    values: tuple


def _attr(tok, attr):
    if attr.startswith("feats."):
        return tok.feats.get(attr[6:], NULL)
    v = getattr(tok, attr)
    return NULL if v in ("", "_") else v


def _value(col, occ):
    s = occ.sentence
    a = occ.idx
    tok = s[a]
    kind = col.source[0]
    if kind == "window":
        j = a + col.source[1]
        if j < 1:
            return BOS
        if j > len(s):
            return EOS
        return _attr(s[j], col.source[2])
    if kind == "head":
        return NULL if tok.head == 0 else _attr(s[tok.head], col.source[1])
    if kind == "head_verb_feat":
        if tok.head == 0 or s[tok.head].upos not in VERBAL:
            return NULL
        return s[tok.head].feats.get(col.source[1], NULL)
    if kind == "deprel":
        return tok.deprel
    if kind == "root_distance":
        return s.depth(a) / len(s)
    if kind == "pattern_tokens":
        return float(occ.span)
    if kind == "head_position":
        return float(tok.head)
    if kind == "anchor_position":
        return float(a)
    if kind == "nationality":
        return occ.nationality or NULL
    raise FeatureConfigError(f"unknown feature source {col.source!r}")


def extract_features(schema: FeatureSchema, occ) -> FeatureVector:
    if occ.sentence is None:
        raise FeatureConfigError(f"occurrence {occ.site} carries no sentence context")
    return FeatureVector(occ, tuple(_value(c, occ) for c in schema.columns))


def extract_all(schema, occurrences):
    """Vectors for many occurrences; repeated (sentence, anchor, nationality) sites are computed once."""
    memo = {}
    out = []
    for o in occurrences:
        key = (id(o.sentence), o.idx, o.nationality, o.span)
        if key not in memo:
            memo[key] = (o.sentence, extract_features(schema, o).values)
        out.append(FeatureVector(o, memo[key][1]))
    return out


def missing_rates(schema, vectors):
    n = len(vectors)
    if n == 0:
        raise FeatureConfigError("no vectors")
    return {c.name: sum(1 for v in vectors if v.values[i] == NULL) / n
            for i, c in enumerate(schema.columns)}


def select_features(schema: FeatureSchema, vectors, max_missing: float = 0.5) -> FeatureSchema:
    """Drop columns whose ``__NULL__`` rate exceeds ``max_missing``.

    Sentence-boundary sentinels are not missing values. Use training vectors
    only so the test schema stays identical.
    """
    rates = missing_rates(schema, vectors)
    kept = schema.keep([name for name, r in rates.items() if r <= max_missing])
    if not kept.columns:
        raise FeatureConfigError(f"{schema.ms}: every feature exceeds {max_missing:.0%} missing values")
    return kept


def project(vectors, schema, target):
    """Restrict vectors extracted with ``schema`` to the columns of ``target``."""
    pos = [schema.names.index(n) for n in target.names]
    return [FeatureVector(v.occurrence, tuple(v.values[i] for i in pos)) for v in vectors]


def write_features(schema, vectors, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["writing_id", "sent", "idx", "form"] + list(schema.names))
    for v in vectors:
        o = v.occurrence
        w.writerow([o.writing_id, o.sent, o.idx, o.form] +
                   [repr(x) if isinstance(x, float) else x for x in v.values])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


# ------------------------------------------------------------ encoding

@dataclass
class DesignMatrix:
    X: sparse.csr_matrix
    y: np.ndarray | None  # class codes 0..K-1 in ``levels["classes"]`` order
    columns: tuple
    levels: dict

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def classes(self):
        return tuple(self.levels["classes"])

    def dense(self):
        return self.X.toarray()

    def decode_row(self, i):
        """Categorical values of row ``i`` recovered from its indicators."""
        row = self.X.getrow(i)
        on = {self.columns[j] for j, v in zip(row.indices, row.data) if v != 0}
        out = {}
        for name, levels in self.levels["categorical"].items():
            hit = [lv for lv in levels + [OTHER] if f"{name}={lv}" in on]
            out[name] = hit[0] if hit else None
        return out

    def save(self, path):
        """Dense ``.npy`` container with a JSON sidecar describing the columns."""
        np.save(path, self.dense())
        side = {"columns": list(self.columns), "levels": self.levels,
                "y": None if self.y is None else self.y.tolist()}
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(side, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        X = np.load(path if str(path).endswith(".npy") else str(path) + ".npy")
        with open(str(path) + ".json", encoding="utf-8") as fh:
            side = json.load(fh)
        y = None if side["y"] is None else np.asarray(side["y"], dtype=int)
        return cls(sparse.csr_matrix(X), y, tuple(side["columns"]), side["levels"])


def fit_levels(schema, vectors, classes):
    if not vectors:
        raise FeatureConfigError("cannot fit an encoding on zero rows")
    cat, num = {}, {}
    for i, c in enumerate(schema.columns):
        col = [v.values[i] for v in vectors]
        if c.kind == "categorical":
            cat[c.name] = sorted(set(col))
        else:
            arr = np.asarray(col, dtype=float)
            sd = float(arr.std())
            if sd > 0:
                num[c.name] = [float(arr.mean()), sd]
    return {"ms": schema.ms, "classes": list(classes), "schema": schema.to_json(),
            "categorical": cat, "numeric": num}


def encoded_columns(schema, levels):
    cols = []
    for c in schema.columns:
        if c.kind == "categorical":
            cols += [f"{c.name}={lv}" for lv in levels["categorical"][c.name]] + [f"{c.name}={OTHER}"]
        elif c.name in levels["numeric"]:
            cols.append(c.name)
    cols.append(INTERCEPT)
    return tuple(cols)


def encode(schema: FeatureSchema, vectors, levels: dict | None = None, classes=None) -> DesignMatrix:
    """One-hot categoricals (plus an ``__OTHER__`` column each), z-scored numerics, intercept.

    Without ``levels`` the dictionary is fitted on ``vectors`` (training). With
    a frozen dictionary, unseen categorical values switch on ``__OTHER__``.
    """
    vectors = list(vectors)
    if not vectors:
        raise FeatureConfigError("cannot encode zero rows")
    if levels is None:
        if classes is None:
            classes = _default_classes(schema.ms, vectors)
        levels = fit_levels(schema, vectors, classes)
    else:
        frozen = FeatureSchema.from_json(levels["schema"])
        if frozen.names != schema.names:
            raise FeatureConfigError("schema differs from the one the level dictionary was fitted on")
    columns = encoded_columns(schema, levels)
    col_index = {c: j for j, c in enumerate(columns)}
    rows, cols, data = [], [], []
    for i, c in enumerate(schema.columns):
        if c.kind == "categorical":
            known = set(levels["categorical"][c.name])
            other = col_index[f"{c.name}={OTHER}"]
            for r, v in enumerate(vectors):
                val = v.values[i]
                rows.append(r)
                cols.append(col_index[f"{c.name}={val}"] if val in known else other)
                data.append(1.0)
        elif c.name in levels["numeric"]:
            mean, sd = levels["numeric"][c.name]
            j = col_index[c.name]
            for r, v in enumerate(vectors):
                z = (float(v.values[i]) - mean) / sd
                if z != 0.0:
                    rows.append(r)
                    cols.append(j)
                    data.append(z)
    n = len(vectors)
    rows += list(range(n))
    cols += [col_index[INTERCEPT]] * n
    data += [1.0] * n
    X = sparse.csr_matrix((data, (rows, cols)), shape=(n, len(columns)))
    classes = levels["classes"]
    y = None
    if all(v.occurrence is not None and v.occurrence.form in classes for v in vectors):
        y = np.asarray([classes.index(v.occurrence.form) for v in vectors], dtype=int)
    return DesignMatrix(X, y, columns, levels)


def _default_classes(ms, vectors):
    from .microsystems import get_microsystem

    try:
        return list(get_microsystem(ms).forms)
    except KeyError:
        return sorted({v.occurrence.form for v in vectors})


def save_levels(levels, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(levels, fh, indent=1, sort_keys=True)


def load_levels(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
