"""CoNLL-U ingestion, the document/sentence/token model and Table-1 style statistics.

Document metadata travels in comment lines placed before a document's first
sentence::

    # writing_id = 2498
    # cefr = A1
    # nationality = fr
    # topic_id = 2

A ``writing_id`` comment opens a new document; the other keys attach to the
document currently being built.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, TextIO

CEFR_LEVELS = ("A1", "A2", "B1", "B2", "C1", "C2")
METADATA_KEYS = ("writing_id", "cefr", "nationality", "topic_id")


class CorpusError(ValueError):
    """Base class for ingestion errors."""


class ConlluParseError(CorpusError):
    def __init__(self, message, line_no):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class StructuralError(CorpusError):
    pass


class MetadataError(CorpusError):
    pass


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    lemma: str
    upos: str
    xpos: str
    feats: dict = field(default_factory=dict, hash=False, compare=True)
    head: int = 0
    deprel: str = "root"

    def __post_init__(self):
        if self.index < 1:
            raise StructuralError(f"token index must be >= 1, got {self.index}")
        if self.head < 0:
            raise StructuralError(f"token {self.index}: negative head")
        if self.head == self.index:
            raise StructuralError(f"token {self.index} is its own head")
        if not self.upos:
            raise StructuralError(f"token {self.index}: empty UPOS")

    @property
    def is_punct(self):
        return self.upos == "PUNCT"


@dataclass(frozen=True)
class SentenceGraph:
    """A sentence with its dependency tree.

    Construction validates the tree: consecutive 1-based indices, heads that
    exist, exactly one root and no cycles.
    """

    tokens: tuple
    sent_id: str | None = None
    text: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        self._validate()
        depths = [0] * len(self.tokens)
        for tok in self.tokens:
            depths[tok.index - 1] = self._walk(tok.index)
        object.__setattr__(self, "_depths", tuple(depths))
        children = [[] for _ in range(len(self.tokens) + 1)]
        for tok in self.tokens:
            children[tok.head].append(tok.index)
        object.__setattr__(self, "_children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "_lemmas", frozenset(t.lemma.lower() for t in self.tokens))

    def _label(self):
        return self.sent_id if self.sent_id is not None else repr(self.text or "<unnamed>")

    def _validate(self):
        n = len(self.tokens)
        if n == 0:
            raise StructuralError("empty sentence")
        for pos, tok in enumerate(self.tokens, start=1):
            if tok.index != pos:
                raise StructuralError(f"sentence {self._label()}: token index {tok.index} out of sequence")
            if tok.head > n:
                raise StructuralError(
                    f"sentence {self._label()}: token {tok.index} has head {tok.head} "
                    f"but the sentence has {n} tokens"
                )
        roots = [t.index for t in self.tokens if t.head == 0]
        if len(roots) != 1:
            raise StructuralError(f"sentence {self._label()}: expected exactly one root, found {len(roots)}")

    def _walk(self, index):
        seen = set()
        depth = 0
        cur = index
        while self.tokens[cur - 1].head != 0:
            if cur in seen:
                raise StructuralError(f"sentence {self._label()}: cycle through token {cur}")
            seen.add(cur)
            cur = self.tokens[cur - 1].head
            depth += 1
        return depth

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, index):
        """1-based token access."""
        if index < 1 or index > len(self.tokens):
            raise IndexError(index)
        return self.tokens[index - 1]

    @property
    def arcs(self):
        return frozenset((t.head, t.deprel, t.index) for t in self.tokens)

    @property
    def root(self):
        return next(t.index for t in self.tokens if t.head == 0)

    @property
    def lemma_set(self):
        return self._lemmas

    def children(self, index):
        return self._children[index]

    def depth(self, index):
        return self._depths[index - 1]


@dataclass(frozen=True)
class Document:
    writing_id: str
    cefr: str
    nationality: str = ""
    topic_id: str | None = None
    sentences: tuple = ()

    def __post_init__(self):
        if self.cefr not in CEFR_LEVELS:
            raise MetadataError(f"writing {self.writing_id}: unknown CEFR level {self.cefr!r}")
        object.__setattr__(self, "sentences", tuple(self.sentences))

    @property
    def cefr_rank(self):
        return CEFR_LEVELS.index(self.cefr)

    @property
    def word_count(self):
        return sum(len(s) for s in self.sentences)

    @property
    def n_words(self):
        """Non-punctuation token count, the basis of the average word figures."""
        return sum(1 for s in self.sentences for t in s.tokens if not t.is_punct)


def dependency_depth(sentence, index):
    """Number of head hops from token ``index`` to the root (root itself is 0)."""
    if index < 1 or index > len(sentence):
        raise IndexError(f"token index {index} outside sentence of length {len(sentence)}")
    return sentence.depth(index)


def _parse_feats(raw):
    if raw in ("_", ""):
        return {}
    out = {}
    for item in raw.split("|"):
        name, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"malformed feature {item!r}")
        out[name] = value
    return out


def _format_feats(feats):
    if not feats:
        return "_"
    return "|".join(f"{k}={feats[k]}" for k in sorted(feats, key=str.lower))


def _decode(stream):
    if isinstance(stream, (bytes, bytearray)):
        return io.StringIO(bytes(stream).decode("utf-8"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8")


def parse_conllu(stream: BinaryIO | TextIO | bytes | str) -> list:
    """Parse a CoNLL-U byte or text stream into documents, preserving order.

    Multiword-token range lines (``3-4``) are skipped; their component tokens
    are kept. Empty nodes (``3.1``) are dropped.
    """
    text = _decode(stream)
    docs = []
    meta = None
    sentences = []
    pending = []  # (line_no, columns)
    sent_meta = {}

    def close_sentence():
        nonlocal pending, sent_meta
        if not pending:
            sent_meta = {}
            return
        if meta is None:
            raise MetadataError(f"line {pending[0][0]}: sentence before any '# writing_id =' comment")
        tokens = []
        for line_no, cols in pending:
            try:
                tokens.append(Token(
                    index=int(cols[0]),
                    form=cols[1],
                    lemma=cols[2],
                    upos=cols[3],
                    xpos=cols[4],
                    feats=_parse_feats(cols[5]),
                    head=int(cols[6]),
                    deprel=cols[7],
                ))
            except ValueError as exc:
                if isinstance(exc, CorpusError):
                    raise StructuralError(f"line {line_no}: {exc}") from None
                raise ConlluParseError(str(exc), line_no) from None
        sentences.append(SentenceGraph(tokens, sent_id=sent_meta.get("sent_id"), text=sent_meta.get("text")))
        pending = []
        sent_meta = {}

    def close_document():
        nonlocal sentences
        if meta is None:
            return
        if "cefr" not in meta:
            raise MetadataError(f"writing {meta['writing_id']}: missing '# cefr =' comment")
        docs.append(Document(
            writing_id=meta["writing_id"],
            cefr=meta["cefr"],
            nationality=meta.get("nationality", ""),
            topic_id=meta.get("topic_id"),
            sentences=sentences,
        ))
        sentences = []

    for line_no, line in enumerate(text, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            close_sentence()
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            key = key.strip()
            if not sep:
                continue
            value = value.strip()
            if key == "writing_id":
                close_sentence()
                close_document()
                meta = {"writing_id": value}
            elif key in METADATA_KEYS:
                if meta is None:
                    raise MetadataError(f"line {line_no}: '{key}' before any '# writing_id =' comment")
                if key == "cefr" and value not in CEFR_LEVELS:
                    raise MetadataError(f"line {line_no}: unknown CEFR level {value!r}")
                meta[key] = value
            elif key in ("sent_id", "text"):
                sent_meta[key] = value
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluParseError(f"expected 10 tab-separated columns, found {len(cols)}", line_no)
        if "-" in cols[0] or "." in cols[0]:
            continue
        pending.append((line_no, cols))
    close_sentence()
    close_document()
    return docs


def read_conllu(path) -> list:
    with open(path, "rb") as fh:
        return parse_conllu(fh)


def write_conllu(docs: Iterable[Document], out: TextIO | None = None) -> str:
    """Serialise documents back to CoNLL-U (metadata comments included)."""
    buf = io.StringIO()
    for doc in docs:
        buf.write(f"# writing_id = {doc.writing_id}\n")
        buf.write(f"# cefr = {doc.cefr}\n")
        if doc.nationality:
            buf.write(f"# nationality = {doc.nationality}\n")
        if doc.topic_id is not None:
            buf.write(f"# topic_id = {doc.topic_id}\n")
        for sent in doc.sentences:
            if sent.sent_id is not None:
                buf.write(f"# sent_id = {sent.sent_id}\n")
            if sent.text is not None:
                buf.write(f"# text = {sent.text}\n")
            for t in sent.tokens:
                buf.write("\t".join((
                    str(t.index), t.form, t.lemma, t.upos, t.xpos or "_",
                    _format_feats(t.feats), str(t.head), t.deprel, "_", "_",
                )))
                buf.write("\n")
            buf.write("\n")
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


@dataclass(frozen=True)
class LevelStats:
    level: str
    n: int
    pct: float
    mean_words: float
    sd_words: float


@dataclass(frozen=True)
class CorpusStats:
    """Per-level rows; ``sd_words`` is the population standard deviation."""

    rows: tuple

    def row(self, level):
        return next(r for r in self.rows if r.level == level)

    def to_csv(self, out: TextIO | None = None) -> str:
        buf = io.StringIO()
        buf.write("# word counts exclude PUNCT tokens; sd_words is the population SD\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "n", "pct", "mean_words", "sd_words"])
        for r in self.rows:
            w.writerow([r.level, r.n, f"{r.pct:.2f}", _fmt(r.mean_words), _fmt(r.sd_words)])
        text = buf.getvalue()
        if out is not None:
            out.write(text)
        return text


def _fmt(x):
    return "NA" if math.isnan(x) else f"{x:.2f}"


def _mean_sd(values):
    if not values:
        return math.nan, math.nan
    m = sum(values) / len(values)
    var = sum((v - m) ** 2 for v in values) / len(values)
    return m, math.sqrt(var)


def corpus_stats(docs) -> CorpusStats:
    """Counts, percentages and word-count mean/SD per CEFR level plus a Total row."""
    docs = list(docs)
    if not docs:
        raise ValueError("corpus_stats needs at least one document")
    total = len(docs)
    rows = []
    for level in CEFR_LEVELS:
        words = [d.n_words for d in docs if d.cefr == level]
        m, sd = _mean_sd(words)
        rows.append(LevelStats(level, len(words), 100.0 * len(words) / total, m, sd))
    m, sd = _mean_sd([d.n_words for d in docs])
    rows.append(LevelStats("Total", total, 100.0, m, sd))
    return CorpusStats(tuple(rows))
