"""Graph patterns over dependency trees.

Query language, one statement per line or separated by ``;``::

    NODE QUANT[lemma="many"]
    NODE N[upos=NOUN]
    EDGE N -[amod]-> QUANT
    ANCHOR QUANT

Node tests: ``attr=v`` (equals), ``attr=v1|v2`` (one-of), ``attr!=v1|v2``
(none-of), ``attr`` (exists), ``!attr`` (absent). Attributes are ``lemma``,
``form``, ``upos``, ``xpos`` and ``feats.<Name>``. ``NODE X[]`` declares an
unconstrained node.

``EDGE h -[rel]-> d`` requires ``d`` to depend on ``h``; ``rel`` is a label,
``a|b`` alternatives or ``*``. ``!EDGE`` forbids the edge. A variable used
only in a single ``!EDGE`` is existential: the match fails when *some* token,
distinct from the bound ones, satisfies that variable's tests and the edge.

``ORDER a << b`` (a anywhere before b) and ``ORDER a < b`` (b right after a).

Lemma tests are case-insensitive; everything else is case-sensitive.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field

NODE_ATTRS = ("lemma", "form", "upos", "xpos")


class PatternSyntaxError(ValueError):
    def __init__(self, message, line=None, col=None):
        where = f" at line {line}, column {col}" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.col = col


class PatternError(ValueError):
    """A syntactically valid pattern that is semantically inconsistent."""


@dataclass(frozen=True)
class AttrTest:
    attr: str
    op: str  # "in", "not_in", "exists", "absent"
    values: tuple = ()

    def value_of(self, tok):
        if self.attr.startswith("feats."):
            return tok.feats.get(self.attr[6:])
        v = getattr(tok, self.attr)
        return None if v in ("", "_") and self.attr != "form" else v

    def __call__(self, tok):
        v = self.value_of(tok)
        if self.op == "exists":
            return v is not None
        if self.op == "absent":
            return v is None
        if v is None:
            return self.op == "not_in"
        if self.attr == "lemma":
            v = v.lower()
        hit = v in self.values
        return hit if self.op == "in" else not hit


@dataclass(frozen=True)
class NodeConstraint:
    var: str
    tests: tuple = ()

    def accepts(self, tok):
        return all(t(tok) for t in self.tests)


@dataclass(frozen=True)
class EdgeConstraint:
    head_var: str
    dep_var: str
    deprels: tuple | None  # None is the wildcard
    negated: bool = False

    def label_ok(self, deprel):
        return self.deprels is None or deprel in self.deprels


@dataclass(frozen=True)
class Precedence:
    before: str
    after: str
    adjacent: bool = False

    def ok(self, i, j):
        return j == i + 1 if self.adjacent else i < j


@dataclass(frozen=True)
class Pattern:
    nodes: tuple
    edges: tuple
    precedence: tuple
    anchor: str
    name: str = ""
    source: str = field(default="", compare=False)

    @property
    def node_map(self):
        return {n.var: n for n in self.nodes}

    @property
    def positive_vars(self):
        neg_only = self.existential_vars
        return tuple(n.var for n in self.nodes if n.var not in neg_only)

    @property
    def existential_vars(self):
        pos = {v for e in self.edges if not e.negated for v in (e.head_var, e.dep_var)}
        pos |= {v for p in self.precedence for v in (p.before, p.after)}
        pos.add(self.anchor)
        neg = {v for e in self.edges if e.negated for v in (e.head_var, e.dep_var)}
        return frozenset(neg - pos) if len(self.nodes) > 1 else frozenset()

    @property
    def negated_edges(self):
        return tuple(e for e in self.edges if e.negated)

    @property
    def required_lemmas(self):
        """Lemma sets a sentence must intersect for any match to exist."""
        out = []
        neg = self.existential_vars
        for n in self.nodes:
            if n.var in neg:
                continue
            for t in n.tests:
                if t.attr == "lemma" and t.op == "in":
                    out.append(frozenset(t.values))
        return tuple(out)


@dataclass(frozen=True)
class Match:
    bindings: tuple  # ((var, index), ...) in pattern node order
    anchor_index: int
    sentence: object = field(default=None, compare=False, repr=False)

    @property
    def binding_map(self):
        return dict(self.bindings)

    @property
    def span(self):
        idx = [i for _, i in self.bindings]
        return max(idx) - min(idx) + 1


# ---------------------------------------------------------------- compiling

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<semi>;)
  | (?P<arrow_open>-\[)
  | (?P<arrow_close>\]->)
  | (?P<lbr>\[)
  | (?P<rbr>\])
  | (?P<comma>,)
  | (?P<pipe>\|)
  | (?P<neq>!=)
  | (?P<bang>!)
  | (?P<eq>=)
  | (?P<prec2><<)
  | (?P<prec1><)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<word>[^\s;\[\],|!="<]+)
""", re.VERBOSE)

_KEYWORDS = ("NODE", "EDGE", "ORDER", "ANCHOR")
_VAR_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _lex(src):
    toks = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise PatternSyntaxError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "nl":
            toks.append(_Tok("sep", text, line, col))
            line += 1
            line_start = m.end()
        elif kind == "semi":
            toks.append(_Tok("sep", text, line, col))
        elif kind == "string":
            toks.append(_Tok("string", re.sub(r"\\(.)", r"\1", text[1:-1]), line, col))
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, text, line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, src):
        self.toks = _lex(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, text=None, what=None):
        t = self.toks[self.i]
        if (kind and t.kind != kind) or (text and t.text != text):
            expected = what or text or kind
            found = t.text or t.kind
            raise PatternSyntaxError(f"expected {expected}, found {found!r}", t.line, t.col)
        self.i += 1
        return t

    def var(self):
        t = self.take("word", what="variable name")
        if not _VAR_RE.match(t.text) or t.text in _KEYWORDS:
            raise PatternSyntaxError(f"invalid variable name {t.text!r}", t.line, t.col)
        return t.text

    def value(self):
        t = self.peek()
        if t.kind in ("word", "string"):
            self.i += 1
            return t.text
        raise PatternSyntaxError(f"expected value, found {t.text or t.kind!r}", t.line, t.col)

    def values(self):
        vals = [self.value()]
        while self.peek().kind == "pipe":
            self.i += 1
            vals.append(self.value())
        return vals

    def statements(self):
        out = []
        while True:
            while self.peek().kind == "sep":
                self.i += 1
            t = self.peek()
            if t.kind == "eof":
                return out
            out.append(self.statement())
            nxt = self.peek()
            if nxt.kind not in ("sep", "eof"):
                raise PatternSyntaxError(f"expected end of statement, found {nxt.text!r}", nxt.line, nxt.col)

    def statement(self):
        t = self.peek()
        negated = False
        if t.kind == "bang":
            self.i += 1
            negated = True
            t = self.peek()
            if t.text != "EDGE":
                raise PatternSyntaxError("'!' must prefix EDGE", t.line, t.col)
        if t.kind != "word" or t.text not in _KEYWORDS:
            raise PatternSyntaxError(f"expected NODE, EDGE, !EDGE, ORDER or ANCHOR, found {t.text or t.kind!r}",
                                     t.line, t.col)
        self.i += 1
        if t.text == "NODE":
            return ("node", t, self.node())
        if t.text == "EDGE":
            return ("edge", t, self.edge(negated))
        if t.text == "ORDER":
            a = self.var()
            op = self.peek()
            if op.kind not in ("prec1", "prec2"):
                raise PatternSyntaxError("expected '<' or '<<'", op.line, op.col)
            self.i += 1
            return ("order", t, Precedence(a, self.var(), adjacent=op.kind == "prec1"))
        return ("anchor", t, self.var())

    def node(self):
        var = self.var()
        self.take("lbr", what="'['")
        tests = []
        if self.peek().kind != "rbr":
            tests.append(self.test())
            while self.peek().kind == "comma":
                self.i += 1
                tests.append(self.test())
        self.take("rbr", what="']'")
        return NodeConstraint(var, tuple(tests))

    def attr(self):
        t = self.take("word", what="attribute")
        a = t.text
        if a not in NODE_ATTRS and not (a.startswith("feats.") and len(a) > 6):
            raise PatternSyntaxError(f"unknown attribute {a!r}", t.line, t.col)
        return a

    def test(self):
        if self.peek().kind == "bang":
            self.i += 1
            return AttrTest(self.attr(), "absent")
        attr = self.attr()
        k = self.peek().kind
        if k in ("eq", "neq"):
            self.i += 1
            vals = self.values()
            if attr == "lemma":
                vals = [v.lower() for v in vals]
            return AttrTest(attr, "in" if k == "eq" else "not_in", tuple(dict.fromkeys(vals)))
        return AttrTest(attr, "exists")

    def edge(self, negated):
        head = self.var()
        self.take("arrow_open", what="'-['")
        t = self.peek()
        if t.kind == "word" and t.text == "*":
            self.i += 1
            rels = None
        else:
            rels = tuple(self.values())
        self.take("arrow_close", what="']->'")
        return EdgeConstraint(head, self.var(), rels, negated)


def compile_pattern(src: str, name: str = "") -> Pattern:
    """Compile query text into a validated :class:`Pattern`."""
    nodes, edges, order, anchors = {}, [], [], []
    for kind, kw, item in _Parser(src).statements():
        if kind == "node":
            if item.var in nodes:
                raise PatternError(f"variable {item.var!r} declared twice (line {kw.line})")
            nodes[item.var] = item
        elif kind == "edge":
            edges.append((kw, item))
        elif kind == "order":
            order.append((kw, item))
        else:
            anchors.append((kw, item))
    if not nodes:
        raise PatternError("pattern declares no nodes")
    for kw, e in edges:
        for v in (e.head_var, e.dep_var):
            if v not in nodes:
                raise PatternError(f"undeclared variable {v!r} in EDGE (line {kw.line})")
        if e.head_var == e.dep_var:
            raise PatternError(f"self-loop on {e.head_var!r} (line {kw.line})")
    for kw, p in order:
        for v in (p.before, p.after):
            if v not in nodes:
                raise PatternError(f"undeclared variable {v!r} in ORDER (line {kw.line})")
    if not anchors:
        raise PatternError("pattern has no ANCHOR")
    if len(anchors) > 1:
        raise PatternError("pattern has more than one ANCHOR")
    anchor = anchors[0][1]
    if anchor not in nodes:
        raise PatternError(f"ANCHOR names undeclared variable {anchor!r}")

    pattern = Pattern(
        nodes=tuple(nodes.values()),
        edges=tuple(e for _, e in edges),
        precedence=tuple(p for _, p in order),
        anchor=anchor,
        name=name,
        source=src,
    )
    _check_structure(pattern)
    return pattern


def _check_structure(p):
    neg = p.existential_vars
    pos = [v for v in p.positive_vars]
    for e in p.negated_edges:
        if e.head_var in neg and e.dep_var in neg:
            raise PatternError(f"negated edge {e.head_var}->{e.dep_var} binds no matched variable")
    for v in neg:
        uses = sum(1 for e in p.negated_edges if v in (e.head_var, e.dep_var))
        if uses > 1:
            raise PatternError(f"existential variable {v!r} may appear in only one negated edge")
    # connectivity over positive constraints
    adj = {v: set() for v in pos}
    for e in p.edges:
        if not e.negated:
            adj[e.head_var].add(e.dep_var)
            adj[e.dep_var].add(e.head_var)
    for o in p.precedence:
        adj[o.before].add(o.after)
        adj[o.after].add(o.before)
    seen = {pos[0]}
    stack = [pos[0]]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    if len(seen) != len(pos):
        loose = sorted(set(pos) - seen)
        raise PatternError(f"pattern is disconnected; unreachable variables: {', '.join(loose)}")


def load_patterns(text: str) -> dict:
    """Read a pattern file: blocks introduced by ``PATTERN <name>`` lines."""
    blocks = {}
    name, body, start = None, [], 0
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("PATTERN ") or stripped == "PATTERN":
            if name is not None:
                blocks[name] = (start, "\n".join(body))
            name = stripped[len("PATTERN"):].strip()
            if not name:
                raise PatternSyntaxError("PATTERN needs a name", line_no, 1)
            if name in blocks:
                raise PatternError(f"duplicate pattern name {name!r} (line {line_no})")
            body, start = [], line_no
        elif name is not None:
            body.append(line)
        elif stripped and not stripped.startswith("#"):
            raise PatternSyntaxError("statement outside a PATTERN block", line_no, 1)
    if name is not None:
        blocks[name] = (start, "\n".join(body))
    out = {}
    for name, (start, src) in blocks.items():
        try:
            out[name] = compile_pattern(src, name=name)
        except PatternSyntaxError as exc:
            line = exc.line + start if exc.line is not None else None
            raise PatternSyntaxError(f"in pattern {name!r}: {exc.args[0].split(' at line')[0]}",
                                     line, exc.col) from None
        except PatternError as exc:
            raise PatternError(f"in pattern {name!r}: {exc}") from None
    return out


# ---------------------------------------------------------------- matching

def _search_order(p, candidates):
    pos = list(p.positive_vars)
    adj = {v: [] for v in pos}
    for e in p.edges:
        if not e.negated:
            adj[e.head_var].append(e.dep_var)
            adj[e.dep_var].append(e.head_var)
    for o in p.precedence:
        adj[o.before].append(o.after)
        adj[o.after].append(o.before)
    start = min(pos, key=lambda v: (len(candidates[v]), pos.index(v)))
    order, seen = [start], {start}
    while len(order) < len(pos):
        frontier = [w for v in order for w in adj[v] if w not in seen]
        nxt = min(frontier, key=lambda v: (len(candidates[v]), pos.index(v)))
        order.append(nxt)
        seen.add(nxt)
    return order


def _edge_holds(sentence, e, h, d):
    tok = sentence.tokens[d - 1]
    return tok.head == h and e.label_ok(tok.deprel)


def _negations_hold(p, sentence, bound, node_map):
    used = set(bound.values())
    neg = p.existential_vars
    for e in p.negated_edges:
        if e.head_var in bound and e.dep_var in bound:
            if _edge_holds(sentence, e, bound[e.head_var], bound[e.dep_var]):
                return False
        elif e.head_var in bound:
            h = bound[e.head_var]
            test = node_map[e.dep_var]
            for d in sentence.children(h):
                if d not in used and test.accepts(sentence.tokens[d - 1]) and \
                        e.label_ok(sentence.tokens[d - 1].deprel):
                    return False
        else:
            d = bound[e.dep_var]
            tok = sentence.tokens[d - 1]
            h = tok.head
            assert e.head_var in neg
            if h != 0 and h not in used and node_map[e.head_var].accepts(sentence.tokens[h - 1]) \
                    and e.label_ok(tok.deprel):
                return False
    return True


def match_sentence(p: Pattern, s) -> list:
    """All injective matches of ``p`` in sentence ``s``, ordered by anchor index."""
    for lemmas in p.required_lemmas:
        if lemmas.isdisjoint(s.lemma_set):
            return []
    node_map = p.node_map
    pos = p.positive_vars
    candidates = {v: [t.index for t in s.tokens if node_map[v].accepts(t)] for v in pos}
    if any(not c for c in candidates.values()):
        return []
    order = _search_order(p, candidates)

    checks = {v: [] for v in order}
    placed = set()
    for v in order:
        placed.add(v)
        for e in p.edges:
            if not e.negated and v in (e.head_var, e.dep_var) and {e.head_var, e.dep_var} <= placed:
                checks[v].append(("edge", e))
        for o in p.precedence:
            if v in (o.before, o.after) and {o.before, o.after} <= placed:
                checks[v].append(("order", o))

    results = []
    bound = {}

    def ok(v):
        for kind, c in checks[v]:
            if kind == "edge":
                if not _edge_holds(s, c, bound[c.head_var], bound[c.dep_var]):
                    return False
            elif not c.ok(bound[c.before], bound[c.after]):
                return False
        return True

    def extend(k):
        if k == len(order):
            if _negations_hold(p, s, bound, node_map):
                results.append(Match(
                    bindings=tuple((v, bound[v]) for v in pos),
                    anchor_index=bound[p.anchor],
                    sentence=s,
                ))
            return
        v = order[k]
        used = set(bound.values())
        for idx in candidates[v]:
            if idx in used:
                continue
            bound[v] = idx
            if ok(v):
                extend(k + 1)
            del bound[v]

    extend(0)
    unique = {m.bindings: m for m in results}
    return sorted(unique.values(), key=lambda m: (m.anchor_index, tuple(i for _, i in m.bindings)))


def match_corpus(p: Pattern, docs):
    """Yield ``(document, sentence_number, match)`` across documents in order."""
    for doc in docs:
        for sent_no, sent in enumerate(doc.sentences, start=1):
            for m in match_sentence(p, sent):
                yield doc, sent_no, m


def dump_matches(rows, out=None) -> str:
    """TSV dump; ``rows`` are ``(pattern_name, document, sent_no, match)``."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(["writing_id", "sent_no", "anchor_index", "pattern_name", "bound_vars"])
    for name, doc, sent_no, m in rows:
        bound = ",".join(f"{v}={i}" for v, i in m.bindings)
        w.writerow([doc.writing_id, sent_no, m.anchor_index, name, bound])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text
