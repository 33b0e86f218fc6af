"""Synthetic learner corpus with a known form-choice model and a known CEFR link.

Every microsystem slot is one short sentence built from a fixed frame. Inside a
frame the forms of a microsystem share the same token sequence, so the only
signal about the form is carried by cue adverbs placed at fixed offsets and by
the writer's nationality. The form is drawn from a softmax over

    eta_k = sum_c W[c, cue_c, k] + N[nationality, k],   eta_K = 0.

Articles and multi-noun frames differ in shape between forms (a zero article
has no article token), so their contexts leak the form; they are left out of
the CEFR link.

CEFR is drawn from a proportional-odds model on the true per-text median
probabilities (percent) of a few forms, so a pipeline that recovers the form
probabilities should recover the odds ratios too.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .corpus import CEFR_LEVELS, Document, SentenceGraph, Token
from .rng import stage_rng

NATIONALITIES = ("br", "cn", "de", "fr", "mx")
CUES = (
    ("quickly", "quickly", "ADV", "RB"),
    ("faster", "fast", "ADV", "RBR"),
    ("fastest", "fast", "ADV", "RBS"),
    ("oh", "oh", "INTJ", "UH"),
)

# default CEFR link: percent covariate -> slope on the logit scale
DEFAULT_LINK = {
    "PRF:that": 0.03,
    "DUR:since": -0.025,
    "QUANT1:some": 0.025,
    "QUANT2:many": -0.02,
    "REL:which": 0.02,
}

FORMS = {
    "PRF": ("it", "this", "that"),
    "DET": ("a", "the", "zero"),
    "MLTNN": ("N2_N1", "N2s_N1", "N1_of_N2"),
    "DUR": ("for", "since", "during"),
    "QUANT1": ("any", "some"),
    "QUANT2": ("many", "much"),
    "REL": ("that", "which", "who"),
}

_PRON = {
    "it": ("it", "PRP", {"Case": "Acc", "Gender": "Neut", "Number": "Sing", "Person": "3", "PronType": "Prs"}),
    "this": ("this", "DT", {"Number": "Sing", "PronType": "Dem"}),
    "that": ("that", "DT", {"Number": "Sing", "PronType": "Dem"}),
}
_I = ("I", "I", "PRON", "PRP", {"Case": "Nom", "Number": "Sing", "Person": "1", "PronType": "Prs"})
_MY = ("my", "my", "PRON", "PRP$", {"Number": "Sing", "Person": "1", "Poss": "Yes", "PronType": "Prs"})
_PAST = {"Mood": "Ind", "Tense": "Past", "VerbForm": "Fin"}


def _frame(ms, form):
    """Core tokens as (form, lemma, upos, xpos, feats, head, deprel) with frame-relative heads.

    Returns ``(tokens, anchor, verb)`` (1-based positions inside the frame).
    """
    saw = ("saw", "see", "VERB", "VBD", _PAST, 0, "root")
    i_ = _I + (2, "nsubj")
    if ms == "PRF":
        lemma, xpos, feats = _PRON[form]
        return [i_, saw, (form, lemma, "PRON", xpos, feats, 2, "obj")], 3, 2
    if ms == "DET":
        if form == "zero":
            return [i_, saw, ("dogs", "dog", "NOUN", "NNS", {"Number": "Plur"}, 2, "obj")], 3, 2
        art = ("a", "a", "DET", "DT", {"Definite": "Ind", "PronType": "Art"}, 4, "det") if form == "a" else \
            ("the", "the", "DET", "DT", {"Definite": "Def", "PronType": "Art"}, 4, "det")
        return [i_, saw, art, ("dog", "dog", "NOUN", "NN", {"Number": "Sing"}, 2, "obj")], 3, 2
    if ms == "MLTNN":
        school = ("school", "school", "NOUN", "NN", {"Number": "Sing"})
        bus = ("bus", "bus", "NOUN", "NN", {"Number": "Sing"})
        if form == "N2_N1":
            return [i_, saw, _MY + (5, "nmod:poss"), school + (5, "compound"), bus + (2, "obj")], 5, 2
        if form == "N2s_N1":
            return [i_, saw, _MY + (4, "nmod:poss"),
                    ("teacher", "teacher", "NOUN", "NN", {"Number": "Sing"}, 6, "nmod:poss"),
                    ("'s", "'s", "PART", "POS", {}, 4, "case"), bus + (2, "obj")], 6, 2
        return [i_, saw, _MY + (4, "nmod:poss"), bus + (2, "obj"), ("of", "of", "ADP", "IN", {}, 7, "case"),
                _MY + (7, "nmod:poss"), school + (4, "nmod")], 7, 2
    if ms == "DUR":
        return [i_, ("worked", "work", "VERB", "VBD", _PAST, 0, "root"), (form, form, "ADP", "IN", {}, 5, "case"),
                _MY + (5, "nmod:poss"), ("summer", "summer", "NOUN", "NN", {"Number": "Sing"}, 2, "obl")], 3, 2
    if ms == "QUANT1":
        return [i_, saw, (form, form, "DET", "DT", {}, 4, "det"),
                ("birds", "bird", "NOUN", "NNS", {"Number": "Plur"}, 2, "obj")], 3, 2
    if ms == "QUANT2":
        return [i_, saw, (form, form, "ADJ", "JJ", {"Degree": "Pos"}, 4, "amod"),
                ("birds", "bird", "NOUN", "NNS", {"Number": "Plur"}, 2, "obj")], 3, 2
    if ms == "REL":
        xpos = "WP" if form == "who" else "WDT"
        return [i_, ("met", "meet", "VERB", "VBD", _PAST, 0, "root"), _MY + (4, "nmod:poss"),
                ("friend", "friend", "NOUN", "NN", {"Number": "Sing"}, 2, "obj"),
                (form, form, "PRON", xpos, {"PronType": "Rel"}, 6, "nsubj"),
                ("left", "leave", "VERB", "VBD", _PAST, 4, "acl:relcl")], 5, 2
    raise KeyError(ms)


@lru_cache(maxsize=None)
def build_sentence(ms, form, cues, sent_id=None):
    """Frame plus one leading cue, two trailing cues and a full stop; returns (sentence, anchor).

    Sentences are immutable, so identical frames are shared between texts.
    """
    core, anchor, verb = _frame(ms, form)
    shift = 1
    toks = []

    def cue_tok(c):
        f, l, u, x = CUES[c]
        return (f, l, u, x, {}, verb + shift, "discourse" if u == "INTJ" else "advmod")

    rows = [cue_tok(cues[0])]
    for f, l, u, x, feats, h, rel in core:
        rows.append((f, l, u, x, feats, 0 if h == 0 else h + shift, rel))
    rows.append(cue_tok(cues[1]))
    rows.append(cue_tok(cues[2]))
    rows.append((".", ".", "PUNCT", ".", {}, verb + shift, "punct"))
    for i, (f, l, u, x, feats, h, rel) in enumerate(rows, start=1):
        toks.append(Token(i, f, l, u, x, dict(feats), h, rel))
    text = " ".join(t.form for t in toks)
    return SentenceGraph(toks, sent_id=sent_id, text=text), anchor + shift


@dataclass
class FormModel:
    """True coefficients for one microsystem: W[position, cue, k] and N[nationality, k]."""

    ms: str
    forms: tuple
    W: np.ndarray
    N: np.ndarray

    def logits(self, cues, nat):
        eta = self.N[nat].copy()
        for pos, c in enumerate(cues):
            eta += self.W[pos, c]
        return np.append(eta, 0.0)

    def proba(self, cues, nat):
        eta = self.logits(cues, nat)
        e = np.exp(eta - eta.max())
        return e / e.sum()


@dataclass
class SyntheticCorpus:
    docs: list
    truth: dict  # (ms, writing_id, sent, idx) -> true probability vector
    form_models: dict
    link: dict
    thresholds: np.ndarray
    levels: tuple
    true_medians: dict  # writing_id -> {"MS:form": percent}
    ll_true: float
    ll_null: float
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def pseudo_r2(self):
        return 1.0 - self.ll_true / self.ll_null


def generate(n_texts=5000, seed=0, link=None, slots=(1, 3), cue_scale=1.0, nat_scale=0.5,
             levels=CEFR_LEVELS[:5], ms_names=tuple(FORMS)) -> SyntheticCorpus:
    """Draw a corpus of ``n_texts`` writings; each text has ``slots`` (min, max) sentences per microsystem."""
    link = dict(DEFAULT_LINK if link is None else link)
    rng_coef = stage_rng(seed, "synthetic-coefficients")
    rng_ctx = stage_rng(seed, "synthetic-contexts")
    rng_cefr = stage_rng(seed, "synthetic-cefr")
    rng_form = stage_rng(seed, "synthetic-forms")
    models = {}
    for ms in ms_names:
        k = len(FORMS[ms])
        W = rng_coef.normal(0.0, cue_scale, size=(3, len(CUES), k - 1))
        W -= W.mean(axis=1, keepdims=True)  # keeps the forms roughly balanced
        N = rng_coef.normal(0.0, nat_scale, size=(len(NATIONALITIES), k - 1))
        N -= N.mean(axis=0, keepdims=True)
        models[ms] = FormModel(ms, FORMS[ms], W, N)

    # contexts and true probabilities
    plan = []
    for t in range(n_texts):
        nat = int(rng_ctx.integers(len(NATIONALITIES)))
        topic = str(int(rng_ctx.integers(1, 6)))
        slots_t = []
        for ms in ms_names:
            for _ in range(int(rng_ctx.integers(slots[0], slots[1] + 1))):
                cues = tuple(int(c) for c in rng_ctx.integers(len(CUES), size=3))
                slots_t.append((ms, cues, models[ms].proba(cues, nat)))
        order = rng_ctx.permutation(len(slots_t))
        plan.append((nat, topic, [slots_t[i] for i in order]))

    medians = []
    for nat, topic, slots_t in plan:
        med = {}
        for ms in ms_names:
            probs = [p for m, _, p in slots_t if m == ms]
            if probs:
                v = np.median(np.vstack(probs), axis=0) * 100.0
                for f, x in zip(FORMS[ms], v):
                    med[f"{ms}:{f}"] = float(x)
        medians.append(med)

    # CEFR from the proportional-odds link; thresholds put the latent quantiles at even shares
    names = [c for c in link if c.split(":")[0] in ms_names]
    beta = np.asarray([link[c] for c in names])
    X = np.asarray([[m.get(c, np.nan) for c in names] for m in medians])
    X = np.where(np.isnan(X), np.nanmean(X, axis=0), X)
    eta = X @ beta
    latent = eta + rng_cefr.logistic(size=n_texts)
    J = len(levels)
    thresholds = np.quantile(latent, np.arange(1, J) / J)
    yi = np.searchsorted(thresholds, latent)
    cum = expit(thresholds[None, :] - eta[:, None])
    full = np.hstack([np.zeros((n_texts, 1)), cum, np.ones((n_texts, 1))])
    p_obs = np.diff(full, axis=1)[np.arange(n_texts), yi]
    ll_true = float(np.sum(np.log(p_obs)))
    freq = np.bincount(yi, minlength=J) / n_texts
    ll_null = float(np.sum(np.log(freq[yi])))

    docs, truth, true_medians = [], {}, {}
    for t, (nat, topic, slots_t) in enumerate(plan):
        wid = f"s{t:05d}"
        sents = []
        for s_no, (ms, cues, p) in enumerate(slots_t, start=1):
            form = FORMS[ms][int(rng_form.choice(len(p), p=p))]
            sent, anchor = build_sentence(ms, form, cues)
            sents.append(sent)
            truth[(ms, wid, s_no, anchor)] = p
        docs.append(Document(wid, levels[int(yi[t])], NATIONALITIES[nat], topic, sents))
        true_medians[wid] = medians[t]
    return SyntheticCorpus(docs, truth, models, dict(zip(names, beta.tolist())), thresholds, tuple(levels),
                           true_medians, ll_true, ll_null, seed,
                           {"n_texts": n_texts, "slots": list(slots), "cue_scale": cue_scale,
                            "nat_scale": nat_scale})


def bayes_predictions(corpus: SyntheticCorpus, occurrences):
    """Argmax of the true probabilities for each occurrence (the Bayes classifier)."""
    out = []
    for o in occurrences:
        p = corpus.truth[(o.ms, o.writing_id, o.sent, o.idx)]
        out.append(corpus.form_models[o.ms].forms[int(np.argmax(p))])
    return out


def write_truth(corpus: SyntheticCorpus, out):
    import csv

    w = csv.writer(out, lineterminator="\n")
    w.writerow(["ms", "writing_id", "sent", "idx", "probabilities"])
    for (ms, wid, s, i), p in sorted(corpus.truth.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][0])):
        w.writerow([ms, wid, s, i, " ".join(f"{v:.10f}" for v in p)])


def link_summary(corpus: SyntheticCorpus):
    return {"link": corpus.link, "thresholds": [float(a) for a in corpus.thresholds],
            "levels": list(corpus.levels), "pseudo_r2": corpus.pseudo_r2,
            "odds_ratios": {c: math.exp(b) for c, b in corpus.link.items()}}
