"""Text-level aggregation, proportional-odds regression, rank tests and agreement statistics."""
from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from collections import Counter, OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit

from .corpus import CEFR_LEVELS
from .model import ConvergenceWarning
from .rng import stage_rng

UNKNOWN_TOPIC = "__UNKNOWN__"
FOOTNOTE = "* p-value <.05."


class StatsError(ValueError):
    pass


class CollinearityError(StatsError):
    def __init__(self, names):
        super().__init__(f"singular design; collinear covariates: {', '.join(names)}")
        self.names = tuple(names)


# ------------------------------------------------------------ aggregation

@dataclass
class TextProfile:
    writing_id: str
    cefr: str
    nationality: str = ""
    topic: str | None = None
    medians: dict = field(default_factory=dict)  # ms -> {form: percent or NaN}
    counts: dict = field(default_factory=dict)  # ms -> occurrences

    def value(self, name):
        """Median percent for ``"MS:form"``; NaN when the text has no occurrence."""
        ms, form = name.split(":", 1)
        return self.medians.get(ms, {}).get(form, math.nan)


def aggregate_text_median(preds_by_ms: dict, docs=None, forms_by_ms: dict | None = None) -> list:
    """Per-text median probability (in percent) of every form of every microsystem.

    ``preds_by_ms`` maps a microsystem name to its predicted distributions. With
    ``docs`` every document gets a profile, even without any occurrence.
    """
    order = OrderedDict()
    if docs is not None:
        for d in docs:
            order[d.writing_id] = TextProfile(d.writing_id, d.cefr, d.nationality, d.topic_id)
    grouped = {}
    for ms, preds in preds_by_ms.items():
        for p in preds:
            o = p.occurrence
            if o.writing_id not in order:
                order[o.writing_id] = TextProfile(o.writing_id, o.cefr, o.nationality, o.topic)
            grouped.setdefault((o.writing_id, ms), []).append(p.probabilities)
    forms_by_ms = dict(forms_by_ms or {})
    for ms, preds in preds_by_ms.items():
        if ms not in forms_by_ms and preds:
            forms_by_ms[ms] = tuple(preds[0].classes)
    for wid, prof in order.items():
        for ms, forms in forms_by_ms.items():
            rows = grouped.get((wid, ms))
            if rows:
                med = np.median(np.vstack(rows), axis=0) * 100.0
                prof.medians[ms] = dict(zip(forms, med.tolist()))
                prof.counts[ms] = len(rows)
            else:
                prof.medians[ms] = {f: math.nan for f in forms}
                prof.counts[ms] = 0
    return list(order.values())


def write_profiles(profiles, out=None) -> str:
    """Long plot-ready CSV of per-text medians by CEFR level."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["writing_id", "cefr", "nationality", "ms", "form", "median_pct", "n_occurrences"])
    for p in profiles:
        for ms, forms in p.medians.items():
            for form, v in forms.items():
                w.writerow([p.writing_id, p.cefr, p.nationality, ms, form,
                            "NA" if math.isnan(v) else f"{v:.6f}", p.counts.get(ms, 0)])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


# ------------------------------------------------------------ ordinal regression

@dataclass
class OrdinalModel:
    levels: tuple
    thresholds: np.ndarray
    beta: np.ndarray
    covariates: tuple
    cov: np.ndarray  # inverse observed information over (thresholds, beta)
    ll: float
    ll_null: float
    converged: bool
    n: int
    n_dropped: int = 0
    iterations: int = 0

    @property
    def se(self):
        j = len(self.thresholds)
        return np.sqrt(np.diag(self.cov)[j:])

    def cumulative(self, X):
        """P(Y <= level_j | x) for j = 1..J-1."""
        eta = np.atleast_2d(np.asarray(X, dtype=float)) @ self.beta
        return expit(self.thresholds[None, :] - eta[:, None])

    def probabilities(self, X):
        c = self.cumulative(X)
        n = c.shape[0]
        full = np.hstack([np.zeros((n, 1)), c, np.ones((n, 1))])
        return np.diff(full, axis=1)


def _ordinal_terms(theta, X, y, J):
    """Per-row a = alpha_y - eta and b = alpha_{y-1} - eta, with infinite ends masked."""
    alpha, beta = theta[:J - 1], theta[J - 1:]
    eta = X @ beta
    has_a = y < J - 1
    has_b = y > 0
    a = np.where(has_a, alpha[np.minimum(y, J - 2)] - eta, 0.0)
    b = np.where(has_b, alpha[np.maximum(y - 1, 0)] - eta, 0.0)
    Fa = np.where(has_a, expit(a), 1.0)
    Fb = np.where(has_b, expit(b), 0.0)
    fa = np.where(has_a, Fa * (1 - Fa), 0.0)
    fb = np.where(has_b, Fb * (1 - Fb), 0.0)
    # P(Y = y) computed without cancellation for the extreme categories
    p = np.where(~has_b, Fa, np.where(~has_a, expit(-b), Fa - Fb))
    return a, b, Fa, Fb, fa, fb, p, has_a, has_b


def ordinal_loglik(theta, X, y, J, ridge=0.0):
    """Penalised log-likelihood, score and Hessian of the proportional-odds model.

    ``theta`` stacks the J-1 thresholds and the slopes; P(Y <= j) = expit(alpha_j - x.beta).
    """
    X = np.asarray(X, dtype=float)
    n, p_ = X.shape
    m = J - 1 + p_
    a, b, Fa, Fb, fa, fb, p, has_a, has_b = _ordinal_terms(theta, X, y, J)
    p = np.maximum(p, 1e-300)
    beta = theta[J - 1:]
    ll = float(np.sum(np.log(p))) - 0.5 * ridge * float(beta @ beta)
    la = fa / p
    lb = -fb / p
    dfa = fa * (1 - 2 * Fa)
    dfb = fb * (1 - 2 * Fb)
    laa = dfa / p - la * la
    lbb = -dfb / p - lb * lb
    lab = -la * lb
    Ja = np.zeros((n, m))
    Jb = np.zeros((n, m))
    rows = np.arange(n)
    Ja[rows[has_a], y[has_a]] = 1.0
    Jb[rows[has_b], y[has_b] - 1] = 1.0
    Ja[has_a, J - 1:] = -X[has_a]
    Jb[has_b, J - 1:] = -X[has_b]
    grad = Ja.T @ la + Jb.T @ lb
    H = (Ja.T * laa) @ Ja + (Jb.T * lbb) @ Jb + (Ja.T * lab) @ Jb + (Jb.T * lab) @ Ja
    grad[J - 1:] -= ridge * beta
    H[J - 1:, J - 1:] -= ridge * np.eye(p_)
    return ll, grad, H


def _check_rank(X, names):
    A = np.hstack([np.ones((X.shape[0], 1)), X])
    if np.linalg.matrix_rank(A) == A.shape[1]:
        return
    bad = []
    for j in range(X.shape[1]):
        cols = [0] + [i + 1 for i in range(X.shape[1]) if i != j]
        if np.linalg.matrix_rank(A[:, cols]) == np.linalg.matrix_rank(A):
            bad.append(names[j])
    raise CollinearityError(bad or list(names))


def fit_ordinal_arrays(X, y, covariates, levels=None, ridge=1e-8, tol=1e-8, max_iter=200) -> OrdinalModel:
    """Proportional-odds fit by damped Newton on the analytic Hessian.

    ``y`` holds level labels; only levels present in ``y`` enter the model.
    ``tol`` applies to the largest score component divided by n.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = list(y)
    order = list(levels) if levels is not None else list(CEFR_LEVELS)
    present = [lv for lv in order if lv in set(y)]
    unknown = set(y) - set(order)
    if unknown:
        raise StatsError(f"outcome levels {sorted(unknown)} not in the level order")
    if len(present) < 2:
        raise StatsError("outcome has a single level")
    J = len(present)
    yi = np.asarray([present.index(v) for v in y], dtype=int)
    n = len(yi)
    _check_rank(X, list(covariates))
    cum = np.cumsum(np.bincount(yi, minlength=J))[:-1] / n
    alpha0 = np.log(cum / (1 - cum))
    theta = np.concatenate([alpha0, np.zeros(X.shape[1])])
    ll, g, H = ordinal_loglik(theta, X, yi, J, ridge)
    ll_null = ll
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) / n <= tol:
            converged = True
            it -= 1
            break
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            raise CollinearityError(list(covariates)) from None
        t = 1.0
        while t > 1e-10:
            cand = theta + t * step
            if np.all(np.diff(cand[:J - 1]) > 0):
                ll_c, g_c, H_c = ordinal_loglik(cand, X, yi, J, ridge)
                if ll_c >= ll - 1e-12 * abs(ll):
                    break
            t *= 0.5
        else:
            break
        theta, ll, g, H = cand, ll_c, g_c, H_c
    if not converged and np.max(np.abs(g)) / n <= tol:
        converged = True
    if not converged:
        warnings.warn(f"ordinal fit on {list(covariates)} stopped after {it} iterations "
                      f"(max|score|/n={np.max(np.abs(g)) / n:.2e})", ConvergenceWarning, stacklevel=2)
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        raise CollinearityError(list(covariates)) from None
    return OrdinalModel(tuple(present), theta[:J - 1].copy(), theta[J - 1:].copy(), tuple(covariates),
                        cov, ll, ll_null, converged, n, 0, it)


def profile_matrix(profiles, covariates):
    return np.asarray([[p.value(c) for c in covariates] for p in profiles], dtype=float)


def fit_ordinal(profiles, covariates, extra=None, extra_names=(), **kw) -> OrdinalModel:
    """Fit CEFR on ``"MS:form"`` percent covariates; rows with a missing covariate are dropped."""
    profiles = list(profiles)
    X = profile_matrix(profiles, covariates)
    if extra is not None:
        X = np.hstack([X, np.asarray(extra, dtype=float).reshape(len(profiles), -1)])
    keep = ~np.isnan(X).any(axis=1)
    y = [p.cefr for i, p in enumerate(profiles) if keep[i]]
    m = fit_ordinal_arrays(X[keep], y, tuple(covariates) + tuple(extra_names), **kw)
    m.n_dropped = int((~keep).sum())
    return m


@dataclass(frozen=True)
class OddsRatioRow:
    name: str
    beta: float
    se: float
    odds_ratio: float
    lower: float
    upper: float
    p_value: float

    @property
    def significant(self):
        return self.p_value < 0.05


@dataclass(frozen=True)
class OddsRatioReport:
    rows: tuple
    n: int = 0
    n_dropped: int = 0

    def row(self, name):
        return next(r for r in self.rows if r.name == name)


def wald_row(name, beta, se, z=1.959963984540054):
    p = 2 * stats.norm.sf(abs(beta / se)) if se > 0 else (0.0 if beta != 0 else 1.0)
    return OddsRatioRow(name, float(beta), float(se), math.exp(beta), math.exp(beta - z * se),
                        math.exp(beta + z * se), float(p))


def odds_ratio_report(m: OrdinalModel, names=None) -> OddsRatioReport:
    """OR = exp(beta) with Wald 95% CI and two-sided p for each (selected) covariate."""
    se = m.se
    rows = []
    for j, c in enumerate(m.covariates):
        if names is not None and c not in names:
            continue
        if not np.isfinite(se[j]):
            raise CollinearityError([c])
        rows.append(wald_row(c, m.beta[j], se[j]))
    return OddsRatioReport(tuple(rows), m.n, m.n_dropped)


def per_form_odds_ratios(profiles, covariates, **kw) -> OddsRatioReport:
    """One univariate ordinal fit per covariate, gathered into one report."""
    rows, n, dropped = [], 0, 0
    for c in covariates:
        m = fit_ordinal(profiles, [c], **kw)
        rows.extend(odds_ratio_report(m).rows)
        n, dropped = max(n, m.n), max(dropped, m.n_dropped)
    return OddsRatioReport(tuple(rows), n, dropped)


def one_hot(values, drop_first=True):
    levels = sorted(set(values))
    use = levels[1:] if drop_first else levels
    M = np.asarray([[1.0 if v == lv else 0.0 for lv in use] for v in values])
    return M.reshape(len(values), len(use)), tuple(use)


@dataclass(frozen=True)
class ConfounderComparison:
    without: OddsRatioReport
    with_confounder: OddsRatioReport
    flagged: tuple
    delta: float


def refit_with_confounder(profiles, covariates, confounder="nationality", delta=0.005,
                          joint=False, **kw) -> ConfounderComparison:
    """Odds ratios with and without a one-hot categorical confounder.

    Covariates whose OR moves by more than ``delta`` are flagged.
    """
    profiles = list(profiles)
    groups = [c for c in ([covariates] if joint else [[c] for c in covariates])]
    without, with_ = [], []
    for cov in groups:
        X = profile_matrix(profiles, cov)
        keep = ~np.isnan(X).any(axis=1)
        sub = [p for i, p in enumerate(profiles) if keep[i]]
        conf, names = one_hot([getattr(p, confounder) or "" for p in sub])
        m0 = fit_ordinal(sub, cov, **kw)
        m1 = fit_ordinal(sub, cov, extra=conf, extra_names=tuple(f"{confounder}={v}" for v in names), **kw)
        without.extend(odds_ratio_report(m0).rows)
        with_.extend(odds_ratio_report(m1, names=set(cov)).rows)
    flagged = tuple(a.name for a, b in zip(without, with_) if abs(a.odds_ratio - b.odds_ratio) > delta)
    return ConfounderComparison(OddsRatioReport(tuple(without)), OddsRatioReport(tuple(with_)), flagged, delta)


def _fmt3(x):
    s = f"{x:.3f}"
    return s[1:] if s.startswith("0.") else s


def _split_name(name):
    ms, _, form = name.partition(":")
    return (f"MS {ms}", form.upper()) if form else ("", name)


def write_table8(reports: dict, out=None) -> str:
    """Odds-ratio table: one column pair per corpus, ``*`` marking p < .05, footnote last."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    corpora = list(reports)
    w.writerow(["Microsystems", "Components"] + [x for c in corpora for x in (c, "")])
    w.writerow(["", ""] + ["Odds ratio", "95% CI"] * len(corpora))
    names = []
    for rep in reports.values():
        for r in rep.rows:
            if r.name not in names:
                names.append(r.name)
    last_ms = None
    for name in names:
        ms, form = _split_name(name)
        cells = [ms if ms != last_ms else "", form]
        last_ms = ms
        for rep in reports.values():
            try:
                r = rep.row(name)
            except StopIteration:
                cells += ["", ""]
                continue
            cells += [_fmt3(r.odds_ratio) + ("*" if r.significant else ""),
                      f"{_fmt3(r.lower)}, {_fmt3(r.upper)}"]
        w.writerow(cells)
    w.writerow([])
    w.writerow([FOOTNOTE])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def write_confounder_table(cmp: ConfounderComparison, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Microsystems", "Components", "Odds ratio", "95% CI", "Odds ratio (with L1)",
                "95% CI (with L1)", "moved"])
    for a, b in zip(cmp.without.rows, cmp.with_confounder.rows):
        ms, form = _split_name(a.name)
        w.writerow([ms, form, _fmt3(a.odds_ratio) + ("*" if a.significant else ""),
                    f"{_fmt3(a.lower)}, {_fmt3(a.upper)}",
                    _fmt3(b.odds_ratio) + ("*" if b.significant else ""),
                    f"{_fmt3(b.lower)}, {_fmt3(b.upper)}", "yes" if a.name in cmp.flagged else "no"])
    w.writerow([])
    w.writerow([FOOTNOTE])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


# ------------------------------------------------------------ rank test

@dataclass(frozen=True)
class KruskalResult:
    H: float
    df: int
    p: float
    n: int


def kruskal_wallis(groups) -> KruskalResult:
    """H statistic with midranks and tie correction; p from chi-square(groups - 1)."""
    groups = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(groups) < 2:
        raise StatsError("need at least two groups")
    if any(len(g) == 0 for g in groups):
        raise StatsError("every group must be non-empty")
    pooled = np.concatenate(groups)
    N = len(pooled)
    if N < 3:
        raise StatsError("need at least 3 observations in total")
    df = len(groups) - 1
    ranks = stats.rankdata(pooled)
    _, ties = np.unique(pooled, return_counts=True)
    correction = 1.0 - float(np.sum(ties ** 3 - ties)) / (N ** 3 - N)
    if correction <= 0:
        return KruskalResult(0.0, df, 1.0, N)
    bounds = np.cumsum([0] + [len(g) for g in groups])
    s = sum(ranks[bounds[i]:bounds[i + 1]].sum() ** 2 / len(g) for i, g in enumerate(groups))
    H = (12.0 / (N * (N + 1)) * s - 3 * (N + 1)) / correction
    H = max(H, 0.0)
    return KruskalResult(float(H), df, float(stats.chi2.sf(H, df)), N)


def kruskal_by_level(profiles, name, levels=CEFR_LEVELS):
    """Kruskal-Wallis of one form's per-text medians across the CEFR levels present."""
    groups = []
    for lv in levels:
        vals = [p.value(name) for p in profiles if p.cefr == lv]
        vals = [v for v in vals if not math.isnan(v)]
        if vals:
            groups.append(vals)
    return kruskal_wallis(groups)


# ------------------------------------------------------------ agreement

@dataclass(frozen=True)
class AgreementResult:
    kappa: float
    z: float
    p: float
    n_items: int
    n_raters: int
    categories: tuple


def fleiss_kappa(table, n_raters=None, categories=None) -> AgreementResult:
    """Fleiss' kappa over an items x categories count table with the null-variance z."""
    t = np.asarray(table, dtype=float)
    if t.ndim != 2 or t.shape[0] == 0:
        raise StatsError("table must be a non-empty items x categories matrix")
    rows = t.sum(axis=1)
    n = float(rows[0]) if n_raters is None else float(n_raters)
    if not np.all(rows == n):
        raise StatsError(f"every item must have {n:g} ratings")
    if n < 2:
        raise StatsError("need at least two raters")
    N = t.shape[0]
    p = t.sum(axis=0) / (N * n)
    P_i = (np.sum(t * t, axis=1) - n) / (n * (n - 1))
    P_bar = float(P_i.mean())
    P_e = float(np.sum(p * p))
    if P_e >= 1.0:
        raise StatsError("every rating falls in one category; kappa is undefined")
    kappa = (P_bar - P_e) / (1 - P_e)
    pq = p * (1 - p)
    spq = float(pq.sum())
    var0 = 2.0 / (N * n * (n - 1)) * (spq ** 2 - float(np.sum(pq * (1 - 2 * p)))) / spq ** 2
    z = kappa / math.sqrt(var0) if var0 > 0 else math.inf
    cats = tuple(categories) if categories is not None else tuple(range(t.shape[1]))
    return AgreementResult(float(kappa), float(z), float(2 * stats.norm.sf(abs(z))), N, int(n), cats)


def ratings_to_table(ratings, categories=None):
    """items x raters label matrix -> items x categories count table."""
    ratings = [list(r) for r in ratings]
    if categories is None:
        categories = sorted({v for r in ratings for v in r}, key=str)
    pos = {c: i for i, c in enumerate(categories)}
    t = np.zeros((len(ratings), len(categories)), dtype=int)
    for i, r in enumerate(ratings):
        for v in r:
            t[i, pos[v]] += 1
    return t, tuple(categories)


def cohen_kappa(a, b) -> AgreementResult:
    """Cohen's kappa with the marginal-product chance term and its null standard error."""
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise StatsError("rating vectors differ in length")
    if not a:
        raise StatsError("empty rating vectors")
    cats = sorted(set(a) | set(b), key=str)
    N = len(a)
    pa = np.asarray([sum(1 for v in a if v == c) for c in cats], dtype=float) / N
    pb = np.asarray([sum(1 for v in b if v == c) for c in cats], dtype=float) / N
    po = sum(1 for x, y in zip(a, b) if x == y) / N
    pe = float(pa @ pb)
    if pe >= 1.0:
        raise StatsError("chance agreement is 1; kappa is undefined")
    kappa = (po - pe) / (1 - pe)
    var0 = (pe + pe * pe - float(np.sum(pa * pb * (pa + pb)))) / (N * (1 - pe) ** 2)
    z = kappa / math.sqrt(var0) if var0 > 0 else math.inf
    return AgreementResult(float(kappa), float(z), float(2 * stats.norm.sf(abs(z))), N, 2, tuple(cats))


def pairwise_cohen(ratings, raters):
    """Dict (rater_i, rater_j) -> AgreementResult for every pair of columns."""
    ratings = [list(r) for r in ratings]
    out = {}
    for i, j in itertools.combinations(range(len(raters)), 2):
        out[(raters[i], raters[j])] = cohen_kappa([r[i] for r in ratings], [r[j] for r in ratings])
    return out


def _perm_kappas(agree, A, B, member, size):
    po = member @ agree / size
    pe = np.sum((member @ A) * (member @ B), axis=1) / (size * size)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (po - pe) / (1 - pe)


def permutation_test_kappa(sample1, sample2, n_perm=10000, seed=0):
    """Two-sided permutation p for kappa(sample1) - kappa(sample2) per rater pair.

    Each sample is an items x raters label matrix with the same rater columns.
    Items are shuffled between the samples; p = (1 + #{|d*| >= |d|}) / (1 + n_perm).
    """
    if n_perm < 100:
        warnings.warn("fewer than 100 permutations; p-values are coarse", stacklevel=2)
    s1 = [list(r) for r in sample1]
    s2 = [list(r) for r in sample2]
    if not s1 or not s2 or len(s1[0]) != len(s2[0]):
        raise StatsError("both samples need the same rater columns")
    n1, n2 = len(s1), len(s2)
    pooled = s1 + s2
    N = n1 + n2
    cats = sorted({v for r in pooled for v in r}, key=str)
    rng = stage_rng(seed, "kappa-permutation")
    perms = np.argsort(rng.random((n_perm, N)), axis=1)
    member1 = np.zeros((n_perm, N))
    member1[np.arange(n_perm)[:, None], perms[:, :n1]] = 1.0
    member2 = 1.0 - member1
    observed1 = np.zeros((1, N))
    observed1[0, :n1] = 1.0
    out = {}
    for i, j in itertools.combinations(range(len(s1[0])), 2):
        a = [r[i] for r in pooled]
        b = [r[j] for r in pooled]
        agree = np.asarray([x == y for x, y in zip(a, b)], dtype=float)
        A = np.asarray([[x == c for c in cats] for x in a], dtype=float)
        B = np.asarray([[y == c for c in cats] for y in b], dtype=float)
        d_obs = (_perm_kappas(agree, A, B, observed1, n1) - _perm_kappas(agree, A, B, 1 - observed1, n2))[0]
        d = _perm_kappas(agree, A, B, member1, n1) - _perm_kappas(agree, A, B, member2, n2)
        d = np.where(np.isnan(d), 0.0, d)
        hits = int(np.sum(np.abs(d) >= abs(d_obs) - 1e-12))
        out[(i, j)] = (float(d_obs), (1 + hits) / (1 + n_perm))
    return out


# ------------------------------------------------------------ fit measures, frequencies

def pseudo_r2(ll_model, ll_null):
    """McFadden's 1 - LL_model / LL_null, clamped to [0, 1]."""
    if ll_null == 0:
        raise StatsError("null log-likelihood is 0; pseudo-R2 undefined")
    return float(min(1.0, max(0.0, 1.0 - ll_model / ll_null)))


@dataclass(frozen=True)
class FrequencyRow:
    topic: str
    cefr: str
    form: str
    count: int
    tokens: int
    freq: float
    outlier: bool
    writing_id: str = ""


def normalized_form_frequency(docs, occurrences, forms, by_text=False, threshold=10.0) -> list:
    """Form counts per 1000 tokens, grouped by topic x CEFR level (or per text).

    Rows above ``threshold`` are flagged as outliers.
    """
    docs = list(docs)
    key_of = {}
    tokens = Counter()
    for d in docs:
        topic = d.topic_id if d.topic_id else UNKNOWN_TOPIC
        key = (topic, d.cefr, d.writing_id if by_text else "")
        key_of[d.writing_id] = key
        tokens[key] += d.word_count
    counts = Counter()
    for o in occurrences:
        counts[(key_of[o.writing_id], o.form)] += 1
    rows = []
    for key in sorted(tokens, key=lambda k: (k[0], CEFR_LEVELS.index(k[1]), k[2])):
        for form in forms:
            c = counts[(key, form)]
            f = 1000.0 * c / tokens[key] if tokens[key] else 0.0
            rows.append(FrequencyRow(key[0], key[1], form, c, tokens[key], f, f > threshold, key[2]))
    return rows


def write_frequencies(rows, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["topic", "cefr", "writing_id", "form", "count", "tokens", "freq_per_1000", "outlier"])
    for r in rows:
        w.writerow([r.topic, r.cefr, r.writing_id, r.form, r.count, r.tokens, f"{r.freq:.4f}",
                    int(r.outlier)])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text
