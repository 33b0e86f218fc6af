"""Multinomial logistic regression with a reference class, and the training harness.

The probability of form k at a slot with encoded context x is

    pi_k = exp(eta_k) / sum_j exp(eta_j),   eta_k = x . beta_k,   eta_K = 0,

so the last form of a microsystem is the reference. Fitting maximises the mean
log-likelihood minus ``l2/2 * ||beta||^2`` (and ``l1 * |beta|_1`` when an L1
penalty is set); the intercept column is never penalised.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse, stats
from scipy.special import logsumexp

from .features import INTERCEPT
from .rng import stage_rng

log = logging.getLogger(__name__)

SEPARATION_CAP = 1e3


class ConvergenceWarning(UserWarning):
    pass


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    l2_penalty: float = 1e-4
    l1_penalty: float = 0.0
    max_iterations: int = 1000
    tol: float = 1e-6
    seed: int = 0
    method: str = "lbfgs"  # or "gd": gradient ascent with backtracking

    def __post_init__(self):
        if self.l2_penalty < 0 or self.l1_penalty < 0:
            raise ValueError("penalties must be non-negative")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.method not in ("lbfgs", "gd"):
            raise ValueError(f"unknown method {self.method!r}")


# ------------------------------------------------------------ core maths

def _eta(X, beta):
    """n x K linear predictors with the reference column fixed at 0."""
    eta = np.asarray(X @ beta.T)
    return np.hstack([eta, np.zeros((eta.shape[0], 1))])


def softmax_ref(eta_free):
    """Probabilities from the K-1 free linear predictors (reference eta = 0)."""
    eta_free = np.atleast_2d(np.asarray(eta_free, dtype=float))
    eta = np.hstack([eta_free, np.zeros((eta_free.shape[0], 1))])
    return np.exp(eta - logsumexp(eta, axis=1, keepdims=True))


def loglik(beta, X, y):
    """Mean multinomial log-likelihood; ``beta`` is (K-1) x P."""
    eta = _eta(X, beta)
    lse = logsumexp(eta, axis=1)
    return float(np.mean(eta[np.arange(len(y)), y] - lse))


def penalized_loglik(beta, X, y, l2=0.0, mask=None, l1=0.0):
    """Penalised objective and its gradient (same shape as ``beta``).

    The gradient omits the L1 term, which is handled by a proximal step.
    """
    n = X.shape[0]
    k1, p = beta.shape
    if mask is None:
        mask = np.ones(p, dtype=bool)
    eta = _eta(X, beta)
    top = eta.max(axis=1, keepdims=True)
    lse = top + np.log(np.exp(eta - top).sum(axis=1, keepdims=True))
    prob = np.exp(eta - lse)
    ll = float(np.mean(eta[np.arange(n), y] - lse[:, 0]))
    resid = -prob[:, :k1]
    rows = np.flatnonzero(y < k1)
    resid[rows, y[rows]] += 1.0
    grad = np.asarray(X.T @ resid).T / n
    pen = beta * mask
    value = ll - 0.5 * l2 * float(np.sum(pen ** 2)) - l1 * float(np.sum(np.abs(pen)))
    grad = grad - l2 * pen
    return value, grad


def _soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@dataclass
class FitInfo:
    converged: bool
    iterations: int
    objective: float
    grad_max: float
    history: list = field(default_factory=list)


def _fit_lbfgs(X, y, k1, l2, mask, beta0, cfg):
    shape = beta0.shape
    history = []

    def fun(flat):
        v, g = penalized_loglik(flat.reshape(shape), X, y, l2, mask)
        return -v, -g.ravel()

    def cb(intermediate_result):
        history.append(-float(intermediate_result.fun))

    res = optimize.minimize(fun, beta0.ravel(), jac=True, method="L-BFGS-B", callback=cb,
                            options={"maxiter": cfg.max_iterations, "gtol": cfg.tol,
                                     "ftol": 1e-15, "maxcor": 20})
    beta = res.x.reshape(shape)
    v, g = penalized_loglik(beta, X, y, l2, mask)
    gmax = float(np.max(np.abs(g))) if g.size else 0.0
    return beta, FitInfo(gmax <= cfg.tol, int(res.nit), v, gmax, history)


def _fit_gd(X, y, k1, l2, mask, beta0, cfg):
    beta = beta0.copy()
    v, g = penalized_loglik(beta, X, y, l2, mask)
    history = [v]
    t = 1.0
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if np.max(np.abs(g)) <= cfg.tol:
            it -= 1
            break
        gg = float(np.sum(g * g))
        while True:
            cand = beta + t * g
            v_new, g_new = penalized_loglik(cand, X, y, l2, mask)
            if v_new >= v + 1e-4 * t * gg or t < 1e-12:
                break
            t *= 0.5
        if v_new < v:  # step too small to make progress
            break
        beta, v, g = cand, v_new, g_new
        history.append(v)
        t *= 2.0
    gmax = float(np.max(np.abs(g))) if g.size else 0.0
    return beta, FitInfo(gmax <= cfg.tol, it, v, gmax, history)


def _lipschitz(X):
    n = X.shape[0]
    gram = X.T @ X
    gram = gram.toarray() if sparse.issparse(gram) else np.asarray(gram)
    # largest eigenvalue of X'X; deterministic unlike an iterative SVD
    return 0.5 * float(np.linalg.eigvalsh(gram)[-1]) / n + 1e-12


def _fit_l1_lbfgs(X, y, k1, l2, l1, mask, beta0, cfg):
    """L1 problem as a smooth bound-constrained one: beta = pos - neg, pos, neg >= 0."""
    shape = beta0.shape
    pen = np.broadcast_to(mask[None, :], shape).ravel()
    m = beta0.size
    history = []

    def fun(u):
        beta = (u[:m] - u[m:]).reshape(shape)
        v, g = penalized_loglik(beta, X, y, l2, mask)
        g = g.ravel()
        l1_term = l1 * float(np.sum(u[:m][pen] + u[m:][pen]))
        return -v + l1_term, np.concatenate([-g + l1 * pen, g + l1 * pen])

    def cb(intermediate_result):
        history.append(-float(intermediate_result.fun))

    b0 = beta0.ravel()
    u0 = np.concatenate([np.where(pen, np.maximum(b0, 0), b0), np.where(pen, np.maximum(-b0, 0), 0.0)])
    bounds = [(0, None) if q else (None, None) for q in pen] + [(0, None) if q else (0, 0) for q in pen]
    res = optimize.minimize(fun, u0, jac=True, method="L-BFGS-B", bounds=bounds, callback=cb,
                            options={"maxiter": cfg.max_iterations, "gtol": cfg.tol, "ftol": 1e-15,
                                     "maxcor": 20})
    beta = (res.x[:m] - res.x[m:]).reshape(shape)
    v, g = penalized_loglik(beta, X, y, l2, mask, l1)
    gap = _l1_gap(beta, g, l1, mask)
    return beta, FitInfo(gap <= cfg.tol, int(res.nit), v, gap, history)


def _l1_gap(beta, g, l1, mask):
    """Largest violation of the L1 optimality conditions."""
    pen = np.broadcast_to(mask[None, :], beta.shape)
    sub = np.where(pen & (beta != 0), g - l1 * np.sign(beta),
                   np.where(pen, np.sign(g) * np.maximum(np.abs(g) - l1, 0.0), g))
    return float(np.max(np.abs(sub))) if sub.size else 0.0


def _fit_fista(X, y, k1, l2, l1, mask, beta0, cfg, lip=None):
    """Accelerated proximal gradient for the L1 (+ L2) penalised problem."""
    step = 1.0 / ((lip or _lipschitz(X)) + l2)
    beta = beta0.copy()
    z = beta.copy()
    tk = 1.0
    pen = mask[None, :]
    history = []
    it = 0
    converged = False
    for it in range(1, cfg.max_iterations + 1):
        _, g = penalized_loglik(z, X, y, l2, mask)
        cand = z + step * g
        new = np.where(pen, _soft(cand, step * l1), cand)
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        delta = new - beta
        z = new + ((tk - 1) / t_next) * delta
        beta, tk = new, t_next
        if np.max(np.abs(delta)) <= cfg.tol * step:
            converged = True
            break
    v, g = penalized_loglik(beta, X, y, l2, mask, l1)
    history.append(v)
    return beta, FitInfo(converged, it, v, _l1_gap(beta, g, l1, mask), history)


def fit_softmax(X, y, k, cfg: TrainConfig, mask=None, beta0=None):
    """Fit (K-1) x P coefficients; returns ``(beta, FitInfo)``."""
    y = np.asarray(y, dtype=int)
    p = X.shape[1]
    if mask is None:
        mask = np.ones(p, dtype=bool)
    beta0 = np.zeros((k - 1, p)) if beta0 is None else np.asarray(beta0, dtype=float)
    if cfg.l1_penalty > 0 and cfg.method == "lbfgs":
        beta, info = _fit_l1_lbfgs(X, y, k - 1, cfg.l2_penalty, cfg.l1_penalty, mask, beta0, cfg)
    elif cfg.l1_penalty > 0:
        beta, info = _fit_fista(X, y, k - 1, cfg.l2_penalty, cfg.l1_penalty, mask, beta0, cfg)
    elif cfg.method == "lbfgs":
        beta, info = _fit_lbfgs(X, y, k - 1, cfg.l2_penalty, mask, beta0, cfg)
    else:
        beta, info = _fit_gd(X, y, k - 1, cfg.l2_penalty, mask, beta0, cfg)
    return beta, info


# ------------------------------------------------------------ fitted model

@dataclass(frozen=True)
class PredictedDistribution:
    occurrence: object
    probabilities: np.ndarray
    classes: tuple

    @property
    def label(self):
        return self.classes[int(np.argmax(self.probabilities))]


@dataclass
class MultinomialModel:
    classes: tuple
    columns: tuple
    beta: np.ndarray  # (K-1) x P, reference class last
    levels: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def k(self):
        return len(self.classes)

    def proba(self, X):
        if X.shape[1] != len(self.columns):
            raise ModelError(f"design has {X.shape[1]} columns, model expects {len(self.columns)}")
        return softmax_ref(np.asarray(X @ self.beta.T))

    def to_json(self):
        return {"classes": list(self.classes), "columns": list(self.columns),
                "beta": self.beta.tolist(), "levels": self.levels, "meta": self.meta}

    @classmethod
    def from_json(cls, obj):
        return cls(tuple(obj["classes"]), tuple(obj["columns"]),
                   np.asarray(obj["beta"], dtype=float).reshape(len(obj["classes"]) - 1, -1),
                   obj.get("levels"), obj.get("meta", {}))

    def save(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def train_multinomial(dm, cfg: TrainConfig = TrainConfig()) -> MultinomialModel:
    """Fit the penalised softmax model on an encoded :class:`DesignMatrix`."""
    if dm.y is None:
        raise ModelError("design matrix carries no labels")
    y = np.asarray(dm.y, dtype=int)
    k = len(dm.classes)
    if len(np.unique(y)) < 2:
        raise ModelError("training labels span fewer than two classes")
    n, p = dm.X.shape
    if n <= p:
        warnings.warn(f"n={n} rows for {p} columns; the fit leans on the penalty", stacklevel=2)
    mask = np.asarray([c != INTERCEPT for c in dm.columns])
    beta, info = fit_softmax(dm.X, y, k, cfg, mask)
    if not info.converged:
        warnings.warn(f"no convergence after {info.iterations} iterations (max|grad|={info.grad_max:.2e})",
                      ConvergenceWarning, stacklevel=2)
    if np.max(np.abs(beta), initial=0.0) > SEPARATION_CAP:
        warnings.warn("coefficients exceed the separation cap; classes look separable", stacklevel=2)
    counts = np.bincount(y, minlength=k)
    meta = {"n": int(n), "seed": cfg.seed, "l2_penalty": cfg.l2_penalty, "l1_penalty": cfg.l1_penalty,
            "method": cfg.method, "converged": bool(info.converged), "iterations": info.iterations,
            "grad_max": info.grad_max, "objective": info.objective,
            "class_counts": {c: int(m) for c, m in zip(dm.classes, counts)}}
    return MultinomialModel(tuple(dm.classes), tuple(dm.columns), beta, dm.levels, meta)


def predict_proba(m: MultinomialModel, rows, occurrences=None) -> list:
    """Per-row :class:`PredictedDistribution`; ``rows`` is a DesignMatrix or a matrix."""
    if hasattr(rows, "columns") and hasattr(rows, "X"):
        if tuple(rows.columns) != tuple(m.columns):
            raise ModelError("design columns differ from the model's; encode with the model's level dictionary")
        X = rows.X
    else:
        X = rows
    P = m.proba(X)
    occs = occurrences if occurrences is not None else [None] * P.shape[0]
    return [PredictedDistribution(o, P[i], m.classes) for i, o in enumerate(occs)]


def write_predictions(preds, out=None) -> str:
    """CSV ``writing_id, sent, idx, cefr, nationality, topic, form_gold, p_<form>..., argmax``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    classes = preds[0].classes if preds else ()
    w.writerow(["writing_id", "sent", "idx", "cefr", "nationality", "topic", "form_gold"]
               + [f"p_{c}" for c in classes] + ["argmax"])
    for p in preds:
        o = p.occurrence
        w.writerow([o.writing_id, o.sent, o.idx, o.cefr, o.nationality, o.topic or "", o.form]
                   + [f"{v:.10f}" for v in p.probabilities] + [p.label])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


@dataclass(frozen=True)
class PredictionRow:
    writing_id: str
    sent: int
    idx: int
    cefr: str
    nationality: str
    topic: str | None
    form: str


def read_predictions(stream, ms="") -> list:
    reader = csv.reader(stream)
    header = next(reader)
    if header[:7] != ["writing_id", "sent", "idx", "cefr", "nationality", "topic", "form_gold"] \
            or header[-1] != "argmax":
        raise ValueError(f"unexpected prediction header {header}")
    classes = tuple(h[2:] for h in header[7:-1])
    out = []
    for r in reader:
        occ = PredictionRow(r[0], int(r[1]), int(r[2]), r[3], r[4], r[5] or None, r[6])
        out.append(PredictedDistribution(occ, np.asarray([float(v) for v in r[7:-1]]), classes))
    return out


# ------------------------------------------------------------ sampling

def _labels_of(items, labels):
    return list(labels) if labels is not None else [it.form for it in items]


def stratified_split(items, test_fraction=0.2, seed=0, labels=None):
    """Per-class random split; each class sends round(n_c * fraction) items to test.

    Rounding is half-up and at least one item per class stays in training.
    Both halves keep the input order.
    """
    items = list(items)
    labels = _labels_of(items, labels)
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    counts = Counter(labels)
    small = sorted(c for c, n in counts.items() if n < 2)
    if small:
        raise ValueError(f"classes with fewer than 2 items: {small}")
    rng = stage_rng(seed, "split")
    test_idx = set()
    for cls in sorted(counts):
        idx = [i for i, lab in enumerate(labels) if lab == cls]
        n_test = min(int(math.floor(len(idx) * test_fraction + 0.5)), len(idx) - 1)
        test_idx.update(int(i) for i in rng.choice(idx, size=n_test, replace=False))
    train = [it for i, it in enumerate(items) if i not in test_idx]
    test = [it for i, it in enumerate(items) if i in test_idx]
    return train, test


def balanced_subsample(items, seed=0, labels=None, classes=None):
    """Downsample every class to the size of the rarest one, without replacement."""
    items = list(items)
    labels = _labels_of(items, labels)
    counts = Counter(labels)
    if classes is not None:
        absent = [c for c in classes if counts.get(c, 0) == 0]
        if absent:
            raise ValueError(f"forms absent from training: {absent}")
    if not counts:
        raise ValueError("nothing to subsample")
    m = min(counts.values())
    rng = stage_rng(seed, "subsample")
    keep = set()
    for cls in sorted(counts):
        idx = [i for i, lab in enumerate(labels) if lab == cls]
        keep.update(int(i) for i in rng.choice(idx, size=m, replace=False))
    return [it for i, it in enumerate(items) if i in keep]


# ------------------------------------------------------------ evaluation

def wilson_interval(successes, n, level=0.95):
    if n <= 0:
        raise ValueError("n must be positive")
    z = stats.norm.ppf(0.5 + level / 2)
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class ClassificationReport:
    classes: tuple
    confusion: np.ndarray  # rows gold, columns predicted
    accuracy: float
    ci: tuple
    recall: tuple
    precision: tuple
    specificity: tuple
    balanced_accuracy: tuple

    @property
    def n(self):
        return int(self.confusion.sum())


def classification_report(pred_labels, gold_labels, classes=None) -> ClassificationReport:
    pred_labels = list(pred_labels)
    gold_labels = list(gold_labels)
    if len(pred_labels) != len(gold_labels):
        raise ValueError("predictions and gold labels differ in length")
    if not gold_labels:
        raise ValueError("empty input")
    if classes is None:
        classes = tuple(sorted(set(gold_labels) | set(pred_labels)))
    pos = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=int)
    for g, p in zip(gold_labels, pred_labels):
        conf[pos[g], pos[p]] += 1
    n = conf.sum()
    tp = np.diag(conf).astype(float)
    fn = conf.sum(axis=1) - tp
    fp = conf.sum(axis=0) - tp
    tn = n - tp - fn - fp
    with np.errstate(invalid="ignore", divide="ignore"):
        rec = tp / (tp + fn)
        prec = tp / (tp + fp)
        spec = tn / (tn + fp)
    bal = (rec + spec) / 2
    acc = float(tp.sum() / n)
    return ClassificationReport(tuple(classes), conf, acc, wilson_interval(int(tp.sum()), int(n)),
                                tuple(rec.tolist()), tuple(prec.tolist()), tuple(spec.tolist()),
                                tuple(bal.tolist()))


def _dec(x, digits):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    s = f"{x:.{digits}f}"
    return s[1:] if s.startswith("0.") else s


TABLE7_HEADER = ("Microsystems", "Global accuracy (95% CI)", "Balanced accuracy", "Recall", "Precision")


def table7_rows(reports: dict) -> list:
    """One row per microsystem; per-form values joined with ' / ' in class order."""
    rows = []
    for ms, r in reports.items():
        acc = f"{_dec(r.accuracy, 2)} ({_dec(r.ci[0], 4)}, {_dec(r.ci[1], 4)})"
        rows.append((f"MS {' '.join(c.upper() for c in r.classes)}" if not ms else ms, acc,
                     # with two forms both one-vs-rest values coincide, so one is shown
                     " / ".join(_dec(v, 4) for v in r.balanced_accuracy[:1 if len(r.classes) == 2 else None]),
                     " / ".join(_dec(v, 4) for v in r.recall),
                     " / ".join(_dec(v, 4) for v in r.precision)))
    return rows


def write_table7(reports: dict, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE7_HEADER)
    w.writerows(table7_rows(reports))
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def feature_importance(m: MultinomialModel) -> list:
    """Columns ranked by the share of summed |beta| they carry (intercept excluded), in percent."""
    keep = [j for j, c in enumerate(m.columns) if c != INTERCEPT]
    raw = np.abs(m.beta[:, keep]).sum(axis=0)
    total = raw.sum()
    pct = raw / total * 100.0 if total > 0 else np.zeros_like(raw)
    ranked = sorted(zip((m.columns[j] for j in keep), pct.tolist()), key=lambda t: (-t[1], t[0]))
    return ranked


def write_importance(ranked, top=None, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "Feature", "Importance"])
    for i, (name, pct) in enumerate(ranked[:top] if top else ranked, start=1):
        w.writerow([i, name, f"{pct:.3f}"])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


# ------------------------------------------------------------ combined LASSO

@dataclass
class LassoResult:
    model: MultinomialModel
    pseudo_r2: float
    penalty: float
    penalties: np.ndarray
    cv_deviance: np.ndarray
    nonzero: np.ndarray  # non-intercept nonzero count along the path
    ll_model: float
    ll_null: float
    center: np.ndarray
    scale: np.ndarray
    impute: np.ndarray

    def transform(self, X):
        X = np.asarray(X, dtype=float).copy()
        miss = np.isnan(X)
        X[miss] = np.broadcast_to(self.impute, X.shape)[miss]
        Z = (X - self.center) / self.scale
        return np.hstack([Z, np.ones((Z.shape[0], 1))])

    def predict_proba(self, X):
        return self.model.proba(self.transform(X))


def _standardize(X):
    impute = np.nanmedian(X, axis=0)
    impute = np.where(np.isnan(impute), 0.0, impute)
    X = X.copy()
    miss = np.isnan(X)
    X[miss] = np.broadcast_to(impute, X.shape)[miss]
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (X - center) / scale, center, scale, impute


def lambda_max(Z1, y, k):
    """Smallest L1 penalty at which every non-intercept coefficient is zero."""
    n = len(y)
    freq = np.bincount(y, minlength=k) / n
    Y = np.zeros((n, k))
    Y[np.arange(n), y] = 1
    g = Z1[:, :-1].T @ (Y - freq)[:, :k - 1] / n
    return float(np.max(np.abs(g))) if g.size else 0.0


def _null_loglik(y, k):
    freq = np.bincount(y, minlength=k) / len(y)
    return float(np.sum(np.log(freq[y])))


def _path(Z1, y, k, penalties, cfg, lip):
    mask = np.ones(Z1.shape[1], dtype=bool)
    mask[-1] = False
    beta = np.zeros((k - 1, Z1.shape[1]))
    freq = np.bincount(y, minlength=k) / len(y)
    beta[:, -1] = np.log(np.maximum(freq[:k - 1], 1e-12) / max(freq[k - 1], 1e-12))
    out = []
    for lam in penalties:
        if cfg.method == "lbfgs":
            beta, _ = _fit_l1_lbfgs(Z1, y, k - 1, cfg.l2_penalty, lam, mask, beta, cfg)
        else:
            beta, _ = _fit_fista(Z1, y, k - 1, cfg.l2_penalty, lam, mask, beta, cfg, lip=lip)
        out.append(beta.copy())
    return out


def train_lasso_multinomial(X, y, penalties=None, n_penalties=30, ratio=1e-3, folds=5, seed=0,
                            classes=None, columns=None, cfg=None) -> LassoResult:
    """L1-penalised multinomial fit with the penalty picked by k-fold deviance.

    ``X`` has one row per text (median form probabilities, NaN for a
    microsystem absent from the text; NaNs are imputed with the column
    median). Columns are standardised before fitting. Returns the refit on all
    rows at the selected penalty and its McFadden pseudo-R^2.
    """
    X = np.asarray(X, dtype=float)
    y_raw = list(y)
    if classes is None:
        classes = tuple(sorted(set(y_raw)))
    k = len(classes)
    yi = np.asarray([classes.index(v) for v in y_raw], dtype=int)
    present = np.unique(yi)
    if len(present) < 2:
        raise ModelError("outcome has a single level")
    if len(present) < k:
        classes = tuple(classes[i] for i in present)
        remap = {int(old): new for new, old in enumerate(present)}
        yi = np.asarray([remap[int(v)] for v in yi])
        k = len(classes)
    cfg = cfg or TrainConfig(l2_penalty=0.0, max_iterations=5000, tol=1e-7, seed=seed)
    Z, center, scale, impute = _standardize(X)
    Z1 = np.hstack([Z, np.ones((Z.shape[0], 1))])
    lip = _lipschitz(Z1)
    if penalties is None:
        lmax = lambda_max(Z1, yi, k)
        penalties = lmax * np.logspace(0, math.log10(ratio), n_penalties) if lmax > 0 else np.array([0.0])
    penalties = np.sort(np.asarray(penalties, dtype=float))[::-1]
    cv = np.zeros(len(penalties))
    if folds and folds > 1 and len(penalties) > 1:
        rng = stage_rng(seed, "lasso-folds")
        fold_of = np.empty(len(yi), dtype=int)
        for c in range(k):  # stratified folds
            idx = np.flatnonzero(yi == c)
            fold_of[rng.permutation(idx)] = np.arange(len(idx)) % folds
        for f in range(folds):
            tr, te = fold_of != f, fold_of == f
            if len(np.unique(yi[tr])) < k:
                continue
            Zt, c_, s_, imp_ = _standardize(X[tr])
            Zt1 = np.hstack([Zt, np.ones((Zt.shape[0], 1))])
            Xte = X[te].copy()
            miss = np.isnan(Xte)
            Xte[miss] = np.broadcast_to(imp_, Xte.shape)[miss]
            Zte1 = np.hstack([(Xte - c_) / s_, np.ones((Xte.shape[0], 1))])
            for j, b in enumerate(_path(Zt1, yi[tr], k, penalties, cfg, _lipschitz(Zt1))):
                cv[j] += -2.0 * loglik(b, Zte1, yi[te]) * te.sum()
        best = int(np.argmin(cv))
    else:
        best = 0 if len(penalties) == 1 else len(penalties) - 1
    betas = _path(Z1, yi, k, penalties, cfg, lip)
    nonzero = np.asarray([int(np.count_nonzero(b[:, :-1])) for b in betas])
    beta = betas[best]
    ll_model = loglik(beta, Z1, yi) * len(yi)
    ll_null = _null_loglik(yi, k)
    cols = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    model = MultinomialModel(classes, cols + (INTERCEPT,), beta, None,
                             {"n": int(len(yi)), "l1_penalty": float(penalties[best]), "seed": seed})
    from .stats import pseudo_r2

    return LassoResult(model, pseudo_r2(ll_model, ll_null), float(penalties[best]), penalties, cv,
                       nonzero, ll_model, ll_null, center, scale, impute)
