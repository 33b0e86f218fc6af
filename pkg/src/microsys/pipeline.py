"""End-to-end stages: extract, train, predict, evaluate and associate.

Each stage reads and writes the documented file formats so the command line
can re-run any of them on its own. ``run_pipeline`` chains them under one
seed; every random step draws from its own labelled stream.
"""
from __future__ import annotations

import configparser
import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from . import features as F
from . import model as M
from . import stats as S
from .rng import stage_seed
from .corpus import CEFR_LEVELS, corpus_stats, read_conllu
from .microsystems import (MS_NAMES, evaluate_extraction, extract_occurrences, get_microsystem, read_gold,
                           write_occurrences)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    corpus: str
    external: str | None = None
    gold: str | None = None
    microsystems: tuple = MS_NAMES
    out: str = "reports"
    seed: int = 0
    train: M.TrainConfig = M.TrainConfig()
    test_fraction: float = 0.2
    max_missing: float = 0.5
    confounder: str = "nationality"
    delta: float = 0.005
    lasso_folds: int = 5
    n_penalties: int = 30
    formats: tuple = ("csv", "json", "txt")  # "txt" adds fixed-width renderings of the tables

    @classmethod
    def from_ini(cls, path):
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        if not cp.read(path, encoding="utf-8"):
            raise FileNotFoundError(path)
        base = os.path.dirname(os.path.abspath(path))

        def resolve(v):
            if v is None or v.startswith("synthetic:") or os.path.isabs(v):
                return v
            return os.path.join(base, v)

        p = cp["pipeline"]
        t = cp["train"] if cp.has_section("train") else {}
        a = cp["associate"] if cp.has_section("associate") else {}
        seed = int(p.get("seed", "0"))
        train = M.TrainConfig(l2_penalty=float(t.get("l2_penalty", "1e-4")),
                              max_iterations=int(t.get("max_iterations", "1000")),
                              tol=float(t.get("tol", "1e-6")), method=t.get("method", "lbfgs"), seed=seed)
        ms = tuple(p.get("microsystems", " ".join(MS_NAMES)).split())
        for name in ms:
            get_microsystem(name)
        return cls(corpus=resolve(p["corpus"]), external=resolve(p.get("external")), gold=resolve(p.get("gold")),
                   microsystems=ms, out=resolve(p.get("out", "reports")), seed=seed, train=train,
                   test_fraction=float(t.get("test_fraction", "0.2")),
                   max_missing=float(t.get("max_missing", "0.5")),
                   confounder=a.get("confounder", "nationality"), delta=float(a.get("delta", "0.005")),
                   lasso_folds=int(a.get("lasso_folds", "5")), n_penalties=int(a.get("n_penalties", "30")),
                   formats=tuple(p.get("formats", "csv json txt").split()))


def load_corpus(source, seed=0):
    """A CoNLL-U path, or ``synthetic:N[:SEED]`` for an N-text generated corpus."""
    if source.startswith("synthetic:"):
        from .synthetic import generate

        parts = source.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad synthetic corpus spec {source!r}; expected synthetic:N or synthetic:N:SEED")
        return generate(int(parts[1]), seed=int(parts[2]) if len(parts) == 3 else seed).docs
    return read_conllu(source)


# ------------------------------------------------------------ training

@dataclass
class TrainedMicrosystem:
    ms: str
    model: M.MultinomialModel
    schema: F.FeatureSchema
    train: list
    test: list
    subsample: list
    dropped_columns: tuple = ()


def train_microsystem(occurrences, ms, cfg: M.TrainConfig = M.TrainConfig(), seed=0, test_fraction=0.2,
                      max_missing=0.5) -> TrainedMicrosystem:
    """Split, balance, select features on the balanced training rows, encode and fit."""
    spec = get_microsystem(ms)
    occurrences = [o for o in occurrences if o.ms == ms]
    train, test = M.stratified_split(occurrences, test_fraction, seed=stage_seed(seed, f"train:{ms}"))
    sub = M.balanced_subsample(train, seed=stage_seed(seed, f"train:{ms}"), classes=spec.forms)
    full = F.build_schema(ms)
    vecs = F.extract_all(full, sub)
    schema = F.select_features(full, vecs, max_missing)
    vecs = F.project(vecs, full, schema)
    dm = F.encode(schema, vecs, classes=spec.forms)
    model = M.train_multinomial(dm, cfg)
    model.meta["ms"] = ms
    model.meta["n_train"] = len(train)
    model.meta["n_test"] = len(test)
    dropped = tuple(n for n in full.names if n not in schema.names)
    model.meta["dropped_columns"] = list(dropped)
    return TrainedMicrosystem(ms, model, schema, train, test, sub, dropped)


def predict_occurrences(model: M.MultinomialModel, occurrences) -> list:
    occurrences = list(occurrences)
    if not occurrences:
        return []
    schema = F.FeatureSchema.from_json(model.levels["schema"])
    vecs = F.extract_all(schema, occurrences)
    dm = F.encode(schema, vecs, levels=model.levels)
    return M.predict_proba(model, dm, occurrences)


# ------------------------------------------------------------ association

def lasso_matrix(profiles, microsystems):
    cols = []
    for ms in microsystems:
        cols += [f"{ms}:{f}" for f in get_microsystem(ms).forms]
    X = S.profile_matrix(profiles, cols)
    keep = ~np.isnan(X).all(axis=1)
    return X, cols, keep


def associate(preds_by_ms, docs, microsystems, seed=0, confounder="nationality", delta=0.005, folds=5,
              n_penalties=30, lasso=True):
    """Text medians, Kruskal-Wallis per form, ordinal odds ratios (with and without the confounder), LASSO."""
    forms = {ms: get_microsystem(ms).forms for ms in microsystems}
    profiles = S.aggregate_text_median(preds_by_ms, docs, forms)
    covariates = [f"{ms}:{f}" for ms in microsystems for f in forms[ms]]
    kw_rows = []
    for c in covariates:
        try:
            r = S.kruskal_by_level(profiles, c)
            kw_rows.append((c, r.H, r.df, r.p, r.n))
        except S.StatsError as exc:
            log.warning("Kruskal-Wallis skipped for %s: %s", c, exc)
    ors = S.per_form_odds_ratios(profiles, covariates)
    conf = None
    if confounder and len({getattr(p, confounder) for p in profiles}) > 1:
        conf = S.refit_with_confounder(profiles, covariates, confounder, delta)
    lasso_res = None
    if lasso:
        X, cols, keep = lasso_matrix(profiles, microsystems)
        y = [p.cefr for p in profiles]
        classes = tuple(lv for lv in CEFR_LEVELS if lv in set(y))
        lasso_res = M.train_lasso_multinomial(X[keep], [v for v, k in zip(y, keep) if k], folds=folds,
                                              n_penalties=n_penalties, seed=seed, classes=classes, columns=cols)
    return {"profiles": profiles, "kruskal": kw_rows, "odds_ratios": ors, "confounder": conf, "lasso": lasso_res}


def write_kruskal(rows, out=None):
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["covariate", "H", "df", "p_value", "n"])
    for c, H, df, p, n in rows:
        w.writerow([c, f"{H:.6f}", df, f"{p:.6g}", n])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def lasso_summary(res: M.LassoResult):
    return {"pseudo_r2": round(res.pseudo_r2, 10), "penalty": round(res.penalty, 12),
            "ll_model": round(res.ll_model, 8), "ll_null": round(res.ll_null, 8),
            "classes": list(res.model.classes), "columns": list(res.model.columns),
            "nonzero_path": res.nonzero.tolist(),
            "penalties": [round(float(v), 12) for v in res.penalties],
            "cv_deviance": [round(float(v), 8) for v in res.cv_deviance],
            "beta": [[round(float(v), 10) for v in row] for row in res.model.beta]}


# ------------------------------------------------------------ full run

def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _json(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def render_txt(csv_text, footnote=None):
    """Fixed-width rendering of a CSV report."""
    import csv
    import io

    rows = [r for r in csv.reader(io.StringIO(csv_text)) if r]
    width = max(len(r) for r in rows)
    rows = [r + [""] * (width - len(r)) for r in rows]
    sizes = [max(len(r[j]) for r in rows if len(r) > 1 or j == 0) for j in range(width)]
    lines = []
    for r in rows:
        if len(r[0]) > 0 and all(c == "" for c in r[1:]) and r[0].startswith("*"):
            lines.append(r[0])
        else:
            lines.append("  ".join(c.ljust(sizes[j]) for j, c in enumerate(r)).rstrip())
    if footnote:
        lines.append(footnote)
    return "\n".join(lines) + "\n"


def run_pipeline(cfg: PipelineConfig):
    """Run every stage and write the reports under ``cfg.out``; returns the in-memory results."""
    out = cfg.out
    docs = load_corpus(cfg.corpus, cfg.seed)
    ext_docs = load_corpus(cfg.external, cfg.seed) if cfg.external else None
    files = []

    def emit(name, text, txt=False):
        _write(os.path.join(out, name), text)
        files.append(name)
        if txt and "txt" in cfg.formats:
            tname = name.rsplit(".", 1)[0] + ".txt"
            _write(os.path.join(out, tname), render_txt(text))
            files.append(tname)

    emit("corpus_stats.csv", corpus_stats(docs).to_csv(), txt=True)
    if ext_docs:
        emit("external_corpus_stats.csv", corpus_stats(ext_docs).to_csv(), txt=True)

    gold = read_gold(open(cfg.gold, encoding="utf-8")) if cfg.gold else None
    occs, ext_occs, trained, preds, ext_preds, reports = {}, {}, {}, {}, {}, {}
    all_occ = []
    for ms in cfg.microsystems:
        spec = get_microsystem(ms)
        diags = []
        occs[ms] = extract_occurrences(spec, docs, diags)
        all_occ += occs[ms]
        if gold is not None:
            rep = evaluate_extraction(occs[ms], [g for g in gold if g.ms == ms], spec.forms)
            emit(f"extraction_{ms}.csv", rep.to_csv(ms), txt=True)
        trained[ms] = train_microsystem(occs[ms], ms, cfg.train, cfg.seed, cfg.test_fraction, cfg.max_missing)
        m = trained[ms].model
        emit(f"models/{ms}.json", _json(m.to_json()))
        test_preds = predict_occurrences(m, trained[ms].test)
        reports[f"MS {' '.join(f.upper() for f in spec.forms)}"] = M.classification_report(
            [p.label for p in test_preds], [p.occurrence.form for p in test_preds], spec.forms)
        emit(f"importance_{ms}.csv", M.write_importance(M.feature_importance(m), top=10), txt=True)
        preds[ms] = predict_occurrences(m, occs[ms])
        emit(f"predictions_{ms}.csv", M.write_predictions(preds[ms]))
        if ext_docs:
            ext_occs[ms] = extract_occurrences(spec, ext_docs)
            ext_preds[ms] = predict_occurrences(m, ext_occs[ms])
    emit("occurrences.tsv", write_occurrences(all_occ))
    emit("table7.csv", M.write_table7(reports), txt=True)

    corpora = {"internal": (docs, preds)}
    if ext_docs:
        corpora["external"] = (ext_docs, ext_preds)
    or_reports, results = {}, {}
    for name, (d, p) in corpora.items():
        res = associate(p, d, cfg.microsystems, cfg.seed, cfg.confounder, cfg.delta, cfg.lasso_folds,
                        cfg.n_penalties)
        results[name] = res
        or_reports[name] = res["odds_ratios"]
        emit(f"{name}_profiles.csv", S.write_profiles(res["profiles"]))
        emit(f"{name}_kruskal.csv", write_kruskal(res["kruskal"]), txt=True)
        if res["confounder"] is not None:
            emit(f"{name}_confounder.csv", S.write_confounder_table(res["confounder"]), txt=True)
        if res["lasso"] is not None:
            emit(f"{name}_lasso.json", _json(lasso_summary(res["lasso"])))
        emit(f"{name}_frequencies.csv", S.write_frequencies(form_frequencies(
            d, occs if name == "internal" else ext_occs, cfg.microsystems)))
    emit("table8.csv", S.write_table8(or_reports), txt=True)
    manifest = {"config": _config_dict(cfg), "files": sorted(files),
                "class_counts": {ms: t.model.meta["class_counts"] for ms, t in trained.items()},
                "converged": {ms: t.model.meta["converged"] for ms, t in trained.items()}}
    _write(os.path.join(out, "manifest.json"), _json(manifest))
    return {"docs": docs, "occurrences": occs, "trained": trained, "predictions": preds,
            "classification": reports, "association": results}


def form_frequencies(docs, occs_by_ms, microsystems):
    """Frequency rows for every microsystem; forms are qualified as ``MS:form``."""
    rows = []
    for ms in microsystems:
        for r in S.normalized_form_frequency(docs, occs_by_ms[ms], get_microsystem(ms).forms):
            rows.append(replace(r, form=f"{ms}:{r.form}"))
    return rows


def _config_dict(cfg):
    # the output directory is left out so relocated reruns stay byte-identical
    d = {k: getattr(cfg, k) for k in ("corpus", "external", "gold", "seed", "test_fraction",
                                      "max_missing", "confounder", "delta", "lasso_folds", "n_penalties")}
    for k in ("corpus", "external", "gold"):
        if d[k] and not str(d[k]).startswith("synthetic:"):
            d[k] = os.path.basename(str(d[k]))
    d["microsystems"] = list(cfg.microsystems)
    d["train"] = {"l2_penalty": cfg.train.l2_penalty, "max_iterations": cfg.train.max_iterations,
                  "tol": cfg.train.tol, "method": cfg.train.method}
    return d


# ------------------------------------------------------------ agreement

AGREEMENT_COLUMNS = ("sample", "group", "item", "rater", "label")
FLEISS_HEADER = ("Microsystems", "N", "Fleiss Kappa", "z", "p-value")


def read_ratings(stream):
    """Long CSV ``sample, group, item, rater, label`` -> {(sample, group): (items, raters, matrix)}.

    Items and raters keep their first-seen order; every item needs a label from every rater.
    """
    import csv

    reader = csv.DictReader(stream)
    if tuple(reader.fieldnames or ()) != AGREEMENT_COLUMNS:
        raise ValueError(f"ratings CSV must have header {list(AGREEMENT_COLUMNS)}, got {reader.fieldnames}")
    cells = {}
    for line_no, r in enumerate(reader, start=2):
        key = (r["sample"], r["group"])
        items, raters, lab = cells.setdefault(key, ({}, {}, {}))
        items.setdefault(r["item"], len(items))
        raters.setdefault(r["rater"], len(raters))
        if (r["item"], r["rater"]) in lab:
            raise ValueError(f"line {line_no}: item {r['item']!r} rated twice by {r['rater']!r}")
        lab[(r["item"], r["rater"])] = r["label"]
    out = {}
    for key, (items, raters, lab) in cells.items():
        matrix = []
        for it in items:
            row = []
            for ra in raters:
                if (it, ra) not in lab:
                    raise ValueError(f"{key[0]}/{key[1]}: item {it!r} has no label from rater {ra!r}")
                row.append(lab[(it, ra)])
            matrix.append(row)
        out[key] = (tuple(items), tuple(raters), matrix)
    return out


def _f(x, d):
    return "NA" if x is None or not np.isfinite(x) else f"{x:.{d}f}"


def agreement_reports(ratings, n_perm=10000, seed=0):
    """CSV texts keyed by file name: Fleiss per sample, Cohen matrices, and sample-vs-sample permutations."""
    import csv
    import io

    files = {}
    samples = _unique_in_order(s for s, _ in ratings)
    for s in samples:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FLEISS_HEADER)
        for (s2, g), (items, raters, m) in ratings.items():
            if s2 != s:
                continue
            table, cats = S.ratings_to_table(m)
            r = S.fleiss_kappa(table, categories=cats)
            w.writerow([g, r.n_items, _f(r.kappa, 3), _f(r.z, 2), _f(r.p, 3)])
            files[f"cohen_{_slug(s)}_{_slug(g)}.csv"] = _cohen_matrix(m, raters)
        files[f"fleiss_{_slug(s)}.csv"] = buf.getvalue()
    if len(samples) >= 2:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "sample_1", "sample_2", "rater_a", "rater_b", "kappa_1", "kappa_2", "difference",
                    "p_value", "n_perm"])
        groups = _unique_in_order(g for _, g in ratings)
        for a, b in zip(samples, samples[1:]):
            for g in groups:
                if (a, g) not in ratings or (b, g) not in ratings:
                    continue
                (_, ra, m1), (_, rb, m2) = ratings[(a, g)], ratings[(b, g)]
                if ra != rb:
                    raise ValueError(f"group {g}: samples {a} and {b} have different raters")
                perm = S.permutation_test_kappa(m1, m2, n_perm, seed=stage_seed(seed, f"agreement:{g}"))
                for (i, j), (d, p) in perm.items():
                    k1 = S.cohen_kappa([r[i] for r in m1], [r[j] for r in m1]).kappa
                    k2 = S.cohen_kappa([r[i] for r in m2], [r[j] for r in m2]).kappa
                    w.writerow([g, a, b, ra[i], ra[j], _f(k1, 4), _f(k2, 4), _f(d, 4), f"{p:.4f}", n_perm])
        files["permutation.csv"] = buf.getvalue()
    return files


def _cohen_matrix(matrix, raters):
    """Lower-triangular pairwise Cohen kappa table with raters on both axes."""
    import csv
    import io

    pairs = S.pairwise_cohen(matrix, list(raters))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Raters' pairwise agreement (Cohen's Kappa)"] + list(raters))
    for i, a in enumerate(raters):
        row = [a]
        for j, b in enumerate(raters):
            row.append(_f(pairs[(b, a)].kappa, 2).lstrip("0") if j < i else "-")
        w.writerow(row)
    return buf.getvalue()


def _unique_in_order(seq):
    out = []
    for x in seq:
        if x not in out:
            out.append(x)
    return out


def _slug(s):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in str(s)) or "_"
