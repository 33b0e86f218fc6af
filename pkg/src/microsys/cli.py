"""Command line front end.

Every subcommand reads and writes the documented CSV/TSV/JSON files, so any
stage can be re-run on its own. Exit codes: 0 ok, 2 usage, 3 data error,
4 non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import replace

from . import model as M
from . import pipeline as P
from . import stats as S
from .corpus import CorpusError, corpus_stats
from .features import FeatureConfigError
from .microsystems import (MS_NAMES, AlignmentError, evaluate_extraction, extract_occurrences, get_microsystem,
                           read_gold, read_occurrences, resolve_occurrences, write_occurrences)
from .query import PatternError, PatternSyntaxError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4

log = logging.getLogger("microsys")


class UsageError(Exception):
    pass


def _ms_list(values):
    names = []
    for v in values or MS_NAMES:
        for name in v.replace(",", " ").split():
            if name not in MS_NAMES:
                raise UsageError(f"unknown microsystem {name!r}; choose from {', '.join(MS_NAMES)}")
            names.append(name)
    return names


def _one_ms(values):
    names = _ms_list(values)
    if len(names) != 1:
        raise UsageError(f"exactly one --ms is needed here; choose from {', '.join(MS_NAMES)}")
    return names[0]


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing input: {path}")
    return path


def _ms_of_classes(classes):
    for name in MS_NAMES:
        if tuple(get_microsystem(name).forms) == tuple(classes):
            return name
    raise ValueError(f"prediction columns {list(classes)} match no microsystem")


# ------------------------------------------------------------ subcommands

def cmd_stats(a):
    docs = P.load_corpus(_require_corpus(a.corpus), a.seed)
    text = corpus_stats(docs).to_csv()
    if a.out:
        _write(a.out, text)
    else:
        sys.stdout.write(text)


def cmd_extract(a):
    names = _ms_list(a.ms)
    docs = P.load_corpus(_require_corpus(a.corpus), a.seed)
    gold = None
    if a.gold:
        with open(_require(a.gold), encoding="utf-8") as fh:
            gold = read_gold(fh)
    all_occ = []
    for ms in names:
        spec = get_microsystem(ms)
        diags = []
        occ = extract_occurrences(spec, docs, diags)
        all_occ += occ
        print(f"{ms}: {len(occ)} occurrences, {len(diags)} overlaps dropped")
        if gold is not None:
            rep = evaluate_extraction(occ, [g for g in gold if g.ms == ms], spec.forms)
            _write(os.path.join(a.out, f"extraction_{ms}.csv"), rep.to_csv(ms))
    _write(os.path.join(a.out, "occurrences.tsv"), write_occurrences(all_occ))


def _load_occurrences(path, docs, ms):
    with open(_require(path), encoding="utf-8") as fh:
        rows = [r for r in read_occurrences(fh) if r.ms == ms]
    return resolve_occurrences(rows, docs, get_microsystem(ms))


def cmd_train(a):
    ms = _one_ms(a.ms)
    docs = P.load_corpus(_require_corpus(a.corpus), a.seed)
    occ = _load_occurrences(a.occurrences, docs, ms)
    cfg = M.TrainConfig(l2_penalty=a.l2_penalty, max_iterations=a.max_iterations, tol=a.tol, method=a.method,
                        seed=a.seed)
    t = P.train_microsystem(occ, ms, cfg, a.seed, a.test_fraction, a.max_missing)
    t.model.save(os.path.join(a.out, f"{ms}.json"))
    _write(os.path.join(a.out, f"test_{ms}.tsv"), write_occurrences(t.test))
    meta = t.model.meta
    print(f"{ms}: converged={meta['converged']} iterations={meta['iterations']} "
          f"max|grad|={meta['grad_max']:.2e}")
    print(f"{ms}: train={len(t.train)} test={len(t.test)} balanced subsample class counts "
          + " ".join(f"{c}={n}" for c, n in meta["class_counts"].items()))
    if t.dropped_columns:
        print(f"{ms}: features dropped for missingness: {', '.join(t.dropped_columns)}")


def cmd_predict(a):
    m = M.MultinomialModel.load(_require(a.model))
    ms = m.meta.get("ms") or _ms_of_classes(m.classes)
    docs = P.load_corpus(_require_corpus(a.corpus), a.seed)
    if a.occurrences:
        occ = _load_occurrences(a.occurrences, docs, ms)
    else:
        occ = extract_occurrences(get_microsystem(ms), docs)
    preds = P.predict_occurrences(m, occ)
    text = M.write_predictions(preds)
    if a.out:
        _write(a.out, text)
    else:
        sys.stdout.write(text)


def cmd_evaluate(a):
    reports = {}
    for path in a.predictions:
        with open(_require(path), encoding="utf-8") as fh:
            preds = M.read_predictions(fh)
        if not preds:
            raise ValueError(f"{path}: no predictions")
        classes = preds[0].classes
        ms = _ms_of_classes(classes)
        key = f"MS {' '.join(c.upper() for c in classes)}"
        reports[key] = M.classification_report([p.label for p in preds], [p.occurrence.form for p in preds],
                                                classes)
        print(f"{ms}: accuracy={reports[key].accuracy:.4f} n={len(preds)}")
    _write(os.path.join(a.out, "table7.csv"), M.write_table7(reports))
    for path in a.model or ():
        m = M.MultinomialModel.load(_require(path))
        ms = m.meta.get("ms") or _ms_of_classes(m.classes)
        _write(os.path.join(a.out, f"importance_{ms}.csv"), M.write_importance(M.feature_importance(m), a.top))


def _read_preds_by_ms(paths):
    out = {}
    for path in paths:
        with open(_require(path), encoding="utf-8") as fh:
            preds = M.read_predictions(fh)
        if not preds:
            continue
        ms = _ms_of_classes(preds[0].classes)
        out.setdefault(ms, []).extend(preds)
    return out


def cmd_associate(a):
    corpora = [("internal", a.corpus, a.predictions)]
    if a.external_corpus or a.external_predictions:
        if not (a.external_corpus and a.external_predictions):
            raise UsageError("--external-corpus and --external-predictions go together")
        corpora.append(("external", a.external_corpus, a.external_predictions))
    reports = {}
    for name, corpus, paths in corpora:
        docs = P.load_corpus(_require_corpus(corpus), a.seed)
        preds = _read_preds_by_ms(paths)
        names = [ms for ms in MS_NAMES if ms in preds]
        res = P.associate(preds, docs, names, a.seed, a.confounder, a.delta, a.lasso_folds, a.n_penalties,
                          lasso=not a.no_lasso)
        reports[name] = res["odds_ratios"]
        _write(os.path.join(a.out, f"{name}_profiles.csv"), S.write_profiles(res["profiles"]))
        _write(os.path.join(a.out, f"{name}_kruskal.csv"), P.write_kruskal(res["kruskal"]))
        if res["confounder"] is not None:
            _write(os.path.join(a.out, f"{name}_confounder.csv"), S.write_confounder_table(res["confounder"]))
        if res["lasso"] is not None:
            _write(os.path.join(a.out, f"{name}_lasso.json"), P._json(P.lasso_summary(res["lasso"])))
            print(f"{name}: combined LASSO pseudo-R2={res['lasso'].pseudo_r2:.4f}")
        occs = {ms: extract_occurrences(get_microsystem(ms), docs) for ms in names}
        _write(os.path.join(a.out, f"{name}_frequencies.csv"),
               S.write_frequencies(P.form_frequencies(docs, occs, names)))
    _write(os.path.join(a.out, "table8.csv"), S.write_table8(reports))


def cmd_agreement(a):
    with open(_require(a.ratings), encoding="utf-8") as fh:
        ratings = P.read_ratings(fh)
    for name, text in P.agreement_reports(ratings, a.n_perm, a.seed).items():
        _write(os.path.join(a.out, name), text)


def cmd_synth(a):
    from .corpus import write_conllu
    from .synthetic import generate, link_summary, write_truth

    c = generate(a.n_texts, seed=a.seed)
    _write(a.out, write_conllu(c.docs))
    if a.truth:
        os.makedirs(os.path.dirname(a.truth) or ".", exist_ok=True)
        with open(a.truth, "w", encoding="utf-8", newline="") as fh:
            write_truth(c, fh)
        _write(os.path.splitext(a.truth)[0] + ".json", P._json(link_summary(c)))


def cmd_run(a):
    cfg = P.PipelineConfig.from_ini(_require(a.config))
    over = {}
    if a.seed is not None:
        over["seed"] = a.seed
        over["train"] = replace(cfg.train, seed=a.seed)
    if a.out:
        over["out"] = a.out
    if a.ms:
        over["microsystems"] = tuple(_ms_list(a.ms))
    if over:
        cfg = replace(cfg, **over)
    res = P.run_pipeline(cfg)
    for ms, t in res["trained"].items():
        meta = t.model.meta
        print(f"{ms}: converged={meta['converged']} class counts "
              + " ".join(f"{c}={n}" for c, n in meta["class_counts"].items()))
    print(f"reports written to {cfg.out}")


def _require_corpus(src):
    if src is None:
        raise UsageError("a corpus is required")
    return src if src.startswith("synthetic:") else _require(src)


# ------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="microsys", description="Microsystem extraction, classification and "
                                "CEFR association on CoNLL-U learner corpora.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, fn, help_, hidden=False):
        kw = {} if hidden else {"help": help_}
        sp = sub.add_parser(name, description=help_, **kw)
        sp.set_defaults(fn=fn)
        sp.add_argument("--seed", type=int, default=0, help="top-level seed (default 0)")
        return sp

    sp = add("stats", cmd_stats, "per-level text counts and word statistics")
    sp.add_argument("corpus", help="CoNLL-U file or synthetic:N[:SEED]")
    sp.add_argument("--out", help="CSV path (default stdout)")

    sp = add("extract", cmd_extract, "run the microsystem patterns and dump occurrences")
    sp.add_argument("corpus")
    sp.add_argument("--ms", action="append", help="microsystem name(s); default all")
    sp.add_argument("--gold", help="gold CSV; writes per-class P/R/F1 reports")
    sp.add_argument("--out", default="reports")

    sp = add("train", cmd_train, "split, subsample, select features and fit one microsystem")
    sp.add_argument("occurrences", help="occurrence TSV from 'extract'")
    sp.add_argument("--corpus", required=True, help="corpus the occurrences were extracted from")
    sp.add_argument("--ms", action="append", required=True)
    sp.add_argument("--out", default="models")
    sp.add_argument("--l2-penalty", type=float, default=1e-4)
    sp.add_argument("--max-iterations", type=int, default=1000)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--method", choices=("lbfgs", "gd"), default="lbfgs")
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.add_argument("--max-missing", type=float, default=0.5)

    sp = add("predict", cmd_predict, "per-occurrence form probabilities")
    sp.add_argument("model", help="model JSON from 'train'")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--occurrences", help="occurrence TSV (default: extract from the corpus)")
    sp.add_argument("--out", help="CSV path (default stdout)")

    sp = add("evaluate", cmd_evaluate, "classification report and feature importance")
    sp.add_argument("predictions", nargs="+", help="prediction CSVs (one per microsystem)")
    sp.add_argument("--model", action="append", help="model JSON for the importance table")
    sp.add_argument("--top", type=int, default=10)
    sp.add_argument("--out", default="reports")

    sp = add("associate", cmd_associate, "text medians, Kruskal-Wallis, odds ratios and combined LASSO")
    sp.add_argument("predictions", nargs="+")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--external-corpus")
    sp.add_argument("--external-predictions", nargs="+")
    sp.add_argument("--confounder", default="nationality")
    sp.add_argument("--delta", type=float, default=0.005)
    sp.add_argument("--lasso-folds", type=int, default=5)
    sp.add_argument("--n-penalties", type=int, default=30)
    sp.add_argument("--no-lasso", action="store_true")
    sp.add_argument("--out", default="reports")

    sp = add("agreement", cmd_agreement, "Fleiss and Cohen kappas and permutation tests")
    sp.add_argument("ratings", help="long CSV: sample,group,item,rater,label")
    sp.add_argument("--n-perm", type=int, default=10000)
    sp.add_argument("--out", default="reports")

    sp = add("synth", cmd_synth, "write a synthetic corpus with known ground truth", hidden=True)
    sp.add_argument("--n-texts", type=int, default=5000)
    sp.add_argument("--out", required=True, help="CoNLL-U path")
    sp.add_argument("--truth", help="CSV path for the true form probabilities")

    sp = add("run", cmd_run, "run every stage from a config file")
    sp.add_argument("--config", required=True, help="INI file")
    sp.add_argument("--out")
    sp.add_argument("--ms", action="append")
    sp.set_defaults(seed=None)
    return p


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not getattr(a, "fn", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", M.ConvergenceWarning)
            a.fn(a)
    except UsageError as exc:
        parser.error(f"{a.command}: {exc}")  # exits with 2
    except M.ConvergenceWarning as exc:
        print(f"microsys {a.command}: non-convergence: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (CorpusError, PatternSyntaxError, PatternError, AlignmentError, FeatureConfigError, M.ModelError,
            S.StatsError, FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"microsys {a.command}: error: {msg}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
