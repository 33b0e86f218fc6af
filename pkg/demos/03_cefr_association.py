"""
Relating form use to proficiency
================================

Per-occurrence probabilities are summarised per text with the median, in
percent. Ordinal regression then asks whether a higher share of a form goes
with a higher CEFR level; odds ratios are per one percentage point.
"""
import warnings

from microsys import aggregate_text_median, extract_occurrences, get_microsystem, kruskal_wallis
from microsys import synthetic
from microsys.model import train_lasso_multinomial
from microsys.pipeline import predict_occurrences, train_microsystem
from microsys.stats import fit_ordinal, odds_ratio_report, per_form_odds_ratios, profile_matrix, write_table8

warnings.simplefilter("ignore")
corpus = synthetic.generate(3000, seed=1)
forms = {ms: get_microsystem(ms).forms for ms in synthetic.FORMS}

preds = {}
for ms in synthetic.FORMS:
    occ = extract_occurrences(get_microsystem(ms), corpus.docs)
    preds[ms] = predict_occurrences(train_microsystem(occ, ms, seed=1).model, occ)
profiles = aggregate_text_median(preds, corpus.docs, forms)

###############################################################################
# The generator links CEFR to a few medians through a known proportional-odds
# model. A joint fit on those covariates should recover the odds ratios.

joint = odds_ratio_report(fit_ordinal(profiles, list(corpus.link), levels=corpus.levels))
for r in joint.rows:
    print(f"{r.name:14s} true {2.718281828 ** corpus.link[r.name]:.4f}  "
          f"fitted {r.odds_ratio:.4f} ({r.lower:.4f}, {r.upper:.4f})")

###############################################################################
# The report table uses one univariate fit per form.

cols = [f"PRF:{f}" for f in forms["PRF"]] + [f"DET:{f}" for f in forms["DET"]]
print()
print(write_table8({"generated": per_form_odds_ratios(profiles, cols, levels=corpus.levels)}))

###############################################################################
# Rank test of one form across levels, and the combined LASSO over all 19
# medians.

groups = [[p.value("PRF:that") for p in profiles if p.cefr == lv and p.counts["PRF"]] for lv in corpus.levels]
kw = kruskal_wallis(groups)
print(f"Kruskal-Wallis PRF:that  H={kw.H:.2f} df={kw.df} p={kw.p:.2g}")

all_cols = [f"{ms}:{f}" for ms in synthetic.FORMS for f in forms[ms]]
lasso = train_lasso_multinomial(profile_matrix(profiles, all_cols), [p.cefr for p in profiles],
                                classes=corpus.levels, columns=all_cols, seed=1)
print(f"combined LASSO pseudo-R2 {lasso.pseudo_r2:.3f} (generating model {corpus.pseudo_r2:.3f})")
