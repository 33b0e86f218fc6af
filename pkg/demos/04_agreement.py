"""
Agreement between annotators
============================

Fleiss' kappa for several raters, Cohen's kappa for each pair, and a
permutation test for whether agreement changed between two annotation rounds.
"""
import numpy as np

from microsys import cohen_kappa, fleiss_kappa, permutation_test_kappa
from microsys.stats import pairwise_cohen, ratings_to_table

rng = np.random.default_rng(0)
levels = ["A1", "A2", "B1", "B2", "C1"]


def round_of(n_items, noise):
    """Four raters who copy a latent level except with probability ``noise``."""
    truth = rng.integers(0, 5, size=n_items)
    out = []
    for t in truth:
        out.append([levels[t] if rng.random() > noise else levels[rng.integers(0, 5)] for _ in range(4)])
    return out


first, second = round_of(30, 0.35), round_of(30, 0.3)

table, cats = ratings_to_table(first, levels)
res = fleiss_kappa(table, categories=cats)
print(f"Fleiss kappa, first round: {res.kappa:.3f} (z={res.z:.2f}, p={res.p:.2g})")

###############################################################################
# Pairwise Cohen kappas in the lower-triangle layout.

pairs = pairwise_cohen(first, ["1", "2", "3", "4"])
for i in "234":
    print(i, " ".join(f"{pairs[(j, i)].kappa:.2f}" for j in "1234" if j < i))

###############################################################################
# Did agreement change after the adjustment session?

for (i, j), (diff, p) in permutation_test_kappa(first, second, n_perm=2000).items():
    print(f"raters {i + 1}-{j + 1}: kappa difference {diff:+.3f}, permutation p={p:.3f}")

print(cohen_kappa([1, 1, 0, 0], [1, 0, 0, 0]).kappa)
