import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from microsys.corpus import Document, SentenceGraph, Token
from microsys.microsystems import Occurrence
from microsys.model import PredictedDistribution
from microsys.stats import (FOOTNOTE, UNKNOWN_TOPIC, CollinearityError, StatsError, TextProfile,
                            aggregate_text_median, cohen_kappa, fit_ordinal, fit_ordinal_arrays, fleiss_kappa,
                            kruskal_by_level, kruskal_wallis, normalized_form_frequency, odds_ratio_report,
                            ordinal_loglik, permutation_test_kappa, pseudo_r2, ratings_to_table,
                            refit_with_confounder, wald_row, write_frequencies, write_profiles, write_table8)
from oracles import central_gradient, naive_cohen, naive_fleiss, naive_kruskal, ordinal_nll_direct

LEVELS = ("A1", "A2", "B1", "B2", "C1")


# ------------------------------------------------------------ aggregation

def _pred(wid, probs, cefr="B1", classes=("it", "this", "that")):
    o = Occurrence("PRF", classes[0], wid, cefr, "fr", "1", 1, 1)
    return PredictedDistribution(o, np.asarray(probs, dtype=float), classes)


def test_median_single_odd_even():
    profs = aggregate_text_median({"PRF": [
        _pred("a", (0.2, 0.3, 0.5)),
        _pred("b", (0.1, 0.0, 0.9)), _pred("b", (0.4, 0.3, 0.3)), _pred("b", (0.9, 0.1, 0.0)),
        _pred("c", (0.2, 0.8, 0.0)), _pred("c", (0.4, 0.6, 0.0)),
    ]})
    by = {p.writing_id: p for p in profs}
    assert [by["a"].value(f"PRF:{f}") for f in ("it", "this", "that")] == pytest.approx([20, 30, 50])
    assert by["b"].value("PRF:it") == pytest.approx(40)
    assert by["c"].value("PRF:it") == pytest.approx(30)
    assert by["b"].counts["PRF"] == 3


def test_text_without_occurrences_is_missing():
    doc = Document("z", "A2", "cn", "4", [])
    profs = aggregate_text_median({"PRF": [_pred("a", (1, 0, 0))]}, docs=[doc])
    z = [p for p in profs if p.writing_id == "z"][0]
    assert math.isnan(z.value("PRF:it")) and z.counts["PRF"] == 0
    assert "z,A2,cn,PRF,it,NA,0" in write_profiles(profs)


# ------------------------------------------------------------ ordinal regression

def _simulate(beta, n, seed, alpha=(-1.0, 0.5, 2.0, 3.5)):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 100, size=(n, len(beta)))
    eta = x @ np.asarray(beta) - 2.5
    cum = expit(np.asarray(alpha)[None, :] - eta[:, None])
    u = rng.random(n)
    y = (u[:, None] > cum).sum(axis=1)
    return x, [LEVELS[i] for i in y]


def test_ordinal_score_matches_direct_likelihood():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 2))
    y = rng.integers(0, 4, size=60)
    for _ in range(5):
        alpha = np.sort(rng.normal(size=3)) * 2
        beta = rng.normal(size=2)
        theta = np.concatenate([alpha, beta])
        ll, g, H = ordinal_loglik(theta, X, y, 4)
        assert ll == pytest.approx(-60 * ordinal_nll_direct(alpha, beta, X, y), rel=1e-10)
        fd = central_gradient(lambda t: -60 * ordinal_nll_direct(t[:3], t[3:], X, y), theta)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-4
        fdH = central_gradient(lambda t: ordinal_loglik(t, X, y, 4)[1][0], theta)
        assert np.max(np.abs(H[0] - fdH)) / np.max(np.abs(fdH)) < 1e-4


def test_ordinal_recovers_generating_slope():
    x, y = _simulate([0.05], 3000, seed=1)
    m = fit_ordinal_arrays(x, y, ["x"])
    r = odds_ratio_report(m).row("x")
    assert m.converged
    assert r.lower <= math.exp(0.05) <= r.upper
    assert np.all(np.diff(m.thresholds) > 0)


def test_ordinal_null_case():
    x, y = _simulate([0.05], 2000, seed=2)
    y = list(np.random.default_rng(3).permutation(y))
    r = odds_ratio_report(fit_ordinal_arrays(x, y, ["x"])).row("x")
    assert r.odds_ratio == pytest.approx(1.0, abs=0.01)
    assert r.p_value > 0.05


def test_ordinal_probabilities_are_ordered_simplices():
    x, y = _simulate([0.03, -0.02], 800, seed=4)
    m = fit_ordinal_arrays(x, y, ["a", "b"])
    grid = np.random.default_rng(5).uniform(-50, 150, size=(100, 2))
    assert np.all(np.diff(m.cumulative(grid), axis=1) > 0)
    assert np.max(np.abs(m.probabilities(grid).sum(axis=1) - 1)) < 1e-10


def test_ordinal_only_uses_levels_present():
    x, y = _simulate([0.05], 500, seed=6)
    y = ["B1" if v == "C1" else v for v in y]
    m = fit_ordinal_arrays(x, y, ["x"])
    assert "C1" not in m.levels and len(m.thresholds) == len(m.levels) - 1


def test_ordinal_errors():
    with pytest.raises(StatsError):
        fit_ordinal_arrays(np.ones((5, 1)), ["A1"] * 5, ["x"])
    x = np.random.default_rng(0).normal(size=(50, 1))
    with pytest.raises(CollinearityError, match="b"):
        fit_ordinal_arrays(np.hstack([x, 2 * x]), list(np.resize(LEVELS, 50)), ["a", "b"])


def test_wald_arithmetic():
    r = wald_row("x", math.log(2), 0.1)
    assert r.odds_ratio == pytest.approx(2.0)
    assert (r.lower, r.upper) == pytest.approx((2 * math.exp(-0.1959964), 2 * math.exp(0.1959964)))
    z = wald_row("z", 0.0, 0.3)
    assert z.odds_ratio == 1.0 and math.log(z.lower) == pytest.approx(-math.log(z.upper))
    assert not z.significant


def _profiles(x, y, nat):
    return [TextProfile(str(i), c, n, None, {"PRF": {"it": float(v)}}) for i, (v, c, n) in enumerate(zip(x, y, nat))]


def test_fit_ordinal_drops_missing_rows():
    x, y = _simulate([0.04], 300, seed=7)
    xs = x[:, 0].copy()
    xs[:10] = np.nan
    m = fit_ordinal(_profiles(xs, y, ["fr"] * 300), ["PRF:it"])
    assert m.n == 290 and m.n_dropped == 10


def test_confounder_unrelated_leaves_ors():
    x, y = _simulate([0.04], 2000, seed=8)
    nat = np.random.default_rng(9).choice(["br", "cn", "fr"], size=2000)
    cmp = refit_with_confounder(_profiles(x[:, 0], y, nat), ["PRF:it"])
    a, b = cmp.without.row("PRF:it"), cmp.with_confounder.row("PRF:it")
    assert abs(a.odds_ratio - b.odds_ratio) < 1e-3
    assert cmp.flagged == ()


def test_confounder_collinear_raises():
    x, y = _simulate([0.04], 200, seed=10)
    nat = ["cn" if v > 50 else "fr" for v in x[:, 0]]
    xs = [100.0 if n == "cn" else 0.0 for n in nat]
    with pytest.raises(CollinearityError):
        refit_with_confounder(_profiles(xs, y, nat), ["PRF:it"])


def test_table8_layout():
    x, y = _simulate([0.04], 500, seed=11)
    rep = odds_ratio_report(fit_ordinal(_profiles(x[:, 0], y, ["fr"] * 500), ["PRF:it"]))
    rows = list(csv.reader(io.StringIO(write_table8({"EFCAMDAT": rep, "CELVA.Sp": rep}))))
    assert rows[0] == ["Microsystems", "Components", "EFCAMDAT", "", "CELVA.Sp", ""]
    assert rows[1] == ["", "", "Odds ratio", "95% CI", "Odds ratio", "95% CI"]
    assert rows[2][:2] == ["MS PRF", "IT"]
    assert rows[2][2].endswith("*") and rows[2][3].count(",") == 1
    assert rows[-1] == [FOOTNOTE] and FOOTNOTE == "* p-value <.05."


# ------------------------------------------------------------ Kruskal-Wallis

def test_kruskal_hand_value():
    r = kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    assert abs(r.H - 7.2) < 1e-9 and r.df == 2
    assert r.p == pytest.approx(math.exp(-3.6))


def test_kruskal_degenerate():
    assert kruskal_wallis([[1, 2, 3], [1, 2, 3]]).H == pytest.approx(0.0, abs=1e-12)
    r = kruskal_wallis([[5, 5], [5, 5]])
    assert (r.H, r.p) == (0.0, 1.0)
    with pytest.raises(StatsError):
        kruskal_wallis([[1], [2]])
    with pytest.raises(StatsError):
        kruskal_wallis([[1, 2], []])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.integers(0, 6), min_size=1, max_size=8), min_size=2, max_size=4))
def test_kruskal_matches_oracle_and_is_rank_invariant(groups):
    if len({v for g in groups for v in g}) < 2 or sum(map(len, groups)) < 3:
        return
    r = kruskal_wallis(groups)
    assert r.H == pytest.approx(naive_kruskal(groups), abs=1e-9)
    assert kruskal_wallis([np.exp(g) for g in groups]).H == pytest.approx(r.H, abs=1e-9)


def test_kruskal_by_level_skips_missing():
    profs = [TextProfile(str(i), lv, "", None, {"PRF": {"it": v}})
             for i, (lv, v) in enumerate([("A1", 1), ("A1", 2), ("B1", 5), ("B1", math.nan), ("C1", 9)])]
    r = kruskal_by_level(profs, "PRF:it")
    assert r.n == 4 and r.df == 2


# ------------------------------------------------------------ agreement

def test_cohen_hand_example():
    r = cohen_kappa([1, 1, 0, 0], [1, 0, 0, 0])
    assert abs(r.kappa - 0.5) < 1e-12
    assert cohen_kappa(list("abca"), list("abca")).kappa == 1.0
    with pytest.raises(StatsError):
        cohen_kappa([1, 2], [1])
    with pytest.raises(StatsError):
        cohen_kappa(["a", "a"], ["a", "a"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("xyz"), st.sampled_from("xyz")), min_size=2, max_size=40))
def test_cohen_matches_oracle_and_relabelling(pairs):
    a, b = [p[0] for p in pairs], [p[1] for p in pairs]
    if len(set(a) | set(b)) < 2:
        return
    try:
        ref = naive_cohen(a, b)
    except ZeroDivisionError:
        return
    r = cohen_kappa(a, b)
    assert r.kappa == pytest.approx(ref, abs=1e-12)
    rename = {"x": "q", "y": "x", "z": "y"}
    assert cohen_kappa([rename[v] for v in a], [rename[v] for v in b]).kappa == pytest.approx(r.kappa, abs=1e-12)
    assert -1 <= r.kappa <= 1


def test_fleiss_perfect_agreement_relativizers():
    t = np.zeros((165, 4), dtype=int)
    t[np.arange(165), np.repeat([0, 1, 2, 3], [42, 41, 41, 41])] = 2
    r = fleiss_kappa(t)
    assert r.kappa == 1.0
    assert (r.n_items, round(r.z), f"{r.p:.3f}") == (165, 22, "0.000")


def test_fleiss_full_disagreement_is_negative():
    assert fleiss_kappa([[1, 1], [1, 1]]).kappa == pytest.approx(-1.0)


def test_fleiss_null_simulation():
    rng = np.random.default_rng(0)
    ratings = rng.integers(0, 3, size=(10000, 3))
    t, _ = ratings_to_table(ratings.tolist())
    assert abs(fleiss_kappa(t).kappa) < 0.05


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_fleiss_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n, k, N = int(rng.integers(2, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 30))
    t = np.stack([rng.multinomial(n, rng.dirichlet(np.ones(k))) for _ in range(N)])
    if np.count_nonzero(t.sum(axis=0)) < 2:
        return
    r = fleiss_kappa(t)
    assert r.kappa == pytest.approx(naive_fleiss(t.tolist()), abs=1e-12)
    assert fleiss_kappa(t[:, ::-1]).kappa == pytest.approx(r.kappa, abs=1e-12)


def test_fleiss_errors():
    with pytest.raises(StatsError):
        fleiss_kappa([[2, 0], [1, 0]])
    with pytest.raises(StatsError):
        fleiss_kappa([[2, 0], [2, 0]])


def _sample(rng, n, perfect):
    if perfect:
        return [[v] * 4 for v in rng.integers(0, 5, size=n)]
    return rng.integers(0, 5, size=(n, 4)).tolist()


def test_permutation_same_sample():
    s = _sample(np.random.default_rng(0), 30, False)
    out = permutation_test_kappa(s, [list(r) for r in s], n_perm=500)
    assert len(out) == 6
    assert all(p > 0.9 for _, p in out.values())


def test_permutation_large_gap():
    rng = np.random.default_rng(1)
    out = permutation_test_kappa(_sample(rng, 30, True), _sample(rng, 30, False), n_perm=1000)
    assert all(p < 0.01 for _, p in out.values())


def test_permutation_seed_stability_and_warning():
    rng = np.random.default_rng(2)
    s1 = [[v, v, v if rng.random() < .7 else (v + 1) % 5, v] for v in rng.integers(0, 5, size=30)]
    s2 = _sample(rng, 30, False)
    n = 2000
    a = permutation_test_kappa(s1, s2, n_perm=n, seed=0)
    b = permutation_test_kappa(s1, s2, n_perm=n, seed=1)
    assert a == permutation_test_kappa(s1, s2, n_perm=n, seed=0)
    for key in a:
        assert abs(a[key][1] - b[key][1]) <= 2 / math.sqrt(n)
    with pytest.warns(UserWarning):
        permutation_test_kappa(s1, s2, n_perm=50)


# ------------------------------------------------------------ fit measures, frequencies

def test_pseudo_r2():
    assert pseudo_r2(-50.0, -50.0) == 0.0
    assert pseudo_r2(0.0, -50.0) == 1.0
    assert pseudo_r2(-40.0, -50.0) == pytest.approx(0.2)
    with pytest.raises(StatsError):
        pseudo_r2(-1.0, 0.0)


def _doc(wid, cefr, n_tokens, topic="2"):
    toks = [Token(1, "w", "w", "VERB", "VB", {}, 0, "root")]
    toks += [Token(i, "w", "w", "NOUN", "NN", {}, 1, "obj") for i in range(2, n_tokens + 1)]
    return Document(wid, cefr, "fr", topic, [SentenceGraph(toks)])


def test_normalised_frequency():
    docs = [_doc("a", "A1", 100), _doc("b", "B1", 50, topic=None)]
    occ = [Occurrence("PRF", "that", "a", "A1", "fr", "2", 1, 3)]
    rows = normalized_form_frequency(docs, occ, ("it", "that"))
    got = {(r.topic, r.cefr, r.form): r for r in rows}
    assert got[("2", "A1", "that")].freq == pytest.approx(10.0)
    assert not got[("2", "A1", "that")].outlier
    assert got[("2", "A1", "it")].freq == 0.0
    assert got[(UNKNOWN_TOPIC, "B1", "it")].tokens == 50
    occ.append(Occurrence("PRF", "that", "a", "A1", "fr", "2", 1, 4))
    assert normalized_form_frequency(docs, occ, ("that",))[0].outlier
    assert write_frequencies(rows).splitlines()[0] == \
        "topic,cefr,writing_id,form,count,tokens,freq_per_1000,outlier"
