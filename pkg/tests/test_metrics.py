import itertools

import numpy as np
import pytest
from scipy.stats.contingency import association

from fairsynth.metrics import (
    FairnessReport,
    FidelityReport,
    UndefinedMetricError,
    average_odds_difference,
    bootstrap_fairness,
    contingency_similarity,
    cramers_v,
    cramers_v_matrix,
    dcc_matrix,
    discriminator_measure,
    disparate_impact,
    equal_opportunity_difference,
    fairness_metric,
    fidelity_report,
    kl_protected_outcome,
    table_fairness,
    to_json,
    tvd_complement,
)
from fairsynth.schema import DataTable

from conftest import make_schema, random_table


def table(schema, attrs, rows):
    return DataTable(schema, attrs, np.asarray(rows, dtype=np.int64).reshape(-1, len(attrs)))


# -- fidelity -----------------------------------------------------------------

def test_tvd_complement_hand_value():
    schema = make_schema([3])
    real = table(schema, ["x1"], [0] * 5 + [1] * 3 + [2] * 2)
    synth = table(schema, ["x1"], [0] * 4 + [1] * 4 + [2] * 2)
    # |0.5-0.4| + |0.3-0.4| + 0 = 0.2, halved
    assert tvd_complement(real, synth, "x1") == pytest.approx(0.9, abs=1e-12)
    assert tvd_complement(real, real, "x1") == 1.0
    disjoint = table(schema, ["x1"], [2] * 10)
    assert tvd_complement(table(schema, ["x1"], [0, 1] * 5), disjoint, "x1") == 0.0


def test_contingency_similarity_hand_value():
    schema = make_schema([2, 2])
    real = table(schema, ["x1", "x2"], [[0, 0]] * 5 + [[1, 1]] * 5)
    synth = table(schema, ["x1", "x2"], [[0, 0]] * 3 + [[0, 1]] * 2 + [[1, 1]] * 5)
    # cells (0.5, 0, 0, 0.5) vs (0.3, 0.2, 0, 0.5)
    assert contingency_similarity(real, synth, "x1", "x2") == pytest.approx(0.8, abs=1e-12)


def test_cramers_v_against_scipy():
    rng = np.random.default_rng(0)
    schema = make_schema([3, 4, 2, 5])
    for _ in range(10):
        t = random_table(schema, schema.names, 400, rng, concentration=0.5)
        for a, b in itertools.combinations(schema.names, 2):
            obs = np.zeros((schema[a].cardinality, schema[b].cardinality), dtype=int)
            np.add.at(obs, (t.column(a), t.column(b)), 1)
            obs = obs[obs.sum(1) > 0][:, obs.sum(0) > 0]
            ref = association(obs, method="cramer", correction=False)
            assert cramers_v(t, a, b) == pytest.approx(ref, abs=1e-12)


def test_cramers_v_edge_cases():
    rng = np.random.default_rng(1)
    schema = make_schema([4, 4, 3])
    x = rng.integers(0, 4, 50_000)
    t = table(schema, ["x1", "x2", "x3"], np.c_[x, x, np.zeros_like(x)])
    assert cramers_v(t, "x1", "x2") == pytest.approx(1.0, abs=1e-12)
    assert cramers_v(t, "x1", "x3") == 0.0
    indep = table(schema, ["x1", "x2"], np.c_[x, rng.integers(0, 4, 50_000)])
    assert cramers_v(indep, "x1", "x2") < 0.02


def test_dcc_matrix():
    rng = np.random.default_rng(2)
    schema = make_schema([3, 3, 2])
    real = random_table(schema, schema.names, 20_000, rng, concentration=0.3)
    # an independent draw from the real marginals
    synth = table(schema, schema.names,
                  np.c_[[rng.permutation(real.column(a)) for a in schema.names]].T)
    d = np.asarray(dcc_matrix(real, synth))
    assert np.allclose(d, d.T) and np.all(np.diag(d) == 0)
    np.testing.assert_allclose(d, -cramers_v_matrix(real), atol=0.03)
    assert np.all(dcc_matrix(real, real) == 0)


def test_discriminator_on_copy_is_at_chance():
    rng = np.random.default_rng(3)
    schema = make_schema([3, 3, 4, 2])
    full = random_table(schema, schema.names, 8000, rng, concentration=0.5)
    real = full.take(np.arange(4000))
    synth = full.take(np.arange(4000, 8000))
    mean, std, scores = discriminator_measure(real, synth, n_seeds=3, n_trees=20)
    assert len(scores) == 3 and std >= 0
    assert abs(mean - 0.5) < 0.05


def test_discriminator_spots_a_constant_attribute():
    rng = np.random.default_rng(4)
    schema = make_schema([10, 3])
    real = table(schema, ["x1", "x2"], np.c_[rng.integers(0, 10, 3000), rng.integers(0, 3, 3000)])
    synth = table(schema, ["x1", "x2"], np.c_[np.zeros(3000, int), rng.integers(0, 3, 3000)])
    mean, _, _ = discriminator_measure(real, synth, n_seeds=2, n_trees=10)
    assert mean > 0.9


def test_kl_hand_value_and_asymmetry():
    schema = make_schema([2, 2], names=["a", "y"])
    real = table(schema, ["a", "y"], [[0, 0]] * 4 + [[0, 1]] * 2 + [[1, 0]] * 1 + [[1, 1]] * 3)
    synth = table(schema, ["a", "y"], [[0, 0]] * 1 + [[0, 1]] * 1 + [[1, 0]] * 4 + [[1, 1]] * 4)
    pr = (np.array([4, 2, 1, 3]) + 0.5) / 12
    ps = (np.array([1, 1, 4, 4]) + 0.5) / 12
    expected = float(np.sum(ps * np.log(ps / pr)))
    assert kl_protected_outcome(real, synth, "a", "y") == pytest.approx(expected, abs=1e-12)
    reverse = float(np.sum(pr * np.log(pr / ps)))
    assert kl_protected_outcome(synth, real, "a", "y") == pytest.approx(reverse, abs=1e-12)
    assert expected != pytest.approx(reverse)
    assert kl_protected_outcome(real, real, "a", "y") == 0.0


def test_fidelity_report_round_trip():
    rng = np.random.default_rng(5)
    schema = make_schema([2, 3, 2], names=["y", "x", "a"], label="y", protected=("a",))
    real = random_table(schema, schema.names, 500, rng)
    synth = random_table(schema, schema.names, 500, rng)
    rep = fidelity_report(real, synth, protected=("a",), label="y",
                          discriminator={"n_seeds": 2, "n_trees": 5})
    assert set(rep.cs) == {"y|x", "y|a", "x|a"} and set(rep.kl) == {"a"}
    again = FidelityReport.from_dict(rep.to_dict())
    assert again == rep
    assert to_json(again.to_dict()) == to_json(rep.to_dict())


# -- fairness -----------------------------------------------------------------

def hand_data():
    # unprivileged (group 0): 10 positives with 8 predicted positive, 10
    # negatives with 3 predicted positive; privileged: 5 of 10 and 1 of 10
    rows = []
    for g, tp, fp in ((0, 8, 3), (1, 5, 1)):
        rows += [(g, 1, 1)] * tp + [(g, 1, 0)] * (10 - tp)
        rows += [(g, 0, 1)] * fp + [(g, 0, 0)] * (10 - fp)
    g, yt, yp = np.array(rows).T
    return yt, yp, g


def test_fairness_hand_values():
    yt, yp, g = hand_data()
    assert equal_opportunity_difference(yt, yp, g) == pytest.approx(0.8 - 0.5)
    assert average_odds_difference(yt, yp, g) == pytest.approx(0.5 * ((0.3 - 0.1) + 0.3))
    assert disparate_impact(yp, g) == pytest.approx((11 / 20) / (6 / 20))
    assert fairness_metric("EOD", yt, yp, g) == equal_opportunity_difference(yt, yp, g)
    with pytest.raises(ValueError):
        fairness_metric("SPD", yt, yp, g)


def test_di_of_half_rate():
    g = np.array([0] * 4 + [1] * 4)
    yp = np.array([1, 0, 0, 0, 1, 1, 0, 0])
    assert disparate_impact(yp, g) == 0.5


def test_undefined_metrics_raise():
    g = np.array([0, 0, 1, 1])
    with pytest.raises(UndefinedMetricError):
        disparate_impact(np.array([1, 1, 0, 0]), g)
    with pytest.raises(UndefinedMetricError):
        equal_opportunity_difference(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 0]), g)


def _oracle(yt, yp, g):
    def rate(mask, cond):
        den = sum(mask)
        return None if den == 0 else sum(m and c for m, c in zip(mask, cond)) / den

    out = {}
    tpr, fpr, ppr = {}, {}, {}
    for grp in (0, 1):
        tpr[grp] = rate([gi == grp and t == 1 for gi, t in zip(g, yt)], [p == 1 for p in yp])
        fpr[grp] = rate([gi == grp and t == 0 for gi, t in zip(g, yt)], [p == 1 for p in yp])
        ppr[grp] = rate([gi == grp for gi in g], [p == 1 for p in yp])
    out["EOD"] = None if None in (tpr[0], tpr[1]) else tpr[0] - tpr[1]
    out["AOD"] = (None if None in (tpr[0], tpr[1], fpr[0], fpr[1])
                  else 0.5 * ((fpr[0] - fpr[1]) + (tpr[0] - tpr[1])))
    out["DI"] = None if None in (ppr[0], ppr[1]) or ppr[1] == 0 else ppr[0] / ppr[1]
    return out


def test_metrics_against_row_loop_oracle():
    rng = np.random.default_rng(6)
    for _ in range(1500):
        yt, yp, g = rng.integers(0, 2, size=(3, 8))
        expected = _oracle(yt.tolist(), yp.tolist(), g.tolist())
        for m, v in expected.items():
            if v is None:
                with pytest.raises(UndefinedMetricError):
                    fairness_metric(m, yt, yp, g)
            else:
                assert fairness_metric(m, yt, yp, g) == pytest.approx(v, abs=1e-12)


def test_swapping_groups_negates_differences():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        yt, yp, g = rng.integers(0, 2, size=(3, 40))
        try:
            eod = equal_opportunity_difference(yt, yp, g)
            aod = average_odds_difference(yt, yp, g)
        except UndefinedMetricError:
            continue
        assert equal_opportunity_difference(yt, yp, g, privileged=0) == pytest.approx(-eod)
        assert average_odds_difference(yt, yp, g, privileged=0) == pytest.approx(-aod)


def test_aod_is_half_eod_when_fprs_match():
    # same false positive rate (1/4) in both groups
    g = np.array([0] * 8 + [1] * 8)
    yt = np.array([1, 1, 1, 1, 0, 0, 0, 0] * 2)
    yp = np.array([1, 1, 1, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0])
    eod = equal_opportunity_difference(yt, yp, g)
    assert eod == pytest.approx(0.5)
    assert average_odds_difference(yt, yp, g) == pytest.approx(eod / 2)


def test_bootstrap_constant_di():
    g = np.array([0, 1] * 50)
    rep = bootstrap_fairness(np.ones(100), np.ones(100), {"a": g}, {"a": 1}, n_boot=200)
    s = rep.metrics["a"]["DI"]
    assert s.point == 1.0 and s.mean == 1.0 and s.std == 0.0 and s.n_skipped == 0


def test_bootstrap_std_halves_with_four_times_the_rows():
    rng = np.random.default_rng(8)
    yt, yp, g = rng.integers(0, 2, size=(3, 400))
    small = bootstrap_fairness(yt, yp, {"a": g}, {"a": 1}, n_boot=2000, seed=1)
    big = bootstrap_fairness(np.tile(yt, 4), np.tile(yp, 4), {"a": np.tile(g, 4)}, {"a": 1},
                             n_boot=2000, seed=1)
    for m in ("EOD", "DI", "AOD"):
        ratio = big.metrics["a"][m].std / small.metrics["a"][m].std
        assert abs(ratio - 0.5) < 0.15, m
        assert big.metrics["a"][m].point == pytest.approx(small.metrics["a"][m].point)


def test_bootstrap_skip_count_matches_probability():
    # one unprivileged positive among n rows: EOD is undefined whenever it is
    # not resampled, which happens with probability (1 - 1/n)^n
    n = 10
    g = np.array([0] + [1] * (n - 1))
    yt = np.array([1] + [1, 0] * 4 + [1])
    yp = np.array([1] * n)
    rep = bootstrap_fairness(yt, yp, {"a": g}, {"a": 1}, n_boot=4000, seed=2)
    s = rep.metrics["a"]["EOD"]
    assert s.n_valid + s.n_skipped == 4000
    assert abs(s.n_skipped / 4000 - (1 - 1 / n) ** n) < 0.03


def test_bootstrap_all_replicates_undefined():
    g = np.array([0, 0, 1, 1])
    rep = bootstrap_fairness(np.zeros(4), np.zeros(4), {"a": g}, {"a": 1}, n_boot=50)
    s = rep.metrics["a"]["EOD"]
    assert s.point is None and s.mean is None and s.n_skipped == 50
    assert all(v is None for v in s.percentiles.values())


def test_multinomial_bootstrap_matches_row_resampling():
    rng = np.random.default_rng(9)
    n = 300
    g = (rng.random(n) < 0.4).astype(int)
    yt = (rng.random(n) < 0.3 + 0.2 * g).astype(int)
    yp = np.where(rng.random(n) < 0.8, yt, 1 - yt)
    rep = bootstrap_fairness(yt, yp, {"a": g}, {"a": 1}, n_boot=4000, seed=3)
    explicit = {m: [] for m in ("EOD", "DI", "AOD")}
    boot_rng = np.random.default_rng(4)
    for _ in range(4000):
        idx = boot_rng.integers(0, n, n)
        for m in explicit:
            explicit[m].append(fairness_metric(m, yt[idx], yp[idx], g[idx]))
    for m, vals in explicit.items():
        s = rep.metrics["a"][m]
        assert s.mean == pytest.approx(np.mean(vals), abs=0.1 * np.std(vals))
        assert s.std == pytest.approx(np.std(vals), rel=0.08)
        assert s.point == pytest.approx(fairness_metric(m, yt, yp, g))


def test_bootstrap_multiple_attributes_marginalise():
    rng = np.random.default_rng(10)
    yt, yp, g1, g2 = rng.integers(0, 2, size=(4, 500))
    both = bootstrap_fairness(yt, yp, {"a": g1, "b": g2}, {"a": 1, "b": 0}, n_boot=10)
    for attr, grp, priv in (("a", g1, 1), ("b", g2, 0)):
        for m in ("EOD", "DI", "AOD"):
            assert both.metrics[attr][m].point == pytest.approx(
                fairness_metric(m, yt, yp, grp, privileged=priv))


def test_percentiles_are_ordered_and_report_round_trips():
    rng = np.random.default_rng(11)
    yt, yp, g = rng.integers(0, 2, size=(3, 200))
    rep = bootstrap_fairness(yt, yp, {"a": g}, {"a": 1}, n_boot=500, seed=5)
    for _, _, s in rep.rows():
        p = [s.percentiles[k] for k in ("p2.5", "p25", "p50", "p75", "p97.5")]
        assert p == sorted(p)
    assert FairnessReport.from_dict(rep.to_dict()) == rep
    again = bootstrap_fairness(yt, yp, {"a": g}, {"a": 1}, n_boot=500, seed=5)
    assert to_json(again.to_dict()) == to_json(rep.to_dict())


def test_table_fairness_uses_labels():
    schema = make_schema([2, 2], names=["y", "a"], label="y", protected=("a",))
    yt, yp, g = hand_data()
    t = table(schema, ["y", "a"], np.c_[yt, g])
    # favourable label v1, privileged label v1 reproduce the index convention
    rep = table_fairness(t, yp, "y", {"a": "v1"}, "v1", n_boot=10)
    assert rep.metrics["a"]["EOD"].point == pytest.approx(0.3)
    # flipping the privileged label flips the sign
    rep0 = table_fairness(t, yp, "y", {"a": "v0"}, "v1", n_boot=10)
    assert rep0.metrics["a"]["EOD"].point == pytest.approx(-0.3)
