import math
import warnings

import numpy as np
import pytest
from scipy import stats

from template_null import (DesignSpec, ModelParams, RunConfig, ValidationError, load_scenario, naive_slope,
                           parse_design, power_study, run_table, run_test_A, run_test_B, run_test_C, scenario,
                           simulate_outcomes, simulate_subject)
from template_null import _rng
from template_null.estimator import pair_coefficients
from template_null.simlab import DELTA_GRID, REFERENCE_TRUTH, SCENARIO_DESIGNS, empirical_fpr_A

FAST = RunConfig(draws_per_chain=1000, burn_in=500)


def _analytic_sd(design, truth=REFERENCE_TRUTH):
    c = pair_coefficients(design.weights)
    return math.sqrt(float(c @ c) * (truth.var_u + truth.var_eps / design.trials_per_condition))


def _analytic_fnr(design, delta, level):
    return float(stats.norm.sf(delta / _analytic_sd(design) + stats.norm.ppf(level)))


def test_noise_free_subject_is_a_line():
    truth = ModelParams(2.8, 1.4, 0.0, 0.0, 0.0)
    ds = simulate_subject(truth, DesignSpec((0.25, 0.5), 5), 1.4, np.random.default_rng(0))
    assert naive_slope(ds).value == pytest.approx(1.4, abs=1e-12)


def test_slope_spread_matches_closed_form():
    design = SCENARIO_DESIGNS["one"]
    y = simulate_outcomes(REFERENCE_TRUTH, design, 10_000, _rng.stream(3, 3))
    slopes = y.mean(axis=2) @ pair_coefficients(design.weights)
    expected = math.sqrt(2 * (REFERENCE_TRUTH.var_u + REFERENCE_TRUTH.var_eps / 5)) / 0.25
    assert expected == pytest.approx(_analytic_sd(design))
    assert slopes.std(ddof=1) == pytest.approx(expected, rel=0.03)


def test_overridden_slope_is_unbiased():
    design = SCENARIO_DESIGNS["two"]
    y = simulate_outcomes(REFERENCE_TRUTH, design, 20_000, _rng.stream(4, 4), beta=0.1)
    slopes = y.mean(axis=2) @ pair_coefficients(design.weights)
    assert abs(slopes.mean() - 0.1) < 3 * slopes.std() / math.sqrt(slopes.size)


def test_scenario_presets_and_validation(tmp_path):
    one = scenario("one")
    assert one.test_design == parse_design("250,500g x 5")
    assert scenario("two").test_design == parse_design("250,500,750g x 5")
    assert one.delta_grid == DELTA_GRID and one.delta_grid[-1] == 1.3
    with pytest.raises(ValidationError, match="unknown scenario"):
        scenario("three")
    with pytest.raises(ValidationError, match="null row"):
        scenario("one", delta_grid=(0.1, 0.2))
    with pytest.raises(ValidationError):
        scenario("one", replicates=0)
    p = tmp_path / "wide.scn"
    p.write_text("# wide design\ntest_design = 200,800g x 5\nsd_u = 0.15\ndelta_grid = 0:0.4:0.2\n"
                 "replicates = 30\nseed = 9\n", encoding="utf-8")
    s = load_scenario(p)
    assert s.name == "wide" and s.seed == 9 and s.replicates == 30
    assert s.delta_grid == (0.0, 0.2, 0.4)
    assert s.truth.var_u == pytest.approx(0.0225)
    assert load_scenario(p, seed=1).seed == 1
    p.write_text("test_design = 200,800g x 5\ncolour = red\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="unknown scenario keys"):
        load_scenario(p)


@pytest.mark.parametrize("name, delta, expected", [("one", 1.3, 0.461), ("two", 0.7, 0.391)])
def test_gold_standard_column(name, delta, expected):
    scn = scenario(name, replicates=4000, delta_grid=(0.0, delta), seed=1)
    col = run_test_A(scn)
    for level in scn.levels:
        assert col.rate[(0.0, level)] == level and col.se[(0.0, level)] == 0.0
    fnr = col.rate[(delta, 0.05)]
    se = col.se[(delta, 0.05)]
    assert abs(fnr - _analytic_fnr(scn.test_design, delta, 0.05)) < 4 * se + 0.01
    assert fnr == pytest.approx(expected, abs=0.05)
    emp = empirical_fpr_A(scn)
    assert emp[0.05] == pytest.approx(0.05, abs=0.015)


def test_overlap_and_direct_columns_small_scale():
    scn = scenario("one", replicates=300, delta_grid=(0.0, 0.1, 0.7, 1.3), seed=2, run=FAST)
    res = run_test_B(scn, n_templates=8)
    assert res.n_templates == 8 and res.n_flagged == 0 and len(res.templates) == 8
    for level in scn.levels:
        # the overlap column at zero shift is 1 - FNR(0), within 1/M of the level
        assert abs(res.Bstar.rate[(0.0, level)] - level) <= 1 / 3000 + 1e-12
        for d in scn.delta_grid:
            assert abs(res.B.rate[(d, level)] - res.Bstar.rate[(d, level)]) < 0.08
    assert res.Bstar.rate[(0.1, 0.05)] == pytest.approx(0.935, abs=0.04)


def test_worker_count_does_not_change_results(monkeypatch):
    import template_null.simlab as simlab
    monkeypatch.setattr(simlab, "_FIT_BATCH", 1)  # one work item per training set
    scn = scenario("two", replicates=50, delta_grid=(0.0, 0.5), seed=3,
                   run=RunConfig(draws_per_chain=300, burn_in=100, template_draws=1000))
    monkeypatch.setenv("TEMPLATE_NULL_THREADS", "1")
    one = run_test_B(scn, n_templates=3)
    monkeypatch.setenv("TEMPLATE_NULL_THREADS", "2")
    two = run_test_B(scn, n_templates=3)
    assert one.B.rate == two.B.rate and one.Bstar.rate == two.Bstar.rate
    for a, b in zip(one.templates, two.templates):
        assert np.array_equal(a.values, b.values)


def test_joint_test_small_scale():
    scn = scenario("two", replicates=24, delta_grid=(0.0, 1.3), seed=4, run=FAST)
    res = run_test_C(scn)
    assert res.n_flagged == 0
    null = res.prob[0.0]
    assert null.size == 24 and np.all((null >= 0) & (null <= 1))
    assert null.mean() == pytest.approx(0.5, abs=0.2)
    assert np.mean(res.prob[1.3]) < np.mean(null)
    assert res.C.rate[(1.3, 0.10)] <= 0.2


def test_table_layout():
    scn = scenario("one", replicates=40, delta_grid=(0.0, 0.5), seed=5, run=FAST)
    table = run_table(scn, n_templates=2, tests=("A", "B"))
    assert math.isnan(table.rate("test_C", 0.5, 0.05))
    text = table.to_csv(header_comment="hdr")
    lines = text.splitlines()
    assert lines[0] == "# hdr"
    assert lines[1] == ("scenario,level,delta_alt,test_A,test_B,test_Bstar,test_C,"
                        "se_A,se_B,se_Bstar,se_C")
    assert len(lines) == 2 + 4
    assert lines[2].startswith("one,0.05,0,0.05,")
    assert table.meta["n_templates"] == 2 and table.meta["flagged_templates"] == 0


def test_power_study_small():
    designs = [parse_design("200,400g x 5"), parse_design("200,800g x 5")]
    with pytest.warns(UserWarning, match="fewer than 10"):
        curves = power_study(designs, delta_grid=(0.0, 1.3), n_runs=3, seed=1, run=FAST)
    assert curves.power.shape == (2, 2)
    assert np.allclose(curves.power[:, 0], 0.10, atol=1 / 3000 + 1e-12)
    assert curves.curve("200,800g x 5")[1] > curves.curve("200,400g x 5")[1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        single = power_study(designs[:1], delta_grid=(0.0,), n_runs=1, seed=1, run=FAST)
    assert np.isnan(single.se).all()
    assert single.to_csv().splitlines()[1] == '"200,400g x 5",0,0.0996667,'
    with pytest.raises(ValidationError):
        power_study([], n_runs=1)


def test_table_shape_properties():
    tabs = {n: run_table(scenario(n, replicates=500, seed=6, run=FAST), n_templates=10, tests=("A", "B"))
            for n in ("one", "two")}
    for tab in tabs.values():
        for test in ("test_A", "test_B", "test_Bstar"):
            for lv in tab.levels:
                f = [tab.rate(test, d, lv) for d in tab.delta_grid[1:]]
                s = [tab.se(test, d, lv) for d in tab.delta_grid[1:]]
                assert all(b <= a + 2 * max(sa, sb) + 1e-12 for a, b, sa, sb in zip(f, f[1:], s, s[1:]))
            assert tab.rate(test, 0.7, 0.10) <= tab.rate(test, 0.7, 0.05) + 2 * tab.se(test, 0.7, 0.05)
        assert tab.se("test_A", 0.5, 0.05) == pytest.approx(
            math.sqrt(tab.rate("test_A", 0.5, 0.05) * (1 - tab.rate("test_A", 0.5, 0.05)) / 500))
    for lv in (0.05, 0.10):
        for d in DELTA_GRID[1:]:
            assert tabs["two"].rate("test_Bstar", d, lv) <= tabs["one"].rate("test_Bstar", d, lv) + 0.02
