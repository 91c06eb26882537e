import json
import math

import numpy as np
import pytest
from scipy import stats

from template_null import (DesignSpec, ModelParams, RunConfig, ValidationError, build_template, critical_value,
                           draw_pseudo_subject, draw_pseudo_subjects, load_template, parse_design,
                           save_template, shift_template)
from template_null.gibbs import PosteriorDraws
from template_null.simlab import REFERENCE_TRUTH
from template_null.template import TemplateDistribution
from template_null import PriorConfig


def _point_posterior(theta, n=1000, chains=2):
    trace = np.tile(np.array([theta.a, theta.beta_pop, theta.var_alpha, theta.var_u, theta.var_eps]),
                    (chains, n, 1))
    return PosteriorDraws(trace, {k: 1.0 for k in ("a", "beta_pop", "var_alpha", "var_u", "var_eps")},
                          0, RunConfig(), PriorConfig())


def _plain(values, design=DesignSpec((0.25, 0.5), 5)):
    return TemplateDistribution(np.asarray(values, dtype=float), design, 1.4)


def test_zero_variance_gives_the_mean_line():
    design = DesignSpec((0.25, 0.5, 0.75), 3)
    y = draw_pseudo_subject(ModelParams(2.8, 1.4, 0, 0, 0), design, np.random.default_rng(0))
    expected = 2.8 + 1.4 * design.weights_array
    assert np.array_equal(y, np.repeat(expected[:, None], 3, axis=1))


def test_pseudo_subject_covariance():
    design = DesignSpec((0.25, 0.5), 2)
    m = 50_000
    t = REFERENCE_TRUTH
    y = draw_pseudo_subjects(*(np.full(m, v) for v in (t.a, t.beta_pop, t.var_alpha, t.var_u, t.var_eps)),
                             design, np.random.default_rng(12))
    flat = y.reshape(m, 4)  # (w1 t1, w1 t2, w2 t1, w2 t2)
    cov = np.cov(flat, rowvar=False)
    assert np.allclose(np.diag(cov), 0.14, atol=0.005)
    assert cov[0, 1] == pytest.approx(0.10, abs=0.005)
    assert cov[2, 3] == pytest.approx(0.10, abs=0.005)
    for i, j in ((0, 2), (0, 3), (1, 2), (1, 3)):
        assert cov[i, j] == pytest.approx(0.09, abs=0.005)
    # distinct pseudo-subjects are independent
    cross = np.cov(flat[0::2, 0], flat[1::2, 2])[0, 1]
    assert abs(cross) < 0.005
    assert flat.mean(axis=0) == pytest.approx([3.15, 3.15, 3.5, 3.5], abs=0.01)


def test_point_posterior_without_variance_is_constant():
    post = _point_posterior(ModelParams(2.8, 1.4, 0.0, 0.0, 0.0))
    t = build_template(post, DesignSpec((0.25, 0.5), 5), M=1000, seed=1)
    assert np.allclose(t.values, 1.4, rtol=0, atol=1e-12)
    assert t.benchmark_slope == pytest.approx(1.4, abs=1e-12)


def test_point_posterior_at_truth_reproduces_sampling_distribution():
    design = DesignSpec((0.25, 0.5), 5)
    t = build_template(_point_posterior(REFERENCE_TRUTH), design, M=3000, seed=2)
    sd = math.sqrt(2 * (REFERENCE_TRUTH.var_u + REFERENCE_TRUTH.var_eps / 5)) / 0.25
    assert stats.kstest(t.values, stats.norm(1.4, sd).cdf).statistic < 0.03


def test_template_from_training_posterior(healthy_post, scenario_one):
    t = build_template(healthy_post, scenario_one, seed=3)
    assert t.M == 3000 and t.is_null
    assert t.benchmark_slope == pytest.approx(healthy_post.beta_pop.mean())
    assert t.values.mean() == pytest.approx(1.4, abs=0.15)
    q05_a = 1.4 + stats.norm.ppf(0.05) * math.sqrt(2 * (0.01 + 0.04 / 5)) / 0.25
    assert critical_value(t, 0.05) == pytest.approx(q05_a, abs=0.2)
    assert not t.values.flags.writeable
    assert np.array_equal(t.sorted_values, np.sort(t.values))
    prov = t.provenance
    assert prov["posterior_draws"] == 3000 and prov["recycled"] is False and prov["converged"] is True


def test_recycling_and_small_templates(healthy_post, scenario_one):
    t = build_template(healthy_post, scenario_one, M=4500, seed=3)
    assert t.provenance["recycled"] is True
    assert np.all(np.isfinite(t.values))
    with pytest.warns(UserWarning, match="at least 1000"):
        build_template(healthy_post, scenario_one, M=200, seed=3)
    with pytest.raises(ValidationError):
        build_template(healthy_post, scenario_one, M=0)


def test_template_seeding(healthy_post, scenario_one):
    a = build_template(healthy_post, scenario_one, M=1000, seed=5)
    b = build_template(healthy_post, scenario_one, M=3000, seed=5)
    assert np.array_equal(a.values, b.values[:1000])
    c = build_template(healthy_post, scenario_one, M=1000, seed=6)
    assert not np.array_equal(a.values, c.values)


def test_median_benchmark(healthy_post, scenario_one):
    t = build_template(healthy_post, scenario_one, M=1000, benchmark="median")
    assert t.benchmark_slope == pytest.approx(np.median(healthy_post.beta_pop))


def test_equispaced_designs_give_the_same_template(healthy_post):
    two = build_template(healthy_post, parse_design("200,800g x 5"), seed=10)
    three = build_template(healthy_post, parse_design("200,500,800g x 5"), seed=11)
    assert stats.ks_2samp(two.values, three.values).statistic < 0.05
    # a different design is visibly different
    narrow = build_template(healthy_post, parse_design("200,400g x 5"), seed=12)
    assert stats.ks_2samp(two.values, narrow.values).statistic > 0.05


def test_shift():
    t = _plain(np.random.default_rng(0).normal(1.4, 0.7, 1000))
    assert np.array_equal(shift_template(t, 0.0).values, t.values)
    s = shift_template(t, 0.5)
    assert s.shift == 0.5 and not s.is_null
    assert s.values.mean() == pytest.approx(t.values.mean() - 0.5, abs=1e-12)
    assert np.allclose(s.sorted_values, t.sorted_values - 0.5, rtol=0, atol=1e-15)
    with pytest.raises(ValidationError, match="already shifted"):
        shift_template(s, 0.1)


def test_critical_value_convention():
    t = _plain(np.arange(1, 101))
    assert critical_value(t, 0.05) == 5
    assert critical_value(t, 0.10) == 10
    assert critical_value(t, 0.999) == 100
    assert critical_value(t, 0.001) == 1
    with pytest.raises(ValidationError):
        critical_value(t, 1.0)


def test_values_must_be_finite():
    with pytest.raises(ValidationError):
        _plain([1.0, np.nan])
    with pytest.raises(ValidationError):
        _plain([])


def test_json_round_trip(tmp_path, healthy_post, scenario_one):
    t = build_template(healthy_post, scenario_one, M=1000, seed=1)
    p = tmp_path / "t.json"
    save_template(t, p)
    back = load_template(p)
    assert np.array_equal(back.values, t.values)
    assert back.design == t.design
    assert back.benchmark_slope == t.benchmark_slope
    assert back.provenance == json.loads(json.dumps(t.provenance))
    doc = json.loads(p.read_text())
    assert doc["format_version"] == 1 and doc["design"] == {"weights_g": [250.0, 500.0], "trials": 5}


def test_load_rejects_unknown_version_and_garbage(tmp_path):
    p = tmp_path / "t.json"
    save_template(_plain([1.0, 2.0]), p)
    doc = json.loads(p.read_text())
    doc["format_version"] = 2
    p.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="format_version"):
        load_template(p)
    p.write_text("{not json")
    with pytest.raises(ValidationError, match="cannot read"):
        load_template(p)
    p.write_text(json.dumps({"format_version": 1, "values": [1.0]}))
    with pytest.raises(ValidationError, match="malformed"):
        load_template(p)


def test_created_timestamp_honours_source_date_epoch(monkeypatch, healthy_post, scenario_one):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    t = build_template(healthy_post, scenario_one, M=1000)
    assert t.provenance["created_utc"] == "1970-01-01T00:00:00Z"
