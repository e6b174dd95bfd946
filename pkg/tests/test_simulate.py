import numpy as np
import pytest
from scipy import stats

from funbuffer.simulate import (RingStudyConfig, ScenarioConfig, StudyConfig, censoring_rate,
                                generate, generate_rings, imse, run_coverage, run_study, truth)


def test_null_model_failure_times_are_standard_exponential():
    d = generate(ScenarioConfig("I", n=10_000, censor_fraction=0.0, theta=(0.0, 0.0), seed=11))
    assert np.all(d.event == 1)
    assert stats.kstest(d.time, "expon").pvalue > 0.01


def test_censoring_calibration():
    fractions, sizes = [], []
    for k in range(10):
        d = generate(ScenarioConfig("II", n=10_000, seed=100 + k))
        fractions.append(1 - d.event.mean())
        sizes.append(d.n)
    assert np.average(fractions, weights=sizes) == pytest.approx(0.10, abs=0.01)
    assert censoring_rate("II", 0.0) == 0.0


def test_truth_curves():
    s = np.array([0.0, 0.25, 0.4999, 0.5, 0.75])
    np.testing.assert_allclose(truth("II")(s)[:2], [0.0, 2.0], atol=1e-12)
    assert truth("II")(s)[3] == 0.0 and truth("III")(s)[3] == 0.0
    assert truth("III")(np.array([0.0]))[0] == pytest.approx(2.0)
    np.testing.assert_array_equal(truth("I")(s), 0.0)
    with pytest.raises(ValueError):
        truth("IV")


def test_imse_identities():
    s = np.linspace(0, 1, 2001)
    for sc in ("II", "III"):
        assert imse(truth(sc), sc) == 0.0
        assert imse(lambda x: np.zeros_like(x), sc) == pytest.approx(1.0)
    assert imse(np.ones_like(s), "I") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        imse(np.ones(5), "I")


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig("II", censor_fraction=1.0)
    with pytest.raises(ValueError):
        ScenarioConfig("V")


def test_study_is_reproducible():
    cfg = ScenarioConfig("II", n=150, seed=4)
    study = StudyConfig(n_inner=6, n1=4, n2=2, variants=("SplineGbridge", "Lasso"))
    a = run_study(cfg, study, n_reps=3)
    b = run_study(cfg, study, n_reps=3)
    assert a.to_json() == b.to_json()
    assert a.rows == b.rows
    agg = a.aggregates()
    assert set(agg) == {"SplineGbridge", "Lasso"}
    for k in ("mean_imse", "mean_supremum", "theta1_percent_bias", "theta2_ese", "null_tail_fraction"):
        assert np.isfinite(agg["SplineGbridge"][k])
    rows = [r for r in a.rows if r["variant"] == "Lasso"]
    im = np.array([r["imse"] for r in rows])
    assert agg["Lasso"]["mean_imse"] == pytest.approx(im.mean())
    est = np.array([r["theta1"] for r in rows])
    th = cfg.theta[0]
    assert agg["Lasso"]["theta1_percent_bias"] == pytest.approx(100 * (est.mean() - th) / th)


def test_coverage_report_shape():
    rep = run_coverage(ScenarioConfig("III", n=200, seed=2), n_reps=4, study=StudyConfig(n_inner=8))
    assert rep.estimates.shape == (4, 9) and rep.n_failed == 0
    assert np.all((rep.coverage >= 0) & (rep.coverage <= 1))
    assert np.all(rep.ase > 0)


def test_ring_truth_integrates_to_target():
    cfg = RingStudyConfig()
    s = np.linspace(cfg.radii[0], cfg.radii[-1], 200_001)
    assert np.trapezoid(cfg.beta(s), s) == pytest.approx(cfg.cumulative, rel=1e-6)
    assert np.exp(cfg.increment * cfg.cumulative) == pytest.approx(0.946)
    assert np.all(cfg.beta(s[s >= cfg.buffer]) == 0)


def test_ring_generator():
    d = generate_rings(RingStudyConfig(n=5000, seed=3))
    assert d.exposure.shape == (5000, 9)
    assert 1 - d.event.mean() == pytest.approx(0.6, abs=0.03)
    d2 = generate_rings(RingStudyConfig(n=5000, seed=3))
    np.testing.assert_array_equal(d.time, d2.time)
