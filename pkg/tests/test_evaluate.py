import json
import warnings

import numpy as np
import pytest

from conftest import affine_energy_model, make_record, random_model
from snapsurv.dataset import FlatSamples, SnapshotDataset, flatten
from snapsurv.energy import batch_nll, log_density, survival
from snapsurv.evaluate import (
    KaplanMeierCurve,
    brier_curve,
    brier_scores,
    censoring_kaplan_meier,
    evaluate_model,
    integrated_brier,
    kaplan_meier,
    quasi_log_likelihood,
    test_resamplings,
)
from snapsurv.resample import SamplingGrid, homogeneous_resample
from snapsurv.simulate import SimConfig, simulate_population

NO_CENSORING = KaplanMeierCurve(np.array([]), np.array([]))


# -- Kaplan-Meier ----------------------------------------------------------------------

def test_kaplan_meier_fixture():
    km = kaplan_meier([1, 2, 3], [1, 0, 1])
    assert km(0.5) == 1.0
    assert km(1) == pytest.approx(2 / 3, abs=1e-15)
    assert km(2) == pytest.approx(2 / 3, abs=1e-15)
    assert km(3) == 0.0
    assert km.left_limit(3) == pytest.approx(2 / 3, abs=1e-15)


def test_censoring_kaplan_meier_fixture():
    g = censoring_kaplan_meier([1, 2, 3], [1, 0, 1])
    assert g(1.999) == 1.0
    assert g(2) == 0.5
    assert g.left_limit(2) == 1.0
    assert g(10) == 0.5


def test_kaplan_meier_without_censoring_is_empirical():
    rng = np.random.default_rng(0)
    t = rng.exponential(size=40)
    km = kaplan_meier(t, np.ones(40, bool))
    grid = np.linspace(0, t.max() + 1, 500)
    empirical = np.array([(t > s).mean() for s in grid])
    np.testing.assert_allclose(km(grid), empirical, rtol=0, atol=1e-14)


def test_kaplan_meier_ties():
    km = kaplan_meier([1, 1, 1, 2], [1, 1, 0, 1])
    assert km(1) == pytest.approx(0.5)
    assert km(2) == 0.0


def test_kaplan_meier_all_censored_is_one():
    km = kaplan_meier([1, 2], [0, 0])
    assert km(5) == 1.0


@pytest.mark.parametrize("times, events", [([], []), ([0.0, 1.0], [1, 1]), ([1.0], [1, 0])])
def test_kaplan_meier_validation(times, events):
    with pytest.raises(ValueError):
        kaplan_meier(times, events)


# -- Brier score --------------------------------------------------------------------------

def test_brier_single_sample_fixture():
    pred = np.full((1, 2), 0.5)
    scores = brier_scores(pred, [1.0], [True], [0.5, 1.5], NO_CENSORING)
    np.testing.assert_allclose(scores, [0.25, 0.25], rtol=0, atol=1e-15)


def test_brier_perfect_model_is_zero():
    tau = np.array([0.5, 1.0, 2.0])
    t = np.linspace(0, 3, 13)
    pred = (tau[:, None] > t[None, :]).astype(float)
    assert np.all(brier_scores(pred, tau, np.ones(3, bool), t, NO_CENSORING) == 0.0)


def test_brier_boundary_predictions():
    tau = np.array([2.0, 3.0])
    t = np.array([0.5, 1.0])
    assert np.all(brier_scores(np.ones((2, 2)), tau, [True, False], t, NO_CENSORING) == 0.0)
    assert np.all(brier_scores(np.zeros((2, 2)), tau, [True, False], t, NO_CENSORING) == 1.0)


def test_brier_ipcw_fixture():
    # data (1,1), (2,0), (3,1): G = 1 before 2 and 1/2 from 2 on
    tau = np.array([1.0, 2.0, 3.0])
    event = np.array([True, False, True])
    g = censoring_kaplan_meier(tau, event)
    s = np.array([0.2, 0.5, 0.6])
    t = np.array([0.5, 2.0, 2.5])
    scores = brier_scores(np.repeat(s[:, None], 3, 1), tau, event, t, g)
    np.testing.assert_allclose(scores, [(0.64 + 0.25 + 0.16) / 3, (0.04 + 0.32) / 3, (0.04 + 0.32) / 3],
                               rtol=0, atol=1e-12)


def test_brier_uses_left_limit_for_failures():
    # failure and censoring tied at 2: the failure is weighted by G(2-) = 1
    tau = np.array([2.0, 2.0, 3.0])
    event = np.array([True, False, True])
    g = censoring_kaplan_meier(tau, event)
    assert g(2.0) == pytest.approx(2 / 3)
    s = np.array([0.3, 0.9, 0.8])
    scores = brier_scores(np.repeat(s[:, None], 1, 1), tau, event, [2.5], g)
    np.testing.assert_allclose(scores, [(0.09 / 1.0 + 0.04 / (2 / 3)) / 3], rtol=0, atol=1e-12)


def test_brier_drops_terms_where_censoring_survival_vanishes():
    # censoring estimate from other data that reaches zero at 2
    g = censoring_kaplan_meier([1.0, 2.0], [True, False])
    assert g(2.0) == 0.0
    with pytest.warns(RuntimeWarning, match="1 Brier terms dropped"):
        scores = brier_scores(np.full((2, 1), 0.5), [1.0, 3.0], [True, True], [2.5], g)
    np.testing.assert_allclose(scores, [0.25 / 2])
    with pytest.warns(RuntimeWarning, match="1 Brier terms dropped"):
        scores = brier_scores(np.full((1, 1), 0.5), [3.0], [True], [3.5], g)
    np.testing.assert_allclose(scores, [0.0])


def test_brier_shape_check():
    with pytest.raises(ValueError):
        brier_scores(np.zeros((2, 2)), [1.0], [True], [0.5, 1.0], NO_CENSORING)


def test_kaplan_meier_baseline_brier_ceiling():
    ds, _ = simulate_population(SimConfig(1000, seed=2))
    km = kaplan_meier(ds.taus, ds.events)
    g = censoring_kaplan_meier(ds.taus, ds.events)
    t = np.linspace(0, ds.taus.max(), 100)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scores = brier_scores(np.tile(km(t), (len(ds), 1)), ds.taus, ds.events, t, g)
    assert np.all(scores >= 0)
    assert scores.max() <= 0.25 + 0.02


# -- integrated Brier score -------------------------------------------------------------------

def test_integrated_brier_constant_and_linear():
    t = np.linspace(0, 2, 11)
    assert integrated_brier(t, np.full(11, 0.17)) == pytest.approx(0.17, abs=1e-15)
    assert integrated_brier(t, t / 2) == pytest.approx(0.5, abs=1e-15)


def test_integrated_brier_refinement():
    curve = lambda t: 0.2 * np.sin(3 * t) ** 2 + 0.05 * t  # noqa: E731
    coarse = np.linspace(0, 1.7, 101)
    fine = np.linspace(0, 1.7, 201)
    assert abs(integrated_brier(coarse, curve(coarse)) - integrated_brier(fine, curve(fine))) < 1e-3


def test_integrated_brier_horizon():
    t = np.linspace(0, 2, 21)
    assert integrated_brier(t, np.where(t <= 1, 1.0, 0.0), horizon=1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        integrated_brier(t, t, horizon=3.0)


# -- likelihood metrics ---------------------------------------------------------------------

def test_quasi_log_likelihood_uniform_model():
    model = affine_energy_model()
    event = FlatSamples.from_arrays([0.5], [True], [0.0], [[1.0]])
    cens = FlatSamples.from_arrays([0.25], [False], [0.0], [[1.0]])
    assert quasi_log_likelihood(model, event) == pytest.approx(0.0, abs=1e-14)
    assert quasi_log_likelihood(model, cens) == pytest.approx(np.log(0.75), abs=1e-14)


def test_quasi_log_likelihood_is_negated_training_loss():
    model = random_model(5, t_upper=3.0)
    flat = flatten(homogeneous_resample(simulate_population(SimConfig(60, seed=1))[0],
                                        SamplingGrid([0.1, 0.3, 0.6])))
    assert abs(quasi_log_likelihood(model, flat) + batch_nll(model, flat)[0]) < 1e-12


def test_single_time_quasi_likelihood_is_conventional_likelihood():
    model = random_model(6, t_upper=3.0)
    ds = simulate_population(SimConfig(80, seed=4))[0]
    view = homogeneous_resample(ds, SamplingGrid([0.25]))
    flat = flatten(view)
    assert len(flat) == sum(rec.tau >= 0.25 for rec in ds)
    direct = []
    for rec in view:
        if rec.num_snapshots == 0:
            continue
        ctx = np.concatenate([rec.times, rec.covariates[0]])[None, :]
        if rec.event:
            direct.append(log_density(model, rec.tau, ctx)[0])
        else:
            direct.append(np.log(survival(model, rec.tau, ctx)[0]))
    assert abs(quasi_log_likelihood(model, flat) - np.mean(direct)) < 1e-12


# -- model-level evaluation --------------------------------------------------------------------

def test_brier_curve_uses_one_censoring_entry_per_individual():
    ds = SnapshotDataset([
        make_record("a", 1.0, True, [0.0, 1.0], [[0.0], [1.0]]),
        make_record("b", 2.0, False, [0.0, 2.0], [[0.0], [2.0]]),
    ], 1)
    view = homogeneous_resample(ds, SamplingGrid([0.2, 0.4, 0.6, 0.8, 0.9, 1.2]))
    flat = flatten(view)
    model = affine_energy_model(t_upper=3.0)
    t = np.array([0.5, 1.5])
    _, scores = brier_curve(model, flat, t)
    s = 1 - t / 3.0
    # a: 5 samples, failure at 1; b: 6 samples, alive through 1.5; G = 1 before 2
    want = [(5 * (1 - s[0]) ** 2 + 6 * (1 - s[0]) ** 2) / 11, (5 * s[1] ** 2 + 6 * (1 - s[1]) ** 2) / 11]
    np.testing.assert_allclose(scores, want, rtol=0, atol=1e-12)


def test_test_resamplings_views():
    ds = simulate_population(SimConfig(30, seed=0))[0]
    views = test_resamplings(ds, (0.25, 0.5), 15, seed=3)
    assert list(views) == ["t=0.25", "t=0.5", "random15"]
    assert all(rec.num_snapshots <= 1 for rec in views["t=0.25"])
    assert max(rec.num_snapshots for rec in views["random15"]) == 15


def test_evaluate_model_report(tmp_path):
    ds = simulate_population(SimConfig(100, seed=8))[0]
    model = random_model(1, t_upper=3.0)
    report = evaluate_model(model, ds, n_eval_times=50)
    assert report.primary == "random15"
    assert set(report.quasi_log_likelihood) == {"t=0.25", "t=0.5", "random15"}
    assert all(v >= 0 for v in report.integrated_brier.values())
    assert len(report.brier_times) == 50 and min(report.brier_scores) >= 0
    assert report.brier_times[-1] == pytest.approx(ds.taus.max())
    report.to_json(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["primary"] == "random15"
    as_is = evaluate_model(model, ds, resample=False, brier=False)
    assert list(as_is.quasi_log_likelihood) == ["as-is"] and as_is.integrated_brier == {}
