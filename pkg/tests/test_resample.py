import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import make_record
from snapsurv.dataset import IndividualRecord, SnapshotDataset, is_homogeneously_sampled
from snapsurv.resample import (
    GridPolicy,
    SamplingGrid,
    SnapshotResampler,
    homogeneous_resample,
    interpolate_usage,
    make_grid,
    random_grid_points,
    resample_with_coverage,
)


# -- interpolation ----------------------------------------------------------------

@pytest.fixture
def two_point_record():
    return make_record("a", 5.0, True, [1.0, 3.0], [[2.0], [6.0]])


def test_interpolate_midpoint(two_point_record):
    assert interpolate_usage(two_point_record, 2.0).tolist() == [4.0]


def test_interpolate_knot_is_exact(two_point_record):
    assert interpolate_usage(two_point_record, 1.0).tolist() == [2.0]
    assert interpolate_usage(two_point_record, 3.0).tolist() == [6.0]


@pytest.mark.parametrize("t", [0.5, 3.5])
def test_interpolate_outside_hull_is_unavailable(two_point_record, t):
    assert interpolate_usage(two_point_record, t) is None


def test_interpolate_single_snapshot_and_empty():
    rec = make_record("a", 5.0, True, [2.0], [[7.0, 1.0]])
    assert interpolate_usage(rec, 2.0).tolist() == [7.0, 1.0]
    assert interpolate_usage(rec, 2.1) is None
    empty = IndividualRecord("b", 1.0, False, [], np.zeros((0, 1)))
    assert interpolate_usage(empty, 0.5) is None


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10),
       times=st.lists(st.floats(0, 10), min_size=2, max_size=8, unique=True),
       frac=st.floats(0, 1))
def test_interpolation_exact_on_affine_usage(a, b, times, frac):
    times = np.sort(times)
    if np.any(np.diff(times) <= 1e-9):
        return
    rec = make_record("a", 10.0, True, times, (a * times + b)[:, None])
    t = times[0] + frac * (times[-1] - times[0])
    got = interpolate_usage(rec, t)[0]
    want = a * t + b
    assert abs(got - want) <= 1e-12 * max(1.0, abs(want), abs(a) * times[-1], abs(b))


# -- homogeneous resampling ---------------------------------------------------------

@pytest.fixture
def hull_record():
    return SnapshotDataset([make_record("a", 2.0, True, [0.5, 2.0], [[1.0], [4.0]])], 1)


def test_resample_inside_hull(hull_record):
    out, cov = resample_with_coverage(hull_record, SamplingGrid([1.0, 1.5]))
    assert out[0].times.tolist() == [1.0, 1.5]
    assert out[0].covariates[:, 0].tolist() == [2.0, 3.0]
    assert cov.fraction == 1.0 and cov.partial_ids == ()


def test_resample_point_before_first_snapshot_is_dropped(hull_record):
    out, cov = resample_with_coverage(hull_record, SamplingGrid([0.1, 1.0]))
    assert out[0].times.tolist() == [1.0]
    assert cov.partial_ids == ("a",)
    assert cov.fraction == 0.0


def test_resample_empty_grid(hull_record):
    out = homogeneous_resample(hull_record, SamplingGrid([]))
    assert all(rec.num_snapshots == 0 for rec in out)


def test_resample_drops_points_after_tau():
    ds = SnapshotDataset([make_record("a", 1.2, False, [0.0, 1.2], [[0.0], [1.2]])], 1)
    out, cov = resample_with_coverage(ds, SamplingGrid([0.5, 1.0, 1.5]))
    assert out[0].times.tolist() == [0.5, 1.0]
    assert cov.n_full == 1


def test_individual_with_no_usable_point_is_kept():
    ds = SnapshotDataset([
        make_record("a", 0.05, True, [0.0, 0.05], [[0.0], [0.1]]),
        make_record("b", 2.0, True, [0.0, 2.0], [[0.0], [2.0]]),
    ], 1)
    out, cov = resample_with_coverage(ds, SamplingGrid([0.1, 0.5]))
    assert len(out) == 2 and out[0].num_snapshots == 0
    assert cov.empty_ids == ("a",)
    assert cov.as_dict()["n_individuals"] == 2


def test_resample_keeps_outcomes(hull_record):
    out = homogeneous_resample(hull_record, SamplingGrid([1.0]))
    assert (out[0].id, out[0].tau, out[0].event) == ("a", 2.0, True)


@st.composite
def linear_datasets(draw):
    n = draw(st.integers(1, 8))
    recs = []
    for i in range(n):
        tau = draw(st.floats(0.05, 3.0))
        u = draw(st.floats(0.0, 5.0))
        recs.append(IndividualRecord(f"i{i}", tau, draw(st.booleans()), [0.0, tau], [[0.0], [u * tau]]))
    return SnapshotDataset(recs, 1)


@settings(max_examples=60, deadline=None)
@given(linear_datasets(), st.integers(1, 12), st.integers(0, 2**16), st.sampled_from(["fixed", "random"]))
def test_resampled_data_is_homogeneous(ds, M, seed, kind):
    grid = make_grid(GridPolicy(kind, 0.1, 1.0, M, seed))
    out, cov = resample_with_coverage(ds, grid)
    assert cov.fraction == 1.0
    assert is_homogeneously_sampled(out)


@settings(max_examples=40, deadline=None)
@given(linear_datasets(), st.integers(1, 6))
def test_resampling_is_idempotent_on_its_own_grid(ds, M):
    grid = make_grid(GridPolicy("fixed", 0.0, 1.0, M))
    once = homogeneous_resample(ds, grid)
    full = SnapshotDataset([r for r in once if r.num_snapshots == np.sum(grid.points <= r.tau)
                            and r.num_snapshots > 0], 1)
    assert homogeneous_resample(full, grid) == full


# -- grids --------------------------------------------------------------------------------

def test_fixed_grid_inclusive_endpoints():
    grid = make_grid(GridPolicy("fixed", 0.1, 1.0, 4))
    np.testing.assert_allclose(grid.points, [0.1, 0.4, 0.7, 1.0], rtol=0, atol=1e-15)
    assert grid == make_grid(GridPolicy("fixed", 0.1, 1.0, 4, seed=9), epoch=17)


def test_stratified_formula_substitution():
    assert random_grid_points(0.0, 1.0, [0.5, 0.5]).tolist() == [0.25, 0.75]


def test_literal_formula_stays_in_first_stratum():
    pts = random_grid_points(0.0, 1.0, [0.9, 0.1, 0.5, 0.3], "literal")
    np.testing.assert_allclose(pts, [0.025, 0.075, 0.125, 0.225])
    grid = make_grid(GridPolicy("random", 0.1, 1.0, 8, 3, "literal"), epoch=2)
    assert grid.points.max() <= 0.1 + 0.9 / 8


def test_random_grid_is_deterministic_per_seed_and_epoch():
    policy = GridPolicy("random", 0.1, 1.0, 8, seed=42)
    assert make_grid(policy, 3) == make_grid(policy, 3)
    assert make_grid(policy, 3) != make_grid(policy, 4)
    assert make_grid(policy, 3) != make_grid(policy, 3, stream=1)
    assert make_grid(policy, 3) != make_grid(GridPolicy("random", 0.1, 1.0, 8, seed=43), 3)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 5), st.floats(0.01, 5), st.integers(1, 50), st.integers(0, 2**31), st.integers(0, 1000))
def test_stratified_grid_has_one_point_per_stratum(lo, width, M, seed, epoch):
    hi = lo + width
    pts = make_grid(GridPolicy("random", lo, hi, M, seed), epoch).points
    assert lo <= pts[0] and pts[-1] <= hi
    assert np.all(np.diff(pts) > 0)
    stratum = np.floor((pts - lo) / (hi - lo) * M).astype(int)
    assert np.array_equal(stratum, np.arange(M))


@pytest.mark.parametrize("kwargs", [
    dict(kind="sometimes"), dict(t_min=1.0, t_max=1.0), dict(num_points=0),
    dict(formula="other"), dict(t_min=-1.0),
])
def test_grid_policy_validation(kwargs):
    with pytest.raises(ValueError):
        GridPolicy(**kwargs)


@pytest.mark.parametrize("points", [[1.0, 1.0], [2.0, 1.0], [-0.1], [np.nan]])
def test_sampling_grid_validation(points):
    with pytest.raises(ValueError):
        SamplingGrid(points)


# -- transformer -------------------------------------------------------------------------

def test_resampler_transformer(hull_record):
    tr = SnapshotResampler(grid="fixed", t_min=1.0, t_max=1.5, num_points=2)
    out = tr.fit_transform(hull_record)
    assert out[0].times.tolist() == [1.0, 1.5]
    assert tr.coverage_.fraction == 1.0
    assert clone(tr).get_params() == tr.get_params()
    assert tr.set_params(num_points=3).get_params()["num_points"] == 3
