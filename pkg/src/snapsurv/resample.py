"""Homogeneous resampling of irregular snapshot series.

Accumulative usage features are continuous in time, so a record can be
linearly interpolated between its first and last snapshot and re-read on a
common sampling grid.  Grids are either fixed (equidistant) or redrawn every
epoch from a seeded stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .dataset import IndividualRecord, SnapshotDataset

__all__ = [
    "SamplingGrid",
    "GridPolicy",
    "CoverageSummary",
    "LinearInterpolator",
    "interpolate_usage",
    "homogeneous_resample",
    "resample_with_coverage",
    "make_grid",
    "random_grid_points",
    "SnapshotResampler",
    "GRID_KINDS",
]

GRID_KINDS = ("fixed", "random")
GRID_FORMULAS = ("stratified", "literal")


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1)
        if np.any(~np.isfinite(pts)) or np.any(pts < 0):
            raise ValueError("grid points must be finite and nonnegative")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def __eq__(self, other):
        if not isinstance(other, SamplingGrid):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    __hash__ = None

    def tolist(self) -> list[float]:
        return [float(p) for p in self.points]


@dataclass(frozen=True)
class GridPolicy:
    """How sampling grids are produced.

    ``kind="fixed"`` gives ``num_points`` equidistant points on
    ``[t_min, t_max]``.  ``kind="random"`` draws a new grid each epoch; with
    ``formula="stratified"`` point ``k`` lies uniformly in the k-th of
    ``num_points`` equal strata, with ``formula="literal"`` every point is
    uniform on ``[t_min, t_min + (t_max - t_min) / num_points]``.
    """

    kind: str = "random"
    t_min: float = 0.1
    t_max: float = 1.0
    num_points: int = 8
    seed: int = 0
    formula: str = "stratified"

    def __post_init__(self):
        if self.kind not in GRID_KINDS:
            raise ValueError(f"grid kind must be one of {GRID_KINDS}, got {self.kind!r}")
        if self.formula not in GRID_FORMULAS:
            raise ValueError(f"grid formula must be one of {GRID_FORMULAS}, got {self.formula!r}")
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be smaller than t_max")
        if self.t_min < 0:
            raise ValueError("t_min must be nonnegative")
        if int(self.num_points) < 1:
            raise ValueError("num_points must be at least 1")
        if int(self.seed) < 0:
            raise ValueError("seed must be nonnegative")


def make_grid(policy: GridPolicy, epoch: int = 0, stream: int = 0) -> SamplingGrid:
    """Sampling grid for ``epoch``.

    Random grids are a pure function of ``(policy.seed, stream, epoch)`` so
    training is reproducible and resumable; ``stream`` separates independent
    uses of the same seed (e.g. the frozen validation grid).
    """
    M = int(policy.num_points)
    lo, hi = float(policy.t_min), float(policy.t_max)
    if policy.kind == "fixed":
        return SamplingGrid(np.linspace(lo, hi, M))
    rng = np.random.default_rng(np.random.SeedSequence([int(policy.seed), int(stream), int(epoch)]))
    return SamplingGrid(random_grid_points(lo, hi, rng.random(M), policy.formula))


def random_grid_points(t_min: float, t_max: float, u, formula: str = "stratified") -> np.ndarray:
    """Map uniform draws ``u`` (one per point) to grid points.

    ``stratified``: ``t_min + (t_max - t_min) * (k - 1 + u_k) / M``.
    ``literal``: ``t_min + (t_max - t_min) * u_k / M``, sorted.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    M = u.shape[0]
    if formula == "stratified":
        return t_min + (t_max - t_min) * (np.arange(M) + u) / M
    if formula == "literal":
        return np.sort(t_min + (t_max - t_min) / M * u)
    raise ValueError(f"grid formula must be one of {GRID_FORMULAS}, got {formula!r}")


class LinearInterpolator:
    """Componentwise linear interpolation inside the snapshot hull."""

    def __call__(self, times: np.ndarray, covariates: np.ndarray, query: np.ndarray):
        """Return ``(values, available)`` for the query times.

        ``values`` has shape ``(len(query), d)``; rows where ``available`` is
        False are undefined (NaN).
        """
        query = np.asarray(query, dtype=np.float64).reshape(-1)
        d = covariates.shape[1] if covariates.ndim == 2 else 0
        out = np.full((query.shape[0], d), np.nan)
        if times.shape[0] == 0:
            return out, np.zeros(query.shape[0], dtype=bool)
        available = (query >= times[0]) & (query <= times[-1])
        q = query[available]
        if times.shape[0] == 1:
            out[available] = covariates[0]
        else:
            for j in range(d):
                out[available, j] = np.interp(q, times, covariates[:, j])
        return out, available


_linear = LinearInterpolator()


def interpolate_usage(record: IndividualRecord, t: float, interpolator=_linear):
    """Interpolated covariate vector at ``t``, or ``None`` outside the hull."""
    values, available = interpolator(record.times, record.covariates, np.array([t], dtype=float))
    if not available[0]:
        return None
    return values[0]


@dataclass(frozen=True)
class CoverageSummary:
    """Which individuals could be resampled on every grid point they should
    carry (all points ``g_k <= tau``)."""

    n_individuals: int
    n_full: int
    partial_ids: tuple[str, ...]
    empty_ids: tuple[str, ...]

    @property
    def fraction(self) -> float:
        return self.n_full / self.n_individuals if self.n_individuals else 1.0

    def as_dict(self) -> dict:
        return {
            "n_individuals": self.n_individuals,
            "n_full": self.n_full,
            "fraction": self.fraction,
            "n_partial": len(self.partial_ids),
            "n_empty": len(self.empty_ids),
        }


def resample_with_coverage(dataset: SnapshotDataset, grid: SamplingGrid, interpolator=_linear):
    """Resample every individual on ``grid``; also report coverage."""
    pts = grid.points
    records = []
    partial, empty = [], []
    n_full = 0
    d = dataset.feature_dim
    for rec in dataset:
        due = pts <= rec.tau
        values, available = interpolator(rec.times, rec.covariates, pts)
        keep = available & due
        if np.array_equal(keep, due):
            n_full += 1
        else:
            partial.append(rec.id)
        if not keep.any():
            empty.append(rec.id)
        records.append(rec.with_snapshots(pts[keep], values[keep].reshape(-1, d)))
    summary = CoverageSummary(len(dataset), n_full, tuple(partial), tuple(empty))
    return dataset.replace_individuals(records), summary


def homogeneous_resample(dataset: SnapshotDataset, grid: SamplingGrid, interpolator=_linear):
    """Replace each individual's snapshots by interpolated values on ``grid``.

    A grid point is used for an individual when it lies inside the
    individual's snapshot hull and does not exceed its recorded time.
    Individuals with no usable point are kept with zero snapshots.
    """
    return resample_with_coverage(dataset, grid, interpolator)[0]


class SnapshotResampler(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`homogeneous_resample`.

    Parameters
    ----------
    grid : {"fixed", "random"}
    t_min, t_max : float
        Snapshot-time range covered by the grid.
    num_points : int
    seed : int
        Seed of the epochwise grid stream (ignored for fixed grids).
    grid_formula : {"stratified", "literal"}
    epoch : int
        Epoch whose grid :meth:`transform` uses.
    """

    def __init__(self, grid="fixed", t_min=0.1, t_max=1.0, num_points=8, seed=0,
                 grid_formula="stratified", epoch=0):
        self.grid = grid
        self.t_min = t_min
        self.t_max = t_max
        self.num_points = num_points
        self.seed = seed
        self.grid_formula = grid_formula
        self.epoch = epoch

    def policy(self) -> GridPolicy:
        return GridPolicy(self.grid, self.t_min, self.t_max, self.num_points, self.seed, self.grid_formula)

    def fit(self, X, y=None):
        self.policy_ = self.policy()
        return self

    def transform(self, X):
        policy = getattr(self, "policy_", None) or self.policy()
        self.grid_ = make_grid(policy, self.epoch)
        out, self.coverage_ = resample_with_coverage(X, self.grid_)
        return out
