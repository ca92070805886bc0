"""Censored snapshot survival data: records, datasets, flattening and CSV I/O.

An individual contributes a recorded time ``tau``, an event flag and an
ordered series of snapshots ``(t, x(t))``.  Flattening turns every snapshot
into one training row so that conventional maximum-likelihood machinery
applies.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "Snapshot",
    "IndividualRecord",
    "SnapshotDataset",
    "FlatSample",
    "FlatSamples",
    "HomogeneityResult",
    "load_dataset",
    "save_dataset",
    "save_flat_samples",
    "is_homogeneously_sampled",
    "flatten",
    "MODES",
]

MODES = ("total", "remaining")


class DatasetError(ValueError):
    """Raised when snapshot data violates the data model."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Snapshot:
    time: float
    covariates: np.ndarray


@dataclass(frozen=True, eq=False)
class IndividualRecord:
    """One subject: outcome ``(tau, event)`` and its snapshot series.

    Snapshots are stored column-wise: ``times`` has shape ``(M,)`` and
    ``covariates`` shape ``(M, d)``.
    """

    id: str
    tau: float
    event: bool
    times: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64).reshape(-1)
        cov = np.array(self.covariates, dtype=np.float64)
        if cov.ndim == 1:
            cov = cov.reshape(len(times), -1) if len(times) else cov.reshape(0, 0)
        if cov.shape[0] != times.shape[0]:
            raise DatasetError(
                f"individual {self.id!r}: {times.shape[0]} snapshot times but "
                f"{cov.shape[0]} covariate rows"
            )
        tau = float(self.tau)
        if not (math.isfinite(tau) and tau > 0):
            raise DatasetError(f"individual {self.id!r}: recorded time must be positive, got {tau}")
        if np.any(~np.isfinite(times)) or np.any(~np.isfinite(cov)):
            raise DatasetError(f"individual {self.id!r}: non-finite snapshot value")
        if np.any(times < 0):
            raise DatasetError(f"individual {self.id!r}: negative snapshot time")
        if np.any(np.diff(times) <= 0):
            raise DatasetError(f"individual {self.id!r}: snapshot times must be strictly increasing")
        if times.size and times[-1] > tau:
            raise DatasetError(
                f"individual {self.id!r}: snapshot after recorded time "
                f"(t={times[-1]!r} > tau={tau!r})"
            )
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "event", bool(self.event))
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "covariates", _frozen(cov))

    @property
    def num_snapshots(self) -> int:
        return int(self.times.shape[0])

    @property
    def snapshots(self) -> tuple[Snapshot, ...]:
        return tuple(Snapshot(float(t), x) for t, x in zip(self.times, self.covariates))

    def with_snapshots(self, times, covariates) -> "IndividualRecord":
        return IndividualRecord(self.id, self.tau, self.event, times, covariates)

    def __eq__(self, other):
        if not isinstance(other, IndividualRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.tau == other.tau
            and self.event == other.event
            and np.array_equal(self.times, other.times)
            and self.covariates.shape == other.covariates.shape
            and np.array_equal(self.covariates, other.covariates)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SnapshotDataset:
    individuals: tuple[IndividualRecord, ...]
    feature_dim: int
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        individuals = tuple(self.individuals)
        d = int(self.feature_dim)
        if d < 1:
            raise DatasetError("feature_dim must be positive")
        seen = set()
        for rec in individuals:
            if rec.id in seen:
                raise DatasetError(f"duplicate individual id {rec.id!r}")
            seen.add(rec.id)
            if rec.num_snapshots and rec.covariates.shape[1] != d:
                raise DatasetError(
                    f"individual {rec.id!r}: {rec.covariates.shape[1]} features, expected {d}"
                )
        names = self.feature_names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != d:
                raise DatasetError(f"{len(names)} feature names for feature_dim={d}")
        object.__setattr__(self, "individuals", individuals)
        object.__setattr__(self, "feature_dim", d)
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return len(self.individuals)

    def __iter__(self) -> Iterator[IndividualRecord]:
        return iter(self.individuals)

    def __getitem__(self, i) -> IndividualRecord:
        return self.individuals[i]

    def __eq__(self, other):
        if not isinstance(other, SnapshotDataset):
            return NotImplemented
        return (
            self.feature_dim == other.feature_dim
            and self.feature_names == other.feature_names
            and self.individuals == other.individuals
        )

    __hash__ = None

    @property
    def ids(self) -> list[str]:
        return [rec.id for rec in self.individuals]

    @property
    def taus(self) -> np.ndarray:
        return np.array([rec.tau for rec in self.individuals], dtype=np.float64)

    @property
    def events(self) -> np.ndarray:
        return np.array([rec.event for rec in self.individuals], dtype=bool)

    @property
    def num_snapshots(self) -> int:
        return sum(rec.num_snapshots for rec in self.individuals)

    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"f{k + 1}" for k in range(self.feature_dim))

    def subset(self, indices: Iterable[int]) -> "SnapshotDataset":
        return SnapshotDataset(
            tuple(self.individuals[i] for i in indices), self.feature_dim, self.feature_names
        )

    def replace_individuals(self, individuals) -> "SnapshotDataset":
        return SnapshotDataset(tuple(individuals), self.feature_dim, self.feature_names)

    def union(self, other: "SnapshotDataset") -> "SnapshotDataset":
        if other.feature_dim != self.feature_dim:
            raise DatasetError("cannot merge datasets with different feature_dim")
        return self.replace_individuals(self.individuals + other.individuals)


@dataclass(frozen=True)
class FlatSample:
    target_time: float
    event: bool
    snapshot_time: float
    covariates: np.ndarray


@dataclass(frozen=True, eq=False)
class FlatSamples(Sequence):
    """Column-oriented flattened dataset, one row per (individual, snapshot).

    ``tau`` keeps the individual's recorded time so that metrics needing it
    work in both modes (in remaining-life mode ``target_time = tau - t0``).
    """

    target_time: np.ndarray
    event: np.ndarray
    t0: np.ndarray
    covariates: np.ndarray
    tau: np.ndarray
    owner: np.ndarray
    mode: str = "total"
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def __len__(self) -> int:
        return int(self.target_time.shape[0])

    def __getitem__(self, i):
        if isinstance(i, slice) or isinstance(i, np.ndarray):
            return self.take(np.arange(len(self))[i] if isinstance(i, slice) else i)
        return FlatSample(
            float(self.target_time[i]), bool(self.event[i]), float(self.t0[i]), self.covariates[i]
        )

    @property
    def feature_dim(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def contexts(self) -> np.ndarray:
        """``(n, 1 + d)`` array of ``[t0, covariates]``."""
        return np.column_stack([self.t0, self.covariates])

    def take(self, idx) -> "FlatSamples":
        idx = np.asarray(idx)
        return FlatSamples(
            self.target_time[idx],
            self.event[idx],
            self.t0[idx],
            self.covariates[idx],
            self.tau[idx],
            self.owner[idx],
            self.mode,
            self.feature_names,
        )

    @classmethod
    def from_arrays(cls, target_time, event, t0, covariates, mode="total", tau=None, owner=None):
        target_time = np.asarray(target_time, dtype=np.float64).reshape(-1)
        n = target_time.shape[0]
        t0 = np.asarray(t0, dtype=np.float64).reshape(-1)
        covariates = np.asarray(covariates, dtype=np.float64).reshape(n, -1)
        if tau is None:
            tau = target_time + t0 if mode == "remaining" else target_time
        if owner is None:
            owner = np.arange(n)
        return cls(
            target_time,
            np.asarray(event, dtype=bool).reshape(-1),
            t0,
            covariates,
            np.asarray(tau, dtype=np.float64).reshape(-1),
            np.asarray(owner).reshape(-1),
            mode,
        )


def flatten(dataset: SnapshotDataset, mode: str = "total") -> FlatSamples:
    """One sample per (individual, snapshot) pair.

    In ``"remaining"`` mode the target is the remaining life ``tau - t0``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    d = dataset.feature_dim
    counts = [rec.num_snapshots for rec in dataset]
    total = sum(counts)
    t0 = np.empty(total)
    cov = np.empty((total, d))
    tau = np.empty(total)
    event = np.empty(total, dtype=bool)
    owner = np.empty(total, dtype=np.int64)
    pos = 0
    for i, (rec, m) in enumerate(zip(dataset, counts)):
        if m == 0:
            continue
        sl = slice(pos, pos + m)
        t0[sl] = rec.times
        cov[sl] = rec.covariates
        tau[sl] = rec.tau
        event[sl] = rec.event
        owner[sl] = i
        pos += m
    target = tau - t0 if mode == "remaining" else tau.copy()
    return FlatSamples(target, event, t0, cov, tau, owner, mode, dataset.feature_names)


@dataclass(frozen=True)
class HomogeneityResult:
    homogeneous: bool
    message: str = ""
    grid: tuple[float, ...] = field(default=())

    def __bool__(self) -> bool:
        return self.homogeneous


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b))


def is_homogeneously_sampled(dataset: SnapshotDataset, tolerance: float = 1e-9) -> HomogeneityResult:
    """Check whether all individuals share one snapshot-time sequence.

    Every individual must carry the first ``M_i`` times of a common sequence,
    where either every ``M_i`` equals the sequence length, or each ``M_i`` is
    the number of sequence times not exceeding the individual's recorded
    time.  Times are matched with relative tolerance ``tolerance``.
    """
    if len(dataset) == 0:
        return HomogeneityResult(True, "empty dataset", ())
    longest = max(dataset, key=lambda rec: rec.num_snapshots)
    grid = longest.times
    M = grid.shape[0]

    for rec in dataset:
        for k, t in enumerate(rec.times):
            if not _close(float(t), float(grid[k]), tolerance):
                return HomogeneityResult(
                    False,
                    f"individual {rec.id!r}: snapshot {k} at t={t!r} does not match "
                    f"common time {grid[k]!r}",
                    tuple(grid),
                )

    if all(rec.num_snapshots == M for rec in dataset):
        return HomogeneityResult(True, "", tuple(grid))

    for rec in dataset:
        expected = int(np.sum(grid <= rec.tau * (1.0 + tolerance)))
        if rec.num_snapshots != expected:
            missing = grid[rec.num_snapshots] if rec.num_snapshots < expected else None
            detail = (
                f"missing time {missing!r} although it is <= tau={rec.tau!r}"
                if missing is not None
                else f"has {rec.num_snapshots} snapshots, expected {expected}"
            )
            return HomogeneityResult(False, f"individual {rec.id!r}: {detail}", tuple(grid))
    return HomogeneityResult(True, "", tuple(grid))


# ---------------------------------------------------------------------------
# CSV interchange


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_float(value: str, where: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise DatasetError(f"{where}: cannot parse {value!r} as a number") from None
    if not math.isfinite(x):
        raise DatasetError(f"{where}: non-finite value {value!r}")
    return x


def load_dataset(individuals_file, snapshots_file) -> SnapshotDataset:
    """Read the individuals table (``id,tau,delta``) and the long-format
    snapshots table (``id,t,f1,...,fd``)."""
    individuals_file, snapshots_file = Path(individuals_file), Path(snapshots_file)

    outcomes: dict[str, tuple[float, bool]] = {}
    with individuals_file.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["id", "tau", "delta"]:
            raise DatasetError(f"{individuals_file}: header must be id,tau,delta")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{individuals_file}:{lineno}"
            if len(row) != 3:
                raise DatasetError(f"{where}: expected 3 columns, got {len(row)}")
            rid = row[0].strip()
            if rid in outcomes:
                raise DatasetError(f"{where}: duplicate id {rid!r}")
            delta = row[2].strip()
            if delta not in ("0", "1"):
                raise DatasetError(f"{where}: delta must be 0 or 1, got {delta!r}")
            tau = _parse_float(row[1], where)
            if tau <= 0:
                raise DatasetError(f"{where}: tau must be positive")
            outcomes[rid] = (tau, delta == "1")

    snaps: dict[str, list[tuple[float, list[float], int]]] = {rid: [] for rid in outcomes}
    with snapshots_file.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            # an empty file carries no snapshots; one unnamed feature is assumed
            header = ["id", "t", "f1"]
        if [h.strip() for h in header[:2]] != ["id", "t"] or len(header) < 3:
            raise DatasetError(f"{snapshots_file}: header must be id,t,<f1>,...,<fd>")
        names = tuple(h.strip() for h in header[2:])
        d = len(names)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{snapshots_file}:{lineno}"
            if len(row) != d + 2:
                raise DatasetError(f"{where}: expected {d + 2} columns, got {len(row)}")
            rid = row[0].strip()
            if rid not in outcomes:
                raise DatasetError(f"{where}: unknown id {rid!r}")
            t = _parse_float(row[1], where)
            if t < 0:
                raise DatasetError(f"{where}: negative snapshot time")
            if t > outcomes[rid][0]:
                raise DatasetError(
                    f"{where}: snapshot after recorded time (t={t!r} > tau={outcomes[rid][0]!r})"
                )
            snaps[rid].append((t, [_parse_float(v, where) for v in row[2:]], lineno))

    records = []
    for rid, (tau, event) in outcomes.items():
        rows = sorted(snaps[rid], key=lambda r: r[0])
        for prev, cur in zip(rows, rows[1:]):
            if cur[0] == prev[0]:
                raise DatasetError(
                    f"{snapshots_file}:{cur[2]}: duplicate snapshot time {cur[0]!r} for id {rid!r}"
                )
        times = np.array([r[0] for r in rows], dtype=np.float64)
        cov = np.array([r[1] for r in rows], dtype=np.float64).reshape(len(rows), d)
        records.append(IndividualRecord(rid, tau, event, times, cov))
    return SnapshotDataset(tuple(records), d, names)


def save_dataset(dataset: SnapshotDataset, individuals_file, snapshots_file) -> None:
    with Path(individuals_file).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "tau", "delta"])
        for rec in dataset:
            w.writerow([rec.id, _fmt(rec.tau), int(rec.event)])
    with Path(snapshots_file).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "t", *dataset.names()])
        for rec in dataset:
            for t, x in zip(rec.times, rec.covariates):
                w.writerow([rec.id, _fmt(t), *(_fmt(v) for v in x)])


def save_flat_samples(samples: FlatSamples, path, feature_names: Sequence[str] | None = None) -> None:
    names = feature_names or samples.feature_names or [f"f{k + 1}" for k in range(samples.feature_dim)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_time", "event", "t0", *names])
        for i in range(len(samples)):
            w.writerow(
                [
                    _fmt(samples.target_time[i]),
                    int(samples.event[i]),
                    _fmt(samples.t0[i]),
                    *(_fmt(v) for v in samples.covariates[i]),
                ]
            )
