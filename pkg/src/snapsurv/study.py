"""Declarative simulated studies and learning-rate sweeps.

A study crosses dataset sizes, grid sizes and grid policies, trains a number
of replicates per cell and evaluates every model on one shared, held-out
simulated test population.  Results are written as a tidy CSV whose bytes
depend only on the study file.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from sklearn.base import clone

from .dataset import SnapshotDataset
from .estimator import (
    EnergySurvivalEstimator,
    TrainConfig,
    TrainingError,
    derive_seed,
    split_by_individual,
)
from .evaluate import evaluate_model
from .resample import GridPolicy, homogeneous_resample, make_grid
from .simulate import SimConfig, simulate_population

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "StudyConfig",
    "load_study",
    "study_jobs",
    "Job",
    "fit_job",
    "evaluate_job",
    "run_job",
    "run_study",
    "SweepResult",
    "sweep",
    "POLICIES",
]

POLICIES = ("fixed", "random", "mixed")

# purpose codes for derived seeds
_POPULATION, _TRAIN, _TEST, _TEST_GRID = 11, 12, 13, 14


@dataclass
class StudyConfig:
    sizes: tuple[int, ...] = (500,)
    grid_sizes: tuple[int, ...] = (4,)
    policies: tuple[str, ...] = ("fixed", "random")
    replicates: int = 5
    seed: int = 0
    test_size: int = 500
    representation: str = "resimulate"
    mixed_factor: int = 10
    single_times: tuple[float, ...] = (0.25, 0.5)
    test_grid_points: int = 15
    n_eval_times: int = 100
    brier: bool = True
    workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sizes = tuple(int(n) for n in self.sizes)
        self.grid_sizes = tuple(int(m) for m in self.grid_sizes)
        self.policies = tuple(self.policies)
        self.single_times = tuple(float(t) for t in self.single_times)
        bad = set(self.policies) - set(POLICIES)
        if bad:
            raise ValueError(f"unknown policies {sorted(bad)}; choose from {POLICIES}")
        if self.representation not in ("resimulate", "reseed"):
            raise ValueError("representation must be 'resimulate' or 'reseed'")
        if int(self.replicates) < 1:
            raise ValueError("replicates must be at least 1")
        unknown = set(self.sim) - {f.name for f in fields(SimConfig)} | (
            set(self.sim) & {"n_individuals", "seed", "id_prefix"}
        )
        if unknown:
            raise ValueError(f"unsupported [sim] options: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        study = dict(d.pop("study", {}))
        train = TrainConfig.from_dict(d.pop("train", {}))
        sim = dict(d.pop("sim", {}))
        if d:
            raise ValueError(f"unknown study sections: {sorted(d)}")
        known = {f.name for f in fields(cls)} - {"train", "sim"}
        unknown = set(study) - known
        if unknown:
            raise ValueError(f"unknown [study] options: {sorted(unknown)}")
        return cls(train=train, sim=sim, **study)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d


def load_study(path) -> StudyConfig:
    with open(path, "rb") as fh:
        return StudyConfig.from_dict(tomllib.load(fh))


@dataclass(frozen=True)
class Job:
    policy: str
    M: int
    N: int
    replicate: int


def study_jobs(cfg: StudyConfig) -> list[Job]:
    return [
        Job(policy, M, N, r)
        for policy in cfg.policies
        for M in cfg.grid_sizes
        for N in cfg.sizes
        for r in range(int(cfg.replicates))
    ]


def _population_seed(cfg: StudyConfig, N: int, r: int) -> int:
    if cfg.representation == "reseed":
        return derive_seed(cfg.seed, _POPULATION, N)
    return derive_seed(cfg.seed, _POPULATION, N, r)


def _simulate(cfg: StudyConfig, n: int, seed: int, prefix: str) -> SnapshotDataset:
    return simulate_population(SimConfig(n_individuals=n, seed=seed, id_prefix=prefix, **cfg.sim))[0]


def test_population(cfg: StudyConfig) -> SnapshotDataset:
    return _simulate(cfg, int(cfg.test_size), derive_seed(cfg.seed, _TEST), "test")


test_population.__test__ = False


def mixed_training_data(population: SnapshotDataset, est: EnergySurvivalEstimator, M: int, factor: int):
    """Union of two equal cohorts resampled on fixed grids of ``M`` and
    ``factor * M`` points, plus the validation view used by ``est``.

    The split into training and validation individuals is the one the
    estimator would make itself, so it matches the other policies.
    """
    train_ds, val_ds = split_by_individual(population, est.val_fraction,
                                           derive_seed(est.random_state, 1))
    half = len(population) // 2
    sparse_ids = set(population.ids[:half])
    sparse = train_ds.subset([i for i, rec in enumerate(train_ds) if rec.id in sparse_ids])
    dense = train_ds.subset([i for i, rec in enumerate(train_ds) if rec.id not in sparse_ids])
    grid_sparse = make_grid(GridPolicy("fixed", est.t_min, est.t_max, M))
    grid_dense = make_grid(GridPolicy("fixed", est.t_min, est.t_max, factor * M))
    train_view = homogeneous_resample(sparse, grid_sparse).union(homogeneous_resample(dense, grid_dense))
    # same frozen validation grid as the homogeneous policies
    return train_view, clone(est).set_params(grid="random").validation_view(val_ds)[0]


def fit_job(cfg: StudyConfig, job: Job) -> tuple[EnergySurvivalEstimator, SnapshotDataset]:
    """Simulate the job's population and fit one estimator on it.

    Raises :class:`TrainingError` when training diverges.
    """
    population = _simulate(cfg, job.N, _population_seed(cfg, job.N, job.replicate), f"r{job.replicate}_")
    params = cfg.train.estimator_params()
    params.update(num_points=job.M, random_state=derive_seed(cfg.seed, _TRAIN, job.replicate),
                  grid="none" if job.policy == "mixed" else job.policy)
    est = EnergySurvivalEstimator(**params)
    if job.policy == "mixed":
        train_view, val_view = mixed_training_data(population, est, job.M, int(cfg.mixed_factor))
        est.fit(train_view, validation=val_view)
    else:
        est.fit(population)
    return est, population


def evaluate_job(cfg: StudyConfig, est: EnergySurvivalEstimator, test: SnapshotDataset):
    """Evaluate a fitted estimator on the shared test population."""
    return evaluate_model(est.model_, test, cfg.single_times, cfg.test_grid_points,
                          est.t_min, est.t_max, derive_seed(cfg.seed, _TEST_GRID),
                          cfg.n_eval_times, brier=cfg.brier)


def run_job(cfg: StudyConfig, job: Job, test: SnapshotDataset) -> tuple[dict, dict]:
    """Train and evaluate one replicate; returns ``(csv_row, manifest)``."""
    row = {"policy": job.policy, "M": job.M, "N": job.N, "replicate": job.replicate,
           "population_seed": _population_seed(cfg, job.N, job.replicate),
           "train_seed": derive_seed(cfg.seed, _TRAIN, job.replicate)}
    try:
        est, population = fit_job(cfg, job)
    except TrainingError as exc:
        row.update(status="error", best_epoch="", best_val_loss="", mean_train_samples="",
                   test_nll="nan", ibs="nan")
        return row, exc.manifest
    manifest = est.manifest_
    if set(population.ids) & set(test.ids):
        raise RuntimeError("test individuals overlap training individuals")
    report = evaluate_job(cfg, est, test)
    primary = report.primary
    row.update(
        status="ok",
        best_epoch=manifest["best_epoch"],
        best_val_loss=repr(float(manifest["best_val_loss"])),
        mean_train_samples=repr(float(np.mean(manifest["n_train_samples"]))),
        test_nll=repr(-report.quasi_log_likelihood[primary]),
    )
    for name, value in report.quasi_log_likelihood.items():
        if name != primary:
            row[f"test_nll_{name}"] = repr(-value)
    row["ibs"] = repr(report.integrated_brier.get(primary, float("nan")))
    manifest = dict(manifest, evaluation=asdict(report))
    return row, manifest


def _run_job_star(args):
    return run_job(*args)


def _single_thread_blas():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers, initializer=_single_thread_blas) as pool:
        return list(pool.map(fn, items))


def run_study(cfg: StudyConfig, out_dir, workers: int | None = None) -> Path:
    """Run every job of the study and write ``results.csv``, one manifest per
    job under ``runs/`` and ``study.json``.  Returns the results path."""
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    test = test_population(cfg)
    jobs = study_jobs(cfg)
    results = _map(_run_job_star, [(cfg, job, test) for job in jobs], workers or int(cfg.workers))

    rows = [row for row, _ in results]
    columns = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    path = out / "results.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", restval="")
        w.writeheader()
        w.writerows(rows)
    for job, (_, manifest) in zip(jobs, results):
        name = f"{job.policy}_M{job.M}_N{job.N}_r{job.replicate}.json"
        (out / "runs" / name).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    summary = {"config": cfg.to_dict(), "results": path.name, "n_jobs": len(jobs),
               "runs": [f"runs/{j.policy}_M{j.M}_N{j.N}_r{j.replicate}.json" for j in jobs]}
    (out / "study.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return path


@dataclass
class SweepResult:
    learning_rates: list[float]
    mean_losses: list[float]
    losses: list[list[float]]

    @property
    def best_learning_rate(self) -> float:
        return self.learning_rates[int(np.nanargmin(self.mean_losses))]


def _sweep_one(args):
    source, params = args
    if isinstance(source, SimConfig):
        source = simulate_population(source)[0]
    est = EnergySurvivalEstimator(**params)
    try:
        est.fit(source)
    except TrainingError:
        return float("nan")
    return float(est.manifest_["best_val_loss"])


def sweep(data, config: TrainConfig, seed: int = 0, workers: int = 1) -> SweepResult:
    """Mean best-validation loss per learning rate over ``config.replicates``
    independently seeded representations.

    ``data`` is either a dataset (representations differ in split, grids and
    initialization) or a :class:`SimConfig` (each replicate re-simulates
    the population with a fresh seed).
    """
    rates = [float(lr) for lr in config.learning_rates()]
    tasks = []
    for lr in rates:
        for r in range(int(config.replicates)):
            params = config.estimator_params()
            params.update(learning_rate=lr, random_state=derive_seed(seed, _TRAIN, r))
            source = data
            if isinstance(data, SimConfig):
                source = SimConfig(**{**asdict(data), "seed": derive_seed(seed, _POPULATION, data.n_individuals, r)})
            tasks.append((source, params))
    losses = _map(_sweep_one, tasks, workers)
    per_rate = [losses[i * int(config.replicates):(i + 1) * int(config.replicates)] for i in range(len(rates))]
    means = [float(np.nanmean(v)) if np.any(np.isfinite(v)) else float("nan") for v in per_rate]
    return SweepResult(rates, means, per_rate)
