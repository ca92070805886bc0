"""Scikit-learn style estimator that trains the energy survival model by
maximum quasi-likelihood on (re)sampled snapshot data."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import __version__
from .dataset import MODES, FlatSamples, SnapshotDataset, flatten
from .energy import (
    EnergySurvivalModel,
    QuadratureConfig,
    Standardizer,
    batch_nll,
    log_likelihood_terms,
    survival_curve,
)
from .net import AdamState, MlpConfig, NonFiniteError, adam_step, init_params
from .resample import GridPolicy, make_grid, resample_with_coverage

logger = logging.getLogger(__name__)

__all__ = [
    "TrainingError",
    "TrainConfig",
    "derive_seed",
    "split_by_individual",
    "EnergySurvivalEstimator",
    "train",
]

GRID_CHOICES = ("fixed", "random", "none")

# purpose codes for derived seeds
_SPLIT, _INIT, _GRID, _SHUFFLE, _VALGRID = 1, 2, 3, 4, 5


class TrainingError(RuntimeError):
    """Training of one replicate failed; ``manifest`` holds what was logged."""

    def __init__(self, message, manifest=None):
        super().__init__(message)
        self.manifest = manifest or {}


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def split_by_individual(dataset: SnapshotDataset, val_fraction: float, seed: int):
    """Disjoint ``(train, validation)`` partition of the individuals.

    The validation set holds ``round(N * val_fraction)`` individuals, but
    at least one and at most ``N - 1``.
    """
    n = len(dataset)
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie strictly between 0 and 1")
    if n < 2:
        raise ValueError(f"need at least 2 individuals to split, got {n}")
    n_val = min(max(int(round(n * val_fraction)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return dataset.subset(train_idx), dataset.subset(val_idx)


@dataclass
class TrainConfig:
    """Training settings; the first block maps one-to-one onto
    :class:`EnergySurvivalEstimator` parameters."""

    mode: str = "total"
    hidden_layers: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    dropout: float = 0.0
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 128
    grid: str = "random"
    t_min: float = 0.1
    t_max: float = 1.0
    num_points: int = 8
    grid_formula: str = "stratified"
    quad_points: int = 257
    t_upper: float | None = None
    t_upper_factor: float = 1.5
    val_fraction: float = 0.15
    random_state: int = 0
    # sweep / replicate settings
    lr_sweep_count: int = 15
    lr_sweep_low: float = 1e-2
    lr_sweep_high: float = 0.25
    replicates: int = 40

    _SWEEP_FIELDS = ("lr_sweep_count", "lr_sweep_low", "lr_sweep_high", "replicates")

    def __post_init__(self):
        self.hidden_layers = tuple(int(h) for h in self.hidden_layers)
        if int(self.epochs) < 1:
            raise ValueError("epochs >= 1 required")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly between 0 and 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def estimator_params(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in self._SWEEP_FIELDS}

    def learning_rates(self) -> np.ndarray:
        n = int(self.lr_sweep_count)
        if n < 1:
            raise ValueError("lr_sweep_count must be at least 1")
        if n == 1:
            return np.array([float(self.lr_sweep_low)])
        return np.geomspace(self.lr_sweep_low, self.lr_sweep_high, n)


class EnergySurvivalEstimator(BaseEstimator):
    """Usage-specific survival model fitted by maximum quasi-likelihood.

    Every snapshot is one observation with features ``(t0, x(t0))``.  The
    training individuals are resampled on a sampling grid before training
    (``grid="fixed"``) or on a fresh random grid each epoch
    (``grid="random"``); ``grid="none"`` trains on the snapshots as given.
    The validation individuals are resampled once, on a frozen random grid,
    and the epoch with the lowest validation loss is kept.

    Parameters
    ----------
    mode : {"total", "remaining"}
        Predict total life ``T`` or remaining life ``T - t0``.
    hidden_layers : tuple of int
    activation : {"relu", "tanh"}
    dropout : float
        Inverted-dropout rate on hidden activations during training.
    learning_rate : float
        Adam step size.
    epochs : int
    batch_size : int
        Flat samples per Adam step; 0 means full batch.
    grid : {"fixed", "random", "none"}
    t_min, t_max : float
        Snapshot-time range of the sampling grids.
    num_points : int
        Grid size ``M``.
    grid_formula : {"stratified", "literal"}
    quad_points : int
        Trapezoid nodes on ``[0, t_upper]``.
    t_upper : float or None
        Support horizon; by default ``t_upper_factor`` times the largest
        recorded time among the training and validation individuals.
    t_upper_factor : float
    val_fraction : float
        Share of individuals held out for validation when ``fit`` is not
        given a validation set.
    random_state : int
    """

    def __init__(self, mode="total", hidden_layers=(32, 32), activation="relu", dropout=0.0,
                 learning_rate=0.01, epochs=200, batch_size=128, grid="random", t_min=0.1,
                 t_max=1.0, num_points=8, grid_formula="stratified", quad_points=257,
                 t_upper=None, t_upper_factor=1.5, val_fraction=0.15, random_state=0):
        self.mode = mode
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.grid = grid
        self.t_min = t_min
        self.t_max = t_max
        self.num_points = num_points
        self.grid_formula = grid_formula
        self.quad_points = quad_points
        self.t_upper = t_upper
        self.t_upper_factor = t_upper_factor
        self.val_fraction = val_fraction
        self.random_state = random_state

    # -- helpers ---------------------------------------------------------

    def _validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.grid not in GRID_CHOICES:
            raise ValueError(f"grid must be one of {GRID_CHOICES}")
        if int(self.epochs) < 1:
            raise ValueError("epochs >= 1 required")
        if int(self.batch_size) < 0:
            raise ValueError("batch_size must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def grid_policy(self, kind=None) -> GridPolicy:
        return GridPolicy(kind or self.grid, self.t_min, self.t_max, int(self.num_points),
                          derive_seed(self.random_state, _GRID), self.grid_formula)

    def validation_view(self, val: SnapshotDataset):
        if self.grid == "none":
            return val, None
        policy = GridPolicy("random", self.t_min, self.t_max, int(self.num_points),
                            derive_seed(self.random_state, _VALGRID), self.grid_formula)
        grid = make_grid(policy, epoch=0)
        return resample_with_coverage(val, grid)[0], grid

    # -- estimator API ---------------------------------------------------

    def fit(self, X: SnapshotDataset, y=None, validation: SnapshotDataset | None = None):
        """Train on the individuals in ``X``.

        ``validation`` is an optional held-out dataset; otherwise
        ``val_fraction`` of ``X`` is split off by individual.
        """
        self._validate()
        seeds = {
            "random_state": int(self.random_state),
            "split": derive_seed(self.random_state, _SPLIT),
            "init": derive_seed(self.random_state, _INIT),
            "grid": derive_seed(self.random_state, _GRID),
            "shuffle": derive_seed(self.random_state, _SHUFFLE),
            "validation_grid": derive_seed(self.random_state, _VALGRID),
        }
        if validation is None:
            train_ds, val_ds = split_by_individual(X, self.val_fraction, seeds["split"])
        else:
            train_ds, val_ds = X, validation
        if train_ds.feature_dim != val_ds.feature_dim:
            raise ValueError("training and validation data differ in feature_dim")
        overlap = set(train_ds.ids) & set(val_ds.ids)
        if overlap:
            raise ValueError(f"individual {sorted(overlap)[0]!r} in both training and validation data")

        policy = self.grid_policy() if self.grid != "none" else None
        val_view, val_grid = self.validation_view(val_ds)
        val_flat = flatten(val_view, self.mode)
        if len(val_flat) == 0:
            raise ValueError("validation set has no samples after resampling")

        def epoch_data(epoch):
            if policy is None:
                return flatten(train_ds, self.mode), None, None
            grid = make_grid(policy, epoch)
            view, cov = resample_with_coverage(train_ds, grid)
            return flatten(view, self.mode), grid, cov

        flat, grid, coverage = epoch_data(0)
        if len(flat) == 0:
            raise ValueError("training set has no samples after resampling")
        standardizer = Standardizer.fit(flat)
        t_upper = self.t_upper
        if t_upper is None:
            t_upper = float(self.t_upper_factor) * float(max(train_ds.taus.max(), val_ds.taus.max()))
        quad = QuadratureConfig(float(t_upper), int(self.quad_points))
        net_cfg = MlpConfig(1 + 1 + train_ds.feature_dim, tuple(self.hidden_layers),
                            self.activation, float(self.dropout), seeds["init"])
        model = EnergySurvivalModel(init_params(net_cfg), quad, standardizer, self.mode)
        adam = AdamState(float(self.learning_rate))
        rng = np.random.default_rng(seeds["shuffle"])

        manifest = {
            "version": __version__,
            "config": self.get_params(),
            "seeds": seeds,
            "t_upper": quad.t_upper,
            "n_train_individuals": len(train_ds),
            "n_val_individuals": len(val_ds),
            "validation_grid": val_grid.tolist() if val_grid is not None else None,
            "n_val_samples": len(val_flat),
            "coverage": coverage.as_dict() if coverage is not None else None,
            "grids": [],
            "n_train_samples": [],
            "train_losses": [],
            "val_losses": [],
            "best_epoch": None,
            "best_val_loss": None,
            "status": "running",
        }
        best_theta, best_val = None, np.inf
        for epoch in range(int(self.epochs)):
            if epoch > 0 and self.grid == "random":
                flat, grid, _ = epoch_data(epoch)
            if epoch == 0 or self.grid == "random":
                if grid is not None:
                    manifest["grids"].append(grid.tolist())
            try:
                train_loss, model, adam = self._run_epoch(model, adam, flat, rng)
                val_loss = -float(np.mean(log_likelihood_terms(model, val_flat)))
            except NonFiniteError as exc:
                manifest["status"] = f"error: {exc}"
                raise TrainingError(f"epoch {epoch}: {exc}", manifest) from exc
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                manifest["status"] = "error: non-finite loss"
                raise TrainingError(f"epoch {epoch}: non-finite loss", manifest)
            manifest["n_train_samples"].append(len(flat))
            manifest["train_losses"].append(train_loss)
            manifest["val_losses"].append(val_loss)
            if val_loss < best_val:
                best_val, best_theta = val_loss, model.params.flatten()
                manifest["best_epoch"], manifest["best_val_loss"] = epoch, val_loss
            logger.debug("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)

        manifest["status"] = "ok"
        self.model_ = model.with_params(type(model.params).unflatten(model.params.config, best_theta))
        self.manifest_ = manifest
        self.best_epoch_ = manifest["best_epoch"]
        self.train_losses_ = np.array(manifest["train_losses"])
        self.val_losses_ = np.array(manifest["val_losses"])
        return self

    def _run_epoch(self, model, adam, flat: FlatSamples, rng):
        n = len(flat)
        if n == 0:
            return float("nan"), model, adam
        bs = int(self.batch_size) or n
        order = rng.permutation(n)
        total = 0.0
        use_dropout = float(self.dropout) > 0
        for start in range(0, n, bs):
            batch = flat.take(order[start:start + bs])
            loss, grad = batch_nll(model, batch, rng if use_dropout else None)
            params, adam = adam_step(adam, model.params, grad)
            model = model.with_params(params)
            total += loss * len(batch)
        return total / n, model, adam

    def predict_survival(self, times, t0, covariates) -> np.ndarray:
        """Survival at ``times`` for each ``(t0, covariates)`` row; shape
        ``(n, len(times))``."""
        check_is_fitted(self, "model_")
        t0 = np.asarray(t0, dtype=np.float64).reshape(-1)
        cov = np.asarray(covariates, dtype=np.float64).reshape(t0.shape[0], -1)
        return survival_curve(self.model_, times, np.column_stack([t0, cov]))

    def score_samples(self, samples: FlatSamples) -> np.ndarray:
        check_is_fitted(self, "model_")
        return log_likelihood_terms(self.model_, samples)

    def score(self, X, y=None) -> float:
        """Mean quasi-log-likelihood of ``X`` (a dataset, flattened as given,
        or flat samples)."""
        samples = X if isinstance(X, FlatSamples) else flatten(X, self.mode)
        return float(np.mean(self.score_samples(samples)))


def train(train_ds: SnapshotDataset, val_ds: SnapshotDataset | None, config: TrainConfig):
    """Fit one model; returns ``(model, manifest)``."""
    est = EnergySurvivalEstimator(**config.estimator_params())
    est.fit(train_ds, validation=val_ds)
    return est.model_, est.manifest_
