"""Energy-based survival model.

The network output ``E(t; t0, x)`` defines the density
``f(t) = exp(-E(t)) / Z`` on ``[0, t_upper]``; ``Z`` and the survival
function are trapezoidal sums over a uniform grid, evaluated in log space.
Every sample also gets one exact energy evaluation at its own target time,
so event likelihoods are not quantized to the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .dataset import MODES, FlatSamples
from .net import MlpParams, NonFiniteError, backward, dropout_masks, forward

__all__ = [
    "SupportError",
    "QuadratureConfig",
    "Standardizer",
    "EnergySurvivalModel",
    "energy",
    "log_normalizer",
    "survival",
    "survival_curve",
    "cumulative_density",
    "log_density",
    "log_likelihood_terms",
    "batch_nll",
]


class SupportError(ValueError):
    """A time lies outside the support ``[0, t_upper]`` of the model."""


@dataclass(frozen=True)
class QuadratureConfig:
    t_upper: float
    num_points: int = 257
    rule: str = "trapezoid"

    def __post_init__(self):
        if not (np.isfinite(self.t_upper) and self.t_upper > 0):
            raise ValueError("t_upper must be positive")
        if int(self.num_points) < 2:
            raise ValueError("quadrature needs at least 2 points")
        if self.rule != "trapezoid":
            raise ValueError("only the trapezoid rule is supported")

    @property
    def step(self) -> float:
        return self.t_upper / (self.num_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_upper, int(self.num_points))

    @property
    def log_weights(self) -> np.ndarray:
        w = np.full(int(self.num_points), self.step)
        w[0] = w[-1] = self.step / 2
        return np.log(w)


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Affine input scaling for ``[t, t0, x_1, ..., x_d]`` rows."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        scale = np.asarray(self.scale, dtype=np.float64).reshape(-1)
        if mean.shape != scale.shape:
            raise ValueError("mean and scale must have the same length")
        if np.any(~(scale > 0)):
            raise ValueError("scales must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, samples: FlatSamples) -> "Standardizer":
        """Per-column mean and standard deviation of target time, ``t0`` and
        covariates; constant columns get unit scale."""
        cols = np.column_stack([samples.target_time, samples.t0, samples.covariates])
        mean = cols.mean(axis=0)
        scale = cols.std(axis=0)
        scale[~(scale > 1e-12)] = 1.0
        return cls(mean, scale)


@dataclass(eq=False)
class EnergySurvivalModel:
    params: MlpParams
    quadrature: QuadratureConfig
    standardizer: Standardizer
    mode: str = "total"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.standardizer.dim != self.params.config.input_dim:
            raise ValueError(
                f"standardizer has {self.standardizer.dim} columns, "
                f"network expects {self.params.config.input_dim}"
            )

    @property
    def context_dim(self) -> int:
        return self.params.config.input_dim - 1

    def with_params(self, params: MlpParams) -> "EnergySurvivalModel":
        return EnergySurvivalModel(params, self.quadrature, self.standardizer, self.mode)


def _contexts(model: EnergySurvivalModel, contexts) -> np.ndarray:
    c = np.asarray(contexts, dtype=np.float64)
    if c.ndim == 1:
        c = c.reshape(1, -1)
    if c.shape[1] != model.context_dim:
        raise ValueError(f"contexts have {c.shape[1]} columns, expected {model.context_dim}")
    return c


def _inputs(model: EnergySurvivalModel, times: np.ndarray, contexts: np.ndarray) -> np.ndarray:
    """Standardized network inputs of shape ``(B * K, 1 + c)`` for times of
    shape ``(B, K)``."""
    B, K = times.shape
    st = model.standardizer
    x = np.empty((B, K, st.dim))
    # overflow surfaces as a NonFiniteError naming the row in forward()
    with np.errstate(over="ignore", invalid="ignore"):
        x[:, :, 0] = (times - st.mean[0]) / st.scale[0]
        x[:, :, 1:] = ((contexts - st.mean[1:]) / st.scale[1:])[:, None, :]
    return x.reshape(B * K, st.dim)


def _energies(model, times, contexts, masks=None):
    B, K = times.shape
    x = _inputs(model, times, contexts)
    if masks is not None:
        masks = [np.repeat(m, K, axis=0) for m in masks]
    e, cache = forward(model.params, x, masks)
    e = e.reshape(B, K)
    if not np.all(np.isfinite(e)):
        raise NonFiniteError("non-finite energy")
    return e, cache


def energy(model: EnergySurvivalModel, times, contexts) -> np.ndarray:
    """Energies at ``times`` (shape ``(K,)`` shared, or ``(B, K)``) for each
    context row."""
    c = _contexts(model, contexts)
    t = np.asarray(times, dtype=np.float64)
    if t.ndim <= 1:
        t = np.broadcast_to(t.reshape(1, -1), (c.shape[0], t.size))
    return _energies(model, t, c)[0]


def _grid_energies(model, contexts):
    nodes = model.quadrature.nodes
    return energy(model, nodes, contexts)


def _tail_log_weights(quad: QuadratureConfig, y: np.ndarray):
    """Log weights of the trapezoid sum over ``[y, t_upper]``.

    Returns ``(lw_grid, lw_target)`` with shapes ``(B, Q)`` and ``(B,)``: the
    partial cell ``[y, t_{k+1}]`` uses the exact energy at ``y`` and at the
    next node; full cells follow.
    """
    nodes = quad.nodes
    Q = nodes.shape[0]
    h = quad.step
    k = np.clip(np.searchsorted(nodes, y, side="right") - 1, 0, Q - 2)
    delta = np.maximum(nodes[k + 1] - y, 0.0)
    idx = np.arange(Q)[None, :]
    w = np.where(idx > k[:, None], h, 0.0)
    w[:, -1] = np.where(k + 1 < Q - 1, h / 2, 0.0)
    nxt = k + 1
    rows = np.arange(y.shape[0])
    w[rows, nxt] = np.where(nxt < Q - 1, h / 2, 0.0) + delta / 2
    with np.errstate(divide="ignore"):
        return np.log(w), np.log(delta / 2)


def _log_survival_from_energies(quad, e_grid, e_y, y, log_z):
    """Log survival at ``y`` plus the tail softmax used for gradients."""
    lw_grid, lw_y = _tail_log_weights(quad, y)
    a = np.concatenate([lw_grid - e_grid, (lw_y - e_y)[:, None]], axis=1)
    with np.errstate(divide="ignore"):
        log_tail = logsumexp(a, axis=1)
    log_s = log_tail - log_z
    log_s = np.where(y <= 0, 0.0, log_s)
    log_s = np.where(y >= quad.t_upper, -np.inf, np.minimum(log_s, 0.0))
    return log_s, a, log_tail


def log_normalizer(model: EnergySurvivalModel, contexts) -> np.ndarray:
    """``log Z`` for each context row, truncated at ``t_upper``."""
    c = _contexts(model, contexts)
    e = _grid_energies(model, c)
    return logsumexp(model.quadrature.log_weights - e, axis=1)


def _times_for(t, n):
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.shape[0] == 1:
        t = np.repeat(t, n)
    if t.shape[0] != n:
        raise ValueError("need one time per context row (or a single time)")
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise SupportError("times must be finite and nonnegative")
    return t


def survival(model: EnergySurvivalModel, t, contexts) -> np.ndarray:
    """Survival probability at ``t`` (scalar or one per context row).

    ``S(0) = 1`` exactly and ``S(t) = 0`` for ``t >= t_upper``.
    """
    c = _contexts(model, contexts)
    y = _times_for(t, c.shape[0])
    nodes = model.quadrature.nodes
    e = energy(model, np.concatenate([np.broadcast_to(nodes, (c.shape[0], nodes.size)),
                                      y[:, None]], axis=1), c)
    e_grid, e_y = e[:, :-1], e[:, -1]
    log_z = logsumexp(model.quadrature.log_weights - e_grid, axis=1)
    log_s, _, _ = _log_survival_from_energies(model.quadrature, e_grid, e_y, y, log_z)
    return np.clip(np.exp(log_s), 0.0, 1.0)


def survival_curve(model: EnergySurvivalModel, times, contexts, chunk: int = 2048) -> np.ndarray:
    """Survival at every time in ``times`` (shape ``(K,)``) for each context;
    returns ``(B, K)``.  Grid energies are shared across the times."""
    c = _contexts(model, contexts)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if np.any(~np.isfinite(times)) or np.any(times < 0):
        raise SupportError("times must be finite and nonnegative")
    quad = model.quadrature
    nodes = quad.nodes
    out = np.empty((c.shape[0], times.shape[0]))
    for start in range(0, c.shape[0], chunk):
        cc = c[start:start + chunk]
        B = cc.shape[0]
        grid_t = np.broadcast_to(nodes, (B, nodes.size))
        e = energy(model, np.concatenate([grid_t, np.broadcast_to(times, (B, times.size))], axis=1), cc)
        e_grid = e[:, :nodes.size]
        log_z = logsumexp(quad.log_weights - e_grid, axis=1)
        for j, t in enumerate(times):
            y = np.full(B, t)
            log_s, _, _ = _log_survival_from_energies(quad, e_grid, e[:, nodes.size + j], y, log_z)
            out[start:start + B, j] = np.clip(np.exp(log_s), 0.0, 1.0)
    return out


def cumulative_density(model: EnergySurvivalModel, contexts) -> np.ndarray:
    """Cumulative trapezoid of the density at every quadrature node,
    shape ``(B, Q)``; the last column is the total mass."""
    c = _contexts(model, contexts)
    e = _grid_energies(model, c)
    quad = model.quadrature
    log_z = logsumexp(quad.log_weights - e, axis=1)
    f = np.exp(-e - log_z[:, None])
    cells = quad.step / 2 * (f[:, 1:] + f[:, :-1])
    return np.concatenate([np.zeros((c.shape[0], 1)), np.cumsum(cells, axis=1)], axis=1)


def log_density(model: EnergySurvivalModel, t, contexts) -> np.ndarray:
    """``-E(t) - log Z``; ``t`` must lie in ``[0, t_upper]``."""
    c = _contexts(model, contexts)
    y = _times_for(t, c.shape[0])
    if np.any(y > model.quadrature.t_upper):
        raise SupportError(
            f"time {float(y.max())!r} outside model support [0, {model.quadrature.t_upper!r}]"
        )
    nodes = model.quadrature.nodes
    e = energy(model, np.concatenate([np.broadcast_to(nodes, (c.shape[0], nodes.size)),
                                      y[:, None]], axis=1), c)
    log_z = logsumexp(model.quadrature.log_weights - e[:, :-1], axis=1)
    return -e[:, -1] - log_z


def _check_targets(model, samples: FlatSamples):
    if len(samples) == 0:
        raise ValueError("no samples")
    if samples.mode != model.mode:
        raise ValueError(f"samples are in {samples.mode!r} mode, model in {model.mode!r} mode")
    y = samples.target_time
    if np.any(~np.isfinite(y)) or np.any(y < 0):
        raise SupportError("target times must be finite and nonnegative")
    t_up = model.quadrature.t_upper
    if np.any(samples.event & (y > t_up)):
        raise SupportError(
            f"event at t={float(y[samples.event].max())!r} outside model support; raise t_upper"
        )
    if np.any(~samples.event & (y >= t_up)):
        raise SupportError(
            f"censoring at t={float(y[~samples.event].max())!r} has zero survival "
            f"under t_upper={t_up!r}; raise t_upper"
        )


def _nll_core(model, samples: FlatSamples, masks=None, want_grad=True):
    """Per-sample negative log-likelihood terms and energy cotangents."""
    _check_targets(model, samples)
    quad = model.quadrature
    nodes = quad.nodes
    Q = nodes.shape[0]
    y = samples.target_time
    B = y.shape[0]
    times = np.empty((B, Q + 1))
    times[:, :Q] = nodes
    times[:, Q] = y
    e, cache = _energies(model, times, samples.contexts, masks)
    e_grid, e_y = e[:, :Q], e[:, Q]
    a_z = quad.log_weights - e_grid
    log_z = logsumexp(a_z, axis=1)

    event = samples.event
    nll = np.empty(B)
    nll[event] = e_y[event] + log_z[event]
    cens = ~event
    cot = None
    if want_grad:
        cot = np.zeros((B, Q + 1))
        p = softmax(a_z, axis=1)
        cot[:, :Q] = -p
        cot[event, Q] = 1.0
    if cens.any():
        log_s, a_tail, _ = _log_survival_from_energies(
            quad, e_grid[cens], e_y[cens], y[cens], log_z[cens]
        )
        nll[cens] = -log_s
        if want_grad:
            r = softmax(a_tail, axis=1)
            at_zero = y[cens] <= 0
            r[at_zero] = 0.0
            sub = cot[cens]
            sub[:, :Q] += r[:, :Q]
            sub[:, Q] = r[:, Q]
            sub[at_zero, :Q] = 0.0
            cot[cens] = sub
    if not np.all(np.isfinite(nll)):
        raise NonFiniteError("non-finite likelihood term")
    return nll, cot, cache


def log_likelihood_terms(model: EnergySurvivalModel, samples: FlatSamples) -> np.ndarray:
    """Per-sample ``log f(target)`` for events and ``log S(target)`` for
    censorings."""
    nll, _, _ = _nll_core(model, samples, want_grad=False)
    return -nll


def batch_nll(model: EnergySurvivalModel, samples: FlatSamples, rng: np.random.Generator | None = None):
    """Mean negative log quasi-likelihood and its gradient w.r.t. the flat
    network parameters.

    With ``rng`` given and a nonzero dropout rate, one dropout mask is drawn
    per sample and shared by all its energy evaluations.
    """
    masks = None
    if rng is not None:
        masks = dropout_masks(model.params.config, len(samples), rng)
    nll, cot, cache = _nll_core(model, samples, masks)
    B = nll.shape[0]
    grad = backward(model.params, cache, cot.reshape(-1) / B)
    return float(nll.mean()), grad
