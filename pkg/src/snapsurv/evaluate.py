"""Censoring-aware evaluation: Kaplan-Meier, quasi-log-likelihood, Brier
score and integrated Brier score."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .dataset import FlatSamples, SnapshotDataset, flatten
from .energy import EnergySurvivalModel, log_likelihood_terms, survival_curve
from .resample import GridPolicy, SamplingGrid, homogeneous_resample, make_grid

__all__ = [
    "KaplanMeierCurve",
    "kaplan_meier",
    "censoring_kaplan_meier",
    "quasi_log_likelihood",
    "brier_scores",
    "brier_curve",
    "integrated_brier",
    "EvaluationReport",
    "evaluate_model",
]


@dataclass(frozen=True, eq=False)
class KaplanMeierCurve:
    """Right-continuous product-limit step function, 1 before the first
    event time.  With no event times the curve is identically 1."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)] if self.values.size else 1.0, 1.0)
        return out if out.ndim else float(out)

    def left_limit(self, t):
        """``S(t-)``: the value just before ``t``."""
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side="left") - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)] if self.values.size else 1.0, 1.0)
        return out if out.ndim else float(out)


def kaplan_meier(times, events) -> KaplanMeierCurve:
    """Product-limit estimate ``prod_{t_j <= t} (1 - d_j / n_j)``.

    Tied event times are aggregated; subjects with recorded time ``t_j``
    are at risk at ``t_j``.
    """
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    events = np.asarray(events, dtype=bool).reshape(-1)
    if times.shape != events.shape:
        raise ValueError("times and events must have the same length")
    if times.size == 0:
        raise ValueError("need at least one observation")
    if np.any(~(times > 0)):
        raise ValueError("recorded times must be positive")
    event_times = np.unique(times[events])
    if event_times.size == 0:
        return KaplanMeierCurve(event_times, np.array([]))
    sorted_times = np.sort(times)
    at_risk = times.size - np.searchsorted(sorted_times, event_times, side="left")
    sorted_events = np.sort(times[events])
    deaths = (np.searchsorted(sorted_events, event_times, side="right")
              - np.searchsorted(sorted_events, event_times, side="left"))
    values = np.cumprod(1.0 - deaths / at_risk)
    return KaplanMeierCurve(event_times, values)


def censoring_kaplan_meier(times, events) -> KaplanMeierCurve:
    """Kaplan-Meier estimate of the censoring distribution (censorings are
    the events)."""
    return kaplan_meier(times, ~np.asarray(events, dtype=bool))


def quasi_log_likelihood(model: EnergySurvivalModel, samples: FlatSamples) -> float:
    """Mean per-sample log quasi-likelihood (``log f`` for events, ``log S``
    for censorings)."""
    return float(np.mean(log_likelihood_terms(model, samples)))


def brier_scores(survival_pred, target_time, event, eval_times, censoring: KaplanMeierCurve):
    """Inverse-probability-of-censoring weighted Brier score at each time.

    Parameters
    ----------
    survival_pred : ndarray of shape (n_samples, n_times)
        Predicted survival at ``eval_times``.
    target_time, event : ndarray of shape (n_samples,)
    eval_times : ndarray of shape (n_times,)
    censoring : KaplanMeierCurve
        Censoring survival ``G``; ``G(t)`` weights samples still at risk and
        the left limit ``G(tau-)`` weights observed failures.

    Returns
    -------
    ndarray of shape (n_times,)
        Scores averaged over all samples.  Terms whose weight ``G`` is zero
        are dropped with a warning.
    """
    pred = np.asarray(survival_pred, dtype=np.float64)
    tau = np.asarray(target_time, dtype=np.float64).reshape(-1)
    event = np.asarray(event, dtype=bool).reshape(-1)
    eval_times = np.asarray(eval_times, dtype=np.float64).reshape(-1)
    if pred.shape != (tau.shape[0], eval_times.shape[0]):
        raise ValueError(f"predictions must have shape {(tau.shape[0], eval_times.shape[0])}")
    n = tau.shape[0]
    g_t = np.asarray(censoring(eval_times), dtype=np.float64).reshape(-1)
    g_tau = np.asarray(censoring.left_limit(tau), dtype=np.float64).reshape(-1)

    alive = tau[:, None] > eval_times[None, :]
    failed = (tau[:, None] <= eval_times[None, :]) & event[:, None]
    dropped = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        w_alive = np.where(g_t > 0, 1.0 / g_t, 0.0)
        w_failed = np.where(g_tau > 0, 1.0 / g_tau, 0.0)
    dropped += int(np.sum(alive[:, g_t <= 0]))
    dropped += int(np.sum(failed[g_tau <= 0]))
    if dropped:
        warnings.warn(f"{dropped} Brier terms dropped where the censoring survival is zero",
                      RuntimeWarning, stacklevel=2)
    first = np.where(alive, (1.0 - pred) ** 2, 0.0) * w_alive[None, :]
    second = np.where(failed, pred ** 2, 0.0) * w_failed[:, None]
    return (first + second).sum(axis=0) / n


def _censoring_for(samples: FlatSamples) -> KaplanMeierCurve:
    if samples.mode == "total":
        _, first = np.unique(samples.owner, return_index=True)
        return censoring_kaplan_meier(samples.tau[first], samples.event[first])
    return censoring_kaplan_meier(samples.target_time, samples.event)


def brier_curve(model: EnergySurvivalModel, samples: FlatSamples, eval_times,
                censoring: KaplanMeierCurve | None = None):
    """Brier score of ``model`` on flat samples at ``eval_times``.

    ``censoring`` defaults to the Kaplan-Meier censoring estimate of the
    individuals behind ``samples`` (one entry per individual in total-life
    mode).  Returns ``(eval_times, scores)``.
    """
    eval_times = np.asarray(eval_times, dtype=np.float64).reshape(-1)
    if censoring is None:
        censoring = _censoring_for(samples)
    pred = survival_curve(model, eval_times, samples.contexts)
    return eval_times, brier_scores(pred, samples.target_time, samples.event, eval_times, censoring)


def integrated_brier(times, scores, horizon: float | None = None) -> float:
    """Trapezoidal integral of a Brier curve over ``[0, horizon]`` divided by
    ``horizon`` (default: the last curve time)."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if horizon is None:
        horizon = float(times[-1])
    if times[0] > 0 or times[-1] < horizon:
        raise ValueError("curve must cover [0, horizon]")
    keep = times <= horizon
    return float(trapezoid(scores[keep], times[keep]) / horizon)


@dataclass
class EvaluationReport:
    quasi_log_likelihood: dict[str, float]
    integrated_brier: dict[str, float]
    sample_counts: dict[str, int]
    brier_times: list[float] = field(default_factory=list)
    brier_scores: list[float] = field(default_factory=list)
    primary: str = ""

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def test_resamplings(dataset: SnapshotDataset, single_times=(0.25, 0.5), grid_points=15,
                     t_min=0.1, t_max=1.0, seed=0):
    """The canonical test-set resamplings: one grid per single time plus one
    random grid of ``grid_points`` points on ``[t_min, t_max]``."""
    out = {}
    for t in single_times:
        out[f"t={float(t)!r}"] = homogeneous_resample(dataset, SamplingGrid([float(t)]))
    if grid_points:
        grid = make_grid(GridPolicy("random", t_min, t_max, int(grid_points), seed), epoch=0)
        out[f"random{int(grid_points)}"] = homogeneous_resample(dataset, grid)
    return out


test_resamplings.__test__ = False


def evaluate_model(model: EnergySurvivalModel, dataset: SnapshotDataset, single_times=(0.25, 0.5),
                   grid_points=15, t_min=0.1, t_max=1.0, seed=0, n_eval_times=100,
                   resample=True, brier=True) -> EvaluationReport:
    """Quasi-log-likelihood and Brier metrics on the canonical resamplings of
    ``dataset`` (or on ``dataset`` as given when ``resample`` is False).

    The reported Brier curve is that of the last (random-grid) resampling.
    """
    views = (test_resamplings(dataset, single_times, grid_points, t_min, t_max, seed)
             if resample else {"as-is": dataset})
    qll, ibs, counts = {}, {}, {}
    horizon = float(dataset.taus.max())
    eval_times = np.linspace(0.0, horizon, int(n_eval_times))
    curve_t, curve_v = eval_times, np.zeros_like(eval_times)
    for name, view in views.items():
        flat = flatten(view, model.mode)
        counts[name] = len(flat)
        if len(flat) == 0:
            continue
        qll[name] = quasi_log_likelihood(model, flat)
        if brier:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                curve_t, curve_v = brier_curve(model, flat, eval_times)
            ibs[name] = integrated_brier(curve_t, curve_v, horizon)
    primary = list(views)[-1]
    return EvaluationReport(qll, ibs, counts, [float(t) for t in curve_t],
                            [float(v) for v in curve_v], primary)
