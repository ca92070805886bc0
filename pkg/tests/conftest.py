import numpy as np
import pytest

from snapsurv.dataset import IndividualRecord, SnapshotDataset
from snapsurv.energy import EnergySurvivalModel, QuadratureConfig, Standardizer
from snapsurv.net import MlpConfig, MlpParams, init_params


def affine_energy_model(slope=0.0, offset=0.0, t_upper=1.0, num_points=257, n_features=1,
                        mode="total"):
    """Model whose energy is ``slope * t + offset`` regardless of context."""
    cfg = MlpConfig(2 + n_features, hidden_layers=())
    w = np.zeros((2 + n_features, 1))
    w[0, 0] = slope
    params = MlpParams.from_layers(cfg, [w], [np.array([offset])])
    return EnergySurvivalModel(params, QuadratureConfig(t_upper, num_points),
                               Standardizer.identity(2 + n_features), mode)


def random_model(seed, hidden=(8, 8), n_features=1, t_upper=2.0, num_points=65,
                 activation="tanh", mode="total"):
    rng = np.random.default_rng(seed)
    cfg = MlpConfig(2 + n_features, hidden, activation, init_seed=seed)
    theta = init_params(cfg).theta + 0.3 * rng.standard_normal(cfg.num_params)
    mean = rng.normal(size=2 + n_features)
    scale = rng.uniform(0.5, 2.0, size=2 + n_features)
    return EnergySurvivalModel(MlpParams(cfg, theta), QuadratureConfig(t_upper, num_points),
                               Standardizer(mean, scale), mode)


def make_record(id_, tau, event, times, values):
    values = np.asarray(values, dtype=float)
    if values.ndim < 2:
        values = values.reshape(len(times), -1)
    return IndividualRecord(id_, tau, event, times, values)


@pytest.fixture
def tiny_dataset():
    return SnapshotDataset([
        make_record("a", 3.0, True, [1.0, 2.0], [[1.0], [2.0]]),
        make_record("b", 1.5, False, [1.0], [[0.5]]),
    ], feature_dim=1)


def central_difference(fn, theta, step=1e-5):
    """Central finite-difference gradient of scalar ``fn`` at ``theta``."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (fn(up) - fn(down)) / (2 * step)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))
