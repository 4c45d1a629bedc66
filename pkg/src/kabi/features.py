"""Per-timestep summary statistics of a phase snapshot.

Six statistics per observed timestep: order-parameter magnitude and angle,
and mean/std of the unit-circle coordinates sin(psi), cos(psi). Standard
deviations are population (divide-by-N) so the singleton case is defined.
Flattening is time-major, statistic-minor.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .oscillator import PhaseState, order_parameter

__all__ = [
    "FEATURE_NAMES",
    "StepSummary",
    "FeatureVector",
    "summarize_step",
    "step_matrix",
    "summarize_trajectory",
    "save_features_csv",
]

FEATURE_NAMES = ("r", "psi", "mean_sin", "std_sin", "mean_cos", "std_cos")


@dataclass
class StepSummary:
    r: float
    psi: float
    mean_sin: float
    std_sin: float
    mean_cos: float
    std_cos: float

    def as_array(self):
        return np.array([self.r, self.psi, self.mean_sin, self.std_sin,
                         self.mean_cos, self.std_cos])


@dataclass
class FeatureVector:
    values: np.ndarray  # length 6 * n_obs, time-major
    n_obs: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (6 * self.n_obs,):
            raise ConfigurationError("feature vector length must be 6 * n_obs")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("feature vector must be finite")

    def as_matrix(self):
        return self.values.reshape(self.n_obs, 6)


def summarize_step(phases):
    phases = phases.phases if isinstance(phases, PhaseState) else np.asarray(phases, dtype=float)
    if phases.size < 1:
        raise ConfigurationError("cannot summarize an empty phase vector")
    s = np.sin(phases)
    c = np.cos(phases)
    r, psi = order_parameter(phases)
    return StepSummary(
        r=r,
        psi=psi,
        mean_sin=float(s.mean()),
        std_sin=float(s.std()),
        mean_cos=float(c.mean()),
        std_cos=float(c.std()),
    )


def step_matrix(observed_phases):
    """(n_obs, 6) matrix of per-timestep summaries, vectorized over rows."""
    obs = np.asarray(observed_phases, dtype=float)
    s = np.sin(obs)
    c = np.cos(obs)
    mean_sin = s.mean(axis=1)
    mean_cos = c.mean(axis=1)
    r = np.hypot(mean_sin, mean_cos)
    psi = np.where(r > 1e-15, np.arctan2(mean_sin, mean_cos), 0.0)
    return np.column_stack([r, psi, mean_sin, s.std(axis=1), mean_cos, c.std(axis=1)])


def summarize_trajectory(traj):
    obs = traj.observed_phases if hasattr(traj, "observed_phases") else np.asarray(traj)
    mat = step_matrix(obs)
    return FeatureVector(values=mat.reshape(-1), n_obs=mat.shape[0])


def save_features_csv(feature_vector, path):
    np.savetxt(path, feature_vector.as_matrix(), delimiter=",",
               header=",".join(FEATURE_NAMES), comments="")
