"""Noisy Kuramoto phase dynamics: drifts, order parameter, Euler integration.

Three coupling forms are supported: uniform all-to-all (pairwise sum),
its mean-field rewrite through the order parameter, and an arbitrary
network with per-edge coupling strengths. Phases are stored unwrapped.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, IntegrationDivergedError

__all__ = [
    "PhaseState",
    "PairwiseUniform",
    "MeanField",
    "ComplexNetwork",
    "NetworkSpec",
    "FixedFrequencies",
    "GaussianFrequencies",
    "SimConfig",
    "Trajectory",
    "order_parameter",
    "drift_pairwise",
    "drift_meanfield",
    "drift_complex",
    "critical_coupling",
    "integrate",
    "coupling_matrix_from_params",
    "params_from_coupling_matrix",
    "three_node_adjacency",
    "save_trajectory",
    "load_trajectory",
]


@dataclass
class PhaseState:
    phases: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float)
        if self.phases.ndim != 1 or self.phases.size < 1:
            raise ConfigurationError("phases must be a nonempty 1-D vector")
        if not np.all(np.isfinite(self.phases)):
            raise ConfigurationError("phases must be finite")


@dataclass
class PairwiseUniform:
    kappa: float

    kind = "pairwise"

    def __post_init__(self):
        if self.kappa < 0:
            raise ConfigurationError("kappa must be >= 0")


@dataclass
class MeanField:
    kappa: float

    kind = "meanfield"

    def __post_init__(self):
        if self.kappa < 0:
            raise ConfigurationError("kappa must be >= 0")


@dataclass
class ComplexNetwork:
    adjacency: np.ndarray
    couplings: np.ndarray

    kind = "complex"

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=float)
        self.couplings = np.asarray(self.couplings, dtype=float)
        a, c = self.adjacency, self.couplings
        if a.ndim != 2 or a.shape[0] != a.shape[1] or c.shape != a.shape:
            raise ConfigurationError("adjacency and couplings must be matching square matrices")
        if not np.all((a == 0) | (a == 1)):
            raise ConfigurationError("adjacency must be binary")
        if not np.array_equal(a, a.T):
            raise ConfigurationError("adjacency must be symmetric (closed network)")
        if np.any(np.diag(a) != 0) or np.any(np.diag(c) != 0):
            raise ConfigurationError("adjacency and couplings must have zero diagonal")
        if np.any(c * a < 0):
            raise ConfigurationError("active couplings must be nonnegative")

    @property
    def weights(self):
        """Effective edge weights: couplings gated by adjacency."""
        return self.couplings * self.adjacency


@dataclass
class NetworkSpec:
    n_oscillators: int
    coupling: object  # PairwiseUniform | MeanField | ComplexNetwork

    def __post_init__(self):
        if self.n_oscillators < 1:
            raise ConfigurationError("n_oscillators must be positive")
        if isinstance(self.coupling, ComplexNetwork):
            if self.coupling.adjacency.shape[0] != self.n_oscillators:
                raise ConfigurationError("coupling matrices do not match n_oscillators")

    def true_params(self):
        c = self.coupling
        if isinstance(c, ComplexNetwork):
            return params_from_coupling_matrix(c.couplings)
        return np.array([c.kappa])

    def to_dict(self):
        c = self.coupling
        d = {"n_oscillators": self.n_oscillators, "kind": c.kind}
        if isinstance(c, ComplexNetwork):
            d["adjacency"] = c.adjacency.tolist()
            d["couplings"] = c.couplings.tolist()
        else:
            d["kappa"] = c.kappa
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "pairwise":
            coupling = PairwiseUniform(d["kappa"])
        elif kind == "meanfield":
            coupling = MeanField(d["kappa"])
        elif kind == "complex":
            coupling = ComplexNetwork(np.array(d["adjacency"]), np.array(d["couplings"]))
        else:
            raise ConfigurationError(f"unknown coupling kind {kind!r}")
        return cls(d["n_oscillators"], coupling)


@dataclass
class FixedFrequencies:
    omega: np.ndarray

    mode = "fixed"

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.omega.ndim != 1:
            raise ConfigurationError("omega must be a 1-D vector")

    def resolve(self, n, rng):
        if self.omega.shape[0] != n:
            raise ConfigurationError("fixed omega length does not match oscillator count")
        return self.omega.copy()

    def to_dict(self):
        return {"mode": "fixed", "omega": self.omega.tolist()}


@dataclass
class GaussianFrequencies:
    mu: float
    sigma: float

    mode = "gaussian"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigurationError("frequency sigma must be > 0")

    def resolve(self, n, rng):
        return rng.normal(self.mu, self.sigma, n)

    def to_dict(self):
        return {"mode": "gaussian", "mu": self.mu, "sigma": self.sigma}


def frequency_spec_from_dict(d):
    if d["mode"] == "fixed":
        return FixedFrequencies(np.array(d["omega"]))
    if d["mode"] == "gaussian":
        return GaussianFrequencies(d["mu"], d["sigma"])
    raise ConfigurationError(f"unknown frequency mode {d['mode']!r}")


@dataclass
class SimConfig:
    dt: float = 0.05
    n_steps: int = 1000
    subsample: int = 10
    obs_noise_std: float = 0.1
    init_phase_std: float = 1.0
    seed: int = 41

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")
        if self.subsample < 1 or self.n_steps % self.subsample != 0:
            raise ConfigurationError("subsample must divide n_steps")
        if self.obs_noise_std < 0 or self.init_phase_std < 0:
            raise ConfigurationError("noise standard deviations must be >= 0")

    @property
    def n_obs(self):
        return self.n_steps // self.subsample + 1

    def to_dict(self):
        return {
            "dt": self.dt,
            "n_steps": self.n_steps,
            "subsample": self.subsample,
            "obs_noise_std": self.obs_noise_std,
            "init_phase_std": self.init_phase_std,
            "seed": int(self.seed),
        }


@dataclass
class Trajectory:
    observed_phases: np.ndarray  # (n_obs, N), noisy, unwrapped
    times: np.ndarray            # (n_obs,)
    config_hash: str
    true_params: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.observed_phases)):
            raise ConfigurationError("observed phases must be finite")


def order_parameter(state):
    """Magnitude and angle of the mean unit-circle position of all phases."""
    phases = state.phases if isinstance(state, PhaseState) else np.asarray(state, dtype=float)
    ms = np.sin(phases).mean()
    mc = np.cos(phases).mean()
    r = math.hypot(ms, mc)
    # below rounding noise the mean angle is undefined; fix the convention
    psi = math.atan2(ms, mc) if r > 1e-15 else 0.0
    return r, psi


def _check_omega(phases, omega):
    omega = np.asarray(omega, dtype=float)
    if omega.shape != phases.shape:
        raise ConfigurationError("omega length does not match phase vector")
    return omega


def drift_pairwise(state, omega, kappa):
    """Phase velocities for uniform all-to-all coupling, direct pairwise sum."""
    phases = state.phases if isinstance(state, PhaseState) else np.asarray(state, dtype=float)
    omega = _check_omega(phases, omega)
    n = phases.shape[0]
    diff = phases[None, :] - phases[:, None]
    return omega + (kappa / n) * np.sin(diff).sum(axis=1)


def drift_meanfield(state, omega, kappa):
    """Phase velocities through the order parameter; equals drift_pairwise."""
    phases = state.phases if isinstance(state, PhaseState) else np.asarray(state, dtype=float)
    omega = _check_omega(phases, omega)
    r, big_psi = order_parameter(phases)
    return omega + kappa * r * np.sin(big_psi - phases)


def drift_complex(state, omega, spec):
    """Phase velocities for an arbitrary coupled network."""
    phases = state.phases if isinstance(state, PhaseState) else np.asarray(state, dtype=float)
    omega = _check_omega(phases, omega)
    if isinstance(spec, NetworkSpec):
        spec = spec.coupling
    if not isinstance(spec, ComplexNetwork):
        raise ConfigurationError("drift_complex requires a ComplexNetwork coupling")
    if spec.adjacency.shape[0] != phases.shape[0]:
        raise ConfigurationError("coupling matrices do not match phase vector")
    diff = phases[None, :] - phases[:, None]
    return omega + (spec.weights * np.sin(diff)).sum(axis=1)


def critical_coupling(sigma):
    """Synchronization threshold for a centered Gaussian frequency spread."""
    if sigma <= 0:
        raise ConfigurationError("sigma must be > 0")
    return 2.0 * math.sqrt(2.0 / math.pi) * sigma


def three_node_adjacency():
    """Adjacency of the three-node closed network."""
    return np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])


# Placement of the six edge parameters into the 3x3 coupling matrix:
# row 0: (0, k1, k6); row 1: (k2, 0, k3); row 2: (k5, k4, 0).
_EDGE_SLOTS = [(0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2)]


def coupling_matrix_from_params(params):
    params = np.asarray(params, dtype=float)
    if params.shape != (6,):
        raise ConfigurationError("expected six edge coupling parameters")
    m = np.zeros((3, 3))
    for k, (i, j) in enumerate(_EDGE_SLOTS):
        m[i, j] = params[k]
    return m


def params_from_coupling_matrix(m):
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ConfigurationError("expected a 3x3 coupling matrix")
    return np.array([m[i, j] for (i, j) in _EDGE_SLOTS])


def config_hash(network, freq, config):
    payload = json.dumps(
        {"network": network.to_dict(), "freq": freq.to_dict(), "sim": config.to_dict()},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def integrate(network, freq, config):
    """Simulate one noisy trajectory: Euler steps, subsampled noisy observations.

    RNG consumption order is fixed (initial phases, then frequencies, then
    observation noise) so identical inputs and seed give bit-identical output.
    """
    n = network.n_oscillators
    rng = np.random.default_rng(config.seed)
    psi0 = rng.normal(0.0, config.init_phase_std, n)
    omega = freq.resolve(n, rng)

    c = network.coupling
    if isinstance(c, PairwiseUniform):
        obs, diverged = kernels.simulate_pairwise(
            psi0, omega, c.kappa, config.dt, config.n_steps, config.subsample
        )
    elif isinstance(c, MeanField):
        obs, diverged = kernels.simulate_meanfield(
            psi0, omega, c.kappa, config.dt, config.n_steps, config.subsample
        )
    elif isinstance(c, ComplexNetwork):
        obs, diverged = kernels.simulate_complex(
            psi0, omega, c.weights, config.dt, config.n_steps, config.subsample
        )
    else:
        raise ConfigurationError(f"unknown coupling type {type(c).__name__}")
    if diverged >= 0:
        raise IntegrationDivergedError(diverged)

    if config.obs_noise_std > 0:
        obs = obs + rng.normal(0.0, config.obs_noise_std, obs.shape)
    times = np.arange(config.n_obs) * (config.subsample * config.dt)
    return Trajectory(
        observed_phases=obs,
        times=times,
        config_hash=config_hash(network, freq, config),
        true_params=network.true_params(),
        metadata={"omega": omega.tolist()},
    )


def save_trajectory(traj, csv_path, network=None, freq=None, config=None):
    """CSV of noisy phases plus a JSON metadata sidecar."""
    n = traj.observed_phases.shape[1]
    header = "t," + ",".join(f"psi_{i}" for i in range(n))
    data = np.column_stack([traj.times, traj.observed_phases])
    np.savetxt(csv_path, data, delimiter=",", header=header, comments="")
    meta = {
        "config_hash": traj.config_hash,
        "true_params": traj.true_params.tolist(),
        **traj.metadata,
    }
    if network is not None:
        meta["network"] = network.to_dict()
    if freq is not None:
        meta["freq"] = freq.to_dict()
    if config is not None:
        meta["sim"] = config.to_dict()
    sidecar = str(csv_path) + ".json"
    with open(sidecar, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return sidecar


def load_trajectory(csv_path):
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    with open(str(csv_path) + ".json") as f:
        meta = json.load(f)
    return Trajectory(
        observed_phases=data[:, 1:],
        times=data[:, 0],
        config_hash=meta["config_hash"],
        true_params=np.array(meta["true_params"]),
        metadata={k: v for k, v in meta.items() if k not in ("config_hash", "true_params")},
    )
