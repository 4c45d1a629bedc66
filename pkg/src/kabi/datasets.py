"""Dataset generation: prior draws, batched simulation, feature standardization.

The two experiment scenarios:

* simple   -- N=100 mean-field oscillators, one coupling constant,
              kappa ~ Uniform(0, 5), fresh omega ~ N(1, 0.5^2) per run.
* complex  -- N=3 closed three-node network, six edge couplings,
              kappa_i ~ Uniform(0, 1), one fixed omega vector shared by
              every simulation (frozen into the config at construction).

Per-trajectory seeds are base_seed + row index with disjoint offsets per
split, so generation is reproducible and splits never share a stream.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IntegrationDivergedError
from .features import summarize_trajectory
from .oscillator import (
    ComplexNetwork,
    FixedFrequencies,
    GaussianFrequencies,
    MeanField,
    NetworkSpec,
    SimConfig,
    coupling_matrix_from_params,
    integrate,
    three_node_adjacency,
)

__all__ = [
    "PriorSpec",
    "Standardizer",
    "ExperimentConfig",
    "Dataset",
    "simple_config",
    "complex_config",
    "sample_prior",
    "simulate_one",
    "generate",
    "generate_split",
    "save_dataset",
    "load_dataset",
]

log = logging.getLogger(__name__)

# Seed offset applied on divergence retries; larger than any row index so
# retry streams never collide with other rows.
_RETRY_OFFSET = 10_000_019


@dataclass
class PriorSpec:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ConfigurationError("prior bounds must be 1-D vectors of equal length")
        if not np.all(self.lower < self.upper):
            raise ConfigurationError("prior must satisfy lower < upper elementwise")

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def width(self):
        return self.upper - self.lower

    def variance(self):
        return self.width ** 2 / 12.0

    def contains(self, x):
        x = np.asarray(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def to_unit(self, x):
        """Affine map of the prior box onto [-1, 1]^dim."""
        return 2.0 * (np.asarray(x) - self.lower) / self.width - 1.0

    def from_unit(self, u):
        return self.lower + (np.asarray(u) + 1.0) * self.width / 2.0


def sample_prior(prior, n, rng_seed):
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return rng.uniform(prior.lower, prior.upper, size=(n, prior.dim))


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    mask: np.ndarray  # True = column kept in the context

    @classmethod
    def fit(cls, features, eps=1e-12):
        features = np.asarray(features, dtype=float)
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        mask = std > eps
        if mask.sum() == 0:
            raise ConfigurationError("all feature columns are constant")
        return cls(mean=mean, std=std, mask=mask)

    @property
    def n_kept(self):
        return int(self.mask.sum())

    def transform(self, features):
        """Z-score and drop masked (zero-variance) columns."""
        z = (np.asarray(features) - self.mean)[..., self.mask] / self.std[self.mask]
        return z

    def inverse_transform(self, z):
        """Rebuild the full feature width; masked columns get their constant mean."""
        z = np.asarray(z)
        out = np.broadcast_to(self.mean, z.shape[:-1] + self.mean.shape).copy()
        out[..., self.mask] = z * self.std[self.mask] + self.mean[self.mask]
        return out

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "mask": self.mask.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["std"]), np.array(d["mask"], dtype=bool))

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class ExperimentConfig:
    scenario: str = "simple"
    n_train: int = 2 ** 12
    n_val: int = 2 ** 6
    n_test: int = 300
    posterior_draws: int = 1000
    epochs: int = 50
    batches_per_epoch: int = 64
    initial_lr: float = 5e-4
    dropout: float = 0.1
    seed: int = 41
    n_oscillators: int = 100
    dt: float = 0.05
    n_steps: int = 1000
    subsample: int = 10
    obs_noise_std: float = 0.1
    init_phase_std: float = 1.0
    prior_lower: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    prior_upper: np.ndarray = field(default_factory=lambda: np.array([5.0]))
    omega_mu: float = 1.0
    omega_sigma: float = 0.5
    fixed_omega: np.ndarray | None = None  # complex scenario only

    def __post_init__(self):
        if self.scenario not in ("simple", "complex"):
            raise ConfigurationError("scenario must be 'simple' or 'complex'")
        for name in ("n_train", "n_val", "n_test", "posterior_draws", "epochs",
                     "batches_per_epoch"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError("dropout must be in [0, 1)")
        self.prior_lower = np.atleast_1d(np.asarray(self.prior_lower, dtype=float))
        self.prior_upper = np.atleast_1d(np.asarray(self.prior_upper, dtype=float))
        if self.scenario == "complex":
            if self.n_oscillators != 3:
                raise ConfigurationError("complex scenario is defined for 3 oscillators")
            if self.fixed_omega is None:
                rng = np.random.default_rng(self.seed)
                self.fixed_omega = rng.normal(self.omega_mu, self.omega_sigma, 3)
            else:
                self.fixed_omega = np.asarray(self.fixed_omega, dtype=float)

    @property
    def prior(self):
        return PriorSpec(self.prior_lower, self.prior_upper)

    @property
    def batch_size(self):
        return max(1, self.n_train // self.batches_per_epoch)

    @property
    def n_obs(self):
        return self.n_steps // self.subsample + 1

    def sim_config(self, seed):
        return SimConfig(
            dt=self.dt, n_steps=self.n_steps, subsample=self.subsample,
            obs_noise_std=self.obs_noise_std, init_phase_std=self.init_phase_std,
            seed=seed,
        )

    def to_dict(self):
        d = {
            "scenario": self.scenario,
            "n_train": self.n_train, "n_val": self.n_val, "n_test": self.n_test,
            "posterior_draws": self.posterior_draws,
            "epochs": self.epochs, "batches_per_epoch": self.batches_per_epoch,
            "initial_lr": self.initial_lr, "dropout": self.dropout,
            "seed": int(self.seed),
            "n_oscillators": self.n_oscillators,
            "dt": self.dt, "n_steps": self.n_steps, "subsample": self.subsample,
            "obs_noise_std": self.obs_noise_std, "init_phase_std": self.init_phase_std,
            "prior_lower": self.prior_lower.tolist(),
            "prior_upper": self.prior_upper.tolist(),
            "omega_mu": self.omega_mu, "omega_sigma": self.omega_sigma,
        }
        if self.fixed_omega is not None:
            d["fixed_omega"] = self.fixed_omega.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("prior_lower", "prior_upper", "fixed_omega"):
            if key in d and d[key] is not None:
                d[key] = np.array(d[key], dtype=float)
        return cls(**d)


def simple_config(**overrides):
    return ExperimentConfig(scenario="simple", **overrides)


def complex_config(**overrides):
    defaults = dict(
        scenario="complex",
        n_oscillators=3,
        n_train=2 ** 17,
        n_val=2 ** 7,
        epochs=150,
        batches_per_epoch=128,
        initial_lr=5e-3,
        prior_lower=np.zeros(6),
        prior_upper=np.ones(6),
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


def network_for(config, params):
    params = np.atleast_1d(np.asarray(params, dtype=float))
    if config.scenario == "simple":
        return NetworkSpec(config.n_oscillators, MeanField(float(params[0])))
    return NetworkSpec(3, ComplexNetwork(three_node_adjacency(),
                                         coupling_matrix_from_params(params)))


def frequency_for(config):
    if config.scenario == "simple":
        return GaussianFrequencies(config.omega_mu, config.omega_sigma)
    return FixedFrequencies(config.fixed_omega)


def simulate_one(config, params, sim_seed):
    """One trajectory at given parameters; retries derived seeds on divergence."""
    network = network_for(config, params)
    freq = frequency_for(config)
    seed = int(sim_seed)
    for attempt in range(11):
        try:
            return integrate(network, freq, config.sim_config(seed))
        except IntegrationDivergedError as exc:
            log.warning("integration diverged (seed %d, step %d); retrying", seed, exc.step)
            seed += _RETRY_OFFSET
    raise IntegrationDivergedError(-1)


@dataclass
class Dataset:
    params: np.ndarray        # (n, dim), raw prior scale
    features: np.ndarray      # (n, 6 * n_obs), raw
    standardizer: Standardizer
    scenario: str

    def __post_init__(self):
        if self.params.shape[0] != self.features.shape[0]:
            raise ConfigurationError("params and features row counts differ")

    @property
    def n(self):
        return self.params.shape[0]

    def contexts(self):
        """Standardized conditioning matrix (masked columns dropped)."""
        return self.standardizer.transform(self.features)


_SPLIT_OFFSETS = {"train": 0, "val": 1, "test": 2}


def _split_base_seed(config, split):
    # Row seeds: base + row_index within a split block; blocks are disjoint.
    blocks = {"train": 0, "val": config.n_train, "test": config.n_train + config.n_val}
    return config.seed + blocks[split]


def generate_split(config, split, standardizer=None):
    """Simulate one split and package it; train fits its own standardizer."""
    n = {"train": config.n_train, "val": config.n_val, "test": config.n_test}[split]
    prior = config.prior
    params = sample_prior(prior, n, [config.seed, _SPLIT_OFFSETS[split]])
    base = _split_base_seed(config, split)
    feats = np.empty((n, 6 * config.n_obs))
    for i in range(n):
        traj = simulate_one(config, params[i], base + i)
        feats[i] = summarize_trajectory(traj).values
    if standardizer is None:
        if split != "train":
            raise ConfigurationError("non-train splits need the train standardizer")
        standardizer = Standardizer.fit(feats)
    return Dataset(params=params, features=feats, standardizer=standardizer,
                   scenario=config.scenario)


def generate(config):
    """Train and validation datasets; validation reuses the train standardizer."""
    train = generate_split(config, "train")
    val = generate_split(config, "val", standardizer=train.standardizer)
    return train, val


def save_dataset(dataset, directory, config=None):
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, "params.csv"), dataset.params, delimiter=",")
    np.savetxt(os.path.join(directory, "features.csv"), dataset.features, delimiter=",")
    with open(os.path.join(directory, "standardizer.json"), "w") as f:
        json.dump(dataset.standardizer.to_dict(), f)
    if config is not None:
        with open(os.path.join(directory, "config.json"), "w") as f:
            json.dump({**config.to_dict(), "scenario": config.scenario}, f, indent=2,
                      sort_keys=True)


def load_dataset(directory):
    params = np.loadtxt(os.path.join(directory, "params.csv"), delimiter=",", ndmin=2)
    features = np.loadtxt(os.path.join(directory, "features.csv"), delimiter=",", ndmin=2)
    with open(os.path.join(directory, "standardizer.json")) as f:
        standardizer = Standardizer.from_dict(json.load(f))
    scenario = "simple"
    cfg_path = os.path.join(directory, "config.json")
    if os.path.exists(cfg_path):
        with open(cfg_path) as f:
            scenario = json.load(f).get("scenario", "simple")
    return Dataset(params=params, features=features, standardizer=standardizer,
                   scenario=scenario)
