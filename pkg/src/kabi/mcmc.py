"""Random-walk Metropolis over a Gaussian synthetic likelihood of ECDF vectors.

The likelihood of a coupling parameter is built from simulations only: the
per-timestep summary features of replicate runs are reduced to ECDF vectors
on a fixed bin grid, a Gaussian is fitted to those vectors, and the observed
trajectory's ECDF vector is scored under it. The covariance is pooled (fitted
once at a reference parameter); only the mean is re-estimated per proposal,
so the chain is pseudo-marginal: it targets a slightly perturbed posterior.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, NumericsError

__all__ = [
    "EcdfLikelihoodSpec",
    "GaussianSyntheticLikelihood",
    "ChainConfig",
    "McmcResult",
    "ecdf_vector",
    "make_bin_edges",
    "fit_likelihood",
    "mean_ecdf",
    "log_likelihood",
    "metropolis",
    "run_chain",
    "batch_means_ess",
    "save_chain_csv",
    "chain_summary",
]

log = logging.getLogger(__name__)


@dataclass
class EcdfLikelihoodSpec:
    bin_edges: np.ndarray                      # (F, B), strictly increasing rows
    feature_indices: tuple = (0, 1, 2, 3, 4, 5)
    n_replicates: int = 50
    n_replicates_proposal: int = 10
    lambda_reg: float = 1e-6

    def __post_init__(self):
        self.bin_edges = np.atleast_2d(np.asarray(self.bin_edges, dtype=float))
        if self.bin_edges.shape[0] != len(self.feature_indices):
            raise ConfigurationError("one row of bin edges per selected feature")
        if self.bin_edges.shape[1] < 2:
            raise ConfigurationError("need at least 2 bin edges")
        if not np.all(np.diff(self.bin_edges, axis=1) > 0):
            raise ConfigurationError("bin edges must be strictly increasing")
        if self.n_replicates < 2:
            raise ConfigurationError("need at least 2 replicates")
        if self.lambda_reg < 0:
            raise ConfigurationError("lambda_reg must be >= 0")


def ecdf_vector(step_features, spec):
    """Fraction of timestep values <= each bin edge, per feature, concatenated."""
    feats = np.atleast_2d(np.asarray(step_features, dtype=float))
    blocks = []
    for row, j in enumerate(spec.feature_indices):
        vals = feats[:, j]
        blocks.append((vals[:, None] <= spec.bin_edges[row][None, :]).mean(axis=0))
    return np.concatenate(blocks)


def make_bin_edges(simulate_fn, theta_ref, rng, n_bins=20, n_replicates=50,
                   feature_indices=(0, 1, 2, 3, 4, 5)):
    """Edges spanning the empirical 1%-99% range at a reference parameter."""
    pools = None
    for _ in range(n_replicates):
        feats = simulate_fn(theta_ref, int(rng.integers(2 ** 62)))
        cols = feats[:, list(feature_indices)]
        pools = cols if pools is None else np.vstack([pools, cols])
    edges = np.empty((len(feature_indices), n_bins))
    for k in range(len(feature_indices)):
        lo, hi = np.quantile(pools[:, k], [0.01, 0.99])
        if hi - lo < 1e-9:  # near-constant feature: widen artificially
            lo, hi = lo - 1e-3, hi + 1e-3
        edges[k] = np.linspace(lo, hi, n_bins)
    return edges


@dataclass
class GaussianSyntheticLikelihood:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray

    def logpdf(self, x):
        resid = np.asarray(x) - self.mean
        sol = linalg.solve_triangular(self.chol, resid, lower=True)
        log_det = 2.0 * np.log(np.diag(self.chol)).sum()
        k = self.mean.shape[0]
        return float(-0.5 * (k * math.log(2.0 * math.pi) + log_det + sol @ sol))


def _replicate_ecdfs(theta, spec, simulate_fn, rng, n):
    return np.array([
        ecdf_vector(simulate_fn(theta, int(rng.integers(2 ** 62))), spec)
        for _ in range(n)
    ])


def fit_likelihood(theta_ref, spec, simulate_fn, rng):
    """Gaussian fitted to replicate ECDF vectors at a reference parameter."""
    vectors = _replicate_ecdfs(theta_ref, spec, simulate_fn, rng, spec.n_replicates)
    mean = vectors.mean(axis=0)
    cov = np.cov(vectors, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    lam = spec.lambda_reg
    for attempt in range(4):
        try:
            chol = np.linalg.cholesky(cov + lam * np.eye(cov.shape[0]))
            return GaussianSyntheticLikelihood(mean=mean, cov=cov + lam * np.eye(cov.shape[0]),
                                               chol=chol)
        except np.linalg.LinAlgError:
            if attempt == 3:
                raise NumericsError("ECDF covariance not positive definite after regularization")
            lam = max(lam, 1e-12) * 10.0
    raise NumericsError("unreachable")


def mean_ecdf(theta, spec, simulate_fn, rng, n=None):
    n = spec.n_replicates_proposal if n is None else n
    return _replicate_ecdfs(theta, spec, simulate_fn, rng, n).mean(axis=0)


def log_likelihood(theta, observed_ecdf, spec, simulate_fn, rng, pooled):
    """Gaussian log density of the observed ECDF under the mean re-fitted at theta."""
    mu = mean_ecdf(theta, spec, simulate_fn, rng)
    shifted = GaussianSyntheticLikelihood(mean=mu, cov=pooled.cov, chol=pooled.chol)
    return shifted.logpdf(observed_ecdf)


@dataclass
class ChainConfig:
    n_iterations: int = 50_000
    burn_in: int = 10_000
    thinning: int = 5
    proposal_std: np.ndarray | float = 0.1
    seed: int = 41

    def __post_init__(self):
        if self.burn_in >= self.n_iterations:
            raise ConfigurationError("burn_in must be < n_iterations")
        self.proposal_std = np.atleast_1d(np.asarray(self.proposal_std, dtype=float))
        if np.any(self.proposal_std <= 0):
            raise ConfigurationError("proposal_std must be > 0")


@dataclass
class McmcResult:
    draws: np.ndarray           # post burn-in, thinned
    acceptance_rate: float
    chain: np.ndarray           # full chain of states, (n_iterations, d)
    log_likes: np.ndarray       # per iteration
    accepted: np.ndarray        # per iteration, 0/1
    loglik_variance: float = float("nan")
    extra: dict = field(default_factory=dict)


def metropolis(log_like_fn, prior, chain_cfg, theta0=None):
    """Symmetric Gaussian random-walk Metropolis over a box prior.

    ``log_like_fn(theta, rng)`` may be stochastic; the current value is kept
    (pseudo-marginal style), never re-evaluated. Proposals outside the box
    are rejected outright. Deterministic per seed.
    """
    rng = np.random.default_rng(chain_cfg.seed)
    d = prior.dim
    std = np.broadcast_to(chain_cfg.proposal_std, (d,))
    theta = (prior.lower + prior.upper) / 2.0 if theta0 is None else np.asarray(theta0, float)
    cur_ll = log_like_fn(theta, rng)

    n = chain_cfg.n_iterations
    chain = np.empty((n, d))
    log_likes = np.empty(n)
    accepted = np.zeros(n, dtype=np.int8)
    ll_values = []

    for it in range(n):
        prop = theta + rng.normal(0.0, std)
        if prior.contains(prop):
            prop_ll = log_like_fn(prop, rng)
            ll_values.append(prop_ll)
            if math.log(rng.random()) < prop_ll - cur_ll:
                theta = prop
                cur_ll = prop_ll
                accepted[it] = 1
        chain[it] = theta
        log_likes[it] = cur_ll
        if it == chain_cfg.burn_in + 999:
            window = accepted[chain_cfg.burn_in:it + 1]
            if window.mean() < 0.01:
                log.warning(
                    "acceptance rate %.3f%% over first 1000 post-burn-in steps; "
                    "consider reducing proposal_std", 100 * window.mean(),
                )

    post = chain[chain_cfg.burn_in::chain_cfg.thinning]
    rate = float(accepted.mean())
    var = float(np.var(ll_values)) if len(ll_values) > 1 else float("nan")
    return McmcResult(draws=post, acceptance_rate=rate, chain=chain,
                      log_likes=log_likes, accepted=accepted, loglik_variance=var)


def run_chain(observed_ecdf, prior, chain_cfg, spec, simulate_fn, theta_ref=None):
    """Full baseline: pooled covariance at a reference parameter, then Metropolis."""
    rng = np.random.default_rng(chain_cfg.seed + 1)
    if theta_ref is None:
        theta_ref = (prior.lower + prior.upper) / 2.0
    pooled = fit_likelihood(theta_ref, spec, simulate_fn, rng)

    def log_like_fn(theta, chain_rng):
        return log_likelihood(theta, observed_ecdf, spec, simulate_fn, chain_rng, pooled)

    result = metropolis(log_like_fn, prior, chain_cfg)
    result.extra["pooled_cov_trace"] = float(np.trace(pooled.cov))
    return result


def batch_means_ess(draws):
    """Effective sample size per parameter via the batch-means estimator."""
    draws = np.atleast_2d(draws)
    if draws.shape[0] < 4:
        return np.full(draws.shape[1], float(draws.shape[0]))
    n = draws.shape[0]
    b = max(2, int(math.sqrt(n)))
    m = n // b
    trimmed = draws[:m * b]
    means = trimmed.reshape(m, b, -1).mean(axis=1)
    var_bm = b * means.var(axis=0, ddof=1)
    var_raw = trimmed.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = n * var_raw / var_bm
    return np.clip(np.nan_to_num(ess, nan=float(n)), 1.0, float(n))


def save_chain_csv(result, path):
    d = result.chain.shape[1]
    header = "iteration," + ",".join(f"kappa_{j + 1}" for j in range(d)) + ",log_like,accepted"
    data = np.column_stack([
        np.arange(result.chain.shape[0]), result.chain, result.log_likes, result.accepted,
    ])
    np.savetxt(path, data, delimiter=",", header=header, comments="")


def chain_summary(result):
    draws = result.draws
    qs = np.quantile(draws, [0.05, 0.25, 0.5, 0.75, 0.95], axis=0)
    return {
        "acceptance_rate": result.acceptance_rate,
        "n_draws": int(draws.shape[0]),
        "ess": batch_means_ess(draws).tolist(),
        "posterior_mean": draws.mean(axis=0).tolist(),
        "quantiles": {
            "q05": qs[0].tolist(), "q25": qs[1].tolist(), "q50": qs[2].tolist(),
            "q75": qs[3].tolist(), "q95": qs[4].tolist(),
        },
        "loglik_variance": result.loglik_variance,
        **result.extra,
    }
