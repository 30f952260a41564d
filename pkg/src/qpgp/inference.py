"""Metropolis-within-Gibbs sampler for the NNGP regression model.

    y = X beta + w + eps,   w ~ NNGP(sigma2 * C_theta),   eps ~ N(0, tau2)

One iteration updates beta (conjugate normal), the latent field w node by
node in reference order, tau2 (conjugate inverse gamma), and then
(sigma2, kernel parameters) jointly by an adaptive random-walk Metropolis
step on transformed scale. sigma2 enters every B_i and F_i, so it has no
conjugate update under the sparse factorization.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numba import njit
from scipy.special import gammaln

from qpgp.errors import InvalidInputError, InvalidParameterError, NumericalError
from qpgp.kernels import KernelSpec, ParamDef
from qpgp.nngp import LagCache, NeighborGraph, ReferenceSet, SparseFactors, factors, log_density

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.23


@dataclass(frozen=True)
class Priors:
    tau2_shape: float = 2.1
    tau2_rate: float = 10.0
    sigma2_shape: float = 2.1
    sigma2_rate: float = 10.0
    gamma_shape: float = 0.01
    gamma_rate: float = 0.01
    beta_var: float = 1e3

    def __post_init__(self):
        if min(self.tau2_shape, self.tau2_rate, self.sigma2_shape, self.sigma2_rate,
               self.gamma_shape, self.gamma_rate, self.beta_var) <= 0:
            raise InvalidParameterError("prior hyperparameters must be positive")


def _inv_gamma_logpdf(x, shape, rate):
    if not x > 0:
        return -np.inf
    return shape * math.log(rate) - gammaln(shape) - (shape + 1) * math.log(x) - rate / x


def _gamma_logpdf(x, shape, rate):
    if not x > 0:
        return -np.inf
    return shape * math.log(rate) - gammaln(shape) + (shape - 1) * math.log(x) - rate * x


@dataclass(frozen=True)
class ModelData:
    """Response and design matrix in reference order.

    ``observed`` marks nodes with a response; unobserved nodes are latent only.
    """

    y: np.ndarray
    X: np.ndarray
    observed: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.shape[0]:
            raise InvalidInputError("X and y disagree in length")
        obs = np.ones(len(y), dtype=bool) if self.observed is None else np.asarray(self.observed, dtype=bool)
        object.__setattr__(self, "y", np.where(obs, y, 0.0))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "observed", obs)

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class ChainState:
    beta: np.ndarray
    w: np.ndarray
    tau2: float
    kernel: KernelSpec

    @property
    def sigma2(self) -> float:
        return self.kernel.sigma2


def log_prior(state: ChainState, priors: Priors = Priors()) -> float:
    lp = _inv_gamma_logpdf(state.tau2, priors.tau2_shape, priors.tau2_rate)
    lp += _inv_gamma_logpdf(state.sigma2, priors.sigma2_shape, priors.sigma2_rate)
    if not np.isfinite(lp):
        return -np.inf
    defs = state.kernel.param_defs()
    vals = state.kernel.flat_params()
    for name in state.kernel.free_params():
        p, v = defs[name], vals[name]
        if not p.contains(v):
            return -np.inf
        lp += -math.log(p.hi - p.lo) if p.bounded else _gamma_logpdf(v, priors.gamma_shape, priors.gamma_rate)
    b = np.asarray(state.beta, dtype=float)
    lp += float(-0.5 * np.sum(b * b) / priors.beta_var - 0.5 * len(b) * math.log(2 * math.pi * priors.beta_var))
    return float(lp)


def log_likelihood(state: ChainState, data: ModelData) -> float:
    if not state.tau2 > 0:
        return -np.inf
    r = (data.y - data.X @ state.beta - state.w)[data.observed]
    return float(-0.5 * (len(r) * math.log(2 * math.pi * state.tau2) + r @ r / state.tau2))


def log_posterior(
    state: ChainState,
    data: ModelData,
    graph: NeighborGraph,
    ref: ReferenceSet,
    priors: Priors = Priors(),
    cache: LagCache | None = None,
) -> float:
    """Unnormalized log posterior; ``-inf`` outside the prior support."""
    if len(state.w) != data.n or graph.n != data.n:
        raise InvalidInputError("state, data and graph sizes disagree")
    lp = log_prior(state, priors)
    if not np.isfinite(lp):
        return -np.inf
    fac = factors(graph, ref, state.kernel, cache)
    return lp + log_likelihood(state, data) + log_density(state.w, fac)


# --------------------------------------------------------------------------
# conjugate steps
# --------------------------------------------------------------------------


def beta_conditional(state: ChainState, data: ModelData, priors: Priors = Priors()):
    """Mean and precision of beta given everything else."""
    X = data.X[data.observed]
    r = (data.y - state.w)[data.observed]
    prec = X.T @ X / state.tau2 + np.eye(X.shape[1]) / priors.beta_var
    mean = np.linalg.solve(prec, X.T @ r / state.tau2)
    return mean, prec


def gibbs_beta(state: ChainState, data: ModelData, rng: np.random.Generator, priors: Priors = Priors()) -> np.ndarray:
    mean, prec = beta_conditional(state, data, priors)
    L = np.linalg.cholesky(prec)
    return mean + np.linalg.solve(L.T, rng.standard_normal(len(mean)))


def tau2_conditional(state: ChainState, data: ModelData, priors: Priors = Priors()) -> tuple[float, float]:
    r = (data.y - data.X @ state.beta - state.w)[data.observed]
    return priors.tau2_shape + 0.5 * len(r), priors.tau2_rate + 0.5 * float(r @ r)


def gibbs_tau2(state: ChainState, data: ModelData, rng: np.random.Generator, priors: Priors = Priors()) -> float:
    shape, rate = tau2_conditional(state, data, priors)
    return float(rate / rng.gamma(shape))


# --------------------------------------------------------------------------
# latent field
# --------------------------------------------------------------------------


@njit(cache=True)
def _scan_w(w, resid, obs, tau2, idx, counts, B, F, ch_ptr, ch_node, ch_slot, z):
    n = w.shape[0]
    for i in range(n):
        prec = 1.0 / F[i]
        mu = 0.0
        for k in range(counts[i]):
            mu += B[i, k] * w[idx[i, k]]
        num = mu / F[i]
        if obs[i]:
            prec += 1.0 / tau2
            num += resid[i] / tau2
        for c in range(ch_ptr[i], ch_ptr[i + 1]):
            j = ch_node[c]
            s = ch_slot[c]
            b = B[j, s]
            r = w[j]
            for k in range(counts[j]):
                if k != s:
                    r -= B[j, k] * w[idx[j, k]]
            prec += b * b / F[j]
            num += b * r / F[j]
        w[i] = num / prec + z[i] / math.sqrt(prec)
    return w


@dataclass(frozen=True)
class ChildIndex:
    """Compressed child lists: for node i, ``node[ptr[i]:ptr[i+1]]`` name the children."""

    ptr: np.ndarray
    node: np.ndarray
    slot: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_graph(cls, graph: NeighborGraph) -> "ChildIndex":
        counts = np.array([len(s) for s in graph.sets], dtype=np.int64)
        parent = np.concatenate([s for s in graph.sets] + [np.empty(0, dtype=np.int64)]).astype(np.int64)
        child = np.repeat(np.arange(graph.n, dtype=np.int64), counts)
        slot = np.concatenate([np.arange(c, dtype=np.int64) for c in counts] + [np.empty(0, dtype=np.int64)])
        order = np.lexsort((child, parent))
        ptr = np.zeros(graph.n + 1, dtype=np.int64)
        np.add.at(ptr, parent + 1, 1)
        return cls(np.cumsum(ptr), child[order], slot[order], counts)


def update_w(
    state: ChainState,
    data: ModelData,
    fac: SparseFactors,
    rng: np.random.Generator,
    children: ChildIndex,
) -> np.ndarray:
    """One systematic scan over nodes in reference order, each drawn from its full conditional."""
    z = rng.standard_normal(data.n)
    resid = data.y - data.X @ state.beta
    w = np.array(state.w, dtype=float, copy=True)
    return _scan_w(w, resid, data.observed, float(state.tau2), fac.idx, children.counts,
                   fac.B, fac.F, children.ptr, children.node, children.slot, z)


# --------------------------------------------------------------------------
# covariance parameters
# --------------------------------------------------------------------------


def _to_unconstrained(x: float, p: ParamDef) -> float:
    if p.bounded:
        q = (x - p.lo) / (p.hi - p.lo)
        q = min(max(q, 1e-12), 1 - 1e-12)
        return math.log(q / (1 - q))
    return math.log(x)


def _from_unconstrained(z: float, p: ParamDef) -> float:
    if p.bounded:
        return p.lo + (p.hi - p.lo) / (1 + math.exp(-z)) if z > -700 else p.lo
    return math.exp(z) if z < 700 else math.inf


def _log_jacobian(x: float, p: ParamDef) -> float:
    if not p.contains(x) or x <= p.lo:
        return -np.inf
    if p.bounded:
        if x >= p.hi:
            return -np.inf
        return math.log((x - p.lo) * (p.hi - x) / (p.hi - p.lo))
    return math.log(x)


_SIGMA2 = ParamDef("sigma2")


class CovParams:
    """Maps ``(sigma2, free kernel parameters)`` to an unconstrained vector and back."""

    def __init__(self, template: KernelSpec):
        self.template = template
        self.names = ["sigma2"] + template.free_params()
        defs = template.param_defs()
        self.defs = [_SIGMA2] + [defs[n] for n in self.names[1:]]

    @property
    def dim(self) -> int:
        return len(self.names)

    def values(self, spec: KernelSpec) -> np.ndarray:
        flat = spec.flat_params()
        return np.array([spec.sigma2] + [flat[n] for n in self.names[1:]])

    def encode(self, spec: KernelSpec) -> np.ndarray:
        return np.array([_to_unconstrained(v, p) for v, p in zip(self.values(spec), self.defs)])

    def decode(self, z: np.ndarray) -> tuple[np.ndarray, float]:
        """Natural-scale values and the log Jacobian of the inverse transform."""
        x = np.array([_from_unconstrained(float(v), p) for v, p in zip(z, self.defs)])
        return x, float(sum(_log_jacobian(v, p) for v, p in zip(x, self.defs)))

    def spec(self, x: np.ndarray, base: KernelSpec | None = None) -> KernelSpec | None:
        """KernelSpec at natural values ``x``; ``None`` if any value is out of bounds."""
        base = self.template if base is None else base
        if not all(p.contains(v) for v, p in zip(x, self.defs)):
            return None
        try:
            return base.with_params(dict(zip(self.names[1:], x[1:].tolist())), sigma2=float(x[0]))
        except InvalidParameterError:
            return None


@dataclass
class Tuning:
    """Random-walk proposal ``z' = z + scale * chol(cov) @ eps`` on unconstrained scale."""

    cov: np.ndarray
    scale: float = 1.0
    adapt: bool = True
    n_steps: int = 0
    n_accepted: int = 0
    _mean: np.ndarray | None = None
    _m2: np.ndarray | None = None
    _n_seen: int = 0

    @classmethod
    def initial(cls, dim: int, sd: float = 0.1) -> "Tuning":
        return cls(cov=np.eye(dim) * sd * sd, scale=1.0)

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_steps if self.n_steps else float("nan")

    def observe(self, z: np.ndarray, accepted: bool):
        """Robbins-Monro scale update toward the target rate plus a running covariance."""
        self.n_steps += 1
        self.n_accepted += int(accepted)
        if not self.adapt:
            return
        t = self.n_steps
        self.scale *= math.exp((float(accepted) - TARGET_ACCEPT) * min(0.5, 5.0 / math.sqrt(t)))
        if self._mean is None:
            self._mean = np.zeros_like(z)
            self._m2 = np.zeros((len(z), len(z)))
        self._n_seen += 1
        d = z - self._mean
        self._mean = self._mean + d / self._n_seen
        self._m2 = self._m2 + np.outer(d, z - self._mean)
        dim = len(z)
        if self._n_seen >= max(50, 10 * dim) and self._n_seen % 25 == 0:
            emp = self._m2 / (self._n_seen - 1)
            new = (2.38**2 / dim) * (emp + 1e-8 * np.eye(dim))
            self.cov = new

    def freeze(self):
        self.adapt = False
        self.n_steps = 0
        self.n_accepted = 0


@dataclass
class CovBlock:
    """Cached factors and NNGP log density at the chain's current covariance parameters."""

    params: CovParams
    fac: SparseFactors
    logdens: float


def _cov_target(spec, w, graph, ref, cache, priors, params: CovParams, x, logjac):
    """Terms of the log posterior that depend on (sigma2, kernel parameters)."""
    if spec is None or not np.isfinite(logjac):
        return -np.inf, None
    lp = _inv_gamma_logpdf(spec.sigma2, priors.sigma2_shape, priors.sigma2_rate)
    for v, p in zip(x[1:], params.defs[1:]):
        lp += -math.log(p.hi - p.lo) if p.bounded else _gamma_logpdf(v, priors.gamma_shape, priors.gamma_rate)
    if not np.isfinite(lp):
        return -np.inf, None
    try:
        fac = factors(graph, ref, spec, cache)
    except NumericalError:
        return -np.inf, None
    ld = log_density(w, fac)
    return lp + ld + logjac, (fac, ld)


def mh_covparams(
    state: ChainState,
    data: ModelData,
    graph: NeighborGraph,
    ref: ReferenceSet,
    tuning: Tuning,
    rng: np.random.Generator,
    priors: Priors = Priors(),
    cache: LagCache | None = None,
    block: CovBlock | None = None,
    propose: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
) -> tuple[ChainState, bool, CovBlock]:
    """Joint random-walk Metropolis step on (sigma2, free kernel parameters)."""
    params = block.params if block is not None else CovParams(state.kernel)
    z = params.encode(state.kernel)
    if block is None:
        x, lj = params.decode(z)
        cur, extra = _cov_target(state.kernel, state.w, graph, ref, cache, priors, params, x, lj)
        if extra is None:
            raise NumericalError(f"current state has zero posterior density: {state_summary(state)}")
        block = CovBlock(params, *extra)
    else:
        x, lj = params.decode(z)
        cur = _cov_target_cached(state.kernel, block, priors, params, x, lj)
    if propose is None:
        L = np.linalg.cholesky(tuning.cov)
        z_new = z + tuning.scale * (L @ rng.standard_normal(len(z)))
    else:
        z_new = np.asarray(propose(z, rng), dtype=float)
    x_new, lj_new = params.decode(z_new)
    spec_new = params.spec(x_new, state.kernel)
    new, extra = _cov_target(spec_new, state.w, graph, ref, cache, priors, params, x_new, lj_new)
    accepted = bool(np.log(rng.uniform()) < new - cur)
    tuning.observe(z_new if accepted else z, accepted)
    if accepted:
        return replace(state, kernel=spec_new), True, CovBlock(params, *extra)
    return state, False, block


def _cov_target_cached(spec, block: CovBlock, priors, params, x, logjac):
    lp = _inv_gamma_logpdf(spec.sigma2, priors.sigma2_shape, priors.sigma2_rate)
    for v, p in zip(x[1:], params.defs[1:]):
        lp += -math.log(p.hi - p.lo) if p.bounded else _gamma_logpdf(v, priors.gamma_shape, priors.gamma_rate)
    return lp + block.logdens + logjac


def state_summary(state: ChainState) -> str:
    return json.dumps(
        {
            "beta": np.asarray(state.beta).tolist(),
            "tau2": state.tau2,
            "kernel": state.kernel.to_dict(),
            "w_range": [float(np.min(state.w)), float(np.max(state.w))] if len(state.w) else [],
        }
    )


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MCMCConfig:
    iterations: int = 3000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    store_w: bool = True
    priors: Priors = field(default_factory=Priors)
    init: str = "midpoint"  # or "spec": start kernel parameters at the template's values

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0 or self.thin < 1 or self.burn_in > self.iterations:
            raise InvalidInputError("need 0 <= burn_in <= iterations and thin >= 1")


@dataclass
class PosteriorDraws:
    """Retained states: scalar columns in ``values`` and latent draws in ``w``."""

    names: list[str]
    values: np.ndarray
    w: np.ndarray | None
    meta: dict

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def beta(self) -> np.ndarray:
        cols = [i for i, n in enumerate(self.names) if n.startswith("beta_")]
        return self.values[:, cols]

    def kernel_spec(self, m: int, template: KernelSpec) -> KernelSpec:
        flat = template.flat_params()
        upd = {n: float(self.values[m, self.names.index(n)]) for n in flat if n in self.names}
        return template.with_params(upd, sigma2=float(self.column("sigma2")[m]))

    def state(self, m: int, template: KernelSpec) -> ChainState:
        w = self.w[m] if self.w is not None else np.empty(0)
        return ChainState(self.beta()[m], w, float(self.column("tau2")[m]), self.kernel_spec(m, template))

    def summary(self):
        import pandas as pd

        q = np.quantile(self.values, [0.025, 0.975], axis=0) if self.n_draws else np.full((2, len(self.names)), np.nan)
        return pd.DataFrame(
            {
                "mean": self.values.mean(axis=0) if self.n_draws else np.nan,
                "sd": self.values.std(axis=0, ddof=1) if self.n_draws > 1 else np.nan,
                "q2.5": q[0],
                "q97.5": q[1],
            },
            index=self.names,
        )


def initial_state(data: ModelData, template: KernelSpec, mode: str = "midpoint") -> ChainState:
    """Least-squares beta, residuals as w, variances split from the residual variance."""
    X, y = data.X[data.observed], data.y[data.observed]
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = data.y - data.X @ beta
    resid = np.where(data.observed, resid, 0.0)
    v = float(np.var(resid[data.observed])) if data.observed.any() else 1.0
    v = v if v > 0 else 1.0
    spec = template
    if mode == "midpoint":
        defs = template.param_defs()
        spec = template.with_params({n: defs[n].midpoint() for n in template.free_params() if defs[n].bounded})
    elif mode != "spec":
        raise InvalidInputError(f"unknown init mode {mode!r}")
    spec = spec.with_params(sigma2=0.9 * v)
    return ChainState(beta, resid, 0.1 * v, spec)


def run_mcmc(
    data: ModelData,
    ref: ReferenceSet,
    graph: NeighborGraph,
    spec: KernelSpec,
    config: MCMCConfig = MCMCConfig(),
    state: ChainState | None = None,
    progress: Callable[[int, ChainState], None] | None = None,
) -> PosteriorDraws:
    """Run one chain; identical inputs and seed give bit-identical draws."""
    rng = np.random.default_rng(config.seed)
    priors = config.priors
    cache = LagCache(graph, ref)
    children = ChildIndex.from_graph(graph)
    state = initial_state(data, spec, config.init) if state is None else state
    params = CovParams(state.kernel)
    tuning = Tuning.initial(params.dim)
    tuning.adapt = config.burn_in > 0
    try:
        fac = factors(graph, ref, state.kernel, cache)
    except NumericalError as exc:
        raise NumericalError(f"{exc}; state: {state_summary(state)}") from exc
    block = CovBlock(params, fac, log_density(state.w, fac))

    names = [f"beta_{j}" for j in range(data.X.shape[1])] + ["tau2"] + params.names
    n_keep = (config.iterations - config.burn_in) // config.thin
    values = np.empty((n_keep, len(names)))
    w_draws = np.empty((n_keep, data.n)) if config.store_w else None
    burn_accept = float("nan")
    k = 0
    for it in range(1, config.iterations + 1):
        state = replace(state, beta=gibbs_beta(state, data, rng, priors))
        state = replace(state, w=update_w(state, data, block.fac, rng, children))
        block = CovBlock(params, block.fac, log_density(state.w, block.fac))
        state = replace(state, tau2=gibbs_tau2(state, data, rng, priors))
        state, _, block = mh_covparams(state, data, graph, ref, tuning, rng, priors, cache, block)
        if it == config.burn_in:
            burn_accept = tuning.acceptance_rate
            tuning.freeze()
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0 and k < n_keep:
            values[k] = np.concatenate([state.beta, [state.tau2], params.values(state.kernel)])
            if w_draws is not None:
                w_draws[k] = state.w
            k += 1
        if progress is not None:
            progress(it, state)
    meta = {
        "iterations": config.iterations,
        "burn_in": config.burn_in,
        "thin": config.thin,
        "seed": config.seed,
        "acceptance_burn_in": burn_accept,
        "acceptance": tuning.acceptance_rate,
        "proposal_scale": tuning.scale,
        "kernel": spec.to_dict(),
    }
    log.info("mcmc done: %d draws, acceptance %.3f", n_keep, tuning.acceptance_rate)
    return PosteriorDraws(names, values, w_draws, meta)


def mc_standard_error(x: np.ndarray, n_batches: int = 25) -> float:
    """Batch-means Monte Carlo standard error of the mean of a chain."""
    x = np.asarray(x, dtype=float)
    b = len(x) // n_batches
    if b < 1:
        raise InvalidInputError("chain too short for batch means")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
