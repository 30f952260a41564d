"""Covariance catalog over space x circular time x linear time.

Every family is written as a correlation ``C(h, theta, u)`` with
``C(0, 0, 0) = 1``; a :class:`KernelSpec` multiplies it by ``sigma2``.
Families that ignore a lag are constant in it, so products of members over
disjoint lags build the separable and partially nonseparable models.

The two circle-cross-time classes built from cosine expansions come with
their defining series (:func:`series_oracle_I`, :func:`series_oracle_II`),
which serve as independent checks of the closed forms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import gammaln, kv

from qpgp.errors import InvalidInputError, InvalidParameterError, NumericalError
from qpgp.geometry import LagTriple, as_arrays, pairwise_lags

PSD_RTOL = 1e-8

# Posterior means reported for the final model (sqrt-ozone scale).
POSTERIOR_MEANS = {
    "beta": (7.3943, -0.0207, 0.1129),
    "c_t": 86.9006,
    "c_s": 22.3190,
    "alpha": 0.6740,
    "tau2": 0.0947,
    "sigma2": 2.0981,
}


@dataclass(frozen=True)
class ParamDef:
    """Admissible interval ``(lo, hi]`` (``hi = inf`` for positive parameters).

    ``draw`` is the range random parameter draws use during validity sweeps;
    ``log_draw`` samples it log-uniformly.
    """

    name: str
    hi: float = np.inf
    draw: tuple[float, float] = (0.1, 5.0)
    log_draw: bool = True
    lo: float = 0.0

    @property
    def bounded(self) -> bool:
        return np.isfinite(self.hi)

    def contains(self, value: float) -> bool:
        return bool(np.isfinite(value) and self.lo < value <= self.hi)

    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class Family:
    name: str
    params: tuple[ParamDef, ...]
    corr: Callable[..., np.ndarray]
    lags: str  # subset of "htu" the family depends on

    def param(self, name: str) -> ParamDef:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


# --------------------------------------------------------------------------
# scalar building blocks
# --------------------------------------------------------------------------


def matern(t, alpha: float, nu: float):
    """Matern correlation ``2^(1-nu)/Gamma(nu) (t/alpha)^nu K_nu(t/alpha)``.

    Returns 1 at ``t = 0`` (the limit of the Bessel form) and uses the exact
    exponential when ``nu = 1/2``.
    """
    if not (alpha > 0 and nu > 0):
        raise InvalidParameterError(f"matern needs alpha > 0 and nu > 0, got {alpha}, {nu}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidInputError("matern lag must be nonnegative")
    x = t / alpha
    if nu == 0.5:
        out = np.exp(-x)
    else:
        with np.errstate(invalid="ignore", over="ignore", under="ignore"):
            logc = (1 - nu) * np.log(2.0) - gammaln(nu)
            out = np.exp(logc + nu * np.log(np.where(x > 0, x, 1.0))) * kv(nu, np.where(x > 0, x, 1.0))
        out = np.where(x == 0, 1.0, out)
        out = np.where(np.isfinite(out), out, 0.0)
    return out if out.ndim else float(out)


def circle_series_sum(theta, gamma):
    """Closed form of ``sum_{k>=0} cos(k theta) / (k^2 + gamma)``.

    ``1/(2g) + pi/(2 sqrt g) * cosh(sqrt g (pi - theta)) / sinh(sqrt g pi)``,
    evaluated as ``exp(-a theta) (1 + exp(-2a(pi-theta))) / (1 - exp(-2 a pi))``
    so it cannot overflow for large ``sqrt(gamma)``.
    """
    theta = np.asarray(theta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise InvalidParameterError("gamma must be positive")
    a = np.sqrt(gamma)
    ratio = np.exp(-a * theta) * (1.0 + np.exp(-2 * a * (np.pi - theta))) / -np.expm1(-2 * a * np.pi)
    return 0.5 / gamma + np.pi / (2 * a) * ratio


def series_oracle_I(theta, gamma, terms: int):
    """Truncated ``sum_{k=0}^{terms} cos(k theta) / (k^2 + gamma)``."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise InvalidParameterError("gamma must be positive")
    if terms < 0:
        raise InvalidInputError("terms must be nonnegative")
    theta, gamma = np.broadcast_arrays(np.asarray(theta, dtype=float), gamma)
    total = np.zeros(theta.shape)
    # chunked over k to bound memory for long sums
    for start in range(0, terms + 1, 4096):
        k = np.arange(start, min(terms + 1, start + 4096), dtype=float)
        total += (np.cos(np.multiply.outer(theta, k)) / np.add.outer(gamma, k * k)).sum(axis=-1)
    return total if total.ndim else float(total)


def series_oracle_II(theta, rho, terms: int):
    """``exp(-1) * sum_{k=0}^{terms} rho^k cos(k theta) / k!``."""
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) > 1):
        raise InvalidInputError("expansion requires |rho| <= 1")
    if terms < 1:
        raise InvalidInputError("terms must be at least 1")
    theta, rho = np.broadcast_arrays(np.asarray(theta, dtype=float), rho)
    k = np.arange(terms + 1, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logabs = np.multiply.outer(np.log(np.abs(rho)), k) - gammaln(k + 1)
    mag = np.exp(logabs)
    mag[..., 0] = 1.0
    sign = np.where(np.multiply.outer(rho < 0, k % 2 == 1), -1.0, 1.0)
    total = np.exp(-1.0) * (sign * mag * np.cos(np.multiply.outer(theta, k))).sum(axis=-1)
    return total if total.ndim else float(total)


def cos_exp(theta, rho):
    """``exp(rho cos theta - 1) cos(rho sin theta)``, a correlation for ``|rho| <= 1``."""
    return np.exp(rho * np.cos(theta) - 1.0) * np.cos(rho * np.sin(theta))


# --------------------------------------------------------------------------
# family correlations; p is a plain dict of floats
# --------------------------------------------------------------------------


def _gencauchy_margin(x, scale, alpha):
    return 1.0 + (x / scale) ** alpha


def _matern_time(h, th, u, p):
    return matern(u, p["alpha"], p["nu"])


def _matern_circle(h, th, u, p):
    return matern(th, p["alpha"], p["nu"])


def _matern_space(h, th, u, p):
    return matern(h, p["alpha"], p["nu"])


def _circ_pow_exp(h, th, u, p):
    return np.exp(-((th / p["c_p"]) ** p["alpha"]))


def _circ_cauchy(h, th, u, p):
    return (1.0 + (th / p["c_p"]) ** p["alpha"]) ** (-p["lam"])


def _circle_time_mix(th, u, p):
    psi = _gencauchy_margin(th, p["c_s"], p["alpha"])
    lead = psi ** (-(p["delta"] + p["beta"] / 2))
    arg = u ** (2 * p["gamma"]) / (p["c_t"] ** (2 * p["gamma"]) * psi ** (p["beta"] * p["gamma"]))
    return lead, arg


def _circle_time_exp(h, th, u, p):
    lead, arg = _circle_time_mix(th, u, p)
    return lead * np.exp(-arg)


def _circle_time_cauchy(h, th, u, p):
    lead, arg = _circle_time_mix(th, u, p)
    return lead * (1.0 + arg) ** (-p["lam"])


def _white(th, u, p):
    # circle dimension d = 1 in the delta + beta*d/2 exponent
    psi = _gencauchy_margin(u, p["c_t"], p["alpha"])
    lead = psi ** (-(p["delta"] + p["beta"] / 2))
    arg = th ** p["gamma"] / (p["c_s"] ** p["gamma"] * psi ** (p["beta"] * p["gamma"]))
    return lead, arg


def _white_exp(h, th, u, p):
    lead, arg = _white(th, u, p)
    return lead * np.exp(-arg)


def _white_cauchy(h, th, u, p):
    lead, arg = _white(th, u, p)
    return lead * (1.0 + arg) ** (-p["lam"])


_SERIES_AT_ORIGIN = float(circle_series_sum(0.0, 1.0))


def _sinh_series(h, th, u, p):
    g = _gencauchy_margin(u, p["c_t"], p["alpha"]) ** p["beta"]
    return circle_series_sum(th, g) / _SERIES_AT_ORIGIN


def _cos_exp_cauchy(h, th, u, p):
    return cos_exp(th, _gencauchy_margin(u, p["c_t"], p["alpha"]) ** (-p["lam"]))


def _cos_exp_powexp(h, th, u, p):
    return cos_exp(th, np.exp(-((u / p["c_t"]) ** p["alpha"])))


def _planar_mix(h, sep, p):
    # planar dimension d = 2 in the delta + beta*d/2 exponent
    psi = _gencauchy_margin(sep, p["c_t"], p["alpha"])
    arg = h ** (2 * p["gamma"]) / (p["c_s"] ** (2 * p["gamma"]) * psi ** (p["beta"] * p["gamma"]))
    return psi ** (-(p["delta"] + p["beta"])) * (1.0 + arg) ** (-p["lam"])


def _space_time_cauchy(h, th, u, p):
    return _planar_mix(h, u, p)


def _space_circle_cauchy(h, th, u, p):
    return _planar_mix(h, th, p)


def _model1_separable(h, th, u, p):
    return np.exp(-h / p["c_s"] - th / p["c_p"] - u / p["c_t"])


def _model7_final(h, th, u, p):
    rho = np.exp(-((u / p["c_t"]) ** p["alpha"]))
    return np.exp(rho * np.cos(th) - h / p["c_s"] - 1.0) * np.cos(rho * np.sin(th))


def _space(name="c_s"):
    return ParamDef(name, draw=(1.0, 100.0))


def _time(name="c_t"):
    return ParamDef(name, draw=(1.0, 500.0))


def _angle(name):
    return ParamDef(name, draw=(0.1, 5.0))


def _unit(name):
    return ParamDef(name, hi=1.0, draw=(1e-3, 1.0), log_draw=False)


def _alpha2():
    return ParamDef("alpha", hi=2.0, draw=(1e-3, 2.0), log_draw=False)


_SHAPE = ParamDef("delta", draw=(0.1, 5.0))
_LAM = ParamDef("lam", draw=(0.1, 5.0))

FAMILIES: dict[str, Family] = {}


def register_family(family: Family) -> Family:
    FAMILIES[family.name] = family
    return family


for _fam in [
    Family("matern_time", (_time("alpha"), ParamDef("nu", draw=(0.1, 2.5))), _matern_time, "u"),
    Family("matern_circle", (_angle("alpha"), ParamDef("nu", hi=0.5, draw=(1e-3, 0.5), log_draw=False)),
           _matern_circle, "t"),
    Family("matern_space", (_space("alpha"), ParamDef("nu", draw=(0.1, 2.5))), _matern_space, "h"),
    Family("circ_pow_exp", (_angle("c_p"), _unit("alpha")), _circ_pow_exp, "t"),
    Family("circ_cauchy", (_angle("c_p"), _unit("alpha"), _LAM), _circ_cauchy, "t"),
    Family("circle_time_exp", (_angle("c_s"), _time(), _unit("alpha"), _unit("beta"), _unit("gamma"), _SHAPE),
           _circle_time_exp, "tu"),
    Family("circle_time_cauchy",
           (_angle("c_s"), _time(), _unit("alpha"), _unit("beta"), _unit("gamma"), _SHAPE, _LAM),
           _circle_time_cauchy, "tu"),
    Family("white_exp", (_angle("c_s"), _time(), _alpha2(), _unit("beta"), _unit("gamma"), _SHAPE),
           _white_exp, "tu"),
    Family("white_cauchy", (_angle("c_s"), _time(), _alpha2(), _unit("beta"), _unit("gamma"), _SHAPE, _LAM),
           _white_cauchy, "tu"),
    Family("sinh_series", (_time(), _alpha2(), _unit("beta")), _sinh_series, "tu"),
    Family("cos_exp_cauchy", (_time(), _alpha2(), _LAM), _cos_exp_cauchy, "tu"),
    Family("cos_exp_powexp", (_time(), _alpha2()), _cos_exp_powexp, "tu"),
    Family("space_time_cauchy",
           (_space(), _time(), _alpha2(), _unit("beta"), _unit("gamma"), _SHAPE, _LAM),
           _space_time_cauchy, "hu"),
    Family("space_circle_cauchy",
           (_space(), _angle("c_t"), _unit("alpha"), _unit("beta"), _unit("gamma"), _SHAPE, _LAM),
           _space_circle_cauchy, "ht"),
    Family("model1_separable", (_space(), _angle("c_p"), _time()), _model1_separable, "htu"),
    Family("model7_final", (_space(), _time(), _alpha2()), _model7_final, "htu"),
]:
    register_family(_fam)

PRODUCT = "product"


# --------------------------------------------------------------------------
# KernelSpec
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=True)
class KernelSpec:
    """A catalog family with its parameters and variance.

    ``family == "product"`` multiplies ``members`` (each a KernelSpec).
    Parameter names listed in ``fixed`` are held constant by samplers; for
    products they are addressed as ``"<member index>.<name>"``.
    """

    family: str
    params: Mapping[str, float] = field(default_factory=dict)
    sigma2: float = 1.0
    members: tuple["KernelSpec", ...] = ()
    fixed: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        if not (np.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise InvalidParameterError(f"sigma2 must be >= 0, got {self.sigma2}")
        if self.family == PRODUCT:
            if not self.members:
                raise InvalidParameterError("product needs at least one member")
            if self.params:
                raise InvalidParameterError("product carries parameters on its members only")
            return
        if self.family not in FAMILIES:
            raise InvalidParameterError(f"unknown kernel family {self.family!r}")
        fam = FAMILIES[self.family]
        names = {p.name for p in fam.params}
        missing = names - set(self.params)
        extra = set(self.params) - names
        if missing or extra:
            raise InvalidParameterError(
                f"{self.family}: missing {sorted(missing)} / unexpected {sorted(extra)} parameters"
            )
        for p in fam.params:
            if not p.contains(self.params[p.name]):
                raise InvalidParameterError(
                    f"{self.family}.{p.name} = {self.params[p.name]} outside ({p.lo}, {p.hi}]"
                )
        if self.fixed - names:
            raise InvalidParameterError(f"fixed names {sorted(self.fixed - names)} not in {self.family}")

    # parameter plumbing ---------------------------------------------------

    def param_defs(self) -> dict[str, ParamDef]:
        if self.family == PRODUCT:
            out = {}
            for i, m in enumerate(self.members):
                out.update({f"{i}.{k}": v for k, v in m.param_defs().items()})
            return out
        return {p.name: p for p in FAMILIES[self.family].params}

    def flat_params(self) -> dict[str, float]:
        if self.family == PRODUCT:
            out = {}
            for i, m in enumerate(self.members):
                out.update({f"{i}.{k}": v for k, v in m.flat_params().items()})
            return out
        return dict(self.params)

    def free_params(self) -> list[str]:
        """Names of parameters a sampler may move, in a stable order."""
        if self.family == PRODUCT:
            out = []
            for i, m in enumerate(self.members):
                out += [f"{i}.{k}" for k in m.free_params()]
            return out
        return [p.name for p in FAMILIES[self.family].params if p.name not in self.fixed]

    def with_params(self, updates: Mapping[str, float] | None = None, sigma2: float | None = None) -> "KernelSpec":
        updates = dict(updates or {})
        s2 = self.sigma2 if sigma2 is None else sigma2
        if self.family == PRODUCT:
            members = []
            for i, m in enumerate(self.members):
                sub = {k.split(".", 1)[1]: v for k, v in updates.items() if k.split(".", 1)[0] == str(i)}
                members.append(m.with_params(sub))
            return KernelSpec(PRODUCT, {}, s2, tuple(members))
        unknown = set(updates) - set(self.params)
        if unknown:
            raise InvalidParameterError(f"unknown parameters {sorted(unknown)} for {self.family}")
        return KernelSpec(self.family, {**self.params, **updates}, s2, (), self.fixed)

    def lags(self) -> str:
        if self.family == PRODUCT:
            return "".join(sorted(set("".join(m.lags() for m in self.members))))
        return FAMILIES[self.family].lags

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        out: dict = {"family": self.family, "sigma2": self.sigma2}
        if self.family == PRODUCT:
            out["members"] = [m.to_dict() for m in self.members]
        else:
            out["params"] = dict(self.params)
        if self.fixed:
            out["fixed"] = sorted(self.fixed)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "KernelSpec":
        members = tuple(cls.from_dict(m) for m in d.get("members", ()))
        return cls(d["family"], dict(d.get("params", {})), float(d.get("sigma2", 1.0)), members,
                   frozenset(d.get("fixed", ())))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "KernelSpec":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


def correlation(spec: KernelSpec, h, theta, u) -> np.ndarray:
    """Correlation part (no ``sigma2``) on broadcastable lag arrays; no domain checks."""
    if spec.family == PRODUCT:
        out = 1.0
        for m in spec.members:
            out = out * (m.sigma2 * correlation(m, h, theta, u))
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(h), np.shape(theta), np.shape(u))).copy()
    h, theta, u = np.broadcast_arrays(np.asarray(h, float), np.asarray(theta, float), np.asarray(u, float))
    return np.asarray(FAMILIES[spec.family].corr(h, theta, u, spec.params), dtype=float) * np.ones(h.shape)


def covariance(spec: KernelSpec, h, theta, u) -> np.ndarray:
    return spec.sigma2 * correlation(spec, h, theta, u)


def evaluate(spec: KernelSpec, lag) -> float:
    """Covariance at a single lag, given as a LagTriple or ``(h, theta, u)``."""
    if not isinstance(lag, LagTriple):
        lag = LagTriple(*(float(v) for v in lag))
    return float(covariance(spec, lag.h, lag.theta, lag.u))


def check_lags(h, theta, u):
    h, theta, u = (np.asarray(v, dtype=float) for v in (h, theta, u))
    if np.any(h < 0) or np.any(theta < 0) or np.any(theta > np.pi) or np.any(u < 0) or not (
        np.all(np.isfinite(h)) and np.all(np.isfinite(theta)) and np.all(np.isfinite(u))
    ):
        raise InvalidInputError("lags must lie in [0, inf) x [0, pi] x [0, inf)")


def gram(spec: KernelSpec, points, nugget: float = 0.0, period: float = 24.0) -> np.ndarray:
    """Covariance matrix over ``points`` with ``nugget`` added on the diagonal."""
    xy, t = as_arrays(points)
    if len(t) == 0:
        raise InvalidInputError("gram needs at least one point")
    if nugget < 0:
        raise InvalidParameterError("nugget must be nonnegative")
    h, th, u = pairwise_lags(xy, t, period=period)
    K = covariance(spec, h, th, u)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += nugget
    return K


def cross_covariance(spec: KernelSpec, xy_a, t_a, xy_b, t_b, period: float = 24.0) -> np.ndarray:
    return covariance(spec, *pairwise_lags(xy_a, t_a, xy_b, t_b, period=period))


def relative_min_eigenvalue(K: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(K)
    top = max(abs(ev[-1]), abs(ev[0]))
    if top == 0:
        return 0.0
    return float(ev[0] / top)


def is_psd(K: np.ndarray, rtol: float = PSD_RTOL) -> bool:
    return relative_min_eigenvalue(K) >= -rtol


# --------------------------------------------------------------------------
# validity sweeps
# --------------------------------------------------------------------------


def random_params(spec: KernelSpec, rng: np.random.Generator) -> KernelSpec:
    """Same family with every non-fixed parameter drawn from its sweep range."""
    if spec.family == PRODUCT:
        return KernelSpec(PRODUCT, {}, spec.sigma2, tuple(random_params(m, rng) for m in spec.members))
    fam = FAMILIES[spec.family]
    new = {}
    for p in fam.params:
        if p.name in spec.fixed:
            continue
        lo, hi = p.draw
        v = float(np.exp(rng.uniform(np.log(lo), np.log(hi)))) if p.log_draw else float(rng.uniform(lo, hi))
        new[p.name] = min(max(v, np.nextafter(p.lo, 1.0)), p.hi)
    return spec.with_params(new)


@dataclass
class PSDReport:
    family: str
    n_designs: int
    n_points: int
    worst_ratio: float
    failures: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def validate_psd(
    spec: KernelSpec,
    n_designs: int = 200,
    n_points: int = 40,
    seed: int = 0,
    box_km: float = 60.0,
    days: float = 61.0,
    rtol: float = PSD_RTOL,
) -> PSDReport:
    """Random-design eigenvalue sweep of ``spec``'s family.

    Each design places ``n_points`` uniformly in a ``box_km`` square over
    ``days`` days and draws fresh valid parameters. Failures are recorded in
    the report, never raised.
    """
    if n_designs < 1 or n_points < 1:
        raise InvalidInputError("counts must be at least 1")
    rng = np.random.default_rng(seed)
    worst = np.inf
    failures = []
    for d in range(n_designs):
        xy = rng.uniform(0.0, box_km, size=(n_points, 2))
        t = rng.uniform(0.0, days * 24.0, size=n_points)
        s = random_params(spec, rng)
        try:
            ratio = relative_min_eigenvalue(gram(s, (xy, t)))
        except (np.linalg.LinAlgError, FloatingPointError) as exc:  # pragma: no cover
            failures.append({"design": d, "params": s.flat_params(), "error": str(exc)})
            continue
        worst = min(worst, ratio)
        if not ratio >= -rtol:
            failures.append({"design": d, "params": s.flat_params(), "ratio": ratio})
    return PSDReport(spec.family, n_designs, n_points, float(worst), failures)


# --------------------------------------------------------------------------
# catalog of compared models
# --------------------------------------------------------------------------


def default_spec(family: str, sigma2: float = 1.0) -> KernelSpec:
    """A valid spec at moderate parameter values (bounded ones at their midpoint)."""
    if family == PRODUCT:
        raise InvalidParameterError("products need explicit members")
    fam = FAMILIES[family]
    params = {}
    for p in fam.params:
        params[p.name] = p.midpoint() if p.bounded else float(np.sqrt(p.draw[0] * p.draw[1]))
    return KernelSpec(family, params, sigma2)


def compared_model(k: int, sigma2: float = 1.0) -> KernelSpec:
    """Models 1-7 of the compared catalog, at starting parameter values."""
    exp_time = KernelSpec("matern_time", {"alpha": 50.0, "nu": 0.5}, fixed={"nu"})
    exp_circle = KernelSpec("matern_circle", {"alpha": 1.0, "nu": 0.5}, fixed={"nu"})
    exp_space = KernelSpec("matern_space", {"alpha": 20.0, "nu": 0.5}, fixed={"nu"})
    shape = {"beta": 0.5, "gamma": 0.5, "delta": 1.0, "lam": 1.0}
    space2 = KernelSpec("space_time_cauchy", {"c_s": 20.0, "c_t": 50.0, "alpha": 1.0, **shape})
    space4 = KernelSpec("space_circle_cauchy", {"c_s": 20.0, "c_t": 1.0, "alpha": 0.5, **shape})
    white = KernelSpec("white_cauchy", {"c_s": 1.0, "c_t": 50.0, "alpha": 1.0, **shape})
    if k == 1:
        return KernelSpec("model1_separable", {"c_s": 20.0, "c_p": 1.0, "c_t": 50.0}, sigma2)
    if k == 2:
        return KernelSpec(space2.family, space2.params, sigma2)
    if k == 3:
        return KernelSpec(PRODUCT, {}, sigma2, (exp_circle, space2))
    if k == 4:
        return KernelSpec(space4.family, space4.params, sigma2)
    if k == 5:
        return KernelSpec(PRODUCT, {}, sigma2, (exp_time, space4))
    if k == 6:
        return KernelSpec(PRODUCT, {}, sigma2, (white, exp_space))
    if k == 7:
        return KernelSpec("model7_final", {"c_s": 22.3190, "c_t": 86.9006, "alpha": 0.6740}, sigma2)
    raise InvalidParameterError(f"models are numbered 1-7, got {k}")


def final_model(sigma2: float = POSTERIOR_MEANS["sigma2"], **params) -> KernelSpec:
    p = {"c_s": POSTERIOR_MEANS["c_s"], "c_t": POSTERIOR_MEANS["c_t"], "alpha": POSTERIOR_MEANS["alpha"], **params}
    return KernelSpec("model7_final", p, sigma2)


__all__ = [
    "FAMILIES", "Family", "KernelSpec", "NumericalError", "PSDReport", "ParamDef", "POSTERIOR_MEANS",
    "circle_series_sum", "correlation", "cos_exp", "covariance", "cross_covariance", "default_spec",
    "evaluate", "final_model", "gram", "is_psd", "matern", "random_params", "register_family",
    "relative_min_eigenvalue", "series_oracle_I", "series_oracle_II", "compared_model", "validate_psd",
]
