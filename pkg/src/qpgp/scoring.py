"""Proper scores and point criteria for held-out predictions.

All scores are negatively oriented: lower is better.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from qpgp.errors import InvalidInputError


def crps_mc(samples, y: float) -> float:
    """Empirical CRPS ``mean|Y_j - y| - 1/(2M^2) sum_jk |Y_j - Y_k|``.

    The double sum is computed from the order statistics in O(M log M).
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = x.size
    if m < 2:
        raise InvalidInputError("CRPS needs at least two samples")
    first = np.mean(np.abs(x - y))
    # sum_{j,k} |x_j - x_k| = 2 sum_i (2i - m - 1) x_(i), i = 1..m
    w = 2.0 * np.arange(1, m + 1) - m - 1
    spread = 2.0 * np.dot(w, x) / (2.0 * m * m)
    return float(first - spread)


def crps_mc_se(samples, y: float) -> float:
    """Monte Carlo standard error of :func:`crps_mc` from its first-order projection."""
    x = np.asarray(samples, dtype=float).ravel()
    m = x.size
    order = np.argsort(x)
    xs = x[order]
    csum = np.cumsum(xs)
    i = np.arange(m)
    # mean_k |x_j - x_k| for each sorted x_j
    mean_abs = (xs * i - (csum - xs) + (csum[-1] - csum) - xs * (m - 1 - i)) / m
    g = np.abs(xs - y) - mean_abs
    return float(np.std(g, ddof=1) / np.sqrt(m))


def gaussian_crps(mu: float, sigma: float, y: float) -> float:
    """Closed-form CRPS of ``N(mu, sigma^2)`` at ``y``."""
    from scipy.stats import norm

    z = (y - mu) / sigma
    return float(sigma * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - 1 / np.sqrt(np.pi)))


def energy_score_mc(samples, y) -> float:
    """Empirical energy score with exponent 1 and Euclidean norm.

    ``samples`` is ``(M, d)``; with ``d == 1`` the result is exactly :func:`crps_mc`.
    """
    x = np.asarray(samples, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != y.shape[0]:
        raise InvalidInputError(f"samples {x.shape} and observation {y.shape} disagree")
    m = x.shape[0]
    if m < 2:
        raise InvalidInputError("energy score needs at least two samples")
    if x.shape[1] == 1:
        return crps_mc(x[:, 0], float(y[0]))
    first = np.mean(np.linalg.norm(x - y, axis=1))
    spread = 0.0
    step = max(1, 2_000_000 // (m * x.shape[1]))
    for a in range(0, m, step):
        d = x[a : a + step, None, :] - x[None, :, :]
        spread += np.sqrt(np.einsum("ijk,ijk->ij", d, d)).sum()
    return float(first - spread / (2.0 * m * m))


def point_scores(draws, y, alpha: float = 0.1) -> tuple[float, float, float]:
    """RMSPE and MAPE of the predictive mean and central ``1 - alpha`` interval coverage.

    ``draws`` is ``(M, n)``: M predictive samples for each of n held-out values.
    """
    draws = np.asarray(draws, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[1] != y.size:
        raise InvalidInputError("draws and observations disagree in length")
    if y.size == 0:
        return float("nan"), float("nan"), float("nan")
    resid = draws.mean(axis=0) - y
    lo, hi = np.quantile(draws, [alpha / 2, 1 - alpha / 2], axis=0)
    return (
        float(np.sqrt(np.mean(resid**2))),
        float(np.mean(np.abs(resid))),
        float(np.mean((y >= lo) & (y <= hi))),
    )


def point_scores_from_residuals(resid) -> tuple[float, float]:
    resid = np.asarray(resid, dtype=float)
    return float(np.sqrt(np.mean(resid**2))), float(np.mean(np.abs(resid)))


def holdout_hours(times, fraction: float = 0.2, seed: int = 0) -> np.ndarray:
    """Boolean mask of records whose hour is among a random ``fraction`` of distinct hours."""
    times = np.asarray(times, dtype=float)
    if not 0 <= fraction < 1:
        raise InvalidInputError("fraction must lie in [0, 1)")
    hours = np.unique(times)
    k = int(round(fraction * hours.size))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(hours, size=k, replace=False) if k else np.empty(0)
    return np.isin(times, chosen)


@dataclass
class ScoreReport:
    model: str
    es: float
    crps: float
    mape: float
    rmspe: float
    coverage: float

    def as_row(self) -> dict:
        return asdict(self)


def score_holdout(model: str, draws, y, groups, alpha: float = 0.1) -> ScoreReport:
    """Average CRPS over held-out values and energy score over ``groups`` (e.g. hours).

    ``draws`` is ``(M, n)`` on the scale models are compared on.
    """
    draws = np.asarray(draws, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    groups = np.asarray(groups)
    crps = np.mean([crps_mc(draws[:, j], y[j]) for j in range(y.size)])
    es = np.mean([energy_score_mc(draws[:, groups == g], y[groups == g]) for g in np.unique(groups)])
    rmspe, mape, cvg = point_scores(draws, y, alpha)
    return ScoreReport(model, float(es), float(crps), mape, rmspe, cvg)


def format_table(reports: list[ScoreReport]) -> str:
    head = f"{'Model':<24}{'ES':>10}{'CRPS':>10}{'MAPE':>10}{'RMSPE':>10}{'90% CVG':>10}"
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.model:<24}{r.es:>10.3f}{r.crps:>10.3f}{r.mape:>10.3f}{r.rmspe:>10.3f}{r.coverage:>10.3f}")
    return "\n".join(lines)
