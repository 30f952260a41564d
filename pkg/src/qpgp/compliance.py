"""Regulatory exceedance and daily respiratory relative risk from predictive draws.

Times are whole hours counted from a midnight-aligned epoch, so hour ``t``
falls on day ``t // 24`` at clock hour ``t % 24``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from qpgp.errors import InvalidInputError, InvalidParameterError

HOURS_PER_DAY = 24
WINDOW_8H = 8


@dataclass(frozen=True)
class RegulatoryLimits:
    hourly_ppb: float = 95.0
    eight_hour_ppb: float = 70.0

    def __post_init__(self):
        if not (self.hourly_ppb > 0 and self.eight_hour_ppb > 0):
            raise InvalidParameterError("limits must be positive")


@dataclass(frozen=True)
class RiskParams:
    """Coefficients of ``r = scale * exp(coef_HD * H * D + coef_On * O_n)``.

    The night runs from ``night_start`` on the previous evening up to, not
    including, ``night_end`` on the morning of the day it is assigned to.
    """

    threshold: float = 60.0
    coef_HD: float = 5.020e-4
    coef_On: float = 5.714e-3
    scale: float = 0.864
    night_start: int = 21
    night_end: int = 8
    lag_days: int = 3

    def __post_init__(self):
        if not (self.coef_HD > 0 and self.coef_On > 0 and self.scale > 0):
            raise InvalidParameterError("risk coefficients and scale must be positive")
        if self.lag_days < 1:
            raise InvalidParameterError("lag_days must be at least 1")
        if not (0 < self.night_end <= self.night_start < HOURS_PER_DAY):
            raise InvalidParameterError("night window must span midnight")

    @property
    def evening_hours(self) -> np.ndarray:
        return np.arange(self.night_start, HOURS_PER_DAY)

    @property
    def morning_hours(self) -> np.ndarray:
        return np.arange(0, self.night_end)


def hourly_exceed(series, limit: float = 95.0) -> np.ndarray:
    return np.asarray(series, dtype=float) > limit


def eight_hour_means(series) -> np.ndarray:
    """Trailing 8-hour means along the last axis; NaN where the window is not full.

    NaN inputs mark missing hours and make every window containing them not full.
    """
    x = np.asarray(series, dtype=float)
    valid = ~np.isnan(x)
    pad = [(0, 0)] * (x.ndim - 1) + [(1, 0)]
    cs = np.cumsum(np.pad(np.where(valid, x, 0.0), pad), axis=-1)
    cn = np.cumsum(np.pad(valid.astype(np.int64), pad), axis=-1)
    out = np.full(x.shape, np.nan)
    if x.shape[-1] >= WINDOW_8H:
        s = cs[..., WINDOW_8H:] - cs[..., :-WINDOW_8H]
        n = cn[..., WINDOW_8H:] - cn[..., :-WINDOW_8H]
        out[..., WINDOW_8H - 1 :] = np.where(n == WINDOW_8H, s / WINDOW_8H, np.nan)
    return out


def eight_hour_exceed(series, limit: float = 70.0) -> np.ndarray:
    """True at hour t when the full window t-7..t averages strictly above ``limit``."""
    m = eight_hour_means(series)
    return np.where(np.isnan(m), False, m > limit)


@dataclass(frozen=True)
class DailyRisk:
    r: float
    H: int
    D: float
    O_n: float
    no_prior_nights: bool = False


def night_mean(evening, morning) -> float:
    return float(np.mean(np.concatenate([np.asarray(evening, float).ravel(), np.asarray(morning, float).ravel()])))


def daily_risk(day_series, prior_nights=(), params: RiskParams = RiskParams()) -> DailyRisk:
    """Relative risk for one day from its 24 hourly values and up to ``lag_days`` night series.

    With no prior nights available ``O_n`` is 0 and the result is flagged.
    """
    day = np.asarray(day_series, dtype=float).ravel()
    if day.size == 0:
        raise InvalidInputError("day series is empty")
    if day.size != HOURS_PER_DAY or np.isnan(day).any():
        raise InvalidInputError("day series must hold 24 hourly values")
    nights = [np.asarray(n, dtype=float).ravel() for n in list(prior_nights)[: params.lag_days]]
    H = int(np.sum(day > params.threshold))
    D = max(float(day.max()) - params.threshold, 0.0)
    flag = len(nights) == 0
    if flag:
        warnings.warn("no prior nights available; O_n set to 0", RuntimeWarning, stacklevel=2)
        O_n = 0.0
    else:
        O_n = float(np.mean([n.mean() for n in nights]))
    r = params.scale * np.exp(params.coef_HD * H * D + params.coef_On * O_n)
    return DailyRisk(float(r), H, D, O_n, flag)


@dataclass
class DayGrid:
    """Hourly values reshaped to ``(..., n_days, 24)`` with NaN for missing hours."""

    values: np.ndarray
    first_day: int

    @classmethod
    def from_series(cls, values, times) -> "DayGrid":
        x = np.asarray(values, dtype=float)
        t = np.asarray(times)
        if t.ndim != 1 or t.size != x.shape[-1]:
            raise InvalidInputError("times must match the last axis of the values")
        if not np.allclose(t, np.round(t)):
            raise InvalidInputError("times must be whole hours")
        t = np.round(t).astype(np.int64)
        if np.unique(t).size != t.size:
            raise InvalidInputError("times must be distinct")
        d0, d1 = t.min() // HOURS_PER_DAY, t.max() // HOURS_PER_DAY
        grid = np.full(x.shape[:-1] + ((d1 - d0 + 1) * HOURS_PER_DAY,), np.nan)
        grid[..., t - d0 * HOURS_PER_DAY] = x
        return cls(grid.reshape(x.shape[:-1] + (d1 - d0 + 1, HOURS_PER_DAY)), int(d0))

    @property
    def n_days(self) -> int:
        return self.values.shape[-2]

    @property
    def days(self) -> np.ndarray:
        return self.first_day + np.arange(self.n_days)

    def flat(self) -> np.ndarray:
        return self.values.reshape(self.values.shape[:-2] + (-1,))


def daily_exceedance(grid: DayGrid, limits: RegulatoryLimits = RegulatoryLimits()) -> np.ndarray:
    """Per day: at least one hour above the hourly limit or one 8-hour mean above its limit."""
    x = grid.flat()
    hit = hourly_exceed(x, limits.hourly_ppb) | eight_hour_exceed(x, limits.eight_hour_ppb)
    return hit.reshape(grid.values.shape).any(axis=-1)


def night_means(grid: DayGrid, params: RiskParams = RiskParams()) -> np.ndarray:
    """Mean of the night ending on each day's morning; NaN when incomplete."""
    v = grid.values
    morning = v[..., params.morning_hours]
    evening = np.full(morning.shape[:-1] + (params.evening_hours.size,), np.nan)
    evening[..., 1:, :] = v[..., :-1, params.evening_hours]
    night = np.concatenate([evening, morning], axis=-1)
    return night.mean(axis=-1)


def risk_terms(grid: DayGrid, params: RiskParams = RiskParams()):
    """H*D, O_n and the no-prior-night flag for every day; NaN on incomplete days."""
    v = grid.values
    complete = ~np.isnan(v).any(axis=-1)
    H = np.sum(v > params.threshold, axis=-1)
    D = np.maximum(np.max(np.where(np.isnan(v), -np.inf, v), axis=-1) - params.threshold, 0.0)
    hd = np.where(complete, H * D, np.nan)
    nm = night_means(grid, params)
    n = nm.shape[-1]
    lagged = np.stack(
        [np.concatenate([np.full(nm.shape[:-1] + (min(k, n),), np.nan), nm[..., : max(n - k, 0)]], axis=-1)
         for k in range(params.lag_days)],
        axis=-1,
    )
    avail = ~np.isnan(lagged)
    count = avail.sum(axis=-1)
    on = np.where(count > 0, np.nansum(lagged, axis=-1) / np.maximum(count, 1), 0.0)
    return hd, np.where(complete, on, np.nan), complete & (count == 0)


def daily_risk_grid(grid: DayGrid, params: RiskParams = RiskParams()):
    hd, on, flag = risk_terms(grid, params)
    return params.scale * np.exp(params.coef_HD * hd + params.coef_On * on), flag


def recalibrate_scale(values, times, params: RiskParams = RiskParams()) -> float:
    """Scale making the mean daily risk over a reference series equal to 1."""
    hd, on, _ = risk_terms(DayGrid.from_series(values, times), params)
    e = np.exp(params.coef_HD * hd + params.coef_On * on)
    if not np.isfinite(e).any():
        raise InvalidInputError("reference series has no complete days")
    return float(1.0 / np.nanmean(e))


@dataclass
class ComplianceReport:
    days: np.ndarray
    p_exceed: np.ndarray
    r_mean: np.ndarray
    r_lo: np.ndarray
    r_hi: np.ndarray
    prop_mean: np.ndarray
    prop_lo: np.ndarray
    prop_hi: np.ndarray
    no_prior_nights: np.ndarray
    meta: dict = field(default_factory=dict)

    def location_frame(self, xy=None, lonlat=None):
        import pandas as pd

        L, Dn = self.p_exceed.shape
        cols = {"location": np.repeat(np.arange(L), Dn), "day": np.tile(self.days, L)}
        if lonlat is not None:
            ll = np.asarray(lonlat, dtype=float)
            cols["lon"], cols["lat"] = np.repeat(ll[:, 0], Dn), np.repeat(ll[:, 1], Dn)
        if xy is not None:
            p = np.asarray(xy, dtype=float)
            cols["x_km"], cols["y_km"] = np.repeat(p[:, 0], Dn), np.repeat(p[:, 1], Dn)
        cols.update(p_exceed=self.p_exceed.ravel(), r_mean=self.r_mean.ravel(),
                    r_lo=self.r_lo.ravel(), r_hi=self.r_hi.ravel(),
                    no_prior_nights=self.no_prior_nights.ravel())
        return pd.DataFrame(cols)

    def city_frame(self):
        import pandas as pd

        return pd.DataFrame({"day": self.days, "prop_mean": self.prop_mean,
                             "prop_lo": self.prop_lo, "prop_hi": self.prop_hi})


def posterior_compliance(
    draws,
    times,
    limits: RegulatoryLimits = RegulatoryLimits(),
    params: RiskParams = RiskParams(),
    level: float = 0.95,
) -> ComplianceReport:
    """Summaries over predictive draws of shape ``(M, L, T)`` in ppb.

    Exceedance probabilities are posterior means of daily indicators; the
    citywide proportion is the fraction of locations exceeding on a day.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim != 3:
        raise InvalidInputError("draws must have shape (M, locations, hours)")
    grid = DayGrid.from_series(x, times)
    hit = daily_exceedance(grid, limits)
    r, flag = daily_risk_grid(grid, params)
    a = (1 - level) / 2
    prop = hit.mean(axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r_lo, r_hi = np.nanquantile(r, [a, 1 - a], axis=0)
        r_mean = np.nanmean(r, axis=0)
    p_lo, p_hi = np.quantile(prop, [a, 1 - a], axis=0)
    return ComplianceReport(
        days=grid.days,
        p_exceed=hit.mean(axis=0),
        r_mean=r_mean,
        r_lo=r_lo,
        r_hi=r_hi,
        prop_mean=prop.mean(axis=0),
        prop_lo=p_lo,
        prop_hi=p_hi,
        no_prior_nights=flag[0],
        meta={"limits": limits.__dict__, "risk": params.__dict__, "level": level, "n_draws": x.shape[0]},
    )
