"""Planar projection and the (h, theta, u) lags consumed by every kernel.

Space is a local equirectangular projection in km, time is real hours from a
dataset epoch, and the time-of-day lag is the geodesic angle between two
times placed on a clock of length ``period`` hours.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qpgp.errors import InvalidInputError

EARTH_RADIUS_KM = 6371.0
DEFAULT_PERIOD = 24.0


@dataclass(frozen=True)
class StationLocation:
    id: str
    lat: float
    lon: float


@dataclass(frozen=True)
class PlanarCoord:
    x: float
    y: float


@dataclass(frozen=True)
class SpaceTimePoint:
    coord: PlanarCoord
    t: float

    @classmethod
    def at(cls, x: float, y: float, t: float) -> "SpaceTimePoint":
        return cls(PlanarCoord(float(x), float(y)), float(t))


@dataclass(frozen=True)
class LagTriple:
    h: float
    theta: float
    u: float

    def __post_init__(self):
        if not (self.h >= 0 and 0 <= self.theta <= np.pi and self.u >= 0):
            raise InvalidInputError(f"lag out of domain: {self}")


def _check_latlon(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    bad = ~np.isfinite(lat) | ~np.isfinite(lon) | (np.abs(lat) > 90) | (np.abs(lon) > 180)
    if np.any(bad):
        raise InvalidInputError(f"latitude/longitude out of range at rows {np.flatnonzero(bad).tolist()}")
    return lat, lon


def project_latlon(lat, lon, center: tuple[float, float] | None = None) -> np.ndarray:
    """Array form of :func:`project`; returns an ``(n, 2)`` array of km offsets."""
    lat, lon = _check_latlon(np.atleast_1d(lat), np.atleast_1d(lon))
    if lat.size == 0:
        raise InvalidInputError("at least one location is required")
    if center is None:
        lat0, lon0 = lat.mean(), lon.mean()
    else:
        lat0, lon0 = _check_latlon(center[0], center[1])
    x = EARTH_RADIUS_KM * np.cos(np.radians(lat0)) * np.radians(lon - lon0)
    y = EARTH_RADIUS_KM * np.radians(lat - lat0)
    return np.column_stack([x, y])


def unproject_xy(xy, center: tuple[float, float]) -> np.ndarray:
    """Inverse of :func:`project_latlon` about ``center``; returns ``(n, 2)`` of (lat, lon)."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    lat0, lon0 = center
    lat = lat0 + np.degrees(xy[:, 1] / EARTH_RADIUS_KM)
    lon = lon0 + np.degrees(xy[:, 0] / (EARTH_RADIUS_KM * np.cos(np.radians(lat0))))
    return np.column_stack([lat, lon])


def project(
    stations: Sequence[StationLocation], center: StationLocation | None = None
) -> list[PlanarCoord]:
    """Project stations onto a plane tangent at ``center`` (default: centroid)."""
    if not stations:
        raise InvalidInputError("at least one station is required")
    ids = [s.id for s in stations]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("station ids must be unique")
    c = None if center is None else (center.lat, center.lon)
    xy = project_latlon([s.lat for s in stations], [s.lon for s in stations], c)
    return [PlanarCoord(float(x), float(y)) for x, y in xy]


def haversine_km(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a))


def circular_lag(t1, t2, period: float = DEFAULT_PERIOD):
    """Angle in ``[0, pi]`` between two times on a clock of length ``period``.

    Works elementwise on arrays.
    """
    if not period > 0:
        raise InvalidInputError("period must be positive")
    m = np.mod(np.abs(np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float)), period)
    theta = (2 * np.pi / period) * np.minimum(m, period - m)
    if np.ndim(theta) == 0:
        return float(theta)
    return theta


def lag_triple(p1: SpaceTimePoint, p2: SpaceTimePoint, period: float = DEFAULT_PERIOD) -> LagTriple:
    h = float(np.hypot(p1.coord.x - p2.coord.x, p1.coord.y - p2.coord.y))
    return LagTriple(h, circular_lag(p1.t, p2.t, period), abs(p1.t - p2.t))


def as_arrays(points) -> tuple[np.ndarray, np.ndarray]:
    """Split a sequence of SpaceTimePoint (or an ``(xy, t)`` pair) into arrays."""
    if isinstance(points, tuple) and len(points) == 2 and not isinstance(points[0], SpaceTimePoint):
        xy = np.asarray(points[0], dtype=float).reshape(-1, 2)
        t = np.asarray(points[1], dtype=float).reshape(-1)
        return xy, t
    xy = np.array([[p.coord.x, p.coord.y] for p in points], dtype=float).reshape(-1, 2)
    t = np.array([p.t for p in points], dtype=float)
    return xy, t


def pairwise_lags(xy_a, t_a, xy_b=None, t_b=None, period: float = DEFAULT_PERIOD):
    """All lags between two point sets as ``(h, theta, u)`` arrays of shape ``(na, nb)``."""
    if xy_b is None:
        xy_b, t_b = xy_a, t_a
    xy_a = np.asarray(xy_a, dtype=float)
    xy_b = np.asarray(xy_b, dtype=float)
    d = xy_a[:, None, :] - xy_b[None, :, :]
    h = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)
    dt = np.asarray(t_a, dtype=float)[:, None] - np.asarray(t_b, dtype=float)[None, :]
    return h, circular_lag(dt, 0.0, period), np.abs(dt)
