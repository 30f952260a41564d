"""Posterior prediction at unmonitored location-time pairs.

Each target conditions on latent draws at nearby reference nodes, using the
fitting lags applied both backward and forward in time. Draws are produced
by composition: predictive draw m uses posterior state m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from qpgp.errors import InvalidInputError
from qpgp.geometry import SpaceTimePoint, as_arrays, circular_lag
from qpgp.inference import PosteriorDraws
from qpgp.kernels import KernelSpec, covariance
from qpgp.nngp import (
    JITTER,
    SAME_PLACE_KM,
    NeighborSpec,
    ReferenceSet,
    _block_factors,
    lag_candidates,
    truncate,
)

EXACT_MATCH_KM = 1e-6


def prediction_neighbors(
    x0,
    t0: float,
    ref: ReferenceSet,
    spec: NeighborSpec = NeighborSpec.for_prediction(),
    exclude_coincident: bool = True,
) -> np.ndarray:
    """Reference indices a target at ``(x0, t0)`` conditions on.

    A reference node at the target's own location and time is left out when
    ``exclude_coincident`` is set, so the simultaneous set is the nearest
    other stations.
    """
    x0 = np.asarray(x0, dtype=float)
    exclude = None
    if exclude_coincident:
        same = np.flatnonzero(
            (np.abs(ref.t - t0) <= 1e-9) & (np.hypot(*(ref.xy - x0).T) <= SAME_PLACE_KM)
        )
        exclude = int(same[0]) if same.size else None
    found = lag_candidates(ref.xy, ref.t, x0, float(t0), spec, limit=ref.n, directions=(-1, 1), exclude=exclude)
    if not found:
        raise InvalidInputError(
            f"no reference nodes near target at t = {t0}; it lies outside the data's time range plus the largest lag"
        )
    return truncate(found, ref.t, float(t0), spec.max_neighbors)


@dataclass
class TargetBlocks:
    """Padded neighbor sets of a batch of targets with deduplicated block lags.

    Slot 0 of every block is the target; slots 1.. are its neighbors.
    """

    idx: np.ndarray
    mask: np.ndarray
    h: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    inverse: np.ndarray
    shape: tuple[int, int, int]

    @property
    def n(self) -> int:
        return self.idx.shape[0]

    @classmethod
    def build(cls, xy, t, ref: ReferenceSet, neighbors: list[np.ndarray]) -> "TargetBlocks":
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        t = np.asarray(t, dtype=float).ravel()
        width = max((len(s) for s in neighbors), default=0)
        idx = np.zeros((len(neighbors), width), dtype=np.int64)
        mask = np.zeros((len(neighbors), width), dtype=bool)
        for r, s in enumerate(neighbors):
            idx[r, : len(s)] = s
            mask[r, : len(s)] = True
        pxy = np.concatenate([xy[:, None, :], ref.xy[idx]], axis=1)
        pt = np.concatenate([t[:, None], ref.t[idx]], axis=1)
        d = pxy[:, :, None, :] - pxy[:, None, :, :]
        h = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2).ravel()
        dt = (pt[:, :, None] - pt[:, None, :]).ravel()
        u = np.abs(dt)
        _, first, inv = np.unique(h + 1j * u, return_index=True, return_inverse=True)
        return cls(idx, mask, h[first], circular_lag(dt[first], 0.0, ref.period), u[first],
                   inv.ravel(), (len(neighbors), width + 1, width + 1))

    def conditionals(self, spec: KernelSpec, jitter: float = JITTER) -> tuple[np.ndarray, np.ndarray]:
        """Kriging weights ``(n, width)`` and conditional variances ``(n,)`` under ``spec``."""
        cov = covariance(spec, self.h, self.theta, self.u)[self.inverse].reshape(self.shape)
        B, F = _block_factors(cov, spec.sigma2, self.mask, np.arange(self.n), jitter)
        return B, np.maximum(F, 0.0)


def draw_w(blocks: TargetBlocks, w: np.ndarray, spec: KernelSpec, rng: np.random.Generator) -> np.ndarray:
    """One latent draw per target given reference latent values ``w`` for a single state."""
    B, F = blocks.conditionals(spec)
    mean = np.einsum("ij,ij->i", B, np.asarray(w)[blocks.idx])
    return mean + np.sqrt(F) * rng.standard_normal(blocks.n)


def interpolate_covariates(x0, station_xy, station_values) -> np.ndarray:
    """Inverse squared distance weighting of simultaneously observed covariates.

    A station within ``EXACT_MATCH_KM`` of the target supplies its values directly.
    """
    station_xy = np.asarray(station_xy, dtype=float).reshape(-1, 2)
    vals = np.asarray(station_values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if len(station_xy) == 0:
        raise InvalidInputError("no simultaneous station records to interpolate covariates from")
    if len(vals) != len(station_xy):
        raise InvalidInputError("station coordinates and covariate rows disagree")
    d = np.hypot(*(station_xy - np.asarray(x0, dtype=float)).T)
    hit = np.flatnonzero(d < EXACT_MATCH_KM)
    if hit.size:
        return vals[hit[0]].copy()
    wts = 1.0 / d**2
    return wts @ vals / wts.sum()


def in_hull(station_xy, xy) -> np.ndarray:
    """True for points inside or on the convex hull of the stations."""
    try:
        tri = Delaunay(np.asarray(station_xy, dtype=float))
    except (QhullError, ValueError) as exc:
        raise InvalidInputError("the hull check needs at least three non-collinear stations") from exc
    return tri.find_simplex(np.asarray(xy, dtype=float).reshape(-1, 2), tol=1e-9) >= 0


def grid_targets(station_xy, resolution_km: float, hours, hull: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Regular grid over the stations' bounding box, repeated for every hour in ``hours``."""
    if not resolution_km > 0:
        raise InvalidInputError("resolution_km must be positive")
    s = np.asarray(station_xy, dtype=float)
    gx = np.arange(s[:, 0].min(), s[:, 0].max() + 1e-9, resolution_km)
    gy = np.arange(s[:, 1].min(), s[:, 1].max() + 1e-9, resolution_km)
    pts = np.array(np.meshgrid(gx, gy)).reshape(2, -1).T
    if hull:
        pts = pts[in_hull(s, pts)]
    hours = np.asarray(hours, dtype=float).ravel()
    return np.tile(pts, (len(hours), 1)), np.repeat(hours, len(pts))


@dataclass
class PredictionTask:
    targets: list[SpaceTimePoint] | tuple[np.ndarray, np.ndarray]
    neighbor_spec: NeighborSpec = NeighborSpec.for_prediction()
    hull_check: bool = True
    exclude_coincident: bool = True


@dataclass
class PredictiveDraws:
    """Composition-sampled draws, shape ``(M, n_targets)``; row m uses posterior state m."""

    sqrt_scale: np.ndarray
    latent: np.ndarray

    @property
    def observable(self) -> np.ndarray:
        return self.sqrt_scale**2

    def summary(self, scale: str = "observable") -> dict[str, np.ndarray]:
        x = self.observable if scale == "observable" else self.sqrt_scale
        q05, q95 = np.quantile(x, [0.05, 0.95], axis=0)
        return {"mean": x.mean(axis=0), "sd": x.std(axis=0, ddof=1) if len(x) > 1 else np.zeros(x.shape[1]),
                "q05": q05, "q95": q95}


def posterior_predictive(
    task: PredictionTask,
    draws: PosteriorDraws,
    ref: ReferenceSet,
    template: KernelSpec,
    X_targets,
    station_xy=None,
    seed: int = 0,
    chunk: int = 4096,
) -> PredictiveDraws:
    """``y* = x*'beta + w* + eps*`` for every retained state, on the square-root scale.

    ``X_targets`` is the ``(n_targets, p)`` design at the targets. The
    observable is the square of each draw.
    """
    if draws.w is None:
        raise InvalidInputError("posterior draws were stored without latent values")
    xy, t = as_arrays(task.targets)
    X = np.asarray(X_targets, dtype=float).reshape(len(t), -1)
    if task.hull_check:
        if station_xy is None:
            station_xy = np.unique(ref.xy, axis=0)
        outside = np.flatnonzero(~in_hull(station_xy, xy))
        if outside.size:
            raise InvalidInputError(f"targets outside the network's convex hull: rows {outside[:10].tolist()}")
    nbrs = [prediction_neighbors(xy[k], t[k], ref, task.neighbor_spec, task.exclude_coincident) for k in range(len(t))]
    M = draws.n_draws
    rng = np.random.default_rng(seed)
    latent = np.empty((M, len(t)))
    out = np.empty((M, len(t)))
    tau_col = draws.column("tau2")
    for a in range(0, len(t), chunk):
        sl = slice(a, min(a + chunk, len(t)))
        blocks = TargetBlocks.build(xy[sl], t[sl], ref, nbrs[sl])
        for m in range(M):
            latent[m, sl] = draw_w(blocks, draws.w[m], draws.kernel_spec(m, template), rng)
    beta = draws.beta()
    for m in range(M):
        eps = np.sqrt(tau_col[m]) * rng.standard_normal(len(t))
        out[m] = X @ beta[m] + latent[m] + eps
    return PredictiveDraws(out, latent)
