"""Nearest-neighbor GP: reference ordering, neighbor sets, sparse factors.

Nodes are ordered by time, then south to north. Each node conditions on a
fixed set of earlier nodes chosen at the periodic lags that carry most of
the covariance (same hour yesterday, a week ago, ...), so the joint density
factorizes as a product of univariate Gaussian conditionals
``w_i | w_N(i) ~ N(B_i w_N(i), F_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qpgp.errors import InvalidInputError, NumericalError
from qpgp.geometry import SpaceTimePoint, as_arrays, circular_lag
from qpgp.kernels import KernelSpec, covariance

JITTER = 1e-10
SAME_PLACE_KM = 1e-9
_CHUNK_ENTRIES = 4_000_000


@dataclass(frozen=True)
class ReferenceSet:
    """Points in reference order; ``order[i]`` is the input index of node ``i``."""

    xy: np.ndarray
    t: np.ndarray
    order: np.ndarray
    period: float = 24.0

    @property
    def n(self) -> int:
        return len(self.t)

    def points(self) -> list[SpaceTimePoint]:
        return [SpaceTimePoint.at(x, y, t) for (x, y), t in zip(self.xy, self.t)]

    def to_reference(self, values):
        """Reorder per-input-point values into reference order."""
        return np.asarray(values)[self.order]

    def to_input(self, values):
        out = np.empty_like(np.asarray(values))
        out[self.order] = values
        return out


def build_reference(points, period: float = 24.0) -> ReferenceSet:
    xy, t = as_arrays(points)
    if not (np.all(np.isfinite(xy)) and np.all(np.isfinite(t))):
        raise InvalidInputError("coordinates and times must be finite")
    keys = np.column_stack([t, xy])
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    dup = np.flatnonzero(counts[inv.ravel()] > 1)
    if dup.size:
        raise InvalidInputError(f"duplicate space-time points at input rows {dup.tolist()}")
    order = np.lexsort((xy[:, 1], t))
    return ReferenceSet(xy[order].copy(), t[order].copy(), order, period)


@dataclass(frozen=True)
class NeighborSpec:
    """Which earlier nodes a node conditions on.

    At each lag in ``lags_back`` the ``n_spatial`` nearest locations
    (the node's own location included) are taken; simultaneous nodes add
    the ``n_spatial - 1`` nearest other locations. ``self_excluded_lags``
    drops the node's own location at those lags and ``self_lags`` adds
    only the node's own location at extra lags.
    """

    n_spatial: int = 5
    lags_back: tuple[float, ...] = (1.0, 2.0, 23.0, 24.0, 25.0, 168.0)
    include_simultaneous: bool = True
    max_neighbors: int = 34
    lag_tolerance: float = 0.5
    self_excluded_lags: tuple[float, ...] = ()
    self_lags: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lags_back", tuple(float(v) for v in self.lags_back))
        object.__setattr__(self, "self_excluded_lags", tuple(float(v) for v in self.self_excluded_lags))
        object.__setattr__(self, "self_lags", tuple(float(v) for v in self.self_lags))
        if any(v <= 0 for v in self.lags_back + self.self_lags):
            raise InvalidInputError("lags must be positive")
        if self.max_neighbors < 1 or self.n_spatial < 1 or self.lag_tolerance < 0:
            raise InvalidInputError("max_neighbors, n_spatial must be >= 1 and lag_tolerance >= 0")

    @classmethod
    def model4(cls) -> "NeighborSpec":
        """Lag set used with the purely circular spatial model: no 24/168 h self lags, 3/167/169 h instead."""
        return cls(self_excluded_lags=(24.0, 168.0), self_lags=(3.0, 167.0, 169.0), max_neighbors=35)

    @classmethod
    def for_prediction(cls) -> "NeighborSpec":
        """Default spec for prediction: lags are applied both back and forward."""
        return cls(max_neighbors=65)

    def to_dict(self) -> dict:
        return {
            "n_spatial": self.n_spatial,
            "lags_back": list(self.lags_back),
            "include_simultaneous": self.include_simultaneous,
            "max_neighbors": self.max_neighbors,
            "lag_tolerance": self.lag_tolerance,
            "self_excluded_lags": list(self.self_excluded_lags),
            "self_lags": list(self.self_lags),
        }

    @classmethod
    def from_dict(cls, d) -> "NeighborSpec":
        d = dict(d)
        for k in ("lags_back", "self_excluded_lags", "self_lags"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class NeighborGraph:
    sets: tuple[np.ndarray, ...]

    @property
    def n(self) -> int:
        return len(self.sets)

    @property
    def width(self) -> int:
        return max((len(s) for s in self.sets), default=0)

    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """``(idx, mask)`` of shape ``(n, width)``; padded slots hold index 0."""
        m = self.width
        idx = np.zeros((self.n, m), dtype=np.int64)
        mask = np.zeros((self.n, m), dtype=bool)
        for i, s in enumerate(self.sets):
            idx[i, : len(s)] = s
            mask[i, : len(s)] = True
        return idx, mask

    def children(self) -> list[list[tuple[int, int]]]:
        """For each node, the ``(child, slot)`` pairs with the node in the child's set."""
        out: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for j, s in enumerate(self.sets):
            for slot, i in enumerate(s):
                out[int(i)].append((j, slot))
        return out


def full_graph(n: int) -> NeighborGraph:
    """Every node conditions on all earlier nodes (the exact joint density)."""
    return NeighborGraph(tuple(np.arange(i, dtype=np.int64) for i in range(n)))


def _window(t_sorted, lo, hi, limit):
    a = np.searchsorted(t_sorted, lo, side="left")
    b = min(np.searchsorted(t_sorted, hi, side="right"), limit)
    return np.arange(a, b) if b > a else np.empty(0, dtype=np.int64)


def _nearest(cands, xy, x0, k):
    if cands.size == 0 or k <= 0:
        return cands[:0], np.empty(0)
    d = np.hypot(xy[cands, 0] - x0[0], xy[cands, 1] - x0[1])
    keep = np.lexsort((cands, d))[:k]
    return cands[keep], d[keep]


def lag_candidates(
    xy: np.ndarray,
    t: np.ndarray,
    x0: np.ndarray,
    t0: float,
    spec: NeighborSpec,
    limit: int,
    directions: tuple[int, ...] = (-1,),
    exclude: int | None = None,
) -> dict[int, float]:
    """Candidate nodes among ``[0, limit)`` for a point, mapped to their distance.

    ``directions`` holds -1 (lags backward), +1 (forward) or both.
    ``exclude`` removes one node (the point itself) from the simultaneous set.
    """
    tol = spec.lag_tolerance
    found: dict[int, float] = {}

    def take(idx, d):
        for j, dj in zip(idx.tolist(), d.tolist()):
            found.setdefault(j, dj)

    for sgn in directions:
        for lag in spec.lags_back:
            c = _window(t, t0 + sgn * lag - tol, t0 + sgn * lag + tol, limit)
            idx, d = _nearest(c, xy, x0, spec.n_spatial)
            if lag in spec.self_excluded_lags:
                keep = d > SAME_PLACE_KM
                idx, d = idx[keep], d[keep]
            take(idx, d)
        for lag in spec.self_lags:
            c = _window(t, t0 + sgn * lag - tol, t0 + sgn * lag + tol, limit)
            idx, d = _nearest(c, xy, x0, spec.n_spatial)
            keep = d <= SAME_PLACE_KM
            take(idx[keep], d[keep])
    if spec.include_simultaneous:
        c = _window(t, t0 - tol, t0 + tol, limit)
        if exclude is not None:
            c = c[c != exclude]
        # fitting: the node itself is one of the n_spatial nearest; prediction targets are not nodes
        k = spec.n_spatial - 1 if directions == (-1,) else spec.n_spatial
        idx, d = _nearest(c, xy, x0, k)
        take(idx, d)
    return found


def truncate(found: dict[int, float], t: np.ndarray, t0: float, k: int) -> np.ndarray:
    """Keep the ``k`` candidates with smallest time lag, then distance; return sorted indices."""
    if not found:
        return np.empty(0, dtype=np.int64)
    idx = np.fromiter(found.keys(), dtype=np.int64, count=len(found))
    d = np.fromiter(found.values(), dtype=float, count=len(found))
    u = np.abs(t[idx] - t0)
    keep = np.lexsort((idx, d, u))[:k]
    return np.sort(idx[keep])


def build_neighbors(ref: ReferenceSet, spec: NeighborSpec = NeighborSpec()) -> NeighborGraph:
    sets = []
    m = spec.max_neighbors
    for i in range(ref.n):
        if i <= m:
            sets.append(np.arange(i, dtype=np.int64))
            continue
        found = lag_candidates(ref.xy, ref.t, ref.xy[i], ref.t[i], spec, limit=i)
        sets.append(truncate(found, ref.t, ref.t[i], m))
    return NeighborGraph(tuple(sets))


# --------------------------------------------------------------------------
# factors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NeighborLags:
    """Lags within each node's block: slot 0 is the node, slots 1.. its neighbors."""

    h: np.ndarray
    theta: np.ndarray
    u: np.ndarray


def neighbor_lags(graph: NeighborGraph, ref: ReferenceSet, rows=None) -> NeighborLags:
    idx, mask = graph.padded()
    if rows is not None:
        idx, self_idx = idx[rows], np.arange(graph.n)[rows]
    else:
        self_idx = np.arange(graph.n)
    full = np.concatenate([self_idx[:, None], idx], axis=1)
    xy, t = ref.xy[full], ref.t[full]
    dx = xy[:, :, None, :] - xy[:, None, :, :]
    h = np.sqrt(dx[..., 0] ** 2 + dx[..., 1] ** 2)
    dt = t[:, :, None] - t[:, None, :]
    return NeighborLags(h, circular_lag(dt, 0.0, ref.period), np.abs(dt))


@dataclass(frozen=True)
class SparseFactors:
    """``B`` rows (padded to a common width) and conditional variances ``F``."""

    idx: np.ndarray
    mask: np.ndarray
    B: np.ndarray
    F: np.ndarray

    @property
    def n(self) -> int:
        return len(self.F)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.mask[i]
        return self.idx[i, m], self.B[i, m]

    def conditional_means(self, w: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", self.B, np.asarray(w)[self.idx])


class LagCache:
    """Precomputed block lags for repeated factor evaluation at new parameters.

    On gridded data most block entries repeat a small set of distinct lag
    triples; when they do, the kernel is evaluated once per distinct triple
    and gathered back into the blocks.
    """

    def __init__(self, graph: NeighborGraph, ref: ReferenceSet, dedupe: bool = True):
        self.graph = graph
        self.ref = ref
        self.idx, self.mask = graph.padded()
        width = graph.width + 1
        step = max(1, _CHUNK_ENTRIES // (width * width))
        self.chunks = [np.arange(s, min(s + step, graph.n)) for s in range(0, graph.n, step)]
        lags = [neighbor_lags(graph, ref, rows) for rows in self.chunks]
        self.shapes = [lg.h.shape for lg in lags]
        self.unique = None
        self._lags = lags
        if dedupe and graph.n > 0:
            h = np.concatenate([lg.h.ravel() for lg in lags])
            th = np.concatenate([lg.theta.ravel() for lg in lags])
            u = np.concatenate([lg.u.ravel() for lg in lags])
            # theta is a function of u, so (h, u) identifies a triple; 1-D complex keys sort fast
            _, first, inv = np.unique(h + 1j * u, return_index=True, return_inverse=True)
            uniq = np.column_stack([h[first], th[first], u[first]])
            if len(uniq) < 0.25 * len(h):
                inv = inv.ravel()
                bounds = np.cumsum([0] + [int(np.prod(s)) for s in self.shapes])
                self.unique = NeighborLags(uniq[:, 0], uniq[:, 1], uniq[:, 2])
                self._inverse = [inv[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
                self._lags = None

    def covariances(self, spec: KernelSpec):
        """Yield ``(rows, block covariance)`` per chunk."""
        if self.unique is not None:
            cu = covariance(spec, self.unique.h, self.unique.theta, self.unique.u)
            for rows, inv, shape in zip(self.chunks, self._inverse, self.shapes):
                yield rows, cu[inv].reshape(shape)
        else:
            for rows, lg in zip(self.chunks, self._lags):
                yield rows, covariance(spec, lg.h, lg.theta, lg.u)


def _block_factors(cov: np.ndarray, sigma2: float, mask: np.ndarray, rows: np.ndarray, jitter: float):
    m = mask.shape[1]
    c0 = cov[:, 0, 0]
    if m == 0:
        return np.zeros((len(rows), 0)), c0
    pair = mask[:, :, None] & mask[:, None, :]
    eye = np.eye(m)
    CN = np.where(pair, cov[:, 1:, 1:], eye) + (jitter * sigma2) * eye
    c = np.where(mask, cov[:, 1:, 0], 0.0)
    try:
        L = np.linalg.cholesky(CN)
    except np.linalg.LinAlgError:
        for r in range(len(rows)):
            try:
                np.linalg.cholesky(CN[r])
            except np.linalg.LinAlgError:
                raise NumericalError(
                    f"neighbor block of node {int(rows[r])} is not positive definite after jitter"
                ) from None
        raise  # pragma: no cover
    z = np.linalg.solve(L, c[..., None])
    B = np.linalg.solve(np.swapaxes(L, 1, 2), z)[..., 0]
    F = c0 - np.einsum("ij,ij->i", z[..., 0], z[..., 0])
    return np.where(mask, B, 0.0), F


def factors(
    graph: NeighborGraph,
    ref: ReferenceSet,
    spec: KernelSpec,
    cache: LagCache | None = None,
    jitter: float = JITTER,
) -> SparseFactors:
    """Regression rows ``B_i`` and conditional variances ``F_i`` of every node."""
    if cache is None:
        cache = LagCache(graph, ref)
    B = np.zeros(cache.idx.shape)
    F = np.empty(graph.n)
    for rows, cov in cache.covariances(spec):
        B[rows], F[rows] = _block_factors(cov, spec.sigma2, cache.mask[rows], rows, jitter)
    bad = np.flatnonzero(~(F > 0))
    if bad.size:
        raise NumericalError(f"non-positive conditional variance at node {int(bad[0])} (F = {F[bad[0]]:.3g})")
    return SparseFactors(cache.idx, cache.mask, B, F)


def log_density(w, fac: SparseFactors) -> float:
    """Log of the DAG density ``prod_i N(w_i | B_i w_N(i), F_i)``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (fac.n,):
        raise InvalidInputError(f"w has shape {w.shape}, expected ({fac.n},)")
    r = w - fac.conditional_means(w)
    return float(-0.5 * np.sum(np.log(2 * np.pi * fac.F) + r * r / fac.F))

