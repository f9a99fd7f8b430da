"""Scaling-exponent estimators for point-cloud approximations of measures.

All estimators work on weighted clouds (``points``, ``weights``, optional
``period`` marking angular coordinates) and fit log-log slopes over a
geometric ladder of radii.  Balls are closed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

N_SCALES = 12
TRIM = 2                 # scales dropped at each end of a default ladder
MIN_BALL = 20            # points in the median ball at the smallest default radius
MAX_EXACT_PAIRS = 20000  # clouds larger than this use a reference subsample for pair counts
N_REFERENCE = 5000
ENERGY_MAX_POINTS = 4000


class EstimateError(ValueError):
    """Raised when a scaling exponent cannot be fitted."""


def _as_cloud(cloud, weights=None, period=None):
    """Accept a SampledMeasure-like object or a bare array."""
    if hasattr(cloud, "points"):
        pts = np.atleast_2d(np.asarray(cloud.points, dtype=float))
        w = np.asarray(cloud.weights, dtype=float)
        per = getattr(cloud, "period", None) if period is None else period
    else:
        pts = np.asarray(cloud, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.full(len(pts), 1.0 / len(pts)) if weights is None else np.asarray(weights, dtype=float)
        per = period
    if per is not None:
        per = np.asarray(per, dtype=float)
        if not np.any(per > 0):
            per = None
    return pts, w, per


# ---------------------------------------------------------------------------
# Neighbour index

class NeighborIndex:
    """Fixed-radius queries under the Euclidean metric, optionally wrapping
    coordinates with a positive ``period`` entry (angles)."""

    def __init__(self, points, weights=None, period=None):
        self.points, self.weights, self.period = _as_cloud(points, weights, period)
        data = self.points
        if self.period is not None:
            data = data.copy()
            wrap = self.period > 0
            data[:, wrap] = np.mod(data[:, wrap], self.period[wrap])
            # mod can round up to the period itself
            data[:, wrap] = np.where(data[:, wrap] >= self.period[wrap], 0.0, data[:, wrap])
        self._data = data
        self.tree = cKDTree(data, boxsize=self.period)
        self.uniform = bool(np.all(self.weights == self.weights[0]))

    def __len__(self):
        return len(self.points)

    def _wrap(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.period is not None:
            x = x.copy()
            wrap = self.period > 0
            x[:, wrap] = np.mod(x[:, wrap], self.period[wrap])
            x[:, wrap] = np.where(x[:, wrap] >= self.period[wrap], 0.0, x[:, wrap])
        return x

    def distance(self, a, b) -> np.ndarray:
        diff = np.abs(np.atleast_2d(a) - np.atleast_2d(b))
        if self.period is not None:
            wrap = self.period > 0
            diff[:, wrap] = np.mod(diff[:, wrap], self.period[wrap])
            diff[:, wrap] = np.minimum(diff[:, wrap], self.period[wrap] - diff[:, wrap])
        return np.sqrt(np.sum(diff ** 2, axis=1))

    def query(self, x, r: float) -> np.ndarray:
        """Sorted indices of all points within distance ``r`` of ``x``."""
        return np.array(sorted(self.tree.query_ball_point(self._wrap(x)[0], r)), dtype=np.int64)

    def ball_mass(self, x, radii, exclude: Optional[np.ndarray] = None) -> np.ndarray:
        """``mu(B(x_q, r))`` for each query row and radius: shape ``(n_queries, n_radii)``.

        ``exclude`` gives, per query, a cloud index whose own weight is removed
        (used when the query is itself a cloud point).
        """
        q = self._wrap(x)
        radii = np.atleast_1d(radii)
        out = np.empty((len(q), len(radii)))
        for j, r in enumerate(radii):
            if self.uniform:
                out[:, j] = self.tree.query_ball_point(q, r, return_length=True) * self.weights[0]
            else:
                lists = self.tree.query_ball_point(q, r)
                out[:, j] = [self.weights[idx].sum() for idx in lists]
        if exclude is not None:
            out -= self.weights[np.asarray(exclude)][:, None]
            out = np.maximum(out, 0.0)
        return out

    def pairs(self, r: float, other: Optional["NeighborIndex"] = None):
        """All ``(i, j, dist)`` with ``dist <= r`` (``i`` indexes ``other`` if given).

        Self pairs ``(i, i)`` are included when ``other`` is ``None``.
        """
        src = self.tree if other is None else other.tree
        res = src.sparse_distance_matrix(self.tree, r, output_type="ndarray")
        return res["i"], res["j"], res["v"]

    def pair_mass(self, radii, reference: Optional[np.ndarray] = None) -> np.ndarray:
        """Weighted mass of ordered distinct pairs within each radius, normalised to [0, 1].

        With ``reference`` (cloud indices), only pairs with the first point in
        the reference set are counted; the estimate stays unbiased.
        """
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        w = self.weights
        if reference is None:
            raw = self.tree.count_neighbors(self.tree, radii, weights=(w, w), cumulative=True)
            self_mass = float(w @ w)
            norm = 1.0 - self_mass
        else:
            reference = np.asarray(reference)
            wr = w[reference]
            rtree = cKDTree(self._data[reference], boxsize=self.period)
            raw = rtree.count_neighbors(self.tree, radii, weights=(wr, w), cumulative=True)
            self_mass = float(wr @ wr)
            norm = float(wr.sum() - wr @ wr)
        if norm <= 0:
            return np.ones_like(radii)
        return np.clip((np.asarray(raw, dtype=float) - self_mass) / norm, 0.0, 1.0)

    def knn_radius(self, x, n_neighbors: int) -> np.ndarray:
        kk = min(n_neighbors, len(self))
        d, _ = self.tree.query(self._wrap(x), k=kk)
        return np.atleast_2d(d)[:, -1] if kk > 1 else np.atleast_1d(d)

    def diameter(self) -> float:
        return cloud_diameter(self.points, self.period)


def brute_force_distances(points, period=None) -> np.ndarray:
    """Full distance matrix under the index's metric (for small clouds)."""
    pts, _, per = _as_cloud(points, None, period)
    diff = np.abs(pts[:, None, :] - pts[None, :, :])
    if per is not None:
        wrap = per > 0
        diff[..., wrap] = np.mod(diff[..., wrap], per[wrap])
        diff[..., wrap] = np.minimum(diff[..., wrap], per[wrap] - diff[..., wrap])
    return np.sqrt(np.sum(diff ** 2, axis=2))


def cloud_diameter(points, period=None) -> float:
    """Diameter proxy.

    Euclidean clouds: twice the largest distance from the unweighted
    centroid (invariant under rigid motions, between the diameter and twice
    it).  Clouds with angular coordinates: bounding-box diagonal with each
    angular extent capped at half its period.
    """
    pts, _, per = _as_cloud(points, None, period)
    if per is None:
        c = pts.mean(axis=0)
        return float(2.0 * np.max(np.linalg.norm(pts - c, axis=1)))
    ext = pts.max(axis=0) - pts.min(axis=0)
    wrap = per > 0
    ext[wrap] = np.minimum(ext[wrap], per[wrap] / 2.0)
    return float(np.linalg.norm(ext))


# ---------------------------------------------------------------------------
# Estimates

@dataclass
class DimensionEstimate:
    method: str
    value: float
    slope_window: tuple
    residual: float
    n_scales: int
    flags: list = field(default_factory=list)
    scales: Optional[np.ndarray] = field(default=None, repr=False)
    values: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"method": self.method, "value": float(self.value),
                "slope_window": [float(self.slope_window[0]), float(self.slope_window[1])],
                "residual": float(self.residual), "n_scales": int(self.n_scales),
                "flags": list(self.flags)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DimensionEstimate":
        d = json.loads(text)
        return cls(d["method"], d["value"], tuple(d["slope_window"]), d["residual"],
                   d["n_scales"], d.get("flags", []))


def fit_slope(x, y):
    """Least-squares slope of ``y`` against ``x`` and the RMS residual."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


def _fit_log_log(method, radii, values, window, sign=1.0, allow_zero_slope=False):
    """Slope of log(values) vs log(radii) over ``window``, dropping empty scales."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = window
    sel = np.zeros(len(radii), dtype=bool)
    sel[lo:hi] = True
    flags = []
    ok = sel & (values > 0)
    if (sel & ~ok).any():
        flags.append("window_shrunk")
    if ok.sum() < 4:
        raise EstimateError(f"{method}: only {int(ok.sum())} usable scales (need 4)")
    slope, resid = fit_slope(np.log(radii[ok]), np.log(values[ok]))
    r_used = radii[ok]
    return DimensionEstimate(method, sign * slope, (float(r_used.min()), float(r_used.max())),
                             resid, int(ok.sum()), flags, radii, values)


def default_window(n_scales: int) -> tuple:
    if n_scales >= N_SCALES - 2:
        return (TRIM, n_scales - TRIM)
    return (0, n_scales)


def scale_ladder(cloud, n_scales: int = N_SCALES, min_ball: int = MIN_BALL, n_probe: int = 200,
                 seed: int = 0, index: Optional[NeighborIndex] = None, r_max: Optional[float] = None,
                 r_min: Optional[float] = None) -> np.ndarray:
    """Ascending geometric radii from the median ``min_ball``-point radius to ``diameter / 4``."""
    index = NeighborIndex(cloud) if index is None else index
    diam = index.diameter()
    if diam <= 0:
        return np.array([])
    r_max = diam / 4.0 if r_max is None else r_max
    if r_min is None:
        rng = np.random.default_rng(seed)
        probe = rng.choice(len(index), size=min(n_probe, len(index)), replace=False)
        r_min = float(np.median(index.knn_radius(index.points[probe], min_ball + 1)))
    if not 0 < r_min < r_max:
        r_min = r_max / 100.0 if r_min <= 0 else r_min
        if r_min >= r_max:
            raise EstimateError("cloud too sparse for a scaling window")
    return np.geomspace(r_min, r_max, n_scales)


def _degenerate(method):
    return DimensionEstimate(method, 0.0, (0.0, 0.0), 0.0, 0, ["degenerate"])


def correlation_sum(cloud, r, index: Optional[NeighborIndex] = None, reference=None):
    """Weighted fraction of ordered distinct pairs at distance <= r (scalar or array)."""
    index = NeighborIndex(cloud) if index is None else index
    out = index.pair_mass(r, reference)
    return float(out[0]) if np.ndim(r) == 0 else out


def _reference(index, max_exact, n_reference, seed):
    if len(index) <= max_exact:
        return None
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(len(index), size=n_reference, replace=False))


def correlation_dimension(cloud, ladder: Optional[Sequence[float]] = None, window=None,
                          seed: int = 0, max_exact: int = MAX_EXACT_PAIRS,
                          n_reference: int = N_REFERENCE) -> DimensionEstimate:
    """Slope of the log correlation sum against log r."""
    index = cloud if isinstance(cloud, NeighborIndex) else NeighborIndex(cloud)
    if index.diameter() == 0:
        return _degenerate("correlation")
    radii = scale_ladder(index, seed=seed, index=index) if ladder is None else np.sort(np.asarray(ladder))
    window = default_window(len(radii)) if window is None else window
    ref = _reference(index, max_exact, n_reference, seed)
    cs = index.pair_mass(radii, ref)
    est = _fit_log_log("correlation", radii, cs, window)
    if ref is not None:
        est.flags.append(f"reference_subsample={len(ref)}")
    return est


def box_counting_dimension(cloud, ladder: Optional[Sequence[float]] = None, window=None,
                           seed: int = 0, n_offsets: int = 8) -> DimensionEstimate:
    """Slope of log N(delta) against -log delta, N counting occupied grid cells of side delta.

    Counts are averaged over ``n_offsets`` seeded random grid translations,
    which suppresses the lattice artefacts of a single grid.  The default
    ladder runs from ``diameter / 8`` down to the correlation ladder's
    smallest radius; the coarser cut keeps boundary cells of full-dimensional
    pieces from flattening the slope.
    """
    pts, _, per = _as_cloud(cloud)
    index = NeighborIndex(cloud)
    if index.diameter() == 0:
        return _degenerate("box")
    if ladder is None:
        base = scale_ladder(index, seed=seed, index=index)
        deltas = np.geomspace(base[0], base[-1] / 2.0, len(base))
    else:
        deltas = np.sort(np.asarray(ladder, dtype=float))
    window = default_window(len(deltas)) if window is None else window
    origin = pts.min(axis=0)
    shifts = np.random.default_rng(seed).random((n_offsets, pts.shape[1]))
    counts = np.empty(len(deltas))
    for i, delta in enumerate(deltas):
        scaled = (pts - origin) / delta
        counts[i] = np.mean([_occupied_cells(np.floor(scaled + sh).astype(np.int64))
                             for sh in shifts])
    return _fit_log_log("box", deltas, counts, window, sign=-1.0)


def _occupied_cells(cells: np.ndarray) -> int:
    ext = cells.max(axis=0) + 1
    if np.prod(ext.astype(float)) < 2.0 ** 62:
        return len(np.unique(np.ravel_multi_index(cells.T, ext)))
    return len(np.unique(cells, axis=0))


def local_dimensions(cloud, queries, ladder: Optional[Sequence[float]] = None, window=None,
                     exclude=None, seed: int = 0, index: Optional[NeighborIndex] = None,
                     strict: bool = True) -> list:
    """Local-dimension fits ``log mu(B(x, r))`` vs ``log r`` at each query point."""
    index = NeighborIndex(cloud) if index is None else index
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if index.diameter() == 0:
        return [_degenerate("local") for _ in q]
    radii = scale_ladder(index, seed=seed, index=index) if ladder is None else np.sort(np.asarray(ladder))
    window = default_window(len(radii)) if window is None else window
    masses = index.ball_mass(q, radii, exclude)
    out = []
    for row in masses:
        if np.all(row <= 0):
            if strict:
                raise EstimateError("local dimension undefined: every ball is empty")
            out.append(None)
            continue
        try:
            out.append(_fit_log_log("local", radii, row, window))
        except EstimateError:
            if strict:
                raise
            out.append(None)
    return out


def local_dimension(cloud, x, ladder: Optional[Sequence[float]] = None, window=None,
                    exclude: Optional[int] = None, seed: int = 0,
                    index: Optional[NeighborIndex] = None) -> DimensionEstimate:
    """Slope of ``log mu(B(x, r))`` against ``log r`` at one point."""
    ex = None if exclude is None else np.array([exclude])
    return local_dimensions(cloud, np.atleast_2d(x), ladder, window, ex, seed, index)[0]


def hausdorff_proxies(cloud, ladder: Optional[Sequence[float]] = None, sample_count: int = 200,
                      q_lo: float = 0.05, q_hi: float = 0.95, seed: int = 0,
                      index: Optional[NeighborIndex] = None):
    """Lower/upper quantiles of local dimensions at random cloud points.

    Returns ``(lower, upper, local_values)``.
    """
    if sample_count < 50:
        raise ValueError("sample_count must be at least 50")
    index = NeighborIndex(cloud) if index is None else index
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(index), size=min(sample_count, len(index)), replace=False)
    ests = local_dimensions(index.points, index.points[idx], ladder, exclude=idx, seed=seed,
                            index=index)
    vals = np.array([e.value for e in ests])
    return float(np.quantile(vals, q_lo)), float(np.quantile(vals, q_hi)), vals


def information_dimension(cloud, ladder: Optional[Sequence[float]] = None, sample_count: int = 500,
                          seed: int = 0) -> DimensionEstimate:
    """Slope of the mean log ball mass against log r (unvalidated proxy)."""
    index = NeighborIndex(cloud)
    if index.diameter() == 0:
        return _degenerate("information")
    radii = scale_ladder(index, seed=seed, index=index) if ladder is None else np.sort(np.asarray(ladder))
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(index), size=min(sample_count, len(index)), replace=False)
    masses = index.ball_mass(index.points[idx], radii, exclude=idx)
    with np.errstate(divide="ignore"):
        logs = np.log(masses)
    mean_log = np.where(np.all(np.isfinite(logs), axis=0), logs.mean(axis=0), -np.inf)
    vals = np.exp(mean_log)
    est = _fit_log_log("information", radii, vals, default_window(len(radii)))
    est.flags.append("unvalidated")
    return est


# ---------------------------------------------------------------------------
# Energies and potentials

@dataclass
class EnergyResult:
    value: float
    half_value: float
    diverges: bool
    n_points: int


def _energy_sum(pts, w, s, period, chunk=1000):
    total = 0.0
    for a in range(0, len(pts), chunk):
        block = pts[a:a + chunk]
        diff = np.abs(block[:, None, :] - pts[None, :, :])
        if period is not None:
            wrap = period > 0
            diff[..., wrap] = np.mod(diff[..., wrap], period[wrap])
            diff[..., wrap] = np.minimum(diff[..., wrap], period[wrap] - diff[..., wrap])
        d = np.sqrt(np.sum(diff ** 2, axis=2))
        rows = np.arange(len(block))
        d[rows, a + rows] = np.inf  # drop the diagonal
        if np.any(d == 0):
            return math.inf
        total += float(w[a:a + chunk] @ (d ** -s) @ w)
    return total


def energy(cloud, s: float, max_points: int = ENERGY_MAX_POINTS, seed: int = 0,
           threshold: float = 0.1) -> EnergyResult:
    """``sum_{i != j} w_i w_j |x_i - x_j|^(-s)`` with a divergence flag.

    The flag compares the energy of the (sub)sample with that of its first
    half (weights renormalised); a relative change above ``threshold``, or a
    coincident pair, marks divergence.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    pts, w, per = _as_cloud(cloud)
    if len(pts) > max_points:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(pts), size=max_points, replace=False)
        pts, w = pts[idx], w[idx] / w[idx].sum()
    full = _energy_sum(pts, w, s, per)
    half = len(pts) // 2
    if half >= 2:
        wh = w[:half] / w[:half].sum()
        half_val = _energy_sum(pts[:half], wh, s, per)
    else:
        half_val = full
    if not math.isfinite(full):
        diverges = True
    elif not math.isfinite(half_val):
        diverges = True
    else:
        diverges = abs(full - half_val) > threshold * abs(half_val)
    return EnergyResult(full, half_val, diverges, len(pts))


def local_potential(cloud, x, s: float, exclude: Optional[int] = None) -> float:
    """``sum_j w_j |x - x_j|^(-s)`` over cloud points other than ``exclude``."""
    pts, w, per = _as_cloud(cloud)
    index_dist = NeighborIndex(pts[:1], period=per).distance
    d = index_dist(pts, np.atleast_2d(np.asarray(x, dtype=float)))
    keep = np.ones(len(pts), dtype=bool)
    if exclude is not None:
        keep[exclude] = False
    if np.any(d[keep] == 0):
        return math.inf
    return float(np.sum(w[keep] * d[keep] ** -s))


def estimate(cloud, method: str, **kw) -> DimensionEstimate:
    """Dispatch used by the command line."""
    if method == "correlation":
        return correlation_dimension(cloud, **kw)
    if method == "box":
        return box_counting_dimension(cloud, **kw)
    if method == "information":
        return information_dimension(cloud, **kw)
    raise ValueError(f"unknown dimension method {method!r}")
