"""Prediction-error functionals in reconstruction space.

An :class:`EmbeddedCloud` stores, for every sample ``x``, the delay vector
``u = phi_h(x)`` and its successor ``v = phi_h(Tx)``.  For a centre ``y``
and radius ``eps`` the pairs with ``||u - y|| <= eps`` form the ball; ``chi``
is the weighted mean of their ``v`` and ``sigma`` the weighted RMS spread
around it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .dimension import NeighborIndex, cloud_diameter, fit_slope
from .observables import DelayMap

# verdict constants (engineering choices, echoed in every verdict record)
COLLAPSE_FLOOR = 0.01
COLLAPSE_COUNT = 20
BOUNDED_FLOOR = 0.05
TREND_BAND = 0.2
N_QUERIES = 2000
QUERY_CHUNK = 256
BALL_TARGET = 500


class EmptyBallError(ValueError):
    """No sample lies in the requested reconstruction-space ball."""

    def __init__(self, radius, nearest):
        super().__init__(f"empty ball of radius {radius}; nearest sample at distance {nearest}")
        self.radius = radius
        self.nearest = nearest


@dataclass
class EmbeddedCloud:
    u: np.ndarray
    v: np.ndarray
    weights: np.ndarray
    phase: Optional[np.ndarray] = None
    system: str = ""
    observable: str = ""
    k: int = 1
    seed: int = 0
    period: Optional[np.ndarray] = None
    _index: Optional[NeighborIndex] = field(default=None, repr=False)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(len(self.u), -1)
        self.v = np.asarray(self.v, dtype=float).reshape(len(self.v), -1)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.u.shape != self.v.shape or len(self.weights) != len(self.u):
            raise ValueError("u, v and weights must describe the same pairs")
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative and sum to 1")

    def __len__(self):
        return len(self.u)

    @property
    def index(self) -> NeighborIndex:
        if self._index is None:
            self._index = NeighborIndex(self.u, self.weights)
        return self._index

    def u_diameter(self) -> float:
        return cloud_diameter(self.u)

    def v_spread(self) -> float:
        """Weighted standard deviation (root of total variance) of ``v``."""
        return spread(self.v, self.weights)

    def subset(self, idx) -> "EmbeddedCloud":
        w = self.weights[idx]
        return EmbeddedCloud(self.u[idx], self.v[idx], w / w.sum(),
                             None if self.phase is None else self.phase[idx],
                             self.system, self.observable, self.k, self.seed, self.period)


def embed(cloud, observable, system, k: int, seed: Optional[int] = None) -> EmbeddedCloud:
    """Delay vectors of every sample and of its image under ``T``."""
    dm = DelayMap(observable, k, system)
    vals = dm.orbit_values(cloud.points, k + 1)
    name = getattr(observable, "base", type(observable).__name__)
    return EmbeddedCloud(vals[:, :k], vals[:, 1:], cloud.weights.copy(), cloud.points.copy(),
                         system.kind, name, k, cloud.seed if seed is None else seed,
                         getattr(cloud, "period", None))


# ---------------------------------------------------------------------------
# Single-ball functionals

def spread(v, w) -> float:
    """Weighted RMS distance of the rows of ``v`` from their weighted mean."""
    v = np.asarray(v, dtype=float).reshape(len(v), -1)
    w = np.asarray(w, dtype=float)
    tot = w.sum()
    mean = (w @ v) / tot
    return float(np.sqrt(max(w @ np.sum((v - mean) ** 2, axis=1) / tot, 0.0)))


def ball_members(cloud: EmbeddedCloud, y, eps: float) -> np.ndarray:
    """Indices of pairs with ``||u - y|| <= eps``."""
    idx = cloud.index.query(np.atleast_1d(np.asarray(y, dtype=float)), eps)
    if len(idx) == 0:
        d, _ = cloud.index.tree.query(np.atleast_1d(np.asarray(y, dtype=float)))
        raise EmptyBallError(eps, float(d))
    return idx


def chi(cloud: EmbeddedCloud, y, eps: float) -> np.ndarray:
    """Weighted mean of ``v`` over the ``eps``-ball at ``y``."""
    idx = ball_members(cloud, y, eps)
    w = cloud.weights[idx]
    return (w @ cloud.v[idx]) / w.sum()


def sigma(cloud: EmbeddedCloud, y, eps: float) -> float:
    """Weighted RMS deviation of ``v`` from ``chi`` over the ``eps``-ball at ``y``."""
    idx = ball_members(cloud, y, eps)
    w = cloud.weights[idx]
    return spread(cloud.v[idx], w / w.sum())


def fs_predict(cloud: EmbeddedCloud, y, eps: float, steps: int):
    """Iterated local-average predictor ``y_{i+1} = chi(y_i)``.

    Returns ``(trajectory, truncated)``; the trajectory stops early if a ball
    becomes empty.
    """
    out = []
    cur = np.atleast_1d(np.asarray(y, dtype=float))
    for _ in range(steps):
        try:
            cur = chi(cloud, cur, eps)
        except EmptyBallError:
            return out, True
        out.append(cur)
    return out, False


# ---------------------------------------------------------------------------
# Batched sigma at sample points

def query_subsample(n: int, n_queries: Optional[int], seed: int) -> np.ndarray:
    if n_queries is None or n_queries >= n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=n_queries, replace=False))


def sigma_at(cloud: EmbeddedCloud, centres, eps: float, chunk: int = QUERY_CHUNK,
             data: Optional[np.ndarray] = None):
    """``sigma(y, eps)`` for each row of ``centres``; NaN marks an empty ball.

    ``data`` optionally restricts the ball contents to a subset of samples
    (weights renormalised).  Returns ``(sigma, ball_weight)``.
    """
    centres = np.atleast_2d(np.asarray(centres, dtype=float))
    if data is None:
        tree = cloud.index.tree
        w = cloud.weights
        v = cloud.v
    else:
        tree = cKDTree(cloud.u[data])
        w = cloud.weights[data] / cloud.weights[data].sum()
        v = cloud.v[data]
    sig = np.full(len(centres), np.nan)
    mass = np.zeros(len(centres))
    for a in range(0, len(centres), chunk):
        block = centres[a:a + chunk]
        res = cKDTree(block).sparse_distance_matrix(tree, eps, output_type="ndarray")
        i, j = res["i"], res["j"]
        nb = len(block)
        W = np.bincount(i, weights=w[j], minlength=nb)
        M = np.column_stack([np.bincount(i, weights=w[j] * v[j, c], minlength=nb)
                             for c in range(v.shape[1])])
        ok = W > 0
        M[ok] /= W[ok, None]
        dev = np.sum((v[j] - M[i]) ** 2, axis=1)
        S = np.bincount(i, weights=w[j] * dev, minlength=nb)
        s = np.full(nb, np.nan)
        s[ok] = np.sqrt(np.maximum(S[ok] / W[ok], 0.0))
        sig[a:a + nb] = s
        mass[a:a + nb] = W
    return sig, mass


@dataclass
class SigmaTable:
    """``sigma(u_q, eps)`` for query samples ``q`` over an epsilon ladder."""

    epsilons: np.ndarray        # descending
    queries: np.ndarray         # sample indices
    query_weights: np.ndarray   # renormalised
    sigmas: np.ndarray          # (n_eps, n_queries), NaN = empty ball
    n_samples: int

    def exceedance(self, delta: float) -> "ExceedanceCurve":
        with np.errstate(invalid="ignore"):
            exceed = np.where(np.isnan(self.sigmas), False, self.sigmas > delta)
        frac = exceed.astype(float) @ self.query_weights
        empty = np.isnan(self.sigmas).astype(float) @ self.query_weights
        return ExceedanceCurve(self.epsilons.copy(), frac, empty, float(delta), len(self.queries))


def sigma_table(cloud: EmbeddedCloud, ladder: Sequence[float], n_queries: Optional[int] = N_QUERIES,
                seed: int = 0, ball_target: Optional[int] = BALL_TARGET) -> SigmaTable:
    """``sigma`` at a seeded subsample of sample points over an epsilon ladder.

    When the median ball at some scale holds more than twice ``ball_target``
    samples, ball contents are drawn from a nested random subset sized to
    bring the median back to about ``ball_target``; finer scales use every
    sample.  ``ball_target=None`` disables thinning.
    """
    eps = np.sort(np.asarray(ladder, dtype=float))[::-1]
    n = len(cloud)
    q = query_subsample(n, n_queries, seed)
    qw = cloud.weights[q] / cloud.weights[q].sum()
    rng = np.random.default_rng([seed, 1])
    perm = rng.permutation(n)
    probe = cloud.u[q[:200]]
    rows = []
    for e in eps:
        data = None
        if ball_target is not None:
            median = float(np.median(cloud.index.tree.query_ball_point(probe, e, return_length=True)))
            if median > 2 * ball_target:
                data = np.sort(perm[:max(int(n * ball_target / median), ball_target)])
        rows.append(sigma_at(cloud, cloud.u[q], e, data=data)[0])
    return SigmaTable(eps, q, qw, np.vstack(rows), n)


# ---------------------------------------------------------------------------
# Exceedance curves

@dataclass
class ExceedanceCurve:
    epsilons: np.ndarray
    fractions: np.ndarray
    empty_fractions: np.ndarray
    delta: float
    n: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["epsilon", "fraction", "empty_ball_fraction", "delta"])
        for e, f, z in zip(self.epsilons, self.fractions, self.empty_fractions):
            wr.writerow([f"{e:.17g}", f"{f:.17g}", f"{z:.17g}", f"{self.delta:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n: int = 0) -> "ExceedanceCurve":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["epsilon", "fraction", "empty_ball_fraction", "delta"]:
            raise ValueError("line 1: unexpected exceedance header")
        data = np.array([[float(x) for x in r] for r in rows[1:]])
        return cls(data[:, 0], data[:, 1], data[:, 2], float(data[0, 3]), n)


def exceedance(cloud: EmbeddedCloud, delta: float, eps: float,
               n_queries: Optional[int] = None, seed: int = 0):
    """Weighted fraction of samples whose ``sigma`` at ``phi_h(x)`` exceeds ``delta``.

    Returns ``(fraction, empty_fraction)``; empty balls count as non-exceeding.
    """
    if delta <= 0 or eps <= 0:
        raise ValueError("delta and eps must be positive")
    table = sigma_table(cloud, [eps], n_queries, seed)
    curve = table.exceedance(delta)
    return float(curve.fractions[0]), float(curve.empty_fractions[0])


def exceedance_scan(cloud: EmbeddedCloud, delta: float, ladder: Sequence[float],
                    n_queries: Optional[int] = N_QUERIES, seed: int = 0) -> ExceedanceCurve:
    if len(ladder) < 6:
        raise ValueError("an exceedance scan needs at least 6 scales")
    return sigma_table(cloud, ladder, n_queries, seed).exceedance(delta)


@dataclass
class ScalingFit:
    slope: float
    residual: float
    n_scales: int
    window: tuple
    unfit: bool

    def to_json(self) -> str:
        return json.dumps({"slope": self.slope, "residual": self.residual, "n_scales": self.n_scales,
                           "window": list(self.window), "unfit": self.unfit}, sort_keys=True)


def scaling_exponent(curve: ExceedanceCurve, n: Optional[int] = None) -> ScalingFit:
    """Log-log slope of the exceedance fraction over scales with fraction in (10/n, 0.5)."""
    n = curve.n if n is None else n
    f = curve.fractions
    ok = (f > 10.0 / n) & (f < 0.5)
    if ok.sum() < 4:
        return ScalingFit(math.nan, math.nan, int(ok.sum()), (math.nan, math.nan), True)
    slope, resid = fit_slope(np.log(curve.epsilons[ok]), np.log(f[ok]))
    e = curve.epsilons[ok]
    return ScalingFit(slope, resid, int(ok.sum()), (float(e.min()), float(e.max())), False)


def verdict_from_curve(curve: ExceedanceCurve, n: Optional[int] = None) -> str:
    """``collapses`` / ``bounded_below`` / ``inconclusive`` from the smallest scales."""
    n = curve.n if n is None else n
    order = np.argsort(curve.epsilons)[::-1]     # descending eps: finest scales last
    f = curve.fractions[order]
    if np.all(f[-2:] < max(COLLAPSE_FLOOR, COLLAPSE_COUNT / n)):
        return "collapses"
    last3 = f[-3:]
    if np.all(last3 > BOUNDED_FLOOR) and (last3[0] - last3[-1]) <= TREND_BAND * last3[0]:
        return "bounded_below"
    return "inconclusive"


def predictability_verdict(cloud: EmbeddedCloud, delta: float, ladder: Sequence[float],
                           n_queries: Optional[int] = N_QUERIES, seed: int = 0) -> str:
    return verdict_from_curve(exceedance_scan(cloud, delta, ladder, n_queries, seed))


VERDICT_CONSTANTS = {"collapse_floor": COLLAPSE_FLOOR, "collapse_count": COLLAPSE_COUNT,
                     "bounded_floor": BOUNDED_FLOOR, "trend_band": TREND_BAND}


# ---------------------------------------------------------------------------
# Default ladders

def epsilon_ladder(cloud: EmbeddedCloud, n_scales: int = 12, min_ball: int = 10,
                   n_probe: int = 500, seed: int = 0) -> np.ndarray:
    """Descending geometric radii from ``diam(u) / 8`` to a floor.

    The floor is the larger of the 0.1% quantile of nearest-neighbour
    distances and the median radius holding ``min_ball`` samples, so that the
    finest balls are not trivially singletons.
    """
    index = cloud.index
    rng = np.random.default_rng(seed)
    probe = rng.choice(len(cloud), size=min(n_probe, len(cloud)), replace=False)
    nn = index.knn_radius(cloud.u[probe], 2)
    floor_nn = float(np.quantile(nn, 0.001))
    floor_ball = float(np.median(index.knn_radius(cloud.u[probe], min_ball)))
    hi = cloud.u_diameter() / 8.0
    lo = max(floor_nn, floor_ball)
    if not 0 < lo < hi:
        lo = hi / 100.0
    return np.geomspace(hi, lo, n_scales)


def delta_ladder(cloud: EmbeddedCloud, n_scales: int = 6) -> np.ndarray:
    """Descending geometric thresholds from ``0.5 std(v)`` to ``0.01 std(v)``."""
    s = cloud.v_spread()
    return np.geomspace(0.5 * s, 0.01 * s, n_scales)
