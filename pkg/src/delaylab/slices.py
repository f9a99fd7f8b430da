"""Geometric slices: the sample restricted to a thin preimage of a reconstruction ball.

For a centre ``y`` and slab radius ``delta`` a slice keeps the samples ``x``
with ``||phi_h(x) - y|| <= delta`` (the same closed-ball rule as the
prediction functionals) and renormalises their weights.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .dimension import (DimensionEstimate, EstimateError, NeighborIndex, cloud_diameter,
                        correlation_dimension, fit_slope, local_dimensions, scale_ladder)
from .prediction import EmbeddedCloud, spread

MIN_SLICE_MEMBERS = 200
SLAB_FLOOR = 10.0


class EmptySlabError(ValueError):
    pass


@dataclass
class SliceEstimate:
    y: np.ndarray
    delta: float
    members: np.ndarray        # phase points
    weights: np.ndarray        # renormalised to 1
    image_members: np.ndarray  # phi_h(T x) of the members
    member_index: np.ndarray   # indices into the parent cloud
    period: Optional[np.ndarray] = None
    u_scale: float = 1.0       # diam(X) / diam(u) of the parent cloud

    def __len__(self):
        return len(self.members)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        nx, nv = self.members.shape[1], self.image_members.shape[1]
        wr.writerow([f"x{i}" for i in range(nx)] + ["weight"] + [f"v{i}" for i in range(nv)])
        for x, w, v in zip(self.members, self.weights, self.image_members):
            wr.writerow([f"{a:.17g}" for a in x] + [f"{w:.17g}"] + [f"{a:.17g}" for a in v])
        return buf.getvalue()

    def sidecar(self) -> str:
        return json.dumps({"y": [float(a) for a in self.y], "delta": float(self.delta),
                           "members": len(self), "mass": None}, sort_keys=True)


def geometric_slice(cloud: EmbeddedCloud, y, delta: float) -> SliceEstimate:
    """Samples whose delay vector lies within ``delta`` of ``y``, weights renormalised."""
    if cloud.phase is None:
        raise ValueError("the embedded cloud carries no phase points")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    idx = cloud.index.query(y, delta)
    if len(idx) == 0:
        raise EmptySlabError(f"no sample within {delta} of {y.tolist()}")
    w = cloud.weights[idx]
    scale = cloud_diameter(cloud.phase, cloud.period) / max(cloud.u_diameter(), 1e-300)
    return SliceEstimate(y, float(delta), cloud.phase[idx], w / w.sum(), cloud.v[idx], idx,
                         cloud.period, scale)


def slice_mass(cloud: EmbeddedCloud, y, delta: float) -> float:
    idx = cloud.index.query(np.atleast_1d(np.asarray(y, dtype=float)), delta)
    return float(cloud.weights[idx].sum())


def slice_dimension(sl: SliceEstimate, iterate: int = 0, system=None, ladder=None,
                    slab_floor: float = SLAB_FLOOR, seed: int = 0) -> DimensionEstimate:
    """Correlation dimension of ``T^iterate`` applied to the slice members.

    The default ladder's smallest radius is raised to at least
    ``slab_floor * delta * diam(X) / diam(u)`` so the slab's own thickness
    stays below the fitted scales.
    """
    if len(sl) < MIN_SLICE_MEMBERS:
        raise EstimateError(f"slice has {len(sl)} members, need {MIN_SLICE_MEMBERS}")
    pts = sl.members
    if iterate:
        if system is None:
            raise ValueError("a system is needed to push the slice forward")
        pts = system.iterate(pts, iterate)
    index = NeighborIndex(pts, sl.weights, sl.period)
    if index.diameter() == 0:
        return DimensionEstimate("slice", 0.0, (0.0, 0.0), 0.0, 0, ["degenerate"])
    if ladder is None:
        base = scale_ladder(index, seed=seed, index=index)
        floor = slab_floor * sl.delta * sl.u_scale if iterate == 0 else 0.0
        lo = max(base[0], floor)
        if lo >= base[-1] / 4:
            raise EstimateError("slab too thick for a scaling window inside the slice")
        ladder = np.geomspace(lo, base[-1], len(base))
    est = correlation_dimension(index, ladder, seed=seed)
    est.method = "slice"
    return est


def image_slice_spread(sl: SliceEstimate) -> float:
    """Weighted RMS spread of the members' images; equals ``sigma(y, delta)``."""
    return spread(sl.image_members, sl.weights)


# ---------------------------------------------------------------------------
# Injectivity

@dataclass
class CollisionReport:
    pairs: np.ndarray     # (n_pairs, 2) sample indices
    count: int
    mass_fraction: float  # weighted fraction of probed samples with a collision partner
    tol_u: float
    sep_x: float
    n_probed: int

    @property
    def nonempty(self) -> bool:
        return self.count > 0


def _phase_distance(a, b, period):
    diff = np.abs(a - b)
    if period is not None:
        wrap = period > 0
        diff[:, wrap] = np.mod(diff[:, wrap], period[wrap])
        diff[:, wrap] = np.minimum(diff[:, wrap], period[wrap] - diff[:, wrap])
    return np.sqrt(np.sum(diff ** 2, axis=1))


def injectivity_probe(cloud: EmbeddedCloud, tol_u: Optional[float] = None,
                      sep_x: Optional[float] = None, max_queries: Optional[int] = 5000,
                      seed: int = 0) -> CollisionReport:
    """Pairs that nearly coincide in reconstruction space but are far apart in phase space.

    Defaults: ``tol_u = 1e-3 diam(u)``, ``sep_x = 0.1 diam(X)``.  At most
    ``max_queries`` seeded samples are probed against the whole cloud.
    """
    if cloud.phase is None:
        raise ValueError("the embedded cloud carries no phase points")
    tol_u = 1e-3 * cloud.u_diameter() if tol_u is None else tol_u
    sep_x = 0.1 * cloud_diameter(cloud.phase, cloud.period) if sep_x is None else sep_x
    n = len(cloud)
    if max_queries is None or max_queries >= n:
        q = np.arange(n)
    else:
        q = np.sort(np.random.default_rng(seed).choice(n, size=max_queries, replace=False))
    res = cKDTree(cloud.u[q]).sparse_distance_matrix(cloud.index.tree, tol_u, output_type="ndarray")
    i, j = q[res["i"]], res["j"]
    keep = i != j
    i, j = i[keep], j[keep]
    far = _phase_distance(cloud.phase[i], cloud.phase[j], cloud.period) >= sep_x
    i, j = i[far], j[far]
    hit = np.isin(q, i)
    wq = cloud.weights[q]
    frac = float(wq[hit].sum() / wq.sum())
    pairs = np.column_stack([i, j]) if len(i) else np.empty((0, 2), dtype=np.int64)
    return CollisionReport(pairs, len(pairs), frac, float(tol_u), float(sep_x), len(q))


# ---------------------------------------------------------------------------
# Pushforward diagnostics

@dataclass
class DensityReport:
    cells_per_axis: np.ndarray
    max_ratio: np.ndarray          # max cell mass / cell volume, relative to the box volume
    collision_density: np.ndarray  # sum of squared cell masses / cell volume, box-relative
    growth: float                  # log2 growth of collision_density per refinement
    verdict: str                   # "stable" or "diverges"

    def to_dict(self):
        return {"cells_per_axis": self.cells_per_axis.tolist(), "max_ratio": self.max_ratio.tolist(),
                "collision_density": self.collision_density.tolist(), "growth": self.growth,
                "verdict": self.verdict}


DENSITY_LEVELS = 5
DIVERGENCE_GROWTH = 0.25


def pushforward_density_diagnostic(cloud: EmbeddedCloud, levels: int = DENSITY_LEVELS,
                                   base_cells: Optional[int] = None,
                                   threshold: float = DIVERGENCE_GROWTH) -> DensityReport:
    """Histogram the delay vectors on nested grids (refinement factor 2).

    For each grid the largest cell density and the collision density
    ``sum_c p_c^2 / vol_c`` (with the diagonal removed, so unbiased for
    ``int f^2``) are reported relative to the bounding box.  A density in
    ``L^2`` keeps the collision density bounded; a measure concentrated on a
    set of dimension ``D < k`` makes it grow like ``2^((k - D) level)``.
    """
    u, w = cloud.u, cloud.weights
    k = u.shape[1]
    if k not in (1, 2, 3):
        raise ValueError("density diagnostic supports k in {1, 2, 3}")
    if base_cells is None:
        base_cells = {1: 16, 2: 4, 3: 2}[k]
    lo = u.min(axis=0)
    ext = u.max(axis=0) - lo
    ext[ext == 0] = 1.0
    sizes, maxr, coll = [], [], []
    w2 = w * w
    for lev in range(levels):
        m = base_cells * 2 ** lev
        cells = np.minimum(np.floor((u - lo) / ext * m).astype(np.int64), m - 1)
        key = np.ravel_multi_index(cells.T, (m,) * k)
        uniq, inv = np.unique(key, return_inverse=True)
        mass = np.bincount(inv, weights=w)
        self_mass = np.bincount(inv, weights=w2)
        total_cells = float(m) ** k
        maxr.append(float(mass.max() * total_cells))
        coll.append(float((mass @ mass - self_mass.sum()) / (1.0 - w2.sum()) * total_cells))
        sizes.append(m)
    coll_arr = np.array(coll)
    growth = fit_slope(np.arange(levels), np.log2(np.maximum(coll_arr, 1e-300)))[0]
    verdict = "diverges" if growth >= threshold else "stable"
    return DensityReport(np.array(sizes), np.array(maxr), coll_arr, float(growth), verdict)


def pushforward_local_dimension(cloud: EmbeddedCloud, sample_count: int = 200, seed: int = 0,
                                phase_ladder=None, u_ladder=None, window=None):
    """Local dimensions at the same samples in phase space and reconstruction space.

    Returns ``(phase_dims, recon_dims, sample_indices)``; failed fits are NaN.
    """
    if cloud.phase is None:
        raise ValueError("the embedded cloud carries no phase points")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(cloud), size=min(sample_count, len(cloud)), replace=False))
    px = NeighborIndex(cloud.phase, cloud.weights, cloud.period)
    pu = cloud.index

    def dims(index, pts, ladder):
        ests = local_dimensions(None, pts[idx], ladder, window=window, exclude=idx, seed=seed,
                                index=index, strict=False)
        return np.array([math.nan if e is None else e.value for e in ests])

    return dims(px, cloud.phase, phase_ladder), dims(pu, cloud.u, u_ladder), idx


# ---------------------------------------------------------------------------
# Consistency checks

@dataclass
class DisintegrationCheck:
    direct: float        # mu(E)
    averaged: float      # mean over slab centres of the slice mass of E
    std_error: float
    n_centres: int

    @property
    def z(self) -> float:
        return abs(self.averaged - self.direct) / self.std_error if self.std_error > 0 else math.inf

    @property
    def consistent(self) -> bool:
        return self.z <= 3.0


def disintegration_check(cloud: EmbeddedCloud, in_cell, delta: float, n_centres: int = 500,
                         seed: int = 0) -> DisintegrationCheck:
    """Compare ``mu(E)`` with the average over ``y ~ phi_h mu`` of slice masses of ``E``.

    ``in_cell`` maps an ``(n, N)`` array of phase points to a boolean mask.
    """
    if cloud.phase is None:
        raise ValueError("the embedded cloud carries no phase points")
    mask = np.asarray(in_cell(cloud.phase), dtype=bool)
    direct = float(cloud.weights[mask].sum())
    rng = np.random.default_rng(seed)
    centres = rng.choice(len(cloud), size=n_centres, replace=True, p=cloud.weights)
    res = cKDTree(cloud.u[centres]).sparse_distance_matrix(cloud.index.tree, delta,
                                                            output_type="ndarray")
    i, j = res["i"], res["j"]
    w = cloud.weights[j]
    tot = np.bincount(i, weights=w, minlength=n_centres)
    hit = np.bincount(i, weights=w * mask[j], minlength=n_centres)
    vals = hit / tot
    return DisintegrationCheck(direct, float(vals.mean()),
                               float(vals.std(ddof=1) / math.sqrt(n_centres)), n_centres)


def slice_dimension_profile(cloud: EmbeddedCloud, delta: float, n_centres: int, seed: int = 0,
                            iterate: int = 0, system=None, min_members: int = MIN_SLICE_MEMBERS):
    """Slice dimensions at slab centres drawn from the cloud (centres with too few
    members are skipped).  Returns ``(values, centres_used, skipped)``."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(cloud))
    vals, used, skipped = [], [], 0
    for i in order:
        if len(vals) >= n_centres:
            break
        sl = geometric_slice(cloud, cloud.u[i], delta)
        if len(sl) < min_members:
            skipped += 1
            if skipped > 20 * n_centres:
                break
            continue
        try:
            est = slice_dimension(sl, iterate, system, seed=seed)
        except EstimateError:
            skipped += 1
            continue
        vals.append(est.value)
        used.append(i)
    return np.array(vals), np.array(used, dtype=np.int64), skipped
