"""Observables, monomial probe perturbations, delay maps and observation matrices.

A perturbed observable is ``h_alpha = h + sum_j alpha_j h_j`` where the
``h_j`` run over all monomials of degree at most ``d`` in the probe
coordinates of the system, rescaled from the system's bounding box to
``[-1, 1]^N``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.special import comb, gammaln

from .systems import SystemSpec, make_system


# ---------------------------------------------------------------------------
# Monomial probe set

def _exponents(N: int, d: int) -> np.ndarray:
    """All multi-indices of total degree <= d, graded, then lexicographically descending.

    Within a degree the order follows ``combinations_with_replacement`` on the
    variable indices, e.g. for N=2, degree 2: x0^2, x0 x1, x1^2.
    """
    rows = []
    for deg in range(d + 1):
        for combo in combinations_with_replacement(range(N), deg):
            e = np.zeros(N, dtype=np.int64)
            for v in combo:
                e[v] += 1
            rows.append(e)
    return np.array(rows, dtype=np.int64).reshape(-1, N)


@dataclass(frozen=True)
class MonomialBasis:
    N: int
    d: int
    exponents: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 1 or self.d < 0:
            raise ValueError("need N >= 1 and d >= 0")
        object.__setattr__(self, "exponents", _exponents(self.N, self.d))

    @property
    def m(self) -> int:
        return len(self.exponents)

    def evaluate(self, coords) -> np.ndarray:
        """Values of every monomial at each row of ``coords``: an ``(n, m)`` array.

        Powers of each variable are tabulated once and the monomials are
        formed as products over the multi-index.
        """
        x = np.atleast_2d(np.asarray(coords, dtype=float))
        if x.shape[1] != self.N:
            raise ValueError(f"expected {self.N} coordinates, got {x.shape[1]}")
        n = len(x)
        powers = np.ones((self.N, self.d + 1, n))
        for p in range(1, self.d + 1):
            powers[:, p] = powers[:, p - 1] * x.T
        out = np.ones((n, self.m))
        for v in range(self.N):
            out *= powers[v, self.exponents[:, v]].T
        return out

    def gradient_bounds(self) -> np.ndarray:
        """Lipschitz constant of each monomial on ``[-1, 1]^N`` (Euclidean norm of the exponent)."""
        return np.linalg.norm(self.exponents, axis=1)


def probe_basis(N: int, k: int, d_override: Optional[int] = None) -> MonomialBasis:
    """All monomials in ``N`` variables of degree at most ``2k + 1`` (or ``d_override``)."""
    if N < 1 or k < 1:
        raise ValueError("need N >= 1 and k >= 1")
    d = 2 * k + 1 if d_override is None else int(d_override)
    basis = MonomialBasis(N, d)
    assert basis.m == comb(N + d, d, exact=True)
    return basis


# ---------------------------------------------------------------------------
# Base observables

def _base_function(name: str) -> tuple[Callable[[np.ndarray], np.ndarray], float]:
    if name == "zero":
        return (lambda p: np.zeros(len(p))), 0.0
    if name == "cos_angle":
        return (lambda p: np.cos(p[:, 0])), 1.0
    if name.startswith("coord_"):
        i = int(name[len("coord_"):])
        return (lambda p: p[:, i].copy()), 1.0
    raise ValueError(f"unknown base observable {name!r}")


@dataclass(frozen=True)
class Observable:
    """A base function plus monomial perturbation, evaluated on raw phase points."""

    base: str
    basis: MonomialBasis
    alpha: np.ndarray
    box: tuple
    probe: Callable[[np.ndarray], np.ndarray] = lambda p: np.asarray(p, dtype=float)
    system: Optional[dict] = None

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).copy()
        if alpha.shape != (self.basis.m,):
            raise ValueError(f"alpha has length {alpha.size}, basis has {self.basis.m} monomials")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        _base_function(self.base)  # validate the name eagerly

    @property
    def lip_estimate(self) -> float:
        _, base_lip = _base_function(self.base)
        lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        scale = 2.0 / np.min(hi - lo)
        return base_lip + scale * float(np.abs(self.alpha) @ self.basis.gradient_bounds())

    def rescaled(self, points) -> np.ndarray:
        """Probe coordinates mapped affinely from the bounding box to ``[-1, 1]^N``."""
        lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        c = self.probe(np.atleast_2d(np.asarray(points, dtype=float)))
        return 2.0 * (c - lo) / (hi - lo) - 1.0

    def features(self, points) -> np.ndarray:
        return self.basis.evaluate(self.rescaled(points))

    def base_values(self, points) -> np.ndarray:
        f, _ = _base_function(self.base)
        return f(np.atleast_2d(np.asarray(points, dtype=float)))

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = self.base_values(pts)
        if np.any(self.alpha != 0):
            out = out + self.features(pts) @ self.alpha
        return out

    def scaled(self, c: float) -> "ScaledObservable":
        return ScaledObservable(self, float(c))

    def to_json(self) -> str:
        d = {"basis": {"N": self.basis.N, "d": self.basis.d},
             "alpha": [float(a) for a in self.alpha],
             "base": self.base}
        if self.system is not None:
            d["system"] = self.system
        else:
            d["box"] = [np.asarray(b, dtype=float).tolist() for b in self.box]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Observable":
        d = json.loads(text)
        basis = MonomialBasis(int(d["basis"]["N"]), int(d["basis"]["d"]))
        if "system" in d:
            spec = make_system(d["system"]["kind"], **d["system"].get("params", {}))
            return observable_for(spec, d["base"], basis=basis, alpha=d["alpha"])
        box = tuple(np.asarray(b, dtype=float) for b in d["box"])
        return cls(d["base"], basis, np.asarray(d["alpha"], dtype=float), box)


@dataclass(frozen=True)
class ScaledObservable:
    """``c * h`` for a positive constant; used for scale-equivariance checks."""

    inner: Observable
    c: float

    def __call__(self, points):
        return self.c * self.inner(points)


def observable_for(system: SystemSpec, base: str = "zero", k: int = 1, alpha=None,
                   basis: Optional[MonomialBasis] = None, d: Optional[int] = None) -> Observable:
    """Observable on ``system`` with its probe set for delay dimension ``k``."""
    lo, hi = system.probe_box
    if basis is None:
        basis = probe_basis(len(lo), k, d)
    alpha = np.zeros(basis.m) if alpha is None else np.asarray(alpha, dtype=float)
    params = {key: val for key, val in system.params.items() if key != "depth"}
    return Observable(base, basis, alpha, (np.asarray(lo), np.asarray(hi)), system.probe_coords,
                      {"kind": system.kind, "params": params})


def perturb(h: Observable, alpha) -> Observable:
    """``h + sum_j alpha_j h_j`` over the probe set of ``h``."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (h.basis.m,):
        raise ValueError(f"alpha has length {alpha.size}, expected {h.basis.m}")
    return Observable(h.base, h.basis, h.alpha + alpha, h.box, h.probe, h.system)


def sample_alpha(m: int, radius: float = 1.0, seed: int = 0) -> np.ndarray:
    """Uniform sample from the closed ball of the given radius in ``R^m``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(m)
    r = radius * rng.random() ** (1.0 / m)
    return r * g / np.linalg.norm(g)


# ---------------------------------------------------------------------------
# Delay coordinate maps

@dataclass(frozen=True)
class DelayMap:
    observable: Observable
    k: int
    system: SystemSpec

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("delay dimension must be >= 1")

    def orbit_values(self, points, length: int) -> np.ndarray:
        """``h(T^i x)`` for ``i = 0 .. length-1``: an ``(n, length)`` array."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        cols = []
        for i in range(length):
            if i:
                x = self.system.step(x)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError("orbit left the domain")
            cols.append(self.observable(x))
        return np.column_stack(cols)

    def __call__(self, points) -> np.ndarray:
        return self.orbit_values(points, self.k)


def delay_map(x, dm: DelayMap) -> np.ndarray:
    """``(h(x), h(Tx), ..., h(T^{k-1} x))`` for one point or an array of points."""
    x = np.asarray(x, dtype=float)
    out = dm(x)
    return out[0] if x.ndim == 1 else out


# ---------------------------------------------------------------------------
# Observation matrices

def _orbit_features(x, k, system, features):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rows = []
    for i in range(k):
        if i:
            if system is None:
                raise ValueError("a system is needed to iterate for k > 1")
            x = system.step(x)
        rows.append(features(x))
    return np.stack(rows, axis=1)  # (n, k, m)


def _feature_map(basis, system, features):
    if features is not None:
        return features
    if isinstance(basis, Observable):
        return basis.features
    if system is not None:
        return lambda p: basis.evaluate(system.probe_coords(p))
    return basis.evaluate


def observation_matrix(x, y, basis, k: int, system: Optional[SystemSpec] = None,
                       features: Optional[Callable] = None) -> np.ndarray:
    """``D[i, j] = h_j(T^i x) - h_j(T^i y)`` for ``i < k``.

    ``basis`` is a :class:`MonomialBasis` (monomials in raw probe coordinates)
    or an :class:`Observable` (its rescaled probe features).  ``x`` and ``y``
    may be stacks of points, giving an ``(n, k, m)`` array.
    """
    feat = _feature_map(basis, system, features)
    single = np.asarray(x).ndim == 1
    D = _orbit_features(x, k, system, feat) - _orbit_features(y, k, system, feat)
    return D[0] if single else D


def singular_values(M, k: Optional[int] = None) -> np.ndarray:
    """Singular values in descending order, zero-padded to ``k`` (default: row count)."""
    M = np.asarray(M, dtype=float)
    s = np.linalg.svd(M, compute_uv=False)
    k = M.shape[-2] if k is None else k
    if s.shape[-1] < k:
        pad = [(0, 0)] * (s.ndim - 1) + [(0, k - s.shape[-1])]
        s = np.pad(s, pad)
    return s[..., :k]


# ---------------------------------------------------------------------------
# Interpolation on orbit points

@dataclass
class InterpolationResult:
    alpha: np.ndarray
    residual: float
    alpha_sup: float
    bound: float
    eps: float
    sigma: float

    @property
    def within_bound(self) -> bool:
        return self.alpha_sup <= self.bound


def orbit_separations(points, k: int) -> tuple[float, float]:
    """``(eps, sigma)`` for ``2k`` points: ``sigma = min ||y_{i+k} - y_i||`` and
    ``eps`` the minimum distance over pairs ``i != j`` with ``|i - j| != k``."""
    y = np.asarray(points, dtype=float)
    dist = np.linalg.norm(y[:, None] - y[None], axis=2)
    idx = np.arange(2 * k)
    sigma = float(np.min(dist[idx[:k], idx[:k] + k]))
    mask = (idx[:, None] != idx[None]) & (np.abs(idx[:, None] - idx[None]) != k)
    eps = float(np.min(dist[mask])) if mask.any() else math.inf
    return eps, sigma


def interpolate_on_orbit(points, targets, basis: MonomialBasis, rank_tol: float = 1e-10
                         ) -> InterpolationResult:
    """Minimum-norm ``alpha`` with ``sum_j alpha_j h_j(y_i) = z_i`` for ``2k`` points.

    Also evaluates the a priori sup-norm bound
    ``2k max(1, ||y_i||)^(2m-1) ||z||_inf / (eps^(2k-2) sigma)``.
    Raises ``np.linalg.LinAlgError`` when the collocation matrix is
    numerically rank deficient, which signals that the separation
    hypotheses fail.
    """
    y = np.atleast_2d(np.asarray(points, dtype=float))
    z = np.asarray(targets, dtype=float)
    if len(y) % 2 or len(y) != len(z):
        raise ValueError("need an even number 2k of points and one target per point")
    k = len(y) // 2
    if basis.d < 2 * k - 1:
        raise ValueError("interpolation needs degree d >= 2k - 1")
    A = basis.evaluate(y)
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= rank_tol * s[0]:
        raise np.linalg.LinAlgError("collocation matrix is rank deficient")
    alpha = np.linalg.lstsq(A, z, rcond=None)[0]
    eps, sigma = orbit_separations(y, k)
    big = max(1.0, float(np.max(np.linalg.norm(y, axis=1))))
    z_sup = float(np.max(np.abs(z))) if z.size else 0.0
    with np.errstate(over="ignore", divide="ignore"):
        bound = 2 * k * big ** (2 * basis.m - 1) * z_sup / (eps ** (2 * k - 2) * sigma)
    return InterpolationResult(alpha, float(np.max(np.abs(A @ alpha - z))),
                               float(np.max(np.abs(alpha))), float(bound), eps, sigma)


# ---------------------------------------------------------------------------
# Transversality diagnostics

@dataclass
class TransversalityReport:
    k: int
    ratios: np.ndarray          # sigma_k(D_xy) / (eps^(2k-2) ||T^(k-1)x - T^(k-1)y||)
    kernel_ratios: np.ndarray   # sigma_1(D_TxTy | ker D_xy) / (eps^(2k) ||T^k x - T^k y||)
    skipped: int

    @property
    def min_ratio(self) -> float:
        return float(self.ratios.min()) if self.ratios.size else math.nan

    @property
    def min_kernel_ratio(self) -> float:
        return float(self.kernel_ratios.min()) if self.kernel_ratios.size else math.nan

    @property
    def positive(self) -> bool:
        return bool(self.ratios.size and np.all(self.ratios > 0)
                    and np.all(self.kernel_ratios > 0))


def _cross_orbit_eps(cx: np.ndarray, cy: np.ndarray, length: int) -> float:
    """min ||T^i a - T^j b|| over i != j < length and a, b in {x, y}."""
    best = math.inf
    for a in (cx, cy):
        for b in (cx, cy):
            for i in range(length):
                for j in range(length):
                    if i != j:
                        best = min(best, float(np.linalg.norm(a[i] - b[j])))
    return best


def transversality_report(cloud, obs: Observable, system: SystemSpec, k: int,
                          pair_count: int, seed: int = 0) -> TransversalityReport:
    """Empirical constants in the orbit singular-value lower bounds.

    Distances are measured in the rescaled probe coordinates where the
    monomials live.  Pairs with a vanishing separation are skipped.
    """
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=float)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(pts), pair_count)
    j = rng.integers(0, len(pts), pair_count)
    # orbits x, Tx, ..., T^k x and the features along them
    ox = [pts[i]]
    oy = [pts[j]]
    for _ in range(k):
        ox.append(system.step(ox[-1]))
        oy.append(system.step(oy[-1]))
    cx = np.stack([obs.rescaled(p) for p in ox], axis=1)  # (P, k+1, N)
    cy = np.stack([obs.rescaled(p) for p in oy], axis=1)
    fx = np.stack([obs.features(p) for p in ox], axis=1)  # (P, k+1, m)
    fy = np.stack([obs.features(p) for p in oy], axis=1)

    ratios, kratios, skipped = [], [], 0
    for p in range(pair_count):
        eps_k = _cross_orbit_eps(cx[p], cy[p], k)
        eps_k1 = _cross_orbit_eps(cx[p], cy[p], k + 1)
        last = float(np.linalg.norm(cx[p, k - 1] - cy[p, k - 1]))
        final = float(np.linalg.norm(cx[p, k] - cy[p, k]))
        if min(eps_k, eps_k1, last, final) <= 0.0:
            skipped += 1
            continue
        D = fx[p, :k] - fy[p, :k]
        D1 = fx[p, 1:] - fy[p, 1:]
        sk = np.linalg.svd(D, compute_uv=False)[k - 1]
        ratios.append(sk / (eps_k ** (2 * k - 2) * last))
        ker = null_space(D)
        s1 = np.linalg.svd(D1 @ ker, compute_uv=False)[0] if ker.size else 0.0
        kratios.append(s1 / (eps_k1 ** (2 * k) * final))
    return TransversalityReport(k, np.array(ratios), np.array(kratios), skipped)


# ---------------------------------------------------------------------------
# Ball-measure bound for linear images of the perturbation ball

def uniform_ball(count: int, m: int, radius: float = 1.0, seed: int = 0) -> np.ndarray:
    """``count`` i.i.d. uniform samples from the closed ball of the given radius in ``R^m``."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((count, m))
    r = radius * rng.random(count) ** (1.0 / m)
    return g * (r / np.linalg.norm(g, axis=1))[:, None]


def ball_measure_fraction(psi, z, eps, radius: float = 1.0, n_samples: int = 200_000,
                          seed: int = 0) -> np.ndarray:
    """Fraction of ``alpha`` uniform in ``B_m(0, radius)`` with ``||psi alpha + z|| <= eps``.

    ``eps`` may be a ladder; the same samples are used for every radius.
    """
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    alpha = uniform_ball(n_samples, psi.shape[1], radius, seed)
    dist = np.linalg.norm(alpha @ psi.T + np.asarray(z, dtype=float), axis=1)
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    return np.searchsorted(np.sort(dist), eps, side="right") / n_samples


def _log_unit_ball_volume(n: int) -> float:
    return 0.5 * n * math.log(math.pi) - gammaln(0.5 * n + 1.0)


def ball_measure_constant(m: int, p: int) -> float:
    """``C`` with ``fraction <= C (eps / (sigma_p(psi) radius))^p`` for rank ``>= p`` maps.

    The set of admissible ``alpha`` lies in a slab whose cross-section through
    the top ``p`` right singular directions is an ellipsoid of volume at most
    ``V_p (eps / sigma_p)^p``; the orthogonal section of the ball has volume at
    most ``V_{m-p} radius^(m-p)``.  Hence ``C = V_p V_{m-p} / V_m``.
    """
    if not 1 <= p <= m:
        raise ValueError("need 1 <= p <= m")
    return math.exp(_log_unit_ball_volume(p) + _log_unit_ball_volume(m - p) - _log_unit_ball_volume(m))
