"""Dynamical systems and samplers for their invariant measures.

Every generator is a pure function of its parameters and seed.  Point clouds
are ``(n, N)`` float arrays; a cloud whose first coordinate is an angle
carries ``period`` so that neighbour searches can wrap it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.signal import lfilter

TWO_PI = 2.0 * math.pi
DISK_TOL = 1e-9
CELL_TOL = 1e-9

# lower-left corners of the four first-level cells, scaled by (1 - lam)
CORNERS_2D = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
CORNERS_3D = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)

SOLENOID_PERIOD = np.array([TWO_PI, 0.0, 0.0])


class CodingError(ValueError):
    """Raised when a point cannot be assigned to a first-level cell."""


@dataclass(frozen=True)
class SystemSpec:
    """A map ``T`` on a compact ``X`` in ``R^N`` together with its metadata.

    ``step`` acts on ``(n, N)`` arrays.  ``probe_coords`` maps phase points to
    the coordinates in which probe monomials are evaluated, and ``probe_box``
    is the (lower, upper) bounding box of ``X`` in those coordinates.
    """

    kind: str
    ambient_dim: int
    lipschitz_bound: float
    step: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    period: Optional[np.ndarray] = None
    probe_coords: Callable[[np.ndarray], np.ndarray] = lambda p: np.asarray(p, dtype=float)
    probe_box: Optional[tuple] = None

    def iterate(self, points, times: int = 1) -> np.ndarray:
        out = np.atleast_2d(np.asarray(points, dtype=float))
        for _ in range(times):
            out = self.step(out)
        return out

    def diameter(self) -> float:
        """Diameter proxy of ``X``: bounding-box diagonal in probe coordinates."""
        lo, hi = self.probe_box
        return float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))


@dataclass
class SampledMeasure:
    """Weighted point cloud approximating a Borel probability measure."""

    points: np.ndarray
    weights: np.ndarray
    seed: int
    provenance: str
    system: str = ""
    period: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.points) == 0:
            raise ValueError("a sampled measure needs at least one point")
        if self.weights.shape != (len(self.points),):
            raise ValueError("weights must have one entry per point")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def uniform(cls, points, seed=0, provenance="iid-coding", system="", period=None):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        return cls(points, np.full(n, 1.0 / n), seed, provenance, system, period)

    def subset(self, idx) -> "SampledMeasure":
        w = self.weights[idx]
        return SampledMeasure(self.points[idx], w / w.sum(), self.seed, self.provenance,
                              self.system, self.period)

    def mapped(self, system: SystemSpec, times: int = 1) -> "SampledMeasure":
        """Push the cloud forward by ``times`` applications of ``system.step``."""
        return SampledMeasure(system.iterate(self.points, times), self.weights.copy(), self.seed,
                              self.provenance, self.system, self.period)


# ---------------------------------------------------------------------------
# Smale-Williams solenoid on the solid torus, coordinates (t, Re z, Im z)

def solenoid_step(p, squared: bool = False) -> np.ndarray:
    """Apply ``(t, z) -> (2t mod 2pi, z/4 + exp(it)/2)`` once, or twice if ``squared``.

    Accepts a single point or an ``(n, 3)`` array.
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    q = np.atleast_2d(p).copy()
    if np.any(np.hypot(q[:, 1], q[:, 2]) > 1.0 + DISK_TOL):
        raise ValueError("point lies outside the solid torus (|z| > 1)")
    for _ in range(2 if squared else 1):
        t = q[:, 0]
        zr = 0.25 * q[:, 1] + 0.5 * np.cos(t)
        zi = 0.25 * q[:, 2] + 0.5 * np.sin(t)
        q = np.column_stack([np.mod(2.0 * t, TWO_PI), zr, zi])
    return q[0] if single else q


def _bit_windows(words: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Top 53 bits of the bit stream starting at each offset, as a fraction in [0, 1)."""
    q = offsets // 64
    r = (offsets % 64).astype(np.uint64)
    hi = words[q] << r
    shift = (np.uint64(64) - r) % np.uint64(64)
    lo = np.where(r == 0, np.uint64(0), words[q + 1] >> shift)
    return ((hi | lo) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def solenoid_orbit(n_steps: int, seed: int) -> np.ndarray:
    """Orbit of a uniformly random initial point under the single-step solenoid map.

    The angle of the initial point is an infinite random binary fraction; the
    angle at time ``j`` is read off as the 53-bit window starting at bit ``j``,
    so the doubling map never degenerates in floating point.
    """
    rng = np.random.default_rng(seed)
    n_words = (n_steps + 53) // 64 + 2
    words = rng.integers(0, 2 ** 64, size=n_words, dtype=np.uint64, endpoint=False)
    rad = math.sqrt(rng.random())
    arg = TWO_PI * rng.random()
    z0 = rad * complex(math.cos(arg), math.sin(arg))

    t = TWO_PI * _bit_windows(words, np.arange(n_steps, dtype=np.int64))
    z = np.empty(n_steps, dtype=complex)
    z[0] = z0
    if n_steps > 1:
        drive = np.exp(1j * t[:-1])
        z[1:] = lfilter([0.5], [1.0, -0.25], drive, zi=[0.25 * z0])[0]
    return np.column_stack([t, z.real, z.imag])


def sample_srb(n: int, burn_in: int = 1000, seed: int = 0) -> SampledMeasure:
    """Birkhoff sample of the natural measure of the solenoid under ``T = T~^2``."""
    if n < 1 or burn_in < 0:
        raise ValueError("need n >= 1 and burn_in >= 0")
    orbit = solenoid_orbit(2 * (burn_in + n) - 1, seed)
    points = orbit[2 * burn_in::2]
    return SampledMeasure.uniform(points, seed, "orbit-average", "solenoid", SOLENOID_PERIOD.copy())


def _solenoid_probe(p):
    p = np.atleast_2d(p)
    return np.column_stack([np.cos(p[:, 0]), np.sin(p[:, 0]), p[:, 1], p[:, 2]])


def solenoid() -> SystemSpec:
    """The solenoid system with ``T = T~^2`` (what the delay maps iterate)."""
    return SystemSpec(
        kind="solenoid", ambient_dim=3, lipschitz_bound=4.2,
        step=lambda p: solenoid_step(p, squared=True),
        period=SOLENOID_PERIOD.copy(),
        probe_coords=_solenoid_probe,
        probe_box=(np.full(4, -1.0), np.full(4, 1.0)),
    )


# ---------------------------------------------------------------------------
# Self-similar sets from corner maps f_i(x) = lam * x + (1 - lam) * c_i

def _check_lambda(lam, lo=0.25, hi=0.5):
    if not lo < lam < hi:
        raise ValueError(f"contraction ratio {lam} outside ({lo}, {hi})")


def _check_word(word, n_symbols):
    word = np.asarray(word)
    if word.size == 0:
        raise ValueError("empty coding word")
    if np.any((word < 0) | (word >= n_symbols)) or not np.issubdtype(word.dtype, np.integer):
        raise ValueError(f"coding symbols must be integers in 0..{n_symbols - 1}")
    return word


def _project_words(words: np.ndarray, lam: float, corners: np.ndarray) -> np.ndarray:
    """``f_{w1} o ... o f_{wL}(0)`` for each row of ``words``, evaluated innermost first."""
    words = np.atleast_2d(words)
    x = np.zeros((words.shape[0], corners.shape[1]))
    shift = (1.0 - lam) * corners
    for j in range(words.shape[1] - 1, -1, -1):
        x = lam * x + shift[words[:, j]]
    return x


def ifs_natural_projection(word, lam: float) -> np.ndarray:
    """Point of the four-corner set coded by a finite word over {0, 1, 2, 3}.

    Truncation error against the infinite word is at most ``lam**len(word) * sqrt(2)``.
    """
    _check_lambda(lam)
    word = _check_word(word, 4)
    return _project_words(word[None, :], lam, CORNERS_2D)[0]


def coding_depth(lam: float, tol: float = 1e-9) -> int:
    return int(math.ceil(math.log(tol) / math.log(lam)))


def _first_symbol(p: np.ndarray, lam: float, corners: np.ndarray) -> np.ndarray:
    """Index of the first-level cell containing each point (smallest index on ties)."""
    p = np.atleast_2d(p)
    lo = (1.0 - lam) * corners  # (c, N)
    inside = np.all((p[:, None, :] >= lo[None] - CELL_TOL) & (p[:, None, :] <= lo[None] + lam + CELL_TOL),
                    axis=2)
    ok = inside.any(axis=1)
    if not ok.all():
        bad = np.flatnonzero(~ok)[0]
        raise CodingError(f"point {p[bad].tolist()} lies in no first-level cell")
    return np.argmax(inside, axis=1)


def cantor_shift_step(p, lam: float) -> np.ndarray:
    """Shift map on the four-corner set: undo the first corner map."""
    _check_lambda(lam)
    p = np.asarray(p, dtype=float)
    q = np.atleast_2d(p)
    sym = _first_symbol(q, lam, CORNERS_2D)
    out = (q - (1.0 - lam) * CORNERS_2D[sym]) / lam
    return out[0] if p.ndim == 1 else out


def corner_cantor_shift(lam: float) -> SystemSpec:
    _check_lambda(lam)
    return SystemSpec(
        kind="corner_cantor_shift", ambient_dim=2, lipschitz_bound=1.0 / lam,
        step=lambda p: cantor_shift_step(p, lam), params={"lam": lam},
        probe_box=(np.zeros(2), np.ones(2)),
    )


def sample_self_similar(n: int, lam: float, seed: int = 0, depth: Optional[int] = None) -> SampledMeasure:
    """i.i.d. sample of the uniform self-similar measure on the four-corner set."""
    _check_lambda(lam)
    depth = coding_depth(lam) if depth is None else depth
    if lam ** depth >= 1e-9:
        raise ValueError("coding depth too shallow for 1e-9 truncation error")
    rng = np.random.default_rng(seed)
    words = rng.integers(0, 4, size=(n, depth))
    return SampledMeasure.uniform(_project_words(words, lam, CORNERS_2D), seed, "iid-coding",
                                  "corner_cantor_shift")


# ---------------------------------------------------------------------------
# Trivial periodic examples

def tent_step(x):
    """``x -> |x - 1/2|`` on [0, 1]; satisfies T^3 = T."""
    return np.abs(np.asarray(x, dtype=float) - 0.5)


def identity_step(p):
    return np.array(p, dtype=float, copy=True)


def tent_half() -> SystemSpec:
    return SystemSpec(kind="tent_half", ambient_dim=1, lipschitz_bound=1.0,
                      step=tent_step, probe_box=(np.zeros(1), np.ones(1)))


def identity(dim: int = 1) -> SystemSpec:
    return SystemSpec(kind="identity", ambient_dim=dim, lipschitz_bound=1.0,
                      step=identity_step, params={"dim": dim},
                      probe_box=(np.zeros(dim), np.ones(dim)))


def sample_uniform_box(n: int, dim: int, seed: int = 0, system: str = "") -> SampledMeasure:
    rng = np.random.default_rng(seed)
    return SampledMeasure.uniform(rng.random((n, dim)), seed, "iid-coding", system)


# ---------------------------------------------------------------------------
# Union chain: X1 (dim > 2) -> X2 (dim < 1) -> X3 -> ... accumulating at CHAIN_LIMIT

X2_OFFSET = np.array([2.0, 2.0, 2.0])
CHAIN_LIMIT = np.array([-1.0, -1.0, -1.0])


def corner_dimension(lam: float, n_maps: int) -> float:
    return math.log(n_maps) / -math.log(lam)


def _decode_cube(p: np.ndarray, lam: float, depth: int) -> np.ndarray:
    """Symbolic coding (indices into CORNERS_3D) of points of a cube corner set."""
    x = np.array(p, dtype=float, copy=True)
    words = np.empty((len(x), depth), dtype=np.int64)
    weights = np.array([4, 2, 1])
    for j in range(depth):
        bits = (x >= 0.5).astype(np.int64)
        words[:, j] = bits @ weights
        x = (x - (1.0 - lam) * bits) / lam
    return words


def _union_chain_step(p: np.ndarray, lam1: float, lam2: float, depth: int) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    out = np.empty_like(p)
    in_x1 = np.all((p >= -CELL_TOL) & (p <= 1.0 + CELL_TOL), axis=1)
    in_x2 = np.all((p >= 2.0 - CELL_TOL) & (p <= 3.0 + CELL_TOL), axis=1)
    chain = ~(in_x1 | in_x2)
    if in_x1.any():
        words = _decode_cube(p[in_x1], lam1, depth)
        out[in_x1] = X2_OFFSET + _project_words(words, lam2, CORNERS_3D)
    # X2 -> X3 = CHAIN_LIMIT + X2 / 8, then halve the distance to the limit at each step
    out[in_x2] = CHAIN_LIMIT + p[in_x2] / 8.0
    out[chain] = CHAIN_LIMIT + 0.5 * (p[chain] - CHAIN_LIMIT)
    return out


def build_union_chain(lam1: float, lam2: float) -> SystemSpec:
    """Chain of self-similar pieces whose first piece has dimension > 2 and the rest < 1."""
    if not 1.0 / (2.0 * math.sqrt(2.0)) < lam1 < 0.5:
        raise ValueError(f"lam1={lam1} outside (1/(2 sqrt 2), 1/2)")
    if not (0.0 < lam2 < 0.5 and corner_dimension(lam2, 8) < 1.0):
        raise ValueError(f"lam2={lam2} must give a piece of dimension < 1")
    depth = coding_depth(lam1)
    # cells of X1 at distance >= (1 - 2 lam1) lam1^(j-1) map to cells of X2 of diameter sqrt(3) lam2^(j-1)
    lip = math.sqrt(3.0) / (1.0 - 2.0 * lam1)
    return SystemSpec(
        kind="union_chain", ambient_dim=3, lipschitz_bound=lip,
        step=lambda p: _union_chain_step(p, lam1, lam2, depth),
        params={"lam1": lam1, "lam2": lam2, "depth": depth},
        probe_box=(np.full(3, -1.0), np.full(3, 3.0)),
    )


def sample_union_chain(n: int, lam1: float, seed: int = 0) -> SampledMeasure:
    """Uniform self-similar measure on the first piece X1 of the union chain."""
    depth = coding_depth(lam1)
    rng = np.random.default_rng(seed)
    words = rng.integers(0, 8, size=(n, depth))
    return SampledMeasure.uniform(_project_words(words, lam1, CORNERS_3D), seed, "iid-coding",
                                  "union_chain")


def sample_cube_corner_set(n: int, lam: float, seed: int = 0, offset=None) -> SampledMeasure:
    """Uniform self-similar measure on the 8-map cube corner set (used for X2 checks)."""
    depth = coding_depth(lam)
    rng = np.random.default_rng(seed)
    words = rng.integers(0, 8, size=(n, depth))
    pts = _project_words(words, lam, CORNERS_3D)
    if offset is not None:
        pts = pts + offset
    return SampledMeasure.uniform(pts, seed, "iid-coding", "cube_corner")


# ---------------------------------------------------------------------------

def make_system(kind: str, **params) -> SystemSpec:
    """Registry entry point used by configs and the CLI."""
    if kind == "solenoid":
        return solenoid()
    if kind == "corner_cantor_shift":
        return corner_cantor_shift(params.get("lam", 1.0 / 3.0))
    if kind == "tent_half":
        return tent_half()
    if kind == "identity":
        return identity(params.get("dim", 1))
    if kind == "union_chain":
        return build_union_chain(params.get("lam1", 0.4), params.get("lam2", 0.05))
    raise ValueError(f"unknown system kind {kind!r}")


def sample_system(kind: str, n: int, seed: int, burn_in: int = 1000, **params) -> SampledMeasure:
    if kind == "solenoid":
        return sample_srb(n, burn_in, seed)
    if kind == "corner_cantor_shift":
        return sample_self_similar(n, params.get("lam", 1.0 / 3.0), seed)
    if kind == "union_chain":
        return sample_union_chain(n, params.get("lam1", 0.4), seed)
    if kind == "tent_half":
        return sample_uniform_box(n, 1, seed, "tent_half")
    if kind == "identity":
        return sample_uniform_box(n, params.get("dim", 1), seed, "identity")
    raise ValueError(f"unknown system kind {kind!r}")
