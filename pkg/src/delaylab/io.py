"""Plain-text file formats for clouds and embedded pairs.

Cloud CSV::

    # system,<kind>,seed,<seed>[,<param>,<value>...]
    x0,x1,...,weight            (one point per row, 17 significant digits)

Pairs CSV::

    # pairs,<kind>,seed,<seed>,k,<k>,phase_dim,<N>[,<param>,<value>...]
    x0..x{N-1},u0..u{k-1},v0..v{k-1},weight
"""

from __future__ import annotations

import numpy as np

from .prediction import EmbeddedCloud
from .systems import SOLENOID_PERIOD, SampledMeasure


class FormatError(ValueError):
    """Malformed input file; the message starts with the offending line number."""


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _header_pairs(line: str, lineno: int, tag: str) -> dict:
    if not line.startswith("# "):
        raise FormatError(f"line {lineno}: expected a '# {tag},...' header")
    parts = line[2:].strip().split(",")
    if parts[0] != tag or len(parts) % 2:
        raise FormatError(f"line {lineno}: malformed header {line.strip()!r}")
    return dict(zip(parts[0::2], parts[1::2]))


def _param_items(params: dict) -> str:
    return "".join(f",{k},{fmt(v) if isinstance(v, float) else v}" for k, v in sorted(params.items()))


def _parse_params(fields: dict, skip) -> dict:
    out = {}
    for key, val in fields.items():
        if key in skip:
            continue
        try:
            out[key] = int(val)
        except ValueError:
            out[key] = float(val)
    return out


def _rows(lines, start, width, lineno0):
    rows = []
    for off, line in enumerate(lines[start:]):
        lineno = lineno0 + off
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != width:
            raise FormatError(f"line {lineno}: expected {width} fields, found {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric field") from None
    if not rows:
        raise FormatError(f"line {lineno0}: no data rows")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(arr), axis=1))[0])
        raise FormatError(f"line {lineno0 + bad}: non-finite value")
    return arr


def _exact_or_renormalised(w):
    # keep weights bit-exact when they already sum to 1, so files round-trip unchanged
    return w if abs(w.sum() - 1.0) <= 1e-12 else w / w.sum()


def write_cloud(cloud: SampledMeasure, params: dict | None = None) -> str:
    lines = [f"# system,{cloud.system or 'unknown'},seed,{cloud.seed}" + _param_items(params or {})]
    for p, w in zip(cloud.points, cloud.weights):
        lines.append(",".join(fmt(a) for a in p) + "," + fmt(w))
    return "\n".join(lines) + "\n"


def read_cloud(text: str):
    """Parse a cloud CSV; returns ``(SampledMeasure, params)``."""
    lines = text.splitlines()
    if not lines:
        raise FormatError("line 1: empty file")
    head = _header_pairs(lines[0], 1, "system")
    if "seed" not in head:
        raise FormatError("line 1: header lacks a seed")
    width = len(lines[1].split(",")) if len(lines) > 1 else 0
    arr = _rows(lines, 1, width, 2)
    kind = head["system"]
    pts, w = arr[:, :-1], arr[:, -1]
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise FormatError("line 2: weights must be nonnegative and sum to 1")
    w = _exact_or_renormalised(w)
    period = SOLENOID_PERIOD.copy() if kind == "solenoid" else None
    cloud = SampledMeasure(pts, w, int(head["seed"]), "file", kind, period)
    return cloud, _parse_params(head, {"system", "seed"})


def write_pairs(ec: EmbeddedCloud, params: dict | None = None) -> str:
    N = ec.phase.shape[1]
    lines = [f"# pairs,{ec.system or 'unknown'},seed,{ec.seed},k,{ec.k},phase_dim,{N}"
             + _param_items(params or {})]
    for x, u, v, w in zip(ec.phase, ec.u, ec.v, ec.weights):
        lines.append(",".join(fmt(a) for a in np.concatenate([x, u, v, [w]])))
    return "\n".join(lines) + "\n"


def read_pairs(text: str):
    """Parse a pairs CSV; returns ``(EmbeddedCloud, params)``."""
    lines = text.splitlines()
    if not lines:
        raise FormatError("line 1: empty file")
    head = _header_pairs(lines[0], 1, "pairs")
    try:
        k, N, seed = int(head["k"]), int(head["phase_dim"]), int(head["seed"])
    except (KeyError, ValueError):
        raise FormatError("line 1: header needs integer seed, k and phase_dim") from None
    arr = _rows(lines, 1, N + 2 * k + 1, 2)
    w = arr[:, -1]
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise FormatError("line 2: weights must be nonnegative and sum to 1")
    kind = head["pairs"]
    period = SOLENOID_PERIOD.copy() if kind == "solenoid" else None
    ec = EmbeddedCloud(arr[:, N:N + k], arr[:, N + k:N + 2 * k], _exact_or_renormalised(w), arr[:, :N], kind,
                       "file", k, seed, period)
    return ec, _parse_params(head, {"pairs", "seed", "k", "phase_dim"})
