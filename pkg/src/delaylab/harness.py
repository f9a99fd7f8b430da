"""Scenario registry, configuration, result emission and reporting.

A scenario binds one claim about delay-coordinate predictability to a
concrete experiment: a system, a base observable with a family of sampled
perturbations, a delay dimension, sample sizes and ladders.  Running a
scenario yields a :class:`ScenarioResult` whose rows (one per perturbation or
case) carry the metrics and verdicts, and whose curves are the exceedance
data those verdicts were read from.

Artifacts written per scenario directory::

    result.json         deterministic: config echo, rows, aggregate, diagnostics
    meta.json           runtime and timestamp (excluded from determinism)
    curves/<name>.csv   exceedance curves referenced by the rows
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .dimension import EstimateError, correlation_dimension, scale_ladder
from .observables import observable_for, perturb, probe_basis, sample_alpha
from .prediction import (EmptyBallError, ExceedanceCurve, delta_ladder, embed, epsilon_ladder,
                         scaling_exponent, sigma_table, verdict_from_curve)
from .slices import (EmptySlabError, disintegration_check, geometric_slice, injectivity_probe,
                     pushforward_density_diagnostic, pushforward_local_dimension,
                     slice_dimension, slice_dimension_profile)
from .systems import CodingError, corner_dimension, make_system, sample_system, solenoid_step

SCHEMA = "delaylab.scenario-result/1"

# Failures of a single perturbation that are recorded rather than raised.
ESTIMATOR_ERRORS = (EstimateError, EmptyBallError, EmptySlabError, CodingError,
                    np.linalg.LinAlgError, FloatingPointError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration

@dataclass
class ScenarioConfig:
    scenario: str
    system: dict                        # {"kind": ..., "params": {...}}
    observable: dict                    # {"base": ..., "alpha": {"kind": "fixed"|"sampled", ...}}
    k: list
    n: int
    sample_seed: int = 0
    query_seed: int = 0
    eps_ladder: Optional[list] = None   # absolute radii; default: data-driven ladder
    delta_ladder: Optional[list] = None # absolute thresholds; default: relative to std(v)
    options: dict = field(default_factory=dict)
    output_dir: Optional[str] = None

    def validate(self) -> "ScenarioConfig":
        if self.scenario not in REGISTRY:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        kind = self.system.get("kind")
        try:
            make_system(kind, **self.system.get("params", {}))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad system spec: {exc}") from None
        pol = self.observable.get("alpha", {"kind": "fixed"})
        if pol.get("kind") not in ("fixed", "sampled"):
            raise ConfigError("alpha policy must be 'fixed' or 'sampled'")
        if pol["kind"] == "sampled" and (int(pol.get("count", 0)) < 1 or float(pol.get("radius", 1)) <= 0):
            raise ConfigError("sampled alpha policy needs count >= 1 and radius > 0")
        if not self.k or any(int(k) < 1 for k in self.k):
            raise ConfigError("k must be a nonempty list of positive integers")
        if int(self.n) < 1:
            raise ConfigError("n must be positive")
        for name in ("eps_ladder", "delta_ladder"):
            lad = getattr(self, name)
            if lad is None:
                continue
            d = np.diff(np.asarray(lad, dtype=float))
            if len(lad) < 2 or not (np.all(d > 0) or np.all(d < 0)) or min(lad) <= 0:
                raise ConfigError(f"{name} must be positive and strictly monotone")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if "scenario" not in d:
            raise ConfigError("config lacks a scenario id")
        base = default_config(d["scenario"]).to_dict()
        base.update(d)
        base["k"] = [int(k) for k in np.atleast_1d(base["k"])]
        return cls(**base).validate()

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: {exc.msg}") from None
        if not isinstance(d, dict):
            raise ConfigError("line 1: config must be a JSON object")
        return cls.from_dict(d)


def alpha_family(cfg: ScenarioConfig, m: int) -> list:
    """The perturbation vectors named by the config's alpha policy."""
    pol = cfg.observable.get("alpha", {"kind": "fixed"})
    if pol["kind"] == "sampled":
        seed, radius = int(pol.get("seed", 0)), float(pol.get("radius", 1.0))
        return [sample_alpha(m, radius, seed + i) for i in range(int(pol["count"]))]
    values = pol.get("values")
    if values is None:
        return [np.zeros(m)]
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[1] != m:
        raise ConfigError(f"fixed alpha has length {values.shape[1]}, basis has {m}")
    return list(values)


# ---------------------------------------------------------------------------
# Results

@dataclass
class ScenarioResult:
    scenario: str
    config: dict
    rows: list                      # per-alpha (or per-case) metrics
    aggregate: dict                 # verdicts over rows; "passed" and "partial"
    diagnostics: dict
    curves: dict = field(default_factory=dict, repr=False)  # name -> ExceedanceCurve
    runtime: float = 0.0
    schema: str = SCHEMA

    @property
    def passed(self) -> bool:
        return bool(self.aggregate.get("passed"))

    def to_dict(self) -> dict:
        return {"schema": self.schema, "version": __version__, "scenario": self.scenario,
                "config": self.config, "rows": self.rows, "aggregate": self.aggregate,
                "diagnostics": self.diagnostics, "curves": sorted(self.curves)}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=1)

    def write(self, directory) -> Path:
        out = Path(directory) / self.scenario
        (out / "curves").mkdir(parents=True, exist_ok=True)
        for name, curve in sorted(self.curves.items()):
            (out / "curves" / f"{name}.csv").write_text(curve.to_csv())
        (out / "result.json").write_text(self.to_json() + "\n")
        meta = {"runtime_seconds": self.runtime,
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "schema": self.schema}
        (out / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        (out / "summary.txt").write_text(summary_text(self))
        return out


def _jsonable(obj):
    """Plain JSON types with floats rounded-trip exact (repr is 17-digit safe)."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def summary_text(res: ScenarioResult) -> str:
    sc = REGISTRY[res.scenario]
    lines = [f"{res.scenario} {sc.name}: {'PASS' if res.passed else 'FAIL'}",
             f"claim: {sc.claim}"]
    for key, val in sorted(res.aggregate.items()):
        lines.append(f"  {key}: {val}")
    for row in res.rows:
        bits = [f"{k}={_short(v)}" for k, v in row.items() if not isinstance(v, (list, dict))]
        lines.append("  - " + " ".join(bits))
    return "\n".join(lines) + "\n"


def _short(v):
    return f"{v:.4g}" if isinstance(v, float) else v


# ---------------------------------------------------------------------------
# Shared experiment pieces

def _system(cfg, spec=None):
    spec = spec or cfg.system
    return make_system(spec["kind"], **spec.get("params", {}))


def _sample(cfg, spec=None, n=None, seed=None):
    spec = spec or cfg.system
    return sample_system(spec["kind"], int(n or cfg.n), int(cfg.sample_seed if seed is None else seed),
                         **spec.get("params", {}))


def _observable(system, base, k, alpha):
    h = observable_for(system, base, k=k)
    return perturb(h, alpha)


def _alphas_for(cfg, system, k):
    N = len(system.probe_box[0])
    return alpha_family(cfg, probe_basis(N, k).m)


def _ladders(cfg, ec):
    eps = np.asarray(cfg.eps_ladder, dtype=float) if cfg.eps_ladder else epsilon_ladder(ec)
    eps = np.sort(eps)[::-1]
    if cfg.delta_ladder:
        dl = np.sort(np.asarray(cfg.delta_ladder, dtype=float))[::-1]
    else:
        dl = delta_ladder(ec, int(cfg.options.get("n_deltas", 6)))
    return eps, dl


def _exceedance_curves(cfg, ec, tag, curves):
    eps, dl = _ladders(cfg, ec)
    table = sigma_table(ec, eps, int(cfg.options.get("n_queries", 2000)), cfg.query_seed)
    out = []
    for j, d in enumerate(dl):
        curve = table.exceedance(d)
        name = f"{tag}_d{j}"
        curves[name] = curve
        out.append((name, curve))
    return out


def _guarded(rows, row, fn):
    """Run ``fn(row)``; estimator failures are recorded on the row."""
    try:
        fn(row)
    except ESTIMATOR_ERRORS as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        row["passed"] = False
    rows.append(row)


def _majority(rows, need, label="passed"):
    ok = sum(bool(r.get(label)) for r in rows)
    return {"count": ok, "of": len(rows), "required": need, "passed": ok >= need,
            "partial": any("error" in r for r in rows)}


# ---------------------------------------------------------------------------
# Scenarios

def _predictability(cfg, want):
    """Shared body of the two threshold scenarios.

    ``want == "collapses"``: the verdict at the coarsest delta of the ladder
    must collapse.  ``want == "bounded_below"``: some delta must be bounded
    below.
    """
    system = _system(cfg)
    cloud = _sample(cfg)
    rows, curves = [], {}
    for k in cfg.k:
        for i, alpha in enumerate(_alphas_for(cfg, system, k)):
            def body(row, alpha=alpha, k=k, i=i):
                ec = embed(cloud, _observable(system, cfg.observable["base"], k, alpha), system, k)
                found = _exceedance_curves(cfg, ec, f"k{k}_a{i}", curves)
                verdicts = [verdict_from_curve(c) for _, c in found]
                row.update(deltas=[c.delta for _, c in found], verdicts=verdicts,
                           curve_files=[n for n, _ in found],
                           last_fractions=[c.fractions[-3:].tolist() for _, c in found],
                           epsilons=[float(found[0][1].epsilons[0]), float(found[0][1].epsilons[-1])])
                if want == "collapses":
                    row["verdict"] = verdicts[0]
                    row["passed"] = verdicts[0] == "collapses"
                else:
                    hit = [j for j, v in enumerate(verdicts) if v == "bounded_below"]
                    row["verdict"] = "bounded_below" if hit else verdicts[0]
                    row["verdict_delta_index"] = hit[0] if hit else None
                    row["passed"] = bool(hit)
            _guarded(rows, {"k": k, "alpha_index": i, "alpha_norm": float(np.linalg.norm(alpha))}, body)
    agg = _majority(rows, int(cfg.options.get("majority", 7)))
    agg["expected_verdict"] = want
    return rows, agg, {"phase_dim_hint": cfg.options.get("reference_dimension")}, curves


def run_predictability_above_dimension(cfg):
    return _predictability(cfg, "collapses")


def run_nonpredictability_below_dimension(cfg):
    return _predictability(cfg, "bounded_below")


def run_exceedance_upper_rate(cfg):
    system = _system(cfg)
    cloud = _sample(cfg)
    D = float(cfg.options.get("reference_dimension", 1.5))
    theta = float(cfg.options.get("theta", 0.2))
    rel = float(cfg.options.get("delta_rel", 0.1))
    rows, curves = [], {}
    for k in cfg.k:
        floor = k - D - theta
        for i, alpha in enumerate(_alphas_for(cfg, system, k)):
            def body(row, alpha=alpha, k=k, i=i):
                ec = embed(cloud, _observable(system, cfg.observable["base"], k, alpha), system, k)
                eps = np.sort(np.asarray(cfg.eps_ladder, float))[::-1] if cfg.eps_ladder else epsilon_ladder(ec)
                delta = rel * ec.v_spread()
                curve = sigma_table(ec, eps, int(cfg.options.get("n_queries", 2000)),
                                    cfg.query_seed).exceedance(delta)
                name = f"k{k}_a{i}"
                curves[name] = curve
                fit = scaling_exponent(curve)
                probe = injectivity_probe(ec, seed=cfg.query_seed)
                row.update(delta=delta, slope=fit.slope, residual=fit.residual,
                           n_scales=fit.n_scales, window=list(fit.window), unfit=fit.unfit,
                           slope_floor=floor, collisions=probe.count,
                           collision_mass=probe.mass_fraction, curve_files=[name])
                row["verdict"] = "unfit" if fit.unfit else ("rate_ok" if fit.slope >= floor else "too_slow")
                row["passed"] = (not fit.unfit) and fit.slope >= floor and probe.nonempty
            _guarded(rows, {"k": k, "alpha_index": i}, body)
    agg = _majority(rows, int(cfg.options.get("majority", 6)))
    agg["slopes"] = [r.get("slope") for r in rows]
    return rows, agg, {"reference_dimension": D, "theta": theta}, curves


def zero_exceedance_scale(curves) -> tuple[float, int]:
    """Largest ladder radius below which every curve is identically zero.

    Returns ``(eps0, number of zero scales)``; ``(nan, 0)`` when the finest
    scale already exceeds.
    """
    eps = curves[0].epsilons
    zero = np.all(np.vstack([c.fractions for c in curves]) == 0, axis=0)
    count = 0
    for z in zero[::-1]:     # finest scale first
        if not z:
            break
        count += 1
    return (float(eps[len(eps) - count]) if count else math.nan), count


def run_solenoid_counterexample(cfg):
    system = _system(cfg)
    cloud = _sample(cfg)
    need = int(cfg.options.get("min_zero_scales", 2))
    rows, curves = [], {}
    for k in cfg.k:
        for i, alpha in enumerate(_alphas_for(cfg, system, k)):
            def body(row, alpha=alpha, k=k, i=i):
                ec = embed(cloud, _observable(system, cfg.observable["base"], k, alpha), system, k)
                found = _exceedance_curves(cfg, ec, f"k{k}_a{i}", curves)
                eps0, zeros = zero_exceedance_scale([c for _, c in found])
                probe = injectivity_probe(ec, seed=cfg.query_seed)
                row.update(eps0=eps0, zero_scales=zeros, deltas=[c.delta for _, c in found],
                           collisions=probe.count, collision_mass=probe.mass_fraction,
                           sep_x=probe.sep_x, tol_u=probe.tol_u,
                           curve_files=[n for n, _ in found])
                row["verdict"] = "zero_below_eps0" if zeros >= need else "exceeds_at_finest"
                row["passed"] = zeros >= need and probe.nonempty
            _guarded(rows, {"k": k, "alpha_index": i}, body)
    # the observation identity along orbits
    pts = sample_system("solenoid", int(cfg.options.get("identity_points", 10000)),
                        cfg.sample_seed + 1).points
    h0 = np.cos(pts[:, 0])
    h1 = np.cos(solenoid_step(pts, squared=True)[:, 0])
    ident = float(np.max(np.abs(h1 - (2 * (2 * h0 ** 2 - 1) ** 2 - 1))))
    tol = float(cfg.options.get("identity_tol", 1e-10))
    agg = _majority(rows, len(rows))
    agg["identity_max_error"] = ident
    agg["passed"] = agg["passed"] and ident <= tol
    return rows, agg, {"identity_tol": tol}, curves


def run_slice_dimension_bound(cfg):
    rows = []
    diag = {}
    for case in cfg.options["cases"]:
        spec = case["system"]
        system = make_system(spec["kind"], **spec.get("params", {}))
        cloud = sample_system(spec["kind"], int(case["n"]), int(case["sample_seed"]), **spec.get("params", {}))
        k = int(case["k"])
        alphas = ([sample_alpha(probe_basis(len(system.probe_box[0]), k).m, 1.0, case["alpha_seed"])]
                  if case.get("alpha_seed") is not None
                  else [np.zeros(probe_basis(len(system.probe_box[0]), k).m)])
        ec = embed(cloud, _observable(system, case["base"], k, alphas[0]), system, k)

        def body(row, case=case, ec=ec):
            if case["mode"] == "profile":
                delta = float(case["delta_rel"]) * ec.u_diameter()
                vals, used, skipped = slice_dimension_profile(ec, delta, int(case["n_centres"]),
                                                              seed=int(case.get("seed", 1)))
                if len(vals) == 0:
                    raise EstimateError("no slab held enough members")
                q = float(np.quantile(vals, float(case["quantile"])))
                target = corner_dimension(spec["params"]["lam"], 4) - k
                floor = target - float(case["tolerance"])
                dc = disintegration_check(ec, lambda p: p[:, 0] < 0.5, delta, seed=int(case.get("seed", 1)))
                row.update(delta=delta, quantile_value=q, median=float(np.median(vals)),
                           slices=len(vals), skipped=skipped, target=target, floor=floor,
                           disintegration_z=dc.z)
                row["verdict"] = "above_floor" if q >= floor else "below_floor"
                row["passed"] = q >= floor
            else:
                sl = geometric_slice(ec, case["y"], float(case["delta"]))
                est = slice_dimension(sl, slab_floor=float(case.get("slab_floor", 10.0)))
                lo, hi = case["expected"]
                row.update(value=est.value, members=len(sl), delta=float(case["delta"]),
                           residual=est.residual, expected=[lo, hi])
                row["verdict"] = "in_range" if lo <= est.value <= hi else "out_of_range"
                row["passed"] = lo <= est.value <= hi

        _guarded(rows, {"case": case["label"], "k": k, "alpha_index": 0}, body)
    return rows, _majority(rows, len(rows)), diag, {}


def run_absolute_continuity(cfg):
    system = _system(cfg)
    cloud = _sample(cfg)
    rows = []
    for k in cfg.k:
        for i, alpha in enumerate(_alphas_for(cfg, system, k)):
            def body(row, alpha=alpha, k=k):
                ec = embed(cloud, _observable(system, cfg.observable["base"], k, alpha), system, k)
                rep = pushforward_density_diagnostic(ec)
                row.update(growth=rep.growth, collision_density=rep.collision_density.tolist(),
                           verdict=rep.verdict, passed=rep.verdict == "stable")
            _guarded(rows, {"k": k, "alpha_index": i}, body)
    agg = _majority(rows, int(cfg.options.get("majority", 7)))
    diag = {}
    ctl = cfg.options.get("control")
    if ctl:
        csys = make_system(ctl["system"]["kind"], **ctl["system"].get("params", {}))
        ccloud = sample_system(ctl["system"]["kind"], int(ctl["n"]), int(ctl["sample_seed"]))
        kc = int(ctl["k"])
        ec = embed(ccloud, observable_for(csys, ctl["base"], k=kc), csys, kc)
        rep = pushforward_density_diagnostic(ec)
        diag["control"] = {"growth": rep.growth, "verdict": rep.verdict,
                           "expected": ctl.get("expected", "diverges")}
        agg["control_ok"] = rep.verdict == ctl.get("expected", "diverges")
    return rows, agg, diag, {}


def run_local_dimension_projection(cfg):
    rows = []
    for case in cfg.options["cases"]:
        spec = case["system"]
        system = make_system(spec["kind"], **spec.get("params", {}))
        cloud = sample_system(spec["kind"], int(case["n"]), int(case["sample_seed"]), **spec.get("params", {}))
        k = int(case["k"])
        m = probe_basis(len(system.probe_box[0]), k).m
        alpha = sample_alpha(m, 1.0, int(case["alpha_seed"]))

        def body(row, system=system, cloud=cloud, k=k, alpha=alpha, case=case):
            ec = embed(cloud, _observable(system, case["base"], k, alpha), system, k)
            span = float(case.get("ladder_span", 32.0))
            n_sc = int(case.get("n_scales", 12))
            base_u = scale_ladder(ec.index, index=ec.index)
            u_lad = np.geomspace(base_u[0], span * base_u[0], n_sc)
            phase_dims, recon_dims, _ = pushforward_local_dimension(
                ec, int(case.get("sample_count", 200)), seed=int(case.get("seed", 0)),
                u_ladder=u_lad, window=(0, n_sc))
            mean = float(np.nanmean(recon_dims))
            lo, hi = case["expected"]
            row.update(mean_local_dimension=mean, phase_mean=float(np.nanmean(phase_dims)),
                       failed_fits=int(np.isnan(recon_dims).sum()), expected=[lo, hi])
            row["verdict"] = "in_range" if lo <= mean <= hi else "out_of_range"
            row["passed"] = lo <= mean <= hi

        _guarded(rows, {"case": case["label"], "k": k, "alpha_index": int(case["alpha_seed"])}, body)
    return rows, _majority(rows, len(rows)), {}, {}


def run_iterate_phenomenon(cfg):
    rows, agg, diag, curves = _predictability(cfg, "collapses")
    system = _system(cfg)
    cloud = _sample(cfg)
    dim = correlation_dimension(cloud)
    growth = []
    for row in rows:
        if "error" in row:
            continue
        k, i = row["k"], row["alpha_index"]
        alpha = _alphas_for(cfg, system, k)[i]
        ec = embed(cloud, _observable(system, cfg.observable["base"], k, alpha), system, k)
        rep = pushforward_density_diagnostic(ec)
        row["density_growth"], row["density_verdict"] = rep.growth, rep.verdict
        growth.append(rep.verdict == "diverges")
    floor = float(cfg.options.get("phase_dimension_floor", 2.1))
    need = int(cfg.options.get("majority", 7))
    agg.update(phase_dimension=dim.value, phase_dimension_floor=floor,
               density_diverges=int(sum(growth)))
    agg["passed"] = bool(agg["passed"] and dim.value >= floor and sum(growth) >= need)
    diag["phase_dimension_estimate"] = dim.to_dict()
    return rows, agg, diag, curves


@dataclass(frozen=True)
class Scenario:
    id: str
    name: str
    claim: str
    runner: Callable
    defaults: dict


_CORNER = {"kind": "corner_cantor_shift", "params": {"lam": 1.0 / 3.0}}
_SOLENOID = {"kind": "solenoid", "params": {}}
_UNION = {"kind": "union_chain", "params": {"lam1": 0.4, "lam2": 0.05}}
_EIGHT = {"kind": "sampled", "count": 8, "radius": 1.0, "seed": 100}

REGISTRY: dict[str, Scenario] = {}


def _register(sid, name, claim, runner, **defaults):
    REGISTRY[sid] = Scenario(sid, name, claim, runner, defaults)


_register("V1", "predictability_above_dimension",
          "prevalent observables are k-predictable once k exceeds the Hausdorff dimension",
          run_predictability_above_dimension,
          system=_CORNER, observable={"base": "coord_0", "alpha": _EIGHT}, k=[2], n=1_000_000,
          options={"majority": 7, "reference_dimension": math.log(4) / math.log(3)})
_register("V2", "nonpredictability_below_dimension",
          "below the dimension the exceedance fraction stays bounded below for some delta",
          run_nonpredictability_below_dimension,
          system=_CORNER, observable={"base": "coord_0", "alpha": _EIGHT}, k=[1], n=1_000_000,
          options={"majority": 7, "reference_dimension": math.log(4) / math.log(3)})
_register("V3", "exceedance_upper_rate",
          "the exceedance fraction decays at least like eps^(k - upper box dimension - theta)",
          run_exceedance_upper_rate,
          system=_SOLENOID, observable={"base": "cos_angle", "alpha": _EIGHT}, k=[2], n=200_000,
          sample_seed=11,
          options={"majority": 6, "reference_dimension": 1.5, "theta": 0.2, "delta_rel": 0.1})
_register("V4", "solenoid_counterexample",
          "cos t on the solenoid is predictable for k = 1, 2 without being injective",
          run_solenoid_counterexample,
          system=_SOLENOID, observable={"base": "cos_angle", "alpha": {"kind": "fixed"}}, k=[1, 2],
          n=200_000, sample_seed=11,
          options={"min_zero_scales": 2, "identity_points": 10000, "identity_tol": 1e-10})
_register("V5", "slice_dimension_bound",
          "slices of a prevalent delay map carry dimension at least dim - k",
          run_slice_dimension_bound,
          system=_CORNER, observable={"base": "coord_0", "alpha": {"kind": "fixed"}}, k=[1],
          n=1_000_000,
          options={"cases": [
              {"label": "corner_profile", "mode": "profile", "system": _CORNER, "n": 1_000_000,
               "sample_seed": 0, "base": "coord_0", "alpha_seed": 100, "k": 1, "delta_rel": 0.003,
               "n_centres": 40, "quantile": 0.1, "tolerance": 0.15, "seed": 1},
              {"label": "solenoid_fiber", "mode": "single", "system": _SOLENOID, "n": 1_000_000,
               "sample_seed": 3, "base": "cos_angle", "alpha_seed": None, "k": 1, "y": [0.0],
               "delta": 0.002, "slab_floor": 10.0, "expected": [0.35, 0.65]}]})
_register("V6", "absolute_continuity",
          "for k below the dimension the pushed-forward measure has a density",
          run_absolute_continuity,
          system=_CORNER, observable={"base": "coord_0", "alpha": _EIGHT}, k=[1], n=200_000,
          options={"majority": 7,
                   "control": {"system": _SOLENOID, "n": 200_000, "sample_seed": 11, "k": 2,
                               "base": "cos_angle", "expected": "diverges"}})
_register("V7", "local_dimension_projection",
          "local dimension of the pushed-forward measure is min(k, local dimension)",
          run_local_dimension_projection,
          system=_SOLENOID, observable={"base": "cos_angle", "alpha": {"kind": "fixed"}}, k=[1, 2],
          n=200_000,
          options={"cases": [
              {"label": "solenoid_k1", "system": _SOLENOID, "n": 200_000, "sample_seed": 5,
               "base": "cos_angle", "alpha_seed": 100, "k": 1, "expected": [0.85, 1.15]},
              {"label": "solenoid_k2", "system": _SOLENOID, "n": 200_000, "sample_seed": 5,
               "base": "cos_angle", "alpha_seed": 100, "k": 2, "expected": [1.35, 1.65]},
              {"label": "corner_k2", "system": _CORNER, "n": 200_000, "sample_seed": 1,
               "base": "coord_0", "alpha_seed": 100, "k": 2, "expected": [1.11, 1.41]}]})
_register("V8", "iterate_phenomenon",
          "predictability is governed by the image measure, so a set of dimension > 2 can be 2-predictable",
          run_iterate_phenomenon,
          system=_UNION, observable={"base": "coord_0", "alpha": _EIGHT}, k=[2], n=200_000,
          options={"majority": 7, "phase_dimension_floor": 2.1})

# Claims the registry must cover; the completeness test checks each has a scenario.
CLAIMS = tuple(sc.name for sc in REGISTRY.values())


def default_config(scenario: str) -> ScenarioConfig:
    if scenario not in REGISTRY:
        raise ConfigError(f"unknown scenario {scenario!r}")
    d = copy.deepcopy(REGISTRY[scenario].defaults)
    return ScenarioConfig(scenario=scenario, **d)


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Run a scenario; deterministic given the config's seeds."""
    config.validate()
    t0 = time.perf_counter()
    rows, agg, diag, curves = REGISTRY[config.scenario].runner(config)
    agg.setdefault("partial", any("error" in r for r in rows))
    res = ScenarioResult(config.scenario, _jsonable(config.to_dict()), _jsonable(rows),
                         _jsonable(agg), _jsonable(diag), curves, time.perf_counter() - t0)
    if config.output_dir:
        res.write(config.output_dir)
    return res


# ---------------------------------------------------------------------------
# Reporting

SUMMARY_HEADER = ["scenario", "name", "row", "k", "alpha_index", "case", "verdict", "passed", "slope"]


def report(results_dir, out_dir=None) -> str:
    """Summary table (one row per scenario row) and log-log plot-data files.

    Returns the summary CSV text; also writes ``summary.csv`` and
    ``plots/<scenario>__<curve>.dat`` under ``out_dir`` (default: the results
    directory).
    """
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir else results_dir
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(SUMMARY_HEADER)
    plots = out_dir / "plots"
    for path in sorted(results_dir.glob("*/result.json")):
        res = json.loads(path.read_text())
        sid = res["scenario"]
        name = REGISTRY[sid].name if sid in REGISTRY else ""
        for j, row in enumerate(res["rows"]):
            slope = row.get("slope")
            wr.writerow([sid, name, j, row.get("k", ""), row.get("alpha_index", ""), row.get("case", ""),
                         row.get("verdict", row.get("error", "")), row.get("passed", ""),
                         "" if slope is None else _fmt(slope)])
        for curve_path in sorted((path.parent / "curves").glob("*.csv")):
            curve = ExceedanceCurve.from_csv(curve_path.read_text())
            ok = curve.fractions > 0
            plots.mkdir(parents=True, exist_ok=True)
            lines = [f"{_fmt(math.log(e))} {_fmt(math.log(f))}"
                     for e, f in zip(curve.epsilons[ok], curve.fractions[ok])]
            (plots / f"{sid}__{curve_path.stem}.dat").write_text(
                "# log_epsilon log_fraction\n" + "".join(l + "\n" for l in lines))
    text = buf.getvalue()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.csv").write_text(text)
    return text


def _fmt(x) -> str:
    return f"{float(x):.17g}" if isinstance(x, (int, float)) else str(x)
