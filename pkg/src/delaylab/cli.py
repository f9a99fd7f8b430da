"""Command line: ``delaylab {sample, embed, sigma-scan, dim, slice, verify, report}``.

The data commands compose through files or pipes::

    delaylab sample --system solenoid --n 100000 --seed 7 > cloud.csv
    delaylab embed --k 2 --observable cos_angle cloud.csv > pairs.csv
    delaylab sigma-scan pairs.csv > curves.csv
    delaylab dim --method correlation cloud.csv

Exit codes: 0 success, 2 usage error, 3 data error, 4 scenario failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dimension import EstimateError, estimate
from .harness import REGISTRY, ConfigError, ScenarioConfig, default_config, report, run_scenario
from .io import FormatError, read_cloud, read_pairs, write_cloud, write_pairs
from .observables import observable_for, perturb, probe_basis, sample_alpha
from .prediction import (EmptyBallError, delta_ladder, embed, epsilon_ladder, scaling_exponent,
                         sigma_table)
from .slices import EmptySlabError, geometric_slice, slice_dimension, slice_mass
from .systems import make_system, sample_system

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FAILED = 0, 2, 3, 4


class DataError(Exception):
    pass


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None


def _emit(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _system_params(args) -> dict:
    params = {}
    for name in ("lam", "lam1", "lam2", "dim"):
        val = getattr(args, name, None)
        if val is not None:
            params[name] = val
    return params


def cmd_sample(args) -> int:
    params = _system_params(args)
    cloud = sample_system(args.system, args.n, args.seed, args.burn_in, **params)
    _emit(write_cloud(cloud, params), args.output)
    return EXIT_OK


def cmd_embed(args) -> int:
    cloud, params = read_cloud(_read_text(args.input))
    system = make_system(cloud.system, **params)
    h = observable_for(system, args.observable, k=args.k)
    if args.alpha_seed is not None:
        h = perturb(h, sample_alpha(h.basis.m, args.alpha_radius, args.alpha_seed))
    ec = embed(cloud, h, system, args.k)
    extra = dict(params)
    if args.alpha_seed is not None:
        extra.update(alpha_seed=args.alpha_seed, alpha_radius=float(args.alpha_radius))
    _emit(write_pairs(ec, extra), args.output)
    return EXIT_OK


def cmd_sigma_scan(args) -> int:
    ec, _ = read_pairs(_read_text(args.input))
    eps = epsilon_ladder(ec, args.n_scales, seed=args.seed)
    deltas = args.delta if args.delta else delta_ladder(ec)
    table = sigma_table(ec, eps, args.n_queries, args.seed)
    chunks, fits = [], []
    for j, d in enumerate(deltas):
        curve = table.exceedance(d)
        text = curve.to_csv()
        chunks.append(text if j == 0 else text.split("\n", 1)[1])
        fits.append(json.loads(scaling_exponent(curve).to_json()) | {"delta": float(d)})
    _emit("".join(chunks), args.output)
    if args.fit_json:
        Path(args.fit_json).write_text(json.dumps(fits, sort_keys=True, indent=1) + "\n")
    return EXIT_OK


def cmd_dim(args) -> int:
    cloud, _ = read_cloud(_read_text(args.input))
    est = estimate(cloud, args.method, seed=args.seed)
    _emit(est.to_json() + "\n", args.output)
    return EXIT_OK


def cmd_slice(args) -> int:
    ec, _ = read_pairs(_read_text(args.input))
    y = np.array([float(a) for a in args.y.split(",")])
    if y.size != ec.k:
        raise DataError(f"--y has {y.size} components, the pairs have k = {ec.k}")
    sl = geometric_slice(ec, y, args.delta)
    side = json.loads(sl.sidecar())
    side["mass"] = slice_mass(ec, y, args.delta)
    try:
        side["dimension"] = slice_dimension(sl, slab_floor=args.slab_floor, seed=args.seed).to_dict()
    except EstimateError as exc:
        side["dimension"] = None
        side["dimension_error"] = str(exc)
    _emit(sl.to_csv(), args.output)
    sidecar = args.sidecar or (None if args.output in (None, "-") else args.output + ".json")
    if sidecar:
        Path(sidecar).write_text(json.dumps(side, sort_keys=True, indent=1) + "\n")
    else:
        sys.stderr.write(json.dumps(side, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.config:
        cfg = ScenarioConfig.from_json(_read_text(args.config))
    elif args.scenario:
        cfg = default_config(args.scenario)
    else:
        raise ConfigError("give --scenario or --config")
    if args.n is not None:
        cfg.n = args.n
    if args.out:
        cfg.output_dir = args.out
    res = run_scenario(cfg)
    sc = REGISTRY[cfg.scenario]
    print(f"{cfg.scenario} {sc.name}: {'PASS' if res.passed else 'FAIL'} "
          f"({res.aggregate.get('count')}/{res.aggregate.get('of')}, runtime {res.runtime:.1f}s)")
    return EXIT_OK if res.passed else EXIT_FAILED


def cmd_report(args) -> int:
    if not Path(args.results).is_dir():
        raise DataError(f"{args.results}: not a directory")
    sys.stdout.write(report(args.results, args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delaylab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="sample an invariant measure to a cloud CSV")
    s.add_argument("--system", required=True,
                   choices=["solenoid", "corner_cantor_shift", "union_chain", "tent_half", "identity"])
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--burn-in", type=int, default=1000)
    s.add_argument("--lam", type=float)
    s.add_argument("--lam1", type=float)
    s.add_argument("--lam2", type=float)
    s.add_argument("--dim", type=int)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("embed", help="delay vectors of a cloud to a pairs CSV")
    s.add_argument("input", nargs="?", default="-")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--observable", default="cos_angle", help="zero, cos_angle or coord_<i>")
    s.add_argument("--alpha-seed", type=int)
    s.add_argument("--alpha-radius", type=float, default=1.0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("sigma-scan", help="exceedance curves of a pairs CSV")
    s.add_argument("input", nargs="?", default="-")
    s.add_argument("--delta", type=float, action="append")
    s.add_argument("--n-scales", type=int, default=12)
    s.add_argument("--n-queries", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fit-json")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sigma_scan)

    s = sub.add_parser("dim", help="dimension estimate of a cloud CSV")
    s.add_argument("input", nargs="?", default="-")
    s.add_argument("--method", choices=["correlation", "box", "information"], default="correlation")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_dim)

    s = sub.add_parser("slice", help="geometric slice of a pairs CSV")
    s.add_argument("input", nargs="?", default="-")
    s.add_argument("--y", required=True, help="comma-separated centre in reconstruction space")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--slab-floor", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sidecar")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_slice)

    s = sub.add_parser("verify", help="run a registered scenario")
    s.add_argument("--scenario", choices=sorted(REGISTRY))
    s.add_argument("--config")
    s.add_argument("--n", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("report", help="summarise a results directory")
    s.add_argument("results")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)   # exits with status 2 on usage errors
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"delaylab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, EmptySlabError, EmptyBallError, EstimateError, ValueError) as exc:
        print(f"delaylab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
