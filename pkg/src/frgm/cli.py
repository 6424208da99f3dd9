"""Command-line front end.

Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 bad configuration.
Options resolve as flags, then a ``--config`` JSON/TOML file, then defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import DegenerateGeometryError, NumericalError, ParameterError

log = logging.getLogger("frgm")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


SOLVER_DEFAULTS = {"solver": "fw", "max_iter": 100, "gap_tol": 1e-6, "eps0": 0.05}

DEFAULTS = {
    "match-g": {**SOLVER_DEFAULTS, "alpha1": 0.99, "alpha2": 0.5, "sigma": 0.5, "distance": "wasserstein"},
    "match-e": {**SOLVER_DEFAULTS, "lambda1": 0.99, "lambda2": 0.5, "adjacency": "complete", "rotation_invariant": False},
    "match-d": {**SOLVER_DEFAULTS, "variant": "similarity", "rounds": 10, "lambda": 0.5, "sigma_w": None, "adjacency": "complete"},
    "remove-outliers": {**SOLVER_DEFAULTS, "outlier_k": 2.0, "outlier_rounds": 3},
    "bench": {"workers": 1},
    "lap": {"maximize": False},
    "synth": {"n_in": 20, "noise": 0.0, "n_out": 0},
}


def _add_solver(p):
    p.add_argument("--solver", choices=["fw", "afw"])
    p.add_argument("--max-iter", type=int)
    p.add_argument("--gap-tol", type=float)
    p.add_argument("--eps0", type=float, help="AFW initial entropy weight")


def _add_common(p):
    p.add_argument("--config", help="JSON or TOML file with option values")
    p.add_argument("--verbose", action="store_true", help="print the resolved options")
    p.add_argument("--out", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frgm", description="Function-space graph matching toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match-g", help="match two graphs given edge-attribute matrices")
    p.add_argument("e1")
    p.add_argument("e2")
    p.add_argument("--unary", help="m x n unary cost matrix")
    p.add_argument("--adj1", help="graph-1 adjacency matrix (default complete)")
    p.add_argument("--alpha1", type=float)
    p.add_argument("--alpha2", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--distance", choices=["wasserstein", "inner"])
    p.add_argument("--soft", help="write the stage-two soft assignment here")
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("match-e", help="match two point sets")
    p.add_argument("v1")
    p.add_argument("v2")
    p.add_argument("--unary", help="unary cost matrix (default shape context)")
    p.add_argument("--adjacency", help="complete, delaunay or knn:K")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--rotation-invariant", action="store_true", default=None)
    p.add_argument("--soft", help="write the stage-two soft assignment here")
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("match-d", help="deformable point-set matching")
    p.add_argument("v1")
    p.add_argument("v2")
    p.add_argument("--variant", choices=["similarity", "affine", "nonrigid"])
    p.add_argument("--rounds", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--sigma-w", type=float)
    p.add_argument("--adjacency", help="complete, delaunay or knn:K")
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("remove-outliers", help="iterative ratio-test outlier pruning")
    p.add_argument("v1")
    p.add_argument("v2")
    p.add_argument("--outlier-k", type=float)
    p.add_argument("--outlier-rounds", type=int)
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("bench", help="run a synthetic experiment grid")
    p.add_argument("preset", help="preset name or JSON/TOML grid file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--plot", help="write an SVG accuracy plot")
    p.add_argument("--no-timing", action="store_true", help="omit wall-time so the CSV is byte-stable")
    _add_common(p)

    p = sub.add_parser("lap", help="solve a linear assignment problem")
    p.add_argument("cost")
    p.add_argument("--maximize", action="store_true", default=None)
    _add_common(p)

    p = sub.add_parser("synth", help="write a synthetic instance")
    p.add_argument("outdir")
    p.add_argument("--n-in", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--n-out", type=int)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--verbose", action="store_true")
    return ap


def _load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
    except Exception as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_options(args) -> dict:
    """Merge defaults, config file and explicit flags (highest priority)."""
    opts = dict(DEFAULTS[args.command])
    if getattr(args, "config", None):
        cfg = _load_config_file(args.config)
        unknown = set(cfg) - set(opts)
        if unknown and args.command != "bench":
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        opts.update(cfg)
    for key in opts:
        flag = "lambda_" if key == "lambda" else key
        val = getattr(args, flag, None)
        if val is not None:
            opts[key] = val
    if getattr(args, "verbose", False):
        print(json.dumps(opts, sort_keys=True, default=str), file=sys.stderr)
    return opts


def _solver_kw(o) -> dict:
    if o["solver"] not in ("fw", "afw"):
        raise ConfigError(f"unknown solver {o['solver']!r}")
    if int(o["max_iter"]) < 1 or float(o["gap_tol"]) < 0 or float(o["eps0"]) <= 0:
        raise ConfigError("max_iter must be >= 1, gap_tol >= 0, eps0 > 0")
    kw = {"max_iter": int(o["max_iter"]), "gap_tol": float(o["gap_tol"])}
    if o["solver"] == "afw":
        kw["eps0"] = float(o["eps0"])
    return kw


def _adjacency(spec):
    if isinstance(spec, str) and spec.startswith("knn:"):
        try:
            k = int(spec[4:])
        except ValueError as exc:
            raise ConfigError(f"bad adjacency {spec!r}") from exc
        return {"knn": k}
    if spec not in ("complete", "delaunay") and not isinstance(spec, dict):
        raise ConfigError(f"bad adjacency {spec!r}")
    return spec


def _unit_interval(o, *keys):
    for k in keys:
        if not 0 <= float(o[k]) <= 1:
            raise ConfigError(f"{k} must lie in [0, 1]")


def _read(fn, path):
    try:
        return fn(path)
    except ParameterError as exc:
        raise InputError(str(exc)) from exc


def _emit(payload, out):
    text = io.dumps(payload) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _match_payload(res, soft_path=None):
    payload = {
        "assignment": [int(j) for j in res.assign],
        "objective_trace": list(res.stage1.objective_trace) + list(res.stage2.objective_trace),
        "soft": None,
    }
    if soft_path:
        io.write_matrix(soft_path, res.P2)
        payload["soft"] = str(soft_path)
    return payload


def cmd_match_g(args, o):
    from .general import GeneralProblem, match_general

    kw = _solver_kw(o)
    _unit_interval(o, "alpha1", "alpha2")
    if float(o["sigma"]) <= 0:
        raise ConfigError("sigma must be positive")
    if o["distance"] not in ("wasserstein", "inner"):
        raise ConfigError(f"unknown distance {o['distance']!r}")
    E1 = _read(io.read_matrix, args.e1)
    E2 = _read(io.read_matrix, args.e2)
    U = _read(io.read_matrix, args.unary) if args.unary else None
    A1 = _read(io.read_matrix, args.adj1) if args.adj1 else None
    try:
        prob = GeneralProblem.build(E1, E2, U, A1, float(o["alpha1"]), float(o["alpha2"]), float(o["sigma"]))
    except ParameterError as exc:
        raise InputError(str(exc)) from exc
    res = match_general(prob, solver=o["solver"], distance=o["distance"], **kw)
    _emit(_match_payload(res, args.soft), args.out)


def cmd_match_e(args, o):
    from .euclid import EuclideanProblem, make_adjacency, match_euclidean
    from .features import shape_context_cost

    kw = _solver_kw(o)
    _unit_interval(o, "lambda1", "lambda2")
    adj = _adjacency(o["adjacency"])
    V1 = _read(io.read_points, args.v1).points
    V2 = _read(io.read_points, args.v2).points
    try:
        if args.unary:
            U = _read(io.read_matrix, args.unary)
        else:
            U = shape_context_cost(V1, V2, rotation_invariant=bool(o["rotation_invariant"]))
        prob = EuclideanProblem(V1, V2, make_adjacency(V1, adj), U, float(o["lambda1"]), float(o["lambda2"]))
    except (ParameterError, DegenerateGeometryError) as exc:
        raise InputError(str(exc)) from exc
    res = match_euclidean(prob, solver=o["solver"], **kw)
    payload = _match_payload(res, args.soft)
    payload["binarity"] = res.diagnostics["binarity"]
    _emit(payload, args.out)


def cmd_match_d(args, o):
    from .deform import FITTERS, match_deformable

    kw = _solver_kw(o)
    if o["variant"] not in FITTERS:
        raise ConfigError(f"unknown variant {o['variant']!r}")
    if int(o["rounds"]) < 1 or float(o["lambda"]) < 0:
        raise ConfigError("rounds must be >= 1 and lambda >= 0")
    if o["sigma_w"] is not None and float(o["sigma_w"]) <= 0:
        raise ConfigError("sigma_w must be positive")
    adj = _adjacency(o["adjacency"])
    V1 = _read(io.read_points, args.v1).points
    V2 = _read(io.read_points, args.v2).points
    if len(V1) > len(V2) or V1.shape[1] != V2.shape[1]:
        raise InputError("V1 must not be larger than V2 and dimensions must agree")
    res = match_deformable(
        V1,
        V2,
        o["variant"],
        rounds=int(o["rounds"]),
        lam=float(o["lambda"]),
        sigma_w=None if o["sigma_w"] is None else float(o["sigma_w"]),
        adjacency=adj,
        solver=o["solver"],
        **kw,
    )
    payload = {
        "assignment": [int(j) for j in res.assign],
        "transform": res.transform.to_dict(),
        "error_trace": res.error_trace,
        "rounds": res.rounds,
    }
    _emit(payload, args.out)


def cmd_remove_outliers(args, o):
    from .outlier import default_matcher, iterative_removal

    kw = _solver_kw(o)
    if not float(o["outlier_k"]) > 1 or int(o["outlier_rounds"]) < 1:
        raise ConfigError("outlier_k must exceed 1 and outlier_rounds be >= 1")
    V1 = _read(io.read_points, args.v1).points
    V2 = _read(io.read_points, args.v2).points
    if len(V1) > len(V2):
        raise InputError("V1 must not be larger than V2")
    res = iterative_removal(
        V1,
        V2,
        k=float(o["outlier_k"]),
        rounds=int(o["outlier_rounds"]),
        matcher=lambda a, b: default_matcher(a, b, o["solver"], **kw),
    )
    payload = {
        "kept": [int(j) for j in res.kept],
        "assignment": [int(j) for j in res.assign],
        "kept_trace": res.kept_trace,
    }
    _emit(payload, args.out)


def cmd_bench(args, o):
    from . import bench

    try:
        cfg = bench.load_config(args.preset)
        if args.config:
            cfg = bench.validate_config({**cfg, **_load_config_file(args.config)})
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    workers = int(o["workers"])
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    if args.verbose:
        print(json.dumps(cfg, sort_keys=True), file=sys.stderr)
    result = bench.run_experiment(cfg, args.seed, workers)
    bench.write_csv(result.rows, args.out or sys.stdout, include_time=not args.no_timing)
    if args.plot:
        x = "noise" if len({r["noise"] for r in result.rows}) > 1 else "n_out"
        bench.plot_svg(result.rows, args.plot, x=x)
    for f in result.failures:
        log.warning("failed trial: %s", f)


def cmd_lap(args, o):
    from .lap import hungarian

    C = _read(io.read_matrix, args.cost)
    sign = -1.0 if o["maximize"] else 1.0
    if C.shape[0] > C.shape[1]:
        raise InputError("cost has more rows than columns")
    perm = hungarian(sign * C)
    _emit({"assignment": list(perm.assign), "objective": sign * perm.objective}, args.out)


def cmd_synth(args, o):
    from .bench import gen_synthetic

    if int(o["n_in"]) < 1 or float(o["noise"]) < 0 or int(o["n_out"]) < 0:
        raise ConfigError("n_in must be >= 1, noise and n_out nonnegative")
    inst = gen_synthetic(int(o["n_in"]), float(o["noise"]), int(o["n_out"]), args.seed)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_points(out / "V1.csv", inst.V1)
    io.write_points(out / "V2.csv", inst.V2)
    (out / "truth.json").write_text(io.dumps({"truth": inst.truth.tolist()}) + "\n", encoding="utf-8")


COMMANDS = {
    "match-g": cmd_match_g,
    "match-e": cmd_match_e,
    "match-d": cmd_match_d,
    "remove-outliers": cmd_remove_outliers,
    "bench": cmd_bench,
    "lap": cmd_lap,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    level = os.environ.get("FRGM_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        opts = resolve_options(args)
        COMMANDS[args.command](args, opts)
    except ConfigError as exc:
        print(f"frgm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, ParameterError, DegenerateGeometryError) as exc:
        print(f"frgm: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"frgm: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
