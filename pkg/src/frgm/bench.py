"""Synthetic instance generators, accuracy metrics, QAP identity checks and a
grid experiment runner."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ParameterError, Permutation, _points, pairwise_distances
from .io import FLOAT_FMT

log = logging.getLogger(__name__)

DISPLACEMENT_GUARD = 3.0
_MAX_REDRAWS = 100
QAP_SIZE_LIMIT = 400
EDGE_AFFINITY_WIDTH = 0.15


def _rng(seed):
    return np.random.default_rng(seed)


@dataclass
class Instance:
    V1: np.ndarray
    V2: np.ndarray
    truth: np.ndarray
    meta: dict = field(default_factory=dict)


def gen_synthetic(n_in: int, noise_sigma: float, n_out: int = 0, seed=None) -> Instance:
    """Standard-normal inliers, a noisy shuffled copy and standard-normal
    outliers.  ``truth[i]`` is the row of ``V2`` holding inlier ``i``."""
    if n_in < 1:
        raise ParameterError("n_in must be at least 1")
    if n_out < 0 or noise_sigma < 0:
        raise ParameterError("n_out and noise_sigma must be nonnegative")
    rng = _rng(seed)
    V1 = rng.standard_normal((n_in, 2))
    inl = V1 + noise_sigma * rng.standard_normal((n_in, 2))
    pool = np.vstack([inl, rng.standard_normal((n_out, 2))])
    order = rng.permutation(n_in + n_out)
    V2 = np.empty_like(pool)
    V2[order] = pool
    meta = {"n_in": n_in, "noise": noise_sigma, "n_out": n_out}
    return Instance(V1, V2, order[:n_in].copy(), meta)


# templates are deliberately free of rotational symmetry so a rotation sweep
# has a unique answer


def template_circle(n: int = 100) -> np.ndarray:
    th = 2 * np.pi * np.arange(n) / n
    th = th + 0.3 * np.pi / n * np.sin(5 * th)
    r = 1.0 + 0.12 * np.sin(3 * th) + 0.06 * np.cos(th)
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


def template_grid(n: int = 100) -> np.ndarray:
    k = int(math.ceil(math.sqrt(n)))
    g = np.linspace(-1.0, 1.0, k)
    X, Y = np.meshgrid(g, g)
    P = np.column_stack([X.ravel(), Y.ravel()])[:n]
    # taper and bend into a trapezoid with a curved edge
    P[:, 0] *= 1.0 + 0.3 * P[:, 1]
    P[:, 1] += 0.15 * P[:, 0] ** 2
    return P


def template_two_moons(n: int = 100) -> np.ndarray:
    a = n // 2
    b = n - a
    t1 = np.linspace(0, np.pi, a)
    t2 = np.linspace(0, np.pi, b)
    upper = np.column_stack([np.cos(t1), np.sin(t1)])
    lower = np.column_stack([0.9 - 0.7 * np.cos(t2), 0.25 - 0.7 * np.sin(t2)])
    return np.vstack([upper, lower])


TEMPLATES = {"circle": template_circle, "grid": template_grid, "two-moons": template_two_moons}


def load_template(name_or_path, n: int = 100) -> np.ndarray:
    """Built-in template by name, or a point CSV/JSON file."""
    if name_or_path in TEMPLATES:
        return TEMPLATES[name_or_path](n)
    from .io import read_points

    return read_points(name_or_path).points


def _rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    # row vectors: (1, 0) @ R = (c, s)
    return np.array([[c, s], [-s, c]])


def _diameter(X):
    return float(pairwise_distances(X).max()) if len(X) > 1 else 0.0


def gen_deformed(
    template,
    variant: str = "similarity",
    params: Optional[dict] = None,
    noise_sigma: float = 0.0,
    outlier_ratio: float = 0.0,
    missing_ratio: float = 0.0,
    seed=None,
    outlier_std: float = 0.25,
) -> Instance:
    """Deform a template into ``V2``.

    ``params`` per variant: similarity ``{angle, scale, t}``; affine
    ``{A, t}``; nonrigid ``{sigma, sigma_w}`` with RBF weights drawn from
    ``N(0, sigma^2)``.  Noise and outliers (``outlier_std`` about the deformed
    centroid) are added to ``V2``, which is then shuffled; a
    ``missing_ratio`` fraction of ``V1`` is dropped.  Nonrigid draws whose
    mean displacement exceeds three template diameters are redrawn.
    """
    from .deform import default_sigma_w, gaussian_rbf_kernel

    T = _points(template)
    m, d = T.shape
    params = dict(params or {})
    if not (0 <= missing_ratio < 1) or outlier_ratio < 0 or noise_sigma < 0:
        raise ParameterError("invalid noise/outlier/missing ratios")
    rng = _rng(seed)
    if variant == "similarity":
        s = float(params.get("scale", 1.0))
        if s <= 0:
            raise ParameterError("scale must be positive")
        R = _rotation(float(params.get("angle", 0.0))) if d == 2 else np.eye(d)
        Y = s * T @ R + np.asarray(params.get("t", np.zeros(d)), dtype=float)
    elif variant == "affine":
        A = np.asarray(params.get("A", np.eye(d)), dtype=float)
        if abs(np.linalg.det(A)) <= 1e-12:
            raise ParameterError("A must be invertible")
        Y = T @ A + np.asarray(params.get("t", np.zeros(d)), dtype=float)
    elif variant == "nonrigid":
        sig = float(params.get("sigma", 0.0))
        sw = float(params.get("sigma_w", default_sigma_w(T)))
        K = gaussian_rbf_kernel(T, sw)
        guard = DISPLACEMENT_GUARD * _diameter(T)
        for _ in range(_MAX_REDRAWS):
            W = sig * rng.standard_normal((m, d))
            disp = K @ W
            if float(np.linalg.norm(disp, axis=1).mean()) <= guard:
                break
        else:
            raise ParameterError("could not draw an acceptable nonrigid warp")
        Y = T + disp
    else:
        raise ParameterError(f"unknown variant {variant!r}")

    Y = Y + noise_sigma * rng.standard_normal(Y.shape)
    n_out = int(round(outlier_ratio * m))
    out = Y.mean(axis=0) + outlier_std * rng.standard_normal((n_out, d))
    pool = np.vstack([Y, out])
    order = rng.permutation(pool.shape[0])
    V2 = np.empty_like(pool)
    V2[order] = pool
    n_keep = m - int(round(missing_ratio * m))
    keep = np.sort(rng.choice(m, size=n_keep, replace=False)) if n_keep < m else np.arange(m)
    meta = {"variant": variant, "params": params, "noise": noise_sigma, "n_out": n_out}
    return Instance(T[keep].copy(), V2, order[keep].copy(), meta)


def accuracy(result, truth, n_truth: Optional[int] = None) -> float:
    """Fraction of ground-truth pairs matched exactly."""
    assign = np.asarray(result.assign if isinstance(result, Permutation) else result, dtype=int)
    truth = np.asarray(truth, dtype=int)
    n = truth.size if n_truth is None else n_truth
    if n == 0:
        return 1.0
    return float(np.count_nonzero(assign[: truth.size] == truth) / n)


def mean_error(points_a, points_b) -> float:
    A = np.asarray(points_a, dtype=float)
    B = np.asarray(points_b, dtype=float)
    if A.shape != B.shape:
        raise ParameterError("point counts differ")
    if A.shape[0] == 0:
        return 0.0
    return float(np.linalg.norm(A - B, axis=1).mean())


# --- QAP cross-check -------------------------------------------------------


def identity_baseline_error(V1, V2, truth) -> float:
    """Correspondence error of matching without any transform: Hungarian on
    raw distances, then mean distance of assigned to true nodes in ``V2``."""
    from .lap import hungarian

    X1, X2 = _points(V1), _points(V2)
    assign = list(hungarian(pairwise_distances(X1, X2)).assign)
    return mean_error(X2[assign], X2[np.asarray(truth, dtype=int)])


def lawler_affinity(V1, V2, F1=None, F2=None) -> np.ndarray:
    """Affinity matrix over row-major vec(P): node affinity on the diagonal
    ``exp(-|f1_i - f2_j|)`` and edge affinity
    ``exp(-(|V1_i - V1_k| - |V2_j - V2_l|)^2 / 0.15)`` off it."""
    X1, X2 = _points(V1), _points(V2)
    m, n = len(X1), len(X2)
    if m * n > QAP_SIZE_LIMIT:
        raise ParameterError(f"affinity matrix guard: m*n = {m * n} > {QAP_SIZE_LIMIT}")
    L1, L2 = pairwise_distances(X1), pairwise_distances(X2)
    diff = L1[:, None, :, None] - L2[None, :, None, :]
    K = np.exp(-(diff**2) / EDGE_AFFINITY_WIDTH)
    # a pair of assignments sharing a node carries no edge affinity
    shared = np.eye(m, dtype=bool)[:, None, :, None] | np.eye(n, dtype=bool)[None, :, None, :]
    K = np.where(shared, 0.0, K).reshape(m * n, m * n)
    F1 = X1 if F1 is None else np.asarray(F1, dtype=float)
    F2 = X2 if F2 is None else np.asarray(F2, dtype=float)
    K[np.diag_indices(m * n)] = np.exp(-pairwise_distances(F1, F2)).ravel()
    return K


def qap_cross_check(E1, E2, P, U=None, lam: float = 1.0, tol: float = 1e-10) -> dict:
    """Check the classical QAP identities at a permutation matrix ``P``.

    (i) ``vec(P)ᵀ (E1 ⊗ E2) vec(P) = tr(E1ᵀ P E2 Pᵀ)`` (row-major vec), which
    is ``tr(E1 P E2 Pᵀ)`` for symmetric ``E1``.
    (ii) ``<P, U> + lam/2 |E1 - P E2 Pᵀ|^2`` equals
    ``-(-<U, P> + lam tr(E1 P E2 Pᵀ)) + lam/2 (|E1|^2 + |E2|^2)``, the
    trace form plus a P-independent constant, for square orthogonal ``P``.
    """
    E1 = np.asarray(E1, dtype=float)
    E2 = np.asarray(E2, dtype=float)
    P = np.asarray(P, dtype=float)
    m, n = P.shape
    if m * n > QAP_SIZE_LIMIT:
        raise ParameterError(f"affinity matrix guard: m*n = {m * n} > {QAP_SIZE_LIMIT}")
    U = np.zeros((m, n)) if U is None else np.asarray(U, dtype=float)
    p = P.ravel()
    K = np.kron(E1, E2)
    lhs = float(p @ K @ p)
    rhs = float(np.trace(E1.T @ P @ E2 @ P.T))
    report = {"kron_lhs": lhs, "kron_rhs": rhs, "kron_err": abs(lhs - rhs)}
    if m == n:
        direct = float((P * U).sum()) + 0.5 * lam * float(((E1 - P @ E2 @ P.T) ** 2).sum())
        const = 0.5 * lam * (float((E1**2).sum()) + float((E2**2).sum()))
        trace_form = -(-float((U * P).sum()) + lam * rhs) + const
        report.update(koopmans=direct, trace_form=trace_form, const=const, conv_err=abs(direct - trace_form))
    scale = max(1.0, abs(lhs))
    report["ok"] = report["kron_err"] <= tol * scale and report.get("conv_err", 0.0) <= tol * max(
        1.0, abs(report.get("koopmans", 0.0))
    )
    return report


# --- experiments -----------------------------------------------------------

PRESETS = {
    "noise-sweep": {
        "matcher": "frgm-e",
        "n_in": [20],
        "noise": [round(0.05 * k, 2) for k in range(11)],
        "n_out": [0],
        "n_seeds": 20,
    },
    "outlier-sweep": {
        "matcher": "frgm-e",
        "n_in": [20],
        "noise": [0.0],
        "n_out": list(range(0, 21, 2)),
        "n_seeds": 20,
    },
    "large-scale": {
        "matcher": "frgm-e",
        "n_in": [100, 300, 500],
        "noise": [0.02, 0.04, 0.06, 0.08, 0.10],
        "n_out": [0],
        "n_seeds": 20,
    },
    "large-scale-outlier": {
        "matcher": "frgm-e",
        "n_in": [100, 300, 500],
        "noise": [0.0],
        "outlier_ratio": [0.2, 0.4, 0.6, 0.8, 1.0],
        "n_seeds": 20,
    },
}

CSV_COLUMNS = ["matcher", "n_in", "noise", "n_out", "mean_acc", "std_acc", "mean_err", "mean_time_s", "n_seeds", "n_failed"]


def load_config(spec) -> dict:
    """Preset name, dict, or JSON/TOML file path."""
    if isinstance(spec, dict):
        cfg = dict(spec)
    elif spec in PRESETS:
        cfg = dict(PRESETS[spec])
    else:
        path = Path(spec)
        if not path.is_file():
            raise ParameterError(f"unknown preset or missing config file {spec!r}")
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                cfg = tomllib.load(fh)
        else:
            with open(path, encoding="utf-8") as fh:
                cfg = json.load(fh)
    return validate_config(cfg)


def validate_config(cfg) -> dict:
    cfg = dict(cfg)
    cfg.setdefault("matcher", "frgm-e")
    cfg.setdefault("solver", "fw")
    cfg.setdefault("noise", [0.0])
    cfg.setdefault("n_seeds", 1)
    cfg.setdefault("workers", 1)
    cfg.setdefault("outlier_removal", False)
    if cfg["matcher"] not in MATCHERS:
        raise ParameterError(f"unknown matcher {cfg['matcher']!r}")
    if "n_in" not in cfg:
        raise ParameterError("config needs n_in")
    for key in ("n_in", "noise", "n_out", "outlier_ratio"):
        if key in cfg and not isinstance(cfg[key], (list, tuple)):
            cfg[key] = [cfg[key]]
    if "n_out" in cfg and "outlier_ratio" in cfg:
        raise ParameterError("give n_out or outlier_ratio, not both")
    if "n_out" not in cfg and "outlier_ratio" not in cfg:
        cfg["n_out"] = [0]
    if int(cfg["n_seeds"]) < 1 or int(cfg["workers"]) < 1:
        raise ParameterError("n_seeds and workers must be positive")
    if any(int(v) < 1 for v in cfg["n_in"]) or any(float(v) < 0 for v in cfg["noise"]):
        raise ParameterError("n_in must be positive and noise nonnegative")
    return cfg


def cells(cfg) -> list:
    out = []
    outs = cfg.get("n_out")
    for n_in, noise in itertools.product(cfg["n_in"], cfg["noise"]):
        if outs is not None:
            counts = [int(k) for k in outs]
        else:
            counts = [int(round(r * n_in)) for r in cfg["outlier_ratio"]]
        for k in counts:
            out.append((int(n_in), float(noise), k))
    return sorted(set(out))


def _match_e(inst, solver, removal):
    from .outlier import default_matcher, iterative_removal

    if removal:
        return iterative_removal(inst.V1, inst.V2, matcher=lambda a, b: default_matcher(a, b, solver))
    return default_matcher(inst.V1, inst.V2, solver)


def _match_g(inst, solver, removal):
    from .features import shape_context_cost
    from .general import GeneralProblem, match_general

    if removal:
        raise ParameterError("outlier removal is only wired for the Euclidean matcher")
    U = shape_context_cost(inst.V1, inst.V2)
    prob = GeneralProblem.build(pairwise_distances(inst.V1), pairwise_distances(inst.V2), U)
    return match_general(prob, solver=solver)


MATCHERS = {"frgm-e": _match_e, "frgm-g": _match_g}


def trial_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    """Seed for trial ``index``; identical across cells so cells are paired."""
    return np.random.SeedSequence([int(base_seed), int(index)])


def run_trial(matcher: str, solver: str, removal: bool, cell, seed) -> dict:
    n_in, noise, n_out = cell
    inst = gen_synthetic(n_in, noise, n_out, seed)
    t0 = time.perf_counter()
    res = MATCHERS[matcher](inst, solver, removal)
    elapsed = time.perf_counter() - t0
    assign = np.asarray(res.assign)
    return {
        "acc": accuracy(assign, inst.truth),
        "err": mean_error(inst.V2[assign], inst.V2[inst.truth]),
        "time": elapsed,
    }


def _run_job(job):
    matcher, solver, removal, cell, base, idx = job
    try:
        return cell, idx, run_trial(matcher, solver, removal, cell, trial_seed(base, idx)), None
    except Exception as exc:  # failures are recorded per trial, not fatal
        return cell, idx, None, f"{type(exc).__name__}: {exc}"


@dataclass
class ExperimentResult:
    rows: list
    failures: list

    def accuracy_columns(self):
        return [(r["n_in"], r["noise"], r["n_out"], r["mean_acc"]) for r in self.rows]


def run_experiment(config, seed: int, workers: Optional[int] = None) -> ExperimentResult:
    """Run every (cell, seed) trial and aggregate per cell, sorted by cell."""
    cfg = load_config(config)
    workers = int(workers or cfg["workers"])
    jobs = [
        (cfg["matcher"], cfg["solver"], bool(cfg["outlier_removal"]), cell, seed, i)
        for cell in cells(cfg)
        for i in range(int(cfg["n_seeds"]))
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_job, jobs, chunksize=1))
    else:
        results = [_run_job(j) for j in jobs]
    per_cell: dict = {}
    failures = []
    for cell, idx, rec, err in sorted(results, key=lambda r: (r[0], r[1])):
        per_cell.setdefault(cell, [])
        if err is not None:
            failures.append({"cell": cell, "seed_index": idx, "error": err})
            log.warning("trial %s/%d failed: %s", cell, idx, err)
            continue
        per_cell[cell].append(rec)
    rows = []
    for cell in sorted(per_cell):
        recs = per_cell[cell]
        accs = np.array([r["acc"] for r in recs])
        n_failed = int(cfg["n_seeds"]) - len(recs)
        rows.append(
            {
                "matcher": cfg["matcher"],
                "n_in": cell[0],
                "noise": cell[1],
                "n_out": cell[2],
                "mean_acc": float(accs.mean()) if recs else float("nan"),
                "std_acc": float(accs.std()) if recs else float("nan"),
                "mean_err": float(np.mean([r["err"] for r in recs])) if recs else float("nan"),
                "mean_time_s": float(np.mean([r["time"] for r in recs])) if recs else float("nan"),
                "n_seeds": len(recs),
                "n_failed": n_failed,
            }
        )
    return ExperimentResult(rows, failures)


def _fmt(v):
    if isinstance(v, float):
        return FLOAT_FMT % v
    return str(v)


def write_csv(rows: Sequence[dict], path, include_time: bool = True) -> None:
    """Write one row per cell; ``path`` may also be an open text stream."""
    cols = [c for c in CSV_COLUMNS if include_time or c != "mean_time_s"]

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])

    if hasattr(path, "write"):
        emit(path)
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            emit(fh)


def plot_svg(rows: Sequence[dict], path, x: str = "noise") -> bool:
    """Accuracy-vs-``x`` line plot, one line per ``n_in``.  Returns False when
    matplotlib is unavailable."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping plot")
        return False
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for n_in in sorted({r["n_in"] for r in rows}):
        pts = sorted((r[x], r["mean_acc"]) for r in rows if r["n_in"] == n_in)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"n_in={n_in}")
    ax.set_xlabel(x)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return True
