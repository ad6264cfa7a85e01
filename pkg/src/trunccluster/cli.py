"""Command-line front end: ``generate``, ``run`` and ``bench``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import sem

from .core import InvalidArgument
from .datagen import BIRCH_SPACING, BirchSpec, generate_birch, load_matrix, standardize, write_matrix
from .runner import (
    SCHEMA_VERSION,
    Algorithm,
    RunConfig,
    iterations_to_parity,
    mean_evals_per_iteration,
    run,
    summary,
    theoretical_speedup,
)

ALGORITHMS = {
    "gmm": Algorithm.GMM_FULL,
    "kmeans": Algorithm.KMEANS_FULL,
    "var-gmm-x": Algorithm.VAR_GMM_X,
    "var-gmm-s": Algorithm.VAR_GMM_S,
    "var-kmeans-x": Algorithm.VAR_KMEANS_X,
    "var-kmeans-s": Algorithm.VAR_KMEANS_S,
}
SUITES = ("birch-scaling",)
THREADS_ENV = "TRUNCCLUSTER_THREADS"
LARGE_C = 256


class UsageError(Exception):
    pass


def default_initial_esteps(n_clusters: int) -> int:
    """Initial E-only iterations used when none are requested explicitly."""
    return 5 if n_clusters >= LARGE_C else 0


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _clean(obj):
    """Replace non-finite floats by None so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _mean_sem(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "sem": None}
    return {"mean": float(v.mean()), "sem": float(sem(v)) if v.size > 1 else None}


# -- parser -------------------------------------------------------------------

def _add_exec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=int, default=200,
                   help="cap on EM iterations, initial E-steps excluded (default: 200)")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="relative quantization-error change counted as converged (default: 1e-6)")
    p.add_argument("--init-esteps", type=int, default=None,
                   help=f"E-only iterations before the first M-step "
                        f"(default: 5 if C >= {LARGE_C}, else 0)")
    p.add_argument("--deterministic", action="store_true",
                   help="serial reductions and zeroed wall times for byte-identical output")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trunccluster",
        description="Truncated variational EM for isotropic GMMs and k-means.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a BIRCH-style grid data set",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    g.add_argument("--birch-side", type=int, default=5, help="grid side, C = side^2")
    g.add_argument("--samples", type=int, default=100, help="points per cluster")
    g.add_argument("--sigma", type=float, default=1.0, help="per-dimension cluster variance")
    g.add_argument("--spacing", type=float, default=BIRCH_SPACING, help="grid spacing")
    g.add_argument("--seed", type=int, default=0, help="generator seed")
    g.add_argument("--out", required=True, help="CSV path; centers go to <stem>.centers.json")

    r = sub.add_parser("run", help="train one model and write its trace and summary")
    r.add_argument("--algorithm", required=True, choices=sorted(ALGORITHMS))
    r.add_argument("--input", required=True, help="data file")
    r.add_argument("--format", choices=("csv", "whitespace"), default="csv",
                   help="input format (default: csv)")
    r.add_argument("--clusters", type=int, required=True, help="number of clusters C")
    r.add_argument("--g", type=int, default=None,
                   help="neighborhood size G (required for var-* algorithms)")
    r.add_argument("--cprime", type=int, default=None,
                   help="truncation size C' (default: G for var-gmm, 1 for var-kmeans)")
    r.add_argument("--explore", action="store_true",
                   help="add one random cluster to every search space")
    r.add_argument("--seed", type=int, default=0, help="run seed (default: 0)")
    r.add_argument("--with-loglik", action="store_true",
                   help="also record the full log-likelihood (separately counted)")
    r.add_argument("--standardize", action="store_true", help="z-score every input dimension")
    r.add_argument("--parity-target", type=float, default=None,
                   help="report the first iteration whose quantization error is <= this value")
    r.add_argument("--out-prefix", required=True,
                   help="writes PREFIX.trace.jsonl and PREFIX.summary.json")
    _add_exec_flags(r)

    b = sub.add_parser("bench", help="baseline k-means versus variants over BIRCH grid sizes")
    b.add_argument("--suite", required=True, choices=SUITES)
    b.add_argument("--sides", default="8,16", help="comma-separated grid sides (default: 8,16)")
    b.add_argument("--seeds", type=int, default=5, help="run seeds per size (default: 5)")
    b.add_argument("--samples", type=int, default=100, help="points per cluster (default: 100)")
    b.add_argument("--data-seed", type=int, default=0, help="data generator seed (default: 0)")
    b.add_argument("--variants", default="var-kmeans-s:5+1",
                   help="comma-separated ALGO:G or ALGO:G+1 (+1 enables exploration) "
                        "(default: var-kmeans-s:5+1)")
    b.add_argument("--out", required=True, help="output directory for report.json")
    _add_exec_flags(b)
    return parser


# -- shared helpers -------------------------------------------------------------

def _threads(args) -> int:
    t = args.threads if args.threads is not None else _default_threads()
    if t < 1:
        raise UsageError("--threads must be >= 1")
    return t


def _config(algorithm: Algorithm, n_clusters: int, args, *, g=None, c_prime=None,
            explore=False, seed=0, with_loglik=False) -> RunConfig:
    init = args.init_esteps if args.init_esteps is not None else default_initial_esteps(n_clusters)
    try:
        return RunConfig(algorithm, n_clusters, g=g, c_prime=c_prime, explore=explore,
                         initial_esteps=init, max_iters=args.max_iters, tol=args.tol, seed=seed,
                         with_loglik=with_loglik, deterministic=args.deterministic,
                         threads=_threads(args))
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from exc


@dataclass(frozen=True)
class Variant:
    algorithm: Algorithm
    g: int
    explore: bool

    @property
    def label(self) -> str:
        name = next(k for k, v in ALGORITHMS.items() if v is self.algorithm)
        return f"{name}:{self.g}{'+1' if self.explore else ''}"


def parse_variants(text: str) -> list[Variant]:
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, _, g = item.partition(":")
        if name not in ALGORITHMS or not ALGORITHMS[name].variational:
            raise UsageError(f"unknown variational algorithm {name!r} in --variants")
        explore = g.endswith("+1")
        g = g[:-2] if explore else g
        if not g.isdigit():
            raise UsageError(f"variant {item!r} needs the form ALGO:G or ALGO:G+1")
        out.append(Variant(ALGORITHMS[name], int(g), explore))
    if not out:
        raise UsageError("--variants is empty")
    return out


def parse_sides(text: str) -> list[int]:
    try:
        sides = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--sides must be comma-separated integers, got {text!r}") from exc
    if not sides or min(sides) < 1:
        raise UsageError("--sides needs at least one positive grid side")
    return sides


# -- commands -------------------------------------------------------------------

def cmd_generate(args) -> int:
    try:
        spec = BirchSpec(grid_side=args.birch_side, samples_per_cluster=args.samples,
                         cluster_sigma_sq=args.sigma, spacing=args.spacing, rng_seed=args.seed)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from exc
    data, centers = generate_birch(spec)
    out = Path(args.out)
    write_matrix(out, data.points)
    _write_json(out.with_suffix(".centers.json"),
                {"schema": SCHEMA_VERSION, "spec": spec.to_dict(), "centers": centers.tolist()})
    print(f"wrote {data.n_points} x {data.dims} points to {out}")
    return 0


def cmd_run(args) -> int:
    algorithm = ALGORITHMS[args.algorithm]
    config = _config(algorithm, args.clusters, args, g=args.g, c_prime=args.cprime,
                     explore=args.explore, seed=args.seed, with_loglik=args.with_loglik)
    data = load_matrix(args.input, args.format)
    if args.standardize:
        data = standardize(data)
    if config.n_clusters > data.n_points:
        raise UsageError(f"--clusters {config.n_clusters} exceeds the {data.n_points} input points")
    params, _, trace = run(config, data)
    report = summary(config, params, trace, parity_target=args.parity_target)
    prefix = args.out_prefix
    Path(f"{prefix}.trace.jsonl").write_text(trace.to_jsonl())
    _write_json(Path(f"{prefix}.summary.json"), report)
    print(f"{algorithm.value}: {len(trace) - 1} iterations, "
          f"quantization error {trace.final_quantization_error:.6g}")
    return 0


def _per_seed_parity(trace, target: float):
    hits = np.nonzero(trace.quantization_errors <= target)[0]
    return int(hits[0]) if hits.size else None


def bench_size(side: int, args, variants: list[Variant]) -> dict:
    spec = BirchSpec(grid_side=side, samples_per_cluster=args.samples, rng_seed=args.data_seed)
    data, _ = generate_birch(spec)
    c = spec.n_clusters
    seeds = range(args.seeds)
    base_cfgs = [_config(Algorithm.KMEANS_FULL, c, args, seed=s) for s in seeds]
    base = [run(cfg, data)[2] for cfg in base_cfgs]
    target = float(np.mean([t.final_quantization_error for t in base]))
    base_evals = float(np.mean([mean_evals_per_iteration(t) for t in base]))
    entry = {
        "grid_side": side,
        "n_clusters": c,
        "n_points": data.n_points,
        "baseline": {
            "algorithm": Algorithm.KMEANS_FULL.value,
            "initial_esteps": base_cfgs[0].initial_esteps,
            "final_quantization_error": _mean_sem([t.final_quantization_error for t in base]),
            "iterations": _mean_sem([len(t) - 1 for t in base]),
            "converged": [t.converged for t in base],
        },
        "variants": [],
    }
    for v in variants:
        cfgs = [_config(v.algorithm, c, args, g=v.g, explore=v.explore, seed=s) for s in seeds]
        traces = [run(cfg, data)[2] for cfg in cfgs]
        parity = iterations_to_parity(traces, base)
        per_seed = [_per_seed_parity(t, target) for t in traces]
        reached = [p for p in per_seed if p is not None]
        measured = [base_evals / mean_evals_per_iteration(t) for t in traces]
        entry["variants"].append({
            "label": v.label,
            "algorithm": v.algorithm.value,
            "g": cfgs[0].g,
            "c_prime": cfgs[0].c_prime,
            "explore": v.explore,
            "initial_esteps": cfgs[0].initial_esteps,
            "final_quantization_error": _mean_sem([t.final_quantization_error for t in traces]),
            "iterations_to_parity": parity,
            "parity_reached": parity is not None,
            "per_seed_parity": per_seed,
            "per_seed_parity_stats": _mean_sem(reached) if len(reached) == len(per_seed)
            else {"mean": None, "sem": None},
            "speedup": {
                "theoretical_min": theoretical_speedup(c, cfgs[0].c_prime, cfgs[0].g, v.explore),
                "measured": _mean_sem(measured),
            },
        })
    return entry


def cmd_bench(args) -> int:
    sides = parse_sides(args.sides)
    variants = parse_variants(args.variants)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    for side in sides:
        for v in variants:
            _config(v.algorithm, side * side, args, g=v.g, explore=v.explore)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "schema": SCHEMA_VERSION,
        "suite": args.suite,
        "settings": {
            "sides": sides, "seeds": args.seeds, "samples": args.samples,
            "data_seed": args.data_seed, "max_iters": args.max_iters, "tol": args.tol,
            "variants": [v.label for v in variants],
        },
        "sizes": [],
    }
    for side in sides:
        entry = bench_size(side, args, variants)
        report["sizes"].append(entry)
        for v in entry["variants"]:
            print(f"C={entry['n_clusters']} {v['label']}: parity "
                  f"{v['iterations_to_parity'] if v['parity_reached'] else 'not reached'}")
    _write_json(out / "report.json", report)
    return 0


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except InvalidArgument as exc:
        print(f"trunccluster: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 1
        print(f"trunccluster: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
