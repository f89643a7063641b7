"""Command-line entry points: fit a CSV dataset, run recovery benchmarks,
race the engine against naive per-expression evaluation, and estimate
memory footprints.

Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import fields as dataclass_fields
from typing import Optional

import numpy as np

from . import engine
from .bench import default_config, load_problem_set, run_benchmark
from .data import ingest_csv
from .expr import OPERATOR_SETS, Variable, canonicalize, evaluate, format_expr
from .search import SearchConfig, run_search

_CONFIG_KEYS = {f.name for f in dataclass_fields(SearchConfig)}


class UsageError(ValueError):
    pass


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ops", default=None,
                        help=f"operator set ({'|'.join(sorted(OPERATOR_SETS))})")
    parser.add_argument("--slots", type=int, default=None)
    parser.add_argument("--layers", type=int, default=None)
    parser.add_argument("--topk", type=int, default=None)
    parser.add_argument("--tmax", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--const-range", default=None, metavar="LO,HI")
    parser.add_argument("--generator", choices=["gp", "mcts", "random"],
                        default=None)
    parser.add_argument("--downsample", type=int, default=None)
    parser.add_argument("--drmask", choices=["on", "off"], default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--precision", choices=["f32", "f64"], default=None)
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--out", default=".", help="output directory")


_FLAG_TO_KEY = {
    "ops": "operator_set",
    "slots": "n_slots",
    "layers": "n_layers",
    "topk": "top_k",
    "tmax": "t_max",
    "seed": "seed",
    "generator": "generator",
    "downsample": "down_sample",
    "threads": "threads",
    "precision": "precision",
}


def _build_config(args: argparse.Namespace,
                  base: Optional[SearchConfig] = None) -> SearchConfig:
    """Defaults < config file < explicit flags."""
    values = {f.name: getattr(base or SearchConfig(), f.name)
              for f in dataclass_fields(SearchConfig)}
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read config file: {err}") from None
        unknown = set(file_cfg) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_cfg)
    for flag, key in _FLAG_TO_KEY.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if args.const_range is not None:
        try:
            lo, hi = (float(p) for p in args.const_range.split(","))
        except ValueError:
            raise UsageError("--const-range requires LO,HI") from None
        values["const_range"] = (lo, hi)
        values["use_constants"] = True
    if args.drmask is not None:
        values["use_drmask"] = args.drmask == "on"
    values["const_range"] = tuple(values["const_range"])
    try:
        return SearchConfig(**values)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from None


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args: argparse.Namespace) -> int:
    dataset = ingest_csv(args.csv)
    cfg = _build_config(args)
    result = run_search(dataset, cfg)
    payload = result.report
    out_path = os.path.join(args.out, "front.json")
    _write_json(out_path, payload)
    print(f"# {dataset.note}: n={dataset.n} m={dataset.m} "
          f"iterations={payload['iterations']} stop={payload['stop_reason']}")
    print(f"{'complexity':>10s} {'mse':>12s} {'reward':>8s}  expression")
    for row in sorted(payload["front"], key=lambda r: r["complexity"]):
        mse = row["mse"]
        mse_s = f"{mse:.4e}" if mse is not None else "inf"
        print(f"{row['complexity']:>10d} {mse_s:>12s} "
              f"{row['reward']:>8.4f}  {row['expr']}")
    print(f"wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args: argparse.Namespace) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    load_problem_set(args.problem_set)  # validate name early
    config = None
    if any(getattr(args, f) is not None for f in _FLAG_TO_KEY) \
            or args.config or args.const_range or args.drmask:
        config = _build_config(args)
    report = run_benchmark(args.problem_set, args.trials, config=config,
                           t_max=args.tmax if args.tmax else 120.0,
                           base_seed=args.seed or 0, verbose=args.verbose)
    json_path = os.path.join(args.out, "report.json")
    csv_path = os.path.join(args.out, "report.csv")
    _write_json(json_path, report.to_json())
    os.makedirs(args.out, exist_ok=True)
    with open(csv_path, "w") as fh:
        fh.write(report.to_csv())
    print(f"{'problem':<16s} {'trials':>6s} {'hits':>5s} {'rate':>6s} {'mean_s':>8s}")
    for row in report.rows:
        print(f"{row['problem']:<16s} {row['trials']:>6d} {row['successes']:>5d} "
              f"{row['rate']:>6.2f} {row['mean_seconds']:>8.1f}")
    lo, hi = report.aggregate_interval
    print(f"aggregate rate {report.aggregate_rate:.3f} "
          f"(95% CI {lo:.3f}..{hi:.3f})")
    print(f"wrote {json_path} and {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# enumerate
# ---------------------------------------------------------------------------

def _naive_best(ops, slots, n_layers, data, y):
    """Per-expression tree-walk evaluation over the full candidate set."""
    best = (math.inf, -1, None)
    count = 0
    n = len(y)
    for i, e in enumerate(engine.iter_expressions(ops, slots, n_layers)):
        count += 1
        pred = evaluate(e, data, n=n)
        d = pred - y
        mse = float(d @ d / n)
        if not math.isfinite(mse):
            mse = math.inf
        if mse < best[0]:
            best = (mse, i, e)
    return best, count


def cmd_enumerate(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    ops = cfg.resolved_operator_set()
    n_slots, n_layers = cfg.n_slots, cfg.n_layers
    width = engine.enumerated_width(ops, n_slots, n_layers)
    rng = np.random.default_rng(cfg.seed)
    n = args.samples
    slot_values = rng.uniform(0.4, 1.6, size=(n, n_slots))
    slots = [Variable(f"s{i}") for i in range(n_slots)]
    data = {f"s{i}": slot_values[:, i] for i in range(n_slots)}
    # synthetic target: a mid-depth tree over the slots plus mild noise
    target = rng.uniform(-1, 1, n) + np.sin(slot_values[:, 0] * 2.0)

    t0 = time.perf_counter()
    if args.mode == "engine":
        net = engine.build_network(ops, n_slots, n_layers,
                                   precision=cfg.precision,
                                   block_cols=cfg.block_cols)
        out = engine.forward(net, slot_values, target, k=1,
                             slot_bindings=slots, threads=cfg.threads)
        elapsed = time.perf_counter() - t0
        top = out.entries[0]
        best_expr = format_expr(canonicalize(top.expr))
        best_mse = top.mse
        count = width
    else:
        if width > 10 ** 7:
            raise UsageError(f"naive mode guard: {width} expressions > 1e7")
        (best_mse, _, best_e), count = _naive_best(ops, slots, n_layers,
                                                   data, target)
        elapsed = time.perf_counter() - t0
        best_expr = format_expr(canonicalize(best_e))
    payload = {
        "mode": args.mode,
        "operator_set": ops.name,
        "n_slots": n_slots,
        "n_layers": n_layers,
        "n_samples": n,
        "seed": cfg.seed,
        "candidates": count,
        "wall_seconds": elapsed,
        "evaluations_per_second": count / elapsed if elapsed > 0 else None,
        "top1_mse": best_mse if math.isfinite(best_mse) else None,
        "top1_expr": best_expr,
    }
    _write_json(os.path.join(args.out, f"enumerate-{args.mode}.json"), payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# estimate-mem
# ---------------------------------------------------------------------------

def cmd_estimate_mem(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    ops = cfg.resolved_operator_set()
    est = engine.estimate_memory(ops, cfg.n_slots, cfg.n_layers,
                                 args.samples, cfg.precision,
                                 block_cols=cfg.block_cols)
    payload = {
        "operator_set": ops.name,
        "n_slots": cfg.n_slots,
        "n_layers": cfg.n_layers,
        "n_samples": args.samples,
        "precision": cfg.precision,
        "per_layer_widths": est["per_layer_widths"],
        "full_bytes": est["full_bytes"],
        "peak_layer_bytes": est["peak_layer_bytes"],
        "streamed_bytes": est["streamed_bytes"],
    }
    _write_json(os.path.join(args.out, "estimate-mem.json"), payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symsweep",
        description="Equation discovery by exhaustive shared-subtree "
                    "evaluation of expression trees.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="discover equations for a CSV dataset")
    p_fit.add_argument("csv", help="CSV path; last column is the target")
    _add_common(p_fit)

    p_bench = sub.add_parser("bench", help="run a recovery benchmark set")
    p_bench.add_argument("problem_set", help="Nguyen|Nguyen-c|R|Rstar|Livermore|Feynman")
    p_bench.add_argument("--trials", type=int, default=10)
    p_bench.add_argument("--verbose", action="store_true")
    _add_common(p_bench)

    p_enum = sub.add_parser(
        "enumerate", help="time exhaustive evaluation (engine vs naive)")
    p_enum.add_argument("--mode", choices=["engine", "naive"], default="engine")
    p_enum.add_argument("--samples", type=int, default=100)
    _add_common(p_enum)

    p_mem = sub.add_parser("estimate-mem", help="memory footprint estimate")
    p_mem.add_argument("--samples", type=int, default=100)
    _add_common(p_mem)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "fit": cmd_fit,
        "bench": cmd_bench,
        "enumerate": cmd_enumerate,
        "estimate-mem": cmd_estimate_mem,
    }
    try:
        return handlers[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
