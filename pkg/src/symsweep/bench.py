"""Benchmark problem sets, dataset sampling, recovery checking and
recovery-rate reporting.

Problem definitions (expressions, sampling ranges, point counts) follow the
standard Nguyen / Nguyen-c / R / R* / Livermore / Feynman suites.  Recovery
means an expression on the final Pareto front is equivalent to the ground
truth (constants compared after a two-decimal trim); chaotic-dynamics style
problems allow an additive constant bias.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .expr import Apply, Constant, Expr, SUB, equivalent, evaluate, parse
from .search import ParetoFront, SearchConfig, run_search

__all__ = [
    "SamplingSpec",
    "BenchmarkProblem",
    "RecoveryReport",
    "PROBLEM_SETS",
    "load_problem_set",
    "sample_dataset",
    "check_recovery",
    "default_config",
    "run_benchmark",
]


@dataclass(frozen=True)
class SamplingSpec:
    kind: str  # "U" uniform | "E" equidistant
    low: float
    high: float
    count: int

    def __post_init__(self):
        if self.low >= self.high:
            raise ValueError("low must be < high")
        if self.count < 2:
            raise ValueError("count must be >= 2")
        if self.kind not in ("U", "E"):
            raise ValueError("kind must be 'U' or 'E'")


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    ground_truth: Expr
    variables: tuple[str, ...]
    sampling: tuple[SamplingSpec, ...]
    operator_set: str = "koza"
    allows_constants: bool = False
    recovery_mode: str = "exact"  # "exact" | "structure-with-bias"

    @property
    def domain(self) -> dict[str, tuple[float, float]]:
        return {v: (s.low, s.high)
                for v, s in zip(self.variables, self.sampling)}


def _p(name, text, spec, n_vars=1, operator_set="koza", allows_constants=False):
    specs = (spec,) * n_vars if isinstance(spec, SamplingSpec) else tuple(spec)
    variables = tuple(f"x{i + 1}" for i in range(n_vars))
    return BenchmarkProblem(name, parse(text), variables, specs,
                            operator_set, allows_constants)


def _U(lo, hi, n):
    return SamplingSpec("U", lo, hi, n)


def _E(lo, hi, n):
    return SamplingSpec("E", lo, hi, n)


_NGUYEN = [
    _p("Nguyen-1", "x1^3 + x1^2 + x1", _U(-1, 1, 20)),
    _p("Nguyen-2", "x1^4 + x1^3 + x1^2 + x1", _U(-1, 1, 20)),
    _p("Nguyen-3", "x1^5 + x1^4 + x1^3 + x1^2 + x1", _U(-1, 1, 20)),
    _p("Nguyen-4", "x1^6 + x1^5 + x1^4 + x1^3 + x1^2 + x1", _U(-1, 1, 20)),
    _p("Nguyen-5", "sin(x1^2)*cos(x1) - 1", _U(-1, 1, 20)),
    _p("Nguyen-6", "sin(x1) + sin(x1 + x1^2)", _U(-1, 1, 20)),
    _p("Nguyen-7", "log(x1 + 1) + log(x1^2 + 1)", _U(0, 2, 20)),
    _p("Nguyen-8", "sqrt(x1)", _U(0, 4, 20)),
    _p("Nguyen-9", "sin(x1) + sin(x2^2)", _U(0, 1, 20), 2),
    _p("Nguyen-10", "2*sin(x1)*cos(x2)", _U(0, 1, 20), 2),
    _p("Nguyen-11", "exp(x2*log(x1))", _U(0, 1, 20), 2),  # x1^x2
    _p("Nguyen-12", "x1^4 - x1^3 + 0.5*x2^2 - x2", _U(0, 1, 20), 2),
]

_NGUYEN_C = [
    _p("Nguyen-1c", "3.39*x1^3 + 2.12*x1^2 + 1.78*x1", _U(-1, 1, 20),
       allows_constants=True),
    _p("Nguyen-2c", "0.48*x1^4 + 3.39*x1^3 + 2.12*x1^2 + 1.78*x1",
       _U(-1, 1, 20), allows_constants=True),
    _p("Nguyen-5c", "sin(x1^2)*cos(x1) - 0.75", _U(0, 2, 20),
       allows_constants=True),
    _p("Nguyen-8c", "sqrt(1.23*x1)", _U(0, 4, 20), allows_constants=True),
    _p("Nguyen-9c", "sin(1.5*x1) + sin(0.5*x2^2)", _U(0, 1, 20), 2,
       allows_constants=True),
    _p("Nguyen-10c", "sin(1.5*x1)*cos(0.5*x2)", _U(0, 1, 20), 2,
       allows_constants=True),
]

_R = [
    _p("R-1", "(x1 + 1)^3 / (x1^2 - x1 + 1)", _E(-1, 1, 20)),
    _p("R-2", "(x1^5 - 3*x1^3 + 1) / (x1^2 + 1)", _E(-1, 1, 20)),
    _p("R-3", "(x1^6 + x1^5) / (x1^4 + x1^3 + x1^2 + x1 + 1)", _E(-1, 1, 20)),
]

_RSTAR = [
    _p("R*-1", "(x1 + 1)^3 / (x1^2 - x1 + 1)", _E(-10, 10, 20)),
    _p("R*-2", "(x1^5 - 3*x1^3 + 1) / (x1^2 + 1)", _E(-10, 10, 20)),
    _p("R*-3", "(x1^6 + x1^5) / (x1^4 + x1^3 + x1^2 + x1 + 1)", _E(-10, 10, 20)),
]

_LIVERMORE = [
    _p("Livermore-1", "1/3 + x1 + sin(x1^2)", _U(-10, 10, 1000),
       allows_constants=True),
    _p("Livermore-2", "sin(x1^2)*cos(x1) - 2", _U(-1, 1, 20)),
    _p("Livermore-3", "sin(x1^3)*cos(x1^2) - 1", _U(-1, 1, 20)),
    _p("Livermore-4", "log(x1 + 1) + log(x1^2 + 1) + log(x1)", _U(0, 2, 20)),
    _p("Livermore-5", "x1^4 - x1^3 + x1^2 - x2", _U(0, 1, 20), 2),
    _p("Livermore-6", "4*x1^4 + 3*x1^3 + 2*x1^2 + x1", _U(-1, 1, 20)),
    _p("Livermore-7", "sinh(x1)", _U(-1, 1, 20)),
    _p("Livermore-8", "cosh(x1)", _U(-1, 1, 20)),
    _p("Livermore-9",
       "x1^9 + x1^8 + x1^7 + x1^6 + x1^5 + x1^4 + x1^3 + x1^2 + x1",
       _U(-1, 1, 20)),
    _p("Livermore-10", "6*sin(x1)*cos(x2)", _U(0, 1, 20), 2),
    _p("Livermore-11", "x1^4 / (x1 + x2)", _U(-1, 1, 50), 2),
    _p("Livermore-12", "x1^5 / x2^3", _U(-1, 1, 50), 2),
    _p("Livermore-13", "exp(log(x1)/3)", _U(0, 4, 20)),  # x1^(1/3)
    _p("Livermore-14", "x1^3 + x1^2 + x1 + sin(x1) + sin(x1^2)", _U(-1, 1, 20)),
    _p("Livermore-15", "exp(log(x1)/5)", _U(0, 4, 20)),  # x1^(1/5)
    _p("Livermore-16", "exp(2*log(x1)/5)", _U(0, 4, 20)),  # x1^(2/5)
    _p("Livermore-17", "4*sin(x1)*cos(x2)", _U(0, 1, 20), 2),
    _p("Livermore-18", "sin(x1^2)*cos(x1) - 5", _U(-1, 1, 20)),
    _p("Livermore-19", "x1^5 + x1^4 + x1^2 + x1", _U(-1, 1, 20)),
    _p("Livermore-20", "exp(-x1^2)", _U(-1, 1, 20)),
    _p("Livermore-21",
       "x1^8 + x1^7 + x1^6 + x1^5 + x1^4 + x1^3 + x1^2 + x1", _U(-1, 1, 20)),
    _p("Livermore-22", "exp(-0.5*x1^2)", _U(-1, 1, 20), allows_constants=True),
]

_FEYNMAN = [
    _p("Feynman-1", "x1*x2", _U(1, 5, 20), 2, "semikoza"),
    _p("Feynman-2", "x1 / (2*(1 + x2))", _U(1, 5, 20), 2, "semikoza", True),
    _p("Feynman-3", "x1*x2^2", _U(1, 5, 20), 2, "semikoza"),
    _p("Feynman-4", "1 + x1*x2 / (1 - x1*x2/3)", _U(0, 1, 20), 2, "semikoza", True),
    _p("Feynman-5", "x1/x2", _U(1, 5, 20), 2, "semikoza"),
    _p("Feynman-6", "0.5*x1*x2^2", _U(1, 5, 20), 2, "semikoza", True),
    _p("Feynman-7", "1.5*x1*x2", _U(1, 5, 20), 2, "semikoza", True),
    _p("Feynman-8", "x1 / (exp(x4*x5/(x2*x3)) + exp(-x4*x5/(x2*x3)))",
       _U(1, 3, 50), 5, "semikoza"),
    _p("Feynman-9", "x1*x2*x3*log(x5/x4)", _U(1, 5, 50), 5, "semikoza"),
    _p("Feynman-10", "x1*(x3 - x2)*x4/x5", _U(1, 5, 50), 5, "semikoza"),
    _p("Feynman-11", "x1*x2 / (x5*(x3^2 - x4^2))", _U(1, 3, 50), 5, "semikoza"),
    _p("Feynman-12", "x1*x2^2*x3 / (3*x4*x5)", _U(1, 5, 50), 5, "semikoza", True),
    _p("Feynman-13", "x1*(exp(x2*x3/(x4*x5)) - 1)", _U(1, 5, 50), 5, "semikoza"),
    _p("Feynman-14", "x5*x1*x2*(1/x4 - 1/x3)", _U(1, 5, 50), 5, "semikoza"),
    _p("Feynman-15", "x1*(x2 + x3*x4*sin(x5))", _U(1, 5, 50), 5, "semikoza"),
]

PROBLEM_SETS: dict[str, list[BenchmarkProblem]] = {
    "Nguyen": _NGUYEN,
    "Nguyen-c": _NGUYEN_C,
    "R": _R,
    "Rstar": _RSTAR,
    "Livermore": _LIVERMORE,
    "Feynman": _FEYNMAN,
}


def load_problem_set(name: str) -> list[BenchmarkProblem]:
    try:
        return list(PROBLEM_SETS[name])
    except KeyError:
        raise ValueError(
            f"unknown problem set {name!r}; known: {sorted(PROBLEM_SETS)}") from None


def find_problem(name: str) -> BenchmarkProblem:
    for problems in PROBLEM_SETS.values():
        for p in problems:
            if p.name == name:
                return p
    raise ValueError(f"unknown problem {name!r}")


def dynamics_problem(system, component: int, dataset: Dataset,
                     operator_set: str = "koza") -> BenchmarkProblem:
    """Structure-with-bias recovery target for one state derivative of an
    ODE system; the equivalence domain comes from the observed data."""
    from .data import _bind_params
    truth = _bind_params(system.rhs[component], system.params)
    specs = tuple(
        SamplingSpec("U", float(dataset.X[:, i].min()),
                     float(dataset.X[:, i].max()), max(2, dataset.n))
        for i in range(dataset.m))
    return BenchmarkProblem(
        name=f"{system.name}-d{system.states[component]}",
        ground_truth=truth, variables=tuple(dataset.names),
        sampling=specs, operator_set=operator_set,
        allows_constants=True, recovery_mode="structure-with-bias")


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_dataset(problem: BenchmarkProblem, seed: int) -> Dataset:
    """Draw the problem's dataset: uniform specs resample rows with a
    non-finite target, equidistant specs drop them."""
    rng = np.random.default_rng(seed)
    n = problem.sampling[0].count
    if any(s.count != n for s in problem.sampling):
        raise ValueError("per-variable counts must agree")
    if all(s.kind == "E" for s in problem.sampling):
        X = np.column_stack([np.linspace(s.low, s.high, s.count)
                             for s in problem.sampling])
        y = evaluate(problem.ground_truth,
                     {v: X[:, i] for i, v in enumerate(problem.variables)})
        keep = np.isfinite(y)
        return Dataset(list(problem.variables), X[keep], y[keep],
                       note=problem.name)
    rows_X: list[np.ndarray] = []
    rows_y: list[float] = []
    attempts = 0
    while len(rows_y) < n:
        attempts += 1
        if attempts > 1000 * n:
            raise RuntimeError(f"{problem.name}: cannot sample finite rows")
        x = np.array([rng.uniform(s.low, s.high) for s in problem.sampling])
        y = evaluate(problem.ground_truth,
                     {v: np.array([x[i]]) for i, v in enumerate(problem.variables)})[0]
        if math.isfinite(y):
            rows_X.append(x)
            rows_y.append(float(y))
    return Dataset(list(problem.variables), np.array(rows_X),
                   np.array(rows_y), note=problem.name)


# ---------------------------------------------------------------------------
# Recovery checking
# ---------------------------------------------------------------------------

def check_recovery(front: ParetoFront | Sequence, problem: BenchmarkProblem) -> bool:
    """True when some front entry matches the ground truth: exact mode uses
    equivalence with a two-decimal constant trim; structure-with-bias mode
    first removes the fitted scalar offset mean(e - truth)."""
    truth = problem.ground_truth
    domain = problem.domain
    entries = list(front)
    for entry in entries:
        e = entry.expr if hasattr(entry, "expr") else entry
        if problem.recovery_mode == "exact":
            if equivalent(e, truth, domain):
                return True
            continue
        bias = _fitted_bias(e, truth, domain)
        if bias is None:
            continue
        shifted = Apply(SUB, e, Constant(bias)) if bias != 0.0 else e
        if equivalent(shifted, truth, domain):
            return True
    return False


def _fitted_bias(e: Expr, truth: Expr,
                 domain: dict[str, tuple[float, float]]) -> Optional[float]:
    from .expr import halton_points
    names = sorted(set(e.variables) | set(truth.variables))
    if not names:
        return 0.0
    try:
        bounds = [domain[v] for v in names]
    except KeyError:
        return None
    pts = halton_points(64, bounds)
    cols = {v: pts[:, i] for i, v in enumerate(names)}
    va = evaluate(e, cols)
    vb = evaluate(truth, cols)
    fin = np.isfinite(va) & np.isfinite(vb)
    if fin.sum() < 32:
        return None
    return float(np.mean(va[fin] - vb[fin]))


# ---------------------------------------------------------------------------
# Desk-scale default configuration
# ---------------------------------------------------------------------------

def default_config(problem: BenchmarkProblem, seed: int = 0,
                   t_max: float = 120.0, **overrides) -> SearchConfig:
    """Per-problem search configuration sized for CPU execution: deep narrow
    networks when the variable count allows, wide two-layer networks
    otherwise."""
    m = len(problem.variables)
    n_const = 1 if problem.allows_constants else 0
    n_slots = m + n_const + 1
    n_layers = 3
    if n_slots > 5:
        n_layers = 2
        n_slots = max(n_slots, 7)
    cfg = SearchConfig(
        operator_set=problem.operator_set,
        n_slots=n_slots,
        n_layers=n_layers,
        t_max=t_max,
        seed=seed,
        use_constants=problem.allows_constants,
        n_const_slots=1,
        stall_iters=10 ** 9,
        exact_mse_eps=1e-16,
        threads=None,
    )
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# Recovery-rate reporting
# ---------------------------------------------------------------------------

def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    phat = successes / trials
    denom = 1 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials
                         + z * z / (4 * trials * trials)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class RecoveryReport:
    set_name: str
    trials: int
    rows: list[dict]

    @property
    def aggregate_rate(self) -> float:
        total = sum(r["trials"] for r in self.rows)
        hits = sum(r["successes"] for r in self.rows)
        return hits / total if total else 0.0

    @property
    def aggregate_interval(self) -> tuple[float, float]:
        total = sum(r["trials"] for r in self.rows)
        hits = sum(r["successes"] for r in self.rows)
        return wilson_interval(hits, total)

    def to_json(self) -> dict:
        lo, hi = self.aggregate_interval
        return {
            "set": self.set_name,
            "trials_per_problem": self.trials,
            "rows": self.rows,
            "aggregate_rate": self.aggregate_rate,
            "aggregate_interval_95": [lo, hi],
        }

    def to_csv(self) -> str:
        lines = ["problem,trials,successes,rate,mean_seconds"]
        for r in self.rows:
            lines.append(f"{r['problem']},{r['trials']},{r['successes']},"
                         f"{r['rate']:.4f},{r['mean_seconds']:.3f}")
        return "\n".join(lines) + "\n"


def run_benchmark(set_name: str, trials: int,
                  config: Optional[SearchConfig] = None,
                  t_max: float = 120.0,
                  problems: Optional[Sequence[BenchmarkProblem]] = None,
                  base_seed: int = 0,
                  verbose: bool = False) -> RecoveryReport:
    """Run run_search on every problem for `trials` seeds and aggregate
    recovery rates and mean wall time."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if problems is None:
        problems = load_problem_set(set_name)
    rows = []
    for problem in problems:
        successes = 0
        seconds = []
        for trial in range(trials):
            seed = base_seed + trial
            if config is None:
                cfg = default_config(problem, seed=seed, t_max=t_max)
            else:
                cfg = replace(config, seed=seed)
            dataset = sample_dataset(problem, seed)
            t0 = time.perf_counter()
            result = run_search(dataset, cfg)
            dt = time.perf_counter() - t0
            ok = check_recovery(result.front, problem)
            successes += ok
            seconds.append(dt)
            if verbose:
                print(f"  {problem.name} seed={seed}: "
                      f"{'recovered' if ok else 'missed'} in {dt:.1f}s")
        lo, hi = wilson_interval(successes, trials)
        rows.append({
            "problem": problem.name,
            "trials": trials,
            "successes": successes,
            "rate": successes / trials,
            "interval_95": [lo, hi],
            "mean_seconds": float(np.mean(seconds)),
            "median_seconds": float(np.median(seconds)),
        })
    return RecoveryReport(set_name, trials, rows)
