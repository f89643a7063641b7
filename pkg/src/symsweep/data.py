"""Data ingestion and synthetic dynamical-system generation.

CSV ingestion (last column is the target), chaotic ODE trajectory
simulation, relative Gaussian noise injection, and Savitzky-Golay smoothed
numerical differentiation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.signal import savgol_filter

from .expr import Expr, evaluate, parse

__all__ = [
    "Dataset",
    "OdeSystem",
    "Trajectory",
    "IntegrationError",
    "SYSTEMS",
    "ingest_csv",
    "simulate",
    "add_noise",
    "smoothed_derivative",
    "derivative_dataset",
]


class IntegrationError(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.6g}")
        self.time = time


_RHS_ENV = {
    "__builtins__": {},
    "sin": math.sin, "cos": math.cos, "exp": math.exp, "log": math.log,
    "sqrt": math.sqrt, "tanh": math.tanh, "cosh": math.cosh,
    "sinh": math.sinh, "abs": abs,
    "sign": lambda v: float(np.sign(v)),
    "neg": lambda v: -v, "inv": lambda v: 1.0 / v,
    "identity": lambda v: v,
    "pow2": lambda v: v * v, "pow3": lambda v: v * v * v,
}


@dataclass
class Dataset:
    """Named columns: X holds the independent variables, y the target."""

    names: list[str]
    X: np.ndarray
    y: np.ndarray
    note: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise ValueError("X must be (n, m) with len(y) == n")
        if len(self.names) != self.X.shape[1]:
            raise ValueError("one name per X column required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate variable names")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def columns(self) -> dict[str, np.ndarray]:
        return {name: self.X[:, i] for i, name in enumerate(self.names)}


def ingest_csv(path: str) -> Dataset:
    """Read a headed numeric CSV; the last column becomes y.

    Rejects duplicate header names and non-numeric cells (reported with
    their row numbers).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise ValueError(f"{path}: need at least two columns")
        if len(set(header)) != len(header):
            raise ValueError(f"{path}: duplicate column names in header")
        rows = []
        bad_rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad_rows.append(lineno)
                continue
            if len(rows[-1]) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(rows[-1])} "
                                 f"cells, expected {len(header)}")
    if bad_rows:
        raise ValueError(f"{path}: non-numeric cells in rows {bad_rows}")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    body = np.asarray(rows, dtype=np.float64)
    return Dataset(header[:-1], body[:, :-1], body[:, -1], note=f"csv:{path}")


# ---------------------------------------------------------------------------
# Chaotic systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OdeSystem:
    """Autonomous ODE with symbolic right-hand sides per state."""

    name: str
    states: tuple[str, ...]
    rhs: tuple[Expr, ...]
    params: dict[str, float]
    initial: tuple[float, ...]
    period: float  # nominal seconds per characteristic cycle (measured)

    def __post_init__(self):
        allowed = set(self.states) | set(self.params)
        for e in self.rhs:
            extra = e.variables - allowed
            if extra:
                raise ValueError(f"{self.name}: unknown symbols {sorted(extra)}")

    def rhs_fn(self):
        # compile to scalar python for speed; format_expr output is valid
        # python for the operators used here
        from .expr import format_expr
        bound = [format_expr(_bind_params(e, self.params)) for e in self.rhs]
        src = f"lambda {', '.join(self.states)}: [{', '.join(bound)}]"
        fn = eval(src, dict(_RHS_ENV))

        def rhs(t, state):
            return fn(*state)

        return rhs


def _bind_params(e: Expr, params: dict[str, float]) -> Expr:
    from .expr import Apply, Constant, Variable
    if isinstance(e, Variable):
        return Constant(params[e.name]) if e.name in params else e
    if isinstance(e, Apply):
        return Apply(e.op, *[_bind_params(a, params) for a in e.args])
    return e


def _system(name, states, rhs_texts, params, initial, period):
    return OdeSystem(name, tuple(states), tuple(parse(t) for t in rhs_texts),
                     params, tuple(initial), period)


# Parameter values follow the source tables; initial states and nominal
# periods are fixed documented values measured near each attractor.
SYSTEMS: dict[str, OdeSystem] = {
    s.name: s for s in (
        _system("ShimizuMorioka", "xyz",
                ["y", "x - a*y - x*z", "-b*z + x*x"],
                {"a": 0.85, "b": 0.5}, (0.1, 0.1, 0.1), 13.4),
        _system("GenesioTesi", "xyz",
                ["y", "z", "-c*x - b*y - a*z + x*x"],
                {"a": 0.44, "b": 1.1, "c": 1.0}, (0.1, 0.1, 0.1), 6.0),
        _system("Rucklidge", "xyz",
                ["-a*x + b*y - y*z", "x", "-z + y*y"],
                {"a": 2.0, "b": 6.7}, (1.0, 0.0, 4.5), 3.2),
        _system("SprottJerk", "xyz",
                ["y", "z", "-x + y*y - mu*z"],
                {"mu": 2.017}, (0.0, 0.5, 0.0), 11.9),
    )
}


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray  # (n_points, dim)
    dt: float
    names: tuple[str, ...] = field(default_factory=tuple)


_BLOWUP_NORM = 1e12


def simulate(system: OdeSystem, initial: Optional[Sequence[float]] = None,
             n_points: int = 1000, points_per_period: int = 100,
             transient_periods: float = 10.0,
             rtol: float = 1e-9, atol: float = 1e-12) -> Trajectory:
    """Integrate with adaptive RK45 and sample the dense output uniformly at
    points_per_period samples per nominal period, after discarding an
    initial transient.  Raises IntegrationError if the state norm passes
    1e12."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    x0 = list(initial if initial is not None else system.initial)
    dt = system.period / points_per_period
    t0 = transient_periods * system.period
    t1 = t0 + (n_points - 1) * dt

    def blowup(t, state):
        return float(np.linalg.norm(state) - _BLOWUP_NORM)

    blowup.terminal = True
    sol = solve_ivp(system.rhs_fn(), (0.0, t1), x0, method="RK45",
                    rtol=rtol, atol=atol, dense_output=True, events=blowup)
    if sol.t_events[0].size:
        raise IntegrationError("state norm exceeded 1e12", float(sol.t_events[0][0]))
    if not sol.success:
        raise IntegrationError(f"integration failed: {sol.message}", float(sol.t[-1]))
    t = t0 + dt * np.arange(n_points)
    states = sol.sol(t).T
    return Trajectory(t - t0, states, dt, system.states)


def add_noise(states: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Additive Gaussian noise, per column, sigma = level * column std."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    states = np.asarray(states, dtype=np.float64)
    if level == 0:
        return states.copy()
    rng = np.random.default_rng(seed)
    sigma = level * states.std(axis=0)
    return states + rng.normal(size=states.shape) * sigma


def smoothed_derivative(states: np.ndarray, dt: float,
                        window: int = 7, polyorder: int = 3) -> np.ndarray:
    """Savitzky-Golay smoothing differentiation, column-wise.

    Exact for polynomials up to the filter order; boundary samples use the
    one-sided polynomial fit over the edge window.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.shape[0] < window:
        raise ValueError(f"need at least {window} points")
    return savgol_filter(states, window_length=window, polyorder=polyorder,
                         deriv=1, delta=dt, axis=0, mode="interp")


def derivative_dataset(system: OdeSystem, component: int,
                       noise_level: float = 0.01, seed: int = 0,
                       n_points: int = 1000,
                       points_per_period: int = 100) -> Dataset:
    """Full pipeline: simulate -> add noise -> smoothed differentiation;
    the target is the chosen state derivative, X the noisy states."""
    traj = simulate(system, n_points=n_points,
                    points_per_period=points_per_period)
    noisy = add_noise(traj.states, noise_level, seed)
    deriv = smoothed_derivative(noisy, traj.dt)
    return Dataset(list(system.states), noisy, deriv[:, component],
                   note=f"{system.name}:d{system.states[component]}/dt "
                         f"noise={noise_level} seed={seed}")
