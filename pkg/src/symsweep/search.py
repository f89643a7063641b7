"""Outer search loop: token generators propose base expressions for the
engine's input slots, the engine scores every tree over them, constants are
refined by damped least squares, and a Pareto front of non-dominated
(MSE, complexity) expressions accumulates until budget or convergence.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .data import Dataset
from .engine import build_network, forward
from .expr import (
    Apply, Constant, Expr, OperatorSet, Variable, ADD, MUL,
    OPERATOR_SETS, canonicalize, constant_valued, evaluate, format_expr,
)

__all__ = [
    "SearchConfig",
    "TokenBatch",
    "ParetoEntry",
    "ParetoFront",
    "SearchResult",
    "reward",
    "downsample",
    "fit_constants",
    "update_front",
    "RandomGenerator",
    "GpGenerator",
    "MctsGenerator",
    "make_generator",
    "run_search",
]


# ---------------------------------------------------------------------------
# Reward and small helpers
# ---------------------------------------------------------------------------

def reward(mse: float, alpha: int, eta: float = 0.99) -> float:
    """r = eta^alpha / (1 + sqrt(MSE)); 0 for non-finite MSE."""
    if mse is None or not math.isfinite(mse):
        return 0.0
    if mse < 0:
        raise ValueError("mse must be nonnegative")
    return eta ** alpha / (1.0 + math.sqrt(mse))


def downsample(dataset: Dataset, threshold: int,
               rng: np.random.Generator) -> Dataset:
    """Uniform subsample without replacement when n exceeds threshold."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    if dataset.n <= threshold:
        return dataset
    idx = np.sort(rng.choice(dataset.n, size=threshold, replace=False))
    return Dataset(list(dataset.names), dataset.X[idx], dataset.y[idx],
                   note=dataset.note)


def mse_of(expr: Expr, dataset: Dataset) -> float:
    pred = evaluate(expr, dataset.columns(), n=dataset.n)
    if not np.isfinite(pred).all():
        return math.inf
    d = pred - dataset.y
    return float(d @ d / dataset.n)


# ---------------------------------------------------------------------------
# Constant fitting
# ---------------------------------------------------------------------------

def _collect_constants(e: Expr, out: list[float]) -> None:
    if isinstance(e, Constant):
        out.append(e.value)
    elif isinstance(e, Apply):
        for a in e.args:
            _collect_constants(a, out)


def _substitute_constants(e: Expr, values, pos=None) -> Expr:
    if pos is None:
        pos = [0]
    if isinstance(e, Constant):
        v = values[pos[0]]
        pos[0] += 1
        return Constant(v)
    if isinstance(e, Apply):
        return Apply(e.op, *[_substitute_constants(a, values, pos) for a in e.args])
    return e


def fit_constants(expr: Expr, dataset: Dataset,
                  max_iter: int = 100, ftol: float = 1e-12) -> Expr:
    """Refine the tree's constants by damped Gauss-Newton least squares
    (finite-difference Jacobian), starting from their current values.

    The refit is kept only when the full-data MSE strictly improves;
    otherwise (including optimizer failure) the input is returned.
    """
    theta0: list[float] = []
    _collect_constants(expr, theta0)
    p = len(theta0)
    if p == 0 or p >= dataset.n or p > 12:
        return expr
    cols = dataset.columns()
    y = dataset.y

    def residuals(theta):
        candidate = _substitute_constants(expr, list(theta))
        r = evaluate(candidate, cols, n=dataset.n) - y
        return np.nan_to_num(r, nan=1e6, posinf=1e6, neginf=-1e6)

    try:
        sol = least_squares(residuals, np.asarray(theta0, dtype=np.float64),
                            method="lm", ftol=ftol,
                            max_nfev=max_iter * (p + 1))
        theta = sol.x
        if float(sol.cost) * 2 / dataset.n < 1e-8:
            # near-exact structure: polish to machine precision so exact
            # fits are separable from close approximants
            eps = float(np.finfo(np.float64).eps)
            sol2 = least_squares(residuals, theta, method="lm", ftol=eps,
                                 xtol=eps, gtol=eps, max_nfev=40 * (p + 1))
            if sol2.cost <= sol.cost:
                theta = sol2.x
    except Exception:
        return expr
    fitted = _substitute_constants(expr, [float(v) for v in theta])
    if mse_of(fitted, dataset) < mse_of(expr, dataset):
        return fitted
    return expr


# ---------------------------------------------------------------------------
# Pareto front
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParetoEntry:
    expr: Expr
    complexity: int
    mse: float
    reward: float

    def dominates(self, other: "ParetoEntry") -> bool:
        a, b = _finite(self.mse), _finite(other.mse)
        return (a <= b and self.complexity <= other.complexity
                and (a < b or self.complexity < other.complexity))


def _finite(v: float) -> float:
    return v if math.isfinite(v) else math.inf


class ParetoFront:
    """Non-dominated (MSE, complexity) set, unique by canonical key."""

    def __init__(self):
        self.entries: list[ParetoEntry] = []

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def max_reward(self) -> float:
        return max((e.reward for e in self.entries), default=0.0)

    def update(self, candidates: Sequence[ParetoEntry]) -> bool:
        """Insert candidates, drop dominated entries and key-duplicates
        (lower MSE wins).  Returns True if the front changed."""
        by_key: dict[str, ParetoEntry] = {}
        for e in self.entries:
            by_key[e.expr.key] = e
        changed = False
        for c in candidates:
            key = c.expr.key
            held = by_key.get(key)
            if held is None or _finite(c.mse) < _finite(held.mse):
                by_key[key] = c
                changed = changed or held is None or c.mse != held.mse
        pool = list(by_key.values())
        keep = [e for e in pool
                if not any(o is not e and o.dominates(e) for o in pool)]
        keep.sort(key=lambda e: (e.complexity, _finite(e.mse), e.expr.key))
        # collapse coincidental exact (complexity, mse) ties
        deduped: list[ParetoEntry] = []
        for e in keep:
            if deduped and (deduped[-1].complexity, deduped[-1].mse) == (e.complexity, e.mse):
                continue
            deduped.append(e)
        if [e.expr.key for e in deduped] != [e.expr.key for e in self.entries]:
            changed = True
        self.entries = deduped
        return changed


def update_front(front: ParetoFront, candidates: Sequence[ParetoEntry]) -> ParetoFront:
    front.update(candidates)
    return front


def make_entry(expr: Expr, dataset: Dataset, eta: float) -> ParetoEntry:
    mse = mse_of(expr, dataset)
    alpha = expr.complexity
    return ParetoEntry(expr, alpha, mse, reward(mse, alpha, eta))


# ---------------------------------------------------------------------------
# Token batches and generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenBatch:
    slot_exprs: tuple[Expr, ...]
    constants: tuple[float, ...] = ()

    def __post_init__(self):
        if not any(isinstance(e, Variable) for e in self.slot_exprs):
            raise ValueError("at least one variable slot required")


def _token_ops(ops: OperatorSet):
    unary = [o for o in ops.unary if o.name != "identity"]
    binary = list(ops.binary_squared) + list(ops.binary_triangled)
    return unary, binary


def _random_tree(rng: np.random.Generator, variables: Sequence[str],
                 unary, binary, depth: int, p_const: float,
                 const_sampler) -> Expr:
    if depth <= 0 or rng.random() < 0.3:
        if p_const > 0 and rng.random() < p_const:
            return Constant(const_sampler())
        return Variable(variables[int(rng.integers(len(variables)))])
    arms = len(unary) + len(binary)
    pick = int(rng.integers(arms))
    if pick < len(unary):
        return Apply(unary[pick],
                     _random_tree(rng, variables, unary, binary, depth - 1,
                                  p_const, const_sampler))
    op = binary[pick - len(unary)]
    return Apply(op,
                 _random_tree(rng, variables, unary, binary, depth - 1,
                              p_const, const_sampler),
                 _random_tree(rng, variables, unary, binary, depth - 1,
                              p_const, const_sampler))


def _height(e: Expr) -> int:
    if isinstance(e, Apply):
        return 1 + max(_height(a) for a in e.args)
    return 0


def _grid_const(rng: np.random.Generator, lo: float, hi: float,
                step: float = 0.1) -> float:
    # sample on the token-constant grid, endpoints included
    k = int(round((hi - lo) / step))
    return round(lo + step * int(rng.integers(k + 1)), 10)


class _GeneratorBase:
    def __init__(self, config: "SearchConfig", dataset: Dataset,
                 rng: np.random.Generator):
        self.config = config
        self.dataset = dataset
        self.rng = rng
        self.variables = list(dataset.names)
        ops = config.resolved_operator_set()
        self.unary, self.binary = _token_ops(ops)
        self.best: Optional[Expr] = None
        self._depth1_pool = self._build_depth1_pool()
        self._rotation: list[int] = []

    def _build_depth1_pool(self) -> list[Expr]:
        # single-operator tokens over the variables plus small variable
        # powers; constant-valued results (x-x, x/x) are dropped since
        # slots of constants carry no signal
        pool: list[Expr] = []
        seen: set[str] = set()
        vs = [Variable(v) for v in self.variables]
        for op in self.unary:
            for v in vs:
                pool.append(Apply(op, v))
        for op in self.binary:
            for i, a in enumerate(vs):
                for b in vs[i:] if op.commutative else vs:
                    pool.append(Apply(op, a, b))
        mul = next((o for o in self.binary if o.name == "mul"), None)
        if mul is not None:
            for v in vs:
                power = Apply(mul, v, v)
                for _ in range(4):
                    pool.append(power)
                    power = Apply(mul, power, v)
        out = []
        for e in pool:
            k = e.key
            if k not in seen and not constant_valued(e):
                seen.add(k)
                out.append(e)
        return out

    def _rotate_tokens(self, count: int) -> list[Expr]:
        """Cycle through the depth-1 token pool in seeded random order so
        every shallow subtree regularly reaches the input slots."""
        out = []
        for _ in range(min(count, len(self._depth1_pool))):
            if not self._rotation:
                self._rotation = list(self.rng.permutation(len(self._depth1_pool)))
            out.append(self._depth1_pool[self._rotation.pop()])
        return out

    # slots: variables first, then constants, then composite tokens
    def _variable_slots(self) -> list[Expr]:
        m = len(self.variables)
        budget = self.config.n_slots - 1
        if m <= budget:
            return [Variable(v) for v in self.variables]
        picked = self.rng.choice(m, size=budget, replace=False)
        return [Variable(self.variables[i]) for i in sorted(picked)]

    def _constant_slots(self, remaining: int) -> tuple[list[Expr], list[float]]:
        if not self.config.use_constants or remaining <= 0:
            return [], []
        lo, hi = self.config.const_range
        count = min(self.config.n_const_slots, remaining)
        values = [_grid_const(self.rng, lo, hi, self.config.const_grid)
                  for _ in range(count)]
        return [Constant(v) for v in values], values

    def _const_sampler(self):
        lo, hi = self.config.const_range
        return lambda: _grid_const(self.rng, lo, hi, self.config.const_grid)

    def _fill(self, slots: list[Expr], tokens: Sequence[Expr]) -> list[Expr]:
        seen = {s.key for s in slots}
        for t in tokens:
            if len(slots) == self.config.n_slots:
                break
            if t.key not in seen:
                seen.add(t.key)
                slots.append(t)
        while len(slots) < self.config.n_slots:
            t = _random_tree(self.rng, self.variables, self.unary, self.binary,
                             depth=3, p_const=self._p_const(), const_sampler=self._const_sampler())
            if t.key not in seen:
                seen.add(t.key)
                slots.append(t)
        return slots

    def _p_const(self) -> float:
        # token trees always carry a few ephemeral constants; slot constants
        # are separately gated by use_constants
        return 0.2 if self.config.use_constants else 0.1

    def feedback(self, best_reward: float, front: ParetoFront) -> None:
        pass


class RandomGenerator(_GeneratorBase):
    """Uniform random token trees of height <= 3."""

    def next(self) -> TokenBatch:
        slots = self._variable_slots()
        consts, values = self._constant_slots(self.config.n_slots - len(slots))
        slots += consts
        slots = self._fill(slots, self._rotate_tokens(self.config.n_rotate))
        return TokenBatch(tuple(slots), tuple(values))


class GpGenerator(_GeneratorBase):
    """Genetic-programming token generator.

    A small population evolves against the data (tournament selection,
    subtree crossover/mutation, height cap); hall-of-fame members fill the
    composite token slots.  feedback() injects Pareto-front expressions
    into the population so engine discoveries seed later generations.
    """

    def __init__(self, config, dataset, rng):
        super().__init__(config, dataset, rng)
        self.fit_data = downsample(dataset, config.down_sample, rng)
        self._cols = self.fit_data.columns()
        self.population: list[Expr] = [
            _random_tree(rng, self.variables, self.unary, self.binary,
                         depth=int(rng.integers(2, 5)), p_const=self._p_const(),
                         const_sampler=self._const_sampler())
            for _ in range(config.pop_size)]
        self.fitness: list[float] = [self._fitness(e) for e in self.population]
        self.hof: list[tuple[float, Expr]] = []
        self._update_hof()

    def _fitness(self, e: Expr) -> float:
        pred = evaluate(e, self._cols, n=self.fit_data.n)
        if not np.isfinite(pred).all():
            return 0.0
        with np.errstate(all="ignore"):
            d = pred - self.fit_data.y
            mse = float(d @ d / self.fit_data.n)
        if not math.isfinite(mse):
            return 0.0
        return self.config.token_discount ** e.complexity / (1.0 + math.sqrt(mse))

    def _update_hof(self):
        pool = {e.key: (f, e) for f, e in self.hof}
        for e, f in zip(self.population, self.fitness):
            held = pool.get(e.key)
            if held is None or f > held[0]:
                pool[e.key] = (f, e)
        ranked = sorted(pool.values(), key=lambda t: (-t[0], t[1].key))
        self.hof = ranked[:self.config.hof_size]
        if self.hof:
            self.best = self.hof[0][1]

    @property
    def hof_min_fitness(self) -> float:
        return min((f for f, _ in self.hof), default=0.0)

    def _tournament(self) -> Expr:
        size = min(self.config.tournament, len(self.population))
        idx = self.rng.integers(len(self.population), size=size)
        best = max(idx, key=lambda i: self.fitness[i])
        return self.population[best]

    def _crossover(self, a: Expr, b: Expr) -> Expr:
        child = _swap_random_subtree(a, b, self.rng)
        return child if _height(child) <= self.config.max_height else a

    def _mutate(self, e: Expr) -> Expr:
        repl = _random_tree(self.rng, self.variables, self.unary, self.binary,
                            depth=2, p_const=self._p_const(),
                            const_sampler=self._const_sampler())
        child = _replace_random_subtree(e, repl, self.rng)
        return child if _height(child) <= self.config.max_height else e

    def _one_generation(self):
        cfg = self.config
        new_pop: list[Expr] = []
        if self.hof:
            new_pop.append(self.hof[0][1])  # elitism
        while len(new_pop) < cfg.pop_size:
            parent = self._tournament()
            if self.rng.random() < cfg.crossover_p:
                parent = self._crossover(parent, self._tournament())
            if self.rng.random() < cfg.mutation_p:
                parent = self._mutate(parent)
            new_pop.append(parent)
        self.population = new_pop
        self.fitness = [self._fitness(e) for e in self.population]
        self._update_hof()

    def next(self) -> TokenBatch:
        self._one_generation()
        slots = self._variable_slots()
        consts, values = self._constant_slots(self.config.n_slots - len(slots))
        slots += consts
        tokens: list[Expr] = self._rotate_tokens(self.config.n_rotate)
        if self.hof:
            tokens.append(self.hof[0][1])
            order = self.rng.permutation(len(self.hof))
            tokens.extend(self.hof[i][1] for i in order)
        slots = self._fill(slots, tokens)
        return TokenBatch(tuple(slots), tuple(values))

    def feedback(self, best_reward: float, front: ParetoFront) -> None:
        injected = [e.expr for e in list(front)[:4]
                    if _height(e.expr) <= self.config.max_height]
        if not injected:
            return
        order = np.argsort(self.fitness)
        for slot, e in zip(order, injected):
            self.population[int(slot)] = e
            self.fitness[int(slot)] = self._fitness(e)
        self._update_hof()


def _subtrees(e: Expr, path=()) -> list[tuple]:
    out = [(path, e)]
    if isinstance(e, Apply):
        for i, a in enumerate(e.args):
            out.extend(_subtrees(a, path + (i,)))
    return out


def _graft(e: Expr, path: tuple, repl: Expr) -> Expr:
    if not path:
        return repl
    assert isinstance(e, Apply)
    args = list(e.args)
    args[path[0]] = _graft(args[path[0]], path[1:], repl)
    return Apply(e.op, *args)


def _swap_random_subtree(a: Expr, b: Expr, rng: np.random.Generator) -> Expr:
    spots_a = _subtrees(a)
    spots_b = _subtrees(b)
    pa = spots_a[int(rng.integers(len(spots_a)))][0]
    donor = spots_b[int(rng.integers(len(spots_b)))][1]
    return _graft(a, pa, donor)


def _replace_random_subtree(e: Expr, repl: Expr, rng: np.random.Generator) -> Expr:
    spots = _subtrees(e)
    path = spots[int(rng.integers(len(spots)))][0]
    return _graft(e, path, repl)


class MctsGenerator(_GeneratorBase):
    """UCT token-sequence search: each tree node is a partial token set;
    expansion adds one candidate token per visit, rollouts fill the rest
    randomly, and feedback backpropagates the engine's best reward."""

    class _Node:
        __slots__ = ("tokens", "children", "untried", "visits", "total")

        def __init__(self, tokens, untried):
            self.tokens = tokens
            self.children: list = []
            self.untried = untried
            self.visits = 0
            self.total = 0.0

    def __init__(self, config, dataset, rng):
        super().__init__(config, dataset, rng)
        self.n_tokens = max(1, config.n_slots - len(self.variables)
                            - (config.n_const_slots if config.use_constants else 0))
        self.root = self._Node((), self._candidate_tokens(()))
        self._path: list = []
        self._pending: list[TokenBatch] = []
        self._best_feedback = -1.0

    def _candidate_tokens(self, tokens) -> list[Expr]:
        base = [Variable(v) for v in self.variables] + [t for t in tokens]
        cands: list[Expr] = []
        seen = set()
        for op in self.unary:
            for t in base:
                e = Apply(op, t)
                if e.key not in seen:
                    seen.add(e.key)
                    cands.append(e)
        for op in self.binary:
            for i, t1 in enumerate(base):
                for t2 in base[i:]:
                    e = Apply(op, t1, t2)
                    if e.key not in seen:
                        seen.add(e.key)
                        cands.append(e)
        order = self.rng.permutation(len(cands))
        return [cands[i] for i in order[:64]]

    def _uct(self, node) -> "_Node":
        logn = math.log(max(node.visits, 1))
        return max(node.children,
                   key=lambda c: (c.total / max(c.visits, 1)
                                  + self.config.mcts_uct_c
                                  * math.sqrt(logn / max(c.visits, 1))))

    def _batch_for(self, tokens, constants) -> TokenBatch:
        slots = self._variable_slots()
        slots += [Constant(v) for v in constants]
        slots = self._fill(slots, list(tokens))
        return TokenBatch(tuple(slots), tuple(constants))

    def next(self) -> TokenBatch:
        if self._pending:
            return self._pending.pop()
        node = self.root
        path = [node]
        while not node.untried and node.children:
            node = self._uct(node)
            path.append(node)
        if node.untried and len(node.tokens) < self.n_tokens:
            token = node.untried.pop()
            tokens = node.tokens + (token,)
            child = self._Node(tokens, self._candidate_tokens(tokens)
                               if len(tokens) < self.n_tokens else [])
            node.children.append(child)
            path.append(child)
            node = child
        self._path = path
        rollout = list(node.tokens)
        while len(rollout) < self.n_tokens:
            rollout.append(_random_tree(self.rng, self.variables, self.unary,
                                        self.binary, depth=2,
                                        p_const=self._p_const(),
                                        const_sampler=self._const_sampler()))
        if self.config.use_constants:
            lo, hi = self.config.const_range
            candidates = [_grid_const(self.rng, lo, hi, self.config.const_grid)
                          for _ in range(self.config.mcts_const_candidates)]
            for value in candidates:
                for _ in range(self.config.mcts_const_attempts - 1):
                    extra = [_grid_const(self.rng, lo, hi, self.config.const_grid)
                             for _ in range(self.config.n_const_slots - 1)]
                    self._pending.append(
                        self._batch_for(rollout, [value] + extra))
            first = candidates[0]
            extra = [_grid_const(self.rng, lo, hi, self.config.const_grid)
                     for _ in range(self.config.n_const_slots - 1)]
            return self._batch_for(rollout, [first] + extra)
        return self._batch_for(rollout, [])

    def feedback(self, best_reward: float, front: ParetoFront) -> None:
        for node in self._path:
            node.visits += 1
            node.total += best_reward
        if best_reward > self._best_feedback and self._path:
            self._best_feedback = best_reward
            tokens = self._path[-1].tokens
            if tokens:
                self.best = max(tokens, key=lambda e: e.complexity)


def make_generator(config: "SearchConfig", dataset: Dataset,
                   rng: np.random.Generator):
    kind = config.generator
    if kind == "gp":
        return GpGenerator(config, dataset, rng)
    if kind == "mcts":
        return MctsGenerator(config, dataset, rng)
    if kind == "random":
        return RandomGenerator(config, dataset, rng)
    raise ValueError(f"unknown generator {kind!r}")


# ---------------------------------------------------------------------------
# Search configuration and loop
# ---------------------------------------------------------------------------

@dataclass
class SearchConfig:
    operator_set: str = "koza"
    n_slots: int = 7
    n_layers: int = 2
    top_k: int = 10
    t_max: float = 60.0
    down_sample: int = 20
    const_range: tuple[float, float] = (-3.0, 3.0)
    eta: float = 0.99
    generator: str = "gp"
    seed: int = 0
    warmup_iters: int = 5
    stall_iters: int = 20
    exact_mse_eps: float = 1e-10
    use_constants: bool = False
    use_drmask: bool = True
    threads: Optional[int] = None
    precision: str = "f64"
    block_cols: int = 1 << 20
    max_iters: Optional[int] = None
    n_const_slots: int = 2
    const_grid: float = 0.1
    n_rotate: int = 2
    cache_dir: Optional[str] = None
    # GP hyperparameters
    pop_size: int = 50
    tournament: int = 10
    crossover_p: float = 0.1
    mutation_p: float = 0.5
    max_height: int = 10
    hof_size: int = 20
    token_discount: float = 0.99
    # MCTS hyperparameters
    mcts_uct_c: float = math.sqrt(2.0)
    mcts_const_candidates: int = 2
    mcts_const_attempts: int = 3

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")

    def resolved_operator_set(self) -> OperatorSet:
        if isinstance(self.operator_set, OperatorSet):
            return self.operator_set
        try:
            return OPERATOR_SETS[self.operator_set]
        except KeyError:
            raise ValueError(f"unknown operator set {self.operator_set!r}") from None


@dataclass
class SearchResult:
    front: ParetoFront
    report: dict


def _linear_model(dataset: Dataset) -> Expr:
    A = np.column_stack([dataset.X, np.ones(dataset.n)])
    coef, *_ = np.linalg.lstsq(A, dataset.y, rcond=None)
    expr: Optional[Expr] = None
    for w, name in zip(coef[:-1], dataset.names):
        term = Apply(MUL, Constant(float(w)), Variable(name))
        expr = term if expr is None else Apply(ADD, expr, term)
    bias = Constant(float(coef[-1]))
    return bias if expr is None else Apply(ADD, expr, bias)


def _crossover_pair(front: ParetoFront, rng: np.random.Generator,
                    max_height: int) -> list[Expr]:
    entries = list(front)
    if len(entries) < 2:
        return []
    i, j = rng.choice(len(entries), size=2, replace=False)
    a, b = entries[int(i)].expr, entries[int(j)].expr
    out = []
    for child in (_swap_random_subtree(a, b, rng),
                  _swap_random_subtree(b, a, rng)):
        if _height(child) <= max_height:
            out.append(child)
    return out


def run_search(dataset: Dataset, config: SearchConfig) -> SearchResult:
    """Iterate token proposal -> engine sweep -> constant fit -> Pareto
    update -> generator feedback until t_max, reward stall, or a stable
    exact fit."""
    if dataset.n < 2:
        raise ValueError("dataset needs at least 2 rows")
    if dataset.m < 1:
        raise ValueError("dataset needs at least one variable")
    if not np.isfinite(dataset.y).any():
        raise ValueError("target column has no finite values")

    cfg = config
    ops = cfg.resolved_operator_set()
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    gen_rng, ds_rng, cross_rng, _ = [np.random.default_rng(s) for s in seeds]

    net = build_network(ops, cfg.n_slots, cfg.n_layers,
                        use_drmask=cfg.use_drmask, precision=cfg.precision,
                        block_cols=cfg.block_cols, cache_dir=cfg.cache_dir)
    generator = make_generator(cfg, dataset, gen_rng)

    front = ParetoFront()
    t_start = time.perf_counter()
    iterations = 0
    evaluations = 0
    stop_reason = "t_max"
    last_improved = 0
    exact_alpha: Optional[int] = None
    exact_since = 0
    processed: set[str] = set()

    while True:
        if time.perf_counter() - t_start >= cfg.t_max:
            stop_reason = "t_max"
            break
        if cfg.max_iters is not None and iterations >= cfg.max_iters:
            stop_reason = "max_iters"
            break

        batch = generator.next()
        sub = downsample(dataset, cfg.down_sample, ds_rng)
        cols = sub.columns()
        slot_values = np.column_stack(
            [evaluate(e, cols, n=sub.n) for e in batch.slot_exprs])
        outcome = forward(net, slot_values, sub.y, cfg.top_k,
                          slot_bindings=batch.slot_exprs, threads=cfg.threads)
        evaluations += net.final_width

        pool: list[Expr] = [canonicalize(e.expr) for e in outcome.entries]
        if generator.best is not None:
            pool.append(canonicalize(generator.best))
        if iterations >= cfg.warmup_iters:
            pool.extend(canonicalize(e)
                        for e in _crossover_pair(front, cross_rng, cfg.max_height))
        if iterations % cfg.warmup_iters == 0:
            pool.append(_linear_model(dataset))
            pool.append(Constant(float(np.mean(dataset.y))))

        entries: list[ParetoEntry] = []
        for cand in pool:
            if cand.key in processed:
                continue
            processed.add(cand.key)
            fitted = fit_constants(cand, dataset)
            entries.append(make_entry(canonicalize(fitted), dataset, cfg.eta))

        before = front.max_reward
        front.update(entries)
        iterations += 1
        if front.max_reward > before + 1e-15:
            last_improved = iterations
        generator.feedback(front.max_reward, front)

        exact = [e.complexity for e in front if e.mse < cfg.exact_mse_eps]
        if exact:
            alpha = min(exact)
            if alpha != exact_alpha:
                exact_alpha = alpha
                exact_since = iterations
            elif iterations - exact_since >= 2:
                stop_reason = "exact"
                break
        if iterations - last_improved >= cfg.stall_iters:
            stop_reason = "stalled"
            break

    wall = time.perf_counter() - t_start
    report = {
        "iterations": iterations,
        "wall_seconds": wall,
        "evaluations": evaluations,
        "stop_reason": stop_reason,
        "seed": cfg.seed,
        "config": config_echo(cfg),
        "front": [{
            "expr": format_expr(e.expr),
            "complexity": e.complexity,
            "mse": e.mse if math.isfinite(e.mse) else None,
            "reward": e.reward,
        } for e in front],
    }
    return SearchResult(front, report)


def config_echo(cfg: SearchConfig) -> dict:
    ops = cfg.resolved_operator_set()
    out = {k: v for k, v in vars(cfg).items() if not k.startswith("_")}
    out["operator_set"] = ops.name
    out["const_range"] = list(cfg.const_range)
    return out
