"""Stacked symbol-layer evaluation engine.

A network of stacked symbol layers evaluates every expression tree up to a
fixed depth over a set of input slots in one pass: each layer applies every
operator in the set to every admissible column (pair) of the previous
layer's output, so common subtrees are computed exactly once.  The final
layer is never materialized; its columns are produced and scored in
fixed-size blocks, keeping memory bounded while preserving full coverage.

Column order within a layer is: all unary blocks (set order), then
binary-squared blocks (all ordered pairs, row-major), then binary-triangled
blocks (pairs i <= j, row-major).  Each flat output index maps back to
(operator, child indices) by pure arithmetic, which drives the recursive
symbolic deduction of selected candidates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .expr import (
    Apply, Expr, Operator, OperatorSet, Variable,
    BINARY_SQUARED, BINARY_TRIANGLED, UNARY,
)

__all__ = [
    "OffsetColumn",
    "SymbolLayer",
    "Network",
    "EvalEntry",
    "EvalOutcome",
    "MemoryBudgetError",
    "EnumerationGuardError",
    "build_network",
    "forward",
    "deduce",
    "enumerate_all",
    "iter_expressions",
    "enumerated_width",
    "layer_widths",
    "estimate_memory",
    "materialize_columns",
    "top1_mse_multi",
]

DEFAULT_BLOCK_COLS = 1 << 20
DEFAULT_MEMORY_BUDGET = 8 << 30
# per-chunk element budget keeps worker buffers around ~128 MB in f64
_CHUNK_ELEMS = 1 << 24


class MemoryBudgetError(MemoryError):
    def __init__(self, estimate_bytes: int, budget_bytes: int):
        super().__init__(
            f"memory budget exceeded: streamed estimate {estimate_bytes} B "
            f"over budget {budget_bytes} B")
        self.estimate_bytes = estimate_bytes
        self.budget_bytes = budget_bytes


class EnumerationGuardError(ValueError):
    pass


@dataclass(frozen=True)
class OffsetColumn:
    """Backward-deduction entry: which operator and child columns produced
    one output column."""

    op_index: int
    left: int
    right: Optional[int]


@dataclass(frozen=True)
class _Block:
    op_index: int
    op: Operator
    kind: str
    start: int
    width: int


class SymbolLayer:
    """One layer: applies every operator to the previous layer's columns."""

    def __init__(self, ops: OperatorSet, input_width: int):
        if input_width < 1:
            raise ValueError("input width must be >= 1")
        self.ops = ops
        self.input_width = input_width
        self.block_ops: tuple[Operator, ...] = (
            ops.unary + ops.binary_squared + ops.binary_triangled)
        w = input_width
        self.blocks: list[_Block] = []
        start = 0
        for i, op in enumerate(self.block_ops):
            if op.kind == UNARY:
                width = w
            elif op.kind == BINARY_SQUARED:
                width = w * w
            else:
                width = w * (w + 1) // 2
            self.blocks.append(_Block(i, op, op.kind, start, width))
            start += width
        self.output_width = start
        self._block_starts = np.array([b.start for b in self.blocks], dtype=np.int64)
        # row r of a triangled block starts at r*w - r*(r-1)/2
        rows = np.arange(w + 1, dtype=np.int64)
        self._tri_starts = rows * w - rows * (rows - 1) // 2

    def offset_column(self, index: int) -> OffsetColumn:
        if not 0 <= index < self.output_width:
            raise IndexError(f"column index {index} out of range")
        b = self.blocks[int(np.searchsorted(self._block_starts, index, side="right")) - 1]
        off = index - b.start
        w = self.input_width
        if b.kind == UNARY:
            return OffsetColumn(b.op_index, off, None)
        if b.kind == BINARY_SQUARED:
            return OffsetColumn(b.op_index, off // w, off % w)
        i = int(np.searchsorted(self._tri_starts, off, side="right")) - 1
        j = i + (off - int(self._tri_starts[i]))
        return OffsetColumn(b.op_index, i, j)

    def iter_offset_columns(self) -> Iterator[OffsetColumn]:
        w = self.input_width
        for b in self.blocks:
            if b.kind == UNARY:
                for i in range(w):
                    yield OffsetColumn(b.op_index, i, None)
            elif b.kind == BINARY_SQUARED:
                for i in range(w):
                    for j in range(w):
                        yield OffsetColumn(b.op_index, i, j)
            else:
                for i in range(w):
                    for j in range(i, w):
                        yield OffsetColumn(b.op_index, i, j)

    def apply(self, H: np.ndarray) -> np.ndarray:
        """Materialize the full layer output (intermediate layers only)."""
        n = H.shape[0]
        out = np.empty((n, self.output_width), dtype=H.dtype)
        with np.errstate(all="ignore"):
            for b in self.blocks:
                dst = out[:, b.start:b.start + b.width]
                if b.kind == UNARY:
                    dst[:] = b.op.fn(H)
                elif b.kind == BINARY_SQUARED:
                    dst[:] = b.op.fn(H[:, :, None], H[:, None, :]).reshape(n, -1)
                else:
                    iu, ju = np.triu_indices(self.input_width)
                    dst[:] = b.op.fn(H[:, iu], H[:, ju])
        return out


class Network:
    """A stack of symbol layers with an optional duplicate-removal mask
    applied to the penultimate layer's output."""

    def __init__(self, ops: OperatorSet, n_slots: int,
                 layers: Sequence[SymbolLayer], mask=None,
                 precision: str = "f64", block_cols: int = DEFAULT_BLOCK_COLS):
        self.ops = ops
        self.n_slots = n_slots
        self.layers = list(layers)
        self.mask = mask
        self.precision = precision
        self.block_cols = block_cols

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def final_width(self) -> int:
        return self.layers[-1].output_width

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def widths(self) -> list[int]:
        return [self.n_slots] + [layer.output_width for layer in self.layers]


def layer_widths(ops: OperatorSet, n_slots: int, n_layers: int,
                 kept_penultimate: Optional[int] = None) -> list[int]:
    """Width recursion w_i = Nu*w + NbS*w^2 + NbT*w*(w+1)/2, with the
    penultimate width optionally replaced by a masked column count."""
    widths = [n_slots]
    for _ in range(n_layers):
        widths.append(ops.output_width(widths[-1]))
    if kept_penultimate is not None and n_layers >= 1:
        widths[-1] = ops.output_width(kept_penultimate)
    return widths


def build_network(ops: OperatorSet, n_slots: int, n_layers: int,
                  use_drmask: bool = False, precision: str = "f64",
                  block_cols: int = DEFAULT_BLOCK_COLS,
                  memory_budget: int = DEFAULT_MEMORY_BUDGET,
                  n_samples_hint: int = 100,
                  cache_dir: Optional[str] = None) -> Network:
    """Construct the layer stack; optionally compute and attach the DR mask
    over the penultimate layer.  Raises MemoryBudgetError when the streamed
    evaluation estimate exceeds the budget."""
    if n_slots < 1 or n_layers < 1:
        raise ValueError("n_slots and n_layers must be >= 1")
    mask = None
    kept = None
    if use_drmask and n_layers >= 2:
        from .drmask import compute_drmask
        mask = compute_drmask(ops, n_slots, n_layers, cache_dir=cache_dir)
        kept = mask.kept_count
    est = estimate_memory(ops, n_slots, n_layers, n_samples_hint, precision,
                          block_cols=block_cols, kept_penultimate=kept)
    if memory_budget is not None and est["streamed_bytes"] > memory_budget:
        raise MemoryBudgetError(est["streamed_bytes"], memory_budget)
    layers = []
    width = n_slots
    for level in range(n_layers):
        if mask is not None and level == n_layers - 1:
            width = mask.kept_count
        layer = SymbolLayer(ops, width)
        layers.append(layer)
        width = layer.output_width
    return Network(ops, n_slots, layers, mask=mask, precision=precision,
                   block_cols=block_cols)


# ---------------------------------------------------------------------------
# Forward evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalEntry:
    flat_index: int
    mse: float
    expr: Expr


@dataclass
class EvalOutcome:
    entries: list[EvalEntry]
    slot_bindings: tuple[Expr, ...]


def _default_bindings(n_slots: int) -> tuple[Expr, ...]:
    return tuple(Variable(f"s{i}") for i in range(n_slots))


def _propagate(net: Network, slot_values: np.ndarray) -> np.ndarray:
    """Run all layers but the last, then compact through the mask."""
    H = np.ascontiguousarray(slot_values, dtype=net.dtype)
    if H.ndim != 2 or H.shape[1] != net.n_slots:
        raise ValueError(f"slot_values must be (n, {net.n_slots})")
    for layer in net.layers[:-1]:
        H = layer.apply(H)
    if net.mask is not None:
        H = np.ascontiguousarray(H[:, net.mask.kept_indices])
    return H


def _chunk_tasks(layer: SymbolLayer, block_cols: int, n: int):
    """Split the final layer into (block, row range) chunks of bounded size."""
    eff = min(block_cols, max(4096, _CHUNK_ELEMS // max(n, 1)))
    w = layer.input_width
    for b in layer.blocks:
        if b.kind == UNARY:
            yield (b, 0, w)
        else:
            rows_per = max(1, eff // w)
            for r0 in range(0, w, rows_per):
                yield (b, r0, min(w, r0 + rows_per))


def _chunk_scores(layer: SymbolLayer, H: np.ndarray, task, y: np.ndarray):
    """Exact per-column MSE for one chunk; returns (mse, flat_indices)."""
    b, r0, r1 = task
    w = layer.input_width
    n = H.shape[0]
    with np.errstate(all="ignore"):
        if b.kind == UNARY:
            cols = b.op.fn(H)
            flat = b.start + np.arange(w, dtype=np.int64)
        elif b.kind == BINARY_SQUARED:
            cols = b.op.fn(H[:, r0:r1, None], H[:, None, :]).reshape(n, -1)
            flat = b.start + (np.arange(r0, r1, dtype=np.int64)[:, None] * w
                              + np.arange(w, dtype=np.int64)[None, :]).ravel()
        else:
            cols = b.op.fn(H[:, r0:r1, None], H[:, None, :]).reshape(n, -1)
            local = np.concatenate(
                [np.arange((i - r0) * w + i, (i - r0 + 1) * w, dtype=np.int64)
                 for i in range(r0, r1)])
            cols = cols[:, local]
            tri = layer._tri_starts
            flat = b.start + np.concatenate(
                [np.arange(tri[i], tri[i + 1], dtype=np.int64)
                 for i in range(r0, r1)])
        d = cols - y[:, None]
        mse = np.einsum("ij,ij->j", d, d, dtype=np.float64) / n
    mse[~np.isfinite(mse)] = np.inf
    return mse, flat


def _top_m(mse: np.ndarray, flat: np.ndarray, m: int):
    if len(mse) > m:
        part = np.argpartition(mse, m - 1)[:m]
        mse, flat = mse[part], flat[part]
    order = np.lexsort((flat, mse))
    return mse[order], flat[order]


# ---------------------------------------------------------------------------
# Gram-matrix screening for large final layers
#
# For the pairwise operator blocks, per-column MSE decomposes into inner
# products that one BLAS matmul evaluates for a whole chunk of the pair
# grid at once, e.g. ||a+b-y||^2 = ||a||^2 + 2a.b + ||b||^2 - 2a.y - 2b.y
# + ||y||^2.  The expansion costs ~1e-15 relative precision, so the
# screened top candidates are re-scored exactly before selection.
# ---------------------------------------------------------------------------

_SCREEN_MIN_WIDTH = 1 << 21
_SCREEN_SLACK = 256


def _precompute_screen(H: np.ndarray, y: np.ndarray) -> dict:
    with np.errstate(all="ignore"):
        pre = {
            "H": H,
            "sq": H * H,
            "inv": 1.0 / H,
            "hy": H * y[:, None],
            "y": y,
            "yy": float(y @ y),
        }
        pre["inv2"] = pre["inv"] * pre["inv"]
        pre["S2"] = np.einsum("ij,ij->j", H, H)
        pre["Sy"] = H.T @ y
    return pre


def _screen_block(op_name: str, pre: dict, r0: int, r1: int) -> np.ndarray:
    """Approximate sum of squared residuals for pair rows r0:r1 (unscaled
    by n), shape (r1-r0, width).  In-place combining keeps this at a few
    memory passes over the chunk."""
    H, sq, hy = pre["H"], pre["sq"], pre["hy"]
    S2, Sy, yy = pre["S2"], pre["Sy"], pre["yy"]
    a = slice(r0, r1)
    with np.errstate(all="ignore"):
        if op_name in ("add", "sub", "semisub"):
            G = H[:, a].T @ H
            sign = 2.0 if op_name == "add" else -2.0
            np.multiply(G, sign, out=G)
            left = S2[a] - 2.0 * Sy[a] + yy
            right = S2 - sign * Sy
            G += left[:, None]
            G += right[None, :]
            return G
        if op_name == "mul":
            G = sq[:, a].T @ sq
            G -= 2.0 * (hy[:, a].T @ H)
            G += yy
            return G
        if op_name in ("div", "semidiv"):
            G = sq[:, a].T @ pre["inv2"]
            G -= 2.0 * (hy[:, a].T @ pre["inv"])
            G += yy
            return G
    raise NotImplementedError(op_name)


def _tri_local_indices(w: int, r0: int, r1: int) -> np.ndarray:
    return np.concatenate([np.arange((i - r0) * w + i, (i - r0 + 1) * w,
                                     dtype=np.int64) for i in range(r0, r1)])


def _screen_chunk_scores(layer: SymbolLayer, H: np.ndarray, pre: dict,
                         task, y: np.ndarray):
    b, r0, r1 = task
    w = layer.input_width
    n = H.shape[0]
    if b.kind == UNARY:
        return _chunk_scores(layer, H, task, y)
    try:
        ssr = _screen_block(b.op.name, pre, r0, r1)
    except NotImplementedError:
        return _chunk_scores(layer, H, task, y)
    mse = ssr.reshape(-1) / n
    if b.kind == BINARY_SQUARED:
        flat = b.start + (np.arange(r0, r1, dtype=np.int64)[:, None] * w
                          + np.arange(w, dtype=np.int64)[None, :]).ravel()
    else:
        local = _tri_local_indices(w, r0, r1)
        mse = mse[local]
        tri = layer._tri_starts
        flat = b.start + np.arange(int(tri[r0]), int(tri[r1]), dtype=np.int64)
    mse = np.where(np.isfinite(mse), mse, np.inf)
    return mse, flat


def _exact_mse_for(layer: SymbolLayer, H: np.ndarray, y: np.ndarray,
                   flats: np.ndarray) -> np.ndarray:
    """Exact per-column MSE for given flat indices (elementwise)."""
    n = H.shape[0]
    out = np.empty(len(flats), dtype=np.float64)
    cols = np.empty((n, len(flats)), dtype=H.dtype)
    with np.errstate(all="ignore"):
        for pos, flat in enumerate(flats):
            col = layer.offset_column(int(flat))
            op = layer.block_ops[col.op_index]
            if col.right is None:
                cols[:, pos] = op.fn(H[:, col.left])
            else:
                cols[:, pos] = op.fn(H[:, col.left], H[:, col.right])
        d = cols - y[:, None]
        out = np.einsum("ij,ij->j", d, d, dtype=np.float64) / n
    out[~np.isfinite(out)] = np.inf
    return out


def _stream_top(net: Network, H: np.ndarray, y: np.ndarray, m: int,
                threads: Optional[int],
                exact: Optional[bool] = None) -> tuple[np.ndarray, np.ndarray, bool]:
    """Top-m (mse, flat index) over the streamed final layer.

    Deterministic regardless of worker count: tasks are fixed by the layer
    shape and every chunk's local top is merged by a final stable sort on
    (mse, flat index).  Large layers are screened via Gram matrices and the
    screened candidates re-scored exactly.
    """
    layer = net.layers[-1]
    y = np.asarray(y, dtype=net.dtype)
    tasks = list(_chunk_tasks(layer, net.block_cols, H.shape[0]))
    truncated = layer.output_width > m
    if exact is None:
        exact = layer.output_width <= _SCREEN_MIN_WIDTH
    m_screen = m if exact else min(layer.output_width, 4 * m + _SCREEN_SLACK)
    pre = None if exact else _precompute_screen(
        H.astype(np.float64, copy=False), np.asarray(y, dtype=np.float64))

    def run(task):
        if exact:
            mse, flat = _chunk_scores(layer, H, task, y)
        else:
            mse, flat = _screen_chunk_scores(layer, H, pre, task, y)
        return _top_m(mse, flat, m_screen)

    if threads is not None and threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    all_mse = np.concatenate([r[0] for r in results])
    all_flat = np.concatenate([r[1] for r in results])
    top_mse, top_flat = _top_m(all_mse, all_flat, m_screen)
    if not exact:
        top_mse = _exact_mse_for(layer, H, y, top_flat)
        order = np.lexsort((top_flat, top_mse))
        top_mse, top_flat = top_mse[order][:m], top_flat[order][:m]
    return top_mse, top_flat, truncated


def forward(net: Network, slot_values: np.ndarray, y: np.ndarray, k: int,
            slot_bindings: Optional[Sequence[Expr]] = None,
            threads: Optional[int] = None,
            exact: Optional[bool] = None) -> EvalOutcome:
    """Score every final-layer candidate column by MSE against y and return
    the top-k as deduced expressions.

    Candidates whose column contains any non-finite value get MSE = +inf.
    Ties break on lower flat index; canonically-equal candidates are
    deduplicated (first occurrence kept).  If k exceeds the number of
    distinct candidates, all of them are returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    bindings = tuple(slot_bindings) if slot_bindings is not None \
        else _default_bindings(net.n_slots)
    if len(bindings) != net.n_slots:
        raise ValueError("slot_bindings length must equal slot count")
    y = np.asarray(y, dtype=np.float64)
    H = _propagate(net, slot_values)
    total = net.final_width
    m = min(total, max(8 * k, 64))
    while True:
        top_mse, top_flat, truncated = _stream_top(net, H, y, m, threads, exact)
        entries: list[EvalEntry] = []
        seen: set[str] = set()
        memo: dict = {}
        for mse, flat in zip(top_mse, top_flat):
            e = deduce(net, int(flat), bindings, _memo=memo)
            key = e.key
            if key in seen:
                continue
            seen.add(key)
            entries.append(EvalEntry(int(flat), float(mse), e))
            if len(entries) == k:
                break
        if len(entries) == k or not truncated or m >= total:
            return EvalOutcome(entries, bindings)
        m = min(total, m * 4)


def top1_mse_multi(net: Network, slot_values: np.ndarray,
                   Y: np.ndarray, threads: Optional[int] = None,
                   rescore_top: int = 16) -> np.ndarray:
    """Best (minimum) candidate MSE for each target column of Y in one
    streaming sweep.

    Target-independent Gram matrices are computed once per chunk and reused
    across targets; the screened finalists are re-scored exactly."""
    layer = net.layers[-1]
    H = _propagate(net, slot_values)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError("Y must be (n, targets)")
    n, n_targets = Y.shape
    tasks = list(_chunk_tasks(layer, net.block_cols, n))
    H64 = H.astype(np.float64, copy=False)
    with np.errstate(all="ignore"):
        sq = H64 * H64
        inv = 1.0 / H64
        inv2 = inv * inv
        S2 = np.einsum("ij,ij->j", H64, H64)
        SY = H64.T @ Y  # (w, targets)
        YY = np.einsum("ij,ij->j", Y, Y)
    w = layer.input_width

    def flat_for(b, r0, r1, tri_local):
        if b.kind == BINARY_SQUARED:
            return b.start + (np.arange(r0, r1, dtype=np.int64)[:, None] * w
                              + np.arange(w, dtype=np.int64)[None, :]).ravel()
        tri = layer._tri_starts
        return b.start + np.arange(int(tri[r0]), int(tri[r1]), dtype=np.int64)

    def run(task):
        b, r0, r1 = task
        if b.kind == UNARY:
            with np.errstate(all="ignore"):
                cols = b.op.fn(H)
                flat = b.start + np.arange(w, dtype=np.int64)
                out = []
                for t in range(n_targets):
                    d = cols - Y[:, t:t + 1]
                    mse = np.einsum("ij,ij->j", d, d, dtype=np.float64) / n
                    mse[~np.isfinite(mse)] = np.inf
                    out.append(_top_m(mse, flat, rescore_top))
            return out
        a = slice(r0, r1)
        name = b.op.name
        tri_local = None if b.kind == BINARY_SQUARED \
            else _tri_local_indices(w, r0, r1)
        flat = flat_for(b, r0, r1, tri_local)
        with np.errstate(all="ignore"):
            if name in ("add", "sub", "semisub"):
                shared = H64[:, a].T @ H64
                sign = 2.0 if name == "add" else -2.0
                np.multiply(shared, sign, out=shared)
            elif name == "mul":
                shared = sq[:, a].T @ sq
            else:
                shared = sq[:, a].T @ inv2
            out = []
            for t in range(n_targets):
                if name in ("add", "sub", "semisub"):
                    left = S2[a] - 2.0 * SY[a, t] + YY[t]
                    right = S2 - (1.0 if name == "add" else -1.0) * 2.0 * SY[:, t]
                    ssr = shared + left[:, None]
                    ssr += right[None, :]
                else:
                    hy = H64[:, a] * Y[:, t:t + 1]
                    gy = hy.T @ (H64 if name == "mul" else inv)
                    ssr = shared - 2.0 * gy
                    ssr += YY[t]
                mse = ssr.reshape(-1)
                if tri_local is not None:
                    mse = mse[tri_local]
                mse = np.where(np.isfinite(mse), mse, np.inf) / n
                out.append(_top_m(mse, flat, rescore_top))
        return out

    if threads is not None and threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]

    best = np.empty(n_targets)
    for t in range(n_targets):
        mse = np.concatenate([r[t][0] for r in results])
        flat = np.concatenate([r[t][1] for r in results])
        _, top_flat = _top_m(mse, flat, rescore_top)
        exact = _exact_mse_for(layer, H, Y[:, t], top_flat)
        best[t] = exact.min()
    return best


# ---------------------------------------------------------------------------
# Symbolic deduction
# ---------------------------------------------------------------------------

def deduce(net: Network, flat_index: int, slot_bindings: Optional[Sequence[Expr]] = None,
           _memo: Optional[dict] = None) -> Expr:
    """Resolve a final-layer flat index to its expression by recursing
    through each layer's offset arithmetic down to the slot bindings."""
    bindings = tuple(slot_bindings) if slot_bindings is not None \
        else _default_bindings(net.n_slots)
    memo = _memo if _memo is not None else {}

    def rec(level: int, idx: int) -> Expr:
        if level == 0:
            return bindings[idx]
        got = memo.get((level, idx))
        if got is not None:
            return got
        layer = net.layers[level - 1]
        col = layer.offset_column(idx)
        op = layer.block_ops[col.op_index]

        def child(c: int) -> Expr:
            if level == net.n_layers and net.mask is not None:
                c = int(net.mask.kept_indices[c])
            return rec(level - 1, c)

        if col.right is None:
            e = Apply(op, child(col.left))
        else:
            e = Apply(op, child(col.left), child(col.right))
        memo[(level, idx)] = e
        return e

    if not 0 <= flat_index < net.final_width:
        raise IndexError(f"flat index {flat_index} out of range")
    return rec(net.n_layers, int(flat_index))


# ---------------------------------------------------------------------------
# Brute-force enumeration oracle
# ---------------------------------------------------------------------------

def enumerated_width(ops: OperatorSet, n_slots: int, n_layers: int) -> int:
    return layer_widths(ops, n_slots, n_layers)[-1]


def _level_up(ops: OperatorSet, level: list[Expr]) -> Iterator[Expr]:
    w = len(level)
    for op in ops.unary:
        for e in level:
            yield Apply(op, e)
    for op in ops.binary_squared:
        for a in level:
            for b in level:
                yield Apply(op, a, b)
    for op in ops.binary_triangled:
        for i in range(w):
            for j in range(i, w):
                yield Apply(op, level[i], level[j])


def iter_expressions(ops: OperatorSet, slots: Sequence[Expr],
                     n_layers: int, guard: int = 10 ** 7) -> Iterator[Expr]:
    """Lazily yield the final-level expressions in flat-index order,
    independently of the layer machinery (testing/benchmark oracle)."""
    final = enumerated_width(ops, len(slots), n_layers)
    if final > guard:
        raise EnumerationGuardError(
            f"enumeration of {final} expressions exceeds guard {guard}")
    level = list(slots)
    for _ in range(n_layers - 1):
        level = list(_level_up(ops, level))
    yield from _level_up(ops, level)


def enumerate_all(ops: OperatorSet, slots: Sequence[Expr],
                  n_layers: int, guard: int = 10 ** 7) -> list[Expr]:
    """The exact expression list the engine's flat indices denote."""
    return list(iter_expressions(ops, slots, n_layers, guard=guard))


def materialize_columns(net: Network, slot_values: np.ndarray,
                        guard: int = 2 * 10 ** 6) -> np.ndarray:
    """Full final-layer value matrix, for small configurations only."""
    if net.final_width > guard:
        raise EnumerationGuardError(
            f"materializing {net.final_width} columns exceeds guard {guard}")
    H = _propagate(net, slot_values)
    layer = net.layers[-1]
    n = H.shape[0]
    out = np.empty((n, layer.output_width), dtype=net.dtype)
    for task in _chunk_tasks(layer, net.block_cols, n):
        b, r0, r1 = task
        w = layer.input_width
        with np.errstate(all="ignore"):
            if b.kind == UNARY:
                out[:, b.start:b.start + w] = b.op.fn(H)
            elif b.kind == BINARY_SQUARED:
                cols = b.op.fn(H[:, r0:r1, None], H[:, None, :]).reshape(n, -1)
                out[:, b.start + r0 * w:b.start + r1 * w] = cols
            else:
                cols = b.op.fn(H[:, r0:r1, None], H[:, None, :]).reshape(n, -1)
                local = np.concatenate(
                    [np.arange((i - r0) * w + i, (i - r0 + 1) * w,
                               dtype=np.int64) for i in range(r0, r1)])
                tri = layer._tri_starts
                out[:, b.start + int(tri[r0]):b.start + int(tri[r1])] = cols[:, local]
    return out


# ---------------------------------------------------------------------------
# Memory estimation
# ---------------------------------------------------------------------------

def estimate_memory(ops: OperatorSet, n_slots: int, n_layers: int,
                    n_samples: int, precision: str = "f64",
                    block_cols: int = DEFAULT_BLOCK_COLS,
                    kept_penultimate: Optional[int] = None) -> dict:
    """Bytes needed to hold every layer (full), the largest single layer
    (peak), and the block-streamed evaluation working set."""
    widths = layer_widths(ops, n_slots, n_layers, kept_penultimate=kept_penultimate)
    item = 4 if precision == "f32" else 8
    per_layer = [w * n_samples * item for w in widths]
    full = sum(per_layer)
    streamed = sum(per_layer[:-1]) + min(widths[-1], block_cols) * n_samples * item
    return {
        "per_layer_widths": widths,
        "bytes_per_value": item,
        "full_bytes": full,
        "peak_layer_bytes": max(per_layer),
        "streamed_bytes": streamed,
    }
