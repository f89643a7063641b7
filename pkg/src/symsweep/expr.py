"""Expression trees, operators, evaluation, canonical keys and equivalence.

Everything here is immutable after construction and safe to share across
threads.  Canonical keys are computed by flattening +/- and */÷ chains into
coefficient/exponent normal forms (no CAS rewrites beyond that), so that
structurally different spellings of the same value usually hash alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "Operator",
    "OperatorSet",
    "Expr",
    "Variable",
    "Constant",
    "Apply",
    "ParseError",
    "UnboundVariableError",
    "OPERATORS",
    "OPERATOR_SETS",
    "KOZA",
    "SEMIKOZA",
    "ARITHMETIC",
    "BASIC_KOZA",
    "evaluate",
    "complexity",
    "canonicalize",
    "equivalent",
    "format_expr",
    "parse",
]

UNARY = "unary"
BINARY_SQUARED = "binary_squared"
BINARY_TRIANGLED = "binary_triangled"


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnboundVariableError(KeyError):
    pass


@dataclass(frozen=True)
class Operator:
    """A math operator with IEEE-total vectorized evaluation."""

    name: str
    arity: int
    kind: str
    fn: Callable[..., np.ndarray]
    commutative: bool = False
    domain_note: Optional[str] = None

    def __post_init__(self):
        if (self.kind == UNARY) != (self.arity == 1):
            raise ValueError(f"operator {self.name}: kind/arity mismatch")

    def __call__(self, *args):
        with np.errstate(all="ignore"):
            return self.fn(*args)

    def __repr__(self):
        return f"Operator({self.name})"


def _identity(x):
    return x


def _sign(x):
    return np.sign(x)


OPERATORS: dict[str, Operator] = {}


def _op(name, arity, kind, fn, commutative=False, domain_note=None):
    op = Operator(name, arity, kind, fn, commutative, domain_note)
    OPERATORS[name] = op
    return op


ADD = _op("add", 2, BINARY_TRIANGLED, np.add, commutative=True)
MUL = _op("mul", 2, BINARY_TRIANGLED, np.multiply, commutative=True)
SUB = _op("sub", 2, BINARY_SQUARED, np.subtract)
DIV = _op("div", 2, BINARY_SQUARED, np.divide, domain_note="x/0 -> inf/nan")
# One-directional variants: only evaluated over operand pairs (i, j) with
# i <= j, halving the pair space relative to sub/div.
SEMISUB = _op("semisub", 2, BINARY_TRIANGLED, np.subtract)
SEMIDIV = _op("semidiv", 2, BINARY_TRIANGLED, np.divide, domain_note="x/0 -> inf/nan")

IDENTITY = _op("identity", 1, UNARY, _identity)
NEG = _op("neg", 1, UNARY, np.negative)
INV = _op("inv", 1, UNARY, lambda x: 1.0 / x, domain_note="1/0 -> inf")
SIN = _op("sin", 1, UNARY, np.sin)
COS = _op("cos", 1, UNARY, np.cos)
EXP = _op("exp", 1, UNARY, np.exp)
LOG = _op("log", 1, UNARY, np.log, domain_note="log requires positive argument")
SQRT = _op("sqrt", 1, UNARY, np.sqrt, domain_note="sqrt requires nonnegative argument")
TANH = _op("tanh", 1, UNARY, np.tanh)
COSH = _op("cosh", 1, UNARY, np.cosh)
SINH = _op("sinh", 1, UNARY, np.sinh)
ABS = _op("abs", 1, UNARY, np.abs)
SIGN = _op("sign", 1, UNARY, _sign)
POW2 = _op("pow2", 1, UNARY, np.square)
POW3 = _op("pow3", 1, UNARY, lambda x: x * x * x)


@dataclass(frozen=True)
class OperatorSet:
    """An ordered operator collection with per-class counts."""

    name: str
    ops: tuple[Operator, ...]

    def __post_init__(self):
        if self.kappa == 0:
            raise ValueError("operator set must not be empty")

    @property
    def unary(self) -> tuple[Operator, ...]:
        return tuple(o for o in self.ops if o.kind == UNARY)

    @property
    def binary_squared(self) -> tuple[Operator, ...]:
        return tuple(o for o in self.ops if o.kind == BINARY_SQUARED)

    @property
    def binary_triangled(self) -> tuple[Operator, ...]:
        return tuple(o for o in self.ops if o.kind == BINARY_TRIANGLED)

    @property
    def n_unary(self) -> int:
        return len(self.unary)

    @property
    def n_binary_squared(self) -> int:
        return len(self.binary_squared)

    @property
    def n_binary_triangled(self) -> int:
        return len(self.binary_triangled)

    @property
    def kappa(self) -> int:
        return len(self.ops)

    def output_width(self, input_width: int) -> int:
        w = input_width
        return (self.n_unary * w
                + self.n_binary_squared * w * w
                + self.n_binary_triangled * w * (w + 1) // 2)


KOZA = OperatorSet("koza", (ADD, MUL, SUB, DIV, IDENTITY, SIN, COS, EXP, LOG))
SEMIKOZA = OperatorSet(
    "semikoza", (ADD, MUL, SEMISUB, SEMIDIV, IDENTITY, NEG, INV, SIN, COS, EXP, LOG))
ARITHMETIC = OperatorSet("arithmetic", (ADD, MUL, SUB, DIV, IDENTITY))
BASIC_KOZA = OperatorSet(
    "basickoza", (ADD, MUL, IDENTITY, NEG, INV, SIN, COS, EXP, LOG))
CHAOTIC = OperatorSet(
    "chaotic", (ADD, MUL, SUB, DIV, IDENTITY, SIN, COS, EXP, LOG, TANH, COSH, SIGN, ABS))

OPERATOR_SETS: dict[str, OperatorSet] = {
    s.name: s for s in (KOZA, SEMIKOZA, ARITHMETIC, BASIC_KOZA, CHAOTIC)
}


# ---------------------------------------------------------------------------
# Expression trees
# ---------------------------------------------------------------------------

class Expr:
    """Immutable expression node; subclasses: Variable, Constant, Apply."""

    __slots__ = ("_key", "_trimmed_key", "_complexity", "_vars")

    def __init__(self):
        self._key = None
        self._trimmed_key = None
        self._complexity = None
        self._vars = None

    @property
    def key(self) -> str:
        """Canonical key: stable under commutative reorder, +/x chain
        flattening, constant folding and identity collapse."""
        if self._key is None:
            self._key = repr(_normalize(self))
        return self._key

    @property
    def trimmed_key(self) -> str:
        """Canonical key with the normalized form's constants rounded to
        two decimals (then re-normalized, so vanishing terms drop)."""
        if self._trimmed_key is None:
            reified = _nf_to_expr(*_normalize(self), rnd=True)
            self._trimmed_key = repr(_normalize(reified))
        return self._trimmed_key

    @property
    def complexity(self) -> int:
        if self._complexity is None:
            self._complexity = _complexity(self)
        return self._complexity

    @property
    def variables(self) -> frozenset[str]:
        if self._vars is None:
            self._vars = _collect_vars(self)
        return self._vars

    def __str__(self):
        return format_expr(self)

    def __repr__(self):
        return f"Expr({format_expr(self)})"


class Variable(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        super().__init__()
        self.name = name


class Constant(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        super().__init__()
        self.value = float(value)


class Apply(Expr):
    __slots__ = ("op", "args")

    def __init__(self, op: Operator, *args: Expr):
        super().__init__()
        if len(args) != op.arity:
            raise ValueError(f"{op.name} expects {op.arity} args, got {len(args)}")
        self.op = op
        self.args = tuple(args)


def _collect_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Variable):
        return frozenset((e.name,))
    if isinstance(e, Apply):
        out: frozenset[str] = frozenset()
        for a in e.args:
            out |= a.variables
        return out
    return frozenset()


def _complexity(e: Expr) -> int:
    # identity nodes carry subtrees across layers and do not count.
    if isinstance(e, Apply):
        own = 0 if e.op is IDENTITY else 1
        return own + sum(_complexity(a) for a in e.args)
    return 0


def complexity(e: Expr) -> int:
    """Number of operator nodes; identity is free, leaves contribute 0."""
    return e.complexity


def constant_valued(e: Expr) -> bool:
    """True when the canonical form reduces to a plain number (e.g. x-x)."""
    _, nf = _normalize(e)
    return nf == _ONE


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(e: Expr, data: Mapping[str, np.ndarray], n: Optional[int] = None) -> np.ndarray:
    """Element-wise IEEE evaluation of `e` over column vectors in `data`.

    NaN/inf propagate; out-of-domain inputs never raise.  Raises
    UnboundVariableError if `e` references a column not in `data`.
    """
    if n is None:
        n = len(next(iter(data.values()))) if data else 1
    with np.errstate(all="ignore"):
        out = _eval(e, data)
    if np.ndim(out) == 0:
        out = np.full(n, float(out))
    return np.asarray(out, dtype=np.float64)


def _eval(e: Expr, data: Mapping[str, np.ndarray]):
    if isinstance(e, Variable):
        try:
            return np.asarray(data[e.name], dtype=np.float64)
        except KeyError:
            raise UnboundVariableError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Constant):
        return e.value
    args = [_eval(a, data) for a in e.args]
    return e.op.fn(*args)


# ---------------------------------------------------------------------------
# Canonical normal form
#
# _normalize maps a tree to a scaled normal form (coef, nf) with value
# coef * nf, where nf is one of:
#   ('one',)                      -- the number 1
#   ('v', name)
#   ('sum', const, ((coef, nf), ...))   -- flattened, like terms collected
#   ('prod', ((int_exp, nf), ...))      -- flattened, exponents collected
#   ('f', opname, (coef, nf))           -- other operator applications
#   ('raw', opname, childkeys...)       -- fallback when folding hits non-finite
# Rewrites are value-preserving up to float rounding, so key-equal
# expressions agree numerically wherever both are finite.
# ---------------------------------------------------------------------------

_ONE = ("one",)
_EVEN_FNS = {"cos", "abs", "cosh"}
_ODD_FNS = {"sin", "tanh", "sinh", "sign"}

_SCALAR_FN = {
    "identity": lambda v: v,
    "neg": lambda v: -v,
    "inv": lambda v: 1.0 / v if v != 0 else math.inf,
    "sin": math.sin,
    "cos": math.cos,
    "exp": lambda v: math.exp(v) if v < 710 else math.inf,
    "log": lambda v: math.log(v) if v > 0 else (-math.inf if v == 0 else math.nan),
    "sqrt": lambda v: math.sqrt(v) if v >= 0 else math.nan,
    "tanh": math.tanh,
    "cosh": lambda v: math.cosh(v) if abs(v) < 710 else math.inf,
    "sinh": lambda v: math.sinh(v) if abs(v) < 710 else math.inf * (1 if v > 0 else -1),
    "abs": abs,
    "sign": lambda v: float(np.sign(v)),
    "pow2": lambda v: v * v,
    "pow3": lambda v: v * v * v,
}


def _nf_sort_key(t):
    return repr(t[1])


def _zclean(c: float) -> float:
    # map -0.0 to 0.0 so renders agree
    return 0.0 if c == 0.0 else c


def _is_negative_form(c: float, nf) -> bool:
    if nf[0] == "sum":
        terms = nf[2]
        return terms[0][0] < 0 if terms else nf[1] < 0
    return c < 0


def _flip(c: float, nf):
    if nf[0] == "sum":
        flipped = tuple((_zclean(-tc), tnf) for tc, tnf in nf[2])
        return (c, ("sum", _zclean(-nf[1]), flipped))
    return (_zclean(-c), nf)


def _mk_sum(const: float, termmap: dict):
    terms = tuple(sorted(((tc, tnf) for tnf, tc in termmap.items() if tc != 0.0),
                         key=_nf_sort_key))
    const = _zclean(const)
    if not terms:
        return (const, _ONE)
    if const == 0.0 and len(terms) == 1:
        return (terms[0][0], terms[0][1])
    return (1.0, ("sum", const, terms))


def _nf_add(parts):
    const = 0.0
    termmap: dict = {}
    for c, nf in parts:
        if not math.isfinite(c):
            return None
        if nf is _ONE or nf == _ONE:
            const += c
        elif nf[0] == "sum":
            const += c * nf[1]
            for tc, tnf in nf[2]:
                termmap[tnf] = termmap.get(tnf, 0.0) + c * tc
        else:
            termmap[nf] = termmap.get(nf, 0.0) + c
    if not math.isfinite(const):
        return None
    return _mk_sum(const, termmap)


def _mk_prod(coef: float, fmap: dict):
    factors = tuple(sorted(((e, fnf) for fnf, e in fmap.items() if e != 0),
                           key=_nf_sort_key))
    if not factors:
        return (_zclean(coef), _ONE)
    if len(factors) == 1 and factors[0][0] == 1:
        return (_zclean(coef), factors[0][1])
    return (_zclean(coef), ("prod", factors))


def _nf_mul(a, b, bexp: int = 1):
    ca, nfa = a
    cb, nfb = b
    if bexp == -1:
        if cb == 0.0 or not math.isfinite(cb):
            return None
        cb = 1.0 / cb
    c = ca * cb
    if not math.isfinite(c):
        return None
    fmap: dict = {}
    for e, fnf in _iter_factors(nfa):
        fmap[fnf] = fmap.get(fnf, 0) + e
    for e, fnf in _iter_factors(nfb):
        fmap[fnf] = fmap.get(fnf, 0) + e * bexp
    return _mk_prod(c, fmap)


def _iter_factors(nf):
    if nf is _ONE or nf == _ONE:
        return
    if nf[0] == "prod":
        yield from nf[1]
    else:
        yield (1, nf)


def _nf_pow_int(a, k: int):
    ca, nfa = a
    c = ca ** k
    if not math.isfinite(c):
        return None
    fmap: dict = {}
    for e, fnf in _iter_factors(nfa):
        fmap[fnf] = fmap.get(fnf, 0) + e * k
    return _mk_prod(c, fmap)


def _nf_call(name: str, a):
    c, nf = a
    if nf == _ONE:
        try:
            v = _SCALAR_FN[name](c)
        except (OverflowError, ValueError, ZeroDivisionError):
            v = math.nan
        if math.isfinite(v):
            return (_zclean(v), _ONE)
        return (1.0, ("f", name, (c, _ONE)))
    if name in _EVEN_FNS and _is_negative_form(c, nf):
        return (1.0, ("f", name, _flip(c, nf)))
    if name in _ODD_FNS and _is_negative_form(c, nf):
        return (-1.0, ("f", name, _flip(c, nf)))
    return (1.0, ("f", name, (c, nf)))


def _raw(name: str, children) -> tuple:
    return (1.0, ("raw", name, tuple(children)))


def _normalize(e: Expr):
    if isinstance(e, Variable):
        return (1.0, ("v", e.name))
    if isinstance(e, Constant):
        v = e.value
        if math.isfinite(v):
            return (_zclean(v), _ONE)
        return (1.0, ("nfc", repr(v)))
    assert isinstance(e, Apply)
    kids = [_normalize(a) for a in e.args]
    name = e.op.name
    out = None
    if name == "identity":
        return kids[0]
    if name == "neg":
        return _flip(*kids[0])
    if name in ("add",):
        out = _nf_add(kids)
    elif name in ("sub", "semisub"):
        out = _nf_add([kids[0], _flip(*kids[1])])
    elif name == "mul":
        out = _nf_mul(kids[0], kids[1])
    elif name in ("div", "semidiv"):
        out = _nf_mul(kids[0], kids[1], bexp=-1)
    elif name == "inv":
        out = _nf_mul((1.0, _ONE), kids[0], bexp=-1)
    elif name == "pow2":
        out = _nf_pow_int(kids[0], 2)
    elif name == "pow3":
        out = _nf_pow_int(kids[0], 3)
    else:
        out = _nf_call(name, kids[0])
    if out is None:
        # non-finite coefficient arithmetic: keep the structure as-is
        out = _raw(name, kids)
    return out


def _round2(v: float, rnd: bool) -> float:
    return _zclean(round(v, 2)) if rnd else v


def _nf_body_to_expr(nf, rnd: bool) -> Expr:
    if nf[0] == "v":
        return Variable(nf[1])
    if nf[0] == "nfc":
        return Constant(float(nf[1]))
    if nf[0] == "sum":
        _, const, terms = nf
        out: Optional[Expr] = None
        for tc, tnf in terms:
            tc = _round2(tc, rnd)
            if tc == 0.0:
                continue
            term = _nf_body_to_expr(tnf, rnd)
            if tc != 1.0:
                term = Apply(MUL, Constant(tc), term)
            out = term if out is None else Apply(ADD, out, term)
        const = _round2(const, rnd)
        if const != 0.0 or out is None:
            bias = Constant(const)
            out = bias if out is None else Apply(ADD, out, bias)
        return out
    if nf[0] == "prod":
        num: Optional[Expr] = None
        den: Optional[Expr] = None
        for exp, fnf in nf[1]:
            base = _nf_body_to_expr(fnf, rnd)
            side = Apply(MUL, base, base) if abs(exp) >= 2 else base
            for _ in range(abs(exp) - 2):
                side = Apply(MUL, side, base)
            if exp > 0:
                num = side if num is None else Apply(MUL, num, side)
            else:
                den = side if den is None else Apply(MUL, den, side)
        if den is None:
            return num if num is not None else Constant(1.0)
        if num is None:
            return Apply(INV, den)
        return Apply(DIV, num, den)
    if nf[0] == "f":
        return Apply(OPERATORS[nf[1]], _nf_to_expr(*nf[2], rnd=rnd))
    if nf[0] == "raw":
        return Apply(OPERATORS[nf[1]],
                     *[_nf_to_expr(c, body, rnd=rnd) for c, body in nf[2]])
    raise AssertionError(f"unknown normal form {nf[0]!r}")


def _nf_to_expr(c: float, nf, rnd: bool = False) -> Expr:
    """Rebuild an expression from a normal form; rnd rounds every numeric
    payload to two decimals on the way out."""
    c = _round2(c, rnd)
    if nf == _ONE:
        return Constant(c)
    body = _nf_body_to_expr(nf, rnd)
    if c == 1.0:
        return body
    if c == 0.0:
        return Constant(0.0)
    return Apply(MUL, Constant(c), body)


# ---------------------------------------------------------------------------
# canonicalize: light structural normal form (returns a tree)
# ---------------------------------------------------------------------------

def canonicalize(e: Expr) -> Expr:
    """Sort commutative operands, fold all-constant subtrees, collapse
    identity chains and double negation.  Idempotent and value-preserving."""
    if not isinstance(e, Apply):
        return e
    args = [canonicalize(a) for a in e.args]
    op = e.op
    if op is IDENTITY:
        return args[0]
    if op is NEG and isinstance(args[0], Apply) and args[0].op is NEG:
        return args[0].args[0]
    if all(isinstance(a, Constant) for a in args):
        with np.errstate(all="ignore"):
            v = float(op.fn(*[np.float64(a.value) for a in args]))
        if math.isfinite(v):
            return Constant(v)
    if op.commutative and len(args) == 2 and _canon_order(args[0]) > _canon_order(args[1]):
        args = [args[1], args[0]]
    return Apply(op, *args)


def _canon_order(e: Expr):
    # constants sort ahead of symbolic operands
    return (0 if isinstance(e, Constant) else 1, e.key)


# ---------------------------------------------------------------------------
# Numeric + structural equivalence
# ---------------------------------------------------------------------------

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def _van_der_corput(i: int, base: int) -> float:
    x, denom = 0.0, 1.0
    while i:
        denom *= base
        i, rem = divmod(i, base)
        x += rem / denom
    return x


def halton_points(n_points: int, bounds: Sequence[tuple[float, float]]) -> np.ndarray:
    """Deterministic quasi-random points, one column per bounded dimension."""
    dims = len(bounds)
    pts = np.empty((n_points, dims))
    for d, (lo, hi) in enumerate(bounds):
        base = _PRIMES[d % len(_PRIMES)]
        u = np.array([_van_der_corput(i + 1, base) for i in range(n_points)])
        pts[:, d] = lo + (hi - lo) * u
    return pts


def equivalent(a: Expr, b: Expr,
               domain: Mapping[str, tuple[float, float]],
               tol: float = 1e-6,
               n_points: int = 64) -> bool:
    """True if trimmed canonical keys match, or if values agree within
    tol*(1+|.|) on quasi-random domain points where both are finite (at
    least half the sample must be finite for both).  Undecidable cases
    report False."""
    if a.trimmed_key == b.trimmed_key:
        return True
    names = sorted(a.variables | b.variables)
    if not names:
        va = evaluate(a, {}, n=1)
        vb = evaluate(b, {}, n=1)
        fin = np.isfinite(va) & np.isfinite(vb)
        if not fin.all():
            return False
        return bool(np.abs(va - vb)
                    <= tol * (1 + np.maximum(np.abs(va), np.abs(vb))))
    try:
        bounds = [tuple(map(float, domain[v])) for v in names]
    except KeyError:
        return False
    pts = halton_points(n_points, bounds)
    cols = {v: pts[:, i] for i, v in enumerate(names)}
    va = evaluate(a, cols)
    vb = evaluate(b, cols)
    fin = np.isfinite(va) & np.isfinite(vb)
    if fin.sum() < n_points // 2:
        return False
    da = va[fin]
    db = vb[fin]
    scale = 1.0 + np.maximum(np.abs(da), np.abs(db))
    return bool(np.all(np.abs(da - db) <= tol * scale))


# ---------------------------------------------------------------------------
# Formatting and parsing
# ---------------------------------------------------------------------------

_BINARY_SYMBOL = {"add": "+", "sub": "-", "semisub": "-", "mul": "*",
                  "div": "/", "semidiv": "/"}


def _fmt_const(v: float) -> str:
    if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_expr(e: Expr) -> str:
    """Infix with explicit parentheses; unary operators use call syntax."""
    return _fmt(e, root=True)


def _fmt(e: Expr, root: bool = False) -> str:
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Constant):
        s = _fmt_const(e.value)
        return s if (root or not s.startswith("-")) else f"({s})"
    op = e.op
    if op.arity == 1:
        if op is NEG:
            inner = _fmt(e.args[0])
            return f"-{inner}" if root else f"(-{inner})"
        return f"{op.name}({_fmt(e.args[0], root=True)})"
    sym = _BINARY_SYMBOL[op.name]
    parts = []
    for a in e.args:
        s = _fmt(a)
        if isinstance(a, Apply) and a.op.arity == 2:
            s = f"({s})"
        parts.append(s)
    return f"{parts[0]} {sym} {parts[1]}"


_UNARY_FNS = {
    "identity": IDENTITY, "neg": NEG, "inv": INV, "sin": SIN, "cos": COS,
    "exp": EXP, "log": LOG, "sqrt": SQRT, "tanh": TANH, "cosh": COSH,
    "sinh": SINH, "abs": ABS, "sign": SIGN, "pow2": POW2, "pow3": POW3,
}


class _Parser:
    """Recursive-descent parser for the expression grammar.

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME '(' expr ')' | NAME | '(' expr ')'

    '^' is parser-level sugar: positive integer exponents desugar to
    repeated multiplication, anything else to exp(k*log(base)).
    """

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def parse(self) -> Expr:
        e = self.expr()
        self.skip_ws()
        if self.pos != len(self.text):
            raise ParseError("unexpected trailing input", self.pos)
        return e

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expr(self) -> Expr:
        left = self.term()
        while True:
            c = self.peek()
            if c == "+":
                self.pos += 1
                left = Apply(ADD, left, self.term())
            elif c == "-":
                self.pos += 1
                left = Apply(SUB, left, self.term())
            else:
                return left

    def term(self) -> Expr:
        left = self.unary()
        while True:
            c = self.peek()
            if c == "*":
                self.pos += 1
                left = Apply(MUL, left, self.unary())
            elif c == "/":
                self.pos += 1
                left = Apply(DIV, left, self.unary())
            else:
                return left

    def unary(self) -> Expr:
        if self.peek() == "-":
            self.pos += 1
            inner = self.unary()
            if isinstance(inner, Constant):
                return Constant(-inner.value)
            return Apply(NEG, inner)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek() == "^":
            self.pos += 1
            exponent = self.unary()
            return _desugar_pow(base, exponent, self.pos)
        return base

    def atom(self) -> Expr:
        c = self.peek()
        start = self.pos
        if c == "(":
            self.pos += 1
            e = self.expr()
            if self.peek() != ")":
                raise ParseError("expected ')'", self.pos)
            self.pos += 1
            return e
        if c.isdigit() or c == ".":
            return self.number()
        if c.isalpha() or c == "_":
            name = self.name()
            if self.peek() == "(":
                self.pos += 1
                arg = self.expr()
                if self.peek() != ")":
                    raise ParseError("expected ')'", self.pos)
                self.pos += 1
                try:
                    return Apply(_UNARY_FNS[name], arg)
                except KeyError:
                    raise ParseError(f"unknown function {name!r}", start) from None
            return Variable(name)
        raise ParseError("expected expression", self.pos)

    def number(self) -> Constant:
        start = self.pos
        text = self.text
        while self.pos < len(text) and (text[self.pos].isdigit() or text[self.pos] == "."):
            self.pos += 1
        if self.pos < len(text) and text[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            if self.pos < len(text) and text[self.pos] in "+-":
                self.pos += 1
            if self.pos < len(text) and text[self.pos].isdigit():
                while self.pos < len(text) and text[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = mark
        try:
            return Constant(float(text[start:self.pos]))
        except ValueError:
            raise ParseError("bad number", start) from None

    def name(self) -> str:
        start = self.pos
        text = self.text
        while self.pos < len(text) and (text[self.pos].isalnum() or text[self.pos] == "_"):
            self.pos += 1
        return text[start:self.pos]


def _desugar_pow(base: Expr, exponent: Expr, pos: int) -> Expr:
    if isinstance(exponent, Constant) and float(exponent.value).is_integer():
        k = int(exponent.value)
        if k == 0:
            return Constant(1.0)
        if k < 0:
            return Apply(INV, _desugar_pow(base, Constant(-k), pos))
        out = base
        for _ in range(k - 1):
            out = Apply(MUL, out, base)
        return out
    return Apply(EXP, Apply(MUL, exponent, Apply(LOG, base)))


def parse(text: str) -> Expr:
    """Parse an infix expression string; raises ParseError with position."""
    return _Parser(text).parse()
