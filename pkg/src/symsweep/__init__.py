"""symsweep: symbolic regression by exhaustive shared-subtree tree evaluation."""

from .expr import (
    Expr, Variable, Constant, Apply, Operator, OperatorSet,
    OPERATOR_SETS, KOZA, SEMIKOZA, ARITHMETIC, BASIC_KOZA,
    evaluate, complexity, canonicalize, equivalent, format_expr, parse,
    ParseError, UnboundVariableError,
)

__version__ = "0.1.0"
