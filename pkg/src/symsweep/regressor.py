"""Scikit-learn style estimator wrapping the search loop."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

from .data import Dataset
from .expr import evaluate, format_expr
from .search import SearchConfig, run_search


class SymbolicRegressor(BaseEstimator, RegressorMixin):
    """Discovers a closed-form expression for y = f(X).

    fit() runs the token-generator / engine search and keeps the Pareto
    front; predict() evaluates the highest-reward front expression.  The
    estimator follows scikit-learn conventions (get_params / set_params /
    clone), so it composes with pipelines and model selection.
    """

    def __init__(self, operator_set: str = "koza", n_slots: int = 5,
                 n_layers: int = 2, top_k: int = 10, t_max: float = 60.0,
                 generator: str = "gp", down_sample: int = 20,
                 use_constants: bool = False,
                 const_range: tuple[float, float] = (-3.0, 3.0),
                 use_drmask: bool = True, threads: Optional[int] = None,
                 precision: str = "f64", exact_mse_eps: float = 1e-10,
                 stall_iters: int = 10 ** 9,
                 max_iters: Optional[int] = None,
                 feature_names: Optional[Sequence[str]] = None,
                 random_state: int = 0):
        self.operator_set = operator_set
        self.n_slots = n_slots
        self.n_layers = n_layers
        self.top_k = top_k
        self.t_max = t_max
        self.generator = generator
        self.down_sample = down_sample
        self.use_constants = use_constants
        self.const_range = const_range
        self.use_drmask = use_drmask
        self.threads = threads
        self.precision = precision
        self.exact_mse_eps = exact_mse_eps
        self.stall_iters = stall_iters
        self.max_iters = max_iters
        self.feature_names = feature_names
        self.random_state = random_state

    def _names(self, m: int) -> list[str]:
        if self.feature_names is not None:
            if len(self.feature_names) != m:
                raise ValueError("feature_names length mismatch")
            return list(self.feature_names)
        return [f"x{i + 1}" for i in range(m)]

    def fit(self, X, y) -> "SymbolicRegressor":
        X, y = check_X_y(X, y, y_numeric=True)
        names = self._names(X.shape[1])
        dataset = Dataset(names, X, y, note="fit")
        config = SearchConfig(
            operator_set=self.operator_set, n_slots=self.n_slots,
            n_layers=self.n_layers, top_k=self.top_k, t_max=self.t_max,
            generator=self.generator, down_sample=self.down_sample,
            use_constants=self.use_constants,
            const_range=tuple(self.const_range),
            use_drmask=self.use_drmask, threads=self.threads,
            precision=self.precision, exact_mse_eps=self.exact_mse_eps,
            stall_iters=self.stall_iters, max_iters=self.max_iters,
            seed=self.random_state)
        result = run_search(dataset, config)
        self.front_ = result.front
        self.report_ = result.report
        self.n_features_in_ = X.shape[1]
        self.feature_names_in_ = np.asarray(names, dtype=object)
        self.best_expr_ = max(result.front, key=lambda e: e.reward).expr
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "best_expr_"):
            raise NotFittedError("call fit before predict")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("feature count mismatch")
        cols = {name: X[:, i]
                for i, name in enumerate(self.feature_names_in_)}
        return evaluate(self.best_expr_, cols, n=X.shape[0])

    def expression(self) -> str:
        if not hasattr(self, "best_expr_"):
            raise NotFittedError("call fit before expression")
        return format_expr(self.best_expr_)
