import numpy as np
import pytest

from symsweep.bench import (
    BenchmarkProblem, SamplingSpec, check_recovery, default_config,
    find_problem, load_problem_set, run_benchmark, sample_dataset,
    wilson_interval,
)
from symsweep.data import Dataset
from symsweep.expr import evaluate, format_expr, parse
from symsweep.search import ParetoFront, SearchConfig, make_entry


class _Entry:
    def __init__(self, e):
        self.expr = e


# ---------------------------------------------------------------------------
# problem tables
# ---------------------------------------------------------------------------

def test_set_sizes():
    assert len(load_problem_set("Nguyen")) == 12
    assert len(load_problem_set("Nguyen-c")) == 6
    assert len(load_problem_set("R")) == 3
    assert len(load_problem_set("Rstar")) == 3
    assert len(load_problem_set("Livermore")) == 22
    assert len(load_problem_set("Feynman")) == 15


def test_nguyen8_is_sqrt_on_0_4():
    p = find_problem("Nguyen-8")
    assert p.ground_truth.key == parse("sqrt(x1)").key
    spec = p.sampling[0]
    assert (spec.kind, spec.low, spec.high, spec.count) == ("U", 0, 4, 20)


def test_r_set_equidistant():
    for p in load_problem_set("R"):
        spec = p.sampling[0]
        assert (spec.kind, spec.low, spec.high, spec.count) == ("E", -1, 1, 20)


def test_livermore7_is_sinh():
    p = find_problem("Livermore-7")
    assert p.ground_truth.key == parse("sinh(x1)").key
    spec = p.sampling[0]
    assert (spec.kind, spec.low, spec.high, spec.count) == ("U", -1, 1, 20)


def test_unknown_set():
    with pytest.raises(ValueError):
        load_problem_set("Frobnicate")


def test_feynman_uses_semikoza():
    assert all(p.operator_set == "semikoza" for p in load_problem_set("Feynman"))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_equidistant_endpoints_and_step():
    p = find_problem("R-1")
    ds = sample_dataset(p, seed=0)
    x = ds.X[:, 0]
    assert x[0] == -1.0 and x[-1] == 1.0
    np.testing.assert_allclose(np.diff(x), 2 / 19, atol=1e-12)


def test_nguyen7_rows_all_finite():
    p = find_problem("Nguyen-7")
    ds = sample_dataset(p, seed=1)
    assert ds.n == 20
    assert np.isfinite(ds.y).all()


def test_sampling_seed_deterministic():
    p = find_problem("Nguyen-1")
    a = sample_dataset(p, seed=5)
    b = sample_dataset(p, seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)


@pytest.mark.parametrize("set_name", ["Nguyen", "Nguyen-c", "R", "Rstar",
                                      "Livermore", "Feynman"])
def test_sampling_respects_bounds(set_name):
    for p in load_problem_set(set_name):
        ds = sample_dataset(p, seed=2)
        for i, spec in enumerate(p.sampling):
            col = ds.X[:, i]
            assert col.min() >= spec.low - 1e-12
            assert col.max() <= spec.high + 1e-12


# ---------------------------------------------------------------------------
# recovery
# ---------------------------------------------------------------------------

def test_self_recovery_all_problems():
    for set_name in ("Nguyen", "Nguyen-c", "R", "Rstar", "Livermore", "Feynman"):
        for p in load_problem_set(set_name):
            assert check_recovery([_Entry(p.ground_truth)], p), p.name


def test_recovery_rejects_partial_match():
    p = find_problem("Nguyen-1")
    assert check_recovery([_Entry(parse("x1^3 + x1^2 + x1"))], p)
    assert not check_recovery([_Entry(parse("x1^3 + x1^2"))], p)


def test_structure_with_bias_recovery():
    # ShimizuMorioka second equation: dy/dt = x - a*y - x*z with a = 0.85
    problem = BenchmarkProblem(
        name="sm-dy", ground_truth=parse("x - 0.85*y - x*z"),
        variables=("x", "y", "z"),
        sampling=(SamplingSpec("U", -2, 2, 100),) * 3,
        recovery_mode="structure-with-bias")
    found = parse("x - 0.85*y - x*z + 0.003")
    assert check_recovery([_Entry(found)], problem)
    # same structure, wrong coefficient after two-decimal trim -> reject
    wrong = parse("x - 0.99*y - x*z + 0.003")
    assert not check_recovery([_Entry(wrong)], problem)
    # a bias surviving the two-decimal trim is not allowed in exact mode
    exact = BenchmarkProblem(
        name="sm-exact", ground_truth=problem.ground_truth,
        variables=problem.variables, sampling=problem.sampling,
        recovery_mode="exact")
    biased = parse("x - 0.85*y - x*z + 0.3")
    assert not check_recovery([_Entry(biased)], exact)
    assert check_recovery([_Entry(biased)], problem)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def test_wilson_interval_contains_rate():
    for s, t in [(0, 10), (5, 10), (10, 10), (1, 1)]:
        lo, hi = wilson_interval(s, t)
        assert lo <= s / t <= hi


def test_run_benchmark_trivial_problem():
    problem = BenchmarkProblem(
        name="sum2", ground_truth=parse("x1 + x2"),
        variables=("x1", "x2"),
        sampling=(SamplingSpec("U", -1, 1, 20),) * 2,
        operator_set="arithmetic")
    cfg = SearchConfig(operator_set="arithmetic", n_slots=3, n_layers=2,
                       t_max=60, threads=2)
    report = run_benchmark("custom", trials=2, config=cfg, problems=[problem])
    row = report.rows[0]
    assert row["successes"] == 2 and row["rate"] == 1.0
    assert row["successes"] <= row["trials"]
    assert report.aggregate_rate == 1.0
    csv = report.to_csv()
    assert csv.splitlines()[0] == "problem,trials,successes,rate,mean_seconds"
    assert "sum2" in csv
    payload = report.to_json()
    assert payload["rows"][0]["problem"] == "sum2"
    lo, hi = payload["aggregate_interval_95"]
    assert lo <= payload["aggregate_rate"] <= hi


def test_run_benchmark_validates_trials():
    with pytest.raises(ValueError):
        run_benchmark("Nguyen", trials=0)


def test_default_config_policy():
    n1 = default_config(find_problem("Nguyen-1"))
    assert (n1.n_slots, n1.n_layers) == (2, 3)
    n1c = default_config(find_problem("Nguyen-1c"))
    assert (n1c.n_slots, n1c.n_layers) == (3, 3)
    assert n1c.use_constants
    f8 = default_config(find_problem("Feynman-8"))
    assert (f8.n_slots, f8.n_layers) == (7, 2)
    assert f8.operator_set == "semikoza"
