import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from symsweep.data import Dataset
from symsweep.expr import Apply, Constant, MUL, ADD, Variable, evaluate, parse
from symsweep.search import (
    GpGenerator, MctsGenerator, ParetoEntry, ParetoFront, RandomGenerator,
    SearchConfig, TokenBatch, downsample, fit_constants, make_entry,
    make_generator, reward, run_search, update_front,
)


def _dataset(expr_text, n=20, m=1, lo=-1.0, hi=1.0, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, size=(n, m))
    names = [f"x{i+1}" for i in range(m)]
    y = evaluate(parse(expr_text), {nm: X[:, i] for i, nm in enumerate(names)})
    return Dataset(names, X, y)


# ---------------------------------------------------------------------------
# reward
# ---------------------------------------------------------------------------

def test_reward_identity_case():
    assert reward(0.0, 0) == 1.0


def test_reward_discount():
    assert reward(0.0, 2, 0.99) == pytest.approx(0.9801, abs=1e-12)


def test_reward_infinite_mse():
    assert reward(math.inf, 3) == 0.0
    assert reward(math.nan, 3) == 0.0


def test_reward_formula_grid():
    for alpha in range(21):
        assert reward(0.0, alpha, 0.99) == pytest.approx(0.99 ** alpha, abs=1e-12)


def test_reward_strictly_monotonic():
    mses = [0.0, 1e-6, 1e-3, 0.1, 1.0, 10.0]
    for alpha in (0, 1, 5, 20):
        vals = [reward(m, alpha, 0.99) for m in mses]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    for mse in mses:
        vals = [reward(mse, a, 0.99) for a in range(0, 30, 3)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# downsample
# ---------------------------------------------------------------------------

def test_downsample_at_threshold_unchanged():
    ds = _dataset("x1", n=20)
    out = downsample(ds, 20, np.random.default_rng(0))
    np.testing.assert_array_equal(out.X, ds.X)


def test_downsample_subset():
    ds = _dataset("x1", n=1000)
    out = downsample(ds, 100, np.random.default_rng(1))
    assert out.n == 100
    pool = set(map(float, ds.y))
    assert all(float(v) in pool for v in out.y)


def test_downsample_deterministic():
    ds = _dataset("x1", n=500)
    a = downsample(ds, 50, np.random.default_rng(42))
    b = downsample(ds, 50, np.random.default_rng(42))
    np.testing.assert_array_equal(a.X, b.X)


# ---------------------------------------------------------------------------
# fit_constants
# ---------------------------------------------------------------------------

def test_fit_single_scale():
    ds = _dataset("1.78*x1")
    fitted = fit_constants(parse("1.0*x1"), ds)
    consts = []
    from symsweep.search import _collect_constants
    _collect_constants(fitted, consts)
    assert consts[0] == pytest.approx(1.78, abs=1e-6)


def test_fit_no_constants_unchanged():
    ds = _dataset("x1*x1")
    e = parse("x1*x1")
    assert fit_constants(e, ds) is e


def test_fit_nguyen1c_coefficients():
    ds = _dataset("3.39*x1^3 + 2.12*x1^2 + 1.78*x1")
    start = parse("1.0*x1^3 + 1.0*x1^2 + 1.0*x1")
    fitted = fit_constants(start, ds)
    consts = []
    from symsweep.search import _collect_constants
    _collect_constants(fitted, consts)
    assert consts == pytest.approx([3.39, 2.12, 1.78], abs=1e-4)


def test_fit_never_worsens_full_data_mse():
    from symsweep.search import mse_of
    ds = _dataset("sin(x1) + x1")
    e = parse("0.9*sin(x1) + 1.2*x1")
    fitted = fit_constants(e, ds)
    assert mse_of(fitted, ds) <= mse_of(e, ds)


# ---------------------------------------------------------------------------
# Pareto front
# ---------------------------------------------------------------------------

def _entry(expr_text, mse, alpha=None):
    e = parse(expr_text)
    a = e.complexity if alpha is None else alpha
    return ParetoEntry(e, a, mse, reward(mse, a))


def test_front_dominance_removes_worse():
    front = ParetoFront()
    front.update([_entry("x1 + x2 + x1*x2", 0.0, alpha=5)])
    front.update([_entry("x1 + x2", 0.0, alpha=3)])
    assert len(front) == 1
    assert front.entries[0].complexity == 3


def test_front_ignores_dominated_insert():
    front = ParetoFront()
    front.update([_entry("x1", 0.5, alpha=1)])
    before = [e.expr.key for e in front]
    front.update([_entry("x1 * x2", 0.9, alpha=2)])
    assert [e.expr.key for e in front] == before


def test_front_insertion_order_independent():
    rng = np.random.default_rng(0)
    cands = [_entry(f"x1 + {k}", float(mse), alpha=int(a))
             for k, (mse, a) in enumerate(zip(rng.uniform(0, 1, 30),
                                              rng.integers(1, 8, 30)))]

    def brute(cands):
        keep = []
        for c in cands:
            if not any(o.dominates(c) for o in cands if o is not c):
                keep.append(c)
        return keep

    expected_keys = {c.expr.key for c in brute(cands)}
    for _ in range(5):
        order = rng.permutation(len(cands))
        front = ParetoFront()
        for i in order:
            front.update([cands[int(i)]])
        assert {e.expr.key for e in front} == expected_keys


def test_front_max_reward_nondecreasing():
    rng = np.random.default_rng(3)
    front = ParetoFront()
    prev = 0.0
    for k in range(50):
        front.update([_entry(f"x1 + {k}", float(rng.uniform(0, 2)),
                             alpha=int(rng.integers(1, 9)))])
        assert front.max_reward >= prev - 1e-15
        prev = front.max_reward


def test_update_front_function_wrapper():
    front = ParetoFront()
    out = update_front(front, [_entry("x1", 0.1, alpha=1)])
    assert out is front and len(front) == 1


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _config(**kw):
    base = dict(operator_set="koza", n_slots=5, n_layers=2, seed=0)
    base.update(kw)
    return SearchConfig(**base)


def test_random_generator_batch_shape():
    ds = _dataset("x1", n=20)
    gen = RandomGenerator(_config(n_slots=4), ds, np.random.default_rng(0))
    batch = gen.next()
    assert len(batch.slot_exprs) == 4
    names = {e.name for e in batch.slot_exprs if isinstance(e, Variable)}
    assert "x1" in names


def test_token_batch_requires_variable():
    with pytest.raises(ValueError):
        TokenBatch((Constant(1.0), Constant(2.0)))


def test_gp_hof_min_fitness_monotone_over_generations():
    ds = _dataset("x1*x1 + x1", n=20)
    gen = GpGenerator(_config(), ds, np.random.default_rng(0))
    prev = gen.hof_min_fitness
    front = ParetoFront()
    for _ in range(12):
        gen.next()
        gen.feedback(front.max_reward, front)
        # hall of fame keeps the best individuals ever seen
        assert gen.hof_min_fitness >= prev - 1e-15
        prev = gen.hof_min_fitness


def test_gp_feedback_injects_front():
    ds = _dataset("x1*x1 + x1", n=20)
    gen = GpGenerator(_config(), ds, np.random.default_rng(0))
    front = ParetoFront()
    target = parse("x1*x1 + x1")
    front.update([make_entry(target, ds, 0.99)])
    gen.feedback(front.max_reward, front)
    assert any(e.key == target.key for e in gen.population)
    assert gen.best is not None and gen.best.key == target.key


def test_mcts_constant_batches_per_expansion():
    ds = _dataset("x1 + 1.5", n=20)
    cfg = _config(use_constants=True, n_const_slots=1, generator="mcts")
    gen = MctsGenerator(cfg, ds, np.random.default_rng(0))
    batch = gen.next()  # one expansion
    queued = len(gen._pending)
    # 2 constant candidates x 3 attempts -> at most 6 constant-bearing batches
    assert queued + 1 <= 6
    assert all(len(b.constants) == 1 for b in [batch] + gen._pending)
    gen.feedback(0.5, ParetoFront())
    root_visits = gen.root.visits
    assert root_visits == 1


def test_make_generator_dispatch():
    ds = _dataset("x1", n=10)
    rng = np.random.default_rng(0)
    assert isinstance(make_generator(_config(generator="gp"), ds, rng), GpGenerator)
    assert isinstance(make_generator(_config(generator="mcts"), ds, rng), MctsGenerator)
    assert isinstance(make_generator(_config(generator="random"), ds, rng), RandomGenerator)
    with pytest.raises(ValueError):
        make_generator(_config(generator="nope"), ds, rng)


# ---------------------------------------------------------------------------
# run_search
# ---------------------------------------------------------------------------

def test_run_search_depth1_target():
    ds = _dataset("x1 + x2", n=20, m=2)
    cfg = SearchConfig(operator_set="arithmetic", n_slots=4, n_layers=2,
                       t_max=60, seed=0, threads=2)
    res = run_search(ds, cfg)
    best = min(res.front, key=lambda e: e.mse)
    assert best.mse <= 1e-20
    assert best.expr.key == parse("x1 + x2").key


def test_run_search_random_generator_smoke():
    ds = _dataset("x1 * x2", n=20, m=2)
    cfg = SearchConfig(operator_set="arithmetic", n_slots=4, n_layers=1,
                       generator="random", t_max=30, max_iters=100, seed=1,
                       threads=2)
    res = run_search(ds, cfg)
    assert min(e.mse for e in res.front) <= 1e-20


def test_run_search_deterministic_given_seed():
    ds = _dataset("x1 + x2", n=20, m=2)
    cfg = SearchConfig(operator_set="arithmetic", n_slots=4, n_layers=2,
                       t_max=120, seed=7, threads=2)
    r1 = run_search(ds, cfg)
    r2 = run_search(ds, cfg)
    assert r1.report["iterations"] == r2.report["iterations"]
    assert r1.report["front"] == r2.report["front"]


def test_run_search_front_mse_matches_reevaluation():
    from symsweep.search import mse_of
    ds = _dataset("sin(x1) + x1*x1", n=20)
    cfg = SearchConfig(operator_set="koza", n_slots=2, n_layers=3,
                       t_max=30, max_iters=6, seed=0, threads=2)
    res = run_search(ds, cfg)
    for e in res.front:
        again = mse_of(e.expr, ds)
        if math.isfinite(e.mse):
            assert again == pytest.approx(e.mse, rel=1e-9, abs=1e-12)


def test_run_search_validates_dataset():
    with pytest.raises(ValueError):
        run_search(Dataset(["x1"], np.zeros((1, 1)), np.zeros(1)),
                   SearchConfig())
    bad = Dataset(["x1"], np.ones((3, 1)), np.full(3, np.nan))
    with pytest.raises(ValueError):
        run_search(bad, SearchConfig())


def test_run_search_report_shape():
    ds = _dataset("x1 + x2", n=20, m=2)
    cfg = SearchConfig(operator_set="arithmetic", n_slots=3, n_layers=2,
                       t_max=30, seed=0, threads=2)
    rep = run_search(ds, cfg).report
    for key in ("iterations", "wall_seconds", "evaluations", "front",
                "seed", "config", "stop_reason"):
        assert key in rep
    assert rep["config"]["operator_set"] == "arithmetic"
    for row in rep["front"]:
        assert set(row) == {"expr", "complexity", "mse", "reward"}


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(top_k=0)
    with pytest.raises(ValueError):
        SearchConfig(eta=0.0)
    with pytest.raises(ValueError):
        SearchConfig(operator_set="bogus").resolved_operator_set()


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1e6), st.integers(0, 30))
def test_reward_bounds_property(mse, alpha):
    r = reward(mse, alpha, 0.99)
    assert 0.0 < r <= 1.0
