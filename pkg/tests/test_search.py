import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import line_instance
from cvrpsd import _kernels
from cvrpsd.instance import check_permutation, make_tour, random_instance
from cvrpsd.scenarios import DemandModel, parse_model, sample_scenarios
from cvrpsd.search import (Evaluator, SearchConfig, apply_move, crossover_ox, local_search, mutate,
                           solve)
from cvrpsd.split import SplitMode


def _gen_config(**kw):
    base = dict(population_size=6, offspring_per_generation=6, generations=4, time_budget=None, granular=8)
    base.update(kw)
    return SearchConfig(**base)


def test_ox_hand_traced_example():
    child = crossover_ox([1, 2, 3, 4], [4, 3, 2, 1], np.random.default_rng(0), cut=(1, 3))
    assert child.tolist() == [4, 2, 3, 1]


def test_ox_identical_parents_and_full_slice():
    rng = np.random.default_rng(1)
    a = [3, 1, 4, 2, 5]
    assert crossover_ox(a, a, rng).tolist() == a
    assert crossover_ox(a, [5, 4, 3, 2, 1], rng, cut=(0, 5)).tolist() == a


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_ox_child_properties(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.permutation(np.arange(1, n + 1)), rng.permutation(np.arange(1, n + 1))
    i, j = sorted(rng.choice(n + 1, size=2, replace=False))
    child = crossover_ox(a, b, rng, cut=(i, j))
    check_permutation(child, n)
    assert np.array_equal(child[i:j], a[i:j])
    rest = [c for c in child[j:].tolist() + child[:i].tolist()]
    in_b = [c for c in np.roll(b, -j).tolist() if c in set(rest)]
    assert rest == in_b


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**32 - 1), st.sampled_from(["relocate", "swap", "2opt"]))
def test_moves_and_mutation_keep_permutations(n, seed, move):
    rng = np.random.default_rng(seed)
    order = rng.permutation(np.arange(1, n + 1))
    i, j = (int(x) for x in rng.choice(n, size=2, replace=False))
    check_permutation(apply_move(order, move, i, j), n)
    check_permutation(mutate(order, rng), n)


def _line_eval(inst, scen, lam=1000.0):
    ev = Evaluator(inst, scen, SplitMode.penalty(lam))
    return ev, ev.screen


def test_local_search_repairs_swapped_pair():
    inst = line_instance(6)
    scen = sample_scenarios(DemandModel("fixed", inst.demands), 1)
    ev, f = _line_eval(inst, scen)
    start = np.array([1, 2, 4, 3, 5, 6])
    before = f(start)
    tour, after = local_search(inst, start, f, np.random.default_rng(0))
    assert after < before
    assert tour.order.tolist() in ([1, 2, 3, 4, 5, 6], [6, 5, 4, 3, 2, 1])
    assert after == f(tour.order)


def test_local_search_keeps_local_optimum_and_zero_cap():
    inst = line_instance(6)
    scen = sample_scenarios(DemandModel("fixed", inst.demands), 1)
    _, f = _line_eval(inst, scen)
    ident = np.arange(1, 7)
    tour, value = local_search(inst, ident, f, np.random.default_rng(0))
    assert tour.order.tolist() == ident.tolist() and value == f(ident)
    start = np.array([1, 2, 4, 3, 5, 6])
    tour, _ = local_search(inst, start, f, np.random.default_rng(0), move_cap=0)
    assert tour.order.tolist() == start.tolist()


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 15), st.integers(0, 2**32 - 1))
def test_local_search_never_worsens(n, seed):
    inst = random_instance(n, seed=seed)
    scen = sample_scenarios(parse_model("uniform:0.5,1.5", inst.demands, seed=seed), 64)
    _, f = _line_eval(inst, scen, lam=50.0)
    rng = np.random.default_rng(seed)
    start = rng.permutation(np.arange(1, n + 1))
    tour, value = local_search(inst, start, f, rng)
    check_permutation(tour.order, n)
    assert value <= f(start)


def test_solve_line_instance_returns_identity():
    inst = line_instance(4)
    scen = sample_scenarios(DemandModel("fixed", inst.demands), 1)
    best, _ = solve(inst, scen, _gen_config())
    assert best.tour.order.tolist() == [1, 2, 3, 4]
    assert best.fitness == 8.0


def test_tiny_budget_returns_initial_individual():
    inst = random_instance(30, seed=1)
    scen = sample_scenarios(parse_model("uniform:0.5,1.5", inst.demands, seed=1), 100)
    best, trace = solve(inst, scen, SearchConfig(time_budget=1e-6))
    check_permutation(best.tour.order, inst.n)
    assert np.isfinite(best.fitness) and len(trace.points) >= 1


def test_generations_mode_is_deterministic():
    inst = random_instance(15, seed=2)
    scen = sample_scenarios(parse_model("normal:0.3", inst.demands, seed=3), 300)
    a_best, a = solve(inst, scen, _gen_config(seed=5))
    b_best, b = solve(inst, scen, _gen_config(seed=5))
    assert [p[1:] for p in a.rows()] == [p[1:] for p in b.rows()]
    assert a_best.tour.order.tolist() == b_best.tour.order.tolist()
    c_best, _ = solve(inst, scen, _gen_config(seed=5, workers=2, tile_size=7))
    assert c_best.tour.order.tolist() == a_best.tour.order.tolist()


def test_trace_nonincreasing_and_cache_coherent():
    inst = random_instance(15, seed=4)
    scen = sample_scenarios(parse_model("uniform:0.5,1.5", inst.demands, seed=4), 2000)
    best, trace = solve(inst, scen, _gen_config(screen_size=256))
    costs = [p.best_penalized_cost for p in trace.points]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert costs[-1] == best.fitness
    fresh = Evaluator(inst, scen, SplitMode.penalty(SearchConfig().resolve_lambda(inst)))
    assert fresh(best.tour) == best.fitness


def test_longer_budget_is_no_worse():
    inst = random_instance(12, seed=9)
    scen = sample_scenarios(parse_model("uniform:0.5,1.5", inst.demands, seed=9), 200)
    short, _ = solve(inst, scen, _gen_config(generations=1, seed=3))
    long, _ = solve(inst, scen, _gen_config(generations=8, seed=3))
    assert long.fitness <= short.fitness


def _exhaustive_best(inst, scen, lam):
    cost = np.ascontiguousarray(inst.cost, dtype=np.float64)
    best = np.inf
    for perm in itertools.permutations(range(1, inst.n + 1)):
        v = _kernels.penalized_mean(scen.demands, np.array(perm, dtype=np.int64), cost, inst.capacity, lam)
        best = min(best, v)
    return best


def test_small_instances_reach_exhaustive_optimum():
    hits = 0
    for k in range(10):
        inst = random_instance(8, seed=100 + k)
        scen = sample_scenarios(DemandModel("fixed", inst.demands), 1)
        lam = 1e6
        opt = _exhaustive_best(inst, scen, lam)
        best, _ = solve(inst, scen, _gen_config(lam=lam, seed=k, population_size=10, generations=10))
        hits += abs(best.fitness - opt) <= 1e-9 * max(1.0, opt)
    assert hits >= 9


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(population_size=1)
    with pytest.raises(ValueError):
        SearchConfig(mutation_rate=1.5)
    with pytest.raises(ValueError):
        SearchConfig(lam=-1)
    with pytest.raises(ValueError):
        SearchConfig(time_budget=None, generations=None)


def test_trace_csv(tmp_path):
    inst = line_instance(5)
    scen = sample_scenarios(DemandModel("fixed", inst.demands), 1)
    _, trace = solve(inst, scen, _gen_config())
    text = trace.write_csv(tmp_path / "t.csv", header={"seed": 0}).read_text().splitlines()
    assert text[1] == "elapsed_ms,evaluations,best_penalized_cost,best_strict_cost"
