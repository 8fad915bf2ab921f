import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import EXAMPLE1_DEMANDS, EXAMPLE1_Q, random_case
from cvrpsd.instance import CvrpInstance, make_tour
from cvrpsd.scenarios import demand_prefix_sums, permute_to_tour_order
from cvrpsd.split import (STRICT, RouteRecoveryError, SplitMode, brute_force_split, compute_masks,
                          recover_routes, split_batch, split_masked, split_scalar)


def _direct_mask(S, Q):
    n = len(S) - 1
    out = []
    for i in range(1, n + 1):
        ok = [p for p in range(i) if S[i] - S[p] <= Q]
        out.append(min(ok) if ok else -1)
    return out


def test_collinear_example(collinear):
    tour = make_tour(collinear, [1, 2, 3])
    q = [4, 5, 4]
    for res in (split_scalar(collinear, tour, q), split_masked(collinear, tour, compute_masks(demand_prefix_sums(q)[0], 10), q),
                brute_force_split(collinear, tour, q)):
        assert res.cost == 8.0
        assert res.routes == [(1,), (2, 3)]


def test_mask_examples():
    assert compute_masks([0, 3, 6, 9, 12, 15], 6).tolist() == [0, 0, 1, 2, 3]
    assert compute_masks([0, 14, 29, 37, 38, 46], 17).tolist() == [0, 1, 2, 2, 2]
    assert compute_masks([0, 8, 9, 16, 21, 23], 17).tolist() == [0, 0, 0, 1, 1]
    assert compute_masks([0, 20, 21], 17).tolist() == [-1, 1]


def test_single_demand_above_capacity_is_infeasible(collinear):
    tour = make_tour(collinear, [1, 2, 3])
    res = split_scalar(collinear, tour, [4, 11, 4])
    assert not res.feasible and res.cost == np.inf
    batch = split_batch(collinear, tour, np.array([[4, 11, 4], [4, 5, 4]], dtype=np.uint16))
    assert batch.feasible.tolist() == [False, True]
    assert batch.cost[1] == 8.0


def test_example1(example1):
    inst, tour = example1
    costs = []
    for row in EXAMPLE1_DEMANDS:
        q = permute_to_tour_order(np.array([row], dtype=np.uint16), tour)[0]
        res = split_scalar(inst, tour, q)
        assert res.cost == brute_force_split(inst, tour, q).cost
        costs.append(res.cost)
        q2 = demand_prefix_sums(q)[0]
        for p_i, lo in enumerate(compute_masks(q2, EXAMPLE1_Q), start=1):
            assert q2[p_i] - q2[lo] <= EXAMPLE1_Q
    assert costs == [66.0, 46.0]
    batch = split_batch(inst, tour, np.array(EXAMPLE1_DEMANDS, dtype=np.uint16))
    assert batch.cost.tolist() == [66.0, 46.0]
    assert abs(batch.cost.mean() - 56.0) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.booleans(), st.integers(0, 2**32 - 1))
def test_dp_matches_exhaustive_enumeration(n, integer, seed):
    rng = np.random.default_rng(seed)
    inst, tour, q = random_case(rng, n, integer)
    a = split_scalar(inst, tour, q)
    b = brute_force_split(inst, tour, q)
    assert a.cost == b.cost
    assert a.routes == b.routes
    batch = split_batch(inst, tour, _customer_order(q, tour), record_pred=True)
    assert batch.cost[0] == a.cost
    if a.feasible:
        assert recover_routes(batch.pred[0], tour) == a.routes


def _customer_order(q_tour, tour):
    out = np.empty(len(q_tour), dtype=np.uint16)
    out[tour.order - 1] = q_tour
    return out[None, :]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_masks_match_direct_scan(n, Q, seed):
    rng = np.random.default_rng(seed)
    q = rng.integers(0, Q + Q // 4 + 2, size=(5, n))
    S = demand_prefix_sums(q)
    M = compute_masks(S, Q)
    for w in range(5):
        assert M[w].tolist() == _direct_mask(S[w].tolist(), Q)
        valid = M[w][M[w] >= 0]
        # windows never move left as i grows
        assert np.all(np.diff(valid) >= 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.booleans(), st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_penalized_matches_exhaustive(n, integer, seed, lam):
    rng = np.random.default_rng(seed)
    inst, tour, q = random_case(rng, n, integer)
    mode = SplitMode.penalty(lam * 2.5)
    a = split_scalar(inst, tour, q, mode=mode)
    b = brute_force_split(inst, tour, q, mode=mode)
    assert a.cost == b.cost and a.routes == b.routes
    c = split_batch(inst, tour, _customer_order(q, tour), mode=mode)
    assert c.cost[0] == a.cost
    d = split_batch(inst, tour, _customer_order(q, tour), mode=mode, backend="numpy")
    assert d.cost[0] == a.cost


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.booleans(), st.integers(0, 2**32 - 1))
def test_capacity_monotonicity(n, integer, seed):
    rng = np.random.default_rng(seed)
    inst, tour, q = random_case(rng, n, integer)
    Q = inst.capacity
    assert split_scalar(inst, tour, q, capacity=Q + 5).cost <= split_scalar(inst, tour, q, capacity=Q).cost


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.booleans(), st.integers(0, 2**32 - 1))
def test_penalty_bounded_by_strict_and_monotone_in_lambda(n, integer, seed):
    rng = np.random.default_rng(seed)
    inst, tour, q = random_case(rng, n, integer)
    strict = split_scalar(inst, tour, q).cost
    prev = -np.inf
    for lam in (0, 1, 3, 10, 1000):
        pen = split_scalar(inst, tour, q, mode=SplitMode.penalty(lam)).cost
        assert pen <= strict
        assert pen >= prev
        prev = pen


def test_zero_lambda_equals_strict_when_everything_fits(collinear):
    tour = make_tour(collinear, [1, 2, 3])
    q = [3, 3, 3]  # total 9 <= Q
    assert split_scalar(collinear, tour, q, mode=SplitMode.penalty(0)).cost == split_scalar(collinear, tour, q).cost


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_lower_bound_single_route(n, seed):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0, 100, size=(n + 1, 2))
    inst = CvrpInstance.from_coords(coords, [1] * n, 10)
    tour = make_tour(inst, rng.permutation(np.arange(1, n + 1)))
    q = rng.integers(0, 11, size=n)
    res = split_scalar(inst, tour, q)
    single = inst.cost[0, tour.order[0]] + tour.dist_prefix[-1] + inst.cost[tour.order[-1], n + 1]
    # metric costs: cutting a route never shortens it
    assert res.cost >= single - 1e-9


@pytest.mark.parametrize("integer", [True, False])
def test_batch_invariant_to_workers_and_tiles(integer):
    rng = np.random.default_rng(7)
    inst, tour, _ = random_case(rng, 30, integer, q_hi=40)
    scen = rng.integers(0, 30, size=(3000, 30)).astype(np.uint16)
    ref = split_batch(inst, tour, scen, workers=1, tile_size=65536, record_pred=True)
    for w in (1, 2, 4):
        for tile in (1, 64, 999):
            other = split_batch(inst, tour, scen, workers=w, tile_size=tile, record_pred=True)
            assert np.array_equal(other.cost, ref.cost)
            assert np.array_equal(other.pred, ref.pred)


@pytest.mark.parametrize("mode", [STRICT, SplitMode.penalty(4), SplitMode.penalty(2.5)])
def test_numpy_backend_agrees(mode):
    rng = np.random.default_rng(11)
    for integer in (True, False):
        inst, tour, _ = random_case(rng, 25, integer, q_hi=40)
        scen = rng.integers(0, 45, size=(500, 25)).astype(np.uint16)
        a = split_batch(inst, tour, scen, mode=mode, record_pred=True)
        b = split_batch(inst, tour, scen, mode=mode, record_pred=True, backend="numpy", tile_size=128)
        assert np.array_equal(a.cost, b.cost)
        assert np.array_equal(a.pred, b.pred)


def test_integer_costs_give_integer_results():
    inst = CvrpInstance.from_coords([(0, 0), (3, 4), (6, 8)], [1, 1], 5, rounding="nearest-integer")
    res = split_batch(inst, make_tour(inst, [1, 2]), np.array([[1, 1]], dtype=np.uint16))
    assert res.cost.dtype == np.int64 and res.cost[0] == 20


def test_recover_routes_rejects_corrupt_chain():
    with pytest.raises(RouteRecoveryError):
        recover_routes([-1, 0, 1, 3], [1, 2, 3])
    with pytest.raises(RouteRecoveryError):
        recover_routes([-1, 0], [1, 2, 3])
    assert recover_routes([-1, 0, 1, 1], [5, 6, 7]) == [(5,), (6, 7)]


def test_brute_force_refuses_large_n():
    inst = CvrpInstance.from_coords([(0, 0)] + [(i, 0) for i in range(1, 22)], [1] * 21, 5)
    with pytest.raises(ValueError):
        brute_force_split(inst, make_tour(inst, range(1, 22)), [1] * 21)
