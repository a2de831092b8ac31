import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdsim.mckp import (
    MckpInstance,
    MckpSolution,
    solve_brute_force,
    solve_exact,
)
from oracles import brute_force_mckp


def random_instance(rng, max_sets=12, max_items=4, max_dims=5, tightness=None):
    n_sets = int(rng.integers(1, max_sets + 1))
    n_dims = int(rng.integers(1, max_dims + 1))
    costs, weights = [], []
    for _ in range(n_sets):
        n_items = int(rng.integers(1, max_items + 1))
        costs.append([float(rng.integers(0, 20)) for _ in range(n_items)])
        weights.append(
            [[float(rng.integers(0, 10)) for _ in range(n_dims)] for _ in range(n_items)]
        )
    w = np.array(
        [[it for it in ws] for ws in weights], dtype=object
    )
    min_total = sum(np.min(np.asarray(ws), axis=0) for ws in weights)
    max_total = sum(np.max(np.asarray(ws), axis=0) for ws in weights)
    frac = rng.uniform(-0.1, 1.1, size=n_dims) if tightness is None else tightness
    capacity = min_total + frac * (max_total - min_total)
    return MckpInstance.build(costs, weights, np.floor(capacity))


class TestBruteForce:
    def test_empty_instance(self):
        inst = MckpInstance.build([], [], [5.0])
        sol = solve_brute_force(inst)
        assert sol.feasible and sol.objective == 0.0 and sol.chosen == ()

    def test_two_by_two_hand_enumeration(self):
        # all four combinations: (0,0) cost 5 weight 6 infeasible;
        # (0,1) cost 3 weight 4; (1,0) cost 9 weight 5; (1,1) cost 7 weight 3
        # -> optimum (0,1) at cost 3
        inst = MckpInstance.build(
            costs=[[1.0, 5.0], [4.0, 2.0]],
            weights=[[[2.0], [1.0]], [[4.0], [2.0]]],
            capacity=[5.0],
        )
        sol = solve_brute_force(inst)
        assert sol.chosen == (0, 1)
        assert sol.objective == 3.0

    def test_guard(self):
        inst = MckpInstance.build(
            costs=[[0.0] * 10] * 8,
            weights=[[[0.0]] * 10] * 8,
            capacity=[1.0],
        )
        with pytest.raises(ValueError):
            solve_brute_force(inst, guard=10**6)


class TestExact:
    def test_single_zero_item(self):
        inst = MckpInstance.build([[0.0]], [[[0.0]]], [0.0])
        sol = solve_exact(inst)
        assert sol.feasible and sol.chosen == (0,) and sol.objective == 0.0

    def test_infeasible_when_min_weights_exceed_capacity(self):
        inst = MckpInstance.build(
            costs=[[1.0, 2.0], [1.0]],
            weights=[[[3.0], [4.0]], [[3.0]]],
            capacity=[5.0],
        )
        sol = solve_exact(inst)
        assert not sol.feasible

    def test_negative_capacity_with_negative_weights(self):
        # relief-style items: weights below zero free up capacity
        inst = MckpInstance.build(
            costs=[[0.0, 4.0], [0.0, 1.0]],
            weights=[[[0.0], [-3.0]], [[0.0], [-2.0]]],
            capacity=[-2.0],
        )
        sol = solve_exact(inst)
        assert sol.feasible
        assert sol.chosen == (0, 1)
        assert sol.objective == 1.0

    def test_agreement_with_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(250):
            inst = random_instance(rng)
            a = solve_exact(inst)
            b = solve_brute_force(inst)
            assert a.feasible == b.feasible
            if a.feasible:
                assert a.objective == pytest.approx(b.objective, abs=1e-9)
                assert a.chosen == b.chosen

    def test_agreement_with_independent_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            inst = random_instance(rng, max_sets=6, max_items=3, max_dims=3)
            sol = solve_exact(inst)
            oracle = brute_force_mckp(inst.costs, inst.weights, inst.capacity)
            if oracle is None:
                assert not sol.feasible
            else:
                assert sol.feasible
                assert sol.objective == pytest.approx(oracle[1], abs=1e-9)

    def test_time_budget_returns_incumbent(self):
        # free items are heavy and paid items weightless, so the cheap-
        # completion bound is uninformative and the search space is wide
        n = 20
        inst = MckpInstance.build(
            costs=[[0.0, 1.0 + s * 1e-4] for s in range(n)],
            weights=[[[1.0], [0.0]]] * n,
            capacity=[10.0],
        )
        sol = solve_exact(inst, time_budget=0.0)
        assert not sol.optimal
        assert sol.feasible  # best incumbent so far is still returned

    def test_deterministic(self):
        rng = np.random.default_rng(14)
        inst = random_instance(rng)
        assert solve_exact(inst) == solve_exact(inst)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), bump=st.floats(0.0, 10.0))
def test_relaxing_capacity_never_hurts(seed, bump):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_sets=5, max_items=3, max_dims=3)
    base = solve_exact(inst)
    relaxed = solve_exact(
        MckpInstance.build(
            inst.costs, inst.weights, [c + bump for c in inst.capacity]
        )
    )
    if base.feasible:
        assert relaxed.feasible
        assert relaxed.objective <= base.objective + 1e-9


def test_solution_always_respects_capacity():
    rng = np.random.default_rng(15)
    for _ in range(100):
        inst = random_instance(rng, max_sets=8)
        sol = solve_exact(inst)
        if sol.feasible:
            total = np.zeros(inst.n_dims)
            for s, i in enumerate(sol.chosen):
                total += np.asarray(inst.weights[s][i])
            assert (total <= np.asarray(inst.capacity) + 1e-9).all()
            assert len(sol.chosen) == inst.n_sets


def test_json_round_trip():
    rng = np.random.default_rng(16)
    inst = random_instance(rng)
    assert MckpInstance.from_json(inst.to_json()) == inst
    with pytest.raises(ValueError):
        MckpInstance.from_json('{"format": "other", "version": 1}')


def test_validation_rejects_bad_shapes():
    with pytest.raises(ValueError):
        MckpInstance.build([[]], [[]], [1.0])
    with pytest.raises(ValueError):
        MckpInstance.build([[1.0]], [[[1.0, 2.0]]], [1.0])
