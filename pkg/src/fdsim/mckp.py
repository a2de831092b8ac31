"""Multi-dimensional multiple-choice 0-1 knapsack: exact branch-and-bound
plus a brute-force reference solver.

Instances pick exactly one item per choice set, minimize total cost, and must
respect a vector capacity componentwise.  Both optimization steps of the
delegation algorithm reduce to this problem shape.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass

import numpy as np

FEASIBILITY_TOL = 1e-9

BRUTE_FORCE_GUARD = 10**7


@dataclass(frozen=True)
class MckpInstance:
    """costs[s][i] and weights[s][i][dim] for item i of choice set s."""

    costs: tuple[tuple[float, ...], ...]
    weights: tuple[tuple[tuple[float, ...], ...], ...]
    capacity: tuple[float, ...]

    def __post_init__(self):
        if len(self.costs) != len(self.weights):
            raise ValueError("costs and weights must have one entry per choice set")
        dim = len(self.capacity)
        for s, (cs, ws) in enumerate(zip(self.costs, self.weights)):
            if not cs:
                raise ValueError(f"choice set {s} is empty")
            if len(cs) != len(ws):
                raise ValueError(f"choice set {s}: cost/weight length mismatch")
            for w in ws:
                if len(w) != dim:
                    raise ValueError(f"choice set {s}: weight dimension != capacity")

    @property
    def n_sets(self) -> int:
        return len(self.costs)

    @property
    def n_dims(self) -> int:
        return len(self.capacity)

    def search_size(self) -> int:
        size = 1
        for cs in self.costs:
            size *= len(cs)
        return size

    @classmethod
    def build(cls, costs, weights, capacity) -> "MckpInstance":
        return cls(
            costs=tuple(tuple(float(c) for c in cs) for cs in costs),
            weights=tuple(
                tuple(tuple(float(x) for x in w) for w in ws) for ws in weights
            ),
            capacity=tuple(float(c) for c in capacity),
        )

    def to_json(self) -> str:
        """One-document dump for offline debugging."""
        return json.dumps(
            {
                "format": "fdsim-mckp",
                "version": 1,
                "capacity": list(self.capacity),
                "choice_sets": [
                    {"costs": list(cs), "weights": [list(w) for w in ws]}
                    for cs, ws in zip(self.costs, self.weights)
                ],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MckpInstance":
        doc = json.loads(text)
        if doc.get("format") != "fdsim-mckp" or doc.get("version") != 1:
            raise ValueError("not a version-1 mckp instance document")
        return cls.build(
            costs=[s["costs"] for s in doc["choice_sets"]],
            weights=[s["weights"] for s in doc["choice_sets"]],
            capacity=doc["capacity"],
        )


@dataclass(frozen=True)
class MckpSolution:
    chosen: tuple[int, ...]
    objective: float
    feasible: bool
    optimal: bool = True

    @classmethod
    def infeasible(cls) -> "MckpSolution":
        return cls(chosen=(), objective=float("inf"), feasible=False, optimal=True)


def _check_feasible(inst: MckpInstance, chosen) -> bool:
    total = np.zeros(inst.n_dims)
    for s, i in enumerate(chosen):
        total += np.asarray(inst.weights[s][i])
    return bool((total <= np.asarray(inst.capacity) + FEASIBILITY_TOL).all())


def solve_brute_force(inst: MckpInstance, guard: int = BRUTE_FORCE_GUARD) -> MckpSolution:
    """Exhaustive reference optimum; guarded against combinatorial blowup."""
    if inst.search_size() > guard:
        raise ValueError(
            f"search space {inst.search_size()} exceeds brute-force guard {guard}"
        )
    capacity = np.asarray(inst.capacity)
    weights = [
        [np.asarray(w, dtype=float) for w in ws] for ws in inst.weights
    ]
    best_cost = float("inf")
    best_combo = None
    for combo in itertools.product(*[range(len(c)) for c in inst.costs]):
        cost = 0.0
        total = np.zeros(inst.n_dims)
        for s, i in enumerate(combo):
            cost += inst.costs[s][i]
            total += weights[s][i]
        if cost < best_cost - 1e-12 and (total <= capacity + FEASIBILITY_TOL).all():
            best_cost = cost
            best_combo = combo
    if best_combo is None:
        return MckpSolution.infeasible()
    return MckpSolution(chosen=best_combo, objective=best_cost, feasible=True)


def solve_exact(inst: MckpInstance, time_budget: float | None = None) -> MckpSolution:
    """Depth-first branch and bound.

    The lower bound adds the cheapest possible completion of the remaining
    choice sets; infeasible subtrees are cut with the componentwise minimum
    completion weight.  Returns the best incumbent flagged non-optimal when
    the time budget runs out before the search finishes.
    """
    n = inst.n_sets
    if n == 0:
        feasible = bool((np.zeros(inst.n_dims) <= np.asarray(inst.capacity) + FEASIBILITY_TOL).all())
        if feasible:
            return MckpSolution(chosen=(), objective=0.0, feasible=True)
        return MckpSolution.infeasible()

    capacity = np.asarray(inst.capacity, dtype=float)
    costs = [np.asarray(c, dtype=float) for c in inst.costs]
    weights = [np.asarray(w, dtype=float) for w in inst.weights]  # (items, dims)

    # suffix bounds: cheapest completion cost and lightest completion weight
    min_cost_suffix = np.zeros(n + 1)
    min_weight_suffix = np.zeros((n + 1, inst.n_dims))
    for s in range(n - 1, -1, -1):
        min_cost_suffix[s] = min_cost_suffix[s + 1] + costs[s].min()
        min_weight_suffix[s] = min_weight_suffix[s + 1] + weights[s].min(axis=0)

    best_cost = float("inf")
    best_combo = None
    deadline = None if time_budget is None else time.perf_counter() + time_budget
    nodes = 0
    out_of_time = False
    chosen = [0] * n

    def dfs(s: int, cost: float, load: np.ndarray):
        nonlocal best_cost, best_combo, nodes, out_of_time
        nodes += 1
        if out_of_time or (
            deadline is not None and nodes % 1024 == 0 and time.perf_counter() > deadline
        ):
            out_of_time = True
            return
        if cost + min_cost_suffix[s] > best_cost - 1e-12 and best_combo is not None:
            return
        if ((load + min_weight_suffix[s]) > capacity + FEASIBILITY_TOL).any():
            return
        if s == n:
            if cost < best_cost - 1e-12:
                best_cost = cost
                best_combo = tuple(chosen)
            return
        for i in range(len(costs[s])):
            chosen[s] = i
            dfs(s + 1, cost + costs[s][i], load + weights[s][i])
        chosen[s] = 0

    dfs(0, 0.0, np.zeros(inst.n_dims))

    if best_combo is None:
        if out_of_time:
            return MckpSolution(chosen=(), objective=float("inf"), feasible=False,
                                optimal=False)
        return MckpSolution.infeasible()
    return MckpSolution(
        chosen=best_combo,
        objective=best_cost,
        feasible=_check_feasible(inst, best_combo),
        optimal=not out_of_time,
    )
