"""Remote switch allocation: placing every selected template.

Runs once per optimization period after all per-switch selections are done.
Each selected template becomes an allocation job; each job picks one remote
switch per active slot (or the virtual backup switch as a last resort) so
that no remote flow table and no delegation link is overloaded, minimizing a
traffic-and-churn cost.  The whole step is one multiple-choice knapsack over
per-(switch, slot) table dimensions and per-(directed link, slot) bandwidth
dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mckp import MckpInstance, solve_exact
from .scenario import BACKUP_SWITCH, Topology


@dataclass(frozen=True)
class AllocationJob:
    """One selected template that needs a remote home over its active slots."""

    switch: int
    template_id: int
    slots: tuple[int, ...]  # consecutive absolute slots
    table_demand: tuple[float, ...]  # rules hosted remotely, per slot
    link_demand: tuple[float, ...]  # bit/s over the delegation link, per slot

    def __post_init__(self):
        if not self.slots:
            raise ValueError("job needs at least one active slot")
        if list(self.slots) != list(range(self.slots[0], self.slots[-1] + 1)):
            raise ValueError("job slots must be consecutive")
        if len(self.table_demand) != len(self.slots) or len(self.link_demand) != len(
            self.slots
        ):
            raise ValueError("demand vectors must cover every job slot")

    @property
    def job_id(self) -> tuple[int, int]:
        return (self.switch, self.template_id)


@dataclass(frozen=True)
class AllocationAssignment:
    job_id: tuple[int, int]
    remotes: tuple[int, ...]  # one per job slot; BACKUP_SWITCH allowed
    cost: float = 0.0

    def uses_backup(self) -> bool:
        return any(r == BACKUP_SWITCH for r in self.remotes)


@dataclass(frozen=True)
class ResourceState:
    """Predicted load of remote candidates for the current period.

    Table loads must already exclude the rules currently hosted for the jobs
    being (re-)decided, so that a continuing job does not count against
    itself.
    """

    table_capacity: dict[int, int]
    link_capacity: float
    table_load: dict[tuple[int, int], float] = field(default_factory=dict)
    link_load: dict[tuple[int, int, int], float] = field(default_factory=dict)

    def table_headroom(self, r: int, t: int) -> float:
        return self.table_capacity.get(r, 0) - self.table_load.get((r, t), 0.0)

    def directed_load(self, a: int, b: int, t: int) -> float:
        return self.link_load.get((a, b, t), 0.0)

    def link_fits(self, a: int, b: int, t: int, demand: float) -> bool:
        return (
            self.directed_load(a, b, t) + demand <= self.link_capacity + 1e-9
            and self.directed_load(b, a, t) + demand <= self.link_capacity + 1e-9
        )

    def load_factor(self, a: int, b: int, t: int) -> float:
        if self.link_capacity <= 0:
            return 0.0
        return self.directed_load(a, b, t) / self.link_capacity


def build_jobs(selections: dict[int, "object"], horizon_slots) -> list[AllocationJob]:
    """Jobs from the per-switch selection results.

    ``selections`` maps a switch to an object with per-template demand
    arrays, as produced by the engine: {template_id: (table_demand,
    link_demand)} plus the absolute horizon slots.  A template selected in
    several slots forms a single job over its first consecutive run.
    """
    horizon_slots = list(horizon_slots)
    jobs = []
    for switch in sorted(selections):
        for template_id, (active_mask, table_demand, link_demand) in sorted(
            selections[switch].items()
        ):
            run = _first_run(active_mask)
            if run is None:
                continue
            lo, hi = run
            jobs.append(
                AllocationJob(
                    switch=switch,
                    template_id=template_id,
                    slots=tuple(horizon_slots[lo : hi + 1]),
                    table_demand=tuple(float(x) for x in table_demand[lo : hi + 1]),
                    link_demand=tuple(float(x) for x in link_demand[lo : hi + 1]),
                )
            )
    return jobs


def _first_run(mask) -> tuple[int, int] | None:
    """(start, end) of the first consecutive True run, inclusive."""
    start = None
    for i, on in enumerate(mask):
        if on and start is None:
            start = i
        elif not on and start is not None:
            return (start, i - 1)
    if start is None:
        return None
    return (start, len(mask) - 1)


def build_remote_sets(
    job: AllocationJob, topology: Topology, state: ResourceState
) -> list[list[int]]:
    """Per-slot candidate remotes: physical neighbors with spare table
    capacity for the job's rules and spare bandwidth on both link directions.
    """
    neighbors = topology.switch_neighbors(job.switch)
    sets = []
    for k, t in enumerate(job.slots):
        ok = [
            r
            for r in neighbors
            if state.table_headroom(r, t) >= job.table_demand[k] - 1e-9
            and state.link_fits(job.switch, r, t, job.link_demand[k])
        ]
        sets.append(ok)
    return sets


FULL_MODE_GUARD = 10**4


def enumerate_assignments(
    job: AllocationJob,
    remote_sets: list[list[int]],
    mode: str = "stable",
) -> tuple[list[tuple[int, ...]], bool]:
    """Candidate remote sequences for a job, the all-backup one always last.

    Stable mode only offers a single remote for the whole job (the
    intersection of the per-slot candidate sets); full mode enumerates the
    Cartesian product, downgrading to stable when it would exceed the guard.
    Returns (sequences, downgraded).
    """
    if mode not in ("stable", "full"):
        raise ValueError(f"unknown assignment mode {mode!r}")
    m = len(job.slots)
    downgraded = False
    if mode == "full":
        size = 1
        for s in remote_sets:
            size *= max(1, len(s))
        if size > FULL_MODE_GUARD:
            mode, downgraded = "stable", True

    if mode == "full":
        seqs = []
        if all(remote_sets):
            stack = [()]
            for s in remote_sets:
                stack = [prefix + (r,) for prefix in stack for r in s]
            seqs = stack
    else:
        common = set(remote_sets[0]) if remote_sets else set()
        for s in remote_sets[1:]:
            common &= set(s)
        seqs = [(r,) * m for r in sorted(common)]
    seqs.append((BACKUP_SWITCH,) * m)
    return seqs, downgraded


@dataclass(frozen=True)
class RsAllocConfig:
    mode: str = "stable"
    change_penalty: float | None = None  # None: one average slot of traffic
    bs_penalty: float | None = None  # None: above every non-backup cost
    time_budget: float | None = 5.0


def assignment_cost(
    job: AllocationJob,
    remotes: tuple[int, ...],
    state: ResourceState,
    previous_remote: int | None,
    change_penalty: float,
) -> float:
    """Traffic-weighted cost of one remote sequence.

    Each slot pays the link demand inflated by the current load factor of the
    chosen link; switching remotes mid-sequence or abandoning the previous
    period's remote pays the churn penalty.
    """
    cost = 0.0
    for k, (t, r) in enumerate(zip(job.slots, remotes)):
        if r == BACKUP_SWITCH:
            continue
        cost += job.link_demand[k] * (1.0 + state.load_factor(job.switch, r, t))
    changes = sum(1 for a, b in zip(remotes, remotes[1:]) if a != b)
    if (
        previous_remote is not None
        and remotes
        and remotes[0] != BACKUP_SWITCH
        and remotes[0] != previous_remote
    ):
        changes += 1
    return cost + change_penalty * changes


@dataclass(frozen=True)
class AllocationResult:
    assignments: dict[tuple[int, int], AllocationAssignment]
    objective: float
    optimal: bool
    downgraded_jobs: tuple[tuple[int, int], ...] = ()

    def backup_jobs(self) -> list[tuple[int, int]]:
        return sorted(
            jid for jid, a in self.assignments.items() if a.uses_backup()
        )


def solve_rs_alloc(
    jobs: list[AllocationJob],
    topology: Topology,
    state: ResourceState,
    previous_remotes: dict[tuple[int, int], int] | None = None,
    config: RsAllocConfig = RsAllocConfig(),
) -> AllocationResult:
    """Assign every job one remote sequence, minimizing total cost.

    Weight dimensions are the per-(switch, slot) table headrooms and the
    per-(directed link, slot) bandwidth headrooms actually touched by some
    candidate assignment.  The backup switch consumes no modeled resource and
    carries a prohibitive cost, so it is chosen only when nothing real fits.
    """
    previous_remotes = previous_remotes or {}
    if not jobs:
        return AllocationResult(assignments={}, objective=0.0, optimal=True)

    job_seqs = []
    downgraded = []
    for job in jobs:
        sets = build_remote_sets(job, topology, state)
        seqs, was_downgraded = enumerate_assignments(job, sets, config.mode)
        if was_downgraded:
            downgraded.append(job.job_id)
        job_seqs.append(seqs)

    # resource dimensions touched by any candidate
    table_dims = sorted(
        {
            (r, t)
            for job, seqs in zip(jobs, job_seqs)
            for seq in seqs
            for t, r in zip(job.slots, seq)
            if r != BACKUP_SWITCH
        }
    )
    link_dims = sorted(
        {
            (job.switch, r, t)
            for job, seqs in zip(jobs, job_seqs)
            for seq in seqs
            for t, r in zip(job.slots, seq)
            if r != BACKUP_SWITCH
        }
        | {
            (r, job.switch, t)
            for job, seqs in zip(jobs, job_seqs)
            for seq in seqs
            for t, r in zip(job.slots, seq)
            if r != BACKUP_SWITCH
        }
    )
    table_index = {d: i for i, d in enumerate(table_dims)}
    link_index = {d: len(table_dims) + i for i, d in enumerate(link_dims)}
    n_dims = len(table_dims) + len(link_dims)

    capacity = [0.0] * n_dims
    for (r, t), i in table_index.items():
        capacity[i] = state.table_headroom(r, t)
    for (a, b, t), i in link_index.items():
        capacity[i] = state.link_capacity - state.directed_load(a, b, t)

    costs, weights, seq_lists = [], [], []
    max_real_cost = 0.0
    for job, seqs in zip(jobs, job_seqs):
        penalty = config.change_penalty
        if penalty is None:
            penalty = float(np.mean(job.link_demand)) if job.link_demand else 0.0
        job_costs, job_weights = [], []
        for seq in seqs:
            w = [0.0] * n_dims
            for k, (t, r) in enumerate(zip(job.slots, seq)):
                if r == BACKUP_SWITCH:
                    continue
                w[table_index[(r, t)]] += job.table_demand[k]
                w[link_index[(job.switch, r, t)]] += job.link_demand[k]
                w[link_index[(r, job.switch, t)]] += job.link_demand[k]
            c = assignment_cost(
                job, seq, state, previous_remotes.get(job.job_id), penalty
            )
            if not all(r == BACKUP_SWITCH for r in seq):
                max_real_cost = max(max_real_cost, c)
            job_costs.append(c)
            job_weights.append(w)
        costs.append(job_costs)
        weights.append(job_weights)
        seq_lists.append(seqs)

    bs_penalty = config.bs_penalty
    if bs_penalty is None:
        bs_penalty = (max_real_cost + 1.0) * len(jobs)
    for job_costs, seqs in zip(costs, seq_lists):
        for i, seq in enumerate(seqs):
            if seq and all(r == BACKUP_SWITCH for r in seq):
                job_costs[i] += bs_penalty

    inst = MckpInstance.build(costs, weights, capacity)
    sol = solve_exact(inst, time_budget=config.time_budget)
    if not sol.feasible:
        # cannot happen: the all-backup combination is always feasible
        raise AssertionError("allocation knapsack lost its backup assignments")

    assignments = {}
    objective = 0.0
    for job, seqs, job_costs, pick in zip(jobs, seq_lists, costs, sol.chosen):
        assignments[job.job_id] = AllocationAssignment(
            job_id=job.job_id, remotes=seqs[pick], cost=job_costs[pick]
        )
        objective += job_costs[pick]
    return AllocationResult(
        assignments=assignments,
        objective=float(objective),
        optimal=sol.optimal,
        downgraded_jobs=tuple(downgraded),
    )
