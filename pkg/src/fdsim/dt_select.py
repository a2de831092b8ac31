"""Template selection for one bottlenecked switch.

Per optimization period this step decides which delegation templates to
activate over a short future horizon.  Selecting a template redirects the
rules installing under it to a remote switch (and keeps previously redirected
ones there), which relieves the local table at the price of link traffic and
control messages.  The decision is a small multiple-choice knapsack: one
binary choice per template, per-slot capacity constraints, overhead cost.

Three solvers share the coefficient machinery: the production heuristic that
keeps its decision constant across the horizon, an exact per-slot baseline
that enumerates all select/unselect patterns, and a threshold-driven greedy
mimicking earlier delegation systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .match import FlowRule, IMMOBILE_TEMPLATE
from .mckp import MckpInstance, solve_exact


def compute_activity(rule: FlowRule, t: int) -> tuple[int, int]:
    """(active, installed) indicators of a rule for slot ``t``."""
    active = int(rule.active_in_slot(t))
    installed = int(rule.installed_in_slot(t))
    return active, installed


@dataclass(frozen=True)
class DelegationHistory:
    """Outcome of the previous period: which templates were active and which
    rules they had relocated (and may still hold) at the remote side."""

    selected: frozenset[int] = frozenset()
    relocated: dict[int, frozenset[int]] = field(default_factory=dict)

    def __post_init__(self):
        extra = set(self.relocated) - set(self.selected)
        if any(self.relocated[t] for t in extra):
            raise ValueError("relocated rules recorded for unselected templates")

    @classmethod
    def empty(cls) -> "DelegationHistory":
        return cls()

    def was_selected(self, template_id: int) -> bool:
        return template_id in self.selected

    def relocated_rules(self, template_id: int) -> frozenset[int]:
        return self.relocated.get(template_id, frozenset())


class TemplateActivity:
    """Per-template rule arrays for O(log n) horizon queries."""

    def __init__(self, template_id: int, rules):
        self.template_id = template_id
        rules = sorted(rules, key=lambda r: (r.install_slot, r.id))
        self.ids = np.array([r.id for r in rules], dtype=np.int64)
        self.install_slots = np.array([r.install_slot for r in rules], dtype=np.int64)
        self.remove_slots = np.sort(
            np.array([r.remove_slot for r in rules], dtype=np.int64)
        )
        first_bits = np.array(
            [r.bits_in_slot(r.install_slot) for r in rules], dtype=float
        )
        self.first_bits_prefix = np.concatenate([[0.0], np.cumsum(first_bits)])

    def installs_in(self, t: int) -> int:
        lo = np.searchsorted(self.install_slots, t, side="left")
        hi = np.searchsorted(self.install_slots, t, side="right")
        return int(hi - lo)

    def install_ids_in(self, t: int) -> list[int]:
        lo = np.searchsorted(self.install_slots, t, side="left")
        hi = np.searchsorted(self.install_slots, t, side="right")
        return [int(i) for i in self.ids[lo:hi]]

    def install_bits_in(self, t: int) -> float:
        """Install-slot traffic of the rules that appear in slot ``t``."""
        lo = np.searchsorted(self.install_slots, t, side="left")
        hi = np.searchsorted(self.install_slots, t, side="right")
        return float(self.first_bits_prefix[hi] - self.first_bits_prefix[lo])

    def actives_at(self, t: int) -> int:
        started = np.searchsorted(self.install_slots, t, side="right")
        gone = np.searchsorted(self.remove_slots, t, side="right")
        return int(started - gone)


def build_template_activity(templates, rules_by_id) -> dict[int, TemplateActivity]:
    return {
        t.id: TemplateActivity(t.id, [rules_by_id[r] for r in t.rule_ids])
        for t in templates
    }


@dataclass(frozen=True)
class TemplateCoefficients:
    """Utilization and cost coefficients of one template over the horizon.

    ``u01``/``u11`` count relocated rules per slot when the template starts
    fresh / continues from the previous period.  Costs split into the table
    slot for the aggregation rule, detoured traffic (bits), and control
    messages, for the select/keep/drop transitions.  ``installs``,
    ``hist_active``, ``link_new``, ``link_hist`` keep the per-slot terms the
    aggregates are built from; ``install_survival[q, k]`` counts rules
    installed in horizon slot q that are still active in slot k.
    """

    template_id: int
    slots: tuple[int, ...]
    u01: np.ndarray
    u11: np.ndarray
    w_table_01: float
    w_link_01: float
    w_link_11: float
    w_ctrl_01: float
    w_ctrl_10: float
    w_ctrl_11: float
    installs: np.ndarray
    hist_active: np.ndarray
    link_new: np.ndarray
    link_hist: np.ndarray
    install_survival: np.ndarray


def compute_coefficients(
    templates,
    rules_by_id: dict[int, FlowRule],
    history: DelegationHistory,
    slots,
    activity: dict[int, TemplateActivity] | None = None,
) -> dict[int, TemplateCoefficients]:
    """Coefficients for every relocatable template over the horizon slots."""
    slots = list(slots)
    m = len(slots)
    activity = activity or build_template_activity(templates, rules_by_id)
    out = {}
    for tpl in templates:
        if tpl.id == IMMOBILE_TEMPLATE or not tpl.relocatable:
            continue
        act = activity[tpl.id]
        installs = np.array([act.installs_in(t) for t in slots], dtype=float)
        link_new = np.array([act.install_bits_in(t) for t in slots])

        hist_rules = [rules_by_id[r] for r in history.relocated_rules(tpl.id)]
        hist_active = np.array(
            [sum(r.active_in_slot(t) for r in hist_rules) for t in slots],
            dtype=float,
        )
        link_hist = np.array(
            [
                sum(r.bits_in_slot(t) for r in hist_rules if r.active_in_slot(t))
                for t in slots
            ]
        )

        survival = np.zeros((m, m))
        for q in range(m):
            new_ids = act.install_ids_in(slots[q])
            for k in range(q, m):
                survival[q, k] = sum(
                    rules_by_id[i].active_in_slot(slots[k]) for i in new_ids
                )

        out[tpl.id] = TemplateCoefficients(
            template_id=tpl.id,
            slots=tuple(slots),
            u01=np.cumsum(installs),
            u11=np.cumsum(installs + hist_active),
            w_table_01=1.0,
            w_link_01=float(link_new.sum()),
            w_link_11=float((link_new + link_hist).sum()),
            w_ctrl_01=1.0 + float(installs.sum()),
            w_ctrl_10=1.0 + float(hist_active[0]) if m else 1.0,
            w_ctrl_11=float(installs.sum()),
            installs=installs,
            hist_active=hist_active,
            link_new=link_new,
            link_hist=link_hist,
            install_survival=survival,
        )
    return out


@dataclass(frozen=True)
class CostWeights:
    """Relative weight of the three overhead classes in the objective.

    The raw sum (all ones) is the default; ``normalize`` rescales each class
    by its maximum over the templates before weighting, for experiments where
    unit mixing matters.
    """

    table: float = 1.0
    link: float = 1.0
    ctrl: float = 1.0
    normalize: bool = False


def _class_scales(coeffs, weights: CostWeights):
    if not weights.normalize:
        return 1.0, 1.0, 1.0
    max_table = max((c.w_table_01 for c in coeffs.values()), default=1.0)
    max_link = max(
        (max(c.w_link_01, c.w_link_11) for c in coeffs.values()), default=1.0
    )
    max_ctrl = max(
        (max(c.w_ctrl_01, c.w_ctrl_10, c.w_ctrl_11) for c in coeffs.values()),
        default=1.0,
    )
    return (
        1.0 / max(max_table, 1e-12),
        1.0 / max(max_link, 1e-12),
        1.0 / max(max_ctrl, 1e-12),
    )


def _case_costs(c: TemplateCoefficients, hx: bool, weights: CostWeights, scales):
    st, sl, sc = scales
    if hx:
        keep = weights.link * sl * c.w_link_11 + weights.ctrl * sc * c.w_ctrl_11
        drop = weights.ctrl * sc * c.w_ctrl_10
        return drop, keep
    select = (
        weights.table * st * c.w_table_01
        + weights.link * sl * c.w_link_01
        + weights.ctrl * sc * c.w_ctrl_01
    )
    return 0.0, select


@dataclass(frozen=True)
class DtSelection:
    """Outcome of one template-selection run for one switch."""

    switch: int
    selected: frozenset[int]
    objective: float
    predicted_after: np.ndarray  # per-slot utilization if applied
    residual_overflow: np.ndarray  # per-slot rules no selection could cover
    feasible: bool
    bulk_relocate: bool = False  # greedy moves existing rules, not just new ones

    def overflow_total(self) -> float:
        return float(self.residual_overflow.sum())


def _relief_matrix(coeffs, history, template_ids, m):
    relief = np.zeros((len(template_ids), m))
    for i, tid in enumerate(template_ids):
        c = coeffs[tid]
        relief[i] = c.u11 if history.was_selected(tid) else c.u01
    return relief


def solve_heuristic(
    coeffs: dict[int, TemplateCoefficients],
    capacity: float,
    utilization: np.ndarray,
    history: DelegationHistory,
    switch: int = 0,
    weights: CostWeights = CostWeights(),
) -> DtSelection:
    """Constant-over-horizon selection via a two-item-per-template knapsack.

    The per-slot knapsack capacity is the (typically negative) headroom
    ``capacity - utilization``; selecting a template contributes its relief as
    negative weight.  When even selecting everything cannot restore headroom
    the all-selected configuration is returned and the remaining excess is
    reported as overflow.
    """
    template_ids = sorted(coeffs)
    utilization = np.asarray(utilization, dtype=float)
    m = len(utilization)
    relief = _relief_matrix(coeffs, history, template_ids, m)
    scales = _class_scales(coeffs, weights)

    if template_ids:
        costs, item_weights = [], []
        for i, tid in enumerate(template_ids):
            off_cost, on_cost = _case_costs(
                coeffs[tid], history.was_selected(tid), weights, scales
            )
            costs.append([off_cost, on_cost])
            item_weights.append([[0.0] * m, list(-relief[i])])
        inst = MckpInstance.build(
            costs, item_weights, list(capacity - utilization)
        )
        sol = solve_exact(inst)
    else:
        sol = None

    if sol is not None and sol.feasible:
        selected = frozenset(
            tid for tid, pick in zip(template_ids, sol.chosen) if pick == 1
        )
        chosen_relief = sum(
            (relief[i] for i, tid in enumerate(template_ids) if tid in selected),
            np.zeros(m),
        )
        after = utilization - chosen_relief
        return DtSelection(
            switch=switch,
            selected=selected,
            objective=float(sol.objective),
            predicted_after=after,
            residual_overflow=np.maximum(0.0, after - capacity),
            feasible=True,
        )

    # infeasible period: relocate everything and report what remains
    selected = frozenset(template_ids)
    after = utilization - relief.sum(axis=0)
    objective = sum(
        _case_costs(coeffs[tid], history.was_selected(tid), weights, scales)[1]
        for tid in template_ids
    )
    return DtSelection(
        switch=switch,
        selected=selected,
        objective=float(objective),
        predicted_after=after,
        residual_overflow=np.maximum(0.0, after - capacity),
        feasible=False,
    )


def pattern_coefficients(
    c: TemplateCoefficients, hx: bool, pattern: tuple[int, ...],
    weights: CostWeights = CostWeights(), scales=(1.0, 1.0, 1.0),
) -> tuple[float, np.ndarray]:
    """Cost and per-slot relief of one select/unselect pattern.

    Replays the pattern across the horizon: every activation streak restarts
    the cumulative relocation count, carries the history rules only when it
    extends the previous period's selection, and pays the aggregation-rule
    install, the per-rule redirects, and the reinstall burst on deselection.
    """
    m = len(pattern)
    st, sl, sc = scales
    relief = np.zeros(m)
    cost = 0.0
    prev = 1 if hx else 0
    streak_start = None  # horizon slot where the current streak began
    streak_history = False  # streak continues the previous period's selection
    if hx and m and pattern[0]:
        streak_start, streak_history = 0, True
    for k, a in enumerate(pattern):
        turned_on = (k == 0 and not hx) or (k > 0 and not pattern[k - 1])
        if a and turned_on:
            streak_start, streak_history = k, False
            cost += weights.table * st + weights.ctrl * sc  # aggregation install
        if a:
            cost += weights.ctrl * sc * c.installs[k]
            cost += weights.link * sl * c.link_new[k]
            if streak_history:
                cost += weights.link * sl * c.link_hist[k]
            relief[k] = c.installs[streak_start : k + 1].sum()
            if streak_history:
                relief[k] += c.hist_active[: k + 1].sum()
        else:
            was_on = prev if k == 0 else pattern[k - 1]
            if was_on:
                hosted = 0.0
                if k == 0:
                    hosted = c.hist_active[0]
                else:
                    hosted = c.install_survival[streak_start:k, k].sum()
                    if streak_history:
                        hosted += c.hist_active[k]
                cost += weights.ctrl * sc * (1.0 + hosted)  # removal + reinstalls
        prev = a
    return float(cost), relief


@dataclass(frozen=True)
class BaselineSelection:
    """Per-slot optimal selection from the pattern-enumerating baseline."""

    switch: int
    selected_by_slot: tuple[frozenset[int], ...]
    objective: float
    feasible: bool
    residual_overflow: np.ndarray

    @property
    def selected(self) -> frozenset[int]:
        """Templates active in the first slot (what a period actually applies)."""
        return self.selected_by_slot[0] if self.selected_by_slot else frozenset()


MAX_BASELINE_TEMPLATES = 14
MAX_BASELINE_SLOTS = 5


def solve_exact_baseline(
    coeffs: dict[int, TemplateCoefficients],
    capacity: float,
    utilization: np.ndarray,
    history: DelegationHistory,
    switch: int = 0,
    weights: CostWeights = CostWeights(),
) -> BaselineSelection:
    """Optimal per-slot selection over all 2^m patterns per template.

    Exponential in the horizon length, hence guarded; this is the reference
    the constant-decision heuristic is compared against.
    """
    template_ids = sorted(coeffs)
    utilization = np.asarray(utilization, dtype=float)
    m = len(utilization)
    if len(template_ids) > MAX_BASELINE_TEMPLATES:
        raise ValueError(
            f"{len(template_ids)} templates exceed the baseline guard "
            f"({MAX_BASELINE_TEMPLATES})"
        )
    if m > MAX_BASELINE_SLOTS:
        raise ValueError(f"horizon {m} exceeds the baseline guard ({MAX_BASELINE_SLOTS})")

    scales = _class_scales(coeffs, weights)
    patterns = [
        tuple((code >> k) & 1 for k in range(m)) for code in range(2**m)
    ]
    costs, item_weights = [], []
    per_template = []
    for tid in template_ids:
        hx = history.was_selected(tid)
        cs, ws, reliefs = [], [], []
        for pat in patterns:
            cost, relief = pattern_coefficients(coeffs[tid], hx, pat, weights, scales)
            cs.append(cost)
            ws.append(list(-relief))
            reliefs.append(relief)
        costs.append(cs)
        item_weights.append(ws)
        per_template.append(reliefs)

    if template_ids:
        inst = MckpInstance.build(costs, item_weights, list(capacity - utilization))
        sol = solve_exact(inst)
    else:
        sol = None

    if sol is not None and sol.feasible:
        chosen_patterns = [patterns[i] for i in sol.chosen]
        after = utilization.copy()
        for reliefs, i in zip(per_template, sol.chosen):
            after -= reliefs[i]
        by_slot = tuple(
            frozenset(
                tid
                for tid, pat in zip(template_ids, chosen_patterns)
                if pat[k] == 1
            )
            for k in range(m)
        )
        return BaselineSelection(
            switch=switch,
            selected_by_slot=by_slot,
            objective=float(sol.objective),
            feasible=True,
            residual_overflow=np.maximum(0.0, after - capacity),
        )

    # same degradation as the heuristic: everything on, all slots
    after = utilization.copy()
    objective = 0.0
    for reliefs, cs in zip(per_template, costs):
        after -= reliefs[-1]  # last pattern is all-ones
        objective += cs[-1]
    by_slot = tuple(frozenset(template_ids) for _ in range(m))
    return BaselineSelection(
        switch=switch,
        selected_by_slot=by_slot,
        objective=float(objective),
        feasible=False,
        residual_overflow=np.maximum(0.0, after - capacity),
    )


@dataclass(frozen=True)
class GreedyThresholds:
    upper: float = 0.95  # select more templates above this capacity fraction
    lower: float = 0.80  # release templates below this capacity fraction

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError("lower threshold above upper threshold")


def solve_greedy(
    activity: dict[int, TemplateActivity],
    capacity: float,
    utilization: np.ndarray,
    history: DelegationHistory,
    slot: int,
    switch: int = 0,
    thresholds: GreedyThresholds = GreedyThresholds(),
    horizon: int = 1,
) -> DtSelection:
    """Threshold-driven selection mimicking earlier delegation systems.

    Relocates whole current cover sets: above the upper threshold, templates
    join in descending cover size until utilization drops below it; a
    selected template is released only once utilization falls under the lower
    threshold.  No cost optimization happens here.
    """
    utilization = np.asarray(utilization, dtype=float)
    template_ids = sorted(t for t in activity if t != IMMOBILE_TEMPLATE)
    cover = {tid: activity[tid].actives_at(slot) for tid in template_ids}
    selected = set(t for t in history.selected if t in cover)

    effective = utilization[0] - sum(cover[t] for t in selected)
    if effective > thresholds.upper * capacity:
        for tid in sorted(
            (t for t in template_ids if t not in selected),
            key=lambda t: (-cover[t], t),
        ):
            if effective <= thresholds.upper * capacity:
                break
            if cover[tid] == 0:
                continue
            selected.add(tid)
            effective -= cover[tid]
    elif effective < thresholds.lower * capacity:
        for tid in sorted(selected, key=lambda t: (cover[t], t)):
            if effective + cover[tid] <= thresholds.lower * capacity:
                selected.discard(tid)
                effective += cover[tid]

    m = len(utilization)
    relief = np.zeros(m)
    for k in range(m):
        relief[k] = sum(activity[t].actives_at(slot + k) for t in selected)
    after = utilization - relief
    return DtSelection(
        switch=switch,
        selected=frozenset(selected),
        objective=0.0,
        predicted_after=after,
        residual_overflow=np.maximum(0.0, after - capacity),
        feasible=bool((after <= capacity).all()),
        bulk_relocate=True,
    )
