"""Wildcard match algebra over a finite packet universe.

Packets are (in_port, src, dst) triples from small discrete domains.  A match
wildcards any subset of the three fields (all-or-nothing per field, no bit
masks).  Regions are unions of match cubes minus excluded cubes and are the
working representation for conflict-free cover computation and for the
template derivation that groups rules by ingress port.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

WILDCARD = None

_REST = object()  # quotient class for domain values not named by any match


@dataclass(frozen=True)
class Match:
    """Header predicate: each field is a concrete value or a full wildcard."""

    in_port: int | None = None
    src: int | None = None
    dst: int | None = None

    @property
    def fields(self) -> tuple:
        return (self.in_port, self.src, self.dst)

    def is_wildcard(self) -> bool:
        return all(f is None for f in self.fields)

    def __str__(self):
        return "({})".format(
            ", ".join("*" if f is None else str(f) for f in self.fields)
        )


@dataclass(frozen=True)
class PacketSpace:
    """Finite domains for the three match fields."""

    in_ports: tuple[int, ...]
    srcs: tuple[int, ...]
    dsts: tuple[int, ...]

    @property
    def domains(self) -> tuple[tuple[int, ...], ...]:
        return (self.in_ports, self.srcs, self.dsts)

    def size(self) -> int:
        return len(self.in_ports) * len(self.srcs) * len(self.dsts)

    def packets(self):
        """Iterate every packet in the universe (use only on small spaces)."""
        return itertools.product(self.in_ports, self.srcs, self.dsts)


def matches_packet(m: Match, z: tuple) -> bool:
    """True iff every non-wildcard field of ``m`` equals the packet's field."""
    return all(mf is None or mf == zf for mf, zf in zip(m.fields, z))


def cube_intersection(m1: Match, m2: Match) -> Match | None:
    """Intersection of two match cubes, or None when they are disjoint."""
    out = []
    for a, b in zip(m1.fields, m2.fields):
        if a is None:
            out.append(b)
        elif b is None or a == b:
            out.append(a)
        else:
            return None
    return Match(*out)


@dataclass(frozen=True)
class Region:
    """Packet set given as a union of cubes minus a union of excluded cubes.

    Membership is the contract: a packet belongs to the region iff some cube
    matches it and no excluded cube does.  No canonical form is maintained.
    """

    cubes: tuple[Match, ...] = ()
    excluded: tuple[Match, ...] = ()

    @classmethod
    def from_match(cls, m: Match) -> "Region":
        return cls(cubes=(m,))

    @classmethod
    def empty(cls) -> "Region":
        return cls()

    def contains(self, z: tuple) -> bool:
        return any(matches_packet(c, z) for c in self.cubes) and not any(
            matches_packet(e, z) for e in self.excluded
        )

    def is_empty(self, space: PacketSpace) -> bool:
        """Exact emptiness test on the given finite universe."""
        quot = _Quotient(space, self.cubes + self.excluded)
        return not quot.truth_table(self.contains_classes).any()

    def contains_classes(self, combo: tuple) -> bool:
        """Membership evaluated on a quotient class combination."""
        return any(_covers_combo(c, combo) for c in self.cubes) and not any(
            _covers_combo(e, combo) for e in self.excluded
        )


def intersect(m1: Match, m2: Match) -> Region:
    """Region matched by both cubes; empty when a field has two values."""
    cube = cube_intersection(m1, m2)
    return Region.empty() if cube is None else Region.from_match(cube)


def _covers_combo(m: Match, combo: tuple) -> bool:
    # A class is either a concrete domain value or the _REST marker; a
    # concrete match field never covers _REST.
    for mf, cls in zip(m.fields, combo):
        if mf is None:
            continue
        if cls is _REST or cls != mf:
            return False
    return True


class _Quotient:
    """Per-field equivalence classes induced by a set of matches.

    All packets inside one class combination are matched identically by every
    involved cube, so region algebra is exact on the (small) class grid.
    """

    def __init__(self, space: PacketSpace | None, matches):
        self.classes = []
        self.weights = []
        self.rest_values = []
        for fi in range(3):
            values = sorted({m.fields[fi] for m in matches} - {None})
            if space is not None:
                domain = set(space.domains[fi])
                values = [v for v in values if v in domain]
                rest = len(domain) - len(values)
                classes = list(values) + ([_REST] if rest > 0 else [])
                weights = [1] * len(values) + ([rest] if rest > 0 else [])
                rest_values = sorted(domain - set(values))
            else:
                # Symbolic mode: assume a non-empty remainder class so that
                # conclusions hold for every possible domain.
                classes = list(values) + [_REST]
                weights = [1] * len(values) + [1]
                rest_values = None
            self.classes.append(classes)
            self.weights.append(weights)
            self.rest_values.append(rest_values)

    def combos(self):
        return itertools.product(*self.classes)

    def truth_table(self, predicate) -> np.ndarray:
        shape = tuple(len(c) for c in self.classes)
        out = np.zeros(shape, dtype=bool)
        for idx, combo in zip(itertools.product(*map(range, shape)), self.combos()):
            out[idx] = predicate(combo)
        return out


def region_update(
    z_agg: Region, z_i: Region, z_int: Region, space: PacketSpace | None = None
) -> Region:
    """Merge step of the cover scan: (z_agg minus z_int) union (z_i minus z_int).

    Expects z_int to be contained in both inputs.  The result is returned in
    cube-list form whenever that form can express it exactly; otherwise the
    region is expanded into concrete cubes on ``space`` (required then).
    """
    involved = (
        z_agg.cubes + z_agg.excluded + z_i.cubes + z_i.excluded
        + z_int.cubes + z_int.excluded
    )
    quot = _Quotient(None, involved)

    def target(combo):
        inter = z_int.contains_classes(combo)
        return (z_agg.contains_classes(combo) and not inter) or (
            z_i.contains_classes(combo) and not inter
        )

    want = quot.truth_table(target)
    if not want.any():
        return Region.empty()

    candidates = [
        Region(z_agg.cubes + z_i.cubes, z_agg.excluded + z_i.excluded + z_int.cubes),
        Region(z_agg.cubes + z_i.cubes, z_int.cubes),
        Region(z_agg.cubes + z_i.cubes, z_agg.excluded + z_i.excluded),
    ]
    for cand in candidates:
        if (quot.truth_table(cand.contains_classes) == want).all():
            return cand

    if space is None:
        raise ValueError(
            "result is not expressible as cubes minus excluded cubes; "
            "pass the packet space to expand it on the finite universe"
        )
    return _expand_on_space(z_agg, z_i, z_int, space, involved)


_EXPANSION_LIMIT = 65536


def _expand_on_space(z_agg, z_i, z_int, space, involved):
    quot = _Quotient(space, involved)

    def target(combo):
        inter = z_int.contains_classes(combo)
        return (z_agg.contains_classes(combo) and not inter) or (
            z_i.contains_classes(combo) and not inter
        )

    cubes = []
    for combo, weight in zip(quot.combos(), itertools.product(*quot.weights)):
        if 0 in weight or not target(combo):
            continue
        per_field = []
        for fi, cls in enumerate(combo):
            per_field.append(quot.rest_values[fi] if cls is _REST else [cls])
        for values in itertools.product(*per_field):
            cubes.append(Match(*values))
            if len(cubes) > _EXPANSION_LIMIT:
                raise ValueError("expanded region exceeds the cube limit")
    return Region(cubes=tuple(cubes))


@dataclass(frozen=True)
class FlowRule:
    """One installed flow rule; the unit of delegation accounting.

    ``total_bits`` and ``bitrate`` describe the traffic the rule processes:
    the flow transmits at ``bitrate`` from install time until its bits are
    exhausted or the rule is removed, whichever comes first.
    """

    id: int
    match: Match
    priority: int
    install_time: float
    remove_time: float
    total_bits: float = 0.0
    bitrate: float = 1.0
    owner_switch: int = 0
    is_default: bool = False
    flow_id: int | None = None
    template_hint: int | None = None

    def __post_init__(self):
        if not self.is_default and self.install_time >= self.remove_time:
            raise ValueError(f"rule {self.id}: install must precede removal")
        if self.priority < 0:
            raise ValueError(f"rule {self.id}: negative priority")

    @property
    def install_slot(self) -> int:
        return int(np.floor(self.install_time))

    @property
    def remove_slot(self) -> int:
        return int(np.ceil(self.remove_time))

    def active_in_slot(self, t: int) -> bool:
        return self.install_slot <= t < self.remove_slot

    def installed_in_slot(self, t: int) -> bool:
        return t == self.install_slot

    def traffic_end(self) -> float:
        if self.bitrate <= 0:
            return self.install_time
        return self.install_time + min(
            self.total_bits / self.bitrate, self.remove_time - self.install_time
        )

    def bits_in_slot(self, t: int) -> float:
        """Bits processed by this rule during slot [t, t+1)."""
        lo = max(float(t), self.install_time)
        hi = min(float(t + 1), self.traffic_end())
        return self.bitrate * max(0.0, hi - lo)


def rule_order(rule: FlowRule) -> tuple:
    """Total match-precedence order: priority first, then age, then id."""
    return (-rule.priority, rule.install_time, rule.id)


def winning_rule(rules, z: tuple) -> FlowRule | None:
    """Rule that processes packet ``z``: best-precedence match, default last."""
    best = None
    for r in rules:
        if matches_packet(r.match, z):
            if best is None or (r.is_default, rule_order(r)) < (
                best.is_default,
                rule_order(best),
            ):
                best = r
    return best


def cover_set(
    agg_match: Match,
    agg_priority: int,
    rules,
    space: PacketSpace,
) -> set[int]:
    """Conflict-free cover set of an aggregation match over one rule table.

    Scans the non-default rules in precedence order; a rule at or below the
    aggregation priority joins the cover when its cube still intersects the
    evolving aggregation region, which is then updated by the symmetric
    difference with the rule's cube.  Exact on the given finite universe.
    """
    scan = sorted((r for r in rules if not r.is_default), key=rule_order)
    quot = _Quotient(space, [agg_match] + [r.match for r in scan])
    shape = tuple(len(c) for c in quot.classes)
    if 0 in shape:
        return set()

    def mask(m: Match) -> np.ndarray:
        vecs = []
        for fi in range(3):
            mf = m.fields[fi]
            if mf is None:
                vecs.append(np.ones(shape[fi], dtype=bool))
            else:
                v = np.zeros(shape[fi], dtype=bool)
                try:
                    v[quot.classes[fi].index(mf)] = True
                except ValueError:
                    pass  # value outside the domain: cube slice is empty
                vecs.append(v)
        return (
            vecs[0][:, None, None] & vecs[1][None, :, None] & vecs[2][None, None, :]
        )

    z_agg = mask(agg_match)
    chosen: set[int] = set()
    for r in scan:
        if agg_priority < r.priority:
            continue
        z_i = mask(r.match)
        if (z_agg & z_i).any():
            chosen.add(r.id)
            z_agg ^= z_i
    return chosen


@dataclass(frozen=True)
class DelegationTemplate:
    """Statically derived group of rules that can be relocated together.

    Template 0 is the immobile bucket: rules whose ingress port cannot be
    pinned down stay there and are never offered to the optimizer.
    """

    id: int
    switch: int
    agg_match: Match
    agg_priority: int
    rule_ids: frozenset[int]
    relocatable: bool = True
    port: int | None = None

    def cover_at(self, rules_by_id, t: int) -> set[int]:
        """Member rules active in slot ``t`` (the time-indexed cover set)."""
        return {
            rid for rid in self.rule_ids if rules_by_id[rid].active_in_slot(t)
        }


IMMOBILE_TEMPLATE = 0


@dataclass(frozen=True)
class TemplateDerivation:
    templates: tuple[DelegationTemplate, ...]
    diagnostics: tuple[str, ...] = ()

    def by_id(self) -> dict[int, DelegationTemplate]:
        return {t.id: t for t in self.templates}


def derive_templates(
    switch: int,
    ports,
    rules,
    packet_in_log: dict[int, int] | None = None,
) -> TemplateDerivation:
    """Build one template per physical port plus the immobile bucket.

    Rules matching a single ingress port go to that port's template; rules
    without a port in their match fall back to the ingress port logged when
    the rule was installed reactively; everything else (proactive rules,
    explicit port wildcards, contradictory hints) lands in the immobile
    bucket.  Every non-default rule is placed in exactly one template.
    """
    packet_in_log = packet_in_log or {}
    ports = sorted(ports)
    port_to_tid = {p: i + 1 for i, p in enumerate(ports)}
    members: dict[int, set[int]] = {tid: set() for tid in port_to_tid.values()}
    members[IMMOBILE_TEMPLATE] = set()
    diagnostics = []

    live = [r for r in rules if not r.is_default]
    agg_priority = max((r.priority for r in live), default=0)

    for r in sorted(live, key=lambda r: r.id):
        port = r.match.in_port
        logged = packet_in_log.get(r.id)
        if port is not None:
            if port not in port_to_tid:
                diagnostics.append(
                    f"rule {r.id}: ingress port {port} unknown on switch {switch}"
                )
                members[IMMOBILE_TEMPLATE].add(r.id)
            elif logged is not None and logged != port:
                diagnostics.append(
                    f"rule {r.id}: match port {port} contradicts logged port {logged}"
                )
                members[IMMOBILE_TEMPLATE].add(r.id)
            else:
                members[port_to_tid[port]].add(r.id)
        elif logged is not None and logged in port_to_tid:
            members[port_to_tid[logged]].add(r.id)
        else:
            if logged is not None:
                diagnostics.append(
                    f"rule {r.id}: logged port {logged} unknown on switch {switch}"
                )
            members[IMMOBILE_TEMPLATE].add(r.id)

    templates = [
        DelegationTemplate(
            id=IMMOBILE_TEMPLATE,
            switch=switch,
            agg_match=Match(),
            agg_priority=agg_priority,
            rule_ids=frozenset(members[IMMOBILE_TEMPLATE]),
            relocatable=False,
            port=None,
        )
    ]
    for p in ports:
        tid = port_to_tid[p]
        templates.append(
            DelegationTemplate(
                id=tid,
                switch=switch,
                agg_match=Match(in_port=p),
                agg_priority=agg_priority,
                rule_ids=frozenset(members[tid]),
                relocatable=True,
                port=p,
            )
        )
    return TemplateDerivation(templates=tuple(templates), diagnostics=tuple(diagnostics))
