"""Reproducible bottleneck scenario generation.

A scenario is a scale-free switch topology plus per-switch flow rule sets.
Flow arrivals follow a gamma inter-arrival process; bottlenecks are injected
by compressing the inter-arrival times inside a window; traffic volumes come
from a configurable mixture of uniform and log-normal components.  Everything
is driven by a single seed and scenarios serialize to a versioned JSON file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import networkx as nx
import numpy as np

from .match import FlowRule, Match

BACKUP_SWITCH = -1

SCENARIO_FORMAT = "fdsim-scenario"
SCENARIO_VERSION = 1

MAX_RULE_LIFETIME = 35.0  # static cap, seconds
INITIAL_OFFSET = 10.0  # first flow arrives after a quiet lead-in


class ScenarioFormatError(ValueError):
    """Raised when a scenario file has the wrong format or version."""


@dataclass(frozen=True)
class MixtureComponent:
    kind: str  # "uniform" or "lognormal"
    weight: float
    a: float  # uniform: low / lognormal: mean of log
    b: float  # uniform: high / lognormal: sigma of log

    def sample(self, rng) -> float:
        if self.kind == "uniform":
            return float(rng.uniform(self.a, self.b))
        if self.kind == "lognormal":
            return float(rng.lognormal(mean=self.a, sigma=self.b))
        raise ValueError(f"unknown mixture component kind {self.kind!r}")


@dataclass(frozen=True)
class MixtureConfig:
    """Flow-size distribution: weighted uniform / log-normal components."""

    components: tuple[MixtureComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("mixture needs at least one component")
        if any(c.weight <= 0 for c in self.components):
            raise ValueError("mixture weights must be positive")

    def sample(self, rng) -> float:
        weights = np.array([c.weight for c in self.components])
        idx = rng.choice(len(self.components), p=weights / weights.sum())
        return max(1.0, self.components[idx].sample(rng))

    def to_jsonable(self):
        return [[c.kind, c.weight, c.a, c.b] for c in self.components]

    @classmethod
    def from_jsonable(cls, data) -> "MixtureConfig":
        return cls(tuple(MixtureComponent(k, w, a, b) for k, w, a, b in data))


DEFAULT_MIXTURE = MixtureConfig(
    (
        MixtureComponent("uniform", 0.6, 100.0, 1200.0),
        MixtureComponent("lognormal", 0.4, 7.0, 1.2),
    )
)


@dataclass(frozen=True)
class Topology:
    """Switch/host graph with table and link capacities."""

    switches: tuple[int, ...]
    hosts: tuple[int, ...]
    host_attach: tuple[tuple[int, int], ...]  # (host, switch) pairs
    switch_links: tuple[tuple[int, int], ...]  # undirected, a < b
    link_capacity: float
    table_capacity: tuple[tuple[int, int], ...]  # (switch, rules) pairs

    def attach_map(self) -> dict[int, int]:
        return dict(self.host_attach)

    def capacity_map(self) -> dict[int, int]:
        return dict(self.table_capacity)

    def switch_neighbors(self, s: int) -> list[int]:
        out = set()
        for a, b in self.switch_links:
            if a == s:
                out.add(b)
            elif b == s:
                out.add(a)
        return sorted(out)

    def hosts_of(self, s: int) -> list[int]:
        return sorted(h for h, sw in self.host_attach if sw == s)

    def ports(self, s: int) -> dict[int, tuple[str, int]]:
        """Deterministic port table: switch neighbors first, then hosts."""
        table = {}
        idx = 0
        for nb in self.switch_neighbors(s):
            table[idx] = ("switch", nb)
            idx += 1
        for h in self.hosts_of(s):
            table[idx] = ("host", h)
            idx += 1
        return table

    def port_of(self, s: int, kind: str, node: int) -> int:
        for p, entry in self.ports(s).items():
            if entry == (kind, node):
                return p
        raise KeyError(f"switch {s} has no {kind} neighbor {node}")

    def switch_graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.switches)
        g.add_edges_from(self.switch_links)
        return g

    def with_table_capacity(self, capacity: dict[int, int]) -> "Topology":
        return replace(
            self, table_capacity=tuple(sorted((s, int(c)) for s, c in capacity.items()))
        )


@dataclass(frozen=True)
class ScenarioParams:
    """Generation knobs.  Gamma and traffic defaults are calibration
    placeholders: the published measurements behind them are not part of this
    artifact, and all evaluation results are relative to capacity reduction.
    """

    n_switches: int = 12
    hosts_per_switch: int = 3
    ba_m: int = 1
    table_capacity: int = 100_000
    link_capacity: float = 1e9  # bit/s

    n_pairs: int = 1600
    n_iat_scale: float = 1.0
    n_bneck: int = 1
    n_bneck_intensity: float = 200.0  # > 100
    n_bneck_duration: float = 30.0  # seconds
    n_isr: float = 0.75
    n_hs: int = 1
    n_hs_intensity: int = 20
    n_traffic_scale: float = 100.0
    n_lifetime: float = 2.0  # seconds, minimum rule lifetime
    gamma_shape: float = 0.3
    gamma_scale: float = 100.0  # milliseconds
    bitrate_coeff: float = 1.0  # b = round(c * sqrt(bits))
    bneck_jitter: float = 0.05  # relative sigma of the multiplier draws
    horizon_cap: float = 400.0  # seconds, maximum scenario time
    seed: int = 0
    mixture: MixtureConfig = DEFAULT_MIXTURE

    def __post_init__(self):
        if self.n_bneck > 0 and self.n_bneck_intensity <= 100:
            raise ValueError("bottleneck intensity must exceed 100")
        if not 0 <= self.n_isr <= 1:
            raise ValueError("inter-switch ratio must be in [0, 1]")
        if self.n_lifetime > MAX_RULE_LIFETIME:
            raise ValueError(f"minimum lifetime above the {MAX_RULE_LIFETIME}s cap")
        for name in ("n_pairs", "n_switches", "hosts_per_switch", "ba_m", "n_hs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_jsonable(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.to_jsonable() if isinstance(v, MixtureConfig) else v
        return out

    @classmethod
    def from_jsonable(cls, data: dict) -> "ScenarioParams":
        kw = dict(data)
        kw["mixture"] = MixtureConfig.from_jsonable(kw["mixture"])
        return cls(**kw)


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    params: ScenarioParams
    rules: tuple[FlowRule, ...]
    packet_in_log: tuple[tuple[int, int], ...]  # (rule id, ingress port)
    backup_switch: int = BACKUP_SWITCH
    bneck_windows: tuple[tuple[int, int], ...] = ()
    bneck_truncated: bool = False
    hotspot_switches: tuple[int, ...] = ()

    @property
    def scenario_id(self) -> str:
        return f"z{self.params.seed}"

    def rules_of_switch(self, s: int) -> list[FlowRule]:
        return [r for r in self.rules if r.owner_switch == s]

    def rules_by_id(self) -> dict[int, FlowRule]:
        return {r.id: r for r in self.rules}

    def packet_in_map(self) -> dict[int, int]:
        return dict(self.packet_in_log)

    def n_slots(self) -> int:
        live = [r.remove_time for r in self.rules if not r.is_default]
        stop = max(live) if live else 0.0
        return int(math.ceil(min(stop, self.params.horizon_cap)))

    def utilization_matrix(self) -> np.ndarray:
        """Active non-default rules per (switch index, slot), no delegation."""
        slots = self.n_slots()
        index = {s: i for i, s in enumerate(self.topology.switches)}
        diff = np.zeros((len(index), slots + 1), dtype=np.int64)
        for r in self.rules:
            if r.is_default:
                continue
            a = max(0, min(r.install_slot, slots))
            b = max(0, min(r.remove_slot, slots))
            if a < b:
                diff[index[r.owner_switch], a] += 1
                diff[index[r.owner_switch], b] -= 1
        return np.cumsum(diff[:, :-1], axis=1)


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def generate_topology(
    n_switches: int,
    ba_m: int,
    hosts_per_switch: int,
    table_capacity: int,
    link_capacity: float,
    seed: int,
) -> Topology:
    """Preferential-attachment switch graph with uniformly attached hosts."""
    if n_switches < 1 or hosts_per_switch < 0:
        raise ValueError("invalid topology size")
    if n_switches > 1 and not 1 <= ba_m < n_switches:
        raise ValueError("attachment parameter must satisfy 1 <= m < n_switches")
    topo_rng, host_rng = _streams(seed, 2)

    if n_switches == 1:
        links = []
    else:
        g = nx.barabasi_albert_graph(
            n_switches, ba_m, seed=int(topo_rng.integers(0, 2**31))
        )
        links = sorted(tuple(sorted(e)) for e in g.edges())

    n_hosts = n_switches * hosts_per_switch
    attach = [
        (h, int(host_rng.integers(0, n_switches))) for h in range(n_hosts)
    ]
    return Topology(
        switches=tuple(range(n_switches)),
        hosts=tuple(range(n_hosts)),
        host_attach=tuple(attach),
        switch_links=tuple(links),
        link_capacity=float(link_capacity),
        table_capacity=tuple((s, int(table_capacity)) for s in range(n_switches)),
    )


def generate_iat_series(
    k: float, theta: float, n_pairs: int, n_iat_scale: float, rng
) -> np.ndarray:
    """Gamma inter-arrival samples in milliseconds, globally rescaled."""
    if k <= 0 or theta <= 0:
        raise ValueError("gamma parameters must be positive")
    return rng.gamma(shape=k, scale=theta, size=n_pairs) * n_iat_scale


def minimal_window_length(iat_ms: np.ndarray, x: int, duration_s: float) -> int | None:
    """Smallest y with floor(sum(iat[x:x+y+1]) / 1000) >= duration, or None."""
    acc = 0.0
    for y in range(len(iat_ms) - x):
        acc += iat_ms[x + y]
        if math.floor(acc / 1000.0) >= duration_s:
            return y
    return None


def inject_bottlenecks(
    iat_ms: np.ndarray,
    n_bneck: int,
    n_bneck_intensity: float,
    n_bneck_duration: float,
    rng,
    jitter: float = 0.05,
):
    """Compress inter-arrival times inside randomly placed windows.

    Window entries are multiplied by normal draws around 100/intensity; the
    deviation from 1 is tapered linearly toward the window edges so the
    squeeze builds up and decays instead of switching instantaneously.
    Returns the new series, the (start, length) windows, and a truncation
    flag for windows that ran into the end of the series.
    """
    if n_bneck <= 0:
        return iat_ms.copy(), [], False
    if n_bneck_intensity <= 100:
        raise ValueError("bottleneck intensity must exceed 100")
    out = iat_ms.copy()
    mu = 100.0 / n_bneck_intensity
    windows = []
    truncated = False
    for _ in range(n_bneck):
        x = int(rng.integers(0, len(out)))
        y = minimal_window_length(out, x, n_bneck_duration)
        if y is None:
            y = len(out) - 1 - x
            truncated = True
        draws = rng.normal(mu, abs(jitter) * mu, size=y + 1)
        if y == 0:
            taper = np.ones(1)
        else:
            pos = np.arange(y + 1) / y
            taper = 1.0 - np.abs(2.0 * pos - 1.0)
        factors = 1.0 + (draws - 1.0) * taper
        out[x : x + y + 1] *= np.maximum(factors, 1e-6)
        windows.append((x, y))
    return out, windows, truncated


def select_host_pair(
    hosts,
    attach: dict[int, int],
    n_isr: float,
    hotspot_hosts,
    n_hs_intensity: int,
    rng,
) -> tuple[int, int]:
    """Pick a source/destination host pair.

    With probability ``n_isr`` the endpoints sit on different switches.  When
    hotspot hosts are configured the pair is redrawn until the source is a
    hotspot host, giving up after ``n_hs_intensity`` redraws.
    """
    hosts = list(hosts)
    if len(hosts) < 2:
        raise ValueError("need at least two hosts")
    hotspot_hosts = set(hotspot_hosts)
    attempts = max(1, n_hs_intensity + 1) if hotspot_hosts else 1
    pair = None
    for _ in range(attempts):
        cross = rng.random() < n_isr
        h_src = hosts[int(rng.integers(0, len(hosts)))]
        if cross:
            candidates = [h for h in hosts if attach[h] != attach[h_src]]
        else:
            candidates = [h for h in hosts if attach[h] == attach[h_src] and h != h_src]
        if not candidates:
            candidates = [h for h in hosts if h != h_src]
        h_dst = candidates[int(rng.integers(0, len(candidates)))]
        pair = (h_src, h_dst)
        if not hotspot_hosts or h_src in hotspot_hosts:
            break
    return pair


def sample_flow(
    mixture: MixtureConfig,
    n_traffic_scale: float,
    rng,
    bitrate_coeff: float = 1.0,
) -> tuple[float, float]:
    """Draw (total bits, bit/s) for one flow.

    The traffic scale multiplies the sampled volume by 100/scale; the bitrate
    follows a square-root law in the volume.
    """
    if n_traffic_scale <= 0:
        raise ValueError("traffic scale must be positive")
    delta = mixture.sample(rng) * (100.0 / n_traffic_scale)
    rate = max(1.0, round(bitrate_coeff * math.sqrt(delta)))
    return delta, rate


def build_scenario(topology: Topology, params: ScenarioParams) -> Scenario:
    """Generate the per-switch flow rule sets for a topology.

    Each iteration picks a host pair, samples its traffic, computes the
    shortest switch path and installs one rule per path switch with shared
    install/remove times; the install offset then advances by the next
    inter-arrival sample.  Fully determined by ``params.seed``.
    """
    iat_rng, bneck_rng, pair_rng, flow_rng, hs_rng = _streams(params.seed, 5)

    iat = generate_iat_series(
        params.gamma_shape, params.gamma_scale, params.n_pairs, params.n_iat_scale,
        iat_rng,
    )
    iat, windows, truncated = inject_bottlenecks(
        iat, params.n_bneck, params.n_bneck_intensity, params.n_bneck_duration,
        bneck_rng, params.bneck_jitter,
    )

    attach = topology.attach_map()
    switches_with_hosts = sorted({sw for _, sw in topology.host_attach})
    hotspots = []
    if params.n_hs > 0 and switches_with_hosts:
        k = min(params.n_hs, len(switches_with_hosts))
        hotspots = sorted(
            int(s) for s in hs_rng.choice(switches_with_hosts, size=k, replace=False)
        )
    hotspot_hosts = {h for h, sw in topology.host_attach if sw in hotspots}

    graph = topology.switch_graph()
    paths = dict(nx.all_pairs_shortest_path(graph))

    rules = [
        FlowRule(
            id=s,
            match=Match(),
            priority=0,
            install_time=0.0,
            remove_time=params.horizon_cap,
            owner_switch=s,
            is_default=True,
        )
        for s in topology.switches
    ]
    packet_in_log = []
    next_id = len(topology.switches)
    offset = INITIAL_OFFSET
    margin = max(MAX_RULE_LIFETIME, params.n_lifetime)

    for i in range(params.n_pairs):
        if offset > params.horizon_cap - margin:
            break
        if len(topology.hosts) >= 2:
            h_src, h_dst = select_host_pair(
                topology.hosts, attach, params.n_isr, hotspot_hosts,
                params.n_hs_intensity, pair_rng,
            )
        else:
            break
        delta, rate = sample_flow(
            params.mixture, params.n_traffic_scale, flow_rng, params.bitrate_coeff
        )
        install = offset
        remove = offset + max(min(delta / rate, MAX_RULE_LIFETIME), params.n_lifetime)

        s_src, s_dst = attach[h_src], attach[h_dst]
        path = paths[s_src][s_dst]
        prev: tuple[str, int] = ("host", h_src)
        for sw in path:
            in_port = topology.port_of(sw, *prev)
            rules.append(
                FlowRule(
                    id=next_id,
                    match=Match(in_port=in_port, src=h_src, dst=h_dst),
                    priority=100,
                    install_time=install,
                    remove_time=remove,
                    total_bits=delta,
                    bitrate=rate,
                    owner_switch=sw,
                    flow_id=i,
                )
            )
            packet_in_log.append((next_id, in_port))
            next_id += 1
            prev = ("switch", sw)
        offset += iat[i] / 1000.0

    return Scenario(
        topology=topology,
        params=params,
        rules=tuple(rules),
        packet_in_log=tuple(packet_in_log),
        bneck_windows=tuple(windows),
        bneck_truncated=truncated,
        hotspot_switches=tuple(hotspots),
    )


def generate_scenario(params: ScenarioParams) -> Scenario:
    """Topology plus rule sets from a single seed."""
    topo = generate_topology(
        params.n_switches, params.ba_m, params.hosts_per_switch,
        params.table_capacity, params.link_capacity, params.seed,
    )
    return build_scenario(topo, params)


def save_scenario(scenario: Scenario, path) -> None:
    doc = {
        "format": SCENARIO_FORMAT,
        "version": SCENARIO_VERSION,
        "params": scenario.params.to_jsonable(),
        "topology": {
            "switches": list(scenario.topology.switches),
            "hosts": list(scenario.topology.hosts),
            "host_attach": [list(p) for p in scenario.topology.host_attach],
            "switch_links": [list(l) for l in scenario.topology.switch_links],
            "link_capacity": scenario.topology.link_capacity,
            "table_capacity": [list(p) for p in scenario.topology.table_capacity],
        },
        "backup_switch": scenario.backup_switch,
        "rules": [
            [
                r.id,
                r.flow_id,
                r.owner_switch,
                r.match.in_port,
                r.match.src,
                r.match.dst,
                r.priority,
                r.install_time,
                r.remove_time,
                r.total_bits,
                r.bitrate,
                int(r.is_default),
            ]
            for r in scenario.rules
        ],
        "packet_in_log": [list(p) for p in scenario.packet_in_log],
        "meta": {
            "bneck_windows": [list(w) for w in scenario.bneck_windows],
            "bneck_truncated": scenario.bneck_truncated,
            "hotspot_switches": list(scenario.hotspot_switches),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != SCENARIO_FORMAT:
        raise ScenarioFormatError(f"{path}: not a scenario file")
    if doc.get("version") != SCENARIO_VERSION:
        raise ScenarioFormatError(
            f"{path}: unsupported version {doc.get('version')!r}, "
            f"expected {SCENARIO_VERSION}"
        )
    topo = doc["topology"]
    topology = Topology(
        switches=tuple(topo["switches"]),
        hosts=tuple(topo["hosts"]),
        host_attach=tuple(tuple(p) for p in topo["host_attach"]),
        switch_links=tuple(tuple(l) for l in topo["switch_links"]),
        link_capacity=topo["link_capacity"],
        table_capacity=tuple(tuple(p) for p in topo["table_capacity"]),
    )
    rules = tuple(
        FlowRule(
            id=rid,
            flow_id=fid,
            owner_switch=sw,
            match=Match(in_port=in_port, src=src, dst=dst),
            priority=prio,
            install_time=install,
            remove_time=remove,
            total_bits=bits,
            bitrate=rate,
            is_default=bool(dflt),
        )
        for rid, fid, sw, in_port, src, dst, prio, install, remove, bits, rate, dflt
        in doc["rules"]
    )
    meta = doc.get("meta", {})
    return Scenario(
        topology=topology,
        params=ScenarioParams.from_jsonable(doc["params"]),
        rules=rules,
        packet_in_log=tuple(tuple(p) for p in doc["packet_in_log"]),
        backup_switch=doc.get("backup_switch", BACKUP_SWITCH),
        bneck_windows=tuple(tuple(w) for w in meta.get("bneck_windows", [])),
        bneck_truncated=meta.get("bneck_truncated", False),
        hotspot_switches=tuple(meta.get("hotspot_switches", [])),
    )
