import math

import networkx as nx
import numpy as np
import pytest

from fdsim.scenario import (
    MAX_RULE_LIFETIME,
    MixtureComponent,
    MixtureConfig,
    Scenario,
    ScenarioFormatError,
    ScenarioParams,
    build_scenario,
    generate_iat_series,
    generate_scenario,
    generate_topology,
    inject_bottlenecks,
    load_scenario,
    minimal_window_length,
    sample_flow,
    save_scenario,
    select_host_pair,
)


def small_params(**kw):
    defaults = dict(n_switches=6, hosts_per_switch=2, n_pairs=200, seed=5)
    defaults.update(kw)
    return ScenarioParams(**defaults)


class TestTopology:
    def test_thirteen_switch_tree(self):
        topo = generate_topology(13, 1, 2, 1000, 1e9, seed=3)
        assert len(topo.switches) == 13
        assert len(topo.switch_links) == 12  # m=1 gives a tree
        assert nx.is_connected(topo.switch_graph())

    def test_single_switch_two_hosts(self):
        topo = generate_topology(1, 1, 2, 1000, 1e9, seed=0)
        assert topo.switches == (0,)
        assert len(topo.hosts) == 2
        assert topo.switch_links == ()
        assert all(sw == 0 for _, sw in topo.host_attach)

    def test_degree_distribution_is_heavy_tailed(self):
        max_degrees, median_degrees = [], []
        for seed in range(100):
            topo = generate_topology(200, 1, 0, 1000, 1e9, seed=seed)
            degrees = [d for _, d in topo.switch_graph().degree()]
            max_degrees.append(max(degrees))
            median_degrees.append(np.median(degrees))
        assert np.mean(max_degrees) > 5 * np.mean(median_degrees)

    def test_invalid_sizes_rejected(self):
        with pytest.raises(ValueError):
            generate_topology(3, 3, 1, 1000, 1e9, seed=0)
        with pytest.raises(ValueError):
            generate_topology(0, 1, 1, 1000, 1e9, seed=0)

    def test_every_host_attached_once(self):
        topo = generate_topology(8, 2, 3, 1000, 1e9, seed=9)
        assert sorted(h for h, _ in topo.host_attach) == list(topo.hosts)

    def test_port_numbering_deterministic(self):
        topo = generate_topology(8, 2, 3, 1000, 1e9, seed=9)
        for s in topo.switches:
            ports = topo.ports(s)
            assert list(ports) == list(range(len(ports)))
            for p, (kind, node) in ports.items():
                assert topo.port_of(s, kind, node) == p


class TestIatSeries:
    def test_mean_matches_gamma(self):
        rng = np.random.default_rng(0)
        series = generate_iat_series(0.3, 100.0, 100_000, 1.0, rng)
        assert len(series) == 100_000
        assert np.mean(series) == pytest.approx(30.0, rel=0.05)

    def test_zero_pairs(self):
        rng = np.random.default_rng(0)
        assert len(generate_iat_series(0.3, 100.0, 0, 1.0, rng)) == 0

    def test_scale_is_linear(self):
        a = generate_iat_series(0.3, 100.0, 500, 1.0, np.random.default_rng(7))
        b = generate_iat_series(0.3, 100.0, 500, 0.5, np.random.default_rng(7))
        assert np.allclose(b, a * 0.5)


class TestBottlenecks:
    def test_no_bottleneck_unchanged(self):
        iat = np.full(100, 50.0)
        out, windows, truncated = inject_bottlenecks(
            iat, 0, 200.0, 10.0, np.random.default_rng(0)
        )
        assert np.array_equal(out, iat)
        assert windows == [] and not truncated

    def test_mean_multiplier(self):
        # intensity 125 squeezes by 100/125 = 0.8 at the window center
        iat = np.full(5000, 100.0)
        centers = []
        for seed in range(300):
            out, windows, _ = inject_bottlenecks(
                iat, 1, 125.0, 20.0, np.random.default_rng(seed), jitter=0.0
            )
            x, y = windows[0]
            if y >= 2:
                centers.append(out[x + y // 2] / 100.0)
        assert np.mean(centers) == pytest.approx(0.8, abs=0.02)

    def test_window_satisfies_duration_minimally(self):
        rng = np.random.default_rng(3)
        iat = rng.gamma(0.3, 100.0, size=4000)
        checked = 0
        for seed in range(20):
            out, windows, truncated = inject_bottlenecks(
                iat, 1, 150.0, 10.0, np.random.default_rng(seed)
            )
            if truncated:
                continue  # start landed too close to the series end
            (x, y), = windows
            total = iat[x : x + y + 1].sum()
            assert math.floor(total / 1000.0) >= 10.0
            if y > 0:
                assert math.floor(iat[x : x + y].sum() / 1000.0) < 10.0
            checked += 1
        assert checked >= 10

    def test_all_outputs_positive(self):
        iat = np.full(2000, 30.0)
        out, _, _ = inject_bottlenecks(
            iat, 5, 300.0, 15.0, np.random.default_rng(5), jitter=0.5
        )
        assert (out > 0).all()

    def test_truncated_window_flagged(self):
        iat = np.full(10, 10.0)  # only 0.1s in total
        out, windows, truncated = inject_bottlenecks(
            iat, 1, 200.0, 60.0, np.random.default_rng(6)
        )
        assert truncated
        x, y = windows[0]
        assert x + y == len(iat) - 1

    def test_minimal_window_helper(self):
        iat = np.array([400.0, 400.0, 300.0, 2000.0])
        assert minimal_window_length(iat, 0, 1.0) == 2  # 1100ms -> floor 1s
        assert minimal_window_length(iat, 3, 2.0) == 0
        assert minimal_window_length(iat, 0, 10.0) is None


class TestHostPairs:
    def test_forced_inter_switch(self):
        attach = {0: 0, 1: 0, 2: 1, 3: 1}
        rng = np.random.default_rng(0)
        for _ in range(200):
            h_src, h_dst = select_host_pair([0, 1, 2, 3], attach, 1.0, set(), 0, rng)
            assert attach[h_src] != attach[h_dst]
            assert h_src != h_dst

    def test_uniform_without_hotspots(self):
        attach = {h: h % 4 for h in range(16)}
        rng = np.random.default_rng(1)
        seen = {select_host_pair(range(16), attach, 0.5, set(), 0, rng)[0]
                for _ in range(600)}
        assert len(seen) == 16  # every host shows up as a source

    def test_hotspot_reselection(self):
        attach = {h: h % 8 for h in range(32)}
        hotspot_hosts = {h for h in range(32) if attach[h] == 3}
        rng = np.random.default_rng(2)
        hits = sum(
            select_host_pair(range(32), attach, 0.5, hotspot_hosts, 50, rng)[0]
            in hotspot_hosts
            for _ in range(400)
        )
        assert hits >= 0.95 * 400


class TestSampleFlow:
    def test_traffic_scale_100_is_identity(self):
        mix = MixtureConfig((MixtureComponent("uniform", 1.0, 500.0, 500.0),))
        delta, _ = sample_flow(mix, 100.0, np.random.default_rng(0))
        assert delta == pytest.approx(500.0)

    def test_traffic_scale_linear(self):
        mix = MixtureConfig((MixtureComponent("uniform", 1.0, 500.0, 500.0),))
        d100, _ = sample_flow(mix, 100.0, np.random.default_rng(0))
        d50, _ = sample_flow(mix, 50.0, np.random.default_rng(0))
        assert d50 == pytest.approx(2 * d100)

    def test_bitrate_monotone_in_volume(self):
        mixes = [
            MixtureConfig((MixtureComponent("uniform", 1.0, v, v),))
            for v in (100.0, 400.0, 10_000.0)
        ]
        rates = [
            sample_flow(m, 100.0, np.random.default_rng(0))[1] for m in mixes
        ]
        assert rates == sorted(rates) and rates[0] < rates[-1]

    def test_mixture_quantiles(self):
        mix = MixtureConfig(
            (
                MixtureComponent("uniform", 0.5, 100.0, 1000.0),
                MixtureComponent("lognormal", 0.5, 7.0, 1.0),
            )
        )
        rng = np.random.default_rng(3)
        samples = np.array([mix.sample(rng) for _ in range(100_000)])

        def mixture_cdf(x):
            uni = min(1.0, max(0.0, (x - 100.0) / 900.0))
            logn = 0.5 * (1 + math.erf((math.log(x) - 7.0) / (1.0 * math.sqrt(2))))
            return 0.5 * uni + 0.5 * logn

        for q in (0.1, 0.25, 0.5, 0.75, 0.9):
            emp = np.quantile(samples, q)
            # invert the analytic cdf by bisection
            lo, hi = 1.0, 1e7
            for _ in range(200):
                mid = (lo + hi) / 2
                if mixture_cdf(mid) < q:
                    lo = mid
                else:
                    hi = mid
            assert emp == pytest.approx(lo, rel=0.05)


class TestBuildScenario:
    def test_lifetime_floor(self):
        # volume 400 bits at 200 bit/s lasts 2s, below the 5s minimum lifetime
        mix = MixtureConfig((MixtureComponent("uniform", 1.0, 400.0, 400.0),))
        params = small_params(
            mixture=mix, n_lifetime=5.0, bitrate_coeff=10.0, n_pairs=40
        )
        sc = generate_scenario(params)
        for r in sc.rules:
            if not r.is_default:
                assert r.remove_time - r.install_time == pytest.approx(5.0)

    def test_lifetime_cap(self):
        # volume 6400 bits at 1 bit/s would last 80s: capped at 35s
        mix = MixtureConfig((MixtureComponent("uniform", 1.0, 6400.0, 6400.0),))
        params = small_params(mixture=mix, bitrate_coeff=0.0125, n_pairs=40)
        sc = generate_scenario(params)
        for r in sc.rules:
            if not r.is_default:
                assert r.remove_time - r.install_time == pytest.approx(
                    MAX_RULE_LIFETIME
                )

    def test_rules_follow_shortest_paths(self):
        sc = generate_scenario(small_params(n_switches=10, n_pairs=120))
        graph = sc.topology.switch_graph()
        attach = sc.topology.attach_map()
        by_flow = {}
        for r in sc.rules:
            if not r.is_default:
                by_flow.setdefault(r.flow_id, []).append(r)
        assert by_flow
        for rules in by_flow.values():
            h_src = rules[0].match.src
            h_dst = rules[0].match.dst
            expected = nx.shortest_path_length(
                graph, attach[h_src], attach[h_dst]
            ) + 1
            assert len(rules) == expected
            assert len({r.owner_switch for r in rules}) == expected
            assert len({(r.install_time, r.remove_time) for r in rules}) == 1

    def test_rule_conservation(self):
        sc = generate_scenario(small_params(n_pairs=150))
        graph = sc.topology.switch_graph()
        attach = sc.topology.attach_map()
        flows = {}
        for r in sc.rules:
            if not r.is_default:
                flows[r.flow_id] = (r.match.src, r.match.dst)
        expected = sum(
            nx.shortest_path_length(graph, attach[s], attach[d]) + 1
            for s, d in flows.values()
        )
        assert sum(1 for r in sc.rules if not r.is_default) == expected

    def test_timing_invariants(self):
        sc = generate_scenario(small_params(n_pairs=300))
        for r in sc.rules:
            if r.is_default:
                continue
            assert r.install_time >= 10.0
            life = r.remove_time - r.install_time
            assert sc.params.n_lifetime - 1e-9 <= life <= MAX_RULE_LIFETIME + 1e-9
            assert r.remove_time <= sc.params.horizon_cap

    def test_deterministic(self):
        a = generate_scenario(small_params(seed=77))
        b = generate_scenario(small_params(seed=77))
        assert a == b

    def test_utilization_matrix_matches_slow_count(self):
        sc = generate_scenario(small_params(n_pairs=80))
        util = sc.utilization_matrix()
        for si, s in enumerate(sc.topology.switches):
            rules = [r for r in sc.rules_of_switch(s) if not r.is_default]
            for t in range(0, sc.n_slots(), 7):
                assert util[si, t] == sum(r.active_in_slot(t) for r in rules)


class TestSaveLoad:
    def test_round_trip(self, tmp_path):
        sc = generate_scenario(small_params(seed=8))
        p = tmp_path / "sc.json"
        save_scenario(sc, p)
        assert load_scenario(p) == sc

    def test_same_seed_same_bytes(self, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_scenario(generate_scenario(small_params(seed=9)), p1)
        save_scenario(generate_scenario(small_params(seed=9)), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format": "fdsim-scenario", "version": 99}')
        with pytest.raises(ScenarioFormatError):
            load_scenario(p)
        p.write_text('{"format": "other", "version": 1}')
        with pytest.raises(ScenarioFormatError):
            load_scenario(p)


def test_params_validation():
    with pytest.raises(ValueError):
        ScenarioParams(n_bneck_intensity=80.0)
    with pytest.raises(ValueError):
        ScenarioParams(n_isr=1.5)
    with pytest.raises(ValueError):
        ScenarioParams(n_lifetime=60.0)
