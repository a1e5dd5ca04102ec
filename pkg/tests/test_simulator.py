import numpy as np
import pytest

from arvalus.graph import build_edges
from arvalus.simulator import (
    EVENT_DURATION,
    EVENT_GAP,
    Scenario,
    StateDistribution,
    SystemState,
    TopologyError,
    Variant,
    build_topology,
    plan_injections,
    reference_config,
    sample_state,
    simulate,
    synthesize,
)


def tiny_config(kpi_count=3):
    return {
        "kpi_count": kpi_count,
        "groups": [
            {"id": 0, "name": "svc_a", "kind": "service", "members": 2},
            {"id": 1, "name": "svc_b", "kind": "service", "members": 2},
            {"id": 2, "name": "vm", "kind": "infrastructure", "members": 1},
        ],
        "placements": [[4, 0], [4, 1], [4, 2], [4, 3]],
        "dependencies": [[0, 1]],
    }


class TestBuildTopology:
    def test_reference_counts(self):
        topo = build_topology(reference_config())
        assert topo.n_nodes == 51
        assert len(topo.groups) == 24

    def test_reference_edge_tags_arithmetic(self):
        # the published totals pin the structure: 24*(15+1920)+99 and +112
        assert 24 * (15 + 60 * 32) + (32 * 3 + 3) == 46539
        assert 46651 - 46539 == 112
        assert 112 - 2 * 32 == 48
        topo = build_topology(reference_config())
        assert build_edges(topo).z == 48

    def test_single_node_topology(self):
        topo = build_topology({"groups": [{"id": 0, "members": 1}]})
        assert topo.n_nodes == 1
        assert len(topo.groups) == 1

    def test_duplicate_group_id_rejected(self):
        with pytest.raises(TopologyError, match="duplicate group id"):
            build_topology({"groups": [{"id": 0, "members": 1}, {"id": 0, "members": 1}]})

    def test_dangling_placement_rejected(self):
        cfg = tiny_config()
        cfg["placements"] = [[99, 0]]
        with pytest.raises(TopologyError, match="unknown node"):
            build_topology(cfg)

    def test_self_hosting_rejected(self):
        cfg = tiny_config()
        cfg["placements"] = [[1, 1]]
        with pytest.raises(TopologyError, match="host itself"):
            build_topology(cfg)

    def test_self_dependency_rejected(self):
        cfg = tiny_config()
        cfg["dependencies"] = [[0, 0]]
        with pytest.raises(TopologyError, match="depend on itself"):
            build_topology(cfg)

    def test_declared_total_mismatch_rejected(self):
        cfg = tiny_config()
        cfg["node_count"] = 7
        with pytest.raises(TopologyError, match="node_count mismatch"):
            build_topology(cfg)

    def test_every_node_in_exactly_one_group(self):
        topo = build_topology(reference_config())
        seen = [n for g in topo.groups for n in g.members]
        assert sorted(seen) == list(range(51))


class TestStateDistribution:
    @pytest.mark.parametrize(
        "state,variant,mu,sigma",
        [
            (SystemState.ANOMALY1, Variant.STANDARD, 0.0, 0.1),
            (SystemState.ANOMALY1, Variant.MISCELLANEOUS, 0.0, 0.17),
            (SystemState.NORMAL, Variant.STANDARD, 0.0, 0.2),
            (SystemState.ANOMALY2, Variant.STANDARD, 0.0, 0.3),
            (SystemState.ANOMALY2, Variant.MISCELLANEOUS, 0.0, 0.23),
        ],
    )
    def test_parametrization(self, state, variant, mu, sigma):
        dist = StateDistribution.of(state, variant)
        assert dist.mu == mu
        assert dist.sigma == sigma

    def test_normal_has_no_miscellaneous(self):
        with pytest.raises(ValueError):
            StateDistribution.of(SystemState.NORMAL, Variant.MISCELLANEOUS)

    def test_adversary_pairing(self):
        from arvalus.simulator import ADVERSARY_OF

        assert ADVERSARY_OF[SystemState.ANOMALY1] is SystemState.ANOMALY2
        assert ADVERSARY_OF[SystemState.ANOMALY2] is SystemState.ANOMALY1


class TestSampleState:
    def test_empty(self):
        dist = StateDistribution.of(SystemState.NORMAL)
        assert sample_state(dist, 0, np.random.default_rng(0)).shape == (0,)

    def test_folded_mean(self):
        # |N(0, sigma)| has mean sigma * sqrt(2/pi)
        dist = StateDistribution.of(SystemState.NORMAL)
        values = sample_state(dist, 10**6, np.random.default_rng(7))
        assert abs(values.mean() - 0.2 * np.sqrt(2 / np.pi)) < 1e-3

    def test_all_nonnegative(self):
        dist = StateDistribution.of(SystemState.ANOMALY2)
        assert (sample_state(dist, 10**4, np.random.default_rng(1)) >= 0).all()

    def test_variance_ordering(self):
        rng = np.random.default_rng(3)
        wide = sample_state(StateDistribution.of(SystemState.ANOMALY2), 10**5, rng)
        normal = sample_state(StateDistribution.of(SystemState.NORMAL), 10**5, rng)
        assert wide.var() > normal.var()

    def test_sigma_recoverable_via_sign_symmetry(self):
        # multiplying by random signs reconstructs the centered Gaussian
        rng = np.random.default_rng(11)
        for state, variant in [
            (SystemState.ANOMALY1, Variant.STANDARD),
            (SystemState.ANOMALY1, Variant.MISCELLANEOUS),
            (SystemState.NORMAL, Variant.STANDARD),
            (SystemState.ANOMALY2, Variant.STANDARD),
            (SystemState.ANOMALY2, Variant.MISCELLANEOUS),
        ]:
            dist = StateDistribution.of(state, variant)
            folded = sample_state(dist, 10**5, rng)
            signs = rng.choice([-1.0, 1.0], size=folded.shape)
            assert abs((folded * signs).std() - dist.sigma) / dist.sigma < 0.02


class TestPlanInjections:
    def setup_method(self):
        self.topo = build_topology(tiny_config())
        self.edges = build_edges(self.topo)

    def test_event_count(self):
        plan = plan_injections(self.topo, self.edges, 5, np.random.default_rng(0))
        # 4 service nodes x 2 anomaly classes x 5 repetitions
        assert len(plan.events) == 40

    def test_zero_repetitions(self):
        plan = plan_injections(self.topo, self.edges, 0, np.random.default_rng(0))
        assert plan.events == []

    def test_no_temporal_overlap_and_gaps(self):
        plan = plan_injections(self.topo, self.edges, 5, np.random.default_rng(1))
        ordered = sorted(plan.events, key=lambda e: e.start)
        for a, b in zip(ordered, ordered[1:]):
            assert a.end + EVENT_GAP <= b.start + EVENT_GAP  # non-overlap
            assert b.start - a.end >= EVENT_GAP
        assert all(e.end - e.start == EVENT_DURATION for e in ordered)

    def test_only_service_nodes_targeted(self):
        plan = plan_injections(self.topo, self.edges, 5, np.random.default_rng(2))
        service = set(self.topo.service_node_ids())
        assert all(e.target_node in service for e in plan.events)

    def test_neighbor_assignments_are_neighbors(self):
        from arvalus.simulator import _undirected_neighbors

        neighbor_sets = _undirected_neighbors(self.edges, self.topo.n_nodes)
        plan = plan_injections(self.topo, self.edges, 10, np.random.default_rng(3))
        for ev in plan.events:
            if ev.scenario is Scenario.LOCAL:
                assert ev.neighbors == ()
                assert ev.target_variant is Variant.STANDARD
            else:
                assert 3 <= len(ev.neighbors) <= 7
                for na in ev.neighbors:
                    assert na.node in neighbor_sets[ev.target_node]
                    assert na.variant is Variant.STANDARD
                if ev.scenario is Scenario.NEIGHBORHOOD:
                    assert ev.target_variant is Variant.MISCELLANEOUS
                    assert all(na.state is ev.anomaly for na in ev.neighbors)
                else:
                    assert ev.target_variant is Variant.STANDARD
                    assert all(na.state is not ev.anomaly for na in ev.neighbors)
                    assert all(na.state is not SystemState.NORMAL for na in ev.neighbors)

    def test_repetition_ids(self):
        plan = plan_injections(self.topo, self.edges, 5, np.random.default_rng(4))
        per_pair = {}
        for ev in plan.events:
            per_pair.setdefault((ev.target_node, ev.anomaly), []).append(ev.repetition)
        assert all(sorted(v) == [1, 2, 3, 4, 5] for v in per_pair.values())

    def test_scenario_frequencies(self):
        # 4 service nodes x 2 classes x 1250 repetitions = 10^4 events
        plan = plan_injections(self.topo, self.edges, 1250, np.random.default_rng(5))
        assert len(plan.events) == 10**4
        counts = {s: 0 for s in Scenario}
        for ev in plan.events:
            counts[ev.scenario] += 1
        assert abs(counts[Scenario.LOCAL] / 1e4 - 0.70) < 0.02
        assert abs(counts[Scenario.NEIGHBORHOOD] / 1e4 - 0.20) < 0.02
        assert abs(counts[Scenario.ADVERSARY] / 1e4 - 0.10) < 0.02

    def test_small_neighborhood_clamps_with_warning(self):
        config = {
            "kpi_count": 2,
            "groups": [
                {"id": 0, "name": "a", "kind": "service", "members": 1},
                {"id": 1, "name": "b", "kind": "service", "members": 1},
            ],
            "dependencies": [[0, 1]],
        }
        topo = build_topology(config)
        edges = build_edges(topo)
        plan = plan_injections(topo, edges, 200, np.random.default_rng(6))
        clamped = [e for e in plan.events if e.scenario is not Scenario.LOCAL]
        assert clamped, "expected some neighborhood/adversary draws"
        assert all(len(e.neighbors) == 1 for e in clamped)
        assert plan.warnings


class TestSynthesize:
    def setup_method(self):
        self.topo = build_topology(tiny_config())
        self.edges = build_edges(self.topo)

    def test_empty_schedule_all_normal(self):
        from arvalus.simulator import InjectionSchedule

        ds = synthesize(self.topo, InjectionSchedule(events=[]), 100, np.random.default_rng(0))
        assert (ds.ground_truth == int(SystemState.NORMAL)).all()
        assert ds.series.shape == (5, 3, 100)

    def test_local_event_marks_only_target(self):
        from arvalus.simulator import InjectionEvent, InjectionSchedule

        ev = InjectionEvent(
            target_node=3, anomaly=SystemState.ANOMALY1, scenario=Scenario.LOCAL,
            target_variant=Variant.STANDARD, target_kpi=1, start=100, end=200, repetition=1,
        )
        ds = synthesize(self.topo, InjectionSchedule(events=[ev]), 300, np.random.default_rng(0))
        gt = ds.ground_truth
        assert (gt[3, 100:200] == int(SystemState.ANOMALY1)).all()
        assert (gt[3, :100] == 0).all() and (gt[3, 200:] == 0).all()
        mask = np.ones(5, dtype=bool)
        mask[3] = False
        assert (gt[mask] == 0).all()

    def test_adversary_event_marks_neighbors_with_adversary(self):
        from arvalus.simulator import InjectionEvent, InjectionSchedule, NeighborAssignment

        ev = InjectionEvent(
            target_node=0, anomaly=SystemState.ANOMALY1, scenario=Scenario.ADVERSARY,
            target_variant=Variant.STANDARD, target_kpi=0, start=40, end=160, repetition=1,
            neighbors=(
                NeighborAssignment(1, SystemState.ANOMALY2, Variant.STANDARD, 0),
                NeighborAssignment(2, SystemState.ANOMALY2, Variant.STANDARD, 1),
                NeighborAssignment(4, SystemState.ANOMALY2, Variant.STANDARD, 2),
            ),
        )
        ds = synthesize(self.topo, InjectionSchedule(events=[ev]), 200, np.random.default_rng(0))
        assert (ds.ground_truth[0, 40:160] == int(SystemState.ANOMALY1)).all()
        for node in (1, 2, 4):
            assert (ds.ground_truth[node, 40:160] == int(SystemState.ANOMALY2)).all()

    def test_event_outside_horizon_rejected(self):
        from arvalus.simulator import InjectionEvent, InjectionSchedule

        ev = InjectionEvent(
            target_node=0, anomaly=SystemState.ANOMALY1, scenario=Scenario.LOCAL,
            target_variant=Variant.STANDARD, target_kpi=0, start=50, end=170, repetition=1,
        )
        with pytest.raises(ValueError, match="outside"):
            synthesize(self.topo, InjectionSchedule(events=[ev]), 100, np.random.default_rng(0))

    def test_all_values_nonnegative(self):
        ds = simulate(self.topo, self.edges, seed=5)
        assert (ds.series >= 0).all()

    def test_coverage_labels_match_schedule(self):
        ds = simulate(self.topo, self.edges, seed=9)
        inside = np.zeros_like(ds.ground_truth, dtype=bool)
        for ev in ds.schedule.events:
            inside[ev.target_node, ev.start : ev.end] = True
            for na in ev.neighbors:
                inside[na.node, ev.start : ev.end] = True
        anomalous = ds.ground_truth != 0
        assert (anomalous <= inside).all()  # anomalies only inside events
        assert (~inside <= (ds.ground_truth == 0)).all()

    def test_determinism(self):
        a = simulate(self.topo, self.edges, seed=123)
        b = simulate(self.topo, self.edges, seed=123)
        assert np.array_equal(a.series, b.series)
        assert np.array_equal(a.ground_truth, b.ground_truth)
        assert a.schedule.events == b.schedule.events

    def test_different_seed_differs(self):
        a = simulate(self.topo, self.edges, seed=1)
        b = simulate(self.topo, self.edges, seed=2)
        assert not np.array_equal(a.series, b.series)


class TestExport:
    def test_roundtrip(self, tmp_path):
        topo = build_topology(tiny_config())
        edges = build_edges(topo)
        ds = simulate(topo, edges, seed=3, repetitions=2)
        from arvalus.simulator import export_dataset, load_dataset

        export_dataset(ds, tmp_path)
        loaded = load_dataset(tmp_path, topo.n_nodes)
        assert np.allclose(loaded.series, ds.series, rtol=1e-9, atol=1e-12)
        assert np.array_equal(loaded.ground_truth, ds.ground_truth)
        assert loaded.schedule.events == ds.schedule.events

    def test_csv_header_field_order(self, tmp_path):
        topo = build_topology(tiny_config())
        edges = build_edges(topo)
        ds = simulate(topo, edges, seed=3, repetitions=1)
        from arvalus.simulator import export_dataset

        export_dataset(ds, tmp_path)
        header = (tmp_path / "node_0.csv").read_text().splitlines()[0]
        assert header == "t,kpi_0,kpi_1,kpi_2,label"
