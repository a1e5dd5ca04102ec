import numpy as np
import pytest

from arvalus.dataset import (
    Normalizer,
    WINDOW_SIZE,
    fit_normalizer,
    label_all_windows,
    label_window,
    load_fold_manifest,
    logo_folds,
    save_fold_manifest,
    slice_windows,
    window_dataset,
)
from arvalus.graph import build_edges
from arvalus.simulator import (
    InjectionEvent,
    InjectionSchedule,
    KpiDataset,
    Scenario,
    SystemState,
    Variant,
    build_topology,
    simulate,
)


def make_dataset(T, n=2, d=2, events=()):
    rng = np.random.default_rng(0)
    series = np.abs(rng.normal(0, 0.2, size=(n, d, T)))
    gt = np.zeros((n, T), dtype=np.int8)
    for node, state, start, end in events:
        gt[node, start:end] = state
    return KpiDataset(series=series, schedule=InjectionSchedule(events=[]), ground_truth=gt)


class TestSliceWindows:
    def test_exact_multiple(self):
        samples = slice_windows(make_dataset(400))
        assert len(samples) == 20
        assert samples[0].start == 0 and samples[0].end == 20
        assert samples[19].start == 380

    def test_floor(self):
        assert len(slice_windows(make_dataset(39))) == 1

    def test_too_short(self):
        assert slice_windows(make_dataset(19)) == []

    def test_partition_covers_each_index_once(self):
        samples = slice_windows(make_dataset(107))
        covered = []
        for s in samples:
            covered.extend(range(s.start, s.end))
        assert covered == list(range(100))

    def test_window_content_matches_series(self):
        ds = make_dataset(60)
        samples = slice_windows(ds)
        assert np.array_equal(samples[1].features, ds.series[:, :, 20:40])


class TestLabelWindow:
    def test_fully_anomalous(self):
        ds = make_dataset(40, events=[(0, 1, 20, 40)])
        assert label_window(0, 20, 40, ds.ground_truth) is SystemState.ANOMALY1

    def test_partial_anomaly_is_normal(self):
        ds = make_dataset(40, events=[(0, 1, 21, 40)])  # 19 of 20 samples
        assert label_window(0, 20, 40, ds.ground_truth) is SystemState.NORMAL

    def test_all_normal(self):
        ds = make_dataset(40)
        assert label_window(0, 0, 20, ds.ground_truth) is SystemState.NORMAL

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        gt = rng.integers(0, 3, size=(4, 100)).astype(np.int8)
        bulk = label_all_windows(gt, 5)
        for w in range(5):
            for node in range(4):
                assert bulk[w, node] == int(label_window(node, w * 20, w * 20 + 20, gt))


class TestNormalizer:
    def test_midpoint(self):
        norm = Normalizer(lo=np.array([[0.0]]), hi=np.array([[2.0]]))
        out = norm.apply(np.array([[[[1.0]]]]))
        assert out.item() == 0.5

    def test_clipping_above_train_max(self):
        norm = Normalizer(lo=np.array([[0.0]]), hi=np.array([[2.0]]))
        assert norm.apply(np.array([[[[3.0]]]])).item() == 1.0
        assert norm.apply(np.array([[[[-1.0]]]])).item() == 0.0

    def test_degenerate_constant_kpi(self):
        norm = Normalizer(lo=np.array([[1.5]]), hi=np.array([[1.5]]))
        assert norm.apply(np.array([[[[1.5]]]])).item() == 0.0

    def test_fit_per_group_bounds(self):
        topo = build_topology({
            "groups": [
                {"id": 0, "name": "a", "kind": "service", "members": 2},
                {"id": 1, "name": "b", "kind": "service", "members": 1},
            ],
        })
        windows = np.zeros((2, 3, 1, WINDOW_SIZE))
        windows[0, 0] = 1.0
        windows[0, 1] = 3.0  # same group as node 0
        windows[0, 2] = 10.0
        windows[1] = windows[0]
        norm = fit_normalizer(windows, np.array([0]), topo)
        assert norm.lo[0, 0] == 1.0 and norm.hi[0, 0] == 3.0
        assert norm.lo[1, 0] == 1.0 and norm.hi[1, 0] == 3.0  # shared group bounds
        assert norm.lo[2, 0] == 10.0 and norm.hi[2, 0] == 10.0

    def test_fitted_on_train_only(self):
        topo = build_topology({"groups": [{"id": 0, "name": "a", "kind": "service", "members": 1}]})
        windows = np.ones((3, 1, 1, WINDOW_SIZE))
        windows[2] = 100.0  # adversarial outlier in the validation split
        train_only = fit_normalizer(windows, np.array([0, 1]), topo)
        with_val = fit_normalizer(windows, np.array([0, 1, 2]), topo)
        assert train_only.hi[0, 0] != with_val.hi[0, 0]

    def test_empty_training_partition(self):
        topo = build_topology({"groups": [{"id": 0, "members": 1}]})
        with pytest.raises(ValueError, match="empty training partition"):
            fit_normalizer(np.ones((1, 1, 1, WINDOW_SIZE)), np.array([], dtype=int), topo)


def event(rep, start, node=0):
    return InjectionEvent(
        target_node=node, anomaly=SystemState.ANOMALY1, scenario=Scenario.LOCAL,
        target_variant=Variant.STANDARD, target_kpi=0, start=start, end=start + 120,
        repetition=rep,
    )


class TestLogoFolds:
    def test_five_folds(self):
        schedule = InjectionSchedule(events=[event(r, 40 + 160 * (r - 1)) for r in range(1, 6)])
        plan = logo_folds(50, schedule)
        assert plan.n_folds == 5

    def test_event_windows_go_to_their_repetition_fold(self):
        schedule = InjectionSchedule(events=[event(r, 40 + 160 * (r - 1)) for r in range(1, 6)])
        plan = logo_folds(50, schedule)
        ev = schedule.events[2]  # repetition 3
        val3 = set(plan.validation_indices(3).tolist())
        for w in range(ev.start // 20, ev.end // 20):
            assert w in val3
        for fold in (1, 2, 4, 5):
            assert not any(
                ev.start // 20 <= w < ev.end // 20
                for w in plan.validation_indices(fold).tolist()
            )

    def test_normal_window_modular_rule(self):
        schedule = InjectionSchedule(events=[event(r, 2000 + 160 * r) for r in range(1, 6)])
        plan = logo_folds(200, schedule)
        # window 7 is pure normal: 7 mod 5 == 2 -> third fold (repetition 3)
        assert 7 in plan.validation_indices(3).tolist()

    def test_partition_disjoint_and_complete(self):
        topo = build_topology({
            "kpi_count": 2,
            "groups": [
                {"id": 0, "name": "a", "kind": "service", "members": 2},
                {"id": 1, "name": "b", "kind": "service", "members": 2},
            ],
            "dependencies": [[0, 1]],
        })
        ds = simulate(topo, build_edges(topo), seed=1)
        windowed = window_dataset(ds)
        plan = logo_folds(windowed.n_windows, ds.schedule)
        union = np.concatenate([plan.validation_indices(r) for r in range(1, 6)])
        assert sorted(union.tolist()) == list(range(windowed.n_windows))
        for r in range(1, 6):
            train = set(plan.train_indices(r).tolist())
            val = set(plan.validation_indices(r).tolist())
            assert not train & val
            assert train | val == set(range(windowed.n_windows))

    def test_every_anomalous_window_in_exactly_one_validation_set(self):
        topo = build_topology({
            "kpi_count": 2,
            "groups": [
                {"id": 0, "name": "a", "kind": "service", "members": 2},
                {"id": 1, "name": "b", "kind": "service", "members": 2},
            ],
            "dependencies": [[0, 1]],
        })
        ds = simulate(topo, build_edges(topo), seed=2)
        windowed = window_dataset(ds)
        plan = logo_folds(windowed.n_windows, ds.schedule)
        anomalous = np.nonzero((windowed.labels > 0).any(axis=1))[0]
        membership = [sum(w in set(plan.validation_indices(r).tolist()) for r in range(1, 6))
                      for w in anomalous]
        assert all(m == 1 for m in membership)

    def test_missing_repetition_rejected(self):
        schedule = InjectionSchedule(events=[event(1, 40), event(2, 240)])
        with pytest.raises(ValueError, match="missing repetition"):
            logo_folds(30, schedule)

    def test_manifest_roundtrip(self, tmp_path):
        schedule = InjectionSchedule(events=[event(r, 40 + 160 * (r - 1)) for r in range(1, 6)])
        plan = logo_folds(60, schedule)
        save_fold_manifest(plan, np.arange(60) * 20, tmp_path / "windows.csv")
        loaded = load_fold_manifest(tmp_path / "windows.csv")
        assert np.array_equal(loaded.window_fold, plan.window_fold)
        for r in range(1, 6):
            assert np.array_equal(loaded.validation_indices(r), plan.validation_indices(r))


def test_labeling_idempotent():
    ds = make_dataset(100, events=[(0, 2, 20, 60)])
    first = label_all_windows(ds.ground_truth, 5)
    second = label_all_windows(ds.ground_truth, 5)
    assert np.array_equal(first, second)
