"""Deployment topology and synthetic KPI stream generation.

Builds a validated component topology from a config file, plans anomaly
injections over a timeline, and synthesizes labeled multivariate KPI
series (folded-Gaussian samples) for every component.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .graph import EdgeList

# Injection timeline geometry. Events are aligned to the window stride so
# that every event covers whole windows; the gap keeps at least two normal
# windows between consecutive events.
EVENT_DURATION = 120
EVENT_GAP = 40
EVENT_ALIGN = 20

SERVICE = "service"
INFRASTRUCTURE = "infrastructure"


class SystemState(IntEnum):
    """Per-node state label; integer values double as class indices."""

    NORMAL = 0
    ANOMALY1 = 1
    ANOMALY2 = 2


class Variant(str, Enum):
    STANDARD = "standard"
    MISCELLANEOUS = "miscellaneous"


class Scenario(str, Enum):
    LOCAL = "local"
    NEIGHBORHOOD = "neighborhood"
    ADVERSARY = "adversary"


SCENARIO_PROBS = {
    Scenario.LOCAL: 0.7,
    Scenario.NEIGHBORHOOD: 0.2,
    Scenario.ADVERSARY: 0.1,
}

ADVERSARY_OF = {
    SystemState.ANOMALY1: SystemState.ANOMALY2,
    SystemState.ANOMALY2: SystemState.ANOMALY1,
}

# (state, variant) -> (mu, sigma). Normal has no miscellaneous variant.
STATE_PARAMS = {
    (SystemState.ANOMALY1, Variant.STANDARD): (0.0, 0.1),
    (SystemState.ANOMALY1, Variant.MISCELLANEOUS): (0.0, 0.17),
    (SystemState.NORMAL, Variant.STANDARD): (0.0, 0.2),
    (SystemState.ANOMALY2, Variant.STANDARD): (0.0, 0.3),
    (SystemState.ANOMALY2, Variant.MISCELLANEOUS): (0.0, 0.23),
}

MIN_NEIGHBORS = 3
MAX_NEIGHBORS = 7


class TopologyError(ValueError):
    """Raised when a topology config violates a structural invariant."""


@dataclass(frozen=True)
class StateDistribution:
    """Sampling distribution of one (state, variant) combination."""

    state: SystemState
    variant: Variant
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def of(cls, state: SystemState, variant: Variant = Variant.STANDARD) -> "StateDistribution":
        key = (SystemState(state), Variant(variant))
        if key not in STATE_PARAMS:
            raise ValueError(f"no distribution defined for {key[0].name}/{key[1].value}")
        mu, sigma = STATE_PARAMS[key]
        return cls(key[0], key[1], mu, sigma)


@dataclass(frozen=True)
class ComponentNode:
    id: int
    group_id: int
    kpi_count: int = 10


@dataclass(frozen=True)
class ComponentGroup:
    id: int
    name: str
    kind: str
    members: tuple[int, ...]


@dataclass(frozen=True)
class DeploymentTopology:
    """Validated deployment layout: nodes, groups, placements, dependencies."""

    nodes: tuple[ComponentNode, ...]
    groups: tuple[ComponentGroup, ...]
    placements: tuple[tuple[int, int], ...]
    dependencies: tuple[tuple[int, int], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def group(self, group_id: int) -> ComponentGroup:
        return self._groups_by_id[group_id]

    @property
    def _groups_by_id(self) -> dict[int, ComponentGroup]:
        return {g.id: g for g in self.groups}

    def service_node_ids(self) -> list[int]:
        """Nodes eligible for anomaly injection (members of service groups)."""
        out: list[int] = []
        for g in self.groups:
            if g.kind == SERVICE:
                out.extend(g.members)
        return sorted(out)

    def canonical_dict(self) -> dict:
        """Stable dict form used for hashing; also a valid config again."""
        return {
            "groups": [
                {"id": g.id, "name": g.name, "kind": g.kind, "members": len(g.members)}
                for g in self.groups
            ],
            "kpi_count": self.nodes[0].kpi_count if self.nodes else 0,
            "placements": [list(p) for p in self.placements],
            "dependencies": [list(d) for d in self.dependencies],
        }


def load_config(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def reference_config() -> dict:
    """The shipped reference deployment layout (51 nodes, 24 groups)."""
    path = Path(__file__).parent / "data" / "reference_topology.json"
    return load_config(path)


def build_topology(config: dict) -> DeploymentTopology:
    """Validate a config dict and produce a DeploymentTopology.

    Node ids are assigned sequentially in group listing order, so a config
    only declares member counts; placements and dependencies then refer to
    the resulting node ids and the declared group ids.
    """
    groups_cfg = config.get("groups")
    if not groups_cfg:
        raise TopologyError("config declares no groups")
    kpi_count = int(config.get("kpi_count", 10))
    if kpi_count < 1:
        raise TopologyError(f"kpi_count must be >= 1, got {kpi_count}")

    nodes: list[ComponentNode] = []
    groups: list[ComponentGroup] = []
    seen_group_ids: set[int] = set()
    next_node = 0
    for g in groups_cfg:
        gid = int(g["id"])
        if gid in seen_group_ids:
            raise TopologyError(f"duplicate group id {gid}")
        seen_group_ids.add(gid)
        kind = g.get("kind", SERVICE)
        if kind not in (SERVICE, INFRASTRUCTURE):
            raise TopologyError(f"group {gid}: unknown kind {kind!r}")
        count = int(g["members"])
        if count < 1:
            raise TopologyError(f"group {gid}: member count must be >= 1")
        member_ids = tuple(range(next_node, next_node + count))
        next_node += count
        groups.append(ComponentGroup(gid, str(g.get("name", f"group_{gid}")), kind, member_ids))
        nodes.extend(ComponentNode(i, gid, kpi_count) for i in member_ids)

    node_ids = {n.id for n in nodes}
    placements = []
    hosted: set[int] = set()
    for pair in config.get("placements", []):
        host, guest = int(pair[0]), int(pair[1])
        if host not in node_ids or guest not in node_ids:
            raise TopologyError(f"placement ({host}, {guest}) references unknown node")
        if host == guest:
            raise TopologyError(f"node {host} cannot host itself")
        if guest in hosted:
            raise TopologyError(f"node {guest} hosted by more than one node")
        hosted.add(guest)
        placements.append((host, guest))

    dependencies = []
    seen_deps: set[tuple[int, int]] = set()
    for pair in config.get("dependencies", []):
        src, dst = int(pair[0]), int(pair[1])
        if src not in seen_group_ids or dst not in seen_group_ids:
            raise TopologyError(f"dependency ({src}, {dst}) references unknown group")
        if src == dst:
            raise TopologyError(f"group {src} cannot depend on itself")
        if (src, dst) in seen_deps:
            raise TopologyError(f"duplicate dependency ({src}, {dst})")
        seen_deps.add((src, dst))
        dependencies.append((src, dst))

    for key, actual in (("node_count", len(nodes)), ("group_count", len(groups))):
        declared = config.get(key)
        if declared is not None and int(declared) != actual:
            raise TopologyError(f"{key} mismatch: declared {declared}, built {actual}")

    return DeploymentTopology(
        nodes=tuple(nodes),
        groups=tuple(groups),
        placements=tuple(placements),
        dependencies=tuple(dependencies),
    )


def sample_state(dist: StateDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n nonnegative samples: absolute values of Gaussian(mu, sigma)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return np.abs(rng.normal(dist.mu, dist.sigma, size=n))


@dataclass(frozen=True)
class NeighborAssignment:
    node: int
    state: SystemState
    variant: Variant
    kpi: int


@dataclass(frozen=True)
class InjectionEvent:
    target_node: int
    anomaly: SystemState
    scenario: Scenario
    target_variant: Variant
    target_kpi: int
    start: int
    end: int
    repetition: int
    neighbors: tuple[NeighborAssignment, ...] = ()


@dataclass
class InjectionSchedule:
    events: list[InjectionEvent]
    warnings: list[str] = field(default_factory=list)

    def horizon(self) -> int:
        """Total series length implied by the schedule: last end plus one gap."""
        if not self.events:
            return EVENT_GAP
        return max(e.end for e in self.events) + EVENT_GAP


def _undirected_neighbors(edge_list: "EdgeList", n_nodes: int) -> list[list[int]]:
    """Union of in- and out-neighbors per node, excluding the self-loop."""
    sets: list[set[int]] = [set() for _ in range(n_nodes)]
    for src, dst, _tag in edge_list.edges:
        if src != dst:
            sets[src].add(dst)
            sets[dst].add(src)
    return [sorted(s) for s in sets]


def plan_injections(
    topology: DeploymentTopology,
    edge_list: "EdgeList",
    repetitions: int = 5,
    rng: np.random.Generator | None = None,
) -> InjectionSchedule:
    """Plan anomaly injections for every application-service node.

    Each (service node, anomaly class) pair receives `repetitions` events.
    Per event a scenario is drawn (local 70%, neighborhood 20%, adversary
    10%); neighborhood and adversary events additionally pick 3..7 graph
    neighbors to inject. Events are shuffled and laid out on the timeline
    with normal gaps in between, so no two events ever overlap.
    """
    if rng is None:
        rng = np.random.default_rng()
    neighbor_sets = _undirected_neighbors(edge_list, topology.n_nodes)
    kpi_counts = {n.id: n.kpi_count for n in topology.nodes}

    protos = [
        (node, anomaly, rep)
        for node in topology.service_node_ids()
        for anomaly in (SystemState.ANOMALY1, SystemState.ANOMALY2)
        for rep in range(1, repetitions + 1)
    ]
    order = rng.permutation(len(protos))
    scenarios = list(SCENARIO_PROBS)
    probs = [SCENARIO_PROBS[s] for s in scenarios]

    events: list[InjectionEvent] = []
    warnings: list[str] = []
    t = 0
    for idx in order:
        node, anomaly, rep = protos[idx]
        scenario = scenarios[rng.choice(len(scenarios), p=probs)]
        target_kpi = int(rng.integers(kpi_counts[node]))
        target_variant = Variant.STANDARD
        neighbors: tuple[NeighborAssignment, ...] = ()
        if scenario is not Scenario.LOCAL:
            candidates = neighbor_sets[node]
            if len(candidates) < MIN_NEIGHBORS:
                k = len(candidates)
                warnings.append(
                    f"node {node}: only {k} neighbors available for {scenario.value} "
                    f"scenario, clamping k (wanted >= {MIN_NEIGHBORS})"
                )
            else:
                hi = min(MAX_NEIGHBORS, len(candidates))
                k = int(rng.integers(MIN_NEIGHBORS, hi + 1))
            chosen = sorted(int(c) for c in rng.choice(candidates, size=k, replace=False))
            if scenario is Scenario.NEIGHBORHOOD:
                target_variant = Variant.MISCELLANEOUS
                neighbor_state = anomaly
            else:
                neighbor_state = ADVERSARY_OF[anomaly]
            neighbors = tuple(
                NeighborAssignment(c, neighbor_state, Variant.STANDARD, int(rng.integers(kpi_counts[c])))
                for c in chosen
            )
        start = int(math.ceil((t + EVENT_GAP) / EVENT_ALIGN)) * EVENT_ALIGN
        end = start + EVENT_DURATION
        t = end
        events.append(
            InjectionEvent(
                target_node=node,
                anomaly=anomaly,
                scenario=scenario,
                target_variant=target_variant,
                target_kpi=target_kpi,
                start=start,
                end=end,
                repetition=rep,
                neighbors=neighbors,
            )
        )
    return InjectionSchedule(events=events, warnings=warnings)


@dataclass
class KpiDataset:
    """Synthesized KPI series with the injection schedule and ground truth.

    series has shape (n_nodes, kpi_count, T); ground_truth has shape
    (n_nodes, T) holding SystemState values.
    """

    series: np.ndarray
    schedule: InjectionSchedule
    ground_truth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.series.shape[0]

    @property
    def length(self) -> int:
        return self.series.shape[2]


def synthesize(
    topology: DeploymentTopology,
    schedule: InjectionSchedule,
    T: int,
    rng: np.random.Generator,
) -> KpiDataset:
    """Generate the full labeled KPI dataset for a planned schedule."""
    for ev in schedule.events:
        if ev.start < 0 or ev.end > T:
            raise ValueError(f"event [{ev.start}, {ev.end}) outside series horizon [0, {T})")
    n = topology.n_nodes
    d = max(node.kpi_count for node in topology.nodes) if topology.nodes else 0
    normal = StateDistribution.of(SystemState.NORMAL)
    series = np.abs(rng.normal(normal.mu, normal.sigma, size=(n, d, T)))
    ground = np.zeros((n, T), dtype=np.int8)

    def inject(node: int, kpi: int, state: SystemState, variant: Variant, start: int, end: int):
        dist = StateDistribution.of(state, variant)
        series[node, kpi, start:end] = np.abs(rng.normal(dist.mu, dist.sigma, size=end - start))
        ground[node, start:end] = int(state)

    for ev in schedule.events:
        inject(ev.target_node, ev.target_kpi, ev.anomaly, ev.target_variant, ev.start, ev.end)
        for na in ev.neighbors:
            inject(na.node, na.kpi, na.state, na.variant, ev.start, ev.end)
    return KpiDataset(series=series, schedule=schedule, ground_truth=ground)


def simulate(topology: DeploymentTopology, edge_list: "EdgeList", seed: int,
             repetitions: int = 5) -> KpiDataset:
    """Plan and synthesize in one step with sub-seeded random streams."""
    from .seeding import sub_rng

    schedule = plan_injections(topology, edge_list, repetitions, sub_rng(seed, "plan"))
    return synthesize(topology, schedule, schedule.horizon(), sub_rng(seed, "synthesize"))


# ---------------------------------------------------------------------------
# File formats: per-node CSVs and the schedule JSON.

def event_to_dict(ev: InjectionEvent) -> dict:
    return {
        "target_node": ev.target_node,
        "anomaly": int(ev.anomaly),
        "scenario": ev.scenario.value,
        "target_variant": ev.target_variant.value,
        "target_kpi": ev.target_kpi,
        "start": ev.start,
        "end": ev.end,
        "repetition": ev.repetition,
        "neighbors": [[na.node, int(na.state), na.variant.value, na.kpi] for na in ev.neighbors],
    }


def event_from_dict(d: dict) -> InjectionEvent:
    return InjectionEvent(
        target_node=int(d["target_node"]),
        anomaly=SystemState(d["anomaly"]),
        scenario=Scenario(d["scenario"]),
        target_variant=Variant(d["target_variant"]),
        target_kpi=int(d["target_kpi"]),
        start=int(d["start"]),
        end=int(d["end"]),
        repetition=int(d["repetition"]),
        neighbors=tuple(
            NeighborAssignment(int(n), SystemState(s), Variant(v), int(k))
            for n, s, v, k in d.get("neighbors", [])
        ),
    )


def save_schedule(schedule: InjectionSchedule, path: str | Path) -> None:
    payload = {
        "events": [event_to_dict(e) for e in schedule.events],
        "warnings": schedule.warnings,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schedule(path: str | Path) -> InjectionSchedule:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return InjectionSchedule(
        events=[event_from_dict(d) for d in payload["events"]],
        warnings=list(payload.get("warnings", [])),
    )


def export_dataset(dataset: KpiDataset, out_dir: str | Path) -> list[Path]:
    """Write one `node_<id>.csv` per node plus `schedule.json`.

    CSV field order is fixed: t, kpi_0..kpi_{d-1}, label. Floats use the
    shortest round-trip decimal form (%.17g is overkill; %.10g keeps files
    readable and is what load_dataset parses back).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n, d, T = dataset.series.shape
    written: list[Path] = []
    for node in range(n):
        path = out_dir / f"node_{node}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t," + ",".join(f"kpi_{k}" for k in range(d)) + ",label\n")
            cols = dataset.series[node]
            labels = dataset.ground_truth[node]
            for t in range(T):
                vals = ",".join(f"{cols[k, t]:.10g}" for k in range(d))
                fh.write(f"{t},{vals},{labels[t]}\n")
        written.append(path)
    sched_path = out_dir / "schedule.json"
    save_schedule(dataset.schedule, sched_path)
    written.append(sched_path)
    return written


def load_dataset(data_dir: str | Path, n_nodes: int) -> KpiDataset:
    """Read back node CSVs and the schedule written by export_dataset."""
    data_dir = Path(data_dir)
    schedule = load_schedule(data_dir / "schedule.json")
    series_rows = []
    labels_rows = []
    for node in range(n_nodes):
        path = data_dir / f"node_{node}.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing dataset file {path}")
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        series_rows.append(raw[:, 1:-1].T)
        labels_rows.append(raw[:, -1].astype(np.int8))
    return KpiDataset(
        series=np.stack(series_rows),
        schedule=schedule,
        ground_truth=np.stack(labels_rows),
    )
