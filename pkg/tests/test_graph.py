import numpy as np
import pytest

from arvalus.graph import build_edges, encode_edge_attrs, neighbors, save_edge_list
from arvalus.simulator import TopologyError, build_topology, reference_config


def host_pair_config():
    return {
        "kpi_count": 1,
        "groups": [
            {"id": 0, "name": "a", "kind": "service", "members": 1},
            {"id": 1, "name": "b", "kind": "infrastructure", "members": 1},
        ],
        "placements": [[0, 1]],  # node 0 hosts node 1
    }


class TestBuildEdges:
    def test_single_node(self):
        topo = build_topology({"groups": [{"id": 0, "members": 1}]})
        el = build_edges(topo)
        assert el.edges == ((0, 0, 0),)
        assert el.z == 1
        assert el.tag_catalog == ("identity",)

    def test_host_guest_pair(self):
        topo = build_topology(host_pair_config())
        el = build_edges(topo)
        assert el.z == 3
        tags = {(s, d): el.tag_catalog[t] for s, d, t in el.edges}
        assert tags[(0, 0)] == "identity"
        assert tags[(1, 1)] == "identity"
        assert tags[(0, 1)] == "host-guest"
        assert tags[(1, 0)] == "guest-host"

    def test_reference_topology_tag_count(self):
        topo = build_topology(reference_config())
        el = build_edges(topo)
        assert el.z == 48

    def test_group_edges_form_complete_directed_clique(self):
        topo = build_topology({"groups": [{"id": 0, "name": "g", "members": 3}]})
        el = build_edges(topo)
        group_edges = {(s, d) for s, d, t in el.edges if el.tag_catalog[t] == "group:g"}
        assert group_edges == {(i, j) for i in range(3) for j in range(3) if i != j}

    def test_dependency_edges_both_directions_distinct_tags(self):
        cfg = {
            "groups": [
                {"id": 0, "name": "a", "kind": "service", "members": 2},
                {"id": 1, "name": "b", "kind": "service", "members": 1},
            ],
            "dependencies": [[0, 1]],
        }
        el = build_edges(build_topology(cfg))
        forward = {(s, d) for s, d, t in el.edges if el.tag_catalog[t] == "dependency:a->b"}
        backward = {(s, d) for s, d, t in el.edges if el.tag_catalog[t] == "dependency:b->a"}
        assert forward == {(0, 2), (1, 2)}
        assert backward == {(2, 0), (2, 1)}

    def test_host_guest_edges_reciprocal(self):
        topo = build_topology(reference_config())
        el = build_edges(topo)
        hg = {(s, d) for s, d, t in el.edges if el.tag_catalog[t] == "host-guest"}
        gh = {(s, d) for s, d, t in el.edges if el.tag_catalog[t] == "guest-host"}
        assert {(d, s) for s, d in hg} == gh

    def test_exactly_one_self_loop_per_node(self):
        topo = build_topology(reference_config())
        el = build_edges(topo)
        loops = [(s, d) for s, d, t in el.edges if s == d]
        assert len(loops) == topo.n_nodes
        assert all(el.tag_catalog[t] == "identity" for s, d, t in el.edges if s == d)

    def test_order_independence(self):
        cfg = reference_config()
        shuffled = dict(cfg)
        shuffled["placements"] = list(reversed(cfg["placements"]))
        shuffled["dependencies"] = list(cfg["dependencies"])
        a = build_edges(build_topology(cfg))
        b = build_edges(build_topology(shuffled))
        assert set(a.edges) == set(b.edges)
        assert a.tag_catalog == b.tag_catalog

    def test_tag_catalog_order(self):
        topo = build_topology(reference_config())
        el = build_edges(topo)
        assert el.tag_catalog[:3] == ("identity", "host-guest", "guest-host")
        group_tags = [t for t in el.tag_catalog if t.startswith("group:")]
        dep_tags = [t for t in el.tag_catalog if t.startswith("dependency:")]
        assert len(group_tags) + len(dep_tags) + 3 == el.z
        assert list(el.tag_catalog) == ["identity", "host-guest", "guest-host"] + group_tags + dep_tags

    def test_parallel_edges_rejected(self):
        # a placement inside one group collides with the group clique edges
        cfg = {
            "groups": [{"id": 0, "name": "g", "members": 2}],
            "placements": [[0, 1]],
        }
        with pytest.raises(TopologyError, match="parallel edges"):
            build_edges(build_topology(cfg))


class TestEncodeEdgeAttrs:
    def test_one_hot(self):
        topo = build_topology(host_pair_config())
        el = build_edges(topo)
        attrs = encode_edge_attrs(el)
        assert attrs.shape == (el.n_edges, el.z)
        assert (attrs.sum(axis=1) == 1).all()
        for row, (_s, _d, tag) in zip(attrs, el.edges):
            assert row[tag] == 1

    def test_single_tag_catalog(self):
        topo = build_topology({"groups": [{"id": 0, "members": 1}]})
        attrs = encode_edge_attrs(build_edges(topo))
        assert attrs.tolist() == [[1.0]]

    def test_same_tag_identical_vectors(self):
        topo = build_topology({"groups": [{"id": 0, "name": "g", "members": 3}]})
        el = build_edges(topo)
        attrs = encode_edge_attrs(el)
        group_rows = [attrs[i] for i, (_s, _d, t) in enumerate(el.edges) if el.tag_catalog[t] == "group:g"]
        for row in group_rows[1:]:
            assert np.array_equal(row, group_rows[0])


class TestNeighbors:
    def test_isolated_node_self_only(self):
        topo = build_topology({"groups": [{"id": 0, "members": 1}]})
        el = build_edges(topo)
        assert neighbors(el, 0) == [0]

    def test_host_pair(self):
        el = build_edges(build_topology(host_pair_config()))
        assert neighbors(el, 0) == [0, 1]
        assert neighbors(el, 1) == [0, 1]

    def test_complete_group(self):
        topo = build_topology({"groups": [{"id": 0, "name": "g", "members": 3}]})
        el = build_edges(topo)
        for i in range(3):
            assert neighbors(el, i) == [0, 1, 2]

    def test_unknown_node(self):
        el = build_edges(build_topology({"groups": [{"id": 0, "members": 1}]}))
        with pytest.raises(ValueError, match="unknown node"):
            neighbors(el, 5)


def test_save_edge_list(tmp_path):
    el = build_edges(build_topology(host_pair_config()))
    save_edge_list(el, tmp_path / "edges.csv", tmp_path / "tags.txt")
    lines = (tmp_path / "edges.csv").read_text().splitlines()
    assert lines[0] == "src,dst,tag"
    assert "0,1,host-guest" in lines
    assert (tmp_path / "tags.txt").read_text().splitlines() == list(el.tag_catalog)
