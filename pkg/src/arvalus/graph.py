"""Dependency graph fabrication: typed edges, tag catalog, one-hot attributes.

Edges are derived purely from deployment metadata. Five edge families
exist: a self-loop per node, reciprocal host/guest pairs per placement,
complete directed cliques inside multi-member groups (one tag per group),
and member-to-member edges per declared group dependency (one tag per
direction).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulator import DeploymentTopology, TopologyError

TAG_IDENTITY = "identity"
TAG_HOST_GUEST = "host-guest"
TAG_GUEST_HOST = "guest-host"


@dataclass(frozen=True)
class EdgeList:
    """Directed tagged edges plus the ordered catalog of unique tags."""

    edges: tuple[tuple[int, int, int], ...]  # (src, dst, tag id)
    tag_catalog: tuple[str, ...]

    @property
    def z(self) -> int:
        return len(self.tag_catalog)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src, dst, tag) index arrays for vectorized use."""
        arr = np.asarray(self.edges, dtype=np.int64)
        return arr[:, 0], arr[:, 1], arr[:, 2]


def build_edges(topology: DeploymentTopology) -> EdgeList:
    """Fabricate the tagged edge set of a topology.

    The tag catalog order is fixed for reproducibility: identity,
    host-guest, guest-host, group tags by group id, then dependency tags
    by declared (src, dst) group pair, each followed by its reverse.
    Only tags some edge can actually carry enter the catalog: the host /
    guest pair appears only when placements exist, and group tags only
    for groups with at least two members.
    """
    catalog: list[str] = [TAG_IDENTITY]
    if topology.placements:
        hg_tag, gh_tag = 1, 2
        catalog += [TAG_HOST_GUEST, TAG_GUEST_HOST]
    groups = sorted(topology.groups, key=lambda g: g.id)
    group_tag: dict[int, int] = {}
    for g in groups:
        if len(g.members) >= 2:
            group_tag[g.id] = len(catalog)
            catalog.append(f"group:{g.name}")
    dep_tag: dict[tuple[int, int], int] = {}
    by_id = {g.id: g for g in groups}
    for src, dst in topology.dependencies:
        for a, b in ((src, dst), (dst, src)):
            if (a, b) not in dep_tag:
                dep_tag[(a, b)] = len(catalog)
                catalog.append(f"dependency:{by_id[a].name}->{by_id[b].name}")

    edges: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int]] = set()

    def add(src: int, dst: int, tag: int) -> None:
        if (src, dst) in seen:
            raise TopologyError(
                f"conflicting relations produce parallel edges ({src}, {dst})"
            )
        seen.add((src, dst))
        edges.append((src, dst, tag))

    for node in topology.nodes:
        add(node.id, node.id, 0)
    for host, guest in sorted(topology.placements):
        add(host, guest, hg_tag)
        add(guest, host, gh_tag)
    for g in groups:
        if len(g.members) < 2:
            continue
        tag = group_tag[g.id]
        for i in g.members:
            for j in g.members:
                if i != j:
                    add(i, j, tag)
    for src, dst in topology.dependencies:
        for a, b in ((src, dst), (dst, src)):
            tag = dep_tag[(a, b)]
            for i in by_id[a].members:
                for j in by_id[b].members:
                    add(i, j, tag)

    return EdgeList(edges=tuple(edges), tag_catalog=tuple(catalog))


def encode_edge_attrs(edge_list: EdgeList) -> np.ndarray:
    """One-hot attribute matrix of shape (n_edges, z), row order = edge order."""
    attrs = np.zeros((edge_list.n_edges, edge_list.z), dtype=np.float64)
    for row, (_src, _dst, tag) in enumerate(edge_list.edges):
        if tag >= edge_list.z:
            raise ValueError(f"tag id {tag} outside catalog of size {edge_list.z}")
        attrs[row, tag] = 1.0
    return attrs


def neighbors(edge_list: EdgeList, node: int) -> list[int]:
    """Out-neighborhood of a node, including itself via the self-loop."""
    found = sorted({dst for src, dst, _tag in edge_list.edges if src == node})
    if not found:
        raise ValueError(f"unknown node id {node}")
    return found


def save_edge_list(edge_list: EdgeList, edges_path, catalog_path) -> None:
    """Dump edges as `src,dst,tag_name` lines plus the ordered tag catalog."""
    with open(edges_path, "w", encoding="utf-8") as fh:
        fh.write("src,dst,tag\n")
        for src, dst, tag in edge_list.edges:
            fh.write(f"{src},{dst},{edge_list.tag_catalog[tag]}\n")
    with open(catalog_path, "w", encoding="utf-8") as fh:
        for name in edge_list.tag_catalog:
            fh.write(name + "\n")
