"""Shortest device paths over the zone graph and tunnel endpoint selection."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

from .netspace import AddressSet
from .topology import Topology, ZoneGraph, footprint


@dataclass(frozen=True)
class DevicePath:
    src_zone: str
    dst_zone: str
    nodes: tuple[str, ...]  # zone, device, zone, ..., zone

    @property
    def hops(self) -> tuple[str, ...]:
        return self.nodes[1::2]

    @property
    def zones(self) -> tuple[str, ...]:
        return self.nodes[0::2]

    def __len__(self) -> int:
        return len(self.hops)


@dataclass(frozen=True)
class TunnelEndpoints:
    endpoint_a: str
    endpoint_b: str
    iface_a: str  # ifName on endpoint_a negotiating the tunnel
    iface_b: str
    paths: tuple[tuple[str, ...], ...]  # device-to-device node sequences

    @property
    def devices_on_path(self) -> tuple[str, ...]:
        seen = []
        for nodes in self.paths:
            for node in nodes[0::2]:
                if node not in seen:
                    seen.append(node)
        return tuple(seen)


def endpoint_zones(extent: AddressSet, topo: Topology) -> list[str]:
    """Zones whose footprint meets ``extent``.

    Footprints are disjoint (nested zones were carved at extraction), so an
    enclosing zone only shows up when the extent covers addresses it still owns.
    """
    return [
        name for name, zone in sorted(topo.zones.items())
        if not (footprint(zone, topo) & extent).is_empty()
    ]


def _all_shortest(graph: ZoneGraph, src: str, dst: str) -> list[tuple[str, ...]]:
    if src == dst:
        return [(src,)]
    dist = {src: 0}
    preds: dict[str, list[str]] = {src: []}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        if node == dst:
            continue
        for nxt in sorted(graph.neighbors(node)):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                preds[nxt] = [node]
                queue.append(nxt)
            elif dist[nxt] == dist[node] + 1:
                preds[nxt].append(node)
    if dst not in dist:
        return []
    out: list[tuple[str, ...]] = []

    def unwind(node, suffix):
        if node == src:
            out.append((src,) + suffix)
            return
        for p in sorted(preds[node]):
            unwind(p, (node,) + suffix)

    unwind(dst, ())
    out.sort()
    return out


def shortest_paths(src: str, dst: str, graph: ZoneGraph) -> list[DevicePath]:
    """All minimum device-hop paths from zone ``src`` to zone ``dst``."""
    for z in (src, dst):
        if z not in graph.zones:
            raise KeyError(f"unknown zone {z!r}")
    return [DevicePath(src, dst, nodes) for nodes in _all_shortest(graph, src, dst)]


def select_extremal(path: DevicePath, which: str, functionality: str, topo: Topology) -> Optional[str]:
    """First (``most_upstream``) or last (``most_downstream``) hop with ``functionality``."""
    if which not in ("most_upstream", "most_downstream"):
        raise ValueError(f"unknown direction {which!r}")
    hops = path.hops if which == "most_upstream" else tuple(reversed(path.hops))
    for dev in hops:
        if topo.devices[dev].has(functionality):
            return dev
    return None


def passing_by(
    src_zone: str,
    dst_zone: str,
    topo: Topology,
    endpoints: Optional[tuple[str, str]] = None,
) -> Optional[TunnelEndpoints]:
    """Pick IPSec endpoints next to both zones and the interfaces that negotiate.

    Among all (A, B) pairs of distinct vpn-capable neighbours the pair with the
    shortest inter-endpoint path wins, ties broken by names.
    """
    graph = topo.graph
    if endpoints is not None:
        cands_a, cands_b = [endpoints[0]], [endpoints[1]]
    else:
        cands_a = [d for d in graph.neighbors(src_zone) if topo.devices[d].has("vpn")]
        cands_b = [d for d in graph.neighbors(dst_zone) if topo.devices[d].has("vpn")]
    best = None
    for a in sorted(cands_a):
        for b in sorted(cands_b):
            if a == b or not topo.devices[a].has("vpn") or not topo.devices[b].has("vpn"):
                continue
            paths = _all_shortest(graph, a, b)
            if not paths:
                continue
            key = (len(paths[0]), a, b)
            if best is None or key < best[0]:
                best = (key, a, b, paths)
    if best is None:
        return None
    _, a, b, paths = best
    first = paths[0]
    iface_a = _iface_in(topo, a, first[1])
    iface_b = _iface_in(topo, b, first[-2])
    return TunnelEndpoints(a, b, iface_a, iface_b, tuple(paths))


def _iface_in(topo: Topology, device: str, zone: str) -> str:
    dev = topo.devices[device]
    # several interfaces in one zone: lowest address negotiates
    names = sorted(
        (iface.address, iface.name) for iface in dev.interfaces if dev.iface_zone[iface.name] == zone
    )
    return names[0][1]
