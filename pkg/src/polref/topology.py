"""Zones, security devices and the zone/device adjacency graph.

A zone is a subnet-like entity holding no security-device interface.  Each
address belongs to at most one zone: nested declarations (``DMZ`` inside
``Corp``) are carved so that the more specific zone owns the overlap, and
device interface addresses are removed from every zone extent.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Optional

from .errors import Diagnostic, StructuralError, warning
from .model import Interface, Policy, resolve_entity
from .netspace import AddressSet, int_to_ip


@dataclass(frozen=True)
class Zone:
    name: str
    extent: AddressSet
    neighbors: tuple[str, ...]
    size: int  # number of addresses in the declared base extent
    attach_extent: AddressSet
    interfaces: tuple[tuple[str, str], ...] = ()  # (device, ifName) attached here

    @property
    def specificity(self) -> tuple[int, str]:
        return (self.size, self.name)


@dataclass(frozen=True)
class SecurityDevice:
    name: str
    functionalities: frozenset[str]
    interfaces: tuple[Interface, ...]
    neighbors: tuple[str, ...]
    iface_zone: dict = field(default_factory=dict, compare=False)  # ifName -> zone

    def has(self, functionality: str) -> bool:
        return functionality in self.functionalities

    def interface(self, name: str) -> Interface:
        for iface in self.interfaces:
            if iface.name == name:
                return iface
        raise KeyError(name)

    def interface_towards(self, zone: str) -> Interface:
        for iface in self.interfaces:
            if self.iface_zone[iface.name] == zone:
                return iface
        raise KeyError(f"{self.name} has no interface in zone {zone}")


@dataclass
class ZoneGraph:
    """Undirected bipartite graph: edges only join a zone and a device."""

    zones: frozenset[str]
    devices: frozenset[str]
    adjacency: dict[str, tuple[str, ...]]

    @property
    def edges(self) -> list[tuple[str, str]]:
        return sorted((z, d) for z in self.zones for d in self.adjacency.get(z, ()))

    def neighbors(self, node: str) -> tuple[str, ...]:
        return self.adjacency.get(node, ())

    def is_zone(self, node: str) -> bool:
        return node in self.zones

    def dump(self) -> str:
        return "".join(f"{z} <-> {d}\n" for z, d in self.edges)


@dataclass
class Topology:
    devices: dict[str, SecurityDevice]
    zones: dict[str, Zone]
    graph: ZoneGraph
    diagnostics: list[Diagnostic] = field(default_factory=list)
    _starts: list[int] = field(default_factory=list, repr=False)
    _index: list[tuple[int, int, str]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        spans = []
        for zone in self.zones.values():
            for iv in footprint(zone, self).intervals:
                spans.append((iv.lo, iv.hi, zone.name))
        spans.sort()
        self._index = spans
        self._starts = [s[0] for s in spans]

    def __iter__(self):
        # allows ``devices, zones, graph = extract_topology(policy)``
        return iter((self.devices, self.zones, self.graph))

    def zone_of(self, addr: int) -> Optional[str]:
        """Zone whose footprint holds ``addr`` (device interfaces included)."""
        i = bisect.bisect_right(self._starts, addr) - 1
        if i >= 0 and self._index[i][1] >= addr:
            return self._index[i][2]
        return None

    def interface_addresses(self) -> AddressSet:
        return AddressSet(
            (i.address, i.address) for d in self.devices.values() for i in d.interfaces
        )


def footprint(zone: Zone, topo: Topology) -> AddressSet:
    """Zone extent plus the addresses of device interfaces attached to it."""
    addrs = [
        topo.devices[dev].interface(ifname).address for dev, ifname in zone.interfaces
    ]
    return zone.extent | AddressSet((a, a) for a in addrs)


def _is_zone_entity(entity) -> bool:
    if entity.is_zone is not None:
        return entity.is_zone
    return entity.kind in ("subnet", "address_interval")


def _attach_extent(entity, policy: Policy) -> AddressSet:
    # host exclusions usually carve out device interfaces; those stay attachable
    extent = entity.base()
    for name in entity.exclusions:
        excluded = policy.entity(name)
        if excluded.kind != "host":
            extent = extent - resolve_entity(name, policy)
    return extent


def attach_interface(address: int, mask: int, zones: list[Zone]) -> str:
    """Longest-prefix match of an interface address against zone declarations.

    The narrowest containing zone wins; equal sizes fall back to the
    lexicographically smallest name.
    """
    candidates = [z for z in zones if address in z.attach_extent]
    if not candidates:
        raise StructuralError(f"interface {int_to_ip(address)}/{mask} matches no zone")
    return min(candidates, key=lambda z: z.specificity).name


def extract_topology(policy: Policy) -> Topology:
    """Build devices, carved zones and the adjacency graph from ``policy``."""
    diags: list[Diagnostic] = []
    iface_addrs = AddressSet(
        (i.address, i.address) for d in policy.devices for i in d.interfaces
    )
    declared = []
    for entity in policy.entities:
        if not _is_zone_entity(entity):
            continue
        base = entity.base_interval()
        declared.append((base.hi - base.lo + 1, entity.name, entity))
    declared.sort(key=lambda t: (t[0], t[1]))

    # carve: narrower zones claim their addresses first
    claimed = AddressSet()
    carved: dict[str, tuple[AddressSet, int, AddressSet]] = {}
    for size, name, entity in declared:
        resolved = resolve_entity(name, policy)
        extent = resolved - claimed - iface_addrs
        claimed = claimed | resolved
        carved[name] = (extent, size, _attach_extent(entity, policy))

    proto_zones = [
        Zone(name, extent, (), size, attach) for name, (extent, size, attach) in carved.items()
    ]
    zone_neighbors: dict[str, set[str]] = {z.name: set() for z in proto_zones}
    zone_ifaces: dict[str, list[tuple[str, str]]] = {z.name: [] for z in proto_zones}
    devices: dict[str, SecurityDevice] = {}
    for dev in sorted(policy.devices, key=lambda d: d.name):
        iface_zone = {}
        for iface in dev.interfaces:
            try:
                zone = attach_interface(iface.address, iface.mask, proto_zones)
            except StructuralError:
                raise StructuralError(
                    f"orphan interface {dev.name}/{iface.name} ({iface.addr}/{iface.mask}) "
                    "matches no zone"
                ) from None
            iface_zone[iface.name] = zone
            zone_neighbors[zone].add(dev.name)
            zone_ifaces[zone].append((dev.name, iface.name))
        neighbors = tuple(sorted(set(iface_zone.values())))
        devices[dev.name] = SecurityDevice(
            dev.name, dev.functionalities, dev.interfaces, neighbors, iface_zone
        )

    zones: dict[str, Zone] = {}
    for z in sorted(proto_zones, key=lambda z: z.name):
        ifaces = tuple(sorted(zone_ifaces[z.name]))
        if z.extent.is_empty() and not ifaces:
            diags.append(warning(f"zone[{z.name}]", "zone has no addresses left after carving; dropped"))
            continue
        zones[z.name] = Zone(
            z.name, z.extent, tuple(sorted(zone_neighbors[z.name])), z.size, z.attach_extent, ifaces
        )
        if not zone_neighbors[z.name]:
            diags.append(warning(f"zone[{z.name}]", "stub zone with no adjacent security device"))

    adjacency: dict[str, tuple[str, ...]] = {}
    for name, zone in zones.items():
        adjacency[name] = zone.neighbors
    for name, dev in devices.items():
        adjacency[name] = dev.neighbors
    graph = ZoneGraph(frozenset(zones), frozenset(devices), adjacency)
    return Topology(devices, zones, graph, diags)
