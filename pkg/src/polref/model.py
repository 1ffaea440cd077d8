"""In-memory policy: organisation structure plus contextual permission rules.

All objects are frozen dataclasses; resolution helpers are pure functions
of the :class:`Policy`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

from .errors import ResolutionError, StructuralError
from .netspace import PORT_MAX, AddressSet, AddrInterval, ServiceSet, cidr_to_interval, ip_to_int

ENTITY_KINDS = ("host", "subnet", "address_interval")
FUNCTIONALITIES = ("fw", "vpn", "ids")
SERVICE_PROTOCOLS = ("tcp", "udp", "icmp", "esp", "any")

# services every policy can name without declaring them
BUILTIN_SERVICES = {
    "ANY": ("any", ((0, PORT_MAX),)),
    "ISAKMP": ("udp", ((500, 500),)),
    "ESP": ("esp", ((0, PORT_MAX),)),
}


@dataclass(frozen=True)
class EntityDef:
    name: str
    kind: str
    address: Optional[str] = None  # host
    addr: Optional[str] = None  # subnet
    mask: Optional[int] = None  # subnet
    lo: Optional[str] = None  # address_interval
    hi: Optional[str] = None  # address_interval
    exclusions: tuple[str, ...] = ()
    is_zone: Optional[bool] = None  # None = decide from kind

    def base_interval(self) -> AddrInterval:
        if self.kind == "host":
            value = ip_to_int(self.address)
            return AddrInterval(value, value)
        if self.kind == "subnet":
            return cidr_to_interval(self.addr, self.mask)
        if self.kind == "address_interval":
            lo, hi = ip_to_int(self.lo), ip_to_int(self.hi)
            if hi < lo:
                raise StructuralError(f"entity {self.name}: interval hi < lo")
            return AddrInterval(lo, hi)
        raise StructuralError(f"entity {self.name}: unknown kind {self.kind!r}")

    def base(self) -> AddressSet:
        return AddressSet([self.base_interval()])

    @property
    def prefix_len(self) -> int:
        """Specificity used by longest-prefix matching (bigger = narrower)."""
        if self.kind == "subnet":
            return self.mask
        if self.kind == "host":
            return 32
        iv = self.base_interval()
        return 32 - (iv.hi - iv.lo + 1).bit_length() + 1


@dataclass(frozen=True)
class RoleDef:
    name: str
    senior_roles: tuple[str, ...] = ()
    members: tuple[str, ...] = ()


@dataclass(frozen=True)
class ServiceDef:
    name: str
    leaves: tuple[tuple[str, int, int], ...] = ()  # (protocol, lo, hi)
    children: tuple[str, ...] = ()

    @property
    def is_group(self) -> bool:
        return bool(self.children)


@dataclass(frozen=True)
class Interface:
    name: str
    addr: str
    mask: int

    @property
    def address(self) -> int:
        return ip_to_int(self.addr)


@dataclass(frozen=True)
class DeviceDef:
    name: str
    functionalities: frozenset[str]
    interfaces: tuple[Interface, ...]

    def has(self, functionality: str) -> bool:
        return functionality in self.functionalities


@dataclass(frozen=True)
class DefaultContext:
    kind = "default"


@dataclass(frozen=True)
class ProtectedContext:
    algorithm: str = "AES"
    endpoints: Optional[tuple[str, str]] = None
    time_interval: Optional[tuple[str, str]] = None
    kind = "protected"


@dataclass(frozen=True)
class VulnerabilityContext:
    message: str
    cve: Optional[str] = None
    content: Optional[str] = None
    kind = "vulnerability"


ContextSpec = Union[DefaultContext, ProtectedContext, VulnerabilityContext]


@dataclass(frozen=True)
class PermissionRule:
    id: str
    subject_role: str
    activity: str
    target_role: str
    decision: str = "permission"  # or "prohibition"
    context: ContextSpec = field(default_factory=DefaultContext)
    security_roles: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class Policy:
    org_name: str
    entities: tuple[EntityDef, ...] = ()
    roles: tuple[RoleDef, ...] = ()
    services: tuple[ServiceDef, ...] = ()
    devices: tuple[DeviceDef, ...] = ()
    permissions: tuple[PermissionRule, ...] = ()
    parent_org: Optional[str] = None

    @cached_property
    def entity_map(self) -> dict[str, EntityDef]:
        return {e.name: e for e in self.entities}

    @cached_property
    def role_map(self) -> dict[str, RoleDef]:
        return {r.name: r for r in self.roles}

    @cached_property
    def service_map(self) -> dict[str, ServiceDef]:
        return {s.name: s for s in self.services}

    @cached_property
    def device_map(self) -> dict[str, DeviceDef]:
        return {d.name: d for d in self.devices}

    @cached_property
    def _juniors(self) -> dict[str, list[str]]:
        juniors: dict[str, list[str]] = {r.name: [] for r in self.roles}
        for r in self.roles:
            for senior in r.senior_roles:
                juniors.setdefault(senior, []).append(r.name)
        return juniors

    def entity(self, name: str) -> EntityDef:
        try:
            return self.entity_map[name]
        except KeyError:
            raise ResolutionError(f"unknown entity {name!r}") from None

    def device(self, name: str) -> DeviceDef:
        try:
            return self.device_map[name]
        except KeyError:
            raise ResolutionError(f"unknown device {name!r}") from None


# --------------------------------------------------------------------------
# resolution


def role_closure(role: str, policy: Policy) -> set[str]:
    """Members of ``role`` and of every role that has it as a senior ancestor.

    Rules on a senior role flow down to its juniors, so the closure walks
    the junior direction of the hierarchy.
    """
    if role not in policy.role_map:
        raise ResolutionError(f"unknown role {role!r}")
    seen = {role}
    stack = [role]
    members: set[str] = set()
    while stack:
        current = stack.pop()
        members.update(policy.role_map[current].members)
        for junior in policy._juniors.get(current, ()):
            if junior not in seen:
                seen.add(junior)
                stack.append(junior)
    return members


def service_closure(activity: str, policy: Policy) -> ServiceSet:
    """Canonical (protocol, ports) set reachable through group expansion."""
    leaves: list[tuple[str, int, int]] = []
    _collect_leaves(activity, policy, leaves, ())
    return ServiceSet(leaves)


def _collect_leaves(name, policy, out, path):
    if name in path:
        cycle = " -> ".join(path + (name,))
        raise StructuralError(f"service group cycle: {cycle}")
    svc = policy.service_map.get(name)
    if svc is None:
        if name in BUILTIN_SERVICES:
            proto, ports = BUILTIN_SERVICES[name]
            out.extend((proto, lo, hi) for lo, hi in ports)
            return
        raise ResolutionError(f"unknown service {name!r}")
    out.extend(svc.leaves)
    for child in svc.children:
        _collect_leaves(child, policy, out, path + (name,))


def resolve_entity(name: str, policy: Policy) -> AddressSet:
    """Concrete address set: base extent minus each (recursively resolved) exclusion."""
    return _resolve(name, policy, ())


def _resolve(name, policy, path):
    if name in path:
        cycle = " -> ".join(path + (name,))
        raise StructuralError(f"exclusion cycle: {cycle}")
    entity = policy.entity(name)
    extent = entity.base()
    for excluded in entity.exclusions:
        extent = extent - _resolve(excluded, policy, path + (name,))
    return extent


def resolve_member(name: str, policy: Policy) -> AddressSet:
    """Extent of a role member: an entity, or a device (its interface addresses)."""
    if name in policy.entity_map:
        return resolve_entity(name, policy)
    if name in policy.device_map:
        addrs = [iface.address for iface in policy.device_map[name].interfaces]
        return AddressSet((a, a) for a in addrs)
    raise ResolutionError(f"unknown role member {name!r}")


def resolve_role(role: str, policy: Policy) -> AddressSet:
    extent = AddressSet()
    for member in sorted(role_closure(role, policy)):
        extent = extent | resolve_member(member, policy)
    return extent
