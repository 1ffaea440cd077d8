"""First compilation: abstract permissions to per-device generic rules.

Phases run in a fixed order so that the IDS placement step can read the
firewall configuration produced by the earlier phases:

1. default-context permissions and prohibitions (firewall pass/deny),
2. protected-context permissions (IPSec tunnels plus the firewall openings
   they need),
3. vulnerability-context permissions (IDS alerts, exploiting IDS/firewall
   redundancy to flag malfunctioning firewalls).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import Diagnostic, StructuralError, error, warning
from .model import (
    DefaultContext,
    PermissionRule,
    Policy,
    ProtectedContext,
    VulnerabilityContext,
    resolve_entity,
    resolve_member,
    resolve_role,
    role_closure,
    service_closure,
)
from .netspace import PORT_MAX, AddressSet, ServiceSet, TripletSet
from .pathfinding import DevicePath, TunnelEndpoints, endpoint_zones, passing_by, select_extremal, shortest_paths
from .topology import Topology, extract_topology, footprint

log = logging.getLogger(__name__)

NEGATIVE_FIRST = "negative-first"
POSITIVE = "positive"
FINAL_DENY = "final-deny"
_CLASS_RANK = {NEGATIVE_FIRST: 0, POSITIVE: 1, FINAL_DENY: 2}

ISAKMP = (("udp", 500, 500),)
ESP = (("esp", 0, PORT_MAX),)
ANY_SERVICE = (("any", 0, PORT_MAX),)
MALFUNCTION_SUFFIX = " - beware, malfunctioning {}"


@dataclass(frozen=True)
class ExclusionTerm:
    """``include`` minus the base extents of its direct exclusions."""

    include: str
    exclude: tuple[str, ...] = ()

    def __str__(self) -> str:
        return self.include + ("!" + ",".join(self.exclude) if self.exclude else "")


Endpoint = Union[ExclusionTerm, AddressSet, None]  # None = any address


@dataclass(frozen=True)
class GenericRule:
    device: str
    decision: str  # pass | deny | alert | tunnel
    src: Endpoint
    dst: Endpoint
    service: tuple[tuple[str, int, int], ...]
    order_class: str
    provenance: str
    message: Optional[str] = None
    content: Optional[str] = None
    tunnel_ref: Optional[str] = None


@dataclass(frozen=True)
class TunnelPlan:
    id: str
    provenance: str
    src_zone: str
    dst_zone: str
    endpoints: TunnelEndpoints
    src_extent: AddressSet
    dst_extent: AddressSet
    services: ServiceSet
    algorithm: str
    window: Optional[tuple[str, str]]
    addr_a: int  # negotiating interface addresses
    addr_b: int


@dataclass(frozen=True)
class AlertAssignment:
    device: str
    region: TripletSet
    message: str
    provenance: str
    content: Optional[str] = None
    malfunctioning: Optional[str] = None  # firewall suspected when the alert fires


@dataclass
class Deployment:
    policy: Policy
    topology: Topology
    rules: dict[str, list[GenericRule]]
    tunnels: list[TunnelPlan] = field(default_factory=list)
    alerts: dict[str, list[AlertAssignment]] = field(default_factory=dict)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    # permission id -> list of (W for one path, assignments made on that path)
    vulnerability_runs: dict[str, list[tuple[TripletSet, list[AlertAssignment]]]] = field(
        default_factory=dict
    )

    def devices_for(self, permission_id: str, decisions=("pass", "deny")) -> set[str]:
        return {
            dev for dev, rules in self.rules.items() for r in rules
            if r.provenance == permission_id and r.decision in decisions
        }

    def tunnels_for(self, device: str) -> list[TunnelPlan]:
        return [
            t for t in self.tunnels
            if device in (t.endpoints.endpoint_a, t.endpoints.endpoint_b)
        ]

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.is_error]


# --------------------------------------------------------------------------
# exclusion entities


def exclusion_rewrite(root: str, policy: Policy) -> list[ExclusionTerm]:
    """Flatten an exclusion tree into additive terms.

    Entities at even depth of the tree (the root is depth 0) each give one
    term carrying their direct exclusions; odd-depth entities only subtract.
    """
    terms: list[ExclusionTerm] = []

    def walk(name: str, depth: int, path: tuple[str, ...]) -> None:
        if name in path:
            raise StructuralError("exclusion cycle: " + " -> ".join(path + (name,)))
        entity = policy.entity(name)
        if depth % 2 == 0:
            terms.append(ExclusionTerm(name, tuple(entity.exclusions)))
        for child in entity.exclusions:
            walk(child, depth + 1, path + (name,))

    walk(root, 0, ())
    return terms


def endpoint_extent(endpoint: Endpoint, policy: Policy, top: int = 0xFFFFFFFF) -> AddressSet:
    """Addresses matched by a rule endpoint, exactly as backends render it."""
    if endpoint is None:
        return AddressSet.full(top)
    if isinstance(endpoint, AddressSet):
        return endpoint
    extent = policy.entity(endpoint.include).base()
    for name in endpoint.exclude:
        extent = extent - policy.entity(name).base()
    return extent


def rule_region(rule: GenericRule, policy: Policy) -> TripletSet:
    src = endpoint_extent(rule.src, policy)
    dst = endpoint_extent(rule.dst, policy)
    return TripletSet.product(src, dst, ServiceSet(rule.service))


def accepted_region(rules: list[GenericRule], policy: Policy) -> TripletSet:
    """Packets a firewall passes: pass regions minus deny regions (deny rules come first)."""
    passed = TripletSet()
    denied = TripletSet()
    for rule in rules:
        if rule.order_class == FINAL_DENY:
            continue
        if rule.decision == "pass":
            passed = passed | rule_region(rule, policy)
        elif rule.decision == "deny":
            denied = denied | rule_region(rule, policy)
    return passed - denied


# --------------------------------------------------------------------------
# compiler


class _Compiler:
    def __init__(self, policy: Policy, prohibition_placement: str):
        if prohibition_placement not in ("upstream", "downstream"):
            raise ValueError(f"unknown prohibition placement {prohibition_placement!r}")
        self.policy = policy
        self.placement = prohibition_placement
        self.topo = extract_topology(policy)
        self.diags: list[Diagnostic] = list(self.topo.diagnostics)
        self.rules: dict[str, dict[GenericRule, None]] = {d: {} for d in sorted(self.topo.devices)}
        self.tunnels: list[TunnelPlan] = []
        self.alerts: dict[str, dict[AlertAssignment, None]] = {
            d: {} for d, dev in sorted(self.topo.devices.items()) if dev.has("ids")
        }
        self.vuln_runs: dict[str, list] = {}
        self._paths: dict[tuple[str, str], list[DevicePath]] = {}
        self._terms: dict[str, list[Endpoint]] = {}
        self._extent: dict[str, AddressSet] = {}
        self._zones: dict[str, list[str]] = {}
        self._footprints = {name: footprint(z, self.topo) for name, z in self.topo.zones.items()}

    # cached lookups -----------------------------------------------------

    def paths(self, zs: str, zd: str) -> list[DevicePath]:
        key = (zs, zd)
        if key not in self._paths:
            self._paths[key] = shortest_paths(zs, zd, self.topo.graph)
        return self._paths[key]

    def terms(self, role: str) -> list[Endpoint]:
        if role not in self._terms:
            out: list[Endpoint] = []
            for member in sorted(role_closure(role, self.policy)):
                if member in self.policy.entity_map:
                    out.extend(exclusion_rewrite(member, self.policy))
                else:
                    out.append(resolve_member(member, self.policy))
            self._terms[role] = out
        return self._terms[role]

    def extent(self, role: str) -> AddressSet:
        if role not in self._extent:
            self._extent[role] = resolve_role(role, self.policy)
        return self._extent[role]

    def zones(self, role: str) -> list[str]:
        if role not in self._zones:
            extent = self.extent(role)
            zones = endpoint_zones(extent, self.topo)
            covered = AddressSet()
            for z in zones:
                covered = covered | self._footprints[z]
            if not (extent - covered).is_empty():
                self.diags.append(warning(
                    f"role[{role}]",
                    f"addresses {(extent - covered).to_text()} lie in no zone and are not deployed",
                ))
            self._zones[role] = zones
        return self._zones[role]

    def add(self, rule: GenericRule) -> None:
        self.rules[rule.device].setdefault(rule, None)

    def err(self, rule: PermissionRule, message: str) -> None:
        self.diags.append(error(f"permission[{rule.id}]", message))

    # phases -------------------------------------------------------------

    def zone_pairs(self, rule: PermissionRule):
        src_zones = self.zones(rule.subject_role)
        dst_zones = self.zones(rule.target_role)
        if not src_zones:
            self.err(rule, f"unreachable endpoint: role {rule.subject_role} maps to no zone")
        if not dst_zones:
            self.err(rule, f"unreachable endpoint: role {rule.target_role} maps to no zone")
        for zs in src_zones:
            for zd in dst_zones:
                if zs == zd:
                    self.diags.append(warning(
                        f"permission[{rule.id}]",
                        f"traffic inside zone {zs} crosses no security device",
                    ))
                    continue
                paths = self.paths(zs, zd)
                if not paths:
                    self.err(rule, f"unreachable: no path from zone {zs} to zone {zd}")
                    continue
                yield zs, zd, paths

    def restrict(self, rule: PermissionRule, devices: list[str]) -> list[str]:
        if rule.security_roles is None:
            return devices
        allowed: set[str] = set()
        for role in rule.security_roles:
            allowed |= role_closure(role, self.policy)
        kept = [d for d in devices if d in allowed]
        for d in devices:
            if d not in allowed:
                self.diags.append(warning(
                    f"permission[{rule.id}]",
                    f"discovered device {d} is not in the explicit securityRole list; skipped",
                ))
        return kept

    def deploy_default(self, rule: PermissionRule) -> None:
        services = service_closure(rule.activity, self.policy).leaves()
        decision = "pass" if rule.decision == "permission" else "deny"
        order = POSITIVE if decision == "pass" else NEGATIVE_FIRST
        src_terms = self.terms(rule.subject_role)
        dst_terms = self.terms(rule.target_role)
        for zs, zd, paths in self.zone_pairs(rule):
            for path in paths:
                fws = [d for d in path.hops if self.topo.devices[d].has("fw")]
                if not fws:
                    self.err(rule, f"missing functionality: no fw device on path {' '.join(path.nodes)}")
                    continue
                if decision == "pass":
                    targets = fws
                else:
                    which = "most_upstream" if self.placement == "upstream" else "most_downstream"
                    targets = [select_extremal(path, which, "fw", self.topo)]
                for device in self.restrict(rule, targets):
                    for st in src_terms:
                        for dt in dst_terms:
                            self.add(GenericRule(
                                device, decision, st, dt, tuple(services), order, rule.id
                            ))

    def deploy_protected(self, rule: PermissionRule) -> None:
        ctx: ProtectedContext = rule.context
        services = service_closure(rule.activity, self.policy)
        leaves = tuple(services.leaves())
        src_terms = self.terms(rule.subject_role)
        dst_terms = self.terms(rule.target_role)
        count = 0
        for zs, zd, _paths in self.zone_pairs(rule):
            ends = passing_by(zs, zd, self.topo, ctx.endpoints)
            if ends is None:
                self.err(rule, f"missing IPSec capability: no vpn endpoint pair for zones {zs} -> {zd}")
                continue
            count += 1
            tid = f"{rule.id}-t{count}"
            dev_a = self.topo.devices[ends.endpoint_a]
            dev_b = self.topo.devices[ends.endpoint_b]
            addr_a = dev_a.interface(ends.iface_a).address
            addr_b = dev_b.interface(ends.iface_b).address
            plan = TunnelPlan(
                tid, rule.id, zs, zd, ends,
                self.extent(rule.subject_role) & self._footprints[zs],
                self.extent(rule.target_role) & self._footprints[zd],
                services, ctx.algorithm, ctx.time_interval, addr_a, addr_b,
            )
            self.tunnels.append(plan)
            for endpoint in (ends.endpoint_a, ends.endpoint_b):
                for st in src_terms:
                    for dt in dst_terms:
                        self.add(GenericRule(
                            endpoint, "tunnel", st, dt, leaves, POSITIVE, rule.id, tunnel_ref=tid
                        ))
            ia, ib = AddressSet([(addr_a, addr_a)]), AddressSet([(addr_b, addr_b)])
            for device in ends.devices_on_path:
                if not self.topo.devices[device].has("fw"):
                    continue
                for svc in (ISAKMP, ESP):
                    self.add(GenericRule(device, "pass", ia, ib, svc, POSITIVE, rule.id, tunnel_ref=tid))
                    self.add(GenericRule(device, "pass", ib, ia, svc, POSITIVE, rule.id, tunnel_ref=tid))
            # cleartext leg: endpoints sit next to their zones, so only they filter it
            for endpoint in (ends.endpoint_a, ends.endpoint_b):
                if not self.topo.devices[endpoint].has("fw"):
                    continue
                for st in src_terms:
                    for dt in dst_terms:
                        self.add(GenericRule(endpoint, "pass", st, dt, leaves, POSITIVE, rule.id, tunnel_ref=tid))

    def deploy_vulnerability(self, rule: PermissionRule, accepted) -> None:
        ctx: VulnerabilityContext = rule.context
        services = service_closure(rule.activity, self.policy)
        runs = self.vuln_runs.setdefault(rule.id, [])
        for zs, zd, paths in self.zone_pairs(rule):
            w = TripletSet.product(
                self.extent(rule.subject_role) & self._footprints[zs],
                self.extent(rule.target_role) & self._footprints[zd],
                services,
            )
            if w.is_empty():
                continue
            for path in paths:
                made = ids_firewall_redundancy(
                    w, path, self.topo, accepted, ctx.message, rule.id, ctx.content
                )
                if made is None:
                    self.err(rule, f"missing functionality: no ids device on path {' '.join(path.nodes)}")
                    continue
                made = [a for a in made if a.device in self.restrict(rule, [a.device])]
                runs.append((w, made))
                for a in made:
                    self.alerts[a.device].setdefault(a, None)

    def run(self) -> Deployment:
        perms = self.policy.permissions
        for rule in perms:
            if isinstance(rule.context, DefaultContext):
                self.deploy_default(rule)
        for rule in perms:
            if isinstance(rule.context, ProtectedContext):
                self.deploy_protected(rule)
        cache: dict[str, TripletSet] = {}

        def accepted(device: str) -> TripletSet:
            if device not in cache:
                cache[device] = accepted_region(list(self.rules[device]), self.policy)
            return cache[device]

        for rule in perms:
            if isinstance(rule.context, VulnerabilityContext):
                self.deploy_vulnerability(rule, accepted)

        ordered: dict[str, list[GenericRule]] = {}
        for device, rules in self.rules.items():
            seq = sorted(enumerate(rules), key=lambda t: (_CLASS_RANK[t[1].order_class], t[0]))
            out = [r for _, r in seq]
            if self.topo.devices[device].has("fw"):
                out.append(GenericRule(device, "deny", None, None, ANY_SERVICE, FINAL_DENY, "implicit"))
            ordered[device] = out
        for device, assigned in self.alerts.items():
            for a in assigned:
                for box in a.region.boxes:
                    ordered[device].append(GenericRule(
                        device, "alert",
                        AddressSet([box.src]), AddressSet([box.dst]),
                        ((box.proto, box.port[0], box.port[1]),),
                        POSITIVE, a.provenance, message=a.message, content=a.content,
                    ))
        return Deployment(
            self.policy, self.topo, ordered, self.tunnels,
            {d: list(a) for d, a in self.alerts.items()}, self.diags, self.vuln_runs,
        )


def ids_firewall_redundancy(
    w: TripletSet,
    path: DevicePath,
    topo: Topology,
    accepted,
    message: str,
    provenance: str,
    content: Optional[str] = None,
) -> Optional[list[AlertAssignment]]:
    """Split alert region ``w`` between the IDSs of one path.

    Walking firewalls upstream to downstream, the part of the remaining
    region a firewall would drop goes to the first IDS behind that firewall
    with a malfunction warning; whatever is left goes to the most
    downstream IDS with the original message.  ``accepted`` maps a firewall
    name to the TripletSet it passes.  Returns None when the path has no IDS.
    """
    hops = path.hops
    ids_pos = [i for i, d in enumerate(hops) if topo.devices[d].has("ids")]
    if not ids_pos:
        return None
    remaining = w
    out: list[AlertAssignment] = []
    for i, dev in enumerate(hops):
        if not topo.devices[dev].has("fw"):
            continue
        after = [p for p in ids_pos if p > i]
        if not after:
            break
        redundant = remaining - accepted(dev)
        if redundant.is_empty():
            continue
        out.append(AlertAssignment(
            hops[after[0]], redundant, message + MALFUNCTION_SUFFIX.format(dev),
            provenance, content, malfunctioning=dev,
        ))
        remaining = remaining - redundant
        if remaining.is_empty():
            break
    if not remaining.is_empty():
        out.append(AlertAssignment(hops[ids_pos[-1]], remaining, message, provenance, content))
    return out


def security_role_discovery(rule: PermissionRule, policy: Policy, prohibition_placement: str = "upstream") -> Deployment:
    """Deploy a single permission against the policy topology."""
    single = Policy(
        policy.org_name, policy.entities, policy.roles, policy.services, policy.devices, (rule,)
    )
    return compile_policy(single, prohibition_placement)


def compile_policy(policy: Policy, prohibition_placement: str = "upstream") -> Deployment:
    """Run structure parsing, hierarchy treatment and placement for ``policy``."""
    deployment = _Compiler(policy, prohibition_placement).run()
    log.debug("compiled %d permissions onto %d devices", len(policy.permissions), len(deployment.rules))
    return deployment


compile = compile_policy  # noqa: A001 - public name used by callers


# --------------------------------------------------------------------------
# multi-target text


def _endpoint_text(endpoint: Endpoint) -> str:
    if endpoint is None:
        return "*"
    if isinstance(endpoint, AddressSet):
        return endpoint.to_text()
    return str(endpoint)


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_generic_rule(rule: GenericRule) -> list[str]:
    lines = []
    for proto, lo, hi in rule.service:
        parts = [
            rule.decision,
            f"src={_endpoint_text(rule.src)}",
            f"dst={_endpoint_text(rule.dst)}",
            f"proto={proto}",
            f"ports={lo}-{hi}",
        ]
        if rule.message is not None:
            parts.append(f"msg={_quote(rule.message)}")
        if rule.content is not None:
            parts.append(f"content={_quote(rule.content)}")
        if rule.tunnel_ref is not None:
            parts.append(f"tunnel={rule.tunnel_ref}")
        lines.append(" ".join(parts) + f" # from {rule.provenance}")
    return lines


def multi_target_files(deployment: Deployment) -> dict[str, str]:
    """``<device>.mt`` file name -> content, one file per security device."""
    files = {}
    for device in sorted(deployment.rules):
        lines = []
        for rule in deployment.rules[device]:
            lines.extend(format_generic_rule(rule))
        files[f"{device}.mt"] = "".join(line + "\n" for line in lines)
    return files
