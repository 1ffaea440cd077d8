"""XML policy reader, structural validator and debug serializer.

Document layout (children in any order inside their parent)::

    organization
      orgName
      structure
        entity      entityName, subNet{addr,mask} | host{addr} | interval{lo,hi},
                    exclusionEntity{entityName}*        [@isZone]
        role        roleName, seniorRole{roleName}*, entityName*
        service     serviceName, (protocol, port{lo,hi}+)* | child{serviceName}*
        device      deviceName, functionality+, interface{ifName,addr,mask}+
      permission*   id?, decision?, roleName, serviceName, target{roleName},
                    context?[@kind], securityRole*
      parentOrg?
"""

from __future__ import annotations

import xml.parsers.expat
from dataclasses import dataclass, field
from typing import Optional
from xml.sax.saxutils import escape

from .errors import Diagnostic, PolicyParseError, error, has_errors, warning
from .model import (
    BUILTIN_SERVICES,
    FUNCTIONALITIES,
    SERVICE_PROTOCOLS,
    DefaultContext,
    DeviceDef,
    EntityDef,
    Interface,
    PermissionRule,
    Policy,
    ProtectedContext,
    RoleDef,
    ServiceDef,
    VulnerabilityContext,
    role_closure,
)
from .netspace import PORT_MAX, AddressError, cidr_to_interval, ip_to_int


@dataclass
class _Node:
    tag: str
    attrs: dict
    line: int
    children: list = field(default_factory=list)
    text: str = ""

    def find(self, tag: str) -> Optional["_Node"]:
        for child in self.children:
            if child.tag == tag:
                return child
        return None

    def findall(self, tag: str) -> list["_Node"]:
        return [c for c in self.children if c.tag == tag]

    def value(self, tag: str) -> Optional[str]:
        child = self.find(tag)
        return child.text.strip() if child is not None else None


def _build_tree(document: bytes) -> _Node:
    parser = xml.parsers.expat.ParserCreate("utf-8")
    stack: list[_Node] = []
    root: list[_Node] = []

    def start(tag, attrs):
        node = _Node(tag, dict(attrs), parser.CurrentLineNumber)
        if stack:
            stack[-1].children.append(node)
        else:
            root.append(node)
        stack.append(node)

    def end(tag):
        stack.pop()

    def chars(data):
        if stack:
            stack[-1].text += data

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(document, True)
    except xml.parsers.expat.ExpatError as exc:
        raise PolicyParseError(
            f"malformed XML: {xml.parsers.expat.ErrorString(exc.code)}", exc.lineno, exc.offset
        ) from None
    return root[0]


class _Reader:
    def __init__(self):
        self.diagnostics: list[Diagnostic] = []

    def err(self, node: _Node, path: str, message: str) -> None:
        self.diagnostics.append(error(f"{path} (line {node.line})", message))

    def warn(self, node: _Node, path: str, message: str) -> None:
        self.diagnostics.append(warning(f"{path} (line {node.line})", message))

    def required(self, node: _Node, tag: str, path: str) -> Optional[str]:
        value = node.value(tag)
        if not value:
            self.err(node, path, f"missing mandatory element <{tag}>")
            return None
        return value

    def unknown(self, node: _Node, path: str, known: set[str]) -> None:
        for child in node.children:
            if child.tag not in known:
                self.warn(child, f"{path}/{child.tag}", f"unknown element <{child.tag}> ignored")

    def int_value(self, node, tag, path, lo, hi) -> Optional[int]:
        raw = self.required(node, tag, path)
        if raw is None:
            return None
        try:
            value = int(raw)
        except ValueError:
            self.err(node, path, f"<{tag}> is not an integer: {raw!r}")
            return None
        if not lo <= value <= hi:
            self.err(node, path, f"<{tag}> {value} outside [{lo}, {hi}]")
            return None
        return value

    def address(self, node, tag, path) -> Optional[str]:
        raw = self.required(node, tag, path)
        if raw is None:
            return None
        try:
            ip_to_int(raw)
        except AddressError as exc:
            self.err(node, path, str(exc))
            return None
        return raw

    # ------------------------------------------------------------------

    def entity(self, node: _Node) -> Optional[EntityDef]:
        name = self.required(node, "entityName", "structure/entity")
        path = f"structure/entity[{name}]"
        self.unknown(node, path, {"entityName", "subNet", "host", "interval", "exclusionEntity"})
        shapes = [c for c in node.children if c.tag in ("subNet", "host", "interval")]
        if len(shapes) != 1:
            self.err(node, path, "entity needs exactly one of <subNet>, <host>, <interval>")
            return None
        shape = shapes[0]
        exclusions = tuple(
            x.value("entityName") or x.text.strip() for x in node.findall("exclusionEntity")
        )
        is_zone = node.attrs.get("isZone")
        zone_flag = None if is_zone is None else is_zone.strip().lower() in ("true", "1", "yes")
        if name is None:
            return None
        if shape.tag == "host":
            addr = self.address(shape, "addr", path)
            if addr is None:
                return None
            return EntityDef(name, "host", address=addr, exclusions=exclusions, is_zone=zone_flag)
        if shape.tag == "subNet":
            addr = self.address(shape, "addr", path)
            mask = self.int_value(shape, "mask", path, 0, 32)
            if addr is None or mask is None:
                return None
            try:
                cidr_to_interval(addr, mask)
            except AddressError as exc:
                self.err(shape, path, str(exc))
                return None
            return EntityDef(
                name, "subnet", addr=addr, mask=mask, exclusions=exclusions, is_zone=zone_flag
            )
        lo = self.address(shape, "lo", path)
        hi = self.address(shape, "hi", path)
        if lo is None or hi is None:
            return None
        if ip_to_int(hi) < ip_to_int(lo):
            self.err(shape, path, "interval has hi < lo")
            return None
        return EntityDef(
            name, "address_interval", lo=lo, hi=hi, exclusions=exclusions, is_zone=zone_flag
        )

    def role(self, node: _Node) -> Optional[RoleDef]:
        name = self.required(node, "roleName", "structure/role")
        path = f"structure/role[{name}]"
        self.unknown(node, path, {"roleName", "seniorRole", "entityName"})
        seniors = tuple(s.value("roleName") or s.text.strip() for s in node.findall("seniorRole"))
        members = tuple(m.text.strip() for m in node.findall("entityName"))
        if name is None:
            return None
        return RoleDef(name, seniors, members)

    def service(self, node: _Node) -> Optional[ServiceDef]:
        name = self.required(node, "serviceName", "structure/service")
        path = f"structure/service[{name}]"
        self.unknown(node, path, {"serviceName", "protocol", "port", "child"})
        leaves = []
        children = []
        proto = None
        saw_port = True
        for child in node.children:
            if child.tag == "protocol":
                if proto is not None and not saw_port:
                    self.err(child, path, f"protocol {proto} has no <port>")
                proto = child.text.strip().lower()
                saw_port = False
                if proto not in SERVICE_PROTOCOLS:
                    self.err(child, path, f"unknown protocol {proto!r}")
            elif child.tag == "port":
                if proto is None:
                    self.err(child, path, "<port> before any <protocol>")
                    continue
                lo = self.int_value(child, "lo", path, 0, PORT_MAX)
                hi = self.int_value(child, "hi", path, 0, PORT_MAX)
                saw_port = True
                if lo is None or hi is None:
                    continue
                if hi < lo:
                    self.err(child, path, f"port interval {lo}-{hi} is empty")
                    continue
                leaves.append((proto, lo, hi))
            elif child.tag == "child":
                children.append(child.value("serviceName") or child.text.strip())
        if proto is not None and not saw_port:
            self.err(node, path, f"protocol {proto} has no <port>")
        if leaves and children:
            self.err(node, path, "service is both a leaf and a group")
        if not leaves and not children:
            self.err(node, path, "service has neither ports nor children")
        if name is None:
            return None
        return ServiceDef(name, tuple(leaves), tuple(children))

    def device(self, node: _Node) -> Optional[DeviceDef]:
        name = self.required(node, "deviceName", "structure/device")
        path = f"structure/device[{name}]"
        self.unknown(node, path, {"deviceName", "functionality", "interface"})
        funcs = frozenset(f.text.strip().lower() for f in node.findall("functionality"))
        interfaces = []
        for iface in node.findall("interface"):
            ifname = self.required(iface, "ifName", path)
            addr = self.address(iface, "addr", path)
            mask = self.int_value(iface, "mask", path, 0, 32)
            if ifname and addr and mask is not None:
                interfaces.append(Interface(ifname, addr, mask))
        if name is None:
            return None
        return DeviceDef(name, funcs, tuple(interfaces))

    def context(self, node: Optional[_Node], path: str):
        if node is None:
            return DefaultContext()
        kind = node.attrs.get("kind", "default").strip().lower()
        if kind == "default":
            return DefaultContext()
        if kind == "protected":
            self.unknown(
                node, path + "/context",
                {"algorithm", "endpointA", "endpointB", "timeStart", "timeEnd"},
            )
            a, b = node.value("endpointA"), node.value("endpointB")
            if (a is None) != (b is None):
                self.err(node, path, "protected context needs both endpointA and endpointB")
            start, end = node.value("timeStart"), node.value("timeEnd")
            if (start is None) != (end is None):
                self.err(node, path, "protected context needs both timeStart and timeEnd")
            return ProtectedContext(
                algorithm=node.value("algorithm") or "AES",
                endpoints=(a, b) if a and b else None,
                time_interval=(start, end) if start and end else None,
            )
        if kind == "vulnerability":
            self.unknown(node, path + "/context", {"cve", "content", "message"})
            message = node.value("message")
            if not message:
                self.err(node, path, "vulnerability context needs a non-empty <message>")
                message = ""
            cve = node.attrs.get("cve") or node.value("cve")
            return VulnerabilityContext(message=message, cve=cve, content=node.value("content"))
        self.err(node, path, f"unknown context kind {kind!r}")
        return None

    def permission(self, node: _Node, index: int) -> Optional[PermissionRule]:
        rule_id = node.value("id") or f"P{index}"
        path = f"permission[{rule_id}]"
        self.unknown(
            node, path,
            {"id", "decision", "roleName", "serviceName", "target", "context", "securityRole"},
        )
        decision = (node.value("decision") or "permission").lower()
        if decision not in ("permission", "prohibition"):
            self.err(node, path, f"unknown decision {decision!r}")
        subject = self.required(node, "roleName", path)
        activity = self.required(node, "serviceName", path)
        target_node = node.find("target")
        target = None
        if target_node is None:
            self.err(node, path, "missing mandatory element <target>")
        else:
            target = self.required(target_node, "roleName", path + "/target")
        ctx_nodes = node.findall("context")
        if len(ctx_nodes) > 1:
            self.err(node, path, "more than one <context>")
        context = self.context(ctx_nodes[0] if ctx_nodes else None, path)
        sec = node.findall("securityRole")
        security_roles = (
            tuple(s.value("roleName") or s.text.strip() for s in sec) if sec else None
        )
        if None in (subject, activity, target, context):
            return None
        return PermissionRule(
            id=rule_id,
            subject_role=subject,
            activity=activity,
            target_role=target,
            decision=decision,
            context=context,
            security_roles=security_roles,
        )


def parse_policy_with_diagnostics(document: bytes | str) -> tuple[Optional[Policy], list[Diagnostic]]:
    """Parse and validate; the policy is ``None`` whenever an error was found."""
    if isinstance(document, str):
        document = document.encode("utf-8")
    root = _build_tree(document)
    reader = _Reader()
    if root.tag != "organization":
        raise PolicyParseError(f"root element is <{root.tag}>, expected <organization>", root.line)
    reader.unknown(root, "organization", {"orgName", "structure", "permission", "parentOrg"})
    org_name = reader.required(root, "orgName", "organization") or ""
    structure = root.find("structure")
    entities, roles, services, devices = [], [], [], []
    if structure is not None:
        reader.unknown(structure, "structure", {"entity", "role", "service", "device"})
        for tag, fn, bucket in (
            ("entity", reader.entity, entities),
            ("role", reader.role, roles),
            ("service", reader.service, services),
            ("device", reader.device, devices),
        ):
            for node in structure.findall(tag):
                item = fn(node)
                if item is not None:
                    bucket.append(item)
    permissions = []
    for index, node in enumerate(root.findall("permission"), start=1):
        rule = reader.permission(node, index)
        if rule is not None:
            permissions.append(rule)
    policy = Policy(
        org_name=org_name,
        entities=tuple(entities),
        roles=tuple(roles),
        services=tuple(services),
        devices=tuple(devices),
        permissions=tuple(permissions),
        parent_org=root.value("parentOrg"),
    )
    diagnostics = reader.diagnostics + validate_policy(policy)
    if has_errors(diagnostics):
        return None, diagnostics
    return policy, diagnostics


def parse_policy(document: bytes | str) -> Policy:
    """Parse a policy document, raising on the first batch of errors."""
    policy, diagnostics = parse_policy_with_diagnostics(document)
    if policy is None:
        msgs = "; ".join(str(d) for d in diagnostics if d.is_error)
        raise PolicyParseError(f"invalid policy: {msgs}")
    return policy


# --------------------------------------------------------------------------
# validation


def _find_cycle(graph: dict[str, tuple[str, ...]]) -> Optional[list[str]]:
    """First cycle in a name graph (deterministic), or None."""
    state: dict[str, int] = {}
    for start in sorted(graph):
        if state.get(start):
            continue
        stack = [(start, iter(sorted(graph.get(start, ()))))]
        path = [start]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                state[node] = 2
                continue
            if nxt not in graph:
                continue
            if state.get(nxt) == 1:
                return path[path.index(nxt):] + [nxt]
            if not state.get(nxt):
                state[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(sorted(graph.get(nxt, ())))))
    return None


def _dupes(names) -> list[str]:
    seen, dup = set(), []
    for n in names:
        if n in seen and n not in dup:
            dup.append(n)
        seen.add(n)
    return dup


def validate_policy(policy: Policy) -> list[Diagnostic]:
    """Well-formedness checks; rule-vs-rule conflicts are deliberately not checked."""
    diags: list[Diagnostic] = []
    for category, names in (
        ("entity", [e.name for e in policy.entities]),
        ("role", [r.name for r in policy.roles]),
        ("service", [s.name for s in policy.services]),
        ("device", [d.name for d in policy.devices]),
        ("permission", [p.id for p in policy.permissions]),
    ):
        for name in _dupes(names):
            diags.append(error(f"{category}[{name}]", f"duplicate {category} name"))
    clash = set(policy.entity_map) & set(policy.device_map)
    for name in sorted(clash):
        diags.append(error(f"entity[{name}]", "name used both as entity and as device"))

    for e in policy.entities:
        for x in e.exclusions:
            if x not in policy.entity_map:
                diags.append(error(f"entity[{e.name}]", f"exclusion {x!r} is not a declared entity"))
    cycle = _find_cycle({e.name: e.exclusions for e in policy.entities})
    if cycle:
        diags.append(error("structure/entity", "exclusion cycle: " + " -> ".join(cycle)))
    else:
        for e in policy.entities:
            base = e.base()
            for x in e.exclusions:
                if x in policy.entity_map and not policy.entity_map[x].base().issubset(base):
                    diags.append(warning(
                        f"entity[{e.name}]", f"excluded entity {x!r} is not inside {e.name!r}"
                    ))
            known = [x for x in e.exclusions if x in policy.entity_map]
            for i, x in enumerate(known):
                for y in known[i + 1:]:
                    if not (policy.entity_map[x].base() & policy.entity_map[y].base()).is_empty():
                        # the additive rewrite assumes sibling exclusions are disjoint
                        diags.append(warning(
                            f"entity[{e.name}]", f"excluded entities {x!r} and {y!r} overlap"
                        ))

    for r in policy.roles:
        for s in r.senior_roles:
            if s not in policy.role_map:
                diags.append(error(f"role[{r.name}]", f"senior role {s!r} is not declared"))
        for m in r.members:
            if m not in policy.entity_map and m not in policy.device_map:
                diags.append(error(f"role[{r.name}]", f"member {m!r} is not a declared entity or device"))
    role_cycle = _find_cycle({r.name: r.senior_roles for r in policy.roles})
    if role_cycle:
        diags.append(error("structure/role", "role hierarchy cycle: " + " -> ".join(role_cycle)))

    for s in policy.services:
        for c in s.children:
            if c not in policy.service_map and c not in BUILTIN_SERVICES:
                diags.append(error(f"service[{s.name}]", f"child service {c!r} is not declared"))
    cycle = _find_cycle({s.name: s.children for s in policy.services})
    if cycle:
        diags.append(error("structure/service", "service group cycle: " + " -> ".join(cycle)))

    seen_addrs: dict[int, str] = {}
    for d in policy.devices:
        where = f"device[{d.name}]"
        if not d.functionalities:
            diags.append(error(where, "device declares no functionality"))
        for f in sorted(d.functionalities - set(FUNCTIONALITIES)):
            diags.append(error(where, f"unknown functionality {f!r} (expected fw, vpn or ids)"))
        if not d.interfaces:
            diags.append(error(where, "device declares no interface"))
        for iface in d.interfaces:
            owner = seen_addrs.get(iface.address)
            if owner is not None:
                diags.append(error(where, f"interface address {iface.addr} already used by {owner}"))
            seen_addrs[iface.address] = f"{d.name}/{iface.name}"

    for p in policy.permissions:
        where = f"permission[{p.id}]"
        for role in (p.subject_role, p.target_role):
            if role not in policy.role_map:
                diags.append(error(where, f"role {role!r} is not declared"))
            elif not role_closure(role, policy):
                diags.append(error(where, f"role {role!r} has no members after closure"))
        if p.activity not in policy.service_map and p.activity not in BUILTIN_SERVICES:
            diags.append(error(where, f"service {p.activity!r} is not declared"))
        if p.security_roles:
            for role in p.security_roles:
                if role not in policy.role_map:
                    diags.append(error(where, f"security role {role!r} is not declared"))
        ctx = p.context
        if isinstance(ctx, ProtectedContext) and ctx.endpoints:
            for dev in ctx.endpoints:
                if dev not in policy.device_map:
                    diags.append(error(where, f"tunnel endpoint {dev!r} is not a declared device"))
        if isinstance(ctx, VulnerabilityContext) and not ctx.message:
            diags.append(error(where, "vulnerability context without message"))
        if p.decision == "prohibition" and not isinstance(ctx, DefaultContext):
            diags.append(error(where, "prohibitions are only supported in the default context"))
    return diags


# --------------------------------------------------------------------------
# debug serializer


def _el(tag: str, text) -> str:
    return f"<{tag}>{escape(str(text))}</{tag}>"


def serialize_policy(policy: Policy) -> bytes:
    """Write ``policy`` back in the input format (a debugging aid)."""
    out = ['<?xml version="1.0" encoding="UTF-8"?>', "<organization>", "  " + _el("orgName", policy.org_name)]
    out.append("  <structure>")
    for e in policy.entities:
        attr = "" if e.is_zone is None else f' isZone="{str(e.is_zone).lower()}"'
        out.append(f"    <entity{attr}>" + _el("entityName", e.name))
        if e.kind == "host":
            out.append("      <host>" + _el("addr", e.address) + "</host>")
        elif e.kind == "subnet":
            out.append("      <subNet>" + _el("addr", e.addr) + _el("mask", e.mask) + "</subNet>")
        else:
            out.append("      <interval>" + _el("lo", e.lo) + _el("hi", e.hi) + "</interval>")
        for x in e.exclusions:
            out.append("      <exclusionEntity>" + _el("entityName", x) + "</exclusionEntity>")
        out.append("    </entity>")
    for r in policy.roles:
        out.append("    <role>" + _el("roleName", r.name))
        for s in r.senior_roles:
            out.append("      <seniorRole>" + _el("roleName", s) + "</seniorRole>")
        for m in r.members:
            out.append("      " + _el("entityName", m))
        out.append("    </role>")
    for s in policy.services:
        out.append("    <service>" + _el("serviceName", s.name))
        for proto, lo, hi in s.leaves:
            out.append("      " + _el("protocol", proto) + "<port>" + _el("lo", lo) + _el("hi", hi) + "</port>")
        for c in s.children:
            out.append("      <child>" + _el("serviceName", c) + "</child>")
        out.append("    </service>")
    for d in policy.devices:
        out.append("    <device>" + _el("deviceName", d.name))
        for f in sorted(d.functionalities):
            out.append("      " + _el("functionality", f))
        for i in d.interfaces:
            out.append(
                "      <interface>" + _el("ifName", i.name) + _el("addr", i.addr) + _el("mask", i.mask) + "</interface>"
            )
        out.append("    </device>")
    out.append("  </structure>")
    for p in policy.permissions:
        out.append("  <permission>" + _el("id", p.id) + _el("decision", p.decision))
        out.append("    " + _el("roleName", p.subject_role) + _el("serviceName", p.activity))
        out.append("    <target>" + _el("roleName", p.target_role) + "</target>")
        ctx = p.context
        if isinstance(ctx, ProtectedContext):
            parts = [_el("algorithm", ctx.algorithm)]
            if ctx.endpoints:
                parts += [_el("endpointA", ctx.endpoints[0]), _el("endpointB", ctx.endpoints[1])]
            if ctx.time_interval:
                parts += [_el("timeStart", ctx.time_interval[0]), _el("timeEnd", ctx.time_interval[1])]
            out.append('    <context kind="protected">' + "".join(parts) + "</context>")
        elif isinstance(ctx, VulnerabilityContext):
            parts = []
            if ctx.cve:
                parts.append(_el("cve", ctx.cve))
            if ctx.content is not None:
                parts.append(_el("content", ctx.content))
            parts.append(_el("message", ctx.message))
            out.append('    <context kind="vulnerability">' + "".join(parts) + "</context>")
        for role in p.security_roles or ():
            out.append("    <securityRole>" + _el("roleName", role) + "</securityRole>")
        out.append("  </permission>")
    if policy.parent_org:
        out.append("  " + _el("parentOrg", policy.parent_org))
    out.append("</organization>")
    return ("\n".join(out) + "\n").encode("utf-8")
