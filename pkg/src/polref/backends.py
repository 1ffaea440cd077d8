"""Second compilation: generic rules to concrete device configurations.

Four targets, each with a reader that parses the emitted text back:

``.fw``   first-match filter using a sub-chain per excluded entity (jump/return)
``.fwp``  pass-only filter: exclusions pre-resolved, order irrelevant, deny-all last
``.ids``  signature alerts, one line per CIDR box
``.vpn``  neutral tunnel endpoint description
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .model import Policy
from .netspace import (
    ADDR_MAX,
    PORT_MAX,
    PROTO_CODE,
    PROTOCOLS,
    AddressSet,
    AddrInterval,
    TripletSet,
    format_interval,
    int_to_ip,
    interval_to_cidrs,
    ip_to_int,
    parse_addr_spec,
)
from .refinement import (
    FINAL_DENY,
    AlertAssignment,
    Deployment,
    ExclusionTerm,
    GenericRule,
    TunnelPlan,
    accepted_region,
)

# chain-table layout shared with the matching kernels
SRC_LO, SRC_HI, DST_LO, DST_HI, PROTO, PORT_LO, PORT_HI, ACTION, TARGET = range(9)
DROP, ACCEPT, JUMP, RETURN = 0, 1, 2, 3
_ACTIONS = {"drop": DROP, "accept": ACCEPT, "jump": JUMP, "return": RETURN}

SID_BASE = 1000000


# --------------------------------------------------------------------------
# first-match


def _intervals(endpoint, policy: Policy) -> list[Optional[AddrInterval]]:
    """Intervals a jump/accept line must match on; [None] means any."""
    if endpoint is None:
        return [None]
    if isinstance(endpoint, ExclusionTerm):
        return [policy.entity(endpoint.include).base_interval()]
    return list(endpoint.intervals)


def _excluded(endpoint, policy: Policy) -> list[AddrInterval]:
    if isinstance(endpoint, ExclusionTerm):
        return [policy.entity(x).base_interval() for x in endpoint.exclude]
    return []


def _match_text(src, dst, proto=None, ports=None) -> str:
    parts = []
    if src is not None:
        parts.append(f"src={format_interval(*src)}")
    if dst is not None:
        parts.append(f"dst={format_interval(*dst)}")
    if proto is not None and proto != "any":
        parts.append(f"proto={proto}")
    if ports is not None and ports != (0, PORT_MAX):
        parts.append(f"ports={ports[0]}-{ports[1]}")
    return " ".join(parts)


def _line(action: str, match: str, comment: str = "") -> str:
    text = action + (" " + match if match else "")
    return text + (f" # {comment}" if comment else "")


def emit_first_match_firewall(rules: Iterable[GenericRule], policy: Policy, device: str = "") -> str:
    """First-match config; excluded entities become RETURN lines in a sub-chain."""
    main: list[str] = []
    subchains: list[list[str]] = []
    for rule in rules:
        if rule.decision not in ("pass", "deny") or rule.order_class == FINAL_DENY:
            continue
        verdict = "accept" if rule.decision == "pass" else "drop"
        src_excl = _excluded(rule.src, policy)
        dst_excl = _excluded(rule.dst, policy)
        target = verdict
        if src_excl or dst_excl:
            name = f"r{len(subchains) + 1:04d}"
            body = [f"chain {name}"]
            body += [_line("return", _match_text(iv, None)) for iv in src_excl]
            body += [_line("return", _match_text(None, iv)) for iv in dst_excl]
            body.append(verdict)
            subchains.append(body)
            target = f"jump {name}"
        for s in _intervals(rule.src, policy):
            for d in _intervals(rule.dst, policy):
                for proto, lo, hi in rule.service:
                    main.append(_line(target, _match_text(s, d, proto, (lo, hi)), f"from {rule.provenance}"))
    header = f"# first-match filter{' for ' + device if device else ''}\n"
    lines = ["chain main"] + main + ["drop # implicit deny-all"]
    for body in subchains:
        lines += body
    return header + "".join(line + "\n" for line in lines)


def _parse_match(tokens: list[str]) -> list[int]:
    row = [0, ADDR_MAX, 0, ADDR_MAX, -1, 0, PORT_MAX]
    for tok in tokens:
        key, _, value = tok.partition("=")
        if key == "src":
            iv = parse_addr_spec(value)
            row[SRC_LO], row[SRC_HI] = iv
        elif key == "dst":
            iv = parse_addr_spec(value)
            row[DST_LO], row[DST_HI] = iv
        elif key == "proto":
            row[PROTO] = -1 if value == "any" else PROTO_CODE[value]
        elif key == "ports":
            lo, _, hi = value.partition("-")
            row[PORT_LO], row[PORT_HI] = int(lo), int(hi or lo)
        else:
            raise ValueError(f"unknown match field {key!r}")
    return row


@dataclass
class ChainTable:
    """Flat rule table: ``rows`` (n x 9, int64), chain bounds, chain names."""

    rows: np.ndarray
    chain_start: np.ndarray
    chain_end: np.ndarray
    names: list[str]


def read_first_match(text: str) -> ChainTable:
    """Parse a ``.fw`` file into a chain table (chain 0 is ``main``)."""
    chains: dict[str, list[tuple[str, str, list[str]]]] = {}
    order: list[str] = []
    current = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "chain":
            current = tokens[1]
            if current in chains:
                raise ValueError(f"chain {current} declared twice")
            chains[current] = []
            order.append(current)
            continue
        if current is None:
            raise ValueError("rule line before any chain header")
        action = tokens[0]
        target = ""
        rest = tokens[1:]
        if action == "jump":
            target, rest = rest[0], rest[1:]
        if action not in _ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        chains[current].append((action, target, rest))
    if order[:1] != ["main"]:
        raise ValueError("first chain must be 'main'")
    index = {name: i for i, name in enumerate(order)}
    rows, starts, ends = [], [], []
    for name in order:
        starts.append(len(rows))
        for action, target, rest in chains[name]:
            row = _parse_match(rest)
            row.append(_ACTIONS[action])
            row.append(index[target] if action == "jump" else -1)
            rows.append(row)
        ends.append(len(rows))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 9)
    return ChainTable(arr, np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64), order)


# --------------------------------------------------------------------------
# pass-only


def _box_line(action: str, box) -> str:
    return _line(action, _match_text(box.src, box.dst, box.proto, box.port))


def emit_pass_only_firewall(rules: Iterable[GenericRule], policy: Policy, device: str = "") -> str:
    """Order-insensitive config: the accepted region as canonical pass boxes."""
    region = accepted_region(list(rules), policy)
    header = f"# pass-only filter{' for ' + device if device else ''}\n"
    lines = [_box_line("pass", box) for box in region.boxes]
    lines.append("deny all")
    return header + "".join(line + "\n" for line in lines)


def read_pass_only(text: str) -> ChainTable:
    rows = []
    saw_deny = False
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens == ["deny", "all"]:
            saw_deny = True
            continue
        if tokens[0] != "pass" or saw_deny:
            raise ValueError(f"unexpected line in pass-only config: {raw!r}")
        row = _parse_match(tokens[1:])
        rows.append(row + [ACCEPT, -1])
    if not saw_deny:
        raise ValueError("pass-only config lacks its final 'deny all'")
    arr = np.array(rows, dtype=np.int64).reshape(-1, 9)
    return ChainTable(arr, np.array([0], dtype=np.int64), np.array([len(rows)], dtype=np.int64), ["main"])


def pass_only_region(text: str) -> TripletSet:
    table = read_pass_only(text)
    boxes = []
    for r in table.rows:
        proto = "any" if r[PROTO] < 0 else PROTOCOLS[r[PROTO]]
        boxes.append(((int(r[SRC_LO]), int(r[SRC_HI])), (int(r[DST_LO]), int(r[DST_HI])), proto,
                      (int(r[PORT_LO]), int(r[PORT_HI]))))
    return TripletSet(boxes)


# --------------------------------------------------------------------------
# IDS signatures


def _snort_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace(";", "\\;")


def _snort_unescape(text: str) -> str:
    return re.sub(r"\\(.)", r"\1", text)


def _cidr(net: int, plen: int) -> str:
    return f"{int_to_ip(net)}/{plen}"


def _portspec(proto: str, port: tuple[int, int]) -> str:
    if proto not in ("tcp", "udp") or port == (0, PORT_MAX):
        return "any"
    if port[0] == port[1]:
        return str(port[0])
    return f"{port[0]}:{port[1]}"


def emit_ids_signatures(assignments: Iterable[AlertAssignment]) -> str:
    """One alert line per CIDR box; sids count up from 1000000 in canonical order."""
    entries = []
    for a in assignments:
        for box in a.region.boxes:
            for snet, splen in interval_to_cidrs(*box.src):
                for dnet, dplen in interval_to_cidrs(*box.dst):
                    key = (PROTO_CODE[box.proto], snet, dnet, box.port[0], a.message, a.content or "")
                    entries.append((key, box, (snet, splen), (dnet, dplen), a))
    entries.sort(key=lambda e: e[0])
    lines = []
    for n, (_, box, s, d, a) in enumerate(entries):
        proto = "ip" if box.proto == "esp" else box.proto
        opts = [f'msg:"{_snort_escape(a.message)}"']
        if box.proto == "esp":
            opts.append("ip_proto:50")
        if a.content is not None:
            opts.append(f'content:"{_snort_escape(a.content)}"')
        opts += [f"sid:{SID_BASE + n}", "rev:1"]
        lines.append(
            f"alert {proto} {_cidr(*s)} any -> {_cidr(*d)} {_portspec(box.proto, box.port)} "
            f"({'; '.join(opts)};)"
        )
    return "".join(line + "\n" for line in lines)


_ALERT_RE = re.compile(
    r"^alert (?P<proto>\w+) (?P<src>\S+) any -> (?P<dst>\S+) (?P<ports>\S+) \((?P<opts>.*)\)$"
)


@dataclass(frozen=True)
class Signature:
    proto: str
    src: AddrInterval
    dst: AddrInterval
    ports: tuple[int, int]
    message: str
    content: Optional[str]
    sid: int


def _split_options(opts: str) -> list[tuple[str, str]]:
    out, buf, escaped = [], "", False
    for ch in opts:
        if escaped:
            buf += "\\" + ch
            escaped = False
        elif ch == "\\":
            escaped = True
        elif ch == ";":
            if buf.strip():
                key, _, value = buf.strip().partition(":")
                out.append((key, value))
            buf = ""
        else:
            buf += ch
    return out


def read_ids_signatures(text: str) -> list[Signature]:
    sigs = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        m = _ALERT_RE.match(raw.strip())
        if not m:
            raise ValueError(f"not an alert line: {raw!r}")
        opts = dict(_split_options(m["opts"]))
        proto = m["proto"]
        if proto == "ip" and opts.get("ip_proto") == "50":
            proto = "esp"
        ports = m["ports"]
        if ports == "any":
            prange = (0, PORT_MAX)
        elif ":" in ports:
            lo, hi = ports.split(":")
            prange = (int(lo), int(hi))
        else:
            prange = (int(ports), int(ports))
        content = opts.get("content")
        sigs.append(Signature(
            proto,
            parse_addr_spec(m["src"]),
            parse_addr_spec(m["dst"]),
            prange,
            _snort_unescape(opts["msg"].strip()[1:-1]),
            _snort_unescape(content.strip()[1:-1]) if content is not None else None,
            int(opts["sid"]),
        ))
    return sigs


# --------------------------------------------------------------------------
# tunnels


def emit_tunnel_config(plans: Iterable[TunnelPlan], device: str) -> str:
    """One ``tunnel`` line per plan, written from ``device``'s point of view."""
    lines = []
    for plan in sorted(plans, key=lambda p: p.id):
        ends = plan.endpoints
        if device == ends.endpoint_a:
            local, remote = plan.addr_a, plan.addr_b
        elif device == ends.endpoint_b:
            local, remote = plan.addr_b, plan.addr_a
        else:
            raise ValueError(f"{device} is not an endpoint of tunnel {plan.id}")
        if local is None or remote is None:
            raise AssertionError(f"tunnel {plan.id} has no negotiated interfaces")
        parts = [
            f"tunnel {plan.id}:",
            f"local={int_to_ip(local)}",
            f"remote={int_to_ip(remote)}",
            f"traffic={plan.src_extent.to_text()}->{plan.dst_extent.to_text()}",
            f"enc={plan.algorithm}",
        ]
        if plan.window:
            parts.append(f"window={plan.window[0]}-{plan.window[1]}")
        parts.append("mode=tunnel")
        lines.append(" ".join(parts))
    return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class TunnelLine:
    id: str
    local: int
    remote: int
    src: AddressSet
    dst: AddressSet
    algorithm: str
    window: Optional[tuple[str, str]]


def _extent_from_text(text: str) -> AddressSet:
    if text == "none":
        return AddressSet()
    return AddressSet(parse_addr_spec(part) for part in text.split(","))


def read_tunnel_config(text: str) -> list[TunnelLine]:
    out = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        head, _, rest = raw.partition(":")
        tid = head.split()[1]
        fields = dict(tok.split("=", 1) for tok in rest.split())
        src, _, dst = fields["traffic"].partition("->")
        window = None
        if "window" in fields:
            start, _, end = fields["window"].partition("-")
            window = (start, end)
        out.append(TunnelLine(
            tid, ip_to_int(fields["local"]), ip_to_int(fields["remote"]),
            _extent_from_text(src), _extent_from_text(dst), fields["enc"], window,
        ))
    return out


# --------------------------------------------------------------------------
# whole-deployment emission

TARGETS = ("first-match", "pass-only", "ids", "vpn")


def emit_files(deployment: Deployment, targets: Iterable[str] = TARGETS) -> dict[str, str]:
    """File name -> content for every device and requested target."""
    targets = set(targets)
    unknown = targets - set(TARGETS)
    if unknown:
        raise ValueError(f"unknown targets {sorted(unknown)}")
    files = {}
    policy = deployment.policy
    for name, dev in sorted(deployment.topology.devices.items()):
        rules = deployment.rules.get(name, [])
        if dev.has("fw"):
            if "first-match" in targets:
                files[f"{name}.fw"] = emit_first_match_firewall(rules, policy, name)
            if "pass-only" in targets:
                files[f"{name}.fwp"] = emit_pass_only_firewall(rules, policy, name)
        if dev.has("ids") and "ids" in targets:
            files[f"{name}.ids"] = emit_ids_signatures(deployment.alerts.get(name, []))
        if dev.has("vpn") and "vpn" in targets:
            files[f"{name}.vpn"] = emit_tunnel_config(deployment.tunnels_for(name), name)
    return files
