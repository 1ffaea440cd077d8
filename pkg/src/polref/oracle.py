"""Brute-force equivalence between an abstract policy and its deployed configs.

Both sides are evaluated on the same finite packet universe.  The abstract
side reads the policy directly (closures, exclusions, deny-overrides); the
deployed side reads only the emitted device files, parsed back by the
backend readers and run through the matching kernel along every shortest
path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .backends import (
    ACCEPT,
    ChainTable,
    emit_files,
    read_first_match,
    read_ids_signatures,
    read_pass_only,
    read_tunnel_config,
)
from .model import (
    DefaultContext,
    Policy,
    ProtectedContext,
    VulnerabilityContext,
    resolve_entity,
    resolve_role,
    service_closure,
)
from .netspace import ADDR_MAX, PORT_MAX, PROTO_CODE, PROTOCOLS, AddressSet, ServiceSet, int_to_ip
from .pathfinding import shortest_paths
from .refinement import MALFUNCTION_SUFFIX, Deployment, compile_policy
from .topology import footprint

EXHAUSTIVE_LIMIT = 1 << 20
MAX_REPORTED = 100
BACKENDS = ("first-match", "pass-only")
ALLOW, DENY = "allow", "deny"

_SUFFIX_HEAD = MALFUNCTION_SUFFIX.split("{}")[0]


def base_message(message: str) -> str:
    """Alert message with any malfunction warning stripped."""
    head, sep, _ = message.rpartition(_SUFFIX_HEAD)
    return head if sep else message


# --------------------------------------------------------------------------
# vectorized membership helpers


def _member(aset: AddressSet, addrs: np.ndarray) -> np.ndarray:
    ivs = aset.intervals
    if not ivs:
        return np.zeros(addrs.shape, dtype=bool)
    los = np.array([iv.lo for iv in ivs], dtype=np.int64)
    his = np.array([iv.hi for iv in ivs], dtype=np.int64)
    i = np.searchsorted(los, addrs, side="right") - 1
    ok = i >= 0
    return ok & (addrs <= his[np.maximum(i, 0)])


def _service_member(services: ServiceSet, proto: np.ndarray, port: np.ndarray) -> np.ndarray:
    out = np.zeros(proto.shape, dtype=bool)
    for name, code in PROTO_CODE.items():
        sel = proto == code
        if not sel.any():
            continue
        for lo, hi in services.ports(name):
            out |= sel & (port >= lo) & (port <= hi)
    return out


def _packet_tuple(row) -> tuple:
    return (int(row[0]), int(row[1]), PROTOCOLS[int(row[2])], int(row[3]))


# --------------------------------------------------------------------------
# abstract side


class AbstractModel:
    """The policy as a packet classifier: allow mask, matching rules, expected alerts."""

    def __init__(self, policy: Policy):
        self.policy = policy
        self.rules = []
        for rule in policy.permissions:
            self.rules.append((
                rule,
                resolve_role(rule.subject_role, policy),
                resolve_role(rule.target_role, policy),
                service_closure(rule.activity, policy),
            ))

    def matches(self, packets: np.ndarray) -> dict[str, np.ndarray]:
        src, dst, proto, port = packets.T
        out = {}
        for rule, s, d, svc in self.rules:
            out[rule.id] = _member(s, src) & _member(d, dst) & _service_member(svc, proto, port)
        return out

    def decide(self, packets: np.ndarray, matched: Optional[dict] = None):
        """(allow mask, {message: mask}) with prohibitions overriding permissions."""
        matched = self.matches(packets) if matched is None else matched
        allow = np.zeros(len(packets), dtype=bool)
        deny = np.zeros(len(packets), dtype=bool)
        alerts: dict[str, np.ndarray] = {}
        for rule, *_ in self.rules:
            m = matched[rule.id]
            ctx = rule.context
            if isinstance(ctx, VulnerabilityContext):
                prev = alerts.get(ctx.message)
                alerts[ctx.message] = m if prev is None else prev | m
            elif rule.decision == "prohibition":
                deny |= m
            elif isinstance(ctx, (DefaultContext, ProtectedContext)):
                allow |= m
        return allow & ~deny, alerts


def decide_abstract(packet, policy: Policy) -> tuple[str, set[str]]:
    """Decision and expected alert messages for one ``(src, dst, proto, port)`` packet."""
    src, dst, proto, port = packet
    code = PROTO_CODE[proto] if isinstance(proto, str) else int(proto)
    arr = np.array([[src, dst, code, port]], dtype=np.int64)
    allow, alerts = AbstractModel(policy).decide(arr)
    return (ALLOW if allow[0] else DENY), {msg for msg, m in alerts.items() if m[0]}


# --------------------------------------------------------------------------
# deployed side


@dataclass
class _Tunnel:
    id: str
    src_zone: str
    dst_zone: str
    src: AddressSet
    dst: AddressSet
    services: ServiceSet
    endpoint_a: str
    endpoint_b: str
    local: int
    remote: int
    paths: tuple


class DeployedModel:
    """Deployed configuration read back from emitted files.

    ``files`` maps file names to text as produced by ``emit_files``; only
    ``.fw`` (or ``.fwp``), ``.ids`` and ``.vpn`` files are consulted.
    """

    def __init__(self, deployment: Deployment, files: Optional[dict[str, str]] = None,
                 backend: str = "first-match", kernel: Optional[str] = None):
        if backend not in BACKENDS:
            raise ValueError(f"unknown firewall backend {backend!r}")
        self.deployment = deployment
        self.topo = deployment.topology
        self.backend = backend
        self.kernel = kernels.get_backend(kernel)
        if files is None:
            files = emit_files(deployment, (backend, "ids", "vpn"))
        self.files = files
        suffix, reader = (".fw", read_first_match) if backend == "first-match" else (".fwp", read_pass_only)
        self.tables: dict[str, ChainTable] = {}
        self.signatures: dict[str, dict[str, ChainTable]] = {}
        for name, dev in sorted(self.topo.devices.items()):
            if dev.has("fw"):
                self.tables[name] = reader(files.get(name + suffix, _EMPTY[backend]))
            if dev.has("ids"):
                self.signatures[name] = _signature_tables(files.get(name + ".ids", ""))
        self.tunnels = self._read_tunnels()
        self._paths: dict[tuple[str, str], list] = {}

    def _read_tunnels(self) -> list[_Tunnel]:
        plans = {p.id: p for p in self.deployment.tunnels}
        out, seen = [], set()
        for name, dev in sorted(self.topo.devices.items()):
            if not dev.has("vpn"):
                continue
            for line in read_tunnel_config(self.files.get(name + ".vpn", "")):
                plan = plans.get(line.id)
                if plan is None or line.id in seen:
                    continue
                ends = plan.endpoints
                local, remote = line.local, line.remote
                if name == ends.endpoint_b:
                    local, remote = remote, local
                seen.add(line.id)
                out.append(_Tunnel(
                    line.id, plan.src_zone, plan.dst_zone, line.src, line.dst, plan.services,
                    ends.endpoint_a, ends.endpoint_b, local, remote, ends.paths,
                ))
        out.sort(key=lambda t: t.id)
        return out

    def paths(self, zs: str, zd: str):
        key = (zs, zd)
        if key not in self._paths:
            self._paths[key] = shortest_paths(zs, zd, self.topo.graph)
        return self._paths[key]

    def verdicts(self, device: str, packets: np.ndarray) -> np.ndarray:
        t = self.tables[device]
        out = self.kernel.eval_chains(t.rows, t.chain_start, t.chain_end, packets, 0)
        return np.asarray(out) == ACCEPT

    def decide(self, packets: np.ndarray, src_zone: np.ndarray, dst_zone: np.ndarray, zone_names: list[str]):
        """(allow mask, {message: mask}, {index: denying devices}) for in-model packets.

        ``src_zone``/``dst_zone`` hold indices into ``zone_names``; packets
        with equal zones are allowed without touching any device.
        """
        n = len(packets)
        allow = np.zeros(n, dtype=bool)
        alerts: dict[str, np.ndarray] = {}
        blame: dict[int, set[str]] = {}
        pair_code = src_zone * len(zone_names) + dst_zone
        tunneled = np.zeros(n, dtype=bool)

        src, dst, proto, port = packets.T
        for tun in self.tunnels:
            zs, zd = zone_names.index(tun.src_zone), zone_names.index(tun.dst_zone)
            sel = (~tunneled & (src_zone == zs) & (dst_zone == zd) & _member(tun.src, src)
                   & _member(tun.dst, dst) & _service_member(tun.services, proto, port))
            if not sel.any():
                continue
            tunneled |= sel
            idx = np.nonzero(sel)[0]
            ok = np.ones(len(idx), dtype=bool)
            for end in (tun.endpoint_a, tun.endpoint_b):
                if end in self.tables:
                    v = self.verdicts(end, packets[idx])
                    for i in idx[~v]:
                        blame.setdefault(int(i), set()).add(end)
                    ok &= v
            esp = np.array([[tun.local, tun.remote, PROTO_CODE["esp"], 0]], dtype=np.int64)
            esp_ok = False
            for nodes in tun.paths:
                fws = [d for d in nodes[0::2] if d in self.tables]
                if all(self.verdicts(d, esp)[0] for d in fws):
                    esp_ok = True
                    break
            if not esp_ok:
                for i in idx:
                    blame.setdefault(int(i), set()).add(f"tunnel {tun.id}")
            allow[idx] = ok & esp_ok

        for code in np.unique(pair_code):
            zs, zd = divmod(int(code), len(zone_names))
            sel = pair_code == code
            if zs == zd:
                allow[sel & ~tunneled] = True
                continue
            paths = self.paths(zone_names[zs], zone_names[zd])
            idx = np.nonzero(sel & ~tunneled)[0]
            if len(idx):
                sub = packets[idx]
                cache = {}
                any_path = np.zeros(len(idx), dtype=bool)
                for path in paths:
                    ok = np.ones(len(idx), dtype=bool)
                    for dev in path.hops:
                        if dev not in self.tables:
                            continue
                        if dev not in cache:
                            cache[dev] = self.verdicts(dev, sub)
                        ok &= cache[dev]
                    any_path |= ok
                allow[idx] = any_path
                for dev, v in cache.items():
                    for i in idx[~v & ~any_path]:
                        blame.setdefault(int(i), set()).add(dev)
            # IDSs watch the traffic on every shortest path, whatever the firewalls did
            all_idx = np.nonzero(sel)[0]
            ids_devs = sorted({d for p in paths for d in p.hops if d in self.signatures})
            sub = packets[all_idx]
            for dev in ids_devs:
                for msg, table in self.signatures[dev].items():
                    hit = np.asarray(self.kernel.eval_chains(
                        table.rows, table.chain_start, table.chain_end, sub, 0)) == ACCEPT
                    if hit.any():
                        mask = alerts.setdefault(msg, np.zeros(n, dtype=bool))
                        mask[all_idx[hit]] = True
        return allow, alerts, blame


_EMPTY = {"first-match": "chain main\ndrop\n", "pass-only": "deny all\n"}


def _signature_tables(text: str) -> dict[str, ChainTable]:
    by_msg: dict[str, list] = {}
    for sig in read_ids_signatures(text):
        proto = -1 if sig.proto == "any" else PROTO_CODE[sig.proto]
        by_msg.setdefault(sig.message, []).append(
            [sig.src.lo, sig.src.hi, sig.dst.lo, sig.dst.hi, proto, sig.ports[0], sig.ports[1], ACCEPT, -1]
        )
    out = {}
    for msg, rows in sorted(by_msg.items()):
        arr = np.array(rows, dtype=np.int64).reshape(-1, 9)
        out[msg] = ChainTable(arr, np.array([0], dtype=np.int64), np.array([len(rows)], dtype=np.int64), ["main"])
    return out


def _zone_index(topo, addrs: np.ndarray, zone_names: list[str]) -> np.ndarray:
    """Zone index per address (-1 outside every footprint)."""
    out = np.full(addrs.shape, -1, dtype=np.int64)
    for i, name in enumerate(zone_names):
        out[_member(footprint(topo.zones[name], topo), addrs)] = i
    return out


def decide_deployed(packet, deployment: Deployment, backend: str = "first-match",
                    files: Optional[dict[str, str]] = None) -> tuple[str, set[str]]:
    """Decision and raised alert messages for one packet against the emitted configs.

    Raises ValueError for an out-of-model packet (endpoint in no zone).
    """
    src, dst, proto, port = packet
    code = PROTO_CODE[proto] if isinstance(proto, str) else int(proto)
    arr = np.array([[src, dst, code, port]], dtype=np.int64)
    model = DeployedModel(deployment, files, backend)
    names = sorted(model.topo.zones)
    zs = _zone_index(model.topo, arr[:, 0], names)
    zd = _zone_index(model.topo, arr[:, 1], names)
    if zs[0] < 0 or zd[0] < 0:
        raise ValueError(f"out-of-model packet: {int_to_ip(src)} -> {int_to_ip(dst)} maps to no zone")
    allow, alerts, _ = model.decide(arr, zs, zd, names)
    return (ALLOW if allow[0] else DENY), {msg for msg, m in alerts.items() if m[0]}


# --------------------------------------------------------------------------
# universe


@dataclass
class Universe:
    addresses: np.ndarray
    services: np.ndarray  # (k, 2): proto code, port
    exhaustive: bool
    seed: Optional[int]
    packets: np.ndarray
    size: int  # packets in the full grid


def _address_points(policy: Policy, deployment: Deployment) -> np.ndarray:
    topo = deployment.topology
    cuts = {0, ADDR_MAX + 1}

    def add(lo, hi):
        cuts.add(lo)
        cuts.add(hi + 1)

    for entity in policy.entities:
        add(*entity.base_interval())
        for iv in resolve_entity(entity.name, policy).intervals:
            add(*iv)
    for zone in topo.zones.values():
        for iv in footprint(zone, topo).intervals:
            add(*iv)
    for iv in topo.interface_addresses().intervals:
        add(*iv)
    for tun in deployment.tunnels:
        for iv in tun.src_extent.intervals + tun.dst_extent.intervals:
            add(*iv)
    bounds = sorted(cuts)
    points = set()
    for lo, nxt in zip(bounds, bounds[1:]):
        points.add(lo)
        points.add(nxt - 1)
    return np.array(sorted(points), dtype=np.int64)


def _service_points(policy: Policy) -> np.ndarray:
    per_proto: dict[int, set[int]] = {code: {0, PORT_MAX} for code in range(len(PROTOCOLS))}
    svc_sets = [service_closure(r.activity, policy) for r in policy.permissions]
    svc_sets += [service_closure(name, policy) for name in ("ISAKMP", "ESP")]
    for svc in svc_sets:
        for proto, lo, hi in svc.leaves():
            for p in (lo - 1, lo, hi, hi + 1):
                if 0 <= p <= PORT_MAX:
                    per_proto[PROTO_CODE[proto]].add(p)
    rows = [(code, p) for code, ports in sorted(per_proto.items()) for p in sorted(ports)]
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def build_universe(policy: Policy, deployment: Deployment, exhaustive: Optional[bool] = None,
                   seed: int = 0, limit: int = EXHAUSTIVE_LIMIT) -> Universe:
    """Boundary-value packet grid: every address cell edge squared times every port edge.

    ``exhaustive=None`` enumerates the grid when it has at most ``limit``
    packets and otherwise draws ``limit`` packets stratified by service point.
    """
    addrs = _address_points(policy, deployment)
    svcs = _service_points(policy)
    na, ns = len(addrs), len(svcs)
    size = na * na * ns
    full = size <= limit if exhaustive is None else exhaustive
    if full:
        si, di, ki = np.meshgrid(np.arange(na), np.arange(na), np.arange(ns), indexing="ij")
        si, di, ki = si.ravel(), di.ravel(), ki.ravel()
        used_seed = None
    else:
        rng = np.random.default_rng(seed)
        per = max(1, limit // ns)
        ki = np.repeat(np.arange(ns), per)
        si = rng.integers(0, na, size=len(ki))
        di = rng.integers(0, na, size=len(ki))
        used_seed = seed
    packets = np.column_stack([addrs[si], addrs[di], svcs[ki, 0], svcs[ki, 1]]).astype(np.int64)
    return Universe(addrs, svcs, full, used_seed, packets, size)


# --------------------------------------------------------------------------
# equivalence report


@dataclass
class Mismatch:
    packet: tuple
    abstract: str
    deployed: str
    permissions: list[str]
    devices: list[str]

    def __str__(self) -> str:
        src, dst, proto, port = self.packet
        perms = ",".join(self.permissions) or "-"
        devs = ",".join(self.devices) or "-"
        return (f"{int_to_ip(src)} -> {int_to_ip(dst)} {proto}/{port}: abstract={self.abstract} "
                f"deployed={self.deployed} permissions={perms} devices={devs}")


@dataclass
class EquivalenceReport:
    policy: str
    backend: str
    exhaustive: bool
    seed: Optional[int]
    universe: int
    checked: int
    out_of_model: int
    intra_zone: int
    unenforceable: int
    allowed: int
    denied: int
    mismatch_count: int
    alert_mismatch_count: int
    mismatches: list[Mismatch] = field(default_factory=list)
    alert_mismatches: list[Mismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.mismatch_count == 0 and self.alert_mismatch_count == 0

    def to_text(self) -> str:
        mode = "exhaustive" if self.exhaustive else f"sampled (seed {self.seed})"
        lines = [
            f"policy {self.policy} backend {self.backend}: {mode}, {self.universe} packets in grid",
            f"checked {self.checked} (allow {self.allowed}, deny {self.denied}); "
            f"excluded: out-of-model {self.out_of_model}, intra-zone {self.intra_zone}, "
            f"unenforceable {self.unenforceable}",
            f"allow/deny mismatches {self.mismatch_count}, alert mismatches {self.alert_mismatch_count}",
        ]
        lines += [f"  mismatch {m}" for m in self.mismatches]
        lines += [f"  alert {m}" for m in self.alert_mismatches]
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        data = asdict(self)
        data["passed"] = self.passed
        return json.dumps(data, indent=2, sort_keys=True)


def equivalence_check(policy: Policy, deployment: Optional[Deployment] = None,
                      universe: Optional[Universe] = None, backend: str = "first-match",
                      files: Optional[dict[str, str]] = None, kernel: Optional[str] = None,
                      exhaustive: Optional[bool] = None, seed: int = 0) -> EquivalenceReport:
    """Compare abstract and deployed decisions on every universe packet."""
    if deployment is None:
        deployment = compile_policy(policy)
    if universe is None:
        universe = build_universe(policy, deployment, exhaustive, seed)
    topo = deployment.topology
    packets = universe.packets
    names = sorted(topo.zones)
    zs = _zone_index(topo, packets[:, 0], names)
    zd = _zone_index(topo, packets[:, 1], names)
    iface = topo.interface_addresses()
    out_model = (zs < 0) | (zd < 0) | _member(iface, packets[:, 0]) | _member(iface, packets[:, 1])
    intra = ~out_model & (zs == zd)

    unenforceable = np.zeros(len(packets), dtype=bool)
    pair_code = np.where(out_model | intra, -1, zs * len(names) + zd)
    for code in np.unique(pair_code):
        if code < 0:
            continue
        a, b = divmod(int(code), len(names))
        paths = shortest_paths(names[a], names[b], topo.graph)
        if not paths or any(not any(topo.devices[d].has("fw") for d in p.hops) for p in paths):
            unenforceable[pair_code == code] = True

    keep = ~out_model & ~intra & ~unenforceable
    sub = packets[keep]
    abstract = AbstractModel(policy)
    matched = abstract.matches(sub)
    a_allow, a_alerts = abstract.decide(sub, matched)
    deployed = DeployedModel(deployment, files, backend, kernel)
    d_allow, d_alerts, blame = deployed.decide(sub, zs[keep], zd[keep], names)

    bad = np.nonzero(a_allow != d_allow)[0]
    mismatches = []
    for i in bad[:MAX_REPORTED]:
        mismatches.append(Mismatch(
            _packet_tuple(sub[i]),
            ALLOW if a_allow[i] else DENY,
            ALLOW if d_allow[i] else DENY,
            [pid for pid, m in matched.items() if m[i]],
            sorted(blame.get(int(i), ())),
        ))

    # alerts: compared by coverage per original message
    raised: dict[str, np.ndarray] = {}
    for msg, m in d_alerts.items():
        key = base_message(msg)
        raised[key] = raised.get(key, np.zeros(len(sub), dtype=bool)) | m
    alert_bad = np.zeros(len(sub), dtype=bool)
    for msg in set(raised) | set(a_alerts):
        exp = a_alerts.get(msg, np.zeros(len(sub), dtype=bool))
        got = raised.get(msg, np.zeros(len(sub), dtype=bool))
        alert_bad |= exp != got
    alert_idx = np.nonzero(alert_bad)[0]
    alert_mismatches = []
    for i in alert_idx[:MAX_REPORTED]:
        exp = sorted(msg for msg, m in a_alerts.items() if m[i])
        got = sorted(msg for msg, m in d_alerts.items() if m[i])
        alert_mismatches.append(Mismatch(
            _packet_tuple(sub[i]), "alerts:" + "|".join(exp), "alerts:" + "|".join(got),
            [pid for pid, m in matched.items() if m[i]], [],
        ))

    return EquivalenceReport(
        policy=policy.org_name,
        backend=backend,
        exhaustive=universe.exhaustive,
        seed=universe.seed,
        universe=len(packets),
        checked=int(keep.sum()),
        out_of_model=int(out_model.sum()),
        intra_zone=int(intra.sum()),
        unenforceable=int(unenforceable.sum()),
        allowed=int(a_allow.sum()),
        denied=int((~a_allow).sum()),
        mismatch_count=len(bad),
        alert_mismatch_count=len(alert_idx),
        mismatches=mismatches,
        alert_mismatches=alert_mismatches,
    )


def check_alert_partition(deployment: Deployment) -> list[str]:
    """Symbolic alert-side property; returns a list of violations (empty when it holds).

    For every path of every vulnerability rule the assigned regions must be
    pairwise disjoint, cover W exactly, and carry the malfunction warning
    exactly when they came from a redundantly denying firewall.
    """
    problems = []
    for pid, runs in sorted(deployment.vulnerability_runs.items()):
        rule = next(r for r in deployment.policy.permissions if r.id == pid)
        message = rule.context.message
        for w, made in runs:
            union = None
            for i, a in enumerate(made):
                union = a.region if union is None else union | a.region
                for b in made[i + 1:]:
                    if not (a.region & b.region).is_empty():
                        problems.append(f"{pid}: overlapping alerts on {a.device} and {b.device}")
                expected = message if a.malfunctioning is None else (
                    message + MALFUNCTION_SUFFIX.format(a.malfunctioning))
                if a.message != expected:
                    problems.append(f"{pid}: alert on {a.device} has message {a.message!r}")
            if union is None or union != w:
                problems.append(f"{pid}: alert regions do not cover W exactly")
    return problems
