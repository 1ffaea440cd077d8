"""Exact set algebra over IPv4 intervals and (protocol, src, dst, port) boxes.

Every set is stored as a nested *interval map*: a sorted tuple of
``(lo, hi, child)`` entries per dimension, where ``child`` is the set over
the remaining dimensions (``True`` on the last one).  Adjacent entries with
equal children are always merged, so two sets with the same membership
function have identical representations.  That gives canonical box lists
for free and makes ``==`` a structural comparison.
"""

from __future__ import annotations

import ipaddress
from typing import Iterable, Iterator, NamedTuple, Sequence

ADDR_MAX = 0xFFFFFFFF
PORT_MAX = 65535

PROTOCOLS = ("tcp", "udp", "icmp", "esp")
PROTO_CODE = {name: code for code, name in enumerate(PROTOCOLS)}
PROTO_ANY = "any"


class AddressError(ValueError):
    pass


class AddrInterval(NamedTuple):
    lo: int
    hi: int

    def __str__(self) -> str:
        return format_interval(self.lo, self.hi)


# --------------------------------------------------------------------------
# address helpers


def ip_to_int(text: str) -> int:
    try:
        return int(ipaddress.IPv4Address(text.strip()))
    except ValueError as exc:
        raise AddressError(f"invalid IPv4 address {text!r}") from exc


def int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


def cidr_to_interval(addr: str | int, mask: int, strict: bool = True) -> AddrInterval:
    """Return the inclusive [network, broadcast] interval of ``addr/mask``."""
    if not 0 <= mask <= 32:
        raise AddressError(f"mask {mask} out of range 0-32")
    base = ip_to_int(addr) if isinstance(addr, str) else addr
    size = 1 << (32 - mask)
    net = base & ~(size - 1) & ADDR_MAX
    if strict and net != base:
        raise AddressError(f"{int_to_ip(base)}/{mask} has host bits set")
    return AddrInterval(net, net + size - 1)


def interval_to_cidrs(lo: int, hi: int) -> list[tuple[int, int]]:
    """Minimal CIDR cover of [lo, hi] as (network, prefixlen) pairs."""
    nets = ipaddress.summarize_address_range(
        ipaddress.IPv4Address(lo), ipaddress.IPv4Address(hi)
    )
    return [(int(n.network_address), n.prefixlen) for n in nets]


def format_interval(lo: int, hi: int) -> str:
    """CIDR notation when the interval is one aligned block, ``a-b`` otherwise."""
    cidrs = interval_to_cidrs(lo, hi)
    if len(cidrs) == 1:
        net, plen = cidrs[0]
        return f"{int_to_ip(net)}/{plen}"
    return f"{int_to_ip(lo)}-{int_to_ip(hi)}"


def parse_addr_spec(text: str) -> AddrInterval:
    """Inverse of :func:`format_interval`; also accepts a bare address."""
    text = text.strip()
    if "/" in text:
        addr, mask = text.split("/", 1)
        return cidr_to_interval(addr, int(mask))
    if "-" in text:
        lo, hi = text.split("-", 1)
        return AddrInterval(ip_to_int(lo), ip_to_int(hi))
    value = ip_to_int(text)
    return AddrInterval(value, value)


# --------------------------------------------------------------------------
# interval map engine

_EMPTY: tuple = ()


def _combine(a: tuple, b: tuple, depth: int, last: int, keep) -> tuple:
    # keep(False, False) must be False; callers only pass union/and/minus
    if not a:
        return b if (b and keep(False, True)) else _EMPTY
    if not b:
        return a if keep(True, False) else _EMPTY
    points = set()
    for lo, hi, _ in a:
        points.add(lo)
        points.add(hi + 1)
    for lo, hi, _ in b:
        points.add(lo)
        points.add(hi + 1)
    cuts = sorted(points)
    out: list = []
    ia = ib = 0
    na, nb = len(a), len(b)
    for k in range(len(cuts) - 1):
        lo = cuts[k]
        hi = cuts[k + 1] - 1
        while ia < na and a[ia][1] < lo:
            ia += 1
        while ib < nb and b[ib][1] < lo:
            ib += 1
        ea = a[ia] if ia < na and a[ia][0] <= lo else None
        eb = b[ib] if ib < nb and b[ib][0] <= lo else None
        if ea is None and eb is None:
            continue
        if depth == last:
            if not keep(ea is not None, eb is not None):
                continue
            child = True
        elif eb is None:
            if not keep(True, False):
                continue
            child = ea[2]
        elif ea is None:
            if not keep(False, True):
                continue
            child = eb[2]
        else:
            child = _combine(ea[2], eb[2], depth + 1, last, keep)
            if not child:
                continue
        if out and out[-1][1] + 1 == lo and out[-1][2] == child:
            out[-1] = (out[-1][0], hi, child)
        else:
            out.append((lo, hi, child))
    return tuple(out)


def _union(a, b):
    return a or b


def _intersect(a, b):
    return a and b


def _minus(a, b):
    return a and not b


def _box_node(box: Sequence[tuple[int, int]]) -> tuple:
    node: object = True
    for lo, hi in reversed(box):
        node = ((lo, hi, node),)
    return node  # type: ignore[return-value]


def _union_all(nodes: list[tuple], last: int) -> tuple:
    # pairwise reduction keeps repeated unions close to n log n
    while len(nodes) > 1:
        merged = []
        for i in range(0, len(nodes) - 1, 2):
            merged.append(_combine(nodes[i], nodes[i + 1], 0, last, _union))
        if len(nodes) % 2:
            merged.append(nodes[-1])
        nodes = merged
    return nodes[0] if nodes else _EMPTY


def _walk(node: tuple, prefix: tuple) -> Iterator[tuple]:
    for lo, hi, child in node:
        if child is True:
            yield prefix + ((lo, hi),)
        else:
            yield from _walk(child, prefix + ((lo, hi),))


def _contains(node, point: Sequence[int]) -> bool:
    for coord in point:
        if node is True:
            return True
        found = None
        for lo, hi, child in node:
            if lo <= coord <= hi:
                found = child
                break
            if lo > coord:
                break
        if found is None:
            return False
        node = found
    return node is True


def _count(node) -> int:
    if node is True:
        return 1
    return sum((hi - lo + 1) * _count(child) for lo, hi, child in node)


class _IntervalMap:
    """Shared machinery; subclasses fix the dimension layout."""

    __slots__ = ("_node", "_space")

    def __init__(self, node: tuple, space: tuple[tuple[int, int], ...]):
        self._node = node
        self._space = space

    def _make(self, node: tuple):
        obj = object.__new__(type(self))
        obj._node = node
        obj._space = self._space
        return obj

    def _check(self, other) -> None:
        if type(other) is not type(self):
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if other._space != self._space:
            raise ValueError("operands live in different universes")

    @property
    def _last(self) -> int:
        return len(self._space) - 1

    def union(self, other):
        self._check(other)
        return self._make(_combine(self._node, other._node, 0, self._last, _union))

    def intersect(self, other):
        self._check(other)
        return self._make(_combine(self._node, other._node, 0, self._last, _intersect))

    def difference(self, other):
        self._check(other)
        return self._make(_combine(self._node, other._node, 0, self._last, _minus))

    def complement(self):
        full = _box_node(self._space)
        return self._make(_combine(full, self._node, 0, self._last, _minus))

    __or__ = union
    __and__ = intersect
    __sub__ = difference
    __invert__ = complement

    def is_empty(self) -> bool:
        return not self._node

    def __bool__(self) -> bool:
        return bool(self._node)

    def issubset(self, other) -> bool:
        return (self - other).is_empty()

    def size(self) -> int:
        """Number of points in the set."""
        return _count(self._node) if self._node else 0

    def raw_boxes(self) -> Iterator[tuple[tuple[int, int], ...]]:
        return _walk(self._node, ())

    def __eq__(self, other) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return self._space == other._space and self._node == other._node

    def __hash__(self) -> int:
        return hash((type(self).__name__, self._node, self._space))


# --------------------------------------------------------------------------
# public set types


class AddressSet(_IntervalMap):
    """Canonical union of IPv4 intervals (sorted, disjoint, non-adjacent)."""

    __slots__ = ()

    def __init__(self, intervals: Iterable[tuple[int, int]] = (), top: int = ADDR_MAX):
        space = ((0, top),)
        nodes = []
        for lo, hi in intervals:
            if lo > hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")
            if lo < 0 or hi > top:
                raise ValueError(f"interval [{lo}, {hi}] outside [0, {top}]")
            nodes.append(((lo, hi, True),))
        super().__init__(_union_all(nodes, 0), space)

    @classmethod
    def full(cls, top: int = ADDR_MAX) -> "AddressSet":
        return cls([(0, top)], top=top)

    @classmethod
    def from_cidr(cls, addr: str, mask: int) -> "AddressSet":
        return cls([cidr_to_interval(addr, mask)])

    @property
    def top(self) -> int:
        return self._space[0][1]

    @property
    def intervals(self) -> list[AddrInterval]:
        return [AddrInterval(lo, hi) for lo, hi, _ in self._node]

    def __contains__(self, addr: int) -> bool:
        return _contains(self._node, (addr,))

    def __iter__(self) -> Iterator[AddrInterval]:
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self._node)

    def __repr__(self) -> str:
        return "AddressSet([" + ", ".join(str(iv) for iv in self.intervals) + "])"

    def to_text(self) -> str:
        if not self._node:
            return "none"
        return ",".join(format_interval(lo, hi) for lo, hi, _ in self._node)


def set_union(a: AddressSet, b: AddressSet) -> AddressSet:
    return a.union(b)


def set_intersect(a: AddressSet, b: AddressSet) -> AddressSet:
    return a.intersect(b)


def set_difference(a: AddressSet, b: AddressSet) -> AddressSet:
    return a.difference(b)


def set_complement(a: AddressSet) -> AddressSet:
    return a.complement()


def proto_range(proto: str) -> tuple[int, int]:
    if proto == PROTO_ANY:
        return (0, len(PROTOCOLS) - 1)
    try:
        code = PROTO_CODE[proto]
    except KeyError:
        raise ValueError(f"unknown protocol {proto!r}") from None
    return (code, code)


class ServiceSet(_IntervalMap):
    """Canonical (protocol, port-interval) set; ``any`` spans every protocol."""

    __slots__ = ()

    def __init__(self, leaves: Iterable[tuple[str, int, int]] = (), port_top: int = PORT_MAX):
        space = ((0, len(PROTOCOLS) - 1), (0, port_top))
        nodes = []
        for proto, lo, hi in leaves:
            if not 0 <= lo <= hi <= port_top:
                raise ValueError(f"bad port interval [{lo}, {hi}]")
            nodes.append(_box_node((proto_range(proto), (lo, hi))))
        super().__init__(_union_all(nodes, 1), space)

    def ports(self, proto: str) -> list[tuple[int, int]]:
        code = PROTO_CODE[proto]
        for lo, hi, child in self._node:
            if lo <= code <= hi:
                return [(plo, phi) for plo, phi, _ in child]
        return []

    def leaves(self) -> list[tuple[str, int, int]]:
        """Canonical ``(proto, lo, hi)`` list ordered by protocol then port."""
        out = []
        for (plo, phi), (lo, hi) in self.raw_boxes():
            for code in range(plo, phi + 1):
                out.append((PROTOCOLS[code], lo, hi))
        out.sort(key=lambda leaf: (PROTO_CODE[leaf[0]], leaf[1]))
        return out

    def __contains__(self, item: tuple[str, int]) -> bool:
        proto, port = item
        return _contains(self._node, (PROTO_CODE[proto], port))

    def __repr__(self) -> str:
        return "ServiceSet(" + ", ".join(f"{p}/{lo}-{hi}" for p, lo, hi in self.leaves()) + ")"


class Box(NamedTuple):
    src: AddrInterval
    dst: AddrInterval
    proto: str
    port: tuple[int, int]


class TripletSet(_IntervalMap):
    """Union of (src, dst, protocol, port) boxes with exact set operations.

    Internally the dimension order is (proto, src, dst, port), which makes
    the canonical box order (proto, src.lo, dst.lo, port.lo).
    """

    __slots__ = ()

    def __init__(
        self,
        boxes: Iterable[tuple] = (),
        addr_top: int = ADDR_MAX,
        port_top: int = PORT_MAX,
    ):
        space = ((0, len(PROTOCOLS) - 1), (0, addr_top), (0, addr_top), (0, port_top))
        nodes = []
        for src, dst, proto, port in boxes:
            if src[0] > src[1] or dst[0] > dst[1] or port[0] > port[1]:
                raise ValueError("empty box extent")
            nodes.append(_box_node((proto_range(proto), tuple(src), tuple(dst), tuple(port))))
        super().__init__(_union_all(nodes, 3), space)

    @classmethod
    def product(cls, src: AddressSet, dst: AddressSet, services: ServiceSet) -> "TripletSet":
        """``src x dst x services`` as a single canonical set."""
        leaves = services.leaves()
        boxes = [
            (s, d, proto, (lo, hi))
            for proto, lo, hi in leaves
            for s in src.intervals
            for d in dst.intervals
        ]
        return cls(boxes, addr_top=src.top, port_top=services._space[1][1])

    @classmethod
    def full(cls, addr_top: int = ADDR_MAX, port_top: int = PORT_MAX) -> "TripletSet":
        return cls([((0, addr_top), (0, addr_top), PROTO_ANY, (0, port_top))], addr_top, port_top)

    @property
    def boxes(self) -> list[Box]:
        out = []
        for (plo, phi), src, dst, port in self.raw_boxes():
            for code in range(plo, phi + 1):
                out.append(Box(AddrInterval(*src), AddrInterval(*dst), PROTOCOLS[code], port))
        out.sort(key=lambda b: (PROTO_CODE[b.proto], b.src.lo, b.dst.lo, b.port[0]))
        return out

    def __contains__(self, packet: tuple[int, int, str, int]) -> bool:
        src, dst, proto, port = packet
        code = PROTO_CODE[proto] if isinstance(proto, str) else proto
        return _contains(self._node, (code, src, dst, port))

    def __len__(self) -> int:
        return len(self.boxes)

    def __repr__(self) -> str:
        parts = [
            f"({b.src}, {b.dst}, {b.proto}, {b.port[0]}-{b.port[1]})" for b in self.boxes
        ]
        return "TripletSet([" + ", ".join(parts) + "])"


def triplet_intersect(w: TripletSet, f: TripletSet) -> TripletSet:
    return w.intersect(f)


def triplet_difference(w: TripletSet, f: TripletSet) -> TripletSet:
    return w.difference(f)


def triplet_complement(f: TripletSet) -> TripletSet:
    return f.complement()
