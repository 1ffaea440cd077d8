import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polref.netspace import (
    AddressError,
    AddressSet,
    ServiceSet,
    TripletSet,
    cidr_to_interval,
    format_interval,
    int_to_ip,
    interval_to_cidrs,
    ip_to_int,
    parse_addr_spec,
    set_complement,
    set_difference,
    set_intersect,
    set_union,
    triplet_complement,
    triplet_difference,
    triplet_intersect,
)

TOP = 255  # 8-bit toy address universe
PTOP = 15  # 4-bit toy port universe
PROTOS = ("tcp", "udp", "icmp", "esp")


def ip(text):
    return ip_to_int(text)


# ---------------------------------------------------------------- bitset oracle

def bits(aset):
    out = 0
    for lo, hi in aset.intervals:
        out |= ((1 << (hi - lo + 1)) - 1) << lo
    return out


def from_bits(mask):
    ivs, a = [], 0
    while a <= TOP:
        if mask >> a & 1:
            b = a
            while b + 1 <= TOP and mask >> (b + 1) & 1:
                b += 1
            ivs.append((a, b))
            a = b + 1
        else:
            a += 1
    return AddressSet(ivs, top=TOP)


intervals = st.lists(
    st.tuples(st.integers(0, TOP), st.integers(0, TOP)).map(lambda t: (min(t), max(t))),
    max_size=6,
)
addr_sets = intervals.map(lambda ivs: AddressSet(ivs, top=TOP))


@given(addr_sets, addr_sets)
@settings(max_examples=300, deadline=None)
def test_address_ops_match_bitsets(a, b):
    full = (1 << (TOP + 1)) - 1
    assert bits(a | b) == bits(a) | bits(b)
    assert bits(a & b) == bits(a) & bits(b)
    assert bits(a - b) == bits(a) & ~bits(b) & full
    assert bits(~a) == ~bits(a) & full


@given(addr_sets, addr_sets)
@settings(max_examples=200, deadline=None)
def test_address_identities(a, b):
    assert ~~a == a
    assert ~(a | b) == (~a & ~b)
    assert ~(a & b) == (~a | ~b)
    assert a - b == a & ~b
    assert (a - a).is_empty()


@given(intervals)
@settings(max_examples=200, deadline=None)
def test_canonical_form_is_unique(ivs):
    a = AddressSet(ivs, top=TOP)
    b = from_bits(bits(a))
    assert a == b
    assert a.intervals == b.intervals
    # sorted, disjoint, non-adjacent
    for x, y in zip(a.intervals, a.intervals[1:]):
        assert x.hi + 1 < y.lo


def test_named_ops_agree_with_operators():
    a = AddressSet([(0, 10), (20, 30)], top=TOP)
    b = AddressSet([(5, 25)], top=TOP)
    assert set_union(a, b) == a | b
    assert set_intersect(a, b) == a & b
    assert set_difference(a, b) == a - b
    assert set_complement(a) == ~a


def test_membership():
    a = AddressSet([(10, 20), (40, 40)], top=TOP)
    assert 10 in a and 20 in a and 40 in a
    assert 9 not in a and 21 not in a and 41 not in a


# ---------------------------------------------------------------- CIDR helpers

@pytest.mark.parametrize("text,mask,lo,hi", [
    ("111.222.2.32", 27, "111.222.2.32", "111.222.2.63"),
    ("0.0.0.0", 0, "0.0.0.0", "255.255.255.255"),
    ("111.222.0.0", 16, "111.222.0.0", "111.222.255.255"),
])
def test_cidr_to_interval(text, mask, lo, hi):
    assert cidr_to_interval(text, mask) == (ip(lo), ip(hi))


def test_cidr_host_bits_rejected():
    with pytest.raises(AddressError):
        cidr_to_interval("111.222.2.33", 27)
    assert cidr_to_interval("111.222.2.33", 27, strict=False) == (ip("111.222.2.32"), ip("111.222.2.63"))


def test_bad_dotted_quad():
    for bad in ("1.2.3", "1.2.3.256", "a.b.c.d"):
        with pytest.raises(AddressError):
            ip_to_int(bad)


def test_complement_of_corp():
    corp = AddressSet([cidr_to_interval("111.222.0.0", 16)])
    assert (~corp).intervals == [
        (0, ip("111.221.255.255")),
        (ip("111.223.0.0"), ip("255.255.255.255")),
    ]


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
@settings(max_examples=300, deadline=None)
def test_cidr_cover_is_exact_and_minimal(x, y):
    lo, hi = min(x, y), max(x, y)
    blocks = interval_to_cidrs(lo, hi)
    cursor = lo
    for net, plen in blocks:
        size = 1 << (32 - plen)
        assert net == cursor and net % size == 0
        cursor += size
    assert cursor == hi + 1
    # greedy maximal blocks are minimal: no two consecutive blocks merge into one
    for (n1, p1), (n2, p2) in zip(blocks, blocks[1:]):
        if p1 == p2:
            assert n1 % (1 << (33 - p1)) != 0


def test_format_and_parse_roundtrip():
    assert format_interval(ip("10.0.0.0"), ip("10.0.0.255")) == "10.0.0.0/24"
    assert format_interval(ip("10.0.0.1"), ip("10.0.0.5")) == "10.0.0.1-10.0.0.5"
    for text in ("10.0.0.0/24", "10.0.0.1-10.0.0.5", "10.0.0.7"):
        lo, hi = parse_addr_spec(text)
        assert parse_addr_spec(format_interval(lo, hi)) == (lo, hi)
    assert int_to_ip(ip("111.222.4.10")) == "111.222.4.10"


# ---------------------------------------------------------------- services

def test_service_merge_and_any():
    s = ServiceSet([("tcp", 10, 20), ("tcp", 15, 30)])
    assert s.leaves() == [("tcp", 10, 30)]
    anyset = ServiceSet([("any", 0, 65535)])
    assert {p for p, _, _ in anyset.leaves()} == set(PROTOS)
    assert ("esp", 0) in anyset and ("udp", 65535) in anyset
    assert ("udp", 15) not in s


# ---------------------------------------------------------------- triplets

def triplet_points():
    for s in range(0, TOP + 1, 17):
        for d in range(0, TOP + 1, 23):
            for proto in PROTOS:
                for port in range(PTOP + 1):
                    yield (s, d, proto, port)


def small_triplets(draw):
    boxes = []
    for _ in range(draw(st.integers(0, 4))):
        s = sorted(draw(st.tuples(st.integers(0, TOP), st.integers(0, TOP))))
        d = sorted(draw(st.tuples(st.integers(0, TOP), st.integers(0, TOP))))
        p = sorted(draw(st.tuples(st.integers(0, PTOP), st.integers(0, PTOP))))
        proto = draw(st.sampled_from(PROTOS + ("any",)))
        boxes.append((tuple(s), tuple(d), proto, tuple(p)))
    return TripletSet(boxes, addr_top=TOP, port_top=PTOP)


triplets = st.composite(small_triplets)()


@given(triplets, triplets)
@settings(max_examples=60, deadline=None)
def test_triplet_ops_match_membership(w, f):
    inter = triplet_intersect(w, f)
    diff = triplet_difference(w, f)
    comp = triplet_complement(f)
    for pt in triplet_points():
        a, b = pt in w, pt in f
        assert (pt in inter) == (a and b)
        assert (pt in diff) == (a and not b)
        assert (pt in comp) == (not b)
    assert triplet_complement(comp) == f
    assert diff == triplet_intersect(w, comp)


def test_triplet_boxes_are_disjoint_and_sorted():
    rng = random.Random(7)
    for _ in range(50):
        boxes = []
        for _ in range(5):
            s = sorted((rng.randint(0, TOP), rng.randint(0, TOP)))
            d = sorted((rng.randint(0, TOP), rng.randint(0, TOP)))
            p = sorted((rng.randint(0, PTOP), rng.randint(0, PTOP)))
            boxes.append((s, d, rng.choice(PROTOS), p))
        t = TripletSet(boxes, addr_top=TOP, port_top=PTOP)
        out = t.boxes
        keys = [(b.proto, b.src.lo, b.dst.lo, b.port[0]) for b in out]
        assert keys == sorted(keys, key=lambda k: (PROTOS.index(k[0]),) + k[1:])
        for i, x in enumerate(out):
            for y in out[i + 1:]:
                overlap = (x.proto == y.proto and x.src.lo <= y.src.hi and y.src.lo <= x.src.hi
                           and x.dst.lo <= y.dst.hi and y.dst.lo <= x.dst.hi
                           and x.port[0] <= y.port[1] and y.port[0] <= x.port[1])
                assert not overlap
        assert TripletSet([(b.src, b.dst, b.proto, b.port) for b in out], addr_top=TOP, port_top=PTOP) == t


def test_wr_wa_example():
    src = AddressSet([cidr_to_interval("111.222.2.0", 24)])
    dst = AddressSet([(ip("111.222.4.10"), ip("111.222.4.10"))])
    tcp = ServiceSet([("tcp", 0, 65535)])
    w = TripletSet.product(src, dst, tcp)
    deny = TripletSet.product(AddressSet([cidr_to_interval("111.222.2.32", 27)]), dst, tcp)
    f = triplet_complement(deny)
    wr = triplet_intersect(w, triplet_complement(f))
    wa = triplet_difference(w, wr)
    assert [(b.src, b.dst, b.proto, b.port) for b in wr.boxes] == [
        ((ip("111.222.2.32"), ip("111.222.2.63")), (ip("111.222.4.10"),) * 2, "tcp", (0, 65535))
    ]
    assert [b.src for b in wa.boxes] == [
        (ip("111.222.2.0"), ip("111.222.2.31")), (ip("111.222.2.64"), ip("111.222.2.255"))
    ]
    assert triplet_intersect(w, TripletSet()).is_empty()
