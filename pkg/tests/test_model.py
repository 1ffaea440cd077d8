import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import host, policy, role, subnet
from polref.errors import ResolutionError, StructuralError
from polref.model import ServiceDef, resolve_entity, resolve_member, resolve_role, role_closure, service_closure
from polref.netspace import AddressSet, ip_to_int


def test_role_closure_flows_to_juniors():
    p = policy(
        [host("DNS_server", "10.0.0.53"), host("Web", "10.0.0.80")],
        [role("R_Srv", "Web"), role("R_DNS_srv", "DNS_server", seniors=["R_Srv"])],
        auto_roles=False,
    )
    assert role_closure("R_Srv", p) == {"DNS_server", "Web"}
    assert role_closure("R_DNS_srv", p) == {"DNS_server"}


def test_role_closure_three_levels():
    p = policy(
        [host("a", "10.0.0.1"), host("b", "10.0.0.2"), host("c", "10.0.0.3")],
        [role("R_A", "a"), role("R_B", "b", seniors=["R_A"]), role("R_C", "c", seniors=["R_B"])],
        auto_roles=False,
    )
    assert role_closure("R_A", p) == {"a", "b", "c"}
    assert role_closure("R_C", p) == {"c"}
    # monotone along the hierarchy
    assert role_closure("R_A", p) >= role_closure("R_B", p) >= role_closure("R_C", p)


def test_unknown_role():
    with pytest.raises(ResolutionError, match="R_missing"):
        role_closure("R_missing", policy())


def test_service_closure():
    p = policy(services=[
        ServiceDef("https", (("tcp", 443, 443),)),
        ServiceDef("WEB", children=("http", "https")),
        ServiceDef("a", (("tcp", 10, 20),)),
        ServiceDef("b", (("tcp", 15, 30),)),
        ServiceDef("ab", children=("a", "b")),
    ])
    assert service_closure("WEB", p).leaves() == [("tcp", 80, 80), ("tcp", 443, 443)]
    assert service_closure("ALL_TCP", p).leaves() == [("tcp", 0, 65535)]
    assert service_closure("ab", p).leaves() == [("tcp", 10, 30)]
    assert service_closure("ISAKMP", p).leaves() == [("udp", 500, 500)]
    with pytest.raises(ResolutionError):
        service_closure("nope", p)


def test_service_cycle():
    p = policy(services=[ServiceDef("x", children=("y",)), ServiceDef("y", children=("x",))])
    with pytest.raises(StructuralError, match="cycle"):
        service_closure("x", p)


def test_resolve_net_excluding_corp():
    p = policy([subnet("Corp", "111.222.0.0/16", zone=False), subnet("Net", "0.0.0.0/0", ["Corp"])])
    assert resolve_entity("Net", p).intervals == [
        (0, ip_to_int("111.221.255.255")),
        (ip_to_int("111.223.0.0"), ip_to_int("255.255.255.255")),
    ]
    assert resolve_entity("Corp", p) == p.entity("Corp").base()


def test_resolve_two_levels_brute_force():
    p = policy([
        subnet("E1", "10.0.0.0/24", ["E2"]),
        subnet("E2", "10.0.0.32/27", ["E3"]),
        host("E3", "10.0.0.40"),
    ])
    got = resolve_entity("E1", p)
    base = ip_to_int("10.0.0.0")
    for a in range(base, base + 256):
        in_e2 = base + 32 <= a <= base + 63
        expected = not in_e2 or a == base + 40
        assert (a in got) == expected


def test_exclusion_cycle():
    p = policy([subnet("A", "10.0.0.0/24", ["B"]), subnet("B", "10.0.0.0/25", ["A"])])
    with pytest.raises(StructuralError, match="cycle"):
        resolve_entity("A", p)


def test_device_members_resolve_to_interfaces():
    from builders import device
    p = policy([subnet("Z", "10.0.0.0/24")], [role("R_FW", "FW")], devices=[device("FW", "fw", "10.0.0.1/24")])
    assert resolve_member("FW", p) == AddressSet([(ip_to_int("10.0.0.1"),) * 2])
    assert resolve_role("R_FW", p) == resolve_member("FW", p)


# property: recursive boolean evaluation equals resolved membership on a toy /24

@st.composite
def exclusion_forests(draw):
    n = draw(st.integers(1, 7))
    ents = []
    for i in range(n):
        plen = draw(st.integers(24, 32))
        size = 1 << (32 - plen)
        net = draw(st.integers(0, 256 // size - 1)) * size
        ents.append((f"E{i}", f"10.0.0.{net}/{plen}"))
    excl = {name: [] for name, _ in ents}
    for i in range(1, n):  # a tree: each node excluded by an earlier one
        parent = draw(st.integers(0, i - 1))
        excl[f"E{parent}"].append(f"E{i}")
    return policy([subnet(name, cidr, excl[name]) for name, cidr in ents])


@given(exclusion_forests())
@settings(max_examples=100, deadline=None)
def test_resolution_matches_boolean_evaluation(p):
    base = ip_to_int("10.0.0.0")

    def member(name, a):
        e = p.entity(name)
        return a in e.base() and not any(member(x, a) for x in e.exclusions)

    for e in p.entities:
        got = resolve_entity(e.name, p)
        assert got.issubset(e.base())
        for a in range(base, base + 256):
            assert (a in got) == member(e.name, a)
