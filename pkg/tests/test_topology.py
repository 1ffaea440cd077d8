import random

import pytest

from builders import chain, device, host, interval, policy, subnet
from polref.errors import StructuralError
from polref.netspace import ip_to_int
from polref.topology import attach_interface, extract_topology, footprint


def test_corp_neighbors(corp):
    topo = extract_topology(corp)
    assert set(topo.devices["FW_Intern"].neighbors) == {"Intra", "DMZ", "Admin"}
    assert topo.devices["FW_Intern"].has("fw") and topo.devices["FW_Intern"].has("vpn")
    assert set(topo.zones["Internet"].neighbors) == {"FW_BD_1", "FW_BD_2", "FW_site_Ext", "IDS_B"}


def test_corp_zone_extents_disjoint(corp):
    topo = extract_topology(corp)
    zones = list(topo.zones.values())
    for i, a in enumerate(zones):
        for b in zones[i + 1:]:
            assert (footprint(a, topo) & footprint(b, topo)).is_empty()
    ifaces = topo.interface_addresses()
    for z in zones:
        assert (z.extent & ifaces).is_empty()


def test_single_zone_single_device():
    topo = extract_topology(policy([subnet("Z", "10.0.0.0/24")], devices=[device("D", "fw", "10.0.0.1/24")]))
    assert topo.graph.edges == [("Z", "D")]
    assert topo.graph.dump() == "Z <-> D\n"


def test_shared_zone_has_no_device_edge():
    topo = extract_topology(policy(
        [subnet("Z", "10.0.0.0/24")],
        devices=[device("A", "fw", "10.0.0.1/24"), device("B", "ids", "10.0.0.2/24")],
    ))
    for z, d in topo.graph.edges:
        assert topo.graph.is_zone(z) and not topo.graph.is_zone(d)
    assert set(topo.zones["Z"].neighbors) == {"A", "B"}


def test_longest_prefix_attach():
    p = policy(
        [subnet("Corp", "111.222.0.0/16"), subnet("DMZ", "111.222.1.0/24")],
        devices=[device("FW", "fw", "111.222.1.1/24", "111.222.9.1/16")],
    )
    topo = extract_topology(p)
    assert topo.devices["FW"].iface_zone == {"if0": "DMZ", "if1": "Corp"}
    zones = list(topo.zones.values())
    # enumeration oracle: narrowest containing zone
    for addr in ("111.222.1.1", "111.222.9.1", "111.222.1.200"):
        a = ip_to_int(addr)
        best = min((z for z in zones if a in z.attach_extent), key=lambda z: (z.size, z.name))
        assert attach_interface(a, 24, zones) == best.name
    # nested zones are carved: Corp no longer owns DMZ addresses
    assert ip_to_int("111.222.1.50") not in topo.zones["Corp"].extent
    assert topo.zone_of(ip_to_int("111.222.1.50")) == "DMZ"
    assert topo.zone_of(ip_to_int("111.222.9.1")) == "Corp"


def test_equal_size_tie_breaks_by_name():
    p = policy(
        [interval("Beta", "10.0.0.0", "10.0.0.255"), subnet("Alpha", "10.0.0.0/24")],
        devices=[device("FW", "fw", "10.0.0.1/24")],
    )
    topo = extract_topology(p)
    assert topo.devices["FW"].iface_zone["if0"] == "Alpha"


def test_orphan_interface():
    with pytest.raises(StructuralError, match="orphan interface D/if1"):
        extract_topology(policy([subnet("Z", "10.0.0.0/24")], devices=[device("D", "fw", "10.0.0.1/24", "10.9.9.9/24")]))


def test_stub_zone_warning_and_non_zone_entities():
    p = policy(
        [subnet("Z", "10.0.0.0/24"), subnet("Stub", "10.5.0.0/24"), host("h", "10.0.0.7"),
         subnet("Grp", "10.0.0.0/25", zone=False)],
        devices=[device("D", "fw", "10.0.0.1/24")],
    )
    topo = extract_topology(p)
    assert set(topo.zones) == {"Z", "Stub"}
    assert any("stub" in d.message for d in topo.diagnostics)


def test_host_exclusion_keeps_interface_attachable():
    p = policy(
        [subnet("DMZ", "10.0.1.0/24", ["fw_if"]), host("fw_if", "10.0.1.1")],
        devices=[device("FW", "fw", "10.0.1.1/24")],
    )
    topo = extract_topology(p)
    assert topo.devices["FW"].iface_zone["if0"] == "DMZ"
    assert ip_to_int("10.0.1.1") in footprint(topo.zones["DMZ"], topo)
    assert ip_to_int("10.0.1.1") not in topo.zones["DMZ"].extent


def test_declaration_order_does_not_matter(corp):
    rng = random.Random(3)
    base = extract_topology(corp)
    for _ in range(5):
        ents = list(corp.entities)
        devs = list(corp.devices)
        rng.shuffle(ents)
        rng.shuffle(devs)
        shuffled = type(corp)(corp.org_name, tuple(ents), corp.roles, corp.services, tuple(devs))
        topo = extract_topology(shuffled)
        assert topo.graph.dump() == base.graph.dump()
        assert {n: z.extent for n, z in topo.zones.items()} == {n: z.extent for n, z in base.zones.items()}


def test_chain_builder_shape():
    ents, devs = chain(3)
    topo = extract_topology(policy(ents, devices=devs))
    assert topo.graph.edges == sorted([("Z0", "D1"), ("Z1", "D1"), ("Z1", "D2"), ("Z2", "D2"), ("Z2", "D3"), ("Z3", "D3")])
