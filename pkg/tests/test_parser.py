import pytest

from conftest import CORPUS, load
from polref.errors import PolicyParseError
from polref.model import EntityDef, ProtectedContext, RoleDef, VulnerabilityContext
from polref.parser import parse_policy, parse_policy_with_diagnostics, serialize_policy, validate_policy

NET_SNIPPET = b"""<organization><orgName>Corp</orgName><structure>
  <entity>
    <entityName>Net</entityName>
    <subNet>
      <addr>0.0.0.0</addr>
      <mask>0</mask>
    </subNet>
    <exclusionEntity>
      <entityName>Corp</entityName>
    </exclusionEntity>
  </entity>
  <entity><entityName>Corp</entityName><subNet><addr>111.222.0.0</addr><mask>16</mask></subNet></entity>
  <role>
    <roleName>R_DNS_srv</roleName>
    <seniorRole>
      <roleName>R_Srv</roleName>
    </seniorRole>
    <entityName>DNS_server</entityName>
  </role>
  <role><roleName>R_Srv</roleName></role>
  <entity><entityName>DNS_server</entityName><host><addr>111.222.1.53</addr></host></entity>
</structure></organization>"""


def wrap(structure="", permissions=""):
    return (f"<organization><orgName>T</orgName><structure>{structure}</structure>"
            f"{permissions}</organization>").encode()


ZONE = "<entity><entityName>Z</entityName><subNet><addr>10.0.0.0</addr><mask>24</mask></subNet></entity>"
ROLE = "<role><roleName>R_Z</roleName><entityName>Z</entityName></role>"
SVC = "<service><serviceName>web</serviceName><protocol>tcp</protocol><port><lo>80</lo><hi>80</hi></port></service>"


def errors(doc):
    _, diags = parse_policy_with_diagnostics(doc)
    return [d for d in diags if d.is_error]


def test_net_and_role_snippets():
    p = parse_policy(NET_SNIPPET)
    assert p.entity("Net") == EntityDef("Net", "subnet", addr="0.0.0.0", mask=0, exclusions=("Corp",))
    assert p.role_map["R_DNS_srv"] == RoleDef("R_DNS_srv", ("R_Srv",), ("DNS_server",))


def test_empty_structure():
    p, diags = parse_policy_with_diagnostics(wrap())
    assert p is not None and diags == []
    assert p.entities == p.roles == p.services == p.devices == p.permissions == ()


def test_malformed_xml_has_position():
    with pytest.raises(PolicyParseError) as info:
        parse_policy(b"<organization><orgName>x</orgName>\n<structure></organization>")
    assert info.value.line == 2


def test_contexts_and_defaults():
    perms = (
        "<permission><roleName>R_Z</roleName><serviceName>web</serviceName><target><roleName>R_Z</roleName></target></permission>"
        "<permission><id>t</id><roleName>R_Z</roleName><serviceName>web</serviceName><target><roleName>R_Z</roleName></target>"
        "<context kind='protected'><algorithm>AES</algorithm><timeStart>08:00</timeStart><timeEnd>18:00</timeEnd></context></permission>"
        "<permission><id>v</id><roleName>R_Z</roleName><serviceName>web</serviceName><target><roleName>R_Z</roleName></target>"
        "<context kind='vulnerability' cve='CVE-1'><content>abc</content><message>boom</message></context>"
        "<securityRole><roleName>R_Z</roleName></securityRole></permission>"
    )
    p = parse_policy(wrap(ZONE + ROLE + SVC, perms))
    first, tun, vul = p.permissions
    assert first.id == "P1" and first.decision == "permission" and first.context.kind == "default"
    assert tun.context == ProtectedContext("AES", None, ("08:00", "18:00"))
    assert vul.context == VulnerabilityContext("boom", "CVE-1", "abc")
    assert vul.security_roles == ("R_Z",)


@pytest.mark.parametrize("perm,needle", [
    ("<permission><serviceName>web</serviceName><target><roleName>R_Z</roleName></target></permission>", "roleName"),
    ("<permission><roleName>R_Z</roleName><serviceName>web</serviceName></permission>", "target"),
    ("<permission><roleName>R_Z</roleName><serviceName>web</serviceName><target><roleName>R_Z</roleName></target>"
     "<context kind='weird'/></permission>", "context kind"),
    ("<permission><roleName>R_X</roleName><serviceName>web</serviceName><target><roleName>R_Z</roleName></target></permission>", "R_X"),
    ("<permission><roleName>R_Z</roleName><serviceName>nope</serviceName><target><roleName>R_Z</roleName></target></permission>", "nope"),
    ("<permission><roleName>R_Z</roleName><serviceName>web</serviceName><target><roleName>R_Z</roleName></target>"
     "<context kind='vulnerability'><message></message></context></permission>", "message"),
])
def test_permission_errors(perm, needle):
    errs = errors(wrap(ZONE + ROLE + SVC, perm))
    assert errs and any(needle in str(e) for e in errs)


def test_unknown_element_is_warning():
    p, diags = parse_policy_with_diagnostics(wrap(ZONE + "<gadget/>"))
    assert p is not None
    assert [d.severity for d in diags] == ["warning"] and "gadget" in diags[0].message


def test_role_cycle_named(capsys):
    errs = errors((CORPUS / "cyclic-roles.xml").read_bytes())
    assert len(errs) == 1
    assert "R_a -> R_c -> R_b -> R_a" in errs[0].message


def test_structural_errors():
    bad_dev = ("<device><deviceName>D</deviceName><functionality>router</functionality>"
               "<interface><ifName>a</ifName><addr>10.0.0.1</addr><mask>24</mask></interface></device>")
    assert any("router" in str(e) for e in errors(wrap(ZONE + bad_dev)))
    no_iface = "<device><deviceName>D</deviceName><functionality>fw</functionality></device>"
    assert any("no interface" in str(e) for e in errors(wrap(ZONE + no_iface)))
    host_bits = "<entity><entityName>B</entityName><subNet><addr>10.0.0.1</addr><mask>24</mask></subNet></entity>"
    assert errors(wrap(host_bits))
    excl_cycle = ("<entity><entityName>A</entityName><subNet><addr>10.0.0.0</addr><mask>24</mask></subNet>"
                  "<exclusionEntity><entityName>B</entityName></exclusionEntity></entity>"
                  "<entity><entityName>B</entityName><subNet><addr>10.0.0.0</addr><mask>25</mask></subNet>"
                  "<exclusionEntity><entityName>A</entityName></exclusionEntity></entity>")
    assert any("exclusion cycle" in str(e) for e in errors(wrap(excl_cycle)))
    empty_role = "<role><roleName>R_E</roleName></role>"
    perm = "<permission><roleName>R_E</roleName><serviceName>web</serviceName><target><roleName>R_Z</roleName></target></permission>"
    assert any("no members" in str(e) for e in errors(wrap(ZONE + ROLE + SVC + empty_role, perm)))


def test_vpn_only_device_is_not_a_parse_error():
    from polref.refinement import compile_policy
    doc = wrap(
        ZONE + "<entity><entityName>Y</entityName><subNet><addr>10.0.1.0</addr><mask>24</mask></subNet></entity>"
        + ROLE + "<role><roleName>R_Y</roleName><entityName>Y</entityName></role>" + SVC
        + "<device><deviceName>V</deviceName><functionality>vpn</functionality>"
          "<interface><ifName>a</ifName><addr>10.0.0.1</addr><mask>24</mask></interface>"
          "<interface><ifName>b</ifName><addr>10.0.1.1</addr><mask>24</mask></interface></device>",
        "<permission><roleName>R_Z</roleName><serviceName>web</serviceName><target><roleName>R_Y</roleName></target></permission>",
    )
    p, diags = parse_policy_with_diagnostics(doc)
    assert p is not None and not errors(doc)
    dep = compile_policy(p)
    assert any("missing functionality" in d.message for d in dep.errors)


def test_corp_is_clean(corp):
    assert [d for d in validate_policy(corp)] == []


@pytest.mark.parametrize("name", ["corp", "sim4", "sim5", "sim6", "diamond"])
def test_round_trip(name):
    p = load(name)
    assert parse_policy(serialize_policy(p)) == p
    assert parse_policy((CORPUS / f"{name}.xml").read_bytes()) == p


def test_exclusion_shape_warnings():
    from builders import policy, subnet

    pol = policy([
        subnet("Top", "10.0.0.0/24", ["A", "B", "Out"]),
        subnet("A", "10.0.0.0/25"),
        subnet("B", "10.0.0.64/26"),
        subnet("Out", "10.9.0.0/24"),
    ])
    msgs = [d.message for d in validate_policy(pol)]
    assert "excluded entities 'A' and 'B' overlap" in msgs
    assert "excluded entity 'Out' is not inside 'Top'" in msgs
    assert all(not d.is_error for d in validate_policy(pol))
