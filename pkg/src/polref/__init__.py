"""Refinement of OrBAC network security policies onto firewalls, IPSec gateways and IDSs."""

from .backends import (
    emit_files,
    emit_first_match_firewall,
    emit_ids_signatures,
    emit_pass_only_firewall,
    emit_tunnel_config,
)
from .errors import Diagnostic, PolicyError, PolicyParseError, ResolutionError, StructuralError
from .model import Policy, resolve_entity, resolve_role, role_closure, service_closure
from .netspace import AddressSet, ServiceSet, TripletSet
from .oracle import decide_abstract, decide_deployed, equivalence_check
from .parser import parse_policy, parse_policy_with_diagnostics, validate_policy
from .pathfinding import passing_by, select_extremal, shortest_paths
from .refinement import compile_policy, exclusion_rewrite, ids_firewall_redundancy, multi_target_files
from .topology import extract_topology

__all__ = [
    "AddressSet", "Diagnostic", "Policy", "PolicyError", "PolicyParseError", "ResolutionError",
    "ServiceSet", "StructuralError", "TripletSet", "compile_policy", "decide_abstract",
    "decide_deployed", "emit_files", "emit_first_match_firewall", "emit_ids_signatures",
    "emit_pass_only_firewall", "emit_tunnel_config", "equivalence_check", "exclusion_rewrite",
    "extract_topology", "ids_firewall_redundancy", "multi_target_files", "parse_policy",
    "parse_policy_with_diagnostics", "passing_by", "resolve_entity", "resolve_role",
    "role_closure", "select_extremal", "service_closure", "shortest_paths", "validate_policy",
]
