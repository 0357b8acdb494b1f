"""Immutable indexed knowledge graph over an (enhanced) groups bundle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .stix_core import (
    AttackPattern,
    Bundle,
    IdentityObject,
    IntrusionSet,
    KbError,
    LocationObject,
    RelationshipObject,
    SoftwareObject,
    StixObject,
    attack_id_of,
    is_revoked,
)


class UnknownId(KbError):
    pass


class NotAGroup(KbError):
    pass


class AmbiguousKey(KbError):
    pass


@dataclass(frozen=True)
class DanglingEdge:
    relationship_id: str
    missing_ref: str


_NODE_KINDS = (
    IntrusionSet,
    AttackPattern,
    SoftwareObject,
    IdentityObject,
    LocationObject,
)


@dataclass(frozen=True)
class KnowledgeGraph:
    """A read-only view of the bundle as nodes plus typed edges.

    Revoked and deprecated objects are absent; relationships whose endpoints
    are missing (or revoked) are dropped and reported in `warnings`.
    """

    objects: Mapping[str, StixObject]
    by_type: Mapping[str, tuple[str, ...]]
    out_edges: Mapping[tuple[str, str], tuple[str, ...]]
    in_edges: Mapping[tuple[str, str], tuple[str, ...]]
    relationships: Mapping[tuple[str, str, str], RelationshipObject]
    name_index: Mapping[str, str]
    _by_gid: Mapping[str, tuple[str, ...]] = field(repr=False, default_factory=dict)
    _by_name: Mapping[str, tuple[str, ...]] = field(repr=False, default_factory=dict)
    _by_alias: Mapping[str, tuple[str, ...]] = field(repr=False, default_factory=dict)
    warnings: tuple[DanglingEdge, ...] = field(default=(), compare=False)

    def group_ids(self) -> tuple[str, ...]:
        return self.by_type.get("intrusion-set", ())


@dataclass(frozen=True)
class GroupView:
    """Everything known about one group, denormalized from its edges."""

    id: str
    name: str
    attack_id: str | None
    aliases: tuple[str, ...]
    origin: tuple[str, int | None] | None  # (country, confidence)
    target_countries: tuple[str, ...]
    target_regions: tuple[str, ...]
    target_sectors: tuple[str, ...]
    primary_motivation: str | None
    secondary_motivations: tuple[str, ...]
    techniques: tuple[str, ...]
    software: tuple[str, ...]


def build_graph(bundle: Bundle) -> KnowledgeGraph:
    """Index all non-revoked typed objects and their modeled relationships."""
    nodes: dict[str, StixObject] = {}
    for obj in bundle.objects:
        if not isinstance(obj, _NODE_KINDS) or is_revoked(obj):
            continue
        oid = obj.common.id.text
        if oid in nodes:
            raise ValueError(f"duplicate object id {oid}; validate the bundle first")
        nodes[oid] = obj

    by_type: dict[str, list[str]] = {}
    for oid, obj in nodes.items():
        by_type.setdefault(obj.common.id.object_type, []).append(oid)

    out_edges: dict[tuple[str, str], set[str]] = {}
    in_edges: dict[tuple[str, str], set[str]] = {}
    relationships: dict[tuple[str, str, str], RelationshipObject] = {}
    warnings: list[DanglingEdge] = []
    for obj in bundle.objects:
        if not isinstance(obj, RelationshipObject) or is_revoked(obj):
            continue
        src, tgt = obj.source_ref.text, obj.target_ref.text
        missing = [ref for ref in (src, tgt) if ref not in nodes]
        if missing:
            for ref in missing:
                warnings.append(DanglingEdge(obj.common.id.text, ref))
            continue
        rel = obj.relationship_type
        out_edges.setdefault((src, rel), set()).add(tgt)
        in_edges.setdefault((tgt, rel), set()).add(src)
        relationships.setdefault((src, rel, tgt), obj)

    by_gid: dict[str, list[str]] = {}
    by_name: dict[str, list[str]] = {}
    by_alias: dict[str, list[str]] = {}
    for oid in by_type.get("intrusion-set", []):
        group = nodes[oid]
        assert isinstance(group, IntrusionSet)
        gid = attack_id_of(group)
        if gid:
            by_gid.setdefault(gid.casefold(), []).append(oid)
        if group.common.name:
            by_name.setdefault(group.common.name.casefold(), []).append(oid)
        for alias in group.aliases:
            entry = by_alias.setdefault(alias.casefold(), [])
            if oid not in entry:
                entry.append(oid)

    name_index: dict[str, str] = {}
    for tier in (by_alias, by_name, by_gid):  # later tiers take precedence
        for key, hits in tier.items():
            if len(hits) == 1:
                name_index[key] = hits[0]

    return KnowledgeGraph(
        objects=nodes,
        by_type={t: tuple(sorted(ids)) for t, ids in by_type.items()},
        out_edges={k: tuple(sorted(v)) for k, v in out_edges.items()},
        in_edges={k: tuple(sorted(v)) for k, v in in_edges.items()},
        relationships=relationships,
        name_index=name_index,
        _by_gid={k: tuple(v) for k, v in by_gid.items()},
        _by_name={k: tuple(v) for k, v in by_name.items()},
        _by_alias={k: tuple(v) for k, v in by_alias.items()},
        warnings=tuple(warnings),
    )


def neighbors(
    graph: KnowledgeGraph, object_id: str, relationship_type: str, direction: str
) -> list[str]:
    """Ids connected to `object_id` by `relationship_type`, sorted."""
    if object_id not in graph.objects:
        raise UnknownId(object_id)
    if direction == "out":
        return list(graph.out_edges.get((object_id, relationship_type), ()))
    if direction == "in":
        return list(graph.in_edges.get((object_id, relationship_type), ()))
    raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")


def resolve_group(graph: KnowledgeGraph, key: str) -> str | None:
    """Resolve a G#### id, exact name, or alias (case-insensitive) to a group.

    Raises AmbiguousKey when the matching tier maps the key to several groups.
    """
    k = key.strip().casefold()
    for tier in (graph._by_gid, graph._by_name, graph._by_alias):
        hits = tier.get(k)
        if hits:
            if len(set(hits)) > 1:
                raise AmbiguousKey(key)
            return hits[0]
    return None


def group_view(graph: KnowledgeGraph, object_id: str) -> GroupView:
    if object_id not in graph.objects:
        raise UnknownId(object_id)
    group = graph.objects[object_id]
    if not isinstance(group, IntrusionSet):
        raise NotAGroup(object_id)

    techniques: set[str] = set()
    software: set[str] = set()
    for tgt in graph.out_edges.get((object_id, "uses"), ()):
        obj = graph.objects[tgt]
        if isinstance(obj, AttackPattern):
            techniques.add(obj.attack_id)
        elif isinstance(obj, SoftwareObject):
            software.add(obj.attack_id)

    countries: set[str] = set()
    regions: set[str] = set()
    sectors: set[str] = set()
    for tgt in graph.out_edges.get((object_id, "targets"), ()):
        obj = graph.objects[tgt]
        if isinstance(obj, LocationObject):
            if obj.country is not None:
                countries.add(obj.country)
            if obj.region is not None:
                regions.add(obj.region)
        elif isinstance(obj, IdentityObject):
            if obj.sectors:
                sectors.update(obj.sectors)
            elif obj.common.name:
                sectors.add(obj.common.name)

    origin: tuple[str, int | None] | None = None
    candidates = []
    for tgt in graph.out_edges.get((object_id, "originates-from"), ()):
        obj = graph.objects[tgt]
        if isinstance(obj, LocationObject) and obj.country is not None:
            rel = graph.relationships.get((object_id, "originates-from", tgt))
            confidence = rel.confidence if rel is not None else None
            candidates.append((obj.country, confidence))
    if candidates:
        # One origin per group in practice; break ties toward the stronger claim.
        origin = max(candidates, key=lambda c: (c[1] if c[1] is not None else -1,))

    return GroupView(
        id=object_id,
        name=group.common.name or "",
        attack_id=attack_id_of(group),
        aliases=group.aliases,
        origin=origin,
        target_countries=tuple(sorted(countries)),
        target_regions=tuple(sorted(regions)),
        target_sectors=tuple(sorted(sectors)),
        primary_motivation=group.primary_motivation,
        secondary_motivations=group.secondary_motivations,
        techniques=tuple(sorted(techniques)),
        software=tuple(sorted(software)),
    )
