"""Technique frequency and overlap across a filtered set of groups."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .graph_store import KnowledgeGraph, UnknownId
from .stix_core import AttackPattern, IntrusionSet, KbError, attack_id_of


class CountExceedsGroups(KbError):
    pass


@dataclass(frozen=True)
class TechniqueUsage:
    attack_id: str
    technique_name: str
    groups: tuple[str, ...]  # group attack_ids, sorted
    count: int


@dataclass(frozen=True)
class OverlapSummary:
    n_groups: int
    tiers: dict[int, tuple[str, ...]]  # usage count -> attack_ids
    total_techniques: int


def techniques_of_groups(
    graph: KnowledgeGraph, group_ids: Iterable[str], rollup: bool = False
) -> list[TechniqueUsage]:
    """Distinct techniques used by the given groups, with per-technique counts.

    With rollup on, a group using a sub-technique also counts toward the
    parent T#### (once per parent). Output is sorted by (count desc,
    attack_id asc), independent of the input order.
    """
    ids = sorted(set(group_ids))
    names: dict[str, str] = {}
    for tid in graph.by_type.get("attack-pattern", ()):
        obj = graph.objects[tid]
        assert isinstance(obj, AttackPattern)
        names[obj.attack_id] = obj.common.name or ""

    used_by: dict[str, set[str]] = {}
    for gid in ids:
        obj = graph.objects.get(gid)
        if not isinstance(obj, IntrusionSet):
            raise UnknownId(gid)
        label = attack_id_of(obj) or obj.common.name or gid
        for tgt in graph.out_edges.get((gid, "uses"), ()):
            technique = graph.objects[tgt]
            if not isinstance(technique, AttackPattern):
                continue
            used_by.setdefault(technique.attack_id, set()).add(label)
            if rollup and technique.is_subtechnique:
                parent = technique.attack_id.split(".")[0]
                used_by.setdefault(parent, set()).add(label)

    usages = [
        TechniqueUsage(
            attack_id=tid,
            technique_name=names.get(tid, ""),
            groups=tuple(sorted(groups)),
            count=len(groups),
        )
        for tid, groups in used_by.items()
    ]
    usages.sort(key=lambda u: (-u.count, u.attack_id))
    return usages


def overlap_summary(usages: Sequence[TechniqueUsage], n_groups: int) -> OverlapSummary:
    """Partition techniques into tiers by how many groups use each."""
    tiers: dict[int, list[str]] = {}
    for usage in usages:
        if usage.count > n_groups:
            raise CountExceedsGroups(
                f"{usage.attack_id} used by {usage.count} > {n_groups} groups"
            )
        tiers.setdefault(usage.count, []).append(usage.attack_id)
    return OverlapSummary(
        n_groups=n_groups,
        tiers={k: tuple(sorted(v)) for k, v in sorted(tiers.items())},
        total_techniques=len(usages),
    )


def prioritize(usages: Sequence[TechniqueUsage]) -> list[str]:
    """Technique ids ordered for assessment: most-shared first, id breaks ties."""
    return [u.attack_id for u in sorted(usages, key=lambda u: (-u.count, u.attack_id))]
