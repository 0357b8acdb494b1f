"""Graft structured context onto a groups bundle.

Per-group annotations (origin country, targeted countries/regions/sectors,
motivations) become location objects, sector identity objects, relationships,
and motivation properties on the intrusion sets. Free-text surface forms are
canonicalized through a gazetteer, and a draft annotation can be suggested
from a group's description by scanning it against the same gazetteer.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

from .stix_core import (
    Bundle,
    IdentityObject,
    IntrusionSet,
    KbError,
    LocationObject,
    RelationshipObject,
    StixId,
    StixObject,
    Timestamp,
    attack_id_of,
    deterministic_id,
    _parse_common,
)

# Confidence written on originates-from edges: midpoints of the conventional
# "probable" and "likely" confidence bands.
CONFIDENCE_SUSPECTED = 50
CONFIDENCE_CONFIRMED = 90

# Fixed timestamp for objects this module mints, so output is reproducible.
CREATED_TIMESTAMP = "2021-04-29T00:00:00.000Z"

DEFAULT_CUE_WORDS = ("attributed", "attribution", "state-sponsored", "based")
DEFAULT_CUE_WINDOW = 40


class MalformedEnrichmentFile(KbError):
    pass


class DuplicateGroupKey(KbError):
    pass


class NoDescription(KbError):
    pass


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.casefold()).strip("-")


@dataclass(frozen=True)
class Gazetteer:
    """Alias tables mapping surface forms to canonical tokens.

    Lookups are case-insensitive. Canonical values are guaranteed to resolve
    to themselves (self-mappings are added at load time).
    """

    country_aliases: Mapping[str, str]
    region_aliases: Mapping[str, str]
    sector_aliases: Mapping[str, str]
    motivation_keywords: Mapping[str, str]
    region_countries: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @staticmethod
    def _normalize(table: Mapping[str, str]) -> dict[str, str]:
        out = {str(k).casefold(): str(v) for k, v in table.items()}
        for v in list(out.values()):
            out.setdefault(v.casefold(), v)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Gazetteer":
        if not isinstance(data, Mapping):
            raise MalformedEnrichmentFile("gazetteer document is not an object")
        tables = {}
        for key in (
            "country_aliases",
            "region_aliases",
            "sector_aliases",
            "motivation_keywords",
        ):
            table = data.get(key, {})
            if not isinstance(table, Mapping):
                raise MalformedEnrichmentFile(f"gazetteer {key} is not an object")
            tables[key] = cls._normalize(table)
        regions = data.get("region_countries", {})
        if not isinstance(regions, Mapping):
            raise MalformedEnrichmentFile("gazetteer region_countries is not an object")
        tables["region_countries"] = {
            str(k).casefold(): tuple(sorted(str(c) for c in v))
            for k, v in regions.items()
        }
        return cls(**tables)

    @classmethod
    def from_text(cls, document: str) -> "Gazetteer":
        try:
            return cls.from_dict(json.loads(document))
        except json.JSONDecodeError as exc:
            raise MalformedEnrichmentFile(f"gazetteer is not valid JSON: {exc}")

    @classmethod
    def default(cls) -> "Gazetteer":
        text = resources.files("attackgkb").joinpath("data/gazetteer.json").read_text(
            encoding="utf-8"
        )
        return cls.from_text(text)

    def country(self, surface: str) -> str | None:
        return self.country_aliases.get(surface.strip().casefold())

    def region(self, surface: str) -> str | None:
        return self.region_aliases.get(surface.strip().casefold())

    def sector(self, surface: str) -> str | None:
        return self.sector_aliases.get(surface.strip().casefold())

    def motivation(self, surface: str) -> str | None:
        return self.motivation_keywords.get(surface.strip().casefold())

    def countries_in_region(self, region_token: str) -> tuple[str, ...]:
        return self.region_countries.get(region_token.casefold(), ())


@dataclass(frozen=True)
class EnrichmentRecord:
    """One group's structured annotations, fully canonicalized."""

    group_key: str
    origin_country: str | None = None
    origin_attribution: str | None = None  # "suspected" or "confirmed"
    target_countries: tuple[str, ...] = ()
    target_regions: tuple[str, ...] = ()
    target_sectors: tuple[str, ...] = ()
    primary_motivation: str | None = None
    secondary_motivations: tuple[str, ...] = ()


@dataclass(frozen=True)
class EnrichmentWarning:
    kind: str  # unknown-country, unknown-region, custom-sector, custom-motivation
    value: str
    group_key: str | None = None

    def __str__(self) -> str:
        where = f" (group {self.group_key})" if self.group_key else ""
        return f"{self.kind}: {self.value!r}{where}"


@dataclass(frozen=True)
class EnrichmentLoad:
    records: tuple[EnrichmentRecord, ...]
    warnings: tuple[EnrichmentWarning, ...]


@dataclass(frozen=True)
class EnrichmentReport:
    groups_matched: int
    groups_unmatched: tuple[str, ...]
    ambiguous_keys: tuple[str, ...]
    locations_created: int
    identities_created: int
    relationships_created: int
    motivations_set: int


def _string_field(entry: Mapping[str, Any], key: str) -> str | None:
    value = entry.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise MalformedEnrichmentFile(f"{key} is not a string: {value!r}")
    return value


def _string_list_field(entry: Mapping[str, Any], key: str) -> list[str]:
    value = entry.get(key)
    if value is None:
        return []
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        raise MalformedEnrichmentFile(f"{key} is not a list of strings")
    return value


def _dedupe(values: Iterable[str]) -> tuple[str, ...]:
    seen: set[str] = set()
    out = []
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return tuple(out)


def _canonical_record(
    entry: Mapping[str, Any], gazetteer: Gazetteer, warnings: list[EnrichmentWarning]
) -> EnrichmentRecord:
    group_key = _string_field(entry, "group_key")
    if not group_key:
        raise MalformedEnrichmentFile("record without group_key")

    origin_country = None
    origin_attribution = None
    surface = _string_field(entry, "origin_country")
    if surface:
        origin_country = gazetteer.country(surface)
        if origin_country is None:
            warnings.append(EnrichmentWarning("unknown-country", surface, group_key))
        else:
            origin_attribution = _string_field(entry, "origin_attribution")
            if origin_attribution is None:
                origin_attribution = "suspected"
            elif origin_attribution not in ("suspected", "confirmed"):
                raise MalformedEnrichmentFile(
                    f"origin_attribution must be suspected|confirmed, "
                    f"got {origin_attribution!r}"
                )

    countries = []
    for surface in _string_list_field(entry, "target_countries"):
        code = gazetteer.country(surface)
        if code is None:
            warnings.append(EnrichmentWarning("unknown-country", surface, group_key))
        else:
            countries.append(code)

    regions = []
    for surface in _string_list_field(entry, "target_regions"):
        token = gazetteer.region(surface)
        if token is None:
            warnings.append(EnrichmentWarning("unknown-region", surface, group_key))
        else:
            regions.append(token)

    sectors = []
    for surface in _string_list_field(entry, "target_sectors"):
        token = gazetteer.sector(surface)
        if token is None:
            # Sector vocabularies differ across countries; unknown sectors are
            # admitted as custom tokens rather than dropped.
            token = _slug(surface)
            warnings.append(EnrichmentWarning("custom-sector", surface, group_key))
        sectors.append(token)

    def _motivation(surface_form: str) -> str:
        token = gazetteer.motivation(surface_form)
        if token is None:
            token = _slug(surface_form)
            warnings.append(
                EnrichmentWarning("custom-motivation", surface_form, group_key)
            )
        return token

    primary = _string_field(entry, "primary_motivation")
    primary_token = _motivation(primary) if primary else None
    secondary = [
        _motivation(s) for s in _string_list_field(entry, "secondary_motivations")
    ]
    if primary_token is not None:
        secondary = [s for s in secondary if s != primary_token]

    return EnrichmentRecord(
        group_key=group_key,
        origin_country=origin_country,
        origin_attribution=origin_attribution,
        target_countries=_dedupe(countries),
        target_regions=_dedupe(regions),
        target_sectors=_dedupe(sectors),
        primary_motivation=primary_token,
        secondary_motivations=_dedupe(secondary),
    )


def load_enrichment(document: str, gazetteer: Gazetteer) -> EnrichmentLoad:
    """Load and canonicalize an enrichment file (a JSON array of records)."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MalformedEnrichmentFile(f"not valid JSON: {exc}")
    if not isinstance(data, list):
        raise MalformedEnrichmentFile("enrichment document is not a JSON array")
    warnings: list[EnrichmentWarning] = []
    records = []
    seen_keys: set[str] = set()
    for entry in data:
        if not isinstance(entry, dict):
            raise MalformedEnrichmentFile("record is not a JSON object")
        record = _canonical_record(entry, gazetteer, warnings)
        key = record.group_key.casefold()
        if key in seen_keys:
            raise DuplicateGroupKey(record.group_key)
        seen_keys.add(key)
        records.append(record)
    return EnrichmentLoad(tuple(records), tuple(warnings))


def _group_tiers(
    groups: Sequence[IntrusionSet],
) -> tuple[dict[str, list[str]], dict[str, list[str]], dict[str, list[str]]]:
    by_gid: dict[str, list[str]] = {}
    by_name: dict[str, list[str]] = {}
    by_alias: dict[str, list[str]] = {}
    for g in groups:
        gid_text = g.common.id.text
        attack_id = attack_id_of(g)
        if attack_id:
            by_gid.setdefault(attack_id.casefold(), []).append(gid_text)
        if g.common.name:
            by_name.setdefault(g.common.name.casefold(), []).append(gid_text)
        for alias in g.aliases:
            entry = by_alias.setdefault(alias.casefold(), [])
            if gid_text not in entry:
                entry.append(gid_text)
    return by_gid, by_name, by_alias


class _AmbiguousKey(Exception):
    pass


def _resolve_key(
    key: str,
    tiers: tuple[dict[str, list[str]], dict[str, list[str]], dict[str, list[str]]],
) -> str | None:
    k = key.strip().casefold()
    for tier in tiers:
        hits = tier.get(k)
        if hits:
            if len(set(hits)) > 1:
                raise _AmbiguousKey(key)
            return hits[0]
    return None


def _fixed_common(object_type: str, oid: str, name: str | None) -> dict[str, Any]:
    props: dict[str, Any] = {
        "type": object_type,
        "spec_version": "2.1",
        "id": oid,
        "created": CREATED_TIMESTAMP,
        "modified": CREATED_TIMESTAMP,
    }
    if name is not None:
        props["name"] = name
    return props


def _make_country_location(code: str) -> LocationObject:
    oid = deterministic_id("location", f"location:country:{code}")
    props = _fixed_common("location", oid, code)
    props["country"] = code
    return LocationObject(_parse_common(props), code, None, props)


def _make_region_location(token: str) -> LocationObject:
    oid = deterministic_id("location", f"location:region:{token}")
    props = _fixed_common("location", oid, token)
    props["region"] = token
    return LocationObject(_parse_common(props), None, token, props)


def _make_sector_identity(token: str) -> IdentityObject:
    oid = deterministic_id("identity", f"identity:sector:{token}")
    props = _fixed_common("identity", oid, token)
    props["identity_class"] = "class"
    props["sectors"] = [token]
    return IdentityObject(_parse_common(props), "class", (token,), props)


def _make_relationship(
    rel_type: str, source: str, target: str, confidence: int | None
) -> RelationshipObject:
    oid = deterministic_id("relationship", f"relationship:{rel_type}:{source}:{target}")
    props = _fixed_common("relationship", oid, None)
    props["relationship_type"] = rel_type
    props["source_ref"] = source
    props["target_ref"] = target
    if confidence is not None:
        props["confidence"] = confidence
    return RelationshipObject(
        _parse_common(props),
        rel_type,
        StixId.parse(source),
        StixId.parse(target),
        confidence,
        props,
    )


def apply_enrichment(
    bundle: Bundle, records: Sequence[EnrichmentRecord]
) -> tuple[Bundle, EnrichmentReport]:
    """Apply annotation records to a bundle, returning the enhanced bundle.

    Location and identity nodes are shared per canonical value across all
    groups, new objects get name-derived UUIDs, and re-applying the same
    records is a no-op, so output is stable and diffable.
    """
    objects = list(bundle.objects)
    index_of = {obj_id: i for i, obj_id in enumerate(
        (o.raw.get("id") if isinstance(o.raw, dict) else None) for o in objects
    ) if obj_id is not None}

    groups = [o for o in objects if isinstance(o, IntrusionSet)]
    tiers = _group_tiers(groups)

    country_nodes: dict[str, str] = {}
    region_nodes: dict[str, str] = {}
    sector_nodes: dict[str, str] = {}
    existing_edges: dict[tuple[str, str, str], str] = {}
    for o in objects:
        if isinstance(o, LocationObject):
            if o.country is not None:
                country_nodes.setdefault(o.country, o.common.id.text)
            elif o.region is not None:
                region_nodes.setdefault(o.region, o.common.id.text)
        elif isinstance(o, IdentityObject):
            if o.identity_class == "class" and len(o.sectors) == 1:
                sector_nodes.setdefault(o.sectors[0], o.common.id.text)
        raw = o.raw
        if isinstance(raw, dict) and raw.get("type") == "relationship":
            key = (
                raw.get("relationship_type"),
                raw.get("source_ref"),
                raw.get("target_ref"),
            )
            if all(isinstance(p, str) for p in key):
                existing_edges[key] = raw.get("id", "")

    new_objects: dict[str, StixObject] = {}
    counts = {"locations": 0, "identities": 0, "relationships": 0, "motivations": 0}

    def ensure_country(code: str) -> str:
        if code not in country_nodes:
            node = _make_country_location(code)
            country_nodes[code] = node.common.id.text
            new_objects[node.common.id.text] = node
            counts["locations"] += 1
        return country_nodes[code]

    def ensure_region(token: str) -> str:
        if token not in region_nodes:
            node = _make_region_location(token)
            region_nodes[token] = node.common.id.text
            new_objects[node.common.id.text] = node
            counts["locations"] += 1
        return region_nodes[token]

    def ensure_sector(token: str) -> str:
        if token not in sector_nodes:
            node = _make_sector_identity(token)
            sector_nodes[token] = node.common.id.text
            new_objects[node.common.id.text] = node
            counts["identities"] += 1
        return sector_nodes[token]

    def ensure_edge(
        rel_type: str, source: str, target: str, confidence: int | None = None
    ) -> None:
        key = (rel_type, source, target)
        if key in existing_edges:
            if confidence is not None:
                _update_edge_confidence(existing_edges[key], confidence)
            return
        rel = _make_relationship(rel_type, source, target, confidence)
        existing_edges[key] = rel.common.id.text
        new_objects[rel.common.id.text] = rel
        counts["relationships"] += 1

    def _update_edge_confidence(edge_id: str, confidence: int) -> None:
        pos = index_of.get(edge_id)
        if pos is None:
            existing = new_objects.get(edge_id)
            if isinstance(existing, RelationshipObject) and (
                existing.confidence != confidence
            ):
                new_objects[edge_id] = _make_relationship(
                    existing.relationship_type,
                    existing.source_ref.text,
                    existing.target_ref.text,
                    confidence,
                )
            return
        obj = objects[pos]
        if isinstance(obj, RelationshipObject) and obj.confidence != confidence:
            objects[pos] = _make_relationship(
                obj.relationship_type, obj.source_ref.text, obj.target_ref.text,
                confidence,
            )

    def _set_motivations(group_id: str, record: EnrichmentRecord) -> None:
        pos = index_of[group_id]
        group = objects[pos]
        assert isinstance(group, IntrusionSet)
        raw = dict(group.raw)
        changed = False
        if (
            record.primary_motivation is not None
            and raw.get("primary_motivation") != record.primary_motivation
        ):
            raw["primary_motivation"] = record.primary_motivation
            changed = True
        if record.secondary_motivations and tuple(
            raw.get("secondary_motivations", ())
        ) != record.secondary_motivations:
            raw["secondary_motivations"] = list(record.secondary_motivations)
            changed = True
        if changed:
            counts["motivations"] += 1
            objects[pos] = dataclasses.replace(
                group,
                primary_motivation=raw.get("primary_motivation"),
                secondary_motivations=tuple(raw.get("secondary_motivations", ())),
                raw=raw,
            )

    matched: set[str] = set()
    unmatched: list[str] = []
    ambiguous: list[str] = []
    for record in records:
        try:
            group_id = _resolve_key(record.group_key, tiers)
        except _AmbiguousKey:
            ambiguous.append(record.group_key)
            continue
        if group_id is None:
            unmatched.append(record.group_key)
            continue
        matched.add(group_id)
        if record.origin_country is not None:
            confidence = (
                CONFIDENCE_CONFIRMED
                if record.origin_attribution == "confirmed"
                else CONFIDENCE_SUSPECTED
            )
            ensure_edge(
                "originates-from",
                group_id,
                ensure_country(record.origin_country),
                confidence,
            )
        for code in record.target_countries:
            ensure_edge("targets", group_id, ensure_country(code))
        for token in record.target_regions:
            ensure_edge("targets", group_id, ensure_region(token))
        for token in record.target_sectors:
            ensure_edge("targets", group_id, ensure_sector(token))
        if record.primary_motivation or record.secondary_motivations:
            _set_motivations(group_id, record)

    appended = [new_objects[k] for k in sorted(new_objects)]
    enhanced = Bundle(
        bundle.id, tuple(objects + appended), bundle.extra, bundle.problems
    )
    report = EnrichmentReport(
        groups_matched=len(matched),
        groups_unmatched=tuple(unmatched),
        ambiguous_keys=tuple(ambiguous),
        locations_created=counts["locations"],
        identities_created=counts["identities"],
        relationships_created=counts["relationships"],
        motivations_set=counts["motivations"],
    )
    return enhanced, report


@dataclass(frozen=True)
class Witness:
    """Where in the description a draft token was found."""

    kind: str  # country, region, sector, motivation
    token: str
    surface: str
    start: int
    end: int


@dataclass(frozen=True)
class EnrichmentDraft:
    record: EnrichmentRecord
    witnesses: tuple[Witness, ...]
    draft: bool = True


def _surface_table(gazetteer: Gazetteer) -> dict[str, tuple[str, str]]:
    table: dict[str, tuple[str, str]] = {}
    # Insertion order sets priority when a surface form is in several maps.
    for kind, aliases in (
        ("country", gazetteer.country_aliases),
        ("region", gazetteer.region_aliases),
        ("sector", gazetteer.sector_aliases),
        ("motivation", gazetteer.motivation_keywords),
    ):
        for surface, token in aliases.items():
            table.setdefault(surface.casefold(), (kind, token))
    return table


def _gap(a_start: int, a_end: int, b_start: int, b_end: int) -> int:
    if a_end <= b_start:
        return b_start - a_end
    if b_end <= a_start:
        return a_start - b_end
    return 0


def suggest_enrichment(
    group: IntrusionSet,
    gazetteer: Gazetteer,
    cue_words: Sequence[str] = DEFAULT_CUE_WORDS,
    cue_window: int = DEFAULT_CUE_WINDOW,
) -> EnrichmentDraft:
    """Draft an annotation record from a group's description.

    The description is scanned case-insensitively for the longest gazetteer
    surface forms. A country becomes the suspected origin only when it sits
    within `cue_window` characters of an attribution cue word; every other
    hit lands in the target lists. The result is a draft for an analyst to
    review, never applied automatically.
    """
    text = group.common.description
    if not text:
        raise NoDescription(group.common.name or group.common.id.text)

    table = _surface_table(gazetteer)
    surfaces = sorted(table, key=lambda s: (-len(s), s))
    pattern = re.compile(
        "|".join(
            f"(?<![A-Za-z0-9]){re.escape(s)}(?![A-Za-z0-9])" for s in surfaces
        ),
        re.IGNORECASE,
    )
    cue_pattern = re.compile(
        "|".join(
            f"(?<![A-Za-z0-9]){re.escape(c)}(?![A-Za-z0-9])" for c in cue_words
        ),
        re.IGNORECASE,
    )
    cue_spans = [(m.start(), m.end()) for m in cue_pattern.finditer(text)]

    witnesses: list[Witness] = []
    origin: str | None = None
    countries: list[str] = []
    regions: list[str] = []
    sectors: list[str] = []
    motivations: list[str] = []
    for m in pattern.finditer(text):
        surface = m.group(0)
        # Short aliases ("US", "UK", "EU") collide with English words when
        # folded; count them only when written as uppercase acronyms.
        if len(surface) <= 3 and not surface.isupper():
            continue
        kind, token = table[surface.casefold()]
        witnesses.append(Witness(kind, token, m.group(0), m.start(), m.end()))
        if kind == "country":
            near_cue = any(
                _gap(m.start(), m.end(), cs, ce) <= cue_window for cs, ce in cue_spans
            )
            if origin is None and near_cue:
                origin = token
            else:
                countries.append(token)
        elif kind == "region":
            regions.append(token)
        elif kind == "sector":
            sectors.append(token)
        else:
            motivations.append(token)

    motivations = list(_dedupe(motivations))
    record = EnrichmentRecord(
        group_key=attack_id_of(group) or group.common.name or group.common.id.text,
        origin_country=origin,
        origin_attribution="suspected" if origin else None,
        target_countries=_dedupe(countries),
        target_regions=_dedupe(regions),
        target_sectors=_dedupe(sectors),
        primary_motivation=motivations[0] if motivations else None,
        secondary_motivations=tuple(motivations[1:]),
    )
    return EnrichmentDraft(record, tuple(witnesses))
