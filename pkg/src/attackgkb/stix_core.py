"""Typed reading, validation, and canonical serialization of STIX 2.1 bundles.

The parser is a faithful reader: every object in the input survives into the
Bundle, either as a typed view (the object kinds the groups knowledge base
uses) or as an opaque record. Unknown object types and unrecognized
properties are never dropped, so a parse -> serialize round trip preserves
the whole document.
"""

from __future__ import annotations

import json
import re
import uuid as _uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Mapping, Union


class KbError(Exception):
    """Base class for user/data errors raised by this package."""


class MalformedDocument(KbError):
    """The input is not parseable as a bundle document."""


class NotABundle(KbError):
    """The top-level object is not of type "bundle"."""


class AmbiguousExternalId(KbError):
    """An object carries two disagreeing mitre-attack external ids."""


class SerializationRefused(KbError):
    """Serialization refused because a structural invariant is broken."""


# Relationship kinds the groups model knows about, and the edge triples the
# enhanced representation admits: (relationship_type, source type, target type).
MODELED_RELATIONSHIPS = ("uses", "originates-from", "targets")
LEGAL_TRIPLES = frozenset(
    {
        ("uses", "intrusion-set", "attack-pattern"),
        ("uses", "intrusion-set", "malware"),
        ("uses", "intrusion-set", "tool"),
        ("originates-from", "intrusion-set", "location"),
        ("targets", "intrusion-set", "identity"),
        ("targets", "intrusion-set", "location"),
    }
)

_ID_RE = re.compile(
    r"^([a-z][a-z0-9-]*)--"
    r"([0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12})$"
)
_TS_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d+))?Z$"
)
_COUNTRY_RE = re.compile(r"^[A-Z]{2}$")
_TECHNIQUE_RE = re.compile(r"^T\d{4}(\.\d{3})?$")
_SOFTWARE_RE = re.compile(r"^S\d{4}$")
_COLOR_RE = re.compile(r"^#[0-9A-Fa-f]{6}$")


class _ObjectProblem(Exception):
    """Internal: a property prevents the typed view of one object."""


@dataclass(frozen=True)
class StixId:
    """A STIX identifier of the form `<object-type>--<uuid>`."""

    object_type: str
    uuid: str

    @classmethod
    def parse(cls, text: str) -> "StixId":
        m = _ID_RE.match(text if isinstance(text, str) else "")
        if not m:
            raise ValueError(f"not a STIX id: {text!r}")
        return cls(m.group(1), m.group(2))

    @property
    def text(self) -> str:
        return f"{self.object_type}--{self.uuid}"

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class Timestamp:
    """An RFC-3339 UTC timestamp, kept as written plus its parsed value."""

    text: str
    value: datetime

    @classmethod
    def parse(cls, text: str) -> "Timestamp":
        m = _TS_RE.match(text if isinstance(text, str) else "")
        if not m:
            raise ValueError(f"not an RFC-3339 Z timestamp: {text!r}")
        frac = m.group(7) or ""
        micro = int(frac.ljust(6, "0")[:6]) if frac else 0
        value = datetime(
            *(int(m.group(i)) for i in range(1, 7)),
            microsecond=micro,
            tzinfo=timezone.utc,
        )
        return cls(text, value)


@dataclass(frozen=True)
class ExternalReference:
    source_name: str
    external_id: str | None = None
    url: str | None = None


@dataclass(frozen=True)
class StixCommon:
    """Properties shared by every typed object."""

    id: StixId
    spec_version: str
    created: Timestamp
    modified: Timestamp
    name: str | None
    description: str | None
    external_references: tuple[ExternalReference, ...]
    # Everything the typed view does not consume (x_mitre_* extensions,
    # revocation flags, markings, ...), preserved verbatim.
    vendor_extensions: Mapping[str, Any]


@dataclass(frozen=True)
class IntrusionSet:
    common: StixCommon
    aliases: tuple[str, ...]
    primary_motivation: str | None
    secondary_motivations: tuple[str, ...]
    raw: Mapping[str, Any] = field(repr=False)


@dataclass(frozen=True)
class AttackPattern:
    common: StixCommon
    attack_id: str
    is_subtechnique: bool
    raw: Mapping[str, Any] = field(repr=False)


@dataclass(frozen=True)
class SoftwareObject:
    common: StixCommon
    kind: str  # "malware" or "tool", per the underlying object type
    attack_id: str
    raw: Mapping[str, Any] = field(repr=False)


@dataclass(frozen=True)
class IdentityObject:
    common: StixCommon
    identity_class: str
    sectors: tuple[str, ...]
    raw: Mapping[str, Any] = field(repr=False)


@dataclass(frozen=True)
class LocationObject:
    common: StixCommon
    country: str | None
    region: str | None
    raw: Mapping[str, Any] = field(repr=False)


@dataclass(frozen=True)
class RelationshipObject:
    common: StixCommon
    relationship_type: str
    source_ref: StixId
    target_ref: StixId
    confidence: int | None
    raw: Mapping[str, Any] = field(repr=False)


@dataclass(frozen=True)
class OpaqueObject:
    """Any object kept verbatim without a typed view."""

    raw: Any = field(repr=False)

    @property
    def object_type(self) -> str | None:
        if isinstance(self.raw, dict):
            t = self.raw.get("type")
            return t if isinstance(t, str) else None
        return None


StixObject = Union[
    IntrusionSet,
    AttackPattern,
    SoftwareObject,
    IdentityObject,
    LocationObject,
    RelationshipObject,
    OpaqueObject,
]


@dataclass(frozen=True)
class MalformedObject:
    """A per-object parse diagnostic; the object itself is kept opaquely."""

    object_id: str | None
    reason: str


@dataclass(frozen=True)
class Violation:
    code: str
    object_id: str | None
    detail: str
    fatal: bool = False


@dataclass(frozen=True)
class Bundle:
    id: StixId
    objects: tuple[StixObject, ...]
    # Top-level properties other than type/id/objects, preserved verbatim.
    extra: Mapping[str, Any] = field(default_factory=dict)
    problems: tuple[MalformedObject, ...] = field(default=(), compare=False)


def raw_of(obj: StixObject) -> Any:
    return obj.raw


def object_type_of(obj: StixObject) -> str | None:
    raw = obj.raw
    if isinstance(raw, dict):
        t = raw.get("type")
        return t if isinstance(t, str) else None
    return None


def object_id_of(obj: StixObject) -> str | None:
    raw = obj.raw
    if isinstance(raw, dict):
        i = raw.get("id")
        return i if isinstance(i, str) else None
    return None


def is_revoked(obj: StixObject) -> bool:
    """True when the object carries a revocation or deprecation flag."""
    raw = obj.raw
    if not isinstance(raw, dict):
        return False
    return bool(raw.get("revoked")) or bool(raw.get("x_mitre_deprecated"))


_SDO_TYPES_REQUIRING_NAME = {
    "intrusion-set",
    "attack-pattern",
    "malware",
    "tool",
    "identity",
}

_CONSUMED_BY_TYPE = {
    "intrusion-set": {"aliases", "primary_motivation", "secondary_motivations"},
    "attack-pattern": set(),
    "malware": set(),
    "tool": set(),
    "identity": {"identity_class", "sectors"},
    "location": {"country", "region"},
    "relationship": {"relationship_type", "source_ref", "target_ref", "confidence"},
}
_COMMON_PROPS = {
    "type",
    "id",
    "spec_version",
    "created",
    "modified",
    "name",
    "description",
    "external_references",
}


def _parse_external_references(value: Any) -> tuple[ExternalReference, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        raise _ObjectProblem("external_references is not a list")
    refs = []
    for entry in value:
        if not isinstance(entry, dict):
            raise _ObjectProblem("external reference entry is not an object")
        source = entry.get("source_name")
        if not isinstance(source, str):
            raise _ObjectProblem("external reference without source_name")
        ext = entry.get("external_id")
        url = entry.get("url")
        refs.append(
            ExternalReference(
                source,
                ext if isinstance(ext, str) else None,
                url if isinstance(url, str) else None,
            )
        )
    return tuple(refs)


def _parse_common(props: Mapping[str, Any]) -> StixCommon:
    obj_type = props["type"]
    try:
        sid = StixId.parse(props.get("id", ""))
    except ValueError as exc:
        raise _ObjectProblem(str(exc))
    if sid.object_type != obj_type:
        raise _ObjectProblem(
            f"id prefix {sid.object_type!r} does not match type {obj_type!r}"
        )
    try:
        created = Timestamp.parse(props.get("created", ""))
        modified = Timestamp.parse(props.get("modified", ""))
    except ValueError as exc:
        raise _ObjectProblem(str(exc))
    if modified.value < created.value:
        raise _ObjectProblem("modified precedes created")
    name = props.get("name")
    if name is not None and not isinstance(name, str):
        raise _ObjectProblem("name is not a string")
    if name is None and obj_type in _SDO_TYPES_REQUIRING_NAME:
        raise _ObjectProblem("missing name")
    description = props.get("description")
    if description is not None and not isinstance(description, str):
        raise _ObjectProblem("description is not a string")
    external_attack_id(props)  # raises on conflicting mitre-attack ids
    consumed = _COMMON_PROPS | _CONSUMED_BY_TYPE.get(obj_type, set())
    extensions = {k: v for k, v in props.items() if k not in consumed}
    return StixCommon(
        id=sid,
        spec_version=str(props.get("spec_version", "")),
        created=created,
        modified=modified,
        name=name,
        description=description,
        external_references=_parse_external_references(
            props.get("external_references")
        ),
        vendor_extensions=extensions,
    )


def _string_list(props: Mapping[str, Any], key: str) -> tuple[str, ...]:
    value = props.get(key)
    if value is None:
        return ()
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        raise _ObjectProblem(f"{key} is not a list of strings")
    return tuple(value)


def _dedupe_casefold(values: Iterable[str]) -> tuple[str, ...]:
    seen: set[str] = set()
    out = []
    for v in values:
        k = v.casefold()
        if k not in seen:
            seen.add(k)
            out.append(v)
    return tuple(out)


def external_attack_id(props: Mapping[str, Any]) -> str | None:
    """The mitre-attack external_id of a raw object, or None.

    Raises AmbiguousExternalId when two mitre-attack references disagree.
    """
    refs = props.get("external_references")
    if not isinstance(refs, list):
        return None
    found: list[str] = []
    for entry in refs:
        if isinstance(entry, dict) and entry.get("source_name") == "mitre-attack":
            ext = entry.get("external_id")
            if isinstance(ext, str):
                found.append(ext)
    distinct = sorted(set(found))
    if len(distinct) > 1:
        raise AmbiguousExternalId(
            f"{props.get('id')}: conflicting mitre-attack ids {distinct}"
        )
    return distinct[0] if distinct else None


def attack_id_of(obj: StixObject) -> str | None:
    """The object's ATT&CK id (G####/T####/S####...), from external references."""
    raw = obj.raw
    if not isinstance(raw, dict):
        return None
    return external_attack_id(raw)


def _parse_intrusion_set(props: Mapping[str, Any]) -> IntrusionSet:
    common = _parse_common(props)
    aliases = _dedupe_casefold(_string_list(props, "aliases"))
    primary = props.get("primary_motivation")
    if primary is not None and not isinstance(primary, str):
        raise _ObjectProblem("primary_motivation is not a string")
    secondary = _string_list(props, "secondary_motivations")
    if primary is not None:
        secondary = tuple(s for s in secondary if s != primary)
    return IntrusionSet(common, aliases, primary, _dedupe_casefold(secondary), props)


def _parse_attack_pattern(props: Mapping[str, Any]) -> AttackPattern:
    common = _parse_common(props)
    attack_id = external_attack_id(props)
    if attack_id is None:
        raise _ObjectProblem("attack-pattern without a mitre-attack external id")
    if not _TECHNIQUE_RE.match(attack_id):
        raise _ObjectProblem(f"technique id {attack_id!r} is not T#### or T####.###")
    return AttackPattern(common, attack_id, "." in attack_id, props)


def _parse_software(props: Mapping[str, Any]) -> SoftwareObject:
    common = _parse_common(props)
    attack_id = external_attack_id(props)
    if attack_id is None:
        raise _ObjectProblem("software without a mitre-attack external id")
    if not _SOFTWARE_RE.match(attack_id):
        raise _ObjectProblem(f"software id {attack_id!r} is not S####")
    return SoftwareObject(common, props["type"], attack_id, props)


def _parse_identity(props: Mapping[str, Any]) -> IdentityObject:
    common = _parse_common(props)
    identity_class = props.get("identity_class")
    if not isinstance(identity_class, str):
        raise _ObjectProblem("identity without identity_class")
    return IdentityObject(common, identity_class, _string_list(props, "sectors"), props)


def _parse_location(props: Mapping[str, Any]) -> LocationObject:
    common = _parse_common(props)
    country = props.get("country")
    if country is not None:
        if not isinstance(country, str) or not _COUNTRY_RE.match(country):
            raise _ObjectProblem(f"country {country!r} is not an ISO alpha-2 code")
    region = props.get("region")
    if region is not None and not isinstance(region, str):
        raise _ObjectProblem("region is not a string")
    if country is None and region is None:
        raise _ObjectProblem("location has neither country nor region")
    return LocationObject(common, country, region, props)


def _parse_relationship(props: Mapping[str, Any]) -> RelationshipObject | None:
    """Typed view of a relationship, or None when it is outside the groups model."""
    rel = props.get("relationship_type")
    if rel not in MODELED_RELATIONSHIPS:
        return None
    try:
        source = StixId.parse(props.get("source_ref", ""))
        target = StixId.parse(props.get("target_ref", ""))
    except ValueError as exc:
        raise _ObjectProblem(str(exc))
    if (rel, source.object_type, target.object_type) not in LEGAL_TRIPLES:
        # Outside the modeled edge set; kept opaque, validate() decides whether
        # the triple is merely unmodeled or actually illegal.
        return None
    common = _parse_common(props)
    confidence = props.get("confidence")
    if confidence is not None:
        if not isinstance(confidence, int) or not 0 <= confidence <= 100:
            raise _ObjectProblem(f"confidence {confidence!r} not an integer in 0..100")
    return RelationshipObject(common, rel, source, target, confidence, props)


_PARSERS = {
    "intrusion-set": _parse_intrusion_set,
    "attack-pattern": _parse_attack_pattern,
    "malware": _parse_software,
    "tool": _parse_software,
    "identity": _parse_identity,
    "location": _parse_location,
}


def parse_bundle(document: str) -> Bundle:
    """Parse a STIX 2.1 bundle document.

    Raises MalformedDocument or NotABundle for top-level failures. Per-object
    failures never drop the object: it is kept opaquely and a MalformedObject
    diagnostic is collected on the returned Bundle.
    """
    try:
        top = json.loads(document)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedDocument(f"not valid JSON: {exc}")
    if not isinstance(top, dict):
        raise MalformedDocument("top-level value is not an object")
    if top.get("type") != "bundle":
        raise NotABundle(f"top-level type is {top.get('type')!r}, expected 'bundle'")
    try:
        bundle_id = StixId.parse(top.get("id", ""))
    except ValueError as exc:
        raise MalformedDocument(str(exc))
    if bundle_id.object_type != "bundle":
        raise MalformedDocument(f"bundle id has prefix {bundle_id.object_type!r}")
    raw_objects = top.get("objects", [])
    if not isinstance(raw_objects, list):
        raise MalformedDocument('"objects" is not an array')

    objects: list[StixObject] = []
    problems: list[MalformedObject] = []
    for entry in raw_objects:
        if not isinstance(entry, dict) or not isinstance(entry.get("type"), str):
            problems.append(
                MalformedObject(None, "array entry is not a typed STIX object")
            )
            objects.append(OpaqueObject(entry))
            continue
        obj_type = entry["type"]
        try:
            if obj_type == "relationship":
                typed = _parse_relationship(entry)
                objects.append(typed if typed is not None else OpaqueObject(entry))
            elif obj_type in _PARSERS:
                objects.append(_PARSERS[obj_type](entry))
            else:
                objects.append(OpaqueObject(entry))
        except (_ObjectProblem, AmbiguousExternalId) as exc:
            oid = entry.get("id")
            problems.append(
                MalformedObject(oid if isinstance(oid, str) else None, str(exc))
            )
            objects.append(OpaqueObject(entry))

    extra = {k: v for k, v in top.items() if k not in ("type", "id", "objects")}
    return Bundle(bundle_id, tuple(objects), extra, tuple(problems))


def bundle_document(b: Bundle) -> dict:
    """The bundle as a plain JSON-ready dict (objects verbatim)."""
    doc: dict[str, Any] = {"type": "bundle", "id": b.id.text}
    doc.update(b.extra)
    doc["objects"] = [o.raw for o in b.objects]
    return doc


def serialize_bundle(b: Bundle) -> str:
    """Serialize canonically: sorted keys, two-space indent, trailing newline."""
    ids = [oid for oid in (object_id_of(o) for o in b.objects) if oid is not None]
    if len(ids) != len(set(ids)):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise SerializationRefused(f"duplicate object ids: {dupes}")
    try:
        text = json.dumps(
            bundle_document(b), sort_keys=True, indent=2, ensure_ascii=False
        )
    except (TypeError, ValueError) as exc:
        raise SerializationRefused(f"not JSON-serializable: {exc}")
    return text + "\n"


def semantically_equal(a: Bundle, b: Bundle) -> bool:
    """Equality on the canonical document, ignoring parse diagnostics."""
    return bundle_document(a) == bundle_document(b)


def type_counts(b: Bundle) -> dict[str, int]:
    """Object count per raw `type` value (opaque objects included)."""
    counts: dict[str, int] = {}
    for obj in b.objects:
        t = object_type_of(obj)
        if t is not None:
            counts[t] = counts.get(t, 0) + 1
    return counts


def _check_relationship_raw(
    props: Mapping[str, Any], ids: set[str], violations: list[Violation]
) -> None:
    oid = props.get("id") if isinstance(props.get("id"), str) else None
    endpoints = []
    for key in ("source_ref", "target_ref"):
        ref = props.get(key)
        if not isinstance(ref, str) or not _ID_RE.match(ref):
            violations.append(
                Violation("dangling-ref", oid, f"{key} is missing or malformed")
            )
            endpoints.append(None)
            continue
        if ref not in ids:
            violations.append(
                Violation("dangling-ref", oid, f"{key} {ref} not in bundle")
            )
        endpoints.append(ref.split("--", 1)[0])

    rel = props.get("relationship_type")
    src_type, tgt_type = endpoints
    if rel not in MODELED_RELATIONSHIPS or src_type is None or tgt_type is None:
        return
    if (rel, src_type, tgt_type) in LEGAL_TRIPLES:
        return
    # Base-bundle relationships (e.g. software using a technique) are outside
    # the groups model and pass through; only edges claiming a group source or
    # touching the enhancement vocabulary are held to the modeled triples.
    enhancement = {"location", "identity"}
    if src_type == "intrusion-set" or {src_type, tgt_type} & enhancement:
        violations.append(
            Violation(
                "illegal-relationship-triple",
                oid,
                f"({rel}, {src_type}, {tgt_type}) is not a modeled edge",
            )
        )


def validate(b: Bundle) -> list[Violation]:
    """All structural violations in the bundle; an empty list means valid.

    Checks run over the raw object records, independently of the typed views.
    Only duplicate ids are fatal (they break addressing); everything else is
    reported data.
    """
    violations: list[Violation] = []
    ids: set[str] = set()
    duplicates: set[str] = set()
    for obj in b.objects:
        oid = object_id_of(obj)
        if oid is None:
            continue
        if oid in ids:
            duplicates.add(oid)
        ids.add(oid)
    for oid in sorted(duplicates):
        violations.append(
            Violation("duplicate-id", oid, "id appears more than once", fatal=True)
        )

    for obj in b.objects:
        props = obj.raw
        if not isinstance(props, dict):
            continue
        oid = props.get("id") if isinstance(props.get("id"), str) else None
        obj_type = props.get("type")
        if props.get("spec_version") != "2.1":
            violations.append(
                Violation(
                    "spec-version",
                    oid,
                    f"spec_version is {props.get('spec_version')!r}, expected '2.1'",
                )
            )
        if obj_type == "location":
            country = props.get("country")
            if country is not None and (
                not isinstance(country, str) or not _COUNTRY_RE.match(country)
            ):
                violations.append(
                    Violation(
                        "malformed-country",
                        oid,
                        f"country {country!r} is not two uppercase letters",
                    )
                )
            if country is None and props.get("region") is None:
                violations.append(
                    Violation(
                        "location-empty", oid, "location has neither country nor region"
                    )
                )
        if obj_type == "relationship":
            _check_relationship_raw(props, ids, violations)
    return violations


def fatal_violations(violations: Iterable[Violation]) -> list[Violation]:
    return [v for v in violations if v.fatal]


# Namespace for name-based UUIDs of objects this package creates; fixed so
# repeated runs mint identical ids.
DETERMINISTIC_NAMESPACE = _uuid.UUID("3d5f01fb-d96d-43f8-a2f5-ff786c725a2f")


def deterministic_id(object_type: str, name: str) -> str:
    return f"{object_type}--{_uuid.uuid5(DETERMINISTIC_NAMESPACE, name)}"
