"""Enrich, query, and visualize the ATT&CK Groups knowledge base (STIX 2.1)."""

from .analytics import (
    CountExceedsGroups,
    OverlapSummary,
    TechniqueUsage,
    overlap_summary,
    prioritize,
    techniques_of_groups,
)
from .enrichment import (
    DuplicateGroupKey,
    EnrichmentDraft,
    EnrichmentRecord,
    EnrichmentReport,
    Gazetteer,
    MalformedEnrichmentFile,
    NoDescription,
    apply_enrichment,
    load_enrichment,
    suggest_enrichment,
)
from .graph_store import (
    AmbiguousKey,
    GroupView,
    KnowledgeGraph,
    NotAGroup,
    UnknownId,
    build_graph,
    group_view,
    neighbors,
    resolve_group,
)
from .navigator import (
    MissingPaletteTier,
    NavigatorLayer,
    default_palette,
    layer_from_summary,
    read_layer,
    write_layer,
)
from .query import (
    QueryResult,
    QuerySyntaxError,
    UnknownField,
    compile_query,
    evaluate,
    parse_query,
    tokenize,
)
from .stix_core import (
    AmbiguousExternalId,
    AttackPattern,
    Bundle,
    IdentityObject,
    IntrusionSet,
    KbError,
    LocationObject,
    MalformedDocument,
    NotABundle,
    RelationshipObject,
    SerializationRefused,
    SoftwareObject,
    StixId,
    Violation,
    attack_id_of,
    parse_bundle,
    semantically_equal,
    serialize_bundle,
    type_counts,
    validate,
)

__version__ = "0.1.0"
