import os
from pathlib import Path

import pytest

from attackgkb.enrichment import Gazetteer, apply_enrichment, load_enrichment
from attackgkb.graph_store import build_graph
from attackgkb.stix_core import parse_bundle

DATA_DIR = Path(__file__).parent / "data"

# Real v9 enterprise bundle, if the developer has fetched it (optional).
REAL_BUNDLE_PATH = Path(
    os.environ.get("ATTCK_V9_BUNDLE", DATA_DIR / "enterprise-attack-9.0.json")
)

LISTING_QUERY = (
    "SELECT * FROM GroupsKnowledgeBase\n"
    'WHERE OriginatesFrom == "Russian Federation"\n'
    'AND TargetSector == "Government"\n'
    'AND TargetCountry == "United States"'
)


@pytest.fixture(scope="session")
def fixture_path() -> Path:
    return DATA_DIR / "fixture_bundle.json"


@pytest.fixture(scope="session")
def records_path() -> Path:
    return DATA_DIR / "fixture_records.json"


@pytest.fixture(scope="session")
def fixture_text(fixture_path) -> str:
    return fixture_path.read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def bundle(fixture_text):
    return parse_bundle(fixture_text)


@pytest.fixture(scope="session")
def gazetteer() -> Gazetteer:
    return Gazetteer.default()


@pytest.fixture(scope="session")
def records(records_path, gazetteer):
    return load_enrichment(records_path.read_text(encoding="utf-8"), gazetteer).records


@pytest.fixture(scope="session")
def enhanced(bundle, records):
    enhanced_bundle, _report = apply_enrichment(bundle, records)
    return enhanced_bundle


@pytest.fixture(scope="session")
def graph(enhanced):
    return build_graph(enhanced)


@pytest.fixture(scope="session")
def raw_graph(bundle):
    """Graph over the un-enhanced fixture."""
    return build_graph(bundle)
