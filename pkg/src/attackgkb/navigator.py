"""ATT&CK Navigator layer files encoding the technique-overlap heatmap."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .analytics import OverlapSummary, TechniqueUsage
from .stix_core import KbError, SerializationRefused

# Three-shade scheme for three groups: no overlap, two groups, all three.
LIGHT_RED = "#FFC7C7"
MID_RED = "#FF6666"
DARK_RED = "#C00000"

DEFAULT_LAYER_VERSION = "4.2"
DEFAULT_ATTACK_VERSION = "9"
DEFAULT_NAVIGATOR_VERSION = "4.3"

_COLOR_RE = re.compile(r"^#[0-9A-Fa-f]{6}$")


class MissingPaletteTier(KbError):
    pass


@dataclass(frozen=True)
class LayerTechnique:
    technique_id: str
    score: int
    color: str
    comment: str


@dataclass(frozen=True)
class LegendItem:
    label: str
    color: str


@dataclass(frozen=True)
class NavigatorLayer:
    name: str
    description: str
    domain: str
    layer_version: str
    attack_version: str
    navigator_version: str
    techniques: tuple[LayerTechnique, ...]
    legend: tuple[LegendItem, ...]


def _hex_to_rgb(color: str) -> tuple[int, int, int]:
    return tuple(int(color[i : i + 2], 16) for i in (1, 3, 5))  # type: ignore[return-value]


def _rgb_to_hex(rgb: tuple[float, float, float]) -> str:
    return "#{:02X}{:02X}{:02X}".format(*(round(c) for c in rgb))


def default_palette(
    n_groups: int, light: str = LIGHT_RED, dark: str = DARK_RED
) -> dict[int, str]:
    """Colors per overlap tier, light for count 1 up to dark for count n.

    The three-group case uses the fixed light/mid/dark shades; other sizes
    interpolate linearly between the endpoints.
    """
    if n_groups < 1:
        return {}
    if n_groups == 1:
        return {1: dark}
    if n_groups == 3 and light == LIGHT_RED and dark == DARK_RED:
        return {1: LIGHT_RED, 2: MID_RED, 3: DARK_RED}
    lo, hi = _hex_to_rgb(light), _hex_to_rgb(dark)
    palette = {}
    for tier in range(1, n_groups + 1):
        frac = (tier - 1) / (n_groups - 1)
        palette[tier] = _rgb_to_hex(
            tuple(l + (h - l) * frac for l, h in zip(lo, hi))
        )
    return palette


def layer_from_summary(
    usages: Sequence[TechniqueUsage],
    summary: OverlapSummary,
    palette: Mapping[int, str] | None = None,
    name: str = "Technique overlap",
    description: str = "",
    layer_version: str = DEFAULT_LAYER_VERSION,
    attack_version: str = DEFAULT_ATTACK_VERSION,
    navigator_version: str = DEFAULT_NAVIGATOR_VERSION,
) -> NavigatorLayer:
    """Build a layer coloring each technique by its overlap tier."""
    if palette is None:
        palette = default_palette(summary.n_groups)
    occupied = sorted(summary.tiers)
    for tier in occupied:
        if tier not in palette:
            raise MissingPaletteTier(tier)

    techniques = tuple(
        LayerTechnique(
            technique_id=u.attack_id,
            score=u.count,
            color=palette[u.count],
            comment=", ".join(u.groups),
        )
        for u in usages
    )
    legend = tuple(
        LegendItem(
            label=f"Used by {tier} of {summary.n_groups} groups",
            color=palette[tier],
        )
        for tier in occupied
    )
    return NavigatorLayer(
        name=name,
        description=description,
        domain="enterprise-attack",
        layer_version=layer_version,
        attack_version=attack_version,
        navigator_version=navigator_version,
        techniques=techniques,
        legend=legend,
    )


def _check_layer(layer: NavigatorLayer) -> None:
    seen: set[str] = set()
    legend_colors = {item.color for item in layer.legend}
    for item in layer.legend:
        if not _COLOR_RE.match(item.color):
            raise SerializationRefused(f"legend color {item.color!r} is not #RRGGBB")
    for tech in layer.techniques:
        if tech.technique_id in seen:
            raise SerializationRefused(f"duplicate techniqueID {tech.technique_id}")
        seen.add(tech.technique_id)
        if tech.score < 1:
            raise SerializationRefused(f"{tech.technique_id} has score {tech.score} < 1")
        if not _COLOR_RE.match(tech.color):
            raise SerializationRefused(f"color {tech.color!r} is not #RRGGBB")
        if tech.color not in legend_colors:
            raise SerializationRefused(
                f"color {tech.color} of {tech.technique_id} missing from legend"
            )


def write_layer(layer: NavigatorLayer) -> str:
    """Serialize to the Navigator layer JSON format, canonically keyed."""
    _check_layer(layer)
    document = {
        "name": layer.name,
        "versions": {
            "layer": layer.layer_version,
            "attack": layer.attack_version,
            "navigator": layer.navigator_version,
        },
        "domain": layer.domain,
        "description": layer.description,
        "techniques": [
            {
                "techniqueID": t.technique_id,
                "score": t.score,
                "color": t.color,
                "comment": t.comment,
            }
            for t in layer.techniques
        ],
        "legendItems": [
            {"label": item.label, "color": item.color} for item in layer.legend
        ],
    }
    return json.dumps(document, indent=2, ensure_ascii=False) + "\n"


def read_layer(document: str) -> NavigatorLayer:
    """Parse a layer document produced by write_layer."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise KbError(f"not a valid layer document: {exc}")
    if not isinstance(data, dict):
        raise KbError("layer document is not an object")
    versions = data.get("versions", {})
    return NavigatorLayer(
        name=data.get("name", ""),
        description=data.get("description", ""),
        domain=data.get("domain", "enterprise-attack"),
        layer_version=versions.get("layer", DEFAULT_LAYER_VERSION),
        attack_version=versions.get("attack", DEFAULT_ATTACK_VERSION),
        navigator_version=versions.get("navigator", DEFAULT_NAVIGATOR_VERSION),
        techniques=tuple(
            LayerTechnique(
                technique_id=t["techniqueID"],
                score=t["score"],
                color=t["color"],
                comment=t.get("comment", ""),
            )
            for t in data.get("techniques", [])
        ),
        legend=tuple(
            LegendItem(label=item["label"], color=item["color"])
            for item in data.get("legendItems", [])
        ),
    )
