"""Land-use/land-cover class catalog.

The seven LULC classes are fixed alphabetically; a class's label index is its
position in that order. The default prompt phrases and generation counts ship
here so every stage agrees on them, and the stub generator's palette gives
each class a well-separated mean color (which is what makes stub-generated
datasets learnable by the downstream reference classifier).
"""

from __future__ import annotations

LULC_CLASSES: tuple[str, ...] = (
    "Bare Land",
    "Crop Land",
    "Cultivated Vegetation",
    "Natural Vegetation",
    "Snow Ice",
    "Water Body",
    "Woody Vegetation",
)

# Default per-class image counts for synthetic dataset generation (388 total).
DEFAULT_CLASS_COUNTS: dict[str, int] = {
    "Bare Land": 52,
    "Crop Land": 57,
    "Cultivated Vegetation": 54,
    "Natural Vegetation": 54,
    "Snow Ice": 58,
    "Water Body": 52,
    "Woody Vegetation": 61,
}

# Default scene phrases used to seed class-conditioned prompts.
DEFAULT_CLASS_PHRASES: dict[str, list[str]] = {
    "Bare Land": ["Barren landscape of a rocky desert canyon"],
    "Crop Land": ["Vineyards and orchards in a wine-producing region"],
    "Cultivated Vegetation": ["Golden hues of ripe wheat fields ready for harvest"],
    "Natural Vegetation": ["Mixed oak-hickory forest with vibrant autumn foliage"],
    "Snow Ice": ["Ice floes drifting in the Arctic Ocean under the northern lights"],
    "Water Body": ["Cluster of small islands surrounded by shallow turquoise waters"],
    "Woody Vegetation": ["Coastal mangrove swamp with meandering tidal creeks"],
}

# Mean RGB per class for the stub image generator; pairwise well separated.
CLASS_PALETTE: dict[str, tuple[int, int, int]] = {
    "Bare Land": (181, 146, 104),
    "Crop Land": (205, 190, 60),
    "Cultivated Vegetation": (110, 205, 90),
    "Natural Vegetation": (30, 120, 45),
    "Snow Ice": (235, 240, 250),
    "Water Body": (40, 90, 200),
    "Woody Vegetation": (80, 60, 20),
}


def label_index(class_name: str, catalog: tuple[str, ...] = LULC_CLASSES) -> int:
    """Ordinal of `class_name` in the catalog (alphabetical for the default set)."""
    try:
        return catalog.index(class_name)
    except ValueError:
        raise ValueError(f"unknown class {class_name!r}; known: {list(catalog)}") from None


def class_color(class_name: str) -> tuple[int, int, int]:
    """Palette color for a class; unknown classes get a stable hash-derived color."""
    if class_name in CLASS_PALETTE:
        return CLASS_PALETTE[class_name]
    import zlib

    h = zlib.crc32(class_name.encode("utf-8"))
    return (40 + h % 180, 40 + (h >> 8) % 180, 40 + (h >> 16) % 180)
