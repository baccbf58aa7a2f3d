"""De-localized object representation: catalogue token + 3x3 region token.

A scene object is rendered as ``INV_<catalogue_id>@<ROW>:<COL>`` where the
region comes from the bounding-box center on a 3x3 grid. ``relocalize``
reverses generated tokens back to canonical ids, breaking ties by largest
bbox area.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .corpus import BoundingBox, CatalogueItem, Scene

ROWS = ("TOP", "MIDDLE", "BOTTOM")
COLS = ("LEFT", "CENTER", "RIGHT")


class DelocalizeError(Exception):
    pass


@dataclass(frozen=True)
class RegionLabel:
    row: str
    col: str

    def __post_init__(self):
        if self.row not in ROWS or self.col not in COLS:
            raise DelocalizeError(f"invalid region {self.row}:{self.col}")

    @property
    def row_index(self) -> int:
        return ROWS.index(self.row)

    @property
    def col_index(self) -> int:
        return COLS.index(self.col)

    @property
    def index(self) -> int:
        """Row-major cell index 0..8."""
        return 3 * self.row_index + self.col_index

    @property
    def token(self) -> str:
        return f"@{self.row}:{self.col}"


ALL_REGIONS = tuple(RegionLabel(r, c) for r in ROWS for c in COLS)
REGION_BY_TOKEN = {r.token: r for r in ALL_REGIONS}


@dataclass(frozen=True)
class DelocalizedObject:
    catalogue_token: str
    region: RegionLabel

    @property
    def rendered(self) -> str:
        return f"{self.catalogue_token}{self.region.token}"


@dataclass(frozen=True)
class SceneDescription:
    """The de-localized rendering of a scene, one entry per object."""

    objects: tuple[DelocalizedObject, ...]

    @property
    def token_count(self) -> int:
        # each object encodes to exactly two vocabulary tokens
        return 2 * len(self.objects)


def region_of(bbox: BoundingBox, scene_w: int, scene_h: int) -> RegionLabel:
    """Grid cell containing the bbox center; half-open thirds, last cell closed."""
    if scene_w <= 0 or scene_h <= 0:
        raise DelocalizeError(f"degenerate scene dimensions {scene_w}x{scene_h}")
    # doubled center coordinates keep the thirds test exact for integer boxes
    cx2 = 2 * bbox.x + bbox.w
    cy2 = 2 * bbox.y + bbox.h
    col = max(0, min(int((3 * cx2) // (2 * scene_w)), 2))
    row = max(0, min(int((3 * cy2) // (2 * scene_h)), 2))
    return RegionLabel(ROWS[row], COLS[col])


def delocalize_object(obj, scene: Scene, catalogue_index: Mapping[int, CatalogueItem]) -> DelocalizedObject:
    item = catalogue_index.get(obj.catalogue_id)
    if item is None:
        raise DelocalizeError(f"object {obj.canonical_id} references unknown catalogue_id {obj.catalogue_id}")
    return DelocalizedObject(item.token, region_of(obj.bbox, scene.width, scene.height))


def scene_description(scene: Scene, catalogue: Iterable[CatalogueItem]) -> SceneDescription:
    """Render every scene object, ordered by ascending canonical id."""
    index = {item.catalogue_id: item for item in catalogue}
    ordered = sorted(scene.objects, key=lambda o: o.canonical_id)
    return SceneDescription(tuple(delocalize_object(o, scene, index) for o in ordered))


def delocalize_refs(ids: Iterable[int], scene: Scene,
                    catalogue: Iterable[CatalogueItem]) -> list[DelocalizedObject]:
    """Order-preserving map of canonical ids to their de-localized form."""
    index = {item.catalogue_id: item for item in catalogue}
    by_id = {obj.canonical_id: obj for obj in scene.objects}
    out = []
    for cid in ids:
        obj = by_id.get(cid)
        if obj is None:
            raise DelocalizeError(f"canonical id {cid} not in scene {scene.scene_id}")
        out.append(delocalize_object(obj, scene, index))
    return out


def relocalize(obj: DelocalizedObject, scene: Scene,
               catalogue: Iterable[CatalogueItem]) -> int | None:
    """Resolve a de-localized token back to a canonical id.

    Resolution ladder: exact (token, region) matches first, largest area wins;
    otherwise token matches anywhere, nearest region by grid Manhattan distance,
    then largest area, then smallest canonical id. Returns None when the
    catalogue token is absent from the scene (callers drop the reference).
    """
    index = {item.catalogue_id: item for item in catalogue}
    candidates = []
    for scene_obj in scene.objects:
        item = index.get(scene_obj.catalogue_id)
        if item is not None and item.token == obj.catalogue_token:
            candidates.append(scene_obj)
    if not candidates:
        return None

    def obj_region(o) -> RegionLabel:
        return region_of(o.bbox, scene.width, scene.height)

    exact = [o for o in candidates if obj_region(o) == obj.region]
    if exact:
        return min(exact, key=lambda o: (-o.bbox.area, o.canonical_id)).canonical_id

    def distance(o) -> int:
        r = obj_region(o)
        return abs(r.row_index - obj.region.row_index) + abs(r.col_index - obj.region.col_index)

    return min(candidates, key=lambda o: (distance(o), -o.bbox.area, o.canonical_id)).canonical_id
