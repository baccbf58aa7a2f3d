"""Data model for scenes, catalogues, and annotated dialogues, plus JSON I/O.

The on-disk layout is three parts under one directory: ``catalogue.json``,
``scenes/<scene_id>.json``, and ``dialogues.json``. Loading is fail-fast:
malformed or dangling data raises ``CorpusError`` instead of being repaired.
``validate`` is the lenient counterpart that returns violation records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping


class CorpusError(Exception):
    """Raised on malformed corpus files or broken cross-references."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class BoundingBox:
    """Pixel-space box: left, top, width, height."""

    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class AttributeValue:
    value: str
    visual: bool


@dataclass(frozen=True)
class CatalogueItem:
    """A reusable object type; scenes hold instances of catalogue items."""

    catalogue_id: int
    attributes: Mapping[str, AttributeValue] = field(default_factory=dict)

    @property
    def token(self) -> str:
        return f"INV_{self.catalogue_id}"


@dataclass(frozen=True)
class SceneObject:
    canonical_id: int
    catalogue_id: int
    bbox: BoundingBox


@dataclass(frozen=True)
class Scene:
    scene_id: str
    width: int
    height: int
    objects: tuple[SceneObject, ...] = ()

    def object_by_id(self, canonical_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.canonical_id == canonical_id:
                return obj
        raise KeyError(canonical_id)


@dataclass(frozen=True)
class BeliefState:
    """Per-turn user semantics: intent, slot-values, requested slots, MRef.

    ``mref`` holds canonical ids (ints) in ground truth and de-localized token
    strings in model space.
    """

    intent: str = ""
    slots: Mapping[str, str] = field(default_factory=dict)
    request_slots: frozenset[str] = frozenset()
    mref: tuple = ()


@dataclass(frozen=True)
class Action:
    """Per-turn system semantics: intent, slot-values, requested slots."""

    intent: str = ""
    slots: Mapping[str, str] = field(default_factory=dict)
    request_slots: frozenset[str] = frozenset()


@dataclass(frozen=True)
class DialogueTurn:
    user_utterance: str
    system_utterance: str
    belief: BeliefState
    action: Action
    system_mentions: tuple[int, ...] = ()
    # present iff the turn is annotated for the disambiguation task
    disambiguation_label: bool | None = None


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    scene_id: str
    turns: tuple[DialogueTurn, ...]


@dataclass(frozen=True)
class Corpus:
    catalogue: tuple[CatalogueItem, ...]
    scenes: Mapping[str, Scene]
    dialogues: tuple[Dialogue, ...]

    def catalogue_index(self) -> dict[int, CatalogueItem]:
        return {item.catalogue_id: item for item in self.catalogue}


@dataclass(frozen=True)
class Violation:
    """One invariant breach: machine-readable code plus the offending ids."""

    code: str
    message: str
    ids: tuple = ()


def validate(corpus: Corpus) -> list[Violation]:
    """Check every type invariant; returns [] iff the corpus is clean."""
    out: list[Violation] = []
    seen_cat: set[int] = set()
    for item in corpus.catalogue:
        if item.catalogue_id in seen_cat:
            out.append(Violation("DUP_CATALOGUE_ID",
                                 f"catalogue_id {item.catalogue_id} occurs more than once",
                                 (item.catalogue_id,)))
        seen_cat.add(item.catalogue_id)

    for key, scene in corpus.scenes.items():
        if key != scene.scene_id:
            out.append(Violation("SCENE_ID_MISMATCH",
                                 f"scene stored under key {key!r} has scene_id {scene.scene_id!r}",
                                 (key, scene.scene_id)))
        if scene.width <= 0 or scene.height <= 0:
            out.append(Violation("SCENE_DEGENERATE",
                                 f"scene {scene.scene_id} has non-positive dimensions",
                                 (scene.scene_id,)))
        seen_obj: set[int] = set()
        for obj in scene.objects:
            if obj.canonical_id in seen_obj:
                out.append(Violation("DUP_CANONICAL_ID",
                                     f"scene {scene.scene_id}: canonical_id {obj.canonical_id} duplicated",
                                     (scene.scene_id, obj.canonical_id)))
            seen_obj.add(obj.canonical_id)
            if obj.catalogue_id not in seen_cat:
                out.append(Violation("UNKNOWN_CATALOGUE_ID",
                                     f"scene {scene.scene_id}: object {obj.canonical_id} references "
                                     f"unknown catalogue_id {obj.catalogue_id}",
                                     (scene.scene_id, obj.canonical_id, obj.catalogue_id)))
            b = obj.bbox
            if b.w <= 0 or b.h <= 0 or b.x < 0 or b.y < 0:
                out.append(Violation("BBOX_DEGENERATE",
                                     f"scene {scene.scene_id}: object {obj.canonical_id} has bbox "
                                     f"({b.x},{b.y},{b.w},{b.h})",
                                     (scene.scene_id, obj.canonical_id)))
            elif b.x + b.w > scene.width or b.y + b.h > scene.height:
                out.append(Violation("BBOX_OUT_OF_BOUNDS",
                                     f"scene {scene.scene_id}: object {obj.canonical_id} bbox exceeds "
                                     f"{scene.width}x{scene.height}",
                                     (scene.scene_id, obj.canonical_id)))

    for dlg in corpus.dialogues:
        scene = corpus.scenes.get(dlg.scene_id)
        if scene is None:
            out.append(Violation("UNKNOWN_SCENE",
                                 f"dialogue {dlg.dialogue_id} references missing scene {dlg.scene_id!r}",
                                 (dlg.dialogue_id, dlg.scene_id)))
        if not dlg.turns:
            out.append(Violation("EMPTY_DIALOGUE",
                                 f"dialogue {dlg.dialogue_id} has no turns",
                                 (dlg.dialogue_id,)))
        if scene is None:
            continue
        scene_ids = {obj.canonical_id for obj in scene.objects}
        for t, turn in enumerate(dlg.turns):
            seen_ref: set[int] = set()
            for ref in turn.belief.mref:
                if ref in seen_ref:
                    out.append(Violation("DUP_MREF",
                                         f"dialogue {dlg.dialogue_id} turn {t}: mref {ref} duplicated",
                                         (dlg.dialogue_id, t, ref)))
                seen_ref.add(ref)
                if ref not in scene_ids:
                    out.append(Violation("UNKNOWN_MREF",
                                         f"dialogue {dlg.dialogue_id} turn {t}: mref {ref} not in "
                                         f"scene {dlg.scene_id}",
                                         (dlg.dialogue_id, t, ref)))
            for ref in turn.system_mentions:
                if ref not in scene_ids:
                    out.append(Violation("UNKNOWN_MENTION",
                                         f"dialogue {dlg.dialogue_id} turn {t}: system mention {ref} "
                                         f"not in scene {dlg.scene_id}",
                                         (dlg.dialogue_id, t, ref)))
    return out


# --- strict JSON parsing helpers ---

def _expect_keys(obj: dict, required: tuple[str, ...], optional: tuple[str, ...], where: str) -> None:
    if not isinstance(obj, dict):
        raise CorpusError("BAD_SCHEMA", f"{where}: expected object, got {type(obj).__name__}")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise CorpusError("BAD_SCHEMA", f"{where}: unknown fields {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise CorpusError("BAD_SCHEMA", f"{where}: missing fields {sorted(missing)}")


def _as_int(value, where: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise CorpusError("BAD_SCHEMA", f"{where}: expected integer, got {value!r}")
    return value


def _as_str(value, where: str) -> str:
    if not isinstance(value, str):
        raise CorpusError("BAD_SCHEMA", f"{where}: expected string, got {value!r}")
    return value


def _read_json(path: Path):
    if not path.exists():
        raise CorpusError("MISSING_FILE", f"no such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorpusError("BAD_JSON", f"{path}: {exc}") from exc


def _parse_belief(obj, where: str) -> BeliefState:
    _expect_keys(obj, ("intent", "slots", "request_slots", "mref"), (), where)
    slots = {_as_str(k, where): _as_str(v, where) for k, v in obj["slots"].items()}
    return BeliefState(
        intent=_as_str(obj["intent"], where),
        slots=slots,
        request_slots=frozenset(_as_str(s, where) for s in obj["request_slots"]),
        mref=tuple(_as_int(r, where) for r in obj["mref"]),
    )


def _parse_action(obj, where: str) -> Action:
    _expect_keys(obj, ("intent", "slots", "request_slots"), (), where)
    slots = {_as_str(k, where): _as_str(v, where) for k, v in obj["slots"].items()}
    return Action(
        intent=_as_str(obj["intent"], where),
        slots=slots,
        request_slots=frozenset(_as_str(s, where) for s in obj["request_slots"]),
    )


def load_corpus(path: str | Path) -> Corpus:
    """Load and validate a corpus directory; raises CorpusError on the first violation."""
    root = Path(path)
    catalogue_raw = _read_json(root / "catalogue.json")
    if not isinstance(catalogue_raw, list):
        raise CorpusError("BAD_SCHEMA", "catalogue.json: expected an array")
    catalogue = []
    for entry in catalogue_raw:
        _expect_keys(entry, ("catalogue_id", "attributes"), (), "catalogue item")
        attrs = {}
        for name, spec in entry["attributes"].items():
            _expect_keys(spec, ("value", "visual"), (), f"attribute {name!r}")
            if not isinstance(spec["visual"], bool):
                raise CorpusError("BAD_SCHEMA", f"attribute {name!r}: visual must be boolean")
            attrs[_as_str(name, "attribute name")] = AttributeValue(
                value=_as_str(spec["value"], f"attribute {name!r}"), visual=spec["visual"])
        catalogue.append(CatalogueItem(_as_int(entry["catalogue_id"], "catalogue item"), attrs))

    scenes: dict[str, Scene] = {}
    scene_dir = root / "scenes"
    if not scene_dir.is_dir():
        raise CorpusError("MISSING_FILE", f"no such directory: {scene_dir}")
    for scene_path in sorted(scene_dir.glob("*.json")):
        raw = _read_json(scene_path)
        _expect_keys(raw, ("scene_id", "width", "height", "objects"), (), scene_path.name)
        objects = []
        for obj in raw["objects"]:
            _expect_keys(obj, ("canonical_id", "catalogue_id", "bbox"), (), f"{scene_path.name} object")
            bbox = obj["bbox"]
            if not (isinstance(bbox, list) and len(bbox) == 4):
                raise CorpusError("BAD_SCHEMA", f"{scene_path.name}: bbox must be [x,y,w,h]")
            objects.append(SceneObject(
                canonical_id=_as_int(obj["canonical_id"], scene_path.name),
                catalogue_id=_as_int(obj["catalogue_id"], scene_path.name),
                bbox=BoundingBox(*(_as_int(v, f"{scene_path.name} bbox") for v in bbox)),
            ))
        scene = Scene(
            scene_id=_as_str(raw["scene_id"], scene_path.name),
            width=_as_int(raw["width"], scene_path.name),
            height=_as_int(raw["height"], scene_path.name),
            objects=tuple(objects),
        )
        scenes[scene.scene_id] = scene

    dialogues_raw = _read_json(root / "dialogues.json")
    if not isinstance(dialogues_raw, list):
        raise CorpusError("BAD_SCHEMA", "dialogues.json: expected an array")
    dialogues = []
    for entry in dialogues_raw:
        _expect_keys(entry, ("dialogue_id", "scene_id", "turns"), (), "dialogue")
        did = _as_str(entry["dialogue_id"], "dialogue")
        turns = []
        for t, turn in enumerate(entry["turns"]):
            where = f"dialogue {did} turn {t}"
            _expect_keys(turn,
                         ("user_utterance", "system_utterance", "belief", "action", "system_mentions"),
                         ("disambiguation_label",), where)
            label = turn.get("disambiguation_label")
            if "disambiguation_label" in turn and not isinstance(label, bool):
                raise CorpusError("BAD_SCHEMA", f"{where}: disambiguation_label must be boolean")
            turns.append(DialogueTurn(
                user_utterance=_as_str(turn["user_utterance"], where),
                system_utterance=_as_str(turn["system_utterance"], where),
                belief=_parse_belief(turn["belief"], where),
                action=_parse_action(turn["action"], where),
                system_mentions=tuple(_as_int(m, where) for m in turn["system_mentions"]),
                disambiguation_label=label,
            ))
        dialogues.append(Dialogue(did, _as_str(entry["scene_id"], "dialogue"), tuple(turns)))

    corpus = Corpus(tuple(catalogue), scenes, tuple(dialogues))
    violations = validate(corpus)
    if violations:
        first = violations[0]
        raise CorpusError(first.code, first.message)
    return corpus


def _belief_json(b: BeliefState) -> dict:
    return {
        "intent": b.intent,
        "slots": dict(b.slots),
        "request_slots": sorted(b.request_slots),
        "mref": list(b.mref),
    }


def _action_json(a: Action) -> dict:
    return {
        "intent": a.intent,
        "slots": dict(a.slots),
        "request_slots": sorted(a.request_slots),
    }


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the three-part corpus layout; byte-deterministic for equal corpora."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "scenes").mkdir(exist_ok=True)

    catalogue = [
        {
            "catalogue_id": item.catalogue_id,
            "attributes": {
                name: {"value": attr.value, "visual": attr.visual}
                for name, attr in item.attributes.items()
            },
        }
        for item in corpus.catalogue
    ]
    (root / "catalogue.json").write_text(json.dumps(catalogue, indent=2) + "\n", encoding="utf-8")

    for scene_id in sorted(corpus.scenes):
        scene = corpus.scenes[scene_id]
        raw = {
            "scene_id": scene.scene_id,
            "width": scene.width,
            "height": scene.height,
            "objects": [
                {
                    "canonical_id": obj.canonical_id,
                    "catalogue_id": obj.catalogue_id,
                    "bbox": [obj.bbox.x, obj.bbox.y, obj.bbox.w, obj.bbox.h],
                }
                for obj in scene.objects
            ],
        }
        (root / "scenes" / f"{scene_id}.json").write_text(
            json.dumps(raw, indent=2) + "\n", encoding="utf-8")

    dialogues = []
    for dlg in corpus.dialogues:
        turns = []
        for turn in dlg.turns:
            raw_turn = {
                "user_utterance": turn.user_utterance,
                "system_utterance": turn.system_utterance,
                "belief": _belief_json(turn.belief),
                "action": _action_json(turn.action),
                "system_mentions": list(turn.system_mentions),
            }
            if turn.disambiguation_label is not None:
                raw_turn["disambiguation_label"] = turn.disambiguation_label
            turns.append(raw_turn)
        dialogues.append({"dialogue_id": dlg.dialogue_id, "scene_id": dlg.scene_id, "turns": turns})
    (root / "dialogues.json").write_text(json.dumps(dialogues, indent=2) + "\n", encoding="utf-8")


def split_by_scenes(corpus: Corpus, heldout_scene_ids: Iterable[str]) -> tuple[Corpus, Corpus]:
    """Partition dialogues by scene; both halves share the catalogue."""
    heldout = set(heldout_scene_ids)
    unknown = heldout - set(corpus.scenes)
    if unknown:
        raise CorpusError("UNKNOWN_SCENE", f"unknown scene ids: {sorted(unknown)}")
    train_scenes = {sid: s for sid, s in corpus.scenes.items() if sid not in heldout}
    held_scenes = {sid: s for sid, s in corpus.scenes.items() if sid in heldout}
    train_dlgs = tuple(d for d in corpus.dialogues if d.scene_id not in heldout)
    held_dlgs = tuple(d for d in corpus.dialogues if d.scene_id in heldout)
    return (Corpus(corpus.catalogue, train_scenes, train_dlgs),
            Corpus(corpus.catalogue, held_scenes, held_dlgs))
