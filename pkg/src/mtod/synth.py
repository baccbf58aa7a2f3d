"""Synthetic shopping-floor corpus with oracle belief/action annotations.

Generation is a pure function of (config, seed). Every turn's annotations are
consistent with its templated utterances, so an overfit model can reach exact
match on all tasks, while the scene stays load-bearing: the catalogue holds
two items per (color, type) combination for the first ``catalogue_size -
combos`` combinations, scenes contain exactly one member of each such pair,
and prices differ inside a pair — so picking the right catalogue token (or
price) requires reading the scene description, not just the utterance.
Ambiguous turns place one catalogue item twice, in adjacent scene-description
slots with two different grid regions; resolving both instances requires their
regions. Scenes put at most one object per region, keeping (catalogue token,
region) pairs unique and de-localization lossless.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus import (Action, AttributeValue, BeliefState, BoundingBox, CatalogueItem, Corpus,
                     Dialogue, DialogueTurn, Scene, SceneObject)
from .delocalize import ALL_REGIONS

REQUIRED_INTENTS = ("REQUEST:GET", "ASK:GET", "REQUEST:COMPARE",
                    "INFORM:GET", "INFORM:COMPARE", "INFORM:DISAMBIGUATE")

USER_REQUEST_TEMPLATES = (
    "i need a {color} {type}",
    "i am looking for a {color} {type}",
    "show me a {color} {type}",
    "can i get a {color} {type}",
)
USER_ASK_TEMPLATES = (
    "how much is the {color} {type} ?",
    "what is the price of the {color} {type} ?",
)
USER_COMPARE_TEMPLATES = (
    "can you compare the {c1} {t1} and the {c2} {t2} ?",
    "how do the {c1} {t1} and the {c2} {t2} compare ?",
)

# one fixed template per system intent: identical contexts must yield
# identical continuations or the corpus is not memorizable
SYS_DISAMBIGUATE = "i found a few {color} {type}s . which one do you mean ?"
SYS_INFORM_REQUEST = "great choice . the {color} {type} is {price} dollars ."
SYS_INFORM_ASK = "the {color} {type} costs {price} dollars ."
SYS_COMPARE = "the {c1} {t1} is {p1} dollars and the {c2} {t2} is {p2} dollars ."

SCENE_SIZES = (300, 360, 420)


class SynthError(ValueError):
    """Raised when a SynthConfig cannot be satisfied."""


@dataclass(frozen=True)
class SynthConfig:
    catalogue_size: int = 30
    colors: tuple[str, ...] = ("yellow", "red", "blue", "green", "pink")
    types: tuple[str, ...] = ("shirt", "jacket", "dress", "hat")
    brands: tuple[str, ...] = ("acme", "brio", "cozy", "dune")
    scenes_count: int = 40
    objects_per_scene: tuple[int, int] = (4, 8)
    dialogues_count: int = 200
    turns_per_dialogue: tuple[int, int] = (2, 4)
    intents: tuple[str, ...] = REQUIRED_INTENTS
    disambiguation_rate: float = 0.25

    @property
    def combos(self) -> int:
        return len(self.colors) * len(self.types)

    @property
    def paired_combos(self) -> int:
        """Combinations represented by two catalogue items."""
        return self.catalogue_size - self.combos


def _check_config(cfg: SynthConfig) -> None:
    missing = [i for i in REQUIRED_INTENTS if i not in cfg.intents]
    if missing:
        raise SynthError(f"intent inventory missing {missing}")
    lo, hi = cfg.objects_per_scene
    if not (4 <= lo <= hi):
        raise SynthError("objects_per_scene must satisfy 4 <= min <= max")
    if hi > 9:
        raise SynthError("objects_per_scene max exceeds the 9 grid regions")
    if not 0 < cfg.paired_combos <= cfg.combos:
        raise SynthError("catalogue_size must lie in (combos, 2*combos]")
    if cfg.paired_combos - 1 < hi - 2:
        raise SynthError("not enough paired (color, type) combinations for a scene: "
                         f"need {hi - 1}, have {cfg.paired_combos}")
    tlo, thi = cfg.turns_per_dialogue
    if not (1 <= tlo <= thi):
        raise SynthError("turns_per_dialogue must satisfy 1 <= min <= max")
    if cfg.scenes_count < 1 or cfg.dialogues_count < 1:
        raise SynthError("scenes_count and dialogues_count must be positive")
    if not (0.0 <= cfg.disambiguation_rate <= 1.0):
        raise SynthError("disambiguation_rate must be in [0, 1]")


def _build_catalogue(cfg: SynthConfig) -> tuple[CatalogueItem, ...]:
    items = []
    for i in range(cfg.catalogue_size):
        attrs = {
            "color": AttributeValue(cfg.colors[i % len(cfg.colors)], visual=True),
            "type": AttributeValue(cfg.types[(i // len(cfg.colors)) % len(cfg.types)], visual=True),
            "brand": AttributeValue(cfg.brands[i % len(cfg.brands)], visual=False),
            "price": AttributeValue(str(9 + (i * 7) % 90), visual=False),
        }
        items.append(CatalogueItem(i, attrs))
    return tuple(items)


def _combo(item: CatalogueItem) -> tuple[str, str]:
    return (item.attributes["color"].value, item.attributes["type"].value)


def _place_bbox(rng: random.Random, region, width: int, height: int) -> BoundingBox:
    x0, x1 = (region.col_index * width) // 3, ((region.col_index + 1) * width) // 3
    y0, y1 = (region.row_index * height) // 3, ((region.row_index + 1) * height) // 3
    w = 2 * rng.randint(10, 30)
    h = 2 * rng.randint(10, 30)
    cx = rng.randint(x0 + 31, x1 - 31)
    cy = rng.randint(y0 + 31, y1 - 31)
    return BoundingBox(cx - w // 2, cy - h // 2, w, h)


def _build_scenes(cfg: SynthConfig, rng: random.Random,
                  catalogue: tuple[CatalogueItem, ...]) -> dict[str, Scene]:
    """Each scene: one item placed twice (the ambiguous duo) plus singles that
    each come from a distinct paired combination, one member per pair."""
    scenes: dict[str, Scene] = {}
    region_cursor = 0
    for s in range(cfg.scenes_count):
        k = rng.randint(*cfg.objects_per_scene)
        duo = catalogue[rng.randrange(cfg.catalogue_size)]
        combo_pool = [i for i in range(cfg.paired_combos)
                      if _combo(catalogue[i]) != _combo(duo)]
        rng.shuffle(combo_pool)
        singles = []
        for combo_idx in combo_pool[:k - 2]:
            member = combo_idx + (cfg.combos if rng.random() < 0.5 else 0)
            singles.append(catalogue[member])
        # the duo occupies two adjacent slots so its doubled catalogue token
        # is visible as a local pattern in the scene description
        p = rng.randint(0, len(singles))
        chosen = singles[:p] + [duo, duo] + singles[p:]

        width = rng.choice(SCENE_SIZES)
        height = rng.choice(SCENE_SIZES)
        regions = [ALL_REGIONS[(region_cursor + j) % 9] for j in range(k)]
        region_cursor += k
        objects = tuple(
            SceneObject(canonical_id=j, catalogue_id=item.catalogue_id,
                        bbox=_place_bbox(rng, regions[j], width, height))
            for j, item in enumerate(chosen)
        )
        scene_id = f"S{s:03d}"
        scenes[scene_id] = Scene(scene_id, width, height, objects)
    return scenes


def _match_groups(scene: Scene, index) -> dict[tuple[str, str], list[SceneObject]]:
    groups: dict[tuple[str, str], list[SceneObject]] = {}
    for obj in sorted(scene.objects, key=lambda o: o.canonical_id):
        groups.setdefault(_combo(index[obj.catalogue_id]), []).append(obj)
    return groups


def _make_turn(rng: random.Random, scene: Scene, index, disambiguation_rate: float) -> DialogueTurn:
    groups = _match_groups(scene, index)
    duo_groups = sorted(key for key, objs in groups.items() if len(objs) > 1)
    single_groups = sorted(key for key, objs in groups.items() if len(objs) == 1)

    if duo_groups and rng.random() < disambiguation_rate:
        color, type_ = rng.choice(duo_groups)
        objs = groups[(color, type_)]
        return DialogueTurn(
            user_utterance=rng.choice(USER_REQUEST_TEMPLATES).format(color=color, type=type_),
            system_utterance=SYS_DISAMBIGUATE.format(color=color, type=type_),
            belief=BeliefState("REQUEST:GET", {"color": color, "type": type_},
                               frozenset(), tuple(o.canonical_id for o in objs)),
            action=Action("INFORM:DISAMBIGUATE", {}, frozenset()),
            system_mentions=tuple(o.canonical_id for o in objs),
            disambiguation_label=True,
        )

    kind = rng.choice(("request", "ask", "compare"))
    if kind == "compare" and len(single_groups) >= 2:
        g1, g2 = rng.sample(single_groups, 2)
        o1, o2 = groups[g1][0], groups[g2][0]
        if o2.canonical_id < o1.canonical_id:
            o1, o2, g1, g2 = o2, o1, g2, g1
        p1 = index[o1.catalogue_id].attributes["price"].value
        p2 = index[o2.catalogue_id].attributes["price"].value
        fill = dict(c1=g1[0], t1=g1[1], c2=g2[0], t2=g2[1])
        return DialogueTurn(
            user_utterance=rng.choice(USER_COMPARE_TEMPLATES).format(**fill),
            system_utterance=SYS_COMPARE.format(p1=p1, p2=p2, **fill),
            belief=BeliefState("REQUEST:COMPARE", {}, frozenset(),
                               (o1.canonical_id, o2.canonical_id)),
            action=Action("INFORM:COMPARE", {}, frozenset()),
            system_mentions=(o1.canonical_id, o2.canonical_id),
        )

    color, type_ = rng.choice(single_groups)
    obj = groups[(color, type_)][0]
    price = index[obj.catalogue_id].attributes["price"].value
    if kind == "ask":
        return DialogueTurn(
            user_utterance=rng.choice(USER_ASK_TEMPLATES).format(color=color, type=type_),
            system_utterance=SYS_INFORM_ASK.format(color=color, type=type_, price=price),
            belief=BeliefState("ASK:GET", {"color": color, "type": type_},
                               frozenset(("price",)), (obj.canonical_id,)),
            action=Action("INFORM:GET", {"price": price}, frozenset()),
            system_mentions=(obj.canonical_id,),
        )
    return DialogueTurn(
        user_utterance=rng.choice(USER_REQUEST_TEMPLATES).format(color=color, type=type_),
        system_utterance=SYS_INFORM_REQUEST.format(color=color, type=type_, price=price),
        belief=BeliefState("REQUEST:GET", {"color": color, "type": type_},
                           frozenset(), (obj.canonical_id,)),
        action=Action("INFORM:GET", {"price": price}, frozenset()),
        system_mentions=(obj.canonical_id,),
        disambiguation_label=False,
    )


def generate_synthetic(config: SynthConfig, seed: int) -> Corpus:
    """Deterministic corpus for a fixed (config, seed)."""
    _check_config(config)
    rng = random.Random(seed)
    catalogue = _build_catalogue(config)
    index = {item.catalogue_id: item for item in catalogue}
    scenes = _build_scenes(config, rng, catalogue)
    scene_ids = sorted(scenes)

    dialogues = []
    for d in range(config.dialogues_count):
        scene = scenes[scene_ids[d % len(scene_ids)]]
        n_turns = rng.randint(*config.turns_per_dialogue)
        turns = tuple(_make_turn(rng, scene, index, config.disambiguation_rate)
                      for _ in range(n_turns))
        dialogues.append(Dialogue(f"D{d:04d}", scene.scene_id, turns))
    return Corpus(catalogue, scenes, tuple(dialogues))
