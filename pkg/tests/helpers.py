"""Hand-built corpus pieces for unit tests."""

from mtod.corpus import (Action, AttributeValue, BeliefState, BoundingBox, CatalogueItem, Corpus,
                         Dialogue, DialogueTurn, Scene, SceneObject)


def make_item(catalogue_id: int, color="yellow", type_="shirt", brand="acme", price="10"):
    return CatalogueItem(catalogue_id, {
        "color": AttributeValue(color, visual=True),
        "type": AttributeValue(type_, visual=True),
        "brand": AttributeValue(brand, visual=False),
        "price": AttributeValue(price, visual=False),
    })


def make_scene(objects, width=300, height=300, scene_id="S0"):
    return Scene(scene_id, width, height, tuple(objects))


def obj(canonical_id, catalogue_id, x, y, w, h):
    return SceneObject(canonical_id, catalogue_id, BoundingBox(x, y, w, h))


def make_turn(user="i need a yellow shirt", system="here it is .",
              belief=None, action=None, mentions=(), label=None):
    return DialogueTurn(
        user_utterance=user,
        system_utterance=system,
        belief=belief if belief is not None else BeliefState(),
        action=action if action is not None else Action(),
        system_mentions=tuple(mentions),
        disambiguation_label=label,
    )


def make_corpus(catalogue, scenes, dialogues):
    return Corpus(tuple(catalogue), dict(scenes), tuple(dialogues))


def single_scene_corpus():
    """One scene, two objects, one two-turn dialogue; fully valid."""
    catalogue = [make_item(278, color="yellow", type_="shirt"),
                 make_item(9, color="blue", type_="dress", price="47")]
    scene = make_scene([obj(0, 278, 10, 10, 40, 40), obj(1, 9, 210, 210, 60, 60)])
    turn0 = make_turn(
        user="i need a yellow shirt",
        system="the yellow shirt is 10 dollars .",
        belief=BeliefState("REQUEST:GET", {"color": "yellow", "type": "shirt"},
                           frozenset(), (0,)),
        action=Action("INFORM:GET", {"price": "10"}, frozenset()),
        mentions=(0,), label=False)
    turn1 = make_turn(
        user="how much is the blue dress ?",
        system="the blue dress costs 47 dollars .",
        belief=BeliefState("ASK:GET", {"color": "blue", "type": "dress"},
                           frozenset(("price",)), (1,)),
        action=Action("INFORM:GET", {"price": "47"}, frozenset()),
        mentions=(1,), label=None)
    dialogue = Dialogue("D0", "S0", (turn0, turn1))
    return make_corpus(catalogue, {"S0": scene}, [dialogue])
