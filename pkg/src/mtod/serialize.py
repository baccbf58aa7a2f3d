"""Turn serialization: context window assembly and full training sequences.

A serialized turn is::

    <SCENE> v1 .. vk </SCENE>                        (2 ids per object)
    [<USR> u <SYS> s <MM> mentions </MM>]*           (kept previous turns)
    <USR> u_t
    <USB> belief </USB> <ACT> action </ACT> <RES> response </RES> <EOS>

Structural specials are placed as ids, never as text, so the scene prefix of a
k-object scene is exactly 2k+2 ids. Database results contribute nothing (the
slot exists in the layout but is always empty). When a sequence exceeds
``max_len``, whole oldest history turns are dropped first, then scene objects
are cut from the end of the scene description.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

from .corpus import Corpus, Dialogue
from .delocalize import delocalize_refs, scene_description
from .grammar import format_action, format_belief
from .vocab import Vocab, encode


class SerializeError(ValueError):
    pass


@dataclass(frozen=True)
class ContextSpec:
    """``include_scene=False`` drops all scene objects from the prefix (the
    span collapses to its two delimiters); used for ablation experiments."""

    window_n: int = 2
    max_len: int = 512
    truncation: str = "drop-oldest-then-scene"
    include_scene: bool = True

    def __post_init__(self):
        if self.window_n < 0:
            raise SerializeError("window_n must be >= 0")
        if self.max_len < 4:
            raise SerializeError("max_len too small for any sequence")


@dataclass(frozen=True)
class TrainingSequence:
    token_ids: tuple[int, ...]
    scene_prefix_len: int
    turn_ref: tuple[str, int]

    @property
    def total_len(self) -> int:
        return len(self.token_ids)


def _scene_pairs(corpus: Corpus, dialogue: Dialogue, vocab: Vocab) -> list[tuple[int, int]]:
    desc = scene_description(corpus.scenes[dialogue.scene_id], corpus.catalogue)
    return [(vocab.token_id(d.catalogue_token), vocab.token_id(d.region.token))
            for d in desc.objects]


def _mention_ids(corpus: Corpus, dialogue: Dialogue, canonical_ids, vocab: Vocab) -> list[int]:
    refs = delocalize_refs(canonical_ids, corpus.scenes[dialogue.scene_id], corpus.catalogue)
    out: list[int] = []
    for ref in refs:
        out.append(vocab.token_id(ref.catalogue_token))
        out.append(vocab.token_id(ref.region.token))
    return out


def _history_block(corpus: Corpus, dialogue: Dialogue, j: int, vocab: Vocab) -> list[int]:
    turn = dialogue.turns[j]
    block = [vocab.token_id("<USR>")]
    block += encode(turn.user_utterance, vocab)
    block.append(vocab.token_id("<SYS>"))
    block += encode(turn.system_utterance, vocab)
    block.append(vocab.token_id("<MM>"))
    block += _mention_ids(corpus, dialogue, turn.system_mentions, vocab)
    block.append(vocab.token_id("</MM>"))
    return block


def _assemble_context(corpus: Corpus, dialogue: Dialogue, t: int, spec: ContextSpec,
                      vocab: Vocab, budget: int) -> tuple[list[int], int]:
    """Return (ids, scene_prefix_len), trimming to the id budget."""
    if not 0 <= t < len(dialogue.turns):
        raise SerializeError(f"turn index {t} out of range for {dialogue.dialogue_id}")
    pairs = _scene_pairs(corpus, dialogue, vocab) if spec.include_scene else []
    blocks = [_history_block(corpus, dialogue, j, vocab)
              for j in range(max(0, t - spec.window_n), t)]
    current = [vocab.token_id("<USR>")] + encode(dialogue.turns[t].user_utterance, vocab)

    total = 2 + 2 * len(pairs) + sum(map(len, blocks)) + len(current)
    while total > budget and blocks:
        total -= len(blocks.pop(0))
    keep = len(pairs)
    while total > budget and keep > 0:
        keep -= 1
        total -= 2
    if total > budget:
        raise SerializeError(
            f"turn ({dialogue.dialogue_id}, {t}) cannot fit in max_len={spec.max_len}")

    ids = [vocab.token_id("<SCENE>")]
    for cat_id, region_id in pairs[:keep]:
        ids += (cat_id, region_id)
    ids.append(vocab.token_id("</SCENE>"))
    scene_prefix_len = len(ids)
    for block in blocks:
        ids += block
    ids += current
    return ids, scene_prefix_len


def serialize_context(corpus: Corpus, dialogue: Dialogue, t: int, spec: ContextSpec,
                      vocab: Vocab) -> list[int]:
    ids, _ = _assemble_context(corpus, dialogue, t, spec, vocab, spec.max_len)
    return ids


def _tail_ids(corpus: Corpus, dialogue: Dialogue, t: int, vocab: Vocab) -> list[int]:
    if not 0 <= t < len(dialogue.turns):
        raise SerializeError(f"turn index {t} out of range for {dialogue.dialogue_id}")
    turn = dialogue.turns[t]
    refs = delocalize_refs(turn.belief.mref, corpus.scenes[dialogue.scene_id], corpus.catalogue)
    belief_text = format_belief(replace(turn.belief, mref=tuple(r.rendered for r in refs)))
    action_text = format_action(turn.action)

    tail = [vocab.token_id("<USB>")]
    tail += encode(belief_text, vocab)
    tail.append(vocab.token_id("</USB>"))
    tail.append(vocab.token_id("<ACT>"))
    tail += encode(action_text, vocab)
    tail.append(vocab.token_id("</ACT>"))
    tail.append(vocab.token_id("<RES>"))
    tail += encode(turn.system_utterance, vocab)
    tail.append(vocab.token_id("</RES>"))
    tail.append(vocab.eos_id)
    return tail


def serialize_turn(corpus: Corpus, dialogue: Dialogue, t: int, spec: ContextSpec,
                   vocab: Vocab) -> TrainingSequence:
    tail = _tail_ids(corpus, dialogue, t, vocab)
    context, scene_prefix_len = _assemble_context(
        corpus, dialogue, t, spec, vocab, spec.max_len - len(tail))
    return TrainingSequence(tuple(context + tail), scene_prefix_len,
                            (dialogue.dialogue_id, t))


def serialize_disambiguation_turn(corpus: Corpus, dialogue: Dialogue, t: int,
                                  spec: ContextSpec, vocab: Vocab) -> TrainingSequence:
    """Variant for the binary disambiguation task: context then <YES>/<NO> <EOS>."""
    if not 0 <= t < len(dialogue.turns):
        raise SerializeError(f"turn index {t} out of range for {dialogue.dialogue_id}")
    label = dialogue.turns[t].disambiguation_label
    if label is None:
        raise SerializeError(
            f"turn ({dialogue.dialogue_id}, {t}) has no disambiguation label")
    tail = [vocab.token_id("<YES>" if label else "<NO>"), vocab.eos_id]
    context, scene_prefix_len = _assemble_context(
        corpus, dialogue, t, spec, vocab, spec.max_len - len(tail))
    return TrainingSequence(tuple(context + tail), scene_prefix_len,
                            (dialogue.dialogue_id, t))


def serialize_corpus(corpus: Corpus, spec: ContextSpec, vocab: Vocab,
                     variant: str = "full") -> list[TrainingSequence]:
    """All turns in corpus order; the disambiguation variant skips unlabeled turns."""
    if variant not in ("full", "disambiguation"):
        raise SerializeError(f"unknown variant {variant!r}")
    out = []
    for dialogue in corpus.dialogues:
        for t in range(len(dialogue.turns)):
            if variant == "disambiguation":
                if dialogue.turns[t].disambiguation_label is None:
                    continue
                out.append(serialize_disambiguation_turn(corpus, dialogue, t, spec, vocab))
            else:
                out.append(serialize_turn(corpus, dialogue, t, spec, vocab))
    return out


def write_dataset(sequences: Iterable[TrainingSequence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(json.dumps({
                "ids": list(seq.token_ids),
                "scene_prefix_len": seq.scene_prefix_len,
                "dialogue_id": seq.turn_ref[0],
                "turn": seq.turn_ref[1],
            }, separators=(",", ":")) + "\n")


def read_dataset(path: str | Path) -> list[TrainingSequence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SerializeError(f"{path}:{line_no}: bad JSON ({exc})") from None
            out.append(TrainingSequence(tuple(rec["ids"]), rec["scene_prefix_len"],
                                        (rec["dialogue_id"], rec["turn"])))
    return out
