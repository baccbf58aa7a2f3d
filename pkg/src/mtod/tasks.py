"""Benchmark orchestration: the generation cascade and per-task predictions.

Each turn runs one KV-cache session: the serialized context is fed once, then
belief, action, and response are generated in order, every generated token
staying in the left context for the next stage. Oracle modes feed gold belief
and/or action text instead of generating it. Disambiguation is either the
END_TO_END rule (predicted action intent == INFORM:DISAMBIGUATE) or a
TASK_SPECIFIC model queried with a restricted <YES>/<NO> argmax right after
the context. Per-turn failures are recorded in the prediction table, never
raised out of the benchmark loop.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .corpus import Action, BeliefState, Corpus, Dialogue
from .delocalize import REGION_BY_TOKEN, DelocalizedObject, delocalize_refs, relocalize
from .grammar import format_action, format_belief, parse_action, parse_belief
from .metrics import MetricReport, build_report
from .model import GenerationSession, TransformerLM
from .serialize import ContextSpec, serialize_context
from .vocab import Vocab, decode, encode

TASK_SPECIFIC = "TASK_SPECIFIC"
END_TO_END = "END_TO_END"
DISAMBIGUATE_INTENT = "INFORM:DISAMBIGUATE"

_MENTION_RE = re.compile(r"^(INV_\d+)(@[A-Z]+:[A-Z]+)$")


class TasksError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskMode:
    disambiguation: str = END_TO_END
    oracle_belief: bool = False
    oracle_action: bool = False
    self_conditioned: bool = False
    pooled_bleu: bool = False
    max_new: int = 128

    def __post_init__(self):
        if self.disambiguation not in (TASK_SPECIFIC, END_TO_END):
            raise TasksError(f"unknown disambiguation mode {self.disambiguation!r}")
        if self.max_new < 1:
            raise TasksError("max_new must be >= 1")


@dataclass(frozen=True)
class TurnFlags:
    belief_malformed: bool = False
    action_malformed: bool = False
    truncated: bool = False
    dropped_mrefs: int = 0
    error: str | None = None


@dataclass(frozen=True)
class TurnPrediction:
    dialogue_id: str
    turn: int
    belief: BeliefState  # canonical-id space
    action: Action
    response: str
    disambiguation: bool | None
    flags: TurnFlags


def resolve_mentions(tokens: Sequence[str], scene, catalogue) -> tuple[tuple[int, ...], int]:
    """(canonical ids deduped in order, dropped count); every token is one or the other."""
    resolved: list[int] = []
    dropped = 0
    kept = 0
    for token in tokens:
        match = _MENTION_RE.match(token)
        region = REGION_BY_TOKEN.get(match.group(2)) if match else None
        if region is None:
            dropped += 1
            continue
        cid = relocalize(DelocalizedObject(match.group(1), region), scene, catalogue)
        if cid is None:
            dropped += 1
            continue
        kept += 1
        if cid not in resolved:
            resolved.append(cid)
    assert kept + dropped == len(tokens)
    return tuple(resolved), dropped


def _belief_text(belief: BeliefState, scene, catalogue) -> str:
    refs = delocalize_refs(belief.mref, scene, catalogue)
    return format_belief(replace(belief, mref=tuple(r.rendered for r in refs)))


def _segment(session: GenerationSession, vocab: Vocab, stop_token: str,
             max_new: int) -> tuple[str, bool]:
    """Generate until stop_token; returns (decoded body, truncated)."""
    stop_id = vocab.token_id(stop_token)
    out = session.generate(stop_id, max_new)
    truncated = not out or out[-1] != stop_id
    if truncated and session.remaining > 0:
        session.feed([stop_id])  # keep later prompt stages well-formed
    body = out[:-1] if out and out[-1] == stop_id else out
    return decode(body, vocab), truncated


def _run_turn(model: TransformerLM, corpus: Corpus, dialogue: Dialogue, t: int,
              spec: ContextSpec, vocab: Vocab, mode: TaskMode) -> TurnPrediction:
    scene = corpus.scenes[dialogue.scene_id]
    gold = dialogue.turns[t]
    session = GenerationSession(model)
    session.feed(serialize_context(corpus, dialogue, t, spec, vocab))

    truncated = False
    session.feed([vocab.token_id("<USB>")])
    if mode.oracle_belief:
        session.feed(encode(_belief_text(gold.belief, scene, corpus.catalogue), vocab))
        session.feed([vocab.token_id("</USB>")])
        belief, belief_malformed, dropped = gold.belief, False, 0
    else:
        text, seg_trunc = _segment(session, vocab, "</USB>", mode.max_new)
        parsed = parse_belief(text)
        mref, dropped = resolve_mentions(parsed.belief.mref, scene, corpus.catalogue)
        belief = replace(parsed.belief, mref=mref)
        belief_malformed = parsed.malformed
        truncated |= seg_trunc

    session.feed([vocab.token_id("<ACT>")])
    if mode.oracle_action:
        session.feed(encode(format_action(gold.action), vocab))
        session.feed([vocab.token_id("</ACT>")])
        action, action_malformed = gold.action, False
    else:
        text, seg_trunc = _segment(session, vocab, "</ACT>", mode.max_new)
        parsed_action = parse_action(text)
        action, action_malformed = parsed_action.action, parsed_action.malformed
        truncated |= seg_trunc

    session.feed([vocab.token_id("<RES>")])
    response, seg_trunc = _segment(session, vocab, "</RES>", mode.max_new)
    truncated |= seg_trunc

    return TurnPrediction(
        dialogue.dialogue_id, t, belief, action, response, None,
        TurnFlags(belief_malformed, action_malformed, truncated, dropped))


def _restricted_yes_no(model: TransformerLM, corpus: Corpus, dialogue: Dialogue,
                       t: int, spec: ContextSpec, vocab: Vocab) -> bool:
    session = GenerationSession(model)
    session.feed(serialize_context(corpus, dialogue, t, spec, vocab))
    yes, no = vocab.token_id("<YES>"), vocab.token_id("<NO>")
    l_yes, l_no = float(session.last_logits[yes]), float(session.last_logits[no])
    if l_yes == l_no:
        return yes < no  # argmax tie falls to the lower id
    return l_yes > l_no


def predict_belief(model, corpus, dialogue, t, spec, vocab,
                   max_new: int = 128) -> tuple[BeliefState, TurnFlags]:
    pred = _run_turn(model, corpus, dialogue, t, spec, vocab, TaskMode(max_new=max_new))
    return pred.belief, pred.flags


def predict_action(model, corpus, dialogue, t, spec, vocab, belief: BeliefState,
                   max_new: int = 128) -> tuple[Action, TurnFlags]:
    """belief (canonical space, predicted or gold) is rendered into the prompt."""
    scene = corpus.scenes[dialogue.scene_id]
    session = GenerationSession(model)
    session.feed(serialize_context(corpus, dialogue, t, spec, vocab))
    session.feed([vocab.token_id("<USB>")])
    session.feed(encode(_belief_text(belief, scene, corpus.catalogue), vocab))
    session.feed([vocab.token_id("</USB>"), vocab.token_id("<ACT>")])
    text, truncated = _segment(session, vocab, "</ACT>", max_new)
    parsed = parse_action(text)
    return parsed.action, TurnFlags(action_malformed=parsed.malformed, truncated=truncated)


def predict_response(model, corpus, dialogue, t, spec, vocab, belief: BeliefState,
                     action: Action, max_new: int = 128) -> tuple[str, TurnFlags]:
    scene = corpus.scenes[dialogue.scene_id]
    session = GenerationSession(model)
    session.feed(serialize_context(corpus, dialogue, t, spec, vocab))
    session.feed([vocab.token_id("<USB>")])
    session.feed(encode(_belief_text(belief, scene, corpus.catalogue), vocab))
    session.feed([vocab.token_id("</USB>"), vocab.token_id("<ACT>")])
    session.feed(encode(format_action(action), vocab))
    session.feed([vocab.token_id("</ACT>"), vocab.token_id("<RES>")])
    response, truncated = _segment(session, vocab, "</RES>", max_new)
    return response, TurnFlags(truncated=truncated)


def predict_disambiguation(model, corpus, dialogue, t, spec, vocab,
                           mode: str = TASK_SPECIFIC, max_new: int = 128) -> bool:
    if mode == TASK_SPECIFIC:
        return _restricted_yes_no(model, corpus, dialogue, t, spec, vocab)
    if mode == END_TO_END:
        pred = _run_turn(model, corpus, dialogue, t, spec, vocab, TaskMode(max_new=max_new))
        return pred.action.intent == DISAMBIGUATE_INTENT
    raise TasksError(f"unknown disambiguation mode {mode!r}")


def run_benchmark(model: TransformerLM, corpus: Corpus, spec: ContextSpec, vocab: Vocab,
                  mode: TaskMode = TaskMode(), disambiguation_model: TransformerLM | None = None,
                  ) -> tuple[list[TurnPrediction], MetricReport]:
    """Per-turn cascade over every dialogue turn, conditioning on gold history
    (or on the model's own past responses when mode.self_conditioned)."""
    if mode.disambiguation == TASK_SPECIFIC and disambiguation_model is None:
        raise TasksError("TASK_SPECIFIC disambiguation requires its trained model variant")
    model.eval()
    if disambiguation_model is not None:
        disambiguation_model.eval()

    records: list[TurnPrediction] = []
    for dialogue in sorted(corpus.dialogues, key=lambda d: d.dialogue_id):
        shadow_turns = list(dialogue.turns)
        for t in range(len(dialogue.turns)):
            source = (replace(dialogue, turns=tuple(shadow_turns))
                      if mode.self_conditioned else dialogue)
            try:
                pred = _run_turn(model, corpus, source, t, spec, vocab, mode)
            except Exception as exc:  # aggregate, never turn-fatal
                pred = TurnPrediction(dialogue.dialogue_id, t, BeliefState(), Action(),
                                      "", None, TurnFlags(error=f"{type(exc).__name__}: {exc}"))
            label = dialogue.turns[t].disambiguation_label
            if label is not None and pred.flags.error is None:
                if mode.disambiguation == END_TO_END:
                    verdict = pred.action.intent == DISAMBIGUATE_INTENT
                else:
                    verdict = _restricted_yes_no(disambiguation_model, corpus, source,
                                                 t, spec, vocab)
                pred = replace(pred, disambiguation=verdict)
            if mode.self_conditioned:
                shadow_turns[t] = replace(dialogue.turns[t],
                                          system_utterance=pred.response,
                                          system_mentions=pred.belief.mref)
            records.append(pred)
    return records, evaluate_predictions(records, corpus, pooled_bleu=mode.pooled_bleu)


def evaluate_predictions(records: Sequence[TurnPrediction], corpus: Corpus,
                         pooled_bleu: bool = False) -> MetricReport:
    gold_turns = {(d.dialogue_id, t): d.turns[t]
                  for d in corpus.dialogues for t in range(len(d.turns))}
    belief_pairs, disamb_pairs, response_pairs = [], [], []
    for rec in sorted(records, key=lambda r: (r.dialogue_id, r.turn)):
        gold = gold_turns.get((rec.dialogue_id, rec.turn))
        if gold is None:
            raise TasksError(f"prediction for unknown turn ({rec.dialogue_id}, {rec.turn})")
        belief_pairs.append((rec.belief, gold.belief))
        response_pairs.append((rec.response, [gold.system_utterance]))
        if gold.disambiguation_label is not None:
            if rec.disambiguation is None:  # errored turn: count as wrong
                disamb_pairs.append((not gold.disambiguation_label, gold.disambiguation_label))
            else:
                disamb_pairs.append((rec.disambiguation, gold.disambiguation_label))
    return build_report(belief_pairs, disamb_pairs, response_pairs, pooled_bleu=pooled_bleu)


def prediction_to_dict(pred: TurnPrediction) -> dict:
    return {
        "dialogue_id": pred.dialogue_id,
        "turn": pred.turn,
        "belief": {
            "intent": pred.belief.intent,
            "slots": dict(sorted(pred.belief.slots.items())),
            "request_slots": sorted(pred.belief.request_slots),
            "mref": list(pred.belief.mref),
        },
        "action": {
            "intent": pred.action.intent,
            "slots": dict(sorted(pred.action.slots.items())),
            "request_slots": sorted(pred.action.request_slots),
        },
        "response": pred.response,
        "disambiguation": pred.disambiguation,
        "flags": {
            "belief_malformed": pred.flags.belief_malformed,
            "action_malformed": pred.flags.action_malformed,
            "truncated": pred.flags.truncated,
            "dropped_mrefs": pred.flags.dropped_mrefs,
            "error": pred.flags.error,
        },
    }


def prediction_from_dict(rec: dict) -> TurnPrediction:
    belief = BeliefState(rec["belief"]["intent"], dict(rec["belief"]["slots"]),
                         frozenset(rec["belief"]["request_slots"]),
                         tuple(rec["belief"]["mref"]))
    action = Action(rec["action"]["intent"], dict(rec["action"]["slots"]),
                    frozenset(rec["action"]["request_slots"]))
    flags = TurnFlags(**rec["flags"])
    return TurnPrediction(rec["dialogue_id"], rec["turn"], belief, action,
                          rec["response"], rec["disambiguation"], flags)


def write_predictions(records: Sequence[TurnPrediction], path: str | Path) -> None:
    ordered = sorted(records, key=lambda r: (r.dialogue_id, r.turn))
    with open(path, "w", encoding="utf-8") as fh:
        for rec in ordered:
            fh.write(json.dumps(prediction_to_dict(rec), sort_keys=True,
                                separators=(",", ":")) + "\n")


def read_predictions(path: str | Path) -> list[TurnPrediction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(prediction_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TasksError(f"{path}:{line_no}: bad prediction record ({exc})") from None
    return out
