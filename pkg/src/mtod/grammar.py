"""Surface grammar for belief states and system actions.

Canonical form (single spaces between tokens, empty groups kept)::

    INTENT [ slot = value ; ... ] ( req ; ... ) < objtok ; ... >

Actions use the same shape without the ``< ... >`` mention group. Slot pairs
and request slots are rendered in sorted order so that exact-match comparisons
ignore ordering; mention order is preserved. Parsing is total: structural
damage drops everything after the last well-formed group and sets
``malformed`` instead of raising, so bad generations degrade metrics rather
than crash evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import Action, BeliefState

STRUCTURAL = ("[", "]", "(", ")", "<", ">", "=", ";")
_STRUCTURAL_SET = frozenset(STRUCTURAL)


@dataclass(frozen=True)
class ParsedBelief:
    belief: BeliefState
    malformed: bool = False


@dataclass(frozen=True)
class ParsedAction:
    action: Action
    malformed: bool = False


def _render(intent: str, slots, request_slots, mentions) -> str:
    parts = [intent] if intent else []
    parts.append("[")
    for j, name in enumerate(sorted(slots)):
        if j:
            parts.append(";")
        parts += [name, "=", slots[name]]
    parts.append("]")
    parts.append("(")
    for j, req in enumerate(sorted(request_slots)):
        if j:
            parts.append(";")
        parts.append(req)
    parts.append(")")
    if mentions is not None:
        parts.append("<")
        for j, mention in enumerate(mentions):
            if j:
                parts.append(";")
            parts.append(mention)
        parts.append(">")
    return " ".join(parts)


def format_belief(belief: BeliefState) -> str:
    """Canonical text for a belief whose mref is already de-localized."""
    for mention in belief.mref:
        if not isinstance(mention, str):
            raise TypeError(f"belief mref must hold de-localized tokens, got {mention!r}")
    return _render(belief.intent, belief.slots, belief.request_slots, belief.mref)


def format_action(action: Action) -> str:
    return _render(action.intent, action.slots, action.request_slots, mentions=None)


def _scan_group(tokens: list[str], pos: int, opener: str, closer: str):
    """Consume ``opener ... closer``; returns (inner tokens | None, new pos)."""
    if pos >= len(tokens) or tokens[pos] != opener:
        return None, pos
    try:
        end = tokens.index(closer, pos + 1)
    except ValueError:
        return None, len(tokens)
    return tokens[pos + 1:end], end + 1


def _entries(segment: list[str]) -> list[list[str]]:
    if not segment:
        return []
    out: list[list[str]] = [[]]
    for tok in segment:
        if tok == ";":
            out.append([])
        else:
            out[-1].append(tok)
    return out


def _parse(text: str, with_mentions: bool):
    tokens = text.split()
    malformed = False
    pos = 0
    intent = ""
    if pos < len(tokens) and tokens[pos] not in _STRUCTURAL_SET:
        intent = tokens[pos]
        pos += 1
    else:
        malformed = True

    slots: dict[str, str] = {}
    request_slots: set[str] = set()
    mentions: list[str] = []

    segment, pos = _scan_group(tokens, pos, "[", "]")
    if segment is None:
        return intent, slots, request_slots, mentions, True
    for entry in _entries(segment):
        if entry.count("=") != 1 or any(t in _STRUCTURAL_SET and t != "=" for t in entry):
            malformed = True
            continue
        eq = entry.index("=")
        name, value = " ".join(entry[:eq]), " ".join(entry[eq + 1:])
        if not name or not value or name in slots:
            malformed = True
            continue
        slots[name] = value

    segment, pos = _scan_group(tokens, pos, "(", ")")
    if segment is None:
        return intent, slots, request_slots, mentions, True
    for entry in _entries(segment):
        if not entry or any(t in _STRUCTURAL_SET for t in entry):
            malformed = True
            continue
        request_slots.add(" ".join(entry))

    if with_mentions:
        segment, pos = _scan_group(tokens, pos, "<", ">")
        if segment is None:
            return intent, slots, request_slots, mentions, True
        for entry in _entries(segment):
            if not entry or any(t in _STRUCTURAL_SET for t in entry):
                malformed = True
                continue
            mention = " ".join(entry)
            if mention not in mentions:
                mentions.append(mention)

    if pos < len(tokens):  # trailing garbage past the final group
        malformed = True
    return intent, slots, request_slots, mentions, malformed


def parse_belief(text: str) -> ParsedBelief:
    intent, slots, reqs, mentions, malformed = _parse(text, with_mentions=True)
    belief = BeliefState(intent, slots, frozenset(reqs), tuple(mentions))
    return ParsedBelief(belief, malformed)


def parse_action(text: str) -> ParsedAction:
    intent, slots, reqs, _, malformed = _parse(text, with_mentions=False)
    return ParsedAction(Action(intent, slots, frozenset(reqs)), malformed)
