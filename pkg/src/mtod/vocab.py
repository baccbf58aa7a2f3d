"""Vocabulary with protected atomic tokens over a byte-level BPE subword layer.

Id layout: specials, then catalogue tokens (by catalogue id), then the nine
region tokens, then intent labels, then the 256 byte units, then learned
merges. Atomic tokens (everything before the byte units) are recognized by
longest-match scanning *before* subword segmentation, so a catalogue or
structural token is always exactly one id no matter what text surrounds it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus
from .delocalize import ALL_REGIONS

SPECIALS = (
    "<SCENE>", "</SCENE>", "<USR>", "<SYS>", "<MM>", "</MM>",
    "<USB>", "</USB>", "<ACT>", "</ACT>", "<RES>", "</RES>",
    "<EOS>", "<PAD>", "<YES>", "<NO>",
    "[", "]", "(", ")", "<", ">", "=", ";",
)

_CHUNK_RE = re.compile(r"\S+|\s+")


class VocabError(ValueError):
    pass


@dataclass
class Vocab:
    """Immutable after construction; built via build_vocab or load_vocab."""

    items: tuple  # id -> str (atomic surface) or bytes (subword unit)
    partitions: tuple[str, ...]  # id -> special|catalogue|region|intent|subword
    merges: tuple[tuple[bytes, bytes], ...]
    _atomic_ids: dict = field(repr=False, default=None)
    _subword_ids: dict = field(repr=False, default=None)
    _ranks: dict = field(repr=False, default=None)
    _scanner: re.Pattern = field(repr=False, default=None)

    def __post_init__(self):
        atomics = {it: i for i, it in enumerate(self.items) if isinstance(it, str)}
        object.__setattr__(self, "_atomic_ids", atomics)
        object.__setattr__(self, "_subword_ids",
                           {it: i for i, it in enumerate(self.items) if isinstance(it, bytes)})
        object.__setattr__(self, "_ranks", {pair: r for r, pair in enumerate(self.merges)})
        ordered = sorted(atomics, key=lambda t: (-len(t), t))
        object.__setattr__(self, "_scanner",
                           re.compile("|".join(re.escape(t) for t in ordered)))

    def __len__(self) -> int:
        return len(self.items)

    @property
    def size(self) -> int:
        return len(self.items)

    def token_id(self, token: str) -> int:
        try:
            return self._atomic_ids[token]
        except KeyError:
            raise VocabError(f"not an atomic token: {token!r}") from None

    def surface(self, idx: int) -> str:
        item = self.items[idx]
        return item if isinstance(item, str) else item.decode("utf-8", errors="replace")

    @property
    def pad_id(self) -> int:
        return self.token_id("<PAD>")

    @property
    def eos_id(self) -> int:
        return self.token_id("<EOS>")

    def ids_of_partition(self, tag: str) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.partitions) if p == tag)


def build_vocab(corpus: Corpus, subword_merges: int) -> Vocab:
    """Deterministic: merge ties break toward the lexicographically smallest pair."""
    items: list = list(SPECIALS)
    partitions = ["special"] * len(SPECIALS)

    for item in sorted(corpus.catalogue, key=lambda c: c.catalogue_id):
        items.append(item.token)
        partitions.append("catalogue")
    for region in ALL_REGIONS:
        items.append(region.token)
        partitions.append("region")

    intents = set()
    for dialogue in corpus.dialogues:
        for turn in dialogue.turns:
            if turn.belief.intent:
                intents.add(turn.belief.intent)
            if turn.action.intent:
                intents.add(turn.action.intent)
    for intent in sorted(intents):
        items.append(intent)
        partitions.append("intent")

    forbidden = {surface.encode("utf-8") for surface in items}
    texts = []
    for dialogue in corpus.dialogues:
        for turn in dialogue.turns:
            texts.append(turn.user_utterance)
            texts.append(turn.system_utterance)
    merges = _train_merges(texts, subword_merges, forbidden)

    for b in range(256):
        items.append(bytes([b]))
        partitions.append("subword")
    for left, right in merges:
        items.append(left + right)
        partitions.append("subword")
    return Vocab(tuple(items), tuple(partitions), tuple(merges))


def _train_merges(texts: list[str], n_merges: int,
                  forbidden: set[bytes]) -> list[tuple[bytes, bytes]]:
    chunk_freq: dict[tuple[bytes, ...], int] = {}
    for text in texts:
        for chunk in _CHUNK_RE.findall(text):
            units = tuple(bytes([b]) for b in chunk.encode("utf-8"))
            if units:
                chunk_freq[units] = chunk_freq.get(units, 0) + 1

    merges: list[tuple[bytes, bytes]] = []
    for _ in range(n_merges):
        pair_counts: dict[tuple[bytes, bytes], int] = {}
        for units, freq in chunk_freq.items():
            for pair in zip(units, units[1:]):
                pair_counts[pair] = pair_counts.get(pair, 0) + freq
        candidates = [(pair, cnt) for pair, cnt in pair_counts.items()
                      if cnt >= 2 and pair[0] + pair[1] not in forbidden]
        if not candidates:
            break
        best_count = max(cnt for _, cnt in candidates)
        best = min(pair for pair, cnt in candidates if cnt == best_count)
        merges.append(best)
        chunk_freq = {_apply_merge(units, best): freq for units, freq in chunk_freq.items()}
    return merges


def _apply_merge(units: tuple[bytes, ...], pair: tuple[bytes, bytes]) -> tuple[bytes, ...]:
    out = []
    i = 0
    while i < len(units):
        if i + 1 < len(units) and units[i] == pair[0] and units[i + 1] == pair[1]:
            out.append(units[i] + units[i + 1])
            i += 2
        else:
            out.append(units[i])
            i += 1
    return tuple(out)


def _bpe(chunk: str, vocab: Vocab) -> list[int]:
    units = [bytes([b]) for b in chunk.encode("utf-8")]
    ranks = vocab._ranks
    while len(units) > 1:
        best_rank, best_pos = None, None
        for i, pair in enumerate(zip(units, units[1:])):
            rank = ranks.get(pair)
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank, best_pos = rank, i
        if best_rank is None:
            break
        merged = units[best_pos] + units[best_pos + 1]
        units = _apply_merge(tuple(units), (units[best_pos], units[best_pos + 1]))
        units = list(units)
        assert merged in vocab._subword_ids
    return [vocab._subword_ids[u] for u in units]


def encode(text: str, vocab: Vocab) -> list[int]:
    """Atomic tokens first (longest match), byte-level BPE for everything else."""
    ids: list[int] = []
    pos = 0
    for match in vocab._scanner.finditer(text):
        if match.start() > pos:
            ids.extend(_encode_plain(text[pos:match.start()], vocab))
        ids.append(vocab._atomic_ids[match.group()])
        pos = match.end()
    if pos < len(text):
        ids.extend(_encode_plain(text[pos:], vocab))
    return ids


def _encode_plain(text: str, vocab: Vocab) -> list[int]:
    ids: list[int] = []
    for chunk in _CHUNK_RE.findall(text):
        ids.extend(_bpe(chunk, vocab))
    return ids


def decode(ids, vocab: Vocab) -> str:
    """Consecutive subword units are glued into bytes before utf-8 decoding."""
    out: list[str] = []
    buf = bytearray()
    for idx in ids:
        item = vocab.items[idx]
        if isinstance(item, bytes):
            buf += item
        else:
            if buf:
                out.append(buf.decode("utf-8", errors="replace"))
                buf.clear()
            out.append(item)
    if buf:
        out.append(buf.decode("utf-8", errors="replace"))
    return "".join(out)


def vocab_payload(vocab: Vocab) -> dict:
    """JSON-safe form; subword bytes are carried as latin-1 strings."""
    records = []
    for item, tag in zip(vocab.items, vocab.partitions):
        surface = item if isinstance(item, str) else item.decode("latin-1")
        records.append({"token": surface, "partition": tag})
    return {
        "tokens": records,
        "merges": [[l.decode("latin-1"), r.decode("latin-1")] for l, r in vocab.merges],
    }


def vocab_from_payload(payload: dict) -> Vocab:
    items: list = []
    partitions: list[str] = []
    for record in payload["tokens"]:
        tag = record["partition"]
        items.append(record["token"].encode("latin-1") if tag == "subword" else record["token"])
        partitions.append(tag)
    merges = tuple((l.encode("latin-1"), r.encode("latin-1")) for l, r in payload["merges"])
    return Vocab(tuple(items), tuple(partitions), merges)


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(vocab_payload(vocab), ensure_ascii=True, indent=2) + "\n",
        encoding="utf-8")


def load_vocab(path: str | Path) -> Vocab:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise VocabError(f"vocab file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise VocabError(f"vocab file is not valid JSON: {exc}") from None
    return vocab_from_payload(payload)
