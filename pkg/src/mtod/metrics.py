"""Evaluation metrics: accuracies, micro-averaged F1 variants, and BLEU-4.

All scores keep their raw counts so reports can be re-aggregated or audited.
F1 follows the 0/0 = 0 convention and flags fully degenerate denominators.
BLEU-4 uses lowercased word/punctuation tokens, uniform quarter weights,
closest-reference brevity penalty, and replaces zero n-gram precisions with a
fixed epsilon inside the log average; the corpus score is the mean of
sentence scores unless the pooled variant is requested.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import BeliefState

BLEU_EPSILON = 1e-9
_BLEU_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class F1Score:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    degenerate: bool  # no predictions and no gold anywhere


@dataclass
class F1Accumulator:
    """Micro-averaged multiset F1 across turns."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def update(self, predicted: Iterable, gold: Iterable) -> None:
        p, g = Counter(predicted), Counter(gold)
        overlap = p & g
        self.tp += sum(overlap.values())
        self.fp += sum((p - g).values())
        self.fn += sum((g - p).values())

    def merge(self, other: "F1Accumulator") -> "F1Accumulator":
        return F1Accumulator(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def finalize(self) -> F1Score:
        precision = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        recall = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return F1Score(precision, recall, f1, self.tp, self.fp, self.fn,
                       degenerate=(self.tp + self.fp + self.fn == 0))


@dataclass(frozen=True)
class Ratio:
    value: float
    correct: int
    total: int


def _ratio(correct: int, total: int) -> Ratio:
    return Ratio(correct / total if total else 0.0, correct, total)


def joint_accuracy(predicted: Sequence[BeliefState], gold: Sequence[BeliefState]) -> Ratio:
    """Exact-match conjunction of intent, slots, request slots, and object set."""
    if len(predicted) != len(gold):
        raise MetricsError(f"misaligned turn lists: {len(predicted)} vs {len(gold)}")
    correct = sum(1 for p, g in zip(predicted, gold)
                  if p.intent == g.intent
                  and dict(p.slots) == dict(g.slots)
                  and frozenset(p.request_slots) == frozenset(g.request_slots)
                  and set(p.mref) == set(g.mref))
    return _ratio(correct, len(gold))


def disambiguation_accuracy(predicted: Sequence[bool], gold: Sequence[bool]) -> Ratio:
    if len(predicted) != len(gold):
        raise MetricsError(f"misaligned label lists: {len(predicted)} vs {len(gold)}")
    return _ratio(sum(1 for p, g in zip(predicted, gold) if p == g), len(gold))


def bleu_tokenize(text: str) -> list[str]:
    return _BLEU_TOKEN_RE.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - c), r))


def _ngram_counts(cand: Sequence[str], refs: Sequence[Sequence[str]], n: int) -> tuple[int, int]:
    cand_grams = _ngrams(cand, n)
    total = sum(cand_grams.values())
    if not total:
        return 0, 0
    max_ref: Counter = Counter()
    for ref in refs:
        max_ref |= _ngrams(ref, n)
    return sum((cand_grams & max_ref).values()), total


def _bleu_from_counts(counts: Sequence[tuple[int, int]], c: int, r: int) -> float:
    log_avg = 0.0
    for clipped, total in counts:
        p_n = clipped / total if total else 0.0
        log_avg += 0.25 * math.log(p_n if p_n > 0.0 else BLEU_EPSILON)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_avg)


def bleu4(candidate: str, references: Sequence[str]) -> float:
    cand = bleu_tokenize(candidate)
    refs = [bleu_tokenize(ref) for ref in references]
    if not cand or not refs:
        return 0.0
    counts = [_ngram_counts(cand, refs, n) for n in range(1, 5)]
    return _bleu_from_counts(counts, len(cand), _closest_ref_len(len(cand), [len(x) for x in refs]))


def corpus_bleu4(pairs: Sequence[tuple[str, Sequence[str]]],
                 pooled: bool = False) -> tuple[float, list[tuple[int, int]]]:
    """Score plus pooled per-n (clipped, total) counts for auditability."""
    pooled_counts = [[0, 0] for _ in range(4)]
    c_total, r_total = 0, 0
    sentence_scores = []
    for candidate, references in pairs:
        cand = bleu_tokenize(candidate)
        refs = [bleu_tokenize(ref) for ref in references]
        if not cand or not refs:
            sentence_scores.append(0.0)
            continue
        counts = [_ngram_counts(cand, refs, n) for n in range(1, 5)]
        for n in range(4):
            pooled_counts[n][0] += counts[n][0]
            pooled_counts[n][1] += counts[n][1]
        r = _closest_ref_len(len(cand), [len(x) for x in refs])
        c_total += len(cand)
        r_total += r
        sentence_scores.append(_bleu_from_counts(counts, len(cand), r))
    counts_out = [tuple(x) for x in pooled_counts]
    if pooled:
        if not c_total:
            return 0.0, counts_out
        return _bleu_from_counts(counts_out, c_total, r_total), counts_out
    if not sentence_scores:
        return 0.0, counts_out
    return sum(sentence_scores) / len(sentence_scores), counts_out


@dataclass(frozen=True)
class MetricReport:
    disambiguation_accuracy: Ratio
    intent_f1: F1Score
    slot_f1: F1Score
    request_slot_f1: F1Score
    object_f1: F1Score
    joint_accuracy: Ratio
    bleu4: float
    bleu_counts: tuple = ()
    bleu_mode: str = "sentence-mean"


def build_report(belief_pairs: Sequence[tuple[BeliefState, BeliefState]],
                 disambiguation_pairs: Sequence[tuple[bool, bool]],
                 response_pairs: Sequence[tuple[str, Sequence[str]]],
                 pooled_bleu: bool = False) -> MetricReport:
    """belief_pairs are (predicted, gold) in canonical-id space."""
    intent_acc, slot_acc = F1Accumulator(), F1Accumulator()
    req_acc, obj_acc = F1Accumulator(), F1Accumulator()
    for pred, gold in belief_pairs:
        intent_acc.update([pred.intent] if pred.intent else [],
                          [gold.intent] if gold.intent else [])
        slot_acc.update(dict(pred.slots).items(), dict(gold.slots).items())
        req_acc.update(pred.request_slots, gold.request_slots)
        obj_acc.update(set(pred.mref), set(gold.mref))
    bleu_value, bleu_counts = corpus_bleu4(response_pairs, pooled=pooled_bleu)
    return MetricReport(
        disambiguation_accuracy=disambiguation_accuracy(
            [p for p, _ in disambiguation_pairs], [g for _, g in disambiguation_pairs]),
        intent_f1=intent_acc.finalize(),
        slot_f1=slot_acc.finalize(),
        request_slot_f1=req_acc.finalize(),
        object_f1=obj_acc.finalize(),
        joint_accuracy=joint_accuracy([p for p, _ in belief_pairs],
                                      [g for _, g in belief_pairs]),
        bleu4=bleu_value,
        bleu_counts=tuple(bleu_counts),
        bleu_mode="pooled" if pooled_bleu else "sentence-mean",
    )


def report_to_dict(report: MetricReport) -> dict:
    def f1_dict(s: F1Score) -> dict:
        return {"precision": s.precision, "recall": s.recall, "f1": s.f1,
                "tp": s.tp, "fp": s.fp, "fn": s.fn, "degenerate": s.degenerate}

    def ratio_dict(r: Ratio) -> dict:
        return {"value": r.value, "correct": r.correct, "total": r.total}

    return {
        "disambiguation_accuracy": ratio_dict(report.disambiguation_accuracy),
        "intent_f1": f1_dict(report.intent_f1),
        "slot_f1": f1_dict(report.slot_f1),
        "request_slot_f1": f1_dict(report.request_slot_f1),
        "object_f1": f1_dict(report.object_f1),
        "joint_accuracy": ratio_dict(report.joint_accuracy),
        "bleu4": report.bleu4,
        "bleu_mode": report.bleu_mode,
        "bleu_ngram_counts": [list(c) for c in report.bleu_counts],
    }


def report_to_tsv(report: MetricReport) -> str:
    rows = [("metric", "value", "numerator", "denominator")]
    d = report.disambiguation_accuracy
    j = report.joint_accuracy
    rows.append(("disambiguation_accuracy", f"{d.value:.6f}", str(d.correct), str(d.total)))
    for name in ("intent_f1", "slot_f1", "request_slot_f1", "object_f1"):
        s: F1Score = getattr(report, name)
        rows.append((name, f"{s.f1:.6f}", str(2 * s.tp), str(2 * s.tp + s.fp + s.fn)))
    rows.append(("joint_accuracy", f"{j.value:.6f}", str(j.correct), str(j.total)))
    rows.append(("bleu4", f"{report.bleu4:.6f}", "", ""))
    return "\n".join("\t".join(row) for row in rows) + "\n"
