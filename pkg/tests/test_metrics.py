import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtod.corpus import BeliefState
from mtod.metrics import (BLEU_EPSILON, F1Accumulator, MetricsError, Ratio, bleu4,
                          bleu_tokenize, build_report, corpus_bleu4, disambiguation_accuracy,
                          joint_accuracy, report_to_dict, report_to_tsv)


# --- independent BLEU-4 reference: same contract, different construction ----

def _ref_bleu(candidate, references):
    """Textbook BLEU-4 written with explicit loops and dict bookkeeping."""
    def toks(s):
        out, word = [], ""
        for ch in s.lower():
            if ch.isalnum() or ch == "_":
                word += ch
            else:
                if word:
                    out.append(word)
                    word = ""
                if not ch.isspace():
                    out.append(ch)
        if word:
            out.append(word)
        return out

    cand = toks(candidate)
    refs = [toks(r) for r in references]
    if not cand or not refs:
        return 0.0

    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = {}
        for i in range(len(cand) - n + 1):
            g = tuple(cand[i:i + n])
            cand_counts[g] = cand_counts.get(g, 0) + 1
        clipped = 0
        for g, cnt in cand_counts.items():
            best = 0
            for ref in refs:
                seen = 0
                for i in range(len(ref) - n + 1):
                    if tuple(ref[i:i + n]) == g:
                        seen += 1
                best = max(best, seen)
            clipped += min(cnt, best)
        total = max(len(cand) - n + 1, 0)
        p = clipped / total if total else 0.0
        log_sum += 0.25 * math.log(p if p > 0 else BLEU_EPSILON)

    c = len(cand)
    best_r = None
    for ref in refs:
        r = len(ref)
        if best_r is None or abs(r - c) < abs(best_r - c) or \
                (abs(r - c) == abs(best_r - c) and r < best_r):
            best_r = r
    bp = 1.0 if c >= best_r else math.exp(1.0 - best_r / c)
    return bp * math.exp(log_sum)


WORDS = ["the", "blue", "dress", "costs", "a", "lot", "cheap", "shirt", "price",
         "is", "what", "nice", ".", ",", "?", "47", "dollars"]


def _random_sentence(rng, lo=0, hi=14):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


class TestBleu:
    def test_identity_is_one(self):
        s = "the blue dress costs 47 dollars ."
        assert bleu4(s, [s]) == pytest.approx(1.0)

    def test_empty_candidate_is_zero(self):
        assert bleu4("", ["anything here"]) == 0.0
        assert bleu4("something", []) == 0.0

    def test_tokenizer_splits_punctuation(self):
        assert bleu_tokenize("It costs 47 dollars.") == \
            ["it", "costs", "47", "dollars", "."]

    def test_no_overlap_is_epsilon_small(self):
        score = bleu4("aa bb cc dd", ["xx yy zz ww"])
        assert 0.0 < score < 1e-6

    def test_brevity_penalty(self):
        # perfect 4-token prefix of an 8-token reference: BP = exp(1 - 8/4)
        ref = "a b c d e f g h"
        score = bleu4("a b c d", [ref])
        p = (4 / 4) * (3 / 3) * (2 / 2) * (1 / 1)
        assert score == pytest.approx(math.exp(1 - 8 / 4) * p ** 0.25)

    def test_reference_order_invariance(self):
        c = "the blue dress"
        refs = ["the red dress", "the blue dress costs", "a dress"]
        assert bleu4(c, refs) == pytest.approx(bleu4(c, list(reversed(refs))))

    def test_matches_independent_reference(self):
        rng = random.Random(42)
        for _ in range(300):
            cand = _random_sentence(rng)
            refs = [_random_sentence(rng, lo=1) for _ in range(rng.randint(1, 3))]
            assert bleu4(cand, refs) == pytest.approx(_ref_bleu(cand, refs), abs=1e-9)

    def test_corpus_mean_vs_pooled(self):
        rng = random.Random(7)
        pairs = [(_random_sentence(rng, lo=1), [_random_sentence(rng, lo=1)])
                 for _ in range(50)]
        mean_score, counts = corpus_bleu4(pairs)
        expect = sum(bleu4(c, r) for c, r in pairs) / len(pairs)
        assert mean_score == pytest.approx(expect, abs=1e-12)
        pooled_score, counts2 = corpus_bleu4(pairs, pooled=True)
        assert counts == counts2  # pooled counts reported either way
        assert all(0 <= clip <= tot for clip, tot in counts)

    def test_corpus_empty(self):
        assert corpus_bleu4([]) == (0.0, [(0, 0)] * 4)


class TestF1:
    def test_worked_example(self):
        acc = F1Accumulator()
        acc.update(["a", "b"], ["b", "c"])  # tp=1 fp=1 fn=1
        s = acc.finalize()
        assert (s.precision, s.recall, s.f1) == (0.5, 0.5, 0.5)
        assert (s.tp, s.fp, s.fn) == (1, 1, 1)
        assert not s.degenerate

    def test_multiset_semantics(self):
        acc = F1Accumulator()
        acc.update(["a", "a", "b"], ["a"])  # tp=1, fp=2
        s = acc.finalize()
        assert (s.tp, s.fp, s.fn) == (1, 2, 0)

    def test_degenerate_all_empty(self):
        acc = F1Accumulator()
        acc.update([], [])
        s = acc.finalize()
        assert s.f1 == 0.0 and s.degenerate

    def test_zero_precision_recall(self):
        acc = F1Accumulator()
        acc.update(["x"], ["y"])
        s = acc.finalize()
        assert s.f1 == 0.0 and not s.degenerate

    def test_merge_equals_sequential(self):
        rng = random.Random(3)
        a, b, c = F1Accumulator(), F1Accumulator(), F1Accumulator()
        for _ in range(200):
            pred = [rng.choice("abcd") for _ in range(rng.randint(0, 4))]
            gold = [rng.choice("abcd") for _ in range(rng.randint(0, 4))]
            c.update(pred, gold)
            (a if rng.random() < 0.5 else b).update(pred, gold)
        merged = a.merge(b)
        assert (merged.tp, merged.fp, merged.fn) == (c.tp, c.fp, c.fn)

    @given(st.lists(st.tuples(st.lists(st.integers(0, 5), max_size=5),
                              st.lists(st.integers(0, 5), max_size=5)), max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_against_brute_force(self, turns):
        acc = F1Accumulator()
        tp = fp = fn = 0
        for pred, gold in turns:
            acc.update(pred, gold)
            p, g = Counter(pred), Counter(gold)
            keys = set(p) | set(g)
            tp += sum(min(p[k], g[k]) for k in keys)
            fp += sum(max(p[k] - g[k], 0) for k in keys)
            fn += sum(max(g[k] - p[k], 0) for k in keys)
        s = acc.finalize()
        assert (s.tp, s.fp, s.fn) == (tp, fp, fn)
        if tp + fp and tp + fn:
            expect = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
            assert s.f1 == pytest.approx(expect)


class TestJointAccuracy:
    G = BeliefState("A:B", {"x": "1"}, frozenset(("p",)), ("m1", "m2"))

    def test_exact_match_counts(self):
        pred = [self.G, BeliefState("A:B", {"x": "2"}, frozenset(("p",)), ("m1", "m2"))]
        out = joint_accuracy(pred, [self.G, self.G])
        assert out == Ratio(0.5, 1, 2)

    def test_mref_compared_as_set(self):
        shuffled = BeliefState("A:B", {"x": "1"}, frozenset(("p",)), ("m2", "m1"))
        assert joint_accuracy([shuffled], [self.G]).value == 1.0

    def test_any_component_mismatch_fails(self):
        for variant in (
            BeliefState("A:C", {"x": "1"}, frozenset(("p",)), ("m1", "m2")),
            BeliefState("A:B", {}, frozenset(("p",)), ("m1", "m2")),
            BeliefState("A:B", {"x": "1"}, frozenset(), ("m1", "m2")),
            BeliefState("A:B", {"x": "1"}, frozenset(("p",)), ("m1",)),
        ):
            assert joint_accuracy([variant], [self.G]).value == 0.0

    def test_misaligned_lists_raise(self):
        with pytest.raises(MetricsError):
            joint_accuracy([self.G], [])

    def test_empty_is_zero_total(self):
        assert joint_accuracy([], []) == Ratio(0.0, 0, 0)


class TestDisambiguationAccuracy:
    def test_three_of_four(self):
        out = disambiguation_accuracy([True, False, True, True],
                                      [True, False, False, True])
        assert out == Ratio(0.75, 3, 4)

    def test_misaligned(self):
        with pytest.raises(MetricsError):
            disambiguation_accuracy([True], [])


class TestReport:
    def _pairs(self):
        g1 = BeliefState("A:B", {"x": "1"}, frozenset(("p",)), ("m1",))
        g2 = BeliefState("C:D", {}, frozenset(), ("m2", "m3"))
        p1 = g1
        p2 = BeliefState("C:D", {}, frozenset(), ("m2",))
        return [(p1, g1), (p2, g2)]

    def test_build_report_fields(self):
        sent = "the blue dress costs 47 dollars ."
        report = build_report(self._pairs(), [(True, True)], [(sent, [sent])])
        assert report.joint_accuracy == Ratio(0.5, 1, 2)
        assert report.intent_f1.f1 == 1.0
        assert report.object_f1.tp == 2 and report.object_f1.fn == 1
        assert report.disambiguation_accuracy.value == 1.0
        assert report.bleu4 == pytest.approx(1.0)
        assert report.bleu_mode == "sentence-mean"

    def test_empty_intent_contributes_nothing(self):
        pairs = [(BeliefState(), BeliefState())]
        report = build_report(pairs, [], [])
        assert report.intent_f1.degenerate

    def test_report_serializations(self):
        report = build_report(self._pairs(), [(True, False)], [("a b", ["a c"])])
        d = report_to_dict(report)
        assert d["joint_accuracy"]["correct"] == 1
        assert d["disambiguation_accuracy"]["value"] == 0.0
        assert "bleu4" in d and "slot_f1" in d
        tsv = report_to_tsv(report)
        lines = [ln.split("\t") for ln in tsv.strip().splitlines()]
        assert lines[0] == ["metric", "value", "numerator", "denominator"]
        names = {row[0] for row in lines[1:]}
        assert {"joint_accuracy", "intent_f1", "slot_f1", "request_slot_f1",
                "object_f1", "bleu4", "disambiguation_accuracy"} <= names
        # micro-F1 rows expose 2tp / (2tp + fp + fn)
        for row in lines[1:]:
            if row[0] == "object_f1":
                s = report.object_f1
                assert row[2] == str(2 * s.tp) and row[3] == str(2 * s.tp + s.fp + s.fn)
