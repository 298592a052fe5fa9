"""Test sets and metrics: intent accuracy, exact-span slot F1 and grammar coverage."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .frames import DETERMINISTIC, SemanticFrame
from .text import tokenize

__all__ = ["EvalExample", "EvalReport", "parse_test_lines", "slot_set", "slot_prf", "evaluate"]


@dataclass(frozen=True)
class EvalExample:
    text: str
    gold: SemanticFrame
    line: int | None = None


def parse_test_lines(lines: Iterable[str]) -> tuple[list[EvalExample], list[tuple[int, str]]]:
    """Parse a test file; returns the examples plus ``(line number, error)`` for malformed lines.

    Each line is either ``<intent> <utterance> TAB <frame json>`` (what ``sample``
    prints) or a JSON object with ``text`` and ``frame`` keys. Blank lines and
    ``#`` comments are skipped.
    """
    examples, errors = [], []
    for no, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            if line.lstrip().startswith("{"):
                obj = json.loads(line)
                text, frame = obj["text"], SemanticFrame.from_dict(obj["frame"])
            else:
                left, sep, right = line.partition("\t")
                if not sep:
                    raise ValueError("expected a tab between the utterance and the frame")
                frame = SemanticFrame.from_dict(json.loads(right))
                head, _, rest = left.strip().partition(" ")
                if head != frame.intent:
                    raise ValueError(f"line starts with {head!r} but the frame intent is {frame.intent!r}")
                text = rest
            if not tokenize(text):
                raise ValueError("empty utterance")
        except (ValueError, KeyError, TypeError) as e:
            errors.append((no, str(e)))
            continue
        examples.append(EvalExample(text, frame, no))
    return examples, errors


def slot_set(frame: SemanticFrame | None) -> set[tuple]:
    """Slot fills keyed by exact span when known, by value otherwise."""
    if frame is None:
        return set()
    return {(k, v.span) if v.span is not None else (k, v.value) for k, v in frame.slots.items()}


def slot_prf(pairs: Iterable[tuple[SemanticFrame | None, SemanticFrame | None]]) -> tuple[float, float, float]:
    tp = n_pred = n_gold = 0
    for gold, pred in pairs:
        g, p = slot_set(gold), slot_set(pred)
        # compare by value where either side has no span
        if gold is not None and pred is not None and any(v.span is None for v in [*gold.slots.values(), *pred.slots.values()]):
            g = {(k, v.value) for k, v in gold.slots.items()}
            p = {(k, v.value) for k, v in pred.slots.items()}
        tp += len(g & p)
        n_pred += len(p)
        n_gold += len(g)
    prec = tp / n_pred if n_pred else 1.0
    rec = tp / n_gold if n_gold else 1.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


@dataclass
class EvalReport:
    n: int
    intent_accuracy: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    coverage: float
    errors: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "intent_accuracy": self.intent_accuracy,
            "slot_precision": self.slot_precision,
            "slot_recall": self.slot_recall,
            "slot_f1": self.slot_f1,
            "deterministic_coverage": self.coverage,
            "malformed_lines": len(self.errors),
        }

    def format(self) -> str:
        rows = [
            ("examples", f"{self.n}"),
            ("intent accuracy", f"{self.intent_accuracy:.4f}"),
            ("slot precision", f"{self.slot_precision:.4f}"),
            ("slot recall", f"{self.slot_recall:.4f}"),
            ("slot F1", f"{self.slot_f1:.4f}"),
            ("grammar coverage", f"{self.coverage:.4f}"),
        ]
        if self.errors:
            rows.append(("malformed lines", f"{len(self.errors)}"))
        return "\n".join(f"{k:<18}{v}" for k, v in rows)


def evaluate(understand_fn, examples: Sequence[EvalExample]) -> EvalReport:
    """Score ``understand_fn(text) -> NLUResult`` on ``examples``."""
    if not examples:
        raise ValueError("no examples to evaluate")
    correct = covered = 0
    pairs = []
    for ex in examples:
        res = understand_fn(ex.text)
        correct += res.intent == ex.gold.intent
        covered += res.source == DETERMINISTIC
        pairs.append((ex.gold, res.frame))
    p, r, f = slot_prf(pairs)
    n = len(examples)
    return EvalReport(n, correct / n, p, r, f, covered / n)
