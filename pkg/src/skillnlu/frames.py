"""Semantic frames: an intent plus slot fills, the result of understanding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

__all__ = ["SlotValue", "SemanticFrame", "DETERMINISTIC", "STATISTICAL"]

DETERMINISTIC = "deterministic"
STATISTICAL = "statistical"


@dataclass(frozen=True)
class SlotValue:
    value: str
    # [start, end) token span; None for values filled outside the utterance
    span: tuple[int, int] | None = None


@dataclass(frozen=True)
class SemanticFrame:
    intent: str
    slots: Mapping[str, SlotValue] = field(default_factory=dict)
    confidence: float = 1.0
    source: str = DETERMINISTIC

    def __post_init__(self):
        # freeze the slot mapping in sorted order so equal frames compare and hash equal
        object.__setattr__(self, "slots", dict(sorted(self.slots.items())))

    def __hash__(self):
        return hash((self.intent, tuple(self.slots.items()), self.source))

    def slot_values(self) -> dict[str, str]:
        return {k: v.value for k, v in self.slots.items()}

    def with_slot(self, name: str, value: SlotValue) -> "SemanticFrame":
        slots = dict(self.slots)
        slots[name] = value
        return SemanticFrame(self.intent, slots, self.confidence, self.source)

    def without_slot(self, name: str) -> "SemanticFrame":
        slots = {k: v for k, v in self.slots.items() if k != name}
        return SemanticFrame(self.intent, slots, self.confidence, self.source)

    def to_dict(self) -> dict[str, Any]:
        return {
            "intent": self.intent,
            "slots": {
                k: {"value": v.value, "span": list(v.span) if v.span is not None else None}
                for k, v in self.slots.items()
            },
            "confidence": self.confidence,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SemanticFrame":
        slots = {}
        for k, v in d.get("slots", {}).items():
            if isinstance(v, str):
                slots[k] = SlotValue(v)
            else:
                span = v.get("span")
                slots[k] = SlotValue(v["value"], tuple(span) if span is not None else None)
        return cls(
            d["intent"],
            slots,
            float(d.get("confidence", 1.0)),
            d.get("source", DETERMINISTIC),
        )
