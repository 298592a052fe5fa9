"""Hybrid understanding: grammar first, then the statistical cascade."""

from __future__ import annotations

import json
import threading
import weakref
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..features import extract_intent_features, match_gazetteers, sentence_tagger_features
from ..frames import DETERMINISTIC, STATISTICAL, SemanticFrame
from ..grammar import recognize_deterministic
from ..models.crf import decode_frame, viterbi_decode
from ..text import tokenize
from .bundle import SkillModelBundle

__all__ = [
    "NLUResult",
    "NLUEngine",
    "understand",
    "OUT_OF_DOMAIN",
    "DEFAULT_REJECTION_THRESHOLD",
    "INTENT_FIRST",
    "SLOTS_FIRST",
]

OUT_OF_DOMAIN = "out_of_domain"
DEFAULT_REJECTION_THRESHOLD = 0.35
INTENT_FIRST = "intent_first"
SLOTS_FIRST = "slots_first"


@dataclass(frozen=True)
class NLUResult:
    frame: SemanticFrame | None
    source: str
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def intent(self) -> str | None:
        return self.frame.intent if self.frame else None

    @property
    def confidence(self) -> float:
        return self.frame.confidence if self.frame else 0.0

    @property
    def in_domain(self) -> bool:
        return self.frame is not None

    def to_dict(self, diagnostics: bool = False) -> dict:
        d = {
            "intent": self.intent,
            "slots": self.frame.slot_values() if self.frame else {},
            "confidence": self.confidence,
            "source": self.source,
        }
        if diagnostics:
            d["diagnostics"] = self.diagnostics
        return d

    def to_json(self, diagnostics: bool = False) -> str:
        return json.dumps(self.to_dict(diagnostics), sort_keys=True)


class NLUEngine:
    """Prepared, read-only view of a bundle; ``understand`` is safe to call from many threads."""

    def __init__(self, bundle: SkillModelBundle, rejection_threshold: float = DEFAULT_REJECTION_THRESHOLD,
                 order: str = INTENT_FIRST):
        if order not in (INTENT_FIRST, SLOTS_FIRST):
            raise ValueError(f"order must be {INTENT_FIRST!r} or {SLOTS_FIRST!r}")
        if not 0 <= rejection_threshold <= 1:
            raise ValueError("rejection threshold must be in [0, 1]")
        self.bundle = bundle
        self.threshold = rejection_threshold
        self.order = order
        self.intent_model = bundle.intent_float()
        self.slot_model = bundle.slot_float()
        self.gazetteers = [bundle.gazetteers[k] for k in sorted(bundle.gazetteers)]
        tagged = set(self.slot_model.slot_names)
        self.intent_slots = {
            i.name: [s for s in i.slot_names if s in tagged] for i in bundle.model.schema.intents
        }

    def understand(self, text: str) -> NLUResult:
        tokens = tokenize(text)
        diag: dict[str, Any] = {"tokens": tokens, "skill_id": self.bundle.skill_id, "version": self.bundle.version}
        if not tokens:
            diag["path"] = "empty"
            return NLUResult(None, OUT_OF_DOMAIN, diag)
        frame = recognize_deterministic(self.bundle.grammar, tokens)
        if frame is not None:
            diag["path"] = "grammar"
            return NLUResult(frame, DETERMINISTIC, diag)
        diag["path"] = "statistical"
        diag["order"] = self.order
        spans = match_gazetteers(tokens, self.gazetteers) if self.gazetteers else []
        probs = self.intent_model.predict_proba(
            self.intent_model.vectorizer.transform(extract_intent_features(tokens, spans=spans)))
        labels = self.intent_model.labels
        feats = sentence_tagger_features(tokens, spans=spans)
        if self.order == INTENT_FIRST:
            best = int(np.argmax(probs))
            intent, p = labels[best], float(probs[best])
            tags, _ = viterbi_decode(self.slot_model, feats, allowed_slots=self.intent_slots.get(intent, []))
        else:
            tags, _ = viterbi_decode(self.slot_model, feats)
            found = {t[2:] for t in tags if t != "O"}
            ok = [k for k, lab in enumerate(labels) if found <= set(self.intent_slots.get(lab, []))]
            cand = ok or list(range(len(labels)))
            best = max(cand, key=lambda k: (probs[k], -k))
            intent, p = labels[best], float(probs[best])
            keep = set(self.intent_slots.get(intent, []))
            tags = [t if t == "O" or t[2:] in keep else "O" for t in tags]
        diag["intent_posterior"] = {labels[k]: float(probs[k]) for k in np.argsort(-probs)[:5]}
        diag["threshold"] = self.threshold
        if p < self.threshold:
            diag["rejected"] = True
            return NLUResult(None, OUT_OF_DOMAIN, diag)
        diag["tags"] = tags
        return NLUResult(decode_frame(tokens, tags, intent, confidence=p), STATISTICAL, diag)


_ENGINES: "weakref.WeakKeyDictionary[SkillModelBundle, dict]" = weakref.WeakKeyDictionary()
_ENGINES_LOCK = threading.Lock()


def understand(bundle: SkillModelBundle, text: str, *, rejection_threshold: float = DEFAULT_REJECTION_THRESHOLD,
               order: str = INTENT_FIRST) -> NLUResult:
    """Understand ``text`` with ``bundle``; the prepared engine is cached per bundle."""
    key = (rejection_threshold, order)
    with _ENGINES_LOCK:
        per = _ENGINES.setdefault(bundle, {})
        eng = per.get(key)
        if eng is None:
            eng = per[key] = NLUEngine(bundle, rejection_threshold, order)
    return eng.understand(text)
