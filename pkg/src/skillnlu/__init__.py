"""Spoken-language understanding toolkit for voice-assistant skills.

Interaction models compile to a weighted grammar for exact recognition;
sampled utterances train a maximum-entropy intent classifier and a CRF
slot tagger for everything the grammar does not cover.
"""

from .build import BuildConfig, build_bundle, build_skill
from .frames import SemanticFrame, SlotValue
from .grammar import WeightedGrammar, build_grammar, recognize_deterministic, sample_utterances
from .interaction_model import InteractionModel, load_interaction_model, validate_interaction_model
from .runtime import DialogueManager, ModelStore, NLUResult, SkillModelBundle, understand

__version__ = "0.1.0"

__all__ = [
    "BuildConfig",
    "DialogueManager",
    "InteractionModel",
    "ModelStore",
    "NLUResult",
    "SemanticFrame",
    "SkillModelBundle",
    "SlotValue",
    "WeightedGrammar",
    "build_bundle",
    "build_grammar",
    "build_skill",
    "load_interaction_model",
    "recognize_deterministic",
    "sample_utterances",
    "understand",
    "validate_interaction_model",
]
