"""Serving: model bundles, the versioned store, hybrid understanding and dialogue."""

from .bundle import BundleCorruptError, BundleError, SkillModelBundle
from .dialogue import (
    ConfirmIntent,
    DialogueManager,
    DialogueState,
    ElicitSlot,
    Fulfill,
    dialogue_step,
    start_dialogue,
)
from .nlu import NLUEngine, NLUResult, understand
from .router import Route, route_invocation
from .store import ModelStore, StoreError, UnknownSkillError, VersionNotFoundError, load_bundle, store_bundle

__all__ = [
    "BundleCorruptError",
    "BundleError",
    "ConfirmIntent",
    "DialogueManager",
    "DialogueState",
    "ElicitSlot",
    "Fulfill",
    "ModelStore",
    "NLUEngine",
    "NLUResult",
    "Route",
    "SkillModelBundle",
    "StoreError",
    "UnknownSkillError",
    "VersionNotFoundError",
    "dialogue_step",
    "load_bundle",
    "route_invocation",
    "start_dialogue",
    "store_bundle",
    "understand",
]
