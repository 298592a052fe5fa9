"""Procedural dialogue: slot elicitation and intent confirmation.

Each required slot has a budget of answer turns (3 by default). Every
user answer spends one turn of the slot it concerns; a rejected
confirmation spends a turn of the intent's first required slot, which is
then asked again. A slot that runs out of turns ends the dialogue in an
escalated state that repeats its full prompt. With R required slots a
dialogue therefore ends within 3R + 2 steps.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Union

from ..frames import SemanticFrame, SlotValue
from ..grammar import WeightedGrammar, build_grammar, recognize_deterministic
from ..interaction_model import IntentDecl, IntentSchema, InteractionModel, LabeledUtterance, SlotDecl, SlotRef
from ..text import tokenize
from .bundle import SkillModelBundle

__all__ = [
    "ElicitSlot",
    "ConfirmIntent",
    "Fulfill",
    "DialogueDirective",
    "DialogueState",
    "DialogueManager",
    "dialogue_step",
    "start_dialogue",
    "ELICITING",
    "CONFIRMING",
    "FULFILLED",
    "ESCALATED",
    "YES_WORDS",
    "step_bound",
]

ELICITING, CONFIRMING, FULFILLED, ESCALATED = "eliciting", "confirming", "fulfilled", "escalated"
YES_WORDS = frozenset({"yes", "yeah", "yep", "correct", "right", "sure", "ok", "okay"})
DEFAULT_TURNS = 3


@dataclass(frozen=True)
class ElicitSlot:
    slot: str
    prompt: str
    escalated: bool = False


@dataclass(frozen=True)
class ConfirmIntent:
    prompt: str
    escalated: bool = False


@dataclass(frozen=True)
class Fulfill:
    frame: SemanticFrame


DialogueDirective = Union[ElicitSlot, ConfirmIntent, Fulfill]


@dataclass(frozen=True)
class DialogueState:
    skill_id: str
    frame: SemanticFrame
    missing: tuple[str, ...] = ()
    phase: str = ELICITING
    turns: tuple[tuple[str, int], ...] = ()
    steps: int = 1
    directive: DialogueDirective | None = field(default=None, compare=False)

    def turns_left(self, slot: str) -> int:
        return dict(self.turns).get(slot, 0)

    @property
    def terminal(self) -> bool:
        return self.phase in (FULFILLED, ESCALATED)


def step_bound(n_required: int) -> int:
    return 3 * n_required + 2


def _humanize(template: str, frame: SemanticFrame) -> str:
    values = frame.slot_values()
    return re.sub(r"\{([^{}]+)\}", lambda m: values.get(m.group(1), m.group(0)), template)


class DialogueManager:
    def __init__(self, model: InteractionModel | SkillModelBundle, grammar: WeightedGrammar | None = None,
                 turns: int = DEFAULT_TURNS, skill_id: str | None = None):
        if isinstance(model, SkillModelBundle):
            grammar = grammar or model.grammar
            skill_id = skill_id or model.skill_id
            model = model.model
        if turns < 1:
            raise ValueError("turn budget must be at least 1")
        self.model = model
        self.grammar = grammar
        self.turns = turns
        self.skill_id = skill_id or "skill"
        self._answer_grammars: dict[tuple[str, str], WeightedGrammar] = {}

    # prompts -------------------------------------------------------------
    def _intent(self, name: str) -> IntentDecl:
        decl = self.model.schema.intent(name)
        if decl is None:
            raise KeyError(f"intent {name!r} is not declared")
        return decl

    def prompt(self, intent: str, slot: str) -> str:
        decl = self._intent(intent).slot(slot)
        return decl.prompt if decl and decl.prompt else f"What {slot}?"

    def full_prompt(self, intent: str, slot: str) -> str:
        decl = self._intent(intent).slot(slot)
        examples = list(self.model.slot_values(decl.type))[:3] if decl else []
        base = self.prompt(intent, slot)
        return f"{base} For example: {', '.join(examples)}." if examples else base

    def confirm_prompt(self, frame: SemanticFrame) -> str:
        decl = self._intent(frame.intent)
        if decl.confirmation_prompt:
            return _humanize(decl.confirmation_prompt, frame)
        vals = ", ".join(f"{k} {v}" for k, v in frame.slot_values().items())
        return f"Should I go ahead with {frame.intent}" + (f" for {vals}?" if vals else "?")

    # answers -------------------------------------------------------------
    def _answer_grammar(self, intent: str, slot: str) -> WeightedGrammar:
        decl = self._intent(intent).slot(slot)
        key = (slot, decl.type)
        g = self._answer_grammars.get(key)
        if g is None:
            one = InteractionModel(
                IntentSchema((IntentDecl("Answer", (SlotDecl(slot, decl.type),)),)),
                self.model.slot_types,
                (LabeledUtterance("Answer", (SlotRef(slot),)),),
                self.model.invocation_name,
            )
            g = self._answer_grammars[key] = build_grammar(one)
        return g

    def parse_answer(self, intent: str, slot: str, text: str) -> SlotValue | None:
        """Recognize a slot answer with a one-slot grammar, falling back to a full in-grammar utterance."""
        tokens = tokenize(text)
        if not tokens:
            return None
        f = recognize_deterministic(self._answer_grammar(intent, slot), tokens)
        if f is not None and slot in f.slots:
            return SlotValue(f.slots[slot].value)
        if self.grammar is not None:
            f = recognize_deterministic(self.grammar, tokens)
            if f is not None and f.intent == intent and slot in f.slots:
                return SlotValue(f.slots[slot].value)
        return None

    @staticmethod
    def is_affirmative(text: str) -> bool:
        toks = tokenize(text)
        return bool(toks) and toks[0] in YES_WORDS

    # transitions ---------------------------------------------------------
    def _required(self, intent: str) -> list[str]:
        return [s.name for s in self._intent(intent).slots if s.required]

    def _advance(self, state: DialogueState) -> tuple[DialogueState, DialogueDirective]:
        f = state.frame
        if state.missing:
            slot = state.missing[0]
            d = ElicitSlot(slot, self.prompt(f.intent, slot))
            phase = ELICITING
        elif self._intent(f.intent).confirmation_required and state.phase != CONFIRMING:
            d = ConfirmIntent(self.confirm_prompt(f))
            phase = CONFIRMING
        else:
            d = Fulfill(f)
            phase = FULFILLED
        new = replace(state, phase=phase, directive=d)
        return new, d

    def start(self, frame: SemanticFrame) -> tuple[DialogueState, DialogueDirective]:
        required = self._required(frame.intent)
        missing = tuple(s for s in required if s not in frame.slots)
        state = DialogueState(self.skill_id, frame, missing, ELICITING,
                              tuple((s, self.turns) for s in required), 1)
        return self._advance(state)

    def _escalate(self, state: DialogueState, slot: str | None) -> tuple[DialogueState, DialogueDirective]:
        if slot is None:
            d: DialogueDirective = ConfirmIntent(self.confirm_prompt(state.frame), escalated=True)
        else:
            d = ElicitSlot(slot, self.full_prompt(state.frame.intent, slot), escalated=True)
        new = replace(state, phase=ESCALATED, directive=d)
        return new, d

    def step(self, state: DialogueState, inp: str | SemanticFrame) -> tuple[DialogueState, DialogueDirective]:
        if isinstance(inp, SemanticFrame):
            return self.start(inp)
        if state.terminal:
            return state, state.directive
        turns = dict(state.turns)
        state = replace(state, steps=state.steps + 1)
        if state.phase == ELICITING:
            slot = state.missing[0]
            turns[slot] -= 1
            state = replace(state, turns=tuple(turns.items()))
            value = self.parse_answer(state.frame.intent, slot, inp)
            if value is None:
                if turns[slot] <= 0:
                    return self._escalate(state, slot)
                d = ElicitSlot(slot, self.prompt(state.frame.intent, slot))
                return replace(state, directive=d), d
            state = replace(state, frame=state.frame.with_slot(slot, value), missing=state.missing[1:])
            return self._advance(state)
        # confirming
        if self.is_affirmative(inp):
            d = Fulfill(state.frame)
            return replace(state, phase=FULFILLED, directive=d), d
        required = self._required(state.frame.intent)
        if not required:
            return self._escalate(state, None)
        first = required[0]
        if turns[first] <= 0:
            return self._escalate(state, first)
        turns[first] -= 1
        state = replace(state, turns=tuple(turns.items()))
        if turns[first] <= 0:
            return self._escalate(state, first)
        state = replace(state, frame=state.frame.without_slot(first), missing=(first,), phase=ELICITING)
        return self._advance(state)


def start_dialogue(bundle: SkillModelBundle | DialogueManager, frame: SemanticFrame):
    mgr = bundle if isinstance(bundle, DialogueManager) else DialogueManager(bundle)
    return mgr.start(frame)


def dialogue_step(state: DialogueState, inp: str | SemanticFrame, manager: DialogueManager | SkillModelBundle):
    """One dialogue turn: a new frame (re)starts the dialogue, a string answers the pending directive."""
    mgr = manager if isinstance(manager, DialogueManager) else DialogueManager(manager)
    return mgr.step(state, inp)
