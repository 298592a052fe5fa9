"""Seeded generators of synthetic skills and labeled data for tests and demos."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .interaction_model import (
    CustomSlotType,
    IntentDecl,
    IntentSchema,
    InteractionModel,
    LabeledUtterance,
    SlotDecl,
    SlotRef,
)

__all__ = ["word_pool", "random_interaction_model", "oov_entity_split", "spans_of"]

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def word_pool(rng: np.random.Generator, n: int, exclude: set[str] | None = None) -> list[str]:
    """``n`` distinct pronounceable pseudo-words of two or three syllables."""
    exclude = exclude or set()
    out: dict[str, None] = {}
    while len(out) < n:
        k = 2 + int(rng.integers(2))
        w = "".join(_CONSONANTS[rng.integers(14)] + _VOWELS[rng.integers(5)] for _ in range(k))
        if w not in exclude:
            out.setdefault(w)
    return list(out)


def random_interaction_model(
    seed: int | np.random.Generator = 0,
    *,
    n_intents: int = 5,
    templates_per_intent: int = 6,
    n_slot_types: int = 3,
    values_per_type: int = 50,
    max_slots: int = 2,
    max_value_len: int = 3,
    required_prob: float = 0.5,
    confirm_prob: float = 0.3,
    invocation_name: str = "synthetic skill",
) -> InteractionModel:
    """A random but unambiguous interaction model.

    Every intent owns a distinct leading word, slot types draw values from
    disjoint vocabularies, carrier words never occur inside values, slots
    of one intent have distinct types and a carrier word separates
    adjacent slots. Each utterance of the resulting grammar therefore has
    exactly one frame.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if max_slots > n_slot_types:
        raise ValueError("max_slots cannot exceed n_slot_types")
    used: set[str] = set()

    def fresh(n):
        ws = word_pool(rng, n, used)
        used.update(ws)
        return ws

    types = []
    for t in range(n_slot_types):
        vocab = fresh(max(4, values_per_type))
        vals: dict[str, None] = {}
        while len(vals) < values_per_type:
            k = 1 + int(rng.integers(max_value_len))
            vals.setdefault(" ".join(vocab[i] for i in rng.choice(len(vocab), k, replace=False)))
        types.append(CustomSlotType(f"TYPE_{chr(65 + t)}", tuple(vals)))

    carriers = fresh(30)
    leads = fresh(n_intents)
    intents, samples = [], []
    for i in range(n_intents):
        n_slots = int(rng.integers(max_slots + 1))
        tix = rng.choice(n_slot_types, n_slots, replace=False)
        slots = tuple(
            SlotDecl(f"Slot{chr(65 + int(t))}", types[int(t)].name, bool(rng.random() < required_prob))
            for t in tix
        )
        name = f"Intent{i}"
        intents.append(IntentDecl(name, slots, bool(n_slots and rng.random() < confirm_prob)))
        seen: set[tuple] = set()
        tries = 0
        while len(seen) < templates_per_intent and tries < 50 * templates_per_intent:
            tries += 1
            used_slots = [s.name for s in slots if rng.random() < 0.7]
            rng.shuffle(used_slots)
            toks: list = [leads[i]]
            for s in used_slots:
                toks += [carriers[j] for j in rng.choice(len(carriers), 1 + int(rng.integers(2)), replace=False)]
                toks.append(SlotRef(s))
            if rng.random() < 0.5:
                toks.append(carriers[int(rng.integers(len(carriers)))])
            key = tuple(str(t) for t in toks)
            if key not in seen:
                seen.add(key)
                samples.append(LabeledUtterance(name, tuple(toks)))
    return InteractionModel(IntentSchema(tuple(intents)), tuple(types), tuple(samples), invocation_name)


def oov_entity_split(
    seed: int = 0,
    *,
    n_types: int = 3,
    values_per_type: int = 80,
    n_train: int = 600,
    n_test: int = 400,
    oov_fraction: float = 0.5,
) -> tuple[dict[str, list[str]], list[tuple[list[str], list[str]]], list[tuple[list[str], list[str]]]]:
    """Tagging data where part of every slot type's values only occur at test time.

    Returns ``(gazetteers, train, test)``; the gazetteers list all values
    (seen and held out) per slot name, train and test are (tokens, BIO
    labels) pairs. Carrier contexts are shared by all slot types so the
    context alone does not reveal the slot.
    """
    rng = np.random.default_rng(seed)
    used: set[str] = set()
    slots = [f"Slot{chr(65 + t)}" for t in range(n_types)]
    values, seen_vals, held = {}, {}, {}
    for s in slots:
        vocab = word_pool(rng, values_per_type * 2, used)
        used.update(vocab)
        vals: dict[str, None] = {}
        while len(vals) < values_per_type:
            k = 1 + int(rng.integers(3))
            vals.setdefault(" ".join(vocab[i] for i in rng.choice(len(vocab), k, replace=False)))
        vals_l = list(vals)
        cut = int(round(len(vals_l) * (1 - oov_fraction)))
        values[s], seen_vals[s], held[s] = vals_l, vals_l[:cut], vals_l[cut:]
    carriers = word_pool(rng, 12, used)
    patterns = [
        [0, None, 1],
        [2, 3, None],
        [None, 4, 5],
        [6, None, 7, None, 8],
        [9, None, 10, 11, None],
    ]

    def make(n, pool):
        out = []
        for _ in range(n):
            pat = patterns[int(rng.integers(len(patterns)))]
            n_holes = sum(p is None for p in pat)
            fill = rng.choice(len(slots), n_holes, replace=False)
            toks, labs, h = [], [], 0
            for p in pat:
                if p is None:
                    s = slots[int(fill[h])]
                    h += 1
                    v = pool[s][int(rng.integers(len(pool[s])))].split()
                    toks += v
                    labs += [f"B-{s}"] + [f"I-{s}"] * (len(v) - 1)
                else:
                    toks.append(carriers[p])
                    labs.append("O")
            out.append((toks, labs))
        return out

    train = make(n_train, seen_vals)
    test = make(n_test, values)
    return values, train, test


def spans_of(labels: Sequence[str]) -> set[tuple[str, int, int]]:
    """Exact (slot, start, end) spans of a BIO sequence, orphan I- opening a span."""
    spans, cur = [], None
    for i, lab in enumerate(labels):
        if lab == "O":
            cur = None
        elif lab.startswith("I-") and cur is not None and cur[0] == lab[2:]:
            cur[2] = i + 1
        else:
            cur = [lab[2:], i, i + 1]
            spans.append(cur)
    return {tuple(s) for s in spans}
