"""Exact-match invocation-name routing across stored skills."""

from __future__ import annotations

from dataclasses import dataclass

from ..text import tokenize
from .store import ModelStore

__all__ = ["Route", "route_invocation", "LAUNCH_WORDS", "ASK_WORDS"]

LAUNCH_WORDS = ("open", "launch", "start")
ASK_WORDS = ("ask", "tell")


@dataclass(frozen=True)
class Route:
    skill_id: str
    invocation_name: str
    # remaining request for one-shot "ask <skill> <request>" forms
    request: str = ""


def route_invocation(store: ModelStore, text: str) -> Route | None:
    """Route ``open <name>`` or ``ask <name> <request>`` to the skill with that invocation name.

    Returns None when no stored skill matches or when the name is ambiguous.
    """
    toks = tokenize(text)
    if len(toks) < 2:
        return None
    verb, rest = toks[0], toks[1:]
    names = {}
    for s in store.skills():
        inv = store.meta(s).get("invocation_name")
        if inv:
            names.setdefault(inv, []).append(s)
    if verb in LAUNCH_WORDS:
        hits = names.get(" ".join(rest), [])
        return Route(hits[0], " ".join(rest)) if len(hits) == 1 else None
    if verb in ASK_WORDS:
        # longest invocation name that prefixes the remainder
        for k in range(len(rest), 0, -1):
            hits = names.get(" ".join(rest[:k]), [])
            if len(hits) == 1:
                return Route(hits[0], " ".join(rest[:k]), " ".join(rest[k:]))
    return None
