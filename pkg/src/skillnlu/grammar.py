"""Weighted FST grammars compiled from interaction models.

The grammar is an acyclic transducer over tokens. Input labels are words;
output labels are an intent marker at the start of every path and
``<Slot>`` / ``</Slot>`` markers around slot values. Weights are negative
natural-log probabilities and decoding picks the minimum-weight path.

Construction builds, per intent, a trie over template tokens. Each slot
reference splices in a value trie for the slot type: an ``<eps>:<Slot>``
arc into the value trie and ``<eps>:</Slot>`` arcs out of every value end
into a shared exit state. A restricted epsilon removal then folds output
markers forward onto the next word arc where the target state has a single
incoming arc, so a one-word grammar is a single arc ``hello:Greet``.

Probabilities are not stored per arc at build time. Every arc either has
an explicit probability mass (slot-close arcs) or inherits the mass of its
target state; state masses are sums over outgoing arcs plus final mass. A
prior assigns a mass to each template and arc weights follow as
``-log(mass(arc) / mass(src))``, which keeps every state stochastic.
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .frames import DETERMINISTIC, SemanticFrame, SlotValue
from .interaction_model import (
    InteractionModel,
    LabeledUtterance,
    SlotRef,
    validate_interaction_model,
)
from .text import tokenize

__all__ = [
    "EPSILON",
    "GrammarError",
    "TemplateInfo",
    "WeightedGrammar",
    "build_grammar",
    "apply_max_entropy_priors",
    "recognize_deterministic",
    "sample_utterances",
    "enumerate_paths",
]

log = logging.getLogger(__name__)

EPSILON = "<eps>"
INTENT_PREFIX = "intent:"
MAGIC = b"SKFST\x00"
FORMAT_VERSION = 1
TIE_TOLERANCE = 1e-9


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class TemplateInfo:
    intent: str
    text: str
    count: int


class WeightedGrammar:
    """An acyclic weighted transducer with symbol tables.

    Arcs are kept in parallel lists (``src``, ``dst``, ``ilabel``,
    ``olabel``, ``weight``), sorted by source state. Label 0 is epsilon in
    both symbol tables.
    """

    def __init__(
        self,
        num_states: int,
        start: int,
        arcs: Sequence[tuple[int, int, int, int, float]],
        finals: dict[int, float],
        isyms: Sequence[str],
        osyms: Sequence[str],
        *,
        templates: Sequence[TemplateInfo] = (),
        template_sets: Sequence[tuple[int, ...]] = (),
        arc_mass: Sequence[tuple[int, float] | None] | None = None,
        final_sets: dict[int, int] | None = None,
        max_entropy: bool | None = None,
    ):
        order = sorted(range(len(arcs)), key=lambda i: arcs[i][0])
        self.num_states = num_states
        self.start = start
        self.src = [arcs[i][0] for i in order]
        self.dst = [arcs[i][1] for i in order]
        self.ilabel = [arcs[i][2] for i in order]
        self.olabel = [arcs[i][3] for i in order]
        self.weight = [float(arcs[i][4]) for i in order]
        self.finals = dict(finals)
        self.isyms = list(isyms)
        self.osyms = list(osyms)
        self._isym_index = {s: i for i, s in enumerate(self.isyms)}
        self.templates = list(templates)
        self.template_sets = [tuple(s) for s in template_sets]
        self.arc_mass = [arc_mass[i] for i in order] if arc_mass is not None else [None] * len(order)
        self.final_sets = dict(final_sets or {})
        self.max_entropy = max_entropy
        self._index()

    def _index(self) -> None:
        self.out: list[list[int]] = [[] for _ in range(self.num_states)]
        self.by_label: list[dict[int, list[int]]] = [{} for _ in range(self.num_states)]
        for a in range(len(self.src)):
            s = self.src[a]
            self.out[s].append(a)
            self.by_label[s].setdefault(self.ilabel[a], []).append(a)
        self._sampler = None

    @classmethod
    def empty(cls) -> "WeightedGrammar":
        """A grammar accepting nothing."""
        return cls(1, 0, [], {}, [EPSILON], [EPSILON])

    # -- basic queries ------------------------------------------------------

    @property
    def num_arcs(self) -> int:
        return len(self.src)

    @property
    def intents(self) -> list[str]:
        return [s[len(INTENT_PREFIX):] for s in self.osyms if s.startswith(INTENT_PREFIX)]

    def arcs(self) -> Iterator[tuple[int, int, str, str, float]]:
        for a in range(self.num_arcs):
            yield (
                self.src[a],
                self.dst[a],
                self.isyms[self.ilabel[a]],
                self.osyms[self.olabel[a]],
                self.weight[a],
            )

    def topological_order(self) -> list[int]:
        indeg = [0] * self.num_states
        for d in self.dst:
            indeg[d] += 1
        stack = [s for s in range(self.num_states) if indeg[s] == 0]
        order = []
        while stack:
            s = stack.pop()
            order.append(s)
            for a in self.out[s]:
                d = self.dst[a]
                indeg[d] -= 1
                if indeg[d] == 0:
                    stack.append(d)
        if len(order) != self.num_states:
            raise GrammarError("grammar contains a cycle")
        return order

    def num_paths(self) -> int:
        count = [0] * self.num_states
        for s in reversed(self.topological_order()):
            count[s] = (1 if s in self.finals else 0) + sum(count[self.dst[a]] for a in self.out[s])
        return count[self.start]

    def state_mass_check(self) -> float:
        """Largest deviation from 1 of outgoing plus final probability."""
        worst = 0.0
        for s in range(self.num_states):
            total = sum(math.exp(-self.weight[a]) for a in self.out[s])
            if s in self.finals:
                total += math.exp(-self.finals[s])
            if total > 0:
                worst = max(worst, abs(total - 1.0))
        return worst

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        """AT&T-style text: ``src dst ilabel olabel weight`` then ``state weight`` finals."""
        lines = [
            f"{s} {d} {i} {o} {w!r}" for s, d, i, o, w in self.arcs()
        ]
        for s in sorted(self.finals):
            lines.append(f"{s} {self.finals[s]!r}")
        if not self.src and not self.finals:
            lines.append(f"# start {self.start}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "WeightedGrammar":
        """Parse :meth:`to_text` output. Prior metadata is not carried."""
        isyms, osyms = [EPSILON], [EPSILON]
        iidx, oidx = {EPSILON: 0}, {EPSILON: 0}
        arcs, finals = [], {}
        start = None
        n = 0
        for raw in text.splitlines():
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                if len(parts) == 3 and parts[1] == "start":
                    start = int(parts[2])
                    n = max(n, start + 1)
                continue
            if len(parts) in (4, 5):
                s, d = int(parts[0]), int(parts[1])
                i = iidx.setdefault(parts[2], len(isyms))
                if i == len(isyms):
                    isyms.append(parts[2])
                o = oidx.setdefault(parts[3], len(osyms))
                if o == len(osyms):
                    osyms.append(parts[3])
                w = float(parts[4]) if len(parts) == 5 else 0.0
                arcs.append((s, d, i, o, w))
                if start is None:
                    start = s
                n = max(n, s + 1, d + 1)
            elif len(parts) in (1, 2):
                s = int(parts[0])
                finals[s] = float(parts[1]) if len(parts) == 2 else 0.0
                if start is None:
                    start = s
                n = max(n, s + 1)
            else:
                raise GrammarError(f"bad FST text line: {raw!r}")
        if start is None:
            return cls.empty()
        return cls(n, start, arcs, finals, isyms, osyms)

    def to_bytes(self) -> bytes:
        header = {
            "num_states": self.num_states,
            "start": self.start,
            "isyms": self.isyms,
            "osyms": self.osyms,
            "templates": [[t.intent, t.text, t.count] for t in self.templates],
            "template_sets": [list(s) for s in self.template_sets],
            "arc_mass": [list(m) if m is not None else None for m in self.arc_mass],
            "final_sets": [[s, k] for s, k in sorted(self.final_sets.items())],
            "max_entropy": self.max_entropy,
        }
        hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        arc_dt = np.dtype([("src", "<u4"), ("dst", "<u4"), ("i", "<u4"), ("o", "<u4"), ("w", "<f8")])
        arcs = np.zeros(self.num_arcs, dtype=arc_dt)
        arcs["src"], arcs["dst"] = self.src, self.dst
        arcs["i"], arcs["o"], arcs["w"] = self.ilabel, self.olabel, self.weight
        fin_dt = np.dtype([("s", "<u4"), ("w", "<f8")])
        fin = np.zeros(len(self.finals), dtype=fin_dt)
        keys = sorted(self.finals)
        fin["s"] = keys
        fin["w"] = [self.finals[k] for k in keys]
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<HIII", FORMAT_VERSION, len(hdr), self.num_arcs, len(keys)))
        buf.write(hdr)
        buf.write(arcs.tobytes())
        buf.write(fin.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightedGrammar":
        if data[: len(MAGIC)] != MAGIC:
            raise GrammarError("not a grammar file (bad magic)")
        off = len(MAGIC)
        try:
            version, hlen, narcs, nfin = struct.unpack_from("<HIII", data, off)
        except struct.error as e:
            raise GrammarError("truncated grammar file") from e
        if version != FORMAT_VERSION:
            raise GrammarError(f"unsupported grammar format version {version}")
        off += struct.calcsize("<HIII")
        arc_dt = np.dtype([("src", "<u4"), ("dst", "<u4"), ("i", "<u4"), ("o", "<u4"), ("w", "<f8")])
        fin_dt = np.dtype([("s", "<u4"), ("w", "<f8")])
        if len(data) != off + hlen + narcs * arc_dt.itemsize + nfin * fin_dt.itemsize:
            raise GrammarError("truncated grammar file")
        h = json.loads(data[off : off + hlen].decode("utf-8"))
        off += hlen
        arcs = np.frombuffer(data, dtype=arc_dt, count=narcs, offset=off)
        off += narcs * arc_dt.itemsize
        fin = np.frombuffer(data, dtype=fin_dt, count=nfin, offset=off)
        arc_list = list(
            zip(arcs["src"].tolist(), arcs["dst"].tolist(), arcs["i"].tolist(), arcs["o"].tolist(), arcs["w"].tolist())
        )
        return cls(
            h["num_states"],
            h["start"],
            arc_list,
            dict(zip(fin["s"].tolist(), fin["w"].tolist())),
            h["isyms"],
            h["osyms"],
            templates=[TemplateInfo(*t) for t in h["templates"]],
            template_sets=[tuple(s) for s in h["template_sets"]],
            arc_mass=[tuple(m) if m is not None else None for m in h["arc_mass"]],
            final_sets={s: k for s, k in h["final_sets"]},
            max_entropy=h["max_entropy"],
        )

    def __eq__(self, other):
        if not isinstance(other, WeightedGrammar):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    __hash__ = None


# -- construction -----------------------------------------------------------


class _Builder:
    def __init__(self):
        self.isyms = [EPSILON]
        self.osyms = [EPSILON]
        self._iidx = {EPSILON: 0}
        self._oidx = {EPSILON: 0}
        self.n = 0
        self.arcs: list[list] = []  # [src, dst, ilabel, olabel, mass]
        self.finals: dict[int, int] = {}
        self.template_sets: list[tuple[int, ...]] = []

    def state(self) -> int:
        self.n += 1
        return self.n - 1

    def isym(self, s: str) -> int:
        i = self._iidx.get(s)
        if i is None:
            i = self._iidx[s] = len(self.isyms)
            self.isyms.append(s)
        return i

    def osym(self, s: str) -> int:
        i = self._oidx.get(s)
        if i is None:
            i = self._oidx[s] = len(self.osyms)
            self.osyms.append(s)
        return i

    def arc(self, src, dst, ilabel, olabel, mass=None):
        self.arcs.append([src, dst, ilabel, olabel, mass])

    def tset(self, ids) -> int:
        self.template_sets.append(tuple(ids))
        return len(self.template_sets) - 1


def _value_trie(b: _Builder, values: Sequence[tuple[str, ...]], slot: str, exit_set: int) -> tuple[int, int]:
    """Build a value trie; return its root. Value ends get close arcs to a fresh exit state."""
    root = b.state()
    exit_state = None
    total = len(values)
    close = b.osym(f"</{slot}>")
    nodes: dict[tuple[str, ...], int] = {(): root}
    ends: dict[int, int] = defaultdict(int)
    for toks in values:
        prefix: tuple[str, ...] = ()
        node = root
        for tok in toks:
            key = prefix + (tok,)
            nxt = nodes.get(key)
            if nxt is None:
                nxt = nodes[key] = b.state()
                b.arc(node, nxt, b.isym(tok), 0)
            node, prefix = nxt, key
        ends[node] += 1
    exit_state = b.state()
    for node, cnt in ends.items():
        b.arc(node, exit_state, 0, close, (exit_set, cnt / total))
    return root, exit_state


def _build_raw(model: InteractionModel):
    b = _Builder()
    start = b.state()
    templates: list[TemplateInfo] = []
    per_intent: dict[str, list[tuple[tuple, int]]] = {}
    counts: dict[tuple[str, tuple], int] = {}
    for s in model.samples:
        key = (s.intent, s.template)
        if key not in counts:
            per_intent.setdefault(s.intent, []).append(s.template)
        counts[key] = counts.get(key, 0) + 1

    value_cache: dict[str, list[tuple[str, ...]]] = {}

    def values_of(intent_decl, slot_name):
        stype = intent_decl.slot(slot_name).type
        if stype not in value_cache:
            vals = [tuple(tokenize(v)) for v in model.slot_values(stype)]
            vals = [v for v in vals if v]
            if not vals:
                raise GrammarError(f"slot type {stype} has an empty value list")
            value_cache[stype] = list(dict.fromkeys(vals))
        return value_cache[stype]

    for intent in model.schema.intents:
        tpls = per_intent.get(intent.name)
        if not tpls:
            continue
        first = len(templates)
        for t in tpls:
            if not t:
                raise GrammarError(f"template for {intent.name} expands to zero tokens")
            text = " ".join(str(x) for x in t)
            templates.append(TemplateInfo(intent.name, text, counts[(intent.name, t)]))
        ids = list(range(first, len(templates)))
        root = b.state()
        b.arc(start, root, 0, b.osym(INTENT_PREFIX + intent.name))

        # trie over template tokens; key -> (state, template ids through it)
        def insert(node: int, ids_here: list[int], depth: int):
            groups: dict[object, list[int]] = {}
            ending = []
            for tid in ids_here:
                t = tpls[tid - first]
                if depth == len(t):
                    ending.append(tid)
                else:
                    groups.setdefault(t[depth], []).append(tid)
            if ending:
                b.finals[node] = b.tset(ending)
            for tok, sub in groups.items():
                if isinstance(tok, SlotRef):
                    exit_set = b.tset(sub)
                    vroot, exit_state = _value_trie(b, values_of(intent, tok.name), tok.name, exit_set)
                    b.arc(node, vroot, 0, b.osym(f"<{tok.name}>"))
                    insert(exit_state, sub, depth + 1)
                else:
                    child = b.state()
                    b.arc(node, child, b.isym(tok), 0)
                    insert(child, sub, depth + 1)

        insert(root, ids, 0)
    return b, start, templates


def _remove_marker_epsilons(b: _Builder, start: int) -> None:
    """Fold ``<eps>:marker`` arcs onto following ``word:<eps>`` arcs."""
    out: list[list[int]] = [[] for _ in range(b.n)]
    indeg = [0] * b.n
    for k, a in enumerate(b.arcs):
        out[a[0]].append(k)
        indeg[a[1]] += 1
    # reverse topological order: construction is a DAG
    order = []
    deg = list(indeg)
    stack = [s for s in range(b.n) if deg[s] == 0]
    while stack:
        s = stack.pop()
        order.append(s)
        for k in out[s]:
            d = b.arcs[k][1]
            deg[d] -= 1
            if deg[d] == 0:
                stack.append(d)
    dead = set()
    for s in reversed(order):
        for k in list(out[s]):
            a = b.arcs[k]
            if k in dead or a[2] != 0 or a[3] == 0:
                continue
            t = a[1]
            if indeg[t] != 1 or t in b.finals or t == start:
                continue
            movable = [m for m in out[t] if b.arcs[m][2] != 0 and b.arcs[m][3] == 0]
            for m in movable:
                b.arcs[m][0] = s
                b.arcs[m][3] = a[3]
                out[t].remove(m)
                out[s].append(m)
            if not out[t]:
                dead.add(k)
                out[s].remove(k)
    b.arcs = [a for k, a in enumerate(b.arcs) if k not in dead]


def _finalize(b: _Builder, start: int, templates, max_entropy: bool) -> WeightedGrammar:
    out: dict[int, list[list]] = defaultdict(list)
    for a in b.arcs:
        out[a[0]].append(a)
    # renumber reachable states in DFS preorder
    remap: dict[int, int] = {}
    stack = [start]
    while stack:
        s = stack.pop()
        if s in remap:
            continue
        remap[s] = len(remap)
        for a in reversed(out[s]):
            if a[1] not in remap:
                stack.append(a[1])
    arcs, masses = [], []
    for a in b.arcs:
        if a[0] in remap:
            arcs.append((remap[a[0]], remap[a[1]], a[2], a[3], 0.0))
            masses.append(a[4])
    finals = {remap[s]: 0.0 for s in b.finals if s in remap}
    final_sets = {remap[s]: k for s, k in b.finals.items() if s in remap}
    g = WeightedGrammar(
        len(remap),
        remap[start],
        arcs,
        finals,
        b.isyms,
        b.osyms,
        templates=templates,
        template_sets=b.template_sets,
        arc_mass=masses,
        final_sets=final_sets,
    )
    return apply_max_entropy_priors(g, enabled=max_entropy)


def build_grammar(model: InteractionModel, *, max_entropy: bool = True) -> WeightedGrammar:
    """Compile a validated interaction model into a weighted grammar.

    The result accepts every sample template with every slot reference
    expanded to every value of its slot type. Priors are applied on the way
    out (maximum entropy by default; ``max_entropy=False`` uses template
    frequencies).
    """
    report = validate_interaction_model(model)
    if not report.buildable:
        raise GrammarError("model does not validate: " + "; ".join(map(str, report.violations)))
    b, start, templates = _build_raw(model)
    _remove_marker_epsilons(b, start)
    g = _finalize(b, start, templates, max_entropy)
    _warn_ambiguities(g)
    return g


def _warn_ambiguities(g: WeightedGrammar, cap: int = 100_000) -> None:
    if g.num_paths() > cap:
        log.debug("grammar has more than %d paths; skipping ambiguity scan", cap)
        return
    seen: dict[tuple[str, ...], str] = {}
    for toks, frame, _ in enumerate_paths(g, cap):
        prev = seen.get(toks)
        if prev is not None and prev != frame.intent + repr(frame.slots):
            log.warning("ambiguous utterance %r (tie-break by weight, then intent name)", " ".join(toks))
            return
        seen[toks] = frame.intent + repr(frame.slots)


# -- priors -----------------------------------------------------------------


def apply_max_entropy_priors(g: WeightedGrammar, *, enabled: bool = True) -> WeightedGrammar:
    """Reweight a grammar in place-free fashion and return the new grammar.

    With ``enabled`` the prior is uniform over intents, then uniform over an
    intent's distinct templates, then uniform over slot values. Disabled,
    templates are weighted by how often they occur among the samples.
    """
    if not g.templates:
        raise GrammarError("grammar carries no template metadata to reweight")
    if enabled:
        by_intent: dict[str, int] = defaultdict(int)
        for t in g.templates:
            by_intent[t.intent] += 1
        n_int = len(by_intent)
        tmass = [1.0 / n_int / by_intent[t.intent] for t in g.templates]
    else:
        total = sum(t.count for t in g.templates)
        tmass = [t.count / total for t in g.templates]
    set_mass = [math.fsum(tmass[i] for i in s) for s in g.template_sets]

    state_mass = [0.0] * g.num_states
    arc_mass = [0.0] * g.num_arcs
    for s in reversed(g.topological_order()):
        total = set_mass[g.final_sets[s]] if s in g.final_sets else 0.0
        for a in g.out[s]:
            m = g.arc_mass[a]
            arc_mass[a] = set_mass[m[0]] * m[1] if m is not None else state_mass[g.dst[a]]
            total += arc_mass[a]
        state_mass[s] = total

    arcs = []
    for a in range(g.num_arcs):
        w = -math.log(arc_mass[a] / state_mass[g.src[a]])
        arcs.append((g.src[a], g.dst[a], g.ilabel[a], g.olabel[a], w if w > 0 else 0.0))
    finals = {}
    for s in g.finals:
        w = -math.log(set_mass[g.final_sets[s]] / state_mass[s])
        finals[s] = w if w > 0 else 0.0
    return WeightedGrammar(
        g.num_states,
        g.start,
        arcs,
        finals,
        g.isyms,
        g.osyms,
        templates=g.templates,
        template_sets=g.template_sets,
        arc_mass=g.arc_mass,
        final_sets=g.final_sets,
        max_entropy=enabled,
    )


# -- decoding ---------------------------------------------------------------


def _decode(g: WeightedGrammar, tokens: Sequence[str], events: Sequence[tuple[int, int]]) -> SemanticFrame | None:
    intent = None
    slots = {}
    open_at: dict[str, int] = {}
    for pos, o in events:
        sym = g.osyms[o]
        if sym.startswith(INTENT_PREFIX):
            intent = sym[len(INTENT_PREFIX):]
        elif sym.startswith("</"):
            name = sym[2:-1]
            begin = open_at.pop(name)
            slots[name] = SlotValue(" ".join(tokens[begin:pos]), (begin, pos))
        elif sym.startswith("<"):
            open_at[sym[1:-1]] = pos
    if intent is None:
        return None
    return SemanticFrame(intent, slots, 1.0, DETERMINISTIC)


def _accepting_paths(g: WeightedGrammar, ids: Sequence[int]):
    """All accepting paths for an input, as (weight, events)."""
    results = []
    n = len(ids)
    # explicit stack: (state, pos, weight, events)
    stack = [(g.start, 0, 0.0, ())]
    while stack:
        s, pos, w, ev = stack.pop()
        if pos == n and s in g.finals:
            results.append((w + g.finals[s], ev))
        lab = g.by_label[s]
        eps = lab.get(0)
        if eps:
            for a in eps:
                o = g.olabel[a]
                stack.append((g.dst[a], pos, w + g.weight[a], ev + ((pos, o),) if o else ev))
        if pos < n:
            arcs = lab.get(ids[pos])
            if arcs:
                for a in arcs:
                    o = g.olabel[a]
                    stack.append((g.dst[a], pos + 1, w + g.weight[a], ev + ((pos, o),) if o else ev))
    return results


def recognize_deterministic(g: WeightedGrammar, tokens: Sequence[str]) -> SemanticFrame | None:
    """Decode ``tokens`` if the grammar accepts them, else return None.

    Among accepting paths the lowest weight wins; paths within 1e-9 of it
    are tie-broken by intent name and then by slot assignment.
    """
    tokens = list(tokens)
    if not tokens:
        return None
    ids = []
    for t in tokens:
        i = g._isym_index.get(t)
        if i is None or i == 0:
            return None
        ids.append(i)
    paths = _accepting_paths(g, ids)
    if not paths:
        return None
    best = min(w for w, _ in paths)
    candidates = []
    for w, ev in paths:
        if w <= best + TIE_TOLERANCE:
            frame = _decode(g, tokens, ev)
            if frame is not None:
                key = (frame.intent, tuple((k, v.value, v.span) for k, v in frame.slots.items()))
                candidates.append((key, frame))
    if not candidates:
        return None
    return min(candidates, key=lambda c: c[0])[1]


def enumerate_paths(g: WeightedGrammar, limit: int) -> list[tuple[tuple[str, ...], SemanticFrame, float]]:
    """Every accepting path in depth-first arc order.

    Raises :class:`GrammarError` once more than ``limit`` paths are found.
    """
    out = []

    def visit(s, toks, w, ev):
        if s in g.finals:
            if len(out) >= limit:
                raise GrammarError(f"grammar has more than {limit} paths")
            frame = _decode(g, toks, ev)
            out.append((tuple(toks), frame, math.exp(-(w + g.finals[s]))))
        for a in g.out[s]:
            i, o = g.ilabel[a], g.olabel[a]
            pos = len(toks)
            nev = ev + ((pos, o),) if o else ev
            if i:
                toks.append(g.isyms[i])
                visit(g.dst[a], toks, w + g.weight[a], nev)
                toks.pop()
            else:
                visit(g.dst[a], toks, w + g.weight[a], nev)

    visit(g.start, [], 0.0, ())
    return out


# -- sampling ---------------------------------------------------------------


def _sampler_tables(g: WeightedGrammar):
    if g._sampler is None:
        tables = []
        for s in range(g.num_states):
            probs, targets = [], []
            if s in g.finals:
                probs.append(math.exp(-g.finals[s]))
                targets.append(-1)
            for a in g.out[s]:
                probs.append(math.exp(-g.weight[a]))
                targets.append(a)
            cum, acc = [], 0.0
            for p in probs:
                acc += p
                cum.append(acc)
            if cum:
                cum = [c / acc for c in cum]
            tables.append((cum, targets))
        g._sampler = tables
    return g._sampler


def sample_utterances(
    g: WeightedGrammar, n: int, seed: int | np.random.Generator = 0
) -> list[tuple[LabeledUtterance, SemanticFrame]]:
    """Draw ``n`` i.i.d. paths according to the arc probabilities.

    Output is a deterministic function of ``seed``. Pass a Generator to
    share a random stream between callers.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not g.finals:
        raise GrammarError("grammar accepts nothing; cannot sample")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tables = _sampler_tables(g)
    buf = rng.random(4096).tolist()
    k = 0
    out = []
    for _ in range(n):
        s = g.start
        toks: list[str] = []
        ev: list[tuple[int, int]] = []
        while True:
            cum, targets = tables[s]
            if k == len(buf):
                buf = rng.random(4096).tolist()
                k = 0
            u = buf[k]
            k += 1
            j = min(bisect_right(cum, u), len(cum) - 1)
            a = targets[j]
            if a == -1:
                break
            o = g.olabel[a]
            if o:
                ev.append((len(toks), o))
            i = g.ilabel[a]
            if i:
                toks.append(g.isyms[i])
            s = g.dst[a]
        frame = _decode(g, toks, ev)
        out.append((LabeledUtterance(frame.intent, tuple(toks)), frame))
    return out
