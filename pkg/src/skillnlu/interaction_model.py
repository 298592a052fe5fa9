"""Skill interaction models: intent schema, slot types, sample utterances.

An interaction model is the developer-facing definition of a skill. It is
parsed from three kinds of files:

* an intent schema (JSON, ``{"intents": [{"intent": ..., "slots": [...]}]}``),
* sample utterances, one per line, ``IntentName some words with {Slot}``,
* custom slot type value lists (JSON ``{"name": ..., "values": [...]}`` or
  plain text with one value per line).

Parsing raises :class:`InteractionModelError` on malformed input. Semantic
problems (dangling references, empty coverage, ...) are reported as data by
:func:`validate_interaction_model` instead.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Union

from .text import normalize_phrase, normalize_token

__all__ = [
    "InteractionModelError",
    "SlotDecl",
    "IntentDecl",
    "IntentSchema",
    "CustomSlotType",
    "SlotRef",
    "LabeledUtterance",
    "InteractionModel",
    "Violation",
    "ValidationReport",
    "IDENTIFIER_RE",
    "builtin_slot_types",
    "parse_intent_schema",
    "serialize_intent_schema",
    "parse_sample_utterances",
    "serialize_sample_utterances",
    "parse_slot_type",
    "validate_interaction_model",
    "load_interaction_model",
    "save_interaction_model",
    "interaction_model_from_files",
]

IDENTIFIER_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_.]*$")
INVOCATION_RE = re.compile(r"^[a-z]+( [a-z]+)*$")

SCHEMA_FILE = "intent_schema.json"
SAMPLES_FILE = "sample_utterances.txt"
SLOT_TYPES_DIR = "slot_types"
INVOCATION_FILE = "invocation_name.txt"


class InteractionModelError(ValueError):
    pass


@dataclass(frozen=True)
class SlotDecl:
    name: str
    type: str
    required: bool = False
    prompt: str | None = None


@dataclass(frozen=True)
class IntentDecl:
    name: str
    slots: tuple[SlotDecl, ...] = ()
    confirmation_required: bool = False
    confirmation_prompt: str | None = None

    def slot(self, name: str) -> SlotDecl | None:
        for s in self.slots:
            if s.name == name:
                return s
        return None

    @property
    def slot_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots)


@dataclass(frozen=True)
class IntentSchema:
    intents: tuple[IntentDecl, ...] = ()

    def intent(self, name: str) -> IntentDecl | None:
        for i in self.intents:
            if i.name == name:
                return i
        return None

    @property
    def intent_names(self) -> tuple[str, ...]:
        return tuple(i.name for i in self.intents)


@dataclass(frozen=True)
class CustomSlotType:
    name: str
    values: tuple[str, ...]

    def normalized_values(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for v in self.values:
            n = normalize_phrase(v)
            if n:
                seen.setdefault(n)
        return tuple(seen)


@dataclass(frozen=True)
class SlotRef:
    name: str

    def __str__(self) -> str:
        return "{%s}" % self.name


Token = Union[str, SlotRef]


@dataclass(frozen=True)
class LabeledUtterance:
    intent: str
    template: tuple[Token, ...]
    line: int | None = field(default=None, compare=False)

    @property
    def slot_refs(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.template if isinstance(t, SlotRef))

    def render(self) -> str:
        return " ".join([self.intent] + [str(t) for t in self.template])


@lru_cache(maxsize=None)
def builtin_slot_types() -> dict[str, tuple[str, ...]]:
    """Value lists for the builtin (``AMAZON.*``) slot types shipped as data."""
    raw = resources.files("skillnlu.data").joinpath("builtin_slot_types.json").read_text("utf-8")
    return {k: tuple(normalize_phrase(v) for v in vals) for k, vals in json.loads(raw).items()}


@dataclass(frozen=True)
class InteractionModel:
    schema: IntentSchema
    slot_types: tuple[CustomSlotType, ...] = ()
    samples: tuple[LabeledUtterance, ...] = ()
    invocation_name: str = ""

    def slot_type(self, name: str) -> CustomSlotType | None:
        for st in self.slot_types:
            if st.name == name:
                return st
        return None

    def slot_values(self, type_name: str) -> tuple[str, ...]:
        """Normalized values of a custom or builtin slot type."""
        st = self.slot_type(type_name)
        if st is not None:
            return st.normalized_values()
        builtin = builtin_slot_types().get(type_name)
        if builtin is None:
            raise KeyError(type_name)
        return builtin

    def samples_for(self, intent: str) -> list[LabeledUtterance]:
        return [s for s in self.samples if s.intent == intent]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": json.loads(serialize_intent_schema(self.schema)),
            "slot_types": [{"name": st.name, "values": list(st.values)} for st in self.slot_types],
            "samples": serialize_sample_utterances(self.samples),
            "invocation_name": self.invocation_name,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "InteractionModel":
        return cls(
            schema=parse_intent_schema(json.dumps(d["schema"])),
            slot_types=tuple(CustomSlotType(st["name"], tuple(st["values"])) for st in d["slot_types"]),
            samples=tuple(parse_sample_utterances(d["samples"])),
            invocation_name=d["invocation_name"],
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- intent schema ----------------------------------------------------------


def parse_intent_schema(json_text: str) -> IntentSchema:
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as e:
        raise InteractionModelError(f"malformed JSON: {e}") from e
    if not isinstance(doc, dict) or "intents" not in doc:
        raise InteractionModelError('intent schema is missing the "intents" key')
    if not isinstance(doc["intents"], list):
        raise InteractionModelError('"intents" must be a list')

    intents = []
    seen = set()
    for i, entry in enumerate(doc["intents"]):
        if not isinstance(entry, dict) or not isinstance(entry.get("intent"), str):
            raise InteractionModelError(f"intents[{i}]: missing \"intent\" name")
        name = entry["intent"]
        if name in seen:
            raise InteractionModelError(f"duplicate intent name {name!r}")
        seen.add(name)
        slots = []
        raw_slots = entry.get("slots", [])
        if not isinstance(raw_slots, list):
            raise InteractionModelError(f"intent {name!r}: \"slots\" must be a list")
        for j, s in enumerate(raw_slots):
            if not isinstance(s, dict):
                raise InteractionModelError(f"intent {name!r} slots[{j}]: expected an object")
            for key in ("name", "type"):
                if not isinstance(s.get(key), str):
                    raise InteractionModelError(f"intent {name!r} slots[{j}]: missing {key!r}")
            slots.append(
                SlotDecl(
                    name=s["name"],
                    type=s["type"],
                    required=bool(s.get("required", False)),
                    prompt=s.get("prompt"),
                )
            )
        intents.append(
            IntentDecl(
                name=name,
                slots=tuple(slots),
                confirmation_required=bool(entry.get("confirmationRequired", False)),
                confirmation_prompt=entry.get("confirmationPrompt"),
            )
        )
    return IntentSchema(tuple(intents))


def serialize_intent_schema(schema: IntentSchema) -> str:
    """Inverse of :func:`parse_intent_schema`; optional keys only when set."""
    out = []
    for intent in schema.intents:
        slots = []
        for s in intent.slots:
            d: dict[str, Any] = {"name": s.name, "type": s.type}
            if s.required:
                d["required"] = True
            if s.prompt is not None:
                d["prompt"] = s.prompt
            slots.append(d)
        entry: dict[str, Any] = {"intent": intent.name, "slots": slots}
        if intent.confirmation_required:
            entry["confirmationRequired"] = True
        if intent.confirmation_prompt is not None:
            entry["confirmationPrompt"] = intent.confirmation_prompt
        out.append(entry)
    return json.dumps({"intents": out}, indent=2)


# -- sample utterances ------------------------------------------------------


def _parse_template(body: str, lineno: int) -> tuple[Token, ...]:
    tokens: list[Token] = []
    buf: list[str] = []

    def flush():
        for raw in "".join(buf).split():
            tok = normalize_token(raw)
            if tok:
                tokens.append(tok)
        buf.clear()

    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "{":
            close = body.find("}", i + 1)
            nested = body.find("{", i + 1)
            if close == -1 or (nested != -1 and nested < close):
                raise InteractionModelError(f"line {lineno}: unbalanced braces")
            flush()
            name = body[i + 1 : close].strip()
            if not name:
                raise InteractionModelError(f"line {lineno}: empty slot reference")
            tokens.append(SlotRef(name))
            i = close + 1
        elif ch == "}":
            raise InteractionModelError(f"line {lineno}: unbalanced braces")
        else:
            buf.append(ch)
            i += 1
    flush()
    return tuple(tokens)


def parse_sample_utterances(text: str) -> list[LabeledUtterance]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) < 2:
            raise InteractionModelError(f"line {lineno}: no utterance after intent {parts[0]!r}")
        intent, body = parts
        template = _parse_template(body, lineno)
        if not template:
            raise InteractionModelError(f"line {lineno}: utterance is empty after normalization")
        out.append(LabeledUtterance(intent, template, line=lineno))
    return out


def serialize_sample_utterances(samples: Iterable[LabeledUtterance]) -> str:
    return "".join(s.render() + "\n" for s in samples)


# -- slot types -------------------------------------------------------------


def parse_slot_type(text: str, name: str | None = None) -> CustomSlotType:
    """Parse a slot type from JSON or from one-value-per-line text.

    For the text form ``name`` must be given (usually the file stem).
    """
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise InteractionModelError(f"malformed slot type JSON: {e}") from e
        if not isinstance(doc.get("name"), str) or not isinstance(doc.get("values"), list):
            raise InteractionModelError('slot type JSON needs "name" and "values"')
        return CustomSlotType(doc["name"], tuple(str(v) for v in doc["values"]))
    if name is None:
        raise InteractionModelError("plain-text slot type needs a name")
    values = tuple(line.strip() for line in text.splitlines() if line.strip())
    return CustomSlotType(name, values)


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def buildable(self) -> bool:
        return not self.violations

    def add(self, location: str, message: str) -> None:
        self.violations.append(Violation(location, message))

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]

    def __iter__(self):
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


def _ident_ok(x: Any) -> bool:
    return isinstance(x, str) and bool(IDENTIFIER_RE.match(x))


def _sample_loc(i: int, s: Any) -> str:
    line = getattr(s, "line", None)
    return f"samples line {line}" if line else f"samples[{i}]"


def validate_interaction_model(model: InteractionModel) -> ValidationReport:
    """Check a parsed model; never raises, every defect becomes a violation."""
    report = ValidationReport()
    try:
        _validate(model, report)
    except Exception as e:  # adversarial objects must not escape as crashes
        report.add("model", f"malformed model object: {type(e).__name__}: {e}")
    return report


def _validate(model: InteractionModel, report: ValidationReport) -> None:
    schema = getattr(model, "schema", None)
    intents = getattr(schema, "intents", None)
    if not isinstance(intents, (tuple, list)):
        report.add("schema", "schema has no intent list")
        intents = ()
    if not intents:
        report.add("schema", "model declares no intents")

    custom: dict[str, Any] = {}
    slot_types = getattr(model, "slot_types", ())
    if not isinstance(slot_types, (tuple, list)):
        report.add("slot_types", "slot types must be a list")
        slot_types = ()
    for st in slot_types:
        name = getattr(st, "name", None)
        loc = f"slot_types[{name}]"
        if not _ident_ok(name):
            report.add(loc, f"invalid slot type name {name!r}")
            continue
        if name in custom:
            report.add(loc, "duplicate slot type name")
            continue
        custom[name] = st
        values = getattr(st, "values", None)
        if not isinstance(values, (tuple, list)) or not all(isinstance(v, str) for v in values):
            report.add(loc, "slot type values must be strings")
            continue
        normalized = [normalize_phrase(v) for v in values]
        if not any(normalized):
            report.add(loc, "slot type has no values")
        seen: set[str] = set()
        for raw, n in zip(values, normalized):
            if n and n in seen:
                report.add(loc, f"duplicate slot value {raw!r}")
            seen.add(n)
    builtins = builtin_slot_types()

    declared: dict[str, IntentDecl] = {}
    for i, intent in enumerate(intents):
        name = getattr(intent, "name", None)
        loc = f"schema.intents[{i}]"
        if not _ident_ok(name):
            report.add(loc, f"invalid intent name {name!r}")
            continue
        if name in declared:
            report.add(loc, f"duplicate intent name {name!r}")
            continue
        declared[name] = intent
        slot_names: set[str] = set()
        slots = getattr(intent, "slots", ())
        if not isinstance(slots, (tuple, list)):
            report.add(loc, "slots must be a list")
            continue
        for j, slot in enumerate(slots):
            sloc = f"{loc}.slots[{j}]"
            sname = getattr(slot, "name", None)
            stype = getattr(slot, "type", None)
            if not _ident_ok(sname):
                report.add(sloc, f"invalid slot name {sname!r}")
                continue
            if sname in slot_names:
                report.add(sloc, f"duplicate slot name {sname!r} in intent {name}")
            slot_names.add(sname)
            if not isinstance(stype, str) or (stype not in custom and stype not in builtins):
                report.add(sloc, f"unresolved slot type {stype!r}")

    covered: set[str] = set()
    samples = getattr(model, "samples", ())
    if not isinstance(samples, (tuple, list)):
        report.add("samples", "samples must be a list")
        samples = ()
    for i, s in enumerate(samples):
        loc = _sample_loc(i, s)
        intent_name = getattr(s, "intent", None)
        template = getattr(s, "template", None)
        if not isinstance(template, (tuple, list)) or not template:
            report.add(loc, "empty sample utterance")
            continue
        decl = declared.get(intent_name) if isinstance(intent_name, str) else None
        if decl is None:
            report.add(loc, f"sample references undeclared intent {intent_name!r}")
            continue
        covered.add(intent_name)
        refs: set[str] = set()
        for tok in template:
            if isinstance(tok, SlotRef):
                if decl.slot(tok.name) is None:
                    report.add(loc, f"unresolved slot reference {{{tok.name}}}")
                elif tok.name in refs:
                    report.add(loc, f"slot {{{tok.name}}} referenced more than once")
                refs.add(tok.name)
            elif not isinstance(tok, str) or not tok:
                report.add(loc, f"invalid token {tok!r}")

    for name in declared:
        if name not in covered:
            report.add(f"intent {name}", "intent has no sample utterances")

    inv = getattr(model, "invocation_name", None)
    if not isinstance(inv, str) or not INVOCATION_RE.match(inv):
        report.add("invocation_name", f"invocation name {inv!r} must be lowercase words")


# -- model directories ------------------------------------------------------


def load_interaction_model(path: str | Path) -> InteractionModel:
    """Load a model directory.

    Layout: ``intent_schema.json``, ``sample_utterances.txt``, optional
    ``slot_types/*.json|*.txt`` and ``invocation_name.txt``.
    """
    root = Path(path)
    if not root.is_dir():
        raise InteractionModelError(f"{root} is not a model directory")
    files = {
        f.relative_to(root).as_posix(): f.read_text("utf-8")
        for f in sorted(root.rglob("*"))
        if f.is_file()
    }
    return interaction_model_from_files(files)


def interaction_model_from_files(files: Mapping[str, str]) -> InteractionModel:
    """Build a model from a mapping of relative file names to contents (directory layout)."""
    try:
        schema_text = files[SCHEMA_FILE]
        samples_text = files[SAMPLES_FILE]
    except KeyError as e:
        raise InteractionModelError(f"model directory is missing {e.args[0]}") from None
    schema = parse_intent_schema(schema_text)
    samples = parse_sample_utterances(samples_text)
    slot_types = []
    prefix = SLOT_TYPES_DIR + "/"
    for name in sorted(files):
        if name.startswith(prefix) and "/" not in name[len(prefix):]:
            stem, dot, ext = name[len(prefix):].rpartition(".")
            if dot and ext in ("json", "txt"):
                slot_types.append(parse_slot_type(files[name], name=stem))
    invocation = files.get(INVOCATION_FILE, "").strip()
    return InteractionModel(schema, tuple(slot_types), tuple(samples), invocation)


def save_interaction_model(model: InteractionModel, path: str | Path) -> Path:
    root = Path(path)
    (root / SLOT_TYPES_DIR).mkdir(parents=True, exist_ok=True)
    (root / SCHEMA_FILE).write_text(serialize_intent_schema(model.schema) + "\n", "utf-8")
    (root / SAMPLES_FILE).write_text(serialize_sample_utterances(model.samples), "utf-8")
    for st in model.slot_types:
        doc = {"name": st.name, "values": list(st.values)}
        (root / SLOT_TYPES_DIR / f"{st.name}.json").write_text(json.dumps(doc, indent=2) + "\n", "utf-8")
    (root / INVOCATION_FILE).write_text(model.invocation_name + "\n", "utf-8")
    return root
