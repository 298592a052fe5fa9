"""A small meaning-representation ontology of Actions, Entity Types and Properties.

Actions declare roles; each role requires that the entity bound to it
possesses a given property (a CallAction needs a ``callable`` entity).
Binding entity types to an action's roles compiles a builtin intent whose
slots are the roles and whose sample utterances come from the action's
carrier templates.

The bundled ``data/ontology.json`` is an invented desk-scale fixture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .interaction_model import (
    CustomSlotType,
    IntentDecl,
    IntentSchema,
    InteractionModel,
    LabeledUtterance,
    SlotDecl,
    SlotRef,
    _parse_template,
)

__all__ = [
    "OntologyError",
    "EntityType",
    "RequiredProperty",
    "ActionTemplate",
    "CompatibilityResult",
    "CompiledIntent",
    "Ontology",
    "load_ontology",
    "check_compatibility",
    "compile_builtin_intent",
]


class OntologyError(ValueError):
    pass


@dataclass(frozen=True)
class EntityType:
    name: str
    properties: frozenset[str] = frozenset()
    sample_values: tuple[str, ...] = ()

    def with_properties(self, *props: str) -> "EntityType":
        return EntityType(self.name, self.properties | frozenset(props), self.sample_values)


@dataclass(frozen=True)
class RequiredProperty:
    property: str
    role: str = ""


@dataclass(frozen=True)
class ActionTemplate:
    name: str
    # role name -> property an entity must possess to fill that role
    required_properties: Mapping[str, RequiredProperty]
    carrier_templates: tuple[str, ...] = ()

    def __post_init__(self):
        for tpl in self.carrier_templates:
            for ref in _template_refs(tpl):
                if ref not in self.required_properties:
                    raise OntologyError(
                        f"{self.name}: carrier template {tpl!r} uses undeclared property {ref!r}"
                    )

    def __hash__(self):
        return hash((self.name, self.carrier_templates))


def _template_refs(tpl: str) -> list[str]:
    return [t.name for t in _parse_template(tpl, 0) if isinstance(t, SlotRef)]


@dataclass(frozen=True)
class CompatibilityResult:
    status: str  # "compatible" | "incompatible" | "incomplete"
    missing: tuple[str, ...] = ()
    unbound: tuple[str, ...] = ()

    @property
    def compatible(self) -> bool:
        return self.status == "compatible"


def check_compatibility(
    action: ActionTemplate, binding: Mapping[str, EntityType]
) -> CompatibilityResult:
    """Check a role binding against the action's required properties.

    ``missing`` lists the required property of every role that is unbound or
    bound to an entity lacking that property, in role declaration order.
    """
    unknown = [r for r in binding if r not in action.required_properties]
    if unknown:
        raise OntologyError(f"{action.name} has no property {unknown[0]!r}")
    missing: list[str] = []
    unbound: list[str] = []
    conflict = False
    for role, req in action.required_properties.items():
        ent = binding.get(role)
        if ent is None:
            unbound.append(role)
            missing.append(req.property)
        elif req.property not in ent.properties:
            conflict = True
            missing.append(req.property)
    if conflict:
        status = "incompatible"
    elif unbound:
        status = "incomplete"
    else:
        status = "compatible"
    return CompatibilityResult(status, tuple(missing), tuple(unbound))


@dataclass(frozen=True)
class CompiledIntent:
    name: str
    slots: tuple[tuple[str, EntityType], ...]
    samples: tuple[LabeledUtterance, ...]

    def to_interaction_model(self, invocation_name: str = "builtin") -> InteractionModel:
        """The compiled intent as a standalone interaction model fragment."""
        decl = IntentDecl(self.name, tuple(SlotDecl(role, ent.name) for role, ent in self.slots))
        types: dict[str, CustomSlotType] = {}
        for _, ent in self.slots:
            types.setdefault(ent.name, CustomSlotType(ent.name, ent.sample_values))
        return InteractionModel(IntentSchema((decl,)), tuple(types.values()), self.samples, invocation_name)


def compile_builtin_intent(
    action: ActionTemplate, binding: Mapping[str, EntityType]
) -> CompiledIntent:
    if not action.carrier_templates:
        raise OntologyError(f"{action.name} has no surface forms")
    result = check_compatibility(action, binding)
    incompatible = [
        role for role, ent in binding.items()
        if action.required_properties[role].property not in ent.properties
    ]
    if incompatible:
        raise OntologyError(
            f"incompatible binding for {action.name}: missing {list(result.missing)}"
        )

    used: list[str] = []
    for tpl in action.carrier_templates:
        for ref in _template_refs(tpl):
            if ref not in binding:
                raise OntologyError(f"carrier template {tpl!r} references unbound property {ref!r}")
            if ref not in used:
                used.append(ref)
    roles = [r for r in action.required_properties if r in used]
    bound_names = [binding[r].name for r in action.required_properties if r in binding]
    name = ".".join([action.name] + bound_names)
    samples = tuple(
        LabeledUtterance(name, _parse_template(tpl, i + 1), line=i + 1)
        for i, tpl in enumerate(action.carrier_templates)
    )
    return CompiledIntent(name, tuple((r, binding[r]) for r in roles), samples)


@dataclass
class Ontology:
    properties: dict[str, str] = field(default_factory=dict)
    entities: dict[str, EntityType] = field(default_factory=dict)
    actions: dict[str, ActionTemplate] = field(default_factory=dict)

    def entity(self, name: str) -> EntityType:
        try:
            return self.entities[name]
        except KeyError:
            raise OntologyError(f"unknown entity type {name!r}") from None

    def action(self, name: str) -> ActionTemplate:
        try:
            return self.actions[name]
        except KeyError:
            raise OntologyError(f"unknown action {name!r}") from None

    def compatible_entities(self, action: str, role: str) -> list[EntityType]:
        prop = self.action(action).required_properties[role].property
        return [e for e in self.entities.values() if prop in e.properties]

    def compile(self, action: str, **binding: str) -> CompiledIntent:
        """Shorthand: ``onto.compile("AddAction", object="GroceryItem", ...)``."""
        act = self.action(action)
        return compile_builtin_intent(act, {r: self.entity(e) for r, e in binding.items()})

    @classmethod
    def from_dict(cls, doc: dict) -> "Ontology":
        props = {p["name"]: p.get("description", "") for p in doc.get("properties", [])}
        onto = cls(properties=props)
        for e in doc.get("entities", []):
            unknown = [p for p in e.get("properties", []) if p not in props]
            if unknown:
                raise OntologyError(f"entity {e['name']} uses undeclared property {unknown[0]!r}")
            if len(set(e.get("properties", []))) != len(e.get("properties", [])):
                raise OntologyError(f"entity {e['name']} lists a property twice")
            onto.entities[e["name"]] = EntityType(
                e["name"], frozenset(e.get("properties", [])), tuple(e.get("sample_values", []))
            )
        for a in doc.get("actions", []):
            req = {}
            for role, spec in a.get("required_properties", {}).items():
                if spec["property"] not in props:
                    raise OntologyError(f"action {a['name']} requires undeclared property {spec['property']!r}")
                req[role] = RequiredProperty(spec["property"], spec.get("role", ""))
            onto.actions[a["name"]] = ActionTemplate(a["name"], req, tuple(a.get("carrier_templates", [])))
        return onto


def load_ontology(path: str | Path | None = None) -> Ontology:
    """Load an ontology file, or the bundled fixture when ``path`` is None."""
    if path is None:
        text = resources.files("skillnlu.data").joinpath("ontology.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return Ontology.from_dict(json.loads(text))
