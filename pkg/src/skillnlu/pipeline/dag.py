"""Activities, recipes and the serializable DAG they are captured into.

An activity wraps a plain function and declares which of its arguments are
input and output artifacts; every other argument is a parameter::

    @activity(inputs="features_artifact", outputs="model_artifact")
    def train_classifier(features_artifact, model_artifact, epochs=10):
        model_artifact.put(fit(features_artifact.fetch(), epochs))

Called outside a recipe, an activity is just its function. Inside a recipe
body the call is recorded as a node instead::

    @recipe
    def build_ic_model(data_file: str, executor):
        data = executor.new_artifact(data_file)
        features = executor.new_artifact()
        model = executor.artifact("kv://models/classifier")
        extract_features(data, features)
        train_classifier(features, model)

The ``executor`` argument of a recipe receives a :class:`RecipeBuilder`
that vends symbolic artifacts during capture.
"""

from __future__ import annotations

import contextvars
import graphlib
import inspect
import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .artifacts import Artifact

__all__ = [
    "SCHEMA_VERSION",
    "PipelineError",
    "CycleError",
    "ProducerConflictError",
    "UnknownActivityError",
    "SchemaVersionError",
    "Param",
    "ArtifactRef",
    "ArtifactSpec",
    "NodeSpec",
    "RecipeParam",
    "RecipeDAG",
    "Activity",
    "activity",
    "Recipe",
    "recipe",
    "RecipeBuilder",
    "capture_recipe",
    "serialize_dag",
    "deserialize_dag",
    "registered_activities",
    "registered_recipes",
    "get_activity",
    "get_recipe",
]

SCHEMA_VERSION = 1
BUILDER_ARG = "executor"


class PipelineError(Exception):
    pass


class CycleError(PipelineError):
    pass


class ProducerConflictError(PipelineError):
    pass


class UnknownActivityError(PipelineError):
    pass


class SchemaVersionError(PipelineError):
    pass


_ACTIVITIES: dict[str, "Activity"] = {}
_RECIPES: dict[str, "Recipe"] = {}
_CAPTURE: contextvars.ContextVar["RecipeBuilder | None"] = contextvars.ContextVar("capture", default=None)


def registered_activities() -> dict[str, "Activity"]:
    return dict(_ACTIVITIES)


def registered_recipes() -> dict[str, "Recipe"]:
    return dict(_RECIPES)


def get_activity(name: str) -> "Activity":
    try:
        return _ACTIVITIES[name]
    except KeyError:
        raise UnknownActivityError(f"unknown activity {name!r}") from None


def get_recipe(name: str) -> "Recipe":
    try:
        return _RECIPES[name]
    except KeyError:
        raise PipelineError(f"unknown recipe {name!r}") from None


@dataclass(frozen=True)
class Param:
    """Placeholder for a recipe parameter resolved at execution time."""

    name: str

    def to_json(self) -> dict:
        return {"$param": self.name}


def _to_json(v: Any) -> Any:
    if isinstance(v, Param):
        return v.to_json()
    if isinstance(v, (list, tuple)):
        return [_to_json(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _to_json(x) for k, x in v.items()}
    if v is None or isinstance(v, (str, int, float, bool)):
        return v
    raise PipelineError(f"parameter value {v!r} is not JSON-serializable")


def _from_json(v: Any) -> Any:
    if isinstance(v, dict):
        if set(v) == {"$param"}:
            return Param(v["$param"])
        return {k: _from_json(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_from_json(x) for x in v]
    return v


def _resolve(v: Any, values: Mapping[str, Any]) -> Any:
    if isinstance(v, Param):
        if v.name not in values:
            raise PipelineError(f"missing value for recipe parameter {v.name!r}")
        return values[v.name]
    if isinstance(v, list):
        return [_resolve(x, values) for x in v]
    if isinstance(v, dict):
        return {k: _resolve(x, values) for k, x in v.items()}
    return v


@dataclass(frozen=True)
class ArtifactRef:
    """Symbolic artifact handed out while a recipe is captured."""

    id: str


@dataclass(frozen=True)
class ArtifactSpec:
    id: str
    # fixed URI, a Param placeholder, or None for an executor-vended intermediate
    uri: str | Param | None = None


@dataclass(frozen=True)
class NodeSpec:
    id: str
    activity: str
    inputs: Mapping[str, str] = field(default_factory=dict)
    outputs: Mapping[str, str] = field(default_factory=dict)
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class RecipeParam:
    name: str
    type: str = "str"
    default: Any = None
    required: bool = True


_TYPES: dict[str, Callable[[str], Any]] = {
    "str": str,
    "int": int,
    "float": float,
    "bool": lambda s: s if isinstance(s, bool) else str(s).lower() in ("1", "true", "yes", "on"),
}


class RecipeDAG:
    def __init__(self, name: str, params: Iterable[RecipeParam] = (), artifacts: Iterable[ArtifactSpec] = (),
                 nodes: Iterable[NodeSpec] = (), outputs: Iterable[str] = ()):
        self.name = name
        self.params = list(params)
        self.artifacts = {a.id: a for a in artifacts}
        self.nodes = list(nodes)
        self.outputs = list(outputs)

    # structure -------------------------------------------------------
    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def producers(self) -> dict[str, str]:
        """Artifact id -> producing node id (raises on two producers)."""
        out: dict[str, str] = {}
        for n in self.nodes:
            for a in n.outputs.values():
                if a in out:
                    raise ProducerConflictError(f"artifact {a!r} has two producers: {out[a]!r} and {n.id!r}")
                out[a] = n.id
        return out

    def consumers(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for n in self.nodes:
            for a in n.inputs.values():
                out.setdefault(a, []).append(n.id)
        return out

    def sources(self) -> list[str]:
        prod = self.producers()
        return sorted({a for n in self.nodes for a in n.inputs.values() if a not in prod})

    def sinks(self) -> list[str]:
        cons = self.consumers()
        return sorted({a for n in self.nodes for a in n.outputs.values() if a not in cons})

    def dependencies(self) -> dict[str, set[str]]:
        prod = self.producers()
        return {n.id: {prod[a] for a in n.inputs.values() if a in prod} for n in self.nodes}

    def dependents(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {n.id: set() for n in self.nodes}
        for n, deps in self.dependencies().items():
            for d in deps:
                out[d].add(n)
        return out

    def topological_order(self) -> list[str]:
        ts = graphlib.TopologicalSorter(self.dependencies())
        try:
            return list(ts.static_order())
        except graphlib.CycleError as e:
            raise CycleError(f"recipe {self.name!r} has a cycle through {e.args[1]}") from None

    def validate(self, check_activities: bool = True) -> "RecipeDAG":
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise PipelineError("duplicate node ids")
        if check_activities:
            for n in self.nodes:
                if n.activity not in _ACTIVITIES:
                    raise UnknownActivityError(f"node {n.id!r} uses unregistered activity {n.activity!r}")
        for n in self.nodes:
            for a in list(n.inputs.values()) + list(n.outputs.values()):
                if a not in self.artifacts:
                    raise PipelineError(f"node {n.id!r} references undeclared artifact {a!r}")
        prod = self.producers()
        self.topological_order()
        for a in self.sources():
            if self.artifacts[a].uri is None:
                raise PipelineError(f"source artifact {a!r} has no producer and no URI")
        for a in self.outputs:
            if a not in self.artifacts:
                raise PipelineError(f"recipe output {a!r} is not an artifact")
            if a not in prod:
                raise PipelineError(f"recipe output {a!r} has no producer")
        missing = set(self.sinks()) - set(self.outputs)
        if missing:
            raise PipelineError(f"sink artifacts not declared as outputs: {sorted(missing)}")
        return self

    # parameters ------------------------------------------------------
    def bind(self, values: Mapping[str, Any] | None = None) -> "RecipeDAG":
        """Copy with every parameter placeholder replaced by a concrete value."""
        vals = {}
        given = dict(values or {})
        for p in self.params:
            if p.name in given:
                v = given.pop(p.name)
                vals[p.name] = _TYPES.get(p.type, str)(v) if isinstance(v, str) and p.type != "str" else v
            elif not p.required:
                vals[p.name] = p.default
        if given:
            raise PipelineError(f"unknown recipe parameter(s): {sorted(given)}")
        arts = [ArtifactSpec(a.id, _resolve(a.uri, vals)) for a in self.artifacts.values()]
        for a in arts:
            if a.uri is not None and not isinstance(a.uri, str):
                raise PipelineError(f"artifact {a.id!r} URI must be a string")
        nodes = [NodeSpec(n.id, n.activity, dict(n.inputs), dict(n.outputs), _resolve(dict(n.params), vals))
                 for n in self.nodes]
        return RecipeDAG(self.name, [], arts, nodes, self.outputs)

    def with_uris(self, uris: Mapping[str, str]) -> "RecipeDAG":
        """Copy with some artifacts pointed at other URIs."""
        unknown = set(uris) - set(self.artifacts)
        if unknown:
            raise PipelineError(f"unknown artifact(s): {sorted(unknown)}")
        arts = [ArtifactSpec(a.id, uris.get(a.id, a.uri)) for a in self.artifacts.values()]
        return RecipeDAG(self.name, self.params, arts, self.nodes, self.outputs)

    # serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "params": [
                {"name": p.name, "type": p.type, "default": _to_json(p.default), "required": p.required}
                for p in self.params
            ],
            "artifacts": [
                {"id": a.id, "uri": _to_json(a.uri)} for a in sorted(self.artifacts.values(), key=lambda a: a.id)
            ],
            "nodes": [
                {"id": n.id, "activity": n.activity, "inputs": dict(sorted(n.inputs.items())),
                 "outputs": dict(sorted(n.outputs.items())), "params": _to_json(dict(sorted(n.params.items())))}
                for n in self.nodes
            ],
            "outputs": list(self.outputs),
        }

    @classmethod
    def from_dict(cls, d: Mapping, check_activities: bool = True) -> "RecipeDAG":
        ver = d.get("schema_version")
        if ver != SCHEMA_VERSION:
            raise SchemaVersionError(f"DAG schema version {ver!r} is not supported (expected {SCHEMA_VERSION})")
        try:
            dag = cls(
                d["name"],
                [RecipeParam(p["name"], p.get("type", "str"), _from_json(p.get("default")), p.get("required", True))
                 for p in d.get("params", [])],
                [ArtifactSpec(a["id"], _from_json(a.get("uri"))) for a in d.get("artifacts", [])],
                [NodeSpec(n["id"], n["activity"], dict(n.get("inputs", {})), dict(n.get("outputs", {})),
                          _from_json(n.get("params", {}))) for n in d.get("nodes", [])],
                d.get("outputs", []),
            )
        except (KeyError, TypeError) as e:
            raise PipelineError(f"malformed DAG document: {e}") from None
        return dag.validate(check_activities)

    def __eq__(self, other) -> bool:
        return isinstance(other, RecipeDAG) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"RecipeDAG({self.name!r}, nodes={len(self.nodes)}, artifacts={len(self.artifacts)})"


def serialize_dag(dag: RecipeDAG) -> str:
    return json.dumps(dag.to_dict(), indent=2, sort_keys=True)


def deserialize_dag(text: str, check_activities: bool = True) -> RecipeDAG:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise PipelineError(f"DAG is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise PipelineError("DAG document must be a JSON object")
    return RecipeDAG.from_dict(doc, check_activities)


class Activity:
    def __init__(self, fn: Callable, inputs: Iterable[str], outputs: Iterable[str],
                 name: str | None = None, version: str = "1"):
        self.fn = fn
        self.name = name or fn.__name__
        self.inputs = tuple(inputs)
        self.outputs = tuple(outputs)
        self.version = version
        self.signature = inspect.signature(fn)
        names = list(self.signature.parameters)
        for slot in self.inputs + self.outputs:
            if slot not in names:
                raise PipelineError(f"activity {self.name!r} declares {slot!r} but the function has no such argument")
        if set(self.inputs) & set(self.outputs):
            raise PipelineError(f"activity {self.name!r} uses an argument as both input and output")
        self.params = tuple(n for n in names if n not in self.inputs and n not in self.outputs)
        self.__doc__ = fn.__doc__
        self.__name__ = self.name

    def __repr__(self) -> str:
        return f"<activity {self.name} inputs={self.inputs} outputs={self.outputs}>"

    def __call__(self, *args, **kwargs):
        builder = _CAPTURE.get()
        if builder is not None:
            return builder.add_node(self, args, kwargs)
        return self.fn(*args, **kwargs)

    def invoke(self, inputs: Mapping[str, Any], outputs: Mapping[str, Any], params: Mapping[str, Any]):
        return self.fn(**inputs, **outputs, **params)


def _names(x: str | Iterable[str]) -> tuple[str, ...]:
    return (x,) if isinstance(x, str) else tuple(x)


def activity(inputs: str | Iterable[str] = (), outputs: str | Iterable[str] = (), *,
             name: str | None = None, version: str = "1"):
    """Register a function as an activity with the given artifact arguments."""

    def wrap(fn):
        act = Activity(fn, _names(inputs), _names(outputs), name, version)
        _ACTIVITIES[act.name] = act
        return act

    return wrap


class RecipeBuilder:
    """Collects artifacts and nodes while a recipe body runs."""

    def __init__(self, name: str):
        self.name = name
        self._artifacts: dict[str, ArtifactSpec] = {}
        self._nodes: list[NodeSpec] = []
        self._outputs: list[str] = []
        self._counter = 0

    def _new_id(self, base: str) -> str:
        base = re.sub(r"[^A-Za-z0-9_.-]+", "_", base).strip("_") or "artifact"
        aid, k = base, 1
        while aid in self._artifacts:
            k += 1
            aid = f"{base}_{k}"
        return aid

    def new_artifact(self, uri: str | Param | Artifact | None = None, name: str | None = None) -> ArtifactRef:
        """A source artifact at ``uri``, or an executor-vended intermediate when ``uri`` is None."""
        if isinstance(uri, Artifact):
            uri = uri.uri
        if name is None:
            if isinstance(uri, Param):
                name = uri.name
            elif uri is None:
                self._counter += 1
                name = f"tmp{self._counter}"
            else:
                name = uri.rsplit("/", 1)[-1] or "artifact"
        aid = self._new_id(name)
        self._artifacts[aid] = ArtifactSpec(aid, uri)
        return ArtifactRef(aid)

    def artifact(self, uri: str | Param | Artifact, name: str | None = None) -> ArtifactRef:
        return self.new_artifact(uri, name)

    def output(self, *refs: ArtifactRef) -> None:
        for r in refs:
            if r.id not in self._outputs:
                self._outputs.append(r.id)

    def _ref(self, v: Any, what: str) -> str:
        if isinstance(v, ArtifactRef):
            if v.id not in self._artifacts:
                raise PipelineError(f"{what} refers to an artifact from another recipe")
            return v.id
        if isinstance(v, Artifact):
            return self.new_artifact(v).id
        raise PipelineError(f"{what} must be an artifact, got {type(v).__name__}")

    def add_node(self, act: Activity, args, kwargs) -> str:
        if act.name not in _ACTIVITIES or _ACTIVITIES[act.name] is not act:
            raise UnknownActivityError(f"activity {act.name!r} is not registered")
        try:
            bound = act.signature.bind_partial(*args, **kwargs)
        except TypeError as e:
            raise PipelineError(f"bad arguments for activity {act.name!r}: {e}") from None
        args_ = bound.arguments
        ins, outs, params = {}, {}, {}
        for slot in act.inputs:
            if slot not in args_:
                raise PipelineError(f"activity {act.name!r} called without input {slot!r}")
            ins[slot] = self._ref(args_[slot], f"input {slot!r} of {act.name!r}")
        for slot in act.outputs:
            if slot not in args_:
                raise PipelineError(f"activity {act.name!r} called without output {slot!r}")
            outs[slot] = self._ref(args_[slot], f"output {slot!r} of {act.name!r}")
        for p in act.params:
            if p in args_:
                _to_json(args_[p])
                params[p] = args_[p]
        nid, k = act.name, 1
        while any(n.id == nid for n in self._nodes):
            k += 1
            nid = f"{act.name}#{k}"
        self._nodes.append(NodeSpec(nid, act.name, ins, outs, params))
        return nid

    def finish(self, params: Iterable[RecipeParam] = ()) -> RecipeDAG:
        used = {a for n in self._nodes for a in list(n.inputs.values()) + list(n.outputs.values())}
        arts = [a for a in self._artifacts.values() if a.id in used or a.id in self._outputs]
        dag = RecipeDAG(self.name, params, arts, self._nodes, self._outputs)
        for s in dag.sinks():
            if s not in dag.outputs:
                dag.outputs.append(s)
        return dag.validate()


def _type_name(annotation: Any) -> str:
    if isinstance(annotation, str):
        return annotation if annotation in _TYPES else "str"
    for name, t in (("bool", bool), ("int", int), ("float", float), ("str", str)):
        if annotation is t:
            return name
    return "str"


class Recipe:
    def __init__(self, fn: Callable, name: str | None = None):
        self.fn = fn
        self.name = name or fn.__name__
        self.__doc__ = fn.__doc__
        sig = inspect.signature(fn)
        self.params: list[RecipeParam] = []
        for p in sig.parameters.values():
            if p.name == BUILDER_ARG:
                continue
            has_default = p.default is not inspect.Parameter.empty
            default = p.default if has_default else None
            t = _type_name(p.annotation) if p.annotation is not inspect.Parameter.empty else (
                _type_name(type(default)) if has_default and default is not None else "str")
            self.params.append(RecipeParam(p.name, t, default, not has_default))
        self._wants_builder = BUILDER_ARG in sig.parameters

    def __repr__(self) -> str:
        return f"<recipe {self.name}>"

    def capture(self, **bindings) -> RecipeDAG:
        """Trace the recipe body into a DAG.

        Parameters given in ``bindings`` are baked in; the rest stay
        symbolic and are resolved when the DAG is executed.
        """
        known = {p.name for p in self.params}
        extra = set(bindings) - known
        if extra:
            raise PipelineError(f"unknown recipe parameter(s): {sorted(extra)}")
        builder = RecipeBuilder(self.name)
        kwargs = {p.name: bindings.get(p.name, Param(p.name)) for p in self.params}
        if self._wants_builder:
            kwargs[BUILDER_ARG] = builder
        token = _CAPTURE.set(builder)
        try:
            self.fn(**kwargs)
        finally:
            _CAPTURE.reset(token)
        params = [p for p in self.params if p.name not in bindings]
        return builder.finish(params)

    def __call__(self, executor=None, **params):
        """Capture and run with the given parameter values; returns the run report."""
        from .executors import execute

        return execute(self.capture(), executor=executor, params=params)


def recipe(fn: Callable | None = None, *, name: str | None = None):
    """Register a recipe; usable bare (``@recipe``) or with a name."""

    def wrap(f):
        r = Recipe(f, name)
        _RECIPES[r.name] = r
        return r

    return wrap(fn) if fn is not None else wrap


def capture_recipe(definition: Recipe | Callable | str, **bindings) -> RecipeDAG:
    """Capture a recipe, a plain recipe function or a registered recipe name into a validated DAG."""
    if isinstance(definition, str):
        definition = get_recipe(definition)
    r = definition if isinstance(definition, Recipe) else Recipe(definition)
    return r.capture(**bindings)
