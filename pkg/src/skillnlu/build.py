"""Skill build: interaction model in, deployable bundle out.

The stages are ordinary functions so they can be called directly
(:func:`build_bundle`) or run as activities of the ``build_skill``
recipe, where the intent and slot models train on independent branches.
Both routes produce byte-identical bundles for the same model and config.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Sequence

from .features import (
    DEFAULT_FPR,
    BloomFilter,
    extract_intent_features,
    gazetteer_from_values,
    match_gazetteers,
    sentence_tagger_features,
)
from .frames import SemanticFrame
from .grammar import WeightedGrammar, apply_max_entropy_priors, build_grammar, sample_utterances
from .interaction_model import (
    InteractionModel,
    InteractionModelError,
    interaction_model_from_files,
    load_interaction_model,
    validate_interaction_model,
)
from .models import CrfModel, MaxEntModel, QuantizedModel, TrainConfig, quantize_model, train_crf, train_maxent
from .models.crf import OUTSIDE
from .models.optim import default_vectorizer
from .pipeline.dag import ArtifactSpec, NodeSpec, RecipeDAG, activity, recipe
from .runtime.bundle import SkillModelBundle
from .runtime.store import ModelStore

__all__ = [
    "BuildConfig",
    "ValidationFailed",
    "build_bundle",
    "build_skill",
    "build_skills_dag",
    "bio_tags",
    "build_gazetteers",
    "compile_grammar",
    "featurize",
    "load_model_source",
    "sample_training_data",
    "skill_id_for",
    "train_intent_model",
    "train_slot_model",
]


class ValidationFailed(InteractionModelError):
    """The interaction model has violations; ``violations`` lists them."""

    def __init__(self, violations: Sequence[Any]):
        self.violations = list(violations)
        super().__init__("interaction model does not validate:\n" + "\n".join(f"  {v}" for v in self.violations))


@dataclass(frozen=True)
class BuildConfig:
    seed: int = 0
    samples_per_intent: int = 200
    max_samples: int = 20_000
    max_entropy: bool = True
    gazetteers: bool = True
    bloom_fpr: float = DEFAULT_FPR
    # 0 keeps float64 weights
    quantize_bits: int = 8
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.samples_per_intent < 1 or self.max_samples < 1:
            raise ValueError("sample counts must be >= 1")
        if not 0 < self.bloom_fpr < 1:
            raise ValueError("bloom_fpr must be in (0, 1)")
        if self.quantize_bits not in (0, 8):
            raise ValueError("quantize_bits must be 8 or 0 (no quantization)")
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", replace(self.train, seed=self.seed))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | None = None, **overrides) -> "BuildConfig":
        """Accepts nested ``{"train": {...}}`` as well as flat training keys."""
        d = {**(d or {}), **{k: v for k, v in overrides.items() if v is not None}}
        own = {f for f in cls.__dataclass_fields__ if f != "train"}
        train_keys = set(TrainConfig.__dataclass_fields__)
        unknown = set(d) - own - train_keys - {"train"}
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        train = dict(d.get("train") or {})
        train.update({k: v for k, v in d.items() if k in train_keys and k not in own})
        seed = int(d.get("seed", train.get("seed", 0)))
        train["seed"] = seed
        return cls(**{k: v for k, v in d.items() if k in own and k != "seed"}, seed=seed,
                   train=TrainConfig(**train))

    @classmethod
    def from_json(cls, text: str | None, seed: int | None = None) -> "BuildConfig":
        return cls.from_dict(json.loads(text) if text else {}, seed=seed)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


# -- stages -------------------------------------------------------------------


def skill_id_for(model: InteractionModel, fallback: str = "skill") -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", model.invocation_name.lower()).strip("-")
    return slug or fallback


def load_model_source(data: bytes | str | Mapping) -> InteractionModel:
    """Parse a model from a directory manifest or a serialized model, then validate it."""
    obj = json.loads(data) if isinstance(data, (bytes, str)) else data
    if "directory" in obj:
        model = interaction_model_from_files(obj["directory"])
    elif "schema" in obj:
        model = InteractionModel.from_dict(obj)
    else:
        raise InteractionModelError("unrecognized model source: expected a model directory or model JSON")
    report = validate_interaction_model(model)
    if not report.buildable:
        raise ValidationFailed(report.violations)
    return model


def compile_grammar(model: InteractionModel, config: BuildConfig) -> WeightedGrammar:
    return apply_max_entropy_priors(build_grammar(model, max_entropy=False), enabled=config.max_entropy)


def sample_training_data(grammar: WeightedGrammar, model: InteractionModel,
                         config: BuildConfig) -> list[tuple[tuple[str, ...], SemanticFrame]]:
    n = min(config.samples_per_intent * len(model.schema.intents), config.max_samples)
    return [(tuple(u.template), f) for u, f in sample_utterances(grammar, n, seed=config.seed)]


def build_gazetteers(model: InteractionModel, config: BuildConfig) -> dict[str, BloomFilter]:
    if not config.gazetteers:
        return {}
    types = sorted({s.type for i in model.schema.intents for s in i.slots})
    out = {}
    for t in types:
        values = model.slot_values(t)
        if values:
            out[t] = gazetteer_from_values(t, values, config.bloom_fpr)
    return out


def bio_tags(tokens: Sequence[str], frame: SemanticFrame) -> list[str]:
    tags = [OUTSIDE] * len(tokens)
    for name, v in frame.slots.items():
        if v.span is None:
            continue
        s, e = v.span
        tags[s] = f"B-{name}"
        for i in range(s + 1, e):
            tags[i] = f"I-{name}"
    return tags


def featurize(samples, gazetteers: Mapping[str, BloomFilter]) -> dict:
    """Raw feature dicts for both models; vectorization happens at training time."""
    gz = [gazetteers[k] for k in sorted(gazetteers)]
    intent, tagger = [], []
    for tokens, frame in samples:
        spans = match_gazetteers(tokens, gz) if gz else []
        intent.append((extract_intent_features(tokens, spans=spans), frame.intent))
        tagger.append((sentence_tagger_features(tokens, spans=spans), bio_tags(tokens, frame)))
    return {"intent": intent, "tagger": tagger}


def train_intent_model(features: dict, model: InteractionModel, config: BuildConfig) -> MaxEntModel:
    data = features["intent"]
    vec = default_vectorizer(config.train, (f for f, _ in data))
    seen = {lab for _, lab in data}
    labels = [i.name for i in model.schema.intents if i.name in seen]
    return train_maxent([(vec.transform(f), lab) for f, lab in data], config.train, labels=labels, vectorizer=vec)


def train_slot_model(features: dict, model: InteractionModel, config: BuildConfig) -> CrfModel:
    slots = sorted({s.name for i in model.schema.intents for s in i.slots})
    return train_crf(features["tagger"], config.train, slot_names=slots)


def _maybe_quantize(m, config: BuildConfig):
    return quantize_model(m, config.quantize_bits) if config.quantize_bits else m


def assemble_bundle(model: InteractionModel, grammar: WeightedGrammar, intent_model, slot_model,
                    gazetteers: Mapping[str, BloomFilter], config: BuildConfig,
                    skill_id: str | None = None, n_samples: int | None = None) -> SkillModelBundle:
    meta = {
        "model_digest": model.digest(),
        "config_digest": config.digest(),
        "config": config.to_dict(),
    }
    if n_samples is not None:
        meta["n_samples"] = n_samples
    return SkillModelBundle(skill_id or skill_id_for(model), 0, model, grammar, intent_model, slot_model,
                            dict(gazetteers), meta)


def build_bundle(model: InteractionModel | str, config: BuildConfig | None = None,
                 skill_id: str | None = None) -> SkillModelBundle:
    """Run every build stage in-process and return an unversioned bundle."""
    config = config or BuildConfig()
    if not isinstance(model, InteractionModel):
        model = load_interaction_model(model)
    report = validate_interaction_model(model)
    if not report.buildable:
        raise ValidationFailed(report.violations)
    grammar = compile_grammar(model, config)
    samples = sample_training_data(grammar, model, config)
    gaz = build_gazetteers(model, config)
    feats = featurize(samples, gaz)
    intent = _maybe_quantize(train_intent_model(feats, model, config), config)
    slots = _maybe_quantize(train_slot_model(feats, model, config), config)
    return assemble_bundle(model, grammar, intent, slots, gaz, config, skill_id, len(samples))


# -- activities -----------------------------------------------------------------


def _model_from(handle) -> InteractionModel:
    return InteractionModel.from_dict(handle.fetch_json())


def _load_any(data: bytes):
    for cls in (QuantizedModel, MaxEntModel, CrfModel):
        try:
            return cls.from_bytes(data)
        except ValueError:
            continue
    raise ValueError("unrecognized model artifact")


@activity(inputs="source", outputs="model_json")
def validate_model(source, model_json):
    """Parse and validate the interaction model; writes its canonical JSON."""
    model_json.put(json.dumps(load_model_source(source.fetch()).to_dict(), sort_keys=True))


@activity(inputs="model_json", outputs="grammar")
def grammar_stage(model_json, grammar):
    grammar.put(build_grammar(_model_from(model_json), max_entropy=False).to_bytes())


@activity(inputs="grammar", outputs="weighted")
def priors_stage(grammar, weighted, config: str = "{}", seed: int = 0):
    cfg = BuildConfig.from_json(config, seed)
    g = WeightedGrammar.from_bytes(grammar.fetch())
    weighted.put(apply_max_entropy_priors(g, enabled=cfg.max_entropy).to_bytes())


@activity(inputs=("grammar", "model_json"), outputs="samples")
def sample_stage(grammar, model_json, samples, config: str = "{}", seed: int = 0):
    cfg = BuildConfig.from_json(config, seed)
    data = sample_training_data(WeightedGrammar.from_bytes(grammar.fetch()), _model_from(model_json), cfg)
    samples.put_json([[list(t), f.to_dict()] for t, f in data])


@activity(inputs="model_json", outputs="gazetteers")
def gazetteer_stage(model_json, gazetteers, config: str = "{}", seed: int = 0):
    cfg = BuildConfig.from_json(config, seed)
    gz = build_gazetteers(_model_from(model_json), cfg)
    gazetteers.put({k: gz[k].to_bytes() for k in sorted(gz)})


def _gaz_from(handle) -> dict[str, BloomFilter]:
    return {k: BloomFilter.from_bytes(v) for k, v in handle.fetch_object().items()}


@activity(inputs=("samples", "gazetteers"), outputs="features")
def feature_stage(samples, gazetteers, features):
    data = [(tuple(t), SemanticFrame.from_dict(f)) for t, f in samples.fetch_json()]
    features.put(featurize(data, _gaz_from(gazetteers)))


@activity(inputs=("features", "model_json"), outputs="intent_model")
def train_intent_stage(features, model_json, intent_model, config: str = "{}", seed: int = 0):
    cfg = BuildConfig.from_json(config, seed)
    intent_model.put(train_intent_model(features.fetch_object(), _model_from(model_json), cfg).to_bytes())


@activity(inputs=("features", "model_json"), outputs="slot_model")
def train_slots_stage(features, model_json, slot_model, config: str = "{}", seed: int = 0):
    cfg = BuildConfig.from_json(config, seed)
    slot_model.put(train_slot_model(features.fetch_object(), _model_from(model_json), cfg).to_bytes())


@activity(inputs="model", outputs="packed")
def quantize_stage(model, packed, config: str = "{}", seed: int = 0):
    cfg = BuildConfig.from_json(config, seed)
    packed.put(_maybe_quantize(_load_any(model.fetch()), cfg).to_bytes())


@activity(inputs=("model_json", "grammar", "intent_model", "slot_model", "gazetteers", "samples"),
          outputs="bundle")
def bundle_stage(model_json, grammar, intent_model, slot_model, gazetteers, samples, bundle,
                 skill_id: str = "", config: str = "{}", seed: int = 0):
    cfg = BuildConfig.from_json(config, seed)
    b = assemble_bundle(_model_from(model_json), WeightedGrammar.from_bytes(grammar.fetch()),
                        _load_any(intent_model.fetch()), _load_any(slot_model.fetch()),
                        _gaz_from(gazetteers), cfg, skill_id or None, len(samples.fetch_json()))
    bundle.put(b.to_bytes())


@activity(inputs="bundle", outputs="receipt")
def store_stage(bundle, receipt, store: str = ""):
    """Publish the bundle as the next version in ``store``; an empty store only records the digest."""
    b = SkillModelBundle.from_bytes(bundle.fetch())
    out = {"skill_id": b.skill_id, "content_digest": b.content_digest(), "version": None}
    if store:
        out["version"] = ModelStore(store).store(b).version
    receipt.put_json(out)


@recipe
def build_skill(model: str, skill_id: str = "", store: str = "", config: str = "{}", seed: int = 0, executor=None):
    """Build a skill bundle from a model directory and publish it to a store."""
    source = executor.new_artifact(model, name="model_source")
    model_json = executor.new_artifact(name="interaction_model")
    raw = executor.new_artifact(name="grammar_raw")
    grammar = executor.new_artifact(name="grammar")
    samples = executor.new_artifact(name="samples")
    gaz = executor.new_artifact(name="gazetteers")
    feats = executor.new_artifact(name="features")
    intent_f = executor.new_artifact(name="intent_model_float")
    slot_f = executor.new_artifact(name="slot_model_float")
    intent_q = executor.new_artifact(name="intent_model")
    slot_q = executor.new_artifact(name="slot_model")
    bundle = executor.new_artifact(name="bundle")
    receipt = executor.new_artifact(name="receipt")

    validate_model(source, model_json)
    grammar_stage(model_json, raw)
    priors_stage(raw, grammar, config=config, seed=seed)
    sample_stage(grammar, model_json, samples, config=config, seed=seed)
    gazetteer_stage(model_json, gaz, config=config, seed=seed)
    feature_stage(samples, gaz, feats)
    train_intent_stage(feats, model_json, intent_f, config=config, seed=seed)
    train_slots_stage(feats, model_json, slot_f, config=config, seed=seed)
    quantize_stage(intent_f, intent_q, config=config, seed=seed)
    quantize_stage(slot_f, slot_q, config=config, seed=seed)
    bundle_stage(model_json, grammar, intent_q, slot_q, gaz, samples, bundle,
                 skill_id=skill_id, config=config, seed=seed)
    store_stage(bundle, receipt, store=store)
    executor.output(bundle, receipt)


def build_skills_dag(models: Sequence[str], *, store: str = "", config: str = "{}", seed: int = 0,
                     skill_ids: Sequence[str] | None = None) -> RecipeDAG:
    """One DAG building several skills; each skill's nodes and artifacts get a ``<n>.`` prefix.

    The branches share nothing, so a parallel executor can run them side by side.
    """
    if not models:
        raise ValueError("no models to build")
    ids = list(skill_ids) if skill_ids is not None else [""] * len(models)
    if len(ids) != len(models):
        raise ValueError("need one skill id per model")
    arts, nodes, outputs = [], [], []
    for k, (path, sid) in enumerate(zip(models, ids)):
        dag = build_skill.capture().bind(
            {"model": str(path), "skill_id": sid, "store": store, "config": config, "seed": seed})
        pre = f"{k}."
        arts += [ArtifactSpec(pre + a.id, a.uri) for a in dag.artifacts.values()]
        for n in dag.nodes:
            nodes.append(NodeSpec(pre + n.id, n.activity, {s_: pre + a for s_, a in n.inputs.items()},
                                  {s_: pre + a for s_, a in n.outputs.items()}, dict(n.params)))
        outputs += [pre + o for o in dag.outputs]
    return RecipeDAG("build_skills", [], arts, nodes, outputs).validate()
