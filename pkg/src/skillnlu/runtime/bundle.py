"""The deployable per-skill model bundle and its binary container."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from typing import Any

from ..features import BloomFilter
from ..grammar import WeightedGrammar
from ..interaction_model import InteractionModel
from ..models import CrfModel, MaxEntModel, QuantizedModel

__all__ = ["SkillModelBundle", "BundleError", "BundleCorruptError"]

MAGIC = b"SKBUNDLE"
FORMAT_VERSION = 1
_DIGEST_LEN = 32


class BundleError(ValueError):
    pass


class BundleCorruptError(BundleError):
    """Digest mismatch, truncation or an unreadable section."""


def _load_model(data: bytes):
    for cls in (QuantizedModel, MaxEntModel, CrfModel):
        try:
            return cls.from_bytes(data)
        except ValueError:
            continue
    raise BundleCorruptError("unrecognized model section")


@dataclass(frozen=True, eq=False)
class SkillModelBundle:
    """Everything the runtime needs for one skill version.

    ``meta`` carries the build metadata: interaction-model digest, config
    digest and the build config. Wall-clock timestamps live next to the
    bundle in the store so identical builds serialize identically.
    """

    skill_id: str
    version: int
    model: InteractionModel
    grammar: WeightedGrammar
    intent_model: Any  # QuantizedModel or MaxEntModel
    slot_model: Any  # QuantizedModel or CrfModel
    gazetteers: dict[str, BloomFilter] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, part in (("grammar", self.grammar), ("intent model", self.intent_model),
                           ("slot model", self.slot_model), ("interaction model", self.model)):
            if part is None:
                raise BundleError(f"bundle component missing: {name}")
        digest = self.meta.get("model_digest")
        if digest is not None and digest != self.model.digest():
            raise BundleError("bundle components were built from a different interaction model")

    @property
    def invocation_name(self) -> str:
        return self.model.invocation_name

    def with_version(self, version: int) -> "SkillModelBundle":
        return replace(self, version=version)

    def intent_float(self) -> MaxEntModel:
        m = self.intent_model
        return m.dequantize() if isinstance(m, QuantizedModel) else m

    def slot_float(self) -> CrfModel:
        m = self.slot_model
        return m.dequantize() if isinstance(m, QuantizedModel) else m

    def _sections(self) -> list[tuple[str, bytes]]:
        meta = {"skill_id": self.skill_id, **self.meta}
        secs = [
            ("meta", json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()),
            ("interaction_model", json.dumps(self.model.to_dict(), sort_keys=True, separators=(",", ":")).encode()),
            ("grammar", self.grammar.to_bytes()),
            ("intent_model", self.intent_model.to_bytes()),
            ("slot_model", self.slot_model.to_bytes()),
        ]
        for name in sorted(self.gazetteers):
            secs.append((f"bloom:{name}", self.gazetteers[name].to_bytes()))
        return secs

    def content_digest(self) -> str:
        """Hash of every section; independent of the version number."""
        h = hashlib.sha256()
        for name, data in self._sections():
            h.update(name.encode() + b"\0" + struct.pack("<Q", len(data)) + data)
        return h.hexdigest()

    def model_sizes(self) -> dict[str, int]:
        return {name: len(data) for name, data in self._sections()}

    def to_bytes(self) -> bytes:
        secs = self._sections()
        header = json.dumps({
            "version": self.version,
            "sections": [[name, len(data)] for name, data in secs],
        }, separators=(",", ":")).encode()
        body = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header)) + header + b"".join(d for _, d in secs)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SkillModelBundle":
        if len(data) < len(MAGIC) + 6 + _DIGEST_LEN or data[: len(MAGIC)] != MAGIC:
            raise BundleCorruptError("not a skill bundle (bad magic or truncated)")
        body, digest = data[:-_DIGEST_LEN], data[-_DIGEST_LEN:]
        if hashlib.sha256(body).digest() != digest:
            raise BundleCorruptError("bundle digest mismatch")
        fmt, hlen = struct.unpack_from("<HI", body, len(MAGIC))
        if fmt != FORMAT_VERSION:
            raise BundleCorruptError(f"unsupported bundle format {fmt}")
        off = len(MAGIC) + 6
        header = json.loads(body[off : off + hlen])
        off += hlen
        parts: dict[str, bytes] = {}
        for name, n in header["sections"]:
            parts[name] = body[off : off + n]
            off += n
        if off != len(body):
            raise BundleCorruptError("section table does not match bundle length")
        try:
            meta = json.loads(parts["meta"])
            model = InteractionModel.from_dict(json.loads(parts["interaction_model"]))
            grammar = WeightedGrammar.from_bytes(parts["grammar"])
            intent = _load_model(parts["intent_model"])
            slot = _load_model(parts["slot_model"])
        except KeyError as e:
            raise BundleError(f"bundle component missing: {e.args[0]}") from None
        gaz = {name[6:]: BloomFilter.from_bytes(d) for name, d in parts.items() if name.startswith("bloom:")}
        skill_id = meta.pop("skill_id")
        return cls(skill_id, int(header["version"]), model, grammar, intent, slot, gaz, meta)
