"""Per-row symmetric linear weight quantization."""

from __future__ import annotations

import numpy as np

from ..binio import pack, unpack
from ..features import vectorizer_from_dict
from .crf import CrfModel
from .maxent import MaxEntModel

__all__ = ["QuantizedModel", "quantize_model", "quantize_rows", "dequantize_rows"]

MAGIC = b"SKQNT\x00"
VERSION = 1


def quantize_rows(w: np.ndarray, bits: int = 8) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Quantize each row of ``w`` to signed integers with its own scale.

    ``scale = max|w_row| / (2**(bits-1) - 1)``. Infinite entries (the banned
    transition sentinel) are kept in a separate mask and stored as zero.
    Returns ``(q, scale, inf_mask)`` where ``inf_mask`` is None if all
    entries are finite.
    """
    if not 2 <= bits <= 8:
        raise ValueError("bits must be in [2, 8]")
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if np.isnan(w).any() or np.isposinf(w).any():
        raise ValueError("weights must be finite or -inf")
    neg_inf = np.isneginf(w)
    finite = np.where(neg_inf, 0.0, w)
    qmax = (1 << (bits - 1)) - 1
    scale = np.abs(finite).max(axis=1) / qmax if finite.shape[1] else np.zeros(len(finite))
    safe = np.where(scale > 0, scale, 1.0)
    q = np.clip(np.rint(finite / safe[:, None]), -qmax, qmax).astype(np.int8)
    return q, scale, (neg_inf if neg_inf.any() else None)


def dequantize_rows(q: np.ndarray, scale: np.ndarray, inf_mask: np.ndarray | None = None) -> np.ndarray:
    w = q.astype(np.float64) * scale[:, None]
    if inf_mask is not None:
        w[inf_mask] = -np.inf
    return w


class QuantizedModel:
    """Integer weights plus per-row scales for a MaxEnt or CRF model."""

    def __init__(self, kind: str, labels, vectorizer, columns, blocks: dict, bits: int = 8):
        if kind not in ("maxent", "crf"):
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.labels = list(labels)
        self.vectorizer = vectorizer
        self.columns = np.asarray(columns, dtype=np.int64)
        # name -> (q int8, scale float64, -inf mask or None)
        self.blocks = blocks
        self.bits = bits
        self._float = None

    @property
    def dim(self) -> int:
        return self.vectorizer.dim

    def dequantize(self):
        """The equivalent float model (cached)."""
        if self._float is None:
            w = {k: dequantize_rows(*v) for k, v in self.blocks.items()}
            if self.kind == "maxent":
                self._float = MaxEntModel(self.labels, self.vectorizer, self.columns, w["weights"])
            else:
                tr = np.where(np.isneginf(w["transitions"]), 0.0, w["transitions"])
                self._float = CrfModel(self.labels, self.vectorizer, self.columns, w["emissions"], tr)
        return self._float

    def max_error_bound(self) -> dict[str, np.ndarray]:
        return {k: v[1] / 2 for k, v in self.blocks.items()}

    def to_bytes(self) -> bytes:
        header = {"kind": self.kind, "labels": self.labels, "bits": self.bits,
                  "vectorizer": self.vectorizer.to_dict(), "blocks": sorted(self.blocks)}
        arrays = {"columns": self.columns.astype("<u4")}
        for name in sorted(self.blocks):
            q, scale, mask = self.blocks[name]
            arrays[f"{name}.q"] = q.astype(np.int8)
            arrays[f"{name}.scale"] = scale.astype("<f8")
            if mask is not None:
                arrays[f"{name}.inf"] = np.packbits(mask, axis=None)
        return pack(MAGIC, VERSION, header, arrays)

    @classmethod
    def from_bytes(cls, data: bytes) -> "QuantizedModel":
        h, a = unpack(MAGIC, VERSION, data)
        blocks = {}
        for name in h["blocks"]:
            q = a[f"{name}.q"]
            mask = None
            if f"{name}.inf" in a:
                mask = np.unpackbits(a[f"{name}.inf"], count=q.size).astype(bool).reshape(q.shape)
            blocks[name] = (q, a[f"{name}.scale"], mask)
        return cls(h["kind"], h["labels"], vectorizer_from_dict(h["vectorizer"]),
                   a["columns"].astype(np.int64), blocks, h["bits"])


def quantize_model(model, bits: int = 8) -> QuantizedModel:
    if isinstance(model, MaxEntModel):
        return QuantizedModel("maxent", model.labels, model.vectorizer, model.columns,
                              {"weights": quantize_rows(model.weights, bits)}, bits)
    if isinstance(model, CrfModel):
        return QuantizedModel("crf", model.labels, model.vectorizer, model.columns, {
            "emissions": quantize_rows(model.emissions, bits),
            "transitions": quantize_rows(model.transitions, bits),
        }, bits)
    raise TypeError(f"cannot quantize {type(model).__name__}")
