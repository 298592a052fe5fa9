"""Training configuration, sparse design matrices and the elastic-net SGD step."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..features import ExactVectorizer, FeatureVector, HashingVectorizer

__all__ = ["TrainConfig", "ElasticNetSGD", "compact_columns", "design_matrix", "lookup_columns",
           "infer_vectorizer", "default_vectorizer"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.5
    # inverse-time decay: lr_t = learning_rate / (1 + t / decay_steps)
    decay_steps: float = 200.0
    l1: float = 0.0
    l2: float = 1e-4
    dropout: float = 0.1
    hash_bits: int | None = 18
    hash_seed: int = 0
    seed: int = 0
    batch_size: int = 8

    def __post_init__(self):
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("regularization strengths must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.hash_bits is not None and not 1 <= self.hash_bits <= 30:
            raise ValueError("hash_bits must be in [1, 30] or None")

    def to_dict(self) -> dict:
        return asdict(self)


def infer_vectorizer(dim: int, config: TrainConfig) -> HashingVectorizer:
    """The hashing vectorizer implied by ``config`` if it matches ``dim``."""
    if config.hash_bits is not None and dim == 1 << config.hash_bits:
        return HashingVectorizer(config.hash_bits, config.hash_seed)
    raise ValueError("cannot infer the vectorizer; pass the one used to build the feature vectors")


def default_vectorizer(config: TrainConfig, feature_sets) -> HashingVectorizer | ExactVectorizer:
    if config.hash_bits is None:
        return ExactVectorizer().fit(feature_sets)
    return HashingVectorizer(config.hash_bits, config.hash_seed)


def compact_columns(vectors: Sequence[FeatureVector]) -> np.ndarray:
    """Sorted feature ids that occur anywhere in ``vectors``."""
    if not vectors:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate([v.ids for v in vectors] + [np.zeros(0, dtype=np.int64)]))


def lookup_columns(columns: np.ndarray, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positions of ``ids`` within ``columns`` plus a mask of ids that are present."""
    if len(columns) == 0:
        return np.zeros(len(ids), dtype=np.int64), np.zeros(len(ids), dtype=bool)
    pos = np.searchsorted(columns, ids)
    pos = np.minimum(pos, len(columns) - 1)
    return pos, columns[pos] == ids


def design_matrix(vectors: Sequence[FeatureVector], columns: np.ndarray) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for r, v in enumerate(vectors):
        pos, ok = lookup_columns(columns, v.ids)
        rows.append(np.full(int(ok.sum()), r, dtype=np.int64))
        cols.append(pos[ok])
        vals.append(v.values[ok])
    if not vectors:
        return sp.csr_matrix((0, len(columns)))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(vectors), len(columns)),
    )


class ElasticNetSGD:
    """Stochastic subgradient steps with L2 in the gradient and L1 by cumulative-penalty truncation.

    The L1 part follows the cumulative penalty scheme: ``u`` is the total
    penalty every weight could have received so far and ``q`` what it
    actually received, so weights are clipped at zero instead of oscillating
    around it and exact zeros appear.
    """

    def __init__(self, params: Sequence[np.ndarray], config: TrainConfig,
                 masks: Sequence[np.ndarray | None] | None = None):
        self.params = list(params)
        self.config = config
        self.masks = list(masks) if masks is not None else [None] * len(self.params)
        self.q = [np.zeros_like(p) for p in self.params]
        self.u = 0.0
        self.t = 0

    @property
    def lr(self) -> float:
        c = self.config
        return c.learning_rate / (1.0 + self.t / c.decay_steps)

    def step(self, grads: Sequence[np.ndarray], cols: Sequence[np.ndarray | None] | None = None) -> None:
        """Descend along ``grads`` (gradients of the loss to minimize, without regularization).

        ``cols`` optionally restricts a parameter update to a subset of its
        columns; ``grads`` then holds only those columns. Regularization is
        applied lazily to the touched columns, which is how the cumulative
        L1 penalty is meant to be used with sparse inputs.
        """
        eta = self.lr
        c = self.config
        self.u += eta * c.l1
        cols = list(cols) if cols is not None else [None] * len(self.params)
        for p, g, q, mask, cc in zip(self.params, grads, self.q, self.masks, cols):
            if cc is None:
                self._update(p, g, q, mask, eta)
            else:
                sub, qs = p[:, cc], q[:, cc]
                self._update(sub, g, qs, None if mask is None else mask[:, cc], eta)
                p[:, cc] = sub
                q[:, cc] = qs
        self.t += 1

    def _update(self, p, g, q, mask, eta):
        c = self.config
        upd = g + 2.0 * c.l2 * p if c.l2 else g
        if mask is not None:
            upd = np.where(mask, upd, 0.0)
        p -= eta * upd
        if c.l1:
            z = p.copy()
            pos = p > 0
            neg = p < 0
            p[pos] = np.maximum(0.0, p[pos] - (self.u + q[pos]))
            p[neg] = np.minimum(0.0, p[neg] + (self.u - q[neg]))
            q += p - z
