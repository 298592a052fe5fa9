"""Maximum-entropy (multinomial logistic regression) intent classifier."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..binio import pack, unpack
from ..features import ExactVectorizer, FeatureVector, HashingVectorizer, vectorizer_from_dict
from .optim import ElasticNetSGD, TrainConfig, compact_columns, design_matrix, infer_vectorizer, lookup_columns

__all__ = [
    "MaxEntModel",
    "train_maxent",
    "predict_intent",
    "maxent_objective",
    "maxent_gradient",
]

MAGIC = b"SKMAXENT"
VERSION = 1


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=-1, keepdims=True)
    return scores - m - np.log(np.exp(scores - m).sum(axis=-1, keepdims=True))


class MaxEntModel:
    def __init__(self, labels: Sequence[str], vectorizer, columns: np.ndarray, weights: np.ndarray):
        if not labels:
            raise ValueError("label table is empty")
        self.labels = list(labels)
        self.vectorizer = vectorizer
        self.columns = np.asarray(columns, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (len(self.labels), len(self.columns)):
            raise ValueError("weight matrix shape does not match labels x columns")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        self.history: list[float] = []

    @property
    def dim(self) -> int:
        return self.vectorizer.dim

    def scores(self, fv: FeatureVector) -> np.ndarray:
        if fv.dim != self.dim:
            raise ValueError(f"feature dimension {fv.dim} does not match model dimension {self.dim}")
        pos, ok = lookup_columns(self.columns, fv.ids)
        return self.weights[:, pos[ok]] @ fv.values[ok]

    def predict_proba(self, fv: FeatureVector) -> np.ndarray:
        return _softmax(self.scores(fv))

    def predict(self, fv: FeatureVector) -> str:
        return self.labels[int(np.argmax(self.scores(fv)))]

    def predict_matrix(self, X: sp.csr_matrix) -> np.ndarray:
        """Class probabilities for a design matrix over this model's columns."""
        return _softmax(np.asarray(X @ self.weights.T))

    def sparsity(self) -> float:
        return float(np.mean(self.weights == 0)) if self.weights.size else 1.0

    def to_bytes(self) -> bytes:
        header = {"labels": self.labels, "vectorizer": self.vectorizer.to_dict()}
        return pack(MAGIC, VERSION, header, {
            "columns": self.columns.astype("<u4"),
            "weights": self.weights.astype("<f8"),
        })

    @classmethod
    def from_bytes(cls, data: bytes) -> "MaxEntModel":
        h, a = unpack(MAGIC, VERSION, data)
        return cls(h["labels"], vectorizer_from_dict(h["vectorizer"]), a["columns"].astype(np.int64), a["weights"])


def _onehot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def maxent_objective(W: np.ndarray, X: sp.csr_matrix, y: np.ndarray, l1: float = 0.0, l2: float = 0.0) -> float:
    """Mean negative log-likelihood plus ``l2 * |W|^2 + l1 * |W|_1``."""
    logp = _log_softmax(np.asarray(X @ W.T))
    nll = -logp[np.arange(len(y)), y].mean()
    return float(nll + l2 * np.sum(W * W) + l1 * np.sum(np.abs(W)))


def maxent_gradient(W: np.ndarray, X: sp.csr_matrix, y: np.ndarray, l2: float = 0.0) -> np.ndarray:
    """Gradient of the smooth part (NLL + L2) of :func:`maxent_objective`."""
    P = _softmax(np.asarray(X @ W.T))
    D = (P - _onehot(y, W.shape[0])) / len(y)
    return np.asarray((X.T @ D).T) + 2.0 * l2 * W


def train_maxent(
    dataset: Sequence[tuple[FeatureVector, str]],
    config: TrainConfig = TrainConfig(),
    labels: Sequence[str] | None = None,
    vectorizer: HashingVectorizer | ExactVectorizer | None = None,
) -> MaxEntModel:
    """Fit intent weights by seeded minibatch subgradient descent with elastic net.

    ``labels`` fixes the label order; by default labels are ordered by first
    appearance. The full-batch objective after every epoch is kept in
    ``model.history``.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    seen = list(dict.fromkeys(lab for _, lab in dataset))
    labels = list(labels) if labels is not None else seen
    missing = [lab for lab in labels if lab not in seen]
    if missing:
        raise ValueError(f"label {missing[0]!r} has no training examples")
    unknown = [lab for lab in seen if lab not in labels]
    if unknown:
        raise ValueError(f"example label {unknown[0]!r} not in label table")
    if vectorizer is None:
        vectorizer = infer_vectorizer(dataset[0][0].dim, config)

    vectors = [fv for fv, _ in dataset]
    columns = compact_columns(vectors)
    X = design_matrix(vectors, columns)
    index = {lab: i for i, lab in enumerate(labels)}
    y = np.array([index[lab] for _, lab in dataset])
    K, A, N = len(labels), len(columns), len(dataset)

    W = np.zeros((K, A))
    opt = ElasticNetSGD([W], config)
    rng = np.random.default_rng(config.seed)
    history = []
    Y = _onehot(y, K)
    for _ in range(config.epochs):
        perm = rng.permutation(N)
        for b in range(0, N, config.batch_size):
            idx = perm[b : b + config.batch_size]
            Xb = X[idx]
            cols = np.unique(Xb.indices)
            Xc = Xb[:, cols]
            P = _softmax(np.asarray(Xc @ W[:, cols].T))
            G = np.asarray((Xc.T @ ((P - Y[idx]) / len(idx))).T)
            opt.step([G], [cols])
        history.append(maxent_objective(W, X, y, config.l1, config.l2))
    model = MaxEntModel(labels, vectorizer, columns, W)
    model.history = history
    return model


def predict_intent(model, fv: FeatureVector) -> dict[str, float]:
    """Posterior over intents; accepts float or quantized models."""
    if hasattr(model, "dequantize"):
        model = model.dequantize()
    p = model.predict_proba(fv)
    return dict(zip(model.labels, p.tolist()))
