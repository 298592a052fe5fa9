"""Linear-chain CRF slot tagger over BIO labels."""

from __future__ import annotations

from typing import Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from ..binio import pack, unpack
from ..features import KB_PREFIX, ExactVectorizer, FeatureVector, HashingVectorizer, vectorizer_from_dict
from ..frames import STATISTICAL, SemanticFrame, SlotValue
from .optim import ElasticNetSGD, TrainConfig, compact_columns, default_vectorizer, infer_vectorizer, lookup_columns

__all__ = [
    "CrfModel",
    "bio_labels",
    "transition_mask",
    "is_legal_bio",
    "crf_loglik_grad",
    "forward_backward",
    "viterbi_decode",
    "train_crf",
    "decode_frame",
    "slots_of_labels",
]

MAGIC = b"SKCRF\x00"
VERSION = 1
OUTSIDE = "O"

TokenFeatures = Union[FeatureVector, Mapping[str, float]]


def bio_labels(slot_names: Sequence[str]) -> list[str]:
    """``O`` first (index 0), then ``B-x``, ``I-x`` per slot in the given order."""
    out = [OUTSIDE]
    for s in slot_names:
        out += [f"B-{s}", f"I-{s}"]
    return out


def slots_of_labels(labels: Sequence[str]) -> list[str]:
    return [lab[2:] for lab in labels if lab.startswith("B-")]


def transition_mask(labels: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Allowed (prev, next) transitions and allowed start labels.

    ``I-x`` may only follow ``B-x`` or ``I-x`` and may not start a sequence.
    """
    L = len(labels)
    allowed = np.ones((L, L), dtype=bool)
    start = np.ones(L, dtype=bool)
    for j, lab in enumerate(labels):
        if lab.startswith("I-"):
            x = lab[2:]
            start[j] = False
            for i, prev in enumerate(labels):
                allowed[i, j] = prev in (f"B-{x}", f"I-{x}")
    return allowed, start


def is_legal_bio(seq: Sequence[str]) -> bool:
    prev = None
    for lab in seq:
        if lab.startswith("I-") and prev not in (f"B-{lab[2:]}", lab):
            return False
        prev = lab
    return True


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


class CrfModel:
    def __init__(self, labels: Sequence[str], vectorizer, columns: np.ndarray,
                 emissions: np.ndarray, transitions: np.ndarray):
        self.labels = list(labels)
        if not self.labels or self.labels[0] != OUTSIDE:
            raise ValueError("label set must start with O")
        self.vectorizer = vectorizer
        self.columns = np.asarray(columns, dtype=np.int64)
        self.emissions = np.asarray(emissions, dtype=np.float64)
        L = len(self.labels)
        if self.emissions.shape != (L, len(self.columns)):
            raise ValueError("emission matrix shape does not match labels x columns")
        self.allowed, self.start_allowed = transition_mask(self.labels)
        tr = np.array(transitions, dtype=np.float64)
        if tr.shape != (L, L):
            raise ValueError("transition matrix must be labels x labels")
        if not np.all(np.isfinite(tr[self.allowed])) or not np.all(np.isfinite(self.emissions)):
            raise ValueError("weights must be finite")
        tr[~self.allowed] = -np.inf
        self.transitions = tr
        self.start = np.where(self.start_allowed, 0.0, -np.inf)
        self.history: list[float] = []

    @classmethod
    def zeros(cls, slot_names: Sequence[str], vectorizer, columns=()) -> "CrfModel":
        labels = bio_labels(slot_names)
        columns = np.asarray(columns, dtype=np.int64)
        return cls(labels, vectorizer, columns, np.zeros((len(labels), len(columns))),
                   np.zeros((len(labels), len(labels))))

    @property
    def dim(self) -> int:
        return self.vectorizer.dim

    @property
    def slot_names(self) -> list[str]:
        return slots_of_labels(self.labels)

    def label_index(self, label: str) -> int:
        return self.labels.index(label)

    def token_matrix(self, feats: Sequence[TokenFeatures]) -> sp.csr_matrix:
        """Per-token rows over this model's columns; unseen features drop out."""
        rows, cols, vals = [], [], []
        for t, f in enumerate(feats):
            fv = f if isinstance(f, FeatureVector) else self.vectorizer.transform(f)
            if fv.dim != self.dim:
                raise ValueError(f"feature dimension {fv.dim} does not match model dimension {self.dim}")
            pos, ok = lookup_columns(self.columns, fv.ids)
            rows.append(np.full(int(ok.sum()), t))
            cols.append(pos[ok])
            vals.append(fv.values[ok])
        if not feats:
            return sp.csr_matrix((0, len(self.columns)))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(len(feats), len(self.columns)))

    def unary(self, feats: Sequence[TokenFeatures]) -> np.ndarray:
        """Emission scores, tokens x labels."""
        return np.asarray(self.token_matrix(feats) @ self.emissions.T)

    def sparsity(self) -> float:
        return float(np.mean(self.emissions == 0)) if self.emissions.size else 1.0

    def to_bytes(self) -> bytes:
        header = {"labels": self.labels, "vectorizer": self.vectorizer.to_dict()}
        return pack(MAGIC, VERSION, header, {
            "columns": self.columns.astype("<u4"),
            "emissions": self.emissions.astype("<f8"),
            "transitions": np.where(self.allowed, self.transitions, 0.0).astype("<f8"),
        })

    @classmethod
    def from_bytes(cls, data: bytes) -> "CrfModel":
        h, a = unpack(MAGIC, VERSION, data)
        return cls(h["labels"], vectorizer_from_dict(h["vectorizer"]), a["columns"].astype(np.int64),
                   a["emissions"], a["transitions"])


def forward_backward(U: np.ndarray, lengths: np.ndarray, trans: np.ndarray, start: np.ndarray):
    """Batched log-space forward-backward over right-padded sequences.

    ``U`` is (batch, T, labels). Returns ``(logZ, alpha, beta)``; positions
    past a sequence's length carry the last forward column unchanged and
    have zero backward scores.
    """
    B, T, L = U.shape
    lengths = np.asarray(lengths)
    alpha = np.empty((B, T, L))
    alpha[:, 0] = start + U[:, 0]
    for t in range(1, T):
        a = _lse(alpha[:, t - 1, :, None] + trans[None], axis=1) + U[:, t]
        alpha[:, t] = np.where((t < lengths)[:, None], a, alpha[:, t - 1])
    logZ = _lse(alpha[:, T - 1], axis=1)
    beta = np.zeros((B, T, L))
    for t in range(T - 2, -1, -1):
        b = _lse(trans[None] + (U[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
        beta[:, t] = np.where((t + 1 < lengths)[:, None], b, 0.0)
    return logZ, alpha, beta


def _marginals(U, lengths, trans, start):
    """logZ, per-token marginals (B,T,L) masked to valid positions, summed pair marginals (L,L)."""
    logZ, alpha, beta = forward_backward(U, lengths, trans, start)
    B, T, L = U.shape
    valid = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
    unary = np.exp(alpha + beta - logZ[:, None, None]) * valid[:, :, None]
    if T > 1:
        s = alpha[:, :-1, :, None] + trans[None, None] + (U[:, 1:] + beta[:, 1:])[:, :, None, :]
        pair = np.exp(s - logZ[:, None, None, None]) * valid[:, 1:, None, None]
        pair = pair.sum(axis=(0, 1))
    else:
        pair = np.zeros((L, L))
    return logZ, unary, pair


def _log_partition(U, lengths, trans, start):
    """log Z per sequence by a normalized forward pass; log-space fallback on underflow."""
    B, T, L = U.shape
    valid = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
    m = U.max(axis=2)
    E = np.exp(U - m[:, :, None])
    A = np.exp(trans)
    a = np.exp(start)[None] * E[:, 0]
    logc = np.zeros(B)
    for t in range(T):
        if t:
            a = np.where(valid[:, t, None], (a @ A) * E[:, t], a)
        ct = a.sum(axis=1)
        if not np.all(ct > 0) or not np.all(np.isfinite(ct)):
            return forward_backward(U, lengths, trans, start)[0]
        logc += np.where(valid[:, t], np.log(ct), 0.0)
        a = a / ct[:, None]
    return logc + (m * valid).sum(axis=1)


def _marginals_scaled(U, lengths, trans, start):
    """Same result as :func:`_marginals` using per-step normalized probabilities.

    Much faster than the log-space recursion; returns None when a scaling
    constant underflows so the caller can fall back.
    """
    B, T, L = U.shape
    lengths = np.asarray(lengths)
    valid = np.arange(T)[None, :] < lengths[:, None]
    m = U.max(axis=2)
    E = np.exp(U - m[:, :, None])
    A = np.exp(trans)
    alpha = np.empty((B, T, L))
    c = np.ones((B, T))
    a = np.exp(start)[None] * E[:, 0]
    c[:, 0] = a.sum(axis=1)
    alpha[:, 0] = a / c[:, 0, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        for t in range(1, T):
            a = (alpha[:, t - 1] @ A) * E[:, t]
            ct = a.sum(axis=1)
            live = valid[:, t]
            c[:, t] = np.where(live, ct, 1.0)
            alpha[:, t] = np.where(live[:, None], a / np.where(live, ct, 1.0)[:, None], alpha[:, t - 1])
    if not np.all(c > 0) or not np.all(np.isfinite(c)):
        return None
    logZ = (np.log(c) + m * valid).sum(axis=1)
    beta = np.ones((B, T, L))
    G = np.zeros((B, T, L))
    for t in range(T - 2, -1, -1):
        live = valid[:, t + 1]
        G[:, t + 1] = np.where(live[:, None], E[:, t + 1] * beta[:, t + 1] / c[:, t + 1, None], 0.0)
        beta[:, t] = np.where(live[:, None], G[:, t + 1] @ A.T, 1.0)
    unary = alpha * beta * valid[:, :, None]
    if T > 1:
        pair = A * np.einsum("bti,btj->ij", alpha[:, :-1], G[:, 1:])
    else:
        pair = np.zeros((L, L))
    return logZ, unary, pair


def _gold_score(U: np.ndarray, y: np.ndarray, trans: np.ndarray, start: np.ndarray) -> float:
    s = start[y[0]] + U[np.arange(len(y)), y].sum()
    if len(y) > 1:
        s += trans[y[:-1], y[1:]].sum()
    return float(s)


def _encode_labels(model: CrfModel, labels: Sequence[str]) -> np.ndarray:
    if not is_legal_bio(labels):
        raise ValueError(f"illegal BIO label sequence: {list(labels)}")
    index = {lab: i for i, lab in enumerate(model.labels)}
    try:
        return np.array([index[lab] for lab in labels])
    except KeyError as e:
        raise ValueError(f"unknown label {e.args[0]!r}") from None


def crf_loglik_grad(model: CrfModel, example) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """``log P(y | x)`` and its gradient w.r.t. (emissions, transitions).

    The gradient is observed minus expected feature counts; entries of
    banned transitions are zero.
    """
    feats, labels = example
    if len(feats) == 0:
        raise ValueError("sequence must have at least one token")
    if len(feats) != len(labels):
        raise ValueError("features and labels differ in length")
    y = _encode_labels(model, labels)
    X = model.token_matrix(feats)
    U = np.asarray(X @ model.emissions.T)
    logZ, unary, pair = _marginals(U[None], np.array([len(y)]), model.transitions, model.start)
    loglik = _gold_score(U, y, model.transitions, model.start) - float(logZ[0])
    L = len(model.labels)
    obs = np.zeros((len(y), L))
    obs[np.arange(len(y)), y] = 1.0
    g_emit = np.asarray((X.T @ (obs - unary[0])).T)
    obs_pair = np.zeros((L, L))
    np.add.at(obs_pair, (y[:-1], y[1:]), 1.0)
    g_trans = np.where(model.allowed, obs_pair - pair, 0.0)
    return loglik, (g_emit, g_trans)


def _viterbi(U: np.ndarray, trans: np.ndarray, start: np.ndarray) -> tuple[list[int], float]:
    T, L = U.shape
    delta = start + U[0]
    back = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + trans
        # argmax returns the first maximum, so ties go to the lowest label index
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(L)] + U[t]
    best = int(np.argmax(delta))
    score = float(delta[best])
    path = [best]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1], score


def viterbi_decode(model: CrfModel, feats: Sequence[TokenFeatures],
                   allowed_slots: Sequence[str] | None = None) -> tuple[list[str], float]:
    """Best label sequence and its score.

    ``allowed_slots`` restricts decoding to ``O`` plus the BIO labels of the
    given slots.
    """
    if len(feats) == 0:
        return [], 0.0
    U = model.unary(feats)
    if allowed_slots is not None:
        keep = set(allowed_slots)
        ban = np.array([lab != OUTSIDE and lab[2:] not in keep for lab in model.labels])
        U = np.where(ban[None, :], -np.inf, U)
    path, score = _viterbi(U, model.transitions, model.start)
    return [model.labels[i] for i in path], score


class _SequenceData:
    """Stacked token rows for a whole dataset, with knowledge-feature flags per entry."""

    def __init__(self, dataset, vectorizer, config: TrainConfig):
        self.lengths = np.array([len(f) for f, _ in dataset])
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)])
        rows, ids, vals, kb = [], [], [], []
        r = 0
        for feats, _ in dataset:
            for f in feats:
                if isinstance(f, FeatureVector):
                    if f.dim != vectorizer.dim:
                        raise ValueError("feature dimension does not match the vectorizer")
                    ids.extend(f.ids.tolist())
                    vals.extend(f.values.tolist())
                    kb.extend([False] * len(f))
                    rows.extend([r] * len(f))
                else:
                    for name, v in f.items():
                        hit = vectorizer.index(name)
                        if hit is None:
                            continue
                        i, sign = hit
                        ids.append(i)
                        vals.append(sign * v)
                        kb.append(name.startswith(KB_PREFIX))
                        rows.append(r)
                r += 1
        ids = np.array(ids, dtype=np.int64)
        self.columns = np.unique(ids)
        self.cols = np.searchsorted(self.columns, ids)
        self.rows = np.array(rows, dtype=np.int64)
        self.vals = np.array(vals, dtype=np.float64)
        self.kb = np.array(kb, dtype=bool)
        self.shape = (r, len(self.columns))

    def matrix(self, rng: np.random.Generator | None = None, rate: float = 0.0) -> sp.csr_matrix:
        vals = self.vals
        if rng is not None and rate > 0 and self.kb.any():
            drop = self.kb & (rng.random(len(vals)) < rate)
            vals = np.where(drop, 0.0, vals)
        X = sp.csr_matrix((vals, (self.rows, self.cols)), shape=self.shape)
        X.sum_duplicates()
        return X

    def token_rows(self, idx: np.ndarray) -> np.ndarray:
        lens = self.lengths[idx]
        shift = self.offsets[idx] - (np.cumsum(lens) - lens)
        return np.repeat(shift, lens) + np.arange(lens.sum())


def _pad(flat: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    B, T = len(lengths), int(lengths.max())
    out = np.zeros((B, T) + flat.shape[1:])
    mask = np.arange(T)[None, :] < lengths[:, None]
    out[mask] = flat
    return out


def train_crf(dataset: Sequence[tuple[Sequence[TokenFeatures], Sequence[str]]],
              config: TrainConfig = TrainConfig(),
              slot_names: Sequence[str] | None = None,
              vectorizer: HashingVectorizer | ExactVectorizer | None = None) -> CrfModel:
    """Fit a CRF by seeded minibatch subgradient descent with elastic net.

    Token features may be raw feature dicts or already vectorized. For raw
    dicts, knowledge-base features (``in-cluster:*``) are dropped at rate
    ``config.dropout`` with a fresh draw every epoch. Banned transitions
    stay at -inf throughout.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    for feats, labels in dataset:
        if len(feats) == 0 or len(feats) != len(labels):
            raise ValueError("every example needs equally long, non-empty features and labels")
        if not is_legal_bio(labels):
            raise ValueError(f"illegal BIO label sequence: {list(labels)}")
    if slot_names is None:
        slot_names = sorted({lab[2:] for _, labels in dataset for lab in labels if lab != OUTSIDE})
    if vectorizer is None:
        first = dataset[0][0][0]
        if isinstance(first, FeatureVector):
            vectorizer = infer_vectorizer(first.dim, config)
        else:
            vectorizer = default_vectorizer(config, (f for feats, _ in dataset for f in feats))

    data = _SequenceData(dataset, vectorizer, config)
    model = CrfModel.zeros(slot_names, vectorizer, data.columns)
    y_all = np.concatenate([_encode_labels(model, labels) for _, labels in dataset])
    L, N = len(model.labels), len(dataset)
    Y_all = np.zeros((len(y_all), L))
    Y_all[np.arange(len(y_all)), y_all] = 1.0

    E = model.emissions
    W = np.zeros((L, L))
    allowed = model.allowed
    opt = ElasticNetSGD([E, W], config, masks=[None, allowed])
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng([config.seed, 1])
    start = model.start
    history = []
    for _ in range(config.epochs):
        X = data.matrix(drop_rng, config.dropout)
        perm = rng.permutation(N)
        for b in range(0, N, config.batch_size):
            idx = perm[b : b + config.batch_size]
            rows = data.token_rows(idx)
            Xb = X[rows]
            cols = np.unique(Xb.indices)
            Xc = Xb[:, cols]
            lengths = data.lengths[idx]
            trans = np.where(allowed, W, -np.inf)
            U = np.asarray(Xc @ E[:, cols].T)
            Up = _pad(U, lengths)
            res = _marginals_scaled(Up, lengths, trans, start)
            _, unary, pair = res if res is not None else _marginals(Up, lengths, trans, start)
            mask = np.arange(unary.shape[1])[None, :] < lengths[:, None]
            Yb = Y_all[rows]
            yb = y_all[rows]
            g_emit = np.asarray((Xc.T @ (unary[mask] - Yb)).T) / len(idx)
            obs_pair = np.zeros((L, L))
            cont = np.ones(len(rows), dtype=bool)
            cont[np.cumsum(lengths)[:-1]] = False
            cont[0] = False
            np.add.at(obs_pair, (yb[:-1][cont[1:]], yb[1:][cont[1:]]), 1.0)
            g_trans = (pair - obs_pair) / len(idx)
            opt.step([g_emit, g_trans], [cols, None])
        history.append(_objective(data, y_all, E, np.where(allowed, W, -np.inf), start, config))
    model = CrfModel(model.labels, vectorizer, data.columns, E, np.where(allowed, W, 0.0))
    model.history = history
    return model


def _objective(data: _SequenceData, y_all, E, trans, start, config, chunk: int = 1024) -> float:
    X = data.matrix()
    U_all = np.asarray(X @ E.T)
    N = len(data.lengths)
    logZ = 0.0
    for b in range(0, N, chunk):
        idx = np.arange(b, min(N, b + chunk))
        lengths = data.lengths[idx]
        logZ += _log_partition(_pad(U_all[data.token_rows(idx)], lengths), lengths, trans, start).sum()
    # gold path scores for all sequences at once
    first = data.offsets[:-1]
    cont = np.ones(len(y_all), dtype=bool)
    cont[first] = False
    gold = U_all[np.arange(len(y_all)), y_all].sum() + start[y_all[first]].sum()
    gold += trans[y_all[:-1][cont[1:]], y_all[1:][cont[1:]]].sum()
    total = logZ - gold
    reg = config.l2 * (np.sum(E * E) + np.sum(np.where(np.isfinite(trans), trans, 0.0) ** 2))
    reg += config.l1 * (np.sum(np.abs(E)) + np.sum(np.abs(np.where(np.isfinite(trans), trans, 0.0))))
    return float(total / N + reg)


def decode_frame(tokens: Sequence[str], labels: Sequence[str], intent: str,
                 confidence: float = 1.0) -> SemanticFrame:
    """Turn BIO labels into slot spans.

    An ``I-x`` that does not continue an ``x`` span opens a new one. When a
    slot occurs more than once the first span is kept.
    """
    if len(tokens) != len(labels):
        raise ValueError("tokens and labels differ in length")
    spans: list[tuple[str, int, int]] = []
    cur = None
    for i, lab in enumerate(labels):
        if lab == OUTSIDE:
            cur = None
            continue
        tag, name = lab[:1], lab[2:]
        if tag == "I" and cur is not None and cur[0] == name:
            cur[2] = i + 1
            continue
        cur = [name, i, i + 1]
        spans.append(cur)
    slots: dict[str, SlotValue] = {}
    for name, s, e in spans:
        if name not in slots:
            slots[name] = SlotValue(" ".join(tokens[s:e]), (s, e))
    return SemanticFrame(intent, slots, confidence, STATISTICAL)
