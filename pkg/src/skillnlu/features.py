"""Feature extraction for the statistical models.

Features are named (``"w[0]=taurus"``) and turned into sparse vectors by
either hashing (:class:`HashingVectorizer`) or an exact vocabulary
(:class:`ExactVectorizer`). Gazetteers are Bloom filters over slot values;
a token covered by a gazetteer match gets ``in-cluster:<name>`` features,
which knowledge dropout may remove during training.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .text import normalize_phrase, tokenize

__all__ = [
    "tokenize",
    "FeatureVector",
    "BloomFilter",
    "HashingVectorizer",
    "ExactVectorizer",
    "KB_PREFIX",
    "bloom_parameters",
    "build_bloom_filter",
    "match_gazetteers",
    "extract_tagger_features",
    "sentence_tagger_features",
    "extract_intent_features",
    "apply_knowledge_dropout",
    "hash_features",
    "hash64",
    "vectorizer_from_dict",
    "gazetteer_from_values",
]

KB_PREFIX = "in-cluster:"
MAX_SPAN = 4
DEFAULT_FPR = 0.01
DEFAULT_HASH_BITS = 18
DEFAULT_SEEDS = (0x9E3779B97F4A7C15, 0xC2B2AE3D27D4EB4F)

_PREFIX_MARK = "\x1fprefix\x1f"


def hash64(text: str, seed: int) -> int:
    """Stable 64-bit hash of ``text`` (keyed BLAKE2b; independent of PYTHONHASHSEED)."""
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


# -- sparse vectors ---------------------------------------------------------


@dataclass(frozen=True)
class FeatureVector:
    ids: np.ndarray  # sorted, unique, int64
    values: np.ndarray  # float64
    dim: int

    def __post_init__(self):
        if len(self.ids) and (self.ids[0] < 0 or self.ids[-1] >= self.dim):
            raise ValueError("feature id out of range")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], dim: int) -> "FeatureVector":
        acc: dict[int, float] = {}
        for i, v in pairs:
            acc[i] = acc.get(i, 0.0) + v
        ids = np.array(sorted(acc), dtype=np.int64)
        vals = np.array([acc[i] for i in ids.tolist()], dtype=np.float64)
        return cls(ids, vals, dim)

    @classmethod
    def zeros(cls, dim: int) -> "FeatureVector":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), dim)

    def __len__(self) -> int:
        return len(self.ids)

    def to_dict(self) -> dict[int, float]:
        return dict(zip(self.ids.tolist(), self.values.tolist()))


@lru_cache(maxsize=1 << 20)
def _hashed(name: str, seed: int) -> int:
    return hash64(name, seed)


def hash_features(features: Mapping[str, float], b: int = DEFAULT_HASH_BITS, seed: int = 0) -> FeatureVector:
    """Signed feature hashing into ``2**b`` buckets; collisions accumulate.

    The low ``b`` bits of the hash pick the bucket and the top bit picks the
    sign of the contribution.
    """
    if not 1 <= b <= 30:
        raise ValueError("hash bits must be in [1, 30]")
    mask = (1 << b) - 1
    pairs = []
    for name, v in features.items():
        h = _hashed(name, seed)
        pairs.append((h & mask, -v if h >> 63 else v))
    return FeatureVector.from_pairs(pairs, 1 << b)


class HashingVectorizer:
    kind = "hash"

    def __init__(self, bits: int = DEFAULT_HASH_BITS, seed: int = 0):
        if not 1 <= bits <= 30:
            raise ValueError("hash bits must be in [1, 30]")
        self.bits = bits
        self.seed = seed
        self.dim = 1 << bits

    def fit(self, feature_sets: Iterable[Mapping[str, float]]) -> "HashingVectorizer":
        return self

    def transform(self, features: Mapping[str, float]) -> FeatureVector:
        return hash_features(features, self.bits, self.seed)

    def index(self, name: str) -> tuple[int, float]:
        """Bucket and sign for a single feature name."""
        h = _hashed(name, self.seed)
        return h & (self.dim - 1), (-1.0 if h >> 63 else 1.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bits": self.bits, "seed": self.seed}


class ExactVectorizer:
    """One column per feature name seen during :meth:`fit`; unseen names are dropped."""

    kind = "exact"

    def __init__(self, vocab: Sequence[str] = ()):
        self.vocab = {name: i for i, name in enumerate(vocab)}

    @property
    def dim(self) -> int:
        return max(len(self.vocab), 1)

    def fit(self, feature_sets: Iterable[Mapping[str, float]]) -> "ExactVectorizer":
        for fs in feature_sets:
            for name in fs:
                if name not in self.vocab:
                    self.vocab[name] = len(self.vocab)
        return self

    def transform(self, features: Mapping[str, float]) -> FeatureVector:
        pairs = [(self.vocab[n], v) for n, v in features.items() if n in self.vocab]
        return FeatureVector.from_pairs(pairs, self.dim)

    def index(self, name: str) -> tuple[int, float] | None:
        i = self.vocab.get(name)
        return None if i is None else (i, 1.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "vocab": list(self.vocab)}


def vectorizer_from_dict(d: Mapping) -> HashingVectorizer | ExactVectorizer:
    if d["kind"] == "hash":
        return HashingVectorizer(d["bits"], d["seed"])
    if d["kind"] == "exact":
        return ExactVectorizer(d["vocab"])
    raise ValueError(f"unknown vectorizer kind {d['kind']!r}")


# -- bloom filters ----------------------------------------------------------


def bloom_parameters(n: int, p: float) -> tuple[int, int]:
    """Bits and hash count for ``n`` items at false-positive rate ``p``."""
    m = math.ceil(-n * math.log(p) / math.log(2) ** 2)
    k = max(1, round(m / n * math.log(2)))
    return m, k


@lru_cache(maxsize=1 << 16)
def _hash_pair(key: str, s1: int, s2: int) -> tuple[int, int]:
    # gazetteers share seeds, so one lookup serves every filter
    return hash64(key, s1), hash64(key, s2)


class BloomFilter:
    """Bit-array Bloom filter with double hashing from two 64-bit seeds."""

    MAGIC = b"SKBLM\x00"
    VERSION = 2

    def __init__(self, m: int, k: int, seeds: tuple[int, int] = DEFAULT_SEEDS, name: str = "",
                 bits: np.ndarray | None = None, count: int = 0):
        if m < 1 or k < 1:
            raise ValueError("bloom filter needs m >= 1 and k >= 1")
        self.m = m
        self.k = k
        self.seeds = (int(seeds[0]), int(seeds[1]))
        self.name = name
        self.bits = bits if bits is not None else np.zeros((m + 7) // 8, dtype=np.uint8)
        self.count = count

    def _positions(self, key: str) -> list[int]:
        # enhanced double hashing: the growing step avoids the short cycles
        # plain h1 + i*h2 falls into when gcd(h2, m) > 1
        h1, h2 = _hash_pair(key, *self.seeds)
        m = self.m
        a, b = h1 % m, h2 % m
        out = []
        for i in range(self.k):
            out.append(a)
            a = (a + b) % m
            b = (b + i + 1) % m
        return out

    def add(self, key: str) -> None:
        for p in self._positions(key):
            self.bits[p >> 3] |= np.uint8(1 << (p & 7))
        self.count += 1

    def __contains__(self, key: str) -> bool:
        h1, h2 = _hash_pair(key, *self.seeds)
        bits, m = memoryview(self.bits), self.m
        a, b = h1 % m, h2 % m
        for i in range(self.k):
            if not bits[a >> 3] >> (a & 7) & 1:
                return False
            a = (a + b) % m
            b = (b + i + 1) % m
        return True

    contains = __contains__

    def add_phrase(self, tokens: Sequence[str]) -> None:
        self.add(" ".join(tokens))
        for j in range(1, len(tokens)):
            self.add(_PREFIX_MARK + " ".join(tokens[:j]))

    def has_phrase(self, tokens: Sequence[str]) -> bool:
        return " ".join(tokens) in self

    def has_prefix(self, tokens: Sequence[str]) -> bool:
        return (_PREFIX_MARK + " ".join(tokens)) in self

    def expected_fpr(self) -> float:
        return (1 - math.exp(-self.k * self.count / self.m)) ** self.k

    def to_bytes(self) -> bytes:
        name = self.name.encode("utf-8")
        head = struct.pack("<HQIQQQH", self.VERSION, self.m, self.k, self.seeds[0], self.seeds[1], self.count, len(name))
        return self.MAGIC + head + name + self.bits.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        if data[: len(cls.MAGIC)] != cls.MAGIC:
            raise ValueError("not a bloom filter (bad magic)")
        off = len(cls.MAGIC)
        fmt = "<HQIQQQH"
        try:
            version, m, k, s1, s2, count, nlen = struct.unpack_from(fmt, data, off)
        except struct.error as e:
            raise ValueError("truncated bloom filter") from e
        if version != cls.VERSION:
            raise ValueError(f"unsupported bloom filter version {version}")
        off += struct.calcsize(fmt)
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        nbytes = (m + 7) // 8
        if len(data) - off != nbytes:
            raise ValueError("truncated bloom filter")
        bits = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=off).copy()
        return cls(m, k, (s1, s2), name, bits, count)

    def __eq__(self, other):
        return isinstance(other, BloomFilter) and self.to_bytes() == other.to_bytes()

    __hash__ = None


def build_bloom_filter(values: Sequence[str], target_fpr: float = DEFAULT_FPR, name: str = "",
                       seeds: tuple[int, int] = DEFAULT_SEEDS) -> BloomFilter:
    """Size and fill a filter for ``values``.

    Multi-token values are inserted whole plus one prefix key per proper
    prefix so span matching can stop early; the filter is sized for the
    total number of keys.
    """
    if not values:
        raise ValueError("cannot build a bloom filter from an empty value list")
    if not 0 < target_fpr < 1:
        raise ValueError("target_fpr must be in (0, 1)")
    phrases = list(dict.fromkeys(tuple(tokenize(v)) for v in values))
    phrases = [p for p in phrases if p]
    if not phrases:
        raise ValueError("cannot build a bloom filter from an empty value list")
    keys = {" ".join(p) for p in phrases}
    keys |= {_PREFIX_MARK + " ".join(p[:j]) for p in phrases for j in range(1, len(p))}
    m, k = bloom_parameters(len(keys), target_fpr)
    bf = BloomFilter(m, k, seeds, name)
    for key in sorted(keys):
        bf.add(key)
    return bf


def match_gazetteers(tokens: Sequence[str], gazetteers: Sequence[BloomFilter],
                     max_len: int = MAX_SPAN) -> list[tuple[int, int, str]]:
    """Greedy longest-match spans ``(start, end, name)`` for every gazetteer."""
    spans = []
    n = len(tokens)
    for gz in gazetteers:
        i = 0
        while i < n:
            best = 0
            for length in range(1, min(max_len, n - i) + 1):
                seg = tokens[i : i + length]
                if gz.has_phrase(seg):
                    best = length
                if length < max_len and not gz.has_prefix(seg):
                    break
            if best:
                spans.append((i, i + best, gz.name))
                i += best
            else:
                i += 1
    return spans


# -- feature templates ------------------------------------------------------


def _shape(tok: str) -> str:
    out = []
    for ch in tok:
        c = "d" if ch.isdigit() else "x" if ch.isalpha() else ch
        if not out or out[-1] != c:
            out.append(c)
    return "".join(out)


def _position_features(tokens: Sequence[str], i: int, spans) -> dict[str, float]:
    n = len(tokens)
    w = tokens[i]
    f = {"bias": 1.0, f"w[0]={w}": 1.0, f"shape={_shape(w)}": 1.0}
    if i == 0:
        f["BOS"] = 1.0
    else:
        f[f"w[-1]={tokens[i - 1]}"] = 1.0
        f[f"w[-1:0]={tokens[i - 1]}|{w}"] = 1.0
        if i >= 2:
            f[f"w[-2]={tokens[i - 2]}"] = 1.0
    if i == n - 1:
        f["EOS"] = 1.0
    else:
        f[f"w[+1]={tokens[i + 1]}"] = 1.0
        f[f"w[0:+1]={w}|{tokens[i + 1]}"] = 1.0
        if i + 2 < n:
            f[f"w[+2]={tokens[i + 2]}"] = 1.0
    for k in range(1, 4):
        if len(w) >= k:
            f[f"pre{k}={w[:k]}"] = 1.0
            f[f"suf{k}={w[-k:]}"] = 1.0
    for start, end, name in spans:
        if start <= i < end:
            f[f"{KB_PREFIX}{name}"] = 1.0
            f[f"{KB_PREFIX}{name}:{'B' if i == start else 'I'}"] = 1.0
    return f


def sentence_tagger_features(tokens: Sequence[str], gazetteers: Sequence[BloomFilter] = (),
                             spans: Sequence[tuple[int, int, str]] | None = None) -> list[dict[str, float]]:
    """Per-position feature sets for a whole sentence (gazetteer spans computed once).

    ``spans`` may pass in an existing :func:`match_gazetteers` result.
    """
    if spans is None:
        spans = match_gazetteers(tokens, gazetteers) if gazetteers else []
    return [_position_features(tokens, i, spans) for i in range(len(tokens))]


def extract_tagger_features(tokens: Sequence[str], position: int,
                            gazetteers: Sequence[BloomFilter] = ()) -> dict[str, float]:
    if not 0 <= position < len(tokens):
        raise IndexError(f"position {position} out of range for {len(tokens)} tokens")
    spans = match_gazetteers(tokens, gazetteers) if gazetteers else []
    return _position_features(tokens, position, spans)


def extract_intent_features(tokens: Sequence[str], gazetteers: Sequence[BloomFilter] = (),
                            spans: Sequence[tuple[int, int, str]] | None = None) -> dict[str, float]:
    """Bag of words and bigrams plus one feature per matching gazetteer."""
    f = {"bias": 1.0}
    padded = ["<s>", *tokens, "</s>"]
    for w in tokens:
        f[f"w={w}"] = 1.0
    for a, b in zip(padded, padded[1:]):
        f[f"b={a}|{b}"] = 1.0
    if spans is None:
        spans = match_gazetteers(tokens, gazetteers) if gazetteers else ()
    for _, _, name in spans:
        f[f"{KB_PREFIX}{name}"] = 1.0
    return f


def apply_knowledge_dropout(features: Mapping[str, float], rate: float,
                            rng: np.random.Generator | None = None, *, training: bool = True) -> dict[str, float]:
    """Drop each ``in-cluster:*`` feature independently with probability ``rate``.

    Outside training this is the identity and draws no random numbers.
    """
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0:
        return dict(features)
    if rng is None:
        raise ValueError("training-time dropout needs an explicit rng")
    out = {}
    for name, v in features.items():
        if name.startswith(KB_PREFIX) and rng.random() < rate:
            continue
        out[name] = v
    return out


def gazetteer_from_values(name: str, values: Iterable[str], target_fpr: float = DEFAULT_FPR) -> BloomFilter:
    return build_bloom_filter([normalize_phrase(v) for v in values], target_fpr, name=name)
