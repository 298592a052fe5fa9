import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skillnlu.features import (
    KB_PREFIX,
    BloomFilter,
    ExactVectorizer,
    FeatureVector,
    HashingVectorizer,
    apply_knowledge_dropout,
    bloom_parameters,
    build_bloom_filter,
    extract_intent_features,
    extract_tagger_features,
    gazetteer_from_values,
    hash64,
    hash_features,
    match_gazetteers,
    sentence_tagger_features,
    vectorizer_from_dict,
)
from skillnlu.text import tokenize

SIGNS = "aries taurus gemini cancer leo virgo libra scorpio sagittarius capricorn aquarius pisces".split()


def test_tokenize_examples():
    assert tokenize("What is the Horoscope for Taurus?") == ["what", "is", "the", "horoscope", "for", "taurus"]
    assert tokenize("") == []
    assert tokenize("  multiple   spaces ") == ["multiple", "spaces"]


class TestBloom:
    def test_sizing_formula(self):
        m_oracle = math.ceil(-1000 * math.log(0.01) / math.log(2) ** 2)
        assert bloom_parameters(1000, 0.01) == (m_oracle, 7) == (9586, 7)

    def test_sized_on_all_keys(self):
        bf = build_bloom_filter(["new york city", "boston"], 0.01)
        # two phrases plus the prefixes "new" and "new york"
        assert bf.count == 4
        assert (bf.m, bf.k) == bloom_parameters(4, 0.01)

    def test_no_false_negatives(self):
        rng = np.random.default_rng(0)
        values = [" ".join(f"w{x}" for x in rng.integers(0, 5000, size=rng.integers(1, 4))) for _ in range(3000)]
        bf = build_bloom_filter(values, 0.01)
        for v in values:
            toks = v.split()
            assert v in bf and bf.has_phrase(toks)
            for j in range(1, len(toks)):
                assert bf.has_prefix(toks[:j])

    def test_false_positive_rate(self):
        values = [f"member{i}" for i in range(1000)]
        bf = build_bloom_filter(values, 0.01)
        fp = sum(f"probe{i}" in bf for i in range(100_000))
        assert fp / 100_000 <= 0.02
        assert bf.expected_fpr() == pytest.approx(0.01, rel=0.1)

    @pytest.mark.parametrize("values,fpr", [([], 0.01), (["a"], 0.0), (["a"], 1.0), (["!!"], 0.1)])
    def test_errors(self, values, fpr):
        with pytest.raises(ValueError):
            build_bloom_filter(values, fpr)

    def test_round_trip_and_corruption(self):
        bf = gazetteer_from_values("ZODIAC", [s.title() for s in SIGNS])
        again = BloomFilter.from_bytes(bf.to_bytes())
        assert again == bf and again.name == "ZODIAC" and all(s in again for s in SIGNS)
        data = bf.to_bytes()
        with pytest.raises(ValueError):
            BloomFilter.from_bytes(b"XXXXXX" + data[6:])
        with pytest.raises(ValueError):
            BloomFilter.from_bytes(data[:-1])
        with pytest.raises(ValueError):
            BloomFilter.from_bytes(data[:10])

    def test_little_endian_header(self):
        bf = build_bloom_filter(["x"], 0.5, name="n")
        data = bf.to_bytes()
        assert int.from_bytes(data[6:8], "little") == BloomFilter.VERSION
        assert int.from_bytes(data[8:16], "little") == bf.m


class TestHashing:
    def test_stable_across_processes(self):
        code = "from skillnlu.features import hash_features as h; print(h({'w=taurus': 1.0}, 18, 3).to_dict())"
        outs = {
            subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                           env={"PYTHONHASHSEED": str(s), "PATH": ""}, check=True).stdout
            for s in (1, 2)
        }
        assert len(outs) == 1
        assert outs.pop().strip() == str(hash_features({"w=taurus": 1.0}, 18, 3).to_dict())

    def test_seed_changes_ids(self):
        a = hash_features({f"f{i}": 1.0 for i in range(50)}, 18, 0)
        b = hash_features({f"f{i}": 1.0 for i in range(50)}, 18, 1)
        assert not np.array_equal(a.ids, b.ids)

    def test_collisions_accumulate(self):
        names = [f"n{i}" for i in range(5)]  # five names, four buckets
        fv = hash_features({n: 1.0 for n in names}, 2, 0)
        assert len(fv) < 5 and np.all(fv.ids < 4)
        expected = {}
        for n in names:
            h = hash64(n, 0)
            expected[h & 3] = expected.get(h & 3, 0.0) + (-1.0 if h >> 63 else 1.0)
        assert fv.to_dict() == expected

    def test_birthday_bound(self):
        n, b = 100_000, 18
        d = 1 << b
        ids = np.array([hash64(f"name-{i}", 0) & (d - 1) for i in range(n)])
        counts = np.bincount(ids, minlength=d)
        colliding_pairs = int((counts * (counts - 1) // 2).sum())
        expected = n * (n - 1) / 2 / d
        assert expected / 2 <= colliding_pairs <= 2 * expected

    def test_bits_range(self):
        for bad in (0, 31):
            with pytest.raises(ValueError):
                hash_features({"a": 1}, bad)
            with pytest.raises(ValueError):
                HashingVectorizer(bad)

    def test_vectorizers(self):
        hv = HashingVectorizer(10, 4)
        assert vectorizer_from_dict(hv.to_dict()).transform({"a": 2.0}).to_dict() == hv.transform({"a": 2.0}).to_dict()
        bucket, sign = hv.index("a")
        assert hv.transform({"a": 2.0}).to_dict() == {bucket: 2.0 * sign}
        ev = ExactVectorizer().fit([{"a": 1, "b": 1}, {"c": 1}])
        assert ev.dim == 3 and ev.transform({"c": 5.0, "zzz": 1.0}).to_dict() == {2: 5.0}
        assert vectorizer_from_dict(ev.to_dict()).vocab == ev.vocab
        with pytest.raises(ValueError):
            vectorizer_from_dict({"kind": "other"})

    def test_feature_vector_checks(self):
        with pytest.raises(ValueError):
            FeatureVector(np.array([4]), np.array([1.0]), 4)
        assert FeatureVector.from_pairs([(1, 1.0), (1, 2.0), (0, 1.0)], 4).to_dict() == {0: 1.0, 1: 3.0}


class TestTaggerFeatures:
    def test_gazetteer_feature(self):
        gz = gazetteer_from_values("ZODIAC", SIGNS)
        f = extract_tagger_features(tokenize("horoscope for taurus"), 2, [gz])
        assert f[KB_PREFIX + "ZODIAC"] == 1.0

    def test_boundaries(self):
        toks = ["a", "b", "c"]
        first = extract_tagger_features(toks, 0)
        assert "BOS" in first and not any(k.startswith("w[-1]") for k in first)
        last = extract_tagger_features(toks, 2)
        assert "EOS" in last and not any(k.startswith("w[+1]") for k in last)
        with pytest.raises(IndexError):
            extract_tagger_features(toks, 3)
        with pytest.raises(IndexError):
            extract_tagger_features(toks, -1)

    def test_lexical_templates(self):
        f = extract_tagger_features(["one", "two", "three", "four", "five"], 2)
        for key in ("w[0]=three", "w[-1]=two", "w[-2]=one", "w[+1]=four", "w[+2]=five",
                    "w[-1:0]=two|three", "w[0:+1]=three|four", "pre3=thr", "suf1=e", "shape=x"):
            assert key in f
        assert not any(k.startswith(KB_PREFIX) for k in f)

    def test_sentence_features_agree(self):
        gz = [gazetteer_from_values("CITY", ["new york", "boston"])]
        toks = tokenize("fly from new york to boston")
        whole = sentence_tagger_features(toks, gz)
        assert whole == [extract_tagger_features(toks, i, gz) for i in range(len(toks))]
        assert whole[2][KB_PREFIX + "CITY:B"] == 1.0 and whole[3][KB_PREFIX + "CITY:I"] == 1.0
        assert whole == sentence_tagger_features(toks, spans=match_gazetteers(toks, gz))

    def test_intent_features(self):
        gz = [gazetteer_from_values("ZODIAC", SIGNS)]
        f = extract_intent_features(["for", "leo"], gz)
        assert {"bias", "w=for", "w=leo", "b=<s>|for", "b=leo|</s>", KB_PREFIX + "ZODIAC"} <= set(f)
        assert KB_PREFIX + "ZODIAC" not in extract_intent_features(["for", "leo"])


def brute_force_spans(tokens, phrase_sets, max_len=4):
    out = []
    for name, phrases in phrase_sets:
        i = 0
        while i < len(tokens):
            best = max((L for L in range(1, max_len + 1) if tuple(tokens[i:i + L]) in phrases and i + L <= len(tokens)),
                       default=0)
            if best:
                out.append((i, i + best, name))
                i += best
            else:
                i += 1
    return out


vocab = st.sampled_from(list("abcdefgh"))


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.lists(st.lists(vocab, min_size=1, max_size=4), min_size=1, max_size=6), min_size=1, max_size=3),
    st.lists(vocab, max_size=12),
)
def test_match_gazetteers_is_greedy_longest(groups, tokens):
    phrase_sets = [(f"G{i}", {tuple(p) for p in g}) for i, g in enumerate(groups)]
    gzs = [build_bloom_filter([" ".join(p) for p in ps], 1e-9, name=n) for n, ps in phrase_sets]
    assert match_gazetteers(tokens, gzs) == brute_force_spans(tokens, phrase_sets)


class TestDropout:
    FEATS = {"w[0]=leo": 1.0, "bias": 1.0, KB_PREFIX + "ZODIAC": 1.0}

    def test_rate_zero_identity(self):
        assert apply_knowledge_dropout(self.FEATS, 0.0, np.random.default_rng(0)) == self.FEATS

    def test_half_rate_retention(self):
        rng = np.random.default_rng(1)
        kept = sum(KB_PREFIX + "ZODIAC" in apply_knowledge_dropout(self.FEATS, 0.5, rng) for _ in range(10_000))
        assert abs(kept / 10_000 - 0.5) <= 0.02

    def test_lexical_untouched(self):
        rng = np.random.default_rng(2)
        lexical = {"a": 1.0, "b": 2.0}
        for _ in range(100):
            out = apply_knowledge_dropout(self.FEATS, 0.9, rng)
            assert out["w[0]=leo"] == 1.0 and out["bias"] == 1.0
            assert apply_knowledge_dropout(lexical, 0.9, rng) == lexical

    def test_inference_is_identity_without_rng(self):
        assert apply_knowledge_dropout(self.FEATS, 0.5, None, training=False) == self.FEATS

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 2.0])
    def test_bad_rate(self, rate):
        with pytest.raises(ValueError):
            apply_knowledge_dropout(self.FEATS, rate, np.random.default_rng(0))

    def test_training_needs_rng(self):
        with pytest.raises(ValueError):
            apply_knowledge_dropout(self.FEATS, 0.5, None)
