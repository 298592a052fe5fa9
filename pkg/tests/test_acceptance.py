"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py``; the verdicts are repeated in an
"acceptance criteria" section at the end of the pytest report.
"""

from __future__ import annotations

import json
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, str(Path(__file__).parent))

import pipeline_activities as acts  # noqa: E402
from crf_cases import dense_crf, random_legal_labels  # noqa: E402
from dag_cases import random_dag  # noqa: E402
from oracles import (  # noqa: E402
    count_expansions,
    crf_brute_argmax,
    crf_brute_logz,
    expand_model,
    finite_difference,
    relative_error,
)
from skillnlu.build import (  # noqa: E402
    BuildConfig,
    bio_tags,
    build_bundle,
    build_gazetteers,
    build_skill,
    compile_grammar,
    featurize,
    train_intent_model,
    train_slot_model,
)
from skillnlu.features import (  # noqa: E402
    build_bloom_filter,
    extract_intent_features,
    gazetteer_from_values,
    match_gazetteers,
    sentence_tagger_features,
)
from skillnlu.frames import SemanticFrame, SlotValue  # noqa: E402
from skillnlu.grammar import build_grammar, enumerate_paths, recognize_deterministic, sample_utterances  # noqa: E402
from skillnlu.interaction_model import interaction_model_from_files, load_interaction_model, save_interaction_model  # noqa: E402
from skillnlu.models import TrainConfig, quantize_model, train_crf  # noqa: E402
from skillnlu.models.crf import _viterbi, crf_loglik_grad, forward_backward, viterbi_decode  # noqa: E402
from skillnlu.pipeline import ParallelExecutor, SequentialExecutor, deserialize_dag, execute, serialize_dag  # noqa: E402
from skillnlu.runtime import DialogueManager, NLUEngine  # noqa: E402
from skillnlu.runtime.dialogue import ElicitSlot, Fulfill, step_bound  # noqa: E402
from skillnlu.runtime.nlu import DETERMINISTIC  # noqa: E402
from skillnlu.synthetic import oov_entity_split, random_interaction_model, spans_of, word_pool  # noqa: E402

HOROSCOPE_DIR = Path(__file__).parent / "fixtures" / "horoscope"


def span_f1(pairs) -> float:
    tp = n_pred = n_gold = 0
    for gold, pred in pairs:
        g, p = spans_of(gold), spans_of(pred)
        tp += len(g & p)
        n_pred += len(p)
        n_gold += len(g)
    prec = tp / n_pred if n_pred else 1.0
    rec = tp / n_gold if n_gold else 1.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0


# 1 ---------------------------------------------------------------------------------


def coverage_models(n=20, max_paths=10**5):
    models = []
    for seed in range(n):
        rng = np.random.default_rng(seed)
        big = seed < 5  # the first few use the largest allowed shape
        while True:
            m = random_interaction_model(
                rng,
                n_intents=5 if big else int(rng.integers(1, 6)),
                templates_per_intent=6 if big else int(rng.integers(1, 7)),
                n_slot_types=int(rng.integers(2, 4)),
                values_per_type=50 if big else int(rng.integers(2, 51)),
                invocation_name="synthetic",
            )
            if count_expansions(m) <= max_paths:
                models.append(m)
                break
    return models


def test_criterion_1_grammar_coverage(verdict):
    t0 = time.perf_counter()
    total = exact = 0
    for m in coverage_models():
        g = build_grammar(m)
        oracle = expand_model(m)
        paths = enumerate_paths(g, 10**5)
        assert len(paths) == len(oracle)
        for tokens, (gold, _) in oracle.items():
            total += 1
            exact += recognize_deterministic(g, tokens) == gold
    elapsed = time.perf_counter() - t0
    verdict(1, "grammar coverage", exact == total and elapsed < 60,
            f"{exact}/{total} utterances exact over 20 models in {elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------------


THREE_INTENTS = {
    "intent_schema.json": json.dumps({"intents": [
        {"intent": "PlayMusic", "slots": [{"name": "Artist", "type": "ARTIST"}]},
        {"intent": "StopMusic"},
        {"intent": "SetVolume", "slots": [{"name": "Level", "type": "AMAZON.NUMBER"}]},
    ]}),
    "sample_utterances.txt": "\n".join([
        "PlayMusic play {Artist}",
        "PlayMusic play some {Artist}",
        "PlayMusic put on {Artist}",
        "PlayMusic i want to hear {Artist}",
        "PlayMusic play music by {Artist}",
        "PlayMusic play music",
        "StopMusic stop",
        "SetVolume volume {Level}",
        "SetVolume set the volume to {Level}",
    ]) + "\n",
    "slot_types/ARTIST.txt": "adele\nthe beatles\nmiles davis\nnina simone\nqueen\n",
    "invocation_name.txt": "music box",
}


def test_criterion_2_max_entropy_priors(verdict):
    model = interaction_model_from_files(THREE_INTENTS)
    g = build_grammar(model)
    n = 100_000
    counts = Counter(f.intent for _, f in sample_utterances(g, n, seed=2024))
    labels = sorted(model.schema.intent_names)
    observed = [counts[k] for k in labels]
    p = stats.chisquare(observed, [n / 3] * 3).pvalue
    mass = g.state_mass_check()
    verdict(2, "max-entropy priors", p > 0.001 and mass < 1e-9,
            f"chi-square p={p:.3f} for counts {observed}; max state mass error {mass:.1e}")


# 3 ---------------------------------------------------------------------------------


def test_criterion_3_crf_correctness(verdict):
    t0 = time.perf_counter()
    worst_logz, argmax_ok = 0.0, 0
    for seed in range(100):
        rng = np.random.default_rng(3000 + seed)
        T, L = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        U = rng.normal(scale=3, size=(T, L))
        trans = rng.normal(scale=3, size=(L, L))
        start = rng.normal(size=L)
        ban = rng.random((L, L)) < 0.25
        ban[np.arange(L), np.arange(L)] = False
        trans[ban] = -np.inf
        logz = forward_backward(U[None], np.array([T]), trans, start)[0][0]
        worst_logz = max(worst_logz, abs(logz - crf_brute_logz(U, trans, start)))
        path, score = _viterbi(U, trans, start)
        best, best_score = crf_brute_argmax(U, trans, start)
        argmax_ok += path == best and abs(score - best_score) < 1e-9
    worst_grad = 0.0
    for seed in range(20):
        rng = np.random.default_rng(4000 + seed)
        T = int(rng.integers(1, 7))
        model, feats = dense_crf(rng, T, n_slots=1)
        labels = random_legal_labels(rng, model, T)
        _, (g_emit, g_trans) = crf_loglik_grad(model, (feats, labels))

        def f():
            return crf_loglik_grad(model, (feats, labels))[0]

        allowed = np.argwhere(model.allowed)
        for k in range(10):
            if k % 2 == 0:
                idx = (int(rng.integers(model.emissions.shape[0])), int(rng.integers(model.emissions.shape[1])))
                err = relative_error(finite_difference(f, model.emissions, idx), g_emit[idx])
            else:
                idx = tuple(int(v) for v in allowed[rng.integers(len(allowed))])
                err = relative_error(finite_difference(f, model.transitions, idx), g_trans[idx])
            worst_grad = max(worst_grad, err)
    elapsed = time.perf_counter() - t0
    ok = worst_logz < 1e-8 and argmax_ok == 100 and worst_grad < 1e-4 and elapsed < 30
    verdict(3, "CRF correctness", ok,
            f"max |logZ err| {worst_logz:.1e}, Viterbi exact {argmax_ok}/100, "
            f"max gradient rel err {worst_grad:.1e}, {elapsed:.1f}s")


# 4 ---------------------------------------------------------------------------------


def test_criterion_4_parallel_speedup(tmp_path, verdict):
    seq = execute(acts.four_sleepers, SequentialExecutor(work_dir=tmp_path / "seq"))
    par = execute(acts.four_sleepers, ParallelExecutor(4, work_dir=tmp_path / "par"))
    assert seq.ok and par.ok
    ratio = par.wall_time / seq.wall_time
    same = seq.digests == par.digests and len(seq.digests) == 4
    verdict(4, "parallel executor speedup", ratio <= 0.6 and same,
            f"sequential {seq.wall_time:.2f}s, parallel(4) {par.wall_time:.2f}s, ratio {ratio:.2f}, "
            f"sink digests identical: {same}")


# 5 ---------------------------------------------------------------------------------


def test_criterion_5_build_latency(tmp_path, verdict):
    model = random_interaction_model(
        5, n_intents=50, templates_per_intent=10, n_slot_types=5, values_per_type=200, invocation_name="big skill"
    )
    model_dir = save_interaction_model(model, tmp_path / "big")
    t0 = time.perf_counter()
    report = execute(build_skill, params={"model": str(model_dir), "store": str(tmp_path / "store")},
                     work_dir=tmp_path / "work")
    elapsed = time.perf_counter() - t0
    n_samples = len(model.samples)
    verdict(5, "build latency", report.ok and elapsed <= 60,
            f"50 intents, {n_samples} templates, 5 slot types x 200 values built in {elapsed:.1f}s")


# 6 ---------------------------------------------------------------------------------


def compression_split():
    model = random_interaction_model(6, n_intents=5, templates_per_intent=6, n_slot_types=3, values_per_type=50)
    cfg = BuildConfig(seed=0)
    grammar = compile_grammar(model, cfg)
    train = [(tuple(u.template), f) for u, f in sample_utterances(grammar, 1000, seed=0)]
    rng = np.random.default_rng(7)
    vocab = {str(t) for s in model.samples for t in s.template}
    noise = word_pool(rng, 40, vocab)
    test = []
    for u, f in sample_utterances(grammar, 1000, seed=1):
        tokens, tags = list(u.template), bio_tags(u.template, f)
        if rng.random() < 0.5:  # insert an unseen word outside any slot span
            i = int(rng.integers(len(tokens) + 1))
            while i < len(tokens) and tags[i].startswith("I-"):
                i += 1
            tokens.insert(i, noise[int(rng.integers(len(noise)))])
            tags.insert(i, "O")
        if rng.random() < 0.4 and tags[0] == "O":  # drop the intent's leading word
            tokens, tags = tokens[1:], tags[1:]
        if tokens:
            test.append((tokens, tags, f.intent))
    return model, cfg, train, test


def score(intent_model, slot_model, test, gazetteers):
    correct, pairs = 0, []
    for tokens, tags, intent in test:
        spans = match_gazetteers(tokens, gazetteers)
        fv = intent_model.vectorizer.transform(extract_intent_features(tokens, spans=spans))
        correct += intent_model.predict(fv) == intent
        pred, _ = viterbi_decode(slot_model, sentence_tagger_features(tokens, spans=spans))
        pairs.append((tags, pred))
    return correct / len(test), span_f1(pairs)


def test_criterion_6_compression(verdict):
    model, cfg, train, test = compression_split()
    gz = build_gazetteers(model, cfg)
    gz_list = [gz[k] for k in sorted(gz)]
    feats = featurize(train, gz)
    hashed_cfg = BuildConfig(seed=0, train=TrainConfig(hash_bits=18))
    exact_cfg = BuildConfig(seed=0, train=TrainConfig(hash_bits=None))

    im, sm = train_intent_model(feats, model, hashed_cfg), train_slot_model(feats, model, hashed_cfg)
    qi, qs = quantize_model(im), quantize_model(sm)
    acc, f1 = score(im, sm, test, gz_list)
    q_acc, q_f1 = score(qi.dequantize(), qs.dequantize(), test, gz_list)
    float_size = len(im.to_bytes()) + len(sm.to_bytes())
    q_size = len(qi.to_bytes()) + len(qs.to_bytes())
    shrink = float_size / q_size

    ei, es = train_intent_model(feats, model, exact_cfg), train_slot_model(feats, model, exact_cfg)
    x_acc, _ = score(ei, es, test, gz_list)

    ok = shrink >= 3 and acc - q_acc <= 0.01 and f1 - q_f1 <= 0.01 and x_acc - acc <= 0.02
    verdict(6, "compression", ok,
            f"size {float_size}B -> {q_size}B ({shrink:.1f}x); accuracy {acc:.4f} -> {q_acc:.4f}; "
            f"slot F1 {f1:.4f} -> {q_f1:.4f}; exact-index accuracy {x_acc:.4f} vs hashed {acc:.4f}")


# 7 ---------------------------------------------------------------------------------


def test_criterion_7_bloom_filters(verdict):
    rng = np.random.default_rng(7)
    members = word_pool(rng, 5000)
    probes = word_pool(rng, 100_000, set(members))
    bf = build_bloom_filter(members, 0.01)
    false_neg = sum(m not in bf for m in members)
    fpr = sum(p in bf for p in probes) / len(probes)
    verdict(7, "bloom filters", false_neg == 0 and fpr <= 0.02,
            f"m={bf.m} k={bf.k}, {false_neg} false negatives over {len(members)} members, "
            f"FPR {fpr:.4f} over {len(probes)} probes")


# 8 ---------------------------------------------------------------------------------


def test_criterion_8_gazetteer_generalization(verdict):
    values, train, test = oov_entity_split(0)
    gz = [gazetteer_from_values(s, v, 0.01) for s, v in sorted(values.items())]

    def run(use_gazetteers):
        def feats(tokens):
            return sentence_tagger_features(tokens, spans=match_gazetteers(tokens, gz) if use_gazetteers else [])

        m = train_crf([(feats(t), lab) for t, lab in train], TrainConfig(seed=0), slot_names=sorted(values))
        return span_f1((lab, viterbi_decode(m, feats(t))[0]) for t, lab in test)

    base, with_gz = run(False), run(True)
    verdict(8, "gazetteer features", with_gz - base >= 0.10,
            f"slot F1 {base:.4f} without gazetteers, {with_gz:.4f} with (+{100 * (with_gz - base):.1f} points)")


# 9 ---------------------------------------------------------------------------------


def dialogue_models():
    out = [interaction_model_from_files({
        "intent_schema.json": json.dumps({"intents": [{
            "intent": "BookTable", "confirmationRequired": True,
            "slots": [{"name": "City", "type": "AMAZON.US_CITY", "required": True},
                      {"name": "Day", "type": "AMAZON.DATE", "required": True},
                      {"name": "Guests", "type": "AMAZON.NUMBER", "required": True}],
        }]}),
        "sample_utterances.txt": "BookTable book a table\nBookTable book a table in {City} {Day} for {Guests}\n",
        "invocation_name.txt": "table finder",
    })]
    for seed in range(4):
        out.append(random_interaction_model(900 + seed, n_intents=4, templates_per_intent=4, n_slot_types=3,
                                            values_per_type=8, max_slots=3, required_prob=0.8, confirm_prob=0.6))
    return out


def cooperative_transcript(mgr, rng, intent_decl):
    """A user who may stumble or deny, but never so often that the turn budget runs out."""
    required = [s.name for s in intent_decl.slots if s.required]
    given = {s.name: SlotValue(rng.choice(mgr.model.slot_values(s.type)))
             for s in intent_decl.slots if rng.random() < 0.4}
    state, d = mgr.start(SemanticFrame(intent_decl.name, given))
    for _ in range(100):
        if state.terminal:
            break
        if isinstance(d, ElicitSlot):
            if state.turns_left(d.slot) >= 2 and rng.random() < 0.4:
                text = "umm " + rng.choice(["what", "hang on", "sorry"])
            else:
                text = rng.choice(mgr.model.slot_values(intent_decl.slot(d.slot).type))
        else:
            deny = required and state.turns_left(required[0]) >= 2 and rng.random() < 0.3
            text = "no" if deny else rng.choice(["yes", "yeah sure", "ok"])
        state, d = mgr.step(state, text)
    return state, d, len(required)


def adversarial_transcript(mgr, rng, intent_decl):
    state, d = mgr.start(SemanticFrame(intent_decl.name))
    answers = ["", "no", "yes", "banana", "cancel that", *mgr.model.slot_values(intent_decl.slots[0].type)[:2]] \
        if intent_decl.slots else ["no", "yes"]
    for _ in range(100):
        if state.terminal:
            break
        state, d = mgr.step(state, rng.choice(answers))
    return state, len([s for s in intent_decl.slots if s.required])


def test_criterion_9_hybrid_precedence_and_dialogue(verdict):
    # every in-grammar utterance is answered by the grammar
    n_utts = n_det = 0
    models = [load_interaction_model(HOROSCOPE_DIR)] + [
        random_interaction_model(800 + s, n_intents=3, templates_per_intent=4, n_slot_types=2, values_per_type=6)
        for s in range(3)
    ]
    for m in models:
        bundle = build_bundle(m, BuildConfig(seed=0, samples_per_intent=50, train=TrainConfig(epochs=2)))
        eng = NLUEngine(bundle)
        for tokens, (gold, _) in expand_model(m).items():
            r = eng.understand(" ".join(tokens))
            n_utts += 1
            n_det += r.source == DETERMINISTIC and r.diagnostics["path"] == "grammar" and r.frame == gold
    # cooperative transcripts always reach Fulfill inside the step bound
    rng = np.random.default_rng(9)
    managers = [DialogueManager(m, build_grammar(m)) for m in dialogue_models()]
    fulfilled = within = 0
    for k in range(1000):
        mgr = managers[k % len(managers)]
        decl = mgr.model.schema.intents[int(rng.integers(len(mgr.model.schema.intents)))]
        state, d, n_req = cooperative_transcript(mgr, rng, decl)
        fulfilled += isinstance(d, Fulfill) and set(d.frame.slots) >= {s.name for s in decl.slots if s.required}
        within += state.steps <= step_bound(n_req)
    # hostile users still end the dialogue inside the bound
    terminated = 0
    for k in range(1000):
        mgr = managers[k % len(managers)]
        decl = mgr.model.schema.intents[int(rng.integers(len(mgr.model.schema.intents)))]
        state, n_req = adversarial_transcript(mgr, rng, decl)
        terminated += state.terminal and state.steps <= step_bound(n_req)
    ok = n_det == n_utts and fulfilled == 1000 and within == 1000 and terminated == 1000
    verdict(9, "hybrid precedence and dialogue", ok,
            f"{n_det}/{n_utts} in-grammar utterances deterministic; {fulfilled}/1000 transcripts fulfilled, "
            f"{within}/1000 within 3R+2; {terminated}/1000 adversarial transcripts terminated in bound")


# 10 --------------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path, verdict):
    runs = []
    for i, ex in enumerate([SequentialExecutor(work_dir=tmp_path / "a"), ParallelExecutor(3, work_dir=tmp_path / "b")]):
        r = execute(build_skill, ex, params={"model": str(HOROSCOPE_DIR), "seed": 11})
        assert r.ok, r.summary()
        runs.append(r)
    same_bundle = runs[0].digests["bundle"] == runs[1].digests["bundle"]
    same_bytes = runs[0].fetch("bundle") == runs[1].fetch("bundle")
    round_trips = 0
    for seed in range(100):
        dag = random_dag(seed)
        text = serialize_dag(dag)
        back = deserialize_dag(text, check_activities=False)
        round_trips += back.to_dict() == dag.to_dict() and serialize_dag(back) == text
    verdict(10, "determinism", same_bundle and same_bytes and round_trips == 100,
            f"bundle digests identical across two builds: {same_bundle and same_bytes}; "
            f"{round_trips}/100 DAG round trips exact")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
