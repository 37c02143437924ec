"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected and repeated in the terminal summary so that a plain
``pytest -v`` run ends with the full scorecard.  Run standalone with
``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest

from graphtoken import gradsuite
from graphtoken import numerics as nx
from graphtoken.aligner import cross_attend, value_placeholder_embedding
from graphtoken.backbone import digest_tensors, param_digest
from graphtoken.checkpoint import Checkpoint
from graphtoken.config import RunConfig, TrainConfig
from graphtoken.data import backbone_corpus
from graphtoken.encoders import GinParams, gin_encode
from graphtoken.evalkit import SplitSpec, evaluate, roc_auc, roc_auc_ranks, split_dataset
from graphtoken.molgraph import ParseError, featurize, parse_smiles, wl_colors
from graphtoken.numerics import Tensor
from graphtoken.pipeline import (TASKS, AlignedModel, build_backbone, fewshot_adapt, fewshot_model,
                                 graph_token_batch, info_nce, inject_embeddings, load_aligned, load_stage1,
                                 make_examples, predict, retrieval_accuracy, train_stage1, train_stage2)

from test_aligner import dense_oracle, random_instance
from test_molgraph import ERRORS, FUZZ_ALPHABET, VALID, _check_invariants

SCORECARD = {}
CFG = RunConfig()


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    SCORECARD[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def backbone(records):
    return build_backbone(backbone_corpus(records), CFG.backbone, CFG.dims)


@pytest.fixture(scope="module")
def split(records):
    return split_dataset(len(records), SplitSpec(seed=CFG.seed))


@pytest.fixture(scope="module")
def stage2_run(records, backbone, split):
    """Default 500-step stage-2 run on the train split, atom-count task."""
    train, _, _ = split
    before = param_digest(backbone.params)
    start = time.perf_counter()
    ckpt = train_stage2([records[i] for i in train], backbone, None, CFG.stage2, CFG.dims, ["atom_count"])
    return ckpt, before, time.perf_counter() - start


def _normalized_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return Tensor(x / np.linalg.norm(x, axis=1, keepdims=True))


def test_c01_gradient_suite():
    start = time.perf_counter()
    results = gradsuite.run_suite(seeds=20, report=print)
    elapsed = time.perf_counter() - start
    worst_name = max(results, key=results.get)
    ok = all(v < gradsuite.TOLERANCE for v in results.values()) and elapsed < 120
    report(1, ok, f"{len(results)} checks x 20 seeds, worst {worst_name} {results[worst_name]:.2e} "
                  f"(< 1e-4), {elapsed:.0f}s (< 120s)")


def test_c02_cross_attention_dense_oracle():
    worst = 0.0
    for seed in range(100):
        g, m, al = random_instance(seed)
        assert al.heads <= 4 and m.shape[0] <= 8
        tok = cross_attend(Tensor(g), Tensor(m), al)
        ref, att = dense_oracle(g, m, al)
        worst = max(worst, float(np.abs(tok.embedding.data - ref).max()), float(np.abs(tok.attention - att).max()))
    report(2, worst <= 1e-12, f"100 instances, max abs diff {worst:.1e} (<= 1e-12)")


def test_c03_freeze_invariants(records, backbone, split, stage2_run):
    ckpt, before, s2_time = stage2_run
    train, _, _ = split
    after_stage2 = param_digest(backbone.params)
    c_before = digest_tensors({"compressor": Tensor(ckpt.tensors["aligner.compressor"])})
    start = time.perf_counter()
    fs = fewshot_adapt(ckpt, records, train, 0.10, CFG.fewshot, backbone, "hetero_count")
    fs_time = time.perf_counter() - start
    after_fewshot = param_digest(backbone.params)
    c_after = digest_tensors({"compressor": Tensor(fs.tensors["aligner.compressor"])})
    ok = (before == after_stage2 == after_fewshot and c_before == c_after
          and fs.meta["backbone_digest"] == before.global_hash and s2_time + fs_time < 300)
    report(3, ok, f"backbone digest {before.global_hash[:12]} unchanged after {CFG.stage2.steps}-step stage 2 "
                  f"and few-shot; compressor digest unchanged; {s2_time + fs_time:.0f}s (< 300s)")


def test_c04_placeholders(records, backbone):
    M = backbone.M
    mean_ok = value_placeholder_embedding(M).data.tobytes() == M.data.mean(axis=0).tobytes()
    model = AlignedModel.init(np.random.default_rng(0), CFG.dims, len(backbone.vocab), [TASKS["atom_count"]])
    examples = make_examples(records[:10], backbone.vocab, [TASKS["atom_count"]])
    tokens = graph_token_batch(model, M, examples).data
    rows_ok = True
    for i, ex in enumerate(examples):
        p = ex.prompts["atom_count"]
        emb = inject_embeddings(list(p.ids), p.graph_pos, p.value_pos, tokens[i], M).data
        rows_ok &= emb[p.graph_pos].tobytes() == tokens[i].tobytes()
        rows_ok &= emb[p.value_pos].tobytes() == M.data.mean(axis=0).tobytes()
        others = [j for j in range(len(p.ids)) if j not in (p.graph_pos, p.value_pos)]
        rows_ok &= emb[others].tobytes() == M.data[[p.ids[j] for j in others]].tobytes()
    report(4, mean_ok and rows_ok, f"value row == column mean of M ({M.shape[0]}x{M.shape[1]}) bitwise; "
                                   f"injected rows bitwise on 10 prompts")


def test_c05_gin_invariance_and_expressivity():
    g = parse_smiles("CC(=O)Nc1ccc(O)cc1")
    gin = GinParams.init(np.random.default_rng(0), CFG.dims.gin_hidden, CFG.dims.graph_dim)
    base = gin_encode(featurize(g), gin).data
    rng = np.random.default_rng(1)
    worst = max(float(np.abs(gin_encode(featurize(g.permuted(rng.permutation(len(g.atoms)))), gin).data
                             - base).max()) for _ in range(100))
    pairs = [("CCO", "CC=O"), ("CCO", "COC"), ("CCCC", "CC(C)C"), ("c1ccccc1", "C1CCCCC1"), ("CCN", "CNC")]
    distinct = True
    worst_hits = 20
    for a, b in pairs:
        ga, gb = parse_smiles(a), parse_smiles(b)
        distinct &= wl_colors(ga) != wl_colors(gb)
        hits = 0
        for seed in range(20):
            p = GinParams.init(np.random.default_rng(100 + seed), CFG.dims.gin_hidden, CFG.dims.graph_dim)
            hits += np.linalg.norm(gin_encode(featurize(ga), p).data - gin_encode(featurize(gb), p).data) > 1e-6
        worst_hits = min(worst_hits, hits)
    ok = worst <= 1e-9 and distinct and worst_hits >= 19
    report(5, ok, f"100 permutations max diff {worst:.1e} (<= 1e-9); WL-distinct pairs separated in "
                  f">= {worst_hits}/20 inits (>= 19)")


def test_c06_info_nce_properties():
    rng = np.random.default_rng(0)
    single = info_nce(_normalized_rows(rng, 1, 16), _normalized_rows(rng, 1, 16), 0.07).item()
    vals = [info_nce(_normalized_rows(np.random.default_rng(s), 8, 32),
                     _normalized_rows(np.random.default_rng(1000 + s), 8, 32), 1.0).item() for s in range(50)]
    swap = 0.0
    for s in range(50):
        r = np.random.default_rng(2000 + s)
        G, T = _normalized_rows(r, 8, 32), _normalized_rows(r, 8, 32)
        swap = max(swap, abs(info_nce(G, T, 0.07).item() - info_nce(T, G, 0.07).item()))
    gap = abs(float(np.mean(vals)) - math.log(8))
    ok = single == 0.0 and gap < 0.3 and swap < 1e-12
    report(6, ok, f"B=1 loss {single}; B=8 mean {np.mean(vals):.3f} vs ln8 {math.log(8):.3f} (gap < 0.3); "
                  f"tower swap diff {swap:.1e} (< 1e-12)")


def stage1_pairs(records):
    """32 training pairs spread over every chemical family in the fixture; the rest are held out."""
    train_idx = set(range(0, 64, 2))
    train = [r for i, r in enumerate(records) if i in train_idx]
    held = [r for i, r in enumerate(records) if i not in train_idx]
    return train, held


def test_c07_stage1_smoke(records):
    train, held = stage1_pairs(records)
    start = time.perf_counter()
    ckpt = train_stage1(train, CFG.stage1, CFG.dims)
    elapsed = time.perf_counter() - start
    h = ckpt.meta["history"]
    drop = 1 - h["final_loss"] / h["initial_loss"]
    model, vocab = load_stage1(ckpt)
    acc = retrieval_accuracy(model, vocab, held)
    ok = len(train) == 32 and drop >= 0.40 and acc >= 0.80 and elapsed < 180
    report(7, ok, f"InfoNCE {h['initial_loss']:.3f} -> {h['final_loss']:.4f} ({drop:.0%} drop, >= 40%); held-out "
                  f"({len(held)} pairs) matched > mismatched {acc:.1%} (>= 80%); {elapsed:.0f}s (< 180s)")


def test_c08_stage2_smoke(records, backbone):
    sixteen = records[::4][:16]
    start = time.perf_counter()
    reg = train_stage2(sixteen, backbone, None, CFG.stage2, CFG.dims, ["atom_count"])
    h = reg.meta["history"]
    ratio = h["final_loss"] / h["initial_loss"]
    cls_ckpt = train_stage2(sixteen, backbone, None, CFG.stage2, CFG.dims, ["has_oxygen"])
    model, tasks = load_aligned(cls_ckpt)
    examples = make_examples(sixteen, backbone.vocab, tasks)
    logits = predict(model, backbone, examples, tasks[0])
    acc = float(np.mean(logits.argmax(axis=1) == np.array([r.labels["has_oxygen"] for r in sixteen])))
    elapsed = time.perf_counter() - start
    backbone.check_frozen()
    ok = ratio < 0.10 and acc == 1.0 and elapsed < 300
    report(8, ok, f"16 molecules, {CFG.stage2.steps} steps: atom-count MSE ratio {ratio:.4f} (< 0.10); "
                  f"has-oxygen train accuracy {acc:.0%} (100%); {elapsed:.0f}s (< 300s)")


def test_c09_fewshot_direction(records, backbone, split, stage2_run):
    ckpt, _, _ = stage2_run
    train, valid, test = split
    held = valid + test
    spec = TASKS["hetero_count"]
    lines, ok = [], True
    for fraction in (0.05, 0.10):
        wins = 0
        for seed in range(5):
            zero = evaluate(fewshot_model(ckpt, spec, seed), backbone, records, held, [spec])
            cfg = TrainConfig(**{**CFG.fewshot.__dict__, "seed": seed})
            adapted, _ = load_aligned(fewshot_adapt(ckpt, records, train, fraction, cfg, backbone, spec.name))
            after = evaluate(adapted, backbone, records, held, [spec])
            wins += after.metrics[spec.name]["mae"] < zero.metrics[spec.name]["mae"]
        ok &= wins >= 4
        lines.append(f"fraction {fraction:.2f}: improved in {wins}/5 seeds")
    report(9, ok, "hetero_count MAE vs zero-adaptation, " + "; ".join(lines) + " (>= 4/5)")


def test_c10_metric_oracles():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, size=n)
        labels[:2] = (0, 1)
        scores = np.round(rng.normal(size=n), 1)
        worst = max(worst, abs(roc_auc(scores, labels) - roc_auc_ranks(scores, labels)))
    canon = (roc_auc([1, 2, 3, 4], [0, 0, 1, 1]), roc_auc([4, 3, 2, 1], [0, 0, 1, 1]), roc_auc([1, 1, 1, 1], [0, 1, 0, 1]))
    ok = worst <= 1e-12 and canon == (1.0, 0.0, 0.5)
    report(10, ok, f"1000 tied instances, pair-count vs rank max diff {worst:.1e}; canonical cases {canon}")


def test_c11_determinism_and_persistence(records, backbone, tmp_path):
    small = TrainConfig(steps=20, lr=0.02, batch_size=8, seed=5)
    blobs = [train_stage2(records[:24], backbone, None, small, CFG.dims, ["atom_count", "has_oxygen"]).to_bytes()
             for _ in range(2)]
    s1 = [train_stage1(records[:16], TrainConfig(steps=5, lr=0.05, batch_size=8, seed=5), CFG.dims).to_bytes()
          for _ in range(2)]
    bb = [build_backbone(backbone_corpus(records[:10]), TrainConfig(steps=5, batch_size=4), CFG.dims)
          .to_checkpoint().to_bytes() for _ in range(2)]
    p1, p2 = tmp_path / "a.g2t", tmp_path / "b.g2t"
    Checkpoint.from_bytes(blobs[0]).save(p1)
    Checkpoint.load(p1).save(p2)
    roundtrip = p1.read_bytes() == p2.read_bytes() == blobs[0]
    ok = blobs[0] == blobs[1] and s1[0] == s1[1] and bb[0] == bb[1] and roundtrip
    report(11, ok, "backbone, stage-1 and stage-2 checkpoints bitwise identical across reruns; "
                   "save/load/save byte-identical")


def test_c12_parser():
    passed = 0
    for smiles, n_atoms, n_bonds, comps, hs in VALID:
        g = parse_smiles(smiles)
        passed += (len(g.atoms), len(g.bonds), g.num_components()) == (n_atoms, n_bonds, comps) and all(
            g.hydrogen_count(i) == h for i, h in hs.items())
    for smiles, reason in ERRORS:
        try:
            parse_smiles(smiles)
        except ParseError as exc:
            passed += reason in exc.reason
    total = len(VALID) + len(ERRORS)
    rnd = np.random.default_rng(99)
    crashes = violations = 0
    for _ in range(10_000):
        s = "".join(rnd.choice(FUZZ_ALPHABET, size=int(rnd.integers(0, 15))))
        try:
            g = parse_smiles(s)
        except ParseError:
            continue
        except Exception:
            crashes += 1
            continue
        try:
            _check_invariants(g)
        except AssertionError:
            violations += 1
    ok = total >= 40 and passed == total and crashes == 0 and violations == 0
    report(12, ok, f"conformance {passed}/{total} (>= 40 cases); fuzz 10k: {crashes} crashes, "
                   f"{violations} invariant violations")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
