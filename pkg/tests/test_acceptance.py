"""Acceptance criteria 1-9.

Each criterion is one test named ``test_criterion_<n>_...``; conftest prints a
PASS/FAIL line per criterion at the end of the run. Measured quantities are
attached with ``record_property`` so they appear on that line.
"""

import time
import zlib
from pathlib import Path

import numpy as np
import pytest

from mannmt import attention as attn
from mannmt import memory as mem
from mannmt.autodiff import Value, check_gradients, ops
from mannmt.bleu import bleu
from mannmt.cli import main
from mannmt.data import EOS, pad
from mannmt.decoding import beam_search, greedy_decode
from mannmt.models import ARCHITECTURES

import oracles
import test_attention as ta
import test_autodiff as tad
import test_bleu as tb
import test_decoding as td
import test_memory as tm
from support import generic_point, model_gradcheck, random_pair, tiny_model


def V(x):
    return Value(np.asarray(x, dtype=np.float64))


# ------------------------------------------------------------ 1. oracles

def test_criterion_1_equation_oracles(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_address = 0.0
    for _ in range(10_000):
        N, W = int(rng.integers(1, 10)), int(rng.integers(1, 7))
        c = tm.random_address_case(rng, N, W)
        head = tm.make_head(c["key"][None], [[c["beta"]]], [[c["g"]]], c["kernel"][None], [[c["gamma"]]])
        out = mem.address(head, V(c["memory"][None]), V(c["w_prev"][None]))
        ref, ref_c = oracles.address(c["key"], c["beta"], c["g"], c["kernel"], c["gamma"],
                                     c["memory"].tolist(), c["w_prev"].tolist())
        worst_address = max(worst_address, np.abs(out.weights.data[0] - ref).max(),
                            np.abs(out.content.data[0] - ref_c).max())
    worst_attention = 0.0
    for _ in range(10_000):
        c = ta.random_attention_case(rng)
        res = ta.run_case(c)
        w, w_c, ctx = oracles.ntm_attention(c["h"].tolist(), c["states"].tolist(), c["W_a"].tolist(), c["beta"],
                                            c["g"], c["kernel"].tolist(), c["gamma"], c["prev"].tolist(),
                                            c["length"])
        worst_attention = max(worst_attention, np.abs(res.weights.data[0] - w).max(),
                              np.abs(res.content.data[0] - w_c).max(), np.abs(res.context.data[0] - ctx).max())
    elapsed = time.perf_counter() - start
    record_property("address_err", f"{worst_address:.1e}")
    record_property("attention_err", f"{worst_attention:.1e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert worst_address < 1e-12
    assert worst_attention < 1e-12
    assert elapsed < 60


# ---------------------------------------------------------- 2. gradients

def _primitive_worst(kind, trials=20):
    rng = np.random.default_rng(zlib.crc32(kind.encode()) + 1)
    worst = 0.0
    for trial in range(trials):
        inputs, fn = tad._random_case(rng, kind)
        probe = [None]

        def scalar(*args):
            out = fn(*args)
            if probe[0] is None:
                probe[0] = np.random.default_rng(trial).normal(size=out.shape)
            return ops.sum(ops.mul(out, Value(probe[0])))

        worst = max(worst, check_gradients(scalar, inputs, perturbation=1e-5).max_relative_error)
    return worst


def _addressing_worst():
    rng = np.random.default_rng(202)
    N, W = 8, 6
    raw = rng.normal(size=(2, mem.head_parameter_size(W, True)))
    M0 = rng.normal(size=(2, N, W))
    w_prev = rng.dirichlet(np.ones(N), size=2)
    probe_w, probe_r, probe_m = rng.normal(size=(2, N)), rng.normal(size=(2, W)), rng.normal(size=(2, N, W))

    def loss(raw, M, w_prev):
        head = mem.squash_head(raw, W, write=True)
        out = mem.address(head, M, w_prev)
        M2 = mem.write(M, out.weights, head.erase, head.add)
        return (ops.sum(out.weights * probe_w) + ops.sum(out.content * probe_w)
                + ops.sum(mem.read(M, out.weights) * probe_r) + ops.sum(M2 * probe_m))

    return check_gradients(loss, [raw, M0, w_prev], perturbation=1e-5).max_relative_error


def _attention_worst():
    rng = np.random.default_rng(203)
    S, H = 6, 5
    lengths = np.array([6, 4])
    probe = rng.normal(size=(2, H))
    prev = np.stack([rng.dirichlet(np.ones(S)), np.r_[rng.dirichlet(np.ones(4)), np.zeros(2)]])

    def luong(h, states, W_a):
        src = attn.EncodedSource(states, lengths)
        return ops.sum(attn.context(attn.luong_weights(h, src, 1.0, W_a), src) * probe)

    def ntm(h, states, W_a, raw, prev):
        src = attn.EncodedSource(states, lengths)
        res = attn.ntm_style_attention(h, src, attn.squash_attention_head(raw), attn.AttentionState(prev, W_a))
        return ops.sum(res.context * probe)

    h, states, W_a = rng.normal(size=(2, H)), rng.normal(size=(2, S, H)), rng.normal(size=(H, H))
    raw = rng.normal(size=(2, attn.ATTENTION_HEAD_SIZE))
    return (check_gradients(luong, [h, states, W_a], perturbation=1e-5).max_relative_error,
            check_gradients(ntm, [h, states, W_a, raw, prev], perturbation=1e-5).max_relative_error)


def test_criterion_2_gradient_suite(record_property):
    start = time.perf_counter()
    errors = {kind: _primitive_worst(kind) for kind in sorted(ops.PRIMITIVES)}
    errors["addressing"] = _addressing_worst()
    errors["luong-attention"], errors["ntm-attention"] = _attention_worst()
    rng = np.random.default_rng(204)
    for arch in ARCHITECTURES:
        # five decoder steps, every parameter element perturbed
        model = generic_point(tiny_model(arch, seed=5), seed=5)
        src, tgt = random_pair(rng, 7, 3, 5)
        errors[f"model:{arch}"] = model_gradcheck(model, src, tgt).max_relative_error
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    record_property("checks", len(errors))
    record_property("worst", f"{worst}={errors[worst]:.1e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert all(err < 1e-4 for err in errors.values()), errors
    assert elapsed < 300


# ----------------------------------------------------------- 3. simplex

def _check_simplex(w, length=None):
    w = np.asarray(w)
    assert np.all(w >= 0)
    assert np.abs(w.sum(-1) - 1.0).max() < 1e-9
    if length is not None:
        assert np.all(w[..., length:] == 0.0)


def test_criterion_3_simplex_invariants(record_property):
    rng = np.random.default_rng(303)
    for _ in range(10_000):
        c = tm.random_address_case(rng, int(rng.integers(1, 13)), int(rng.integers(1, 9)))
        head = tm.make_head(c["key"][None], [[c["beta"]]], [[c["g"]]], c["kernel"][None], [[c["gamma"]]])
        out = mem.address(head, V(c["memory"][None]), V(c["w_prev"][None]))
        _check_simplex(out.weights.data)
        _check_simplex(out.content.data)
        a = ta.random_attention_case(rng)
        res = ta.run_case(a)
        src = ta.source(a["states"][None], [a["length"]])
        plain = attn.luong_weights(V(a["h"][None]), src, V([[a["beta"]]]), V(a["W_a"]))
        for w in (res.weights.data, res.content.data, plain.data):
            _check_simplex(w, a["length"])
    # every head weight recorded inside whole models, on padded batches
    episodes = 0
    for case in range(40):
        arch = ARCHITECTURES[case % 4]
        model = generic_point(tiny_model(arch, vocab=9, seed=case), seed=case, scale=1.0)
        sources = [list(rng.integers(4, 9, size=int(rng.integers(0, 6)))) + [EOS] for _ in range(3)]
        padded, lengths = pad(sources)
        state = model.encode(padded, lengths, record=True)
        for _ in range(4):
            _, state = model.decode_step(state, rng.integers(4, 9, size=3))
        for step in state.trace:
            for rec in step["heads"]:
                limit = lengths[:, None] if rec["kind"] == "attention" else None
                for key in ("w", "w_c"):
                    w = np.asarray(rec[key])
                    _check_simplex(w)
                    if limit is not None:
                        assert np.all(w[np.arange(w.shape[1])[None] >= limit] == 0.0)
        episodes += 1
    record_property("fuzz_cases", 10_000)
    record_property("model_episodes", episodes)


# --------------------------------------------------------- 4. reduction

def test_criterion_4_reduction_to_luong(record_property):
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(2000):
        B, S, H = int(rng.integers(1, 4)), int(rng.integers(1, 9)), int(rng.integers(1, 6))
        lengths = rng.integers(1, S + 1, size=B)
        states, h, W_a = rng.normal(size=(B, S, H)), rng.normal(size=(B, H)), rng.normal(size=(H, H))
        beta = rng.exponential(2.0, size=(B, 1))
        prev = np.zeros((B, S))
        for b, n in enumerate(lengths):
            prev[b, :n] = rng.dirichlet(np.ones(n))
        src = attn.EncodedSource(V(states), lengths)
        head = ta.head(beta, np.ones((B, 1)), attn.identity_kernel(B), np.ones((B, 1)))
        res = attn.ntm_style_attention(V(h), src, head, attn.AttentionState(V(prev), V(W_a)))
        plain = attn.luong_weights(V(h), src, V(beta), V(W_a))
        ctx = attn.context(plain, src)
        worst = max(worst, np.abs(res.weights.data - plain.data).max(), np.abs(res.context.data - ctx.data).max())
    record_property("max_abs_diff", f"{worst:.1e}")
    assert worst < 1e-12


# -------------------------------------------------------------- 5. beam

def test_criterion_5_beam_correctness(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    for case in range(100):
        model = td.toy_model(ARCHITECTURES[case % 4], 9, seed=1000 + case)
        src = list(rng.integers(4, 9, size=int(rng.integers(1, 6)))) + [EOS]
        greedy = greedy_decode(model, np.array([src]), None, 8)[0]
        assert beam_search(model, src, beam_width=1, max_length=8).tokens == greedy
    Vsize, L = 4, 3
    for arch in ARCHITECTURES:
        for seed in range(3):
            model = td.toy_model(arch, Vsize, seed=2000 + seed)
            (score, _), tokens = td.exhaustive_best(model, [EOS], Vsize, L)
            result = beam_search(model, [EOS], beam_width=Vsize ** L, max_length=L)
            assert result.tokens == tokens
            assert abs(result.score - score) < 1e-12
    elapsed = time.perf_counter() - start
    record_property("seconds", f"{elapsed:.1f}")
    assert elapsed < 60


# ------------------------------------------------------ learning checks
#
# Both checks train through the CLI, then score the best checkpoint with
# ``mannmt evaluate`` (default beam) against references built here, not by
# the training pipeline. Each criterion allows three seeded restarts; the
# first seed that passes ends the loop.

RESTART_SEEDS = (1, 2, 3)
COPY_BITS = 4
COPY_FLAGS = ["--task", "copy", "--arch", "pure-mann", "--copy-bits", str(COPY_BITS), "--copy-max-length", "8",
              "--memory-locations", "16", "--memory-width", "16", "--hidden-size", "64", "--embedding-size", "16",
              "--read-heads", "1", "--write-heads", "1", "--dropout", "0", "--learning-rate", "0.003",
              "--steps", "20000", "--held-out", "500", "--validation-interval", "500", "--target-accuracy", "0.995"]
TOY_FLAGS = ["--task", "toy", "--toy-vocab", "50", "--toy-max-length", "12", "--train-pairs", "20000",
             "--held-out", "1000", "--embedding-size", "32", "--hidden-size", "128", "--memory-locations", "16",
             "--memory-width", "32", "--dropout", "0", "--learning-rate", "0.003", "--steps", "20000",
             "--validation-interval", "500", "--target-accuracy", "0.995"]


def _lines(path):
    return Path(path).read_text(encoding="utf-8").splitlines()


def _train_rows(out):
    return [row.split("\t") for row in _lines(out / "metrics.tsv") if row.startswith("train")]


def _toy_references(out, seed):
    """Rule-generated targets for the held-out sources, from an independently rebuilt bijection."""
    data_seed = int(np.random.SeedSequence(seed).generate_state(4)[0])
    perm = np.random.default_rng([data_seed, 0]).permutation(50)
    substitution = {i: int(perm[i]) for i in range(50)}
    refs = []
    for line in _lines(out / "valid.src"):
        ids = [int(tok[1:]) for tok in line.split()]
        refs.append(" ".join(f"t{t}" for t in oracles.toy_translate(ids, substitution)))
    return refs


def _token_accuracy(hypotheses, references):
    """Position-wise token accuracy over reference positions, EOS included."""
    correct = total = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = hyp.split() + ["</s>"], ref.split() + ["</s>"]
        correct += sum(a == b for a, b in zip(h, r))
        total += len(r)
    return correct / total


def _learn(root, flags, threshold, references):
    attempts = []
    for seed in RESTART_SEEDS:
        out = root / f"seed{seed}"
        start = time.perf_counter()
        assert main(["train", *flags, "--seed", str(seed), "--output-dir", str(out)]) == 0
        elapsed = time.perf_counter() - start
        refs = references(out, seed)
        assert _lines(out / "valid.tgt") == refs
        hyp = out / "held_out.hyp"
        assert main(["translate", str(out / "best.ckpt"), "--input", str(out / "valid.src"),
                     "--output", str(hyp)]) == 0
        accuracy = _token_accuracy(_lines(hyp), refs)
        attempts.append(dict(seed=seed, out=out, seconds=elapsed, accuracy=accuracy,
                             steps=int(_train_rows(out)[-1][1])))
        if accuracy >= threshold:
            break
    return attempts


def _summary(attempts):
    return ", ".join(f"seed {a['seed']}: {a['accuracy']:.4f} in {a['steps']} steps/{a['seconds']:.0f}s"
                     for a in attempts)


def test_criterion_6_copy_learning(tmp_path, record_property):
    attempts = _learn(tmp_path, COPY_FLAGS, 0.99, lambda out, seed: _lines(out / "valid.src"))
    record_property("attempts", _summary(attempts))
    final = attempts[-1]
    assert final["accuracy"] >= 0.99
    assert final["steps"] <= 20_000
    assert final["seconds"] <= 30 * 60


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    """Baseline and pure MANN trained once on the toy task; criteria 7 and 8 share them."""
    root = tmp_path_factory.mktemp("toy")
    return {arch: _learn(root / arch, [*TOY_FLAGS, "--arch", arch], 0.90, _toy_references)
            for arch in ("baseline", "pure-mann")}


def test_criterion_7_toy_translation_learning(toy_runs, record_property):
    base, mann = toy_runs["baseline"][-1], toy_runs["pure-mann"][-1]
    record_property("baseline", _summary(toy_runs["baseline"]))
    record_property("pure-mann", _summary(toy_runs["pure-mann"]))
    record_property("gap_pp", f"{100 * abs(base['accuracy'] - mann['accuracy']):.2f}")
    assert base["accuracy"] >= 0.90 and mann["accuracy"] >= 0.90
    assert abs(base["accuracy"] - mann["accuracy"]) <= 0.05
    assert base["seconds"] <= 3600 and mann["seconds"] <= 3600


def test_criterion_8_write_head_analysis(toy_runs, tmp_path, capsys, record_property):
    out = toy_runs["pure-mann"][-1]["out"]
    sentence = max(_lines(out / "valid.src"), key=lambda line: len(line.split()))
    for run in ("a", "b"):
        assert main(["inspect", str(out / "best.ckpt"), "--sentence", sentence,
                     "--output-dir", str(tmp_path / run)]) == 0
    capsys.readouterr()
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert any(str(f).startswith("write-0") for f in files)
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    stats = {}
    for line in _lines(tmp_path / "a" / "report.txt"):
        parts = line.split("\t")
        if parts[0] == "write-0" and parts[1] == "encoding":
            stats = dict(p.split("=") for p in parts[2:])
    assert stats, "no encoding-phase write-head report"
    for key in ("forward_step_fraction", "mean_forward_shift"):
        assert 0.0 <= float(stats[key]) <= 1.0
    record_property("encoding_forward_step_fraction", stats["forward_step_fraction"])
    record_property("encoding_forward_shift_mass", stats["mean_forward_shift"])
    record_property("sentence_length", len(sentence.split()))


# -------------------------------------------------------------- 9. BLEU

def test_criterion_9_bleu_matches_reference(record_property):
    worst = 0.0
    for cand, ref in tb.PAIRS:
        worst = max(worst, abs(bleu([cand], [ref]) - tb.reference_bleu([cand], [ref])))
    cands, refs = zip(*tb.PAIRS)
    worst = max(worst, abs(bleu(list(cands), list(refs)) - tb.reference_bleu(list(cands), list(refs))))
    record_property("max_abs_diff", f"{worst:.2e}")
    assert worst <= 0.01
    assert bleu(["the cat sat on the mat"], ["the cat sat on the mat"]) == pytest.approx(100.0, abs=1e-9)
    assert bleu(["a b c d e f g"], ["h i j k l m n"]) == 0.0
