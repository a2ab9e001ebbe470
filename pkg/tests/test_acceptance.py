"""End-to-end acceptance checks; each records a PASS/FAIL line for the terminal summary."""
import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from hbrnn.cli import main
from hbrnn.ctc import InfeasibleTargetError, collapse, ctc_loss, min_frames
from hbrnn.data import GeneratorConfig, gen_sentences, gen_synthetic, template_sentences
from hbrnn.gradcheck import run_suite
from hbrnn.metrics import edit_counts
from hbrnn.models import ModelConfig, build_model, param_count, preset
from hbrnn.nn import log_softmax
from hbrnn.preprocess import sg_filter
from hbrnn.training import TrainConfig, run_experiment
from oracles import ctc_marginals, ctc_nll_bruteforce, edit_triple, path_collapse


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    assert ok, detail


def test_c1_smoothing_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    t = np.arange(25, dtype=float)
    for _ in range(200):
        deg = int(rng.integers(0, 4))
        coef = rng.uniform(-1, 1, size=deg + 1)
        x = np.polyval(coef, t)
        worst = max(worst, float(np.max(np.abs(sg_filter(x)[2:-2] - x[2:-2]))))
    const_err = 0.0
    for c in rng.uniform(-1e3, 1e3, size=50):
        x = np.full(int(rng.integers(1, 12)), c)
        const_err = max(const_err, float(np.max(np.abs(sg_filter(x) - x))))
    dt = time.perf_counter() - t0
    record("1 smoothing exactness",
           worst < 1e-9 and const_err < 1e-9 and dt < 1.0,
           f"poly max err {worst:.2e}, constant max err {const_err:.2e}, {dt:.2f}s (<1s)")


def test_c2_gradient_suite():
    t0 = time.perf_counter()
    errs = run_suite(instances=20, seed=0)
    dt = time.perf_counter() - t0
    record("2 gradient suite",
           all(v < 1e-4 for v in errs.values()) and dt < 30.0,
           ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f", {dt:.1f}s (<30s)")


def test_c3_ctc_oracle():
    rng = np.random.default_rng(0)
    worst, infeasible_ok, n = 0.0, True, 0
    while n < 200:
        T = int(rng.integers(1, 7))
        V = int(rng.integers(2, 5))
        L = int(rng.integers(0, 4))
        target = tuple(int(k) for k in rng.integers(0, V - 1, size=L))
        lp = log_softmax(rng.normal(scale=2.0, size=(T, V)), axis=1)
        probs = np.exp(lp).tolist()
        if min_frames(target) > T:
            try:
                ctc_loss(lp, target)
                infeasible_ok = False
            except InfeasibleTargetError:
                pass
            assert ctc_nll_bruteforce(probs, target, V - 1) == math.inf
            continue
        worst = max(worst, abs(ctc_loss(lp, target).loss - ctc_nll_bruteforce(probs, target, V - 1)))
        n += 1
    part_worst = 0.0
    for _ in range(50):
        T, V = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        lp = log_softmax(rng.normal(scale=2.0, size=(T, V)), axis=1)
        total = 0.0
        for length in range(T + 1):
            for tgt in itertools.product(range(V - 1), repeat=length):
                if min_frames(tgt) <= T:
                    total += math.exp(-ctc_loss(lp, tgt).loss)
        part_worst = max(part_worst, abs(total - 1.0))
    record("3 CTC oracle", worst < 1e-8 and part_worst < 1e-8 and infeasible_ok,
           f"{n} instances, max |loss diff| {worst:.1e}, partition max err {part_worst:.1e}")


def test_c4_collapse():
    S, L, B = 0, 1, 2
    named = {"SSL": [S, S, L], "SLL": [S, L, L], "S_L": [S, B, L], "SL_": [S, L, B]}
    exact = all(collapse(p, B) == (S, L) for p in named.values())
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(10_000):
        V = int(rng.integers(2, 6))
        path = rng.integers(0, V, size=int(rng.integers(0, 15))).tolist()
        out = collapse(path, V - 1)
        blank_free = V - 1 not in out
        # one output per maximal run of a non-blank symbol, in order
        runs = [k for k, _ in itertools.groupby(path) if k != V - 1]
        if not blank_free or list(out) != runs or out != path_collapse(path, V - 1):
            bad += 1
    record("4 collapse conformance", exact and bad == 0,
           f"named set {'ok' if exact else 'WRONG'}, {bad} bad of 10000 random paths")


def test_c5_wer_oracle():
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(1000):
        vocab = int(rng.integers(1, 6))
        hyp = rng.integers(0, vocab, size=int(rng.integers(0, 9))).tolist()
        ref = rng.integers(0, vocab, size=int(rng.integers(0, 9))).tolist()
        if edit_counts(hyp, ref) != edit_triple(hyp, ref):
            bad += 1
    record("5 WER oracle", bad == 0, f"{bad} mismatches of 1000 pairs")


WORD_MODELS = ("hbrnn-2h", "hbrnn-m-2h", "hbrnn-s-2h", "sbrnn-2h", "hrnn-2h")


@pytest.mark.slow
def test_c6_word_level_learning():
    t0 = time.perf_counter()
    gcfg = GeneratorConfig(classes=10, subjects=5, samples=20, n_joints=8, t_min=10, t_max=14, noise=2.0)
    data = gen_synthetic(gcfg, seed=0)
    classes = gcfg.word_names
    tcfg = TrainConfig(epochs=6, seed=0)
    acc = {}
    for name in WORD_MODELS:
        acc[name] = run_experiment(data, preset(name, classes, gcfg.n_joints), tcfg, "loso")["mean"]
    dt = time.perf_counter() - t0
    hb = acc["hbrnn-2h"]
    ok = hb >= 0.95 and hb >= acc["hbrnn-m-2h"] and hb >= acc["hbrnn-s-2h"] and dt < 600
    record("6 word-level LOSO", ok,
           ", ".join(f"{k} {v:.3f}" for k, v in acc.items()) + f" (sbrnn/hrnn not gated), {dt:.0f}s (<600s)")


@pytest.mark.slow
def test_c7_sentence_level_learning():
    t0 = time.perf_counter()
    words = tuple(f"w{k}" for k in range(6))
    gcfg = GeneratorConfig(classes=6, subjects=2, n_joints=8, t_min=10, t_max=14, noise=2.0, words=words)
    sentences = template_sentences([words[0:3], words[3:6], words[0:3]])
    data = gen_sentences(gcfg, sentences, samples_per_sentence=4, seed=0)
    mcfg = preset("hbrnn-ctc", words, gcfg.n_joints)
    rep = run_experiment(data, mcfg, TrainConfig(epochs=15, seed=0), "unseen10", folds=10)
    edits = sum(sum(f["edits"].values()) for f in rep["folds"])
    ref_words = sum(f["reference_words"] for f in rep["folds"])
    pooled = edits / ref_words
    dt = time.perf_counter() - t0
    record("7 sentence-level CTC", pooled <= 0.15 and dt < 900,
           f"{len(sentences)} sentences, {len(data)} samples, pooled WER {pooled:.3f} "
           f"(fold mean {rep['mean']:.3f}), {dt:.0f}s (<900s)")


# model table rows: preset -> recurrent layer shapes
TABLE = {
    "hbrnn-m-1h": ("2x1x128",),
    "hbrnn-s-1h": ("2x1x128",),
    "sbrnn-1h": ("2x1x128",),
    "hrnn-1h": ("1x2x64", "1x1x128"),
    "hbrnn-1h": ("2x2x32", "2x1x64"),
    "hbrnn-m-2h": ("2x2x64", "2x1x128"),
    "hbrnn-s-2h": ("2x2x64", "2x1x128"),
    "sbrnn-2h": ("2x1x256",),
    "hrnn-2h": ("1x4x64", "1x2x64", "1x1x128"),
    "hbrnn-2h": ("2x4x32", "2x2x32", "2x1x64"),
    "hbrnn-ctc": ("2x4x32", "2x2x64", "2x1x128"),
}
# streams feeding the first layer
STREAMS = {"hbrnn-m-1h": 1, "hbrnn-s-1h": 1, "sbrnn-1h": 2, "hrnn-1h": 2, "hbrnn-1h": 2,
           "hbrnn-m-2h": 2, "hbrnn-s-2h": 2, "sbrnn-2h": 4, "hrnn-2h": 4, "hbrnn-2h": 4, "hbrnn-ctc": 4}


def closed_form(layers, n_streams, n_joints, n_out):
    total, width, groups = 0, 3 * n_joints, n_streams
    for spec in layers:
        d, r, h = (int(v) for v in spec.split("x"))
        D = width * groups // r
        total += r * d * 4 * (D * h + h * h + h)
        width, groups = d * h, r
    return total + width * n_out + n_out


def test_c8_table_conformance():
    classes = tuple(f"c{k}" for k in range(10))
    problems = []
    for name, layers in TABLE.items():
        cfg = preset(name, classes, 23)
        m = build_model(cfg, 0)
        got = tuple(str(s) for s, _ in m.layer_shapes())
        if got != layers:
            problems.append(f"{name} shapes {got}")
        n_out = 11 if name == "hbrnn-ctc" else 10
        expect = closed_form(layers, STREAMS[name], 23, n_out)
        if param_count(m) != expect:
            problems.append(f"{name} params {param_count(m)} != {expect}")
    record("8 model table conformance", not problems,
           "; ".join(problems) or f"{len(TABLE)} presets, shapes and closed-form counts exact")


def test_c9_cli_determinism(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    assert main(["gen", "--classes", "3", "--samples", "5", "--subjects", "2", "--joints", "3",
                 "--t-min", "6", "--t-max", "8", "--seed", "1", "--out", str(data)]) == 0
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        rc = main(["train", "--data", str(data), "--model", "hbrnn-2h", "--protocol", "loso",
                   "--epochs", "2", "--seed", "5", "--out", str(out)])
        assert rc == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    capsys.readouterr()
    same = outs[0] == outs[1] and len(outs[0]) == 4
    record("9 train determinism", same,
           f"{len(outs[0])} files ({', '.join(outs[0])}) {'identical' if same else 'DIFFER'}")
