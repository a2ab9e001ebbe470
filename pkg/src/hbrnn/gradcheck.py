"""Central finite-difference checks of the hand-written gradients."""
from __future__ import annotations

import numpy as np

from . import ctc
from .models import Model, ModelConfig
from .nn import log_softmax, lstm_scan, lstm_scan_backward, init_lstm
from .preprocess import TrajectorySet

EPS = 1e-5
# gradients smaller than this are compared on an absolute scale
REL_FLOOR = 1e-6


def rel_error(analytic, numeric):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


def numeric_grad(f, x, indices=None, eps=EPS):
    """Central differences of scalar ``f()`` w.r.t. entries of array ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2 * eps))
    return np.array(out)


def check_lstm_cell(seed, hidden=4, input_size=3):
    """One LSTM step from a random state; loss is a random projection of (h', c')."""
    rng = np.random.default_rng(seed)
    Wx, Wh, b = init_lstm(rng, input_size, hidden, units=1)
    b += rng.normal(scale=0.5, size=b.shape)
    x = rng.normal(size=(1, 1, 1, input_size))
    h0 = rng.normal(scale=0.5, size=(1, 1, hidden))
    c0 = rng.normal(size=(1, 1, hidden))
    rh, rc = rng.normal(size=(1, 1, hidden)), rng.normal(size=(1, 1, hidden))

    def loss():
        _, (h, c), _ = lstm_scan(Wx, Wh, b, x, h0=h0, c0=c0)
        return float(np.sum(rh * h) + np.sum(rc * c))

    _, _, cache = lstm_scan(Wx, Wh, b, x, h0=h0, c0=c0)
    g = lstm_scan_backward(cache, np.zeros((1, 1, 1, hidden)), dh_T=rh, dc_T=rc)
    worst = 0.0
    for name, arr in (("Wx", Wx), ("Wh", Wh), ("b", b), ("xs", x), ("h0", h0), ("c0", c0)):
        worst = max(worst, float(rel_error(g[name].ravel(), numeric_grad(loss, arr)).max()))
    return worst


def _random_traj(rng, T, n_joints, two_hands=True):
    def m():
        return rng.normal(size=(T, 3 * n_joints))
    return TrajectorySet(m(), m(), m() if two_hands else None, m() if two_hands else None)


def tiny_word_config(kind="hbrnn"):
    layers = {"hbrnn": ("2x4x4", "2x2x4", "2x1x4"), "hrnn": ("1x4x4", "1x2x4", "1x1x4"),
              "sbrnn": ("2x1x4",), "hbrnn_m": ("2x2x4", "2x1x4"), "hbrnn_s": ("2x2x4", "2x1x4")}
    return ModelConfig(kind, "two", layers[kind], ("a", "b", "c"), n_joints=2)


def check_model(seed, config=None, coords=40):
    """Cross-entropy (or CTC) of a tiny model; a random subset of every weight array is perturbed."""
    rng = np.random.default_rng(seed)
    config = config or tiny_word_config()
    model = Model.build(config, seed)
    n_seq = int(rng.integers(1, 3))
    trajs = [_random_traj(rng, int(rng.integers(2, 7)), config.n_joints,
                          two_hands=bool(k == 0 or rng.random() < 0.5)) for k in range(n_seq)]
    if config.is_ctc:
        targets = [tuple(rng.integers(0, len(config.classes), size=int(rng.integers(1, 3))))
                   for _ in trajs]
        targets = [t if ctc.min_frames(t) <= tr.T else t[:1] for t, tr in zip(targets, trajs)]
    else:
        targets = rng.integers(0, len(config.classes), size=n_seq)

    def loss():
        return model.loss(trajs, targets)[0]

    _, grads = model.loss(trajs, targets)
    worst = 0.0
    for name, arr in model.params.items():
        k = arr.size if arr.size <= coords else coords
        idx = np.sort(rng.choice(arr.size, size=k, replace=False))
        num = numeric_grad(loss, arr, idx)
        worst = max(worst, float(rel_error(grads[name].reshape(-1)[idx], num).max()))
    return worst


def check_ctc(seed):
    """CTC loss w.r.t. raw frame logits on a random small instance."""
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 7))
    V = int(rng.integers(2, 5))  # includes the blank
    L = int(rng.integers(0, min(3, T) + 1))
    target = tuple(int(k) for k in rng.integers(0, V - 1, size=L))
    while ctc.min_frames(target) > T:
        target = target[:-1]
    logits = rng.normal(scale=1.5, size=(T, V))

    def loss():
        return ctc.ctc_loss(log_softmax(logits, axis=1), target).loss

    g = ctc.ctc_loss(log_softmax(logits, axis=1), target).grad
    return float(rel_error(g.ravel(), numeric_grad(loss, logits)).max())


def run_suite(instances=20, seed=0):
    """Max relative error per check family over ``instances`` random cases each."""
    return {
        "lstm_cell": max(check_lstm_cell(seed + k) for k in range(instances)),
        "hbrnn_word": max(check_model(seed + k) for k in range(instances)),
        "ctc": max(check_ctc(seed + k) for k in range(instances)),
    }
