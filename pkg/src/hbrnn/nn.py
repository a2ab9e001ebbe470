"""Neural primitives with hand-written gradients.

Everything works in float64. The recurrent kernel operates on a stack of
``U`` independent LSTMs that share sequence length and batch size, which is
how the hierarchical models run all RNNs of one layer (and both scan
directions) in a single pass.

Shapes used throughout:

* ``xs``   : (U, T, B, D)  inputs
* ``mask`` : (U, T, B)     1.0 where a step is valid, 0.0 otherwise
* ``Wx``   : (U, D, 4H), ``Wh`` : (U, H, 4H), ``b`` : (U, 4H)

Gate blocks are stacked in the order input, forget, candidate, output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GATES = ("i", "f", "g", "o")


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"{name}: non-finite value produced")


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits, axis=-1):
    """Numerically stable softmax along ``axis``."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ShapeError("softmax of an empty vector")
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ShapeError("log_softmax of an empty vector")
    z = logits - np.max(logits, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


@dataclass(frozen=True)
class DenseParams:
    W: np.ndarray  # (D_out, D_in)
    b: np.ndarray  # (D_out,)


def dense_forward(params: DenseParams, x, activation=None):
    """Affine readout ``activation(W x + b)``; identity when ``activation`` is None."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.W.shape[1]:
        raise ShapeError(f"dense: input width {x.shape[-1]} != {params.W.shape[1]}")
    y = x @ params.W.T + params.b
    return y if activation is None else activation(y)


@dataclass(frozen=True)
class LstmParams:
    """One LSTM's weights. ``Wx`` maps input to the four stacked gates."""

    Wx: np.ndarray  # (D, 4H)
    Wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    @property
    def hidden(self):
        return self.Wh.shape[0]

    @property
    def input_size(self):
        return self.Wx.shape[0]

    def stacked(self):
        return self.Wx[None], self.Wh[None], self.b[None]


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError("LstmState: h and c differ in shape")


def init_lstm(rng, input_size, hidden, forget_bias=1.0, units=None):
    """Glorot-uniform weights, zero biases except the forget gate.

    With ``units`` set, returns stacked arrays with a leading unit axis.
    """
    shape_pre = () if units is None else (units,)
    lim_x = np.sqrt(6.0 / (input_size + 4 * hidden))
    lim_h = np.sqrt(6.0 / (hidden + 4 * hidden))
    Wx = rng.uniform(-lim_x, lim_x, size=shape_pre + (input_size, 4 * hidden))
    Wh = rng.uniform(-lim_h, lim_h, size=shape_pre + (hidden, 4 * hidden))
    b = np.zeros(shape_pre + (4 * hidden,))
    b[..., hidden:2 * hidden] = forget_bias
    return Wx, Wh, b


# ---------------------------------------------------------------------------
# stacked, masked LSTM scan


@dataclass
class ScanCache:
    xs: np.ndarray
    mask: np.ndarray
    Wx: np.ndarray
    Wh: np.ndarray
    h_prev: np.ndarray  # (U, T, B, H) state entering each step
    c_prev: np.ndarray
    gates: np.ndarray  # (U, T, B, 4H) post-activation
    tanh_c: np.ndarray  # (U, T, B, H)
    full: np.ndarray  # (T,) True where every mask entry of the step is 1


def _gate_affine(H):
    # sigmoid(z) = 0.5 * tanh(0.5 z) + 0.5, so one tanh covers all four gates
    pre = np.full(4 * H, 0.5)
    pre[2 * H:3 * H] = 1.0
    post_add = np.full(4 * H, 0.5)
    post_add[2 * H:3 * H] = 0.0
    return pre, pre, post_add


def lstm_scan(Wx, Wh, b, xs, mask=None, h0=None, c0=None):
    """Run ``U`` stacked LSTMs forward in time.

    Where ``mask`` is 0 the state is carried over unchanged and the output is
    zero. Returns ``(ys, (h_T, c_T), cache)``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    U, T, B, D = xs.shape
    if Wx.shape[:2] != (U, D):
        raise ShapeError(f"lstm_scan: Wx shape {Wx.shape} does not fit input {xs.shape}")
    H = Wh.shape[1]
    if Wh.shape != (U, H, 4 * H) or b.shape != (U, 4 * H):
        raise ShapeError("lstm_scan: inconsistent recurrent parameter shapes")
    if mask is None:
        mask = np.ones((U, T, B))
    full = np.all(mask == 1.0, axis=(0, 2))
    m = mask[..., None]
    pre, post_mul, post_add = _gate_affine(H)

    zx = np.matmul(xs.reshape(U, T * B, D), Wx).reshape(U, T, B, 4 * H)
    zx += b[:, None, None, :]

    h = np.zeros((U, B, H)) if h0 is None else np.array(h0, dtype=np.float64)
    c = np.zeros((U, B, H)) if c0 is None else np.array(c0, dtype=np.float64)
    h_prev = np.empty((U, T, B, H))
    c_prev = np.empty((U, T, B, H))
    gates = np.empty((U, T, B, 4 * H))
    tanh_c = np.empty((U, T, B, H))
    ys = np.empty((U, T, B, H))
    for t in range(T):
        h_prev[:, t] = h
        c_prev[:, t] = c
        a = gates[:, t]
        np.matmul(h, Wh, out=a)
        a += zx[:, t]
        a *= pre
        np.tanh(a, out=a)
        a *= post_mul
        a += post_add
        i, f, g, o = a[..., :H], a[..., H:2 * H], a[..., 2 * H:3 * H], a[..., 3 * H:]
        c_new = f * c
        c_new += i * g
        tc = tanh_c[:, t]
        np.tanh(c_new, out=tc)
        h_new = ys[:, t]
        np.multiply(o, tc, out=h_new)
        if full[t]:
            h, c = h_new, c_new
        else:
            mt = m[:, t]
            h = mt * h_new + (1.0 - mt) * h
            c = mt * c_new + (1.0 - mt) * c
            h_new *= mt
    _check_finite("lstm_scan", ys, c)
    cache = ScanCache(xs, mask, Wx, Wh, h_prev, c_prev, gates, tanh_c, full)
    return ys, (h.copy(), c.copy()), cache


def lstm_scan_backward(cache: ScanCache, dys, dh_T=None, dc_T=None):
    """Backpropagate through :func:`lstm_scan`.

    Returns a dict with ``xs``, ``Wx``, ``Wh``, ``b``, ``h0``, ``c0`` gradients.
    """
    if cache is None:
        raise RuntimeError("lstm_scan_backward called without a cached forward pass")
    xs, mask, Wx, Wh = cache.xs, cache.mask, cache.Wx, cache.Wh
    U, T, B, D = xs.shape
    H = Wh.shape[1]
    m = mask[..., None]
    gates = cache.gates
    # activation derivatives for every step at once
    dact = gates * (1.0 - gates)
    gg = gates[..., 2 * H:3 * H]
    dact[..., 2 * H:3 * H] = 1.0 - gg * gg
    dtanh_c = 1.0 - cache.tanh_c * cache.tanh_c

    dh = np.zeros((U, B, H)) if dh_T is None else np.array(dh_T, dtype=np.float64)
    dc = np.zeros((U, B, H)) if dc_T is None else np.array(dc_T, dtype=np.float64)
    dz_all = np.empty((U, T, B, 4 * H))
    WhT = np.swapaxes(Wh, 1, 2)
    for t in range(T - 1, -1, -1):
        a = gates[:, t]
        i, f, g, o = a[..., :H], a[..., H:2 * H], a[..., 2 * H:3 * H], a[..., 3 * H:]
        if cache.full[t]:
            dh_new = dys[:, t] + dh
            dc_new = dh_new * o
            dc_new *= dtanh_c[:, t]
            dc_new += dc
        else:
            mt = m[:, t]
            dh_new = mt * (dys[:, t] + dh)
            dc_new = mt * dc + dh_new * o * dtanh_c[:, t]
        dz = dz_all[:, t]
        np.multiply(dc_new, g, out=dz[..., :H])
        np.multiply(dc_new, cache.c_prev[:, t], out=dz[..., H:2 * H])
        np.multiply(dc_new, i, out=dz[..., 2 * H:3 * H])
        np.multiply(dh_new, cache.tanh_c[:, t], out=dz[..., 3 * H:])
        dz *= dact[:, t]
        if cache.full[t]:
            dh = np.matmul(dz, WhT)
            dc = dc_new * f
        else:
            dh = np.matmul(dz, WhT) + (1.0 - mt) * dh
            dc = dc_new * f + (1.0 - mt) * dc
    dz_flat = dz_all.reshape(U, T * B, 4 * H)
    dWh = np.matmul(np.swapaxes(cache.h_prev.reshape(U, T * B, H), 1, 2), dz_flat)
    dWx = np.matmul(np.swapaxes(xs.reshape(U, T * B, D), 1, 2), dz_flat)
    dxs = np.matmul(dz_flat, np.swapaxes(Wx, 1, 2)).reshape(U, T, B, D)
    db = dz_flat.sum(axis=1)
    return {"xs": dxs, "Wx": dWx, "Wh": dWh, "b": db, "h0": dh, "c0": dc}


# ---------------------------------------------------------------------------
# single-sequence conveniences


def lstm_step(params: LstmParams, x, state: LstmState) -> LstmState:
    """One LSTM update for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_size,):
        raise ShapeError(f"lstm_step: expected input of length {params.input_size}, got {x.shape}")
    if state.h.shape != (params.hidden,):
        raise ShapeError("lstm_step: state size does not match hidden size")
    Wx, Wh, b = params.stacked()
    _, (h, c), _ = lstm_scan(Wx, Wh, b, x[None, None, None, :],
                             h0=state.h[None, None, :], c0=state.c[None, None, :])
    return LstmState(h[0, 0], c[0, 0])


def time_reverse(xs, lengths):
    """Reverse each batch column of ``xs`` (axis 1 = time) within its own length.

    Padding positions stay in place; the map is an involution.
    """
    T, B = xs.shape[1], xs.shape[2]
    idx = reverse_index(T, lengths)
    return xs[:, idx, np.arange(B)[None, :]]


def reverse_index(T, lengths):
    t = np.arange(T)[:, None]
    L = np.asarray(lengths)[None, :]
    return np.where(t < L, L - 1 - t, t)


def rnn_forward(params: LstmParams, xs, direction="forward"):
    """Unroll an LSTM over a (T, D) sequence from a zero state.

    The backward direction scans from the last frame to the first; its output
    rows are returned in the original time order.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] < 1:
        raise ShapeError("rnn_forward expects a non-empty (T, D) matrix")
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    seq = xs if direction == "forward" else xs[::-1]
    ys, _, _ = lstm_scan(*params.stacked(), seq[None, :, None, :])
    out = ys[0, :, 0, :]
    return out if direction == "forward" else out[::-1].copy()


def brnn_forward(fwd: LstmParams, bwd: LstmParams, xs):
    """Bidirectional layer: forward hidden states then backward, per frame."""
    if fwd.hidden != bwd.hidden:
        raise ShapeError("brnn_forward: forward and backward hidden sizes differ")
    return np.concatenate([rnn_forward(fwd, xs, "forward"),
                           rnn_forward(bwd, xs, "backward")], axis=1)


# ---------------------------------------------------------------------------
# plain tanh recurrence, kept as a reference building block


def elman_forward(Wx, Wh, b, xs, h0=None):
    """``h_t = tanh(Wx^T x_t + Wh^T h_{t-1} + b)`` over a (T, D) sequence."""
    xs = np.asarray(xs, dtype=np.float64)
    H = Wh.shape[0]
    h = np.zeros(H) if h0 is None else np.asarray(h0, dtype=np.float64)
    hs = np.empty((xs.shape[0], H))
    for t, x in enumerate(xs):
        h = np.tanh(x @ Wx + h @ Wh + b)
        hs[t] = h
    return hs


def elman_backward(Wx, Wh, b, xs, hs, dhs, h0=None):
    H = Wh.shape[0]
    h0 = np.zeros(H) if h0 is None else np.asarray(h0, dtype=np.float64)
    dWx, dWh, db = np.zeros_like(Wx), np.zeros_like(Wh), np.zeros_like(b)
    dxs = np.empty_like(xs, dtype=np.float64)
    dh = np.zeros(H)
    for t in range(len(xs) - 1, -1, -1):
        dz = (dhs[t] + dh) * (1.0 - hs[t] ** 2)
        h_prev = hs[t - 1] if t > 0 else h0
        dWx += np.outer(xs[t], dz)
        dWh += np.outer(h_prev, dz)
        db += dz
        dxs[t] = Wx @ dz
        dh = Wh @ dz
    return {"Wx": dWx, "Wh": dWh, "b": db, "xs": dxs, "h0": dh}
