"""Hierarchical recurrent models over shape/movement trajectories.

Every model here is a stack of recurrent layers. Layer 1 reads input
streams (trajectories); layer ``k + 1`` reads the outputs of layer ``k``,
each of its RNNs taking an equal, contiguous chunk of the previous layer's
RNN outputs concatenated along the feature axis. A time-distributed fully
connected layer maps the last layer to per-frame logits.

With the stream order (S_right, M_right, S_left, M_left) and RNN counts
4 -> 2 -> 1 this gives the hand-shape/movement fusion, then the two-hand
fusion, of the HB-RNN. The ablations only change the streams, the RNN
counts and the directionality.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ctc
from .nn import init_lstm, log_softmax, lstm_scan, lstm_scan_backward, softmax, time_reverse

WORD_KINDS = ("hbrnn", "hbrnn_m", "hbrnn_s", "sbrnn", "hrnn")
KINDS = WORD_KINDS + ("hbrnn_ctc",)

_STREAMS = {
    "full": {"two": ("s_right", "m_right", "s_left", "m_left"), "one": ("s_right", "m_right")},
    "m": {"two": ("m_right", "m_left"), "one": ("m_right",)},
    "s": {"two": ("s_right", "s_left"), "one": ("s_right",)},
}
_KIND_STREAMS = {"hbrnn": "full", "hbrnn_ctc": "full", "sbrnn": "full", "hrnn": "full",
                 "hbrnn_m": "m", "hbrnn_s": "s"}


class ModelConfigError(ValueError):
    pass


class HandMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """``directions x rnns x hidden``, the notation of the model table."""

    directions: int
    rnns: int
    hidden: int

    def __post_init__(self):
        if self.directions not in (1, 2):
            raise ModelConfigError("directions must be 1 or 2")
        if self.rnns < 1 or self.hidden < 1:
            raise ModelConfigError("rnn count and hidden units must be positive")

    def __str__(self):
        return f"{self.directions}x{self.rnns}x{self.hidden}"

    @classmethod
    def parse(cls, s):
        d, r, h = (int(v) for v in str(s).lower().replace("×", "x").split("x"))
        return cls(d, r, h)


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    hands: str
    layers: tuple
    classes: tuple  # word classes, or the CTC vocabulary without blank
    n_joints: int = 23

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(
            l if isinstance(l, LayerSpec) else LayerSpec(*l) if not isinstance(l, str)
            else LayerSpec.parse(l) for l in self.layers))
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.kind not in KINDS:
            raise ModelConfigError(f"unknown model kind {self.kind!r}")
        if self.hands not in ("one", "two"):
            raise ModelConfigError("hands must be 'one' or 'two'")
        if self.n_joints < 1:
            raise ModelConfigError("n_joints must be positive")
        if len(set(self.classes)) != len(self.classes):
            raise ModelConfigError("class names must be unique")
        if self.is_ctc:
            if len(self.classes) < 1:
                raise ModelConfigError("CTC model needs a non-empty vocabulary")
        elif len(self.classes) < 2:
            raise ModelConfigError("word model needs at least 2 classes")
        self._check_topology()

    def _check_topology(self):
        if not self.layers:
            raise ModelConfigError("at least one recurrent layer is required")
        n = len(self.streams)
        counts = [l.rnns for l in self.layers]
        dirs = {l.directions for l in self.layers}
        if self.kind == "sbrnn":
            if counts != [1]:
                raise ModelConfigError("sbrnn has exactly one layer with one RNN")
        else:
            expected = []
            k = n
            while True:
                expected.append(k)
                if k == 1:
                    break
                k //= 2
            if counts != expected:
                raise ModelConfigError(
                    f"{self.kind} with {self.hands} hand(s) needs RNN counts {expected}, got {counts}")
        if self.kind == "hrnn" and dirs != {1}:
            raise ModelConfigError("hrnn layers must be unidirectional")
        if self.kind != "hrnn" and dirs != {2}:
            raise ModelConfigError(f"{self.kind} layers must be bidirectional")

    @property
    def is_ctc(self):
        return self.kind == "hbrnn_ctc"

    @property
    def streams(self):
        return _STREAMS[_KIND_STREAMS[self.kind]][self.hands]

    @property
    def input_width(self):
        return 3 * self.n_joints

    @property
    def n_outputs(self):
        return len(self.classes) + 1 if self.is_ctc else len(self.classes)

    def layer_inputs(self):
        """Input width of each RNN per layer."""
        widths = []
        prev_w, prev_n = self.input_width, len(self.streams)
        for l in self.layers:
            widths.append(prev_w * (prev_n // l.rnns))
            prev_w, prev_n = l.directions * l.hidden, l.rnns
        return widths

    @property
    def readout_width(self):
        last = self.layers[-1]
        return last.directions * last.hidden

    def to_dict(self):
        d = asdict(self)
        d["layers"] = [str(l) for l in self.layers]
        d["classes"] = list(self.classes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], hands=d["hands"], layers=tuple(d["layers"]),
                   classes=tuple(d["classes"]), n_joints=int(d.get("n_joints", 23)))


# layer shapes from the model table, plus the enlarged sentence model
PRESETS = {
    "hbrnn-m-1h": ("hbrnn_m", "one", ("2x1x128",)),
    "hbrnn-s-1h": ("hbrnn_s", "one", ("2x1x128",)),
    "sbrnn-1h": ("sbrnn", "one", ("2x1x128",)),
    "hrnn-1h": ("hrnn", "one", ("1x2x64", "1x1x128")),
    "hbrnn-1h": ("hbrnn", "one", ("2x2x32", "2x1x64")),
    "hbrnn-m-2h": ("hbrnn_m", "two", ("2x2x64", "2x1x128")),
    "hbrnn-s-2h": ("hbrnn_s", "two", ("2x2x64", "2x1x128")),
    "sbrnn-2h": ("sbrnn", "two", ("2x1x256",)),
    "hrnn-2h": ("hrnn", "two", ("1x4x64", "1x2x64", "1x1x128")),
    "hbrnn-2h": ("hbrnn", "two", ("2x4x32", "2x2x32", "2x1x64")),
    "hbrnn-ctc": ("hbrnn_ctc", "two", ("2x4x32", "2x2x64", "2x1x128")),
}


def preset(name, classes, n_joints=23):
    try:
        kind, hands, layers = PRESETS[name]
    except KeyError:
        raise ModelConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return ModelConfig(kind, hands, layers, tuple(classes), n_joints)


def expected_param_count(cfg: ModelConfig):
    """Closed-form parameter count: 4(DH + H^2 + H) per LSTM plus the readout."""
    total = 0
    for l, D in zip(cfg.layers, cfg.layer_inputs()):
        H = l.hidden
        total += l.rnns * l.directions * 4 * (D * H + H * H + H)
    return total + cfg.readout_width * cfg.n_outputs + cfg.n_outputs


# ---------------------------------------------------------------------------


@dataclass
class ClassPosterior:
    probs: np.ndarray
    logits: np.ndarray  # frame-summed logits

    @property
    def prediction(self):
        return int(np.argmax(self.probs))


def accumulate_logits(frame_logits, lengths=None):
    """Sum per-frame logits over valid frames. ``frame_logits`` is (T, C) or (T, B, C)."""
    fl = np.asarray(frame_logits, dtype=np.float64)
    if fl.ndim == 2:
        return fl.sum(axis=0)
    if lengths is None:
        return fl.sum(axis=0)
    mask = np.arange(fl.shape[0])[:, None] < np.asarray(lengths)[None, :]
    return np.einsum("tbc,tb->bc", fl, mask.astype(np.float64))


@dataclass
class _Batch:
    streams: np.ndarray  # (n_streams, T, B, 3N)
    lengths: np.ndarray
    stream_active: np.ndarray  # (n_streams, B)

    @property
    def T(self):
        return self.streams.shape[1]

    @property
    def B(self):
        return self.streams.shape[2]

    @property
    def len_mask(self):
        return (np.arange(self.T)[:, None] < self.lengths[None, :]).astype(np.float64)


@dataclass
class ForwardCache:
    batch: _Batch
    layer_caches: list = field(default_factory=list)
    top: np.ndarray | None = None  # (T, B, F) input of the fc layer


class Model:
    """Parameters plus the forward/backward passes of one configuration."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params

    # -- construction -----------------------------------------------------
    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        params = {}
        for k, (l, D) in enumerate(zip(config.layers, config.layer_inputs()), 1):
            Wx, Wh, b = init_lstm(rng, D, l.hidden, units=l.rnns * l.directions)
            params[f"bl{k}.Wx"], params[f"bl{k}.Wh"], params[f"bl{k}.b"] = Wx, Wh, b
        F, C = config.readout_width, config.n_outputs
        lim = np.sqrt(6.0 / (F + C))
        params["fc.W"] = rng.uniform(-lim, lim, size=(F, C))
        params["fc.b"] = np.zeros(C)
        return cls(config, params)

    def copy(self):
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})

    def param_count(self):
        return int(sum(v.size for v in self.params.values()))

    def layer_shapes(self):
        """Per recurrent layer: (LayerSpec, input width of each RNN)."""
        out = []
        for k, l in enumerate(self.config.layers, 1):
            U, D, G4 = self.params[f"bl{k}.Wx"].shape
            out.append((LayerSpec(l.directions, U // l.directions, G4 // 4), D))
        return out

    # -- batching -----------------------------------------------------------
    def _make_batch(self, trajs):
        cfg = self.config
        lengths = np.array([tr.T for tr in trajs])
        T, B, W = int(lengths.max()), len(trajs), cfg.input_width
        streams = np.zeros((len(cfg.streams), T, B, W))
        active = np.zeros((len(cfg.streams), B))
        for b, tr in enumerate(trajs):
            if tr.width != W:
                raise HandMismatchError(
                    f"{tr.id}: trajectory width {tr.width} does not match model input {W}")
            for s, name in enumerate(cfg.streams):
                a = tr.stream(name)
                if a is None:
                    if name.endswith("_right"):
                        raise HandMismatchError(f"{tr.id}: right hand is required")
                    continue  # absent left hand: that half of the model stays idle
                streams[s, :tr.T, b] = a
                active[s, b] = 1.0
        return _Batch(streams, lengths, active)

    @staticmethod
    def _chunk(out, n_groups):
        # (G_prev, T, B, W) -> (G, T, B, k*W), contiguous groups concatenated
        Gp, T, B, W = out.shape
        k = Gp // n_groups
        return out.reshape(n_groups, k, T, B, W).transpose(0, 2, 3, 1, 4).reshape(n_groups, T, B, k * W)

    @staticmethod
    def _unchunk(dx, n_prev):
        G, T, B, KW = dx.shape
        k = n_prev // G
        return dx.reshape(G, T, B, k, KW // k).transpose(0, 3, 1, 2, 4).reshape(n_prev, T, B, KW // k)

    # -- forward / backward -------------------------------------------------
    def forward_frames(self, trajs):
        """Per-frame fc logits (T, B, C_out) for a list of trajectories."""
        batch = self._make_batch(trajs)
        cache = ForwardCache(batch)
        x, active = batch.streams, batch.stream_active
        len_mask = batch.len_mask
        for k, l in enumerate(self.config.layers, 1):
            x = self._chunk(x, l.rnns)
            active = active.reshape(l.rnns, -1, batch.B).max(axis=1)
            gmask = active[:, None, :] * len_mask[None]
            if l.directions == 2:
                xs = np.stack([x, time_reverse(x, batch.lengths)], axis=1).reshape(
                    2 * l.rnns, *x.shape[1:])
                mask = np.repeat(gmask, 2, axis=0)
            else:
                xs, mask = x, gmask
            ys, _, sc = lstm_scan(self.params[f"bl{k}.Wx"], self.params[f"bl{k}.Wh"],
                                  self.params[f"bl{k}.b"], xs, mask)
            cache.layer_caches.append(sc)
            if l.directions == 2:
                ys = ys.reshape(l.rnns, 2, *ys.shape[1:])
                x = np.concatenate([ys[:, 0], time_reverse(ys[:, 1], batch.lengths)], axis=-1)
            else:
                x = ys
        cache.top = x[0]
        frame_logits = cache.top @ self.params["fc.W"] + self.params["fc.b"]
        return frame_logits, cache

    def backward(self, cache: ForwardCache | None, d_frame_logits):
        """Gradients of every parameter given d loss / d per-frame logits."""
        if cache is None or cache.top is None:
            raise RuntimeError("backward called without a cached forward pass")
        grads = {}
        T, B, C = d_frame_logits.shape
        F = cache.top.shape[-1]
        grads["fc.W"] = cache.top.reshape(T * B, F).T @ d_frame_logits.reshape(T * B, C)
        grads["fc.b"] = d_frame_logits.sum(axis=(0, 1))
        dx = (d_frame_logits @ self.params["fc.W"].T)[None]
        lengths = cache.batch.lengths
        layers = self.config.layers
        for k in range(len(layers), 0, -1):
            l = layers[k - 1]
            sc = cache.layer_caches[k - 1]
            if l.directions == 2:
                H = l.hidden
                dys = np.stack([dx[..., :H], time_reverse(dx[..., H:], lengths)], axis=1)
                dys = dys.reshape(2 * l.rnns, *dys.shape[2:])
            else:
                dys = dx
            g = lstm_scan_backward(sc, dys)
            grads[f"bl{k}.Wx"], grads[f"bl{k}.Wh"], grads[f"bl{k}.b"] = g["Wx"], g["Wh"], g["b"]
            if k == 1:
                break
            dxs = g["xs"]
            if l.directions == 2:
                dxs = dxs.reshape(l.rnns, 2, *dxs.shape[1:])
                dxs = dxs[:, 0] + time_reverse(dxs[:, 1], lengths)
            dx = self._unchunk(dxs, layers[k - 2].rnns)
        return grads

    # -- losses ---------------------------------------------------------------
    def word_loss(self, trajs, targets):
        """Summed cross-entropy of the frame-accumulated posterior, and its gradients."""
        frame_logits, cache = self.forward_frames(trajs)
        lengths = cache.batch.lengths
        O = accumulate_logits(frame_logits, lengths)
        logp = log_softmax(O, axis=1)
        idx = np.arange(len(targets))
        loss = -float(logp[idx, targets].sum())
        dO = np.exp(logp)
        dO[idx, targets] -= 1.0
        d_frames = cache.batch.len_mask[:, :, None] * dO[None]
        return loss, self.backward(cache, d_frames)

    def ctc_loss(self, trajs, targets):
        """Summed CTC loss over the batch and its gradients."""
        frame_logits, cache = self.forward_frames(trajs)
        lengths = cache.batch.lengths
        logp = log_softmax(frame_logits, axis=-1)
        d_frames = np.zeros_like(frame_logits)
        total = 0.0
        blank = len(self.config.classes)
        for b, tgt in enumerate(targets):
            L = lengths[b]
            res = ctc.ctc_loss(logp[:L, b], tgt, blank)
            total += res.loss
            d_frames[:L, b] = res.grad
        return total, self.backward(cache, d_frames)

    def loss(self, trajs, targets):
        return self.ctc_loss(trajs, targets) if self.config.is_ctc else self.word_loss(trajs, targets)


# ---------------------------------------------------------------------------
# public forward entry points


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    return Model.build(config, seed)


def param_count(model: Model) -> int:
    return model.param_count()


def word_forward(model: Model, traj) -> ClassPosterior:
    if model.config.is_ctc:
        raise ModelConfigError("word_forward needs a word-level model")
    frame_logits, _ = model.forward_frames([traj])
    O = frame_logits[:, 0].sum(axis=0)
    return ClassPosterior(softmax(O), O)


comparative_forward = word_forward


def word_forward_batch(model: Model, trajs, chunk=64):
    """Posteriors for many trajectories, batched."""
    out = []
    for i in range(0, len(trajs), chunk):
        part = trajs[i:i + chunk]
        fl, cache = model.forward_frames(part)
        O = accumulate_logits(fl, cache.batch.lengths)
        out.extend(ClassPosterior(softmax(o), o) for o in O)
    return out


def sentence_forward(model: Model, traj):
    """(T, |V|+1) per-frame log-probabilities; the blank is the last column."""
    if not model.config.is_ctc:
        raise ModelConfigError("sentence_forward needs an hbrnn_ctc model")
    frame_logits, _ = model.forward_frames([traj])
    return log_softmax(frame_logits[:, 0], axis=-1)


def sentence_forward_batch(model: Model, trajs, chunk=64):
    out = []
    for i in range(0, len(trajs), chunk):
        part = trajs[i:i + chunk]
        fl, cache = model.forward_frames(part)
        lp = log_softmax(fl, axis=-1)
        out.extend(lp[:L, b] for b, L in enumerate(cache.batch.lengths))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Model, path):
    doc = {"config": model.config.to_dict(),
           "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                      for k, v in sorted(model.params.items())}}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Model:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = ModelConfig.from_dict(doc["config"])
    params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
              for k, v in doc["params"].items()}
    ref = Model.build(cfg, 0)
    for k, v in ref.params.items():
        if k not in params or params[k].shape != v.shape:
            raise ModelConfigError(f"checkpoint parameter {k} missing or mis-shaped")
    return Model(cfg, params)
