"""Skeleton sequences, the JSONL dataset format and a synthetic generator."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

HANDS = ("right", "left")
DEFAULT_JOINTS = 23
PALM_CENTER = 0


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset content."""


class ConfigError(ValueError):
    pass


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Alphabet:
    """Word vocabulary. The CTC blank sits at index ``len(words)``."""

    words: tuple

    def __post_init__(self):
        words = tuple(self.words)
        if any(not isinstance(w, str) or not w for w in words):
            raise ConfigError("alphabet words must be non-empty strings")
        if len(set(words)) != len(words):
            raise ConfigError("alphabet words must be unique")
        object.__setattr__(self, "words", words)

    @property
    def blank_index(self):
        return len(self.words)

    @property
    def size(self):
        return len(self.words)

    @property
    def extended_size(self):
        return len(self.words) + 1

    def encode(self, labels):
        index = {w: k for k, w in enumerate(self.words)}
        try:
            return tuple(index[w] for w in labels)
        except KeyError as exc:
            raise DatasetError(f"label {exc.args[0]!r} not in alphabet") from None

    def decode(self, indices):
        return tuple(self.words[k] for k in indices)

    @classmethod
    def from_sequences(cls, seqs):
        seen = {}
        for s in seqs:
            for w in s.labels:
                seen.setdefault(w, None)
        return cls(tuple(sorted(seen)))

    def save(self, path):
        Path(path).write_text(json.dumps({"words": list(self.words)}) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls(tuple(json.loads(Path(path).read_text(encoding="utf-8"))["words"]))


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """A labeled sequence of per-hand joint coordinates.

    ``joints`` maps each present hand to a read-only (T, N, 3) array.
    """

    id: str
    subject_id: str
    labels: tuple
    joints: dict = field(repr=False)
    n_joints: int = DEFAULT_JOINTS

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.joints:
            raise DatasetError(f"{self.id}: at least one hand must be present")
        clean = {}
        T = None
        for hand in HANDS:
            if hand not in self.joints:
                continue
            a = _frozen(self.joints[hand])
            if a.ndim != 3 or a.shape[2] != 3:
                raise DatasetError(f"{self.id}: {hand} hand must have shape (T, N, 3)")
            if a.shape[1] != self.n_joints:
                raise DatasetError(
                    f"{self.id}: {hand} hand has {a.shape[1]} joints, expected {self.n_joints}")
            if T is None:
                T = a.shape[0]
            elif a.shape[0] != T:
                raise DatasetError(f"{self.id}: hands disagree on frame count")
            if not np.all(np.isfinite(a)):
                raise DatasetError(f"{self.id}: non-finite coordinate")
            clean[hand] = a
        extra = set(self.joints) - set(HANDS)
        if extra:
            raise DatasetError(f"{self.id}: unknown hand key(s) {sorted(extra)}")
        if T < 1:
            raise DatasetError(f"{self.id}: sequence has no frames")
        object.__setattr__(self, "joints", clean)

    @property
    def hands(self):
        return tuple(h for h in HANDS if h in self.joints)

    @property
    def T(self):
        return next(iter(self.joints.values())).shape[0]

    def __eq__(self, other):
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (self.id == other.id and self.subject_id == other.subject_id
                and self.labels == other.labels and self.n_joints == other.n_joints
                and self.hands == other.hands
                and all(np.array_equal(self.joints[h], other.joints[h]) for h in self.hands))

    __hash__ = None

    def to_record(self):
        frames = []
        for t in range(self.T):
            frames.append({h: self.joints[h][t].tolist() for h in self.hands})
        # file lists hands left-first, matching the schema's field order
        return {"id": self.id, "subject": self.subject_id, "labels": list(self.labels),
                "n_joints": self.n_joints, "hands": sorted(self.hands), "frames": frames}

    @classmethod
    def from_record(cls, rec):
        hands = rec["hands"]
        if not hands:
            raise DatasetError(f"{rec.get('id')}: no hands declared")
        frames = rec["frames"]
        joints = {}
        for h in hands:
            if h not in HANDS:
                raise DatasetError(f"{rec.get('id')}: unknown hand {h!r}")
            rows = []
            for t, fr in enumerate(frames):
                if h not in fr:
                    raise DatasetError(f"{rec['id']}: frame {t} is missing the {h} hand")
                rows.append(fr[h])
            joints[h] = rows
        for t, fr in enumerate(frames):
            if set(fr) - set(hands):
                raise DatasetError(f"{rec['id']}: frame {t} has an undeclared hand")
        n = rec["n_joints"]
        for h in hands:
            for t, fr in enumerate(joints[h]):
                if len(fr) != n:
                    raise DatasetError(
                        f"{rec['id']}: frame {t} {h} hand has {len(fr)} joints, expected {n}")
        return cls(id=rec["id"], subject_id=rec["subject"], labels=tuple(rec["labels"]),
                   joints={h: np.asarray(joints[h], dtype=np.float64).reshape(len(frames), n, 3)
                           for h in hands},
                   n_joints=n)


def read_dataset(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            try:
                out.append(SkeletonSequence.from_record(rec))
            except (KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc!r})") from None
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return out


def write_dataset(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            # repr-based float formatting round-trips float64 exactly
            fh.write(json.dumps(r.to_record(), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# sentence templates

TEMPLATE_SLOTS = (
    ("I", "you", "mother", "who"),
    ("dontwant", "like", "want", "need"),
    ("big", "small", "cold", "more"),
    ("time", "food", "drink", "clothes"),
)


def template_sentences(slots):
    """All slot combinations, first slot varying slowest."""
    slots = [tuple(s) for s in slots]
    for s in slots:
        if not s:
            raise ConfigError("empty template slot")
        if len(set(s)) != len(s):
            raise ConfigError(f"template slot has repeated words: {s}")
    return [tuple(c) for c in itertools.product(*slots)]


def enumerate_template_sentences(word_slots, alphabet=None):
    """The 4 x 4 x 4 x 4 subject/predicate/attributive/object template.

    Returns word-index tuples when ``alphabet`` is given, word strings otherwise.
    """
    if len(word_slots) != 4 or any(len(s) != 4 for s in word_slots):
        raise ConfigError("the sentence template needs 4 slots of exactly 4 words")
    sents = template_sentences(word_slots)
    return [alphabet.encode(s) for s in sents] if alphabet is not None else sents


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic gesture generator.

    Each word combines a static hand-shape template with a palm path. Shapes
    and paths are drawn from pools smaller than the vocabulary, so neither
    cue alone identifies a word.
    """

    classes: int = 10
    subjects: int = 1
    samples: int = 20  # per class and subject
    n_joints: int = DEFAULT_JOINTS
    t_min: int = 16
    t_max: int = 24
    noise: float = 2.0  # mm, per-coordinate jitter
    hands: str = "two"  # "one" (right only) or "two"
    n_shapes: int = 0  # 0 -> ceil(classes / 2)
    n_paths: int = 2
    shape_scale: float = 40.0
    path_scale: float = 60.0
    subject_offset: float = 30.0
    control_points: int = 5
    words: tuple = ()

    def __post_init__(self):
        if self.classes < 1:
            raise ConfigError("generator needs at least one class")
        if self.samples < 1 or self.subjects < 1:
            raise ConfigError("generator needs at least one sample and one subject")
        if not 1 <= self.t_min <= self.t_max:
            raise ConfigError("need 1 <= t_min <= t_max")
        if self.hands not in ("one", "two"):
            raise ConfigError("hands must be 'one' or 'two'")
        if self.words and len(self.words) != self.classes:
            raise ConfigError("explicit word list must have one entry per class")
        shapes = self.n_shapes or -(-self.classes // 2)
        if shapes * self.n_paths < self.classes:
            raise ConfigError("n_shapes * n_paths must cover every class")

    @property
    def word_names(self):
        if self.words:
            return tuple(self.words)
        return tuple(f"w{k:02d}" for k in range(self.classes))

    @property
    def shape_count(self):
        return self.n_shapes or -(-self.classes // 2)


class _Prototypes:
    def __init__(self, cfg: GeneratorConfig, rng):
        self.cfg = cfg
        n = cfg.n_joints
        hands = ("right", "left") if cfg.hands == "two" else ("right",)
        self.hands = hands
        # joint layouts relative to the palm center (joint 0 stays at the origin)
        self.shapes = []
        for _ in range(cfg.shape_count):
            per_hand = {}
            for h in hands:
                s = rng.normal(scale=cfg.shape_scale, size=(n, 3))
                s[PALM_CENTER] = 0.0
                per_hand[h] = s
            self.shapes.append(per_hand)
        # palm paths: spline through random control points over unit time
        K = cfg.control_points
        knots = np.linspace(0.0, 1.0, K)
        self.paths = []
        for _ in range(cfg.n_paths):
            ctrl = rng.normal(scale=cfg.path_scale, size=(K, 3))
            ctrl -= ctrl[0]
            self.paths.append(CubicSpline(knots, ctrl, axis=0, bc_type="natural"))
        self.left_offset = np.array([-150.0, 0.0, 0.0])
        order = rng.permutation(cfg.shape_count * cfg.n_paths)[:cfg.classes]
        self.combo = [(int(k) % cfg.shape_count, int(k) // cfg.shape_count) for k in order]

    def render(self, cls, u):
        """Joint positions of word ``cls`` at normalized times ``u`` (array in [0, 1])."""
        si, pi = self.combo[cls]
        palm = self.paths[pi](u)  # (T, 3)
        out = {}
        for h in self.hands:
            base = palm + (self.left_offset if h == "left" else 0.0)
            out[h] = base[:, None, :] + self.shapes[si][h][None, :, :]
        return out


def _sample_length(rng, cfg):
    return int(rng.integers(cfg.t_min, cfg.t_max + 1))


def gen_synthetic(cfg: GeneratorConfig, seed: int):
    """Word-level samples: ``classes * subjects * samples`` sequences."""
    rng = np.random.default_rng(seed)
    protos = _Prototypes(cfg, rng)
    offsets = rng.normal(scale=cfg.subject_offset, size=(cfg.subjects, 3))
    names = cfg.word_names
    out = []
    for s in range(cfg.subjects):
        for c in range(cfg.classes):
            for k in range(cfg.samples):
                T = _sample_length(rng, cfg)
                joints = protos.render(c, np.linspace(0.0, 1.0, T))
                joints = {h: a + offsets[s] + rng.normal(scale=cfg.noise, size=a.shape)
                          if cfg.noise > 0 else a + offsets[s]
                          for h, a in joints.items()}
                out.append(SkeletonSequence(
                    id=f"s{s:02d}-{names[c]}-{k:03d}", subject_id=f"s{s:02d}",
                    labels=(names[c],), joints=joints, n_joints=cfg.n_joints))
    return out


def gen_sentences(cfg: GeneratorConfig, sentences, samples_per_sentence, seed,
                  transition=(3, 8)):
    """Continuous sentences built from the same word prototypes as :func:`gen_synthetic`.

    ``sentences`` holds word-string tuples. Consecutive words are joined by
    ``transition`` (inclusive range) frames of linear interpolation.
    """
    if samples_per_sentence < 1 or not sentences:
        raise ConfigError("need at least one sentence and one sample per sentence")
    rng = np.random.default_rng(seed)
    protos = _Prototypes(cfg, rng)
    offsets = rng.normal(scale=cfg.subject_offset, size=(cfg.subjects, 3))
    index = {w: k for k, w in enumerate(cfg.word_names)}
    out = []
    for s in range(cfg.subjects):
        for n, sent in enumerate(sentences):
            for k in range(samples_per_sentence):
                pieces = {h: [] for h in protos.hands}
                prev_end = None
                for w in sent:
                    T = _sample_length(rng, cfg)
                    word = protos.render(index[w], np.linspace(0.0, 1.0, T))
                    if prev_end is not None:
                        gap = int(rng.integers(transition[0], transition[1] + 1))
                        lam = np.arange(1, gap + 1)[:, None, None] / (gap + 1)
                        for h in protos.hands:
                            start = word[h][0]
                            pieces[h].append(prev_end[h][None] * (1 - lam) + start[None] * lam)
                    for h in protos.hands:
                        pieces[h].append(word[h])
                    prev_end = {h: word[h][-1] for h in protos.hands}
                joints = {}
                for h in protos.hands:
                    a = np.concatenate(pieces[h], axis=0) + offsets[s]
                    if cfg.noise > 0:
                        a = a + rng.normal(scale=cfg.noise, size=a.shape)
                    joints[h] = a
                out.append(SkeletonSequence(
                    id=f"s{s:02d}-n{n:03d}-{k:03d}", subject_id=f"s{s:02d}",
                    labels=tuple(sent), joints=joints, n_joints=cfg.n_joints))
    return out
