"""Smoothing and the shape / movement trajectories fed to the models."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import HANDS, PALM_CENTER, DatasetError, SkeletonSequence

# 5-point quadratic/cubic Savitzky-Golay smoothing weights (sum to 35)
SG_WEIGHTS = np.array([-3.0, 12.0, 17.0, 12.0, -3.0]) / 35.0


class UnsupportedInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SmoothedSequence:
    id: str
    labels: tuple
    joints: dict  # hand -> (T, N, 3)
    n_joints: int

    @property
    def hands(self):
        return tuple(h for h in HANDS if h in self.joints)

    @property
    def T(self):
        return next(iter(self.joints.values())).shape[0]


def sg_filter(x, axis=0):
    """Apply the 5-tap smoother along ``axis`` with edge replication."""
    x = np.asarray(x, dtype=np.float64)
    x = np.moveaxis(x, axis, 0)
    padded = np.concatenate([x[:1], x[:1], x, x[-1:], x[-1:]], axis=0)
    T = x.shape[0]
    out = sum(w * padded[k:k + T] for k, w in enumerate(SG_WEIGHTS))
    return np.moveaxis(out, 0, axis)


def sg_smooth(seq: SkeletonSequence) -> SmoothedSequence:
    return SmoothedSequence(seq.id, seq.labels,
                            {h: sg_filter(a, axis=0) for h, a in seq.joints.items()},
                            seq.n_joints)


def extract_shape(seq: SmoothedSequence, palm=PALM_CENTER):
    """Joints relative to the right palm center, per frame."""
    if "right" not in seq.joints:
        raise UnsupportedInputError(f"{seq.id}: shape extraction needs the right hand")
    ref = seq.joints["right"][:, palm:palm + 1, :]
    return {h: a - ref for h, a in seq.joints.items()}


def extract_movement(seq: SmoothedSequence):
    """Frame-to-frame joint displacement; the first frame is zero."""
    out = {}
    for h, a in seq.joints.items():
        m = np.zeros_like(a)
        m[1:] = a[1:] - a[:-1]
        out[h] = m
    return out


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """The four (T, 3N) trajectories; left entries are None for one-hand input."""

    s_right: np.ndarray
    m_right: np.ndarray
    s_left: np.ndarray | None = None
    m_left: np.ndarray | None = None
    id: str = ""
    labels: tuple = ()

    @property
    def T(self):
        return self.s_right.shape[0]

    @property
    def width(self):
        return self.s_right.shape[1]

    @property
    def N(self):
        return self.width // 3

    @property
    def two_hands(self):
        return self.s_left is not None

    def stream(self, name):
        return getattr(self, name)

    def to_record(self):
        rec = {"id": self.id, "labels": list(self.labels), "T": self.T, "n_joints": self.N}
        for name in ("s_right", "m_right", "s_left", "m_left"):
            a = getattr(self, name)
            rec[name] = None if a is None else a.ravel().tolist()
        return rec

    @classmethod
    def from_record(cls, rec):
        T, w = rec["T"], 3 * rec["n_joints"]
        mats = {}
        for name in ("s_right", "m_right", "s_left", "m_left"):
            v = rec.get(name)
            mats[name] = None if v is None else np.asarray(v, dtype=np.float64).reshape(T, w)
        if mats["s_right"] is None or mats["m_right"] is None:
            raise DatasetError(f"{rec.get('id')}: trajectory record lacks right-hand matrices")
        return cls(id=rec["id"], labels=tuple(rec["labels"]), **mats)


def build_trajectories(seq: SkeletonSequence) -> TrajectorySet:
    sm = sg_smooth(seq)
    shape = extract_shape(sm)
    move = extract_movement(sm)
    T = sm.T

    def flat(a):
        # (T, N, 3) -> (T, 3N), x/y/z interleaved per joint
        return np.ascontiguousarray(a.reshape(T, -1))

    left = "left" in sm.joints
    return TrajectorySet(
        s_right=flat(shape["right"]), m_right=flat(move["right"]),
        s_left=flat(shape["left"]) if left else None,
        m_left=flat(move["left"]) if left else None,
        id=seq.id, labels=seq.labels)


def write_trajectories(trajs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for tr in trajs:
            fh.write(json.dumps(tr.to_record(), separators=(",", ":")) + "\n")


def read_trajectories(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(TrajectorySet.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: bad trajectory record ({exc})") from None
    return out
