"""Optimization loop, cross-validation plans and experiment orchestration."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import ctc
from .data import Alphabet
from .metrics import confusion, corpus_wer, topk_accuracy
from .models import Model, ModelConfig, build_model, sentence_forward_batch, word_forward_batch
from .preprocess import build_trajectories

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 8
    clip_norm: float = 5.0
    seed: int = 0
    patience: int = 10
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1 or self.clip_norm <= 0:
            raise ValueError("invalid training configuration")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    @classmethod
    def for_model(cls, config: ModelConfig, **kw):
        """Defaults: 50 epochs for word models, 150 for the sentence model."""
        kw.setdefault("epochs", 150 if config.is_ctc else 50)
        return cls(**kw)


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            params[k] -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def clip_global_norm(grads, max_norm):
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _targets(config: ModelConfig, seqs_or_labels):
    alpha = Alphabet(config.classes)
    labels = [getattr(s, "labels", s) for s in seqs_or_labels]
    enc = [alpha.encode(l) for l in labels]
    if config.is_ctc:
        return enc
    if any(len(e) != 1 for e in enc):
        raise TrainingError("word models need exactly one label per sample")
    return np.array([e[0] for e in enc], dtype=np.int64)


def _as_trajectories(items):
    return [it if hasattr(it, "s_right") else build_trajectories(it) for it in items]


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)  # per-epoch dicts
    best_epoch: int = -1


def _mean_loss(model, trajs, targets, batch):
    total = 0.0
    for i in range(0, len(trajs), batch):
        loss, _ = model.loss(trajs[i:i + batch], targets[i:i + batch])
        total += loss
    return total / max(len(trajs), 1)


def train(model: Model, dataset, config: TrainConfig, validation=None) -> TrainResult:
    """Minibatch Adam on summed per-sequence losses.

    ``dataset`` holds SkeletonSequence or TrajectorySet items. When
    ``validation`` is None and ``config.val_fraction`` > 0, a seeded split of
    the data is held out for early stopping and the best-validation weights
    are restored at the end.
    """
    if not dataset:
        raise TrainingError("empty training set")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    trajs = _as_trajectories(dataset)
    targets = _targets(model.config, trajs)
    if model.config.is_ctc:
        for tr, tg in zip(trajs, targets):
            ctc.check_feasible(tr.T, tg)

    if validation is None and config.val_fraction > 0 and len(trajs) >= 10:
        order = rng.permutation(len(trajs))
        n_val = max(1, int(round(config.val_fraction * len(trajs))))
        val_idx, tr_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
        val_trajs = [trajs[i] for i in val_idx]
        val_targets = _subset(targets, val_idx)
        trajs = [trajs[i] for i in tr_idx]
        targets = _subset(targets, tr_idx)
    elif validation is not None:
        val_trajs = _as_trajectories(validation)
        val_targets = _targets(model.config, val_trajs)
    else:
        val_trajs, val_targets = [], None

    opt = Adam(model.params, config)
    history = []
    best = (np.inf, -1, None)
    since_best = 0
    n = len(trajs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, max_norm = 0.0, 0.0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, grads = model.loss([trajs[j] for j in idx], _subset(targets, idx))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} (batch starting {i})")
            max_norm = max(max_norm, clip_global_norm(grads, config.clip_norm))
            opt.step(model.params, grads)
            total += loss
        rec = {"epoch": epoch, "train_loss": total / n, "max_grad_norm": max_norm}
        if val_trajs:
            v = _mean_loss(model, val_trajs, val_targets, 32)
            rec["val_loss"] = v
            if v < best[0]:
                best = (v, epoch, {k: p.copy() for k, p in model.params.items()})
                since_best = 0
            else:
                since_best += 1
        history.append(rec)
        log.info("epoch %d %s", epoch, {k: round(v, 5) for k, v in rec.items() if k != "epoch"})
        if val_trajs and since_best >= config.patience:
            break
    if best[2] is not None:
        model.params = best[2]
    return TrainResult(model, history, best[1])


def _subset(targets, idx):
    if isinstance(targets, np.ndarray):
        return targets[idx]
    return [targets[i] for i in idx]


# ---------------------------------------------------------------------------
# fold plans


@dataclass(frozen=True)
class FoldPlan:
    protocol: str
    folds: tuple  # of (train_ids, test_ids) tuples

    def __len__(self):
        return len(self.folds)


def split_loso(dataset) -> FoldPlan:
    subjects = sorted({s.subject_id for s in dataset})
    if len(subjects) < 2:
        raise ProtocolError("leave-one-subject-out needs at least two subjects")
    folds = []
    for subj in subjects:
        test = tuple(s.id for s in dataset if s.subject_id == subj)
        train = tuple(s.id for s in dataset if s.subject_id != subj)
        folds.append((train, test))
    return FoldPlan("loso", tuple(folds))


def split_unseen_sentences(dataset, folds=10, seed=0) -> FoldPlan:
    """Folds over distinct label sequences; every sample of a sentence shares its fold."""
    sentences = sorted({tuple(s.labels) for s in dataset})
    if len(sentences) < folds:
        raise ProtocolError(f"{len(sentences)} distinct sentences cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sentences))
    fold_of = {sentences[k]: pos % folds for pos, k in enumerate(order)}
    out = []
    for f in range(folds):
        test = tuple(s.id for s in dataset if fold_of[tuple(s.labels)] == f)
        train = tuple(s.id for s in dataset if fold_of[tuple(s.labels)] != f)
        out.append((train, test))
    return FoldPlan("unseen", tuple(out))


def single_split(dataset) -> FoldPlan:
    ids = tuple(s.id for s in dataset)
    return FoldPlan("none", ((ids, ()),))


# ---------------------------------------------------------------------------
# evaluation and experiments


def evaluate(model: Model, items):
    """Metrics of ``model`` on SkeletonSequence or TrajectorySet items."""
    trajs = _as_trajectories(items)
    cfg = model.config
    targets = _targets(cfg, trajs)
    if cfg.is_ctc:
        posts = sentence_forward_batch(model, trajs)
        blank = len(cfg.classes)
        preds = [ctc.greedy_decode(p, blank) for p in posts]
        rep = corpus_wer(preds, targets)
        return {"n": len(trajs), "wer": rep.wer,
                "edits": {"sub": rep.substitutions, "ins": rep.insertions, "del": rep.deletions},
                "reference_words": rep.reference_length,
                "sentence_accuracy": float(np.mean([tuple(p) == tuple(t)
                                                    for p, t in zip(preds, targets)]))}
    posts = word_forward_batch(model, trajs)
    C = len(cfg.classes)
    out = {"n": len(trajs)}
    for k in (1, 2, 3):
        out[f"top{k}"] = topk_accuracy(posts, list(targets), k) if k <= C else None
    cm = confusion([p.prediction for p in posts], targets, C, cfg.classes)
    out["confusion"] = cm.counts.tolist()
    return out


def _run_fold(k, train_ids, test_ids, by_id, model_config, train_config):
    train_items = [by_id[i] for i in train_ids]
    test_items = [by_id[i] for i in test_ids]
    model = build_model(model_config, train_config.seed + k)
    res = train(model, train_items, replace(train_config, seed=train_config.seed + k))
    metrics = evaluate(res.model, test_items) if test_items else {}
    metrics.update(fold=k, n_train=len(train_items), epochs_run=len(res.history),
                   best_epoch=res.best_epoch)
    return res.model, metrics, res.history


def run_experiment(dataset, model_config: ModelConfig, train_config: TrainConfig,
                   protocol="loso", folds=10, jobs=1, return_models=False):
    """Train and evaluate one model per fold; aggregate the headline metric.

    The headline metric is Top-1 accuracy for word models and pooled
    greedy-decoding WER for the sentence model.
    """
    if protocol == "loso":
        plan = split_loso(dataset)
    elif protocol in ("unseen", "unseen10"):
        plan = split_unseen_sentences(dataset, folds, train_config.seed)
    elif protocol == "none":
        plan = single_split(dataset)
    elif isinstance(protocol, FoldPlan):
        plan = protocol
    else:
        raise ProtocolError(f"unknown protocol {protocol!r}")
    trajs = {s.id: build_trajectories(s) if not hasattr(s, "s_right") else s for s in dataset}
    args = [(k, tr, te, trajs, model_config, train_config) for k, (tr, te) in enumerate(plan.folds)]
    if jobs > 1 and len(args) > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(delayed(_run_fold)(*a) for a in args)
    else:
        results = [_run_fold(*a) for a in args]
    metric = "wer" if model_config.is_ctc else "top1"
    per_fold = [r[1] for r in results]
    values = [m[metric] for m in per_fold if metric in m]
    report = {"protocol": plan.protocol, "model": model_config.to_dict(),
              "metric": metric, "folds": per_fold,
              "mean": float(np.mean(values)) if values else None,
              "std": float(np.std(values)) if values else None}
    if return_models:
        return report, [r[0] for r in results], [r[2] for r in results]
    return report
