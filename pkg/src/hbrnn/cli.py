"""Command-line entry point: ``hbrnn <command> [options]``.

Results go to stdout (JSON where structured), diagnostics to stderr.
Exit status: 0 success, 1 validation or usage error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import ctc
from .data import (TEMPLATE_SLOTS, ConfigError, DatasetError, GeneratorConfig, gen_sentences,
                   gen_synthetic, read_dataset, template_sentences, write_dataset, Alphabet)
from .gradcheck import run_suite
from .models import (PRESETS, ModelConfig, ModelConfigError, HandMismatchError, load_checkpoint,
                     preset, save_checkpoint, sentence_forward)
from .preprocess import (UnsupportedInputError, build_trajectories, read_trajectories,
                         write_trajectories)
from .training import ProtocolError, TrainConfig, TrainingError, evaluate, run_experiment

log = logging.getLogger("hbrnn")

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _default_seed():
    return int(os.environ.get("HBRNN_SEED", "0"))


def _parse_slots(spec):
    if spec == "default":
        return [list(s) for s in TEMPLATE_SLOTS]
    return [s.split(",") for s in spec.split("/")]


def cmd_gen(args):
    seed = args.seed if args.seed is not None else _default_seed()
    if args.slots:
        slots = _parse_slots(args.slots)
        words = tuple(dict.fromkeys(w for s in slots for w in s))
        cfg = GeneratorConfig(classes=len(words), subjects=args.subjects, samples=args.samples,
                              n_joints=args.joints, t_min=args.t_min, t_max=args.t_max,
                              noise=args.noise, hands=args.hands, words=words)
        records = gen_sentences(cfg, template_sentences(slots), args.samples, seed)
    else:
        cfg = GeneratorConfig(classes=args.classes, subjects=args.subjects, samples=args.samples,
                              n_joints=args.joints, t_min=args.t_min, t_max=args.t_max,
                              noise=args.noise, hands=args.hands)
        records = gen_synthetic(cfg, seed)
    write_dataset(records, args.out)
    if args.alphabet_out:
        Alphabet(cfg.word_names).save(args.alphabet_out)
    log.info("wrote %d records to %s", len(records), args.out)
    return 0


def cmd_preprocess(args):
    seqs = read_dataset(args.data)
    write_trajectories([build_trajectories(s) for s in seqs], args.out)
    log.info("wrote %d trajectory records to %s", len(seqs), args.out)
    return 0


def _load_items(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.strip() and "s_right" in json.loads(first):
        return read_trajectories(path)
    return read_dataset(path)


def _model_config(spec, seqs):
    if spec in PRESETS:
        classes = Alphabet.from_sequences(seqs).words
        return preset(spec, classes, seqs[0].n_joints)
    path = Path(spec)
    if not path.exists():
        raise ModelConfigError(f"{spec!r} is neither a preset ({', '.join(sorted(PRESETS))}) nor a file")
    doc = json.loads(path.read_text(encoding="utf-8"))
    doc.setdefault("classes", list(Alphabet.from_sequences(seqs).words))
    doc.setdefault("n_joints", seqs[0].n_joints)
    return ModelConfig.from_dict(doc)


def cmd_train(args):
    seed = args.seed if args.seed is not None else _default_seed()
    seqs = read_dataset(args.data)
    if not seqs:
        raise DatasetError("training data is empty")
    mcfg = _model_config(args.model, seqs)
    kw = {"seed": seed}
    for name in ("epochs", "batch_size", "lr", "patience"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = v
    tcfg = TrainConfig.for_model(mcfg, **kw)
    report, models, histories = run_experiment(seqs, mcfg, tcfg, args.protocol, folds=args.folds,
                                               jobs=args.jobs, return_models=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(mcfg.to_dict(), indent=1) + "\n", encoding="utf-8")
    if args.protocol == "none":
        save_checkpoint(models[0], out / "model.json")
    else:
        for k, m in enumerate(models):
            save_checkpoint(m, out / f"fold-{k:02d}.json")
    report["train_config"] = {k: getattr(tcfg, k) for k in tcfg.__dataclass_fields__}
    report["history"] = histories
    text = json.dumps(report, indent=1, sort_keys=True)
    (out / "report.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    items = _load_items(args.data)
    if not items:
        raise DatasetError("evaluation data is empty")
    m = evaluate(model, items)
    report = {"top1": m.get("top1"), "top2": m.get("top2"), "top3": m.get("top3"),
              "confusion": m.get("confusion"), "wer": m.get("wer"), "edits": m.get("edits"),
              "n": m["n"]}
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_decode(args):
    model = load_checkpoint(args.checkpoint)
    if not model.config.is_ctc:
        raise ModelConfigError("decode needs a sentence (hbrnn_ctc) checkpoint")
    items = _load_items(args.data)
    if not 0 <= args.index < len(items):
        raise DatasetError(f"record index {args.index} out of range ({len(items)} records)")
    item = items[args.index]
    traj = item if hasattr(item, "s_right") else build_trajectories(item)
    post = sentence_forward(model, traj)
    alpha = Alphabet(model.config.classes)
    for labels, score in ctc.beam_decode(post, alpha, args.beam):
        print(f"{score:.6f}\t{' '.join(alpha.decode(labels))}")
    return 0


def cmd_gradcheck(args):
    errs = run_suite(args.instances, args.seed if args.seed is not None else _default_seed())
    ok = all(v < GRADCHECK_TOL for v in errs.values())
    print(json.dumps({"max_rel_error": errs, "tolerance": GRADCHECK_TOL, "pass": ok}, sort_keys=True))
    return 0 if ok else 1


def build_parser():
    p = _Parser(prog="hbrnn", description="Skeleton-based sign recognition: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--samples", type=int, default=20,
                   help="samples per class (or per sentence) and subject")
    g.add_argument("--subjects", type=int, default=1)
    g.add_argument("--joints", type=int, default=23)
    g.add_argument("--t-min", type=int, default=16)
    g.add_argument("--t-max", type=int, default=24)
    g.add_argument("--noise", type=float, default=2.0)
    g.add_argument("--hands", choices=("one", "two"), default="two")
    g.add_argument("--slots", help="sentence mode: 'default' (4x4 template) or slot words like 'a,b/c,d/e,f'")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--alphabet-out")
    g.set_defaults(func=cmd_gen)

    pp = sub.add_parser("preprocess", help="smooth and extract trajectories")
    pp.add_argument("--data", required=True)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train with a cross-validation protocol")
    t.add_argument("--data", required=True)
    t.add_argument("--model", "--config", dest="model", required=True,
                   help="preset name or model config JSON")
    t.add_argument("--protocol", choices=("loso", "unseen10", "none"), default="none")
    t.add_argument("--folds", type=int, default=10)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("decode", help="beam-decode one record with a sentence checkpoint")
    d.add_argument("--data", required=True)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--index", type=int, default=0)
    d.add_argument("--beam", type=int, default=10)
    d.set_defaults(func=cmd_decode)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--seed", type=int)
    gc.set_defaults(func=cmd_gradcheck)
    return p


VALIDATION_ERRORS = (DatasetError, ConfigError, ModelConfigError, HandMismatchError,
                     UnsupportedInputError, ProtocolError, TrainingError,
                     ctc.InfeasibleTargetError, ValueError, KeyError)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"hbrnn: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"hbrnn: I/O error: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"hbrnn: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
