"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import ConfigError, load_config
from .data import load_dataset, load_samples, split_dataset, synth_generate
from .errors import DataError, MelinkError, NumericError
from .evaluate import evaluate, rank_sample
from .gradcheck import run_gradcheck
from .model import Featurizer
from .train import train

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage is 1 here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="melink", description="Multimodal entity linking engine")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--entities", type=int, required=True)
    sp.add_argument("--samples", type=int, required=True)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--distractors", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dim", type=int, default=512)
    sp.add_argument("--obj-dim", type=int, default=768)
    sp.add_argument("--face-dim", type=int, default=512)

    tp = sub.add_parser("train", help="train a model")
    tp.add_argument("--config", default=None, help="JSON config file")
    tp.add_argument("--data", required=True)
    tp.add_argument("--out", required=True)
    for flag, kind in [("--seed", int), ("--epochs", int), ("--max-steps", int),
                       ("--batch-size", int), ("--lr", float), ("--dropout", float),
                       ("--weight-decay", float), ("--margin", float),
                       ("--beta", float), ("--tau", float), ("--k-hard", int),
                       ("--heads", int), ("--dim", int), ("--obj-dim", int),
                       ("--face-dim", int), ("--n-queries", int),
                       ("--eval-every", int)]:
        tp.add_argument(flag, type=kind, default=None)
    tp.add_argument("--lambda", type=int, default=None, dest="lam")
    for flag in ["mt", "mv", "ms", "face", "alignment"]:
        tp.add_argument(f"--disable-{flag}", action="store_true")

    ep = sub.add_parser("eval", help="evaluate a checkpoint")
    ep.add_argument("--ckpt", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--lambda", type=int, default=None, dest="lam")
    ep.add_argument("--report", required=True)
    ep.add_argument("--split", choices=["all", "train", "dev", "test"], default="all")

    rp = sub.add_parser("rank", help="rank candidates for one sample")
    rp.add_argument("--ckpt", required=True)
    rp.add_argument("--sample", required=True, help="JSONL file with the sample")
    rp.add_argument("--data", required=True, help="dataset dir for the entity index")
    rp.add_argument("--lambda", type=int, default=None, dest="lam")

    gp = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    gp.add_argument("--dim", type=int, default=8)
    gp.add_argument("--heads", type=int, default=2)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--n-queries", type=int, default=2)
    gp.add_argument("--batch", type=int, default=3)
    gp.add_argument("--objects", type=int, default=2)
    return p


_OVERRIDE_MAP = {
    "seed": "seed", "epochs": "epochs", "max_steps": "max_steps",
    "batch_size": "batch_size", "lr": "lr", "dropout": "dropout",
    "weight_decay": "weight_decay", "margin": "margin", "beta": "beta",
    "tau": "tau", "k_hard": "k_hard", "heads": "heads", "dim": "d",
    "obj_dim": "d_obj", "face_dim": "d_face", "n_queries": "n_queries",
    "eval_every": "eval_every_steps", "lam": "lam",
}


def _cmd_synth(args) -> int:
    out = synth_generate(args.entities, args.samples, args.noise,
                         args.distractors, args.seed, args.out,
                         d=args.dim, d_obj=args.obj_dim, d_face=args.face_dim)
    print(f"wrote synthetic dataset to {out}")
    return 0


def _cmd_train(args) -> int:
    overrides = {}
    for attr, key in _OVERRIDE_MAP.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    for flag in ["mt", "mv", "ms", "face", "alignment"]:
        if getattr(args, f"disable_{flag}"):
            overrides[f"use_{flag}"] = False
    cfg = load_config(args.config, overrides)
    result = train(cfg, args.data, args.out)
    dev = result.final_dev
    if dev is not None:
        print(f"steps={result.steps} dev_top1={dev.top_k[1]:.4f} "
              f"dev_top5={dev.top_k[5]:.4f} best_dev_top1={result.best_dev_top1:.4f}")
    else:
        print(f"steps={result.steps} (no dev split)")
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"best checkpoint:  {result.best_checkpoint}")
    print(f"metrics log:      {result.metrics_path}")
    return 0


def _cmd_eval(args) -> int:
    from .data import dataset_hash

    store, cfg, _ = load_checkpoint(args.ckpt)
    samples, index, _ = load_dataset(args.data)
    if args.split != "all":
        tr, dv, te = split_dataset(samples, cfg.seed, cfg.split_train, cfg.split_dev)
        samples = {"train": tr, "dev": dv, "test": te}[args.split]
    lam = args.lam if args.lam is not None else cfg.lam
    report = evaluate(store, cfg, samples, index, lam, split=args.split,
                      metadata={"dataset_hash": dataset_hash(args.data)})
    Path(args.report).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    tk = report.top_k
    print(f"n={report.n_samples} top1={tk[1]:.4f} top5={tk[5]:.4f} "
          f"top10={tk[10]:.4f} top20={tk[20]:.4f} "
          f"retrieval_miss_rate={report.retrieval_miss_rate:.4f}")
    return 0


def _cmd_rank(args) -> int:
    store, cfg, _ = load_checkpoint(args.ckpt)
    _, index, _ = load_dataset(args.data)
    samples = load_samples(Path(args.sample), set(index.entities))
    if not samples:
        raise DataError(f"no samples in {args.sample}")
    lam = args.lam if args.lam is not None else cfg.lam
    featurizer = Featurizer(cfg)
    vecs = featurizer.entity_unit_vecs(index)
    for sample in samples:
        ranking = rank_sample(sample, store, cfg, index, lam, featurizer, vecs)
        for eid, score in ranking.candidates:
            print(f"{eid}\t{score:.6f}")
    return 0


def _cmd_gradcheck(args) -> int:
    err, n_params, elapsed = run_gradcheck(
        dim=args.dim, heads=args.heads, seed=args.seed,
        n_queries=args.n_queries, batch=args.batch, n_objects=args.objects)
    print(f"max_rel_error={err:.3e} over {n_params} parameters "
          f"({elapsed:.1f}s)")
    if err >= 1e-4:
        print("FAIL: gradient mismatch above 1e-4", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "rank": _cmd_rank,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except MelinkError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
