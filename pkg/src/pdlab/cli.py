"""Command-line entry point: ``pdlab <command> [options]``.

Commands write JSON and CSV reports under ``--out`` (default ``runs``).
Set ``PDLAB_THREADS`` to cap the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .harness import (STRATEGIES, ExperimentConfig, TrainLog, ablate_prompt_length, eval_checkpoint, make_workspace,
                      pretrain_source, run_pipeline, run_strategy)
from .synthetic import load_corpus, make_domain_pair, save_corpus

CONFIG_NAME = "experiment.json"


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _length_list(text: str) -> list:
    """``1,2,8x6`` -> [1, 2, (8, 6)]; ``AxB`` is an asymmetric text/image pair."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if "x" in item:
            t, i = item.split("x")
            out.append((int(t), int(i)))
        elif item:
            out.append(int(item))
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("shared options")
    g.add_argument("--config", type=Path, help="experiment config JSON")
    g.add_argument("--out", type=Path, help="output directory (default: config out_dir)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--epochs", type=int, help="epochs per adaptation stage")
    g.add_argument("--prompt-len-text", type=int)
    g.add_argument("--prompt-len-image", type=int)
    g.add_argument("--prompt-dropout", type=float)
    g.add_argument("--lambda", dest="lam", type=float, help="ID-loss weight")
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pdlab", description="Two-stage prompt adaptation for text-to-image person retrieval.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="generate the synthetic source/target corpus")

    s = sub.add_parser("pretrain", parents=[common], help="pretrain the dual encoder on the source domain")
    s.add_argument("--corpus", type=Path, help="corpus directory (default: OUT/corpus)")

    s = sub.add_parser("adapt", parents=[common], help="adapt a pretrained backbone to the target domain")
    s.add_argument("--strategy", required=True, choices=[x.replace("_", "-") for x in STRATEGIES])
    s.add_argument("--backbone", type=Path, required=True)
    s.add_argument("--seeds", type=_int_list, help="comma-separated seeds; overrides --seed")
    s.add_argument("--corpus", type=Path)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--split", default="target-test",
                   choices=["target-test", "target-train", "source-test", "source-val", "source-train"])
    s.add_argument("--dump-rankings", type=Path, metavar="CSV")
    s.add_argument("--corpus", type=Path)

    s = sub.add_parser("ablate", parents=[common], help="prompt-length sweep with the two-stage strategy")
    s.add_argument("--lengths", type=_length_list, default=[1, 2, 3, 4, 6, 8],
                   help="e.g. 1,2,4 or asymmetric pairs 8x6,8x10")
    s.add_argument("--seeds", type=int, default=3, help="number of seeds (0..N-1)")
    s.add_argument("--backbone", type=Path, required=True)
    s.add_argument("--corpus", type=Path)

    s = sub.add_parser("pipeline", parents=[common], help="gen-data, pretrain and all strategies end to end")
    s.add_argument("--seeds", type=_int_list)
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = {"epochs": args.epochs, "prompt_len_text": args.prompt_len_text,
            "prompt_len_image": args.prompt_len_image, "prompt_dropout": args.prompt_dropout, "lam": args.lam}
    cfg = replace(cfg, **{k: v for k, v in over.items() if v is not None})
    if args.out is not None:
        cfg = replace(cfg, out_dir=str(args.out))
    return cfg


def _checkpoint_config(args, ckpt_dir: Path) -> ExperimentConfig:
    """Explicit --config wins; otherwise the config stored next to the checkpoint."""
    if args.config is None and (ckpt_dir / CONFIG_NAME).exists():
        args.config = ckpt_dir / CONFIG_NAME
    return load_config(args)


def _workspace(cfg: ExperimentConfig, corpus: Path | None):
    corpus = corpus or Path(cfg.out_dir) / "corpus"
    source, target, _, _ = load_corpus(corpus)
    return make_workspace(cfg, source, target)


def _save(ckpt, path: Path, cfg: ExperimentConfig) -> None:
    save_checkpoint(ckpt, path)
    cfg.save(path / CONFIG_NAME)


def cmd_gen_data(args) -> dict:
    cfg = load_config(args)
    root = Path(cfg.out_dir) / "corpus"
    source, target = make_domain_pair(cfg.data, args.seed)
    save_corpus(root, source, target, cfg.data, args.seed)
    return {"corpus": str(root), "source_train": len(source.train), "target_train": len(target.train),
            "target_test": len(target.test)}


def cmd_pretrain(args) -> dict:
    cfg = load_config(args)
    ws = _workspace(cfg, args.corpus)
    out = Path(cfg.out_dir)
    tlog = TrainLog()
    ckpt = pretrain_source(ws, args.seed, tlog)
    _save(ckpt, out / "backbone", cfg)
    tlog.write_csv(out / "pretrain_log.csv")
    reports = {}
    for name, (domain, split) in {"source_test": ("source", "test"), "zero_shot": ("target", "test")}.items():
        rep = eval_checkpoint(ws, ckpt, domain, split, {"eval": name})
        rep.to_json(out / f"{name}.json")
        reports[name] = rep.rank1
    return {"checkpoint": str(out / "backbone"), "rank1": reports}


def cmd_adapt(args) -> dict:
    cfg = _checkpoint_config(args, args.backbone)
    ws = _workspace(cfg, args.corpus)
    backbone = load_checkpoint(args.backbone)
    strategy = args.strategy.replace("-", "_")
    seeds = args.seeds or [args.seed]
    out = Path(cfg.out_dir) / strategy
    runs, agg = run_strategy(ws, strategy, backbone, seeds, out)
    for r in runs:
        cfg.save(out / f"{strategy}_seed{r.seed}" / "checkpoint" / CONFIG_NAME)
    return {"strategy": strategy, "seeds": seeds, "aggregate": agg, "out": str(out)}


def cmd_eval(args) -> dict:
    cfg = _checkpoint_config(args, args.checkpoint)
    ws = _workspace(cfg, args.corpus)
    ckpt = load_checkpoint(args.checkpoint)
    domain, split = args.split.split("-")
    rep = eval_checkpoint(ws, ckpt, domain, split, {"split": args.split}, rankings_path=args.dump_rankings)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_json(out / f"eval_{args.split}.json")
    rep.append_csv(out / "eval.csv")
    return rep.as_row()


def cmd_ablate(args) -> dict:
    cfg = _checkpoint_config(args, args.backbone)
    ws = _workspace(cfg, args.corpus)
    backbone = load_checkpoint(args.backbone)
    rows = ablate_prompt_length(ws, backbone, args.lengths, list(range(args.seeds)), Path(cfg.out_dir) / "ablate")
    return {"rows": rows, "csv": str(Path(cfg.out_dir) / "ablate" / "prompt_length_sweep.csv")}


def cmd_pipeline(args) -> dict:
    cfg = load_config(args)
    if args.seeds:
        cfg = replace(cfg, seeds=tuple(args.seeds))
    summary = run_pipeline(cfg, cfg.out_dir, data_seed=args.seed, model_seed=args.seed)
    for manifest in Path(cfg.out_dir).rglob("manifest.json"):
        cfg.save(manifest.parent / CONFIG_NAME)
    return summary


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "adapt": cmd_adapt, "eval": cmd_eval,
            "ablate": cmd_ablate, "pipeline": cmd_pipeline}


def _thread_limit():
    n = os.environ.get("PDLAB_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        with _thread_limit():
            result = COMMANDS[args.command](args)
    except (CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"pdlab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=1, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
