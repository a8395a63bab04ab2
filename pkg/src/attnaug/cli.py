"""Command-line front end.

Exit codes: 0 on success, 1 for argument or config validation problems,
2 when a stage fails while running.  Individual subcommands always rerun
their stage; only `run` consults the manifest to skip up-to-date stages.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline as pl
from .config import PipelineConfig, load_config, write_default_config
from .errors import AttnaugError, ConfigError
from .toyworld import ToyWorldConfig, build_toy_world


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; bad usage is a validation error here
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    # The shared flags are accepted before or after the subcommand; SUPPRESS
    # keeps a flagless subparser parse from clobbering a root-level value.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=Path, default=argparse.SUPPRESS, help="pipeline config file"
    )
    common.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="override config seed"
    )
    common.add_argument(
        "--workers", type=int, default=argparse.SUPPRESS,
        help="override config worker count",
    )
    common.add_argument(
        "--stage-dir", type=Path, default=argparse.SUPPRESS,
        help="override the output directory",
    )

    parser = _Parser(prog="attnaug", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_command(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p_init = add_command("init", help="write a default config (and optional toy data)")
    p_init.add_argument(
        "--with-toy-data",
        action="store_true",
        help="also generate a small synthetic corpus at the configured data paths",
    )
    p_init.add_argument("--toy-docs", type=int, default=200)
    p_init.add_argument("--toy-questions", type=int, default=100)
    p_init.add_argument(
        "--toy-bias",
        type=float,
        default=0.9,
        help="fraction of training questions drawn from first sentences",
    )

    add_command("ingest", help="split documents into fixed-size passages")
    add_command("train-vocab", help="learn the word-piece vocabulary")
    add_command("ner", help="tag entity mentions in every passage")
    add_command("index", help="build the lexical inverted index")

    p_train = add_command("train", help="train a dual encoder")
    p_train.add_argument(
        "--tag",
        default="baseline",
        choices=pl.MODEL_TAGS,
        help="which training recipe and checkpoint name to use",
    )
    p_train.add_argument(
        "--pretrain", type=Path, default=None, help="override the pretraining data file"
    )
    p_train.add_argument(
        "--finetune", type=Path, default=None, help="override the finetuning data file"
    )

    add_command("probe-attention", help="profile CLS attention and pick target entities")
    add_command("generate", help="produce synthetic questions")
    add_command("filter", help="apply answer-consistency and hardness filters")
    add_command("mix", help="assemble pretraining pools at the configured ratio")
    add_command("mine-negatives", help="attach lexical hard negatives to training data")

    p_eval = add_command("eval", help="evaluate one checkpoint on the test set")
    p_eval.add_argument("--tag", default="baseline", help="label for the report files")
    p_eval.add_argument(
        "--checkpoint",
        type=Path,
        default=None,
        help="checkpoint to evaluate (default: model_<tag>.ckpt in the output dir)",
    )

    add_command("compare", help="evaluate all three models and report deltas")
    add_command("emit-plots", help="write plot-ready CSV tables from reports")
    add_command("run", help="run every stage in order, skipping up-to-date ones")
    return parser


def _load(args) -> PipelineConfig:
    cfg = load_config(args.config, check_paths=args.command != "init")
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError(["workers must be >= 1"])
        cfg.workers = args.workers
    if args.stage_dir is not None:
        cfg.paths.output_dir = args.stage_dir.resolve()
    return cfg


def _cmd_init(args) -> None:
    if not args.config.exists():
        write_default_config(args.config)
        print(f"wrote {args.config}")
    else:
        print(f"{args.config} already exists, leaving it alone")
    if not args.with_toy_data:
        return
    cfg = _load(args)
    seed = args.seed if args.seed is not None else cfg.seed
    world = build_toy_world(
        ToyWorldConfig(
            docs=args.toy_docs,
            train_questions=args.toy_questions,
            test_questions=args.toy_questions,
            first_sentence_bias=args.toy_bias,
            seed=seed,
        )
    )
    data_dir = cfg.paths.documents.parent
    paths = world.write(data_dir)
    for label in sorted(paths):
        print(f"wrote {paths[label]}")


def _train_spec(cfg: PipelineConfig, seed: int, args) -> pl.StageSpec:
    out = cfg.paths.output_dir
    if args.tag == "baseline":
        pretrain = args.pretrain
        finetune = args.finetune or cfg.paths.gold_train
        finetune_producer = "(provide gold data)"
    else:
        pretrain = args.pretrain or out / f"{args.tag}_negs.jsonl"
        finetune = args.finetune or out / "gold_train_negs.jsonl"
        finetune_producer = "mine-negatives"
    return pl.stage_train(
        cfg,
        seed,
        args.tag,
        finetune,
        pretrain_path=pretrain,
        finetune_producer=finetune_producer,
    )


def _eval_spec(cfg: PipelineConfig, seed: int, args) -> pl.StageSpec:
    checkpoint = args.checkpoint or cfg.paths.output_dir / f"model_{args.tag}.ckpt"
    return pl.stage_eval(cfg, seed, args.tag, checkpoint)


_SINGLE_STAGE = {
    "ingest": pl.stage_ingest,
    "train-vocab": pl.stage_train_vocab,
    "ner": pl.stage_ner,
    "index": pl.stage_index,
    "probe-attention": pl.stage_probe_attention,
    "generate": pl.stage_generate,
    "filter": pl.stage_filter,
    "mix": pl.stage_mix,
    "mine-negatives": pl.stage_mine_negatives,
    "compare": pl.stage_compare,
    "emit-plots": pl.stage_emit_plots,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # SUPPRESS leaves unset shared flags absent entirely; normalize here.
    args.config = getattr(args, "config", Path("config.yaml"))
    args.seed = getattr(args, "seed", None)
    args.workers = getattr(args, "workers", None)
    args.stage_dir = getattr(args, "stage_dir", None)
    try:
        if args.command == "init":
            _cmd_init(args)
            return 0
        cfg = _load(args)
    except ConfigError as exc:
        print(f"attnaug: {exc}", file=sys.stderr)
        return 1
    except AttnaugError as exc:
        print(f"attnaug: {exc}", file=sys.stderr)
        return 2

    seed = args.seed if args.seed is not None else cfg.seed
    try:
        with pl.output_lock(cfg.paths.output_dir):
            if args.command == "run":
                pl.run_pipeline(cfg, seed)
            elif args.command == "train":
                entry = pl.execute_stage(cfg, seed, _train_spec(cfg, seed, args))
                print(f"[done] {entry['stage']} ({entry['wall_time_s']}s)")
            elif args.command == "eval":
                entry = pl.execute_stage(cfg, seed, _eval_spec(cfg, seed, args))
                print(f"[done] {entry['stage']} ({entry['wall_time_s']}s)")
            else:
                spec = _SINGLE_STAGE[args.command](cfg, seed)
                entry = pl.execute_stage(cfg, seed, spec)
                print(f"[done] {entry['stage']} ({entry['wall_time_s']}s)")
    except AttnaugError as exc:
        print(f"attnaug: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"attnaug: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
