"""Stage implementations, the run manifest, and pipeline orchestration.

Every stage reads files, writes files, and appends one manifest line
recording what it consumed (hashes), what it produced, and the seed it
used.  Stages derive their seeds from the master seed by name, never from
wall clock or process state, so rerunning a stage with the same config and
inputs reproduces its artifacts byte for byte.  `run_pipeline` chains all
stages and skips any whose manifest entry already matches the current
config, inputs, and on-disk artifacts.
"""

from __future__ import annotations

import csv
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import attention as attn
from . import evalharness as evalh
from . import lexical
from .config import PipelineConfig
from .corpus import (
    GoldExample,
    build_overlap_split,
    load_documents,
    load_gold,
    load_jsonl,
    load_passages,
    passages_by_id,
    split_documents,
    write_gold,
    write_jsonl,
    write_passages,
)
from .encoder import (
    EncoderConfig,
    TrainConfig,
    TrainExample,
    init_model,
    load_checkpoint,
    run_schedule,
    save_checkpoint,
)
from .errors import PipelineError
from .filtering import (
    STAGE_ORDER,
    FilterConfig,
    mix_datasets,
    run_filter_pipeline,
    write_filter_report,
)
from .hashing import derive_seed, hash_file, hash_json
from .ner import (
    DEFAULT_ALLOWED_TYPES,
    EntityMention,
    Gazetteer,
    GazetteerBackend,
    filter_by_type,
    recognize,
)
from .protocol import LineJsonBackend
from .qgen import (
    ExternalGenerator,
    GenerationRequest,
    SamplingParams,
    SyntheticExample,
    TemplateGenerator,
    load_synthetic,
    write_synthetic,
)
from .tokenizer import Vocabulary, encode as tokenize, train_vocab

MANIFEST_NAME = "manifest.jsonl"
LOCK_NAME = ".lock"

MODEL_TAGS = ("baseline", "uncond", "mixed")


# ---------------------------------------------------------------------------
# Locking and manifest plumbing
# ---------------------------------------------------------------------------

@contextmanager
def output_lock(out_dir: Path):
    """One writing command per output directory at a time."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / LOCK_NAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock_path} if that run is dead)"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        try:
            lock_path.unlink()
        except FileNotFoundError:
            pass


def _manifest_path(cfg: PipelineConfig) -> Path:
    return cfg.paths.output_dir / MANIFEST_NAME

def read_manifest(cfg: PipelineConfig) -> dict[str, dict]:
    """Latest manifest entry per stage name."""
    path = _manifest_path(cfg)
    entries: dict[str, dict] = {}
    if not path.exists():
        return entries
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entry = json.loads(line)
                entries[entry["stage"]] = entry
    return entries


def _append_manifest(cfg: PipelineConfig, entry: dict) -> None:
    path = _manifest_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")


def config_hash(cfg: PipelineConfig, seed: int) -> str:
    """Identity of the computation a config describes.

    Paths and worker count are excluded: input files are content-hashed per
    stage, and the thread count cannot change any artifact byte, so moving a
    workspace or changing parallelism must not invalidate finished stages.
    """
    data = cfg.to_dict()
    data.pop("paths", None)
    data.pop("workers", None)
    return hash_json({"config": data, "seed": seed})


@dataclass
class StageSpec:
    """What a stage consumes and produces, for execution and skip checks."""

    name: str  # manifest key, e.g. "train:mixed"
    command: str  # subcommand that produces it, for error messages
    inputs: dict[str, tuple[Path, str]]  # label -> (path, producing command)
    run: Callable[[], dict[str, Path]]  # executes, returns artifacts


def _check_inputs(spec: StageSpec) -> dict[str, str]:
    hashes = {}
    for label, (path, producer) in sorted(spec.inputs.items()):
        if not path.exists():
            raise PipelineError(
                f"{spec.command}: missing input {path.name} ({label}); "
                f"run `attnaug {producer}` first"
            )
        hashes[label] = hash_file(path)
    return hashes


def execute_stage(cfg: PipelineConfig, seed: int, spec: StageSpec) -> dict:
    input_hashes = _check_inputs(spec)
    started = time.monotonic()
    artifacts = spec.run()
    wall = time.monotonic() - started
    out_dir = cfg.paths.output_dir
    entry = {
        "stage": spec.name,
        "command": spec.command,
        "config_hash": config_hash(cfg, seed),
        "input_hashes": input_hashes,
        "seed": seed,
        "artifacts": {
            label: str(path.relative_to(out_dir)) if path.is_relative_to(out_dir) else str(path)
            for label, path in sorted(artifacts.items())
        },
        "artifact_hashes": {
            label: hash_file(path) for label, path in sorted(artifacts.items())
        },
        "wall_time_s": round(wall, 3),
    }
    _append_manifest(cfg, entry)
    return entry


def stage_is_current(cfg: PipelineConfig, seed: int, spec: StageSpec) -> bool:
    """True when a completed manifest entry matches config, inputs, and disk."""
    entry = read_manifest(cfg).get(spec.name)
    if entry is None:
        return False
    if entry.get("config_hash") != config_hash(cfg, seed):
        return False
    try:
        if entry.get("input_hashes") != _check_inputs(spec):
            return False
    except PipelineError:
        return False
    out_dir = cfg.paths.output_dir
    for label, rel in entry.get("artifacts", {}).items():
        path = out_dir / rel
        if not path.exists():
            return False
        if entry["artifact_hashes"].get(label) != hash_file(path):
            return False
    return True


# ---------------------------------------------------------------------------
# Shared loading helpers
# ---------------------------------------------------------------------------

def _out(cfg: PipelineConfig) -> Path:
    return cfg.paths.output_dir


def _load_vocab(cfg: PipelineConfig) -> Vocabulary:
    return Vocabulary.load(_out(cfg) / "vocab.txt")


def _load_corpus(cfg: PipelineConfig):
    passages = load_passages(_out(cfg) / "passages.jsonl")
    return passages, passages_by_id(passages)


def _load_mentions(cfg: PipelineConfig) -> dict[str, list[EntityMention]]:
    by_pid: dict[str, list[EntityMention]] = {}
    for record in load_jsonl(_out(cfg) / "mentions.jsonl"):
        by_pid[record["passage_id"]] = [
            EntityMention.from_dict(m) for m in record["mentions"]
        ]
    return by_pid


def _attention_sample(cfg: PipelineConfig, passages) -> list:
    ordered = sorted(passages, key=lambda p: p.id)
    return ordered[: cfg.eval.attention_passages]


def _gold_to_train_examples(gold: Sequence[GoldExample]) -> list[TrainExample]:
    return [
        TrainExample(
            question=ex.question,
            positive_passage_id=ex.positive_passage_id,
            hard_negative_ids=list(ex.negative_passage_ids),
        )
        for ex in gold
    ]


def _phase_train_config(phase_cfg, seed: int) -> TrainConfig:
    return TrainConfig(
        batch_size=phase_cfg.batch_size,
        hard_negatives_per_example=phase_cfg.hard_negatives_per_example,
        learning_rate=phase_cfg.learning_rate,
        epochs=phase_cfg.epochs,
        seed=seed,
        optimizer=phase_cfg.optimizer,
    )


def _make_generator(cfg: PipelineConfig):
    if cfg.generation.backend == "external":
        return ExternalGenerator(LineJsonBackend(cfg.generation.backend_argv))
    gazetteer = Gazetteer.load(cfg.paths.gazetteer)
    return TemplateGenerator(mention_backend=GazetteerBackend(gazetteer))


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------

def stage_ingest(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        docs = load_documents(cfg.paths.documents)
        passages = split_documents(docs, cfg.corpus.block_size)
        write_passages(passages, out / "passages.jsonl")
        return {"passages": out / "passages.jsonl"}

    return StageSpec(
        name="ingest",
        command="ingest",
        inputs={"documents": (cfg.paths.documents, "(provide input corpus)")},
        run=run,
    )


def stage_train_vocab(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        passages, _ = _load_corpus(cfg)
        gold = load_gold(cfg.paths.gold_train)
        texts = [p.text for p in passages] + [ex.question for ex in gold]
        vocab = train_vocab(texts, cfg.vocab.size)
        vocab.save(out / "vocab.txt")
        return {"vocab": out / "vocab.txt"}

    return StageSpec(
        name="train-vocab",
        command="train-vocab",
        inputs={
            "passages": (out / "passages.jsonl", "ingest"),
            "gold_train": (cfg.paths.gold_train, "(provide gold data)"),
        },
        run=run,
    )


def stage_ner(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        passages, _ = _load_corpus(cfg)
        backend = GazetteerBackend(Gazetteer.load(cfg.paths.gazetteer))
        records = []
        for passage in passages:
            mentions = recognize(passage.text, backend)
            records.append(
                {"passage_id": passage.id, "mentions": [m.to_dict() for m in mentions]}
            )
        write_jsonl(records, out / "mentions.jsonl")
        return {"mentions": out / "mentions.jsonl"}

    return StageSpec(
        name="ner",
        command="ner",
        inputs={
            "passages": (out / "passages.jsonl", "ingest"),
            "gazetteer": (cfg.paths.gazetteer, "(provide gazetteer)"),
        },
        run=run,
    )


def stage_index(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        passages, _ = _load_corpus(cfg)
        index = lexical.build_index(passages)
        lexical.save_index(index, out / "index.json")
        return {"index": out / "index.json"}

    return StageSpec(
        name="index",
        command="index",
        inputs={"passages": (out / "passages.jsonl", "ingest")},
        run=run,
    )


def stage_train(
    cfg: PipelineConfig,
    seed: int,
    tag: str,
    finetune_path: Path,
    pretrain_path: Path | None = None,
    finetune_producer: str = "mine-negatives",
    pretrain_producer: str = "mine-negatives",
) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        vocab = _load_vocab(cfg)
        _passages, by_id = _load_corpus(cfg)
        enc = EncoderConfig(
            layers=cfg.encoder.layers,
            heads=cfg.encoder.heads,
            model_dim=cfg.encoder.model_dim,
            ffn_dim=cfg.encoder.ffn_dim,
            max_len=cfg.vocab.max_len,
            vocab_size=len(vocab),
            seed=derive_seed(seed, "init", tag),
            dtype=cfg.encoder.dtype,
        )
        model = init_model(enc, tie_encoders=cfg.encoder.tie_encoders)
        finetune_set = _gold_to_train_examples(load_gold(finetune_path))
        pretrain_set = (
            _gold_to_train_examples(load_gold(pretrain_path)) if pretrain_path else []
        )
        passage_texts = {pid: p.text for pid, p in by_id.items()}
        model, curves = run_schedule(
            model,
            pretrain_set,
            finetune_set,
            _phase_train_config(cfg.train.pretrain, derive_seed(seed, "pretrain", tag)),
            _phase_train_config(cfg.train.finetune, derive_seed(seed, "finetune", tag)),
            vocab,
            passage_texts,
        )
        ckpt = out / f"model_{tag}.ckpt"
        save_checkpoint(model, ckpt, phase=tag)
        curve_path = out / f"curve_{tag}.json"
        curve_path.write_text(
            json.dumps(curves, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        return {"checkpoint": ckpt, "curves": curve_path}

    inputs = {
        "passages": (out / "passages.jsonl", "ingest"),
        "vocab": (out / "vocab.txt", "train-vocab"),
        "finetune_data": (finetune_path, finetune_producer),
    }
    if pretrain_path is not None:
        inputs["pretrain_data"] = (pretrain_path, pretrain_producer)
    return StageSpec(name=f"train:{tag}", command="train", inputs=inputs, run=run)


def stage_probe_attention(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        vocab = _load_vocab(cfg)
        passages, _ = _load_corpus(cfg)
        mentions_by_pid = _load_mentions(cfg)
        model = load_checkpoint(out / "model_baseline.ckpt")
        sample = _attention_sample(cfg, passages)
        summaries = []
        target_records = []
        for passage in sample:
            tokens = tokenize(vocab, passage.text, cfg.vocab.max_len)
            profile = attn.extract_profile(
                model, tokens, passage.id, source_text=passage.text
            )
            allowed = filter_by_type(mentions_by_pid.get(passage.id, []))
            scored = attn.entity_attention(profile, allowed)
            summaries.append(attn.ProfileSummary(profile=profile, entities=scored))
            if scored:
                targets = attn.lowest_attended(
                    scored,
                    cfg.generation.lowest_k,
                    normalized=cfg.generation.normalized_attention,
                )
                target_records.append(
                    {
                        "passage_id": passage.id,
                        "entities": [m.to_dict() for m in targets],
                    }
                )
        attn.write_attention_report(out / "attention_report.json", summaries)
        attn.write_heatmap_csv(out / "heatmap.csv", [s.profile for s in summaries])
        write_jsonl(target_records, out / "targets.jsonl")
        return {
            "attention_report": out / "attention_report.json",
            "heatmap": out / "heatmap.csv",
            "targets": out / "targets.jsonl",
        }

    return StageSpec(
        name="probe-attention",
        command="probe-attention",
        inputs={
            "passages": (out / "passages.jsonl", "ingest"),
            "vocab": (out / "vocab.txt", "train-vocab"),
            "mentions": (out / "mentions.jsonl", "ner"),
            "model_baseline": (out / "model_baseline.ckpt", "train"),
        },
        run=run,
    )


def stage_generate(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        _passages, by_id = _load_corpus(cfg)
        generator = _make_generator(cfg)
        s = cfg.generation.sampling
        meta = {
            "conditioned_requested": 0,
            "conditioned_emitted": 0,
            "conditioned_skipped": 0,
            "unconditioned_requested": 0,
            "unconditioned_emitted": 0,
            "unconditioned_skipped": 0,
        }

        conditioned: list[SyntheticExample] = []
        for record in load_jsonl(out / "targets.jsonl"):
            passage = by_id.get(record["passage_id"])
            if passage is None:
                raise PipelineError(
                    f"generate: targets reference unknown passage {record['passage_id']!r}; "
                    "rerun `attnaug probe-attention`"
                )
            for i, mention_dict in enumerate(record["entities"]):
                mention = EntityMention.from_dict(mention_dict)
                meta["conditioned_requested"] += 1
                request = GenerationRequest(
                    passage=passage,
                    conditioning_entity=mention,
                    sampling=SamplingParams(
                        top_p=s.top_p, top_k=s.top_k, temperature=s.temperature,
                        seed=derive_seed(seed, "cond", passage.id, i),
                    ),
                )
                example = generator.generate_conditioned(request)
                if example is None:
                    meta["conditioned_skipped"] += 1
                else:
                    conditioned.append(example)

        unconditioned: list[SyntheticExample] = []
        for pid in sorted(by_id):
            passage = by_id[pid]
            for i in range(cfg.generation.unconditioned_per_passage):
                meta["unconditioned_requested"] += 1
                request = GenerationRequest(
                    passage=passage,
                    conditioning_entity=None,
                    sampling=SamplingParams(
                        top_p=s.top_p, top_k=s.top_k, temperature=s.temperature,
                        seed=derive_seed(seed, "unc", passage.id, i),
                    ),
                )
                example = generator.generate_unconditioned(request)
                if example is None:
                    meta["unconditioned_skipped"] += 1
                else:
                    unconditioned.append(example)

        def dedup(examples: list[SyntheticExample]) -> list[SyntheticExample]:
            seen = set()
            unique = []
            for ex in examples:
                key = (ex.question, ex.answer, ex.passage_id)
                if key not in seen:
                    seen.add(key)
                    unique.append(ex)
            return unique

        conditioned = dedup(conditioned)
        unconditioned = dedup(unconditioned)
        meta["conditioned_emitted"] = len(conditioned)
        meta["unconditioned_emitted"] = len(unconditioned)
        write_synthetic(out / "synthetic_conditioned.jsonl", conditioned)
        write_synthetic(out / "synthetic_unconditioned.jsonl", unconditioned)
        (out / "gen_meta.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        return {
            "synthetic_conditioned": out / "synthetic_conditioned.jsonl",
            "synthetic_unconditioned": out / "synthetic_unconditioned.jsonl",
            "gen_meta": out / "gen_meta.json",
        }

    return StageSpec(
        name="generate",
        command="generate",
        inputs={
            "passages": (out / "passages.jsonl", "ingest"),
            "targets": (out / "targets.jsonl", "probe-attention"),
            "gazetteer": (cfg.paths.gazetteer, "(provide gazetteer)"),
        },
        run=run,
    )


def stage_filter(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        vocab = _load_vocab(cfg)
        _passages, by_id = _load_corpus(cfg)
        model = load_checkpoint(out / "model_baseline.ckpt")
        fcfg = FilterConfig(
            mrc_threshold=cfg.filtering.mrc_threshold,
            hardness_mode=cfg.filtering.hardness_mode,
            hardness_threshold=cfg.filtering.hardness_threshold,
            mix_ratio=cfg.filtering.mix_ratio,
            target_size=cfg.filtering.target_size,
        )
        reports = {}
        artifacts = {}
        for label in ("conditioned", "unconditioned"):
            examples = load_synthetic(out / f"synthetic_{label}.jsonl")
            retained, report = run_filter_pipeline(
                examples, by_id, model, vocab, fcfg, workers=cfg.workers
            )
            path = out / f"filtered_{label}.jsonl"
            write_synthetic(path, retained)
            reports[label] = report
            artifacts[f"filtered_{label}"] = path
        write_filter_report(out / "filter_report.json", reports)
        artifacts["filter_report"] = out / "filter_report.json"
        return artifacts

    return StageSpec(
        name="filter",
        command="filter",
        inputs={
            "synthetic_conditioned": (out / "synthetic_conditioned.jsonl", "generate"),
            "synthetic_unconditioned": (out / "synthetic_unconditioned.jsonl", "generate"),
            "model_baseline": (out / "model_baseline.ckpt", "train"),
            "vocab": (out / "vocab.txt", "train-vocab"),
            "passages": (out / "passages.jsonl", "ingest"),
        },
        run=run,
    )


def stage_mix(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        conditioned = load_synthetic(out / "filtered_conditioned.jsonl")
        unconditioned = load_synthetic(out / "filtered_unconditioned.jsonl")
        target = cfg.filtering.target_size
        mixed = mix_datasets(
            conditioned, unconditioned, cfg.filtering.mix_ratio, target,
            derive_seed(seed, "mix", "mixed"),
        )
        uncond_only = mix_datasets(
            [], unconditioned, 0.0, target, derive_seed(seed, "mix", "uncond")
        )
        write_synthetic(out / "mixed.jsonl", mixed)
        write_synthetic(out / "uncond_train.jsonl", uncond_only)
        meta = {
            "stage_order": list(STAGE_ORDER),
            "mixed": {
                "target_size": target,
                "mix_ratio": cfg.filtering.mix_ratio,
                "conditioned": sum(1 for e in mixed if e.provenance == "conditioned"),
                "unconditioned": sum(1 for e in mixed if e.provenance == "unconditioned"),
            },
            "uncond_train": {"target_size": target, "mix_ratio": 0.0},
        }
        (out / "mix_meta.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        return {
            "mixed": out / "mixed.jsonl",
            "uncond_train": out / "uncond_train.jsonl",
            "mix_meta": out / "mix_meta.json",
        }

    return StageSpec(
        name="mix",
        command="mix",
        inputs={
            "filtered_conditioned": (out / "filtered_conditioned.jsonl", "filter"),
            "filtered_unconditioned": (out / "filtered_unconditioned.jsonl", "filter"),
        },
        run=run,
    )


def stage_mine_negatives(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        _passages, by_id = _load_corpus(cfg)
        index = lexical.load_index(out / "index.json")
        artifacts = {}

        def mine_gold(examples: list[GoldExample], dest: Path):
            for ex in examples:
                pid = lexical.mine_hard_negative(
                    index, by_id, ex.question, ex.answers, cfg.mining.pool_size
                )
                ex.negative_passage_ids = [pid] if pid else []
            write_gold(examples, dest)

        gold_train = load_gold(cfg.paths.gold_train)
        mine_gold(gold_train, out / "gold_train_negs.jsonl")
        artifacts["gold_train_negs"] = out / "gold_train_negs.jsonl"

        for label in ("mixed", "uncond_train"):
            examples = load_synthetic(out / f"{label}.jsonl")
            as_gold = [
                GoldExample(
                    question=ex.question,
                    answers=[ex.answer],
                    positive_passage_id=ex.passage_id,
                    negative_passage_ids=[],
                )
                for ex in examples
            ]
            mine_gold(as_gold, out / f"{label}_negs.jsonl")
            artifacts[f"{label}_negs"] = out / f"{label}_negs.jsonl"
        return artifacts

    return StageSpec(
        name="mine-negatives",
        command="mine-negatives",
        inputs={
            "index": (out / "index.json", "index"),
            "gold_train": (cfg.paths.gold_train, "(provide gold data)"),
            "mixed": (out / "mixed.jsonl", "mix"),
            "uncond_train": (out / "uncond_train.jsonl", "mix"),
            "passages": (out / "passages.jsonl", "ingest"),
        },
        run=run,
    )


def _evaluate_shared(cfg: PipelineConfig):
    vocab = _load_vocab(cfg)
    passages, _by_id = _load_corpus(cfg)
    mentions_by_pid = {
        pid: filter_by_type(ms, DEFAULT_ALLOWED_TYPES)
        for pid, ms in _load_mentions(cfg).items()
    }
    gold_train = load_gold(cfg.paths.gold_train, qid_prefix="t")
    gold_test = load_gold(cfg.paths.gold_test)
    split = build_overlap_split(gold_train, gold_test, cfg.corpus.dup_threshold)
    sample = _attention_sample(cfg, passages)
    return vocab, passages, mentions_by_pid, gold_test, split, sample


def stage_eval(cfg: PipelineConfig, seed: int, tag: str, checkpoint: Path) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        vocab, passages, mentions_by_pid, gold_test, split, sample = _evaluate_shared(cfg)
        model = load_checkpoint(checkpoint)
        report, summaries, runs = evalh.evaluate_model(
            model, tag, passages, gold_test, vocab, split, cfg.eval.ks,
            mentions_by_pid, sample, workers=cfg.workers,
        )
        report_path = out / f"eval_{tag}.json"
        evalh.write_report_json(report_path, report.to_dict())
        run_path = out / f"run_{tag}.trec"
        lexical.write_trec_run(
            [runs[ex.qid] for ex in gold_test], run_path, tag=tag
        )
        return {"report": report_path, "run": run_path}

    return StageSpec(
        name=f"eval:{tag}",
        command="eval",
        inputs={
            "checkpoint": (checkpoint, "train"),
            "passages": (out / "passages.jsonl", "ingest"),
            "vocab": (out / "vocab.txt", "train-vocab"),
            "mentions": (out / "mentions.jsonl", "ner"),
            "gold_test": (cfg.paths.gold_test, "(provide gold data)"),
        },
        run=run,
    )


def stage_compare(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        vocab, passages, mentions_by_pid, gold_test, split, sample = _evaluate_shared(cfg)
        tagged = [
            (tag, load_checkpoint(out / f"model_{tag}.ckpt")) for tag in MODEL_TAGS
        ]
        comparison, dumps, runs_by_tag = evalh.compare_models(
            tagged, passages, gold_test, vocab, split, cfg.eval.ks,
            mentions_by_pid, sample, workers=cfg.workers,
        )
        artifacts: dict[str, Path] = {}
        evalh.write_report_json(out / "report.json", comparison)
        evalh.write_report_csv(out / "report.csv", comparison)
        artifacts["report_json"] = out / "report.json"
        artifacts["report_csv"] = out / "report.csv"
        for tag in MODEL_TAGS:
            attn.write_attention_report(out / f"attention_report_{tag}.json", dumps[tag])
            attn.write_heatmap_csv(
                out / f"heatmap_{tag}.csv", [s.profile for s in dumps[tag]]
            )
            lexical.write_trec_run(
                [runs_by_tag[tag][ex.qid] for ex in gold_test],
                out / f"run_{tag}.trec",
                tag=tag,
            )
            artifacts[f"attention_report_{tag}"] = out / f"attention_report_{tag}.json"
            artifacts[f"heatmap_{tag}"] = out / f"heatmap_{tag}.csv"
            artifacts[f"run_{tag}"] = out / f"run_{tag}.trec"
        return artifacts

    inputs = {
        "passages": (out / "passages.jsonl", "ingest"),
        "vocab": (out / "vocab.txt", "train-vocab"),
        "mentions": (out / "mentions.jsonl", "ner"),
        "gold_test": (cfg.paths.gold_test, "(provide gold data)"),
    }
    for tag in MODEL_TAGS:
        inputs[f"model_{tag}"] = (out / f"model_{tag}.ckpt", "train")
    return StageSpec(name="compare", command="compare", inputs=inputs, run=run)


def stage_emit_plots(cfg: PipelineConfig, seed: int) -> StageSpec:
    out = _out(cfg)

    def run() -> dict[str, Path]:
        plots = out / "plots"
        plots.mkdir(parents=True, exist_ok=True)
        comparison = json.loads((out / "report.json").read_text(encoding="utf-8"))

        acc_path = plots / "accuracy_vs_k.csv"
        with open(acc_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "subset", "k", "accuracy"])
            for tag in comparison["model_order"]:
                tables = comparison["models"][tag]["accuracies"]
                for subset in sorted(tables):
                    for k in sorted(tables[subset], key=int):
                        writer.writerow([tag, subset, k, repr(tables[subset][k])])

        hist_path = plots / "entropy_hist.csv"
        gap_path = plots / "first_vs_rest.csv"
        with open(hist_path, "w", encoding="utf-8", newline="") as hist_fh, open(
            gap_path, "w", encoding="utf-8", newline=""
        ) as gap_fh:
            hist = csv.writer(hist_fh)
            hist.writerow(["model", "bin_lo", "bin_hi", "count"])
            gap = csv.writer(gap_fh)
            gap.writerow(["model", "mean_first_sentence", "mean_rest"])
            for tag in comparison["model_order"]:
                report = json.loads(
                    (out / f"attention_report_{tag}.json").read_text(encoding="utf-8")
                )
                entropies = [p["entropy"] for p in report["passages"]]
                if entropies:
                    lo, hi = min(entropies), max(entropies)
                    if lo == hi:
                        hi = lo + 1.0
                    width = (hi - lo) / 20
                    counts = [0] * 20
                    for e in entropies:
                        idx = min(int((e - lo) / width), 19)
                        counts[idx] += 1
                    for i, count in enumerate(counts):
                        hist.writerow(
                            [tag, repr(lo + i * width), repr(lo + (i + 1) * width), count]
                        )
                agg = report["aggregate"]
                gap.writerow(
                    [
                        tag,
                        repr(agg["mean_first_sentence_attention"]),
                        repr(agg["mean_rest_attention"]),
                    ]
                )
        return {
            "accuracy_vs_k": acc_path,
            "entropy_hist": hist_path,
            "first_vs_rest": gap_path,
        }

    inputs = {"report_json": (out / "report.json", "compare")}
    for tag in MODEL_TAGS:
        inputs[f"attention_report_{tag}"] = (out / f"attention_report_{tag}.json", "compare")
    return StageSpec(name="emit-plots", command="emit-plots", inputs=inputs, run=run)


# ---------------------------------------------------------------------------
# Full chain
# ---------------------------------------------------------------------------

def pipeline_stages(cfg: PipelineConfig, seed: int) -> list[StageSpec]:
    out = _out(cfg)
    return [
        stage_ingest(cfg, seed),
        stage_train_vocab(cfg, seed),
        stage_ner(cfg, seed),
        stage_index(cfg, seed),
        stage_train(
            cfg, seed, "baseline", cfg.paths.gold_train,
            finetune_producer="(provide gold data)",
        ),
        stage_probe_attention(cfg, seed),
        stage_generate(cfg, seed),
        stage_filter(cfg, seed),
        stage_mix(cfg, seed),
        stage_mine_negatives(cfg, seed),
        stage_train(
            cfg, seed, "uncond", out / "gold_train_negs.jsonl",
            pretrain_path=out / "uncond_train_negs.jsonl",
        ),
        stage_train(
            cfg, seed, "mixed", out / "gold_train_negs.jsonl",
            pretrain_path=out / "mixed_negs.jsonl",
        ),
        stage_compare(cfg, seed),
        stage_emit_plots(cfg, seed),
    ]


def run_pipeline(
    cfg: PipelineConfig, seed: int, log: Callable[[str], None] = print
) -> None:
    """Execute the full chain, skipping stages whose artifacts are current."""
    for spec in pipeline_stages(cfg, seed):
        if stage_is_current(cfg, seed, spec):
            log(f"[skip] {spec.name} (up to date)")
            continue
        entry = execute_stage(cfg, seed, spec)
        log(f"[done] {spec.name} ({entry['wall_time_s']}s)")
