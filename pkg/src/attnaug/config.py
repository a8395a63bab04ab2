"""Pipeline configuration: one YAML file, validated in full before any work.

Validation collects every violation instead of stopping at the first, so a
bad config surfaces all its problems in one run.  ``write_default_config``
emits a fully commented config that runs the bundled toy experiment as-is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

DEFAULT_CONFIG_TEXT = """\
# attnaug pipeline configuration.
# Paths are resolved relative to this file's directory.

seed: 0            # master seed; every stage derives its own from it
workers: 1         # threads for encoding/scoring stages

paths:
  documents: data/documents.jsonl    # input corpus, one document per line
  gold_train: data/gold_train.jsonl  # training questions with answers
  gold_test: data/gold_test.jsonl    # held-out questions
  gazetteer: data/gazetteer.json     # entity surface -> type map
  output_dir: out                    # every artifact lands here

corpus:
  block_size: 100        # words per passage when splitting documents
  dup_threshold: 0.9     # token-Jaccard cutoff for near-duplicate questions

vocab:
  size: 1024             # word-piece inventory, reserved tokens included
  max_len: 96            # token cap per sequence, CLS and SEP included

encoder:
  layers: 2
  heads: 2
  model_dim: 32
  ffn_dim: 64
  dtype: float64         # float32 runs faster but skips the compiled kernels
  tie_encoders: false    # one weight set for both sides when true

train:
  pretrain:              # budget for synthetic-data pretraining
    batch_size: 16
    learning_rate: 0.005
    epochs: 20
    optimizer: adam      # or: sgd
    hard_negatives_per_example: 0
  finetune:              # budget for gold-data training (also the baseline)
    batch_size: 16
    learning_rate: 0.005
    epochs: 15
    optimizer: adam
    hard_negatives_per_example: 1

generation:
  lowest_k: 3                  # condition on this many least-attended entities per passage
  unconditioned_per_passage: 5 # seeded draws per passage for the unconditioned pool
  normalized_attention: false  # rank entities by raw mass; true divides by span length
  backend: template            # or: external (spawns backend_argv)
  backend_argv: []
  sampling:
    top_p: 0.95
    top_k: 50
    temperature: 1.0

filtering:
  mrc_threshold: 0.5         # reader confidence needed to keep an example
  hardness_mode: percentile  # or: absolute
  hardness_threshold: 50.0   # percentile of the batch (or absolute score cap)
  mix_ratio: 0.5             # conditioned fraction of the mixed set
  target_size: 400           # size of each pretraining set

mining:
  pool_size: 50              # BM25 candidates scanned per question

eval:
  ks: [1, 5]                 # accuracy reported at these cutoffs
  attention_passages: 200    # passages profiled for attention statistics
"""


@dataclass
class PathsConfig:
    documents: Path = Path("data/documents.jsonl")
    gold_train: Path = Path("data/gold_train.jsonl")
    gold_test: Path = Path("data/gold_test.jsonl")
    gazetteer: Path = Path("data/gazetteer.json")
    output_dir: Path = Path("out")


@dataclass
class CorpusConfig:
    block_size: int = 100
    dup_threshold: float = 0.9


@dataclass
class VocabConfig:
    size: int = 1024
    max_len: int = 96


@dataclass
class EncoderSection:
    layers: int = 2
    heads: int = 2
    model_dim: int = 32
    ffn_dim: int = 64
    dtype: str = "float64"
    tie_encoders: bool = False


@dataclass
class PhaseConfig:
    batch_size: int = 16
    learning_rate: float = 0.005
    epochs: int = 20
    optimizer: str = "adam"
    hard_negatives_per_example: int = 0


@dataclass
class TrainSection:
    pretrain: PhaseConfig = field(default_factory=PhaseConfig)
    finetune: PhaseConfig = field(
        default_factory=lambda: PhaseConfig(epochs=15, hard_negatives_per_example=1)
    )


@dataclass
class SamplingSection:
    top_p: float = 0.95
    top_k: int = 50
    temperature: float = 1.0


@dataclass
class GenerationConfig:
    lowest_k: int = 3
    unconditioned_per_passage: int = 5
    normalized_attention: bool = False
    backend: str = "template"
    backend_argv: list[str] = field(default_factory=list)
    sampling: SamplingSection = field(default_factory=SamplingSection)


@dataclass
class FilteringSection:
    mrc_threshold: float = 0.5
    hardness_mode: str = "percentile"
    hardness_threshold: float = 50.0
    mix_ratio: float = 0.5
    target_size: int = 400


@dataclass
class MiningConfig:
    pool_size: int = 50


@dataclass
class EvalConfig:
    ks: list[int] = field(default_factory=lambda: [1, 5])
    attention_passages: int = 200


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    vocab: VocabConfig = field(default_factory=VocabConfig)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    train: TrainSection = field(default_factory=TrainSection)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    filtering: FilteringSection = field(default_factory=FilteringSection)
    mining: MiningConfig = field(default_factory=MiningConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        def conv(obj):
            if isinstance(obj, dict):
                return {k: conv(v) for k, v in obj.items()}
            if isinstance(obj, list):
                return [conv(v) for v in obj]
            if isinstance(obj, Path):
                return str(obj)
            return obj

        return conv(asdict(self))


_SECTION_TYPES = {
    "paths": PathsConfig,
    "corpus": CorpusConfig,
    "vocab": VocabConfig,
    "encoder": EncoderSection,
    "generation": GenerationConfig,
    "filtering": FilteringSection,
    "mining": MiningConfig,
    "eval": EvalConfig,
}


def _fill(target, data: dict, where: str, violations: list[str]):
    """Assign dict keys onto a dataclass, reporting unknown keys and bad types."""
    fields = {f.name: f for f in target.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    for key, value in data.items():
        if key not in fields:
            violations.append(f"{where}: unknown key {key!r}")
            continue
        current = getattr(target, key)
        if isinstance(current, Path):
            if not isinstance(value, str) or not value:
                violations.append(f"{where}.{key}: expected a path string")
            else:
                setattr(target, key, Path(value))
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                violations.append(f"{where}.{key}: expected true/false")
            else:
                setattr(target, key, value)
        elif isinstance(current, int):
            if not isinstance(value, int) or isinstance(value, bool):
                violations.append(f"{where}.{key}: expected an integer")
            else:
                setattr(target, key, value)
        elif isinstance(current, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                violations.append(f"{where}.{key}: expected a number")
            else:
                setattr(target, key, float(value))
        elif isinstance(current, str):
            if not isinstance(value, str):
                violations.append(f"{where}.{key}: expected a string")
            else:
                setattr(target, key, value)
        elif isinstance(current, list):
            if not isinstance(value, list):
                violations.append(f"{where}.{key}: expected a list")
            else:
                setattr(target, key, value)
        else:  # nested dataclass
            if not isinstance(value, dict):
                violations.append(f"{where}.{key}: expected a mapping")
            else:
                _fill(current, value, f"{where}.{key}", violations)


def _check_ranges(cfg: PipelineConfig, violations: list[str]) -> None:
    if cfg.workers < 1:
        violations.append("workers: must be >= 1")
    if cfg.corpus.block_size < 1:
        violations.append("corpus.block_size: must be >= 1")
    if not (0.0 < cfg.corpus.dup_threshold <= 1.0):
        violations.append("corpus.dup_threshold: must be in (0, 1]")
    if cfg.vocab.size < 8:
        violations.append("vocab.size: must be >= 8")
    if cfg.vocab.max_len < 4:
        violations.append("vocab.max_len: must be >= 4")
    enc = cfg.encoder
    if enc.layers < 1 or enc.heads < 1 or enc.model_dim < 1 or enc.ffn_dim < 1:
        violations.append("encoder: layers/heads/model_dim/ffn_dim must be >= 1")
    elif enc.model_dim % enc.heads != 0:
        violations.append(
            f"encoder.model_dim: {enc.model_dim} not divisible by heads {enc.heads}"
        )
    if enc.dtype not in ("float64", "float32"):
        violations.append(f"encoder.dtype: must be float64 or float32, got {enc.dtype!r}")
    for phase_name in ("pretrain", "finetune"):
        phase = getattr(cfg.train, phase_name)
        where = f"train.{phase_name}"
        if phase.batch_size < 1:
            violations.append(f"{where}.batch_size: must be >= 1")
        if phase.learning_rate <= 0:
            violations.append(f"{where}.learning_rate: must be > 0")
        if phase.epochs < 0:
            violations.append(f"{where}.epochs: must be >= 0")
        if phase.optimizer not in ("sgd", "adam"):
            violations.append(f"{where}.optimizer: must be sgd or adam")
        if phase.hard_negatives_per_example < 0:
            violations.append(f"{where}.hard_negatives_per_example: must be >= 0")
    gen = cfg.generation
    if gen.lowest_k < 1:
        violations.append("generation.lowest_k: must be >= 1")
    if gen.unconditioned_per_passage < 0:
        violations.append("generation.unconditioned_per_passage: must be >= 0")
    if gen.backend not in ("template", "external"):
        violations.append(f"generation.backend: must be template or external, got {gen.backend!r}")
    if gen.backend == "external" and not gen.backend_argv:
        violations.append("generation.backend_argv: required when backend is external")
    if not all(isinstance(a, str) for a in gen.backend_argv):
        violations.append("generation.backend_argv: must be a list of strings")
    s = gen.sampling
    if not (0.0 < s.top_p <= 1.0):
        violations.append("generation.sampling.top_p: must be in (0, 1]")
    if s.top_k < 0:
        violations.append("generation.sampling.top_k: must be >= 0")
    if s.temperature <= 0:
        violations.append("generation.sampling.temperature: must be > 0")
    f = cfg.filtering
    if not (0.0 <= f.mrc_threshold <= 1.0):
        violations.append("filtering.mrc_threshold: must be in [0, 1]")
    if f.hardness_mode not in ("absolute", "percentile"):
        violations.append("filtering.hardness_mode: must be absolute or percentile")
    elif f.hardness_mode == "percentile" and not (0.0 <= f.hardness_threshold <= 100.0):
        violations.append("filtering.hardness_threshold: percentile must be in [0, 100]")
    if not (0.0 <= f.mix_ratio <= 1.0):
        violations.append("filtering.mix_ratio: must be in [0, 1]")
    if f.target_size < 1:
        violations.append("filtering.target_size: must be >= 1")
    if cfg.mining.pool_size < 1:
        violations.append("mining.pool_size: must be >= 1")
    if not cfg.eval.ks or not all(isinstance(k, int) and k >= 1 for k in cfg.eval.ks):
        violations.append("eval.ks: must be a nonempty list of integers >= 1")
    if cfg.eval.attention_passages < 1:
        violations.append("eval.attention_passages: must be >= 1")


def load_config(path: str | Path, check_paths: bool = True) -> PipelineConfig:
    """Parse and validate; raises ConfigError listing every violation.

    Relative paths in the file resolve against the file's directory.
    ``check_paths=False`` skips input-existence checks (used by commands
    that create those inputs).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML: {exc}"]) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])

    cfg = PipelineConfig()
    violations: list[str] = []
    for key, value in data.items():
        if key == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                violations.append("seed: expected an integer")
            else:
                cfg.seed = value
        elif key == "workers":
            if not isinstance(value, int) or isinstance(value, bool):
                violations.append("workers: expected an integer")
            else:
                cfg.workers = value
        elif key == "train":
            if not isinstance(value, dict):
                violations.append("train: expected a mapping")
            else:
                for phase_name, phase_data in value.items():
                    if phase_name not in ("pretrain", "finetune"):
                        violations.append(f"train: unknown key {phase_name!r}")
                    elif not isinstance(phase_data, dict):
                        violations.append(f"train.{phase_name}: expected a mapping")
                    else:
                        _fill(getattr(cfg.train, phase_name), phase_data,
                              f"train.{phase_name}", violations)
        elif key in _SECTION_TYPES:
            if not isinstance(value, dict):
                violations.append(f"{key}: expected a mapping")
            else:
                _fill(getattr(cfg, key), value, key, violations)
        else:
            violations.append(f"unknown top-level key {key!r}")

    if not violations:
        _check_ranges(cfg, violations)

    base = path.parent
    for name in ("documents", "gold_train", "gold_test", "gazetteer", "output_dir"):
        p = getattr(cfg.paths, name)
        if not p.is_absolute():
            setattr(cfg.paths, name, base / p)
    if check_paths:
        for name in ("documents", "gold_train", "gold_test", "gazetteer"):
            p = getattr(cfg.paths, name)
            if not p.exists():
                violations.append(f"paths.{name}: file not found: {p}")

    if violations:
        raise ConfigError(violations)
    return cfg


def write_default_config(path: str | Path) -> None:
    Path(path).write_text(DEFAULT_CONFIG_TEXT, encoding="utf-8")
