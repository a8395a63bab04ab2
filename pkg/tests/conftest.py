"""Shared fixtures: a tiny encoder stack and a miniature pipeline workspace."""

from __future__ import annotations

from pathlib import Path

import pytest
import yaml

from attnaug.config import DEFAULT_CONFIG_TEXT, load_config
from attnaug.corpus import Passage
from attnaug.encoder import EncoderConfig, init_model
from attnaug.pipeline import run_pipeline
from attnaug.tokenizer import train_vocab
from attnaug.toyworld import ToyWorldConfig, build_toy_world

try:
    from hypothesis import settings

    settings.register_profile("suite", max_examples=50, deadline=None)
    settings.load_profile("suite")
except ImportError:
    pass


SAMPLE_TEXTS = [
    "Marie Curie discovered polonium in 1898. The discovery happened in Paris. "
    "Pierre Curie joined the work on radium later that year.",
    "The Eiffel Tower was completed in 1889. Gustave Eiffel led the project "
    "near the Seine. Visitors climbed it during the World Fair.",
    "Ada Lovelace wrote the first algorithm. Charles Babbage designed the "
    "Analytical Engine in London. Her notes were published in 1843.",
    "Mount Kenya rises above the plains. Local guides mapped the glacier "
    "routes in 1929. The peak draws climbers from Nairobi every season.",
    "The Rosetta Stone unlocked hieroglyphs. Jean Champollion announced the "
    "decipherment in 1822. The stone sits in the British Museum today.",
    "Lake Baikal holds a fifth of the fresh water. Soviet surveyors charted "
    "its depth in 1959. The lake freezes solid by January.",
    "The Trans Siberian Railway spans two continents. Workers finished the "
    "line in 1916. Trains leave Moscow for Vladivostok daily.",
    "Florence Nightingale reformed hospital care. She founded a nursing "
    "school in London in 1860. Her statistical charts changed public health.",
]


def make_passage(pid: str, text: str, position: int = 0) -> Passage:
    return Passage(
        id=pid,
        doc_id=pid.split(":")[0],
        title=text.split(" ")[0],
        text=text,
        word_count=len(text.split()),
        position_index=position,
    )


@pytest.fixture(scope="session")
def sample_passages() -> list[Passage]:
    return [make_passage(f"d{i:02d}:0000", text) for i, text in enumerate(SAMPLE_TEXTS)]


@pytest.fixture(scope="session")
def vocab(sample_passages):
    questions = [
        "who discovered polonium in 1898",
        "who led the project near the seine",
        "who wrote the first algorithm",
        "what unlocked hieroglyphs",
    ]
    return train_vocab([p.text for p in sample_passages] + questions, 220)


@pytest.fixture(scope="session")
def tiny_model(vocab):
    cfg = EncoderConfig(
        layers=1, heads=2, model_dim=8, ffn_dim=16, max_len=48,
        vocab_size=len(vocab), seed=3,
    )
    return init_model(cfg)


# ---------------------------------------------------------------------------
# Miniature pipeline workspace
# ---------------------------------------------------------------------------

def write_env(root: Path, seed: int = 0, **overrides) -> Path:
    """Write a small toy corpus and a fast config under ``root``.

    Returns the config path.  ``overrides`` patch top-level config sections
    (dicts merge one level deep).
    """
    root.mkdir(parents=True, exist_ok=True)
    world = build_toy_world(
        ToyWorldConfig(docs=30, train_questions=16, test_questions=16, seed=seed)
    )
    world.write(root / "data")
    cfg = yaml.safe_load(DEFAULT_CONFIG_TEXT)
    cfg["seed"] = seed
    cfg["vocab"] = {"size": 512, "max_len": 64}
    cfg["encoder"] = {"layers": 1, "heads": 2, "model_dim": 16, "ffn_dim": 32}
    cfg["train"]["pretrain"]["epochs"] = 2
    cfg["train"]["finetune"]["epochs"] = 2
    cfg["generation"]["lowest_k"] = 2
    cfg["generation"]["unconditioned_per_passage"] = 5
    cfg["filtering"]["target_size"] = 30
    cfg["eval"]["attention_passages"] = 30
    cfg["mining"]["pool_size"] = 10
    for key, value in overrides.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    return config_path


@pytest.fixture(scope="session")
def ran_env(tmp_path_factory) -> Path:
    """A completed miniature pipeline run; treat as read-only."""
    root = tmp_path_factory.mktemp("ranenv")
    config_path = write_env(root)
    cfg = load_config(config_path)
    run_pipeline(cfg, cfg.seed, log=lambda msg: None)
    return root
