import json
import math
import random

import numpy as np
import pytest

from attnaug import filtering as fl
from attnaug.encoder import encode as enc_encode
from attnaug.errors import ProtocolError
from attnaug.qgen import SyntheticExample
from attnaug.tokenizer import encode as tokenize
from tests.conftest import make_passage


def _ex(question, answer, pid, provenance="conditioned"):
    return SyntheticExample(
        question=question, answer=answer, passage_id=pid,
        conditioning_entity=None, provenance=provenance,
    )


@pytest.fixture()
def passage_map(sample_passages):
    return {p.id: p for p in sample_passages}


def test_filter_config_validation():
    with pytest.raises(ValueError):
        fl.FilterConfig(mrc_threshold=1.5)
    with pytest.raises(ValueError):
        fl.FilterConfig(hardness_mode="nope")
    with pytest.raises(ValueError):
        fl.FilterConfig(hardness_mode="percentile", hardness_threshold=101)
    with pytest.raises(ValueError):
        fl.FilterConfig(mix_ratio=-0.1)
    with pytest.raises(ValueError):
        fl.FilterConfig(target_size=-1)
    # absolute thresholds live on the score axis, not in [0, 100]
    fl.FilterConfig(hardness_mode="absolute", hardness_threshold=-3.5)


def test_lexical_reader_hand_values():
    reader = fl.LexicalReader()
    text = "Marie Curie discovered polonium in 1898."
    # all question content words present -> v=1 -> 2*1/2 = 1
    assert reader.score("who discovered polonium", text, "Marie Curie") == 1.0
    # {discovered, radium}: v=1/2 -> 2*(1/2)/(3/2) = 2/3
    assert reader.score("who discovered radium", text, "Marie Curie") == pytest.approx(2 / 3)
    # answer absent -> 0 regardless of question overlap
    assert reader.score("who discovered polonium", text, "Pierre") == 0.0
    # no content words in the question -> 0
    assert reader.score("who is the it", text, "Marie Curie") == 0.0


def test_mrc_filter_threshold_and_score_writing(passage_map, sample_passages):
    pid = sample_passages[0].id
    good = _ex("who discovered polonium", "Marie Curie", pid)
    weak = _ex("who discovered radium quietly yesterday", "Marie Curie", pid)
    bad = _ex("who discovered polonium", "Newton", pid)
    kept = fl.mrc_consistency_filter([good, weak, bad], passage_map, mrc_threshold=0.7)
    assert kept == [good]
    # scores land on every input, kept or not
    assert good.mrc_score == 1.0
    assert weak.mrc_score is not None and 0 < weak.mrc_score < 0.7
    assert bad.mrc_score == 0.0

    with pytest.raises(ValueError):
        fl.mrc_consistency_filter([_ex("q", "a", "ghost")], passage_map, 0.5)


def test_mrc_filter_nesting(passage_map, sample_passages):
    rng = random.Random(5)
    pids = [p.id for p in sample_passages]
    vocab_words = ["discovered", "polonium", "tower", "notes", "zzz", "unknown"]
    examples = [
        _ex(" ".join(rng.choice(vocab_words) for _ in range(3)),
            rng.choice(["Marie Curie", "polonium", "ghost answer"]),
            rng.choice(pids))
        for _ in range(120)
    ]
    thresholds = [i / 9 for i in range(10)]
    previous = None
    for t in sorted(thresholds, reverse=True):
        kept = {id(e) for e in fl.mrc_consistency_filter(examples, passage_map, t)}
        if previous is not None:
            assert previous <= kept
        previous = kept


def test_score_retrieval_matches_single_encoding(tiny_model, vocab, passage_map, sample_passages):
    examples = [
        _ex("who discovered polonium", "Marie Curie", sample_passages[0].id),
        _ex("who led the project", "Gustave Eiffel", sample_passages[1].id),
        _ex("who wrote the first algorithm", "Ada Lovelace", sample_passages[2].id),
    ]
    scores = fl.score_retrieval(examples, tiny_model, vocab, passage_map)
    for ex, got in zip(examples, scores):
        q = enc_encode(tiny_model, "query",
                       tokenize(vocab, ex.question, tiny_model.config.max_len)).embedding
        p = enc_encode(tiny_model, "passage",
                       tokenize(vocab, passage_map[ex.passage_id].text,
                                tiny_model.config.max_len)).embedding
        assert got == pytest.approx(float(q @ p), abs=1e-10)
    with pytest.raises(ValueError):
        fl.score_retrieval([_ex("q", "a", "ghost")], tiny_model, vocab, passage_map)


def _scored_examples(tiny_model, vocab, passage_map, sample_passages, n=40):
    rng = random.Random(11)
    pids = [p.id for p in sample_passages]
    qwords = ["discovered", "polonium", "tower", "glacier", "railway", "notes", "who"]
    return [
        _ex(" ".join(rng.choice(qwords) for _ in range(rng.randint(2, 5))),
            "x", rng.choice(pids))
        for _ in range(n)
    ]


def test_hardness_percentile_matches_oracle(tiny_model, vocab, passage_map, sample_passages):
    examples = _scored_examples(tiny_model, vocab, passage_map, sample_passages)
    cfg = fl.FilterConfig(hardness_mode="percentile", hardness_threshold=40.0)
    kept = fl.hardness_filter(examples, tiny_model, vocab, passage_map, cfg)
    n = len(examples)
    m = math.floor(0.4 * n)
    assert len(kept) == m
    scores = [ex.retrieval_score for ex in examples]
    expect = set(sorted(range(n), key=lambda i: (scores[i], i))[:m])
    assert [examples[i] for i in sorted(expect)] == kept
    # edge percentiles
    assert fl.hardness_filter(
        examples, tiny_model, vocab, passage_map,
        fl.FilterConfig(hardness_mode="percentile", hardness_threshold=0.0),
    ) == []
    assert len(fl.hardness_filter(
        examples, tiny_model, vocab, passage_map,
        fl.FilterConfig(hardness_mode="percentile", hardness_threshold=100.0),
    )) == n
    assert fl.hardness_filter([], tiny_model, vocab, passage_map, cfg) == []


def test_hardness_absolute_mode(tiny_model, vocab, passage_map, sample_passages):
    examples = _scored_examples(tiny_model, vocab, passage_map, sample_passages, n=12)
    fl.score_retrieval(examples, tiny_model, vocab, passage_map)
    cut = float(np.median([
        fl.score_retrieval([e], tiny_model, vocab, passage_map)[0] for e in examples
    ]))
    cfg = fl.FilterConfig(hardness_mode="absolute", hardness_threshold=cut)
    kept = fl.hardness_filter(examples, tiny_model, vocab, passage_map, cfg)
    assert kept == [e for e in examples if e.retrieval_score <= cut]


def test_hardness_nesting_over_thresholds(tiny_model, vocab, passage_map, sample_passages):
    examples = _scored_examples(tiny_model, vocab, passage_map, sample_passages)
    previous = None
    for p in range(0, 101, 10):
        cfg = fl.FilterConfig(hardness_mode="percentile", hardness_threshold=float(p))
        kept = {id(e) for e in fl.hardness_filter(
            examples, tiny_model, vocab, passage_map, cfg)}
        if previous is not None:
            assert previous <= kept
        previous = kept


def test_mix_datasets_arithmetic():
    cond = [_ex(f"c{i}", "a", "p") for i in range(600)]
    unc = [_ex(f"u{i}", "a", "p", provenance="unconditioned") for i in range(600)]
    for ratio, target, expect_cond in [
        (0.5, 1000, 500), (0.3, 10, 3), (0.25, 2, 1), (0.5, 3, 2),
        (0.0, 7, 0), (1.0, 7, 7), (0.333, 9, 3),
    ]:
        mixed = fl.mix_datasets(cond, unc, ratio, target, seed=3)
        assert len(mixed) == target
        got_cond = sum(1 for e in mixed if e.provenance == "conditioned")
        assert got_cond == expect_cond, (ratio, target)
        # without replacement: no duplicates
        assert len({id(e) for e in mixed}) == target


def test_mix_datasets_determinism_and_shuffle():
    cond = [_ex(f"c{i}", "a", "p") for i in range(50)]
    unc = [_ex(f"u{i}", "a", "p", provenance="unconditioned") for i in range(50)]
    a = fl.mix_datasets(cond, unc, 0.5, 40, seed=9)
    b = fl.mix_datasets(cond, unc, 0.5, 40, seed=9)
    assert [e.question for e in a] == [e.question for e in b]
    c = fl.mix_datasets(cond, unc, 0.5, 40, seed=10)
    assert [e.question for e in a] != [e.question for e in c]
    # conditioned and unconditioned interleave rather than concatenate
    provs = [e.provenance for e in a]
    assert provs != sorted(provs) and provs != sorted(provs, reverse=True)


def test_mix_datasets_pool_errors():
    cond = [_ex("c", "a", "p")]
    unc = [_ex("u", "a", "p", provenance="unconditioned")] * 5
    with pytest.raises(ValueError) as exc:
        fl.mix_datasets(cond, unc, 0.9, 10, seed=0)
    assert "conditioned pool" in str(exc.value)
    with pytest.raises(ValueError) as exc:
        fl.mix_datasets(cond * 20, unc, 0.1, 10, seed=0)
    assert "unconditioned pool" in str(exc.value)


def test_histogram_shapes():
    h = fl._histogram([0.0, 0.5, 1.0])
    assert len(h["bin_edges"]) == 21
    assert sum(h["counts"]) == 3
    assert fl._histogram([]) == {"bin_edges": [], "counts": []}
    degenerate = fl._histogram([2.0, 2.0])
    assert degenerate["bin_edges"][0] == 2.0
    assert degenerate["bin_edges"][-1] == 3.0
    assert sum(degenerate["counts"]) == 2


def test_run_filter_pipeline_and_report(tmp_path, tiny_model, vocab, passage_map, sample_passages):
    pid = sample_passages[0].id
    examples = [
        _ex("who discovered polonium", "Marie Curie", pid),
        _ex("who discovered polonium in 1898", "polonium", pid),
        _ex("what about quarks", "Newton", pid),
    ]
    cfg = fl.FilterConfig(mrc_threshold=0.5, hardness_mode="percentile",
                          hardness_threshold=50.0)
    kept, report = fl.run_filter_pipeline(examples, passage_map, tiny_model, vocab, cfg)
    assert report["input"] == 3
    assert report["stage_order"] == ["mrc", "hardness"]
    mrc_stage, hard_stage = report["stages"]
    assert mrc_stage["scored"] == 3
    assert mrc_stage["retained"] == 2
    assert hard_stage["scored"] == 2
    assert hard_stage["retained"] == len(kept) == 1
    path = tmp_path / "report.json"
    fl.write_filter_report(path, report)
    assert json.loads(path.read_text(encoding="utf-8")) == report


class _StubTransport:
    def __init__(self, response):
        self.response = response

    def request(self, payload):
        return self.response


def test_external_reader():
    reader = fl.ExternalReader(_StubTransport({"score": 0.75}))
    assert reader.score("q", "p", "a") == 0.75
    for bad in ({}, {"score": "high"}, {"score": True}):
        with pytest.raises(ProtocolError):
            fl.ExternalReader(_StubTransport(bad)).score("q", "p", "a")
