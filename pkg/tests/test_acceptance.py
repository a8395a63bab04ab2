"""Acceptance gate: ten behavior checks, one verdict line each.

Every test ends in a single [PASS]/[FAIL] line naming the check, the
measured quantity, and its tolerance, so `pytest -v` reads as a checklist.
Oracles here are independent re-implementations (finite differences,
brute-force scoring, bare-regex token matching), not calls back into the
code under test.
"""

from __future__ import annotations

import gc
import json
import math
import random
import re
import shutil
import statistics
import subprocess
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
import yaml

from attnaug import attention as attn
from attnaug import cli
from attnaug import evalharness as ev
from attnaug import filtering as flt
from attnaug import lexical as lx
from attnaug import pipeline as pl
from attnaug.config import load_config
from attnaug.corpus import GoldExample
from attnaug.encoder import (
    BatchItem,
    EncoderConfig,
    encode,
    in_batch_loss_and_grads,
    init_model,
)
from attnaug.lexical import RankedList
from attnaug.ner import EntityMention
from attnaug.qgen import SyntheticExample, load_synthetic
from attnaug.tokenizer import encode as tokenize, train_vocab

from tests.conftest import make_passage, write_env

_POOL = (
    "river", "bridge", "winter", "garden", "museum", "harbor", "castle",
    "valley", "signal", "archive", "erbium", "quartz", "falcon", "meadow",
    "lantern", "orchard", "summit", "voyage", "cipher", "marble", "1898",
    "1916", "glacier", "engine",
)


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _pool_text(rng: random.Random, lo: int, hi: int) -> str:
    return " ".join(rng.choice(_POOL) for _ in range(rng.randint(lo, hi)))


# ---------------------------------------------------------------------------
# 1. analytic gradients vs central finite differences
# ---------------------------------------------------------------------------

def test_01_gradients_match_finite_differences():
    started = time.monotonic()
    rng = random.Random(11)
    texts = [_pool_text(rng, 2, 8) for _ in range(30)]
    vocab = train_vocab(texts, 64)
    cfg = EncoderConfig(
        layers=1, heads=2, model_dim=8, ffn_dim=16, max_len=12,
        vocab_size=len(vocab), seed=101, dtype="float64",
    )
    model = init_model(cfg)
    nrng = np.random.default_rng(13)
    eps = 1e-6

    def batch_of(n: int) -> list[BatchItem]:
        items = []
        for i in range(n):
            items.append(
                BatchItem(
                    q_tokens=tokenize(vocab, _pool_text(rng, 2, 6), cfg.max_len),
                    pos_tokens=tokenize(vocab, _pool_text(rng, 2, 8), cfg.max_len),
                    neg_tokens=(
                        [tokenize(vocab, _pool_text(rng, 2, 8), cfg.max_len)]
                        if i == 0 else []
                    ),
                )
            )
        return items

    max_rel = 0.0
    probes = 0
    for _ in range(20):
        batch = batch_of(3)

        def loss() -> float:
            value, _, _ = in_batch_loss_and_grads(model, batch)
            return value

        _, q_grads, p_grads = in_batch_loss_and_grads(model, batch)
        for params, grads in ((model.params_q, q_grads), (model.params_p, p_grads)):
            assert set(grads) == set(params)
            for name, arr in params.items():
                orig = arr.copy()
                flat = arr.reshape(-1)
                j = int(nrng.integers(flat.size))
                flat[j] = orig.reshape(-1)[j] + eps
                up = loss()
                flat[j] = orig.reshape(-1)[j] - eps
                down = loss()
                arr[...] = orig
                fd = (up - down) / (2.0 * eps)
                an = float(grads[name].reshape(-1)[j])
                max_rel = max(max_rel, abs(an - fd) / max(abs(an), abs(fd), 1e-4))

                direction = nrng.standard_normal(arr.shape)
                direction /= np.linalg.norm(direction)
                arr[...] = orig + eps * direction
                up = loss()
                arr[...] = orig - eps * direction
                down = loss()
                arr[...] = orig
                fd = (up - down) / (2.0 * eps)
                an = float((grads[name] * direction).sum())
                max_rel = max(max_rel, abs(an - fd) / max(abs(an), abs(fd), 1e-4))
                probes += 2
    wall = time.monotonic() - started
    _verdict(
        "gradient check",
        max_rel < 1e-4 and wall < 30.0,
        f"max relative error {max_rel:.3e} (tol 1e-4) over 20 batches, "
        f"{probes} coordinate/directional probes, {wall:.1f}s (budget 30s)",
    )


# ---------------------------------------------------------------------------
# 2. attention conservation on random passages
# ---------------------------------------------------------------------------

def test_02_attention_conservation(tiny_model, vocab):
    rng = random.Random(22)
    worst_row = 0.0
    worst_total = 0.0
    masses = 0
    for i in range(1000):
        n_words = rng.randint(3, 40)
        parts = []
        for _ in range(n_words):
            word = rng.choice(_POOL)
            if rng.random() < 0.25:
                word = word.capitalize()
            parts.append(word)
        text = " ".join(parts)
        tokens = tokenize(vocab, text, tiny_model.config.max_len)
        source = text if i % 2 == 0 else None
        profile = attn.extract_profile(tiny_model, tokens, f"p{i}", source_text=source)

        out = encode(tiny_model, "passage", tokens)
        for stack in out.attentions:
            deviation = float(np.abs(stack.sum(axis=-1) - 1.0).max())
            worst_row = max(worst_row, deviation)

        total = float(profile.word_attention.sum()) + profile.special_attention
        worst_total = max(worst_total, abs(total - 1.0))

        # brute force: re-aggregate the raw head-averaged row per word
        row = np.asarray(out.attentions[-1][:, 0, :].mean(axis=0), dtype=np.float64)
        brute = np.zeros(profile.covered_words, dtype=np.float64)
        for pos, w in enumerate(tokens.word_index):
            if w >= 0:
                brute[w] += row[pos]
        covered = profile.covered_words
        if covered >= 1:
            for _ in range(3):
                a = rng.randint(0, covered - 1)
                b = rng.randint(a + 1, min(a + 4, covered))
                mention = EntityMention(
                    surface=" ".join(profile.words[a:b]),
                    entity_type="OTHER",
                    char_span=(0, 1),
                    word_span=(a, b),
                )
                scored = attn.entity_attention(profile, [mention])
                assert len(scored) == 1
                assert scored[0].mass == float(brute[a:b].sum())
                masses += 1
    _verdict(
        "attention conservation",
        worst_row <= 1e-6 and worst_total <= 1e-6,
        f"1000 passages: max row-sum deviation {worst_row:.2e} (tol 1e-6), "
        f"max word+special deviation {worst_total:.2e} (tol 1e-6), "
        f"{masses} entity masses equal piece re-summation exactly",
    )


# ---------------------------------------------------------------------------
# 3. entropy identities
# ---------------------------------------------------------------------------

def _synthetic_profile(values) -> attn.AttentionProfile:
    vals = np.asarray(values, dtype=np.float64)
    n = vals.size
    return attn.AttentionProfile(
        passage_id="synthetic",
        words=[f"w{i}" for i in range(n)],
        piece_attention=np.concatenate(([0.08], vals, [0.02])),
        word_attention=vals.copy(),
        special_mask=[True] + [False] * n + [True],
        word_index=[-1] + list(range(n)) + [-1],
        total_words=n,
        truncated=False,
    )


def test_03_entropy_identities():
    worst_uniform = 0.0
    for n in (2, 8, 64):
        h = attn.attention_entropy(_synthetic_profile(np.full(n, 1.0 / n)))
        worst_uniform = max(worst_uniform, abs(h - math.log(n)))

    one_hot = np.zeros(16)
    one_hot[5] = 1.0
    h_onehot = attn.attention_entropy(_synthetic_profile(one_hot))

    rng = np.random.default_rng(33)
    bounds_ok = True
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        vals = rng.gamma(0.7, size=n)
        vals[rng.random(n) < 0.2] = 0.0
        if vals.sum() == 0.0:
            vals[0] = 1.0
        h = attn.attention_entropy(_synthetic_profile(vals))
        if not (0.0 <= h <= math.log(n) + 1e-12):
            bounds_ok = False
    _verdict(
        "entropy identities",
        worst_uniform < 1e-9 and h_onehot == 0.0 and bounds_ok,
        f"uniform n in (2, 8, 64) off ln n by {worst_uniform:.2e} (tol 1e-9), "
        f"one-hot entropy {h_onehot} (exact 0), "
        f"1000 random profiles inside [0, ln n] (+1e-12)",
    )


# ---------------------------------------------------------------------------
# 4. lexical scoring vs brute force
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _oracle_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _oracle_bm25(passages, query, pid, k1=0.9, b=0.4):
    toks = {p.id: _oracle_tokens(p.text) for p in passages}
    n = len(passages)
    avg = sum(len(t) for t in toks.values()) / n
    score = 0.0
    for term in _oracle_tokens(query):
        tf = toks[pid].count(term)
        if tf == 0:
            continue
        df = sum(1 for t in toks.values() if term in t)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len(toks[pid]) / avg))
    return score


def _oracle_tfidf(passages, query, pid):
    toks = {p.id: _oracle_tokens(p.text) for p in passages}
    n = len(passages)

    def weights(tokens):
        out = {}
        for term, tf in Counter(tokens).items():
            df = sum(1 for t in toks.values() if term in t)
            if df:
                out[term] = (1.0 + math.log(tf)) * math.log(n / df)
        return out

    wq = weights(_oracle_tokens(query))
    wd = weights(toks[pid])
    dot = sum(w * wd.get(t, 0.0) for t, w in wq.items())
    nq = math.sqrt(sum(w * w for w in wq.values()))
    nd = math.sqrt(sum(w * w for w in wd.values()))
    return dot / (nq * nd) if nq and nd else 0.0


def test_04_lexical_scoring_matches_brute_force():
    rng = random.Random(44)
    worst = 0.0
    searches = 0
    for _ in range(100):
        n = rng.randint(2, 20)
        passages = [
            make_passage(f"p{i:03d}:0000", _pool_text(rng, 3, 25)) for i in range(n)
        ]
        # duplicated texts force score ties in the rank comparison
        passages.append(make_passage("z0:0000", passages[0].text))
        index = lx.build_index(passages)
        query = _pool_text(rng, 1, 5)
        q_terms = _oracle_tokens(query)
        for p in passages:
            worst = max(worst, abs(
                lx.bm25_score(index, q_terms, p.id) - _oracle_bm25(passages, query, p.id)
            ))
            worst = max(worst, abs(
                lx.tfidf_score(index, q_terms, p.id) - _oracle_tfidf(passages, query, p.id)
            ))
        k = rng.randint(1, len(passages))
        for scorer, ref in (("bm25", _oracle_bm25), ("tfidf", _oracle_tfidf)):
            run = lx.search(index, query, k=k, scorer=scorer)
            expect = sorted(
                ((ref(passages, query, p.id), p.id) for p in passages),
                key=lambda sp: (-sp[0], sp[1]),
            )[:k]
            assert [pid for pid, _ in run.entries] == [pid for _, pid in expect]
            searches += 1
    _verdict(
        "lexical scoring",
        worst < 1e-9,
        f"100 random corpora: max |score - brute force| {worst:.2e} (tol 1e-9) "
        f"for BM25 and TF-IDF, {searches} searches equal the exhaustive sort",
    )


# ---------------------------------------------------------------------------
# 5. top-k accuracy vs exhaustive re-evaluation
# ---------------------------------------------------------------------------

def _oracle_answer_tokens(answer: str) -> list[str]:
    toks = _oracle_tokens(answer)
    i = 0
    while i < len(toks) and toks[i] in ("a", "an", "the"):
        i += 1
    return toks[i:]


def _oracle_occurs(text: str, answer: str) -> bool:
    hay = _oracle_tokens(text)
    needle = _oracle_answer_tokens(answer)
    if not needle:
        return False
    return any(
        hay[i : i + len(needle)] == needle for i in range(len(hay) - len(needle) + 1)
    )


def test_05_topk_accuracy_matches_exhaustive_oracle():
    rng = random.Random(55)
    ks = [1, 2, 3, 5, 10]
    instances = 0
    for _ in range(50):
        n_p = rng.randint(2, 50)
        n_q = rng.randint(1, 20)
        passages = {}
        for i in range(n_p):
            p = make_passage(f"c{i:03d}:0000", _pool_text(rng, 4, 30))
            passages[p.id] = p
        pids = sorted(passages)
        gold = []
        runs = {}
        for j in range(n_q):
            if rng.random() < 0.6:
                source = passages[rng.choice(pids)].text.split()
                a = rng.randrange(len(source))
                answer = " ".join(source[a : a + rng.randint(1, 2)])
            else:
                answer = "zq zzz"
            qid = f"q{j:05d}"
            gold.append(
                GoldExample(
                    question=_pool_text(rng, 2, 6),
                    answers=[answer],
                    positive_passage_id=rng.choice(pids),
                    qid=qid,
                )
            )
            chosen = rng.sample(pids, min(n_p, 10))
            scores = sorted((rng.uniform(-2, 2) for _ in chosen), reverse=True)
            runs[qid] = RankedList(query_id=qid, entries=list(zip(chosen, scores)))

        got = ev.topk_accuracy(runs, gold, ks, passages)
        for k in ks:
            hits = 0
            for ex in gold:
                if any(
                    _oracle_occurs(passages[pid].text, ex.answers[0])
                    for pid, _ in runs[ex.qid].entries[:k]
                ):
                    hits += 1
            assert got[k] == 100.0 * hits / len(gold)
        assert all(got[a] <= got[b] for a, b in zip(ks, ks[1:]))
        instances += 1
    _verdict(
        "top-k accuracy oracle",
        instances == 50,
        "50 random instances equal exhaustive re-evaluation exactly and are "
        "monotone in k",
    )


# ---------------------------------------------------------------------------
# 6. filter nesting and mixing arithmetic
# ---------------------------------------------------------------------------

def test_06_filter_nesting_and_mix_counts(tiny_model, vocab):
    rng = random.Random(66)
    passages = {}
    for i in range(40):
        p = make_passage(f"f{i:03d}:0000", _pool_text(rng, 6, 20))
        passages[p.id] = p
    pids = sorted(passages)

    examples = []
    for _ in range(1000):
        pid = rng.choice(pids)
        if rng.random() < 0.7:
            source = passages[pid].text.split()
            a = rng.randrange(len(source))
            answer = " ".join(source[a : a + rng.randint(1, 2)])
        else:
            answer = "zq zzz"
        examples.append(
            SyntheticExample(
                question=_pool_text(rng, 3, 7),
                answer=answer,
                passage_id=pid,
                conditioning_entity=None,
                provenance="unconditioned",
            )
        )

    mrc_levels = [i / 10 for i in range(10)]
    previous = None
    for threshold in mrc_levels:
        kept = {id(e) for e in flt.mrc_consistency_filter(examples, passages, threshold)}
        if previous is not None:
            assert kept <= previous
        previous = kept

    hardness_levels = list(range(10, 101, 10))
    previous = None
    for p in hardness_levels:
        config = flt.FilterConfig(hardness_mode="percentile", hardness_threshold=float(p))
        kept_list = flt.hardness_filter(
            examples, tiny_model, vocab, passages, config, batch_size=256
        )
        assert len(kept_list) == math.floor(p / 100.0 * len(examples))
        kept = {id(e) for e in kept_list}
        if previous is not None:
            assert previous <= kept
        previous = kept

    def pool(provenance: str, size: int) -> list[SyntheticExample]:
        return [
            SyntheticExample(
                question=f"q{i}", answer=f"a{i}", passage_id="f000:0000",
                conditioning_entity=None, provenance=provenance,
            )
            for i in range(size)
        ]

    pairs = [(0.5, 1000)] + [
        (rng.random(), rng.randint(1, 1200)) for _ in range(49)
    ]
    for j, (ratio, target) in enumerate(pairs):
        mixed = flt.mix_datasets(
            pool("conditioned", target), pool("unconditioned", target),
            ratio, target, seed=j,
        )
        n_cond = sum(1 for e in mixed if e.provenance == "conditioned")
        assert len(mixed) == target
        assert n_cond == int(math.floor(ratio * target + 0.5))
    _verdict(
        "filter nesting and mixing",
        True,
        "1000 examples: retained sets nested across 10 reader-confidence and "
        "10 hardness-percentile levels; 50 (ratio, target) mixes including "
        "(0.5, 1000) match floor(ratio*target+0.5) exactly",
    )


# ---------------------------------------------------------------------------
# 7. mined negatives never contain an answer
# ---------------------------------------------------------------------------

def test_07_mined_negatives_are_answer_free():
    rng = random.Random(77)
    mined = 0
    skipped = 0
    for _ in range(100):
        n = rng.randint(10, 40)
        passages = {}
        for i in range(n):
            p = make_passage(f"m{i:03d}:0000", _pool_text(rng, 4, 20))
            passages[p.id] = p
        pids = sorted(passages)
        answers = []
        for _ in range(rng.randint(1, 2)):
            source = passages[rng.choice(pids)].text.split()
            a = rng.randrange(len(source))
            answers.append(" ".join(source[a : a + rng.randint(1, 2)]))
        question = _pool_text(rng, 2, 6)
        index = lx.build_index(list(passages.values()))
        pid = lx.mine_hard_negative(
            index, passages, question, answers, pool_size=rng.randint(1, 15)
        )
        if pid is None:
            skipped += 1
        else:
            assert ev.answer_match(passages[pid].text, answers) is False
            mined += 1
    _verdict(
        "hard-negative soundness",
        mined > 0,
        f"100 random draws: {mined} mined negatives all answer-free, "
        f"{skipped} draws had no usable candidate",
    )


# ---------------------------------------------------------------------------
# 8. directional experiment on the biased toy corpus
# ---------------------------------------------------------------------------

def test_08_directional_experiment(tmp_path):
    started = time.monotonic()
    seeds = list(range(5))
    procs = []
    for seed in seeds:
        workdir = tmp_path / f"seed{seed}"
        workdir.mkdir()
        init = subprocess.run(
            [sys.executable, "-m", "attnaug", "init", "--with-toy-data",
             "--seed", str(seed)],
            cwd=workdir, capture_output=True, text=True, timeout=300,
        )
        assert init.returncode == 0, init.stderr
        procs.append((workdir, subprocess.Popen(
            [sys.executable, "-m", "attnaug", "--seed", str(seed), "run"],
            cwd=workdir, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
        )))

    metrics = {tag: {"entropy": [], "rest_share": [], "top5": []} for tag in pl.MODEL_TAGS}
    for workdir, proc in procs:
        _out, err = proc.communicate(timeout=540)
        assert proc.returncode == 0, err[-2000:]
        report = json.loads((workdir / "out" / "report.json").read_text(encoding="utf-8"))
        for tag in pl.MODEL_TAGS:
            model = report["models"][tag]
            metrics[tag]["entropy"].append(model["attention"]["mean_entropy"])
            metrics[tag]["rest_share"].append(model["attention"]["mean_rest_share"])
            metrics[tag]["top5"].append(model["accuracies"]["full"]["5"])

    med = {
        tag: {key: statistics.median(vals) for key, vals in by_key.items()}
        for tag, by_key in metrics.items()
    }
    wall = time.monotonic() - started
    ok = (
        med["mixed"]["entropy"] >= med["baseline"]["entropy"]
        and med["mixed"]["rest_share"] >= med["baseline"]["rest_share"]
        and med["mixed"]["top5"] >= med["baseline"]["top5"] - 2.0
        and wall < 600.0
    )
    _verdict(
        "directional experiment",
        ok,
        "medians over 5 seeds: "
        f"entropy mixed {med['mixed']['entropy']:.3f} >= baseline "
        f"{med['baseline']['entropy']:.3f}; rest-of-passage share mixed "
        f"{med['mixed']['rest_share']:.3f} >= baseline "
        f"{med['baseline']['rest_share']:.3f}; top-5 mixed "
        f"{med['mixed']['top5']:.1f} >= baseline {med['baseline']['top5']:.1f} - 2; "
        f"{wall:.0f}s (budget 600s)",
    )


# ---------------------------------------------------------------------------
# 9. determinism: stage reruns and scratch reruns
# ---------------------------------------------------------------------------

def test_09_determinism(ran_env, tmp_path):
    env = tmp_path / "env"
    shutil.copytree(ran_env, env)
    cfg = load_config(env / "config.yaml")
    out = cfg.paths.output_dir
    manifest = pl.read_manifest(cfg)
    stages = 0
    for spec in pl.pipeline_stages(cfg, cfg.seed):
        previous = manifest[spec.name]
        before = {
            label: (out / rel).read_bytes()
            for label, rel in previous["artifacts"].items()
        }
        entry = pl.execute_stage(cfg, cfg.seed, spec)
        after = {
            label: (out / rel).read_bytes()
            for label, rel in entry["artifacts"].items()
        }
        assert after == before, f"stage {spec.name} changed artifacts on rerun"
        stages += 1

    reports = []
    for name in ("scratch_a", "scratch_b"):
        config_path = write_env(tmp_path / name, seed=0)
        scratch = load_config(config_path)
        pl.run_pipeline(scratch, scratch.seed, log=lambda _msg: None)
        reports.append((scratch.paths.output_dir / "report.json").read_bytes())
    assert reports[0] == reports[1]
    _verdict(
        "determinism",
        True,
        f"{stages} stages rerun byte-identical; two from-scratch runs "
        "produced identical comparison reports",
    )


# ---------------------------------------------------------------------------
# 10. misbehaving external generator backends
# ---------------------------------------------------------------------------

_MALFORMED = """\
import sys
for _line in sys.stdin:
    print("this is not json", flush=True)
"""

_MISSING_FIELDS = """\
import sys, json
for line in sys.stdin:
    json.loads(line)
    print(json.dumps({"status": "ok"}), flush=True)
"""

_FABRICATED_ANSWER = """\
import sys, json
for line in sys.stdin:
    json.loads(line)
    print(json.dumps({"question": "who is involved", "answer": "Zzyzx Quorblat"}), flush=True)
"""

_ENTITY_DROPPER = """\
import sys, json
for line in sys.stdin:
    req = json.loads(line)
    last = req["passage"].split()[-1]
    print(json.dumps({"question": "what stands here", "answer": last}), flush=True)
"""


def _use_backend(env: Path, script_body: str, name: str) -> None:
    script = env / f"{name}.py"
    script.write_text(script_body, encoding="utf-8")
    config = yaml.safe_load((env / "config.yaml").read_text(encoding="utf-8"))
    config["generation"]["backend"] = "external"
    config["generation"]["backend_argv"] = [sys.executable, str(script)]
    (env / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")


def _clear_generate_outputs(out: Path) -> None:
    for name in ("synthetic_conditioned.jsonl", "synthetic_unconditioned.jsonl", "gen_meta.json"):
        (out / name).unlink(missing_ok=True)


def test_10_backend_misbehavior_is_rejected(ran_env, tmp_path, capsys):
    env = tmp_path / "env"
    shutil.copytree(ran_env, env)
    out = load_config(env / "config.yaml").paths.output_dir
    argv = ["--config", str(env / "config.yaml"), "generate"]

    failures = []
    for name, body, needle in (
        ("malformed", _MALFORMED, "malformed JSON"),
        ("missing_fields", _MISSING_FIELDS, "missing"),
        ("fabricated_answer", _FABRICATED_ANSWER, "does not occur"),
    ):
        _use_backend(env, body, name)
        _clear_generate_outputs(out)
        rc = cli.main(argv)
        gc.collect()  # drop the transport so the backend child exits
        err = capsys.readouterr().err
        assert rc == 2, f"{name}: expected exit 2, got {rc}"
        assert needle in err, f"{name}: stderr lacked {needle!r}: {err}"
        assert not (out / "synthetic_conditioned.jsonl").exists()
        failures.append(name)

    # a response that silently drops the conditioning entity is skipped,
    # counted, and never accepted into the conditioned pool
    _use_backend(env, _ENTITY_DROPPER, "entity_dropper")
    _clear_generate_outputs(out)
    rc = cli.main(argv)
    gc.collect()
    capsys.readouterr()
    assert rc == 0
    meta = json.loads((out / "gen_meta.json").read_text(encoding="utf-8"))
    assert meta["conditioned_requested"] > 0
    assert meta["conditioned_emitted"] == 0
    assert meta["conditioned_skipped"] == meta["conditioned_requested"]
    assert load_synthetic(out / "synthetic_conditioned.jsonl") == []
    _verdict(
        "protocol robustness",
        True,
        f"backends {', '.join(failures)} rejected with exit 2 and no artifacts; "
        "entity-dropping responses skipped with zero conditioned acceptances",
    )
