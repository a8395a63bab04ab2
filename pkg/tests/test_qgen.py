import pytest

from attnaug import qgen
from attnaug.corpus import GoldExample
from attnaug.errors import GenerationError, ProtocolError
from attnaug.ner import EntityMention, Gazetteer, GazetteerBackend
from attnaug.tokenizer import encode as tokenize
from tests.conftest import make_passage

CURIE = make_passage(
    "mc:0000",
    "Marie Curie discovered polonium in 1898. The discovery happened in Paris. "
    "Pierre Curie joined the work on radium later that year.",
)


def _mention(surface, start, end, etype="OTHER", char=(0, 1)):
    return EntityMention(surface=surface, entity_type=etype,
                         char_span=char, word_span=(start, end))


def test_sampling_params_validation():
    with pytest.raises(ValueError):
        qgen.SamplingParams(top_p=0.0)
    with pytest.raises(ValueError):
        qgen.SamplingParams(top_k=-1)
    with pytest.raises(ValueError):
        qgen.SamplingParams(temperature=0.0)


def test_conditioned_generation_trace():
    gen = qgen.TemplateGenerator()
    # condition on "polonium" (word 3 of sentence one); subject wins the
    # answer slot, so the question asks who and the answer is the subject.
    req = qgen.GenerationRequest(
        passage=CURIE, conditioning_entity=_mention("polonium", 3, 4)
    )
    got = gen.generate(req)
    assert got is not None
    assert got.question == "who discovered polonium in 1898"
    assert got.answer == "Marie Curie"
    assert got.provenance == "conditioned"
    assert got.passage_id == "mc:0000"
    assert got.conditioning_entity.surface == "polonium"
    assert got.conditioning_entity.word_span == (3, 4)


def test_conditioned_on_subject_uses_other_span():
    gen = qgen.TemplateGenerator()
    req = qgen.GenerationRequest(
        passage=CURIE, conditioning_entity=_mention("Marie Curie", 0, 2, "PERSON")
    )
    got = gen.generate(req)
    assert got is not None
    # the target overlaps the subject, so another span answers; the question
    # must still mention the conditioning entity.
    assert "marie curie" in got.question
    assert got.answer != "Marie Curie"


def test_conditioned_year_answer_uses_when():
    gen = qgen.TemplateGenerator(
        GazetteerBackend(Gazetteer({"1898": "OTHER"}), capitalized_heuristic=False)
    )
    passage = make_passage("y:0000", "polonium was isolated by chemists in 1898.")
    # no subject (sentence starts lowercase), no other entities: the year
    # is the only candidate span.
    req = qgen.GenerationRequest(
        passage=passage, conditioning_entity=_mention("polonium", 0, 1)
    )
    got = qgen.TemplateGenerator().generate(req)
    assert got is not None
    assert got.answer == "1898"
    assert got.question.startswith("polonium was isolated")
    assert "when" in got.question.split()


def test_conditioned_entity_absent_raises():
    gen = qgen.TemplateGenerator()
    req = qgen.GenerationRequest(
        passage=CURIE, conditioning_entity=_mention("oxygen", 90, 91)
    )
    with pytest.raises(GenerationError):
        gen.generate(req)


def test_conditioned_relocates_stale_span():
    gen = qgen.TemplateGenerator()
    # span points at the wrong words; surface match relocates it
    req = qgen.GenerationRequest(
        passage=CURIE, conditioning_entity=_mention("polonium", 0, 1)
    )
    got = gen.generate(req)
    assert got is not None
    assert got.conditioning_entity.word_span == (3, 4)


def test_unconditioned_is_seeded_and_varies():
    gen = qgen.TemplateGenerator()
    seen_questions = set()
    for seed in range(60):
        req = qgen.GenerationRequest(
            passage=CURIE, sampling=qgen.SamplingParams(seed=seed)
        )
        got = gen.generate(req)
        assert got is not None
        assert got.provenance == "unconditioned"
        assert got.conditioning_entity is None
        seen_questions.add(got.question)
        # same seed, same output
        again = gen.generate(req)
        assert again.question == got.question and again.answer == got.answer
    # across seeds the sentence/span choice must actually vary
    assert len(seen_questions) >= 3


def test_unconditioned_empty_passage_raises():
    gen = qgen.TemplateGenerator()
    req = qgen.GenerationRequest(passage=make_passage("e:0", "   "))
    with pytest.raises(GenerationError):
        gen.generate(req)


def test_generated_answer_never_overlaps_conditioning_entity():
    gen = qgen.TemplateGenerator()
    for surface, start, end in [("polonium", 3, 4), ("Paris", 11, 12), ("radium", 19, 20)]:
        req = qgen.GenerationRequest(
            passage=CURIE, conditioning_entity=_mention(surface, start, end)
        )
        got = gen.generate(req)
        if got is None:
            continue
        assert got.answer.lower() != surface.lower()
        assert surface.lower() in got.question


def test_write_load_roundtrip(tmp_path):
    gen = qgen.TemplateGenerator()
    examples = [
        gen.generate(qgen.GenerationRequest(
            passage=CURIE, conditioning_entity=_mention("polonium", 3, 4)
        )),
        gen.generate(qgen.GenerationRequest(
            passage=CURIE, sampling=qgen.SamplingParams(seed=1)
        )),
    ]
    path = tmp_path / "synthetic.jsonl"
    qgen.write_synthetic(path, examples)
    loaded = qgen.load_synthetic(path)
    assert loaded == examples

    import json
    bad = tmp_path / "bad.jsonl"
    rec = examples[0].to_dict()
    rec["provenance"] = "mystery"
    bad.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    with pytest.raises(ValueError):
        qgen.load_synthetic(bad)


def test_default_chunker():
    q = "Who discovered polonium in the city of Paris?"
    assert qgen.default_chunker(q) == ["discovered polonium", "city", "Paris"]
    assert qgen.default_chunker("the of in") == []
    assert qgen.default_chunker("") == []


def test_build_training_quads():
    passages = {
        "p0": make_passage("p0", "The Efficiency Movement started early. Its leaders pushed hard."),
    }
    gold = [
        GoldExample("who led the Efficiency Movement?", ["Frederick Taylor"], "p0"),
        GoldExample("what is quantum gravity?", ["unknown"], "p0"),
        GoldExample("missing passage", ["x"], "p9"),
    ]
    quads = qgen.build_training_quads(gold, passages)
    # "led" misses, "Efficiency Movement" hits (case-insensitive, final '?')
    assert len(quads) == 1
    assert quads[0].conditioning_entity == "Efficiency Movement"
    assert quads[0].answer == "Frederick Taylor"
    assert quads[0].passage_id == "p0"


def test_score_probe_consistency(tiny_model, vocab, sample_passages):
    passages = sample_passages[:4]
    mentions = {
        passages[0].id: [_mention("Marie Curie", 0, 2, "PERSON"), _mention("polonium", 3, 4)],
        passages[1].id: [_mention("Eiffel Tower", 1, 3, "FACILITY"), _mention("1889", 6, 7)],
        passages[2].id: [_mention("Ada Lovelace", 0, 2, "PERSON")],  # one entity: skipped
    }
    result = qgen.score_probe(tiny_model, passages, vocab, mentions)
    assert result["passages_scored"] + result["passages_skipped"] == len(passages)
    assert result["passages_scored"] == len(result["log"])
    if result["log"]:
        mean_high = sum(e["highest_score"] for e in result["log"]) / len(result["log"])
        assert result["mean_score_highest_entity_q"] == pytest.approx(mean_high, abs=1e-12)

        # scores recompute exactly from the logged questions
        from attnaug.encoder import encode as enc_encode
        entry = result["log"][0]
        passage = next(p for p in passages if p.id == entry["passage_id"])
        p_emb = enc_encode(
            tiny_model, "passage", tokenize(vocab, passage.text, tiny_model.config.max_len)
        ).embedding
        q_emb = enc_encode(
            tiny_model, "query", tokenize(vocab, entry["highest_question"], tiny_model.config.max_len)
        ).embedding
        assert float(q_emb @ p_emb) == pytest.approx(entry["highest_score"], abs=1e-12)


class _StubTransport:
    def __init__(self, response):
        self.response = response
        self.last_payload = None

    def request(self, payload):
        self.last_payload = payload
        return self.response


def test_external_generator_happy_path():
    transport = _StubTransport({"question": "who found polonium", "answer": "Marie Curie"})
    gen = qgen.ExternalGenerator(transport)
    req = qgen.GenerationRequest(
        passage=CURIE, conditioning_entity=_mention("polonium", 3, 4)
    )
    got = gen.generate(req)
    assert got is not None
    assert got.question == "who found polonium"
    assert transport.last_payload["entity"] == "polonium"
    assert transport.last_payload["passage"] == CURIE.text
    assert set(transport.last_payload) == {
        "passage", "entity", "top_p", "top_k", "temperature", "seed",
    }


def test_external_generator_rejects_entity_dropping_output():
    transport = _StubTransport({"question": "who found radium", "answer": "Marie Curie"})
    gen = qgen.ExternalGenerator(transport)
    req = qgen.GenerationRequest(
        passage=CURIE, conditioning_entity=_mention("polonium", 3, 4)
    )
    assert gen.generate(req) is None


def test_external_generator_entity_not_in_passage():
    gen = qgen.ExternalGenerator(_StubTransport({"question": "q", "answer": "a"}))
    req = qgen.GenerationRequest(
        passage=CURIE, conditioning_entity=_mention("oxygen", 0, 1)
    )
    with pytest.raises(GenerationError):
        gen.generate(req)


def test_external_generator_rejects_nonextractive_answer():
    # an answer the passage never mentions must be an error, not a skip
    transport = _StubTransport(
        {"question": "who found polonium", "answer": "Dmitri Mendeleev"}
    )
    gen = qgen.ExternalGenerator(transport)
    req = qgen.GenerationRequest(
        passage=CURIE, conditioning_entity=_mention("polonium", 3, 4)
    )
    with pytest.raises(GenerationError, match="does not occur"):
        gen.generate(req)
    with pytest.raises(GenerationError, match="does not occur"):
        gen.generate(qgen.GenerationRequest(passage=CURIE))


@pytest.mark.parametrize("response", [
    {},
    {"question": "who"},
    {"question": "", "answer": "a"},
    {"question": "who", "answer": "   "},
    {"question": 7, "answer": "a"},
])
def test_external_generator_protocol_errors(response):
    gen = qgen.ExternalGenerator(_StubTransport(response))
    req = qgen.GenerationRequest(passage=CURIE)
    with pytest.raises(ProtocolError):
        gen.generate(req)
