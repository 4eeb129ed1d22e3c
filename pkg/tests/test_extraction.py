"""Tuple extraction and lexical filtering against the hand-annotated corpus."""

import io
import itertools
import json

import pytest

from opinionframing.extraction import (
    ExtractionConfig,
    FilterLexicons,
    annotation_text,
    extract_document,
    extract_tuples,
    filter_asserted,
    filter_implicative_scope,
    filter_indicative,
    filter_indirect_questions,
    filter_topic,
    select_annotation_candidates,
    to_record,
)
from opinionframing.parses import read_parses

from conftest import FIXTURES


@pytest.fixture(scope="module")
def lexicons():
    return FilterLexicons.load()


@pytest.fixture(scope="module")
def fixture_doc():
    with open(FIXTURES / "extraction.conllu", encoding="utf-8") as fh:
        return read_parses(fh)[0]


@pytest.fixture(scope="module")
def gold():
    with open(FIXTURES / "extraction_gold.json", encoding="utf-8") as fh:
        data = json.load(fh)
    return {entry["sentence_index"]: entry["tuples"] for entry in data["sentences"]}


def drop_stage(t, sentence, lexicons):
    """Which default-pipeline stage drops the tuple, or None."""
    if not filter_asserted([t]):
        return "asserted"
    if not filter_indicative([t], lexicons):
        return "indicative"
    if not filter_implicative_scope([t], sentence, lexicons):
        return "implicative_scope"
    if not filter_indirect_questions([t], lexicons):
        return "indirect_questions"
    if not filter_topic([t], lexicons):
        return "topic"
    return None


def test_fixture_corpus_is_large_enough(gold):
    assert len(gold) >= 25


def test_extraction_matches_gold_tuples(fixture_doc, gold, lexicons):
    for sentence in fixture_doc.sentences:
        expected = gold[sentence.sentence_index]
        got = extract_tuples(sentence)
        assert len(got) == len(expected), f"sentence {sentence.sentence_index}"
        got = sorted(got, key=lambda t: t.opinion_root)
        expected = sorted(expected, key=lambda e: e["opinion_first"])
        for t, e in zip(got, expected):
            ctx = f"sentence {sentence.sentence_index}, opinion at {t.opinion_root}"
            assert t.source_head == e["source_head"], ctx
            assert t.source_canonical == e["source_canonical"], ctx
            modifier_lemmas = [
                sentence.token(i).lemma.lower() for i in t.source_modifiers
            ]
            assert modifier_lemmas == e["source_modifier_lemmas"], ctx
            assert t.predicate_lemma == e["predicate_lemma"], ctx
            assert t.predicate_particle == e["predicate_particle"], ctx
            assert t.opinion_tokens[0] == e["opinion_first"], ctx
            assert t.opinion_tokens[-1] == e["opinion_last"], ctx
            assert t.complementizer == e["complementizer"], ctx
            assert t.negated == e["negated"], ctx
            assert t.modal == e["modal"], ctx


def test_recall_of_gold_clauses_is_total(fixture_doc, gold):
    """Every hand-marked complement clause is found before filtering."""
    for sentence in fixture_doc.sentences:
        found = {t.opinion_tokens[0] for t in extract_tuples(sentence)}
        wanted = {e["opinion_first"] for e in gold[sentence.sentence_index]}
        assert wanted <= found, f"sentence {sentence.sentence_index}"


def test_filters_agree_with_gold_drop_stages(fixture_doc, gold, lexicons):
    for sentence in fixture_doc.sentences:
        expected = sorted(gold[sentence.sentence_index], key=lambda e: e["opinion_first"])
        got = sorted(extract_tuples(sentence), key=lambda t: t.opinion_root)
        for t, e in zip(got, expected):
            stage = drop_stage(t, sentence, lexicons)
            assert stage == e["drop_stage"], (
                f"sentence {sentence.sentence_index}: expected "
                f"{e['drop_stage']}, got {stage}"
            )


def test_survivors_are_exactly_the_gold_true_positives(fixture_doc, gold, lexicons):
    """Post-filter precision: every gold false positive is removed."""
    for sentence in fixture_doc.sentences:
        survivors = [
            t
            for t in extract_tuples(sentence)
            if drop_stage(t, sentence, lexicons) is None
        ]
        wanted = [
            e for e in gold[sentence.sentence_index] if e["drop_stage"] is None
        ]
        assert len(survivors) == len(wanted), f"sentence {sentence.sentence_index}"


def test_annotation_candidates_match_gold(fixture_doc, gold, lexicons):
    for sentence in fixture_doc.sentences:
        expected = sorted(gold[sentence.sentence_index], key=lambda e: e["opinion_first"])
        got = sorted(extract_tuples(sentence), key=lambda t: t.opinion_root)
        for t, e in zip(got, expected):
            if e["drop_stage"] is not None:
                continue
            is_candidate = bool(select_annotation_candidates([t], lexicons))
            assert is_candidate == e["annotation_candidate"], (
                f"sentence {sentence.sentence_index}"
            )
            if e["annotation_candidate"]:
                assert annotation_text(t) == e["annotation_text"]


def test_opinion_token_indices_strictly_increasing(fixture_doc):
    for sentence in fixture_doc.sentences:
        for t in extract_tuples(sentence):
            assert list(t.opinion_tokens) == sorted(set(t.opinion_tokens))
            # exactly the ccomp subtree
            assert set(t.opinion_tokens) == {
                tok.index for tok in sentence.subtree(t.opinion_root)
            }


def test_filters_commute(fixture_doc, lexicons):
    """Each filter is a pure per-tuple predicate, so order cannot matter."""
    for sentence in fixture_doc.sentences:
        tuples = extract_tuples(sentence)
        filters = [
            lambda ts: filter_asserted(ts),
            lambda ts: filter_indicative(ts, lexicons),
            lambda ts: filter_implicative_scope(ts, sentence, lexicons),
            lambda ts: filter_indirect_questions(ts, lexicons),
            lambda ts: filter_topic(ts, lexicons),
        ]
        baseline = None
        for order in itertools.permutations(range(len(filters))):
            result = tuples
            for idx in order:
                result = filters[idx](result)
            keys = [t.opinion_root for t in result]
            if baseline is None:
                baseline = keys
            assert keys == baseline


def test_extract_document_counts(fixture_doc, lexicons):
    records, counts = extract_document(fixture_doc, lexicons, outlet="The Nation")
    assert counts["extracted"] == 30
    assert counts["topic"] == len(records) == 20
    assert counts["extracted"] >= counts["asserted"] >= counts["indicative"]
    assert counts["indicative"] >= counts["implicative_scope"]
    assert counts["implicative_scope"] >= counts["indirect_questions"]
    assert counts["indirect_questions"] >= counts["topic"]
    assert sum(1 for r in records if r.annotation_candidate) == 9
    assert all(r.outlet == "The Nation" for r in records)


def test_record_roundtrip(fixture_doc, lexicons):
    from opinionframing.extraction import TupleRecord

    records, _ = extract_document(fixture_doc, lexicons)
    for rec in records:
        again = TupleRecord.from_json(json.loads(json.dumps(rec.to_json())))
        assert again == rec


def test_tuple_ids_unique(fixture_doc, lexicons):
    records, _ = extract_document(fixture_doc, lexicons)
    ids = [r.tuple_id for r in records]
    assert len(ids) == len(set(ids))


# --- label-set variants and edge cases --------------------------------------


def sentence_from(rows, article_id="t", sent_id=0):
    lines = [f"# newdoc id = {article_id}", f"# sent_id = {sent_id}"]
    for i, (surface, lemma, upos, head, deprel) in enumerate(rows, start=1):
        lines.append(f"{i}\t{surface}\t{lemma}\t{upos}\t_\t_\t{head}\t{deprel}\t_\t_")
    text = "\n".join(lines) + "\n\n"
    return read_parses(io.StringIO(text))[0].sentences[0]


def test_ud_style_relcl_label_supported():
    sent = sentence_from(
        [
            ("They", "they", "PRON", 2, "nsubj"),
            ("cited", "cite", "VERB", 0, "root"),
            ("a", "a", "DET", 4, "det"),
            ("study", "study", "NOUN", 2, "obj"),
            ("that", "that", "PRON", 6, "nsubj"),
            ("says", "say", "VERB", 4, "acl:relcl"),
            ("warming", "warming", "NOUN", 8, "nsubj"),
            ("accelerated", "accelerate", "VERB", 6, "ccomp"),
        ]
    )
    (t,) = extract_tuples(sent)
    assert t.predicate_lemma == "say"
    assert t.source_head == 4  # antecedent of "that"
    assert t.source_canonical == "study"


def test_nsubj_family_prefix_match():
    for label in ("nsubjpass", "nsubj:pass"):
        sent = sentence_from(
            [
                ("It", "it", "PRON", 2, label),
                ("said", "say", "VERB", 0, "root"),
                ("warming", "warming", "NOUN", 4, "nsubj"),
                ("continues", "continue", "VERB", 2, "ccomp"),
            ]
        )
        (t,) = extract_tuples(sent)
        assert t.source_head == 1


def test_advmod_negation_detected():
    sent = sentence_from(
        [
            ("Experts", "expert", "NOUN", 3, "nsubj"),
            ("never", "never", "ADV", 3, "advmod"),
            ("said", "say", "VERB", 0, "root"),
            ("warming", "warming", "NOUN", 5, "nsubj"),
            ("stopped", "stop", "VERB", 3, "ccomp"),
        ]
    )
    (t,) = extract_tuples(sent)
    assert t.negated


def test_ccomp_at_root_is_skipped(caplog):
    sent = sentence_from([("Go", "go", "VERB", 0, "ccomp")])
    with caplog.at_level("WARNING"):
        assert extract_tuples(sent) == []
    assert any("no predicate" in r.message for r in caplog.records)


def test_no_ccomp_yields_no_tuples():
    sent = sentence_from(
        [("Warming", "warming", "NOUN", 2, "nsubj"),
         ("continues", "continue", "VERB", 0, "ROOT")]
    )
    assert extract_tuples(sent) == []


def test_empty_indicative_lexicon_is_error(lexicons):
    empty = FilterLexicons(
        indicative_verbs=frozenset(),
        implicatives=(),
        question_words=frozenset(),
        topic_stems=(),
        precision_keywords=(),
        modal_lemmas=frozenset(),
    )
    sent = sentence_from(
        [
            ("They", "they", "PRON", 2, "nsubj"),
            ("say", "say", "VERB", 0, "ROOT"),
            ("warming", "warming", "NOUN", 4, "nsubj"),
            ("continues", "continue", "VERB", 2, "ccomp"),
        ]
    )
    with pytest.raises(ValueError, match="empty"):
        filter_indicative(extract_tuples(sent), empty)


def test_prefix_match_for_topic_stems(lexicons):
    sent = sentence_from(
        [
            ("They", "they", "PRON", 2, "nsubj"),
            ("say", "say", "VERB", 0, "ROOT"),
            ("temperatures", "temperature", "NOUN", 4, "nsubj"),
            ("rose", "rise", "VERB", 2, "ccomp"),
        ]
    )
    assert filter_topic(extract_tuples(sent), lexicons)


def test_configurable_modal_list():
    rows = [
        ("They", "they", "PRON", 3, "nsubj"),
        ("could", "could", "AUX", 3, "aux"),
        ("say", "say", "VERB", 0, "ROOT"),
        ("warming", "warming", "NOUN", 5, "nsubj"),
        ("continues", "continue", "VERB", 3, "ccomp"),
    ]
    (default,) = extract_tuples(sentence_from(rows))
    assert default.modal
    narrow = ExtractionConfig(modal_lemmas=("must",))
    (custom,) = extract_tuples(sentence_from(rows), narrow)
    assert not custom.modal


def test_question_word_initial_opinion_dropped(lexicons):
    sent = sentence_from(
        [
            ("They", "they", "PRON", 2, "nsubj"),
            ("ask", "ask", "VERB", 0, "ROOT"),
            ("how", "how", "ADV", 5, "advmod"),
            ("warming", "warming", "NOUN", 5, "nsubj"),
            ("stops", "stop", "VERB", 2, "ccomp"),
        ]
    )
    assert filter_indirect_questions(extract_tuples(sent), lexicons) == []


def test_rendering_cleans_whitespace():
    sent = sentence_from(
        [
            ("They", "they", "PRON", 2, "nsubj"),
            ("say", "say", "VERB", 0, "ROOT"),
            ("that", "that", "SCONJ", 6, "mark"),
            ("warming", "warming", "NOUN", 6, "nsubj"),
            (",", ",", "PUNCT", 6, "punct"),
            ("continues", "continue", "VERB", 2, "ccomp"),
        ]
    )
    (t,) = extract_tuples(sent)
    assert annotation_text(t) == "Warming, continues."
