"""CoNLL-U reading, validation, and subtree extraction."""

import io

import pytest

from opinionframing.parses import ConlluError, read_parses, to_conllu

from conftest import FIXTURES


def conllu(rows, article_id="doc1", sent_id=0):
    lines = [f"# newdoc id = {article_id}", f"# sent_id = {sent_id}"]
    for i, (surface, lemma, upos, head, deprel, *rest) in enumerate(rows, start=1):
        misc = rest[0] if rest else "_"
        lines.append(
            f"{i}\t{surface}\t{lemma}\t{upos}\t_\t_\t{head}\t{deprel}\t_\t{misc}"
        )
    return "\n".join(lines) + "\n\n"


def read(text):
    return read_parses(io.StringIO(text))


MINIMAL = [("Scientists", "scientist", "NOUN", 2, "nsubj"),
           ("agree", "agree", "VERB", 0, "ROOT")]


def test_minimal_sentence():
    docs = read(conllu(MINIMAL))
    assert len(docs) == 1
    sent = docs[0].sentences[0]
    assert sent.article_id == "doc1"
    assert sent.root().surface == "agree"
    assert [t.surface for t in sent.tokens] == ["Scientists", "agree"]
    assert sent.token(1).head == 2


def test_two_documents():
    text = conllu(MINIMAL, article_id="one") + conllu(MINIMAL, article_id="two")
    docs = read(text)
    assert [d.article_id for d in docs] == ["one", "two"]


def test_cycle_rejected_document_retained(caplog):
    # One document, two sentences; the first contains a head cycle (2 <-> 3).
    bad = [("a", "a", "X", 0, "ROOT"), ("b", "b", "X", 3, "dep"),
           ("c", "c", "X", 2, "dep")]
    text = conllu(bad, sent_id=0)
    for line in conllu(MINIMAL, sent_id=1).splitlines(keepends=True):
        if not line.startswith("# newdoc"):
            text += line
    with caplog.at_level("WARNING"):
        docs = read(text)
    assert len(docs) == 1
    assert [s.sentence_index for s in docs[0].sentences] == [1]
    assert any("cycle" in r.message for r in caplog.records)


def test_multiple_roots_rejected():
    bad = [("a", "a", "X", 0, "ROOT"), ("b", "b", "X", 0, "ROOT")]
    docs = read(conllu(bad))
    assert docs[0].sentences == []


def test_head_out_of_range_rejected():
    bad = [("a", "a", "X", 5, "dep"), ("b", "b", "X", 0, "ROOT")]
    docs = read(conllu(bad))
    assert docs[0].sentences == []


def test_wrong_column_count_is_hard_error():
    text = "# newdoc id = d\n# sent_id = 0\n1\tonly\tthree\n"
    with pytest.raises(ConlluError, match="line 3"):
        read(text)


def test_tokens_before_newdoc_are_hard_error():
    text = "1\ta\ta\tX\t_\t_\t0\tROOT\t_\t_\n"
    with pytest.raises(ConlluError, match="newdoc"):
        read(text)


def test_multiword_ranges_and_empty_nodes_skipped():
    text = (
        "# newdoc id = d\n# sent_id = 0\n"
        "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "1\tdo\tdo\tAUX\t_\t_\t2\taux\t_\t_\n"
        "2\tagree\tagree\tVERB\t_\t_\t0\tROOT\t_\t_\n"
        "2.1\telided\telide\tVERB\t_\t_\t_\t_\t_\t_\n"
        "\n"
    )
    docs = read(text)
    assert [t.surface for t in docs[0].sentences[0].tokens] == ["do", "agree"]


def test_coref_parsed_from_misc():
    rows = [
        ("She", "she", "PRON", 2, "nsubj", "SpaceAfter=No|Coref=Greta Thunberg"),
        ("spoke", "speak", "VERB", 0, "ROOT"),
    ]
    sent = read(conllu(rows))[0].sentences[0]
    assert sent.token(1).coref_canonical == "Greta Thunberg"
    assert sent.token(2).coref_canonical is None


SIX = [
    ("The", "the", "DET", 2, "det"),
    ("panel", "panel", "NOUN", 3, "nsubj"),
    ("said", "say", "VERB", 0, "ROOT"),
    ("warming", "warm", "VERB", 3, "ccomp"),
    ("is", "be", "AUX", 4, "aux"),
    ("real", "real", "ADJ", 4, "acomp"),
]


def reachable(heads, root):
    """Brute-force reachability over the raw head array."""
    out = {root}
    changed = True
    while changed:
        changed = False
        for child, head in enumerate(heads, start=1):
            if head in out and child not in out:
                out.add(child)
                changed = True
    return out


def test_subtree_matches_brute_force_reachability():
    sent = read(conllu(SIX))[0].sentences[0]
    heads = [t.head for t in sent.tokens]
    for root in range(1, 7):
        expected = sorted(reachable(heads, root))
        assert [t.index for t in sent.subtree(root)] == expected


def test_subtree_of_ccomp_spans_clause():
    sent = read(conllu(SIX))[0].sentences[0]
    assert [t.index for t in sent.subtree(4)] == [4, 5, 6]


def test_subtree_of_root_is_whole_sentence_and_leaf_is_singleton():
    sent = read(conllu(SIX))[0].sentences[0]
    assert len(sent.subtree(3)) == len(sent.tokens)
    assert [t.surface for t in sent.subtree(1)] == ["The"]


def test_sibling_subtrees_disjoint():
    sent = read(conllu(SIX))[0].sentences[0]
    for tok in sent.tokens:
        kids = sent.children(tok.index)
        seen = set()
        for kid in kids:
            ids = {t.index for t in sent.subtree(kid.index)}
            assert not ids & seen
            seen |= ids


def test_every_token_inside_root_subtree():
    sent = read(conllu(SIX))[0].sentences[0]
    assert {t.index for t in sent.subtree(sent.root().index)} == {
        t.index for t in sent.tokens
    }


def test_roundtrip_is_byte_identical():
    raw = (FIXTURES / "extraction.conllu").read_text(encoding="utf-8")
    docs = read_parses(io.StringIO(raw))
    assert to_conllu(docs) == raw


def test_roundtrip_preserves_coref():
    text = conllu(
        [("She", "she", "PRON", 2, "nsubj", "Coref=Greta Thunberg"),
         ("spoke", "speak", "VERB", 0, "ROOT")]
    )
    docs = read(text)
    again = read(to_conllu(docs))
    assert again[0].sentences[0].token(1).coref_canonical == "Greta Thunberg"
