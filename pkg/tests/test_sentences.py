"""Sentence templates, value rendering, and the fixed-vocabulary tokenizer."""

import numpy as np
import pytest

from spotalign.errors import ContractViolation, UnknownTokenError
from spotalign.sentences import (GeneSentence, Vocabulary, build_sentences,
                                 make_sentence, render_value)

PANEL = ("IGKC", "NPY", "PLP1", "HBB", "SCGB2A2", "MGP", "GFAP", "MBP")


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary(PANEL)


def test_template_rendering(vocab):
    s = make_sentence("GFAP", 0.25, vocab)
    assert s.text == "The expression value of GFAP is 0.25."
    assert s.value == 0.25


def test_zero_renders_with_two_decimals(vocab):
    assert make_sentence("NPY", 0.0, vocab).text.endswith("is 0.00.")
    assert render_value(0) == "0.00"


def test_one_sentence_per_gene_in_panel_order(vocab):
    expr = np.linspace(0.0, 2.0, len(PANEL))
    sentences = build_sentences(expr, PANEL, vocab)
    assert [s.gene_symbol for s in sentences] == list(PANEL)
    assert len(sentences) == len(PANEL)


def test_sentences_injective_on_rounded_vectors(vocab):
    a = build_sentences(np.array([0.111] + [0.0] * 7), PANEL, vocab)
    b = build_sentences(np.array([0.112] + [0.0] * 7), PANEL, vocab)
    c = build_sentences(np.array([0.119] + [0.0] * 7), PANEL, vocab)
    assert [s.text for s in a] == [s.text for s in b]  # same after rounding
    assert [s.text for s in a] != [s.text for s in c]


def test_value_stored_equals_rendered_float(vocab):
    s = make_sentence("MGP", 1.23456, vocab)
    assert s.value == float(render_value(1.23456)) == 1.23


def test_tokenize_deterministic(vocab):
    text = "The expression value of NPY is 0.11."
    assert vocab.tokenize(text) == vocab.tokenize(text)


def test_tokenize_slot_positions_fixed(vocab):
    ids, gene_pos, value_pos = vocab.tokenize("The expression value of NPY is 0.11.")
    ids2, gene_pos2, value_pos2 = vocab.tokenize("The expression value of MBP is 3.07.")
    assert (gene_pos, value_pos) == (gene_pos2, value_pos2) == (5, 7)
    assert ids[gene_pos] != ids2[gene_pos2]  # gene token differs
    assert ids[value_pos] == ids2[value_pos2]  # one shared numeric token


def test_tokenize_out_of_vocabulary_names_word(vocab):
    with pytest.raises(UnknownTokenError, match="XYZ9"):
        vocab.tokenize("The expression value of XYZ9 is 0.11.")


def test_token_sequence_within_cap(vocab):
    s = make_sentence("SCGB2A2", 4.99, vocab)
    assert len(s.token_ids) <= 77
    assert isinstance(s, GeneSentence)


def test_sentence_cap_enforced(vocab):
    with pytest.raises(ContractViolation):
        make_sentence("GFAP", 1.0, vocab, max_tokens=5)


def test_expression_length_must_match_panel(vocab):
    with pytest.raises(ContractViolation):
        build_sentences(np.zeros(3), PANEL, vocab)


def test_duplicate_panel_rejected():
    with pytest.raises(ContractViolation):
        Vocabulary(("A", "A"))


def test_vocabulary_save_load_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.tokens == vocab.tokens
    assert loaded.panel == vocab.panel
    assert loaded.gene_ids == vocab.gene_ids
