"""Template banks, zero-shot prediction, and frozen embedding extraction."""

import numpy as np
import pytest

from spotalign import data, inference
from spotalign.errors import ContractViolation, NumericError
from spotalign.inference import TemplateBank, build_template_bank, zero_shot_predict
from spotalign.model import Model, desk_model_config

PANEL = ("IGKC", "NPY", "PLP1", "HBB")


@pytest.fixture(scope="module")
def model():
    return Model(desk_model_config(PANEL), seed=5)


@pytest.fixture(scope="module")
def corpus():
    return data.generate_synthetic_corpus(1, 24, PANEL, 32, seed=4)


def test_bank_spacing_at_reference_grid(model):
    bank = build_template_bank(model, "NPY", 0.0, 5.0, 501)
    diffs = np.diff(bank.values)
    assert np.allclose(diffs, 0.01, atol=1e-9)
    assert len(bank.values) == 501


def test_bank_two_candidates_hits_endpoints(model):
    bank = build_template_bank(model, "NPY", 0.0, 5.0, 2)
    assert bank.values.tolist() == [0.0, 5.0]


def test_bank_deterministic(model):
    a = build_template_bank(model, "IGKC", 0.0, 2.0, 21)
    b = build_template_bank(model, "IGKC", 0.0, 2.0, 21)
    assert np.array_equal(a.embeddings, b.embeddings)


def test_bank_rejects_bad_range(model):
    with pytest.raises(ContractViolation):
        build_template_bank(model, "NPY", 2.0, 1.0, 10)
    with pytest.raises(ContractViolation):
        build_template_bank(model, "NPY", 0.0, 1.0, 1)


def test_self_similarity_maximum():
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((50, 16))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    bank = TemplateBank(gene="X", values=np.arange(50) * 0.1, embeddings=emb)
    z = emb[23] * 4.0
    assert zero_shot_predict(z, bank) == pytest.approx(2.3)


def test_tie_break_smallest_index():
    emb = np.tile(np.array([[1.0, 0.0]]), (5, 1))
    bank = TemplateBank(gene="X", values=np.arange(5, dtype=float), embeddings=emb)
    assert zero_shot_predict(np.array([0.5, 0.5]), bank) == 0.0


def test_prediction_invariant_to_image_scaling():
    rng = np.random.default_rng(1)
    emb = rng.standard_normal((30, 8))
    bank = TemplateBank(gene="X", values=np.linspace(0, 1, 30), embeddings=emb)
    z = rng.standard_normal(8)
    assert zero_shot_predict(z, bank) == zero_shot_predict(7.5 * z, bank)


def test_zero_norm_embedding_is_numeric_failure():
    bank = TemplateBank(gene="X", values=np.array([0.0, 1.0]),
                        embeddings=np.eye(2))
    with pytest.raises(NumericError):
        zero_shot_predict(np.zeros(2), bank)


def test_similarities_bounded():
    rng = np.random.default_rng(2)
    emb = rng.standard_normal((40, 6))
    bank = TemplateBank(gene="X", values=np.linspace(0, 2, 40), embeddings=emb)
    sims = inference.similarity_profile(rng.standard_normal(6), bank)
    assert np.all(sims >= -1.0 - 1e-12) and np.all(sims <= 1.0 + 1e-12)


def test_grid_refinement_never_hurts(model):
    """K -> 2K-1 over the same range never worsens error on representable targets."""
    coarse = build_template_bank(model, "PLP1", 0.0, 2.0, 11)
    fine = build_template_bank(model, "PLP1", 0.0, 2.0, 21)
    for idx, target in enumerate(fine.values):
        z = fine.embeddings[idx]  # an image embedding whose true value is `target`
        err_c = abs(zero_shot_predict(z, coarse) - target)
        err_f = abs(zero_shot_predict(z, fine) - target)
        assert err_f <= err_c + 1e-9


def test_embed_batch_shapes_and_determinism(model, corpus):
    ids = corpus.all_ids()[:8]
    samples = [corpus.samples[i] for i in ids]
    zi, zt = inference.embed_batch(model, samples)
    assert zi.shape == (8, model.cfg.proj_dim)
    assert zt.shape == (8, model.cfg.proj_dim)
    zi2, zt2 = inference.embed_batch(model, samples)
    assert np.array_equal(zi, zi2) and np.array_equal(zt, zt2)


def test_embed_batch_row_independence(model, corpus):
    ids = corpus.all_ids()[:8]
    samples = [corpus.samples[i] for i in ids]
    zi_all, zt_all = inference.embed_batch(model, samples)
    zi_one, zt_one = inference.embed_batch(model, [samples[3]])
    assert np.allclose(zi_all[3], zi_one[0], atol=1e-5)
    assert np.allclose(zt_all[3], zt_one[0], atol=1e-5)


def test_bank_uses_frozen_weights(model):
    before = {n: t.data.copy() for n, t in model.store.items()}
    build_template_bank(model, "HBB", 0.0, 1.0, 11)
    for n, t in model.store.items():
        assert np.array_equal(before[n], t.data), n
