"""InfoNCE, the combined objective, and pretraining-loop contracts."""

import math

import numpy as np
import pytest

from spotalign import data
from spotalign.autodiff import Tensor, compute_gradients
from spotalign.errors import ContractViolation
from spotalign.model import desk_model_config
from spotalign.training import (Checkpoint, TrainConfig, info_nce, pretrain,
                                total_loss)

PANEL = ("IGKC", "NPY", "PLP1", "HBB", "SCGB2A2", "MGP", "GFAP", "MBP")


@pytest.fixture(scope="module")
def small_corpus():
    return data.generate_synthetic_corpus(1, 64, PANEL, 32, seed=7)


# -- info_nce -------------------------------------------------------------------


def test_info_nce_single_pair_is_zero():
    z = Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
    assert float(info_nce(z, z, 1.0).data) == pytest.approx(0.0, abs=1e-7)


def test_info_nce_hand_value_two_identity_rows():
    z = Tensor(np.eye(2, dtype=np.float32))
    expected = -math.log(math.e / (math.e + 1.0))
    assert float(info_nce(z, z, 1.0).data) == pytest.approx(expected, rel=1e-5)


def test_info_nce_high_temperature_limit():
    rng = np.random.default_rng(0)
    m = 5
    zi = Tensor(rng.standard_normal((m, 8)).astype(np.float32))
    zt = Tensor(rng.standard_normal((m, 8)).astype(np.float32))
    loss = float(info_nce(zi, zt, 1e6).data)
    assert loss == pytest.approx(math.log(m), rel=1e-3)


def test_info_nce_row_permutation_invariant():
    rng = np.random.default_rng(1)
    m = 6
    zi = rng.standard_normal((m, 8)).astype(np.float32)
    zt = rng.standard_normal((m, 8)).astype(np.float32)
    perm = rng.permutation(m)
    a = float(info_nce(Tensor(zi), Tensor(zt), 0.3).data)
    b = float(info_nce(Tensor(zi[perm]), Tensor(zt[perm]), 0.3).data)
    assert a == pytest.approx(b, rel=1e-5)


def test_info_nce_nonnegative():
    rng = np.random.default_rng(2)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        zi = Tensor(rng.standard_normal((4, 6)).astype(np.float32))
        zt = Tensor(rng.standard_normal((4, 6)).astype(np.float32))
        assert float(info_nce(zi, zt, 0.5).data) >= 0.0


def test_info_nce_rejects_bad_temperature():
    z = Tensor(np.eye(2, dtype=np.float32))
    with pytest.raises(ContractViolation):
        info_nce(z, z, 0.0)
    with pytest.raises(ContractViolation):
        info_nce(z, z, -1.0)


def test_info_nce_scale_invariance_of_rows():
    rng = np.random.default_rng(3)
    zi = rng.standard_normal((4, 6)).astype(np.float32)
    zt = rng.standard_normal((4, 6)).astype(np.float32)
    a = float(info_nce(Tensor(zi), Tensor(zt), 0.7).data)
    b = float(info_nce(Tensor(3.0 * zi), Tensor(zt), 0.7).data)
    assert a == pytest.approx(b, rel=1e-5)


# -- total loss -------------------------------------------------------------------


def test_total_loss_all_zero():
    assert float(total_loss(0.0, 0.0, 0.0, 0.0, 1.0, 0.1).data) == 0.0


def test_total_loss_paper_weights():
    out = total_loss(1.0, 2.0, 3.0, 4.0, 1.0, 0.1)
    assert float(out.data) == pytest.approx(6.4, rel=1e-6)


def test_total_loss_mfm_toggle_drops_reconstruction():
    out = total_loss(1.0, 100.0, 100.0, 4.0, 1.0, 0.1, mfm=False)
    assert float(out.data) == pytest.approx(1.4, rel=1e-6)


def test_total_loss_paat_toggle_drops_pair():
    out = total_loss(1.0, 2.0, 3.0, 100.0, 1.0, 0.1, paat=False)
    assert float(out.data) == pytest.approx(6.0, rel=1e-6)


def test_total_loss_lambda2_linearity():
    l_pair = 0.37
    eps = 1e-3
    hi = float(total_loss(1.0, 0.5, 0.5, l_pair, 1.0, 0.1 + eps).data)
    lo = float(total_loss(1.0, 0.5, 0.5, l_pair, 1.0, 0.1 - eps).data)
    assert (hi - lo) / (2 * eps) == pytest.approx(l_pair, rel=1e-3)


def test_total_loss_keeps_gradient_paths():
    l_nce = Tensor(np.float32(1.0), requires_grad=True, name="a")
    l_pair = Tensor(np.float32(2.0), requires_grad=True, name="b")
    out = total_loss(l_nce, 0.0, 0.0, l_pair, 1.0, 0.1)
    grads = compute_gradients(out, {"a": l_nce, "b": l_pair})
    assert grads["a"] == pytest.approx(1.0)
    assert grads["b"] == pytest.approx(0.1, rel=1e-6)
    # severed when toggled off
    out_off = total_loss(l_nce, 0.0, 0.0, l_pair, 1.0, 0.1, paat=False)
    grads_off = compute_gradients(out_off, {"a": l_nce, "b": l_pair})
    assert grads_off["b"] == 0.0


# -- pretraining loop ---------------------------------------------------------------


def small_train_cfg(**kw):
    base = dict(batch_size=8, steps=6, base_lr=1e-3, seed=11)
    base.update(kw)
    return TrainConfig(**base)


def test_pretrain_deterministic_trajectories(small_corpus):
    a = pretrain(small_train_cfg(), small_corpus)
    b = pretrain(small_train_cfg(), small_corpus)
    assert np.array_equal(a.trajectory, b.trajectory)
    for name, t in a.model.store.items():
        assert np.array_equal(t.data, b.model.store[name].data), name


def test_pretrain_checkpoint_round_trip(tmp_path, small_corpus):
    ckpt = pretrain(small_train_cfg(steps=3), small_corpus)
    p1 = tmp_path / "run1" / "checkpoint.cmtp"
    ckpt.save(p1)
    loaded = Checkpoint.load(p1)
    p2 = tmp_path / "run2" / "checkpoint.cmtp"
    loaded.save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.step == ckpt.step
    assert np.array_equal(loaded.trajectory, ckpt.trajectory)


def test_all_toggles_off_reduces_to_plain_contrastive(small_corpus):
    cfg = small_train_cfg(mfm=False, paat=False, gene_embed=False, value_embed=False)
    ckpt = pretrain(cfg, small_corpus)
    traj = ckpt.trajectory
    cols = {"L_obs": 3, "L_unobs": 4, "L_pair": 5}
    for name, col in cols.items():
        assert np.all(traj[:, col] == 0.0), name
    assert np.allclose(traj[:, 2], traj[:, 6])  # L_total == L_nce


def test_mfm_toggle_severs_query_gradients(small_corpus):
    """With mfm off, reconstruction queries keep exactly zero gradient."""
    from spotalign.optim import AdamW
    from spotalign.training import train_step
    from spotalign.model import Model
    from spotalign.training import prepare_training_arrays

    cfg = small_train_cfg(mfm=False, steps=4)
    model_cfg = desk_model_config(small_corpus.panel)
    model = Model(model_cfg, seed=cfg.seed)
    ids = small_corpus.split_ids("pretrain")[: cfg.batch_size]
    patches, values = prepare_training_arrays(small_corpus, ids, 8, 64.0)
    opt = AdamW(model.trainable_params(), cfg.base_lr)
    critic_opt = AdamW(model.critic.params(), cfg.critic_lr)
    rngs = [np.random.default_rng(i) for i in range(2)]

    seen = {}
    orig_step = opt.step

    def capture(grads, lr=None):
        seen.update(grads)
        orig_step(grads, lr=lr)

    opt.step = capture
    from spotalign.autodiff import Tensor as T

    train_step(model, opt, critic_opt, T(patches), values, cfg, 1e-3,
               rngs[0], rngs[1], model_cfg.vision.num_patches, 0)
    assert np.all(seen["vision/queries"] == 0.0)
    assert np.all(seen["vision/mfg/wq"] == 0.0)
    assert np.any(seen["text/tok_emb"] != 0.0)


def test_pretrain_rejects_oversized_batch(small_corpus):
    with pytest.raises(ContractViolation):
        pretrain(small_train_cfg(batch_size=4096), small_corpus)


def test_trajectory_csv_format(tmp_path, small_corpus):
    ckpt = pretrain(small_train_cfg(steps=2), small_corpus)
    path = tmp_path / "traj.csv"
    ckpt.write_trajectory_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,lr,L_nce,L_obs,L_unobs,L_pair,L_total"
    assert len(lines) == 3
