"""Value shuffling, the clipped critic, pair loss, and adversarial direction."""

import numpy as np
import pytest

from spotalign import autodiff as ad
from spotalign.autodiff import Tensor, compute_gradients
from spotalign.errors import ContractViolation
from spotalign.optim import AdamW
from spotalign.paat import (Critic, critic_score, gradient_reversal, pair_loss,
                            shuffle_permutation, shuffle_values)
from spotalign.params import ParameterStore
from spotalign.sentences import Vocabulary, make_sentence


# -- shuffling -----------------------------------------------------------------


def test_two_values_always_swap():
    vocab = Vocabulary(("A", "B"))
    sentences = [make_sentence("A", 0.1, vocab), make_sentence("B", 0.9, vocab)]
    out = shuffle_values(sentences, np.random.default_rng(0), vocab)
    assert [s.value for s in out] == [0.9, 0.1]
    assert [s.gene_symbol for s in out] == ["A", "B"]


def test_shuffle_preserves_value_multiset():
    vocab = Vocabulary(tuple("ABCDEFG"))
    values = [0.1, 0.2, 0.2, 0.5, 0.9, 1.3, 2.0]
    sentences = [make_sentence(g, v, vocab) for g, v in zip("ABCDEFG", values)]
    for seed in range(20):
        out = shuffle_values(sentences, np.random.default_rng(seed), vocab)
        assert sorted(s.value for s in out) == sorted(values)
        assert [s.gene_symbol for s in out] == list("ABCDEFG")


def test_shuffle_deterministic_given_rng():
    a = shuffle_permutation(8, np.random.default_rng(3))
    b = shuffle_permutation(8, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_shuffle_mostly_avoids_identity():
    hits = sum(
        np.array_equal(shuffle_permutation(5, np.random.default_rng(s)), np.arange(5))
        for s in range(500)
    )
    # identity needs two consecutive identity draws: p = (1/120)^2
    assert hits == 0


def test_shuffle_rejects_single_value():
    with pytest.raises(ContractViolation):
        shuffle_permutation(1, np.random.default_rng(0))


# -- critic ---------------------------------------------------------------------


def make_critic(in_dim=4, hidden=3):
    store = ParameterStore(0)
    return Critic(store, in_dim, hidden)


def test_zero_weights_score_zero():
    critic = make_critic()
    for name in critic.param_names():
        critic.store[name].data = np.zeros_like(critic.store[name].data)
    z = Tensor(np.array([1.0, -2.0, 0.5, 3.0], dtype=np.float32))
    assert float(critic_score(z, critic).data) == 0.0


def test_hand_constructed_critic_score():
    # identity-like first layer, all-ones second layer, positive input: relu
    # passes values through and the score is their sum
    store = ParameterStore(1)
    critic = Critic(store, 2, 2, clip_bound=10.0)
    store["critic/fc1/w"].data = np.eye(2, dtype=np.float32)
    store["critic/fc1/b"].data = np.zeros(2, dtype=np.float32)
    store["critic/fc2/w"].data = np.ones((2, 1), dtype=np.float32)
    store["critic/fc2/b"].data = np.zeros(1, dtype=np.float32)
    z = Tensor(np.array([1.0, 2.0], dtype=np.float32))
    assert float(critic_score(z, critic).data) == pytest.approx(3.0)


def test_critic_deterministic():
    critic = make_critic()
    z = Tensor(np.array([0.3, 0.1, -0.2, 0.8], dtype=np.float32))
    assert float(critic_score(z, critic).data) == float(critic_score(z, critic).data)


def test_clipping_bounds_all_weights():
    critic = make_critic()
    for name in critic.param_names():
        critic.store[name].data = critic.store[name].data + np.float32(5.0)
    critic.clip()
    for name in critic.param_names():
        assert np.abs(critic.store[name].data).max() <= critic.clip_bound


# -- pair loss --------------------------------------------------------------------


def test_pair_loss_zero_on_identical_batches():
    critic = make_critic()
    rng = np.random.default_rng(2)
    z = Tensor(rng.standard_normal((6, 4)).astype(np.float32))
    assert float(pair_loss(z, z, critic).data) == 0.0


def test_pair_loss_zero_for_constant_critic():
    critic = make_critic()
    for name in critic.param_names():
        critic.store[name].data = np.zeros_like(critic.store[name].data)
    critic.store["critic/fc2/b"].data = np.array([0.7], dtype=np.float32)
    rng = np.random.default_rng(3)
    a = Tensor(rng.standard_normal((5, 4)).astype(np.float32))
    b = Tensor(rng.standard_normal((5, 4)).astype(np.float32))
    assert float(pair_loss(a, b, critic).data) == pytest.approx(0.0, abs=1e-7)


def test_pair_loss_mean_difference():
    # scores {1,3} vs {0,2} -> 2 - 1 = 1, using a critic that sums its input
    store = ParameterStore(4)
    critic = Critic(store, 1, 1, clip_bound=10.0)
    store["critic/fc1/w"].data = np.array([[1.0]], dtype=np.float32)
    store["critic/fc1/b"].data = np.zeros(1, dtype=np.float32)
    store["critic/fc2/w"].data = np.array([[1.0]], dtype=np.float32)
    store["critic/fc2/b"].data = np.zeros(1, dtype=np.float32)
    matched = Tensor(np.array([[1.0], [3.0]], dtype=np.float32))
    shuffled = Tensor(np.array([[0.0], [2.0]], dtype=np.float32))
    assert float(pair_loss(matched, shuffled, critic).data) == pytest.approx(1.0)


def test_pair_loss_batch_mismatch():
    critic = make_critic()
    with pytest.raises(ContractViolation):
        pair_loss(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4))), critic)


# -- adversarial direction ----------------------------------------------------------


def test_critic_step_decreases_pair_loss_encoder_fixed():
    critic = make_critic(in_dim=3, hidden=8)
    rng = np.random.default_rng(5)
    matched = Tensor(rng.standard_normal((16, 3)).astype(np.float32))
    shuffled = Tensor(rng.standard_normal((16, 3)).astype(np.float32) + 0.5)
    opt = AdamW(critic.params(), base_lr=1e-3, weight_decay=0.0)
    before = float(pair_loss(matched, shuffled, critic).data)
    for _ in range(50):
        loss = pair_loss(matched, shuffled, critic)
        opt.step(compute_gradients(loss, critic.params()))
        critic.clip()
    after = float(pair_loss(matched, shuffled, critic).data)
    assert after < before


def test_reversal_flips_encoder_gradient_direction():
    critic = make_critic(in_dim=3, hidden=8)
    rng = np.random.default_rng(6)
    w = Tensor(rng.standard_normal((3, 3)).astype(np.float32), requires_grad=True,
               name="enc/w")
    x_m = Tensor(rng.standard_normal((8, 3)).astype(np.float32))
    x_s = Tensor(rng.standard_normal((8, 3)).astype(np.float32))

    def encoder_loss(reversed_path):
        zm, zs = x_m @ w, x_s @ w
        if reversed_path:
            zm, zs = gradient_reversal(zm, 1.0), gradient_reversal(zs, 1.0)
        return pair_loss(zm, zs, critic)

    g_plain = compute_gradients(encoder_loss(False), {"enc/w": w})["enc/w"]
    g_reversed = compute_gradients(encoder_loss(True), {"enc/w": w})["enc/w"]
    assert np.allclose(g_reversed, -g_plain, atol=1e-6)
