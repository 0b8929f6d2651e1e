"""Pair-aware adversarial training: value shuffling, critic, and reversal.

A small clipped critic scores pooled text embeddings; its loss is the mean
score of matched samples minus the mean score of value-shuffled samples. The
critic descends that loss directly, while encoder parameters see it through a
gradient-reversal layer and are pushed the opposite way.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .params import ParameterStore
from .sentences import GeneSentence, Vocabulary, make_sentence

CLIP_BOUND = 0.01


def shuffle_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation that avoids the identity: one resample, and the
    two-element case always yields the swap."""
    if n < 2:
        raise ContractViolation(f"need at least 2 values to shuffle, got {n}")
    if n == 2:
        return np.array([1, 0])
    perm = rng.permutation(n)
    if np.array_equal(perm, np.arange(n)):
        perm = rng.permutation(n)
    return perm


def shuffle_values(sentences: Sequence[GeneSentence], rng: np.random.Generator,
                   vocab: Vocabulary | None = None) -> list[GeneSentence]:
    """Rebuild the sentence list with expression values permuted across genes."""
    perm = shuffle_permutation(len(sentences), rng)
    if vocab is None:
        vocab = Vocabulary([s.gene_symbol for s in sentences])
    values = [sentences[j].value for j in perm]
    return [make_sentence(s.gene_symbol, values[i], vocab) for i, s in enumerate(sentences)]


class Critic:
    """Two-layer perceptron with weights clipped into [-c, c] after updates."""

    def __init__(self, store: ParameterStore, in_dim: int, hidden: int = 64,
                 clip_bound: float = CLIP_BOUND, prefix: str = "critic"):
        self.store = store
        self.prefix = prefix
        self.clip_bound = float(clip_bound)
        store.create(f"{prefix}/fc1/w", (in_dim, hidden))
        store.create(f"{prefix}/fc1/b", (hidden,), init="zeros")
        store.create(f"{prefix}/fc2/w", (hidden, 1))
        store.create(f"{prefix}/fc2/b", (1,), init="zeros")
        self.clip()

    def param_names(self) -> list[str]:
        return sorted(n for n, _ in self.store.items() if n.startswith(self.prefix + "/"))

    def params(self) -> dict[str, Tensor]:
        return {n: self.store[n] for n in self.param_names()}

    def score(self, z: Tensor) -> Tensor:
        """(B, d) embeddings -> (B, 1) scalar scores."""
        s = self.store
        h = ad.relu(z @ s[f"{self.prefix}/fc1/w"] + s[f"{self.prefix}/fc1/b"])
        return h @ s[f"{self.prefix}/fc2/w"] + s[f"{self.prefix}/fc2/b"]

    def clip(self) -> None:
        for name in self.param_names():
            t = self.store[name]
            t.data = np.clip(t.data, -self.clip_bound, self.clip_bound)


def critic_score(z: Tensor, critic: Critic) -> Tensor:
    """Score a single embedding vector -> scalar tensor."""
    if z.ndim != 1:
        raise ContractViolation(f"critic_score expects a (d,) vector, got {z.shape}")
    out = critic.score(ad.reshape(z, (1, z.shape[0])))
    return ad.reshape(out, ())


def pair_loss(z_matched: Tensor, z_shuffled: Tensor, critic: Critic) -> Tensor:
    """mean D(matched) - mean D(shuffled) over equal-sized batches."""
    if z_matched.shape != z_shuffled.shape:
        raise ContractViolation(
            f"batch shapes differ: {z_matched.shape} vs {z_shuffled.shape}"
        )
    return ad.mean_(critic.score(z_matched)) - ad.mean_(critic.score(z_shuffled))


def gradient_reversal(z: Tensor, lam: float) -> Tensor:
    """Identity forward; upstream gradients arrive multiplied by -lam."""
    return ad.grad_reverse(z, lam)
