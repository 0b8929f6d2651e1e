"""Gene-text branch: per-sentence transformer with gene and value slot embeddings.

All sentences share one encoder applied independently. The gene slot token is
enriched with a learned per-symbol vector, the value slot with an affine map
of the numeric magnitude; a sample's sentence embeddings are mean-pooled into
its text vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad, nn
from .autodiff import Tensor
from .errors import ContractViolation, UnknownTokenError
from .params import ParameterStore
from .sentences import MAX_TOKENS, GeneSentence, Vocabulary


@dataclass(frozen=True)
class TextConfig:
    dim: int = 64
    layers: int = 2
    heads: int = 4
    max_tokens: int = MAX_TOKENS

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ContractViolation(f"dim {self.dim} not divisible by heads {self.heads}")


class TextBranch:
    """Parameter owner and forward passes for the sentence side."""

    def __init__(self, cfg: TextConfig, vocab: Vocabulary, store: ParameterStore,
                 prefix: str = "text"):
        self.cfg = cfg
        self.vocab = vocab
        self.store = store
        self.prefix = prefix
        p = prefix
        store.create(f"{p}/tok_emb", (len(vocab), cfg.dim))
        store.create(f"{p}/pos", (cfg.max_tokens, cfg.dim))
        store.create(f"{p}/gene_emb", (len(vocab.panel), cfg.dim))
        store.create(f"{p}/value/w", (cfg.dim, 1))
        store.create(f"{p}/value/b", (cfg.dim,), init="zeros")
        nn.init_encoder(store, f"{p}/enc", cfg.layers, cfg.dim)
        nn.init_linear(store, f"{p}/p_sent", cfg.dim, cfg.dim, bias=False)

    def value_embedding(self, values) -> Tensor:
        """e_v = W_v * v + b_v for a scalar or a batch of scalars -> (B, d)."""
        arr = np.atleast_1d(np.asarray(values, dtype=np.float32))
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("expression values must be finite")
        v = Tensor(arr.reshape(-1, 1))
        w = self.store[f"{self.prefix}/value/w"]
        return v @ ad.swap_last(w) + self.store[f"{self.prefix}/value/b"]

    def encode_batch(self, token_ids: np.ndarray, gene_pos: int, value_pos: int,
                     gene_ids: np.ndarray, values: np.ndarray,
                     use_gene: bool = True, use_value: bool = True) -> Tensor:
        """Encode a batch of same-template sentences -> (B, d) embeddings."""
        token_ids = np.asarray(token_ids)
        b, t = token_ids.shape
        s = self.store
        p = self.prefix
        # gene slot uses the shared placeholder base embedding; identity is
        # contributed solely by the dedicated gene-name embedding below
        base_ids = token_ids.copy()
        base_ids[:, gene_pos] = self.vocab.gene_base_id
        x = ad.gather_rows(s[f"{p}/tok_emb"], base_ids)
        x = x + ad.gather_rows(s[f"{p}/pos"], np.arange(t))
        if use_gene:
            e_g = ad.gather_rows(s[f"{p}/gene_emb"], np.asarray(gene_ids))
            x = x + ad.reshape(e_g, (b, 1, self.cfg.dim)) * _slot_mask(t, gene_pos)
        if use_value:
            e_v = self.value_embedding(values)
            x = x + ad.reshape(e_v, (b, 1, self.cfg.dim)) * _slot_mask(t, value_pos)
        x = nn.encoder(s, f"{p}/enc", x, self.cfg.layers, self.cfg.heads, causal=True)
        last = ad.gather_tokens(x, np.full((b, 1), t - 1, dtype=np.int64))
        h = ad.reshape(last, (b, self.cfg.dim))
        return nn.linear(s, f"{p}/p_sent", h)

    def encode_sentence(self, sentence: GeneSentence, use_gene: bool = True,
                        use_value: bool = True) -> Tensor:
        """Single-sentence convenience wrapper -> (d,) embedding."""
        if sentence.gene_symbol not in self.vocab.gene_ids:
            raise UnknownTokenError(f"gene symbol not in vocabulary: '{sentence.gene_symbol}'")
        h = self.encode_batch(
            np.array([sentence.token_ids], dtype=np.int64),
            sentence.gene_pos,
            sentence.value_pos,
            np.array([sentence.gene_id], dtype=np.int64),
            np.array([sentence.value], dtype=np.float32),
            use_gene=use_gene,
            use_value=use_value,
        )
        return ad.reshape(h, (self.cfg.dim,))


def _slot_mask(t: int, pos: int) -> Tensor:
    mask = np.zeros((1, t, 1), dtype=np.float32)
    mask[0, pos, 0] = 1.0
    return Tensor(mask)


def pool_sentences(embeddings: Tensor | Sequence[Tensor]) -> Tensor:
    """Mean of a sample's sentence embeddings: (N, d) or list of (d,) -> (d,)."""
    if isinstance(embeddings, Tensor):
        if embeddings.ndim != 2 or embeddings.shape[0] < 1:
            raise ContractViolation(f"expected a non-empty (N, d) stack, got {embeddings.shape}")
        return ad.mean_(embeddings, axis=0)
    if len(embeddings) == 0:
        raise ContractViolation("cannot pool an empty sentence list")
    total = embeddings[0]
    for h in embeddings[1:]:
        total = total + h
    return total * (1.0 / len(embeddings))
