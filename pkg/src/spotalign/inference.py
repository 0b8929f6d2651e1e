"""Frozen-model embedding extraction and zero-shot prediction by template matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Corpus, SpotSample, normalize_expression
from .errors import ContractViolation, NumericError, UnknownTokenError
from .model import Model
from .sentences import render_value
from .training import rounded_values


@dataclass(frozen=True)
class TemplateBank:
    """Candidate expression values with their frozen text embeddings."""

    gene: str
    values: np.ndarray  # (K,) strictly increasing, uniformly spaced
    embeddings: np.ndarray  # (K, proj_dim)

    def __post_init__(self):
        if len(self.values) < 2:
            raise ContractViolation("template bank needs at least two candidates")
        diffs = np.diff(self.values)
        if not np.all(diffs > 0):
            raise ContractViolation("template values must be strictly increasing")


def build_template_bank(model: Model, gene: str, v_min: float = 0.0,
                        v_max: float = 5.0, k: int = 501) -> TemplateBank:
    """Uniform value grid rendered through the training sentence pathway."""
    if not v_min < v_max:
        raise ContractViolation(f"need v_min < v_max, got [{v_min}, {v_max}]")
    if k < 2:
        raise ContractViolation(f"need at least 2 candidates, got {k}")
    if gene not in model.vocab.gene_ids:
        raise UnknownTokenError(f"gene symbol not in vocabulary: '{gene}'")
    grid = v_min + np.arange(k, dtype=np.float64) * ((v_max - v_min) / (k - 1))
    # candidates are rendered at two decimals exactly like training sentences
    values = np.array([float(render_value(v)) for v in grid], dtype=np.float64)
    gene_id = model.vocab.gene_ids[gene]
    with ad.no_grad():
        emb = model.sentence_embeddings(gene_id, values.astype(np.float32))
    return TemplateBank(gene=gene, values=values, embeddings=np.asarray(emb.data))


def similarity_profile(z_img: np.ndarray, bank: TemplateBank) -> np.ndarray:
    """Cosine similarity of one image embedding against every template."""
    z = np.asarray(z_img, dtype=np.float64).reshape(-1)
    zn = np.linalg.norm(z)
    bn = np.linalg.norm(bank.embeddings, axis=1)
    if zn == 0 or np.any(bn == 0):
        raise NumericError("zero-norm embedding in cosine similarity")
    return (bank.embeddings.astype(np.float64) @ z) / (bn * zn)


def zero_shot_predict(z_img: np.ndarray, bank: TemplateBank) -> float:
    """Value of the highest-similarity template; ties resolve to the smallest index."""
    sims = similarity_profile(z_img, bank)
    return float(bank.values[int(np.argmax(sims))])


def embed_batch(model: Model, samples: Sequence[SpotSample],
                library_scale: float = 64.0) -> tuple[np.ndarray, np.ndarray]:
    """Frozen image and text embeddings for a list of spots, row-aligned."""
    if not samples:
        raise ContractViolation("embed_batch needs at least one sample")
    images = np.stack([s.image for s in samples])
    values = np.stack([
        rounded_values(normalize_expression(s.counts, library_scale)) for s in samples
    ])
    with ad.no_grad():
        patches = Tensor(model.patch_batch(images))
        _, z_img = model.image_embeddings(patches)
        pooled = model.text_pooled(values)
        z_txt = model.text_embeddings(pooled)
    return np.asarray(z_img.data), np.asarray(z_txt.data)


def embed_images(model: Model, samples: Sequence[SpotSample]) -> np.ndarray:
    if not samples:
        raise ContractViolation("need at least one sample")
    images = np.stack([s.image for s in samples])
    with ad.no_grad():
        patches = Tensor(model.patch_batch(images))
        _, z_img = model.image_embeddings(patches)
    return np.asarray(z_img.data)


def zero_shot_gene_predictions(model: Model, corpus: Corpus, ids: Sequence[str],
                               genes: Sequence[str], v_min: float = 0.0,
                               v_max: float = 5.0, k: int = 501,
                               library_scale: float = 64.0,
                               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(predictions, truths, max similarities), each (num spots, num genes)."""
    samples = [corpus.samples[i] for i in ids]
    z_imgs = embed_images(model, samples)
    truths = np.stack([
        normalize_expression(s.counts, library_scale)[
            [list(corpus.panel).index(g) for g in genes]
        ]
        for s in samples
    ])
    preds = np.zeros((len(samples), len(genes)))
    sims_max = np.zeros_like(preds)
    for j, gene in enumerate(genes):
        bank = build_template_bank(model, gene, v_min, v_max, k)
        for i in range(len(samples)):
            sims = similarity_profile(z_imgs[i], bank)
            best = int(np.argmax(sims))
            preds[i, j] = bank.values[best]
            sims_max[i, j] = sims[best]
    return preds, truths, sims_max
