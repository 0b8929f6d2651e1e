"""Downstream evaluation: k-means clustering with ARI, and regression metrics
for supervised fine-tuning and zero-shot prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, compute_gradients
from .data import Corpus, normalize_expression
from .errors import ContractViolation
from .model import Model
from .optim import AdamW, cosine_lr

KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6


@dataclass
class ClusteringResult:
    labels: np.ndarray
    k: int
    inertia: float
    seed: int


@dataclass
class RegressionMetrics:
    mae_per_gene: dict[str, float]
    mae_overall: float
    pcc_overall: float | None  # None when the flattened vectors have no variance

    def format_report(self) -> str:
        lines = [f"MAE[{g}]: {v:.4f}" for g, v in self.mae_per_gene.items()]
        lines.append(f"MAE_overall: {self.mae_overall:.4f}")
        pcc = "undefined" if self.pcc_overall is None else f"{self.pcc_overall:.4f}"
        lines.append(f"PCC_overall: {pcc}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    n = x.shape[0]
    # k-means++ seeding
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total == 0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))

    prev_inertia = np.inf
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)
        # empty-cluster repair: re-seed on the point farthest from its centroid
        for j in range(k):
            if not np.any(labels == j):
                far = dists[np.arange(n), labels].argmax()
                centers[j] = x[far]
                labels[far] = j
        for j in range(k):
            centers[j] = x[labels == j].mean(axis=0)
        inertia = float(((x - centers[labels]) ** 2).sum())
        if abs(prev_inertia - inertia) <= KMEANS_TOL:
            prev_inertia = inertia
            break
        prev_inertia = inertia
    return labels, centers, prev_inertia


def kmeans_cluster(embeddings: np.ndarray, k: int, seed: int,
                   restarts: int = 4) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ seeding; best inertia over restarts."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ContractViolation(f"embeddings must be (n, d), got {x.shape}")
    if k < 2 or x.shape[0] < k:
        raise ContractViolation(f"need n >= k >= 2, got n={x.shape[0]}, k={k}")
    best: tuple[float, int, np.ndarray] | None = None
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        labels, _, inertia = _kmeans_once(x, k, rng)
        if best is None or inertia < best[0]:
            best = (inertia, seed + r, labels)
    inertia, used_seed, labels = best
    return ClusteringResult(labels=labels, k=k, inertia=inertia, seed=used_seed)


def adjusted_rand_index(pred: np.ndarray, truth: np.ndarray) -> float:
    """Chance-corrected partition agreement from the contingency table."""
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape or len(pred) < 2:
        raise ContractViolation("label vectors must have equal length >= 2")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    comb = lambda x: x * (x - 1) // 2
    sum_ij = comb(table).sum()
    sum_a = comb(table.sum(axis=1)).sum()
    sum_b = comb(table.sum(axis=0)).sum()
    total = comb(len(pred))
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0  # both partitions trivial (single cluster or all singletons)
    return float((sum_ij - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# regression metrics
# ---------------------------------------------------------------------------


def regression_metrics(pred: np.ndarray, truth: np.ndarray,
                       genes: Sequence[str] | None = None) -> RegressionMetrics:
    """Per-gene MAE, their mean, and Pearson correlation of the flattened pair."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.size < 2:
        raise ContractViolation(
            f"pred/truth must be matching (spots, genes) with >= 2 entries, "
            f"got {pred.shape} vs {truth.shape}"
        )
    if genes is None:
        genes = [f"g{j}" for j in range(pred.shape[1])]
    mae = {g: float(np.abs(pred[:, j] - truth[:, j]).mean()) for j, g in enumerate(genes)}
    mae_overall = float(np.mean(list(mae.values())))
    pcc = pearson(pred.reshape(-1), truth.reshape(-1))
    return RegressionMetrics(mae_per_gene=mae, mae_overall=mae_overall, pcc_overall=pcc)


def pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    """Pearson correlation; None when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    ac = a - a.mean()
    bc = b - b.mean()
    va, vb = (ac * ac).sum(), (bc * bc).sum()
    if va == 0 or vb == 0:
        return None
    return float((ac * bc).sum() / math.sqrt(va * vb))


# ---------------------------------------------------------------------------
# supervised fine-tuning
# ---------------------------------------------------------------------------


@dataclass
class FinetuneResult:
    predictions: np.ndarray  # (test spots, target genes)
    truth: np.ndarray
    metrics: RegressionMetrics
    train_ids: list[str]
    test_ids: list[str]


def finetune_regressor(model: Model, corpus: Corpus, target_genes: Sequence[str],
                       steps: int = 300, lr: float = 1e-3, batch_size: int = 16,
                       seed: int = 0, library_scale: float = 64.0,
                       weight_decay: float = 0.05, hidden: int = 64,
                       encoder_frozen: bool = False) -> FinetuneResult:
    """Fine-tune a two-layer head (and the image encoder) on the finetune split.

    The split is divided 80/20 into train and held-out spots; predictions and
    metrics come from the held-out part.
    """
    target_genes = list(target_genes)
    panel = list(corpus.panel)
    for g in target_genes:
        if g not in panel:
            raise ContractViolation(f"target gene '{g}' not in the corpus panel")
    ids = corpus.split_ids("finetune")
    if len(ids) < 2:
        raise ContractViolation("finetune split needs at least 2 spots")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_train = (4 * len(ids)) // 5
    if n_train == 0 or n_train == len(ids):
        raise ContractViolation("80/20 split leaves an empty side")
    train_ids = [ids[i] for i in order[:n_train]]
    test_ids = [ids[i] for i in order[n_train:]]

    gene_cols = [panel.index(g) for g in target_genes]
    patch_px = model.cfg.vision.patch_px

    def targets(spot_ids):
        return np.stack([
            normalize_expression(corpus.samples[i].counts, library_scale)[gene_cols]
            for i in spot_ids
        ]).astype(np.float32)

    from .data import tessellate

    x_train = np.stack([tessellate(corpus.samples[i].image, patch_px) for i in train_ids])
    y_train = targets(train_ids)

    store = model.store
    serial = 0
    while f"head{serial}/fc1/w" in store:  # fresh head per fine-tune call
        serial += 1
    head = f"head{serial}"
    store.create(f"{head}/fc1/w", (model.cfg.proj_dim, hidden))
    store.create(f"{head}/fc1/b", (hidden,), init="zeros")
    store.create(f"{head}/fc2/w", (hidden, len(target_genes)))
    store.create(f"{head}/fc2/b", (len(target_genes),), init="zeros")

    def head_forward(z: Tensor) -> Tensor:
        h = ad.gelu(z @ store[f"{head}/fc1/w"] + store[f"{head}/fc1/b"])
        return h @ store[f"{head}/fc2/w"] + store[f"{head}/fc2/b"]

    vision_prefixes = ("vision/", "proj/img/", f"{head}/")
    if encoder_frozen:
        trainable = {n: t for n, t in store.items() if n.startswith(f"{head}/")}
    else:
        trainable = {n: t for n, t in store.items()
                     if any(n.startswith(p) for p in vision_prefixes)}
    opt = AdamW(trainable, lr, weight_decay=weight_decay)

    batch_rng = np.random.default_rng(seed + 1)
    order = batch_rng.permutation(len(train_ids))
    cursor = 0
    bs = min(batch_size, len(train_ids))
    for step in range(steps):
        if cursor + bs > len(train_ids):
            order = batch_rng.permutation(len(train_ids))
            cursor = 0
        take = order[cursor : cursor + bs]
        cursor += bs
        patches = Tensor(x_train[take])
        _, z_img = model.image_embeddings(patches)
        pred = head_forward(z_img)
        diff = pred - Tensor(y_train[take])
        loss = ad.mean_(diff * diff)
        grads = compute_gradients(loss, trainable)
        opt.step(grads, lr=cosine_lr(step, steps, lr))

    x_test = np.stack([tessellate(corpus.samples[i].image, patch_px) for i in test_ids])
    y_test = targets(test_ids)
    with ad.no_grad():
        _, z_img = model.image_embeddings(Tensor(x_test))
        pred = head_forward(z_img)
    pred_arr = np.asarray(pred.data, dtype=np.float64)
    metrics = regression_metrics(pred_arr, y_test.astype(np.float64), target_genes)
    return FinetuneResult(predictions=pred_arr, truth=y_test.astype(np.float64),
                          metrics=metrics, train_ids=train_ids, test_ids=test_ids)
