"""Vision branch: patch encoder with dual-branch masked feature modeling.

The same encoder weights process the complete patch sequence (full branch)
and the observable subset (masked branch). A single cross-attention layer
with one learnable query per patch position predicts the features of hidden
patches from the visible ones. Full-branch features act as fixed targets for
the two reconstruction losses; they keep their gradient path only through
the pooled image embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad, nn
from .autodiff import Tensor
from .errors import ContractViolation
from .params import ParameterStore


@dataclass(frozen=True)
class VisionConfig:
    image_px: int = 32
    patch_px: int = 8
    dim: int = 64
    layers: int = 2
    heads: int = 4
    mask_ratio: float = 0.5
    channels: int = 3

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ContractViolation(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ContractViolation(f"mask ratio must lie strictly in (0,1), got {self.mask_ratio}")
        if self.image_px % self.patch_px != 0:
            raise ContractViolation(
                f"image size {self.image_px} not divisible by patch {self.patch_px}"
            )

    @property
    def num_patches(self) -> int:
        return (self.image_px // self.patch_px) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_px * self.patch_px


@dataclass(frozen=True)
class MaskPlan:
    """Partition of patch indices into observable and unobservable sets."""

    observed: tuple[int, ...]
    masked: tuple[int, ...]
    total: int

    def __post_init__(self):
        o, u = set(self.observed), set(self.masked)
        if o & u or (o | u) != set(range(self.total)):
            raise ContractViolation("mask plan must partition {0..P-1}")


def sample_mask(num_patches: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Uniformly choose floor(ratio * P) unobservable positions."""
    if num_patches < 2:
        raise ContractViolation(f"need at least 2 patches to mask, got {num_patches}")
    if not 0.0 < ratio < 1.0:
        raise ContractViolation(f"mask ratio must lie strictly in (0,1), got {ratio}")
    n_mask = int(math.floor(ratio * num_patches))
    if n_mask < 1 or n_mask > num_patches - 1:
        raise ContractViolation(
            f"mask ratio {ratio} leaves an empty branch for P={num_patches}"
        )
    perm = rng.permutation(num_patches)
    masked = np.sort(perm[:n_mask])
    observed = np.sort(perm[n_mask:])
    return MaskPlan(tuple(int(i) for i in observed), tuple(int(i) for i in masked),
                    num_patches)


class VisionBranch:
    """Parameter owner and forward passes for the image side."""

    def __init__(self, cfg: VisionConfig, store: ParameterStore, prefix: str = "vision"):
        self.cfg = cfg
        self.store = store
        self.prefix = prefix
        p = prefix
        nn.init_linear(store, f"{p}/patch_embed", cfg.patch_dim, cfg.dim)
        store.create(f"{p}/pos", (cfg.num_patches, cfg.dim))
        nn.init_encoder(store, f"{p}/enc", cfg.layers, cfg.dim)
        store.create(f"{p}/queries", (cfg.num_patches, cfg.dim))
        for part in ("wq", "wk", "wv"):
            store.create(f"{p}/mfg/{part}", (cfg.dim, cfg.dim))

    # -- embedding of raw patch blocks -------------------------------------

    def _embed(self, patches: Tensor) -> Tensor:
        b, p, pd = patches.shape
        if p != self.cfg.num_patches or pd != self.cfg.patch_dim:
            raise ContractViolation(
                f"patch tensor {patches.shape} does not match config "
                f"(P={self.cfg.num_patches}, patch_dim={self.cfg.patch_dim})"
            )
        x = nn.linear(self.store, f"{self.prefix}/patch_embed", patches)
        return x + self.store[f"{self.prefix}/pos"]

    def encode_full(self, patches: Tensor) -> Tensor:
        """All patches -> (B, P, d) features."""
        x = self._embed(patches)
        return nn.encoder(self.store, f"{self.prefix}/enc", x, self.cfg.layers, self.cfg.heads)

    def encode_masked(self, patches: Tensor, observed_idx: np.ndarray) -> Tensor:
        """Observable patches only -> (B, |O|, d); weights shared with encode_full."""
        x = self._embed(patches)
        x = ad.gather_tokens(x, observed_idx)
        return nn.encoder(self.store, f"{self.prefix}/enc", x, self.cfg.layers, self.cfg.heads)

    def reconstruct_masked(self, observable: Tensor, masked_idx: np.ndarray) -> Tensor:
        """Cross-attention from per-position queries onto visible features."""
        masked_idx = np.asarray(masked_idx)
        if masked_idx.ndim != 2 or observable.ndim != 3:
            raise ContractViolation("reconstruct_masked expects batched inputs")
        if np.any(masked_idx < 0) or np.any(masked_idx >= self.cfg.num_patches):
            raise ContractViolation("masked position without a matching query")
        s = self.store
        queries = ad.gather_rows(s[f"{self.prefix}/queries"], masked_idx)  # (B, U, d)
        q = queries @ s[f"{self.prefix}/mfg/wq"]
        k = observable @ s[f"{self.prefix}/mfg/wk"]
        v = observable @ s[f"{self.prefix}/mfg/wv"]
        scores = (q @ ad.swap_last(k)) * (1.0 / math.sqrt(self.cfg.dim))
        return ad.softmax(scores) @ v

    def image_embedding(self, full_features: Tensor, proj_w: Tensor) -> Tensor:
        """Mean over patches, then the linear projection into the shared space."""
        pooled = ad.mean_(full_features, axis=1)
        return pooled @ proj_w


def mfm_losses(full: Tensor, observable: Tensor, predicted: Tensor,
               plan: MaskPlan) -> tuple[Tensor, Tensor]:
    """Reconstruction losses for one image.

    full: (P, d) features of the complete sequence (treated as fixed targets),
    observable: (|O|, d) masked-branch features, predicted: (|U|, d) outputs of
    the mask feature generator. Each loss is the mean squared L2 residual over
    its patch set.
    """
    if not plan.observed or not plan.masked:
        raise ContractViolation("mask plan leaves an empty patch set")
    if observable.shape[0] != len(plan.observed) or predicted.shape[0] != len(plan.masked):
        raise ContractViolation("feature row counts do not match the mask plan")
    target = ad.stop_grad(full)
    obs_idx = np.asarray(plan.observed)
    mask_idx = np.asarray(plan.masked)
    d_obs = ad.gather_rows(target, obs_idx) - observable
    d_un = ad.gather_rows(target, mask_idx) - predicted
    l_obs = ad.mean_(ad.sum_(d_obs * d_obs, axis=-1))
    l_unobs = ad.mean_(ad.sum_(d_un * d_un, axis=-1))
    return l_obs, l_unobs


def mfm_losses_batched(full: Tensor, observable: Tensor, predicted: Tensor,
                       observed_idx: np.ndarray, masked_idx: np.ndarray,
                       ) -> tuple[Tensor, Tensor]:
    """Batch version of mfm_losses; equals the mean of the per-image losses."""
    target = ad.stop_grad(full)
    d_obs = ad.gather_tokens(target, observed_idx) - observable
    d_un = ad.gather_tokens(target, masked_idx) - predicted
    l_obs = ad.mean_(ad.sum_(d_obs * d_obs, axis=-1))
    l_unobs = ad.mean_(ad.sum_(d_un * d_un, axis=-1))
    return l_obs, l_unobs
