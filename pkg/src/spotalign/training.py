"""Contrastive alignment loss, the combined objective, and the pretraining loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, compute_gradients
from .data import Corpus, normalize_expression
from .errors import ContractViolation, NumericError
from .model import Model, ModelConfig, desk_model_config
from .optim import AdamW, cosine_lr
from .paat import gradient_reversal, pair_loss, shuffle_permutation
from .params import read_records
from .vision import mfm_losses_batched, sample_mask

TRAJECTORY_COLUMNS = ("step", "lr", "L_nce", "L_obs", "L_unobs", "L_pair", "L_total")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 15
    steps: int | None = 300  # overrides epochs when set
    base_lr: float = 3e-3
    weight_decay: float = 0.05
    critic_lr: float = 1e-3
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda_grl: float = 1.0
    mask_ratio: float = 0.5
    temperature_init: float = 0.07
    clip_bound: float = 0.01
    library_scale: float = 64.0
    mfm: bool = True
    paat: bool = True
    gene_embed: bool = True
    value_embed: bool = True
    seed: int = 7

    def __post_init__(self):
        if self.batch_size < 2:
            raise ContractViolation("contrastive training needs batch_size >= 2")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ContractViolation("loss weights must be non-negative")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _l2_normalize_rows(z: Tensor) -> Tensor:
    norms = ad.sqrt(ad.sum_(z * z, axis=-1, keepdims=True))
    return z / norms


def info_nce(z_img: Tensor, z_txt: Tensor, tau) -> Tensor:
    """Symmetric InfoNCE with index-matched positives.

    Rows are L2-normalized, logits are scaled by 1/tau, and the loss averages
    the row-wise (image to text) and column-wise (text to image) cross
    entropies against the diagonal.
    """
    if z_img.shape != z_txt.shape or z_img.ndim != 2:
        raise ContractViolation(
            f"paired embedding matrices must match: {z_img.shape} vs {z_txt.shape}"
        )
    if not isinstance(tau, Tensor):
        if tau <= 0:
            raise ContractViolation(f"temperature must be positive, got {tau}")
        tau = Tensor(np.float32(tau))
    elif float(tau.data) <= 0:
        raise ContractViolation("temperature must be positive")
    m = z_img.shape[0]
    zi = _l2_normalize_rows(z_img)
    zt = _l2_normalize_rows(z_txt)
    logits = (zi @ ad.swap_last(zt)) / tau
    eye = Tensor(np.eye(m, dtype=logits.dtype))
    row_ce = -(ad.sum_(ad.log_softmax(logits) * eye) / m)
    col_ce = -(ad.sum_(ad.log_softmax(ad.swap_last(logits)) * eye) / m)
    return (row_ce + col_ce) * 0.5


def total_loss(l_nce, l_obs, l_unobs, l_pair, lambda1: float, lambda2: float,
               mfm: bool = True, paat: bool = True) -> Tensor:
    """Combined objective; disabled terms contribute nothing and carry no graph."""
    total = l_nce if isinstance(l_nce, Tensor) else Tensor(np.float32(l_nce))
    if mfm:
        if l_obs is None or l_unobs is None:
            raise ContractViolation("mfm enabled but reconstruction losses missing")
        total = total + np.float32(lambda1) * (_lift(l_obs) + _lift(l_unobs))
    if paat:
        if l_pair is None:
            raise ContractViolation("paat enabled but pair loss missing")
        total = total + np.float32(lambda2) * _lift(l_pair)
    return total


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.float32(x))


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    model: Model
    opt_state: dict[str, np.ndarray]
    step: int
    trajectory: np.ndarray  # (steps, 7) float32, TRAJECTORY_COLUMNS order

    def save(self, path: str | Path) -> None:
        extra = {f"opt/model/{k}": v for k, v in self.opt_state.items()
                 if not k.startswith("critic::")}
        extra.update({f"opt/critic/{k.split('::', 1)[1]}": v
                      for k, v in self.opt_state.items() if k.startswith("critic::")})
        extra["meta/step"] = np.array(float(self.step), dtype=np.float32)
        extra["meta/trajectory"] = self.trajectory.astype(np.float32)
        self.model.save(path, extra=extra)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        model, rest = Model.load(path)
        arrays = read_records(path)
        opt_state: dict[str, np.ndarray] = {}
        for key, val in rest.items():
            if key.startswith("opt/model/"):
                opt_state[key[len("opt/model/"):]] = val
            elif key.startswith("opt/critic/"):
                opt_state["critic::" + key[len("opt/critic/"):]] = val
        step = int(float(arrays["meta/step"]))
        trajectory = arrays.get("meta/trajectory", np.zeros((0, 7), dtype=np.float32))
        return cls(model=model, opt_state=opt_state, step=step, trajectory=trajectory)

    def write_trajectory_csv(self, path: str | Path) -> None:
        lines = [",".join(TRAJECTORY_COLUMNS)]
        for row in self.trajectory:
            lines.append(",".join(_fmt(x) for x in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(x: float) -> str:
    return f"{float(x):.8g}"


def rounded_values(normalized: np.ndarray) -> np.ndarray:
    """Round to the two decimals the sentence template renders."""
    flat = [float(f"{v:.2f}") for v in np.asarray(normalized, dtype=np.float64).reshape(-1)]
    return np.array(flat, dtype=np.float32).reshape(np.asarray(normalized).shape)


def prepare_training_arrays(corpus: Corpus, ids: list[str], patch_px: int,
                            library_scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Stack patch blocks and rounded normalized expression for the given spots."""
    from .data import tessellate

    patches = np.stack([tessellate(corpus.samples[i].image, patch_px) for i in ids])
    values = np.stack([
        rounded_values(normalize_expression(corpus.samples[i].counts, library_scale))
        for i in ids
    ])
    return patches.astype(np.float32), values.astype(np.float32)


def pretrain(cfg: TrainConfig, corpus: Corpus, model_cfg: ModelConfig | None = None,
             log_every: int = 0) -> Checkpoint:
    """Run the full pretraining loop and return the final checkpoint."""
    ids = corpus.split_ids("pretrain")
    if not ids:
        raise ContractViolation("corpus has an empty pretrain split")
    if cfg.batch_size > len(ids):
        raise ContractViolation(
            f"batch size {cfg.batch_size} exceeds pretrain split size {len(ids)}"
        )
    if model_cfg is None:
        model_cfg = desk_model_config(corpus.panel, mask_ratio=cfg.mask_ratio,
                                      temperature_init=cfg.temperature_init)
    model = Model(model_cfg, seed=cfg.seed)

    seq = np.random.SeedSequence(cfg.seed)
    batch_rng, mask_rng, shuffle_rng = (np.random.default_rng(s) for s in seq.spawn(3))

    patches_all, values_all = prepare_training_arrays(
        corpus, ids, model_cfg.vision.patch_px, cfg.library_scale
    )

    steps_per_epoch = len(ids) // cfg.batch_size
    total_steps = cfg.steps if cfg.steps is not None else cfg.epochs * steps_per_epoch
    if total_steps < 1:
        raise ContractViolation("training schedule resolves to zero steps")

    opt = AdamW(model.trainable_params(), cfg.base_lr, weight_decay=cfg.weight_decay)
    critic_opt = AdamW(model.critic.params(), cfg.critic_lr, weight_decay=0.0)

    num_patches = model_cfg.vision.num_patches
    trajectory = np.zeros((total_steps, len(TRAJECTORY_COLUMNS)), dtype=np.float32)
    order = batch_rng.permutation(len(ids))
    cursor = 0

    for step in range(total_steps):
        if cursor + cfg.batch_size > len(ids):
            order = batch_rng.permutation(len(ids))
            cursor = 0
        take = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size

        patches = Tensor(patches_all[take])
        values = values_all[take]
        lr = cosine_lr(step, total_steps, cfg.base_lr)

        losses = train_step(model, opt, critic_opt, patches, values, cfg, lr,
                            mask_rng, shuffle_rng, num_patches, step)
        trajectory[step] = [step, lr] + [losses[k] for k in TRAJECTORY_COLUMNS[2:]]
        if log_every and step % log_every == 0:
            print(f"step {step:5d} lr {lr:.2e} " +
                  " ".join(f"{k}={losses[k]:.4f}" for k in TRAJECTORY_COLUMNS[2:]))

    opt_state = dict(opt.state_arrays())
    opt_state.update({f"critic::{k}": v for k, v in critic_opt.state_arrays().items()})
    return Checkpoint(model=model, opt_state=opt_state, step=total_steps,
                      trajectory=trajectory)


def train_step(model: Model, opt: AdamW, critic_opt: AdamW, patches: Tensor,
               values: np.ndarray, cfg: TrainConfig, lr: float,
               mask_rng: np.random.Generator, shuffle_rng: np.random.Generator,
               num_patches: int, step: int) -> dict[str, float]:
    """One alternating update: critic first, then the joint model step."""
    m = values.shape[0]

    feats, z_img = model.image_embeddings(patches)

    l_obs = l_unobs = None
    if cfg.mfm:
        plans = [sample_mask(num_patches, cfg.mask_ratio, mask_rng) for _ in range(m)]
        obs_idx = np.array([p.observed for p in plans], dtype=np.int64)
        mask_idx = np.array([p.masked for p in plans], dtype=np.int64)
        observable = model.vision.encode_masked(patches, obs_idx)
        predicted = model.vision.reconstruct_masked(observable, mask_idx)
        l_obs, l_unobs = mfm_losses_batched(feats, observable, predicted, obs_idx, mask_idx)

    pooled = model.text_pooled(values, use_gene=cfg.gene_embed, use_value=cfg.value_embed)
    z_txt = model.text_embeddings(pooled)
    l_nce = info_nce(z_img, z_txt, model.temperature())

    l_pair = None
    if cfg.paat:
        perms = np.stack([shuffle_permutation(values.shape[1], shuffle_rng)
                          for _ in range(m)])
        shuffled = np.take_along_axis(values, perms, axis=1)
        pooled_shuf = model.text_pooled(shuffled, use_gene=cfg.gene_embed,
                                        use_value=cfg.value_embed)
        # critic step on detached embeddings, then weight clipping
        l_critic = pair_loss(pooled.detach(), pooled_shuf.detach(), model.critic)
        critic_grads = compute_gradients(l_critic, model.critic.params())
        critic_opt.step(critic_grads)
        model.critic.clip()
        # model-side pair loss through the reversal layer, scored by the
        # freshly updated critic
        l_pair = pair_loss(gradient_reversal(pooled, cfg.lambda_grl),
                           gradient_reversal(pooled_shuf, cfg.lambda_grl),
                           model.critic)

    loss = total_loss(l_nce, l_obs, l_unobs, l_pair, cfg.lambda1, cfg.lambda2,
                      mfm=cfg.mfm, paat=cfg.paat)

    out = {
        "L_nce": float(l_nce.data),
        "L_obs": float(l_obs.data) if l_obs is not None else 0.0,
        "L_unobs": float(l_unobs.data) if l_unobs is not None else 0.0,
        "L_pair": float(l_pair.data) if l_pair is not None else 0.0,
        "L_total": float(loss.data),
    }
    if not all(np.isfinite(v) for v in out.values()):
        parts = ", ".join(f"{k}={v!r}" for k, v in out.items())
        raise NumericError(f"non-finite loss at step {step}: {parts}")

    grads = compute_gradients(loss, model.trainable_params())
    opt.step(grads, lr=lr)
    model.clamp_temperature()
    return out
