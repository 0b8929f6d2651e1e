"""Model assembly: both branches, projection heads, temperature, and critic
over one parameter store, plus checkpoint save/load."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad, data as dataio
from .autodiff import Tensor
from .errors import ContractViolation, InputMismatch
from .genetext import TextBranch, TextConfig
from .paat import CLIP_BOUND, Critic
from .params import ParameterStore, read_records, write_records
from .sentences import Vocabulary, make_sentence
from .vision import VisionBranch, VisionConfig

TAU_MIN, TAU_MAX = 1e-3, 1.0


@dataclass(frozen=True)
class ModelConfig:
    panel: tuple[str, ...]
    vision: VisionConfig = field(default_factory=VisionConfig)
    text: TextConfig = field(default_factory=TextConfig)
    proj_dim: int = 64
    critic_hidden: int = 64
    temperature_init: float = 0.07
    clip_bound: float = CLIP_BOUND

    def __post_init__(self):
        if not self.panel:
            raise ContractViolation("model needs a non-empty gene panel")
        if not TAU_MIN <= self.temperature_init <= TAU_MAX:
            raise ContractViolation(
                f"temperature init {self.temperature_init} outside [{TAU_MIN}, {TAU_MAX}]"
            )


class Model:
    """Two-tower model with masked feature modeling and a pairing critic."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.store = ParameterStore(seed)
        self.vocab = Vocabulary(cfg.panel)
        self.vision = VisionBranch(cfg.vision, self.store)
        self.text = TextBranch(cfg.text, self.vocab, self.store)
        self.store.create("proj/img/w", (cfg.vision.dim, cfg.proj_dim))
        self.store.create("proj/txt/w", (cfg.text.dim, cfg.proj_dim))
        self.store.create_const("temp/log_tau", math.log(cfg.temperature_init))
        self.critic = Critic(self.store, cfg.text.dim, cfg.critic_hidden,
                             clip_bound=cfg.clip_bound)
        # one tokenization per panel gene; every sample reuses this layout
        sentences = [make_sentence(sym, 0.0, self.vocab) for sym in cfg.panel]
        self.panel_tokens = np.array([s.token_ids for s in sentences], dtype=np.int64)
        self.gene_pos = sentences[0].gene_pos
        self.value_pos = sentences[0].value_pos
        self.panel_gene_ids = np.arange(len(cfg.panel), dtype=np.int64)

    # -- parameter groups ---------------------------------------------------

    def trainable_params(self) -> dict[str, Tensor]:
        """Everything the joint model step updates (critic excluded)."""
        crit = self.critic.prefix + "/"
        return {n: t for n, t in self.store.items() if not n.startswith(crit)}

    def temperature(self) -> Tensor:
        return ad.exp(self.store["temp/log_tau"])

    def clamp_temperature(self) -> None:
        t = self.store["temp/log_tau"]
        t.data = np.clip(t.data, math.log(TAU_MIN), math.log(TAU_MAX))

    # -- forward helpers ----------------------------------------------------

    def patch_batch(self, images: np.ndarray) -> np.ndarray:
        """(B, C, H, W) images -> (B, P, patch_dim) float32 blocks."""
        return np.stack([dataio.tessellate(im, self.cfg.vision.patch_px) for im in images])

    def image_embeddings(self, patches: Tensor) -> tuple[Tensor, Tensor]:
        """Full-branch features and projected embeddings: ((B,P,d), (B,proj))."""
        feats = self.vision.encode_full(patches)
        return feats, self.vision.image_embedding(feats, self.store["proj/img/w"])

    def text_pooled(self, values: np.ndarray, use_gene: bool = True,
                    use_value: bool = True) -> Tensor:
        """(B, N) per-gene values -> (B, d) pooled sentence embeddings."""
        values = np.asarray(values, dtype=np.float32)
        b, n = values.shape
        if n != len(self.cfg.panel):
            raise ContractViolation(
                f"value matrix has {n} genes but the panel has {len(self.cfg.panel)}"
            )
        toks = np.tile(self.panel_tokens, (b, 1))
        gene_ids = np.tile(self.panel_gene_ids, b)
        h = self.text.encode_batch(toks, self.gene_pos, self.value_pos, gene_ids,
                                   values.reshape(-1), use_gene=use_gene,
                                   use_value=use_value)
        h = ad.reshape(h, (b, n, self.cfg.text.dim))
        return ad.mean_(h, axis=1)

    def text_embeddings(self, pooled: Tensor) -> Tensor:
        return pooled @ self.store["proj/txt/w"]

    def sentence_embeddings(self, gene_id: int, values: np.ndarray,
                            use_gene: bool = True, use_value: bool = True) -> Tensor:
        """Embed single-gene sentences (N=1 pooling) -> (K, proj_dim)."""
        values = np.asarray(values, dtype=np.float32).reshape(-1)
        toks = np.tile(self.panel_tokens[gene_id], (len(values), 1))
        gene_ids = np.full(len(values), gene_id, dtype=np.int64)
        h = self.text.encode_batch(toks, self.gene_pos, self.value_pos, gene_ids, values,
                                   use_gene=use_gene, use_value=use_value)
        return h @ self.store["proj/txt/w"]

    # -- persistence ----------------------------------------------------------

    def meta_arrays(self) -> dict[str, np.ndarray]:
        v, t = self.cfg.vision, self.cfg.text
        scalars = {
            "meta/format": 1.0,
            "meta/image_px": v.image_px, "meta/vision_patch": v.patch_px,
            "meta/vision_dim": v.dim, "meta/vision_layers": v.layers,
            "meta/vision_heads": v.heads, "meta/channels": v.channels,
            "meta/mask_ratio": v.mask_ratio,
            "meta/text_dim": t.dim, "meta/text_layers": t.layers,
            "meta/text_heads": t.heads, "meta/max_tokens": t.max_tokens,
            "meta/proj_dim": self.cfg.proj_dim,
            "meta/critic_hidden": self.cfg.critic_hidden,
            "meta/temperature_init": self.cfg.temperature_init,
            "meta/clip_bound": self.cfg.clip_bound,
            "meta/panel_size": len(self.cfg.panel),
        }
        return {k: np.array(val, dtype=np.float32) for k, val in scalars.items()}

    def save(self, path: str | Path, extra: dict[str, np.ndarray] | None = None) -> None:
        path = Path(path)
        arrays = self.store.arrays()
        arrays.update(self.meta_arrays())
        if extra:
            arrays.update(extra)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_records(path, arrays)
        self.vocab.save(path.parent / "vocab.txt")

    @classmethod
    def load(cls, path: str | Path, vocab_path: str | Path | None = None,
             ) -> tuple["Model", dict[str, np.ndarray]]:
        """Rebuild a model from a checkpoint file; returns (model, other records)."""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        arrays = read_records(path)
        if vocab_path is None:
            vocab_path = path.parent / "vocab.txt"
        if not Path(vocab_path).exists():
            raise FileNotFoundError(f"vocabulary file not found next to checkpoint: {vocab_path}")
        vocab = Vocabulary.load(vocab_path)

        def geti(key):
            return int(float(arrays[key]))

        if geti("meta/panel_size") != len(vocab.panel):
            raise ContractViolation("vocabulary panel size disagrees with checkpoint meta")
        cfg = ModelConfig(
            panel=vocab.panel,
            vision=VisionConfig(
                image_px=geti("meta/image_px"), patch_px=geti("meta/vision_patch"),
                dim=geti("meta/vision_dim"), layers=geti("meta/vision_layers"),
                heads=geti("meta/vision_heads"), channels=geti("meta/channels"),
                mask_ratio=float(arrays["meta/mask_ratio"]),
            ),
            text=TextConfig(
                dim=geti("meta/text_dim"), layers=geti("meta/text_layers"),
                heads=geti("meta/text_heads"), max_tokens=geti("meta/max_tokens"),
            ),
            proj_dim=geti("meta/proj_dim"),
            critic_hidden=geti("meta/critic_hidden"),
            temperature_init=float(arrays["meta/temperature_init"]),
            clip_bound=float(arrays["meta/clip_bound"]),
        )
        expect_img = (cfg.vision.dim, cfg.proj_dim)
        if tuple(arrays["proj/img/w"].shape) != expect_img:
            raise InputMismatch(
                f"checkpoint mismatch on d_proj: proj/img/w is "
                f"{tuple(arrays['proj/img/w'].shape)}, meta says {expect_img}"
            )
        model = cls(cfg, seed=0)
        try:
            model.store.load_arrays(arrays)
        except ContractViolation as exc:
            raise InputMismatch(str(exc)) from exc
        known = set(model.store.names())
        rest = {k: v for k, v in arrays.items()
                if k not in known and not k.startswith("meta/")}
        return model, rest


def desk_model_config(panel, mask_ratio: float = 0.5, temperature_init: float = 0.07,
                      proj_dim: int = 64) -> ModelConfig:
    """Default desk-scale geometry: 32 px images, 8 px patches, d=64, 2 layers."""
    return ModelConfig(
        panel=tuple(panel),
        vision=VisionConfig(mask_ratio=mask_ratio),
        text=TextConfig(),
        proj_dim=proj_dim,
        temperature_init=temperature_init,
    )
