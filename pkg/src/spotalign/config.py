"""Strict INI-style configuration: sections mirror the module configs and any
unknown section or key is a hard error."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ContractViolation

DEFAULT_PANEL = ("IGKC", "NPY", "PLP1", "HBB", "SCGB2A2", "MGP", "GFAP", "MBP")


@dataclass(frozen=True)
class DataSection:
    slides: int = 2
    spots_per_slide: int = 256
    clusters: int = 3
    panel: tuple[str, ...] = DEFAULT_PANEL
    image_px: int = 32
    noise: float = 0.15
    pixel_noise: float = 0.02
    pretrain_frac: float = 0.5
    finetune_frac: float = 0.3
    library_scale: float = 64.0
    seed: int = 7


@dataclass(frozen=True)
class ModelSection:
    vision_patch: int = 8
    vision_dim: int = 64
    vision_layers: int = 2
    vision_heads: int = 4
    text_dim: int = 64
    text_layers: int = 2
    text_heads: int = 4
    max_tokens: int = 77
    proj_dim: int = 64
    critic_hidden: int = 64


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 16
    epochs: int = 15
    steps: int = 300
    base_lr: float = 3e-3
    weight_decay: float = 0.05
    critic_lr: float = 1e-3
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda_grl: float = 1.0
    mask_ratio: float = 0.5
    temperature_init: float = 0.07
    clip_bound: float = 0.01
    mfm: bool = True
    paat: bool = True
    gene_embed: bool = True
    value_embed: bool = True
    seed: int = 7


@dataclass(frozen=True)
class EvalSection:
    k: int = 3
    kmeans_restarts: int = 4
    finetune_steps: int = 300
    finetune_lr: float = 1e-3
    finetune_batch: int = 16
    zero_shot_vmin: float = 0.0
    zero_shot_vmax: float = 5.0
    zero_shot_k: int = 501
    seed: int = 0


@dataclass(frozen=True)
class AppConfig:
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()


_SECTIONS = {"data": DataSection, "model": ModelSection, "train": TrainSection,
             "eval": EvalSection}


def _parse_value(raw: str, target_type, context: str):
    raw = raw.strip()
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ContractViolation(f"{context}: expected a boolean, got '{raw}'")
    if target_type is str:
        return raw
    if target_type == tuple[str, ...]:
        return tuple(p.strip() for p in raw.split(",") if p.strip())
    if target_type == "int | None" or target_type == int | None:
        return None if raw.lower() in ("none", "") else int(raw)
    raise ContractViolation(f"{context}: unsupported config type {target_type}")


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive
    parser.read(path, encoding="utf-8")

    sections: dict[str, object] = {}
    for sec_name in parser.sections():
        if sec_name not in _SECTIONS:
            raise ContractViolation(f"unknown config section '[{sec_name}]'")
        cls = _SECTIONS[sec_name]
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in parser.items(sec_name):
            if key not in fields:
                raise ContractViolation(f"unknown config key '{key}' in section [{sec_name}]")
            kwargs[key] = _parse_value(raw, fields[key].type, f"[{sec_name}] {key}")
        sections[sec_name] = cls(**kwargs)
    return AppConfig(**sections)  # type: ignore[arg-type]


def config_text(cfg: AppConfig) -> str:
    """Serialize back to the INI form (used to copy effective configs into runs)."""
    lines = []
    for sec_name, section in (("data", cfg.data), ("model", cfg.model),
                              ("train", cfg.train), ("eval", cfg.eval)):
        lines.append(f"[{sec_name}]")
        for f in dataclasses.fields(section):
            val = getattr(section, f.name)
            if isinstance(val, tuple):
                val = ",".join(val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{f.name} = {val}")
        lines.append("")
    return "\n".join(lines)
