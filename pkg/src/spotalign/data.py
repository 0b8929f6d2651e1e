"""Synthetic slide corpus, expression normalization, and patch tessellation.

The generator plants a recoverable image/expression relationship: every spot
carries a cluster id (visible as texture orientation, frequency, and tint)
and a scalar intensity (visible as mean brightness). Each panel gene's count
is a monotone function of those two latent factors plus seeded multiplicative
noise, so models can learn expression from pixels and tests can measure how
much signal survives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import params
from .errors import ContractViolation

SPLITS = ("pretrain", "finetune", "test")

# per-gene response mix: weight on the intensity factor vs the cluster level
_INTENSITY_WEIGHT = (1.0, 0.0, 0.7, 0.3, 1.0, 0.0, 0.7, 0.3)
_CLUSTER_LEVELS = (0.15, 0.5, 0.85)


@dataclass
class SpotSample:
    """One histology patch with its raw expression counts."""

    spot_id: str
    slide_id: str
    image: np.ndarray  # (C, H, W) float32 in [0, 1]
    counts: np.ndarray  # (G,) float32, non-negative
    row: int
    col: int
    label: int | None = None


@dataclass
class SlideManifest:
    slide_id: str
    patch_px: int
    genes: tuple[str, ...]
    spots: list[tuple[str, int, int, str, int]] = field(default_factory=list)
    # spot tuples: (spot_id, row, col, split, label)


@dataclass
class Corpus:
    manifests: list[SlideManifest]
    samples: dict[str, SpotSample]
    panel: tuple[str, ...]
    patch_px: int
    splits: dict[str, str]  # spot_id -> split name
    latents: dict[str, np.ndarray] | None = None  # generation-only, not persisted

    def split_ids(self, split: str) -> list[str]:
        if split not in SPLITS:
            raise ContractViolation(f"unknown split '{split}'")
        out = []
        for m in self.manifests:
            for spot_id, _, _, sp, _ in m.spots:
                if sp == split:
                    out.append(spot_id)
        return out

    def all_ids(self) -> list[str]:
        return [s[0] for m in self.manifests for s in m.spots]

    def labels(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.samples[i].label for i in ids], dtype=np.int64)


# ---------------------------------------------------------------------------
# normalization and tessellation
# ---------------------------------------------------------------------------


def normalize_expression(counts: np.ndarray, scale: float = 64.0) -> np.ndarray:
    """Total-count normalize then log2(1 + x); all-zero input stays all-zero."""
    counts = np.asarray(counts, dtype=np.float64)
    if not np.all(np.isfinite(counts)):
        raise ContractViolation("expression counts must be finite")
    if np.any(counts < 0):
        raise ContractViolation("expression counts must be non-negative")
    total = counts.sum()
    if total == 0:
        return np.zeros_like(counts, dtype=np.float32)
    return np.log2(1.0 + counts * (scale / total)).astype(np.float32)


def tessellate(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Split (C, H, W) into P = (H/ps)*(W/ps) flattened blocks, row-major."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ContractViolation(f"expected a (C, H, W) image, got shape {image.shape}")
    c, h, w = image.shape
    if h % patch_size != 0:
        raise ContractViolation(f"height {h} not divisible by patch size {patch_size}")
    if w % patch_size != 0:
        raise ContractViolation(f"width {w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    blocks = image.reshape(c, gh, patch_size, gw, patch_size)
    blocks = blocks.transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(blocks.reshape(gh * gw, c * patch_size * patch_size))


def untessellate(blocks: np.ndarray, patch_size: int, channels: int,
                 height: int, width: int) -> np.ndarray:
    """Inverse of tessellate."""
    gh, gw = height // patch_size, width // patch_size
    blocks = blocks.reshape(gh, gw, channels, patch_size, patch_size)
    return np.ascontiguousarray(
        blocks.transpose(2, 0, 3, 1, 4).reshape(channels, height, width)
    )


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


def _gene_profile(g: int, num_clusters: int) -> tuple[float, np.ndarray, float]:
    """(intensity weight, per-cluster level, count amplitude) for panel gene g."""
    w_t = _INTENSITY_WEIGHT[g % len(_INTENSITY_WEIGHT)]
    levels = np.array(
        [_CLUSTER_LEVELS[(g + c) % len(_CLUSTER_LEVELS)] for c in range(num_clusters)]
    )
    amplitude = 12.0 * (1 + g % 4)
    return w_t, levels, amplitude


def planted_factor(g: int, cluster: np.ndarray, intensity: np.ndarray,
                   num_clusters: int) -> np.ndarray:
    """Noise-free latent response of gene g; counts are monotone in this."""
    w_t, levels, _ = _gene_profile(g, num_clusters)
    return w_t * intensity + (1.0 - w_t) * levels[cluster]


def _render_image(rng: np.random.Generator, px: int, cluster: int, intensity: float,
                  num_clusters: int, pixel_noise: float) -> np.ndarray:
    theta = math.pi * cluster / max(num_clusters, 1)
    freq = 2.0 + 2.0 * cluster
    phase = rng.uniform(0.0, 2.0 * math.pi)
    ys, xs = np.meshgrid(np.linspace(0, 1, px, endpoint=False),
                         np.linspace(0, 1, px, endpoint=False), indexing="ij")
    wave = np.sin(2.0 * math.pi * freq * (xs * math.cos(theta) + ys * math.sin(theta)) + phase)
    tint = np.roll(np.array([1.0, 0.6, 0.3]), cluster % 3)
    base = 0.25 + 0.5 * intensity
    img = base + 0.15 * wave[None, :, :] * tint[:, None, None]
    img = img + pixel_noise * rng.standard_normal((3, px, px))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic_corpus(
    num_slides: int,
    spots_per_slide: int,
    panel: Sequence[str],
    patch_px: int,
    seed: int,
    num_clusters: int = 3,
    noise: float = 0.15,
    pixel_noise: float = 0.02,
    pretrain_frac: float = 0.5,
    finetune_frac: float = 0.3,
    vision_patch: int = 8,
) -> Corpus:
    """Deterministic corpus with planted morphology/expression correlation."""
    panel = tuple(panel)
    if num_slides < 1 or spots_per_slide < 1:
        raise ContractViolation("need at least one slide and one spot per slide")
    if not panel:
        raise ContractViolation("gene panel must be non-empty")
    if patch_px % vision_patch != 0:
        raise ContractViolation(
            f"image size {patch_px} must be a multiple of the vision patch {vision_patch}"
        )
    if not 0 < pretrain_frac + finetune_frac <= 1:
        raise ContractViolation("split fractions must sum to at most 1")

    seq = np.random.SeedSequence(seed)
    slide_seeds = seq.spawn(num_slides)
    split_rng = np.random.default_rng(seq.spawn(1)[0])

    n_total = num_slides * spots_per_slide
    order = split_rng.permutation(n_total)
    n_pre = int(pretrain_frac * n_total)
    n_fine = int(finetune_frac * n_total)
    split_by_index = np.empty(n_total, dtype=object)
    split_by_index[order[:n_pre]] = "pretrain"
    split_by_index[order[n_pre : n_pre + n_fine]] = "finetune"
    split_by_index[order[n_pre + n_fine :]] = "test"

    grid_w = int(math.ceil(math.sqrt(spots_per_slide)))
    manifests: list[SlideManifest] = []
    samples: dict[str, SpotSample] = {}
    splits: dict[str, str] = {}
    clusters = np.empty(n_total, dtype=np.int64)
    intensities = np.empty(n_total, dtype=np.float64)
    factors = np.empty((n_total, len(panel)), dtype=np.float64)

    flat = 0
    for s in range(num_slides):
        rng = np.random.default_rng(slide_seeds[s])
        slide_id = f"S{s:03d}"
        manifest = SlideManifest(slide_id=slide_id, patch_px=patch_px, genes=panel)
        for i in range(spots_per_slide):
            cluster = int(rng.integers(num_clusters))
            intensity = float(rng.uniform())
            image = _render_image(rng, patch_px, cluster, intensity, num_clusters, pixel_noise)
            counts = np.empty(len(panel), dtype=np.float64)
            for g in range(len(panel)):
                w_t, levels, amp = _gene_profile(g, num_clusters)
                phi = w_t * intensity + (1.0 - w_t) * levels[cluster]
                factors[flat, g] = phi
                jitter = math.exp(noise * rng.standard_normal() - 0.5 * noise * noise)
                counts[g] = amp * (0.15 + 0.85 * phi) * jitter
            spot_id = f"{slide_id}_{i:04d}"
            split = str(split_by_index[flat])
            sample = SpotSample(
                spot_id=spot_id,
                slide_id=slide_id,
                image=image,
                counts=counts.astype(np.float32),
                row=i // grid_w,
                col=i % grid_w,
                label=cluster,
            )
            samples[spot_id] = sample
            splits[spot_id] = split
            manifest.spots.append((spot_id, sample.row, sample.col, split, cluster))
            clusters[flat] = cluster
            intensities[flat] = intensity
            flat += 1
        manifests.append(manifest)

    return Corpus(
        manifests=manifests,
        samples=samples,
        panel=panel,
        patch_px=patch_px,
        splits=splits,
        latents={"cluster": clusters, "intensity": intensities, "factors": factors},
    )


# ---------------------------------------------------------------------------
# on-disk form: one manifest text file + one tensor record file per slide
# ---------------------------------------------------------------------------


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for m in corpus.manifests:
        lines = [
            f"slide_id: {m.slide_id}",
            f"patch_px: {m.patch_px}",
            f"genes: {','.join(m.genes)}",
        ]
        arrays: dict[str, np.ndarray] = {}
        for spot_id, row, col, split, label in m.spots:
            lines.append(f"spot: {spot_id} {row} {col} {split} {label}")
            s = corpus.samples[spot_id]
            arrays[f"image/{spot_id}"] = s.image
            arrays[f"counts/{spot_id}"] = s.counts
        (out_dir / f"{m.slide_id}.manifest.txt").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )
        params.write_records(out_dir / f"{m.slide_id}.tensors.cmtp", arrays)


def load_corpus(corpus_dir: str | Path) -> Corpus:
    corpus_dir = Path(corpus_dir)
    manifest_paths = sorted(corpus_dir.glob("*.manifest.txt"))
    if not manifest_paths:
        raise FileNotFoundError(f"no slide manifests found in {corpus_dir}")
    manifests: list[SlideManifest] = []
    samples: dict[str, SpotSample] = {}
    splits: dict[str, str] = {}
    panel: tuple[str, ...] | None = None
    patch_px: int | None = None
    for path in manifest_paths:
        m = _parse_manifest(path)
        if panel is None:
            panel, patch_px = m.genes, m.patch_px
        elif m.genes != panel or m.patch_px != patch_px:
            raise ContractViolation(f"slide {m.slide_id} disagrees on panel or patch_px")
        arrays = params.read_records(corpus_dir / f"{m.slide_id}.tensors.cmtp")
        for spot_id, row, col, split, label in m.spots:
            image = arrays[f"image/{spot_id}"]
            counts = arrays[f"counts/{spot_id}"]
            if np.any(counts < 0):
                raise ContractViolation(f"negative counts stored for {spot_id}")
            samples[spot_id] = SpotSample(
                spot_id=spot_id, slide_id=m.slide_id, image=image, counts=counts,
                row=row, col=col, label=label,
            )
            splits[spot_id] = split
        manifests.append(m)
    return Corpus(
        manifests=manifests, samples=samples, panel=panel, patch_px=patch_px, splits=splits
    )


def _parse_manifest(path: Path) -> SlideManifest:
    slide_id: str | None = None
    patch_px: int | None = None
    genes: tuple[str, ...] | None = None
    spots: list[tuple[str, int, int, str, int]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        rest = rest.strip()
        if key == "slide_id":
            slide_id = rest
        elif key == "patch_px":
            patch_px = int(rest)
        elif key == "genes":
            genes = tuple(rest.split(","))
        elif key == "spot":
            spot_id, row, col, split, label = rest.split()
            if split not in SPLITS:
                raise ContractViolation(f"{path}:{lineno}: unknown split '{split}'")
            if int(row) < 0 or int(col) < 0:
                raise ContractViolation(f"{path}:{lineno}: negative spot coordinates")
            spots.append((spot_id, int(row), int(col), split, int(label)))
        else:
            raise ContractViolation(f"{path}:{lineno}: unknown manifest key '{key}'")
    if slide_id is None or patch_px is None or genes is None:
        raise ContractViolation(f"{path}: manifest missing slide_id, patch_px, or genes")
    return SlideManifest(slide_id=slide_id, patch_px=patch_px, genes=genes, spots=spots)
