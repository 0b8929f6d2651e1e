"""Command-line front-end: data generation, pretraining, evaluation, zero-shot.

Exit codes: 0 success, 2 config/contract errors, 3 missing or mismatched
inputs (or refusing to overwrite existing output), 4 numeric failures, 1
anything unexpected. Every artifact-producing run writes a run_manifest.txt
recording the config hash, seed, and content hashes of its inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import data as dataio, evalsuite, inference
from .config import AppConfig, config_text, load_config
from .errors import ContractViolation, InputMismatch, NumericError
from .genetext import TextConfig
from .model import ModelConfig
from .params import read_records
from .training import Checkpoint, TrainConfig, pretrain
from .vision import VisionConfig

EXIT_CONTRACT = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4


def default_config_path() -> Path:
    return Path(resources.files("spotalign") / "configs" / "desk.ini")


def _load_app_config(path: str | None) -> AppConfig:
    return load_config(path if path else default_config_path())


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _hash_inputs(paths: list[Path]) -> list[str]:
    out = []
    for p in sorted(paths):
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    out.append(f"{f.relative_to(p)} {_sha256_file(f)}")
        elif p.is_file():
            out.append(f"{p.name} {_sha256_file(p)}")
    return out


def _prepare_out_dir(out: str, overwrite: bool) -> Path:
    out_dir = Path(out)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not overwrite:
            raise FileExistsError(
                f"output directory {out_dir} is not empty; pass --overwrite to replace it"
            )
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _write_run_manifest(out_dir: Path, command: str, cfg_text: str, seed: int,
                        inputs: list[Path]) -> None:
    lines = [
        f"command: {command}",
        f"seed: {seed}",
        f"config_sha256: {hashlib.sha256(cfg_text.encode()).hexdigest()}",
    ]
    for entry in _hash_inputs(inputs):
        lines.append(f"input: {entry}")
    (out_dir / "run_manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _model_config(cfg: AppConfig, panel, mask_ratio: float, temperature: float,
                  image_px: int) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        panel=tuple(panel),
        vision=VisionConfig(image_px=image_px, patch_px=m.vision_patch, dim=m.vision_dim,
                            layers=m.vision_layers, heads=m.vision_heads,
                            mask_ratio=mask_ratio),
        text=TextConfig(dim=m.text_dim, layers=m.text_layers, heads=m.text_heads,
                        max_tokens=m.max_tokens),
        proj_dim=m.proj_dim,
        critic_hidden=m.critic_hidden,
        temperature_init=temperature,
    )


def _train_config(cfg: AppConfig, seed_override: int | None) -> TrainConfig:
    t = cfg.train
    kwargs = {f.name: getattr(t, f.name) for f in dataclasses.fields(t)}
    kwargs["steps"] = t.steps if t.steps > 0 else None
    kwargs["library_scale"] = cfg.data.library_scale
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_app_config(args.config)
    d = cfg.data
    seed = args.seed if args.seed is not None else d.seed
    out_dir = _prepare_out_dir(args.out, args.overwrite)
    corpus = dataio.generate_synthetic_corpus(
        num_slides=d.slides, spots_per_slide=d.spots_per_slide, panel=d.panel,
        patch_px=d.image_px, seed=seed, num_clusters=d.clusters, noise=d.noise,
        pixel_noise=d.pixel_noise, pretrain_frac=d.pretrain_frac,
        finetune_frac=d.finetune_frac, vision_patch=cfg.model.vision_patch,
    )
    dataio.save_corpus(corpus, out_dir)
    text = config_text(cfg)
    (out_dir / "config.ini").write_text(text, encoding="utf-8")
    _write_run_manifest(out_dir, "gen-data", text, seed, [])
    print(f"wrote corpus: {len(corpus.all_ids())} spots across "
          f"{len(corpus.manifests)} slides -> {out_dir}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_app_config(args.config)
    seed = args.seed if args.seed is not None else cfg.train.seed
    corpus = dataio.load_corpus(args.corpus)
    out_dir = _prepare_out_dir(args.out, args.overwrite)
    train_cfg = _train_config(cfg, seed)
    model_cfg = _model_config(cfg, corpus.panel, train_cfg.mask_ratio,
                              train_cfg.temperature_init, corpus.patch_px)
    ckpt = pretrain(train_cfg, corpus, model_cfg=model_cfg)
    ckpt.save(out_dir / "checkpoint.cmtp")
    ckpt.write_trajectory_csv(out_dir / "trajectory.csv")
    text = config_text(cfg)
    (out_dir / "config.ini").write_text(text, encoding="utf-8")
    _write_run_manifest(out_dir, "pretrain", text, seed, [Path(args.corpus)])
    print(f"pretrained {ckpt.step} steps; final L_total "
          f"{float(ckpt.trajectory[-1][-1]):.4f} -> {out_dir}")
    return 0


def cmd_eval_cluster(args) -> int:
    corpus = dataio.load_corpus(args.corpus)
    ckpt = Checkpoint.load(Path(args.checkpoint))
    seed = args.seed if args.seed is not None else 0
    out_dir = _prepare_out_dir(args.out, args.overwrite) if args.out else None
    ids = corpus.all_ids()
    embeddings = inference.embed_images(ckpt.model, [corpus.samples[i] for i in ids])
    result = evalsuite.kmeans_cluster(embeddings, args.k, seed=seed,
                                      restarts=args.restarts)
    truth = corpus.labels(ids)
    ari = evalsuite.adjusted_rand_index(result.labels, truth)
    print(f"ARI: {ari:.4f} (k={args.k}, inertia={result.inertia:.4f})")
    if out_dir:
        lines = ["spot_id,label"] + [f"{i},{l}" for i, l in zip(ids, result.labels)]
        (out_dir / "cluster_labels.csv").write_text("\n".join(lines) + "\n")
        (out_dir / "cluster_metrics.txt").write_text(
            f"ARI: {ari:.4f}\nk: {args.k}\ninertia: {result.inertia:.6f}\n"
        )
        _write_run_manifest(out_dir, "eval-cluster", f"k={args.k}", seed,
                            [Path(args.corpus), Path(args.checkpoint)])
    return 0


def cmd_eval_regress(args) -> int:
    corpus = dataio.load_corpus(args.corpus)
    ckpt = Checkpoint.load(Path(args.checkpoint))
    cfg = _load_app_config(args.config)
    e = cfg.eval
    seed = args.seed if args.seed is not None else e.seed
    genes = [g.strip() for g in args.genes.split(",")] if args.genes else list(corpus.panel)
    out_dir = _prepare_out_dir(args.out, args.overwrite) if args.out else None

    if args.mode == "finetune":
        result = evalsuite.finetune_regressor(
            ckpt.model, corpus, genes, steps=e.finetune_steps, lr=e.finetune_lr,
            batch_size=e.finetune_batch, seed=seed,
            library_scale=cfg.data.library_scale,
        )
        metrics, pred, ids = result.metrics, result.predictions, result.test_ids
    else:
        ids = corpus.split_ids("test")
        if not ids:
            raise InputMismatch("corpus has an empty test split")
        pred, truth, _ = inference.zero_shot_gene_predictions(
            ckpt.model, corpus, ids, genes, v_min=e.zero_shot_vmin,
            v_max=e.zero_shot_vmax, k=e.zero_shot_k,
            library_scale=cfg.data.library_scale,
        )
        metrics = evalsuite.regression_metrics(pred, truth, genes)

    print(metrics.format_report())
    if out_dir:
        (out_dir / "regress_metrics.txt").write_text(metrics.format_report() + "\n")
        rows = ["spot_id," + ",".join(genes)]
        for i, sid in enumerate(ids):
            rows.append(sid + "," + ",".join(f"{v:.4f}" for v in pred[i]))
        (out_dir / "predictions.csv").write_text("\n".join(rows) + "\n")
        _write_run_manifest(out_dir, f"eval-regress:{args.mode}", config_text(cfg), seed,
                            [Path(args.corpus), Path(args.checkpoint)])
    return 0


def cmd_zero_shot(args) -> int:
    corpus = dataio.load_corpus(args.corpus)
    ckpt = Checkpoint.load(Path(args.checkpoint))
    seed = args.seed if args.seed is not None else 0
    lo, _, hi = args.range.partition(":")
    v_min, v_max = float(lo), float(hi)
    ids = corpus.split_ids("test")
    if not ids:
        raise InputMismatch("corpus has an empty test split")
    preds, _, sims = inference.zero_shot_gene_predictions(
        ckpt.model, corpus, ids, [args.gene], v_min=v_min, v_max=v_max, k=args.k,
    )
    lines = ["spot_id,gene,predicted_value,max_similarity"]
    for i, sid in enumerate(ids):
        lines.append(f"{sid},{args.gene},{preds[i, 0]:.2f},{sims[i, 0]:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        out_dir = _prepare_out_dir(args.out, args.overwrite)
        (out_dir / "zero_shot.csv").write_text(text)
        _write_run_manifest(out_dir, "zero-shot", f"{args.gene} {args.range} {args.k}",
                            seed, [Path(args.corpus), Path(args.checkpoint)])
    else:
        sys.stdout.write(text)
    return 0


def cmd_inspect(args) -> int:
    arrays = read_records(Path(args.checkpoint))
    total = 0
    for name in sorted(arrays):
        arr = arrays[name]
        total += arr.size
        print(f"{name}  shape={tuple(arr.shape)}")
    print(f"total: {len(arrays)} records, {total} float32 values")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spotalign")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True, needs_out=True):
        if needs_out:
            p.add_argument("--out", required=out_required)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--config", default=None)
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="run contrastive pretraining")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("eval-cluster", help="k-means + ARI on frozen embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--restarts", type=int, default=4)
    common(p, out_required=False)
    p.set_defaults(fn=cmd_eval_cluster)

    p = sub.add_parser("eval-regress", help="gene expression prediction metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--genes", default=None, help="comma-separated subset of the panel")
    p.add_argument("--mode", choices=("finetune", "zeroshot"), required=True)
    p.add_argument("--config", default=None)
    common(p, out_required=False)
    p.set_defaults(fn=cmd_eval_regress)

    p = sub.add_parser("zero-shot", help="zero-shot predictions for one gene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--gene", required=True)
    p.add_argument("--range", default="0.0:5.0")
    p.add_argument("--k", type=int, default=501)
    common(p, out_required=False)
    p.set_defaults(fn=cmd_zero_shot)

    p = sub.add_parser("inspect-checkpoint", help="list checkpoint records")
    p.add_argument("checkpoint")
    p.set_defaults(fn=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FileNotFoundError, FileExistsError, InputMismatch) as exc:
        print(f"error: code=3 {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"error: code=4 {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractViolation as exc:
        print(f"error: code=2 {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
