"""Command-line entry point: preprocess, pretrain, transfer, infer, evaluate, sweep.

Configuration is layered: built-in defaults, then a JSON config file
(--config), then explicit command-line flags. The resolved configuration is
printed in full at run start and recorded, together with input hashes and a
content hash of the package source, in a run manifest that suffices to
re-issue the identical run.

Exit codes: 0 success, 2 usage/config, 3 data, 4 numerical divergence,
5 integrity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from . import data as data_mod
from .data import PreprocessConfig, UnpairedDataset, load_cache_dir, load_image, save_image
from .errors import ConfigError, DataError, PacaError
from .evaluation import (
    MetricReport,
    ablation_table,
    default_extractors,
    evaluate_run,
)
from .freezing import FreezeSpec
from .losses import LossWeights, SsimConfig, ms_ssim, rmse
from .networks import DiscriminatorConfig, GeneratorConfig, forward_generator
from .training import (
    TrainConfig,
    load_checkpoint,
    pretrain,
    read_manifest,
    resume,
    transfer,
)

_PRESETS = {
    "desk": {
        "side": 64,
        "gen_width": 32,
        "n_res": 4,
        "disc_width": 32,
        "ssim_scales": 3,
    },
    "paper": {
        "side": 256,
        "gen_width": 64,
        "n_res": 9,
        "disc_width": 64,
        "ssim_scales": 5,
    },
}

_TRAIN_DEFAULTS = {
    "preset": "desk",
    "side": None,  # resolved from preset unless overridden
    "gen_width": None,
    "n_res": None,
    "disc_width": None,
    "ssim_scales": None,
    "ssim_window": 11,
    "epochs_flat": 100,
    "epochs_decay": 100,
    "lr": 0.0002,
    "beta1": 0.5,
    "beta2": 0.999,
    "lambda_cyc": 10.0,
    "lambda_reg": 1.0,
    "c_const": 1.0,
    "gan_mode": "least_squares",
    "lambda_identity": 0.0,
    "reg_in_disc_step": False,
    "batch_size": 1,
    "pool_size": 50,
    "checkpoint_every": 0,
    "seed": 0,
    "split_fraction": 0.8,
    "freeze_method": "random",
    "rate": 0.9,
    "freeze_seed": 0,
    "granularity": "element",
    "freeze_block": 0,
}

_PREPROCESS_DEFAULTS = {
    "side": 64,
    "polarize_a": True,
    "polarize_b": False,
    "threshold_mode": "fixed",
    "fixed_threshold": 128,
    "resize_filter": "bilinear",
    "seed": 0,
}


def _resolve(defaults: dict, config_file: Optional[Path], args: argparse.Namespace) -> dict:
    """defaults < JSON config file < explicitly passed flags."""
    resolved = dict(defaults)
    if config_file:
        try:
            file_cfg = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}") from exc
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _build_train_config(cfg: dict, stage: str, with_freeze: bool) -> TrainConfig:
    preset = _PRESETS.get(cfg["preset"])
    if preset is None:
        raise ConfigError(f"unknown preset {cfg['preset']!r}")
    side = cfg["side"] if cfg["side"] is not None else preset["side"]
    gen_width = cfg["gen_width"] if cfg["gen_width"] is not None else preset["gen_width"]
    n_res = cfg["n_res"] if cfg["n_res"] is not None else preset["n_res"]
    disc_width = cfg["disc_width"] if cfg["disc_width"] is not None else preset["disc_width"]
    scales = cfg["ssim_scales"] if cfg["ssim_scales"] is not None else preset["ssim_scales"]
    freeze = None
    if with_freeze:
        freeze = FreezeSpec(
            method=cfg["freeze_method"],
            rate=float(cfg["rate"]),
            seed=int(cfg["freeze_seed"]),
            granularity=cfg["granularity"],
            block_index=int(cfg["freeze_block"]),
        )
    config = TrainConfig(
        stage=stage,
        epochs_flat=int(cfg["epochs_flat"]),
        epochs_decay=int(cfg["epochs_decay"]),
        lr=float(cfg["lr"]),
        adam_beta1=float(cfg["beta1"]),
        adam_beta2=float(cfg["beta2"]),
        weights=LossWeights(
            lambda_cyc=float(cfg["lambda_cyc"]),
            lambda_reg=float(cfg["lambda_reg"]),
            c_const=float(cfg["c_const"]),
            gan_mode=cfg["gan_mode"],
            lambda_identity=float(cfg["lambda_identity"]),
            reg_in_disc_step=bool(cfg["reg_in_disc_step"]),
        ),
        ssim=SsimConfig(window=int(cfg["ssim_window"]), scales=int(scales)),
        gen=GeneratorConfig(side=side, base_width=gen_width, n_res=n_res),
        disc=DiscriminatorConfig(side=side, base_width=disc_width),
        freeze=freeze,
        seed=int(cfg["seed"]),
        batch_size=int(cfg["batch_size"]),
        pool_size=int(cfg["pool_size"]),
        checkpoint_every=int(cfg["checkpoint_every"]),
    )
    config.validate()
    return config


def _out_dir(args: argparse.Namespace, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = Path(os.environ.get("PACA_OUT_ROOT", "runs"))
        out = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _code_hash() -> str:
    pkg = Path(__file__).parent
    h = hashlib.sha256()
    for path in sorted(pkg.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def _hash_path(path: Path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    if path.is_file():
        h.update(path.read_bytes())
    elif path.is_dir():
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(str(sub.relative_to(path)).encode())
            h.update(hashlib.sha256(sub.read_bytes()).digest())
    else:
        raise DataError(f"no such input: {path}")
    return h.hexdigest()


def _write_manifest(
    out: Path, command: str, config: dict, inputs: dict[str, Path], outputs: list[str], started: float
) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _hash_path(p)} for name, p in inputs.items()},
        "code_sha256": _code_hash(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "outputs": outputs,
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2))


def _print_config(command: str, config: dict) -> None:
    print(f"[paca {command}] resolved config:")
    print(json.dumps(config, indent=2, default=str))


def _load_image_set(path: Path, side: int) -> list[torch.Tensor]:
    """Load a probe/reference set from a cache dir, an image dir, or one file."""
    path = Path(path)
    if path.is_dir():
        if any(path.glob("*.f32")):
            images = load_cache_dir(path)
        else:
            images = data_mod.load_domain_dir(path, PreprocessConfig(side=side))
        return images
    if path.is_file():
        return [load_image(path, PreprocessConfig(side=side))]
    raise DataError(f"no such input: {path}")


def _image_stems(path: Path) -> list[str]:
    path = Path(path)
    if path.is_dir():
        if any(path.glob("*.f32")):
            return [p.stem for p in sorted(path.glob("*.json"))]
        return [p.stem for p in data_mod.list_image_files(path)]
    return [path.stem]


def _load_pair(args: argparse.Namespace, side: int) -> tuple[torch.Tensor, torch.Tensor]:
    if args.cache:
        pair_dir = Path(args.cache) / "pair"
        if not pair_dir.is_dir():
            raise DataError(f"cache has no transfer pair: {pair_dir}")
        entries = load_cache_dir(pair_dir)
        if len(entries) != 2:
            raise DataError(f"expected 2 pair entries in {pair_dir}, found {len(entries)}")
        return entries[0], entries[1]  # sorted: a.json, b_prime.json
    if args.pair_a and args.pair_b:
        a = load_image(Path(args.pair_a), PreprocessConfig(side=side, polarize=True))
        b = load_image(Path(args.pair_b), PreprocessConfig(side=side))
        return a, b
    raise ConfigError("provide either --cache with a pair or both --pair-a and --pair-b")


# ---------------------------------------------------------------- commands


def cmd_preprocess(args: argparse.Namespace) -> int:
    started = time.time()
    cfg = _resolve(_PREPROCESS_DEFAULTS, args.config, args)
    _print_config("preprocess", cfg)
    out = _out_dir(args, "preprocess")
    common = dict(
        side=int(cfg["side"]),
        threshold_mode=cfg["threshold_mode"],
        fixed_threshold=int(cfg["fixed_threshold"]),
        resize_filter=cfg["resize_filter"],
    )
    cfg_a = PreprocessConfig(polarize=bool(cfg["polarize_a"]), **common)
    cfg_b = PreprocessConfig(polarize=bool(cfg["polarize_b"]), **common)
    cfg_a.validate()
    cfg_b.validate()

    jobs = [("domain_a", Path(args.domain_a), cfg_a), ("domain_b", Path(args.domain_b), cfg_b)]
    failures: list[str] = []
    written = 0
    skipped = 0
    for subdir, src_dir, pcfg in jobs:
        files = data_mod.list_image_files(src_dir)
        if not files:
            raise DataError(f"no PNG/JPEG files in {src_dir}")
        cache = out / subdir
        for f in files:
            if data_mod.cache_entry_is_current(cache, f.stem, f, pcfg):
                skipped += 1
                continue
            try:
                img = load_image(f, pcfg)
            except DataError as exc:
                failures.append(str(exc))
                continue
            data_mod.write_cache_entry(cache, f.stem, img, f, pcfg)
            written += 1
    inputs = {"domain_a": Path(args.domain_a), "domain_b": Path(args.domain_b)}
    if args.pair_a and args.pair_b:
        pair_dir = out / "pair"
        for stem, src, pcfg in (("a", Path(args.pair_a), cfg_a), ("b_prime", Path(args.pair_b), cfg_b)):
            if not data_mod.cache_entry_is_current(pair_dir, stem, src, pcfg):
                data_mod.write_cache_entry(pair_dir, stem, load_image(src, pcfg), src, pcfg)
                written += 1
            else:
                skipped += 1
        inputs["pair_a"] = Path(args.pair_a)
        inputs["pair_b"] = Path(args.pair_b)
    if failures:
        for line in failures:
            print(f"error: {line}", file=sys.stderr)
        raise DataError(f"{len(failures)} input file(s) failed to preprocess")
    _write_manifest(out, "preprocess", cfg, inputs, [str(out)], started)
    print(f"[paca preprocess] wrote {written}, skipped {skipped} up-to-date -> {out}")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    started = time.time()
    cfg = _resolve(_TRAIN_DEFAULTS, args.config, args)
    _print_config("pretrain", cfg)
    out = _out_dir(args, "pretrain")
    if args.resume:
        ds = _build_pretrain_dataset(args, cfg)
        ckpt = resume(Path(args.resume), ds, out, log_path=out / "train_log.jsonl")
    else:
        train_cfg = _build_train_config(cfg, "pretrain", with_freeze=False)
        ds = _build_pretrain_dataset(args, cfg, train_cfg)
        ckpt = pretrain(ds, train_cfg, out, log_path=out / "train_log.jsonl")
    _write_manifest(out, "pretrain", cfg, {"cache": Path(args.cache)}, [str(ckpt)], started)
    print(f"[paca pretrain] checkpoint -> {ckpt}")
    return 0


def _build_pretrain_dataset(
    args: argparse.Namespace, cfg: dict, train_cfg: Optional[TrainConfig] = None
) -> UnpairedDataset:
    cache = Path(args.cache)
    domain_a = load_cache_dir(cache / "domain_a")
    domain_b = load_cache_dir(cache / "domain_b")
    ds = UnpairedDataset(
        domain_a=domain_a, domain_b=domain_b, split_fraction=float(cfg["split_fraction"])
    )
    return ds.train_split(int(cfg["seed"]))


def cmd_transfer(args: argparse.Namespace) -> int:
    started = time.time()
    cfg = _resolve(_TRAIN_DEFAULTS, args.config, args)
    _print_config("transfer", cfg)
    out = _out_dir(args, "transfer")
    base = Path(args.base)
    base_manifest = read_manifest(base)
    base_cfg = TrainConfig.from_dict(base_manifest["config"])
    merged = dict(cfg)
    merged["side"] = base_cfg.gen.side
    merged["gen_width"] = base_cfg.gen.base_width
    merged["n_res"] = base_cfg.gen.n_res
    merged["disc_width"] = base_cfg.disc.base_width
    train_cfg = _build_train_config(merged, "transfer", with_freeze=True)
    pair = _load_pair(args, base_cfg.gen.side)
    ckpt = transfer(base, pair, train_cfg, out, log_path=out / "train_log.jsonl")
    inputs = {"base": base}
    if args.cache:
        inputs["cache"] = Path(args.cache)
    _write_manifest(out, "transfer", cfg, inputs, [str(ckpt)], started)
    print(f"[paca transfer] checkpoint -> {ckpt}")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    started = time.time()
    out = _out_dir(args, "infer")
    state = load_checkpoint(Path(args.checkpoint))
    tag = args.tag or ("fused" if state.cfg.stage == "transfer" else "pretrained")
    side = state.cfg.gen.side
    images = _load_image_set(Path(args.inputs), side)
    stems = _image_stems(Path(args.inputs))
    config = {"checkpoint": str(args.checkpoint), "inputs": str(args.inputs), "tag": tag}
    _print_config("infer", config)
    outputs = []
    with torch.no_grad():
        for stem, img in zip(stems, images):
            fused = forward_generator(state.gen_a, img)
            path = out / f"{stem}__{tag}.png"
            save_image(fused, path)
            outputs.append(str(path))
    _write_manifest(out, "infer", config, {"inputs": Path(args.inputs)}, outputs, started)
    print(f"[paca infer] wrote {len(outputs)} images -> {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.time()
    out = _out_dir(args, "evaluate")
    gens = []
    for item in args.gen:
        if "=" not in item:
            raise ConfigError(f"--gen expects TAG=CHECKPOINT, got {item!r}")
        tag, _, ckpt = item.partition("=")
        gens.append((tag, Path(ckpt)))
    if not gens:
        raise ConfigError("provide at least one --gen TAG=CHECKPOINT")
    first_state = load_checkpoint(gens[0][1])
    side = first_state.cfg.gen.side
    ssim_cfg = first_state.cfg.ssim
    inputs = _load_image_set(Path(args.inputs), side)
    ref_a = _load_image_set(Path(args.ref_a), side)
    ref_b_prime = _load_image_set(Path(args.ref_b_prime), side)
    pair_target = None
    if args.pair_b:
        pair_target = load_image(Path(args.pair_b), PreprocessConfig(side=side))
    config = {
        "gens": {t: str(p) for t, p in gens},
        "inputs": str(args.inputs),
        "ref_a": str(args.ref_a),
        "ref_b_prime": str(args.ref_b_prime),
        "n_inputs": len(inputs),
    }
    _print_config("evaluate", config)
    extractors = default_extractors()
    reports: list[MetricReport] = []
    stems = _image_stems(Path(args.inputs))
    for tag, ckpt in gens:
        state = first_state if ckpt == gens[0][1] else load_checkpoint(ckpt)
        report, fused = evaluate_run(
            state.gen_a,
            inputs,
            ref_a,
            ref_b_prime,
            extractors=extractors,
            ssim_cfg=ssim_cfg,
            pair_target=pair_target,
            tag=tag,
        )
        reports.append(report)
        fused_dir = out / "fused" / tag
        fused_dir.mkdir(parents=True, exist_ok=True)
        for stem, img in zip(stems, fused):
            save_image(img, fused_dir / f"{stem}__{tag}.png")
    table = ablation_table(reports, extractors)
    report_json = {
        "extractors": {"fid_role": extractors[0].name, "fpd_role": extractors[1].name},
        "rows": [r.to_dict() for r in reports],
    }
    (out / "report.json").write_text(json.dumps(report_json, indent=2))
    md = ["# Evaluation report", "", table]
    for r in reports:
        if r.ms_ssim_vs_b_prime is not None:
            md.append(
                f"- {r.tag}: mean ms_ssim vs b' = {r.ms_ssim_vs_b_prime:.4f}, "
                f"mean rmse vs b' = {r.rmse_vs_b_prime:.4f}"
            )
    (out / "report.md").write_text("\n".join(md) + "\n")
    print(table)
    in_paths = {"inputs": Path(args.inputs), "ref_a": Path(args.ref_a), "ref_b_prime": Path(args.ref_b_prime)}
    _write_manifest(out, "evaluate", config, in_paths, [str(out / "report.json")], started)
    print(f"[paca evaluate] report -> {out / 'report.md'}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    started = time.time()
    cfg = _resolve(_TRAIN_DEFAULTS, args.config, args)
    rates = [float(r) for r in args.rates.split(",") if r.strip()]
    steps = sorted(int(s) for s in args.steps.split(",") if s.strip())
    if not rates:
        raise ConfigError("--rates must list at least one freezing rate")
    if not steps or steps[0] < 1:
        raise ConfigError("--steps must list positive step counts")
    rates = sorted(rates)
    out = _out_dir(args, "sweep")
    base = Path(args.base)
    base_cfg = TrainConfig.from_dict(read_manifest(base)["config"])
    side = base_cfg.gen.side
    pair_a, pair_b = _load_pair(args, side)
    _print_config("sweep", {**cfg, "rates": rates, "steps": steps})

    merged = dict(cfg)
    merged["side"] = base_cfg.gen.side
    merged["gen_width"] = base_cfg.gen.base_width
    merged["n_res"] = base_cfg.gen.n_res
    merged["disc_width"] = base_cfg.disc.base_width
    merged["epochs_flat"] = max(steps)
    merged["epochs_decay"] = 0
    merged["checkpoint_every"] = 0

    ssim_cfg = SsimConfig(window=int(cfg["ssim_window"]), scales=base_cfg.ssim.scales)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    index = {"rates": rates, "steps": steps, "cells": []}
    snapshots: dict[tuple[float, int], torch.Tensor] = {}
    for rate in rates:
        cell_cfg = dict(merged)
        cell_cfg["rate"] = rate
        train_cfg = _build_train_config(cell_cfg, "transfer", with_freeze=True)
        wanted = set(steps)

        def hook(state, record, _rate=rate):
            if state.step in wanted:
                with torch.no_grad():
                    snapshots[(_rate, state.step)] = forward_generator(state.gen_a, pair_a)

        transfer(base, (pair_a, pair_b), train_cfg, out / f"rate_{rate:g}", on_step=hook)
    for rate in rates:
        for step in steps:
            img = snapshots[(rate, step)]
            name = f"cell_r{rate:g}_s{step}.png"
            save_image(img, cells_dir / name)
            with torch.no_grad():
                cell_ms = float(ms_ssim(img, pair_b, ssim_cfg))
                cell_rmse = float(rmse(img, pair_a))
            index["cells"].append(
                {
                    "rate": rate,
                    "steps": step,
                    "png": f"cells/{name}",
                    "ms_ssim_vs_b_prime": cell_ms,
                    "rmse_vs_a": cell_rmse,
                }
            )
    grid_path = out / "grid.png"
    _compose_grid(snapshots, rates, steps, grid_path)
    (out / "index.json").write_text(json.dumps(index, indent=2))
    _write_manifest(
        out,
        "sweep",
        {**cfg, "rates": rates, "steps": steps},
        {"base": base},
        [str(grid_path), str(out / "index.json")],
        started,
    )
    print(f"[paca sweep] grid -> {grid_path}")
    return 0


def _compose_grid(
    snapshots: dict[tuple[float, int], torch.Tensor],
    rates: list[float],
    steps: list[int],
    path: Path,
) -> None:
    """Rows are step counts (top to bottom), columns are rates (left to right)."""
    sample = next(iter(snapshots.values()))
    side = sample.shape[-1]
    gutter = 2
    width = len(rates) * side + (len(rates) + 1) * gutter
    height = len(steps) * side + (len(steps) + 1) * gutter
    canvas = Image.new("RGB", (width, height), (255, 255, 255))
    for row, step in enumerate(steps):
        for col, rate in enumerate(rates):
            img = snapshots[(rate, step)]
            arr = ((img + 1.0) * 127.5).clamp(0, 255).round().to(torch.uint8)
            tile = Image.fromarray(arr.permute(1, 2, 0).numpy(), mode="RGB")
            x = gutter + col * (side + gutter)
            y = gutter + row * (side + gutter)
            canvas.paste(tile, (x, y))
    canvas.save(path)


# ---------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file (defaults < file < flags)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output directory (default under PACA_OUT_ROOT)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(_PRESETS))
    p.add_argument("--side", type=int)
    p.add_argument("--gen-width", dest="gen_width", type=int)
    p.add_argument("--n-res", dest="n_res", type=int)
    p.add_argument("--disc-width", dest="disc_width", type=int)
    p.add_argument("--ssim-scales", dest="ssim_scales", type=int)
    p.add_argument("--ssim-window", dest="ssim_window", type=int)
    p.add_argument("--epochs-flat", dest="epochs_flat", type=int)
    p.add_argument("--epochs-decay", dest="epochs_decay", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--lambda-cyc", dest="lambda_cyc", type=float)
    p.add_argument("--lambda-reg", dest="lambda_reg", type=float)
    p.add_argument("--c-const", dest="c_const", type=float)
    p.add_argument("--gan-mode", dest="gan_mode", choices=["least_squares", "cross_entropy"])
    p.add_argument("--lambda-identity", dest="lambda_identity", type=float)
    p.add_argument(
        "--reg-in-disc-step",
        dest="reg_in_disc_step",
        action="store_const",
        const=True,
    )
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--pool-size", dest="pool_size", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--split-fraction", dest="split_fraction", type=float)


def _add_freeze_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--freeze-method", dest="freeze_method", choices=["random", "layer"])
    p.add_argument("--rate", type=float, help="freezing rate in [0, 1]")
    p.add_argument("--freeze-seed", dest="freeze_seed", type=int)
    p.add_argument("--granularity", choices=["tensor", "element"])
    p.add_argument("--freeze-block", dest="freeze_block", type=int, help="0-based residual block")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paca", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resize/polarize two domain directories into a cache")
    _add_common(p)
    p.add_argument("--domain-a", required=True, type=Path)
    p.add_argument("--domain-b", required=True, type=Path)
    p.add_argument("--pair-a", dest="pair_a", type=Path)
    p.add_argument("--pair-b", dest="pair_b", type=Path)
    p.add_argument("--side", type=int)
    p.add_argument("--polarize-a", dest="polarize_a", action="store_const", const=True)
    p.add_argument("--no-polarize-a", dest="polarize_a", action="store_const", const=False)
    p.add_argument("--polarize-b", dest="polarize_b", action="store_const", const=True)
    p.add_argument("--threshold-mode", dest="threshold_mode", choices=["fixed", "otsu"])
    p.add_argument("--fixed-threshold", dest="fixed_threshold", type=int)
    p.add_argument("--resize-filter", dest="resize_filter", choices=["bilinear", "nearest"])
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", help="stage one: train on the two unpaired domains")
    _add_common(p)
    p.add_argument("--cache", required=True, type=Path, help="preprocess output directory")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("transfer", help="stage two: one-shot adaptation of a checkpoint")
    _add_common(p)
    p.add_argument("--base", required=True, type=Path, help="pretrain checkpoint directory")
    p.add_argument("--cache", type=Path, help="preprocess cache holding the transfer pair")
    p.add_argument("--pair-a", dest="pair_a", type=Path)
    p.add_argument("--pair-b", dest="pair_b", type=Path)
    _add_train_flags(p)
    _add_freeze_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("infer", help="apply a checkpoint's A->B generator to images")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--inputs", required=True, type=Path)
    p.add_argument("--tag", type=str)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="Fréchet/similarity report for one or more generators")
    _add_common(p)
    p.add_argument("--inputs", required=True, type=Path, help="probe images (cache or image dir)")
    p.add_argument("--ref-a", dest="ref_a", required=True, type=Path)
    p.add_argument("--ref-b-prime", dest="ref_b_prime", required=True, type=Path)
    p.add_argument("--pair-b", dest="pair_b", type=Path, help="transfer target for ms_ssim/rmse")
    p.add_argument(
        "--gen",
        action="append",
        default=[],
        metavar="TAG=CHECKPOINT",
        help="repeatable; row order defines the report order",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="rate-by-steps grid of transfer runs from one base")
    _add_common(p)
    p.add_argument("--base", required=True, type=Path)
    p.add_argument("--cache", type=Path)
    p.add_argument("--pair-a", dest="pair_a", type=Path)
    p.add_argument("--pair-b", dest="pair_b", type=Path)
    p.add_argument("--rates", required=True, help="comma-separated freezing rates")
    p.add_argument("--steps", required=True, help="comma-separated step counts")
    _add_train_flags(p)
    _add_freeze_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PacaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
