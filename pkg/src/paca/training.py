"""Two-stage training orchestration: pre-training and one-shot transfer.

Each optimization step updates the generators first, then discriminator B,
then discriminator A (fixed order for determinism). Discriminators train
against a bounded history pool of generated fakes. All stochastic choices
flow from explicit seeded streams, so a (seed, config, data) triple yields
bitwise-identical checkpoints, and a resumed run replays the exact step
sequence of an uninterrupted one.

Checkpoints are directories of raw little-endian float32 blobs plus a JSON
manifest carrying the architecture descriptors, the train config, the freeze
spec, optimizer step counts, and RNG stream states.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .blobs import read_blob, write_blob
from .data import UnpairedDataset, epoch_batches
from .errors import ConfigError, ContractError, IntegrityError, NumericalError
from .freezing import FreezeMask, FreezeSpec, apply_mask_to_generators, derive_and_verify
from .losses import (
    LossWeights,
    ObjectiveTerms,
    SsimConfig,
    check_finite,
    cycle_loss,
    gan_loss,
    identity_loss,
    pretrain_objective,
    reg_loss,
    transfer_objective,
)
from .networks import (
    DiscriminatorConfig,
    DiscriminatorNet,
    GeneratorConfig,
    GeneratorNet,
    ParamRegistry,
    build_discriminator,
    build_generator,
)

MANIFEST_NAME = "manifest.json"
CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "pretrain"  # "pretrain" or "transfer"
    epochs_flat: int = 100
    epochs_decay: int = 100
    lr: float = 0.0002
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    ssim: SsimConfig = field(default_factory=SsimConfig)
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    freeze: Optional[FreezeSpec] = None
    seed: int = 0
    batch_size: int = 1
    pool_size: int = 50
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = final only

    def total_epochs(self) -> int:
        return self.epochs_flat + self.epochs_decay

    def validate(self) -> None:
        if self.stage not in ("pretrain", "transfer"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs_flat < 0 or self.epochs_decay < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pool_size < 0:
            raise ConfigError(f"pool_size must be >= 0, got {self.pool_size}")
        self.weights.validate()
        self.ssim.validate(side=self.gen.side)
        if self.freeze is not None:
            self.freeze.validate()

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["weights"] = self.weights.to_dict()
        d["ssim"] = self.ssim.to_dict()
        d["gen"] = self.gen.to_dict()
        d["disc"] = self.disc.to_dict()
        d["freeze"] = self.freeze.to_dict() if self.freeze else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        ssim = dict(d["ssim"])
        if ssim.get("scale_weights") is not None:
            ssim["scale_weights"] = tuple(ssim["scale_weights"])
        d["ssim"] = SsimConfig(**ssim)
        d["gen"] = GeneratorConfig(**d["gen"])
        d["disc"] = DiscriminatorConfig(**d["disc"])
        d["freeze"] = FreezeSpec.from_dict(d["freeze"]) if d.get("freeze") else None
        return cls(**d)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning-rate schedule: flat, then a linear ramp toward zero.

    The rate stays at cfg.lr through the flat phase and then descends by
    lr/epochs_decay per epoch, so the final in-range epoch runs at
    lr/epochs_decay and zero would be reached one epoch past the end.
    """
    if not 0 <= epoch < cfg.total_epochs():
        raise ContractError(f"epoch {epoch} outside [0, {cfg.total_epochs()})")
    if epoch < cfg.epochs_flat:
        return cfg.lr
    return cfg.lr * (1.0 - (epoch - cfg.epochs_flat) / cfg.epochs_decay)


class MaskedAdam:
    """Adam that honors per-tensor and per-element trainability exactly.

    Gradients are masked before the moment update and frozen entries are
    written back with a select, so a frozen element's bit pattern can never
    change. Fully frozen tensors are skipped outright (their moments stay
    zero), matching how a parameter excluded from an optimizer would behave.
    """

    def __init__(
        self,
        named_registries: list[tuple[str, ParamRegistry]],
        beta1: float = 0.5,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.named_registries = named_registries
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}
        for tag, reg in named_registries:
            for name, p in reg:
                key = f"{tag}.{name}"
                self.m[key] = torch.zeros_like(p, requires_grad=False)
                self.v[key] = torch.zeros_like(p, requires_grad=False)

    def zero_grad(self) -> None:
        for _, reg in self.named_registries:
            for _, p in reg:
                p.grad = None

    @torch.no_grad()
    def step(self, lr: float) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for tag, reg in self.named_registries:
            for name, p in reg:
                mask = reg.effective_mask(name)
                if mask is not None and not bool(mask.any()):
                    continue
                grad = p.grad
                if grad is None:
                    continue
                if mask is not None:
                    grad = grad * mask
                key = f"{tag}.{name}"
                m = self.m[key]
                v = self.v[key]
                m.mul_(self.beta1).add_(grad, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(grad, grad, value=1.0 - self.beta2)
                update = (m / bias1) / ((v / bias2).sqrt() + self.eps)
                if mask is None:
                    p.add_(update, alpha=-lr)
                else:
                    p.copy_(torch.where(mask, p - lr * update, p))


class ImagePool:
    """Bounded history of generated fakes used for discriminator updates.

    Below capacity a query stores the fresh image and returns it; at capacity
    it returns the fresh image with probability one half, otherwise swaps it
    with a uniformly chosen stored image and returns the evicted one.
    """

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.buffer: list[torch.Tensor] = []

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        if self.capacity == 0:
            return batch
        out = []
        for img in batch:
            if len(self.buffer) < self.capacity:
                self.buffer.append(img.detach().clone())
                out.append(img)
            elif self.rng.random() < 0.5:
                out.append(img)
            else:
                i = int(self.rng.integers(self.capacity))
                out.append(self.buffer[i])
                self.buffer[i] = img.detach().clone()
        return torch.stack(out)


def pool_query(
    pool: ImagePool, fresh: torch.Tensor, rng: Optional[np.random.Generator] = None
) -> torch.Tensor:
    """Single-image pool query; `rng` overrides the pool's own stream."""
    if rng is not None:
        pool.rng = rng
    squeeze = fresh.ndim == 3
    result = pool.query(fresh.unsqueeze(0) if squeeze else fresh)
    return result.squeeze(0) if squeeze else result


def _net_seed(seed: int, index: int) -> int:
    return (seed * 4 + index) % (2**62)


def _pool_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng([seed, 0x900C, 0 if tag == "a" else 1])


@dataclass
class TrainState:
    cfg: TrainConfig
    gen_a: GeneratorNet
    gen_b: GeneratorNet
    disc_a: DiscriminatorNet
    disc_b: DiscriminatorNet
    opt_g: MaskedAdam
    opt_da: MaskedAdam
    opt_db: MaskedAdam
    pool_a: ImagePool
    pool_b: ImagePool
    mask: Optional[FreezeMask] = None
    epoch: int = 0  # completed epochs
    step: int = 0  # completed optimization steps

    def networks(self) -> dict[str, torch.nn.Module]:
        return {
            "gen_a": self.gen_a,
            "gen_b": self.gen_b,
            "disc_a": self.disc_a,
            "disc_b": self.disc_b,
        }

    def optimizers(self) -> dict[str, MaskedAdam]:
        return {"opt_g": self.opt_g, "opt_da": self.opt_da, "opt_db": self.opt_db}


def init_state(cfg: TrainConfig) -> TrainState:
    """Seed-deterministic fresh state: networks, optimizers, pools."""
    cfg.validate()
    gen_a = build_generator(cfg.gen, _net_seed(cfg.seed, 0))
    gen_b = build_generator(cfg.gen, _net_seed(cfg.seed, 1))
    disc_a = build_discriminator(cfg.disc, _net_seed(cfg.seed, 2))
    disc_b = build_discriminator(cfg.disc, _net_seed(cfg.seed, 3))
    state = TrainState(
        cfg=cfg,
        gen_a=gen_a,
        gen_b=gen_b,
        disc_a=disc_a,
        disc_b=disc_b,
        opt_g=MaskedAdam(
            [("g_a", gen_a.params), ("g_b", gen_b.params)], cfg.adam_beta1, cfg.adam_beta2
        ),
        opt_da=MaskedAdam([("d_a", disc_a.params)], cfg.adam_beta1, cfg.adam_beta2),
        opt_db=MaskedAdam([("d_b", disc_b.params)], cfg.adam_beta1, cfg.adam_beta2),
        pool_a=ImagePool(cfg.pool_size, _pool_rng(cfg.seed, "a")),
        pool_b=ImagePool(cfg.pool_size, _pool_rng(cfg.seed, "b")),
    )
    if cfg.stage == "transfer" and cfg.freeze is not None:
        state.mask = cfg.freeze.derive(gen_a, gen_b)
        apply_mask_to_generators(gen_a, gen_b, state.mask)
    return state


def training_step(
    state: TrainState, batch_a: torch.Tensor, batch_b: torch.Tensor
) -> dict:
    """One optimization step: generators, then discriminator B, then A."""
    cfg = state.cfg
    w = cfg.weights
    lr = lr_at(state.epoch, cfg)
    g_a, g_b, d_a, d_b = state.gen_a, state.gen_b, state.disc_a, state.disc_b
    objective = transfer_objective if cfg.stage == "transfer" else pretrain_objective

    # Generator step. fake_b doubles as the fused image in the transfer stage.
    state.opt_g.zero_grad()
    fake_b = g_a(batch_a)
    fake_a = g_b(batch_b)
    rec_a = g_b(fake_b)
    rec_b = g_a(fake_a)
    zero = torch.zeros(())
    terms = ObjectiveTerms(
        gan_gen_ab=gan_loss(None, d_b(fake_b), "generator", w.gan_mode),
        gan_gen_ba=gan_loss(None, d_a(fake_a), "generator", w.gan_mode),
        cycle=cycle_loss(batch_a, rec_a, batch_b, rec_b),
        gan_disc_a=zero,
        gan_disc_b=zero,
    )
    if w.lambda_identity > 0:
        terms.identity = identity_loss(batch_b, g_a(batch_b), batch_a, g_b(batch_a))
    if cfg.stage == "transfer":
        terms.reg = reg_loss(fake_b, batch_b, cfg.ssim, w.c_const)
    gen_total, _, _ = objective(terms, w)
    check_finite("gen_total", gen_total)
    gen_total.backward()
    state.opt_g.step(lr)

    # Discriminator B sees real b against a pooled history fake.
    state.opt_db.zero_grad()
    pooled_b = state.pool_b.query(fake_b.detach())
    terms.gan_disc_b = gan_loss(d_b(batch_b), d_b(pooled_b), "discriminator", w.gan_mode)
    _, _, disc_b_total = objective(terms, w)
    check_finite("disc_b_total", disc_b_total)
    disc_b_total.backward()
    state.opt_db.step(lr)

    # Discriminator A.
    state.opt_da.zero_grad()
    pooled_a = state.pool_a.query(fake_a.detach())
    terms.gan_disc_a = gan_loss(d_a(batch_a), d_a(pooled_a), "discriminator", w.gan_mode)
    _, disc_a_total, _ = objective(terms, w)
    check_finite("disc_a_total", disc_a_total)
    disc_a_total.backward()
    state.opt_da.step(lr)

    record = {"step": state.step + 1, "epoch": state.epoch, "lr": lr}
    record.update(terms.to_log())
    record["gen_total"] = float(gen_total)
    record["disc_a_total"] = float(disc_a_total)
    record["disc_b_total"] = float(disc_b_total)
    return record


def run_training(
    state: TrainState,
    ds: UnpairedDataset,
    out_dir: Optional[Path] = None,
    log_path: Optional[Path] = None,
    on_step: Optional[Callable[[TrainState, dict], None]] = None,
) -> Path:
    """Run from state.epoch to the configured end; returns the final checkpoint.

    Periodic checkpoints land in out_dir/epoch_NNNN when checkpoint_every is
    set; the final state is always written to out_dir/final. On a non-finite
    loss, a diagnostic checkpoint is saved and NumericalError propagates.
    """
    cfg = state.cfg
    ds.validate(cfg.stage)
    log_file = open(log_path, "a") if log_path else None
    try:
        for epoch in range(state.epoch, cfg.total_epochs()):
            for batch_a, batch_b in epoch_batches(
                ds, cfg.stage, cfg.seed, epoch, cfg.batch_size
            ):
                try:
                    record = training_step(state, batch_a, batch_b)
                except NumericalError:
                    if out_dir is not None:
                        save_checkpoint(state, Path(out_dir) / "diagnostic")
                    raise
                state.step += 1
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                if on_step:
                    on_step(state, record)
            state.epoch = epoch + 1
            if (
                out_dir is not None
                and cfg.checkpoint_every > 0
                and state.epoch % cfg.checkpoint_every == 0
                and state.epoch < cfg.total_epochs()
            ):
                save_checkpoint(state, Path(out_dir) / f"epoch_{state.epoch:04d}")
        if log_file:
            log_file.flush()
    finally:
        if log_file:
            log_file.close()
    if out_dir is None:
        raise ConfigError("run_training needs an output directory for the final checkpoint")
    return save_checkpoint(state, Path(out_dir) / "final")


def pretrain(
    ds: UnpairedDataset,
    cfg: TrainConfig,
    out_dir: Path,
    log_path: Optional[Path] = None,
) -> Path:
    """Stage one: adversarial + cycle training on the two unpaired domains."""
    if cfg.stage != "pretrain":
        raise ConfigError("pretrain() requires cfg.stage == 'pretrain'")
    state = init_state(cfg)
    return run_training(state, ds, out_dir, log_path)


def transfer(
    base: Path | TrainState,
    pair: tuple[torch.Tensor, torch.Tensor],
    cfg: TrainConfig,
    out_dir: Path,
    log_path: Optional[Path] = None,
    on_step: Optional[Callable[[TrainState, dict], None]] = None,
) -> Path:
    """Stage two: one-shot adaptation of a pre-trained checkpoint.

    Loads the four networks from `base`, freezes generator parameters per
    cfg.freeze, and optimizes the transfer objective on the single (a, b')
    pair. One epoch is one optimization step. The optimizer restarts fresh
    (schedule from epoch zero) rather than continuing the decayed one.
    """
    if cfg.stage != "transfer":
        raise ConfigError("transfer() requires cfg.stage == 'transfer'")
    if cfg.freeze is None:
        raise ConfigError("transfer() requires a freeze spec (rate may be 0)")
    cfg.validate()
    if isinstance(base, (str, Path)):
        base_state = load_checkpoint(Path(base))
    else:
        base_state = base
    if base_state.cfg.gen != cfg.gen or base_state.cfg.disc != cfg.disc:
        raise ContractError(
            "architecture mismatch between the base checkpoint and the transfer config"
        )
    state = init_state(cfg)
    with torch.no_grad():
        for name in ("gen_a", "gen_b", "disc_a", "disc_b"):
            src = base_state.networks()[name]
            dst = state.networks()[name]
            for (sn, sp), (dn, dp) in zip(src.named_parameters(), dst.named_parameters()):
                if sn != dn or sp.shape != dp.shape:
                    raise ContractError(f"parameter mismatch loading {name}.{sn}")
                dp.copy_(sp)
    ds = UnpairedDataset(transfer_pair=pair)
    return run_training(state, ds, out_dir, log_path, on_step=on_step)


def resume(ckpt: Path, ds: UnpairedDataset, out_dir: Path, log_path: Optional[Path] = None) -> Path:
    """Continue an interrupted run from one of its checkpoints."""
    state = load_checkpoint(Path(ckpt))
    return run_training(state, ds, out_dir, log_path)


def save_checkpoint(state: TrainState, directory: Path) -> Path:
    """Write manifest.json plus one .f32 blob per tensor, atomically."""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = directory.parent / (directory.name + ".tmp")
    if tmp.exists():
        for p in tmp.iterdir():
            p.unlink()
        tmp.rmdir()
    tmp.mkdir()
    tensors: dict[str, dict] = {}

    def put(name: str, array: np.ndarray) -> None:
        tensors[name] = write_blob(tmp / f"{name}.f32", array)

    for net_name, net in state.networks().items():
        for pname, p in net.named_parameters():
            put(f"{net_name}.{pname}", p.detach().numpy())
    for opt_name, opt in state.optimizers().items():
        for key, m in opt.m.items():
            put(f"{opt_name}.{key}.m", m.numpy())
            put(f"{opt_name}.{key}.v", opt.v[key].numpy())
    for pool_name, pool in (("pool_a", state.pool_a), ("pool_b", state.pool_b)):
        for i, img in enumerate(pool.buffer):
            put(f"{pool_name}.{i:04d}", img.numpy())

    manifest = {
        "schema": CHECKPOINT_SCHEMA,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "stage": state.cfg.stage,
        "epoch": state.epoch,
        "step": state.step,
        "config": state.cfg.to_dict(),
        "freeze_mask": (
            {"spec": state.mask.spec.to_dict(), "summary": state.mask.summary()}
            if state.mask
            else None
        ),
        "adam_steps": {name: opt.t for name, opt in state.optimizers().items()},
        "rng": {
            "pool_a": state.pool_a.rng.bit_generator.state,
            "pool_b": state.pool_b.rng.bit_generator.state,
        },
        "pool_sizes": {"a": len(state.pool_a.buffer), "b": len(state.pool_b.buffer)},
        "tensors": tensors,
    }
    (tmp / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    if directory.exists():
        backup = directory.parent / (directory.name + ".old")
        directory.rename(backup)
        tmp.rename(directory)
        for p in backup.iterdir():
            p.unlink()
        backup.rmdir()
    else:
        tmp.rename(directory)
    return directory


def read_manifest(directory: Path) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise IntegrityError(f"no {MANIFEST_NAME} in {directory}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"corrupt manifest in {directory}: {exc}") from exc


def load_checkpoint(directory: Path) -> TrainState:
    """Restore a TrainState bit-exactly from a checkpoint directory."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    cfg = TrainConfig.from_dict(manifest["config"])
    cfg.validate()
    gen_a = GeneratorNet(cfg.gen)
    gen_b = GeneratorNet(cfg.gen)
    disc_a = DiscriminatorNet(cfg.disc)
    disc_b = DiscriminatorNet(cfg.disc)
    state = TrainState(
        cfg=cfg,
        gen_a=gen_a,
        gen_b=gen_b,
        disc_a=disc_a,
        disc_b=disc_b,
        opt_g=MaskedAdam(
            [("g_a", gen_a.params), ("g_b", gen_b.params)], cfg.adam_beta1, cfg.adam_beta2
        ),
        opt_da=MaskedAdam([("d_a", disc_a.params)], cfg.adam_beta1, cfg.adam_beta2),
        opt_db=MaskedAdam([("d_b", disc_b.params)], cfg.adam_beta1, cfg.adam_beta2),
        pool_a=ImagePool(cfg.pool_size, _pool_rng(cfg.seed, "a")),
        pool_b=ImagePool(cfg.pool_size, _pool_rng(cfg.seed, "b")),
        epoch=manifest["epoch"],
        step=manifest["step"],
    )
    tensors = manifest["tensors"]

    def get(name: str) -> torch.Tensor:
        if name not in tensors:
            raise IntegrityError(f"manifest lists no tensor named '{name}'")
        arr = read_blob(directory / tensors[name]["file"], tensors[name], name=name)
        return torch.from_numpy(arr.astype(np.float32, copy=False))

    with torch.no_grad():
        for net_name, net in state.networks().items():
            for pname, p in net.named_parameters():
                loaded = get(f"{net_name}.{pname}")
                if loaded.shape != p.shape:
                    raise IntegrityError(
                        f"tensor '{net_name}.{pname}' has shape {tuple(loaded.shape)}, "
                        f"expected {tuple(p.shape)}"
                    )
                p.copy_(loaded)
    for opt_name, opt in state.optimizers().items():
        opt.t = manifest["adam_steps"][opt_name]
        for key in opt.m:
            opt.m[key] = get(f"{opt_name}.{key}.m")
            opt.v[key] = get(f"{opt_name}.{key}.v")
    for pool_name, pool, tag in (("pool_a", state.pool_a, "a"), ("pool_b", state.pool_b, "b")):
        n = manifest["pool_sizes"][tag]
        pool.buffer = [get(f"{pool_name}.{i:04d}") for i in range(n)]
        rng_state = manifest["rng"][pool_name]
        pool.rng.bit_generator.state = rng_state
    if manifest.get("freeze_mask"):
        spec = FreezeSpec.from_dict(manifest["freeze_mask"]["spec"])
        expected = manifest["freeze_mask"]["summary"]["content_hash"]
        state.mask = derive_and_verify(spec, gen_a, gen_b, expected)
        apply_mask_to_generators(gen_a, gen_b, state.mask)
    return state
