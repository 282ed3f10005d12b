"""Image ingestion and batching for the two unpaired domains.

Images are carried as torch float32 tensors of shape (3, side, side) with
values in [-1, 1]; 8-bit pixel v maps to v / 127.5 - 1, so 0 -> -1.0 and
255 -> +1.0. Calligraphy-like inputs can additionally be polarized so every
pixel lands exactly on -1.0 or +1.0.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .blobs import read_blob, write_blob
from .errors import ConfigError, ContractError, DataError, IntegrityError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

_RESIZE_FILTERS = {
    "bilinear": Image.Resampling.BILINEAR,
    "nearest": Image.Resampling.NEAREST,
}


@dataclass(frozen=True)
class PreprocessConfig:
    """Resize/polarize settings applied to every source image."""

    side: int = 64
    polarize: bool = False
    threshold_mode: str = "fixed"  # "fixed" or "otsu"
    fixed_threshold: int = 128  # on the 0..255 scale
    resize_filter: str = "bilinear"  # "bilinear" or "nearest"

    def validate(self) -> None:
        if self.side < 1:
            raise ConfigError(f"side must be positive, got {self.side}")
        if self.threshold_mode not in ("fixed", "otsu"):
            raise ConfigError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.threshold_mode == "fixed" and not 0 <= self.fixed_threshold <= 255:
            raise ConfigError(
                f"fixed_threshold must be in [0, 255], got {self.fixed_threshold}"
            )
        if self.resize_filter not in _RESIZE_FILTERS:
            raise ConfigError(f"unknown resize_filter {self.resize_filter!r}")

    def content_hash(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def validate_image(img: torch.Tensor, side: Optional[int] = None) -> None:
    """Check the image tensor contract; raise ContractError on violation."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractError(f"expected (3, H, W) image tensor, got {tuple(img.shape)}")
    if img.shape[1] != img.shape[2]:
        raise ContractError(f"image must be square, got {tuple(img.shape)}")
    if side is not None and img.shape[1] != side:
        raise ContractError(f"expected side {side}, got {img.shape[1]}")
    if not torch.isfinite(img).all():
        raise ContractError("image contains non-finite values")
    if img.min() < -1.0 or img.max() > 1.0:
        raise ContractError("image values outside [-1, 1]")


def load_image(path: Path, cfg: PreprocessConfig) -> torch.Tensor:
    """Decode, square-crop, resize, and map a PNG/JPEG file to [-1, 1].

    Grayscale sources are replicated to 3 channels. Non-square sources are
    center-cropped to a square before resizing.
    """
    cfg.validate()
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            img = im.convert("RGB")
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    w, h = img.size
    if w == 0 or h == 0:
        raise DataError(f"malformed image {path}: zero dimension ({w}x{h})")
    if w != h:
        s = min(w, h)
        left = (w - s) // 2
        top = (h - s) // 2
        img = img.crop((left, top, left + s, top + s))
    img = img.resize((cfg.side, cfg.side), _RESIZE_FILTERS[cfg.resize_filter])
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    tensor = torch.from_numpy(arr).permute(2, 0, 1).contiguous()
    if cfg.polarize:
        tensor = polarize(tensor, cfg)
    return tensor


def otsu_threshold(luminance: torch.Tensor) -> float:
    """Otsu's threshold over the 8-bit histogram of a [-1, 1] luminance map.

    Returns the threshold on the [-1, 1] scale, placed halfway between the
    maximizing level and the next, so pixels quantizing to the low class fall
    strictly below it.
    """
    levels = torch.clamp((luminance + 1.0) * 127.5, 0, 255).round().to(torch.int64)
    hist = np.bincount(levels.flatten().numpy(), minlength=256).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist)
    mu = np.cumsum(hist * np.arange(256))
    mu_total = mu[-1]
    # between-class variance; guard empty classes
    with np.errstate(divide="ignore", invalid="ignore"):
        variance = (mu_total * omega - mu * total) ** 2 / (omega * (total - omega))
    variance[~np.isfinite(variance)] = -1.0
    t = int(np.argmax(variance))
    return (t + 0.5) / 127.5 - 1.0


def polarize(img: torch.Tensor, cfg: PreprocessConfig) -> torch.Tensor:
    """Threshold per-pixel luminance and broadcast to all 3 channels.

    Every output element is exactly -1.0 or +1.0 (the mapped images of 0 and
    255). Luminance at or above the threshold goes to +1.0.
    """
    validate_image(img)
    luminance = img.mean(dim=0)
    if cfg.threshold_mode == "otsu":
        threshold = otsu_threshold(luminance)
    else:
        threshold = cfg.fixed_threshold / 127.5 - 1.0
    # compare in float64: casting the threshold down to float32 could merge it
    # with a luminance level right at the quantization boundary
    binary = torch.where(
        luminance.to(torch.float64) >= threshold,
        torch.tensor(1.0, dtype=img.dtype),
        torch.tensor(-1.0, dtype=img.dtype),
    )
    return binary.unsqueeze(0).expand(3, -1, -1).contiguous()


def save_image(img: torch.Tensor, path: Path) -> None:
    """Quantize a [-1, 1] image back to 8-bit and write a PNG."""
    validate_image(img)
    arr = ((img + 1.0) * 127.5).clamp(0, 255).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).numpy(), mode="RGB").save(path)


@dataclass
class UnpairedDataset:
    """Two independent image pools plus the optional one-shot transfer pair."""

    domain_a: list[torch.Tensor] = field(default_factory=list)
    domain_b: list[torch.Tensor] = field(default_factory=list)
    transfer_pair: Optional[tuple[torch.Tensor, torch.Tensor]] = None
    split_fraction: float = 0.8

    def validate(self, stage: str) -> None:
        if not 0.0 < self.split_fraction <= 1.0:
            raise ConfigError(f"split_fraction must be in (0, 1], got {self.split_fraction}")
        if stage == "pretrain" and (not self.domain_a or not self.domain_b):
            raise DataError("both domains must be non-empty for pre-training")
        if stage == "transfer" and self.transfer_pair is None:
            raise DataError("transfer stage requires a transfer pair")

    def train_split(self, seed: int) -> "UnpairedDataset":
        """Deterministic train subset: split_fraction of each domain."""

        def pick(pool: list[torch.Tensor], tag: int) -> list[torch.Tensor]:
            n = len(pool)
            k = max(1, int(round(n * self.split_fraction))) if n else 0
            order = np.random.default_rng([seed, 0x5B17, tag]).permutation(n)
            return [pool[i] for i in sorted(order[:k])]

        return replace(self, domain_a=pick(self.domain_a, 0), domain_b=pick(self.domain_b, 1))


def epoch_batches(
    ds: UnpairedDataset,
    stage: str,
    seed: int,
    epoch: int,
    batch_size: int = 1,
) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
    """Yield (batch_a, batch_b) pairs, each stacked to (N, 3, H, W).

    Pre-training draws a fresh permutation of each domain per epoch, so every
    domain-A image appears exactly once per epoch; domain B is permuted
    independently and cycled to match. The order is a pure function of
    (seed, epoch), which keeps resumed runs on the original batch sequence.
    Transfer yields the single (a, b') pair exactly once.
    """
    ds.validate(stage)
    if stage == "transfer":
        a, b_prime = ds.transfer_pair
        yield a.unsqueeze(0), b_prime.unsqueeze(0)
        return
    if stage != "pretrain":
        raise ConfigError(f"unknown stage {stage!r}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng([seed, 0xBA7C, epoch])
    order_a = rng.permutation(len(ds.domain_a))
    order_b: list[int] = []
    while len(order_b) < len(order_a):
        order_b.extend(rng.permutation(len(ds.domain_b)).tolist())
    for start in range(0, len(order_a), batch_size):
        idx_a = order_a[start : start + batch_size]
        idx_b = order_b[start : start + len(idx_a)]
        batch_a = torch.stack([ds.domain_a[i] for i in idx_a])
        batch_b = torch.stack([ds.domain_b[i] for i in idx_b])
        yield batch_a, batch_b


def next_batch(
    ds: UnpairedDataset, stage: str, rng_seed: int, batch_size: int = 1
) -> tuple[torch.Tensor, torch.Tensor]:
    """First batch of the seed's deterministic epoch-0 sequence."""
    return next(epoch_batches(ds, stage, rng_seed, epoch=0, batch_size=batch_size))


def list_image_files(directory: Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_domain_dir(directory: Path, cfg: PreprocessConfig) -> list[torch.Tensor]:
    """Load and preprocess every PNG/JPEG in a directory, sorted by name."""
    files = list_image_files(directory)
    if not files:
        raise DataError(f"no PNG/JPEG files in {directory}")
    return [load_image(p, cfg) for p in files]


def write_cache_entry(
    cache_dir: Path, stem: str, img: torch.Tensor, source: Path, cfg: PreprocessConfig
) -> Path:
    """Store one preprocessed tensor as {stem}.f32 plus a JSON sidecar."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    meta = write_blob(cache_dir / f"{stem}.f32", img.numpy())
    sidecar = {
        "side": int(img.shape[1]),
        "channels": int(img.shape[0]),
        "source": str(source),
        "source_sha256": hashlib.sha256(Path(source).read_bytes()).hexdigest(),
        "config_hash": cfg.content_hash(),
        "tensor": meta,
    }
    path = cache_dir / f"{stem}.json"
    path.write_text(json.dumps(sidecar, indent=2))
    return path


def cache_entry_is_current(cache_dir: Path, stem: str, source: Path, cfg: PreprocessConfig) -> bool:
    """True when the cached entry matches the source file and config hash."""
    sidecar_path = Path(cache_dir) / f"{stem}.json"
    blob_path = Path(cache_dir) / f"{stem}.f32"
    if not sidecar_path.exists() or not blob_path.exists():
        return False
    try:
        sidecar = json.loads(sidecar_path.read_text())
        if sidecar["config_hash"] != cfg.content_hash():
            return False
        if sidecar["source_sha256"] != hashlib.sha256(Path(source).read_bytes()).hexdigest():
            return False
        read_blob(blob_path, sidecar["tensor"], name=stem)
    except (KeyError, ValueError, IntegrityError):
        return False
    return True


def load_cache_dir(cache_dir: Path) -> list[torch.Tensor]:
    """Load every cached tensor in a directory, sorted by entry name."""
    cache_dir = Path(cache_dir)
    sidecars = sorted(cache_dir.glob("*.json"))
    if not sidecars:
        raise DataError(f"no cache entries in {cache_dir}")
    images = []
    for sidecar_path in sidecars:
        sidecar = json.loads(sidecar_path.read_text())
        arr = read_blob(
            cache_dir / sidecar["tensor"]["file"], sidecar["tensor"], name=sidecar_path.stem
        )
        images.append(torch.from_numpy(arr.astype(np.float32)))
    return images
