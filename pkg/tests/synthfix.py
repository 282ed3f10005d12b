"""Synthetic two-domain fixture: glyph strokes versus textured blobs.

Domain A mimics calligraphy: thick dark strokes on a light ground, meant to
be polarized. Domain B mimics paintings: smooth low-frequency color fields.
Everything is a pure function of the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw


def glyph_array(rng: np.random.Generator, side: int = 64) -> np.ndarray:
    """Stroke-like figure: 3-6 thick dark polyline segments on white."""
    img = Image.new("L", (side, side), 255)
    draw = ImageDraw.Draw(img)
    n_strokes = int(rng.integers(3, 7))
    for _ in range(n_strokes):
        n_pts = int(rng.integers(2, 5))
        pts = [
            (float(rng.uniform(side * 0.1, side * 0.9)), float(rng.uniform(side * 0.1, side * 0.9)))
            for _ in range(n_pts)
        ]
        width = int(rng.integers(2, max(3, side // 12)))
        draw.line(pts, fill=0, width=width)
    arr = np.asarray(img, dtype=np.uint8)
    return np.stack([arr, arr, arr], axis=-1)


def blob_array(rng: np.random.Generator, side: int = 64, warm: bool = False) -> np.ndarray:
    """Smooth colored texture: a few random low-frequency sinusoids per channel."""
    yy, xx = np.meshgrid(np.linspace(0, 1, side), np.linspace(0, 1, side), indexing="ij")
    channels = []
    for _ in range(3):
        field = np.zeros((side, side))
        for _ in range(4):
            fx, fy = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.3, 1.0)
            field += amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        field = (field - field.min()) / (field.max() - field.min() + 1e-9)
        channels.append(field)
    img = np.stack(channels, axis=-1)
    low, high = (90.0, 235.0) if warm else (40.0, 215.0)
    if warm:
        # bias toward reds/yellows so the transfer target is visibly distinct
        img = img * np.array([1.0, 0.8, 0.5]) + np.array([0.0, 0.1, 0.0])
        img = np.clip(img, 0.0, 1.0)
    return (low + img * (high - low)).astype(np.uint8)


def write_fixture(
    root: Path, n_per_domain: int = 64, side: int = 64, seed: int = 0
) -> dict[str, Path]:
    """Write PNG directories for both domains plus the transfer pair files."""
    root = Path(root)
    rng = np.random.default_rng([seed, 0xF1D0])
    dirs = {
        "domain_a": root / "domain_a",
        "domain_b": root / "domain_b",
        "ref_b_prime": root / "ref_b_prime",
    }
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    for i in range(n_per_domain):
        Image.fromarray(glyph_array(rng, side)).save(dirs["domain_a"] / f"glyph_{i:03d}.png")
    for i in range(n_per_domain):
        Image.fromarray(blob_array(rng, side)).save(dirs["domain_b"] / f"blob_{i:03d}.png")
    # a small B'-like reference set (warm-toned blobs) for Fréchet columns
    for i in range(8):
        Image.fromarray(blob_array(rng, side, warm=True)).save(
            dirs["ref_b_prime"] / f"target_{i:03d}.png"
        )
    pair_a = root / "pair_a.png"
    pair_b = root / "pair_b.png"
    Image.fromarray(glyph_array(rng, side)).save(pair_a)
    Image.fromarray(blob_array(rng, side, warm=True)).save(pair_b)
    return {**dirs, "pair_a": pair_a, "pair_b": pair_b, "root": root}


def array_to_tensor(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(arr.astype(np.float32) / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def fixture_tensors(
    n_per_domain: int = 64, side: int = 64, seed: int = 0
) -> dict[str, list[torch.Tensor] | tuple[torch.Tensor, torch.Tensor]]:
    """In-memory version of the fixture, with domain A polarized to +/-1."""
    rng = np.random.default_rng([seed, 0xF1D0])
    domain_a = [array_to_tensor(glyph_array(rng, side)) for _ in range(n_per_domain)]
    domain_a = [torch.where(t >= 0, 1.0, -1.0) for t in domain_a]
    domain_b = [array_to_tensor(blob_array(rng, side)) for _ in range(n_per_domain)]
    ref_b_prime = [array_to_tensor(blob_array(rng, side, warm=True)) for _ in range(8)]
    pair_a = torch.where(array_to_tensor(glyph_array(rng, side)) >= 0, 1.0, -1.0)
    pair_b = array_to_tensor(blob_array(rng, side, warm=True))
    return {
        "domain_a": domain_a,
        "domain_b": domain_b,
        "ref_b_prime": ref_b_prime,
        "pair": (pair_a, pair_b),
    }
