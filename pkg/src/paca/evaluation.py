"""Batch inference and the metric harness.

The Fréchet score between two image sets is one operation applied under
pluggable feature extractors: fit Gaussian statistics to each set's feature
vectors, then compute
    ||mu_p - mu_q||^2 + tr(Sigma_p + Sigma_q - 2 (Sigma_p Sigma_q)^{1/2}).
The FID-role and FPD-role columns of a report are this operation under the
two desk-scale extractors below; full-size pretrained extractors can be
plugged in through the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .errors import ContractError, DataError, NumericalError
from .losses import SsimConfig, ms_ssim, rmse
from .networks import GeneratorNet, forward_generator


@dataclass(frozen=True)
class FeatureExtractor:
    """Deterministic map from one (3, H, W) image to a fixed-length vector."""

    name: str
    dim: int
    fn: Callable[[torch.Tensor], np.ndarray]

    def __call__(self, img: torch.Tensor) -> np.ndarray:
        vec = self.fn(img)
        if vec.shape != (self.dim,):
            raise ContractError(
                f"extractor {self.name!r} produced shape {vec.shape}, expected ({self.dim},)"
            )
        return vec


def conv_extractor(dim: int = 64, seed: int = 7919) -> FeatureExtractor:
    """Fixed-seed random-weight convolutional features with global pooling."""
    net = nn.Sequential(
        nn.Conv2d(3, 16, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(16, 32, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(32, dim, 3, stride=2, padding=1),
    )
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.Conv2d):
                m.weight.normal_(0.0, 0.1, generator=gen)
                m.bias.zero_()
    net.eval()

    def fn(img: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            out = net(img.unsqueeze(0))
        return out.mean(dim=(2, 3)).squeeze(0).numpy().astype(np.float64)

    return FeatureExtractor(name=f"conv-rand-{dim}", dim=dim, fn=fn)


def pixel_extractor(grid: int = 4) -> FeatureExtractor:
    """Raw downsampled-pixel features: adaptive mean pooling to a grid."""
    dim = 3 * grid * grid

    def fn(img: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            pooled = torch.nn.functional.adaptive_avg_pool2d(img.unsqueeze(0), grid)
        return pooled.flatten().numpy().astype(np.float64)

    return FeatureExtractor(name=f"pixels-{dim}", dim=dim, fn=fn)


def default_extractors() -> list[FeatureExtractor]:
    return [conv_extractor(), pixel_extractor()]


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def validate(self) -> None:
        if self.n < 2:
            raise DataError(f"need at least 2 samples, got {self.n}")
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ContractError("covariance shape does not match the mean")
        if np.abs(self.cov - self.cov.T).max() > 1e-8:
            raise ContractError("covariance is not symmetric within 1e-8")


def fit_stats(features: Sequence[np.ndarray] | np.ndarray) -> GaussianStats:
    """Sample mean and unbiased sample covariance of the feature vectors."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"expected (n, dim) features, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise DataError(f"need at least 2 feature vectors, got {arr.shape[0]}")
    mean = arr.mean(axis=0)
    cov = np.cov(arr, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    cov = (cov + cov.T) / 2.0
    stats = GaussianStats(mean=mean, cov=cov, n=arr.shape[0])
    stats.validate()
    return stats


def frechet_distance(p: GaussianStats, q: GaussianStats, ridge: float = 1e-6) -> float:
    """Fréchet distance between two Gaussians via symmetric eigendecomposition.

    A ridge of 1e-6 I is added to both covariances before the square root.
    The cross term tr((Sp Sq)^{1/2}) is computed as tr((Sp^{1/2} Sq
    Sp^{1/2})^{1/2}) on the symmetrized matrix, with tiny negative
    eigenvalues clamped at zero.
    """
    p.validate()
    q.validate()
    if p.mean.size != q.mean.size:
        raise ContractError(f"dimension mismatch: {p.mean.size} vs {q.mean.size}")
    eye = np.eye(p.mean.size)
    sp = p.cov + ridge * eye
    sq = q.cov + ridge * eye
    diff = p.mean - q.mean

    vals, vecs = np.linalg.eigh(sp)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("eigendecomposition of a covariance failed")
    root_p = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    inner = root_p @ sq @ root_p
    inner = (inner + inner.T) / 2.0
    cross_vals = np.linalg.eigvalsh(inner)
    if not np.all(np.isfinite(cross_vals)):
        raise NumericalError("matrix square root failed after regularization")
    trace_cross = np.sqrt(np.clip(cross_vals, 0.0, None)).sum()
    value = float(diff @ diff + np.trace(sp) + np.trace(sq) - 2.0 * trace_cross)
    return max(value, 0.0)


def infer_batch(gen: GeneratorNet, inputs: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Apply the generator to each image, preserving order."""
    outputs = []
    with torch.no_grad():
        for img in inputs:
            outputs.append(forward_generator(gen, img))
    return outputs


def extract_features(extractor: FeatureExtractor, images: Sequence[torch.Tensor]) -> np.ndarray:
    return np.stack([extractor(img) for img in images])


@dataclass
class MetricReport:
    tag: str
    n_inputs: int
    frechet_vs_a: dict[str, float]
    frechet_vs_b_prime: dict[str, float]
    ms_ssim_vs_b_prime: Optional[float] = None
    rmse_vs_b_prime: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "n_inputs": self.n_inputs,
            "frechet_vs_a": self.frechet_vs_a,
            "frechet_vs_b_prime": self.frechet_vs_b_prime,
            "ms_ssim_vs_b_prime": self.ms_ssim_vs_b_prime,
            "rmse_vs_b_prime": self.rmse_vs_b_prime,
        }


def evaluate_run(
    gen: GeneratorNet,
    inputs: Sequence[torch.Tensor],
    ref_a: Sequence[torch.Tensor],
    ref_b_prime: Sequence[torch.Tensor],
    extractors: Optional[Sequence[FeatureExtractor]] = None,
    ssim_cfg: Optional[SsimConfig] = None,
    pair_target: Optional[torch.Tensor] = None,
    tag: str = "run",
) -> tuple[MetricReport, list[torch.Tensor]]:
    """Run inference and score the fused set against both reference sets.

    `pair_target` is the single transfer target b'; when given (with an SSIM
    config), the report carries mean similarity and RMSE of the fused images
    against it. Returns the report and the fused images so callers can save
    them.
    """
    if not inputs or not ref_a or not ref_b_prime:
        raise DataError("evaluate_run needs non-empty input and reference sets")
    extractors = list(extractors) if extractors is not None else default_extractors()
    fused = infer_batch(gen, inputs)
    report = MetricReport(
        tag=tag, n_inputs=len(inputs), frechet_vs_a={}, frechet_vs_b_prime={}
    )
    for ex in extractors:
        stats_fused = fit_stats(extract_features(ex, fused))
        report.frechet_vs_a[ex.name] = frechet_distance(
            stats_fused, fit_stats(extract_features(ex, ref_a))
        )
        report.frechet_vs_b_prime[ex.name] = frechet_distance(
            stats_fused, fit_stats(extract_features(ex, ref_b_prime))
        )
    if ssim_cfg is not None and pair_target is not None:
        with torch.no_grad():
            sims = [float(ms_ssim(img, pair_target, ssim_cfg)) for img in fused]
            errs = [float(rmse(img, pair_target)) for img in fused]
        report.ms_ssim_vs_b_prime = float(np.mean(sims))
        report.rmse_vs_b_prime = float(np.mean(errs))
    return report, fused


def ablation_table(
    reports: Sequence[MetricReport], extractors: Sequence[FeatureExtractor]
) -> str:
    """Markdown table: one row per method, Fréchet columns per extractor.

    The first extractor plays the FID role, the second the FPD role, against
    both the calligraphy domain and the transfer-target domain.
    """
    if len(extractors) < 2:
        raise ContractError("ablation table needs two extractors (FID role, FPD role)")
    fid, fpd = extractors[0].name, extractors[1].name
    lines = [
        "| Method | FID_A | FPD_A | FID_B' | FPD_B' |",
        "| --- | --- | --- | --- | --- |",
    ]
    for r in reports:
        lines.append(
            f"| {r.tag} | {r.frechet_vs_a[fid]:.4f} | {r.frechet_vs_a[fpd]:.4f} "
            f"| {r.frechet_vs_b_prime[fid]:.4f} | {r.frechet_vs_b_prime[fpd]:.4f} |"
        )
    return "\n".join(lines) + "\n"
