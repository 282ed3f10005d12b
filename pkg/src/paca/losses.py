"""Adversarial, cycle-consistency, and similarity-penalty losses.

Composition rules:
  pre-training generator total  = gan(A->B) + gan(B->A) + lambda_cyc * cycle
  transfer generator total      = the above + lambda_reg * reg
  reg(fused, target)            = -(ms_ssim(fused, target) + c_const)
Discriminator totals are mean((real-1)^2) + mean(fake^2) in least-squares
mode. RMSE is provided as a comparator only and is never part of a training
objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractError, NumericalError

# Five-scale weighting from the original multi-scale similarity index,
# normalized to sum exactly to 1 (the published set sums to 1.0001).
_BASE_SCALE_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def default_scale_weights(scales: int) -> tuple[float, ...]:
    if not 1 <= scales <= len(_BASE_SCALE_WEIGHTS):
        raise ConfigError(f"scales must be in [1, {len(_BASE_SCALE_WEIGHTS)}], got {scales}")
    head = _BASE_SCALE_WEIGHTS[:scales]
    total = sum(head)
    return tuple(w / total for w in head)


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_reg: float = 1.0
    c_const: float = 1.0
    gan_mode: str = "least_squares"  # or "cross_entropy"
    lambda_identity: float = 0.0
    reg_in_disc_step: bool = False

    def validate(self) -> None:
        if self.lambda_cyc < 0 or self.lambda_reg < 0 or self.lambda_identity < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.gan_mode not in ("least_squares", "cross_entropy"):
            raise ConfigError(f"unknown gan_mode {self.gan_mode!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    scales: int = 3
    scale_weights: Optional[tuple[float, ...]] = None

    def weights(self) -> tuple[float, ...]:
        if self.scale_weights is None:
            return default_scale_weights(self.scales)
        return tuple(self.scale_weights)

    def validate(self, side: Optional[int] = None) -> None:
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and positive, got {self.window}")
        if self.scales < 1:
            raise ConfigError(f"scales must be >= 1, got {self.scales}")
        w = self.weights()
        if len(w) != self.scales:
            raise ConfigError(f"need {self.scales} scale weights, got {len(w)}")
        if abs(sum(w) - 1.0) > 1e-6:
            raise ConfigError(f"scale weights must sum to 1, got {sum(w)}")
        if side is not None:
            s = side
            for _ in range(self.scales - 1):
                s //= 2
            if s < self.window:
                raise ConfigError(
                    f"side {side} is too small for {self.scales} scales with an "
                    f"{self.window}-pixel window (coarsest side {s})"
                )

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["scale_weights"] = list(self.weights())
        return d


def gan_loss(
    d_scores_real: Optional[torch.Tensor],
    d_scores_fake: torch.Tensor,
    side: str,
    mode: str = "least_squares",
) -> torch.Tensor:
    """Adversarial loss over patch score maps.

    `side` selects whose objective is evaluated: the discriminator scores
    real toward 1 and fake toward 0; the generator pushes fake toward 1 (the
    real map is unused and may be None).
    """
    if side not in ("generator", "discriminator"):
        raise ContractError(f"side must be 'generator' or 'discriminator', got {side!r}")
    if mode not in ("least_squares", "cross_entropy"):
        raise ConfigError(f"unknown gan mode {mode!r}")
    if side == "discriminator" and d_scores_real is None:
        raise ContractError("discriminator side requires real scores")
    if mode == "least_squares":
        if side == "generator":
            return ((d_scores_fake - 1.0) ** 2).mean()
        return ((d_scores_real - 1.0) ** 2).mean() + (d_scores_fake**2).mean()
    if side == "generator":
        return F.binary_cross_entropy_with_logits(
            d_scores_fake, torch.ones_like(d_scores_fake)
        )
    return F.binary_cross_entropy_with_logits(
        d_scores_real, torch.ones_like(d_scores_real)
    ) + F.binary_cross_entropy_with_logits(d_scores_fake, torch.zeros_like(d_scores_fake))


def _check_same_shape(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise ContractError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")


def cycle_loss(
    a: torch.Tensor, aba: torch.Tensor, b: torch.Tensor, bab: torch.Tensor
) -> torch.Tensor:
    """Mean absolute reconstruction error of both round trips, summed."""
    _check_same_shape(a, aba)
    _check_same_shape(b, bab)
    return (a - aba).abs().mean() + (b - bab).abs().mean()


def identity_loss(b: torch.Tensor, g_a_of_b: torch.Tensor, a: torch.Tensor, g_b_of_a: torch.Tensor) -> torch.Tensor:
    """Optional same-domain passthrough penalty (off by default)."""
    _check_same_shape(b, g_a_of_b)
    _check_same_shape(a, g_b_of_a)
    return (b - g_a_of_b).abs().mean() + (a - g_b_of_a).abs().mean()


def rmse(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Root mean square elementwise difference. Comparator only."""
    _check_same_shape(x, y)
    return ((x - y) ** 2).mean().sqrt()


def _gaussian_window(window: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    coords = torch.arange(window, dtype=dtype) - (window - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def _windowed_moments(
    x: torch.Tensor, y: torch.Tensor, window2d: torch.Tensor
) -> tuple[torch.Tensor, ...]:
    channels = x.shape[1]
    kernel = window2d.expand(channels, 1, -1, -1)
    mu_x = F.conv2d(x, kernel, groups=channels)
    mu_y = F.conv2d(y, kernel, groups=channels)
    sigma_x = F.conv2d(x * x, kernel, groups=channels) - mu_x * mu_x
    sigma_y = F.conv2d(y * y, kernel, groups=channels) - mu_y * mu_y
    sigma_xy = F.conv2d(x * y, kernel, groups=channels) - mu_x * mu_y
    return mu_x, mu_y, sigma_x, sigma_y, sigma_xy


def ms_ssim(x: torch.Tensor, y: torch.Tensor, cfg: SsimConfig) -> torch.Tensor:
    """Multi-scale structural similarity of two [-1, 1] images.

    Images are remapped to [0, 1] (dynamic range 1). Each scale contributes
    the mean contrast-structure term over an 11x11 Gaussian sliding window
    (valid positions only); the coarsest scale contributes the full
    luminance-weighted term. Scales are linked by 2x2 mean-pool downsampling
    and combined as a weighted geometric mean, with per-scale means clamped
    at zero so fractional powers stay real. Differentiable in both inputs.
    """
    _check_same_shape(x, y)
    squeeze = x.ndim == 3
    if squeeze:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    if x.ndim != 4:
        raise ContractError(f"expected (N, C, H, W) or (C, H, W), got {tuple(x.shape)}")
    cfg.validate(side=min(x.shape[-2:]))
    weights = cfg.weights()
    c1 = (cfg.k1 * 1.0) ** 2
    c2 = (cfg.k2 * 1.0) ** 2
    window2d = _gaussian_window(cfg.window, cfg.sigma, x.dtype)
    u, v = (x + 1.0) / 2.0, (y + 1.0) / 2.0
    total = None
    for level in range(cfg.scales):
        mu_x, mu_y, sigma_x, sigma_y, sigma_xy = _windowed_moments(u, v, window2d)
        cs_map = (2 * sigma_xy + c2) / (sigma_x + sigma_y + c2)
        if level < cfg.scales - 1:
            term = cs_map.mean()
            u = F.avg_pool2d(u, kernel_size=2)
            v = F.avg_pool2d(v, kernel_size=2)
        else:
            lum_map = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
            term = (lum_map * cs_map).mean()
        factor = term.clamp(min=0.0) ** weights[level]
        total = factor if total is None else total * factor
    return total


def reg_loss(
    fused: torch.Tensor, b_prime: torch.Tensor, cfg: SsimConfig, c_const: float
) -> torch.Tensor:
    """Transfer-stage penalty: -(ms_ssim(fused, b_prime) + c_const)."""
    return -(ms_ssim(fused, b_prime, cfg) + c_const)


@dataclass
class ObjectiveTerms:
    """Named loss components of one optimization step, before weighting."""

    gan_gen_ab: torch.Tensor
    gan_gen_ba: torch.Tensor
    cycle: torch.Tensor
    gan_disc_a: torch.Tensor
    gan_disc_b: torch.Tensor
    identity: Optional[torch.Tensor] = None
    reg: Optional[torch.Tensor] = None

    def to_log(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            if value is not None:
                out[key] = float(value)
        return out


def pretrain_objective(
    terms: ObjectiveTerms, weights: LossWeights
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(generator total, discriminator-A total, discriminator-B total)."""
    gen = terms.gan_gen_ab + terms.gan_gen_ba + weights.lambda_cyc * terms.cycle
    if terms.identity is not None and weights.lambda_identity > 0:
        gen = gen + weights.lambda_identity * terms.identity
    return gen, terms.gan_disc_a, terms.gan_disc_b


def transfer_objective(
    terms: ObjectiveTerms, weights: LossWeights
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pre-training totals plus lambda_reg times the similarity penalty.

    The penalty depends only on generator outputs, so its gradient reaches
    only the A->B' generator. With `reg_in_disc_step` the same (detached)
    value is also folded into the reported B'-discriminator total, which
    changes logging but no gradients.
    """
    if weights.lambda_reg > 0 and terms.reg is None:
        raise ContractError("transfer objective requires the reg term")
    gen, disc_a, disc_b = pretrain_objective(terms, weights)
    if terms.reg is not None:
        gen = gen + weights.lambda_reg * terms.reg
        if weights.reg_in_disc_step:
            disc_b = disc_b + weights.lambda_reg * terms.reg.detach()
    return gen, disc_a, disc_b


def check_finite(name: str, value: torch.Tensor) -> None:
    v = float(value.detach())
    if not math.isfinite(v):
        raise NumericalError(f"non-finite loss: {name} = {v}")
