"""Shared gradient-audit helper: analytic gradients versus central differences.

The float64 central difference is the oracle. The float32 analytic gradient
must match it within 1e-3 relative error and the float64 analytic gradient
within 1e-5 (an f32 secant is noise-bound below ~1e-2 for means over many
pixels, so the oracle differences are taken in float64 where they are
trustworthy to ~1e-10).
"""

from __future__ import annotations

from typing import Callable

import torch

REL32 = 1e-3
REL64 = 1e-5


def fd_audit(
    make_loss: Callable[[torch.Tensor], torch.Tensor],
    x0: torch.Tensor,
    k: int = 5,
    eps: float = 1e-6,
) -> tuple[float, float]:
    """Audit d(make_loss)/dx at the k largest-gradient coordinates of x0.

    Returns (worst relative error of the f32 analytic gradient, worst
    relative error of the f64 analytic gradient), both against the f64
    central difference.
    """
    x32 = x0.detach().clone().float().requires_grad_(True)
    make_loss(x32).backward()
    g32 = x32.grad.flatten()

    x64 = x0.detach().clone().double().requires_grad_(True)
    make_loss(x64).backward()
    g64 = x64.grad.flatten()

    order = g64.abs().argsort(descending=True)[:k]
    base64 = x0.detach().clone().double()
    flat = base64.view(-1)
    worst32 = 0.0
    worst64 = 0.0
    for idx in order.tolist():
        with torch.no_grad():
            orig = flat[idx].item()
            flat[idx] = orig + eps
            hi = make_loss(base64).item()
            flat[idx] = orig - eps
            lo = make_loss(base64).item()
            flat[idx] = orig
        fd = (hi - lo) / (2 * eps)
        denom = max(abs(fd), 1e-12)
        worst32 = max(worst32, abs(g32[idx].item() - fd) / denom)
        worst64 = max(worst64, abs(g64[idx].item() - fd) / denom)
    return worst32, worst64
