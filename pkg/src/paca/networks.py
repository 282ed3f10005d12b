"""Generator and discriminator families plus a uniform parameter registry.

The generator is the residual translation network: a 7x7 stem, two strided
downsampling stages, a stack of residual blocks, two upsampling stages, and a
7x7 head with tanh output. The discriminator is a patch classifier: strided
4x4 convolutions producing a spatial grid of scores, one per receptive-field
patch. Instance normalization (affine) throughout; weights drawn from a
zero-mean Gaussian with sigma 0.02, norm scales from N(1, 0.02), biases zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import torch
import torch.nn as nn

from .errors import ContractError


@dataclass(frozen=True)
class GeneratorConfig:
    side: int = 64
    base_width: int = 32
    n_down: int = 2
    n_res: int = 4

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DiscriminatorConfig:
    side: int = 64
    base_width: int = 32
    n_strided: int = 3

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def desk_preset() -> tuple[GeneratorConfig, DiscriminatorConfig]:
    """CPU-runnable preset: 64px, 4 residual blocks, width 32."""
    return GeneratorConfig(), DiscriminatorConfig()


def paper_preset() -> tuple[GeneratorConfig, DiscriminatorConfig]:
    """Full-size preset: 256px, 9 residual blocks, width 64."""
    return (
        GeneratorConfig(side=256, base_width=64, n_down=2, n_res=9),
        DiscriminatorConfig(side=256, base_width=64, n_strided=3),
    )


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.pad1 = nn.ReflectionPad2d(1)
        self.conv1 = nn.Conv2d(channels, channels, 3)
        self.norm1 = nn.InstanceNorm2d(channels, affine=True)
        self.relu = nn.ReLU(inplace=True)
        self.pad2 = nn.ReflectionPad2d(1)
        self.conv2 = nn.Conv2d(channels, channels, 3)
        self.norm2 = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.relu(self.norm1(self.conv1(self.pad1(x))))
        y = self.norm2(self.conv2(self.pad2(y)))
        return x + y


class _DownStage(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
        self.norm = nn.InstanceNorm2d(c_out, affine=True)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.relu(self.norm(self.conv(x)))


class _UpStage(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.ConvTranspose2d(c_in, c_out, 3, stride=2, padding=1, output_padding=1)
        self.norm = nn.InstanceNorm2d(c_out, affine=True)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.relu(self.norm(self.conv(x)))


class GeneratorNet(nn.Module):
    """Shape-preserving image-to-image network with tanh output in (-1, 1)."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        self.stem_pad = nn.ReflectionPad2d(3)
        self.stem_conv = nn.Conv2d(3, w, 7)
        self.stem_norm = nn.InstanceNorm2d(w, affine=True)
        self.stem_relu = nn.ReLU(inplace=True)
        downs, c = [], w
        for _ in range(config.n_down):
            downs.append(_DownStage(c, 2 * c))
            c *= 2
        self.down = nn.ModuleList(downs)
        self.res = nn.ModuleList(ResidualBlock(c) for _ in range(config.n_res))
        ups = []
        for _ in range(config.n_down):
            ups.append(_UpStage(c, c // 2))
            c //= 2
        self.up = nn.ModuleList(ups)
        self.head_pad = nn.ReflectionPad2d(3)
        self.head_conv = nn.Conv2d(c, 3, 7)
        self.head_tanh = nn.Tanh()
        self.params = ParamRegistry(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.stem_relu(self.stem_norm(self.stem_conv(self.stem_pad(x))))
        for stage in self.down:
            y = stage(y)
        for block in self.res:
            y = block(y)
        for stage in self.up:
            y = stage(y)
        return self.head_tanh(self.head_conv(self.head_pad(y)))


class DiscriminatorNet(nn.Module):
    """Patch classifier: an SxS grid of real-valued scores."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        layers: list[nn.Module] = [nn.Conv2d(3, w, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
        c = w
        for _ in range(config.n_strided - 1):
            layers += [
                nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
                nn.InstanceNorm2d(2 * c, affine=True),
                nn.LeakyReLU(0.2, True),
            ]
            c *= 2
        layers += [
            nn.Conv2d(c, 2 * c, 4, stride=1, padding=1),
            nn.InstanceNorm2d(2 * c, affine=True),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(2 * c, 1, 4, stride=1, padding=1),
        ]
        self.model = nn.Sequential(*layers)
        self.params = ParamRegistry(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


class ParamRegistry:
    """Ordered named parameter tensors with per-tensor and per-element flags.

    Effective trainability of one element is `tensor_trainable[name] AND
    (element_mask[name] is None OR element_mask[name][element])`.
    """

    def __init__(self, module: nn.Module):
        self._entries: list[tuple[str, nn.Parameter]] = list(module.named_parameters())
        names = [n for n, _ in self._entries]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names in registry")
        self.tensor_trainable: dict[str, bool] = {n: True for n in names}
        self.element_mask: dict[str, Optional[torch.Tensor]] = {n: None for n in names}

    def __iter__(self) -> Iterator[tuple[str, nn.Parameter]]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return [n for n, _ in self._entries]

    def tensor(self, name: str) -> nn.Parameter:
        for n, p in self._entries:
            if n == name:
                return p
        raise ContractError(f"no parameter named {name!r}")

    def set_tensor_trainable(self, name: str, flag: bool) -> None:
        if name not in self.tensor_trainable:
            raise ContractError(f"no parameter named {name!r}")
        self.tensor_trainable[name] = flag
        self.tensor(name).requires_grad_(flag)

    def set_element_mask(self, name: str, trainable: Optional[torch.Tensor]) -> None:
        p = self.tensor(name)
        if trainable is not None:
            if tuple(trainable.shape) != tuple(p.shape):
                raise ContractError(
                    f"element mask shape {tuple(trainable.shape)} does not match "
                    f"parameter {name!r} shape {tuple(p.shape)}"
                )
            trainable = trainable.to(torch.bool)
        self.element_mask[name] = trainable

    def effective_mask(self, name: str) -> Optional[torch.Tensor]:
        """Boolean trainability per element, or None when fully trainable."""
        if not self.tensor_trainable[name]:
            return torch.zeros_like(self.tensor(name), dtype=torch.bool)
        return self.element_mask[name]

    def clear_masks(self) -> None:
        for name in self.names():
            self.set_tensor_trainable(name, True)
            self.element_mask[name] = None


def count_params(params: ParamRegistry) -> tuple[int, int]:
    """(number of tensors, number of scalar elements) in the registry."""
    tensors = len(params)
    elements = sum(p.numel() for _, p in params)
    return tensors, elements


def init_weights(module: nn.Module, seed: int) -> None:
    """Seed-deterministic init: every parameter is overwritten, so the result
    does not depend on construction-time global RNG state."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            with torch.no_grad():
                m.weight.normal_(1.0, 0.02, generator=gen)
                m.bias.zero_()


def build_generator(config: GeneratorConfig, seed: int) -> GeneratorNet:
    net = GeneratorNet(config)
    init_weights(net, seed)
    return net


def build_discriminator(config: DiscriminatorConfig, seed: int) -> DiscriminatorNet:
    net = DiscriminatorNet(config)
    init_weights(net, seed)
    return net


def _check_input(x: torch.Tensor, stride_levels: int) -> torch.Tensor:
    if x.ndim == 3:
        x = x.unsqueeze(0)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ContractError(f"expected (N, 3, H, W) or (3, H, W) input, got {tuple(x.shape)}")
    side = x.shape[-1]
    if x.shape[-2] != side:
        raise ContractError(f"input must be square, got {tuple(x.shape)}")
    if side % (2**stride_levels) != 0:
        raise ContractError(f"side {side} is not a multiple of {2**stride_levels}")
    return x


def forward_generator(g: GeneratorNet, x: torch.Tensor) -> torch.Tensor:
    """Apply the generator; output matches the input rank and shape."""
    squeeze = x.ndim == 3
    batch = _check_input(x, g.config.n_down)
    out = g(batch)
    return out.squeeze(0) if squeeze else out


def forward_discriminator(d: DiscriminatorNet, x: torch.Tensor) -> torch.Tensor:
    """Apply the patch classifier; returns the (N, 1, S, S) or (1, S, S) score map."""
    squeeze = x.ndim == 3
    batch = _check_input(x, d.config.n_strided)
    out = d(batch)
    return out.squeeze(0) if squeeze else out
