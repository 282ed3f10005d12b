"""Random parameter freezing for the transfer stage, plus a layer baseline.

Random freezing draws one uniform number r in [0, 1) per parameter (tensor
granularity) or per scalar element (element granularity) of both generators
and freezes it when r < rate. Element granularity is the default because a
90% rate then freezes 90% of scalar parameters regardless of tensor-size
skew. Discriminators are never frozen: they keep all parameters trainable
through the transfer stage.

The mask RNG is a dedicated stream derived only from (mask seed, a fixed
tag), so the same mask replays under different training seeds, and the mask
is re-derivable bit-identically from its spec.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import torch

from .errors import ConfigError, ContractError, IntegrityError
from .networks import GeneratorNet, ParamRegistry

_FREEZE_STREAM_TAG = 0xF5EE2E

NETWORK_TAGS = ("g_a", "g_b")

FrozenFlags = Union[bool, np.ndarray]


@dataclass(frozen=True)
class FreezeSpec:
    """Serializable recipe from which a FreezeMask is derived."""

    method: str = "random"  # "random" or "layer"
    rate: float = 0.9
    seed: int = 0
    granularity: str = "element"  # "tensor" or "element"
    block_index: int = 0  # used by method="layer"; 0-based residual block

    def validate(self) -> None:
        if self.method not in ("random", "layer"):
            raise ConfigError(f"unknown freeze method {self.method!r}")
        if self.method == "random" and not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"freezing rate must be in [0, 1], got {self.rate}")
        if self.granularity not in ("tensor", "element"):
            raise ConfigError(f"unknown granularity {self.granularity!r}")

    def derive(self, g_a: GeneratorNet, g_b: GeneratorNet) -> "FreezeMask":
        if self.method == "layer":
            return freeze_layer(g_a, g_b, self.block_index)
        return freeze_random(g_a, g_b, self.rate, self.seed, self.granularity)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "FreezeSpec":
        return cls(**d)


@dataclass
class FreezeMask:
    """Which generator parameters are frozen, keyed by network tag and name."""

    spec: FreezeSpec
    granularity: str
    frozen: dict[str, dict[str, FrozenFlags]] = field(default_factory=dict)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for tag in NETWORK_TAGS:
            for name, flags in self.frozen.get(tag, {}).items():
                h.update(f"{tag}.{name}".encode())
                if isinstance(flags, np.ndarray):
                    h.update(b"E")
                    h.update(np.ascontiguousarray(flags, dtype=np.uint8).tobytes())
                else:
                    h.update(b"T1" if flags else b"T0")
        return h.hexdigest()

    def counts(self, tag: str, registry: ParamRegistry) -> tuple[int, int]:
        """(frozen elements, total elements) for one network."""
        frozen = 0
        total = 0
        for name, p in registry:
            flags = self.frozen[tag][name]
            n = p.numel()
            total += n
            if isinstance(flags, np.ndarray):
                frozen += int(flags.sum())
            elif flags:
                frozen += n
        return frozen, total

    def summary(self) -> dict:
        out: dict = {"granularity": self.granularity, "content_hash": self.content_hash()}
        for tag, entries in self.frozen.items():
            frozen = 0
            n_tensors_frozen = 0
            for flags in entries.values():
                if isinstance(flags, np.ndarray):
                    frozen += int(flags.sum())
                    n_tensors_frozen += int(flags.all())
                elif flags:
                    frozen += 1
                    n_tensors_frozen += 1
            out[tag] = {"tensors_fully_frozen": n_tensors_frozen, "frozen_units": frozen}
        return out


def _mask_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, _FREEZE_STREAM_TAG])


def freeze_random(
    g_a: GeneratorNet,
    g_b: GeneratorNet,
    rate: float,
    seed: int,
    granularity: str = "element",
) -> FreezeMask:
    """Algorithm: per parameter (or element), freeze iff uniform r < rate."""
    spec = FreezeSpec(method="random", rate=rate, seed=seed, granularity=granularity)
    spec.validate()
    rng = _mask_rng(seed)
    frozen: dict[str, dict[str, FrozenFlags]] = {}
    for tag, net in zip(NETWORK_TAGS, (g_a, g_b)):
        entries: dict[str, FrozenFlags] = {}
        for name, p in net.params:
            if granularity == "tensor":
                entries[name] = bool(rng.random() < rate)
            else:
                entries[name] = rng.random(tuple(p.shape)) < rate
        frozen[tag] = entries
    return FreezeMask(spec=spec, granularity=granularity, frozen=frozen)


def freeze_layer(g_a: GeneratorNet, g_b: GeneratorNet, block_index: int) -> FreezeMask:
    """Freeze every parameter of one residual block (0-based) in both generators."""
    n_res = g_a.config.n_res
    if not 0 <= block_index < n_res:
        raise ConfigError(f"block_index {block_index} outside [0, {n_res})")
    spec = FreezeSpec(method="layer", rate=0.0, seed=0, granularity="tensor", block_index=block_index)
    prefix = f"res.{block_index}."
    frozen: dict[str, dict[str, FrozenFlags]] = {}
    for tag, net in zip(NETWORK_TAGS, (g_a, g_b)):
        frozen[tag] = {name: name.startswith(prefix) for name, _ in net.params}
    return FreezeMask(spec=spec, granularity="tensor", frozen=frozen)


def apply_mask(params: ParamRegistry, mask: FreezeMask, tag: str) -> ParamRegistry:
    """Install a mask's trainability flags on one network's registry.

    Tensor granularity toggles whole-tensor trainability; element granularity
    installs per-element masks (True = trainable). The optimizer honors the
    effective flags exactly, so frozen entries stay bitwise invariant.
    """
    if tag not in mask.frozen:
        raise ContractError(f"mask has no entries for network {tag!r}")
    entries = mask.frozen[tag]
    if set(entries) != set(params.names()):
        missing = set(params.names()) ^ set(entries)
        raise ContractError(f"mask/parameter name mismatch for {tag!r}: {sorted(missing)}")
    for name, p in params:
        flags = entries[name]
        if isinstance(flags, np.ndarray):
            if flags.shape != tuple(p.shape):
                raise ContractError(
                    f"mask shape {flags.shape} does not match parameter "
                    f"{name!r} shape {tuple(p.shape)}"
                )
            params.set_tensor_trainable(name, True)
            params.set_element_mask(name, torch.from_numpy(~flags))
        else:
            params.set_element_mask(name, None)
            params.set_tensor_trainable(name, not flags)
    return params


def apply_mask_to_generators(g_a: GeneratorNet, g_b: GeneratorNet, mask: FreezeMask) -> None:
    apply_mask(g_a.params, mask, "g_a")
    apply_mask(g_b.params, mask, "g_b")


def derive_and_verify(
    spec: FreezeSpec, g_a: GeneratorNet, g_b: GeneratorNet, expected_hash: Optional[str]
) -> FreezeMask:
    """Re-derive a mask from its spec; check the recorded content hash."""
    mask = spec.derive(g_a, g_b)
    if expected_hash is not None and mask.content_hash() != expected_hash:
        raise IntegrityError("re-derived freeze mask does not match the recorded hash")
    return mask
