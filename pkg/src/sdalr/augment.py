"""Label-preserving waveform augmentations used for ballots and rebalancing."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError
from .signals import SignalSample


class AugmentationKind(str, Enum):
    FLIP = "flip"
    RANDOM_ZERO = "random_zero"
    CYCLIC_SHIFT = "cyclic_shift"


# Ballot order; fixed so ballot records are comparable across runs.
BALLOT_KINDS = (AugmentationKind.FLIP, AugmentationKind.RANDOM_ZERO, AugmentationKind.CYCLIC_SHIFT)


@dataclass(frozen=True)
class AugmentParams:
    zero_fraction: float = 0.1
    flip_mode: str = "time"  # "time" reverses indices, "amplitude" negates
    shift_offset: int | None = None  # None draws uniformly from [1, L-1]

    def validate(self):
        if not 0.0 < self.zero_fraction < 1.0:
            raise ConfigError(f"zero_fraction must lie in (0, 1), got {self.zero_fraction}")
        if self.flip_mode not in ("time", "amplitude"):
            raise ConfigError(f"flip_mode must be 'time' or 'amplitude', got {self.flip_mode!r}")


def flip(x, mode: str = "time") -> np.ndarray:
    x = np.asarray(x)
    if mode == "time":
        return x[..., ::-1].copy()
    if mode == "amplitude":
        return -x
    raise ConfigError(f"unknown flip mode {mode!r}")


def random_zero(x, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Zero one contiguous segment of ``round(rho * L)`` samples at a random start."""
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"zero fraction must lie in (0, 1), got {rho}")
    out = np.array(x, copy=True)
    L = out.shape[-1]
    width = int(round(rho * L))
    start = int(rng.integers(0, L - width + 1))
    out[..., start : start + width] = 0
    return out


def cyclic_shift(x, offset: int) -> np.ndarray:
    """``out[i] = x[(i - offset) mod L]``."""
    x = np.asarray(x)
    L = x.shape[-1]
    if not 0 <= offset < L:
        raise ConfigError(f"shift offset {offset} outside [0, {L})")
    return np.roll(x, offset, axis=-1)


def random_offset(L: int, rng: np.random.Generator) -> int:
    return int(rng.integers(1, L)) if L > 1 else 0


def apply(kind: AugmentationKind, x, rng: np.random.Generator, params: AugmentParams = AugmentParams()):
    kind = AugmentationKind(kind)
    if kind is AugmentationKind.FLIP:
        return flip(x, params.flip_mode)
    if kind is AugmentationKind.RANDOM_ZERO:
        return random_zero(x, params.zero_fraction, rng)
    offset = params.shift_offset if params.shift_offset is not None else random_offset(np.shape(x)[-1], rng)
    return cyclic_shift(x, offset)


@dataclass(frozen=True)
class AugmentedSet:
    original: SignalSample
    variants: tuple[tuple[AugmentationKind, np.ndarray], ...]

    @property
    def waveforms(self) -> list[np.ndarray]:
        return [self.original.waveform] + [w for _, w in self.variants]

    def __len__(self):
        return 1 + len(self.variants)


def build_augmented_set(x: SignalSample, rng: np.random.Generator, params: AugmentParams = AugmentParams()) -> AugmentedSet:
    variants = tuple((kind, apply(kind, x.waveform, rng, params)) for kind in BALLOT_KINDS)
    return AugmentedSet(x, variants)


def augment_batch(waveforms: np.ndarray, kind: AugmentationKind, rng: np.random.Generator, params: AugmentParams = AugmentParams()) -> np.ndarray:
    """Apply ``kind`` row by row, drawing per-row randomness from ``rng`` in row order."""
    return np.stack([apply(kind, w, rng, params) for w in waveforms]) if len(waveforms) else waveforms.copy()
