"""Reproducible complex baseband test signals and block-level utilities.

All signals are dimensionless complex baseband amplitudes at a normalized
sample rate (samples per symbol period). Multicarrier blocks are built as
inverse DFTs of random constellation symbols on the active bins, one DFT
frame per symbol, no cyclic prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

#: Sentinel returned for ratios whose numerator underflows to zero.
FLOOR_DB = -300.0

#: Pseudo-random generator backing all seeded draws, recorded in serialized
#: configs so fixtures can be regenerated bit-exactly elsewhere.
RNG_ALGORITHM = "pcg64"

_CONSTELLATIONS = ("qpsk", "qam16")


class SignalError(ValueError):
    """Invalid signal configuration or incompatible blocks."""


@dataclass(frozen=True)
class ComplexBlock:
    """A finite sequence of complex baseband samples.

    Parameters
    ----------
    samples : ndarray
        Complex samples; length >= 1, all finite.
    rate : float
        Normalized sample rate (samples per symbol period).
    """

    samples: np.ndarray
    rate: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.complex128)
        if arr.ndim != 1 or arr.size < 1:
            raise SignalError("block must hold at least one sample")
        if not np.all(np.isfinite(arr)):
            raise SignalError("block samples must be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        if not (self.rate > 0):
            raise SignalError("rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class SignalConfig:
    """Configuration of the multicarrier generator."""

    n_subcarriers: int
    oversampling: int = 4
    n_symbols: int = 16
    constellation: str = "qpsk"
    active_mask: tuple = None
    seed: int = 0
    normalize: bool = True
    rng: str = field(default=RNG_ALGORITHM)

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise SignalError("n_subcarriers must be a positive integer")
        if self.oversampling < 4:
            raise SignalError("oversampling must be >= 4 so adjacent channels stay in-band")
        if self.n_symbols < 1:
            raise SignalError("n_symbols must be a positive integer")
        if self.constellation not in _CONSTELLATIONS:
            raise SignalError(f"constellation must be one of {_CONSTELLATIONS}")
        if self.active_mask is not None:
            mask = tuple(bool(b) for b in self.active_mask)
            if len(mask) != self.n_subcarriers:
                raise SignalError("active_mask length must equal n_subcarriers")
            object.__setattr__(self, "active_mask", mask)
        if self.rng != RNG_ALGORITHM:
            raise SignalError(f"unsupported rng {self.rng!r}; this build generates {RNG_ALGORITHM!r}")

    @property
    def block_length(self) -> int:
        return self.n_subcarriers * self.oversampling * self.n_symbols


def _draw_symbols(gen: np.random.Generator, constellation: str, n: int) -> np.ndarray:
    if constellation == "qpsk":
        idx = gen.integers(0, 4, n)
        return np.exp(1j * (np.pi / 4 + np.pi / 2 * idx))
    # 16-QAM, unit average power
    levels = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
    re = levels[gen.integers(0, 4, n)]
    im = levels[gen.integers(0, 4, n)]
    return re + 1j * im


def generate_multicarrier(cfg: SignalConfig) -> ComplexBlock:
    """Generate a seeded multicarrier block.

    One inverse-DFT frame of length ``n_subcarriers * oversampling`` per
    symbol; active bins occupy the centred ``n_subcarriers`` frequencies so
    the occupied bandwidth is ``1 / oversampling`` of the sample rate.
    Deterministic for a fixed config. With ``normalize`` the block is scaled
    to unit empirical mean power.
    """
    mask = cfg.active_mask
    if mask is None:
        mask = (True,) * cfg.n_subcarriers
    active = np.flatnonzero(mask)
    L = cfg.n_subcarriers * cfg.oversampling
    gen = np.random.default_rng(np.random.PCG64(cfg.seed))
    bins = (active - cfg.n_subcarriers // 2) % L
    frames = np.zeros((cfg.n_symbols, L), dtype=np.complex128)
    for m in range(cfg.n_symbols):
        if active.size:
            spec = np.zeros(L, dtype=np.complex128)
            spec[bins] = _draw_symbols(gen, cfg.constellation, active.size)
            frames[m] = np.fft.ifft(spec) * L
    s = frames.ravel()
    if active.size == 0:
        return ComplexBlock(s, rate=float(cfg.oversampling))
    # natural scale: unit power in expectation over constellation draws
    s = s / np.sqrt(active.size)
    if cfg.normalize:
        s = rescale_to_unit_power(s)
    return ComplexBlock(s, rate=float(cfg.oversampling))


def rescale_to_unit_power(samples: np.ndarray) -> np.ndarray:
    """Scale samples so the empirical mean power is exactly one."""
    p = np.mean(np.abs(samples) ** 2)
    if p == 0:
        raise SignalError("cannot rescale an all-zero block to unit power")
    return samples / np.sqrt(p)


def as_samples(block) -> np.ndarray:
    """Accept a ComplexBlock or a bare array and return the sample array."""
    if isinstance(block, ComplexBlock):
        return block.samples
    return np.asarray(block, dtype=np.complex128)


def nmse_db(ref, test) -> float:
    """Normalized mean square error 10*log10(sum|ref-test|^2 / sum|ref|^2) in dB.

    Returns the ``FLOOR_DB`` sentinel when the numerator underflows.
    """
    r = as_samples(ref)
    t = as_samples(test)
    if r.size != t.size:
        raise SignalError(f"length mismatch: ref has {r.size} samples, test has {t.size}")
    den = np.sum(np.abs(r) ** 2)
    if den == 0:
        raise SignalError("reference block is all-zero")
    num = np.sum(np.abs(r - t) ** 2)
    if num == 0:
        return FLOOR_DB
    return max(float(10.0 * np.log10(num / den)), FLOOR_DB)


def save_block(block: ComplexBlock, path) -> None:
    """Write a block as columnar text: one "re,im" line per sample."""
    lines = [f"# rate={block.rate!r}"]
    lines.extend(f"{z.real!r},{z.imag!r}" for z in block.samples)
    Path(path).write_text("\n".join(lines) + "\n")


def load_block(path) -> ComplexBlock:
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("# rate="):
        raise SignalError(f"{path}: missing '# rate=' header")
    rate = float(text[0].split("=", 1)[1])
    vals = np.array(
        [[float(p) for p in line.split(",")] for line in text[1:] if line.strip()],
        dtype=np.float64,
    )
    if vals.size == 0:
        raise SignalError(f"{path}: no samples")
    return ComplexBlock(vals[:, 0] + 1j * vals[:, 1], rate=rate)
