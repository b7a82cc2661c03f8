"""Latent random sources: an ideal Gaussian sampler and an ASE-slicing model.

The physical model follows the optical RNG chain: a spectrally sliced ASE
field is square-law detected, the DC photocurrent is blocked, and the
remaining beat noise is sampled. Only beats between adjacent spectral
components fall inside the detector bandwidth; self-beat terms land at DC
and are removed by the DC block. The sum of many such beat terms is
Gaussian by the central limit theorem.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "SourceMode",
    "LatentSourceConfig",
    "RandomSequence",
    "MomentReport",
    "sample_latent",
    "ase_slice_detect",
    "autocorrelation",
    "moment_report",
    "gaussian_latents",
]

MIN_ASE_COMPONENTS = 64
# Samples per chunk when synthesizing ASE fields; bounds peak memory.
_ASE_CHUNK = 8192


class SourceMode(enum.Enum):
    IDEAL = "ideal"
    ASE = "ase"


@dataclass(frozen=True)
class LatentSourceConfig:
    mode: SourceMode = SourceMode.IDEAL
    sigma: float = 0.2
    channels: int = 1
    ase_components: int = 512
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.mode is SourceMode.ASE and self.ase_components < MIN_ASE_COMPONENTS:
            raise ValueError(
                f"ase_components must be >= {MIN_ASE_COMPONENTS} in ASE mode, "
                f"got {self.ase_components}"
            )


@dataclass(frozen=True)
class RandomSequence:
    values: np.ndarray
    channel: int
    source_sigma: float

    def __post_init__(self):
        if self.values.ndim != 1 or len(self.values) == 0:
            raise ValueError("a random sequence needs at least one sample")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("random sequence contains non-finite values")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class MomentReport:
    mean: float
    std: float
    skew: float
    kurtosis: float

    def line(self) -> str:
        return (
            f"mean={self.mean:.6g} std={self.std:.6g} "
            f"skew={self.skew:.6g} kurtosis={self.kurtosis:.6g}"
        )


def _channel_rng(cfg: LatentSourceConfig, channel: int) -> np.random.Generator:
    if not 0 <= channel < cfg.channels:
        raise ValueError(f"channel {channel} outside 0..{cfg.channels - 1}")
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, channel]))


def sample_latent(cfg: LatentSourceConfig, n: int, channel: int = 0) -> RandomSequence:
    """Draw ``n`` latent samples for one channel of the configured source."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if cfg.mode is SourceMode.ASE:
        return ase_slice_detect(cfg, n, channel)
    rng = _channel_rng(cfg, channel)
    return RandomSequence(rng.normal(0.0, cfg.sigma, size=n), channel, cfg.sigma)


def ase_slice_detect(cfg: LatentSourceConfig, n: int, channel: int = 0) -> RandomSequence:
    """Synthesize one WDM channel of detected ASE beat noise.

    Each sample draws ``ase_components`` spectral phasors with Rayleigh
    amplitudes and uniform phases. A phasor with Rayleigh amplitude and
    uniform phase is a circular complex Gaussian, so the phasors are drawn
    directly in Cartesian form.
    """
    if cfg.mode is not SourceMode.ASE:
        raise ValueError("ase_slice_detect requires an ASE-mode config")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = _channel_rng(cfg, channel)
    k = cfg.ase_components
    current = np.empty(n)
    for start in range(0, n, _ASE_CHUNK):
        m = min(_ASE_CHUNK, n - start)
        re = rng.standard_normal((m, k))
        im = rng.standard_normal((m, k))
        # Re(c_k * conj(c_{k+1})), the adjacent-component beat term
        beat = np.einsum("ij,ij->i", re[:, :-1], re[:, 1:])
        beat += np.einsum("ij,ij->i", im[:, :-1], im[:, 1:])
        current[start:start + m] = 2.0 * beat
    current -= current.mean()  # DC block over the emitted block
    std = current.std()
    if std > 0:
        current *= cfg.sigma / std
    current -= current.mean()
    return RandomSequence(current, channel, cfg.sigma)


def autocorrelation(seq: RandomSequence | np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized sample autocorrelation for lags ``1..max_lag``."""
    x = np.asarray(seq.values if isinstance(seq, RandomSequence) else seq, dtype=float)
    if x.size == 0:
        raise ValueError("autocorrelation of an empty sequence")
    if not 1 <= max_lag < x.size:
        raise ValueError(f"max_lag must lie in [1, {x.size - 1}], got {max_lag}")
    x = x - x.mean()
    denom = np.dot(x, x)
    if denom == 0:
        return np.zeros(max_lag)
    return np.array([np.dot(x[:-lag], x[lag:]) / denom for lag in range(1, max_lag + 1)])


def moment_report(seq: RandomSequence | np.ndarray) -> MomentReport:
    x = np.asarray(seq.values if isinstance(seq, RandomSequence) else seq, dtype=float)
    if x.size < 2:
        raise ValueError("moment_report needs at least two samples")
    std = float(np.std(x, ddof=1))
    if std == 0:
        return MomentReport(float(x.mean()), 0.0, 0.0, 0.0)
    return MomentReport(
        mean=float(x.mean()),
        std=std,
        skew=float(stats.skew(x, bias=False)),
        kurtosis=float(stats.kurtosis(x, bias=False)),
    )


def gaussian_latents(rng: np.random.Generator, n: int, dim: int, sigma: float) -> np.ndarray:
    """Batch of ideal-Gaussian latent vectors, shape ``(n, dim)``."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    return rng.normal(0.0, sigma, size=(n, dim))
