"""Phase-change metasurface tensor core simulator.

Weights live on the core as TE0/TE1 mode contrasts Gamma in [-1, 1]. A layer
weight matrix is scaled onto the contrast range, programmed cell by cell with
write noise, multiplied optically with additive read noise, and scaled back.
Large matrices are processed tile by tile on a small core that is reprogrammed
for every tile.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
import hashlib

import numpy as np

__all__ = [
    "ModeReadout",
    "PmmcCell",
    "NoiseRegime",
    "NoiseSpec",
    "LayerMapping",
    "ProgramResult",
    "TensorCore",
    "MvmErrorStats",
    "quantize",
    "map_weights",
    "unmap",
    "program_iterative",
    "program_array",
    "mvm",
    "tiled_matvec",
    "mvm_error_stats",
    "predicted_mvm_error_std",
]


CONTRAST_SPAN = 2.0


@dataclass(frozen=True)
class ModeReadout:
    p_te0: float
    p_te1: float

    def __post_init__(self):
        if self.p_te0 < 0 or self.p_te1 < 0 or self.p_te0 + self.p_te1 <= 0:
            raise ValueError("mode powers must be non-negative with a positive total")

    @property
    def purity_te0(self) -> float:
        return self.p_te0 / (self.p_te0 + self.p_te1)

    @property
    def purity_te1(self) -> float:
        return self.p_te1 / (self.p_te0 + self.p_te1)

    @property
    def contrast(self) -> float:
        return self.purity_te0 - self.purity_te1


@dataclass
class PmmcCell:
    target_gamma: float = 0.0
    programmed_gamma: float = 0.0
    quant_bits: int | None = None


class NoiseRegime(enum.Enum):
    FRESH_PER_USE = "fresh"
    FIXED_PER_DEPLOYMENT = "fixed"


@dataclass(frozen=True)
class NoiseSpec:
    write_std: float = 0.05
    read_std: float = 0.005
    regime: NoiseRegime = NoiseRegime.FRESH_PER_USE

    def __post_init__(self):
        if self.write_std < 0 or self.read_std < 0:
            raise ValueError("noise STDs must be non-negative")

    @classmethod
    def noiseless(cls, regime: NoiseRegime = NoiseRegime.FRESH_PER_USE) -> "NoiseSpec":
        return cls(0.0, 0.0, regime)


@dataclass(frozen=True)
class LayerMapping:
    w_max: float
    gamma_max: float = 1.0

    def __post_init__(self):
        if not self.w_max > 0:
            raise ValueError(f"w_max must be > 0, got {self.w_max}")
        if not 0 < self.gamma_max <= 1:
            raise ValueError(f"gamma_max must lie in (0, 1], got {self.gamma_max}")

    @classmethod
    def for_weights(cls, w: np.ndarray, gamma_max: float = 1.0) -> "LayerMapping":
        """Mapping whose |W|max is the largest magnitude in ``w``."""
        w_max = float(np.max(np.abs(w))) if np.size(w) else 0.0
        # an all-zero layer still needs a finite scale
        return cls(w_max if w_max > 0 else 1.0, gamma_max)

    @property
    def scale(self) -> float:
        """Weight to contrast factor."""
        return self.gamma_max / self.w_max

    @property
    def inverse_scale(self) -> float:
        return self.w_max / self.gamma_max


def quantize(gamma, bits: int | None):
    """Round onto the uniform grid of ``2**bits`` levels spanning [-1, 1].

    Nearest level wins; an exact tie goes to the level of smaller magnitude,
    and the symmetric tie at zero goes to the positive level.
    """
    g = np.clip(np.asarray(gamma, dtype=float), -1.0, 1.0)
    if bits is None:
        return g
    if bits < 1:
        raise ValueError(f"quant bits must be >= 1, got {bits}")
    n_steps = 2**bits - 1
    step = 2.0 / n_steps
    lo = np.clip(np.floor((g + 1.0) / step), 0, n_steps - 1)
    lo_level = -1.0 + lo * step
    hi_level = -1.0 + (lo + 1) * step
    d_lo = g - lo_level
    d_hi = hi_level - g
    tie = np.isclose(d_lo, d_hi, rtol=0.0, atol=1e-12)
    take_hi = np.where(tie, np.abs(hi_level) <= np.abs(lo_level), d_hi < d_lo)
    return np.where(take_hi, hi_level, lo_level)


def map_weights(w, m: LayerMapping) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    # slack for a w_max computed from this very matrix
    if np.any(np.abs(w) > m.w_max * (1 + 1e-12)):
        raise ValueError(
            f"weight magnitude {np.max(np.abs(w)):.6g} exceeds mapping range {m.w_max:.6g}"
        )
    return w * m.scale


def unmap(gamma, m: LayerMapping) -> np.ndarray:
    return np.asarray(gamma, dtype=float) * m.inverse_scale


@dataclass
class ProgramResult:
    final_gamma: float
    pulses_used: int
    trajectory: list[float]
    converged: bool


def program_iterative(
    cell: PmmcCell,
    target: float,
    rng: np.random.Generator,
    pulse_step: float = 0.05,
    tol: float = 0.01,
    max_pulses: int = 200,
    write_std: float = 0.05,
) -> ProgramResult:
    """Drive a cell toward ``target`` with a train of optical pulses.

    Each pulse moves Gamma by at most ``pulse_step`` with a disturbance of STD
    ``write_std * step / 2``, i.e. the write error scaled by the fraction of the
    full [-1, 1] span the pulse covers. Once within ``tol`` (or out of
    pulses) the cell takes one terminal write error of STD ``write_std`` and is
    quantized. The cell is updated in place.
    """
    if abs(target) > 1:
        raise ValueError(f"target {target} outside [-1, 1]")
    if pulse_step <= 0 or tol <= 0:
        raise ValueError("pulse_step and tol must be > 0")
    gamma = cell.programmed_gamma
    trajectory: list[float] = []
    pulses = 0
    if gamma == target:
        cell.target_gamma = target
        return ProgramResult(gamma, 0, trajectory, True)
    while abs(gamma - target) > tol and pulses < max_pulses:
        gap = target - gamma
        step = np.sign(gap) * min(pulse_step, abs(gap))
        disturbance = rng.normal(0.0, write_std * abs(step) / CONTRAST_SPAN)
        gamma = float(np.clip(gamma + step + disturbance, -1.0, 1.0))
        trajectory.append(gamma)
        pulses += 1
    converged = abs(gamma - target) <= tol
    final = gamma + rng.normal(0.0, write_std) if write_std > 0 else gamma
    final = float(quantize(final, cell.quant_bits))
    cell.target_gamma = target
    cell.programmed_gamma = final
    return ProgramResult(final, pulses, trajectory, converged)


@dataclass
class TensorCore:
    """A small grid of PMMC cells plus its own noise stream."""

    rows: int = 2
    cols: int = 2
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    quant_bits: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("core dimensions must be positive")
        self.rng = np.random.default_rng(self.seed)
        self.target = np.zeros((self.rows, self.cols))
        self.programmed = np.zeros((self.rows, self.cols))
        self._deployed: dict[str, np.ndarray] = {}

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def cell(self, i: int, j: int) -> PmmcCell:
        return PmmcCell(float(self.target[i, j]), float(self.programmed[i, j]), self.quant_bits)

    def draw_programmed(self, targets: np.ndarray) -> np.ndarray:
        """One-shot write: target plus Gaussian error, clamped and quantized."""
        targets = np.asarray(targets, dtype=float)
        if self.noise.write_std > 0:
            out = targets + self.rng.normal(0.0, self.noise.write_std, size=targets.shape)
        else:
            out = targets.copy()
        return quantize(out, self.quant_bits)

    def read_noise(self, y: np.ndarray) -> np.ndarray:
        if self.noise.read_std == 0:
            return np.zeros_like(y)
        scale = self.noise.read_std * np.maximum(1.0, np.abs(y))
        return self.rng.normal(0.0, 1.0, size=y.shape) * scale

    def reset_deployment(self):
        self._deployed.clear()


def program_array(core: TensorCore, gamma_targets, fast: bool = True, **pulse_kw) -> TensorCore:
    """Program every cell of the core; each call draws fresh write noise."""
    targets = np.asarray(gamma_targets, dtype=float)
    if targets.shape != core.shape:
        raise ValueError(f"targets shape {targets.shape} != core shape {core.shape}")
    if np.any(np.abs(targets) > 1):
        raise ValueError("contrast targets must lie in [-1, 1]")
    if fast:
        core.programmed = core.draw_programmed(targets)
    else:
        pulse_kw.setdefault("write_std", core.noise.write_std)
        for i in range(core.rows):
            for j in range(core.cols):
                c = core.cell(i, j)
                program_iterative(c, float(targets[i, j]), core.rng, **pulse_kw)
                core.programmed[i, j] = c.programmed_gamma
    core.target = targets.copy()
    return core


def mvm(core: TensorCore, x) -> np.ndarray:
    """Optical product of the programmed contrasts with ``x`` plus read noise."""
    x = np.asarray(x, dtype=float)
    if x.shape != (core.cols,):
        raise ValueError(f"input length {x.shape} != core cols {core.cols}")
    y = core.programmed @ x
    return y + core.read_noise(y)


def _pad_to(a: np.ndarray, rows: int, cols: int) -> np.ndarray:
    out = np.zeros((rows, cols))
    out[: a.shape[0], : a.shape[1]] = a
    return out


def _deployment_key(gamma: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(gamma).tobytes()).hexdigest()


def _deployed_contrasts(core: TensorCore, gamma: np.ndarray) -> np.ndarray:
    key = _deployment_key(gamma)
    if key not in core._deployed:
        core._deployed[key] = core.draw_programmed(gamma)
    return core._deployed[key]


# Samples per vectorized chunk in the fresh-noise path; bounds peak memory.
_BATCH_CHUNK = 128


def tiled_matvec(core: TensorCore, w_full, x, m: LayerMapping | None = None) -> np.ndarray:
    """Compute ``w_full @ x`` on the core, one core-sized tile at a time.

    ``x`` may be a single vector or a batch of row vectors. A single vector is
    processed by literally reprogramming the core for every tile; a batch uses
    an equivalent vectorized path in which each sample's visit to a tile draws
    its own write noise (fresh regime) or reuses the deployed draw (fixed).
    """
    w_full = np.asarray(w_full, dtype=float)
    x = np.asarray(x, dtype=float)
    if m is None:
        m = LayerMapping.for_weights(w_full)
    out_dim, in_dim = w_full.shape
    if x.shape[-1] != in_dim:
        raise ValueError(f"input length {x.shape[-1]} != matrix cols {in_dim}")
    r, c = core.shape
    n_rt = -(-out_dim // r)
    n_ct = -(-in_dim // c)
    gamma = _pad_to(map_weights(w_full, m), n_rt * r, n_ct * c)
    fixed = core.noise.regime is NoiseRegime.FIXED_PER_DEPLOYMENT
    if x.ndim == 1:
        return _tiled_single(core, gamma, x, m, n_rt, n_ct, fixed)[:out_dim]
    if x.ndim != 2:
        raise ValueError("x must be a vector or a 2-D batch")
    return _tiled_batch(core, gamma, x, m, n_ct, fixed)[:, :out_dim]


def _tiled_single(core, gamma, x, m, n_rt, n_ct, fixed):
    r, c = core.shape
    xp = np.zeros(n_ct * c)
    xp[: x.size] = x
    deployed = _deployed_contrasts(core, gamma) if fixed else None
    y = np.zeros(n_rt * r)
    for ti in range(n_rt):
        for tj in range(n_ct):
            rows = slice(ti * r, (ti + 1) * r)
            cols = slice(tj * c, (tj + 1) * c)
            if fixed:
                core.target = gamma[rows, cols].copy()
                core.programmed = deployed[rows, cols].copy()
            else:
                program_array(core, gamma[rows, cols])
            y[rows] += unmap(mvm(core, xp[cols]), m)
    return y


def _tiled_batch(core, gamma, x, m, n_ct, fixed):
    c = core.cols
    n = x.shape[0]
    out_p, in_p = gamma.shape
    xp = np.zeros((n, in_p))
    xp[:, : x.shape[1]] = x
    x_tiles = xp.reshape(n, n_ct, c)
    y = np.empty((n, out_p))
    if fixed:
        g_tiles = _deployed_contrasts(core, gamma).reshape(out_p, n_ct, c)
    for start in range(0, n, _BATCH_CHUNK):
        stop = min(start + _BATCH_CHUNK, n)
        xs = x_tiles[start:stop]
        if fixed:
            partial = np.einsum("otk,ntk->not", g_tiles, xs)
        else:
            g = core.draw_programmed(np.broadcast_to(gamma, (stop - start, out_p, in_p)))
            partial = np.einsum("notk,ntk->not", g.reshape(stop - start, out_p, n_ct, c), xs)
        partial = partial + core.read_noise(partial)
        y[start:stop] = unmap(partial.sum(axis=2), m)
    if n:
        core.target = gamma[: core.rows, : core.cols].copy()
    return y


@dataclass
class MvmErrorStats:
    errors: np.ndarray
    counts: np.ndarray
    bin_edges: np.ndarray
    mean: float
    std: float

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def predicted_mvm_error_std(
    write_std: float, read_std: float, cols: int, x_low: float = 0.0, x_high: float = 1.0
) -> float:
    """Error STD for random inputs uniform on [x_low, x_high].

    Write noise contributes write_std^2 * E|x|^2 and read noise (in its
    absolute regime, |y| <= 1) contributes read_std^2.
    """
    ex2 = (x_high**3 - x_low**3) / (3.0 * (x_high - x_low))
    return float(np.sqrt(write_std**2 * cols * ex2 + read_std**2))


def mvm_error_stats(
    core: TensorCore,
    n_ops: int,
    x_low: float = 0.0,
    x_high: float = 1.0,
    target_range: float = 0.7,
    bins: int = 41,
) -> MvmErrorStats:
    """Histogram of noisy-minus-ideal MVM outputs over ``n_ops`` operations.

    Each operation reprograms the core with random targets in
    [-target_range, target_range] and multiplies a fresh random input.
    """
    if n_ops < 100:
        raise ValueError(f"n_ops must be >= 100, got {n_ops}")
    errs = np.empty((n_ops, core.rows))
    for k in range(n_ops):
        targets = core.rng.uniform(-target_range, target_range, size=core.shape)
        x = core.rng.uniform(x_low, x_high, size=core.cols)
        program_array(core, targets)
        errs[k] = mvm(core, x) - targets @ x
    errs = errs.ravel()
    if np.all(errs == 0):
        counts, edges = np.array([errs.size]), np.array([-0.5, 0.5])
    else:
        counts, edges = np.histogram(errs, bins=bins)
    return MvmErrorStats(errs, counts, edges, float(errs.mean()), float(errs.std(ddof=1)))
