"""Strategy comparison and noise sweeps over trained generators.

Both experiments are built from independent units, one per (strategy, seed).
A unit trains once (or reloads its checkpoint), then evaluates the generator
at each requested write-noise level with identical latents. Finished rows are
appended to a partial CSV as they complete, so an interrupted run resumes by
skipping units whose rows are all present. The final CSV is rewritten sorted
by (strategy, write_std, seed), which makes it independent of completion order.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .artifacts import append_csv_row, format_value, image_grid, read_csv, write_csv, write_pgm
from .data import MnistSet, Split, filter_digit, load_mnist_dir
from .gan_train import Strategy, TrainConfig, TrainingAborted, generate, train
from .metrics import FeatureStats, diversity_std, extract_features, frechet_distance
from .nn import DenseNet, load_checkpoint, save_checkpoint
from .pmmc_core import NoiseRegime, NoiseSpec

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_NOISE_LEVELS",
    "SweepConfig",
    "UnitResult",
    "load_digits",
    "strategy_from_name",
    "run_units",
    "run_sweep",
    "run_comparison",
    "sweep_bands",
    "comparison_table",
]

DEFAULT_NOISE_LEVELS = (0.0, 0.01, 0.025, 0.05, 0.075, 0.10)
ROW_HEADER = ["strategy", "write_std", "seed", "fid", "diversity_std"]
TIMING_HEADER = ["strategy", "seed", "train_seconds", "eval_seconds"]


def load_digits(mnist_dir, digits: str = "7") -> tuple[MnistSet, MnistSet]:
    """Train and held-out test sets for ``digits`` ("7" style single digit or "all")."""
    tr = load_mnist_dir(mnist_dir, Split.TRAIN)
    te = load_mnist_dir(mnist_dir, Split.TEST)
    if str(digits) == "all":
        return tr, te
    d = int(digits)
    return filter_digit(tr, d), filter_digit(te, d)


def strategy_from_name(name: str, weight_noise: float = 0.05, train_sigma: float = 0.5,
                       curvature_lambda: float = 1.0) -> Strategy:
    return {
        "nf": Strategy.nf,
        "ic": lambda: Strategy.ic(train_sigma),
        "wc": lambda: Strategy.wc(weight_noise),
        "cr": lambda: Strategy.cr(weight_noise, curvature_lambda),
    }[name.lower()]()


@dataclass(frozen=True)
class SweepConfig:
    strategies: tuple[str, ...] = ("nf", "cr")
    noise_levels: tuple[float, ...] = DEFAULT_NOISE_LEVELS
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    digits: str = "all"
    train: TrainConfig = field(default_factory=TrainConfig)
    weight_noise: float = 0.05
    train_sigma: float = 0.5
    curvature_lambda: float = 1.0
    read_std: float = 0.0
    regime: NoiseRegime = NoiseRegime.FRESH_PER_USE
    n_generated: int = 2000
    eval_seed: int = 12345
    diversity: bool = True

    def __post_init__(self):
        levels = tuple(float(v) for v in self.noise_levels)
        if any(v < 0 for v in levels):
            raise ValueError("noise levels must be >= 0")
        if list(levels) != sorted(levels):
            raise ValueError("noise levels must be sorted ascending")
        if not self.strategies or not self.seeds:
            raise ValueError("need at least one strategy and one seed")

    def train_config(self, strategy: str, seed: int) -> TrainConfig:
        st = strategy_from_name(strategy, self.weight_noise, self.train_sigma, self.curvature_lambda)
        return replace(self.train, strategy=st, seed=seed)


@dataclass
class UnitResult:
    strategy: str
    seed: int
    rows: list = field(default_factory=list)
    error: str | None = None
    timing: list | None = None


# ---- worker side -----------------------------------------------------------

_SHARED: dict = {}


def _init_worker(train_images, reference, clf):
    _SHARED["train"] = train_images
    _SHARED["reference"] = reference
    _SHARED["clf"] = clf
    _SHARED["ref_stats"] = FeatureStats.from_features(extract_features(clf, reference))


def _ckpt_path(out_dir: Path, strategy: str, seed: int) -> Path:
    return out_dir / "checkpoints" / f"{strategy}_s{seed}.ckpt"


def _trained_generator(cfg: TrainConfig, strategy: str, seed: int, out_dir: Path) -> tuple[DenseNet, float]:
    path = _ckpt_path(out_dir, strategy, seed)
    if path.exists():
        return load_checkpoint(path)["generator"], math.nan
    run = train(cfg, _SHARED["train"])
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    save_checkpoint(tmp, [run.generator, run.discriminator])
    os.replace(tmp, path)
    return run.generator, run.wall_clock


def _run_unit(args) -> UnitResult:
    scfg, strategy, seed, levels, out_dir, grids = args
    out_dir = Path(out_dir)
    res = UnitResult(strategy, seed)
    cfg = scfg.train_config(strategy, seed)
    try:
        gen, secs = _trained_generator(cfg, strategy, seed, out_dir)
    except TrainingAborted as exc:
        res.error = f"training_aborted: {exc}"
        return res
    clf, ref_stats = _SHARED["clf"], _SHARED["ref_stats"]
    # identical latents at every noise level; a fresh deployment draw per level
    latent_ss = np.random.SeedSequence([scfg.eval_seed, seed])
    z = np.random.default_rng(latent_ss).normal(0.0, cfg.infer_sigma, (scfg.n_generated, gen.n_in))
    t0 = time.perf_counter()
    for ws in levels:
        if ws == 0 and scfg.read_std == 0:
            imgs = generate(gen, scfg.n_generated, cfg, latents=z)
        else:
            # keyed by the level itself so a resumed unit redraws the same deployment
            level_key = int(round(ws * 1e6))
            hw_seed = int(np.random.SeedSequence([scfg.eval_seed, seed, level_key]).generate_state(1)[0])
            imgs = generate(gen, scfg.n_generated, cfg, hardware=NoiseSpec(ws, scfg.read_std, scfg.regime),
                            latents=z, seed=hw_seed)
        fid = frechet_distance(FeatureStats.from_features(extract_features(clf, imgs)), ref_stats)
        div = diversity_std(imgs, clf) if scfg.diversity else math.nan
        res.rows.append([strategy, float(ws), seed, fid, div])
        if grids:
            write_pgm(out_dir / "grids" / f"{strategy}_w{ws:g}_s{seed}.pgm", image_grid(imgs[:49]))
    res.timing = [strategy, seed, secs, time.perf_counter() - t0]
    return res


# ---- orchestration ----------------------------------------------------------

def _key(row) -> tuple:
    return (str(row[0]), float(row[1]), int(row[2]))


def run_units(
    scfg: SweepConfig,
    train_images: np.ndarray,
    reference: np.ndarray,
    clf: DenseNet,
    out_dir,
    csv_name: str = "sweep.csv",
    workers: int = 1,
    grids: bool = False,
) -> tuple[list[list], list[UnitResult]]:
    """Run every missing (strategy, seed) unit and return the sorted table.

    ``reference`` holds [0, 1] images. Rows already in the partial CSV are
    reused verbatim.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    partial = out_dir / (csv_name + ".partial")
    levels = tuple(float(v) for v in scfg.noise_levels)
    done: dict[tuple, list] = {}
    if partial.exists():
        _, rows = read_csv(partial)
        for r in rows:
            done[_key(r)] = r
    jobs = []
    for st in scfg.strategies:
        for seed in scfg.seeds:
            missing = [ws for ws in levels if (st, ws, seed) not in done]
            if missing:
                jobs.append((scfg, st, seed, tuple(missing), str(out_dir), grids))
    log.info("%d units to run, %d rows already present", len(jobs), len(done))

    failures: list[UnitResult] = []

    def collect(res: UnitResult):
        if res.error:
            log.error("unit %s seed %d failed: %s", res.strategy, res.seed, res.error)
            failures.append(res)
        if res.timing:
            # wall-clock lives apart from the results so those stay bitwise reproducible
            append_csv_row(out_dir / (csv_name + ".timing"), TIMING_HEADER, res.timing)
        for row in res.rows:
            append_csv_row(partial, ROW_HEADER, row)
            done[_key(row)] = [format_value(v) for v in row]

    if workers <= 1 or len(jobs) <= 1:
        _init_worker(train_images, reference, clf)
        for job in jobs:
            collect(_run_unit(job))
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(train_images, reference, clf)) as pool:
            for res in pool.map(_run_unit, jobs):
                collect(res)

    wanted = {(st, ws, sd) for st in scfg.strategies for ws in levels for sd in scfg.seeds}
    table = sorted((r for k, r in done.items() if k in wanted), key=_key)
    write_csv(out_dir / csv_name, ROW_HEADER, table)
    return table, failures


def run_sweep(scfg: SweepConfig, train_images, reference, clf, out_dir, workers: int = 1):
    """Noise sweep table plus per-point median/min/max bands."""
    table, failures = run_units(scfg, train_images, reference, clf, out_dir, "sweep.csv", workers)
    bands = sweep_bands(table)
    write_csv(Path(out_dir) / "sweep_bands.csv",
              ["strategy", "write_std", "n", "fid_median", "fid_min", "fid_max", "diversity_median"],
              bands)
    return table, bands, failures


def sweep_bands(table) -> list[list]:
    groups: dict[tuple, list] = {}
    for r in table:
        groups.setdefault((str(r[0]), float(r[1])), []).append((float(r[3]), float(r[4])))
    out = []
    for (st, ws), vals in sorted(groups.items()):
        fid = np.array([v[0] for v in vals])
        div = np.array([v[1] for v in vals])
        out.append([st, ws, len(vals), float(np.median(fid)), float(fid.min()), float(fid.max()),
                    float(np.median(div))])
    return out


def run_comparison(scfg: SweepConfig, train_images, reference, clf, out_dir, workers: int = 1):
    """Per-seed ideal/noisy FID table for each strategy, with 7x7 grids per cell.

    ``scfg.noise_levels`` should be ``(0.0, write_std)``.
    """
    if len(scfg.noise_levels) != 2 or scfg.noise_levels[0] != 0:
        raise ValueError("comparison expects noise levels (0, write_std)")
    table, failures = run_units(scfg, train_images, reference, clf, out_dir, "comparison_raw.csv",
                                workers, grids=True)
    rows = comparison_table(table, scfg.noise_levels[1])
    write_csv(Path(out_dir) / "comparison.csv",
              ["strategy", "seed", "fid_ideal", "fid_noisy", "delta_fid"], rows)
    return rows, failures


def comparison_table(table, write_std: float) -> list[list]:
    ideal = {(str(r[0]), int(r[2])): float(r[3]) for r in table if float(r[1]) == 0}
    noisy = {(str(r[0]), int(r[2])): float(r[3]) for r in table if float(r[1]) == float(write_std)}
    rows = []
    for key in sorted(ideal):
        if key in noisy:
            fi, fn = ideal[key], noisy[key]
            rows.append([key[0], key[1], fi, fn, fn - fi])
    return rows
