"""Command-line entry point: ``photonic-gan <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import ArtifactError, image_grid, write_csv, write_manifest, write_pgm
from .data import EmptySelectionError, IdxError, Split, load_mnist_dir
from .experiments import (
    DEFAULT_NOISE_LEVELS,
    SweepConfig,
    load_digits,
    run_comparison,
    run_sweep,
    strategy_from_name,
)
from .gan_train import TrainConfig, TrainingAborted, generate, train
from .metrics import ClassifierTooWeak, evaluate_run, train_feature_classifier
from .nn import CheckpointError, load_checkpoint, save_checkpoint
from .noise_sources import (
    LatentSourceConfig,
    SourceMode,
    ase_slice_detect,
    autocorrelation,
    moment_report,
    sample_latent,
)
from .pmmc_core import (
    NoiseRegime,
    NoiseSpec,
    PmmcCell,
    TensorCore,
    mvm_error_stats,
    predicted_mvm_error_std,
    program_iterative,
)

log = logging.getLogger("photonic_gan")

DEFAULT_MNIST = os.environ.get("PGAN_MNIST_DIR", "data/mnist")


class ConfigError(ValueError):
    pass


# error category, exit code
_CATEGORIES = [
    (ConfigError, "config_error", 3),
    (IdxError, "data_error", 4),
    (EmptySelectionError, "data_error", 4),
    (CheckpointError, "checkpoint_error", 5),
    (TrainingAborted, "training_aborted", 6),
    (ClassifierTooWeak, "classifier_too_weak", 7),
    (ArtifactError, "io_error", 8),
    (FileNotFoundError, "io_error", 8),
    (OSError, "io_error", 8),
    (ValueError, "invalid_argument", 9),
]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def read_config_file(path) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _global_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="key=value file; CLI flags override")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def _train_flags(p: argparse.ArgumentParser):
    p.add_argument("--mnist", default=DEFAULT_MNIST, help="directory holding the IDX files")
    p.add_argument("--digits", default="7", help="a single digit or 'all'")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--gen-hidden", type=_ints, default=TrainConfig.gen_hidden)
    p.add_argument("--disc-hidden", type=_ints, default=TrainConfig.disc_hidden)
    p.add_argument("--weight-noise", type=float, default=0.05)
    p.add_argument("--train-sigma", type=float, default=0.5)
    p.add_argument("--lambda", dest="curvature_lambda", type=float, default=1.0)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parent = _global_parent()
    root = argparse.ArgumentParser(prog="photonic-gan", parents=[parent],
                                   description="Photonic GAN simulation harness")
    root.add_argument("--version", action="version", version=__version__)
    sub = root.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("rng-test", parents=[parent], help="latent source statistics")
    p.add_argument("--mode", choices=["ideal", "ase"], default="ideal")
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--lags", type=int, default=100)
    subs["rng-test"] = p

    p = sub.add_parser("core-calibrate", parents=[parent], help="programming and MVM error statistics")
    p.add_argument("--write-std", type=float, default=0.05)
    p.add_argument("--read-std", type=float, default=0.0)
    p.add_argument("--program-std", type=float, default=0.007)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--n-ops", type=int, default=4900)
    subs["core-calibrate"] = p

    p = sub.add_parser("train", parents=[parent], help="train one generator")
    p.add_argument("--strategy", choices=["nf", "ic", "wc", "cr"], default="nf")
    _train_flags(p)
    subs["train"] = p

    p = sub.add_parser("train-classifier", parents=[parent], help="train the FID feature classifier")
    p.add_argument("--mnist", default=DEFAULT_MNIST)
    p.add_argument("--epochs", type=int, default=8)
    subs["train-classifier"] = p

    p = sub.add_parser("generate", parents=[parent], help="sample images from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=49)
    p.add_argument("--exec", dest="exec_mode", choices=["exact", "hw"], default="exact")
    p.add_argument("--write-std", type=float, default=0.05)
    p.add_argument("--read-std", type=float, default=0.0)
    p.add_argument("--regime", choices=["fresh", "fixed"], default="fresh")
    subs["generate"] = p

    p = sub.add_parser("evaluate", parents=[parent], help="ideal vs hardware FID of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--mnist", default=DEFAULT_MNIST)
    p.add_argument("--digits", default="7")
    p.add_argument("--write-std", type=float, default=0.05)
    p.add_argument("--read-std", type=float, default=0.0)
    p.add_argument("--regime", choices=["fresh", "fixed"], default="fresh")
    p.add_argument("--seeds", type=int, default=5, help="number of evaluation seeds")
    p.add_argument("--n", type=int, default=2000)
    subs["evaluate"] = p

    for name, levels, strategies, digits in (
        ("compare", (0.0, 0.05), ("nf", "ic", "wc"), "7"),
        ("sweep", DEFAULT_NOISE_LEVELS, ("nf", "cr"), "all"),
    ):
        p = sub.add_parser(name, parents=[parent], help=f"{name} experiment")
        p.add_argument("--strategy", dest="strategies", type=_strs, default=strategies)
        p.add_argument("--noise-levels", type=_floats, default=levels)
        p.add_argument("--seeds", type=_ints, default=(0, 1, 2, 3, 4))
        p.add_argument("--classifier", required=True)
        p.add_argument("--read-std", type=float, default=0.0)
        p.add_argument("--regime", choices=["fresh", "fixed"], default="fresh")
        p.add_argument("--n", type=int, default=2000)
        _train_flags(p)
        p.set_defaults(digits=digits)
        subs[name] = p
    return root, subs


def _apply_config(argv, root, subs):
    """Install config-file values as parser defaults so explicit flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config_file(known.config)
    for parser in [root, *subs.values()]:
        by_dest = {a.dest: a for a in parser._actions}
        typed = {}
        for k, v in values.items():
            act = by_dest.get(k)
            if act is None:
                continue
            try:
                typed[k] = act.type(v) if act.type else v
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {k}={v!r}: {exc}") from exc
            if act.choices and typed[k] not in act.choices:
                raise ConfigError(f"config key {k}={v!r} not in {sorted(act.choices)}")
        parser.set_defaults(**typed)
    unknown = set(values) - {a.dest for p in [root, *subs.values()] for a in p._actions}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")


def _regime(name: str) -> NoiseRegime:
    return NoiseRegime.FRESH_PER_USE if name == "fresh" else NoiseRegime.FIXED_PER_DEPLOYMENT


def _out(args) -> Path:
    out = Path(getattr(args, "out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(args, strategy: str = "nf") -> TrainConfig:
    st = strategy_from_name(strategy, args.weight_noise, args.train_sigma, args.curvature_lambda)
    return TrainConfig(strategy=st, epochs=args.epochs, batch_size=args.batch,
                       learning_rate=args.lr, gen_hidden=tuple(args.gen_hidden),
                       disc_hidden=tuple(args.disc_hidden), seed=getattr(args, "seed", 0))


def cmd_rng_test(args) -> int:
    mode = SourceMode.ASE if args.mode == "ase" else SourceMode.IDEAL
    cfg = LatentSourceConfig(mode, sigma=args.sigma, seed=getattr(args, "seed", 0))
    seq = ase_slice_detect(cfg, args.n) if mode is SourceMode.ASE else sample_latent(cfg, args.n)
    rep = moment_report(seq)
    r = autocorrelation(seq, args.lags)
    out = _out(args)
    write_csv(out / "autocorrelation.csv", ["lag", "r"], [[k + 1, v] for k, v in enumerate(r)])
    print(rep.line())
    print(f"max|r| lags 1..{args.lags} = {np.abs(r).max():.5f}  (1/sqrt(N) = {1 / np.sqrt(args.n):.5f})")
    return 0


def cmd_core_calibrate(args) -> int:
    rng = np.random.default_rng(getattr(args, "seed", 0))
    rows = []
    for target in (-0.7, 0.0, 0.7):
        errs = []
        for _ in range(args.trials):
            cell = PmmcCell(programmed_gamma=float(rng.uniform(-1, 1)))
            res = program_iterative(cell, target, rng, write_std=args.program_std)
            errs.append(res.final_gamma - target)
        rows.append([target, float(np.std(errs)), float(np.mean(errs))])
        print(f"target {target:+.1f}: terminal error STD {rows[-1][1]:.5f}")
    out = _out(args)
    write_csv(out / "program_errors.csv", ["target", "error_std", "error_mean"], rows)
    core = TensorCore(2, 2, NoiseSpec(args.write_std, args.read_std), seed=getattr(args, "seed", 0))
    st = mvm_error_stats(core, args.n_ops)
    pred = predicted_mvm_error_std(args.write_std, args.read_std, 2)
    write_csv(out / "mvm_error_hist.csv", ["bin_center", "count"],
              [[c, int(k)] for c, k in zip(st.bin_centers, st.counts)])
    print(f"MVM error STD {st.std:.5f} (predicted {pred:.5f})")
    return 0


def cmd_train(args) -> int:
    tr, _ = load_digits(args.mnist, args.digits)
    cfg = _train_config(args, args.strategy)
    run = train(cfg, tr.images, progress=True)
    out = _out(args)
    name = f"{args.strategy}_s{cfg.seed}"
    save_checkpoint(out / f"{name}.ckpt", [run.generator, run.discriminator])
    write_csv(out / f"{name}_losses.csv", ["epoch", "d_loss", "g_loss"],
              [[e + 1, d, g] for e, (d, g) in enumerate(zip(run.d_loss, run.g_loss))])
    write_manifest(out / f"{name}_manifest.json", cfg.as_dict(), [cfg.seed],
                   {"digits": args.digits, "steps": run.steps})
    print(f"trained {args.strategy} in {run.wall_clock:.1f}s -> {out / (name + '.ckpt')}")
    return 0


def cmd_train_classifier(args) -> int:
    tr = load_mnist_dir(args.mnist, Split.TRAIN)
    te = load_mnist_dir(args.mnist, Split.TEST)
    clf = train_feature_classifier(tr.images, tr.labels, te.images, te.labels,
                                   seed=getattr(args, "seed", 0), epochs=args.epochs)
    path = _out(args) / "classifier.ckpt"
    save_checkpoint(path, [clf])
    print(f"classifier -> {path}")
    return 0


def _load_generator(path):
    nets = load_checkpoint(path)
    if "generator" not in nets:
        raise CheckpointError(f"{path}: no generator in checkpoint")
    return nets["generator"]


def _load_classifier(path):
    nets = load_checkpoint(path)
    if "classifier" not in nets:
        raise CheckpointError(f"{path}: no classifier in checkpoint")
    return nets["classifier"]


def cmd_generate(args) -> int:
    gen = _load_generator(args.ckpt)
    hw = None if args.exec_mode == "exact" else NoiseSpec(args.write_std, args.read_std, _regime(args.regime))
    imgs = generate(gen, args.n, hardware=hw, seed=getattr(args, "seed", 0))
    out = _out(args)
    path = write_pgm(out / "samples.pgm", image_grid(imgs))
    print(f"{args.n} images -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    gen = _load_generator(args.ckpt)
    clf = _load_classifier(args.classifier)
    _, te = load_digits(args.mnist, args.digits)
    ref = (te.images + 1) / 2
    noise = NoiseSpec(args.write_std, args.read_std, _regime(args.regime))
    base = getattr(args, "seed", 0)
    rows = []
    for s in range(args.seeds):
        rep = evaluate_run(gen, TrainConfig(), noise, clf, ref, args.n, seed=base + s,
                           with_diversity=True)
        rows.append([base + s, rep.fid_ideal, rep.fid_noisy, rep.delta_fid, rep.diversity_std])
        print(f"seed {base + s}: FID ideal {rep.fid_ideal:.3f} noisy {rep.fid_noisy:.3f} "
              f"delta {rep.delta_fid:+.3f}")
    write_csv(_out(args) / "evaluation.csv",
              ["seed", "fid_ideal", "fid_noisy", "delta_fid", "diversity_std"], rows)
    return 0


def _experiment_config(args) -> SweepConfig:
    base = replace(_train_config(args), seed=0)
    return SweepConfig(
        strategies=tuple(args.strategies),
        noise_levels=tuple(args.noise_levels),
        seeds=tuple(args.seeds),
        digits=args.digits,
        train=base,
        weight_noise=args.weight_noise,
        train_sigma=args.train_sigma,
        curvature_lambda=args.curvature_lambda,
        read_std=args.read_std,
        regime=_regime(args.regime),
        n_generated=args.n,
        diversity=args.digits == "all",
    )


def _run_experiment(args, runner) -> int:
    scfg = _experiment_config(args)
    clf = _load_classifier(args.classifier)
    tr, te = load_digits(args.mnist, args.digits)
    out = _out(args)
    write_manifest(out / f"{args.command}_manifest.json",
                   {"train": scfg.train.as_dict(), "strategies": scfg.strategies,
                    "noise_levels": scfg.noise_levels, "digits": scfg.digits,
                    "read_std": scfg.read_std, "regime": scfg.regime.value,
                    "n_generated": scfg.n_generated, "weight_noise": scfg.weight_noise,
                    "train_sigma": scfg.train_sigma, "curvature_lambda": scfg.curvature_lambda},
                   scfg.seeds)
    t0 = time.perf_counter()
    result = runner(scfg, tr.images, (te.images + 1) / 2, clf, out, getattr(args, "workers", 1))
    failures = result[-1]
    for row in result[0]:
        print(",".join(str(v) for v in row))
    print(f"{args.command} finished in {time.perf_counter() - t0:.1f}s, {len(failures)} failed units")
    return 1 if failures else 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    root, subs = build_parser()
    try:
        _apply_config(argv, root, subs)
        args = root.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        handler = {
            "rng-test": cmd_rng_test,
            "core-calibrate": cmd_core_calibrate,
            "train": cmd_train,
            "train-classifier": cmd_train_classifier,
            "generate": cmd_generate,
            "evaluate": cmd_evaluate,
            "compare": lambda a: _run_experiment(a, run_comparison),
            "sweep": lambda a: _run_experiment(a, run_sweep),
        }[args.command]
        return handler(args)
    except Exception as exc:  # noqa: BLE001 - mapped to one-line categories
        for cls, category, code in _CATEGORIES:
            if isinstance(exc, cls):
                msg = str(exc).replace("\n", " ")
                print(f"error: {category}: {msg}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
