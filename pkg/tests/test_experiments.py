import numpy as np
import pytest

import photonic_gan.experiments as ex
from photonic_gan.experiments import SweepConfig, comparison_table, run_comparison, run_sweep, run_units
from photonic_gan.gan_train import TrainConfig, TrainingAborted
from photonic_gan.metrics import build_classifier

TINY = TrainConfig(epochs=1, batch_size=32, latent_dim=4, gen_hidden=(8,), disc_hidden=(6,))


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(0)
    train_images = np.tanh(rng.normal(0, 1, (128, 196)))
    reference = rng.uniform(0, 1, (500, 196))
    clf = build_classifier(np.random.default_rng(1))
    return train_images, reference, clf


def cfg(**kw):
    base = dict(strategies=("nf", "cr"), noise_levels=(0.0, 0.05), seeds=(0, 1), train=TINY,
                n_generated=500)
    base.update(kw)
    return SweepConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(noise_levels=(0.05, 0.0))
    with pytest.raises(ValueError):
        SweepConfig(noise_levels=(-0.1, 0.0))
    with pytest.raises(ValueError):
        SweepConfig(seeds=())
    assert SweepConfig().noise_levels == (0.0, 0.01, 0.025, 0.05, 0.075, 0.10)


def test_sweep_table_and_bands(setup, tmp_path):
    table, bands, failures = run_sweep(cfg(), *setup, tmp_path)
    assert not failures
    assert len(table) == 2 * 2 * 2
    assert [r[0] for r in table] == ["cr"] * 4 + ["nf"] * 4
    assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == "strategy,write_std,seed,fid,diversity_std"
    for st, ws, n, med, lo, hi, _ in bands:
        assert n == 2 and lo <= med <= hi


def test_rerun_is_bitwise_identical(setup, tmp_path):
    run_sweep(cfg(), *setup, tmp_path / "a")
    run_sweep(cfg(), *setup, tmp_path / "b")
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
    for name in ("nf_s0.ckpt", "cr_s1.ckpt"):
        assert (tmp_path / "a" / "checkpoints" / name).read_bytes() == \
            (tmp_path / "b" / "checkpoints" / name).read_bytes()


def test_resume_matches_uninterrupted(setup, tmp_path):
    run_sweep(cfg(), *setup, tmp_path / "full")
    part = tmp_path / "part"
    # an interrupted run: one strategy finished, the other half written
    run_sweep(cfg(strategies=("nf",)), *setup, part)
    lines = (part / "sweep.csv.partial").read_text().splitlines()
    (part / "sweep.csv.partial").write_text("\n".join(lines[:-1]) + "\n")
    run_sweep(cfg(), *setup, part)
    assert (part / "sweep.csv").read_bytes() == (tmp_path / "full" / "sweep.csv").read_bytes()


def test_workers_match_serial(setup, tmp_path):
    run_sweep(cfg(), *setup, tmp_path / "serial")
    run_sweep(cfg(), *setup, tmp_path / "pool", workers=2)
    assert (tmp_path / "serial" / "sweep.csv").read_bytes() == (tmp_path / "pool" / "sweep.csv").read_bytes()


def test_failed_unit_does_not_abort_others(setup, tmp_path, monkeypatch):
    real_train = ex.train

    def flaky(c, images):
        if c.strategy.kind == "cr":
            raise TrainingAborted("synthetic failure")
        return real_train(c, images)

    monkeypatch.setattr(ex, "train", flaky)
    table, _, failures = run_sweep(cfg(), *setup, tmp_path)
    assert {f.strategy for f in failures} == {"cr"}
    assert len(table) == 4 and all(r[0] == "nf" for r in table)


def test_comparison(setup, tmp_path):
    c = cfg(strategies=("nf", "ic", "wc"), seeds=(0,), diversity=False)
    rows, failures = run_comparison(c, *setup, tmp_path)
    assert not failures and len(rows) == 3
    for st, seed, fi, fn, d in rows:
        assert d == fn - fi
    assert (tmp_path / "grids" / "wc_w0.05_s0.pgm").exists()
    with pytest.raises(ValueError):
        run_comparison(cfg(noise_levels=(0.0, 0.01, 0.05)), *setup, tmp_path)


def test_comparison_table_pairs_rows():
    table = [["nf", "0", "1", "5.0", ""], ["nf", "0.05", "1", "6.5", ""], ["wc", "0", "1", "4", ""]]
    assert comparison_table(table, 0.05) == [["nf", 1, 5.0, 6.5, 1.5]]
