from dataclasses import replace

import numpy as np
import pytest

from photonic_gan.gan_train import (
    Strategy,
    TrainConfig,
    TrainStreams,
    TrainingAborted,
    build_discriminator,
    build_generator,
    generate,
    strategy_forward_weights,
    train,
    train_step,
)
from photonic_gan.nn import AdamState, forward, save_checkpoint
from photonic_gan.pmmc_core import LayerMapping, NoiseSpec

from conftest import needs_mnist

SMALL = dict(epochs=2, batch_size=16, latent_dim=4, gen_hidden=(8,), disc_hidden=(6,), image_dim=12)


@pytest.fixture(scope="module")
def images():
    rng = np.random.default_rng(0)
    return np.tanh(rng.normal(0, 1, (96, 12)) + np.linspace(-1, 1, 12))


def run(images, strategy, seed=0, **kw):
    return train(TrainConfig(strategy=strategy, seed=seed, **{**SMALL, **kw}), images)


def same_params(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))


class TestStrategy:
    def test_rejects_unknown_and_negative(self):
        with pytest.raises(ValueError):
            Strategy("xx")
        with pytest.raises(ValueError):
            Strategy.wc(-0.1)
        with pytest.raises(ValueError):
            Strategy.ic(0.0)

    def test_latent_sigma_routing(self):
        assert TrainConfig(strategy=Strategy.ic()).train_sigma == 0.5
        for st in (Strategy.nf(), Strategy.wc(), Strategy.cr()):
            assert TrainConfig(strategy=st).train_sigma == 0.2


class TestDegeneracy:
    def test_wc_zero_is_nf(self, images):
        a, b = run(images, Strategy.nf()), run(images, Strategy.wc(0.0))
        assert same_params(a.generator, b.generator)
        assert same_params(a.discriminator, b.discriminator)
        assert a.d_loss == b.d_loss and a.g_loss == b.g_loss

    def test_cr_zero_noise_is_nf(self, images):
        a, b = run(images, Strategy.nf()), run(images, Strategy.cr(0.0, 1.0))
        assert same_params(a.generator, b.generator)

    def test_cr_zero_lambda_is_wc(self, images):
        a, b = run(images, Strategy.wc(0.05)), run(images, Strategy.cr(0.05, 0.0))
        assert same_params(a.generator, b.generator)
        assert a.g_loss == b.g_loss

    def test_strategies_differ_when_active(self, images):
        nf = run(images, Strategy.nf())
        for st in (Strategy.wc(), Strategy.cr(), Strategy.ic()):
            assert not same_params(nf.generator, run(images, st).generator)


class TestDeterminism:
    @pytest.mark.parametrize("kind", ["nf", "ic", "wc", "cr"])
    def test_same_seed_same_checkpoint(self, images, kind, tmp_path):
        st = Strategy(kind)
        for k in range(2):
            r = run(images, st, seed=5)
            save_checkpoint(tmp_path / f"{k}.ckpt", [r.generator, r.discriminator])
        assert (tmp_path / "0.ckpt").read_bytes() == (tmp_path / "1.ckpt").read_bytes()

    def test_different_seeds_differ(self, images):
        assert not same_params(run(images, Strategy.nf(), 1).generator, run(images, Strategy.nf(), 2).generator)


class TestForwardWeights:
    def test_clean_for_nf_and_ic(self):
        cfg = TrainConfig(**SMALL)
        gen = build_generator(cfg, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        for st in (Strategy.nf(), Strategy.ic()):
            ws = strategy_forward_weights(gen, st, rng)
            assert all(np.array_equal(a, b) for a, b in zip(ws, gen.weights()))

    def test_wc_perturbation_scale(self):
        cfg = TrainConfig(latent_dim=64, gen_hidden=(128,), image_dim=196)
        gen = build_generator(cfg, np.random.default_rng(0))
        ws = strategy_forward_weights(gen, Strategy.wc(0.05), np.random.default_rng(2))
        for w_pert, w in zip(ws, gen.weights()):
            m = LayerMapping.for_weights(w)
            ratio = np.std(w_pert - w) / (0.05 * m.inverse_scale)
            assert 0.95 < ratio < 1.05
        # the clean parameters are left untouched
        assert not any(np.array_equal(a, b) for a, b in zip(ws, gen.weights()))

    def test_generator_gradient_uses_clean_weights(self):
        # manual chain rule for a one-hidden-layer generator: perturbed weights
        # feed the forward activations, clean weights carry the backward pass
        import photonic_gan.gan_train as gt
        from photonic_gan.nn import gan_losses

        cfg = TrainConfig(**SMALL)
        rng = np.random.default_rng(3)
        gen = build_generator(cfg, rng)
        disc = build_discriminator(cfg, rng)
        z = rng.normal(0, 0.2, (5, 4))
        w_pert = strategy_forward_weights(gen, Strategy.wc(0.3), rng)
        _, grads = gt._gen_loss_grad(gen, disc, z, w_pert)

        (w1p, w2p), (w1, w2) = w_pert, gen.weights()
        b1, b2 = gen.layers[0].bias, gen.layers[1].bias
        a1 = z @ w1p.T + b1
        h = np.where(a1 > 0, a1, 0.2 * a1)
        img = np.tanh(h @ w2p.T + b2)
        d_rec = forward(disc, img)
        up = gan_losses(d_rec.output[:, 0], d_rec.output[:, 0]).g_grad_fake[:, None]
        dv, du = disc.weights()
        da = (up * d_rec.output * (1 - d_rec.output)) @ du
        dimg = (da * np.where(d_rec.pre[0] > 0, 1.0, 0.2)) @ dv
        dz2 = dimg * (1 - img**2)
        dz1 = (dz2 @ w2) * np.where(a1 > 0, 1.0, 0.2)
        np.testing.assert_allclose(grads[0], dz1.T @ z, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(grads[2], dz2.T @ h, rtol=1e-10, atol=1e-14)
        # the same chain through the perturbed second layer gives a different answer
        dz1_bad = (dz2 @ w2p) * np.where(a1 > 0, 1.0, 0.2)
        assert not np.allclose(grads[0], dz1_bad.T @ z)


class TestLatentStd:
    def test_ic_training_batch_std(self):
        rng = np.random.default_rng(0)
        imgs = np.tanh(rng.normal(size=(512, 12)))
        cfg = TrainConfig(strategy=Strategy.ic(), **{**SMALL, "batch_size": 256, "epochs": 1})
        streams = TrainStreams(0)
        gen, disc = build_generator(cfg, streams.init), build_discriminator(cfg, streams.init)
        for k in range(2):
            res = train_step(gen, disc, imgs[k * 256:(k + 1) * 256], cfg, streams, AdamState(), AdamState())
            assert 0.45 <= res.latent_std <= 0.55

    def test_inference_latent_std(self):
        cfg = TrainConfig(**SMALL)
        gen = build_generator(cfg, np.random.default_rng(0))
        seen = []
        import photonic_gan.gan_train as gt
        orig = gt.forward

        def spy(net, x, **kw):
            seen.append(np.std(x))
            return orig(net, x, **kw)

        gt.forward = spy
        try:
            generate(gen, 512, cfg)
        finally:
            gt.forward = orig
        assert 0.18 <= seen[0] <= 0.22


class TestGenerate:
    def test_shapes_and_range(self):
        cfg = TrainConfig(**SMALL)
        gen = build_generator(cfg, np.random.default_rng(0))
        out = generate(gen, 49, cfg)
        assert out.shape == (49, 12)
        assert out.min() >= 0 and out.max() <= 1
        raw = generate(gen, 49, cfg, raw=True)
        np.testing.assert_allclose(out, (raw + 1) / 2)

    def test_zero_noise_hardware_matches_exact(self):
        cfg = TrainConfig(**SMALL)
        gen = build_generator(cfg, np.random.default_rng(0))
        a = generate(gen, 20, cfg, seed=3)
        b = generate(gen, 20, cfg, hardware=NoiseSpec.noiseless(), seed=3)
        assert np.max(np.abs(a - b)) < 1e-10

    def test_noise_changes_output(self):
        cfg = TrainConfig(**SMALL)
        gen = build_generator(cfg, np.random.default_rng(0))
        z = np.random.default_rng(1).normal(0, 0.2, (10, 4))
        a = generate(gen, 10, cfg, latents=z)
        b = generate(gen, 10, cfg, hardware=NoiseSpec(0.05, 0.0), latents=z, seed=1)
        assert 0 < np.max(np.abs(a - b)) < 0.5


class TestValidation:
    def test_bad_images(self):
        with pytest.raises(ValueError):
            train(TrainConfig(**SMALL), np.zeros((0, 12)))
        with pytest.raises(ValueError):
            train(TrainConfig(**SMALL), np.zeros((5, 13)))

    def test_nonfinite_aborts(self):
        imgs = np.full((32, 12), np.nan)
        with pytest.raises(TrainingAborted):
            train(TrainConfig(**SMALL), imgs)

    def test_losses_recorded_per_epoch(self, images):
        r = run(images, Strategy.nf(), epochs=3)
        assert len(r.d_loss) == 3 and r.steps == 3 * (96 // 16)
        assert all(np.isfinite(r.d_loss))


class TestSpecExamples:
    def test_wc_unity_scale_draw_std(self):
        from photonic_gan.nn import DenseLayer, DenseNet

        net = DenseNet([DenseLayer(np.ones((1, 1)), np.zeros(1))])
        rng = np.random.default_rng(0)
        dw = [strategy_forward_weights(net, Strategy.wc(0.05), rng)[0][0, 0] - 1.0 for _ in range(10_000)]
        assert 0.045 <= np.std(dw) <= 0.055

    def test_zero_epochs_returns_initialization(self, images):
        cfg = TrainConfig(strategy=Strategy.cr(), seed=4, **{**SMALL, "epochs": 0})
        r = train(cfg, images)
        streams = TrainStreams(4)
        gen0 = build_generator(cfg, streams.init)
        assert same_params(r.generator, gen0) and r.steps == 0


@needs_mnist
class TestStability:
    def test_nf_3000_steps_on_sevens(self, mnist_train):
        from photonic_gan.data import filter_digit

        sevens = filter_digit(mnist_train, 7).images
        for seed in range(5):
            cfg = TrainConfig(seed=seed)
            streams = TrainStreams(seed)
            gen, disc = build_generator(cfg, streams.init), build_discriminator(cfg, streams.init)
            g_opt, d_opt = AdamState(cfg.learning_rate), AdamState(cfg.learning_rate)
            d_tail = []
            for step in range(3000):
                idx = streams.data.integers(0, len(sevens), cfg.batch_size)
                res = train_step(gen, disc, sevens[idx], cfg, streams, g_opt, d_opt)
                assert np.isfinite(res.d_loss) and np.isfinite(res.g_loss)
                if step >= 2900:
                    d_tail.append(res.d_loss)
            assert min(d_tail) > 1e-4
