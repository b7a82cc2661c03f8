"""GAN training under the four noise strategies, and hardware deployment.

Strategies:

* ``nf``: plain training.
* ``ic``: latent inputs drawn with an inflated STD during training.
* ``wc``: every generator forward pass uses weights perturbed by a fresh
  contrast-domain Gaussian draw; gradients flow through the clean weights.
* ``cr``: ``wc`` plus a penalty ``lam * (L_perturbed - L_clean)**2`` on the
  generator loss, estimated from one extra clean forward pass.

The discriminator always runs exactly in software.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .noise_sources import gaussian_latents
from .nn import (
    Activation,
    AdamState,
    DenseNet,
    Exact,
    Hardware,
    adam_update,
    backward,
    forward,
    gan_losses,
)
from .pmmc_core import LayerMapping, NoiseSpec, TensorCore

log = logging.getLogger(__name__)

__all__ = [
    "Strategy",
    "TrainConfig",
    "TrainingRun",
    "TrainStreams",
    "TrainingAborted",
    "build_generator",
    "build_discriminator",
    "strategy_forward_weights",
    "train_step",
    "train",
    "generate",
]

STRATEGIES = ("nf", "ic", "wc", "cr")


@dataclass(frozen=True)
class Strategy:
    kind: str = "nf"
    train_sigma: float = 0.5
    weight_noise_std: float = 0.05
    curvature_lambda: float = 1.0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind == "ic" and not self.train_sigma > 0:
            raise ValueError("IC strategy needs train_sigma > 0")
        if self.weight_noise_std < 0 or self.curvature_lambda < 0:
            raise ValueError("weight noise and curvature lambda must be >= 0")

    @classmethod
    def nf(cls) -> "Strategy":
        return cls("nf")

    @classmethod
    def ic(cls, train_sigma: float = 0.5) -> "Strategy":
        return cls("ic", train_sigma=train_sigma)

    @classmethod
    def wc(cls, weight_noise_std: float = 0.05) -> "Strategy":
        return cls("wc", weight_noise_std=weight_noise_std)

    @classmethod
    def cr(cls, weight_noise_std: float = 0.05, curvature_lambda: float = 1.0) -> "Strategy":
        return cls("cr", weight_noise_std=weight_noise_std, curvature_lambda=curvature_lambda)

    @property
    def perturbs_weights(self) -> bool:
        return self.kind in ("wc", "cr")

    @property
    def label(self) -> str:
        return self.kind.upper()


@dataclass(frozen=True)
class TrainConfig:
    strategy: Strategy = field(default_factory=Strategy)
    epochs: int = 20
    batch_size: int = 64
    latent_dim: int = 16
    gen_hidden: tuple[int, ...] = (64, 128)
    disc_hidden: tuple[int, ...] = (64,)
    image_dim: int = 196
    leaky_slope: float = 0.2
    infer_sigma: float = 0.2
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    gamma_max: float = 1.0
    steps_per_epoch: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.infer_sigma > 0:
            raise ValueError("infer_sigma must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def train_sigma(self) -> float:
        return self.strategy.train_sigma if self.strategy.kind == "ic" else self.infer_sigma

    def as_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = asdict(self.strategy)
        return d


class TrainingAborted(RuntimeError):
    pass


class TrainStreams:
    """Independent RNG streams so strategies never shift each other's draws."""

    def __init__(self, seed: int):
        init, data, latent, weight = np.random.SeedSequence(seed).spawn(4)
        self.init = np.random.default_rng(init)
        self.data = np.random.default_rng(data)
        self.latent = np.random.default_rng(latent)
        self.weight = np.random.default_rng(weight)


def build_generator(cfg: TrainConfig, rng: np.random.Generator) -> DenseNet:
    sizes = (cfg.latent_dim, *cfg.gen_hidden, cfg.image_dim)
    acts = [Activation.leaky_relu(cfg.leaky_slope)] * len(cfg.gen_hidden) + [Activation.tanh()]
    return DenseNet.build(sizes, acts, "generator", rng)


def build_discriminator(cfg: TrainConfig, rng: np.random.Generator) -> DenseNet:
    sizes = (cfg.image_dim, *cfg.disc_hidden, 1)
    acts = [Activation.leaky_relu(cfg.leaky_slope)] * len(cfg.disc_hidden) + [Activation.sigmoid()]
    return DenseNet.build(sizes, acts, "discriminator", rng)


def strategy_forward_weights(
    net: DenseNet, strategy: Strategy, rng: np.random.Generator, gamma_max: float = 1.0
) -> list[np.ndarray]:
    """Weights to use for one forward pass under ``strategy``.

    WC/CR draw a contrast error per weight and convert it through the layer
    mapping, whose |W|max is taken from the current clean weights.
    """
    clean = net.weights()
    if not strategy.perturbs_weights:
        return clean
    out = []
    for w in clean:
        m = LayerMapping.for_weights(w, gamma_max)
        d_gamma = rng.normal(0.0, strategy.weight_noise_std, size=w.shape)
        out.append(w + d_gamma * m.inverse_scale)
    return out


@dataclass
class StepResult:
    d_loss: float
    g_loss: float
    penalty: float = 0.0
    latent_std: float = 0.0


def _disc_update(disc, real, fake, opt):
    rec_r = forward(disc, real)
    rec_f = forward(disc, fake)
    losses = gan_losses(rec_r.output[:, 0], rec_f.output[:, 0])
    backward(disc, rec_r, losses.d_grad_real[:, None])
    backward(disc, rec_f, losses.d_grad_fake[:, None])
    adam_update(disc, opt)
    return losses.d_loss


def _gen_loss_grad(gen, disc, z, weights):
    """Generator loss for one pass and its gradient w.r.t. generator params."""
    rec_g = forward(gen, z, weights=weights)
    rec_d = forward(disc, rec_g.output)
    losses = gan_losses(rec_d.output[:, 0], rec_d.output[:, 0])
    g_img = backward(disc, rec_d, losses.g_grad_fake[:, None])
    disc.zero_grad()
    gen.zero_grad()
    backward(gen, rec_g, g_img)
    grads = [g.copy() for g in gen.grads()]
    gen.zero_grad()
    return losses.g_loss, grads


def train_step(
    gen: DenseNet,
    disc: DenseNet,
    real_batch: np.ndarray,
    cfg: TrainConfig,
    streams: TrainStreams,
    g_opt: AdamState,
    d_opt: AdamState,
) -> StepResult:
    """One discriminator update followed by one generator update."""
    st = cfg.strategy
    n = real_batch.shape[0]
    sigma = cfg.train_sigma

    z = gaussian_latents(streams.latent, n, cfg.latent_dim, sigma)
    w_fake = strategy_forward_weights(gen, st, streams.weight, cfg.gamma_max)
    fake = forward(gen, z, weights=w_fake).output
    d_loss = _disc_update(disc, real_batch, fake, d_opt)

    z = gaussian_latents(streams.latent, n, cfg.latent_dim, sigma)
    w_pert = strategy_forward_weights(gen, st, streams.weight, cfg.gamma_max)
    g_loss, grads = _gen_loss_grad(gen, disc, z, w_pert)
    penalty = 0.0
    if st.kind == "cr" and st.curvature_lambda > 0:
        clean_loss, clean_grads = _gen_loss_grad(gen, disc, z, None)
        gap = g_loss - clean_loss
        penalty = st.curvature_lambda * gap * gap
        coef = 2.0 * st.curvature_lambda * gap
        grads = [g + coef * (g - gc) for g, gc in zip(grads, clean_grads)]
    for buf, g in zip(gen.grads(), grads):
        buf += g
    adam_update(gen, g_opt)

    if not (np.isfinite(d_loss) and np.isfinite(g_loss) and np.isfinite(penalty)):
        raise TrainingAborted(
            f"non-finite loss (d_loss={d_loss}, g_loss={g_loss}, penalty={penalty}) "
            f"at optimizer step {g_opt.step}"
        )
    return StepResult(d_loss, g_loss + penalty, penalty, float(z.std()))


@dataclass
class TrainingRun:
    config: TrainConfig
    generator: DenseNet
    discriminator: DenseNet
    d_loss: list[float]
    g_loss: list[float]
    wall_clock: float
    steps: int


def train(cfg: TrainConfig, images: np.ndarray, progress: bool = False) -> TrainingRun:
    """Full training loop over ``images`` (rows in [-1, 1]); deterministic in ``cfg.seed``."""
    images = np.asarray(images, dtype=float)
    if images.ndim != 2 or images.shape[0] == 0:
        raise ValueError("training needs a non-empty (n, pixels) image matrix")
    if images.shape[1] != cfg.image_dim:
        raise ValueError(f"image dim {images.shape[1]} != config image_dim {cfg.image_dim}")
    streams = TrainStreams(cfg.seed)
    gen = build_generator(cfg, streams.init)
    disc = build_discriminator(cfg, streams.init)
    g_opt = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2)
    d_opt = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2)
    n = images.shape[0]
    bs = min(cfg.batch_size, n)
    per_epoch = n // bs
    if cfg.steps_per_epoch is not None:
        per_epoch = min(per_epoch, cfg.steps_per_epoch)
    d_trace, g_trace = [], []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = streams.data.permutation(n)
        d_sum = g_sum = 0.0
        for s in range(per_epoch):
            batch = images[order[s * bs:(s + 1) * bs]]
            res = train_step(gen, disc, batch, cfg, streams, g_opt, d_opt)
            d_sum += res.d_loss
            g_sum += res.g_loss
        d_trace.append(d_sum / per_epoch)
        g_trace.append(g_sum / per_epoch)
        if progress:
            log.info("%s epoch %d/%d d_loss=%.4f g_loss=%.4f", cfg.strategy.label,
                     epoch + 1, cfg.epochs, d_trace[-1], g_trace[-1])
    return TrainingRun(
        config=cfg,
        generator=gen,
        discriminator=disc,
        d_loss=d_trace,
        g_loss=g_trace,
        wall_clock=time.perf_counter() - t0,
        steps=g_opt.step,
    )


def generate(
    gen: DenseNet,
    n: int,
    cfg: TrainConfig | None = None,
    hardware: NoiseSpec | None = None,
    seed: int = 0,
    latents: np.ndarray | None = None,
    quant_bits: int | None = None,
    core_shape: tuple[int, int] = (2, 2),
    raw: bool = False,
) -> np.ndarray:
    """Generate ``n`` flattened images with grayscale values in [0, 1].

    ``hardware=None`` runs exactly; otherwise every layer is deployed on a
    tensor core with the given noise. Latents are drawn at the inference STD
    unless supplied. ``raw=True`` returns the tanh outputs in [-1, 1].
    """
    cfg = cfg or TrainConfig()
    latent_rng, core_seed = np.random.SeedSequence(seed).spawn(2)
    if latents is None:
        latents = gaussian_latents(np.random.default_rng(latent_rng), n, gen.n_in, cfg.infer_sigma)
    if hardware is None:
        engine = Exact()
    else:
        core = TensorCore(*core_shape, noise=hardware, quant_bits=quant_bits,
                          seed=int(core_seed.generate_state(1)[0]))
        engine = Hardware(core, cfg.gamma_max)
    out = forward(gen, latents, engine=engine).output
    return out if raw else (out + 1.0) / 2.0
