"""Generation quality: feature classifier, Frechet distance, class diversity."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .gan_train import TrainConfig, generate
from .nn import (
    Activation,
    AdamState,
    DenseNet,
    adam_update,
    backward,
    forward,
    softmax_cross_entropy,
)
from .pmmc_core import NoiseSpec

log = logging.getLogger(__name__)

__all__ = [
    "FeatureStats",
    "FidReport",
    "ClassifierTooWeak",
    "train_feature_classifier",
    "classifier_accuracy",
    "extract_features",
    "predict_classes",
    "frechet_distance",
    "fid_score",
    "diversity_std",
    "evaluate_run",
]

EIG_FLOOR = 1e-10
MIN_ACCURACY = 0.92


class ClassifierTooWeak(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        if self.sigma.shape != (self.mu.size, self.mu.size):
            raise ValueError("covariance shape does not match mean")

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "FeatureStats":
        """Mean and unbiased covariance, repaired to be symmetric PSD."""
        feats = np.asarray(feats, dtype=float)
        n, f = feats.shape
        if n < f + 1:
            raise ValueError(f"need at least {f + 1} samples for {f} features, got {n}")
        cov = np.cov(feats, rowvar=False).reshape(f, f)
        cov = 0.5 * (cov + cov.T)
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < EIG_FLOOR:
            cov = (vecs * np.maximum(vals, EIG_FLOOR)) @ vecs.T
            cov = 0.5 * (cov + cov.T)
        return cls(feats.mean(axis=0), cov, n)


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between the Gaussians fitted to two feature sets.

    Tr((S_a S_b)^1/2) is computed as the trace of the square root of the
    symmetric matrix S_a^1/2 S_b S_a^1/2, with negative eigenvalues clipped.
    """
    if a.mu.shape != b.mu.shape:
        raise ValueError(f"feature dims differ: {a.mu.shape} vs {b.mu.shape}")
    for s in (a, b):
        if not (np.all(np.isfinite(s.mu)) and np.all(np.isfinite(s.sigma))):
            raise ValueError("feature statistics must be finite")
    root_a = _sqrt_psd(a.sigma)
    inner = root_a @ b.sigma @ root_a
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mu - b.mu
    return float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_cross)


def _to_signed(images: np.ndarray) -> np.ndarray:
    """[0, 1] grayscale to the [-1, 1] scale the classifier was trained on."""
    return 2.0 * np.asarray(images, dtype=float) - 1.0


def build_classifier(rng: np.random.Generator, slope: float = 0.2) -> DenseNet:
    lr = Activation.leaky_relu(slope)
    return DenseNet.build((196, 64, 32, 10), [lr, lr, Activation.identity()], "classifier", rng)


def classifier_accuracy(clf: DenseNet, images: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy on [-1, 1]-scaled images."""
    logits = forward(clf, images).output
    return float(np.mean(logits.argmax(axis=1) == labels))


def train_feature_classifier(
    train_images: np.ndarray,
    train_labels: np.ndarray,
    test_images: np.ndarray,
    test_labels: np.ndarray,
    seed: int = 0,
    epochs: int = 8,
    batch_size: int = 128,
    learning_rate: float = 1e-3,
    min_accuracy: float = MIN_ACCURACY,
) -> DenseNet:
    """Train the 196-64-32-10 classifier whose 32-unit layer is the feature map.

    Images use the [-1, 1] dataset scale. Raises ``ClassifierTooWeak`` when
    held-out accuracy falls below ``min_accuracy``.
    """
    init_ss, order_ss = np.random.SeedSequence(seed).spawn(2)
    clf = build_classifier(np.random.default_rng(init_ss))
    order_rng = np.random.default_rng(order_ss)
    opt = AdamState(learning_rate, 0.9, 0.999)
    n = train_images.shape[0]
    for _ in range(epochs):
        perm = order_rng.permutation(n)
        for s in range(0, n - batch_size + 1, batch_size):
            idx = perm[s:s + batch_size]
            rec = forward(clf, train_images[idx])
            _, g = softmax_cross_entropy(rec.output, train_labels[idx])
            backward(clf, rec, g)
            adam_update(clf, opt)
    acc = classifier_accuracy(clf, test_images, test_labels)
    log.info("feature classifier held-out accuracy %.4f", acc)
    if acc < min_accuracy:
        raise ClassifierTooWeak(f"held-out accuracy {acc:.4f} < required {min_accuracy}")
    return clf


def extract_features(clf: DenseNet, images: np.ndarray) -> np.ndarray:
    """Penultimate-layer activations for [0, 1] grayscale images."""
    return forward(clf, _to_signed(images)).post[-2]


def predict_classes(clf: DenseNet, images: np.ndarray) -> np.ndarray:
    return forward(clf, _to_signed(images)).output.argmax(axis=1)


def fid_score(generated, reference, clf: DenseNet, min_images: int = 500) -> float:
    """FID between two [0, 1] image batches in the classifier's feature space."""
    for name, batch in (("generated", generated), ("reference", reference)):
        if len(batch) < min_images:
            raise ValueError(f"{name} batch has {len(batch)} images, need >= {min_images}")
    a = FeatureStats.from_features(extract_features(clf, generated))
    b = FeatureStats.from_features(extract_features(clf, reference))
    return frechet_distance(a, b)


def diversity_std(generated, clf: DenseNet, min_images: int = 500) -> float:
    """Population STD of the per-class percentages among the generated images."""
    if len(generated) < min_images:
        raise ValueError(f"batch has {len(generated)} images, need >= {min_images}")
    return class_percentage_std(predict_classes(clf, generated))


def class_percentage_std(classes: np.ndarray, n_classes: int = 10) -> float:
    counts = np.bincount(np.asarray(classes), minlength=n_classes)[:n_classes]
    pct = 100.0 * counts / counts.sum()
    return float(pct.std())


@dataclass(frozen=True)
class FidReport:
    fid_ideal: float
    fid_noisy: float
    diversity_std: float | None
    n_generated: int
    n_reference: int

    @property
    def delta_fid(self) -> float:
        return self.fid_noisy - self.fid_ideal


def evaluate_run(
    gen: DenseNet,
    cfg: TrainConfig,
    noise: NoiseSpec,
    clf: DenseNet,
    reference: np.ndarray,
    n_generated: int = 2000,
    seed: int = 0,
    with_diversity: bool = False,
    min_images: int = 500,
) -> FidReport:
    """Ideal and hardware FIDs from identical latent draws.

    ``reference`` holds [0, 1] grayscale images.
    """
    latent_ss, hw_ss = np.random.SeedSequence(seed).spawn(2)
    z = np.random.default_rng(latent_ss).normal(0.0, cfg.infer_sigma, (n_generated, gen.n_in))
    hw_seed = int(hw_ss.generate_state(1)[0])
    ideal = generate(gen, n_generated, cfg, latents=z)
    noisy = generate(gen, n_generated, cfg, hardware=noise, latents=z, seed=hw_seed)
    ref_stats = FeatureStats.from_features(extract_features(clf, reference))
    if len(reference) < min_images or n_generated < min_images:
        raise ValueError(f"FID needs >= {min_images} images per side")
    fid_i = frechet_distance(FeatureStats.from_features(extract_features(clf, ideal)), ref_stats)
    fid_n = frechet_distance(FeatureStats.from_features(extract_features(clf, noisy)), ref_stats)
    div = diversity_std(noisy, clf, min_images) if with_diversity else None
    return FidReport(fid_i, fid_n, div, n_generated, len(reference))
