"""Sequential dense networks with hand-written reverse-mode gradients.

Forward passes may run exactly or through the simulated tensor core, and may
use perturbed weights. Backward passes always propagate through the clean
weights stored on the layers, so noise injected in the forward pass never
enters the gradient path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pmmc_core import LayerMapping, TensorCore, tiled_matvec

__all__ = [
    "Activation",
    "DenseLayer",
    "DenseNet",
    "Exact",
    "Hardware",
    "ForwardRecord",
    "GanLosses",
    "AdamState",
    "forward",
    "backward",
    "gan_losses",
    "softmax_cross_entropy",
    "adam_update",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

LOG_CLAMP = 1e-7
CKPT_HEADER = "PGANCKPT v1"


@dataclass(frozen=True)
class Activation:
    kind: str = "identity"
    slope: float = 0.2

    KINDS = ("leaky_relu", "tanh", "sigmoid", "identity")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")

    @classmethod
    def leaky_relu(cls, slope: float = 0.2) -> "Activation":
        return cls("leaky_relu", slope)

    @classmethod
    def tanh(cls) -> "Activation":
        return cls("tanh")

    @classmethod
    def sigmoid(cls) -> "Activation":
        return cls("sigmoid")

    @classmethod
    def identity(cls) -> "Activation":
        return cls("identity")

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        if self.kind == "tanh":
            return np.tanh(z)
        if self.kind == "sigmoid":
            # split by sign so exp never overflows
            out = np.empty_like(z)
            pos = z >= 0
            out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
            ez = np.exp(z[~pos])
            out[~pos] = ez / (1.0 + ez)
            return out
        return z

    def grad(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Derivative at pre-activation ``z`` given output ``a``."""
        if self.kind == "leaky_relu":
            return np.where(z > 0, 1.0, self.slope)
        if self.kind == "tanh":
            return 1.0 - a * a
        if self.kind == "sigmoid":
            return a * (1.0 - a)
        return np.ones_like(z)

    @property
    def tag(self) -> str:
        return f"leaky_relu:{self.slope!r}" if self.kind == "leaky_relu" else self.kind

    @classmethod
    def from_tag(cls, tag: str) -> "Activation":
        if tag.startswith("leaky_relu:"):
            return cls.leaky_relu(float(tag.split(":", 1)[1]))
        return cls(tag)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: Activation = field(default_factory=Activation)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias length must equal layer output size")
        self.zero_grad()

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def zero_grad(self):
        self.grad_w = np.zeros_like(self.weights)
        self.grad_b = np.zeros_like(self.bias)


@dataclass
class DenseNet:
    layers: list[DenseLayer]
    role: str = "generator"

    ROLES = ("generator", "discriminator", "classifier")

    def __post_init__(self):
        if self.role not in self.ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer sizes do not chain: {a.n_out} -> {b.n_in}")

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        activations: Sequence[Activation],
        role: str,
        rng: np.random.Generator,
    ) -> "DenseNet":
        """Glorot-uniform weights and zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for n_in, n_out, act in zip(sizes, sizes[1:], activations):
            limit = np.sqrt(6.0 / (n_in + n_out))
            layers.append(DenseLayer(rng.uniform(-limit, limit, (n_out, n_in)), np.zeros(n_out), act))
        return cls(layers, role)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def weights(self) -> list[np.ndarray]:
        return [layer.weights for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def grads(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.grad_w, layer.grad_b]
        return out

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def copy(self) -> "DenseNet":
        return DenseNet(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers],
            self.role,
        )

    def __call__(self, x, **kw) -> np.ndarray:
        return forward(self, x, **kw).output


@dataclass(frozen=True)
class Exact:
    pass


@dataclass
class Hardware:
    """Route every layer product through a simulated tensor core."""

    core: TensorCore
    gamma_max: float = 1.0

    def matmul(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        return tiled_matvec(self.core, w, x, LayerMapping.for_weights(w, self.gamma_max))


@dataclass
class ForwardRecord:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    single: bool
    net_id: int

    @property
    def output(self) -> np.ndarray:
        out = self.post[-1]
        return out[0] if self.single else out


def forward(
    net: DenseNet,
    x,
    engine: Exact | Hardware = Exact(),
    weights: Sequence[np.ndarray] | None = None,
) -> ForwardRecord:
    """Run the net on a vector or batch, recording activations for backprop.

    ``weights`` overrides the matrices used in this pass (e.g. a noisy draw);
    biases and activations are always applied exactly.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.n_in:
        raise ValueError(f"input dim {h.shape[1]} != net input {net.n_in}")
    if weights is not None and len(weights) != len(net.layers):
        raise ValueError("need one weight matrix per layer")
    inputs, pre, post = [], [], []
    for k, layer in enumerate(net.layers):
        w = layer.weights if weights is None else weights[k]
        inputs.append(h)
        if isinstance(engine, Hardware):
            z = engine.matmul(w, h) + layer.bias
        else:
            z = h @ w.T + layer.bias
        h = layer.activation(z)
        pre.append(z)
        post.append(h)
    return ForwardRecord(inputs, pre, post, single, id(net))


def backward(net: DenseNet, record: ForwardRecord, upstream) -> np.ndarray:
    """Accumulate parameter gradients; return the gradient w.r.t. the input.

    Propagation to earlier layers uses the clean weights on ``net``.
    """
    if record is None or record.net_id != id(net) or len(record.pre) != len(net.layers):
        raise ValueError("forward record is missing or belongs to another net")
    g = np.asarray(upstream, dtype=float)
    if record.single:
        g = g[None, :]
    if g.shape != record.post[-1].shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {record.post[-1].shape}")
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dz = g * layer.activation.grad(record.pre[k], record.post[k])
        layer.grad_w += dz.T @ record.inputs[k]
        layer.grad_b += dz.sum(axis=0)
        g = dz @ layer.weights
    return g[0] if record.single else g


@dataclass
class GanLosses:
    d_loss: float
    g_loss: float
    # gradients w.r.t. discriminator outputs
    d_grad_real: np.ndarray
    d_grad_fake: np.ndarray
    g_grad_fake: np.ndarray


def gan_losses(d_real, d_fake) -> GanLosses:
    """Discriminator cross-entropy and non-saturating generator loss."""
    d_real = np.asarray(d_real, dtype=float)
    d_fake = np.asarray(d_fake, dtype=float)
    pr = np.clip(d_real, LOG_CLAMP, 1 - LOG_CLAMP)
    pf = np.clip(d_fake, LOG_CLAMP, 1 - LOG_CLAMP)
    nr, nf = pr.size, pf.size
    d_loss = -np.mean(np.log(pr)) - np.mean(np.log1p(-pf))
    g_loss = -np.mean(np.log(pf))
    return GanLosses(
        d_loss=float(d_loss),
        g_loss=float(g_loss),
        d_grad_real=-1.0 / (pr * nr),
        d_grad_fake=1.0 / ((1.0 - pf) * nf),
        g_grad_fake=-1.0 / (pf * nf),
    )


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of integer ``labels``; returns (loss, d loss / d logits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None


def adam_update(net: DenseNet, state: AdamState) -> DenseNet:
    """One Adam step from the accumulated gradients, which are then cleared."""
    params, grads = net.params(), net.grads()
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    net.zero_grad()
    return net


LossFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def grad_check(
    net: DenseNet,
    x: np.ndarray,
    loss_fn: LossFn,
    n_params_sampled: int = 20,
    rng: np.random.Generator | None = None,
    h: float = 1e-5,
) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` maps the network output to ``(loss, d loss / d output)``.
    """
    rng = rng or np.random.default_rng(0)
    net.zero_grad()
    rec = forward(net, x)
    _, upstream = loss_fn(rec.output)
    backward(net, rec, upstream)
    params, grads = net.params(), [g.copy() for g in net.grads()]
    net.zero_grad()
    sizes = np.array([p.size for p in params])
    flat = rng.choice(sizes.sum(), size=min(n_params_sampled, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for f in flat:
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        idx = np.unravel_index(f - offsets[k], params[k].shape)
        orig = params[k][idx]
        params[k][idx] = orig + h
        lp = loss_fn(forward(net, x).output)[0]
        params[k][idx] = orig - h
        lm = loss_fn(forward(net, x).output)[0]
        params[k][idx] = orig
        numeric = (lp - lm) / (2 * h)
        analytic = grads[k][idx]
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, nets: Sequence[DenseNet]) -> None:
    lines = [CKPT_HEADER]
    for net in nets:
        for k, layer in enumerate(net.layers):
            lines.append(f"layer {net.role} {k} {layer.n_out} {layer.n_in} {layer.activation.tag}")
            for row in layer.weights:
                lines.append(" ".join(f"{v:.17g}" for v in row))
            lines.append(" ".join(f"{v:.17g}" for v in layer.bias))
            lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def load_checkpoint(path) -> dict[str, DenseNet]:
    """Read every net in a checkpoint, keyed by role."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].strip() != CKPT_HEADER:
        raise CheckpointError(f"{path}: missing {CKPT_HEADER!r} header")
    layers: dict[str, list[DenseLayer]] = {}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        parts = line.split()
        if parts[0] != "layer" or len(parts) != 6:
            raise CheckpointError(f"{path}:{i}: bad layer record {line!r}")
        role, n_out, n_in, tag = parts[1], int(parts[3]), int(parts[4]), parts[5]
        try:
            w = np.array([[float(v) for v in lines[i + r].split()] for r in range(n_out)])
            b = np.array([float(v) for v in lines[i + n_out].split()])
        except (IndexError, ValueError) as exc:
            raise CheckpointError(f"{path}:{i}: truncated or malformed layer block") from exc
        if w.shape != (n_out, n_in) or b.shape != (n_out,):
            raise CheckpointError(f"{path}:{i}: layer block does not match its header")
        i += n_out + 1
        layers.setdefault(role, []).append(DenseLayer(w, b, Activation.from_tag(tag)))
    return {role: DenseNet(ls, role) for role, ls in layers.items()}
