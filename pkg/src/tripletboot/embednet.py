"""Small dense embedding network with exact reverse-mode gradients.

The network is a stack of affine layers with tanh on the hidden layers and
identity on the last one, followed by L2 normalization, so every embedding
lives on the unit sphere. Gradients are computed analytically (including the
normalization Jacobian) and are checked against finite differences in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

# Below this norm a vector is treated as degenerate and normalized to e1.
NORM_EPS = 1e-12

ACTIVATION_TANH = "tanh"


@dataclass
class Sample:
    """One feature vector with an optional category label.

    Unlabeled samples (label None) are used for the hard-negative pool and
    for bootstrap candidates.
    """

    id: str
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 1:
            raise InputError(f"sample {self.id!r}: features must be 1-D")
        if not np.all(np.isfinite(self.features)):
            raise InputError(f"sample {self.id!r}: features must be finite")


@dataclass
class Network:
    """Layered affine+tanh embedding network, L2-normalized output."""

    layer_dims: list[int]
    weights: list[np.ndarray]   # weights[l] has shape (layer_dims[l], layer_dims[l+1])
    biases: list[np.ndarray]
    activation: str = ACTIVATION_TANH
    rng_seed: int = 0

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class GradientSet:
    """Per-layer parameter gradients, shape-matched to a Network."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "GradientSet":
        return cls(
            weights=[np.zeros_like(w) for w in net.weights],
            biases=[np.zeros_like(b) for b in net.biases],
        )


def init_network(layer_dims: list[int], seed: int) -> Network:
    """Build a network with seeded uniform weights scaled by 1/sqrt(fan_in).

    Biases start at zero. Two calls with equal arguments produce bit-identical
    parameters.
    """
    if len(layer_dims) < 2:
        raise ConfigError(f"need at least 2 layer dims, got {layer_dims}")
    if any(int(d) <= 0 or int(d) != d for d in layer_dims):
        raise ConfigError(f"layer dims must be positive integers, got {layer_dims}")
    dims = [int(d) for d in layer_dims]
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(layer_dims=dims, weights=weights, biases=biases, rng_seed=seed)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||, or the unit basis vector e1 when ||v|| <= 1e-12."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(v @ v)
    if norm <= NORM_EPS:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / norm


def _affine_forward(net: Network, x_matrix: np.ndarray):
    """Run the affine/tanh stack on a (batch, input_dim) matrix.

    Returns (pre_norm, activations) where activations[l] is the input to
    layer l and pre_norm is the last layer's output before normalization.
    """
    activations = [x_matrix]
    a = x_matrix
    n_layers = len(net.weights)
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        a = np.tanh(z) if l < n_layers - 1 else z
        activations.append(a)
    return activations[-1], activations


def forward_batch(net: Network, x_matrix: np.ndarray) -> np.ndarray:
    """Embed a (batch, input_dim) matrix; rows of the result are unit-norm."""
    x_matrix = np.asarray(x_matrix, dtype=np.float64)
    if x_matrix.ndim != 2 or x_matrix.shape[1] != net.input_dim:
        raise InputError(
            f"expected inputs of shape (n, {net.input_dim}), got {x_matrix.shape}"
        )
    z, _ = _affine_forward(net, x_matrix)
    norms = np.sqrt(np.sum(z * z, axis=1))
    out = np.zeros_like(z)
    ok = norms > NORM_EPS
    out[ok] = z[ok] / norms[ok, None]
    out[~ok, 0] = 1.0
    return out


def forward(net: Network, x: Sample) -> np.ndarray:
    """Embed one sample: affine stack, tanh hidden layers, L2 normalization."""
    if x.features.shape[0] != net.input_dim:
        raise InputError(
            f"sample {x.id!r} has dim {x.features.shape[0]}, network expects {net.input_dim}"
        )
    return forward_batch(net, x.features[None, :])[0]


def backward(net: Network, x_matrix: np.ndarray, upstream: np.ndarray) -> GradientSet:
    """Gradients of a scalar loss w.r.t. all parameters, summed over a batch.

    `upstream` holds dLoss/dEmbedding per row. The L2-normalization Jacobian
    (I - f f^T)/||z|| is applied before backpropagating through the layers.
    Degenerate rows (||z|| <= 1e-12) have a constant output and contribute
    nothing.
    """
    x_matrix = np.asarray(x_matrix, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x_matrix.ndim != 2 or x_matrix.shape[1] != net.input_dim:
        raise InputError(
            f"expected inputs of shape (n, {net.input_dim}), got {x_matrix.shape}"
        )
    if upstream.shape != (x_matrix.shape[0], net.output_dim):
        raise InputError(
            f"upstream shape {upstream.shape} does not match "
            f"({x_matrix.shape[0]}, {net.output_dim})"
        )

    z, activations = _affine_forward(net, x_matrix)
    norms = np.sqrt(np.sum(z * z, axis=1))
    ok = norms > NORM_EPS
    f = np.zeros_like(z)
    f[ok] = z[ok] / norms[ok, None]

    # dL/dz = (g - f (f.g)) / ||z|| per row; zero on degenerate rows.
    dz = np.zeros_like(z)
    dots = np.sum(f[ok] * upstream[ok], axis=1)
    dz[ok] = (upstream[ok] - f[ok] * dots[:, None]) / norms[ok, None]

    grads = GradientSet.zeros_like(net)
    n_layers = len(net.weights)
    delta = dz
    for l in range(n_layers - 1, -1, -1):
        a_in = activations[l]
        grads.weights[l][...] = a_in.T @ delta
        grads.biases[l][...] = delta.sum(axis=0)
        if l > 0:
            da = delta @ net.weights[l].T
            # activations[l] is tanh(z_l) for hidden layers, so tanh' = 1 - a^2
            delta = da * (1.0 - activations[l] ** 2)
    return grads


def sgd_step(net: Network, grads: GradientSet, lr: float) -> Network:
    """Return a new network with parameters moved one SGD step downhill."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(grads.weights) != len(net.weights):
        raise InputError("gradient set does not match network layout")
    for gw, w in zip(grads.weights, net.weights):
        if gw.shape != w.shape:
            raise InputError("gradient set does not match network layout")
    return Network(
        layer_dims=list(net.layer_dims),
        weights=[w - lr * gw for w, gw in zip(net.weights, grads.weights)],
        biases=[b - lr * gb for b, gb in zip(net.biases, grads.biases)],
        activation=net.activation,
        rng_seed=net.rng_seed,
    )


@dataclass
class SoftmaxHead:
    """Affine classification head used only by the softmax trainer variant."""

    weights: np.ndarray   # (embed_dim, n_categories)
    biases: np.ndarray    # (n_categories,)

    @property
    def n_categories(self) -> int:
        return self.weights.shape[1]


def init_head(embed_dim: int, n_categories: int, seed: int) -> SoftmaxHead:
    if embed_dim <= 0 or n_categories <= 0:
        raise ConfigError("head dimensions must be positive")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(embed_dim)
    return SoftmaxHead(
        weights=rng.uniform(-scale, scale, size=(embed_dim, n_categories)),
        biases=np.zeros(n_categories),
    )


def head_probabilities(head: SoftmaxHead, embedding: np.ndarray) -> np.ndarray:
    """Softmax over head logits, computed with max subtraction."""
    logits = embedding @ head.weights + head.biases
    logits = logits - logits.max()
    e = np.exp(logits)
    return e / e.sum()


def softmax_head_loss(
    net: Network, head: SoftmaxHead, x: Sample
) -> tuple[float, GradientSet, SoftmaxHead]:
    """Cross-entropy of the softmax head on one labeled sample.

    Returns (loss, network gradients, head gradients); the head gradients are
    packaged as a SoftmaxHead with matching shapes.
    """
    if x.label is None:
        raise InputError(f"sample {x.id!r} has no label")
    loss, net_grads, head_grads = softmax_head_loss_batch(
        net, head, x.features[None, :], np.array([x.label])
    )
    return loss, net_grads, head_grads


def softmax_head_loss_batch(
    net: Network,
    head: SoftmaxHead,
    x_matrix: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, GradientSet, SoftmaxHead]:
    """Mean cross-entropy over a labeled batch plus exact gradients."""
    x_matrix = np.asarray(x_matrix, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = x_matrix.shape[0]
    if labels.shape != (n,):
        raise InputError("labels do not match batch size")
    if labels.min() < 0 or labels.max() >= head.n_categories:
        raise InputError("label outside the head's category range")

    emb = forward_batch(net, x_matrix)
    logits = emb @ head.weights + head.biases
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), labels], 1e-300))))

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    head_grads = SoftmaxHead(weights=emb.T @ dlogits, biases=dlogits.sum(axis=0))
    upstream = dlogits @ head.weights.T
    net_grads = backward(net, x_matrix, upstream)
    return loss, net_grads, head_grads


def head_step(head: SoftmaxHead, grads: SoftmaxHead, lr: float) -> SoftmaxHead:
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    return SoftmaxHead(
        weights=head.weights - lr * grads.weights,
        biases=head.biases - lr * grads.biases,
    )
