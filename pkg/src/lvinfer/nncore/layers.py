"""Dense layers with optional spectral normalization, and exact MLP backprop.

All tensors are float64 numpy arrays. Batches are row-major: shape (N, dim).
A layer computes act(x @ W_eff.T + b) where W_eff is the raw weight divided
by its estimated top singular value when spectral normalization is on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LEAKY_SLOPE = 0.2  # fixed slope for all leaky-ReLU layers

ACTIVATIONS = ("identity", "leaky_relu", "sigmoid")

# Worst-case Lipschitz constant of each activation (sigmoid' peaks at 1/4).
ACTIVATION_LIPSCHITZ = {"identity": 1.0, "leaky_relu": 1.0, "sigmoid": 0.25}


def _apply_activation(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "identity":
        return pre
    if name == "leaky_relu":
        return np.where(pre > 0.0, pre, LEAKY_SLOPE * pre)
    if name == "sigmoid":
        # split by sign to avoid overflow in exp
        out = np.empty_like(pre)
        pos = pre >= 0.0
        out[pos] = 1.0 / (1.0 + np.exp(-pre[pos]))
        ez = np.exp(pre[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    raise ValueError(f"unknown activation {name!r}")


def _activation_derivative(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(pre)
    if name == "leaky_relu":
        return np.where(pre > 0.0, 1.0, LEAKY_SLOPE)
    if name == "sigmoid":
        return post * (1.0 - post)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    """Affine map plus activation; weight is (out, in), bias is (out,)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    spectral_norm: bool = False
    power_vec: np.ndarray | None = None  # cached unit vector for power iteration, shape (in,)

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.spectral_norm and self.power_vec is None:
            # deterministic non-degenerate start; updated by spectral_normalize
            v = np.ones(self.weight.shape[1])
            self.power_vec = v / np.linalg.norm(v)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def dense_layer(
    in_dim: int,
    out_dim: int,
    activation: str = "identity",
    spectral_norm: bool = False,
    rng: np.random.Generator | None = None,
) -> DenseLayer:
    """Build a layer with Glorot-style random init (zeros if no rng given)."""
    if rng is None:
        weight = np.zeros((out_dim, in_dim))
    else:
        std = np.sqrt(2.0 / (in_dim + out_dim))
        weight = rng.normal(0.0, std, size=(out_dim, in_dim))
    layer = DenseLayer(weight, np.zeros(out_dim), activation, spectral_norm)
    if spectral_norm and rng is not None:
        v = rng.normal(size=in_dim)
        layer.power_vec = v / np.linalg.norm(v)
    return layer


def estimated_sigma(layer: DenseLayer) -> float:
    """sigma_hat = ||W v|| with the currently cached vector; 0 for a zero matrix."""
    if layer.power_vec is None:
        raise ValueError("layer has no cached power-iteration vector")
    return float(np.linalg.norm(layer.weight @ layer.power_vec))


def spectral_normalize(layer: DenseLayer, n_iters: int = 1) -> float:
    """Update the cached vector by power iteration on W^T W; return sigma_hat.

    A zero weight matrix yields sigma_hat = 0 and normalization is skipped
    in forward passes.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if layer.power_vec is None:
        v = np.ones(layer.in_dim)
        layer.power_vec = v / np.linalg.norm(v)
    v = layer.power_vec
    for _ in range(n_iters):
        w = layer.weight.T @ (layer.weight @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
    layer.power_vec = v
    return estimated_sigma(layer)


def effective_weight(layer: DenseLayer) -> tuple[np.ndarray, float]:
    """Weight actually used in the forward pass and the sigma it was divided by.

    Returns (W, 0.0) when normalization is off or the matrix is zero.
    """
    if not layer.spectral_norm:
        return layer.weight, 0.0
    sigma = estimated_sigma(layer)
    if sigma == 0.0:
        return layer.weight, 0.0
    return layer.weight / sigma, sigma


@dataclass
class Mlp:
    """Stack of dense layers with a scalar gain applied to the input.

    input_scale realizes a K-Lipschitz map as K times a normalized stack.
    """

    layers: list[DenseLayer]
    input_scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        if self.input_scale <= 0.0:
            raise ValueError("input_scale must be positive")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


def build_mlp(
    dims: Sequence[int],
    activation: str,
    output_activation: str,
    rng: np.random.Generator,
    spectral_norm: bool = False,
    input_scale: float = 1.0,
) -> Mlp:
    """MLP over the dim chain dims[0] -> ... -> dims[-1]."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    layers = []
    for i in range(len(dims) - 1):
        act = output_activation if i == len(dims) - 2 else activation
        layers.append(dense_layer(dims[i], dims[i + 1], act, spectral_norm, rng))
    return Mlp(layers, input_scale=input_scale)


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, consumed by mlp_backward."""

    scaled_input: np.ndarray
    preacts: list[np.ndarray] = field(default_factory=list)
    posts: list[np.ndarray] = field(default_factory=list)
    eff_weights: list[np.ndarray] = field(default_factory=list)
    sigmas: list[float] = field(default_factory=list)


def _check_batch(net: Mlp, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.in_dim:
        raise ValueError(
            f"batch shape {batch.shape} does not match network input dim {net.in_dim}"
        )
    return batch


def mlp_forward_cached(net: Mlp, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    batch = _check_batch(net, batch)
    x = batch * net.input_scale
    cache = ForwardCache(scaled_input=x)
    for layer in net.layers:
        w_eff, sigma = effective_weight(layer)
        pre = x @ w_eff.T + layer.bias
        post = _apply_activation(layer.activation, pre)
        cache.preacts.append(pre)
        cache.posts.append(post)
        cache.eff_weights.append(w_eff)
        cache.sigmas.append(sigma)
        x = post
    return x, cache


def mlp_forward(net: Mlp, batch: np.ndarray) -> np.ndarray:
    out, _ = mlp_forward_cached(net, batch)
    return out


@dataclass
class LayerGrads:
    weight: np.ndarray
    bias: np.ndarray


def mlp_backward(
    net: Mlp, cache: ForwardCache, upstream: np.ndarray
) -> tuple[list[LayerGrads], np.ndarray]:
    """Exact gradients of the cached forward pass against an upstream cotangent.

    Returns per-layer parameter gradients and the gradient w.r.t. the raw
    (unscaled) input batch. Differentiation goes through the spectral
    normalization with the cached power vector held fixed.
    """
    if cache is None:
        raise ValueError("mlp_backward needs the cache from mlp_forward_cached")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.posts[-1].shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match output shape "
            f"{cache.posts[-1].shape}"
        )
    grads: list[LayerGrads] = [None] * len(net.layers)  # type: ignore[list-item]
    g = upstream
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        g_pre = g * _activation_derivative(
            layer.activation, cache.preacts[i], cache.posts[i]
        )
        layer_in = cache.scaled_input if i == 0 else cache.posts[i - 1]
        d_eff = g_pre.T @ layer_in
        db = g_pre.sum(axis=0)
        sigma = cache.sigmas[i]
        if layer.spectral_norm and sigma > 0.0:
            # W_eff = W / sigma, sigma = ||W v|| with v fixed, so
            # dsigma/dW = u v^T with u = W v / sigma.
            u = layer.weight @ layer.power_vec / sigma
            coeff = float(np.sum(d_eff * cache.eff_weights[i]))
            dw = (d_eff - coeff * np.outer(u, layer.power_vec)) / sigma
        else:
            dw = d_eff
        grads[i] = LayerGrads(weight=dw, bias=db)
        g = g_pre @ cache.eff_weights[i]
    return grads, g * net.input_scale


def mlp_params(net: Mlp) -> list[tuple[str, np.ndarray]]:
    """Named parameter arrays in a stable order (views, not copies)."""
    out = []
    for i, layer in enumerate(net.layers):
        out.append((f"layers[{i}].weight", layer.weight))
        out.append((f"layers[{i}].bias", layer.bias))
    return out


def grads_as_list(grads: list[LayerGrads]) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for g in grads:
        out.append(g.weight)
        out.append(g.bias)
    return out


def flatten_params(net: Mlp) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in mlp_params(net)])


def set_params(net: Mlp, flat: np.ndarray) -> None:
    """Write a flat vector back into the network parameters in place."""
    offset = 0
    for _, arr in mlp_params(net):
        n = arr.size
        arr[...] = flat[offset : offset + n].reshape(arr.shape)
        offset += n
    if offset != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, expected {offset}")


def flatten_grads(grads: list[LayerGrads]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in grads_as_list(grads)])


def lipschitz_product_bound(net: Mlp, include_activations: bool = True) -> float:
    """Upper bound on the network's Lipschitz constant.

    Product of input_scale, exact per-layer operator norms of the effective
    weights (SVD, not the power-iteration estimate), and optionally the
    activation constants.
    """
    bound = net.input_scale
    for layer in net.layers:
        w_eff, _ = effective_weight(layer)
        bound *= float(np.linalg.svd(w_eff, compute_uv=False)[0]) if w_eff.any() else 0.0
        if include_activations:
            bound *= ACTIVATION_LIPSCHITZ[layer.activation]
    return bound


def empirical_lipschitz(
    net: Mlp, points: np.ndarray, rng: np.random.Generator, n_pairs: int = 2000
) -> float:
    """Largest observed |f(a)-f(b)| / |a-b| over random point pairs."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    ia = rng.integers(0, n, size=n_pairs)
    ib = rng.integers(0, n, size=n_pairs)
    keep = ia != ib
    ia, ib = ia[keep], ib[keep]
    fa = mlp_forward(net, points[ia])
    fb = mlp_forward(net, points[ib])
    num = np.linalg.norm(fa - fb, axis=1)
    den = np.linalg.norm(points[ia] - points[ib], axis=1)
    ok = den > 0.0
    return float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0
