"""Conditional generator trained by minimizing the debiased Sinkhorn divergence.

The generator maps (uniform noise, condition code) to a data code. Training
compares joint batches: real pairs drawn straight from the latent pair set,
fake pairs built from resampled conditions plus generated codes. Gradients
reach the generator only through the generated block of the joint vectors;
the identical condition columns anchor the coupling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lvae import AEModel
from .nncore.layers import Mlp, build_mlp, flatten_grads, mlp_backward, mlp_forward, mlp_forward_cached, mlp_params
from .nncore.optim import adam_init, adam_step
from .scaling import MinMaxNorm
from .sinkhorn import SinkhornConfig, sinkhorn_grad


@dataclass
class Generator:
    """Conditional map (u, z_y) -> z_x with uniform [0,1]^dim_u noise."""

    net: Mlp
    dim_u: int
    dim_cond: int

    def __post_init__(self) -> None:
        if self.net.in_dim != self.dim_u + self.dim_cond:
            raise ValueError(
                f"net input dim {self.net.in_dim} != dim_u {self.dim_u} + dim_cond {self.dim_cond}"
            )

    @property
    def dim_out(self) -> int:
        return self.net.out_dim


def sample_noise(n: int, dim_u: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((n, dim_u))


def generator_forward(gen: Generator, u: np.ndarray, z_y: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    z_y = np.asarray(z_y, dtype=np.float64)
    if u.shape[0] != z_y.shape[0]:
        raise ValueError(f"row counts differ: {u.shape[0]} vs {z_y.shape[0]}")
    if u.shape[1] != gen.dim_u or z_y.shape[1] != gen.dim_cond:
        raise ValueError(
            f"expected dims ({gen.dim_u}, {gen.dim_cond}), got ({u.shape[1]}, {z_y.shape[1]})"
        )
    return mlp_forward(gen.net, np.hstack([u, z_y]))


@dataclass
class LatentPairSet:
    """Row-aligned data/condition codes with provenance ids."""

    z_x: np.ndarray
    z_y: np.ndarray
    ids: np.ndarray

    def __post_init__(self) -> None:
        self.z_x = np.asarray(self.z_x, dtype=np.float64)
        self.z_y = np.asarray(self.z_y, dtype=np.float64)
        self.ids = np.asarray(self.ids)
        if not (self.z_x.shape[0] == self.z_y.shape[0] == self.ids.shape[0]):
            raise ValueError("z_x, z_y and ids must have equal row counts")

    @property
    def n(self) -> int:
        return self.z_x.shape[0]


def sample_joint_real(
    pairs: LatentPairSet, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform sample of joint rows without replacement; returns (z_x, z_y, ids)."""
    if n > pairs.n:
        raise ValueError(f"requested {n} rows from a set of {pairs.n}")
    rows = rng.choice(pairs.n, size=n, replace=False)
    return pairs.z_x[rows], pairs.z_y[rows], pairs.ids[rows]


def sample_joint_fake(
    gen: Generator, pairs: LatentPairSet, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Conditions resampled from the pair set, codes generated from fresh noise."""
    if n > pairs.n:
        raise ValueError(f"requested {n} rows from a set of {pairs.n}")
    rows = rng.choice(pairs.n, size=n, replace=False)
    z_y = pairs.z_y[rows]
    u = sample_noise(n, gen.dim_u, rng)
    return generator_forward(gen, u, z_y), z_y, pairs.ids[rows], u


@dataclass
class CsganConfig:
    rho: float
    cost: str = "half_sq_l2"
    epochs: int = 2000
    batch_size: int = 128
    learning_rate: float = 1e-4
    seed: int = 0
    condition_weight: float = 1.0  # scales the condition block inside the joint cost
    hidden: tuple[int, ...] = (512, 512, 64)
    dim_u: int | None = None  # None: match the data-side code dimension
    activation: str = "leaky_relu"
    stop_tol: float = 1e-6
    max_iters: int = 500
    max_nonconverged_frac: float = 0.1

    def __post_init__(self) -> None:
        if self.rho <= 0.0:
            raise ValueError("rho must be positive")


@dataclass
class CsganTrainRecord:
    divergence: list[float] = field(default_factory=list)  # per-epoch mean S_rho
    nonconverged_steps: int = 0
    total_steps: int = 0


def new_generator(dim_x: int, dim_y: int, cfg: CsganConfig, rng: np.random.Generator) -> Generator:
    dim_u = dim_x if cfg.dim_u is None else cfg.dim_u
    net = build_mlp([dim_u + dim_y, *cfg.hidden, dim_x], cfg.activation, "identity", rng)
    return Generator(net, dim_u, dim_y)


def train_csgan(
    pairs: LatentPairSet, cfg: CsganConfig, gen: Generator | None = None
) -> tuple[Generator, CsganTrainRecord]:
    """Minimize the joint-batch Sinkhorn divergence over the generator.

    Each step draws equal-size real and fake joint batches (both without
    replacement within an epoch), evaluates S_rho on the concatenated
    (z_x, w*z_y) vectors and backpropagates through the generated block
    only. Aborts when more than max_nonconverged_frac of the solves fail
    to converge.
    """
    rng = np.random.default_rng(cfg.seed)
    if gen is None:
        gen = new_generator(pairs.z_x.shape[1], pairs.z_y.shape[1], cfg, rng)
    dx = gen.dim_out
    w = cfg.condition_weight

    params = [p for _, p in mlp_params(gen.net)]
    names = [n for n, _ in mlp_params(gen.net)]
    adam = adam_init(params, learning_rate=cfg.learning_rate)
    sk = SinkhornConfig(
        rho=cfg.rho, max_iters=cfg.max_iters, stop_tol=cfg.stop_tol, cost=cfg.cost
    )

    record = CsganTrainRecord()
    n = pairs.n
    bs = min(cfg.batch_size, n)
    uniform = np.full(bs, 1.0 / bs)
    for _ in range(cfg.epochs):
        real_order = rng.permutation(n)
        fake_order = rng.permutation(n)
        ep_div, n_batches = 0.0, 0
        for start in range(0, n - bs + 1, bs):
            real_rows = real_order[start : start + bs]
            fake_rows = fake_order[start : start + bs]
            u = sample_noise(bs, gen.dim_u, rng)
            z_y_fake = pairs.z_y[fake_rows]
            z_x_fake, cache = mlp_forward_cached(gen.net, np.hstack([u, z_y_fake]))

            real = np.hstack([pairs.z_x[real_rows], w * pairs.z_y[real_rows]])
            fake = np.hstack([z_x_fake, w * z_y_fake])
            res = sinkhorn_grad(real, fake, uniform, uniform, sk)

            record.total_steps += 1
            if not res.converged:
                record.nonconverged_steps += 1
                if (
                    record.total_steps >= 20
                    and record.nonconverged_steps
                    > cfg.max_nonconverged_frac * record.total_steps
                ):
                    raise RuntimeError(
                        "Sinkhorn failed to converge in "
                        f"{record.nonconverged_steps}/{record.total_steps} steps "
                        f"(rho={cfg.rho}, stop_tol={cfg.stop_tol}, max_iters={cfg.max_iters})"
                    )

            grads, _ = mlp_backward(gen.net, cache, res.grad[:, :dx])
            adam_step(adam, params, flatten_grads_list(grads), names)
            ep_div += res.value
            n_batches += 1
        record.divergence.append(ep_div / max(n_batches, 1))
    return gen, record


def flatten_grads_list(grads) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for g in grads:
        out.append(g.weight)
        out.append(g.bias)
    return out


@dataclass
class LatentCodec:
    """Normalization plus optional autoencoder; None model = identity codec."""

    norm: MinMaxNorm
    model: AEModel | None = None

    @property
    def dim(self) -> int:
        if self.model is None:
            return self.norm.lo.size
        if self.model.kept_indices is None:
            return self.model.latent_dim
        return int(self.model.kept_indices.size)

    def encode(self, raw: np.ndarray) -> np.ndarray:
        normed = self.norm.apply(np.asarray(raw, dtype=np.float64))
        if self.model is None:
            return normed
        if self.model.kept_indices is None:
            return self.model.encode(normed)
        return self.model.encode_kept(normed)

    def decode(self, z: np.ndarray) -> np.ndarray:
        if self.model is None:
            return self.norm.invert(z)
        if self.model.kept_indices is None:
            return self.norm.invert(self.model.decode(z))
        return self.norm.invert(self.model.decode_kept(z))


@dataclass
class PosteriorSampler:
    """Bundle realizing raw condition -> raw posterior samples."""

    cond: LatentCodec
    gen: Generator
    data: LatentCodec


def posterior_sample(
    y_raw: np.ndarray, n: int, models: PosteriorSampler, rng: np.random.Generator
) -> np.ndarray:
    """Draw n raw-space posterior samples for a single raw condition.

    The condition is encoded once (pruned coordinates fixed to their means);
    all variation comes from the latent noise.
    """
    y_raw = np.asarray(y_raw, dtype=np.float64)
    if not np.all(np.isfinite(y_raw)):
        raise ValueError("condition contains non-finite entries")
    z_y = models.cond.encode(y_raw.reshape(1, -1))
    if n == 0:
        return np.zeros((0, models.data.norm.lo.size))
    u = sample_noise(n, models.gen.dim_u, rng)
    z_x = generator_forward(models.gen, u, np.repeat(z_y, n, axis=0))
    return models.data.decode(z_x)


def posterior_sample_latent(
    y_raw: np.ndarray, n: int, models: PosteriorSampler, rng: np.random.Generator
) -> np.ndarray:
    """Same as posterior_sample but returns the generated codes, undecoded."""
    y_raw = np.asarray(y_raw, dtype=np.float64)
    if not np.all(np.isfinite(y_raw)):
        raise ValueError("condition contains non-finite entries")
    z_y = models.cond.encode(y_raw.reshape(1, -1))
    if n == 0:
        return np.zeros((0, models.gen.dim_out))
    u = sample_noise(n, models.gen.dim_u, rng)
    return generator_forward(models.gen, u, np.repeat(z_y, n, axis=0))
