"""Volume-regularized autoencoder with latent pruning.

The training objective is mean per-sample l2 reconstruction error plus
lambda times the geometric mean of (per-dimension latent std + eta),
computed over the batch. The decoder is a spectral-normalized stack behind
a fixed input gain, so its Lipschitz constant is bounded and latent
dimensions with vanishing spread can be replaced by their means at a
bounded reconstruction cost.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nncore.layers import (
    LayerGrads,
    Mlp,
    build_mlp,
    empirical_lipschitz,
    flatten_grads,
    lipschitz_product_bound,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_params,
    spectral_normalize,
)
from .nncore.optim import adam_init, adam_step
from .nncore.checkpoint import load_mlp, save_mlp


@dataclass
class AEModel:
    """Encoder/decoder pair plus latent statistics and pruning state."""

    encoder: Mlp
    decoder: Mlp
    latent_means: np.ndarray
    latent_stds: np.ndarray
    kept_indices: np.ndarray | None = None

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim

    def encode(self, X: np.ndarray) -> np.ndarray:
        return mlp_forward(self.encoder, X)

    def decode(self, Z: np.ndarray) -> np.ndarray:
        return mlp_forward(self.decoder, Z)

    def encode_pruned(self, X: np.ndarray) -> np.ndarray:
        """Encode and replace non-kept coordinates by their dataset means."""
        Z = self.encode(X)
        if self.kept_indices is None:
            return Z
        dropped = np.setdiff1d(np.arange(self.latent_dim), self.kept_indices)
        Z[:, dropped] = self.latent_means[dropped]
        return Z

    def encode_kept(self, X: np.ndarray) -> np.ndarray:
        """Encoded coordinates restricted to the kept dimensions."""
        if self.kept_indices is None:
            raise ValueError("prune has not run; no kept_indices")
        return self.encode(X)[:, self.kept_indices]

    def decode_kept(self, Zk: np.ndarray) -> np.ndarray:
        """Decode kept-coordinate codes, filling pruned dims with their means."""
        if self.kept_indices is None:
            raise ValueError("prune has not run; no kept_indices")
        Z = np.tile(self.latent_means, (Zk.shape[0], 1))
        Z[:, self.kept_indices] = Zk
        return self.decode(Z)


@dataclass
class LvConfig:
    """Training configuration; lipschitz_scale is the decoder input gain K."""

    latent_dim: int
    encoder_hidden: tuple[int, ...] = (128, 64)
    decoder_hidden: tuple[int, ...] = (64, 128)
    eta: float = 0.004
    lambda_final: float = 0.2
    ramp_epochs: int | None = None  # None: ramp over all epochs
    epochs: int = 2000
    batch_size: int = 50
    learning_rate: float = 1e-4
    seed: int = 0
    lipschitz_scale: float = 1.0
    activation: str = "leaky_relu"
    output_activation: str = "sigmoid"

    def __post_init__(self) -> None:
        if self.eta < 0.0:
            raise ValueError("eta must be nonnegative")
        if self.lambda_final < 0.0:
            raise ValueError("lambda_final must be nonnegative")
        ramp = self.epochs if self.ramp_epochs is None else self.ramp_epochs
        if ramp > self.epochs:
            raise ValueError("ramp length must not exceed epochs")


@dataclass
class TrainRecord:
    objective: list[float] = field(default_factory=list)
    recon: list[float] = field(default_factory=list)
    volume: list[float] = field(default_factory=list)
    lambdas: list[float] = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    """Objective went non-finite; carries the last finite model snapshot."""

    def __init__(self, step: int, model: AEModel):
        super().__init__(f"objective became non-finite at step {step}")
        self.step = step
        self.model = model


def latent_std(Z: np.ndarray) -> np.ndarray:
    """Per-dimension population standard deviation of the codes."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ValueError("need at least two samples to estimate latent stds")
    return Z.std(axis=0)


def volume_loss(sigma: np.ndarray, eta: float) -> float:
    """Geometric mean of (sigma_i + eta), via exp(mean(log))."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0.0) or eta < 0.0:
        raise ValueError("sigma entries and eta must be nonnegative")
    shifted = sigma + eta
    if np.any(shifted == 0.0):
        return 0.0
    return float(np.exp(np.mean(np.log(shifted))))


def _volume_grad_wrt_sigma(sigma: np.ndarray, eta: float) -> np.ndarray:
    # dV/dsigma_i = V / (L * (sigma_i + eta)); flat 0 where the product vanished
    v = volume_loss(sigma, eta)
    if v == 0.0:
        return np.zeros_like(sigma)
    return v / (sigma.size * (sigma + eta))


def lvae_objective(
    batch: np.ndarray, model: AEModel, lam: float, eta: float
) -> tuple[float, list[LayerGrads], list[LayerGrads], tuple[float, float]]:
    """Objective value and parameter gradients on one batch.

    Returns (loss, encoder grads, decoder grads, (recon part, volume part)).
    Gradients flow through the reconstruction and, via the batch statistics,
    through the latent spread term. A batch of one skips the volume term.
    """
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("batch must be a nonempty 2-D array")
    n = X.shape[0]

    Z, enc_cache = mlp_forward_cached(model.encoder, X)
    Xhat, dec_cache = mlp_forward_cached(model.decoder, Z)

    R = Xhat - X
    norms = np.linalg.norm(R, axis=1)
    recon = float(norms.mean())
    safe = np.where(norms > 0.0, norms, 1.0)
    g_xhat = R / (n * safe[:, None])
    g_xhat[norms == 0.0] = 0.0

    dec_grads, g_z = mlp_backward(model.decoder, dec_cache, g_xhat)

    vol = 0.0
    if lam != 0.0 and n >= 2:
        zbar = Z.mean(axis=0)
        sigma = Z.std(axis=0)
        vol = volume_loss(sigma, eta)
        dv_dsigma = _volume_grad_wrt_sigma(sigma, eta)
        # dsigma_d/dz_id = (z_id - zbar_d) / (n * sigma_d); flat where sigma_d = 0
        with np.errstate(invalid="ignore", divide="ignore"):
            dsigma_dz = np.where(sigma > 0.0, (Z - zbar) / (n * sigma), 0.0)
        g_z = g_z + lam * dv_dsigma * dsigma_dz

    enc_grads, _ = mlp_backward(model.encoder, enc_cache, g_z)
    loss = recon + lam * vol
    return loss, enc_grads, dec_grads, (recon, vol)


def new_model(data_dim: int, cfg: LvConfig, rng: np.random.Generator) -> AEModel:
    encoder = build_mlp(
        [data_dim, *cfg.encoder_hidden, cfg.latent_dim],
        cfg.activation,
        "identity",
        rng,
    )
    decoder = build_mlp(
        [cfg.latent_dim, *cfg.decoder_hidden, data_dim],
        cfg.activation,
        cfg.output_activation,
        rng,
        spectral_norm=True,
        input_scale=cfg.lipschitz_scale,
    )
    return AEModel(encoder, decoder, np.zeros(cfg.latent_dim), np.zeros(cfg.latent_dim))


def _snapshot(model: AEModel) -> AEModel:
    return copy.deepcopy(model)


def refresh_statistics(model: AEModel, dataset: np.ndarray) -> None:
    Z = model.encode(dataset)
    model.latent_means = Z.mean(axis=0)
    model.latent_stds = latent_std(Z)


def train_lvae(
    dataset: np.ndarray, cfg: LvConfig, model: AEModel | None = None
) -> tuple[AEModel, TrainRecord]:
    """Adam training with a linear lambda ramp and per-step power iteration.

    The dataset is expected feature-normalized (outputs live in the output
    activation's range). Latent statistics are recomputed over the full
    dataset at the end.
    """
    X = np.asarray(dataset, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = new_model(X.shape[1], cfg, rng)

    names = [f"encoder.{n}" for n, _ in mlp_params(model.encoder)] + [
        f"decoder.{n}" for n, _ in mlp_params(model.decoder)
    ]
    params = [p for _, p in mlp_params(model.encoder)] + [
        p for _, p in mlp_params(model.decoder)
    ]
    adam = adam_init(params, learning_rate=cfg.learning_rate)

    record = TrainRecord()
    ramp = cfg.epochs if cfg.ramp_epochs is None else cfg.ramp_epochs
    last_good = _snapshot(model)
    step = 0
    for epoch in range(cfg.epochs):
        if ramp <= 1:
            lam = cfg.lambda_final
        else:
            lam = cfg.lambda_final * min(1.0, epoch / (ramp - 1))
        order = rng.permutation(X.shape[0])
        ep_obj = ep_rec = ep_vol = 0.0
        n_batches = 0
        for start in range(0, X.shape[0], cfg.batch_size):
            batch = X[order[start : start + cfg.batch_size]]
            for layer in model.decoder.layers:
                spectral_normalize(layer, 1)
            loss, enc_g, dec_g, (rec, vol) = lvae_objective(batch, model, lam, cfg.eta)
            if not np.isfinite(loss):
                raise TrainingDiverged(step, last_good)
            grads = flatten_list(enc_g) + flatten_list(dec_g)
            adam_step(adam, params, grads, names)
            ep_obj += loss
            ep_rec += rec
            ep_vol += vol
            n_batches += 1
            step += 1
            if step % 200 == 0:
                last_good = _snapshot(model)
        record.objective.append(ep_obj / n_batches)
        record.recon.append(ep_rec / n_batches)
        record.volume.append(ep_vol / n_batches)
        record.lambdas.append(lam)

    # tighten the sigma estimates before freezing evaluation-time behavior
    for layer in model.decoder.layers:
        spectral_normalize(layer, 50)
    refresh_statistics(model, X)
    return model, record


def flatten_list(grads: list[LayerGrads]) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for g in grads:
        out.append(g.weight)
        out.append(g.bias)
    return out


def reconstruction_errors(
    model: AEModel, X: np.ndarray, replace: np.ndarray | None = None
) -> np.ndarray:
    """Per-sample l2 reconstruction error, optionally with dims replaced by means."""
    Z = model.encode(X)
    if replace is not None and replace.size:
        Z[:, replace] = model.latent_means[replace]
    Xhat = model.decode(Z)
    return np.linalg.norm(Xhat - X, axis=1)


@dataclass
class PruneReport:
    sigmas: np.ndarray
    order: np.ndarray
    kept_indices: np.ndarray
    pruned_indices: np.ndarray
    baseline_error: float
    final_error: float
    delta: float
    lipschitz_bound: float
    errors_per_step: list[float]

    def to_json(self) -> dict:
        return {
            "sigma_sorted": [
                [int(i), float(self.sigmas[i])] for i in self.order
            ],
            "kept_indices": [int(i) for i in self.kept_indices],
            "pruned_indices": [int(i) for i in self.pruned_indices],
            "baseline_error": self.baseline_error,
            "post_prune_error": self.final_error,
            "delta": self.delta,
            "delta_semantics": "relative increase over unpruned baseline",
            "lipschitz_bound": self.lipschitz_bound,
            "errors_per_step": self.errors_per_step,
        }


def prune(model: AEModel, dataset: np.ndarray, delta: float) -> tuple[AEModel, PruneReport]:
    """Greedily replace low-spread latent dims by their means.

    Dims are tried in ascending sigma (ties by ascending index); pruning
    stops before the mean reconstruction error would exceed
    (1 + delta) * baseline. Statistics are recomputed over the dataset
    before any prune.
    """
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    X = np.asarray(dataset, dtype=np.float64)
    model = _snapshot(model)
    refresh_statistics(model, X)

    baseline = float(reconstruction_errors(model, X).mean())
    limit = (1.0 + delta) * baseline
    order = np.argsort(model.latent_stds, kind="stable")

    pruned: list[int] = []
    errors: list[float] = []
    for idx in order:
        trial = np.array(pruned + [int(idx)], dtype=int)
        err = float(reconstruction_errors(model, X, replace=trial).mean())
        if err > limit:
            break
        pruned.append(int(idx))
        errors.append(err)

    pruned_arr = np.array(sorted(pruned), dtype=int)
    kept = np.setdiff1d(np.arange(model.latent_dim), pruned_arr)
    model.kept_indices = kept
    final_error = errors[-1] if errors else baseline
    report = PruneReport(
        sigmas=model.latent_stds.copy(),
        order=order,
        kept_indices=kept,
        pruned_indices=pruned_arr,
        baseline_error=baseline,
        final_error=final_error,
        delta=delta,
        lipschitz_bound=lipschitz_product_bound(model.decoder),
        errors_per_step=errors,
    )
    return model, report


def dimension_estimate(model: AEModel) -> int:
    """Number of latent dimensions surviving the prune."""
    if model.kept_indices is None:
        raise ValueError("prune has not run")
    return int(model.kept_indices.size)


@dataclass
class PcaResult:
    mean: np.ndarray
    components: np.ndarray  # (k, D)
    singular_values: np.ndarray
    errors: np.ndarray  # per-sample l2 reconstruction error


def pca_fit(dataset: np.ndarray, k: int) -> PcaResult:
    """Centered SVD baseline with top-k components."""
    X = np.asarray(dataset, dtype=np.float64)
    n, d = X.shape
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} out of range for data {X.shape}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:k]
    proj = Xc @ comps.T @ comps
    errors = np.linalg.norm(Xc - proj, axis=1)
    return PcaResult(mean, comps, svals, errors)


def save_ae(directory: str | Path, model: AEModel, extra: dict | None = None) -> None:
    directory = Path(directory)
    save_mlp(directory / "encoder", model.encoder)
    save_mlp(directory / "decoder", model.decoder)
    meta = {
        "latent_means": model.latent_means.tolist(),
        "latent_stds": model.latent_stds.tolist(),
        "kept_indices": None
        if model.kept_indices is None
        else [int(i) for i in model.kept_indices],
    }
    if extra:
        meta["extra"] = extra
    (directory / "ae.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_ae(directory: str | Path) -> AEModel:
    directory = Path(directory)
    encoder, _ = load_mlp(directory / "encoder")
    decoder, _ = load_mlp(directory / "decoder")
    meta = json.loads((directory / "ae.json").read_text())
    kept = meta["kept_indices"]
    return AEModel(
        encoder,
        decoder,
        np.asarray(meta["latent_means"], dtype=np.float64),
        np.asarray(meta["latent_stds"], dtype=np.float64),
        None if kept is None else np.asarray(kept, dtype=int),
    )


__all__ = [
    "AEModel",
    "LvConfig",
    "PcaResult",
    "PruneReport",
    "TrainRecord",
    "TrainingDiverged",
    "dimension_estimate",
    "empirical_lipschitz",
    "latent_std",
    "lipschitz_product_bound",
    "load_ae",
    "lvae_objective",
    "new_model",
    "pca_fit",
    "prune",
    "reconstruction_errors",
    "refresh_statistics",
    "save_ae",
    "train_lvae",
    "volume_loss",
]
