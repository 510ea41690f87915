"""Stage-based experiment pipeline with content-hash caching.

Stages run in dependency order: generate -> train-lvae -> prune ->
train-csgan -> sample-posterior -> metrics -> entropy. Each stage hashes
its config section and input files into a manifest; a rerun whose hashes
match existing outputs is a no-op. All randomness is derived from the
config seed plus fixed per-stage offsets, so identical config and seed
reproduce identical bytes.

Config is a JSON document; see the repository README for the schema.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .. import ko
from ..csgan import (
    CsganConfig,
    Generator,
    LatentCodec,
    LatentPairSet,
    PosteriorSampler,
    posterior_sample,
    posterior_sample_latent,
    train_csgan,
)
from ..knn_entropy import EntropySpec, entropy_report, write_entropy_csv
from ..lvae import AEModel, LvConfig, load_ae, prune, save_ae, train_lvae
from ..nncore.checkpoint import load_mlp, save_mlp
from ..reservoir import (
    FluidParams,
    ReservoirGrid,
    build_kl_basis,
    simulate_batch,
    standard_wells,
)
from ..scaling import MinMaxNorm
from . import metrics as mx
from .arrayio import config_hash, load_array, read_json, save_array, sha256_file, write_json

STAGES = (
    "generate",
    "train-lvae",
    "prune",
    "train-csgan",
    "sample-posterior",
    "metrics",
    "entropy",
)

_STAGE_OFFSET = {name: i + 1 for i, name in enumerate(STAGES)}


class PipelineError(RuntimeError):
    pass


def _sub_seed(seed: int, stage: str, index: int = 0) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STAGE_OFFSET[stage], index))
    return int(ss.generate_state(1)[0])


def _stage_rng(seed: int, stage: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(_sub_seed(seed, stage, index))


# ------------------------------------------------------------------ caching


def _manifest_path(out: Path, stage: str) -> Path:
    return out / ".stages" / f"{stage}.json"


def _hash_files(paths: list[Path]) -> dict:
    return {str(p): sha256_file(p) for p in sorted(set(paths)) if p.is_file()}


def _tree_files(root: Path) -> list[Path]:
    return [p for p in sorted(root.rglob("*")) if p.is_file()] if root.exists() else []


def _stage_fresh(out: Path, stage: str, cfg_digest: str, inputs: list[Path]) -> bool:
    mpath = _manifest_path(out, stage)
    if not mpath.is_file():
        return False
    manifest = read_json(mpath)
    if manifest.get("config_hash") != cfg_digest:
        return False
    if manifest.get("inputs") != _hash_files(inputs):
        return False
    for path, digest in manifest.get("outputs", {}).items():
        p = Path(path)
        if not p.is_file() or sha256_file(p) != digest:
            return False
    return True


def _write_manifest(
    out: Path, stage: str, cfg_digest: str, inputs: list[Path], outputs: list[Path]
) -> None:
    mpath = _manifest_path(out, stage)
    mpath.parent.mkdir(parents=True, exist_ok=True)
    write_json(
        mpath,
        {
            "config_hash": cfg_digest,
            "inputs": _hash_files(inputs),
            "outputs": _hash_files(outputs),
        },
    )


# ------------------------------------------------------------------ dataset


def _dataset_dir(out: Path) -> Path:
    return out / "dataset"


def _generate_ko(config: dict, out: Path) -> list[Path]:
    block = config.get("generate", {})
    seed = config["seed"]
    rng = _stage_rng(seed, "generate")
    n = block.get("n_samples", 2048)
    ds = ko.build_ko_dataset(
        n,
        rng,
        dt=block.get("dt", 0.003),
        t_end=block.get("t_end", 30.0),
        n_points=block.get("n_points", 256),
        n_train=block.get("n_train"),
    )
    d = _dataset_dir(out)
    outputs = [
        save_array(d / "xi", ds.xi, {"columns": ["xi1", "xi2"]}),
        save_array(d / "y1", ds.y1, ds.meta),
    ]
    data = {
        "experiment": "ko",
        "seed": seed,
        "n_samples": n,
        "n_train": int(ds.train_ids.size),
        "sources": {
            "xi": ds.norm_xi.to_json(),
            "y1": ds.norm_y1.to_json(),
        },
        "meta": ds.meta,
    }
    write_json(d / "data.json", data)
    outputs.append(d / "data.json")
    outputs.extend([d / "xi.json", d / "y1.json"])
    return outputs


def _generate_reservoir(config: dict, out: Path) -> list[Path]:
    block = config.get("generate", {})
    seed = config["seed"]
    rng = _stage_rng(seed, "generate")
    grid = ReservoirGrid(nx=block.get("nx", 16), ny=block.get("ny", 28))
    n_modes = block.get("n_modes", 20)
    basis = build_kl_basis(
        grid,
        sigma=block.get("sigma", 1.0),
        corr_len=block.get("corr_len_frac", 0.3) * grid.Ly,
        n_modes=n_modes,
    )
    wells = standard_wells(grid)
    fluid = FluidParams()
    n = block.get("n_samples", 200)
    Xi = rng.standard_normal((n, n_modes))
    batch = simulate_batch(
        basis, Xi, grid, wells, fluid, block.get("t_end", 20.0), block.get("n_report", 100)
    )
    n_train = block.get("n_train", max(1, int(round(n * 0.8))))
    train = np.arange(n_train)

    d = _dataset_dir(out)
    outputs = []
    for name in ("G", "S", "f", "xi"):
        outputs.append(save_array(d / name, batch[name]))
        outputs.append(d / f"{name}.json")

    n_report = batch["f"].shape[2]
    sources: dict[str, dict] = {}
    sources["G"] = MinMaxNorm.fit(batch["G"][train].reshape(n_train, -1)).to_json()
    s_clip = np.clip(batch["S"][train].reshape(n_train, -1), 0.2, 0.8)
    sources["S"] = MinMaxNorm.fit(s_clip).to_json()
    for j in range(1, batch["f"].shape[1] + 1):
        fj = batch["f"][train, :j, :].reshape(n_train, -1)
        sources[f"f:{j}"] = MinMaxNorm.fit(fj).to_json()

    data = {
        "experiment": "reservoir",
        "seed": seed,
        "n_samples": n,
        "n_train": int(n_train),
        "grid": {"nx": grid.nx, "ny": grid.ny, "Lx": grid.Lx, "Ly": grid.Ly,
                 "porosity": grid.porosity},
        "wells": [{"ix": w.ix, "iy": w.iy, "rate": w.rate} for w in wells],
        "fluid": {"mu_w": fluid.mu_w, "mu_o": fluid.mu_o, "s_wc": fluid.s_wc,
                  "s_or": fluid.s_or},
        "kl": {
            "sigma": basis.sigma,
            "corr_len": basis.corr_len,
            "gamma": basis.gamma,
            "kappa0": basis.kappa0,
            "n_modes": basis.n_modes,
            "eigenvalues": basis.eigenvalues.tolist(),
        },
        "t_end": block.get("t_end", 20.0),
        "n_report": n_report,
        "sources": sources,
        "meta": {
            "diagnostics": {k: v.tolist() for k, v in batch["diagnostics"].items()}
        },
    }
    write_json(d / "data.json", data)
    outputs.append(d / "data.json")
    return outputs


def load_dataset_info(out: Path) -> dict:
    return read_json(_dataset_dir(out) / "data.json")


def load_source(out: Path, source: str) -> tuple[np.ndarray, MinMaxNorm]:
    """Raw feature matrix (n, D) for a named source plus its train-split scaler."""
    info = load_dataset_info(out)
    d = _dataset_dir(out)
    if source not in info["sources"]:
        raise PipelineError(f"unknown source {source!r}; have {sorted(info['sources'])}")
    norm = MinMaxNorm.from_json(info["sources"][source])
    if info["experiment"] == "ko":
        arr, _ = load_array(d / source)
        return arr, norm
    if source in ("G", "S"):
        arr, _ = load_array(d / source)
        flat = arr.reshape(arr.shape[0], -1)
        if source == "S":
            flat = np.clip(flat, 0.2, 0.8)
        return flat, norm
    j = int(source.split(":")[1])
    arr, _ = load_array(d / "f")
    return arr[:, :j, :].reshape(arr.shape[0], -1), norm


def _split_ids(out: Path) -> tuple[np.ndarray, np.ndarray]:
    info = load_dataset_info(out)
    n, n_train = info["n_samples"], info["n_train"]
    return np.arange(n_train), np.arange(n_train, n)


# ----------------------------------------------------------------- networks


def _lvae_dir(out: Path, name: str) -> Path:
    return out / f"lvae-{name}"


def _csgan_dir(out: Path, name: str) -> Path:
    return out / f"csgan-{name}"


def _samples_dir(out: Path, name: str) -> Path:
    return out / f"samples-{name}"


def _train_lvae_stage(config: dict, out: Path) -> list[Path]:
    outputs: list[Path] = []
    blocks = config.get("lvae", {})
    for idx, name in enumerate(sorted(blocks)):
        block = blocks[name]
        raw, norm = load_source(out, block["source"])
        train_ids, _ = _split_ids(out)
        X = norm.apply(raw[train_ids])
        cfg = LvConfig(
            latent_dim=block["latent_dim"],
            encoder_hidden=tuple(block.get("encoder_hidden", (128, 64))),
            decoder_hidden=tuple(block.get("decoder_hidden", (64, 128))),
            eta=block.get("eta", 0.004),
            lambda_final=block.get("lambda_final", 0.2),
            ramp_epochs=block.get("ramp_epochs"),
            epochs=block.get("epochs", 2000),
            batch_size=block.get("batch_size", 50),
            learning_rate=block.get("learning_rate", 1e-4),
            seed=_sub_seed(config["seed"], "train-lvae", idx),
            lipschitz_scale=block.get("lipschitz_scale", float(X.shape[1])),
            output_activation=block.get("output_activation", "sigmoid"),
        )
        model, record = train_lvae(X, cfg)
        target = _lvae_dir(out, name)
        save_ae(target, model, extra={"source": block["source"]})
        write_json(
            target / "train.json",
            {
                "objective": record.objective,
                "recon": record.recon,
                "volume": record.volume,
                "lambdas": record.lambdas,
            },
        )
        outputs.extend(_tree_files(target))
    return outputs


def _prune_stage(config: dict, out: Path) -> list[Path]:
    # training artifacts stay immutable; the pruning result lives in its own
    # file and is applied when the model is loaded
    outputs: list[Path] = []
    blocks = config.get("lvae", {})
    prune_cfg = config.get("prune", {})
    for name in sorted(blocks):
        delta = prune_cfg.get(name, prune_cfg.get("delta", 0.05))
        block = blocks[name]
        raw, norm = load_source(out, block["source"])
        train_ids, _ = _split_ids(out)
        X = norm.apply(raw[train_ids])
        target = _lvae_dir(out, name)
        model = load_ae(target)
        pruned, report = prune(model, X, delta)
        payload = report.to_json()
        payload["latent_means"] = pruned.latent_means.tolist()
        payload["latent_stds"] = pruned.latent_stds.tolist()
        write_json(target / "prune.json", payload)
        outputs.append(target / "prune.json")
    return outputs


def load_pruned_ae(directory: Path) -> AEModel:
    """Trained model with the pruning result applied, when one exists."""
    model = load_ae(directory)
    ppath = Path(directory) / "prune.json"
    if ppath.is_file():
        payload = read_json(ppath)
        model.kept_indices = np.asarray(payload["kept_indices"], dtype=int)
        model.latent_means = np.asarray(payload["latent_means"], dtype=np.float64)
        model.latent_stds = np.asarray(payload["latent_stds"], dtype=np.float64)
    return model


def _build_codec(out: Path, spec: str) -> LatentCodec:
    kind, src = spec.split(":", 1)
    if kind == "identity":
        _, norm = load_source(out, src)
        return LatentCodec(norm, None)
    if kind == "lvae":
        target = _lvae_dir(out, src)
        model = load_pruned_ae(target)
        source_name = read_json(target / "ae.json")["extra"]["source"]
        _, norm = load_source(out, source_name)
        return LatentCodec(norm, model)
    raise PipelineError(f"unknown codec spec {spec!r}")


def _codec_source(out: Path, spec: str) -> str:
    kind, src = spec.split(":", 1)
    if kind == "identity":
        return src
    return read_json(_lvae_dir(out, src) / "ae.json")["extra"]["source"]


def _train_csgan_stage(config: dict, out: Path) -> list[Path]:
    outputs: list[Path] = []
    blocks = config.get("csgan", {})
    for idx, name in enumerate(sorted(blocks)):
        block = blocks[name]
        cond = _build_codec(out, block["condition"])
        data = _build_codec(out, block["data"])
        train_ids, _ = _split_ids(out)
        raw_y, _ = load_source(out, _codec_source(out, block["condition"]))
        raw_x, _ = load_source(out, _codec_source(out, block["data"]))
        pairs = LatentPairSet(
            data.encode(raw_x[train_ids]), cond.encode(raw_y[train_ids]), train_ids
        )
        cfg = CsganConfig(
            rho=block.get("rho", 0.05),
            cost=block.get("cost", "half_sq_l2"),
            epochs=block.get("epochs", 2000),
            batch_size=block.get("batch_size", 128),
            learning_rate=block.get("learning_rate", 1e-4),
            seed=_sub_seed(config["seed"], "train-csgan", idx),
            condition_weight=block.get("condition_weight", 1.0),
            hidden=tuple(block.get("hidden", (512, 512, 64))),
            dim_u=block.get("dim_u"),
            stop_tol=block.get("stop_tol", 1e-6),
            max_iters=block.get("max_iters", 500),
        )
        gen, record = train_csgan(pairs, cfg)
        target = _csgan_dir(out, name)
        save_mlp(target / "generator", gen.net)
        write_json(
            target / "link.json",
            {
                "condition": block["condition"],
                "data": block["data"],
                "dim_u": gen.dim_u,
                "dim_cond": gen.dim_cond,
                "dim_out": gen.dim_out,
                "rho": cfg.rho,
                "cost": cfg.cost,
                "condition_weight": cfg.condition_weight,
            },
        )
        write_json(
            target / "trace.json",
            {
                "divergence": record.divergence,
                "nonconverged_steps": record.nonconverged_steps,
                "total_steps": record.total_steps,
            },
        )
        outputs.extend(_tree_files(target))
    return outputs


def load_sampler(out: Path, csgan_name: str) -> PosteriorSampler:
    target = _csgan_dir(out, csgan_name)
    link = read_json(target / "link.json")
    net, _ = load_mlp(target / "generator")
    gen = Generator(net, link["dim_u"], link["dim_cond"])
    return PosteriorSampler(
        cond=_build_codec(out, link["condition"]),
        gen=gen,
        data=_build_codec(out, link["data"]),
    )


def _sample_stage(config: dict, out: Path) -> list[Path]:
    outputs: list[Path] = []
    blocks = config.get("sample", {})
    for idx, name in enumerate(sorted(blocks)):
        block = blocks[name]
        sampler = load_sampler(out, block["csgan"])
        link = read_json(_csgan_dir(out, block["csgan"]) / "link.json")
        cond_source = _codec_source(out, link["condition"])
        raw_y, _ = load_source(out, cond_source)
        train_ids, test_ids = _split_ids(out)
        case_ids = train_ids if block.get("cases", "test") == "train" else test_ids
        max_cases = block.get("max_cases")
        if max_cases is not None:
            case_ids = case_ids[: int(max_cases)]
        m = block.get("n_samples", 100)
        rng = _stage_rng(config["seed"], "sample-posterior", idx)
        n_cases = case_ids.size
        raw_dim = sampler.data.norm.lo.size
        samples = np.empty((n_cases, m, raw_dim))
        latent = np.empty((n_cases, m, sampler.gen.dim_out))
        for i, cid in enumerate(case_ids):
            child = np.random.default_rng(rng.integers(0, 2**63))
            z = posterior_sample_latent(raw_y[cid], m, sampler, child)
            latent[i] = z
            samples[i] = sampler.data.decode(z)
        target = _samples_dir(out, name)
        outputs.append(save_array(target / "samples", samples, {"case_ids": case_ids.tolist()}))
        outputs.append(save_array(target / "latent", latent, {"case_ids": case_ids.tolist()}))
        write_json(target / "cases.json", {"case_ids": case_ids.tolist(), "n_samples": m})
        outputs.extend([target / "samples.json", target / "latent.json", target / "cases.json"])
    return outputs


def _metrics_stage(config: dict, out: Path) -> list[Path]:
    outputs: list[Path] = []
    blocks = config.get("metrics", {})
    for name in sorted(blocks):
        block = blocks[name]
        sampler_name = block["sampler"]
        sdir = _samples_dir(out, sampler_name)
        samples, smeta = load_array(sdir / "samples")
        case_ids = np.asarray(smeta["case_ids"], dtype=int)
        sample_block = config.get("sample", {}).get(sampler_name, {})
        link = read_json(_csgan_dir(out, sample_block["csgan"]) / "link.json")
        data_source = _codec_source(out, link["data"])
        raw_x, _ = load_source(out, data_source)
        truth = raw_x[case_ids]

        kind = block.get("kind", "min_l2")
        rows: list[dict] = []
        if kind == "min_l2":
            for i, cid in enumerate(case_ids):
                rows.append(
                    {"case_id": int(cid), "min_l2": mx.min_l2_error(samples[i], truth[i])}
                )
            values = np.array([r["min_l2"] for r in rows])
            summary = {"metric": "min_l2", "mean": float(values.mean()),
                       "median": float(np.median(values)), "max": float(values.max())}
        elif kind == "field":
            scale_mode = block.get("scale_mode", "six_sigma")
            scale = (
                mx.length_scale(truth, "six_sigma")
                if scale_mode == "six_sigma"
                else mx.length_scale(truth, "saturation")
            )
            for i, cid in enumerate(case_ids):
                errs = [mx.relative_error(s, truth[i], scale) for s in samples[i]]
                rows.append(
                    {
                        "case_id": int(cid),
                        "mean_rel_error": float(np.mean(errs)),
                        "min_rel_error": float(np.min(errs)),
                        "rel_variation": mx.relative_variation(samples[i], scale),
                    }
                )
            summary = {
                "metric": "field",
                "scale": scale,
                "mean_rel_error": float(np.mean([r["mean_rel_error"] for r in rows])),
                "mean_min_rel_error": float(np.mean([r["min_rel_error"] for r in rows])),
                "mean_rel_variation": float(np.mean([r["rel_variation"] for r in rows])),
            }
        else:
            raise PipelineError(f"unknown metrics kind {kind!r}")

        csv_path = out / f"metrics-{name}.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        report = {
            "summary": summary,
            "provenance": {
                "config_hash": config_hash(block),
                "sampler": sampler_name,
                "samples_sha256": sha256_file(sdir / "samples.bin"),
            },
        }
        write_json(out / f"metrics-{name}.json", report)
        outputs.extend([csv_path, out / f"metrics-{name}.json"])
    return outputs


def _entropy_stage(config: dict, out: Path) -> list[Path]:
    outputs: list[Path] = []
    blocks = config.get("entropy", {})
    for name in sorted(blocks):
        block = blocks[name]
        sdir = _samples_dir(out, block["sampler"])
        stem = "latent" if block.get("space", "latent") == "latent" else "samples"
        arr, meta = load_array(sdir / stem)
        case_ids = meta["case_ids"]
        max_cases = block.get("max_cases")
        if max_cases is not None:
            arr = arr[: int(max_cases)]
            case_ids = case_ids[: int(max_cases)]
        spec = EntropySpec(k=block.get("k", 5))
        report = entropy_report(list(arr), spec, case_ids=case_ids)
        csv_path = out / f"entropy-{name}.csv"
        write_entropy_csv(csv_path, report)
        write_json(
            out / f"entropy-{name}.json",
            {"summary": report.summary(), "space": block.get("space", "latent"), "k": spec.k},
        )
        outputs.extend([csv_path, out / f"entropy-{name}.json"])
    return outputs


# ------------------------------------------------------------------- driver


def _lvae_train_files(target: Path) -> list[Path]:
    files = [target / "ae.json", target / "train.json"]
    files += _tree_files(target / "encoder") + _tree_files(target / "decoder")
    return files


def _stage_inputs(stage: str, config: dict, out: Path) -> list[Path]:
    """Input files a stage consumes; never includes the stage's own outputs."""
    d = _dataset_dir(out)
    deps: list[Path] = []
    if stage == "generate":
        return deps
    deps.extend(_tree_files(d))
    if stage == "prune":
        for name in sorted(config.get("lvae", {})):
            deps.extend(_lvae_train_files(_lvae_dir(out, name)))
    if stage in ("train-csgan", "sample-posterior"):
        for name in sorted(config.get("lvae", {})):
            target = _lvae_dir(out, name)
            deps.extend(_lvae_train_files(target))
            deps.append(target / "prune.json")
    if stage == "sample-posterior":
        for name in sorted(config.get("csgan", {})):
            deps.extend(_tree_files(_csgan_dir(out, name)))
    if stage in ("metrics", "entropy"):
        for name in sorted(config.get("sample", {})):
            deps.extend(_tree_files(_samples_dir(out, name)))
    return deps


_STAGE_FUNCS = {
    "train-lvae": _train_lvae_stage,
    "prune": _prune_stage,
    "train-csgan": _train_csgan_stage,
    "sample-posterior": _sample_stage,
    "metrics": _metrics_stage,
    "entropy": _entropy_stage,
}

_STAGE_CONFIG_KEYS = {
    "generate": ("experiment", "seed", "generate"),
    "train-lvae": ("experiment", "seed", "lvae"),
    "prune": ("experiment", "seed", "lvae", "prune"),
    "train-csgan": ("experiment", "seed", "lvae", "csgan"),
    "sample-posterior": ("experiment", "seed", "csgan", "sample"),
    "metrics": ("experiment", "seed", "sample", "metrics"),
    "entropy": ("experiment", "seed", "sample", "entropy"),
}


def run_stage(stage: str, config: dict, out: str | Path, force: bool = False) -> dict:
    """Run one stage (or skip when cached); returns a status record."""
    if stage not in STAGES:
        raise PipelineError(f"unknown stage {stage!r}; expected one of {STAGES}")
    if "experiment" not in config or "seed" not in config:
        raise PipelineError("config needs 'experiment' and 'seed'")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    fragment = {k: config.get(k) for k in _STAGE_CONFIG_KEYS[stage]}
    digest = config_hash(fragment)
    inputs = _stage_inputs(stage, config, out)
    if not force and _stage_fresh(out, stage, digest, inputs):
        return {"stage": stage, "skipped": True}

    if stage == "generate":
        kind = config["experiment"]
        if kind == "ko":
            outputs = _generate_ko(config, out)
        elif kind == "reservoir":
            outputs = _generate_reservoir(config, out)
        else:
            raise PipelineError(f"unknown experiment kind {kind!r}")
    else:
        outputs = _STAGE_FUNCS[stage](config, out)

    _write_manifest(out, stage, digest, inputs, outputs)
    return {"stage": stage, "skipped": False, "outputs": [str(p) for p in outputs]}


def run_pipeline(config: dict, out: str | Path, stages: tuple[str, ...] = STAGES) -> list[dict]:
    """Run stages in dependency order, failing fast on missing upstream artifacts."""
    results = []
    for stage in stages:
        results.append(run_stage(stage, config, out))
    return results
