"""Two-step training harness with the exact parameter-freezing topology,
plus checkpointing, inference entry points, and evaluation."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import (
    STEP1_GROUPS,
    Checkpoint,
    CheckpointError,
    adam_state_arrays,
    load_checkpoint,
    load_module_state,
    module_state,
    restore_adam_state,
    save_checkpoint,
    split_module_state,
    state_digest,
)
from .config import ModelConfig, RunConfig, config_hash, config_to_dict, _build
from .dataset import MultiViewSample, load_sample, scene_ids
from .degrade import degrade, sample_degradation
from .diffusion import CondUNet, ToyVAE, ddim_sample, forward_diffuse, make_schedule, sd_loss
from .encoder import TimeAwareEncoder
from .geometry import CameraParams, camera_to_vector
from .losses import camera_loss, feature_loss, make_target_features, total_loss
from .metrics import feature_consistency, pose_mse, psnr, ssim
from .viewsynth import ViewSynthesizer

# SeedSequence tags keeping independent randomness streams per purpose.
TAG_VAE = 11
TAG_STEP1 = 12
TAG_STEP2 = 13
TAG_EVAL = 14
TAG_SAMPLE = 15


class TrainingDiverged(RuntimeError):
    pass


class FrozenDriftError(RuntimeError):
    pass


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def _draw_normal(rng: np.random.Generator, shape) -> torch.Tensor:
    return torch.from_numpy(rng.standard_normal(shape).astype(np.float32))


def images_to_batch(images) -> torch.Tensor:
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr.transpose(0, 3, 1, 2))


def batch_to_images(batch: torch.Tensor) -> list[np.ndarray]:
    arr = batch.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return [np.clip(a, 0.0, 1.0) for a in arr]


class Pipeline(nn.Module):
    """All model pieces plus the checkpoint group bookkeeping."""

    def __init__(self, cfg: ModelConfig, include_step2: bool = True):
        super().__init__()
        self.model_cfg = cfg
        self.schedule = make_schedule(cfg.total_steps, cfg.beta_start, cfg.beta_end)
        self.encoder = TimeAwareEncoder(cfg.encoder_config())
        self.vae = ToyVAE(cfg.vae_config())
        self.unet = CondUNet(cfg.unet_config())
        self.synth = ViewSynthesizer(cfg.viewsynth_config()) if include_step2 else None

    def group_states(self) -> dict[str, dict[str, np.ndarray]]:
        out = {"encoder": module_state(self.encoder), "vae": module_state(self.vae)}
        out.update(split_module_state(self.unet, CondUNet.classify_param))
        if self.synth is not None:
            out["campred"] = module_state(self.synth.camera_predictor)
            out["v_in"] = module_state(self.synth.positional_volume)
            out["trans"] = module_state(self.synth.constructor)
            out["aggr"] = module_state(self.synth.aggregator)
        return out

    def group_parameters(self) -> dict[str, dict[str, nn.Parameter]]:
        out: dict[str, dict[str, nn.Parameter]] = {
            "encoder": dict(self.encoder.named_parameters()),
            "vae": dict(self.vae.named_parameters()),
            "unet_base": {},
            "unet_lora": {},
            "cross_attn": {},
        }
        for name, p in self.unet.named_parameters():
            out[CondUNet.classify_param(name)][name] = p
        if self.synth is not None:
            out["campred"] = dict(self.synth.camera_predictor.named_parameters())
            out["v_in"] = dict(self.synth.positional_volume.named_parameters())
            out["trans"] = dict(self.synth.constructor.named_parameters())
            out["aggr"] = dict(self.synth.aggregator.named_parameters())
        return out

    def load_groups(self, ckpt: Checkpoint, groups=STEP1_GROUPS):
        groups = list(groups)
        ckpt.require(*groups)
        unet_groups = [g for g in ("unet_base", "unet_lora", "cross_attn") if g in groups]
        if unet_groups:
            ckpt.require("unet_base", "unet_lora", "cross_attn")
            merged = {}
            for g in ("unet_base", "unet_lora", "cross_attn"):
                merged.update(ckpt.groups[g])
            load_module_state(self.unet, merged)
        if "encoder" in groups:
            load_module_state(self.encoder, ckpt.groups["encoder"])
        if "vae" in groups:
            load_module_state(self.vae, ckpt.groups["vae"])
        if self.synth is not None:
            if "campred" in groups:
                load_module_state(self.synth.camera_predictor, ckpt.groups["campred"])
            if "v_in" in groups:
                load_module_state(self.synth.positional_volume, ckpt.groups["v_in"])
            if "trans" in groups:
                load_module_state(self.synth.constructor, ckpt.groups["trans"])
            if "aggr" in groups:
                load_module_state(self.synth.aggregator, ckpt.groups["aggr"])

    def set_trainable(self, groups):
        trainable = set(groups)
        for group, params in self.group_parameters().items():
            flag = group in trainable
            for p in params.values():
                p.requires_grad_(flag)

    def cond_tokens_from_feature(self, feat: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) feature map -> (B, H*W, C) conditioning tokens."""
        b, c, h, w = feat.shape
        return feat.reshape(b, c, h * w).transpose(1, 2)


def build_pipeline(cfg: ModelConfig, seed: int, include_step2: bool = True) -> Pipeline:
    torch.manual_seed(seed)
    return Pipeline(cfg, include_step2=include_step2)


def load_pipeline(ckpt_path: str | Path) -> tuple[Pipeline, Checkpoint]:
    ckpt = load_checkpoint(ckpt_path)
    if "model" not in ckpt.meta:
        raise CheckpointError(f"{ckpt_path} has no model config in meta.json")
    model_cfg = _build(ModelConfig, ckpt.meta["model"], "model.")
    include_step2 = "v_in" in ckpt.groups
    pipeline = build_pipeline(model_cfg, seed=0, include_step2=include_step2)
    pipeline.load_groups(ckpt, STEP1_GROUPS)
    if include_step2:
        pipeline.load_groups(ckpt, ("campred", "v_in", "trans", "aggr"))
    pipeline.set_trainable(())
    return pipeline, ckpt


def _load_split(data_dir, split: str) -> tuple[list[int], list[MultiViewSample]]:
    ids = scene_ids(data_dir, split)
    return ids, [load_sample(data_dir, i) for i in ids]


def _check_finite(loss: torch.Tensor, iteration: int, lr: float):
    if not torch.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss {float(loss)!r} at iteration {iteration} (lr {lr:g})"
        )


def _plot_history(history: dict, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    for key, values in history.items():
        if key.endswith("loss") and values:
            xs = [v[0] for v in values]
            ys = [v[1] for v in values]
            ax.plot(xs, ys, label=key, linewidth=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Inference paths
# ---------------------------------------------------------------------------


def restore_image(pipeline: Pipeline, lq_image: np.ndarray, steps: int = 50, seed: int = 0) -> np.ndarray:
    """Restore one degraded image by DDIM sampling conditioned on its
    time-synchronized encoder features."""
    lq = images_to_batch([lq_image])
    cfg = pipeline.model_cfg

    with torch.no_grad():

        def cond_fn(t: int) -> torch.Tensor:
            feat = pipeline.encoder(lq, torch.tensor([t]))
            return pipeline.cond_tokens_from_feature(feat)

        def eps_model(x, t, cond):
            return pipeline.unet(x, torch.tensor([t]).expand(x.shape[0]), cond)

        z = ddim_sample(
            eps_model,
            cond_fn,
            pipeline.schedule,
            steps,
            (1, cfg.latent_channels, cfg.latent_size, cfg.latent_size),
            seed,
        )
        return batch_to_images(pipeline.vae.decode_latent(z))[0]


def synthesize_views(
    pipeline: Pipeline,
    lq_image: np.ndarray,
    cameras: list[CameraParams],
    steps: int = 50,
    seed: int = 0,
) -> list[np.ndarray]:
    """Novel views at the requested cameras from one degraded image.

    All trajectories advance in lockstep so each step shares a single encoder
    pass and one constructed volume. The input pose is predicted, never given.
    """
    if pipeline.synth is None:
        raise CheckpointError("checkpoint has no view-synthesis modules (run step 2 first)")
    lq = images_to_batch([lq_image])
    cfg = pipeline.model_cfg
    n = len(cameras)

    with torch.no_grad():

        def cond_fn(t: int) -> torch.Tensor:
            feat = pipeline.encoder(lq, torch.tensor([t]))
            cam_vec = pipeline.synth.predict_camera(feat)
            volume = pipeline.synth.construct_volume(feat[0], cam_vec[0], t)
            maps = [pipeline.synth.view_features(volume, cam) for cam in cameras]
            return torch.stack([m.reshape(-1, m.shape[-1]) for m in maps])

        def eps_model(x, t, cond):
            return pipeline.unet(x, torch.tensor([t]).expand(x.shape[0]), cond)

        z = ddim_sample(
            eps_model,
            cond_fn,
            pipeline.schedule,
            steps,
            (n, cfg.latent_channels, cfg.latent_size, cfg.latent_size),
            seed,
        )
        return batch_to_images(pipeline.vae.decode_latent(z))


# ---------------------------------------------------------------------------
# Step 1: restoration training
# ---------------------------------------------------------------------------


def _eval_restoration(pipeline: Pipeline, samples, seed: int, steps: int, preset: str) -> dict:
    rows = []
    for k, sample in enumerate(samples):
        rng = _rng(seed, TAG_EVAL, k)
        spec = sample_degradation(preset, rng)
        clean = sample.images[0]
        lq = degrade(clean, spec, rng)
        restored = restore_image(pipeline, lq, steps=steps, seed=int(_rng(seed, TAG_EVAL, k, 1).integers(2**31)))
        rows.append(
            {
                "psnr_degraded": psnr(lq, clean),
                "psnr_restored": psnr(restored, clean),
                "ssim_degraded": ssim(lq, clean),
                "ssim_restored": ssim(restored, clean),
            }
        )
    return {key: float(np.mean([r[key] for r in rows])) for key in rows[0]} if rows else {}


def pretrain_vae(pipeline: Pipeline, samples, cfg: RunConfig, log=print) -> None:
    s1 = cfg.train.step1
    if s1.vae_pretrain_iters < 1:
        return
    opt = torch.optim.Adam(pipeline.vae.parameters(), lr=s1.vae_lr, betas=(0.9, 0.999))
    all_images = [im for s in samples for im in s.images]
    for it in range(s1.vae_pretrain_iters):
        rng = _rng(cfg.train.seed, TAG_VAE, it)
        idx = rng.integers(0, len(all_images), size=s1.batch_size)
        batch = images_to_batch([all_images[i] for i in idx])
        mu, logvar = pipeline.vae.encode(batch)
        z = mu + torch.exp(0.5 * logvar) * _draw_normal(rng, mu.shape)
        recon = pipeline.vae.decode(z)
        loss = torch.mean((recon - batch) ** 2) + s1.kl_weight * ToyVAE.kl(mu, logvar)
        _check_finite(loss, it, s1.vae_lr)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if it % 500 == 0:
            log(f"[vae {it}] loss {loss.item():.5f}")
    # Calibrate the latent scale so diffusion sees roughly unit-variance x0.
    with torch.no_grad():
        rng = _rng(cfg.train.seed, TAG_VAE, s1.vae_pretrain_iters, 1)
        idx = rng.integers(0, len(all_images), size=min(64, len(all_images)))
        mu, _ = pipeline.vae.encode(images_to_batch([all_images[i] for i in idx]))
        std = float(mu.std())
        pipeline.vae.latent_scale.fill_(1.0 / max(std, 1e-6))


def step1_iteration(pipeline: Pipeline, opt, samples, cfg: RunConfig, it: int, apply_update: bool = True) -> dict:
    """One step-1 training iteration; fully determined by (parameters, it)."""
    s1 = cfg.train.step1
    schedule = pipeline.schedule
    rng = _rng(cfg.train.seed, TAG_STEP1, it)
    scene_idx = rng.integers(0, len(samples), size=s1.batch_size)
    view_idx = rng.integers(0, len(samples[0].images), size=s1.batch_size)
    cleans, lqs = [], []
    for si, vi in zip(scene_idx, view_idx):
        clean = samples[si].images[vi]
        spec = sample_degradation(cfg.train.degradation, rng)
        cleans.append(clean)
        lqs.append(degrade(clean, spec, rng))
    clean_batch = images_to_batch(cleans)
    lq_batch = images_to_batch(lqs)
    t = torch.from_numpy(rng.integers(0, schedule.T, size=s1.batch_size))

    feat = pipeline.encoder(lq_batch, t)
    with torch.no_grad():
        x0 = pipeline.vae.encode_latent(clean_batch)
    eps = _draw_normal(rng, x0.shape)
    x_t = forward_diffuse(x0, t, eps, schedule)
    eps_hat = pipeline.unet(x_t, t, pipeline.cond_tokens_from_feature(feat))
    l_sd = sd_loss(eps, eps_hat)

    mu, logvar = pipeline.vae.encode(clean_batch)
    z = mu + torch.exp(0.5 * logvar) * _draw_normal(rng, mu.shape)
    l_vae = torch.mean((pipeline.vae.decode(z) - clean_batch) ** 2) + s1.kl_weight * ToyVAE.kl(mu, logvar)

    loss = l_sd + s1.vae_weight * l_vae
    if apply_update:
        opt.zero_grad()
        loss.backward()
        opt.step()
    return {"loss": float(loss), "sd_loss": float(l_sd), "vae_loss": float(l_vae)}


def train_step1(data_dir: str | Path, out_dir: str | Path, cfg: RunConfig, log=print) -> Path:
    """Joint restoration training: encoder, cross-attention, LoRA adapters,
    and the toy UNet base/VAE, with the noise-prediction objective."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s1 = cfg.train.step1
    seed = cfg.train.seed
    pipeline = build_pipeline(cfg.model, seed)
    pipeline.set_trainable(STEP1_GROUPS)
    _, samples = _load_split(data_dir, "train")
    _, val_samples = _load_split(data_dir, "val")
    val_samples = val_samples[: cfg.train.eval_scenes]

    pretrain_vae(pipeline, samples, cfg, log=log)

    group_params = pipeline.group_parameters()
    named = {f"{g}.{n}": p for g in STEP1_GROUPS for n, p in group_params[g].items()}
    opt = torch.optim.Adam(named.values(), lr=s1.lr, betas=(0.9, 0.999))
    history: dict[str, list] = {"sd_loss": [], "vae_loss": [], "psnr_restored": [], "psnr_degraded": []}

    def save(path: Path, iteration: int):
        meta = {
            "step": 1,
            "iteration": iteration,
            "model": config_to_dict(cfg.model),
            "train": config_to_dict(cfg.train),
            "config_hash": config_hash(cfg),
        }
        save_checkpoint(path, pipeline.group_states(), meta, adam_state_arrays(opt, named))

    for it in range(s1.iterations):
        losses = step1_iteration(pipeline, opt, samples, cfg, it)
        _check_finite(torch.tensor(losses["loss"]), it, s1.lr)
        history["sd_loss"].append((it, losses["sd_loss"]))
        history["vae_loss"].append((it, losses["vae_loss"]))

        if cfg.train.eval_interval and (it + 1) % cfg.train.eval_interval == 0 and val_samples:
            metrics = _eval_restoration(pipeline, val_samples, seed, cfg.train.ddim_steps, cfg.train.degradation)
            history["psnr_restored"].append((it, metrics["psnr_restored"]))
            history["psnr_degraded"].append((it, metrics["psnr_degraded"]))
            log(f"[step1 {it + 1}] sd {losses['sd_loss']:.4f} vae {losses['vae_loss']:.5f} "
                f"psnr lq {metrics['psnr_degraded']:.2f} -> restored {metrics['psnr_restored']:.2f}")
        elif it % 200 == 0:
            log(f"[step1 {it}] sd {losses['sd_loss']:.4f} vae {losses['vae_loss']:.5f}")
        if cfg.train.checkpoint_interval and (it + 1) % cfg.train.checkpoint_interval == 0:
            save(out / "step1_last.ckpt", it + 1)

    ckpt_path = out / "step1.ckpt"
    save(ckpt_path, s1.iterations)
    (out / "history_step1.json").write_text(json.dumps(history))
    _plot_history(history, out / "loss_step1.png")
    return ckpt_path


# ---------------------------------------------------------------------------
# Step 2: view synthesis training
# ---------------------------------------------------------------------------


def step2_iteration(
    pipeline: Pipeline,
    opt,
    samples,
    cam_vectors,
    cfg: RunConfig,
    it: int,
    apply_update: bool = True,
) -> dict:
    """One step-2 training iteration over ``batch_size`` input views, each
    supervised on ``n_targets`` sampled target viewpoints sharing one
    constructed volume."""
    s2 = cfg.train.step2
    weights = cfg.train.weights.to_loss_weights()
    schedule = pipeline.schedule
    views = len(samples[0].images)
    rng = _rng(cfg.train.seed, TAG_STEP2, it)
    l_sd_terms, l_feat_terms, l_cam_terms = [], [], []
    for _ in range(s2.batch_size):
        si = int(rng.integers(0, len(samples)))
        sample = samples[si]
        perm = rng.permutation(views)
        i0 = int(perm[0])
        targets = [int(v) for v in perm[1 : 1 + s2.n_targets]]
        spec = sample_degradation(cfg.train.degradation, rng)
        lq = degrade(sample.images[i0], spec, rng)
        t = int(rng.integers(0, schedule.T))

        with torch.no_grad():
            feat = pipeline.encoder(images_to_batch([lq]), torch.tensor([t]))
        cam_pred = pipeline.synth.predict_camera(feat)[0]
        volume = pipeline.synth.construct_volume(feat[0], cam_pred, t)
        f_outs = [pipeline.synth.view_features(volume, sample.cameras[i]) for i in targets]

        with torch.no_grad():
            x0 = pipeline.vae.encode_latent(images_to_batch([sample.images[i] for i in targets]))
        eps = _draw_normal(rng, x0.shape)
        x_t = forward_diffuse(x0, t, eps, schedule)
        cond = torch.stack([m.reshape(-1, m.shape[-1]) for m in f_outs])
        eps_hat = pipeline.unet(x_t, t, cond)
        l_sd_terms.append(sd_loss(eps, eps_hat))

        f_tgts = [
            make_target_features(pipeline.encoder, sample.images[i], spec, t, rng).permute(1, 2, 0)
            for i in targets
        ]
        l_feat_terms.append(feature_loss(f_outs, f_tgts, weights.lambda_cos))
        l_cam_terms.append(
            camera_loss(cam_pred, torch.from_numpy(cam_vectors[si][i0].astype(np.float32)))
        )
    l_sd = torch.stack(l_sd_terms).mean()
    l_feat = torch.stack(l_feat_terms).mean()
    l_cam = torch.stack(l_cam_terms).mean()
    loss = total_loss(l_sd, l_feat, l_cam, weights)
    if apply_update:
        opt.zero_grad()
        loss.backward()
        opt.step()
    return {
        "loss": float(loss),
        "sd_loss": float(l_sd),
        "feat_loss": float(l_feat),
        "cam_loss": float(l_cam),
    }


def train_step2(
    data_dir: str | Path,
    out_dir: str | Path,
    cfg: RunConfig,
    step1_ckpt: str | Path,
    log=print,
) -> Path:
    """Train only the view-synthesis modules on top of a frozen step-1
    checkpoint; any byte drift of step-1 groups aborts the run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s2 = cfg.train.step2
    seed = cfg.train.seed

    ckpt = load_checkpoint(step1_ckpt)
    ckpt.require(*STEP1_GROUPS)
    model_cfg = _build(ModelConfig, ckpt.meta["model"], "model.")
    pipeline = build_pipeline(model_cfg, seed, include_step2=True)
    pipeline.load_groups(ckpt, STEP1_GROUPS)
    step2_groups = ("campred", "v_in", "trans", "aggr")
    pipeline.set_trainable(step2_groups)
    frozen_digests = {g: state_digest(ckpt.groups[g]) for g in STEP1_GROUPS}

    _, samples = _load_split(data_dir, "train")
    views = len(samples[0].images)
    if s2.n_targets >= views:
        raise ValueError(f"n_targets ({s2.n_targets}) must be < views ({views})")
    cam_vectors = [[camera_to_vector(c) for c in s.cameras] for s in samples]

    group_params = pipeline.group_parameters()
    named = {f"{g}.{n}": p for g in step2_groups for n, p in group_params[g].items()}
    opt = torch.optim.Adam(named.values(), lr=s2.lr, betas=(0.9, 0.999))
    history: dict[str, list] = {"total_loss": [], "sd_loss": [], "feat_loss": [], "cam_loss": []}

    def verify_frozen():
        current = pipeline.group_states()
        for g in STEP1_GROUPS:
            if state_digest(current[g]) != frozen_digests[g]:
                raise FrozenDriftError(f"frozen parameter group {g!r} changed during step 2")

    def save(path: Path, iteration: int):
        meta = {
            "step": 2,
            "iteration": iteration,
            "model": config_to_dict(model_cfg),
            "train": config_to_dict(cfg.train),
            "config_hash": config_hash(cfg),
            "step1_checkpoint": str(step1_ckpt),
        }
        save_checkpoint(path, pipeline.group_states(), meta, adam_state_arrays(opt, named))

    for it in range(s2.iterations):
        losses = step2_iteration(pipeline, opt, samples, cam_vectors, cfg, it)
        _check_finite(torch.tensor(losses["loss"]), it, s2.lr)
        history["total_loss"].append((it, losses["loss"]))
        history["sd_loss"].append((it, losses["sd_loss"]))
        history["feat_loss"].append((it, losses["feat_loss"]))
        history["cam_loss"].append((it, losses["cam_loss"]))
        if it % 100 == 0:
            log(f"[step2 {it}] total {losses['loss']:.4f} sd {losses['sd_loss']:.4f} "
                f"feat {losses['feat_loss']:.4f} cam {losses['cam_loss']:.4f}")
        if cfg.train.checkpoint_interval and (it + 1) % cfg.train.checkpoint_interval == 0:
            verify_frozen()
            save(out / "step2_last.ckpt", it + 1)

    verify_frozen()
    ckpt_path = out / "step2.ckpt"
    save(ckpt_path, s2.iterations)
    (out / "history_step2.json").write_text(json.dumps(history))
    _plot_history(history, out / "loss_step2.png")
    return ckpt_path


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def mean_pose_baseline(data_dir: str | Path) -> np.ndarray:
    """Constant predictor: the mean train-split camera vector."""
    _, samples = _load_split(data_dir, "train")
    vecs = [camera_to_vector(c) for s in samples for c in s.cameras]
    return np.mean(np.stack(vecs), axis=0)


def evaluate_view_synthesis(
    pipeline: Pipeline,
    data_dir: str | Path,
    split: str = "val",
    seed: int = 0,
    max_scenes: int | None = None,
    preset: str = "level1",
    t_eval: int | None = None,
) -> dict:
    """Pose error, per-view feature MSE against degraded-target features, and
    cross-view feature consistency at a fixed mid-trajectory step."""
    if pipeline.synth is None:
        raise CheckpointError("checkpoint has no view-synthesis modules")
    ids, samples = _load_split(data_dir, split)
    if max_scenes is not None:
        ids, samples = ids[:max_scenes], samples[:max_scenes]
    if not samples:
        raise ValueError(f"empty split {split!r}")
    t_eval = pipeline.schedule.T // 2 if t_eval is None else t_eval
    baseline = mean_pose_baseline(data_dir)

    pose_errors, base_errors, feat_mses, consistencies = [], [], [], []
    with torch.no_grad():
        for sid, sample in zip(ids, samples):
            rng = _rng(seed, TAG_EVAL, sid)
            spec = sample_degradation(preset, rng)
            lq = degrade(sample.images[0], spec, rng)
            feat = pipeline.encoder(images_to_batch([lq]), torch.tensor([t_eval]))
            cam_pred = pipeline.synth.predict_camera(feat)[0]
            gt_vec = camera_to_vector(sample.cameras[0])
            pose_errors.append(pose_mse(cam_pred.numpy(), gt_vec))
            base_errors.append(pose_mse(baseline, gt_vec))
            volume = pipeline.synth.construct_volume(feat[0], cam_pred, t_eval)
            f_outs = [pipeline.synth.view_features(volume, c) for c in sample.cameras]
            f_tgts = [
                make_target_features(pipeline.encoder, img, spec, t_eval, rng).permute(1, 2, 0)
                for img in sample.images
            ]
            feat_mses.append(
                float(np.mean([torch.mean((o - g) ** 2).item() for o, g in zip(f_outs, f_tgts)]))
            )
            consistencies.append(feature_consistency([f.numpy() for f in f_outs]))
    return {
        "pose_mse": float(np.mean(pose_errors)),
        "pose_mse_baseline": float(np.mean(base_errors)),
        "feature_mse": float(np.mean(feat_mses)),
        "feature_consistency": float(np.mean(consistencies)),
        "scenes": len(samples),
        "t_eval": t_eval,
    }


def evaluate(
    ckpt_path: str | Path,
    data_dir: str | Path,
    split: str = "val",
    out_dir: str | Path | None = None,
    seed: int = 0,
    ddim_steps: int = 50,
    max_scenes: int | None = None,
) -> dict:
    """Metrics report: restoration PSNR/SSIM, pose MSE vs the constant
    mean-pose baseline, and cross-view feature consistency."""
    pipeline, ckpt = load_pipeline(ckpt_path)
    ids, samples = _load_split(data_dir, split)
    if max_scenes is not None:
        ids, samples = ids[:max_scenes], samples[:max_scenes]
    if not samples:
        raise ValueError(f"empty split {split!r}")
    preset = ckpt.meta.get("train", {}).get("degradation", "level1")

    report = {"checkpoint": str(ckpt_path), "split": split, "scenes": len(samples), "step": ckpt.meta.get("step")}
    rows = []
    for sid, sample in zip(ids, samples):
        rng = _rng(seed, TAG_EVAL, sid)
        spec = sample_degradation(preset, rng)
        clean = sample.images[0]
        lq = degrade(clean, spec, rng)
        restored = restore_image(pipeline, lq, steps=ddim_steps, seed=sid)
        rows.append(
            {
                "psnr_degraded": psnr(lq, clean),
                "psnr_restored": psnr(restored, clean),
                "ssim_degraded": ssim(lq, clean),
                "ssim_restored": ssim(restored, clean),
            }
        )
    for key in rows[0]:
        report[key] = float(np.mean([r[key] for r in rows]))

    if pipeline.synth is not None:
        report.update(
            evaluate_view_synthesis(
                pipeline, data_dir, split, seed=seed, max_scenes=max_scenes, preset=preset
            )
        )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True))
        _plot_metrics(report, rows, out / "metrics.png")
    return report


def run_feature_loss_ablation(
    data_dir: str | Path,
    out_dir: str | Path,
    cfg: RunConfig,
    step1_ckpt: str | Path,
    seeds: tuple[int, ...] = (0, 1, 2),
    log=print,
) -> dict:
    """Train step 2 with and without the feature loss across seeds and compare
    held-out per-view feature MSE and cross-view consistency."""
    import dataclasses

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in seeds:
        per_seed = {"seed": int(seed)}
        for label, lam in (("with_feat", cfg.train.weights.lambda_feat), ("without_feat", 0.0)):
            weights = dataclasses.replace(cfg.train.weights, lambda_feat=lam)
            train = dataclasses.replace(cfg.train, seed=int(seed), weights=weights)
            run_cfg = dataclasses.replace(cfg, train=train)
            run_dir = out / f"seed{seed}_{label}"
            log(f"[ablate] training {run_dir.name} (lambda_feat={lam})")
            ckpt_path = train_step2(data_dir, run_dir, run_cfg, step1_ckpt, log=log)
            pipeline, _ = load_pipeline(ckpt_path)
            metrics = evaluate_view_synthesis(
                pipeline, data_dir, "val", seed=0, preset=cfg.train.degradation
            )
            per_seed[label] = metrics
        per_seed["feature_mse_worse_without"] = (
            per_seed["without_feat"]["feature_mse"] > per_seed["with_feat"]["feature_mse"]
        )
        per_seed["consistency_worse_without"] = (
            per_seed["without_feat"]["feature_consistency"]
            < per_seed["with_feat"]["feature_consistency"]
        )
        runs.append(per_seed)
        log(
            f"[ablate] seed {seed}: feat_mse {per_seed['with_feat']['feature_mse']:.5f} vs "
            f"{per_seed['without_feat']['feature_mse']:.5f} (w/o), consistency "
            f"{per_seed['with_feat']['feature_consistency']:.4f} vs "
            f"{per_seed['without_feat']['feature_consistency']:.4f} (w/o)"
        )
    report = {
        "runs": runs,
        "feature_mse_majority_worse_without": sum(r["feature_mse_worse_without"] for r in runs) > len(runs) / 2,
        "consistency_majority_worse_without": sum(r["consistency_worse_without"] for r in runs) > len(runs) / 2,
    }
    (out / "ablation.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


def _plot_metrics(report: dict, rows: list[dict], path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(rows))
    ax.plot(xs, [r["psnr_degraded"] for r in rows], "o-", label="degraded")
    ax.plot(xs, [r["psnr_restored"] for r in rows], "o-", label="restored")
    ax.set_xlabel("eval scene")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"mean degraded {report['psnr_degraded']:.2f} dB / restored {report['psnr_restored']:.2f} dB")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
