"""Training loop, end-to-end restoration, and evaluation.

Restoration composes the three stages: wavelet fusion collapses the frame
stack to a half-resolution approximation, the U-Net cleans it up, and the
feedback upsampler brings it back to source resolution.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .fusion import fuse_sequence
from .imagecore import Image, load_image, psnr, save_image, ssim
from .models import (
    D2NetConfig,
    RdfdbkConfig,
    d2net_forward,
    infer_d2net_config,
    infer_rdfdbk_config,
    init_d2net,
    init_rdfdbk,
    rdfdbk_forward,
)
from .neuralcore import (
    LrSchedule,
    Tensor,
    adam_step,
    backward,
    l1_loss,
    lr_at,
    no_grad,
    save_checkpoint,
)

REPORT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    patch_size: int = 16
    batch_size: int = 32
    max_iterations: int = 200
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    checkpoint_every: int = 0  # 0: no periodic checkpoints

    def __post_init__(self):
        if self.patch_size < 8 or self.patch_size % 2:
            raise ValueError(
                f"patch_size must be even and >= 8, got {self.patch_size}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iterations < 1:
            raise ValueError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


def _block_mean_2x(arr):
    # (c, h, w) -> (c, h/2, w/2), plain 2x2 averaging
    c, h, w = arr.shape
    return arr.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _load_pairs(manifest, base_dir):
    """Materialize (clean, [degraded...]) pixel arrays from a manifest."""
    pairs = []
    for entry in manifest.entries:
        clean = load_image(os.path.join(base_dir, entry.clean)).data
        frames = [
            load_image(os.path.join(base_dir, f)).data for f in entry.frames
        ]
        for f in frames:
            if f.shape != clean.shape:
                raise ValueError(
                    f"degraded frame shape {f.shape} does not match clean "
                    f"{clean.shape} for '{entry.clean}'"
                )
        pairs.append((clean, frames))
    return pairs


def _sample_batch(pairs, rng, patch, batch, model):
    """Aligned (input, target) crops.  The denoiser sees a degraded crop and
    its clean counterpart; the upsampler sees the clean crop block-mean
    downsampled x2 against the clean crop."""
    xs, ys = [], []
    for _ in range(batch):
        ei = int(rng.integers(len(pairs)))
        clean, frames = pairs[ei]
        fi = int(rng.integers(len(frames)))
        _, h, w = clean.shape
        top = int(rng.integers(h - patch + 1))
        left = int(rng.integers(w - patch + 1))
        tgt = clean[:, top:top + patch, left:left + patch]
        if model == "d2net":
            src = frames[fi][:, top:top + patch, left:left + patch]
        else:
            src = _block_mean_2x(tgt)
        xs.append(src)
        ys.append(tgt)
    return (
        Tensor(np.stack(xs).astype(np.float32)),
        Tensor(np.stack(ys).astype(np.float32)),
    )


def train(model, data, cfg, base_dir=".", model_cfg=None, checkpoint_dir=None):
    """ADAM / L1 training of one model over a degradation dataset.

    Returns (store, log) where log is a list of {"iter", "lr", "loss"}
    dicts recorded every 10 iterations.  Fixed cfg.seed gives bit-identical
    parameters and logs across reruns.
    """
    if model not in ("d2net", "rdfdbk"):
        raise ValueError(f"unknown model '{model}'")
    if not data.entries:
        raise ValueError("empty dataset manifest")
    pairs = _load_pairs(data, base_dir)

    in_channels = pairs[0][0].shape[0]
    min_side = min(min(c.shape[1], c.shape[2]) for c, _ in pairs)
    if cfg.patch_size > min_side:
        raise ValueError(
            f"patch_size {cfg.patch_size} exceeds smallest image side {min_side}"
        )
    for clean, _ in pairs:
        if clean.shape[0] != in_channels:
            raise ValueError("mixed channel counts in dataset")

    if model_cfg is None:
        model_cfg = (
            D2NetConfig(in_channels=in_channels)
            if model == "d2net"
            else RdfdbkConfig(in_channels=in_channels)
        )
    if model == "d2net":
        div = 2 ** (model_cfg.scales - 1)
        if cfg.patch_size % div:
            raise ValueError(
                f"patch_size {cfg.patch_size} not divisible by {div}"
            )
        store = init_d2net(model_cfg, seed=cfg.seed)
        forward = lambda x: d2net_forward(store, model_cfg, x)
    else:
        store = init_rdfdbk(model_cfg, seed=cfg.seed)
        forward = lambda x: rdfdbk_forward(store, model_cfg, x)

    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 0x7261696E])
    log = []
    for it in range(cfg.max_iterations):
        x, y = _sample_batch(pairs, rng, cfg.patch_size, cfg.batch_size, model)
        lr = lr_at(cfg.schedule, it)
        out = forward(x)
        loss = l1_loss(out, y)
        store.zero_grad()
        backward(loss)
        adam_step(store, lr)
        if it % 10 == 0:
            log.append({"iter": it, "lr": lr, "loss": float(loss.data)})
        if checkpoint_dir and cfg.checkpoint_every:
            step = it + 1
            if step % cfg.checkpoint_every == 0:
                save_checkpoint(
                    store, os.path.join(checkpoint_dir, f"ckpt_{step:06d}.d3nc")
                )
    return store, log


def restore(seq, d2net_store, rdfdbk_store, d2net_cfg=None, rdfdbk_cfg=None,
            levels=2, family="haar", roi_size=7, time_steps=None,
            dump_dir=None):
    """Full pipeline: fuse the frame stack, denoise the half-resolution
    approximation, upsample x2 back to source dims, clamp to [0, 1].

    Model configs default to shapes recovered from the checkpoints; T for
    the upsampler is a runtime choice (time_steps overrides its default).
    """
    if d2net_cfg is None:
        d2net_cfg = infer_d2net_config(d2net_store)
    if rdfdbk_cfg is None:
        rdfdbk_cfg = infer_rdfdbk_config(
            rdfdbk_store, time_steps=time_steps if time_steps else 3
        )
    fused = fuse_sequence(seq, levels=levels, family=family, roi_size=roi_size,
                          dump_dir=dump_dir)
    approx = fused.fused_approx.data
    c, ha, wa = approx.shape
    if c != d2net_cfg.in_channels:
        raise ValueError(
            f"denoise stage: approximation has {c} channels, model expects "
            f"{d2net_cfg.in_channels}"
        )

    div = 2 ** (d2net_cfg.scales - 1)
    pad_h = (-ha) % div
    pad_w = (-wa) % div
    if pad_h >= ha or pad_w >= wa:
        raise ValueError(
            f"denoise stage: {ha}x{wa} approximation too small to reflect-pad "
            f"to a multiple of {div}"
        )
    x = np.pad(approx, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    with no_grad():
        den = d2net_forward(d2net_store, d2net_cfg,
                            Tensor(x[None].astype(np.float32)))
        den_crop = Tensor(np.ascontiguousarray(den.data[:, :, :ha, :wa]))
        up = rdfdbk_forward(rdfdbk_store, rdfdbk_cfg, den_crop)

    src_h, src_w = seq.frames[0].height, seq.frames[0].width
    out = up.data[0, :, :src_h, :src_w]
    if out.shape[1] != src_h or out.shape[2] != src_w:
        raise ValueError(
            f"upsample stage: produced {out.shape[1]}x{out.shape[2]}, "
            f"expected at least {src_h}x{src_w}"
        )
    if dump_dir:
        save_image(fused.fused_full, os.path.join(dump_dir, "fused_full.pfm"))
        save_image(fused.fused_approx,
                   os.path.join(dump_dir, "fused_approx.pfm"))
        save_image(Image(den_crop.data[0]),
                   os.path.join(dump_dir, "denoised.pfm"))
    return Image(np.clip(out, 0.0, 1.0).astype(np.float32))


def evaluate(pairs):
    """Per-pair and mean PSNR/SSIM over (restored, truth) images."""
    if not pairs:
        raise ValueError("no pairs to evaluate")
    rows = []
    for restored, truth in pairs:
        if (restored.height, restored.width) != (truth.height, truth.width):
            raise ValueError(
                f"pair dims differ: {restored.height}x{restored.width} vs "
                f"{truth.height}x{truth.width}"
            )
        rows.append({"psnr": psnr(restored, truth), "ssim": ssim(restored, truth)})
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "pairs": rows,
        "mean_psnr": sum(r["psnr"] for r in rows) / len(rows),
        "mean_ssim": sum(r["ssim"] for r in rows) / len(rows),
    }
