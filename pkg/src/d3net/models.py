"""Network definitions: a 4-scale U-Net restorer and a weight-shared
residual-feedback x2 upsampler.

Both models are plain parameter dictionaries plus forward functions; the
parameter naming scheme is stable so checkpoints are self-describing enough
to rebuild a config (except the upsampler's time-step count, which weight
sharing leaves invisible and callers choose at run time).
"""

from dataclasses import dataclass

from .neuralcore import (
    ParamStore,
    add,
    conv2d,
    conv2d_transposed,
    relu,
    upsample_nearest2x,
)

import numpy as np

BASE_CHANNELS = (64, 128, 256, 512)


@dataclass
class D2NetConfig:
    scales: int = 4
    channels_per_scale: tuple = BASE_CHANNELS
    width_multiplier: float = 1.0
    residual_blocks_per_scale: int = 2
    global_residual: bool = True
    in_channels: int = 1

    def __post_init__(self):
        if self.scales != len(self.channels_per_scale):
            raise ValueError(
                f"scales={self.scales} but {len(self.channels_per_scale)} channel entries"
            )
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ValueError(
                f"width_multiplier must be in (0, 1], got {self.width_multiplier}"
            )
        if self.residual_blocks_per_scale < 1:
            raise ValueError("need at least one residual block per scale")
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")

    def effective_channels(self):
        return tuple(
            max(4, int(round(self.width_multiplier * c)))
            for c in self.channels_per_scale
        )


@dataclass
class RdfdbkConfig:
    time_steps: int = 3
    feature_channels: int = 32
    residual_blocks: int = 4
    scale_factor: int = 2
    in_channels: int = 1

    def __post_init__(self):
        if self.time_steps < 1:
            raise ValueError(f"time_steps must be >= 1, got {self.time_steps}")
        if self.scale_factor != 2:
            raise ValueError("only x2 upsampling is supported")
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _add_conv(store, prefix, out_c, in_c, k, dtype, zero=False):
    if zero:
        store.add(f"{prefix}.w", (out_c, in_c, k, k), init="zeros", dtype=dtype)
    else:
        store.add(f"{prefix}.w", (out_c, in_c, k, k), fan_in=in_c * k * k,
                  dtype=dtype)
    store.add(f"{prefix}.b", (out_c,), init="zeros", dtype=dtype)


def _add_conv_t(store, prefix, in_c, out_c, k, dtype):
    # transposed-conv weight layout is (in, out, kh, kw)
    store.add(f"{prefix}.w", (in_c, out_c, k, k), fan_in=out_c * k * k, dtype=dtype)
    store.add(f"{prefix}.b", (out_c,), init="zeros", dtype=dtype)


def _res_blocks(store, prefix, count, x):
    for i in range(count):
        y = conv2d(x, store[f"{prefix}.rb{i}.c1.w"], store[f"{prefix}.rb{i}.c1.b"],
                   pad=1)
        y = conv2d(relu(y), store[f"{prefix}.rb{i}.c2.w"],
                   store[f"{prefix}.rb{i}.c2.b"], pad=1)
        x = add(x, y)
    return x


# ---------------------------------------------------------------------------
# D2Net (U-Net restorer)
# ---------------------------------------------------------------------------

def init_d2net(cfg, seed=0, dtype=np.float32):
    """He-uniform init except for the residual-branch output convs and the
    head, which start at zero: a fresh model is exactly the identity (with
    global_residual on), so training moves off a stable operating point
    instead of fighting depth-amplified activations."""
    store = ParamStore(rng_seed=seed)
    ch = cfg.effective_channels()
    _add_conv(store, "stem", ch[0], cfg.in_channels, 3, dtype)
    for s in range(cfg.scales):
        for i in range(cfg.residual_blocks_per_scale):
            _add_conv(store, f"enc{s}.rb{i}.c1", ch[s], ch[s], 3, dtype)
            _add_conv(store, f"enc{s}.rb{i}.c2", ch[s], ch[s], 3, dtype,
                      zero=True)
        if s > 0:
            _add_conv(store, f"down{s}", ch[s], ch[s - 1], 2, dtype)
    for s in range(cfg.scales - 1, 0, -1):
        _add_conv_t(store, f"up{s}", ch[s], ch[s - 1], 2, dtype)
        for i in range(cfg.residual_blocks_per_scale):
            _add_conv(store, f"dec{s - 1}.rb{i}.c1", ch[s - 1], ch[s - 1], 3, dtype)
            _add_conv(store, f"dec{s - 1}.rb{i}.c2", ch[s - 1], ch[s - 1], 3,
                      dtype, zero=True)
    _add_conv(store, "head", cfg.in_channels, ch[0], 3, dtype, zero=True)
    return store


def d2net_forward(store, cfg, x):
    """Encoder of stride-2 convolutions, decoder of stride-2 transposed
    convolutions, additive identity skips per scale, optional global residual."""
    b, c, h, w = x.data.shape
    if c != cfg.in_channels:
        raise ValueError(f"input has {c} channels, model expects {cfg.in_channels}")
    div = 2 ** (cfg.scales - 1)
    if h % div or w % div:
        raise ValueError(f"input {h}x{w} not divisible by {div}")

    rb = cfg.residual_blocks_per_scale
    f = conv2d(x, store["stem.w"], store["stem.b"], pad=1)
    skips = []
    for s in range(cfg.scales):
        if s > 0:
            f = conv2d(f, store[f"down{s}.w"], store[f"down{s}.b"], stride=2)
        f = _res_blocks(store, f"enc{s}", rb, f)
        skips.append(f)
    for s in range(cfg.scales - 1, 0, -1):
        f = conv2d_transposed(f, store[f"up{s}.w"], store[f"up{s}.b"], stride=2)
        f = add(f, skips[s - 1])
        f = _res_blocks(store, f"dec{s - 1}", rb, f)
    out = conv2d(f, store["head.w"], store["head.b"], pad=1)
    if cfg.global_residual:
        out = add(x, out)
    return out


def infer_d2net_config(store):
    """Rebuild a config from checkpoint parameter names and shapes.
    global_residual is not recoverable from parameters; the deployment
    default (on) is assumed."""
    if "stem.w" not in store:
        raise ValueError("checkpoint lacks 'stem.w'; not a restorer model")
    c0, in_c = store["stem.w"].data.shape[:2]
    channels = [int(c0)]
    s = 1
    while f"down{s}.w" in store:
        channels.append(int(store[f"down{s}.w"].data.shape[0]))
        s += 1
    rb = 0
    while f"enc0.rb{rb}.c1.w" in store:
        rb += 1
    return D2NetConfig(
        scales=len(channels),
        channels_per_scale=tuple(channels),
        width_multiplier=1.0,
        residual_blocks_per_scale=rb,
        in_channels=int(in_c),
    )


# ---------------------------------------------------------------------------
# RDFDBK (residual-feedback upsampler)
# ---------------------------------------------------------------------------

def init_rdfdbk(cfg, seed=0, dtype=np.float32):
    """Same convention as the restorer: residual-branch output convs and the
    reconstruction head start at zero, so a fresh model is exactly
    nearest-neighbor x2."""
    store = ParamStore(rng_seed=seed)
    fc = cfg.feature_channels
    _add_conv(store, "extract", fc, cfg.in_channels, 3, dtype)
    _add_conv(store, "feedback", fc, fc, 1, dtype)
    for i in range(cfg.residual_blocks):
        _add_conv(store, f"rb{i}.c1", fc, fc, 3, dtype)
        _add_conv(store, f"rb{i}.c2", fc, fc, 3, dtype, zero=True)
    _add_conv_t(store, "recon.up", fc, fc, 2, dtype)
    _add_conv(store, "recon.out", cfg.in_channels, fc, 3, dtype, zero=True)
    return store


def rdfdbk_forward(store, cfg, x):
    """Recurrent refinement over shared weights; every time step reuses the
    same residual blocks, so the parameter count is independent of T.
    Output is nearest-neighbor x2 of the input plus a learned residual."""
    if x.data.shape[1] != cfg.in_channels:
        raise ValueError(
            f"input has {x.data.shape[1]} channels, model expects {cfg.in_channels}"
        )
    feat = conv2d(x, store["extract.w"], store["extract.b"], pad=1)
    hidden = None
    for _ in range(cfg.time_steps):
        state = feat if hidden is None else add(
            feat, conv2d(hidden, store["feedback.w"], store["feedback.b"])
        )
        for i in range(cfg.residual_blocks):
            y = conv2d(state, store[f"rb{i}.c1.w"], store[f"rb{i}.c1.b"], pad=1)
            y = conv2d(relu(y), store[f"rb{i}.c2.w"], store[f"rb{i}.c2.b"], pad=1)
            state = add(state, y)
        hidden = state
    up = relu(conv2d_transposed(hidden, store["recon.up.w"], store["recon.up.b"],
                                stride=2))
    residual = conv2d(up, store["recon.out.w"], store["recon.out.b"], pad=1)
    return add(upsample_nearest2x(x), residual)


def infer_rdfdbk_config(store, time_steps=3):
    """Rebuild a config from a checkpoint; T is a runtime choice because
    weight sharing makes it invisible in the parameter set."""
    if "extract.w" not in store:
        raise ValueError("checkpoint lacks 'extract.w'; not an upsampler model")
    fc, in_c = store["extract.w"].data.shape[:2]
    rb = 0
    while f"rb{rb}.c1.w" in store:
        rb += 1
    return RdfdbkConfig(
        time_steps=time_steps, feature_channels=int(fc),
        residual_blocks=rb, in_channels=int(in_c),
    )
