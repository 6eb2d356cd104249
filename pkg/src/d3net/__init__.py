"""Turbulence-degraded image restoration: wavelet fusion plus learned refinement."""

from .imagecore import (
    Image,
    FrameSequence,
    load_image,
    save_image,
    psnr,
    ssim,
    resample,
)
from .wavelet import WaveletPyramid, ShiftEstimate, dwt2_forward, dwt2_inverse, estimate_shift, apply_shift
from .fusion import FusionMaps, FusedResult, fuse_sequence, frame_average
from .turbsim import DegradationParams, DatasetManifest, ManifestEntry, generate_dataset
from .neuralcore import (
    Tensor,
    ParamStore,
    LrSchedule,
    adam_step,
    lr_at,
    l1_loss,
    no_grad,
    save_checkpoint,
    load_checkpoint,
)
from .models import (
    D2NetConfig,
    RdfdbkConfig,
    init_d2net,
    init_rdfdbk,
    d2net_forward,
    rdfdbk_forward,
    infer_d2net_config,
    infer_rdfdbk_config,
)
from .pipeline import TrainConfig, train, restore, evaluate

__version__ = "0.1.0"
