"""Multi-frame registration, fusion maps, and wavelet-domain weighted fusion.

Frames are registered onto the temporal middle frame, scored per pixel by
intensity agreement with the temporal median and by local wavelet detail
energy (sharpness), masked to non-extrapolated regions, and combined band by
band as a convex per-coefficient average in the wavelet domain.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion, uniform_filter

from .imagecore import Image, FrameSequence, save_image
from .wavelet import (
    ShiftEstimate,
    WaveletPyramid,
    apply_shift,
    dwt2_forward,
    dwt2_inverse,
    estimate_shift,
)

DEFAULT_ROI = 7
DEFAULT_SIGMA_S = 0.1


@dataclass
class FusionMaps:
    """Per-frame weighting fields, all at the reference frame's resolution."""

    priority: list
    boundary: list
    similarity: list
    weights: list
    roi_size: int


@dataclass
class FusedResult:
    fused_approx: Image
    fused_full: Image
    maps: FusionMaps
    shifts: list
    registered: FrameSequence


# ---------------------------------------------------------------------------
# Maps
# ---------------------------------------------------------------------------

def compute_similarity(frames, reference_stat, roi_size=DEFAULT_ROI,
                       sigma_s=DEFAULT_SIGMA_S):
    """Per-frame similarity: exp(-meanAbsDev/sigma_s) times local sharpness.

    meanAbsDev is the roi-window mean absolute difference to the temporal
    median; sharpness is level-1 detail energy normalized per pixel across
    frames.  A single frame has nothing to compare against and scores 1.
    """
    if roi_size < 3 or roi_size % 2 == 0:
        raise ValueError(f"roi_size must be odd and >= 3, got {roi_size}")
    n = len(frames)
    shape = (frames.frames[0].height, frames.frames[0].width)
    if n < 2:
        return [np.ones(shape)]
    med = reference_stat.luminance()

    intensities = []
    energies = []
    for f in frames.frames:
        lum = f.luminance()
        mad = uniform_filter(np.abs(lum - med), size=roi_size, mode="nearest")
        intensities.append(np.exp(-mad / sigma_s))
        pyr = dwt2_forward(lum, levels=1, family="haar")
        e = sum(band**2 for _, _, band in pyr.details)
        e = np.repeat(np.repeat(e, 2, axis=0), 2, axis=1)[: shape[0], : shape[1]]
        energies.append(uniform_filter(e, size=roi_size, mode="nearest"))

    peak = np.maximum.reduce(energies)
    flat = peak <= 1e-12
    out = []
    for inten, e in zip(intensities, energies):
        sharp = np.where(flat, 1.0, e / np.where(flat, 1.0, peak))
        out.append(np.clip(inten * sharp, 0.0, 1.0))
    return out


def compute_boundary(shifts, masks):
    """Erode each warp validity mask by one pixel so fusion never reads
    bilinear taps that touched extrapolated samples."""
    if len(shifts) != len(masks):
        raise ValueError(f"{len(shifts)} shifts for {len(masks)} masks")
    selem = np.ones((3, 3), dtype=bool)
    return [
        binary_erosion(np.asarray(m, dtype=bool), structure=selem).astype(np.float64)
        for m in masks
    ]


def compute_priority(similarity, boundary):
    """Combine maps into priorities and frame weights that partition unity.

    Pixels where every priority vanishes fall back to a uniform split over
    the valid frames, then over all frames.
    """
    if len(similarity) != len(boundary):
        raise ValueError(f"{len(similarity)} similarity fields for {len(boundary)} boundaries")
    n = len(similarity)
    priority = [s * b for s, b in zip(similarity, boundary)]
    total_p = np.add.reduce(priority)
    total_b = np.add.reduce(boundary)
    use_p = total_p > 1e-12
    use_b = total_b > 0.0
    safe_p = np.where(use_p, total_p, 1.0)
    safe_b = np.where(use_b, total_b, 1.0)
    weights = [
        np.where(use_p, p / safe_p, np.where(use_b, b / safe_b, 1.0 / n))
        for p, b in zip(priority, boundary)
    ]
    return priority, weights


# ---------------------------------------------------------------------------
# Band-space fusion
# ---------------------------------------------------------------------------

def _block_mean(field, scale):
    h, w = field.shape
    ys = np.arange(0, h, scale)
    xs = np.arange(0, w, scale)
    sums = np.add.reduceat(np.add.reduceat(field, ys, axis=0), xs, axis=1)
    ny = np.diff(np.append(ys, h))
    nx = np.diff(np.append(xs, w))
    return sums / np.outer(ny, nx)


def fuse_pyramids(pyramids, weights):
    """Weighted per-coefficient average of dimension-equal pyramids.

    weights are full-resolution per-frame fields; each band uses the weights
    block-mean reduced to its own resolution, which preserves the
    partition-of-unity property at every scale.
    """
    first = pyramids[0]
    if len(pyramids) != len(weights):
        raise ValueError(f"{len(pyramids)} pyramids for {len(weights)} weight fields")
    down = [
        [_block_mean(np.asarray(w, dtype=np.float64), 2**level)
         for level in range(1, first.levels + 1)]
        for w in weights
    ]
    approx = np.add.reduce(
        [d[first.levels - 1] * p.approx for d, p in zip(down, pyramids)]
    )
    details = []
    for idx, (level, orient, _) in enumerate(first.details):
        fused = np.add.reduce(
            [d[level - 1] * p.details[idx][2] for d, p in zip(down, pyramids)]
        )
        details.append((level, orient, fused))
    return WaveletPyramid(
        levels=first.levels, approx=approx, details=details,
        family=first.family, source_dims=first.source_dims,
    )


def fuse_sequence(seq, levels=2, family="haar", roi_size=DEFAULT_ROI,
                  weight_override=None, dump_dir=None):
    """Register all frames onto the middle frame, fuse in the wavelet domain,
    and reconstruct.

    fused_full is the full-resolution inverse transform; fused_approx is the
    fused level-1 approximation band brought back to nominal [0,1] range (the
    DWT low-pass has DC gain 2 per level) at half resolution.
    weight_override, when given, replaces the computed combined weights (one
    full-resolution field per frame), a hook for selection tests.
    """
    n = len(seq)
    ref = seq.frames[n // 2]
    ref_lum = ref.luminance()

    shifts = []
    warped = []
    masks = []
    h, w = ref.height, ref.width
    for f in seq.frames:
        est = estimate_shift(ref_lum, f.luminance())
        if not (abs(est.dy) < min(h, w) / 2 and abs(est.dx) < min(h, w) / 2):
            # wrap-ambiguous or degenerate peak; keep the frame unregistered
            # rather than failing the whole stack
            est = ShiftEstimate(0.0, 0.0, 0.0)
        shifts.append(est)
        planes = []
        mask = None
        for c in range(f.channels):
            plane, mask = apply_shift(f.data[c].astype(np.float64), est.dy, est.dx)
            planes.append(plane)
        warped.append(np.stack(planes))
        masks.append(mask)

    registered = FrameSequence(
        frames=[Image(w) for w in warped], source_id=seq.source_id
    )
    warped_lums = [img.luminance() for img in registered.frames]
    median = Image(np.median(np.stack(warped_lums), axis=0))
    lum_seq = FrameSequence(frames=[Image(l) for l in warped_lums])

    similarity = compute_similarity(lum_seq, median, roi_size)
    boundary = compute_boundary(shifts, masks)
    priority, weights = compute_priority(similarity, boundary)
    if weight_override is not None:
        if len(weight_override) != n:
            raise ValueError(f"{len(weight_override)} override fields for {n} frames")
        weights = [np.asarray(w, dtype=np.float64) for w in weight_override]
    maps = FusionMaps(priority=priority, boundary=boundary,
                      similarity=similarity, weights=weights, roi_size=roi_size)

    full = []
    approx = []
    for c in range(ref.channels):
        pyrs = [dwt2_forward(w[c], levels=levels, family=family) for w in warped]
        fused = fuse_pyramids(pyrs, weights)
        full.append(dwt2_inverse(fused))
        approx.append(dwt2_inverse(fused, to_level=1) / 2.0)
        if dump_dir is not None and c == 0:
            _dump_bands(fused, dump_dir)

    result = FusedResult(
        fused_approx=Image(np.clip(np.stack(approx), 0.0, 1.0)),
        fused_full=Image(np.clip(np.stack(full), 0.0, 1.0)),
        maps=maps, shifts=shifts, registered=registered,
    )
    if dump_dir is not None:
        _dump_maps(maps, dump_dir)
    return result


def _dump_maps(maps, dump_dir):
    os.makedirs(dump_dir, exist_ok=True)
    for name, fields in (("similarity", maps.similarity),
                         ("boundary", maps.boundary),
                         ("priority", maps.priority),
                         ("weight", maps.weights)):
        for k, field in enumerate(fields):
            save_image(Image(field[np.newaxis]),
                       os.path.join(dump_dir, f"{name}_{k:03d}.pfm"))


def _dump_bands(pyr, dump_dir):
    os.makedirs(dump_dir, exist_ok=True)
    save_image(Image(pyr.approx[np.newaxis]),
               os.path.join(dump_dir, f"band_approx_l{pyr.levels}.pfm"))
    for level, orient, band in pyr.details:
        save_image(Image(band[np.newaxis]),
                   os.path.join(dump_dir, f"band_l{level}_{orient.lower()}.pfm"))


def frame_average(seq):
    """Unregistered per-pixel temporal mean, the baseline comparator."""
    acc = np.add.reduce([f.data.astype(np.float64) for f in seq.frames])
    return Image(acc / len(seq))
