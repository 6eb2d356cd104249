"""Planar float images, PNG/PFM file I/O, resampling, and PSNR/SSIM quality metrics.

Images are stored channel-major as float32 arrays of shape (channels, height,
width) with samples nominally in [0, 1].  All operations here are pure: inputs
are never modified in place.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as _PILImage

# Rec. 601 luminance weights used for RGB -> gray reduction.
_LUMA = np.array([0.299, 0.587, 0.114])

PSNR_CAP_DB = 99.0


@dataclass
class Image:
    """Planar floating-point raster: data has shape (channels, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[np.newaxis]
        if arr.ndim != 3:
            raise ValueError(f"image data must be 2-D or 3-D, got ndim={arr.ndim}")
        if arr.shape[0] not in (1, 3):
            raise ValueError(f"image must have 1 or 3 channels, got {arr.shape[0]}")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"image dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite samples")
        self.data = np.ascontiguousarray(arr, dtype=np.float32)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def luminance(self):
        """Return the image as a single 2-D float64 plane (Rec. 601 for RGB)."""
        if self.channels == 1:
            return self.data[0].astype(np.float64)
        return np.tensordot(_LUMA, self.data.astype(np.float64), axes=(0, 0))

    def copy(self):
        return Image(self.data.copy())


@dataclass
class FrameSequence:
    """Ordered stack of dimension-equal frames from one source."""

    frames: list
    source_id: str = ""

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("frame sequence must contain at least one frame")
        c, h, w = self.frames[0].channels, self.frames[0].height, self.frames[0].width
        for i, f in enumerate(self.frames):
            if (f.channels, f.height, f.width) != (c, h, w):
                raise ValueError(
                    f"frame {i} has shape {(f.channels, f.height, f.width)}, "
                    f"expected {(c, h, w)}"
                )

    def __len__(self):
        return len(self.frames)


# ---------------------------------------------------------------------------
# File I/O (PNG 8-bit gray/RGB, PFM 32-bit float)
# ---------------------------------------------------------------------------

def load_image(path):
    """Load a PNG (8-bit gray/RGB, mapped to [0,1]) or PFM (float, unscaled)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pfm":
        return _load_pfm(path)
    try:
        with _PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode not in ("L", "RGB"):
                raise OSError(
                    f"cannot load image '{path}': unsupported PNG mode '{mode}' "
                    "(only 8-bit gray or RGB)"
                )
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except OSError:
        raise
    except Exception as exc:
        raise OSError(f"cannot load image '{path}': {exc}") from exc
    if arr.ndim == 2:
        return Image(arr[np.newaxis])
    return Image(np.moveaxis(arr, 2, 0))


def save_image(img, path):
    """Write a PNG (clamped, round-half-up 8-bit) or a lossless PFM."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pfm":
        _save_pfm(img, path)
        return
    # round-half-up quantization keeps golden files platform-stable
    q = np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if img.channels == 1:
        pil = _PILImage.fromarray(q[0], mode="L")
    else:
        pil = _PILImage.fromarray(np.moveaxis(q, 0, 2), mode="RGB")
    try:
        pil.save(path, format="PNG")
    except Exception as exc:
        raise OSError(f"cannot save image '{path}': {exc}") from exc


def _load_pfm(path):
    try:
        with open(path, "rb") as fh:
            header = fh.readline().rstrip()
            if header == b"PF":
                channels = 3
            elif header == b"Pf":
                channels = 1
            else:
                raise OSError(f"cannot load image '{path}': not a PFM file")
            dims = fh.readline().split()
            if len(dims) != 2:
                raise OSError(f"cannot load image '{path}': bad PFM dimension line")
            width, height = int(dims[0]), int(dims[1])
            if width < 1 or height < 1 or width * height > 2**31:
                raise OSError(f"cannot load image '{path}': bad PFM dimensions")
            scale = float(fh.readline())
            endian = "<" if scale < 0 else ">"
            count = width * height * channels
            raw = np.frombuffer(fh.read(count * 4), dtype=endian + "f4")
            if raw.size != count:
                raise OSError(f"cannot load image '{path}': truncated PFM data")
    except OSError:
        raise
    except Exception as exc:
        raise OSError(f"cannot load image '{path}': {exc}") from exc
    # PFM rows are stored bottom-up
    arr = raw.reshape(height, width, channels)[::-1]
    return Image(np.moveaxis(arr, 2, 0))


def _save_pfm(img, path):
    data = img.data.astype("<f4")
    interleaved = np.moveaxis(data, 0, 2)[::-1]  # bottom-up rows
    magic = b"Pf" if img.channels == 1 else b"PF"
    try:
        with open(path, "wb") as fh:
            fh.write(magic + b"\n")
            fh.write(f"{img.width} {img.height}\n".encode("ascii"))
            fh.write(b"-1.0\n")
            fh.write(np.ascontiguousarray(interleaved).tobytes())
    except OSError as exc:
        raise OSError(f"cannot save image '{path}': {exc}") from exc


# ---------------------------------------------------------------------------
# Quality metrics
# ---------------------------------------------------------------------------

def psnr(a, b):
    """Peak signal-to-noise ratio in dB with peak 1.0, capped at 99 dB."""
    _require_same_dims(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = np.mean(diff * diff)
    if mse < 1e-12:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity over all fully-contained Gaussian windows.

    RGB inputs are reduced to Rec. 601 luminance first.  Requires
    min(height, width) >= window.
    """
    _require_same_dims(a, b)
    if min(a.height, a.width) < window:
        raise ValueError(
            f"image {a.height}x{a.width} smaller than SSIM window {window}"
        )
    x = a.luminance()
    y = b.luminance()
    kern = _gaussian_kernel2d(window, sigma)
    c1 = k1 * k1
    c2 = k2 * k2

    mu_x = _valid_filter(x, kern)
    mu_y = _valid_filter(y, kern)
    xx = _valid_filter(x * x, kern) - mu_x * mu_x
    yy = _valid_filter(y * y, kern) - mu_y * mu_y
    xy = _valid_filter(x * y, kern) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def _gaussian_kernel2d(size, sigma):
    r = (size - 1) // 2
    u = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(u * u) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _valid_filter(x, kern):
    # windowed sums over fully-contained windows only
    from scipy.ndimage import correlate

    r = kern.shape[0] // 2
    out = correlate(x, kern, mode="nearest")
    return out[r:-r, r:-r]


def _require_same_dims(a, b):
    if (a.channels, a.height, a.width) != (b.channels, b.height, b.width):
        raise ValueError(
            f"dimension mismatch: {(a.channels, a.height, a.width)} vs "
            f"{(b.channels, b.height, b.width)}"
        )


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def resample(img, new_h, new_w, kernel="bilinear"):
    """Resize with nearest, bilinear, or bicubic (Catmull-Rom) interpolation.

    Sample positions use center alignment; out-of-range taps are edge-clamped.
    """
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target dimensions must be positive, got {new_h}x{new_w}")
    if kernel not in ("nearest", "bilinear", "bicubic"):
        raise ValueError(f"unknown kernel '{kernel}'")
    src = img.data.astype(np.float64)
    out = np.empty((img.channels, new_h, new_w))
    for c in range(img.channels):
        plane = _resample_axis(src[c], new_h, kernel, axis=0)
        out[c] = _resample_axis(plane, new_w, kernel, axis=1)
    return Image(out)


def _resample_axis(plane, new_n, kernel, axis):
    n = plane.shape[axis]
    coords = (np.arange(new_n) + 0.5) * (n / new_n) - 0.5
    if kernel == "nearest":
        idx = np.clip(np.floor(coords + 0.5).astype(int), 0, n - 1)
        return np.take(plane, idx, axis=axis)
    base = np.floor(coords).astype(int)
    frac = coords - base
    if kernel == "bilinear":
        offsets = (0, 1)
        weights = np.stack([1.0 - frac, frac])
    else:
        offsets = (-1, 0, 1, 2)
        weights = np.stack([_catmull_rom(frac - o) for o in offsets])
    acc = np.zeros(plane.shape[:axis] + (new_n,) + plane.shape[axis + 1:])
    wshape = [1, 1]
    wshape[axis] = new_n
    for o, w in zip(offsets, weights):
        idx = np.clip(base + o, 0, n - 1)
        acc += np.take(plane, idx, axis=axis) * w.reshape(wshape)
    return acc


def _catmull_rom(t, a=-0.5):
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))
