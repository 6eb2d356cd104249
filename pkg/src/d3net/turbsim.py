"""Seeded synthetic turbulence degradation: tilt warp, Gaussian blur, noise.

Every random draw comes from a counter-based stream keyed by
(seed, frame_index, purpose tag), so any single frame is reproducible in
isolation and generation order never matters.
"""

import json
import math
import os
from dataclasses import dataclass, asdict, replace

import numpy as np
from scipy.ndimage import correlate1d, gaussian_filter

from .imagecore import Image, load_image, save_image

FORMAT_VERSION = 1

# stream purpose tags
_TAG_TILT = 0
_TAG_NOISE = 1
_TAG_JITTER = 2
_TAG_ENTRY_SEED = 3

_IMAGE_EXTS = (".png", ".pfm")


def _rng(seed, *key):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *key])


@dataclass
class DegradationParams:
    tilt_sigma: float = 1.0
    tilt_corr: float = 8.0
    blur_sigma: float = 1.2
    noise_sigma: float = 0.01
    frames: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.tilt_sigma < 0 or self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("degradation sigmas must be >= 0")
        if self.tilt_corr < 1:
            raise ValueError(f"tilt_corr must be >= 1, got {self.tilt_corr}")
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")


@dataclass
class ManifestEntry:
    clean: str
    frames: list
    params: DegradationParams


@dataclass
class DatasetManifest:
    entries: list
    format_version: int = FORMAT_VERSION

    def frame_count(self):
        return sum(len(e.frames) for e in self.entries)

    def save(self, path):
        doc = {
            "format_version": self.format_version,
            "entries": [
                {"clean": e.clean, "frames": list(e.frames),
                 "params": asdict(e.params)}
                for e in self.entries
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @staticmethod
    def load(path):
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"manifest '{path}' has format_version {doc.get('format_version')}, "
                f"expected {FORMAT_VERSION}"
            )
        entries = [
            ManifestEntry(
                clean=e["clean"], frames=list(e["frames"]),
                params=DegradationParams(**e["params"]),
            )
            for e in doc["entries"]
        ]
        return DatasetManifest(entries=entries, format_version=FORMAT_VERSION)


# ---------------------------------------------------------------------------
# Degradation model
# ---------------------------------------------------------------------------

def sample_tilt_field(h, w, params, frame_index):
    """Smooth random displacement field, shape (2, h, w) as (dy, dx) planes.

    White noise per component is smoothed at scale tilt_corr, then the
    deviations about the field mean are rescaled so each component's
    empirical std is exactly tilt_sigma (the smoothed mean itself is small
    and kept as a legitimate global drift term).
    """
    if params.tilt_sigma == 0.0:
        return np.zeros((2, h, w))
    raw = _rng(params.seed, frame_index, _TAG_TILT).standard_normal((2, h, w))
    field = np.empty_like(raw)
    for c in range(2):
        smooth = gaussian_filter(raw[c], sigma=params.tilt_corr, mode="nearest")
        mean = smooth.mean()
        dev = smooth - mean
        std = dev.std()
        if std < 1e-12:
            field[c] = 0.0
        else:
            field[c] = mean + dev * (params.tilt_sigma / std)
    return field


def _warp_by_field(data, field):
    c, h, w = data.shape
    ys = np.arange(h, dtype=np.float64)[:, np.newaxis] + field[0]
    xs = np.arange(w, dtype=np.float64)[np.newaxis, :] + field[1]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    out = np.empty_like(data)
    for ch in range(c):
        plane = data[ch]
        out[ch] = (
            plane[y0, x0] * (1.0 - fy) * (1.0 - fx)
            + plane[y0, x1] * (1.0 - fy) * fx
            + plane[y1, x0] * fy * (1.0 - fx)
            + plane[y1, x1] * fy * fx
        )
    return out


def _gaussian_taps(sigma):
    radius = int(math.ceil(3.0 * sigma))
    u = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(u * u) / (2.0 * sigma * sigma))
    return k / k.sum()


def degrade_frame(clean, params, frame_index):
    """Apply warp -> blur -> noise -> clamp; identity when all sigmas are 0."""
    data = clean.data.astype(np.float64)
    if params.tilt_sigma > 0.0:
        field = sample_tilt_field(clean.height, clean.width, params, frame_index)
        data = _warp_by_field(data, field)
    if params.blur_sigma > 0.0:
        taps = _gaussian_taps(params.blur_sigma)
        data = correlate1d(data, taps, axis=1, mode="nearest")
        data = correlate1d(data, taps, axis=2, mode="nearest")
    if params.noise_sigma > 0.0:
        noise = _rng(params.seed, frame_index, _TAG_NOISE).standard_normal(data.shape)
        data = data + params.noise_sigma * noise
    return Image(np.clip(data, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def generate_dataset(clean_dir, out_dir, params, variations):
    """Degrade every image under clean_dir `variations` times.

    Each variation jitters the three sigmas by independent uniform [0.5, 1.5]
    factors from its own seeded stream.  Returns the manifest, also written
    to out_dir/manifest.json with all paths relative to it.
    """
    if variations < 1:
        raise ValueError(f"variations must be >= 1, got {variations}")
    names = sorted(
        n for n in os.listdir(clean_dir)
        if os.path.splitext(n)[1].lower() in _IMAGE_EXTS
    )
    if not names:
        raise ValueError(f"no PNG/PFM images found in '{clean_dir}'")
    os.makedirs(out_dir, exist_ok=True)

    entries = []
    for i, name in enumerate(names):
        clean_path = os.path.join(clean_dir, name)
        img = load_image(clean_path)
        entry_seed = int(_rng(params.seed, i, _TAG_ENTRY_SEED).integers(1 << 63))
        stem = os.path.splitext(name)[0]
        frame_paths = []
        for j in range(variations):
            jit = _rng(entry_seed, j, _TAG_JITTER).uniform(0.5, 1.5, 3)
            pj = replace(
                params,
                tilt_sigma=params.tilt_sigma * jit[0],
                blur_sigma=params.blur_sigma * jit[1],
                noise_sigma=params.noise_sigma * jit[2],
                frames=variations,
                seed=entry_seed,
            )
            frame = degrade_frame(img, pj, j)
            rel = f"{stem}_f{j:04d}.png"
            save_image(frame, os.path.join(out_dir, rel))
            frame_paths.append(rel)
        entries.append(ManifestEntry(
            clean=os.path.relpath(clean_path, out_dir),
            frames=frame_paths,
            params=replace(params, frames=variations, seed=entry_seed),
        ))

    manifest = DatasetManifest(entries=entries)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest
