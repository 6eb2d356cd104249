"""Orthonormal separable 2-D wavelet transforms and global shift estimation.

The forward transform is the classical periodized orthogonal DWT.  Odd band
lengths are handled by extending the signal with one repeated edge sample
(half-sample symmetric extension) before filtering, so a length-n axis always
yields ceil(n/2) coefficients per band and the inverse truncates the padded
sample back off.  Detail orientations are labeled by (vertical, horizontal)
filter choice: LH = low-pass down columns, high-pass along rows.

Shift estimation uses Fourier phase correlation with a 3x3 centroid peak
refinement; estimates follow the convention mov(p) = ref(p - s), i.e. the
content of the moving frame sits s pixels further down/right.
"""

import math
from dataclasses import dataclass

import numpy as np

_SQRT2 = math.sqrt(2.0)

# Orthonormal analysis low-pass filters; high-pass follows by quadrature
# mirror: hi[k] = (-1)^k lo[L-1-k].
_LOWPASS = {
    "haar": np.array([1.0, 1.0]) / _SQRT2,
    "db2": np.array(
        [1.0 + math.sqrt(3.0), 3.0 + math.sqrt(3.0),
         3.0 - math.sqrt(3.0), 1.0 - math.sqrt(3.0)]
    ) / (4.0 * _SQRT2),
}

ORIENTATIONS = ("LH", "HL", "HH")


def _filters(family):
    if family not in _LOWPASS:
        raise ValueError(f"unknown wavelet family '{family}'")
    lo = _LOWPASS[family]
    k = np.arange(lo.size)
    hi = ((-1.0) ** k) * lo[::-1]
    return lo, hi


@dataclass
class WaveletPyramid:
    """Multi-level decomposition: one residual approx band plus, per level,
    three oriented detail bands stored as (level, orientation, band) with
    level 1 the finest."""

    levels: int
    approx: np.ndarray
    details: list
    family: str
    source_dims: tuple

    def band_dims(self, level):
        h, w = self.source_dims
        return (-(-h // 2**level), -(-w // 2**level))

    def detail(self, level, orientation):
        for lv, o, band in self.details:
            if lv == level and o == orientation:
                return band
        raise KeyError(f"no detail band (level={level}, {orientation})")


@dataclass
class ShiftEstimate:
    """Global translation of a moving frame relative to a reference."""

    dy: float
    dx: float
    confidence: float


# ---------------------------------------------------------------------------
# Periodized 1-D analysis/synthesis along a chosen axis
# ---------------------------------------------------------------------------

def _analysis_axis(x, lo, hi, axis):
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    if n % 2:
        x = np.concatenate([x, x[..., -1:]], axis=-1)
        n += 1
    half = n // 2
    starts = 2 * np.arange(half)
    a = np.zeros(x.shape[:-1] + (half,))
    d = np.zeros_like(a)
    for k in range(lo.size):
        taps = x[..., (starts + k) % n]
        a += lo[k] * taps
        d += hi[k] * taps
    return np.moveaxis(a, -1, axis), np.moveaxis(d, -1, axis)


def _synthesis_axis(a, d, lo, hi, out_len, axis):
    a = np.moveaxis(a, axis, -1)
    d = np.moveaxis(d, axis, -1)
    half = a.shape[-1]
    n = 2 * half
    starts = 2 * np.arange(half)
    x = np.zeros(a.shape[:-1] + (n,))
    for k in range(lo.size):
        # for fixed k the target positions are distinct, so fancy-index add
        # is collision-free
        x[..., (starts + k) % n] += lo[k] * a + hi[k] * d
    return np.moveaxis(x[..., :out_len], -1, axis)


# ---------------------------------------------------------------------------
# 2-D transform
# ---------------------------------------------------------------------------

def dwt2_forward(band, levels=1, family="haar"):
    """Decompose a single 2-D band into `levels` scales of an orthonormal DWT."""
    band = np.asarray(band, dtype=np.float64)
    if band.ndim != 2:
        raise ValueError(f"expected a 2-D band, got ndim={band.ndim}")
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    h, w = band.shape
    if min(h, w) < 2**levels:
        raise ValueError(
            f"band {h}x{w} too small for {levels} levels (needs min dim >= {2**levels})"
        )
    lo, hi = _filters(family)
    details = []
    approx = band
    for level in range(1, levels + 1):
        xa, xd = _analysis_axis(approx, lo, hi, axis=1)
        ll, hl = _analysis_axis(xa, lo, hi, axis=0)
        lh, hh = _analysis_axis(xd, lo, hi, axis=0)
        details.append((level, "LH", lh))
        details.append((level, "HL", hl))
        details.append((level, "HH", hh))
        approx = ll
    return WaveletPyramid(
        levels=levels, approx=approx, details=details, family=family,
        source_dims=(h, w),
    )


def dwt2_inverse(pyr, to_level=0):
    """Reconstruct from a pyramid.  to_level=0 recovers the full-resolution
    band; to_level=k stops after synthesizing the level-k approximation."""
    if not 0 <= to_level <= pyr.levels:
        raise ValueError(f"to_level must be in [0, {pyr.levels}], got {to_level}")
    lo, hi = _filters(pyr.family)
    approx = np.asarray(pyr.approx, dtype=np.float64)
    if approx.shape != pyr.band_dims(pyr.levels):
        raise ValueError(
            f"approx band is {approx.shape}, expected {pyr.band_dims(pyr.levels)}"
        )
    for level in range(pyr.levels, to_level, -1):
        want = pyr.band_dims(level)
        bands = {}
        for o in ORIENTATIONS:
            b = np.asarray(pyr.detail(level, o), dtype=np.float64)
            if b.shape != want:
                raise ValueError(
                    f"detail band (level={level}, {o}) is {b.shape}, expected {want}"
                )
            bands[o] = b
        out_h, out_w = pyr.band_dims(level - 1) if level > 1 else pyr.source_dims
        xa = _synthesis_axis(approx, bands["HL"], lo, hi, out_h, axis=0)
        xd = _synthesis_axis(bands["LH"], bands["HH"], lo, hi, out_h, axis=0)
        approx = _synthesis_axis(xa, xd, lo, hi, out_w, axis=1)
    return approx


# ---------------------------------------------------------------------------
# Phase-correlation registration
# ---------------------------------------------------------------------------

def estimate_shift(reference, moving):
    """Estimate the global translation s with moving(p) ~= reference(p - s).

    Returns integer-exact estimates for pure circular shifts; fractional
    shifts are refined by a 3x3 centroid around the correlation peak.
    Constant inputs carry no phase information and yield (0, 0) with
    confidence 0.
    """
    ref = np.asarray(reference, dtype=np.float64)
    mov = np.asarray(moving, dtype=np.float64)
    if ref.shape != mov.shape or ref.ndim != 2:
        raise ValueError(f"band shapes differ: {ref.shape} vs {mov.shape}")
    h, w = ref.shape
    if min(h, w) < 8:
        raise ValueError(f"bands must be at least 8x8, got {h}x{w}")

    cross = np.fft.fft2(mov) * np.conj(np.fft.fft2(ref))
    mag = np.abs(cross)
    dc = mag[0, 0]
    nondc = mag.copy()
    nondc[0, 0] = 0.0
    if nondc.max() <= 1e-9 * max(dc, 1.0):
        return ShiftEstimate(0.0, 0.0, 0.0)

    spectrum = np.where(mag > 1e-15, cross / np.maximum(mag, 1e-300), 0.0)
    corr = np.fft.ifft2(spectrum).real
    peak_flat = int(np.argmax(corr))
    pi, pj = divmod(peak_flat, w)
    peak = corr[pi, pj]

    # centroid over the wrapped 3x3 neighborhood, negative lobes ignored
    offs = np.array([-1, 0, 1])
    neigh = corr[np.ix_((pi + offs) % h, (pj + offs) % w)]
    wts = np.maximum(neigh, 0.0)
    total = wts.sum()
    if total > 0.0:
        cy = float((wts.sum(axis=1) * offs).sum() / total)
        cx = float((wts.sum(axis=0) * offs).sum() / total)
    else:
        cy = cx = 0.0
    # snap numerical dust so integer shifts come back exact
    if abs(cy) < 1e-6:
        cy = 0.0
    if abs(cx) < 1e-6:
        cx = 0.0

    dy = (pi if pi <= h // 2 else pi - h) + cy
    dx = (pj if pj <= w // 2 else pj - w) + cx
    energy = float(np.sum(corr * corr))
    conf = 0.0 if energy <= 0.0 else min(max(peak / energy, 0.0), 1.0)
    return ShiftEstimate(float(dy), float(dx), conf)


def apply_shift(band, dy, dx):
    """Resample a moving band onto the reference grid, undoing shift (dy, dx).

    Output pixel p takes the bilinear sample of the band at p + (dy, dx);
    integer shifts therefore copy values exactly.  The returned mask is True
    where the sample position lies inside the source extent (out-of-range
    positions are edge-clamped and flagged invalid).
    """
    band = np.asarray(band, dtype=np.float64)
    h, w = band.shape
    if not (abs(dy) < min(h, w) / 2 and abs(dx) < min(h, w) / 2):
        raise ValueError(f"shift ({dy}, {dx}) too large for a {h}x{w} band")
    ys = np.arange(h, dtype=np.float64) + dy
    xs = np.arange(w, dtype=np.float64) + dx
    valid = ((ys >= 0.0) & (ys <= h - 1.0))[:, np.newaxis] & (
        (xs >= 0.0) & (xs <= w - 1.0)
    )[np.newaxis, :]

    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = (ys - y0)[:, np.newaxis]
    fx = (xs - x0)[np.newaxis, :]
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)

    out = (
        band[np.ix_(y0c, x0c)] * (1.0 - fy) * (1.0 - fx)
        + band[np.ix_(y0c, x1c)] * (1.0 - fy) * fx
        + band[np.ix_(y1c, x0c)] * fy * (1.0 - fx)
        + band[np.ix_(y1c, x1c)] * fy * fx
    )
    return out, valid
