"""Level-1 image representation: organizer | MPEG-7-style | gist.

The four MPEG-7 descriptors follow the semantics of Color Layout, Color
Structure, Edge Histogram and Scalable Color without their integer
quantization, so outputs are real-valued. Images are ``(H, W, 3)`` arrays
with values in ``[0, 255]``.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.fft import dctn

from .errors import DimensionError, ImageSizeError, ValidationError

ORGANIZER_DIM = 408
COLOR_LAYOUT_DIM = 192
COLOR_STRUCTURE_DIM = 256
EDGE_HISTOGRAM_DIM = 80
SCALABLE_COLOR_DIM = 256
MPEG7_DIM = COLOR_LAYOUT_DIM + COLOR_STRUCTURE_DIM + EDGE_HISTOGRAM_DIM + SCALABLE_COLOR_DIM
GIST_DIM = 512

MIN_SIDE = 8
EDGE_THRESHOLD = 11.0
GIST_SIZE = 256
GIST_SCALES = 4
GIST_ORIENTATIONS = 8
GIST_GRID = 4


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        pos = 0
        for seg in self.layout:
            if seg.offset != pos:
                raise ValidationError(f"segment {seg.name!r} not contiguous at {pos}")
            pos += seg.length
        if pos != len(self.values):
            raise ValidationError(f"layout covers {pos} values, vector has {len(self.values)}")

    def segment(self, name):
        for seg in self.layout:
            if seg.name == name:
                return self.values[seg.offset:seg.offset + seg.length]
        raise KeyError(name)

    @property
    def names(self):
        return [seg.name for seg in self.layout]


def as_raster(img) -> np.ndarray:
    """Validate an RGB raster and return it as float64 ``(H, W, 3)``."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"expected an (H, W, 3) RGB image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ImageSizeError(f"image {w}x{h} is below the {MIN_SIDE}x{MIN_SIDE} minimum")
    arr = arr.astype(np.float64)
    if arr.min() < 0 or arr.max() > 255:
        raise ValidationError("pixel values must lie in [0, 255]")
    return arr


def load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


# --- organizer features -----------------------------------------------------

def prune_zero_columns(raw, expected_kept: Optional[int] = None):
    """Drop columns that are zero in every row.

    Returns ``(pruned, kept)``; reuse ``kept`` on test rows via ``raw[:, kept]``.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if raw.shape[0] < 1:
        raise ValidationError("organizer matrix has no rows")
    kept = [int(j) for j in np.flatnonzero(np.any(raw != 0.0, axis=0))]
    if expected_kept is not None and len(kept) != expected_kept:
        raise ValidationError(
            f"kept {len(kept)} non-zero columns, expected {expected_kept}; "
            "organizer corpus does not match"
        )
    return raw[:, kept], kept


# --- color helpers ------------------------------------------------------------

def rgb_to_ycbcr(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def rgb_to_hsv(rgb):
    """RGB in [0, 255] to HSV with every channel in [0, 1]."""
    x = rgb / 255.0
    mx = x.max(axis=-1)
    mn = x.min(axis=-1)
    delta = mx - mn
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    h = np.where(
        mx == r,
        ((g - b) / safe) % 6.0,
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(delta > 0, h / 6.0, 0.0)
    return np.stack([h, s, mx], axis=-1)


def quantize_hsv(rgb):
    """256-level HSV bin index per pixel: 16 hue x 4 saturation x 4 value."""
    hsv = rgb_to_hsv(rgb)
    hq = np.minimum((hsv[..., 0] * 16).astype(int), 15)
    sq = np.minimum((hsv[..., 1] * 4).astype(int), 3)
    vq = np.minimum((hsv[..., 2] * 4).astype(int), 3)
    return (hq * 4 + sq) * 4 + vq


def _grid_bounds(n, parts):
    return [i * n // parts for i in range(parts + 1)]


def grid_means(arr, rows, cols):
    """Mean of ``arr`` over a rows x cols partition of its first two axes."""
    h, w = arr.shape[:2]
    rb, cb = _grid_bounds(h, rows), _grid_bounds(w, cols)
    out = np.empty((rows, cols) + arr.shape[2:])
    for i in range(rows):
        for j in range(cols):
            out[i, j] = arr[rb[i]:rb[i + 1], cb[j]:cb[j + 1]].mean(axis=(0, 1))
    return out


@lru_cache(maxsize=None)
def zigzag_order(n=8):
    """(row, col) visiting order of the JPEG zigzag scan."""
    coords = [(i, j) for i in range(n) for j in range(n)]
    return tuple(sorted(coords, key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0])))


# --- MPEG-7-style descriptors ----------------------------------------------

def color_layout(img) -> np.ndarray:
    rgb = as_raster(img)
    avg = grid_means(rgb, 8, 8)
    ycc = rgb_to_ycbcr(avg)
    rows, cols = zip(*zigzag_order(8))
    parts = []
    for ch in range(3):
        coeffs = dctn(ycc[..., ch], type=2, norm="ortho")
        parts.append(coeffs[rows, cols])
    return np.concatenate(parts)


def color_structure(img, window: int = 8) -> np.ndarray:
    """Fraction of ``window`` x ``window`` placements that contain each color bin."""
    rgb = as_raster(img)
    bins = quantize_hsv(rgb)
    h, w = bins.shape
    nwy, nwx = h - window + 1, w - window + 1
    total = nwy * nwx
    out = np.zeros(COLOR_STRUCTURE_DIM)
    for b in np.unique(bins):
        mask = (bins == b).astype(np.int64)
        integral = np.zeros((h + 1, w + 1), dtype=np.int64)
        integral[1:, 1:] = mask.cumsum(0).cumsum(1)
        counts = (
            integral[window:, window:]
            - integral[:-window, window:]
            - integral[window:, :-window]
            + integral[:-window, :-window]
        )
        out[b] = np.count_nonzero(counts) / total
    return out


EDGE_FILTERS = np.array([
    [1.0, -1.0, 1.0, -1.0],                  # vertical
    [1.0, 1.0, -1.0, -1.0],                  # horizontal
    [np.sqrt(2), 0.0, 0.0, -np.sqrt(2)],     # 45 degrees
    [0.0, np.sqrt(2), -np.sqrt(2), 0.0],     # 135 degrees
    [2.0, -2.0, -2.0, 2.0],                  # non-directional
])


def edge_block_size(height, width, target_blocks=1100):
    size = int(np.sqrt(height * width / target_blocks) / 2) * 2
    return max(size, 2)


def edge_histogram(img, threshold: float = EDGE_THRESHOLD) -> np.ndarray:
    """16 local 5-bin edge histograms over a 4x4 grid of sub-images.

    Each macro-block is split into 2x2 sub-blocks of mean luminance and
    labelled with the strongest of the five filters when that response
    exceeds ``threshold``. Bins are fractions of macro-blocks.
    """
    rgb = as_raster(img)
    lum = rgb_to_ycbcr(rgb)[..., 0]
    h, w = lum.shape
    bs = edge_block_size(h, w)
    half = bs // 2
    rb, cb = _grid_bounds(h, 4), _grid_bounds(w, 4)
    out = np.zeros((16, 5))
    for i in range(4):
        for j in range(4):
            sub = lum[rb[i]:rb[i + 1], cb[j]:cb[j + 1]]
            ny, nx = sub.shape[0] // bs, sub.shape[1] // bs
            if ny == 0 or nx == 0:
                continue
            blocks = sub[:ny * bs, :nx * bs].reshape(ny, 2, half, nx, 2, half)
            means = blocks.mean(axis=(2, 5))          # (ny, 2, nx, 2)
            quads = means.transpose(0, 2, 1, 3).reshape(ny * nx, 4)
            strength = np.abs(quads @ EDGE_FILTERS.T)  # (blocks, 5)
            best = strength.argmax(axis=1)
            strong = strength.max(axis=1) > threshold
            hist = np.bincount(best[strong], minlength=5)
            out[i * 4 + j] = hist / (ny * nx)
    return out.reshape(-1)


def haar_cascade(x) -> np.ndarray:
    """Unnormalized 1-D Haar cascade (pair sums / differences).

    The first output is the sum of the input; detail coefficients follow
    from coarsest to finest.
    """
    out = np.array(x, dtype=np.float64)
    n = out.size
    if n & (n - 1):
        raise DimensionError("Haar cascade needs a power-of-two length")
    while n > 1:
        a, b = out[0:n:2].copy(), out[1:n:2].copy()
        out[:n // 2] = a + b
        out[n // 2:n] = a - b
        n //= 2
    return out


def hsv_histogram(img) -> np.ndarray:
    rgb = as_raster(img)
    counts = np.bincount(quantize_hsv(rgb).ravel(), minlength=SCALABLE_COLOR_DIM)
    return counts / counts.sum()


def scalable_color(img) -> np.ndarray:
    return haar_cascade(hsv_histogram(img))


def mpeg7_descriptors(img) -> np.ndarray:
    """CL(192) | CS(256) | EH(80) | SC(256) = 784 values."""
    rgb = as_raster(img)
    return np.concatenate([
        color_layout(rgb),
        color_structure(rgb),
        edge_histogram(rgb),
        scalable_color(rgb),
    ])


# --- gist ---------------------------------------------------------------------

@lru_cache(maxsize=4)
def gabor_bank(size=GIST_SIZE, scales=GIST_SCALES, orientations=GIST_ORIENTATIONS):
    """Frequency-domain Gabor-like transfer functions, shape (filters, size, size).

    Radial Gaussian around each scale's centre frequency times an angular
    Gaussian around each orientation; the DC term is zeroed so every filter
    has zero mean.
    """
    fx, fy = np.meshgrid(np.arange(-size / 2, size / 2), np.arange(-size / 2, size / 2))
    fr = np.fft.fftshift(np.sqrt(fx ** 2 + fy ** 2))
    theta = np.fft.fftshift(np.angle(fx + 1j * fy))
    angular = 16.0 * orientations ** 2 / 32.0 ** 2
    bank = np.empty((scales * orientations, size, size))
    k = 0
    for s in range(scales):
        centre = 0.3 / 1.85 ** s
        for o in range(orientations):
            tr = theta + np.pi / orientations * o
            tr = tr + 2 * np.pi * (tr < -np.pi) - 2 * np.pi * (tr > np.pi)
            bank[k] = np.exp(-10 * 0.35 * (fr / size / centre - 1) ** 2 - 2 * angular * np.pi * tr ** 2)
            bank[k, 0, 0] = 0.0
            k += 1
    return bank


def gist_center_frequency(scale):
    """Centre frequency of a scale in cycles per pixel of the working image."""
    return 0.3 / 1.85 ** scale


def to_gist_gray(img) -> np.ndarray:
    from PIL import Image

    rgb = as_raster(img)
    gray = (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255.0
    if gray.shape != (GIST_SIZE, GIST_SIZE):
        im = Image.fromarray(gray.astype(np.float32), mode="F")
        gray = np.asarray(im.resize((GIST_SIZE, GIST_SIZE), Image.BILINEAR), dtype=np.float64)
    return gray


def gist(img) -> np.ndarray:
    """Mean Gabor response magnitude of 32 filters pooled on a 4x4 grid."""
    gray = to_gist_gray(img)
    spectrum = np.fft.fft2(gray)
    responses = np.abs(np.fft.ifft2(spectrum[None] * gabor_bank()))
    cell = GIST_SIZE // GIST_GRID
    pooled = responses.reshape(-1, GIST_GRID, cell, GIST_GRID, cell).mean(axis=(2, 4))
    return pooled.reshape(-1)


# --- combination --------------------------------------------------------------

def combine_image_features(organizer, mpeg7, gist_vec) -> FeatureVector:
    """Concatenate organizer | mpeg7 | gist; ``organizer`` may be ``None``."""
    parts = []
    if organizer is not None:
        parts.append(("organizer", organizer, ORGANIZER_DIM))
    parts += [("mpeg7", mpeg7, MPEG7_DIM), ("gist", gist_vec, GIST_DIM)]
    layout, values, offset = [], [], 0
    for name, vec, dim in parts:
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != dim:
            raise DimensionError(f"{name} segment has length {vec.size}, expected {dim}")
        layout.append(Segment(name, offset, dim))
        values.append(vec)
        offset += dim
    return FeatureVector(np.concatenate(values), tuple(layout))


def extract_image_features(img, organizer: Optional[Sequence[float]] = None) -> FeatureVector:
    rgb = as_raster(img)
    return combine_image_features(organizer, mpeg7_descriptors(rgb), gist(rgb))
