"""Core image representation and resampling.

Images are float64 ndarrays of shape (height, width, channels) with
channels 1 (gray) or 3 (RGB) and intensities nominally in [0, 1].
Values may leave that range transiently after filtering; only the PNG
writer clamps.

Interpolation uses the pixel-center convention (sample i sits at
coordinate i) and replicate-padding at borders.  The weighted sums are
written in "pivot" form, e.g. ``v1 + w0*(v0-v1) + ...``: at integer
sample positions the offsets vanish, so identity-scale resampling and
warping by the identity map reproduce the input bit for bit, and any
constant image stays exactly constant through every stage.
"""

from __future__ import annotations

import math

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # Rec.601

RESAMPLE_METHODS = ("bicubic", "bilinear", "nearest", "box")


def as_image(a) -> np.ndarray:
    """Validate and canonicalize an array to (H, W, C) float64, C in {1, 3}."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W) or (H, W, 1|3) array, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"empty image: shape {a.shape}")
    return np.ascontiguousarray(a)


def to_luma(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma as a 1-channel image; gray input passes through."""
    image = as_image(image)
    if image.shape[2] == 1:
        return image
    r, g, b = image[:, :, 0], image[:, :, 1], image[:, :, 2]
    y = r * LUMA_WEIGHTS[0] + g * LUMA_WEIGHTS[1] + b * LUMA_WEIGHTS[2]
    return y[:, :, None]


def _catmull_rom_weights(t: np.ndarray):
    # Catmull-Rom (a = -0.5); weights for taps at floor(x)-1 .. floor(x)+2.
    # w1 is implicit via the pivot form, so only w0, w2, w3 are needed.
    t2 = t * t
    t3 = t2 * t
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return w0, w2, w3


def _axis_coords(n_out: int, n_in: int):
    ratio = n_out / n_in
    x = (np.arange(n_out) + 0.5) / ratio - 0.5
    i0 = np.floor(x).astype(np.int64)
    return x, i0


def _resample_axis(image: np.ndarray, n_out: int, method: str, axis: int) -> np.ndarray:
    n_in = image.shape[axis]
    if n_out == n_in and method in ("bicubic", "bilinear", "nearest"):
        return image
    x, i0 = _axis_coords(n_out, n_in)
    moved = np.moveaxis(image, axis, 0)

    def tap(idx):
        return moved[np.clip(idx, 0, n_in - 1)]

    if method == "nearest":
        out = tap(np.floor(x + 0.5).astype(np.int64))
    elif method == "bilinear":
        t = x - i0
        v0, v1 = tap(i0), tap(i0 + 1)
        tb = t.reshape((-1,) + (1,) * (moved.ndim - 1))
        out = v0 + tb * (v1 - v0)
    elif method == "bicubic":
        t = x - i0
        w0, w2, w3 = _catmull_rom_weights(t)
        sh = (-1,) + (1,) * (moved.ndim - 1)
        v0, v1, v2, v3 = tap(i0 - 1), tap(i0), tap(i0 + 1), tap(i0 + 2)
        out = v1 + w0.reshape(sh) * (v0 - v1) + w2.reshape(sh) * (v2 - v1) \
            + w3.reshape(sh) * (v3 - v1)
    else:
        raise ValueError(f"unknown method {method!r}")
    return np.moveaxis(out, 0, axis)


def _box_down(image: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = image.shape
    if h % factor or w % factor:
        raise ValueError(f"box downsampling needs dimensions divisible by {factor}, "
                         f"got {h}x{w}")
    b = image.reshape(h // factor, factor, w // factor, factor, c)
    pivot = b[:, :1, :, :1]
    # pivot form: exact on constant blocks
    return (pivot + (b - pivot).mean(axis=(1, 3), keepdims=True))[:, 0, :, 0]


def resample(image: np.ndarray, scale: float, method: str = "bicubic") -> np.ndarray:
    """Resample by `scale` (output size = round(input size * scale)).

    Methods: bicubic (Catmull-Rom), bilinear, nearest, and box (plain
    block average, only valid for integer downscale factors).  bicubic /
    bilinear / nearest point-sample with a fixed-width kernel; box is the
    antialiasing downsampler used by the high-frequency decomposition.
    """
    image = as_image(image)
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if method not in RESAMPLE_METHODS:
        raise ValueError(f"unknown resample method {method!r}")
    h, w = image.shape[:2]
    if method == "box":
        inv = 1.0 / scale
        factor = int(round(inv))
        if abs(inv - factor) > 1e-9 or factor < 1:
            raise ValueError(f"box method needs scale 1/k for integer k, got {scale}")
        if factor == 1:
            return image.copy()
        return _box_down(image, factor)
    out_h = max(1, int(math.floor(h * scale + 0.5)))
    out_w = max(1, int(math.floor(w * scale + 0.5)))
    out = _resample_axis(image, out_w, method, axis=1)
    out = _resample_axis(out, out_h, method, axis=0)
    return np.ascontiguousarray(out)


def pad_to_multiple(image: np.ndarray, factor: int) -> np.ndarray:
    """Replicate-pad bottom/right so height and width divide `factor`."""
    h, w = image.shape[:2]
    ph = (-h) % factor
    pw = (-w) % factor
    if ph == 0 and pw == 0:
        return image
    return np.pad(image, ((0, ph), (0, pw), (0, 0)), mode="edge")


def high_frequency(image: np.ndarray, factor: int = 2) -> np.ndarray:
    """Image minus its box-down / bicubic-up low-pass; exact zero on constants."""
    image = as_image(image)
    if factor < 2:
        raise ValueError(f"factor must be >= 2, got {factor}")
    h, w = image.shape[:2]
    padded = pad_to_multiple(image, factor)
    low = resample(resample(padded, 1.0 / factor, "box"), float(factor), "bicubic")
    return image - low[:h, :w]


def sample_bicubic(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bicubic point sampling at float coordinate grids (replicate border).

    xs, ys: arrays of shape (H', W'). Returns an (H', W', C) image. Exact
    pass-through at integer coordinates.
    """
    image = as_image(image)
    h, w = image.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ix = np.floor(xs).astype(np.int64)
    iy = np.floor(ys).astype(np.int64)
    tx = xs - ix
    ty = ys - iy
    wx0, wx2, wx3 = _catmull_rom_weights(tx)
    wy0, wy2, wy3 = _catmull_rom_weights(ty)

    cols = []
    for dx, first in ((-1, True), (0, False), (1, False), (2, False)):
        cx = np.clip(ix + dx, 0, w - 1)
        v0 = image[np.clip(iy - 1, 0, h - 1), cx]
        v1 = image[np.clip(iy, 0, h - 1), cx]
        v2 = image[np.clip(iy + 1, 0, h - 1), cx]
        v3 = image[np.clip(iy + 2, 0, h - 1), cx]
        col = v1 + wy0[..., None] * (v0 - v1) + wy2[..., None] * (v2 - v1) \
            + wy3[..., None] * (v3 - v1)
        cols.append(col)
    c0, c1, c2, c3 = cols
    out = c1 + wx0[..., None] * (c0 - c1) + wx2[..., None] * (c2 - c1) \
        + wx3[..., None] * (c3 - c1)
    return out
