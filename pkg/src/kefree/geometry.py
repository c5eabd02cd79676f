"""Global alignment: corner detection, descriptor matching, RANSAC
homography estimation, projective warping and the center-rectangle
computation that defines the overlapped field-of-view region.

The detector is a 3-level multi-scale Harris with 128-dim
gradient-orientation-histogram descriptors (4x4 cells, 8 bins,
unit-norm).  No rotation/scale invariance beyond the pyramid; the
dual-lens setting only needs enough stable matches to feed RANSAC.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import as_image, pad_to_multiple, sample_bicubic, to_luma

HARRIS_K = 0.04
PYRAMID_LEVELS = 3
DESC_RADIUS = 8          # 16x16 descriptor patch
BORDER_MARGIN = DESC_RADIUS + 2

RANSAC_ITERATIONS = 2000
RANSAC_THRESHOLD_PX = 3.0
MIN_CENTER_AREA_PX = 64 * 64


class AlignmentError(RuntimeError):
    """Raised when reference-to-frame alignment cannot be established."""


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: int
    response: float
    descriptor: np.ndarray


@dataclass(frozen=True)
class Correspondence:
    src: tuple[float, float]
    dst: tuple[float, float]
    score: float


@dataclass(frozen=True)
class CenterRect:
    """Half-open pixel rectangle; origin and size are kept even so that
    doubled coordinates stay integral."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate rectangle {self}")
        if any(v % 2 for v in (self.x0, self.y0, self.x1 - self.x0, self.y1 - self.y0)):
            raise ValueError(f"rectangle not even-aligned: {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def scaled(self, factor: int) -> "CenterRect":
        return CenterRect(self.x0 * factor, self.y0 * factor,
                          self.x1 * factor, self.y1 * factor)

    def slices(self):
        return slice(self.y0, self.y1), slice(self.x0, self.x1)


def normalize_homography(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64).reshape(3, 3)
    if abs(m[2, 2]) < 1e-12:
        raise ValueError("homography has m[2][2] ~ 0")
    m = m / m[2, 2]
    if abs(np.linalg.det(m)) < 1e-12:
        raise ValueError("homography is singular")
    return m


def homography_to_list(m) -> list[float]:
    return [float(v) for v in normalize_homography(m).ravel()]


def homography_from_list(values) -> np.ndarray:
    values = list(values)
    if len(values) != 9:
        raise ValueError(f"expected 9 values, got {len(values)}")
    return normalize_homography(np.array(values, dtype=np.float64).reshape(3, 3))


def project_points(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a homography to (N, 2) points."""
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.c_[pts, np.ones(len(pts))]
    q = ph @ np.asarray(h, dtype=np.float64).T
    return q[:, :2] / q[:, 2:3]


def _box_down2(gray: np.ndarray) -> np.ndarray:
    g = pad_to_multiple(gray, 2)
    h, w = g.shape[:2]
    b = g.reshape(h // 2, 2, w // 2, 2, g.shape[2])
    return b.mean(axis=(1, 3))


def _harris_response(gray2d: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(gray2d, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(gray2d, axis=0, mode="nearest") / 8.0
    sxx = ndimage.gaussian_filter(gx * gx, 1.5, mode="nearest")
    syy = ndimage.gaussian_filter(gy * gy, 1.5, mode="nearest")
    sxy = ndimage.gaussian_filter(gx * gy, 1.5, mode="nearest")
    return (sxx * syy - sxy * sxy) - HARRIS_K * (sxx + syy) ** 2


def _descriptors(gray2d: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """16x16 gradient-orientation histograms (4x4 cells x 8 bins), unit L2."""
    n = len(xs)
    r = DESC_RADIUS
    # 18x18 windows so central differences stay inside the patch
    offs = np.arange(-r - 1, r + 1)
    yy = ys[:, None, None] + offs[None, :, None]
    xx = xs[:, None, None] + offs[None, None, :]
    win = gray2d[yy, xx]
    gx = (win[:, 1:-1, 2:] - win[:, 1:-1, :-2]) * 0.5
    gy = (win[:, 2:, 1:-1] - win[:, :-2, 1:-1]) * 0.5
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    bins = np.floor((ang + np.pi) / (2 * np.pi / 8)).astype(np.int64) % 8
    cell = np.arange(2 * r) // 4
    cell_idx = cell[:, None] * 4 + cell[None, :]
    flat_idx = cell_idx[None, :, :] * 8 + bins
    desc = np.zeros((n, 128))
    base = np.arange(n)[:, None, None] * 128
    np.add.at(desc.reshape(-1), (base + flat_idx).ravel(), mag.ravel())
    norm = np.sqrt((desc * desc).sum(axis=1))
    norm[norm == 0] = 1.0
    return desc / norm[:, None]


def detect_keypoints(image: np.ndarray, max_count: int = 2000) -> list[Keypoint]:
    """Multi-scale Harris corners with descriptors, strongest first."""
    image = as_image(image)
    if min(image.shape[:2]) < 32:
        raise ValueError(f"image too small for detection: {image.shape[1]}x{image.shape[0]}")
    gray = to_luma(image)
    found = []
    level_img = gray
    for level in range(PYRAMID_LEVELS):
        g = level_img[:, :, 0]
        h, w = g.shape
        if min(h, w) < 2 * BORDER_MARGIN + 4:
            break
        resp = _harris_response(g)
        thresh = max(1e-10, 0.01 * float(resp.max()))
        peaks = (resp == ndimage.maximum_filter(resp, size=3, mode="nearest")) \
            & (resp > thresh)
        peaks[:BORDER_MARGIN] = peaks[-BORDER_MARGIN:] = False
        peaks[:, :BORDER_MARGIN] = peaks[:, -BORDER_MARGIN:] = False
        pys, pxs = np.nonzero(peaks)
        if pys.size:
            found.append((level, g, resp, pys, pxs))
        level_img = _box_down2(level_img)

    cands = []
    for level, g, resp, pys, pxs in found:
        r = resp[pys, pxs]
        cands.append((level, g, resp, pys, pxs, r))
    if not cands:
        return []

    # rank all candidates by response, keep the strongest before the
    # (comparatively expensive) descriptor pass
    order_keys = np.concatenate([c[5] for c in cands])
    level_tag = np.concatenate([np.full(len(c[5]), i) for i, c in enumerate(cands)])
    pos_tag = np.concatenate([np.arange(len(c[5])) for c in cands])
    order = np.argsort(-order_keys, kind="stable")[:max_count]

    keypoints: list[Keypoint] = []
    for li in range(len(cands)):
        sel = order[level_tag[order] == li]
        if sel.size == 0:
            continue
        level, g, resp, pys, pxs, r = cands[li]
        idx = pos_tag[sel]
        ys, xs = pys[idx], pxs[idx]
        # sub-pixel peak by 1-d quadratic fits
        dx = (resp[ys, xs + 1] - resp[ys, xs - 1]) * 0.5
        dxx = resp[ys, xs + 1] - 2 * resp[ys, xs] + resp[ys, xs - 1]
        dy = (resp[ys + 1, xs] - resp[ys - 1, xs]) * 0.5
        dyy = resp[ys + 1, xs] - 2 * resp[ys, xs] + resp[ys - 1, xs]
        with np.errstate(divide="ignore", invalid="ignore"):
            offx = np.where(np.abs(dxx) > 1e-12, -dx / dxx, 0.0)
            offy = np.where(np.abs(dyy) > 1e-12, -dy / dyy, 0.0)
        offx = np.clip(offx, -0.5, 0.5)
        offy = np.clip(offy, -0.5, 0.5)
        descs = _descriptors(g, xs, ys)
        scale = 2 ** level
        half = (scale - 1) / 2.0
        for j in range(len(xs)):
            keypoints.append(Keypoint(
                x=float((xs[j] + offx[j]) * scale + half),
                y=float((ys[j] + offy[j]) * scale + half),
                scale=level,
                response=float(r[idx[j]]),
                descriptor=descs[j],
            ))
    keypoints.sort(key=lambda k: -k.response)
    return keypoints[:max_count]


def match_descriptors(a: list[Keypoint], b: list[Keypoint],
                      ratio: float = 0.8) -> list[Correspondence]:
    """Mutual nearest neighbours passing the ratio test, ties to lower index."""
    if not a or not b:
        raise ValueError("match_descriptors requires non-empty keypoint lists")
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    da = np.stack([k.descriptor for k in a])
    db = np.stack([k.descriptor for k in b])
    sim = da @ db.T
    nn_ab = sim.argmax(axis=1)
    nn_ba = sim.argmax(axis=0)
    best = sim[np.arange(len(a)), nn_ab]
    if len(b) > 1:
        tmp = sim.copy()
        tmp[np.arange(len(a)), nn_ab] = -np.inf
        second = tmp.max(axis=1)
    else:
        second = np.full(len(a), -1.0)
    # distance ratio test on unit vectors: d^2 = 2 - 2s
    ok = (1.0 - best) < ratio * ratio * (1.0 - second)
    mutual = nn_ba[nn_ab] == np.arange(len(a))
    out = []
    for i in np.nonzero(ok & mutual)[0]:
        j = nn_ab[i]
        out.append(Correspondence(
            src=(a[i].x, a[i].y),
            dst=(b[j].x, b[j].y),
            score=float(np.clip(best[i], -1.0, 1.0)),
        ))
    return out


def _hartley_normalize(pts: np.ndarray):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])
    return (pts - c) * s, t


def _dlt(src: np.ndarray, dst: np.ndarray):
    srcn, ts = _hartley_normalize(src)
    dstn, td = _hartley_normalize(dst)
    n = len(src)
    a = np.zeros((2 * n, 9))
    x, y = srcn[:, 0], srcn[:, 1]
    u, v = dstn[:, 0], dstn[:, 1]
    a[0::2] = np.c_[x, y, np.ones(n), np.zeros((n, 3)), -u * x, -u * y, -u]
    a[1::2] = np.c_[np.zeros((n, 3)), x, y, np.ones(n), -v * x, -v * y, -v]
    try:
        _, _, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError:
        return None
    hn = vt[-1].reshape(3, 3)
    if abs(hn[2, 2]) < 1e-12:
        return None
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) < 1e-12 or abs(np.linalg.det(h)) < 1e-12:
        return None
    return h / h[2, 2]


def _reproj_errors(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    q = np.c_[src, np.ones(len(src))] @ h.T
    w = q[:, 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    err = np.hypot(q[:, 0] / w - dst[:, 0], q[:, 1] / w - dst[:, 1])
    return np.where(bad, np.inf, err)


def estimate_homography_ransac(corrs: list[Correspondence],
                               iterations: int = RANSAC_ITERATIONS,
                               inlier_threshold_px: float = RANSAC_THRESHOLD_PX,
                               seed: int = 0):
    """RANSAC homography (src -> dst) with a least-squares refit on the
    final inlier set.  Returns (3x3 matrix, boolean inlier mask);
    reproducible for a fixed seed and input order."""
    if len(corrs) < 4:
        raise AlignmentError(f"insufficient correspondences: {len(corrs)} < 4")
    src = np.array([c.src for c in corrs], dtype=np.float64)
    dst = np.array([c.dst for c in corrs], dtype=np.float64)
    n = len(corrs)
    rng = np.random.default_rng(seed)
    best_count = 0
    best_mask = None
    best_h = None
    for _ in range(iterations):
        idx = rng.choice(n, size=4, replace=False)
        h = _dlt(src[idx], dst[idx])
        if h is None:
            continue
        err = _reproj_errors(h, src, dst)
        mask = err < inlier_threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            best_h = h
    if best_h is None or best_count < 4:
        raise AlignmentError("no homography consensus (need >= 4 inliers)")
    refit = _dlt(src[best_mask], dst[best_mask])
    if refit is not None:
        err = _reproj_errors(refit, src, dst)
        mask = err < inlier_threshold_px
        if mask.sum() >= 4:
            best_h, best_mask = refit, mask
    return normalize_homography(best_h), best_mask


def warp_homography(image: np.ndarray, h: np.ndarray,
                    out_width: int, out_height: int) -> np.ndarray:
    """Inverse bicubic warping: output(p) = image(h^-1 p), replicate border."""
    image = as_image(image)
    h = np.asarray(h, dtype=np.float64)
    if abs(np.linalg.det(h)) < 1e-12:
        raise ValueError("homography is not invertible")
    inv = np.linalg.inv(h)
    ys, xs = np.mgrid[0:out_height, 0:out_width].astype(np.float64)
    w = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / w
    sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / w
    return sample_bicubic(image, sx, sy)


def _clip_polygon(poly: np.ndarray, width: float, height: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon to [0,w]x[0,h]."""
    def clip_edge(pts, inside, intersect):
        out = []
        m = len(pts)
        for i in range(m):
            cur, nxt = pts[i], pts[(i + 1) % m]
            cin, nin = inside(cur), inside(nxt)
            if cin:
                out.append(cur)
            if cin != nin:
                out.append(intersect(cur, nxt))
        return out

    def x_cross(a, b, x):
        t = (x - a[0]) / (b[0] - a[0])
        return (x, a[1] + t * (b[1] - a[1]))

    def y_cross(a, b, y):
        t = (y - a[1]) / (b[1] - a[1])
        return (a[0] + t * (b[0] - a[0]), y)

    pts = [tuple(p) for p in poly]
    for inside, intersect in (
        (lambda p: p[0] >= 0, lambda a, b: x_cross(a, b, 0.0)),
        (lambda p: p[0] <= width, lambda a, b: x_cross(a, b, width)),
        (lambda p: p[1] >= 0, lambda a, b: y_cross(a, b, 0.0)),
        (lambda p: p[1] <= height, lambda a, b: y_cross(a, b, height)),
    ):
        pts = clip_edge(pts, inside, intersect)
        if not pts:
            return np.zeros((0, 2))
    return np.array(pts)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _hspan(poly: np.ndarray, ys: np.ndarray):
    """Left/right boundary x at each y for a convex polygon."""
    m = len(poly)
    xl = np.full(ys.shape, np.inf)
    xr = np.full(ys.shape, -np.inf)
    for i in range(m):
        (x0, y0), (x1, y1) = poly[i], poly[(i + 1) % m]
        if y0 == y1:
            on = ys == y0
            if on.any():
                xl[on] = np.minimum(xl[on], min(x0, x1))
                xr[on] = np.maximum(xr[on], max(x0, x1))
            continue
        lo, hi = (y0, y1) if y0 < y1 else (y1, y0)
        sel = (ys >= lo) & (ys <= hi)
        if sel.any():
            t = (ys[sel] - y0) / (y1 - y0)
            x = x0 + t * (x1 - x0)
            xl[sel] = np.minimum(xl[sel], x)
            xr[sel] = np.maximum(xr[sel], x)
    return xl, xr


def _point_in_polygon(poly: np.ndarray, p, tol: float = 1e-7) -> bool:
    m = len(poly)
    area = np.dot(poly[:, 0], np.roll(poly[:, 1], -1)) - np.dot(poly[:, 1], np.roll(poly[:, 0], -1))
    sign = 1.0 if area >= 0 else -1.0
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if sign * cross < -tol:
            return False
    return True


def _best_slab_rect(poly: np.ndarray):
    ymin = float(poly[:, 1].min())
    ymax = float(poly[:, 1].max())
    lo, hi = int(np.ceil(ymin)), int(np.floor(ymax))
    if hi <= lo:
        return None

    def search(ys):
        xl, xr = _hspan(poly, ys.astype(np.float64))
        # width of the slab [ya, yb]: left boundary is convex (max at ends),
        # right is concave (min at ends)
        xll = np.maximum(xl[:, None], xl[None, :])
        xrr = np.minimum(xr[:, None], xr[None, :])
        wid = xrr - xll
        hei = ys[None, :] - ys[:, None]
        area = np.where((hei > 0) & (wid > 0), wid * hei, -1.0)
        i, j = np.unravel_index(np.argmax(area), area.shape)
        if area[i, j] <= 0:
            return None
        return int(ys[i]), int(ys[j]), float(xll[i, j]), float(xrr[i, j]), float(area[i, j])

    span = hi - lo + 1
    step = max(1, span // 768)
    ys = np.unique(np.concatenate([np.arange(lo, hi + 1, step), [hi]]))
    coarse = search(ys)
    if coarse is None:
        return None
    if step > 1:
        y0c, y1c, *_ = coarse
        ys = np.unique(np.concatenate([
            np.arange(max(lo, y0c - step), min(hi, y0c + step) + 1),
            np.arange(max(lo, y1c - step), min(hi, y1c + step) + 1)]))
        refined = search(ys)
        if refined is not None and refined[4] > coarse[4]:
            coarse = refined
    return coarse


def center_rect_from_homography(h: np.ndarray, ref_size, lr_size) -> CenterRect:
    """Largest even-aligned axis-aligned rectangle inside the projection of
    the reference frame intersected with the LR frame."""
    rw, rh = ref_size
    lw, lh = lr_size
    h = normalize_homography(h)
    quad = project_points(h, np.array([[0, 0], [rw, 0], [rw, rh], [0, rh]], float))
    poly = _clip_polygon(quad, float(lw), float(lh))
    if _polygon_area(poly) < MIN_CENTER_AREA_PX:
        raise AlignmentError("reference/LR overlap is too small or empty")
    found = _best_slab_rect(poly)
    if found is None:
        raise AlignmentError("no inscribed rectangle in the overlap region")
    y0, y1, xl, xr = found[0], found[1], found[2], found[3]
    x0 = int(np.ceil(xl - 1e-9))
    x1 = int(np.floor(xr + 1e-9))
    x0 += x0 & 1
    y0 += y0 & 1
    x1 -= x1 & 1
    y1 -= y1 & 1
    # verify containment, shrinking evenly if a corner juts out numerically
    for _ in range(8):
        if x1 - x0 < 2 or y1 - y0 < 2:
            raise AlignmentError("overlap rectangle degenerates after alignment")
        corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        if all(_point_in_polygon(poly, c) for c in corners):
            return CenterRect(x0, y0, x1, y1)
        x0 += 2
        y0 += 2
        x1 -= 2
        y1 -= 2
    raise AlignmentError("overlap rectangle verification failed")
