"""Image-space resampling: bilinear lookup, rotated and TPS-based RoI align.

Images are float64 arrays of shape (H, W, C), values nominally in [0, 1].
All sampling uses the pixel-center convention: pixel (i, j) is centered at
(j + 0.5, i + 0.5).  Out-of-range coordinates clamp to the border pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ArityMismatch, SingularSystem
from .geometry import BoundaryPointSet, OrientedBox


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ArityMismatch(f"expected (H, W, C) image, got shape {arr.shape}")
    return arr


def bilinear_sample(img, x, y) -> np.ndarray:
    """Bilinearly interpolate img at (x, y); clamp-to-edge outside.

    x and y may be scalars or arrays of equal shape; the channel axis is
    appended to their shape.
    """
    arr = as_image(img)
    h, w, _ = arr.shape
    gx = np.asarray(x, dtype=np.float64) - 0.5
    gy = np.asarray(y, dtype=np.float64) - 0.5
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    fx = fx[..., None]
    fy = fy[..., None]
    top = arr[y0c, x0c] * (1 - fx) + arr[y0c, x1c] * fx
    bot = arr[y1c, x0c] * (1 - fx) + arr[y1c, x1c] * fx
    return top * (1 - fy) + bot * fy


def rotated_roi_align(img, box: OrientedBox, out_h: int, out_w: int) -> np.ndarray:
    """Resample an oriented box into an axis-aligned (out_h, out_w) crop."""
    arr = as_image(img)
    m = geometry.crop_transform(box, out_w, out_h)
    jj, ii = np.meshgrid(np.arange(out_w), np.arange(out_h))
    centers = np.column_stack([(jj.ravel() + 0.5), (ii.ravel() + 0.5)])
    src = geometry.map_points(m, centers, inverse=True)
    vals = bilinear_sample(arr, src[:, 0], src[:, 1])
    return vals.reshape(out_h, out_w, arr.shape[2])


@dataclass
class TpsParams:
    """Fitted thin-plate-spline map: affine part plus radial warp terms."""

    src: np.ndarray     # (n, 2) control source points
    affine: np.ndarray  # (2, 3): rows are [ax, ay, a0] per output coordinate
    warp: np.ndarray    # (2, n) radial coefficients per output coordinate
    lam: float = 0.0


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    """U(r) = r^2 log(r^2), continuously extended with U(0) = 0."""
    out = np.zeros_like(r2)
    nz = r2 > 0
    out[nz] = r2[nz] * np.log(r2[nz])
    return out


def tps_fit(src, dst, lam: float = 0.0) -> TpsParams:
    """Solve the TPS interpolation system mapping src control points to dst.

    lam > 0 regularizes the kernel diagonal (approximating spline); lam = 0
    interpolates exactly.
    """
    s = geometry.as_points(src)
    d = geometry.as_points(dst)
    if len(s) != len(d):
        raise ArityMismatch(f"control point counts differ: {len(s)} vs {len(d)}")
    n = len(s)
    if n < 3:
        raise SingularSystem("need at least 3 control points")
    diff = s[:, None, :] - s[None, :, :]
    k = _tps_kernel(np.sum(diff * diff, axis=2))
    k[np.diag_indices(n)] += lam
    p = np.column_stack([s, np.ones(n)])
    sys = np.zeros((n + 3, n + 3))
    sys[:n, :n] = k
    sys[:n, n:] = p
    sys[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = d
    try:
        sol = np.linalg.solve(sys, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("degenerate TPS control configuration") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("degenerate TPS control configuration")
    warp = sol[:n].T             # (2, n)
    affine = sol[n:].T           # (2, 3) ordered [ax, ay, a0]
    return TpsParams(src=s, affine=affine, warp=warp, lam=float(lam))


def tps_map(params: TpsParams, pts) -> np.ndarray:
    """Evaluate a fitted TPS at arbitrary points."""
    p = geometry.as_points(pts)
    diff = p[:, None, :] - params.src[None, :, :]
    u = _tps_kernel(np.sum(diff * diff, axis=2))  # (m, n)
    hom = np.column_stack([p, np.ones(len(p))])   # (m, 3)
    return hom @ params.affine.T + u @ params.warp.T


def arbitrary_roi_align(img, bp: BoundaryPointSet, out_h: int, out_w: int,
                        lam: float = 1e-6) -> np.ndarray:
    """Flatten the region bounded by boundary points into a straight crop.

    A TPS is fitted from the default (regular) points of the output frame to
    the boundary points in the image frame; each output pixel center is
    mapped through it and bilinearly sampled.
    """
    arr = as_image(img)
    defaults = geometry.default_points(out_w, out_h, bp.k)
    params = tps_fit(defaults.stacked(), bp.stacked(), lam=lam)
    jj, ii = np.meshgrid(np.arange(out_w), np.arange(out_h))
    centers = np.column_stack([(jj.ravel() + 0.5), (ii.ravel() + 0.5)])
    src = tps_map(params, centers)
    vals = bilinear_sample(arr, src[:, 0], src[:, 1])
    return vals.reshape(out_h, out_w, arr.shape[2])
