"""Pure geometric primitives.

Coordinates are pixels in the image frame: x grows rightward, y grows
downward.  Angles are measured from the +x axis toward the long side of a
box, positive clockwise on screen (i.e. the usual sign with y pointing
down).  Point lists are float64 arrays of shape (N, 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ArityMismatch,
    BadArity,
    DegenerateBox,
    DegenerateInput,
    DegeneratePolygon,
    DegeneratePolyline,
    SingularMatrix,
)

_TWO_PI = 2.0 * np.pi


def as_points(pts) -> np.ndarray:
    """Coerce to a float64 (N, 2) array and reject non-finite values."""
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise BadArity(f"expected (N, 2) point array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DegenerateInput("points contain NaN/Inf")
    return arr


@dataclass
class OrientedBox:
    """Minimum rotated rectangle: center, width (long side), height, angle."""

    cx: float
    cy: float
    w: float
    h: float
    angle: float  # radians in (-pi/2, pi/2]

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DegenerateBox(f"box sides must be positive, got w={self.w}, h={self.h}")
        self.angle = normalize_angle(self.angle)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def axes(self):
        """Unit vectors along the width (long side) and height directions."""
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([c, s]), np.array([-s, c])

    def corners(self) -> np.ndarray:
        """The four corners, ordered to match the crop corners of
        crop_transform: (0,0), (out_w,0), (out_w,out_h), (0,out_h)."""
        u, v = self.axes()
        c = self.center
        hw, hh = 0.5 * self.w, 0.5 * self.h
        return np.array([
            c - hw * u - hh * v,
            c + hw * u - hh * v,
            c + hw * u + hh * v,
            c - hw * u + hh * v,
        ])


@dataclass
class BoundaryPointSet:
    """2K boundary points: K on each long side, co-oriented start->end."""

    side_a: np.ndarray  # (K, 2), upper side
    side_b: np.ndarray  # (K, 2), lower side

    def __post_init__(self):
        self.side_a = as_points(self.side_a)
        self.side_b = as_points(self.side_b)
        if len(self.side_a) != len(self.side_b):
            raise ArityMismatch(
                f"sides differ in length: {len(self.side_a)} vs {len(self.side_b)}")
        if len(self.side_a) < 2:
            raise BadArity("each side needs at least 2 points")

    @property
    def k(self) -> int:
        return len(self.side_a)

    def stacked(self) -> np.ndarray:
        """All 2K points: side_a first, then side_b (both start->end)."""
        return np.concatenate([self.side_a, self.side_b])

    def polygon(self) -> np.ndarray:
        """Closed boundary: side_a followed by reversed side_b."""
        return np.concatenate([self.side_a, self.side_b[::-1]])


def normalize_angle(a: float) -> float:
    """Fold an angle into (-pi/2, pi/2] (box orientations are pi-periodic)."""
    a = (a + 0.5 * np.pi) % np.pi - 0.5 * np.pi
    if a == -0.5 * np.pi:
        a = 0.5 * np.pi
    return float(a)


def polyline_lengths(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length at each vertex, starting from 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(points, k: int) -> np.ndarray:
    """Sample k equidistant (by arc length) points on a polyline.

    Endpoints are kept exactly; interior samples fall at multiples of
    total_length / (k - 1).
    """
    if k < 2:
        raise BadArity(f"need at least 2 samples, got k={k}")
    pts = as_points(points)
    if len(pts) < 2:
        raise DegeneratePolyline("polyline needs at least 2 points")
    cum = polyline_lengths(pts)
    total = cum[-1]
    if total <= 0.0:
        raise DegeneratePolyline("polyline has zero arc length")
    targets = np.arange(k) * (total / (k - 1))
    out = np.column_stack([
        np.interp(targets, cum, pts[:, 0]),
        np.interp(targets, cum, pts[:, 1]),
    ])
    # the loop in the sampling recurrence never assigns the last sample
    # (cur_pos == total falls outside every half-open segment); pin it.
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices in CCW order."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    p = pts[order]
    p = p[np.concatenate([[True], np.any(np.diff(p, axis=0) != 0, axis=1)])]
    if len(p) < 3:
        raise DegenerateInput("need at least 3 distinct points")

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(points):
        out = []
        for q in points:
            while len(out) >= 2 and cross(out[-2], out[-1], q) <= 0:
                out.pop()
            out.append(q)
        return out

    lower = half(p)
    upper = half(p[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise DegenerateInput("points are collinear")
    return hull


def minimum_oriented_rect(points) -> OrientedBox:
    """Minimum-area rotated rectangle via rotating calipers over hull edges."""
    pts = as_points(points)
    hull = _convex_hull(pts)
    edges = np.diff(np.vstack([hull, hull[:1]]), axis=0)
    angles = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), 0.5 * np.pi))

    best = None
    for theta in angles:
        c, s = np.cos(theta), np.sin(theta)
        rot = hull @ np.array([[c, -s], [s, c]])  # rotate by -theta
        lo = rot.min(axis=0)
        hi = rot.max(axis=0)
        ext = hi - lo
        area = ext[0] * ext[1]
        if best is None or area < best[0]:
            mid = 0.5 * (lo + hi)
            center = mid @ np.array([[c, s], [-s, c]])  # rotate back
            best = (area, theta, ext, center)

    _, theta, ext, center = best
    w, h = float(ext[0]), float(ext[1])
    angle = float(theta)
    if h > w:
        w, h = h, w
        angle += 0.5 * np.pi
    return OrientedBox(float(center[0]), float(center[1]), w, h, angle)


def default_points(w0: float, h0: float, k: int) -> BoundaryPointSet:
    """Evenly spaced reference points on the long sides of a w0 x h0 crop."""
    if k < 2:
        raise BadArity(f"need k >= 2, got {k}")
    if not (w0 > 0 and h0 > 0):
        raise DegenerateBox(f"bad crop size {w0} x {h0}")
    xs = np.arange(k) * (w0 / (k - 1))
    side_a = np.column_stack([xs, np.zeros(k)])
    side_b = np.column_stack([xs, np.full(k, float(h0))])
    return BoundaryPointSet(side_a, side_b)


def decode_offsets(defaults: BoundaryPointSet, offsets, w0: float, h0: float) -> BoundaryPointSet:
    """Apply normalized offsets to default points: p = d + (w0*dx, h0*dy)."""
    off = np.asarray(offsets, dtype=np.float64).reshape(-1)
    k = defaults.k
    if off.size != 4 * k:
        raise ArityMismatch(f"expected {4 * k} offsets, got {off.size}")
    delta = off.reshape(2 * k, 2) * np.array([w0, h0])
    pts = defaults.stacked() + delta
    return BoundaryPointSet(pts[:k], pts[k:])


def encode_offsets(defaults: BoundaryPointSet, targets: BoundaryPointSet,
                   w0: float, h0: float) -> np.ndarray:
    """Inverse of decode_offsets: normalized offsets taking defaults to targets."""
    if not (w0 > 0 and h0 > 0):
        raise DegenerateBox(f"bad crop size {w0} x {h0}")
    if targets.k != defaults.k:
        raise ArityMismatch(f"arity mismatch: {targets.k} vs {defaults.k}")
    delta = (targets.stacked() - defaults.stacked()) / np.array([w0, h0])
    return delta.reshape(-1)


def crop_transform(box: OrientedBox, out_w: float, out_h: float) -> np.ndarray:
    """Homogeneous 3x3 map from image coordinates to crop coordinates.

    The box corners land on (0,0), (out_w,0), (out_w,out_h), (0,out_h);
    the box center lands on the crop center.
    """
    if not (out_w > 0 and out_h > 0):
        raise DegenerateBox(f"bad crop size {out_w} x {out_h}")
    u, v = box.axes()
    sw = out_w / box.w
    sh = out_h / box.h
    c = box.center
    m = np.array([
        [sw * u[0], sw * u[1], 0.5 * out_w - sw * float(u @ c)],
        [sh * v[0], sh * v[1], 0.5 * out_h - sh * float(v @ c)],
        [0.0, 0.0, 1.0],
    ])
    return m


def map_points(m: np.ndarray, pts, inverse: bool = False) -> np.ndarray:
    """Apply a homogeneous transform (or its inverse) to points."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise BadArity(f"expected 3x3 matrix, got {m.shape}")
    if abs(np.linalg.det(m[:2, :2])) <= 1e-12:
        raise SingularMatrix("transform is singular")
    if inverse:
        m = np.linalg.inv(m)
    p = as_points(pts)
    hom = np.column_stack([p, np.ones(len(p))]) @ m.T
    return hom[:, :2] / hom[:, 2:3]


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for CCW in a y-down frame is negative;
    callers use the absolute value)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _raster_mask(poly: np.ndarray, x0: float, y0: float, cell: float,
                 width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill of a polygon on a fixed integer grid."""
    mask = np.zeros((height, width), dtype=bool)
    xs = x0 + (np.arange(width) + 0.5) * cell
    a = poly
    b = np.roll(poly, -1, axis=0)
    for row in range(height):
        y = y0 + (row + 0.5) * cell
        straddle = (a[:, 1] <= y) != (b[:, 1] <= y)
        if not np.any(straddle):
            continue
        aa, bb = a[straddle], b[straddle]
        cross = aa[:, 0] + (y - aa[:, 1]) * (bb[:, 0] - aa[:, 0]) / (bb[:, 1] - aa[:, 1])
        cross.sort()
        mask[row] = (np.searchsorted(cross, xs) % 2) == 1
    return mask


def polygon_iou(a, b) -> float:
    """Intersection-over-union of two simple polygons.

    Computed by scanline rasterization on a shared integer grid scaled so
    the union bounding box's shorter side spans at least 256 cells; this is
    deterministic and symmetric in the arguments.
    """
    pa, pb = as_points(a), as_points(b)
    if len(pa) < 3 or len(pb) < 3:
        raise DegeneratePolygon("polygons need at least 3 vertices")
    if abs(polygon_area(pa)) <= 0.0 or abs(polygon_area(pb)) <= 0.0:
        raise DegeneratePolygon("polygon has zero area")
    both = np.vstack([pa, pb])
    lo = both.min(axis=0)
    hi = both.max(axis=0)
    short = max(float(min(hi - lo)), 1e-9)
    cell = short / 256.0
    width = int(np.ceil((hi[0] - lo[0]) / cell)) + 1
    height = int(np.ceil((hi[1] - lo[1]) / cell)) + 1
    ma = _raster_mask(pa, lo[0], lo[1], cell, width, height)
    mb = _raster_mask(pb, lo[0], lo[1], cell, width, height)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / union
