"""Synthetic curved-text scenes, annotations and training-target assembly.

A scene is a grayscale canvas with 1-3 words painted along gently curved
baselines.  Each instance is annotated with its two long sides (side_a on
top, side_b below, co-oriented) and its transcription.  Oracle proposals
stand in for a detection stage: jittered minimum oriented rectangles of
the ground truth.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import geometry, rectify
from .errors import BaselineTooShort, PlacementFailure
from .geometry import BoundaryPointSet, OrientedBox
from .glyphs import GLYPH_COLS, GLYPH_ROWS, GLYPHS

log = logging.getLogger(__name__)

DEFAULT_VOCAB = [
    "Apple", "Berry42", "CLOUD", "delta", "Echo7", "forest", "Glint",
    "hazel9", "Indigo", "jolt", "Kepler", "lunar3", "MANGO", "nimbus",
    "Onyx", "pixel8", "QUARTZ", "raven", "Sigma5", "topaz",
]

# glyph band: 7 rows plus one row of margin above and below
_BAND_ROWS = GLYPH_ROWS + 2
_ADVANCE_CELLS = GLYPH_COLS + 1


@dataclass
class Instance:
    side_a: np.ndarray  # (M, 2)
    side_b: np.ndarray
    text: str

    def polygon(self) -> np.ndarray:
        return np.concatenate([self.side_a, self.side_b[::-1]])


@dataclass
class Annotation:
    image: str
    instances: list


@dataclass
class DatasetConfig:
    count: int = 200
    image_h: int = 96
    image_w: int = 192
    min_words: int = 1
    max_words: int = 3
    vocab: list = field(default_factory=lambda: list(DEFAULT_VOCAB))
    curvature_deg: float = 60.0
    rotation_deg: float = 45.0
    min_height: float = 12.0
    max_height: float = 18.0


@dataclass
class TrainingExample:
    crop: np.ndarray              # (H, W, 1) rotated-aligned crop
    box: OrientedBox              # proposal used for the crop
    defaults: BoundaryPointSet    # default points in the crop frame
    target_offsets: np.ndarray    # (4K,)
    target_text: np.ndarray       # symbol indices ending in EOS
    crop_points: BoundaryPointSet  # resampled GT mapped into the crop frame
    image_points: BoundaryPointSet  # resampled GT in the image frame


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _arclength_param(points: np.ndarray):
    """Return callables pos(u) and tangent(u) for arc-length u on a polyline."""
    cum = geometry.polyline_lengths(points)

    def pos(u):
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        return np.column_stack([np.interp(u, cum, points[:, 0]),
                                np.interp(u, cum, points[:, 1])])

    def tangent(u):
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        du = max(cum[-1] * 1e-4, 1e-6)
        a = pos(np.clip(u - du, 0, cum[-1]))
        b = pos(np.clip(u + du, 0, cum[-1]))
        d = b - a
        norm = np.linalg.norm(d, axis=1, keepdims=True)
        return d / np.maximum(norm, 1e-12)

    return pos, tangent, float(cum[-1])


def word_sides(text: str, baseline, height: float):
    """Side polylines (top, bottom) for a word laid along a baseline.

    The baseline polyline is the word's centerline; sides are offset by
    height/2 along the local normal and sampled at glyph boundaries.
    """
    pos, tangent, total = _arclength_param(geometry.as_points(baseline))
    cell = height / _BAND_ROWS
    advance = cell * _ADVANCE_CELLS
    needed = advance * len(text)
    if total + 1e-9 < needed:
        raise BaselineTooShort(f"baseline {total:.1f}px too short for {text!r} "
                               f"({needed:.1f}px needed)")
    u = np.arange(len(text) + 1) * advance
    c = pos(u)
    t = tangent(u)
    n = np.column_stack([-t[:, 1], t[:, 0]])  # points "down" for a ltr baseline
    side_a = c - 0.5 * height * n
    side_b = c + 0.5 * height * n
    return side_a, side_b


def render_word(text: str, baseline, height: float, canvas: np.ndarray):
    """Paint a word along a baseline; returns (side_a, side_b).

    Glyph pixels are supersampled, mapped through the local baseline frame
    and composited max-wise onto the (H, W) canvas.
    """
    side_a, side_b = word_sides(text, baseline, height)
    pos, tangent, _ = _arclength_param(geometry.as_points(baseline))
    cell = height / _BAND_ROWS
    advance = cell * _ADVANCE_CELLS
    h, w = canvas.shape[:2]
    sub = max(2, int(np.ceil(cell)) + 1)
    frac = (np.arange(sub) + 0.5) / sub
    for gi, ch in enumerate(text):
        bitmap = GLYPHS[ch]
        rows, cols = np.nonzero(bitmap)
        if len(rows) == 0:
            continue
        # sub x sub sample points inside each lit cell
        uu = (gi * _ADVANCE_CELLS + 0.5 + cols[:, None] + frac[None, :]) * cell
        vv = (1.0 + rows[:, None] + frac[None, :]) * cell - 0.5 * height
        uf = np.broadcast_to(uu[:, :, None], (len(rows), sub, sub)).ravel()
        vf = np.broadcast_to(vv[:, None, :], (len(rows), sub, sub)).ravel()
        c = pos(uf)
        t = tangent(uf)
        n = np.column_stack([-t[:, 1], t[:, 0]])
        p = c + vf[:, None] * n
        xi = np.floor(p[:, 0]).astype(int)
        yi = np.floor(p[:, 1]).astype(int)
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        canvas[yi[ok], xi[ok]] = 1.0
    return side_a, side_b


def _make_baseline(start, direction_rad, length, bend_rad, n_samples=64):
    """Chord-plus-sine-deflection centerline approximating a circular arc."""
    d = np.array([np.cos(direction_rad), np.sin(direction_rad)])
    n = np.array([-d[1], d[0]])
    amp = length * bend_rad / 8.0  # sagitta of an arc with this bend angle
    t = np.linspace(0.0, 1.0, n_samples)
    return (np.asarray(start)[None, :] + t[:, None] * length * d[None, :]
            + (amp * np.sin(np.pi * t))[:, None] * n[None, :])


def _try_place(rng, cfg: DatasetConfig, word: str, taken):
    """Sample a pose for a word; None if it collides or leaves the image."""
    height = rng.uniform(cfg.min_height, cfg.max_height)
    theta = np.deg2rad(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    bend = np.deg2rad(rng.uniform(-cfg.curvature_deg, cfg.curvature_deg))
    cell = height / _BAND_ROWS
    length = cell * _ADVANCE_CELLS * len(word) * 1.02
    start = np.array([rng.uniform(0, cfg.image_w), rng.uniform(0, cfg.image_h)])
    baseline = _make_baseline(start, theta, length, bend)
    try:
        side_a, side_b = word_sides(word, baseline, height)
    except BaselineTooShort:
        return None
    pts = np.vstack([side_a, side_b])
    margin = 2.0
    if (pts[:, 0].min() < margin or pts[:, 0].max() > cfg.image_w - margin
            or pts[:, 1].min() < margin or pts[:, 1].max() > cfg.image_h - margin):
        return None
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    for plo, phi in taken:
        if (lo[0] < phi[0] and hi[0] > plo[0] and lo[1] < phi[1] and hi[1] > plo[1]):
            return None
    return baseline, height, (lo, hi)


def generate_scene(rng, cfg: DatasetConfig):
    """One canvas plus its instances; deterministic in the passed rng."""
    canvas = np.zeros((cfg.image_h, cfg.image_w))
    n_words = int(rng.integers(cfg.min_words, cfg.max_words + 1))
    instances = []
    taken = []
    for _ in range(n_words):
        word = cfg.vocab[int(rng.integers(len(cfg.vocab)))]
        placed = None
        for _ in range(100):
            placed = _try_place(rng, cfg, word, taken)
            if placed is not None:
                break
        if placed is None:
            continue
        baseline, height, bbox = placed
        side_a, side_b = render_word(word, baseline, height, canvas)
        taken.append(bbox)
        instances.append(Instance(side_a=side_a, side_b=side_b, text=word))
    if not instances:
        raise PlacementFailure("no instance could be placed")
    return canvas, instances


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------

def save_image(path, canvas: np.ndarray):
    img = np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


def load_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    return arr[:, :, None]


def gen_dataset(out_dir, cfg: DatasetConfig, seed: int):
    """Write images/NNNN.png plus annotations.jsonl; bit-reproducible."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    records = []
    for i in range(cfg.count):
        rng = np.random.default_rng(seed + i)
        try:
            canvas, instances = generate_scene(rng, cfg)
        except PlacementFailure:
            log.warning("image %04d skipped: placement failed", i)
            continue
        name = f"{i:04d}.png"
        save_image(os.path.join(img_dir, name), canvas)
        records.append({
            "image": name,
            "instances": [
                {"side_a": inst.side_a.tolist(),
                 "side_b": inst.side_b.tolist(),
                 "text": inst.text}
                for inst in instances
            ],
        })
    tmp = os.path.join(out_dir, ".annotations.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    os.replace(tmp, os.path.join(out_dir, "annotations.jsonl"))
    return records


def load_annotations(dataset_dir):
    """Parse annotations.jsonl into Annotation records."""
    out = []
    with open(os.path.join(dataset_dir, "annotations.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(Annotation(
                image=rec["image"],
                instances=[Instance(side_a=np.array(i["side_a"], dtype=np.float64),
                                    side_b=np.array(i["side_b"], dtype=np.float64),
                                    text=i["text"])
                           for i in rec["instances"]],
            ))
    return out


# ---------------------------------------------------------------------------
# training targets and oracle proposals
# ---------------------------------------------------------------------------

def resample_instance(inst: Instance, k: int) -> BoundaryPointSet:
    """Equidistant K-point resampling of both long sides."""
    return BoundaryPointSet(
        side_a=geometry.resample_polyline(inst.side_a, k),
        side_b=geometry.resample_polyline(inst.side_b, k),
    )


def jitter_box(box: OrientedBox, jitter: float, rng) -> OrientedBox:
    """Perturb center, scale and angle of a proposal box."""
    if jitter <= 0:
        return box
    cx = box.cx + rng.uniform(-jitter, jitter) * box.w
    cy = box.cy + rng.uniform(-jitter, jitter) * box.h
    w = box.w * rng.uniform(1 - jitter, 1 + jitter)
    h = box.h * rng.uniform(1 - jitter, 1 + jitter)
    angle = box.angle + rng.uniform(-1, 1) * jitter * np.deg2rad(15.0)
    return OrientedBox(cx, cy, w, h, angle)


def _axis_aligned_cover(box: OrientedBox) -> OrientedBox:
    corners = box.corners()
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    ext = np.maximum(hi - lo, 1e-6)
    c = 0.5 * (lo + hi)
    return OrientedBox(float(c[0]), float(c[1]), float(ext[0]), float(ext[1]), 0.0)


def oracle_proposals(instances, jitter, rng, k=7, axis_aligned=False):
    """Jittered GT oriented boxes replacing a learned proposal stage."""
    boxes = []
    for inst in instances:
        bp = resample_instance(inst, k)
        box = geometry.minimum_oriented_rect(bp.stacked())
        box = jitter_box(box, jitter, rng)
        if axis_aligned:
            box = _axis_aligned_cover(box)
        boxes.append(box)
    return boxes


def orient_crop_points(pts: BoundaryPointSet) -> BoundaryPointSet:
    """Normalize side assignment/direction in the crop frame.

    side_a is the side with smaller mean y (ties: smaller mean x); both
    sides run left to right.
    """
    a, b = pts.side_a, pts.side_b
    if a[0, 0] > a[-1, 0]:
        a, b = a[::-1], b[::-1]
    key_a = (round(float(a[:, 1].mean()), 9), round(float(a[:, 0].mean()), 9))
    key_b = (round(float(b[:, 1].mean()), 9), round(float(b[:, 0].mean()), 9))
    if key_b < key_a:
        a, b = b, a
    return BoundaryPointSet(a.copy(), b.copy())


def make_training_example(image, inst: Instance, k: int, crop_h: int, crop_w: int,
                          jitter: float, rng, box: OrientedBox = None) -> TrainingExample:
    """Assemble one boundary-regression example from a GT instance."""
    bp = resample_instance(inst, k)
    if box is None:
        box = geometry.minimum_oriented_rect(bp.stacked())
        box = jitter_box(box, jitter, rng)
    crop = rectify.rotated_roi_align(image, box, crop_h, crop_w)
    m = geometry.crop_transform(box, crop_w, crop_h)
    in_crop = BoundaryPointSet(
        side_a=geometry.map_points(m, bp.side_a),
        side_b=geometry.map_points(m, bp.side_b),
    )
    in_crop = orient_crop_points(in_crop)
    defaults = geometry.default_points(crop_w, crop_h, k)
    offsets = geometry.encode_offsets(defaults, in_crop, crop_w, crop_h)
    from .model import CHARSET  # local import to avoid a cycle
    return TrainingExample(
        crop=crop, box=box, defaults=defaults, target_offsets=offsets,
        target_text=CHARSET.encode(inst.text), crop_points=in_crop,
        image_points=bp,
    )
