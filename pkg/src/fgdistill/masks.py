"""Foreground/background and attention masks for one feature level of one image.

Ground-truth boxes live in image space; everything downstream works on the
feature grid, so boxes are projected through the level stride first.  The
teacher's masks are plain numpy arrays (no gradient); the same attention
functions run on student Tensors when a differentiable mask is needed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import Tensor, absolute, mul, reshape, softmax_t, tensor_mean

logger = logging.getLogger(__name__)


@dataclass
class BoxSet:
    """Axis-aligned ground-truth boxes (x1, y1, x2, y2) in image pixels."""

    boxes: list[tuple[float, float, float, float]]
    image_size: tuple[int, int]  # (height, width)

    def __post_init__(self):
        h, w = self.image_size
        clipped = []
        for x1, y1, x2, y2 in self.boxes:
            x1, x2 = max(0.0, float(x1)), min(float(w), float(x2))
            y1, y2 = max(0.0, float(y1)), min(float(h), float(y2))
            if not (x1 < x2 and y1 < y2):
                raise ParameterError(
                    f"box ({x1}, {y1}, {x2}, {y2}) is empty after clipping to {w}x{h}"
                )
            clipped.append((x1, y1, x2, y2))
        self.boxes = clipped


@dataclass(frozen=True)
class LevelGeometry:
    """Mapping between image pixels and one level's feature grid."""

    stride: int
    feature_h: int
    feature_w: int

    def __post_init__(self):
        if self.stride < 1 or self.feature_h < 1 or self.feature_w < 1:
            raise ParameterError(f"invalid level geometry {self}")


@dataclass(frozen=True)
class Rect:
    """Half-open cell rectangle [row0, row1) x [col0, col1) on a feature grid."""

    row0: int
    col0: int
    row1: int
    col1: int

    @property
    def area(self) -> int:
        return (self.row1 - self.row0) * (self.col1 - self.col0)


@dataclass
class MaskSet:
    """Per-level teacher masks: binary M, scale S, spatial and channel attention."""

    binary: np.ndarray  # (H, W) in {0, 1}
    scale: np.ndarray  # (H, W) positive
    spatial_attn: np.ndarray  # (H, W), sums to H*W
    channel_attn: np.ndarray  # (C,), sums to C


def _check_geometry(boxes: BoxSet, geom: LevelGeometry):
    img_h, img_w = boxes.image_size
    cover_h = geom.stride * geom.feature_h
    cover_w = geom.stride * geom.feature_w
    if cover_h < img_h or cover_w < img_w:
        raise ParameterError(
            f"grid {geom.feature_h}x{geom.feature_w} at stride {geom.stride} "
            f"does not cover a {img_h}x{img_w} image"
        )
    if cover_h >= img_h + geom.stride or cover_w >= img_w + geom.stride:
        raise ParameterError(
            f"grid {geom.feature_h}x{geom.feature_w} at stride {geom.stride} "
            f"overhangs a {img_h}x{img_w} image by a full stride"
        )


def project_boxes(boxes: BoxSet, geom: LevelGeometry, stats: dict | None = None) -> list[Rect]:
    """Map image-space boxes to feature-cell rects (floor start, ceil end).

    Degenerate projections are dropped; when `stats` is given, the number of
    dropped boxes is recorded under "dropped".
    """
    _check_geometry(boxes, geom)
    s = float(geom.stride)
    rects = []
    dropped = 0
    for x1, y1, x2, y2 in boxes.boxes:
        r = Rect(
            row0=max(0, int(np.floor(y1 / s))),
            col0=max(0, int(np.floor(x1 / s))),
            row1=min(geom.feature_h, int(np.ceil(y2 / s))),
            col1=min(geom.feature_w, int(np.ceil(x2 / s))),
        )
        if r.row1 > r.row0 and r.col1 > r.col0:
            rects.append(r)
        else:
            dropped += 1
    if dropped:
        logger.debug("project_boxes dropped %d degenerate projections", dropped)
    if stats is not None:
        stats["dropped"] = dropped
    return rects


def binary_mask(rects: list[Rect], h: int, w: int) -> np.ndarray:
    """M[i,j] = 1 iff cell (i,j) is covered by any rect."""
    m = np.zeros((h, w), dtype=np.float64)
    for r in rects:
        m[r.row0 : r.row1, r.col0 : r.col1] = 1.0
    return m


def scale_mask(rects: list[Rect], h: int, w: int) -> np.ndarray:
    """Per-cell scale weights: 1/(box area) inside boxes, 1/N_bg outside.

    A cell covered by several rects takes the smallest rect's area (ties go
    to the lowest rect index).  With no background cells the background
    value degenerates to 0 and a warning is logged.
    """
    best_area = np.full((h, w), np.inf)
    for r in rects:
        region = best_area[r.row0 : r.row1, r.col0 : r.col1]
        np.minimum(region, float(r.area), out=region)
    covered = np.isfinite(best_area)
    n_bg = int((~covered).sum())
    if n_bg == 0 and covered.any():
        logger.warning("scale_mask: no background cells; bg weight set to 0")
    bg_value = 1.0 / n_bg if n_bg > 0 else 0.0
    s = np.full((h, w), bg_value)
    s[covered] = 1.0 / best_area[covered]
    return s


def _single_image(f: Tensor) -> Tensor:
    """Accept (C,H,W) or (1,C,H,W); return (C,H,W)."""
    if f.ndim == 4:
        if f.shape[0] != 1:
            raise DimensionError(
                f"per-image mask functions need batch 1, got {f.shape}"
            )
        return reshape(f, f.shape[1:])
    if f.ndim != 3:
        raise DimensionError(f"expected (C,H,W) or (1,C,H,W), got {f.shape}")
    return f


def spatial_attention_map(f) -> Tensor:
    """Per-pixel mean of |F| across channels; (H, W)."""
    f = _single_image(f if isinstance(f, Tensor) else Tensor(f))
    return tensor_mean(absolute(f), axes=0)


def channel_attention_map(f) -> Tensor:
    """Per-channel mean of |F| across all pixels; (C,)."""
    f = _single_image(f if isinstance(f, Tensor) else Tensor(f))
    return tensor_mean(absolute(f), axes=(1, 2))


def attention_masks(g_s: Tensor, g_c: Tensor, temperature: float) -> tuple[Tensor, Tensor]:
    """Temperature-softmax attention masks, rescaled so each sums to its count.

    Spatial mask: H*W * softmax(flatten(G_s)/T), reshaped back to (H, W).
    Channel mask: C * softmax(G_c/T).
    """
    if temperature <= 0.0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    h, w = g_s.shape
    n = h * w
    flat = reshape(g_s, (n,))
    a_s = reshape(mul(softmax_t(flat, axis=0, temperature=temperature), float(n)), (h, w))
    c = g_c.shape[0]
    a_c = mul(softmax_t(g_c, axis=0, temperature=temperature), float(c))
    return a_s, a_c


def write_box_file(path: str, boxes: BoxSet):
    """Box interchange format: header "H W", then one "x1 y1 x2 y2" per box."""
    from .fileio import atomic_write_text, format_float

    h, w = boxes.image_size
    lines = [f"{h} {w}"]
    lines.extend(" ".join(format_float(v) for v in box) for box in boxes.boxes)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_box_file(path: str) -> BoxSet:
    with open(path) as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines:
        raise ParameterError(f"box file {path} is empty")
    try:
        h, w = (int(v) for v in lines[0].split())
        boxes = [tuple(float(v) for v in line.split()) for line in lines[1:]]
    except ValueError:
        raise ParameterError(f"box file {path} is malformed") from None
    for box in boxes:
        if len(box) != 4:
            raise ParameterError(f"box file {path}: expected 4 floats per line")
    return BoxSet(boxes, (h, w))


def build_masks(
    f_teacher, boxes: BoxSet, geom: LevelGeometry, temperature: float
) -> MaskSet:
    """Assemble the full mask set for one level from teacher features only."""
    f = _single_image(f_teacher if isinstance(f_teacher, Tensor) else Tensor(f_teacher))
    teacher_const = Tensor(f.data)  # attention masks carry no gradient
    h, w = geom.feature_h, geom.feature_w
    if teacher_const.shape[1:] != (h, w):
        raise DimensionError(
            f"teacher features {teacher_const.shape} do not match grid {h}x{w}"
        )
    rects = project_boxes(boxes, geom)
    a_s, a_c = attention_masks(
        spatial_attention_map(teacher_const),
        channel_attention_map(teacher_const),
        temperature,
    )
    return MaskSet(
        binary=binary_mask(rects, h, w),
        scale=scale_mask(rects, h, w),
        spatial_attn=a_s.data,
        channel_attn=a_c.data,
    )
