"""Anchor-free detector head post-processing.

Turns raw per-stride grid tensors into scored, class-labelled boxes:
grid decode with exponential size terms, objectness/class score fusion,
confidence filtering, and class-aware greedy NMS. Everything here is a
pure function; decoding the same tensors twice gives identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DecodeError, GeometryError
from .tensor_stream import RawTensorSet

# Channel layout of one grid cell.
_CH_TX, _CH_TY, _CH_TW, _CH_TH, _CH_OBJ = 0, 1, 2, 3, 4
_CH_CLASSES = 5


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, corners ordered x1<=x2, y1<=y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"box coordinate {name} is not finite")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(
                f"box corners out of order: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def area(self) -> float:
        return self.width * self.height

    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def clipped(self, image_width: float, image_height: float) -> "BoundingBox":
        return BoundingBox(
            min(max(self.x1, 0.0), image_width),
            min(max(self.y1, 0.0), image_height),
            min(max(self.x2, 0.0), image_width),
            min(max(self.y2, 0.0), image_height),
        )

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Detection:
    """One decoded object: box, fused confidence, class label."""

    box: BoundingBox
    score: float
    class_id: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")


@dataclass(frozen=True)
class DecodeConfig:
    """Thresholds and class wiring for post-processing.

    Class ids follow the detector's training order; the defaults match the
    leading COCO indices (person=0, train=6).
    """

    strides: tuple[int, int, int] = (8, 16, 32)
    conf_threshold: float = 0.30
    nms_iou_threshold: float = 0.45
    person_class_id: int = 0
    train_class_id: int = 6

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.strides) != 3 or not (0 < self.strides[0] < self.strides[1] < self.strides[2]):
            raise ValueError(f"strides must be 3 strictly increasing values, got {self.strides}")
        for name in ("conf_threshold", "nms_iou_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.person_class_id < 0 or self.train_class_id < 0:
            raise ValueError("class ids must be >= 0")
        if self.person_class_id == self.train_class_id:
            raise ValueError("person and train class ids must differ")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable in both tails; plain 1/(1+exp(-x)) overflows for large -x.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def decode_head(tensor: np.ndarray, stride: int, conf_threshold: float) -> list[Detection]:
    """Decode one stride level's grid tensor into detections.

    Cell (gx, gy) holding raw values (tx, ty, tw, th, obj, class logits...)
    maps to a box centred at ((gx+tx)*stride, (gy+ty)*stride) with size
    (exp(tw)*stride, exp(th)*stride). The fused score is
    sigmoid(obj) * sigmoid(best class logit); the class label is the argmax
    over class logits, lowest id winning ties. Only detections with
    score >= conf_threshold are returned, in row-major cell order.
    """
    arr = np.asarray(tensor)
    if arr.ndim != 3 or arr.shape[2] < _CH_CLASSES + 1:
        raise GeometryError(
            f"head tensor must be (grid_h, grid_w, >=6 channels), got shape {arr.shape}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    finite = np.isfinite(arr)
    if not finite.all():
        gy, gx, ch = (int(i) for i in np.argwhere(~finite)[0])
        raise DecodeError(
            f"non-finite value at cell (gx={gx}, gy={gy}), channel {ch}"
        )

    arr = arr.astype(np.float64)
    obj = _sigmoid(arr[..., _CH_OBJ])
    class_logits = arr[..., _CH_CLASSES:]
    class_ids = np.argmax(class_logits, axis=-1)
    best_logits = np.max(class_logits, axis=-1)
    scores = obj * _sigmoid(best_logits)

    keep_rows, keep_cols = np.nonzero(scores >= conf_threshold)
    detections: list[Detection] = []
    for gy, gx in zip(keep_rows, keep_cols):
        tx, ty, tw, th = arr[gy, gx, _CH_TX:_CH_OBJ]
        cx = (gx + tx) * stride
        cy = (gy + ty) * stride
        w = math.exp(tw) * stride
        h = math.exp(th) * stride
        detections.append(
            Detection(
                box=BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                score=float(scores[gy, gx]),
                class_id=int(class_ids[gy, gx]),
            )
        )
    return detections


def decode_all(frame: RawTensorSet, config: DecodeConfig) -> list[Detection]:
    """Decode every stride level of a frame and clip boxes to the image.

    Output order is deterministic: stride levels in config order, cells in
    row-major order within each level.
    """
    detections: list[Detection] = []
    for level, (tensor, stride) in enumerate(zip(frame.outputs, config.strides)):
        expected = (frame.image_height // stride, frame.image_width // stride)
        if frame.image_height % stride or frame.image_width % stride:
            raise GeometryError(
                f"stride {stride} does not divide image "
                f"{frame.image_width}x{frame.image_height}"
            )
        if tensor.shape[:2] != expected:
            raise GeometryError(
                f"frame {frame.frame_index} level {level}: grid {tensor.shape[:2]} "
                f"does not match stride {stride} over "
                f"{frame.image_width}x{frame.image_height} (expected {expected})"
            )
        try:
            level_dets = decode_head(tensor, stride, config.conf_threshold)
        except DecodeError as exc:
            raise DecodeError(f"frame {frame.frame_index}, level {level}: {exc}") from exc
        for det in level_dets:
            detections.append(
                Detection(
                    box=det.box.clipped(frame.image_width, frame.image_height),
                    score=det.score,
                    class_id=det.class_id,
                )
            )
    return detections


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 when the union is empty."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Class-aware greedy non-maximum suppression.

    Candidates are visited by descending score (ties: lower class id, then
    earlier position in the input); a candidate is kept unless an already
    kept detection of the same class overlaps it with IoU strictly above
    the threshold. Suppression never crosses class boundaries.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    order = sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].score, detections[i].class_id, i),
    )
    kept: list[Detection] = []
    for i in order:
        candidate = detections[i]
        suppressed = any(
            keeper.class_id == candidate.class_id
            and iou(keeper.box, candidate.box) > iou_threshold
            for keeper in kept
        )
        if not suppressed:
            kept.append(candidate)
    return kept


def filter_class(detections: Iterable[Detection], class_id: int) -> list[Detection]:
    """Detections of one class, input order preserved."""
    return [d for d in detections if d.class_id == class_id]


def _round6(value: float) -> float:
    return round(float(value), 6)


def detections_to_record(frame_index: int, detections: Sequence[Detection]) -> dict:
    """JSON-serializable per-frame record; floats rounded to 6 decimals."""
    return {
        "frame": frame_index,
        "detections": [
            {
                "box": [_round6(v) for v in det.box.as_list()],
                "score": _round6(det.score),
                "class": det.class_id,
            }
            for det in detections
        ],
    }


def detections_from_record(record: dict) -> tuple[int, list[Detection]]:
    """Inverse of detections_to_record (modulo the 6-decimal rounding)."""
    detections = [
        Detection(box=BoundingBox(*entry["box"]), score=entry["score"], class_id=entry["class"])
        for entry in record["detections"]
    ]
    return int(record["frame"]), detections
