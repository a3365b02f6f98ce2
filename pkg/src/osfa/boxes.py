"""Axis-aligned box geometry: IoU, NMS, delta coding.

Boxes are (xmin, ymin, xmax, ymax) pixel-coordinate floats with
xmin < xmax and ymin < ymax; batched forms are [N, 4] arrays.
"""

from __future__ import annotations

import numpy as np


class BoxError(ValueError):
    pass


def check_box(box) -> np.ndarray:
    b = np.asarray(box, dtype=np.float64)
    if b.shape != (4,):
        raise BoxError(f"box must have 4 coordinates, got shape {b.shape}")
    if not (b[0] < b[2] and b[1] < b[3]):
        raise BoxError(f"degenerate box {b.tolist()} (need xmin < xmax and ymin < ymax)")
    return b


def iou(a, b) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    a = check_box(a)
    b = check_box(b)
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return float(inter / (area_a + area_b - inter))


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between [N, 4] and [M, 4] box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(inter > 0, inter / union, 0.0)
    return out


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float,
        max_keep: int | None = None) -> list[int]:
    """Greedy non-maximum suppression; returns kept indices, best first.

    The score sort is stable, so equal-score boxes keep their input order
    and the result is deterministic. ``max_keep`` stops early once enough
    survivors are collected.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if boxes.shape[0] != scores.shape[0]:
        raise BoxError(f"nms: {boxes.shape[0]} boxes vs {scores.shape[0]} scores")
    active = np.argsort(-scores, kind="stable")
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    kept: list[int] = []
    while active.size and (max_keep is None or len(kept) < max_keep):
        i = int(active[0])
        kept.append(i)
        rest = active[1:]
        if rest.size == 0:
            break
        ix = np.clip(np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0]), 0, None)
        iy = np.clip(np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1]), 0, None)
        inter = ix * iy
        union = areas[i] + areas[rest] - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            overlap = np.where(inter > 0, inter / union, 0.0)
        active = rest[overlap <= iou_threshold]
    return kept


def clip_boxes(boxes: np.ndarray, height: float, width: float) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    b[:, 0] = np.clip(b[:, 0], 0, width)
    b[:, 2] = np.clip(b[:, 2], 0, width)
    b[:, 1] = np.clip(b[:, 1], 0, height)
    b[:, 3] = np.clip(b[:, 3], 0, height)
    return b


def encode_deltas(anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """(dx, dy, dw, dh) regression targets mapping anchors onto targets."""
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + 0.5 * aw
    acy = anchors[:, 1] + 0.5 * ah
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tcx = targets[:, 0] + 0.5 * tw
    tcy = targets[:, 1] + 0.5 * th
    return np.stack(
        [(tcx - acx) / aw, (tcy - acy) / ah, np.log(tw / aw), np.log(th / ah)], axis=1
    )


def decode_deltas(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_deltas`. Log-scales are capped so a wild
    regression output cannot overflow the exponential."""
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + 0.5 * aw
    acy = anchors[:, 1] + 0.5 * ah
    dw = np.clip(deltas[:, 2], -6.0, 6.0)
    dh = np.clip(deltas[:, 3], -6.0, 6.0)
    cx = acx + deltas[:, 0] * aw
    cy = acy + deltas[:, 1] * ah
    w = aw * np.exp(dw)
    h = ah * np.exp(dh)
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
