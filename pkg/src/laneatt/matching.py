"""Lane distance, lane NMS and training target assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import Lane
from .errors import ConfigError

POSITIVE, NEGATIVE, IGNORED = 1, 0, -1


def lane_distance(a: Lane, b: Lane) -> float:
    """Mean absolute x difference over the common index range, ``inf`` if disjoint."""
    s = max(a.s, b.s)
    e = min(a.e, b.e)
    if e < s:
        return float("inf")
    return float(np.mean(np.abs(a.xs[s : e + 1] - b.xs[s : e + 1])))


def _stack(lanes):
    xs = np.array([np.nan_to_num(l.xs) for l in lanes], dtype=np.float64)
    s = np.array([l.s for l in lanes], dtype=np.int64)
    e = np.array([l.e for l in lanes], dtype=np.int64)
    return xs, s, e


def pairwise_distances(xa, sa, ea, xb, sb, eb):
    """Lane distances between every row of ``a`` and every row of ``b``."""
    n = xa.shape[1]
    idx = np.arange(n)
    lo = np.maximum(sa[:, None], sb[None, :])
    hi = np.minimum(ea[:, None], eb[None, :])
    mask = (idx[None, None, :] >= lo[:, :, None]) & (idx[None, None, :] <= hi[:, :, None])
    diff = np.abs(xa[:, None, :] - xb[None, :, :])
    count = mask.sum(axis=2)
    total = np.where(mask, diff, 0.0).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = total / count
    return np.where(count > 0, d, np.inf)


def distance_matrix(lanes_a, lanes_b):
    if not lanes_a or not lanes_b:
        return np.full((len(lanes_a), len(lanes_b)), np.inf)
    return pairwise_distances(*_stack(lanes_a), *_stack(lanes_b))


def nms_arrays(xs, starts, ends, scores, distance_threshold, confidence_threshold=None,
               max_keep=None, ids=None):
    """Greedy lane NMS on stacked proposals. Returns kept row indices in selection order.

    Highest score first, ties by lower id. A kept proposal suppresses every
    remaining proposal closer than ``distance_threshold``.
    """
    if distance_threshold <= 0:
        raise ValueError("distance_threshold must be positive")
    n = len(scores)
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.arange(n) if ids is None else np.asarray(ids)
    alive = np.ones(n, dtype=bool)
    if confidence_threshold is not None:
        alive &= scores >= confidence_threshold
    xs = np.nan_to_num(np.asarray(xs, dtype=np.float64))
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    grid = np.arange(xs.shape[1]) if n else np.arange(0)
    keep = []
    for i in np.lexsort((ids, -scores)):
        if not alive[i]:
            continue
        keep.append(int(i))
        if max_keep is not None and len(keep) >= max_keep:
            break
        cand = np.flatnonzero(alive)
        lo = np.maximum(starts[cand], starts[i])
        hi = np.minimum(ends[cand], ends[i])
        mask = (grid[None, :] >= lo[:, None]) & (grid[None, :] <= hi[:, None])
        cnt = mask.sum(axis=1)
        tot = np.where(mask, np.abs(xs[cand] - xs[i]), 0.0).sum(axis=1)
        close = (cnt > 0) & (tot / np.maximum(cnt, 1) < distance_threshold)
        alive[cand[close]] = False
        alive[i] = False
    return keep


def nms(proposals, distance_threshold=50.0, confidence_threshold=0.5, max_keep=None):
    """Greedy NMS over ``[(lane, score), ...]`` or ``[(lane, score, anchor_id), ...]``.

    Returns the kept proposals (same tuples) in selection order. Without
    explicit ids the list position serves as the anchor id.
    """
    if not proposals:
        return []
    xs, s, e = _stack([p[0] for p in proposals])
    scores = [p[1] for p in proposals]
    ids = [p[2] if len(p) > 2 else k for k, p in enumerate(proposals)]
    keep = nms_arrays(xs, s, e, scores, distance_threshold, confidence_threshold, max_keep, ids)
    return [proposals[i] for i in keep]


@dataclass
class AssignmentResult:
    """Per-anchor labels plus regression targets for the positives.

    ``labels`` holds ``POSITIVE`` / ``NEGATIVE`` / ``IGNORED``. Rows of the
    ``target_*`` arrays follow ``positives`` (ascending anchor index).
    """

    labels: np.ndarray
    gt_index: np.ndarray
    min_distance: np.ndarray
    positives: np.ndarray
    target_class: np.ndarray
    target_offsets: np.ndarray
    target_mask: np.ndarray
    target_length: np.ndarray
    reg_start: np.ndarray
    reg_end: np.ndarray

    @property
    def negatives(self):
        return np.flatnonzero(self.labels == NEGATIVE)

    @property
    def ignored(self):
        return np.flatnonzero(self.labels == IGNORED)


def assign_targets(anchors_as_lanes, ground_truths, tau_p=15.0, tau_n=20.0):
    """Label anchors by their distance to the nearest ground truth.

    Positive below ``tau_p``, negative above ``tau_n``, ignored in between.
    Regression targets of a positive cover indices ``max(s_anchor, s_gt)``
    through ``e_gt`` and the length target is the size of that range.
    """
    if tau_p > tau_n:
        raise ConfigError("matching.tau_p", f"tau_p={tau_p} exceeds tau_n={tau_n}")
    n = len(anchors_as_lanes)
    n_pts = anchors_as_lanes[0].n_pts if n else 0
    d = distance_matrix(anchors_as_lanes, list(ground_truths))
    if d.shape[1]:
        nearest = np.argmin(d, axis=1)
        dmin = d[np.arange(n), nearest]
    else:
        nearest = np.full(n, -1)
        dmin = np.full(n, np.inf)
    labels = np.full(n, IGNORED, dtype=np.int64)
    labels[dmin < tau_p] = POSITIVE
    labels[dmin > tau_n] = NEGATIVE
    pos = np.flatnonzero(labels == POSITIVE)
    gt_index = np.where(labels == POSITIVE, nearest, -1)

    p = len(pos)
    offsets = np.zeros((p, n_pts))
    mask = np.zeros((p, n_pts), dtype=bool)
    length = np.zeros(p)
    start = np.zeros(p, dtype=np.int64)
    end = np.zeros(p, dtype=np.int64)
    cls = np.ones(p, dtype=np.int64)
    for k, a in enumerate(pos):
        anchor = anchors_as_lanes[a]
        gt = ground_truths[nearest[a]]
        s = max(anchor.s, gt.s)
        e = gt.e
        start[k], end[k] = s, e
        offsets[k, s : e + 1] = gt.xs[s : e + 1] - anchor.xs[s : e + 1]
        mask[k, s : e + 1] = True
        length[k] = e - s + 1
        if gt.category is not None:
            cls[k] = gt.category
    return AssignmentResult(labels, gt_index, dmin, pos, cls, offsets, mask, length, start, end)
