"""TuSimple- and CULane-style lane metrics and the FPS/MAC benchmark."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import numerics as nx
from .anchors import lane_ys
from .errors import ConfigError, DataError


@dataclass
class MetricsReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    accuracy: float | None = None
    per_category: dict = field(default_factory=dict)
    fps: float | None = None
    macs: int | None = None
    n_predictions: int = 0
    n_ground_truth: int = 0

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def fpr(self):
        return self.fp / max(1, self.n_predictions)

    @property
    def fnr(self):
        return self.fn / max(1, self.n_ground_truth)

    def as_dict(self):
        out = {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "fpr": self.fpr,
            "fnr": self.fnr,
        }
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        if self.fps is not None:
            out["fps"] = self.fps
        if self.macs is not None:
            out["macs"] = self.macs
        return out

    def to_text(self):
        """``key = value`` lines; per-category entries are prefixed ``category.<name>.``."""
        lines = [f"{k} = {v}" for k, v in self.as_dict().items()]
        for name, rep in sorted(self.per_category.items()):
            lines.extend(f"category.{name}.{k} = {v}" for k, v in rep.as_dict().items())
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        rows = [("all", self.as_dict())] + [(n, r.as_dict()) for n, r in sorted(self.per_category.items())]
        keys = list(rows[0][1])
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["split"] + keys)
        for name, d in rows:
            writer.writerow([name] + [d.get(k, "") for k in keys])
        return buf.getvalue()


def _check_aligned(predictions, ground_truth):
    if isinstance(predictions, dict) or isinstance(ground_truth, dict):
        if not isinstance(predictions, dict) or not isinstance(ground_truth, dict):
            raise DataError("predictions and ground truth must both be keyed by image id")
        if set(predictions) != set(ground_truth):
            missing = sorted(set(ground_truth) ^ set(predictions))[:5]
            raise DataError(f"image ids differ between predictions and ground truth: {missing}")
        keys = sorted(ground_truth)
        return [predictions[k] for k in keys], [ground_truth[k] for k in keys]
    if len(predictions) != len(ground_truth):
        raise DataError(f"{len(predictions)} prediction images vs {len(ground_truth)} ground truth")
    return list(predictions), list(ground_truth)


# ---------------------------------------------------------------- TuSimple


def _point_hits(pred, gt, point_tol):
    """Number of ``gt`` grid points matched within ``point_tol`` by ``pred``."""
    idx = np.arange(gt.s, gt.e + 1)
    covered = (idx >= pred.s) & (idx <= pred.e)
    dx = np.abs(np.nan_to_num(pred.xs[idx], nan=np.inf) - gt.xs[idx])
    return int(np.sum(covered & (dx < point_tol)))


def tusimple_score(predictions, ground_truth, point_tol=20.0, lane_acc_threshold=0.85,
                   mode="pooled"):
    """Point accuracy plus lane-level TP/FP/FN.

    Predictions and ground truths are paired greedily by descending point
    accuracy, each lane used once. ``mode="pooled"`` sums correct and total
    points over all images; ``mode="per_image"`` averages per-image ratios.
    """
    if mode not in ("pooled", "per_image"):
        raise ConfigError("eval.mode", f"unknown accuracy mode {mode!r}")
    preds, gts = _check_aligned(predictions, ground_truth)
    rep = MetricsReport()
    correct_total, points_total, ratios = 0, 0, []
    for p_lanes, g_lanes in zip(preds, gts):
        rep.n_predictions += len(p_lanes)
        rep.n_ground_truth += len(g_lanes)
        sizes = [g.e - g.s + 1 for g in g_lanes]
        hits = np.array([[_point_hits(p, g, point_tol) for g in g_lanes] for p in p_lanes]).reshape(
            len(p_lanes), len(g_lanes)
        )
        acc = hits / np.maximum(np.array(sizes, dtype=np.float64), 1)[None, :] if g_lanes else hits
        used_p, used_g = set(), set()
        correct = 0
        tp = 0
        if hits.size:
            order = sorted(
                ((acc[i, j], i, j) for i in range(len(p_lanes)) for j in range(len(g_lanes))),
                key=lambda t: (-t[0], t[1], t[2]),
            )
            for a, i, j in order:
                if i in used_p or j in used_g:
                    continue
                used_p.add(i)
                used_g.add(j)
                correct += hits[i, j]
                if a > lane_acc_threshold:
                    tp += 1
        rep.tp += tp
        rep.fp += len(p_lanes) - tp
        rep.fn += len(g_lanes) - tp
        correct_total += correct
        points_total += sum(sizes)
        if sizes:
            ratios.append(correct / sum(sizes))
    if mode == "pooled":
        rep.accuracy = correct_total / points_total if points_total else 1.0
    else:
        rep.accuracy = float(np.mean(ratios)) if ratios else 1.0
    return rep


# ---------------------------------------------------------------- CULane


def rasterize_lane(lane, image_size, line_width=30):
    """Boolean ``[H, W]`` mask of a thick polyline through the lane's grid points.

    Row ``r`` is covered where its centre height lies within the lane's extent;
    in that row, columns whose centres fall in ``[x - hw, x + hw)`` are set,
    with ``hw = line_width / 2 * sqrt(1 + (dx/dy)**2)`` so the thickness is
    measured perpendicular to the segment. No end caps.
    """
    h, w = image_size
    mask = np.zeros((h, w), dtype=bool)
    ys = lane_ys(lane.n_pts, h)[lane.s : lane.e + 1]
    xs = lane.valid_xs()
    if len(ys) < 2:
        return mask
    yc = h - (np.arange(h) + 0.5)
    rows = np.flatnonzero((yc >= ys[0]) & (yc <= ys[-1]))
    if len(rows) == 0:
        return mask
    seg = np.clip(np.searchsorted(ys, yc[rows], side="right") - 1, 0, len(ys) - 2)
    dy = ys[seg + 1] - ys[seg]
    dx = xs[seg + 1] - xs[seg]
    x = xs[seg] + dx * (yc[rows] - ys[seg]) / dy
    half = 0.5 * line_width * np.sqrt(1.0 + (dx / dy) ** 2)
    centers = np.arange(w) + 0.5
    mask[rows] = (centers[None, :] >= (x - half)[:, None]) & (centers[None, :] < (x + half)[:, None])
    return mask


def mask_iou(a, b):
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    return inter / union if union else 0.0


def iou_matrix(pred_lanes, gt_lanes, image_size, line_width=30):
    pm = [rasterize_lane(l, image_size, line_width) for l in pred_lanes]
    gm = [rasterize_lane(l, image_size, line_width) for l in gt_lanes]
    out = np.zeros((len(pm), len(gm)))
    for i, a in enumerate(pm):
        for j, b in enumerate(gm):
            out[i, j] = mask_iou(a, b)
    return out


def match_lanes(ious, iou_threshold=0.5):
    """Maximum-cardinality one-to-one matching over pairs with IoU above the threshold."""
    if ious.size == 0:
        return []
    ok = ious > iou_threshold
    # lexicographic: first maximise count, then total IoU among equal counts
    cost = -(ok * (1.0 + ious / (ious.size + 1.0)))
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if ok[i, j]]


def culane_score(predictions, ground_truth, image_size, line_width=30, iou_threshold=0.5,
                 categories=None):
    """F1 over lanes matched by IoU of ``line_width``-thick rasterized masks.

    ``categories`` optionally names each image (same order/keys as the
    inputs) to get a per-category breakdown.
    """
    h, w = image_size
    if h <= 0 or w <= 0:
        raise ConfigError("eval.image_size", "image size must be positive")
    if isinstance(categories, dict):
        categories = [categories[k] for k in sorted(categories)]
    preds, gts = _check_aligned(predictions, ground_truth)
    rep = MetricsReport()
    for k, (p_lanes, g_lanes) in enumerate(zip(preds, gts)):
        ious = iou_matrix(p_lanes, g_lanes, image_size, line_width)
        tp = len(match_lanes(ious, iou_threshold))
        counts = (tp, len(p_lanes) - tp, len(g_lanes) - tp, len(p_lanes), len(g_lanes))
        targets = [rep]
        if categories is not None:
            name = str(categories[k])
            targets.append(rep.per_category.setdefault(name, MetricsReport()))
        for r in targets:
            r.tp += counts[0]
            r.fp += counts[1]
            r.fn += counts[2]
            r.n_predictions += counts[3]
            r.n_ground_truth += counts[4]
    return rep


# ---------------------------------------------------------------- efficiency


def benchmark(model, repetitions=30, warmup=3, confidence_threshold=0.5, nms_threshold=50.0):
    """``(fps, macs, spread)`` for single-image forward + NMS on a constant input.

    ``macs`` counts one forward pass; ``spread`` is the max/min ratio of the
    per-repetition timings.
    """
    if repetitions < 10:
        raise ConfigError("bench.repetitions", "need at least 10 repetitions")
    h, w = model.image_size
    image = nx.Tensor(np.full((3, h, w), 0.5))
    for _ in range(max(3, warmup)):
        model.detect(image, confidence_threshold, nms_threshold)
    nx.reset_mac_counter()
    model.forward(image)
    macs = nx.mac_total()
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        model.detect(image, confidence_threshold, nms_threshold)
        times.append(time.perf_counter() - t0)
    total = sum(times)
    return repetitions / total, macs, max(times) / min(times)


def analytic_macs(config, n_anchors):
    """Closed-form MAC count of one forward pass of :class:`~laneatt.model.LaneATT`."""
    bb = config.backbone
    h, w = bb.input_size
    k = bb.kernel_size
    pad = k // 2
    total = 0
    cin = 3
    for cout, s in zip(bb.channels, bb.strides):
        h = (h + 2 * pad - k) // s + 1
        w = (w + 2 * pad - k) // s + 1
        total += cout * cin * k * k * h * w
        cin = cout
    total += bb.reduced_channels * cin * h * w
    d = bb.reduced_channels * h
    if config.use_attention:
        total += n_anchors * d * (n_anchors - 1)
        total += n_anchors * n_anchors * d
    total += n_anchors * 2 * d * (config.n_classes + 1 + config.n_pts + 1)
    return total
