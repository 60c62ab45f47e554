"""Lanes, line anchors, anchor projection onto the feature map, anchor filtering.

Geometry frame
--------------
Pixel rasters are stored top-left first, but every lane/anchor coordinate in
this module uses *heights*: ``y`` is measured upward from the bottom image
edge. The lane grid is ``y_i = i * H / (n_pts - 1)``, so index 0 is the
bottom edge and ``n_pts - 1`` the top edge. Anchor directions are in degrees
from the +x axis turning upward, so 90 is straight up, angles below 90 lean
right and angles above 90 lean left. In this frame the feature-column formula

    x_j = floor(cot(theta) * (j - y_orig / stride) + x_orig / stride)

holds for feature row ``j`` counted from the bottom of the feature map.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

BORDERS = ("left", "bottom", "right")

DEFAULT_LEFT_ANGLES = (72.0, 60.0, 49.0, 39.0, 30.0, 22.0)
DEFAULT_RIGHT_ANGLES = (108.0, 120.0, 131.0, 141.0, 150.0, 158.0)
DEFAULT_BOTTOM_ANGLES = (
    165.0, 150.0, 141.0, 131.0, 120.0, 108.0, 100.0, 90.0,
    80.0, 72.0, 60.0, 49.0, 39.0, 30.0, 15.0,
)


def lane_ys(n_pts, height):
    """Heights of the fixed lane grid, bottom edge first."""
    return np.arange(n_pts) * float(height) / (n_pts - 1)


@dataclass
class Lane:
    """A lane as x-coordinates on the fixed height grid with valid range ``[s, e]``."""

    xs: np.ndarray
    s: int
    e: int
    score: float | None = None
    category: int | None = None

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.s = int(self.s)
        self.e = int(self.e)
        n = len(self.xs)
        if not 0 <= self.s <= self.e <= n - 1:
            raise ValueError(f"invalid lane range s={self.s}, e={self.e} for {n} points")

    @property
    def n_pts(self):
        return len(self.xs)

    def valid_xs(self):
        return self.xs[self.s : self.e + 1]

    def points(self, height):
        """``(x, y_down)`` pairs of the valid range in image (top-down) coordinates."""
        ys = lane_ys(self.n_pts, height)[self.s : self.e + 1]
        return np.stack([self.valid_xs(), height - ys], axis=1)


def clip_lane(lane, width):
    """Longest contiguous run of ``lane`` whose x lies inside ``[0, width)``.

    Returns ``None`` when no grid point is inside the image.
    """
    xs = lane.xs
    idx = np.arange(lane.s, lane.e + 1)
    inside = (xs[idx] >= 0) & (xs[idx] < width)
    if not inside.any():
        return None
    best, best_len, run_start = None, 0, None
    for k, ok in enumerate(np.append(inside, False)):
        if ok and run_start is None:
            run_start = k
        elif not ok and run_start is not None:
            if k - run_start > best_len:
                best, best_len = run_start, k - run_start
            run_start = None
    s = int(idx[best])
    e = s + best_len - 1
    out = np.full_like(xs, np.nan)
    out[s : e + 1] = xs[s : e + 1]
    return Lane(out, s, e, lane.score, lane.category)


# ---------------------------------------------------------------- anchors


@dataclass(frozen=True)
class Anchor:
    id: int
    border: str
    x_orig: float
    y_orig: float
    theta: float
    feature_cols: tuple = ()

    def __post_init__(self):
        if self.border not in BORDERS:
            raise ValueError(f"anchor border must be one of {BORDERS}, got {self.border!r}")


@dataclass
class AnchorConfig:
    """Anchor generation parameters. Origin counts are per border."""

    left_angles: tuple = DEFAULT_LEFT_ANGLES
    bottom_angles: tuple = DEFAULT_BOTTOM_ANGLES
    right_angles: tuple = DEFAULT_RIGHT_ANGLES
    n_left: int = 72
    n_bottom: int = 128
    n_right: int = 72
    drop_border_collinear: bool = True

    def validate(self, n_pts=72, prefix="anchors"):
        for name in ("left_angles", "bottom_angles", "right_angles"):
            angles = getattr(self, name)
            if len(angles) == 0:
                raise ConfigError(f"{prefix}.{name}", "must not be empty")
            for a in angles:
                if not 0.0 < a < 180.0:
                    raise ConfigError(
                        f"{prefix}.{name}", f"angle {a} must lie strictly between 0 and 180"
                    )
        for name in ("n_left", "n_bottom", "n_right"):
            n = getattr(self, name)
            if n < 1:
                raise ConfigError(f"{prefix}.{name}", "origin count must be positive")
        for name in ("n_left", "n_right"):
            if getattr(self, name) > n_pts:
                raise ConfigError(
                    f"{prefix}.{name}", f"at most {n_pts} lateral origins fit the lane grid"
                )


def _cot(theta_deg):
    theta_deg = np.asarray(theta_deg, dtype=np.float64)
    out = 1.0 / np.tan(np.radians(np.where(theta_deg == 90.0, 45.0, theta_deg)))
    return np.where(theta_deg == 90.0, 0.0, out)


def _floor_snapped(x):
    # crossings that are integers up to rounding error floor to that integer
    r = np.round(x)
    return np.floor(np.where(np.abs(x - r) < 1e-9, r, x)).astype(np.int64)


def project_columns(x_orig, y_orig, theta, n_rows, stride):
    """Vectorized feature-column projection; returns ``[n_anchors, n_rows]`` ints."""
    x_orig = np.atleast_1d(np.asarray(x_orig, dtype=np.float64))
    y_orig = np.atleast_1d(np.asarray(y_orig, dtype=np.float64))
    cot = np.atleast_1d(_cot(theta))
    j = np.arange(n_rows, dtype=np.float64)
    x = cot[:, None] * (j[None, :] - y_orig[:, None] / stride) + x_orig[:, None] / stride
    return _floor_snapped(x)


def project_anchor(anchor, feature_size, stride):
    """Feature-map column intercepted by ``anchor`` in every feature row.

    Returns ``[(j, x_j), ...]`` for ``j = 0 .. H_F - 1`` (row 0 is the bottom
    feature row). Columns outside ``[0, W_F - 1]`` are out of bounds and pool
    as zeros.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if anchor.theta in (0.0, 180.0):
        raise ValueError("anchor direction parallel to the image rows")
    h_f, _ = feature_size
    cols = project_columns(anchor.x_orig, anchor.y_orig, anchor.theta, h_f, stride)[0]
    return [(j, int(c)) for j, c in enumerate(cols)]


class AnchorSet:
    """Immutable ordered collection of anchors sharing one image/feature geometry."""

    def __init__(self, anchors, config, image_size, n_pts, stride, source_ids=None):
        self.anchors: tuple[Anchor, ...] = tuple(anchors)
        self.config = config
        self.image_size = tuple(image_size)
        self.n_pts = n_pts
        self.stride = stride
        # ids in the originally generated set (identity for a fresh set)
        self.source_ids = (
            np.arange(len(self.anchors)) if source_ids is None else np.asarray(source_ids)
        )
        h, w = self.image_size
        self.feature_size = (h // stride, w // stride)
        self._x = np.array([a.x_orig for a in self.anchors], dtype=np.float64)
        self._y = np.array([a.y_orig for a in self.anchors], dtype=np.float64)
        self._theta = np.array([a.theta for a in self.anchors], dtype=np.float64)

    def __len__(self):
        return len(self.anchors)

    def __iter__(self):
        return iter(self.anchors)

    def __getitem__(self, i):
        return self.anchors[i]

    @property
    def borders(self):
        return np.array([BORDERS.index(a.border) for a in self.anchors], dtype=np.int64)

    def starts(self):
        """Start index on the lane grid of each anchor's origin."""
        h = self.image_size[0]
        return np.rint(self._y * (self.n_pts - 1) / h).astype(np.int64)

    def line_xs(self):
        """Anchor line x at every lane-grid height, ``[N, n_pts]`` (no flooring)."""
        ys = lane_ys(self.n_pts, self.image_size[0])
        cot = _cot(self._theta)
        return cot[:, None] * (ys[None, :] - self._y[:, None]) + self._x[:, None]

    def feature_cols(self):
        return np.array([a.feature_cols for a in self.anchors], dtype=np.int64).reshape(
            len(self), self.feature_size[0]
        )

    def as_lanes(self):
        """Anchors as lanes spanning ``[s, n_pts - 1]``."""
        xs = self.line_xs()
        return [Lane(xs[i], s, self.n_pts - 1) for i, s in enumerate(self.starts())]

    def subset(self, ids):
        """New set holding ``ids`` (in the given order), re-numbered densely."""
        ids = [int(i) for i in ids]
        anchors = [
            Anchor(k, self.anchors[i].border, self.anchors[i].x_orig, self.anchors[i].y_orig,
                   self.anchors[i].theta, self.anchors[i].feature_cols)
            for k, i in enumerate(ids)
        ]
        return AnchorSet(anchors, self.config, self.image_size, self.n_pts, self.stride,
                         self.source_ids[ids])

    def to_csv(self):
        buf = io.StringIO()
        buf.write("id,border,x_orig,y_orig,theta\n")
        for a in self.anchors:
            buf.write(f"{a.id},{a.border},{a.x_orig!r},{a.y_orig!r},{a.theta!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, image_size, n_pts=72, stride=16, config=None):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "id,border,x_orig,y_orig,theta":
            raise DataError("missing anchor CSV header", line=1)
        rows = []
        for k, ln in enumerate(lines[1:], start=2):
            parts = ln.split(",")
            if len(parts) != 5:
                raise DataError(f"expected 5 fields, got {len(parts)}", line=k)
            try:
                rows.append((parts[1], float(parts[2]), float(parts[3]), float(parts[4])))
            except ValueError as exc:
                raise DataError(str(exc), line=k) from exc
        return _build_set(rows, config or AnchorConfig(), image_size, n_pts, stride)


def _build_set(rows, config, image_size, n_pts, stride):
    h, w = image_size
    if h % stride or w % stride:
        raise ConfigError("model.input_size", f"{h}x{w} not divisible by stride {stride}")
    h_f = h // stride
    if rows:
        x, y, th = (np.array(c, dtype=np.float64) for c in zip(*[(r[1], r[2], r[3]) for r in rows]))
        cols = project_columns(x, y, th, h_f, stride)
    anchors = [
        Anchor(i, b, float(xo), float(yo), float(t), tuple(int(c) for c in cols[i]))
        for i, (b, xo, yo, t) in enumerate(rows)
    ]
    return AnchorSet(anchors, config, image_size, n_pts, stride)


def _lateral_rows(n, n_pts):
    # grid indices, top to bottom
    if n == 1:
        return [n_pts - 1]
    return [int(round(v)) for v in np.linspace(n_pts - 1, 0, n)]


def generate_anchors(config, image_size, n_pts=72, stride=16):
    """Build the anchor set for ``image_size = (H, W)``.

    Order: left border top to bottom, bottom border left to right, right
    border top to bottom; within one origin, angles in config order. Lateral
    origins sit on lane-grid heights, bottom origins are spread evenly over
    ``[0, W]``. With ``drop_border_collinear`` the vertical anchors starting
    at the two bottom corners (which run along the image side) are skipped.
    """
    config.validate(n_pts)
    h, w = image_size
    ys = lane_ys(n_pts, h)
    rows = []
    for i in _lateral_rows(config.n_left, n_pts):
        rows.extend(("left", 0.0, float(ys[i]), float(a)) for a in config.left_angles)
    xs = [w / 2.0] if config.n_bottom == 1 else np.linspace(0.0, w, config.n_bottom)
    for x in xs:
        for a in config.bottom_angles:
            if config.drop_border_collinear and a == 90.0 and x in (0.0, float(w)):
                continue
            rows.append(("bottom", float(x), 0.0, float(a)))
    for i in _lateral_rows(config.n_right, n_pts):
        rows.extend(("right", float(w), float(ys[i]), float(a)) for a in config.right_angles)
    return _build_set(rows, config, image_size, n_pts, stride)


def positive_counts(anchor_set, training_samples, tau_p):
    """Times each anchor would be labelled positive over ``training_samples``."""
    from .matching import distance_matrix

    anchor_lanes = anchor_set.as_lanes()
    counts = np.zeros(len(anchor_set), dtype=np.int64)
    n_samples = 0
    for lanes in training_samples:
        n_samples += 1
        lanes = list(lanes)
        if not lanes:
            continue
        d = distance_matrix(anchor_lanes, lanes)
        counts += d.min(axis=1) < tau_p
    if n_samples == 0:
        raise DataError("filter_anchors needs at least one training sample")
    return counts


def filter_anchors(anchor_set, training_samples: Iterable[Sequence[Lane]], n_anc, tau_p):
    """Keep the ``n_anc`` anchors most often marked positive on the training lanes.

    Ties go to the lower anchor id; survivors keep their original order.
    """
    if not 1 <= n_anc <= len(anchor_set):
        raise ConfigError("n_anc", f"must be in [1, {len(anchor_set)}], got {n_anc}")
    counts = positive_counts(anchor_set, training_samples, tau_p)
    order = np.lexsort((np.arange(len(counts)), -counts))
    keep = np.sort(order[:n_anc])
    return anchor_set.subset(keep)
