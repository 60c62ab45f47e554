"""Backbone, anchor feature pooling, anchor attention and proposal heads.

Pooled anchor vectors are laid out feature-row-major: element ``j * C_F + c``
holds channel ``c`` at feature row ``j`` (row 0 is the bottom row of the
feature map). Heads and checkpoints depend on this layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .anchors import BORDERS, AnchorSet, Lane, clip_lane, lane_ys
from .errors import ConfigError, DimensionError
from .matching import nms_arrays


@dataclass
class BackboneConfig:
    channels: tuple = (8, 16, 32, 64)
    strides: tuple = (2, 2, 2, 2)
    kernel_size: int = 3
    reduced_channels: int = 16
    input_size: tuple = (160, 320)

    @property
    def stride(self):
        return int(np.prod(self.strides))

    @property
    def feature_size(self):
        h, w = self.input_size
        return h // self.stride, w // self.stride

    def validate(self, prefix="model.backbone"):
        if len(self.channels) == 0 or len(self.channels) != len(self.strides):
            raise ConfigError(f"{prefix}.channels", "need one stride per stage")
        if any(c < 1 for c in self.channels):
            raise ConfigError(f"{prefix}.channels", "channel counts must be positive")
        if any(s < 1 for s in self.strides):
            raise ConfigError(f"{prefix}.strides", "strides must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"{prefix}.kernel_size", "must be a positive odd number")
        if self.reduced_channels < 1:
            raise ConfigError(f"{prefix}.reduced_channels", "must be >= 1")
        h, w = self.input_size
        if h < 1 or w < 1 or h % self.stride or w % self.stride:
            raise ConfigError(
                f"{prefix}.input_size",
                f"{h}x{w} must be positive and divisible by the total stride {self.stride}",
            )


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    n_pts: int = 72
    n_classes: int = 1
    use_attention: bool = True
    per_boundary_heads: bool = False

    def validate(self, prefix="model"):
        self.backbone.validate(prefix + ".backbone")
        if self.n_pts < 2:
            raise ConfigError(f"{prefix}.n_pts", "need at least two lane points")
        if self.n_classes < 1:
            raise ConfigError(f"{prefix}.n_classes", "need at least one lane class")


@dataclass
class Proposal:
    anchor_id: int
    class_logits: np.ndarray
    offsets: np.ndarray
    length: float
    s: int
    e: int


def end_index(start, length, n_pts):
    """``s + floor(l) - 1`` clamped into ``[s, n_pts - 1]``."""
    length = np.nan_to_num(np.asarray(length, dtype=np.float64), nan=0.0, posinf=n_pts, neginf=0.0)
    e = np.asarray(start) + np.floor(np.clip(length, 0, n_pts)).astype(np.int64) - 1
    return np.clip(e, start, n_pts - 1)


# ---------------------------------------------------------------- forward pieces


def backbone_forward(image, params, config: BackboneConfig):
    """Conv stages with ReLU followed by the 1x1 channel reduction."""
    if tuple(image.shape) != (3, *config.input_size):
        raise DimensionError("backbone_forward", [3, *config.input_size], list(image.shape))
    x = image
    pad = config.kernel_size // 2
    for i, stride in enumerate(config.strides):
        x = nx.relu(
            nx.conv2d(x, params[f"backbone.{i}.weight"], params[f"backbone.{i}.bias"],
                      stride=stride, padding=pad)
        )
    return nx.conv2d(x, params["reduce.weight"], params["reduce.bias"])


def pool_index(anchor_set: AnchorSet, n_channels):
    """Flat gather indices ``[N, H_F * C_F]`` into a ``[C_F, H_F, W_F]`` map; -1 pads."""
    h_f, w_f = anchor_set.feature_size
    cols = anchor_set.feature_cols()
    rows = (h_f - 1) - np.arange(h_f)
    inside = (cols >= 0) & (cols < w_f)
    base = rows[None, :] * w_f + np.clip(cols, 0, w_f - 1)
    ch = np.arange(n_channels) * (h_f * w_f)
    idx = base[:, :, None] + ch[None, None, :]
    idx = np.where(inside[:, :, None], idx, -1)
    return idx.reshape(len(anchor_set), h_f * n_channels)


def pool_features(feature_map, anchor, stride=None):
    """Local feature vector ``[C_F * H_F]`` of one anchor (zeros where out of bounds)."""
    c_f, h_f, w_f = feature_map.shape
    cols = np.asarray(anchor.feature_cols, dtype=np.int64)
    if len(cols) != h_f:
        raise DimensionError("pool_features", f"{h_f} cached feature columns", len(cols))
    rows = (h_f - 1) - np.arange(h_f)
    inside = (cols >= 0) & (cols < w_f)
    base = rows * w_f + np.clip(cols, 0, w_f - 1)
    idx = base[:, None] + np.arange(c_f)[None, :] * (h_f * w_f)
    idx = np.where(inside[:, None], idx, -1).reshape(-1)
    return nx.gather(feature_map, idx)


def pool_all(feature_map, anchor_set, index=None):
    if index is None:
        index = pool_index(anchor_set, feature_map.shape[0])
    return nx.gather(feature_map, index)


def _diag_skip_index(n):
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    idx = i * (n - 1) + np.where(j < i, j, j - 1)
    return np.where(i == j, -1, idx)


def attention_weights(a_loc, weight, bias):
    """Anchor attention matrix ``[N, N]`` with zero diagonal.

    Row ``i`` is the softmax of the attention layer applied to ``a_loc[i]``,
    spread over the other ``N - 1`` anchors in index order.
    """
    n = a_loc.shape[0]
    if n < 2:
        raise DimensionError("attention_weights", "at least 2 anchors", n)
    if weight.shape[0] != n - 1:
        raise DimensionError("attention_weights", f"attention output size {n - 1}", weight.shape[0])
    probs = nx.softmax(nx.dense(a_loc, weight, bias), axis=1)
    return nx.gather(probs, _diag_skip_index(n))


def global_features(weights, a_loc):
    """``A_glob = W @ A_loc``."""
    if weights.shape[1] != a_loc.shape[0]:
        raise DimensionError("global_features", f"W [N,{a_loc.shape[0]}]", list(weights.shape))
    return nx.matmul(weights, a_loc)


def head_names(config: ModelConfig):
    if config.per_boundary_heads:
        return [f"_{b}" for b in BORDERS]
    return [""]


def proposal_heads(a_loc, a_glob, params, borders, config: ModelConfig):
    """Classification logits ``[N, K+1]`` and regression ``[N, 1 + n_pts]`` tensors.

    Regression column 0 is the length, the rest are x offsets in pixels.
    With ``config.use_attention`` off, zeros stand in for ``a_glob``.
    """
    if not config.use_attention or a_glob is None:
        a_glob = nx.Tensor(np.zeros(a_loc.shape))
    aug = nx.concat([a_loc, a_glob], axis=1)
    if not config.per_boundary_heads:
        cls = nx.dense(aug, params["cls.weight"], params["cls.bias"])
        reg = nx.dense(aug, params["reg.weight"], params["reg.bias"])
        return cls, reg
    borders = np.asarray(borders)
    order, cls_parts, reg_parts = [], [], []
    for b, name in enumerate(BORDERS):
        rows = np.flatnonzero(borders == b)
        if len(rows) == 0:
            continue
        sub = nx.take_rows(aug, rows)
        cls_parts.append(nx.dense(sub, params[f"cls_{name}.weight"], params[f"cls_{name}.bias"]))
        reg_parts.append(nx.dense(sub, params[f"reg_{name}.weight"], params[f"reg_{name}.bias"]))
        order.append(rows)
    inverse = np.argsort(np.concatenate(order))
    cls = nx.take_rows(nx.concat(cls_parts, axis=0), inverse)
    reg = nx.take_rows(nx.concat(reg_parts, axis=0), inverse)
    return cls, reg


def predict_proposals(a_loc, a_glob, params, anchor_set, config: ModelConfig):
    """One :class:`Proposal` per anchor."""
    cls, reg = proposal_heads(a_loc, a_glob, params, anchor_set.borders, config)
    starts = anchor_set.starts()
    ends = end_index(starts, reg.data[:, 0], config.n_pts)
    return [
        Proposal(i, cls.data[i].copy(), reg.data[i, 1:].copy(), float(reg.data[i, 0]),
                 int(starts[i]), int(ends[i]))
        for i in range(len(anchor_set))
    ]


def lane_scores(class_logits):
    """``1 - P(background)`` per row of ``[N, K+1]`` logits, plus the argmax lane class."""
    z = class_logits - class_logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return 1.0 - p[:, 0], 1 + np.argmax(p[:, 1:], axis=1)


def decode_proposal(proposal, anchor, image_size, n_pts=None):
    """Lane from a proposal: anchor line x at each grid height plus the offsets."""
    n_pts = len(proposal.offsets) if n_pts is None else n_pts
    h = image_size[0]
    ys = lane_ys(n_pts, h)
    cot = 0.0 if anchor.theta == 90.0 else 1.0 / math.tan(math.radians(anchor.theta))
    xs = cot * (ys - anchor.y_orig) + anchor.x_orig + np.asarray(proposal.offsets)
    s = int(round(anchor.y_orig * (n_pts - 1) / h))
    e = int(end_index(s, proposal.length, n_pts))
    score, cat = lane_scores(np.asarray(proposal.class_logits)[None, :])
    return Lane(xs, s, e, float(score[0]), int(cat[0]))


# ---------------------------------------------------------------- the detector


class LaneATT:
    """Detector parameters plus the anchor set they are tied to."""

    def __init__(self, config: ModelConfig, anchor_set: AnchorSet, seed=0, params=None):
        config.validate()
        bb = config.backbone
        if anchor_set.feature_size != bb.feature_size or anchor_set.stride != bb.stride:
            raise ConfigError(
                "model.backbone", "anchor set geometry does not match the backbone feature map"
            )
        if anchor_set.n_pts != config.n_pts:
            raise ConfigError("model.n_pts", "anchor set built for a different lane grid")
        self.config = config
        self.anchors = anchor_set
        self.params = params if params is not None else init_params(config, len(anchor_set), seed)
        self._pool_index = pool_index(anchor_set, bb.reduced_channels)
        self._line_xs = anchor_set.line_xs()
        self._starts = anchor_set.starts()
        self._borders = anchor_set.borders

    @property
    def image_size(self):
        return self.config.backbone.input_size

    def forward(self, image):
        """Returns ``(class_logits, regression)`` tensors for every anchor."""
        image = image if isinstance(image, nx.Tensor) else nx.Tensor(image)
        fmap = backbone_forward(image, self.params, self.config.backbone)
        a_loc = pool_all(fmap, self.anchors, self._pool_index)
        a_glob = None
        if self.config.use_attention:
            w = attention_weights(a_loc, self.params["attention.weight"], self.params["attention.bias"])
            a_glob = global_features(w, a_loc)
        return proposal_heads(a_loc, a_glob, self.params, self._borders, self.config)

    def decode(self, class_logits, regression):
        """Stacked decoded proposals: ``xs [N, n_pts]``, starts, ends, scores, classes."""
        cls = class_logits.data if isinstance(class_logits, nx.Tensor) else class_logits
        reg = regression.data if isinstance(regression, nx.Tensor) else regression
        xs = self._line_xs + reg[:, 1:]
        ends = end_index(self._starts, reg[:, 0], self.config.n_pts)
        scores, classes = lane_scores(cls)
        return xs, self._starts.copy(), ends, scores, classes

    def detect(self, image, confidence_threshold=0.5, nms_threshold=50.0, max_lanes=None):
        """Forward, confidence filter, NMS; lanes clipped to the image width."""
        cls, reg = self.forward(image)
        xs, s, e, scores, classes = self.decode(cls, reg)
        keep = nms_arrays(xs, s, e, scores, nms_threshold, confidence_threshold, max_lanes)
        width = self.image_size[1]
        lanes = []
        for i in keep:
            lane = clip_lane(Lane(xs[i], s[i], e[i], float(scores[i]), int(classes[i])), width)
            if lane is not None:
                lanes.append(lane)
        return lanes

    def state_dict(self):
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        if missing:
            raise ConfigError("checkpoint", f"missing tensors {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionError(f"load_state_dict[{k}]", list(t.shape), list(arr.shape))
            t.data = arr.copy()

    def n_parameters(self):
        return int(sum(t.size for t in self.params.values()))


def init_params(config: ModelConfig, n_anchors, seed=0):
    """Seeded uniform(±sqrt(1/fan_in)) initialisation of every layer."""
    rng = np.random.default_rng(seed)
    bb = config.backbone
    k = bb.kernel_size
    params = {}
    cin = 3
    for i, cout in enumerate(bb.channels):
        fan = cin * k * k
        params[f"backbone.{i}.weight"] = nx.init_uniform(rng, (cout, cin, k, k), fan)
        params[f"backbone.{i}.bias"] = nx.init_uniform(rng, (cout,), fan)
        cin = cout
    params["reduce.weight"] = nx.init_uniform(rng, (bb.reduced_channels, cin, 1, 1), cin)
    params["reduce.bias"] = nx.init_uniform(rng, (bb.reduced_channels,), cin)
    h_f = bb.feature_size[0]
    d = bb.reduced_channels * h_f
    params["attention.weight"] = nx.init_uniform(rng, (n_anchors - 1, d), d)
    params["attention.bias"] = nx.init_uniform(rng, (n_anchors - 1,), d)
    for suffix in head_names(config):
        params[f"cls{suffix}.weight"] = nx.init_uniform(rng, (config.n_classes + 1, 2 * d), 2 * d)
        params[f"cls{suffix}.bias"] = nx.init_uniform(rng, (config.n_classes + 1,), 2 * d)
        params[f"reg{suffix}.weight"] = nx.init_uniform(rng, (config.n_pts + 1, 2 * d), 2 * d)
        params[f"reg{suffix}.bias"] = nx.init_uniform(rng, (config.n_pts + 1,), 2 * d)
    return params
