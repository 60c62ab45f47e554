"""Focal classification loss, smooth-L1 regression loss and the balanced total."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, EmptyAssignmentError

# probability floor applied before taking the log
P_EPS = 1e-12


@dataclass
class LossConfig:
    lam: float = 10.0
    gamma: float = 2.0
    alpha: float = 0.25
    use_cross_entropy: bool = False

    def validate(self, prefix="loss"):
        if not self.lam > 0:
            raise ConfigError(f"{prefix}.lam", "must be positive")
        if not self.gamma >= 0:
            raise ConfigError(f"{prefix}.gamma", "must be non-negative")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"{prefix}.alpha", "must lie in (0, 1]")


def focal_loss(class_logits, target_class, gamma=2.0, alpha=0.25, use_cross_entropy=False):
    """Scalar focal loss ``-alpha * (1 - p_t)**gamma * log(p_t)`` for one anchor."""
    z = np.asarray(class_logits, dtype=np.float64)
    z = z - z.max()
    p = np.exp(z) / np.exp(z).sum()
    pt = max(p[target_class], P_EPS)
    if use_cross_entropy:
        return -math.log(pt)
    return -alpha * (1.0 - pt) ** gamma * math.log(pt)


def smooth_l1(prediction, target):
    d = abs(float(prediction) - float(target))
    return 0.5 * d * d if d < 1.0 else d - 0.5


def focal_terms(logits, targets, config):
    """Per-row focal (or cross-entropy) loss on the tape; ``logits`` is ``[n, K+1]``."""
    n = logits.shape[0]
    logp = nx.log_softmax(logits, axis=1)
    pick = np.arange(n) * logits.shape[1] + np.asarray(targets, dtype=np.int64)
    logpt = nx.maximum(nx.gather(logp, pick), math.log(P_EPS))
    if config.use_cross_entropy:
        return -logpt
    pt = nx.exp(logpt)
    return (1.0 - pt) ** config.gamma * logpt * (-config.alpha)


def regression_terms(regression, assignment):
    """Per-positive smooth-L1 regression loss on the tape.

    ``regression`` is ``[n_pos, 1 + n_pts]`` (length first, then offsets).
    Each row is averaged over the length term and the offsets in the
    assignment's valid range.
    """
    p = len(assignment.positives)
    target = np.concatenate([assignment.target_length[:, None], assignment.target_offsets], axis=1)
    mask = np.concatenate([np.ones((p, 1), dtype=bool), assignment.target_mask], axis=1)
    weights = mask / mask.sum(axis=1, keepdims=True)
    return nx.tsum(nx.smooth_l1(regression, target) * weights, axis=1)


def total_loss(class_logits, regression, assignment, config):
    """``lam * sum(cls) + sum(reg)`` over the labelled anchors, as a ``[1]`` tensor.

    ``class_logits`` is ``[N, K+1]`` and ``regression`` ``[N, 1 + n_pts]`` for
    the same anchors the assignment was computed on. Ignored anchors enter
    neither sum and negatives only the classification sum.
    """
    pos = assignment.positives
    neg = assignment.negatives
    if len(pos) == 0 and len(neg) == 0:
        raise EmptyAssignmentError("assignment has no positive and no negative anchors")
    rows = np.concatenate([pos, neg])
    targets = np.concatenate([assignment.target_class, np.zeros(len(neg), dtype=np.int64)])
    cls = nx.tsum(focal_terms(nx.take_rows(class_logits, rows), targets, config))
    loss = cls * config.lam
    if len(pos):
        loss = loss + nx.tsum(regression_terms(nx.take_rows(regression, pos), assignment))
    return loss
