"""
Lane distance, NMS and the training loss
========================================

Lanes are compared by the mean absolute x gap over the heights both cover.
The same distance drives non-maximum suppression at inference and the
positive/negative split of anchors during training.
"""

import numpy as np

from laneatt import numerics as nx
from laneatt.anchors import Lane
from laneatt.loss import LossConfig, focal_loss, total_loss
from laneatt.matching import assign_targets, lane_distance, nms

n = 8
a = Lane(np.full(n, 100.0), 0, 7)
b = Lane(np.full(n, 104.0), 2, 7)
c = Lane(np.full(n, 160.0), 0, 1)
print("d(a, b) =", lane_distance(a, b))
print("d(a, c) =", lane_distance(a, c))
print("d(b, c) =", lane_distance(b, c), "(no common heights)")

# the weaker of two nearby lanes is suppressed
kept = nms([(a, 0.9, "a"), (b, 0.8, "b"), (c, 0.7, "c")], distance_threshold=10.0, confidence_threshold=0.5)
print("\nNMS keeps:", [p[2] for p in kept])

# focal loss shrinks the loss of confident examples
for p in (0.5, 0.9, 0.99):
    logits = [0.0, np.log(p / (1 - p))]
    print(f"p_t {p}: CE {focal_loss(logits, 1, 0.0, 1.0):.4f}  focal {focal_loss(logits, 1):.6f}")

# anchors within 15 px of a lane are positives, beyond 20 px negatives
anchors = [Lane(np.full(n, x), 0, n - 1) for x in (0.0, 21.5, 50.0)]
gts = [Lane(np.full(n, 4.0), 2, 6)]
res = assign_targets(anchors, gts, 15.0, 20.0)
print("\npositives", res.positives.tolist(), "negatives", res.negatives.tolist(), "ignored", res.ignored.tolist())

rng = np.random.default_rng(0)
cls, reg = rng.normal(size=(3, 2)), rng.normal(size=(3, 1 + n))
print("total loss:", total_loss(nx.Tensor(cls), nx.Tensor(reg), res, LossConfig()).item())
