"""
Scoring predictions
===================

Two scorers are provided. The point scorer counts predicted points within
20 px of the ground truth and calls a lane correct above 85 percent. The
mask scorer draws both lanes 30 px wide and matches them one to one when
their masks overlap with IoU above 0.5.
"""

import numpy as np

from laneatt.anchors import Lane
from laneatt.eval import culane_score, mask_iou, rasterize_lane, tusimple_score


def vertical(x, n=72):
    return Lane(np.full(n, float(x)), 0, n - 1)


gt = [[vertical(100), vertical(200)]]
print(tusimple_score(gt, gt).to_text())
print(tusimple_score([[vertical(125), vertical(200)]], gt).to_text())

# two parallel lanes 15 px apart overlap by half a width: IoU 1/3
ma = rasterize_lane(vertical(100), (160, 320), 30)
mb = rasterize_lane(vertical(115), (160, 320), 30)
print("IoU of 15 px offset:", mask_iou(ma, mb))
print(culane_score([[vertical(100)]], [[vertical(115)]], (160, 320)).to_text())
print(culane_score([[vertical(105)]], [[vertical(100)]], (160, 320)).to_text())
