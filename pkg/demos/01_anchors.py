"""
Line anchors and where they land on the feature map
===================================================

Every anchor is a straight line that starts on the left, bottom or right
border of the image. The detector pools features along that line, so the
first thing to look at is which feature-map column each anchor crosses in
every feature row.
"""

import numpy as np

from laneatt.anchors import AnchorConfig, generate_anchors, project_anchor

# the default set on a 160x320 image with a stride-16 backbone
anchors = generate_anchors(AnchorConfig(), (160, 320))
print("anchors generated:", len(anchors))
print("feature map:", anchors.feature_size, "stride", anchors.stride)

by_border = {b: sum(a.border == b for a in anchors) for b in ("left", "bottom", "right")}
print("per border:", by_border)

# a vertical anchor from the middle of the bottom edge stays in one column
mid = min((a for a in anchors if a.border == "bottom" and a.theta == 90.0),
          key=lambda a: abs(a.x_orig - 160))
print("\nvertical anchor at x =", mid.x_orig)
print("columns by row:", [c for _, c in project_anchor(mid, anchors.feature_size, anchors.stride)])

# a shallow left anchor leaves the map after a few rows; those rows pool zeros
left = min((a for a in anchors if a.border == "left" and a.theta == 22.0), key=lambda a: abs(a.y_orig - 80))
cols = [c for _, c in project_anchor(left, anchors.feature_size, anchors.stride)]
print("\nleft anchor at 22 degrees from height", round(left.y_orig, 1))
print("columns by row:", cols)
print("rows outside the map:", int(np.sum((np.array(cols) < 0) | (np.array(cols) >= anchors.feature_size[1]))))

# anchors also serve as lanes: x at each of the 72 grid heights
lane = anchors.as_lanes()[anchors.anchors.index(left)]
print("\nas a lane it covers grid indices", lane.s, "to", lane.e)
