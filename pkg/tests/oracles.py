"""Independent reference implementations used by several test modules.

Each oracle is written the slow, obvious way and shares no code with the
package beyond plain data types.
"""

import math

import numpy as np


def column_by_line_walk(x_orig, y_orig, theta, n_rows, stride, subdiv=64):
    """Feature column hit by a line in every feature row, by walking the line.

    The line through ``(x_orig, y_orig)`` (heights measured upward) with
    direction ``theta`` is scaled into feature units and sampled at
    ``subdiv`` sub-pixel steps per row; the sample that lies on the lower
    edge of row ``j`` names the column, floored with a tiny tolerance for
    crossings that land on a cell border.
    """
    ct, st = math.cos(math.radians(theta)), math.sin(math.radians(theta))
    x0, y0 = x_orig / stride, y_orig / stride
    cols = []
    for j in range(n_rows):
        samples = []
        for k in range(subdiv):
            y = j + k / subdiv
            t = (y - y0) / st
            samples.append((y, x0 + t * ct))
        y, x = samples[0]
        r = round(x)
        cols.append(int(r) if abs(x - r) < 1e-9 else math.floor(x))
    return cols


def lane_mean_abs(xa, sa, ea, xb, sb, eb):
    s, e = max(sa, sb), min(ea, eb)
    if e < s:
        return math.inf
    total = 0.0
    for i in range(s, e + 1):
        total += abs(xa[i] - xb[i])
    return total / (e - s + 1)


def greedy_nms(items, threshold, confidence=None, max_keep=None):
    """Plain O(n^2) greedy NMS on ``(xs, s, e, score, id)`` tuples; returns kept ids."""
    pool = [it for it in items if confidence is None or it[3] >= confidence]
    pool.sort(key=lambda it: (-it[3], it[4]))
    kept = []
    while pool:
        best = pool.pop(0)
        kept.append(best[4])
        if max_keep is not None and len(kept) == max_keep:
            break
        pool = [it for it in pool
                if not lane_mean_abs(best[0], best[1], best[2], it[0], it[1], it[2]) < threshold]
    return kept


def recount_filter(anchor_lanes, samples, n_anc, tau_p):
    """Brute-force positive counts and the surviving anchor indices."""
    counts = []
    for a in anchor_lanes:
        c = 0
        for lanes in samples:
            best = min((lane_mean_abs(a.xs, a.s, a.e, g.xs, g.s, g.e) for g in lanes), default=math.inf)
            if best < tau_p:
                c += 1
        counts.append(c)
    ranked = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
    return counts, sorted(ranked[:n_anc])


def attention_loop(a_loc, weight, bias):
    """Attention matrix by evaluating the three-case definition one entry at a time."""
    n = a_loc.shape[0]
    w = np.zeros((n, n))
    for i in range(n):
        logits = [float(np.dot(weight[k], a_loc[i]) + bias[k]) for k in range(n - 1)]
        m = max(logits)
        ex = [math.exp(z - m) for z in logits]
        tot = sum(ex)
        for j in range(n):
            if j < i:
                w[i, j] = ex[j] / tot
            elif j > i:
                w[i, j] = ex[j - 1] / tot
    return w


def global_loop(w, a_loc):
    n, d = a_loc.shape
    out = np.zeros((n, d))
    for i in range(n):
        for j in range(n):
            if j != i:
                out[i] += w[i, j] * a_loc[j]
    return out


def count_mask_pixels(lane_x_at_row, rows, width, half_width_at_row):
    """Pixel-count rasterization: every (row, col) whose centre lies in the band."""
    pix = set()
    for r in rows:
        x, hw = lane_x_at_row(r), half_width_at_row(r)
        for c in range(width):
            if x - hw <= c + 0.5 < x + hw:
                pix.add((r, c))
    return pix
