"""Synthetic lane scenes, TuSimple/CULane label I/O and PPM images.

Randomness comes from SplitMix64 so samples are bit-identical on every
platform. For a 64-bit state ``x`` one step is::

    x = x + 0x9E3779B97F4A7C15                 (mod 2**64)
    z = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9   (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB   (mod 2**64)
    out = z ^ (z >> 31)

and a uniform double is ``(out >> 11) * 2**-53``. Sample ``index`` of a
dataset seeded with ``seed`` starts from state ``mix(mix(seed) + index)``,
where ``mix`` is one step applied to a fresh state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .anchors import Lane, clip_lane, lane_ys
from .errors import ConfigError, DataError
from .numerics import Tensor

_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def _mix(x):
    x = (x + _GOLDEN) & _MASK
    z = ((x ^ (x >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Counter-style SplitMix64 stream with vectorized block draws."""

    def __init__(self, state):
        self.state = int(state) & _MASK

    @classmethod
    def for_sample(cls, seed, index):
        return cls(_mix((_mix(int(seed) & _MASK) + int(index)) & _MASK))

    def next_u64(self):
        out = _mix(self.state)
        self.state = (self.state + _GOLDEN) & _MASK
        return out

    def u64(self, n):
        k = np.arange(n, dtype=np.uint64)
        with np.errstate(over="ignore"):
            x = np.uint64(self.state) + (k + np.uint64(1)) * np.uint64(_GOLDEN)
            z = (x ^ (x >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        self.state = (self.state + n * _GOLDEN) & _MASK
        return z ^ (z >> np.uint64(31))

    def random(self, n=None):
        """Uniform doubles in [0, 1); a float when ``n`` is None."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0**-53
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self, lo, hi, n=None):
        return lo + (hi - lo) * self.random(n)

    def integers(self, lo, hi):
        """Integer in ``[lo, hi]`` inclusive."""
        return lo + int(self.random() * (hi - lo + 1))


@dataclass
class SyntheticConfig:
    seed: int = 0
    image_size: tuple = (160, 320)
    n_pts: int = 72
    lane_count: tuple = (2, 5)
    spacing: tuple = (0.24, 0.32)
    curvature: tuple = (-0.12, 0.12)
    line_width: float = 3.0
    noise: float = 0.08
    occlusion_probability: float = 0.3
    flip_probability: float = 0.5
    max_rotation: float = 3.0
    max_scale: float = 0.05
    max_translation: float = 0.03

    def validate(self, prefix="data"):
        lo, hi = self.lane_count
        if not 1 <= lo <= hi:
            raise ConfigError(f"{prefix}.lane_count", "need 1 <= min <= max")
        for name in ("spacing", "curvature"):
            a, b = getattr(self, name)
            if not a <= b:
                raise ConfigError(f"{prefix}.{name}", "range lower bound exceeds upper bound")
        if self.spacing[0] <= 0:
            raise ConfigError(f"{prefix}.spacing", "must be positive")
        for name in ("occlusion_probability", "flip_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{prefix}.{name}", "probability must lie in [0, 1]")
        if self.line_width <= 0:
            raise ConfigError(f"{prefix}.line_width", "must be positive")
        if self.noise < 0:
            raise ConfigError(f"{prefix}.noise", "must be non-negative")
        for name in ("max_rotation", "max_scale", "max_translation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{prefix}.{name}", "must be non-negative")
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ConfigError(f"{prefix}.image_size", "image too small")


@dataclass
class Sample:
    image: Tensor
    lanes: list
    source_id: str = ""


@dataclass
class _Scene:
    vp_x: float
    vp_h: float
    top: float
    curvature: float
    bottoms: list


def _lane_x(scene, x_bottom, h, width):
    t = h / scene.vp_h
    return x_bottom + (scene.vp_x - x_bottom) * t + scene.curvature * width * t * t


def _scene(rng, cfg):
    h, w = cfg.image_size
    vp_x = w * rng.uniform(0.38, 0.62)
    vp_h = h * rng.uniform(0.55, 0.72)
    top = vp_h * rng.uniform(0.78, 0.88)
    curv = rng.uniform(*cfg.curvature)
    n = rng.integers(*cfg.lane_count)
    spacing = w * rng.uniform(*cfg.spacing)
    shift = rng.uniform(-0.5, 0.5)
    bottoms = [vp_x + (k - (n - 1) / 2.0 + shift) * spacing for k in range(n)]
    return _Scene(vp_x, vp_h, top, curv, bottoms)


def _scene_lanes(scene, cfg):
    h, w = cfg.image_size
    ys = lane_ys(cfg.n_pts, h)
    lanes = []
    for xb in scene.bottoms:
        xs = _lane_x(scene, xb, ys, w)
        top_idx = int(np.floor(scene.top / (h / (cfg.n_pts - 1)) + 1e-9))
        full = np.where(np.arange(cfg.n_pts) <= top_idx, xs, np.nan)
        inside = (full >= 0) & (full < w)
        if not inside[top_idx]:
            continue
        s = top_idx
        while s > 0 and inside[s - 1]:
            s -= 1
        if top_idx - s < 1:
            continue
        out = np.full(cfg.n_pts, np.nan)
        out[s : top_idx + 1] = xs[s : top_idx + 1]
        lanes.append(Lane(out, s, top_idx, category=1))
    return lanes


def _render(scene, cfg, rng):
    h, w = cfg.image_size
    # background: sky band above the horizon, road below, coarse texture plus pixel noise
    heights = h - np.arange(h) - 0.5
    road = rng.uniform(0.22, 0.38)
    sky = rng.uniform(0.45, 0.65)
    base = np.where(heights > scene.vp_h, sky, road - 0.08 * (heights / h))
    img = np.repeat(base[:, None], w, axis=1)[None].repeat(3, axis=0)
    if cfg.noise > 0:
        ch, cw = max(1, h // 8), max(1, w // 8)
        coarse = rng.random(ch * cw).reshape(ch, cw) - 0.5
        coarse = np.kron(coarse, np.ones((int(np.ceil(h / ch)), int(np.ceil(w / cw)))))[:h, :w]
        fine = rng.random(3 * h * w).reshape(3, h, w) - 0.5
        img = img + cfg.noise * (coarse[None] + fine)
    cols = np.arange(w) + 0.5
    # rows whose lower edge is under the lane top, so every GT point sits on a drawn row
    visible = heights - 0.5 <= scene.top
    for xb in scene.bottoms:
        xc = _lane_x(scene, xb, heights, w)
        half = 0.5 * cfg.line_width * (1.0 - 0.6 * heights / scene.vp_h)
        alpha = np.clip(half[:, None] + 0.5 - np.abs(cols[None, :] - xc[:, None]), 0.0, 1.0)
        alpha *= visible[:, None]
        yellow = rng.random() < 0.3
        color = np.array([0.95, 0.85, 0.25]) if yellow else np.array([0.95, 0.95, 0.95])
        img = img * (1.0 - alpha[None]) + color[:, None, None] * alpha[None]
    if rng.random() < cfg.occlusion_probability and scene.bottoms:
        # a dark box standing on one lane, like a vehicle hiding the marking
        k = rng.integers(0, len(scene.bottoms) - 1)
        hb = rng.uniform(0.05, 0.5) * scene.top
        xc = _lane_x(scene, scene.bottoms[k], hb, w)
        bw = w * rng.uniform(0.08, 0.16) * (1.0 - 0.6 * hb / scene.vp_h)
        bh = bw * rng.uniform(0.6, 0.9)
        r0 = int(max(0, h - hb - bh))
        r1 = int(min(h, h - hb))
        c0 = int(max(0, xc - bw / 2))
        c1 = int(min(w, xc + bw / 2))
        img[:, r0:r1, c0:c1] = rng.uniform(0.02, 0.12)
    return np.clip(img, 0.0, 1.0)


def generate_sample(config: SyntheticConfig, index: int) -> Sample:
    """Render scene ``index`` of the dataset seeded by ``config.seed``."""
    config.validate()
    rng = SplitMix64.for_sample(config.seed, index)
    scene = _scene(rng, config)
    image = _render(scene, config, rng)
    lanes = _scene_lanes(scene, config)
    sample = Sample(Tensor(image), lanes, f"synthetic/{config.seed}/{index:06d}")
    return augment(sample, rng, config)


def generate_split(config, start, count):
    return [generate_sample(config, i) for i in range(start, start + count)]


# ---------------------------------------------------------------- augmentation


def flip_lane(lane, width):
    return Lane(width - lane.xs, lane.s, lane.e, lane.score, lane.category)


def affine_matrix(angle_deg, scale, tx, ty, image_size):
    """Forward 2x3 map on top-down pixel coordinates ``(x, y)``, about the image centre."""
    h, w = image_size
    a = np.radians(angle_deg)
    c, s = np.cos(a) * scale, np.sin(a) * scale
    cx, cy = w / 2.0, h / 2.0
    lin = np.array([[c, -s], [s, c]])
    off = np.array([cx + tx, cy + ty]) - lin @ np.array([cx, cy])
    return np.concatenate([lin, off[:, None]], axis=1)


def warp_image(image, matrix):
    """Apply a forward affine map to a ``[3, H, W]`` array (bilinear, edge-replicated)."""
    lin, off = matrix[:, :2], matrix[:, 2]
    inv = np.linalg.inv(lin)
    # ndimage works in (row, col) = (y, x) index space on pixel centres
    perm = np.array([[0, 1], [1, 0]])
    inv_rc = perm @ inv @ perm
    center_fix = 0.5 * np.ones(2)
    inv_off_xy = -inv @ off
    # pixel (r, c) has centre (c + .5, r + .5)
    off_rc = perm @ inv_off_xy + inv_rc @ center_fix - center_fix
    return np.stack(
        [ndimage.affine_transform(ch, inv_rc, offset=off_rc, order=1, mode="nearest") for ch in image]
    )


def resample_points(xs, ys_down, height, n_pts, category=None):
    """Lane on the height grid by linear interpolation of ``(x, y_down)`` points.

    Only grid heights inside the labelled extent are filled. Returns ``None``
    when no grid height falls inside it.
    """
    xs = np.asarray(xs, dtype=np.float64)
    hs = height - np.asarray(ys_down, dtype=np.float64)
    if len(xs) == 0:
        return None
    order = np.argsort(hs, kind="stable")
    xs, hs = xs[order], hs[order]
    grid = lane_ys(n_pts, height)
    tol = 1e-9 * max(1.0, height)
    inside = np.flatnonzero((grid >= hs[0] - tol) & (grid <= hs[-1] + tol))
    if len(inside) == 0:
        return None
    s, e = int(inside[0]), int(inside[-1])
    out = np.full(n_pts, np.nan)
    out[s : e + 1] = np.interp(grid[s : e + 1], hs, xs)
    return Lane(out, s, e, category=category)


def transform_lane(lane, matrix, image_size):
    h, w = image_size
    pts = lane.points(h)
    moved = pts @ matrix[:, :2].T + matrix[:, 2]
    new = resample_points(moved[:, 0], moved[:, 1], h, lane.n_pts, lane.category)
    return None if new is None else clip_lane(new, w)


def augment(sample, rng, config):
    """Random horizontal flip then random affine jitter, applied to image and lanes alike."""
    h, w = config.image_size
    image = sample.image.data
    lanes = list(sample.lanes)
    if rng.random() < config.flip_probability:
        image = image[:, :, ::-1].copy()
        lanes = [flip_lane(l, w) for l in lanes]
    angle = rng.uniform(-config.max_rotation, config.max_rotation)
    scale = 1.0 + rng.uniform(-config.max_scale, config.max_scale)
    tx = w * rng.uniform(-config.max_translation, config.max_translation)
    ty = h * rng.uniform(-config.max_translation, config.max_translation)
    if angle or scale != 1.0 or tx or ty:
        m = affine_matrix(angle, scale, tx, ty, (h, w))
        image = np.clip(warp_image(image, m), 0.0, 1.0)
        lanes = [t for t in (transform_lane(l, m, (h, w)) for l in lanes) if t is not None and t.e > t.s]
    return Sample(Tensor(image), lanes, sample.source_id)


# ---------------------------------------------------------------- TuSimple


def parse_tusimple_labels(text, image_height=720, n_pts=72):
    """Parse line-delimited TuSimple records into ``[(raw_file, [Lane, ...]), ...]``.

    ``-2`` marks an absent point; lanes are interpolated between present points.
    """
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        if not isinstance(rec, dict):
            raise DataError("record must be an object", line=lineno)
        for key in ("lanes", "h_samples", "raw_file"):
            if key not in rec:
                raise DataError(f"missing key {key!r}", line=lineno)
        try:
            hs = np.asarray(rec["h_samples"], dtype=np.float64).reshape(-1)
        except (TypeError, ValueError) as exc:
            raise DataError("h_samples must be a list of numbers", line=lineno) from exc
        if not isinstance(rec["lanes"], list):
            raise DataError("lanes must be a list", line=lineno)
        lanes = []
        for k, xs in enumerate(rec["lanes"]):
            try:
                xs = np.asarray(xs, dtype=np.float64).reshape(-1)
            except (TypeError, ValueError) as exc:
                raise DataError(f"lane {k} must be a list of numbers", line=lineno) from exc
            if len(xs) != len(hs):
                raise DataError(
                    f"lane {k} has {len(xs)} points but h_samples has {len(hs)}", line=lineno
                )
            present = xs != -2
            if not np.all(np.isfinite(xs[present])) or not np.all(np.isfinite(hs[present])):
                raise DataError(f"lane {k} has non-finite coordinates", line=lineno)
            if present.sum() == 0:
                continue
            lane = resample_points(xs[present], hs[present], image_height, n_pts, category=1)
            if lane is not None:
                lanes.append(lane)
        out.append((str(rec["raw_file"]), lanes))
    return out


def _lane_x_at(lane, height, ys_down):
    grid = lane_ys(lane.n_pts, height)
    hs = height - np.asarray(ys_down, dtype=np.float64)
    lo, hi = grid[lane.s], grid[lane.e]
    tol = 1e-9 * max(1.0, height)
    inside = (hs >= lo - tol) & (hs <= hi + tol)
    xs = np.interp(hs, grid[lane.s : lane.e + 1], lane.valid_xs())
    return xs, inside


def write_tusimple_labels(records, h_samples, image_height=720, image_width=None):
    """Inverse of :func:`parse_tusimple_labels`; ``records`` is ``[(raw_file, lanes)]``."""
    lines = []
    for raw_file, lanes in records:
        rows = []
        for lane in lanes:
            xs, inside = _lane_x_at(lane, image_height, h_samples)
            if image_width is not None:
                inside &= (xs >= 0) & (xs < image_width)
            rows.append([float(x) if ok else -2 for x, ok in zip(xs, inside)])
        rec = {"lanes": rows, "h_samples": [float(h) for h in h_samples], "raw_file": raw_file}
        lines.append(json.dumps(rec))
    return "\n".join(lines) + ("\n" if lines else "")


def grid_h_samples(height, n_pts):
    """Top-down y of every lane-grid height, top first (TuSimple ordering)."""
    return [float(height - y) for y in lane_ys(n_pts, height)[::-1]]


# ---------------------------------------------------------------- CULane


def parse_culane_labels(text, image_height=590, n_pts=72):
    """Parse one CULane ``.lines.txt`` body into lanes on the height grid."""
    lanes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = line.split()
        if not toks:
            continue
        if len(toks) % 2:
            raise DataError(f"odd number of coordinates ({len(toks)})", line=lineno)
        try:
            vals = np.array([float(t) for t in toks]).reshape(-1, 2)
        except ValueError as exc:
            raise DataError(f"non-numeric coordinate: {exc}", line=lineno) from exc
        if not np.all(np.isfinite(vals)):
            raise DataError("non-finite coordinate", line=lineno)
        lane = resample_points(vals[:, 0], vals[:, 1], image_height, n_pts, category=1)
        if lane is not None:
            lanes.append(lane)
    return lanes


def write_culane_labels(lanes, image_height=590):
    """``x y`` pairs per lane, bottom point first (descending image y)."""
    grid = lane_ys(lanes[0].n_pts, image_height) if lanes else None
    out = []
    for lane in lanes:
        pairs = []
        for i in range(lane.s, lane.e + 1):
            pairs.append(f"{float(lane.xs[i])!r} {float(image_height - grid[i])!r}")
        out.append(" ".join(pairs))
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------- PPM


def write_ppm(path, image):
    """Binary P6 from a ``[3, H, W]`` array in [0, 1]."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    rgb = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        buf = f.read()
    parts = []
    pos = 0
    while len(parts) < 4:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end : end + 1].isspace():
            end += 1
        parts.append(buf[pos:end])
        pos = end
    if parts[0] != b"P6":
        raise DataError("not a binary PPM")
    w, h, maxval = (int(p) for p in parts[1:])
    pos += 1
    rgb = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)
    return rgb.transpose(2, 0, 1).astype(np.float64) / maxval


def draw_lane(image, lane, color, thickness=2):
    """Draw ``lane`` onto a ``[3, H, W]`` array in place (nearest-pixel polyline)."""
    _, h, w = image.shape
    pts = lane.points(h)
    if len(pts) == 1:
        pts = np.repeat(pts, 2, axis=0)
    color = np.asarray(color, dtype=np.float64)
    r = thickness // 2
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
        for t in np.linspace(0.0, 1.0, n + 1):
            cx = int(np.floor(x0 + t * (x1 - x0)))
            cy = int(np.floor(y0 + t * (y1 - y0)))
            image[:, max(0, cy - r) : min(h, cy + r + 1), max(0, cx - r) : min(w, cx + r + 1)] = color[:, None, None]
    return image
