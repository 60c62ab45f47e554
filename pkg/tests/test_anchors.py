import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laneatt.anchors import (
    Anchor,
    AnchorConfig,
    AnchorSet,
    Lane,
    clip_lane,
    filter_anchors,
    generate_anchors,
    lane_ys,
    positive_counts,
    project_anchor,
)
from laneatt.data import SyntheticConfig, generate_split
from laneatt.errors import ConfigError, DataError
from oracles import column_by_line_walk, recount_filter


def test_lane_grid_is_exact():
    ys = lane_ys(72, 160)
    assert ys[0] == 0.0 and ys[-1] == 160.0
    assert all(ys[i] == i * 160 / 71 for i in range(72))


def test_lane_range_validation():
    Lane(np.zeros(5), 0, 4)
    Lane(np.zeros(5), 2, 2)
    for s, e in [(-1, 2), (3, 2), (0, 5)]:
        with pytest.raises(ValueError):
            Lane(np.zeros(5), s, e)


def test_clip_lane_keeps_longest_inside_run():
    xs = np.array([-5.0, 1, 2, 50, 3, 4, 5, -1])
    out = clip_lane(Lane(xs, 0, 7), 10)
    assert (out.s, out.e) == (4, 6)
    assert np.array_equal(out.valid_xs(), [3, 4, 5])
    assert clip_lane(Lane(np.full(3, -1.0), 0, 2), 10) is None


# ---------------------------------------------------------------- projection


def _anchor(x, y, theta):
    return Anchor(0, "bottom", x, y, theta)


def test_project_vertical_anchor():
    cols = project_anchor(_anchor(7.6, 0.0, 90.0), (5, 10), 1)
    assert cols == [(j, 7) for j in range(5)]


def test_project_unit_slope():
    cols = project_anchor(_anchor(0.0, 0.0, 45.0), (6, 10), 1)
    assert cols == [(j, j) for j in range(6)]


def test_project_hand_example():
    # theta 30, origin (10, 0), stride 4, row 3: floor(sqrt(3) * 3 + 2.5) = 7
    cols = dict(project_anchor(_anchor(10.0, 0.0, 30.0), (8, 20), 4))
    assert cols[3] == math.floor(math.sqrt(3) * 3 + 2.5) == 7


def test_project_rejects_parallel_directions():
    for theta in (0.0, 180.0):
        with pytest.raises(ValueError):
            project_anchor(_anchor(0.0, 0.0, theta), (4, 4), 1)


def test_project_matches_line_walk_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        h_f, w_f = int(rng.integers(1, 65)), int(rng.integers(1, 65))
        stride = int(rng.choice([1, 2, 4, 8, 16]))
        h, w = h_f * stride, w_f * stride
        border = rng.integers(3)
        theta = float(rng.choice([rng.uniform(1, 179), 90.0, 45.0, 135.0, 30.0]))
        if border == 1:
            x, y = float(rng.uniform(0, w)), 0.0
        else:
            x, y = (0.0 if border == 0 else float(w)), float(lane_ys(72, h)[rng.integers(72)])
        got = [c for _, c in project_anchor(_anchor(x, y, theta), (h_f, w_f), stride)]
        assert got == column_by_line_walk(x, y, theta, h_f, stride)


def test_projection_cache_coherent():
    aset = generate_anchors(AnchorConfig(), (160, 320))
    for a in aset.anchors[::97]:
        assert [c for _, c in project_anchor(a, aset.feature_size, aset.stride)] == list(a.feature_cols)


# ---------------------------------------------------------------- generation


def test_default_anchor_count():
    assert len(generate_anchors(AnchorConfig(), (160, 320))) == 2782
    assert len(generate_anchors(AnchorConfig(), (352, 640))) == 2782


def test_single_anchor_config():
    cfg = AnchorConfig(left_angles=(30.0,), bottom_angles=(90.0,), right_angles=(150.0,),
                       n_left=1, n_bottom=1, n_right=1)
    aset = generate_anchors(cfg, (64, 64))
    assert len(aset) == 3
    left = aset[0]
    assert (left.border, left.x_orig, left.theta) == ("left", 0.0, 30.0)


def test_generation_order_and_borders():
    aset = generate_anchors(AnchorConfig(), (160, 320))
    borders = [a.border for a in aset]
    assert borders == sorted(borders, key=["left", "bottom", "right"].index)
    assert [a.id for a in aset] == list(range(len(aset)))
    left = [a for a in aset if a.border == "left"]
    assert [a.y_orig for a in left[::6]] == sorted((a.y_orig for a in left[::6]), reverse=True)
    assert [a.theta for a in left[:6]] == list(AnchorConfig().left_angles)
    for a in aset:
        if a.border == "left":
            assert a.x_orig == 0.0
        elif a.border == "right":
            assert a.x_orig == 320.0
        else:
            assert a.y_orig == 0.0 and 0 <= a.x_orig <= 320


def test_origins_map_to_grid_starts():
    aset = generate_anchors(AnchorConfig(), (160, 320))
    ys = lane_ys(72, 160)
    starts = aset.starts()
    assert ((starts >= 0) & (starts <= 71)).all()
    assert np.allclose(ys[starts], [a.y_orig for a in aset])


def test_generation_deterministic():
    a = generate_anchors(AnchorConfig(), (160, 320)).to_csv()
    assert a == generate_anchors(AnchorConfig(), (160, 320)).to_csv()


def test_csv_round_trip():
    aset = generate_anchors(AnchorConfig(), (160, 320))
    back = AnchorSet.from_csv(aset.to_csv(), (160, 320), 72, 16)
    assert back.to_csv() == aset.to_csv()
    assert np.array_equal(back.feature_cols(), aset.feature_cols())


def test_csv_errors():
    with pytest.raises(DataError):
        AnchorSet.from_csv("nope\n", (160, 320))
    with pytest.raises(DataError) as err:
        AnchorSet.from_csv("id,border,x_orig,y_orig,theta\n0,left,0,0\n", (160, 320))
    assert err.value.line == 2


@pytest.mark.parametrize("angle", [0.0, 180.0, -5.0])
def test_config_rejects_degenerate_angles(angle):
    with pytest.raises(ConfigError):
        AnchorConfig(left_angles=(angle,)).validate()


def test_config_rejects_bad_counts():
    with pytest.raises(ConfigError):
        AnchorConfig(n_bottom=0).validate()
    with pytest.raises(ConfigError):
        AnchorConfig(bottom_angles=()).validate()


def test_anchor_lines_pass_through_origin():
    aset = generate_anchors(AnchorConfig(), (160, 320))
    xs = aset.line_xs()
    starts = aset.starts()
    assert np.allclose(xs[np.arange(len(aset)), starts], [a.x_orig for a in aset])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 320), st.floats(1, 179), st.integers(1, 20))
def test_projection_ignores_image_content(x, theta, h_f):
    # pure geometry: the result depends only on the anchor and the grid
    a = _anchor(x, 0.0, theta)
    assert project_anchor(a, (h_f, 20), 16) == project_anchor(a, (h_f, 99), 16)


# ---------------------------------------------------------------- filtering


def _toy_set(n):
    anchors = [Anchor(i, "bottom", 10.0 * i, 0.0, 90.0) for i in range(n)]
    return AnchorSet([Anchor(a.id, a.border, a.x_orig, a.y_orig, a.theta, (0,)) for a in anchors],
                     AnchorConfig(), (16, 64), 5, 16)


def test_filter_top_counts():
    aset = _toy_set(3)
    gt = lambda x: [Lane(np.full(5, x), 0, 4)]
    # anchor 0 positive 5 times, anchor 1 never, anchor 2 three times
    samples = [gt(0.0)] * 5 + [gt(20.0)] * 3
    assert list(positive_counts(aset, samples, 5.0)) == [5, 0, 3]
    kept = filter_anchors(aset, samples, 2, 5.0)
    assert list(kept.source_ids) == [0, 2]
    assert [a.id for a in kept] == [0, 1]


def test_filter_ties_prefer_lower_id():
    aset = _toy_set(4)
    samples = [[Lane(np.full(5, 10.0), 0, 4), Lane(np.full(5, 30.0), 0, 4)]]
    assert list(filter_anchors(aset, samples, 1, 5.0).source_ids) == [1]


def test_filter_identity_when_keeping_all():
    aset = generate_anchors(AnchorConfig(n_left=3, n_bottom=5, n_right=3), (160, 320))
    samples = [s.lanes for s in generate_split(SyntheticConfig(), 0, 5)]
    kept = filter_anchors(aset, samples, len(aset), 15.0)
    assert kept.to_csv() == aset.to_csv()


def test_filter_empty_training_set():
    with pytest.raises(DataError):
        filter_anchors(_toy_set(3), [], 2, 15.0)


def test_filter_matches_recount_oracle():
    aset = generate_anchors(AnchorConfig(n_left=12, n_bottom=20, n_right=12), (160, 320))
    samples = [s.lanes for s in generate_split(SyntheticConfig(seed=3), 0, 100)]
    counts, keep = recount_filter(aset.as_lanes(), samples, 60, 15.0)
    assert list(positive_counts(aset, samples, 15.0)) == counts
    assert list(filter_anchors(aset, samples, 60, 15.0).source_ids) == keep
