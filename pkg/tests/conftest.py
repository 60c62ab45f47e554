import numpy as np
import pytest

from laneatt.anchors import AnchorSet
from laneatt.model import BackboneConfig, LaneATT, ModelConfig

# two anchors on a 16x16 image: a vertical one from the bottom and a slanted one from the left
TOY_ANCHORS = "id,border,x_orig,y_orig,theta\n0,bottom,6.0,0.0,90.0\n1,left,0.0,3.2,30.0\n"


def toy_config(**overrides):
    bb = BackboneConfig(channels=(3, 4), strides=(2, 1), kernel_size=3, reduced_channels=2,
                        input_size=(16, 16))
    return ModelConfig(backbone=bb, n_pts=6, **overrides)


def toy_model(seed=0, anchors=TOY_ANCHORS, **overrides):
    cfg = toy_config(**overrides)
    aset = AnchorSet.from_csv(anchors, (16, 16), cfg.n_pts, cfg.backbone.stride)
    return LaneATT(cfg, aset, seed=seed)


@pytest.fixture
def toy():
    return toy_model()


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
