"""Anchor-based lane detection with anchor attention, on a small numpy autodiff core."""

from .anchors import AnchorConfig, AnchorSet, Lane, filter_anchors, generate_anchors
from .config import RunConfig
from .data import SyntheticConfig, generate_sample, generate_split
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    EmptyAssignmentError,
    LaneATTError,
    TapeError,
)
from .eval import MetricsReport, benchmark, culane_score, tusimple_score
from .loss import LossConfig, total_loss
from .matching import assign_targets, lane_distance, nms
from .model import BackboneConfig, LaneATT, ModelConfig
from .train import MatchingConfig, TrainConfig, train

__version__ = "0.1.0"
