"""On-disk layouts for datasets and trained models.

Dataset directory::

    labels.json          TuSimple records, one per line (raw_file = image name)
    <name>.ppm           images
    <name>.lines.txt     the same lanes in CULane format

Model directory::

    config.txt           RunConfig in key = value form
    anchors.csv          the (filtered) anchor set
    model.latt           weights in the LATT checkpoint container
"""

from __future__ import annotations

import os

from . import config as config_mod
from .anchors import AnchorSet
from .data import (
    Sample,
    grid_h_samples,
    parse_tusimple_labels,
    read_ppm,
    write_culane_labels,
    write_ppm,
    write_tusimple_labels,
)
from .errors import DataError
from .model import LaneATT
from .numerics import Tensor, load_checkpoint, save_checkpoint


def save_dataset(directory, samples, image_size, n_pts, formats=("tusimple", "culane")):
    os.makedirs(directory, exist_ok=True)
    h, w = image_size
    records = []
    for k, smp in enumerate(samples):
        name = f"{k:06d}"
        write_ppm(os.path.join(directory, name + ".ppm"), smp.image)
        records.append((name + ".ppm", smp.lanes))
        if "culane" in formats:
            with open(os.path.join(directory, name + ".lines.txt"), "w") as f:
                f.write(write_culane_labels(smp.lanes, h))
    if "tusimple" in formats:
        with open(os.path.join(directory, "labels.json"), "w") as f:
            f.write(write_tusimple_labels(records, grid_h_samples(h, n_pts), h, w))


def load_dataset(directory, image_height, n_pts):
    path = os.path.join(directory, "labels.json")
    if not os.path.exists(path):
        raise DataError(f"{path} not found")
    with open(path) as f:
        records = parse_tusimple_labels(f.read(), image_height, n_pts)
    samples = []
    for raw_file, lanes in records:
        img_path = os.path.join(directory, raw_file)
        if not os.path.exists(img_path):
            raise DataError(f"image {img_path} not found")
        samples.append(Sample(Tensor(read_ppm(img_path)), lanes, raw_file))
    return samples


def save_model(directory, model, run_cfg):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "config.txt"), "w") as f:
        f.write(config_mod.to_text(run_cfg))
    with open(os.path.join(directory, "anchors.csv"), "w") as f:
        f.write(model.anchors.to_csv())
    save_checkpoint(os.path.join(directory, "model.latt"), model.state_dict())


def load_model(directory, checkpoint=None):
    """``(model, run_cfg)`` from a model directory; ``checkpoint`` overrides ``model.latt``."""
    cfg_path = os.path.join(directory, "config.txt")
    if not os.path.exists(cfg_path):
        raise DataError(f"{cfg_path} not found")
    run_cfg = config_mod.load(cfg_path)
    bb = run_cfg.model.backbone
    with open(os.path.join(directory, "anchors.csv")) as f:
        anchors = AnchorSet.from_csv(f.read(), bb.input_size, run_cfg.model.n_pts, bb.stride, run_cfg.anchors)
    model = LaneATT(run_cfg.model, anchors)
    model.load_state_dict(load_checkpoint(checkpoint or os.path.join(directory, "model.latt")))
    return model, run_cfg
