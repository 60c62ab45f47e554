"""``laneatt`` command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import copy
import glob
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from . import numerics as nx
from .anchors import generate_anchors
from .data import (
    draw_lane,
    generate_split,
    grid_h_samples,
    parse_culane_labels,
    parse_tusimple_labels,
    read_ppm,
    write_culane_labels,
    write_ppm,
    write_tusimple_labels,
)
from .errors import ConfigError, DataError, LaneATTError
from .eval import benchmark, culane_score, iou_matrix, match_lanes, tusimple_score
from .model import LaneATT
from .store import load_dataset, load_model, save_dataset, save_model
from .train import build_anchor_set, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

# synthetic validation images are drawn from this index onward
VAL_OFFSET = 1_000_000


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("argv", message)


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from exc
    return h, w


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int,
                        help="seed for data and training (falls back to $LANEATT_SEED)")

    p = _Parser(prog="laneatt", description="Anchor-based lane detection with anchor attention.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int)
    g.add_argument("--start", type=int, default=0)
    g.add_argument("--format", choices=["tusimple", "culane", "both"], default="both")

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--out", required=True, help="model directory")
    t.add_argument("--data", help="dataset directory (default: synthetic)")
    t.add_argument("--val-data", help="validation dataset directory (default: synthetic)")
    t.add_argument("--epochs", type=int)

    i = sub.add_parser("infer", parents=[common], help="run a trained model on a dataset")
    i.add_argument("--model", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--format", choices=["tusimple", "culane"], default="tusimple")
    i.add_argument("--out", required=True, help="labels file (tusimple) or directory (culane)")

    s = sub.add_parser("score", parents=[common], help="score predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--format", choices=["tusimple", "culane"], default="tusimple")
    s.add_argument("--metric", choices=["tusimple", "culane"])
    s.add_argument("--image-size", type=_size, help="HxW (default: config input size)")
    s.add_argument("--line-width", type=int, default=30)
    s.add_argument("--csv", help="also write the report as CSV here")

    b = sub.add_parser("bench", parents=[common], help="FPS and MACs sweeps")
    b.add_argument("--anchors", type=_int_list, default=[250, 500, 1000])
    b.add_argument("--sizes", type=lambda v: [_size(x) for x in v.split(",")],
                   default=[(160, 320), (288, 512), (352, 640)])
    b.add_argument("--repetitions", type=int, default=10)

    r = sub.add_parser("render", parents=[common], help="overlay detections on images")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--limit", type=int)

    f = sub.add_parser("filter-anchors", parents=[common], help="keep the most used anchors")
    f.add_argument("--out", required=True, help="anchor CSV path")
    f.add_argument("--data", help="dataset directory (default: synthetic)")
    f.add_argument("--n-anchors", type=int)
    return p


def _run_config(args):
    cfg = config_mod.RunConfig()
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError("--config", f"{args.config} not found")
        cfg = config_mod.load(args.config, cfg)
    items = []
    for item in args.set:
        if "=" not in item:
            raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
        items.append(tuple(item.split("=", 1)))
    config_mod.apply_overrides(cfg, items)
    seed = args.seed
    if seed is None and os.environ.get("LANEATT_SEED"):
        try:
            seed = int(os.environ["LANEATT_SEED"])
        except ValueError as exc:
            raise ConfigError("LANEATT_SEED", "must be an integer") from exc
    if seed is not None:
        cfg.data.seed = seed
        cfg.train.seed = seed
    return cfg


def _train_samples(args, cfg):
    if getattr(args, "data", None):
        return load_dataset(args.data, cfg.model.backbone.input_size[0], cfg.model.n_pts)
    return generate_split(cfg.data, 0, cfg.train.train_samples)


def cmd_gen_data(args, cfg, out):
    cfg.validate()
    count = args.count if args.count is not None else cfg.train.train_samples
    samples = generate_split(cfg.data, args.start, count)
    formats = ("tusimple", "culane") if args.format == "both" else (args.format,)
    save_dataset(args.out, samples, cfg.data.image_size, cfg.data.n_pts, formats)
    print(f"wrote {count} samples to {args.out}", file=out)


def cmd_train(args, cfg, out):
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    cfg.validate()
    samples = _train_samples(args, cfg)
    if args.val_data:
        val = load_dataset(args.val_data, cfg.model.backbone.input_size[0], cfg.model.n_pts)
    else:
        val = generate_split(cfg.data, VAL_OFFSET, cfg.train.val_samples)
    anchors = build_anchor_set(cfg.anchors, cfg.model, cfg.train.n_anchors,
                               [s.lanes for s in samples], cfg.matching.tau_p)
    model = LaneATT(cfg.model, anchors, seed=cfg.train.seed)
    save_model(args.out, model, cfg)
    ckpt_dir = os.path.join(args.out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)

    def report(epoch, hist):
        print(f"epoch {epoch} loss {hist.losses[-1]:.6f} f1 {hist.f1[-1]:.4f}", file=out, flush=True)

    train(model, samples, cfg.train, cfg.matching, cfg.loss, val_samples=val,
          checkpoint_dir=ckpt_dir, callback=report)
    save_model(args.out, model, cfg)
    print(f"saved model to {args.out}", file=out)


def _images(directory):
    paths = sorted(glob.glob(os.path.join(directory, "*.ppm")))
    if not paths:
        raise DataError(f"no .ppm images in {directory}")
    return paths


def cmd_infer(args, out):
    model, cfg = load_model(args.model)
    h, w = model.image_size
    m = cfg.matching
    records = []
    for path in _images(args.data):
        img = read_ppm(path)
        if img.shape != (3, h, w):
            raise DataError(f"{path}: image is {img.shape[1]}x{img.shape[2]}, model expects {h}x{w}")
        lanes = model.detect(nx.Tensor(img), m.confidence_threshold, m.nms_threshold, m.max_lanes or None)
        records.append((os.path.basename(path), lanes))
    if args.format == "tusimple":
        with open(args.out, "w") as f:
            f.write(write_tusimple_labels(records, grid_h_samples(h, model.config.n_pts), h, w))
    else:
        os.makedirs(args.out, exist_ok=True)
        for name, lanes in records:
            stem = name[: -len(".ppm")]
            with open(os.path.join(args.out, stem + ".lines.txt"), "w") as f:
                f.write(write_culane_labels(lanes, h))
    print(f"wrote predictions for {len(records)} images to {args.out}", file=out)


def _read_labels(path, fmt, height, n_pts):
    if fmt == "tusimple":
        if not os.path.isfile(path):
            raise DataError(f"{path} not found")
        with open(path) as f:
            return dict(parse_tusimple_labels(f.read(), height, n_pts))
    if not os.path.isdir(path):
        raise DataError(f"{path} is not a directory of .lines.txt files")
    out = {}
    for p in sorted(glob.glob(os.path.join(path, "*.lines.txt"))):
        with open(p) as f:
            out[os.path.basename(p)[: -len(".lines.txt")]] = parse_culane_labels(f.read(), height, n_pts)
    return out


def cmd_score(args, cfg, out):
    cfg.validate()
    size = args.image_size or cfg.model.backbone.input_size
    n_pts = cfg.model.n_pts
    pred = _read_labels(args.pred, args.format, size[0], n_pts)
    gt = _read_labels(args.gt, args.format, size[0], n_pts)
    metric = args.metric or args.format
    if metric == "tusimple":
        rep = tusimple_score(pred, gt)
    else:
        rep = culane_score(pred, gt, size, line_width=args.line_width)
    out.write(rep.to_text())
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(rep.to_csv())


def cmd_bench(args, cfg, out):
    cfg.validate()
    base_size = tuple(cfg.model.backbone.input_size)
    base_anchors = cfg.train.n_anchors
    runs = [(n, base_size) for n in args.anchors] + [(base_anchors, s) for s in args.sizes]
    print("n_anchors,input_size,fps,macs,spread", file=out)
    print("# MACs count conv, dense and matmul multiply-accumulates of one forward pass", file=out)
    for n, size in runs:
        run_cfg = copy.deepcopy(cfg)
        run_cfg.model.backbone.input_size = size
        run_cfg.data.image_size = size
        run_cfg.train.n_anchors = n
        run_cfg.validate()
        anchors = build_anchor_set(run_cfg.anchors, run_cfg.model, n)
        model = LaneATT(run_cfg.model, anchors, seed=cfg.train.seed)
        fps, macs, spread = benchmark(model, args.repetitions, 3,
                                      cfg.matching.confidence_threshold, cfg.matching.nms_threshold)
        print(f"{n},{size[0]}x{size[1]},{fps:.2f},{macs},{spread:.3f}", file=out)


def cmd_render(args, out):
    model, cfg = load_model(args.model)
    h, w = model.image_size
    m = cfg.matching
    samples = load_dataset(args.data, h, model.config.n_pts)
    if args.limit is not None:
        samples = samples[: args.limit]
    os.makedirs(args.out, exist_ok=True)
    for smp in samples:
        preds = model.detect(smp.image, m.confidence_threshold, m.nms_threshold, m.max_lanes or None)
        matched = {i for i, _ in match_lanes(iou_matrix(preds, smp.lanes, (h, w)))}
        img = smp.image.data.copy()
        for lane in smp.lanes:
            draw_lane(img, lane, (0.0, 0.0, 1.0), 3)
        for k, lane in enumerate(preds):
            draw_lane(img, lane, (0.0, 1.0, 0.0) if k in matched else (1.0, 0.0, 0.0), 1)
        write_ppm(os.path.join(args.out, os.path.splitext(os.path.basename(smp.source_id))[0] + ".ppm"), img)
    print(f"rendered {len(samples)} images to {args.out}", file=out)


def cmd_filter_anchors(args, cfg, out):
    if args.n_anchors is not None:
        cfg.train.n_anchors = args.n_anchors
    cfg.validate()
    samples = _train_samples(args, cfg)
    bb = cfg.model.backbone
    full = generate_anchors(cfg.anchors, bb.input_size, cfg.model.n_pts, bb.stride)
    kept = build_anchor_set(cfg.anchors, cfg.model, cfg.train.n_anchors,
                            [s.lanes for s in samples], cfg.matching.tau_p)
    with open(args.out, "w") as f:
        f.write(kept.to_csv())
    print(f"kept {len(kept)} of {len(full)} anchors -> {args.out}", file=out)


def run(argv=None, out=None):
    """Run one subcommand; returns the process exit code."""
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        cfg = _run_config(args)
        if args.command == "gen-data":
            cmd_gen_data(args, cfg, out)
        elif args.command == "train":
            cmd_train(args, cfg, out)
        elif args.command == "infer":
            cmd_infer(args, out)
        elif args.command == "score":
            cmd_score(args, cfg, out)
        elif args.command == "bench":
            cmd_bench(args, cfg, out)
        elif args.command == "render":
            cmd_render(args, out)
        elif args.command == "filter-anchors":
            cmd_filter_anchors(args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AssertionError, LaneATTError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main():
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
