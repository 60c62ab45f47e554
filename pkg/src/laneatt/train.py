"""Training loop: training-time NMS, target assignment, loss, optimizer step."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .anchors import AnchorSet, filter_anchors, generate_anchors
from .errors import ConfigError, EmptyAssignmentError
from .eval import culane_score
from .loss import LossConfig, total_loss
from .matching import assign_targets, nms_arrays
from .model import LaneATT, ModelConfig

log = logging.getLogger(__name__)


@dataclass
class MatchingConfig:
    tau_p: float = 15.0
    tau_n: float = 20.0
    nms_threshold: float = 50.0
    confidence_threshold: float = 0.5
    train_nms_threshold: float = 15.0
    max_lanes: int = 0

    def validate(self, prefix="matching"):
        if self.tau_p > self.tau_n:
            raise ConfigError(f"{prefix}.tau_p", f"tau_p={self.tau_p} exceeds tau_n={self.tau_n}")
        if self.tau_p <= 0:
            raise ConfigError(f"{prefix}.tau_p", "must be positive")
        for name in ("nms_threshold", "train_nms_threshold"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{prefix}.{name}", "must be positive")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ConfigError(f"{prefix}.confidence_threshold", "must lie in [0, 1]")
        if self.max_lanes < 0:
            raise ConfigError(f"{prefix}.max_lanes", "must be >= 0 (0 means unlimited)")


@dataclass
class TrainConfig:
    epochs: int = 30
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1
    n_anchors: int = 1000
    train_samples: int = 500
    val_samples: int = 100
    seed: int = 0

    def validate(self, prefix="train"):
        if self.epochs < 0:
            raise ConfigError(f"{prefix}.epochs", "must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"{prefix}.optimizer", "must be 'adam' or 'sgd'")
        if self.lr <= 0:
            raise ConfigError(f"{prefix}.lr", "must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"{prefix}.momentum", "must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size", "must be >= 1")
        if self.n_anchors < 2:
            raise ConfigError(f"{prefix}.n_anchors", "need at least 2 anchors")
        if self.train_samples < 1:
            raise ConfigError(f"{prefix}.train_samples", "must be >= 1")


class SGD:
    def __init__(self, params, lr, momentum=0.0):
        self.params, self.lr, self.momentum = params, lr, momentum
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        for k, p in self.params.items():
            if p.grad is None:
                continue
            v = self.velocity[k]
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.lr * v


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return SGD(params, cfg.lr, cfg.momentum)


def image_loss(model, sample, matching: MatchingConfig, loss_cfg: LossConfig, anchor_lanes=None):
    """Loss tensor for one sample; must run inside an active tape to be differentiable.

    Training-time NMS (no confidence filter) picks the anchors that take part
    in target assignment and in the loss.
    """
    cls, reg = model.forward(sample.image)
    xs, s, e, scores, _ = model.decode(cls, reg)
    keep = np.sort(nms_arrays(xs, s, e, scores, matching.train_nms_threshold, None))
    lanes = anchor_lanes if anchor_lanes is not None else model.anchors.as_lanes()
    assignment = assign_targets([lanes[k] for k in keep], sample.lanes, matching.tau_p, matching.tau_n)
    return total_loss(nx.take_rows(cls, keep), nx.take_rows(reg, keep), assignment, loss_cfg), assignment


def evaluate(model, samples, matching: MatchingConfig, line_width=30):
    """CULane-style report of ``model`` on ``samples``."""
    preds, gts = [], []
    max_lanes = matching.max_lanes or None
    for smp in samples:
        preds.append(model.detect(smp.image, matching.confidence_threshold, matching.nms_threshold, max_lanes))
        gts.append(smp.lanes)
    return culane_score(preds, gts, model.image_size, line_width=line_width)


@dataclass
class History:
    losses: list = field(default_factory=list)
    f1: list = field(default_factory=list)
    seconds: float = 0.0


def train(model, samples, train_cfg: TrainConfig, matching: MatchingConfig, loss_cfg: LossConfig,
          val_samples=None, checkpoint_dir=None, callback=None):
    """Train ``model`` in place; returns a :class:`History` of per-epoch mean loss and F1."""
    train_cfg.validate()
    matching.validate()
    loss_cfg.validate()
    opt = make_optimizer(model.params, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    anchor_lanes = model.anchors.as_lanes()
    hist = History()
    t0 = time.perf_counter()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(samples))
        total, n = 0.0, 0
        for b in range(0, len(order), train_cfg.batch_size):
            batch = order[b : b + train_cfg.batch_size]
            with nx.Tape() as tape:
                loss = None
                for i in batch:
                    try:
                        li, _ = image_loss(model, samples[i], matching, loss_cfg, anchor_lanes)
                    except EmptyAssignmentError:
                        continue
                    loss = li if loss is None else loss + li
            if loss is None:
                continue
            nx.backward(tape, loss)
            opt.step()
            total += loss.item()
            n += len(batch)
        hist.losses.append(total / max(n, 1))
        if val_samples is not None:
            hist.f1.append(evaluate(model, val_samples, matching).f1)
        if checkpoint_dir is not None:
            nx.save_checkpoint(os.path.join(checkpoint_dir, f"epoch_{epoch + 1:03d}.latt"), model.state_dict())
        log.info("epoch %d loss %.4f%s", epoch + 1, hist.losses[-1],
                 f" f1 {hist.f1[-1]:.4f}" if hist.f1 else "")
        if callback is not None:
            callback(epoch + 1, hist)
    hist.seconds = time.perf_counter() - t0
    return hist


def build_anchor_set(anchor_cfg, model_cfg: ModelConfig, n_anchors, training_lanes=None, tau_p=15.0):
    """Full generated set, filtered to ``n_anchors`` on ``training_lanes``.

    Without training lanes the set is thinned to ``n_anchors`` evenly spaced ids.
    """
    bb = model_cfg.backbone
    full = generate_anchors(anchor_cfg, bb.input_size, model_cfg.n_pts, bb.stride)
    if n_anchors > len(full):
        raise ConfigError("train.n_anchors", f"{n_anchors} exceeds the {len(full)} generated anchors")
    if training_lanes is not None:
        return filter_anchors(full, training_lanes, n_anchors, tau_p)
    ids = np.unique(np.round(np.linspace(0, len(full) - 1, n_anchors)).astype(int))
    return full.subset(ids)
