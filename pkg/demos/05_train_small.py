"""
Training on synthetic roads
===========================

The generator draws straight and gently curved lane markings on a noisy
road texture, with flips, small rotations and occluders. Anchors are
filtered to the ones that most often match a training lane, then the
detector is trained with Adam. This is a short run; the acceptance tests
run the full 500-image, 30-epoch version.
"""

import time

from laneatt.anchors import AnchorConfig
from laneatt.data import SyntheticConfig, generate_split
from laneatt.loss import LossConfig
from laneatt.model import LaneATT, ModelConfig
from laneatt.train import MatchingConfig, TrainConfig, build_anchor_set, evaluate, train

data = SyntheticConfig(seed=0)
train_set = generate_split(data, 0, 100)
val_set = generate_split(data, 1_000_000, 30)

model_cfg = ModelConfig()
matching = MatchingConfig(nms_threshold=25.0)
anchors = build_anchor_set(AnchorConfig(), model_cfg, 250, [s.lanes for s in train_set])
model = LaneATT(model_cfg, anchors, seed=0)
print("parameters:", model.n_parameters())
print("untrained F1:", round(evaluate(model, val_set, matching).f1, 4))

t0 = time.perf_counter()
hist = train(model, train_set, TrainConfig(epochs=3, n_anchors=250), matching, LossConfig(), val_samples=val_set)
for k, (loss, f1) in enumerate(zip(hist.losses, hist.f1), 1):
    print(f"epoch {k}: loss {loss:.3f}  F1 {f1:.4f}")
print(f"{time.perf_counter() - t0:.0f} s")

smp = val_set[0]
print("\nfirst held-out image has", len(smp.lanes), "lanes; detected", len(model.detect(smp.image, 0.5, 25.0)))
