"""
Cost knobs: anchors and input size
==================================

Multiply-accumulates are counted in every convolution, dense layer and
matrix product of one forward pass. The attention layer grows with the
square of the anchor count, the backbone with the image area.
"""

from laneatt.anchors import AnchorConfig
from laneatt.eval import analytic_macs, benchmark
from laneatt.model import BackboneConfig, LaneATT, ModelConfig
from laneatt.train import build_anchor_set

print("n_anchors  input     GMACs   fps")
for size in ((160, 320), (288, 512)):
    for n in (250, 1000):
        cfg = ModelConfig(backbone=BackboneConfig(input_size=size))
        model = LaneATT(cfg, build_anchor_set(AnchorConfig(), cfg, n))
        fps, macs, _ = benchmark(model, repetitions=10)
        assert macs == analytic_macs(cfg, n)
        print(f"{n:9d}  {size[0]}x{size[1]}  {macs / 1e9:.3f}  {fps:6.1f}")
