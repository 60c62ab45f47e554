"""
Anchor attention
================

Each anchor looks at the pooled features of every other anchor. A dense
layer gives N-1 logits per anchor, a softmax turns them into weights, and
the weights are spread into an N x N matrix with a zero diagonal so that no
anchor attends to itself. The global feature of an anchor is the weighted
sum of the others' local features.
"""

import numpy as np

from laneatt import numerics as nx
from laneatt.model import attention_weights, global_features

rng = np.random.default_rng(0)
n, d = 5, 4
a_loc = rng.normal(size=(n, d))
weight, bias = rng.normal(size=(n - 1, d)), rng.normal(size=n - 1)

w = attention_weights(nx.Tensor(a_loc), nx.Tensor(weight), nx.Tensor(bias)).data
np.set_printoptions(precision=3, suppress=True)
print("attention matrix:\n", w)
print("diagonal:", np.diag(w))
print("row sums:", w.sum(axis=1))

a_glob = global_features(nx.Tensor(w), nx.Tensor(a_loc)).data
print("\nglobal features:\n", a_glob)

# with equal logits every other anchor gets the same weight
flat = attention_weights(nx.Tensor(a_loc), nx.Tensor(np.zeros((n - 1, d))), nx.Tensor(np.zeros(n - 1))).data
print("\nequal logits:\n", flat)
