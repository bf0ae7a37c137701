"""Walk through the tensor core: build a graph, backprop, verify with
finite differences.

Run:  python demos/autodiff_basics.py
"""

import numpy as np

from crossmodal import autodiff as ad
from crossmodal.autodiff import Tensor

rng = np.random.default_rng(0)

# A two-layer network on a toy batch, written directly against the op set.
x = Tensor(rng.normal(size=(4, 6)))
w1 = Tensor(rng.normal(size=(6, 5)) * 0.5, requires_grad=True)
b1 = Tensor(np.zeros(5), requires_grad=True)
w2 = Tensor(rng.normal(size=(5, 3)) * 0.5, requires_grad=True)
b2 = Tensor(np.zeros(3), requires_grad=True)

hidden = ad.relu(ad.fully_connected(x, w1, b1))
probs = ad.softmax(ad.fully_connected(hidden, w2, b2))
print("softmax rows sum to:", probs.data.sum(axis=1))

# Scalar loss: cross-entropy against a fixed target distribution.
target = rng.dirichlet(np.ones(3), size=4)
loss = ad.sum_all(ad.mul(ad.log(ad.clamp_min(probs, 1e-12)), Tensor(-target))) * 0.25
print("loss:", loss.item())

loss.backward()
print("grad norms:", {n: float(np.linalg.norm(t.grad))
                      for n, t in [("w1", w1), ("w2", w2)]})

# The same loss as a closure, checked against central finite differences.
params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}


def build():
    h = ad.relu(ad.fully_connected(x, w1, b1))
    p = ad.softmax(ad.fully_connected(h, w2, b2))
    return ad.sum_all(ad.mul(ad.log(ad.clamp_min(p, 1e-12)), Tensor(-target))) * 0.25


errors = ad.gradient_check(build, params, eps=1e-6, max_coords_per_param=10, seed=0)
for name, err in errors.items():
    print(f"finite-difference max relative error [{name}]: {err:.2e}")

# Convolution + pooling, the pieces the sound/text pathways are made of.
signal = Tensor(rng.normal(size=(1, 2, 12)))
kernels = Tensor(rng.normal(size=(3, 2, 5)), requires_grad=True)
bias = Tensor(np.zeros(3), requires_grad=True)
feature_map = ad.maxpool1d(ad.relu(ad.conv1d_same(signal, kernels, bias)), 3)
print("conv -> relu -> pool shape:", feature_map.shape)
