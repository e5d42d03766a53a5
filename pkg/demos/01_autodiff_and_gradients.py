"""Tour of the autodiff core: eager graphs, backward, the finite-difference
oracle, and stop-gradient semantics.

Run:  python demos/01_autodiff_and_gradients.py
"""

import numpy as np

from mtop import autodiff as ad

# Every operation computes eagerly and records how to push gradients back.
x = ad.Tensor([3.0], requires_grad=True)
loss = ad.mul(x, x)
loss.backward()
print(f"d(x^2)/dx at x=3  ->  {x.grad[0]:.1f}")

# A small network: tanh pooler over a linear layer, cross-entropy on top.
rng = np.random.default_rng(0)
w = ad.Tensor(rng.uniform(-0.5, 0.5, (4, 3)), requires_grad=True)
b = ad.Tensor(np.zeros(3), requires_grad=True)
inputs = ad.Tensor(rng.uniform(-1, 1, (2, 4)))
labels = np.array([0, 2])
loss = ad.cross_entropy(ad.tanh(ad.linear(inputs, w, b)), labels)
loss.backward()
print(f"loss {float(loss.data):.4f}; kernel gradient norm "
      f"{np.linalg.norm(w.grad):.4f}")

# The oracle: analytic gradients vs central finite differences.
params = {"w": rng.uniform(-0.5, 0.5, (4, 3)), "x": rng.uniform(-1, 1, (2, 4))}


def build(t):
    return ad.cross_entropy(ad.tanh(ad.matmul(t["x"], t["w"])), labels)


report = ad.grad_check(build, params)
print("grad_check max relative errors:",
      {k: f"{v:.2e}" for k, v in report.items()})

# stop_gradient: identical forward values, exactly zero gradients behind it.
x = ad.Tensor([2.0], requires_grad=True)
y = ad.mul(ad.stop_gradient(x), x)   # one factor detached
y.backward()
print(f"y = sg(x) * x at x=2: value {y.data[0]:.1f}, dy/dx = {x.grad[0]:.1f} "
      "(the detached factor contributes nothing)")

detached_only = ad.stop_gradient(x)
print("forward identity:", bool(np.all(detached_only.data == x.data)))
