"""Build a tiny computation by hand and verify its gradients.

The tensor core is reverse-mode autodiff over numpy arrays: ops build a
graph, backward() walks it once. Training runs in float32; the
verification context switches everything to float64 so central
differences are trustworthy.
"""
import numpy as np

from rumorkit import tensor as T
from rumorkit.gradsuite import run_suite
from rumorkit.tensor import Tensor

# d/dx of sum((x @ w) * m) by hand is m @ w.T
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)))
m = Tensor(rng.normal(size=(3, 2)))

loss = T.tensor_sum(T.mul(T.matmul(x, w), m))
loss.backward()
expected = m.data @ w.data.T
print("analytic matches closed form:", np.allclose(x.grad, expected))

# grad accumulates across backward calls until explicitly zeroed
first = x.grad.copy()
T.tensor_sum(T.mul(T.matmul(x, w), m)).backward()
print("second backward doubles it:", np.allclose(x.grad, 2 * first))
x.zero_grad()

# the same check, but numerically
probe_w = Tensor(rng.normal(size=(3, 4)))
with T.verification_mode():
    err = T.grad_check(lambda t: T.tensor_sum(T.mul(T.softmax(t), probe_w)),
                       Tensor(x.data.astype(np.float64)))
print(f"softmax probe, max relative error vs finite differences: {err:.2e}")

results = run_suite(seeds=range(2))
worst = max(r.error for r in results)
print(f"{len(results)} suite checks over 2 seeds, worst error {worst:.2e}, "
      f"all passed: {all(r.passed for r in results)}")
