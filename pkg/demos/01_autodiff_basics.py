"""A walk through the autodiff core.

Builds a small computation, backpropagates, and cross-checks the analytic
gradients against central finite differences — the same style of check the
test suite applies to every operation.
"""

import numpy as np

from dkdfmh import autodiff as ad
from dkdfmh.autodiff import Tensor


def main():
    rng = np.random.default_rng(0)

    # a toy two-layer computation: y = relu(x W1) W2, loss = sum(y^2)
    x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    w1 = Tensor(rng.normal(size=(6, 5)) * 0.5, requires_grad=True)
    w2 = Tensor(rng.normal(size=(5, 3)) * 0.5, requires_grad=True)

    def loss_of():
        h = ad.relu(ad.matmul(x, w1))
        y = ad.matmul(h, w2)
        return ad.tsum(ad.mul(y, y))

    loss = loss_of()
    loss.backward()
    print(f"loss = {float(loss.data):.6f}")
    print(f"dloss/dw1 norm = {np.linalg.norm(w1.grad):.6f}")

    # verify one gradient entry by nudging the weight and re-evaluating
    h = 1e-5
    i, j = 2, 3
    w1.data[i, j] += h
    up = float(loss_of().data)
    w1.data[i, j] -= 2 * h
    down = float(loss_of().data)
    w1.data[i, j] += h
    numeric = (up - down) / (2 * h)
    print(f"analytic dloss/dw1[{i},{j}] = {w1.grad[i, j]:.8f}")
    print(f"numeric  dloss/dw1[{i},{j}] = {numeric:.8f}")

    # gradients accumulate across backward calls until cleared
    w1.zero_grad()
    x.zero_grad()
    w2.zero_grad()
    loss_of().backward()
    once = w1.grad.copy()
    loss_of().backward()
    print(f"accumulation: second backward doubles the grad -> "
          f"{np.allclose(w1.grad, 2 * once)}")

    # no_grad() turns off graph building entirely, e.g. for inference
    with ad.no_grad():
        y = ad.matmul(ad.relu(ad.matmul(x, w1)), w2)
    print(f"inside no_grad, outputs carry no graph: "
          f"requires_grad={y.requires_grad}")


if __name__ == "__main__":
    main()
