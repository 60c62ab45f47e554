"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from laneatt import numerics as nx


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f(*arrays)`` w.r.t. each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f(*arrays)
            a[i] = old - h
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(build, arrays):
    """Gradients of ``build(*tensors)`` (a ``[1]`` tensor) via the tape."""
    ts = [nx.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with nx.Tape() as tape:
        out = build(*ts)
    nx.backward(tape, out)
    return [t.grad for t in ts]


def max_rel_error(a, b, floor=1e-7):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))) if a.size else 0.0


def check(build, arrays, tol=1e-4, floor=1e-7):
    """Assert tape gradients of ``build`` match central differences."""
    def f(*arrs):
        return build(*[nx.Tensor(x) for x in arrs]).item()

    num = numeric_grad(f, [a.copy() for a in arrays])
    ana = analytic_grad(build, arrays)
    for n, a in zip(num, ana):
        err = np.abs(n - a)
        bad = err > tol * np.maximum(np.abs(n), np.abs(a)) + floor
        assert not bad.any(), f"max rel error {max_rel_error(n, a)}"
