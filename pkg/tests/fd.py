"""Central finite differences: the gradient oracle used across the suite.

Only forward values are used here, never a ``.grad``.
"""

import numpy as np

from hhar import diffcore as dc

H = 1e-5


def numeric_grad(f, arr, h=H):
    """d f() / d arr, perturbing ``arr`` in place and restoring it."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = f()
        flat[k] = old - h
        down = f()
        flat[k] = old
        gflat[k] = (up - down) / (2 * h)
    return g


def rel_err(analytic, numeric):
    """Largest entry error relative to the largest gradient magnitude."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def op_cases(rng):
    """``(name, inputs, op)`` for every differentiable op, in a fixed order."""
    r2, r3 = (3, 4), (2, 3, 4)
    pos = lambda s: rng.uniform(0.5, 2.0, size=s)  # noqa: E731
    return [
        ("matmul 2x2", [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], lambda a, b: dc.matmul(a, b)),
        ("matmul 3x2", [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))], lambda a, b: dc.matmul(a, b)),
        ("matmul 2x3", [rng.normal(size=(3, 3)), rng.normal(size=(2, 3, 4))], lambda a, b: dc.matmul(a, b)),
        ("relu 1", [rng.normal(size=5)], dc.relu),
        ("relu 2", [rng.normal(size=r2)], dc.relu),
        ("relu 3", [rng.normal(size=r3)], dc.relu),
        ("sigmoid 1", [rng.normal(size=5)], dc.sigmoid),
        ("sigmoid 3", [rng.normal(size=r3)], dc.sigmoid),
        ("row_softmax", [rng.normal(size=r2)], dc.row_softmax),
        ("log", [pos(r2)], dc.log),
        ("clip", [rng.uniform(0.2, 0.8, size=r2)], lambda a: dc.clip(a, 0.0, 1.0)),
        ("square 3", [rng.normal(size=r3)], dc.square),
        ("add same", [rng.normal(size=r2), rng.normal(size=r2)], dc.add),
        ("add bias 3", [rng.normal(size=r3), rng.normal(size=4)], dc.add),
        ("add row 3", [rng.normal(size=r3), rng.normal(size=(3, 4))], dc.add),
        ("add scalar", [rng.normal(size=r2), rng.normal(size=1)], dc.add),
        ("sub bias", [rng.normal(size=r3), rng.normal(size=(3, 4))], dc.sub),
        ("mul", [rng.normal(size=r2), rng.normal(size=r2)], dc.mul),
        ("mul bias", [rng.normal(size=r3), rng.normal(size=4)], dc.mul),
        ("reshape", [rng.normal(size=r3)], lambda a: dc.reshape(a, (6, 4))),
        ("transpose", [rng.normal(size=r2)], dc.transpose),
        ("take_rows", [rng.normal(size=r2)], lambda a: dc.take_rows(a, [0, 2, 2, 1])),
        ("sum axis", [rng.normal(size=r3)], lambda a: dc.sum(a, axis=1)),
        ("sum all", [rng.normal(size=r3)], dc.sum),
        ("mean", [rng.normal(size=r2)], dc.mean),
    ]


def op_error(inputs, op, rng) -> float:
    """Worst relative error of ``op``'s gradients under a random linear read-out."""
    tensors = [dc.Tensor(x, requires_grad=True) for x in inputs]
    readout = rng.normal(size=op(*tensors).shape)

    def f():
        return float((op(*[dc.Tensor(x) for x in inputs]).values * readout).sum())

    dc.sum(dc.mul(op(*tensors), readout)).backward()
    return max(rel_err(t.grad, numeric_grad(f, x)) for t, x in zip(tensors, inputs))
