"""Shared helpers for the test suite."""

import numpy as np
import pytest

from segdiff.tensor import Tensor


def numerical_grad(f, x, eps=1e-6):
    """Central-difference gradient of a scalar function at ndarray x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def max_rel_err(analytic, numeric):
    """Max elementwise relative error with an absolute floor for tiny grads."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build_loss, arrays, tol=1e-4, eps=1e-6):
    """FD-check d(loss)/d(array) for each named input array.

    ``build_loss`` maps a dict of ndarrays to a scalar-output Tensor graph;
    it is re-run from scratch for every probe so the check is independent of
    any state the graph captured.
    """
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    loss = build_loss({k: t for k, t in tensors.items()})
    loss.backward()
    for name, base in arrays.items():
        def scalar(x, name=name):
            probe = dict(arrays)
            probe[name] = x
            return float(build_loss({k: Tensor(v) for k, v in probe.items()}).data)

        num = numerical_grad(scalar, base.copy(), eps=eps)
        analytic = tensors[name].grad
        if analytic is None:  # input unused by this graph
            analytic = np.zeros_like(base)
        err = max_rel_err(analytic, num)
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)
