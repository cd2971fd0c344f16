"""Shared test helpers: central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from segsel.autodiff import backward


def fd_gradients(build, params, h=1e-5):
    """Numeric d(build())/d(param) via central differences, one entry at a time.

    ``build`` must reconstruct the scalar loss graph from the current
    parameter values on every call.
    """
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = build().item()
            flat[i] = orig - h
            fm = build().item()
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        grads.append(g.reshape(p.data.shape))
    return grads


def assert_grads_match(build, params, rtol=1e-4, h=1e-5):
    """Analytic gradients from backward() vs central finite differences."""
    for p in params:
        p.grad[...] = 0.0
    loss = build()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    numeric = fd_gradients(build, params, h=h)
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
        rel = np.abs(a - n) / denom
        assert rel.max() <= rtol, f"gradient mismatch: max rel err {rel.max():.3e}"
