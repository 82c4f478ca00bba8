"""Shared test helpers: finite-difference gradient checking and tiny
model/dataset builders."""

from __future__ import annotations

import numpy as np
import pytest

from cdgan.autodiff import Tape, Tensor


def analytic_grads(fn, tensors):
    """Run fn under a fresh tape and return (loss value, grads per tensor)."""
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = fn(*tensors)
        tape.backward(loss)
    return float(loss.values), [np.array(t.grad, dtype=np.float64) for t in tensors]


def fd_grad(fn, tensors, i, h_scale=1e-5):
    """Central finite differences of fn w.r.t. tensors[i] (in place)."""
    x = tensors[i].values
    grad = np.zeros(x.shape, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        h = h_scale * max(1.0, abs(float(orig)))
        x[idx] = orig + h
        up = float(fn(*tensors).values)
        x[idx] = orig - h
        down = float(fn(*tensors).values)
        x[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def assert_grads_match(fn, tensors, tol=1e-4, h_scale=1e-5):
    """Analytic vs central-difference gradients, relative error < tol."""
    _, grads = analytic_grads(fn, tensors)
    for i, tensor in enumerate(tensors):
        if not tensor.requires_grad:
            continue
        numeric = fd_grad(fn, tensors, i, h_scale=h_scale)
        scale = np.maximum(np.abs(grads[i]) + np.abs(numeric), 1.0)
        rel = np.abs(grads[i] - numeric) / scale
        worst = float(rel.max()) if rel.size else 0.0
        assert worst < tol, (
            f"gradient mismatch on input {i} ({tensor.name or 'unnamed'}): "
            f"max rel err {worst:.3e}\nanalytic:\n{grads[i]}\nnumeric:\n{numeric}")


def leaf(values, name=None):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True,
                  name=name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
