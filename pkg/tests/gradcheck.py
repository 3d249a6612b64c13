"""Central finite-difference gradient oracle, independent of the autodiff
path it checks."""

import numpy as np


def central_difference(f, tensor, h=1e-5):
    """d f() / d tensor.data by central differences; f returns a float."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    grad_flat = grad.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = f()
        flat[i] = saved - h
        down = f()
        flat[i] = saved
        grad_flat[i] = (up - down) / (2.0 * h)
    return grad


def rel_error(analytic, numeric):
    """Infinity-norm error, normalized by the numeric gradient's scale."""
    scale = max(np.abs(numeric).max(), 1e-6)
    return np.abs(analytic - numeric).max() / scale


def check_gradients(make_loss, params, h=1e-5, tol=1e-4):
    """Backprop make_loss() once, then verify every param against central
    differences. Returns the worst relative error seen."""
    for p in params:
        p.zero_grad()
    loss = make_loss()
    loss.backward()
    worst = 0.0
    for p in params:
        assert p.grad is not None, f"no grad for {p.name or p}"
        numeric = central_difference(lambda: make_loss().item(), p, h=h)
        err = rel_error(p.grad, numeric)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch for {p.name or 'param'}: {err:.3g}"
    return worst
