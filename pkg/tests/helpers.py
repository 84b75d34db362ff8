"""Shared test oracles: central finite differences against the autodiff graph."""

import numpy as np

from avw2 import autodiff as ad


def fd_gradient(f, arrays, index, eps=1e-6):
    """Central-difference gradient of scalar f(*arrays) wrt arrays[index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[index])
    flat = grad.reshape(-1)
    target = base[index].reshape(-1)
    for i in range(target.size):
        orig = target[i]
        target[i] = orig + eps
        hi = f(*base)
        target[i] = orig - eps
        lo = f(*base)
        target[i] = orig
        flat[i] = (hi - lo) / (2.0 * eps)
    return grad


def check_gradients(build, arrays, rel_tol=1e-4, eps=1e-6, wrt=None):
    """Assert analytic gradients of ``build`` match central differences.

    ``build`` maps a list of float64 Tensors to a scalar Tensor; ``arrays``
    are the float64 leaf values.  Comparison is norm-relative with a floor,
    so exactly-zero gradients (dead regions) pass.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(leaves)
    grads = ad.backward(loss, wrt=leaves)
    indices = range(len(arrays)) if wrt is None else wrt

    def scalar(*vals):
        with ad.no_grad():
            consts = [ad.Tensor(v.copy()) for v in vals]
            return float(build(consts).data)

    for i in indices:
        numeric = fd_gradient(scalar, arrays, i, eps=eps)
        analytic = grads[leaves[i]]
        err = np.linalg.norm(analytic - numeric)
        scale = max(np.linalg.norm(numeric), 1e-8)
        assert err <= rel_tol * max(scale, 1.0), (
            f"gradient mismatch on input {i}: |d|={err:.3g} scale={scale:.3g}"
        )
