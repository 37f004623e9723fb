"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# denominators below this are treated as this, so near-zero gradients are
# compared in absolute terms
REL_FLOOR = 1e-3


def numerical_grad(f, x: np.ndarray, eps=1e-5, indices=None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place.

    ``f`` takes no arguments and returns a scalar. With ``indices`` only
    those flat positions are evaluated (others stay 0).
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor=REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


@dataclass
class GradReport:
    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def worst(self):
        return max(self.errors.items(), key=lambda kv: kv[1])


def check_gradients(module, forward, backward, inputs: dict[str, np.ndarray],
                    rng: np.random.Generator, eps=1e-5, max_per_array=None) -> GradReport:
    """Compare analytic and numeric gradients of ``sum(forward() * r)``.

    ``forward()`` reads parameters from ``module`` and arrays from ``inputs``
    (both perturbed in place); ``backward(dy)`` must return a dict of input
    gradients keyed like ``inputs`` (keys may be omitted for non-differentiable
    inputs). ``r`` is a fixed random upstream gradient.
    """
    out = forward()
    upstream = rng.standard_normal(np.shape(out))

    def scalar():
        return float(np.sum(forward() * upstream))

    module.zero_grad()
    forward()
    in_grads = backward(upstream.astype(np.asarray(out).dtype))
    analytic = {f"param:{k}": v.copy() for k, v in module.named_grads()}
    analytic.update({f"input:{k}": np.asarray(v).copy() for k, v in in_grads.items()})

    targets = {f"param:{k}": v for k, v in module.named_parameters()}
    targets.update({f"input:{k}": inputs[k] for k in in_grads})

    errors = {}
    for name, arr in targets.items():
        idx = None
        if max_per_array is not None and arr.size > max_per_array:
            idx = rng.choice(arr.size, size=max_per_array, replace=False)
        num = numerical_grad(scalar, arr, eps, idx)
        a = analytic[name]
        if idx is not None:
            errors[name] = relative_error(a.reshape(-1)[idx], num.reshape(-1)[idx])
        else:
            errors[name] = relative_error(a, num)
    return GradReport(errors)
