"""Central finite-difference gradient checks.

The oracle is independent of the backward pass: it only evaluates the
forward function. Near a ReLU or max-pool kink a central difference
straddles two linear pieces and stops measuring the derivative at the
point itself, so with ``guard_kinks`` the step is shrunk until neither
probe changes the activation pattern seen at the unperturbed point.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .tensor import Tensor

# (k, c) pairs: derivative = sum(c * (f(x + k*h) - f(x - k*h))) / h.
# Differencing symmetric pairs first keeps the estimate exactly zero when
# the coordinate does not influence f.
STENCILS = {
    2: ((1.0, 0.5),),
    4: ((1.0, 8.0 / 12), (2.0, -1.0 / 12)),
}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _pattern(f, x):
    log = []
    ops.record_kinks(log)
    try:
        value = float(f(x).data)
    finally:
        ops.record_kinks(None)
    return value, log


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def numerical_gradient(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-6,
                       indices=None, order: int = 2, guard_kinks: bool = True,
                       max_shrink: int = 12) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``.

    ``indices`` restricts the flat coordinates evaluated (others stay 0).
    ``order`` selects the 2- or 4-point central stencil.
    """
    pairs = STENCILS[order]
    offsets = [s * k for k, _ in pairs for s in (1.0, -1.0)]
    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat)
    base = _pattern(f, x)[1] if guard_kinks else None
    coords = range(flat.size) if indices is None else indices
    for i in coords:
        orig = flat[i]
        h = step
        for _ in range(max_shrink + 1):
            values, smooth = [], True
            for off in offsets:
                flat[i] = orig + off * h
                if guard_kinks:
                    v, pat = _pattern(f, x)
                    smooth = smooth and _same_pattern(pat, base)
                else:
                    v = float(f(x).data)
                values.append(v)
            flat[i] = orig
            if smooth:
                break
            h *= 0.25
        grad[i] = sum(c * (values[2 * j] - values[2 * j + 1])
                      for j, (_, c) in enumerate(pairs)) / h
    return grad.reshape(x.shape)


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-6,
                            **kwargs) -> float:
    """Max elementwise relative error between backward() and central differences.

    ``f`` must be deterministic (dropout disabled). The relative error of
    each element is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    f(x).backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    x.grad = None
    x.requires_grad = was
    numeric = numerical_gradient(f, x, step, **kwargs)
    return float(relative_error(analytic, numeric).max(initial=0.0))


def check_parameters(loss_fn: Callable[[], Tensor], params: dict, step: float = 1e-6,
                     **kwargs) -> dict:
    """``{name: max relative error}`` for a loss closure over the tensors in ``params``."""
    for t in params.values():
        t.requires_grad = True
        t.grad = None
    loss_fn().backward()
    report = {}
    for name, t in params.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(lambda _t: loss_fn(), t, step, **kwargs)
        report[name] = float(relative_error(analytic, numeric).max(initial=0.0))
    return report
