"""Central finite-difference verification of recorded gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .autodiff import Param, backward, zero_grads


def finite_difference_check(
    loss_fn: Callable[[], "Tensor"],
    params: Iterable[Param],
    step: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-3,
) -> float:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must be deterministic across calls (freeze any internal
    randomness). Checks every coordinate of every param. Returns the worst
    relative error seen; raises AssertionError on the first violation.

    Relative error uses max(|analytic|, |numeric|, abs_floor) as the
    denominator; the floor keeps float64 cancellation noise on near-zero
    coordinates from drowning the ratio while still flagging any error at
    the scale of a real gradient.
    """
    params = list(params)
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = {id(p): p.grad.copy() for p in params}

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        a_flat = analytic[id(p)].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(loss_fn().data)
            flat[i] = orig - step
            f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(a_flat[i]), abs(numeric), abs_floor)
            err = abs(a_flat[i] - numeric) / denom
            worst = max(worst, err)
            if err > rel_tol:
                raise AssertionError(
                    f"gradient mismatch at {p.name}[{i}]: "
                    f"analytic={a_flat[i]:.10g} numeric={numeric:.10g} rel_err={err:.3g}"
                )
    return worst
