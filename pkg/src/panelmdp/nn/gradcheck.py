"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..exceptions import NumericError
from .layers import Param


def relative_error(analytic, numeric, floor: float = 1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[bool], float],
    params: Sequence[Param],
    step: float = 1e-5,
    tolerance: float | None = None,
    max_coords: int | None = None,
    rng=None,
) -> float:
    """Compare analytic and central-difference gradients of a scalar function.

    ``f(backward)`` must return the scalar loss for the current parameter
    values and, when ``backward`` is true, accumulate its gradient into each
    ``Param.grad``. Returns the maximum relative error over the checked
    coordinates; with ``max_coords`` a random subset per tensor is checked.
    """
    for p in params:
        p.zero_grad()
    base = f(True)
    if not np.isfinite(base):
        raise NumericError("objective is not finite at the check point")
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    worst, where = 0.0, None
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = f(False)
            flat[i] = orig - step
            down = f(False)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite objective while perturbing {p.name}[{i}]")
            num = (up - down) / (2.0 * step)
            err = float(relative_error(g.reshape(-1)[i], num))
            if err > worst:
                worst, where = err, (p.name, int(i), float(g.reshape(-1)[i]), num)
    if tolerance is not None and worst > tolerance:
        raise AssertionError(f"gradient check failed: rel err {worst:.3g} at {where}")
    return worst
