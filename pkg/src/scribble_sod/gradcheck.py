"""Central finite-difference checks for analytical gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tol: float
    n_checked: int
    worst: tuple = field(default=())

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tol:.0e}, {self.n_checked} coords)"


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradient(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-6, tol: float = 1e-4,
                   n_points: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                   floor: float = 1e-6, name: str = "closure") -> GradCheckReport:
    """Compare backprop gradients of a scalar closure with central differences.

    ``fn`` is re-evaluated after each in-place perturbation of an input's data.
    With ``n_points`` set, that many coordinates are sampled (uniformly over all
    inputs' entries) instead of checking every entry.  ``floor`` bounds the
    denominator of the relative error from below so exactly-zero gradients are
    compared absolutely.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-7, 1e-4]")
    for t in inputs:
        t.grad = None
    out = fn()
    if out.size != 1:
        raise ShapeError(f"gradient check needs a scalar closure, got output shape {out.shape}")
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in inputs]

    coords = [(k, i) for k, t in enumerate(inputs) for i in range(t.size)]
    if n_points is not None and n_points < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=n_points, replace=False)
        coords = [coords[p] for p in sorted(pick)]

    worst_err, worst = 0.0, ()
    for k, i in coords:
        flat = inputs[k].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        numeric = (fp - fm) / (2 * h)
        a = float(analytic[k].reshape(-1)[i])
        err = relative_error(a, numeric, floor)
        if not np.isfinite(err) or err > worst_err:
            worst_err, worst = err, (k, i, a, numeric)
            if not np.isfinite(err):
                break
    return GradCheckReport(name, worst_err, tol, len(coords), worst)
