"""Finite-difference verification of reverse-mode gradients.

The checker perturbs every parameter element with a central difference and
never touches the autodiff graph, so it stays an independent oracle for the
backward passes. Run it under ``precision('float64')``; float32 FD noise
swamps the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensor import no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    worst_param: str = ""
    per_param: dict = field(default_factory=dict)
    tol: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max rel err {self.max_rel_err:.3e} "
            f"(tol {self.tol:.1e}, worst at '{self.worst_param}')"
        )


def finite_difference(f, value: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` wrt ``value``, in place."""
    grad = np.zeros_like(value)
    flat = value.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
    return grad


def grad_check(f, params, tol: float = 1e-5, step: float = 1e-5,
               denom_floor: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` against central FD.

    ``params`` is an iterable of (name, Parameter). The relative error uses
    max(|ad|, |fd|, denom_floor) as denominator so exactly-zero gradients do
    not divide by noise.
    """
    params = list(params)
    for _, p in params:
        p.value.grad = None
    out = f()
    out.backward()

    report = GradCheckReport(tol=tol)
    for name, p in params:
        ad = p.value.grad
        if ad is None:
            ad = np.zeros_like(p.value.data)
        if not np.isfinite(ad).all():
            raise NumericError(f"non-finite reverse-mode gradient at '{name}'")
        fd = finite_difference(f, p.value.data, step=step)
        if not np.isfinite(fd).all():
            raise NumericError(f"non-finite finite-difference gradient at '{name}'")
        denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), denom_floor)
        rel = float(np.max(np.abs(ad - fd) / denom)) if ad.size else 0.0
        report.per_param[name] = rel
        if rel >= report.max_rel_err:
            report.max_rel_err = rel
            report.worst_param = name
    return report
