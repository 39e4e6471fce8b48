"""Finite-difference gradient verification.

The oracle recomputes the scalar objective with each parameter coordinate
nudged by +-h (central differences) and compares against the analytic gradient
from the backward pass. It is deliberately independent of the graph machinery:
it only calls the objective and reads parameter arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: float
    fd: float
    size: int


@dataclass
class GradCheckReport:
    passed: bool
    tol: float
    h: float
    checks: list[ParamCheck]

    @property
    def worst(self) -> ParamCheck:
        return max(self.checks, key=lambda c: c.max_rel_err)

    def summary(self) -> str:
        lines = [f"grad check: {'PASS' if self.passed else 'FAIL'} (tol={self.tol}, h={self.h})"]
        for c in sorted(self.checks, key=lambda c: -c.max_rel_err):
            lines.append(
                f"  {'ok ' if c.max_rel_err <= self.tol else 'BAD'} {c.name}: "
                f"max rel err {c.max_rel_err:.3e} at {c.worst_index} "
                f"(analytic {c.analytic:.6e}, fd {c.fd:.6e}, {c.size} coords)"
            )
        return "\n".join(lines)


def _rel_err(a: float, fd: float) -> float:
    return abs(a - fd) / max(1.0, abs(a), abs(fd))


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of scalar f() against central differences.

    f must rebuild its forward pass on every call and read the current
    parameter values; the caller keeps the evaluation point away from
    non-differentiable kinks (e.g. exact ReLU zeros).
    """
    for p in params.values():
        p.zero_grad()
    out = f()
    out.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    checks: list[ParamCheck] = []
    for name, p in params.items():
        a = analytic[name]
        flat = p.data.reshape(-1)
        worst = -1.0
        worst_i = 0
        worst_an = 0.0
        worst_fd = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f().item()
            flat[i] = orig - h
            f_minus = f().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            an = a.reshape(-1)[i]
            rel = _rel_err(an, fd)
            if rel > worst:
                worst, worst_i, worst_an, worst_fd = rel, i, an, fd
        idx = np.unravel_index(worst_i, p.data.shape) if p.data.ndim else ()
        checks.append(
            ParamCheck(
                name=name,
                max_rel_err=worst,
                worst_index=tuple(int(j) for j in idx),
                analytic=float(worst_an),
                fd=float(worst_fd),
                size=flat.size,
            )
        )
    passed = all(c.max_rel_err <= tol for c in checks)
    return GradCheckReport(passed=passed, tol=tol, h=h, checks=checks)
