"""Central-difference verification of the hand-written backward rules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OracleError, ParameterError
from .tensor import Tensor

# Relative error denominator floor: keeps exactly-zero gradients and
# central-difference roundoff noise comparable without hiding real mismatches.
_DENOM_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_error: float
    rel_tol: float
    passed: bool
    per_input: list[float] = field(default_factory=list)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"max_rel_error={self.max_rel_error:.3e} tol={self.rel_tol:.1e} {status}"


def _eval_scalar(f, inputs) -> float:
    out = f(*inputs)
    value = out.item() if isinstance(out, Tensor) else float(out)
    if not math.isfinite(value):
        raise OracleError(f"function returned non-finite value {value}")
    return value


def gradcheck(f, inputs, step: float = 1e-4, rel_tol: float = 1e-4) -> GradCheckReport:
    """Compare backward() gradients of f against central differences.

    f must be a deterministic scalar-valued function of the given Tensors.
    Every element of every requires_grad input is perturbed by +-step; the
    check passes iff the max relative error over all elements is <= rel_tol.
    """
    if step <= 0.0:
        raise ParameterError(f"step must be > 0, got {step}")
    inputs = list(inputs)

    for t in inputs:
        t.zero_grad()
    loss = f(*inputs)
    if not isinstance(loss, Tensor):
        raise OracleError("gradcheck target must return a Tensor")
    if not math.isfinite(float(loss.data.reshape(()))):
        raise OracleError("non-finite loss at the evaluation point")
    loss.backward()

    max_err = 0.0
    per_input = []
    for t in inputs:
        if not t.requires_grad:
            per_input.append(0.0)
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            f_plus = _eval_scalar(f, inputs)
            flat[i] = original - step
            f_minus = _eval_scalar(f, inputs)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), _DENOM_FLOOR)
            worst = max(worst, abs(a - numeric) / denom)
        per_input.append(worst)
        max_err = max(max_err, worst)

    return GradCheckReport(
        max_rel_error=max_err,
        rel_tol=rel_tol,
        passed=max_err <= rel_tol,
        per_input=per_input,
    )
