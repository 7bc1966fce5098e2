"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractViolation
from .value import Value, backward

# Gradient entries smaller than this are compared on absolute rather than
# relative error. Central differences with h = 1e-5 on an O(1) loss carry
# round-off near 1e-10, so smaller gradients cannot be resolved relatively.
RELATIVE_ERROR_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    relative_errors: list  # one array per input, NaN where an element was not checked
    analytic: list
    numeric: list
    tolerance: float
    failures: list = field(default_factory=list)  # (input index, element index, analytic, numeric, error)

    @property
    def max_relative_error(self) -> float:
        checked = [e[~np.isnan(e)] for e in self.relative_errors]
        checked = [e for e in checked if e.size]
        return float(max(e.max() for e in checked)) if checked else 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = RELATIVE_ERROR_FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(
    function: Callable[..., Value],
    inputs: Sequence[np.ndarray],
    perturbation: float = 1e-5,
    tolerance: float = 1e-6,
    max_elements: Optional[int] = None,
    seed: int = 0,
    floor: float = RELATIVE_ERROR_FLOOR,
) -> GradCheckReport:
    """Compare backward-pass gradients of ``function(*inputs)`` with central differences.

    ``function`` receives one :class:`Value` per input and must return a
    scalar. ``max_elements`` caps how many entries per input are perturbed
    (chosen at random with ``seed``); unchecked entries report NaN.
    """
    if perturbation <= 0:
        raise ContractViolation(f"check_gradients: perturbation must be positive, got {perturbation}")
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Value(a, requires_grad=True) for a in arrays]
    out = function(*leaves)
    if out.data.size != 1:
        raise ContractViolation(f"check_gradients: function must return a scalar, got shape {out.shape}")
    if out.requires_grad:
        backward(out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def evaluate() -> float:
        return float(function(*[Value(a) for a in arrays]).data)

    rng = np.random.default_rng(seed)
    numeric, errors, failures = [], [], []
    for index, array in enumerate(arrays):
        flat = array.reshape(-1)
        chosen = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            chosen = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        num = np.full(flat.size, np.nan)
        for j in chosen:
            original = flat[j]
            flat[j] = original + perturbation
            f_plus = evaluate()
            flat[j] = original - perturbation
            f_minus = evaluate()
            flat[j] = original
            num[j] = (f_plus - f_minus) / (2.0 * perturbation)
        ana = analytic[index].reshape(-1)
        err = np.full(flat.size, np.nan)
        err[chosen] = relative_error(ana[chosen], num[chosen], floor)
        for j in chosen:
            if not err[j] <= tolerance:
                failures.append((index, int(j), float(ana[j]), float(num[j]), float(err[j])))
        numeric.append(num.reshape(array.shape))
        errors.append(err.reshape(array.shape))
    return GradCheckReport(errors, analytic, numeric, tolerance, failures)
