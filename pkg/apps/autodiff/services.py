from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from apps.autodiff.tensor import Graph, Tensor, backward as _backward, no_grad, zero_grads as _zero_grads

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientCheckResult:
    max_abs_error: float
    max_rel_error: float
    checked: int
    passed: bool


class GradientService:
    """Backward passes, gradient resets and the finite-difference oracle."""

    @staticmethod
    def backward(root: Tensor) -> None:
        _backward(root)

    @staticmethod
    def zero_grads(params: Iterable[Tensor]) -> None:
        _zero_grads(params)

    @staticmethod
    def trace(root: Tensor) -> Graph:
        return Graph.trace(root)

    @staticmethod
    def gradient_check(
        fn: Callable[[], Tensor],
        tensors: Sequence[Tensor],
        *,
        step: float = 1e-4,
        rtol: float = 1e-3,
        atol: float = 1e-6,
    ) -> GradientCheckResult:
        """Compare reverse-mode gradients of ``fn()`` with central differences.

        ``fn`` must rebuild the graph from ``tensors`` on every call and return
        a scalar. An entry passes when
        ``|analytic - numeric| <= max(atol, rtol * max(|analytic|, |numeric|))``.
        """
        for tensor in tensors:
            tensor.grad = None
        _backward(fn())
        analytic = [
            np.zeros_like(tensor.values) if tensor.grad is None else tensor.grad.copy() for tensor in tensors
        ]

        worst_abs = 0.0
        worst_rel = 0.0
        checked = 0
        passed = True
        with no_grad():
            for tensor, expected in zip(tensors, analytic):
                flat = tensor.values.reshape(-1)
                expected = expected.reshape(-1)
                for i in range(flat.size):
                    original = flat[i]
                    flat[i] = original + step
                    plus = fn().item()
                    flat[i] = original - step
                    minus = fn().item()
                    flat[i] = original
                    numeric = (plus - minus) / (2.0 * step)

                    error = abs(expected[i] - numeric)
                    magnitude = max(abs(expected[i]), abs(numeric))
                    worst_abs = max(worst_abs, error)
                    if magnitude > 0:
                        worst_rel = max(worst_rel, error / magnitude)
                    if error > max(atol, rtol * magnitude):
                        passed = False
                    checked += 1

        if not passed:
            logger.debug("[autodiff] gradient check failed: abs %.3g rel %.3g", worst_abs, worst_rel)
        return GradientCheckResult(worst_abs, worst_rel, checked, passed)


backward = GradientService.backward
zero_grads = GradientService.zero_grads
gradient_check = GradientService.gradient_check
