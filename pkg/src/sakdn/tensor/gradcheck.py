"""Central finite differences against the reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from ..errors import NonFiniteError, ShapeError
from .core import Tensor, backward, eval_graph


@dataclass
class GradCheckReport:
    max_rel_err: dict[str, float]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def rel_err(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def _scalar(program, inputs) -> float:
    out = program(inputs)
    if isinstance(out, Mapping):
        out = next(iter(out.values()))
    if out.size != 1:
        raise ShapeError(f"finite_diff_check needs a scalar program, got shape {out.shape}")
    value = float(out.data.reshape(()))
    if not np.isfinite(value):
        raise NonFiniteError("program returned a non-finite value under perturbation")
    return value


def finite_diff_check(
    program: Callable[[dict[str, Tensor]], Tensor],
    inputs: Mapping[str, Tensor],
    epsilon: float = 1e-6,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare backward() with central differences for every requires_grad input."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    outputs, rec = eval_graph(inputs, program)
    out = next(iter(outputs.values()))
    if out.size != 1:
        raise ShapeError(f"finite_diff_check needs a scalar program, got shape {out.shape}")
    analytic = backward(rec, output=next(iter(outputs)))

    report = {}
    for name, t in inputs.items():
        if not t.requires_grad:
            continue
        base = t.data.reshape(-1)
        numeric = np.empty(base.size)
        for i in range(base.size):
            vals = []
            for step in (epsilon, -epsilon):
                arr = base.copy()
                arr[i] += step
                trial = dict(inputs)
                try:
                    trial[name] = Tensor(arr.reshape(t.shape))
                    vals.append(_scalar(program, trial))
                except NonFiniteError as exc:
                    raise NonFiniteError(f"perturbing {name}[{i}] gave a non-finite result") from exc
            numeric[i] = (vals[0] - vals[1]) / (2 * epsilon)
        report[name] = float(rel_err(analytic[name].reshape(-1), numeric).max(initial=0.0))
    return GradCheckReport(report, tolerance)
