"""Teacher and student objectives."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError
from .tensor import Tensor, ops


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1   # soft targets
    beta: float = 1.0    # GSDM
    gamma: float = 1.0   # semantic preserving
    temperature: float = 4.0
    t_squared: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    ce: float
    soft_target: float = 0.0
    gsdm: float = 0.0
    semantic_preserve: float = 0.0
    total: float = 0.0
    step: int = 0
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        return cls(**json.loads(line))


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Batch mean of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=int)
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise ShapeError(f"logits {logits.shape} do not match {labels.size} labels")
    logp = ops.log_softmax(logits, axis=1)
    picked = ops.index(logp, (np.arange(labels.size), labels))
    return ops.mul(ops.mean(picked), -1.0)


def _pair_mse(a: Tensor, b) -> Tensor:
    if a.shape != tuple(np.shape(b.data if isinstance(b, Tensor) else b)):
        raise ShapeError(f"feature shapes differ: {a.shape} vs {np.shape(b)}")
    d = ops.sub(a, b)
    return ops.mean(ops.sum(ops.mul(d, d), axis=1))


def semantic_preserving(features, targets) -> Tensor:
    """Batch mean of squared row distances, averaged over however many pairs are given.

    Pass either one (features, targets) pair or equal-length lists; a single
    feature tensor against a list of targets compares it with each one.
    """
    feats = list(features) if isinstance(features, (list, tuple)) else None
    tgts = list(targets) if isinstance(targets, (list, tuple)) else None
    if feats is None and tgts is None:
        return _pair_mse(features, targets)
    if feats is None:
        feats = [features] * len(tgts)
    if tgts is None:
        tgts = [targets] * len(feats)
    if len(feats) != len(tgts) or not feats:
        raise ShapeError("semantic_preserving needs matching, non-empty lists")
    total = None
    for f, t in zip(feats, tgts):
        d = _pair_mse(f, t)
        total = d if total is None else ops.add(total, d)
    return ops.div(total, float(len(feats)))


def soft_target_kl(teacher_logits: Sequence, student_logits: Tensor, temperature: float = 4.0,
                   t_squared: bool = True) -> Tensor:
    """Mean over teachers of KL(softmax(t/T) || softmax(s/T)), batch-averaged, times T^2."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if isinstance(teacher_logits, (Tensor, np.ndarray)):
        teacher_logits = [teacher_logits]
    log_q = ops.log_softmax(student_logits, temperature=temperature, axis=1)
    total = None
    for t in teacher_logits:
        t_arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        if t_arr.shape != student_logits.shape:
            raise ShapeError(f"teacher logits {t_arr.shape} vs student {student_logits.shape}")
        log_p = ops.log_softmax(t, temperature=temperature, axis=1)
        p = ops.softmax(t, temperature=temperature, axis=1)
        kl = ops.mean(ops.sum(ops.mul(p, ops.sub(log_p, log_q)), axis=1))
        total = kl if total is None else ops.add(total, kl)
    scale = temperature**2 if t_squared else 1.0
    return ops.mul(total, scale / len(teacher_logits))


def teacher_total(ce_per_teacher: Sequence[Tensor], sp: Tensor) -> Tensor:
    if not ce_per_teacher:
        raise ValueError("need at least one teacher")
    total = ce_per_teacher[0]
    for ce in ce_per_teacher[1:]:
        total = ops.add(total, ce)
    return ops.add(ops.div(total, float(len(ce_per_teacher))), sp)


def student_total(ce, st, gsdm, sp, w: LossWeights, step: int = 0):
    """L = ce + alpha*st + beta*gsdm + gamma*sp, with the decomposed report."""
    parts = {"ce": ce, "st": st, "gsdm": gsdm, "sp": sp}
    values = {}
    for k, v in parts.items():
        x = v.item() if isinstance(v, Tensor) else float(v)
        if not math.isfinite(x):
            raise NonFiniteError(f"loss component {k} is not finite")
        values[k] = x
    # left-to-right so the float result equals ce + a*st + b*gsdm + g*sp
    total = ops.add(ce, ops.mul(st, w.alpha))
    total = ops.add(total, ops.mul(gsdm, w.beta))
    total = ops.add(total, ops.mul(sp, w.gamma))
    report = LossReport(
        ce=values["ce"], soft_target=values["st"], gsdm=values["gsdm"],
        semantic_preserve=values["sp"], total=total.item(), step=step,
        meta={"alpha": w.alpha, "beta": w.beta, "gamma": w.gamma,
              "temperature": w.temperature, "t_squared": w.t_squared},
    )
    return total, report
