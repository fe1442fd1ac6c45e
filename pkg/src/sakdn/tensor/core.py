"""Immutable float64 tensors and a tape-based reverse-mode differentiator.

Every primitive is a pair of functions: ``forward(*arrays, **attrs)`` and
``vjp(grad, out, needs, *arrays, **attrs)``.  While a :class:`ComputationRecord`
is active, each primitive application is appended to it in execution order,
which is a valid topological order.  ``backward`` walks that list in reverse,
so gradient accumulation order is fixed and results are bit-reproducible.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from ..errors import NonFiniteError, RecordConsumedError, ShapeError

_ACTIVE: contextvars.ContextVar["ComputationRecord | None"] = contextvars.ContextVar(
    "sakdn_active_record", default=None
)


class Tensor:
    """Dense row-major float64 array that never changes after construction."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"tensor {name or ''} has non-finite values".replace("  ", " "))
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        # asarray, not ascontiguousarray: the latter promotes 0-d results to shape (1,)
        arr = np.asarray(arr, dtype=np.float64, order="C")
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; the primitives live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self, tuple(reversed(range(self.ndim))))


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., tuple]


@dataclass
class Node:
    prim: Primitive
    inputs: tuple[Tensor, ...]
    attrs: dict
    out: Tensor
    tracked: bool


@dataclass
class ComputationRecord:
    """Ordered list of primitive applications captured while active.

    A record is single-owner: it may be differentiated once.
    """

    inputs: dict[str, Tensor] = field(default_factory=dict)
    outputs: dict[str, Tensor] = field(default_factory=dict)
    nodes: list[Node] = field(default_factory=list)
    consumed: bool = False
    _tracked: set[int] = field(default_factory=set, repr=False)
    _token: Any = field(default=None, repr=False)

    def __enter__(self) -> "ComputationRecord":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def is_tracked(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def replay(self) -> bool:
        """Recompute every node from the leaves and compare bit-for-bit."""
        env: dict[int, np.ndarray] = {}
        for node in self.nodes:
            arrays = [env.get(id(t), t.data) for t in node.inputs]
            out = node.prim.forward(*arrays, **node.attrs)
            if not np.array_equal(out, node.out.data):
                return False
            env[id(node.out)] = out
        return True


def active_record() -> ComputationRecord | None:
    return _ACTIVE.get()


def apply(prim: Primitive, inputs: tuple, **attrs) -> Tensor:
    inputs = tuple(as_tensor(x) for x in inputs)
    rec = _ACTIVE.get()
    out_arr = prim.forward(*(t.data for t in inputs), **attrs)
    if not np.all(np.isfinite(out_arr)):
        where = f"#{len(rec.nodes)} " if rec is not None else ""
        raise NonFiniteError(f"non-finite value produced by primitive {where}({prim.name})")
    out = Tensor._wrap(out_arr)
    if rec is not None:
        tracked = any(rec.is_tracked(t) for t in inputs)
        rec.nodes.append(Node(prim, inputs, attrs, out, tracked))
        if tracked:
            rec._tracked.add(id(out))
    return out


def eval_graph(
    inputs: Mapping[str, Tensor],
    program: Callable[[dict[str, Tensor]], Tensor | Mapping[str, Tensor]],
) -> tuple[dict[str, Tensor], ComputationRecord]:
    """Run ``program`` on named inputs while recording it for differentiation.

    A program returning a single tensor gets the output name ``"out"``.
    """
    rec = ComputationRecord(inputs=dict(inputs))
    with rec:
        result = program(dict(inputs))
    if isinstance(result, Tensor):
        outputs = {"out": result}
    else:
        outputs = dict(result)
    for name, t in outputs.items():
        if not isinstance(t, Tensor):
            raise TypeError(f"program output {name!r} is not a Tensor")
    rec.outputs = outputs
    return outputs, rec


def backward(
    record: ComputationRecord,
    seed: Tensor | np.ndarray | None = None,
    output: str | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of one recorded output with respect to every requires_grad input."""
    if record.consumed:
        raise RecordConsumedError("computation record has already been differentiated")
    if output is None:
        if len(record.outputs) != 1:
            raise ValueError("record has several outputs; name the one to differentiate")
        output = next(iter(record.outputs))
    out = record.outputs[output]
    if seed is None:
        if out.size != 1:
            raise ShapeError(f"seed required for non-scalar output of shape {out.shape}")
        seed_arr = np.ones(out.shape)
    else:
        seed_arr = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=np.float64)
        if seed_arr.shape != out.shape:
            raise ShapeError(f"seed shape {seed_arr.shape} does not match output {out.shape}")

    tracked = record._tracked
    adjoint: dict[int, np.ndarray] = {id(out): seed_arr}
    for node in reversed(record.nodes):
        if not node.tracked:
            continue
        g = adjoint.pop(id(node.out), None)
        if g is None:
            continue
        needs = tuple(t.requires_grad or id(t) in tracked for t in node.inputs)
        grads = node.prim.vjp(g, node.out.data, needs, *(t.data for t in node.inputs), **node.attrs)
        for t, need, gi in zip(node.inputs, needs, grads):
            if not need or gi is None:
                continue
            key = id(t)
            prev = adjoint.get(key)
            adjoint[key] = gi if prev is None else prev + gi
    record.consumed = True

    result = {}
    for name, t in record.inputs.items():
        if t.requires_grad:
            g = adjoint.get(id(t))
            result[name] = np.zeros(t.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
    return result
