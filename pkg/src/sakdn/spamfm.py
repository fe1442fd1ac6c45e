"""Similarity-preserving adaptive multi-modal fusion.

Each modality's pooled features are weighted by its intra-batch similarity
matrix, combined across modalities by concatenation, summation and Hadamard
product, and turned into one shared non-negative channel gate.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, ops

RELATIONS = ("con", "sum", "had")


@dataclass
class FusionDiagnostics:
    zero_similarity_rows: int = 0


def layer_seed(seed: int, *names: str) -> int:
    key = "/".join(names).encode()
    return (zlib.crc32(key) ^ (seed * 0x9E3779B1)) & 0xFFFFFFFF


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def bottleneck_width(m: int, c: int) -> int:
    # (m*c) / (2m), rounded up so tiny layers keep at least one unit
    return -(-(m * c) // (2 * m))


@dataclass
class FusionParameters:
    m: int
    c: int
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @property
    def c_con(self) -> int:
        return bottleneck_width(self.m, self.c)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        m, c, cc = self.m, self.c, self.c_con
        return {
            "W_con1": (cc, m * c), "b_con1": (cc,),
            "W_sum1": (c, c), "b_sum1": (c,),
            "W_had1": (c, c), "b_had1": (c,),
            "W_con2": (c, cc), "b_con2": (c,),
            "W_sum2": (c, c), "b_sum2": (c,),
            "W_had2": (c, c), "b_had2": (c,),
        }

    @classmethod
    def init(cls, m: int, c: int, seed: int = 0, layer: str = "", gate_bias: float = 1.0 / 3.0,
             excitation: str = "zero"):
        """Glorot-uniform joint-representation weights seeded per layer name.

        Excitation weights start at zero (``excitation="glorot"`` draws them
        too) and their biases at ``gate_bias``; with three relations and a
        bias of 1/3 the gate is exactly 1 at initialization.  The ReLU gate is
        unbounded and the Hadamard relation raises magnitudes to the m-th
        power, so random excitations compound across stacked fused layers.
        """
        p = cls(m, c)
        tensors = {}
        for name, shape in p.shapes().items():
            if name.startswith("W") and name.endswith("2") and excitation == "zero":
                tensors[name] = Tensor(np.zeros(shape), requires_grad=True)
            elif name.startswith("W"):
                rng = np.random.default_rng(layer_seed(seed, "spamfm", layer, name))
                tensors[name] = Tensor(glorot(rng, *shape), requires_grad=True)
            else:
                value = gate_bias if name.endswith("2") else 0.0
                tensors[name] = Tensor(np.full(shape, value), requires_grad=True)
        p.tensors = tensors
        return p

    @classmethod
    def from_tensors(cls, m: int, c: int, tensors: dict[str, Tensor]):
        p = cls(m, c, dict(tensors))
        p.validate()
        return p

    def validate(self) -> None:
        for name, shape in self.shapes().items():
            if name not in self.tensors:
                raise ShapeError(f"missing fusion parameter {name}")
            if self.tensors[name].shape != shape:
                raise ShapeError(f"fusion parameter {name} has shape {self.tensors[name].shape}, expected {shape}")

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"spamfm/{prefix}/{k}": v for k, v in self.tensors.items()}


def _as_maps(a: Tensor) -> Tensor:
    if a.ndim == 2:
        return ops.reshape(a, (a.shape[0], a.shape[1], 1, 1))
    if a.ndim != 4:
        raise ShapeError(f"activations must be (b,c,h,w) or (b,c), got {a.shape}")
    return a


def intra_modality_similarity(a: Tensor, diagnostics: FusionDiagnostics | None = None) -> Tensor:
    """Row-L2-normalized Gram matrix of the flattened batch (b x b)."""
    a = _as_maps(a)
    r = ops.reshape(a, (a.shape[0], -1))
    gram = ops.matmul(r, ops.transpose(r, (1, 0)))
    if diagnostics is not None:
        diagnostics.zero_similarity_rows += int(np.sum(~np.any(gram.data != 0.0, axis=1)))
    # zero rows stay zero
    return ops.l2_normalize_rows(gram, eps=0.0)


def squeeze(a: Tensor) -> Tensor:
    a = _as_maps(a)
    if a.shape[2] == 1 and a.shape[3] == 1:
        return ops.reshape(a, a.shape[:2])
    return ops.global_avg_pool(a)


def fusion_gate(acts: Sequence[Tensor], params: FusionParameters,
                diagnostics: FusionDiagnostics | None = None) -> Tensor:
    """The shared (b x c) gate relu(E_con) + relu(E_sum) + relu(E_had)."""
    acts = [_as_maps(a) for a in acts]
    if not acts:
        raise ShapeError("need at least one modality")
    b, c = acts[0].shape[:2]
    for k, a in enumerate(acts):
        if a.shape[:2] != (b, c):
            raise ShapeError(f"modality {k} has (b,c)={a.shape[:2]}, expected {(b, c)}")
    if (params.m, params.c) != (len(acts), c):
        raise ShapeError(f"parameters built for m={params.m}, c={params.c}; got m={len(acts)}, c={c}")
    params.validate()
    t = params.tensors

    weighted = [ops.matmul(intra_modality_similarity(a, diagnostics), squeeze(a)) for a in acts]
    joint_sum = weighted[0]
    joint_had = weighted[0]
    for w in weighted[1:]:
        joint_sum = ops.add(joint_sum, w)
        joint_had = ops.mul(joint_had, w)
    joint_con = ops.concat(weighted, axis=1) if len(weighted) > 1 else weighted[0]

    z = {
        "con": ops.linear(joint_con, t["W_con1"], t["b_con1"]),
        "sum": ops.linear(joint_sum, t["W_sum1"], t["b_sum1"]),
        "had": ops.linear(joint_had, t["W_had1"], t["b_had1"]),
    }
    gate = None
    for rel in RELATIONS:
        e = ops.relu(ops.linear(z[rel], t[f"W_{rel}2"], t[f"b_{rel}2"]))
        gate = e if gate is None else ops.add(gate, e)
    return gate


def fuse_recalibrate(acts: Sequence[Tensor], params: FusionParameters,
                     diagnostics: FusionDiagnostics | None = None) -> list[Tensor]:
    """Scale every modality's channels by the shared gate."""
    gate = fusion_gate(acts, params, diagnostics)
    out = []
    for a in acts:
        if a.ndim == 2:
            out.append(ops.mul(a, gate))
        else:
            out.append(ops.mul(a, ops.reshape(gate, gate.shape + (1, 1))))
    return out
