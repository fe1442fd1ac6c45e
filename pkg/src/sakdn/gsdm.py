"""Graph-guided semantically discriminative maps and the distillation loss on them.

The explanation weights come from an ablation: the network sees its batch and
an all-black copy of it; the predicted classes of both halves are embedded,
propagated over a Gaussian affinity graph of the final fully connected
features, and the relative drop gives the weight ``omega``.  ``omega`` is
computed outside the differentiation record (it is piecewise constant in the
activations through the argmax anyway), so maps are differentiable in the
activations only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .embeddings import EmbeddingTable
from .errors import ShapeError
from .resample import bilinear_matrix
from .tensor import Tensor, ops

DEFAULT_EPS = 1e-8
ZERO_MAP_NORM = 1e-12


@dataclass(frozen=True)
class GraphOperator:
    q: np.ndarray
    affinity: np.ndarray
    degree: np.ndarray
    mode: str = "paper"


def build_ablation_batch(batch: np.ndarray) -> np.ndarray:
    """Append an all-zero copy of the batch: (b, ...) -> (2b, ...)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] < 2:
        raise ValueError(f"ablation needs a batch of at least 2 samples, got {batch.shape[0]}")
    return np.concatenate([batch, np.zeros_like(batch)], axis=0)


def predicted_classes(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return np.argmax(np.asarray(logits), axis=1)


def embed_predictions(logits: np.ndarray, class_names: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != len(class_names):
        raise ShapeError(f"logits {logits.shape} do not match {len(class_names)} classes")
    return np.stack([table[class_names[k]] for k in predicted_classes(logits)])


def embed_labels(labels: Sequence[int], class_names: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    return np.stack([table[class_names[int(k)]] for k in labels])


def graph_normalize(features: np.ndarray, mode: str = "paper") -> GraphOperator:
    """Gaussian affinity W and its normalization Q.

    ``mode="paper"`` gives Q = D^{1/2} W D^{-1/2}; ``mode="symmetric"`` the
    usual D^{-1/2} W D^{-1/2}.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError(f"graph needs a (b, d) feature matrix with b >= 2, got {f.shape}")
    diff = f[:, None, :] - f[None, :, :]
    w = np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / 2.0)
    deg = w.sum(axis=1)
    s = np.sqrt(deg)
    if mode == "paper":
        q = s[:, None] * w / s[None, :]
    elif mode == "symmetric":
        q = w / (s[:, None] * s[None, :])
    else:
        raise ValueError(f"unknown graph normalization {mode!r}")
    return GraphOperator(q, w, deg, mode)


def slope_metric(q: np.ndarray, f: np.ndarray, q_a: np.ndarray, f_a: np.ndarray,
                 epsilon: float = DEFAULT_EPS) -> np.ndarray:
    """Elementwise (QF - Q_a F_a) / QF with tiny denominators replaced by +-epsilon."""
    q, f, q_a, f_a = (np.asarray(a, dtype=np.float64) for a in (q, f, q_a, f_a))
    if q.shape != q_a.shape or f.shape != f_a.shape or q.shape[1] != f.shape[0]:
        raise ShapeError(f"slope_metric shapes disagree: Q{q.shape} F{f.shape} Qa{q_a.shape} Fa{f_a.shape}")
    num = q @ f - q_a @ f_a
    den = q @ f
    small = np.abs(den) < epsilon
    den = np.where(small, np.where(den < 0, -epsilon, epsilon), den)
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / den


def sample_weights(omega: np.ndarray) -> np.ndarray:
    """Per-sample scalar weight: mean of omega over the semantic dimensions."""
    return np.asarray(omega, dtype=np.float64).mean(axis=1)


def saliency_map(omega: np.ndarray, activations: Tensor) -> Tensor:
    """relu(w_b * sum_p A[b, p]) for each sample b; returns (b, h, w)."""
    a = activations if isinstance(activations, Tensor) else Tensor(activations)
    if a.ndim == 2:
        a = ops.reshape(a, a.shape + (1, 1))
    wb = sample_weights(omega)
    if a.ndim != 4 or wb.shape[0] != a.shape[0]:
        raise ShapeError(f"omega rows {wb.shape[0]} do not match activations {a.shape}")
    summed = ops.sum(a, axis=1)
    return ops.relu(ops.mul(summed, wb[:, None, None]))


def explain(
    taps: Mapping[str, Tensor],
    features: np.ndarray,
    logits: np.ndarray,
    ablated_features: np.ndarray,
    ablated_logits: np.ndarray,
    class_names: Sequence[str],
    table: EmbeddingTable,
    graph_mode: str = "paper",
    epsilon: float = DEFAULT_EPS,
    labels: Sequence[int] | None = None,
) -> dict[str, Tensor]:
    """Saliency maps for every tap of one network on one batch.

    ``labels`` switches the original-half embeddings from predicted to
    ground-truth classes.
    """
    if labels is None:
        f = embed_predictions(logits, class_names, table)
    else:
        f = embed_labels(labels, class_names, table)
    f_a = embed_predictions(ablated_logits, class_names, table)
    g = graph_normalize(features, graph_mode)
    g_a = graph_normalize(ablated_features, graph_mode)
    omega = slope_metric(g.q, f, g_a.q, f_a, epsilon)
    return {name: saliency_map(omega, a) for name, a in taps.items()}


def _resize_maps(m: Tensor, h: int, w: int) -> Tensor:
    if m.shape[1:] == (h, w):
        return m
    ry = bilinear_matrix(m.shape[1], h)
    rx = bilinear_matrix(m.shape[2], w)
    return ops.matmul(ops.matmul(ry, m), rx.T.copy())


def pair_distance(teacher_map: Tensor, student_map: Tensor) -> Tensor:
    """Batch mean of || t/|t| - s/|s| ||^2 after resizing both to the smaller grid."""
    if teacher_map.shape[0] != student_map.shape[0]:
        raise ShapeError("teacher and student maps have different batch sizes")
    h = min(teacher_map.shape[1], student_map.shape[1])
    w = min(teacher_map.shape[2], student_map.shape[2])
    b = teacher_map.shape[0]
    t = ops.l2_normalize_rows(ops.reshape(_resize_maps(teacher_map, h, w), (b, h * w)), eps=ZERO_MAP_NORM)
    s = ops.l2_normalize_rows(ops.reshape(_resize_maps(student_map, h, w), (b, h * w)), eps=ZERO_MAP_NORM)
    d = ops.sub(t, s)
    return ops.mean(ops.sum(ops.mul(d, d), axis=1))


def gsdm_loss(
    teacher_maps: Sequence[Mapping[str, Tensor]],
    student_maps: Mapping[str, Tensor],
    pairing: Sequence[tuple[str, str]],
) -> Tensor:
    """Mean over teachers (in order) and paired layers of the normalized map distance."""
    if not pairing:
        raise ValueError("gsdm_loss needs at least one (teacher layer, student layer) pair")
    if not teacher_maps:
        raise ValueError("gsdm_loss needs at least one teacher")
    total = None
    for maps in teacher_maps:
        for t_layer, s_layer in pairing:
            if t_layer not in maps:
                raise KeyError(f"teacher map {t_layer!r} missing")
            if s_layer not in student_maps:
                raise KeyError(f"student map {s_layer!r} missing")
            d = pair_distance(maps[t_layer], student_maps[s_layer])
            total = d if total is None else ops.add(total, d)
    return ops.div(total, float(len(teacher_maps) * len(pairing)))


def map_to_uint8(m: np.ndarray) -> np.ndarray:
    """Min-max scale one map to 0..255; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.clip(np.rint((m - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def export_saliency(maps: Mapping[str, np.ndarray | Tensor], sample_ids: Sequence[str], split: str,
                    root) -> list[Path]:
    """Write ``<root>/<split>/<sample_id>/<layer>.pgm`` for every sample row of every layer."""
    written = []
    for layer, m in maps.items():
        arr = m.data if isinstance(m, Tensor) else np.asarray(m)
        if arr.ndim != 3 or arr.shape[0] != len(sample_ids):
            raise ShapeError(f"layer {layer} maps {arr.shape} do not match {len(sample_ids)} sample ids")
        for sid, row in zip(sample_ids, arr):
            path = Path(root) / split / sid / f"{layer}.pgm"
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(map_to_uint8(row)).save(path, format="PPM")
            written.append(path)
    return written
