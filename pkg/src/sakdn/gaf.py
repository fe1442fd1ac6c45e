"""Gramian Angular (summation) Field encoding of tri-axial sensor windows."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConstantSignalError, DomainError, NonFiniteError
from .resample import resize2d
from .tensor import serialize

CLAMP_SLACK = 1e-12
AXES = ("x", "y", "z")


@dataclass
class SensorWindow:
    """One fixed-length tri-axial segment. Timestamps are carried for provenance only."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    label: int | str = 0
    modality: str = "acc"
    sample_id: str = ""
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.x, self.y, self.z = (np.asarray(a, dtype=np.float64).reshape(-1) for a in (self.x, self.y, self.z))
        n = self.x.size
        if n < 2 or self.y.size != n or self.z.size != n:
            raise ValueError(f"axes must share a length >= 2, got {self.x.size}, {self.y.size}, {self.z.size}")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all() and np.isfinite(self.z).all()):
            raise NonFiniteError(f"window {self.sample_id!r} has non-finite samples")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
            if self.timestamps.size != n or np.any(np.diff(self.timestamps) < 0):
                raise ValueError("timestamps must be monotone and match the window length")

    @property
    def length(self) -> int:
        return self.x.size

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.x, self.y, self.z


@dataclass
class GafImage:
    data: np.ndarray  # (n, n, 3)
    modality: str = ""
    label: int | str = 0
    sample_id: str = ""
    constant_axes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def side(self) -> int:
        return self.data.shape[0]

    def channels_first(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))


def normalize_signal(x, on_constant: str = "error") -> np.ndarray:
    """Min-max scale to [-1, 1]: min maps to -1, max to +1.

    ``on_constant="zeros"`` maps a constant signal to all zeros instead of
    raising :class:`ConstantSignalError`.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size < 2:
        raise ValueError("signal needs at least two samples")
    if not np.isfinite(x).all():
        raise NonFiniteError("signal has non-finite samples")
    hi, lo = x.max(), x.min()
    if hi == lo:
        if on_constant == "zeros":
            return np.zeros_like(x)
        raise ConstantSignalError(f"constant signal (value {float(hi)!r}) cannot be min-max normalized")
    out = ((x - hi) + (x - lo)) / (hi - lo)
    # rounding can land a hair outside the interval
    return np.clip(out, -1.0, 1.0)


def encode_gaf(xn) -> np.ndarray:
    """G[i, j] = cos(arccos(x_i) + arccos(x_j))."""
    xn = np.asarray(xn, dtype=np.float64).reshape(-1)
    if np.any(np.abs(xn) > 1.0 + CLAMP_SLACK):
        bad = int(np.argmax(np.abs(xn)))
        raise DomainError(f"normalized value {xn[bad]!r} at index {bad} outside [-1, 1]")
    theta = np.arccos(np.clip(xn, -1.0, 1.0))
    g = np.cos(theta[:, None] + theta[None, :])
    # addition is commutative in IEEE arithmetic, but make symmetry structural
    return np.triu(g) + np.triu(g, 1).T


def encode_triaxial(w: SensorWindow, on_constant: str = "error") -> GafImage:
    channels = []
    flagged = []
    for name, axis in zip(AXES, w.axes()):
        try:
            xn = normalize_signal(axis)
        except ConstantSignalError as exc:
            if on_constant != "zeros":
                raise ConstantSignalError(f"window {w.sample_id!r} axis {name}: {exc}") from exc
            xn = np.zeros_like(axis)
            flagged.append(name)
        channels.append(encode_gaf(xn))
    return GafImage(np.stack(channels, axis=-1), w.modality, w.label, w.sample_id, tuple(flagged))


def resize_image(img: GafImage, side: int) -> GafImage:
    if side < 2:
        raise ValueError("side must be >= 2")
    if img.side == side:
        data = img.data.copy()
    else:
        data = resize2d(img.data.transpose(2, 0, 1), side, side).transpose(1, 2, 0)
    return GafImage(np.ascontiguousarray(data), img.modality, img.label, img.sample_id, img.constant_axes)


def to_uint8(values: np.ndarray, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    scaled = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def export_image(img: GafImage, path: str | Path, pgm: bool = False) -> list[Path]:
    """Write the tensor container at ``path``; optionally one PGM per channel next to it."""
    path = Path(path)
    serialize.save(path, img.data)
    written = [path]
    if pgm:
        for c, name in enumerate(AXES):
            p = path.with_name(f"{path.stem}_{name}.pgm")
            Image.fromarray(to_uint8(img.data[:, :, c])).save(p, format="PPM")
            written.append(p)
    return written
