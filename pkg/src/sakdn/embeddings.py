"""Class-name word vectors: loaded from a GloVe-style text file or synthesized."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataFormatError, EmbeddingError

DEFAULT_DIM = 300


@dataclass(frozen=True)
class EmbeddingTable:
    vectors: dict[str, np.ndarray]
    dim: int
    provenance: str

    def __post_init__(self):
        for name, v in self.vectors.items():
            if v.shape != (self.dim,) or not np.isfinite(v).all():
                raise DataFormatError(f"embedding for {name!r} is not a finite {self.dim}-vector")
            v.setflags(write=False)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.vectors[name]
        except KeyError:
            raise EmbeddingError(f"class {name!r} has no embedding") from None

    def __contains__(self, name: str) -> bool:
        return name in self.vectors

    @property
    def names(self) -> list[str]:
        return list(self.vectors)

    def matrix(self, class_names: Iterable[str]) -> np.ndarray:
        return np.stack([self[n] for n in class_names])

    def check_complete(self, class_names: Iterable[str]) -> None:
        missing = [n for n in class_names if n not in self.vectors]
        if missing:
            raise EmbeddingError(f"no embedding for classes: {', '.join(missing)}")

    def export(self, path: str | Path) -> None:
        """Write in the same word-vector text format ``load_vectors`` reads."""
        lines = []
        for name, v in self.vectors.items():
            token = name.replace(" ", "_")
            lines.append(token + " " + " ".join(repr(float(x)) for x in v))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_vector_file(path: Path, wanted: set[str]) -> tuple[dict[str, np.ndarray], int | None]:
    found: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DataFormatError(f"{path}:{lineno}: expected {dim} values, found {len(values)}")
            if token in wanted and token not in found:
                try:
                    found[token] = np.array([float(v) for v in values])
                except ValueError as exc:
                    raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return found, dim


def load_vectors(path: str | Path, class_names: Iterable[str]) -> EmbeddingTable:
    """Look up each class name; multi-word names get the mean of their word vectors.

    A synthetic table exported with :meth:`EmbeddingTable.export` stores
    whole class names with spaces replaced by underscores; those are matched
    first.
    """
    path = Path(path)
    class_names = list(class_names)
    words = {n.replace(" ", "_") for n in class_names}
    for n in class_names:
        words.update(n.split())
    found, dim = _read_vector_file(path, words)
    if dim is None:
        raise DataFormatError(f"{path}: no vectors found")
    table = {}
    for name in class_names:
        whole = name.replace(" ", "_")
        if whole in found:
            table[name] = found[whole]
            continue
        parts = name.split()
        for w in parts:
            if w not in found:
                raise EmbeddingError(f"word {w!r} (class {name!r}) not found in {path}")
        table[name] = np.mean([found[w] for w in parts], axis=0)
    return EmbeddingTable(table, dim, f"file:{path}")


def pseudo_embed(class_names: Iterable[str], dim: int = DEFAULT_DIM, seed: int = 0) -> EmbeddingTable:
    """Deterministic random unit vectors keyed on (name, dim, seed)."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    class_names = list(class_names)
    if len(set(class_names)) != len(class_names):
        raise ValueError("duplicate class names")
    table = {}
    for name in class_names:
        digest = hashlib.sha256(f"{seed}:{dim}:{name}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(dim)
        table[name] = v / np.linalg.norm(v)
    vecs = list(table.values())
    for i in range(len(vecs)):
        for j in range(i):
            if np.array_equal(vecs[i], vecs[j]):
                raise ValueError(f"embedding collision between {class_names[i]!r} and {class_names[j]!r}")
    return EmbeddingTable(table, dim, f"synthetic({seed})")
