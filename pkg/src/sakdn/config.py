"""Run configuration and named presets.

The dataset presets copy the schedule numbers of the three benchmark setups
(batch, initial LR, decay ratio, decay interval, total iterations for teacher
and student) and their loss-weight optimum.  ``synthetic-default`` is the
desk-scale setting used by the acceptance experiment.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .data import SyntheticTaskSpec
from .errors import ConfigError
from .losses import LossWeights
from .models import DEFAULT_PAIRING, StudentConfig, TeacherConfig


@dataclass(frozen=True)
class Schedule:
    batch: int
    lr: float
    decay_ratio: float
    decay_interval: int
    iters: int
    momentum: float = 0.0
    clip_norm: float | None = None  # global gradient-norm cap, off by default

    def lr_at(self, step: int) -> float:
        return self.lr * self.decay_ratio ** (step // self.decay_interval)

    def validate(self, what: str) -> None:
        if self.batch < 2:
            raise ConfigError(f"{what}: batch must be >= 2")
        if self.lr < 0 or self.iters < 0 or self.decay_interval < 1:
            raise ConfigError(f"{what}: bad schedule {self}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"{what}: momentum must be in [0, 1)")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"{what}: clip norm must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    teacher_schedule: Schedule = Schedule(16, 0.05, 0.5, 200, 300, momentum=0.9, clip_norm=1.0)
    student_schedule: Schedule = Schedule(16, 0.05, 0.5, 100, 200, momentum=0.9, clip_norm=1.0)
    weights: LossWeights = LossWeights()
    pairing: tuple[tuple[str, str], ...] = DEFAULT_PAIRING
    synthetic: SyntheticTaskSpec | None = SyntheticTaskSpec()
    manifest: str | None = None
    embedding: str = "synthetic:0"
    embedding_dim: int = 300
    graph_norm: str = "paper"
    semantic_source: str = "predicted"
    teacher: TeacherConfig = TeacherConfig()
    student: StudentConfig = StudentConfig()
    on_constant: str = "error"
    out: str = "runs/default"

    def validate(self) -> None:
        self.teacher_schedule.validate("teacher schedule")
        self.student_schedule.validate("student schedule")
        if self.graph_norm not in ("paper", "symmetric"):
            raise ConfigError(f"graph norm must be paper or symmetric, not {self.graph_norm!r}")
        if self.semantic_source not in ("predicted", "label"):
            raise ConfigError("semantic source must be predicted or label")
        if self.on_constant not in ("error", "zeros"):
            raise ConfigError("constant-signal policy must be error or zeros")
        if not self.pairing:
            raise ConfigError("tap pairing must be non-empty")
        if (self.synthetic is None) == (self.manifest is None):
            raise ConfigError("exactly one of synthetic spec or manifest path is required")
        if not (self.embedding.startswith("file:") or self.embedding.startswith("synthetic:")):
            raise ConfigError("embedding source must be file:<path> or synthetic:<seed>")
        if self.teacher.embed_dim != self.embedding_dim or self.student.embed_dim != self.embedding_dim:
            raise ConfigError("network feature widths must equal the embedding dimension")
        if self.synthetic is not None:
            self.synthetic.validate()
            if tuple(self.teacher.modalities) != tuple(self.synthetic.modalities):
                raise ConfigError("teacher modalities differ from the synthetic task's")
            if self.student.num_frames != self.synthetic.num_frames:
                raise ConfigError("student segment count differs from the synthetic frame count")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pairing"] = [list(p) for p in self.pairing]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        for key in ("teacher_schedule", "student_schedule"):
            if key in d:
                d[key] = Schedule(**d[key])
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "pairing" in d:
            d["pairing"] = tuple(tuple(p) for p in d["pairing"])
        if d.get("synthetic") is not None:
            d["synthetic"] = SyntheticTaskSpec.from_dict(d["synthetic"])
        if "teacher" in d:
            d["teacher"] = TeacherConfig.from_dict(d["teacher"])
        if "student" in d:
            d["student"] = StudentConfig.from_dict(d["student"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def with_weights(self, **kw) -> "RunConfig":
        return replace(self, weights=replace(self.weights, **kw))


def _table(teacher, student, weights, frames, num_classes, modalities):
    return dict(teacher=teacher, student=student, weights=weights, frames=frames,
                num_classes=num_classes, modalities=modalities)


# (batch, lr, decay ratio, decay interval, iters) for teacher and student
_BENCHMARKS = {
    "berkeley": _table((8, 0.0001, 0.5, 50, 100), (8, 0.001, 0.1, 20, 30), (0.1, 0.1, 1.0), 8, 11,
                       tuple(f"acc{i}" for i in range(1, 7))),
    "utd": _table((16, 0.0002, 0.5, 50, 100), (16, 0.001, 0.5, 50, 100), (0.1, 1.0, 1.0), 8, 27,
                  ("acc", "gyro")),
    "mmact": _table((16, 0.0001, 0.5, 50, 70), (32, 0.001, 0.5, 30, 60), (0.1, 1.0, 1.0), 3, 37,
                    ("acc_phone", "acc_watch", "gyro", "orientation")),
}

PRESETS = ("synthetic-default", "berkeley", "utd", "mmact")


def preset(name: str, seed: int = 0) -> RunConfig:
    if name in ("default", "synthetic-default"):
        return synthetic_default(seed)
    if name not in _BENCHMARKS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    b = _BENCHMARKS[name]
    alpha, beta, gamma = b["weights"]
    mods = b["modalities"]
    n_cls = b["num_classes"]
    return RunConfig(
        seed=seed,
        teacher_schedule=Schedule(*b["teacher"]),
        student_schedule=Schedule(*b["student"]),
        weights=LossWeights(alpha, beta, gamma, 4.0),
        synthetic=None,
        manifest=f"data/{name}/manifest.json",
        teacher=TeacherConfig(modalities=mods, num_classes=n_cls),
        student=StudentConfig(num_frames=b["frames"], in_channels=3, num_classes=n_cls),
        out=f"runs/{name}",
    )


def synthetic_default(seed: int = 0) -> RunConfig:
    spec = SyntheticTaskSpec(seed=seed)
    return RunConfig(
        seed=seed,
        synthetic=spec,
        teacher=TeacherConfig(modalities=spec.modalities, num_classes=spec.num_classes,
                              side=16),
        student=StudentConfig(num_frames=spec.num_frames, side=spec.frame_side,
                              num_classes=spec.num_classes),
        out="runs/synthetic",
    )
