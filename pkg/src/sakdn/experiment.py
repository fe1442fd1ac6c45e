"""Desk-scale distillation experiment: CE-only student vs. full objective and its ablations."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .config import RunConfig, synthetic_default
from .data import encode_samples, generate_synthetic
from .embeddings import pseudo_embed
from .losses import LossReport
from .models import init_student, init_teachers
from .training import DistillSettings, train_student, train_teachers

log = logging.getLogger(__name__)

# (alpha, beta, gamma); temperature comes from the config
VARIANTS = {
    "full": None,
    "ce_only": (0.0, 0.0, 0.0),
    "no_st": (0.0, None, None),
    "no_gsdm": (None, 0.0, None),
    "no_sp": (None, None, 0.0),
}
ABLATIONS = ("no_st", "no_gsdm", "no_sp")


@dataclass
class SeedResult:
    seed: int
    teacher_accuracy: dict[str, float]
    accuracy: dict[str, float] = field(default_factory=dict)
    reports: dict[str, list[LossReport]] = field(default_factory=dict)
    teacher_reports: list[LossReport] = field(default_factory=list)


@dataclass
class ExperimentResult:
    seeds: list[SeedResult]
    medians: dict[str, float]
    seconds: float

    @property
    def gain(self) -> float:
        return self.medians["full"] - self.medians["ce_only"]

    def ablations_ok(self) -> bool:
        return all(self.medians[a] <= self.medians["full"] for a in ABLATIONS)

    def summary(self) -> dict:
        return {
            "medians": self.medians,
            "gain": self.gain,
            "ablations_not_above_full": self.ablations_ok(),
            "seconds": self.seconds,
            "per_seed": [{"seed": s.seed, "teachers": s.teacher_accuracy, "students": s.accuracy}
                         for s in self.seeds],
        }


def variant_weights(cfg: RunConfig, name: str):
    spec = VARIANTS[name]
    w = cfg.weights
    if spec is None:
        return w
    a, b, g = (cur if new is None else new for new, cur in zip(spec, (w.alpha, w.beta, w.gamma)))
    return replace(w, alpha=a, beta=b, gamma=g)


def run_seed(cfg: RunConfig, variants: Sequence[str] = tuple(VARIANTS)) -> SeedResult:
    """Train the teachers once, then every student variant from the same initialization."""
    if cfg.synthetic is None:
        raise ValueError("the experiment needs a synthetic task")
    ds = generate_synthetic(cfg.synthetic)
    encode_samples(ds.samples, cfg.teacher.side, cfg.on_constant)
    table = pseudo_embed(ds.class_names, cfg.embedding_dim, seed=cfg.seed)
    trun = train_teachers(ds.train, init_teachers(cfg.teacher, cfg.seed), cfg.teacher,
                          cfg.teacher_schedule, table, ds.class_names, seed=cfg.seed,
                          eval_samples=ds.test)
    result = SeedResult(cfg.seed, trun.accuracy, teacher_reports=trun.reports)
    log.info("seed %d teachers %s", cfg.seed, trun.accuracy)
    cache: dict = {}
    start = init_student(cfg.student, cfg.seed)
    for name in variants:
        settings = DistillSettings(weights=variant_weights(cfg, name), pairing=cfg.pairing,
                                   graph_mode=cfg.graph_norm, semantic_source=cfg.semantic_source)
        srun = train_student(ds.train, start, cfg.student, trun.params, cfg.teacher, cfg.student_schedule,
                             table, ds.class_names, settings, seed=cfg.seed, eval_samples=ds.test,
                             teacher_cache=cache)
        result.accuracy[name] = srun.accuracy
        result.reports[name] = srun.reports
        log.info("seed %d %s %.3f", cfg.seed, name, srun.accuracy)
    return result


def run_experiment(seeds: Sequence[int] = range(5), base: RunConfig | None = None,
                   variants: Sequence[str] = tuple(VARIANTS)) -> ExperimentResult:
    t0 = time.perf_counter()
    results = []
    for seed in seeds:
        cfg = base or synthetic_default(seed)
        cfg = replace(cfg, seed=seed, synthetic=replace(cfg.synthetic, seed=seed))
        results.append(run_seed(cfg, variants))
    medians = {v: float(np.median([r.accuracy[v] for r in results])) for v in variants}
    return ExperimentResult(results, medians, time.perf_counter() - t0)
