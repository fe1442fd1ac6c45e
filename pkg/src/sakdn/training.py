"""Teacher and student training loops, SGD, evaluation and checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import gsdm
from .config import Schedule
from .data import AlignedSample, make_aligned_batches
from .embeddings import EmbeddingTable
from .errors import AlignmentError, DataFormatError, TrainingDiverged
from .losses import (LossReport, LossWeights, cross_entropy, semantic_preserving,
                     soft_target_kl, student_total, teacher_total)
from .models import (StudentConfig, TeacherConfig, frozen, is_buffer, student_forward, teacher_forward,
                     recalibrate_pool_stats, update_pool_stats)
from .tensor import Tensor, backward, eval_graph, ops, serialize

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    if max_norm is None:
        return dict(grads)
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return dict(grads)
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


class SGD:
    """Plain SGD with optional heavy-ball momentum and a step-decay schedule."""

    def __init__(self, schedule: Schedule):
        self.schedule = schedule
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], step: int) -> dict[str, Tensor]:
        lr = self.schedule.lr_at(step)
        mu = self.schedule.momentum
        grads = clip_by_global_norm(grads, self.schedule.clip_norm)
        out = {}
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                out[name] = p
                continue
            if mu:
                v = self.velocity.get(name)
                v = g if v is None else mu * v + g
                self.velocity[name] = v
            else:
                v = g
            out[name] = Tensor(p.data - lr * v, requires_grad=True)
        return out


def _check_divergence(value: float, step: int, what: str) -> None:
    if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
        raise TrainingDiverged(f"{what} loss {value!r} at step {step} exceeds {DIVERGENCE_LIMIT:g}")


def _batches_forever(samples, batch_size, seed, modalities):
    epoch = 0
    while True:
        emitted = False
        for batch in make_aligned_batches(samples, batch_size, seed=(seed, epoch), train=True,
                                          modalities=modalities):
            emitted = True
            yield epoch, batch
        if not emitted:
            raise ValueError(f"{len(samples)} samples cannot fill one batch of {batch_size}")
        epoch += 1


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(directory, params: Mapping[str, Tensor], manifest: dict) -> Path:
    directory = Path(directory)
    names = sorted(params)
    for name in names:
        serialize.save(directory / "tensors" / f"{name}.tnsr", params[name])
    meta = dict(manifest)
    meta["tensors"] = names
    (directory / "manifest.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n",
                                             encoding="utf-8")
    return directory


def load_checkpoint(directory, trainable: bool = False) -> tuple[dict[str, Tensor], dict]:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    meta = json.loads(path.read_text(encoding="utf-8"))
    params = {}
    for name in meta.get("tensors", []):
        t = serialize.load(directory / "tensors" / f"{name}.tnsr")
        params[name] = Tensor(t.data, requires_grad=True) if trainable and not is_buffer(name) else t
    return params, meta


# ---------------------------------------------------------------------------
# teachers

@dataclass
class TeacherRun:
    params: dict[str, Tensor]
    reports: list[LossReport] = field(default_factory=list)
    accuracy: dict[str, float] = field(default_factory=dict)


def evaluate_teachers(samples: Sequence[AlignedSample], params, cfg: TeacherConfig,
                      batch_size: int = 16, mode: str | None = None, seed: int = 0) -> dict[str, float]:
    """Per-modality accuracy.

    Fusion weights every sample by its similarity to the rest of the batch, so
    joint evaluation uses shuffled batches of the training size rather than
    one large class-sorted batch.
    """
    correct = {m: 0 for m in cfg.modalities}
    total = 0
    batches = make_aligned_batches(samples, batch_size, seed=seed, train=False, shuffle=True,
                                   modalities=cfg.modalities)
    for batch in batches:
        packs = teacher_forward(batch.sensors, params, cfg, mode=mode, sample_ids=batch.modality_ids)
        for m in cfg.modalities:
            correct[m] += int(np.sum(np.argmax(packs[m].logits.data, axis=1) == batch.labels))
        total += batch.size
    return {m: correct[m] / max(total, 1) for m in cfg.modalities}


def train_teachers(samples: Sequence[AlignedSample], params: Mapping[str, Tensor], cfg: TeacherConfig,
                   schedule: Schedule, table: EmbeddingTable, class_names: Sequence[str], seed: int = 0,
                   on_report: Callable[[LossReport], None] | None = None,
                   checkpoint_dir=None, eval_samples: Sequence[AlignedSample] | None = None,
                   mode: str | None = None) -> TeacherRun:
    """Minimize mean cross-entropy plus the fc2 semantic-preserving loss over all teachers."""
    mods = list(cfg.modalities)
    targets_all = table.matrix(class_names)
    params = {k: Tensor(v.data, requires_grad=True) for k, v in params.items()}
    opt = SGD(schedule)
    run = TeacherRun(params)
    last_epoch = 0

    def checkpoint(tag, step):
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / tag, params,
                            {"kind": "teachers", "config": cfg.to_dict(), "seed": seed, "step": step})

    stream = _batches_forever(samples, schedule.batch, seed, mods)
    for step in range(schedule.iters):
        epoch, batch = next(stream)
        if epoch != last_epoch:
            checkpoint(f"epoch_{last_epoch:03d}", step)
            last_epoch = epoch
        targets = targets_all[batch.labels]

        def program(p):
            packs = teacher_forward(batch.sensors, p, cfg, mode=mode, sample_ids=batch.modality_ids)
            ces = [cross_entropy(packs[m].logits, batch.labels) for m in mods]
            sp = semantic_preserving([packs[m].features for m in mods], targets)
            ce_sum = ces[0]
            for c in ces[1:]:
                ce_sum = ops.add(ce_sum, c)
            ce_mean = ops.div(ce_sum, float(len(ces)))
            return {"loss": teacher_total(ces, sp), "ce": ce_mean, "sp": sp}

        outputs, rec = eval_graph(params, program)
        total = outputs["loss"].item()
        _check_divergence(total, step, "teacher")
        grads = backward(rec, output="loss")
        params = opt.step(params, grads, step)
        report = LossReport(ce=outputs["ce"].item(), semantic_preserve=outputs["sp"].item(),
                            total=total, step=step, meta={"phase": "teacher", "lr": schedule.lr_at(step)})
        run.reports.append(report)
        if on_report:
            on_report(report)
    checkpoint("final", schedule.iters)
    run.params = params
    if eval_samples is not None:
        run.accuracy = evaluate_teachers(eval_samples, params, cfg, batch_size=schedule.batch, mode=mode)
    return run


# ---------------------------------------------------------------------------
# student

@dataclass
class StudentRun:
    params: dict[str, Tensor]
    reports: list[LossReport] = field(default_factory=list)
    accuracy: float | None = None


@dataclass
class DistillSettings:
    weights: LossWeights = LossWeights()
    pairing: tuple[tuple[str, str], ...] = (("t1", "s1"), ("t2", "s2"), ("t3", "s3"), ("t4", "s4"), ("t5", "s5"))
    graph_mode: str = "paper"
    semantic_source: str = "predicted"
    epsilon: float = gsdm.DEFAULT_EPS


def teacher_targets(batch, teacher_params, tcfg: TeacherConfig, table, class_names, settings: DistillSettings):
    """Frozen-teacher logits, fc2 features and saliency maps for one batch."""
    mods = list(tcfg.modalities)
    orig = teacher_forward(batch.sensors, teacher_params, tcfg, sample_ids=batch.modality_ids)
    blank = {m: gsdm.build_ablation_batch(batch.sensors[m])[batch.size:] for m in mods}
    abl = teacher_forward(blank, teacher_params, tcfg)
    needed = sorted({t for t, _ in settings.pairing})
    missing = [t for t in needed if t not in orig[mods[0]].taps]
    if missing:
        raise KeyError(f"teacher taps {missing} required by the pairing do not exist")
    labels = batch.labels if settings.semantic_source == "label" else None
    maps = []
    for m in mods:
        taps = {t: orig[m].taps[t] for t in needed}
        maps.append(gsdm.explain(taps, orig[m].features.data, orig[m].logits.data,
                                 abl[m].features.data, abl[m].logits.data, class_names, table,
                                 settings.graph_mode, settings.epsilon, labels))
    return ([orig[m].logits.data for m in mods], [orig[m].features.data for m in mods], maps)


def evaluate_student(samples: Sequence[AlignedSample], params, cfg: StudentConfig, batch_size: int = 64) -> float:
    correct = total = 0
    for batch in make_aligned_batches(samples, batch_size, train=False, modalities=[]):
        pack = student_forward(batch.frames, params, cfg, train=False)
        correct += int(np.sum(np.argmax(pack.logits.data, axis=1) == batch.labels))
        total += batch.size
    return correct / max(total, 1)


def student_step_loss(p, batch, scfg: StudentConfig, teacher_out, table, class_names,
                      settings: DistillSettings, rng, step: int = 0, stats: dict | None = None):
    """Build L_S for one batch inside an active record; returns (total, report).

    ``stats`` receives the pooled-feature batch statistics of the original half.
    """
    t_logits, t_feats, t_maps = teacher_out
    b = batch.size
    video = gsdm.build_ablation_batch(batch.frames)
    pack = student_forward(video, p, scfg, train=True, rng=rng, stat_rows=b)
    if stats is not None:
        stats["pool_stats"] = pack.pool_stats
    first = slice(0, b)
    logits = ops.index(pack.logits, first)
    feats = ops.index(pack.features, first)

    labels = batch.labels if settings.semantic_source == "label" else None
    f = (gsdm.embed_labels(labels, class_names, table) if labels is not None
         else gsdm.embed_predictions(logits.data, class_names, table))
    f_a = gsdm.embed_predictions(pack.logits.data[b:], class_names, table)
    g = gsdm.graph_normalize(feats.data, settings.graph_mode)
    g_a = gsdm.graph_normalize(pack.features.data[b:], settings.graph_mode)
    omega = gsdm.slope_metric(g.q, f, g_a.q, f_a, settings.epsilon)
    s_maps = {s: gsdm.saliency_map(omega, ops.index(pack.taps[s], first)) for _, s in settings.pairing}

    ce = cross_entropy(logits, batch.labels)
    st = soft_target_kl(t_logits, logits, settings.weights.temperature, settings.weights.t_squared)
    gs = gsdm.gsdm_loss(t_maps, s_maps, settings.pairing)
    sp = semantic_preserving(feats, t_feats)
    return student_total(ce, st, gs, sp, settings.weights, step=step)


def train_student(samples: Sequence[AlignedSample], student_params: Mapping[str, Tensor], scfg: StudentConfig,
                  teacher_params: Mapping[str, Tensor], tcfg: TeacherConfig, schedule: Schedule,
                  table: EmbeddingTable, class_names: Sequence[str], settings: DistillSettings | None = None,
                  seed: int = 0, on_report: Callable[[LossReport], None] | None = None,
                  checkpoint_dir=None, eval_samples: Sequence[AlignedSample] | None = None,
                  teacher_cache: dict | None = None) -> StudentRun:
    """Minimize ce + alpha*st + beta*gsdm + gamma*sp with the teachers held fixed.

    Teacher targets depend only on the batch, so runs that share a seed (and
    hence a batch stream) may share ``teacher_cache``.
    """
    settings = settings or DistillSettings()
    teacher_params = frozen(teacher_params)
    mods = list(tcfg.modalities)
    for s in samples:
        missing = [m for m in mods if m not in s.images]
        if missing:
            raise AlignmentError(f"sample {s.sample_id!r} lacks teacher inputs for {missing}")
    params = {k: Tensor(v.data, requires_grad=not is_buffer(k)) for k, v in student_params.items()}
    opt = SGD(schedule)
    run = StudentRun(params)
    last_epoch = 0

    def checkpoint(tag, step):
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / tag, params,
                            {"kind": "student", "config": scfg.to_dict(), "seed": seed, "step": step})

    stream = _batches_forever(samples, schedule.batch, seed, mods)
    for step in range(schedule.iters):
        epoch, batch = next(stream)
        if epoch != last_epoch:
            checkpoint(f"epoch_{last_epoch:03d}", step)
            last_epoch = epoch
        key = (tuple(batch.ids), settings.graph_mode, settings.semantic_source, settings.epsilon,
               settings.pairing)
        if teacher_cache is not None and key in teacher_cache:
            teacher_out = teacher_cache[key]
        else:
            teacher_out = teacher_targets(batch, teacher_params, tcfg, table, class_names, settings)
            if teacher_cache is not None:
                teacher_cache[key] = teacher_out
        rng = np.random.default_rng((seed, 7919, step))
        captured = {}

        def program(p):
            total, report = student_step_loss(p, batch, scfg, teacher_out, table, class_names,
                                              settings, rng, step, stats=captured)
            captured["report"] = report
            return total

        outputs, rec = eval_graph(params, program)
        report = captured["report"]
        report.meta["lr"] = schedule.lr_at(step)
        _check_divergence(report.total, step, "student")
        grads = backward(rec)
        params = opt.step(params, grads, step)
        if captured.get("pool_stats") is not None:
            params = update_pool_stats(params, captured["pool_stats"], scfg.pool_momentum, first=step == 0)
        run.reports.append(report)
        if on_report:
            on_report(report)
    params = recalibrate_pool_stats(params, scfg, [s.frames for s in samples])
    checkpoint("final", schedule.iters)
    run.params = params
    if eval_samples is not None:
        run.accuracy = evaluate_student(eval_samples, params, scfg)
    return run


def write_reports(path, reports: Sequence[LossReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def read_reports(path) -> list[LossReport]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"no loss log at {path}")
    with open(path, encoding="utf-8") as fh:
        return [LossReport.from_json(line) for line in fh if line.strip()]
