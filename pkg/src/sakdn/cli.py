"""Command-line entry point: encode, train, eval, verify, viz and experiment.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 verify failure.
Primary artifacts carry no timestamps; wall-clock data goes to ``run_meta.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, gsdm
from .config import PRESETS, RunConfig, preset
from .data import (Dataset, encode_samples, generate_synthetic, load_manifest, load_sensor_csv,
                   make_aligned_batches)
from .embeddings import EmbeddingTable, load_vectors, pseudo_embed
from .errors import (AlignmentError, ConfigError, ConstantSignalError, DataFormatError, DomainError,
                     EmbeddingError, NonFiniteError, SakdnError, ShapeError, TrainingDiverged)
from .gaf import encode_triaxial, export_image
from .models import init_student, init_teachers, student_forward, teacher_forward
from .tensor import ops
from .training import (DistillSettings, evaluate_student, evaluate_teachers, load_checkpoint, read_reports,
                       save_checkpoint, train_student, train_teachers, write_reports)

log = logging.getLogger("sakdn")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
CSV_HEADER = ("step", "ce", "st", "gsdm", "sp", "total")
VALIDATION_ERRORS = (ConfigError, DataFormatError, ConstantSignalError, DomainError, EmbeddingError,
                     AlignmentError, ShapeError, FileNotFoundError)


class UsageError(Exception):
    """Bad arguments that argparse cannot catch on its own."""


# ---------------------------------------------------------------------------
# shared plumbing

def write_sidecar(out: Path, command: str, started: float, extra: dict | None = None) -> None:
    meta = {
        "command": command,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "seconds": round(time.time() - started, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "version": __version__,
    }
    meta.update(extra or {})
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def build_config(args) -> RunConfig:
    """Preset or config file, then command-line overrides, then validation."""
    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    else:
        name = getattr(args, "synthetic", None) or "synthetic-default"
        cfg = preset(name, args.seed if args.seed is not None else 0)
    if cfg.synthetic is not None:
        cfg = replace(cfg, synthetic=replace(cfg.synthetic, seed=cfg.seed))
    w = {}
    for flag, key in (("alpha", "alpha"), ("beta", "beta"), ("gamma", "gamma"), ("temp", "temperature")):
        value = getattr(args, flag, None)
        if value is not None:
            w[key] = value
    if w:
        try:
            cfg = cfg.with_weights(**w)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if getattr(args, "graph_norm", None):
        cfg = replace(cfg, graph_norm=args.graph_norm)
    if getattr(args, "embedding", None):
        cfg = replace(cfg, embedding=args.embedding)
    if getattr(args, "out", None):
        cfg = replace(cfg, out=args.out)
    iters = getattr(args, "iters", None)
    if iters is not None:
        if getattr(args, "what", None) == "student":
            cfg = replace(cfg, student_schedule=replace(cfg.student_schedule, iters=iters))
        else:
            cfg = replace(cfg, teacher_schedule=replace(cfg.teacher_schedule, iters=iters))
    cfg.validate()
    return cfg


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.synthetic is not None:
        ds = generate_synthetic(cfg.synthetic)
    else:
        ds = load_manifest(cfg.manifest, cfg.student.num_frames)
    encode_samples(ds.samples, cfg.teacher.side, cfg.on_constant)
    return ds


def load_embeddings(cfg: RunConfig, class_names) -> EmbeddingTable:
    kind, _, value = cfg.embedding.partition(":")
    if kind == "file":
        table = load_vectors(value, class_names)
        if table.dim != cfg.embedding_dim:
            raise ConfigError(f"{value}: vectors have d={table.dim}, config expects {cfg.embedding_dim}")
        return table
    try:
        seed = int(value)
    except ValueError:
        raise ConfigError(f"synthetic embedding seed must be an integer, got {value!r}") from None
    return pseudo_embed(class_names, cfg.embedding_dim, seed)


def settings_for(cfg: RunConfig) -> DistillSettings:
    return DistillSettings(weights=cfg.weights, pairing=cfg.pairing, graph_mode=cfg.graph_norm,
                           semantic_source=cfg.semantic_source)


def teacher_dir(cfg: RunConfig, args) -> Path:
    return Path(args.teachers) if getattr(args, "teachers", None) else Path(cfg.out) / "teachers" / "final"


def student_dir(cfg: RunConfig, args) -> Path:
    return Path(args.student) if getattr(args, "student", None) else Path(cfg.out) / "student" / "final"


def reports_to_csv(reports, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow([r.step, repr(r.ce), repr(r.soft_target), repr(r.gsdm), repr(r.semantic_preserve),
                        repr(r.total)])
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_encode(args) -> int:
    started = time.time()
    out = Path(args.out or "encoded")
    entries = []
    for path in args.csv:
        windows = load_sensor_csv(path, args.window, args.stride, label=args.label, modality=args.modality)
        for w in windows:
            img = encode_triaxial(w, on_constant=args.on_constant)
            name = w.sample_id.replace(":", "_")
            target = out / w.modality / f"{name}.tnsr"
            target.parent.mkdir(parents=True, exist_ok=True)
            files = export_image(img, target, pgm=args.pgm)
            entries.append({"id": w.sample_id, "label": w.label, "modality": w.modality,
                            "file": target.relative_to(out).as_posix(),
                            "pgm": [p.relative_to(out).as_posix() for p in files[1:]],
                            "constant_axes": list(img.constant_axes)})
    write_json(out / "manifest.json", {"window": args.window, "stride": args.stride, "images": entries})
    write_sidecar(out, "encode", started)
    print(json.dumps({"images": len(entries), "manifest": str(out / "manifest.json")}))
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    cfg = build_config(args)
    ds = load_dataset(cfg)
    table = load_embeddings(cfg, ds.class_names)
    out = Path(cfg.out) / ("teachers" if args.what == "teachers" else "student")
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    keep = out / "checkpoints" if args.keep_epochs else None
    if args.what == "teachers":
        run = train_teachers(ds.train, init_teachers(cfg.teacher, cfg.seed), cfg.teacher, cfg.teacher_schedule,
                             table, ds.class_names, seed=cfg.seed, checkpoint_dir=keep, eval_samples=ds.test)
        manifest = {"kind": "teachers", "config": cfg.teacher.to_dict(), "seed": cfg.seed,
                    "step": cfg.teacher_schedule.iters}
        metrics = {"accuracy": run.accuracy, "final_loss": run.reports[-1].total if run.reports else None}
    else:
        tdir = teacher_dir(cfg, args)
        teachers, _ = load_checkpoint(tdir)
        run = train_student(ds.train, init_student(cfg.student, cfg.seed), cfg.student, teachers, cfg.teacher,
                            cfg.student_schedule, table, ds.class_names, settings_for(cfg), seed=cfg.seed,
                            checkpoint_dir=keep, eval_samples=ds.test)
        manifest = {"kind": "student", "config": cfg.student.to_dict(), "seed": cfg.seed,
                    "step": cfg.student_schedule.iters, "teachers": str(tdir)}
        metrics = {"accuracy": run.accuracy, "final_loss": run.reports[-1].total if run.reports else None,
                   "weights": {"alpha": cfg.weights.alpha, "beta": cfg.weights.beta, "gamma": cfg.weights.gamma,
                               "temperature": cfg.weights.temperature}}
    save_checkpoint(out / "final", run.params, manifest)
    write_reports(out / "losses.jsonl", run.reports)
    write_json(out / "metrics.json", metrics)
    write_sidecar(out, f"train {args.what}", started)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = build_config(args)
    ds = load_dataset(cfg)
    samples = ds.test if args.split == "test" else ds.train
    metrics = {"split": args.split, "samples": len(samples)}
    tdir, sdir = teacher_dir(cfg, args), student_dir(cfg, args)
    if not (tdir / "manifest.json").exists() and not (sdir / "manifest.json").exists():
        raise FileNotFoundError(f"no checkpoint at {tdir} or {sdir}")
    if (tdir / "manifest.json").exists():
        teachers, _ = load_checkpoint(tdir)
        metrics["teachers"] = evaluate_teachers(samples, teachers, cfg.teacher, cfg.teacher_schedule.batch,
                                                seed=cfg.seed)
    if (sdir / "manifest.json").exists():
        student, _ = load_checkpoint(sdir)
        metrics["student"] = evaluate_student(samples, student, cfg.student)
    if args.out:
        write_json(Path(args.out) / "eval.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    report = run_suite(slope_epsilon=args.slope_epsilon, only=args.check or None)
    text = report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK if report.passed else EXIT_VERIFY


def _viz_batch(samples, ids, size):
    """Requested samples first, then fill to ``size`` (the graph needs company) in dataset order."""
    chosen = [samples[i] for i in ids]
    rest = [s for i, s in enumerate(samples) if i not in set(ids)]
    chosen += rest[:max(0, size - len(chosen))]
    return next(iter(make_aligned_batches(chosen, len(chosen), train=False, shuffle=False,
                                          modalities=list(chosen[0].images))))


def cmd_viz(args) -> int:
    from .plotting import plot_heatmaps, plot_loss_curves

    started = time.time()
    cfg = build_config(args)
    out = Path(cfg.out) / "viz"
    written = []
    if args.ids:
        ds = load_dataset(cfg)
        samples = ds.test if args.split == "test" else ds.train
        index = {s.sample_id: i for i, s in enumerate(samples)}
        unknown = [i for i in args.ids if i not in index]
        if unknown:
            raise UsageError(f"unknown sample id(s) {', '.join(unknown)}; {len(index)} ids available "
                             f"in the {args.split} split")
        table = load_embeddings(cfg, ds.class_names)
        batch = _viz_batch(samples, [index[i] for i in args.ids], cfg.student_schedule.batch)
        n = len(args.ids)
        settings = settings_for(cfg)
        pairing = dict(settings.pairing)

        student, _ = load_checkpoint(student_dir(cfg, args))
        video = gsdm.build_ablation_batch(batch.frames)
        pack = student_forward(video, student, cfg.student, train=False)
        b = batch.size
        # the forward ran on [originals; black copies]; maps come from the original half
        taps = {s: ops.index(pack.taps[s], slice(0, b)) for s in pairing.values()}
        s_maps = gsdm.explain(taps, pack.features.data[:b], pack.logits.data[:b], pack.features.data[b:],
                              pack.logits.data[b:], ds.class_names, table, settings.graph_mode, settings.epsilon)
        s_maps = {k: v.data[:n] for k, v in s_maps.items()}
        written += gsdm.export_saliency(s_maps, args.ids, args.split, out)

        tdir = teacher_dir(cfg, args)
        panels = {}
        if (tdir / "manifest.json").exists():
            from .training import teacher_targets

            teachers, _ = load_checkpoint(tdir)
            _, _, t_maps = teacher_targets(batch, teachers, cfg.teacher, table, ds.class_names, settings)
            for mod, maps in zip(cfg.teacher.modalities, t_maps):
                sub = {t: maps[t].data[:n] for t in pairing}
                written += gsdm.export_saliency(sub, [f"{i}/teacher_{mod}" for i in args.ids], args.split, out)
                for t in pairing:
                    panels[f"{mod} {t}"] = sub[t]
        for row, sid in enumerate(args.ids):
            maps = {f"{k}": v[row] for k, v in s_maps.items()}
            maps.update({k: v[row] for k, v in panels.items()})
            written.append(plot_heatmaps(maps, out / args.split / sid / "heatmaps.png", title=sid))

    log_path = Path(args.log) if args.log else Path(cfg.out) / "student" / "losses.jsonl"
    if args.log or log_path.exists():
        reports = read_reports(log_path)
        written.append(reports_to_csv(reports, out / "losses.csv"))
        if reports:
            written.append(plot_loss_curves(reports, out / "losses.png"))
    if not written:
        raise UsageError("nothing to visualize: pass --ids and/or --log")
    write_sidecar(out, "viz", started)
    print(json.dumps({"written": [str(p) for p in written]}))
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import run_experiment
    from .plotting import plot_accuracy

    started = time.time()
    cfg = build_config(args)
    out = Path(cfg.out) / "experiment"
    result = run_experiment(range(cfg.seed, cfg.seed + args.seeds), cfg)
    summary = result.summary()
    summary.pop("seconds")
    write_json(out / "summary.json", summary)
    for s in result.seeds:
        for name, reports in s.reports.items():
            write_reports(out / f"seed{s.seed}_{name}.jsonl", reports)
    plot_accuracy({v: [s.accuracy[v] for s in result.seeds] for v in result.medians}, out / "accuracy.png")
    write_sidecar(out, "experiment", started, {"experiment_seconds": round(result.seconds, 1)})
    print(json.dumps({"medians": result.medians, "gain": result.gain,
                      "ablations_not_above_full": result.ablations_ok()}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--synthetic", metavar="PRESET", help=f"preset name ({', '.join(PRESETS)} or 'default')")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float, help="soft-target weight")
    p.add_argument("--beta", type=float, help="saliency-map distillation weight")
    p.add_argument("--gamma", type=float, help="semantic-preserving weight")
    p.add_argument("--temp", type=float, help="soft-target temperature")
    p.add_argument("--graph-norm", choices=("paper", "symmetric"))
    p.add_argument("--embedding", metavar="SOURCE", help="file:<path> or synthetic:<seed>")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sakdn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="sensor CSV windows to GAF image files")
    p.add_argument("csv", nargs="+", help="t,x,y,z CSV files")
    p.add_argument("--window", type=int, help="window length (default: whole file)")
    p.add_argument("--stride", type=int, help="window stride (default: window length)")
    p.add_argument("--label", default=0, help="label recorded in the manifest")
    p.add_argument("--modality", help="modality name (default: file stem)")
    p.add_argument("--on-constant", choices=("error", "zeros"), default="error")
    p.add_argument("--pgm", action="store_true", help="also write one 8-bit PGM per axis")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the teachers or distill the student")
    p.add_argument("what", choices=("teachers", "student"))
    _add_run_flags(p)
    p.add_argument("--iters", type=int, help="override the schedule's iteration count")
    p.add_argument("--teachers", help="teacher checkpoint directory (student only)")
    p.add_argument("--keep-epochs", action="store_true", help="also checkpoint at every epoch end")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of saved checkpoints")
    _add_run_flags(p)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--teachers", help="teacher checkpoint directory")
    p.add_argument("--student", help="student checkpoint directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the property suite and print a JSON report")
    p.add_argument("--out", help="also write the report to this file")
    p.add_argument("--check", action="append", help="run only the named check (repeatable)")
    p.add_argument("--slope-epsilon", type=float, default=gsdm.DEFAULT_EPS,
                   help="fault injection: denominator guard used by the guard check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("viz", help="saliency PGMs, loss CSV and figures")
    _add_run_flags(p)
    p.add_argument("--ids", nargs="*", default=[], help="sample ids to explain")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--teachers", help="teacher checkpoint directory")
    p.add_argument("--student", help="student checkpoint directory")
    p.add_argument("--log", help="JSON-lines loss log (default: <out>/student/losses.jsonl)")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("experiment", help="CE-only vs full distillation and ablations over seeds")
    _add_run_flags(p)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, *VALIDATION_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDiverged, NonFiniteError, SakdnError, OSError, ValueError, KeyError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
