"""Synthetic multi-modal action data, file ingestion, and modality-aligned batching.

In the synthetic task each class is a latent 2-D motion pattern.  The same
latent trajectory drives the wearable signals (acceleration and angular-rate
style derivatives, one independent noise draw per modality) and the rendered
video frames (a bright blob on a dark, noisy background).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import AlignmentError, ConfigError, DataFormatError
from .gaf import SensorWindow, encode_triaxial, resize_image

ACTION_NAMES = (
    "wave", "clap", "jump", "punch", "kick", "throw", "bend", "squat",
    "sit down", "stand up", "run", "walk",
)


@dataclass
class AlignedSample:
    sample_id: str
    label: int
    windows: dict[str, SensorWindow]
    frames: np.ndarray  # (K, c, h, w) in [0, 1]
    split: str = "train"
    images: dict[str, np.ndarray] = field(default_factory=dict, repr=False)  # (3, s, s) per modality

    def __post_init__(self):
        for mod, w in self.windows.items():
            if w.sample_id != self.sample_id or w.label != self.label:
                raise AlignmentError(
                    f"modality {mod} window ({w.sample_id!r}, {w.label!r}) disagrees with "
                    f"sample ({self.sample_id!r}, {self.label!r})"
                )


@dataclass
class Dataset:
    samples: list[AlignedSample]
    class_names: list[str]
    modalities: list[str]

    @property
    def train(self) -> list[AlignedSample]:
        return [s for s in self.samples if s.split == "train"]

    @property
    def test(self) -> list[AlignedSample]:
        return [s for s in self.samples if s.split == "test"]

    def by_id(self) -> dict[str, AlignedSample]:
        return {s.sample_id: s for s in self.samples}


@dataclass(frozen=True)
class SyntheticTaskSpec:
    num_classes: int = 4
    modalities: tuple[str, ...] = ("acc", "gyro")
    window: int = 32
    samples_per_class: int = 75
    test_fraction: float = 1.0 / 3.0
    sensor_noise: float = 0.15
    phase_jitter: float = 0.5
    amplitude_jitter: float = 0.2
    num_frames: int = 4
    frame_side: int = 16
    frame_noise: float = 0.35
    blob_sigma: float = 1.6
    motion_blur: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.num_classes > len(ACTION_NAMES):
            raise ConfigError(f"at most {len(ACTION_NAMES)} classes are named")
        if self.window < 8:
            raise ConfigError("window length must be >= 8")
        if self.samples_per_class < 1 or not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("bad sample counts")
        if not self.modalities or len(set(self.modalities)) != len(self.modalities):
            raise ConfigError("modalities must be non-empty and unique")
        if self.num_frames < 1 or self.frame_side < 4:
            raise ConfigError("bad frame settings")
        if min(self.sensor_noise, self.frame_noise, self.phase_jitter, self.amplitude_jitter,
               self.motion_blur) < 0:
            raise ConfigError("noise levels must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTaskSpec":
        d = dict(d)
        if "modalities" in d:
            d["modalities"] = tuple(d["modalities"])
        return cls(**d)


def _class_motion(k: int, num_classes: int):
    """Frequency (cycles per window), x/y amplitudes, y phase offset, z harmonic."""
    freq = 1.0 + (k % 4) * 0.5
    angle = np.pi * k / num_classes
    ax, ay = np.cos(angle), np.sin(angle)
    offset = (np.pi / 2) * ((k // 2) % 2)
    harmonic = 1 + k % 2
    return freq, ax, ay, offset, harmonic


def _trajectory(t, k, num_classes, amp, phase):
    freq, ax, ay, offset, harmonic = _class_motion(k, num_classes)
    w = 2 * np.pi * freq
    px = amp * ax * np.cos(w * t + phase)
    py = amp * (ay * np.sin(w * t + phase) + 0.35 * np.sin(w * t + phase + offset))
    pz = amp * 0.5 * np.cos(harmonic * w * t + phase)
    return np.stack([px, py, pz])


def _trajectory_velocity(t, k, num_classes, amp, phase, h=1e-4):
    # in cycles-normalized units, like the gyro channel
    d = _trajectory(t + h, k, num_classes, amp, phase) - _trajectory(t - h, k, num_classes, amp, phase)
    return d / (2 * h) / (2 * np.pi)


def _sensor_signal(modality_index: int, t, k, num_classes, amp, phase):
    # finite differences of the latent trajectory: odd modalities see velocity,
    # even ones acceleration
    dt = t[1] - t[0]
    pos = _trajectory(t, k, num_classes, amp, phase)
    vel = np.gradient(pos, dt, axis=1)
    if modality_index % 2 == 1:
        return vel / (2 * np.pi)
    return np.gradient(vel, dt, axis=1) / (2 * np.pi) ** 2


def _render(pos_xy, vel_xy, side, sigma, blur):
    """Gaussian blob, stretched along its velocity by ``blur`` (frame widths per unit speed)."""
    c = (side - 1) / 2.0
    scale = side * 0.32
    cx, cy = c + scale * pos_xy[0], c + scale * pos_xy[1]
    yy, xx = np.mgrid[0:side, 0:side]
    dx, dy = xx - cx, yy - cy
    speed = float(np.hypot(*vel_xy))
    if speed == 0.0 or blur == 0.0:
        return np.exp(-(dx**2 + dy**2) / (2 * sigma**2))
    ux, uy = vel_xy[0] / speed, vel_xy[1] / speed
    along = dx * ux + dy * uy
    across = -dx * uy + dy * ux
    s_along = sigma * (1.0 + blur * speed)
    return np.exp(-(along**2 / (2 * s_along**2) + across**2 / (2 * sigma**2)))


def generate_synthetic(spec: SyntheticTaskSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    names = list(ACTION_NAMES[: spec.num_classes])
    n_test = int(round(spec.samples_per_class * spec.test_fraction))
    t = np.linspace(0.0, 1.0, spec.window)
    frame_t = (np.arange(spec.num_frames) + 0.5) / spec.num_frames
    samples = []
    idx = 0
    for k in range(spec.num_classes):
        for j in range(spec.samples_per_class):
            amp = 1.0 + spec.amplitude_jitter * rng.uniform(-1, 1)
            phase = spec.phase_jitter * rng.standard_normal()
            sid = f"s{idx:05d}"
            windows = {}
            for mi, mod in enumerate(spec.modalities):
                sig = _sensor_signal(mi, t, k, spec.num_classes, amp, phase)
                sig = sig + spec.sensor_noise * rng.standard_normal(sig.shape)
                windows[mod] = SensorWindow(sig[0], sig[1], sig[2], label=k, modality=mod,
                                            sample_id=sid, timestamps=t)
            pos = _trajectory(frame_t, k, spec.num_classes, amp, phase)
            vel = _trajectory_velocity(frame_t, k, spec.num_classes, amp, phase)
            frames = np.stack([_render(pos[:2, f], vel[:2, f], spec.frame_side, spec.blob_sigma,
                                       spec.motion_blur)
                               for f in range(spec.num_frames)])
            frames = frames + spec.frame_noise * rng.standard_normal(frames.shape)
            frames = np.clip(frames, 0.0, 1.0)[:, None, :, :]
            split = "test" if j >= spec.samples_per_class - n_test else "train"
            samples.append(AlignedSample(sid, k, windows, frames, split))
            idx += 1
    return Dataset(samples, names, list(spec.modalities))


def encode_samples(samples: Sequence[AlignedSample], side: int, on_constant: str = "error") -> None:
    """Cache each modality's GAF image, resized to ``side``, on the sample."""
    for s in samples:
        for mod, w in s.windows.items():
            if mod in s.images and s.images[mod].shape[-1] == side:
                continue
            img = encode_triaxial(w, on_constant=on_constant)
            if img.side != side:
                img = resize_image(img, side)
            s.images[mod] = img.channels_first()


# ---------------------------------------------------------------------------
# file ingestion

def window_starts(n_rows: int, length: int, stride: int) -> list[int]:
    if length < 1 or stride < 1:
        raise ValueError("window length and stride must be positive")
    return list(range(0, n_rows - length + 1, stride))


def load_sensor_csv(path, window: int | None = None, stride: int | None = None,
                    label: int | str = 0, modality: str | None = None) -> list[SensorWindow]:
    """Sliding windows over a ``t,x,y,z`` CSV; the trailing partial window is dropped.

    ``window=None`` takes the whole file as one window.
    """
    path = Path(path)
    modality = modality or path.stem
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        cols = {}
        for name in ("t", "x", "y", "z"):
            if name not in header:
                raise DataFormatError(f"{path}: missing column {name!r} in header")
            cols[name] = header.index(name)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(row[cols[c]]) for c in ("t", "x", "y", "z")])
            except (ValueError, IndexError):
                raise DataFormatError(f"{path}:{lineno}: malformed row {row!r}") from None
    data = np.array(rows, dtype=np.float64).reshape(-1, 4)
    if window is None:
        window = len(data)
        stride = stride or 1
    stride = stride or window
    if len(data) < window or window < 2:
        raise DataFormatError(f"{path}: {len(data)} rows, fewer than window length {window}")
    if np.any(np.diff(data[:, 0]) < 0):
        raise DataFormatError(f"{path}: rows are not time-ordered")
    out = []
    for start in window_starts(len(data), window, stride):
        seg = data[start:start + window]
        out.append(SensorWindow(seg[:, 1], seg[:, 2], seg[:, 3], label=label, modality=modality,
                                sample_id=f"{path.stem}:{start}", timestamps=seg[:, 0]))
    return out


def write_sensor_csv(path, window: SensorWindow) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t = window.timestamps if window.timestamps is not None else np.arange(window.length, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z"])
        for row in zip(t, window.x, window.y, window.z):
            w.writerow([repr(float(v)) for v in row])


def frame_indices(n_frames: int, k: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Centre of each of ``k`` equal bins, or a uniform draw inside each bin when ``rng`` is given."""
    if n_frames < k:
        raise DataFormatError(f"need at least {k} frames, found {n_frames}")
    i = np.arange(k)
    if rng is None:
        return np.floor((i + 0.5) * n_frames / k).astype(int)
    lo = np.floor(i * n_frames / k).astype(int)
    hi = np.maximum(np.floor((i + 1) * n_frames / k).astype(int), lo + 1)
    return rng.integers(lo, hi)


def load_frame_stack(sample_dir, k: int, rng: np.random.Generator | None = None) -> np.ndarray:
    sample_dir = Path(sample_dir)
    files = sorted(p for p in sample_dir.iterdir() if p.suffix.lower() in (".pgm", ".ppm", ".pnm"))
    chosen = frame_indices(len(files), k, rng)
    frames = []
    for i in chosen:
        with Image.open(files[i]) as im:
            arr = np.asarray(im, dtype=np.float64) / 255.0
        arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
        if frames and arr.shape != frames[0].shape:
            raise DataFormatError(f"{files[i]}: frame size {arr.shape} differs from {frames[0].shape}")
        frames.append(arr)
    return np.stack(frames)


def load_frames(root, k: int, rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    """Frame stacks for every sample sub-directory of ``root``, keyed by directory name."""
    root = Path(root)
    return {d.name: load_frame_stack(d, k, rng) for d in sorted(root.iterdir()) if d.is_dir()}


def write_frames(sample_dir, frames: np.ndarray) -> None:
    sample_dir = Path(sample_dir)
    sample_dir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        arr = np.clip(np.rint(f * 255.0), 0, 255).astype(np.uint8)
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
        Image.fromarray(arr).save(sample_dir / f"frame_{i:04d}.{'pgm' if arr.ndim == 2 else 'ppm'}",
                                  format="PPM")


def write_manifest(dataset: Dataset, root) -> Path:
    """Export a dataset as per-sample CSVs and frame directories plus ``manifest.json``."""
    root = Path(root)
    entries = []
    for s in dataset.samples:
        sensors = {}
        for mod, w in s.windows.items():
            rel = Path("sensors") / mod / f"{s.sample_id}.csv"
            write_sensor_csv(root / rel, w)
            sensors[mod] = rel.as_posix()
        frame_rel = Path("frames") / s.sample_id
        write_frames(root / frame_rel, s.frames)
        entries.append({"id": s.sample_id, "label": int(s.label), "split": s.split,
                        "sensors": sensors, "frames": frame_rel.as_posix()})
    manifest = {"class_names": dataset.class_names, "modalities": dataset.modalities, "samples": entries}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return path


def load_manifest(path, k: int) -> Dataset:
    path = Path(path)
    root = path.parent
    try:
        m = json.loads(path.read_text(encoding="utf-8"))
        class_names, modalities, entries = m["class_names"], m["modalities"], m["samples"]
    except (ValueError, KeyError) as exc:
        raise DataFormatError(f"{path}: bad manifest ({exc})") from exc
    samples = []
    for e in entries:
        sid, label = e["id"], int(e["label"])
        windows = {}
        for mod in modalities:
            if mod not in e["sensors"]:
                raise AlignmentError(f"sample {sid!r} has no {mod} recording")
            (w,) = load_sensor_csv(root / e["sensors"][mod], window=None, label=label, modality=mod)[:1]
            w.sample_id = sid
            windows[mod] = w
        frames = load_frame_stack(root / e["frames"], k)
        samples.append(AlignedSample(sid, label, windows, frames, e.get("split", "train")))
    return Dataset(samples, list(class_names), list(modalities))


# ---------------------------------------------------------------------------
# batching

@dataclass
class Batch:
    ids: list[str]
    labels: np.ndarray
    sensors: dict[str, np.ndarray]  # modality -> (b, 3, s, s)
    frames: np.ndarray              # (b, K, c, h, w)
    modality_ids: dict[str, list[str]]

    @property
    def size(self) -> int:
        return len(self.ids)

    def check_aligned(self) -> None:
        for mod, ids in self.modality_ids.items():
            if ids != self.ids:
                raise AlignmentError(f"modality {mod} ids {ids} differ from frame ids {self.ids}")


def make_aligned_batches(samples: Sequence[AlignedSample], batch_size: int, seed=0,
                         train: bool = True, shuffle: bool | None = None,
                         modalities: Sequence[str] | None = None) -> Iterator[Batch]:
    """One shared permutation drives every modality and the frames.

    Training drops the final short batch; evaluation keeps it.
    """
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    shuffle = train if shuffle is None else shuffle
    samples = list(samples)
    if modalities is None:
        modalities = list(samples[0].windows) if samples else []
    for s in samples:
        for mod in modalities:
            if mod not in s.windows or mod not in s.images:
                raise AlignmentError(f"sample {s.sample_id!r} is missing modality {mod!r} (or its image)")
    order = np.random.default_rng(seed).permutation(len(samples)) if shuffle else np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if train and len(idx) < batch_size:
            break
        chosen = [samples[i] for i in idx]
        batch = Batch(
            ids=[s.sample_id for s in chosen],
            labels=np.array([s.label for s in chosen], dtype=int),
            sensors={m: np.stack([s.images[m] for s in chosen]) for m in modalities},
            frames=np.stack([s.frames for s in chosen]),
            modality_ids={m: [s.windows[m].sample_id for s in chosen] for m in modalities},
        )
        batch.check_aligned()
        yield batch
