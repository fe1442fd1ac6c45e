"""Small teacher and student networks exposing named tap layers.

Parameters live in flat ``{name: Tensor}`` dicts so a whole forward pass can
be handed to :func:`sakdn.tensor.eval_graph` and differentiated by name.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import AlignmentError, ShapeError
from .spamfm import FusionParameters, fuse_recalibrate, layer_seed
from .tensor import Tensor, ops

TEACHER_TAPS = ("t1", "t2", "t3", "t4", "t5")
STUDENT_TAPS = ("s1", "s2", "s3", "s4", "s5")
DEFAULT_FUSION_LAYERS = TEACHER_TAPS + ("fc1", "fc2")
DEFAULT_PAIRING = tuple(zip(TEACHER_TAPS, STUDENT_TAPS))
POOL_MEAN = "student/pool/mean"
POOL_VAR = "student/pool/var"
MIN_SIDE = 4


@dataclass
class ActivationPack:
    taps: dict[str, Tensor]
    features: Tensor  # teacher fc2 / student fc1
    logits: Tensor
    pool_stats: tuple[np.ndarray, np.ndarray] | None = None  # student batch (mean, var), training only


@dataclass(frozen=True)
class TeacherConfig:
    modalities: tuple[str, ...] = ("acc", "gyro")
    channels: tuple[int, ...] = (8, 8, 16, 16, 16)
    in_channels: int = 3
    side: int = 16
    hidden: int = 32
    embed_dim: int = 300
    num_classes: int = 4
    fusion_layers: tuple[str, ...] = DEFAULT_FUSION_LAYERS
    mode: str = "joint"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("modalities", "channels", "fusion_layers"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class StudentConfig:
    # wide last block: 0.8 dropout on the pooled features leaves ~1/5 of them
    channels: tuple[int, ...] = (8, 8, 16, 16, 64)
    in_channels: int = 1
    side: int = 16
    num_frames: int = 4
    hidden: int = 32
    embed_dim: int = 300
    num_classes: int = 4
    dropout: float = 0.8
    tap_frames: str = "middle"  # or "mean"
    center_frames: bool = True  # subtract each frame's mean intensity
    pool_norm: bool = True  # batch-normalize the pooled features (no affine)
    pool_momentum: float = 0.9
    pool_eps: float = 1e-5

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)


CONV_BIAS = 0.1
# Starts the student's semantic features near the unit-norm embedding scale.  At
# full scale the squared-error pull toward the teacher features (made noisy by
# dropout) silences the relation layer's ReLUs before anything is learned.
STUDENT_FEATURE_GAIN = 0.1
CONV_GAIN = 1.5  # He-uniform scaled up; the pooled stack otherwise starts with vanishing logits


def _conv_init(rng, out_c, in_c, k=3):
    limit = CONV_GAIN * np.sqrt(6.0 / (in_c * k * k))
    return rng.uniform(-limit, limit, size=(out_c, in_c, k, k))


def _dense_init(rng, out_f, in_f):
    limit = np.sqrt(6.0 / (in_f + out_f))
    return rng.uniform(-limit, limit, size=(out_f, in_f))


def _encoder_params(prefix, channels, in_channels, seed):
    params = {}
    prev = in_channels
    for i, c in enumerate(channels, 1):
        rng = np.random.default_rng(layer_seed(seed, prefix, f"conv{i}"))
        params[f"{prefix}/conv{i}/W"] = Tensor(_conv_init(rng, c, prev), requires_grad=True)
        params[f"{prefix}/conv{i}/b"] = Tensor(np.full(c, CONV_BIAS), requires_grad=True)
        prev = c
    return params


def _dense_params(prefix, name, out_f, in_f, seed, gain=1.0):
    rng = np.random.default_rng(layer_seed(seed, prefix, name))
    return {
        f"{prefix}/{name}/W": Tensor(gain * _dense_init(rng, out_f, in_f), requires_grad=True),
        f"{prefix}/{name}/b": Tensor(np.zeros(out_f), requires_grad=True),
    }


def _conv_block(p, prefix, i, x):
    w, b = p[f"{prefix}/conv{i}/W"], p[f"{prefix}/conv{i}/b"]
    y = ops.conv2d(x, w, stride=1, pad=1)
    return ops.relu(ops.add(y, ops.reshape(b, (1, -1, 1, 1))))


def _pool(x: Tensor) -> Tensor:
    # stop downsampling at 4x4: a padded 3x3 conv on a 1x1 map sees only its centre tap
    if x.shape[-1] >= 2 * MIN_SIDE and x.shape[-2] >= 2 * MIN_SIDE:
        return ops.avg_pool2d(x, 2)
    return x


def _dense(p, prefix, name, x):
    return ops.linear(x, p[f"{prefix}/{name}/W"], p[f"{prefix}/{name}/b"])


def _fusion_width(cfg: TeacherConfig, layer: str) -> int:
    if layer == "fc1":
        return cfg.hidden
    if layer == "fc2":
        return cfg.embed_dim
    return cfg.channels[TEACHER_TAPS.index(layer)]


def init_teachers(cfg: TeacherConfig, seed: int = 0) -> dict[str, Tensor]:
    """Parameters for one network per modality plus one fusion module per flagged layer."""
    if len(cfg.channels) != len(TEACHER_TAPS):
        raise ShapeError(f"teachers need {len(TEACHER_TAPS)} conv widths")
    params: dict[str, Tensor] = {}
    for mod in cfg.modalities:
        prefix = f"teacher/{mod}"
        params.update(_encoder_params(prefix, cfg.channels, cfg.in_channels, seed))
        params.update(_dense_params(prefix, "fc1", cfg.hidden, cfg.channels[-1], seed))
        params.update(_dense_params(prefix, "fc2", cfg.embed_dim, cfg.hidden, seed))
        params.update(_dense_params(prefix, "cls", cfg.num_classes, cfg.embed_dim, seed))
    m = len(cfg.modalities)
    for layer in cfg.fusion_layers:
        fp = FusionParameters.init(m, _fusion_width(cfg, layer), seed=seed, layer=layer)
        params.update(fp.named(layer))
    return params


def fusion_params(params: Mapping[str, Tensor], cfg: TeacherConfig, layer: str) -> FusionParameters:
    prefix = f"spamfm/{layer}/"
    tensors = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
    return FusionParameters.from_tensors(len(cfg.modalities), _fusion_width(cfg, layer), tensors)


def teacher_forward(images: Mapping[str, np.ndarray | Tensor], params: Mapping[str, Tensor],
                    cfg: TeacherConfig, mode: str | None = None,
                    sample_ids: Mapping[str, Sequence[str]] | None = None) -> dict[str, ActivationPack]:
    """Run all teachers side by side; in joint mode fuse across modalities at each flagged layer."""
    mode = mode or cfg.mode
    if mode not in ("joint", "independent"):
        raise ValueError(f"unknown teacher mode {mode!r}")
    mods = list(cfg.modalities)
    missing = [m for m in mods if m not in images]
    if missing:
        raise AlignmentError(f"no input for modalities {missing}")
    if sample_ids is not None:
        ref = list(sample_ids[mods[0]])
        for m in mods[1:]:
            if list(sample_ids[m]) != ref:
                raise AlignmentError(f"modality {m} batch is not aligned with {mods[0]}")
    xs = {m: images[m] if isinstance(images[m], Tensor) else Tensor(images[m]) for m in mods}
    b = xs[mods[0]].shape[0]
    for m in mods:
        x = xs[m]
        if x.ndim != 4 or x.shape[0] != b or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"modality {m} input {x.shape} does not match (b={b}, c={cfg.in_channels}, h, w)")

    fuse = mode == "joint"

    def maybe_fuse(layer, acts):
        if fuse and layer in cfg.fusion_layers:
            out = fuse_recalibrate([acts[m] for m in mods], fusion_params(params, cfg, layer))
            return dict(zip(mods, out))
        return acts

    taps = {m: {} for m in mods}
    h = xs
    for i, tap in enumerate(TEACHER_TAPS, 1):
        h = {m: _conv_block(params, f"teacher/{m}", i, h[m]) for m in mods}
        h = maybe_fuse(tap, h)
        for m in mods:
            taps[m][tap] = h[m]
        h = {m: _pool(h[m]) for m in mods}
    h = {m: ops.global_avg_pool(h[m]) for m in mods}
    h = {m: ops.relu(_dense(params, f"teacher/{m}", "fc1", h[m])) for m in mods}
    h = maybe_fuse("fc1", h)
    h = {m: _dense(params, f"teacher/{m}", "fc2", h[m]) for m in mods}
    h = maybe_fuse("fc2", h)
    return {
        m: ActivationPack(taps[m], h[m], _dense(params, f"teacher/{m}", "cls", h[m]))
        for m in mods
    }


def init_student(cfg: StudentConfig, seed: int = 0) -> dict[str, Tensor]:
    if len(cfg.channels) != len(STUDENT_TAPS):
        raise ShapeError(f"student needs {len(STUDENT_TAPS)} conv widths")
    params = _encoder_params("student", cfg.channels, cfg.in_channels, seed)
    params.update(_dense_params("student", "rel", cfg.hidden, cfg.num_frames * cfg.channels[-1], seed))
    params.update(_dense_params("student", "fc1", cfg.embed_dim, cfg.hidden, seed, gain=STUDENT_FEATURE_GAIN))
    params.update(_dense_params("student", "cls", cfg.num_classes, cfg.embed_dim, seed))
    if cfg.pool_norm:
        params[POOL_MEAN] = Tensor(np.zeros(cfg.channels[-1]))
        params[POOL_VAR] = Tensor(np.ones(cfg.channels[-1]))
    return params


def is_buffer(name: str) -> bool:
    """Non-trainable state kept alongside the parameters."""
    return name in (POOL_MEAN, POOL_VAR)


def update_pool_stats(params: Mapping[str, Tensor], stats: tuple[np.ndarray, np.ndarray], momentum: float,
                      first: bool = False) -> dict[str, Tensor]:
    """Exponential running averages of the pooled-feature batch statistics."""
    out = dict(params)
    for name, value in zip((POOL_MEAN, POOL_VAR), stats):
        old = params[name].data
        out[name] = Tensor(value if first else momentum * old + (1.0 - momentum) * value)
    return out


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    if rate <= 0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _student_encode(video, params, cfg: StudentConfig):
    """Per-frame conv stack; returns the tap maps and the (b*K, C) globally pooled features."""
    x = video if isinstance(video, Tensor) else Tensor(video)
    if x.ndim != 5:
        raise ShapeError(f"video must be (b, K, c, h, w), got {x.shape}")
    b, k, c, hh, ww = x.shape
    if k != cfg.num_frames:
        raise ShapeError(f"expected {cfg.num_frames} frames, got {k}")
    if c != cfg.in_channels:
        raise ShapeError(f"expected {cfg.in_channels} channels, got {c}")
    h = ops.reshape(x, (b * k, c, hh, ww))
    if cfg.center_frames:
        h = ops.sub(h, ops.mean(h, axis=(2, 3), keepdims=True))
    taps = {}
    for i, tap in enumerate(STUDENT_TAPS, 1):
        h = _conv_block(params, "student", i, h)
        per_frame = ops.reshape(h, (b, k) + h.shape[1:])
        if cfg.tap_frames == "mean":
            taps[tap] = ops.mean(per_frame, axis=1)
        else:
            taps[tap] = ops.index(per_frame, (slice(None), k // 2))
        h = _pool(h)
    return taps, ops.global_avg_pool(h)


def recalibrate_pool_stats(params: Mapping[str, Tensor], cfg: StudentConfig, videos: Sequence[np.ndarray],
                           batch_size: int = 64) -> dict[str, Tensor]:
    """Replace the running pooled-feature statistics with exact ones over ``videos``.

    The running averages trail the weights by ~1/(1 - momentum) steps; while
    the features still drift, that lag alone moved test accuracy by up to 30
    points between neighbouring steps.
    """
    if not cfg.pool_norm:
        return dict(params)
    pooled = [_student_encode(np.stack(videos[i:i + batch_size]), params, cfg)[1].data
              for i in range(0, len(videos), batch_size)]
    if not pooled:
        raise ValueError("need at least one video to estimate pooled-feature statistics")
    f = np.concatenate(pooled)
    out = dict(params)
    out[POOL_MEAN] = Tensor(f.mean(axis=0))
    out[POOL_VAR] = Tensor(f.var(axis=0))
    return out


def student_forward(video: np.ndarray | Tensor, params: Mapping[str, Tensor], cfg: StudentConfig,
                    train: bool = False, rng: np.random.Generator | None = None,
                    stat_rows: int | None = None) -> ActivationPack:
    """Shared per-frame encoder, then a relation head over the ordered frame features.

    Taps hold the middle frame's maps (or the frame mean with ``tap_frames="mean"``).
    Pooled features are standardized before dropout: with the statistics of
    the first ``stat_rows`` videos in training (so appended ablation copies do
    not shift them), with the running statistics in evaluation.
    """
    taps, h = _student_encode(video, params, cfg)
    b, k = h.shape[0] // cfg.num_frames, cfg.num_frames
    pool_stats = None
    if cfg.pool_norm:
        if train:
            rows = ops.index(h, slice(0, (b if stat_rows is None else stat_rows) * k))
            mu = ops.mean(rows, axis=0, keepdims=True)
            var = ops.mean(ops.square(ops.sub(rows, mu)), axis=0, keepdims=True)
            pool_stats = (mu.data[0], var.data[0])
        else:
            mu, var = params[POOL_MEAN], params[POOL_VAR]
        h = ops.div(ops.sub(h, mu), ops.sqrt(ops.add(var, cfg.pool_eps)))
    if train and cfg.dropout > 0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        h = ops.mul(h, dropout_mask(rng, h.shape, cfg.dropout))
    h = ops.reshape(h, (b, k * h.shape[1]))
    h = ops.relu(_dense(params, "student", "rel", h))
    fc1 = _dense(params, "student", "fc1", h)
    return ActivationPack(taps, fc1, _dense(params, "student", "cls", fc1), pool_stats)


def count_parameters(params: Mapping[str, Tensor]) -> int:
    return int(sum(t.size for t in params.values()))


def frozen(params: Mapping[str, Tensor]) -> dict[str, Tensor]:
    """Copies that do not request gradients."""
    return {k: Tensor(v.data) for k, v in params.items()}
