"""Named property checks with a machine-readable report.

``run_suite`` never raises for a failing property: each check records pass or
fail with a short detail string, and the caller decides the exit status.
``slope_epsilon`` is a fault-injection hook; passing 0 disables the
denominator guard and the guard check must then fail.
"""

from __future__ import annotations

import json
import time
import traceback
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from . import gsdm, reference
from .data import SyntheticTaskSpec, encode_samples, generate_synthetic, make_aligned_batches
from .embeddings import pseudo_embed
from .errors import ConfigError
from .gaf import encode_gaf, normalize_signal
from .losses import LossWeights, cross_entropy, semantic_preserving, soft_target_kl, student_total
from .models import StudentConfig, TeacherConfig, init_student, init_teachers
from .spamfm import FusionParameters, fuse_recalibrate
from .tensor import Tensor, finite_diff_check, ops, serialize

GRAD_TOL = 1e-4
PRIMITIVE_TOL = 1e-5
BRUTE_TOL = 1e-10
GAF_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class SuiteReport:
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed,
                           "checks": [dict(asdict(c), status="pass" if c.passed else "fail")
                                      for c in self.checks]}, indent=1)


# ---------------------------------------------------------------------------
# individual checks; each returns (passed, detail)

def check_gaf_oracle(trials: int = 1000, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = worst_diag = 0.0
    for _ in range(trials):
        n = int(rng.integers(4, 129))
        x = rng.standard_normal(n) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
        xn = normalize_signal(x)
        g = encode_gaf(xn)
        s = np.sqrt(np.clip(1 - xn**2, 0, None))
        closed = np.outer(xn, xn) - np.outer(s, s)
        worst = max(worst, float(np.abs(g - closed).max()))
        worst_diag = max(worst_diag, float(np.abs(np.diag(g) - (2 * xn**2 - 1)).max()))
        if not np.array_equal(g, g.T):
            return False, f"asymmetric image for n={n}"
    ok = worst <= GAF_TOL and worst_diag <= GAF_TOL
    return ok, f"max |G - closed form| = {worst:.2e}, max diagonal error = {worst_diag:.2e}"


def check_gaf_reference(seed: int = 1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (4, 9, 16):
        x = rng.standard_normal(n)
        worst = max(worst, float(np.abs(encode_gaf(normalize_signal(x)) - reference.gaf(x)).max()))
    return worst <= GAF_TOL, f"max deviation from loop implementation {worst:.2e}"


def _away_from_zero(rng, shape):
    # magnitudes in [0.5, 2]: near-zero gradient entries would measure rounding noise, not the rule
    return rng.uniform(0.5, 2.0, shape) * rng.choice((-1.0, 1.0), shape)


def _primitive_programs(rng):
    a = _away_from_zero(rng, (3, 4))
    b = _away_from_zero(rng, (3, 4))
    m = _away_from_zero(rng, (4, 2))
    x = _away_from_zero(rng, (2, 2, 5, 5))
    w = _away_from_zero(rng, (3, 2, 3, 3))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    probe = _away_from_zero(rng, (3, 4))
    T = lambda v: Tensor(v, requires_grad=True)  # noqa: E731

    probe_seed = int(rng.integers(1 << 30))

    def weighted(t):
        # a fixed random cotangent, so every output element reaches the check
        w = _away_from_zero(np.random.default_rng((probe_seed, *t.shape)), t.shape)
        return ops.sum(ops.mul(t, Tensor(w)))

    return {
        "add": ({"a": T(a), "b": T(b)}, lambda p: weighted(ops.add(p["a"], p["b"]))),
        "sub": ({"a": T(a), "b": T(b)}, lambda p: weighted(ops.sub(p["a"], p["b"]))),
        "mul": ({"a": T(a), "b": T(b)}, lambda p: weighted(ops.mul(p["a"], p["b"]))),
        "div": ({"a": T(a), "b": T(pos)}, lambda p: weighted(ops.div(p["a"], p["b"]))),
        "matmul": ({"a": T(a), "m": T(m)}, lambda p: weighted(ops.matmul(p["a"], p["m"]))),
        "relu": ({"a": T(a)}, lambda p: weighted(ops.relu(p["a"]))),
        "sqrt": ({"a": T(pos)}, lambda p: weighted(ops.sqrt(p["a"]))),
        "conv2d": ({"x": T(x), "w": T(w)}, lambda p: weighted(ops.conv2d(p["x"], p["w"], stride=1, pad=1))),
        "conv2d_stride2": ({"x": T(x), "w": T(w)},
                           lambda p: weighted(ops.conv2d(p["x"], p["w"], stride=2, pad=0))),
        "global_avg_pool": ({"x": T(x)}, lambda p: weighted(ops.global_avg_pool(p["x"]))),
        "l2_normalize_rows": ({"a": T(a)}, lambda p: weighted(ops.l2_normalize_rows(p["a"]))),
        "softmax": ({"a": T(a)}, lambda p: weighted(ops.softmax(p["a"], temperature=2.0))),
        "log_softmax": ({"a": T(a)}, lambda p: weighted(ops.log_softmax(p["a"]))),
        "concat": ({"a": T(a), "b": T(b)}, lambda p: weighted(ops.concat([p["a"], p["b"]], axis=1))),
        "transpose": ({"a": T(a)}, lambda p: weighted(ops.transpose(p["a"], (1, 0)))),
        "index": ({"a": T(a)}, lambda p: weighted(ops.index(p["a"], (slice(0, 2), 1)))),
        "mean": ({"a": T(a)}, lambda p: weighted(ops.mean(p["a"], axis=0))),
        "probe": ({"a": T(probe)}, lambda p: weighted(ops.reshape(p["a"], (4, 3)))),
    }


def check_primitive_gradients(trials: int = 10, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for _ in range(trials):
        for name, (inputs, program) in _primitive_programs(rng).items():
            worst[name] = max(worst.get(name, 0.0), finite_diff_check(program, inputs).worst)
    bad = {k: v for k, v in worst.items() if v > PRIMITIVE_TOL}
    top = max(worst, key=worst.get)
    return not bad, (f"failing: {bad}" if bad else f"worst {top} {worst[top]:.2e}")


def random_fusion_case(rng, b=2, m=2, c=3, h=2, w=2):
    acts = [rng.standard_normal((b, c, h, w)) for _ in range(m)]
    p = FusionParameters.init(m, c, seed=int(rng.integers(1 << 30)), layer="check", excitation="glorot")
    params = {k: rng.standard_normal(v.shape) * 0.7 for k, v in p.tensors.items()}
    return acts, params


def check_spamfm_gradients(trials: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        acts, params = random_fusion_case(rng)
        probe = [rng.standard_normal(a.shape) for a in acts]
        inputs = {k: Tensor(v, requires_grad=True) for k, v in params.items()}

        def program(p):
            fp = FusionParameters.from_tensors(2, 3, p)
            out = fuse_recalibrate([Tensor(a) for a in acts], fp)
            total = ops.sum(ops.mul(out[0], Tensor(probe[0])))
            return ops.add(total, ops.sum(ops.mul(out[1], Tensor(probe[1]))))

        rep = finite_diff_check(program, inputs)
        if len(rep.max_rel_err) != 12:
            return False, f"only {len(rep.max_rel_err)} parameter tensors checked"
        worst = max(worst, rep.worst)
    return worst <= GRAD_TOL, f"max rel err over 12 tensors: {worst:.2e}"


def check_spamfm_brute_force(seed: int = 0):
    rng = np.random.default_rng(seed)
    acts, params = random_fusion_case(rng)
    fast = fuse_recalibrate([Tensor(a) for a in acts],
                            FusionParameters.from_tensors(2, 3, {k: Tensor(v) for k, v in params.items()}))
    slow = reference.fuse(acts, params)
    worst = max(float(np.abs(f.data - s).max()) for f, s in zip(fast, slow))
    return worst <= BRUTE_TOL, f"max deviation {worst:.2e}"


def random_gsdm_case(rng, b=4, d=5, c=3, h=3, w=3):
    f = rng.standard_normal((b, d))
    f_a = rng.standard_normal((b, d))
    feat = rng.standard_normal((b, 6)) * 0.5
    feat_a = rng.standard_normal((b, 6)) * 0.5
    acts = rng.standard_normal((b, c, h, w))
    return f, f_a, feat, feat_a, acts


def check_gsdm_brute_force(seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mode in ("paper", "symmetric"):
        f, f_a, feat, feat_a, acts = random_gsdm_case(rng)
        g = gsdm.graph_normalize(feat, mode)
        g_a = gsdm.graph_normalize(feat_a, mode)
        worst = max(worst, float(np.abs(g.q - reference.graph_q(feat, mode)).max()))
        omega = gsdm.slope_metric(g.q, f, g_a.q, f_a)
        ref_omega = reference.slope(reference.graph_q(feat, mode), f, reference.graph_q(feat_a, mode), f_a,
                                    gsdm.DEFAULT_EPS)
        worst = max(worst, float(np.abs(omega - ref_omega).max() / max(1.0, np.abs(ref_omega).max())))
        m = gsdm.saliency_map(omega, Tensor(acts)).data
        worst = max(worst, float(np.abs(m - reference.saliency(ref_omega, acts)).max()))
    return worst <= BRUTE_TOL, f"max deviation {worst:.2e}"


def check_slope_guard(epsilon: float = gsdm.DEFAULT_EPS):
    # the first column of QF is exactly zero, so the guard must engage
    q = np.eye(3)
    f = np.array([[0.0, 1.0], [0.0, 2.0], [0.0, -1.0]])
    f_a = np.array([[1.0, 0.5], [-1.0, 1.0], [2.0, 0.0]])
    omega = gsdm.slope_metric(q, f, q, f_a, epsilon)
    ok = bool(np.all(np.isfinite(omega)))
    return ok, "finite slope with zero denominators" if ok else f"non-finite slope with epsilon={epsilon!r}"


def check_gsdm_gradients(trials: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        omega = rng.uniform(0.2, 1.5, (4, 5))
        t_maps = [{"t1": Tensor(rng.uniform(0.1, 1, (4, 4, 4))), "t2": Tensor(rng.uniform(0.1, 1, (4, 2, 2)))}]
        inputs = {"s1": Tensor(rng.uniform(0.1, 1, (4, 3, 3, 3)), requires_grad=True),
                  "s2": Tensor(rng.uniform(0.1, 1, (4, 3, 4, 4)), requires_grad=True)}

        def program(p):
            s_maps = {k: gsdm.saliency_map(omega, v) for k, v in p.items()}
            return gsdm.gsdm_loss(t_maps, s_maps, (("t1", "s1"), ("t2", "s2")))

        worst = max(worst, finite_diff_check(program, inputs).worst)
    return worst <= GRAD_TOL, f"max rel err {worst:.2e}"


def check_loss_gradients(trials: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        labels = rng.integers(0, 4, 5)
        t_logits = [rng.standard_normal((5, 4)) for _ in range(2)]
        t_feats = [rng.standard_normal((5, 6)) for _ in range(2)]
        programs = {
            "ce": (lambda p: cross_entropy(p["z"], labels)),
            "st": (lambda p: soft_target_kl(t_logits, p["z"], 4.0)),
            "sp": (lambda p: semantic_preserving(p["f"], t_feats)),
            "total": (lambda p: student_total(cross_entropy(p["z"], labels), soft_target_kl(t_logits, p["z"], 4.0),
                                              Tensor(0.3), semantic_preserving(p["f"], t_feats),
                                              LossWeights())[0]),
        }
        for program in programs.values():
            inputs = {"z": Tensor(rng.standard_normal((5, 4)), requires_grad=True),
                      "f": Tensor(rng.standard_normal((5, 6)), requires_grad=True)}
            worst = max(worst, finite_diff_check(program, inputs).worst)
    return worst <= GRAD_TOL, f"max rel err {worst:.2e}"


# (alpha, beta, gamma) with the total for ce, st, gsdm, sp = 1, 2, 3, 4
WEIGHT_SETS = (((0.1, 0.1, 1.0), 5.5), ((0.1, 1.0, 1.0), 8.2))


def check_loss_fixed_points(seed: int = 0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((4, 3))
    f = rng.standard_normal((4, 6))
    maps = {"a": Tensor(rng.uniform(0, 1, (4, 3, 3)))}
    kl = soft_target_kl([z], Tensor(z), 4.0).item()
    sp = semantic_preserving(Tensor(f), [f]).item()
    same = gsdm.gsdm_loss([maps], maps, (("a", "a"),)).item()
    e = np.zeros((2, 2, 2))
    e[0, 0, 0] = e[1, 0, 0] = 1.0
    o = np.zeros((2, 2, 2))
    o[0, 1, 1] = o[1, 1, 0] = 1.0
    ortho = gsdm.gsdm_loss([{"a": Tensor(e)}], {"a": Tensor(o)}, (("a", "a"),)).item()
    ok = abs(kl) <= 1e-12 and sp == 0.0 and abs(same) <= 1e-12 and abs(ortho - 2.0) <= 1e-12
    totals = []
    for (a, b, g), expected in WEIGHT_SETS:
        _, rep = student_total(Tensor(1.0), Tensor(2.0), Tensor(3.0), Tensor(4.0), LossWeights(a, b, g))
        ok = ok and rep.total == 1.0 + a * 2.0 + b * 3.0 + g * 4.0 and abs(rep.total - expected) <= 1e-12
        totals.append(rep.total)
    return ok, (f"kl={kl:.1e} sp={sp:.1e} gsdm(same)={same:.1e} gsdm(orthonormal)={ortho!r} "
                f"weighted totals={totals}")


def _tiny_setup(seed: int = 0):
    spec = SyntheticTaskSpec(num_classes=2, samples_per_class=6, window=8, num_frames=2, frame_side=8,
                             seed=seed)
    ds = generate_synthetic(spec)
    encode_samples(ds.samples, 8)
    tcfg = TeacherConfig(channels=(2, 2, 2, 2, 2), side=8, hidden=4, embed_dim=5, num_classes=2)
    scfg = StudentConfig(channels=(2, 2, 2, 2, 4), side=8, num_frames=2, hidden=4, embed_dim=5, num_classes=2)
    table = pseudo_embed(ds.class_names, 5, seed)
    return ds, tcfg, scfg, table


def check_alignment(seed: int = 0):
    ds, *_ = _tiny_setup(seed)
    n = 0
    for train in (True, False):
        for batch in make_aligned_batches(ds.samples, 5, seed=seed, train=train, modalities=ds.modalities):
            ref = batch.ids
            for m in ds.modalities:
                if batch.modality_ids[m] != ref:
                    return False, f"modality {m} misaligned in batch {n}"
            n += 1
    return True, f"{n} batches aligned"


def check_teacher_freezing(seed: int = 0):
    from .config import Schedule
    from .training import DistillSettings, train_student

    ds, tcfg, scfg, table = _tiny_setup(seed)
    teachers = init_teachers(tcfg, seed)
    before = {k: v.data.copy() for k, v in teachers.items()}
    train_student(ds.train, init_student(scfg, seed), scfg, teachers, tcfg, Schedule(4, 0.01, 0.5, 10, 2),
                  table, ds.class_names, DistillSettings(), seed=seed)
    changed = [k for k, v in teachers.items() if not np.array_equal(v.data, before[k])]
    return not changed, f"{len(changed)} teacher tensors changed" if changed else "teacher tensors bit-identical"


def check_serialization(seed: int = 0):
    rng = np.random.default_rng(seed)
    for shape in ((), (3,), (2, 3, 4)):
        a = rng.standard_normal(shape)
        back = serialize.loads(serialize.dumps(Tensor(a)))
        if not np.array_equal(back.data, a) or back.shape != shape:
            return False, f"round trip changed a {shape} tensor"
    return True, "bit-exact round trips"


# ---------------------------------------------------------------------------

def checks(slope_epsilon: float = gsdm.DEFAULT_EPS) -> dict[str, Callable[[], tuple[bool, str]]]:
    return {
        "gaf_closed_form": check_gaf_oracle,
        "gaf_loop_reference": check_gaf_reference,
        "primitive_gradients": check_primitive_gradients,
        "spamfm_gradients": check_spamfm_gradients,
        "spamfm_brute_force": check_spamfm_brute_force,
        "gsdm_brute_force": check_gsdm_brute_force,
        "gsdm_gradients": check_gsdm_gradients,
        "slope_denominator_guard": lambda: check_slope_guard(slope_epsilon),
        "loss_gradients": check_loss_gradients,
        "loss_fixed_points": check_loss_fixed_points,
        "batch_alignment": check_alignment,
        "teacher_freezing": check_teacher_freezing,
        "tensor_serialization": check_serialization,
    }


def run_suite(slope_epsilon: float = gsdm.DEFAULT_EPS, only=None) -> SuiteReport:
    table = checks(slope_epsilon)
    unknown = sorted(set(only or ()) - set(table))
    if unknown:
        raise ConfigError(f"unknown check(s) {', '.join(unknown)}; known: {', '.join(table)}")
    results = []
    for name, fn in table.items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"
        results.append(CheckResult(name, bool(ok), detail, round(time.perf_counter() - t0, 3)))
    return SuiteReport(results)
