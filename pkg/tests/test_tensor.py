import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sakdn.errors import NonFiniteError, RecordConsumedError, ShapeError
from sakdn.tensor import Tensor, backward, eval_graph, finite_diff_check, ops, rel_err, serialize
from sakdn.verify import PRIMITIVE_TOL, _primitive_programs


def grad_of(program, **inputs):
    ts = {k: Tensor(v, requires_grad=True) for k, v in inputs.items()}
    _, rec = eval_graph(ts, program)
    return backward(rec)


def test_forward_examples():
    assert ops.global_avg_pool(Tensor(np.arange(1.0, 5.0).reshape(1, 1, 2, 2))).data.item() == 2.5
    np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    np.testing.assert_allclose(ops.l2_normalize_rows(Tensor([[3.0, 4.0]])).data, [[0.6, 0.8]], rtol=0, atol=1e-15)


def test_backward_examples(rng):
    x = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(grad_of(lambda p: ops.sum(p["x"]), x=x)["x"], np.ones((3, 2)))
    g = grad_of(lambda p: ops.mul(p["x"], p["y"]), x=2.0, y=3.0)
    assert g["x"] == 3.0 and g["y"] == 2.0
    assert grad_of(lambda p: ops.relu(p["x"]), x=-1.0)["x"] == 0.0


def test_relu_subgradient_at_zero_is_zero():
    assert grad_of(lambda p: ops.sum(ops.relu(p["x"])), x=np.zeros(3))["x"].tolist() == [0.0, 0.0, 0.0]


def test_quadratic_gradcheck_is_tight():
    rep = finite_diff_check(lambda p: ops.mul(p["x"], p["x"]), {"x": Tensor(1.0, requires_grad=True)})
    assert rep.worst < 1e-6


def test_rel_err_floor():
    assert rel_err(0.0, 0.0) == 0.0
    assert rel_err(1e-9, 0.0) == pytest.approx(0.1)


@pytest.mark.parametrize("trial", range(10))
def test_every_primitive_passes_gradcheck(trial):
    for name, (inputs, program) in _primitive_programs(np.random.default_rng(100 + trial)).items():
        rep = finite_diff_check(program, inputs)
        assert rep.worst <= PRIMITIVE_TOL, name


def test_record_single_use():
    _, rec = eval_graph({"x": Tensor(2.0, requires_grad=True)}, lambda p: ops.mul(p["x"], p["x"]))
    backward(rec)
    with pytest.raises(RecordConsumedError):
        backward(rec)


def test_seed_shape_checked():
    _, rec = eval_graph({"x": Tensor(np.ones(3), requires_grad=True)}, lambda p: ops.mul(p["x"], 2.0))
    with pytest.raises(ShapeError):
        backward(rec)
    _, rec = eval_graph({"x": Tensor(np.ones(3), requires_grad=True)}, lambda p: ops.mul(p["x"], 2.0))
    with pytest.raises(ShapeError):
        backward(rec, seed=np.ones(2))


def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError, match="primitive"):
        eval_graph({"x": Tensor(0.0, requires_grad=True)}, lambda p: ops.div(1.0, p["x"]))


def test_tensors_are_immutable():
    t = Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        t.data[0] = 1.0


def test_replay_and_determinism(rng):
    x = rng.standard_normal((2, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))

    def program(p):
        return ops.sum(ops.square(ops.relu(ops.conv2d(p["x"], p["w"], stride=1, pad=1))))

    runs = []
    for _ in range(2):
        outs, rec = eval_graph({"x": Tensor(x, requires_grad=True), "w": Tensor(w, requires_grad=True)}, program)
        assert rec.replay()
        runs.append((outs["out"].data, backward(rec)))
    assert np.array_equal(runs[0][0], runs[1][0])
    for k in ("x", "w"):
        assert np.array_equal(runs[0][1][k], runs[1][1][k])


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((2, 2, 3, 3))
    out = ops.conv2d(Tensor(x), Tensor(w), stride=1, pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 2, 4, 4))
    for o in range(2):
        for i in range(4):
            for j in range(4):
                ref[0, o, i, j] = np.sum(xp[0, :, i:i + 3, j:j + 3] * w[o])
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_serialization_round_trip(a):
    back = serialize.loads(serialize.dumps(Tensor(a)))
    assert back.shape == a.shape and np.array_equal(back.data, a)


def test_serialization_layout():
    buf = serialize.dumps(Tensor(np.array([1.0, 2.0])))
    assert buf[:8] == b"SAKDTNSR"
    n = int.from_bytes(buf[8:12], "little")
    header = buf[12:12 + n].decode()
    assert '"shape"' in header and '"f64"' in header
    assert np.array_equal(np.frombuffer(buf[12 + n:], "<f8"), [1.0, 2.0])
