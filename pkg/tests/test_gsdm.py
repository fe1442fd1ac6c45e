import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from sakdn import gsdm, reference
from sakdn.embeddings import pseudo_embed
from sakdn.tensor import Tensor, finite_diff_check
from sakdn.verify import BRUTE_TOL, GRAD_TOL, check_gsdm_gradients, check_slope_guard, random_gsdm_case

NAMES = ["jump", "walk", "wave", "sit down"]


def test_ablation_batch():
    b = np.ones((2, 3, 4, 4))
    out = gsdm.build_ablation_batch(b)
    assert out.shape == (4, 3, 4, 4) and not out[2:].any() and np.array_equal(out[:2], b)
    assert not gsdm.build_ablation_batch(np.zeros((3, 1, 2, 2))).any()
    with pytest.raises(ValueError):
        gsdm.build_ablation_batch(np.ones((1, 3)))


def test_embed_predictions():
    table = pseudo_embed(NAMES, 8, seed=0)
    onehot = np.eye(4)[[0, 2]]
    np.testing.assert_array_equal(gsdm.embed_predictions(onehot, NAMES, table),
                                  np.stack([table["jump"], table["wave"]]))
    tied = np.array([[1.0, 0.0, 0.0, 1.0]])
    np.testing.assert_array_equal(gsdm.embed_predictions(tied, NAMES, table)[0], table["jump"])
    same = gsdm.embed_predictions(np.tile([0.1, 0.5, 0.2, 0.0], (3, 1)), NAMES, table)
    assert np.array_equal(same[0], same[1]) and np.array_equal(same[1], same[2])


def test_graph_examples():
    g = gsdm.graph_normalize(np.ones((2, 3)))
    assert np.array_equal(g.affinity, np.ones((2, 2))) and np.array_equal(g.degree, [2.0, 2.0])
    assert np.array_equal(g.q, np.ones((2, 2)))
    f = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert gsdm.graph_normalize(f).affinity[0, 1] == pytest.approx(np.exp(-1.0), abs=1e-15)
    assert np.exp(-1.0) == pytest.approx(0.367879, abs=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_graph_invariants(seed):
    f = np.random.default_rng(seed).standard_normal((5, 3))
    g = gsdm.graph_normalize(f)
    assert np.array_equal(g.affinity, g.affinity.T) and np.all(np.diag(g.affinity) == 1.0)
    assert g.affinity.min() > 0 and g.affinity.max() <= 1
    d = g.degree
    brute = np.array([[np.sqrt(d[i] / d[j]) * g.affinity[i, j] for j in range(5)] for i in range(5)])
    assert np.abs(g.q - brute).max() <= 1e-12
    sym = gsdm.graph_normalize(f, "symmetric").q
    assert np.array_equal(sym, sym.T)


def test_paper_normalization_is_asymmetric():
    f = np.array([[0.0, 0.0], [0.3, 0.0], [2.5, 1.0], [0.1, 0.4]])
    q = gsdm.graph_normalize(f).q
    assert not np.allclose(q, q.T)


def test_slope_examples(rng):
    q = gsdm.graph_normalize(rng.standard_normal((4, 3))).q
    f = rng.standard_normal((4, 5))
    assert not gsdm.slope_metric(q, f, q, f).any()
    omega = gsdm.slope_metric(q, f, q, np.zeros_like(f))
    np.testing.assert_array_equal(omega, np.ones_like(f))
    guarded = gsdm.slope_metric(np.eye(1), np.zeros((1, 1)), np.eye(1), -np.ones((1, 1)))
    assert guarded[0, 0] == pytest.approx(1e8)


def test_slope_guard_check_and_fault_injection():
    assert check_slope_guard()[0]
    assert not check_slope_guard(0.0)[0]


def test_saliency_examples(rng):
    a = rng.standard_normal((2, 3, 4, 4))
    assert not gsdm.saliency_map(np.zeros((2, 5)), Tensor(a)).data.any()
    neg = -np.abs(a)
    assert not gsdm.saliency_map(np.ones((2, 5)), Tensor(neg)).data.any()
    pos = np.abs(a)
    assert not gsdm.saliency_map(-np.ones((2, 5)), Tensor(pos)).data.any()
    np.testing.assert_allclose(gsdm.saliency_map(np.ones((2, 5)), Tensor(pos)).data, pos.sum(axis=1),
                               rtol=0, atol=1e-15)


@given(st.integers(0, 2**31 - 1))
def test_saliency_nonnegative(seed):
    rng = np.random.default_rng(seed)
    m = gsdm.saliency_map(rng.standard_normal((3, 4)), Tensor(rng.standard_normal((3, 2, 3, 3))))
    assert m.data.min() >= 0


@pytest.mark.parametrize("mode", ["paper", "symmetric"])
def test_brute_force_equivalence(mode, rng):
    f, f_a, feat, feat_a, acts = random_gsdm_case(rng)
    q = gsdm.graph_normalize(feat, mode).q
    q_a = gsdm.graph_normalize(feat_a, mode).q
    assert np.abs(q - reference.graph_q(feat, mode)).max() <= BRUTE_TOL
    omega = gsdm.slope_metric(q, f, q_a, f_a)
    ref = reference.slope(reference.graph_q(feat, mode), f, reference.graph_q(feat_a, mode), f_a, gsdm.DEFAULT_EPS)
    assert np.abs(omega - ref).max() <= BRUTE_TOL * max(1.0, np.abs(ref).max())
    m = gsdm.saliency_map(omega, Tensor(acts)).data
    assert np.abs(m - reference.saliency(ref, acts)).max() <= BRUTE_TOL


def test_permutation_equivariance(rng):
    f, f_a, feat, feat_a, acts = random_gsdm_case(rng)
    perm = np.array([3, 1, 0, 2])

    def run(idx):
        q = gsdm.graph_normalize(feat[idx]).q
        q_a = gsdm.graph_normalize(feat_a[idx]).q
        omega = gsdm.slope_metric(q, f[idx], q_a, f_a[idx])
        return omega, gsdm.saliency_map(omega, Tensor(acts[idx])).data

    o, m = run(np.arange(4))
    o_p, m_p = run(perm)
    np.testing.assert_allclose(o_p, o[perm], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(m_p, m[perm], rtol=1e-12, atol=1e-12)


def test_loss_examples(rng):
    m = {"a": Tensor(rng.uniform(0, 1, (3, 4, 4)))}
    assert gsdm.gsdm_loss([m], m, [("a", "a")]).item() == 0.0
    e = np.zeros((1, 2, 1))
    e[0, 0, 0] = 1
    o = np.zeros((1, 2, 1))
    o[0, 1, 0] = 1
    assert gsdm.gsdm_loss([{"a": Tensor(e)}], {"a": Tensor(o)}, [("a", "a")]).item() == 2.0
    t = rng.uniform(0, 1, (3, 4, 4))
    s = {"a": Tensor(rng.uniform(0, 1, (3, 4, 4)))}
    l1 = gsdm.gsdm_loss([{"a": Tensor(t)}], s, [("a", "a")]).item()
    l2 = gsdm.gsdm_loss([{"a": Tensor(2 * t)}], s, [("a", "a")]).item()
    assert abs(l1 - l2) <= 1e-12
    with pytest.raises(ValueError):
        gsdm.gsdm_loss([m], m, [])


def test_zero_map_policy():
    z = {"a": Tensor(np.zeros((2, 3, 3)))}
    nz = {"a": Tensor(np.ones((2, 3, 3)))}
    assert gsdm.gsdm_loss([z], nz, [("a", "a")]).item() == pytest.approx(1.0, abs=1e-12)
    assert gsdm.gsdm_loss([z], z, [("a", "a")]).item() == 0.0


def test_pair_resizes_to_smaller_grid(rng):
    t = {"t": Tensor(np.ones((2, 4, 4)))}
    s = {"s": Tensor(np.ones((2, 2, 2)))}
    assert gsdm.gsdm_loss([t], s, [("t", "s")]).item() == pytest.approx(0.0, abs=1e-15)


def test_loss_gradient_wrt_student_activations():
    assert check_gsdm_gradients(trials=2, seed=5)[0]


def test_saliency_gradient_flows_through_activations(rng):
    omega = rng.uniform(0.5, 1.0, (2, 3))
    a = Tensor(rng.uniform(0.2, 1.0, (2, 2, 3, 3)), requires_grad=True)
    t = {"a": Tensor(rng.uniform(0.1, 1.0, (2, 3, 3)))}
    rep = finite_diff_check(lambda p: gsdm.gsdm_loss([t], {"a": gsdm.saliency_map(omega, p["a"])}, [("a", "a")]),
                            {"a": a})
    assert rep.worst <= GRAD_TOL


def test_explain_uses_predictions_or_labels(rng):
    table = pseudo_embed(NAMES, 6, seed=1)
    taps = {"t1": Tensor(rng.uniform(0, 1, (4, 2, 3, 3)))}
    feats, feats_a = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
    logits, logits_a = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    pred = gsdm.explain(taps, feats, logits, feats_a, logits_a, NAMES, table)
    labels = np.argmax(logits, axis=1)
    lab = gsdm.explain(taps, feats, logits, feats_a, logits_a, NAMES, table, labels=labels)
    assert np.array_equal(pred["t1"].data, lab["t1"].data)
    assert pred["t1"].shape == (4, 3, 3)


def test_export_saliency(tmp_path, rng):
    maps = {"s1": rng.uniform(0, 2, (2, 4, 4)), "s2": np.zeros((2, 2, 2))}
    paths = gsdm.export_saliency(maps, ["a", "b"], "test", tmp_path)
    assert len(paths) == 4
    with Image.open(tmp_path / "test" / "a" / "s1.pgm") as im:
        arr = np.asarray(im)
    assert arr.min() == 0 and arr.max() == 255 and arr.shape == (4, 4)
    with Image.open(tmp_path / "test" / "b" / "s2.pgm") as im:
        assert not np.asarray(im).any()
