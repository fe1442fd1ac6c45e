import numpy as np
import pytest

from sakdn.embeddings import load_vectors, pseudo_embed
from sakdn.errors import EmbeddingError


def test_pseudo_embed_properties():
    a = pseudo_embed(["jump", "walk"], 300, seed=2)
    b = pseudo_embed(["walk"], 300, seed=2)
    assert np.array_equal(a["walk"], b["walk"])
    assert not np.array_equal(a["jump"], a["walk"])
    for v in a.vectors.values():
        assert abs(np.linalg.norm(v) - 1) <= 1e-12
    assert not np.array_equal(a["jump"], pseudo_embed(["jump"], 300, seed=3)["jump"])
    with pytest.raises(ValueError):
        pseudo_embed(["a", "a"], 4)
    with pytest.raises(ValueError):
        pseudo_embed(["a"], 1)


def test_load_vectors(tmp_path):
    p = tmp_path / "vec.txt"
    p.write_text("sit 1 2 3\ndown 3 4 5\njump 0 0 1\nthe 9 9 9\n")
    t = load_vectors(p, ["jump", "sit down"])
    assert t.dim == 3
    np.testing.assert_array_equal(t["jump"], [0, 0, 1])
    np.testing.assert_array_equal(t["sit down"], [2, 3, 4])
    with pytest.raises(EmbeddingError, match="wave"):
        load_vectors(p, ["wave"])
    with pytest.raises(EmbeddingError):
        t["missing"]


def test_export_round_trip(tmp_path):
    names = ["jump", "sit down"]
    t = pseudo_embed(names, 16, seed=5)
    t.export(tmp_path / "v.txt")
    back = load_vectors(tmp_path / "v.txt", names)
    for n in names:
        assert np.array_equal(back[n], t[n])
