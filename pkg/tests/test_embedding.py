import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from headrec import geometry as G
from headrec.embedding import (EmbeddingFormatError, EmbeddingTable, embed_batch,
                               embed_document, load_table)


def write_table(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadTable:
    def test_three_tokens(self, tmp_path):
        p = write_table(tmp_path / "v.txt", ["a 1 0 0 0", "b 0 1 0 0", "c 0 0 1 0.5"])
        t = load_table(p)
        assert len(t) == 3
        assert t.dim == 4
        np.testing.assert_array_equal(t.row("c"), [0, 0, 1, 0.5])

    def test_unknown_token_is_zero_row(self, tmp_path):
        t = load_table(write_table(tmp_path / "v.txt", ["a 1 2"]))
        np.testing.assert_array_equal(t.row("zzz"), [0.0, 0.0])
        assert t.ids(["zzz", "a"], 3).tolist() == [0, 1, 0]

    def test_inconsistent_dimension(self, tmp_path):
        with pytest.raises(EmbeddingFormatError):
            load_table(write_table(tmp_path / "v.txt", ["a 1 2", "b 1 2 3"]))

    def test_non_numeric(self, tmp_path):
        with pytest.raises(EmbeddingFormatError):
            load_table(write_table(tmp_path / "v.txt", ["a 1 x"]))

    def test_poincare_clamp(self, tmp_path):
        t = load_table(write_table(tmp_path / "v.txt", ["a 1.2 0", "b 0.3 0.4"]), "poincare")
        assert t.rescaled == 1
        assert np.linalg.norm(t.row("a")) == pytest.approx(0.999)
        np.testing.assert_allclose(t.row("b"), [0.3, 0.4])

    def test_unknown_geometry(self):
        with pytest.raises(ValueError):
            EmbeddingTable.from_rows(["a"], [[1.0]], geometry="spherical")

    def test_non_finite_rows(self):
        with pytest.raises(EmbeddingFormatError):
            EmbeddingTable.from_rows(["a"], [[np.nan]])


class TestEmbedDocument:
    TABLE = EmbeddingTable.from_rows(["one", "two"], [[1.0, 0.0, 0.0], [0.0, 0.3, -0.4]])

    def test_all_oov_gives_origin(self):
        doc = embed_document(["x", "y"], self.TABLE, 5)
        assert doc.length == 5
        np.testing.assert_array_equal(doc.hyperbolic, np.tile(G.origin(3), (5, 1)))

    def test_unit_row(self):
        doc = embed_document(["one"], self.TABLE, 1)
        np.testing.assert_allclose(doc.hyperbolic[0], [np.cosh(1), np.sinh(1), 0, 0], atol=1e-12)

    def test_rows_on_manifold_and_round_trip(self):
        doc = embed_document(["one", "two", "nope", "two"], self.TABLE, 6)
        assert np.max(np.abs(G.lorentz_inner(doc.hyperbolic, doc.hyperbolic) + 1)) < 1e-6
        np.testing.assert_allclose(G.unlift(doc.hyperbolic), doc.euclidean, atol=1e-6)

    def test_padding_and_truncation(self):
        assert embed_document(["one"] * 9, self.TABLE, 4).length == 4
        doc = embed_document(["two"], self.TABLE, 3)
        np.testing.assert_array_equal(doc.euclidean[1:], 0.0)

    def test_batch_matches_single(self):
        ids = np.array([[1, 2, 0], [2, 2, 1]])
        out = embed_batch(ids, self.TABLE)
        assert out.shape == (2, 3, 4)
        np.testing.assert_array_equal(out[1, 0], self.TABLE.hyperbolic[2])

    def test_cached_tangent_matches_matrix(self):
        np.testing.assert_allclose(self.TABLE.tangent, self.TABLE.matrix, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-2, 2)))
def test_lift_round_trip_property(rows):
    t = EmbeddingTable.from_rows([f"w{k}" for k in range(4)], rows)
    np.testing.assert_allclose(t.tangent[1:], rows, atol=1e-6)


def test_synthetic_is_seeded():
    a = EmbeddingTable.synthetic(["a", "b"], dim=3, seed=5)
    b = EmbeddingTable.synthetic(["a", "b"], dim=3, seed=5)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert a.vocab == {"a": 1, "b": 2}
