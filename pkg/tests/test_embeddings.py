import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from twinfuse.embeddings import (load_embeddings, manhattan_distance, pairwise_vector_scores,
                                 pca_fit, pca_from_dict, pca_project, pca_reconstruct,
                                 pca_to_dict, write_vector_table)
from twinfuse.errors import DataError

LINE = [(1, 1), (-1, -1), (2, 2), (-2, -2)]


class TestTable:
    def test_parse(self, tmp_path):
        rows = ["sample_id,f0,f1,f2,f3,f4"] + [f"s{i}," + ",".join(["0.5"] * 5) for i in range(3)]
        (tmp_path / "e.csv").write_text("\n".join(rows) + "\n")
        t = load_embeddings(tmp_path / "e.csv")
        assert len(t) == 3 and t.dim == 5
        np.testing.assert_array_equal(t["s1"], [0.5] * 5)

    def test_headerless(self, tmp_path):
        (tmp_path / "e.csv").write_text("a,1,2\nb,3,4\n")
        assert load_embeddings(tmp_path / "e.csv")["b"].tolist() == [3.0, 4.0]

    def test_duplicate(self, tmp_path):
        (tmp_path / "e.csv").write_text("a,1,2\na,3,4\n")
        with pytest.raises(DataError, match="duplicate-id"):
            load_embeddings(tmp_path / "e.csv")

    def test_ragged(self, tmp_path):
        (tmp_path / "e.csv").write_text("a,1,2,3,4,5\nb,1,2,3,4\n")
        with pytest.raises(DataError, match="ragged-row"):
            load_embeddings(tmp_path / "e.csv")

    def test_non_numeric(self, tmp_path):
        (tmp_path / "e.csv").write_text("a,1,x\n")
        with pytest.raises(DataError):
            load_embeddings(tmp_path / "e.csv")

    def test_round_trip(self, tmp_path):
        v = np.random.default_rng(0).normal(size=(4, 3))
        write_vector_table(tmp_path / "v.csv", list("wxyz"), v)
        t = load_embeddings(tmp_path / "v.csv")
        np.testing.assert_array_equal(np.stack([t[k] for k in "wxyz"]), v)


class TestPca:
    def test_line(self):
        m = pca_fit(LINE, k=2)
        np.testing.assert_allclose(m.components[0], [2 ** -0.5] * 2, atol=1e-9)
        assert abs(m.eigenvalues[1]) <= 1e-9
        assert m.eigenvalues[0] == pytest.approx(20 / 3)

    def test_one_dimensional(self):
        x = np.array([[1.0], [4.0], [2.0], [7.0]])
        m = pca_fit(x, k=1)
        np.testing.assert_array_equal(m.components, [[1.0]])
        assert m.eigenvalues[0] == pytest.approx(np.var(x, ddof=1))

    @pytest.mark.parametrize("k", [0, 3, 5])
    def test_k_out_of_range(self, k):
        with pytest.raises(DataError, match="k-out-of-range"):
            pca_fit(LINE, k=k)

    def test_too_few_vectors(self):
        with pytest.raises(DataError):
            pca_fit([[1.0, 2.0]])

    def test_zero_variance_allowed(self):
        m = pca_fit(np.ones((4, 3)), k=1)
        assert m.eigenvalues[0] == pytest.approx(0.0, abs=1e-12)

    def test_default_k_reaches_variance_target(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(40, 6)) * [10, 5, 1, 0.1, 0.1, 0.1]
        m = pca_fit(x)
        full = pca_fit(x, k=6)
        mass = np.cumsum(full.eigenvalues) / full.eigenvalues.sum()
        assert mass[m.k - 1] >= 0.95 and (m.k == 1 or mass[m.k - 2] < 0.95)

    def test_default_k_capped(self):
        x = np.random.default_rng(3).normal(size=(5, 20))
        assert pca_fit(x).k <= 4

    def test_project_mean(self):
        m = pca_fit(LINE, k=1)
        np.testing.assert_allclose(pca_project(m, m.mean), [0.0])

    def test_project_wrong_length(self):
        with pytest.raises(DataError):
            pca_project(pca_fit(LINE, k=1), [1.0, 2.0, 3.0])

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(6, 12), st.integers(1, 5)),
                  elements=st.floats(-100, 100)))
    def test_invariants(self, x):
        n, dim = x.shape
        if np.linalg.matrix_rank(x - x.mean(0)) < dim:
            return
        m = pca_fit(x, k=dim)
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(dim), atol=1e-9)
        assert (np.diff(m.eigenvalues) <= 1e-9 * max(1, m.eigenvalues[0])).all()
        assert m.eigenvalues.min() >= -1e-12 * max(1, m.eigenvalues[0])
        total = np.var(x, axis=0, ddof=1).sum()
        assert m.eigenvalues.sum() == pytest.approx(total, rel=1e-9, abs=1e-9)
        rec = pca_reconstruct(m, pca_project(m, x))
        np.testing.assert_allclose(rec, x, atol=1e-9 * max(1, np.abs(x).max()))
        for row in m.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_dict_round_trip(self):
        m = pca_fit(np.random.default_rng(1).normal(size=(8, 3)), k=2)
        back = pca_from_dict(pca_to_dict(m))
        np.testing.assert_array_equal(back.components, m.components)
        np.testing.assert_array_equal(back.mean, m.mean)


class TestManhattan:
    def test_example(self):
        assert manhattan_distance([1, 2, 3], [4, 2, 1]) == 5.0

    def test_identity(self):
        assert manhattan_distance([1.5, 2], [1.5, 2]) == 0.0

    def test_mismatch(self):
        with pytest.raises(DataError):
            manhattan_distance([1, 2], [1, 2, 3])

    def test_triangle_inequality(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a, b, c = rng.normal(size=(3, 8))
            assert manhattan_distance(a, c) <= manhattan_distance(a, b) + manhattan_distance(b, c)

    @given(arrays(np.float64, 5, elements=st.floats(-1e6, 1e6)),
           arrays(np.float64, 5, elements=st.floats(-1e6, 1e6)))
    def test_symmetric_nonnegative(self, a, b):
        assert manhattan_distance(a, b) == manhattan_distance(b, a) >= 0


class TestPairwise:
    @pytest.fixture
    def data(self):
        rng = np.random.default_rng(5)
        return rng.normal(size=(2, 4)), rng.normal(size=(6, 4)), ["a", "a", "b", "b", "c", "c"]

    def test_shape(self, data):
        assert pairwise_vector_scores(*data).shape == (2, 3)

    def test_exact_match(self, data):
        _, gallery, subjects = data
        m = pairwise_vector_scores([gallery[4]], gallery, subjects)
        assert m.values[0, 2] == 0.0

    def test_cells(self, data):
        probes, gallery, subjects = data
        m = pairwise_vector_scores(probes, gallery, subjects)
        for i, p in enumerate(probes):
            for j, s in enumerate(m.subject_ids):
                assert m.values[i, j] == min(manhattan_distance(p, g)
                                             for g, gs in zip(gallery, subjects) if gs == s)

    def test_take_permutation(self, data):
        probes, gallery, subjects = data
        order = [1, 0, 3, 2, 5, 4]
        a = pairwise_vector_scores(probes, gallery, subjects)
        b = pairwise_vector_scores(probes, gallery[order], [subjects[k] for k in order])
        np.testing.assert_array_equal(a.values, b.values)

    def test_empty(self, data):
        with pytest.raises(DataError):
            pairwise_vector_scores([], data[1], data[2])
