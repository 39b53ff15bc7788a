import numpy as np
import pytest

from coocpool.errors import DimensionError, DomainError
from coocpool.retrieval import (
    alpha_qe,
    average_qe,
    build_index,
    load_index,
    query,
    save_index,
)
from coocpool.tensors import l2norm


@pytest.fixture
def toy_index():
    return build_index([("a", np.array([1.0, 0.0])), ("b", np.array([0.0, 1.0]))])


class TestBuildIndex:
    def test_empty(self):
        index = build_index([])
        assert len(index) == 0

    def test_single(self):
        index = build_index([("only", np.array([2.0, 0.0]))])
        assert len(index) == 1
        np.testing.assert_allclose(index.matrix[0], [1.0, 0.0])

    def test_duplicate_id(self):
        with pytest.raises(DomainError):
            build_index([("x", np.ones(2)), ("x", np.ones(2))])

    def test_rows_normalized_order_kept(self, rng):
        entries = [(f"v{i}", rng.normal(size=4) * 3) for i in range(5)]
        index = build_index(entries)
        assert index.ids == [f"v{i}" for i in range(5)]
        np.testing.assert_allclose(np.linalg.norm(index.matrix, axis=1), 1.0, atol=1e-6)


class TestQuery:
    def test_exact_hit_first(self, toy_index):
        ranked = query(toy_index, np.array([1.0, 0.0]))
        assert ranked[0] == ("a", 0.0)

    def test_closed_form_distances(self, toy_index):
        ranked = query(toy_index, np.array([1.0, 0.0]))
        assert ranked[1][0] == "b"
        assert ranked[1][1] == pytest.approx(np.sqrt(2))

    def test_rotation_invariance(self, rng):
        entries = [(f"v{i}", l2norm(rng.normal(size=3))) for i in range(6)]
        q = l2norm(rng.normal(size=3))
        base = [key for key, _ in query(build_index(entries), q)]
        rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        rotated = build_index([(k, rotation @ v) for k, v in entries])
        assert [key for key, _ in query(rotated, rotation @ q)] == base

    def test_distance_equals_cosine_order(self, rng):
        entries = [(f"v{i}", l2norm(rng.normal(size=5))) for i in range(10)]
        index = build_index(entries)
        q = l2norm(rng.normal(size=5))
        by_distance = [key for key, _ in query(index, q)]
        sims = index.matrix @ q
        by_cosine = [index.ids[i] for i in np.argsort(-sims, kind="stable")]
        assert by_distance == by_cosine

    def test_tie_breaks_lexicographic(self):
        index = build_index(
            [("zed", np.array([0.0, 1.0])), ("abc", np.array([0.0, 1.0]))]
        )
        ranked = query(index, np.array([1.0, 0.0]))
        assert [key for key, _ in ranked] == ["abc", "zed"]

    def test_dim_mismatch(self, toy_index):
        with pytest.raises(DimensionError):
            query(toy_index, np.ones(3))


class TestAverageQE:
    def test_idempotent_on_self_hit(self, toy_index):
        q = np.array([1.0, 0.0])
        ranked = query(toy_index, q)
        np.testing.assert_allclose(average_qe(toy_index, q, ranked, 1), q, atol=1e-12)

    def test_closed_form(self, toy_index):
        q = np.array([1.0, 0.0])
        ranked = [("b", 0.1), ("a", 0.2)]  # force b as the top hit
        out = average_qe(toy_index, q, ranked, 1)
        np.testing.assert_allclose(out, [1 / np.sqrt(2), 1 / np.sqrt(2)])

    def test_full_index_mean(self, rng):
        entries = [(f"v{i}", l2norm(rng.normal(size=4))) for i in range(5)]
        index = build_index(entries)
        q = l2norm(rng.normal(size=4))
        ranked = query(index, q)
        out = average_qe(index, q, ranked, 5)
        expected = l2norm((q + index.matrix.sum(axis=0)) / 6)
        np.testing.assert_allclose(out, expected)

    def test_clamps_with_warning(self, toy_index):
        q = np.array([1.0, 0.0])
        ranked = query(toy_index, q)
        with pytest.warns(UserWarning):
            out = average_qe(toy_index, q, ranked, 10)
        assert np.linalg.norm(out) == pytest.approx(1.0)

    def test_unit_norm_and_permutation_invariance(self, rng):
        entries = [(f"v{i}", l2norm(rng.normal(size=6))) for i in range(8)]
        index = build_index(entries)
        q = l2norm(rng.normal(size=6))
        ranked = query(index, q)
        out = average_qe(index, q, ranked, 4)
        assert np.linalg.norm(out) == pytest.approx(1.0)
        shuffled = ranked[:4][::-1] + ranked[4:]
        np.testing.assert_allclose(
            average_qe(index, q, shuffled, 4), out, atol=1e-12
        )


class TestAlphaQE:
    def test_orthogonal_neighbors_return_query(self, toy_index):
        q = np.array([0.0, -1.0])  # orthogonal to a, opposite to b
        ranked = [("a", 1.0), ("b", 2.0)]
        out = alpha_qe(toy_index, q, ranked, 2, 3.0)
        np.testing.assert_allclose(out, q)

    def test_closed_form(self):
        x1 = np.array([1.0, 1.0]) / np.sqrt(2)
        index = build_index([("x", x1)])
        q = np.array([1.0, 0.0])
        out = alpha_qe(index, q, query(index, q), 1, 1.0)
        sim = 1 / np.sqrt(2)
        np.testing.assert_allclose(out, l2norm(q + sim * x1))

    def test_alpha_zero_matches_average_direction(self, rng):
        entries = [(f"v{i}", l2norm(rng.normal(size=5))) for i in range(7)]
        index = build_index(entries)
        q = l2norm(rng.normal(size=5))
        ranked = query(index, q)
        a = alpha_qe(index, q, ranked, 3, 0.0)
        b = average_qe(index, q, ranked, 3)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_negative_alpha_rejected(self, toy_index):
        with pytest.raises(DomainError):
            alpha_qe(toy_index, np.array([1.0, 0.0]), [("a", 0.0)], 1, -1.0)


class TestIndexSerialization:
    def test_roundtrip(self, tmp_path, rng):
        entries = [(f"image_{i:03d}", l2norm(rng.normal(size=4))) for i in range(9)]
        index = build_index(entries)
        path = tmp_path / "idx.cooi"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.ids == index.ids
        np.testing.assert_allclose(loaded.matrix, index.matrix, rtol=1e-6, atol=1e-7)

    def test_unicode_ids(self, tmp_path):
        index = build_index([("café", np.array([1.0, 0.0]))])
        path = tmp_path / "idx.cooi"
        save_index(index, path)
        assert load_index(path).ids == ["café"]
