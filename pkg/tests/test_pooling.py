import numpy as np
import pytest

from coocpool.cooccurrence import cooc_conv, channel_cooc_vector, make_filter
from coocpool.errors import DegenerateDescriptorWarning, DimensionError, DomainError
from coocpool.pooling import (
    bilinear_pool,
    channel_cooc_weights,
    compact_bilinear_pool,
    linear_weighted_pool,
    make_sketch_params,
    masked_tensor,
    spatial_cooc_weights,
    spatial_mask_center,
    spatial_mask_topdown,
    sum_pool,
    write_heatmap_csv,
    write_heatmap_pgm,
)


@pytest.fixture
def worked_cooc(worked_pair_tensor):
    return cooc_conv(worked_pair_tensor, make_filter(2, 1, 0.0), 4.0)


class TestSpatialWeights:
    def test_worked_values(self, worked_cooc):
        alpha = spatial_cooc_weights(worked_cooc, 2.0, 2.0)
        np.testing.assert_allclose(alpha.reshape(-1), [0.7173, 0.9261], atol=1e-4)

    def test_single_nonzero_cell(self):
        cooc = np.zeros((2, 2, 3))
        cooc[1, 0, 2] = 4.0
        alpha = spatial_cooc_weights(cooc, 2.0, 2.0)
        assert alpha[1, 0] == pytest.approx(1.0)
        assert alpha.sum() == pytest.approx(1.0)

    def test_plain_normalization(self, rng):
        cooc = rng.random((3, 4, 2))
        spatial = cooc.sum(axis=2)
        alpha = spatial_cooc_weights(cooc, 1.0, 1.0)
        np.testing.assert_allclose(alpha, spatial / spatial.sum())

    def test_formula_self_consistency_under_scaling(self, rng):
        cooc = rng.random((4, 5, 3))
        for lam in (0.25, 1.0, 7.5):
            scaled = lam * cooc
            spatial = scaled.sum(axis=2)
            direct = (spatial / (np.sum(spatial**2) ** 0.5)) ** 0.5
            np.testing.assert_allclose(spatial_cooc_weights(scaled, 2.0, 2.0), direct)

    def test_rank_order_follows_mass(self, rng):
        cooc = rng.random((4, 5, 3))
        spatial = cooc.sum(axis=2)
        alpha = spatial_cooc_weights(cooc, 2.0, 2.0)
        assert np.array_equal(
            np.argsort(spatial, axis=None), np.argsort(alpha, axis=None)
        )

    def test_all_zero_warns(self):
        with pytest.warns(DegenerateDescriptorWarning):
            alpha = spatial_cooc_weights(np.zeros((2, 2, 2)), 2.0, 2.0)
        assert np.all(alpha == 0)

    def test_bad_exponents(self, rng):
        with pytest.raises(DomainError):
            spatial_cooc_weights(rng.random((2, 2, 2)), 0.0, 2.0)


class TestChannelWeights:
    def test_worked_values(self):
        beta = channel_cooc_weights(np.array([6.0, 10.0]), 1e-12)
        np.testing.assert_allclose(beta, [np.log(16 / 6), np.log(16 / 10)], atol=1e-9)
        np.testing.assert_allclose(beta, [0.9808, 0.4700], atol=1e-4)

    def test_uniform_gives_log_depth(self):
        beta = channel_cooc_weights(np.full(8, 3.0), 1e-12)
        np.testing.assert_allclose(beta, np.log(8), atol=1e-9)

    def test_zero_channel_guarded_by_eps(self):
        beta = channel_cooc_weights(np.array([0.0, 2.0]), 1e-6)
        assert beta[0] == pytest.approx(np.log(2.0 / 1e-6))
        assert np.isfinite(beta).all()

    def test_zero_total_warns(self):
        with pytest.warns(DegenerateDescriptorWarning):
            beta = channel_cooc_weights(np.zeros(4), 1e-6)
        assert np.all(beta == 0)


class TestSpatialMasks:
    def test_topdown_ramp(self):
        mask = spatial_mask_topdown(4, 2)
        np.testing.assert_allclose(mask[:, 0], [1.0, 0.75, 0.5, 0.25])
        np.testing.assert_allclose(mask[:, 1], mask[:, 0])

    def test_topdown_single_row(self):
        np.testing.assert_allclose(spatial_mask_topdown(1, 3), np.ones((1, 3)))

    def test_topdown_monotone(self):
        for m in (2, 5, 9):
            mask = spatial_mask_topdown(m, 1)
            assert np.all(np.diff(mask[:, 0]) < 0)

    def test_center_peak_is_one(self):
        mask = spatial_mask_center(5, 7)
        assert mask[2, 3] == pytest.approx(1.0)

    def test_center_symmetry(self):
        mask = spatial_mask_center(6, 4)
        np.testing.assert_allclose(mask, mask[::-1, :])
        np.testing.assert_allclose(mask, mask[:, ::-1])

    def test_center_corner_value(self):
        mask = spatial_mask_center(3, 3)  # sigma = 1
        assert mask[0, 0] == pytest.approx(np.exp(-1.0))
        assert mask[1, 1] == pytest.approx(1.0)

    def test_masked_tensor(self, rng):
        tensor = np.ones((4, 1, 1))
        out = masked_tensor(tensor, spatial_mask_topdown(4, 1))
        np.testing.assert_allclose(out.reshape(-1), [1.0, 0.75, 0.5, 0.25])
        free = rng.random((3, 2, 4))
        np.testing.assert_array_equal(masked_tensor(free, np.ones((3, 2))), free)
        assert np.all(masked_tensor(free, np.zeros((3, 2))) == 0)

    def test_masked_tensor_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            masked_tensor(rng.random((3, 2, 4)), np.ones((2, 3)))


class TestLinearPooling:
    def test_reduces_to_sum_pool(self, rng):
        tensor = rng.random((3, 4, 5))
        alpha = np.full((3, 4), 1.0 / 12)
        beta = np.ones(5)
        np.testing.assert_allclose(
            linear_weighted_pool(tensor, alpha, beta), sum_pool(tensor)
        )

    def test_worked_chain(self, worked_pair_tensor, worked_cooc):
        alpha = spatial_cooc_weights(worked_cooc, 2.0, 2.0)
        beta = channel_cooc_weights(channel_cooc_vector(worked_cooc), 1e-12)
        desc = linear_weighted_pool(worked_pair_tensor, alpha, beta)
        np.testing.assert_allclose(desc, [7.035, 2.611], atol=1e-3)

    def test_zero_tensor(self):
        desc = linear_weighted_pool(np.zeros((2, 2, 3)), np.ones((2, 2)), np.ones(3))
        assert np.all(desc == 0)

    def test_linear_in_activations(self, rng):
        a1, a2 = rng.random((3, 3, 4)), rng.random((3, 3, 4))
        alpha, beta = rng.random((3, 3)), rng.random(4)
        mask = rng.random((3, 3))
        np.testing.assert_allclose(
            linear_weighted_pool(a1 + a2, alpha, beta, mask),
            linear_weighted_pool(a1, alpha, beta, mask)
            + linear_weighted_pool(a2, alpha, beta, mask),
        )

    def test_sum_pool_values(self, worked_pair_tensor):
        np.testing.assert_allclose(sum_pool(worked_pair_tensor), [5.0, 3.0])
        np.testing.assert_allclose(sum_pool(np.full((2, 3, 4), 2.5)), np.full(4, 2.5))

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            linear_weighted_pool(rng.random((3, 3, 4)), np.ones((2, 3)), np.ones(4))


class TestBilinear:
    def test_single_outer_product(self):
        a = np.array([1.0, 2.0]).reshape(1, 1, 2)
        c = np.array([3.0, 4.0]).reshape(1, 1, 2)
        np.testing.assert_allclose(bilinear_pool(a, c), [[3, 4], [6, 8]])

    def test_zero_cooc(self, rng):
        out = bilinear_pool(rng.random((3, 3, 4)), np.zeros((3, 3, 4)))
        assert np.all(out == 0)

    def test_self_pool_symmetric_psd(self, rng):
        tensor = rng.random((4, 5, 6))
        gram = bilinear_pool(tensor, tensor)
        np.testing.assert_allclose(gram, gram.T, atol=1e-6)
        eigenvalues = np.linalg.eigvalsh(gram)
        assert eigenvalues.min() > -1e-6

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            bilinear_pool(rng.random((3, 3, 4)), rng.random((3, 3, 5)))


class TestCompactBilinear:
    def test_deterministic_params(self):
        a = make_sketch_params(16, 64, seed=123)
        b = make_sketch_params(16, 64, seed=123)
        for field in ("h1", "s1", "h2", "s2"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
        c = make_sketch_params(16, 64, seed=124)
        assert any(
            not np.array_equal(getattr(a, f), getattr(c, f)) for f in ("h1", "h2")
        )

    def test_deterministic_descriptor(self, rng):
        tensor, cooc = rng.random((3, 3, 8)), rng.random((3, 3, 8))
        p = make_sketch_params(8, 32, seed=5)
        one = compact_bilinear_pool(tensor, cooc, p)
        two = compact_bilinear_pool(tensor, cooc, make_sketch_params(8, 32, seed=5))
        assert np.array_equal(one, two)

    def test_degenerate_sketch_exact(self, rng):
        tensor, cooc = rng.random((4, 3, 1)), rng.random((4, 3, 1))
        p = make_sketch_params(1, 1, seed=0)
        desc = compact_bilinear_pool(tensor, cooc, p)
        expected = p.s1[0] * p.s2[0] * np.sum(tensor[:, :, 0] * cooc[:, :, 0])
        np.testing.assert_allclose(desc, [expected])

    def test_zero_cooc_gives_zero(self, rng):
        p = make_sketch_params(4, 16, seed=1)
        desc = compact_bilinear_pool(rng.random((3, 3, 4)), np.zeros((3, 3, 4)), p)
        np.testing.assert_allclose(desc, 0, atol=1e-12)

    def test_fft_and_direct_agree(self, rng):
        tensor, cooc = rng.random((3, 4, 6)), rng.random((3, 4, 6))
        p = make_sketch_params(6, 24, seed=9)
        fft = compact_bilinear_pool(tensor, cooc, p, method="fft")
        direct = compact_bilinear_pool(tensor, cooc, p, method="direct")
        np.testing.assert_allclose(fft, direct, rtol=1e-4, atol=1e-10)

    def test_mask_scales_first_branch(self, rng):
        tensor, cooc = rng.random((3, 3, 4)), rng.random((3, 3, 4))
        mask = rng.random((3, 3))
        p = make_sketch_params(4, 16, seed=2)
        with_mask = compact_bilinear_pool(tensor, cooc, p, mask=mask)
        pre_masked = compact_bilinear_pool(masked_tensor(tensor, mask), cooc, p)
        np.testing.assert_allclose(with_mask, pre_masked)

    def test_inner_products_track_exact_bilinear(self, rng):
        """Sketched inner products correlate with exact bilinear inner
        products; the full-size criterion lives in the acceptance suite."""
        pairs = []
        for _ in range(40):
            t, c = rng.random((4, 4, 16)), rng.random((4, 4, 16))
            pairs.append((t, c, bilinear_pool(t, c).reshape(-1)))
        p = make_sketch_params(16, 512, seed=11)
        sketches = [compact_bilinear_pool(t, c, p) for t, c, _ in pairs]
        exact, approx = [], []
        for i in range(0, 40, 2):
            exact.append(float(pairs[i][2] @ pairs[i + 1][2]))
            approx.append(float(sketches[i] @ sketches[i + 1]))
        assert np.corrcoef(exact, approx)[0, 1] > 0.95

    def test_depth_mismatch(self, rng):
        with pytest.raises(DimensionError):
            compact_bilinear_pool(
                rng.random((2, 2, 3)), rng.random((2, 2, 3)), make_sketch_params(4, 8, 0)
            )


class TestHeatmapExport:
    def test_csv_roundtrip(self, tmp_path, rng):
        weights = rng.random((3, 4))
        path = tmp_path / "w.csv"
        write_heatmap_csv(weights, path)
        np.testing.assert_allclose(np.loadtxt(path, delimiter=","), weights, rtol=1e-6)

    def test_pgm_header_and_scaling(self, tmp_path):
        weights = np.array([[0.0, 0.5], [0.25, 1.0]])
        path = tmp_path / "w.pgm"
        write_heatmap_pgm(weights, path)
        data = path.read_bytes()
        assert data.startswith(b"P5\n2 2\n255\n")
        pixels = np.frombuffer(data[len(b"P5\n2 2\n255\n") :], dtype=np.uint8)
        np.testing.assert_array_equal(pixels, [0, 128, 64, 255])

    def test_pgm_constant_map(self, tmp_path):
        path = tmp_path / "c.pgm"
        write_heatmap_pgm(np.full((2, 2), 3.0), path)
        pixels = np.frombuffer(path.read_bytes()[-4:], dtype=np.uint8)
        np.testing.assert_array_equal(pixels, [0, 0, 0, 0])
