"""Mean-map features, convolutional weighted mean maps, tensor fusion, tables."""

import numpy as np
import pytest

from hsembed import (
    CapacityError,
    ContractViolation,
    EmbeddingConfig,
    HyperspectralImage,
    ParameterError,
    PatchSpec,
    PixelFeature,
    SceneSpec,
    ShapeError,
    augment_pixel,
    build_feature_table,
    conv_mean_map_feature,
    extract_patch,
    generate_synthetic_scene,
    load_feature_table,
    mean_map_feature,
    mean_map_kernel,
    median_heuristic,
    normalize_spectra,
    sample_frequencies,
    save_feature_table,
    tensor_product_features,
)
from hsembed.rff import feature, feature_matrix


@pytest.fixture(scope="module")
def fmap6():
    return sample_frequencies(6, 256, 1.1, seed=2)


class TestMeanMapFeature:
    def test_single_pixel_equals_point_feature(self, fmap6):
        v = np.random.default_rng(0).normal(size=6)
        mm = mean_map_feature(fmap6, v[None, :])
        np.testing.assert_array_equal(mm.values, feature_matrix(fmap6, v[None, :])[0])
        assert mm.kind == "meanmap"

    def test_repeated_spectrum_collapses(self, fmap6):
        v = np.random.default_rng(1).normal(size=6)
        patch = np.tile(v, (9, 1))
        mm = mean_map_feature(fmap6, patch)
        np.testing.assert_allclose(mm.values, feature(fmap6, v), atol=1e-14)

    def test_double_loop_oracle(self, fmap6):
        # dot of two mean features == (1/81) sum_ij z_i . z_j
        rng = np.random.default_rng(2)
        p, q = rng.normal(size=(9, 6)), rng.normal(size=(9, 6))
        a, b = mean_map_feature(fmap6, p), mean_map_feature(fmap6, q)
        zp, zq = feature_matrix(fmap6, p), feature_matrix(fmap6, q)
        brute = sum(float(zp[i] @ zq[j]) for i in range(9) for j in range(9)) / 81.0
        assert mean_map_kernel(a, b) == pytest.approx(brute, abs=1e-10)

    def test_empty_patch_rejected(self, fmap6):
        with pytest.raises(ContractViolation):
            mean_map_feature(fmap6, np.zeros((0, 6)))

    def test_norm_bounded_by_one(self, fmap6):
        rng = np.random.default_rng(3)
        for _ in range(10):
            mm = mean_map_feature(fmap6, rng.normal(size=(25, 6)))
            assert np.linalg.norm(mm.values) <= 1.0 + 1e-12


class TestMeanMapKernel:
    def test_self_kernel_single_pixel(self, fmap6):
        v = np.random.default_rng(4).normal(size=6)
        a = mean_map_feature(fmap6, v[None, :])
        assert mean_map_kernel(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self, fmap6):
        rng = np.random.default_rng(5)
        a = mean_map_feature(fmap6, rng.normal(size=(4, 6)))
        b = mean_map_feature(fmap6, rng.normal(size=(7, 6)))
        assert mean_map_kernel(a, b) == mean_map_kernel(b, a)

    def test_unequal_sample_sizes_oracle(self, fmap6):
        # n=4, m=7: dot == (1/(n m)) double sum
        rng = np.random.default_rng(6)
        p, q = rng.normal(size=(4, 6)), rng.normal(size=(7, 6))
        a, b = mean_map_feature(fmap6, p), mean_map_feature(fmap6, q)
        zp, zq = feature_matrix(fmap6, p), feature_matrix(fmap6, q)
        brute = sum(float(zp[i] @ zq[j]) for i in range(4) for j in range(7)) / 28.0
        assert mean_map_kernel(a, b) == pytest.approx(brute, abs=1e-10)

    def test_kind_and_dim_checks(self, fmap6):
        raw = PixelFeature(np.zeros(4), "raw")
        mm = mean_map_feature(fmap6, np.zeros((1, 6)))
        with pytest.raises(ContractViolation):
            mean_map_kernel(raw, mm)
        other = PixelFeature(np.zeros(8), "meanmap")
        with pytest.raises(ShapeError):
            mean_map_kernel(mm, other)


class TestAugmentPixel:
    def test_unit_bandwidths_concatenate(self):
        pos = np.array([3.0, 4.0])
        spec = np.array([0.6, 0.8])
        np.testing.assert_array_equal(
            augment_pixel(pos, spec, 1.0, 1.0), [3.0, 4.0, 0.6, 0.8]
        )

    def test_spectral_factor_closed_form(self):
        # same position, spectra sigma*sqrt(2) apart -> unit RBF gives e^-1
        sigma, beta = 0.7, 2.0
        u = np.zeros(4); u[0] = 1.0
        v = np.zeros(4); v[1] = 1.0
        # ||u - v|| = sqrt(2); rescale so the distance is sigma*sqrt(2)
        a = augment_pixel(np.array([5.0, 5.0]), sigma * u, beta, sigma)
        b = augment_pixel(np.array([5.0, 5.0]), sigma * v, beta, sigma)
        d2 = float(np.sum((a - b) ** 2))
        assert np.exp(-0.5 * d2) == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_spatial_factor_closed_form(self):
        sigma, beta = 0.7, 2.0
        spec = np.array([1.0, 0.0])
        a = augment_pixel(np.array([0.0, 0.0]), spec, beta, sigma)
        b = augment_pixel(np.array([beta, beta]), spec, beta, sigma)
        d2 = float(np.sum((a - b) ** 2))
        assert np.exp(-0.5 * d2) == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            augment_pixel(np.zeros(2), np.zeros(3), 0.0, 1.0)
        with pytest.raises(ShapeError):
            augment_pixel(np.zeros(3), np.zeros(3), 1.0, 1.0)


class TestConvMeanMap:
    def config(self, **kw):
        defaults = dict(sigma=0.8, beta=2.5, n_features=256, seed=3)
        defaults.update(kw)
        return EmbeddingConfig(**defaults)

    def test_zero_spectra_give_zero_vector(self):
        fmap = sample_frequencies(6, 32, 1.0, seed=1)
        out = conv_mean_map_feature(
            fmap, np.zeros((4, 4)), np.zeros((4, 2)), self.config()
        )
        np.testing.assert_array_equal(out.values, 0.0)
        assert out.kind == "convmeanmap"

    def test_single_unit_magnitude_pixel(self):
        fmap = sample_frequencies(5, 64, 1.0, seed=2)
        spec = np.zeros(3); spec[0] = 1.0
        out = conv_mean_map_feature(
            fmap, spec[None, :], np.array([[2.0, 3.0]]), self.config()
        )
        assert np.linalg.norm(out.values) == pytest.approx(1.0, abs=1e-12)

    def test_weighted_double_sum_oracle(self):
        cfg = self.config()
        fmap = sample_frequencies(8, 512, 1.0, seed=4)
        rng = np.random.default_rng(5)
        p, q = rng.normal(size=(9, 6)), rng.normal(size=(9, 6))
        pos_p = rng.integers(0, 30, size=(9, 2)).astype(float)
        pos_q = rng.integers(0, 30, size=(9, 2)).astype(float)
        a = conv_mean_map_feature(fmap, p, pos_p, cfg)
        b = conv_mean_map_feature(fmap, q, pos_q, cfg)

        def parts(s, pos):
            norms = np.linalg.norm(s, axis=1)
            unit = s / norms[:, None]
            aug = np.stack(
                [augment_pixel(pos[i], unit[i], cfg.beta, cfg.sigma) for i in range(len(s))]
            )
            return norms, feature_matrix(fmap, aug)

        np_, zp = parts(p, pos_p)
        nq_, zq = parts(q, pos_q)
        brute = sum(
            np_[i] * nq_[j] * float(zp[i] @ zq[j]) for i in range(9) for j in range(9)
        ) / 81.0
        assert float(a.values @ b.values) == pytest.approx(brute, abs=1e-10)

    def test_norm_bounded_by_max_weight(self):
        cfg = self.config()
        fmap = sample_frequencies(8, 128, 1.0, seed=6)
        rng = np.random.default_rng(7)
        s = rng.normal(size=(16, 6)) * 3.0
        pos = rng.integers(0, 10, size=(16, 2)).astype(float)
        out = conv_mean_map_feature(fmap, s, pos, cfg)
        assert np.linalg.norm(out.values) <= np.linalg.norm(s, axis=1).max() + 1e-12

    def test_factorization_against_closed_form(self):
        # inner products approximate magnitude * spatial RBF * spectral RBF
        cfg = self.config(sigma=0.9, beta=3.0)
        fmap = sample_frequencies(8, 8192, 1.0, seed=8)
        rng = np.random.default_rng(9)
        p, q = rng.normal(size=(9, 6)), rng.normal(size=(9, 6))
        pos_p = rng.integers(0, 12, size=(9, 2)).astype(float)
        pos_q = rng.integers(0, 12, size=(9, 2)).astype(float)
        a = conv_mean_map_feature(fmap, p, pos_p, cfg)
        b = conv_mean_map_feature(fmap, q, pos_q, cfg)
        np_ = np.linalg.norm(p, axis=1); nq_ = np.linalg.norm(q, axis=1)
        up, uq = p / np_[:, None], q / nq_[:, None]
        closed = sum(
            np_[i] * nq_[j]
            * np.exp(-np.sum((pos_p[i] - pos_q[j]) ** 2) / (2 * cfg.beta**2))
            * np.exp(-np.sum((up[i] - uq[j]) ** 2) / (2 * cfg.sigma**2))
            for i in range(9) for j in range(9)
        ) / 81.0
        assert float(a.values @ b.values) == pytest.approx(closed, abs=0.05)

    def test_requires_magnitude_weighting_and_resolved_scales(self):
        fmap = sample_frequencies(5, 16, 1.0, seed=0)
        with pytest.raises(ContractViolation):
            conv_mean_map_feature(
                fmap, np.ones((1, 3)), np.zeros((1, 2)),
                EmbeddingConfig(sigma=1.0, beta=1.0, weighting="uniform"),
            )
        with pytest.raises(ParameterError):
            conv_mean_map_feature(
                fmap, np.ones((1, 3)), np.zeros((1, 2)), EmbeddingConfig()
            )

    def test_input_dim_check(self):
        fmap = sample_frequencies(4, 16, 1.0, seed=0)
        with pytest.raises(ShapeError):
            conv_mean_map_feature(
                fmap, np.ones((1, 3)), np.zeros((1, 2)), self.config()
            )


class TestTensorProduct:
    def test_one_dim_identity_factor(self):
        u = PixelFeature(np.array([1.0]), "mp")
        v = PixelFeature(np.random.default_rng(1).normal(size=5), "meanmap")
        out = tensor_product_features(u, v)
        np.testing.assert_array_equal(out.values, v.values)
        assert out.kind == "tensor"

    def test_inner_product_factorizes(self):
        rng = np.random.default_rng(2)
        u, u2 = rng.normal(size=8), rng.normal(size=8)
        v, v2 = rng.normal(size=8), rng.normal(size=8)
        t1 = tensor_product_features(PixelFeature(u, "mp"), PixelFeature(v, "meanmap"))
        t2 = tensor_product_features(PixelFeature(u2, "mp"), PixelFeature(v2, "meanmap"))
        assert float(t1.values @ t2.values) == pytest.approx(
            float(u @ u2) * float(v @ v2), abs=1e-12
        )

    def test_norm_identity(self):
        rng = np.random.default_rng(3)
        u, v = rng.normal(size=6), rng.normal(size=9)
        t = tensor_product_features(PixelFeature(u, "mp"), PixelFeature(v, "meanmap"))
        assert np.linalg.norm(t.values) == pytest.approx(
            np.linalg.norm(u) * np.linalg.norm(v), abs=1e-12
        )

    def test_capacity_error_names_cap(self):
        u = PixelFeature(np.zeros(300), "mp")
        v = PixelFeature(np.zeros(300), "meanmap")
        with pytest.raises(CapacityError, match="65536"):
            tensor_product_features(u, v)


@pytest.fixture(scope="module")
def small_scene():
    rng = np.random.default_rng(20)
    spectra = rng.random((3, 5)) + 0.2
    spec = SceneSpec(10, 10, 5, 3, spectra, region_scale=4.0, noise_sigma=0.15, seed=20)
    return generate_synthetic_scene(spec)


class TestFeatureTable:
    def test_raw_rows_are_spectra(self, small_scene):
        image, _ = small_scene
        table = build_feature_table(image, "raw")
        np.testing.assert_array_equal(table.values, image.pixels())

    def test_meanmap_s1_equals_rff(self, small_scene):
        image, _ = small_scene
        cfg = EmbeddingConfig(patch=PatchSpec(1), n_features=64, seed=4)
        mm = build_feature_table(image, "meanmap", cfg)
        rf = build_feature_table(image, "rff", cfg)
        np.testing.assert_allclose(mm.values, rf.values, atol=1e-12)
        assert mm.kind == "meanmap"

    def test_meanmap_spot_check_against_patch_oracle(self, small_scene):
        image, _ = small_scene
        cfg = EmbeddingConfig(patch=PatchSpec(3), n_features=64, seed=4)
        table = build_feature_table(image, "meanmap", cfg)
        fmap = sample_frequencies(5, 64, table.meta["sigma"], seed=4)
        normalized = normalize_spectra(image)
        rng = np.random.default_rng(5)
        for _ in range(5):
            r, c = rng.integers(0, 10, 2)
            patch = extract_patch(normalized, int(r), int(c), cfg.patch)
            expected = mean_map_feature(fmap, patch).values
            np.testing.assert_allclose(table.values[r * 10 + c], expected, atol=1e-10)

    def test_meanmap_unnormalized_flag(self, small_scene):
        image, _ = small_scene
        cfg = EmbeddingConfig(
            patch=PatchSpec(3), n_features=32, seed=4, sigma=1.0, normalize=False
        )
        table = build_feature_table(image, "meanmap", cfg)
        fmap = sample_frequencies(5, 32, 1.0, seed=4)
        patch = extract_patch(image, 4, 4, cfg.patch)
        np.testing.assert_allclose(
            table.values[44], mean_map_feature(fmap, patch).values, atol=1e-10
        )

    def test_convmeanmap_spot_check(self, small_scene):
        image, _ = small_scene
        cfg = EmbeddingConfig(patch=PatchSpec(3), n_features=64, seed=4, sigma=0.7, beta=3.0)
        table = build_feature_table(image, "convmeanmap", cfg)
        fmap = sample_frequencies(7, 64, 1.0, seed=4)
        from hsembed.hsi import patch_window

        for r, c in [(0, 0), (5, 5), (9, 3)]:
            rr, cc = patch_window(r, c, cfg.patch, 10, 10)
            spectra = image.data[rr, cc, :]
            positions = np.stack([rr, cc], axis=1).astype(float)
            expected = conv_mean_map_feature(fmap, spectra, positions, cfg).values
            np.testing.assert_allclose(table.values[r * 10 + c], expected, atol=1e-10)

    def test_mp_x_meanmap_dims_and_cap(self, small_scene):
        image, _ = small_scene
        from hsembed import MorphoProfileConfig

        cfg = EmbeddingConfig(patch=PatchSpec(3), n_features=16, seed=4)
        mp_cfg = MorphoProfileConfig(pca_dims=2, n_scales=1, se_shape="disk")
        table = build_feature_table(image, "mp_x_meanmap", cfg, mp_cfg)
        assert table.dim == (2 * 3) * (2 * 16)
        assert table.kind == "tensor"
        small_cap = EmbeddingConfig(
            patch=PatchSpec(3), n_features=16, seed=4, tensor_cap=100
        )
        with pytest.raises(CapacityError, match="100"):
            build_feature_table(image, "mp_x_meanmap", small_cap, mp_cfg)

    def test_tensor_rows_factorize(self, small_scene):
        image, _ = small_scene
        from hsembed import MorphoProfileConfig
        from hsembed.embedding import _minmax_scale_columns
        from hsembed.morphology import morphological_profile

        cfg = EmbeddingConfig(patch=PatchSpec(3), n_features=16, seed=4)
        mp_cfg = MorphoProfileConfig(pca_dims=2, n_scales=1)
        fused = build_feature_table(image, "mp_x_meanmap", cfg, mp_cfg)
        mm = build_feature_table(image, "meanmap", cfg)
        mp = _minmax_scale_columns(morphological_profile(image, mp_cfg))
        i, j = 17, 61
        lhs = float(fused.values[i] @ fused.values[j])
        rhs = float(mp[i] @ mp[j]) * float(mm.values[i] @ mm.values[j])
        assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_determinism(self, small_scene):
        image, _ = small_scene
        cfg = EmbeddingConfig(patch=PatchSpec(3), n_features=32, seed=11)
        a = build_feature_table(image, "convmeanmap", cfg)
        b = build_feature_table(image, "convmeanmap", cfg)
        np.testing.assert_array_equal(a.values, b.values)

    def test_unknown_method(self, small_scene):
        image, _ = small_scene
        with pytest.raises(ParameterError):
            build_feature_table(image, "spectral_unmixing")

    def test_serialization_round_trip(self, small_scene, tmp_path):
        image, _ = small_scene
        table = build_feature_table(
            image, "meanmap", EmbeddingConfig(patch=PatchSpec(3), n_features=16, seed=4)
        )
        save_feature_table(table, tmp_path / "table")
        back = load_feature_table(tmp_path / "table")
        np.testing.assert_array_equal(back.values, table.values)
        assert back.kind == table.kind
        assert back.meta == table.meta


class TestMedianHeuristic:
    def test_deterministic_and_positive(self, small_scene):
        image, _ = small_scene
        a = median_heuristic(image, seed=3)
        b = median_heuristic(image, seed=3)
        assert a == b > 0

    def test_constant_image_falls_back(self):
        image = HyperspectralImage(np.full((4, 4, 3), 2.0))
        assert median_heuristic(image, seed=0) == 1.0
