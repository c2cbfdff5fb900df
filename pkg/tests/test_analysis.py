import json
import logging

import numpy as np
import pytest
from scipy import stats

from conftest import constant_model
from ffcattr import fourier
from ffcattr.analysis import (
    TagMatrix,
    binarize_high_score,
    characteristics_csv,
    characterize,
    class_concentration_kurtosis,
    correct_misclassified,
    correction_step,
    default_schedule,
    deleted_features_to_spatial,
    excess_kurtosis,
    interclass_specificity,
    maintain_rate_curve,
)
from ffcattr.attribution import ImportanceMap, baseline_scores, ffc_batch
from ffcattr.diffnet import forward
from ffcattr.diffnet.data import LabeledDataset
from ffcattr.errors import ConfigError
from ffcattr.experiment import REFERENCE_FFC


class TestBinarize:
    def test_all_equal_gives_zero_tags(self):
        np.testing.assert_array_equal(binarize_high_score(np.full((1, 2, 3), 4.2)), np.zeros(6))

    def test_hand_example(self):
        np.testing.assert_array_equal(binarize_high_score(np.array([1.0, 2.0, 3.0])), [0, 0, 1])

    def test_matches_two_pass_recomputation(self, rng):
        s = rng.normal(size=(2, 5, 5))
        flat = s.ravel()
        total = 0.0
        for v in flat:
            total += v
        mean = total / flat.size
        expected = np.array([1 if v > mean else 0 for v in flat])
        np.testing.assert_array_equal(binarize_high_score(ImportanceMap("fourier", s)), expected)

    def test_scale_invariant(self, rng):
        maps = [ImportanceMap("fourier", rng.normal(size=(1, 4, 4))) for _ in range(6)]
        labels = [0, 1, 2, 0, 1, 2]
        a = TagMatrix.from_maps(maps, labels, 3)
        b = TagMatrix.from_maps([ImportanceMap("fourier", 3.7 * m.scores) for m in maps], labels, 3)
        assert a.tags.tobytes() == b.tags.tobytes()


class TestKurtosis:
    def test_hand_vector_matches_moment_formula(self):
        x = np.array([0.0, 0.0, 0.0, 10.0])
        mean = 2.5
        m2 = ((0 - mean) ** 2 * 3 + (10 - mean) ** 2) / 4
        m4 = ((0 - mean) ** 4 * 3 + (10 - mean) ** 4) / 4
        assert abs(excess_kurtosis(x) - (m4 / m2**2 - 3)) < 1e-12

    def test_matches_scipy(self, rng):
        x = rng.gamma(2.0, size=500)
        assert excess_kurtosis(x) == pytest.approx(stats.kurtosis(x, fisher=True, bias=True), abs=1e-12)

    def test_normal_draw_near_zero(self):
        x = np.random.default_rng(0).standard_normal(100_000)
        assert abs(excess_kurtosis(x)) < 0.1

    def test_constant_is_undefined(self):
        assert np.isnan(excess_kurtosis(np.full(5, 3.0)))

    def test_undefined_class_excluded_with_warning(self, caplog):
        tags = TagMatrix(np.array([[1, 0, 0, 0], [1, 0, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1]]), [0, 0, 1, 1], 2)
        with caplog.at_level(logging.WARNING):
            per_class, mean = class_concentration_kurtosis(tags)
        assert per_class[0] is not None and per_class[1] is None
        assert mean == per_class[0]
        assert "undefined" in caplog.text


class TestSpecificity:
    def test_everywhere_and_exactly_one(self):
        tags = TagMatrix(np.array([[1, 1, 0], [1, 0, 0], [1, 0, 1]]), [0, 1, 2], 3)
        # feature 0 in every class, feature 1 only class 0, feature 2 only class 2
        assert interclass_specificity(tags) == 2

    def test_brute_force(self, rng):
        for _ in range(20):
            tags = (rng.uniform(size=(12, 9)) < 0.2).astype(np.uint8)
            labels = rng.integers(0, 4, size=12)
            count = 0
            for f in range(9):
                classes = {int(labels[i]) for i in range(12) if tags[i, f]}
                count += len(classes) == 1
            assert interclass_specificity(TagMatrix(tags, labels, 4)) == count

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError):
            interclass_specificity(TagMatrix(np.ones((2, 2)), [0, 0], 1))

    def test_report(self, rng):
        maps = [ImportanceMap("fourier", rng.normal(size=(1, 3, 3))) for _ in range(8)]
        rep = characterize(maps, np.arange(8) % 2, 2, "random")
        assert 0 <= rep.specificity <= rep.feature_count == 9
        assert characteristics_csv([rep]).splitlines()[0] == "method,domain,mean_kurtosis,specificity,feature_count"


class TestMaintainRate:
    def test_keep_all_and_keep_none(self, small_convnet, rng):
        xs = rng.normal(size=(10, 1, 8, 8))
        maps = [ImportanceMap("fourier", rng.normal(size=(1, 8, 8))) for _ in xs]
        curve = maintain_rate_curve(small_convnet, xs, maps, [0.0, 1.0])
        zero_class = np.argmax(forward(small_convnet, np.zeros((1, 1, 8, 8)))[0])
        agree = np.mean(np.argmax(forward(small_convnet, xs), axis=1) == zero_class)
        assert curve["rate"] == [pytest.approx(agree, abs=0), 1.0]

    def test_planted_top_ten_percent(self, planted):
        ck, ev = planted.checkpoint, planted.eval
        maps, _ = ffc_batch(ck, ev.samples, REFERENCE_FFC)
        curve = maintain_rate_curve(ck, ev.samples, maps, [0.0, 0.05, 0.1, 0.2, 0.5, 1.0])
        rate, se = np.array(curve["rate"]), np.array(curve["se"])
        assert rate[2] >= 0.8
        assert np.all(rate[1:] - rate[:-1] >= -2 * np.maximum(se[1:], se[:-1]))


class TestCorrection:
    def test_default_schedule(self):
        assert default_schedule(1000) == [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]

    def test_full_budget_gives_zero_input_class(self, small_convnet, rng):
        x = rng.normal(size=(1, 8, 8))
        zero_class = int(np.argmax(forward(small_convnet, np.zeros((1, 1, 8, 8)))[0]))
        imap = ImportanceMap("fourier", rng.normal(size=(1, 8, 8)))
        for label in range(3):
            got = correction_step(small_convnet, x, label, imap, [64])
            assert got == (0 if label == zero_class else None)

    def test_already_correct_excluded(self, rng):
        ck = constant_model(shape=(1, 4, 4), k=3, bias=(0.0, 1.0, 0.0))
        ds = LabeledDataset(rng.normal(size=(4, 1, 4, 4)), [1, 1, 1, 1], 3)
        rep = correct_misclassified(ck, ds, lambda m, i, x: baseline_scores("random", x), ["random"])
        assert rep.empty and rep.misclassified == []
        assert json.loads(rep.to_json())["empty"] is True
        assert np.isnan(rep.rate("random"))

    def test_deterministic(self, small_convnet, rng):
        xs = rng.normal(size=(8, 1, 8, 8))
        ds = LabeledDataset(xs, np.arange(8) % 3, 3)

        def provider(m, i, x):
            return baseline_scores(m, x, seed=i)

        a = correct_misclassified(small_convnet, ds, provider, ["random", "energy"], [4, 8, 16])
        b = correct_misclassified(small_convnet, ds, provider, ["random", "energy"], [4, 8, 16])
        assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()
        assert 0.0 <= a.rate("random") <= 1.0

    def test_bad_schedule(self, small_convnet, rng):
        ds = LabeledDataset(rng.normal(size=(2, 1, 8, 8)), [0, 1], 3)
        with pytest.raises(ConfigError):
            correct_misclassified(small_convnet, ds, lambda m, i, x: None, ["ffc"], [5, 3])


class TestDeletedRendering:
    def test_all_components_reconstruct_input(self, rng):
        x = rng.normal(size=(2, 6, 6))
        every = [(c, u, v) for c in range(2) for u in range(6) for v in range(6)]
        assert np.max(np.abs(deleted_features_to_spatial(x, every) - x)) < 1e-10

    def test_empty_set_is_zero(self, rng):
        x = rng.normal(size=(1, 4, 4))
        np.testing.assert_array_equal(deleted_features_to_spatial(x, []), np.zeros_like(x))

    def test_single_cosine_of_two(self):
        i, j = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        a = 0.8 * np.cos(2 * np.pi * (3 * i + j) / 16 + 0.4)
        b = 0.5 * np.cos(2 * np.pi * (5 * j) / 16)
        out = deleted_features_to_spatial(a + b, [(0, 3, 1)])
        assert np.max(np.abs(out - a)) < 1e-9

    def test_complement_is_deletion(self, rng):
        x = rng.normal(size=(1, 6, 6))
        feats = [(0, 1, 2), (0, 3, 0), (0, 0, 0)]
        deleted = fourier.idft2(fourier.delete_components(fourier.dft2(x[None])[0], feats))
        assert np.max(np.abs(x - deleted_features_to_spatial(x, feats) - deleted)) < 1e-9

    def test_additive_over_disjoint_sets(self, rng):
        x = rng.normal(size=(1, 6, 6))
        s1, s2 = [(0, 1, 2), (0, 2, 2)], [(0, 0, 3), (0, 4, 1)]
        total = deleted_features_to_spatial(x, s1 + s2)
        parts = deleted_features_to_spatial(x, s1) + deleted_features_to_spatial(x, s2)
        assert np.max(np.abs(total - parts)) < 1e-9
