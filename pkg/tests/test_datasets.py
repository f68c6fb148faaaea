import numpy as np
import pytest

from nakagami_qus.config import DatasetSection
from nakagami_qus.datasets import (
    build_truths,
    load_pgm_truths,
    m_to_intensity,
    normalize_to_m,
    split_dataset,
    split_indices,
    synthesize_measurement,
    synthesize_pairs,
)
from nakagami_qus.errors import ConfigurationError, DomainError
from nakagami_qus.formats import PgmImage, write_pgm
from nakagami_qus.models import GroundTruthMap
from nakagami_qus.phantoms import GENERATORS, generate_intensities, lesion


class TestPhantoms:
    @pytest.mark.parametrize("name", sorted(GENERATORS))
    def test_intensities_in_unit_range(self, name, rng):
        out = generate_intensities(name, 24, 20, rng)
        assert out.shape == (24, 20)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_strokes_draws_something(self, rng):
        out = generate_intensities("strokes", 28, 28, rng)
        assert 0 < np.count_nonzero(out) < out.size

    def test_unknown_generator(self, rng):
        with pytest.raises(ConfigurationError):
            generate_intensities("spiral", 8, 8, rng)

    def test_lesion_values_and_roi(self, rng):
        values, roi = lesion(32, 32, 0.6, 1.2, rng)
        assert roi.any() and not roi.all()
        assert np.all(values[roi] == 0.6)
        assert np.all(values[~roi] == 1.2)

    def test_lesion_rejects_out_of_range(self, rng):
        with pytest.raises(DomainError):
            lesion(16, 16, 0.3, 1.2, rng)


class TestNormalization:
    def test_affine_map(self):
        truth = normalize_to_m(np.array([[0.0, 0.5, 1.0]]))
        np.testing.assert_allclose(truth.values, [[0.5, 1.25, 2.0]])
        np.testing.assert_allclose(m_to_intensity(truth.values), [[0.0, 0.5, 1.0]])

    def test_rejects_out_of_range(self):
        with pytest.raises(DomainError):
            normalize_to_m(np.array([[0.2, 1.01]]))

    def test_rejects_non_2d(self):
        with pytest.raises(DomainError):
            normalize_to_m(np.zeros(4))


class TestSynthesis:
    def test_second_moment_matches_omega(self):
        truth = GroundTruthMap.from_values(np.full((2, 2), 1.25))
        rng = np.random.default_rng(0)
        draws = np.stack([synthesize_measurement(truth, 1.3, rng).data for _ in range(20000)])
        np.testing.assert_allclose(np.mean(draws**2, axis=0), 1.3, rtol=0.03)

    def test_moment_estimate_over_large_field(self):
        truth = GroundTruthMap.from_values(np.full((400, 1000), 1.25))
        r2 = synthesize_measurement(truth, 1.0, np.random.default_rng(1)).data ** 2
        m_hat = r2.mean() ** 2 / r2.var()
        assert m_hat == pytest.approx(1.25, rel=0.02)

    def test_neighbouring_pixels_are_independent(self):
        truth = GroundTruthMap.from_values(np.full((500, 500), 0.8))
        data = synthesize_measurement(truth, 1.0, np.random.default_rng(2)).data
        corr = np.corrcoef(data[:, :-1].ravel(), data[:, 1:].ravel())[0, 1]
        assert abs(corr) < 0.01

    def test_roi_carries_over(self, rng):
        roi = np.zeros((4, 4), dtype=bool)
        roi[1:3, 1:3] = True
        truth = GroundTruthMap.from_values(np.full((4, 4), 1.0), roi=roi)
        assert np.array_equal(synthesize_measurement(truth, 1.0, rng).roi, roi)

    def test_pairs_are_reproducible(self):
        truths = [GroundTruthMap.from_values(np.full((6, 6), m)) for m in (0.6, 1.4)]
        a = synthesize_pairs(truths, 1.0, seed=4)
        b = synthesize_pairs(truths, 1.0, seed=4)
        for (_, x), (_, y) in zip(a, b):
            np.testing.assert_array_equal(x.data, y.data)


class TestSplit:
    def test_sizes_and_disjointness(self):
        train, test = split_indices(10, 0.8, seed=0)
        assert len(train) == 8 and len(test) == 2
        assert set(train).isdisjoint(test)
        assert sorted(set(train) | set(test)) == list(range(10))

    def test_ceiling_of_fraction(self):
        train, test = split_indices(7, 0.5, seed=1)
        assert len(train) == 4 and len(test) == 3

    def test_deterministic(self):
        assert np.array_equal(split_indices(20, 0.7, 3)[0], split_indices(20, 0.7, 3)[0])

    def test_empty_test_split(self):
        with pytest.raises(ConfigurationError):
            split_indices(3, 0.9, seed=0)

    def test_too_few_items(self):
        with pytest.raises(ConfigurationError):
            split_indices(1, 0.5, seed=0)

    def test_split_dataset_keeps_items(self):
        items = list("abcdef")
        dataset = split_dataset(items, 0.5, seed=2)
        assert sorted(dataset.train + dataset.test) == items
        assert dataset.split_seed == 2


class TestBuildTruths:
    def test_round_robin_generators(self):
        section = DatasetSection(generators=["ramp", "lesion"], count=4, height=16, width=16, seed=0)
        truths = build_truths(section)
        assert len(truths) == 4
        assert truths[0].roi is None
        assert truths[1].roi is not None
        assert set(np.unique(truths[1].values)) == {0.6, 1.2}

    def test_same_seed_same_truths(self):
        section = DatasetSection(count=3, height=8, width=8, seed=5)
        for a, b in zip(build_truths(section), build_truths(section)):
            np.testing.assert_array_equal(a.values, b.values)

    def test_pgm_directory(self, tmp_path):
        write_pgm(tmp_path / "b.pgm", PgmImage(pixels=np.full((4, 5), 255, dtype=np.uint16)))
        write_pgm(tmp_path / "a.pgm", PgmImage(pixels=np.zeros((4, 5), dtype=np.uint16)))
        truths = build_truths(DatasetSection(source_dir=tmp_path))
        assert [float(t.values[0, 0]) for t in truths] == [0.5, 2.0]

    def test_empty_pgm_directory(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_pgm_truths(tmp_path)
