import struct

import numpy as np
import pytest

from binhash.errors import DegenerateDatasetError
from binhash.pairdata import (
    Dataset,
    PairExample,
    SimilarityStats,
    continuous_similarity,
    estimate_stats,
    generate_imbalanced,
    generate_synthetic,
    pair_matrices,
    pair_weight,
    read_feature_file,
    read_points_csv,
    sample_pair_batch,
    similarity_from_labels,
    split,
    weight_matrix,
    write_feature_file,
)

from helpers import naive_pair_stats


def toy_dataset(labels, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset.from_arrays(rng.normal(size=(len(labels), dim)).astype(np.float32), labels)


class TestSimilarity:
    def test_shared_label(self):
        assert similarity_from_labels({2, 5}, {5, 9}) == 1

    def test_disjoint_and_identical(self):
        assert similarity_from_labels({1}, {2}) == 0
        assert similarity_from_labels({3}, {3}) == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            similarity_from_labels(set(), {1})

    def test_jaccard_values(self):
        assert continuous_similarity({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)
        assert continuous_similarity({1, 2}, {1, 2}) == 1.0
        assert continuous_similarity({1}, {2}) == 0.0


class TestPairWeight:
    def test_similar_branch(self):
        stats = SimilarityStats(100, 5, 95)
        assert pair_weight(1, 1.0, stats) == pytest.approx(20.0)

    def test_dissimilar_branch(self):
        stats = SimilarityStats(100, 5, 95)
        assert pair_weight(0, 1.0, stats) == pytest.approx(100 / 95)

    def test_unweighted_is_one(self):
        stats = SimilarityStats(100, 5, 95)
        assert pair_weight(1, 0.4, stats, weighted=False) == 1.0
        assert pair_weight(0, 1.0, stats, weighted=False) == 1.0

    def test_continuous_scaling(self):
        stats = SimilarityStats(100, 5, 95)
        assert pair_weight(1, 0.25, stats, use_continuous=True) == pytest.approx(5.0)
        # continuous off: the overlap value is ignored
        assert pair_weight(1, 0.25, stats, use_continuous=False) == pytest.approx(20.0)

    def test_ratio_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            similar = int(rng.integers(1, 1000))
            dissimilar = int(rng.integers(1, 1000))
            stats = SimilarityStats(similar + dissimilar, similar, dissimilar)
            ratio = pair_weight(1, 1.0, stats) / pair_weight(0, 1.0, stats)
            assert ratio == pytest.approx(dissimilar / similar, rel=1e-12)

    def test_degenerate_stats(self):
        with pytest.raises(DegenerateDatasetError):
            pair_weight(1, 1.0, SimilarityStats(10, 0, 10))
        with pytest.raises(DegenerateDatasetError):
            pair_weight(0, 1.0, SimilarityStats(10, 10, 0))


class TestEstimateStats:
    def test_three_points(self):
        ds = toy_dataset([{1}, {1}, {2}])
        stats = estimate_stats(ds)
        assert (stats.total, stats.similar, stats.dissimilar) == (3, 1, 2)

    def test_same_label_everywhere_is_degenerate_downstream(self):
        ds = toy_dataset([{1}, {1}, {1}])
        stats = estimate_stats(ds)
        assert stats.dissimilar == 0
        with pytest.raises(DegenerateDatasetError):
            pair_weight(1, 1.0, stats)

    def test_balanced_classes(self):
        labels = [{k // 10} for k in range(100)]
        stats = estimate_stats(toy_dataset(labels))
        assert stats.similar == 450
        assert stats.total == 4950

    def test_matches_bruteforce_on_random_multilabel(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(2, 60))
            labels = [
                frozenset(rng.choice(6, size=rng.integers(1, 4), replace=False).tolist())
                for _ in range(n)
            ]
            stats = estimate_stats(toy_dataset(labels))
            assert (stats.total, stats.similar, stats.dissimilar) == naive_pair_stats(labels)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            estimate_stats(toy_dataset([{1}]))

    def test_weighted_sum_balance(self):
        # with c == 1 the weighted mass of similar pairs equals the mass of
        # dissimilar pairs, both equal to the total pair count
        labels = [{int(k % 7)} for k in range(50)]
        ds = toy_dataset(labels)
        stats = estimate_stats(ds)
        similar, continuous = pair_matrices(ds, np.arange(len(ds)))
        weights = weight_matrix(similar, continuous, stats)
        iu = np.triu_indices(len(ds), k=1)
        w, s = weights[iu], similar[iu]
        assert w[s].sum() == pytest.approx(stats.total, rel=1e-12)
        assert w[~s].sum() == pytest.approx(stats.total, rel=1e-12)


class TestSampling:
    def test_pair_counts(self):
        ds = toy_dataset([{k % 3} for k in range(20)])
        assert len(sample_pair_batch(ds, 2, rng=0)) == 1
        assert len(sample_pair_batch(ds, 16, rng=0)) == 120

    def test_deterministic(self):
        ds = toy_dataset([{k % 3} for k in range(20)])
        assert sample_pair_batch(ds, 8, rng=42) == sample_pair_batch(ds, 8, rng=42)

    def test_batch_too_large(self):
        ds = toy_dataset([{0}, {1}])
        with pytest.raises(ValueError):
            sample_pair_batch(ds, 3, rng=0)
        with pytest.raises(ValueError):
            sample_pair_batch(ds, 1, rng=0)

    def test_pair_fields(self):
        ds = toy_dataset([{0}, {0, 1}, {2}])
        stats = estimate_stats(ds)
        pairs = sample_pair_batch(ds, 3, rng=1, stats=stats, use_continuous=True)
        for p in pairs:
            assert p.i != p.j
            expected_s = similarity_from_labels(ds.labels[p.i], ds.labels[p.j])
            assert p.similar == expected_s
            if p.similar:
                assert p.continuous == pytest.approx(
                    continuous_similarity(ds.labels[p.i], ds.labels[p.j])
                )
            else:
                assert p.continuous == 1.0
            assert p.weight == pytest.approx(
                pair_weight(p.similar, p.continuous, stats, use_continuous=True)
            )

    def test_pair_example_invariants(self):
        with pytest.raises(ValueError):
            PairExample(1, 1, 0, 1.0, 1.0)
        with pytest.raises(ValueError):
            PairExample(0, 1, 1, 0.0, 1.0)
        with pytest.raises(ValueError):
            PairExample(0, 1, 0, 0.5, 1.0)
        with pytest.raises(ValueError):
            PairExample(0, 1, 0, 1.0, 0.0)


class TestSplit:
    def test_standard_sizes_and_disjoint(self):
        ds = toy_dataset([{k % 5} for k in range(100)])
        train, db, queries = split(ds, "standard", (0.5, 0.3, 0.2), rng_seed=0)
        assert (len(train), len(db), len(queries)) == (50, 30, 20)
        all_ids = np.concatenate([train.ids, db.ids, queries.ids])
        assert len(set(all_ids.tolist())) == 100

    def test_standard_deterministic(self):
        ds = toy_dataset([{k % 5} for k in range(60)])
        a = split(ds, "standard", (0.5, 0.3, 0.2), rng_seed=9)
        b = split(ds, "standard", (0.5, 0.3, 0.2), rng_seed=9)
        for x, y in zip(a, b):
            assert np.array_equal(x.ids, y.ids)

    def test_zero_shot_class_disjointness(self):
        for seed in range(5):
            ds = generate_synthetic(10, 30, 4, rng_seed=seed)
            train, db, queries = split(ds, "zero_shot", (0.4, 0.3, 0.3), rng_seed=seed)
            assert not queries.classes & (train.classes | db.classes)
            assert len(train) and len(db) and len(queries)

    def test_zero_shot_needs_two_classes(self):
        ds = toy_dataset([{0}] * 10)
        with pytest.raises(ValueError):
            split(ds, "zero_shot", (0.4, 0.3, 0.3), rng_seed=0)

    def test_impossible_split(self):
        ds = toy_dataset([{k % 2} for k in range(10)])
        with pytest.raises(ValueError):
            split(ds, "standard", (0.99, 0.001, 0.001), rng_seed=0)
        with pytest.raises(ValueError):
            split(ds, "standard", (0.5, 0.5, 0.5), rng_seed=0)
        with pytest.raises(ValueError):
            split(ds, "bogus", (0.5, 0.3, 0.2), rng_seed=0)


class TestSynthetic:
    def test_counts(self):
        ds = generate_synthetic(8, 250, 32, rng_seed=7)
        assert len(ds) == 2000
        assert ds.dim == 32
        assert ds.label_count == 8

    def test_deterministic(self):
        a = generate_synthetic(4, 10, 8, rng_seed=3)
        b = generate_synthetic(4, 10, 8, rng_seed=3)
        assert np.array_equal(a.features, b.features)
        assert a.labels == b.labels

    def test_single_label_mode_has_binary_overlap(self):
        ds = generate_synthetic(5, 20, 8, multilabel=False, rng_seed=0)
        for i in range(0, 40, 7):
            for j in range(i + 1, 40, 11):
                c = continuous_similarity(ds.labels[i], ds.labels[j])
                assert c in (0.0, 1.0)

    def test_multilabel_exercises_fractional_overlap(self):
        ds = generate_synthetic(6, 50, 8, multilabel=True, rng_seed=0)
        values = {
            continuous_similarity(ds.labels[i], ds.labels[j])
            for i in range(60)
            for j in range(i + 1, 60)
        }
        assert any(0.0 < v < 1.0 for v in values)

    def test_imbalanced_preset_ratio(self):
        ds = generate_imbalanced(rng_seed=0)
        total, similar, dissimilar = naive_pair_stats(ds.labels)
        assert dissimilar / similar >= 20.0
        stats = estimate_stats(ds)
        assert (stats.total, stats.similar, stats.dissimilar) == (total, similar, dissimilar)

    def test_rejects_bad_arguments(self):
        for kwargs in (
            {"classes": 1, "per_class": 5, "dim": 4},
            {"classes": 3, "per_class": 0, "dim": 4},
            {"classes": 3, "per_class": 5, "dim": 1},
            {"classes": 3, "per_class": 5, "dim": 4, "spread": 0.0},
        ):
            with pytest.raises(ValueError):
                generate_synthetic(**kwargs)


class TestDatasetInvariants:
    def test_rejects_empty_labels(self):
        with pytest.raises(ValueError):
            toy_dataset([{0}, set()])

    def test_rejects_nonfinite_features(self):
        feats = np.ones((2, 3), dtype=np.float32)
        feats[1, 1] = np.nan
        with pytest.raises(ValueError):
            Dataset.from_arrays(feats, [{0}, {1}])

    def test_subset_keeps_ids(self):
        ds = toy_dataset([{k} for k in range(6)])
        sub = ds.subset([4, 1])
        assert sub.ids.tolist() == [4, 1]
        assert sub.labels == (frozenset({4}), frozenset({1}))


class TestFeatureFile:
    def test_header_and_roundtrip(self, tmp_path):
        ds = generate_synthetic(3, 4, 5, multilabel=True, rng_seed=2)
        path = tmp_path / "points.hnfv"
        write_feature_file(path, ds)
        raw = path.read_bytes()
        magic, version, n, d, vocab = struct.unpack("<4sIQII", raw[:24])
        assert (magic, version, n, d, vocab) == (b"HNFV", 1, 12, 5, 3)
        assert len(raw) == 24 + 12 * (4 * 5 + 1)
        back = read_feature_file(path)
        assert np.array_equal(back.features, ds.features)
        assert back.labels == ds.labels
        assert back.label_count == ds.label_count

    def test_write_read_is_byte_stable(self, tmp_path):
        ds = generate_synthetic(4, 6, 3, rng_seed=5)
        p1, p2 = tmp_path / "a.hnfv", tmp_path / "b.hnfv"
        write_feature_file(p1, ds)
        write_feature_file(p2, read_feature_file(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_truncation(self, tmp_path):
        ds = generate_synthetic(3, 4, 5, rng_seed=2)
        path = tmp_path / "points.hnfv"
        write_feature_file(path, ds)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(ValueError):
            read_feature_file(path)


class TestCsvIngest:
    def test_integer_labels(self, tmp_path):
        path = tmp_path / "points.csv"
        path.write_text("0|2,1.5,2.0\n1,0.0,-3.5\n")
        ds = read_points_csv(path)
        assert len(ds) == 2 and ds.dim == 2
        assert ds.labels == (frozenset({0, 2}), frozenset({1}))
        assert ds.features[1, 1] == pytest.approx(-3.5)

    def test_string_labels_sorted_mapping(self, tmp_path):
        path = tmp_path / "points.csv"
        path.write_text("dog,1,2\ncat|dog,3,4\n")
        ds = read_points_csv(path)
        # sorted unique tokens: cat=0, dog=1
        assert ds.labels == (frozenset({1}), frozenset({0, 1}))

    def test_rejects_ragged_rows(self, tmp_path):
        path = tmp_path / "points.csv"
        path.write_text("0,1,2\n1,3\n")
        with pytest.raises(ValueError):
            read_points_csv(path)
