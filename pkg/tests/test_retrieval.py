import time

import numpy as np
import pytest

from binhash.codes import pack_sign_matrix, pack_values, sign_values, unpack_matrix
from binhash.encoder import EncoderParams, forward
from binhash.pairdata import Dataset, generate_synthetic
from binhash.retrieval import (
    CodeIndex,
    encode_dataset,
    hamming_scan,
    load_index,
    lsh_encode,
    radius_query,
    rank,
    save_index,
)

from helpers import naive_radius, naive_rank


def random_index(rng, n=200, k=32, with_labels=False):
    rows = rng.choice([-1, 1], size=(n, k))
    codes = [pack_values(r) for r in rows]
    labels = None
    if with_labels:
        labels = [frozenset({int(rng.integers(0, 4))}) for _ in range(n)]
    return rows, CodeIndex.from_codes(codes, labels=labels)


class TestEncodeDataset:
    def test_zero_parameters_give_all_plus_one(self):
        params = EncoderParams([np.zeros((4, 6))], [np.zeros(6)], (10.0,))
        ds = Dataset.from_arrays(np.ones((5, 4), dtype=np.float32), [{0}] * 5)
        for code in encode_dataset(params, ds):
            assert code.unpack().tolist() == [1] * 6

    def test_deterministic(self):
        ds = generate_synthetic(4, 20, 8, rng_seed=0)
        rng = np.random.default_rng(1)
        params = EncoderParams(
            [rng.normal(size=(8, 12)), rng.normal(size=(12, 16))],
            [rng.normal(size=12), rng.normal(size=16)],
            (1.0, 10.0),
        )
        a = encode_dataset(params, ds)
        b = encode_dataset(params, ds)
        assert all(x == y for x, y in zip(a, b))

    def test_matches_binarized_forward_output(self):
        ds = generate_synthetic(4, 25, 8, rng_seed=2)
        rng = np.random.default_rng(3)
        params = EncoderParams(
            [rng.normal(size=(8, 12)), rng.normal(size=(12, 16))],
            [rng.normal(size=12), rng.normal(size=16)],
            (1.0, 10.0),
        )
        codes = encode_dataset(params, ds)
        outputs, _ = forward(params, 32.0, ds.features.astype(np.float64))
        signs = sign_values(outputs)
        for i, code in enumerate(codes):
            assert np.array_equal(code.unpack(), signs[i])

    def test_dim_mismatch(self):
        params = EncoderParams([np.zeros((4, 6))], [np.zeros(6)], (10.0,))
        ds = Dataset.from_arrays(np.ones((3, 5), dtype=np.float32), [{0}] * 3)
        with pytest.raises(ValueError):
            encode_dataset(params, ds)


class TestRank:
    def test_self_query_comes_first(self):
        rng = np.random.default_rng(4)
        rows, index = random_index(rng, n=50, k=16)
        rows[20] = rows[7]  # duplicate code later in the database
        index = CodeIndex.from_codes([pack_values(r) for r in rows])
        result = rank(index, pack_values(rows[7]), top_n=3)
        assert result.ids[0] == 7 and result.distances[0] == 0
        assert result.ids[1] == 20 and result.distances[1] == 0

    def test_top_n_capped_at_database_size(self):
        rng = np.random.default_rng(5)
        rows, index = random_index(rng, n=30, k=16)
        result = rank(index, pack_values(rows[0]), top_n=1000)
        assert len(result) == 30

    def test_matches_naive_oracle_with_ties(self):
        rng = np.random.default_rng(6)
        rows, index = random_index(rng, n=200, k=32)
        for _ in range(20):
            query = rng.choice([-1, 1], size=32)
            expected = naive_rank(rows, query, 200)
            result = rank(index, pack_values(query), top_n=200)
            assert result.positions.tolist() == [p for p, _ in expected]
            assert result.distances.tolist() == [d for _, d in expected]

    def test_rejects_bad_arguments(self):
        rng = np.random.default_rng(7)
        _, index = random_index(rng, n=10, k=16)
        with pytest.raises(ValueError):
            rank(index, pack_values(np.ones(8)), top_n=5)
        with pytest.raises(ValueError):
            rank(index, pack_values(np.ones(16)), top_n=0)


class TestRadiusQuery:
    def test_full_radius_returns_everything(self):
        rng = np.random.default_rng(8)
        rows, index = random_index(rng, n=40, k=16)
        result = radius_query(index, pack_values(rows[0]), radius=16)
        assert len(result) == 40

    def test_radius_zero_returns_exact_duplicates(self):
        rng = np.random.default_rng(9)
        rows, _ = random_index(rng, n=40, k=16)
        rows[13] = rows[2]
        index = CodeIndex.from_codes([pack_values(r) for r in rows])
        result = radius_query(index, pack_values(rows[2]), radius=0)
        assert result.ids.tolist() == [2, 13]

    def test_matches_naive_filter(self):
        rng = np.random.default_rng(10)
        rows, index = random_index(rng, n=120, k=24)
        for radius in (0, 2, 5, 11):
            query = rng.choice([-1, 1], size=24)
            expected = naive_radius(rows, query, radius)
            result = radius_query(index, pack_values(query), radius)
            assert result.positions.tolist() == [p for p, _ in expected]
            assert result.distances.tolist() == [d for _, d in expected]

    def test_agrees_with_rank_prefix(self):
        rng = np.random.default_rng(11)
        rows, index = random_index(rng, n=100, k=16)
        query = pack_values(rng.choice([-1, 1], size=16))
        ranked = rank(index, query, top_n=100)
        for radius in (1, 3, 7):
            within = radius_query(index, query, radius)
            keep = ranked.distances <= radius
            assert within.ids.tolist() == ranked.ids[keep].tolist()
            assert within.distances.tolist() == ranked.distances[keep].tolist()

    def test_radius_out_of_range(self):
        rng = np.random.default_rng(12)
        _, index = random_index(rng, n=10, k=16)
        with pytest.raises(ValueError):
            radius_query(index, pack_values(np.ones(16)), radius=17)
        with pytest.raises(ValueError):
            radius_query(index, pack_values(np.ones(16)), radius=-1)


class TestPartitionedScan:
    def test_byte_identical_across_partitions(self):
        rng = np.random.default_rng(13)
        rows, index = random_index(rng, n=10_000, k=64)
        query = pack_values(rng.choice([-1, 1], size=64))
        single = hamming_scan(index, query, parts=1)
        for parts in (2, 4, 7):
            assert hamming_scan(index, query, parts=parts).tobytes() == single.tobytes()


class TestLshEncode:
    def test_deterministic_and_scale_invariant(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(30, 12)).astype(np.float32)
        a = lsh_encode(x, 24, rng_seed=3)
        b = lsh_encode(x, 24, rng_seed=3)
        doubled = lsh_encode(2.0 * x, 24, rng_seed=3)
        assert all(u == v for u, v in zip(a, b))
        assert all(u == v for u, v in zip(a, doubled))

    def test_collision_rate_tracks_angle(self):
        # code length caps at 4096 bits, so pool three seeded codebooks to get
        # past 10^4 independent hyperplanes
        theta = np.pi / 3
        x = np.zeros(8)
        y = np.zeros(8)
        x[0] = 1.0
        y[0], y[1] = np.cos(theta), np.sin(theta)
        agree = total = 0
        for seed in (5, 6, 7):
            codes = lsh_encode(np.stack([x, y]), 4096, rng_seed=seed)
            agree += int(np.sum(codes[0].unpack() == codes[1].unpack()))
            total += 4096
        assert abs(agree / total - (1 - theta / np.pi)) < 0.02


class TestThroughput:
    def test_packed_scan_is_much_faster_than_naive_loop(self):
        rng = np.random.default_rng(15)
        rows = rng.choice([-1, 1], size=(100_000, 64)).astype(np.int8)
        index = CodeIndex(pack_sign_matrix(rows), 64, np.arange(100_000, dtype=np.int64))
        query_row = rng.choice([-1, 1], size=64).astype(np.int8)
        query = pack_values(query_row)

        t0 = time.perf_counter()
        packed = hamming_scan(index, query)
        packed_time = time.perf_counter() - t0

        t0 = time.perf_counter()
        naive = np.empty(rows.shape[0], dtype=np.int64)
        for i in range(rows.shape[0]):
            naive[i] = np.count_nonzero(rows[i] != query_row)
        naive_time = time.perf_counter() - t0

        assert np.array_equal(packed, naive)
        assert naive_time / packed_time >= 10.0


class TestIndexIO:
    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(16)
        rows, index = random_index(rng, n=25, k=20, with_labels=True)
        codes_path = tmp_path / "db.hnbc"
        save_index(index, codes_path)
        back = load_index(codes_path)
        assert np.array_equal(back.words, index.words)
        assert back.code_bits == index.code_bits
        assert np.array_equal(back.ids, index.ids)
        assert back.labels == index.labels

    def test_missing_manifest_handling(self, tmp_path):
        rng = np.random.default_rng(17)
        rows, index = random_index(rng, n=5, k=8)
        codes_path = tmp_path / "db.hnbc"
        save_index(index, codes_path)
        (tmp_path / "db.manifest.json").unlink()
        fallback = load_index(codes_path)
        assert fallback.labels is None
        with pytest.raises(ValueError):
            load_index(codes_path, require_manifest=True)

    def test_unpacked_rows_match(self, tmp_path):
        rng = np.random.default_rng(18)
        rows, index = random_index(rng, n=12, k=20)
        assert np.array_equal(unpack_matrix(index.words, 20), rows)
