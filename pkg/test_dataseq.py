"""
Tests for matrix-sequence ingestion, views, statistics, splitting and synthetic generation
"""

import numpy as np
import pytest

from dataseq import (
    PUBLISHED_DATASETS,
    MatrixSequence,
    Observation,
    SplitSpec,
    SyntheticConfig,
    generate_synthetic,
    observations_of_column,
    observations_of_node_at,
    parse_sequence,
    read_sequence,
    serialize_sequence,
    split,
    stats,
    write_sequence,
)
from errors import ConfigError, DuplicateKey, IndexOutOfRange, MalformedLine, NonFiniteWeight


def make_seq(nodes, slots, *entries):
    return MatrixSequence(nodes, slots, (Observation(*e) for e in entries))


def spread_entries(count, nodes, slots):
    for k in range(count):
        i, t = divmod(k, slots)
        yield Observation(t + 1, i % nodes + 1, i // nodes + 1, 1.0)


def random_sequence(rng, nodes=6, slots=4, low=0):
    cells = nodes * nodes * slots
    keys = rng.choice(cells, size=int(rng.integers(low, 60)), replace=False)
    entries = []
    for key in keys:
        t, rest = divmod(int(key), nodes * nodes)
        i, j = divmod(rest, nodes)
        w = float(rng.normal() * 10.0 ** rng.integers(-20, 6))
        entries.append(Observation(t + 1, i + 1, j + 1, w))
    return MatrixSequence(nodes, slots, entries)


def dense_sequence(count, nodes=10, slots=1):
    entries = []
    for k in range(count):
        t, rest = divmod(k, nodes * nodes)
        i, j = divmod(rest, nodes)
        entries.append(Observation(t + 1, i + 1, j + 1, float(k)))
    return MatrixSequence(nodes, slots, entries)


class TestParseSequence:
    def test_single_entry(self):
        seq = parse_sequence(["1\t3\t7\t0.25\n"], dims=(10, 5))
        assert seq.entries == (Observation(1, 3, 7, 0.25),)

    def test_comment_line_is_skipped(self):
        seq = parse_sequence(["# comment\n"], dims=(10, 5))
        assert len(seq) == 0

    def test_zero_slot_index_is_out_of_range(self):
        with pytest.raises(IndexOutOfRange) as excinfo:
            parse_sequence(["0\t3\t7\t0.25\n"], dims=(10, 5))
        assert excinfo.value.context["line"] == 1

    def test_header_supplies_dims(self):
        seq = parse_sequence(["dims 4 2\n", "2,1,4,1.5\n", "1 2 3 -0.5\n"])
        assert seq.dims == (4, 2)
        assert [o.key for o in seq] == [(1, 2, 3), (2, 1, 4)]

    def test_explicit_dims_override_header(self, caplog):
        seq = parse_sequence(["dims 4 2\n", "1 1 1 1.0\n"], dims=(6, 3))
        assert seq.dims == (6, 3)
        assert "overridden" in caplog.text

    def test_missing_dims(self):
        with pytest.raises(MalformedLine):
            parse_sequence(["1 1 1 1.0\n"])

    def test_wrong_field_count(self):
        with pytest.raises(MalformedLine) as excinfo:
            parse_sequence(["1 1 1\n"], dims=(2, 2))
        assert excinfo.value.line_no == 1

    def test_non_integer_index(self):
        with pytest.raises(MalformedLine):
            parse_sequence(["1.5 1 1 1.0\n"], dims=(2, 2))

    def test_non_finite_weight(self):
        with pytest.raises(NonFiniteWeight):
            parse_sequence(["1 1 1 nan\n"], dims=(2, 2))

    def test_duplicate_key(self):
        with pytest.raises(DuplicateKey) as excinfo:
            parse_sequence(["1 1 2 1.0\n", "1 1 2 3.0\n"], dims=(2, 2))
        assert excinfo.value.context["line"] == 2

    def test_file_round_trip(self, tmp_path):
        seq = make_seq(5, 3, (3, 1, 2, 0.1 + 0.2), (1, 5, 5, -1e-17))
        path = tmp_path / "seq.txt"
        write_sequence(seq, path)
        assert read_sequence(path) == seq
        assert next(serialize_sequence(seq)) == "dims 5 3\n"

    def test_serialize_parse_round_trip(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            seq = random_sequence(rng)
            assert parse_sequence(serialize_sequence(seq)) == seq


class TestStats:
    @pytest.mark.parametrize("name,expected", [("D1", "0.0104%"), ("D2", "0.0055%"), ("D3", "0.0052%")])
    def test_published_densities(self, name, expected):
        nodes, slots, known = PUBLISHED_DATASETS[name]
        seq = MatrixSequence(nodes, slots, spread_entries(known, nodes, slots))
        result = stats(seq)
        assert result.known == known
        assert result.density_percent == expected

    def test_d1_density_value(self):
        nodes, slots, known = PUBLISHED_DATASETS["D1"]
        assert known / (nodes * nodes * slots) == pytest.approx(1.0366e-4, rel=1e-4)

    def test_fully_observed_slice(self):
        result = dense_sequence(100).stats()
        assert result.density == 1.0
        assert result.to_dict()["density_percent"] == "100.0000%"


class TestViews:
    def test_node_view_sorted_by_target(self):
        seq = make_seq(5, 2, (1, 2, 5, 0.3), (1, 2, 1, 0.7))
        assert observations_of_node_at(seq, 1, 2) == [(1, 0.7), (5, 0.3)]

    def test_node_view_empty(self):
        seq = make_seq(5, 2, (2, 2, 5, 0.3))
        assert observations_of_node_at(seq, 1, 2) == []
        assert observations_of_node_at(seq, 1, 4) == []

    def test_column_view(self):
        seq = make_seq(5, 2, (1, 2, 5, 0.3), (2, 4, 5, 0.9), (1, 2, 1, 0.7))
        assert observations_of_column(seq, 5) == [(1, 2, 0.3), (2, 4, 0.9)]
        assert observations_of_column(seq, 3) == []

    def test_row_and_column_views_cover_every_entry(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            seq = random_sequence(rng)
            by_row = sum(
                len(observations_of_node_at(seq, t, i))
                for t in range(1, seq.slots + 1)
                for i in range(1, seq.nodes + 1)
            )
            by_column = sum(len(observations_of_column(seq, j)) for j in range(1, seq.nodes + 1))
            assert by_row == by_column == len(seq)

    def test_view_index_checked(self):
        seq = make_seq(5, 2)
        with pytest.raises(IndexOutOfRange):
            seq.observations_of_node_at(3, 1)


class TestSplit:
    @pytest.mark.parametrize("case,sizes", [(1, (10, 10, 80)), (2, (20, 10, 70)), (3, (30, 10, 60))])
    def test_case_sizes(self, case, sizes):
        parts = split(dense_sequence(100), SplitSpec.from_case(case, seed=7))
        assert tuple(len(p) for p in parts) == sizes

    def test_partition(self):
        seq = dense_sequence(100)
        train, val, test = split(seq, SplitSpec(0.3, 0.1, 0.6, seed=3))
        keys = [o.key for part in (train, val, test) for o in part]
        assert len(keys) == len(set(keys)) == 100
        assert sorted(train.entries + val.entries + test.entries) == list(seq.entries)

    def test_partition_over_random_sequences(self):
        rng = np.random.default_rng(13)
        for seed in range(30):
            seq = random_sequence(rng, low=1)
            parts = split(seq, SplitSpec(0.3, 0.1, 0.6, seed=seed))
            merged = [o for part in parts for o in part]
            assert len(merged) == len({o.key for o in merged}) == len(seq)
            assert sorted(merged) == list(seq.entries)
            assert all(part.dims == seq.dims for part in parts)

    def test_same_seed_same_partition(self):
        seq = dense_sequence(100)
        assert split(seq, SplitSpec(seed=11)) == split(seq, SplitSpec(seed=11))
        assert split(seq, SplitSpec(seed=11)) != split(seq, SplitSpec(seed=12))

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            SplitSpec(0.5, 0.1, 0.1)


class TestSynthetic:
    def test_known_count_concentrates(self):
        cfg = SyntheticConfig(nodes=50, slots=30, rank=4, density=0.02)
        seq, factors = generate_synthetic(cfg)
        mean = 0.02 * 50 * 50 * 30
        sigma = (mean * 0.98) ** 0.5
        assert abs(len(seq) - mean) < 4 * sigma
        assert factors.n.shape == (30, 50, 4)
        assert factors.q.shape == (50, 4)

    def test_noiseless_weights_are_inner_products(self):
        cfg = SyntheticConfig(nodes=2, slots=1, rank=1, density=1.0, noise_sigma=0.0)
        seq, factors = generate_synthetic(cfg)
        assert len(seq) == 4
        for obs in seq:
            assert obs.w == pytest.approx(factors.inner(obs.t, obs.i, obs.j), abs=1e-15)

    def test_deterministic(self):
        cfg = SyntheticConfig(nodes=8, slots=4, rank=2, density=0.3, seed=5)
        first, truth_a = generate_synthetic(cfg)
        second, truth_b = generate_synthetic(cfg)
        assert first == second
        assert (truth_a.n == truth_b.n).all() and (truth_a.q == truth_b.q).all()

    def test_sparse_sample_at_large_dims(self):
        cfg = SyntheticConfig(nodes=1894, slots=149, rank=2, density=2e-5, seed=6)
        seq, _ = generate_synthetic(cfg)
        mean = 2e-5 * 1894 * 1894 * 149
        assert abs(len(seq) - mean) < 5 * mean ** 0.5
        assert seq.dims == (1894, 149)

    def test_invalid_density(self):
        with pytest.raises(ConfigError):
            SyntheticConfig(density=0.0)
