import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nwrkv.workload import (
    READ,
    WRITE,
    Generator,
    Mix,
    WorkloadConfig,
    config_from_mapping,
    harmonic_weight,
    parse_config_file,
    preset,
    presets,
)


def test_presets():
    p = presets()
    assert p["ycsb_a"].mix == Mix(50, 50, 0)
    assert p["ycsb_b"].mix == Mix(95, 5, 0)
    assert p["rmw"].mix == Mix(0, 0, 100)
    assert preset("ycsb-a", records=10).records == 10
    with pytest.raises(KeyError):
        preset("ycsb_z")


@pytest.mark.parametrize("bad", [(50, 50, 1), (-1, 101, 0)])
def test_mix_must_sum_to_100(bad):
    with pytest.raises(ValueError):
        Mix(*bad)


def test_config_bounds():
    with pytest.raises(ValueError):
        WorkloadConfig(theta=1.0)
    with pytest.raises(ValueError):
        WorkloadConfig(records=3, ops_per_txn=4)


def test_uniform_when_theta_zero():
    n, draws = 10, 100_000
    g = Generator(WorkloadConfig(records=n, theta=0.0))
    counts = Counter(g.next_key() for _ in range(draws))
    p = 1 / n
    sigma = math.sqrt(draws * p * (1 - p))
    assert set(counts) == set(range(n))
    for k in range(n):
        assert abs(counts[k] - draws * p) < 3 * sigma


def test_top_key_matches_power_law():
    n, draws = 1000, 100_000
    g = Generator(WorkloadConfig(records=n, theta=0.9, seed=3))
    counts = Counter(g.next_key() for _ in range(draws))
    expected = harmonic_weight(n, 0.9)
    assert abs(counts[0] / draws - expected) / expected < 0.05
    # rank 2 as well, to catch an off-by-one in the rank mapping
    expected2 = harmonic_weight(n, 0.9, rank=2)
    assert abs(counts[1] / draws - expected2) / expected2 < 0.05


def test_harmonic_weight_frozen():
    # exact sum 1 + 2^-0.5 + 3^-0.5
    assert harmonic_weight(3, 0.5) == pytest.approx(1 / (1 + 2 ** -0.5 + 3 ** -0.5))
    assert harmonic_weight(4, 0.0, rank=3) == pytest.approx(0.25)


def test_deterministic_per_seed_and_worker():
    cfg = WorkloadConfig(records=100, seed=11)
    a = [Generator(cfg, 0).next_txn() for _ in range(3)]
    b = [Generator(cfg, 0).next_txn() for _ in range(3)]
    assert a == b
    g0, g1 = Generator(cfg, 0), Generator(cfg, 1)
    assert [g0.next_txn() for _ in range(20)] != [g1.next_txn() for _ in range(20)]


def test_mix_frequencies():
    txns = 100_000
    g = Generator(WorkloadConfig(records=1000, ops_per_txn=1, mix=Mix(50, 30, 20), seed=5))
    kinds = Counter()
    for _ in range(txns):
        ops = g.next_txn()
        kinds["rmw" if len(ops) == 2 else ops[0][0]] += 1
    assert abs(kinds[READ] / txns - 0.50) < 0.01
    assert abs(kinds[WRITE] / txns - 0.30) < 0.01
    assert abs(kinds["rmw"] / txns - 0.20) < 0.01


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), ops=st.integers(1, 8), theta=st.floats(0.0, 0.99))
def test_keys_distinct_and_in_range(seed, ops, theta):
    cfg = WorkloadConfig(records=8, ops_per_txn=ops, theta=theta, seed=seed, mix=Mix(40, 30, 30))
    txn = Generator(cfg).next_txn()
    keys = [k for kind, k in txn if kind == READ or (READ, k) not in txn]
    assert len(keys) == len(set(keys)) == ops
    assert all(0 <= k < 8 for _, k in txn)


def test_rmw_reads_before_write():
    g = Generator(preset("rmw", records=50))
    ops = g.next_txn()
    assert [kind for kind, _ in ops] == [READ, WRITE] * 4
    assert all(ops[i][1] == ops[i + 1][1] for i in range(0, 8, 2))


def test_config_file_parsing():
    text = "# comment\nrecords = 500\ntheta=0.5\nmix = 20/70/10  # trailing\n"
    cfg = config_from_mapping(preset("ycsb_a"), parse_config_file(text))
    assert (cfg.records, cfg.theta, cfg.mix) == (500, 0.5, Mix(20, 70, 10))
    with pytest.raises(ValueError):
        parse_config_file("records 5")
    with pytest.raises(ValueError):
        config_from_mapping(preset("ycsb_a"), {"colour": "blue"})


def test_values_have_configured_size():
    g = Generator(WorkloadConfig(value_size=24))
    assert len(g.value()) == 24
