import numpy as np
import pandas as pd
import pytest

from arrivals import (
    SplitSpec,
    TraceProcess,
    adversarial_mix,
    bernoulli_process,
    bipartite_adversarial,
    dump_trace,
    make_process,
    parse_specifier,
    read_rates_csv,
    ring6_adversarial,
    split_process,
)
from errors import InputError


def test_bernoulli_is_seeded_and_chunk_independent():
    bulk = bernoulli_process([0.3, 0.7], seed=5).take(5010)
    stepped = bernoulli_process([0.3, 0.7], seed=5)
    pieces = [stepped.take(10), stepped.take(5000)]
    np.testing.assert_array_equal(np.concatenate(pieces), bulk)
    assert stepped.slot == 5010


def test_bernoulli_long_run_rate():
    arrivals = bernoulli_process([0.1, 0.48, 0.9], seed=1).take(100_000)
    np.testing.assert_allclose(arrivals.mean(axis=0), [0.1, 0.48, 0.9], atol=0.01)
    assert arrivals.max() <= 1


@pytest.mark.parametrize("seed", range(100))
def test_bernoulli_rate_converges_across_seeds(seed):
    rates = np.array([0.1, 0.48, 0.9])
    process = bernoulli_process(rates, seed=seed)
    horizon = 10_000
    arrivals = process.take(horizon)
    bound = 3 * np.sqrt(process.a_max / horizon)
    assert np.abs(arrivals.sum(axis=0) / horizon - rates).max() <= bound


def test_bernoulli_rejects_rates_above_one():
    with pytest.raises(InputError):
        bernoulli_process([0.5, 1.2])


def test_ring6_pattern_without_flood():
    process = ring6_adversarial(epsilon=0.0, seed=0)
    arrivals = process.take(6)
    expected_groups = [{1, 4}, {2, 5}, {3, 6}] * 2
    for row, group in zip(arrivals, expected_groups):
        assert set(np.flatnonzero(row) + 1) == group
    np.testing.assert_allclose(process.declared_rate, np.full(6, 1 / 3))
    assert process.a_max == 2


def test_ring6_flood_rate():
    process = ring6_adversarial(epsilon=0.1, seed=3)
    arrivals = process.take(30_000)
    np.testing.assert_allclose(arrivals.mean(axis=0), np.full(6, 1 / 3 + 0.1), atol=0.01)
    assert arrivals.max() <= process.a_max


def test_ring6_partial_rho():
    process = ring6_adversarial(epsilon=0.0, seed=3, rho=0.2)
    np.testing.assert_allclose(process.declared_rate, np.full(6, 0.2))
    np.testing.assert_allclose(process.take(30_000).mean(axis=0), np.full(6, 0.2), atol=0.01)
    with pytest.raises(InputError):
        ring6_adversarial(epsilon=0.0, rho=0.4)


def test_bipartite_patterns():
    halves = bipartite_adversarial(epsilon=0.0, seed=0)
    rows = halves.take(2)
    assert set(np.flatnonzero(rows[0]) + 1) == {1, 2, 7, 8}
    assert set(np.flatnonzero(rows[1]) + 1) == {3, 4, 5, 6}
    np.testing.assert_allclose(halves.declared_rate, np.full(8, 0.5))

    pairs = bipartite_adversarial(epsilon=0.0, seed=0, pattern="pairs")
    rows = pairs.take(4)
    assert [set(np.flatnonzero(r) + 1) for r in rows] == [{1, 5}, {2, 6}, {3, 7}, {4, 8}]
    np.testing.assert_allclose(pairs.declared_rate, np.full(8, 0.25))


def test_bipartite_partial_rho():
    process = bipartite_adversarial(epsilon=0.0, seed=4, rho=0.45)
    np.testing.assert_allclose(process.declared_rate, np.full(8, 0.45))
    horizon = 100_000
    empirical = process.take(horizon).mean(axis=0)
    assert np.abs(empirical - process.declared_rate).max() <= 3 * np.sqrt(process.a_max / horizon)


def test_bipartite_pattern_errors():
    with pytest.raises(InputError):
        bipartite_adversarial(epsilon=0.0, pattern="stripes")
    with pytest.raises(InputError):
        bipartite_adversarial(epsilon=0.0, rho=0.3, pattern="pairs")


def test_adversarial_mix():
    rho, epsilon = adversarial_mix(0.48, 0.25)
    assert rho == pytest.approx(0.25)
    assert epsilon == pytest.approx(0.23)
    assert adversarial_mix(0.2, 1 / 3) == (0.2, 0.0)
    with pytest.raises(InputError):
        adversarial_mix(-0.1, 0.25)


def test_parse_specifier():
    assert parse_specifier("ring6-adv:epsilon=0.1, rho=0.2") == ("ring6-adv", {"epsilon": "0.1", "rho": "0.2"})
    assert parse_specifier("bernoulli:0.48") == ("bernoulli", {"": "0.48"})
    assert parse_specifier("lqf") == ("lqf", {})


def test_make_process_specifiers(ring6, bipartite, tmp_path):
    np.testing.assert_allclose(make_process("bernoulli:0.3", ring6).declared_rate, np.full(6, 0.3))
    np.testing.assert_allclose(make_process("bernoulli:rate=0.2", ring6).declared_rate, np.full(6, 0.2))
    np.testing.assert_allclose(make_process("bernoulli:0.3", ring6, rate=0.1).declared_rate, np.full(6, 0.1))
    np.testing.assert_allclose(make_process("ring6-adv:0.1", ring6).declared_rate, np.full(6, 1 / 3 + 0.1))
    np.testing.assert_allclose(make_process("ring6-adv:rate=0.45", ring6).declared_rate, np.full(6, 0.45))
    pairs = make_process("bipartite-adv:pattern=pairs", bipartite, rate=0.48)
    assert pairs.rho == pytest.approx(0.25)
    assert pairs.epsilon == pytest.approx(0.23)

    rates = tmp_path / "rates.csv"
    rates.write_text("link,rate\n2,0.5\n5,0.25\n")
    process = make_process(f"bernoulli:rates={rates}", ring6)
    np.testing.assert_allclose(process.declared_rate, [0, 0.5, 0, 0, 0.25, 0])


@pytest.mark.parametrize("spec", ["poisson:0.3", "bernoulli", "ring6-adv:epsilon=abc", "trace:"])
def test_make_process_errors(ring6, spec):
    with pytest.raises(InputError):
        make_process(spec, ring6)


def test_adversarial_processes_check_graph_size(bipartite):
    with pytest.raises(InputError, match="6 links"):
        make_process("ring6-adv:epsilon=0.1", bipartite)


def test_read_rates_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("link,rate\n9,0.1\n")
    with pytest.raises(InputError):
        read_rates_csv(bad, 6)
    with pytest.raises(InputError):
        read_rates_csv(tmp_path / "missing.csv", 6)


def test_trace_replay(ring6, tmp_path):
    path = tmp_path / "trace.csv"
    recorded = ring6_adversarial(epsilon=0.2, seed=9)
    frame = dump_trace(recorded, 12, path)
    assert list(frame.columns) == ["slot", "link", "count"]

    expected = ring6_adversarial(epsilon=0.2, seed=9).take(12)
    replay = make_process(f"trace:{path}", ring6)
    np.testing.assert_array_equal(replay.take(12), expected)
    assert not replay.take(5).any()


def test_trace_rejects_bad_links():
    frame = pd.DataFrame({"slot": [1], "link": [7], "count": [1]})
    with pytest.raises(InputError):
        TraceProcess(frame, 6)


def test_random_split_sums_to_parent():
    rates = [0.48] * 6
    odd = [0.48, 0, 0.48, 0, 0.48, 0]
    even = [0, 0.48, 0, 0.48, 0, 0.48]
    children = split_process(bernoulli_process(rates, seed=3), SplitSpec.from_rates([odd, even]), seed=4)
    first, second = (child.take(5000) for child in children)
    parent = bernoulli_process(rates, seed=3).take(5000)
    np.testing.assert_array_equal(first + second, parent)
    assert not first[:, 1::2].any()
    assert not second[:, 0::2].any()


def test_random_split_shares():
    spec = SplitSpec.from_rates([[0.15], [0.45]])
    children = split_process(bernoulli_process([0.6], seed=8), spec, seed=2)
    first, second = (child.take(50_000) for child in children)
    assert first.mean() == pytest.approx(0.15, abs=0.01)
    assert second.mean() == pytest.approx(0.45, abs=0.01)


def test_round_robin_split_is_balanced():
    spec = SplitSpec.from_rates([[0.25], [0.25]])
    children = split_process(bernoulli_process([0.5], seed=1), spec, mode="round_robin")
    first, second = (child.take(10_000) for child in children)
    assert abs(int(first.sum()) - int(second.sum())) <= 1


def test_split_must_match_parent_rate():
    with pytest.raises(InputError, match="link 1"):
        split_process(bernoulli_process([0.5, 0.5]), SplitSpec.from_rates([[0.2, 0.5], [0.2, 0.0]]))
    with pytest.raises(InputError):
        split_process(bernoulli_process([0.5]), SplitSpec.from_rates([[0.5]]), mode="hash")
