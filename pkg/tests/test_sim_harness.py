import json

import numpy as np
import pandas as pd
import pytest

from conflict_graph import independent_sets, links_to_mask
from errors import InputError, InvariantViolation
from sim_harness import (
    SUMMARY_COLUMNS,
    SWEEP_COLUMNS,
    TRACE_COLUMNS,
    SimConfig,
    _check_slot,
    build_scenario,
    classify,
    convert_numpy_types,
    load_config,
    parse_scheduler,
    rate_sweep,
    replicate,
    round_to_block,
    simulate,
    summary_frame,
    trace_frame,
)
from stability import caratheodory_sp_params, sp_condition


def _config(**overrides):
    base = dict(graph="ring:6", scheduler="lqf", arrivals="ring6-adv:epsilon=0", horizon=300, runs=1, seed=0)
    base.update(overrides)
    return SimConfig(**base)


def _write_spk(tmp_path, params, rates_name="rates.csv", params_name="params.json"):
    params_path = tmp_path / params_name
    params.dump(params_path)
    rates_path = tmp_path / rates_name
    pd.DataFrame({"link": range(1, params.n + 1), "rate": params.total_rate}).to_csv(rates_path, index=False)
    return params_path, rates_path


def test_periodic_pairs_are_served_within_their_phase():
    result = simulate(_config())
    assert result.final_max_queue == 1
    assert result.slope == 0.0
    assert result.max_queue.max() == 1
    np.testing.assert_array_equal(result.queues, result.arrivals - result.departures)
    assert result.checks == 300


def test_zero_arrivals_leave_everything_empty():
    result = simulate(_config(arrivals="bernoulli:0", horizon=50, sample_every=10))
    assert not result.departures.any()
    assert not result.queues.any()
    np.testing.assert_array_equal(result.slots, [10, 20, 30, 40, 50])


def test_samples_include_the_final_slot():
    result = simulate(_config(horizon=250, sample_every=100))
    np.testing.assert_array_equal(result.slots, [100, 200, 250])


def test_simulation_is_seed_deterministic():
    config = _config(arrivals="bernoulli:0.4", scheduler="lqf:random", horizon=2000, seed=9)
    first, second = simulate(config), simulate(config)
    np.testing.assert_array_equal(first.max_queue, second.max_queue)
    np.testing.assert_array_equal(first.departures, second.departures)
    assert simulate(config, run=1).seed == 10


@pytest.mark.parametrize("scheduler", ["lqf", "maxweight", "sp:auto", "spk:em"])
def test_conservation_and_departure_bounds(scheduler):
    result = simulate(_config(scheduler=scheduler, arrivals="bernoulli:0.4", horizon=3000))
    np.testing.assert_array_equal(result.queues, result.arrivals - result.departures)
    assert np.all(result.departures <= result.horizon)
    assert result.departure_rate_error < 0.05


def test_check_slot_catches_bad_schedules(ring6):
    masks = ring6.neighbor_masks
    everything = links_to_mask(range(1, 7))
    with pytest.raises(InvariantViolation, match="conflicts"):
        _check_slot(1, links_to_mask([1, 2]), everything, masks)
    with pytest.raises(InvariantViolation, match="could have been added"):
        _check_slot(1, links_to_mask([1]), everything, masks)
    with pytest.raises(InvariantViolation, match="empty queue"):
        _check_slot(1, links_to_mask([1]), 0, masks)
    _check_slot(1, links_to_mask([1, 3, 5]), everything, masks)


def test_parse_scheduler_variants(ring6, inputs_dir):
    rates = np.full(6, 0.48)
    assert parse_scheduler("lqf", ring6, rates).tiebreak == "index"
    assert parse_scheduler("lqf:random", ring6, rates).tiebreak == "random"
    assert parse_scheduler("maxweight", ring6, rates).kind == "maxweight"
    assert parse_scheduler(f"sp:{inputs_dir / 'ring6_identity.priority'}", ring6, rates).priority.values == (1, 2, 3, 4, 5, 6)

    em = parse_scheduler("spk:em", ring6, rates)
    assert em.params.K == 2
    assert em.params.theta == (0.5, 0.5)
    assert em.params.block == 100

    stored = parse_scheduler(f"spk:{inputs_dir / 'ring6_spk_048.json'}", ring6, rates)
    assert stored.params.sub_block_lengths() == (50, 50)

    for bad in ("fifo", "lqf:oldest", "sp:", "spk:", "sp:/nonexistent/priority"):
        with pytest.raises(InputError):
            parse_scheduler(bad, ring6, rates)


def test_round_to_block_for_caratheodory_weights(ring6):
    params = caratheodory_sp_params(ring6, [0.45] * 6)
    assert params.theta == pytest.approx((0.45, 0.45, 0.10))

    rounded = round_to_block(ring6, params, 20)
    assert rounded.K == 2
    assert rounded.sub_block_lengths() == (10, 10)
    assert round_to_block(ring6, params, 100).sub_block_lengths() == (50, 50)
    assert sp_condition(ring6, rounded, strict=True).member

    with pytest.raises(InputError, match="too short"):
        round_to_block(ring6, params, 9)


def test_spk_split_must_match_arrivals(tmp_path, inputs_dir):
    config = _config(scheduler=f"spk:{inputs_dir / 'ring6_spk_048.json'}", arrivals="bernoulli:0.3")
    with pytest.raises(InputError, match="declares"):
        simulate(config)


def test_spk_from_file_keeps_classes_apart(inputs_dir):
    config = _config(
        scheduler=f"spk:{inputs_dir / 'ring6_spk_048.json'}",
        arrivals="bernoulli:0.48",
        horizon=10_000,
        split_mode="round_robin",
    )
    result = simulate(config)
    np.testing.assert_array_equal(result.queues, result.arrivals - result.departures)
    assert result.verdict() == "stable"


def test_replicate_aggregates():
    replication = replicate(_config(runs=3, seed=4))
    assert [r.seed for r in replication.results] == [4, 5, 6]
    # No randomness with epsilon = 0: every run is the same.
    assert len({r.final_max_queue for r in replication.results}) == 1
    assert replication.mean_final_max_queue == replication.results[0].final_max_queue

    single = replicate(_config(arrivals="bernoulli:0.3", horizon=1000))
    assert single.mean_slope == single.results[0].slope
    assert single.max_final_max_queue == single.results[0].final_max_queue


def test_replicate_reports_each_run():
    seen = []
    replicate(_config(runs=2), callback=lambda run, result: seen.append((run, result.run)))
    assert seen == [(0, 0), (1, 1)]


def test_rate_sweep_below_lqf_boundary():
    table, replications = rate_sweep(_config(horizon=20_000, runs=2), [0.30])
    assert list(table.columns) == SWEEP_COLUMNS
    assert table.loc[0, "verdict"] == "stable"
    assert abs(table.loc[0, "mean_slope"]) <= 0.01
    assert len(replications) == 1


def test_rate_sweep_empty_and_multiple_schedulers():
    table, _ = rate_sweep(_config(), [])
    assert table.empty
    assert list(table.columns) == SWEEP_COLUMNS
    table, _ = rate_sweep(_config(arrivals="bernoulli:0.1", horizon=500), [0.2, 0.3], ["lqf", "maxweight"])
    assert list(table["scheduler"]) == ["lqf", "lqf", "maxweight", "maxweight"]
    assert list(table["rate"]) == [0.2, 0.3, 0.2, 0.3]


def test_frames_have_expected_columns():
    replication = replicate(_config(runs=2, horizon=300, sample_every=100))
    trace = trace_frame(replication)
    assert list(trace.columns) == TRACE_COLUMNS
    assert len(trace) == 6
    summary = summary_frame([replication])
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert list(summary["run"]) == [0, 1]
    assert summary.loc[0, "rate"] == pytest.approx(1 / 3)


def test_lqf_grows_under_ring_adversary():
    horizon, epsilon = 20_000, 0.1
    replication = replicate(_config(arrivals=f"ring6-adv:epsilon={epsilon}", horizon=horizon, runs=2, seed=1))
    assert 0.7 * epsilon * horizon <= replication.mean_final_max_queue <= 1.3 * epsilon * horizon
    assert replication.mean_slope >= 0.05
    assert replication.verdict() == "unstable"


def test_classify_thresholds():
    assert classify(0.0, 10, 10_000) == "stable"
    assert classify(0.1, 1000, 10_000) == "unstable"
    assert classify(0.02, 300, 10_000) == "inconclusive"
    assert classify(0.02, 300, 10_000, offered=0.52, capacity=0.5) == "unstable"


def test_config_files(tmp_path):
    json_path = tmp_path / "sim.json"
    json_path.write_text(json.dumps({"graph": "ring:6", "scheduler": "lqf", "arrivals": "bernoulli:0.2", "runs": 2}))
    config = SimConfig.from_dict(load_config(json_path))
    assert config.runs == 2

    yaml_path = tmp_path / "sim.yaml"
    yaml_path.write_text("graph: bipartite8\nscheduler: maxweight\narrivals: bipartite-adv:pattern=pairs\nhorizon: 500\n")
    config = SimConfig.from_dict(load_config(yaml_path))
    assert config.horizon == 500
    assert config.replace(horizon=None, runs=3).horizon == 500

    with pytest.raises(InputError, match="unknown"):
        SimConfig.from_dict({"graph": "ring:6", "scheduler": "lqf", "arrivals": "bernoulli:0.2", "slots": 5})
    with pytest.raises(InputError, match="lacks"):
        SimConfig.from_dict({"graph": "ring:6"})
    with pytest.raises(InputError):
        load_config(tmp_path / "missing.json")
    with pytest.raises(InputError):
        _config(horizon=0)


def test_sample_config_files_load(inputs_dir):
    for name in ("ring6_lqf_adversarial.json", "bipartite_sweep.yaml"):
        config = SimConfig.from_dict(load_config(inputs_dir / name))
        assert config.horizon == 100_000


def test_convert_numpy_types():
    data = {"a": np.int64(3), "b": np.array([0.5, 1.5]), "c": (np.bool_(True),)}
    assert convert_numpy_types(data) == {"a": 3, "b": [0.5, 1.5], "c": [True]}
    json.dumps(convert_numpy_types(data))


def test_scenario_resolves_scheduler_once():
    scenario = build_scenario(_config(scheduler="maxweight", arrivals="bernoulli:0.3", runs=2, horizon=200))
    assert scenario.plan.policy() is scenario.plan.policy()
    replication = replicate(scenario)
    assert len(replication.results) == 2


# --- Full-length runs ---


@pytest.mark.slow
def test_lqf_unstable_under_ring_adversary_full_length():
    replication = replicate(_config(arrivals="ring6-adv:epsilon=0.1", horizon=100_000, runs=10, seed=1))
    assert 7000 <= replication.mean_final_max_queue <= 13000
    assert replication.mean_slope >= 0.05


@pytest.mark.slow
@pytest.mark.parametrize("graph", ["ring:6", "bipartite8"])
@pytest.mark.parametrize("scheduler", ["maxweight", "spk:em"])
def test_stabilizing_schedulers_at_048(graph, scheduler):
    replication = replicate(
        SimConfig(graph=graph, scheduler=scheduler, arrivals="bernoulli:0.48", horizon=100_000, runs=10, seed=3)
    )
    assert replication.mean_slope <= 0.01
    for result in replication.results:
        assert np.abs(result.departure_rate - 0.48).max() <= 0.01


@pytest.mark.slow
def test_bipartite_separation_between_lqf_and_max_weight():
    base = dict(graph="bipartite8", arrivals="bipartite-adv:pattern=pairs", rate=0.48, horizon=100_000, runs=10, seed=5)
    lqf = replicate(SimConfig(scheduler="lqf", **base))
    max_weight = replicate(SimConfig(scheduler="maxweight", **base))
    assert lqf.mean_final_max_queue >= 50 * max(max_weight.mean_final_max_queue, 1.0)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(3))
def test_caratheodory_params_stabilize_inside_hull(seed, ring6, tmp_path):
    rng = np.random.default_rng(seed)
    sets = list(independent_sets(ring6))
    weights = rng.dirichlet(np.ones(len(sets)))
    a = np.zeros(6)
    for links, weight in zip(sets, weights):
        a[[link - 1 for link in links]] += weight

    params = round_to_block(ring6, caratheodory_sp_params(ring6, a).scaled(0.95), 1000)
    params_path, rates_path = _write_spk(tmp_path, params)
    replication = replicate(
        SimConfig(
            graph="ring:6",
            scheduler=f"spk:{params_path}",
            arrivals=f"bernoulli:rates={rates_path}",
            horizon=100_000,
            runs=1,
            seed=seed,
        )
    )
    assert replication.mean_slope <= 0.01
