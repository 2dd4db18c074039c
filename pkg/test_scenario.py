#!/usr/bin/env python3
"""
Scenario generator tests
Topology shape, traffic scaling, loss screening and dataset persistence
"""
import json
import random

import networkx as nx
import numpy as np
import pytest
from scipy import stats

from twinforge.errors import ConfigError, DatasetError, ScreeningFailed
from twinforge.models.schemas import Sample, ScenarioConfig
from twinforge.services.evaluators import QueueingEvaluator
from twinforge.services.queueing_model import max_link_blocking
from twinforge.services.scenario_generator import (
    PERTURBED_WEIGHT_RANGE,
    derive_seed,
    gen_sample,
    gen_topology,
    gen_traffic,
    generate_dataset,
    load_dataset,
    load_sample,
    plod_credits,
    sample_path,
    save_dataset,
    save_sample,
    size_bucket,
)


def test_two_nodes_give_one_edge():
    topo = gen_topology(4, ScenarioConfig(n_range=(2, 2)))
    assert topo.nodes == 2
    assert {(l.src, l.dst) for l in topo.links} == {(0, 1), (1, 0)}


def test_topology_is_deterministic():
    cfg = ScenarioConfig(n_range=(8, 12))
    assert gen_topology(17, cfg).model_dump_json() == gen_topology(17, cfg).model_dump_json()


def test_rejects_single_node_range():
    with pytest.raises(ConfigError):
        gen_topology(0, ScenarioConfig(n_range=(1, 3)))


def test_rejects_negative_alpha():
    with pytest.raises(ValueError):
        ScenarioConfig(alpha=-0.5)


@pytest.mark.parametrize("seed", range(50))
def test_topology_invariants(seed):
    cfg = ScenarioConfig(n_range=(5, 20))
    topo = gen_topology(seed, cfg)
    assert cfg.n_range[0] <= topo.nodes <= cfg.n_range[1]
    assert topo.is_strongly_connected()
    for link in topo.links:
        reverse = topo.links[topo.link_index[(link.dst, link.src)]]
        assert reverse.capacity == link.capacity
        assert link.capacity in cfg.capacity_set
        assert link.buffer == cfg.buffer
    # From 5 nodes on every node starts with round(n / 3) >= 2 credits, so tree leaves always gain an edge
    assert len(topo.links) // 2 > topo.nodes - 1


def test_credits_follow_power_law():
    x = np.array([1.0, 0.5, 0.1])
    assert plod_credits(x, 0.8, 3.0, 9).tolist() == [3, 5, 9]
    assert plod_credits(x, 0.0, 2.0, 9).tolist() == [2, 2, 2]


def test_full_credit_gives_complete_graph():
    # alpha = 0 hands every node n - 1 credits; spending them all means 2 * edges == credit sum
    topo = gen_topology(1, ScenarioConfig(n_range=(7, 7), alpha=0.0, beta=6.0))
    assert len(topo.links) == 7 * 6


def test_spare_credit_adds_edges():
    cfg = ScenarioConfig(n_range=(10, 10), alpha=0.8, beta=3.0)
    mean_degrees = []
    for seed in range(20):
        topo = gen_topology(seed, cfg)
        assert len(topo.links) // 2 > topo.nodes - 1
        mean_degrees.append(len(topo.links) / topo.nodes)
    assert np.mean(mean_degrees) > 3.0


def _reference_plod_degrees(seed, n, alpha=0.8, beta=2.0):
    """Spanning tree plus credit edges, written against networkx and the random module"""
    rand = random.Random(seed)
    credit = [min(round(beta * (1.0 - rand.random()) ** -alpha), n - 1) for _ in range(n)]
    graph = nx.Graph()
    graph.add_nodes_from(range(n))

    def spend(u, v):
        graph.add_edge(u, v)
        credit[u] = max(credit[u] - 1, 0)
        credit[v] = max(credit[v] - 1, 0)

    order = list(range(n))
    rand.shuffle(order)
    for k in range(1, n):
        spend(order[k], order[rand.randrange(k)])

    eligible = [v for v in range(n) if credit[v] > 0]
    while len(eligible) >= 2:
        u = rand.choice(eligible)
        partners = [v for v in eligible if v != u and not graph.has_edge(u, v)]
        if partners:
            spend(u, rand.choice(partners))
        else:
            credit[u] = 0
        eligible = [v for v in eligible if credit[v] > 0]
    return [degree for _, degree in graph.degree()]


def _generated_degrees(seed, n):
    topo = gen_topology(seed, ScenarioConfig(n_range=(n, n), beta=2.0))
    return np.bincount([l.src for l in topo.links], minlength=n)


def _log_log_slope(degrees, n):
    values, counts = np.unique(degrees, return_counts=True)
    return stats.linregress(np.log(values), np.log(counts / n)).slope


def test_degree_distribution_decays():
    assert _log_log_slope(_generated_degrees(3, 300), 300) < 0


@pytest.mark.slow
def test_degree_slope_matches_reference_fit():
    n = 1000
    reference = np.median([_log_log_slope(_reference_plod_degrees(seed, n), n) for seed in range(50)])
    assert reference < 0
    slopes = np.array([_log_log_slope(_generated_degrees(seed, n), n) for seed in range(50)])
    assert np.all(slopes < 0)
    assert np.all(np.abs(slopes - reference) <= 0.4)


def test_traffic_scaling(triangle):
    for seed in range(10):
        tm = gen_traffic(seed, triangle, 1_234.5, 1_000.0)
        assert len(tm.demands) == 6
        assert tm.rates.mean() == pytest.approx(1_234.5, rel=1e-9)
        assert np.all((tm.rates >= 0) & (tm.rates <= 10 * 1_234.5))
    assert gen_traffic(3, triangle, 500.0, 1_000.0) == gen_traffic(3, triangle, 500.0, 1_000.0)


def test_traffic_rejects_nonpositive_intensity(triangle):
    with pytest.raises(ConfigError):
        gen_traffic(0, triangle, 0.0, 1_000.0)


def test_samples_respect_loss_cap():
    cfg = ScenarioConfig(n_range=(8, 10), intensity_range=(2_000.0, 6_000.0), max_loss=0.03)
    for index in range(10):
        sample = gen_sample(5, cfg, QueueingEvaluator(), index=index)
        assert max_link_blocking(sample.topology, sample.traffic, sample.routing) <= cfg.max_loss
        assert sample.intensity <= 6_000.0


def test_negligible_load_is_pure_transmission():
    cfg = ScenarioConfig(n_range=(6, 6), intensity_range=(1e-3, 1e-3))
    sample = gen_sample(9, cfg, QueueingEvaluator(), index=0)
    assert sample.intensity == pytest.approx(1e-3)
    service = cfg.mean_packet_size / sample.topology.capacities
    for i, pair in enumerate(sample.traffic.pairs):
        path = sample.routing.paths[pair]
        assert sample.label.paths[i].mean_delay == pytest.approx(service[path].sum(), rel=1e-4)


def test_unreachable_loss_cap_fails():
    cfg = ScenarioConfig(
        n_range=(4, 4), capacity_set=[10_000.0], buffer=1, intensity_range=(1e6, 1e6), max_loss=0.01
    )
    with pytest.raises(ScreeningFailed):
        gen_sample(0, cfg, QueueingEvaluator())


def test_weight_variants_alternate():
    cfg = ScenarioConfig(n_range=(6, 8))
    even = gen_sample(2, cfg, QueueingEvaluator(), index=0)
    odd = gen_sample(2, cfg, QueueingEvaluator(), index=1)
    assert set(even.routing.weights) == {1.0}
    low, high = PERTURBED_WEIGHT_RANGE
    assert all(low <= w <= high for w in odd.routing.weights)
    assert len(set(odd.routing.weights)) > 1


def test_derive_seed():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert len({derive_seed(1, i) for i in range(100)}) == 100
    assert derive_seed(1, 2) != derive_seed(2, 1)


def test_sample_round_trip(tmp_path, five_node_sample):
    path = save_sample(five_node_sample, tmp_path / "sample_0.json")
    loaded = load_sample(path)
    assert loaded.model_dump_json() == five_node_sample.model_dump_json()
    assert loaded.routing.paths == five_node_sample.routing.paths


def test_saved_sample_bytes_are_stable(tmp_path, five_node_sample):
    first = save_sample(five_node_sample, tmp_path / "a.json").read_bytes()
    again = save_sample(load_sample(tmp_path / "a.json"), tmp_path / "b.json").read_bytes()
    assert first == again
    document = json.loads(first)
    assert list(document) == list(Sample.model_fields)
    assert "paths" not in document["routing"]


def test_dataset_is_byte_identical(tmp_path):
    cfg = ScenarioConfig(n_range=(8, 10))
    first = save_dataset(generate_dataset(21, cfg, QueueingEvaluator(), 6, progress=False), tmp_path / "a")
    second = save_dataset(generate_dataset(21, cfg, QueueingEvaluator(), 6, progress=False), tmp_path / "b")
    assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]

    loaded = load_dataset(tmp_path / "a")
    assert [s.index for s in loaded] == list(range(6))
    assert size_bucket(loaded) == f"{min(s.topology.nodes for s in loaded)}-{max(s.topology.nodes for s in loaded)}"


def test_parallel_generation_matches_serial():
    cfg = ScenarioConfig(n_range=(6, 8))
    serial = generate_dataset(4, cfg, QueueingEvaluator(), 4, jobs=1, progress=False)
    parallel = generate_dataset(4, cfg, QueueingEvaluator(), 4, jobs=2, progress=False)
    assert [s.model_dump_json() for s in serial] == [s.model_dump_json() for s in parallel]


def test_dataset_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    sample_path(tmp_path, 0).write_text("{not json")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


if __name__ == "__main__":
    pytest.main([__file__])
