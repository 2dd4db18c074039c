#!/usr/bin/env python3
"""
Routing optimizer and what-if tests
"""
import itertools

import numpy as np
import pytest

from twinforge.errors import EvaluatorFailure, InvalidInput, UnreachableDestination
from twinforge.models.schemas import EsConfig, Sample, ScenarioConfig, SimConfig
from twinforge.services.evaluators import QueueingEvaluator, SimulatorEvaluator
from twinforge.services.queueing_model import mm1b_metrics, qt_path_metrics
from twinforge.services.routing import derive_routing, equal_weights
from twinforge.services.routing_optimizer import (
    NesRoutingOptimizer,
    fitness,
    nes_optimize,
    rank_utilities,
    trace_rows,
)
from twinforge.services.scenario_generator import gen_sample
from twinforge.services.what_if import remove_edge, what_if_link_failure


@pytest.fixture
def detour(make_topology, make_traffic):
    """Triangle whose direct 0->2 link is slow and loaded while the detour via 1 is fast"""
    topo = make_topology(3, [(0, 1), (1, 2), (0, 2)], capacity=[100_000.0, 100_000.0, 10_000.0])
    tm = make_traffic({(0, 2): 9_000.0})
    return topo, tm


def test_fitness_equals_hand_computed_mean(triangle, make_traffic):
    rates = {(s, d): 4_000.0 for s in range(3) for d in range(3) if s != d}
    tm = make_traffic(rates)
    # Every demand is one hop on its own link: rho = 0.4, b = 32, mu = 10
    expected = mm1b_metrics(0.4, 32, 10.0)[2]
    assert fitness(equal_weights(triangle), triangle, tm, QueueingEvaluator()) == pytest.approx(expected, rel=1e-12)


def test_fitness_ignores_weight_scale(detour):
    topo, tm = detour
    weights = np.array([1.0, 1.3, 2.0, 1.1, 2.5, 0.7])
    evaluator = QueueingEvaluator()
    assert fitness(weights, topo, tm, evaluator) == fitness(2 * weights, topo, tm, evaluator)


def test_zero_traffic_fitness_is_service_time(make_topology, make_traffic):
    topo = make_topology(3, [(0, 1), (1, 2), (0, 2)], capacity=[10_000.0, 25_000.0, 40_000.0])
    tm = make_traffic({(s, d): 0.0 for s in range(3) for d in range(3) if s != d})
    expected = np.mean(1_000.0 / topo.capacities)
    assert fitness(equal_weights(topo), topo, tm, QueueingEvaluator()) == pytest.approx(expected, rel=1e-12)


def test_rank_utilities():
    values = np.array([3.0, 1.0, 2.0, 5.0])
    u = rank_utilities(values)
    assert u.sum() == pytest.approx(0.0)
    assert np.array_equal(np.argsort(u), np.argsort(values))
    assert np.array_equal(rank_utilities(np.exp(values) * 4 + 1), u)
    assert np.array_equal(rank_utilities(np.full(6, 0.7)), np.zeros(6))


def test_constant_landscape_leaves_weights(triangle, make_traffic):
    tm = make_traffic({(s, d): 0.0 for s in range(3) for d in range(3) if s != d})
    optimizer = NesRoutingOptimizer(triangle, tm, QueueingEvaluator(), EsConfig(population=8, iterations=5, evaluator="qt"))
    trace = optimizer.run()
    assert np.array_equal(optimizer.theta, np.ones(6))
    assert trace.best_weights == [1.0] * 6


def test_finds_the_detour(detour):
    topo, tm = detour
    cfg = EsConfig(population=16, sigma=0.5, learning_rate=0.5, iterations=20, seed=1, evaluator="qt")
    trace = nes_optimize(topo, tm, QueueingEvaluator(), cfg)
    assert trace.best_fitness < 0.5 * trace.baseline_fitness
    routing = derive_routing(topo, trace.best_weights)
    assert routing.paths[(0, 2)] == [0, 2]


def test_matches_exhaustive_weight_search(make_topology, make_traffic):
    # 6-node ring: the 0-1-2-5 side is slow, the 0-3-4-5 side fast; equal weights tie and pick the slow side
    edges = [(0, 1), (1, 2), (2, 5), (0, 3), (3, 4), (4, 5)]
    topo = make_topology(6, edges, capacity=[10_000.0] * 3 + [100_000.0] * 3)
    tm = make_traffic({(0, 5): 4_000.0, (5, 0): 4_000.0})
    evaluator = QueueingEvaluator()

    exhaustive = min(
        fitness(np.repeat(w, 2), topo, tm, evaluator) for w in itertools.product((1.0, 2.0, 3.0), repeat=len(edges))
    )
    cfg = EsConfig(population=16, sigma=0.5, learning_rate=0.5, iterations=20, seed=3, evaluator="qt")
    trace = nes_optimize(topo, tm, evaluator, cfg)
    assert exhaustive < trace.baseline_fitness
    assert trace.best_fitness == pytest.approx(exhaustive, rel=1e-9)


def test_best_so_far_is_monotone_and_anchored():
    sample = gen_sample(4, ScenarioConfig(n_range=(8, 8), intensity_range=(2_500.0, 3_000.0)), QueueingEvaluator())
    cfg = EsConfig(population=8, iterations=15, seed=3, evaluator="qt")
    trace = nes_optimize(sample.topology, sample.traffic, QueueingEvaluator(), cfg)
    best = [r.best_delay for r in trace.records]
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert trace.best_fitness <= trace.baseline_fitness
    assert trace.best_fitness == best[-1]
    assert len(trace_rows(trace)) == 15


def test_same_seed_same_trace(detour):
    topo, tm = detour
    cfg = EsConfig(population=8, iterations=6, seed=9, evaluator="qt")
    first = nes_optimize(topo, tm, QueueingEvaluator(), cfg)
    second = nes_optimize(topo, tm, QueueingEvaluator(), cfg)
    assert first == second


def test_parallel_scoring_matches_serial(detour):
    topo, tm = detour
    cfg = EsConfig(population=8, iterations=3, seed=9, evaluator="qt")
    assert nes_optimize(topo, tm, QueueingEvaluator(), cfg, jobs=2) == nes_optimize(topo, tm, QueueingEvaluator(), cfg)


def test_patience_stops_early(triangle, make_traffic):
    tm = make_traffic({(0, 1): 1_000.0})
    cfg = EsConfig(population=4, iterations=100, patience=3, evaluator="qt")
    trace = nes_optimize(triangle, tm, QueueingEvaluator(), cfg)
    assert len(trace.records) == 3


class FlakyEvaluator(QueueingEvaluator):
    name = "flaky"

    def __init__(self, fail_after):
        super().__init__()
        self.calls = 0
        self.fail_after = fail_after

    def evaluate(self, topo, tm, routing, seed=None):
        self.calls += 1
        if self.calls > self.fail_after:
            raise RuntimeError("backend went away")
        return super().evaluate(topo, tm, routing, seed)


def test_evaluator_failure_carries_partial_trace(detour):
    topo, tm = detour
    # baseline + one full iteration of 4 candidates, then the second iteration fails
    with pytest.raises(EvaluatorFailure) as info:
        nes_optimize(topo, tm, FlakyEvaluator(fail_after=6), EsConfig(population=4, iterations=5, evaluator="qt"))
    assert len(info.value.trace.records) == 1
    assert info.value.trace.baseline_fitness is not None


def test_final_measurement_on_simulator(detour):
    topo, tm = detour
    cfg = EsConfig(population=8, sigma=0.5, learning_rate=0.5, iterations=10, seed=1, evaluator="qt")
    measurer = SimulatorEvaluator(SimConfig(warmup=5.0, duration=300.0, seed=2))
    trace = nes_optimize(topo, tm, QueueingEvaluator(), cfg, measurer=measurer)
    assert trace.simulated_delay is not None
    assert trace.simulated_delay < trace.baseline_simulated_delay
    assert 0 < trace.improvement < 1


def test_es_config_validation():
    with pytest.raises(ValueError):
        EsConfig(population=5)
    with pytest.raises(ValueError):
        EsConfig(evaluator="sim")


def test_what_if_detour(detour):
    topo, tm = detour
    sample_routing = derive_routing(topo, equal_weights(topo))
    sample = Sample(topology=topo, traffic=tm, routing=sample_routing)
    report = what_if_link_failure(sample, 4, QueueingEvaluator())
    assert report.removed_links == [4, 5]
    assert len(report.paths) == 1
    before = qt_path_metrics(topo, tm, sample_routing).paths[0].mean_delay
    assert report.paths[0].delay_before_s == pytest.approx(before)
    # Rerouted over the two fast links
    assert report.paths[0].delay_after_s < report.paths[0].delay_before_s
    assert report.mean_delay_change < 0


def test_what_if_rejects_bad_links(make_topology, make_traffic):
    line = make_topology(3, [(0, 1), (1, 2)])
    tm = make_traffic({(0, 2): 1_000.0})
    sample = Sample(topology=line, traffic=tm, routing=derive_routing(line, equal_weights(line)))
    with pytest.raises(UnreachableDestination):
        what_if_link_failure(sample, 0, QueueingEvaluator())
    with pytest.raises(InvalidInput):
        remove_edge(line, 9)


@pytest.mark.slow
def test_congested_fourteen_nodes_improve():
    sample = gen_sample(14, ScenarioConfig(n_range=(14, 14), intensity_range=(3_000.0, 3_000.0)), QueueingEvaluator())
    cfg = EsConfig(iterations=200, seed=0, evaluator="qt")
    trace = nes_optimize(sample.topology, sample.traffic, QueueingEvaluator(), cfg)
    assert trace.best_fitness < trace.baseline_fitness


if __name__ == "__main__":
    pytest.main([__file__])
