#!/usr/bin/env python3
"""
Queueing model tests
Closed forms against a numerically solved birth-death chain; fixed point against scalar iteration
"""
import numpy as np
import pytest

from twinforge.errors import InvalidInput
from twinforge.models.schemas import LinkState, QtConfig, ScenarioConfig, SimConfig
from twinforge.services.evaluators import QueueingEvaluator
from twinforge.services.packet_simulator import simulate
from twinforge.services.queueing_model import (
    ReducedLoadModel,
    link_utilization,
    mm1b_metrics,
    path_metrics_from_links,
    qt_path_metrics,
    reduced_load_fixed_point,
)
from twinforge.services.routing import derive_routing, equal_weights
from twinforge.services.scenario_generator import gen_sample, gen_topology, gen_traffic


def birth_death_oracle(rho, b, mu):
    """Stationary distribution of the M/M/1/b chain from its cut balance equations"""
    lam = rho * mu
    # lam * pi[k] == mu * pi[k + 1] across every cut between states k and k+1
    unnormalized = np.cumprod(np.concatenate([[1.0], np.full(b, lam / mu)]))
    pi = unnormalized / unnormalized.sum()
    blocking = pi[-1]
    queue_len = float(np.dot(np.arange(b + 1), pi))
    return blocking, queue_len, queue_len / (lam * (1.0 - blocking))


def test_matches_birth_death_chain():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        rho = rng.uniform(0.05, 3.0)
        b = int(rng.integers(1, 65))
        mu = rng.uniform(0.5, 50.0)
        expected = birth_death_oracle(rho, b, mu)
        got = mm1b_metrics(rho, b, mu)
        for value, oracle in zip(got, expected):
            assert value == pytest.approx(oracle, rel=1e-9)


def test_half_load_reference_values():
    blocking, queue_len, sojourn = mm1b_metrics(0.5, 10, 1.0)
    assert blocking == pytest.approx(4.8852e-4, rel=1e-4)
    assert queue_len == pytest.approx(0.99463, rel=1e-5)
    assert sojourn == pytest.approx(1.9902, rel=1e-4)


def test_unit_load_is_uniform():
    blocking, queue_len, _ = mm1b_metrics(1.0, 10, 3.0)
    assert blocking == pytest.approx(1.0 / 11.0, rel=1e-12)
    assert queue_len == pytest.approx(5.0, rel=1e-12)


def test_empty_system_limit():
    blocking, queue_len, sojourn = mm1b_metrics(0.0, 8, 4.0)
    assert blocking == 0.0
    assert queue_len == 0.0
    assert sojourn == pytest.approx(0.25)
    blocking, _, sojourn = mm1b_metrics(1e-12, 8, 4.0)
    assert blocking < 1e-90
    assert sojourn == pytest.approx(0.25, rel=1e-9)


@pytest.mark.parametrize("rho", [1.0, 1.0 + 1e-12, 1.0 - 1e-12, 50.0, 1e6])
def test_degenerate_loads_are_finite(rho):
    values = mm1b_metrics(rho, 32, 10.0)
    assert all(np.isfinite(v) for v in values)
    assert 0.0 <= values[0] <= 1.0


@pytest.mark.parametrize("rho,b,mu", [(-0.1, 4, 1.0), (float("nan"), 4, 1.0), (0.5, 0, 1.0), (0.5, 4, 0.0)])
def test_rejects_invalid_arguments(rho, b, mu):
    with pytest.raises(InvalidInput):
        mm1b_metrics(rho, b, mu)
    with pytest.raises(ValueError):
        mm1b_metrics(rho, b, mu)


def test_single_link_equals_closed_form(single_link, make_traffic):
    tm = make_traffic({(0, 1): 70_000.0})  # rho = 0.7 on link 0
    routing = derive_routing(single_link, equal_weights(single_link))
    result = reduced_load_fixed_point(single_link, tm, routing)
    assert result.converged
    assert result.iterations <= 2
    blocking, queue_len, sojourn = mm1b_metrics(0.7, 10, 100.0)
    state = result.links[0]
    assert state.blocking == pytest.approx(blocking, rel=1e-12)
    assert state.mean_queue_len == pytest.approx(queue_len, rel=1e-12)
    assert state.mean_sojourn == pytest.approx(sojourn, rel=1e-12)

    metrics = qt_path_metrics(single_link, tm, routing)
    assert metrics.paths[0].mean_delay == pytest.approx(sojourn, rel=1e-12)
    assert metrics.paths[0].loss == pytest.approx(blocking, rel=1e-9)


def test_zero_traffic(make_topology, make_traffic):
    topo = make_topology(3, [(0, 1), (1, 2)], capacity=[10_000.0, 40_000.0])
    tm = make_traffic({(0, 2): 0.0, (2, 0): 0.0})
    result = reduced_load_fixed_point(topo, tm, derive_routing(topo, equal_weights(topo)))
    assert all(s.blocking == 0.0 for s in result.links)
    for state in result.links:
        assert state.mean_sojourn == pytest.approx(1.0 / state.service_rate)


def _hand_iterated_tandem(lam, mu, b):
    b1 = b2 = 0.0
    for _ in range(1000):
        n1 = mm1b_metrics(lam / mu, b, mu)[0]
        n2 = mm1b_metrics(lam * (1.0 - b1) / mu, b, mu)[0]
        if max(abs(n1 - b1), abs(n2 - b2)) < 1e-14:
            break
        b1, b2 = n1, n2
    return b1, b2


def test_tandem_matches_scalar_iteration(make_topology, make_traffic):
    topo = make_topology(3, [(0, 1), (1, 2)], capacity=10_000.0, buffer=16)
    lam, mu = 9.0, 10.0
    tm = make_traffic({(0, 2): lam * 1_000.0})
    result = reduced_load_fixed_point(topo, tm, derive_routing(topo, equal_weights(topo)))
    b1, b2 = _hand_iterated_tandem(lam, mu, 16)

    first, second = result.links[0], result.links[2]
    assert first.blocking == pytest.approx(b1, rel=1e-6)
    assert second.offered_load == pytest.approx(lam * (1.0 - b1), rel=1e-6)
    assert second.blocking == pytest.approx(b2, rel=1e-6)


def test_thinning_can_be_disabled(make_topology, make_traffic):
    topo = make_topology(3, [(0, 1), (1, 2)], capacity=10_000.0, buffer=16)
    tm = make_traffic({(0, 2): 9_000.0})
    result = reduced_load_fixed_point(topo, tm, derive_routing(topo, equal_weights(topo)), config=QtConfig(thinning=False))
    assert result.links[2].offered_load == pytest.approx(9.0)


def test_path_loss_combines_link_blocking():
    links = [
        LinkState(link=0, offered_load=1.0, service_rate=10.0, buffer=8, blocking=0.01, mean_queue_len=0.1, mean_sojourn=0.2),
        LinkState(link=1, offered_load=1.0, service_rate=10.0, buffer=8, blocking=0.02, mean_queue_len=0.1, mean_sojourn=0.3),
    ]
    metrics = path_metrics_from_links([[0, 1]], [(0, 2)], links, propagation_delay=0.01)
    assert metrics.paths[0].loss == pytest.approx(0.0298)
    assert metrics.paths[0].mean_delay == pytest.approx(0.52)


@pytest.fixture(scope="module")
def screened_samples():
    cfg = ScenarioConfig(n_range=(8, 14))
    return [gen_sample(77, cfg, QueueingEvaluator(), index=i) for i in range(50)]


def test_fixed_point_residual(screened_samples):
    cfg = QtConfig()
    for sample in screened_samples:
        model = ReducedLoadModel(sample.topology, sample.traffic, sample.routing, cfg)
        result = model.solve()
        assert result.converged
        blocking = np.array([s.blocking for s in result.links])
        _, target, _, _ = model.sweep(blocking)
        # One more damped iteration moves no blocking by more than tol
        assert np.max(np.abs(cfg.damping * (target - blocking))) <= cfg.tol


def test_thinning_bound(screened_samples):
    for sample in screened_samples[:10]:
        model = ReducedLoadModel(sample.topology, sample.traffic, sample.routing)
        result = model.solve()
        raw = model.offered_loads(np.zeros(len(sample.topology.links)))
        offered = np.array([s.offered_load for s in result.links])
        assert np.all(offered <= raw * (1 + 1e-12))


def test_congestion_is_monotone(screened_samples):
    for sample in screened_samples[:20]:
        base = reduced_load_fixed_point(sample.topology, sample.traffic, sample.routing)
        heavier = reduced_load_fixed_point(sample.topology, sample.traffic.scaled(1.5), sample.routing)
        for a, b in zip(base.links, heavier.links):
            assert b.blocking >= a.blocking - 1e-12


def test_link_utilization_report(triangle, make_traffic):
    tm = make_traffic({(0, 1): 5_000.0, (1, 2): 2_000.0})
    rows = link_utilization(triangle, tm, derive_routing(triangle, equal_weights(triangle)))
    assert len(rows) == len(triangle.links)
    assert set(rows[0]) == {"link", "src", "dst", "rho", "blocking", "sojourn_s"}
    assert rows[0]["rho"] == pytest.approx(0.5)
    assert rows[2]["rho"] == pytest.approx(0.2)
    assert rows[1]["rho"] == 0.0


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(3))
def test_low_load_agrees_with_simulator(seed):
    topo = gen_topology(seed, ScenarioConfig(n_range=(8, 8)))
    routing = derive_routing(topo, equal_weights(topo))
    unit = gen_traffic(seed, topo, 1_000.0, 1_000.0)
    offered = ReducedLoadModel(topo, unit, routing).offered_loads(np.zeros(len(topo.links)))
    rho = offered * unit.mean_packet_size / topo.capacities
    tm = unit.scaled(0.3 / rho.max())

    # About 10^6 injected packets
    duration = 1e6 / tm.packet_rates.sum()
    sim = simulate(topo, tm, routing, SimConfig(warmup=20.0, duration=duration, seed=seed))
    qt = qt_path_metrics(topo, tm, routing)
    assert sim.measured.all()
    relative = np.abs(qt.delays - sim.delays) / sim.delays
    assert np.mean(relative) < 0.05


if __name__ == "__main__":
    pytest.main([__file__])
