"""
Shared fixtures: tiny hand-built networks and a labeled 5-node sample
"""
from typing import Dict, Sequence, Tuple

import pytest

from twinforge.models.schemas import Demand, Link, ScenarioConfig, Topology, TrafficMatrix
from twinforge.services.evaluators import QueueingEvaluator
from twinforge.services.scenario_generator import gen_sample


def build_topology(nodes: int, edges: Sequence[Tuple[int, int]], capacity=10_000.0, buffer: int = 32) -> Topology:
    """Both directions of every edge; link ids follow edge order (u->v, then v->u).
    `capacity` may be a scalar or a per-edge sequence."""
    capacities = capacity if isinstance(capacity, (list, tuple)) else [capacity] * len(edges)
    links = []
    for (u, v), c in zip(edges, capacities):
        links.append(Link(src=u, dst=v, capacity=float(c), buffer=buffer))
        links.append(Link(src=v, dst=u, capacity=float(c), buffer=buffer))
    return Topology(nodes=nodes, links=links)


def build_traffic(rates: Dict[Tuple[int, int], float], mean_packet_size: float = 1_000.0) -> TrafficMatrix:
    return TrafficMatrix(
        demands=[Demand(src=s, dst=d, rate=r) for (s, d), r in rates.items()],
        mean_packet_size=mean_packet_size,
    )


@pytest.fixture
def make_topology():
    return build_topology


@pytest.fixture
def make_traffic():
    return build_traffic


@pytest.fixture
def triangle() -> Topology:
    # links: 0:0->1 1:1->0 2:1->2 3:2->1 4:0->2 5:2->0
    return build_topology(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def single_link() -> Topology:
    # links: 0:0->1 1:1->0
    return build_topology(2, [(0, 1)], capacity=100_000.0, buffer=10)


@pytest.fixture(scope="session")
def five_node_sample():
    return gen_sample(11, ScenarioConfig(n_range=(5, 5), intensity_range=(500.0, 1500.0)), QueueingEvaluator(), index=0)
