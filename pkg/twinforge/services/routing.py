"""
Destination-based shortest-path routing
Link weights -> one forwarding tree per destination -> explicit paths for every demand pair
"""
import heapq
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import UnknownPair, UnreachableDestination
from ..models.schemas import RoutingConfig, Topology

logger = logging.getLogger(__name__)

MIN_WEIGHT = 1e-3
# Relative slack when comparing path costs
TIE_TOLERANCE = 1e-9


def clamp_weights(weights: Sequence[float]) -> np.ndarray:
    return np.maximum(np.asarray(weights, dtype=np.float64), MIN_WEIGHT)


def distances_to(topo: Topology, weights: np.ndarray, dest: int) -> np.ndarray:
    """Shortest cost from every node to dest (Dijkstra over reversed links)"""
    in_links: List[List[int]] = [[] for _ in range(topo.nodes)]
    for i, link in enumerate(topo.links):
        in_links[link.dst].append(i)

    dist = np.full(topo.nodes, np.inf)
    dist[dest] = 0.0
    heap = [(0.0, dest)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        for link_id in in_links[node]:
            upstream = topo.links[link_id].src
            candidate = d + weights[link_id]
            if candidate < dist[upstream]:
                dist[upstream] = candidate
                heapq.heappush(heap, (candidate, upstream))
    return dist


def next_hops(topo: Topology, weights: np.ndarray, dest: int) -> Dict[int, int]:
    """Next-hop link id toward dest for every other node; ties go to the smallest next-hop node"""
    dist = distances_to(topo, weights, dest)
    unreachable = [v for v in range(topo.nodes) if not np.isfinite(dist[v])]
    if unreachable:
        raise UnreachableDestination(
            f"destination {dest} unreachable from nodes {unreachable}",
            details={"destination": dest, "sources": unreachable},
        )

    table: Dict[int, int] = {}
    for node, links in enumerate(topo.out_links()):
        if node == dest:
            continue
        best: Optional[Tuple[int, int]] = None
        for link_id in links:
            neighbor = topo.links[link_id].dst
            cost = weights[link_id] + dist[neighbor]
            # Next hop must be strictly closer to dest
            if dist[neighbor] < dist[node] and cost <= dist[node] * (1.0 + TIE_TOLERANCE):
                if best is None or neighbor < best[0]:
                    best = (neighbor, link_id)
        table[node] = best[1]
    return table


def derive_routing(topo: Topology, weights: Sequence[float]) -> RoutingConfig:
    """Build the RoutingConfig (weights plus materialized paths) for all ordered pairs"""
    if len(weights) != len(topo.links):
        raise ValueError(f"expected {len(topo.links)} weights, got {len(weights)}")
    w = clamp_weights(weights)

    paths: Dict[Tuple[int, int], List[int]] = {}
    for dest in range(topo.nodes):
        table = next_hops(topo, w, dest)
        for src in range(topo.nodes):
            if src == dest:
                continue
            path = []
            node = src
            while node != dest:
                link_id = table[node]
                path.append(link_id)
                node = topo.links[link_id].dst
            paths[(src, dest)] = path

    return RoutingConfig(weights=[float(x) for x in w], paths=paths)


def equal_weights(topo: Topology) -> List[float]:
    return [1.0] * len(topo.links)


def links_of_path(routing: RoutingConfig, src: int, dst: int) -> List[int]:
    try:
        return routing.paths[(src, dst)]
    except KeyError:
        raise UnknownPair(f"no path stored for pair ({src}, {dst})", details={"src": src, "dst": dst}) from None


def path_cost(weights: Sequence[float], path: Sequence[int]) -> float:
    return float(sum(weights[i] for i in path))


def demand_paths(routing: RoutingConfig, pairs: Sequence[Tuple[int, int]]) -> List[List[int]]:
    """Paths in demand order"""
    return [links_of_path(routing, s, d) for s, d in pairs]


def padded_paths(paths: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    """(P x K) link-id matrix padded with -1 and the matching mask"""
    max_len = max((len(p) for p in paths), default=0)
    matrix = np.full((len(paths), max(max_len, 1)), -1, dtype=np.int64)
    for i, path in enumerate(paths):
        matrix[i, : len(path)] = path
    return matrix, matrix >= 0
