"""
Packet-level discrete-event simulator
Poisson arrivals per demand, exponential packet sizes resampled at every hop,
FIFO drop-tail queues with a packet-count buffer on every link.
"""
import heapq
import logging
from collections import deque
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field

from ..models.schemas import (
    PathMetric,
    PathMetrics,
    RoutingConfig,
    SimConfig,
    Topology,
    TrafficMatrix,
)
from .routing import demand_paths

logger = logging.getLogger(__name__)

INJECT, DEPART, ARRIVE = 0, 1, 2


class LinkStats(BaseModel):
    arrivals: int = 0
    departures: int = 0
    drops: int = 0
    in_system: int = Field(0, description="Packets still queued when the run ended")
    time_avg_occupancy: float = Field(0.0, description="Mean packets in system over the measured window")
    throughput: float = Field(0.0, description="Departures per second over the measured window")
    mean_sojourn: float = Field(0.0, description="Mean seconds from arrival to departure, measured window")


class SimulationResult(BaseModel):
    metrics: PathMetrics
    links: List[LinkStats]
    events: int = Field(..., description="Events processed by the run")


class _ExpStream:
    """Unit-mean exponential draws served from batched numpy calls"""

    def __init__(self, rng: np.random.Generator, batch: int = 8192):
        self._rng = rng
        self._batch = batch
        self._buf: List[float] = []
        self._pos = 0

    def next(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._rng.standard_exponential(self._batch).tolist()
            self._pos = 0
        value = self._buf[self._pos]
        self._pos += 1
        return value


class PacketSimulator:
    """Single-threaded, seeded simulation of one (topology, traffic, routing) scenario"""

    def __init__(self, topo: Topology, tm: TrafficMatrix, routing: RoutingConfig, config: Optional[SimConfig] = None):
        self.topo = topo
        self.tm = tm
        self.config = config or SimConfig()
        self.paths = demand_paths(routing, tm.pairs)
        self.lam = tm.packet_rates.tolist()
        # Mean service time per link: mean packet size / capacity
        self.mean_service = (tm.mean_packet_size / topo.capacities).tolist()
        self.buffers = topo.buffers.tolist()

    def run(self) -> SimulationResult:
        cfg = self.config
        warmup = cfg.warmup
        end = cfg.warmup + cfg.duration
        prop = cfg.propagation_delay

        arrival_seq, service_seq = np.random.SeedSequence(cfg.seed).spawn(2)
        interarrival = _ExpStream(np.random.default_rng(arrival_seq))
        service = _ExpStream(np.random.default_rng(service_seq))

        n_links = len(self.topo.links)
        n_flows = len(self.paths)
        queues = [deque() for _ in range(n_links)]
        link_arrivals = [0] * n_links
        link_departures = [0] * n_links
        link_drops = [0] * n_links
        # Occupancy integral and sojourn totals over [warmup, end]
        area = [0.0] * n_links
        last_change = [0.0] * n_links
        sojourn_sum = [0.0] * n_links
        sojourn_count = [0] * n_links

        delivered = [0] * n_flows
        dropped = [0] * n_flows
        delay_sum = [0.0] * n_flows

        heap = []
        seq = 0
        for flow in range(n_flows):
            if self.lam[flow] > 0 and self.paths[flow]:
                heapq.heappush(heap, (interarrival.next() / self.lam[flow], seq, INJECT, flow))
                seq += 1

        def account(link: int, now: float) -> None:
            lo = max(last_change[link], warmup)
            if now > lo:
                area[link] += len(queues[link]) * (now - lo)
            last_change[link] = now

        def enqueue(packet: list, now: float) -> None:
            nonlocal seq
            link = self.paths[packet[0]][packet[1]]
            link_arrivals[link] += 1
            queue = queues[link]
            if len(queue) >= self.buffers[link]:
                link_drops[link] += 1
                if packet[3]:
                    dropped[packet[0]] += 1
                return
            account(link, now)
            packet[4] = now
            queue.append(packet)
            if len(queue) == 1:
                heapq.heappush(heap, (now + service.next() * self.mean_service[link], seq, DEPART, link))
                seq += 1

        events = 0
        while heap and heap[0][0] <= end:
            now, _, kind, target = heapq.heappop(heap)
            events += 1

            if kind == INJECT:
                flow = target
                # packet: [flow, hop, injected_at, counted, arrived_at_link]
                enqueue([flow, 0, now, now >= warmup, now], now)
                heapq.heappush(heap, (now + interarrival.next() / self.lam[flow], seq, INJECT, flow))
                seq += 1

            elif kind == DEPART:
                link = target
                account(link, now)
                queue = queues[link]
                packet = queue.popleft()
                link_departures[link] += 1
                if packet[4] >= warmup:
                    sojourn_sum[link] += now - packet[4]
                    sojourn_count[link] += 1
                if queue:
                    heapq.heappush(heap, (now + service.next() * self.mean_service[link], seq, DEPART, link))
                    seq += 1

                packet[1] += 1
                if packet[1] == len(self.paths[packet[0]]):
                    if packet[3]:
                        delivered[packet[0]] += 1
                        delay_sum[packet[0]] += now + prop - packet[2]
                elif prop > 0:
                    heapq.heappush(heap, (now + prop, seq, ARRIVE, packet))
                    seq += 1
                else:
                    enqueue(packet, now)

            else:
                enqueue(target, now)

        for link in range(n_links):
            account(link, end)
            # Conservation: every arrival was dropped, departed, or is still queued
            assert link_arrivals[link] == link_departures[link] + link_drops[link] + len(queues[link]), (
                f"packet conservation violated on link {link}"
            )

        entries = []
        for flow, (src, dst) in enumerate(self.tm.pairs):
            resolved = delivered[flow] + dropped[flow]
            entries.append(
                PathMetric(
                    src=src,
                    dst=dst,
                    mean_delay=delay_sum[flow] / delivered[flow] if delivered[flow] else 0.0,
                    loss=dropped[flow] / resolved if resolved else 0.0,
                    delivered=delivered[flow],
                )
            )

        links = [
            LinkStats(
                arrivals=link_arrivals[i],
                departures=link_departures[i],
                drops=link_drops[i],
                in_system=len(queues[i]),
                time_avg_occupancy=area[i] / cfg.duration,
                throughput=sojourn_count[i] / cfg.duration,
                mean_sojourn=sojourn_sum[i] / sojourn_count[i] if sojourn_count[i] else 0.0,
            )
            for i in range(n_links)
        ]
        logger.debug(f"Simulation finished: {events} events, {sum(delivered)} packets delivered")
        return SimulationResult(metrics=PathMetrics(paths=entries), links=links, events=events)


def simulate(topo: Topology, tm: TrafficMatrix, routing: RoutingConfig, cfg: Optional[SimConfig] = None) -> PathMetrics:
    return PacketSimulator(topo, tm, routing, cfg).run().metrics


def event_count_guard(cfg: SimConfig, tm: TrafficMatrix, mean_hops: float = 1.0) -> float:
    """Expected events of a run: one injection per packet plus one departure per hop"""
    total_rate = float(np.sum(tm.packet_rates))
    return total_rate * (cfg.warmup + cfg.duration) * (1.0 + mean_hops)


def mean_hops(routing: RoutingConfig, tm: TrafficMatrix) -> float:
    """Traffic-weighted mean path length"""
    rates = tm.packet_rates
    lengths = np.array([len(p) for p in demand_paths(routing, tm.pairs)], dtype=np.float64)
    if rates.sum() <= 0:
        return float(lengths.mean()) if len(lengths) else 0.0
    return float(np.dot(rates, lengths) / rates.sum())


def warn_if_expensive(cfg: SimConfig, tm: TrafficMatrix, routing: RoutingConfig, threshold: float) -> float:
    estimate = event_count_guard(cfg, tm, mean_hops(routing, tm))
    if estimate > threshold:
        logger.warning(f"Simulation estimated at {estimate:.3g} events; consider a shorter --sim-duration")
    return estimate
