"""
Analytical delay model
Every link is a finite M/M/1/b queue; links are coupled through a reduced-load
fixed point in which upstream blocking thins the traffic offered downstream.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InvalidInput
from ..models.schemas import (
    FixedPointResult,
    LinkState,
    PathMetric,
    PathMetrics,
    QtConfig,
    RoutingConfig,
    Topology,
    TrafficMatrix,
)
from .routing import demand_paths, padded_paths

logger = logging.getLogger(__name__)

UNIT_LOAD_WINDOW = 1e-9


def mm1b_arrays(rho: np.ndarray, b: np.ndarray, mu: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized M/M/1/b blocking, mean number in system and mean sojourn"""
    rho = np.asarray(rho, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    rho, b, mu = np.broadcast_arrays(rho, b, mu)

    blocking = np.empty_like(rho)
    queue_len = np.empty_like(rho)

    near_one = np.abs(rho - 1.0) < UNIT_LOAD_WINDOW
    low = (rho < 1.0) & ~near_one
    high = (rho > 1.0) & ~near_one

    # Uniform stationary distribution at rho == 1
    blocking[near_one] = 1.0 / (b[near_one] + 1.0)
    queue_len[near_one] = b[near_one] / 2.0

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # rho < 1: rho^k written through exp/expm1 to keep 1 - rho^(b+1) accurate
        r, n = rho[low], b[low]
        log_r = np.log(r)
        rho_b = np.exp(n * log_r)
        one_minus = -np.expm1((n + 1.0) * log_r)
        blocking[low] = (1.0 - r) * rho_b / one_minus
        queue_len[low] = r / (1.0 - r) - (n + 1.0) * rho_b * r / one_minus

        # rho > 1: same closed forms rewritten in s = 1/rho, finite for rho >> 1
        s, n = 1.0 / rho[high], b[high]
        one_minus = -np.expm1((n + 1.0) * np.log(s))
        blocking[high] = (1.0 - s) / one_minus
        queue_len[high] = (n + 1.0) / one_minus - 1.0 / (1.0 - s)

    throughput = rho * mu * (1.0 - blocking)
    with np.errstate(divide="ignore", invalid="ignore"):
        sojourn = np.where(throughput > 0, queue_len / np.where(throughput > 0, throughput, 1.0), 1.0 / mu)
    return blocking, queue_len, sojourn


def mm1b_metrics(rho: float, b: int, mu: float) -> Tuple[float, float, float]:
    """Blocking probability, mean number in system and mean sojourn (s) of an M/M/1/b queue"""
    if rho < 0 or not np.isfinite(rho):
        raise InvalidInput(f"utilization must be a finite value >= 0, got {rho}")
    if b < 1:
        raise InvalidInput(f"buffer must be >= 1 packet, got {b}")
    if mu <= 0:
        raise InvalidInput(f"service rate must be > 0, got {mu}")
    blocking, queue_len, sojourn = mm1b_arrays(np.array([rho]), np.array([b]), np.array([mu]))
    return float(blocking[0]), float(queue_len[0]), float(sojourn[0])


class ReducedLoadModel:
    """Reduced-load fixed point over a routed traffic matrix"""

    def __init__(self, topo: Topology, tm: TrafficMatrix, routing: RoutingConfig, config: Optional[QtConfig] = None):
        self.topo = topo
        self.tm = tm
        self.config = config or QtConfig()
        self.paths = demand_paths(routing, tm.pairs)
        self.path_matrix, self.path_mask = padded_paths(self.paths)
        self.lam = tm.packet_rates
        self.mu = topo.capacities / tm.mean_packet_size
        self.buffers = topo.buffers.astype(np.float64)

    def offered_loads(self, blocking: np.ndarray) -> np.ndarray:
        """Packets/s offered to each link given current per-link blocking"""
        n_links = len(self.topo.links)
        if not self.paths:
            return np.zeros(n_links)
        safe_ids = np.where(self.path_mask, self.path_matrix, 0)
        survive = np.where(self.path_mask, 1.0 - blocking[safe_ids], 1.0)
        if self.config.thinning:
            upstream = np.cumprod(survive, axis=1)
            upstream = np.concatenate([np.ones((len(self.paths), 1)), upstream[:, :-1]], axis=1)
        else:
            upstream = np.ones_like(survive)
        contrib = self.lam[:, None] * upstream
        return np.bincount(
            self.path_matrix[self.path_mask],
            weights=contrib[self.path_mask],
            minlength=n_links,
        )

    def sweep(self, blocking: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        load = self.offered_loads(blocking)
        new_blocking, queue_len, sojourn = mm1b_arrays(load / self.mu, self.buffers, self.mu)
        return load, new_blocking, queue_len, sojourn

    def solve(self) -> FixedPointResult:
        cfg = self.config
        blocking = np.zeros(len(self.topo.links))
        residual = np.inf
        converged = False
        iterations = 0

        for iterations in range(1, cfg.max_iter + 1):
            _, target, _, _ = self.sweep(blocking)
            # The first sweep from the empty start is taken whole
            step = 1.0 if iterations == 1 else cfg.damping
            updated = blocking + step * (target - blocking)
            residual = float(np.max(np.abs(updated - blocking), initial=0.0))
            blocking = updated
            if residual < cfg.tol:
                converged = True
                break

        if not converged:
            logger.warning(f"Reduced-load fixed point did not converge in {cfg.max_iter} iterations (residual {residual:.3e})")

        load, final_blocking, queue_len, sojourn = self.sweep(blocking)
        states = [
            LinkState(
                link=i,
                offered_load=float(load[i]),
                service_rate=float(self.mu[i]),
                buffer=int(self.buffers[i]),
                blocking=float(final_blocking[i]),
                mean_queue_len=float(queue_len[i]),
                mean_sojourn=float(sojourn[i]),
            )
            for i in range(len(self.topo.links))
        ]
        return FixedPointResult(links=states, iterations=iterations, converged=converged, residual=residual)


def reduced_load_fixed_point(
    topo: Topology,
    tm: TrafficMatrix,
    routing: RoutingConfig,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    config: Optional[QtConfig] = None,
) -> FixedPointResult:
    cfg = config or QtConfig(tol=tol, max_iter=max_iter)
    return ReducedLoadModel(topo, tm, routing, cfg).solve()


def path_metrics_from_links(
    paths: Sequence[Sequence[int]],
    pairs: Sequence[Tuple[int, int]],
    links: Sequence[LinkState],
    propagation_delay: float = 0.0,
    converged: bool = True,
) -> PathMetrics:
    sojourn = np.array([s.mean_sojourn for s in links])
    survive = np.array([1.0 - s.blocking for s in links])
    entries: List[PathMetric] = []
    for (src, dst), path in zip(pairs, paths):
        delay = float(np.sum(sojourn[path])) + propagation_delay * len(path)
        loss = 1.0 - float(np.prod(survive[path]))
        entries.append(PathMetric(src=src, dst=dst, mean_delay=delay, loss=min(max(loss, 0.0), 1.0)))
    return PathMetrics(paths=entries, converged=converged)


def qt_path_metrics(
    topo: Topology,
    tm: TrafficMatrix,
    routing: RoutingConfig,
    config: Optional[QtConfig] = None,
) -> PathMetrics:
    """Per-demand delay (sum of link sojourns) and loss (1 - product of link pass probabilities)"""
    cfg = config or QtConfig()
    model = ReducedLoadModel(topo, tm, routing, cfg)
    result = model.solve()
    return path_metrics_from_links(model.paths, tm.pairs, result.links, cfg.propagation_delay, result.converged)


def max_link_blocking(topo: Topology, tm: TrafficMatrix, routing: RoutingConfig, config: Optional[QtConfig] = None) -> float:
    result = ReducedLoadModel(topo, tm, routing, config).solve()
    return max((s.blocking for s in result.links), default=0.0)


def link_utilization(
    topo: Topology,
    tm: TrafficMatrix,
    routing: RoutingConfig,
    config: Optional[QtConfig] = None,
) -> List[dict]:
    """Per-link utilization report from the converged fixed point"""
    result = ReducedLoadModel(topo, tm, routing, config).solve()
    return [
        {
            "link": state.link,
            "src": topo.links[state.link].src,
            "dst": topo.links[state.link].dst,
            "rho": state.utilization,
            "blocking": state.blocking,
            "sojourn_s": state.mean_sojourn,
        }
        for state in result.links
    ]
