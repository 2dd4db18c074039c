"""
Routing Optimizer
Natural evolution strategies over link weights, scored by a fast evaluator (twin or
analytical model). The simulator only measures the final answer.
"""
import logging
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata

from ..errors import EvaluatorFailure
from ..models.schemas import EsConfig, IterationRecord, OptimizationTrace, Topology, TrafficMatrix
from .routing import MIN_WEIGHT, derive_routing

logger = logging.getLogger(__name__)


def fitness(weights: Sequence[float], topo: Topology, tm: TrafficMatrix, evaluator) -> float:
    """Unweighted mean per-path delay (seconds) of the routing induced by `weights`"""
    routing = derive_routing(topo, weights)
    metrics = evaluator.evaluate(topo, tm, routing)
    delays = metrics.delays[metrics.measured]
    return float(delays.mean()) if len(delays) else 0.0


def rank_utilities(values: np.ndarray) -> np.ndarray:
    """Zero-mean centered ranks in [-0.5, 0.5]; ties share their average rank"""
    n = len(values)
    if n < 2:
        return np.zeros(n)
    ranks = rankdata(values, method="average") - 1.0
    return ranks / (n - 1) - 0.5


class NesRoutingOptimizer:
    """Mirrored-sampling NES with rank-shaped utilities, descending on mean delay"""

    def __init__(self, topo: Topology, tm: TrafficMatrix, evaluator, config: Optional[EsConfig] = None, jobs: int = 1):
        self.topo = topo
        self.tm = tm
        self.evaluator = evaluator
        self.config = config or EsConfig()
        self.jobs = jobs
        self.trace = OptimizationTrace()
        self.theta: Optional[np.ndarray] = None

    def _score(self, candidates: np.ndarray) -> np.ndarray:
        try:
            if self.jobs == 1:
                values = [fitness(w, self.topo, self.tm, self.evaluator) for w in candidates]
            else:
                values = Parallel(n_jobs=self.jobs)(
                    delayed(fitness)(w, self.topo, self.tm, self.evaluator) for w in candidates
                )
        except Exception as e:
            raise EvaluatorFailure(f"fitness evaluation failed: {e}", trace=self.trace) from e
        return np.asarray(values, dtype=np.float64)

    def run(self, measurer=None) -> OptimizationTrace:
        cfg = self.config
        n_links = len(self.topo.links)
        rng = np.random.default_rng(cfg.seed)

        # Equal weights are scored first and stay eligible as the answer
        theta = np.ones(n_links)
        baseline = float(self._score(theta[None, :])[0])
        trace = self.trace
        trace.baseline_fitness = baseline
        trace.best_fitness = baseline
        trace.best_weights = theta.tolist()
        logger.info(f"Equal-weight baseline: {baseline:.6f} s mean delay ({self.evaluator.name})")

        stale = 0
        half = cfg.population // 2
        for iteration in range(1, cfg.iterations + 1):
            eps = rng.standard_normal((half, n_links))
            directions = np.vstack([eps, -eps])
            candidates = np.maximum(theta + cfg.sigma * directions, MIN_WEIGHT)
            values = self._score(candidates)

            utilities = rank_utilities(values)
            step = utilities @ directions / (cfg.population * cfg.sigma)
            theta = np.maximum(theta - cfg.learning_rate * step, MIN_WEIGHT)

            best = int(np.argmin(values))
            if values[best] < trace.best_fitness:
                trace.best_fitness = float(values[best])
                trace.best_weights = candidates[best].tolist()
                stale = 0
            else:
                stale += 1
            trace.records.append(
                IterationRecord(iteration=iteration, best_delay=trace.best_fitness, mean_delay=float(values.mean()))
            )
            if iteration % 10 == 0:
                logger.info(f"Iteration {iteration}: best {trace.best_fitness:.6f} s, population mean {values.mean():.6f} s")
            if cfg.patience and stale >= cfg.patience:
                logger.info(f"No improvement for {cfg.patience} iterations, stopping at iteration {iteration}")
                break

        self.theta = theta

        if measurer is not None:
            trace.simulated_delay = fitness(trace.best_weights, self.topo, self.tm, measurer)
            trace.baseline_simulated_delay = fitness(np.ones(n_links), self.topo, self.tm, measurer)
            logger.info(
                f"Simulated mean delay: {trace.simulated_delay:.6f} s optimized vs "
                f"{trace.baseline_simulated_delay:.6f} s equal weights"
            )
        return trace


def nes_optimize(
    topo: Topology,
    tm: TrafficMatrix,
    evaluator,
    cfg: Optional[EsConfig] = None,
    measurer=None,
    jobs: int = 1,
) -> OptimizationTrace:
    return NesRoutingOptimizer(topo, tm, evaluator, cfg, jobs).run(measurer)


def trace_rows(trace: OptimizationTrace) -> List[dict]:
    return [
        {"iter": r.iteration, "best_delay_s": r.best_delay, "mean_delay_s": r.mean_delay}
        for r in trace.records
    ]
