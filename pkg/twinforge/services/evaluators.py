"""
Performance evaluators
Every evaluator maps (topology, traffic, routing) to per-path PathMetrics, so the
simulator, the analytical model and the learned twin are interchangeable.
"""
import logging
from typing import Optional

from ..errors import ConfigError
from ..ml_models.delay_twin import build_tensors, predict
from ..models.schemas import (
    EvaluatorKind,
    PathMetric,
    PathMetrics,
    QtConfig,
    RoutingConfig,
    SimConfig,
    Topology,
    TrafficMatrix,
)
from .packet_simulator import simulate, warn_if_expensive
from .queueing_model import qt_path_metrics

logger = logging.getLogger(__name__)


class QueueingEvaluator:
    name = EvaluatorKind.QT.value

    def __init__(self, config: Optional[QtConfig] = None):
        self.config = config or QtConfig()

    def evaluate(self, topo: Topology, tm: TrafficMatrix, routing: RoutingConfig, seed: Optional[int] = None) -> PathMetrics:
        return qt_path_metrics(topo, tm, routing, self.config)


class SimulatorEvaluator:
    name = EvaluatorKind.SIM.value

    def __init__(self, config: Optional[SimConfig] = None, warn_events: Optional[float] = None):
        self.config = config or SimConfig()
        self.warn_events = warn_events

    def evaluate(self, topo: Topology, tm: TrafficMatrix, routing: RoutingConfig, seed: Optional[int] = None) -> PathMetrics:
        cfg = self.config if seed is None else self.config.model_copy(update={"seed": seed % 2**64})
        if self.warn_events is not None:
            warn_if_expensive(cfg, tm, routing, self.warn_events)
        return simulate(topo, tm, routing, cfg)


class TwinEvaluator:
    """Wraps a trained DelayTwin; reports delay only (loss is 0)"""

    name = EvaluatorKind.TWIN.value

    def __init__(self, model):
        self.model = model

    def evaluate(self, topo: Topology, tm: TrafficMatrix, routing: RoutingConfig, seed: Optional[int] = None) -> PathMetrics:
        delays = predict(self.model, build_tensors(topo, tm, routing, self.model.scales))
        return PathMetrics(
            paths=[
                PathMetric(src=s, dst=d, mean_delay=float(delay), loss=0.0)
                for (s, d), delay in zip(tm.pairs, delays)
            ]
        )


def build_evaluator(
    kind: EvaluatorKind,
    sim_config: Optional[SimConfig] = None,
    qt_config: Optional[QtConfig] = None,
    model=None,
    warn_events: Optional[float] = None,
):
    kind = EvaluatorKind(kind)
    if kind == EvaluatorKind.QT:
        return QueueingEvaluator(qt_config)
    if kind == EvaluatorKind.SIM:
        return SimulatorEvaluator(sim_config, warn_events)
    if model is None:
        raise ConfigError("the twin evaluator needs a trained model file", details={"field": "model"})
    return TwinEvaluator(model)
