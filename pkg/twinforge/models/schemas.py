from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional, Dict, Tuple, Any
from datetime import datetime
from enum import Enum
from functools import cached_property

import numpy as np


class TwinMode(str, Enum):
    MESSAGE_PASSING = "message-passing"
    RNN_BASELINE = "rnn-baseline"


class LossKind(str, Enum):
    MAPE = "mape"
    MSE_LOG = "mse-log"


class EvaluatorKind(str, Enum):
    SIM = "sim"
    QT = "qt"
    TWIN = "twin"


# ---------------------------------------------------------------------------
# Network state
# ---------------------------------------------------------------------------

class Link(BaseModel):
    src: int = Field(..., ge=0, description="Tail node id")
    dst: int = Field(..., ge=0, description="Head node id")
    capacity: float = Field(..., gt=0, description="Transmission capacity in bits/s")
    buffer: int = Field(..., ge=1, description="Queue size in packets, including the one in service")


class Topology(BaseModel):
    nodes: int = Field(..., ge=1, description="Node count; ids are 0..nodes-1")
    links: List[Link] = Field(..., description="Directed links; link id is the list position")

    @model_validator(mode="after")
    def _check_links(self):
        seen = set()
        for link in self.links:
            if link.src >= self.nodes or link.dst >= self.nodes:
                raise ValueError(f"link {link.src}->{link.dst} references a node outside 0..{self.nodes - 1}")
            if link.src == link.dst:
                raise ValueError(f"self-loop on node {link.src}")
            if (link.src, link.dst) in seen:
                raise ValueError(f"duplicate link {link.src}->{link.dst}")
            seen.add((link.src, link.dst))
        for src, dst in seen:
            if (dst, src) not in seen:
                raise ValueError(f"link {src}->{dst} has no reverse link")
        return self

    @cached_property
    def link_index(self) -> Dict[Tuple[int, int], int]:
        return {(link.src, link.dst): i for i, link in enumerate(self.links)}

    @cached_property
    def capacities(self) -> np.ndarray:
        return np.array([link.capacity for link in self.links], dtype=np.float64)

    @cached_property
    def buffers(self) -> np.ndarray:
        return np.array([link.buffer for link in self.links], dtype=np.int64)

    def out_links(self) -> List[List[int]]:
        """Outgoing link ids per node"""
        adjacency: List[List[int]] = [[] for _ in range(self.nodes)]
        for i, link in enumerate(self.links):
            adjacency[link.src].append(i)
        return adjacency

    def to_networkx(self):
        import networkx as nx

        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.nodes))
        for i, link in enumerate(self.links):
            graph.add_edge(link.src, link.dst, id=i, capacity=link.capacity)
        return graph

    def is_strongly_connected(self) -> bool:
        import networkx as nx

        if self.nodes == 1:
            return True
        return nx.is_strongly_connected(self.to_networkx())


class Demand(BaseModel):
    src: int = Field(..., ge=0)
    dst: int = Field(..., ge=0)
    rate: float = Field(..., ge=0, description="Average offered traffic in bits/s")


class TrafficMatrix(BaseModel):
    demands: List[Demand] = Field(..., description="One entry per origin-destination pair")
    mean_packet_size: float = Field(..., gt=0, description="Mean packet size in bits")

    @model_validator(mode="after")
    def _check_pairs(self):
        pairs = set()
        for demand in self.demands:
            if demand.src == demand.dst:
                raise ValueError(f"demand {demand.src}->{demand.dst} has src == dst")
            if (demand.src, demand.dst) in pairs:
                raise ValueError(f"duplicate demand {demand.src}->{demand.dst}")
            pairs.add((demand.src, demand.dst))
        return self

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return [(d.src, d.dst) for d in self.demands]

    @property
    def rates(self) -> np.ndarray:
        return np.array([d.rate for d in self.demands], dtype=np.float64)

    @property
    def packet_rates(self) -> np.ndarray:
        """Per-demand arrival rate in packets/s"""
        return self.rates / self.mean_packet_size

    def scaled(self, factor: float) -> "TrafficMatrix":
        return TrafficMatrix(
            demands=[Demand(src=d.src, dst=d.dst, rate=d.rate * factor) for d in self.demands],
            mean_packet_size=self.mean_packet_size,
        )


class RoutingConfig(BaseModel):
    weights: List[float] = Field(..., description="Per-link weight, indexed by link id")
    # Paths are always re-derived from weights and never persisted
    paths: Dict[Tuple[int, int], List[int]] = Field(default_factory=dict, exclude=True)

    @field_validator("weights")
    @classmethod
    def _positive(cls, weights: List[float]) -> List[float]:
        if any(not w > 0 for w in weights):
            raise ValueError("every link weight must be > 0")
        return weights


class PathMetric(BaseModel):
    src: int
    dst: int
    mean_delay: float = Field(..., ge=0, description="Mean end-to-end delay in seconds (0 when nothing delivered)")
    loss: float = Field(..., ge=0, le=1, description="Packet loss ratio")
    delivered: Optional[int] = Field(None, ge=0, description="Delivered packets (simulator only)")


class PathMetrics(BaseModel):
    paths: List[PathMetric]
    converged: bool = Field(True, description="False when the analytical fixed point hit max_iter")

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.mean_delay for p in self.paths], dtype=np.float64)

    @property
    def losses(self) -> np.ndarray:
        return np.array([p.loss for p in self.paths], dtype=np.float64)

    @property
    def measured(self) -> np.ndarray:
        """Mask of paths carrying a usable delay value"""
        return np.array([p.delivered is None or p.delivered > 0 for p in self.paths], dtype=bool)


class Sample(BaseModel):
    topology: Topology
    traffic: TrafficMatrix
    routing: RoutingConfig
    label: Optional[PathMetrics] = None
    index: int = Field(0, ge=0, description="Position inside the dataset")
    seed: int = Field(0, ge=0, description="Derived per-sample seed")
    intensity: Optional[float] = Field(None, description="Accepted mean demand rate in bits/s")

    @model_validator(mode="after")
    def _check_consistency(self):
        if len(self.routing.weights) != len(self.topology.links):
            raise ValueError("routing must carry one weight per link")
        if self.label is not None and len(self.label.paths) != len(self.traffic.demands):
            raise ValueError("label must carry one entry per demand")
        return self


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_range: Tuple[int, int] = Field((8, 12), description="Inclusive node-count range")
    alpha: float = Field(0.8, ge=0, description="Power-law exponent")
    beta: Optional[float] = Field(None, gt=0, description="Power-law scale; defaults to n/3")
    capacity_set: List[float] = Field(
        default_factory=lambda: [10_000.0, 25_000.0, 40_000.0, 100_000.0],
        description="Link capacities in bits/s, drawn uniformly per undirected edge",
    )
    buffer: int = Field(32, ge=1, description="Queue size in packets on every link")
    intensity_range: Tuple[float, float] = Field((200.0, 3000.0), description="Mean demand rate range in bits/s")
    mean_packet_size: float = Field(1_000.0, gt=0, description="Mean packet size in bits")
    max_loss: float = Field(0.03, gt=0, lt=1, description="Per-link blocking cap used for screening")
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.n_range[0] < 1 or self.n_range[0] > self.n_range[1]:
            raise ValueError("n_range must satisfy 1 <= min <= max")
        if self.intensity_range[0] <= 0 or self.intensity_range[0] > self.intensity_range[1]:
            raise ValueError("intensity_range must satisfy 0 < min <= max")
        if not self.capacity_set or any(c <= 0 for c in self.capacity_set):
            raise ValueError("capacity_set must be non-empty and positive")
        return self


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    warmup: float = Field(10.0, ge=0, description="Seconds discarded before statistics start")
    duration: float = Field(100.0, gt=0, description="Measured seconds after warmup")
    seed: int = Field(0, ge=0, lt=2**64)
    propagation_delay: float = Field(0.0, ge=0, description="Seconds added per traversed link")


class QtConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(1e-8, gt=0, description="Convergence threshold on blocking changes")
    max_iter: int = Field(10_000, ge=1)
    damping: float = Field(0.5, gt=0, le=1, description="Weight of the new blocking estimate")
    thinning: bool = Field(True, description="Thin offered load by upstream blocking")
    propagation_delay: float = Field(0.0, ge=0)


class LinkState(BaseModel):
    link: int
    offered_load: float = Field(..., ge=0, description="Packets/s")
    service_rate: float = Field(..., gt=0, description="Packets/s")
    buffer: int = Field(..., ge=1)
    blocking: float = Field(..., ge=0, le=1)
    mean_queue_len: float = Field(..., ge=0)
    mean_sojourn: float = Field(..., gt=0, description="Seconds")

    @property
    def utilization(self) -> float:
        return self.offered_load / self.service_rate


class FixedPointResult(BaseModel):
    links: List[LinkState]
    iterations: int
    converged: bool
    residual: float


class TwinHyper(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d: int = Field(32, ge=2, description="Hidden state width")
    T: int = Field(8, ge=1, description="Message-passing iterations")
    mode: TwinMode = TwinMode.MESSAGE_PASSING

    @model_validator(mode="after")
    def _rnn_single_pass(self):
        if self.mode == TwinMode.RNN_BASELINE:
            self.T = 1
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(50, ge=1)
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
    validation_fraction: float = Field(0.2, gt=0, lt=1)
    loss_kind: LossKind = LossKind.MAPE


class TrainJobConfig(BaseModel):
    """Config file of the train command"""

    model_config = ConfigDict(extra="forbid")

    twin: TwinHyper = Field(default_factory=TwinHyper)
    train: TrainConfig = Field(default_factory=TrainConfig)


class EsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    population: int = Field(32, ge=2, description="Candidates per iteration (mirrored pairs)")
    sigma: float = Field(0.1, gt=0)
    learning_rate: float = Field(0.05, gt=0)
    iterations: int = Field(300, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    evaluator: EvaluatorKind = EvaluatorKind.TWIN
    patience: Optional[int] = Field(None, ge=1, description="Stop after this many iterations without improvement")

    @field_validator("population")
    @classmethod
    def _even(cls, population: int) -> int:
        if population % 2:
            raise ValueError("population must be even for mirrored sampling")
        return population

    @field_validator("evaluator")
    @classmethod
    def _not_sim(cls, evaluator: EvaluatorKind) -> EvaluatorKind:
        if evaluator == EvaluatorKind.SIM:
            raise ValueError("the simulator is a measurement step, not a fitness evaluator")
        return evaluator


class IterationRecord(BaseModel):
    iteration: int
    best_delay: float
    mean_delay: float


class OptimizationTrace(BaseModel):
    records: List[IterationRecord] = Field(default_factory=list)
    best_weights: List[float] = Field(default_factory=list)
    best_fitness: float = float("inf")
    baseline_fitness: Optional[float] = None
    simulated_delay: Optional[float] = Field(None, description="Simulator mean delay of the best weights")
    baseline_simulated_delay: Optional[float] = Field(None, description="Simulator mean delay at equal weights")

    @property
    def improvement(self) -> Optional[float]:
        """Relative simulated delay reduction against equal-weight routing"""
        if self.simulated_delay is None or not self.baseline_simulated_delay:
            return None
        return 1.0 - self.simulated_delay / self.baseline_simulated_delay


class GenDatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    samples: int = Field(10, ge=1)
    labeler: EvaluatorKind = EvaluatorKind.QT
    sim: SimConfig = Field(default_factory=SimConfig)
    qt: QtConfig = Field(default_factory=QtConfig)

    @field_validator("labeler")
    @classmethod
    def _labeler(cls, labeler: EvaluatorKind) -> EvaluatorKind:
        if labeler == EvaluatorKind.TWIN:
            raise ValueError("labeler must be sim or qt")
        return labeler


class OptimizeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioConfig = Field(default_factory=lambda: ScenarioConfig(n_range=(14, 14)))
    intensities: List[float] = Field(default_factory=lambda: [300.0, 600.0, 900.0, 1200.0, 1500.0])
    es: EsConfig = Field(default_factory=EsConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    qt: QtConfig = Field(default_factory=QtConfig)

    @field_validator("intensities")
    @classmethod
    def _positive(cls, intensities: List[float]) -> List[float]:
        if not intensities or any(i <= 0 for i in intensities):
            raise ValueError("intensities must be non-empty and positive")
        return intensities


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any] = Field(default_factory=dict, description="Full config snapshot")
    seed: Optional[int] = None
    tool_version: str
    started_at: datetime
    finished_at: Optional[datetime] = None
    outputs: Dict[str, str] = Field(default_factory=dict, description="Relative path -> sha256 digest")
