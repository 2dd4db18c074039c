"""
Delay Twin ML Model
Path-link message passing over gated recurrent cells, with an RNN-only ablation mode.
Predicts the mean end-to-end delay of every routed demand.
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field
from torch import nn

from ..errors import InvalidInput, NonFiniteGradient, UnroutedDemand
from ..models.schemas import LossKind, RoutingConfig, Sample, Topology, TrafficMatrix, TwinHyper, TwinMode

logger = logging.getLogger(__name__)

MODEL_FORMAT = "twinforge-delay-twin/1"
DTYPE = torch.float64


class FeatureScales(BaseModel):
    """Normalization constants frozen at training time"""

    capacity: float = Field(..., gt=0, description="Max link capacity in bits/s")
    rate: float = Field(..., gt=0, description="Max demand rate in bits/s")
    hops: float = Field(..., gt=0, description="Max path length in links")
    delay: float = Field(..., gt=0, description="Median label delay in seconds")


@dataclass
class SampleTensors:
    link_features: torch.Tensor  # (L, 2) capacity, offered load / capacity
    path_features: torch.Tensor  # (P, 2) demand rate, hop count
    path_links: torch.Tensor  # (P, K) link ids, padding replaced by 0
    path_mask: torch.Tensor  # (P, K)
    own_link_features: torch.Tensor  # (P, K, 2) capacity, own rate / capacity
    label: Optional[torch.Tensor] = None  # (P,)
    label_mask: Optional[torch.Tensor] = None  # (P,) usable labels


def compute_scales(samples: Sequence[Sample]) -> FeatureScales:
    capacities, rates, hops, delays = [], [], [], []
    for sample in samples:
        capacities.append(sample.topology.capacities.max())
        rates.append(sample.traffic.rates.max(initial=0.0))
        hops.append(max(len(p) for p in sample.routing.paths.values()))
        if sample.label is not None:
            values = sample.label.delays[sample.label.measured]
            delays.extend(values[values > 0].tolist())
    return FeatureScales(
        capacity=float(max(capacities)),
        rate=float(max(max(rates), 1e-12)),
        hops=float(max(hops)),
        delay=float(np.median(delays)) if delays else 1.0,
    )


def build_tensors(
    topo: Topology,
    tm: TrafficMatrix,
    routing: RoutingConfig,
    scales: FeatureScales,
    label=None,
) -> SampleTensors:
    """Feature tensors for one (topology, traffic, routing) state"""
    paths: List[List[int]] = []
    for src, dst in tm.pairs:
        path = routing.paths.get((src, dst))
        if not path:
            raise UnroutedDemand(f"demand ({src}, {dst}) has no path", details={"src": src, "dst": dst})
        paths.append(path)

    capacities = topo.capacities
    rates = tm.rates
    offered = np.zeros(len(topo.links))
    for rate, path in zip(rates, paths):
        offered[path] += rate

    max_len = max(len(p) for p in paths)
    path_links = np.zeros((len(paths), max_len), dtype=np.int64)
    path_mask = np.zeros((len(paths), max_len), dtype=bool)
    own = np.zeros((len(paths), max_len, 2))
    for i, path in enumerate(paths):
        path_links[i, : len(path)] = path
        path_mask[i, : len(path)] = True
        own[i, : len(path), 0] = capacities[path] / scales.capacity
        own[i, : len(path), 1] = rates[i] / capacities[path]

    link_features = np.stack([capacities / scales.capacity, offered / capacities], axis=1)
    hop_counts = np.array([len(p) for p in paths], dtype=np.float64)
    path_features = np.stack([rates / scales.rate, hop_counts / scales.hops], axis=1)

    tensors = SampleTensors(
        link_features=torch.tensor(link_features, dtype=DTYPE),
        path_features=torch.tensor(path_features, dtype=DTYPE),
        path_links=torch.tensor(path_links),
        path_mask=torch.tensor(path_mask),
        own_link_features=torch.tensor(own, dtype=DTYPE),
    )
    if label is not None:
        tensors.label = torch.tensor(label.delays, dtype=DTYPE)
        tensors.label_mask = torch.tensor(label.measured & (label.delays > 0))
    return tensors


def sample_tensors(sample: Sample, scales: FeatureScales) -> SampleTensors:
    return build_tensors(sample.topology, sample.traffic, sample.routing, scales, sample.label)


class DelayTwin(nn.Module):
    """Trainable delay model; parameter shapes depend only on the hidden width d"""

    def __init__(self, hyper: Optional[TwinHyper] = None, scales: Optional[FeatureScales] = None):
        super().__init__()
        self.hyper = hyper or TwinHyper()
        self.scales = scales
        d = self.hyper.d

        self.link_encoder = nn.Linear(2, d)
        self.path_encoder = nn.Linear(2, d)
        self.path_update = nn.GRUCell(d, d)
        self.link_update = nn.GRUCell(d, d)
        self.readout = nn.Sequential(nn.Linear(d, d), nn.Tanh(), nn.Linear(d, 1))
        self.to(DTYPE)

    @property
    def message_passing(self) -> bool:
        return self.hyper.mode == TwinMode.MESSAGE_PASSING

    def forward(self, x: SampleTensors) -> torch.Tensor:
        if self.scales is None:
            raise InvalidInput("model has no feature scales; train it or load a trained model file")

        h_path = self.path_encoder(x.path_features)
        if self.message_passing:
            h_link = self.link_encoder(x.link_features)
        else:
            # Each path reads its own view of the links: no cross-path coupling
            h_link = None
            h_own = self.link_encoder(x.own_link_features)

        steps = x.path_links.shape[1]
        for t in range(self.hyper.T):
            aggregated = torch.zeros_like(h_link) if self.message_passing else None
            for k in range(steps):
                active = x.path_mask[:, k]
                link_ids = x.path_links[:, k]
                inputs = h_link[link_ids] if self.message_passing else h_own[:, k]
                updated = self.path_update(inputs, h_path)
                h_path = torch.where(active[:, None], updated, h_path)
                if self.message_passing:
                    aggregated = aggregated.index_add(0, link_ids[active], updated[active])
            # The last link update would never be read
            if self.message_passing and t < self.hyper.T - 1:
                h_link = self.link_update(aggregated, h_link)

        raw = self.readout(h_path).squeeze(-1)
        return F.softplus(raw) * self.scales.delay


def init_params(seed: int, d: int = 32, T: int = 8, mode: TwinMode = TwinMode.MESSAGE_PASSING) -> DelayTwin:
    """Uniform init scaled by 1/sqrt(fan-in); update-gate biases start at +1"""
    model = DelayTwin(TwinHyper(d=d, T=T, mode=mode))
    generator = torch.Generator().manual_seed(int(seed) % 2**63)

    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                bound = 1.0 / np.sqrt(module.in_features)
                module.weight.copy_(torch.rand(module.weight.shape, generator=generator, dtype=DTYPE) * 2 * bound - bound)
                module.bias.copy_(torch.rand(module.bias.shape, generator=generator, dtype=DTYPE) * 2 * bound - bound)
            elif isinstance(module, nn.GRUCell):
                bound = 1.0 / np.sqrt(module.hidden_size)
                for param in (module.weight_ih, module.weight_hh, module.bias_ih, module.bias_hh):
                    param.copy_(torch.rand(param.shape, generator=generator, dtype=DTYPE) * 2 * bound - bound)
                # Gate layout is (reset, update, new); a positive update gate keeps the previous state
                h = module.hidden_size
                module.bias_ih[h : 2 * h] = 1.0
                module.bias_hh[h : 2 * h] = 0.0
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def loss(pred: torch.Tensor, label: torch.Tensor, kind: LossKind = LossKind.MAPE) -> torch.Tensor:
    if label.numel() == 0:
        raise InvalidInput("loss needs at least one labeled path")
    if torch.any(label <= 0):
        raise InvalidInput("label delays must be > 0")
    if kind == LossKind.MAPE:
        return torch.mean(torch.abs(pred - label) / label)
    return torch.mean((torch.log(pred) - torch.log(label)) ** 2)


def sample_loss(model: DelayTwin, x: SampleTensors, kind: LossKind) -> torch.Tensor:
    pred = model(x)
    return loss(pred[x.label_mask], x.label[x.label_mask], kind)


def batch_loss(model: DelayTwin, batch: Sequence[SampleTensors], kind: LossKind) -> torch.Tensor:
    if len(batch) == 0:
        raise InvalidInput("batch is empty")
    return torch.stack([sample_loss(model, x, kind) for x in batch]).mean()


def check_gradients(model: nn.Module) -> None:
    for name, param in model.named_parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise NonFiniteGradient(f"non-finite gradient in tensor '{name}'", details={"tensor": name})


def backward(model: DelayTwin, batch: Sequence[SampleTensors], kind: LossKind = LossKind.MAPE) -> Dict[str, torch.Tensor]:
    """Reverse-mode gradients of the mean batch loss, one tensor per named parameter"""
    model.zero_grad(set_to_none=True)
    value = batch_loss(model, batch, kind)
    value.backward()
    check_gradients(model)
    return {
        name: param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
        for name, param in model.named_parameters()
    }


@torch.no_grad()
def predict(model: DelayTwin, x: SampleTensors) -> np.ndarray:
    return model(x).cpu().numpy()


def save_model(model: DelayTwin, path: str) -> None:
    """Self-describing JSON model file: hyperparameters, scales and flat parameter arrays"""
    if model.scales is None:
        raise InvalidInput("refusing to save a model without feature scales")
    document = {
        "format": MODEL_FORMAT,
        "hyper": model.hyper.model_dump(mode="json"),
        "scales": model.scales.model_dump(),
        "parameters": {
            name: {"shape": list(tensor.shape), "values": tensor.detach().reshape(-1).tolist()}
            for name, tensor in model.state_dict().items()
        },
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(document, f)
    logger.info(f"Model saved to {path}")


def load_model(path: str) -> DelayTwin:
    with open(path) as f:
        document = json.load(f)
    if document.get("format") != MODEL_FORMAT:
        raise InvalidInput(f"{path}: unsupported model format {document.get('format')!r}")

    model = DelayTwin(TwinHyper(**document["hyper"]), FeatureScales(**document["scales"]))
    state = {
        name: torch.tensor(entry["values"], dtype=DTYPE).reshape(entry["shape"])
        for name, entry in document["parameters"].items()
    }
    model.load_state_dict(state)
    logger.info(f"Model loaded from {path} ({model.hyper.mode.value}, d={model.hyper.d}, T={model.hyper.T})")
    return model
