"""
Scenario Generator
Seeded generation of power-law topologies, traffic matrices and labeled samples,
plus the on-disk dataset layout (one JSON document per sample)
"""
import logging
import os
from pathlib import Path
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from ..errors import ConfigError, DatasetError, ScreeningFailed
from ..models.schemas import (
    Demand,
    Link,
    QtConfig,
    Sample,
    ScenarioConfig,
    Topology,
    TrafficMatrix,
)
from .queueing_model import max_link_blocking
from .routing import derive_routing, equal_weights

logger = logging.getLogger(__name__)

MAX_HALVINGS = 10
PERTURBED_WEIGHT_RANGE = (1.0, 3.0)
SAMPLE_GLOB = "sample_*.json"


def derive_seed(seed: int, index: int) -> int:
    """Order-independent child seed for item `index` of a seeded run"""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def plod_credits(x: np.ndarray, alpha: float, beta: float, cap: int) -> np.ndarray:
    """Degree credits round(beta * x^-alpha) for x in (0, 1], capped at `cap`"""
    return np.minimum(np.rint(beta * x ** (-alpha)), cap).astype(np.int64)


def gen_topology(seed: int, cfg: ScenarioConfig) -> Topology:
    """Power-law out-degree topology: random spanning tree first, then credit-driven extra edges"""
    if cfg.n_range[0] < 2:
        raise ConfigError("n_range.min must be >= 2 to build a topology", details={"field": "n_range"})

    rng = np.random.default_rng(seed)
    n = int(rng.integers(cfg.n_range[0], cfg.n_range[1] + 1))
    beta = cfg.beta if cfg.beta is not None else n / 3.0
    credit = plod_credits(1.0 - rng.random(n), cfg.alpha, beta, n - 1)

    adjacent = np.zeros((n, n), dtype=bool)
    edges: Set[Tuple[int, int]] = set()

    def connect(u: int, v: int) -> None:
        adjacent[u, v] = adjacent[v, u] = True
        edges.add((min(u, v), max(u, v)))
        credit[u] = max(credit[u] - 1, 0)
        credit[v] = max(credit[v] - 1, 0)

    # Spanning tree over a random node order guarantees connectivity
    order = rng.permutation(n)
    for k in range(1, n):
        connect(int(order[k]), int(order[rng.integers(0, k)]))

    while True:
        eligible = np.flatnonzero(credit > 0)
        if len(eligible) < 2:
            break
        u = int(eligible[rng.integers(len(eligible))])
        partners = eligible[(eligible != u) & ~adjacent[u, eligible]]
        if len(partners) == 0:
            credit[u] = 0
            continue
        connect(u, int(partners[rng.integers(len(partners))]))

    links: List[Link] = []
    for u, v in sorted(edges):
        capacity = float(cfg.capacity_set[rng.integers(len(cfg.capacity_set))])
        links.append(Link(src=u, dst=v, capacity=capacity, buffer=cfg.buffer))
        links.append(Link(src=v, dst=u, capacity=capacity, buffer=cfg.buffer))

    logger.debug(f"Generated topology with {n} nodes and {len(edges)} undirected edges")
    return Topology(nodes=n, links=links)


def gen_traffic(seed: int, topo: Topology, intensity: float, mean_packet_size: float) -> TrafficMatrix:
    """Uniform-random traffic over all ordered pairs, rescaled so the mean rate equals intensity"""
    if intensity <= 0:
        raise ConfigError(f"intensity must be > 0, got {intensity}", details={"field": "intensity"})

    rng = np.random.default_rng(seed)
    pairs = [(s, d) for s in range(topo.nodes) for d in range(topo.nodes) if s != d]
    rates = intensity * rng.uniform(0.1, 1.0, size=len(pairs))
    if len(pairs):
        rates *= intensity / rates.mean()

    demands = [Demand(src=s, dst=d, rate=float(r)) for (s, d), r in zip(pairs, rates)]
    return TrafficMatrix(demands=demands, mean_packet_size=mean_packet_size)


def gen_sample(
    seed: int,
    cfg: ScenarioConfig,
    labeler,
    index: int = 0,
    qt_config: Optional[QtConfig] = None,
) -> Sample:
    """One screened and labeled sample; `labeler` is any performance evaluator"""
    sample_seed = derive_seed(seed, index)
    rng = np.random.default_rng(derive_seed(sample_seed, 2))

    topo = gen_topology(derive_seed(sample_seed, 0), cfg)
    if index % 2 == 0:
        weights = equal_weights(topo)
    else:
        weights = rng.uniform(*PERTURBED_WEIGHT_RANGE, size=len(topo.links)).tolist()
    routing = derive_routing(topo, weights)

    intensity = float(rng.uniform(*cfg.intensity_range))
    traffic_seed = derive_seed(sample_seed, 1)
    for attempt in range(MAX_HALVINGS + 1):
        tm = gen_traffic(traffic_seed, topo, intensity, cfg.mean_packet_size)
        worst = max_link_blocking(topo, tm, routing, qt_config)
        if worst <= cfg.max_loss:
            break
        logger.debug(f"Sample {index}: max blocking {worst:.4f} > {cfg.max_loss}, halving intensity {intensity:.1f}")
        intensity /= 2.0
    else:
        raise ScreeningFailed(
            f"sample {index}: loss cap {cfg.max_loss} unreachable after {MAX_HALVINGS} halvings",
            details={"index": index, "max_blocking": worst},
        )

    label = labeler.evaluate(topo, tm, routing, seed=derive_seed(sample_seed, 3))
    return Sample(
        topology=topo,
        traffic=tm,
        routing=routing,
        label=label,
        index=index,
        seed=sample_seed,
        intensity=intensity,
    )


def generate_dataset(
    seed: int,
    cfg: ScenarioConfig,
    labeler,
    count: int,
    jobs: int = 1,
    qt_config: Optional[QtConfig] = None,
    progress: bool = True,
) -> List[Sample]:
    """Generate `count` samples; results do not depend on `jobs`"""
    logger.info(f"Generating {count} samples (seed={seed}, jobs={jobs})")
    indices = tqdm(range(count), desc="samples", disable=not progress)
    if jobs == 1:
        return [gen_sample(seed, cfg, labeler, index=i, qt_config=qt_config) for i in indices]
    return Parallel(n_jobs=jobs)(
        delayed(gen_sample)(seed, cfg, labeler, index=i, qt_config=qt_config) for i in indices
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def sample_path(out_dir: Path, index: int) -> Path:
    return Path(out_dir) / f"sample_{index}.json"


def save_sample(sample: Sample, path: Path) -> Path:
    path = Path(path)
    path.write_text(sample.model_dump_json(indent=2) + "\n")
    return path


def load_sample(path: Path) -> Sample:
    """Load one sample and re-derive its paths from the stored weights"""
    try:
        sample = Sample.model_validate_json(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise DatasetError(f"cannot load sample {path}: {e}") from e
    sample.routing = derive_routing(sample.topology, sample.routing.weights)
    return sample


def save_dataset(samples: Sequence[Sample], out_dir: Path) -> List[Path]:
    os.makedirs(out_dir, exist_ok=True)
    return [save_sample(sample, sample_path(out_dir, sample.index)) for sample in samples]


def load_dataset(directory: Path) -> List[Sample]:
    files = sorted(Path(directory).glob(SAMPLE_GLOB), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise DatasetError(f"no {SAMPLE_GLOB} files found in {directory}")
    samples = [load_sample(f) for f in files]
    logger.info(f"Loaded {len(samples)} samples from {directory}")
    return samples


def size_bucket(samples: Sequence[Sample]) -> str:
    """Node-count range label of a dataset, e.g. '8-12'"""
    sizes = [s.topology.nodes for s in samples]
    return f"{min(sizes)}-{max(sizes)}"
