"""
What-if analysis
Fail one bidirectional link, re-derive routing from the surviving weights and compare
per-path delays before and after with the same evaluator.
"""
import logging
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..errors import InvalidInput, UnreachableDestination
from ..models.schemas import Sample, Topology
from .routing import derive_routing

logger = logging.getLogger(__name__)


class PathDelayChange(BaseModel):
    src: int
    dst: int
    delay_before_s: float = Field(..., ge=0)
    delay_after_s: float = Field(..., ge=0)


class WhatIfReport(BaseModel):
    failed_link: int
    removed_links: List[int] = Field(..., description="Link ids removed (both directions)")
    evaluator: str
    paths: List[PathDelayChange]
    mean_delay_before: float
    mean_delay_after: float

    @property
    def mean_delay_change(self) -> float:
        return self.mean_delay_after - self.mean_delay_before


def remove_edge(topo: Topology, link_id: int) -> Tuple[Topology, List[int]]:
    """Topology without link `link_id` and its reverse; returns the surviving topology and removed ids"""
    if not 0 <= link_id < len(topo.links):
        raise InvalidInput(f"link id {link_id} out of range 0..{len(topo.links) - 1}", details={"link": link_id})
    failed = topo.links[link_id]
    removed = sorted([link_id, topo.link_index[(failed.dst, failed.src)]])
    survivors = [link for i, link in enumerate(topo.links) if i not in removed]
    return Topology(nodes=topo.nodes, links=survivors), removed


def what_if_link_failure(sample: Sample, failed_link: int, evaluator) -> WhatIfReport:
    topo, removed = remove_edge(sample.topology, failed_link)
    if not topo.is_strongly_connected():
        link = sample.topology.links[failed_link]
        raise UnreachableDestination(
            f"failing link {link.src}<->{link.dst} disconnects the network", details={"link": failed_link}
        )

    weights = [w for i, w in enumerate(sample.routing.weights) if i not in removed]
    routing_after = derive_routing(topo, weights)

    before = evaluator.evaluate(sample.topology, sample.traffic, sample.routing)
    after = evaluator.evaluate(topo, sample.traffic, routing_after)

    paths = [
        PathDelayChange(src=b.src, dst=b.dst, delay_before_s=b.mean_delay, delay_after_s=a.mean_delay)
        for b, a in zip(before.paths, after.paths)
    ]
    report = WhatIfReport(
        failed_link=failed_link,
        removed_links=removed,
        evaluator=evaluator.name,
        paths=paths,
        mean_delay_before=float(np.mean(before.delays)) if paths else 0.0,
        mean_delay_after=float(np.mean(after.delays)) if paths else 0.0,
    )
    logger.info(
        f"Link {failed_link} failure: mean delay {report.mean_delay_before:.6f} s -> {report.mean_delay_after:.6f} s"
    )
    return report
