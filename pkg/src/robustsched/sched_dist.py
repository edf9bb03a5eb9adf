"""Decentralized RobustMaxWork: per-server queues, local refresh times, six routers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .capacity import FeasibleSet
from .domain import ArrivalSpec, Configuration, ContractError, Job
from .scanning import ScanVector
from .sched_core import (
    Z_PER_JOB,
    SchedulerState,
    SlotReport,
    admit,
    best_config,
    compute_Z,
    process_job,
    z_weight,
)

REFRESH_ON_IDLE = "on_idle"
REFRESH_EVERY_SLOT = "every_slot"


class Routing(str, enum.Enum):
    JSQ = "jsq"
    JSW = "jsw"
    UR = "ur"
    RR = "rr"
    P2Q = "p2q"
    P2W = "p2w"


WORKLOAD_Z = "z"
WORKLOAD_LENGTH = "length"


@dataclass
class RoutingPolicy:
    kind: Routing
    workload_metric: str = WORKLOAD_Z  # JSW / P2W only
    rr_pointers: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.kind = Routing(self.kind)
        if self.workload_metric not in (WORKLOAD_Z, WORKLOAD_LENGTH):
            raise ContractError(f"unknown workload metric {self.workload_metric!r}")

    def reset(self, n_servers: int, n_types: int) -> None:
        # pointer names the last server used, so the first job goes to server 0
        self.rr_pointers = [n_servers - 1] * n_types


class ServerNode(SchedulerState):
    """One server's local RobustMaxWork state."""

    def __init__(self, index: int, spec: ArrivalSpec, alpha: ScanVector, fs: FeasibleSet, **kw):
        super().__init__(spec, alpha, fs, n_servers=1, **kw)
        self.index = index
        self.current_config: int | None = None
        self.needs_refresh = True

    def is_empty(self) -> bool:
        return all(q.n_jobs == 0 for q in self.queues)

    def job_count(self, j: int) -> int:
        return self.queues[j].n_jobs

    def workload(self, j: int, metric: str = WORKLOAD_Z):
        q = self.queues[j]
        if metric == WORKLOAD_LENGTH:
            return q.Q
        return z_weight(q.X, q.Y, len(q.pending), self.coef[j])


def make_nodes(spec: ArrivalSpec, alpha: ScanVector, fs: FeasibleSet, *, scan_rng, process_rng,
               z_mode: str = Z_PER_JOB) -> list[ServerNode]:
    # nodes share the scan / process generators and draw in server order
    return [ServerNode(m, spec, alpha, fs, scan_rng=scan_rng, process_rng=process_rng, z_mode=z_mode)
            for m in range(spec.n_servers)]


def sample_pair(n: int, rng: np.random.Generator) -> tuple[int, int]:
    """Two distinct servers, uniform over unordered pairs, returned in ascending order."""
    first = int(rng.integers(0, n))
    second = int(rng.integers(0, n - 1))
    if second >= first:
        second += 1
    return (first, second) if first < second else (second, first)


def route(job: Job, servers: Sequence[ServerNode], policy: RoutingPolicy, rng: np.random.Generator) -> int:
    n = len(servers)
    if n < 1:
        raise ContractError("no servers to route to")
    if n == 1:
        return 0
    j = job.type_index
    kind = policy.kind
    if kind is Routing.UR:
        return int(rng.integers(0, n))
    if kind is Routing.RR:
        if not policy.rr_pointers:
            policy.reset(n, len(servers[0].queues))
        policy.rr_pointers[j] = (policy.rr_pointers[j] + 1) % n
        return policy.rr_pointers[j]
    if kind in (Routing.JSQ, Routing.P2Q):
        metric = lambda m: servers[m].job_count(j)
    else:
        metric = lambda m: servers[m].workload(j, policy.workload_metric)
    if kind in (Routing.JSQ, Routing.JSW):
        candidates = range(n)
    else:
        candidates = sample_pair(n, rng)
    return min(candidates, key=lambda m: (metric(m), m))


@dataclass
class DistSlotReport:
    slot: int
    routed: list = field(default_factory=list)       # (job id, server)
    configs: list = field(default_factory=list)      # per server: config index or None
    completions: list = field(default_factory=list)
    detections: list = field(default_factory=list)
    x: tuple = ()
    y: tuple = ()

    @property
    def q(self) -> tuple:
        return tuple(a + b for a, b in zip(self.x, self.y))


def local_step(node: ServerNode, refresh: str = REFRESH_ON_IDLE) -> dict:
    """One slot at one server.  Reconfigures only at a local refresh point.

    A refresh point is: no configuration yet, or some unit of the current
    configuration found no job of its type in the previous slot.
    """
    report = {"config": None, "completions": [], "detections": [], "picks": []}
    recompute = refresh == REFRESH_EVERY_SLOT or node.current_config is None or node.needs_refresh
    if recompute:
        if refresh == REFRESH_ON_IDLE and node.is_empty():
            node.current_config = None
            node.needs_refresh = True
            node.slot += 1
            return report
        k, _ = best_config(compute_Z(node), node.fs)
        node.current_config = k
    node.needs_refresh = False
    cfg = node.fs.maximal_configs[node.current_config]
    report["config"] = node.current_config

    node._report = SlotReport(node.slot, cfg, cfg, (), ())
    node.begin_slot()
    for j, budget in enumerate(cfg):
        for _ in range(budget):
            if process_job(node, j) == "-":
                node.needs_refresh = True
                break
    node.end_slot()
    report["completions"] = node._report.completions
    report["detections"] = node._report.detections
    report["picks"] = node._report.picks
    node._report = None
    node.slot += 1
    return report


def dist_step(nodes: Sequence[ServerNode], policy: RoutingPolicy, arrivals: Sequence[Job],
              routing_rng: np.random.Generator, refresh: str = REFRESH_ON_IDLE) -> DistSlotReport:
    report = DistSlotReport(nodes[0].slot)
    for job in arrivals:
        m = route(job, nodes, policy, routing_rng)
        admit(nodes[m], job)
        report.routed.append((job.id, m))
    for node in nodes:
        r = local_step(node, refresh)
        report.configs.append(r["config"])
        report.completions.extend(r["completions"])
        report.detections.extend(r["detections"])
    J = len(nodes[0].queues)
    report.x = tuple(sum(node.queues[j].X for node in nodes) for j in range(J))
    report.y = tuple(sum(node.queues[j].Y for node in nodes) for j in range(J))
    return report


def current_configuration(node: ServerNode) -> Configuration | None:
    if node.current_config is None:
        return None
    return node.fs.maximal_configs[node.current_config]
