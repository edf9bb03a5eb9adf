"""Centralized RobustMaxWork, operation by operation, on Job objects.

This is the reference engine: exact rational weights and explicit pools.
Long runs use ``robustsched.kernel``, which reproduces the same decisions
from the same random streams.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .capacity import FeasibleSet
from .domain import ArrivalSpec, Configuration, ContractError, Job, ScanStatus, reveal_truth
from .scanning import ScanVector

Z_PER_JOB = "per_job"
Z_EXPECTED = "expected"
Z_MODES = (Z_PER_JOB, Z_EXPECTED)


@dataclass
class TypeQueue:
    noscan: list[Job] = field(default_factory=list)   # NoScan or ScannedGenuine, oldest first
    pending: list[Job] = field(default_factory=list)  # PendingScan, oldest first
    X: int = 0
    Y: int = 0

    @property
    def Q(self) -> int:
        return self.X + self.Y

    @property
    def n_jobs(self) -> int:
        return len(self.noscan) + len(self.pending)

    def check(self) -> None:
        assert self.X == sum(job.remaining for job in self.noscan)
        assert self.Y == sum(job.length for job in self.pending)
        assert all(job.scan_status == ScanStatus.PENDING_SCAN for job in self.pending)
        assert all(job.scan_status != ScanStatus.PENDING_SCAN for job in self.noscan)


@dataclass
class _Cursor:
    """Per-type bookkeeping of which jobs were already scheduled in the open slot."""
    x_pos: int
    y_pos: int
    rx: int  # remaining work of unscheduled noscan jobs
    ry: int  # length of unscheduled pending jobs
    scanned_ok: list = field(default_factory=list)


@dataclass
class SlotReport:
    slot: int
    config: Configuration          # per-server N*
    system_config: Configuration   # n * N*
    z: tuple                       # weights the decision was based on
    z_after: tuple                 # weights after this slot's service
    completions: list = field(default_factory=list)  # (job, latency)
    detections: list = field(default_factory=list)   # (job, latency)
    picks: list = field(default_factory=list)        # (type, 'X' | 'Y' | '-')
    served_x: tuple = ()
    served_y: tuple = ()
    x: tuple = ()
    y: tuple = ()

    @property
    def q(self) -> tuple:
        return tuple(a + b for a, b in zip(self.x, self.y))


def z_coefficients(spec: ArrivalSpec, mode: str = Z_PER_JOB) -> list[tuple[Fraction, Fraction] | None]:
    """Per type: (multiplier on Y, per-pending-job term).  None for a type with no traffic."""
    if mode not in Z_MODES:
        raise ContractError(f"unknown weight mode {mode!r}")
    out = []
    for j in range(spec.n_types):
        if spec.total(j) == 0:
            out.append(None)
            continue
        r = spec.genuine_fraction(j)
        if mode == Z_PER_JOB:
            out.append((r, Fraction(1)))
        else:
            out.append((r + spec.lengths[j].mean_reciprocal(), Fraction(0)))
    return out


def z_weight(X: int, Y: int, n_pending: int, coef) -> Fraction:
    if Y == 0:
        return Fraction(X)
    if coef is None:
        raise ContractError("pending scan work for a type with zero arrival rate")
    mult, per_job = coef
    return X + Y * mult + n_pending * per_job


def best_config(Z: Sequence, fs: FeasibleSet) -> tuple[int, Configuration]:
    """Index and value of the per-server maximal configuration maximising sum_j N_j Z_j.

    Configs are kept in ascending lexicographic order and only a strictly
    larger score replaces the incumbent, so ties go to the smallest config.
    """
    best_k, best_score = 0, None
    for k, cfg in enumerate(fs.maximal_configs):
        score = sum(n * z for n, z in zip(cfg, Z))
        if best_score is None or score > best_score:
            best_k, best_score = k, score
    return best_k, fs.maximal_configs[best_k]


def argmax_config(Z: Sequence, fs: FeasibleSet, n_servers: int) -> Configuration:
    if any(z < 0 for z in Z):
        raise ContractError("weights must be non-negative")
    _, cfg = best_config(Z, fs)
    return tuple(n_servers * c for c in cfg)


class SchedulerState:
    def __init__(self, spec: ArrivalSpec, alpha: ScanVector, fs: FeasibleSet, *,
                 scan_rng: np.random.Generator, process_rng: np.random.Generator,
                 n_servers: int | None = None, z_mode: str = Z_PER_JOB):
        if alpha.n_types != spec.n_types or fs.j_count != spec.n_types:
            raise ContractError("spec, scan vector and feasible set disagree on the number of types")
        self.spec = spec
        self.alpha = alpha
        self.fs = fs
        self.n_servers = spec.n_servers if n_servers is None else n_servers
        self.z_mode = z_mode
        self.coef = z_coefficients(spec, z_mode)
        self.scan_rng = scan_rng
        self.process_rng = process_rng
        self.queues = [TypeQueue() for _ in range(spec.n_types)]
        self.slot = 0
        self._cursors: list[_Cursor] | None = None
        self._report: SlotReport | None = None

    # -- slot bracketing -------------------------------------------------
    def begin_slot(self) -> None:
        if self._cursors is None:
            self._cursors = [_Cursor(0, 0, q.X, q.Y) for q in self.queues]

    def end_slot(self) -> None:
        if self._cursors is None:
            return
        for q, cur in zip(self.queues, self._cursors):
            q.noscan = [job for job in q.noscan[:cur.x_pos] if job.remaining > 0] + q.noscan[cur.x_pos:]
            del q.pending[:cur.y_pos]
            for job in cur.scanned_ok:
                bisect.insort(q.noscan, job, key=lambda jb: jb.id)
        self._cursors = None

    def weights(self) -> tuple[Fraction, ...]:
        return compute_Z(self)

    def check(self) -> None:
        for q in self.queues:
            q.check()


def admit(state: SchedulerState, job: Job) -> None:
    q = state.queues[job.type_index]
    r = state.scan_rng.random()
    if r < float(state.alpha[job.type_index, job.length]):
        job.scan_status = ScanStatus.PENDING_SCAN
        q.pending.append(job)
        q.Y += job.length
    else:
        job.scan_status = ScanStatus.NO_SCAN
        q.noscan.append(job)
        q.X += job.remaining


def compute_Z(state: SchedulerState) -> tuple[Fraction, ...]:
    return tuple(
        z_weight(q.X, q.Y, len(q.pending), coef) for q, coef in zip(state.queues, state.coef)
    )


def _report_pick(state, j, kind):
    if state._report is not None:
        state._report.picks.append((j, kind))


def process_X(state: SchedulerState, j: int) -> Job:
    state.begin_slot()
    q, cur = state.queues[j], state._cursors[j]
    if cur.x_pos >= len(q.noscan):
        raise ContractError(f"no unscheduled no-scan job of type {j + 1} this slot")
    job = q.noscan[cur.x_pos]
    cur.x_pos += 1
    cur.rx -= job.remaining
    job.remaining -= 1
    q.X -= 1
    _report_pick(state, j, "X")
    if job.remaining == 0 and state._report is not None:
        state._report.completions.append((job, state.slot - job.arrival_slot + 1))
    return job


def process_Y(state: SchedulerState, j: int) -> Job:
    state.begin_slot()
    q, cur = state.queues[j], state._cursors[j]
    if cur.y_pos >= len(q.pending):
        raise ContractError(f"no unscheduled pending-scan job of type {j + 1} this slot")
    job = q.pending[cur.y_pos]
    cur.y_pos += 1
    cur.ry -= job.length
    q.Y -= job.length
    _report_pick(state, j, "Y")
    if reveal_truth(job):
        job.remaining = 0
        if state._report is not None:
            state._report.detections.append((job, state.slot - job.arrival_slot + 1))
    else:
        job.scan_status = ScanStatus.SCANNED_GENUINE
        q.X += job.length
        cur.scanned_ok.append(job)
    return job


def process_job(state: SchedulerState, j: int) -> str:
    """One unit of type-j service: pick the X or Y pool in proportion to unscheduled work."""
    state.begin_slot()
    q, cur = state.queues[j], state._cursors[j]
    has_x = cur.x_pos < len(q.noscan)
    has_y = cur.y_pos < len(q.pending)
    if has_x and has_y:
        r = state.process_rng.random()
        if r * (cur.rx + cur.ry) < cur.rx:
            process_X(state, j)
            return "X"
        process_Y(state, j)
        return "Y"
    if has_y:
        process_Y(state, j)
        return "Y"
    if has_x:
        process_X(state, j)
        return "X"
    _report_pick(state, j, "-")
    return "-"


def step(state: SchedulerState, arrivals: Sequence[Job]) -> SlotReport:
    """One slot of RobustMaxWork: admit, weigh, pick N', serve, close the slot."""
    for job in arrivals:
        admit(state, job)
    Z = compute_Z(state)
    _, cfg = best_config(Z, state.fs)
    system = tuple(state.n_servers * c for c in cfg)
    report = SlotReport(state.slot, cfg, system, Z, ())
    state._report = report
    state.begin_slot()
    served_x = [0] * len(Z)
    served_y = [0] * len(Z)
    for j, budget in enumerate(system):
        for _ in range(budget):
            kind = process_job(state, j)
            if kind == "-":
                break  # nothing left unscheduled for this type; further calls idle too
            if kind == "X":
                served_x[j] += 1
            else:
                served_y[j] += 1
    state.end_slot()
    state._report = None
    report.served_x, report.served_y = tuple(served_x), tuple(served_y)
    report.x = tuple(q.X for q in state.queues)
    report.y = tuple(q.Y for q in state.queues)
    report.z_after = compute_Z(state)
    state.slot += 1
    return report
