"""Queue, latency and Lyapunov series sampled on a fixed slot cadence, with CSV export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import ContractError, Job


@dataclass(frozen=True)
class MetricsSample:
    slot: int                     # slots elapsed (a sample at slot T covers slots 0..T-1)
    avg_queue_work: float         # time average of sum_j Q_j
    max_queue_work: int
    avg_latency: float | None     # genuine jobs that completed; None before the first one
    max_latency: int | None
    avg_latency_detected: float | None  # malicious jobs, latency = detection slot
    lyapunov_v: float             # sum_j Z_j^2
    q: tuple[int, ...]
    jobs_in_system: int

    @property
    def total_queue_work(self) -> int:
        return sum(self.q)


def lyapunov(z: Sequence) -> Fraction:
    return sum((Fraction(v) ** 2 for v in z), Fraction(0))


class MetricsCollector:
    def __init__(self, n_types: int):
        self.n_types = n_types
        self.slots = 0
        self.sum_q = 0
        self.max_q = 0
        self.done = self.done_sum = self.done_max = 0
        self.det = self.det_sum = self.det_max = 0
        self.samples: list[MetricsSample] = []

    # -- latency -------------------------------------------------------------
    def record_completion(self, job: Job, completion_slot: int, detected: bool = False) -> int:
        if completion_slot < job.arrival_slot:
            raise ContractError("job completed before it arrived")
        lat = completion_slot - job.arrival_slot + 1
        if detected:
            self.det += 1
            self.det_sum += lat
            self.det_max = max(self.det_max, lat)
        else:
            self.done += 1
            self.done_sum += lat
            self.done_max = max(self.done_max, lat)
        return lat

    def sync_latency(self, totals: tuple[int, int, int, int, int, int]) -> None:
        """Take cumulative latency counters from an engine that keeps its own."""
        self.done, self.done_sum, self.done_max, self.det, self.det_sum, self.det_max = totals

    # -- queues ----------------------------------------------------------------
    def observe(self, q_total: int) -> None:
        """Total queued work at the end of one slot."""
        self.slots += 1
        self.sum_q += q_total
        if q_total > self.max_q:
            self.max_q = q_total

    def observe_block(self, q_per_slot: np.ndarray) -> None:
        totals = np.asarray(q_per_slot, dtype=np.int64).reshape(len(q_per_slot), -1).sum(axis=1)
        if len(totals) == 0:
            return
        self.slots += len(totals)
        self.sum_q += int(totals.sum())
        self.max_q = max(self.max_q, int(totals.max()))

    def avg_queue_exact(self) -> Fraction:
        if self.slots == 0:
            raise ContractError("no slot observed yet")
        return Fraction(self.sum_q, self.slots)

    def snapshot(self, z: Sequence, q: Sequence[int], jobs_in_system: int) -> MetricsSample:
        sample = MetricsSample(
            slot=self.slots,
            avg_queue_work=float(self.avg_queue_exact()),
            max_queue_work=self.max_q,
            avg_latency=self.done_sum / self.done if self.done else None,
            max_latency=self.done_max if self.done else None,
            avg_latency_detected=self.det_sum / self.det if self.det else None,
            lyapunov_v=float(lyapunov(z)),
            q=tuple(int(v) for v in q),
            jobs_in_system=int(jobs_in_system),
        )
        self.samples.append(sample)
        return sample


def should_sample(slots_elapsed: int, every_k: int) -> bool:
    if every_k <= 0:
        raise ContractError("sampling cadence must be positive")
    return slots_elapsed > 0 and slots_elapsed % every_k == 0


def csv_header(n_types: int) -> list[str]:
    return (["slot", "avg_queue_work", "max_queue_work", "avg_latency", "max_latency",
             "avg_latency_detected", "lyapunov_v"]
            + [f"q{j + 1}" for j in range(n_types)] + ["jobs_in_system"])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_csv(samples: Iterable[MetricsSample], path, n_types: int | None = None) -> None:
    samples = list(samples)
    if n_types is None:
        if not samples:
            raise ContractError("n_types is needed to write the header of an empty series")
        n_types = len(samples[0].q)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(n_types))
        for s in samples:
            w.writerow([_cell(v) for v in (s.slot, s.avg_queue_work, s.max_queue_work, s.avg_latency,
                                           s.max_latency, s.avg_latency_detected, s.lyapunov_v)]
                       + [str(v) for v in s.q] + [str(s.jobs_in_system)])


def read_csv(path) -> list[MetricsSample]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: empty file")
    header = rows[0]
    n_types = len(header) - 8
    if n_types < 1 or header != csv_header(n_types):
        raise ContractError(f"{path}: unexpected header")

    def opt(cell, kind):
        return None if cell == "" else kind(cell)

    out = []
    for r in rows[1:]:
        out.append(MetricsSample(
            slot=int(r[0]), avg_queue_work=float(r[1]), max_queue_work=int(r[2]),
            avg_latency=opt(r[3], float), max_latency=opt(r[4], int),
            avg_latency_detected=opt(r[5], float), lyapunov_v=float(r[6]),
            q=tuple(int(v) for v in r[7:7 + n_types]), jobs_in_system=int(r[7 + n_types]),
        ))
    return out
