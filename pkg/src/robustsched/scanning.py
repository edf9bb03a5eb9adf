"""Scanning strategies, expected arriving weight, and the stability classifier."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .capacity import FeasibleSet, RegionVerdict, membership, system_region
from .domain import ArrivalSpec, ContractError, LengthDistribution, LengthBand, as_fraction


@dataclass(frozen=True)
class ScanVector:
    """Scan probability for every (type, length) in each type's support."""

    alpha: tuple[Mapping[int, Fraction], ...]

    def __init__(self, alpha: Sequence[Mapping[int, object]]):
        table = []
        for j, row in enumerate(alpha):
            clean = {}
            for L, a in row.items():
                a = as_fraction(a)
                if not 0 <= a <= 1:
                    raise ContractError(f"alpha[{j + 1}][{L}] = {a} outside [0, 1]")
                clean[int(L)] = a
            table.append(clean)
        object.__setattr__(self, "alpha", tuple(table))

    def __getitem__(self, key: tuple[int, int]) -> Fraction:
        j, L = key
        try:
            return self.alpha[j][L]
        except KeyError:
            raise ContractError(f"no scan probability for type {j + 1}, length {L}") from None

    @property
    def n_types(self) -> int:
        return len(self.alpha)

    def is_binary(self) -> bool:
        return all(a in (0, 1) for row in self.alpha for a in row.values())

    def dense(self, max_length: int) -> list[list[float]]:
        """Row per type, index = length; lengths absent from the table scan with probability 0."""
        return [[float(row.get(L, 0)) for L in range(max_length + 1)] for row in self.alpha]

    def __eq__(self, other):
        if not isinstance(other, ScanVector):
            return NotImplemented
        return [dict(r) for r in self.alpha] == [dict(r) for r in other.alpha]

    def __hash__(self):
        return hash(tuple(tuple(sorted(r.items())) for r in self.alpha))


def _build(spec: ArrivalSpec, rule) -> ScanVector:
    return ScanVector([{L: rule(j, L) for L in spec.lengths[j].support} for j in range(spec.n_types)])


def scan_none(spec: ArrivalSpec) -> ScanVector:
    return _build(spec, lambda j, L: 0)


def scan_all(spec: ArrivalSpec) -> ScanVector:
    """Scan everything longer than the one-slot scan itself."""
    return _build(spec, lambda j, L: 0 if L <= 1 else 1)


def scan_threshold(spec: ArrivalSpec, j: int) -> Fraction | None:
    """Lengths strictly above (lambda_j + kappa_j) / kappa_j are worth scanning; None if never."""
    if spec.malicious[j] == 0:
        return None
    return spec.total(j) / spec.malicious[j]


def optimal_alpha(spec: ArrivalSpec) -> ScanVector:
    """Per (type, length): scan iff lambda/(lambda+kappa) + 1/L < 1; minimises each a_j."""
    def rule(j, L):
        if spec.total(j) == 0:
            return 0
        return 1 if spec.genuine_fraction(j) + Fraction(1, L) < 1 else 0
    return _build(spec, rule)


def threshold_alpha(spec: ArrivalSpec, lengths: Iterable[int]) -> ScanVector:
    """The optimal 0/1 rule applied to an arbitrary set of lengths (same set for every type)."""
    lengths = sorted(set(lengths))
    rows = []
    for j in range(spec.n_types):
        cut = scan_threshold(spec, j)
        rows.append({L: int(cut is not None and L > cut) for L in lengths})
    return ScanVector(rows)


def a_vector(alpha: ScanVector, spec: ArrivalSpec) -> tuple[Fraction, ...]:
    """Expected Z-weight arriving per slot for each type (system-wide).

    Arriving type-j work splits over lengths in proportion to p_L * L; a
    scanned job keeps only its genuine share of work plus one slot of scan.
    """
    out = []
    for j in range(spec.n_types):
        tot = spec.total(j)
        if tot == 0:
            out.append(Fraction(0))
            continue
        genuine_share = spec.genuine_fraction(j)
        mean = spec.lengths[j].mean()
        a = Fraction(0)
        for L, p in spec.lengths[j].pmf().items():
            job_rate = tot * p / mean
            al = alpha[j, L]
            a += job_rate * ((1 - al) * L + al * (genuine_share * L + 1))
        out.append(a)
    return tuple(out)


def per_server(a: Sequence[Fraction], n_servers: int) -> tuple[Fraction, ...]:
    return tuple(x / n_servers for x in a)


def classify(spec: ArrivalSpec, alpha: ScanVector, fs: FeasibleSet) -> RegionVerdict:
    """Capacity-region verdict for RobustMaxWork under ``alpha`` (fs is the per-server set)."""
    a = a_vector(alpha, spec)
    if fs.scale == 1:
        fs = system_region(fs, spec.n_servers)
    elif fs.scale != spec.n_servers:
        raise ContractError(f"region stands for {fs.scale} servers, workload for {spec.n_servers}")
    return membership(a, fs)


class ScanLog:
    """Counts of jobs seen while learning rates: scanned genuine / scanned malicious / unscanned."""

    def __init__(self, n_types: int):
        self.n_types = n_types
        self.counts: dict[tuple[int, int], list[int]] = defaultdict(lambda: [0, 0, 0])

    def add(self, type_index: int, length: int, malicious: bool | None, times: int = 1) -> None:
        slot = 2 if malicious is None else int(bool(malicious))
        self.counts[(type_index, length)][slot] += times

    @classmethod
    def from_events(cls, events: Iterable[tuple[int, int, bool | None]], n_types: int | None = None) -> "ScanLog":
        events = list(events)
        if n_types is None:
            n_types = 1 + max((e[0] for e in events), default=-1)
        log = cls(n_types)
        for j, L, truth in events:
            log.add(j, L, truth)
        return log

    def __len__(self) -> int:
        return sum(sum(c) for c in self.counts.values())


@dataclass(frozen=True)
class RateEstimate:
    spec: ArrivalSpec
    observed: tuple[bool, ...]  # False: no scanned job of this type, estimate unusable
    scanned_jobs: tuple[int, ...]


def estimate_rates(scan_log, elapsed_slots: int, n_servers: int, n_types: int | None = None) -> RateEstimate:
    """Empirical lambda, kappa (system-wide work per slot) and length mix from a warm-up log.

    Jobs never scanned (too short under scan-all) are split between genuine
    and malicious in the ratio seen among scanned jobs of the same type.
    """
    if elapsed_slots <= 0:
        raise ContractError("elapsed_slots must be positive")
    if not isinstance(scan_log, ScanLog):
        scan_log = ScanLog.from_events(scan_log, n_types)
    if len(scan_log) == 0:
        raise ContractError("scan log is empty; cannot estimate arrival rates")
    J = n_types if n_types is not None else scan_log.n_types

    genuine, malicious, lengths, observed, scanned = [], [], [], [], []
    for j in range(J):
        rows = {L: c for (jj, L), c in scan_log.counts.items() if jj == j and sum(c) > 0}
        g_jobs = sum(c[0] for c in rows.values())
        m_jobs = sum(c[1] for c in rows.values())
        n_scanned = g_jobs + m_jobs
        scanned.append(n_scanned)
        observed.append(n_scanned > 0)
        if not rows:
            genuine.append(Fraction(0))
            malicious.append(Fraction(0))
            lengths.append(LengthDistribution.point(1))
            continue
        g_work = sum(L * c[0] for L, c in rows.items())
        m_work = sum(L * c[1] for L, c in rows.items())
        u_work = sum(L * c[2] for L, c in rows.items())
        share = Fraction(g_jobs, n_scanned) if n_scanned else Fraction(1)
        genuine.append((g_work + share * u_work) / elapsed_slots)
        malicious.append((m_work + (1 - share) * u_work) / elapsed_slots)
        total_jobs = sum(sum(c) for c in rows.values())
        lengths.append(LengthDistribution(
            [LengthBand(Fraction(sum(c), total_jobs), L, L) for L, c in sorted(rows.items())]
        ))
    spec = ArrivalSpec(genuine, malicious, lengths, n_servers)
    return RateEstimate(spec, tuple(observed), tuple(scanned))
