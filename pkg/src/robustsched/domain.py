"""Core value types: resources, VM types, length distributions, arrival rates, jobs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence


class ContractError(ValueError):
    """Raised when an operation is called with inputs violating its contract."""


def as_fraction(value) -> Fraction:
    """Exact conversion; floats go through their shortest repr so 0.99 stays 99/100."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


@dataclass(frozen=True)
class ResourceVector:
    amounts: tuple[Fraction, ...]

    def __init__(self, amounts: Iterable):
        values = tuple(as_fraction(a) for a in amounts)
        if any(v < 0 for v in values):
            raise ContractError(f"negative resource amount in {values}")
        object.__setattr__(self, "amounts", values)

    def __len__(self) -> int:
        return len(self.amounts)

    def __iter__(self):
        return iter(self.amounts)


@dataclass(frozen=True)
class VMTypeSpec:
    type_index: int
    demand: ResourceVector
    name: str = ""

    def __post_init__(self):
        if all(a == 0 for a in self.demand):
            raise ContractError(f"VM type {self.type_index} has all-zero demand")


Configuration = tuple[int, ...]


def job_fits(config: Sequence[int], demands: Sequence[VMTypeSpec], capacity: ResourceVector) -> bool:
    """True iff running ``config[j]`` jobs of each type stays within every resource capacity."""
    if len(config) != len(demands):
        raise ContractError(f"configuration has {len(config)} entries for {len(demands)} VM types")
    if any(c < 0 for c in config):
        raise ContractError(f"negative count in configuration {tuple(config)}")
    for r, cap in enumerate(capacity):
        used = sum(count * vm.demand.amounts[r] for count, vm in zip(config, demands))
        if used > cap:
            return False
    return True


@dataclass(frozen=True)
class LengthBand:
    probability: Fraction
    lo: int
    hi: int


@dataclass(frozen=True)
class LengthDistribution:
    """Mixture of uniform integer bands; probabilities are exact rationals summing to 1."""

    bands: tuple[LengthBand, ...]

    def __init__(self, bands: Iterable):
        parsed = []
        for band in bands:
            if isinstance(band, LengthBand):
                parsed.append(band)
            else:
                p, lo, hi = band
                parsed.append(LengthBand(as_fraction(p), int(lo), int(hi)))
        parsed.sort(key=lambda b: b.lo)
        if not parsed:
            raise ContractError("length distribution needs at least one band")
        for b in parsed:
            if b.lo < 1 or b.lo > b.hi:
                raise ContractError(f"bad band [{b.lo}, {b.hi}]")
            if b.probability <= 0:
                raise ContractError(f"band [{b.lo}, {b.hi}] has non-positive probability")
        for a, b in zip(parsed, parsed[1:]):
            if b.lo <= a.hi:
                raise ContractError(f"bands [{a.lo}, {a.hi}] and [{b.lo}, {b.hi}] overlap")
        total = sum(b.probability for b in parsed)
        if total != 1:
            raise ContractError(f"band probabilities sum to {total}, not 1")
        object.__setattr__(self, "bands", tuple(parsed))

    @classmethod
    def point(cls, length: int) -> "LengthDistribution":
        return cls([(1, length, length)])

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(L for b in self.bands for L in range(b.lo, b.hi + 1))

    @property
    def max_length(self) -> int:
        return self.bands[-1].hi

    def pmf(self) -> dict[int, Fraction]:
        """Probability that an arriving job has each length."""
        out = {}
        for b in self.bands:
            p = b.probability / (b.hi - b.lo + 1)
            for L in range(b.lo, b.hi + 1):
                out[L] = p
        return out

    def mean(self) -> Fraction:
        return sum((b.probability * Fraction(b.lo + b.hi, 2) for b in self.bands), Fraction(0))

    def mean_reciprocal(self) -> Fraction:
        total = Fraction(0)
        for b in self.bands:
            harmonic = sum(Fraction(1, L) for L in range(b.lo, b.hi + 1))
            total += b.probability * harmonic / (b.hi - b.lo + 1)
        return total


@dataclass(frozen=True)
class ArrivalSpec:
    """System-wide arrival rates in work units per slot, one entry per VM type.

    Per-server rates are ``genuine[j] / n_servers``.  Per-length rates are
    derived: the share of type-j work carried by length L is ``p_L * L / E[l]``.
    """

    genuine: tuple[Fraction, ...]
    malicious: tuple[Fraction, ...]
    lengths: tuple[LengthDistribution, ...]
    n_servers: int = 1

    def __init__(self, genuine, malicious, lengths, n_servers: int = 1):
        g = tuple(as_fraction(x) for x in genuine)
        m = tuple(as_fraction(x) for x in malicious)
        if isinstance(lengths, LengthDistribution):
            lengths = (lengths,) * len(g)
        lengths = tuple(lengths)
        if not (len(g) == len(m) == len(lengths)):
            raise ContractError("genuine, malicious and length lists must have one entry per type")
        if any(x < 0 for x in g + m):
            raise ContractError("arrival rates must be non-negative")
        if n_servers < 1:
            raise ContractError("n_servers must be >= 1")
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "malicious", m)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "n_servers", int(n_servers))

    @property
    def n_types(self) -> int:
        return len(self.genuine)

    def total(self, j: int) -> Fraction:
        return self.genuine[j] + self.malicious[j]

    def genuine_fraction(self, j: int) -> Fraction:
        """lambda_j / (lambda_j + kappa_j); raises for a dead type."""
        tot = self.total(j)
        if tot == 0:
            raise ContractError(f"type {j + 1} has no traffic; genuine fraction undefined")
        return self.genuine[j] / tot

    def per_length_rates(self, j: int) -> dict[int, tuple[Fraction, Fraction]]:
        """(genuine, malicious) work rate carried by each length of type j."""
        dist = self.lengths[j]
        mean = dist.mean()
        return {
            L: (self.genuine[j] * p * L / mean, self.malicious[j] * p * L / mean)
            for L, p in dist.pmf().items()
        }

    def scaled(self, genuine_factor=1, malicious_factor=1) -> "ArrivalSpec":
        gf, mf = as_fraction(genuine_factor), as_fraction(malicious_factor)
        return ArrivalSpec(
            [x * gf for x in self.genuine],
            [x * mf for x in self.malicious],
            self.lengths,
            self.n_servers,
        )


class ScanStatus(enum.IntEnum):
    NO_SCAN = 0
    PENDING_SCAN = 1
    SCANNED_GENUINE = 2


@dataclass(eq=False)
class Job:
    id: int
    type_index: int  # 0-based
    length: int
    arrival_slot: int
    _malicious: bool = field(repr=False)
    scan_status: ScanStatus = ScanStatus.NO_SCAN
    remaining: int = -1

    def __post_init__(self):
        if self.length < 1:
            raise ContractError(f"job {self.id} has non-positive length {self.length}")
        if self.remaining < 0:
            self.remaining = self.length


def reveal_truth(job: Job) -> bool:
    """Ground-truth label (True = malicious).  Only scanning and metrics call this."""
    return job._malicious


# Table 1 instance types and the per-server capacity used in the EC2 experiment.
EC2_CAPACITY = ResourceVector([30, 30, 4000])
EC2_VM_TYPES = (
    VMTypeSpec(0, ResourceVector(["15", "8", "1690"]), "standard"),
    VMTypeSpec(1, ResourceVector(["17.1", "6.5", "420"]), "high_memory"),
    VMTypeSpec(2, ResourceVector(["7", "20", "1690"]), "high_cpu"),
)
EC2_LENGTHS = LengthDistribution([
    (Fraction(7, 10), 1, 50),
    (Fraction(15, 100), 251, 300),
    (Fraction(15, 100), 451, 500),
])
EC2_GENUINE_PER_SERVER = (Fraction(99, 100), Fraction(33, 100), Fraction(66, 100))
EC2_MALICIOUS_PER_SERVER = (Fraction(7, 10), Fraction(1, 100), Fraction(1, 100))


def ec2_spec(n_servers: int = 100, malicious: bool = True) -> ArrivalSpec:
    """The EC2 experiment workload: 100 servers, lambda = 100 * 0.99 * (1, 1/3, 2/3)."""
    kappa = EC2_MALICIOUS_PER_SERVER if malicious else (0, 0, 0)
    return ArrivalSpec(
        [x * n_servers for x in EC2_GENUINE_PER_SERVER],
        [Fraction(x) * n_servers for x in kappa],
        EC2_LENGTHS,
        n_servers,
    )
