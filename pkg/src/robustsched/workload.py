"""Seeded job arrivals: per slot, per server, per type and class, one Bernoulli trial.

n independent Bernoulli(p) trials are drawn as a single Binomial(n, p) count,
which is the same distribution.  Draws are made in fixed blocks of slots so
the sequence depends only on (seed, spec), never on how callers consume it.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .domain import ArrivalSpec, ContractError, Job, LengthDistribution

BLOCK_SLOTS = 4096

STREAM_NAMES = ("arrivals", "scan", "process", "routing")


class ConfigurationError(ContractError):
    pass


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per concern, so one policy's draws never shift another's."""
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.Generator(np.random.PCG64(child)) for name, child in zip(STREAM_NAMES, children)}


def mean_length(dist: LengthDistribution) -> Fraction:
    return dist.mean()


def mean_reciprocal_length(dist: LengthDistribution) -> Fraction:
    return dist.mean_reciprocal()


def job_probabilities(spec: ArrivalSpec) -> np.ndarray:
    """Per-server, per-slot job probability, shape (J, 2): column 0 genuine, 1 malicious."""
    probs = np.zeros((spec.n_types, 2))
    for j in range(spec.n_types):
        mean = spec.lengths[j].mean()
        for c, rate in enumerate((spec.genuine[j], spec.malicious[j])):
            p = rate / spec.n_servers / mean
            if p > 1:
                raise ConfigurationError(
                    f"type {j + 1} {'malicious' if c else 'genuine'} job probability {float(p):.4g} exceeds 1"
                )
            probs[j, c] = float(p)
    return probs


@dataclass
class ArrivalBatch:
    """Jobs arriving in slots [start, stop), flattened in slot order."""

    start: int
    stop: int
    ptr: np.ndarray  # jobs of slot start+k are rows ptr[k]:ptr[k+1]
    job_id: np.ndarray
    type_index: np.ndarray
    length: np.ndarray
    malicious: np.ndarray

    def __len__(self) -> int:
        return len(self.job_id)

    def jobs(self, slot: int) -> list[Job]:
        k = slot - self.start
        lo, hi = self.ptr[k], self.ptr[k + 1]
        return [
            Job(int(self.job_id[i]), int(self.type_index[i]), int(self.length[i]), slot, bool(self.malicious[i]))
            for i in range(lo, hi)
        ]


class WorkloadGenerator:
    def __init__(self, spec: ArrivalSpec, rng: np.random.Generator | int):
        self.spec = spec
        self.rng = rng if isinstance(rng, np.random.Generator) else rng_streams(rng)["arrivals"]
        self.probs = job_probabilities(spec)
        self.next_job_id = 0
        self._cum, self._lo, self._hi = self._band_tables(spec)
        self._block: ArrivalBatch | None = None
        self._next_block_start = 0

    @staticmethod
    def _band_tables(spec):
        width = max(len(d.bands) for d in spec.lengths)
        cum = np.ones((spec.n_types, width))
        lo = np.ones((spec.n_types, width), dtype=np.int64)
        hi = np.ones((spec.n_types, width), dtype=np.int64)
        for j, d in enumerate(spec.lengths):
            acc = Fraction(0)
            for b, band in enumerate(d.bands):
                acc += band.probability
                cum[j, b] = float(acc)
                lo[j, b], hi[j, b] = band.lo, band.hi
            cum[j, len(d.bands) - 1:] = 1.0
            lo[j, len(d.bands):] = lo[j, len(d.bands) - 1]
            hi[j, len(d.bands):] = hi[j, len(d.bands) - 1]
        return cum, lo, hi

    def _generate_block(self) -> ArrivalBatch:
        start = self._next_block_start
        J = self.spec.n_types
        counts = self.rng.binomial(self.spec.n_servers, self.probs, size=(BLOCK_SLOTS, J, 2))
        flat = counts.reshape(BLOCK_SLOTS, 2 * J)
        per_slot = flat.sum(axis=1)
        ptr = np.zeros(BLOCK_SLOTS + 1, dtype=np.int64)
        np.cumsum(per_slot, out=ptr[1:])
        n = int(ptr[-1])
        kinds = np.repeat(np.tile(np.arange(2 * J), BLOCK_SLOTS), flat.ravel())
        type_index = kinds // 2
        malicious = (kinds % 2).astype(bool)
        u = self.rng.random(n)
        band = (u[:, None] >= self._cum[type_index]).sum(axis=1)
        band = np.minimum(band, self._cum.shape[1] - 1)
        length = self.rng.integers(self._lo[type_index, band], self._hi[type_index, band] + 1)
        job_id = np.arange(self.next_job_id, self.next_job_id + n, dtype=np.int64)
        self.next_job_id += n
        self._next_block_start += BLOCK_SLOTS
        return ArrivalBatch(start, start + BLOCK_SLOTS, ptr, job_id, type_index.astype(np.int64),
                            length.astype(np.int64), malicious)

    def _block_for(self, slot: int) -> ArrivalBatch:
        if self._block is not None and self._block.start <= slot < self._block.stop:
            return self._block
        if slot < self._next_block_start:
            raise ContractError(f"slot {slot} already passed; generator only moves forward")
        while True:
            block = self._generate_block()
            if block.start <= slot < block.stop:
                self._block = block
                return block

    def slot_arrivals(self, slot: int) -> list[Job]:
        return self._block_for(slot).jobs(slot)

    def batch(self, start: int, stop: int) -> ArrivalBatch:
        """Arrays for slots [start, stop); may span several blocks."""
        parts = []
        s = start
        while s < stop:
            block = self._block_for(s)
            e = min(stop, block.stop)
            lo, hi = block.ptr[s - block.start], block.ptr[e - block.start]
            parts.append((block, s, e, lo, hi))
            s = e
        if len(parts) == 1:
            block, s, e, lo, hi = parts[0]
            return ArrivalBatch(s, e, block.ptr[s - block.start:e - block.start + 1] - lo,
                                block.job_id[lo:hi], block.type_index[lo:hi], block.length[lo:hi],
                                block.malicious[lo:hi])
        ptrs, cols, offset = [np.zeros(1, dtype=np.int64)], [], 0
        for block, s, e, lo, hi in parts:
            ptrs.append(block.ptr[s - block.start + 1:e - block.start + 1] - lo + offset)
            offset += hi - lo
            cols.append((block.job_id[lo:hi], block.type_index[lo:hi], block.length[lo:hi], block.malicious[lo:hi]))
        return ArrivalBatch(start, stop, np.concatenate(ptrs), *(np.concatenate(c) for c in zip(*cols)))


def generator_for(spec: ArrivalSpec, seed: int) -> WorkloadGenerator:
    return WorkloadGenerator(spec, rng_streams(seed)["arrivals"])
