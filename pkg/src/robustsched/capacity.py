"""Feasible server configurations and the capacity region co(S).

Membership is decided with a small exact simplex over ``fractions.Fraction``:
maximise t subject to ``t * a <= sum_k mu_k N_k``, ``sum_k mu_k <= 1``, ``mu >= 0``.
Because S is downward closed and contains the zero configuration, ``t >= 1``
is equivalent to ``a`` lying in co(S), and ``t - 1`` is the multiplicative margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

from .domain import Configuration, ContractError, ResourceVector, VMTypeSpec, as_fraction, job_fits

INFINITE_MARGIN = math.inf


class UnboundedConfigurationError(ContractError):
    pass


@dataclass(frozen=True)
class FeasibleSet:
    maximal_configs: tuple[Configuration, ...]
    j_count: int
    scale: int = 1  # number of identical servers the set stands for

    def __iter__(self):
        return iter(self.maximal_configs)

    def __len__(self) -> int:
        return len(self.maximal_configs)


@dataclass(frozen=True)
class RegionVerdict:
    inside: bool
    margin: Fraction | float
    witness: tuple[Fraction, ...] | None

    @property
    def strictly_inside(self) -> bool:
        return self.margin > 0

    @property
    def label(self) -> str:
        if self.strictly_inside:
            return "inside"
        if self.inside:
            return "boundary"
        return "outside"


def enumerate_maximal_configs(capacity: ResourceVector, demands: Sequence[VMTypeSpec]) -> FeasibleSet:
    """All maximal per-server configurations, in ascending lexicographic order."""
    J = len(demands)
    if J == 0:
        raise ContractError("need at least one VM type")
    for vm in demands:
        if len(vm.demand) != len(capacity):
            raise ContractError(f"VM type {vm.type_index} has {len(vm.demand)} resources, server has {len(capacity)}")
        if all(d == 0 for d in vm.demand):
            raise UnboundedConfigurationError(f"VM type {vm.type_index} consumes no resource")

    R = len(capacity)
    cap = list(capacity)
    found: list[Configuration] = []
    counts = [0] * J

    def fits_one_more(left, j) -> bool:
        return all(demands[j].demand.amounts[r] <= left[r] for r in range(R))

    def dfs(j: int, left: list[Fraction]) -> None:
        if j == J:
            if not any(fits_one_more(left, k) for k in range(J)):
                found.append(tuple(counts))
            return
        demand = demands[j].demand.amounts
        c = 0
        while True:
            counts[j] = c
            dfs(j + 1, left)
            if not fits_one_more(left, j):
                break
            left = [left[r] - demand[r] for r in range(R)]
            c += 1
        counts[j] = 0

    dfs(0, cap)
    found.sort()
    assert all(job_fits(c, demands, capacity) for c in found)
    return FeasibleSet(tuple(found), J)


def system_region(fs: FeasibleSet, n: int) -> FeasibleSet:
    """Region of n identical servers; membership(a, system) == membership(a / n, per-server)."""
    if n < 1:
        raise ContractError("server count must be >= 1")
    return replace(fs, scale=fs.scale * n)


def _simplex_max(c: list[Fraction], A: list[list[Fraction]], b: list[Fraction]):
    """Maximise c.x s.t. A x <= b, x >= 0, with b >= 0 (slack basis is feasible).

    Bland's rule, so degenerate pivots cannot cycle.  Returns (value, x) or
    (None, None) when unbounded.
    """
    m, n = len(A), len(c)
    # tableau rows: [A | I | b]
    T = [list(A[i]) + [Fraction(int(i == k)) for k in range(m)] + [b[i]] for i in range(m)]
    basis = [n + i for i in range(m)]
    cost = list(c) + [Fraction(0)] * m

    while True:
        # reduced costs c_j - c_B B^-1 A_j
        entering = None
        for col in range(n + m):
            rc = cost[col] - sum(cost[basis[i]] * T[i][col] for i in range(m))
            if rc > 0:
                entering = col
                break
        if entering is None:
            break
        leave, best = None, None
        for i in range(m):
            coef = T[i][entering]
            if coef > 0:
                ratio = T[i][-1] / coef
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    leave, best = i, ratio
        if leave is None:
            return None, None
        pivot = T[leave][entering]
        T[leave] = [v / pivot for v in T[leave]]
        for i in range(m):
            if i != leave and T[i][entering] != 0:
                f = T[i][entering]
                T[i] = [vi - f * vl for vi, vl in zip(T[i], T[leave])]
        basis[leave] = entering

    x = [Fraction(0)] * (n + m)
    for i, var in enumerate(basis):
        x[var] = T[i][-1]
    value = sum(cost[k] * x[k] for k in range(n))
    return value, x[:n]


def max_scaling(a: Sequence, fs: FeasibleSet) -> tuple[Fraction | float, tuple[Fraction, ...]]:
    """Largest t with t*a dominated by a sub-convex combination of maximal configs."""
    a = [as_fraction(x) / fs.scale for x in a]
    K, J = len(fs.maximal_configs), fs.j_count
    # variables: mu_0..mu_{K-1}, t
    A = []
    for j in range(J):
        A.append([-Fraction(fs.maximal_configs[k][j]) for k in range(K)] + [a[j]])
    A.append([Fraction(1)] * K + [Fraction(0)])
    b = [Fraction(0)] * J + [Fraction(1)]
    c = [Fraction(0)] * K + [Fraction(1)]
    value, x = _simplex_max(c, A, b)
    if value is None:
        return INFINITE_MARGIN, ()
    return value, tuple(x[:K])


def membership(a: Sequence, fs: FeasibleSet) -> RegionVerdict:
    """Decide whether the per-slot load vector ``a`` lies in co(S), exactly."""
    if len(a) != fs.j_count:
        raise ContractError(f"load vector has {len(a)} entries, region has {fs.j_count} types")
    if any(as_fraction(x) < 0 for x in a):
        raise ContractError("load vector must be non-negative")
    t, mu = max_scaling(a, fs)
    if t == INFINITE_MARGIN:
        witness = (Fraction(1),) + (Fraction(0),) * (len(fs.maximal_configs) - 1)
        return RegionVerdict(True, INFINITE_MARGIN, witness)
    inside = t >= 1
    witness = None
    if inside:
        mass = sum(mu)
        witness = tuple(m / mass for m in mu)
    return RegionVerdict(inside, t - 1, witness)
