"""Compiled slot loop shared by the centralized and decentralized engines.

State lives in plain integer arrays so numba can run millions of slots:

* ``jobs[row, col]``: one row per live job (rows are recycled through ``free``).
* ``pools[node, type, pool, field]``: singly linked list of job rows per pool,
  pool 0 = no-scan (X), pool 1 = pending scan (Y); lists are kept in job-id
  order, which is arrival order.

Decisions and random draws mirror ``sched_core`` / ``sched_dist`` one for one;
the equivalence tests hold the two implementations to identical traces.
Per-job weights are compared as scaled integers, so ties break exactly.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from numba import njit

from .capacity import FeasibleSet
from .domain import ArrivalSpec, ContractError
from .scanning import ScanLog, ScanVector
from .sched_core import Z_PER_JOB, z_coefficients, z_weight
from .sched_dist import REFRESH_EVERY_SLOT as REFRESH_EVERY_NAME
from .sched_dist import REFRESH_ON_IDLE as REFRESH_ON_IDLE_NAME
from .sched_dist import WORKLOAD_LENGTH, WORKLOAD_Z, Routing
from .workload import ArrivalBatch

# job columns
ID, TYPE, LEN, REM, ARR, MAL, STAT, NEXT = range(8)
N_COLS = 8
# pool fields
HEAD, TAIL, TOTAL, COUNT = range(4)
POOL_X, POOL_Y = 0, 1
# accumulator slots (int64)
A_DONE, A_DONE_SUM, A_DONE_MAX, A_DET, A_DET_SUM, A_DET_MAX, A_NFREE, A_IDLE = range(8)
N_ACC = 8

ROUTE_NONE, ROUTE_JSQ, ROUTE_JSW, ROUTE_UR, ROUTE_RR, ROUTE_P2Q, ROUTE_P2W = range(7)
REFRESH_EVERY, REFRESH_IDLE = 0, 1


@njit(cache=True)
def _alloc(jobs, free, acc):
    acc[A_NFREE] -= 1
    return free[acc[A_NFREE]]


@njit(cache=True)
def _release(row, free, acc):
    free[acc[A_NFREE]] = row
    acc[A_NFREE] += 1


@njit(cache=True)
def _append(jobs, pools, node, j, pool, row):
    jobs[row, NEXT] = -1
    tail = pools[node, j, pool, TAIL]
    if tail == -1:
        pools[node, j, pool, HEAD] = row
    else:
        jobs[tail, NEXT] = row
    pools[node, j, pool, TAIL] = row
    pools[node, j, pool, COUNT] += 1


@njit(cache=True)
def _admit(jobs, pools, gq, node, row, alpha, scan_rng, scanlog, log_scans):
    j = jobs[row, TYPE]
    L = jobs[row, LEN]
    u = scan_rng.random()
    if u < alpha[j, L]:
        jobs[row, STAT] = 1
        _append(jobs, pools, node, j, POOL_Y, row)
        pools[node, j, POOL_Y, TOTAL] += L
    else:
        jobs[row, STAT] = 0
        _append(jobs, pools, node, j, POOL_X, row)
        pools[node, j, POOL_X, TOTAL] += jobs[row, REM]
        if log_scans:
            scanlog[j, L, 2] += 1
    gq[j] += L


@njit(cache=True)
def _int_weight(pools, node, j, zint):
    return (zint[j, 0] * pools[node, j, POOL_X, TOTAL]
            + zint[j, 1] * pools[node, j, POOL_Y, TOTAL]
            + zint[j, 2] * pools[node, j, POOL_Y, COUNT])


@njit(cache=True)
def _float_weight(pools, node, j, zflt):
    return (pools[node, j, POOL_X, TOTAL] + zflt[j, 0] * pools[node, j, POOL_Y, TOTAL]
            + zflt[j, 1] * pools[node, j, POOL_Y, COUNT])


@njit(cache=True)
def _best_config(pools, node, configs, zint, zflt, exact):
    K, J = configs.shape
    best = 0
    if exact:
        best_score = -1
        for k in range(K):
            s = 0
            for j in range(J):
                if configs[k, j]:
                    s += configs[k, j] * _int_weight(pools, node, j, zint)
            if s > best_score:
                best, best_score = k, s
    else:
        best_f = -1.0
        for k in range(K):
            f = 0.0
            for j in range(J):
                if configs[k, j]:
                    f += configs[k, j] * _float_weight(pools, node, j, zflt)
            if f > best_f:
                best, best_f = k, f
    return best


@njit(cache=True)
def _serve_type(jobs, pools, gq, free, acc, node, j, budget, slot, process_rng,
                drain_coef, drain, events, staged, scanlog, log_scans):
    """Up to ``budget`` units of type-j service at one node.  Returns True if a unit idled."""
    px = pools[node, j, POOL_X, HEAD]
    prev = -1
    rx = pools[node, j, POOL_X, TOTAL]
    ry = pools[node, j, POOL_Y, TOTAL]
    n_staged = 0
    idle = False
    for _ in range(budget):
        has_x = px != -1
        has_y = pools[node, j, POOL_Y, HEAD] != -1
        if has_x and has_y:
            take_x = process_rng.random() * (rx + ry) < rx
        elif has_x:
            take_x = True
        elif has_y:
            take_x = False
        else:
            idle = True
            break
        events[j] += 1
        if take_x:
            row = px
            rem = jobs[row, REM]
            rx -= rem
            jobs[row, REM] = rem - 1
            pools[node, j, POOL_X, TOTAL] -= 1
            gq[j] -= 1
            drain[j] += 1.0
            nxt = jobs[row, NEXT]
            if rem == 1:
                lat = slot - jobs[row, ARR] + 1
                acc[A_DONE] += 1
                acc[A_DONE_SUM] += lat
                if lat > acc[A_DONE_MAX]:
                    acc[A_DONE_MAX] = lat
                if prev == -1:
                    pools[node, j, POOL_X, HEAD] = nxt
                else:
                    jobs[prev, NEXT] = nxt
                if pools[node, j, POOL_X, TAIL] == row:
                    pools[node, j, POOL_X, TAIL] = prev
                pools[node, j, POOL_X, COUNT] -= 1
                _release(row, free, acc)
            else:
                prev = row
            px = nxt
        else:
            row = pools[node, j, POOL_Y, HEAD]
            L = jobs[row, LEN]
            ry -= L
            pools[node, j, POOL_Y, TOTAL] -= L
            pools[node, j, POOL_Y, COUNT] -= 1
            nxt = jobs[row, NEXT]
            pools[node, j, POOL_Y, HEAD] = nxt
            if nxt == -1:
                pools[node, j, POOL_Y, TAIL] = -1
            before = drain_coef[j, 0] * L + drain_coef[j, 1]
            if jobs[row, MAL]:
                drain[j] += before
                lat = slot - jobs[row, ARR] + 1
                acc[A_DET] += 1
                acc[A_DET_SUM] += lat
                if lat > acc[A_DET_MAX]:
                    acc[A_DET_MAX] = lat
                gq[j] -= L
                if log_scans:
                    scanlog[j, L, 1] += 1
                _release(row, free, acc)
            else:
                drain[j] += before - L
                jobs[row, STAT] = 2
                pools[node, j, POOL_X, TOTAL] += L
                staged[n_staged] = row
                n_staged += 1
                if log_scans:
                    scanlog[j, L, 0] += 1
    # scanned-genuine jobs join the no-scan pool in id order, after this slot's picks
    if n_staged:
        cur_prev = -1
        cur = pools[node, j, POOL_X, HEAD]
        for s in range(n_staged):
            row = staged[s]
            rid = jobs[row, ID]
            while cur != -1 and jobs[cur, ID] < rid:
                cur_prev = cur
                cur = jobs[cur, NEXT]
            jobs[row, NEXT] = cur
            if cur_prev == -1:
                pools[node, j, POOL_X, HEAD] = row
            else:
                jobs[cur_prev, NEXT] = row
            if cur == -1:
                pools[node, j, POOL_X, TAIL] = row
            pools[node, j, POOL_X, COUNT] += 1
            cur_prev = row
    return idle


@njit(cache=True)
def _route(jobs, pools, row, n_nodes, policy, metric, rr_ptr, zint, zflt, exact, route_rng):
    if n_nodes == 1:
        return 0
    j = jobs[row, TYPE]
    if policy == ROUTE_UR:
        return route_rng.integers(0, n_nodes)
    if policy == ROUTE_RR:
        rr_ptr[j] = (rr_ptr[j] + 1) % n_nodes
        return rr_ptr[j]
    if policy == ROUTE_JSQ or policy == ROUTE_JSW:
        lo, hi, a, b = 0, n_nodes, -1, -1
    else:
        a = route_rng.integers(0, n_nodes)
        b = route_rng.integers(0, n_nodes - 1)
        if b >= a:
            b += 1
        if b < a:
            a, b = b, a
        lo, hi = 0, 2
    by_count = policy == ROUTE_JSQ or policy == ROUTE_P2Q
    best = -1
    best_i = 0
    best_f = 0.0
    for c in range(lo, hi):
        m = c if a == -1 else (a if c == 0 else b)
        if by_count:
            v = pools[m, j, POOL_X, COUNT] + pools[m, j, POOL_Y, COUNT]
            if best == -1 or v < best_i:
                best, best_i = m, v
        elif metric == 1:
            v = pools[m, j, POOL_X, TOTAL] + pools[m, j, POOL_Y, TOTAL]
            if best == -1 or v < best_i:
                best, best_i = m, v
        elif exact:
            v = _int_weight(pools, m, j, zint)
            if best == -1 or v < best_i:
                best, best_i = m, v
        else:
            f = _float_weight(pools, m, j, zflt)
            if best == -1 or f < best_f:
                best, best_f = m, f
    return best


@njit(cache=True)
def run_slots(jobs, pools, gq, free, acc, node_cfg, node_refresh, rr_ptr,
              configs, alpha, zint, zflt, exact, drain_coef, drain, events,
              arr_ptr, arr_id, arr_type, arr_len, arr_mal,
              slot0, n_slots, mult, policy, metric, refresh_mode,
              scan_rng, process_rng, route_rng,
              q_out, cfg_out, staged, scanlog, log_scans):
    n_nodes = pools.shape[0]
    J = pools.shape[1]
    for t in range(n_slots):
        slot = slot0 + t
        for i in range(arr_ptr[t], arr_ptr[t + 1]):
            row = _alloc(jobs, free, acc)
            jobs[row, ID] = arr_id[i]
            jobs[row, TYPE] = arr_type[i]
            jobs[row, LEN] = arr_len[i]
            jobs[row, REM] = arr_len[i]
            jobs[row, ARR] = slot
            jobs[row, MAL] = arr_mal[i]
            node = 0
            if policy != ROUTE_NONE:
                node = _route(jobs, pools, row, n_nodes, policy, metric, rr_ptr, zint, zflt, exact, route_rng)
            _admit(jobs, pools, gq, node, row, alpha, scan_rng, scanlog, log_scans)
        for node in range(n_nodes):
            if refresh_mode == REFRESH_EVERY or node_cfg[node] == -1 or node_refresh[node]:
                if refresh_mode == REFRESH_IDLE:
                    empty = True
                    for j in range(J):
                        if pools[node, j, POOL_X, HEAD] != -1 or pools[node, j, POOL_Y, HEAD] != -1:
                            empty = False
                            break
                    if empty:
                        node_cfg[node] = -1
                        node_refresh[node] = 1
                        continue
                node_cfg[node] = _best_config(pools, node, configs, zint, zflt, exact)
            node_refresh[node] = 0
            k = node_cfg[node]
            for j in range(J):
                budget = mult * configs[k, j]
                if budget > 0:
                    if _serve_type(jobs, pools, gq, free, acc, node, j, budget, slot, process_rng,
                                   drain_coef, drain, events, staged, scanlog, log_scans):
                        node_refresh[node] = 1
                        acc[A_IDLE] += 1
        cfg_out[t] = node_cfg[0]
        for j in range(J):
            q_out[t, j] = gq[j]


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


# larger common denominators would risk int64 overflow in the weight sums
MAX_EXACT_SCALE = 1 << 20


class FastEngine:
    """Array-backed engine for centralized (one pooled node, budget n * N') or
    decentralized (n nodes, budget N' each, arrivals routed) RobustMaxWork."""

    def __init__(self, spec: ArrivalSpec, alpha: ScanVector, fs: FeasibleSet, *,
                 scan_rng: np.random.Generator, process_rng: np.random.Generator,
                 routing_rng: np.random.Generator | None = None,
                 routing: str | None = None, workload_metric: str = WORKLOAD_Z,
                 refresh: str | None = None, z_mode: str = Z_PER_JOB, log_scans: bool = False):
        if fs.scale != 1:
            raise ContractError("FastEngine takes the per-server feasible set")
        if alpha.n_types != spec.n_types or fs.j_count != spec.n_types:
            raise ContractError("spec, scan vector and feasible set disagree on the number of types")
        J = spec.n_types
        n = spec.n_servers
        self.spec, self.alpha, self.fs = spec, alpha, fs
        self.decentralized = routing is not None
        if self.decentralized:
            self.policy = _ROUTE_CODES[Routing(routing)]
            self.n_nodes, self.mult = n, 1
            refresh = REFRESH_ON_IDLE_NAME if refresh is None else refresh
        else:
            self.policy = ROUTE_NONE
            self.n_nodes, self.mult = 1, n
            refresh = REFRESH_EVERY_NAME if refresh is None else refresh
        if refresh not in (REFRESH_EVERY_NAME, REFRESH_ON_IDLE_NAME):
            raise ContractError(f"unknown refresh mode {refresh!r}")
        self.refresh = REFRESH_EVERY if refresh == REFRESH_EVERY_NAME else REFRESH_IDLE
        if workload_metric not in (WORKLOAD_Z, WORKLOAD_LENGTH):
            raise ContractError(f"unknown workload metric {workload_metric!r}")
        self.metric = 1 if workload_metric == WORKLOAD_LENGTH else 0
        self.scan_rng, self.process_rng = scan_rng, process_rng
        self.routing_rng = routing_rng if routing_rng is not None else np.random.Generator(np.random.PCG64(0))

        self.coef = z_coefficients(spec, z_mode)
        self.z_mode = z_mode
        self._setup_weights(J)
        self.configs = np.array(fs.maximal_configs, dtype=np.int64).reshape(-1, J)
        max_len = max(d.max_length for d in spec.lengths)
        self.alpha_dense = np.array(alpha.dense(max_len), dtype=np.float64)
        self.max_length = max_len

        cap = 1024
        self.jobs = np.zeros((cap, N_COLS), dtype=np.int64)
        self.free = np.arange(cap - 1, -1, -1, dtype=np.int64)
        self.acc = np.zeros(N_ACC, dtype=np.int64)
        self.acc[A_NFREE] = cap
        self.pools = np.zeros((self.n_nodes, J, 2, 4), dtype=np.int64)
        self.pools[:, :, :, HEAD] = -1
        self.pools[:, :, :, TAIL] = -1
        self.gq = np.zeros(J, dtype=np.int64)
        self.node_cfg = np.full(self.n_nodes, -1, dtype=np.int64)
        self.node_refresh = np.ones(self.n_nodes, dtype=np.int64)
        self.rr_ptr = np.full(J, self.n_nodes - 1, dtype=np.int64)
        self.drain = np.zeros(J, dtype=np.float64)
        self.events = np.zeros(J, dtype=np.int64)
        self.staged = np.zeros(int(self.mult * max(1, self.configs.max())), dtype=np.int64)
        self.log_scans = log_scans
        self.scanlog = np.zeros((J, max_len + 1, 3), dtype=np.int64)
        self.slot = 0

    def _setup_weights(self, J: int) -> None:
        self.zflt = np.zeros((J, 2), dtype=np.float64)
        self.drain_coef = np.zeros((J, 2), dtype=np.float64)
        for j, c in enumerate(self.coef):
            if c is not None:
                self.zflt[j] = (float(c[0]), float(c[1]))
                self.drain_coef[j] = (float(c[0]), float(c[1]))
        self.zint = np.zeros((J, 3), dtype=np.int64)
        self.exact = False
        live = [c for c in self.coef if c is not None]
        scale = 1
        for mult, per_job in live:
            scale = _lcm(scale, Fraction(mult).denominator)
            scale = _lcm(scale, Fraction(per_job).denominator)
        if scale <= MAX_EXACT_SCALE:
            self.exact = True
            self.weight_scale = scale
            for j, c in enumerate(self.coef):
                if c is not None:
                    self.zint[j] = (scale, int(c[0] * scale), int(c[1] * scale))

    def _reserve(self, need: int) -> None:
        nfree = int(self.acc[A_NFREE])
        if nfree >= need:
            return
        old = self.jobs.shape[0]
        new = max(2 * old, old + need - nfree)
        jobs = np.zeros((new, N_COLS), dtype=np.int64)
        jobs[:old] = self.jobs
        free = np.empty(new, dtype=np.int64)
        free[:nfree] = self.free[:nfree]
        free[nfree:nfree + new - old] = np.arange(new - 1, old - 1, -1)
        self.jobs, self.free = jobs, free
        self.acc[A_NFREE] = nfree + new - old

    def advance(self, batch: ArrivalBatch) -> tuple[np.ndarray, np.ndarray]:
        """Run the slots of ``batch``; returns per-slot (global Q per type, node-0 config index)."""
        if batch.start != self.slot:
            raise ContractError(f"batch starts at slot {batch.start}, engine is at {self.slot}")
        n_slots = batch.stop - batch.start
        self._reserve(len(batch))
        J = self.spec.n_types
        q_out = np.zeros((n_slots, J), dtype=np.int64)
        cfg_out = np.zeros(n_slots, dtype=np.int64)
        run_slots(self.jobs, self.pools, self.gq, self.free, self.acc, self.node_cfg, self.node_refresh,
                  self.rr_ptr, self.configs, self.alpha_dense, self.zint, self.zflt, self.exact,
                  self.drain_coef, self.drain, self.events,
                  np.ascontiguousarray(batch.ptr, dtype=np.int64), batch.job_id, batch.type_index,
                  batch.length, batch.malicious.astype(np.int64),
                  self.slot, n_slots, self.mult, self.policy, self.metric, self.refresh,
                  self.scan_rng, self.process_rng, self.routing_rng,
                  q_out, cfg_out, self.staged, self.scanlog, self.log_scans)
        self.slot += n_slots
        return q_out, cfg_out

    # -- read-out ----------------------------------------------------------
    @property
    def x(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.pools[:, :, POOL_X, TOTAL].sum(axis=0))

    @property
    def y(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.pools[:, :, POOL_Y, TOTAL].sum(axis=0))

    @property
    def q(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.gq)

    def pending_counts(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.pools[:, :, POOL_Y, COUNT].sum(axis=0))

    def jobs_in_system(self) -> int:
        return int(self.pools[:, :, :, COUNT].sum())

    def z(self) -> tuple[Fraction, ...]:
        """System-wide weights (sums of the per-node weights, which are linear in the pools)."""
        return tuple(z_weight(x, y, c, coef) for x, y, c, coef in
                     zip(self.x, self.y, self.pending_counts(), self.coef))

    def latency_totals(self) -> tuple[int, int, int, int, int, int]:
        a = self.acc
        return (int(a[A_DONE]), int(a[A_DONE_SUM]), int(a[A_DONE_MAX]),
                int(a[A_DET]), int(a[A_DET_SUM]), int(a[A_DET_MAX]))

    def node_configs(self) -> list[int | None]:
        return [None if k < 0 else int(k) for k in self.node_cfg]

    def scan_log(self) -> ScanLog:
        log = ScanLog(self.spec.n_types)
        for j, L, c in zip(*np.nonzero(self.scanlog)):
            log.counts[(int(j), int(L))][int(c)] += int(self.scanlog[j, L, c])
        return log

    def set_alpha(self, alpha: ScanVector) -> None:
        if alpha.n_types != self.spec.n_types:
            raise ContractError("scan vector has the wrong number of types")
        self.alpha = alpha
        self.alpha_dense = np.array(alpha.dense(self.max_length), dtype=np.float64)

    def set_spec(self, spec: ArrivalSpec) -> None:
        """Swap the rates the weights are built from (adaptive mode); queues are untouched."""
        self.coef = z_coefficients(spec, self.z_mode)
        self._setup_weights(spec.n_types)
        self.weight_spec = spec


_ROUTE_CODES = {
    Routing.JSQ: ROUTE_JSQ, Routing.JSW: ROUTE_JSW, Routing.UR: ROUTE_UR,
    Routing.RR: ROUTE_RR, Routing.P2Q: ROUTE_P2Q, Routing.P2W: ROUTE_P2W,
}
