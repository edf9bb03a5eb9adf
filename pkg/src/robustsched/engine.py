"""Scenarios, run orchestration, adaptive warm-up, analysis and comparison."""

from __future__ import annotations

import configparser
import logging
import re
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .capacity import FeasibleSet, RegionVerdict, enumerate_maximal_configs
from .domain import (
    ArrivalSpec,
    ContractError,
    LengthDistribution,
    ResourceVector,
    VMTypeSpec,
    as_fraction,
)
from .kernel import A_IDLE, FastEngine
from .metrics import MetricsCollector, MetricsSample, should_sample
from .scanning import (
    ScanLog,
    ScanVector,
    a_vector,
    classify,
    estimate_rates,
    optimal_alpha,
    per_server,
    scan_all,
    scan_none,
    scan_threshold,
    threshold_alpha,
)
from .sched_core import Z_MODES, Z_PER_JOB, SchedulerState, step
from .sched_dist import REFRESH_EVERY_SLOT, REFRESH_ON_IDLE, Routing, RoutingPolicy, dist_step, make_nodes
from .workload import ConfigurationError, generator_for, job_probabilities, rng_streams

log = logging.getLogger(__name__)

CENTRALIZED = "centralized"
DECENTRALIZED = "decentralized"
STRATEGIES = ("none", "all", "opt", "custom", "adaptive")
PROFILES = {"desk": (500_000, 25_000), "full": (4_000_000, 200_000)}
CHUNK_SLOTS = 16384


class ScenarioError(ConfigurationError):
    """A scenario file or override that cannot describe a valid run."""


@dataclass(frozen=True)
class Scenario:
    name: str
    capacity: ResourceVector
    vm_types: tuple[VMTypeSpec, ...]
    spec: ArrivalSpec
    mode: str = CENTRALIZED
    routing: str | None = None
    workload_metric: str = "z"
    refresh: str | None = None
    strategy: str = "opt"
    custom_alpha: ScanVector | None = None
    warmup_slots: int = 0
    z_mode: str = Z_PER_JOB
    total_slots: int = PROFILES["desk"][0]
    sample_every: int = PROFILES["desk"][1]
    seed: int = 1
    profile: str = "desk"

    def __post_init__(self):
        if self.total_slots <= 0:
            raise ScenarioError("slots must be positive")
        if self.sample_every <= 0:
            raise ScenarioError("sample_every must be positive")
        if self.mode not in (CENTRALIZED, DECENTRALIZED):
            raise ScenarioError(f"mode must be {CENTRALIZED} or {DECENTRALIZED}, got {self.mode!r}")
        if self.mode == DECENTRALIZED:
            try:
                Routing(self.routing)
            except ValueError:
                raise ScenarioError(f"unknown routing policy {self.routing!r}") from None
        if self.strategy not in STRATEGIES:
            raise ScenarioError(f"unknown scan strategy {self.strategy!r}")
        if self.strategy == "custom" and self.custom_alpha is None:
            raise ScenarioError("custom strategy needs a [scan.custom] table")
        if self.strategy == "adaptive" and not 0 < self.warmup_slots < self.total_slots:
            raise ScenarioError("adaptive strategy needs 0 < warmup_slots < slots")
        if self.z_mode not in Z_MODES:
            raise ScenarioError(f"z_weight must be one of {Z_MODES}")
        if self.workload_metric not in ("z", "length"):
            raise ScenarioError("workload_metric must be z or length")
        if self.refresh not in (None, REFRESH_ON_IDLE, REFRESH_EVERY_SLOT):
            raise ScenarioError(f"unknown refresh mode {self.refresh!r}")
        if len(self.vm_types) != self.spec.n_types:
            raise ScenarioError(f"{len(self.vm_types)} VM types but arrival rates for {self.spec.n_types}")
        for vm in self.vm_types:
            if len(vm.demand) != len(self.capacity):
                raise ScenarioError(f"VM type {vm.name or vm.type_index + 1} lists the wrong number of resources")
        job_probabilities(self.spec)

    @property
    def n_servers(self) -> int:
        return self.spec.n_servers

    @property
    def routing_label(self) -> str:
        return self.routing if self.mode == DECENTRALIZED else CENTRALIZED

    def feasible_set(self) -> FeasibleSet:
        return enumerate_maximal_configs(self.capacity, self.vm_types)

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **kw)


# -- scenario files ----------------------------------------------------------

def _numbers(text: str, kind=as_fraction) -> list:
    return [kind(v.strip()) for v in text.split(",") if v.strip()]


_BAND = re.compile(r"^\s*([0-9./]+)\s*:\s*(\d+)\s*(?:-\s*(\d+))?\s*$")


def parse_bands(text: str) -> LengthDistribution:
    """``"0.7:1-50, 0.15:251-300"``: probability, colon, inclusive length range."""
    bands = []
    for part in text.split(","):
        if not part.strip():
            continue
        m = _BAND.match(part)
        if not m:
            raise ScenarioError(f"cannot read length band {part.strip()!r}")
        lo = int(m.group(2))
        hi = int(m.group(3)) if m.group(3) else lo
        bands.append((Fraction(m.group(1)), lo, hi))
    return LengthDistribution(bands)


def _parse_custom(section, n_types: int, lengths: Sequence[LengthDistribution]) -> ScanVector:
    # typeN = lo-hi:prob, ...   lengths not listed scan with probability 0
    rows = []
    for j in range(n_types):
        row = {L: Fraction(0) for L in lengths[j].support}
        for part in section.get(f"type{j + 1}", "").split(","):
            if not part.strip():
                continue
            rng, _, prob = part.partition(":")
            lo, _, hi = rng.partition("-")
            for L in range(int(lo), int(hi or lo) + 1):
                row[L] = as_fraction(prob.strip())
        rows.append(row)
    return ScanVector(rows)


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
        srv, vms, arr = cp["servers"], cp["vm_types"], cp["arrivals"]
        n = srv.getint("count")
        capacity = ResourceVector(_numbers(srv["capacity"]))
        vm_types = tuple(VMTypeSpec(j, ResourceVector(_numbers(vms[key])), key)
                         for j, key in enumerate(vms))
        J = len(vm_types)
        genuine = _numbers(arr["genuine"])
        malicious = _numbers(arr.get("malicious", ",".join(["0"] * J)))
        if arr.getboolean("per_server", True):
            genuine = [g * n for g in genuine]
            malicious = [k * n for k in malicious]
        lsec = cp["lengths"]
        lengths = []
        for j in range(J):
            key = f"type{j + 1}"
            if key not in lsec and "all" not in lsec:
                raise ScenarioError(f"[lengths] has neither {key} nor all")
            lengths.append(parse_bands(lsec.get(key, lsec.get("all"))))
        spec = ArrivalSpec(genuine, malicious, lengths, n)
        scan = cp["scan"] if cp.has_section("scan") else {}
        runsec = cp["run"] if cp.has_section("run") else {}
        profile = runsec.get("profile", "desk")
        if profile not in PROFILES:
            raise ScenarioError(f"unknown profile {profile!r}")
        slots, every = PROFILES[profile]
        strategy = scan.get("strategy", "opt")
        custom = _parse_custom(cp["scan.custom"], J, lengths) if cp.has_section("scan.custom") else None
        mode = runsec.get("mode", CENTRALIZED)
        return Scenario(
            name=runsec.get("name", Path(source).stem),
            capacity=capacity,
            vm_types=vm_types,
            spec=spec,
            mode=mode,
            routing=runsec.get("routing", "jsw") if mode == DECENTRALIZED else None,
            workload_metric=runsec.get("workload_metric", "z"),
            refresh=runsec.get("refresh"),
            strategy=strategy,
            custom_alpha=custom,
            warmup_slots=int(scan.get("warmup_slots", 0)),
            z_mode=scan.get("z_weight", Z_PER_JOB),
            total_slots=int(runsec.get("slots", slots)),
            sample_every=int(runsec.get("sample_every", every)),
            seed=int(runsec.get("seed", 1)),
            profile=profile,
        )
    except ScenarioError:
        raise
    except (configparser.Error, KeyError, ValueError, ZeroDivisionError) as exc:
        raise ScenarioError(f"{source}: {exc}") from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text, str(path))


def apply_profile(scenario: Scenario, profile: str) -> Scenario:
    if profile not in PROFILES:
        raise ScenarioError(f"unknown profile {profile!r}")
    slots, every = PROFILES[profile]
    warm = scenario.warmup_slots
    if scenario.strategy == "adaptive" and warm >= slots:
        raise ScenarioError(f"warm-up of {warm} slots does not fit the {profile} profile")
    return replace(scenario, total_slots=slots, sample_every=every, profile=profile)


# -- strategies and analysis ---------------------------------------------------

def strategy_alpha(scenario: Scenario, strategy: str | None = None) -> ScanVector:
    strategy = strategy or scenario.strategy
    spec = scenario.spec
    if strategy == "none":
        return scan_none(spec)
    if strategy in ("all", "adaptive"):
        return scan_all(spec)
    if strategy == "opt":
        return optimal_alpha(spec)
    if strategy == "custom":
        return scenario.custom_alpha
    raise ScenarioError(f"unknown scan strategy {strategy!r}")


def analyze(scenario: Scenario) -> dict:
    """Analytical report: configurations, expected arriving weight and verdict per strategy."""
    fs = scenario.feasible_set()
    spec = scenario.spec
    n = spec.n_servers
    strategies = {}
    names = ["none", "all", "opt"] + (["custom"] if scenario.custom_alpha is not None else [])
    for s in names:
        alpha = strategy_alpha(scenario, s)
        a = a_vector(alpha, spec)
        v = classify(spec, alpha, fs)
        strategies[s] = {"a_per_server": per_server(a, n), "verdict": v}
    thresholds = tuple(scan_threshold(spec, j) for j in range(spec.n_types))
    return {
        "name": scenario.name,
        "maximal_configs": fs.maximal_configs,
        "n_servers": n,
        "thresholds": thresholds,
        "strategies": strategies,
        "genuine_only": classify(spec.scaled(1, 0), scan_none(spec), fs),
        "malicious_free": all(k == 0 for k in spec.malicious),
    }


def _fmt(x) -> str:
    if isinstance(x, Fraction):
        return f"{float(x):.6g}" if x.denominator != 1 else str(x.numerator)
    if x is None:
        return "never"
    return str(x)


def format_analysis(report: dict) -> str:
    lines = [f"scenario {report['name']}: {report['n_servers']} servers",
             "maximal configurations: " + ", ".join(str(c) for c in report["maximal_configs"])]
    v = report["genuine_only"]
    lines.append(f"genuine traffic alone: {v.label}, margin {_fmt(v.margin)}")
    lines.append("scan thresholds (scan lengths strictly above): "
                 + ", ".join(_fmt(t) for t in report["thresholds"]))
    shown = report["strategies"]
    if report["malicious_free"]:
        shown = {"none": shown["none"]}  # every strategy coincides without malicious traffic
    for s, row in shown.items():
        a = ", ".join(f"{float(x):.6f}" for x in row["a_per_server"])
        v = row["verdict"]
        lines.append(f"scan {s:<6} a/server = ({a})  {v.label}, margin {_fmt(v.margin)}")
    return "\n".join(lines)


# -- running ---------------------------------------------------------------------

@dataclass
class RunResult:
    scenario: Scenario
    samples: list[MetricsSample]
    verdict: RegionVerdict
    summary: dict = field(default_factory=dict)


def _empirical_slope(samples: Sequence[MetricsSample]) -> float | None:
    """Growth of total queued work per slot between the middle and the last sample."""
    if len(samples) < 2:
        return None
    mid = samples[(len(samples) - 1) // 2]
    end = samples[-1]
    if end.slot == mid.slot:
        return None
    return (end.total_queue_work - mid.total_queue_work) / (end.slot - mid.slot)


def _adaptive_alpha(scenario: Scenario, scan_log: ScanLog, elapsed: int):
    """Scan vector and weight rates learnt from the warm-up log."""
    spec = scenario.spec
    est = estimate_rates(scan_log, elapsed, spec.n_servers, spec.n_types)
    max_len = max(d.max_length for d in spec.lengths)
    learnt = threshold_alpha(est.spec, range(1, max_len + 1))
    fallback = scan_all(spec)
    rows, genuine, malicious, lengths = [], [], [], []
    for j in range(spec.n_types):
        if est.observed[j]:
            rows.append(dict(learnt.alpha[j]))
            genuine.append(est.spec.genuine[j])
            malicious.append(est.spec.malicious[j])
            lengths.append(est.spec.lengths[j])
        else:
            log.warning("type %d had no scanned job during warm-up; it keeps scanning everything", j + 1)
            rows.append({L: fallback.alpha[j].get(L, Fraction(0 if L <= 1 else 1)) for L in range(1, max_len + 1)})
            genuine.append(spec.genuine[j])
            malicious.append(spec.malicious[j])
            lengths.append(spec.lengths[j])
    weights_spec = ArrivalSpec(genuine, malicious, lengths, spec.n_servers)
    return ScanVector(rows), weights_spec, est


def run(scenario: Scenario, *, backend: str = "fast",
        progress: Callable[[MetricsSample], None] | None = None) -> RunResult:
    """Simulate ``scenario`` and sample metrics every ``sample_every`` slots.

    backend "fast" uses the compiled engine; "reference" steps the object
    engines slot by slot (same decisions, far slower).
    """
    if backend not in ("fast", "reference"):
        raise ContractError(f"unknown backend {backend!r}")
    fs = scenario.feasible_set()
    spec = scenario.spec
    alpha = strategy_alpha(scenario)
    verdict = classify(spec, optimal_alpha(spec) if scenario.strategy == "adaptive" else alpha, fs)
    started = time.perf_counter()
    if backend == "fast":
        samples, extra = _run_fast(scenario, fs, alpha, progress)
    else:
        if scenario.strategy == "adaptive":
            raise ContractError("adaptive runs use the fast backend")
        samples, extra = _run_reference(scenario, fs, alpha, progress)
    summary = {
        "name": scenario.name,
        "strategy": scenario.strategy,
        "routing": scenario.routing_label,
        "seed": scenario.seed,
        "slots": scenario.total_slots,
        "verdict": verdict.label,
        "margin": verdict.margin,
        "slope": _empirical_slope(samples),
        "final_queue_work": samples[-1].total_queue_work if samples else None,
        "seconds": time.perf_counter() - started,
    }
    summary.update(extra)
    return RunResult(scenario, samples, verdict, summary)


def run_adaptive(scenario: Scenario, **kw) -> RunResult:
    if scenario.strategy != "adaptive":
        raise ScenarioError("run_adaptive needs an adaptive scenario")
    return run(scenario, **kw)


def _run_fast(scenario, fs, alpha, progress):
    spec = scenario.spec
    streams = rng_streams(scenario.seed)
    gen = generator_for(spec, scenario.seed)
    adaptive = scenario.strategy == "adaptive"
    engine = FastEngine(
        spec, alpha, fs, scan_rng=streams["scan"], process_rng=streams["process"],
        routing_rng=streams["routing"],
        routing=scenario.routing if scenario.mode == DECENTRALIZED else None,
        workload_metric=scenario.workload_metric, refresh=scenario.refresh,
        z_mode=scenario.z_mode, log_scans=adaptive,
    )
    collector = MetricsCollector(spec.n_types)
    extra = {}
    t, T, k = 0, scenario.total_slots, scenario.sample_every
    while t < T:
        stop = min(T, (t // k + 1) * k, t + CHUNK_SLOTS)
        if adaptive and t < scenario.warmup_slots:
            stop = min(stop, scenario.warmup_slots)
        q, _ = engine.advance(gen.batch(t, stop))
        collector.observe_block(q)
        t = stop
        if adaptive and t == scenario.warmup_slots:
            learnt, weights_spec, est = _adaptive_alpha(scenario, engine.scan_log(), t)
            engine.set_alpha(learnt)
            engine.set_spec(weights_spec)
            engine.log_scans = False
            extra["learnt_alpha"] = learnt
            extra["estimate"] = est
        if should_sample(t, k) or t == T:
            collector.sync_latency(engine.latency_totals())
            s = collector.snapshot(engine.z(), engine.q, engine.jobs_in_system())
            if progress:
                progress(s)
    extra["drain"] = engine.drain.copy()
    extra["service_events"] = engine.events.copy()
    extra["idle_units"] = int(engine.acc[A_IDLE])
    return collector.samples, extra


def _run_reference(scenario, fs, alpha, progress):
    spec = scenario.spec
    streams = rng_streams(scenario.seed)
    gen = generator_for(spec, scenario.seed)
    collector = MetricsCollector(spec.n_types)
    if scenario.mode == CENTRALIZED:
        state = SchedulerState(spec, alpha, fs, scan_rng=streams["scan"], process_rng=streams["process"],
                               z_mode=scenario.z_mode)
        nodes = [state]
    else:
        nodes = make_nodes(spec, alpha, fs, scan_rng=streams["scan"], process_rng=streams["process"],
                           z_mode=scenario.z_mode)
        policy = RoutingPolicy(scenario.routing, "length" if scenario.workload_metric == "length" else "z")
        policy.reset(len(nodes), spec.n_types)
    T, k = scenario.total_slots, scenario.sample_every
    for t in range(T):
        arrivals = gen.slot_arrivals(t)
        if scenario.mode == CENTRALIZED:
            report = step(state, arrivals)
        else:
            report = dist_step(nodes, policy, arrivals, streams["routing"], scenario.refresh or REFRESH_ON_IDLE)
        for job, _ in report.completions:
            collector.record_completion(job, t)
        for job, _ in report.detections:
            collector.record_completion(job, t, detected=True)
        collector.observe(sum(report.q))
        if should_sample(t + 1, k) or t + 1 == T:
            z = [sum(vals) for vals in zip(*(node.weights() for node in nodes))]
            jobs = sum(q.n_jobs for node in nodes for q in node.queues)
            s = collector.snapshot(z, report.q, jobs)
            if progress:
                progress(s)
    return collector.samples, {}


# -- comparison and sweeps --------------------------------------------------------

def compare_series(a: Sequence[MetricsSample], b: Sequence[MetricsSample]) -> list[dict]:
    """Per common sample slot: ratio and difference of queue work and latency, A over B."""
    by_slot = {s.slot: s for s in b}
    out = []
    for sa in a:
        sb = by_slot.get(sa.slot)
        if sb is None:
            continue
        row = {"slot": sa.slot}
        for name in ("avg_queue_work", "avg_latency", "total_queue_work"):
            va, vb = getattr(sa, name), getattr(sb, name)
            row[f"{name}_ratio"] = (va / vb) if va is not None and vb else None
            row[f"{name}_diff"] = (va - vb) if va is not None and vb is not None else None
        out.append(row)
    return out


def sweep_kappa(scenario: Scenario, scales: Sequence) -> list[dict]:
    """Analytical verdicts as malicious traffic is scaled up or down."""
    fs = scenario.feasible_set()
    rows = []
    for scale in scales:
        scale = as_fraction(scale)
        spec = scenario.spec.scaled(1, scale)
        row = {"kappa_scale": scale}
        for s, fn in (("none", scan_none), ("all", scan_all), ("opt", optimal_alpha)):
            v = classify(spec, fn(spec), fs)
            row[s] = v
        rows.append(row)
    return rows


def growth_ratio(samples: Sequence[MetricsSample]) -> float | None:
    """max / median of total queued work over the second half of the samples."""
    tail = [s.total_queue_work for s in samples[len(samples) // 2:]]
    if not tail:
        return None
    med = float(np.median(tail))
    return float("inf") if med == 0 and max(tail) > 0 else (max(tail) / med if med else 1.0)
