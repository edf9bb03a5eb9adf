"""End-to-end acceptance checks, one printed PASS/FAIL line per criterion.

Criteria 5, 6, 7, 9 and 10 simulate at desk scale and take several minutes
in total (criterion 7 alone runs 18 decentralized simulations).
"""

import hashlib
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

import robustsched.engine as engine_mod
from robustsched.capacity import enumerate_maximal_configs
from robustsched.domain import EC2_CAPACITY, EC2_LENGTHS, EC2_VM_TYPES, ec2_spec
from robustsched.engine import growth_ratio, load_scenario, run, run_adaptive
from robustsched.metrics import export_csv
from robustsched.scanning import a_vector, classify, optimal_alpha, scan_all, scan_none
from robustsched.workload import generator_for, rng_streams

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
SEEDS = (1, 2, 3)
ROUTERS = ("jsw", "jsq", "p2q", "p2w", "ur", "rr")


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}")


def scenario(file: str, seed: int, **kw):
    return replace(load_scenario(SCENARIOS / file), seed=seed, **kw)


# -- exact criteria ------------------------------------------------------------------

def test_criterion_1_configurations(capsys):
    t0 = time.perf_counter()
    fs = enumerate_maximal_configs(EC2_CAPACITY, EC2_VM_TYPES)
    took = time.perf_counter() - t0
    ok = set(fs.maximal_configs) == {(2, 0, 0), (1, 0, 1), (0, 1, 1)} and took < 1.0
    report(capsys, 1, ok, f"maximal configs {sorted(fs.maximal_configs)} in {took * 1000:.1f} ms")
    assert ok


def test_criterion_2_length_distribution(capsys):
    exact = EC2_LENGTHS.mean()
    b = generator_for(ec2_spec(100), 2).batch(0, 500_000)
    lengths = b.length[:1_000_000]
    emp = float(lengths.mean())
    ok = exact == Fraction(261, 2) and len(lengths) == 1_000_000 and abs(emp - 130.5) <= 0.5
    report(capsys, 2, ok, f"exact mean {exact}, empirical mean {emp:.4f} over {len(lengths)} samples")
    assert ok


def test_criterion_3_optimal_alpha(capsys):
    spec = ec2_spec(100)
    alpha = optimal_alpha(spec)
    support = EC2_LENGTHS.support
    type1 = all(alpha[0, L] == (1 if L > 2 else 0) for L in support)
    type2 = all(alpha[1, L] == (1 if L > 34 else 0) for L in support)
    # the type-3 cut at 50 and the threshold 67 agree on every supported length
    type3 = all(alpha[2, L] == (1 if L > 50 else 0) for L in support)
    ok = type1 and type2 and type3 and len(support) == 150
    report(capsys, 3, ok, f"type1 cut at 2: {type1}, type2 cut at 34: {type2}, "
                          f"type3 on {len(support)} lengths: {type3}")
    assert ok


def test_criterion_4_capacity_verdicts(capsys):
    fs = enumerate_maximal_configs(EC2_CAPACITY, EC2_VM_TYPES)
    genuine = ec2_spec(100, malicious=False)
    mixed = ec2_spec(100)
    g = classify(genuine, scan_none(genuine), fs)
    none = classify(mixed, scan_none(mixed), fs)
    opt = classify(mixed, optimal_alpha(mixed), fs)
    ok = g.inside and g.margin == Fraction(1, 99) and not none.inside and opt.inside
    report(capsys, 4, ok, f"genuine margin {g.margin}, scan none margin {none.margin}, "
                          f"optimal margin {opt.margin}")
    assert ok


# -- simulation criteria -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_drain(capsys):
    res = run(scenario("ec2_paper.scn", 1))
    drain, events = res.summary["drain"], res.summary["service_events"]
    ratios = drain / events
    ok = bool(events.min() >= 100_000 and np.all(np.abs(ratios - 1) <= 0.05))
    report(capsys, 5, ok, "per type: " + ", ".join(
        f"type{j + 1} {ratios[j]:.4f} over {events[j]} events" for j in range(len(events))))
    assert ok


@pytest.fixture(scope="module")
def desk_runs():
    out = {}
    for seed in SEEDS:
        for key, name in (("opt", "ec2_paper.scn"), ("none", "scan_none.scn"),
                          ("all", "scan_all.scn"), ("lambdaflow", "lambdaflow.scn")):
            out[key, seed] = run(scenario(name, seed, profile="desk", total_slots=500_000,
                                          sample_every=25_000)).samples
    return out


@pytest.mark.slow
def test_criterion_6_stability_dichotomy(capsys, desk_runs):
    lines, ok = [], True
    for seed in SEEDS:
        opt, none, all_ = desk_runs["opt", seed], desk_runs["none", seed], desk_runs["all", seed]
        g_opt, g_lf = growth_ratio(opt), growth_ratio(desk_runs["lambdaflow", seed])
        a = g_opt <= 3 and g_lf <= 3
        mid = none[len(none) // 2 - 1]
        end_ratio = none[-1].total_queue_work / max(opt[-1].total_queue_work, 1)
        slope = (none[-1].total_queue_work - mid.total_queue_work) / (none[-1].slot - mid.slot)
        b = end_ratio >= 10 and slope > 0
        lat = [sa.avg_latency / so.avg_latency for sa, so in zip(all_[-5:], opt[-5:])]
        c = all(y >= x for x, y in zip(lat, lat[1:]))
        ok = ok and a and b and c
        lines.append(f"seed {seed}: (a) {'ok' if a else 'fail'} opt {g_opt:.3f} lambdaflow {g_lf:.3f}; "
                     f"(b) {'ok' if b else 'fail'} end ratio {end_ratio:.1f} slope {slope:+.2f}; "
                     f"(c) {'ok' if c else 'fail'} all/opt latency " + " ".join(f"{r:.4f}" for r in lat))
    report(capsys, 6, ok, "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_criterion_7_decentralized_ordering(capsys):
    lines, ok = [], True
    for seed in SEEDS:
        series = {r: run(scenario("jsw.scn", seed, routing=r, name=r)).samples for r in ROUTERS}
        avg = {r: s[-1].avg_queue_work for r, s in series.items()}
        seed_ok = True
        parts = [f"seed {seed}: avg queue " + " ".join(f"{r} {avg[r]:.0f}" for r in ROUTERS)]
        for r in ("ur", "rr"):
            growth = growth_ratio(series[r])
            ratio = avg[r] / avg["jsw"]
            end_ratio = series[r][-1].total_queue_work / series["jsw"][-1].total_queue_work
            good = avg["jsw"] <= avg[r] and (growth > 3 or ratio >= 5)
            seed_ok = seed_ok and good
            parts.append(f"{r}: {'ok' if good else 'fail'} avg ratio {ratio:.2f} growth {growth:.3f} "
                         f"(end total ratio {end_ratio:.2f})")
        ok = ok and seed_ok
        lines.append(", ".join(parts))
    report(capsys, 7, ok, "; ".join(lines))
    assert ok


def _csv_digest(sc, tmp_path, tag):
    path = tmp_path / f"{tag}.csv"
    export_csv(run(sc).samples, path)
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_criterion_8_determinism(capsys, tmp_path, monkeypatch):
    cen = scenario("ec2_paper.scn", 42, total_slots=60_000, sample_every=5_000)
    dec = scenario("jsw.scn", 42, total_slots=6_000, sample_every=1_000)
    same = (_csv_digest(cen, tmp_path, "c1") == _csv_digest(cen, tmp_path, "c2")
            and _csv_digest(dec, tmp_path, "d1") == _csv_digest(dec, tmp_path, "d2"))

    seen = []
    original = engine_mod.generator_for

    def recording(spec, seed):
        gen = original(spec, seed)
        inner = gen.batch
        digest = hashlib.sha256()

        def batch(start, stop):
            b = inner(start, stop)
            for col in (b.ptr, b.job_id, b.type_index, b.length, b.malicious):
                digest.update(col.tobytes())
            return b
        gen.batch = batch
        seen.append(digest)
        return gen

    monkeypatch.setattr(engine_mod, "generator_for", recording)
    for r in ("jsw", "ur", "p2q"):
        run(replace(dec, routing=r))
    isolated = len({d.hexdigest() for d in seen}) == 1
    ok = same and isolated
    report(capsys, 8, ok, f"byte-identical CSVs: {same}; arrivals unchanged across routing policies: {isolated}")
    assert ok


@pytest.mark.slow
def test_criterion_9_monte_carlo_weights(capsys):
    spec = ec2_spec(100)
    slots = 1_000_000
    batch = generator_for(spec, 9).batch(0, slots)
    types, lengths = batch.type_index, batch.length.astype(np.float64)
    lines, ok = [], True
    for label, alpha in (("none", scan_none(spec)), ("all", scan_all(spec)), ("opt", optimal_alpha(spec))):
        scan_rng = rng_streams(9)["scan"]
        table = np.array(alpha.dense(EC2_LENGTHS.max_length))
        scanned = scan_rng.random(len(types)) < table[types, batch.length]
        r = np.array([float(spec.genuine_fraction(j)) for j in range(spec.n_types)])
        z = np.where(scanned, r[types] * lengths + 1, lengths)
        emp = np.bincount(types, weights=z, minlength=spec.n_types) / slots
        exact = np.array([float(x) for x in a_vector(alpha, spec)])
        err = np.abs(emp / exact - 1)
        ok = ok and bool(np.all(err < 0.01))
        lines.append(f"{label}: rel err " + " ".join(f"{e:.4%}" for e in err))
    report(capsys, 9, ok, "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_criterion_10_adaptive(capsys):
    sc = scenario("adaptive.scn", 1)
    sc = replace(sc, total_slots=sc.warmup_slots + 1, sample_every=sc.warmup_slots + 1)
    res = run_adaptive(sc)
    est = res.summary["estimate"].spec
    true = sc.spec
    rel = []
    for j in range(true.n_types):
        rel.append(abs(est.genuine[j] / true.genuine[j] - 1))
        rel.append(abs(est.malicious[j] / true.malicious[j] - 1))
    rates_ok = max(rel) <= Fraction(5, 100)
    opt, learnt = optimal_alpha(true), res.summary["learnt_alpha"]
    diff = [(j + 1, L) for j in range(true.n_types) for L in true.lengths[j].support if learnt[j, L] != opt[j, L]]
    ok = rates_ok and not diff
    report(capsys, 10, ok, f"warm-up {sc.warmup_slots} slots, max rate error {float(max(rel)):.2%}, "
                           f"alpha differs from optimal at {diff or 'no supported length'}")
    assert ok
