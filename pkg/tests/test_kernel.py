import numpy as np
import pytest

from robustsched.domain import ContractError, ec2_spec
from robustsched.kernel import FastEngine
from robustsched.scanning import optimal_alpha, scan_all, scan_none
from robustsched.sched_core import Z_EXPECTED, SchedulerState, step
from robustsched.sched_dist import REFRESH_EVERY_SLOT, RoutingPolicy, dist_step, make_nodes
from robustsched.workload import generator_for, rng_streams


def _reference_trace(spec, alpha, fs, seed, slots, routing=None, z_mode="per_job", refresh="on_idle", metric="z"):
    s = rng_streams(seed)
    gen = generator_for(spec, seed)
    qs, cfgs, lat = [], [], [0, 0, 0, 0]
    if routing is None:
        st = SchedulerState(spec, alpha, fs, scan_rng=s["scan"], process_rng=s["process"], z_mode=z_mode)
    else:
        nodes = make_nodes(spec, alpha, fs, scan_rng=s["scan"], process_rng=s["process"], z_mode=z_mode)
        pol = RoutingPolicy(routing, metric)
    for t in range(slots):
        arrivals = gen.slot_arrivals(t)
        if routing is None:
            r = step(st, arrivals)
            cfgs.append(fs.maximal_configs.index(r.config))
        else:
            r = dist_step(nodes, pol, arrivals, s["routing"], refresh)
            cfgs.append(-1 if r.configs[0] is None else r.configs[0])
        qs.append(r.q)
        lat[0] += len(r.completions)
        lat[1] += sum(x for _, x in r.completions)
        lat[2] += len(r.detections)
        lat[3] += sum(x for _, x in r.detections)
    return np.array(qs), np.array(cfgs), lat


def _fast_trace(spec, alpha, fs, seed, slots, routing=None, z_mode="per_job", refresh=None, metric="z", cuts=(0.3,)):
    s = rng_streams(seed)
    gen = generator_for(spec, seed)
    eng = FastEngine(spec, alpha, fs, scan_rng=s["scan"], process_rng=s["process"], routing_rng=s["routing"],
                     routing=routing, z_mode=z_mode, refresh=refresh, workload_metric=metric)
    bounds = [0] + [int(c * slots) for c in cuts] + [slots]
    qs, cfgs = [], []
    for a, b in zip(bounds, bounds[1:]):
        q, c = eng.advance(gen.batch(a, b))
        qs.append(q)
        cfgs.append(c)
    done, dsum, _, det, detsum, _ = eng.latency_totals()
    return np.vstack(qs), np.concatenate(cfgs), [done, dsum, det, detsum], eng


@pytest.mark.parametrize("alpha_fn", [optimal_alpha, scan_all, scan_none])
def test_centralized_matches_reference(ec2_fs, alpha_fn):
    spec = ec2_spec(10)
    alpha = alpha_fn(spec)
    ref = _reference_trace(spec, alpha, ec2_fs, 7, 3000)
    fast = _fast_trace(spec, alpha, ec2_fs, 7, 3000)
    assert np.array_equal(ref[0], fast[0])
    assert np.array_equal(ref[1], fast[1])
    assert ref[2] == fast[2]


@pytest.mark.parametrize("routing", ["jsq", "jsw", "ur", "rr", "p2q", "p2w"])
def test_decentralized_matches_reference(ec2_fs, routing):
    spec = ec2_spec(5)
    alpha = optimal_alpha(spec)
    ref = _reference_trace(spec, alpha, ec2_fs, 3, 2000, routing=routing)
    fast = _fast_trace(spec, alpha, ec2_fs, 3, 2000, routing=routing)
    assert np.array_equal(ref[0], fast[0])
    assert np.array_equal(ref[1], fast[1])
    assert ref[2] == fast[2]


@pytest.mark.parametrize("routing", ["jsw", "p2w"])
def test_length_metric_matches_reference(ec2_fs, routing):
    spec = ec2_spec(4)
    alpha = optimal_alpha(spec)
    ref = _reference_trace(spec, alpha, ec2_fs, 5, 1500, routing=routing, metric="length")
    fast = _fast_trace(spec, alpha, ec2_fs, 5, 1500, routing=routing, metric="length")
    assert np.array_equal(ref[0], fast[0])


def test_every_slot_refresh_matches_reference(ec2_fs):
    spec = ec2_spec(3)
    alpha = optimal_alpha(spec)
    ref = _reference_trace(spec, alpha, ec2_fs, 9, 1500, routing="jsq", refresh=REFRESH_EVERY_SLOT)
    fast = _fast_trace(spec, alpha, ec2_fs, 9, 1500, routing="jsq", refresh=REFRESH_EVERY_SLOT)
    assert np.array_equal(ref[0], fast[0])


def test_expected_weight_mode_matches_reference(ec2_fs):
    spec = ec2_spec(10)
    alpha = optimal_alpha(spec)
    ref = _reference_trace(spec, alpha, ec2_fs, 2, 2000, z_mode=Z_EXPECTED)
    fast = _fast_trace(spec, alpha, ec2_fs, 2, 2000, z_mode=Z_EXPECTED)
    assert not fast[3].exact
    assert np.array_equal(ref[0], fast[0])


def test_chunking_does_not_change_the_run(ec2_fs):
    spec = ec2_spec(20)
    alpha = optimal_alpha(spec)
    a = _fast_trace(spec, alpha, ec2_fs, 4, 10_000, cuts=())
    b = _fast_trace(spec, alpha, ec2_fs, 4, 10_000, cuts=(0.01, 0.02, 0.5, 0.77))
    assert np.array_equal(a[0], b[0]) and a[2] == b[2]


def test_job_table_grows(ec2_fs):
    spec = ec2_spec(100)
    q, _, _, eng = _fast_trace(spec, scan_none(spec), ec2_fs, 1, 20_000)
    assert eng.jobs.shape[0] > 1024
    assert eng.jobs_in_system() > 1024
    assert eng.q == tuple(int(v) for v in q[-1])
    assert eng.q == tuple(x + y for x, y in zip(eng.x, eng.y))


def test_scan_log_accounts_for_every_resolved_job(ec2_fs):
    spec = ec2_spec(10)
    s = rng_streams(6)
    gen = generator_for(spec, 6)
    eng = FastEngine(spec, scan_all(spec), ec2_fs, scan_rng=s["scan"], process_rng=s["process"], log_scans=True)
    batch = gen.batch(0, 5000)
    eng.advance(batch)
    log = eng.scan_log()
    pending = sum(eng.pending_counts())
    assert len(log) + pending == len(batch)
    malicious_logged = sum(c[1] for c in log.counts.values())
    assert malicious_logged == eng.latency_totals()[3]
    assert all(c[2] == 0 for (j, L), c in log.counts.items() if L > 1)


def test_batch_must_continue_the_run(ec2_fs):
    spec = ec2_spec(2)
    s = rng_streams(1)
    eng = FastEngine(spec, optimal_alpha(spec), ec2_fs, scan_rng=s["scan"], process_rng=s["process"])
    gen = generator_for(spec, 1)
    eng.advance(gen.batch(0, 10))
    with pytest.raises(ContractError):
        eng.advance(gen.batch(20, 30))
    with pytest.raises(ContractError):
        FastEngine(spec, optimal_alpha(spec), ec2_fs, scan_rng=s["scan"], process_rng=s["process"], refresh="x")
