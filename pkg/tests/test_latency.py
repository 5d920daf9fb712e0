import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

import reference
from conftest import make_scenario, make_user, random_assignment, random_scenario
from condoffload.latency import (
    DomainError,
    edge_completion,
    edge_compute_delay,
    evaluate,
    local_completion,
    local_compute_delay,
    uplink_rate,
)
from condoffload.workload import Assignment, ChannelSpec, EdgeSpec, UserSpec, scenario_to_dict


def _user(p=0.1, h=1e-7, workloads=(1e9,), **kw):
    return make_user(0, workloads, p=p, h=h, **kw)


def test_zero_power_gives_zero_rate():
    u = _user(p=0.0)
    ch = ChannelSpec(20e6, 1e-13)
    for y in (1e-6, 0.3, 0.999):
        assert uplink_rate(y, ch, u) == 0.0


def test_unit_snr_per_hz():
    # p*h/N0 = 1e7 makes the per-Hz SNR exactly 1 on a 10 MHz share
    r = uplink_rate(0.5, ChannelSpec(20e6, 1e-15), _user())
    assert r == pytest.approx(10e6, rel=1e-15)


def test_rate_high_precision():
    r = uplink_rate(0.2, ChannelSpec(20e6, 1e-13), _user())
    mpmath.mp.dps = 50
    share = mpmath.mpf("0.2") * mpmath.mpf(20e6)
    exact = share * mpmath.log(1 + mpmath.mpf("0.1") * mpmath.mpf("1e-7") / (share * mpmath.mpf("1e-13")), 2)
    assert r == pytest.approx(float(exact), rel=1e-13)


def test_rate_domain():
    ch = ChannelSpec(20e6, 1e-13)
    with pytest.raises(DomainError):
        uplink_rate(0.0, ch, _user())
    with pytest.raises(DomainError):
        uplink_rate(5e-7, ch, _user())
    with pytest.raises(DomainError):
        uplink_rate(1.5, ch, _user())


def test_compute_delays():
    u = make_user(0, (2e9, 4e9, 6e9), f=2e9)
    assert local_compute_delay(u, (0, 1, 0)) == pytest.approx(4.0)
    assert local_compute_delay(u, (1, 1, 1)) == 0.0
    assert local_compute_delay(make_user(0, (1e9,), f=1e9), (0,)) == 1.0
    assert edge_compute_delay(u, EdgeSpec(2e10, 1e12), (0, 0, 0)) == 0.0
    assert edge_compute_delay(make_user(0, (3e10,)), EdgeSpec(1e10, 1e12), (1,)) == 3.0
    assert edge_compute_delay(make_user(0, (1e10, 2e10)), EdgeSpec(2e10, 1e12), (1, 1)) == pytest.approx(1.5)
    with pytest.raises(DomainError):
        local_compute_delay(u, (0, 1))


def _unit_rate_channel():
    # y = 0.5 of 16 MHz with per-Hz SNR 1: r = 8e6 bps exactly
    return ChannelSpec(16e6, 1e-15), dict(p=0.1, h=8e-8)


def test_edge_completion_shared_vs_distinct_images():
    ch, ph = _unit_rate_channel()
    edge = EdgeSpec(1e10, 1e12)
    shared = _user(workloads=(2.5e9, 2.5e9), images=["a", "a"], src=1e6, **ph)
    distinct = _user(workloads=(2.5e9, 2.5e9), images=["a", "b"], src=1e6, **ph)
    assert uplink_rate(0.5, ch, shared) == 8e6
    assert edge_completion(shared, edge, ch, (1, 1), 0.5) == pytest.approx(1.5)
    assert edge_completion(distinct, edge, ch, (1, 1), 0.5) == pytest.approx(2.5)
    assert edge_completion(distinct, edge, ch, (0, 0), 0.5) == 0.0


def test_shared_image_uploaded_for_offloaded_only():
    ch, ph = _unit_rate_channel()
    u = _user(workloads=(2.5e9, 2.5e9), images=["a", "a"], src=1e6, **ph)
    assert edge_completion(u, EdgeSpec(1e10, 1e12), ch, (1, 0), 0.5) == pytest.approx(1.25)


def test_local_completion():
    ch, ph = _unit_rate_channel()
    u = _user(workloads=(1e9,), out=1e6, **ph)
    assert local_completion(u, ch, (0,), 0.5) == pytest.approx(2.0)
    assert local_completion(u, ch, (1,), 0.5) == 0.0
    # a stronger link drives the result-upload term to zero
    tails = [
        local_completion(_user(workloads=(1e9,), out=1e6, p=0.1 * f, h=8e-8), ChannelSpec(16e6 * f, 1e-15), (0,), 0.5) - 1.0
        for f in (1.0, 1e2, 1e4, 1e6)
    ]
    assert all(b < a for a, b in zip(tails, tails[1:])) and tails[-1] < 1e-3


def test_evaluate_single_user_all_local():
    scn = make_scenario([make_user(0, (1e9, 2e9), f=1e9, out=1e5)])
    b = evaluate(scn, Assignment(((0, 0),), (1 - 1e-6,)))
    u = b.users[0]
    assert u.completion_s == u.local_completion_s == pytest.approx(3.0 + 1.6e6 / u.uplink_rate_bps)
    assert b.mean_completion_s == u.completion_s


def test_evaluate_symmetric_users():
    scn = make_scenario([make_user(0, (1e9, 2e9)), make_user(1, (1e9, 2e9))])
    b = evaluate(scn, Assignment(((0, 1), (0, 1)), (0.5, 0.5)))
    d0, d1 = (vars(u).copy() for u in b.users)
    d0.pop("user_id"), d1.pop("user_id")
    assert d0 == d1


def test_rate_floor_is_flagged():
    scn = make_scenario([make_user(0, p=1e-30, h=1e-12)], n0=1e-3)
    b = evaluate(scn, Assignment(((0,),), (0.5,)))
    assert b.any_clamped and b.users[0].uplink_rate_bps == 1e-3
    assert math.isfinite(b.mean_completion_s)


def test_csv_rows():
    scn = make_scenario([make_user(0), make_user(1)])
    b = evaluate(scn, Assignment(((0,), (1,)), (0.5, 0.5)))
    lines = b.to_csv().strip().splitlines()
    assert len(lines) == 4 and lines[-1].startswith("summary")


@given(st.integers(0, 10_000))
def test_evaluate_matches_reference(seed):
    rng = np.random.default_rng(seed)
    scn = random_scenario(rng)
    a = random_assignment(rng, scn)
    got = evaluate(scn, a)
    d = scenario_to_dict(scn)
    want = reference.mean_completion(d, a.offload, a.bandwidth_fraction)
    assert got.mean_completion_s == pytest.approx(want, rel=1e-9)
    for u, ud, x, y, bu in zip(scn.users, d["users"], a.offload, a.bandwidth_fraction, got.users):
        lu, le, lk = reference.user_terms(ud, d["edge"], d["channel"], x, y)
        assert (bu.local_completion_s, bu.edge_completion_s) == pytest.approx((lu, le), rel=1e-9)
        assert bu.completion_s == max(bu.local_completion_s, bu.edge_completion_s)


@given(st.integers(0, 10_000))
def test_rate_monotone_and_concave(seed):
    rng = np.random.default_rng(seed)
    u = UserSpec(0, 1e9, 1e9, float(rng.uniform(0.01, 1)), float(10 ** rng.uniform(-11, -6)), make_user().subtasks)
    ch = ChannelSpec(float(rng.uniform(1e6, 5e7)), float(10 ** rng.uniform(-18, -12)))
    y = float(rng.uniform(0.01, 0.98))
    d = 1e-3
    lo, mid, hi = (uplink_rate(v, ch, u) for v in (y - d, y, y + d))
    assert hi - mid > -1e-9 * mid
    assert mid - lo > -1e-9 * mid
    assert (hi - 2 * mid + lo) / mid <= 1e-9


@given(st.integers(0, 10_000))
def test_completion_non_increasing_in_y(seed):
    rng = np.random.default_rng(seed)
    scn = random_scenario(rng)
    a = random_assignment(rng, scn)
    k = int(rng.integers(scn.n_users))
    ys = list(a.bandwidth_fraction)
    base = evaluate(scn, a).users[k]
    ys[k] = min(ys[k] * 1.5, 1 - 1e-6) if ys[k] < 0.6 else ys[k]
    more = evaluate(scn, Assignment(a.offload, tuple(ys))).users[k]
    assert more.edge_upload_s <= base.edge_upload_s
    assert more.local_result_upload_s <= base.local_result_upload_s
    assert more.completion_s <= base.completion_s


@given(st.integers(0, 10_000))
def test_offload_exchange(seed):
    rng = np.random.default_rng(seed)
    scn = random_scenario(rng)
    a = random_assignment(rng, scn)
    k = int(rng.integers(scn.n_users))
    i = int(rng.integers(scn.users[k].n_subtasks))
    a0, a1 = a.with_bit(k, i, 0), a.with_bit(k, i, 1)
    b0, b1 = evaluate(scn, a0), evaluate(scn, a1)
    s = scn.users[k].subtasks[i]
    assert b0.users[k].local_compute_s - b1.users[k].local_compute_s == pytest.approx(
        s.workload_flops / scn.users[k].compute_flops_per_s, rel=1e-9
    )
    assert b1.users[k].edge_compute_s - b0.users[k].edge_compute_s == pytest.approx(
        s.workload_flops / scn.edge.compute_flops_per_s, rel=1e-9
    )
    r = b0.users[k].uplink_rate_bps
    assert b0.users[k].local_result_upload_s - b1.users[k].local_result_upload_s == pytest.approx(8 * s.output_bytes / r, rel=1e-9)
    assert b1.users[k].edge_upload_s >= b0.users[k].edge_upload_s
    for m in range(scn.n_users):
        if m != k:
            assert b0.users[m] == b1.users[m]
