import logging

import numpy as np
import pytest

from condoffload.harness import (
    DeviceTier,
    ExperimentPlan,
    IngestError,
    ScenarioTemplate,
    gen_scenario,
    ingest_profile,
    run_experiment,
)
from condoffload.latency import evaluate
from condoffload.workload import (
    Assignment,
    ScenarioError,
    assignment_from_dict,
    dumps_scenario,
    is_feasible,
    minimal_offload,
)

HEADER = "label,workload_flops,output_bytes,source_bytes"


def test_bundled_profile(profile):
    assert len(profile) == 11 and len(set(profile.labels)) == 11
    assert all(r.workload_flops > 0 and r.output_bytes > 0 for r in profile.rows)


def test_minimal_profile():
    t = ingest_profile(text=f"{HEADER}\ncanny,2e9,22000,250000\n")
    assert t.labels == ["canny"] and t.rows[0].workload_flops == 2e9


def test_zero_output_rejected_with_row_index():
    with pytest.raises(IngestError) as ei:
        ingest_profile(text=f"{HEADER}\ncanny,2e9,22000,250000\nhed,8e10,0,250000\n")
    assert ei.value.rows == [3]


def test_malformed_rows_listed():
    with pytest.raises(IngestError) as ei:
        ingest_profile(text=f"{HEADER}\na,x,1,1\nb,1,1\nc,1,1,1\n")
    assert ei.value.rows == [2, 3]
    with pytest.raises(IngestError):
        ingest_profile(text="name,flops\n")
    with pytest.raises(IngestError):
        ingest_profile(text=f"{HEADER}\na,1,1,1\na,2,2,2\n")


def test_latency_backsolve():
    t = ingest_profile(text=f"{HEADER},latency_orin_s\ndevice_flops_orin,1e12,,,\ndepth,,70000,250000,0.4\n")
    assert t.rows[0].workload_flops == pytest.approx(4e11)
    assert t.warnings == ()


def test_device_disagreement_warns(caplog):
    text = (
        f"{HEADER},latency_nano_s,latency_orin_s\n"
        "device_flops_nano,5e10,,,,\n"
        "device_flops_orin,1e12,,,,\n"
        "depth,,70000,250000,1.0,0.4\n"
    )
    with caplog.at_level(logging.WARNING):
        t = ingest_profile(text=text)
    assert len(t.warnings) == 1 and "disagree" in caplog.text


def test_latency_column_needs_device_row():
    with pytest.raises(IngestError):
        ingest_profile(text=f"{HEADER},latency_orin_s\ndepth,,70000,250000,0.4\n")


def test_gen_is_deterministic(profile, tmp_path):
    a = dumps_scenario(gen_scenario(profile, 5, (1, 5), 42))
    assert a == dumps_scenario(gen_scenario(profile, 5, (1, 5), 42))
    assert a != dumps_scenario(gen_scenario(profile, 5, (1, 5), 43))


def test_gen_single_subtask_users(profile):
    scn = gen_scenario(profile, 5, (1, 1), 0)
    assert all(u.n_subtasks == 1 for u in scn.users)


def test_gen_tiers_and_defaults(profile):
    scn = gen_scenario(profile, 6, seed=1)
    f = [u.compute_flops_per_s for u in scn.users]
    assert f[:3] == f[3:] and f[0] * 4 == f[1] and f[0] * 20 == f[2]
    assert scn.channel.uplink_bandwidth_hz == 20e6 and scn.latency_target_s == 1.0
    assert all(1 <= u.n_subtasks <= 5 for u in scn.users)


def test_gen_mostly_feasible(profile):
    ok = 0
    for s in range(100):
        try:
            scn = gen_scenario(profile, 5, (1, 5), s)
            ok += is_feasible(scn, Assignment.uniform(scn, minimal_offload(scn)))
        except ScenarioError:
            pass
    assert ok >= 99


def test_gen_errors(profile):
    from condoffload.harness import ProfileTable

    with pytest.raises(ScenarioError):
        gen_scenario(ProfileTable(()), 2)
    with pytest.raises(ScenarioError):
        gen_scenario(profile, 2, (3, 2))


def _small_plan(**kw):
    base = dict(sweep_values=(5e6, 20e6), replications=3, K=3, nk_range=(1, 2), seed=7)
    base.update(kw)
    return ExperimentPlan(**base)


def test_experiment_is_deterministic():
    plan = _small_plan()
    assert run_experiment(plan).to_csv() == run_experiment(plan).to_csv()


def test_experiment_parallel_matches_serial():
    plan = _small_plan()
    from dataclasses import replace

    assert run_experiment(replace(plan, workers=2)).to_csv() == run_experiment(plan).to_csv()


def test_rows_revalidate(profile):
    plan = _small_plan()
    res = run_experiment(plan)
    for c in res.cells:
        scn = gen_scenario(profile, plan.K, plan.nk_range, c.seed, ScenarioTemplate(uplink_bandwidth_hz=c.sweep_value))
        a = assignment_from_dict(c.assignment)
        assert evaluate(scn, a).mean_completion_s == pytest.approx(c.objective_s, rel=1e-9)
    gaps = [r["oracle_gap"] for r in res.rows if r["policy"] == "heuristic"]
    assert all(g is not None and g >= -1e-9 for g in gaps)


def test_csv_format():
    text = run_experiment(_small_plan(replications=1)).to_csv()
    assert "\r" not in text
    header, *rows = text.rstrip("\n").split("\n")
    assert header.startswith("policy,sweep_var,sweep_value")
    assert len(rows) == 2 * 4


def test_theta_sweep_zero_matches_baseline():
    plan = ExperimentPlan(sweep_var="theta", sweep_values=(0.0, 0.2, 0.4), replications=4, seed=1)
    rows = run_experiment(plan).rows
    assert rows[0]["mean_latency_s"] == rows[0]["baseline_latency_s"] == 1.89
    lat = [r["mean_latency_s"] for r in rows]
    assert lat == sorted(lat, reverse=True)


def test_failed_cells_are_marked():
    # no local budget and no edge room: every scenario is rejected
    tmpl = ScenarioTemplate(tiers=(DeviceTier("tiny", 1e9, 1.0),), edge_budget_flops=1.0, main_task_reserve_flops=1.0)
    res = run_experiment(_small_plan(template=tmpl, replications=2))
    assert all(c.status == "failed" and c.error for c in res.cells)
    assert all(r["n"] == 0 and r["n_failed"] == 2 for r in res.rows)


def test_plan_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentPlan(replications=0)
    with pytest.raises(ValueError):
        ExperimentPlan(sweep_var="K")
    with pytest.raises(ValueError):
        ExperimentPlan.from_dict({"seeds": 3})
    p = tmp_path / "plan.json"
    p.write_text('{"sweep_values": [1e7], "replications": 2, "template": {"gain_range": [1e-9, 1e-8]}}')
    plan = ExperimentPlan.load(p)
    assert plan.sweep_values == (1e7,) and plan.template.gain_range == (1e-9, 1e-8)


def test_rep_seeds_differ():
    plan = ExperimentPlan()
    assert len({plan.rep_seed(r) for r in range(50)}) == 50
    assert np.all(plan.rep_seed(3) == ExperimentPlan().rep_seed(3))
