"""Profiling tables, seeded scenario generation and experiment sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .latency import evaluate
from .manager import ORACLE_MAX_SUBTASKS, ORACLE_MAX_USERS, SolveReport, solve_baseline, solve_heuristic, solve_oracle
from .scales import InferenceCostModel, estimate_scales, preprocess_feature
from .workload import ChannelSpec, EdgeSpec, Scenario, ScenarioError, SubtaskSpec, UserSpec

log = logging.getLogger(__name__)

DISAGREEMENT_RATIO = 3.0


class IngestError(ValueError):
    def __init__(self, message: str, rows: Sequence[int] = ()):
        super().__init__(message)
        self.rows = list(rows)


@dataclass(frozen=True)
class ProfileRow:
    label: str
    workload_flops: float
    output_bytes: float
    typical_source_bytes: float
    device_latency_s: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class ProfileTable:
    rows: tuple[ProfileRow, ...]
    device_flops: tuple[tuple[str, float], ...] = ()
    warnings: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.rows]


def _num(text: str) -> float | None:
    text = text.strip()
    if not text:
        return None
    v = float(text)
    return v if math.isfinite(v) else None


def ingest_profile(path: str | Path | None = None, text: str | None = None) -> ProfileTable:
    """Parse a preprocessor profile CSV.

    Columns: ``label, workload_flops, output_bytes, source_bytes`` plus optional
    ``latency_<device>_s`` columns. A metadata row labelled
    ``device_flops_<device>`` carries that device's FLOPS in the
    ``workload_flops`` column. When latencies are present the workload is
    back-solved as latency * device FLOPS (median across devices).
    """
    if text is None:
        if path is None:
            text = resources.files("condoffload").joinpath("data/preprocessors.csv").read_text()
        else:
            text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError("empty profile file") from None
    required = ["label", "workload_flops", "output_bytes", "source_bytes"]
    if header[:4] != required:
        raise IngestError(f"header must start with {required}, got {header[:4]}", [1])
    lat_cols = {}
    for j, h in enumerate(header[4:], start=4):
        if h.startswith("latency_") and h.endswith("_s") and len(h) > len("latency__s"):
            lat_cols[j] = h[len("latency_"):-2]
        else:
            raise IngestError(f"unexpected column {h!r}", [1])

    raw_rows, devices, bad = [], {}, []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            bad.append(lineno)
            continue
        label = rec[0].strip()
        try:
            vals = [_num(c) for c in rec[1:]]
        except ValueError:
            bad.append(lineno)
            continue
        if label.startswith("device_flops_"):
            if vals[0] is None or vals[0] <= 0:
                bad.append(lineno)
            else:
                devices[label[len("device_flops_"):]] = vals[0]
            continue
        raw_rows.append((lineno, label, vals))
    if bad:
        raise IngestError(f"malformed or non-positive rows: {bad}", bad)
    missing_dev = sorted(set(lat_cols.values()) - set(devices))
    if missing_dev:
        raise IngestError(f"latency columns without device_flops_ rows: {missing_dev}")

    rows, warnings, seen = [], [], set()
    for lineno, label, vals in raw_rows:
        workload, out_b, src_b = vals[:3]
        lats = tuple((lat_cols[j], vals[j - 1]) for j in lat_cols if vals[j - 1] is not None)
        if any(v <= 0 for _, v in lats):
            bad.append(lineno)
            continue
        if lats:
            est = [lat * devices[d] for d, lat in lats]
            workload = float(np.median(est))
            if max(est) > DISAGREEMENT_RATIO * min(est):
                msg = f"row {lineno} ({label}): device estimates disagree by {max(est) / min(est):.2f}x"
                warnings.append(msg)
                log.warning(msg)
        if not label or label in seen or any(v is None or v <= 0 for v in (workload, out_b, src_b)):
            bad.append(lineno)
            continue
        seen.add(label)
        rows.append(ProfileRow(label, workload, out_b, src_b, lats))
    if bad:
        raise IngestError(f"malformed or non-positive rows: {sorted(bad)}", sorted(bad))
    return ProfileTable(tuple(rows), tuple(sorted(devices.items())), tuple(warnings))


# --- scenario generation ------------------------------------------------------


@dataclass(frozen=True)
class DeviceTier:
    name: str
    compute_flops_per_s: float
    compute_budget_flops: float
    tx_power_w: float = 0.2


# FLOPS ratio 1 : 4 : 20; budgets are per-request FLOPs
DEFAULT_TIERS = (
    DeviceTier("nano", 5e10, 2e11),
    DeviceTier("tx2", 2e11, 8e11),
    DeviceTier("orin", 1e12, 4e12),
)


@dataclass(frozen=True)
class ScenarioTemplate:
    tiers: tuple[DeviceTier, ...] = DEFAULT_TIERS
    gain_range: tuple[float, float] = (1e-10, 1e-8)
    noise_psd_w_per_hz: float = 1e-17
    uplink_bandwidth_hz: float = 20e6
    latency_target_s: float = 1.0
    edge_flops_per_s: float = 1e13
    edge_budget_flops: float = 8e12
    main_task_reserve_flops: float = 2e12
    share_prob: float = 0.5
    source_jitter: tuple[float, float] = (0.6, 1.4)


def gen_scenario(
    profile: ProfileTable,
    K: int,
    nk_range: tuple[int, int] = (1, 5),
    seed: int = 0,
    template: ScenarioTemplate = ScenarioTemplate(),
) -> Scenario:
    if len(profile) == 0:
        raise ScenarioError("empty profile")
    lo_n, hi_n = nk_range
    if not (1 <= lo_n <= hi_n) or K < 1:
        raise ScenarioError(f"bad K={K} or nk_range={nk_range}")
    rng = np.random.default_rng(seed)
    glo, ghi = template.gain_range
    users = []
    for k in range(K):
        tier = template.tiers[k % len(template.tiers)]
        n = int(rng.integers(lo_n, hi_n + 1))
        kinds = rng.integers(len(profile), size=n)
        gain = float(math.exp(rng.uniform(math.log(glo), math.log(ghi))))
        subs, prev = [], None
        for i, kind in enumerate(kinds):
            row = profile.rows[int(kind)]
            jitter = float(rng.uniform(*template.source_jitter))
            share = float(rng.random()) < template.share_prob
            if prev is not None and share and prev[2] == row.typical_source_bytes:
                img, img_bytes = prev[0], prev[1]
            else:
                img, img_bytes = f"u{k}i{i}", round(row.typical_source_bytes * jitter)
            prev = (img, img_bytes, row.typical_source_bytes)
            subs.append(SubtaskSpec(i, row.workload_flops, img, float(img_bytes), row.output_bytes, row.label))
        users.append(UserSpec(k, tier.compute_flops_per_s, tier.compute_budget_flops, tier.tx_power_w, gain, tuple(subs)))
    return Scenario(
        tuple(users),
        EdgeSpec(template.edge_flops_per_s, template.edge_budget_flops, template.main_task_reserve_flops),
        ChannelSpec(template.uplink_bandwidth_hz, template.noise_psd_w_per_hz),
        template.latency_target_s,
    )


# --- synthetic condition features ----------------------------------------------


def synthetic_raw_condition(rng: np.random.Generator, P: int = 16, hw: tuple[int, int] = (32, 32)) -> np.ndarray:
    """Encoder-like output: random channel mixes of a few Gaussian blobs plus noise."""
    h, w = hw
    yy, xx = np.mgrid[0:h, 0:w]
    n_blobs = int(rng.integers(1, 6))
    fields_ = []
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sig = rng.uniform(1.5, max(h, w) / 3)
        fields_.append(np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig * sig)))
    basis = np.stack(fields_)
    mix = rng.normal(size=(P, n_blobs))
    noise = rng.uniform(0.01, 0.5)
    return np.einsum("pb,bhw->phw", mix, basis) + noise * rng.normal(size=(P, h, w))


def synthetic_condition_set(
    rng: np.random.Generator,
    J: int = 3,
    P: int = 16,
    raw_hw: tuple[int, int] = (32, 32),
    target_hw: tuple[int, int] = (8, 8),
    lam: float = 0.2,
    delta: float = 0.6,
    max_tries: int = 100,
):
    """Condition set whose scores are all non-negative, so nothing is pruned at theta = 0."""
    for _ in range(max_tries):
        feats = [preprocess_feature(synthetic_raw_condition(rng, P, raw_hw), target_hw, j) for j in range(J)]
        rep = estimate_scales(feats, lam, delta, 0.0)
        if all(c.score >= 0 for c in rep.conditions):
            return feats
    raise RuntimeError("could not draw a condition set without negative scores")


# --- experiments ----------------------------------------------------------------

SWEEP_VARS = ("uplink_bandwidth_hz", "theta")
RESULT_COLUMNS = (
    "policy",
    "sweep_var",
    "sweep_value",
    "n",
    "n_failed",
    "mean_latency_s",
    "std_latency_s",
    "mean_compute_s",
    "mean_transmission_s",
    "mean_kept",
    "baseline_latency_s",
    "oracle_gap",
)


@dataclass(frozen=True)
class ExperimentPlan:
    sweep_var: str = "uplink_bandwidth_hz"
    sweep_values: tuple[float, ...] = (5e6, 10e6, 15e6, 20e6, 25e6)
    replications: int = 20
    seed: int = 0
    K: int = 5
    nk_range: tuple[int, int] = (1, 5)
    policies: tuple[str, ...] = ("heuristic", "local", "edge", "random")
    max_iter: int = 100
    oracle: bool = True
    profile: str | None = None
    template: ScenarioTemplate = ScenarioTemplate()
    # scale-estimator sweep
    lam: float = 0.2
    delta: float = 0.6
    conditions: int = 3
    channels: int = 16
    raw_hw: tuple[int, int] = (32, 32)
    target_hw: tuple[int, int] = (8, 8)
    full_latency_s: float = 1.89
    per_branch_s: float = 0.45
    workers: int = 1

    def __post_init__(self) -> None:
        if self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"sweep_var must be one of {SWEEP_VARS}")
        if self.replications < 1 or not self.sweep_values:
            raise ValueError("need at least one replication and one sweep value")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown plan keys {sorted(unknown)}")
        d = dict(d)
        if "template" in d:
            t = dict(d["template"])
            if "tiers" in t:
                t["tiers"] = tuple(DeviceTier(**x) for x in t["tiers"])
            for key in ("gain_range", "source_jitter"):
                if key in t:
                    t[key] = tuple(t[key])
            d["template"] = ScenarioTemplate(**t)
        for key in ("sweep_values", "nk_range", "policies", "raw_hw", "target_hw"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def rep_seed(self, rep: int) -> int:
        return int(np.random.SeedSequence([self.seed, rep]).generate_state(1)[0])


@dataclass
class Cell:
    sweep_value: float
    replication: int
    seed: int
    policy: str
    status: str = "ok"
    objective_s: float = math.nan
    compute_s: float = math.nan
    transmission_s: float = math.nan
    oracle_objective_s: float = math.nan
    kept: float = math.nan
    baseline_latency_s: float = math.nan
    assignment: dict | None = None
    error: str = ""


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    rows: list[dict]
    cells: list[Cell] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(RESULT_COLUMNS), lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in RESULT_COLUMNS})
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _scenario_for(plan: ExperimentPlan, profile: ProfileTable, value: float, seed: int) -> Scenario:
    tmpl = plan.template
    if plan.sweep_var == "uplink_bandwidth_hz":
        tmpl = replace(tmpl, uplink_bandwidth_hz=float(value))
    return gen_scenario(profile, plan.K, plan.nk_range, seed, tmpl)


def _solve(policy: str, scn: Scenario, plan: ExperimentPlan, seed: int) -> SolveReport:
    if policy == "heuristic":
        return solve_heuristic(scn, plan.max_iter, seed)
    return solve_baseline(scn, policy, seed)


def _offload_cells(args) -> list[Cell]:
    plan, profile, value, rep = args
    seed = plan.rep_seed(rep)
    try:
        scn = _scenario_for(plan, profile, value, seed)
    except Exception as exc:  # noqa: BLE001 - a bad cell must not abort the sweep
        return [Cell(value, rep, seed, p, status="failed", error=repr(exc)) for p in plan.policies]
    oracle = math.nan
    if plan.oracle and scn.total_subtasks <= ORACLE_MAX_SUBTASKS and scn.n_users <= ORACLE_MAX_USERS:
        try:
            oracle = solve_oracle(scn).objective
        except Exception as exc:  # noqa: BLE001
            log.warning("oracle failed on cell (%s, %s): %r", value, rep, exc)
    out = []
    for policy in plan.policies:
        try:
            rep_ = _solve(policy, scn, plan, seed)
        except Exception as exc:  # noqa: BLE001
            out.append(Cell(value, rep, seed, policy, status="failed", error=repr(exc)))
            continue
        bd = rep_.breakdown
        K = len(bd.users)
        out.append(
            Cell(
                value,
                rep,
                seed,
                policy,
                objective_s=bd.mean_completion_s,
                compute_s=math.fsum(u.local_compute_s + u.edge_compute_s for u in bd.users) / K,
                transmission_s=math.fsum(u.edge_upload_s + u.local_result_upload_s for u in bd.users) / K,
                oracle_objective_s=oracle,
                assignment=rep_.assignment.to_dict(),
            )
        )
    return out


def _theta_cells(args) -> list[Cell]:
    plan, rep, thetas = args
    seed = plan.rep_seed(rep)
    rng = np.random.default_rng(seed)
    cost = InferenceCostModel.calibrated(plan.full_latency_s, plan.conditions, plan.per_branch_s)
    try:
        feats = synthetic_condition_set(
            rng, plan.conditions, plan.channels, plan.raw_hw, plan.target_hw, plan.lam, plan.delta
        )
    except Exception as exc:  # noqa: BLE001
        return [Cell(t, rep, seed, "estimator", status="failed", error=repr(exc)) for t in thetas]
    out = []
    for t in thetas:
        r = estimate_scales(feats, plan.lam, plan.delta, t, cost)
        out.append(
            Cell(
                t,
                rep,
                seed,
                "estimator",
                objective_s=r.predicted_denoise_latency_s,
                kept=float(r.kept),
                baseline_latency_s=cost.latency(len(feats)),
            )
        )
    return out


def _aggregate(plan: ExperimentPlan, cells: list[Cell]) -> list[dict]:
    rows = []
    policies = ("estimator",) if plan.sweep_var == "theta" else plan.policies
    for value in plan.sweep_values:
        for policy in policies:
            group = [c for c in cells if c.sweep_value == value and c.policy == policy]
            ok = [c for c in group if c.status == "ok"]
            obj = np.array([c.objective_s for c in ok])
            row = {
                "policy": policy,
                "sweep_var": plan.sweep_var,
                "sweep_value": float(value),
                "n": len(ok),
                "n_failed": len(group) - len(ok),
                "mean_latency_s": float(obj.mean()) if len(ok) else None,
                "std_latency_s": float(obj.std()) if len(ok) else None,
            }
            if plan.sweep_var == "theta":
                row["mean_kept"] = float(np.mean([c.kept for c in ok])) if ok else None
                row["baseline_latency_s"] = float(np.mean([c.baseline_latency_s for c in ok])) if ok else None
            else:
                row["mean_compute_s"] = float(np.mean([c.compute_s for c in ok])) if ok else None
                row["mean_transmission_s"] = float(np.mean([c.transmission_s for c in ok])) if ok else None
                gaps = [
                    (c.objective_s - c.oracle_objective_s) / c.oracle_objective_s
                    for c in ok
                    if not math.isnan(c.oracle_objective_s)
                ]
                row["oracle_gap"] = float(np.mean(gaps)) if gaps else None
            rows.append(row)
    return rows


def run_experiment(plan: ExperimentPlan) -> ExperimentResult:
    """Run every (sweep value, replication) cell and aggregate per policy.

    Scenarios depend only on the replication seed, so every sweep value sees
    the same instances. Cells are assembled in (sweep, replication) order
    whatever the worker count.
    """
    if plan.sweep_var == "theta":
        jobs = [(plan, rep, plan.sweep_values) for rep in range(plan.replications)]
        fn = _theta_cells
    else:
        profile = ingest_profile(plan.profile)
        jobs = [(plan, profile, v, rep) for v in plan.sweep_values for rep in range(plan.replications)]
        fn = _offload_cells
    if plan.workers > 1:
        with ProcessPoolExecutor(plan.workers) as ex:
            batches = list(ex.map(fn, jobs))
    else:
        batches = [fn(j) for j in jobs]
    cells = [c for b in batches for c in b]
    if plan.sweep_var == "theta":
        order = {v: i for i, v in enumerate(plan.sweep_values)}
        cells.sort(key=lambda c: (order[c.sweep_value], c.replication))
    return ExperimentResult(plan, _aggregate(plan, cells), cells)


def plan_to_dict(plan: ExperimentPlan) -> dict:
    return asdict(plan)
