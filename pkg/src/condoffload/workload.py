"""Problem instance types, constraint checking and scenario serialization."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

EPS_Y = 1e-6
SIMPLEX_TOL = 1e-9
# exact subset enumeration up to this many local subtasks, greedy beyond
_EXACT_SUBSET_LIMIT = 20


class ScenarioError(ValueError):
    """Malformed or infeasible problem instance."""


class ShapeError(ValueError):
    """Assignment does not match the scenario structure."""


def _positive(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ScenarioError(f"{name} must be a positive finite number, got {value!r}")


def _non_negative(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
        raise ScenarioError(f"{name} must be a non-negative finite number, got {value!r}")


@dataclass(frozen=True)
class SubtaskSpec:
    id: int
    workload_flops: float
    source_image_id: str | int
    source_image_bytes: float
    output_bytes: float
    kind_label: str = ""

    def __post_init__(self) -> None:
        _positive("workload_flops", self.workload_flops)
        _positive("source_image_bytes", self.source_image_bytes)
        _positive("output_bytes", self.output_bytes)


@dataclass(frozen=True)
class UserSpec:
    user_id: int
    compute_flops_per_s: float
    compute_budget_flops: float
    tx_power_w: float
    channel_gain: float
    subtasks: tuple[SubtaskSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "subtasks", tuple(self.subtasks))
        _positive("compute_flops_per_s", self.compute_flops_per_s)
        _non_negative("compute_budget_flops", self.compute_budget_flops)
        # zero power is allowed so that degenerate links can be modeled
        _non_negative("tx_power_w", self.tx_power_w)
        _positive("channel_gain", self.channel_gain)
        if not self.subtasks:
            raise ScenarioError(f"user {self.user_id} has no subtasks")
        ids = [s.id for s in self.subtasks]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"user {self.user_id} has duplicate subtask ids")
        sizes: dict[Any, float] = {}
        for s in self.subtasks:
            prev = sizes.setdefault(s.source_image_id, s.source_image_bytes)
            if prev != s.source_image_bytes:
                raise ScenarioError(
                    f"user {self.user_id}: image {s.source_image_id!r} has inconsistent sizes"
                )

    @property
    def n_subtasks(self) -> int:
        return len(self.subtasks)

    @property
    def workloads(self) -> np.ndarray:
        return np.array([s.workload_flops for s in self.subtasks], dtype=np.float64)


@dataclass(frozen=True)
class EdgeSpec:
    compute_flops_per_s: float
    compute_budget_flops: float
    main_task_reserve_flops: float = 0.0

    def __post_init__(self) -> None:
        _positive("edge compute_flops_per_s", self.compute_flops_per_s)
        _positive("edge compute_budget_flops", self.compute_budget_flops)
        _non_negative("main_task_reserve_flops", self.main_task_reserve_flops)
        if self.main_task_reserve_flops > self.compute_budget_flops:
            raise ScenarioError("main_task_reserve_flops exceeds edge compute_budget_flops")


@dataclass(frozen=True)
class ChannelSpec:
    uplink_bandwidth_hz: float
    noise_psd_w_per_hz: float

    def __post_init__(self) -> None:
        _positive("uplink_bandwidth_hz", self.uplink_bandwidth_hz)
        _positive("noise_psd_w_per_hz", self.noise_psd_w_per_hz)


@dataclass(frozen=True)
class Scenario:
    users: tuple[UserSpec, ...]
    edge: EdgeSpec
    channel: ChannelSpec
    latency_target_s: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "users", tuple(self.users))
        if not self.users:
            raise ScenarioError("scenario needs at least one user")
        _positive("latency_target_s", self.latency_target_s)
        uids = [u.user_id for u in self.users]
        if len(set(uids)) != len(uids):
            raise ScenarioError("duplicate user ids")
        self._check_feasible()

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def total_subtasks(self) -> int:
        return sum(u.n_subtasks for u in self.users)

    def _check_feasible(self) -> None:
        edge_room = self.edge.compute_budget_flops - self.edge.main_task_reserve_flops
        forced = 0.0
        for u in self.users:
            # subtasks that cannot run locally even alone
            for s in u.subtasks:
                if s.workload_flops > u.compute_budget_flops:
                    forced += s.workload_flops
        if forced > edge_room * (1 + SIMPLEX_TOL):
            raise ScenarioError(
                f"infeasible: {forced:.6g} FLOPs cannot run locally but edge has {edge_room:.6g} free"
            )
        # stronger check: the cheapest way to satisfy every local budget must fit the edge
        needed = sum(min_extra_offload(u, [0] * u.n_subtasks)[0] for u in self.users)
        if needed > edge_room * (1 + SIMPLEX_TOL):
            raise ScenarioError(
                f"infeasible: local budgets need {needed:.6g} FLOPs at the edge but only {edge_room:.6g} free"
            )

    def with_bandwidth(self, hz: float) -> "Scenario":
        return Scenario(self.users, self.edge, ChannelSpec(hz, self.channel.noise_psd_w_per_hz), self.latency_target_s)


@dataclass(frozen=True)
class Assignment:
    offload: tuple[tuple[int, ...], ...]
    bandwidth_fraction: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "offload", tuple(tuple(int(b) for b in row) for row in self.offload))
        object.__setattr__(self, "bandwidth_fraction", tuple(float(y) for y in self.bandwidth_fraction))
        for row in self.offload:
            if any(b not in (0, 1) for b in row):
                raise ShapeError("offload bits must be 0 or 1")

    @classmethod
    def uniform(cls, scn: Scenario, offload: Sequence[Sequence[int]]) -> "Assignment":
        k = scn.n_users
        y = min(max(1.0 / k, EPS_Y), 1.0 - EPS_Y)
        return cls(tuple(tuple(r) for r in offload), (y,) * k)

    def with_bit(self, k: int, i: int, bit: int) -> "Assignment":
        rows = [list(r) for r in self.offload]
        rows[k][i] = bit
        return Assignment(tuple(tuple(r) for r in rows), self.bandwidth_fraction)

    def to_dict(self) -> dict:
        return {"offload": [list(r) for r in self.offload], "bandwidth_fraction": list(self.bandwidth_fraction)}


@dataclass(frozen=True)
class Violation:
    constraint: str  # "local_budget" | "edge_budget" | "simplex" | "bandwidth_range"
    user: int | None
    excess: float


def check_shape(scn: Scenario, a: Assignment) -> None:
    if len(a.offload) != scn.n_users or len(a.bandwidth_fraction) != scn.n_users:
        raise ShapeError(f"assignment covers {len(a.offload)} users, scenario has {scn.n_users}")
    for u, row in zip(scn.users, a.offload):
        if len(row) != u.n_subtasks:
            raise ShapeError(f"user {u.user_id}: {len(row)} offload bits for {u.n_subtasks} subtasks")


def local_load(u: UserSpec, x: Sequence[int]) -> float:
    return math.fsum(s.workload_flops for s, b in zip(u.subtasks, x) if not b)


def edge_load(scn: Scenario, a: Assignment) -> float:
    return math.fsum(
        s.workload_flops for u, row in zip(scn.users, a.offload) for s, b in zip(u.subtasks, row) if b
    )


def constraint_slacks(scn: Scenario, a: Assignment) -> dict:
    """Signed slack of every budget constraint; negative means violated."""
    check_shape(scn, a)
    return {
        "local_budget": [u.compute_budget_flops - local_load(u, row) for u, row in zip(scn.users, a.offload)],
        "edge_budget": scn.edge.compute_budget_flops - scn.edge.main_task_reserve_flops - edge_load(scn, a),
        "simplex": 1.0 - math.fsum(a.bandwidth_fraction),
    }


def _over(slack: float, scale: float) -> bool:
    return slack < -SIMPLEX_TOL * max(1.0, scale)


def validate_assignment(scn: Scenario, a: Assignment) -> list[Violation]:
    """Every violated constraint of P0 with its excess. Empty list means feasible."""
    slacks = constraint_slacks(scn, a)
    out: list[Violation] = []
    for u, s in zip(scn.users, slacks["local_budget"]):
        if _over(s, u.compute_budget_flops):
            out.append(Violation("local_budget", u.user_id, -s))
    if _over(slacks["edge_budget"], scn.edge.compute_budget_flops):
        out.append(Violation("edge_budget", None, -slacks["edge_budget"]))
    for u, y in zip(scn.users, a.bandwidth_fraction):
        if not math.isfinite(y) or y < EPS_Y:
            out.append(Violation("bandwidth_range", u.user_id, EPS_Y - y if math.isfinite(y) else math.inf))
        elif y >= 1.0:
            out.append(Violation("bandwidth_range", u.user_id, y - 1.0 + EPS_Y))
    if slacks["simplex"] < -SIMPLEX_TOL:
        out.append(Violation("simplex", None, -slacks["simplex"]))
    return out


def is_feasible(scn: Scenario, a: Assignment) -> bool:
    return not validate_assignment(scn, a)


def min_extra_offload(u: UserSpec, x: Sequence[int]) -> tuple[float, tuple[int, ...]]:
    """Cheapest additional offload (FLOPs, subtask indices) restoring the local budget.

    Exact subset enumeration for small users; largest-first greedy otherwise,
    which can only overestimate the load.
    """
    local = [i for i, b in enumerate(x) if not b]
    excess = local_load(u, x) - u.compute_budget_flops
    if excess <= SIMPLEX_TOL * max(1.0, u.compute_budget_flops):
        return 0.0, ()
    w = np.array([u.subtasks[i].workload_flops for i in local])
    if len(local) <= _EXACT_SUBSET_LIMIT:
        sums = np.zeros(1)
        for v in w:
            sums = np.concatenate([sums, sums + v])
        ok = np.flatnonzero(sums >= excess * (1 - SIMPLEX_TOL))
        best = ok[np.argmin(sums[ok])]
        chosen = tuple(local[j] for j in range(len(local)) if best >> j & 1)
        return float(sums[best]), chosen
    order = sorted(local, key=lambda i: -u.subtasks[i].workload_flops)
    chosen, total = [], 0.0
    for i in order:
        if total >= excess:
            break
        chosen.append(i)
        total += u.subtasks[i].workload_flops
    return total, tuple(sorted(chosen))


def edge_headroom(scn: Scenario, offload: Sequence[Sequence[int]]) -> float:
    """Edge FLOPs left after reserving what every user still needs to offload."""
    used = math.fsum(
        s.workload_flops for u, row in zip(scn.users, offload) for s, b in zip(u.subtasks, row) if b
    )
    reserve = math.fsum(min_extra_offload(u, row)[0] for u, row in zip(scn.users, offload))
    return scn.edge.compute_budget_flops - scn.edge.main_task_reserve_flops - used - reserve


def minimal_offload(scn: Scenario) -> tuple[tuple[int, ...], ...]:
    """Offload pattern using the least edge compute that satisfies all local budgets."""
    rows = []
    for u in scn.users:
        row = [0] * u.n_subtasks
        for i in min_extra_offload(u, row)[1]:
            row[i] = 1
        rows.append(tuple(row))
    return tuple(rows)


# --- serialization -------------------------------------------------------

_SUBTASK_KEYS = ("id", "workload_flops", "source_image_id", "source_image_bytes", "output_bytes", "kind_label")
_USER_KEYS = ("user_id", "compute_flops_per_s", "compute_budget_flops", "tx_power_w", "channel_gain", "subtasks")
_EDGE_KEYS = ("compute_flops_per_s", "compute_budget_flops", "main_task_reserve_flops")
_CHANNEL_KEYS = ("uplink_bandwidth_hz", "noise_psd_w_per_hz")
_TOP_KEYS = ("users", "edge", "channel", "latency_target_s")


def _strict(obj: Any, allowed: Sequence[str], where: str, optional: Sequence[str] = ()) -> dict:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(allowed) - set(obj) - set(optional)
    if missing:
        raise ScenarioError(f"{where}: missing keys {sorted(missing)}")
    return obj


def scenario_to_dict(scn: Scenario) -> dict:
    return {
        "users": [
            {
                "user_id": u.user_id,
                "compute_flops_per_s": u.compute_flops_per_s,
                "compute_budget_flops": u.compute_budget_flops,
                "tx_power_w": u.tx_power_w,
                "channel_gain": u.channel_gain,
                "subtasks": [{k: getattr(s, k) for k in _SUBTASK_KEYS} for s in u.subtasks],
            }
            for u in scn.users
        ],
        "edge": {k: getattr(scn.edge, k) for k in _EDGE_KEYS},
        "channel": {k: getattr(scn.channel, k) for k in _CHANNEL_KEYS},
        "latency_target_s": scn.latency_target_s,
    }


def scenario_from_dict(d: Any) -> Scenario:
    try:
        _strict(d, _TOP_KEYS, "scenario", optional=("latency_target_s",))
        users = []
        for ui, ud in enumerate(d["users"]):
            _strict(ud, _USER_KEYS, f"users[{ui}]")
            subs = [
                SubtaskSpec(**_strict(sd, _SUBTASK_KEYS, f"users[{ui}].subtasks[{si}]", optional=("kind_label",)))
                for si, sd in enumerate(ud["subtasks"])
            ]
            users.append(UserSpec(**{**ud, "subtasks": tuple(subs)}))
        edge = EdgeSpec(**_strict(d["edge"], _EDGE_KEYS, "edge", optional=("main_task_reserve_flops",)))
        channel = ChannelSpec(**_strict(d["channel"], _CHANNEL_KEYS, "channel"))
        return Scenario(tuple(users), edge, channel, d.get("latency_target_s", 1.0))
    except TypeError as exc:
        raise ScenarioError(str(exc)) from exc


def dumps_scenario(scn: Scenario) -> str:
    return json.dumps(scenario_to_dict(scn), indent=2) + "\n"


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(scn: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(scn))


def assignment_from_dict(d: dict) -> Assignment:
    return Assignment(tuple(tuple(r) for r in d["offload"]), tuple(d["bandwidth_fraction"]))


__all__ = [
    "EPS_Y",
    "Assignment",
    "ChannelSpec",
    "EdgeSpec",
    "Scenario",
    "ScenarioError",
    "ShapeError",
    "SubtaskSpec",
    "UserSpec",
    "Violation",
    "constraint_slacks",
    "edge_headroom",
    "is_feasible",
    "load_scenario",
    "min_extra_offload",
    "minimal_offload",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "validate_assignment",
]
