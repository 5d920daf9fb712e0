"""Joint offloading and bandwidth solvers.

``solve_heuristic`` is the iterative marginal-gain algorithm, ``solve_oracle``
the exhaustive reference for small instances, ``solve_baseline`` the
Local / Edge / Random comparison policies.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .latency import LatencyBreakdown, evaluate, latency_params, user_latency
from .workload import (
    EPS_Y,
    SIMPLEX_TOL,
    Assignment,
    Scenario,
    Violation,
    edge_headroom,
    local_load,
    minimal_offload,
    validate_assignment,
)

MAX_ITER = 100
OSCILLATION_LIMIT = 5
BISECTION_TOL = 1e-6
ORACLE_MAX_SUBTASKS = 16
ORACLE_MAX_USERS = 4
DEFAULT_Y_GRID = {1: 2, 2: 201, 3: 101, 4: 41}


class SolverError(RuntimeError):
    """The solver could not produce a feasible assignment."""


class OracleSizeError(SolverError):
    """Instance too large for exhaustive search."""


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    objective_s: float  # best accepted objective so far, inf before the first accept
    L0_s: float
    sum_y: float
    accepted: bool = False


@dataclass
class SolverState:
    x: list[list[int]]
    y: list[float]
    weights: list[float]
    L0: float
    best: Assignment | None = None
    best_objective: float = math.inf
    iteration: int = 0


@dataclass(frozen=True)
class SolveReport:
    solver: str
    assignment: Assignment
    breakdown: LatencyBreakdown
    iterations: int
    trace: tuple[TracePoint, ...] = ()
    violations: tuple[Violation, ...] = ()
    info: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.breakdown.mean_completion_s

    @property
    def feasible(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "objective_s": self.objective,
            "feasible": self.feasible,
            "iterations": self.iterations,
            "assignment": self.assignment.to_dict(),
            "breakdown": self.breakdown.to_dict(),
            "violations": [asdict(v) for v in self.violations],
            "trace": [asdict(t) for t in self.trace],
            "info": self.info,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "objective_s", "L0_s", "sum_y"])
        for t in self.trace:
            w.writerow([t.iteration, repr(t.objective_s), repr(t.L0_s), repr(t.sum_y)])
        return buf.getvalue()


def _report(solver: str, scn: Scenario, a: Assignment, iterations: int, trace=(), info=None) -> SolveReport:
    return SolveReport(
        solver, a, evaluate(scn, a), iterations, tuple(trace), tuple(validate_assignment(scn, a)), info or {}
    )


def _freeze(x: Sequence[Sequence[int]]) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(r) for r in x)


def _over_local(scn: Scenario, k: int, row: Sequence[int]) -> bool:
    u = scn.users[k]
    return local_load(u, row) > u.compute_budget_flops * (1 + SIMPLEX_TOL) + SIMPLEX_TOL


def _offload_ok(scn: Scenario, x: list[list[int]], k: int, i: int) -> bool:
    """Offloading (k, i) keeps the edge budget satisfiable for every user."""
    trial = [list(r) for r in x]
    trial[k][i] = 1
    return edge_headroom(scn, trial) >= -SIMPLEX_TOL * scn.edge.compute_budget_flops


def _gain(scn: Scenario, k: int, row: Sequence[int], i: int, y: float) -> float:
    u = scn.users[k]
    r0 = list(row)
    r1 = list(row)
    r0[i], r1[i] = 0, 1
    return (
        user_latency(u, scn.edge, scn.channel, r0, y).completion_s
        - user_latency(u, scn.edge, scn.channel, r1, y).completion_s
    )


# --- heuristic --------------------------------------------------------------


def _rebalance_user(scn: Scenario, st: SolverState, k: int) -> None:
    u = scn.users[k]
    n = u.n_subtasks
    while True:
        ul = user_latency(u, scn.edge, scn.channel, st.x[k], st.y[k])
        forced = _over_local(scn, k, st.x[k])
        if not (ul.local_completion_s - ul.edge_completion_s >= ul.completion_s / n or forced):
            return
        cands = [i for i in range(n) if not st.x[k][i] and _offload_ok(scn, st.x, k, i)]
        if not cands:
            return
        gains = [_gain(scn, k, st.x[k], i, st.y[k]) for i in cands]
        best = int(np.argmax(gains))  # first maximum, i.e. lowest index
        if not forced and gains[best] <= 0:
            return
        st.x[k][cands[best]] = 1


def solve_heuristic(
    scn: Scenario,
    max_iter: int = MAX_ITER,
    seed: int = 0,
    user_order: Sequence[int] | None = None,
) -> SolveReport:
    """Iterative offload/bandwidth heuristic.

    The algorithm is deterministic; ``seed`` is accepted so every solver
    shares one call signature. ``user_order`` (indices) overrides the default
    ascending per-iteration user sweep.
    """
    del seed
    K = scn.n_users
    order = list(range(K)) if user_order is None else list(user_order)
    if sorted(order) != list(range(K)):
        raise ValueError("user_order must be a permutation of user indices")
    lo, hi = EPS_Y, 1.0 - EPS_Y
    bw = scn.channel.uplink_bandwidth_hz
    st = SolverState(
        x=[[0] * u.n_subtasks for u in scn.users],
        y=[min(max(1.0 / K, lo), hi)] * K,
        weights=[0.0] * K,
        L0=scn.latency_target_s,
    )
    trace: list[TracePoint] = []
    last_branch, alternations = None, 0

    for it in range(1, max_iter + 1):
        st.iteration = it
        completions = [0.0] * K
        for k in order:
            u = scn.users[k]
            _rebalance_user(scn, st, k)
            prm = latency_params(u, scn.edge, scn.channel, st.x[k])
            st.y[k] = float(kernels.min_share_for_target(st.L0, bw, prm, lo, hi, BISECTION_TOL))
            ul = user_latency(u, scn.edge, scn.channel, st.x[k], st.y[k])
            completions[k] = ul.completion_s
            st.weights[k] = max(ul.edge_completion_s - ul.local_completion_s, 0.0) * ul.completion_s

        step = min(completions[k] / scn.users[k].n_subtasks for k in range(K))
        sum_y = math.fsum(st.y)
        accepted = False
        if sum_y <= 1.0 + SIMPLEX_TOL:
            surplus = max(1.0 - sum_y, 0.0)
            wsum = math.fsum(st.weights)
            if wsum > 0:
                y_new = [y + surplus * w / wsum for y, w in zip(st.y, st.weights)]
            else:
                y_new = [y + surplus / K for y in st.y]
            y_new = [min(max(y, lo), hi) for y in y_new]
            st.L0 -= step
            cand = Assignment(_freeze(st.x), tuple(y_new))
            obj = evaluate(scn, cand).mean_completion_s
            if obj < st.best_objective and not validate_assignment(scn, cand):
                st.best, st.best_objective, accepted = cand, obj, True
            st.y = y_new
            branch = "tighten"
        else:
            st.L0 += step
            branch = "relax"
        trace.append(TracePoint(it, st.best_objective, st.L0, sum_y, accepted))

        alternations = alternations + 1 if last_branch is not None and branch != last_branch else 0
        last_branch = branch
        if alternations >= OSCILLATION_LIMIT:
            break

    best = st.best
    if best is None:
        best = Assignment.uniform(scn, st.x)
        if validate_assignment(scn, best):
            best = Assignment.uniform(scn, minimal_offload(scn))
    rep = _report("heuristic", scn, best, st.iteration, trace, {"final_L0_s": st.L0})
    if rep.violations:
        raise SolverError(f"heuristic produced an infeasible assignment: {rep.violations}")
    return rep


# --- exhaustive oracle ------------------------------------------------------


def solve_oracle(scn: Scenario, y_grid: int | None = None) -> SolveReport:
    """Exhaustive search over offload bits with simplex search over bandwidth.

    For each bit pattern the per-user latency curves are tabulated on a grid,
    the best grid allocation is found by min-plus convolution, and then
    refined by pairwise golden-section exchanges until no pair improves.
    Latency is convex and separable in the shares, so pairwise optimality is
    global optimality.
    """
    K, N = scn.n_users, scn.total_subtasks
    if N > ORACLE_MAX_SUBTASKS or K > ORACLE_MAX_USERS:
        raise OracleSizeError(
            f"oracle limited to {ORACLE_MAX_SUBTASKS} subtasks and {ORACLE_MAX_USERS} users, got {N} and {K}"
        )
    G = y_grid or DEFAULT_Y_GRID[K]
    if G < 2:
        raise ValueError("y_grid must be at least 2")
    lo, hi = EPS_Y, 1.0 - EPS_Y
    bw = scn.channel.uplink_bandwidth_hz
    room = scn.edge.compute_budget_flops - scn.edge.main_task_reserve_flops
    if K == 1:
        ys = np.array([hi])
    else:
        ys = lo + (1.0 - K * lo) * np.arange(G) / (G - 1)
    y_top = float(ys[-1])

    per_user = []
    for k, u in enumerate(scn.users):
        opts = []
        for bits in itertools.product((0, 1), repeat=u.n_subtasks):
            if _over_local(scn, k, bits):
                continue
            prm = latency_params(u, scn.edge, scn.channel, bits)
            curve = np.asarray(kernels.latency_curve(ys, bw, prm), dtype=np.float64)
            load = math.fsum(s.workload_flops for s, b in zip(u.subtasks, bits) if b)
            opts.append((bits, prm, curve, load, float(curve[-1])))
        per_user.append(opts)

    cands = []
    for combo in itertools.product(*per_user):
        if math.fsum(o[3] for o in combo) > room * (1 + SIMPLEX_TOL) + SIMPLEX_TOL:
            continue
        curves = np.stack([o[2] for o in combo])
        if K == 1:
            val, idx = float(curves[0, 0]), np.zeros(1, dtype=np.int64)
        else:
            val, idx = kernels.simplex_grid_min(curves)
        cands.append((float(val), combo, np.asarray(idx)))
    if not cands:
        raise SolverError("no feasible offload pattern")
    cands.sort(key=lambda c: c[0])  # stable: ties keep enumeration order

    best_sum, best_x, best_y = math.inf, None, None
    refined = 0
    for val, combo, idx in cands:
        bound = math.fsum(o[4] for o in combo) if K > 1 else val
        if bound >= best_sum:
            continue
        y0 = ys[idx].astype(np.float64)
        if K > 1:
            prms = np.stack([o[1] for o in combo])
            y = np.asarray(kernels.pair_refine(y0, bw, prms, lo, y_top, 1e-15, 200))
            total = math.fsum(float(kernels.latency_at(y[k], bw, prms[k])) for k in range(K))
            if total > val:  # keep the grid point if refinement did not help
                y, total = y0, val
            refined += 1
        else:
            y, total = y0, val
        if total < best_sum:
            best_sum, best_x, best_y = total, [o[0] for o in combo], y
    a = Assignment(_freeze(best_x), tuple(float(v) for v in best_y))
    return _report("oracle", scn, a, len(cands), (), {"y_grid": G, "patterns": len(cands), "refined": refined})


# --- baselines --------------------------------------------------------------


def _spill_local(scn: Scenario) -> list[list[int]]:
    x = [[0] * u.n_subtasks for u in scn.users]
    for k, u in enumerate(scn.users):
        while _over_local(scn, k, x[k]):
            cands = [i for i in range(u.n_subtasks) if not x[k][i] and _offload_ok(scn, x, k, i)]
            if not cands:
                break
            i = max(cands, key=lambda j: (u.subtasks[j].workload_flops, -j))
            x[k][i] = 1
    return x


def _spill_edge(scn: Scenario) -> list[list[int]]:
    x = [[1] * u.n_subtasks for u in scn.users]
    y = Assignment.uniform(scn, x).bandwidth_fraction[0]
    room = scn.edge.compute_budget_flops - scn.edge.main_task_reserve_flops

    def used() -> float:
        return math.fsum(s.workload_flops for u, r in zip(scn.users, x) for s, b in zip(u.subtasks, r) if b)

    while used() > room * (1 + SIMPLEX_TOL):
        cands = []
        for k, u in enumerate(scn.users):
            for i in range(u.n_subtasks):
                if not x[k][i]:
                    continue
                trial = list(x[k])
                trial[i] = 0
                if not _over_local(scn, k, trial):
                    cands.append((_gain(scn, k, x[k], i, y), k, i))
        if not cands:
            break
        _, k, i = min(cands)
        x[k][i] = 0
    return x


def _repair_random(scn: Scenario, x: list[list[int]], rng: np.random.Generator) -> list[list[int]]:
    for k, u in enumerate(scn.users):
        while _over_local(scn, k, x[k]):
            local = [i for i in range(u.n_subtasks) if not x[k][i]]
            x[k][local[int(rng.integers(len(local)))]] = 1
    room = scn.edge.compute_budget_flops - scn.edge.main_task_reserve_flops

    def used() -> float:
        return math.fsum(s.workload_flops for u, r in zip(scn.users, x) for s, b in zip(u.subtasks, r) if b)

    while used() > room * (1 + SIMPLEX_TOL):
        movable = []
        for k, u in enumerate(scn.users):
            for i in range(u.n_subtasks):
                if x[k][i]:
                    trial = list(x[k])
                    trial[i] = 0
                    if not _over_local(scn, k, trial):
                        movable.append((k, i))
        if not movable:
            break
        k, i = movable[int(rng.integers(len(movable)))]
        x[k][i] = 0
    return x


def solve_baseline(scn: Scenario, policy: str, seed: int = 0) -> SolveReport:
    """Reference policies: ``local``, ``edge`` or ``random``."""
    K = scn.n_users
    if policy == "local":
        x = _spill_local(scn)
        a = Assignment.uniform(scn, x)
    elif policy == "edge":
        x = _spill_edge(scn)
        a = Assignment.uniform(scn, x)
    elif policy == "random":
        rng = np.random.default_rng(seed)
        x = [[int(b) for b in rng.integers(0, 2, size=u.n_subtasks)] for u in scn.users]
        d = rng.dirichlet(np.ones(K))
        x = _repair_random(scn, x, rng)
        y = tuple(min(EPS_Y + (1.0 - K * EPS_Y) * float(v), 1.0 - EPS_Y) for v in d)
        a = Assignment(_freeze(x), y)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    if validate_assignment(scn, a):
        a = Assignment(_freeze(minimal_offload(scn)), a.bandwidth_fraction)
    return _report(policy, scn, a, 1, (), {"seed": seed} if policy == "random" else {})


POLICIES = ("local", "edge", "random")
