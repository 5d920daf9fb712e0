"""Latency terms of the end-edge preprocessing pipeline.

Sizes are stored in bytes and converted to bits (x8) for transmission.
Rates use log base 2, so they come out in bits/s.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .kernels import RATE_FLOOR_BPS
from .workload import EPS_Y, Assignment, ChannelSpec, EdgeSpec, Scenario, UserSpec, check_shape


class DomainError(ValueError):
    """Input outside the domain of a latency formula."""


@dataclass(frozen=True)
class UserLatency:
    user_id: int
    local_compute_s: float
    edge_compute_s: float
    uplink_rate_bps: float
    edge_upload_s: float
    local_result_upload_s: float
    edge_completion_s: float
    local_completion_s: float
    completion_s: float
    rate_clamped: bool = False


@dataclass(frozen=True)
class LatencyBreakdown:
    users: tuple[UserLatency, ...]
    mean_completion_s: float

    @property
    def any_clamped(self) -> bool:
        return any(u.rate_clamped for u in self.users)

    def to_dict(self) -> dict:
        return {"users": [asdict(u) for u in self.users], "mean_completion_s": self.mean_completion_s}

    def to_rows(self) -> list[dict]:
        """One row per user plus a ``summary`` row; the CSV emitter format."""
        rows = [{"row": "user", **asdict(u)} for u in self.users]
        summary = {k: "" for k in rows[0]}
        summary.update(
            row="summary",
            local_compute_s=math.fsum(u.local_compute_s for u in self.users) / len(self.users),
            edge_compute_s=math.fsum(u.edge_compute_s for u in self.users) / len(self.users),
            completion_s=self.mean_completion_s,
            rate_clamped=self.any_clamped,
        )
        rows.append(summary)
        return rows

    def to_csv(self) -> str:
        rows = self.to_rows()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()


def uplink_rate(y: float, ch: ChannelSpec, u: UserSpec) -> float:
    """Shannon rate (bits/s) of a user holding fraction ``y`` of the uplink."""
    if not y >= EPS_Y:
        raise DomainError(f"bandwidth fraction {y!r} below {EPS_Y}")
    if y > 1.0:
        raise DomainError(f"bandwidth fraction {y!r} above 1")
    share = y * ch.uplink_bandwidth_hz
    return share * math.log2(1.0 + u.tx_power_w * u.channel_gain / (share * ch.noise_psd_w_per_hz))


def local_compute_delay(u: UserSpec, x: Sequence[int]) -> float:
    if len(x) != u.n_subtasks:
        raise DomainError("offload vector length mismatch")
    return math.fsum((1 - b) * s.workload_flops / u.compute_flops_per_s for s, b in zip(u.subtasks, x))


def edge_compute_delay(u: UserSpec, edge: EdgeSpec, x: Sequence[int]) -> float:
    if len(x) != u.n_subtasks:
        raise DomainError("offload vector length mismatch")
    return math.fsum(b * s.workload_flops / edge.compute_flops_per_s for s, b in zip(u.subtasks, x))


def edge_upload_bits(u: UserSpec, x: Sequence[int]) -> float:
    """Bits uploaded for offloaded subtasks; a shared source image is sent once."""
    seen: dict = {}
    for s, b in zip(u.subtasks, x):
        if b:
            seen.setdefault(s.source_image_id, s.source_image_bytes)
    return 8.0 * math.fsum(seen.values())


def local_result_bits(u: UserSpec, x: Sequence[int]) -> float:
    return 8.0 * math.fsum((1 - b) * s.output_bytes for s, b in zip(u.subtasks, x))


def _rate(y: float, ch: ChannelSpec, u: UserSpec) -> tuple[float, bool]:
    r = uplink_rate(y, ch, u)
    if r < RATE_FLOOR_BPS:
        return RATE_FLOOR_BPS, True
    return r, False


def edge_completion(u: UserSpec, edge: EdgeSpec, ch: ChannelSpec, x: Sequence[int], y: float) -> float:
    r, _ = _rate(y, ch, u)
    return edge_upload_bits(u, x) / r + edge_compute_delay(u, edge, x)


def local_completion(u: UserSpec, ch: ChannelSpec, x: Sequence[int], y: float) -> float:
    r, _ = _rate(y, ch, u)
    return local_compute_delay(u, x) + local_result_bits(u, x) / r


def user_latency(u: UserSpec, edge: EdgeSpec, ch: ChannelSpec, x: Sequence[int], y: float) -> UserLatency:
    r, clamped = _rate(y, ch, u)
    lu_hat = local_compute_delay(u, x)
    le_hat = edge_compute_delay(u, edge, x)
    up_e = edge_upload_bits(u, x) / r
    up_l = local_result_bits(u, x) / r
    le = up_e + le_hat
    lu = lu_hat + up_l
    return UserLatency(u.user_id, lu_hat, le_hat, r, up_e, up_l, le, lu, max(lu, le), clamped)


def evaluate(scn: Scenario, a: Assignment) -> LatencyBreakdown:
    check_shape(scn, a)
    users = tuple(
        user_latency(u, scn.edge, scn.channel, x, y)
        for u, x, y in zip(scn.users, a.offload, a.bandwidth_fraction)
    )
    return LatencyBreakdown(users, math.fsum(v.completion_s for v in users) / len(users))


def latency_params(u: UserSpec, edge: EdgeSpec, ch: ChannelSpec, x: Sequence[int]) -> np.ndarray:
    """Pack a user's latency terms for the kernels in :mod:`condoffload.kernels`."""
    return np.array(
        [
            u.tx_power_w * u.channel_gain / ch.noise_psd_w_per_hz,
            local_compute_delay(u, x),
            edge_compute_delay(u, edge, x),
            edge_upload_bits(u, x),
            local_result_bits(u, x),
        ]
    )
