"""Feature-driven conditioning scale estimation and condition pruning."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels

DEFAULT_LAMBDA = 0.2
DEFAULT_DELTA = 0.6
DEFAULT_THETA = 0.2
DEFAULT_TARGET_HW = (8, 8)
_STD_FLOOR = 1e-12
_MAGIC = b"FMCT"


class FeatureError(ValueError):
    """Invalid feature tensor or tensor file."""


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    condition_id: int
    data: np.ndarray  # (P, H, W)

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise FeatureError(f"feature tensor must be P x H x W with positive dims, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise FeatureError("feature tensor contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class InferenceCostModel:
    """Denoising latency, linear in the number of active conditioning branches."""

    base_denoise_s: float = 0.54
    per_branch_s: float = 0.45
    steps: int = 20
    steps_ref: int = 20

    def __post_init__(self) -> None:
        if self.base_denoise_s <= 0 or self.per_branch_s <= 0 or self.steps <= 0 or self.steps_ref <= 0:
            raise ValueError("cost model parameters must be positive")

    @classmethod
    def calibrated(cls, full_latency_s: float, n_branches: int, per_branch_s: float = 0.45, **kw) -> "InferenceCostModel":
        """Cost model whose latency with all ``n_branches`` active is ``full_latency_s``."""
        return cls(full_latency_s - n_branches * per_branch_s, per_branch_s, **kw)

    def latency(self, active: int) -> float:
        return (self.base_denoise_s + active * self.per_branch_s) * (self.steps / self.steps_ref)


@dataclass(frozen=True)
class ConditionScore:
    condition_id: int
    effectiveness_raw: float
    effectiveness: float
    uniqueness: float
    score: float
    alpha: float
    pruned: bool


@dataclass(frozen=True)
class ScaleReport:
    conditions: tuple[ConditionScore, ...]
    lam: float
    delta: float
    theta: float
    predicted_denoise_latency_s: float | None = None

    @property
    def alphas(self) -> np.ndarray:
        return np.array([c.alpha for c in self.conditions])

    @property
    def kept(self) -> int:
        return sum(not c.pruned for c in self.conditions)

    def to_dict(self) -> dict:
        return {
            "parameters": {"lambda": self.lam, "delta": self.delta, "theta": self.theta},
            "conditions": [asdict(c) for c in self.conditions],
            "kept": self.kept,
            "predicted_denoise_latency_s": self.predicted_denoise_latency_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _pool_axis(arr: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    """Average non-overlapping windows; the trailing remainder joins the last window."""
    n_in = arr.shape[axis]
    step = n_in // n_out
    edges = [i * step for i in range(n_out)] + [n_in]
    return np.stack(
        [np.take(arr, range(edges[i], edges[i + 1]), axis=axis).mean(axis=axis) for i in range(n_out)],
        axis=axis,
    )


def preprocess_feature(raw, target_hw: tuple[int, int] = DEFAULT_TARGET_HW, condition_id: int = 0) -> FeatureTensor:
    """Downsample an encoder output to ``target_hw`` and standardize every channel."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3:
        raise FeatureError(f"expected P x H x W, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise FeatureError("raw features contain non-finite values")
    h, w = target_hw
    if not (1 <= h <= raw.shape[1] and 1 <= w <= raw.shape[2]):
        raise FeatureError(f"target {target_hw} exceeds raw spatial dims {raw.shape[1:]}")
    pooled = _pool_axis(_pool_axis(raw, 1, h), 2, w)
    mean = pooled.mean(axis=(1, 2), keepdims=True)
    std = pooled.std(axis=(1, 2), keepdims=True)
    flat = std < _STD_FLOOR
    out = np.where(flat, 0.0, (pooled - mean) / np.where(flat, 1.0, std))
    return FeatureTensor(condition_id, out)


def intensity_map(E: FeatureTensor) -> np.ndarray:
    """Channel-mean squared activation, scaled so the peak is 1."""
    return np.asarray(kernels.intensity_kernel(E.data))


def effectiveness(E: FeatureTensor, A: np.ndarray) -> float:
    """Intensity-weighted spatial variance, averaged over channels (unnormalized)."""
    return float(kernels.effectiveness_kernel(E.data, np.ascontiguousarray(A, dtype=np.float64)))


def descriptor(E: FeatureTensor, A: np.ndarray) -> np.ndarray:
    """Unit-norm intensity-weighted channel vector; zero when the pooled vector is zero."""
    v = np.asarray(kernels.descriptor_kernel(E.data, np.ascontiguousarray(A, dtype=np.float64)))
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def project_channels(v: np.ndarray, p: int) -> np.ndarray:
    """Average-pool a channel vector down to ``p`` entries."""
    return v if v.shape[0] == p else _pool_axis(v, 0, p)


def uniqueness(features: Sequence[FeatureTensor], maps: Sequence[np.ndarray], delta: float = DEFAULT_DELTA) -> list[float]:
    J = len(features)
    if J == 0:
        raise FeatureError("no conditions")
    if len({f.channels for f in features}) != 1:
        raise FeatureError("uniqueness needs a common channel count; project features first")
    return _uniqueness_from_vectors(_condition_vectors(features, maps), delta)


def _condition_vectors(features: Sequence[FeatureTensor], maps: Sequence[np.ndarray]) -> np.ndarray:
    p_min = min(f.channels for f in features)
    if all(f.channels == p_min for f in features):
        return np.stack([descriptor(f, a) for f, a in zip(features, maps)])
    raw = [np.asarray(kernels.descriptor_kernel(f.data, a)) for f, a in zip(features, maps)]
    vs = np.stack([project_channels(v, p_min) for v in raw])
    norms = np.linalg.norm(vs, axis=1, keepdims=True)
    return np.divide(vs, norms, out=np.zeros_like(vs), where=norms > 0)


def _uniqueness_from_vectors(vs: np.ndarray, delta: float) -> list[float]:
    J = vs.shape[0]
    if J == 1:
        return [0.0]
    cos = np.clip(vs @ vs.T, -1.0, 1.0)
    for j in range(J):
        for m in range(j + 1, J):
            # identical descriptors: cosine is exactly 1, avoid rounding below it
            if np.any(vs[j]) and np.array_equal(vs[j], vs[m]):
                cos[j, m] = cos[m, j] = 1.0
    return uniqueness_from_cosines(cos, delta)


def uniqueness_from_cosines(cos, delta: float = DEFAULT_DELTA) -> list[float]:
    """Redundancy penalty from a J x J cosine matrix (diagonal ignored)."""
    cos = np.asarray(cos, dtype=np.float64)
    J = cos.shape[0]
    if J == 1:
        return [0.0]
    pen = np.maximum(0.0, cos - delta)
    np.fill_diagonal(pen, 0.0)
    return [float(-pen[j].sum() / (J - 1)) for j in range(J)]


def normalize_effectiveness(raw: Sequence[float]) -> list[float]:
    """Min-max scale across one request's conditions.

    A single condition, or all-equal scores, map to 1 when informative and to
    0 when the score is zero.
    """
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = float(raw.min()), float(raw.max())
    if hi - lo <= 1e-12 * max(abs(hi), 1e-300):
        return [1.0 if hi > 0 else 0.0] * len(raw)
    return [float(v) for v in (raw - lo) / (hi - lo)]


def estimate_scales(
    features: Sequence[FeatureTensor],
    lam: float = DEFAULT_LAMBDA,
    delta: float = DEFAULT_DELTA,
    theta: float = DEFAULT_THETA,
    cost: InferenceCostModel | None = None,
) -> ScaleReport:
    if not features:
        raise FeatureError("empty feature list")
    maps = [intensity_map(f) for f in features]
    e_raw = [effectiveness(f, a) for f, a in zip(features, maps)]
    e = normalize_effectiveness(e_raw)
    u = _uniqueness_from_vectors(_condition_vectors(features, maps), delta)
    conds = []
    for f, er, ej, uj in zip(features, e_raw, e, u):
        s = lam * uj + (1.0 - lam) * ej
        keep = s >= theta
        conds.append(ConditionScore(f.condition_id, er, ej, uj, s, min(max(s, 0.0), 1.0) if keep else 0.0, not keep))
    report = ScaleReport(tuple(conds), lam, delta, theta)
    if cost is not None:
        report = ScaleReport(report.conditions, lam, delta, theta, predict_latency(report, cost))
    return report


def predict_latency(report: ScaleReport, cost: InferenceCostModel) -> float:
    return cost.latency(report.kept)


# --- tensor files -------------------------------------------------------------


def write_tensor(path: str | Path, data) -> None:
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise FeatureError("tensor must be 3-dimensional")
    header = _MAGIC + struct.pack("<3I", *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != _MAGIC:
        raise FeatureError(f"{path}: not an FMCT tensor file")
    p, h, w = struct.unpack("<3I", buf[4:16])
    n = p * h * w
    if len(buf) != 16 + 4 * n:
        raise FeatureError(f"{path}: expected {n} floats, file holds {(len(buf) - 16) // 4}")
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(p, h, w).astype(np.float64)
