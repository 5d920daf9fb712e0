import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from condoffload import kernels
from condoffload.harness import ingest_profile
from condoffload.workload import ChannelSpec, EdgeSpec, Scenario, ScenarioError, SubtaskSpec, UserSpec

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session", autouse=True)
def _jit_warm():
    kernels.warmup()


@pytest.fixture(scope="session")
def profile():
    return ingest_profile()


def make_user(uid=0, workloads=(1e9,), f=1e9, budget=1e12, p=0.1, h=1e-7, images=None, src=1e6, out=1e5):
    images = images or [f"img{i}" for i in range(len(workloads))]
    subs = tuple(SubtaskSpec(i, c, img, src, out, "t") for i, (c, img) in enumerate(zip(workloads, images)))
    return UserSpec(uid, f, budget, p, h, subs)


def make_scenario(users, f_e=1e10, budget_e=1e13, reserve=0.0, bw=20e6, n0=1e-13, L0=1.0):
    return Scenario(tuple(users), EdgeSpec(f_e, budget_e, reserve), ChannelSpec(bw, n0), L0)


def random_scenario(rng, K=None, max_n=3):
    """Broad random instance, independent of the harness generator."""
    while True:
        K = K or int(rng.integers(1, 4))
        users = []
        for k in range(K):
            n = int(rng.integers(1, max_n + 1))
            imgs = [f"u{k}i{int(rng.integers(0, n))}" for _ in range(n)]
            sizes = {im: float(rng.uniform(5e4, 5e5)) for im in set(imgs)}
            subs = tuple(
                SubtaskSpec(i, float(10 ** rng.uniform(9, 11.5)), im, sizes[im], float(rng.uniform(1e4, 2e5)), "r")
                for i, im in enumerate(imgs)
            )
            users.append(
                UserSpec(
                    k,
                    float(10 ** rng.uniform(10, 12)),
                    float(10 ** rng.uniform(10.5, 12)),
                    float(rng.uniform(0.05, 0.5)),
                    float(10 ** rng.uniform(-10, -8)),
                    subs,
                )
            )
        try:
            return Scenario(tuple(users), EdgeSpec(1e13, 1e13, 1e12), ChannelSpec(float(rng.uniform(5e6, 30e6)), 1e-17), 1.0)
        except ScenarioError:
            K = None
            continue


def random_assignment(rng, scn):
    from condoffload.workload import Assignment

    x = tuple(tuple(int(b) for b in rng.integers(0, 2, size=u.n_subtasks)) for u in scn.users)
    d = rng.dirichlet(np.ones(scn.n_users))
    y = tuple(min(1e-6 + (1 - scn.n_users * 1e-6) * float(v), 1 - 1e-6) for v in d)
    return Assignment(x, y)


def small_suite(profile, n=100):
    """The small-instance suite: K <= 3, total subtasks <= 6."""
    from condoffload.harness import gen_scenario

    out = []
    for s in range(n):
        rng = np.random.default_rng(s)
        K = int(rng.integers(1, 4))
        out.append(gen_scenario(profile, K, (1, min(5, 6 // K)), s))
    return out
