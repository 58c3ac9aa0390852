import numpy as np
import pytest

from gossip_langevin.datasets import route_synthetic
from gossip_langevin.models import DecomposedTarget, synth_linreg, synth_logreg
from gossip_langevin.network import build_mixing
from gossip_langevin.numerics import RngStream
from gossip_langevin.samplers import NoiseSource, SamplerConfig, SamplerState, desghmc_step, heavyball_oracle_step


CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; returns ``ok`` so tests can ``assert criterion(...)``."""
    lines = request.config.stash.setdefault(CRITERIA, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)


def linear_target(n=200, d=2, n_agents=5, lam=10.0, xi=1.0, seed=0, convention="posterior"):
    s = RngStream(seed, 99)
    X, y, _ = synth_linreg(s, n, d, xi, lam)
    return DecomposedTarget("linear", route_synthetic(X, y, n_agents, s), lam, xi, convention)


def logistic_target(n=300, d=3, n_agents=4, lam=10.0, seed=0, feature_scale=1.0):
    s = RngStream(seed, 77)
    X, y, _ = synth_logreg(s, n, d, feature_scale, lam)
    return DecomposedTarget("logistic", route_synthetic(X, y, n_agents, s), lam)


@pytest.fixture
def lin_target():
    return linear_target()


@pytest.fixture
def log_target():
    return logistic_target()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(rng, d, floor=0.1):
    a = rng.normal(size=(d, d))
    return a @ a.T + floor * np.eye(d)


def write_breast_cancer_like(path, n=569, seed=0):
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        for i in range(n):
            feats = ",".join(f"{v:.4f}" for v in rng.gamma(2.0, 10.0, size=30))
            fh.write(f"{842302 + i},{'M' if rng.random() < 0.37 else 'B'},{feats}\n")


def write_telescope_like(path, n=19020, seed=0):
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        for _ in range(n):
            feats = ",".join(f"{v:.5f}" for v in rng.normal(50, 30, size=10))
            fh.write(f"{feats},{'g' if rng.random() < 0.65 else 'h'}\n")


def heavyball_trajectories(seed, n, d, kind, eta, gamma, batch, steps=200):
    family = logistic_target if seed % 2 else linear_target
    t = family(n=40 * n, d=d, n_agents=n, seed=seed)
    m = build_mixing(kind, n)
    cfg = SamplerConfig("de-sghmc", eta, steps, gamma=gamma, batch=batch)
    noise = NoiseSource(seed, [0], n, d, None if batch == "full" else batch)
    x0 = np.random.default_rng(seed).normal(size=(1, n, d))
    state = SamplerState(0, x0, np.zeros_like(x0), noise=noise)
    xs = [state.x]
    oracle = [state.x]
    state = desghmc_step(state, m, t, cfg)
    xs.append(state.x)
    oracle.append(state.x)
    for _ in range(steps - 1):
        prev = state
        state = desghmc_step(state, m, t, cfg)
        xi = state.last_grad - t.full_grad(prev.x)
        oracle.append(heavyball_oracle_step(oracle[-1], oracle[-2], m, t, eta, gamma, xi, state.last_noise))
        xs.append(state.x)
    return np.array(xs), np.array(oracle)
