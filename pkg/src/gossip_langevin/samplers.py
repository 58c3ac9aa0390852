"""DE-SGLD, DE-SGHMC and centralized Langevin chains.

States are batched over independent replicas: positions have shape
``(R, N, d)`` (replicas, agents, dimension). Every kernel is elementwise
or reduces along a per-replica axis, so a replica's trajectory is the
same whether it runs alone or inside a batch. That is what makes
``run(..., jobs=k)`` reproduce ``jobs=1`` byte for byte.

Each (replica, agent) pair owns two random streams, one for injected
Gaussian noise and one for minibatch indices, plus a third used once for
random initialization::

    stream_id = replica << 40 | agent << 8 | kind
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, IntegrityError, NumericError, ShapeError, ValidationError
from .models import DecomposedTarget
from .network import MixingMatrix, apply_mixing
from .numerics import RngStream
from .theory import sghmc_parameter_check, sgld_stepsize_ceiling

log = logging.getLogger(__name__)

ALGORITHMS = ("de-sgld", "de-sghmc", "ula")
KIND_INJECTED, KIND_GRADIENT, KIND_INIT = 0, 1, 2
MAX_REPLICA = 2**24
MAX_AGENT = 2**32
# upper bound on pre-drawn noise values held per chunk
BLOCK_BUDGET = 1 << 22


def stream_id(replica: int, agent: int, kind: int) -> int:
    if not (0 <= replica < MAX_REPLICA and 0 <= agent < MAX_AGENT and 0 <= kind < 256):
        raise ValidationError(f"stream key out of range: replica={replica}, agent={agent}, kind={kind}")
    return (replica << 40) | (agent << 8) | kind


@dataclass(frozen=True)
class SamplerConfig:
    """Algorithm and schedule for one experiment.

    ``batch`` is a positive integer or ``"full"``. ``init_scale > 0`` draws
    ``x_i^(0) ~ N(x0_i, init_scale^2 I)``; momenta always start at zero.
    ``averaged_noise`` selects the ULA variant driven by the mean of the
    ``N`` agents' noises with gradient step ``eta / N``.
    ``inject_noise=False`` zeroes the Gaussian term (a test hook).
    """

    algorithm: str
    eta: float
    n_iter: int
    gamma: float | None = None
    batch: int | str = "full"
    stride: int = 1
    init_scale: float = 0.0
    strict: bool = False
    averaged_noise: bool = False
    record_momenta: bool = False
    inject_noise: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValidationError("step size eta must be a positive finite number")
        if int(self.n_iter) != self.n_iter or self.n_iter < 0:
            raise ValidationError("iteration count must be a non-negative integer")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValidationError("record stride must be a positive integer")
        if self.batch != "full" and not (isinstance(self.batch, (int, np.integer)) and not isinstance(self.batch, bool) and self.batch >= 1):
            raise ValidationError('batch must be a positive integer or "full"')
        if self.init_scale < 0:
            raise ValidationError("init_scale must be non-negative")
        if self.algorithm == "de-sghmc":
            if self.gamma is None:
                raise ValidationError("de-sghmc needs a friction gamma")
            if not self.gamma > 0:
                raise ValidationError("friction gamma must be positive")

    @property
    def full_batch(self) -> bool:
        return self.batch == "full"

    @property
    def beta(self) -> float | None:
        return None if self.gamma is None else 1.0 - self.gamma * self.eta

    @property
    def checkpoint_every(self) -> int:
        return 10 * self.stride

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplerConfig":
        return cls(**doc)


def validate_parameters(cfg: SamplerConfig, mixing: MixingMatrix | None, target: DecomposedTarget, constants=None) -> list[str]:
    """Check the step-size and momentum ranges covered by the convergence bounds.

    Strict mode raises :class:`ConfigurationError`; otherwise the problems
    are logged as warnings and returned.
    """
    problems = []
    if cfg.algorithm == "de-sghmc" and not 0.0 <= cfg.beta < 1.0:
        problems.append(f"beta = 1 - gamma*eta = {cfg.beta} is outside [0, 1)")
    if cfg.strict or constants is not None:
        if cfg.algorithm == "ula":
            pooled = target.pooled()
            mu, L, lam_n = pooled.strong_convexity(), pooled.lipschitz(), 1.0
        else:
            c = constants or target.constants()
            mu, L = c.mu, c.L
            lam_n = mixing.lambda_n if mixing is not None else 1.0
        if mu <= 0:
            problems.append("target is not strongly convex (mu = 0), no step ceiling applies")
        elif cfg.algorithm == "de-sghmc":
            chk = sghmc_parameter_check(mu, L, lam_n, cfg.eta, cfg.gamma)
            if not chk.valid:
                problems.append(
                    f"DE-SGHMC conditions fail: eta^2={cfg.eta**2:.6g} vs limit {chk.step_limit:.6g}, "
                    f"beta={chk.beta:.6g} vs betaBar={chk.beta_bar:.6g}"
                )
        else:
            ceiling = sgld_stepsize_ceiling(mu, L, lam_n)
            if not cfg.eta < ceiling:
                problems.append(f"eta = {cfg.eta} is not below the step ceiling {ceiling:.6g}")
    if problems and cfg.strict:
        raise ConfigurationError("; ".join(problems))
    for p in problems:
        log.warning("permissive mode: %s", p)
    return problems


class NoiseSource:
    """Per-(replica, agent) random streams with blockwise pre-drawing.

    ``take()`` returns the next step's injected normals ``w`` with shape
    (R, A, d) and minibatch uniforms ``u`` with shape (R, A, b) (None in
    full-batch mode). Pre-drawing a block of steps yields exactly the same
    numbers as drawing step by step.
    """

    def __init__(
        self,
        seed: int,
        replicas: Sequence[int],
        n_agents: int,
        d: int,
        batch: int | None,
        inject: bool = True,
        grad_agents: int | None = None,
    ):
        self.seed = int(seed)
        self.replicas = [int(r) for r in replicas]
        self.n_agents = n_agents
        self.d = d
        self.batch = batch
        self.inject = inject
        self._w_streams = [[RngStream(seed, stream_id(r, i, KIND_INJECTED)) for i in range(n_agents)] for r in self.replicas]
        self._u_streams = (
            [[RngStream(seed, stream_id(r, i, KIND_GRADIENT)) for i in range(grad_agents or n_agents)] for r in self.replicas]
            if batch is not None
            else None
        )
        self._w = None
        self._u = None
        self._pos = 0
        self._len = 0

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.replicas), self.n_agents

    def refill(self, steps: int) -> None:
        if self._pos < self._len:
            raise IntegrityError("refill requested before the current block was consumed")
        R, A = self.shape
        if self.inject:
            w = np.empty((steps, R, A, self.d))
            for r, row in enumerate(self._w_streams):
                for i, s in enumerate(row):
                    w[:, r, i, :] = s.normal((steps, self.d))
            self._w = w
        else:
            self._w = None
        if self._u_streams is not None:
            u = np.empty((steps, R, len(self._u_streams[0]), self.batch))
            for r, row in enumerate(self._u_streams):
                for i, s in enumerate(row):
                    u[:, r, i, :] = s.uniform((steps, self.batch))
            self._u = u
        self._pos, self._len = 0, steps

    def take(self) -> tuple[np.ndarray, np.ndarray | None]:
        if self._pos >= self._len:
            self.refill(1)
        R, A = self.shape
        w = self._w[self._pos] if self._w is not None else np.zeros((R, A, self.d))
        u = self._u[self._pos] if self._u is not None else None
        self._pos += 1
        return w, u

    def states(self) -> dict:
        if self._pos < self._len:
            raise IntegrityError("stream states are only consistent at block boundaries")
        doc = {"w": [[s.state for s in row] for row in self._w_streams]}
        if self._u_streams is not None:
            doc["u"] = [[s.state for s in row] for row in self._u_streams]
        return doc

    def set_states(self, doc: dict) -> None:
        for row, srow in zip(self._w_streams, doc["w"]):
            for s, st in zip(row, srow):
                s.state = st
        if self._u_streams is not None:
            for row, srow in zip(self._u_streams, doc["u"]):
                for s, st in zip(row, srow):
                    s.state = st
        self._w = self._u = None
        self._pos = self._len = 0


@dataclass
class SamplerState:
    """Iteration counter, positions (R, N, d), optional momenta and noise source.

    ``last_grad`` and ``last_noise`` hold the stochastic gradient and the
    injected normals used by the most recent step.
    """

    k: int
    x: np.ndarray
    v: np.ndarray | None = None
    noise: NoiseSource | None = None
    last_grad: np.ndarray | None = None
    last_noise: np.ndarray | None = None

    @property
    def average(self) -> np.ndarray:
        return agent_average(self.x)


def agent_average(x: np.ndarray) -> np.ndarray:
    """Mean over the agent axis (second to last) with a fixed summation order."""
    n = x.shape[-2]
    total = np.zeros(x.shape[:-2] + x.shape[-1:])
    for i in range(n):
        total += x[..., i, :]
    return total / n


def consensus_deviation(x: np.ndarray) -> np.ndarray:
    """``sum_i ||x_i - xbar||^2`` over the agent axis."""
    dev = x - agent_average(x)[..., None, :]
    sq = (dev * dev).sum(axis=-1)
    total = np.zeros(sq.shape[:-1])
    for i in range(sq.shape[-1]):
        total += sq[..., i]
    return total


def _gradient(target: DecomposedTarget, x: np.ndarray, u: np.ndarray | None) -> np.ndarray:
    return target.full_grad(x) if u is None else target.minibatch_grad(x, u)


def _mixing_array(mixing) -> np.ndarray:
    return mixing.w if isinstance(mixing, MixingMatrix) else np.asarray(mixing, dtype=np.float64)


def _draws(state: SamplerState, draws):
    if draws is not None:
        return draws
    if state.noise is None:
        raise ValidationError("state has no noise source; pass draws explicitly")
    return state.noise.take()


def desgld_step(state: SamplerState, mixing, target: DecomposedTarget, cfg: SamplerConfig, draws=None) -> SamplerState:
    """``x_i <- sum_j W_ij x_j - eta * grad~ f_i(x_i) + sqrt(2 eta) * w_i``.

    ``draws`` is an optional ``(w, u)`` pair overriding the state's streams.
    """
    w, u = _draws(state, draws)
    if not cfg.inject_noise:
        w = np.zeros_like(state.x)
    g = _gradient(target, state.x, u)
    x_new = apply_mixing(_mixing_array(mixing), state.x) - cfg.eta * g + math.sqrt(2.0 * cfg.eta) * w
    return replace(state, k=state.k + 1, x=x_new, last_grad=g, last_noise=w)


def desghmc_step(state: SamplerState, mixing, target: DecomposedTarget, cfg: SamplerConfig, draws=None) -> SamplerState:
    """Momentum update with friction ``gamma``, then gossip on positions.

    ``v_i <- v_i - eta (gamma v_i + grad~ f_i(x_i)) + sqrt(2 gamma eta) w_i``
    ``x_i <- sum_j W_ij x_j + eta v_i``
    """
    w, u = _draws(state, draws)
    if not cfg.inject_noise:
        w = np.zeros_like(state.x)
    v = state.v if state.v is not None else np.zeros_like(state.x)
    g = _gradient(target, state.x, u)
    v_new = v - cfg.eta * (cfg.gamma * v + g) + math.sqrt(2.0 * cfg.gamma * cfg.eta) * w
    x_new = apply_mixing(_mixing_array(mixing), state.x) + cfg.eta * v_new
    return replace(state, k=state.k + 1, x=x_new, v=v_new, last_grad=g, last_noise=w)


def heavyball_oracle_step(x_k, x_km1, mixing, target: DecomposedTarget, eta: float, gamma: float, grad_noise, w) -> np.ndarray:
    """Position recursion of DE-SGHMC written as a perturbed heavy-ball method.

    ``x+ = W x_k - eta^2 grad F(x_k) + beta (x_k - W x_{k-1}) + Delta`` with
    ``beta = 1 - gamma eta`` and ``Delta = -eta^2 xi + eta sqrt(2 gamma eta) w``,
    where ``xi`` is the gradient noise (stochastic minus exact gradient).
    Valid from the second iterate on.
    """
    beta = 1.0 - gamma * eta
    if not 0.0 <= beta < 1.0:
        raise ConfigurationError(f"beta = {beta} must lie in [0, 1)")
    W = _mixing_array(mixing)
    x_k = np.asarray(x_k, dtype=np.float64)
    grad = target.full_grad(x_k)
    delta = -(eta**2) * np.asarray(grad_noise) + eta * math.sqrt(2.0 * gamma * eta) * np.asarray(w)
    return apply_mixing(W, x_k) - eta**2 * grad + beta * (x_k - apply_mixing(W, x_km1)) + delta


def ula_step(
    x,
    target: DecomposedTarget,
    eta: float,
    stream: RngStream | None = None,
    *,
    noise=None,
    u=None,
    averaged: bool = False,
    n_agents: int = 1,
) -> np.ndarray:
    """One Euler-Maruyama step on the pooled target.

    Plain:    ``x - eta grad f(x) + sqrt(2 eta) w``
    Averaged: ``x - (eta / N) grad f(x) + sqrt(2 eta) wbar`` where ``wbar`` is
    the mean of ``N`` standard normals (pass them as ``noise`` with an
    agent axis of length ``N``).

    ``x`` is a d-vector or an (R, 1, d) batch. Without ``noise`` the normals
    come from ``stream``.
    """
    if not eta > 0:
        raise ValidationError("step size eta must be positive")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, None, :] if single else x
    if noise is None:
        if stream is None:
            raise ValidationError("ula_step needs a stream or explicit noise")
        shape = (n_agents, target.d) if averaged else (1, target.d)
        noise = stream.normal(shape)
    noise = np.asarray(noise, dtype=np.float64)
    if single:
        noise = noise.reshape(1, -1, target.d)
    g = _gradient(target, xb, u)
    if averaged:
        w = agent_average(noise)[..., None, :]
        out = xb - (eta / n_agents) * g + math.sqrt(2.0 * eta) * w
    else:
        out = xb - eta * g + math.sqrt(2.0 * eta) * noise
    return out[0, 0] if single else out


@dataclass
class TraceSet:
    """Recorded iterates of ``M`` replicas.

    ``x`` has shape (M, records, N, d); ``v`` (optional) likewise.
    """

    ks: np.ndarray
    x: np.ndarray
    v: np.ndarray | None = None
    replicas: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ks = np.asarray(self.ks, dtype=np.int64)
        if self.x.ndim != 4 or self.x.shape[1] != len(self.ks):
            raise ShapeError(f"trace array has shape {self.x.shape} for {len(self.ks)} records")
        if np.any(np.diff(self.ks) <= 0):
            raise IntegrityError("recorded iterations must be strictly increasing")
        if self.replicas is None:
            self.replicas = np.arange(self.x.shape[0])

    @property
    def n_replicas(self) -> int:
        return self.x.shape[0]

    @property
    def n_agents(self) -> int:
        return self.x.shape[2]

    @property
    def d(self) -> int:
        return self.x.shape[3]

    def index_of(self, k: int) -> int:
        hits = np.nonzero(self.ks == k)[0]
        if not len(hits):
            raise KeyError(f"iteration {k} was not recorded")
        return int(hits[0])

    def average(self) -> np.ndarray:
        """Agent averages, shape (M, records, d)."""
        return agent_average(self.x)

    def consensus(self) -> np.ndarray:
        """Consensus error per replica and record, shape (M, records)."""
        return consensus_deviation(self.x)

    def subject(self, which) -> np.ndarray:
        """Samples for ``"average"`` or an agent index: shape (M, records, d)."""
        if which == "average":
            return self.average()
        i = int(which)
        if not 0 <= i < self.n_agents:
            raise ValidationError(f"agent {i} out of range for N={self.n_agents}")
        return self.x[:, :, i, :]

    def replica(self, r: int) -> "TraceSet":
        return TraceSet(self.ks, self.x[r : r + 1], None if self.v is None else self.v[r : r + 1], self.replicas[r : r + 1], self.meta)

    @classmethod
    def concat(cls, parts: Sequence["TraceSet"]) -> "TraceSet":
        ks = parts[0].ks
        for p in parts[1:]:
            if not np.array_equal(p.ks, ks):
                raise IntegrityError("trace chunks disagree on recorded iterations")
        x = np.concatenate([p.x for p in parts])
        v = None if parts[0].v is None else np.concatenate([p.v for p in parts])
        reps = np.concatenate([p.replicas for p in parts])
        return cls(ks, x, v, reps, dict(parts[0].meta))


def _initial_positions(seed: int, replicas: Sequence[int], n: int, d: int, x0, scale: float) -> np.ndarray:
    base = np.zeros((n, d)) if x0 is None else np.asarray(x0, dtype=np.float64)
    if base.shape != (n, d):
        raise ShapeError(f"initial positions must have shape {(n, d)}, got {base.shape}")
    x = np.broadcast_to(base, (len(replicas), n, d)).copy()
    if scale > 0:
        for r_pos, r in enumerate(replicas):
            for i in range(n):
                x[r_pos, i] += scale * RngStream(seed, stream_id(r, i, KIND_INIT)).normal(d)
    return x


def _block_size(cfg: SamplerConfig, rows: int, width: int) -> int:
    """Largest divisor of the checkpoint interval that fits the noise budget."""
    every = cfg.checkpoint_every
    for b in range(every, 0, -1):
        if every % b == 0 and b * rows * width <= BLOCK_BUDGET:
            return b
    return 1


@dataclass
class _Chunk:
    cfg: SamplerConfig
    w: np.ndarray
    target: DecomposedTarget
    replicas: list[int]
    seed: int
    x0: np.ndarray | None
    checkpoint: str | None
    resume: bool


def _save_checkpoint(path: Path, state: SamplerState, rec_idx: int, xs, vs, replicas) -> None:
    tmp = path.with_suffix(".tmp.npz")
    arrays = {"k": np.array(state.k), "x": state.x, "xs": xs[:rec_idx], "replicas": np.asarray(replicas), "rec_idx": np.array(rec_idx)}
    if state.v is not None:
        arrays["v"] = state.v
    if vs is not None:
        arrays["vs"] = vs[:rec_idx]
    rng = json.dumps(state.noise.states(), default=lambda a: a.tolist())
    arrays["rng"] = np.frombuffer(rng.encode(), dtype=np.uint8)
    np.savez(tmp, **arrays)
    tmp.replace(path)


def _load_checkpoint(path: Path, replicas):
    try:
        with np.load(path) as z:
            doc = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise IntegrityError(f"unreadable checkpoint {path}: {exc}") from exc
    if not np.array_equal(doc["replicas"], np.asarray(replicas)):
        raise IntegrityError(f"checkpoint {path} was written for different replicas")
    doc["rng"] = json.loads(doc["rng"].tobytes().decode())
    return doc


def _run_chunk(chunk: _Chunk) -> TraceSet:
    cfg, target = chunk.cfg, chunk.target
    reps = chunk.replicas
    R = len(reps)
    hmc = cfg.algorithm == "de-sghmc"
    ula = cfg.algorithm == "ula"
    batch = None if cfg.full_batch else int(cfg.batch)
    if ula:
        n_noise = target.n_agents if cfg.averaged_noise else 1
        step_target = target.pooled()
        n_state = 1
    else:
        n_noise = n_state = target.n_agents
        step_target = target
    d = target.d
    # the pooled chain draws minibatch indices from agent 0's stream only
    noise = NoiseSource(chunk.seed, reps, n_noise, d, batch, inject=cfg.inject_noise, grad_agents=n_state)
    x0 = chunk.x0
    if ula and x0 is not None:
        x0 = np.asarray(x0, dtype=np.float64).reshape(-1, d)[:1]
    state = SamplerState(
        k=0,
        x=_initial_positions(chunk.seed, reps, n_state, d, x0, cfg.init_scale),
        v=np.zeros((R, n_state, d)) if hmc else None,
        noise=noise,
    )
    ks = np.arange(0, cfg.n_iter + 1, cfg.stride)
    xs = np.empty((len(ks), R, n_state, d))
    keep_v = hmc and cfg.record_momenta
    vs = np.empty((len(ks), R, n_state, d)) if keep_v else None
    xs[0] = state.x
    if keep_v:
        vs[0] = state.v
    rec = 1

    ckpt = Path(chunk.checkpoint) if chunk.checkpoint else None
    if ckpt is not None and chunk.resume and ckpt.exists():
        doc = _load_checkpoint(ckpt, reps)
        rec = int(doc["rec_idx"])
        xs[:rec] = doc["xs"]
        if keep_v:
            vs[:rec] = doc["vs"]
        state = replace(state, k=int(doc["k"]), x=doc["x"], v=doc.get("v", state.v))
        noise.set_states(doc["rng"])

    width = n_noise * (d + (batch or 0))
    block = _block_size(cfg, R, width)
    W = chunk.w
    # divergence is reported below as NumericError, not as float warnings
    with np.errstate(over="ignore", invalid="ignore"):
        while state.k < cfg.n_iter:
            if state.k % block == 0:
                if ckpt is not None and state.k % cfg.checkpoint_every == 0 and state.k > 0:
                    _save_checkpoint(ckpt, state, rec, xs, vs, reps)
                noise.refill(min(block, cfg.n_iter - state.k))
            if ula:
                w, u = noise.take()
                x_new = ula_step(state.x, step_target, cfg.eta, noise=w, u=u, averaged=cfg.averaged_noise, n_agents=n_noise)
                state = replace(state, k=state.k + 1, x=x_new, last_noise=w)
            elif hmc:
                state = desghmc_step(state, W, step_target, cfg)
            else:
                state = desgld_step(state, W, step_target, cfg)
            if state.k % cfg.stride == 0:
                if not np.all(np.isfinite(state.x)):
                    raise NumericError(f"{cfg.algorithm} chain diverged by iteration {state.k} (eta={cfg.eta})")
                xs[rec] = state.x
                if keep_v:
                    vs[rec] = state.v
                rec += 1
    if ckpt is not None:
        _save_checkpoint(ckpt, state, rec, xs, vs, reps)
    x_out = np.ascontiguousarray(np.moveaxis(xs, 1, 0))
    v_out = np.ascontiguousarray(np.moveaxis(vs, 1, 0)) if keep_v else None
    return TraceSet(ks, x_out, v_out, np.asarray(reps))


def _chunks(replicas: int, jobs: int) -> list[list[int]]:
    size = -(-replicas // jobs)
    return [list(range(s, min(s + size, replicas))) for s in range(0, replicas, size)]


def run(
    cfg: SamplerConfig,
    mixing: MixingMatrix | None,
    target: DecomposedTarget,
    replicas: int = 1,
    seed: int = 0,
    jobs: int = 1,
    *,
    x0=None,
    constants=None,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
) -> TraceSet:
    """Run ``replicas`` independent chains and return their recorded traces.

    Replica ``r`` draws only from streams keyed by ``(seed, r, agent, kind)``,
    so splitting replicas across ``jobs`` worker processes leaves every
    trace unchanged. Parameter violations are reported before iteration 0
    (raised in strict mode, logged otherwise).
    """
    if replicas < 1:
        raise ValidationError("need at least one replica")
    if replicas > MAX_REPLICA:
        raise ValidationError(f"at most {MAX_REPLICA} replicas are supported")
    if jobs < 1:
        raise ValidationError("jobs must be at least 1")
    if cfg.algorithm != "ula":
        if mixing is None:
            raise ValidationError(f"{cfg.algorithm} needs a mixing matrix")
        if mixing.n != target.n_agents:
            raise ShapeError(f"mixing matrix is {mixing.n}x{mixing.n} but the target has {target.n_agents} agents")
    if not cfg.full_batch and np.any(target.counts == 0):
        raise ValidationError("minibatch gradients need every agent to hold data")
    problems = validate_parameters(cfg, mixing, target, constants)

    w = mixing.w if mixing is not None else np.ones((1, 1))
    groups = _chunks(replicas, jobs)
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)
    tasks = [
        _Chunk(cfg, w, target, g, int(seed), x0, str(ckdir / f"chunk_{g[0]}_{g[-1]}.npz") if ckdir else None, resume)
        for g in groups
    ]
    if len(tasks) == 1:
        parts = [_run_chunk(tasks[0])]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks)), mp_context=ctx) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    out = TraceSet.concat(parts)
    out.meta = {"config": cfg.to_dict(), "seed": int(seed), "replicas": replicas, "warnings": problems}
    return out
