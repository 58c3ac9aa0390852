"""Closed-form Wasserstein bounds and parameter conditions for the decentralized samplers.

Notation follows the rest of the package: ``mu`` and ``L`` are the strong
convexity and smoothness constants of ``f``, ``sigma2`` bounds the
gradient-noise second moment per agent, ``gamma_bar`` is the mixing
matrix's second largest eigenvalue magnitude and ``lambda_n`` its smallest
eigenvalue. Moments of the initial state refer to the stacked ``N*d``
vector unless the name says "avg".
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DisconnectedGraphError, DomainError, ValidationError

# contraction constant of the centralized Langevin bound we build on
LANGEVIN_CONSTANT = 1.65
C5_INFLATION = 1.5


def sgld_stepsize_ceiling(mu: float, L: float, lambda_n: float) -> float:
    """Largest admissible DE-SGLD step, ``min((1 + lambda_n) / L, 1 / (L + mu))``."""
    if not (mu > 0 and L >= mu):
        raise ValidationError(f"need L >= mu > 0, got mu={mu}, L={L}")
    if not -1.0 < lambda_n <= 1.0:
        raise ValidationError(f"smallest mixing eigenvalue must lie in (-1, 1], got {lambda_n}")
    return min((1.0 + lambda_n) / L, 1.0 / (L + mu))


def geometric_ratio(x: float, y: float, k) -> np.ndarray:
    """``(x^k - y^k) / (x - y)``, equal to ``k * y^(k-1)`` when ``x == y``."""
    k = np.asarray(k, dtype=np.float64)
    if x == y:
        return k * np.power(y, k - 1) if y != 0 else np.where(k == 1, 1.0, 0.0)
    return (np.power(x, k) - np.power(y, k)) / (x - y)


def gibbs_second_moment_bound(d: int, n_agents: int, mu: float) -> float:
    """Upper bound ``2d / (N mu)`` on ``E||X - x*||^2`` under the target."""
    if d < 1 or n_agents < 1:
        raise ValidationError("d and N must be at least 1")
    if not mu > 0:
        raise ValidationError("mu must be positive")
    return 2.0 * d / (n_agents * mu)


@dataclass(frozen=True)
class BoundInputs:
    """Scalars feeding the DE-SGLD bound.

    x0_sq       E||x^(0)||^2 (stacked)
    x0_dev_sq   E||x^(0) - 1 (x) x*||^2 (stacked)
    avg0_dev_sq E||xbar^(0) - x*||^2
    grad_star_sq ||grad F(x*)||^2 = sum_i ||grad f_i(x*)||^2
    gap_sum     sum_i (f_i(0) - min f_i)
    """

    mu: float
    L: float
    sigma2: float
    d: int
    n_agents: int
    gamma_bar: float
    lambda_n: float
    eta: float
    x0_sq: float = 0.0
    x0_dev_sq: float = 0.0
    avg0_dev_sq: float = 0.0
    grad_star_sq: float = 0.0
    gap_sum: float = 0.0

    def with_(self, **kw) -> "BoundInputs":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SghmcBoundInputs(BoundInputs):
    gamma: float = 1.0
    c5: float | None = None
    c5_source: str = "user-supplied"

    @property
    def beta(self) -> float:
        return 1.0 - self.gamma * self.eta


@dataclass
class BoundCurve:
    ks: np.ndarray
    average: np.ndarray
    per_agent: np.ndarray
    terms: dict[str, np.ndarray] = field(default_factory=dict)
    label: str = "certified"

    def __len__(self) -> int:
        return len(self.ks)


def _check_connected(gamma_bar: float) -> None:
    if not 0.0 <= gamma_bar < 1.0:
        raise DisconnectedGraphError(
            f"gammaBar = {gamma_bar}: the network is disconnected, so no consensus bound exists"
        )


def _check_common(inp: BoundInputs) -> None:
    _check_connected(inp.gamma_bar)
    if not (inp.mu > 0 and inp.L >= inp.mu):
        raise ValidationError(f"need L >= mu > 0, got mu={inp.mu}, L={inp.L}")
    if inp.d < 1 or inp.n_agents < 1:
        raise ValidationError("d and N must be at least 1")
    if inp.sigma2 < 0 or inp.x0_sq < 0 or inp.x0_dev_sq < 0 or inp.avg0_dev_sq < 0:
        raise ValidationError("second moments must be non-negative")
    if inp.eta <= 0:
        raise ValidationError("step size must be positive")


def c1_constant(inp: BoundInputs) -> float:
    """``C1 = sqrt(2 L sum_i (f_i(0) - f_i*)) * (1 + 2 (L + mu) / mu)``."""
    if inp.gap_sum < 0:
        raise ValidationError("sum of component gaps must be non-negative")
    base = math.sqrt(2.0 * inp.L * inp.gap_sum)
    return base * (1.0 + 2.0 * (inp.L + inp.mu) / inp.mu)


def big_d_squared(inp: BoundInputs) -> float:
    """Uniform bound on ``E||grad F(x^(k))||^2`` along DE-SGLD iterates."""
    _check_connected(inp.gamma_bar)
    margin = 1.0 + inp.lambda_n - inp.eta * inp.L
    if margin <= 0:
        raise DomainError(f"eta * L = {inp.eta * inp.L} must be below 1 + lambda_n = {1 + inp.lambda_n}")
    L, N, eta = inp.L, inp.n_agents, inp.eta
    c1 = c1_constant(inp)
    return (
        4 * L**2 * inp.x0_dev_sq
        + 8 * L**2 * c1**2 * eta**2 * N / (1 - inp.gamma_bar) ** 2
        + 2 * L**2 * (eta * inp.sigma2 * N + 2 * inp.d * N) / (inp.mu * margin)
        + 4 * inp.grad_star_sq
    )


def consensus_bound(inp: BoundInputs, ks) -> np.ndarray:
    """Bound on ``sum_i E||x_i^(k) - xbar^(k)||^2`` at each ``k``."""
    _check_common(inp)
    ks = np.asarray(ks, dtype=np.float64)
    g = inp.gamma_bar
    eta, N = inp.eta, inp.n_agents
    d2 = big_d_squared(inp)
    steady = (
        4 * d2 * eta**2 / (1 - g) ** 2
        + 4 * inp.sigma2 * N * eta**2 / (1 - g**2)
        + 8 * inp.d * N * eta / (1 - g**2)
    )
    return 4 * np.power(g, 2 * ks) * inp.x0_sq + steady


def _ratio_term(rate: float, gamma_bar: float, ks: np.ndarray) -> np.ndarray:
    """``(gamma_bar^2 * h(rate, gamma_bar^2))^(1/2)``."""
    g2 = gamma_bar**2
    if g2 == 0:
        return np.zeros_like(ks)
    h = geometric_ratio(rate, g2, ks)
    return np.sqrt(np.maximum(g2 * h, 0.0))


def sgld_w2_bound(inp: BoundInputs, ks, strict: bool = True) -> BoundCurve:
    """Bounds on ``W2(law(xbar^(k)), pi)`` and ``(1/N) sum_i W2(law(x_i^(k)), pi)``.

    With ``strict`` the step must lie in ``(0, eta_bar)``.
    """
    _check_common(inp)
    mu, L, eta, N, d = inp.mu, inp.L, inp.eta, inp.n_agents, inp.d
    g = inp.gamma_bar
    ceiling = sgld_stepsize_ceiling(mu, L, inp.lambda_n)
    if strict and not eta < ceiling:
        raise ConfigurationError(f"eta = {eta} is not below the ceiling {ceiling}")
    half = 1.0 - eta * L / 2.0
    if half <= 0:
        raise DomainError("eta * L must be below 2")
    ks = np.asarray(ks, dtype=np.float64)
    sigma = math.sqrt(inp.sigma2)
    d2 = big_d_squared(inp)

    e1_bias = LANGEVIN_CONSTANT * L / mu * math.sqrt(d / N)
    e1_noise = sigma / math.sqrt(mu * half * N)
    e1_consensus = math.sqrt(eta / (mu * half) + (1 + eta * L) ** 2 / (mu**2 * half**2)) * math.sqrt(
        4 * L**2 * d2 * eta / (N * (1 - g) ** 2)
        + 4 * L**2 * inp.sigma2 * eta / (1 - g**2)
        + 8 * L**2 * d / (1 - g**2)
    )
    e1 = e1_bias + e1_noise + e1_consensus
    e2 = e1 + 2 * math.sqrt(2 * d) / math.sqrt(1 - g**2)
    e3 = 2 * math.sqrt(d2) / (math.sqrt(N) * (1 - g)) + 2 * sigma / math.sqrt(1 - g**2)

    rate = 1.0 - eta * mu * half
    x0_norm = math.sqrt(inp.x0_sq)
    transient = np.power(1.0 - mu * eta, ks) * (math.sqrt(inp.avg0_dev_sq) + math.sqrt(2 * d / (mu * N)))
    ratio = _ratio_term(rate, g, ks) * 2 * L / math.sqrt(N) * x0_norm
    consensus0 = 2 * np.power(g, ks) / math.sqrt(N) * x0_norm
    average = transient + ratio + math.sqrt(eta) * e1
    per_agent = transient + consensus0 + ratio + math.sqrt(eta) * e2 + eta * e3
    terms = {
        "transient": transient,
        "ratio": ratio,
        "consensus_transient": consensus0,
        "bias_avg": np.full_like(ks, math.sqrt(eta) * e1),
        "bias_agent": np.full_like(ks, math.sqrt(eta) * e2 + eta * e3),
        "E1": np.full_like(ks, e1),
        "E2": np.full_like(ks, e2),
        "E3": np.full_like(ks, e3),
        "D2": np.full_like(ks, d2),
    }
    return BoundCurve(ks=ks, average=average, per_agent=per_agent, terms=terms)


@dataclass(frozen=True)
class SghmcCheck:
    valid: bool
    beta: float
    beta_bar: float
    c1: float
    step_ok: bool
    momentum_ok: bool
    step_limit: float

    def to_dict(self) -> dict:
        return asdict(self)


def sghmc_c1(mu: float, L: float, lambda_n: float, eta: float, beta: float) -> float:
    a = eta * eta
    return 0.5 * a * mu / ((1 + beta) + (1 - beta) * (a * mu / (1 - lambda_n + a * L)))


def sghmc_parameter_check(mu: float, L: float, lambda_n: float, eta: float, gamma: float) -> SghmcCheck:
    """Evaluate the DE-SGHMC step and momentum conditions at ``beta = 1 - gamma * eta``.

    ``c1`` is evaluated at this candidate ``beta`` (no fixed-point solve).
    """
    if not (eta > 0 and gamma > 0):
        raise ValidationError("eta and gamma must be positive")
    beta = 1.0 - gamma * eta
    if abs(beta) <= 4 * np.finfo(float).eps:
        beta = 0.0  # gamma = 1 / eta up to rounding
    a = eta * eta
    step_limit = (1 + lambda_n) / (2 * (L + mu))
    step_ok = a <= step_limit
    c1 = sghmc_c1(mu, L, lambda_n, eta, beta)
    inner = c1 * mu**3 * (1 + lambda_n) / 64
    beta_bar = min((1 + lambda_n - 4 * a * mu) / 4, eta**3 * math.sqrt(max(inner, 0.0)))
    momentum_ok = 0.0 <= beta <= beta_bar
    return SghmcCheck(
        valid=bool(step_ok and momentum_ok),
        beta=beta,
        beta_bar=beta_bar,
        c1=c1,
        step_ok=bool(step_ok),
        momentum_ok=bool(momentum_ok),
        step_limit=step_limit,
    )


def sghmc_max_step(mu: float, L: float, lambda_n: float) -> float:
    """Largest ``eta`` allowed by the DE-SGHMC step condition."""
    return math.sqrt((1 + lambda_n) / (2 * (L + mu)))


def sghmc_w2_bound(inp: SghmcBoundInputs, ks) -> BoundCurve:
    """DE-SGHMC bounds; ``c5`` must come from :func:`estimate_c5` or the user.

    Curves that rely on an empirical ``c5`` are labelled "diagnostic".
    """
    _check_common(inp)
    if inp.c5 is None:
        raise ValidationError("sghmc_w2_bound needs c5; run estimate_c5 first or supply one")
    if inp.c5 < 0:
        raise ValidationError("c5 must be non-negative")
    check = sghmc_parameter_check(inp.mu, inp.L, inp.lambda_n, inp.eta, inp.gamma)
    if not check.valid:
        raise ConfigurationError(f"DE-SGHMC parameters violate the step/momentum conditions: {check.to_dict()}")
    mu, L, eta, N, d = inp.mu, inp.L, inp.eta, inp.n_agents, inp.d
    g = inp.gamma_bar
    a = eta * eta
    beta = check.beta
    half = 1.0 - a * L / 2.0
    if half <= 0:
        raise DomainError("eta^2 * L must be below 2")
    ks = np.asarray(ks, dtype=np.float64)
    sigma = math.sqrt(inp.sigma2)
    c5 = inp.c5

    lead = math.sqrt(2) * math.sqrt(a / (mu * half) + (1 + a * L) ** 2 / (mu**2 * half**2))
    bracket = math.sqrt(beta**2 * c5 / (a * a * N) + 2 * L**2 * c5 / (N * (1 - g) ** 2)) + math.sqrt(
        (math.sqrt(1 - beta) - 1) ** 2 / (a * a) * d / N
    )
    e4 = lead * bracket + LANGEVIN_CONSTANT * L / mu * math.sqrt(d / N) + sigma / math.sqrt(mu * half * N)
    e5 = e4 + math.sqrt(2 * c5) / (math.sqrt(N) * (1 - g))

    rate = 1.0 - a * mu * half
    x0_norm = math.sqrt(inp.x0_sq)
    transient = np.power(1.0 - mu * a, ks) * (math.sqrt(inp.avg0_dev_sq) + math.sqrt(2 * d / (mu * N)))
    ratio = _ratio_term(rate, g, ks) * 2 * L / math.sqrt(N) * x0_norm
    consensus0 = math.sqrt(2) * np.power(g, ks) / math.sqrt(N) * x0_norm
    average = transient + ratio + eta * e4
    per_agent = transient + consensus0 + ratio + eta * e5
    terms = {
        "transient": transient,
        "ratio": ratio,
        "consensus_transient": consensus0,
        "bias_avg": np.full_like(ks, eta * e4),
        "bias_agent": np.full_like(ks, eta * e5),
        "E4": np.full_like(ks, e4),
        "E5": np.full_like(ks, e5),
        "c5": np.full_like(ks, c5),
    }
    label = "diagnostic" if inp.c5_source == "empirical" else "certified"
    return BoundCurve(ks=ks, average=average, per_agent=per_agent, terms=terms, label=label)


@dataclass(frozen=True)
class C5Estimate:
    value: float
    source: str = "empirical"
    raw_sup: float = 0.0


def estimate_c5(traces, min_replicas: int = 10, min_records: int = 100) -> C5Estimate:
    """Inflated Monte Carlo estimate of ``sup_k max(E||v^(k)||^2, E||x^(k)||^2)``.

    ``traces`` must carry stacked positions ``x`` and momenta ``v`` of shape
    (M, records, N, d); moments are averaged over replicas, then the sup is
    taken over recorded ``k >= 1``.
    """
    x = np.asarray(traces.x)
    v = getattr(traces, "v", None)
    if v is None:
        raise ValidationError("c5 estimation needs recorded momenta")
    v = np.asarray(v)
    ks = np.asarray(traces.ks)
    if x.shape[0] < min_replicas:
        raise ValidationError(f"c5 estimation needs at least {min_replicas} replicas, got {x.shape[0]}")
    if x.shape[1] < min_records:
        raise ValidationError(f"c5 estimation needs at least {min_records} recorded iterations, got {x.shape[1]}")
    keep = ks >= 1
    mx = np.mean(np.sum(x[:, keep] ** 2, axis=(2, 3)), axis=0)
    mv = np.mean(np.sum(v[:, keep] ** 2, axis=(2, 3)), axis=0)
    sup = float(max(mx.max(initial=0.0), mv.max(initial=0.0)))
    return C5Estimate(value=C5_INFLATION * sup, source="empirical", raw_sup=sup)


@dataclass(frozen=True)
class LogSchedule:
    eta: float
    k_min: float
    within_ceiling: bool | None


def log_stepsize_schedule(
    mu: float, K: int, c: float, L: float | None = None, lambda_n: float | None = None
) -> LogSchedule:
    """Step ``c * log(sqrt(K)) / (mu * K)`` for an iteration budget ``K``.

    The budget must reach ``K_min = max(e, a^2 / e)`` with
    ``a = c (L + mu) / (2 mu (1 + lambda_n))``; without ``L`` and
    ``lambda_n`` only ``K >= e`` is enforced and the ceiling check is skipped.
    """
    if not c > 1:
        raise ValidationError("schedule constant c must exceed 1")
    if not mu > 0:
        raise ValidationError("mu must be positive")
    if L is not None and lambda_n is not None:
        a = c * (L + mu) / (2 * mu * (1 + lambda_n))
        k_min = max(math.e, a * a / math.e)
    else:
        k_min = math.e
    if K < k_min:
        raise ValidationError(f"iteration budget K={K} is below the minimum {k_min:.6g}")
    eta = c * math.log(math.sqrt(K)) / (mu * K)
    within = None
    if L is not None and lambda_n is not None:
        within = eta < sgld_stepsize_ceiling(mu, L, lambda_n)
    return LogSchedule(eta=eta, k_min=k_min, within_ceiling=within)


def initial_moments(x0: np.ndarray, x_star: np.ndarray, init_scale: float = 0.0) -> dict:
    """Exact initial moments for ``x_i^(0) = x0_i + init_scale * N(0, I)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    n, d = x0.shape
    s2 = init_scale**2
    avg = x0.mean(axis=0)
    return {
        "x0_sq": float(np.sum(x0**2) + n * d * s2),
        "x0_dev_sq": float(np.sum((x0 - x_star) ** 2) + n * d * s2),
        "avg0_dev_sq": float(np.sum((avg - x_star) ** 2) + d * s2 / n),
    }


def bound_inputs(target, mixing, eta: float, batch=None, x0=None, init_scale: float = 0.0, sigma2=None, constants=None) -> BoundInputs:
    """Assemble exact bound inputs from a target, its mixing matrix and the initialization."""
    b = None if batch in (None, "full") else int(batch)
    const = constants or target.constants(batch=b)
    n, d = target.n_agents, target.d
    if x0 is None:
        x0 = np.zeros((n, d))
    xs = const.x_star
    grad_star_sq = float(sum(np.sum(target.agent_grad(i, xs) ** 2) for i in range(n)))
    zero = np.zeros(d)
    gap_sum = float(sum(target.agent_value(i, zero) - target.agent_minimum(i)[1] for i in range(n)))
    return BoundInputs(
        mu=const.mu,
        L=const.L,
        sigma2=const.sigma2 if sigma2 is None else float(sigma2),
        d=d,
        n_agents=n,
        gamma_bar=mixing.gamma_bar,
        lambda_n=mixing.lambda_n,
        eta=float(eta),
        grad_star_sq=grad_star_sq,
        gap_sum=max(gap_sum, 0.0),
        **initial_moments(x0, xs, init_scale),
    )


def sghmc_bound_inputs(base: BoundInputs, gamma: float, c5: C5Estimate | float | None = None) -> SghmcBoundInputs:
    fields = base.to_dict()
    if isinstance(c5, C5Estimate):
        return SghmcBoundInputs(**fields, gamma=gamma, c5=c5.value, c5_source=c5.source)
    return SghmcBoundInputs(**fields, gamma=gamma, c5=c5, c5_source="user-supplied")
