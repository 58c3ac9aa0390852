"""Decomposed Bayesian regression targets.

The target density is ``pi(x) ~ exp(-sum_i f_i(x))`` where agent ``i`` holds
a private shard and

* linear:   ``f_i(x) = s * sum_j (y_j - x.X_j)^2 + ||x||^2 / (2 lam N)``
* logistic: ``f_i(x) = sum_j [log(1 + e^{x.X_j}) - y_j x.X_j] + ||x||^2 / (2 lam N)``

For linear regression the likelihood scale ``s`` depends on the
convention: ``"posterior"`` uses ``s = 1 / (2 xi^2)`` so that ``exp(-f)`` is
exactly the Gaussian posterior with noise std ``xi``; ``"unscaled"`` uses
``s = 1`` (a plain squared loss, which equals the posterior convention with
``xi = 1/sqrt(2)``).

Array kernels accept positions with arbitrary leading batch axes followed by
``(N, d)``. Reductions are taken along a contiguous trailing axis, so each
replica's arithmetic does not depend on how many replicas are batched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import NotPSDError, ShapeError, ValidationError
from .numerics import RngStream, uniform_to_index

FAMILIES = ("linear", "logistic")
CONVENTIONS = ("posterior", "unscaled")


@dataclass(frozen=True)
class Shard:
    """One agent's private data: design rows ``X`` (n_i x d) and responses ``y``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if X.ndim != 2:
            raise ShapeError(f"design matrix must be 2-d, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"{X.shape[0]} rows but {y.shape[0]} responses")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @classmethod
    def empty(cls, d: int) -> "Shard":
        return cls(np.zeros((0, d)), np.zeros(0))


@dataclass(frozen=True)
class ModelConstants:
    mu: float
    L: float
    sigma2: float
    x_star: np.ndarray


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise NotPSDError("posterior covariance is not positive definite") from exc

    @property
    def d(self) -> int:
        return self.mean.shape[0]


def _dot_last(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum(a * b, axis=-1)`` with a contiguous reduction axis."""
    return np.ascontiguousarray(a * b).sum(axis=-1)


class DecomposedTarget:
    """All agents' component functions, with batched gradient kernels.

    Parameters
    ----------
    family : "linear" or "logistic"
    shards : one :class:`Shard` per agent (may be empty for prior-only agents)
    lam : prior variance; ``numpy.inf`` turns the regularizer off
    noise_std : likelihood noise std ``xi`` (linear, posterior convention)
    convention : "posterior" or "unscaled" (linear only)
    """

    def __init__(
        self,
        family: str,
        shards: Sequence[Shard],
        lam: float,
        noise_std: float = 1.0,
        convention: str = "posterior",
    ):
        if family not in FAMILIES:
            raise ValidationError(f"unknown model family {family!r}")
        if convention not in CONVENTIONS:
            raise ValidationError(f"unknown likelihood convention {convention!r}")
        if not shards:
            raise ValidationError("need at least one shard")
        if not lam > 0:
            raise ValidationError("prior variance lam must be positive")
        if family == "linear" and not noise_std > 0:
            raise ValidationError("noise_std must be positive")
        dims = {s.d for s in shards}
        if len(dims) != 1:
            raise ShapeError(f"shards disagree on dimension: {sorted(dims)}")
        if family == "logistic":
            for s in shards:
                if s.n and not np.all((s.y == 0) | (s.y == 1)):
                    raise ValidationError("logistic labels must be 0 or 1")
        self.family = family
        self.shards = list(shards)
        self.lam = float(lam)
        self.noise_std = float(noise_std)
        self.convention = convention
        self.n_agents = len(self.shards)
        self.d = dims.pop()

        counts = np.array([s.n for s in self.shards], dtype=np.int64)
        n_max = max(int(counts.max()), 1)
        X_pad = np.zeros((self.n_agents, n_max, self.d))
        y_pad = np.zeros((self.n_agents, n_max))
        for i, s in enumerate(self.shards):
            X_pad[i, : s.n] = s.X
            y_pad[i, : s.n] = s.y
        self.counts = counts
        self._X = X_pad
        self._Xt = np.ascontiguousarray(np.swapaxes(X_pad, 1, 2))
        self._y = y_pad
        self._mask = np.arange(n_max)[None, :] < counts[:, None]
        # per-agent sufficient statistics for the exact linear gradient
        self._gram = np.stack([s.X.T @ s.X for s in self.shards])
        self._xty = np.stack([s.X.T @ s.y for s in self.shards])
        self._agent_idx = np.arange(self.n_agents)[:, None]

    # -- scalars --------------------------------------------------------

    @property
    def reg(self) -> float:
        """Per-agent regularizer curvature ``1 / (lam N)``."""
        return 0.0 if np.isinf(self.lam) else 1.0 / (self.lam * self.n_agents)

    @property
    def loss_scale(self) -> float:
        if self.family != "linear":
            return 1.0
        if self.convention == "posterior":
            return 1.0 / (2.0 * self.noise_std**2)
        return 1.0

    @property
    def effective_noise_std(self) -> float:
        """Noise std for which ``exp(-f)`` is the Gaussian posterior."""
        return float(np.sqrt(1.0 / (2.0 * self.loss_scale)))

    def pooled(self) -> "DecomposedTarget":
        """Single-agent target holding all data; same density ``exp(-f)``."""
        X = np.concatenate([s.X for s in self.shards])
        y = np.concatenate([s.y for s in self.shards])
        # one agent carrying the whole prior: lam_pooled * 1 = lam
        return DecomposedTarget(self.family, [Shard(X, y)], self.lam, self.noise_std, self.convention)

    def component(self, i: int) -> "ComponentModel":
        return ComponentModel(self, i)

    # -- kernels --------------------------------------------------------

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[-2:] != (self.n_agents, self.d):
            raise ShapeError(f"expected trailing shape {(self.n_agents, self.d)}, got {x.shape}")
        return x

    def _residual(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.family == "linear":
            return 2.0 * self.loss_scale * (z - y)
        return expit(z) - y

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        """Exact ``grad f_i(x_i)`` for every agent; ``x`` has shape (..., N, d)."""
        x = self._check(x)
        if self.family == "linear":
            hx = _dot_last(self._gram, x[..., :, None, :])
            return 2.0 * self.loss_scale * (hx - self._xty) + self.reg * x
        z = _dot_last(self._X, x[..., :, None, :])
        r = np.where(self._mask, self._residual(z, self._y), 0.0)
        g = _dot_last(self._Xt, r[..., :, None, :])
        return g + self.reg * x

    def minibatch_grad(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Minibatch estimate from uniforms ``u`` of shape (..., N, b).

        Indices ``j = floor(u * n_i)`` are drawn with replacement; the
        estimate is ``(n_i / b) * sum_k grad l_{j_k}(x_i) + x_i / (lam N)``.
        """
        x = self._check(x)
        u = np.asarray(u, dtype=np.float64)
        b = u.shape[-1]
        if b < 1:
            raise ValidationError("batch size must be at least 1")
        if np.any(self.counts == 0):
            raise ValidationError("minibatch gradients need non-empty shards")
        idx = uniform_to_index(u, self.counts[:, None])
        Xb = self._X[self._agent_idx, idx]  # (..., N, b, d)
        yb = self._y[self._agent_idx, idx]
        z = _dot_last(Xb, x[..., :, None, :])
        r = self._residual(z, yb)
        g = _dot_last(np.swapaxes(Xb, -1, -2), r[..., :, None, :])
        scale = (self.counts / b)[:, None]
        return scale * g + self.reg * x

    # -- scalar-valued helpers on a single d-vector -----------------------

    def agent_value(self, i: int, x: np.ndarray) -> float:
        s = self.shards[i]
        x = np.asarray(x, dtype=np.float64)
        z = s.X @ x
        if self.family == "linear":
            loss = self.loss_scale * float(np.sum((s.y - z) ** 2))
        else:
            loss = float(np.sum(np.logaddexp(0.0, z) - s.y * z))
        return loss + 0.5 * self.reg * float(x @ x)

    def agent_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        s = self.shards[i]
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ShapeError(f"expected a {self.d}-vector, got shape {x.shape}")
        r = self._residual(s.X @ x, s.y)
        return s.X.T @ r + self.reg * x

    def agent_hessian(self, i: int, x: np.ndarray) -> np.ndarray:
        s = self.shards[i]
        if self.family == "linear":
            h = 2.0 * self.loss_scale * (s.X.T @ s.X)
        else:
            p = expit(s.X @ x)
            h = (s.X * (p * (1 - p))[:, None]).T @ s.X
        return h + self.reg * np.eye(self.d)

    def value(self, x: np.ndarray) -> float:
        """``f(x) = sum_i f_i(x)`` at a single d-vector."""
        return float(sum(self.agent_value(i, x) for i in range(self.n_agents)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        """``grad f(x) = sum_i grad f_i(x)`` at a single d-vector."""
        return np.sum([self.agent_grad(i, x) for i in range(self.n_agents)], axis=0)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return np.sum([self.agent_hessian(i, x) for i in range(self.n_agents)], axis=0)

    def per_sample_grads(self, i: int, x: np.ndarray) -> np.ndarray:
        """Gradients of the individual loss terms of agent ``i`` (no regularizer)."""
        s = self.shards[i]
        r = self._residual(s.X @ x, s.y)
        return s.X * r[:, None]

    # -- minimizers -----------------------------------------------------

    def _newton(self, value, grad, hess, x0: np.ndarray, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
        x = x0.copy()
        for _ in range(max_iter):
            g = grad(x)
            if np.linalg.norm(g) <= tol:
                return x
            step = np.linalg.solve(hess(x), g)
            t, fx = 1.0, value(x)
            # backtracking keeps the damped Newton step monotone
            while value(x - t * step) > fx - 0.25 * t * float(g @ step) and t > 1e-12:
                t *= 0.5
            x_new = x - t * step
            if np.array_equal(x_new, x):
                return x
            x = x_new
        return x

    @cached_property
    def x_star(self) -> np.ndarray:
        """Minimizer of ``f`` (closed form for linear, damped Newton for logistic)."""
        if self.family == "linear":
            return self.posterior().mean
        return self._newton(self.value, self.grad, self.hessian, np.zeros(self.d))

    def agent_minimum(self, i: int) -> tuple[np.ndarray, float]:
        """``(argmin f_i, min f_i)``."""
        if self.family == "linear" and (self.reg > 0 or self.shards[i].n >= self.d):
            s = self.shards[i]
            h = self.agent_hessian(i, np.zeros(self.d))
            xm = np.linalg.solve(h, 2.0 * self.loss_scale * (s.X.T @ s.y))
        else:
            xm = self._newton(
                lambda x: self.agent_value(i, x),
                lambda x: self.agent_grad(i, x),
                lambda x: self.agent_hessian(i, x),
                np.zeros(self.d),
            )
        return xm, self.agent_value(i, xm)

    def posterior(self) -> GaussianPosterior:
        """Exact Gaussian posterior ``exp(-f)`` (linear family only)."""
        if self.family != "linear":
            raise ValidationError("closed-form posterior exists only for linear regression")
        return linreg_posterior(self.shards, self.lam, self.effective_noise_std)

    # -- constants ------------------------------------------------------

    def lipschitz(self) -> float:
        norms = max(float(np.sum(s.X**2)) for s in self.shards)
        curvature = 2.0 * self.loss_scale if self.family == "linear" else 0.25
        return curvature * norms + self.reg

    def strong_convexity(self, tight: bool = False) -> float:
        if not tight or self.family == "logistic":
            return self.reg
        low = min(float(np.linalg.eigvalsh(2.0 * self.loss_scale * s.X.T @ s.X)[0]) if s.n else 0.0 for s in self.shards)
        return max(low, 0.0) + self.reg

    def gradient_noise_moment(self, i: int, x: np.ndarray, batch: int) -> float:
        """Exact ``E||grad~ f_i(x) - grad f_i(x)||^2`` for with-replacement minibatches.

        The minibatch estimate is ``n_i`` times a mean of ``b`` i.i.d. draws
        from the per-sample gradients, so its noise second moment is
        ``n_i^2 / b`` times their (population) total variance.
        """
        g = self.per_sample_grads(i, x)
        n = g.shape[0]
        dev = g - g.mean(axis=0)
        return float(n * n / batch * np.sum(dev * dev) / n)

    def probe_points(self) -> list[np.ndarray]:
        xs = self.x_star
        pts = [xs, np.zeros(self.d)]
        for k in range(self.d):
            e = np.zeros(self.d)
            e[k] = 1.0
            pts += [xs + e, xs - e]
        return pts

    def sigma2(self, batch: int | None, method: str = "exact", stream: RngStream | None = None, draws: int = 10_000) -> float:
        """Uniform gradient-noise bound: max over probe points and agents.

        ``method="exact"`` uses :meth:`gradient_noise_moment`;
        ``method="monte_carlo"`` averages ``draws`` minibatch estimates.
        """
        if batch is None:
            return 0.0
        worst = 0.0
        for x in self.probe_points():
            if method == "exact":
                vals = [self.gradient_noise_moment(i, x, batch) for i in range(self.n_agents)]
            elif method == "monte_carlo":
                if stream is None:
                    raise ValidationError("monte_carlo sigma2 needs an RngStream")
                xb = np.broadcast_to(x, (draws, self.n_agents, self.d))
                est = self.minibatch_grad(xb, stream.uniform((draws, self.n_agents, batch)))
                full = self.full_grad(xb[:1])[0]
                vals = np.mean(np.sum((est - full) ** 2, axis=-1), axis=0)
            else:
                raise ValidationError(f"unknown sigma2 method {method!r}")
            worst = max(worst, float(np.max(vals)))
        return worst

    def constants(self, batch: int | None = None, tight_mu: bool = False) -> ModelConstants:
        return ModelConstants(
            mu=self.strong_convexity(tight_mu),
            L=self.lipschitz(),
            sigma2=self.sigma2(batch),
            x_star=self.x_star,
        )


@dataclass(frozen=True)
class ComponentModel:
    """View of one agent's component function ``f_i`` inside a target."""

    target: DecomposedTarget = field(repr=False)
    agent_id: int

    @property
    def shard(self) -> Shard:
        return self.target.shards[self.agent_id]

    @property
    def d(self) -> int:
        return self.target.d

    def value(self, x) -> float:
        return self.target.agent_value(self.agent_id, x)

    def grad(self, x) -> np.ndarray:
        return self.target.agent_grad(self.agent_id, x)


def linreg_component_grad(model: ComponentModel, x) -> np.ndarray:
    """Exact gradient of a linear-regression component."""
    if model.target.family != "linear":
        raise ValidationError("linreg_component_grad needs a linear model")
    return model.grad(x)


def logreg_component_grad(model: ComponentModel, x) -> np.ndarray:
    """Exact gradient of a logistic-regression component."""
    if model.target.family != "logistic":
        raise ValidationError("logreg_component_grad needs a logistic model")
    return model.grad(x)


def stochastic_grad(model: ComponentModel, x, batch: int | str, stream: RngStream | None = None) -> np.ndarray:
    """Unbiased minibatch gradient of one component; ``batch="full"`` is exact.

    Consumes ``batch`` uniforms from ``stream``; the full mode draws nothing.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d,):
        raise ShapeError(f"expected a {model.d}-vector, got shape {x.shape}")
    if batch == "full" or batch is None:
        return model.grad(x)
    if int(batch) < 1:
        raise ValidationError("batch size must be at least 1")
    if model.shard.n == 0:
        raise ValidationError("minibatch gradients need a non-empty shard")
    t = model.target
    s = model.shard
    b = int(batch)
    idx = uniform_to_index(stream.uniform(b), s.n)
    r = t._residual(s.X[idx] @ x, s.y[idx])
    return (s.n / b) * (s.X[idx].T @ r) + t.reg * x


def linreg_posterior(shards: Sequence[Shard], lam: float, xi: float) -> GaussianPosterior:
    """``V = (X'X / xi^2 + I / lam)^{-1}``, ``m = V X'y / xi^2`` over the pooled data."""
    if not lam > 0 or not xi > 0:
        raise ValidationError("lam and xi must be positive")
    d = shards[0].d
    xtx = np.zeros((d, d))
    xty = np.zeros(d)
    for s in shards:
        xtx += s.X.T @ s.X
        xty += s.X.T @ s.y
    prec = xtx / xi**2 + (0.0 if np.isinf(lam) else 1.0 / lam) * np.eye(d)
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = np.linalg.solve(prec, xty / xi**2)
    return GaussianPosterior(mean=mean, cov=cov)


def model_constants(
    family: str,
    shards: Sequence[Shard],
    lam: float,
    n_agents: int | None = None,
    *,
    noise_std: float = 1.0,
    convention: str = "posterior",
    batch: int | None = None,
    tight_mu: bool = False,
) -> ModelConstants:
    """Strong convexity, smoothness, gradient-noise bound and minimizer of ``f``."""
    if n_agents is not None and n_agents != len(shards):
        raise ValidationError(f"n_agents={n_agents} but {len(shards)} shards given")
    target = DecomposedTarget(family, shards, lam, noise_std, convention)
    return target.constants(batch=batch, tight_mu=tight_mu)


def synth_linreg(stream: RngStream, n: int, d: int, xi: float, lam: float, true_x=None):
    """Draw ``X_j ~ N(0, I)``, ``y_j = x.X_j + N(0, xi^2)``; ``x ~ N(0, lam I)`` unless given.

    Returns ``(X, y, true_x)``.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    if true_x is None:
        true_x = np.sqrt(lam) * stream.normal(d)
    true_x = np.asarray(true_x, dtype=np.float64)
    X = stream.normal((n, d))
    y = X @ true_x + xi * stream.normal(n)
    return X, y, true_x


def synth_logreg(stream: RngStream, n: int, d: int, feature_scale: float = 20.0, lam: float = 10.0, true_x=None):
    """Draw ``X_j ~ N(0, feature_scale I)`` and labels ``y_j = 1{p_j <= sigmoid(x.X_j)}``.

    ``x ~ N(0, lam I)`` unless given. Returns ``(X, y, true_x)``.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    if true_x is None:
        true_x = np.sqrt(lam) * stream.normal(d)
    true_x = np.asarray(true_x, dtype=np.float64)
    X = np.sqrt(feature_scale) * stream.normal((n, d))
    p = stream.uniform(n)
    y = (p <= expit(X @ true_x)).astype(np.float64)
    return X, y, true_x


def shard_data(X: np.ndarray, y: np.ndarray, index_lists: Sequence[Sequence[int]]) -> list[Shard]:
    return [Shard(X[np.asarray(idx, dtype=np.int64)], y[np.asarray(idx, dtype=np.int64)]) for idx in index_lists]
