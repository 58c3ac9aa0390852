"""Gaussian fits across replicas, closed-form W2, consensus and accuracy curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import NotPSDError, ShapeError, ValidationError
from .numerics import PSD_RTOL, spd_sqrt, sym_eigen


class InsufficientSamplesError(ValidationError):
    """Too few replicas to fit a non-degenerate covariance."""


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray
    count: int = 0

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def scaled(self, c: float) -> "GaussianSummary":
        return GaussianSummary(c * self.mean, c * c * self.cov, self.count)


def clamp_psd(cov: np.ndarray) -> np.ndarray:
    """Symmetrize and zero out eigenvalues within the negative tolerance."""
    cov = 0.5 * (cov + cov.T)
    dec = sym_eigen(cov)
    vals = dec.eigenvalues
    norm2 = float(np.max(np.abs(vals))) if vals.size else 0.0
    if vals[-1] < -PSD_RTOL * norm2:
        raise NotPSDError(f"covariance has eigenvalue {vals[-1]:.3e}")
    if vals[-1] >= 0:
        return cov
    q = dec.eigenvectors
    fixed = (q * np.clip(vals, 0.0, None)) @ q.T
    return 0.5 * (fixed + fixed.T)


def fit_gaussian(samples) -> GaussianSummary:
    """Sample mean and unbiased (divisor M - 1) covariance of M d-vectors."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"samples must be an (M, d) array, got shape {x.shape}")
    m, d = x.shape
    if m <= d:
        raise InsufficientSamplesError(f"need more than d={d} samples, got {m}")
    mean = x.mean(axis=0)
    dev = x - mean
    cov = dev.T @ dev / (m - 1)
    return GaussianSummary(mean=mean, cov=clamp_psd(cov), count=m)


def w2_gaussian(a, b) -> float:
    """2-Wasserstein distance between two Gaussians given by ``mean`` and ``cov``.

    ``W2^2 = ||m_a - m_b||^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})``.
    """
    ma, mb = np.atleast_1d(np.asarray(a.mean, float)), np.atleast_1d(np.asarray(b.mean, float))
    sa, sb = np.atleast_2d(np.asarray(a.cov, float)), np.atleast_2d(np.asarray(b.cov, float))
    if ma.shape != mb.shape or sa.shape != sb.shape or sa.shape != (ma.size, ma.size):
        raise ShapeError(f"dimension mismatch: {ma.shape} / {sa.shape} vs {mb.shape} / {sb.shape}")
    root_a = spd_sqrt(sa)
    middle = root_a @ sb @ root_a
    cross = spd_sqrt(0.5 * (middle + middle.T))
    diff = ma - mb
    sq = float(diff @ diff) + float(np.trace(sa) + np.trace(sb) - 2.0 * np.trace(cross))
    return math.sqrt(max(sq, 0.0))


@dataclass(frozen=True)
class W2Curve:
    ks: np.ndarray
    values: np.ndarray
    subject: str
    label: str = "exact"

    def plateau(self, fraction: float = 0.1) -> float:
        """Mean over the last ``fraction`` of recorded iterations."""
        n = max(1, int(math.ceil(fraction * len(self.ks))))
        return float(np.mean(self.values[-n:]))


def w2_curve(traces, target, subject="average", label: str = "exact") -> W2Curve:
    """Per recorded ``k``: fit a Gaussian over replicas and measure W2 to ``target``."""
    samples = traces.subject(subject)
    if samples.shape[0] <= samples.shape[-1]:
        raise InsufficientSamplesError(f"need more than d={samples.shape[-1]} replicas, got {samples.shape[0]}")
    values = np.array([w2_gaussian(fit_gaussian(samples[:, j]), target) for j in range(samples.shape[1])])
    return W2Curve(ks=np.asarray(traces.ks), values=values, subject=str(subject), label=label)


def consensus_error(traces, k: int) -> np.ndarray:
    """``sum_i ||x_i^(k) - xbar^(k)||^2`` for every replica at recorded iteration ``k``."""
    j = traces.index_of(k)
    return traces.consensus()[:, j]


@dataclass(frozen=True)
class AccuracyCurve:
    ks: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    subject: str

    def tail_mean(self, fraction: float = 0.1) -> float:
        n = max(1, int(math.ceil(fraction * len(self.ks))))
        return float(np.mean(self.mean[-n:]))


def classify(X: np.ndarray, x: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Predict 1 where ``sigmoid(X x) >= threshold``; ties go to class 1."""
    return (expit(X @ x) >= threshold).astype(np.float64)


def accuracy(X: np.ndarray, y: np.ndarray, x: np.ndarray, threshold: float = 0.5) -> float:
    return float(np.mean(classify(X, x, threshold) == y))


def accuracy_curve(traces, X, y, subject=0, threshold: float = 0.5) -> AccuracyCurve:
    """Accuracy of each replica's ``subject`` iterate on ``(X, y)``; mean and std over replicas."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("accuracy needs binary labels in {0, 1}")
    samples = traces.subject(subject)  # (M, records, d)
    probs = expit(np.einsum("nd,mkd->mkn", X, samples))
    acc = np.mean((probs >= threshold) == (y == 1), axis=-1)
    return AccuracyCurve(ks=np.asarray(traces.ks), mean=acc.mean(axis=0), std=acc.std(axis=0), subject=str(subject))
