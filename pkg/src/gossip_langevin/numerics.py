"""Dense symmetric linear algebra and seeded random streams.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The
eigensolver is a cyclic Jacobi method with a round-robin (parallel)
ordering: each sweep visits every off-diagonal pair exactly once, in
``n - 1`` rounds of ``n // 2`` disjoint rotations that are applied
together.

Random streams are counter-based: each :class:`RngStream` wraps numpy's
``Philox`` bit generator keyed by ``SeedSequence(seed, spawn_key=(stream_id,))``.
Normal variates come from ``Generator.standard_normal`` (numpy's ziggurat).
Drawing ``n`` values at once or in pieces yields the same sequence, which
the samplers rely on when they pre-draw noise in blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import NotPSDError, NumericError, ShapeError

SYMMETRY_RTOL = 1e-10
PSD_RTOL = 1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100

__all__ = [
    "SpectralDecomposition",
    "RngStream",
    "as_matrix",
    "check_symmetric",
    "sym_eigen",
    "spd_sqrt",
    "standard_normal_vector",
]


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of a symmetric matrix, eigenvalues sorted descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def as_matrix(a: Any) -> np.ndarray:
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix contains NaN or Inf")
    return m


def check_symmetric(a: Any) -> np.ndarray:
    """Return ``a`` as a float matrix after checking it is square and symmetric."""
    m = as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"matrix must be square, got {m.shape}")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * scale:
        raise ShapeError("matrix is not symmetric within tolerance")
    return m


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for one Jacobi sweep; ``n`` must be even."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        p = np.array([players[i] for i in range(n // 2)])
        q = np.array([players[n - 1 - i] for i in range(n // 2)])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def sym_eigen(a: Any) -> SpectralDecomposition:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Stops once the off-diagonal Frobenius norm falls below
    ``1e-12 * ||A||_F`` or after 100 sweeps. Eigenvalues are returned in
    descending order, eigenvectors as orthonormal columns.
    """
    m = check_symmetric(a)
    n = m.shape[0]
    if n == 0:
        raise ShapeError("empty matrix")
    work = 0.5 * (m + m.T)
    size = n + (n % 2)
    if size != n:
        padded = np.zeros((size, size))
        padded[:n, :n] = work
        work = padded
    vecs = np.eye(size)
    fro = np.linalg.norm(work)
    rounds = _round_robin(size) if size > 1 else []

    offdiag = ~np.eye(size, dtype=bool)

    def off_norm(x: np.ndarray) -> float:
        return float(np.sqrt(np.sum(x[offdiag] ** 2)))

    converged = fro == 0.0 or off_norm(work) <= JACOBI_TOL * fro
    sweeps = 0
    while not converged and sweeps < JACOBI_MAX_SWEEPS:
        for p, q in rounds:
            apq = work[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            app, aqq = work[p, p], work[q, q]
            safe = np.where(active, apq, 1.0)
            # a tiny apq sends theta to inf, which correctly gives t = 0 (no rotation)
            with np.errstate(over="ignore"):
                theta = (aqq - app) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            # A <- J^T A J, with J[p,p]=J[q,q]=c, J[p,q]=s, J[q,p]=-s
            cp, cq = work[:, p].copy(), work[:, q].copy()
            work[:, p] = c * cp - s * cq
            work[:, q] = s * cp + c * cq
            rp, rq = work[p, :].copy(), work[q, :].copy()
            work[p, :] = c[:, None] * rp - s[:, None] * rq
            work[q, :] = s[:, None] * rp + c[:, None] * rq
            work[p, q] = 0.0
            work[q, p] = 0.0
            vp, vq = vecs[:, p].copy(), vecs[:, q].copy()
            vecs[:, p] = c * vp - s * vq
            vecs[:, q] = s * vp + c * vq
        sweeps += 1
        converged = off_norm(work) <= JACOBI_TOL * fro
    if not converged:
        raise NumericError(f"Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps")

    vals = np.diag(work)[:n].copy()
    vecs = vecs[:n, :n].copy()
    order = np.argsort(-vals, kind="stable")
    return SpectralDecomposition(eigenvalues=vals[order], eigenvectors=vecs[:, order])


def spd_sqrt(a: Any) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix.

    Eigenvalues down to ``-1e-10 * ||A||_2`` are clamped to zero; anything
    more negative raises :class:`NotPSDError`.
    """
    dec = sym_eigen(a)
    vals = dec.eigenvalues
    norm2 = float(np.max(np.abs(vals)))
    if vals[-1] < -PSD_RTOL * norm2:
        raise NotPSDError(f"smallest eigenvalue {vals[-1]:.3e} is below tolerance")
    root = np.sqrt(np.clip(vals, 0.0, None))
    q = dec.eigenvectors
    s = (q * root) @ q.T
    return 0.5 * (s + s.T)


class RngStream:
    """Single-owner random stream keyed by ``(seed, stream_id)``.

    Identical keys reproduce identical sequences; distinct keys give
    independent streams. Instances must not be shared between threads.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not 0 <= int(seed) < 2**64 or not 0 <= int(stream_id) < 2**64:
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def normal(self, shape: int | tuple[int, ...]) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape: int | tuple[int, ...]) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, high: int, shape: int | tuple[int, ...]) -> np.ndarray:
        """Uniform indices in ``[0, high)`` derived from uniform doubles."""
        return uniform_to_index(self.uniform(shape), high)

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    @state.setter
    def state(self, value: dict) -> None:
        self._gen.bit_generator.state = value


def uniform_to_index(u: np.ndarray, high: int | np.ndarray) -> np.ndarray:
    idx = np.floor(u * high).astype(np.int64)
    return np.minimum(idx, np.asarray(high) - 1)


def standard_normal_vector(stream: RngStream, dim: int) -> np.ndarray:
    if dim < 1:
        raise ShapeError("dim must be at least 1")
    return stream.normal(dim)
