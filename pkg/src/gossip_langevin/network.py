"""Communication graphs and doubly-stochastic mixing matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ShapeError, ValidationError
from .numerics import check_symmetric, sym_eigen

KINDS = ("complete", "circular", "disconnected", "custom")
STOCHASTIC_TOL = 1e-12
CONNECTED_TOL = 1e-10


@dataclass(frozen=True)
class Topology:
    """Undirected graph on ``n`` agents; self-loops are implicit.

    ``edges`` holds each pair once as ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    kind: str = "custom"

    def neighbors(self, i: int) -> set[int]:
        """Neighbors of ``i``, including ``i`` itself."""
        out = {i}
        for a, b in self.edges:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return out

    def degrees(self) -> np.ndarray:
        """Neighbor counts including the self-loop."""
        deg = np.ones(self.n, dtype=np.int64)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def has_edge(self, i: int, j: int) -> bool:
        return i == j or (min(i, j), max(i, j)) in self.edges


def _normalize_edges(n: int, edges: Iterable[Iterable[int]]) -> frozenset[tuple[int, int]]:
    out = set()
    for e in edges:
        pair = tuple(int(v) for v in e)
        if len(pair) != 2:
            raise ValidationError(f"edge {e!r} must have two endpoints")
        i, j = pair
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"edge {e!r} references a node outside 0..{n - 1}")
        if i != j:
            out.add((min(i, j), max(i, j)))
    return frozenset(out)


def make_topology(kind: str, n: int, custom_edges: Iterable[Iterable[int]] | None = None) -> Topology:
    """Build a complete, circular, disconnected, or custom graph on ``n`` agents."""
    if n < 1:
        raise ValidationError("agent count must be at least 1")
    if kind == "complete":
        edges = frozenset((i, j) for i in range(n) for j in range(i + 1, n))
    elif kind == "circular":
        edges = _normalize_edges(n, ((i, (i + 1) % n) for i in range(n)))
    elif kind == "disconnected":
        edges = frozenset()
    elif kind == "custom":
        edges = _normalize_edges(n, custom_edges or ())
    else:
        raise ValidationError(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    return Topology(n=n, edges=edges, kind=kind)


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly-stochastic weights with their spectral summary.

    ``lambda2`` and ``lambda_n`` are the second largest and the smallest
    eigenvalues; ``gamma_bar = max(|lambda2|, |lambda_n|)``.
    """

    w: np.ndarray
    lambda2: float
    lambda_n: float
    gamma_bar: float
    connected: bool
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def spectrum_dict(self) -> dict:
        return {
            "lambda2": self.lambda2,
            "lambdaN": self.lambda_n,
            "gammaBar": self.gamma_bar,
            "connected": self.connected,
        }


def mixing_from_weights(w) -> MixingMatrix:
    """Validate a user-supplied weight matrix and attach its spectrum."""
    w = check_symmetric(w)
    n = w.shape[0]
    if np.any(w < 0):
        raise ValidationError("mixing weights must be non-negative")
    if np.any(np.diag(w) <= 0):
        raise ValidationError("mixing weights need a positive diagonal")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > STOCHASTIC_TOL or np.max(np.abs(w.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
        raise ValidationError("mixing matrix is not doubly stochastic")
    vals = sym_eigen(w).eigenvalues
    if vals[0] > 1.0 + 1e-10 or vals[-1] <= -1.0:
        raise ValidationError(f"mixing spectrum must lie in (-1, 1], got [{vals[-1]}, {vals[0]}]")
    lambda2 = float(vals[1]) if n > 1 else float(vals[0])
    lambda_n = float(vals[-1])
    if n == 1:
        gamma_bar = 0.0
        connected = True
    else:
        gamma_bar = float(max(abs(lambda2), abs(lambda_n)))
        connected = lambda2 < 1.0 - CONNECTED_TOL
    return MixingMatrix(w=w, lambda2=lambda2, lambda_n=lambda_n, gamma_bar=gamma_bar, connected=connected, eigenvalues=vals)


def metropolis_weights(t: Topology) -> MixingMatrix:
    """Metropolis weights ``W_ij = 1 / max(d_i, d_j)`` with degrees counting the self-loop."""
    n = t.n
    deg = t.degrees()
    w = np.zeros((n, n))
    for i, j in sorted(t.edges):
        w[i, j] = w[j, i] = 1.0 / max(deg[i], deg[j])
    for i in range(n):
        w[i, i] = 1.0 - (w[i].sum() - w[i, i])
    return mixing_from_weights(w)


def apply_mixing(w: MixingMatrix | np.ndarray, x: np.ndarray) -> np.ndarray:
    """Compute ``(W kron I_d) x`` blockwise.

    ``x`` is either a flat stacked vector of length ``N*d`` or an array
    whose last two axes are ``(N, d)``; the result has the same shape.
    Agent blocks are accumulated in a fixed order (j = 0, 1, ...), so the
    output for a given replica does not depend on any leading batch axes.
    """
    mat = w.w if isinstance(w, MixingMatrix) else np.asarray(w, dtype=np.float64)
    n = mat.shape[0]
    arr = np.asarray(x, dtype=np.float64)
    flat = arr.ndim == 1
    if flat:
        if arr.size % n:
            raise ShapeError(f"stacked vector of length {arr.size} is not a multiple of N={n}")
        arr = arr.reshape(n, -1)
    if arr.ndim < 2 or arr.shape[-2] != n:
        raise ShapeError(f"expected agent axis of length {n}, got shape {arr.shape}")
    out = np.zeros_like(arr)
    for j in range(n):
        col = mat[:, j]
        if not np.any(col):
            continue
        out += col[:, None] * arr[..., j : j + 1, :]
    return out.reshape(-1) if flat else out


def load_network_json(path: str | Path) -> MixingMatrix:
    """Read ``{"n": int, "edges": [[i, j], ...]}`` (Metropolis weights) or ``{"w": [[...]]}``."""
    doc = json.loads(Path(path).read_text())
    return network_from_dict(doc)


def network_from_dict(doc: dict) -> MixingMatrix:
    if "w" in doc:
        return mixing_from_weights(doc["w"])
    if "n" in doc:
        return metropolis_weights(make_topology("custom", int(doc["n"]), doc.get("edges", [])))
    raise ValidationError('network document needs either "w" or "n" (+ "edges")')


def build_mixing(kind: str, n: int, edges=None, weights=None) -> MixingMatrix:
    """Convenience wrapper used by the harness."""
    if weights is not None:
        return mixing_from_weights(weights)
    return metropolis_weights(make_topology(kind, n, edges))
