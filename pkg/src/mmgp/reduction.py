"""PCA / snapshot-POD bases with a Euclidean or mass-matrix inner product.

Snapshots are centered and decomposed through their n x n Gram matrix in
the chosen inner product, which is cheap when there are far fewer
snapshots than degrees of freedom.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy import sparse

from .errors import DimensionMismatch, RankDeficientWarning

EUCLIDEAN = "euclidean"
MASS = "mass"
RANK_WARN_RATIO = 1e-12


@dataclass(frozen=True, eq=False)
class InnerProduct:
    """Euclidean, or block-diagonal mass matrix over ``blocks`` stacked components."""

    kind: str = EUCLIDEAN
    mass: Optional[sparse.spmatrix] = None
    blocks: int = 1

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, MASS):
            raise ValueError(f"unknown inner product {self.kind!r}")
        if self.kind == MASS and self.mass is None:
            raise ValueError("mass inner product needs a mass matrix")

    def apply(self, v: np.ndarray) -> np.ndarray:
        """W @ v for vectors stored along the last axis."""
        v = np.asarray(v, dtype=np.float64)
        if self.kind == EUCLIDEAN:
            return v
        n = self.mass.shape[0]
        lead = v.shape[:-1]
        if v.shape[-1] != n * self.blocks:
            raise DimensionMismatch(f"vector length {v.shape[-1]} does not match {self.blocks} blocks of {n}")
        flat = v.reshape(-1, n)
        return (self.mass @ flat.T).T.reshape(*lead, n * self.blocks)

    def dot(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.sum(np.asarray(a) * self.apply(b), axis=-1)

    def norm(self, v: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.dot(v, v), 0.0))


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    mean: np.ndarray  # (L,)
    modes: np.ndarray  # (L, l), W-orthonormal columns (zero columns for null directions)
    singular_values: np.ndarray  # (l,), nonincreasing
    total_energy: float  # trace of the centered Gram matrix
    inner_product: InnerProduct

    @property
    def size(self) -> int:
        return self.modes.shape[1]

    @property
    def dim(self) -> int:
        return self.modes.shape[0]

    @property
    def rank(self) -> int:
        return int(np.sum(self.singular_values > 0))


def _w_orthonormalize(U: np.ndarray, ip: InnerProduct) -> np.ndarray:
    """Two passes of Cholesky QR in the W inner product."""
    for _ in range(2):
        C = U.T @ ip.apply(U.T).T
        C = 0.5 * (C + C.T)
        R = scipy.linalg.cholesky(C, lower=False)
        U = scipy.linalg.solve_triangular(R, U.T, trans="T", lower=False).T
    return U


def fit(snapshots: np.ndarray, n_modes: int, inner_product: Optional[InnerProduct] = None) -> ReducedBasis:
    """Fit a centered rank-``n_modes`` basis to ``snapshots`` (n, L).

    Directions with Gram eigenvalue below the round-off floor get a zero
    mode and a zero singular value; a :class:`RankDeficientWarning` is
    issued whenever the last kept singular value is below 1e-12 times the
    first. Each mode's largest-magnitude entry is made positive.
    """
    ip = inner_product or InnerProduct()
    X = np.asarray(snapshots, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("snapshots must be a (n, L) matrix")
    n, L = X.shape
    if n < 2:
        raise DimensionMismatch("at least two snapshots are needed")
    if not 1 <= n_modes <= min(n, L):
        raise DimensionMismatch(f"basis size {n_modes} must be in [1, {min(n, L)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    WXc = ip.apply(Xc)
    G = Xc @ WXc.T
    G = 0.5 * (G + G.T)
    lam, vec = np.linalg.eigh(G)
    order = np.argsort(lam, kind="stable")[::-1]
    lam, vec = np.clip(lam[order], 0.0, None), vec[:, order]
    total = float(np.trace(G))
    floor = 10.0 * n * np.finfo(float).eps * (lam[0] if n else 0.0)
    keep = lam[:n_modes] > floor
    sv = np.where(keep, np.sqrt(lam[:n_modes]), 0.0)
    modes = np.zeros((L, n_modes))
    k = int(keep.sum())
    if k:
        U = Xc.T @ vec[:, :k] / sv[:k]
        U = _w_orthonormalize(U, ip)
        idx = np.argmax(np.abs(U), axis=0)
        U = U * np.sign(U[idx, np.arange(k)])
        modes[:, :k] = U
    if sv[0] == 0.0 or sv[-1] < RANK_WARN_RATIO * sv[0]:
        warnings.warn(
            f"basis of size {n_modes} is rank deficient (numerical rank {k})", RankDeficientWarning, stacklevel=2
        )
    return ReducedBasis(mean, modes, sv, total, ip)


def encode(basis: ReducedBasis, v: np.ndarray) -> np.ndarray:
    """Coefficients ``modes^T W (v - mean)``; ``v`` may be (L,) or (k, L)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != basis.dim:
        raise DimensionMismatch(f"vector length {v.shape[-1]} != basis dimension {basis.dim}")
    return basis.inner_product.apply(v - basis.mean) @ basis.modes


def decode(basis: ReducedBasis, coefficients: np.ndarray) -> np.ndarray:
    c = np.asarray(coefficients, dtype=np.float64)
    if c.shape[-1] != basis.size:
        raise DimensionMismatch(f"{c.shape[-1]} coefficients for a basis of size {basis.size}")
    return basis.mean + c @ basis.modes.T


def explained_energy(basis: ReducedBasis) -> np.ndarray:
    """Cumulative share of the snapshot energy captured by the first k modes."""
    if basis.total_energy <= 0.0:
        return np.ones(basis.size)
    return np.cumsum(basis.singular_values**2) / basis.total_energy
