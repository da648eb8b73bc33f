"""The frozen-basis ``U @ Sigma @ V.T`` weight representation.

A :class:`LowRankWeight` keeps orthonormal ``u`` and ``v`` fixed and exposes the
small square ``sigma`` for training. :func:`update_basis` folds the rotation that
``sigma`` has accumulated back into the bases, after which :func:`truncate_rank`
drops directions whose singular value fell below a fraction of the largest.
"""

from dataclasses import dataclass
from math import prod

import numpy as np

from ._validation import as_matrix, check_fraction
from .exceptions import ShapeError
from .linalg import compact_svd


@dataclass
class LowRankWeight:
    """Factorized weight ``u @ sigma @ v.T`` of shape ``full_shape``.

    ``sigma`` is always stored dense: between basis updates training gives it
    off-diagonal mass.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        r = self.sigma.shape[0]
        if self.sigma.shape != (r, r) or self.u.ndim != 2 or self.v.ndim != 2:
            raise ShapeError(f"sigma must be square, got {self.sigma.shape}")
        if self.u.shape[1] != r or self.v.shape[1] != r:
            raise ShapeError(f"u {self.u.shape} and v {self.v.shape} must have {r} columns to match sigma")
        if not 1 <= r <= min(self.u.shape[0], self.v.shape[0]):
            raise ShapeError(f"rank {r} outside [1, {min(self.u.shape[0], self.v.shape[0])}]")

    @property
    def rank(self):
        return self.sigma.shape[0]

    @property
    def full_shape(self):
        return (self.u.shape[0], self.v.shape[0])

    def copy(self):
        return LowRankWeight(self.u.copy(), self.sigma.copy(), self.v.copy())


def decompose_weight(w):
    """Full compact SVD of ``w`` as a :class:`LowRankWeight` of rank ``min(m, n)``."""
    f = compact_svd(w)
    return LowRankWeight(u=f.u, sigma=np.diag(f.s), v=f.v)


def update_basis(w, return_rotations=False):
    """Rotate the bases by the SVD of the trained ``sigma``.

    With ``sigma = u' @ diag(s') @ v'.T`` the result is ``u @ u'``, ``diag(s')``
    and ``v @ v'``; the materialized product is unchanged.

    Parameters
    ----------
    w : LowRankWeight
    return_rotations : bool, default=False
        Also return ``(u', v')``, needed by optimizer state handling.
    """
    f = compact_svd(w.sigma)
    out = LowRankWeight(u=w.u @ f.u, sigma=np.diag(f.s), v=w.v @ f.v)
    if return_rotations:
        return out, f.u, f.v
    return out


def truncate_rank(w, beta):
    """Keep singular directions with ``s_i >= beta * s_max`` (at least one).

    Must follow :func:`update_basis`, which leaves ``sigma`` diagonal and sorted.
    """
    beta = check_fraction(beta, "beta")
    s = np.diag(w.sigma)
    smax = s.max() if s.size else 0.0
    # an all-zero sigma has no informative direction: keep the floor
    keep = int(np.count_nonzero(s >= beta * smax)) if smax > 0 else 0
    r = max(keep, 1)
    return LowRankWeight(
        u=np.ascontiguousarray(w.u[:, :r]),
        sigma=np.ascontiguousarray(w.sigma[:r, :r]),
        v=np.ascontiguousarray(w.v[:, :r]),
    )


def materialize(w):
    return (w.u @ w.sigma) @ w.v.T


def param_counts(w):
    """``(trainable, frozen)`` element counts: ``r**2`` and ``r * (m + n)``."""
    m, n = w.full_shape
    r = w.rank
    return r * r, r * (m + n)


@dataclass(frozen=True)
class Matricization:
    """Maps an N-d weight (N >= 2) to ``(first_dim, prod(rest))`` and back."""

    shape: tuple

    @property
    def m(self):
        return self.shape[0]

    @property
    def n(self):
        return prod(self.shape[1:])

    def flatten(self, arr):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != self.shape:
            raise ShapeError(f"expected shape {self.shape}, got {arr.shape}")
        return arr.reshape(self.m, self.n)

    def restore(self, mat):
        mat = as_matrix(mat, "mat", finite=False)
        if mat.shape != (self.m, self.n):
            raise ShapeError(f"expected shape {(self.m, self.n)}, got {mat.shape}")
        return mat.reshape(self.shape)


def matricize(shape):
    """Return the :class:`Matricization` for a weight of the given shape.

    >>> matricize((64, 3, 3, 3)).n
    27
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) < 2:
        raise ShapeError(f"only weights with >= 2 dimensions can be factorized, got shape {shape}")
    return Matricization(shape)
