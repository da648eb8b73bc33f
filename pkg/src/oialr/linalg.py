"""Dense factorizations: one-sided Jacobi SVD, Householder QR, polar factor.

Every routine works in float64 and is deterministic for a fixed input.
"""

from dataclasses import dataclass
import numba
import numpy as np

from ._validation import as_matrix
from .exceptions import ConvergenceError, ShapeError

MAX_SWEEPS = 60
JACOBI_TOL = 1e-12
# singular values below this fraction of the largest are clamped to 0
CLAMP_RTOL = 1e-12


@dataclass(frozen=True)
class SvdFactors:
    """Compact SVD ``a = u @ diag(s) @ v.T``.

    Attributes
    ----------
    u : ndarray of shape (m, r)
    s : ndarray of shape (r,)
        Sorted descending, non-negative.
    v : ndarray of shape (n, r)
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self):
        return self.s.shape[0]

    def reconstruct(self):
        return (self.u * self.s) @ self.v.T


def matmul(a, b):
    """Matrix product with a readable error on mismatched shapes."""
    a = as_matrix(a, "a", finite=False)
    b = as_matrix(b, "b", finite=False)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


@numba.njit(cache=True)
def _jacobi_sweeps(work, vt, tol, floor, max_sweeps):
    """Cyclic one-sided Jacobi rotations, in place.

    ``work`` holds the matrix columns as rows and ``vt`` accumulates the right
    rotations the same way. Returns the number of sweeps used, or -1 when the
    cap was hit.
    """
    n, m = work.shape
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    x = work[p, k]
                    y = work[q, k]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                # columns at or below the floor are numerically zero
                if alpha <= floor or beta <= floor:
                    continue
                if abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                sgn = 1.0 if zeta >= 0.0 else -1.0
                t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    x = work[p, k]
                    y = work[q, k]
                    work[p, k] = c * x - s * y
                    work[q, k] = s * x + c * y
                for k in range(n):
                    x = vt[p, k]
                    y = vt[q, k]
                    vt[p, k] = c * x - s * y
                    vt[q, k] = s * x + c * y
        if not rotated:
            return sweep
    return -1


def _jacobi_tall(a):
    """Orthogonalize the columns of a tall matrix; returns (work, v, sweeps)."""
    n = a.shape[1]
    work = np.array(a.T, order="C")
    vt = np.eye(n)
    floor = (np.finfo(np.float64).eps * np.linalg.norm(a)) ** 2
    sweeps = _jacobi_sweeps(work, vt, JACOBI_TOL, floor, MAX_SWEEPS)
    if sweeps < 0:
        raise ConvergenceError(f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps", MAX_SWEEPS)
    return work.T, vt.T, sweeps


def _complete_basis(u, keep):
    """Replace columns of ``u`` not flagged in ``keep`` with an orthonormal completion."""
    m, r = u.shape
    basis = u[:, keep]
    out = u.copy()
    for j in np.flatnonzero(~keep):
        # the unit vector with the smallest projection onto the current basis
        resid = 1.0 - np.einsum("ij,ij->i", basis, basis)
        k = int(np.argmax(resid))
        x = np.zeros(m)
        x[k] = 1.0
        for _ in range(2):
            x -= basis @ (basis.T @ x)
        x /= np.linalg.norm(x)
        out[:, j] = x
        basis = np.column_stack([basis, x])
    return out


def _fix_signs(u, v):
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return u, v


def compact_svd(a):
    """Compact SVD of a finite matrix via one-sided Jacobi rotations.

    Returns ``r = min(m, n)`` singular triplets. Each column of ``u`` has its
    largest-magnitude entry positive (first such row on ties), which makes the
    factors reproducible. Singular values below ``1e-12 * s_max`` are clamped to
    exactly zero and their left vectors replaced by an orthonormal completion.

    Raises
    ------
    ConvergenceError
        If the rotations do not settle within ``MAX_SWEEPS`` sweeps.
    """
    a = as_matrix(a)
    m, n = a.shape
    if min(m, n) < 1:
        raise ShapeError(f"cannot factor an empty {m}x{n} matrix")
    transposed = m < n
    tall = a.T if transposed else a
    # factor a max-abs scaled copy so squared column norms neither underflow nor overflow
    scale = np.max(np.abs(tall))
    if scale > 0:
        tall = tall / scale

    work, v, _ = _jacobi_tall(tall)
    s = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    work = work[:, order]
    v = v[:, order]

    smax = s[0] if s.size else 0.0
    keep = s > CLAMP_RTOL * smax if smax > 0 else np.zeros_like(s, dtype=bool)
    s = np.where(keep, s, 0.0)
    u = np.zeros_like(work)
    u[:, keep] = work[:, keep] / s[keep]
    if not keep.all():
        u = _complete_basis(u, keep)
    if scale > 0:
        s = s * scale

    if transposed:
        u, v = v, u
    u, v = _fix_signs(np.ascontiguousarray(u), np.ascontiguousarray(v))
    return SvdFactors(u=u, s=s, v=v)


def qr_mixing(a):
    """Thin Householder QR ``a = q @ r_upper`` with a non-negative diagonal.

    Parameters
    ----------
    a : array_like of shape (m, n), m >= n

    Returns
    -------
    q : ndarray of shape (m, n)
    r_upper : ndarray of shape (n, n)
    """
    a = as_matrix(a)
    m, n = a.shape
    if m < n:
        raise ShapeError(f"qr_mixing needs m >= n, got {m}x{n}")
    r = a.copy()
    reflectors = []
    for k in range(n):
        x = r[k:, k]
        if not np.any(x[1:]):
            reflectors.append(None)
            continue
        # the reflector does not depend on the scale of x; normalizing first
        # keeps squared norms of tiny or huge columns representable
        w = x / np.max(np.abs(x))
        w[0] += np.linalg.norm(w) if w[0] >= 0 else -np.linalg.norm(w)
        w /= np.linalg.norm(w)
        r[k:, k:] -= 2.0 * np.outer(w, w @ r[k:, k:])
        r[k + 1 :, k] = 0.0
        reflectors.append(w)
    q = np.eye(m, n)
    for k in range(n - 1, -1, -1):
        w = reflectors[k]
        if w is not None:
            q[k:, :] -= 2.0 * np.outer(w, w @ q[k:, :])
    r = np.triu(r[:n, :])
    neg = np.diag(r) < 0
    r[neg, :] *= -1.0
    q[:, neg] *= -1.0
    return q, r


def orthogonal_component(a):
    """Polar orthogonal factor ``u @ v.T`` of ``a``, i.e. ``a (a^T a)^{-1/2}``."""
    f = compact_svd(a)
    return f.u @ f.v.T
