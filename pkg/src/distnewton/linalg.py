"""Dense linear algebra kernels for the quasi-Newton server.

Vectors are 1-d float64 numpy arrays; matrices are 2-d float64 arrays kept
in column-major (Fortran) layout so that column slices are contiguous.
The one decomposition offered is the Gram route to a thin SVD of a tall
n-by-m matrix: eigendecompose the small m-by-m Gram matrix with cyclic
Jacobi rotations, then recover left singular vectors one column at a
time as u_k = M v_k / ||M v_k||.  Nothing n-by-n is ever formed, so the
server's working set stays O(m*n) no matter how large the parameter
dimension gets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AsymmetricMatrixError, DimensionMismatchError

# Jacobi sweeps stop once the off-diagonal Frobenius mass is negligible
# relative to the matrix itself, or after a hard sweep cap.
JACOBI_MAX_SWEEPS = 100
JACOBI_OFFDIAG_RTOL = 1e-14
SYMMETRY_RTOL = 1e-12
DEFAULT_RANK_TOL = 1e-12
MAX_EIG_SIZE = 1024


def as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-d matrix, got shape {a.shape}")
    return np.asfortranarray(a)


def matvec(mat, x) -> np.ndarray:
    """Matrix-vector product with an explicit shape check."""
    m = as_matrix(mat)
    v = as_vector(x)
    if m.shape[1] != v.shape[0]:
        raise DimensionMismatchError(
            f"matvec: matrix is {m.shape[0]}x{m.shape[1]} but vector has length {v.shape[0]}"
        )
    return m @ v


def gram(mat) -> np.ndarray:
    """M^T M, symmetrized so rounding noise cannot upset the eigensolver."""
    m = as_matrix(mat)
    g = m.T @ m
    return np.asfortranarray(0.5 * (g + g.T))


@dataclass(frozen=True)
class SymEigResult:
    """Eigenpairs of a symmetric matrix, sorted by eigenvalue descending.

    Column k of `eigenvectors` belongs to `eigenvalues[k]`.  Ties keep the
    order in which the (converged) diagonal produced them.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _offdiag_norm(a: np.ndarray) -> float:
    d = np.diag(np.diag(a))
    return float(np.linalg.norm(a - d))


def sym_eig(mat) -> SymEigResult:
    """Eigendecomposition of a small symmetric matrix via cyclic Jacobi.

    Sweeps Givens rotations over every (p, q) pair, annihilating one
    off-diagonal entry per rotation, until the off-diagonal Frobenius norm
    drops below JACOBI_OFFDIAG_RTOL * ||S||_F or JACOBI_MAX_SWEEPS sweeps
    have run.  The accumulated rotations make the eigenvector matrix
    orthogonal by construction.  O(m^3) per sweep; intended for the small
    worker-count dimension, never for the parameter dimension.
    """
    s = as_matrix(mat)
    m, mc = s.shape
    if m != mc:
        raise DimensionMismatchError(f"sym_eig: matrix must be square, got {m}x{mc}")
    if m > MAX_EIG_SIZE:
        raise ValueError(f"sym_eig: size {m} exceeds the supported maximum {MAX_EIG_SIZE}")
    fro = float(np.linalg.norm(s))
    if fro > 0.0 and float(np.linalg.norm(s - s.T)) > SYMMETRY_RTOL * fro:
        raise AsymmetricMatrixError("sym_eig: input is not symmetric within tolerance")

    a = np.asfortranarray(0.5 * (s + s.T))
    v = np.asfortranarray(np.eye(m))
    target = JACOBI_OFFDIAG_RTOL * fro
    for _ in range(JACOBI_MAX_SWEEPS):
        if _offdiag_norm(a) <= target:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # stable annihilating tangent; same root as the textbook
                # sign(theta)/(|theta| + sqrt(1 + theta^2)) but overflow-free
                diff = a[q, q] - a[p, p]
                if diff == 0.0:
                    t = 1.0
                else:
                    t = 2.0 * apq * np.sign(diff) / (abs(diff) + np.hypot(2.0 * apq, diff))
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - sn * aq
                a[q, :] = sn * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq

    eigvals = np.diag(a).copy()
    order = np.argsort(-eigvals, kind="stable")
    v = v[:, order]
    # Canonical sign: largest-magnitude entry of each eigenvector positive.
    # Pins the +-v ambiguity so identical subspaces always print the same.
    for k in range(m):
        lead = int(np.argmax(np.abs(v[:, k])))
        if v[lead, k] < 0.0:
            v[:, k] = -v[:, k]
    return SymEigResult(eigvals[order], np.asfortranarray(v))


@dataclass(frozen=True)
class ThinSvd:
    """Thin SVD of an n-by-m matrix, computed through its Gram matrix.

    `sigma` holds all m singular values, descending.  `left_vectors` holds
    unit-norm u_k for a leading prefix of the spectrum only: k is included
    while sigma_k > rank_tolerance * sigma_1 and G v_k has nonzero norm.
    """

    sigma: np.ndarray
    right_vectors: np.ndarray
    left_vectors: list[np.ndarray]

    @property
    def retained(self) -> int:
        return len(self.left_vectors)


def thin_svd_via_gram(mat, rank_tolerance: float = DEFAULT_RANK_TOL) -> ThinSvd:
    """Thin SVD from the m-by-m Gram eigendecomposition.

    sigma_k = sqrt(max(lambda_k, 0)) clamps tiny negative Gram eigenvalues
    (rounding noise on a PSD matrix) to zero.  Left vectors are produced in
    descending order and stop at the first k that falls at or below the
    relative rank tolerance, so `left_vectors` is always a prefix.  A zero
    matrix yields an all-zero sigma and no left vectors.
    """
    if rank_tolerance < 0:
        raise ValueError("rank_tolerance must be nonnegative")
    g = as_matrix(mat)
    eig = sym_eig(gram(g))
    sigma = np.sqrt(np.clip(eig.eigenvalues, 0.0, None))
    lead = float(sigma[0]) if sigma.size else 0.0
    left: list[np.ndarray] = []
    for k in range(sigma.size):
        if not (sigma[k] > 0.0 and sigma[k] > rank_tolerance * lead):
            break
        w = g @ eig.eigenvectors[:, k]
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            break
        left.append(w / norm)
    return ThinSvd(sigma, eig.eigenvectors, left)
