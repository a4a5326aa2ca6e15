"""Dense complex linear algebra for small spin Hamiltonians.

Everything in this module is sized for the 4-level electron-nuclear problem
(dimensions up to 8 are accepted).  The eigensolver is a cyclic Jacobi
iteration on the full complex Hermitian matrix: at these dimensions
robustness and reproducibility matter more than asymptotic speed, and the
rotations keep the eigenvector matrix unitary to machine precision, which
the unitary propagator in :mod:`donorlab.evolution` relies on.

The heavy kernels are numba-compiled; they are also importable by the
evolution module so the time stepping loop can run without Python overhead.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

MAX_DIM = 8

# Convergence: off-diagonal Frobenius norm below this multiple of ||M||_F.
_JACOBI_RTOL = 1e-14
_MAX_SWEEPS = 60


class EigenDecomposition(NamedTuple):
    """Result of :func:`hermitian_eig`.

    eigenvalues are real and ascending; eigenvectors[:, k] is the unit
    eigenvector for eigenvalues[k], and the matrix of columns is unitary.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@njit(cache=True)
def _jacobi_eigh(M):  # pragma: no cover - exercised through hermitian_eig
    n = M.shape[0]
    a = M.copy()
    v = np.eye(n, dtype=np.complex128)
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += abs(a[i, j]) ** 2
    tol = 1e-14 * np.sqrt(fro)
    for _ in range(60):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += abs(a[i, j]) ** 2
        if np.sqrt(2.0 * off) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                m = abs(apq)
                if m == 0.0:
                    continue
                ph = apq / m
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * m)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                sph = (t * c) * ph
                csph = np.conj(sph)
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - csph * akq
                    a[k, q] = sph * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - sph * aqk
                    a[q, k] = csph * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - csph * vkq
                    v[k, q] = sph * vkp + c * vkq
    w = np.empty(n, dtype=np.float64)
    for i in range(n):
        w[i] = a[i, i].real
    order = np.argsort(w)
    return w[order], v[:, order].copy()


@njit(cache=True)
def _expm_unitary(w, v, scale):  # pragma: no cover - exercised via expm_unitary
    n = w.shape[0]
    phases = np.empty(n, dtype=np.complex128)
    for k in range(n):
        phases[k] = np.exp(-1j * scale * w[k])
    u = np.empty((n, n), dtype=np.complex128)
    for i in range(n):
        for j in range(n):
            acc = 0.0 + 0.0j
            for k in range(n):
                acc += v[i, k] * phases[k] * np.conj(v[j, k])
            u[i, j] = acc
    return u


def _as_square_complex(M, name: str = "matrix") -> np.ndarray:
    a = np.asarray(M, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if a.shape[0] > MAX_DIM:
        raise ValueError(
            f"{name} has dimension {a.shape[0]}; this solver is sized for <= {MAX_DIM}"
        )
    return a


def _require_hermitian(a: np.ndarray, name: str = "matrix") -> None:
    dev = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
    norm = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if dev > 1e-10 * norm:
        raise ValueError(
            f"{name} is not Hermitian: max |M - M^dagger| = {dev:.3e}"
        )


def hermitian_eig(M) -> EigenDecomposition:
    """Diagonalize a complex Hermitian matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    M : array_like
        Hermitian matrix, dimension <= 8.

    Returns
    -------
    EigenDecomposition
        Eigenvalues ascending, eigenvector columns orthonormal.

    Raises
    ------
    ValueError
        If ``M`` is not square, exceeds the supported dimension, or is not
        Hermitian within 1e-10 (relative).
    """
    a = _as_square_complex(M, "M")
    _require_hermitian(a, "M")
    w, v = _jacobi_eigh(np.ascontiguousarray(a))
    return EigenDecomposition(w, v)


def expm_unitary(M, scale: float) -> np.ndarray:
    """Return ``exp(-1j * scale * M)`` for Hermitian ``M``.

    Computed through the Jacobi eigendecomposition, so the result is
    unitary to machine precision for any step size.  ``scale`` carries
    whatever prefactor the caller needs (for the spin propagator this is
    where the single factor of 2*pi*dt enters, converting a Hamiltonian
    kept in ordinary-frequency units into a phase in radians).
    """
    a = _as_square_complex(M, "M")
    _require_hermitian(a, "M")
    w, v = _jacobi_eigh(np.ascontiguousarray(a))
    return _expm_unitary(w, v, float(scale))


def kron(a, b) -> np.ndarray:
    """Kronecker product with complex dtype (electron factor on the left)."""
    return np.kron(np.asarray(a, dtype=np.complex128), np.asarray(b, dtype=np.complex128))
