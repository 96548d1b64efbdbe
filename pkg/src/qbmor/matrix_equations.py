"""Dense spectral, Lyapunov and shifted-Sylvester solvers.

All solvers are dense and deterministic on a fixed machine. Sylvester
equations with a diagonal right coefficient are solved column by column;
a full Kronecker system is never formed.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from qbmor.errors import (
    NonDiagonalizable, NotStable, SolverBreakdown, SingularShift,
    PairingViolation,
)

_COND_LIMIT = 1e12


@dataclass
class SpectralFactors:
    """Eigendecomposition A = R diag(lam) Rinv with a fixed eigenvalue order."""
    R: np.ndarray
    lam: np.ndarray
    Rinv: np.ndarray


def _pair_cleanup(lam, R):
    """Restore adjacency of conjugate pairs after a stable (re, im) sort."""
    lam = lam.copy()
    R = R.copy()
    i = 0
    r = lam.size
    while i < r:
        if abs(lam[i].imag) <= 0.0:
            i += 1
            continue
        want = np.conj(lam[i])
        tol = 1e-8 * (1.0 + abs(lam[i]))
        j = None
        for k in range(i + 1, r):
            if abs(lam[k] - want) <= tol:
                j = k
                break
        if j is None:
            raise PairingViolation("eigenvalue %r has no conjugate partner" % (lam[i],))
        if j != i + 1:
            order = list(range(r))
            order.insert(i + 1, order.pop(j))
            lam = lam[order]
            R = R[:, order]
        i += 2
    return lam, R


def spectral_decompose(Ahat):
    """Diagonalize a real square matrix with a deterministic eigenvalue order.

    Eigenvalues are sorted by (real part, imaginary part) ascending and
    conjugate pairs are kept adjacent with the negative imaginary part first.
    """
    Ahat = np.asarray(Ahat, dtype=float)
    lam, R = sla.eig(Ahat)
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NonDiagonalizable(
            "eigenvector matrix condition %.3e exceeds %.1e" % (cond, _COND_LIMIT))
    order = np.lexsort((lam.imag, lam.real))
    lam = lam[order]
    R = R[:, order]
    lam, R = _pair_cleanup(lam, R)
    Rinv = np.linalg.inv(R)
    return SpectralFactors(R=R, lam=lam, Rinv=Rinv)


def solve_lyapunov(A, Q):
    """Unique X with A X + X A^T + Q = 0 for Hurwitz A; X is symmetrized."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    ev = np.linalg.eigvals(A)
    if np.max(ev.real) >= 0.0:
        raise NotStable("coefficient matrix has eigenvalue with Re >= 0")
    try:
        # scipy solves a x + x a^H = q
        X = sla.solve_lyapunov(A, -Q)
    except (np.linalg.LinAlgError, sla.LinAlgError, ValueError) as exc:
        raise SolverBreakdown("Lyapunov backend failed: %s" % exc) from exc
    if not np.all(np.isfinite(X)):
        raise SolverBreakdown("Lyapunov solution contains non-finite entries")
    return 0.5 * (X + X.T)


def solve_sylvester_shifted(A, lam, Rhs, E=None):
    """Solve -E V diag(lam) - A V = Rhs column by column.

    Column i is -(A + lam_i E)^{-1} Rhs[:, i]. When lam[i], lam[i+1] and the
    matching Rhs columns form a conjugate pair only one solve is done and the
    partner column is its conjugate, which keeps realification exact.
    """
    A = np.asarray(A, dtype=float)
    lam = np.asarray(lam, dtype=complex)
    n = A.shape[0]
    r = lam.size
    Rhs = np.asarray(Rhs, dtype=complex).reshape(n, r)
    if E is None:
        E = np.eye(n)
    else:
        E = np.asarray(E, dtype=float)
    V = np.empty((n, r), dtype=complex)
    i = 0
    while i < r:
        paired = (
            i + 1 < r
            and abs(lam[i + 1] - np.conj(lam[i])) <= 1e-14 * (1.0 + abs(lam[i]))
            and lam[i].imag != 0.0
            and np.allclose(Rhs[:, i + 1], np.conj(Rhs[:, i]),
                            rtol=1e-12, atol=1e-12 * (1.0 + np.abs(Rhs[:, i]).max()))
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                lu = sla.lu_factor(A + lam[i] * E)
                V[:, i] = -sla.lu_solve(lu, Rhs[:, i])
        except (np.linalg.LinAlgError, sla.LinAlgError, sla.LinAlgWarning,
                ValueError) as exc:
            raise SingularShift("shift %r makes A + lam E singular" % (lam[i],)) from exc
        if not np.all(np.isfinite(V[:, i])):
            raise SingularShift("shift %r gave a non-finite column" % (lam[i],))
        if paired:
            V[:, i + 1] = np.conj(V[:, i])
            i += 2
        else:
            i += 1
    return V


def reflect_unstable(lam, eps_shift=1e-8):
    """Mirror right-half-plane eigenvalues and nudge purely imaginary ones."""
    lam = np.asarray(lam, dtype=complex).copy()
    for i in range(lam.size):
        re = lam[i].real
        if re > 0.0:
            lam[i] = complex(-re, lam[i].imag)
        elif re == 0.0:
            lam[i] = complex(-eps_shift, lam[i].imag)
    return lam


def realify_basis(Vc, lam):
    """Real basis with the same real span: (Re v, Im v) per conjugate pair."""
    Vc = np.asarray(Vc, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    n, r = Vc.shape
    out = np.empty((n, r))
    i = 0
    while i < r:
        if abs(lam[i].imag) <= 1e-14 * (1.0 + abs(lam[i])):
            out[:, i] = Vc[:, i].real
            i += 1
            continue
        if i + 1 >= r or abs(lam[i + 1] - np.conj(lam[i])) > 1e-8 * (1.0 + abs(lam[i])):
            raise PairingViolation("conjugate pair not adjacent at index %d" % i)
        out[:, i] = Vc[:, i].real
        out[:, i + 1] = Vc[:, i].imag
        i += 2
    return out
