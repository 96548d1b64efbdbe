"""Truncated and quadratic Gramians plus the H2-type norms built on them.

The truncated pair (P_T, Q_T) extends the linear Gramians by the quadratic
and bilinear source terms; the quadratic pair (P, Q) is the fixed point of
the Picard iteration on the full quadratic-type Lyapunov equations. Source
terms are always evaluated through factored square roots, never through an
explicit n^2 x n^2 Kronecker product.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from qbmor.errors import (
    IndefiniteGramian, NoConvergence, NumericalError, SolverBreakdown,
)
from qbmor.kron_tensor import Hessian
from qbmor.qb_core import QBSystem
from qbmor.matrix_equations import solve_lyapunov


@dataclass
class GramianBundle:
    P_l: np.ndarray
    Q_l: np.ndarray
    P_T: np.ndarray
    Q_T: np.ndarray


def _standardize(sys):
    """Fold an invertible mass matrix into the other coefficients."""
    if sys.E is None:
        return sys
    Einv = np.linalg.inv(sys.E)
    return QBSystem(Einv @ sys.A, sys.H.left_multiplied(Einv),
                    [Einv @ Nk for Nk in sys.N], Einv @ sys.B, sys.C,
                    label=sys.label)


def _psd_sqrt(X, what):
    """Factor X ~= L L^T by eigendecomposition with negative clipping."""
    w, U = np.linalg.eigh(X)
    floor = -1e-10 * max(np.abs(w).max(), 1e-300)
    if w.min() < floor:
        warnings.warn("%s has negative eigenvalue %.3e beyond the PSD floor"
                      % (what, w.min()), IndefiniteGramian)
    w = np.clip(w, 0.0, None)
    return U * np.sqrt(w)


def _quadratic_source(sys, P):
    """H(P (x) P) H^T + sum_k N_k P N_k^T without forming P (x) P."""
    L = _psd_sqrt(P, "controllability iterate")
    K = sys.H.apply_kron(L, L)
    S = K @ K.T
    for Nk in sys.N:
        S += (Nk @ P) @ Nk.T
    return S


def _observability_source(sys, P, Q):
    """H2-mode source: H^(2)(P (x) Q)(H^(2))^T + sum_k N_k^T Q N_k."""
    LP = _psd_sqrt(P, "controllability factor")
    LQ = _psd_sqrt(Q, "observability iterate")
    K = sys.H.apply_kron_mode2(LP, LQ)
    S = K @ K.T
    for Nk in sys.N:
        S += (Nk.T @ Q) @ Nk
    return S


def _check_psd(X, what):
    w = np.linalg.eigvalsh(X)
    if w.min() < -1e-10 * max(np.abs(w).max(), 1e-300):
        warnings.warn("%s is indefinite: min eigenvalue %.3e" % (what, w.min()),
                      IndefiniteGramian)


def truncated_gramians(sys):
    """Linear and truncated Gramians of a stable QB system."""
    sys = _standardize(sys)
    P_l = solve_lyapunov(sys.A, sys.B @ sys.B.T)
    Q_l = solve_lyapunov(sys.A.T, sys.C.T @ sys.C)
    P_T = solve_lyapunov(sys.A, _quadratic_source(sys, P_l) + sys.B @ sys.B.T)
    Q_T = solve_lyapunov(sys.A.T,
                         _observability_source(sys, P_l, Q_l) + sys.C.T @ sys.C)
    for X, name in ((P_l, "P_l"), (Q_l, "Q_l"), (P_T, "P_T"), (Q_T, "Q_T")):
        _check_psd(X, name)
    return GramianBundle(P_l=P_l, Q_l=Q_l, P_T=P_T, Q_T=Q_T)


def quadratic_gramians(sys, tol=1e-10, maxit=50):
    """Fixed points of the quadratic-type Lyapunov equations.

    Picard iteration seeded at the linear Gramians. Divergence usually means
    the quadratic and bilinear parts are too large; rescale the system first.
    Returns (P, Q, (iterations_P, iterations_Q)).
    """
    sys = _standardize(sys)
    BBt = sys.B @ sys.B.T
    CtC = sys.C.T @ sys.C

    def picard(seed_rhs, source, A, what):
        X = solve_lyapunov(A, seed_rhs)
        for it in range(1, maxit + 1):
            src = source(X)
            if not np.all(np.isfinite(src)):
                raise NoConvergence("%s iteration diverged (non-finite source);"
                                    " rescale the system" % what)
            try:
                Xn = solve_lyapunov(A, src + seed_rhs)
            except SolverBreakdown as exc:
                raise NoConvergence("%s iteration broke the solver; rescale "
                                    "the system" % what) from exc
            if not np.all(np.isfinite(Xn)):
                raise NoConvergence("%s iteration produced non-finite values;"
                                    " rescale the system" % what)
            delta = np.linalg.norm(Xn - X)
            nrm = np.linalg.norm(Xn)
            X = Xn
            if not (np.isfinite(delta) and np.isfinite(nrm)):
                raise NoConvergence("%s iteration diverged (norm overflow); "
                                    "rescale the system" % what)
            if delta <= tol * max(nrm, 1e-300):
                return X, it
        raise NoConvergence("%s iteration did not settle in %d steps; rescale"
                            " the system" % (what, maxit))

    P, it_p = picard(BBt, lambda X: _quadratic_source(sys, X), sys.A,
                     "controllability")
    Q, it_q = picard(CtC, lambda X: _observability_source(sys, P, X), sys.A.T,
                     "observability")
    return P, Q, (it_p, it_q)


def _dual_traces(sys, P_like, Q_like, rel, what):
    t_c = float(np.trace(sys.C @ P_like @ sys.C.T))
    t_o = float(np.trace(sys.B.T @ Q_like @ sys.B))
    scale = max(abs(t_c), abs(t_o))
    # near-total cancellation (error system of an accurate reduced model)
    # leaves traces at rounding level; the duality check needs an absolute
    # floor proportional to that level or it would compare noise with noise
    floor = 1e-12 * max(
        np.linalg.norm(sys.C) ** 2 * np.linalg.norm(P_like),
        np.linalg.norm(sys.B) ** 2 * np.linalg.norm(Q_like), 1e-300)
    if abs(t_c - t_o) > rel * scale + floor:
        raise NumericalError("%s trace duality violated: %.17g vs %.17g"
                             % (what, t_c, t_o))
    # clip tiny negative traces from rounding
    return max(t_c, 0.0), max(t_o, 0.0)


def truncated_h2_norm(sys, return_both=False):
    """H2-type norm from the first three Volterra kernels.

    The controllability and observability routes are both evaluated and must
    agree to 1e-7 relative; the controllability value is returned.
    """
    sys = _standardize(sys)
    g = truncated_gramians(sys)
    t_c, t_o = _dual_traces(sys, g.P_T, g.Q_T, 1e-7, "truncated")
    if return_both:
        return float(np.sqrt(t_c)), float(np.sqrt(t_o))
    return float(np.sqrt(t_c))


def h2_norm(sys, tol=1e-10, maxit=50, return_both=False):
    """H2 norm through the converged quadratic Gramians."""
    sys = _standardize(sys)
    P, Q, _ = quadratic_gramians(sys, tol=tol, maxit=maxit)
    t_c, t_o = _dual_traces(sys, P, Q, 1e-6, "quadratic")
    if return_both:
        return float(np.sqrt(t_c)), float(np.sqrt(t_o))
    return float(np.sqrt(t_c))


def _embed_pairs(h, n_total, row_offset, col_offset):
    """Embed factor pairs of h into an n_total-dimensional selector block."""
    out = []
    for L, R in h.to_pairs().pairs:
        Ld = L.toarray() if sp.issparse(L) else np.asarray(L)
        Rd = R.toarray() if sp.issparse(R) else np.asarray(R)
        nb = Ld.shape[0]
        Le = sp.lil_array((n_total, n_total))
        Re = sp.lil_array((n_total, n_total))
        Le[row_offset:row_offset + nb, col_offset:col_offset + nb] = Ld
        Re[row_offset:row_offset + nb, col_offset:col_offset + nb] = Rd
        out.append((sp.csr_array(Le), sp.csr_array(Re)))
    return out


def error_system(sys, red):
    """Augmented system whose output is the output error of the pair.

    The quadratic map acts blockwise: rows in the full part see only the
    full state, rows in the reduced part only the reduced state, so it is
    stored as structured factor pairs and never densified.
    """
    sys = _standardize(sys)
    n, r = sys.n, red.r
    if sys.m != red.m or sys.p != red.p:
        raise ValueError("input/output dimensions of the pair do not match")
    ntot = n + r
    Ae = sla.block_diag(sys.A, red.A)
    Be = np.vstack([sys.B, red.B])
    Ce = np.hstack([sys.C, -red.C])
    Ne = [sla.block_diag(Nk, Nhk) for Nk, Nhk in zip(sys.N, red.N)]
    pairs = _embed_pairs(sys.H, ntot, 0, 0) + _embed_pairs(red.H, ntot, n, n)
    He = Hessian.from_pairs(pairs, ntot,
                            symmetric=sys.H.symmetric and red.H.symmetric)
    return QBSystem(Ae, He, Ne, Be, Ce, label="error")


def truncated_h2_error(sys, red):
    """Truncated H2 norm of the output error system of (sys, red)."""
    return truncated_h2_norm(error_system(sys, red))
