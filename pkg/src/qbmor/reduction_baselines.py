"""Balanced truncation built on the truncated Gramian pair."""

import numpy as np

from qbmor.errors import RankDeficient
from qbmor.gramians_norms import truncated_gramians, _psd_sqrt, _standardize
from qbmor.qb_core import project, rescale


def balanced_truncation(sys, r, gamma=1.0):
    """Square-root balancing of P_T and Q_T; returns (model, hsv).

    hsv holds the full set of Hankel-type values so callers can pick an
    order from the decay. Requested orders reaching into the numerical
    null space raise RankDeficient.

    gamma damps the quadratic and bilinear terms during basis
    construction only; the returned model always projects the original
    operators. Useful when strong nonlinear sources would otherwise
    dominate the Gramians with directions the input-output map never
    excites.
    """
    if not (1 <= r <= sys.n):
        raise ValueError("reduced order must satisfy 1 <= r <= n")
    sys = _standardize(sys)
    # Gramians of the damped system, projection of the original one
    src = rescale(sys, gamma) if gamma != 1.0 else sys
    g = truncated_gramians(src)
    L_P = _psd_sqrt(g.P_T, "reachability factor")
    L_Q = _psd_sqrt(g.Q_T, "observability factor")
    U, s, Zt = np.linalg.svd(L_Q.T @ L_P)
    hsv = s.copy()
    if hsv.size == 0 or hsv[0] <= 0.0 or hsv[r - 1] <= 1e-14 * hsv[0]:
        raise RankDeficient("requested order %d exceeds the numerical rank "
                            "of the Gramian product" % r)
    scale = 1.0 / np.sqrt(s[:r])
    V = (L_P @ Zt[:r].T) * scale
    W = (L_Q @ U[:, :r]) * scale
    red = project(sys, V, W, method="bt", gamma=gamma, seed=None,
                  converged=True, iterations=0, tol=0.0, shift=0.0)
    return red, hsv
