"""First-order optimality residuals for a (system, reduced model) pair.

The five residual families compare quantities built from the full-order
projection bases against their reduced-scale analogues. The reduced-scale
side is evaluated on the raw-basis realization (projection with the
unorthonormalized V, W), which is the realization for which the exact
algebraic identities between the two sides hold.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from qbmor.errors import (
    DegradedDiagnostics, ProjectorSingular, SingularShift, TooLarge,
)
from qbmor.kron_tensor import Hessian, mode_matricize, perm_T, vec, unvec
from qbmor.qb_core import QBSystem, ProjectionBases, orthonormalize
from qbmor.tqb_irka import _solve_bases_core, solve_bases

_COND_LIMIT = 1e13
_FAMILIES = ("C", "B", "N", "H", "lambda")


@dataclass
class ResidualReport:
    E_C: float
    E_B: float
    E_N: float
    E_H: float
    E_lambda: float
    Phi_C: np.ndarray
    Phi_B: np.ndarray
    Phi_N: np.ndarray
    Phi_H: np.ndarray
    Phi_lambda: np.ndarray
    eps_C: np.ndarray
    eps_B: np.ndarray
    eps_N: np.ndarray
    eps_H: np.ndarray
    eps_lambda: np.ndarray
    degraded: dict = field(default_factory=dict)

    def items(self):
        return [("E_C", self.E_C), ("E_B", self.E_B), ("E_N", self.E_N),
                ("E_H", self.E_H), ("E_lambda", self.E_lambda)]


@dataclass
class BruteForceCheck:
    rel_C: float
    rel_B: float
    rel_N: float
    rel_H: float
    rel_lambda: float
    agreed: bool
    tol: float = 1e-9


def _spec_norm(X):
    X = np.asarray(X)
    if X.ndim <= 1:
        return float(np.linalg.norm(X))
    if X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    return float(np.linalg.norm(X, 2))


def _standardized_pair(sys, bases):
    # mass matrices fold into A, H, N, B; adjoint-side bases pick up E^T
    if sys.E is None:
        return sys, bases
    E = sys.E
    Ei = np.linalg.inv(E)
    sys_std = QBSystem(Ei @ sys.A, sys.H.left_multiplied(Ei),
                       [Ei @ Nk for Nk in sys.N], Ei @ sys.B, sys.C,
                       label=sys.label)
    W = E.T @ bases.W
    return sys_std, ProjectionBases(
        V1=bases.V1, V2=bases.V2,
        W1=E.T @ bases.W1, W2=E.T @ bases.W2,
        V=bases.V, W=W,
        Vorth=bases.Vorth, Worth=orthonormalize(W),
        V1c=bases.V1c, V2c=bases.V2c,
        W1c=None if bases.W1c is None else E.T @ bases.W1c,
        W2c=None if bases.W2c is None else E.T @ bases.W2c)


def _complex_raws(bases):
    if bases.V1c is None or bases.W1c is None:
        raise ValueError("bases must carry the complex solution columns")
    return bases.V1c, bases.V2c, bases.W1c, bases.W2c


def _raw_realization(sys, V, W):
    G = W.T @ V
    if np.linalg.cond(G) > _COND_LIMIT:
        raise SingularShift("raw projection pair is numerically singular")
    A = np.linalg.solve(G, W.T @ sys.A @ V)
    B = np.linalg.solve(G, W.T @ sys.B)
    C = sys.C @ V
    N = [np.linalg.solve(G, W.T @ Nk @ V) for Nk in sys.N]
    Hm = np.linalg.solve(G, sys.H.congruence(V, W))
    H = Hessian.dense(Hm, symmetric=sys.H.symmetric)
    return QBSystem(A, H, N, B, C), G


def _phi_families(model, V1, V2, W1, W2):
    Vfull = V1 + V2
    Wfull = W1 + W2
    r = V1.shape[1]
    Phi_C = (model.C @ Vfull).T
    Phi_B = Wfull.T @ model.B
    Phi_N = np.stack([W1.T @ Nk @ V1 for Nk in model.N], axis=2)
    Phi_H = (W1.T @ model.H.apply_kron(V1, V1)).reshape(r, r, r)
    Phi_lam = np.diag(W1.T @ Vfull) + np.diag(W2.T @ V1)
    return Phi_C, Phi_B, Phi_N, Phi_H, Phi_lam


def optimality_residuals(sys, red, bases):
    """Both sides of the five optimality conditions and their gaps."""
    sys, bases = _standardized_pair(sys, bases)
    V1c, V2c, W1c, W2c = _complex_raws(bases)
    full = _phi_families(sys, V1c, V2c, W1c, W2c)

    degraded = {name: False for name in _FAMILIES}
    try:
        raw_model, _ = _raw_realization(sys, bases.V, bases.W)
        f = red.spectral
        hat = _solve_bases_core(raw_model, f.lam, f.Btil, f.Ctil, f.Ntil,
                                f.Htil, f.Htil2)
        hats = _phi_families(raw_model, *hat)
        eps = [phi - phih for phi, phih in zip(full, hats)]
    except SingularShift as exc:
        warnings.warn("reduced-scale bases unavailable (%s); residual "
                      "measures degraded to nan" % exc, DegradedDiagnostics)
        degraded = {name: True for name in _FAMILIES}
        eps = [np.full(phi.shape, np.nan, dtype=complex) for phi in full]

    scale = max([_spec_norm(phi) for phi in full] + [1e-300])
    floor = 1e-14 * scale
    measures = []
    for phi, ep, name in zip(full, eps, _FAMILIES):
        if degraded[name]:
            measures.append(float("nan"))
            continue
        nphi = _spec_norm(phi)
        neps = _spec_norm(ep)
        # a family annihilated by system structure (its own norm underflows)
        # is measured against the largest family norm instead of 0/0 noise
        measures.append(neps / (nphi if nphi >= floor else scale))
    return ResidualReport(
        E_C=measures[0], E_B=measures[1], E_N=measures[2], E_H=measures[3],
        E_lambda=measures[4],
        Phi_C=full[0], Phi_B=full[1], Phi_N=full[2], Phi_H=full[3],
        Phi_lambda=full[4],
        eps_C=eps[0], eps_B=eps[1], eps_N=eps[2], eps_H=eps[3],
        eps_lambda=eps[4], degraded=degraded)


def _shifted_colsolve(M, lam, Rhs, what):
    n = M.shape[0]
    X = np.zeros((n, lam.size), dtype=complex)
    Eye = np.eye(n)
    for i, li in enumerate(lam):
        try:
            X[:, i] = np.linalg.solve(M + li * Eye, Rhs[:, i])
        except np.linalg.LinAlgError as exc:
            raise SingularShift("%s solve singular at shift %s"
                                % (what, li)) from exc
    return X


def perturbation_solves(sys, red, bases):
    """The four perturbation quantities (eps_v, eps_w, Gamma_v, Gamma_w).

    eps_v and eps_w measure how far the first basis terms stray from the
    lifted reduced-scale solutions; Gamma_v and Gamma_w do the same at
    reduced scale. All four solve shifted Sylvester equations whose
    coefficients are the oblique projector composed with A, and the
    raw-realization reduced matrix, respectively.
    """
    sys, bases = _standardized_pair(sys, bases)
    V1c, V2c, W1c, W2c = _complex_raws(bases)
    V, W = bases.V, bases.W
    A, B, C, H = sys.A, sys.B, sys.C, sys.H
    f = red.spectral
    lam = f.lam

    G = W.T @ V
    M1 = W.T @ V1c
    M2 = V.T @ W1c
    # the scale check catches grazing subspaces, where the product is
    # uniformly tiny and its condition number alone looks harmless
    for name, M, left, right in (("W'V", G, W, V), ("W'V1", M1, W, V1c),
                                 ("V'W1", M2, V, W1c)):
        s = np.linalg.svd(M, compute_uv=False)
        scale = np.linalg.norm(left, 2) * np.linalg.norm(right, 2)
        if (not np.all(np.isfinite(s))
                or s.min() <= max(s.max(), 1e-300) / _COND_LIMIT
                or s.max() <= scale / _COND_LIMIT):
            raise ProjectorSingular("projector factor %s is numerically "
                                    "singular" % name)
    Pi = V @ np.linalg.solve(G, W.T)
    Piv = V1c @ np.linalg.solve(M1, W.T)
    Piw = W1c @ np.linalg.solve(M2, V.T)

    rhs_v = (Pi - Piv) @ (A @ V1c + B @ f.Btil.T)
    eps_v = _shifted_colsolve(Pi @ A, lam, rhs_v, "eps_v")
    rhs_w = (Pi.T - Piw) @ (A.T @ W1c + C.T @ f.Ctil)
    eps_w = _shifted_colsolve((A @ Pi).T, lam, rhs_w, "eps_w")

    Ahat = np.linalg.solve(G, W.T @ A @ V)
    bracket_v = (H.apply_kron(eps_v, V1c - eps_v)
                 + H.apply_kron(V1c, eps_v)) @ f.Htil.T
    bracket_w = 2.0 * ((H.apply_kron_mode2(eps_v, W1c)
                        + H.apply_kron_mode2(V1c, eps_w)
                        - H.apply_kron_mode2(eps_v, eps_w)) @ f.Htil2.T)
    for Nk, Ntk in zip(sys.N, f.Ntil):
        bracket_v = bracket_v + Nk @ eps_v @ Ntk.T
        bracket_w = bracket_w + Nk.T @ eps_w @ Ntk
    rhs_gv = np.linalg.solve(G, W.T @ bracket_v)
    Gamma_v = _shifted_colsolve(Ahat, lam, rhs_gv, "Gamma_v")
    rhs_gw = V.T @ bracket_w
    Gamma_w = _shifted_colsolve(Ahat.T, lam, rhs_gw, "Gamma_w")
    return eps_v, eps_w, Gamma_v, Gamma_w


def verify_against_bruteforce(sys, red, tol=1e-9):
    """Recompute the five residual families through vectorized Kronecker
    solves and compare with the Sylvester route.
    """
    if sys.n > 30:
        raise TooLarge("brute-force verification is limited to n <= 30")
    if sys.E is not None:
        Ei = np.linalg.inv(sys.E)
        sys = QBSystem(Ei @ sys.A, sys.H.left_multiplied(Ei),
                       [Ei @ Nk for Nk in sys.N], Ei @ sys.B, sys.C)
    n, r = sys.n, red.r
    f = red.spectral
    lam = f.lam
    A = sys.A
    In = np.eye(n)
    Ir = np.eye(r)

    K1 = -np.kron(np.diag(lam), In) - np.kron(Ir, A)
    K2 = -np.kron(np.diag(lam), In) - np.kron(Ir, A.T)
    vecV1 = np.linalg.solve(K1, vec(sys.B @ f.Btil.T))
    vecW1 = np.linalg.solve(K2, vec(sys.C.T @ f.Ctil))

    T = perm_T(n, r)
    Hm = sys.H.mode1()
    H2 = mode_matricize(sys.H, 2)
    src_v2 = np.kron(f.Htil, Hm) @ T.apply(np.kron(vecV1, vecV1))
    src_w2 = 2.0 * (np.kron(f.Htil2, H2) @ T.apply(np.kron(vecV1, vecW1)))
    for Nk, Ntk in zip(sys.N, f.Ntil):
        src_v2 = src_v2 + np.kron(Ntk, Nk) @ vecV1
        src_w2 = src_w2 + np.kron(Ntk.T, Nk.T) @ vecW1
    vecV2 = np.linalg.solve(K1, src_v2)
    vecW2 = np.linalg.solve(K2, src_w2)

    V1 = unvec(vecV1, (n, r))
    V2 = unvec(vecV2, (n, r))
    W1 = unvec(vecW1, (n, r))
    W2 = unvec(vecW2, (n, r))
    Phi_C = (sys.C @ (V1 + V2)).T
    Phi_B = (W1 + W2).T @ sys.B
    Phi_N = np.stack([W1.T @ Nk @ V1 for Nk in sys.N], axis=2)
    Phi_H = np.zeros((r, r, r), dtype=complex)
    for j in range(r):
        for l in range(r):
            Phi_H[:, j, l] = W1.T @ (Hm @ np.kron(V1[:, j], V1[:, l]))
    Phi_lam = np.diag(W1.T @ (V1 + V2)) + np.diag(W2.T @ V1)
    brute = (Phi_C, Phi_B, Phi_N, Phi_H, Phi_lam)

    bases = solve_bases(sys, red)
    sylv = _phi_families(sys, bases.V1c, bases.V2c, bases.W1c, bases.W2c)

    scale = max([_spec_norm(phi) for phi in sylv] + [1e-300])
    floor = 1e-14 * scale
    rel = []
    for phi_s, phi_b in zip(sylv, brute):
        diff = _spec_norm(phi_s - phi_b)
        base = _spec_norm(phi_s)
        rel.append(0.0 if max(diff, base) < floor else diff / max(base,
                                                                  floor))
    return BruteForceCheck(rel_C=rel[0], rel_B=rel[1], rel_N=rel[2],
                           rel_H=rel[3], rel_lambda=rel[4],
                           agreed=all(x <= tol for x in rel), tol=tol)
