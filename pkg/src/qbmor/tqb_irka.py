"""Quasi-optimal iterative reduction of QB systems.

Each sweep diagonalizes the current reduced matrix, solves four shifted
Sylvester equations for the two-term bases V = V1 + V2, W = W1 + W2 on the
gamma-rescaled system, and projects the original system onto the
orthonormalized bases. Convergence is measured by the relative change of
the reduced spectrum under a deterministic eigenvalue pairing.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from qbmor.errors import MaxIterationsExceeded, NonDiagonalizable
from qbmor.kron_tensor import Hessian
from qbmor.matrix_equations import (
    spectral_decompose, solve_sylvester_shifted, reflect_unstable,
    realify_basis,
)
from qbmor.qb_core import (
    QBSystem, ReducedModel, ProjectionBases, project, rescale, orthonormalize,
)


@dataclass
class IrkaConfig:
    r: int
    tol: float = 1e-5
    maxit: int = 100
    gamma: float = 1.0
    init: object = "random"      # "random", "linear-irka", or a ReducedModel
    seed: int = 0
    reflect: bool = True
    shift: float = 0.0           # spectral shift applied to A in the solves


@dataclass
class IrkaReport:
    iterations: int
    eig_change_history: list
    converged: bool
    final_eigs: np.ndarray
    wall_time: float
    warnings: list = field(default_factory=list)


def _sorted_eigs(A):
    lam = np.linalg.eigvals(A)
    return lam[np.lexsort((lam.imag, lam.real))]


def _eig_change(old, new):
    """Largest relative eigenvalue movement under sorted pairing.

    Falls back to optimal assignment when sorted neighbors nearly collide,
    where plain sorting may pair the wrong partners.
    """
    denom = np.maximum(np.abs(old), 1e-300)
    collide = False
    for arr in (old, new):
        gaps = np.abs(np.diff(arr))
        if gaps.size and gaps.min() <= 1e-10 * (1.0 + np.abs(arr[:-1]).max()):
            collide = True
    if collide:
        cost = np.abs(new[None, :] - old[:, None]) / denom[:, None]
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].max())
    return float((np.abs(new - old) / denom).max())


def _transforms(f, red, gamma, lam):
    """Reduced matrices moved into the eigenbasis of the used iterate."""
    Btil = f.Rinv @ red.B
    Ctil = red.C @ f.R
    Ntil = [gamma * (f.Rinv @ Nk @ f.R) for Nk in red.N]
    Htil = gamma * (f.Rinv @ red.H.apply_kron(f.R, f.R))
    r = red.r
    Htil2 = Htil.reshape(r, r, r).transpose(2, 1, 0).reshape(r, r * r)
    return lam, Btil, Ctil, Ntil, Htil, Htil2


def _solve_bases_core(sys, lam, Btil, Ctil, Ntil, Htil, Htil2):
    """The four Sylvester solves; everything stays complex here."""
    A, E, H = sys.A, sys.E, sys.H
    Et = None if E is None else E.T
    V1 = solve_sylvester_shifted(A, lam, sys.B @ Btil.T, E=E)
    rhs_v2 = H.apply_kron(V1, V1) @ Htil.T
    for Nk, Ntk in zip(sys.N, Ntil):
        rhs_v2 = rhs_v2 + Nk @ V1 @ Ntk.T
    V2 = solve_sylvester_shifted(A, lam, rhs_v2, E=E)
    W1 = solve_sylvester_shifted(A.T, lam, sys.C.T @ Ctil, E=Et)
    rhs_w2 = 2.0 * (H.apply_kron_mode2(V1, W1) @ Htil2.T)
    for Nk, Ntk in zip(sys.N, Ntil):
        rhs_w2 = rhs_w2 + Nk.T @ W1 @ Ntk
    W2 = solve_sylvester_shifted(A.T, lam, rhs_w2, E=Et)
    return V1, V2, W1, W2


def _assemble_bases(V1c, V2c, W1c, W2c, lam, pad_seed=0):
    V = realify_basis(V1c + V2c, lam)
    W = realify_basis(W1c + W2c, lam)
    return ProjectionBases(
        V1=realify_basis(V1c, lam), V2=realify_basis(V2c, lam),
        W1=realify_basis(W1c, lam), W2=realify_basis(W2c, lam),
        V=V, W=W,
        Vorth=orthonormalize(V, seed=pad_seed),
        Worth=orthonormalize(W, seed=pad_seed + 1),
        V1c=V1c, V2c=V2c, W1c=W1c, W2c=W2c)


def solve_bases(sys, red):
    """Two-term projection bases for the pair (sys, red).

    Uses the reduced model's own spectral factors; gamma scaling is the
    caller's responsibility (pass an already-rescaled pair for scaled runs).
    """
    f = red.spectral
    V1c, V2c, W1c, W2c = _solve_bases_core(
        sys, f.lam, f.Btil, f.Ctil, f.Ntil, f.Htil, f.Htil2)
    return _assemble_bases(V1c, V2c, W1c, W2c, f.lam)


def reduced_hat_bases(red):
    """Reduced-scale analogues of the projection bases, used by diagnostics.

    Solves the same four equations with the reduced matrices standing in
    for the full ones. Returns complex (Vhat, What, V1, V2, W1, W2).
    """
    f = red.spectral
    V1, V2, W1, W2 = _solve_bases_core(
        red, f.lam, f.Btil, f.Ctil, f.Ntil, f.Htil, f.Htil2)
    return V1 + V2, W1 + W2, V1, V2, W1, W2


def initial_guess(sys, r, kind="random", seed=0):
    """Starting reduced model: random Hurwitz draw or a linear fixed point."""
    if isinstance(kind, ReducedModel):
        return kind
    if kind == "random":
        rng = np.random.default_rng(seed)
        D = 10.0 ** rng.uniform(-1.0, 1.0, r)
        S = rng.standard_normal((r, r))
        K = rng.standard_normal((r, r))
        A = -np.diag(D) - 0.1 * (S @ S.T) + 0.5 * (K - K.T)
        T = rng.standard_normal((r, r, r))
        T = 0.5 * (T + T.transpose(0, 2, 1))
        nrm = np.linalg.norm(T.reshape(r, -1))
        if nrm > 0:
            T *= 0.1 / nrm
        H = Hessian.dense(T.reshape(r, r * r), symmetric=True)
        N = []
        for _ in range(sys.m):
            Nk = rng.standard_normal((r, r))
            Nk *= 0.1 / max(np.linalg.norm(Nk), 1e-300)
            N.append(Nk)
        B = rng.standard_normal((r, sys.m))
        C = rng.standard_normal((sys.p, r))
        return ReducedModel(A, H, N, B, C, method="init-random", seed=seed)
    if kind == "linear-irka":
        lin = QBSystem(sys.A, None, [np.zeros((sys.n, sys.n))] * sys.m,
                       sys.B, sys.C, E=sys.E)
        cfg = IrkaConfig(r=r, tol=1e-7, maxit=100, init="random", seed=seed)
        red, _, _ = tqb_irka(lin, cfg)
        return ReducedModel(red.A, None, [np.zeros((r, r))] * sys.m,
                            red.B, red.C, method="init-linear-irka", seed=seed)
    raise ValueError("unknown initial guess kind %r" % (kind,))


def tqb_irka(sys, cfg):
    """Run the fixed-point reduction; returns (model, bases, report).

    Non-convergence within cfg.maxit raises no exception: the best iterate
    is returned with converged=False and a MaxIterationsExceeded warning.
    """
    t0 = time.perf_counter()
    if not (0.0 < cfg.tol < 1.0):
        raise ValueError("tol must lie in (0, 1)")
    if not (1 <= cfg.r <= sys.n):
        raise ValueError("reduced order must satisfy 1 <= r <= n")
    notes = []

    scaled = rescale(sys, cfg.gamma)
    if cfg.shift != 0.0:
        Eeff = np.eye(sys.n) if sys.E is None else sys.E
        basis_sys = QBSystem(scaled.A - cfg.shift * Eeff, scaled.H, scaled.N,
                             scaled.B, scaled.C, E=sys.E)
    else:
        basis_sys = scaled

    red = initial_guess(sys, cfg.r, cfg.init, cfg.seed)
    if red.r != cfg.r:
        raise ValueError("initial guess order does not match cfg.r")
    meta = dict(method="tqb-irka", gamma=cfg.gamma, seed=cfg.seed,
                tol=cfg.tol, shift=cfg.shift)

    perturb_rng = np.random.default_rng(
        0 if cfg.seed is None else int(cfg.seed) + 1)
    A_used = red.A.copy()
    prev_eigs = _sorted_eigs(red.A)
    theta = 1.0
    inc_streak = 0
    prev_change = np.inf
    best = None
    history = []
    it = 0
    for it in range(1, cfg.maxit + 1):
        try:
            f = spectral_decompose(A_used)
        except NonDiagonalizable:
            scale = 1e-10 * max(np.linalg.norm(A_used), 1.0)
            P = perturb_rng.standard_normal(A_used.shape)
            A_used = A_used + scale * 0.5 * (P + P.T)
            notes.append("perturbed a numerically defective iterate at "
                         "sweep %d" % it)
            f = spectral_decompose(A_used)
        lam = reflect_unstable(f.lam) if cfg.reflect else f.lam
        lam, Btil, Ctil, Ntil, Htil, Htil2 = _transforms(
            f, red, cfg.gamma, lam)
        V1c, V2c, W1c, W2c = _solve_bases_core(
            basis_sys, lam, Btil, Ctil, Ntil, Htil, Htil2)
        bases = _assemble_bases(V1c, V2c, W1c, W2c, lam)
        red_new = project(sys, bases.Vorth, bases.Worth,
                          converged=False, iterations=it, **meta)
        new_eigs = _sorted_eigs(red_new.A)
        change = _eig_change(prev_eigs, new_eigs)
        history.append(change)
        if best is None or change < best[0]:
            best = (change, red_new, bases, it)
        if change <= cfg.tol:
            red_final = project(sys, bases.Vorth, bases.Worth,
                                converged=True, iterations=it, **meta)
            report = IrkaReport(iterations=it, eig_change_history=history,
                                converged=True, final_eigs=new_eigs,
                                wall_time=time.perf_counter() - t0,
                                warnings=notes)
            return red_final, bases, report
        if change > prev_change:
            inc_streak += 1
            if inc_streak >= 10:
                theta = max(theta / 2.0, 1.0 / 1024.0)
                inc_streak = 0
                notes.append("damping reduced matrix updates (theta=%g) at "
                             "sweep %d" % (theta, it))
        else:
            inc_streak = 0
            theta = 1.0
        A_used = theta * red_new.A + (1.0 - theta) * A_used
        red = red_new
        prev_eigs = new_eigs
        prev_change = change

    change, red_best, bases_best, best_it = best
    msg = ("no convergence in %d sweeps; returning the sweep-%d iterate "
           "(eigenvalue change %.3e)" % (cfg.maxit, best_it, change))
    warnings.warn(msg, MaxIterationsExceeded)
    notes.append(msg)
    report = IrkaReport(iterations=it, eig_change_history=history,
                        converged=False,
                        final_eigs=_sorted_eigs(red_best.A),
                        wall_time=time.perf_counter() - t0, warnings=notes)
    return red_best, bases_best, report
