"""Benchmark generators, canonical inputs, stiff integration, error metrics.

Both generators lift a cubic reaction term through the auxiliary state
z = v * v, which turns the semi-discretized PDE into a QB system whose
trajectories keep the lift exact up to integrator tolerance.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from qbmor.errors import NewtonDivergence, NonFiniteState
from qbmor.kron_tensor import Hessian
from qbmor.qb_core import QBSystem


@dataclass(frozen=True)
class InputSignal:
    """Named input channel bundle; calling it returns u(t) in R^m."""
    kind: str
    m: int
    _fn: Callable = field(repr=False)

    def __call__(self, t):
        return self._fn(float(t))


def input_signal(kind, table=None):
    """Canonical test inputs plus a piecewise-linear table interpolant.

    Known kinds: ci_u1, ci_u2 (single channel), fhn_i0_sin, fhn_i0_bump
    (current plus a constant unit channel feeding the q terms), custom.
    """
    if kind == "ci_u1":
        return InputSignal(kind, 1,
                           lambda t: np.array([(1.0 + math.sin(math.pi * t))
                                               * math.exp(-t / 5.0)]))
    if kind == "ci_u2":
        return InputSignal(kind, 1,
                           lambda t: np.array([25.0 * (1.0 + math.sin(math.pi * t))]))
    if kind == "fhn_i0_sin":
        return InputSignal(kind, 2,
                           lambda t: np.array([50.0 * (math.sin(2.0 * math.pi * t) - 1.0),
                                               1.0]))
    if kind == "fhn_i0_bump":
        return InputSignal(kind, 2,
                           lambda t: np.array([5.0e4 * t ** 3 * math.exp(-15.0 * t),
                                               1.0]))
    if kind == "custom":
        if table is None:
            raise ValueError("custom signals need table=(times, values)")
        ts, us = table
        ts = np.asarray(ts, dtype=float)
        us = np.atleast_2d(np.asarray(us, dtype=float))
        if us.shape[0] != ts.shape[0]:
            us = us.T
        if us.shape[0] != ts.shape[0]:
            raise ValueError("table times and values disagree in length")
        m = us.shape[1]
        cols = [us[:, j].copy() for j in range(m)]
        return InputSignal(kind, m,
                           lambda t: np.array([np.interp(t, ts, col) for col in cols]))
    raise ValueError("unknown input signal %r" % kind)


def chafee_infante(k):
    """Cubic reaction-diffusion rod with Dirichlet input at the left end.

    k interior grid points on (0, 1], h = 1/k; states (v; w) with w the
    lifted square, so n = 2k. Output is v at the right end.
    """
    if k < 3:
        raise ValueError("need at least 3 grid points")
    n = 2 * k
    inv_h2 = float(k * k)

    main = np.full(k, -2.0 * inv_h2)
    main[-1] = -inv_h2           # reflecting right end via ghost elimination
    off = np.full(k - 1, inv_h2)
    A_vv = np.diag(main) + np.diag(off, 1) + np.diag(off, -1) + np.eye(k)
    A = np.zeros((n, n))
    A[:k, :k] = A_vv
    # d(v_j^2)/dt picks twice the diagonal linear coefficient
    A[k:, k:] = np.diag(2.0 * np.diag(A_vv))

    rows = np.arange(k)
    ones = np.ones(k)
    # v rows: -v_j * w_j closes the cubic term
    P1 = sp.csr_matrix((ones, (rows, rows)), shape=(n, n))
    Q1 = sp.csr_matrix((-ones, (rows, k + rows)), shape=(n, n))
    # w rows: -2 w_j^2
    P2 = sp.csr_matrix((ones, (k + rows, k + rows)), shape=(n, n))
    Q2 = sp.csr_matrix((-2.0 * ones, (k + rows, k + rows)), shape=(n, n))
    # w rows: neighbor products from the diffusion stencil
    P3 = sp.csr_matrix((ones, (k + rows, rows)), shape=(n, n))
    adj_r = np.concatenate([rows[:-1], rows[1:]])
    adj_c = np.concatenate([rows[1:], rows[:-1]])
    Q3 = sp.csr_matrix((np.full(adj_r.size, 2.0 * inv_h2),
                        (k + adj_r, adj_c)), shape=(n, n))
    H = Hessian.from_pairs([(P1, Q1), (P2, Q2), (P3, Q3)], n)

    B = np.zeros((n, 1))
    B[0, 0] = inv_h2
    N1 = np.zeros((n, n))
    N1[k, 0] = 2.0 * inv_h2
    C = np.zeros((1, n))
    C[0, k - 1] = 1.0
    return QBSystem(A=A, H=H, N=[N1], B=B, C=C, label="chafee_infante_k%d" % k)


def fitzhugh_nagumo(k):
    """Spiking-neuron cable model with Neumann current injection.

    k grid points on [0, 0.3]; states (v; w; z) with z the lifted square,
    so n = 3k. Inputs are the injected current and a constant unit channel
    carrying the q offsets; outputs are v and w at the left end.
    """
    if k < 3:
        raise ValueError("need at least 3 grid points")
    eps, h_par, gam, q = 0.015, 0.5, 2.0, 0.05
    length = 0.3
    hg = length / (k - 1)
    inv_h2 = 1.0 / (hg * hg)
    n = 3 * k

    D2 = np.diag(np.full(k, -2.0 * inv_h2))
    D2 += np.diag(np.full(k - 1, inv_h2), 1) + np.diag(np.full(k - 1, inv_h2), -1)
    D2[0, 1] = 2.0 * inv_h2      # zero-flux ghosts at both ends
    D2[k - 1, k - 2] = 2.0 * inv_h2

    Ik = np.eye(k)
    A = np.zeros((n, n))
    A[:k, :k] = eps * D2 - (0.1 / eps) * Ik
    A[:k, k:2 * k] = -(1.0 / eps) * Ik
    A[:k, 2 * k:] = (1.1 / eps) * Ik
    A[k:2 * k, :k] = h_par * Ik
    A[k:2 * k, k:2 * k] = -gam * Ik
    A[2 * k:, 2 * k:] = np.diag(2.0 * (eps * np.diag(D2) - 0.1 / eps))

    rows = np.arange(k)
    ones = np.ones(k)
    # v rows: -(1/eps) v_j z_j closes the cubic term
    P1 = sp.csr_matrix((ones, (rows, rows)), shape=(n, n))
    Q1 = sp.csr_matrix((-ones / eps, (rows, 2 * k + rows)), shape=(n, n))
    # z rows: 2 v_j times the off-diagonal linear velocity of v_j
    Avrow = np.zeros((n, n))
    Avrow[2 * k + rows] = 2.0 * A[rows]
    Avrow[2 * k + rows, rows] = 0.0
    P2 = sp.csr_matrix((ones, (2 * k + rows, rows)), shape=(n, n))
    Q2 = sp.csr_matrix(Avrow)
    # z rows: -(2/eps) z_j^2
    P3 = sp.csr_matrix((ones, (2 * k + rows, 2 * k + rows)), shape=(n, n))
    Q3 = sp.csr_matrix((-2.0 * ones / eps, (2 * k + rows, 2 * k + rows)),
                       shape=(n, n))
    H = Hessian.from_pairs([(P1, Q1), (P2, Q2), (P3, Q3)], n)

    B = np.zeros((n, 2))
    B[0, 0] = -2.0 * eps / hg    # Neumann current enters the first v row
    B[rows, 1] = q / eps
    B[k + rows, 1] = q
    N1 = np.zeros((n, n))
    N1[2 * k, 0] = -4.0 * eps / hg
    N2 = np.zeros((n, n))
    N2[2 * k + rows, rows] = 2.0 * q / eps
    C = np.zeros((2, n))
    C[0, 0] = 1.0
    C[1, k] = 1.0
    return QBSystem(A=A, H=H, N=[N1, N2], B=B, C=C,
                    label="fitzhugh_nagumo_k%d" % k)


@dataclass
class Trajectory:
    """Sampled solution: equidistant times, outputs, optional states."""
    times: np.ndarray
    outputs: np.ndarray
    states: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)


def _integrate(f, jac, x0, T, rtol, atol, E=None, f_at=None):
    """Implicit midpoint with modified Newton and step doubling.

    Returns the accepted nodes (times, states, slopes, stats). Accepted
    states are Richardson-extrapolated, so the local order is three while
    the error estimate controls the order-two pair. The Jacobian is frozen
    across steps and the iteration matrix is LU-cached per step size on a
    power-of-two ladder; a stage that stops converging refreshes once
    before the step is halved. `f_at(t)` may supply a closure with the
    time-dependent pieces of f pre-evaluated, since every Newton sweep
    keeps t fixed at the stage midpoint.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    Emat = None if E is None else np.asarray(E, dtype=float)
    lu_E = None if Emat is None else sla.lu_factor(Emat)
    Ieye = np.eye(n)
    if f_at is None:
        def f_at(tv):
            return lambda xv: f(xv, tv)

    def slope(xv, tv):
        r = f(xv, tv)
        return r if lu_E is None else sla.lu_solve(lu_E, r)

    stats = {"steps": 0, "rejected": 0, "newton_iters": 0,
             "jacobian_factorizations": 0}
    frozen = {"stale": True}
    lu_cache = {}

    def iteration_lu(dt):
        lu = lu_cache.get(dt)
        if lu is None:
            stats["jacobian_factorizations"] += 1
            lu = sla.lu_factor((Ieye if Emat is None else Emat)
                               - 0.5 * dt * frozen["J"], check_finite=False)
            if len(lu_cache) >= 8:
                lu_cache.pop(next(iter(lu_cache)))
            lu_cache[dt] = lu
        return lu

    def stage(xn, tn, dt, z0):
        # solve E (z - xn) = dt f((xn + z)/2, tn + dt/2) for z
        tm = tn + 0.5 * dt
        fx = f_at(tm)
        iters = stats["newton_iters"]
        for attempt in range(2):
            if frozen["stale"]:
                frozen["J"] = jac(xn, tm)
                frozen["stale"] = False
                lu_cache.clear()
            lu = iteration_lu(dt)
            z = z0.copy()
            last = math.inf
            for _ in range(10):
                d = z - xn
                g = (d if Emat is None else Emat @ d) - dt * fx(0.5 * (xn + z))
                if not np.all(np.isfinite(g)):
                    break
                dz = sla.lu_solve(lu, g, check_finite=False)
                z = z - dz
                iters += 1
                w = dz / (atol + rtol * np.abs(z))
                nrm = math.sqrt(float(w @ w) / n)
                if nrm <= 0.05:
                    stats["newton_iters"] = iters
                    return z
                if nrm > 0.7 * last:
                    break               # stale-Jacobian rate too slow
                last = nrm
            frozen["stale"] = True      # retry once with a fresh Jacobian
            if attempt == 1:
                stats["newton_iters"] = iters
                return None
        return None

    t = 0.0
    ts = [0.0]
    xs = [x.copy()]
    fs = [slope(x, 0.0)]
    dt = T * 1e-3
    dt_min = 1e-12 * T
    while True:
        remaining = T - t
        if remaining < dt_min:
            break                       # within roundoff of the horizon
        dt_step = min(dt, remaining)
        if dt_step < dt_min:
            raise NewtonDivergence("step size underflow at t=%.6g" % t)
        # predictors: node slope for the stages leaving x, then linear
        # state extrapolation for the second half step
        pred = x + dt_step * fs[-1]
        x_full = stage(x, t, dt_step, pred)
        x_half = None if x_full is None else stage(
            x, t, 0.5 * dt_step, x + 0.5 * dt_step * fs[-1])
        x_two = None if x_half is None else stage(
            x_half, t + 0.5 * dt_step, 0.5 * dt_step, 2.0 * x_half - x)
        if x_two is None:
            stats["rejected"] += 1
            dt = 0.5 * dt_step
            continue
        err_vec = (x_two - x_full) / 3.0
        sc = atol + rtol * np.maximum(np.abs(x), np.abs(x_two))
        err = math.sqrt(np.mean((err_vec / sc) ** 2))
        if not math.isfinite(err):
            stats["rejected"] += 1
            dt = 0.2 * dt_step
            continue
        if err <= 1.0:
            x = x_two + err_vec
            if not np.all(np.isfinite(x)):
                raise NonFiniteState("state became non-finite at t=%.6g"
                                     % (t + dt_step))
            t += dt_step
            ts.append(t)
            xs.append(x.copy())
            fs.append(slope(x, t))
            stats["steps"] += 1
            # double/halve only, so the LU cache stays small and hot
            fac = math.inf if err == 0.0 else 0.9 * err ** (-1.0 / 3.0)
            if fac >= 2.0:
                dt = 2.0 * dt_step
            elif fac < 1.0:
                dt = 0.5 * dt_step
            else:
                dt = dt_step
        else:
            stats["rejected"] += 1
            dt = 0.5 * dt_step
    return np.array(ts), np.array(xs), np.array(fs), stats


def _hermite_sample(ts, xs, fs, tq):
    """Cubic Hermite evaluation on the accepted nodes; rows are queries."""
    idx = np.clip(np.searchsorted(ts, tq, side="right") - 1, 0, len(ts) - 2)
    t0 = ts[idx]
    h = ts[idx + 1] - t0
    s = ((tq - t0) / h)[:, None]
    s2 = s * s
    s3 = s2 * s
    return ((2 * s3 - 3 * s2 + 1) * xs[idx]
            + (s3 - 2 * s2 + s) * (h[:, None] * fs[idx])
            + (-2 * s3 + 3 * s2) * xs[idx + 1]
            + (s3 - s2) * (h[:, None] * fs[idx + 1]))


def simulate(sys, u, T, samples, rtol=1e-8, atol=1e-10, x0=None,
             store_states=False):
    """Integrate a QB system driven by an input signal.

    Outputs are sampled on `samples` equidistant points by dense cubic
    interpolation between accepted integrator nodes.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    if samples < 2:
        raise ValueError("need at least two sample points")
    if u.m != sys.m:
        raise ValueError("signal has %d channels, system expects %d"
                         % (u.m, sys.m))
    A, B, C, N = sys.A, sys.B, sys.C, sys.N
    n = sys.n
    x_init = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)

    # flatten the Hessian into two stacked dense factors once; sparse or
    # per-pair matvec dispatch would otherwise dominate the Newton loop
    if sys.H.is_zero:
        quad = quad_jac = None
    elif sys.H.storage == "pairs":
        dense_pairs = [
            (np.asarray(L.toarray() if sp.issparse(L) else L, dtype=float),
             np.asarray(R.toarray() if sp.issparse(R) else R, dtype=float))
            for L, R in sys.H.pairs]
        npair = len(dense_pairs)
        Ls = np.vstack([L for L, _ in dense_pairs])
        Rs = np.vstack([R for _, R in dense_pairs])

        def quad(x):
            return ((Ls @ x) * (Rs @ x)).reshape(npair, n).sum(axis=0)

        def quad_jac(x):
            J = np.zeros((n, n))
            for L, R in dense_pairs:
                J += (R @ x)[:, None] * L + (L @ x)[:, None] * R
            return J
    else:
        T3 = sys.H.mode1().reshape(n, n, n)

        def quad(x):
            return (T3 @ x) @ x

        def quad_jac(x):
            # constructor-symmetrized tensor: chain rule doubles one mode
            return 2.0 * (T3 @ x)

    any_bilinear = any(np.any(Nk) for Nk in N)

    def f_at(tv):
        uv = u(tv)
        Aeff = A
        if any_bilinear:
            for Nk, uk in zip(N, uv):
                if uk != 0.0:
                    Aeff = Aeff + uk * Nk
        base = B @ uv
        if quad is None:
            return lambda xm: Aeff @ xm + base
        return lambda xm: Aeff @ xm + quad(xm) + base

    def f(x, t):
        return f_at(t)(x)

    def jacf(x, t):
        uv = u(t)
        J = A.copy() if quad_jac is None else A + quad_jac(x)
        for Nk, uk in zip(N, uv):
            if uk != 0.0:
                J += uk * Nk
        return J

    ts, xs, fs, stats = _integrate(f, jacf, x_init, T, rtol, atol, E=sys.E,
                                   f_at=f_at)
    tq = np.linspace(0.0, T, samples)
    states = _hermite_sample(ts, xs, fs, tq)
    outputs = C @ states.T
    if not np.all(np.isfinite(outputs)):
        raise NonFiniteState("sampled outputs are non-finite")
    stats = dict(stats, nodes=len(ts))
    return Trajectory(times=tq, outputs=outputs,
                      states=states.T if store_states else None, stats=stats)


def output_errors(y, yhat):
    """Mean and worst-case relative output error on a shared grid.

    Both are normalized by the peak output norm of the reference, so a
    reference that is identically zero only matches a zero prediction.
    """
    if y.times.shape != yhat.times.shape or not np.allclose(
            y.times, yhat.times, rtol=1e-12, atol=1e-12):
        raise ValueError("trajectory grids do not match")
    diff = np.linalg.norm(y.outputs - yhat.outputs, axis=0)
    denom = float(np.linalg.norm(y.outputs, axis=0).max())
    if denom == 0.0:
        if diff.max() == 0.0:
            return 0.0, 0.0
        return math.inf, math.inf
    return float(diff.mean() / denom), float(diff.max() / denom)


def to_csv(traj, path):
    """Write (t, y_1..y_p) rows with 17 significant digits."""
    p = traj.outputs.shape[0]
    header = "t," + ",".join("y_%d" % (j + 1) for j in range(p))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i, t in enumerate(traj.times):
            row = [t] + [traj.outputs[j, i] for j in range(p)]
            fh.write(",".join("%.17g" % v for v in row) + "\n")
