"""Primal-dual interior-point solver for linear / second-order cone programs.

The solver works on the homogeneous self-dual embedding of

    minimize c^T x   s.t.  G x + s = h,  s in K
    maximize -h^T z  s.t.  G^T z + c = 0, z in K*

with Nesterov-Todd scaling and a Mehrotra predictor-corrector step. Each
iteration solves the reduced normal equations ``G^T W^-1 W^-T G`` by a
Cholesky factorization with static regularization and iterative refinement.
Everything is dense and deterministic: there is no randomization and the
iteration rule is fixed.

Rotated cones ``a*b >= ||v||^2`` are mapped onto standard second-order cones
by the invertible row map ``(a, b, v) -> (a + b, a - b, 2 v)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import math

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import dtrtrs

from .program import ConicProgram

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
OPTIMAL_INACCURATE = "optimal_inaccurate"
SOLVED = (OPTIMAL, OPTIMAL_INACCURATE)
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 100
    regularization: float = 1e-9
    refine_steps: int = 3
    step_fraction: float = 0.99
    # reduced accuracy accepted when the iteration stalls or runs out
    inaccurate_tol: float = 1e-6
    equilibrate: bool = True
    # "cholesky" (fast), "qr" (accurate) or "auto": Cholesky, then one
    # QR re-solve with more refinement and shorter steps when the first
    # attempt ends without a clean answer
    factorization: str = "auto"
    stall_window: int = 15


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    info: dict = field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        """Dual vector (alias of ``z``)."""
        return self.z


# ----------------------------------------------------------------------
# cone bookkeeping


def _jnorm(X: np.ndarray) -> np.ndarray:
    """``sqrt(x0^2 - ||x1||^2)`` per row, in a cancellation-free form."""
    r = np.linalg.norm(X[:, 1:], axis=1)
    return np.sqrt(np.maximum((X[:, 0] - r) * (X[:, 0] + r), 0.0))


class _Cones:
    """Internal layout: all LP rows first, then SOC blocks grouped by size."""

    def __init__(self, cones: list[tuple[str, int]]):
        m = sum(d for _, d in cones)
        user_start = np.cumsum([0] + [d for _, d in cones])[:-1]
        lp_rows = []
        soc: dict[int, list[int]] = {}
        self.rsoc_starts: list[tuple[int, int]] = []
        for (kind, d), st in zip(cones, user_start):
            if kind == "l":
                lp_rows.extend(range(st, st + d))
            else:
                soc.setdefault(d, []).append(st)
                if kind == "r":
                    self.rsoc_starts.append((st, d))
        perm = list(lp_rows)
        self.nl = len(lp_rows)
        self.groups: list[tuple[int, int, int]] = []  # (dim, start, count)
        pos = self.nl
        for d in sorted(soc):
            starts = soc[d]
            self.groups.append((d, pos, len(starts)))
            for st in starts:
                perm.extend(range(st, st + d))
            pos += d * len(starts)
        self.m = m
        self.perm = np.asarray(perm, dtype=int)
        self.degree = self.nl + sum(k for _, _, k in self.groups)

    def blocks(self, x: np.ndarray):
        for d, st, k in self.groups:
            yield x[st:st + d * k].reshape(k, d)

    def to_internal(self, v: np.ndarray) -> np.ndarray:
        """User rows (with rotated blocks) -> internal SOC rows, permuted."""
        w = np.array(v, dtype=float, copy=True)
        for st, d in self.rsoc_starts:
            a, b = w[st].copy(), w[st + 1].copy()
            w[st], w[st + 1] = a + b, a - b
            w[st + 2:st + d] *= 2.0
        return w[self.perm]

    def unpermute(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[self.perm] = v
        return out

    def primal_to_user(self, v_int: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`to_internal`."""
        w = self.unpermute(v_int)
        for st, d in self.rsoc_starts:
            p, q = w[st].copy(), w[st + 1].copy()
            w[st], w[st + 1] = 0.5 * (p + q), 0.5 * (p - q)
            w[st + 2:st + d] *= 0.5
        return w

    def dual_to_user(self, v_int: np.ndarray) -> np.ndarray:
        """Dual vectors map with the transpose of the row map."""
        w = self.unpermute(v_int)
        for st, d in self.rsoc_starts:
            p, q = w[st].copy(), w[st + 1].copy()
            w[st], w[st + 1] = p + q, p - q
            w[st + 2:st + d] *= 2.0
        return w

    # --- Jordan algebra --------------------------------------------------

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[:self.nl] = 1.0
        for blk in self.blocks(e):
            blk[:, 0] = 1.0
        return e

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.m)
        out[:self.nl] = u[:self.nl] * v[:self.nl]
        for U, V, O in zip(self.blocks(u), self.blocks(v), self.blocks(out)):
            O[:, 0] = np.sum(U * V, axis=1)
            O[:, 1:] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
        return out

    def inv_product(self, lam: np.ndarray, d: np.ndarray, dets=None) -> np.ndarray:
        """Solve ``lam o u = d`` for ``u``; ``dets`` are the SOC determinants of lam."""
        out = np.empty(self.m)
        out[:self.nl] = d[:self.nl] / lam[:self.nl]
        if dets is None:
            dets = [_jnorm(L) ** 2 for L in self.blocks(lam)]
        for L, D, O, det in zip(self.blocks(lam), self.blocks(d), self.blocks(out), dets):
            l0, l1 = L[:, 0], L[:, 1:]
            d0, d1 = D[:, 0], D[:, 1:]
            l1d1 = np.sum(l1 * d1, axis=1)
            O[:, 0] = (l0 * d0 - l1d1) / det
            O[:, 1:] = d1 / l0[:, None] + l1 * ((l1d1 / l0 - d0) / det)[:, None]
        return out

    def min_eig(self, x: np.ndarray) -> float:
        vals = [np.min(x[:self.nl])] if self.nl else []
        for X in self.blocks(x):
            vals.append(np.min(X[:, 0] - np.linalg.norm(X[:, 1:], axis=1)))
        return float(min(vals)) if vals else np.inf

    def interior(self, x: np.ndarray) -> bool:
        """Strict interior test used to safeguard steps."""
        if self.nl and not np.all(x[:self.nl] > 0):
            return False
        return all(np.all((X[:, 0] > 0) & (_jnorm(X) > 0)) for X in self.blocks(x))

    def max_step(self, x: np.ndarray, dx: np.ndarray) -> float:
        """Largest ``a`` with ``x + a dx`` in the cone (x interior)."""
        amax = np.inf
        if self.nl:
            dl = dx[:self.nl]
            neg = dl < 0
            if np.any(neg):
                amax = min(amax, float(np.min(-x[:self.nl][neg] / dl[neg])))
        for X, D in zip(self.blocks(x), self.blocks(dx)):
            nx = np.maximum(_jnorm(X), 1e-300)
            xb0 = X[:, 0] / nx
            xb1 = X[:, 1:] / nx[:, None]
            d0, d1 = D[:, 0], D[:, 1:]
            xb1d1 = np.sum(xb1 * d1, axis=1)
            r0 = (xb0 * d0 - xb1d1) / nx
            r1 = (d1 - xb1 * d0[:, None] + xb1 * (xb1d1 / (1.0 + xb0))[:, None]) / nx[:, None]
            t = np.linalg.norm(r1, axis=1) - r0
            pos = t > 0
            if np.any(pos):
                amax = min(amax, float(np.min(1.0 / t[pos])))
        return amax


class _Scaling:
    """Nesterov-Todd scaling ``W`` (symmetric) with ``W z = W^-1 s = lam``."""

    def __init__(self, cones: _Cones, s: np.ndarray, z: np.ndarray):
        self.cones = cones
        nl = cones.nl
        self.d = np.sqrt(s[:nl] / z[:nl])
        self.beta = []
        self.v = []
        self.lam_det = []
        lam_blocks = []
        for S, Z in zip(cones.blocks(s), cones.blocks(z)):
            ns = _jnorm(S)
            nz = _jnorm(Z)
            sb = S / ns[:, None]
            zb = Z / nz[:, None]
            gam = np.sqrt(0.5 * (1.0 + np.sum(sb * zb, axis=1)))
            wb = sb.copy()
            wb[:, 0] += zb[:, 0]
            wb[:, 1:] -= zb[:, 1:]
            wb /= (2.0 * gam)[:, None]
            v = wb.copy()
            v[:, 0] += 1.0
            v /= np.sqrt(2.0 * (wb[:, 0] + 1.0))[:, None]
            self.beta.append(np.sqrt(ns / nz))
            self.v.append(v)
            # scaled point lam = W z, formed from the normalized pair so that
            # its determinant ns * nz is exact
            lb = np.empty_like(sb)
            lb[:, 0] = gam
            lb[:, 1:] = ((gam + zb[:, 0])[:, None] * sb[:, 1:] + (gam + sb[:, 0])[:, None] * zb[:, 1:])
            lb[:, 1:] /= (sb[:, 0] + zb[:, 0] + 2.0 * gam)[:, None]
            lam_blocks.append(np.sqrt(ns * nz)[:, None] * lb)
            self.lam_det.append(ns * nz)
        self.lam = np.empty(cones.m)
        self.lam[:nl] = np.sqrt(s[:nl] * z[:nl])
        for (dim, st, k), lb in zip(cones.groups, lam_blocks):
            self.lam[st:st + dim * k] = lb.ravel()

    def apply(self, x: np.ndarray, inverse: bool = False) -> np.ndarray:
        """``W x`` (or ``W^-1 x``); ``x`` may be a vector or an (m, n) matrix."""
        cones = self.cones
        nl = cones.nl
        out = np.empty_like(x, dtype=float)
        if x.ndim == 1:
            out[:nl] = x[:nl] / self.d if inverse else x[:nl] * self.d
        else:
            out[:nl] = x[:nl] / self.d[:, None] if inverse else x[:nl] * self.d[:, None]
        for (dim, st, k), beta, v in zip(cones.groups, self.beta, self.v):
            blk = x[st:st + dim * k].reshape((k, dim) + x.shape[1:])
            jx = blk.copy()
            jx[:, 1:] *= -1.0
            if inverse:
                jv = v.copy()
                jv[:, 1:] *= -1.0
                # W^-1 = (2 J v v^T J - J) / beta
                a = np.einsum("kd,kd...->k...", jv, blk)
                res = 2.0 * np.einsum("kd,k...->kd...", jv, a) - jx
                res /= beta.reshape((k,) + (1,) * (res.ndim - 1))
            else:
                a = np.einsum("kd,kd...->k...", v, blk)
                res = 2.0 * np.einsum("kd,k...->kd...", v, a) - jx
                res *= beta.reshape((k,) + (1,) * (res.ndim - 1))
            out[st:st + dim * k] = res.reshape((dim * k,) + x.shape[1:])
        return out


# ----------------------------------------------------------------------
# residual evaluation shared by the solver and the certificate checker


def residuals(c, G, h, x, s, z) -> dict:
    """Residual and gap measures for a candidate primal-dual point."""
    pres_vec = G @ x + s - h
    dres_vec = G.T @ z + c
    pcost = float(c @ x)
    dcost = float(-h @ z)
    sz = float(s @ z)
    return {
        "primal_residual": float(np.linalg.norm(pres_vec) / max(1.0, np.linalg.norm(h))),
        "dual_residual": float(np.linalg.norm(dres_vec) / max(1.0, np.linalg.norm(c))),
        "gap": abs(sz) / max(1.0, abs(pcost)),
        "primal_objective": pcost,
        "dual_objective": dcost,
    }


def _cone_violation(cones: list[tuple[str, int]], v: np.ndarray, dual: bool) -> float:
    """Largest violation of cone membership (``dual`` selects ``K*``)."""
    worst = 0.0
    r = 0
    for kind, d in cones:
        blk = v[r:r + d]
        r += d
        if kind == "l":
            worst = max(worst, float(np.max(-blk)))
        elif kind == "q":
            worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
        else:
            a, b, w = blk[0], blk[1], blk[2:]
            scale = 0.5 if dual else 1.0
            # (a, b, w) -> (a + b, a - b, 2 scale w) lies in the standard SOC
            viol = np.hypot(a - b, 2.0 * scale * np.linalg.norm(w)) - (a + b)
            worst = max(worst, float(viol) / 2.0)
    return worst


# ----------------------------------------------------------------------


def solve(prog, options: SolverOptions | None = None) -> ConicSolution:
    """Solve a :class:`ConicProgram` (or a ``(c, G, h, cones)`` tuple)."""
    opts = options or SolverOptions()
    if isinstance(prog, ConicProgram):
        c, G, h, cone_list = prog.canonical()
        c0 = prog.objective.const
    else:
        c, G, h, cone_list = prog
        c = np.asarray(c, float)
        G = np.asarray(G, float)
        h = np.asarray(h, float)
        c0 = 0.0
    if opts.equilibrate:
        D, E = _equilibrate(G, cone_list)
    else:
        D, E = np.ones(G.shape[1]), np.ones(G.shape[0])
    if opts.factorization == "auto":
        sol = _solve(c, G, h, cone_list, replace(opts, factorization="cholesky"), D, E)
        if sol.status not in (OPTIMAL, PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
            careful = replace(opts, factorization="qr", refine_steps=max(opts.refine_steps, 10),
                              step_fraction=min(opts.step_fraction, 0.95))
            retry = _solve(c, G, h, cone_list, careful, D, E)
            retry.info["retried"] = True
            if retry.status in (OPTIMAL, PRIMAL_INFEASIBLE, DUAL_INFEASIBLE) or sol.status not in SOLVED:
                sol = retry
    else:
        sol = _solve(c, G, h, cone_list, opts, D, E)
    sol.primal_objective += c0
    sol.dual_objective += c0
    return sol


def _equilibrate(G: np.ndarray, cone_list, iters: int = 15, bound: float = 1e3):
    """Ruiz scaling: column factors ``D`` and row factors ``E`` (constant on
    each second-order block) so that ``E G D`` has rows and columns of
    comparable infinity norm."""
    m, n = G.shape
    D = np.ones(n)
    E = np.ones(m)
    starts, block_of = [], np.empty(m, dtype=int)
    r = 0
    for kind, d in cone_list:
        if kind == "l":
            block_of[r:r + d] = np.arange(len(starts), len(starts) + d)
            starts.extend(range(r, r + d))
        else:
            block_of[r:r + d] = len(starts)
            starts.append(r)
        r += d
    starts = np.asarray(starts, dtype=int)
    A = np.abs(G)
    for _ in range(iters):
        S = A * E[:, None] * D[None, :]
        col = S.max(axis=0, initial=0.0)
        row = np.maximum.reduceat(S.max(axis=1, initial=0.0), starts)[block_of] if m else np.zeros(0)
        dc = np.where(col > 0, 1.0 / np.sqrt(np.where(col > 0, col, 1.0)), 1.0)
        de = np.where(row > 0, 1.0 / np.sqrt(np.where(row > 0, row, 1.0)), 1.0)
        D = np.clip(D * dc, 1.0 / bound, bound)
        E = np.clip(E * de, 1.0 / bound, bound)
    return D, E


def _solve(c, G, h, cone_list, opts: SolverOptions, D=None, E=None) -> ConicSolution:
    """Homogeneous interior-point method on the scaled data ``(D c, E G D, E h)``.

    Stopping tests and the reported solution refer to the unscaled data.
    """
    m, n = G.shape
    D = np.ones(n) if D is None else D
    E = np.ones(m) if E is None else E
    c_o, G_o, h_o = c, G, h
    c = D * c
    G = E[:, None] * G * D[None, :]
    h = E * h
    cones = _Cones(cone_list)
    Gi = cones.to_internal(G)
    hi = cones.to_internal(h)
    e = cones.identity()
    nu = cones.degree

    def give_up(status, it, **info):
        merit, xb, sb, zb, _ = best
        if merit <= opts.inaccurate_tol:
            return finish(OPTIMAL_INACCURATE, xb, sb, zb, it, fallback_from=status, **info)
        # a reduced-accuracy infeasibility certificate beats no answer
        for kind, cert in (("z", best_pinf), ("x", best_dinf)):
            if cert is not None and cert[0] <= opts.inaccurate_tol:
                st = PRIMAL_INFEASIBLE if kind == "z" else DUAL_INFEASIBLE
                return finish(st, *cert[1:], it, certificate=kind, inaccurate=True, fallback_from=status, **info)
        return finish(status, xb, sb, zb, it, **info)

    def finish(status, x, s, z, it, **info):
        x_u = D * x
        s_u = cones.primal_to_user(s) / E
        z_u = cones.dual_to_user(z) * E
        res = residuals(c_o, G_o, h_o, x_u, s_u, z_u)
        return ConicSolution(status=status, x=x_u, s=s_u, z=z_u, iterations=it, info=info, **res)

    def factor(Gs):
        """Factor of ``Gs^T Gs + reg I``: Cholesky of the normal matrix, or a
        QR of ``[Gs; sqrt(reg) I]`` which avoids squaring the condition number."""
        scale = max(1.0, float(np.max(np.sum(Gs * Gs, axis=0)))) if n else 1.0
        for attempt in range(5):
            reg = opts.regularization * (1.0 if attempt == 0 else scale * 100.0 ** (attempt - 1))
            if opts.factorization == "cholesky":
                try:
                    L = sla.cholesky(Gs.T @ Gs + reg * np.eye(n), lower=False, check_finite=False)
                except (np.linalg.LinAlgError, sla.LinAlgError):
                    continue
            else:
                L = sla.qr(np.vstack([Gs, math.sqrt(reg) * np.eye(n)]), mode="r", check_finite=False)[0][:n]
            d = np.abs(np.diag(L))
            if np.all(np.isfinite(L)) and d.min(initial=1.0) > 1e-14 * d.max(initial=1.0):
                return Gs, L
        raise np.linalg.LinAlgError("normal equations not positive definite")

    def msolve(Gs, R, r):
        def apply_inv(v):
            y = dtrtrs(R, v, lower=0, trans=1)[0]
            return dtrtrs(R, y, lower=0, trans=0)[0]
        x = apply_inv(r)
        for _ in range(opts.refine_steps):
            x = x + apply_inv(r - Gs.T @ (Gs @ x))
        return x

    # --- starting point: least-squares projections, shifted into the cone
    try:
        M0, cf0 = factor(Gi)
    except np.linalg.LinAlgError:
        return finish(NUMERICAL_FAILURE, np.zeros(n), e.copy(), e.copy(), 0, reason="initial factorization")
    x = msolve(M0, cf0, Gi.T @ hi)
    s = hi - Gi @ x
    z = -Gi @ msolve(M0, cf0, c)
    for v in (s, z):
        ts = -cones.min_eig(v)
        if ts >= -1e-8 * max(1.0, np.linalg.norm(v)):
            v += (1.0 + ts) * e
    tau, kappa = 1.0, 1.0

    hnorm = max(1.0, np.linalg.norm(h_o))
    cnorm = max(1.0, np.linalg.norm(c_o))
    best = None
    best_pinf = best_dinf = None     # (residual, x, s, z) of the best ray seen
    last_gain = 0
    for it in range(opts.max_iter + 1):
        rx = Gi.T @ z + c * tau
        rz = Gi @ x + s - hi * tau
        cx = float(c @ x)
        hz = float(hi @ z)
        rt = kappa + cx + hz
        sz = float(s @ z)
        mu = (sz + tau * kappa) / (nu + 1)

        xs, ss, zs = x / tau, s / tau, z / tau
        pres = np.linalg.norm(cones.primal_to_user(rz / tau) / E) / hnorm
        dres = np.linalg.norm(rx / tau / D) / cnorm
        gap = abs(sz) / tau ** 2 / max(1.0, abs(cx / tau))
        merit = max(pres, dres, gap)
        log.debug("it %3d pres %.2e dres %.2e gap %.2e tau %.2e kappa %.2e hz %.2e cx %.2e",
                  it, pres, dres, gap, tau, kappa, hz, cx)
        if best is None or merit < best[0]:
            improved = best is None or merit < 0.5 * best[4]
            best = (merit, xs.copy(), ss.copy(), zs.copy(), merit if improved else best[4])
            if improved:
                last_gain = it
        if pres <= opts.feas_tol and dres <= opts.feas_tol and gap <= opts.gap_tol:
            return finish(OPTIMAL, xs, ss, zs, it)
        if hz < 0:
            pinf = np.linalg.norm((Gi.T @ z) / D) / (-hz)
            if best_pinf is None or pinf < best_pinf[0]:
                best_pinf = (pinf, x / (-hz), s / (-hz), z / (-hz))
            if pinf <= opts.feas_tol:
                return finish(PRIMAL_INFEASIBLE, x / (-hz), s / (-hz), z / (-hz), it,
                              certificate="z")
        if cx < 0:
            dinf = np.linalg.norm(cones.primal_to_user(Gi @ x + s) / E) / (-cx)
            if best_dinf is None or dinf < best_dinf[0]:
                best_dinf = (dinf, x / (-cx), s / (-cx), z / (-cx))
            if dinf <= opts.feas_tol:
                return finish(DUAL_INFEASIBLE, x / (-cx), s / (-cx), z / (-cx), it,
                              certificate="x")
        if it == opts.max_iter:
            break
        if it - last_gain >= opts.stall_window:
            return give_up(MAX_ITER, it, stalled=True)

        try:
            W = _Scaling(cones, s, z)
            Gs = W.apply(Gi, inverse=True)
            M, cf = factor(Gs)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            return give_up(NUMERICAL_FAILURE, it, reason="factorization")
        lam = W.lam

        def kkt(r1, r2):
            """Solve ``G^T z = r1``, ``G x - W^2 z = r2`` through the normal equations."""
            r2s = W.apply(r2, inverse=True)
            xk = msolve(M, cf, r1 + Gs.T @ r2s)
            return xk, W.apply(Gs @ xk - r2s, inverse=True)

        x2, z2 = kkt(-c, hi)
        den = float(c @ x2 + hi @ z2) - kappa / tau

        def newton(sig, dcomp, dk):
            u = cones.inv_product(lam, dcomp, W.lam_det)
            b1 = -(1.0 - sig) * rx
            b2 = -(1.0 - sig) * rz - W.apply(u)
            b3 = -(1.0 - sig) * rt - dk / tau
            x1, z1 = kkt(b1, b2)
            dtau = (b3 - float(c @ x1) - float(hi @ z1)) / den
            dx = x1 + x2 * dtau
            dz = z1 + z2 * dtau
            ds = W.apply(u - W.apply(dz))
            dkap = (dk - kappa * dtau) / tau
            return dx, ds, dz, dtau, dkap

        def step_len(ds, dz, dtau, dkap):
            a = min(cones.max_step(s, ds), cones.max_step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kappa / dkap)
            return a

        lamsq = cones.product(lam, lam)
        dxa, dsa, dza, dta, dka = newton(0.0, -lamsq, -tau * kappa)
        aa = min(1.0, step_len(dsa, dza, dta, dka))
        sig = (1.0 - aa) ** 3
        corr = cones.product(W.apply(dsa, inverse=True), W.apply(dza))
        dcomp = -lamsq - corr + sig * mu * e
        dk = -tau * kappa - dta * dka + sig * mu
        dx, ds, dz, dt, dkap = newton(sig, dcomp, dk)
        a = min(1.0, opts.step_fraction * step_len(ds, dz, dt, dkap))
        if not np.isfinite(a) or a <= 1e-14:
            return give_up(NUMERICAL_FAILURE, it, reason="step length collapsed")
        for _ in range(30):
            if cones.interior(s + a * ds) and cones.interior(z + a * dz):
                break
            a *= 0.5
        x = x + a * dx
        s = s + a * ds
        z = z + a * dz
        tau += a * dt
        kappa += a * dkap
        if not (np.all(np.isfinite(x)) and tau > 0 and kappa >= 0):
            return give_up(NUMERICAL_FAILURE, it, reason="non-finite iterate")

    return give_up(MAX_ITER, opts.max_iter)


def check_certificate(prog, sol: ConicSolution, tol: float = 1e-8) -> dict:
    """Recompute residuals, gap and cone membership of ``sol`` from scratch.

    Returns a report dict; ``report["ok"]`` tells whether the solution meets
    ``tol`` for its status and ``report["mismatch"]`` whether the recomputed
    values differ from the solver-reported ones by more than 1e-10.
    """
    if isinstance(prog, ConicProgram):
        c, G, h, cones = prog.canonical()
    else:
        c, G, h, cones = prog
    x, s, z = sol.x, sol.s, sol.z
    rep = residuals(c, G, h, x, s, z)
    rep["primal_cone_violation"] = _cone_violation(cones, s, dual=False)
    rep["dual_cone_violation"] = _cone_violation(cones, z, dual=True)
    rep["status"] = sol.status
    mismatch = max(
        abs(rep["primal_residual"] - sol.primal_residual),
        abs(rep["dual_residual"] - sol.dual_residual),
        abs(rep["gap"] - sol.gap),
    )
    rep["mismatch"] = mismatch > 1e-10
    if sol.status in SOLVED:
        rep["ok"] = (rep["primal_residual"] <= tol and rep["dual_residual"] <= tol
                     and rep["gap"] <= tol and rep["primal_cone_violation"] <= tol
                     and rep["dual_cone_violation"] <= tol)
    elif sol.status == PRIMAL_INFEASIBLE:
        # Farkas: z in K*, G^T z = 0, h^T z = -1
        rep["farkas_residual"] = float(np.linalg.norm(G.T @ z))
        rep["farkas_objective"] = float(h @ z)
        rep["ok"] = (rep["farkas_residual"] <= tol * max(1.0, np.linalg.norm(c)) * 10
                     and rep["farkas_objective"] < 0 and rep["dual_cone_violation"] <= tol)
    elif sol.status == DUAL_INFEASIBLE:
        rep["ray_residual"] = float(np.linalg.norm(G @ x + s))
        rep["ray_objective"] = float(c @ x)
        rep["ok"] = (rep["ray_objective"] < 0 and rep["primal_cone_violation"] <= tol
                     and rep["ray_residual"] <= tol * max(1.0, np.linalg.norm(h)) * 10)
    else:
        rep["ok"] = False
    return rep
