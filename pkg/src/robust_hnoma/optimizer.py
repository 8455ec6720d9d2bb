"""Penalized MM subproblem, the outer iteration, and baseline designs.

All optimization runs in normalized units: h-type gains (BS gains, their
shifts and the SIC residuals) are divided by ``g_ref = max |h_u|^2`` and
powers by ``p_ref = sigma^2 / g_ref``, which makes the noise power 1. Designs
are reported in Watts.

Variables of one subproblem (for every desired link ``(u, t)``, ``t <= u``):
``P`` (power), ``tr`` (rate share), ``eps`` (square root of the required
received power), ``w`` (interference-plus-noise bound), ``z`` (PWL bound on
``(2^tr - 1)^2``) and ``q`` (bound on ``w^2``). With per-user dual sharing
every interference link ``(j, t)``, ``j > t``, adds ``zeta``, ``y >= zeta^2``
and the penalty slack ``s``, and the dual vectors ``lam`` / ``om`` of the
safe reformulation are variables too. With per-link sharing (the default)
the duals are fixed at their optimum and the interference term of a link is
linear in its power, so those variables drop out.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .conic import Affine, ConicProgram, add_linear, add_rsoc, affine_sum, solve
from .conic.solver import PRIMAL_INFEASIBLE, SOLVED, SolverOptions
from .reformulation import build_coupling, optimal_duals, robust_lower_system, robust_upper_system
from .scenario import Scenario, validate_scenario
from .surrogates import agm_weight, build_pwl, tangent_quad_over_lin
from .uncertainty import gain_range, worst_linear_ball

log = logging.getLogger(__name__)

# run statuses
CONVERGED = "converged"
PENALIZED = "converged_penalized"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"
NUMERICAL = "numerical_failure"


class StructuralInfeasibility(RuntimeError):
    def __init__(self, links):
        super().__init__(f"worst-case gain is not positive on links {links}")
        self.links = links


@dataclass
class SolveParams:
    threshold: float = 3.0
    tau0: float = 1.0
    xi: float = 0.5
    tau_max: float = 150.0
    tol: float = 1e-3
    max_iter: int = 60
    p_floor: float = 1e-12
    pwl_segments: int = 32
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    dual_sharing: str = "per_link"
    init_margin: float = 10.0
    freeze_tau: bool = False
    slack_tol: float = 1e-7
    rate_freeze: float = 1e-6

    def validate(self) -> SolveParams:
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not 0 < self.tau0 <= self.tau_max:
            raise ValueError("need 0 < tau0 <= tau_max")
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if not self.tol > 0 or not self.p_floor > 0:
            raise ValueError("tol and p_floor must be positive")
        if self.dual_sharing not in ("per_user", "per_link"):
            raise ValueError("dual_sharing must be 'per_user' or 'per_link'")
        if self.pwl_segments < 1 or self.max_iter < 1:
            raise ValueError("pwl_segments and max_iter must be >= 1")
        return self

    def solver_options(self) -> SolverOptions:
        return SolverOptions(feas_tol=self.feas_tol, gap_tol=self.gap_tol)


@dataclass
class SubproblemState:
    """Expansion point in normalized units (arrays indexed ``[u, t]``)."""

    P: np.ndarray
    eps: np.ndarray
    zeta: np.ndarray
    rate: np.ndarray
    agm: np.ndarray
    tau: float
    n: int = 0
    active: np.ndarray = None       # False where a BackCom link is switched off

    def __post_init__(self):
        if self.active is None:
            self.active = np.ones(self.P.shape, dtype=bool)


@dataclass
class RobustDesign:
    method: str
    status: str
    power: np.ndarray               # (U, U) Watts, P[u, t] for t <= u
    rate_split: np.ndarray          # (U, U) b/s/Hz
    slack: np.ndarray = None        # (U, U) s[j, t] for j > t
    lam: dict = field(default_factory=dict)
    omega: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    message: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def num_users(self) -> int:
        return self.power.shape[0]

    @property
    def slot_power(self) -> np.ndarray:
        return np.diag(self.power).copy()

    @property
    def total_power(self) -> float:
        return float(np.sum(self.slot_power))

    @property
    def beta(self) -> np.ndarray:
        """Reflection coefficients ``P[u, t] / P[t, t]`` (t < u)."""
        U = self.num_users
        b = np.zeros((U, U))
        for u in range(U):
            for t in range(u):
                if self.power[t, t] > 0:
                    b[u, t] = self.power[u, t] / self.power[t, t]
        return b

    @property
    def max_slack(self) -> float:
        return 0.0 if self.slack is None or self.slack.size == 0 else float(np.max(self.slack, initial=0.0))

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def ok(self) -> bool:
        return self.status in (CONVERGED, PENALIZED, MAX_ITER) and np.isfinite(self.total_power)

    def to_dict(self) -> dict:
        return {
            "format": "robust-hnoma-design",
            "version": 1,
            "method": self.method,
            "status": self.status,
            "total_power_W": self.total_power,
            "power_W": self.power.tolist(),
            "beta": self.beta.tolist(),
            "rate_split": self.rate_split.tolist(),
            "slack": None if self.slack is None else self.slack.tolist(),
            "lam": self.lam,
            "omega": self.omega,
            "iterations": self.iterations,
            "trace": self.trace,
            "message": self.message,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> RobustDesign:
        if d.get("format") != "robust-hnoma-design":
            raise ValueError("not a design document")
        return cls(method=d["method"], status=d["status"], power=np.array(d["power_W"], dtype=float),
                   rate_split=np.array(d["rate_split"], dtype=float),
                   slack=None if d.get("slack") is None else np.array(d["slack"], dtype=float),
                   lam=d.get("lam", {}), omega=d.get("omega", {}), trace=d.get("trace", []),
                   message=d.get("message", ""), meta=d.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> RobustDesign:
        return cls.from_dict(json.loads(text))

    def trace_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["n", "objective", "objective_W", "total_power_W", "max_slack", "tau"])
        for row in self.trace:
            wr.writerow([row["n"], repr(row["objective"]), repr(row["objective_W"]), repr(row["total_power_W"]),
                         repr(row["max_slack"]), repr(row["tau"])])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ----------------------------------------------------------------------
# normalization


def normalize(s: Scenario) -> tuple[Scenario, float, float]:
    """Scenario in normalized units plus ``(g_ref, p_ref)``."""
    g_ref = float(np.max(s.h_gain))
    sn = s.replace(h_gain=s.h_gain / g_ref, alpha=s.alpha / g_ref, sic=s.sic / g_ref, noise_var=1.0)
    return sn, g_ref, s.noise_var / g_ref


def _bar_t(pwl, rate) -> float:
    """Square root of the PWL bound at ``rate`` (equals ``2^rate - 1`` at breakpoints)."""
    return math.sqrt(max(float(pwl(min(max(rate, 0.0), pwl.breakpoints[-1]))), 0.0))


def interference_noise(sn: Scenario, P: np.ndarray, zeta: np.ndarray, u: int, t: int) -> float:
    """``sum_{j=t}^{u-1} Pi[j,t] P[j,t] + sum_{j>u} zeta[j,t]^2 + noise`` (normalized)."""
    val = sn.noise_var
    for j in range(t, u):
        val += sn.sic[j, t] * P[j, t]
    for j in range(u + 1, sn.num_users):
        val += zeta[j, t] ** 2
    return float(val)


def _update_agm(sn: Scenario, st: SubproblemState, pwl) -> None:
    """AGM weights ``w / a`` at the expansion point.

    ``a`` is the rate factor ``sqrt(pwl(t))``, raised to at most
    ``_bar_t_floor`` on nearly idle links to keep the weights moderate. The
    raise never exceeds ``eps^2 / w``, so the expansion point stays feasible
    for the next subproblem.
    """
    U = sn.num_users
    agm = np.zeros((U, U))
    floor = _bar_t_floor(pwl)
    for u, t in sn.pairs():
        if not st.active[u, t]:
            continue
        w = interference_noise(sn, st.P, st.zeta, u, t)
        a = _bar_t(pwl, st.rate[u, t])
        a = max(a, min(floor, st.eps[u, t] ** 2 / w))
        agm[u, t] = agm_weight(a, w)
    st.agm = agm


# ----------------------------------------------------------------------
# subproblem


@dataclass
class VarMap:
    P: dict
    rate: dict
    eps: dict
    zeta: dict
    slack: dict
    lam: dict
    omega: dict


def build_subproblem(sn: Scenario, st: SubproblemState, p: SolveParams, pwl=None,
                     p_floor_norm: float | None = None,
                     penalty_scale: float = 1.0, duals: tuple | None = None) -> tuple[ConicProgram, VarMap]:
    """Penalized convex subproblem around the expansion point ``st``.

    With per-link dual sharing the dual rows of a link involve only that
    link's own dual vector, so the optimal duals do not depend on powers or
    rates. They are fixed at their per-link optimum (``duals``, from
    :func:`link_duals`, computed here when omitted) and the dual rows drop
    out of the program. This is exact: any feasible point of the full
    program stays feasible with the duals swapped for the cheapest ones.
    The certified interference bound of link ``(j, t)`` is then a constant
    ``upper_jt`` and the interference term is exactly ``upper_jt * P_jt``,
    so ``zeta``, its tangent row and the slack are not needed (the tangent
    of ``zeta^2 / P`` at a power near the floor has slopes near
    ``1 / P_floor`` and ruins the conditioning). Per-user sharing keeps the
    full structure.

    In per-user mode each slack is relative to the nominal gain of its link (the row reads
    ``... <= g(zeta, P) + G_jt * s``), so it is dimensionless. The penalty
    weight is ``tau * penalty_scale``; :func:`penalized_mm` passes the
    nominal orthogonal power :func:`penalty_power`, which makes ``tau``
    the price of a unit relative slack in units of that power.
    """
    U, L = sn.num_users, sn.error_dims
    if st.P.shape != (U, U):
        raise ValueError("expansion point does not match the scenario")
    pwl = pwl or build_pwl(p.threshold, p.pwl_segments)
    floor = p.p_floor if p_floor_norm is None else p_floor_norm
    T = p.threshold
    prog = ConicProgram()
    V = VarMap({}, {}, {}, {}, {}, {}, {})
    pairs = sn.pairs()
    ipairs = sn.interference_pairs()
    W, Z, Qv, Y = {}, {}, {}, {}
    y_n = {key: float(st.zeta[key]) ** 2 for key in ipairs}  # interference terms at the expansion point
    # a user whose BackCom links are all frozen has its own-slot rate pinned
    # by the split row; it enters as a constant so that the program keeps
    # strictly feasible points
    free = {(u, t) for u, t in pairs if st.active[u, t]
            and (t < u or any(st.active[u, k] for k in range(u)))}
    for u, t in pairs:
        V.P[u, t] = prog.add_variable(f"P[{u},{t}]")
        if (u, t) in free:
            V.rate[u, t] = prog.add_variable(f"t[{u},{t}]")
        elif t == u and st.active[u, u]:
            V.rate[u, t] = Affine.constant(T - float(sum(st.rate[u, k] for k in range(u))))
        else:
            V.rate[u, t] = Affine.constant(float(st.rate[u, t]))
        V.eps[u, t] = prog.add_variable(f"eps[{u},{t}]")
        if not st.active[u, t]:
            continue
        W[u, t] = prog.add_variable(f"w[{u},{t}]")
        Z[u, t] = prog.add_variable(f"z[{u},{t}]")
        Qv[u, t] = prog.add_variable(f"q[{u},{t}]")
    shared = p.dual_sharing == "per_user"
    if shared:
        for j, t in ipairs:
            V.zeta[j, t] = prog.add_variable(f"zeta[{j},{t}]")
            Y[j, t] = prog.add_variable(f"y[{j},{t}]")
            V.slack[j, t] = prog.add_variable(f"s[{j},{t}]")
    else:
        lam_fixed, om_fixed = duals if duals is not None else link_duals(sn)
        V.lam.update({key: [Affine.constant(float(v)) for v in lam_fixed[key]] for key in pairs})
        V.omega.update({key: [Affine.constant(float(v)) for v in om_fixed[key]] for key in ipairs})
        for j, t in ipairs:
            cd = build_coupling(j, t, sn)
            upper = (cd.const + sn.rho * float(np.linalg.norm(cd.b))
                     + float(sn.poly[j].u @ om_fixed[j, t]))
            Y[j, t] = upper * V.P[j, t]
            y_n[j, t] = upper * float(st.P[j, t])
    for u, t in pairs:
        key = u if shared else (u, t)
        if key not in V.lam:
            V.lam[key] = [prog.add_variable(f"lam[{_k(key)}][{w}]") for w in range(L)]
            add_linear(prog, V.lam[key], f"lam[{_k(key)}]>=0")
    for j, t in ipairs:
        key = j if shared else (j, t)
        if key not in V.omega:
            V.omega[key] = [prog.add_variable(f"om[{_k(key)}][{w}]") for w in range(L)]
            add_linear(prog, V.omega[key], f"om[{_k(key)}]>=0")

    prog.minimize(affine_sum(V.P[u, u] for u in range(U))
                  + (st.tau * penalty_scale) * affine_sum(V.slack.values()))

    # rate split
    for u in range(U):
        if (u, u) in free:
            add_linear(prog, [affine_sum(V.rate[u, t] for t in range(u + 1)) - T], f"split[{u}]")
    for u, t in pairs:
        if (u, t) in free:
            add_linear(prog, [V.rate[u, t], T - V.rate[u, t]], f"t-range[{u},{t}]")

    for u, t in pairs:
        cd = build_coupling(u, t, sn)
        lam_key = u if shared else (u, t)
        if shared:
            blk = robust_lower_system(u, t, cd, sn.poly[u], sn.rho)
            bind = {f"lam{w}": V.lam[lam_key][w] for w in range(L)}
            bind.update(eps=V.eps[u, t], P=V.P[u, t])
            blk.emit(prog, bind, include_sign=False, include_dual=True)
        else:
            # with fixed duals the margin is a number; the cone margin * P >= eps^2
            # is written with both sides near eps_n, since a lopsided rotated
            # cone loses its slack to cancellation
            margin = (cd.const - sn.rho * float(np.linalg.norm(cd.b))
                      - float(sn.poly[u].l @ lam_fixed[u, t]))
            c = max(float(st.eps[u, t]), 1e-6)
            add_rsoc(prog, (margin / c) * V.P[u, t], c, [V.eps[u, t]], f"lower[{u},{t}]:main")

        inter = Affine.constant(sn.noise_var)
        for j in range(t, u):
            inter = inter + float(sn.sic[j, t]) * V.P[j, t]
        for j in range(u + 1, U):
            inter = inter + Y[j, t]
        en = float(st.eps[u, t])
        if not st.active[u, t]:
            # frozen rate: eps_n (2 eps - eps_n) >= bar_t(r) * (interference + noise)
            bt = _bar_t(pwl, st.rate[u, t]) if st.rate[u, t] > 0 else 0.0
            if bt > 0:
                add_linear(prog, [2.0 * en * V.eps[u, t] - en * en - bt * inter], f"mm-frozen[{u},{t}]")
            continue

        # eps_n (2 eps - eps_n) >= (lam/2) z + q / (2 lam)
        lam = float(st.agm[u, t])
        add_linear(prog, [2.0 * en * V.eps[u, t] - en * en - (0.5 * lam) * Z[u, t] - (0.5 / lam) * Qv[u, t]],
                   f"mm[{u},{t}]")
        add_linear(prog, [Z[u, t] - (float(c) + float(k) * V.rate[u, t])
                          for c, k in zip(pwl.intercepts, pwl.slopes)], f"pwl[{u},{t}]")
        # q >= w^2 as (c)(q / c) >= w^2 with c near w, for a balanced cone
        w_n = (sn.noise_var + sum(float(sn.sic[j, t]) * float(st.P[j, t]) for j in range(t, u))
               + sum(y_n[j, t] for j in range(u + 1, U)))
        c = max(w_n, 1e-6)
        add_rsoc(prog, c, (1.0 / c) * Qv[u, t], [W[u, t]], f"q>=w^2[{u},{t}]")
        add_linear(prog, [W[u, t] - inter], f"w[{u},{t}]")

    for j, t in ipairs if shared else ():
        c = max(float(st.zeta[j, t]), 1e-6)
        add_rsoc(prog, c, (1.0 / c) * Y[j, t], [V.zeta[j, t]], f"y>=zeta^2[{j},{t}]")
        cd = build_coupling(j, t, sn)
        om_key = j if shared else (j, t)
        lin = tangent_quad_over_lin(float(st.zeta[j, t]), float(st.P[j, t]))
        blk = robust_upper_system(j, t, cd, sn.poly[j], sn.rho, lin)
        bind = {f"om{w}": V.omega[om_key][w] for w in range(L)}
        bind.update(zeta=V.zeta[j, t], P=V.P[j, t], s=float(cd.const) * V.slack[j, t])
        blk.emit(prog, bind, include_sign=False, include_dual=shared)
        add_linear(prog, [V.slack[j, t]], f"s>=0[{j},{t}]")

    for u, t in pairs:
        if t < u:
            add_linear(prog, [V.P[t, t] - V.P[u, t]], f"beta<=1[{u},{t}]")
        add_linear(prog, [V.P[u, t] - floor], f"floor[{u},{t}]")
    return prog, V


def _k(key) -> str:
    return str(key) if isinstance(key, int) else f"{key[0]},{key[1]}"


# ----------------------------------------------------------------------
# initial point and outer loop


def penalty_power(sn: Scenario, threshold: float) -> float:
    """Total power of the nominal orthogonal design: ``sum_u (2^T - 1) sigma^2 / |h_u|^2``."""
    return float((2.0 ** threshold - 1.0) * sn.noise_var * np.sum(1.0 / np.asarray(sn.h_gain)))


def link_duals(sn: Scenario) -> tuple[dict, dict]:
    """Per-link optimal dual vectors ``(lam[(u, t)], omega[(j, t)])``."""
    lam, om = {}, {}
    for u, t in sn.pairs():
        cd = build_coupling(u, t, sn)
        lam[(u, t)] = optimal_duals([cd], sn.poly[u], sn.rho, "lower")[1]
        if t < u:
            om[(u, t)] = optimal_duals([cd], sn.poly[u], sn.rho, "upper")[1]
    return lam, om


def certified_gains(sn: Scenario, sharing: str = "per_link") -> tuple[dict, dict]:
    """Gains the safe systems can certify: ``(lower[(u, t)], upper[(j, t)])``.

    ``lower`` is the largest certifiable worst-case gain of each desired link
    and ``upper`` the smallest certifiable bound on each interference link,
    using the dual sharing of the subproblem.
    """
    lower, upper = {}, {}
    U = sn.num_users
    for u in range(U):
        cds = [build_coupling(u, t, sn) for t in range(u + 1)]
        if sharing == "per_user":
            cost = optimal_duals(cds, sn.poly[u], sn.rho, "lower")[0]
            costs = [cost] * len(cds)
        else:
            costs = [optimal_duals([cd], sn.poly[u], sn.rho, "lower")[0] for cd in cds]
        for cd, cost in zip(cds, costs):
            lower[(u, cd.t)] = cd.const - sn.rho * float(np.linalg.norm(cd.b)) - cost
        ups = cds[:-1]
        if ups:
            if sharing == "per_user":
                ucosts = [optimal_duals(ups, sn.poly[u], sn.rho, "upper")[0]] * len(ups)
            else:
                ucosts = [optimal_duals([cd], sn.poly[u], sn.rho, "upper")[0] for cd in ups]
            for cd, cost in zip(ups, ucosts):
                upper[(u, cd.t)] = cd.const + sn.rho * float(np.linalg.norm(cd.b)) + cost
    return lower, upper


INIT_SHARE_FACTORS = (1.0, 0.5, 0.25, 0.1)
INIT_MARGINS_FALLBACK = (2.0, 1.0 + 1e-6)
BAR_T_FLOOR = 1e-3


def _bar_t_floor(pwl) -> float:
    """Smallest rate factor used in the AGM weight (keeps the weight finite)."""
    return BAR_T_FLOOR * _bar_t(pwl, pwl.breakpoints[-1])


def _start_powers(sn: Scenario, need: np.ndarray, lower: dict, upper: dict,
                  floor: float) -> np.ndarray | None:
    """Least total power with ``lower * P >= need * (SIC + interference + noise)``
    on every link; None if impossible."""
    U = sn.num_users
    prog = ConicProgram()
    P = {key: prog.add_variable(f"P[{key[0]},{key[1]}]") for key in sn.pairs()}
    prog.minimize(affine_sum(P[u, u] for u in range(U)))
    for u, t in sn.pairs():
        rows = [P[u, t] - floor]
        if need[u, t] > 0:
            inter = Affine.constant(sn.noise_var)
            for j in range(t, u):
                inter = inter + float(sn.sic[j, t]) * P[j, t]
            for j in range(u + 1, U):
                inter = inter + float(upper[(j, t)]) * P[j, t]
            rows.append(float(lower[(u, t)]) * P[u, t] - float(need[u, t]) * inter)
        add_linear(prog, rows, f"start[{u},{t}]")
        if t < u:
            add_linear(prog, [P[t, t] - P[u, t]], f"beta[{u},{t}]")
    sol = solve(prog)
    if sol.status not in SOLVED:
        return None
    out = np.zeros((U, U))
    for key, a in P.items():
        out[key] = max(float(a.value(sol.x)), floor)
    return out


def init_point(s: Scenario, p: SolveParams, normalized: bool = False,
               p_ref: float | None = None) -> SubproblemState:
    """Deterministic starting point that satisfies the safe constraint chain.

    Rate shares start at ``T / (u + 1)`` per slot. Powers are the cheapest
    ones meeting every robust SINR row with ``init_margin`` to spare, found
    by a small linear program. When that is impossible the BackCom shares
    are scaled down, then the margin is relaxed, and finally BackCom links
    are switched off (share fixed at 0) one at a time, weakest certified
    gain first. ``eps`` and ``zeta`` are set so that the rotated-cone and
    tangent rows hold with equality at the start. A normalized scenario
    needs its ``p_ref`` to place the power floor.
    """
    if normalized:
        if p_ref is None:
            raise ValueError("p_ref is required for a normalized scenario")
        sn = s
    else:
        sn, _, p_ref = normalize(s)
    U = sn.num_users
    diag = validate_scenario(sn)
    if not diag.ok:
        raise StructuralInfeasibility(diag.infeasible_links)
    lower, upper = certified_gains(sn, p.dual_sharing)
    bad = [k for k, v in lower.items() if not v > 0]
    if bad:
        raise StructuralInfeasibility(bad)
    floor = p.p_floor / p_ref
    pwl = build_pwl(p.threshold, p.pwl_segments)
    tfloor = _bar_t_floor(pwl)
    backcom = sorted((key for key in sn.pairs() if key[1] < key[0]), key=lambda k: lower[k])
    P = None
    for n_off in range(len(backcom) + 1):
        active = np.ones((U, U), dtype=bool)
        for key in backcom[:n_off]:
            active[key] = False
        for margin in (p.init_margin,) + INIT_MARGINS_FALLBACK:
            for f in INIT_SHARE_FACTORS:
                rate = np.zeros((U, U))
                for u in range(U):
                    on = [t for t in range(u) if active[u, t]]
                    share = f * p.threshold / (u + 1)
                    rate[u, on] = share
                    rate[u, u] = p.threshold - len(on) * share
                need = np.zeros((U, U))
                for key in sn.pairs():
                    if active[key]:
                        need[key] = margin * max(_bar_t(pwl, rate[key]), tfloor)
                P = _start_powers(sn, need, lower, upper, floor)
                if P is not None:
                    break
            if P is not None:
                break
        if P is not None:
            break
    if P is None:
        raise StructuralInfeasibility(["no starting point meets the robust rate rows"])
    eps = np.zeros((U, U))
    zeta = np.zeros((U, U))
    for u, t in sn.pairs():
        eps[u, t] = math.sqrt(lower[(u, t)] * P[u, t])
    for j, t in sn.interference_pairs():
        zeta[j, t] = math.sqrt(upper[(j, t)] * P[j, t])
    st = SubproblemState(P=P, eps=eps, zeta=zeta, rate=rate, agm=np.zeros((U, U)), tau=p.tau0,
                         active=active)
    _update_agm(sn, st, pwl)
    return st


def _lift_eps(sn: Scenario, eps: np.ndarray, P: np.ndarray, V: VarMap, x, sharing: str,
              couplings: dict) -> None:
    """Raise each ``eps`` to the largest value its extracted duals certify."""
    for (u, t), cd in couplings.items():
        key = u if sharing == "per_user" else (u, t)
        lam = np.array([float(a.value(x)) for a in V.lam[key]])
        margin = cd.const - sn.rho * float(np.linalg.norm(cd.b)) - float(sn.poly[u].l @ lam)
        eps[u, t] = max(eps[u, t], math.sqrt(max(P[u, t] * margin, 0.0)))


def penalized_mm(s: Scenario, p: SolveParams | None = None, init: SubproblemState | None = None,
                 method: str = "robust") -> RobustDesign:
    """Outer MM / penalty iteration; returns the design in Watts."""
    p = (p or SolveParams()).validate()
    sn, g_ref, p_ref = normalize(s)
    U = s.num_users
    meta = {"seed": s.meta.get("seed"), "threshold": p.threshold, "params": asdict(p),
            "p_ref": p_ref, "g_ref": g_ref}
    empty = np.zeros((U, U))
    try:
        st = init or init_point(sn, p, normalized=True, p_ref=p_ref)
    except StructuralInfeasibility as exc:
        return RobustDesign(method, INFEASIBLE, np.full((U, U), np.nan), empty, message=str(exc), meta=meta)
    if p.freeze_tau:
        st.tau = p.tau_max
    pwl = build_pwl(p.threshold, p.pwl_segments)
    floor = p.p_floor / p_ref
    opts = p.solver_options()
    couplings = {key: build_coupling(key[0], key[1], sn) for key in sn.pairs()}
    pscale = penalty_power(sn, p.threshold)
    duals = link_duals(sn) if p.dual_sharing == "per_link" else None
    upper_gain = certified_gains(sn, p.dual_sharing)[1]
    trace = []
    prev = None
    status, message = MAX_ITER, ""
    last = None
    for n in range(p.max_iter):
        prog, V = build_subproblem(sn, st, p, pwl, floor, pscale, duals)
        sol = solve(prog, opts)
        if sol.status not in SOLVED:
            status = INFEASIBLE if sol.status == PRIMAL_INFEASIBLE else NUMERICAL
            message = f"subproblem {n}: solver status {sol.status} ({sol.info})"
            log.warning(message)
            break
        x = sol.x
        val = lambda a: float(a.value(x))  # noqa: E731
        P = np.zeros((U, U))
        rate = np.zeros((U, U))
        eps = np.zeros((U, U))
        zeta = np.zeros((U, U))
        slack = np.zeros((U, U))
        for key in V.P:
            P[key] = max(val(V.P[key]), floor)
            rate[key] = val(V.rate[key])
            eps[key] = val(V.eps[key])
        for key in V.zeta:
            zeta[key] = val(V.zeta[key])
            slack[key] = max(val(V.slack[key]), 0.0)
        if not V.zeta:
            # per-link mode: the interference term is upper * P, i.e. zeta^2
            for key in sn.interference_pairs():
                zeta[key] = math.sqrt(upper_gain[key] * P[key])
        _lift_eps(sn, eps, P, V, x, p.dual_sharing, couplings)
        obj = float(sol.primal_objective)
        trace.append({"n": n, "objective": obj, "objective_W": obj * p_ref, "total_power_W": float(np.trace(P)) * p_ref,
                      "max_slack": float(slack.max(initial=0.0)), "tau": st.tau,
                      "solver_iterations": sol.iterations})
        last = (P, rate, slack, V, x)
        active = st.active.copy()
        for u, t in sn.pairs():
            if t < u and active[u, t] and rate[u, t] < p.rate_freeze:
                active[u, t] = False
                rate[u, t] = max(rate[u, t], 0.0)
                log.debug("freezing link (%d, %d) at rate %.3g", u, t, rate[u, t])
        st = SubproblemState(P=P, eps=eps, zeta=zeta, rate=rate, agm=st.agm, tau=st.tau, n=n + 1,
                             active=active)
        _update_agm(sn, st, pwl)
        if not p.freeze_tau:
            st.tau = min(st.tau / p.xi, p.tau_max)
        if prev is not None and abs(obj - prev) <= p.tol:
            status = CONVERGED
            break
        prev = obj
    if last is None:
        return RobustDesign(method, status, np.full((U, U), np.nan), empty, trace=trace, message=message, meta=meta)
    P, rate, slack, V, x = last
    if status == CONVERGED and slack.max(initial=0.0) > p.slack_tol:
        status = PENALIZED
    lam = {_k(k): [float(a.value(x)) for a in v] for k, v in V.lam.items()}
    omega = {_k(k): [float(a.value(x)) for a in v] for k, v in V.omega.items()}
    return RobustDesign(method, status, P * p_ref, rate, slack=slack, lam=lam, omega=omega,
                        trace=trace, message=message, meta=meta)


def solve_robust(s: Scenario, p: SolveParams | None = None) -> RobustDesign:
    return penalized_mm(s, p, method="robust")


def solve_nominal(s: Scenario, p: SolveParams | None = None) -> RobustDesign:
    """Same pipeline on the nominal channels (every uncertainty set collapsed)."""
    return penalized_mm(s.without_uncertainty(), p, method="nominal")


def solve_oma(s: Scenario, kind: str, p: SolveParams | None = None) -> RobustDesign:
    """Orthogonal baseline: each user meets the threshold alone in its own slot.

    ``kind="poly"`` uses the polyhedral worst case of ``|h_u|^2`` (OMA-I),
    ``kind="ball"`` the ball worst case (OMA-II).
    """
    p = (p or SolveParams()).validate()
    if kind not in ("poly", "ball"):
        raise ValueError("kind must be 'poly' or 'ball'")
    U = s.num_users
    power = np.zeros((U, U))
    rate = np.zeros((U, U))
    bad = []
    need = (2.0 ** p.threshold - 1.0) * s.noise_var
    for u in range(U):
        if kind == "poly":
            worst = gain_range(s.h_gain[u], s.alpha[u], s.poly[u])[0]
        else:
            worst = s.h_gain[u] + worst_linear_ball(s.alpha[u], s.rho, "min")
        if worst <= 0:
            bad.append(u)
            power[u, u] = np.inf
        else:
            power[u, u] = need / worst
        rate[u, u] = p.threshold
    method = "oma1" if kind == "poly" else "oma2"
    status = INFEASIBLE if bad else CONVERGED
    msg = f"worst-case gain not positive for users {bad}" if bad else ""
    return RobustDesign(method, status, power, rate, slack=np.zeros((U, U)), message=msg,
                        meta={"seed": s.meta.get("seed"), "threshold": p.threshold})


METHODS = {
    "robust": solve_robust,
    "nominal": solve_nominal,
    "oma1": lambda s, p=None: solve_oma(s, "poly", p),
    "oma2": lambda s, p=None: solve_oma(s, "ball", p),
}


def run_method(name: str, s: Scenario, p: SolveParams | None = None) -> RobustDesign:
    try:
        fn = METHODS[name]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None
    return fn(s, p)
