"""Duality-based safe counterparts of the bilinear gain constraints.

For a link ``(u, t)`` the true gain product is

    (H + g1^T alpha_u) (G + g2^T kappa_ut),   g1 in U^u (polyhedral), g2 in ball

The lower system certifies ``min product >= eps^2 / P`` through dual vectors
``lam_u`` of the polyhedral constraint ``A g1 >= -l``; the upper system
certifies ``max product <= g(zeta, P) + s`` through dual vectors ``omega_j``
of ``B g1 <= u``. Both systems are built as :class:`ConstraintBlock` objects
over a small local variable space and are bound to program variables when
emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import Affine, ConicProgram, add_linear, affine_sum, solve
from .conic.solver import SOLVED, SolverOptions
from .scenario import Scenario
from .surrogates import AffineSurrogate
from .uncertainty import PolySet


@dataclass(frozen=True)
class CouplingData:
    u: int
    t: int
    const: float         # H * G
    b: np.ndarray        # H * kappa_ut
    a: np.ndarray        # G * alpha_u
    Q: np.ndarray        # alpha_u kappa_ut^T
    q_norms: np.ndarray  # Euclidean norms of the rows of Q


def build_coupling(u: int, t: int, s: Scenario) -> CouplingData:
    """Coupling data of link ``(u, t)``; ``t == u`` is the own-slot link."""
    U = s.num_users
    if not (0 <= t <= u < U):
        raise IndexError(f"link ({u}, {t}) out of range for {U} users")
    H = float(s.h_gain[u])
    if t == u:
        G = 1.0
        kappa = np.zeros(s.error_dims)
    else:
        G = float(s.g_gain[u, t])
        kappa = np.array(s.kappa[u, t])
    alpha = np.array(s.alpha[u])
    Q = np.outer(alpha, kappa)
    return CouplingData(u=u, t=t, const=H * G, b=H * kappa, a=G * alpha, Q=Q,
                        q_norms=np.linalg.norm(Q, axis=1))


@dataclass
class ConstraintBlock:
    """Cone rows over local variables ``var_names``.

    ``cones`` is a list of ``(kind, rows, tag)`` with rows written as
    :class:`Affine` over local indices. ``tag`` is "main", "dual" or "sign".
    """

    label: str
    var_names: list
    cones: list = field(default_factory=list)

    def local(self, name: str) -> Affine:
        return Affine({self.var_names.index(name): 1.0})

    def emit(self, prog: ConicProgram, bind: dict, include_sign: bool = True,
             include_dual: bool = True) -> int:
        """Add the rows to ``prog`` with local names bound to program expressions.

        Names bound to numbers become constants. When the duals are bound to
        known feasible values, pass ``include_sign=False, include_dual=False``
        to drop the rows that no longer contain variables.
        """
        exprs = [bind[n] if isinstance(bind[n], Affine) else Affine.constant(bind[n]) for n in self.var_names]
        count = 0
        for kind, rows, tag in self.cones:
            if (tag == "sign" and not include_sign) or (tag == "dual" and not include_dual):
                continue
            mapped = []
            for r in rows:
                out = Affine.constant(r.const)
                for i, c in r.terms.items():
                    out = out + c * exprs[i]
                mapped.append(out)
            prog.add_block(kind, mapped, f"{self.label}:{tag}")
            count += len(rows)
        return count

    def violation(self, values: dict) -> float:
        """Largest cone violation at a point given by local-name values."""
        x = np.array([values[n] for n in self.var_names], dtype=float)
        worst = 0.0
        for kind, rows, _ in self.cones:
            v = np.array([r.value(x) for r in rows])
            if kind == "l":
                worst = max(worst, float(np.max(-v)))
            elif kind == "q":
                worst = max(worst, float(np.linalg.norm(v[1:]) - v[0]))
            else:
                a, b, w = v[0], v[1], v[2:]
                worst = max(worst, float(w @ w - a * b), float(-a), float(-b))
        return worst

    def dump(self) -> str:
        lines = [f"block {self.label}", "vars " + " ".join(self.var_names)]
        for kind, rows, tag in self.cones:
            lines.append(f"  cone {kind} [{tag}]")
            for r in rows:
                terms = " ".join(f"{c:+.17g}*{self.var_names[i]}" for i, c in sorted(r.terms.items()))
                lines.append(f"    {r.const:+.17g} {terms}".rstrip())
        return "\n".join(lines)


def _dual_rows(cd: CouplingData, mat: np.ndarray, rho: float, duals: list) -> list:
    """Rows ``-a^w - rho ||q^w|| + d^T M[:, w] >= 0`` for each w."""
    rows = []
    for w in range(cd.a.size):
        r = Affine.constant(-cd.a[w] - rho * cd.q_norms[w])
        for k, dk in enumerate(duals):
            if mat[k, w] != 0.0:
                r = r + mat[k, w] * dk
        rows.append(r)
    return rows


def robust_lower_system(u: int, t: int, cd: CouplingData, pset: PolySet, rho: float) -> ConstraintBlock:
    """Safe system for ``min |h_u|^2 |g_ut|^2 >= eps^2 / P``.

    Local variables: ``lam0..lam{L-1}``, ``eps``, ``P``.
    """
    L = cd.a.size
    names = [f"lam{w}" for w in range(L)] + ["eps", "P"]
    blk = ConstraintBlock(f"lower[{u},{t}]", names)
    lam = [blk.local(f"lam{w}") for w in range(L)]
    margin = Affine.constant(cd.const - rho * float(np.linalg.norm(cd.b)))
    for w in range(L):
        margin = margin - float(pset.l[w]) * lam[w]
    blk.cones.append(("r", [blk.local("P"), margin, blk.local("eps")], "main"))
    blk.cones.append(("l", _dual_rows(cd, pset.A, rho, lam), "dual"))
    blk.cones.append(("l", lam, "sign"))
    return blk


def robust_upper_system(j: int, t: int, cd: CouplingData, pset: PolySet, rho: float,
                        lin: AffineSurrogate, slack: bool = True) -> ConstraintBlock:
    """Safe system for ``max |h_j|^2 |g_jt|^2 <= g(zeta, P) + s``.

    ``lin`` is the tangent surrogate of ``zeta^2 / P``. Local variables:
    ``om0..om{L-1}``, ``zeta``, ``P``, ``s``. With ``slack=False`` the row
    is emitted without ``s`` (equivalent to binding ``s`` to 0).
    """
    L = cd.a.size
    names = [f"om{w}" for w in range(L)] + ["zeta", "P", "s"]
    blk = ConstraintBlock(f"upper[{j},{t}]", names)
    om = [blk.local(f"om{w}") for w in range(L)]
    c0, (gz, gp) = lin.coefficients()
    row = Affine.constant(c0 - cd.const - rho * float(np.linalg.norm(cd.b)))
    row = row + gz * blk.local("zeta") + gp * blk.local("P")
    if slack:
        row = row + blk.local("s")
    for w in range(L):
        row = row - float(pset.u[w]) * om[w]
    blk.cones.append(("l", [row], "main"))
    blk.cones.append(("l", _dual_rows(cd, pset.B, rho, om), "dual"))
    sign = list(om) + ([blk.local("s")] if slack else [])
    blk.cones.append(("l", sign, "sign"))
    return blk


def scale_coupling(cd: CouplingData, c: float) -> CouplingData:
    """Coupling data with every h-type quantity multiplied by ``c``.

    The gain product is linear in ``(H, alpha)``, so margins scale by ``c``.
    """
    return CouplingData(u=cd.u, t=cd.t, const=cd.const * c, b=cd.b * c, a=cd.a * c,
                        Q=cd.Q * c, q_norms=cd.q_norms * c)


def _unit_scale(cd: CouplingData) -> float:
    ref = max(abs(cd.const), float(np.max(np.abs(cd.a), initial=0.0)), 1e-300)
    return 1.0 / ref


def certified_lower_margin(cd: CouplingData, pset: PolySet, rho: float,
                           options: SolverOptions | None = None) -> float:
    """Largest ``m`` such that the lower system certifies ``min product >= m``.

    Found by fixing ``P = 1`` and maximizing ``eps`` subject to the emitted
    block, so the value is exactly what the system can certify. Returns
    ``-inf`` when no nonnegative margin is certifiable.
    """
    c = _unit_scale(cd)
    cd = scale_coupling(cd, c)
    blk = robust_lower_system(cd.u, cd.t, cd, pset, rho)
    prog = ConicProgram()
    bind = {n: prog.add_variable(n) for n in blk.var_names if n != "P"}
    bind["P"] = 1.0
    blk.emit(prog, bind)
    prog.minimize(-1.0 * bind["eps"])
    sol = solve(prog, options)
    if sol.status not in SOLVED:
        return -np.inf
    eps = sol.x[prog.index("eps")]
    return float(eps * eps) / c


def lower_margin_closed_form(cd: CouplingData, pset: PolySet, rho: float) -> float:
    """Certified margin for diagonal sets: each dual entry at its lower bound."""
    if not pset.is_diagonal:
        raise ValueError("closed form requires a diagonal set")
    need = np.maximum(cd.a + rho * cd.q_norms, 0.0) / np.diag(pset.A)
    return float(cd.const - rho * np.linalg.norm(cd.b) - need @ pset.l)


def certified_upper_bound(cd: CouplingData, pset: PolySet, rho: float,
                          options: SolverOptions | None = None) -> float:
    """Smallest value the upper system can certify as a bound on the max product."""
    c = _unit_scale(cd)
    cd = scale_coupling(cd, c)
    L = cd.a.size
    prog = ConicProgram()
    om = [prog.add_variable(f"om{w}") for w in range(L)]
    add_linear(prog, _dual_rows(cd, pset.B, rho, om), "dual")
    add_linear(prog, om, "sign")
    obj = Affine.constant(cd.const + rho * float(np.linalg.norm(cd.b)))
    for w in range(L):
        obj = obj + float(pset.u[w]) * om[w]
    prog.minimize(obj)
    sol = solve(prog, options)
    if sol.status not in SOLVED:
        return np.inf
    return float(sol.primal_objective) / c


def optimal_duals(cds: list, pset: PolySet, rho: float, side: str = "lower",
                  options: SolverOptions | None = None) -> tuple[float, np.ndarray]:
    """Cheapest dual vector ``d >= 0`` satisfying the dual rows of every link
    in ``cds`` at once: returns ``(d^T l, d)`` (lower) or ``(d^T u, d)`` (upper).

    A single entry in ``cds`` gives the per-link optimum; several entries
    give one dual vector shared by those links. Diagonal sets have the
    closed form ``d_w = max_k (a_w + rho ||q_w||)_k / M_ww``, clipped at 0.
    Returns ``(inf, nan)`` when no dual vector exists.
    """
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    mat, rhs_vec = (pset.A, pset.l) if side == "lower" else (pset.B, pset.u)
    if pset.is_diagonal:
        need = np.zeros(pset.dim)
        for cd in cds:
            need = np.maximum(need, (cd.a + rho * cd.q_norms) / np.diag(mat))
        return float(need @ rhs_vec), need
    c = min(_unit_scale(cd) for cd in cds)
    prog = ConicProgram()
    d = [prog.add_variable(f"d{w}") for w in range(pset.dim)]
    for cd in cds:
        add_linear(prog, _dual_rows(scale_coupling(cd, c), mat, rho, d), "dual")
    add_linear(prog, d, "sign")
    prog.minimize(affine_sum(float(rhs_vec[w]) * d[w] for w in range(pset.dim)))
    sol = solve(prog, options)
    if sol.status not in SOLVED:
        return np.inf, np.full(pset.dim, np.nan)
    vec = np.maximum(np.array([sol.x[prog.index(f"d{w}")] for w in range(pset.dim)]) / c, 0.0)
    return float(sol.primal_objective) / c, vec


def dual_cost(cds: list, pset: PolySet, rho: float, side: str = "lower",
              options: SolverOptions | None = None) -> float:
    """Cost part of :func:`optimal_duals`."""
    return optimal_duals(cds, pset, rho, side, options)[0]
