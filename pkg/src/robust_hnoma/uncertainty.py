"""Polyhedral and ball uncertainty sets with exact worst-case oracles.

A polyhedral set is ``{g : A g >= -l, B g <= u}``; a ball set is
``{g : ||g||_2 <= rho}``. The oracles here are exact and are used both by the
OMA baselines and as ground truth for the dual reformulations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import Delaunay

MEMBERSHIP_TOL = 1e-12


class UnboundedSetError(ValueError):
    pass


@dataclass(frozen=True)
class PolySet:
    A: np.ndarray
    B: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        l = np.atleast_1d(np.asarray(self.l, dtype=float))
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        L = l.size
        if A.shape != (L, L) or B.shape != (L, L) or u.size != L:
            raise ValueError("PolySet dimensions are inconsistent")
        if np.any(l < 0) or np.any(u < 0):
            raise ValueError("l and u must be nonnegative")
        for arr in (A, B, l, u):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "u", u)

    @property
    def dim(self) -> int:
        return self.l.size

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.A == np.diag(np.diag(self.A)))
                    and np.all(self.B == np.diag(np.diag(self.B))))

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact coordinate box of a diagonal set."""
        if not self.is_diagonal:
            raise ValueError("box() requires diagonal A and B")
        return -self.l / np.diag(self.A), self.u / np.diag(self.B)

    def constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked form ``C g <= d``."""
        return np.vstack([-self.A, self.B]), np.concatenate([self.l, self.u])

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "l": self.l.tolist(), "u": self.u.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> PolySet:
        return cls(np.array(d["A"]), np.array(d["B"]), np.array(d["l"]), np.array(d["u"]))


@dataclass(frozen=True)
class BallSet:
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("ball radius must be nonnegative")


def _check_sense(sense: str) -> None:
    if sense not in ("min", "max"):
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")


def is_bounded(s: PolySet) -> bool:
    if s.is_diagonal:
        return bool(np.all(np.diag(s.A) > 0) and np.all(np.diag(s.B) > 0))
    C, d = s.constraints()
    for i in range(s.dim):
        for sign in (1.0, -1.0):
            c = np.zeros(s.dim)
            c[i] = -sign
            res = linprog(c, A_ub=C, b_ub=d, bounds=[(None, None)] * s.dim, method="highs")
            if res.status == 3:
                return False
    return True


def vertices(s: PolySet, tol: float = 1e-9) -> np.ndarray:
    """All vertices of a bounded polyhedral set (rows of the result)."""
    if s.is_diagonal:
        lo, hi = s.box()
        return np.array(list(itertools.product(*zip(lo, hi))))
    if not is_bounded(s):
        raise UnboundedSetError("polyhedral set is unbounded")
    C, d = s.constraints()
    L = s.dim
    out = []
    for idx in itertools.combinations(range(2 * L), L):
        Ci = C[list(idx)]
        if abs(np.linalg.det(Ci)) < 1e-12 * max(1.0, np.abs(Ci).max() ** L):
            continue
        g = np.linalg.solve(Ci, d[list(idx)])
        if np.all(C @ g <= d + tol * np.maximum(1.0, np.abs(d))):
            out.append(g)
    if not out:
        raise UnboundedSetError("no vertices found; set may be empty or unbounded")
    V = np.array(out)
    # drop duplicates from degenerate vertices
    keep = []
    for v in V:
        if not any(np.allclose(v, w, atol=1e-12, rtol=1e-10) for w in keep):
            keep.append(v)
    return np.array(keep)


def worst_linear_poly(c, s: PolySet, sense: str = "min") -> float:
    """Extremum of ``g^T c`` over the polyhedral set."""
    _check_sense(sense)
    c = np.asarray(c, dtype=float)
    if s.is_diagonal:
        lo, hi = s.box()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise UnboundedSetError("polyhedral set is unbounded")
        a, b = c * lo, c * hi
        return float(np.sum(np.minimum(a, b) if sense == "min" else np.maximum(a, b)))
    vals = vertices(s) @ c
    return float(vals.min() if sense == "min" else vals.max())


def worst_linear_ball(c, s: BallSet | float, sense: str = "min") -> float:
    """Extremum of ``g^T c`` over the ball (Cauchy-Schwarz)."""
    _check_sense(sense)
    rho = s.radius if isinstance(s, BallSet) else float(s)
    val = rho * float(np.linalg.norm(c))
    return -val if sense == "min" else val


def membership(s: PolySet | BallSet, g, tol: float = MEMBERSHIP_TOL) -> bool:
    g = np.asarray(g, dtype=float)
    if isinstance(s, BallSet):
        return bool(np.linalg.norm(g) <= s.radius + tol)
    return bool(np.all(s.A @ g >= -s.l - tol) and np.all(s.B @ g <= s.u + tol))


def bounding_box(s: PolySet) -> tuple[np.ndarray, np.ndarray]:
    if s.is_diagonal:
        return s.box()
    V = vertices(s)
    return V.min(axis=0), V.max(axis=0)


def sample_poly(s: PolySet, n: int, seed=None) -> np.ndarray:
    """Uniform samples from the polyhedral set, as an ``(n, L)`` array.

    Diagonal sets are boxes. Other sets are split into simplices by a
    Delaunay triangulation of their vertices; a simplex is picked with
    probability proportional to its volume and a point is drawn uniformly
    inside it (flat Dirichlet weights on its corners). Unlike rejection from
    the bounding box this stays efficient for thin sets.
    """
    rng = np.random.default_rng(seed)
    L = s.dim
    if n <= 0:
        return np.zeros((0, L))
    if s.is_diagonal:
        lo, hi = s.box()
        return rng.uniform(lo, hi, size=(n, L))
    V = vertices(s)
    if L == 1:
        return rng.uniform(V.min(), V.max(), size=(n, 1))
    simplices = V[Delaunay(V).simplices]                     # (k, L+1, L)
    vol = np.abs(np.linalg.det(simplices[:, 1:] - simplices[:, :1]))
    pick = rng.choice(len(simplices), size=n, p=vol / vol.sum())
    w = rng.dirichlet(np.ones(L + 1), size=n)
    return np.einsum("nk,nkl->nl", w, simplices[pick])


def sample_ball(radius: float, dim: int, n: int, seed=None) -> np.ndarray:
    """Uniform samples from the Euclidean ball of the given radius."""
    rng = np.random.default_rng(seed)
    if n <= 0:
        return np.zeros((0, dim))
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return g * r[:, None]


def gain_range(nominal: float, shift, s: PolySet) -> tuple[float, float]:
    """Range of ``nominal + g^T shift`` over the polyhedral set."""
    return (nominal + worst_linear_poly(shift, s, "min"),
            nominal + worst_linear_poly(shift, s, "max"))


def worst_gain_product(h_gain: float, g_gain: float, alpha, kappa, s: PolySet,
                       rho: float, sense: str = "min") -> float:
    """Exact extremum of ``(H + g1^T alpha)(G + g2^T kappa)``.

    ``g1`` ranges over the polyhedral set and ``g2`` over the ball of radius
    ``rho``. Each factor ranges over an interval independently, so the
    bilinear extremum sits at one of the four interval corners.
    """
    _check_sense(sense)
    x_lo, x_hi = gain_range(h_gain, alpha, s)
    r = rho * float(np.linalg.norm(kappa))
    corners = [a * b for a in (x_lo, x_hi) for b in (g_gain - r, g_gain + r)]
    return float(min(corners) if sense == "min" else max(corners))
