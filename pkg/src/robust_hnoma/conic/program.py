"""Cone-program representation.

Programs are stored in the canonical form

    minimize    c^T x + c0
    subject to  h - G x in K

where ``K`` is an ordered product of nonnegative orthants (``"l"``),
second-order cones (``"q"``, ``||x_1|| <= x_0``) and rotated second-order
cones (``"r"``, ``a * b >= ||v||^2`` with ``a, b >= 0``).

Constraints are written with :class:`Affine` expressions: a block is a list
of affine rows whose values must lie in the block's cone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CONE_KINDS = ("l", "q", "r")
DUMP_HEADER = "# conic-program v1"


class Affine:
    """Sparse affine expression ``const + sum(coef * x[idx])``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict[int, float] | None = None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @classmethod
    def constant(cls, value: float) -> Affine:
        return cls(None, value)

    def copy(self) -> Affine:
        return Affine(self.terms, self.const)

    def _combine(self, other, sign: float) -> Affine:
        out = self.copy()
        if isinstance(other, Affine):
            for k, v in other.terms.items():
                out.terms[k] = out.terms.get(k, 0.0) + sign * v
            out.const += sign * other.const
        else:
            out.const += sign * float(other)
        return out

    def __add__(self, other) -> Affine:
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other) -> Affine:
        return self._combine(other, -1.0)

    def __rsub__(self, other) -> Affine:
        return (-self)._combine(other, 1.0)

    def __neg__(self) -> Affine:
        return self * -1.0

    def __mul__(self, k) -> Affine:
        k = float(k)
        return Affine({i: k * v for i, v in self.terms.items()}, k * self.const)

    __rmul__ = __mul__

    def __truediv__(self, k) -> Affine:
        return self * (1.0 / float(k))

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[i] for i, v in self.terms.items())

    def __repr__(self) -> str:
        parts = [f"{v:+g}*x{i}" for i, v in sorted(self.terms.items())]
        return f"Affine({self.const:g} {' '.join(parts)})"


def affine_sum(items: Iterable[Affine | float]) -> Affine:
    out = Affine()
    for it in items:
        out = out + it
    return out


@dataclass
class ConeBlock:
    kind: str
    rows: list[Affine]
    label: str = ""


@dataclass
class ConicProgram:
    """Builder and container for a cone-constrained linear program."""

    names: list[str] = field(default_factory=list)
    objective: Affine = field(default_factory=Affine)
    blocks: list[ConeBlock] = field(default_factory=list)

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_rows(self) -> int:
        return sum(len(b.rows) for b in self.blocks)

    def add_variable(self, name: str) -> Affine:
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"invalid variable name {name!r}")
        self.names.append(name)
        return Affine({len(self.names) - 1: 1.0})

    def index(self, name: str) -> int:
        return self.names.index(name)

    def minimize(self, expr: Affine) -> None:
        self.objective = expr.copy()

    def add_block(self, kind: str, rows: Sequence[Affine | float], label: str = "") -> None:
        if kind not in CONE_KINDS:
            raise ValueError(f"unknown cone kind {kind!r}")
        rows = [r if isinstance(r, Affine) else Affine.constant(r) for r in rows]
        if not rows:
            raise ValueError("empty cone block")
        if kind == "q" and len(rows) < 2:
            raise ValueError("second-order cone needs at least 2 rows")
        if kind == "r" and len(rows) < 3:
            raise ValueError("rotated cone needs at least 3 rows")
        n = self.num_vars
        for r in rows:
            for i, v in r.terms.items():
                if not 0 <= i < n:
                    raise ValueError(f"row references unknown variable {i}")
                if not np.isfinite(v):
                    raise ValueError("non-finite coefficient")
            if not np.isfinite(r.const):
                raise ValueError("non-finite constant")
        self.blocks.append(ConeBlock(kind, list(rows), label))

    # ------------------------------------------------------------------
    # canonical data

    def canonical(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[tuple[str, int]]]:
        """Return ``(c, G, h, cones)`` with ``h - G x`` in ``K``."""
        n = self.num_vars
        m = self.num_rows
        c = np.zeros(n)
        for i, v in self.objective.terms.items():
            c[i] += v
        G = np.zeros((m, n))
        h = np.zeros(m)
        cones = []
        r = 0
        for blk in self.blocks:
            for row in blk.rows:
                h[r] = row.const
                for i, v in row.terms.items():
                    G[r, i] -= v
                r += 1
            cones.append((blk.kind, len(blk.rows)))
        return c, G, h, cones

    def row_values(self, x: np.ndarray) -> np.ndarray:
        c, G, h, _ = self.canonical()
        return h - G @ x

    # ------------------------------------------------------------------
    # debug text format

    def dump(self) -> str:
        lines = [DUMP_HEADER, f"vars {self.num_vars}"]
        lines += [f"var {i} {name}" for i, name in enumerate(self.names)]
        lines.append("objective " + _fmt_affine(self.objective))
        for blk in self.blocks:
            label = blk.label if blk.label else "-"
            lines.append(f"block {blk.kind} {len(blk.rows)} {label}")
            lines += ["row " + _fmt_affine(row) for row in blk.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> ConicProgram:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != DUMP_HEADER:
            raise ValueError("missing conic-program header")
        prog = cls()
        it = iter(lines[1:])
        head = next(it).split()
        if head[0] != "vars":
            raise ValueError("expected 'vars' line")
        nvars = int(head[1])
        for k in range(nvars):
            tok = next(it).split(maxsplit=2)
            if tok[0] != "var" or int(tok[1]) != k:
                raise ValueError(f"bad variable line {k}")
            prog.names.append(tok[2])
        tok = next(it)
        if not tok.startswith("objective "):
            raise ValueError("expected objective line")
        prog.objective = _parse_affine(tok[len("objective "):])
        for ln in it:
            tok = ln.split()
            if tok[0] != "block":
                raise ValueError(f"unexpected line {ln!r}")
            kind, nrows = tok[1], int(tok[2])
            label = "" if tok[3] == "-" else tok[3]
            rows = []
            for _ in range(nrows):
                rl = next(it)
                if not rl.startswith("row "):
                    raise ValueError(f"expected row line, got {rl!r}")
                rows.append(_parse_affine(rl[4:]))
            prog.add_block(kind, rows, label)
        return prog


def _fmt_affine(a: Affine) -> str:
    parts = [repr(float(a.const))]
    parts += [f"{i}:{float(v)!r}" for i, v in sorted(a.terms.items())]
    return " ".join(parts)


def _parse_affine(s: str) -> Affine:
    tok = s.split()
    terms = {}
    for t in tok[1:]:
        i, v = t.split(":")
        terms[int(i)] = float(v)
    return Affine(terms, float(tok[0]))


def add_linear(prog: ConicProgram, rows: Sequence[Affine | float], label: str = "") -> ConicProgram:
    """Append rows that must each be nonnegative."""
    prog.add_block("l", rows, label)
    return prog


def add_soc(prog: ConicProgram, t: Affine | float, xs: Sequence[Affine | float], label: str = "") -> ConicProgram:
    """Append ``||xs||_2 <= t``."""
    prog.add_block("q", [t, *xs], label)
    return prog


def add_rsoc(prog: ConicProgram, a: Affine | float, b: Affine | float,
             vs: Sequence[Affine | float], label: str = "") -> ConicProgram:
    """Append ``a * b >= ||vs||^2`` with ``a, b >= 0``.

    ``v**2 / w <= q`` is encoded as ``add_rsoc(prog, w, q, [v])``.
    """
    prog.add_block("r", [a, b, *vs], label)
    return prog
