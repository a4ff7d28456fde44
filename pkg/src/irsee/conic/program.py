"""Standard-form cone programs over a flat real variable layout.

    minimize    c'x
    subject to  A x + s = b,   s in K1 x K2 x ...

Named Hermitian matrix blocks and scalar groups map onto the flat vector
through the isometric svec coordinates, so front-ends can state constraints
as trace inner products and plain linear expressions. A Hermitian variable
may carry a fixed diagonal, in which case only its off-diagonal coordinates
are decision variables and the diagonal entries live in the offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cones import EXP, HPSD, NONNEG, SOC, ZERO, Cone, smat, svec, triu_indices


class LinExpr:
    """Sparse affine expression sum_j coeff_j x_j + const."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs=None, const=0.0):
        self.coeffs = dict(coeffs) if coeffs else {}
        self.const = float(const)

    def add(self, idx, coeff):
        if coeff != 0.0:
            self.coeffs[idx] = self.coeffs.get(idx, 0.0) + float(coeff)
        return self

    def add_expr(self, other: "LinExpr", scale=1.0):
        for j, cj in other.coeffs.items():
            self.add(j, scale * cj)
        self.const += scale * other.const
        return self

    def scaled(self, scale):
        out = LinExpr(const=scale * self.const)
        for j, cj in self.coeffs.items():
            out.coeffs[j] = scale * cj
        return out

    def value(self, x):
        return self.const + sum(cj * x[j] for j, cj in self.coeffs.items())

    def __len__(self):
        return len(self.coeffs)


@dataclass
class VarInfo:
    name: str
    kind: str               # "herm" or "scalar"
    offset: int
    size: int               # number of flat coordinates occupied
    n: int = 0              # matrix side for herm blocks
    count: int = 0          # group length for scalar blocks
    fixed_diag: np.ndarray = None


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: list
    layout: dict = field(default_factory=dict)
    obj_offset: float = 0.0

    @property
    def n(self):
        return self.c.shape[0]

    @property
    def m(self):
        return self.b.shape[0]

    # -- named-block extraction -------------------------------------------
    def unpack(self, x: np.ndarray, name: str):
        info = self.layout[name]
        if info.kind == "scalar":
            vals = x[info.offset:info.offset + info.count]
            return float(vals[0]) if info.count == 1 else np.array(vals)
        full = np.empty(info.n * info.n)
        if info.fixed_diag is not None:
            full[:info.n] = info.fixed_diag
            full[info.n:] = x[info.offset:info.offset + info.size]
        else:
            full[:] = x[info.offset:info.offset + info.size]
        return smat(full, info.n)


class ProgramBuilder:
    """Accumulates variables, cone constraints, and the objective."""

    def __init__(self):
        self._vars = {}
        self._nvar = 0
        self._rows = []          # list of LinExpr, one per constraint row
        self._cones = []
        self._obj = LinExpr()

    # -- variables ---------------------------------------------------------
    def herm(self, name, n, fixed_diag=None):
        if name in self._vars:
            raise ValueError(f"duplicate variable {name}")
        if fixed_diag is not None:
            fixed_diag = np.full(n, float(fixed_diag)) if np.isscalar(fixed_diag) \
                else np.asarray(fixed_diag, dtype=float)
            size = n * n - n
        else:
            size = n * n
        self._vars[name] = VarInfo(name=name, kind="herm", offset=self._nvar,
                                   size=size, n=n, fixed_diag=fixed_diag)
        self._nvar += size
        return name

    def scalars(self, name, count=1):
        if name in self._vars:
            raise ValueError(f"duplicate variable {name}")
        self._vars[name] = VarInfo(name=name, kind="scalar", offset=self._nvar,
                                   size=count, count=count)
        self._nvar += count
        return name

    # -- expressions -------------------------------------------------------
    def var(self, name, i=0, coeff=1.0):
        info = self._vars[name]
        return LinExpr({info.offset + i: float(coeff)})

    def const(self, value):
        return LinExpr(const=value)

    def trace(self, name, G):
        """<G, X> for Hermitian G against Hermitian variable X."""
        info = self._vars[name]
        g = svec(G)
        e = LinExpr()
        if info.fixed_diag is not None:
            e.const += float(g[:info.n] @ info.fixed_diag)
            coeffs = g[info.n:]
        else:
            coeffs = g
        for j, cj in enumerate(coeffs):
            if cj != 0.0:
                e.add(info.offset + j, cj)
        return e

    def tr(self, name):
        """Trace of a Hermitian variable."""
        info = self._vars[name]
        if info.fixed_diag is not None:
            return LinExpr(const=float(info.fixed_diag.sum()))
        return LinExpr({info.offset + i: 1.0 for i in range(info.n)})

    def entries(self, name):
        """One LinExpr per svec coordinate of a Hermitian variable
        (fixed-diagonal coordinates come back as constants)."""
        info = self._vars[name]
        if info.fixed_diag is not None:
            out = [LinExpr(const=d) for d in info.fixed_diag]
        else:
            out = []
        out.extend(LinExpr({info.offset + j: 1.0}) for j in range(info.size))
        return out

    # -- constraints -------------------------------------------------------
    def _push(self, exprs, kind, dim):
        for e in exprs:
            self._rows.append(e)
        self._cones.append(Cone(kind, dim))

    def eq(self, expr):
        """expr == 0."""
        self._push([expr], ZERO, 1)

    def eq_block(self, exprs):
        exprs = list(exprs)
        self._push(exprs, ZERO, len(exprs))

    def ineq(self, expr):
        """expr >= 0."""
        self._push([expr], NONNEG, 1)

    def soc(self, exprs):
        """(e0, e1, ...) with ||(e1, ...)|| <= e0."""
        exprs = list(exprs)
        self._push(exprs, SOC, len(exprs))

    def hyperbolic(self, a, bexpr, rhs_const):
        """a*b >= rhs (a, b affine >= 0 implied, rhs a nonnegative const)."""
        if rhs_const < 0:
            rhs_const = 0.0
        top = LinExpr().add_expr(a).add_expr(bexpr)
        mid = LinExpr().add_expr(a).add_expr(bexpr, -1.0)
        self.soc([top, mid, self.const(2.0 * np.sqrt(rhs_const))])

    def quad_epigraph(self, q, vec_exprs):
        """q >= 0.5 * sum of squares of the given expressions.

        Encoded as ||(q-1, sqrt(2) vec)|| <= q+1, i.e. ||vec||^2 <= 2q.
        """
        top = LinExpr().add_expr(q)
        top.const += 1.0
        bot = LinExpr().add_expr(q)
        bot.const -= 1.0
        self.soc([top, bot] + [e.scaled(np.sqrt(2.0)) for e in vec_exprs])

    def expcone(self, x, y, z):
        """(x, y, z) with y e^{x/y} <= z."""
        self._push([x, y, z], EXP, 3)

    def psd(self, name):
        """Hermitian variable constrained PSD."""
        info = self._vars[name]
        self._push(self.entries(name), HPSD, info.n)

    # -- objective ----------------------------------------------------------
    def minimize(self, expr):
        self._obj = expr

    def maximize(self, expr):
        self._obj = expr.scaled(-1.0)

    # -- assembly ------------------------------------------------------------
    def build(self) -> ConicProgram:
        m = len(self._rows)
        n = self._nvar
        data, rows, cols = [], [], []
        b = np.zeros(m)
        for i, e in enumerate(self._rows):
            b[i] = e.const
            for j, cj in e.coeffs.items():
                rows.append(i)
                cols.append(j)
                data.append(-cj)          # s = b - A x  with row value e = const + coeffs x
        A = sp.csr_matrix((data, (rows, cols)), shape=(m, n))
        c = np.zeros(n)
        for j, cj in self._obj.coeffs.items():
            c[j] += cj
        # merge runs of single-row zero/nonneg cones so the projection loop
        # touches one block instead of dozens
        merged = []
        for cone in self._cones:
            if merged and cone.kind in (ZERO, NONNEG) and merged[-1].kind == cone.kind:
                merged[-1] = Cone(cone.kind, merged[-1].dim + cone.dim)
            else:
                merged.append(cone)
        return ConicProgram(c=c, A=A, b=b, cones=merged,
                            layout=dict(self._vars), obj_offset=self._obj.const)


def herm_basis_exprs(builder: ProgramBuilder, name: str, Gmat):
    """Coefficient view of <G, X>; convenience wrapper kept for symmetry."""
    return builder.trace(name, Gmat)
