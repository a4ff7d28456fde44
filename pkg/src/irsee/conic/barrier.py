"""Primal barrier path-following for anchored cone programs.

The alternating-optimization pipelines always possess a strictly feasible
point for their beam/ratio stages (the SCA anchor), which makes a primal
interior-point method the right tool for those small dense programs: a few
dozen damped Newton steps on

    t c'x + sum_blocks Phi_block(b - A x)       (+ hard equality rows)

with t increased geometrically. Logarithmic barriers for the nonnegative
orthant, second-order, Hermitian-PSD, and exponential cones; equality (zero
cone) rows are kept as Newton equality constraints. The dual estimate
y = (1/t) grad Phi(s) certifies the returned KKT residuals.

This complements the operator-splitting engine: splitting handles arbitrary
(possibly infeasible) programs and the large lifted-phase matrices, the
barrier path handles the small beam-stage programs whose geometry makes
first-order tails crawl.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .cones import EXP, HPSD, NONNEG, SOC, ZERO, Cone, smat, svec, triu_indices
from .program import ConicProgram
from .solver import ConicSolution, ITERATION_LIMIT, OPTIMAL


def _herm_basis(n):
    """Real svec basis of Hermitian n x n matrices (n^2 elements)."""
    basis = []
    for i in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[i, i] = 1.0
        basis.append(E)
    iu, ju = triu_indices(n)
    for i, j in zip(iu, ju):
        E = np.zeros((n, n), dtype=complex)
        E[i, j] = 1.0 / np.sqrt(2.0)
        E[j, i] = 1.0 / np.sqrt(2.0)
        basis.append(E)
        E = np.zeros((n, n), dtype=complex)
        E[i, j] = 1j / np.sqrt(2.0)
        E[j, i] = -1j / np.sqrt(2.0)
        basis.append(E)
    # reorder to the svec layout [diag; (re, im) pairs]
    ordered = basis[:n]
    off = basis[n:]
    pairs = []
    npair = len(iu)
    for p in range(npair):
        pairs.append(off[2 * p])
        pairs.append(off[2 * p + 1])
    return ordered + pairs


_BASIS_CACHE = {}


def herm_basis(n):
    if n not in _BASIS_CACHE:
        _BASIS_CACHE[n] = _herm_basis(n)
    return _BASIS_CACHE[n]


class _Block:
    """Barrier value/gradient/Hessian of one cone block in slack coords."""

    def __init__(self, cone: Cone):
        self.cone = cone
        self.nu = {NONNEG: cone.dim, SOC: 2.0, HPSD: cone.dim, EXP: 3.0}[cone.kind]

    def inside(self, s):
        k = self.cone.kind
        if k == NONNEG:
            return np.all(s > 0)
        if k == SOC:
            return s[0] > np.linalg.norm(s[1:])
        if k == HPSD:
            vals = np.linalg.eigvalsh(smat(s, self.cone.dim))
            return vals[0] > 0
        if k == EXP:
            x, y, z = s
            return y > 0 and z > 0 and y * np.log(z / y) - x > 0
        raise ValueError(k)

    def value(self, s):
        k = self.cone.kind
        if k == NONNEG:
            return -float(np.sum(np.log(s)))
        if k == SOC:
            return -float(np.log(s[0] ** 2 - s[1:] @ s[1:]))
        if k == HPSD:
            S = smat(s, self.cone.dim)
            sign, logdet = np.linalg.slogdet(S)
            return -float(logdet)
        if k == EXP:
            x, y, z = s
            psi = y * np.log(z / y) - x
            return -float(np.log(psi) + np.log(y) + np.log(z))
        raise ValueError(k)

    def grad_hess(self, s):
        k = self.cone.kind
        if k == NONNEG:
            g = -1.0 / s
            return g, np.diag(1.0 / s ** 2)
        if k == SOC:
            t, z = s[0], s[1:]
            d = t * t - z @ z
            g = np.concatenate([[-2.0 * t / d], 2.0 * z / d])
            hess_d = np.diag(np.concatenate([[2.0], np.full(len(z), -2.0)]))
            gd = np.concatenate([[2.0 * t], -2.0 * z])     # grad of d
            H = np.outer(gd, gd) / d ** 2 - hess_d / d
            return g, H
        if k == HPSD:
            n = self.cone.dim
            S = smat(s, n)
            X = np.linalg.inv(S)
            X = 0.5 * (X + X.conj().T)
            g = -svec(X)
            basis = herm_basis(n)
            H = np.empty((n * n, n * n))
            XB = [X @ E @ X for E in basis]
            for j, M in enumerate(XB):
                H[:, j] = svec(0.5 * (M + M.conj().T))
            return g, 0.5 * (H + H.T)
        if k == EXP:
            x, y, z = s
            lg = np.log(z / y)
            psi = y * lg - x
            dpsi = np.array([-1.0, lg - 1.0, y / z])
            g = -dpsi / psi - np.array([0.0, 1.0 / y, 1.0 / z])
            H2 = np.zeros((3, 3))
            H2[1, 1] = -1.0 / y
            H2[1, 2] = H2[2, 1] = 1.0 / z
            H2[2, 2] = -y / z ** 2
            H = np.outer(dpsi, dpsi) / psi ** 2 - H2 / psi \
                + np.diag([0.0, 1.0 / y ** 2, 1.0 / z ** 2])
            return g, H
        raise ValueError(k)


def barrier_solve(prog: ConicProgram, x0: np.ndarray, tol: float = 1e-8,
                  t0: float = None, t_factor: float = 10.0,
                  max_newton: int = 400) -> ConicSolution:
    """Path-following from a strictly feasible x0.

    Equality (zero-cone) rows must hold at x0 and are maintained exactly by
    the Newton steps. Raises ValueError if x0 is not strictly inside every
    inequality block.
    """
    A = prog.A.toarray() if not isinstance(prog.A, np.ndarray) else prog.A
    b = prog.b
    c = prog.c
    n = prog.n

    blocks = []
    eq_rows = []
    off = 0
    for cone in prog.cones:
        size = cone.size
        if cone.kind == ZERO:
            eq_rows.extend(range(off, off + size))
        else:
            blocks.append((slice(off, off + size), _Block(cone)))
        off += size
    Aeq = A[eq_rows] if eq_rows else None
    beq = b[eq_rows] if eq_rows else None

    x = np.array(x0, dtype=float)
    if eq_rows and np.linalg.norm(Aeq @ x - beq) > 1e-8 * (1 + np.linalg.norm(beq)):
        raise ValueError("x0 violates equality rows")
    s = b - A @ x
    for sl, blk in blocks:
        if not blk.inside(s[sl]):
            raise ValueError("x0 is not strictly feasible")

    nu = sum(blk.nu for _, blk in blocks)
    norm_c = max(np.linalg.norm(c), 1e-12)
    norm_b = np.linalg.norm(b)
    t = t0 if t0 is not None else max(1.0, nu / max(norm_c, 1e-6))
    newton_used = 0

    def phi_and_derivs(x, t, need_H=True):
        s = b - A @ x
        val = t * (c @ x)
        g = t * c.copy()
        H = np.zeros((n, n)) if need_H else None
        for sl, blk in blocks:
            sb = s[sl]
            if not blk.inside(sb):
                return None, None, None
            val += blk.value(sb)
            gb, Hb = blk.grad_hess(sb)
            Ab = A[sl]
            g -= Ab.T @ gb
            if need_H:
                H += Ab.T @ Hb @ Ab
        return val, g, H

    def dual_estimate(x, t):
        s = b - A @ x
        y = np.zeros(prog.m)
        for sl, blk in blocks:
            gb, _ = blk.grad_hess(s[sl])
            y[sl] = -gb / t
        if eq_rows:
            r = A.T @ y + c
            lam = sla.lstsq(Aeq.T, -r)[0]
            y[eq_rows] += lam
        dua = float(np.linalg.norm(A.T @ y + c) / (1.0 + norm_c))
        ctx = float(c @ x)
        bty = float(b @ y)
        gap = abs(ctx + bty) / (1.0 + abs(ctx) + abs(bty))
        return y, s, dua, gap, ctx

    best = None
    interior_x = None          # a comfortably interior centered iterate
    stall = 0
    while newton_used < max_newton and t < 1e13:
        # center tightly but detect the float64 floor: if the decrement stops
        # shrinking, more Newton steps only burn time
        lam2_prev = np.inf
        for _inner in range(40):
            val, g, H = phi_and_derivs(x, t)
            if val is None:
                raise RuntimeError("barrier iterate left the cone interior")
            newton_used += 1
            dct = np.sqrt(np.clip(np.diag(H), 1e-30, None))
            Hs = H / np.outer(dct, dct)
            gs = g / dct
            try:
                if Aeq is None:
                    dx = -sla.solve(Hs + 1e-13 * np.eye(n), gs, assume_a="pos") / dct
                else:
                    Aeqs = Aeq / dct[None, :]
                    kkt = np.block([[Hs + 1e-13 * np.eye(n), Aeqs.T],
                                    [Aeqs, np.zeros((len(eq_rows), len(eq_rows)))]])
                    rhs = np.concatenate([-gs, np.zeros(len(eq_rows))])
                    dx = sla.solve(kkt, rhs)[:n] / dct
            except sla.LinAlgError:
                dx = -sla.lstsq(Hs + 1e-9 * np.eye(n), gs)[0] / dct
            lam2 = float(-g @ dx)
            if not np.isfinite(lam2) or lam2 <= 0:
                break
            step = 1.0
            ok = False
            for _bt in range(50):
                xn = x + step * dx
                vn, _, _ = phi_and_derivs(xn, t, need_H=False)
                if vn is not None and vn <= val - 0.25 * step * lam2:
                    x = xn
                    ok = True
                    break
                step *= 0.5
            if not ok:
                break
            if lam2 <= 1e-9 or newton_used >= max_newton:
                break
            if lam2 > 0.5 * lam2_prev and lam2 < 1e-3:
                break              # stagnating near the numerical floor
            lam2_prev = lam2
        y, s, dua, gap, ctx = dual_estimate(x, t)
        if nu / t >= 1e-4:
            interior_x = x.copy()
        cand = ConicSolution(x=x.copy(), y=y, s=s, status=OPTIMAL, res_pri=0.0,
                             res_dual=dua, res_gap=gap, iterations=newton_used,
                             obj=ctx + prog.obj_offset, layout_program=prog)
        if best is None or cand.max_residual < best.max_residual:
            best = cand
            stall = 0
        else:
            stall += 1
        if max(dua, gap, nu / t) <= tol or stall >= 3:
            break
        t *= t_factor

    if best is None:
        y, s, dua, gap, ctx = dual_estimate(x, t)
        best = ConicSolution(x=x, y=y, s=s, status=OPTIMAL, res_pri=0.0,
                             res_dual=dua, res_gap=gap, iterations=newton_used,
                             obj=ctx + prog.obj_offset, layout_program=prog)
    pri = float(np.linalg.norm(A @ best.x + best.s - b) / (1.0 + norm_b))
    best.res_pri = pri
    best.status = OPTIMAL if best.max_residual <= max(tol * 100, 1e-5) \
        else ITERATION_LIMIT
    best.iterations = newton_used
    best.interior_x = interior_x if interior_x is not None else best.x
    return best
