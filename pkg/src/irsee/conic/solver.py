"""Operator-splitting solver for the cone programs built in this package.

The primal-dual pair is embedded homogeneously (variables (x, y, tau) and
slacks (0, s, kappa)) and the resulting monotone inclusion is solved by
Douglas-Rachford splitting in a block-diagonal metric: a linear solve with
the skew part, projections onto the cone product, over-relaxation, Ruiz
diagonal equilibration, Anderson acceleration with residual-growth
safeguards, and a dynamically rebalanced dual scale (the metric weight on
the y block follows the primal/dual residual ratio, which is what rescues
badly conditioned instances). Optimal solutions are recovered when tau > 0;
tau -> 0 with kappa > 0 yields infeasibility/unboundedness certificates.

The per-iteration linear system reduces to one SPD solve with
M = mx I + (1/w) A'A. Rows of A are split into a sparse part (factored with
SuperLU) and a small set of dense rows folded in through a Woodbury
correction, so refactoring after a scale update stays cheap even with large
PSD blocks in play.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import EXP, HPSD, NONNEG, SOC, ZERO, ConeWorkspace
from .program import ConicProgram

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    res_pri: float
    res_dual: float
    res_gap: float
    iterations: int
    obj: float = 0.0
    layout_program: ConicProgram = field(default=None, repr=False)

    @property
    def max_residual(self):
        return max(self.res_pri, self.res_dual, self.res_gap)

    def block(self, name):
        return self.layout_program.unpack(self.x, name)


def _block_row_scales(row_norms, cones):
    """Per-row scales, pooled uniformly inside SOC/PSD/EXP blocks so the
    scaled slack stays inside the same cone."""
    d = np.ones_like(row_norms)
    off = 0
    for c in cones:
        size = c.size
        blk = row_norms[off:off + size]
        if c.kind in (ZERO, NONNEG):
            scale = np.where(blk > 0, blk, 1.0)
        else:
            mx = blk.max()
            scale = np.full(size, mx if mx > 0 else 1.0)
        d[off:off + size] = scale
        off += size
    return d


def _equilibrate(A, cones, iters=10, clip=1e4):
    """Ruiz scaling: returns D, E with DAE roughly unit row/col norms."""
    m, n = A.shape
    D = np.ones(m)
    E = np.ones(n)
    W = A.copy()
    for _ in range(iters):
        absW = abs(W)
        rmax = absW.max(axis=1).toarray().ravel()
        rmax = _block_row_scales(rmax, cones)
        dr = 1.0 / np.sqrt(np.clip(rmax, 1.0 / clip, clip))
        cmax = absW.max(axis=0).toarray().ravel()
        cmax = np.where(cmax > 0, cmax, 1.0)
        dc = 1.0 / np.sqrt(np.clip(cmax, 1.0 / clip, clip))
        W = sp.diags(dr) @ W @ sp.diags(dc)
        D *= dr
        E *= dc
        if max(abs(1.0 - dr).max(), abs(1.0 - dc).max()) < 1e-3:
            break
    return W.tocsr(), D, E


class _KKTSolver:
    """Exact solver for (mx I + (1/w) A'A) z = r, exploiting the
    sparse-plus-dense-rows structure of A; cheap to refactor when the dual
    scale w changes."""

    def __init__(self, A: sp.csr_matrix, dense_row_nnz=None):
        m, n = A.shape
        nnz_per_row = np.diff(A.indptr)
        thresh = dense_row_nnz if dense_row_nnz is not None else max(32, int(0.1 * n))
        dense_mask = nnz_per_row > thresh
        self._dense_fallback = dense_mask.sum() > max(600, 0.5 * n) or m * n <= 40_000
        if self._dense_fallback:
            self._AtA = (A.T @ A).toarray()
            self._n = n
        else:
            As = A[~dense_mask]
            self._Ad = A[dense_mask].toarray()
            self._BtB = (As.T @ As).tocsc()
            self._n = n
        self.refactor(1.0, 1.0)

    def refactor(self, mx, w):
        coef = 1.0 / w
        if self._dense_fallback:
            M = mx * np.eye(self._n) + coef * self._AtA
            self._cho = sla.cho_factor(M, check_finite=False)
            return
        B = (mx * sp.identity(self._n, format="csc") + coef * self._BtB).tocsc()
        self._lu = spla.splu(B)
        if self._Ad.shape[0]:
            Z = self._lu.solve(self._Ad.T) * coef
            S = np.eye(self._Ad.shape[0]) + self._Ad @ Z
            self._Z = Z
            self._cho_s = sla.cho_factor(S, check_finite=False)
        else:
            self._Z = None

    def solve(self, r: np.ndarray) -> np.ndarray:
        if self._dense_fallback:
            return sla.cho_solve(self._cho, r, check_finite=False)
        t = self._lu.solve(r)
        if self._Z is not None:
            t = t - self._Z @ sla.cho_solve(self._cho_s, self._Ad @ t, check_finite=False)
        return t


def solve(prog: ConicProgram, tol: float = 1e-7, max_iter: int = 50_000,
          warm_start: ConicSolution = None, over_relax: float = 1.5,
          check_every: int = 25, scale_every: int = 200) -> ConicSolution:
    """Solve a cone program.

    Returns the best iterate flagged ``iteration-limit`` if the residual
    targets are not met within ``max_iter``.
    """
    m, n = prog.m, prog.n
    Abar, D, E = _equilibrate(prog.A, prog.cones)
    bbar = D * prog.b
    cbar = E * prog.c
    # balance the embedding: primal and dual offsets both near unit norm
    beta = 1.0 / max(np.linalg.norm(bbar), 1e-10)
    zeta = 1.0 / max(np.linalg.norm(cbar), 1e-10)
    bbar = beta * bbar
    cbar = zeta * cbar
    AbarT = Abar.T.tocsr()
    ws = ConeWorkspace(prog.cones)
    kkt = _KKTSolver(Abar)

    norm_b = np.linalg.norm(prog.b)
    norm_c = np.linalg.norm(prog.c)

    mx = 1.0
    mtau = 1.0
    omega = 1.0          # dual-block metric weight, adapted on the fly

    def refresh_lin():
        kkt.refactor(mx, omega)
        p1 = kkt.solve((AbarT @ bbar) / omega - cbar)
        eta = mtau + bbar @ bbar / omega - (cbar + AbarT @ bbar / omega) @ p1
        return p1, eta

    p1, eta = refresh_lin()

    def lin_step(r1, r2, r3):
        """(M + Q)^{-1} applied to (r1, r2, r3)."""
        rhs = r1 - AbarT @ (r2 / omega)
        p0 = kkt.solve(rhs)
        tau = (r3 + bbar @ (r2 / omega) + (cbar + AbarT @ bbar / omega) @ p0) / eta
        p = p0 + tau * p1
        q = (r2 + Abar @ p - bbar * tau) / omega
        return p, q, tau

    # w is the Douglas-Rachford state; u = Pi_C(w); v = M(w - u)
    wx = np.zeros(n)
    wy = np.zeros(m)
    wtau = 1.0
    if warm_start is not None and warm_start.x.shape == (n,) and warm_start.y.shape == (m,) \
            and np.all(np.isfinite(warm_start.x)) and np.all(np.isfinite(warm_start.y)) \
            and np.all(np.isfinite(warm_start.s)):
        ux0 = beta * warm_start.x / E
        uy0 = zeta * warm_start.y / D
        vs0 = beta * D * warm_start.s
        wx = ux0
        wy = uy0 - vs0 / omega
        wtau = 1.0

    best = None
    status = ITERATION_LIMIT
    it = 0

    def physical(ux, uy, utau, vs):
        x = E * (ux / utau) / beta
        y = D * (uy / utau) / zeta
        s = (vs / utau) / D / beta
        return x, y, s

    def residuals(x, y, s):
        pri = np.linalg.norm(prog.A @ x + s - prog.b) / (1.0 + norm_b)
        dua = np.linalg.norm(prog.A.T @ y + prog.c) / (1.0 + norm_c)
        ctx = prog.c @ x
        bty = prog.b @ y
        gap = abs(ctx + bty) / (1.0 + abs(ctx) + abs(bty))
        return pri, dua, gap

    # Anderson acceleration (type II) on the DR state, safeguarded by
    # residual-growth resets; memory cleared on metric changes
    aa_mem = 10
    aa_start = 30
    dZ, dG = [], []
    z_prev = g_prev = None
    norm_floor = np.inf

    def aa_reset():
        dZ.clear()
        dG.clear()
        return None, None, np.inf

    res_pri_last, res_dual_last = 1.0, 1.0

    for it in range(1, max_iter + 1):
        # u-step: project the state onto C = R^n x K* x R+
        ux = wx
        uy = ws.project(wy, dual=True)
        utau = max(wtau, 0.0)
        # linear step at the reflected point M(2u - w)
        r1 = mx * (2.0 * ux - wx)
        r2 = omega * (2.0 * uy - wy)
        r3 = mtau * (2.0 * utau - wtau)
        px, qy, ptau = lin_step(r1, r2, r3)
        # relaxed DR update
        wx_new = wx + over_relax * (px - ux)
        wy_new = wy + over_relax * (qy - uy)
        wtau_new = wtau + over_relax * (ptau - utau)

        z = np.concatenate([wx, wy, [wtau]])
        z_new = np.concatenate([wx_new, wy_new, [wtau_new]])
        g = z_new - z
        gn = float(np.linalg.norm(g))
        if it >= aa_start:
            if z_prev is not None:
                dZ.append(z - z_prev)
                dG.append(g - g_prev)
                if len(dZ) > aa_mem:
                    dZ.pop(0)
                    dG.pop(0)
            z_prev, g_prev = z, g
            if gn > 20.0 * norm_floor or not np.isfinite(gn):
                z_prev, g_prev, norm_floor = aa_reset()
            else:
                norm_floor = min(norm_floor, gn)
                if len(dZ) >= 2:
                    Gm = np.stack(dG, axis=1)
                    GtG = Gm.T @ Gm
                    reg = 1e-10 * max(np.trace(GtG), 1e-30)
                    try:
                        gam = np.linalg.solve(GtG + reg * np.eye(GtG.shape[0]),
                                              Gm.T @ g)
                        z_acc = z_new - (np.stack(dZ, axis=1) + Gm) @ gam
                        if np.all(np.isfinite(z_acc)):
                            z_new = z_acc
                    except np.linalg.LinAlgError:
                        pass
        wx = z_new[:n]
        wy = z_new[n:n + m]
        wtau = float(z_new[-1])

        if it % check_every == 0 or it == max_iter:
            # evaluate at the pure projected iterate
            cux = wx
            cuy = ws.project(wy, dual=True)
            cutau = max(wtau, 0.0)
            cvs = omega * (cuy - wy)        # slack block of M(u - w) in C*
            if cutau > 1e-10:
                x, y, s = physical(cux, cuy, cutau, cvs)
                pri, dua, gap = residuals(x, y, s)
                res_pri_last, res_dual_last = pri, dua
                cand = ConicSolution(x=x, y=y, s=s, status=OPTIMAL, res_pri=pri,
                                     res_dual=dua, res_gap=gap, iterations=it,
                                     obj=prog.c @ x + prog.obj_offset,
                                     layout_program=prog)
                if best is None or cand.max_residual < best.max_residual:
                    best = cand
                if max(pri, dua, gap) <= tol:
                    status = OPTIMAL
                    break
            y_raw = D * cuy / zeta
            bty = prog.b @ y_raw
            if bty < -1e-12 and np.linalg.norm(prog.A.T @ y_raw) <= tol * (-bty):
                ycert = y_raw / (-bty)
                best = ConicSolution(x=np.full(n, np.nan), y=ycert,
                                     s=np.full(m, np.nan), status=INFEASIBLE,
                                     res_pri=np.inf, res_dual=np.inf,
                                     res_gap=np.linalg.norm(prog.A.T @ ycert),
                                     iterations=it, obj=np.nan, layout_program=prog)
                status = INFEASIBLE
                break
            x_raw = E * cux / beta
            s_raw = cvs / D / beta
            ctx = prog.c @ x_raw
            if ctx < -1e-12 and np.linalg.norm(prog.A @ x_raw + s_raw) <= tol * (-ctx):
                xcert = x_raw / (-ctx)
                best = ConicSolution(x=xcert, y=np.full(m, np.nan),
                                     s=s_raw / (-ctx), status=UNBOUNDED,
                                     res_pri=np.linalg.norm(prog.A @ xcert + s_raw / (-ctx)),
                                     res_dual=np.inf, res_gap=np.inf,
                                     iterations=it, obj=np.nan, layout_program=prog)
                status = UNBOUNDED
                break

        if it % scale_every == 0 and it < max_iter - check_every:
            ratio = res_dual_last / max(res_pri_last, 1e-300)
            if ratio > 5.0 or ratio < 0.2:
                factor = float(np.clip(np.sqrt(ratio), 0.316, 3.16))
                new_omega = float(np.clip(omega * factor, 1e-4, 1e4))
                if new_omega != omega:
                    # keep (u, v) fixed physically; re-express w in the new
                    # metric: w_y = u_y + v_y / omega
                    uy = ws.project(wy, dual=True)
                    vy = omega * (wy - uy)
                    omega = new_omega
                    wy = uy + vy / omega
                    p1, eta = refresh_lin()
                    z_prev, g_prev, norm_floor = aa_reset()

    if best is None:
        cuy = ws.project(wy, dual=True)
        cutau = max(wtau, 0.0)
        cvs = omega * (cuy - wy)
        x, y, s = (np.zeros(n), np.zeros(m), np.zeros(m)) if cutau <= 1e-10 \
            else physical(wx, cuy, cutau, cvs)
        pri, dua, gap = residuals(x, y, s)
        best = ConicSolution(x=x, y=y, s=s, status=ITERATION_LIMIT, res_pri=pri,
                             res_dual=dua, res_gap=gap, iterations=it,
                             obj=prog.c @ x + prog.obj_offset, layout_program=prog)
    best.status = status if status != ITERATION_LIMIT else \
        (OPTIMAL if best.max_residual <= tol else ITERATION_LIMIT)
    best.iterations = it
    return best
