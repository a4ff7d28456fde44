"""Penalty-based pipeline.

Stage 1 (fixed phases): Dinkelbach outer loop around an SCA-convexified
max-min program over the beam covariances, the energy covariance, and the
PS ratios. Stage 2: lifted-phase program with the nuclear-minus-spectral
rank-one penalty, majorized through the dominant-eigenvector plane. The
two stages alternate; the phase stage is built at the updated Dinkelbach
value paired with the pre-update slack, which demands a strict improvement
of the weakest user and is what moves the phases at all (at a feasible
(lambda, chi) pair the lifted anchor is provably the unique optimizer of
the majorized program and the stage would be a no-op).

Cone programs are built in noise-normalized channel units (division by the
per-user processing-noise power): rates are invariant, and the dynamic
range the solver sees shrinks by ~8 orders of magnitude.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import conic, linz, model
from .chanfab import random_phases
from .conic import ProgramBuilder, solve
from .conic.barrier import barrier_solve
from scipy.linalg import LinAlgError as sla_LinAlgError
from .model import ScenarioConfig, Solution

log = logging.getLogger("irsee")
LN2 = np.log(2.0)


class ScenarioInfeasible(RuntimeError):
    """No (W, rho) meets the SINR/EH targets within the power budget."""


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _normalized_user(h_k, config: ScenarioConfig, k: int):
    """(H_bar, sigma_bar, eh demand) in units of the user's processing noise."""
    d2 = config.delta2[k]
    Hbar = np.outer(h_k, h_k.conj()) / d2
    sbar = config.sigma2[k] / d2
    p_eh = model.eh_required_power(config.e_min[k], config.eh_a[k],
                                   config.eh_b[k], config.eh_M[k]) / d2
    return Hbar, sbar, p_eh


def _psd_clean(W):
    """Hermitian-ize and clip tiny negative eigenvalues from solver output."""
    W = 0.5 * (W + W.conj().T)
    vals, vecs = np.linalg.eigh(W)
    if vals[0] >= 0:
        return W
    vals = np.maximum(vals, 0.0)
    return (vecs * vals) @ vecs.conj().T


def _herm_trace(G, X):
    return float(np.real(np.trace(G.conj().T @ X)))


# ---------------------------------------------------------------------------
# (P6)-style stage: beams + PS ratios at fixed phases
# ---------------------------------------------------------------------------

def build_p6(h, expansion, lam, config: ScenarioConfig, fixed_rho=None):
    """Cone program of the convexified beam/PS stage at one Dinkelbach value.

    ``expansion`` is the SCA anchor dict with keys W (list) and rho (array).
    ``fixed_rho`` pins the PS ratios. Returns (program, meta); meta carries
    what extraction needs.
    """
    K, M = config.K, config.M
    margin = config.rho_margin
    users = [_normalized_user(h[k], config, k) for k in range(K)]
    rate_rows = []
    # with every harvested-power demand vacuous, the energy covariance only
    # consumes budget: pin it to zero instead of carrying a flat M^2 block
    use_we = any(u[2] > 0.0 for u in users)
    pb = ProgramBuilder()
    wnames = [pb.herm(f"W{k}", M) for k in range(K)]
    if use_we:
        pb.herm("WE", M)
    var_rho = fixed_rho is None
    if var_rho:
        pb.scalars("rho", K)
        pb.scalars("u", K)
    pb.scalars("t", K)
    pb.scalars("chi", 1)

    def u_expr(k):
        return pb.var("u", k) if var_rho else pb.const(1.0 / fixed_rho[k])

    for k in range(K):
        Hbar, sbar, p_eh = users[k]
        tr_terms = [pb.trace(wn, Hbar) for wn in wnames]
        tr_we = pb.trace("WE", Hbar) if use_we else pb.const(0.0)

        # SINR: Tr(Hbar Wk)/gamma - interference - sigma_bar - u_k >= 0
        row = tr_terms[k].scaled(1.0 / config.gamma[k])
        for i in range(K):
            if i != k:
                row.add_expr(tr_terms[i], -1.0)
        row.add_expr(pb.const(-sbar))
        row.add_expr(u_expr(k), -1.0)
        pb.ineq(row)

        # EH: received power covers the inverse-sigmoid demand / (1 - rho).
        # A nonpositive demand is implied by received power >= 0; emitting the
        # rows anyway only adds flat directions that stall ADMM.
        if p_eh > 0.0:
            recv = pb.const(0.0)
            for e in tr_terms:
                recv.add_expr(e)
            recv.add_expr(tr_we)
            if var_rho:
                # received * (1 - rho) >= demand, rotated cone on the affine
                # received-power expression itself
                one_minus_rho = pb.const(1.0).add_expr(pb.var("rho", k), -1.0)
                pb.hyperbolic(recv, one_minus_rho, p_eh)
            else:
                recv.add_expr(pb.const(-p_eh / (1.0 - fixed_rho[k])))
                pb.ineq(recv)

        if var_rho:
            # u is capped through the SINR row; no explicit upper bound needed
            pb.hyperbolic(pb.var("u", k), pb.var("rho", k), 1.0)
            pb.ineq(pb.var("rho", k).add_expr(pb.const(-margin)))
            pb.ineq(pb.const(1.0 - margin).add_expr(pb.var("rho", k), -1.0))

        rho0 = expansion["rho"][k]
        lin = linz.sca_linearize_g(expansion["W"], rho0, Hbar, k, sbar, 1.0)
        # hypograph of f through the exponential cone:
        #   exp(ln2 * t_k) <= sum_i Tr(Hbar W_i) + sigma_bar + u_k
        z = pb.const(sbar)
        for e in tr_terms:
            z.add_expr(e)
        z.add_expr(u_expr(k))
        pb.expcone(pb.var("t", k).scaled(LN2), pb.const(1.0), z)
        # t_k - g_tilde(W, u) - lam * P_T,k - chi >= 0
        rate_rows.append(len(pb._rows))
        row = pb.var("t", k)
        coef = 1.0 / (LN2 * lin.denominator)
        const = lin.value
        for i in range(K):
            if i == k:
                continue
            row.add_expr(tr_terms[i], -coef)
            const -= coef * _herm_trace(Hbar, expansion["W"][i])
        row.add_expr(u_expr(k), -coef)
        const -= coef * (1.0 / rho0)
        row.add_expr(pb.const(-const))
        row.add_expr(pb.tr(wnames[k]), -lam)
        if use_we:
            row.add_expr(pb.tr("WE"), -lam)
        row.add_expr(pb.const(-lam * config.p_cr[k]))
        row.add_expr(pb.var("chi"), -1.0)
        pb.ineq(row)

    prow = pb.const(config.p_max)
    for wn in wnames:
        prow.add_expr(pb.tr(wn), -1.0)
    if use_we:
        prow.add_expr(pb.tr("WE"), -1.0)
    pb.ineq(prow)

    for wn in wnames:
        pb.psd(wn)
    if use_we:
        pb.psd("WE")

    # the 1e-7 power tie-break removes beam-nullspace flats; it perturbs
    # chi by orders of magnitude less than the Dinkelbach tolerance
    obj = pb.var("chi")
    for wn in wnames:
        obj.add_expr(pb.tr(wn), -1e-7)
    if use_we:
        obj.add_expr(pb.tr("WE"), -1e-7)
    pb.maximize(obj)

    meta = {"wnames": wnames, "var_rho": var_rho, "fixed_rho": fixed_rho,
            "use_we": use_we, "rate_rows": rate_rows,
            "users": users, "expansion": expansion, "lam": lam}
    return pb.build(), meta


def _pack_blocks(prog, values):
    """Flat x from named block values (fixed-diagonal coords skipped)."""
    x = np.zeros(prog.n)
    for name, val in values.items():
        info = prog.layout[name]
        if info.kind == "scalar":
            x[info.offset:info.offset + info.count] = val
        else:
            v = conic.svec(np.asarray(val, dtype=complex))
            x[info.offset:info.offset + info.size] = v[info.n:] \
                if info.fixed_diag is not None else v
    return x


def _interior_ok(prog, x, skip_rows=()):
    """Strict interior check of b - Ax against every inequality block."""
    from .conic.barrier import _Block
    s = prog.b - prog.A @ x
    off = 0
    for cone in prog.cones:
        size = cone.size
        if cone.kind != conic.ZERO:
            if not _Block(cone).inside(s[off:off + size]):
                return False
        off += size
    return True


def _p6_interior_start(prog, meta, h, point, config: ScenarioConfig, x_prev=None):
    """Strictly feasible start for the barrier path.

    Chains the previous raw barrier iterate when layouts match (re-anchoring
    only enlarges the linearized feasible set, so it stays interior up to
    the free chi/t coordinates, which are re-centered here); otherwise packs
    the anchor with a small identity blend on the covariances.
    """
    K = config.K
    chi_off = prog.layout["chi"].offset
    t_info = prog.layout["t"]
    if x_prev is not None and x_prev.shape == (prog.n,):
        x = np.array(x_prev)
    else:
        eps = 1e-3
        vals = {}
        for eps in (1e-3, 1e-5, 1e-7, 1e-9):
            for k, wn in enumerate(meta["wnames"]):
                Wk = np.asarray(point["W"][k])
                trk = max(np.real(np.trace(Wk)), 1e-12)
                vals[wn] = (1 - eps) * Wk + (eps * trk / config.M) * np.eye(config.M)
            if meta["use_we"]:
                WE = np.asarray(point["W_E"])
                tre = max(np.real(np.trace(WE)), 1e-9 * config.p_max)
                vals["WE"] = (1 - eps) * WE + (eps * tre / config.M) * np.eye(config.M)
            if meta["var_rho"]:
                rho = np.clip(point["rho"], config.rho_margin * (1 + 1e-6),
                              1 - config.rho_margin * (1 + 1e-6))
                vals["rho"] = rho
                vals["u"] = (1.0 + 1e-9) / rho
            vals["t"] = np.zeros(K)
            vals["chi"] = 0.0
            x = _pack_blocks(prog, vals)
            # free coordinates: t strictly inside the exp cones, chi under
            # the worst rate margin
            s = prog.b - prog.A @ x
            break
    # t_k below the exp-cone graph: z-coordinate of exp block k is the
    # received total; recompute directly from the model quantities
    rho = point["rho"] if meta["var_rho"] else np.asarray(meta["fixed_rho"])
    for k in range(K):
        Hbar, sbar, _ = meta["users"][k]
        arg = sum(float(np.real(np.trace(Hbar.conj().T @
                                         smat_block(prog, x, meta["wnames"][i]))))
                  for i in range(K))
        arg += sbar + x[prog.layout["u"].offset + k] if meta["var_rho"] \
            else sbar + 1.0 / meta["fixed_rho"][k]
        x[t_info.offset + k] = np.log2(max(arg, 1e-300)) - 0.1
    # chi: strictly below every rate-row value at chi = 0
    x[chi_off] = 0.0
    s = prog.b - prog.A @ x
    margin = min(s[r] for r in meta["rate_rows"])
    x[chi_off] = margin - max(0.1, 1e-3 * abs(margin))
    if _interior_ok(prog, x):
        return x
    return None


def smat_block(prog, x, name):
    info = prog.layout[name]
    full = np.empty(info.n * info.n)
    if info.fixed_diag is not None:
        full[:info.n] = info.fixed_diag
        full[info.n:] = x[info.offset:info.offset + info.size]
    else:
        full[:] = x[info.offset:info.offset + info.size]
    return conic.smat(full, info.n)


def extract_p6(sol: conic.ConicSolution, meta, config: ScenarioConfig):
    W = [_psd_clean(sol.block(n)) for n in meta["wnames"]]
    WE = _psd_clean(sol.block("WE")) if meta["use_we"] \
        else np.zeros((config.M, config.M), dtype=complex)
    if meta["var_rho"]:
        rho = np.clip(np.atleast_1d(sol.block("rho")),
                      config.rho_margin, 1.0 - config.rho_margin)
    else:
        rho = np.asarray(meta["fixed_rho"], dtype=float)
    chi = float(sol.block("chi"))
    return {"W": W, "W_E": WE, "rho": rho, "chi": chi}


def init_feasible(h, config: ScenarioConfig, fixed_rho=None):
    """Max-min-SINR-margin start at pinned transmit power.

    Maximizing the worst normalized SINR margin with the total power fixed
    at 0.9 p_max avoids the degenerate power-minimization corner (the
    harvested-power constraints keep the problem honest: they do not relax
    with the margin). A nonpositive optimal margin, or an infeasibility
    certificate from the hard rows, declares the scenario infeasible, since
    every margin is monotone in transmit power.
    """
    K, M = config.K, config.M
    margin = config.rho_margin
    users = [_normalized_user(h[k], config, k) for k in range(K)]
    use_we = any(u[2] > 0.0 for u in users)
    var_rho = fixed_rho is None

    pb = ProgramBuilder()
    wnames = [pb.herm(f"W{k}", M) for k in range(K)]
    if use_we:
        pb.herm("WE", M)
    if var_rho:
        pb.scalars("rho", K)
        pb.scalars("u", K)
    pb.scalars("tmargin", 1)

    for k in range(K):
        Hbar, sbar, p_eh = users[k]
        tr_terms = [pb.trace(wn, Hbar) for wn in wnames]
        row = tr_terms[k].scaled(1.0 / config.gamma[k])
        for i in range(K):
            if i != k:
                row.add_expr(tr_terms[i], -1.0)
        row.add_expr(pb.const(-sbar))
        if var_rho:
            row.add_expr(pb.var("u", k), -1.0)
        else:
            row.add_expr(pb.const(-1.0 / fixed_rho[k]))
        row.add_expr(pb.var("tmargin"), -1.0)
        pb.ineq(row)
        if p_eh > 0.0:
            recv = pb.const(0.0)
            for e in tr_terms:
                recv.add_expr(e)
            if use_we:
                recv.add_expr(pb.trace("WE", Hbar))
            if var_rho:
                one_minus_rho = pb.const(1.0).add_expr(pb.var("rho", k), -1.0)
                pb.hyperbolic(recv, one_minus_rho, p_eh)
            else:
                recv.add_expr(pb.const(-p_eh / (1.0 - fixed_rho[k])))
                pb.ineq(recv)
        if var_rho:
            pb.hyperbolic(pb.var("u", k), pb.var("rho", k), 1.0)
            pb.ineq(pb.var("rho", k).add_expr(pb.const(-margin)))
            pb.ineq(pb.const(1.0 - margin).add_expr(pb.var("rho", k), -1.0))

    prow = pb.const(-0.9 * config.p_max)
    for wn in wnames:
        prow.add_expr(pb.tr(wn))
    if use_we:
        prow.add_expr(pb.tr("WE"))
    pb.eq(prow)
    for wn in wnames:
        pb.psd(wn)
    if use_we:
        pb.psd("WE")
    obj = pb.var("tmargin")
    if var_rho:
        for k in range(K):
            obj.add_expr(pb.var("u", k), -1e-7)
    pb.maximize(obj)

    prog = pb.build()
    # identity split exactly on the pinned power is strictly interior once
    # the free margin variable sits below the worst row
    vals = {wn: (0.9 * config.p_max / (K * M) / (2.0 if use_we else 1.0))
            * np.eye(M, dtype=complex) for wn in wnames}
    if use_we:
        vals["WE"] = (0.45 * config.p_max / M) * np.eye(M, dtype=complex)
    if var_rho:
        rho0 = np.full(K, 0.5)
        vals["rho"] = rho0
        vals["u"] = (1.0 + 1e-9) / rho0
    vals["tmargin"] = 0.0
    x0 = _pack_blocks(prog, vals)
    s0 = prog.b - prog.A @ x0
    # margin coordinate below every SINR row (it only appears there)
    rows = [i for i in range(prog.m)
            if abs(prog.A[i, prog.layout["tmargin"].offset]) > 0]
    worst = min(s0[r] for r in rows)
    x0[prog.layout["tmargin"].offset] = worst - max(1.0, abs(worst))
    sol = None
    if _interior_ok(prog, x0):
        try:
            sol = barrier_solve(prog, x0, tol=1e-9)
        except (ValueError, RuntimeError, sla_LinAlgError):
            sol = None
    if sol is None or sol.status != conic.OPTIMAL:
        sol = solve(prog, tol=1e-6, max_iter=min(20000, config.conic_max_iter))
    if sol.status in (conic.INFEASIBLE, conic.UNBOUNDED):
        raise ScenarioInfeasible(f"initialization stage: {sol.status}")
    if sol.status != conic.OPTIMAL:
        log.warning("initialization stage did not fully converge (res %.2e)",
                    sol.max_residual)
    tstar = float(sol.block("tmargin"))
    if tstar <= 0.0:
        raise ScenarioInfeasible(
            f"SINR targets unreachable at full power (margin {tstar:.3e})")
    W = [_psd_clean(sol.block(n)) for n in wnames]
    WE = _psd_clean(sol.block("WE")) if use_we \
        else np.zeros((M, M), dtype=complex)
    if var_rho:
        rho = np.clip(np.atleast_1d(sol.block("rho")), margin, 1.0 - margin)
    else:
        rho = np.asarray(fixed_rho, dtype=float)
    return {"W": W, "W_E": WE, "rho": rho, "chi": 0.0}


# ---------------------------------------------------------------------------
# SCA + Dinkelbach loops
# ---------------------------------------------------------------------------

def _solve_stage(prog, meta, h, point, config: ScenarioConfig, x_prev=None,
                 admm_tol=1e-7, admm_cap=None, warm=None):
    """Barrier path from a strictly feasible start when one exists,
    operator-splitting fallback otherwise. Returns (solution, engine)."""
    x0 = _p6_interior_start(prog, meta, h, point, config, x_prev=x_prev)
    if x0 is not None:
        try:
            sol = barrier_solve(prog, x0, tol=1e-9)
            if sol.status == conic.OPTIMAL:
                return sol, "barrier"
        except (ValueError, RuntimeError, sla_LinAlgError):
            pass
    cap = admm_cap if admm_cap is not None else config.conic_max_iter
    sol = solve(prog, tol=admm_tol, max_iter=cap, warm_start=warm)
    return sol, "admm"


def sca_outer_loop(h, lam, config: ScenarioConfig, anchor, fixed_rho=None,
                   warm=None, final_tol=None, x_prev=None):
    """Iterate the convexified stage at a fixed Dinkelbach value, re-anchoring
    until the exact subtractive objective stalls.

    A candidate is accepted only if it improves the exact subtractive
    objective, so the recorded trace is monotone regardless of solver noise.
    Returns (point, objective, trace, carry) where carry holds warm-start
    state for the next call.
    """
    point = anchor
    best_obj = -np.inf
    trace = []
    sol = warm
    for it in range(config.sca_max):
        prog, meta = build_p6(h, point, lam, config, fixed_rho=fixed_rho)
        sol, engine = _solve_stage(prog, meta, h, point, config,
                                   x_prev=x_prev,
                                   admm_tol=max(config.conic_tol_small, 1e-7),
                                   warm=sol if isinstance(sol, conic.ConicSolution) else None)
        if sol.status in (conic.INFEASIBLE, conic.UNBOUNDED):
            if it == 0:
                return None, -np.inf, trace, (None, None)
            break
        if engine == "barrier":
            x_prev = getattr(sol, "interior_x", sol.x)
        cand = extract_p6(sol, meta, config)
        R, P_T, _, _ = model.rate_power_ee(h, cand["W"], cand["W_E"],
                                           cand["rho"], config)
        obj = float(np.min(R - lam * P_T))
        if obj < best_obj - 1e-12:
            break                      # solver noise: keep the better point
        trace.append(obj)
        gain = obj - best_obj
        best_obj = obj
        point = cand
        if it >= 1 and gain <= config.sca_rel_tol * max(1.0, abs(obj)):
            break
    return point, (trace[-1] if trace else -np.inf), trace, (sol, x_prev)


@dataclass
class DinkelbachState:
    lam: float
    iteration: int
    residual: float
    history: list = field(default_factory=list)   # (lam, residual) pairs
    sca_traces: list = field(default_factory=list)


def dinkelbach_loop(h, config: ScenarioConfig, anchor, lam0=0.0, fixed_rho=None):
    """Parametric outer loop: solve the convexified stage at lambda, update
    lambda to the worst rate/power ratio, stop when the subtractive residual
    is inside the configured tolerance or the iteration cap hits.

    Returns (point, state, chi_star); chi_star is the terminal residual at
    the last pre-update lambda (the slack the phase stage must beat).
    """
    lam = float(lam0)
    state = DinkelbachState(lam=lam, iteration=0, residual=np.inf)
    point = anchor
    carry = (None, None)
    chi_star = 0.0
    for i in range(config.i_max):
        cand, obj, trace, carry = sca_outer_loop(h, lam, config, point,
                                                 fixed_rho=fixed_rho,
                                                 warm=carry[0], x_prev=carry[1])
        if cand is None:
            if i == 0:
                raise ScenarioInfeasible("subtractive stage infeasible at initial lambda")
            break
        point = cand
        state.sca_traces.append(trace)
        R, P_T, _, _ = model.rate_power_ee(h, point["W"], point["W_E"],
                                           point["rho"], config)
        resid = float(np.min(R - lam * P_T))
        state.history.append((lam, resid))
        state.iteration = i + 1
        state.residual = resid
        chi_star = resid
        if abs(resid) <= config.eps_dinkelbach:
            break
        # the worst ratio of the accepted point never decreases lambda
        lam = max(lam, float(np.min(R / P_T)))
        state.lam = lam
    R, P_T, _, _ = model.rate_power_ee(h, point["W"], point["W_E"],
                                       point["rho"], config)
    state.lam = max(state.lam, float(np.min(R / P_T)))
    return point, state, chi_star


# ---------------------------------------------------------------------------
# lifted-phase stage
# ---------------------------------------------------------------------------

def build_p9(W, W_E, rho, lam, chi, cs, V_exp, mu, config: ScenarioConfig,
             objective="penalty"):
    """Phase program at fixed beams/ratios: affine rows in the lifted matrix,
    exponential cones for the rate floor.

    objective="chi":      relaxation step; chi is a free slack, maximized.
    objective="penalty":  rank-one step; chi fixed at the given value, the
                          majorized nuclear-minus-spectral penalty minimized.
    objective="none":     pure feasibility (plain-relaxation baseline).
    """
    K, N = config.K, config.N
    pb = ProgramBuilder()
    pb.herm("V", N + 1, fixed_diag=1.0)
    chi_variable = objective == "chi"
    if chi_variable:
        pb.scalars("chiv", 1)

    L = [linz.lift_phase(cs, k) for k in range(K)]
    mm = linz.spectral_mm(V_exp)

    for k in range(K):
        d2 = config.delta2[k]
        sbar = config.sigma2[k] / d2
        p_eh = model.eh_required_power(config.e_min[k], config.eh_a[k],
                                       config.eh_b[k], config.eh_M[k]) / d2
        G = [0.5 * (Gi + Gi.conj().T)
             for Gi in ((L[k] @ Wi @ L[k].conj().T) / d2 for Wi in W)]
        GE = (L[k] @ W_E @ L[k].conj().T) / d2
        GE = 0.5 * (GE + GE.conj().T)
        load = sbar + 1.0 / rho[k]

        tr_terms = [pb.trace("V", Gi) for Gi in G]
        tr_e = pb.trace("V", GE)

        row = tr_terms[k].scaled(1.0 / config.gamma[k])
        for i in range(K):
            if i != k:
                row.add_expr(tr_terms[i], -1.0)
        row.add_expr(pb.const(-load))
        pb.ineq(row)

        row = pb.const(-max(p_eh, 0.0) / (1.0 - rho[k]))
        for e in tr_terms:
            row.add_expr(e)
        row.add_expr(tr_e)
        pb.ineq(row)

        # rate floor: f(V) - g_tilde(V) >= lam*P_T,k + chi via
        # exp(ln2*(c_k + g_tilde(V))) <= total received power
        D0 = sum(_herm_trace(G[i], V_exp) for i in range(K) if i != k) + load
        p_t = float(np.real(np.trace(W[k])) + np.real(np.trace(W_E)) + config.p_cr[k])
        c_k = lam * p_t + (0.0 if chi_variable else chi)
        xrow = pb.const(LN2 * (c_k + np.log2(D0)))
        if chi_variable:
            xrow.add_expr(pb.var("chiv"), LN2)
        for i in range(K):
            if i != k:
                xrow.add_expr(tr_terms[i], 1.0 / D0)
                xrow.add_expr(pb.const(-_herm_trace(G[i], V_exp) / D0))
        z = pb.const(load)
        for e in tr_terms:
            z.add_expr(e)
        pb.expcone(xrow, pb.const(1.0), z)

    pb.psd("V")
    if objective == "penalty":
        # (1/2mu)(||V||_* - A_tilde(V)) with ||V||_* = Tr V = N+1 on the
        # unit-diagonal feasible set
        vvH = np.outer(mm.top_vec, mm.top_vec.conj())
        obj = pb.const((N + 1 - mm.value + _herm_trace(vvH, V_exp)) / (2 * mu))
        obj.add_expr(pb.trace("V", vvH), -1.0 / (2 * mu))
        pb.minimize(obj)
    elif objective == "chi":
        # tiny alignment pull toward the expansion's dominant direction:
        # breaks the huge flat block of constraint-invisible V coordinates
        # (distorts chi by <= 1e-5 (N+1), well under the phase-gain scale)
        vvH = np.outer(mm.top_vec, mm.top_vec.conj())
        obj = pb.var("chiv")
        obj.add_expr(pb.trace("V", vvH), 1e-5)
        pb.maximize(obj)
    else:
        pb.minimize(pb.const(0.0))
    return pb.build()


def phase_stage(W, W_E, rho, lam, chi, cs, theta_prev, config: ScenarioConfig,
                mu, penalty_objective=True, mm_max=4):
    """Two-step phase update.

    Relaxation step: maximize the smoothed max-min slack chi over the lifted
    matrix (rank dropped) -- this is where the phase gains come from; the
    previous phases are always feasible at chi = 0, so the step never makes
    things worse. Enforcement step: majorize-minimize the rank-one penalty at
    the achieved slack, backing the slack off geometrically until the
    extracted unit-modulus phases hold every margin; with the slack at zero
    the previous phases re-admit themselves, so the backoff terminates.

    With penalty_objective=False the relaxed matrix is extracted directly
    (plain-relaxation baseline behavior).
    """
    V_prev = linz.lift_matrix(theta_prev)
    statuses = []

    # relaxation with SCA re-anchoring of the subtracted rate term; loose
    # solves, the slack does not need residual-tail accuracy
    V_sdr, chi_sdr = V_prev, 0.0
    anchor = V_prev
    warm = None
    loose_tol = max(config.conic_tol, 1e-5)
    for _sca in range(3):
        prog = build_p9(W, W_E, rho, lam, 0.0, cs, anchor, mu, config,
                        objective="chi")
        sol = solve(prog, tol=loose_tol,
                    max_iter=min(15000, config.conic_max_iter), warm_start=warm)
        statuses.append(sol.status)
        if sol.status not in (conic.OPTIMAL, conic.ITERATION_LIMIT):
            break
        if sol.status == conic.ITERATION_LIMIT and sol.max_residual > 1e-3:
            break
        warm = sol
        chi_new = float(sol.block("chiv"))
        V_sdr = _psd_clean(sol.block("V"))
        anchor = V_sdr
        gain = chi_new - chi_sdr
        chi_sdr = max(chi_sdr, chi_new)
        if gain <= 10 * config.sca_rel_tol * max(1.0, abs(chi_sdr)):
            break
    if statuses and statuses[0] != conic.OPTIMAL:
        return {"theta": theta_prev, "V": V_prev, "penalty": 0.0,
                "accepted": False, "statuses": statuses, "chi_used": 0.0,
                "penalties": [], "chi_sdr": 0.0}

    if not penalty_objective:
        theta_new = linz.extract_theta(V_sdr, config.N)
        return {"theta": theta_new, "V": V_sdr,
                "penalty": linz.rank_one_penalty(V_sdr), "accepted": True,
                "statuses": statuses, "chi_used": chi_sdr,
                "penalties": [linz.rank_one_penalty(V_sdr)], "chi_sdr": chi_sdr}

    frac = 1.0
    for _backoff in range(12):
        chi_used = max(chi_sdr, 0.0) * frac
        V_anchor = V_sdr
        warm = None
        penalties = []
        cand_V = None
        for _mm in range(max(mm_max, 1)):
            polish = bool(penalties) and penalties[-1] <= 1e-4
            prog = build_p9(W, W_E, rho, lam, chi_used, cs, V_anchor, mu,
                            config, objective="penalty")
            sol = solve(prog,
                        tol=3e-8 if polish else 1e-6,
                        max_iter=config.conic_max_iter if polish
                        else min(15000, config.conic_max_iter),
                        warm_start=warm)
            statuses.append(sol.status)
            if sol.status != conic.OPTIMAL and not (
                    sol.status == conic.ITERATION_LIMIT and sol.max_residual <= 1e-4):
                cand_V = None
                break
            warm = sol
            cand_V = _psd_clean(sol.block("V"))
            penalties.append(linz.rank_one_penalty(cand_V))
            V_anchor = cand_V
            if penalties[-1] <= 1e-6 and (polish or sol.max_residual <= 1e-6):
                break
            if len(penalties) >= 3 and abs(penalties[-1] - penalties[-2]) <= 1e-8:
                break
        if cand_V is not None and penalties and penalties[-1] <= 1e-4:
            theta_new = linz.extract_theta(cand_V, config.N)
            degr = extraction_degradation(W, W_E, rho, cs, cand_V, theta_new, config)
            if degr <= 1e-4:
                return {"theta": theta_new, "V": cand_V,
                        "penalty": penalties[-1], "accepted": True,
                        "statuses": statuses, "chi_used": chi_used,
                        "penalties": penalties, "chi_sdr": chi_sdr,
                        "extract_degradation": degr}
        if chi_used <= 1e-12:
            break
        frac = 0.0 if frac < 1e-3 else frac / 2.0
    return {"theta": theta_prev, "V": V_prev, "penalty": 0.0,
            "accepted": False, "statuses": statuses, "chi_used": 0.0,
            "penalties": [], "chi_sdr": chi_sdr}


def extraction_degradation(W, W_E, rho, cs, V, theta, config):
    """Largest relative drop of any phase-stage constraint margin when the
    lifted matrix is replaced by the extracted unit-modulus phases."""
    worst = 0.0
    h = [model.effective_channel(cs, theta, k) for k in range(config.K)]
    for k in range(config.K):
        L = linz.lift_phase(cs, k)
        Z = linz.z_of_v(L, V)
        x_v = np.array([_herm_trace(Wi, Z) for Wi in W])
        xe_v = _herm_trace(W_E, Z)
        p = model._beam_powers(h[k], W)
        pe = model._beam_powers(h[k], [W_E])[0]
        load = config.sigma2[k] + config.delta2[k] / rho[k]
        pairs = [
            (x_v[k] / config.gamma[k] - (x_v.sum() - x_v[k]) - load,
             p[k] / config.gamma[k] - (p.sum() - p[k]) - load),
            (x_v.sum() + xe_v, p.sum() + pe),
            (np.log2(x_v.sum() + load) - np.log2(x_v.sum() - x_v[k] + load),
             np.log2(p.sum() + load) - np.log2(p.sum() - p[k] + load)),
        ]
        for before, after in pairs:
            scale = max(abs(before), abs(after), 1e-12)
            worst = max(worst, (before - after) / scale)
    return worst


# ---------------------------------------------------------------------------
# alternating optimization
# ---------------------------------------------------------------------------

@dataclass
class AOTrace:
    rounds: list = field(default_factory=list)

    @property
    def min_ee(self):
        return [r["min_ee"] for r in self.rounds]


_REDRAW_OFFSETS = (0, 7777, 15555, 31313)


def initial_phases(cs, config: ScenarioConfig, seed, fixed_rho=None):
    """Seeded random reflection coefficients plus the feasible starting
    point. The hard SINR targets can be unreachable at a particular random
    draw, so up to four deterministic re-draws are tried before the scenario
    is declared infeasible."""
    err = None
    for off in _REDRAW_OFFSETS:
        theta = random_phases(config.N, seed + off)
        h = [model.effective_channel(cs, theta, k) for k in range(config.K)]
        try:
            return theta, init_feasible(h, config, fixed_rho=fixed_rho)
        except ScenarioInfeasible as exc:
            err = exc
    raise ScenarioInfeasible(f"all initial phase draws failed: {err}")


def ao_loop(cs, config: ScenarioConfig, seed=0, fixed_rho=None,
            no_penalty=False, theta0=None):
    """Alternate the Dinkelbach beam/PS stage with the lifted-phase stage.

    Returns (Solution, AOTrace). The min-EE trace is nondecreasing within
    solver tolerance; failed phase updates keep the previous phases.
    """
    K, N = config.K, config.N
    fixed = None if fixed_rho is None else \
        np.full(K, float(fixed_rho)) if np.isscalar(fixed_rho) else np.asarray(fixed_rho)
    if theta0 is not None:
        theta = np.asarray(theta0, dtype=complex).reshape(-1)
        anchor = None
    else:
        theta, anchor = initial_phases(cs, config, seed, fixed_rho=fixed)
    trace = AOTrace()
    lam_warm = 0.0
    mu = config.mu
    last_V = None
    point = None
    theta_prev = theta
    for rnd in range(config.j_max):
        h = [model.effective_channel(cs, theta, k) for k in range(K)]
        if anchor is None:
            anchor = init_feasible(h, config, fixed_rho=fixed)
        try:
            point, dstate, chi_star = dinkelbach_loop(h, config, anchor,
                                                      lam0=lam_warm, fixed_rho=fixed)
        except ScenarioInfeasible:
            if rnd == 0:
                raise
            # a blind phase update broke feasibility: revert and stop
            theta = theta_prev
            break
        R, P_T, EE, min_ee = model.rate_power_ee(h, point["W"], point["W_E"],
                                                 point["rho"], config)
        rank_ratios = [float(np.linalg.eigvalsh(Wk)[-1]
                             / max(np.real(np.trace(Wk)), 1e-300))
                       for Wk in point["W"]]
        rec = {"round": rnd, "min_ee": min_ee, "lam": dstate.lam,
               "chi": chi_star, "dinkelbach_iters": dstate.iteration,
               "dinkelbach_history": list(dstate.history),
               "sca_traces": list(dstate.sca_traces),
               "rank_ratio_min": min(rank_ratios),
               "we_trace": float(np.real(np.trace(point["W_E"]))),
               "mu": mu}
        anchor = point
        lam_warm = dstate.lam
        stop = rnd + 1 >= config.j_max
        if not stop and len(trace.rounds) >= 1:
            prev = trace.rounds[-1]["min_ee"]
            if prev > 0 and 0 <= (min_ee - prev) / abs(prev) < config.ao_rel_tol:
                stop = True
        if stop:
            trace.rounds.append(rec)
            break
        ph = phase_stage(point["W"], point["W_E"], point["rho"], dstate.lam,
                         chi_star, cs, theta, config, mu,
                         penalty_objective=not no_penalty)
        rec["penalty"] = ph["penalty"]
        rec["phase_statuses"] = ph["statuses"]
        rec["phase_chi"] = ph["chi_used"]
        rec["chi_sdr"] = ph.get("chi_sdr", 0.0)
        rec["extract_degradation"] = ph.get("extract_degradation")
        if ph["accepted"]:
            theta_prev = theta
            theta = ph["theta"]
            last_V = ph["V"]
        if not no_penalty and ph.get("penalty", 0.0) > 1e-6:
            mu = max(mu / 2.0, 1e-8)
        trace.rounds.append(rec)
    sol = Solution(W=point["W"], W_E=point["W_E"], rho=point["rho"], theta=theta,
                   V=last_V if last_V is not None else linz.lift_matrix(theta),
                   lam=trace.rounds[-1]["lam"], chi=trace.rounds[-1]["chi"])
    return sol, trace
