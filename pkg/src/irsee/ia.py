"""Inner-approximation pipeline.

Outer stage: the PS ratios decouple per user at fixed beams/phases, so each
is a bracketed scalar maximization, followed by the Dinkelbach update of the
energy-efficiency value. Inner stage: beams and lifted phases move jointly
inside an anchored convex inner set built from the Frobenius trace bounds
(lower models on signal/harvest terms, upper models on interference and the
majorized subtracted rate term), with the coupling Z_k = L_k^H V L_k held as
hard equality rows. Like the penalty pipeline, the joint stage first
maximizes the smoothed max-min slack over the relaxed set, then enforces a
rank-one lifted matrix by majorize-minimization at a backed-off slack; every
point feasible for the inner set is feasible for the true constraints, which
is what certifies the monotone behavior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import conic, linz, model
from .chanfab import random_phases
from .conic import ProgramBuilder, solve
from .model import ScenarioConfig, Solution
from .penalty import (
    ScenarioInfeasible,
    _REDRAW_OFFSETS,
    _herm_trace,
    _normalized_user,
    _psd_clean,
    init_feasible,
)

log = logging.getLogger("irsee")
LN2 = np.log(2.0)


# ---------------------------------------------------------------------------
# PS-ratio stage
# ---------------------------------------------------------------------------

def solve_p10(h, W, W_E, lam, config: ScenarioConfig):
    """Per-user bracketed maximization of R_k(rho) - lam * P_T,k.

    The feasibility interval comes from the SINR transform (lower end) and
    the harvested-power transform (upper end); users decouple. Returns
    (rho, chi, per-user values); raises ScenarioInfeasible on an empty
    interval.
    """
    K = config.K
    margin = config.rho_margin
    rho = np.empty(K)
    vals = np.empty(K)
    for k in range(K):
        p = model._beam_powers(h[k], W)
        interference = p.sum() - p[k]
        a_k = p[k] / config.gamma[k] - interference - config.sigma2[k]
        if a_k <= 0:
            raise ScenarioInfeasible(f"user {k}: SINR target unreachable at fixed beams")
        lo = max(margin, config.delta2[k] / a_k)
        p_eh = model.eh_required_power(config.e_min[k], config.eh_a[k],
                                       config.eh_b[k], config.eh_M[k])
        hi = 1.0 - margin
        if p_eh > 0:
            recv = model.received_power(h[k], W, W_E)
            if recv <= p_eh:
                raise ScenarioInfeasible(
                    f"user {k}: harvested-power demand exceeds received power")
            hi = min(hi, 1.0 - p_eh / recv)
        if lo > hi:
            raise ScenarioInfeasible(f"user {k}: empty PS-ratio interval")
        p_t = float(np.real(np.trace(np.asarray(W[k]))) + np.real(np.trace(W_E))
                    + config.p_cr[k])

        def neg_obj(r, k=k, p_t=p_t):
            s = model.sinr(h[k], W, r, config.sigma2[k], config.delta2[k], k)
            return -(np.log2(1.0 + s) - lam * p_t)

        if config.delta2[k] == 0.0:
            rho[k] = 0.5 * (lo + hi)          # flat objective: midpoint
        else:
            res = minimize_scalar(neg_obj, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-10})
            cands = [(neg_obj(lo), lo), (neg_obj(hi), hi)]
            if res.success:
                cands.append((float(res.fun), float(res.x)))
            cands.sort()
            rho[k] = cands[0][1]
        vals[k] = -neg_obj(rho[k])
    return rho, float(vals.min()), vals


# ---------------------------------------------------------------------------
# joint beam/phase stage
# ---------------------------------------------------------------------------

def _lift_maps(cs, config):
    """Noise-normalized lifting matrix per user plus the congruence images of
    the Hermitian basis (rows tying each Z_k entry to the lifted matrix)."""
    out = []
    M = config.M
    for k in range(config.K):
        L = linz.lift_phase(cs, k) / np.sqrt(config.delta2[k])
        basis = []
        for c in range(M * M):
            e = np.zeros(M * M)
            e[c] = 1.0
            G = L @ conic.smat(e, M) @ L.conj().T
            basis.append(0.5 * (G + G.conj().T))
        out.append((L, basis))
    return out


def build_p11(expansion, lam, chi, rho, phi, cs, config: ScenarioConfig,
              objective="penalty"):
    """Joint program over beams, the energy covariance, and the lifted phases.

    objective="chi":     maximize the smoothed slack over the relaxed set.
    objective="penalty": minimize phi * (majorized rank-one penalty) at the
                         given fixed slack.
    All trace couplings go through the anchored Frobenius models, so any
    feasible point satisfies the exact constraints (inner approximation):
    lower models carry the signal/harvest sums, upper models the
    interference and the majorized subtracted rate term.
    """
    K, M, N = config.K, config.M, config.N
    V0 = expansion["V"]
    users = expansion["users"]
    use_we = any(u[2] > 0.0 for u in users)
    lift = expansion["lift"]
    # balance the beam and lifted-coupling scales: the Frobenius identity
    # subtracts ||.||^2 terms, and a 1e3 scale mismatch between W and Z burns
    # digits; Tr(W Z) is invariant under W -> aW, Z -> Z/a
    wscale = np.median([max(np.linalg.norm(Wi, "fro"), 1e-12)
                        for Wi in expansion["W"]])
    zscale = np.median([max(np.linalg.norm(Zk, "fro"), 1e-12)
                        for Zk in expansion["Z"]])
    alpha = float(np.clip(np.sqrt(zscale / wscale), 1.0, 1e6))
    W0 = [alpha * np.asarray(Wi) for Wi in expansion["W"]]
    WE0 = alpha * np.asarray(expansion["W_E"])
    Z0 = [Zk / alpha for Zk in expansion["Z"]]

    pb = ProgramBuilder()
    wn = [pb.herm(f"W{k}", M) for k in range(K)]
    if use_we:
        pb.herm("WE", M)
    pb.herm("V", N + 1, fixed_diag=1.0)
    zn = [pb.herm(f"Z{k}", M) for k in range(K)]
    pb.scalars("qW", K)
    pb.scalars("qZ", K)
    if use_we:
        pb.scalars("qWE", 1)
    pb.scalars("a", K)
    pb.scalars("wk", K)
    chi_variable = objective == "chi"
    if chi_variable:
        pb.scalars("chiv", 1)

    # Z_k entries pinned to the lifted matrix (zero-cone rows)
    for k in range(K):
        _, basis = lift[k]
        z_entries = pb.entries(zn[k])
        for c in range(M * M):
            row = z_entries[c]
            row.add_expr(pb.trace("V", basis[c]), -1.0 / alpha)
            pb.eq(row)

    # shared quadratic epigraphs
    for k in range(K):
        pb.quad_epigraph(pb.var("qW", k), pb.entries(wn[k]))
        pb.quad_epigraph(pb.var("qZ", k), pb.entries(zn[k]))
    if use_we:
        pb.quad_epigraph(pb.var("qWE", 0), pb.entries("WE"))
    pname = {}
    for k in range(K):
        for i in range(K):
            if i == k:
                continue
            nm = f"p{i}_{k}"
            pb.scalars(nm, 1)
            pname[(i, k)] = nm
            stack = pb.entries(wn[i])
            ze = pb.entries(zn[k])
            for c in range(M * M):
                stack[c].add_expr(ze[c])
            pb.quad_epigraph(pb.var(nm), stack)

    def f_tilde_expr(i, k):
        """Affine lower model of 0.5 ||W_i + Z_k||^2 at the anchor."""
        S0 = W0[i] + Z0[k]
        const = (0.5 * np.linalg.norm(S0, "fro") ** 2
                 - _herm_trace(S0, W0[i]) - _herm_trace(S0, Z0[k]))
        e = pb.const(const)
        e.add_expr(pb.trace(wn[i], S0))
        e.add_expr(pb.trace(zn[k], S0))
        return e

    def fe_tilde_expr(k):
        SE0 = WE0 + Z0[k]
        const = (0.5 * np.linalg.norm(SE0, "fro") ** 2
                 - _herm_trace(SE0, WE0) - _herm_trace(SE0, Z0[k]))
        e = pb.const(const)
        e.add_expr(pb.trace("WE", SE0))
        e.add_expr(pb.trace(zn[k], SE0))
        return e

    def t1_expr(i):
        e = pb.const(-0.5 * np.linalg.norm(W0[i], "fro") ** 2)
        e.add_expr(pb.trace(wn[i], W0[i]))
        return e

    def t2_expr(k):
        e = pb.const(-0.5 * np.linalg.norm(Z0[k], "fro") ** 2)
        e.add_expr(pb.trace(zn[k], Z0[k]))
        return e

    x0 = np.array([[linz.trace_identity(W0[i], Z0[k]) for i in range(K)]
                   for k in range(K)])

    for k in range(K):
        _, sbar, p_eh = users[k]
        load = sbar + 1.0 / rho[k]

        # SINR: lower model on the signal term, upper on interference
        row = f_tilde_expr(k, k).scaled(1.0 / config.gamma[k])
        row.add_expr(pb.var("qW", k), -1.0 / config.gamma[k])
        row.add_expr(pb.var("qZ", k), -1.0 / config.gamma[k])
        for i in range(K):
            if i == k:
                continue
            row.add_expr(pb.var(pname[(i, k)]), -1.0)
            row.add_expr(t1_expr(i))
            row.add_expr(t2_expr(k))
        row.add_expr(pb.const(-load))
        pb.ineq(row)

        # EH: lower models throughout
        if p_eh > 0.0:
            row = pb.const(-p_eh / (1.0 - rho[k]))
            for i in range(K):
                row.add_expr(f_tilde_expr(i, k))
                row.add_expr(pb.var("qW", i), -1.0)
                row.add_expr(pb.var("qZ", k), -1.0)
            if use_we:
                row.add_expr(fe_tilde_expr(k))
                row.add_expr(pb.var("qWE", 0), -1.0)
                row.add_expr(pb.var("qZ", k), -1.0)
            pb.ineq(row)

        # rate hypograph input: wk_k <= sigma_bar + 1/rho + sum_i X_lo(i,k)
        row = pb.const(load)
        for i in range(K):
            row.add_expr(f_tilde_expr(i, k))
            row.add_expr(pb.var("qW", i), -1.0)
            row.add_expr(pb.var("qZ", k), -1.0)
        row.add_expr(pb.var("wk", k), -1.0)
        pb.ineq(row)

        # a_k >= chi + lam P_T,k + majorized g(W, Z)
        D0 = x0[k].sum() - x0[k][k] + load
        coef = 1.0 / (D0 * LN2)
        const = (0.0 if chi_variable else chi) + lam * config.p_cr[k] \
            + np.log2(D0) - coef * (x0[k].sum() - x0[k][k])
        row = pb.var("a", k)
        row.add_expr(pb.const(-const))
        row.add_expr(pb.tr(wn[k]), -lam / alpha)
        if use_we:
            row.add_expr(pb.tr("WE"), -lam / alpha)
        if chi_variable:
            row.add_expr(pb.var("chiv"), -1.0)
        for i in range(K):
            if i == k:
                continue
            # X_hi(i, k) = p_ik - T1_tilde(W_i) - T2_tilde(Z_k)
            row.add_expr(pb.var(pname[(i, k)]), -coef)
            row.add_expr(t1_expr(i), coef)
            row.add_expr(t2_expr(k), coef)
        pb.ineq(row)
        pb.expcone(pb.var("a", k).scaled(LN2), pb.const(1.0), pb.var("wk", k))

    prow = pb.const(config.p_max)
    for w in wn:
        prow.add_expr(pb.tr(w), -1.0 / alpha)
    if use_we:
        prow.add_expr(pb.tr("WE"), -1.0 / alpha)
    pb.ineq(prow)
    for w in wn:
        pb.psd(w)
    if use_we:
        pb.psd("WE")
    pb.psd("V")

    mm = linz.spectral_mm(V0)
    vvH = np.outer(mm.top_vec, mm.top_vec.conj())
    if chi_variable:
        obj = pb.var("chiv")
        obj.add_expr(pb.trace("V", vvH), 1e-5)
        for w in wn:
            obj.add_expr(pb.tr(w), -1e-7 / alpha)
        pb.maximize(obj)
    else:
        obj = pb.const(phi * (N + 1 - mm.value + _herm_trace(vvH, V0)))
        obj.add_expr(pb.trace("V", vvH), -phi)
        pb.minimize(obj)

    meta = {"wn": wn, "zn": zn, "use_we": use_we, "chi_variable": chi_variable,
            "alpha": alpha}
    return pb.build(), meta


def _extract_p11(sol, meta, config):
    alpha = meta["alpha"]
    W = [_psd_clean(sol.block(n)) / alpha for n in meta["wn"]]
    WE = _psd_clean(sol.block("WE")) / alpha if meta["use_we"] \
        else np.zeros((config.M, config.M), dtype=complex)
    V = _psd_clean(sol.block("V"))
    Z = [alpha * _psd_clean(sol.block(n)) for n in meta["zn"]]
    chi = float(sol.block("chiv")) if meta["chi_variable"] else None
    return W, WE, V, Z, chi


@dataclass
class IATrace:
    rounds: list = field(default_factory=list)

    @property
    def min_ee(self):
        return [r["min_ee"] for r in self.rounds]


def ia_loop(cs, config: ScenarioConfig, seed=0, theta0=None):
    """Alternate the scalar PS-ratio stage with the joint beam/phase stage.

    Returns (Solution, IATrace). Rank-one candidates (dominant eigenpairs,
    with a common beam-power rescale of at most 5% to restore margins) are
    adopted only when they keep every exact constraint and the reached
    energy-efficiency level; otherwise the matrix iterate carries over as
    the next expansion.
    """
    K, M, N = config.K, config.M, config.N
    phi = config.phi
    err = None
    theta = np.asarray(theta0, dtype=complex).reshape(-1) if theta0 is not None \
        else random_phases(N, seed)
    W = None
    WE = np.zeros((M, M), dtype=complex)
    for off in _REDRAW_OFFSETS:
        if theta0 is None:
            theta = random_phases(N, seed + off)
        h = [model.effective_channel(cs, theta, k) for k in range(K)]
        W_id = [0.9 * config.p_max / (K * M) * np.eye(M, dtype=complex)
                for _ in range(K)]
        try:
            solve_p10(h, W_id, WE, 0.0, config)
            W = W_id
            break
        except ScenarioInfeasible as exc:
            err = exc
        try:
            point = init_feasible(h, config)
            W = point["W"]
            WE = point["W_E"]
            break
        except ScenarioInfeasible as exc:
            err = exc
            if theta0 is not None:
                raise
    if W is None:
        raise ScenarioInfeasible(f"all initial phase draws failed: {err}")

    users = [_normalized_user(model.effective_channel(cs, theta, k), config, k)
             for k in range(K)]
    lam = 0.0
    rho = np.full(K, 0.5)
    trace = IATrace()
    for t_outer in range(config.t_max):
        h = [model.effective_channel(cs, theta, k) for k in range(K)]
        rho, chi_p10, _ = solve_p10(h, W, WE, lam, config)
        R, P_T, _, _ = model.rate_power_ee(h, W, WE, rho, config)
        lam = max(lam, float(np.min(R / P_T)))
        rec = {"round": t_outer, "min_ee": float(np.min(R / P_T)), "lam": lam,
               "chi_p10": chi_p10, "phi": phi, "penalties": [], "statuses": []}

        lift = _lift_maps(cs, config)
        V_exp = linz.lift_matrix(theta)
        expansion = {"W": W, "W_E": WE, "theta": theta, "V": V_exp,
                     "lift": lift, "users": users,
                     "Z": [linz.z_of_v(lift[k][0], V_exp) for k in range(K)]}

        prog, meta = build_p11(expansion, lam, 0.0, rho, phi, cs, config,
                               objective="chi")
        sol = solve(prog, tol=1e-5, max_iter=min(15000, config.conic_max_iter))
        rec["statuses"].append(sol.status)
        if sol.status not in (conic.OPTIMAL, conic.ITERATION_LIMIT) or \
                (sol.status == conic.ITERATION_LIMIT and sol.max_residual > 1e-3):
            trace.rounds.append(rec)
            break
        W_rel, WE_rel, V_rel, Z_rel, chi_rel = _extract_p11(sol, meta, config)
        rec["chi_joint"] = chi_rel

        accepted = False
        frac = 1.0
        for _backoff in range(8):
            chi_used = max(chi_rel, 0.0) * frac
            anchor = {**expansion, "W": W_rel, "W_E": WE_rel, "V": V_rel, "Z": Z_rel}
            warm = None
            penalties = []
            cand = None
            for _inner in range(max(config.ia_inner_max, 1)):
                polish = bool(penalties) and penalties[-1] <= 1e-4
                prog, meta = build_p11(anchor, lam, chi_used, rho, phi, cs,
                                       config, objective="penalty")
                sol = solve(prog, tol=3e-8 if polish else 1e-6,
                            max_iter=config.conic_max_iter if polish
                            else min(15000, config.conic_max_iter),
                            warm_start=warm)
                rec["statuses"].append(sol.status)
                if sol.status != conic.OPTIMAL and not (
                        sol.status == conic.ITERATION_LIMIT and sol.max_residual <= 1e-4):
                    cand = None
                    break
                warm = sol
                cand = _extract_p11(sol, meta, config)
                penalties.append(linz.rank_one_penalty(cand[2]))
                anchor = {**anchor, "W": cand[0], "W_E": cand[1],
                          "V": cand[2], "Z": cand[3]}
                if penalties[-1] <= 1e-6 and (polish or sol.max_residual <= 1e-6):
                    break
            rec["penalties"] = penalties
            if cand is not None and penalties and penalties[-1] <= 1e-4:
                W_c, WE_c, V_c, _, _ = cand
                theta_c = linz.extract_theta(V_c, N)
                w_c = [model.extract_beam(Wk) for Wk in W_c]
                h_c = [model.effective_channel(cs, theta_c, k) for k in range(K)]
                for scale in (1.0, 1.01, 1.025, 1.05):
                    W_try = [scale * np.outer(wv, wv.conj()) for wv in w_c]
                    used = sum(np.real(np.trace(Wk)) for Wk in W_try) \
                        + np.real(np.trace(WE_c))
                    if used > config.p_max:
                        break
                    cand_sol = Solution(W=W_try, W_E=WE_c, rho=rho, theta=theta_c)
                    rep = model.check_feasibility(cand_sol, cs, config)
                    Rc, Pc, _, _ = model.rate_power_ee(h_c, W_try, WE_c, rho, config)
                    if rep.min_margin_rel >= -1e-4 and \
                            float(np.min(Rc / Pc)) >= lam - 1e-6:
                        W, WE, theta = W_try, WE_c, theta_c
                        accepted = True
                        rec["rescale"] = scale
                        rec["penalty"] = penalties[-1]
                        rec["V_final"] = V_c
                        break
            if accepted or chi_used <= 1e-12:
                break
            frac = 0.0 if frac < 1e-3 else frac / 2.0
        if not accepted:
            rec["joint_rejected"] = True
        h = [model.effective_channel(cs, theta, k) for k in range(K)]
        R, P_T, _, _ = model.rate_power_ee(h, W, WE, rho, config)
        rec["min_ee"] = float(np.min(R / P_T))
        lam = max(lam, float(np.min(R / P_T)))
        rec["lam"] = lam
        if rec["penalties"] and rec["penalties"][-1] > 1e-6:
            phi = min(phi * 2.0, 1e6)
        trace.rounds.append(rec)
        if len(trace.rounds) >= 2:
            prev = trace.rounds[-2]["min_ee"]
            if prev > 0 and 0 <= (rec["min_ee"] - prev) / abs(prev) < config.ao_rel_tol:
                break

    h = [model.effective_channel(cs, theta, k) for k in range(K)]
    rho, chi_final, _ = solve_p10(h, W, WE, lam, config)
    R, P_T, _, _ = model.rate_power_ee(h, W, WE, rho, config)
    lam = max(lam, float(np.min(R / P_T)))
    final_V = next((r["V_final"] for r in reversed(trace.rounds)
                    if r.get("V_final") is not None), None)
    out = Solution(W=W, W_E=WE, rho=rho, theta=theta,
                   V=final_V if final_V is not None else linz.lift_matrix(theta),
                   lam=lam, chi=chi_final)
    if trace.rounds:
        trace.rounds[-1]["min_ee"] = float(np.min(R / P_T))
        trace.rounds[-1]["lam"] = lam
    return out, trace
