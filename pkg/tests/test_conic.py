import numpy as np
import pytest
import scipy.sparse as sp

from irsee.conic import (
    EXP,
    HPSD,
    NONNEG,
    SOC,
    ZERO,
    Cone,
    ConicProgram,
    ProgramBuilder,
    dump_program,
    hermitian_eig,
    load_program,
    project_cone,
    project_dual_cone,
    smat,
    solve,
    svec,
)
from irsee.conic.barrier import _Block, barrier_solve
from irsee.conic.cones import in_exp, project_exp


def rand_herm(rng, n, scale=1.0):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (X + X.conj().T) / 2


# -------------------------------------------------------------- flat layout

def test_svec_roundtrip_and_isometry():
    rng = np.random.default_rng(0)
    for n in (1, 2, 4, 7):
        A = rand_herm(rng, n)
        B = rand_herm(rng, n)
        assert np.allclose(smat(svec(A), n), A)
        assert svec(A) @ svec(B) == pytest.approx(np.real(np.trace(A @ B)), abs=1e-12)


# -------------------------------------------------------------- projections

def test_psd_projection_identity_and_clip():
    eye = np.eye(2, dtype=complex)
    assert np.allclose(project_cone(svec(eye), Cone(HPSD, 2)), svec(eye))
    d = np.diag([1.0, -1.0]).astype(complex)
    out = smat(project_cone(svec(d), Cone(HPSD, 2)), 2)
    assert np.allclose(out, np.diag([1.0, 0.0]))


def test_psd_projection_idempotent_and_2x2_oracle():
    rng = np.random.default_rng(1)
    cone = Cone(HPSD, 2)
    for _ in range(50):
        A = rand_herm(rng, 2, 2.0)
        v = svec(A)
        p = project_cone(v, cone)
        assert np.linalg.norm(project_cone(p, cone) - p) <= 1e-10
        # brute force over the PSD parameterization x = [a, b, re, im]
        P = smat(p, 2)
        base = np.linalg.norm(P - A, "fro")
        best = base
        for _ in range(2000):
            lam = np.abs(rng.standard_normal(2)) * 2
            Q = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))[0]
            C = (Q * lam) @ Q.conj().T
            best = min(best, np.linalg.norm(C - A, "fro"))
        assert base <= best + 1e-6


def test_projections_nonexpansive():
    rng = np.random.default_rng(2)
    cones = [Cone(NONNEG, 4), Cone(SOC, 4), Cone(HPSD, 3), Cone(EXP, 3)]
    for cone in cones:
        size = cone.size
        for _ in range(100):
            a = rng.standard_normal(size) * 2
            b = rng.standard_normal(size) * 2
            pa, pb = project_cone(a, cone), project_cone(b, cone)
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9


def test_dual_projection_moreau():
    rng = np.random.default_rng(3)
    for cone in [Cone(NONNEG, 3), Cone(SOC, 4), Cone(HPSD, 2), Cone(EXP, 3), Cone(ZERO, 2)]:
        for _ in range(50):
            v = rng.standard_normal(cone.size) * 2
            p = project_cone(v, cone)
            d = project_dual_cone(-v, cone)
            # Moreau: v = proj_K(v) - proj_K*(-v)
            assert np.allclose(v, p - d, atol=1e-8)


def test_exp_projection_against_slsqp_oracle():
    from scipy.optimize import minimize
    rng = np.random.default_rng(4)

    def brute(v):
        def gcon(p):
            y = max(p[1], 1e-9)
            return p[2] - y * np.exp(np.clip(p[0] / y, -60, 60))
        best = None
        for y0 in (0.05, 0.5, 2.0):
            for x0 in (-1.5, 0.0, 1.5):
                z0 = y0 * np.exp(np.clip(x0 / y0, -30, 30)) + 0.3
                res = minimize(lambda p: 0.5 * np.sum((p - v) ** 2), [x0, y0, z0],
                               constraints=[{"type": "ineq", "fun": lambda p: p[1]},
                                            {"type": "ineq", "fun": gcon}],
                               method="SLSQP", options={"maxiter": 300, "ftol": 1e-14})
                if res.success and (best is None or res.fun < best):
                    best = res.fun
        ray = 0.5 * np.sum((np.array([min(v[0], 0), 0, max(v[2], 0)]) - v) ** 2)
        return min(best, ray) if best is not None else ray

    for _ in range(40):
        v = rng.standard_normal(3) * 2
        p = project_exp(v)
        assert in_exp(p, tol=1e-7 * (1 + np.abs(p).max()))
        mine = 0.5 * np.sum((p - v) ** 2)
        assert mine <= brute(v) + 1e-5 * (1 + abs(mine))


# ----------------------------------------------------------- hermitian eig

def test_hermitian_eig_identity_and_diag():
    vals, vecs = hermitian_eig(np.eye(3, dtype=complex))
    assert np.allclose(vals, 1.0)
    vals, vecs = hermitian_eig(np.diag([1.0, 2.0, 3.0]).astype(complex))
    assert np.allclose(vals, [1.0, 2.0, 3.0])
    assert np.allclose(np.abs(vecs), np.eye(3))


def test_hermitian_eig_reconstruction():
    rng = np.random.default_rng(5)
    A = rand_herm(rng, 8, 3.0)
    vals, vecs = hermitian_eig(A)
    rec = (vecs * vals) @ vecs.conj().T
    assert np.linalg.norm(rec - A) <= 1e-9 * max(np.linalg.norm(A), 1)
    assert np.linalg.norm(vecs.conj().T @ vecs - np.eye(8)) <= 1e-9


def test_hermitian_eig_rejects_nonhermitian():
    with pytest.raises(ValueError):
        hermitian_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


# ------------------------------------------------------------ toy programs

def test_min_eigenvalue_sdp():
    pb = ProgramBuilder()
    pb.herm("X", 3)
    pb.eq(pb.tr("X").add_expr(pb.const(-1.0)))
    pb.psd("X")
    pb.minimize(pb.trace("X", np.diag([3.0, 1.0, 2.0]).astype(complex)))
    sol = solve(pb.build(), tol=1e-9)
    assert sol.status == "optimal"
    assert sol.obj == pytest.approx(1.0, abs=1e-6)
    X = sol.block("X")
    assert np.real(X[1, 1]) == pytest.approx(1.0, abs=1e-5)


def test_simple_lp():
    pb = ProgramBuilder()
    pb.scalars("x")
    pb.ineq(pb.var("x").add_expr(pb.const(-1.0)))
    pb.minimize(pb.var("x"))
    sol = solve(pb.build(), tol=1e-9)
    assert sol.obj == pytest.approx(1.0, abs=1e-6)


def test_exp_cone_toy():
    pb = ProgramBuilder()
    pb.scalars("t")
    pb.expcone(pb.const(1.0), pb.const(1.0), pb.var("t"))
    pb.minimize(pb.var("t"))
    sol = solve(pb.build(), tol=1e-9)
    assert sol.obj == pytest.approx(np.e, abs=1e-6)


def test_infeasible_and_unbounded_certificates():
    pb = ProgramBuilder()
    pb.scalars("x")
    pb.ineq(pb.var("x").add_expr(pb.const(-1.0)))
    pb.ineq(pb.var("x", 0, -1.0))
    pb.minimize(pb.var("x"))
    assert solve(pb.build(), tol=1e-9).status == "infeasible"
    pb = ProgramBuilder()
    pb.scalars("x")
    pb.ineq(pb.var("x", 0, -1.0))
    pb.minimize(pb.var("x"))
    assert solve(pb.build(), tol=1e-9).status == "unbounded"


# ------------------------------------------- random programs, known optima

def complementary_pair(cone, rng):
    if cone.kind == ZERO:
        return np.zeros(cone.size), rng.standard_normal(cone.size)
    if cone.kind == NONNEG:
        mask = rng.uniform(size=cone.size) < 0.5
        return (np.where(mask, rng.uniform(0.2, 2, cone.size), 0.0),
                np.where(~mask, rng.uniform(0.2, 2, cone.size), 0.0))
    if cone.kind == SOC:
        z = rng.standard_normal(cone.size - 1)
        t = np.linalg.norm(z)
        return np.concatenate([[t], z]), rng.uniform(0.3, 1.5) * np.concatenate([[t], -z])
    if cone.kind == HPSD:
        n = cone.dim
        Q = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))[0]
        k = int(rng.integers(1, n))
        d1 = np.zeros(n)
        d2 = np.zeros(n)
        d1[:k] = rng.uniform(0.3, 2, k)
        d2[k:] = rng.uniform(0.3, 2, n - k)
        return svec((Q * d1) @ Q.conj().T), svec((Q * d2) @ Q.conj().T)
    if cone.kind == EXP:
        while True:
            v = rng.standard_normal(3) * 2
            p = project_exp(v)
            d = p - v
            if np.linalg.norm(p) > 1e-3 and np.linalg.norm(d) > 1e-3:
                return p, d
    raise ValueError(cone.kind)


def random_program(rng, n, cones, density=0.5):
    """Feasible bounded program with a known optimal value, built from a
    complementary primal-dual pair."""
    m = sum(c.size for c in cones)
    A = sp.random(m, n, density=density,
                  random_state=np.random.RandomState(int(rng.integers(1 << 30))),
                  data_rvs=rng.standard_normal).tocsr()
    s0 = np.empty(m)
    y0 = np.empty(m)
    off = 0
    for c in cones:
        s, y = complementary_pair(c, rng)
        s0[off:off + c.size] = s
        y0[off:off + c.size] = y
        off += c.size
    x0 = rng.standard_normal(n)
    prog = ConicProgram(c=-(A.T @ y0), A=A, b=A @ x0 + s0, cones=list(cones))
    return prog, float(prog.c @ x0), x0


def projected_subgradient_value(prog, x_init, iters=30000):
    """Independent oracle: restarted-Polyak subgradient descent on the exact
    penalty c'x + w * dist(b - Ax, K). With w above the dual norm, every
    iterate's penalty value upper-bounds the optimum, so the running minimum
    is a one-sided certificate."""
    from irsee.conic.cones import ConeWorkspace
    ws = ConeWorkspace(prog.cones)
    x = np.array(x_init, dtype=float)
    w = 20.0 * (1 + np.linalg.norm(prog.c))

    def penalty(x):
        s = prog.b - prog.A @ x
        p = ws.project(s, dual=False)
        d = s - p
        return float(prog.c @ x + w * np.linalg.norm(d)), d

    best, _ = penalty(x)
    x_best = x.copy()
    delta = 0.2 * (1 + abs(best))
    since_improve = 0
    for k in range(iters):
        f, d = penalty(x)
        if not np.isfinite(f):
            x = x_best.copy()
            f, d = penalty(x)
        if f < best - 1e-12 * (1 + abs(best)):
            best = f
            x_best = x.copy()
            since_improve = 0
        else:
            since_improve += 1
            if since_improve > 200:
                delta *= 0.5
                x = x_best.copy()
                f, d = penalty(x)
                since_improve = 0
        dn = np.linalg.norm(d)
        g = prog.c - (w / dn) * (prog.A.T @ d) if dn > 1e-14 else prog.c.copy()
        gn = np.linalg.norm(g)
        if gn < 1e-12 or delta < 1e-10 * (1 + abs(best)):
            break
        step = max(f - (best - delta), 0.0) / gn ** 2
        step = min(step, 1.0 / gn)          # trust cap on the displacement
        x = x - step * g
    return best


def test_solver_vs_projected_subgradient_oracle():
    rng = np.random.default_rng(11)
    for trial in range(8):
        cones = [Cone(NONNEG, 3), Cone(SOC, 3), Cone(HPSD, 2)]
        prog, opt, x0 = random_program(rng, 8, cones, density=0.7)
        sol = solve(prog, tol=1e-8, max_iter=30000)
        assert sol.status == "optimal"
        oracle = projected_subgradient_value(prog, x0 + rng.standard_normal(8) * 0.1,
                                             iters=15000)
        # the oracle's running penalty minimum upper-bounds the optimum: the
        # solver may not exceed it at the stated tolerance ...
        assert sol.obj <= oracle + 1e-4 * (1 + abs(oracle))
        # ... and the oracle should descend near the optimum from above
        assert oracle - sol.obj <= 0.02 * (1 + abs(sol.obj))
        # two-sided match against the independently constructed optimum
        assert sol.obj == pytest.approx(opt, rel=1e-4, abs=1e-4)


def test_determinism():
    rng = np.random.default_rng(13)
    cones = [Cone(NONNEG, 4), Cone(SOC, 4), Cone(HPSD, 3), Cone(EXP, 3)]
    prog, _, _ = random_program(rng, 12, cones)
    a = solve(prog, tol=1e-8)
    b = solve(prog, tol=1e-8)
    assert np.array_equal(a.x, b.x)
    assert a.iterations == b.iterations


def test_weak_duality_at_solution():
    rng = np.random.default_rng(17)
    cones = [Cone(NONNEG, 5), Cone(HPSD, 3)]
    prog, opt, _ = random_program(rng, 10, cones)
    sol = solve(prog, tol=1e-8)
    # minimization: primal objective >= dual objective - gap tolerance
    assert sol.obj >= -prog.b @ sol.y - 1e-6 * (1 + abs(sol.obj))


def test_dump_load_roundtrip(tmp_path):
    rng = np.random.default_rng(19)
    cones = [Cone(NONNEG, 3), Cone(HPSD, 2), Cone(EXP, 3)]
    prog, opt, _ = random_program(rng, 8, cones)
    path = tmp_path / "prog.json"
    dump_program(prog, path)
    back = load_program(path)
    s1 = solve(prog, tol=1e-8)
    s2 = solve(back, tol=1e-8)
    assert np.allclose(s1.x, s2.x)
    assert s1.obj == pytest.approx(s2.obj, rel=1e-10)


# ------------------------------------------------------------ barrier path

def test_barrier_derivatives_finite_difference():
    rng = np.random.default_rng(23)
    cases = [
        (Cone(NONNEG, 4), rng.uniform(0.5, 2, 4)),
        (Cone(SOC, 4), None),
        (Cone(HPSD, 3), None),
        (Cone(EXP, 3), np.array([0.2, 1.3, 1.3 * np.exp(0.2 / 1.3) * 1.5])),
    ]
    z = rng.standard_normal(3)
    cases[1] = (cases[1][0], np.concatenate([[np.linalg.norm(z) * 1.5], z]))
    X = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    cases[2] = (cases[2][0], svec(X @ X.conj().T + 0.5 * np.eye(3)))
    for cone, s in cases:
        blk = _Block(cone)
        g, H = blk.grad_hess(s)
        eps = 1e-6
        for i in range(len(s)):
            sp_ = s.copy()
            sm = s.copy()
            sp_[i] += eps
            sm[i] -= eps
            gn = (blk.value(sp_) - blk.value(sm)) / (2 * eps)
            assert g[i] == pytest.approx(gn, rel=2e-5, abs=1e-7), cone.kind
            hn = (blk.grad_hess(sp_)[0] - blk.grad_hess(sm)[0]) / (2 * eps)
            assert np.allclose(H[:, i], hn, rtol=2e-4, atol=1e-5), cone.kind


def test_barrier_matches_splitting_on_sdp():
    pb = ProgramBuilder()
    pb.herm("X", 3)
    pb.eq(pb.tr("X").add_expr(pb.const(-1.0)))
    pb.psd("X")
    pb.minimize(pb.trace("X", np.diag([3.0, 1.0, 2.0]).astype(complex)))
    prog = pb.build()
    x0 = svec(np.eye(3) / 3.0)
    sol = barrier_solve(prog, x0, tol=1e-9)
    assert sol.obj == pytest.approx(1.0, abs=1e-4)
    assert sol.res_dual <= 1e-5
    assert sol.max_residual <= 2e-5
