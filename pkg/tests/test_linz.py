import numpy as np
import pytest

from irsee import chanfab, linz, model


def rand_psd(rng, n, scale=1.0):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (X @ X.conj().T) / n


def rand_herm(rng, n, scale=1.0):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (X + X.conj().T) / 2


# ------------------------------------------------------------- DC rate split

def test_dc_split_single_user_g_is_noise_only():
    rng = np.random.default_rng(0)
    H = rand_psd(rng, 3)
    f, g = linz.dc_rate_split(H, [rand_psd(rng, 3)], 0.4, 0.1, 0.02, 0)
    assert g == pytest.approx(np.log2(0.1 + 0.02 / 0.4), rel=1e-12)


def test_dc_split_equals_rate():
    rng = np.random.default_rng(1)
    for _ in range(30):
        K, M = 3, 4
        h = rng.standard_normal(M) + 1j * rng.standard_normal(M)
        H = np.outer(h, h.conj())
        W = [rand_psd(rng, M) for _ in range(K)]
        rho, s2, d2 = rng.uniform(0.1, 0.9), 0.3, 0.05
        k = int(rng.integers(K))
        f, g = linz.dc_rate_split(H, W, rho, s2, d2, k)
        s = model.sinr(h, W, rho, s2, d2, k)
        assert f - g == pytest.approx(np.log2(1 + s), rel=1e-10)


def test_dc_split_zero_beams():
    H = np.eye(2, dtype=complex)
    f, g = linz.dc_rate_split(H, [np.zeros((2, 2), complex)] * 2, 0.5, 0.2, 0.1, 0)
    assert f == pytest.approx(g, rel=1e-14)


# ------------------------------------------------------------------ SCA on g

def sca_setup(seed=2, K=3, M=3):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    H = np.outer(h, h.conj())
    W0 = [rand_psd(rng, M) for _ in range(K)]
    rho0 = rng.uniform(0.2, 0.8)
    return rng, H, W0, rho0


def test_sca_anchored():
    rng, H, W0, rho0 = sca_setup()
    lin = linz.sca_linearize_g(W0, rho0, H, 1, 0.3, 0.05)
    _, g0 = linz.dc_rate_split(H, W0, rho0, 0.3, 0.05, 1)
    assert linz.sca_g_value(lin, W0, rho0) == pytest.approx(g0, abs=1e-12)


def test_sca_global_upper_bound_sampled():
    rng, H, W0, rho0 = sca_setup()
    lin = linz.sca_linearize_g(W0, rho0, H, 1, 0.3, 0.05)
    worst = 0.0
    for _ in range(1000):
        W = [rand_psd(rng, 3, scale=rng.uniform(0.1, 3.0)) for _ in range(3)]
        rho = rng.uniform(0.02, 0.98)
        _, g = linz.dc_rate_split(H, W, rho, 0.3, 0.05, 1)
        worst = min(worst, linz.sca_g_value(lin, W, rho) - g)
    assert worst >= -1e-9


def test_sca_gradients_match_finite_differences():
    rng, H, W0, rho0 = sca_setup()
    s2, d2 = 0.3, 0.05
    lin = linz.sca_linearize_g(W0, rho0, H, 1, s2, d2)

    def g_of(W, rho):
        return linz.dc_rate_split(H, W, rho, s2, d2, 1)[1]

    # rho direction (central difference)
    eps = 1e-6
    num = (g_of(W0, rho0 + eps) - g_of(W0, rho0 - eps)) / (2 * eps)
    assert lin.rho_gradient == pytest.approx(num, rel=1e-5)
    # W directions: random Hermitian perturbations of each block
    for i in range(3):
        D = rand_herm(rng, 3, 0.5)
        Wp = [w.copy() for w in W0]
        Wm = [w.copy() for w in W0]
        Wp[i] = W0[i] + eps * D
        Wm[i] = W0[i] - eps * D
        num = (g_of(Wp, rho0) - g_of(Wm, rho0)) / (2 * eps)
        analytic = float(np.real(np.trace(lin.grads[("W", i)].conj().T @ D)))
        if i == 1:
            assert analytic == 0.0
            assert abs(num) < 1e-9
        else:
            assert analytic == pytest.approx(num, rel=1e-5)


# ------------------------------------------------------------- phase lifting

def test_lift_scalar_case():
    cs = model.ChannelSet(H=[[0.7 - 0.2j]], h_ru=[[1.1 + 0.3j]], h_bu=[[-0.4 + 0.9j]])
    L = linz.lift_phase(cs, 0)
    theta = np.array([np.exp(1j * 0.8)])
    V = linz.lift_matrix(theta)
    w = np.array([0.6 - 1.2j])
    W = np.outer(w, w.conj())
    Z = linz.z_of_v(L, V)
    h = model.effective_channel(cs, theta, 0)
    assert np.real(np.trace(W @ Z)) == pytest.approx(abs(h.conj() @ w) ** 2, rel=1e-12)


def test_z_hermitian():
    rng = np.random.default_rng(3)
    config = chanfab.default_config(M=3, N=4, K=1)
    cs = chanfab.channels_from_config(config, seed=0)
    L = linz.lift_phase(cs, 0)
    V = rand_psd(rng, 5)
    Z = linz.z_of_v(L, V)
    assert np.linalg.norm(Z - Z.conj().T) < 1e-12 * max(np.linalg.norm(Z), 1)


def test_lift_cross_representation():
    rng = np.random.default_rng(4)
    config = chanfab.default_config(M=3, N=4, K=2)
    cs = chanfab.channels_from_config(config, seed=1)
    for trial in range(20):
        theta = np.exp(1j * rng.uniform(0, 2 * np.pi, 4))
        V = linz.lift_matrix(theta)
        for k in range(2):
            L = linz.lift_phase(cs, k)
            Z = linz.z_of_v(L, V)
            w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
            W = np.outer(w, w.conj())
            h = model.effective_channel(cs, theta, k)
            lhs = float(np.real(np.trace(W @ Z)))
            rhs = abs(h.conj() @ w) ** 2
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-18)


def test_extract_theta_recovers_lift():
    rng = np.random.default_rng(5)
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, 6))
    V = linz.lift_matrix(theta)
    back = linz.extract_theta(V)
    assert np.allclose(back, theta, atol=1e-10)


# ---------------------------------------------------------------- spectral MM

def test_spectral_mm_anchored():
    rng = np.random.default_rng(6)
    V0 = rand_psd(rng, 5)
    lin = linz.spectral_mm(V0)
    assert lin.evaluate({"V": V0}) == pytest.approx(linz.spectral_norm(V0), rel=1e-12)


def test_rank_one_penalty_zero_iff_rank_one():
    rng = np.random.default_rng(7)
    v = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    V1 = np.outer(v, v.conj())
    assert linz.rank_one_penalty(V1) == pytest.approx(0.0, abs=1e-10)
    V2 = rand_psd(rng, 5)
    assert linz.rank_one_penalty(V2) > 1e-3


def test_spectral_mm_global_lower_bound():
    rng = np.random.default_rng(8)
    V0 = rand_psd(rng, 4)
    lin = linz.spectral_mm(V0)
    for _ in range(1000):
        V = rand_psd(rng, 4, scale=rng.uniform(0.1, 4.0))
        assert lin.evaluate({"V": V}) <= linz.spectral_norm(V) + 1e-9


def test_penalty_surrogate_nonnegative_psd():
    rng = np.random.default_rng(9)
    V0 = rand_psd(rng, 4)
    lin = linz.spectral_mm(V0)
    for _ in range(200):
        V = rand_psd(rng, 4, scale=rng.uniform(0.1, 3.0))
        assert linz.penalty_surrogate(lin, V) >= -1e-9


# ---------------------------------------------------------- IA trace bounds

def test_trace_identity_exact():
    rng = np.random.default_rng(10)
    for _ in range(100):
        W = rand_herm(rng, 4)
        Z = rand_herm(rng, 4)
        assert linz.trace_identity(W, Z) == pytest.approx(
            float(np.real(np.trace(W @ Z))), rel=1e-10, abs=1e-12)


def test_trace_identity_zero_z():
    rng = np.random.default_rng(11)
    W = rand_herm(rng, 3)
    assert linz.trace_identity(W, np.zeros((3, 3))) == pytest.approx(0.0, abs=1e-12)


def test_trace_bounds_anchored_and_sandwich():
    rng = np.random.default_rng(12)
    W0, Z0 = rand_psd(rng, 3), rand_psd(rng, 3)
    tb = linz.ia_trace_bounds(W0, Z0)
    x0 = float(np.real(np.trace(W0 @ Z0)))
    assert tb.lower(W0, Z0) == pytest.approx(x0, rel=1e-10)
    assert tb.upper(W0, Z0) == pytest.approx(x0, rel=1e-10)
    for _ in range(1000):
        W = rand_herm(rng, 3, rng.uniform(0.2, 2.0))
        Z = rand_herm(rng, 3, rng.uniform(0.2, 2.0))
        x = float(np.real(np.trace(W @ Z)))
        assert tb.lower(W, Z) <= x + 1e-9
        assert tb.upper(W, Z) >= x - 1e-9


# ------------------------------------------------------------- IA rate model

def ia_setup(seed=13, K=3, M=3):
    rng = np.random.default_rng(seed)
    W0 = [rand_psd(rng, M) for _ in range(K)]
    Z0 = rand_psd(rng, M)
    return rng, W0, Z0


def test_ia_rate_anchored():
    rng, W0, Z0 = ia_setup()
    mdl = linz.ia_rate_split(W0, Z0, 0.5, 0.3, 0.05, 1)
    exact = linz.true_rate_wz(W0, Z0, 0.5, 0.3, 0.05, 1)
    assert mdl.rate_value(W0, Z0) == pytest.approx(exact, rel=1e-10)


def test_ia_rate_global_lower_bound():
    rng, W0, Z0 = ia_setup()
    mdl = linz.ia_rate_split(W0, Z0, 0.5, 0.3, 0.05, 1)
    for _ in range(1000):
        W = [rand_psd(rng, 3, rng.uniform(0.1, 2.5)) for _ in range(3)]
        Z = rand_psd(rng, 3, rng.uniform(0.1, 2.5))
        exact = linz.true_rate_wz(W, Z, 0.5, 0.3, 0.05, 1)
        assert mdl.rate_value(W, Z) <= exact + 1e-9


def test_ia_g_gradient_matches_chain_rule():
    # at the anchor the majorized g has the chain-rule gradient of
    # log2(sigma_bar + sum interference traces)
    rng, W0, Z0 = ia_setup()
    s2, d2, rho, k = 0.3, 0.05, 0.5, 1
    mdl = linz.ia_rate_split(W0, Z0, rho, s2, d2, k)
    eps = 1e-6

    def g_exact(W, Z):
        x = np.array([float(np.real(np.trace(Wi @ Z))) for Wi in W])
        return np.log2(x.sum() - x[k] + s2 + d2 / rho)

    for i in (0, 2):
        D = rand_herm(rng, 3, 0.5)
        Wp = [w.copy() for w in W0]
        Wm = [w.copy() for w in W0]
        Wp[i] = W0[i] + eps * D
        Wm[i] = W0[i] - eps * D
        num = (g_exact(Wp, Z0) - g_exact(Wm, Z0)) / (2 * eps)
        mdl_num = (mdl.g_value(Wp, Z0) - mdl.g_value(Wm, Z0)) / (2 * eps)
        assert mdl_num == pytest.approx(num, rel=1e-5)
    Dz = rand_herm(rng, 3, 0.5)
    num = (g_exact(W0, Z0 + eps * Dz) - g_exact(W0, Z0 - eps * Dz)) / (2 * eps)
    mdl_num = (mdl.g_value(W0, Z0 + eps * Dz) - mdl.g_value(W0, Z0 - eps * Dz)) / (2 * eps)
    assert mdl_num == pytest.approx(num, rel=1e-5)
