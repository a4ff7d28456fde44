import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsee import chanfab, model


def tiny_channels(N=2, M=2, K=2, seed=0):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))
    h_ru = [rng.standard_normal(N) + 1j * rng.standard_normal(N) for _ in range(K)]
    h_bu = [rng.standard_normal(M) + 1j * rng.standard_normal(M) for _ in range(K)]
    return model.ChannelSet(H=H, h_ru=h_ru, h_bu=h_bu)


# ----------------------------------------------------------------- channels

def test_effective_channel_scalar_constructive():
    cs = model.ChannelSet(H=[[1.0]], h_ru=[[1.0]], h_bu=[[1.0]])
    h = model.effective_channel(cs, np.array([np.exp(1j * 0.0)]), 0)
    assert np.allclose(h, [2.0])


def test_effective_channel_scalar_destructive():
    cs = model.ChannelSet(H=[[1.0]], h_ru=[[1.0]], h_bu=[[1.0]])
    h = model.effective_channel(cs, np.array([np.exp(1j * np.pi)]), 0)
    assert np.allclose(h, [0.0], atol=1e-12)


def test_effective_channel_matches_elementwise():
    cs = tiny_channels()
    rng = np.random.default_rng(1)
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, 2))
    for k in range(2):
        # direct elementwise evaluation of the reflected + direct sum
        hk_conj = np.zeros(2, dtype=complex)
        for m in range(2):
            acc = 0.0 + 0j
            for n in range(2):
                acc += cs.h_ru[k][n].conj() * theta[n] * cs.H[n, m]
            hk_conj[m] = acc + cs.h_bu[k][m].conj()
        h = model.effective_channel(cs, theta, k)
        assert np.allclose(h.conj(), hk_conj, atol=1e-12)


def test_effective_channel_dim_mismatch():
    cs = tiny_channels()
    with pytest.raises(ValueError):
        model.effective_channel(cs, np.ones(3, dtype=complex), 0)


# --------------------------------------------------------------------- SINR

def test_sinr_unit_case():
    h = np.array([1.0 + 0j])
    w = [np.array([1.0 + 0j])]
    # |h^H w|^2 = 1 = sigma2 + delta2
    assert model.sinr(h, w, 1.0, 0.6, 0.4, 0) == pytest.approx(1.0)


def test_sinr_rho_cancels_without_processing_noise():
    rng = np.random.default_rng(2)
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    w = [rng.standard_normal(3) + 1j * rng.standard_normal(3) for _ in range(2)]
    vals = [model.sinr(h, w, rho, 0.1, 0.0, 0) for rho in (0.05, 0.2, 0.5, 0.9, 1.0)]
    assert np.ptp(vals) < 1e-12 * abs(vals[0])


def test_sinr_matches_scalar_formula_k2():
    rng = np.random.default_rng(3)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    w = [rng.standard_normal(4) + 1j * rng.standard_normal(4) for _ in range(2)]
    rho, s2, d2 = 0.3, 0.07, 0.02
    num = rho * abs(h.conj() @ w[1]) ** 2
    den = rho * abs(h.conj() @ w[0]) ** 2 + rho * s2 + d2
    assert model.sinr(h, w, rho, s2, d2, 1) == pytest.approx(num / den, rel=1e-12)


def test_sinr_covariance_equals_vector_form():
    rng = np.random.default_rng(4)
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    w = [rng.standard_normal(3) + 1j * rng.standard_normal(3) for _ in range(3)]
    W = [np.outer(wi, wi.conj()) for wi in w]
    a = model.sinr(h, w, 0.6, 0.1, 0.05, 1)
    b = model.sinr(h, W, 0.6, 0.1, 0.05, 1)
    assert a == pytest.approx(b, rel=1e-12)


def test_sinr_rejects_zero_rho():
    with pytest.raises(ValueError):
        model.sinr(np.ones(1, complex), [np.ones(1, complex)], 0.0, 0.1, 0.1, 0)


# -------------------------------------------------------------- split power

def test_split_power_rho_one_is_zero():
    h = np.ones(2, dtype=complex)
    assert model.split_power(h, [np.ones(2, complex)], None, 1.0) == 0.0


def test_split_power_rho_zero_single_beam():
    rng = np.random.default_rng(5)
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    assert model.split_power(h, [w], np.zeros((3, 3)), 0.0) == \
        pytest.approx(abs(h.conj() @ w) ** 2, rel=1e-12)


def test_split_power_term_by_term():
    rng = np.random.default_rng(6)
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    W = []
    for _ in range(3):
        X = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        W.append(X @ X.conj().T)
    WE = np.eye(3, dtype=complex) * 0.3
    rho = 0.4
    expect = (1 - rho) * (sum(np.real(h.conj() @ Wi @ h) for Wi in W)
                          + np.real(h.conj() @ WE @ h))
    assert model.split_power(h, W, WE, rho) == pytest.approx(expect, rel=1e-12)


# ----------------------------------------------------------------------- EH

A, B, MSAT = 6400.0, 0.003, 0.02


def test_eh_zero_input_zero_output():
    assert model.eh_nonlinear(0.0, A, B, MSAT) == 0.0


def test_eh_midpoint():
    om = 1.0 / (1.0 + np.exp(A * B))
    expect = (MSAT / 2 - MSAT * om) / (1 - om)
    assert model.eh_nonlinear(B, A, B, MSAT) == pytest.approx(expect, rel=1e-12)
    # frozen direct evaluation
    assert model.eh_nonlinear(B, A, B, MSAT) == pytest.approx(0.009999999954128182, rel=1e-12)


def test_eh_direct_evaluation_table_params():
    # frozen from evaluating the sigmoid at P = 5 mW
    assert model.eh_nonlinear(0.005, A, B, MSAT) == pytest.approx(0.01999994478470074, rel=1e-12)


def test_eh_monotone_and_bounded():
    rng = np.random.default_rng(7)
    P = np.sort(rng.uniform(0, 0.05, 1000))
    vals = model.eh_nonlinear(P, A, B, MSAT)
    assert np.all(np.diff(vals) >= -1e-15)
    assert np.all(vals >= -1e-15)
    # bounded by the saturation level; strictly below it before deep saturation
    assert np.all(vals <= MSAT)
    assert np.all(vals[P < B] < MSAT)


def test_eh_inverse_midpoint_and_frozen():
    assert model.eh_inverse(MSAT / 2, A, B, MSAT) == pytest.approx(B, rel=1e-12)
    assert model.eh_inverse(0.9 * MSAT, A, B, MSAT) == \
        pytest.approx(0.0033433163402087846, rel=1e-12)


@given(st.floats(min_value=1e-6, max_value=1 - 1e-6))
@settings(max_examples=200, deadline=None)
def test_eh_roundtrip(frac):
    psi = frac * MSAT
    P = model.eh_inverse(psi, A, B, MSAT)
    back = model.eh_logistic(P, A, B, MSAT)
    assert back == pytest.approx(psi, rel=1e-10)


def test_eh_inverse_rejects_saturation():
    with pytest.raises(ValueError):
        model.eh_inverse(MSAT, A, B, MSAT)
    with pytest.raises(ValueError):
        model.eh_inverse(0.0, A, B, MSAT)


def test_eh_overflow_guard():
    # far beyond the knee: must saturate, not overflow
    assert model.eh_nonlinear(1e6, A, B, MSAT) == pytest.approx(MSAT, rel=1e-9)


# ------------------------------------------------------------ rate/power/EE

def cfg(K=2, **kw):
    return chanfab.default_config(K=K, M=2, N=2, **kw)


def test_rate_unit_sinr():
    config = cfg(K=1)
    h = [np.array([1.0 + 0j, 0.0])]
    # pick W so that |h^H w|^2 = sigma2 + delta2/rho at rho = 1... use rho=1
    tot = config.sigma2[0] + config.delta2[0]
    W = [np.diag([tot, 0.0]).astype(complex)]
    R, P_T, EE, min_ee = model.rate_power_ee(h, W, np.zeros((2, 2)), np.array([1.0]), config)
    assert R[0] == pytest.approx(1.0, rel=1e-12)


def test_zero_beams_zero_ee():
    config = cfg()
    h = [np.ones(2, complex), np.ones(2, complex)]
    W = [np.zeros((2, 2), complex)] * 2
    R, P_T, EE, min_ee = model.rate_power_ee(h, W, np.zeros((2, 2)), np.array([0.5, 0.5]), config)
    assert min_ee == 0.0
    assert np.all(EE == 0.0)


def test_ee_compositional():
    config = cfg()
    rng = np.random.default_rng(8)
    h = [rng.standard_normal(2) + 1j * rng.standard_normal(2) for _ in range(2)]
    W = []
    for _ in range(2):
        X = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        W.append(0.01 * X @ X.conj().T)
    WE = 0.001 * np.eye(2, dtype=complex)
    rho = np.array([0.4, 0.7])
    R, P_T, EE, min_ee = model.rate_power_ee(h, W, WE, rho, config)
    for k in range(2):
        s = model.sinr(h[k], W, rho[k], config.sigma2[k], config.delta2[k], k)
        rk = np.log2(1 + s)
        pk = np.real(np.trace(W[k])) + np.real(np.trace(WE)) + config.p_cr[k]
        assert EE[k] == pytest.approx(rk / pk, rel=1e-12)
    assert min_ee == pytest.approx(EE.min())


def test_ee_denominator_scaling():
    config = cfg(K=1)
    h = [np.ones(2, complex)]
    rho = np.array([0.5])
    base_W = [0.01 * np.eye(2, dtype=complex)]
    R1, P1, EE1, _ = model.rate_power_ee(h, base_W, np.zeros((2, 2)), rho, config)
    c = 3.0
    config2 = chanfab.default_config(K=1, M=2, N=2, p_cr=float(config.p_cr[0] * c))
    # scaling every power term in the denominator by c with the rate held
    # fixed divides EE by c
    scaled_W = [c * base_W[0]]
    R2, P2, EE2, _ = model.rate_power_ee(h, scaled_W, np.zeros((2, 2)), rho, config2)
    assert P2[0] == pytest.approx(c * P1[0], rel=1e-12)
    assert R2[0] / P2[0] == pytest.approx((R2[0] / P1[0]) / c, rel=1e-12)


# ------------------------------------------------------------- feasibility

def test_feasibility_zero_beams_violates_sinr():
    config = cfg()
    cs = chanfab.channels_from_config(config, seed=0)
    sol = model.Solution(W=[np.zeros((2, 2), complex)] * 2,
                         W_E=np.zeros((2, 2), complex),
                         rho=np.array([0.5, 0.5]),
                         theta=np.exp(1j * np.zeros(2)))
    rep = model.check_feasibility(sol, cs, config)
    assert np.all(rep.sinr_margin < 0)


def test_feasibility_sinr_transform_equivalence():
    # margin >= 0 iff SINR >= gamma, in both directions, on random instances
    config = cfg()
    rng = np.random.default_rng(9)
    cs = chanfab.channels_from_config(config, seed=1)
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, config.N))
    h = [model.effective_channel(cs, theta, k) for k in range(config.K)]
    for trial in range(50):
        W = []
        for _ in range(config.K):
            x = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            W.append(rng.uniform(0, 0.4) * np.outer(x, x.conj()))
        rho = rng.uniform(0.05, 0.95, config.K)
        sol = model.Solution(W=W, W_E=np.zeros((2, 2), complex), rho=rho, theta=theta)
        rep = model.check_feasibility(sol, cs, config)
        for k in range(config.K):
            s = model.sinr(h[k], W, rho[k], config.sigma2[k], config.delta2[k], k)
            assert (rep.sinr_margin[k] >= 0) == (s >= config.gamma[k] - 1e-15)


def test_feasibility_eh_blowup_near_rho_one():
    config = cfg(e_min=1e-6)
    cs = chanfab.channels_from_config(config, seed=2)
    W = [0.2 * np.eye(2, dtype=complex)] * 2
    margins = []
    for rho in (0.9, 0.99, 0.999999):
        sol = model.Solution(W=W, W_E=np.zeros((2, 2), complex),
                             rho=np.array([rho, rho]), theta=np.ones(2, complex))
        rep = model.check_feasibility(sol, cs, config)
        margins.append(rep.eh_margin.min())
    assert margins[0] > margins[1] > margins[2]
    assert margins[2] < -1e3  # demand explodes like 1/(1-rho)
