"""Physical-layer model of the IRS-aided SWIPT downlink.

Holds the scenario/channel/solution containers and the quantities every
algorithm needs: effective channels, SINR, split power, the sigmoidal
non-linear energy-harvesting map and its inverse, per-user rate / total
dissipated power / energy efficiency, and a feasibility report.

All powers are in watts, all ratios linear. dBm enters only at the CLI.
Every function here is pure; containers are treated as immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# exp() saturates beyond this argument; the logistic is flat there to machine
# precision anyway.
_EXP_CLIP = 500.0


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    """All physical and algorithmic parameters of one scenario.

    Array-valued fields have one entry per user. Geometry/fading fields feed
    the channel fabricator; tolerance/iteration fields feed the solvers.
    """

    M: int                      # BS antennas
    N: int                      # IRS elements
    K: int                      # users
    p_max: float                # BS transmit power budget [W]
    gamma: np.ndarray           # SINR targets, linear
    e_min: np.ndarray           # minimum harvested power targets [W]
    sigma2: np.ndarray          # antenna noise power [W]
    delta2: np.ndarray          # ID processing noise power [W]
    p_cr: np.ndarray            # receiver circuit power [W]
    eh_a: np.ndarray            # EH sigmoid steepness [1/W]
    eh_b: np.ndarray            # EH sigmoid turn-on point [W]
    eh_M: np.ndarray            # EH saturation power [W]
    geometry: object = None     # chanfab.GeometrySpec
    rician_K: float = 3.1622776601683795   # linear (5 dB)
    alpha_bi: float = 2.2       # path-loss exponent BS->IRS
    alpha_iu: float = 2.2       # path-loss exponent IRS->user
    alpha_bu: float = 3.6       # path-loss exponent BS->user
    lambda_c: float = 0.4       # carrier wavelength [m]
    # algorithmic knobs
    mu: float = 5e-5            # phase-stage penalty factor (halved on schedule)
    phi: float = 1e3            # IA penalty weight (doubled on schedule)
    eps_dinkelbach: float = 1e-2
    i_max: int = 10             # Dinkelbach iterations
    j_max: int = 5              # AO rounds (penalty pipeline)
    t_max: int = 3              # IA outer rounds
    ia_inner_max: int = 4       # IA inner iterations per outer round
    sca_max: int = 12           # SCA iterations per Dinkelbach step
    sca_rel_tol: float = 1e-4
    ao_rel_tol: float = 1e-4
    rho_margin: float = 1e-4    # PS ratios confined to [margin, 1-margin]
    conic_tol: float = 1e-7
    conic_tol_small: float = 1e-8   # tighter tolerance for the small (P6) programs
    conic_max_iter: int = 50_000

    def __post_init__(self):
        for name in ("gamma", "e_min", "sigma2", "delta2", "p_cr",
                     "eh_a", "eh_b", "eh_M"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        self.validate()

    def validate(self):
        if min(self.M, self.N, self.K) < 1:
            raise ValueError("M, N, K must all be >= 1")
        for name in ("gamma", "e_min", "sigma2", "delta2", "p_cr",
                     "eh_a", "eh_b", "eh_M"):
            arr = getattr(self, name)
            if arr.shape != (self.K,):
                raise ValueError(f"{name} must have length K={self.K}, got {arr.shape}")
            if np.any(arr <= 0):
                raise ValueError(f"{name} entries must be positive")
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")
        if not 0 < self.rho_margin < 0.5:
            raise ValueError("rho_margin must lie in (0, 0.5)")


@dataclass
class ChannelSet:
    """One channel realization: BS->IRS matrix plus per-user IRS->user and
    BS->user vectors."""

    H: np.ndarray               # (N, M) complex
    h_ru: list                  # K vectors of length N
    h_bu: list                  # K vectors of length M

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=complex)
        self.h_ru = [np.asarray(h, dtype=complex).reshape(-1) for h in self.h_ru]
        self.h_bu = [np.asarray(h, dtype=complex).reshape(-1) for h in self.h_bu]
        N, M = self.H.shape
        if any(h.shape != (N,) for h in self.h_ru):
            raise ValueError("h_ru entries must have length N")
        if any(h.shape != (M,) for h in self.h_bu):
            raise ValueError("h_bu entries must have length M")
        if len(self.h_ru) != len(self.h_bu):
            raise ValueError("h_ru and h_bu must have one entry per user")
        for arr in [self.H, *self.h_ru, *self.h_bu]:
            if not np.all(np.isfinite(arr.view(float))):
                raise ValueError("channel entries must be finite")

    @property
    def K(self):
        return len(self.h_ru)


@dataclass
class Solution:
    """One operating point: beam covariances (and extracted beams), energy
    covariance, PS ratios, reflection coefficients, current Dinkelbach value
    and max-min slack."""

    W: list                     # K Hermitian PSD (M, M)
    W_E: np.ndarray             # Hermitian PSD (M, M)
    rho: np.ndarray             # (K,) in (0, 1)
    theta: np.ndarray           # (N,) unit-modulus reflection coefficients
    w: list = None              # K extracted beams (M,)
    V: np.ndarray = None        # (N+1, N+1) lifted phase matrix, unit diagonal
    lam: float = 0.0            # Dinkelbach energy-efficiency value
    chi: float = 0.0            # max-min slack

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=complex).reshape(-1)
        if self.w is None:
            self.w = [extract_beam(Wk) for Wk in self.W]


def extract_beam(W):
    """Dominant-eigenpair beam sqrt(lambda_max) * u from a PSD covariance."""
    W = np.asarray(W, dtype=complex)
    vals, vecs = np.linalg.eigh(0.5 * (W + W.conj().T))
    lam = max(vals[-1], 0.0)
    return np.sqrt(lam) * vecs[:, -1]


# ---------------------------------------------------------------------------
# channels / SINR / power splitting
# ---------------------------------------------------------------------------

def effective_channel(cs: ChannelSet, theta, k: int):
    """Effective BS->user-k channel through the IRS.

    ``theta`` holds the physical reflection coefficients (the diagonal of the
    reflection matrix), all unit modulus. Returns h_k such that
    h_k^H = h_ru,k^H diag(theta) H + h_bu,k^H.
    """
    theta = np.asarray(theta, dtype=complex).reshape(-1)
    N, M = cs.H.shape
    if theta.shape != (N,):
        raise ValueError(f"theta must have length N={N}")
    hk_conj = cs.h_ru[k].conj() * theta @ cs.H + cs.h_bu[k].conj()
    return hk_conj.conj()


def _beam_powers(h, beams):
    """|h^H w_i|^2 for vector beams, Tr(h h^H W_i) for covariance beams."""
    h = np.asarray(h, dtype=complex).reshape(-1)
    out = np.empty(len(beams))
    for i, b in enumerate(beams):
        b = np.asarray(b, dtype=complex)
        if b.ndim == 1:
            out[i] = np.abs(h.conj() @ b) ** 2
        else:
            out[i] = np.real(h.conj() @ b @ h)
    return out


def sinr(h_k, beams, rho_k, sigma2_k, delta2_k, k: int):
    """Post-split SINR of user k.

    ``beams`` is the list over users, each entry either an extracted beam
    vector or a covariance matrix (both forms give the same value for
    rank-one covariances).
    """
    if rho_k <= 0 or rho_k > 1:
        raise ValueError("rho_k must lie in (0, 1]")
    if sigma2_k <= 0 or delta2_k < 0:
        raise ValueError("noise powers must be positive")
    p = _beam_powers(h_k, beams)
    interference = p.sum() - p[k]
    return rho_k * p[k] / (rho_k * interference + rho_k * sigma2_k + delta2_k)


def split_power(h_k, beams, W_E, rho_k):
    """RF power routed to the harvester: (1-rho) times the total received
    signal power (information beams plus energy covariance)."""
    if not 0 <= rho_k <= 1:
        raise ValueError("rho_k must lie in [0, 1]")
    p = _beam_powers(h_k, beams).sum()
    if W_E is not None:
        p += _beam_powers(h_k, [W_E])[0]
    return (1.0 - rho_k) * p


def received_power(h_k, beams, W_E):
    """Total received signal power at user k (the EH-side quantity before
    the (1-rho) split)."""
    p = _beam_powers(h_k, beams).sum()
    if W_E is not None:
        p += _beam_powers(h_k, [W_E])[0]
    return p


# ---------------------------------------------------------------------------
# non-linear energy harvesting
# ---------------------------------------------------------------------------

def eh_nonlinear(P_k, a_k, b_k, M_k):
    """Harvested power under the sigmoidal model.

    Monotone nondecreasing in the input power, zero at zero input, saturates
    below M_k.
    """
    P_k = np.asarray(P_k, dtype=float)
    if np.any(P_k < 0):
        raise ValueError("input power must be nonnegative")
    psi = M_k / (1.0 + np.exp(np.clip(-a_k * (P_k - b_k), -_EXP_CLIP, _EXP_CLIP)))
    omega = 1.0 / (1.0 + np.exp(np.clip(a_k * b_k, -_EXP_CLIP, _EXP_CLIP)))
    return (psi - M_k * omega) / (1.0 - omega)


def eh_logistic(P_k, a_k, b_k, M_k):
    """Raw logistic response psi (offset not removed); the EH constraint is
    expressed on this quantity."""
    P_k = np.asarray(P_k, dtype=float)
    return M_k / (1.0 + np.exp(np.clip(-a_k * (P_k - b_k), -_EXP_CLIP, _EXP_CLIP)))


def eh_inverse(psi, a_k, b_k, M_k):
    """Input power required for a logistic response psi in (0, M_k).

    Values at or above M_k are rejected: the circuit saturates and no finite
    input produces them.
    """
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0):
        raise ValueError("psi must be positive")
    if np.any(psi >= M_k):
        raise ValueError("psi at or above the saturation level M_k is unreachable")
    return b_k - np.log((M_k - psi) / psi) / a_k


def eh_required_power(e_min_k, a_k, b_k, M_k):
    """Received-power demand of the EH constraint; may be negative (then the
    constraint is vacuous)."""
    return float(eh_inverse(e_min_k, a_k, b_k, M_k))


# ---------------------------------------------------------------------------
# rate / power / EE
# ---------------------------------------------------------------------------

def rate_power_ee(h, W, W_E, rho, config: ScenarioConfig):
    """Per-user rate, total dissipated power, EE, and the min-EE.

    ``h`` is the list of effective channels, ``W`` the list of beam
    covariances (or beam vectors). Rates are bandwidth-normalized
    (bit/s/Hz), so EE comes out in bit/s/Hz per watt.
    """
    K = config.K
    R = np.empty(K)
    P_T = np.empty(K)
    tr_we = float(np.real(np.trace(W_E))) if W_E is not None else 0.0
    for k in range(K):
        s = sinr(h[k], W, rho[k], config.sigma2[k], config.delta2[k], k)
        R[k] = np.log2(1.0 + s)
        Wk = np.asarray(W[k])
        tr_wk = float(np.real(np.trace(Wk))) if Wk.ndim == 2 else float(np.linalg.norm(Wk) ** 2)
        P_T[k] = tr_wk + tr_we + config.p_cr[k]
    EE = R / P_T
    return R, P_T, EE, float(EE.min())


# ---------------------------------------------------------------------------
# feasibility report
# ---------------------------------------------------------------------------

@dataclass
class FeasibilityReport:
    """Per-constraint margins of a candidate solution (report only, never
    raises). Positive margins mean satisfied."""

    sinr_margin: np.ndarray        # watts
    eh_margin: np.ndarray          # watts
    power_margin: float            # watts
    rho_margin: np.ndarray         # distance to the open interval (0, 1)
    theta_modulus_err: float       # max | |theta_n| - 1 |
    sinr_margin_rel: np.ndarray = field(default=None)
    eh_margin_rel: np.ndarray = field(default=None)
    power_margin_rel: float = 0.0

    @property
    def min_margin(self):
        return float(min(self.sinr_margin.min(), self.eh_margin.min(),
                         self.power_margin, self.rho_margin.min()))

    @property
    def min_margin_rel(self):
        return float(min(self.sinr_margin_rel.min(), self.eh_margin_rel.min(),
                         self.power_margin_rel, self.rho_margin.min()))

    def ok(self, tol=1e-6, theta_tol=1e-6):
        return self.min_margin >= -tol and self.theta_modulus_err <= theta_tol


def check_feasibility(sol: Solution, cs: ChannelSet, config: ScenarioConfig) -> FeasibilityReport:
    """Evaluate every constraint margin of a Solution against a channel set.

    SINR margins use the transformed form |h^H w_k|^2/gamma - interference
    - sigma^2 - delta^2/rho (convex in rho); EH margins compare the received
    power against the inverse-sigmoid demand scaled by 1/(1-rho).
    """
    K = config.K
    h = [effective_channel(cs, sol.theta, k) for k in range(K)]
    sinr_m = np.empty(K)
    eh_m = np.empty(K)
    sinr_rel = np.empty(K)
    eh_rel = np.empty(K)
    for k in range(K):
        p = _beam_powers(h[k], sol.W)
        interference = p.sum() - p[k]
        need = interference + config.sigma2[k] + config.delta2[k] / sol.rho[k]
        sinr_m[k] = p[k] / config.gamma[k] - need
        sinr_rel[k] = sinr_m[k] / max(abs(p[k] / config.gamma[k]), need, 1e-300)
        recv = received_power(h[k], sol.W, sol.W_E)
        demand = eh_required_power(config.e_min[k], config.eh_a[k],
                                   config.eh_b[k], config.eh_M[k]) / (1.0 - sol.rho[k])
        eh_m[k] = recv - demand
        eh_rel[k] = eh_m[k] / max(abs(recv), abs(demand), 1e-300)
    used = sum(float(np.real(np.trace(np.asarray(Wk)))) for Wk in sol.W)
    if sol.W_E is not None:
        used += float(np.real(np.trace(sol.W_E)))
    power_m = config.p_max - used
    rho_m = np.minimum(sol.rho, 1.0 - sol.rho)
    theta_err = float(np.max(np.abs(np.abs(sol.theta) - 1.0))) if sol.theta.size else 0.0
    return FeasibilityReport(
        sinr_margin=sinr_m,
        eh_margin=eh_m,
        power_margin=power_m,
        rho_margin=rho_m,
        theta_modulus_err=theta_err,
        sinr_margin_rel=sinr_rel,
        eh_margin_rel=eh_rel,
        power_margin_rel=power_m / max(config.p_max, 1e-300),
    )
