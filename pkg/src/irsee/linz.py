"""Convexification toolbox.

Everything the two pipelines need to turn the nonconvex rate / rank-one /
bilinear-coupling structure into anchored convex models:

- the DC split of the per-user rate into f - g,
- the SCA upper bound on g (linearized in the (W, 1/rho) coordinates, where
  g is jointly concave, so the bound holds globally),
- the phase lifting L_k / Z_k = L_k^H V L_k,
- the spectral-norm subgradient bound and the rank-one penalty,
- the Frobenius-identity trace bounds (lower model X_lo, upper model X_hi)
  and the joint rate surrogate used by the inner-approximation stage.

All models are anchored: evaluated at their expansion point they reproduce
the exact quantity. Complex gradients pair through Re Tr(G^H Delta).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic.cones import top_eigvec
from .model import ChannelSet

LN2 = np.log(2.0)


def _herm_inner(G, D):
    return float(np.real(np.trace(G.conj().T @ D)))


@dataclass
class Linearization:
    """Affine model value + grad-blocks around an expansion snapshot."""

    value: float
    grads: dict                  # block name -> gradient (matrix or scalar)
    expansion: dict              # block name -> expansion value

    def evaluate(self, point: dict) -> float:
        out = self.value
        for name, g in self.grads.items():
            d = point[name] - self.expansion[name]
            out += _herm_inner(g, d) if np.ndim(g) == 2 else float(g) * float(d)
        return out


# ---------------------------------------------------------------------------
# rate DC split and SCA bound
# ---------------------------------------------------------------------------

def dc_rate_split(H_k, W, rho_k, sigma2_k, delta2_k, k):
    """(f, g) with f - g equal to the exact rate log2(1 + SINR_k)."""
    tr = np.array([_herm_inner(H_k, Wi) for Wi in W])
    load = sigma2_k + delta2_k / rho_k
    f = np.log2(tr.sum() + load)
    g = np.log2(tr.sum() - tr[k] + load)
    return float(f), float(g)


def sca_linearize_g(W_exp, rho_exp, H_k, k, sigma2_k, delta2_k) -> Linearization:
    """Global upper bound on g around (W_exp, rho_exp).

    g is concave jointly in (W, u) with u = 1/rho (log of an affine form),
    so the tangent dominates g everywhere; the rho-gradient below is the
    chain rule of the u-gradient through u = 1/rho.
    """
    tr = np.array([_herm_inner(H_k, Wi) for Wi in W_exp])
    D = tr.sum() - tr[k] + sigma2_k + delta2_k / rho_exp
    grads = {}
    expansion = {}
    for i in range(len(W_exp)):
        grads[("W", i)] = np.zeros_like(H_k) if i == k else H_k / (LN2 * D)
        expansion[("W", i)] = np.asarray(W_exp[i])
    grads["u"] = delta2_k / (LN2 * D)
    expansion["u"] = 1.0 / rho_exp
    lin = Linearization(value=float(np.log2(D)), grads=grads, expansion=expansion)
    lin.rho_gradient = -(delta2_k / rho_exp ** 2) / (LN2 * D)
    lin.denominator = float(D)
    return lin


def sca_g_value(lin: Linearization, W, rho):
    """Evaluate the SCA model at (W, rho); rho enters through u = 1/rho."""
    point = {("W", i): np.asarray(Wi) for i, Wi in enumerate(W)}
    point["u"] = 1.0 / rho
    return lin.evaluate(point)


# ---------------------------------------------------------------------------
# phase lifting
# ---------------------------------------------------------------------------

def lift_phase(cs: ChannelSet, k: int):
    """(N+1) x M lifting matrix: stacked diag(h_ru^H) H over h_bu^H."""
    B = np.diag(cs.h_ru[k].conj()) @ cs.H
    return np.vstack([B, cs.h_bu[k].conj()[None, :]])


def z_of_v(L_k, V):
    """Z_k = L_k^H V L_k (Hermitian PSD whenever V is)."""
    return L_k.conj().T @ V @ L_k


def lift_theta(theta):
    """Lifted vector [conj(theta); 1]; V = lift lift^H reproduces the
    effective-channel quadratic forms via Tr(W Z_k)."""
    theta = np.asarray(theta, dtype=complex).reshape(-1)
    return np.concatenate([theta.conj(), [1.0 + 0j]])


def lift_matrix(theta):
    t = lift_theta(theta)
    return np.outer(t, t.conj())


def extract_theta(V, n_elements=None):
    """Unit-modulus reflection coefficients from a lifted matrix: dominant
    eigenvector, de-rotated by its last entry, entrywise normalized."""
    lam, v = top_eigvec(V)
    tail = v[-1]
    if abs(tail) < 1e-12:
        tail = 1.0
    z = v[:-1] / tail
    mags = np.abs(z)
    theta_conj = np.where(mags > 1e-12, z / np.where(mags > 1e-12, mags, 1.0), 1.0)
    if n_elements is not None:
        theta_conj = theta_conj[:n_elements]
    return theta_conj.conj()


# ---------------------------------------------------------------------------
# spectral-norm MM bound and rank-one penalty
# ---------------------------------------------------------------------------

def nuclear_norm(V):
    return float(np.abs(np.linalg.eigvalsh(0.5 * (V + V.conj().T))).sum())


def spectral_norm(V):
    vals = np.linalg.eigvalsh(0.5 * (V + V.conj().T))
    return float(max(vals[-1], -vals[0]))


def rank_one_penalty(V):
    """Nuclear minus spectral norm; zero exactly at rank one."""
    return nuclear_norm(V) - spectral_norm(V)


def spectral_mm(V_exp) -> Linearization:
    """Global lower bound on the spectral norm: the subgradient plane
    through the dominant eigenpair (deterministic tie-break on degeneracy)."""
    lam, v = top_eigvec(V_exp)
    vvH = np.outer(v, v.conj())
    lin = Linearization(value=float(lam), grads={"V": vvH},
                        expansion={"V": np.asarray(V_exp)})
    lin.top_vec = v
    return lin


def penalty_surrogate(lin: Linearization, V):
    """Lambda(V) = ||V||_* - A_tilde(V) >= ||V||_* - ||V||_2 >= 0 on PSD V."""
    return nuclear_norm(V) - lin.evaluate({"V": np.asarray(V)})


# ---------------------------------------------------------------------------
# Frobenius-identity trace bounds (inner-approximation stage)
# ---------------------------------------------------------------------------

def trace_identity(W, Z):
    """Tr(WZ) = 0.5||W+Z||_F^2 - 0.5||W||_F^2 - 0.5||Z||_F^2 for Hermitian
    arguments (exact)."""
    return (0.5 * np.linalg.norm(W + Z, "fro") ** 2
            - 0.5 * np.linalg.norm(W, "fro") ** 2
            - 0.5 * np.linalg.norm(Z, "fro") ** 2)


@dataclass
class TraceBounds:
    """Anchored concave lower model and convex upper model of Tr(WZ)."""

    W0: np.ndarray
    Z0: np.ndarray
    S0: np.ndarray = field(init=False)      # W0 + Z0, the F-gradient blocks

    def __post_init__(self):
        self.W0 = np.asarray(self.W0)
        self.Z0 = np.asarray(self.Z0)
        self.S0 = self.W0 + self.Z0

    def f_tilde(self, W, Z):
        """Tangent of the convex term 0.5||W+Z||^2 (lower bound)."""
        F0 = 0.5 * np.linalg.norm(self.S0, "fro") ** 2
        return F0 + _herm_inner(self.S0, W - self.W0) + _herm_inner(self.S0, Z - self.Z0)

    def lower(self, W, Z):
        """X_lo <= Tr(WZ) everywhere, concave, equality at the anchor."""
        return (self.f_tilde(W, Z)
                - 0.5 * np.linalg.norm(W, "fro") ** 2
                - 0.5 * np.linalg.norm(Z, "fro") ** 2)

    def upper(self, W, Z):
        """X_hi >= Tr(WZ) everywhere, convex, equality at the anchor."""
        t1 = 0.5 * np.linalg.norm(self.W0, "fro") ** 2 + _herm_inner(self.W0, W - self.W0)
        t2 = 0.5 * np.linalg.norm(self.Z0, "fro") ** 2 + _herm_inner(self.Z0, Z - self.Z0)
        return 0.5 * np.linalg.norm(W + Z, "fro") ** 2 - t1 - t2


def ia_trace_bounds(W_exp, Z_exp) -> TraceBounds:
    return TraceBounds(W_exp, Z_exp)


# ---------------------------------------------------------------------------
# joint rate surrogate for the inner-approximation stage
# ---------------------------------------------------------------------------

@dataclass
class IARateModel:
    """Concave global lower bound on the rate in the (W_1..K, Z_k) variables.

    f is evaluated through the concave lower trace models (so it sits below
    the true f); the subtracted term g = log2(sigma_bar + interference) is
    majorized by pushing the convex upper trace models through the tangent
    of the log, which both dominates g globally and reproduces the exact
    chain-rule gradient at the anchor. The result: model <= rate everywhere,
    equality at the expansion point.
    """

    bounds: list                 # TraceBounds per transmit covariance
    k: int
    sigma_bar: float             # sigma^2 + delta^2 / rho at the fixed split
    D0: float = field(init=False)
    x0: np.ndarray = field(init=False)

    def __post_init__(self):
        self.x0 = np.array([trace_identity(b.W0, b.Z0) for b in self.bounds])
        self.D0 = float(self.x0.sum() - self.x0[self.k] + self.sigma_bar)

    def g_value(self, W, Z):
        xhat = sum(b.upper(Wi, Z) for i, (b, Wi) in enumerate(zip(self.bounds, W))
                   if i != self.k)
        x0_int = self.x0.sum() - self.x0[self.k]
        return np.log2(self.D0) + (xhat - x0_int) / (self.D0 * LN2)

    def f_value(self, W, Z):
        arg = sum(b.lower(Wi, Z) for b, Wi in zip(self.bounds, W)) + self.sigma_bar
        if arg <= 0:
            return -np.inf
        return float(np.log2(arg))

    def rate_value(self, W, Z):
        return self.f_value(W, Z) - self.g_value(W, Z)


def ia_rate_split(W_exp, Z_exp, rho_k, sigma2_k, delta2_k, k) -> IARateModel:
    bounds = [ia_trace_bounds(Wi, Z_exp) for Wi in W_exp]
    return IARateModel(bounds=bounds, k=k,
                       sigma_bar=float(sigma2_k + delta2_k / rho_k))


def true_rate_wz(W, Z, rho_k, sigma2_k, delta2_k, k):
    """Exact rate through the lifted coupling (for bound checks)."""
    x = np.array([float(np.real(np.trace(Wi @ Z))) for Wi in W])
    load = sigma2_k + delta2_k / rho_k
    return float(np.log2(x.sum() + load) - np.log2(x.sum() - x[k] + load))
