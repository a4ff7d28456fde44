"""Reproducible scenario generation.

Geometry, distance-dependent path loss, ULA steering vectors, and Rician
channel realizations. Randomness comes from counter-based Philox streams
keyed by (seed, link code, user index), so every link/user pair has its own
stream and realizations are bit-identical across platforms for a given seed.

Also owns the scenario-file format (JSON mirroring the usual simulation-table
keys, dB/dBm at this boundary only) and the channel dump format (npz).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import ChannelSet, ScenarioConfig
from .units import db_to_lin, dbm_to_watt, lin_to_db, watt_to_dbm

# stream codes for the per-link Philox keys
_LINK_H = 0
_LINK_RU = 1
_LINK_BU = 2
_LINK_USERPOS = 3
_LINK_THETA0 = 4


@dataclass
class GeometrySpec:
    """Node placement in the 2-D plane (meters).

    ``user_positions`` may be given explicitly; otherwise users land on an
    annulus around the BS: distance uniform in ``user_dist_range``, azimuth
    within +/- ``user_angle_spread`` of the BS->IRS direction. Equalizing
    the BS distances keeps the worst-user SNR bounded away from zero, which
    the hard per-user SINR targets need, while the angular spread keeps the
    users separable and the surface in play.
    """

    bs_pos: tuple = (5.0, 0.0)
    irs_pos: tuple = (0.0, 10.0)
    cell_radius: float = 10.0
    user_positions: list = None          # K explicit (x, y) pairs, optional
    user_dist_range: tuple = (4.0, 6.0)
    user_angle_spread: float = np.pi / 3.0

    def place_users(self, K: int, seed: int):
        if self.user_positions is not None:
            pos = np.asarray(self.user_positions, dtype=float)
            if pos.shape != (K, 2):
                raise ValueError(f"user_positions must be ({K}, 2)")
            return pos
        rng = _stream(seed, _LINK_USERPOS, 0)
        bs = np.asarray(self.bs_pos, dtype=float)
        irs = np.asarray(self.irs_pos, dtype=float)
        base = float(np.arctan2(*(irs - bs)[::-1]))
        ang = base + rng.uniform(-self.user_angle_spread, self.user_angle_spread, size=K)
        dist = rng.uniform(self.user_dist_range[0], self.user_dist_range[1], size=K)
        return bs + np.stack([dist * np.cos(ang), dist * np.sin(ang)], axis=1)


@dataclass
class FadingSpec:
    """Small-scale fading parameters: Rician factor (linear), per-link path
    loss exponents, wavelength, and half-wavelength antenna spacing."""

    rician_K: float = 3.1622776601683795
    alpha_bi: float = 2.2
    alpha_iu: float = 2.2
    alpha_bu: float = 3.6
    lambda_c: float = 0.4

    def __post_init__(self):
        if self.rician_K < 0:
            raise ValueError("rician_K must be nonnegative")
        if self.lambda_c <= 0:
            raise ValueError("lambda_c must be positive")

    @property
    def spacing(self):
        return self.lambda_c / 2.0


def _stream(seed: int, link: int, idx: int) -> np.random.Generator:
    """Independent Philox stream for one (seed, link, index) triple."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(((link & 0xFFFFFFFF) << 32) | (idx & 0xFFFFFFFF))],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def steering_vector(M: int, phi: float, d_over_lambda: float = 0.5):
    """ULA steering vector [1, e^{j theta}, ..., e^{j (M-1) theta}] with
    theta = -2 pi (d/lambda) sin(phi)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    theta = -2.0 * np.pi * d_over_lambda * np.sin(phi)
    return np.exp(1j * theta * np.arange(M))


def path_loss(dist: float, alpha: float, lambda_c: float = 0.4):
    """Linear power gain C0 (d/D0)^(-alpha) with C0 = (lambda/4 pi)^2 at the
    1 m reference distance."""
    if dist <= 0:
        raise ValueError("distance must be positive")
    c0 = (lambda_c / (4.0 * np.pi)) ** 2
    return c0 * dist ** (-alpha)


def _angle(src, dst):
    """Planar azimuth of the src->dst direction (simulation convention)."""
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    return float(np.arctan2(d[1], d[0]))


def _rician(los, nlos, k_factor):
    return np.sqrt(k_factor / (1.0 + k_factor)) * los + np.sqrt(1.0 / (1.0 + k_factor)) * nlos


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_channels(geometry: GeometrySpec, fading: FadingSpec, config: ScenarioConfig,
                    seed: int) -> ChannelSet:
    """Draw one Rician realization of every link.

    Each link is sqrt(pathloss) * (sqrt(Kr/(1+Kr)) LOS + sqrt(1/(1+Kr)) NLOS)
    with the LOS part built from steering vectors (outer product for the
    BS->IRS matrix) and i.i.d. unit-variance complex Gaussian NLOS entries.
    Deterministic for a given seed.
    """
    M, N, K = config.M, config.N, config.K
    bs = np.asarray(geometry.bs_pos, dtype=float)
    irs = np.asarray(geometry.irs_pos, dtype=float)
    users = geometry.place_users(K, seed)

    d_bi = float(np.linalg.norm(irs - bs))
    pl_bi = path_loss(d_bi, fading.alpha_bi, fading.lambda_c)
    a_irs = steering_vector(N, _angle(irs, bs))
    a_bs = steering_vector(M, _angle(bs, irs))
    H = np.sqrt(pl_bi) * _rician(np.outer(a_irs, a_bs.conj()),
                                 _cn(_stream(seed, _LINK_H, 0), (N, M)),
                                 fading.rician_K)

    h_ru, h_bu = [], []
    for k in range(K):
        d_iu = float(np.linalg.norm(users[k] - irs))
        d_bu = float(np.linalg.norm(users[k] - bs))
        if min(d_iu, d_bu) <= 0:
            raise ValueError("user collocated with a node")
        los_ru = steering_vector(N, _angle(irs, users[k]))
        los_bu = steering_vector(M, _angle(bs, users[k]))
        h_ru.append(np.sqrt(path_loss(d_iu, fading.alpha_iu, fading.lambda_c))
                    * _rician(los_ru, _cn(_stream(seed, _LINK_RU, k), N), fading.rician_K))
        h_bu.append(np.sqrt(path_loss(d_bu, fading.alpha_bu, fading.lambda_c))
                    * _rician(los_bu, _cn(_stream(seed, _LINK_BU, k), M), fading.rician_K))
    return ChannelSet(H=H, h_ru=h_ru, h_bu=h_bu)


def random_phases(N: int, seed: int):
    """Seeded unit-modulus reflection coefficients (uniform phases)."""
    rng = _stream(seed, _LINK_THETA0, 0)
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=N))


def channels_from_config(config: ScenarioConfig, seed: int) -> ChannelSet:
    geom = config.geometry if config.geometry is not None else GeometrySpec()
    fading = FadingSpec(rician_K=config.rician_K, alpha_bi=config.alpha_bi,
                        alpha_iu=config.alpha_iu, alpha_bu=config.alpha_bu,
                        lambda_c=config.lambda_c)
    return sample_channels(geom, fading, config, seed)


# ---------------------------------------------------------------------------
# Table-style defaults and scenario files
# ---------------------------------------------------------------------------

def default_config(**overrides) -> ScenarioConfig:
    """Default scenario: 5 BS antennas, 35 IRS elements, 4 users, 30 dBm
    budget, 10 dB SINR targets, -70/-50 dBm noise, sigmoidal EH with
    a=6400 1/W, b=3 mW, 20 mW saturation.

    Note the e_min default is tiny (1e-11 W): at these distances the received
    RF power sits deep in the sigmoid tail, so any macroscopic harvested-power
    target is infeasible; the EH constraint machinery stays active but slack.
    Override e_min (and/or geometry) to make it bind.
    """
    K = int(overrides.pop("K", 4))

    def per_user(x):
        return np.full(K, float(x))

    kwargs = dict(
        M=5,
        N=35,
        K=K,
        p_max=float(dbm_to_watt(30.0)),
        gamma=per_user(db_to_lin(10.0)),
        e_min=per_user(1e-11),
        sigma2=per_user(dbm_to_watt(-70.0)),
        delta2=per_user(dbm_to_watt(-50.0)),
        p_cr=per_user(dbm_to_watt(30.0)),
        eh_a=per_user(6400.0),
        eh_b=per_user(0.003),
        eh_M=per_user(0.02),
        geometry=GeometrySpec(),
        rician_K=float(db_to_lin(5.0)),
    )
    for key, val in overrides.items():
        if key in ("gamma", "e_min", "sigma2", "delta2", "p_cr", "eh_a", "eh_b", "eh_M") \
                and np.isscalar(val):
            val = per_user(val)
        kwargs[key] = val
    return ScenarioConfig(**kwargs)


# Scenario-file schema (JSON object). dB/dBm keys are converted here; every
# ScenarioConfig field can also be given directly in linear/watt units.
#   M, N, K               : ints
#   p_max_dbm             : BS power budget
#   gamma_db              : SINR target (scalar or list of K)
#   sigma2_dbm, delta2_dbm: noise powers
#   p_cr_dbm              : receiver circuit power
#   eh_a, eh_b, eh_M      : EH sigmoid parameters (1/W, W, W)
#   e_min_w               : harvested-power targets in watts
#   rician_K_db           : Rician factor
#   bs_pos, irs_pos       : [x, y] meters
#   cell_radius, user_disk_radius, user_offset, user_positions
#   any other ScenarioConfig field by name (mu, j_max, conic_tol, ...)
_DB_KEYS = {
    "p_max_dbm": ("p_max", dbm_to_watt),
    "gamma_db": ("gamma", db_to_lin),
    "sigma2_dbm": ("sigma2", dbm_to_watt),
    "delta2_dbm": ("delta2", dbm_to_watt),
    "p_cr_dbm": ("p_cr", dbm_to_watt),
    "e_min_w": ("e_min", lambda x: x),
    "rician_K_db": ("rician_K", db_to_lin),
}
_GEOM_KEYS = ("bs_pos", "irs_pos", "cell_radius", "user_positions",
              "user_dist_range", "user_angle_spread")


def load_scenario(path) -> ScenarioConfig:
    """Read a scenario file (JSON, schema above) into a ScenarioConfig."""
    with open(path) as fh:
        raw = json.load(fh)
    overrides = {}
    geom = {}
    for key, val in raw.items():
        if key in _DB_KEYS:
            name, conv = _DB_KEYS[key]
            overrides[name] = conv(np.asarray(val, dtype=float)) if not np.isscalar(val) \
                else float(conv(val))
        elif key in _GEOM_KEYS:
            geom[key] = tuple(val) if key in ("bs_pos", "irs_pos", "user_dist_range") else val
        else:
            overrides[key] = val
    if geom:
        overrides["geometry"] = GeometrySpec(**geom)
    return default_config(**overrides)


def save_scenario(config: ScenarioConfig, path):
    """Write a config back out in the scenario-file schema."""
    geom = config.geometry if config.geometry is not None else GeometrySpec()
    doc = {
        "M": config.M, "N": config.N, "K": config.K,
        "p_max_dbm": float(watt_to_dbm(config.p_max)),
        "gamma_db": lin_to_db(config.gamma).tolist(),
        "sigma2_dbm": watt_to_dbm(config.sigma2).tolist(),
        "delta2_dbm": watt_to_dbm(config.delta2).tolist(),
        "p_cr_dbm": watt_to_dbm(config.p_cr).tolist(),
        "e_min_w": config.e_min.tolist(),
        "eh_a": config.eh_a.tolist(),
        "eh_b": config.eh_b.tolist(),
        "eh_M": config.eh_M.tolist(),
        "rician_K_db": float(lin_to_db(config.rician_K)),
        "alpha_bi": config.alpha_bi, "alpha_iu": config.alpha_iu,
        "alpha_bu": config.alpha_bu, "lambda_c": config.lambda_c,
        "bs_pos": list(geom.bs_pos), "irs_pos": list(geom.irs_pos),
        "cell_radius": geom.cell_radius,
        "mu": config.mu, "phi": config.phi,
        "eps_dinkelbach": config.eps_dinkelbach,
        "i_max": config.i_max, "j_max": config.j_max, "t_max": config.t_max,
    }
    if geom.user_positions is not None:
        doc["user_positions"] = np.asarray(geom.user_positions, dtype=float).tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_channels(cs: ChannelSet, path):
    """Dump a realization for replay (documented npz: H, h_ru, h_bu)."""
    np.savez(path, H=cs.H, h_ru=np.stack(cs.h_ru), h_bu=np.stack(cs.h_bu))


def load_channels(path) -> ChannelSet:
    data = np.load(path)
    return ChannelSet(H=data["H"], h_ru=list(data["h_ru"]), h_bu=list(data["h_bu"]))
