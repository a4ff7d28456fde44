"""Cone descriptions and Euclidean projections.

Supported cones: zero, nonnegative orthant, second-order, Hermitian PSD
(held natively in complex arithmetic through an isometric real coordinate
map), and the exponential cone.

Hermitian coordinate map ("svec"): an n x n Hermitian matrix occupies n^2
real coordinates, ordered [diagonal; then sqrt(2) Re(A_ij), sqrt(2) Im(A_ij)
for i<j row-major]. The scaling makes the flat dot product equal the
Frobenius inner product, so cone projections and inner products can ignore
the matrix structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ZERO = "zero"
NONNEG = "nonneg"
SOC = "soc"
HPSD = "hpsd"       # dim field stores the matrix side n; block length is n^2
EXP = "exp"         # blocks of 3


@dataclass(frozen=True)
class Cone:
    kind: str
    dim: int            # block length in the flat layout (HPSD: matrix side)

    @property
    def size(self) -> int:
        return self.dim * self.dim if self.kind == HPSD else (3 if self.kind == EXP else self.dim)


def cone_list_size(cones) -> int:
    return sum(c.size for c in cones)


# ---------------------------------------------------------------------------
# Hermitian <-> flat coordinates
# ---------------------------------------------------------------------------

_TRIU_CACHE = {}


def triu_indices(n):
    if n not in _TRIU_CACHE:
        _TRIU_CACHE[n] = np.triu_indices(n, k=1)
    return _TRIU_CACHE[n]


def svec(A: np.ndarray) -> np.ndarray:
    """Isometric real coordinates of a Hermitian matrix."""
    A = np.asarray(A)
    n = A.shape[0]
    iu, ju = triu_indices(n)
    out = np.empty(n * n)
    out[:n] = np.real(np.diagonal(A))
    off = A[iu, ju]
    out[n::2] = np.sqrt(2.0) * np.real(off)
    out[n + 1::2] = np.sqrt(2.0) * np.imag(off)
    return out


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of svec."""
    v = np.asarray(v, dtype=float)
    A = np.zeros((n, n), dtype=complex)
    A[np.diag_indices(n)] = v[:n]
    iu, ju = triu_indices(n)
    off = (v[n::2] + 1j * v[n + 1::2]) / np.sqrt(2.0)
    A[iu, ju] = off
    A[ju, iu] = off.conj()
    return A


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def project_soc(v: np.ndarray) -> np.ndarray:
    t, z = v[0], v[1:]
    nz = np.linalg.norm(z)
    if nz <= t:
        return v.copy()
    if nz <= -t:
        return np.zeros_like(v)
    coef = 0.5 * (1.0 + t / nz)
    out = np.empty_like(v)
    out[0] = coef * nz
    out[1:] = coef * z
    return out


def project_hpsd(v: np.ndarray, n: int) -> np.ndarray:
    """Negative-eigenvalue clipping in the Hermitian coordinates."""
    A = smat(v, n)
    vals, vecs = np.linalg.eigh(A)
    if vals[0] >= 0:
        return v.copy()
    if vals[-1] <= 0:
        return np.zeros_like(v)
    pos = vals > 0
    B = (vecs[:, pos] * vals[pos]) @ vecs[:, pos].conj().T
    return svec(B)


def smat_batch(V: np.ndarray, n: int) -> np.ndarray:
    """(B, n^2) flat coordinates -> (B, n, n) Hermitian matrices."""
    B = V.shape[0]
    A = np.zeros((B, n, n), dtype=complex)
    idx = np.arange(n)
    A[:, idx, idx] = V[:, :n]
    iu, ju = triu_indices(n)
    off = (V[:, n::2] + 1j * V[:, n + 1::2]) / np.sqrt(2.0)
    A[:, iu, ju] = off
    A[:, ju, iu] = off.conj()
    return A


def svec_batch(A: np.ndarray) -> np.ndarray:
    n = A.shape[-1]
    B = A.shape[0]
    out = np.empty((B, n * n))
    idx = np.arange(n)
    out[:, :n] = np.real(A[:, idx, idx])
    iu, ju = triu_indices(n)
    off = A[:, iu, ju]
    out[:, n::2] = np.sqrt(2.0) * np.real(off)
    out[:, n + 1::2] = np.sqrt(2.0) * np.imag(off)
    return out


def project_hpsd_batch(V: np.ndarray, n: int) -> np.ndarray:
    """Batched negative-eigenvalue clipping for equal-size Hermitian blocks."""
    A = smat_batch(V, n)
    vals, vecs = np.linalg.eigh(A)
    clipped = np.maximum(vals, 0.0)
    B = (vecs * clipped[:, None, :]) @ vecs.conj().transpose(0, 2, 1)
    return svec_batch(B)


def in_exp(v, tol=0.0):
    x, y, z = v
    if y > 0:
        return y * np.exp(min(x / y, 700.0)) <= z + tol
    return y >= -tol and x <= tol and z >= -tol


def in_exp_dual(v, tol=0.0):
    """Dual exponential cone: u < 0, w >= 0, u - v_ + u*log(-u/w) <= 0 plus
    the u = 0 face."""
    u, v_, w = v
    if u > tol:
        return False
    if u >= -tol:
        return v_ >= -tol and w >= -tol
    if w <= 0:
        return False
    return u * np.log(-u / w) - u + v_ >= -tol


def _exp_newton_scalar(r, s, t, init=None, max_iter=50, tol=1e-12):
    """Scalar damped Newton for the general-case exponential projection;
    plain float arithmetic because this sits on the solver's hot path.
    Returns (x, y, z, mu, converged)."""
    exp = np.exp
    scale = 1.0 + max(abs(r), abs(s), abs(t))
    if init is not None:
        x, y, mu = init
        if y <= 0:
            x, y, mu = r, max(s, 1.0), 1.0
    else:
        x, y, mu = r, max(s, 1.0), 1.0
    f1 = f2 = f3 = 0.0
    for _ in range(max_iter):
        q = x / y
        q = 700.0 if q > 700.0 else (-700.0 if q < -700.0 else q)
        E = exp(q)
        f1 = x - r + mu * E
        f2 = y - s + mu * E * (1.0 - q)
        f3 = y * E - t - mu
        nrm = max(abs(f1), abs(f2), abs(f3))
        if nrm <= tol * scale:
            return x, y, y * E, mu, True
        # Jacobian (Cramer solve)
        a11 = 1.0 + mu * E / y
        a12 = -mu * E * q / y
        a13 = E
        a21 = a12
        a22 = 1.0 + mu * E * q * q / y
        a23 = E * (1.0 - q)
        a31 = E
        a32 = a23
        a33 = -1.0
        det = (a11 * (a22 * a33 - a23 * a32)
               - a12 * (a21 * a33 - a23 * a31)
               + a13 * (a21 * a32 - a22 * a31))
        if det == 0.0 or not np.isfinite(det):
            break
        b1, b2, b3 = -f1, -f2, -f3
        dx = (b1 * (a22 * a33 - a23 * a32)
              - a12 * (b2 * a33 - a23 * b3)
              + a13 * (b2 * a32 - a22 * b3)) / det
        dy = (a11 * (b2 * a33 - a23 * b3)
              - b1 * (a21 * a33 - a23 * a31)
              + a13 * (a21 * b3 - b2 * a31)) / det
        dm = (a11 * (a22 * b3 - b2 * a32)
              - a12 * (a21 * b3 - b2 * a31)
              + b1 * (a21 * a32 - a22 * a31)) / det
        alpha = 1.0
        if y + dy <= 0.01 * y:
            alpha = 0.9 * y / max(-dy, 1e-300)
        improved = False
        for _bt in range(30):
            xn = x + alpha * dx
            yn = y + alpha * dy
            mn = mu + alpha * dm
            qn = xn / yn
            qn = 700.0 if qn > 700.0 else (-700.0 if qn < -700.0 else qn)
            En = exp(qn)
            g1 = xn - r + mn * En
            g2 = yn - s + mn * En * (1.0 - qn)
            g3 = yn * En - t - mn
            if max(abs(g1), abs(g2), abs(g3)) <= (1.0 - 1e-4 * alpha) * nrm:
                x, y, mu = xn, yn, mn
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    q = min(max(x / y, -700.0), 700.0)
    return x, y, y * np.exp(q), mu, max(abs(f1), abs(f2), abs(f3)) <= 1e-7 * scale


def _moreau_ok(v, x, tol):
    """x is the projection of v iff x is in the cone, v - x is in the polar,
    and the two are orthogonal."""
    z = v - x
    scale = 1.0 + float(np.abs(v).max())
    return (in_exp(x, tol=tol * scale)
            and in_exp_dual(-z, tol=tol * scale)
            and abs(float(x @ z)) <= tol * scale * scale)


_EXP_GRID = np.sinh(np.linspace(-6.6, 6.6, 1201))


def _exp_bisect(v):
    """Deterministic fallback: the boundary-boundary KKT system reduces to a
    univariate root problem in rho = x1/x2; scan a sinh-spaced grid for sign
    changes and bisect, keeping the Moreau-verified minimum-distance root."""
    v1, v2, v3 = v

    def fval(rho):
        """Root function F(rho) = x1 - rho x2, its denominator sign, and the
        candidate point (validity checked by the caller)."""
        rho = np.asarray(rho, dtype=float)
        e = np.exp(np.clip(rho, -350.0, 350.0))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            den = 1.0 + e * e * (1.0 - rho)
            mu = (v2 * e - v3) / den
            x1 = v1 - mu * e
            x2 = v2 - mu * e * (1.0 - rho)
            F = x1 - rho * x2
        return F, np.sign(den), x1, x2, e, mu

    F, dsign, X1, X2, Egrid, MU = fval(_EXP_GRID)
    ok = np.isfinite(F)
    sign_change = np.zeros(len(_EXP_GRID) - 1, dtype=bool)
    both = ok[:-1] & ok[1:] & (dsign[:-1] == dsign[1:])
    sign_change[both] = F[:-1][both] * F[1:][both] <= 0
    candidates = [np.array([min(v1, 0.0), 0.0, max(v3, 0.0)])]
    for i in np.flatnonzero(sign_change):
        lo, hi, flo = _EXP_GRID[i], _EXP_GRID[i + 1], F[i]
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            fm = float(fval(mid)[0])
            if not np.isfinite(fm):
                break
            if flo * fm <= 0:
                hi = mid
            else:
                lo, flo = mid, fm
        _, _, x1, x2, e, mu = fval(0.5 * (lo + hi))
        x = np.array([float(x1), float(x2), float(x2 * e)])
        if np.all(np.isfinite(x)) and x[1] > 0 and mu > -1e-12 * (1 + abs(mu)):
            candidates.append(x)
    best, bestd = None, np.inf
    for x in candidates:
        if _moreau_ok(v, x, 1e-7):
            d = float(np.sum((x - v) ** 2))
            if d < bestd:
                best, bestd = x, d
    if best is None:    # accept the geometrically closest in-cone candidate
        for x in candidates:
            d = float(np.sum((x - v) ** 2))
            if in_exp(x, tol=1e-9 * (1.0 + np.abs(x).max())) and d < bestd:
                best, bestd = x, d
    return best if best is not None else candidates[0]


def _in_exp_vec(V, tol):
    x, y, z = V[:, 0], V[:, 1], V[:, 2]
    pos = y > 0
    graph = np.zeros(V.shape[0], dtype=bool)
    if pos.any():
        graph[pos] = y[pos] * np.exp(np.clip(x[pos] / y[pos], -700, 700)) <= z[pos] + tol[pos]
    edge = (~pos) & (y >= -tol) & (x <= tol) & (z >= -tol)
    return (pos & graph) | edge


def _in_exp_dual_vec(V, tol):
    u, v, w = V[:, 0], V[:, 1], V[:, 2]
    out = np.zeros(V.shape[0], dtype=bool)
    face = (u <= tol) & (u >= -tol) & (v >= -tol) & (w >= -tol)
    ok = (u < -tol) & (w > 0)
    if ok.any():
        out[ok] = u[ok] * np.log(-u[ok] / w[ok]) - u[ok] + v[ok] >= -tol[ok]
    return out | face


def project_exp_batch(V: np.ndarray, cache: dict = None) -> np.ndarray:
    """Projection of a batch of points (rows) onto the exponential cone.

    ``cache`` (row index -> previous Newton state) warm-starts the boundary
    solve when the same rows are projected repeatedly, as in the solver loop.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    out = np.array(V, copy=True)
    tol = 1e-12 * (1.0 + np.abs(V).max(axis=1))
    inc = _in_exp_vec(V, tol)
    pol = (~inc) & _in_exp_dual_vec(-V, tol)
    out[pol] = 0.0
    special = (~inc) & (~pol) & (V[:, 0] <= 0) & (V[:, 1] <= 0)
    if special.any():
        out[special, 1] = 0.0
        out[special, 2] = np.maximum(V[special, 2], 0.0)
    general = ~(inc | pol | special)
    for i in np.flatnonzero(general):
        r, s, t = V[i]
        init = cache.get(i) if cache is not None else None
        x, y, z, mu, conv = _exp_newton_scalar(r, s, t, init=init)
        cand = np.array([x, y, z])
        if conv and _moreau_ok(V[i], cand, 1e-8):
            out[i] = cand
            if cache is not None:
                cache[i] = (x, y, mu)
        else:
            out[i] = _exp_bisect(V[i])
            if cache is not None:
                cache.pop(i, None)
    return out


def project_exp(v: np.ndarray) -> np.ndarray:
    return project_exp_batch(v[None, :])[0]


def project_cone(v: np.ndarray, cone: Cone) -> np.ndarray:
    """Euclidean projection of a flat block onto its (primal) cone."""
    v = np.asarray(v, dtype=float)
    if v.shape != (cone.size,):
        raise ValueError(f"block length {v.shape} does not match cone {cone}")
    if cone.kind == ZERO:
        return np.zeros_like(v)
    if cone.kind == NONNEG:
        return np.maximum(v, 0.0)
    if cone.kind == SOC:
        return project_soc(v)
    if cone.kind == HPSD:
        return project_hpsd(v, cone.dim)
    if cone.kind == EXP:
        return project_exp(v)
    raise ValueError(f"unknown cone kind {cone.kind}")


def project_dual_cone(v: np.ndarray, cone: Cone) -> np.ndarray:
    """Projection onto the dual cone; zero's dual is the free space, the
    exponential dual goes through the Moreau identity."""
    if cone.kind == ZERO:
        return v.copy()
    if cone.kind == EXP:
        return v + project_exp(-v)
    return project_cone(v, cone)   # remaining cones are self-dual


class ConeWorkspace:
    """Vectorized projection over an ordered cone product.

    Precomputes block slices and batches all exponential blocks into one
    Newton call per projection, which matters inside the solver loop.
    """

    def __init__(self, cones):
        self.cones = list(cones)
        self.slices = []
        off = 0
        for c in self.cones:
            self.slices.append(slice(off, off + c.size))
            off += c.size
        self.size = off
        self._exp_idx = [i for i, c in enumerate(self.cones) if c.kind == EXP]
        self._exp_cache = {}
        # group equal-size PSD blocks for one batched eigendecomposition
        psd_groups = {}
        for i, c in enumerate(self.cones):
            if c.kind == HPSD:
                psd_groups.setdefault(c.dim, []).append(i)
        self._psd_groups = {dim: idxs for dim, idxs in psd_groups.items()
                            if len(idxs) > 1}
        self._psd_single = [i for dim, idxs in psd_groups.items()
                            if len(idxs) == 1 for i in idxs]

    def project(self, v: np.ndarray, dual: bool) -> np.ndarray:
        out = np.empty_like(v)
        exp_blocks = []
        for i, (c, sl) in enumerate(zip(self.cones, self.slices)):
            if c.kind == EXP:
                exp_blocks.append(v[sl])
                continue
            if c.kind == HPSD:
                continue
            blk = v[sl]
            if c.kind == ZERO:
                out[sl] = blk if dual else 0.0
            elif c.kind == NONNEG:
                out[sl] = np.maximum(blk, 0.0)
            elif c.kind == SOC:
                out[sl] = project_soc(blk)
        for i in self._psd_single:
            sl = self.slices[i]
            out[sl] = project_hpsd(v[sl], self.cones[i].dim)
        for dim, idxs in self._psd_groups.items():
            batch = np.stack([v[self.slices[i]] for i in idxs])
            proj = project_hpsd_batch(batch, dim)
            for j, i in enumerate(idxs):
                out[self.slices[i]] = proj[j]
        if self._exp_idx:
            batch = np.stack(exp_blocks)
            if dual:
                proj = batch + project_exp_batch(-batch, cache=self._exp_cache)
            else:
                proj = project_exp_batch(batch, cache=self._exp_cache)
            for j, i in enumerate(self._exp_idx):
                out[self.slices[i]] = proj[j]
        return out


def hermitian_eig(Hmat: np.ndarray, herm_tol: float = 1e-10):
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending.

    Rejects inputs whose anti-Hermitian part exceeds ``herm_tol`` relative to
    the matrix norm.
    """
    Hmat = np.asarray(Hmat)
    scale = max(np.linalg.norm(Hmat), 1.0)
    if np.linalg.norm(Hmat - Hmat.conj().T) > herm_tol * scale:
        raise ValueError("input is not Hermitian within tolerance")
    vals, vecs = np.linalg.eigh(0.5 * (Hmat + Hmat.conj().T))
    return vals, vecs


def top_eigvec(Hmat: np.ndarray):
    """Deterministic dominant eigenvector: phase fixed so the
    largest-magnitude entry (lowest index on ties) is real positive."""
    vals, vecs = hermitian_eig(Hmat)
    v = vecs[:, -1]
    i = int(np.argmax(np.abs(v) - 1e-15 * np.arange(len(v))))
    ph = v[i] / abs(v[i]) if abs(v[i]) > 0 else 1.0
    return float(vals[-1]), v / ph
