"""Connection, curvature and measure-coupled non-Riemannian quantities.

Everything is read off a single jet of F^2 per evaluation.  The profile
needed for the hh-curvature is (x <= 2, y <= 4, total <= 5): the y-Hessian
of the spray requires four y-derivatives of F^2 and the horizontal derivative
of the Chern coefficients one more x-derivative on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jet as J
from .geodesics import rk4_step, spray_jet
from .metric import (ZeroVectorError, _check, _g_only, dual_norm, f2_jet, norm,
                     unit_directions)


@dataclass(frozen=True)
class ConnectionData:
    spray: np.ndarray      # G^i
    nonlinear: np.ndarray  # N^i_j
    chern: np.ndarray      # Gamma^i_jk


@dataclass(frozen=True)
class CurvatureData:
    hh: np.ndarray         # R^i_{jkl}
    flag: np.ndarray       # K(y, u)
    ricci: np.ndarray      # Ric(y)
    flag_operator: np.ndarray  # R^i_k = y^j R^i_{jkl} y^l


@dataclass(frozen=True)
class NonRiemannData:
    T_diff: np.ndarray     # covector T(V, W)
    U_vec: np.ndarray      # vector U(V, W)
    divC: np.ndarray       # vector div C(V)


# jet helpers -------------------------------------------------------------

def _expand(a, k):
    """Insert k singleton axes right after the batch axes of a tensor jet."""
    if k == 0:
        return a
    c = a.c
    # c axes: (coef, batch..., tensor...) where tensor rank is known by caller
    return J.Jet(a.basis, c.reshape(c.shape[:2] + (1,) * k + c.shape[2:]))


def _delta(T, N, rank):
    """Horizontal derivative delta_k T = dT/dx^k - N^m_k dT/dy^m (new last axis)."""
    gx = J.grad(T, "x")
    gy = J.grad(T, "y")
    return gx - J.einsum("...m,...mk->...k", gy, _expand(N, rank))


def _perm(a, spec):
    return J.Jet(a.basis, np.einsum("..." + spec.replace("->", "->..."), a.c))


class _Structure:
    """Jets of g, g^-1, G, N, Gamma at a batch of (x, y)."""

    def __init__(self, spec, x, y, profile):
        F2, xs, ys = f2_jet(spec, x, y, *profile)
        self.F2, self.xs, self.ys = F2, xs, ys
        n = spec.n
        self.n = n
        self.g = 0.5 * J.grad(J.grad(F2, "y"), "y")
        self.ginv = J.inv(self.g)
        self.G = spray_jet(F2, ys)
        self.N = J.grad(self.G, "y")
        dg = _delta(self.g, self.N, 2)            # dg[a,b,c] = delta_c g_ab
        term = dg + _perm(dg, "lkj->jlk") - _perm(dg, "jkl->jlk")
        self.Gamma = 0.5 * J.einsum("...il,...jlk->...ijk", self.ginv, term)


def _flat(*arrays):
    """Broadcast (..., n) arrays and flatten the batch axes."""
    arrays = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in arrays])
    shape = arrays[0].shape[:-1]
    n = arrays[0].shape[-1]
    return [a.reshape(-1, n) for a in arrays], shape


def _unflat(a, shape):
    return a.reshape(shape + a.shape[1:])


def _profiles(level):
    return {"connection": (1, 3, 4), "curvature": (2, 4, 5), "divc": (1, 4, 5)}[level]


def connection(spec, x, y):
    """Spray, nonlinear connection and Chern connection coefficients."""
    x, y = _check(spec, x, y)
    (x, y), shape = _flat(x, y)
    s = _Structure(spec, x, y, _profiles("connection"))
    return ConnectionData(spray=_unflat(s.G.value, shape),
                          nonlinear=_unflat(s.N.value, shape),
                          chern=_unflat(s.Gamma.value, shape))


def _riemann_from_structure(s):
    dGam = _delta(s.Gamma, s.N, 3).value      # [i,j,k,l] = delta_l Gamma^i_jk
    Gam = s.Gamma.value
    R = (np.swapaxes(dGam, -1, -2) - dGam
         + np.einsum("...ikm,...mjl->...ijkl", Gam, Gam)
         - np.einsum("...ilm,...mjk->...ijkl", Gam, Gam))
    return R


def _hh(spec, x, y):
    s = _Structure(spec, x, y, _profiles("curvature"))
    return _riemann_from_structure(s), s


def hh_curvature(spec, x, y):
    """Chern hh-curvature R^i_{jkl}(x, y)."""
    x, y = _check(spec, x, y)
    (x, y), shape = _flat(x, y)
    return _unflat(_hh(spec, x, y)[0], shape)


def flag_operator_spray(spec, x, y):
    """R^i_k from the spray (Berwald's formula); an independent route."""
    x, y = _check(spec, x, y)
    (x, y), shape = _flat(x, y)
    F2, xs, ys = f2_jet(spec, x, y, 2, 4, 5)
    G = spray_jet(F2, ys)
    Gx = J.grad(G, "x").value                  # [i,k] dG^i/dx^k
    Gy = J.grad(G, "y")
    N = Gy.value                               # [i,j]
    Gxy = J.grad(J.grad(G, "x"), "y").value    # [i,j,k] d2G^i/dx^j dy^k
    Gyy = J.grad(Gy, "y").value                # [i,j,k] d2G^i/dy^j dy^k
    Gv = G.value
    R = (2 * Gx - np.einsum("...j,...ijk->...ik", y, Gxy)
         + 2 * np.einsum("...j,...ijk->...ik", Gv, Gyy)
         - np.einsum("...ij,...jk->...ik", N, N))
    return _unflat(R, shape)


def _flag_from(Rik, g, y, u):
    Ru = np.einsum("...ik,...k->...i", Rik, u)
    num = np.einsum("...i,...ij,...j->...", Ru, g, u)
    gyy = np.einsum("...i,...ij,...j->...", y, g, y)
    guu = np.einsum("...i,...ij,...j->...", u, g, u)
    gyu = np.einsum("...i,...ij,...j->...", y, g, u)
    den = gyy * guu - gyu ** 2
    return num / den, den


def _orthonormal_complement(g, y):
    """g-orthonormal basis of the g-orthogonal complement of y (Gram-Schmidt)."""
    n = y.shape[-1]
    F = np.sqrt(np.einsum("...i,...ij,...j->...", y, g, y))
    basis = [y / F[..., None]]
    for k in range(n):
        e = np.zeros_like(y)
        e[..., k] = 1.0
        for b in basis:
            e = e - np.einsum("...i,...ij,...j->...", e, g, b)[..., None] * b
        nrm = np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", e, g, e), 0.0))
        basis.append(e / np.where(nrm > 1e-8, nrm, np.inf)[..., None])
    # keep the n-1 most independent vectors
    cand = np.stack(basis[1:], -2)                        # (..., n, n)
    norms = np.linalg.norm(cand, axis=-1)
    order = np.argsort(-norms, axis=-1)[..., : n - 1]
    # re-orthonormalise the selected ones
    sel = np.take_along_axis(cand, order[..., None], axis=-2)
    out = []
    for k in range(n - 1):
        e = sel[..., k, :]
        for b in basis[:1] + out:
            e = e - np.einsum("...i,...ij,...j->...", e, g, b)[..., None] * b
        nrm = np.sqrt(np.einsum("...i,...ij,...j->...", e, g, e))
        out.append(e / nrm[..., None])
    return out


def curvatures(spec, x, y, u):
    """hh-curvature, flag curvature K(y, u) and Ricci curvature Ric(y)."""
    x, y = _check(spec, x, y)
    (x, y, u), shape = _flat(x, y, u)
    R, s = _hh(spec, x, y)
    g = s.g.value
    Rik = np.einsum("...j,...ijkl,...l->...ik", y, R, y)
    K, den = _flag_from(Rik, g, y, u)
    gyy = np.einsum("...i,...ij,...j->...", y, g, y)
    guu = np.einsum("...i,...ij,...j->...", u, g, u)
    if np.any(den <= 1e-12 * gyy * guu):
        raise ZeroVectorError("flag curvature needs u independent of y")
    ric = _ricci_from(Rik, g, y)
    return CurvatureData(hh=_unflat(R, shape), flag=_unflat(K, shape),
                         ricci=_unflat(ric, shape), flag_operator=_unflat(Rik, shape))


def _ricci_from(Rik, g, y):
    F2 = np.einsum("...i,...ij,...j->...", y, g, y)
    ric = np.zeros(y.shape[:-1])
    for e in _orthonormal_complement(g, y):
        K, _ = _flag_from(Rik, g, y, e)
        ric = ric + F2 * K
    return ric


def flag_data(spec, x, y):
    """(R^i_k, g) at (x, y): the ingredients of flag and Ricci curvature."""
    x, y = _check(spec, x, y)
    (x, y), shape = _flat(x, y)
    R, s = _hh(spec, x, y)
    Rik = np.einsum("...j,...ijkl,...l->...ik", y, R, y)
    return _unflat(Rik, shape), _unflat(s.g.value, shape)


def ricci(spec, x, y):
    """Ric(y) = trace of the flag operator over a g_y-orthonormal frame."""
    Rik, g = flag_data(spec, x, y)
    y = np.broadcast_to(np.asarray(y, dtype=float), Rik.shape[:-1])
    return _ricci_from(Rik, g, y)


# distortion and S-curvature -------------------------------------------------

def tau(spec, measure, x, y):
    """Distortion log(sqrt(det g(x, y)) / sigma(x))."""
    x, y = _check(spec, x, y)
    g = _g_only(spec, x, y)
    _, ld = np.linalg.slogdet(g)
    return 0.5 * ld - measure.phi_array(x)


STENCIL_STEP = 1e-3


def distortion_s(spec, measure, x, y, order="S"):
    """tau, S = d tau/dt or Sdot = d^2 tau/dt^2 along the geodesic through (x, y).

    Derivatives use the 5-point stencil on tau(gamma(t), gamma'(t)) with a
    time step of 1e-3 / F(x, y), i.e. an F-length of 1e-3.
    """
    x, y = _check(spec, x, y)
    if order == "tau":
        return tau(spec, measure, x, y)
    h = STENCIL_STEP / spec.F(x, y)
    hh = h[..., None]
    taus = {0: tau(spec, measure, x, y)}
    for sign in (1, -1):
        xc, yc = x, y
        for k in (1, 2):
            xc, yc = rk4_step(spec, xc, yc, sign * hh)
            if not np.all(spec.in_domain(xc)):
                raise ValueError("geodesic leaves the domain inside the stencil")
            taus[sign * k] = tau(spec, measure, xc, yc)
    if order == "S":
        return (taus[-2] - 8 * taus[-1] + 8 * taus[1] - taus[2]) / (12 * h)
    if order == "Sdot":
        return (-taus[2] + 16 * taus[1] - 30 * taus[0] + 16 * taus[-1] - taus[-2]) / (12 * h * h)
    raise ValueError("order must be 'tau', 'S' or 'Sdot'")


# non-Riemannian quantities --------------------------------------------------

def _delta_tau(s, measure):
    ld = J.logdet(s.g)
    phi = measure.phi(s.xs)
    t = 0.5 * ld - phi
    return _delta(t, s.N, 0).value


def non_riemannian(spec, measure, x, V, W):
    """T(V, W), U(V, W) and div C(V) at x."""
    x = np.asarray(x, dtype=float)
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    _check(spec, x, V)
    _check(spec, x, W)
    (x, V, W), shape = _flat(x, V, W)
    sV = _Structure(spec, x, V, _profiles("divc"))
    sW = _Structure(spec, x, W, _profiles("connection"))
    T = _delta_tau(sV, measure) - _delta_tau(sW, measure)
    ginvV = sV.ginv.value
    U = np.einsum("...kl,...ikl->...i", ginvV, sW.Gamma.value - sV.Gamma.value)
    return NonRiemannData(T_diff=_unflat(T, shape), U_vec=_unflat(U, shape),
                          divC=_unflat(_div_cartan(sV, V), shape))


def _div_cartan(s, V):
    C = 0.25 * J.grad(J.grad(J.grad(s.F2, "y"), "y"), "y")          # C_abk
    Cup = J.einsum("...ia,...abk->...ibk", s.ginv, C)
    Cup = J.einsum("...jb,...ibk->...ijk", s.ginv, Cup)                # C^{ij}_k
    dC = _delta(Cup, s.N, 3).value                                     # [i,j,k,l]
    Gam = s.Gamma.value
    Cv = Cup.value
    D = (dC + np.einsum("...ilm,...mjk->...ijkl", Gam, Cv)
         + np.einsum("...jlm,...imk->...ijkl", Gam, Cv)
         - np.einsum("...mlk,...ijm->...ijkl", Gam, Cv))
    # div C(V)^p = C^{ip}_{k|i} V^k
    return np.einsum("...ipki,...k->...p", D, V)


def k0_terms(spec, measure, x, V, W):
    """F(U(V, W)) + F*(T(V, W)) + F(div C(V)), pointwise."""
    d = non_riemannian(spec, measure, x, V, W)
    x = np.broadcast_to(np.asarray(x, dtype=float), d.U_vec.shape)
    return norm(spec, x, d.U_vec) + dual_norm(spec, x, d.T_diff) + norm(spec, x, d.divC)


def k0_bound(spec, measure, sampler, samples, seed=0, block=256, return_samples=False):
    """max over sampled (x, V, W) of the K0 integrand.

    ``sampler(rng, m)`` returns m points of the region.  Samples are drawn in
    fixed blocks so that a run with more samples contains every sample of a
    run with fewer (hence the result is monotone in ``samples``).
    """
    if samples <= 0:
        raise ValueError("empty region sample")
    if spec.n != 2:
        raise NotImplementedError("k0_bound samples the indicatrix for n = 2")
    rng = np.random.default_rng(seed)
    best = -np.inf
    best_at = None
    done = 0
    vals = []
    while done < samples:
        x = np.asarray(sampler(rng, block), dtype=float)
        ang = rng.uniform(0, 2 * np.pi, size=(block, 2))
        m = min(block, samples - done)
        x, ang = x[:m], ang[:m]
        V = unit_directions(spec, x, ang[:, 0])
        W = unit_directions(spec, x, ang[:, 1])
        val = k0_terms(spec, measure, x, V, W)
        vals.append(val)
        k = int(np.argmax(val))
        if val[k] > best:
            best, best_at = float(val[k]), (x[k], V[k], W[k])
        done += m
    if return_samples:
        return best, best_at, np.concatenate(vals)
    return best
