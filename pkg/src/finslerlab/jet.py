"""Truncated multivariate Taylor arithmetic over the variables (x, y).

A :class:`Jet` stores the Taylor coefficients of a (possibly tensor-valued)
function of the 2n variables ``x1..xn, y1..yn`` around a base point.  The set
of retained monomials is fixed by a profile ``(X, Y, T)``: at most ``X`` in the
x variables, at most ``Y`` in the y variables and at most ``T`` in total.

Coefficients live in an array of shape ``(ncoef, *shape)`` so that a whole
batch of base points (and tensor indices) is propagated at once.  All
elementary operations are truncated compositions, so the derivatives that come
out are exact up to floating point rounding.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def _compositions(n, maxdeg):
    """All n-tuples of nonnegative ints with sum <= maxdeg, by degree."""
    out = []
    for d in range(maxdeg + 1):
        for c in itertools.combinations_with_replacement(range(n), d):
            m = [0] * n
            for i in c:
                m[i] += 1
            out.append(tuple(m))
    return out


class Basis:
    """Monomial index set for one profile, with product/derivative tables."""

    def __init__(self, n, X, Y, T):
        self.n, self.X, self.Y, self.T = n, X, Y, T
        xs = _compositions(n, min(X, T))
        ys = _compositions(n, min(Y, T))
        idx = [a + b for a in xs for b in ys if sum(a) + sum(b) <= T]
        idx.sort(key=lambda m: (sum(m), [-v for v in m]))
        self.idx = idx
        self.lookup = {m: k for k, m in enumerate(idx)}
        self.size = len(idx)
        self.factorial = np.array(
            [math.prod(math.factorial(v) for v in m) for m in idx], dtype=float)

        I, J, K = [], [], []
        for k, m in enumerate(idx):
            for a in itertools.product(*(range(v + 1) for v in m)):
                b = tuple(mi - ai for mi, ai in zip(m, a))
                I.append(self.lookup[a])
                J.append(self.lookup[b])
                K.append(k)
        # pairs are generated grouped by output index, in increasing order
        self.I = np.array(I, dtype=np.intp)
        self.J = np.array(J, dtype=np.intp)
        K = np.array(K, dtype=np.intp)
        self.starts = np.flatnonzero(np.r_[True, K[1:] != K[:-1]])
        self._deriv = {}
        self._proj = {}

    @property
    def key(self):
        return (self.n, self.X, self.Y, self.T)

    def deriv_table(self, var):
        """(lower basis, source indices, factors) for d/d(var)."""
        if var not in self._deriv:
            n = self.n
            if self.T == 0 or (var < n and self.X == 0) or (var >= n and self.Y == 0):
                raise ValueError("jet carries no derivative in this variable")
            if var < n:
                low = basis(n, self.X - 1, self.Y, self.T - 1)
            else:
                low = basis(n, self.X, self.Y - 1, self.T - 1)
            src = np.empty(low.size, dtype=np.intp)
            fac = np.empty(low.size)
            for k, m in enumerate(low.idx):
                up = list(m)
                up[var] += 1
                src[k] = self.lookup[tuple(up)]
                fac[k] = up[var]
            self._deriv[var] = (low, src, fac)
        return self._deriv[var]

    def projection(self, other):
        """Indices into self selecting the monomials of the smaller basis."""
        if other.key not in self._proj:
            self._proj[other.key] = np.array(
                [self.lookup[m] for m in other.idx], dtype=np.intp)
        return self._proj[other.key]


@lru_cache(maxsize=None)
def basis(n, X, Y, T):
    X, Y = min(X, T), min(Y, T)
    return Basis(n, X, Y, T)


def _common(a, b):
    if a is b:
        return a
    if a.n != b.n:
        raise ValueError("jets over different dimensions")
    return basis(a.n, min(a.X, b.X), min(a.Y, b.Y), min(a.T, b.T))


def _const(v):
    return np.asarray(v, dtype=float)[None]


class Jet:
    """Truncated Taylor expansion; see module docstring."""

    __array_priority__ = 1000
    __slots__ = ("basis", "c")

    def __init__(self, basis_, c):
        self.basis = basis_
        self.c = c

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, basis_, value):
        value = np.asarray(value, dtype=float)
        c = np.zeros((basis_.size,) + value.shape)
        c[0] = value
        return cls(basis_, c)

    def project(self, b):
        if b is self.basis:
            return self
        return Jet(b, self.c[self.basis.projection(b)])

    # inspection ---------------------------------------------------------
    @property
    def value(self):
        return self.c[0]

    @property
    def shape(self):
        return self.c.shape[1:]

    def partial(self, multi):
        """Derivative value for a multi-index over (x1..xn, y1..yn)."""
        k = self.basis.lookup[tuple(multi)]
        return self.c[k] * self.basis.factorial[k]

    def d(self, var):
        """Derivative jet with respect to variable ``var`` (0..2n-1)."""
        low, src, fac = self.basis.deriv_table(var)
        f = fac.reshape((-1,) + (1,) * (self.c.ndim - 1))
        return Jet(low, self.c[src] * f)

    def dx(self, i):
        return self.d(i)

    def dy(self, i):
        return self.d(self.basis.n + i)

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.basis, self.c[(slice(None),) + key])

    # arithmetic ---------------------------------------------------------
    def __neg__(self):
        return Jet(self.basis, -self.c)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Jet):
            b = _common(self.basis, other.basis)
            return Jet(b, self.project(b).c + other.project(b).c)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.shape, other.shape)
        c = np.array(np.broadcast_to(self.c, (self.basis.size,) + shape))
        c[0] += other
        return Jet(self.basis, c)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            b = _common(self.basis, other.basis)
            p = self.project(b).c[b.I] * other.project(b).c[b.J]
            return Jet(b, np.add.reduceat(p, b.starts, axis=0))
        return Jet(self.basis, self.c * _const(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * reciprocal(other)
        return Jet(self.basis, self.c / _const(other))

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, p):
        if isinstance(p, Jet):
            return exp(p * log(self))
        if isinstance(p, (int, np.integer)) or (np.ndim(p) == 0 and float(p).is_integer()
                                                 and abs(p) <= 8):
            return _ipow(self, int(p))
        return power(self, float(p))

    def __rpow__(self, base):
        return exp(self * np.log(base))

    def __repr__(self):
        return f"Jet(profile={self.basis.key}, shape={self.shape})"


# univariate composition ------------------------------------------------

def _compose(a, coeffs):
    """f(a) given Taylor coefficients f^(k)(a0)/k!, k = 0..T."""
    delta = Jet(a.basis, a.c.copy())
    delta.c[0] = 0.0
    T = a.basis.T
    res = Jet.constant(a.basis, np.broadcast_to(coeffs[T], a.shape))
    for k in range(T - 1, -1, -1):
        res = res * delta + coeffs[k]
    return res


def _ipow(a, p):
    if p < 0:
        return reciprocal(_ipow(a, -p))
    if p == 0:
        return Jet.constant(a.basis, np.ones(a.shape))
    res = None
    base = a
    while p:
        if p & 1:
            res = base if res is None else res * base
        p >>= 1
        if p:
            base = base * base
    return res


def power(a, p):
    if not isinstance(a, Jet):
        return np.power(a, p)
    a0 = a.value
    coeffs = []
    binom = 1.0
    for k in range(a.basis.T + 1):
        coeffs.append(binom * a0 ** (p - k))
        binom *= (p - k) / (k + 1)
    return _compose(a, coeffs)


def reciprocal(a):
    if not isinstance(a, Jet):
        return 1.0 / np.asarray(a, dtype=float)
    inv = 1.0 / a.value
    coeffs = [inv]
    for _ in range(a.basis.T):
        coeffs.append(-coeffs[-1] * inv)
    return _compose(a, coeffs)


def sqrt(a):
    if not isinstance(a, Jet):
        return np.sqrt(a)
    return power(a, 0.5)


def exp(a):
    if not isinstance(a, Jet):
        return np.exp(a)
    e = np.exp(a.value)
    return _compose(a, [e / math.factorial(k) for k in range(a.basis.T + 1)])


def log(a):
    if not isinstance(a, Jet):
        return np.log(a)
    a0 = a.value
    coeffs = [np.log(a0)]
    for k in range(1, a.basis.T + 1):
        coeffs.append((-1) ** (k + 1) / (k * a0 ** k))
    return _compose(a, coeffs)


def _trig(a, fn, shift):
    a0 = a.value
    return _compose(a, [fn(a0 + (k + shift) * np.pi / 2) / math.factorial(k)
                        for k in range(a.basis.T + 1)])


def sin(a):
    if not isinstance(a, Jet):
        return np.sin(a)
    return _trig(a, np.sin, 0)


def cos(a):
    if not isinstance(a, Jet):
        return np.cos(a)
    return _trig(a, np.cos, 0)


def tan(a):
    if not isinstance(a, Jet):
        return np.tan(a)
    return sin(a) / cos(a)


def sinh(a):
    if not isinstance(a, Jet):
        return np.sinh(a)
    return 0.5 * (exp(a) - exp(-a))


def cosh(a):
    if not isinstance(a, Jet):
        return np.cosh(a)
    return 0.5 * (exp(a) + exp(-a))


def tanh(a):
    if not isinstance(a, Jet):
        return np.tanh(a)
    return sinh(a) / cosh(a)


# tensor helpers --------------------------------------------------------

def stack(items, axis=-1):
    """Stack jets (or arrays) along a new trailing/inner axis."""
    jets = [it for it in items if isinstance(it, Jet)]
    if not jets:
        return np.stack([np.asarray(it, dtype=float) for it in items], axis=axis)
    b = jets[0].basis
    for j in jets[1:]:
        b = _common(b, j.basis)
    shape = np.broadcast_shapes(*[np.shape(it.value if isinstance(it, Jet) else it)
                                  for it in items])
    cs = []
    for it in items:
        if isinstance(it, Jet):
            c = it.project(b).c
        else:
            c = np.zeros((b.size,) + shape)
            c[0] = it
        cs.append(np.broadcast_to(c, (b.size,) + shape))
    ax = axis if axis < 0 else axis + 1
    return Jet(b, np.stack(cs, axis=ax))


def einsum(subscripts, a, b):
    """Tensor contraction over trailing axes; batch axes carried by '...'.

    ``subscripts`` uses the numpy syntax for the non-coefficient axes, for
    example ``'...ij,...j->...i'``.
    """
    lhs, out = subscripts.split("->")
    sa, sb = lhs.split(",")
    if isinstance(a, Jet) and isinstance(b, Jet):
        bas = _common(a.basis, b.basis)
        p = np.einsum(f"Z{sa},Z{sb}->Z{out}", a.project(bas).c[bas.I],
                      b.project(bas).c[bas.J])
        return Jet(bas, np.add.reduceat(p, bas.starts, axis=0))
    if isinstance(a, Jet):
        return Jet(a.basis, np.einsum(f"Z{sa},{sb}->Z{out}", a.c, b))
    if isinstance(b, Jet):
        return Jet(b.basis, np.einsum(f"{sa},Z{sb}->Z{out}", a, b.c))
    return np.einsum(subscripts, a, b)


def inv(a):
    """Inverse of a jet of square matrices (last two axes)."""
    a0inv = np.linalg.inv(a.value)
    delta = Jet(a.basis, a.c.copy())
    delta.c[0] = 0.0
    # (A0 + D)^-1 = sum_k (-A0^-1 D)^k A0^-1, D nilpotent of order T+1
    m = -einsum("...ij,...jk->...ik", a0inv, delta)
    res = Jet.constant(a.basis, a0inv)
    term = res
    for _ in range(a.basis.T):
        term = einsum("...ij,...jk->...ik", m, term)
        res = res + term
    return res


def logdet(a):
    """log det of a jet of SPD matrices."""
    a0inv = np.linalg.inv(a.value)
    _, ld = np.linalg.slogdet(a.value)
    delta = Jet(a.basis, a.c.copy())
    delta.c[0] = 0.0
    m = einsum("...ij,...jk->...ik", a0inv, delta)
    res = Jet.constant(a.basis, ld)
    term = m
    for k in range(1, a.basis.T + 1):
        tr = Jet(term.basis, np.trace(term.c, axis1=-2, axis2=-1))
        res = res + tr * ((-1) ** (k + 1) / k)
        if k < a.basis.T:
            term = einsum("...ij,...jk->...ik", term, m)
    return res


def grad(a, which):
    """Stack of first derivatives along a new last axis ('x' or 'y')."""
    n = a.basis.n
    off = 0 if which == "x" else n
    return stack([a.d(off + i) for i in range(n)], axis=-1)


def seed(x, y, X, Y, T):
    """Independent-variable jets at base points x, y of shape (..., n).

    Returns lists ``xs`` and ``ys``.  When the profile carries no
    x-derivatives the x entries are returned as plain arrays, which keeps
    x-only subexpressions cheap.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1]
    b = basis(n, X, Y, T)
    shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    xs, ys = [], []
    for i in range(n):
        if b.X == 0:
            xs.append(np.broadcast_to(x[..., i], shape))
        else:
            c = np.zeros((b.size,) + shape)
            c[0] = x[..., i]
            e = [0] * (2 * n)
            e[i] = 1
            c[b.lookup[tuple(e)]] = 1.0
            xs.append(Jet(b, c))
    for i in range(n):
        c = np.zeros((b.size,) + shape)
        c[0] = y[..., i]
        if b.Y > 0:
            e = [0] * (2 * n)
            e[n + i] = 1
            c[b.lookup[tuple(e)]] = 1.0
        ys.append(Jet(b, c))
    return xs, ys


def value(a):
    return a.value if isinstance(a, Jet) else np.asarray(a, dtype=float)
