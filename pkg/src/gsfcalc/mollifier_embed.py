"""Vanishing-moment mollifiers and the embedding of distributions.

The kernel is ``psi(x) = p(x) * phi(x)`` with the fixed bump
``phi(x) = exp(-1/(1-x^2))`` on (-1, 1).  Writing ``p`` in the Legendre
basis, the conditions ``int x^a psi = delta_{a0}`` (a <= j) become the
Gram system ``G c = L(0)`` with ``G_ab = int L_a L_b phi``, which stays
well conditioned up to the cap j = 12.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import legendre as leg
from numpy.polynomial import polynomial as P
from scipy.integrate import quad

from . import quadrature
from .gauge_ring import GenNum, Gauge, classify, gen_lt
from .gsf_core import GsfFamily

MAX_MOMENT_ORDER = 12
KERNEL_PANELS = 64


class MollifierError(ValueError):
    pass


# --------------------------------------------------------------------------
# the bump and its derivatives
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _bump_numerators(n: int):
    """Polynomials P_n with ``phi^(n) = phi * P_n / (1-x^2)^(2n)``."""
    polys = [np.array([1.0])]
    w = np.array([1.0, 0.0, -1.0])
    w2 = P.polymul(w, w)
    x = np.array([0.0, 1.0])
    for m in range(n):
        Pm = polys[-1]
        nxt = P.polyadd(P.polymul(-2 * x, Pm), P.polymul(w2, P.polyder(Pm)))
        nxt = P.polyadd(nxt, P.polymul(4 * m * P.polymul(x, w), Pm))
        polys.append(nxt)
    return tuple(polys)


def bump(x, n: int = 0):
    """n-th derivative of ``exp(-1/(1-x^2))`` (zero for |x| >= 1)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    xi = x[inside]
    w = 1.0 - xi * xi
    with np.errstate(under="ignore", divide="ignore", over="ignore", invalid="ignore"):
        logmag = -1.0 / w - 2 * n * np.log(w)
        val = np.exp(logmag) * P.polyval(xi, _bump_numerators(n)[n]) if n else np.exp(-1.0 / w)
    out[inside] = np.where(np.isfinite(val), val, 0.0)
    return out


def _bump_jet(x):
    """``phi, phi', phi''`` from a single exponential (zero outside (-1, 1))."""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1
    w = np.where(inside, 1.0 - x * x, 1.0)
    with np.errstate(under="ignore"):
        f = np.where(inside, np.exp(-1.0 / w), 0.0)
    g1 = -2.0 * x / w ** 2
    return f, f * g1, f * (g1 * g1 - 2.0 / w ** 2 - 8.0 * x * x / w ** 3)


def _bump_integral(fn, lo=-1.0, hi=1.0):
    """High-accuracy integral of ``fn(x) * phi(x)`` over [lo, hi]."""
    nodes, weights = quadrature.panel_nodes(np.linspace(lo, hi, KERNEL_PANELS + 1))
    return np.tensordot(weights * bump(nodes), fn(nodes), axes=(0, 0))


# --------------------------------------------------------------------------
# mollifier
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MollifierSpec:
    j: int = 0
    eta: float = 1.0
    left_mass: Optional[float] = None

    def __post_init__(self):
        if not (isinstance(self.j, (int, np.integer)) and 0 <= self.j <= MAX_MOMENT_ORDER):
            raise MollifierError(f"moment order must be an integer in [0, {MAX_MOMENT_ORDER}]")
        if not self.eta > 0:
            raise MollifierError("negative-part budget eta must be positive")
        if self.left_mass is not None and not 0 < self.left_mass < 1:
            raise MollifierError("left mass d must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Mollifier:
    """``psi = p * phi`` with ``p`` given by Legendre coefficients."""

    spec: MollifierSpec
    coef: np.ndarray
    condition_number: float

    @property
    def poly(self) -> np.ndarray:
        """Power-basis coefficients of p."""
        return leg.leg2poly(self.coef)

    @cached_property
    def _pders(self):
        pc = self.poly
        return tuple(P.polyder(pc, n) if n else pc for n in range(8))

    def __call__(self, x):
        return self.derivative(x, 0)

    def jet(self, x):
        """``psi, psi', psi''`` together with ``phi, phi'`` at x."""
        x = np.asarray(x, dtype=float)
        f0, f1, f2 = _bump_jet(x)
        p0, p1, p2 = (P.polyval(x, c) for c in self._pders[:3])
        return p0 * f0, p1 * f0 + p0 * f1, p2 * f0 + 2.0 * p1 * f1 + p0 * f2, f0, f1

    def derivative(self, x, n: int = 1):
        """``psi^(n)(x)`` by Leibniz over ``p`` and the bump."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for i in range(n + 1):
            dp = self._pders[n - i] if n - i < 8 else P.polyder(self.poly, n - i)
            if dp.size == 0 or not np.any(dp):
                continue
            out = out + math.comb(n, i) * P.polyval(x, dp) * bump(x, i)
        return out

    def cumulative(self, s):
        """``Psi(s) = int_{-1}^s psi``: 0 left of the support, 1 right of it."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.where(s >= 1.0, 1.0, 0.0)
        inside = (s > -1.0) & (s < 1.0)
        if np.any(inside):
            si = s[inside]
            x, w = quadrature.gauss_legendre(16)
            panels = 32
            u = (np.arange(panels)[:, None] + 0.5 * (x[None, :] + 1.0)) / panels
            uw = (w / (2.0 * panels))[None, :].repeat(panels, 0).ravel()
            u = u.ravel()
            width = si + 1.0
            nodes = -1.0 + width[:, None] * u[None, :]
            vals = self(nodes.ravel()).reshape(nodes.shape)
            out[inside] = width * (vals @ uw)
        return out

    def to_csv(self, n: int = 401) -> str:
        x = np.linspace(-1.0, 1.0, n)
        buf = io.StringIO()
        buf.write("x,psi\n")
        for xi, vi in zip(x, self(x)):
            buf.write(f"{xi!r},{float(vi)!r}\n")
        return buf.getvalue()


def _legendre_basis(deg_list):
    eye = np.eye(max(deg_list) + 1)
    return [eye[d] for d in deg_list]


def build_mollifier(spec: MollifierSpec = MollifierSpec()) -> Mollifier:
    """Solve the moment system for ``p`` and check the negative-part budget."""
    j = spec.j
    degs = list(range(j + 1))
    if spec.left_mass is not None:
        # smallest odd degree above j: its half-line mass is what moves d
        degs.append(j + 1 if (j + 1) % 2 == 1 else j + 2)
    basis = _legendre_basis(degs)
    n = len(degs)
    G = np.empty((n, n))
    rhs = np.empty(n)
    rows = _legendre_basis(range(j + 1))
    for a, ra in enumerate(rows):
        vals = _bump_integral(lambda x: np.stack([leg.legval(x, ra) * leg.legval(x, cb)
                                                  for cb in basis], axis=-1))
        G[a] = vals
        rhs[a] = leg.legval(0.0, ra)
    if spec.left_mass is not None:
        G[-1] = _bump_integral(lambda x: np.stack([leg.legval(x, cb) for cb in basis], axis=-1),
                               -1.0, 0.0)
        rhs[-1] = spec.left_mass
    cond = float(np.linalg.cond(G))
    if not np.isfinite(cond) or cond > 1e12:
        raise MollifierError(f"moment system ill-conditioned (cond = {cond:.3g})")
    sol = np.linalg.solve(G, rhs)
    coef = np.zeros(max(degs) + 1)
    for d, c in zip(degs, sol):
        coef[d] = c
    m = Mollifier(spec, coef, cond)
    l1 = float(_bump_integral(lambda x: np.abs(P.polyval(x, m.poly))))
    if l1 > 1.0 + spec.eta:
        raise MollifierError(
            f"negative-part budget exceeded: int|psi| = {l1:.6g} > 1 + eta = {1 + spec.eta:.6g}")
    return m


@dataclass(frozen=True)
class MomentReport:
    integral_error: float
    moment_errors: tuple
    abs_integral: float
    left_mass_error: Optional[float]
    support_violation: float
    eta_ok: bool

    @property
    def max_moment_error(self) -> float:
        return max(self.moment_errors, default=0.0)

    def passes(self, tol_int=1e-12, tol_mom=1e-10) -> bool:
        ok = (self.integral_error <= tol_int and self.max_moment_error <= tol_mom
              and self.support_violation == 0.0 and self.eta_ok)
        if self.left_mass_error is not None:
            ok = ok and self.left_mass_error <= tol_mom
        return ok


def verify_moments(m: Mollifier, panels: int = 256) -> MomentReport:
    """Re-check every kernel property with a finer composite rule."""
    nodes, weights = quadrature.panel_nodes(np.linspace(-1.0, 1.0, panels + 1))
    psi = m(nodes)
    integral = float(weights @ psi)
    moments = tuple(abs(float(weights @ (nodes ** a * psi))) for a in range(1, m.spec.j + 1))
    l1 = float(weights @ np.abs(psi))
    left_err = None
    if m.spec.left_mass is not None:
        hn, hw = quadrature.panel_nodes(np.linspace(-1.0, 0.0, panels + 1))
        left_err = abs(float(hw @ m(hn)) - m.spec.left_mass)
    outside = np.concatenate([np.linspace(-5.0, -1.0, 2001), np.linspace(1.0, 5.0, 2001)])
    support = float(np.max(np.abs(m(outside))))
    return MomentReport(abs(integral - 1.0), moments, l1, left_err, support,
                        l1 <= 1.0 + m.spec.eta)


# --------------------------------------------------------------------------
# scaling actions on test functions
# --------------------------------------------------------------------------


def scale_action(r: float, fn: Callable, n: int = 1) -> Callable:
    """``r . fn``: ``x -> fn(x / r) / r**n``."""
    return lambda x: fn(np.asarray(x) / r) / r ** n


def shift_action(x0, fn: Callable) -> Callable:
    """``x0 + fn``: ``y -> fn(y - x0)``."""
    return lambda y: fn(np.asarray(y) - x0)


# --------------------------------------------------------------------------
# embedding parameters and distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmbeddingParams:
    """Infinite scale ``b`` with ``b >= drho^{-a}``."""

    b: GenNum
    a: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise MollifierError("embedding exponent a must be positive")
        s = self.b.samples
        if s.ndim != 1 or not np.all(np.isfinite(s)):
            raise MollifierError("b must be a finite scalar net")
        if gen_lt(self.b.gauge.const(0.0), self.b) is not True:
            raise MollifierError("b must be strictly positive")
        if not classify(self.b).is_moderate:
            raise MollifierError("b must be moderate")
        lr = self.b.gauge.log_rho
        if np.any(np.log(s) < -self.a * lr - 1e-9 * np.abs(lr)):
            raise MollifierError("b must satisfy b >= drho^(-a)")
        if not s[-1] > s[0]:
            raise MollifierError("b must grow without bound along the grid")

    @classmethod
    def default(cls, gauge: Gauge, a: float = 1.0) -> "EmbeddingParams":
        return cls(gauge.rho_power(-a), a)

    @property
    def gauge(self) -> Gauge:
        return self.b.gauge


class Distribution:
    """Base class for the supported distribution kinds."""

    def __add__(self, other):
        return Combination(((1.0, self), (1.0, other)))

    def __rmul__(self, c):
        return Combination(((float(c), self),))

    def __sub__(self, other):
        return Combination(((1.0, self), (-1.0, other)))


@dataclass(frozen=True)
class Dirac(Distribution):
    x0: float = 0.0


@dataclass(frozen=True)
class Heaviside(Distribution):
    x0: float = 0.0


@dataclass(frozen=True)
class Derivative(Distribution):
    inner: Distribution
    order: int = 1

    def __post_init__(self):
        if not self.order >= 0:
            raise ValueError("derivative order must be non-negative")


@dataclass(frozen=True, eq=False)
class Function(Distribution):
    """A locally integrable function, vectorized over numpy arrays."""

    fn: Callable[[np.ndarray], np.ndarray]
    name: str = "f"
    kinks: tuple = ()


@dataclass(frozen=True)
class Combination(Distribution):
    terms: tuple  # of (coefficient, Distribution)


def _validate(T: Distribution, depth=0):
    if depth > 64:
        raise ValueError("distribution tree too deep")
    if isinstance(T, (Dirac, Heaviside, Function)):
        return
    if isinstance(T, Derivative):
        return _validate(T.inner, depth + 1)
    if isinstance(T, Combination):
        for c, S in T.terms:
            float(c)
            _validate(S, depth + 1)
        return
    raise TypeError(f"unsupported distribution {T!r}")


def _feature_points(T: Distribution, b: float):
    if isinstance(T, (Dirac, Heaviside)):
        r = 1.0 / b
        return (T.x0 - r, T.x0, T.x0 + r)
    if isinstance(T, Derivative):
        return _feature_points(T.inner, b)
    if isinstance(T, Combination):
        pts = ()
        for _, S in T.terms:
            pts += _feature_points(S, b)
        return pts
    if isinstance(T, Function):
        r = 1.0 / b
        return tuple(p + s for p in T.kinks for s in (-r, 0.0, r))
    return ()


CONV_PANELS = 16


@lru_cache(maxsize=None)
def _conv_rule():
    return quadrature.panel_nodes(np.linspace(-1.0, 1.0, CONV_PANELS + 1))


@lru_cache(maxsize=64)
def _conv_weights(m: Mollifier, n: int):
    # moment-corrected for n <= 2 so polynomials of degree <= j come out exact
    z, w = _conv_rule()
    if n <= 2:
        return z, _kernel_weights(m, z, w)[0][n]
    return z, w * m.derivative(z, n)


def _embed_value(T: Distribution, m: Mollifier, b: float, x: np.ndarray, n: int) -> np.ndarray:
    """n-th x-derivative of ``(T * psi_b)(x)`` with ``psi_b(y) = b psi(b y)``."""
    if isinstance(T, Dirac):
        return b ** (n + 1) * m.derivative(b * (x - T.x0), n)
    if isinstance(T, Heaviside):
        if n == 0:
            return m.cumulative(b * (x - T.x0))
        return b ** n * m.derivative(b * (x - T.x0), n - 1)
    if isinstance(T, Derivative):
        return _embed_value(T.inner, m, b, x, n + T.order)
    if isinstance(T, Combination):
        out = np.zeros_like(x, dtype=float)
        for c, S in T.terms:
            out = out + c * _embed_value(S, m, b, x, n)
        return out
    if isinstance(T, Function):
        z, kern = _conv_weights(m, n)
        pts = x[:, None] - z[None, :] / b
        with np.errstate(all="ignore"):
            vals = np.asarray(T.fn(pts), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise MollifierError(f"function {T.name!r} is not locally integrable on probes")
        return b ** n * (vals @ kern)
    raise TypeError(f"unsupported distribution {T!r}")


def embed(T: Distribution, params: EmbeddingParams, m: Mollifier) -> GsfFamily:
    """``iota(T) = [(T * psi_eps^b)(-)]`` as a generalized smooth function."""
    _validate(T)
    bs = params.b.samples

    def make(n):
        def ev(k, x):
            x = np.asarray(x, dtype=float)
            return _embed_value(T, m, float(bs[k]), np.atleast_1d(x), n).reshape(x.shape)
        return ev

    ders = {n: make(n) for n in range(1, 7)}
    if isinstance(T, Function) or _contains_function(T):
        # probe the function once so a non-integrable input fails early
        make(0)(len(bs) - 1, np.linspace(-1.0, 1.0, 9))
    return GsfFamily(params.gauge, make(0), derivatives=ders,
                     breakpoints=lambda k: _feature_points(T, float(bs[k])),
                     name=f"iota({_label(T)})")


def _contains_function(T):
    if isinstance(T, Function):
        return True
    if isinstance(T, Derivative):
        return _contains_function(T.inner)
    if isinstance(T, Combination):
        return any(_contains_function(S) for _, S in T.terms)
    return False


def _label(T):
    if isinstance(T, Dirac):
        return f"delta_{T.x0:g}"
    if isinstance(T, Heaviside):
        return f"H_{T.x0:g}"
    if isinstance(T, Derivative):
        return f"D^{T.order} {_label(T.inner)}"
    if isinstance(T, Function):
        return T.name
    return " + ".join(f"{c:g}*{_label(S)}" for c, S in T.terms)


# --------------------------------------------------------------------------
# weak limit
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A test function with its derivatives and an integration window.

    ``derivatives[r]`` is the r-th derivative (``derivatives[0]`` the
    function itself); ``support`` bounds the region where it is not
    negligible in double precision.
    """

    derivatives: Sequence[Callable[[np.ndarray], np.ndarray]]
    support: tuple = (-10.0, 10.0)

    def __call__(self, x, r: int = 0):
        if r >= len(self.derivatives):
            raise ValueError(f"test function derivative of order {r} not supplied")
        return self.derivatives[r](np.asarray(x, dtype=float))


def pairing(T: Distribution, phi: TestFunction) -> float:
    """``<T, phi>`` computed from the definition of each kind."""
    lo, hi = phi.support
    if isinstance(T, Dirac):
        return float(phi(T.x0))
    if isinstance(T, Heaviside):
        if T.x0 >= hi:
            return 0.0
        return quad(lambda s: float(phi(s)), max(T.x0, lo), hi, epsabs=1e-14, epsrel=1e-13,
                    limit=200)[0]
    if isinstance(T, Derivative):
        inner = TestFunction(list(phi.derivatives[T.order:]), phi.support)
        return (-1.0) ** T.order * pairing(T.inner, inner)
    if isinstance(T, Function):
        pts = [p for p in T.kinks if lo < p < hi] or None
        return quad(lambda s: float(T.fn(np.array([s]))[0] * phi(s)), lo, hi,
                    epsabs=1e-15, epsrel=1e-14, limit=400, points=pts)[0]
    if isinstance(T, Combination):
        return sum(c * pairing(S, phi) for c, S in T.terms)
    raise TypeError(f"unsupported distribution {T!r}")


@dataclass(frozen=True)
class WeakLimitReport:
    values: np.ndarray
    exact: float
    errors: np.ndarray
    rate: float
    strictly_decreasing_last5: bool
    final_error: float

    def decreasing_above(self, floor: float = 1e-14, last: int = 5) -> bool:
        """Strict decrease over the last points, ignoring entries at the floor."""
        e = self.errors[-last:]
        e = e[e > floor]
        return bool(np.all(np.diff(e) < 0))


def weak_limit_check(T: Distribution, params: EmbeddingParams, m: Mollifier,
                     phi: TestFunction, rtol: float = 1e-14) -> WeakLimitReport:
    """Compare ``int iota(T)_eps phi`` with ``<T, phi>`` along the grid."""
    fam = embed(T, params, m)
    lo, hi = phi.support
    vals = []
    for k in range(len(params.gauge)):
        def integrand(x, k=k):
            return fam.evaluator(k, x) * phi(x)
        res = quadrature.integrate_adaptive(integrand, lo, hi, fam.breaks(k), rtol=rtol,
                                            atol=1e-17, panels=32)
        vals.append(float(res.value))
    vals = np.array(vals)
    exact = pairing(T, phi)
    err = np.abs(vals - exact)
    tail = params.gauge.grid.tail
    with np.errstate(divide="ignore"):
        le = np.log(err[tail])
    ok = np.isfinite(le)
    rate = float(np.polyfit(np.log(params.gauge.eps[tail][ok]), le[ok], 1)[0]) if ok.sum() >= 2 \
        else math.nan
    last5 = err[-5:]
    return WeakLimitReport(vals, exact, err, rate, bool(np.all(np.diff(last5) < 0)),
                           float(err[-1]))


# --------------------------------------------------------------------------
# discrete tensor-product kernels (metric regularization)
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """Nodes ``z`` on [-1, 1] with weights for psi, psi' and psi''.

    The weights are corrected so the discrete moments are exact:
    ``sum W0 z^a = [a == 0]`` for a <= j, ``sum W1 z^a = -[a == 1]`` for
    a <= j + 1 and ``sum W2 z^a = 2 [a == 2]`` for a <= j + 2.

    Split rules (see :func:`split_kernel`) also carry ``dz`` and ``dW0``,
    the derivatives of nodes and W0 with respect to each cut, shape (M, r, Q).
    """

    z: np.ndarray
    W0: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    dz: Optional[np.ndarray] = None
    dW0: Optional[np.ndarray] = None


def _targets(j):
    return ([1.0] + [0.0] * j, [0.0, -1.0] + [0.0] * j, [0.0, 0.0, 2.0] + [0.0] * j)


@lru_cache(maxsize=None)
def _legder_matrix(deg):
    D = np.zeros((deg, deg))
    for a in range(deg):
        d = leg.legder(np.eye(deg)[a])
        D[:d.size, a] = d
    return D


def _kernel_weights(m: Mollifier, z, w, tangents=()):
    """Moment-corrected W0, W1, W2 for the rule (z, w), plus dW0 per tangent.

    Each weight set is ``w psi^(n) + w phi r(z)`` with the polynomial r
    fixed by the moment targets.  ``tangents`` is a list of ``(dz, dw)``
    node/weight velocities; the matching directional derivatives of W0
    are returned.  All arrays may carry leading batch axes.
    """
    j = m.spec.j
    deg = j + 3
    psi = m.jet(z)
    phi, dphi = psi[3], psi[4]
    wphi = w * phi
    L = leg.legvander(z, deg - 1)  # (..., Q, deg)
    V = np.swapaxes(L, -1, -2)
    a = np.arange(deg)
    Pz = z[..., None, :] ** a[:, None]
    A = Pz @ (wphi[..., :, None] * L)  # A[a, b] = sum z^a w phi P_b
    W, coefs = [], []
    for order, t in enumerate(_targets(j)):
        n = j + 1 + order
        base = w * psi[order]
        resid = np.asarray(t) - (Pz[..., :n, :] @ base[..., None])[..., 0]
        c = np.linalg.solve(A[..., :n, :n], resid[..., None])[..., 0]
        coefs.append(c)
        W.append(base + wphi * (c[..., None, :] @ V[..., :n, :])[..., 0, :])
    n = j + 1
    c, Vn, Pn, base = coefs[0], V[..., :n, :], Pz[..., :n, :], w * psi[0]
    cV = (c[..., None, :] @ Vn)[..., 0, :]
    dL = np.swapaxes(L @ _legder_matrix(deg), -1, -2)[..., :n, :]
    dW0 = []
    for dz, dw in tangents:
        dV = dL * dz[..., None, :]
        dPn = a[:n, None] * z[..., None, :] ** np.maximum(a[:n] - 1, 0)[:, None] * dz[..., None, :]
        dbase = dw * psi[0] + w * psi[1] * dz
        dwphi = dw * phi + w * dphi * dz
        dA = dPn @ np.swapaxes(wphi[..., None, :] * Vn, -1, -2) + \
            Pn @ np.swapaxes(dwphi[..., None, :] * Vn + wphi[..., None, :] * dV, -1, -2)
        dresid = -(dPn @ base[..., None] + Pn @ dbase[..., None])[..., 0]
        dc = np.linalg.solve(A[..., :n, :n], (dresid - (dA @ c[..., None])[..., 0])[..., None])[..., 0]
        dW0.append(dbase + dwphi * cV + wphi * ((dc[..., None, :] @ Vn)[..., 0, :]
                                                 + (c[..., None, :] @ dV)[..., 0, :]))
    return W, dW0


def _kernel_from_rule(m: Mollifier, z, w) -> DiscreteKernel:
    (W0, W1, W2), _ = _kernel_weights(m, z, w)
    return DiscreteKernel(z, W0, W1, W2)


def discrete_kernel(m: Mollifier, panels: int = 2, order: int = 8) -> DiscreteKernel:
    z, w = quadrature.panel_nodes(np.linspace(-1.0, 1.0, panels + 1), order)
    return _kernel_from_rule(m, z, w)


CUT_SLACK = 0.5


def saturate_cut(s, w: float = CUT_SLACK, derivative: bool = False):
    """Identity on [-1, 1], flattening smoothly to +-(1 + w/2) over a band of width w.

    The slope is ``1 - S(u / w)`` with the septic smoothstep S, so the map is
    C^4 across both band edges.  With ``derivative`` the slope is returned too.
    """
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    t = np.clip((a - 1.0) / w, 0.0, 1.0)
    ramp = w * t ** 5 * (7.0 - 14.0 * t + 10.0 * t ** 2 - 2.5 * t ** 3)
    out = np.sign(s) * np.where(a <= 1.0, a, 1.0 + w * t - ramp)
    if not derivative:
        return out
    S = t ** 4 * (35.0 - 84.0 * t + 70.0 * t ** 2 - 20.0 * t ** 3)
    return out, np.where(a <= 1.0, 1.0, 1.0 - S)


def split_kernel(m: Mollifier, cuts, panels: int = 1, order: int = 8) -> DiscreteKernel:
    """One kernel per row of ``cuts`` (M, r), with the rule split at the cut points.

    Every piece gets ``panels * order`` nodes, so the nodes move smoothly
    with the cuts.  Cuts outside [-1, 1] are allowed (pieces beyond the
    support carry zero weight); pass them through :func:`saturate_cut` to
    keep the rule bounded.  Cuts must be sorted along each row.  The
    result carries ``dz`` and ``dW0`` with respect to every cut.
    """
    cuts = np.atleast_2d(np.asarray(cuts, dtype=float))
    M, r = cuts.shape
    one = np.ones((M, 1))
    edges = np.concatenate([-one, cuts, one], axis=1)
    xi, wi = quadrature.panel_nodes(np.linspace(-1.0, 1.0, panels + 1), order)
    n = xi.size
    lo, half = edges[:, :-1, None], 0.5 * np.diff(edges, axis=1)[:, :, None]
    z = (lo + half * (xi + 1.0)).reshape(M, -1)
    w = (half * wi).reshape(M, -1)
    tangents = []
    for c in range(r):
        # cut c is the upper edge of piece c and the lower edge of piece c + 1
        dzc = np.zeros((M, r + 1, n))
        dwc = np.zeros((M, r + 1, n))
        dzc[:, c] = 0.5 * (1.0 + xi)
        dzc[:, c + 1] = 0.5 * (1.0 - xi)
        dwc[:, c] = 0.5 * wi
        dwc[:, c + 1] = -0.5 * wi
        tangents.append((dzc.reshape(M, -1), dwc.reshape(M, -1)))
    (W0, W1, W2), dW = _kernel_weights(m, z, w, tangents)
    dz = np.stack([t[0] for t in tangents], axis=1)
    dW0 = np.stack(dW, axis=1)
    return DiscreteKernel(z, W0, W1, W2, dz, dW0)
