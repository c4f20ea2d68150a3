"""Generalized smooth functions as eps-indexed families of smooth maps.

A :class:`GsfFamily` holds one evaluator ``f(k, x)`` for the k-th grid
point, vectorized over a batch of points.  Derivatives come either from
user-supplied analytic callables or from Ridders-extrapolated central
differences whose initial step is tied to the gauge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from . import quadrature
from .gauge_ring import Gauge, GenNum, classify, gen_lt

Evaluator = Callable[[int, np.ndarray], np.ndarray]

FD_EXPONENT = 0.35
FD_MIN_STEP = 1e-7
SCAN_SAMPLES = 1025


class GsfError(ValueError):
    pass


class DomainError(GsfError):
    pass


class NotModerateError(GsfError):
    pass


@dataclass(frozen=True, eq=False)
class IntervalDomain:
    """Functionally compact interval ``[a, b]`` with generalized endpoints."""

    a: GenNum
    b: GenNum

    def __post_init__(self):
        if gen_lt(self.a, self.b) is not True:
            raise DomainError("interval endpoints must satisfy a < b")

    @classmethod
    def of(cls, gauge: Gauge, a, b) -> "IntervalDomain":
        a = a if isinstance(a, GenNum) else gauge.const(a)
        b = b if isinstance(b, GenNum) else gauge.const(b)
        return cls(a, b)

    @property
    def gauge(self) -> Gauge:
        return self.a.gauge

    def bounds(self, k: int):
        return float(self.a.samples[k]), float(self.b.samples[k])

    def contains(self, x: GenNum, tol: float = 1e-12) -> bool:
        tail = self.gauge.grid.tail
        xs = x.samples[tail]
        lo, hi = self.a.samples[tail], self.b.samples[tail]
        pad = tol * (1 + np.abs(hi - lo))
        return bool(np.all((xs >= lo - pad) & (xs <= hi + pad)))


@dataclass(frozen=True, eq=False)
class GsfFamily:
    """A generalized smooth function ``[f_eps(-)]``.

    evaluator
        ``f(k, x)``: ``x`` has shape ``(M,)`` when ``n_in == 1`` and
        ``(M, n_in)`` otherwise; the result has shape ``(M,) + out_shape``.
    derivatives
        Optional analytic derivatives.  For ``n_in == 1`` keys are orders
        (1, 2, ...); otherwise multi-index tuples of length ``n_in``.
    breakpoints
        Optional ``k -> sequence`` of abscissae where the k-th member has
        eps-scale features (used by quadrature and scans).
    fd_scale
        Optional per-grid-point multiplier for the finite-difference step,
        for members varying on a known eps-dependent length scale.
    """

    gauge: Gauge
    evaluator: Evaluator
    n_in: int = 1
    out_shape: tuple = ()
    domain: Optional[IntervalDomain] = None
    derivatives: Mapping = field(default_factory=dict)
    breakpoints: Optional[Callable[[int], Sequence[float]]] = None
    fd_scale: Optional[np.ndarray] = None
    name: str = ""

    def __call__(self, x):
        return evaluate(self, x)

    def member(self, k: int) -> Callable[[np.ndarray], np.ndarray]:
        return lambda x: self.evaluator(k, np.asarray(x, dtype=float))

    def breaks(self, k: int):
        return () if self.breakpoints is None else tuple(self.breakpoints(k))

    # algebra of families, pointwise
    def _combine(self, other, op, name):
        if isinstance(other, GsfFamily):
            f, g = self.evaluator, other.evaluator

            def ev(k, x):
                return op(f(k, x), g(k, x))

            bp = _merge_breaks(self, other)
        else:
            c = other
            f = self.evaluator

            def ev(k, x):
                cv = c.samples[k] if isinstance(c, GenNum) else c
                return op(f(k, x), cv)

            bp = self.breakpoints
        return GsfFamily(self.gauge, ev, self.n_in, self.out_shape, self.domain,
                         breakpoints=bp, fd_scale=self.fd_scale, name=name)

    def __add__(self, other):
        return self._combine(other, np.add, "sum")

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract, "difference")

    def __mul__(self, other):
        return self._combine(other, np.multiply, "product")

    __rmul__ = __mul__

    def compose(self, inner: "GsfFamily") -> "GsfFamily":
        """``self o inner`` for families with scalar input and output."""
        f, g = self.evaluator, inner.evaluator

        def ev(k, x):
            return f(k, g(k, x))

        return GsfFamily(self.gauge, ev, inner.n_in, self.out_shape, inner.domain,
                         breakpoints=inner.breakpoints, name="composition")


def _merge_breaks(f, g):
    if f.breakpoints is None and g.breakpoints is None:
        return None
    return lambda k: tuple(f.breaks(k)) + tuple(g.breaks(k))


def from_eps(gauge: Gauge, fn: Callable[[float, np.ndarray], np.ndarray], *,
             derivatives: Optional[Mapping] = None, **kw) -> GsfFamily:
    """Family from ``fn(eps, x)``; derivative callables use the same signature."""
    eps = gauge.eps

    def ev(k, x):
        return fn(eps[k], x)

    ders = {}
    for key, d in (derivatives or {}).items():
        ders[key] = (lambda d: (lambda k, x: d(eps[k], x)))(d)
    return GsfFamily(gauge, ev, derivatives=ders, **kw)


# --------------------------------------------------------------------------
# validation and evaluation
# --------------------------------------------------------------------------


def _probe_points(f: GsfFamily, n_random: int, seed: int):
    """Per-grid-point probe arrays: corners, midpoint and random interior."""
    rng = np.random.default_rng(seed)
    K = len(f.gauge)
    if f.n_in == 1:
        u = np.concatenate([[0.0, 1.0, 0.5], rng.uniform(0.02, 0.98, n_random)])
        if f.domain is None:
            lo, hi = np.full(K, -1.0), np.full(K, 1.0)
        else:
            lo, hi = f.domain.a.samples, f.domain.b.samples
        return lo[:, None] + (hi - lo)[:, None] * u[None, :]
    corners = np.array(np.meshgrid(*[[0.0, 1.0]] * f.n_in)).reshape(f.n_in, -1).T
    u = np.vstack([corners, np.full((1, f.n_in), 0.5), rng.uniform(0.02, 0.98, (n_random, f.n_in))])
    pts = -1.0 + 2.0 * u
    return np.broadcast_to(pts, (K,) + pts.shape)


def make_gsf(gauge: Gauge, evaluator: Evaluator, *, derivatives=None, domain=None,
             n_in: int = 1, out_shape=(), breakpoints=None, fd_scale=None,
             n_probes: int = 8, seed: int = 42, validate: bool = True, name="") -> GsfFamily:
    """Build a family and check value, first and second derivatives for moderateness.

    The checks run at domain corners, the midpoint and ``n_probes`` random
    interior points.
    """
    if fd_scale is not None:
        fd_scale = np.asarray(fd_scale.samples if isinstance(fd_scale, GenNum) else fd_scale,
                              dtype=float)
    f = GsfFamily(gauge, evaluator, n_in, tuple(out_shape), domain, dict(derivatives or {}),
                  breakpoints, fd_scale, name)
    if validate:
        validate_moderate(f, n_probes, seed)
    return f


def validate_moderate(f: GsfFamily, n_probes: int = 8, seed: int = 42):
    pts = _probe_points(f, n_probes, seed)
    K = len(f.gauge)
    fams = [("value", f)]
    if f.n_in == 1:
        fams += [("first derivative", derivative(f, order=1)),
                 ("second derivative", derivative(f, order=2))]
    else:
        for i in range(f.n_in):
            e = np.zeros(f.n_in)
            e[i] = 1.0
            fams.append((f"derivative along axis {i}", derivative(f, e, 1)))
    with np.errstate(all="ignore"):
        for label, fam in fams:
            vals = np.stack([np.asarray(fam.evaluator(k, pts[k]), dtype=float) for k in range(K)])
            vals = vals.reshape(K, vals.shape[1], -1)
            for j in range(vals.shape[1]):
                rep = classify(GenNum(f.gauge, vals[:, j, :]))
                if rep.verdict == "neither":
                    raise NotModerateError(
                        f"not rho-moderate on probes ({label} at probe {j})")


def _as_points(f: GsfFamily, x):
    if isinstance(x, GenNum):
        s = x.samples
    else:
        s = np.asarray(x, dtype=float)
        s = np.broadcast_to(s, (len(f.gauge),) + s.shape)
    if f.n_in == 1 and s.ndim != 1:
        raise GsfError("scalar family expects a scalar generalized point")
    return s


def evaluate(f: GsfFamily, x) -> GenNum:
    """``f([x_eps]) = [f_eps(x_eps)]``."""
    s = _as_points(f, x)
    if f.domain is not None:
        if not f.domain.contains(GenNum(f.gauge, s)):
            raise DomainError("point outside the family's domain")
    K = len(f.gauge)
    with np.errstate(over="ignore", under="ignore"):
        out = np.stack([np.asarray(f.evaluator(k, s[k][None]), dtype=float)[0] for k in range(K)])
    return GenNum(f.gauge, out)


# --------------------------------------------------------------------------
# derivatives
# --------------------------------------------------------------------------


def fd_step(f: GsfFamily, k: int, x: np.ndarray) -> np.ndarray:
    """Initial finite-difference step ``max(rho**0.35, 1e-7) * (1 + |x|)``."""
    rho = math.exp(f.gauge.log_rho[k])
    base = max(rho ** FD_EXPONENT, FD_MIN_STEP)
    if f.fd_scale is not None:
        base *= float(f.fd_scale[k])
    ax = np.abs(x) if x.ndim == 1 else np.linalg.norm(x, axis=-1)
    return base * (1.0 + ax)


def ridders(fun: Callable[[np.ndarray], np.ndarray], h0: np.ndarray, order: int = 1,
            ntab: int = 10, con: float = 1.4):
    """Ridders extrapolation of central differences of ``fun`` at t = 0.

    ``fun(t)`` takes offsets of shape ``(M,)`` and returns ``(M, ...)``.
    ``order`` is 1 (first difference) or 2 (second difference).
    """
    h = np.asarray(h0, dtype=float)

    def diff(hh):
        if order == 1:
            num = np.asarray(fun(hh), float) - np.asarray(fun(-hh), float)
            den = 2.0 * hh
        else:
            num = np.asarray(fun(hh), float) - 2.0 * f0 + np.asarray(fun(-hh), float)
            den = hh * hh
        return num / den.reshape(den.shape + (1,) * (num.ndim - 1))

    f0 = np.asarray(fun(np.zeros_like(h)), float) if order == 2 else None
    con2 = con * con
    prev = [diff(h)]
    best = prev[0].copy()
    err = np.full(best.shape, np.inf)
    for i in range(1, ntab):
        h = h / con
        cur = [diff(h)]
        fac = con2
        for j in range(1, i + 1):
            cur.append((cur[j - 1] * fac - prev[j - 1]) / (fac - 1.0))
            fac *= con2
            errt = np.maximum(np.abs(cur[j] - cur[j - 1]), np.abs(cur[j] - prev[j - 1]))
            better = errt <= err
            best = np.where(better, cur[j], best)
            err = np.where(better, errt, err)
        prev = cur
    return best, err


def _fd_directional(f: GsfFamily, v: np.ndarray, order: int) -> Evaluator:
    base = f.evaluator

    def ev(k, x):
        x = np.asarray(x, dtype=float)
        vk = v[k]
        h0 = fd_step(f, k, x)
        if f.n_in == 1:
            scale = abs(float(vk)) if np.ndim(vk) == 0 else 1.0

            def g(t):
                return base(k, x + t * vk)
        else:
            vk = np.asarray(vk, dtype=float)
            scale = float(np.linalg.norm(vk)) or 1.0

            def g(t):
                return base(k, x + t[:, None] * vk[None, :])

        h0 = h0 / (scale if scale > 0 else 1.0)
        val, _ = ridders(g, h0, order=order)
        return val

    return ev


def _analytic_directional(f: GsfFamily, v: np.ndarray, order: int) -> Optional[Evaluator]:
    ders = f.derivatives
    if not ders:
        return None
    if f.n_in == 1:
        if order not in ders:
            return None
        d = ders[order]

        def ev(k, x):
            out = np.asarray(d(k, x), dtype=float)
            return out * float(v[k]) ** order

        return ev
    from itertools import product
    keys = [a for a in product(range(order + 1), repeat=f.n_in) if sum(a) == order]
    if not all(a in ders for a in keys):
        return None

    def ev(k, x):
        vk = np.asarray(v[k], dtype=float)
        total = 0.0
        for a in keys:
            coef = math.factorial(order) / math.prod(math.factorial(i) for i in a)
            total = total + coef * np.prod(vk ** np.array(a)) * np.asarray(ders[a](k, x), float)
        return total

    return ev


def _shift_derivatives(f: GsfFamily, v: np.ndarray, order: int):
    if f.n_in != 1 or not f.derivatives:
        return {}
    out = {}
    for j, d in f.derivatives.items():
        if j > order:
            def shifted(k, x, d=d, j=j):
                return np.asarray(d(k, x), dtype=float) * float(v[k]) ** order
            out[j - order] = shifted
    return out


def derivative(f: GsfFamily, v=None, order: int = 1) -> GsfFamily:
    """Directional derivative of order ``order`` along ``v`` (default: 1).

    ``v`` may be a number, an array of shape ``(n_in,)`` or a generalized
    number/vector; the k-th member differentiates along ``v_{eps_k}``.
    """
    K = len(f.gauge)
    if v is None:
        v = 1.0 if f.n_in == 1 else np.eye(f.n_in)[0]
    if isinstance(v, GenNum):
        vs = v.samples
    else:
        vs = np.broadcast_to(np.asarray(v, dtype=float), (K,) + np.shape(v))
    if order == 0:
        return f
    ev = _analytic_directional(f, vs, order)
    if ev is None:
        if order <= 2:
            ev = _fd_directional(f, vs, order)
        else:
            inner = derivative(f, v, order - 2)
            return derivative(inner, v, 2)
    return GsfFamily(f.gauge, ev, f.n_in, f.out_shape, f.domain,
                     _shift_derivatives(f, vs, order), f.breakpoints, f.fd_scale,
                     name=f"D^{order} {f.name}".strip())


# --------------------------------------------------------------------------
# integration, norms, extrema, Taylor
# --------------------------------------------------------------------------


def _endpoint_samples(gauge, c):
    if isinstance(c, GenNum):
        return c.samples
    return np.full(len(gauge), float(c))


def integrate(f: GsfFamily, c, x, **quad_kw) -> GenNum:
    """``[int_{c_eps}^{x_eps} f_eps(s) ds]`` by adaptive composite Gauss-Legendre."""
    if f.n_in != 1:
        raise GsfError("integration needs a family with scalar input")
    cs = _endpoint_samples(f.gauge, c)
    xs = _endpoint_samples(f.gauge, x)
    if f.domain is not None:
        lo = GenNum(f.gauge, np.minimum(cs, xs))
        hi = GenNum(f.gauge, np.maximum(cs, xs))
        if not (f.domain.contains(lo) and f.domain.contains(hi)):
            raise DomainError("integration interval leaves the domain")
    out = []
    for k in range(len(f.gauge)):
        res = quadrature.integrate_adaptive(f.member(k), cs[k], xs[k], f.breaks(k), **quad_kw)
        out.append(res.value)
    return GenNum(f.gauge, np.array(out))


def primitive(f: GsfFamily, c) -> GsfFamily:
    """The unique family F with F(c) = 0 and F' = f."""
    cs = _endpoint_samples(f.gauge, c)

    def ev(k, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([
            quadrature.integrate(f.member(k), cs[k], xi, f.breaks(k)) for xi in x
        ])

    return GsfFamily(f.gauge, ev, 1, f.out_shape, f.domain, {1: f.evaluator},
                     f.breakpoints, f.fd_scale, name=f"primitive {f.name}".strip())


def _scan_grid(f, k, lo, hi, n):
    t = np.linspace(lo, hi, n)
    extra = [b for b in f.breaks(k) if lo < b < hi]
    if extra:
        t = np.union1d(t, extra)
    return t


def _polish(fun, t, i, maximize):
    """Bounded Brent polish of a scalar function around grid index i."""
    lo = t[max(i - 1, 0)]
    hi = t[min(i + 1, t.size - 1)]
    if hi <= lo:
        return t[i], fun(t[i])
    sgn = -1.0 if maximize else 1.0
    res = minimize_scalar(lambda s: sgn * fun(s), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13 * max(1.0, abs(lo), abs(hi))})
    cand = [(t[i], fun(t[i])), (res.x, fun(res.x))]
    return min(cand, key=lambda p: sgn * p[1])


def norm_m(f: GsfFamily, dom: IntervalDomain, m: int, nodes: int = SCAN_SAMPLES) -> GenNum:
    """``max_{n<=m, i} sup_t |d^n f^i/dt^n|`` per grid point."""
    fams = [derivative(f, order=n) for n in range(m + 1)]
    out = np.zeros(len(f.gauge))
    for k in range(len(f.gauge)):
        lo, hi = dom.bounds(k)
        t = _scan_grid(f, k, lo, hi, nodes)
        best = 0.0
        for fam in fams:
            vals = np.abs(np.asarray(fam.evaluator(k, t), dtype=float)).reshape(t.size, -1)
            comp = int(np.argmax(vals.max(axis=0)))
            col = vals[:, comp]
            i = int(np.argmax(col))

            def g(s, fam=fam, comp=comp):
                return float(np.abs(np.asarray(fam.evaluator(k, np.array([s])), float)
                                    ).reshape(-1)[comp])

            _, v = _polish(g, t, i, maximize=True)
            best = max(best, col[i], v)
        out[k] = best
    return GenNum(f.gauge, out)


@dataclass(frozen=True)
class Extremum:
    min: GenNum
    argmin: GenNum
    max: GenNum
    argmax: GenNum


def extremum(f: GsfFamily, dom: IntervalDomain, samples: int = SCAN_SAMPLES) -> Extremum:
    """Global min/max of a scalar family on ``dom`` (dense scan plus polish).

    Heuristic: pathological members with features between scan points and
    away from declared breakpoints can be missed.
    """
    K = len(f.gauge)
    res = np.zeros((K, 4))
    for k in range(K):
        lo, hi = dom.bounds(k)
        t = _scan_grid(f, k, lo, hi, samples)
        vals = np.asarray(f.evaluator(k, t), dtype=float).reshape(-1)

        def g(s):
            return float(np.asarray(f.evaluator(k, np.array([s])), float).reshape(-1)[0])

        xmin, vmin = _polish(g, t, int(np.argmin(vals)), maximize=False)
        xmax, vmax = _polish(g, t, int(np.argmax(vals)), maximize=True)
        res[k] = vmin, xmin, vmax, xmax
    g_ = f.gauge
    return Extremum(GenNum(g_, res[:, 0]), GenNum(g_, res[:, 1]),
                    GenNum(g_, res[:, 2]), GenNum(g_, res[:, 3]))


def taylor_remainder(f: GsfFamily, a, x, n: int) -> GenNum:
    """``f(x) - sum_{j<=n} f^(j)(a) (x-a)^j / j!`` for a scalar-input family."""
    if f.n_in != 1:
        raise GsfError("taylor_remainder needs a family with scalar input")
    a = a if isinstance(a, GenNum) else f.gauge.const(a)
    x = x if isinstance(x, GenNum) else f.gauge.const(x)
    if f.domain is not None:
        if not (f.domain.contains(a) and f.domain.contains(x)):
            raise DomainError("segment [a, x] leaves the domain")
    total = evaluate(f, x)
    h = x - a
    for j in range(n + 1):
        dj = evaluate(derivative(f, order=j), a)
        total = total - dj * h ** j / math.factorial(j)
    return total


def from_samples(gauge: Gauge, t: np.ndarray, values: np.ndarray, name="") -> GsfFamily:
    """Cubic-spline family through samples ``values[k]`` on grids ``t[k]``."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    splines = [CubicSpline(t[k], values[k], axis=0) for k in range(len(gauge))]

    def ev(k, x):
        return splines[k](x)

    ders = {j: (lambda j: (lambda k, x: splines[k](x, j)))(j) for j in (1, 2, 3)}
    return GsfFamily(gauge, ev, 1, values.shape[2:], None, ders, name=name)


__all__ = [
    "GsfFamily", "IntervalDomain", "GsfError", "DomainError", "NotModerateError",
    "make_gsf", "from_eps", "evaluate", "derivative", "integrate", "primitive", "norm_m",
    "extremum", "Extremum", "taylor_remainder", "from_samples", "ridders", "fd_step",
]
