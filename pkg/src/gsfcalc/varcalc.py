"""Calculus of variations on eps-indexed families.

All per-eps work is batched: Lagrangian evaluators receive the grid index
``k`` as an integer array aligned with the points, so one call serves
every grid point (and every shooting column) at once.

Shapes: ``t`` is ``(M,)``, ``u`` and ``v`` are ``(M, d)``.  Partials are
``t -> (M,)``, ``u``/``v``/``vt`` ``-> (M, d)``, ``uu``/``uv``/``vv``
``-> (M, d, d)`` with ``uv[m, i, j] = d^2F / du_i dv_j``.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.linalg import expm

from . import quadrature
from .gauge_ring import (M_SLACK, GenNum, Gauge, NoStandardPartError, _bounded_above,
                         classify, gen_le, standard_part)
from .gsf_core import GsfFamily, IntervalDomain, from_samples, norm_m
from .kernels import hermite_det_roots, rk4_linear

S_STEP = 1e-5
NEWTON_TOL = 1e-9
NEWTON_MAXIT = 50
MODES = 8
CROSS_RTOL = 1e-4
EL_TOL = 1e-6

LagFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class VarcalcError(ValueError):
    pass


class SingularHessianError(VarcalcError):
    pass


class ShootingError(VarcalcError):
    pass


class NonCommutingError(VarcalcError):
    pass


class DegenerateShootingWarning(UserWarning):
    pass


class CrossCheckWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# Lagrangians
# --------------------------------------------------------------------------

_FD_H = 1e-3
_C5 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def _fd5(fun, x, i, h):
    """Fourth-order central difference of ``fun`` along component i of x (steps h, (M,))."""
    acc = 0.0
    for off, c in ((-2, _C5[0]), (-1, _C5[1]), (1, _C5[3]), (2, _C5[4])):
        xs = x.copy()
        xs[:, i] += off * h
        acc = acc + c * fun(xs)
    return acc / h.reshape((-1,) + (1,) * (np.ndim(acc) - 1))


@dataclass(frozen=True, eq=False)
class Lagrangian:
    """``F(k, t, u, v)`` with optional analytic partials.

    Missing partials fall back to fourth-order central differences.
    """

    gauge: Gauge
    dim: int
    F: LagFn
    partials: Dict[str, LagFn] = field(default_factory=dict)
    name: str = ""
    autonomous: bool = False

    def value(self, k, t, u, v):
        return np.asarray(self.F(k, t, u, v), dtype=float)

    def _h(self, x, i):
        return _FD_H * (1.0 + np.abs(x[:, i]))

    def part(self, key: str, k, t, u, v) -> np.ndarray:
        if key in self.partials:
            return np.asarray(self.partials[key](k, t, u, v), dtype=float)
        d = self.dim
        if key == "t":
            if self.autonomous:
                return np.zeros(t.shape)
            h = _FD_H * (1.0 + np.abs(t))
            acc = sum(c * self.value(k, t + o * h, u, v)
                      for o, c in zip((-2, -1, 1, 2), (_C5[0], _C5[1], _C5[3], _C5[4])))
            return acc / h
        if key in ("u", "v"):
            out = np.empty(u.shape)
            for i in range(d):
                if key == "u":
                    out[:, i] = _fd5(lambda x: self.value(k, t, x, v), u, i, self._h(u, i))
                else:
                    out[:, i] = _fd5(lambda x: self.value(k, t, u, x), v, i, self._h(v, i))
            return out
        if key == "vt":
            if self.autonomous:
                return np.zeros(v.shape)
            h = (_FD_H * (1.0 + np.abs(t)))[:, None]
            acc = sum(c * self.part("v", k, t + o * h[:, 0], u, v)
                      for o, c in zip((-2, -1, 1, 2), (_C5[0], _C5[1], _C5[3], _C5[4])))
            return acc / h
        if key in ("uu", "uv", "vv"):
            first, second = key[0], key[1]
            out = np.empty(u.shape + (d,))
            for j in range(d):
                # derivative of F_first along component j of `second`
                if second == "u":
                    col = _fd5(lambda x: self.part(first, k, t, x, v), u, j, self._h(u, j))
                else:
                    col = _fd5(lambda x: self.part(first, k, t, u, x), v, j, self._h(v, j))
                out[:, :, j] = col
            return out
        raise KeyError(key)

    def validate(self, n_probes: int = 8, seed: int = 42):
        """Moderateness of F and its partials on random probes."""
        rng = np.random.default_rng(seed)
        K = len(self.gauge)
        M = n_probes
        t = rng.uniform(0.0, 1.0, M)
        u = rng.uniform(-1.0, 1.0, (M, self.dim))
        v = rng.uniform(-1.0, 1.0, (M, self.dim))
        kk = np.repeat(np.arange(K), M)
        T, U, V = np.tile(t, K), np.tile(u, (K, 1)), np.tile(v, (K, 1))
        for key in (None, "u", "v", "uu", "uv", "vv"):
            vals = self.value(kk, T, U, V) if key is None else self.part(key, kk, T, U, V)
            mag = np.abs(vals).reshape(K, -1).max(axis=1)
            if not classify(GenNum(self.gauge, mag)).is_moderate:
                raise VarcalcError(f"Lagrangian {self.name!r}: "
                                   f"{'F' if key is None else 'F_' + key} not moderate on probes")
        return self


def _zeros_like_mat(u):
    return np.zeros(u.shape + (u.shape[1],))


def _eye_like(u, c=1.0):
    return c * np.broadcast_to(np.eye(u.shape[1]), u.shape + (u.shape[1],)).copy()


def quadratic(gauge: Gauge, dim: int = 1, mass: float = 1.0, stiffness: float = 0.0,
              name: str = "") -> Lagrangian:
    """``F = mass/2 |v|^2 - stiffness/2 |u|^2`` with exact partials."""
    P = {
        "t": lambda k, t, u, v: np.zeros(t.shape),
        "u": lambda k, t, u, v: -stiffness * u,
        "v": lambda k, t, u, v: mass * v,
        "vt": lambda k, t, u, v: np.zeros(v.shape),
        "uu": lambda k, t, u, v: _eye_like(u, -stiffness),
        "uv": lambda k, t, u, v: _zeros_like_mat(u),
        "vv": lambda k, t, u, v: _eye_like(v, mass),
    }

    def F(k, t, u, v):
        return 0.5 * mass * np.sum(v * v, axis=-1) - 0.5 * stiffness * np.sum(u * u, axis=-1)

    return Lagrangian(gauge, dim, F, P, name or "quadratic", autonomous=True)


def free(gauge: Gauge, dim: int = 1) -> Lagrangian:
    return quadratic(gauge, dim, 1.0, 0.0, "free")


def harmonic(gauge: Gauge, dim: int = 1, omega: float = 1.0) -> Lagrangian:
    return quadratic(gauge, dim, 1.0, omega * omega, "harmonic")


def negfree(gauge: Gauge, dim: int = 1) -> Lagrangian:
    return quadratic(gauge, dim, -1.0, 0.0, "negfree")


def energy(gauge: Gauge, dim: int, metric, dmetric, ddmetric=None, name="energy") -> Lagrangian:
    """``F = 1/2 g(u)(v, v)`` for a metric ``g(k, x) -> (M, d, d)``.

    ``dmetric(k, x)[m, i, j, l] = d_l g_ij``; ``ddmetric`` adds a trailing
    axis for the second derivative and is differenced when omitted.
    """

    def F(k, t, u, v):
        return 0.5 * np.einsum("mi,mij,mj->m", v, metric(k, u), v)

    def Fu(k, t, u, v):
        return 0.5 * np.einsum("mi,mijl,mj->ml", v, dmetric(k, u), v)

    def Fv(k, t, u, v):
        return np.einsum("mij,mj->mi", metric(k, u), v)

    def Fuv(k, t, u, v):
        # d^2F / du_l dv_j = (d_l g v)_j
        return np.einsum("mjil,mi->mlj", dmetric(k, u), v)

    def Fuu(k, t, u, v):
        if ddmetric is not None:
            return 0.5 * np.einsum("mi,mijlq,mj->mlq", v, ddmetric(k, u), v)
        out = np.empty(u.shape + (dim,))
        for q in range(dim):
            h = _FD_H * (1.0 + np.abs(u[:, q]))
            out[:, :, q] = _fd5(lambda x: Fu(k, t, x, v), u, q, h)
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    P = {"t": lambda k, t, u, v: np.zeros(t.shape), "u": Fu, "v": Fv,
         "vt": lambda k, t, u, v: np.zeros(v.shape), "uu": Fuu, "uv": Fuv,
         "vv": lambda k, t, u, v: np.asarray(metric(k, u), dtype=float)}
    return Lagrangian(gauge, dim, F, P, name, autonomous=True)


BUILTINS = {"free": free, "harmonic": harmonic, "negfree": negfree}


def builtin(name: str, gauge: Gauge, dim: int = 1, **params) -> Lagrangian:
    try:
        return BUILTINS[name](gauge, dim, **params)
    except KeyError:
        raise VarcalcError(f"unknown Lagrangian {name!r}; choose from {sorted(BUILTINS)}") from None


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-eps samples of u and du on uniform grids ``t[k]``."""

    gauge: Gauge
    dom: IntervalDomain
    t: np.ndarray  # (K, N)
    u: np.ndarray  # (K, N, d)
    du: np.ndarray  # (K, N, d)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        K = len(self.gauge)
        if self.t.ndim != 2 or self.t.shape[0] != K:
            raise VarcalcError("time grid must have shape (K, N)")
        if self.u.shape != self.t.shape + self.u.shape[2:] or self.u.ndim != 3:
            raise VarcalcError("samples must have shape (K, N, d)")
        if self.du.shape != self.u.shape:
            raise VarcalcError("derivative samples must match the samples")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.du))):
            raise VarcalcError("trajectory samples must be finite")

    @property
    def dim(self) -> int:
        return self.u.shape[2]

    @property
    def N(self) -> int:
        return self.t.shape[1]

    @property
    def h(self) -> np.ndarray:
        return (self.t[:, -1] - self.t[:, 0]) / (self.N - 1)

    @property
    def p(self) -> GenNum:
        return GenNum(self.gauge, self.u[:, 0])

    @property
    def q(self) -> GenNum:
        return GenNum(self.gauge, self.u[:, -1])

    def flat(self):
        """Flattened ``(k, t, u, v)`` arrays for one batched Lagrangian call."""
        K, N = self.t.shape
        kk = np.repeat(np.arange(K), N)
        return kk, self.t.ravel(), self.u.reshape(K * N, -1), self.du.reshape(K * N, -1)

    def derivative_mismatch(self) -> np.ndarray:
        """Per-eps max gap between ``du`` and a finite difference of ``u``."""
        fd = quadrature.fd_time_derivative(self.u, self.t)
        return np.abs(fd - self.du).reshape(len(self.gauge), -1).max(axis=1)

    def check_consistent(self, rtol: float = 1e-6):
        gap = self.derivative_mismatch()
        scale = 1.0 + np.abs(self.du).reshape(len(self.gauge), -1).max(axis=1)
        if np.any(gap > rtol * scale):
            raise VarcalcError(f"du inconsistent with u (max gap {float(np.max(gap)):.3g})")
        return self

    def shifted(self, s: float, eta: "Trajectory") -> "Trajectory":
        return Trajectory(self.gauge, self.dom, self.t, self.u + s * eta.u,
                          self.du + s * eta.du)

    def to_csv(self) -> str:
        buf = io.StringIO()
        d = self.dim
        cols = ["k", "eps", "t"] + [f"u{i}" for i in range(d)] + [f"du{i}" for i in range(d)]
        buf.write(",".join(cols) + "\n")
        eps = self.gauge.eps
        for k in range(len(self.gauge)):
            for n in range(self.N):
                row = [str(k), repr(float(eps[k])), repr(float(self.t[k, n]))]
                row += [repr(float(x)) for x in self.u[k, n]]
                row += [repr(float(x)) for x in self.du[k, n]]
                buf.write(",".join(row) + "\n")
        return buf.getvalue()


def time_grid(dom: IntervalDomain, N: int) -> np.ndarray:
    K = len(dom.gauge)
    s = np.linspace(0.0, 1.0, N)
    a, b = dom.a.samples, dom.b.samples
    t = a[:, None] + (b - a)[:, None] * s[None, :]
    t[:, -1] = b
    return t


def trajectory(dom: IntervalDomain, fn, dfn, N: int = 1001, check: bool = True) -> Trajectory:
    """Sample ``fn(k, t) -> (N, d)`` and its derivative ``dfn`` on uniform grids."""
    g = dom.gauge
    t = time_grid(dom, N)
    u = np.stack([np.asarray(fn(k, t[k]), dtype=float).reshape(N, -1) for k in range(len(g))])
    du = np.stack([np.asarray(dfn(k, t[k]), dtype=float).reshape(N, -1) for k in range(len(g))])
    tr = Trajectory(g, dom, t, u, du)
    return tr.check_consistent() if check else tr


def variation_field(dom: IntervalDomain, fn, dfn, N: int = 1001, check: bool = True,
                    tol: float = 1e-12) -> Trajectory:
    """A trajectory vanishing at both ends."""
    eta = trajectory(dom, fn, dfn, N, check)
    ends = np.abs(np.concatenate([eta.u[:, 0], eta.u[:, -1]], axis=1)).max(axis=1)
    if np.any(ends > tol * (1.0 + np.abs(eta.u).reshape(len(dom.gauge), -1).max(axis=1))):
        raise VarcalcError("variation field must vanish at both endpoints")
    return eta


VariationField = Trajectory


def mode_fields(u: Trajectory, modes: int = MODES) -> List[Trajectory]:
    """``sin(m pi (t-a)/(b-a)) e_i`` for m = 1..modes and every component i."""
    out = []
    a = u.t[:, :1]
    L = (u.t[:, -1] - u.t[:, 0])[:, None]
    for m in range(1, modes + 1):
        w = m * math.pi / L
        s = np.sin(w * (u.t - a))
        ds = w * np.cos(w * (u.t - a))
        s[:, 0] = 0.0
        s[:, -1] = 0.0
        for i in range(u.dim):
            eu = np.zeros(u.u.shape)
            ed = np.zeros(u.u.shape)
            eu[:, :, i] = s
            ed[:, :, i] = ds
            out.append(Trajectory(u.gauge, u.dom, u.t, eu, ed, {"mode": m, "component": i}))
    return out


# --------------------------------------------------------------------------
# functional and variations
# --------------------------------------------------------------------------


def _per_eps(u: Trajectory, vals: np.ndarray) -> np.ndarray:
    K, N = u.t.shape
    return vals.reshape((K, N) + vals.shape[1:])


def functional_value(F: Lagrangian, u: Trajectory) -> GenNum:
    kk, t, x, v = u.flat()
    vals = _per_eps(u, F.value(kk, t, x, v))
    return GenNum(u.gauge, quadrature.integrate_samples(vals, u.t))


def _el_samples(F: Lagrangian, u: Trajectory) -> np.ndarray:
    kk, t, x, v = u.flat()
    Fu = _per_eps(u, F.part("u", kk, t, x, v))
    Fv = _per_eps(u, F.part("v", kk, t, x, v))
    return Fu - quadrature.fd_time_derivative(Fv, u.t)


@dataclass(frozen=True)
class FirstVariation:
    value: GenNum
    symmetric_difference: GenNum
    warning: Optional[str] = None


def first_variation(F: Lagrangian, u: Trajectory, eta: Trajectory, s: float = S_STEP,
                    rtol: float = CROSS_RTOL) -> FirstVariation:
    """``dI(u; eta)`` in Euler-Lagrange form, cross-checked by a symmetric difference."""
    r = _el_samples(F, u)
    val = quadrature.integrate_samples(np.sum(r * eta.u, axis=-1), u.t)
    cd = (functional_value(F, u.shifted(s, eta)).samples
          - functional_value(F, u.shifted(-s, eta)).samples) / (2 * s)
    gap = np.abs(val - cd)
    # size of the linear terms, so a vanishing variation is judged against it
    kk, t, x, v = u.flat()
    lin = (np.abs(np.sum(_per_eps(u, F.part("u", kk, t, x, v)) * eta.u, axis=-1))
           + np.abs(np.sum(_per_eps(u, F.part("v", kk, t, x, v)) * eta.du, axis=-1)))
    size = quadrature.integrate_samples(lin, u.t)
    scale = np.maximum(np.maximum(np.abs(val), np.abs(cd)), np.maximum(size, 1e-300))
    msg = None
    if np.any(gap > rtol * scale):
        msg = (f"first variation cross-check disagrees: relative gap "
               f"{float(np.max(gap / scale)):.3g} > {rtol:g}")
        warnings.warn(msg, CrossCheckWarning, stacklevel=2)
    return FirstVariation(GenNum(u.gauge, val), GenNum(u.gauge, cd), msg)


@dataclass(frozen=True, eq=False)
class ELResidual:
    family: GsfFamily
    samples: np.ndarray  # (K, N, d)
    norm: GenNum

    @property
    def max_abs(self) -> GenNum:
        K = self.samples.shape[0]
        return GenNum(self.norm.gauge, np.abs(self.samples).reshape(K, -1).max(axis=1))


def el_residual(F: Lagrangian, u: Trajectory, polish: bool = False) -> ELResidual:
    """``F_u - d/dt F_v`` along u.

    ``norm`` is the grid max; with ``polish`` it is the sup-norm of the
    spline family between nodes.
    """
    r = _el_samples(F, u)
    fam = from_samples(u.gauge, u.t, r, name=f"EL residual {F.name}")
    K = len(u.gauge)
    nrm = GenNum(u.gauge, np.abs(r).reshape(K, -1).max(axis=1))
    if polish:
        nrm = norm_m(fam, u.dom, 0)
    return ELResidual(fam, r, nrm)


def second_variation(F: Lagrangian, u: Trajectory, eta: Trajectory) -> GenNum:
    """``int eta F_uu eta + 2 eta F_uv deta + deta F_vv deta``."""
    kk, t, x, v = u.flat()
    Fuu = _per_eps(u, F.part("uu", kk, t, x, v))
    Fuv = _per_eps(u, F.part("uv", kk, t, x, v))
    Fvv = _per_eps(u, F.part("vv", kk, t, x, v))
    e, de = eta.u, eta.du
    dens = (np.einsum("kni,knij,knj->kn", e, Fuu, e)
            + 2 * np.einsum("kni,knij,knj->kn", e, Fuv, de)
            + np.einsum("kni,knij,knj->kn", de, Fvv, de))
    return GenNum(u.gauge, quadrature.integrate_samples(dens, u.t))


def accessory_integral(F: Lagrangian, u: Trajectory, eta: Trajectory) -> GenNum:
    """``Q(eta)``; the same quadratic form as the second variation."""
    return second_variation(F, u, eta)


def action_curve(F: Lagrangian, u: Trajectory, eta: Trajectory) -> GsfFamily:
    """The scalar family ``s -> I(u + s eta)``."""

    def ev(k, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty(s.shape)
        kk = np.full(u.N, k)
        for i, si in enumerate(s.ravel()):
            x = u.u[k] + si * eta.u[k]
            v = u.du[k] + si * eta.du[k]
            out.ravel()[i] = quadrature.integrate_samples(F.value(kk, u.t[k], x, v), u.t[k])
        return out

    return GsfFamily(u.gauge, ev, name=f"I along {F.name}")


# --------------------------------------------------------------------------
# Legendre condition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LegendreReport:
    min_eigenvalue: GenNum
    passes: bool


def legendre_check(F: Lagrangian, u: Trajectory, m_slack: int = M_SLACK) -> LegendreReport:
    kk, t, x, v = u.flat()
    Fvv = F.part("vv", kk, t, x, v)
    ev = np.linalg.eigvalsh(0.5 * (Fvv + np.swapaxes(Fvv, 1, 2)))[:, 0]
    mins = ev.reshape(u.t.shape).min(axis=1)
    lam = GenNum(u.gauge, mins)
    tol = u.gauge.rho_power(m_slack)
    return LegendreReport(lam, gen_le(-tol, lam) is True)


# --------------------------------------------------------------------------
# Euler-Lagrange boundary value problem
# --------------------------------------------------------------------------


def _el_rhs(F: Lagrangian, kk, t, y, d):
    u, v = y[:, :d], y[:, d:]
    Fvv = F.part("vv", kk, t, u, v)
    rhs = F.part("u", kk, t, u, v) - F.part("vt", kk, t, u, v)
    rhs = rhs - np.einsum("mij,mj->mi", np.swapaxes(F.part("uv", kk, t, u, v), 1, 2), v)
    acc = np.linalg.solve(Fvv, rhs[..., None])[..., 0]
    return np.concatenate([v, acc], axis=1)


def _rk4_el(F, kk, a, h, y0, steps, d, keep=False):
    """Fixed-step RK4 for the Euler-Lagrange first-order system, batched."""
    y = y0.copy()
    path = [y.copy()] if keep else None
    for s in range(steps):
        t = a + s * h
        k1 = _el_rhs(F, kk, t, y, d)
        k2 = _el_rhs(F, kk, t + 0.5 * h, y + 0.5 * h[:, None] * k1, d)
        k3 = _el_rhs(F, kk, t + 0.5 * h, y + 0.5 * h[:, None] * k2, d)
        k4 = _el_rhs(F, kk, t + h, y + h[:, None] * k3, d)
        y = y + (h / 6.0)[:, None] * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise ShootingError("Euler-Lagrange integration blew up")
        if keep:
            path.append(y.copy())
    return np.stack(path, axis=1) if keep else y


def _vec_samples(x, gauge, d):
    if isinstance(x, GenNum):
        s = x.samples.reshape(len(gauge), -1)
    else:
        s = np.broadcast_to(np.asarray(x, dtype=float).reshape(1, -1), (len(gauge), d))
    if s.shape[1] != d:
        raise VarcalcError(f"boundary value must have {d} components")
    return np.array(s, dtype=float)


def _degenerate(Jac, length, tol):
    """Shooting Jacobian small against free flight, ``dy(b)/dc = (b-a) I``."""
    sv = np.linalg.svd(Jac, compute_uv=False)
    return ~np.isfinite(sv[:, -1]) | (sv[:, -1] < tol * length)


def solve_el_bvp(F: Lagrangian, p, q, dom: IntervalDomain, steps: int = 1000,
                 tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAXIT) -> Trajectory:
    """Shooting on the initial velocity, every grid point in one batch."""
    g = dom.gauge
    K, d = len(g), F.dim
    P_ = _vec_samples(p, g, d)
    Q_ = _vec_samples(q, g, d)
    a, b = dom.a.samples, dom.b.samples
    h = (b - a) / steps
    c = (Q_ - P_) / (b - a)[:, None]

    kk0 = np.arange(K)
    Fvv0 = F.part("vv", kk0, a, P_, c)
    cond = np.linalg.cond(Fvv0)
    if not np.all(np.isfinite(cond)) or np.any(cond > 1e12):
        raise SingularHessianError("F_vv singular at the initial guess")

    def shoot(C):
        """Endpoint map and FD Jacobian for velocities C (K, d)."""
        dc = 1e-7 * (1.0 + np.abs(C))
        cols = [C] + [C + dc[:, j:j + 1] * np.eye(d)[j] for j in range(d)]
        V = np.concatenate(cols, axis=0)
        kk = np.tile(kk0, d + 1)
        y0 = np.concatenate([np.tile(P_, (d + 1, 1)), V], axis=1)
        yb = _rk4_el(F, kk, np.tile(a, d + 1), np.tile(h, d + 1), y0, steps, d)[:, :d]
        yb = yb.reshape(d + 1, K, d)
        Jac = np.stack([(yb[j + 1] - yb[0]) / dc[:, j:j + 1] for j in range(d)], axis=2)
        return yb[0] - Q_, Jac

    res, Jac = shoot(c)
    scale = 1.0 + np.abs(Q_).max(axis=1)
    it = 0
    while np.any(np.abs(res).max(axis=1) >= tol * scale):
        if it >= max_iter:
            bad = np.nonzero(np.abs(res).max(axis=1) >= tol * scale)[0]
            raise ShootingError("Newton did not converge in "
                                f"{max_iter} iterations; residuals "
                                + ", ".join(f"k={k}: {np.abs(res[k]).max():.3g}" for k in bad))
        # FD Jacobian noise is ~1e-9 relative, so a smaller threshold never fires
        if np.any(_degenerate(Jac, b - a, 1e-8)):
            raise ShootingError("shooting map singular (endpoint conjugate to the start?)")
        step = np.linalg.solve(Jac, -res[..., None])[..., 0]
        lam = 1.0
        old = np.abs(res).max(axis=1)
        for _ in range(12):
            res_new, Jac_new = shoot(c + lam * step)
            if np.all(np.abs(res_new).max(axis=1) <= np.maximum(old, tol * scale)):
                break
            lam *= 0.5
        c = c + lam * step
        res, Jac = res_new, Jac_new
        it += 1

    info = {"iterations": it, "c0": c.copy()}
    if np.any(_degenerate(Jac, b - a, 1e-8)):
        msg = "shooting map degenerate at the solution (endpoint conjugate to the start)"
        info["warning"] = msg
        warnings.warn(msg, DegenerateShootingWarning, stacklevel=2)
    y0 = np.concatenate([P_, c], axis=1)
    path = _rk4_el(F, kk0, a, h, y0, steps, d, keep=True)
    t = time_grid(dom, steps + 1)
    return Trajectory(g, dom, t, path[:, :, :d], path[:, :, d:], info)


# --------------------------------------------------------------------------
# Jacobi fields and conjugate points
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JacobiSolution:
    gauge: Gauge
    t: np.ndarray  # (K, N)
    J: np.ndarray  # (K, N, d, d)
    dJ: np.ndarray  # (K, N, d, d)
    det: np.ndarray  # (K, N)
    coeffs: tuple  # (P, Q, R) on the nodes, each (K, N, d, d)
    conjugate: Optional[List[GenNum]] = None
    per_eps: Optional[List[List[float]]] = None

    def residual(self) -> np.ndarray:
        """Per-eps max residual of the second-order Jacobi system."""
        P, Q, R = self.coeffs
        QT = np.swapaxes(Q, -1, -2)
        w = P @ self.dJ + QT @ self.J
        dw = quadrature.fd_time_derivative(w, self.t)
        r = dw - Q @ self.dJ - R @ self.J
        K = self.t.shape[0]
        return np.abs(r).reshape(K, -1).max(axis=1)


def _coeffs(F: Lagrangian, kk, t, x, v):
    return F.part("vv", kk, t, x, v), F.part("uv", kk, t, x, v), F.part("uu", kk, t, x, v)


def _jacobi_matrix(P, Q, R):
    """First-order form in ``(eta, P deta + Q^T eta)``."""
    Pinv = np.linalg.inv(P)
    QT = np.swapaxes(Q, -1, -2)
    top = np.concatenate([-Pinv @ QT, Pinv], axis=-1)
    bot = np.concatenate([R - Q @ Pinv @ QT, Q @ Pinv], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def jacobi_solve(F: Lagrangian, u: Trajectory, delta: Optional[float] = None) -> JacobiSolution:
    """Fundamental matrix with ``J(a) = 0``, ``dJ(a) = I`` and its conjugate points."""
    K, N, d = u.u.shape
    kk, t, x, v = u.flat()
    P, Q, R = (_per_eps(u, c) for c in _coeffs(F, kk, t, x, v))
    cond = np.linalg.cond(P.reshape(-1, d, d))
    if np.any(~np.isfinite(cond) | (cond > 1e12)):
        raise SingularHessianError("F_vv singular along the trajectory")
    # midpoints by cubic Hermite interpolation of the trajectory
    acc = quadrature.fd_time_derivative(u.du, u.t)
    tm = 0.5 * (u.t[:, :-1] + u.t[:, 1:])
    xm = np.empty((K, N - 1, d))
    vm = np.empty((K, N - 1, d))
    for k in range(K):
        xm[k] = quadrature.hermite_eval(u.t[k], u.u[k], u.du[k], tm[k])
        vm[k] = quadrature.hermite_eval(u.t[k], u.du[k], acc[k], tm[k])
    km = np.repeat(np.arange(K), N - 1)
    Pm, Qm, Rm = (c.reshape(K, N - 1, d, d)
                  for c in _coeffs(F, km, tm.ravel(), xm.reshape(-1, d), vm.reshape(-1, d)))
    Mn = _jacobi_matrix(P, Q, R)
    Mm = _jacobi_matrix(Pm, Qm, Rm)
    Mhalf = np.empty((K, 2 * N - 1, 2 * d, 2 * d))
    Mhalf[:, 0::2] = Mn
    Mhalf[:, 1::2] = Mm
    Y0 = np.zeros((K, 2 * d, d))
    Y0[:, d:] = P[:, 0]  # w(a) = P(a) J'(a) with J'(a) = I
    hs = u.h
    Y = np.stack([rk4_linear(Mhalf[k:k + 1], Y0[k:k + 1], hs[k])[0] for k in range(K)])
    J = Y[:, :, :d]
    W = Y[:, :, d:]
    QT = np.swapaxes(Q, -1, -2)
    dJ = np.linalg.solve(P, W - QT @ J)
    det = np.linalg.det(J)
    sol = JacobiSolution(u.gauge, u.t, J, dJ, det, (P, Q, R))
    pts, per = conjugate_points(sol, delta)
    return JacobiSolution(u.gauge, u.t, J, dJ, det, (P, Q, R), pts, per)


@dataclass(frozen=True)
class ConjugateReport:
    points: Optional[List[GenNum]]
    per_eps: List[List[float]]
    standard_parts: List[Optional[float]]


def conjugate_points(sol: JacobiSolution, delta: Optional[float] = None):
    """Sign changes of det J on ``(a + delta, b]``, matched across eps by index.

    Returns ``(points, per_eps)``; ``points`` is None when the root counts
    disagree on the tail of the grid.
    """
    K = sol.t.shape[0]
    per = []
    for k in range(K):
        t = sol.t[k]
        dlt = delta if delta is not None else 4.0 * (t[1] - t[0])
        roots = hermite_det_roots(t, sol.J[k], sol.dJ[k], t[0] + dlt, 1e-10)
        per.append([float(r) for r in roots])
    tail = sol.gauge.grid.tail
    counts = {len(per[k]) for k in range(K)[tail]}
    if len(counts) != 1:
        return None, per
    n = counts.pop()
    pts = []
    for i in range(n):
        s = np.array([per[k][i] if i < len(per[k]) else np.nan for k in range(K)])
        pts.append(GenNum(sol.gauge, s))
    return pts, per


def conjugate_report(sol: JacobiSolution) -> ConjugateReport:
    sts = []
    for p in sol.conjugate or []:
        try:
            sts.append(standard_part(p))
        except NoStandardPartError:
            sts.append(None)
    return ConjugateReport(sol.conjugate, sol.per_eps, sts)


def broken_accessory(F: Lagrangian, u: Trajectory, sol: JacobiSolution, root: GenNum,
                     nodes: int = 1001) -> GenNum:
    """``Q`` of the Jacobi field on ``[a, a']`` continued by zero on ``[a', b]``.

    A two-segment integral; the second segment contributes nothing.
    """
    K, N, d = u.u.shape
    out = np.zeros(K)
    for k in range(K):
        c = float(root.samples[k])
        if not np.isfinite(c):
            out[k] = np.nan
            continue
        Jc = quadrature.hermite_eval(sol.t[k], sol.J[k], sol.dJ[k], np.array([c]))[0]
        w = np.linalg.svd(Jc)[2][-1]
        ts = np.linspace(sol.t[k, 0], c, nodes)
        eta = quadrature.hermite_eval(sol.t[k], sol.J[k] @ w, sol.dJ[k] @ w,
                                      ts) if d else None
        # slope of the Jacobi field from the interpolated dJ
        acc = quadrature.fd_time_derivative(sol.dJ[k] @ w, sol.t[k])
        deta = quadrature.hermite_eval(sol.t[k], sol.dJ[k] @ w, acc, ts)
        x = quadrature.hermite_eval(u.t[k], u.u[k], u.du[k], ts)
        ua = quadrature.fd_time_derivative(u.du[k], u.t[k])
        v = quadrature.hermite_eval(u.t[k], u.du[k], ua, ts)
        kk = np.full(nodes, k)
        P, Q, R = _coeffs(F, kk, ts, x, v)
        dens = (np.einsum("ni,nij,nj->n", eta, R, eta) + 2 * np.einsum("ni,nij,nj->n", eta, Q, deta)
                + np.einsum("ni,nij,nj->n", deta, P, deta))
        out[k] = quadrature.integrate_samples(dens, ts)
    return GenNum(u.gauge, out)


# --------------------------------------------------------------------------
# linear ODE: log bound and exponential formula
# --------------------------------------------------------------------------


def _cumulative(A: GsfFamily, t: np.ndarray, k: int, order: int = 8) -> np.ndarray:
    """``int_{t_0}^{t_n} A`` at every node, panel-wise Gauss-Legendre."""
    x, w = quadrature.gauss_legendre(order)
    lo, hi = t[:-1, None], t[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (lo + hi) + half * x[None, :]).ravel()
    vals = np.asarray(A.evaluator(k, nodes), dtype=float)
    vals = vals.reshape((t.size - 1, order) + vals.shape[1:])
    panel = np.einsum("pq,pq...->p...", half * w[None, :], vals)
    out = np.zeros((t.size,) + vals.shape[2:])
    out[1:] = np.cumsum(panel, axis=0)
    return out


@dataclass(frozen=True)
class LogBoundReport:
    max_norm: GenNum
    ratio: np.ndarray
    C: float
    power: float
    passes: bool


def log_bound_check(A: GsfFamily, dom: IntervalDomain, N: int = 1001,
                    slack: float = 0.25) -> LogBoundReport:
    """Whether ``max_t |int_a^t A| <= -C log rho`` holds along the tail."""
    g = A.gauge
    t = time_grid(dom, N)
    K = len(g)
    mx = np.empty(K)
    for k in range(K):
        cum = _cumulative(A, t[k], k)
        mats = cum.reshape(N, *(cum.shape[1:] if cum.ndim > 2 else (1, 1)))
        mx[k] = np.max(np.linalg.norm(mats, ord=2, axis=(1, 2)))
    L = -g.log_rho
    ratio = mx / L
    tail = g.grid.tail
    C = float(np.dot(mx[tail], L[tail]) / np.dot(L[tail], L[tail]))
    with np.errstate(divide="ignore"):
        lm = np.log(mx[tail])
    if np.all(np.isfinite(lm)):
        power = float(-np.polyfit(g.log_rho[tail], lm, 1)[0])
    else:
        power = 0.0
    ok = _bounded_above(ratio[tail]) and power <= slack
    return LogBoundReport(GenNum(g, mx), ratio, C, power, bool(ok))


@dataclass(frozen=True)
class LinearODESolution:
    t: np.ndarray
    y: np.ndarray  # (K, N, d)
    y_rk4: np.ndarray
    max_diff: GenNum
    log_bound: LogBoundReport


def matrix_exp_solution(A: GsfFamily, t0, y0, dom: IntervalDomain, N: int = 1001,
                        comm_tol: float = 1e-10, probes: int = 9) -> LinearODESolution:
    """``y(t) = exp(int_{t0}^t A) y0`` for pointwise-commuting A, checked by RK4."""
    g = A.gauge
    K = len(g)
    lb = log_bound_check(A, dom, N)
    if not lb.passes:
        raise VarcalcError("log bound on int A fails; the exponential solution is not moderate")
    t = time_grid(dom, N)
    t0s = t0.samples if isinstance(t0, GenNum) else np.full(K, float(t0))
    if np.any(np.abs(t0s - t[:, 0]) > 1e-14 * (1 + np.abs(t[:, 0]))):
        raise VarcalcError("t0 must be the left endpoint of the interval")
    ys = np.asarray(y0.samples if isinstance(y0, GenNum) else y0, dtype=float)
    d = A.out_shape[0] if A.out_shape else 1
    ys = np.broadcast_to(ys.reshape(-1, d) if ys.ndim > 1 else ys.reshape(1, d), (K, d))

    def Amat(k, s):
        return np.asarray(A.evaluator(k, s), dtype=float).reshape(len(s), d, d)

    for k in range(K):
        s = np.linspace(t[k, 0], t[k, -1], probes)
        M = Amat(k, s)
        comm = np.einsum("aij,bjk->abik", M, M) - np.einsum("bij,ajk->abik", M, M)
        scale = 1.0 + np.max(np.abs(M)) ** 2
        if np.max(np.abs(comm)) > comm_tol * scale:
            raise NonCommutingError("exponential formula inapplicable; use direct solve")

    y = np.empty((K, N, d))
    yr = np.empty((K, N, d))
    for k in range(K):
        cum = _cumulative(A, t[k], k).reshape(N, d, d)
        y[k] = np.einsum("nij,j->ni", expm(cum), ys[k])
        tm = 0.5 * (t[k, :-1] + t[k, 1:])
        Mh = np.empty((2 * N - 1, d, d))
        Mh[0::2] = Amat(k, t[k])
        Mh[1::2] = Amat(k, tm)
        h = (t[k, -1] - t[k, 0]) / (N - 1)
        yr[k] = rk4_linear(Mh[None], ys[k][None, :, None], h)[0, :, :, 0]
    diff = np.abs(y - yr).reshape(K, -1).max(axis=1)
    return LinearODESolution(t, y, yr, GenNum(g, diff), lb)


# --------------------------------------------------------------------------
# Noether
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SymmetryFamily:
    """Maps ``T(k, s, t, l) -> (M,)`` and ``L(k, s, t, l) -> (M, d)``.

    ``dT``/``dL`` give the s-derivative at s = 0; central differences are
    used when omitted.
    """

    T: Callable
    L: Callable
    dT: Optional[Callable] = None
    dL: Optional[Callable] = None
    time_dependent: bool = True
    name: str = ""

    def ds(self, which: str, k, t, l, h: float = 1e-6):
        fn = self.T if which == "T" else self.L
        exact = self.dT if which == "T" else self.dL
        if exact is not None:
            return np.asarray(exact(k, t, l), dtype=float)
        if which == "T" and not self.time_dependent:
            return np.zeros(t.shape)
        return (np.asarray(fn(k, h, t, l)) - np.asarray(fn(k, -h, t, l))) / (2 * h)


def space_translation(direction) -> SymmetryFamily:
    e = np.asarray(direction, dtype=float)
    return SymmetryFamily(
        T=lambda k, s, t, l: t, L=lambda k, s, t, l: l + s * e,
        dT=lambda k, t, l: np.zeros(t.shape), dL=lambda k, t, l: np.broadcast_to(e, l.shape),
        time_dependent=False, name="space translation")


def time_translation() -> SymmetryFamily:
    return SymmetryFamily(
        T=lambda k, s, t, l: t + s, L=lambda k, s, t, l: l,
        dT=lambda k, t, l: np.ones(t.shape), dL=lambda k, t, l: np.zeros(l.shape),
        time_dependent=True, name="time translation")


@dataclass(frozen=True, eq=False)
class NoetherResult:
    family: GsfFamily
    samples: np.ndarray  # (K, N)
    drift: GenNum
    warnings: tuple


def _invariance_gap(F, u, sym, s):
    K, N, d = u.u.shape
    kk, t, x, v = u.flat()
    Ts = np.asarray(sym.T(kk, s, t, x), dtype=float).reshape(K, N)
    Ls = np.asarray(sym.L(kk, s, t, x), dtype=float).reshape(K, N, d)
    dTs = quadrature.fd_time_derivative(Ts, u.t)
    dLs = quadrature.fd_time_derivative(Ls, u.t)
    vbar = dLs / dTs[..., None]
    lhs = F.value(kk, t, x, v).reshape(K, N)
    rhs = F.value(kk, Ts.ravel(), Ls.reshape(-1, d), vbar.reshape(-1, d)).reshape(K, N) * dTs
    return float(np.max(np.abs(lhs - rhs) / (1.0 + np.abs(lhs))))


def noether_charge(F: Lagrangian, u: Trajectory, sym: SymmetryFamily,
                   probe_s=(-0.1, -0.01, 0.01, 0.1), el_tol: float = EL_TOL,
                   inv_tol: float = 1e-6) -> NoetherResult:
    """``F_v . dL/ds + (F - F_v . du) dT/ds`` at s = 0, sampled along u."""
    K, N, d = u.u.shape
    kk, t, x, v = u.flat()
    notes = []
    T0 = np.asarray(sym.T(kk, 0.0, t, x), dtype=float)
    L0 = np.asarray(sym.L(kk, 0.0, t, x), dtype=float).reshape(-1, d)
    if np.max(np.abs(T0 - t)) > 1e-12 * (1 + np.max(np.abs(t))) or \
            np.max(np.abs(L0 - x)) > 1e-12 * (1 + np.max(np.abs(x))):
        notes.append("symmetry is not the identity at s = 0")
    el = np.abs(_el_samples(F, u)).max()
    if el > el_tol:
        notes.append(f"trajectory does not satisfy Euler-Lagrange (residual {el:.3g})")
    gap = max(_invariance_gap(F, u, sym, s) for s in probe_s)
    if gap > inv_tol:
        notes.append(f"Lagrangian not invariant under the symmetry (gap {gap:.3g})")
    for n in notes:
        warnings.warn(n, UserWarning, stacklevel=2)
    Fv = F.part("v", kk, t, x, v)
    val = F.value(kk, t, x, v)
    dL = sym.ds("L", kk, t, x).reshape(-1, d)
    dT = sym.ds("T", kk, t, x).reshape(-1)
    q = np.sum(Fv * dL, axis=1) + (val - np.sum(Fv * v, axis=1)) * dT
    q = q.reshape(K, N)
    drift = np.abs(q - q[:, :1]).max(axis=1)
    fam = from_samples(u.gauge, u.t, q, name=f"Noether charge ({sym.name})")
    return NoetherResult(fam, q, GenNum(u.gauge, drift), tuple(notes))


def charge_to_csv(u: Trajectory, res: NoetherResult) -> str:
    buf = io.StringIO()
    buf.write("k,eps,t,charge\n")
    eps = u.gauge.eps
    for k in range(len(u.gauge)):
        for n in range(u.N):
            buf.write(f"{k},{float(eps[k])!r},{float(u.t[k, n])!r},{float(res.samples[k, n])!r}\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# minimizer report
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MinimizerReport:
    verdict: str
    el_residual: GenNum
    legendre: LegendreReport
    conjugate: ConjugateReport
    second_variations: Dict[tuple, GenNum]
    negative_field: Optional[tuple]  # (mode, component, value)
    broken_accessory: Optional[GenNum]
    positive_on_basis: bool

    @property
    def sufficient_evidence(self) -> bool:
        """Necessary conditions hold and the second variation is positive on the basis."""
        return self.verdict == "passes-necessary" and self.positive_on_basis


def minimizer_report(F: Lagrangian, u: Trajectory, dom: Optional[IntervalDomain] = None,
                     el_tol: float = EL_TOL, modes: int = MODES) -> MinimizerReport:
    """Necessary conditions for a local minimizer, plus Jacobi's obstruction."""
    el = el_residual(F, u).max_abs
    leg_rep = legendre_check(F, u)
    sol = jacobi_solve(F, u)
    conj = conjugate_report(sol)
    sv = {}
    neg = None
    tail = u.gauge.grid.tail
    for eta in mode_fields(u, modes):
        key = (eta.info["mode"], eta.info["component"])
        val = second_variation(F, u, eta)
        sv[key] = val
        if neg is None and gen_le(val, u.gauge.const(0.0)) is True and \
                np.all(val.samples[tail] < 0):
            neg = key + (val,)
    positive = all(np.all(v.samples[tail] > 0) for v in sv.values())

    critical = bool(np.all(el.samples[tail] <= el_tol))
    inner = []
    if conj.points:
        b = u.t[:, -1]
        for p in conj.points:
            if np.all(p.samples[tail] < b[tail] - 1e-9):
                inner.append(p)
    broken = broken_accessory(F, u, sol, inner[0]) if inner else None
    if not critical or not leg_rep.passes:
        verdict = "violates-necessary"
    elif inner:
        verdict = "jacobi-obstruction"
    elif neg is not None:
        verdict = "violates-necessary"
    else:
        verdict = "passes-necessary"
    return MinimizerReport(verdict, el, leg_rep, conj, sv, neg, broken, positive)


__all__ = [
    "Lagrangian", "quadratic", "free", "harmonic", "negfree", "energy", "builtin", "BUILTINS",
    "Trajectory", "VariationField", "trajectory", "variation_field", "mode_fields", "time_grid",
    "functional_value", "first_variation", "FirstVariation", "el_residual", "ELResidual",
    "second_variation", "accessory_integral", "action_curve", "legendre_check", "LegendreReport",
    "solve_el_bvp", "jacobi_solve", "JacobiSolution", "conjugate_points", "conjugate_report",
    "ConjugateReport", "broken_accessory", "log_bound_check", "LogBoundReport",
    "matrix_exp_solution", "LinearODESolution", "SymmetryFamily", "space_translation",
    "time_translation", "noether_charge", "NoetherResult", "charge_to_csv", "minimizer_report",
    "MinimizerReport", "VarcalcError", "SingularHessianError", "ShootingError",
    "NonCommutingError", "DegenerateShootingWarning", "CrossCheckWarning",
]
