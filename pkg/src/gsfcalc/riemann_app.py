"""Geodesics of mollified C^{1,1} Riemannian metrics on R^d.

The metric is convolved with a tensor-product kernel of width 1/b_eps,
using the moment-corrected discrete weights of
:func:`mollifier_embed.discrete_kernel`.  Along axes where the metric
declares a kink the rule is split at the crossing point for every
evaluation point, which keeps each member smooth in x.  Geodesics are solved per eps by
fixed-step RK4 and shooting; minimality is assessed through the energy
Lagrangian ``1/2 g(v, v)``.
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import quadrature
from . import varcalc
from .gauge_ring import GenNum, Gauge, gen_lt, standard_part_report
from .gsf_core import IntervalDomain
from .kernels import christoffel_symbols
from .mollifier_embed import (DiscreteKernel, EmbeddingParams, Mollifier, MollifierSpec,
                              build_mollifier, discrete_kernel, split_kernel,
                              saturate_cut, CUT_SLACK)

BOX = 1e6
NEWTON_TOL = 1e-9
NEWTON_MAXIT = 50
STEPS = 1000

MetricFn = Callable[[np.ndarray], np.ndarray]


class RiemannError(ValueError):
    pass


class RegularizationError(RiemannError):
    pass


class GeodesicError(RiemannError):
    pass


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MetricSpec:
    """Components ``g(x) -> (M, d, d)``; ``dg(x)[m, i, j, l] = d_l g_ij``.

    ``axes`` lists the coordinates the metric depends on (default: all);
    convolution along the others is the identity.  ``kinks`` holds
    ``(axis, value)`` hyperplanes across which second derivatives may jump;
    the kernel rule is split there, which needs ``dg``.
    """

    dim: int
    g: MetricFn
    dg: Optional[MetricFn] = None
    probes: Optional[np.ndarray] = None
    name: str = ""
    axes: Optional[tuple] = None
    kinks: tuple = ()

    def __post_init__(self):
        if self.axes is not None and any(not 0 <= a < self.dim for a in self.axes):
            raise RiemannError(f"axes must lie in 0..{self.dim - 1}")
        for ax, _ in self.kinks:
            if ax not in self.active_axes:
                raise RiemannError(f"kink axis {ax} is not a dependent axis")
        if self.kinks and self.dg is None:
            raise RiemannError("kinked metrics need dg")
        P = self.probe_points()
        G = np.asarray(self.g(P), dtype=float)
        if G.shape != (P.shape[0], self.dim, self.dim):
            raise RiemannError(f"metric must return shape (M, {self.dim}, {self.dim})")
        if np.max(np.abs(G - np.swapaxes(G, 1, 2))) > 1e-12 * (1 + np.max(np.abs(G))):
            raise RiemannError("metric is not symmetric on probes")
        if np.min(np.linalg.eigvalsh(G)) <= 0:
            raise RiemannError("metric is not positive-definite on probes")

    @property
    def active_axes(self) -> tuple:
        return tuple(range(self.dim)) if self.axes is None else tuple(sorted(set(self.axes)))

    def probe_points(self) -> np.ndarray:
        if self.probes is not None:
            return np.asarray(self.probes, dtype=float).reshape(-1, self.dim)
        axis = np.linspace(-1.0, 1.0, 5)
        return np.array(list(itertools.product(axis, repeat=self.dim)), dtype=float)

    def christoffel(self, x: np.ndarray) -> np.ndarray:
        """Christoffel symbols of the unmollified metric (where dg exists)."""
        if self.dg is None:
            raise RiemannError("exact Christoffel symbols need dg")
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return christoffel_symbols(np.asarray(self.g(x), float), np.asarray(self.dg(x), float))


def flat(dim: int = 2) -> MetricSpec:
    eye = np.eye(dim)
    return MetricSpec(dim, lambda x: np.broadcast_to(eye, (len(x), dim, dim)).copy(),
                      lambda x: np.zeros((len(x), dim, dim, dim)), name="flat", axes=())


def conformal_c11(c: float = 0.1) -> MetricSpec:
    """``exp(2 phi) I`` on R^2 with ``phi = c x|x|``: C^{1,1}, not C^2 across x = 0."""
    eye = np.eye(2)

    def g(x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return np.exp(2 * c * x[:, 0] * np.abs(x[:, 0]))[:, None, None] * eye

    def dg(x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        e = np.exp(2 * c * x[:, 0] * np.abs(x[:, 0]))
        out = np.zeros((len(x), 2, 2, 2))
        out[:, :, :, 0] = (4 * c * np.abs(x[:, 0]) * e)[:, None, None] * eye
        return out

    return MetricSpec(2, g, dg, name="conformal-c11", axes=(0,), kinks=((0, 0.0),))


def curved_1d() -> MetricSpec:
    """``g(x) = 1 + x^2`` on R."""

    def g(x):
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        return (1.0 + x[:, 0] ** 2)[:, None, None]

    def dg(x):
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        return (2.0 * x[:, 0])[:, None, None, None]

    return MetricSpec(1, g, dg, name="curved-1d")


BUILTIN_METRICS = {"flat": flat, "conformal-c11": conformal_c11, "curved-1d": curved_1d}


def builtin_metric(name: str, **params) -> MetricSpec:
    try:
        return BUILTIN_METRICS[name](**params)
    except KeyError:
        raise RiemannError(f"unknown metric {name!r}; choose from {sorted(BUILTIN_METRICS)}") \
            from None


# --------------------------------------------------------------------------
# regularization
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _AxisRule:
    """Nodes and weights along one axis; rows are points (or a single shared row).

    ``Wg`` / ``Wdg`` give the exact x-derivative of a moving rule:
    ``d/dx sum W0 f(x - z/b) = sum Wdg f'(x - z/b) + sum Wg f(x - z/b)``.
    """

    z: np.ndarray
    W: dict
    Wg: Optional[np.ndarray] = None
    Wdg: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class RegularizedMetric:
    """Per-eps metric ``g_eps = g * psi_b`` evaluated by tensor-product quadrature.

    On kinked axes every evaluation point gets its own rule, split where
    the kink crosses the kernel support; ``g_eps`` is then the (smooth)
    quadrature itself and its derivative is differentiated exactly, rules
    included, so the geodesic equation and speed conservation agree.
    """

    gauge: Gauge
    spec: MetricSpec
    mollifier: Mollifier
    params: EmbeddingParams
    kernel: DiscreteKernel
    min_eigenvalue: GenNum
    split_panels: int = 1  # panels per piece on kinked axes
    order: int = 8

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def b(self) -> np.ndarray:
        return self.params.b.samples

    @cached_property
    def _fixed(self) -> _AxisRule:
        k = self.kernel
        return _AxisRule(k.z[None, :], {0: k.W0[None, :], 1: k.W1[None, :], 2: k.W2[None, :]})

    @cached_property
    def _kinks(self) -> dict:
        out = {}
        for ax, c in self.spec.kinks:
            out.setdefault(ax, []).append(float(c))
        # descending kink values give ascending cuts b (x - c)
        return {ax: np.array(sorted(cs, reverse=True)) for ax, cs in out.items()}

    @lru_cache(maxsize=None)
    def _far_rule(self, cuts):
        return split_kernel(self.mollifier, np.array([cuts]), self.split_panels, self.order)

    def _split_rule(self, xa, b, cs) -> _AxisRule:
        raw = b[:, None] * (xa[:, None] - cs[None, :])
        cuts, slope = saturate_cut(raw, derivative=True)
        near = ~np.all(np.abs(raw) >= 1.0 + CUT_SLACK, axis=1)
        parts = []
        if np.any(near):
            parts.append((near, split_kernel(self.mollifier, cuts[near], self.split_panels,
                                             self.order)))
        far = ~near
        for key in sorted(set(map(tuple, cuts[far]))):
            parts.append((far & np.all(cuts == np.array(key), axis=1), self._far_rule(key)))
        M, r = raw.shape
        Q = parts[0][1].z.shape[-1]
        z, W0, W1, W2 = (np.empty((M, Q)) for _ in range(4))
        dz, dW0 = np.empty((M, r, Q)), np.empty((M, r, Q))
        for rows, ker in parts:
            for tab, arr in ((z, ker.z), (W0, ker.W0), (W1, ker.W1), (W2, ker.W2),
                             (dz, ker.dz), (dW0, ker.dW0)):
                tab[rows] = arr
        # d cut / dx = b * slope; node positions move by dz / b per unit cut
        Wg = b[:, None] * np.einsum("mr,mrq->mq", slope, dW0)
        Wdg = W0 * (1.0 - np.einsum("mr,mrq->mq", slope, dz))
        return _AxisRule(z, {0: W0, 1: W1, 2: W2}, Wg, Wdg)

    def _rules(self, x, b) -> dict:
        out = {}
        for a in self.spec.active_axes:
            cs = self._kinks.get(a)
            out[a] = self._fixed if cs is None else self._split_rule(x[:, a], b, cs)
        return out

    def _prepare(self, k, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        k = np.broadcast_to(np.asarray(k), (x.shape[0],))
        b = self.b[k]
        rules = self._rules(x, b)
        M, d = x.shape
        axes = list(rules)
        cols = []
        for i in range(d):
            shape = [M] + [1] * len(axes)
            if i in rules:
                pos = axes.index(i)
                yi = x[:, i, None] - rules[i].z / b[:, None]
                shape[1 + pos] = yi.shape[1]
                cols.append(np.broadcast_to(yi, (M, yi.shape[1])).reshape(shape))
            else:
                cols.append(x[:, i].reshape(shape))
        grid = np.broadcast_arrays(*cols)
        pts = np.stack([c.reshape(M, -1) for c in grid], axis=-1).reshape(-1, d)
        return pts, b, rules

    @staticmethod
    def _apply(vals, rules, override, M):
        """Tensor-rule sum; ``override[a]`` replaces the axis-a weights (default W0)."""
        w = np.ones((1, 1))
        for a, rule in rules.items():
            wa = override.get(a, rule.W[0])
            w = (w[:, :, None] * wa[:, None, :]).reshape(max(w.shape[0], wa.shape[0]), -1)
        vals = np.asarray(vals, dtype=float)
        vals = vals.reshape((M, -1) + vals.shape[1:])
        if w.shape[0] == 1:
            return np.einsum("mq...,q->m...", vals, w[0])
        return np.einsum("mq...,mq->m...", vals, w)

    def metric_and_derivative(self, k, x):
        """``g_eps`` and its exact x-derivative ``[m, i, j, l]`` from one pass."""
        d = self.dim
        pts, b, rules = self._prepare(k, x)
        M = b.shape[0]
        gv = np.asarray(self.spec.g(pts), dtype=float)
        G = self._apply(gv, rules, {}, M)
        dG = np.zeros(G.shape + (d,))
        if not rules:
            return G, dG
        dgv = None if self.spec.dg is None else np.asarray(self.spec.dg(pts), dtype=float)
        for l, rule in rules.items():
            if rule.Wg is not None:
                dG[..., l] = self._apply(dgv[..., l], rules, {l: rule.Wdg}, M) + \
                    self._apply(gv, rules, {l: rule.Wg}, M)
            elif dgv is not None:
                dG[..., l] = self._apply(dgv[..., l], rules, {}, M)
            else:
                dG[..., l] = self._apply(gv, rules, {l: rule.W[1]}, M) * b[:, None, None]
        return G, dG

    def metric(self, k, x) -> np.ndarray:
        pts, b, rules = self._prepare(k, x)
        return self._apply(self.spec.g(pts), rules, {}, b.shape[0])

    def dmetric(self, k, x) -> np.ndarray:
        return self.metric_and_derivative(k, x)[1]

    def ddmetric(self, k, x) -> np.ndarray:
        """Second derivatives ``[m, i, j, l, q]`` via kernel derivatives (symmetrized)."""
        d = self.dim
        pts, b, rules = self._prepare(k, x)
        M = b.shape[0]
        out = np.zeros((M, d, d, d, d))
        if not rules:
            return out
        gv = np.asarray(self.spec.g(pts), dtype=float)
        dgv = None if self.spec.dg is None else np.asarray(self.spec.dg(pts), dtype=float)
        bb = b[:, None, None]
        act = list(rules)
        for i1, l in enumerate(act):
            for q in act[i1:]:
                if dgv is not None:
                    val = self._apply(dgv[..., l], rules, {q: rules[q].W[1]}, M)
                    if q != l:
                        val = 0.5 * (val + self._apply(dgv[..., q], rules,
                                                       {l: rules[l].W[1]}, M))
                    val = val * bb
                elif q == l:
                    val = self._apply(gv, rules, {l: rules[l].W[2]}, M) * bb ** 2
                else:
                    val = self._apply(gv, rules, {l: rules[l].W[1], q: rules[q].W[1]}, M) * bb ** 2
                out[..., l, q] = val
                out[..., q, l] = val
        return out

    def christoffel(self, k, x) -> np.ndarray:
        """``Gamma[m, c, i, j]`` of the mollified metric."""
        G, dG = self.metric_and_derivative(k, x)
        out = christoffel_symbols(G, dG)
        if not np.all(np.isfinite(out)):
            raise RiemannError("singular metric at evaluation point")
        return out

    def energy_lagrangian(self) -> varcalc.Lagrangian:
        return varcalc.energy(self.gauge, self.dim, self.metric, self.dmetric, self.ddmetric,
                              name=f"energy[{self.spec.name}]")


def regularize_metric(spec: MetricSpec, m: Optional[Mollifier] = None,
                      params: Optional[EmbeddingParams] = None, gauge: Optional[Gauge] = None,
                      panels: int = 2, order: int = 8, split_panels: int = 1
                      ) -> RegularizedMetric:
    """Mollify every component; fails if a tail member is not positive-definite on probes."""
    if m is None:
        m = build_mollifier(MollifierSpec(j=2))
    if params is None:
        if gauge is None:
            raise RiemannError("need embedding parameters or a gauge")
        params = EmbeddingParams.default(gauge)
    gauge = params.gauge
    ker = discrete_kernel(m, panels, order)
    tmp = RegularizedMetric(gauge, spec, m, params, ker, gauge.const(0.0), split_panels, order)
    P = spec.probe_points()
    K = len(gauge)
    kk = np.repeat(np.arange(K), P.shape[0])
    G = tmp.metric(kk, np.tile(P, (K, 1)))
    lam = np.linalg.eigvalsh(0.5 * (G + np.swapaxes(G, 1, 2)))[:, 0].reshape(K, -1).min(axis=1)
    tail = gauge.grid.tail
    if np.any(lam[tail] <= 0):
        bad = [int(k) for k in np.arange(K)[tail] if lam[k] <= 0]
        raise RegularizationError(
            f"mollified metric not positive-definite on probes at grid indices {bad} "
            f"(min eigenvalue {float(lam[tail].min()):.3g})")
    return RegularizedMetric(gauge, spec, m, params, ker, GenNum(gauge, lam), split_panels, order)


# --------------------------------------------------------------------------
# geodesics
# --------------------------------------------------------------------------


def _geo_rhs(Rg, kk, y, d):
    x, v = y[:, :d], y[:, d:]
    G = Rg.christoffel(kk, x)
    return np.concatenate([v, -np.einsum("mcij,mi,mj->mc", G, v, v)], axis=1)


def _rk4_geo(Rg, kk, h, y0, steps, keep=False, box=BOX):
    d = Rg.dim
    y = y0.copy()
    path = [y.copy()] if keep else None
    for _ in range(steps):
        k1 = _geo_rhs(Rg, kk, y, d)
        k2 = _geo_rhs(Rg, kk, y + 0.5 * h[:, None] * k1, d)
        k3 = _geo_rhs(Rg, kk, y + 0.5 * h[:, None] * k2, d)
        k4 = _geo_rhs(Rg, kk, y + h[:, None] * k3, d)
        y = y + (h / 6.0)[:, None] * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y[:, :d])) > box:
            raise GeodesicError("geodesic left the domain box (blow-up)")
        if keep:
            path.append(y.copy())
    return np.stack(path, axis=1) if keep else y


def _as_rows(x, K, d):
    if isinstance(x, GenNum):
        return np.array(x.samples.reshape(K, d), dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape == (K, d):
        return x.copy()
    return np.tile(x.reshape(1, d), (K, 1))


def geodesic_ivp(Rg: RegularizedMetric, p, c0, t_end: float = 1.0, steps: int = STEPS,
                 box: float = BOX) -> varcalc.Trajectory:
    g = Rg.gauge
    K, d = len(g), Rg.dim
    P = _as_rows(p, K, d)
    C = _as_rows(c0, K, d)
    h = np.full(K, t_end / steps)
    path = _rk4_geo(Rg, np.arange(K), h, np.concatenate([P, C], axis=1), steps, True, box)
    dom = IntervalDomain.of(g, 0.0, t_end)
    tr = varcalc.Trajectory(g, dom, varcalc.time_grid(dom, steps + 1), path[:, :, :d],
                            path[:, :, d:])
    tr.info["residual"] = geodesic_residual(Rg, tr)
    return tr


def geodesic_residual(Rg: RegularizedMetric, y: varcalc.Trajectory) -> np.ndarray:
    """Per-eps max of ``|y'' + Gamma(y)(y', y')|`` with y'' by finite differences."""
    kk, t, x, v = y.flat()
    G = Rg.christoffel(kk, x)
    acc = quadrature.fd_time_derivative(y.du, y.t)
    r = acc + np.einsum("mcij,mi,mj->mc", G, v, v).reshape(acc.shape)
    return np.abs(r).reshape(len(Rg.gauge), -1).max(axis=1)


def speed_drift(Rg: RegularizedMetric, y: varcalc.Trajectory) -> GenNum:
    """``max_t |g(y', y') - g(y', y')(0)|`` per eps."""
    kk, t, x, v = y.flat()
    s = np.einsum("mi,mij,mj->m", v, Rg.metric(kk, x), v).reshape(y.t.shape)
    return GenNum(Rg.gauge, np.abs(s - s[:, :1]).max(axis=1))


@dataclass(frozen=True, eq=False)
class GeodesicResult:
    y: varcalc.Trajectory
    c0: np.ndarray
    length: GenNum
    speed_drift: GenNum
    residual: np.ndarray
    iterations: int
    info: dict = field(default_factory=dict)


def _shooting(Rg, P, Q, steps, tol, max_iter, c, Jac=None):
    """Chord-Newton shooting; the Jacobian is refreshed only when progress stalls."""
    K, d = P.shape
    k0 = np.arange(K)
    h = np.full(K, 1.0 / steps)

    def base(C):
        path = _rk4_geo(Rg, k0, h, np.concatenate([P, C], axis=1), steps, keep=True)
        return path[:, -1, :d] - Q, path

    def jacobian(C):
        dc = 1e-7 * (1.0 + np.abs(C))
        V = np.concatenate([C + dc[:, j:j + 1] * np.eye(d)[j] for j in range(d)])
        y0 = np.concatenate([np.tile(P, (d, 1)), V], axis=1)
        yb = _rk4_geo(Rg, np.tile(k0, d), np.tile(h, d), y0, steps)[:, :d].reshape(d, K, d)
        return yb, dc

    scale = 1.0 + np.abs(Q).max(axis=1)
    res, path = base(c)
    it = 0
    fresh = False
    while np.any(np.abs(res).max(axis=1) >= tol * scale):
        if it >= max_iter:
            diag = "; ".join(f"k={k}: |y(1)-q| = {np.abs(res[k]).max():.3g}"
                             for k in range(K) if np.abs(res[k]).max() >= tol * scale[k])
            raise GeodesicError(f"Newton failed after {max_iter} iterations ({diag})")
        if Jac is None:
            yb, dc = jacobian(c)
            Jac = np.stack([(yb[j] - (res + Q)) / dc[:, j:j + 1] for j in range(d)], axis=2)
            fresh = True
        sv = np.linalg.svd(Jac, compute_uv=False)[:, -1]
        if np.any(~np.isfinite(sv) | (sv < 1e-12)):
            raise GeodesicError("shooting Jacobian singular")
        step = np.linalg.solve(Jac, -res[..., None])[..., 0]
        old = np.abs(res).max(axis=1)
        lam = 1.0
        for _ in range(12):
            try:
                rn, pn = base(c + lam * step)
            except GeodesicError:
                lam *= 0.5
                continue
            if np.all(np.abs(rn).max(axis=1) <= np.maximum(0.5 * old, tol * scale)):
                break
            if not fresh:
                break  # stale Jacobian: refresh before shrinking the step
            lam *= 0.5
        else:
            raise GeodesicError("line search failed in geodesic shooting")
        improved = np.all(np.abs(rn).max(axis=1) <= np.maximum(0.5 * old, tol * scale))
        if improved:
            c = c + lam * step
            res, path = rn, pn
            fresh = False
        else:
            Jac = None
        it += 1
    return c, path, Jac, it


def geodesic_bvp(Rg: RegularizedMetric, p, q, steps: int = STEPS, tol: float = NEWTON_TOL,
                 max_iter: int = NEWTON_MAXIT) -> GeodesicResult:
    """Shooting on ``y'(0)`` for ``y(0) = p``, ``y(1) = q``, all eps in one batch.

    A pass at a quarter of the steps supplies the starting velocity and
    Jacobian for the full-resolution chord iteration.
    """
    g = Rg.gauge
    K, d = len(g), Rg.dim
    P = _as_rows(p, K, d)
    Q = _as_rows(q, K, d)
    c = Q - P
    Jac = None
    it0 = 0
    if steps >= 200:
        c, _, Jac, it0 = _shooting(Rg, P, Q, steps // 4, tol, max_iter, c)
    c, path, _, it = _shooting(Rg, P, Q, steps, tol, max_iter, c, Jac)
    dom = IntervalDomain.of(g, 0.0, 1.0)
    y = varcalc.Trajectory(g, dom, varcalc.time_grid(dom, steps + 1), path[:, :, :d],
                           path[:, :, d:])
    y.info["residual"] = geodesic_residual(Rg, y)
    L = length(Rg, y) if np.any(c != 0) else GenNum(g, np.zeros(K))
    return GeodesicResult(y, c, L, speed_drift(Rg, y), y.info["residual"], it0 + it,
                          {"coarse_iterations": it0})


def length(Rg: RegularizedMetric, lam: varcalc.Trajectory) -> GenNum:
    """``int sqrt(g(lam', lam'))`` per eps; the velocity must not degenerate."""
    kk, t, x, v = lam.flat()
    Gm = Rg.metric(kk, x)
    quad_form = np.einsum("mi,mij,mj->m", v, Gm, v).reshape(lam.t.shape)
    mins = GenNum(Rg.gauge, quad_form.min(axis=1))
    if gen_lt(Rg.gauge.const(0.0), mins) is not True:
        raise GeodesicError("degenerate velocity: g(lam', lam') is not strictly positive")
    return GenNum(Rg.gauge, quadrature.integrate_samples(np.sqrt(quad_form), lam.t))


@dataclass(frozen=True)
class StandardLength:
    value: float
    oracle_length: Optional[float] = None

    @property
    def oracle_gap(self) -> Optional[float]:
        if self.oracle_length is None:
            return None
        return abs(self.value - self.oracle_length)


def standard_length(res: GeodesicResult, oracle: Optional["ClassicalGeodesic"] = None
                    ) -> StandardLength:
    """Standard part of the generalized length (raises when it does not exist)."""
    rep = standard_part_report(res.length)
    return StandardLength(rep.value, None if oracle is None else oracle.length)


def minimality_report(Rg: RegularizedMetric, res: GeodesicResult) -> varcalc.MinimizerReport:
    return varcalc.minimizer_report(Rg.energy_lagrangian(), res.y)


def geodesic_to_csv(res: GeodesicResult) -> str:
    return res.y.to_csv()


def lengths_to_csv(res: GeodesicResult) -> str:
    return res.length.to_csv("length")


# --------------------------------------------------------------------------
# classical oracle
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClassicalGeodesic:
    t: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    c0: np.ndarray
    length: float

    def at(self, t) -> np.ndarray:
        return quadrature.hermite_eval(self.t, self.y, self.dy, np.asarray(t, dtype=float))

    def to_csv(self) -> str:
        d = self.y.shape[1]
        buf = io.StringIO()
        buf.write(",".join(["t"] + [f"y{i}" for i in range(d)] + [f"dy{i}" for i in range(d)])
                  + "\n")
        for n in range(self.t.size):
            row = [self.t[n]] + list(self.y[n]) + list(self.dy[n])
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, spec: MetricSpec) -> "ClassicalGeodesic":
        rows = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
        d = (rows.shape[1] - 1) // 2
        t, y, dy = rows[:, 0], rows[:, 1:1 + d], rows[:, 1 + d:]
        return cls(t, y, dy, dy[0], _classical_length(spec, t, y, dy))


def _classical_length(spec, t, y, dy):
    q = np.einsum("mi,mij,mj->m", dy, np.asarray(spec.g(y), float), dy)
    return float(quadrature.integrate_samples(np.sqrt(q), t))


def classical_geodesic(spec: MetricSpec, p, q, samples: int = 10001, rtol: float = 1e-12,
                       atol: float = 1e-13) -> ClassicalGeodesic:
    """Shooting with adaptive DOP853 on the exact Christoffel symbols."""
    d = spec.dim
    p = np.asarray(p, dtype=float).reshape(d)
    q = np.asarray(q, dtype=float).reshape(d)
    t_eval = np.linspace(0.0, 1.0, samples)

    def rhs(_, y):
        G = spec.christoffel(y[None, :d])[0]
        return np.concatenate([y[d:], -np.einsum("cij,i,j->c", G, y[d:], y[d:])])

    def end(c, dense=False):
        sol = solve_ivp(rhs, (0.0, 1.0), np.concatenate([p, c]), method="DOP853",
                        rtol=rtol, atol=atol, t_eval=t_eval if dense else None)
        if not sol.success:
            raise GeodesicError(f"classical solve failed: {sol.message}")
        return sol

    c = q - p
    for _ in range(NEWTON_MAXIT):
        r = end(c).y[:d, -1] - q
        if np.max(np.abs(r)) < 1e-11:
            break
        J = np.empty((d, d))
        for j in range(d):
            dc = 1e-6 * (1 + abs(c[j]))
            cp = c.copy()
            cp[j] += dc
            cm = c.copy()
            cm[j] -= dc
            J[:, j] = (end(cp).y[:d, -1] - end(cm).y[:d, -1]) / (2 * dc)
        c = c - np.linalg.solve(J, r)
    else:
        raise GeodesicError("classical shooting did not converge")
    sol = end(c, dense=True)
    y, dy = sol.y[:d].T, sol.y[d:].T
    return ClassicalGeodesic(t_eval, y, dy, c, _classical_length(spec, t_eval, y, dy))


def c0_error(res: GeodesicResult, oracle: ClassicalGeodesic) -> np.ndarray:
    """Per-eps ``max_t |y_eps(t) - u(t)|``."""
    K = res.y.t.shape[0]
    out = np.empty(K)
    for k in range(K):
        out[k] = np.max(np.abs(res.y.u[k] - oracle.at(res.y.t[k])))
    return out


def c1_error(res: GeodesicResult, oracle: ClassicalGeodesic) -> np.ndarray:
    K = res.y.t.shape[0]
    acc = np.gradient(oracle.dy, oracle.t, axis=0)
    out = np.empty(K)
    for k in range(K):
        dy = quadrature.hermite_eval(oracle.t, oracle.dy, acc, res.y.t[k])
        out[k] = np.max(np.abs(res.y.du[k] - dy))
    return out


__all__ = [
    "MetricSpec", "flat", "conformal_c11", "curved_1d", "builtin_metric", "BUILTIN_METRICS",
    "RegularizedMetric", "regularize_metric", "geodesic_ivp", "geodesic_bvp", "GeodesicResult",
    "geodesic_residual", "speed_drift", "length", "standard_length", "StandardLength",
    "minimality_report", "ClassicalGeodesic", "classical_geodesic", "c0_error", "c1_error",
    "geodesic_to_csv", "lengths_to_csv", "RiemannError", "RegularizationError", "GeodesicError",
]
