"""Composite Gauss-Legendre quadrature and uniform-grid rules."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

GL_ORDER = 16
PANELS = 64
PANEL_CAP = 4096
RTOL = 1e-10


@lru_cache(maxsize=None)
def gauss_legendre(n: int = GL_ORDER):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_nodes(edges, n: int = GL_ORDER):
    """Nodes and weights of an n-point rule on every panel ``[e_i, e_{i+1}]``."""
    x, w = gauss_legendre(n)
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + hi) * 0.5 + half * x[None, :]
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def _split_edges(a, b, breakpoints, panels):
    pts = [a]
    for p in sorted(set(float(p) for p in breakpoints)):
        if a < p < b:
            pts.append(p)
    pts.append(b)
    return np.concatenate(
        [np.linspace(pts[i], pts[i + 1], panels + 1)[:-1] for i in range(len(pts) - 1)]
        + [np.array([b])]
    )


def _rule(fn, a, b, breakpoints, panels, n):
    nodes, weights = panel_nodes(_split_edges(a, b, breakpoints, panels), n)
    vals = np.asarray(fn(nodes), dtype=float)
    return np.tensordot(weights, vals, axes=(0, 0))


@dataclass(frozen=True)
class QuadResult:
    value: np.ndarray
    panels: int
    converged: bool


def integrate_adaptive(fn, a: float, b: float, breakpoints=(), rtol: float = RTOL,
                       panels: int = PANELS, cap: int = PANEL_CAP, n: int = GL_ORDER,
                       atol: float = 0.0) -> QuadResult:
    """Integrate ``fn`` over [a, b], doubling panels until two passes agree.

    ``fn`` maps a 1-D array of nodes to values of shape ``(nodes, ...)``.
    Each breakpoint strictly inside (a, b) starts its own block of panels,
    so features narrower than a panel are not missed.
    """
    if a == b:
        probe = np.asarray(fn(np.array([a])), dtype=float)
        return QuadResult(np.zeros(probe.shape[1:]), 0, True)
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    prev = _rule(fn, a, b, breakpoints, panels, n)
    p = panels
    while p < cap:
        p *= 2
        cur = _rule(fn, a, b, breakpoints, p, n)
        scale = max(float(np.max(np.abs(cur))) if np.size(cur) else 0.0, 1e-300)
        if np.max(np.abs(cur - prev)) <= max(rtol * scale, atol):
            return QuadResult(sign * cur, p, True)
        prev = cur
    return QuadResult(sign * prev, p, False)


def integrate(fn, a, b, breakpoints=(), **kw):
    return integrate_adaptive(fn, a, b, breakpoints, **kw).value


# --- uniform grids --------------------------------------------------------


@lru_cache(maxsize=64)
def _uniform_weights(N: int):
    if N < 2:
        raise ValueError("need at least two nodes")
    if N == 2:
        return np.array([0.5, 0.5])
    if N == 3:
        return np.array([1.0, 4.0, 1.0]) / 3.0
    if N == 4:
        return np.array([3.0, 9.0, 9.0, 3.0]) / 8.0
    w = np.zeros(N)
    m = N if N % 2 == 1 else N - 3
    w[:m:2] += 2.0 / 3.0
    w[1:m:2] += 4.0 / 3.0
    w[0] -= 1.0 / 3.0
    w[m - 1] -= 1.0 / 3.0
    if m < N:
        w[m - 1:] += np.array([3.0, 9.0, 9.0, 3.0]) / 8.0
    w.setflags(write=False)
    return w


def uniform_weights(N: int, h: float) -> np.ndarray:
    """Composite Simpson weights (3/8 rule on the last panel when N is even)."""
    return h * _uniform_weights(N)


def integrate_samples(values, t) -> np.ndarray:
    """Integrate samples on uniform grids.

    ``t`` has shape ``batch + (N,)`` and ``values`` has shape
    ``batch + (N,) + extra``.
    """
    t = np.asarray(t, dtype=float)
    y = np.moveaxis(np.asarray(values, dtype=float), t.ndim - 1, -1)
    N = t.shape[-1]
    h = (t[..., -1] - t[..., 0]) / (N - 1)
    s = y @ _uniform_weights(N)
    return s * np.reshape(h, np.shape(h) + (1,) * (s.ndim - np.ndim(h)))


_FWD0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_FWD1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def fd_time_derivative(values, t) -> np.ndarray:
    """Fourth-order finite differences along the time axis of uniform grids.

    Five-point centered stencil inside, one-sided five-point stencils on the
    two nodes at each end.  Shapes as in :func:`integrate_samples`.
    """
    t = np.asarray(t, dtype=float)
    ax = t.ndim - 1
    N = t.shape[-1]
    if N < 5:
        raise ValueError("need at least five nodes")
    y = np.moveaxis(np.asarray(values, dtype=float), ax, -1)
    d = np.empty_like(y)
    d[..., 2:-2] = (y[..., :-4] - 8 * y[..., 1:-3] + 8 * y[..., 3:-1] - y[..., 4:]) / 12.0
    d[..., 0] = y[..., :5] @ _FWD0
    d[..., 1] = y[..., :5] @ _FWD1
    back = y[..., -5:][..., ::-1]
    d[..., -1] = -(back @ _FWD0)
    d[..., -2] = -(back @ _FWD1)
    h = (t[..., -1] - t[..., 0]) / (N - 1)
    d /= np.reshape(h, np.shape(h) + (1,) * (d.ndim - np.ndim(h)))
    return np.moveaxis(d, -1, ax)


def hermite_eval(t, y, dy, tq):
    """Cubic Hermite interpolation of samples ``y`` with slopes ``dy`` at ``tq``.

    ``t`` is a 1-D increasing grid; ``y``/``dy`` have the time axis first.
    """
    t = np.asarray(t, dtype=float)
    tq = np.asarray(tq, dtype=float)
    i = np.clip(np.searchsorted(t, tq, side="right") - 1, 0, t.size - 2)
    h = t[i + 1] - t[i]
    s = (tq - t[i]) / h
    shape = (-1,) + (1,) * (np.ndim(y) - 1)
    s = s.reshape(shape)
    h = h.reshape(shape)
    s2, s3 = s * s, s * s * s
    return ((2 * s3 - 3 * s2 + 1) * y[i] + (s3 - 2 * s2 + s) * h * dy[i]
            + (-2 * s3 + 3 * s2) * y[i + 1] + (s3 - s2) * h * dy[i + 1])
