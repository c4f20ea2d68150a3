"""Generalized numbers as sampled eps-nets relative to a gauge.

A generalized number is stored as its representative net evaluated on a
finite, strictly decreasing grid of eps values.  Arithmetic is exact and
samplewise.  Everything asymptotic (moderateness, negligibility, order,
standard part, valuation) is a tail-of-grid estimate: a finite grid cannot
witness "for eps small", so verdicts carry a fit residual.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

M_MAX = 8
"""Negligibility test panel: exponents 1..M_MAX."""

ORDER_SLACK = 0.5
M_SLACK = M_MAX


class GaugeError(ValueError):
    pass


class GaugeMismatchError(GaugeError):
    pass


class NotStrictlyPositiveError(ValueError):
    pass


class NoStandardPartError(ValueError):
    pass


# --------------------------------------------------------------------------
# grid and gauge
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EpsGrid:
    """Strictly decreasing eps values in (0, 1]."""

    eps: np.ndarray

    def __post_init__(self):
        eps = np.array(self.eps, dtype=float)
        eps.setflags(write=False)
        if eps.ndim != 1 or eps.size < 8:
            raise GaugeError("an eps grid needs at least 8 points")
        if not np.all((eps > 0) & (eps <= 1)):
            raise GaugeError("eps values must lie in (0, 1]")
        if not np.all(np.diff(eps) < 0):
            raise GaugeError("eps values must be strictly decreasing")
        object.__setattr__(self, "eps", eps)

    @classmethod
    def geometric(cls, levels: int = 20, eps0: float = 0.5, ratio: float = 0.5) -> "EpsGrid":
        """``eps_k = eps0 * ratio**k`` for k = 0..levels-1 (default 2^-1..2^-20)."""
        return cls(eps0 * ratio ** np.arange(levels))

    def __len__(self):
        return self.eps.size

    @property
    def tail(self) -> slice:
        """Index range used by all asymptotic fits: the last half of the grid."""
        return slice(len(self) - len(self) // 2, None)

    def same_as(self, other: "EpsGrid") -> bool:
        return self is other or (
            len(self) == len(other) and np.array_equal(self.eps, other.eps)
        )


@dataclass(frozen=True, eq=False)
class Gauge:
    """A gauge net rho on a grid, stored through ``log rho``."""

    grid: EpsGrid
    log_rho: np.ndarray
    kind: str = "table"

    def __post_init__(self):
        lr = np.array(self.log_rho, dtype=float)
        if lr.shape != (len(self.grid),):
            raise GaugeError("gauge table length differs from the grid")
        if not np.all(np.isfinite(lr)):
            raise GaugeError("gauge values must be positive and finite")
        if np.any(np.diff(lr) > 0):
            raise GaugeError("gauge must be non-increasing along the grid")
        if lr[-1] >= lr[0]:
            raise GaugeError("gauge must decrease towards 0 along the grid")
        lr.setflags(write=False)
        object.__setattr__(self, "log_rho", lr)

    @property
    def eps(self) -> np.ndarray:
        return self.grid.eps

    @property
    def rho(self) -> np.ndarray:
        # may underflow to 0 for very fast gauges; use log_rho for asymptotics
        return np.exp(self.log_rho)

    def __len__(self):
        return len(self.grid)

    def compatible(self, other: "Gauge") -> bool:
        return self is other or (
            self.grid.same_as(other.grid) and np.array_equal(self.log_rho, other.log_rho)
        )

    # convenience constructors for generalized numbers on this gauge
    def number(self, samples) -> "GenNum":
        return GenNum(self, samples)

    def const(self, value) -> "GenNum":
        value = np.asarray(value, dtype=float)
        return GenNum(self, np.broadcast_to(value, (len(self),) + value.shape))

    def from_eps(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GenNum":
        """Build ``[fn(eps)]``; ``fn`` is applied to the whole eps array."""
        with np.errstate(over="ignore", under="ignore"):
            return GenNum(self, fn(self.eps))

    def rho_power(self, p: float) -> "GenNum":
        with np.errstate(over="ignore", under="ignore"):
            return GenNum(self, np.exp(p * self.log_rho))

    def drho(self) -> "GenNum":
        return self.rho_power(1.0)


def make_gauge(grid: Optional[EpsGrid] = None, kind: str = "identity", *, p: float = 1.0,
               table: Optional[Sequence[float]] = None) -> Gauge:
    """Gauge of a given kind on ``grid``.

    kind: ``identity`` (rho = eps), ``power`` (rho = eps**p), ``exp``
    (rho = exp(-1/eps)) or ``table`` (explicit positive values).
    """
    grid = EpsGrid.geometric() if grid is None else grid
    eps = grid.eps
    if kind == "identity":
        log_rho = np.log(eps)
    elif kind == "power":
        if not p > 0:
            raise GaugeError("power gauge needs p > 0")
        log_rho = p * np.log(eps)
    elif kind == "exp":
        log_rho = -1.0 / eps
    elif kind == "table":
        if table is None:
            raise GaugeError("table gauge needs explicit values")
        vals = np.asarray(table, dtype=float)
        if vals.shape != eps.shape or not np.all(vals > 0) or not np.all(np.isfinite(vals)):
            raise GaugeError("gauge table must hold one positive value per grid point")
        if np.any(np.diff(vals) > 0):
            raise GaugeError("gauge table must be non-increasing")
        log_rho = np.log(vals)
    else:
        raise GaugeError(f"unknown gauge kind {kind!r}")
    return Gauge(grid, log_rho, kind)


# --------------------------------------------------------------------------
# generalized numbers
# --------------------------------------------------------------------------


def _samples_of(other, gauge):
    if isinstance(other, GenNum):
        if not gauge.compatible(other.gauge):
            raise GaugeMismatchError("generalized numbers live on different gauges")
        return other.samples
    return np.asarray(other, dtype=float)


@dataclass(frozen=True, eq=False)
class GenNum:
    """A generalized number ``[x_eps]`` sampled on the gauge's grid.

    ``samples`` has shape ``(K,)`` for scalars or ``(K, ...)`` for vectors
    and matrices; the first axis always runs over the eps grid.
    """

    gauge: Gauge
    samples: np.ndarray = field(repr=False)

    __array_priority__ = 100

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 0 or s.shape[0] != len(self.gauge):
            raise GaugeError("sample count must equal grid length")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def shape(self):
        return self.samples.shape[1:]

    def __len__(self):
        return self.samples.shape[0]

    def __getitem__(self, idx) -> "GenNum":
        """Component access (the eps axis is kept)."""
        if not isinstance(idx, tuple):
            idx = (idx,)
        return GenNum(self.gauge, self.samples[(slice(None),) + idx])

    def _wrap(self, values):
        return GenNum(self.gauge, values)

    def _bcast(self, other):
        o = _samples_of(other, self.gauge)
        if isinstance(other, GenNum):
            extra = self.samples.ndim - o.ndim
            if extra > 0:
                o = o.reshape(o.shape + (1,) * extra)
            return o
        return o

    def _lhs(self, o):
        s = self.samples
        if o.ndim > s.ndim and o.shape[0] == s.shape[0]:
            s = s.reshape(s.shape + (1,) * (o.ndim - s.ndim))
        return s

    def __add__(self, other):
        o = self._bcast(other)
        return self._wrap(self._lhs(o) + o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._bcast(other)
        return self._wrap(self._lhs(o) - o)

    def __rsub__(self, other):
        o = self._bcast(other)
        return self._wrap(o - self._lhs(o))

    def __mul__(self, other):
        o = self._bcast(other)
        return self._wrap(self._lhs(o) * o)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._bcast(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._wrap(self._lhs(o) / o)

    def __rtruediv__(self, other):
        o = self._bcast(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._wrap(o / self._lhs(o))

    def __neg__(self):
        return self._wrap(-self.samples)

    def __pos__(self):
        return self

    def __abs__(self):
        return self._wrap(np.abs(self.samples))

    def __pow__(self, p):
        with np.errstate(over="ignore", invalid="ignore"):
            return self._wrap(self.samples ** p)

    def apply(self, fn) -> "GenNum":
        """Samplewise image under a real function."""
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            return self._wrap(fn(self.samples))

    def tail_samples(self) -> np.ndarray:
        return self.samples[self.gauge.grid.tail]

    def to_csv(self, header: str = "value") -> str:
        return to_csv(self, header)

    def __repr__(self):
        with np.printoptions(precision=4, threshold=6, edgeitems=2):
            return f"GenNum({self.samples!r})"


# --------------------------------------------------------------------------
# asymptotics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticReport:
    estimated_order: float
    fit_residual: float
    verdict: str  # "moderate", "negligible" or "neither"
    N: Optional[int] = None

    @property
    def is_moderate(self) -> bool:
        return self.verdict in ("moderate", "negligible")

    def __str__(self):
        if self.verdict == "moderate":
            return f"moderate({self.N})"
        return self.verdict


def _bounded_above(q: np.ndarray, tol: float = 1e-9) -> bool:
    """Finite-tail proxy for ``q_eps = O(1)`` from above.

    The bound is fitted on the first half of the tail (C = its maximum) and
    must keep holding on the second half.
    """
    n = q.size
    if n < 2:
        return True
    h = n // 2
    c = np.max(q[:h])
    return bool(np.max(q[h:]) <= c + tol * (1.0 + abs(c)))


def _tail_logs(x: GenNum):
    t = x.gauge.grid.tail
    s = x.samples[t]
    mag = np.abs(s).reshape(s.shape[0], -1).max(axis=1) if s.ndim > 1 else np.abs(s)
    return mag, x.gauge.log_rho[t]


def classify(x: GenNum, m_max: int = M_MAX, slack: float = ORDER_SLACK) -> AsymptoticReport:
    """Classify a net as negligible, moderate(N) or neither.

    Vector-valued nets are classified through their max-norm.
    """
    mag, lr = _tail_logs(x)
    if not np.all(np.isfinite(mag)):
        return AsymptoticReport(-math.inf, math.nan, "neither")
    nonzero = mag > 0
    if np.count_nonzero(~nonzero) > mag.size / 2:
        return AsymptoticReport(math.inf, 0.0, "negligible")
    L = np.log(mag[nonzero])
    R = lr[nonzero]
    if L.size >= 2:
        slope, intercept = np.polyfit(R, L, 1)
        resid = float(np.sqrt(np.mean((L - (slope * R + intercept)) ** 2)))
    else:
        slope, resid = 0.0, math.nan
    slope = float(slope)
    if all(_bounded_above(L - m * R) for m in range(1, m_max + 1)):
        return AsymptoticReport(slope, resid, "negligible")
    N = max(0, math.ceil(-slope - 1e-6))
    if not _bounded_above(L + (N + slack) * R):
        return AsymptoticReport(slope, resid, "neither")
    # a whole-tail fit can absorb a steepening net (e^{1/eps} on a coarse tail); if the
    # first half alone needs a much lower order, that order must keep holding
    h = L.size // 2
    if h >= 2:
        N1 = max(0, math.ceil(-float(np.polyfit(R[:h], L[:h], 1)[0]) - 1e-6))
        if N - N1 >= 2 and not _bounded_above(L + (N1 + 1 + slack) * R):
            return AsymptoticReport(slope, resid, "neither")
    return AsymptoticReport(slope, resid, "moderate", N)


def _check(x: GenNum, y: GenNum):
    if not isinstance(x, GenNum) or not isinstance(y, GenNum):
        raise TypeError("expected generalized numbers")
    if not x.gauge.compatible(y.gauge):
        raise GaugeMismatchError("generalized numbers live on different gauges")


def gen_eq(x: GenNum, y: GenNum, rtol: float = 0.0, atol: float = 0.0) -> bool:
    """Equality in the ring: the difference of representatives is negligible.

    With ``rtol``/``atol`` set, samples whose difference is within
    ``atol + rtol * max(|x|, |y|)`` count as zero, which absorbs the
    rounding floor of computed values.
    """
    _check(x, y)
    d = x.samples - y.samples
    if rtol or atol:
        scale = np.maximum(np.abs(x.samples), np.abs(y.samples))
        d = np.where(np.abs(d) <= atol + rtol * scale, 0.0, d)
    return classify(GenNum(x.gauge, d)).verdict == "negligible"


def gen_le(x: GenNum, y: GenNum, m_slack: int = M_SLACK) -> Optional[bool]:
    """``x <= y``: True, False, or None when the tail does not decide."""
    _check(x, y)
    tail = x.gauge.grid.tail
    d = (y.samples - x.samples)[tail]
    slack = np.exp(m_slack * x.gauge.log_rho[tail])
    if d.ndim > 1:
        raise ValueError("order is defined for scalar generalized numbers")
    if np.all(d >= -slack):
        return True
    if np.all(d < -slack):
        return False
    return None


def order_witness(x: GenNum, y: GenNum, m_max: int = M_MAX) -> Optional[int]:
    """Smallest m <= m_max with ``y_eps - x_eps > rho_eps**m`` on the tail."""
    _check(x, y)
    tail = x.gauge.grid.tail
    d = (y.samples - x.samples)[tail]
    lr = x.gauge.log_rho[tail]
    for m in range(1, m_max + 1):
        if np.all(d > np.exp(m * lr)):
            return m
    return None


def gen_lt(x: GenNum, y: GenNum, m_max: int = M_MAX) -> Optional[bool]:
    """Strict order ``x < y`` (invertible positive difference)."""
    if order_witness(x, y, m_max) is not None:
        return True
    tail = x.gauge.grid.tail
    d = (y.samples - x.samples)[tail]
    if np.all(d <= np.exp(m_max * x.gauge.log_rho[tail])):
        return False
    return None


def gen_min(x: GenNum, y: GenNum) -> GenNum:
    _check(x, y)
    return GenNum(x.gauge, np.minimum(x.samples, y.samples))


def gen_max(x: GenNum, y: GenNum) -> GenNum:
    _check(x, y)
    return GenNum(x.gauge, np.maximum(x.samples, y.samples))


def gen_abs(x: GenNum) -> GenNum:
    return abs(x)


def gen_sqrt(x: GenNum) -> GenNum:
    zero = x.gauge.const(0.0)
    if gen_lt(zero, x) is not True:
        raise NotStrictlyPositiveError("not strictly positive")
    return GenNum(x.gauge, np.sqrt(x.samples))


# --------------------------------------------------------------------------
# standard part and valuation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardPart:
    value: float
    last_difference: float
    rate: Optional[float]
    extrapolated: bool


def standard_part_report(x: GenNum, n_last: int = 5) -> StandardPart:
    s = np.asarray(x.samples, dtype=float)
    if s.ndim != 1:
        raise ValueError("standard_part expects a scalar generalized number")
    s = s[-n_last:]
    eps = x.gauge.eps[-n_last:]
    if not np.all(np.isfinite(s)):
        raise NoStandardPartError("no standard part: non-finite samples")
    d = np.diff(s)
    # differences within a few ulp are rounding, not a trend
    floor = 8 * np.finfo(float).eps * np.max(np.abs(s))
    d = np.where(np.abs(d) <= floor, 0.0, d)
    ad = np.abs(d)
    last = s[-1]
    if np.all(ad == 0):
        return StandardPart(float(last), 0.0, None, False)
    # rate exponents p with |d| ~ eps**p, from consecutive pairs
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log(ad[1:] / ad[:-1]) / np.log(eps[2:] / eps[1:-1])
    stabilized = bool(np.all(np.diff(ad) <= 0) and ad[-1] < 1e-6 * (1 + abs(last)))
    ratio = d[-1] / d[-2] if d[-2] != 0 else np.nan
    consistent = bool(
        np.all(np.isfinite(rates)) and np.all(rates > 0) and np.all(d[1:] * d[:-1] > 0)
        and 0 < ratio < 1
    )
    if consistent:
        # Aitken / Richardson for geometric differences on a geometric grid
        value = last + d[-1] * ratio / (1 - ratio)
        if not stabilized or abs(value - last) <= 10 * ad[-1]:
            return StandardPart(float(value), float(ad[-1]), float(rates[-1]), True)
    if stabilized:
        return StandardPart(float(last), float(ad[-1]), None, False)
    raise NoStandardPartError("no standard part: samples do not stabilize on the grid tail")


def standard_part(x: GenNum) -> float:
    """Extrapolated ``lim_{eps->0} x_eps``; raises when the tail does not settle."""
    return standard_part_report(x).value


@dataclass(frozen=True)
class Valuation:
    nu: float
    e_norm: float
    drho_of: GenNum


def valuation(x: GenNum) -> Valuation:
    """Valuation, e-norm ``exp(-nu)`` and ``[rho**nu]`` of a generalized number."""
    rep = classify(x)
    if rep.verdict == "negligible":
        return Valuation(math.inf, 0.0, x.gauge.const(0.0))
    nu = rep.estimated_order
    if abs(nu - round(nu)) < 1e-9:
        nu = float(round(nu))
    return Valuation(nu, math.exp(-nu), x.gauge.rho_power(nu))


# --------------------------------------------------------------------------
# csv
# --------------------------------------------------------------------------


def to_csv(x: GenNum, header="value") -> str:
    """One row per grid point: ``k, eps, rho, value...``."""
    vals = x.samples.reshape(len(x), -1)
    if isinstance(header, str):
        cols = [header] if vals.shape[1] == 1 else [f"{header}_{i}" for i in range(vals.shape[1])]
    else:
        cols = list(header)
    buf = io.StringIO()
    buf.write(",".join(["k", "eps", "rho"] + cols) + "\n")
    for k in range(len(x)):
        row = [str(k), repr(float(x.gauge.eps[k])), repr(float(x.gauge.rho[k]))]
        row += [repr(float(v)) for v in vals[k]]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def gauge_to_csv(g: Gauge) -> str:
    buf = io.StringIO()
    buf.write("k,eps,rho,log_rho\n")
    for k in range(len(g)):
        buf.write(f"{k},{float(g.eps[k])!r},{float(g.rho[k])!r},{float(g.log_rho[k])!r}\n")
    return buf.getvalue()


def from_csv(text: str, gauge: Optional[Gauge] = None) -> GenNum:
    """Inverse of :func:`to_csv`.  Without ``gauge`` a table gauge is rebuilt."""
    lines = [ln for ln in text.strip().splitlines() if ln]
    rows = [ln.split(",") for ln in lines[1:]]
    eps = np.array([float(r[1]) for r in rows])
    rho = np.array([float(r[2]) for r in rows])
    vals = np.array([[float(v) for v in r[3:]] for r in rows])
    if gauge is None:
        gauge = make_gauge(EpsGrid(eps), "table", table=rho)
    if vals.shape[1] == 1:
        vals = vals[:, 0]
    return GenNum(gauge, vals)
