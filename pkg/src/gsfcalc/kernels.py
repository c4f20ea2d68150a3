"""Hot inner loops, each with a numba and a numpy implementation.

The public names dispatch on :data:`gsfcalc._accel.USE_NUMBA`; the
``*_numba`` / ``*_numpy`` variants are exported for tests and benchmarks.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "rk4_linear",
    "christoffel_symbols",
    "hermite_det_roots",
    "USE_NUMBA",
]


# --- RK4 for y' = M(t) y with M tabulated at half steps -------------------


def _rk4_linear_py(M_half, Y0, h):
    B, n2, n, _ = M_half.shape
    S = (n2 - 1) // 2
    c = Y0.shape[2]
    out = np.empty((B, S + 1, n, c))
    for b in range(B):
        Y = Y0[b].copy()
        out[b, 0] = Y
        for s in range(S):
            A0 = M_half[b, 2 * s]
            A1 = M_half[b, 2 * s + 1]
            A2 = M_half[b, 2 * s + 2]
            k1 = A0 @ Y
            k2 = A1 @ (Y + 0.5 * h * k1)
            k3 = A1 @ (Y + 0.5 * h * k2)
            k4 = A2 @ (Y + h * k3)
            Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[b, s + 1] = Y
    return out


_rk4_linear_jit = njit(_rk4_linear_py)


def rk4_linear_numba(M_half, Y0, h):
    return _rk4_linear_jit(
        np.ascontiguousarray(M_half, dtype=np.float64),
        np.ascontiguousarray(Y0, dtype=np.float64),
        float(h),
    )


def rk4_linear_numpy(M_half, Y0, h):
    M_half = np.asarray(M_half, dtype=float)
    Y = np.array(Y0, dtype=float)
    B, n2, n, _ = M_half.shape
    S = (n2 - 1) // 2
    out = np.empty((B, S + 1) + Y.shape[1:])
    out[:, 0] = Y
    for s in range(S):
        A0 = M_half[:, 2 * s]
        A1 = M_half[:, 2 * s + 1]
        A2 = M_half[:, 2 * s + 2]
        k1 = A0 @ Y
        k2 = A1 @ (Y + 0.5 * h * k1)
        k3 = A1 @ (Y + 0.5 * h * k2)
        k4 = A2 @ (Y + h * k3)
        Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[:, s + 1] = Y
    return out


def rk4_linear(M_half, Y0, h):
    """Integrate ``Y' = M(t) Y`` for a batch of tabulated coefficient tables.

    ``M_half`` has shape ``(B, 2S+1, n, n)``: entry ``2s`` is M at node s and
    entry ``2s+1`` is M at the midpoint between nodes s and s+1.  ``Y0`` has
    shape ``(B, n, c)``.  Returns the node values, shape ``(B, S+1, n, c)``.
    """
    if USE_NUMBA:
        return rk4_linear_numba(M_half, Y0, h)
    return rk4_linear_numpy(M_half, Y0, h)


# --- Christoffel symbols from metric and first derivatives ----------------


@njit
def _christoffel_jit(g, dg):
    M, d, _ = g.shape
    out = np.empty((M, d, d, d))
    first = np.empty((d, d, d))
    for m in range(M):
        ginv = np.linalg.inv(g[m])
        # first-kind symbols [ij, l]
        for i in range(d):
            for j in range(d):
                for l in range(d):
                    first[i, j, l] = 0.5 * (dg[m, j, l, i] + dg[m, i, l, j] - dg[m, i, j, l])
        for k in range(d):
            for i in range(d):
                for j in range(d):
                    acc = 0.0
                    for l in range(d):
                        acc += ginv[k, l] * first[i, j, l]
                    out[m, k, i, j] = acc
    return out


def christoffel_symbols_numba(g, dg):
    return _christoffel_jit(
        np.ascontiguousarray(g, dtype=np.float64), np.ascontiguousarray(dg, dtype=np.float64)
    )


def christoffel_symbols_numpy(g, dg):
    g = np.asarray(g, dtype=float)
    dg = np.asarray(dg, dtype=float)
    first = 0.5 * (
        np.einsum("mjli->mijl", dg) + np.einsum("milj->mijl", dg) - dg
    )
    ginv = np.linalg.inv(g)
    return np.einsum("mkl,mijl->mkij", ginv, first)


def christoffel_symbols(g, dg):
    """Second-kind Christoffel symbols ``G[m, k, i, j]``.

    ``g`` is ``(M, d, d)``; ``dg[m, i, j, l]`` is the derivative of ``g_ij``
    along coordinate ``l``.
    """
    if USE_NUMBA:
        return christoffel_symbols_numba(g, dg)
    return christoffel_symbols_numpy(g, dg)


# --- sign changes of det of a Hermite-interpolated matrix curve -----------


def _hermite_matrix(J0, J1, D0, D1, h, s):
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * J0 + h10 * h * D0 + h01 * J1 + h11 * h * D1


@njit
def _hermite_det_roots_jit(t, J, D, t_min, tol):
    N = t.shape[0]
    dets = np.empty(N)
    for i in range(N):
        dets[i] = np.linalg.det(J[i])
    roots = np.empty(N)
    nr = 0
    for i in range(N - 1):
        if t[i + 1] <= t_min:
            continue
        lo = 0.0
        hi = 1.0
        h = t[i + 1] - t[i]
        if t[i] < t_min:
            lo = (t_min - t[i]) / h
        s = lo
        s2 = s * s
        s3 = s2 * s
        flo = np.linalg.det((2 * s3 - 3 * s2 + 1) * J[i] + (s3 - 2 * s2 + s) * h * D[i]
                            + (-2 * s3 + 3 * s2) * J[i + 1] + (s3 - s2) * h * D[i + 1])
        fhi = dets[i + 1]
        if flo == 0.0 and lo > 0.0:
            roots[nr] = t[i] + lo * h
            nr += 1
            continue
        if fhi == 0.0:
            roots[nr] = t[i + 1]
            nr += 1
            continue
        if flo * fhi > 0.0:
            continue
        while (hi - lo) * h > tol:
            s = 0.5 * (lo + hi)
            s2 = s * s
            s3 = s2 * s
            fm = np.linalg.det((2 * s3 - 3 * s2 + 1) * J[i] + (s3 - 2 * s2 + s) * h * D[i]
                               + (-2 * s3 + 3 * s2) * J[i + 1] + (s3 - s2) * h * D[i + 1])
            if fm == 0.0:
                lo = s
                hi = s
                break
            if flo * fm < 0.0:
                hi = s
            else:
                lo = s
                flo = fm
        roots[nr] = t[i] + 0.5 * (lo + hi) * h
        nr += 1
    return roots[:nr]


def hermite_det_roots_numba(t, J, D, t_min, tol=1e-10):
    return _hermite_det_roots_jit(
        np.ascontiguousarray(t, dtype=np.float64),
        np.ascontiguousarray(J, dtype=np.float64),
        np.ascontiguousarray(D, dtype=np.float64),
        float(t_min),
        float(tol),
    )


def hermite_det_roots_numpy(t, J, D, t_min, tol=1e-10):
    t = np.asarray(t, dtype=float)
    J = np.asarray(J, dtype=float)
    D = np.asarray(D, dtype=float)
    h = np.diff(t)
    lo = np.where(t[:-1] < t_min, (t_min - t[:-1]) / h, 0.0)
    keep = t[1:] > t_min
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return np.empty(0)
    i0, i1, hh = idx, idx + 1, h[idx][:, None, None]

    def det_at(s):
        s = s[:, None, None]
        return np.linalg.det(_hermite_matrix(J[i0], J[i1], D[i0], D[i1], hh, s))

    lo = lo[idx]
    hi = np.ones_like(lo)
    flo = det_at(lo)
    fhi = np.linalg.det(J[i1])
    exact_hi = fhi == 0.0
    exact_lo = (flo == 0.0) & (lo > 0.0)
    bracket = (flo * fhi < 0.0) & ~exact_hi & ~exact_lo
    found = []
    if np.any(bracket):
        b_lo, b_hi, f_lo = lo[bracket], hi[bracket], flo[bracket]
        hb = h[idx][bracket]
        sub = np.nonzero(bracket)[0]
        while np.any((b_hi - b_lo) * hb > tol):
            mid = 0.5 * (b_lo + b_hi)
            s = mid[:, None, None]
            fm = np.linalg.det(
                _hermite_matrix(J[i0[sub]], J[i1[sub]], D[i0[sub]], D[i1[sub]], hb[:, None, None], s)
            )
            left = f_lo * fm < 0.0
            zero = fm == 0.0
            b_hi = np.where(left | zero, mid, b_hi)
            b_lo = np.where(left, b_lo, mid)
            f_lo = np.where(left, f_lo, fm)
        found.append(t[i0[sub]] + 0.5 * (b_lo + b_hi) * hb)
    found.append(t[i0[exact_lo]] + lo[exact_lo] * h[idx][exact_lo])
    found.append(t[i1[exact_hi]])
    roots = np.concatenate(found) if found else np.empty(0)
    return np.sort(roots)


def hermite_det_roots(t, J, D, t_min, tol=1e-10):
    """Roots of ``det J(t)`` for ``t > t_min``.

    ``J`` (N, d, d) and its derivative ``D`` are sampled at nodes ``t`` and
    interpolated by cubic Hermite polynomials; each bracketed sign change
    is refined by bisection to width ``tol``.
    """
    if USE_NUMBA:
        return hermite_det_roots_numba(t, J, D, t_min, tol)
    return hermite_det_roots_numpy(t, J, D, t_min, tol)
