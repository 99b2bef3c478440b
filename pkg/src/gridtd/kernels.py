"""Compiled loops for the hot paths of a full-grid forward/backward.

Every kernel has a plain-numpy counterpart elsewhere in the package that
serves as its reference; :data:`BACKEND` picks which one runs.  Set
``GRIDTD_BACKEND=numpy`` to force the reference path (useful when numba is
missing or when comparing the two).
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

BACKEND = os.environ.get("GRIDTD_BACKEND", "numba" if numba is not None else "numpy")
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"GRIDTD_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")
if BACKEND == "numba" and numba is None:  # pragma: no cover
    BACKEND = "numpy"


def enabled() -> bool:
    return BACKEND == "numba"


if numba is not None:
    _jit = njit(cache=True, nogil=True, fastmath=True)
    # interpolation stays strict IEEE so a 1-D dense level reproduces the
    # per-axis encoding bit for bit (fastmath may fuse multiply-adds)
    _jit_exact = njit(cache=True, nogil=True)
    _PRIMES = np.array([1, 2654435761, 805459861, 3674653429, 2097192037, 1434869437, 2165219737],
                       dtype=np.uint64)

    @_jit_exact
    def _corner_rows(points, p, res, side, hashed, T, primes, hbuf, rows, weights):
        # corners are built by doubling, axis 0 most significant: the same
        # order as itertools.product((0, 1), repeat=D)
        D = points.shape[1]
        weights[0] = 1.0
        rows[0] = 0
        hbuf[0] = 0
        n = 1
        for d in range(D):
            pos = (res - 1) * points[p, d]
            b = np.floor(pos)
            u = pos - b
            v = np.int64(b)
            for c in range(n - 1, -1, -1):
                w = weights[c]
                weights[2 * c + 1] = w * u
                weights[2 * c] = w * (1.0 - u)
                if hashed:
                    h = hbuf[c]
                    hbuf[2 * c + 1] = h ^ (np.uint64(v + 1) * primes[d])
                    hbuf[2 * c] = h ^ (np.uint64(v) * primes[d])
                else:
                    r = rows[c] * side + v
                    rows[2 * c + 1] = r + 1
                    rows[2 * c] = r
            n *= 2
        if hashed:
            for c in range(n):
                rows[c] = np.int64(hbuf[c] % np.uint64(T))

    @_jit_exact
    def dense_level_forward(points, res, hashed, T, table, out, col0):
        """out[:, col0:col0+F] = multilinear blend of the 2^D corner rows."""
        P, D = points.shape
        F = table.shape[1]
        side = res + 1
        hbuf = np.empty(1 << D, np.uint64)
        rows = np.empty(1 << D, np.int64)
        weights = np.empty(1 << D)
        for p in range(P):
            _corner_rows(points, p, res, side, hashed, T, _PRIMES, hbuf, rows, weights)
            for f in range(F):
                acc = 0.0
                for c in range(1 << D):
                    acc += weights[c] * table[rows[c], f]
                out[p, col0 + f] = acc

    @_jit_exact
    def dense_level_backward(points, res, hashed, T, grad_out, col0, grad_table):
        P, D = points.shape
        F = grad_table.shape[1]
        side = res + 1
        hbuf = np.empty(1 << D, np.uint64)
        rows = np.empty(1 << D, np.int64)
        weights = np.empty(1 << D)
        for p in range(P):
            nonzero = False
            for f in range(F):
                if grad_out[p, col0 + f] != 0.0:
                    nonzero = True
            if not nonzero:
                continue
            _corner_rows(points, p, res, side, hashed, T, _PRIMES, hbuf, rows, weights)
            for c in range(1 << D):
                for f in range(F):
                    grad_table[rows[c], f] += weights[c] * grad_out[p, col0 + f]

    @_jit
    def mlp_forward(x, W1, b1, W2):
        """relu(x @ W1.T + b1) @ W2.T for a single output unit."""
        P, R = x.shape
        H = W1.shape[0]
        W1T = np.ascontiguousarray(W1.T)
        w2 = W2[0]
        z = np.empty(H)
        out = np.empty(P)
        for p in range(P):
            for h in range(H):
                z[h] = b1[h]
            for r in range(R):
                a = x[p, r]
                for h in range(H):
                    z[h] += W1T[r, h] * a
            s = 0.0
            for h in range(H):
                s += w2[h] * max(z[h], 0.0)
            out[p] = s
        return out

    @_jit
    def mlp_backward(x, W1, b1, W2, g, gx, gW1, gb1, gW2):
        P, R = x.shape
        H = W1.shape[0]
        for p in range(P):
            gp = g[p]
            if gp == 0.0:
                continue
            for h in range(H):
                z = b1[h]
                for r in range(R):
                    z += W1[h, r] * x[p, r]
                if z > 0.0:
                    gW2[0, h] += gp * z
                    gz = gp * W2[0, h]
                    gb1[h] += gz
                    for r in range(R):
                        gW1[h, r] += gz * x[p, r]
                        gx[p, r] += gz * W1[h, r]

    @_jit
    def _cp_prefix(mats, offsets, dims, q, idx, prefix):
        """Row indices of outer multi-index q (all axes but the last) and their product."""
        D = dims.size
        R = mats.shape[1]
        for d in range(D - 2, -1, -1):
            idx[d] = offsets[d] + q % dims[d]
            q //= dims[d]
        for r in range(R):
            v = 1.0
            for d in range(D - 1):
                v *= mats[idx[d], r]
            prefix[r] = v

    @_jit
    def cp_mlp_forward(mats, offsets, dims, W1, b1, W2):
        """Decoder output at every multi-index of a CP-structured encoding.

        ``mats`` stacks the per-axis factor matrices row-wise; axis d occupies
        rows offsets[d] .. offsets[d] + dims[d].  The (prod dims) x R encoding
        is never materialised: for each index over the leading axes the partial
        product is folded into the first layer once, and the last axis then
        costs one H x R product per entry.
        """
        D = dims.size
        outer = 1
        for d in range(D - 1):
            outer *= dims[d]
        nlast = dims[D - 1]
        last = offsets[D - 1]
        R = mats.shape[1]
        H = W1.shape[0]
        idx = np.empty(D, np.int64)
        prefix = np.empty(R)
        WpT = np.empty((R, H))
        z = np.empty(H)
        w2 = W2[0]
        out = np.empty(outer * nlast)
        for q in range(outer):
            _cp_prefix(mats, offsets, dims, q, idx, prefix)
            for r in range(R):
                for h in range(H):
                    WpT[r, h] = W1[h, r] * prefix[r]
            for k in range(nlast):
                row = last + k
                for h in range(H):
                    z[h] = b1[h]
                for r in range(R):
                    a = mats[row, r]
                    for h in range(H):
                        z[h] += WpT[r, h] * a
                s = 0.0
                for h in range(H):
                    s += w2[h] * max(z[h], 0.0)
                out[q * nlast + k] = s
        return out

    @_jit
    def cp_mlp_backward(mats, offsets, dims, W1, b1, W2, g, gmats, gW1, gb1, gW2):
        D = dims.size
        outer = 1
        for d in range(D - 1):
            outer *= dims[d]
        nlast = dims[D - 1]
        last = offsets[D - 1]
        R = mats.shape[1]
        H = W1.shape[0]
        idx = np.empty(D, np.int64)
        prefix = np.empty(R)
        x = np.empty(R)
        gx = np.empty(R)
        for q in range(outer):
            started = False
            for k in range(nlast):
                gp = g[q * nlast + k]
                if gp == 0.0:
                    continue
                if not started:
                    _cp_prefix(mats, offsets, dims, q, idx, prefix)
                    started = True
                row = last + k
                for r in range(R):
                    x[r] = prefix[r] * mats[row, r]
                    gx[r] = 0.0
                for h in range(H):
                    z = b1[h]
                    for r in range(R):
                        z += W1[h, r] * x[r]
                    if z > 0.0:
                        gW2[0, h] += gp * z
                        gz = gp * W2[0, h]
                        gb1[h] += gz
                        for r in range(R):
                            gW1[h, r] += gz * x[r]
                            gx[r] += gz * W1[h, r]
                idx[D - 1] = row
                for d in range(D):
                    for r in range(R):
                        v = gx[r]
                        for e in range(D):
                            if e != d:
                                v *= mats[idx[e], r]
                        gmats[idx[d], r] += v
