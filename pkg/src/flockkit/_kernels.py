"""Chunked pairwise interaction sums shared by the dynamics and kinetic layers.

All alignment right-hand sides reduce to two sums over source points: the
interaction mass ``den_i = sum_j U(x_i - y_j)`` and the velocity-difference
sum ``s_i = sum_j U(x_i - y_j) (u_j - v_i)``.  Small problems use the
difference form directly, which makes the aligned state an exact fixed
point in floating point (the invariance tests rely on it).  Large problems
switch to matrix-product accumulation of the same sums, and the factorized
wrapped-Gaussian kernel avoids materializing displacement vectors entirely.
Evaluation is chunked over target rows to bound the pair-table memory.
"""

from __future__ import annotations

import numpy as np

from .geometry import Domain, GaussianPeriodized, PotentialSpec, Torus, displacement_table

# target number of pair-table elements held at once (per chunk)
_CHUNK_ELEMS = 4_000_000
# beyond this many pair entries the last-ulp-exact difference form gives way
# to matrix products
_LARGE_PAIRS = 1_000_000


def _row_chunks(n: int, m: int, d: int) -> int:
    rows = max(1, _CHUNK_ELEMS // max(1, m * d))
    return min(n, rows)


class _GaussianScratch:
    """Preallocated buffers for the factorized wrapped-Gaussian kernel.

    The chunk loop is allocation-heavy otherwise; reusing four flat buffers
    keeps the hot path memory-bound on reads and writes only.
    """

    def __init__(self, rows: int, cols: int):
        shape = (rows, cols)
        self.dc = np.empty(shape)
        self.tmp = np.empty(shape)
        self.term = np.empty(shape)
        self.theta = np.empty(shape)
        self.w = np.empty(shape)

    def pair_values(self, spec: GaussianPeriodized, size: float | None,
                    x_chunk: np.ndarray, y: np.ndarray) -> np.ndarray:
        rows = x_chunk.shape[0]
        dc = self.dc[:rows]
        tmp = self.tmp[:rows]
        term = self.term[:rows]
        theta = self.theta[:rows]
        w = self.w[:rows]
        inv_two_w2 = 1.0 / (2.0 * spec.width**2)
        for c in range(spec.d):
            xc = np.ascontiguousarray(x_chunk[:, c])
            yc = np.ascontiguousarray(y[:, c])
            np.subtract(xc[:, None], yc[None, :], out=dc)
            if size is not None:
                np.multiply(dc, 1.0 / size, out=tmp)
                np.rint(tmp, out=tmp)
                tmp *= size
                dc -= tmp
            np.abs(dc, out=dc)  # keep the kernel exactly even, as in values()
            theta.fill(0.0)
            for shift in spec._shifts:
                np.add(dc, shift, out=term)
                np.square(term, out=term)
                term *= -inv_two_w2
                np.exp(term, out=term)
                theta += term
            theta *= spec._norm1
            if c == 0:
                w[...] = theta
            else:
                w *= theta
        return w


def _pair_values(spec: PotentialSpec, domain: Domain, x_chunk: np.ndarray,
                 y: np.ndarray, scratch: "_GaussianScratch | None" = None
                 ) -> np.ndarray:
    """Kernel matrix for one chunk of target rows."""
    if isinstance(spec, GaussianPeriodized) and scratch is not None:
        size = domain.size if isinstance(domain, Torus) else None
        return scratch.pair_values(spec, size, x_chunk, y)
    return spec.values(displacement_table(domain, x_chunk, y))


def kernel_table(spec: PotentialSpec, domain: Domain, x: np.ndarray,
                 y: np.ndarray | None = None) -> np.ndarray:
    """Dense interaction matrix ``U(x_i - y_j)`` for desk-scale inputs."""
    if y is None:
        y = x
    return spec.values(displacement_table(domain, x, y))


def alignment_sums(spec: PotentialSpec, domain: Domain,
                   x: np.ndarray, v: np.ndarray,
                   y: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw alignment sums of targets ``(x, v)`` against sources ``(y, u)``.

    Returns ``(den, s)`` with ``den_i = sum_j U(x_i - y_j)`` and
    ``s_i = sum_j U(x_i - y_j) (u_j - v_i)``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    n, d = x.shape
    m = y.shape[0]
    den = np.empty(n)
    s = np.empty((n, d))
    large = n * m >= _LARGE_PAIRS
    step = _row_chunks(n, m, d)
    scratch = None
    if large and isinstance(spec, GaussianPeriodized):
        scratch = _GaussianScratch(min(step, n), m)
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        w = _pair_values(spec, domain, x[lo:hi], y, scratch)
        den[lo:hi] = w.sum(axis=1)
        if large:
            s[lo:hi] = w @ u - v[lo:hi] * den[lo:hi, None]
        else:
            diff = u[None, :, :] - v[lo:hi, None, :]
            s[lo:hi] = np.einsum("ij,ijk->ik", w, diff)
    return den, s
