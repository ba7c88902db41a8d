"""Cell-based quadrature used throughout the package.

Everything here works on *cells*: a partition of an interval into
consecutive subintervals, each carrying its own Gauss-Legendre rule.
The main entry points are

* :func:`cell_integrals` -- adaptive composite Gauss per cell, with graded
  meshes and geometric tail extrapolation at declared singular points;
* :class:`LegendreMesh` -- nodes + per-cell Legendre interpolation, used for
  cumulative (running) integrals, interpolation and spectral derivatives;
* :func:`filon_legendre` -- Filon-type rule for ``g(t) exp(i w t)``;
* :func:`oscillatory_tail` -- asymptotic endpoint expansion of
  ``int_X^inf g(t) exp(i w t) dt``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import spherical_jn

from .errors import NonIntegrableError, QuadratureError

__all__ = [
    "gauss_legendre",
    "cell_integrals",
    "integrate",
    "LegendreMesh",
    "filon_legendre",
    "oscillatory_tail",
]


@lru_cache(maxsize=None)
def gauss_legendre(n):
    """Nodes and weights on [-1, 1] (cached, read-only)."""
    s, w = npleg.leggauss(n)
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w


def _gl_apply(func, a, b, n):
    s, w = gauss_legendre(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = mid[:, None] + half[:, None] * s[None, :]
    fx = np.asarray(func(x.ravel())).reshape(x.shape)
    return half * (fx @ w)


def _adaptive(func, a, b, rtol, atol, order, max_depth):
    """Adaptive bisection with a two-level Gauss comparison.

    Returns per-interval integrals and absolute error estimates, for the
    original intervals ``[a[i], b[i]]``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    total = np.zeros(a.shape, dtype=np.result_type(float, func(a[:1]) if a.size else 0.0))
    err = np.zeros(a.shape)
    failed = np.zeros(a.shape, dtype=bool)
    owner = np.arange(a.size)
    lo, hi = a, b
    coarse = _gl_apply(func, lo, hi, order) if a.size else np.zeros(0)
    for depth in range(max_depth + 1):
        if lo.size == 0:
            break
        mid = 0.5 * (lo + hi)
        left = _gl_apply(func, lo, mid, order)
        right = _gl_apply(func, mid, hi, order)
        fine = left + right
        diff = np.abs(fine - coarse)
        ok = diff <= np.maximum(rtol * np.abs(fine), atol)
        if depth == max_depth:
            failed[owner[~ok]] = True
            ok[:] = True
        np.add.at(total, owner[ok], fine[ok])
        np.add.at(err, owner[ok], diff[ok])
        bad = ~ok
        owner = np.concatenate([owner[bad], owner[bad]])
        coarse = np.concatenate([left[bad], right[bad]])
        lo, hi = (np.concatenate([lo[bad], mid[bad]]),
                  np.concatenate([mid[bad], hi[bad]]))
    return total, err, failed


def _graded(func, s, b, rtol, order, ratio=0.25, max_layers=200):
    """Integral over [s, b] (or [b, s]) with a singularity at ``s``.

    Geometric layers toward ``s``; the layer contributions form an
    asymptotically geometric sequence for power singularities, so the
    remaining tail is extrapolated.  Non-decreasing layers mean the
    singularity is not integrable.
    """
    length = b - s
    sign = 1.0 if length > 0 else -1.0
    length = abs(length)
    floor = 64 * np.finfo(float).eps * max(1.0, abs(s))
    deltas = [length]
    while deltas[-1] * ratio > floor and len(deltas) < max_layers:
        deltas.append(deltas[-1] * ratio)
    deltas = np.asarray(deltas)
    outer = s + sign * deltas[:-1]
    inner = s + sign * deltas[1:]
    lo = np.minimum(outer, inner)
    hi = np.maximum(outer, inner)
    layers, _, _ = _adaptive(func, lo, hi, rtol * 1e-2, 0.0, order, 12)
    mags = np.abs(layers)
    total = layers.sum()
    scale = max(abs(total), np.finfo(float).tiny)
    # ratio of successive layer contributions, evaluated away from noise
    usable = mags > 1e-300
    rats = mags[1:][usable[1:] & usable[:-1]] / mags[:-1][usable[1:] & usable[:-1]]
    if rats.size >= 4 and np.all(rats[-4:] > 0.995):
        raise NonIntegrableError(
            "non-integrable singularity (layer contributions do not decay)",
            location=s,
            achieved=float(abs(total)),
        )
    if rats.size and rats[-1] < 1.0:
        rho = rats[-1]
        tail = layers[-1] * rho / (1.0 - rho)
    else:
        tail = 0.0
    if abs(tail) > max(1e-6, rtol * 1e3) * scale and rats.size and rats[-1] > 0.9:
        raise QuadratureError(
            "singular cell integral converges too slowly",
            achieved=float(abs(tail) / scale),
        )
    return total + tail


def cell_integrals(func, edges, *, rtol=1e-10, atol=0.0, order=10,
                   singular_points=(), max_depth=40, chunk=50_000):
    """Integral of ``func`` over each cell ``[edges[i], edges[i+1]]``.

    ``func`` must be vectorized.  Cells adjacent to a point listed in
    ``singular_points`` are integrated with geometric grading toward it; a
    singular point interior to a cell is made a split point.

    Raises
    ------
    NonIntegrableError
        when a singular cell integral diverges.
    QuadratureError
        when the adaptive rule exhausts ``max_depth`` without meeting ``rtol``.
    """
    edges = np.asarray(edges, dtype=float)
    sing = np.asarray(sorted(singular_points), dtype=float)
    sing = sing[(sing >= edges[0]) & (sing <= edges[-1])]
    ncell = edges.size - 1
    out = None
    special = []
    for i in range(ncell):
        a, b = edges[i], edges[i + 1]
        inside = sing[(sing >= a) & (sing <= b)] if sing.size else sing
        if inside.size:
            special.append((i, a, b, inside))
    special_idx = {i for i, *_ in special}
    mask = np.ones(ncell, dtype=bool)
    if special_idx:
        mask[list(special_idx)] = False
    idx = np.nonzero(mask)[0]
    err_max = 0.0
    for start in range(0, idx.size, chunk):
        sel = idx[start:start + chunk]
        vals, errs, failed = _adaptive(func, edges[sel], edges[sel + 1], rtol,
                                       atol, order, max_depth)
        if out is None:
            out = np.zeros(ncell, dtype=vals.dtype)
        out[sel] = vals
        if np.any(failed):
            rel = errs[failed] / np.maximum(np.abs(vals[failed]), 1e-300)
            err_max = max(err_max, float(np.max(rel)))
    if out is None:
        probe = np.asarray(func(np.array([0.5 * (edges[0] + edges[-1])])))
        out = np.zeros(ncell, dtype=np.result_type(float, probe))
    for i, a, b, inside in special:
        pts = np.unique(np.concatenate([[a], inside, [b]]))
        acc = 0.0
        for lo, hi in zip(pts[:-1], pts[1:]):
            if hi <= lo:
                continue
            lo_s = lo in inside
            hi_s = hi in inside
            if lo_s and hi_s:
                m = 0.5 * (lo + hi)
                acc += _graded(func, lo, m, rtol, order) + _graded(func, hi, m, rtol, order)
            elif lo_s:
                acc += _graded(func, lo, hi, rtol, order)
            elif hi_s:
                acc += _graded(func, hi, lo, rtol, order)
            else:
                val, _, failed = _adaptive(func, np.array([lo]), np.array([hi]),
                                           rtol, atol, order, max_depth)
                if failed[0]:
                    raise QuadratureError(f"adaptive Gauss did not reach rtol={rtol:g}")
                acc += val[0]
        out[i] = acc
    if err_max > 0.0:
        raise QuadratureError(
            f"adaptive Gauss did not reach rtol={rtol:g}", achieved=err_max)
    return out


def integrate(func, a, b, **kw):
    """Scalar convenience wrapper around :func:`cell_integrals`."""
    return cell_integrals(func, np.array([a, b], dtype=float), **kw)[0]


class LegendreMesh:
    """Gauss-Legendre nodes on a partition, with per-cell Legendre algebra.

    Parameters
    ----------
    edges : array_like
        Increasing cell boundaries.
    order : int
        Nodes per cell.
    """

    def __init__(self, edges, order=16):
        self.edges = np.asarray(edges, dtype=float)
        if self.edges.ndim != 1 or self.edges.size < 2 or np.any(np.diff(self.edges) <= 0):
            raise ValueError("edges must be strictly increasing with at least two entries")
        self.order = order
        s, w = gauss_legendre(order)
        self._s = s
        self._w = w
        self.mid = 0.5 * (self.edges[1:] + self.edges[:-1])
        self.half = 0.5 * np.diff(self.edges)
        self.nodes = self.mid[:, None] + self.half[:, None] * s[None, :]
        self.weights = self.half[:, None] * w[None, :]
        # discrete Legendre transform: coefficients from node values
        P = npleg.legvander(s, order - 1)  # (n, k)
        k = np.arange(order)
        self._fwd = (P * w[:, None]).T * ((2 * k + 1) / 2.0)[:, None]  # (k, n)
        # coefficient map of d/ds, shape (order - 1, order)
        self._der = np.stack([npleg.legder(e) for e in np.eye(order)], axis=1)

    @property
    def ncell(self):
        return self.edges.size - 1

    def coefficients(self, values):
        """Legendre coefficients per cell, shape (ncell, order)."""
        values = np.asarray(values).reshape(self.ncell, self.order)
        return values @ self._fwd.T

    def cell_integrals(self, values):
        values = np.asarray(values).reshape(self.ncell, self.order)
        return (values * self.weights).sum(axis=1)

    def locate(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.edges[0] - 1e-12 * max(1.0, abs(self.edges[0]))) or np.any(
                x > self.edges[-1] + 1e-12 * max(1.0, abs(self.edges[-1]))):
            raise ValueError("points outside the mesh")
        cell = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.ncell - 1)
        s = np.clip((x - self.mid[cell]) / self.half[cell], -1.0, 1.0)
        return cell, s

    def interpolate(self, values, x):
        coef = self.coefficients(values)
        cell, s = self.locate(x)
        P = npleg.legvander(s, self.order - 1)
        return np.einsum("ij,ij->i", P, coef[cell])

    def derivative(self, values, x):
        coef = self.coefficients(values)
        cell, s = self.locate(x)
        dcoef = coef[cell] @ self._der.T
        P = npleg.legvander(s, self.order - 2)
        return np.einsum("ij,ij->i", P, dcoef) / self.half[cell]

    def _partial_from_left(self, coef, cell, s):
        # int_{-1}^{s} P_k = (P_{k+1}(s) - P_{k-1}(s)) / (2k+1),  k >= 1 ; s + 1 for k = 0
        P = npleg.legvander(s, self.order)
        k = np.arange(self.order)
        ints = np.empty((s.size, self.order))
        ints[:, 0] = s + 1.0
        if self.order > 1:
            ints[:, 1:] = (P[:, 2:] - P[:, :-2]) / (2 * k[1:] + 1)
        return self.half[cell] * np.einsum("ij,ij->i", ints, coef[cell])

    def cumulative(self, values, x):
        """``int_{edges[0]}^{x} f`` for arbitrary points ``x`` in the mesh."""
        coef = self.coefficients(values)
        csum = np.concatenate([[0.0], np.cumsum(self.cell_integrals(values))])
        cell, s = self.locate(x)
        return csum[cell] + self._partial_from_left(coef, cell, s)

    def tail(self, values, x):
        """``int_{x}^{edges[-1]} f``."""
        total = self.cell_integrals(values).sum()
        return total - self.cumulative(values, x)

    def cumulative_at_nodes(self, values):
        """Running integral from ``edges[0]`` evaluated at every node."""
        values = np.asarray(values).reshape(self.ncell, self.order)
        cell = np.repeat(np.arange(self.ncell), self.order)
        s = np.tile(self._s, self.ncell)
        coef = self.coefficients(values)
        csum = np.concatenate([[0.0], np.cumsum(self.cell_integrals(values))])
        return (csum[cell] + self._partial_from_left(coef, cell, s)).reshape(self.ncell, self.order)

    def tail_at_nodes(self, values):
        total = self.cell_integrals(values).sum()
        return total - self.cumulative_at_nodes(values)


def filon_legendre(g, omega, edges, order=16):
    """Per-cell integrals of ``g(t) * exp(1j * omega * t)``.

    ``g`` is interpolated by a Legendre series at Gauss nodes on each cell and
    the products with the exponential are integrated exactly using
    ``int_{-1}^{1} P_k(s) e^{i kappa s} ds = 2 i^k j_k(kappa)``.  Cells may
    therefore be many wavelengths long as long as ``g`` is resolved.
    """
    mesh = LegendreMesh(edges, order)
    gv = np.asarray(g(mesh.nodes.ravel())).reshape(mesh.ncell, order)
    coef = mesh.coefficients(gv)
    kappa = omega * mesh.half
    k = np.arange(order)
    moments = 2.0 * (1j ** k)[None, :] * spherical_jn(k[None, :], np.abs(kappa)[:, None])
    # j_k is even/odd in kappa: j_k(-x) = (-1)^k j_k(x)
    moments = np.where(kappa[:, None] < 0, moments * ((-1.0) ** k)[None, :], moments)
    return mesh.half * np.exp(1j * omega * mesh.mid) * np.einsum("ij,ij->i", coef, moments)


def oscillatory_tail(g, omega, X, terms=4, span=None, degree=10):
    """Asymptotic value of ``int_X^inf g(t) exp(i omega t) dt``.

    Uses repeated integration by parts,
    ``-e^{i w X} sum_k (-1)^k g^{(k)}(X) / (i w)^{k+1}``, with derivatives of
    ``g`` from a Chebyshev fit on ``[X, X + span]``.  Appropriate when ``g``
    varies on a scale much longer than ``1/omega``.
    """
    if omega == 0:
        raise ValueError("oscillatory_tail needs a nonzero frequency")
    if span is None:
        span = 0.5 * max(X, 1.0)
    t = X + 0.5 * span * (1 - np.cos(np.pi * np.arange(degree + 1) / degree))
    gv = np.asarray(g(t))
    u = 2 * (t - X) / span - 1
    cr = np.polynomial.chebyshev.chebfit(u, gv.real, degree)
    ci = np.polynomial.chebyshev.chebfit(u, gv.imag, degree) if np.iscomplexobj(gv) else np.zeros_like(cr)
    c = cr + 1j * ci
    total = 0.0 + 0.0j
    iw = 1j * omega
    for k in range(terms):
        dk = np.polynomial.chebyshev.chebval(-1.0, np.polynomial.chebyshev.chebder(c, k)) if k else np.polynomial.chebyshev.chebval(-1.0, c)
        dk = dk * (2.0 / span) ** k
        total += (-1) ** k * dk / iw ** (k + 1)
    return -np.exp(iw * X) * total
