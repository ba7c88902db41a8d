"""Iterates ``q^(n)`` of the Riccati-type equation for the ``(I + Q)`` transform.

With ``c = i / (2w)`` and ``a = V conj(theta)^2 e^{-2ip}`` the off-diagonal
coupling of the ``y4`` system vanishes when
``q' = c (a + conj(a) q^2)``.  The iteration

    q^(n)(x) = -c int_x^{X_cut} [a + conj(a) (q^(n-1))^2] dt,   q^(-1) = 0,

is computed on a Legendre mesh over ``[0, X_cut]``.  For the free basis the
oscillatory tail ``int_{X_cut}^inf a`` is added from its endpoint
expansion, so that ``X_cut`` only bounds the region where the nonlinear
terms are resolved.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DomainError, InsufficientRangeError, IterationDivergence,
                     ResolutionError, TailError, UnderflowError)
from .quadrature import LegendreMesh, oscillatory_tail
from .transform import PhaseAccumulator

__all__ = [
    "QIterate",
    "q_iterate",
    "residual_norm",
    "decay_exponent",
    "write_qiterate_csv",
]

MAX_LEVEL = 8


def _mesh_edges(V, basis, X_cut, order):
    k = math.sqrt(basis.lam)
    width = min(1.0, math.pi / k)
    if basis.kind == "bloch":
        width = min(width, basis.period / 8.0)
    n = max(1, int(math.ceil(X_cut / width)))
    edges = np.linspace(0.0, X_cut, n + 1)
    bp = V.breakpoints(0.0, X_cut)
    if bp.size:
        edges = np.unique(np.concatenate([edges, bp]))
    return edges


@dataclass
class QIterate:
    """Iterate ``q^(n)`` sampled on a grid, with interpolation.

    Calling an instance at points ``x`` returns ``(q, q')`` where the
    derivative is the exact right-hand side ``c (a + conj(a) (q^(n-1))^2)``.

    Attributes
    ----------
    n : int
    grid : ndarray
    values : ndarray
        ``q^(n)`` on ``grid``.
    lam : float
    provenance : dict
        Basis kind, potential, ``X_cut`` and tail handling.
    tail_estimate : float
        Size of the neglected or asymptotically added tail beyond ``X_cut``.
    """

    n: int
    grid: np.ndarray
    values: np.ndarray
    lam: float
    provenance: dict
    tail_estimate: float = 0.0
    _mesh: LegendreMesh = field(default=None, repr=False)
    _levels: list = field(default_factory=list, repr=False)
    _basis: object = field(default=None, repr=False)
    _V: object = field(default=None, repr=False)
    _acc: object = field(default=None, repr=False)

    @property
    def c(self):
        return 1j / (2.0 * self._basis.imw)

    def level(self, m, x):
        """``q^(m)`` at ``x`` for ``m <= n`` (``m = -1`` gives zeros)."""
        x = np.asarray(x, dtype=float)
        if m < 0:
            return np.zeros(x.shape, dtype=complex)
        vals = self._levels[m]
        re = self._mesh.interpolate(vals.real.ravel(), x.ravel())
        im = self._mesh.interpolate(vals.imag.ravel(), x.ravel())
        return (re + 1j * im).reshape(x.shape)

    def a(self, x):
        th, _ = self._basis.eval(x)
        return self._V(x) * np.conj(th) ** 2 * np.exp(-2j * self._acc(x))

    def derivative(self, x, m=None):
        m = self.n if m is None else m
        a = self.a(x)
        qp = self.level(m - 1, x)
        return self.c * (a + np.conj(a) * qp ** 2)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.level(self.n, x), self.derivative(x)

    def difference(self, x):
        """``q^(n) - q^(n-1)`` (or ``q^(0)`` for ``n = 0``)."""
        return self.level(self.n, x) - self.level(self.n - 1, x)


def q_iterate(V, basis, n=3, grid=None, X_cut=None, tail="auto", acc=None, order=16,
              check_tail=False, tail_rtol=1e-6):
    """Compute ``q^(n)`` by iterating from ``q^(0)``.

    Parameters
    ----------
    V : PotentialSpec
    basis : ThetaBasis
    n : int
        Iteration depth, at most 8.
    grid : array_like
        Points where values are reported; defaults to 1025 points on
        ``[0, X_cut]``.
    X_cut : float
        Truncation point, at least ``max(grid)``.
    tail : {'auto', 'asymptotic', 'none'}
        ``'asymptotic'`` adds the endpoint expansion of ``int_{X_cut}^inf a``
        (free basis only); ``'auto'`` does so whenever possible.
    check_tail : bool
        Recompute with ``2 X_cut`` and raise :class:`TailError` when the
        values move by more than ``tail_rtol`` (relative to ``sup |q|``).

    Raises
    ------
    IterationDivergence
        ``|q^(m)|`` reached 1 at some level.
    TailError
        See ``check_tail``.
    """
    if not 0 <= n <= MAX_LEVEL or int(n) != n:
        raise DomainError(f"iteration depth must be an integer in [0, {MAX_LEVEL}]")
    if grid is None:
        if X_cut is None:
            raise DomainError("give a grid or X_cut")
        grid = np.linspace(0.0, X_cut, 1025)
    grid = np.asarray(grid, dtype=float)
    if X_cut is None:
        X_cut = float(grid.max())
    if X_cut < grid.max() or grid.min() < 0:
        raise DomainError("grid must lie inside [0, X_cut]")
    acc = PhaseAccumulator(basis, V) if acc is None else acc
    prov = {"basis": basis.kind, "lam": basis.lam, "V": repr(V), "X_cut": float(X_cut)}
    if V.is_zero:
        mesh = LegendreMesh(np.array([0.0, max(X_cut, 1.0)]), 2)
        zeros = [np.zeros((1, 2), dtype=complex) for _ in range(n + 1)]
        prov["tail"] = "none"
        return QIterate(n, grid, np.zeros(grid.shape, dtype=complex), basis.lam, prov, 0.0,
                        mesh, zeros, basis, V, acc)

    edges = _mesh_edges(V, basis, X_cut, order)
    mesh = LegendreMesh(edges, order)
    t = mesh.nodes.ravel()
    th, _ = basis.eval(t)
    a = (V(t) * np.conj(th) ** 2 * np.exp(-2j * acc(t))).reshape(mesh.ncell, order)
    c = 1j / (2.0 * basis.imw)

    use_tail = tail == "asymptotic" or (tail == "auto" and basis.kind == "free")
    if use_tail and basis.kind != "free":
        raise DomainError("asymptotic tail needs the free basis")
    k = math.sqrt(basis.lam)
    extra = 0.0 + 0.0j
    if use_tail and V(np.array([X_cut]))[0] != 0.0:
        g = lambda s: V(s) * np.exp(-2j * acc(s))
        extra = oscillatory_tail(g, -2.0 * k, X_cut, terms=4, span=max(0.25 * X_cut, 8 * math.pi / k))
    tail_est = abs(c) * abs(V(np.array([X_cut]))[0]) / (2.0 * k)
    prov["tail"] = "asymptotic" if use_tail else "none"

    levels = []
    prev = None
    for m in range(n + 1):
        integrand = a if prev is None else a + np.conj(a) * prev ** 2
        tl = mesh.tail_at_nodes(integrand.real) + 1j * mesh.tail_at_nodes(integrand.imag)
        q = -c * (tl + extra)
        mx = float(np.max(np.abs(q)))
        if not np.isfinite(mx) or mx >= 1.0:
            raise IterationDivergence(f"|q^({m})| reached {mx:.4g} >= 1")
        levels.append(q)
        prev = q

    out = QIterate(n, grid, np.zeros(grid.shape, dtype=complex), basis.lam, prov,
                   float(abs(extra) if use_tail else tail_est), mesh, levels, basis, V, acc)
    out.values = out.level(n, grid)
    if check_tail:
        wider = q_iterate(V, basis, n, grid, 2.0 * X_cut, tail, acc, order, False)
        scale = max(float(np.max(np.abs(out.values))), 1e-300)
        change = float(np.max(np.abs(wider.values - out.values))) / scale
        out.provenance["tail_change"] = change
        if change > tail_rtol:
            raise TailError(f"q changes by {change:.3g} (relative) when X_cut doubles")
    return out


def _range_mesh(q, lo, hi, order=16):
    width = min(1.0, math.pi / math.sqrt(q.lam))
    nc = max(1, int(math.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, nc + 1)
    bp = q._V.breakpoints(lo, hi)
    if bp.size:
        edges = np.unique(np.concatenate([edges, bp]))
    return LegendreMesh(edges, order)


def residual_norm(q, x_range, method="telescoping", fd_tol=0.01):
    """``int |q' - c (a + conj(a) q^2)| dx`` over ``x_range`` for ``q = q^(n)``.

    ``method='telescoping'`` uses the exact identity
    ``q^(n)' - c (a + conj(a) (q^(n))^2) = c conj(a) ((q^(n-1))^2 - (q^(n))^2)``;
    ``method='direct'`` differentiates the interpolated ``q^(n)`` and
    evaluates the equation as written.

    Raises
    ------
    ResolutionError
        (direct method) the interpolated derivative differs from the exact
        right-hand side by more than ``fd_tol`` relative.
    """
    lo, hi = map(float, x_range)
    if lo < q.grid.min() - 1e-12 or hi > q.provenance["X_cut"] + 1e-12 or not lo < hi:
        raise DomainError("x_range must lie inside the iterate's range")
    if q._V.is_zero:
        return 0.0
    mesh = _range_mesh(q, lo, hi)
    t = mesh.nodes.ravel()
    a = q.a(t)
    c = q.c
    qn = q.level(q.n, t)
    qp = q.level(q.n - 1, t)
    if method == "telescoping":
        r = c * np.conj(a) * (qp ** 2 - qn ** 2)
    elif method == "direct":
        vals = q._levels[q.n]
        dre = q._mesh.derivative(vals.real.ravel(), t)
        dim = q._mesh.derivative(vals.imag.ravel(), t)
        dq = dre + 1j * dim
        exact = c * (a + np.conj(a) * qp ** 2)
        rel = float(np.max(np.abs(dq - exact)) / max(np.max(np.abs(exact)), 1e-300))
        if rel > fd_tol:
            raise ResolutionError(f"derivative of q is resolved only to {rel:.2%}")
        r = dq - c * (a + np.conj(a) * qn ** 2)
    else:
        raise DomainError(f"unknown method {method!r}")
    return float(np.sum(np.abs(r).reshape(mesh.ncell, mesh.order) * mesh.weights))


def decay_exponent(q, floor=1e-14, x_min=1.0):
    """Fitted ``delta`` in ``|q^(n) - q^(n-1)| ~ (1 + x)^-delta``.

    For ``n = 0`` the iterate itself is used.  Points with ``x < x_min``
    are ignored, as are values below ``floor``.

    Raises
    ------
    UnderflowError
        more than half of the values lie below ``floor``.
    InsufficientRangeError
        fewer than three decades of grid.
    """
    g = q.grid
    sel = g >= x_min
    g = g[sel]
    if g.size < 4 or math.log10((1 + g.max()) / (1 + g.min())) < 3 - 1e-9:
        raise InsufficientRangeError("decay fit needs a grid spanning three decades")
    d = np.abs(q.difference(g))
    ok = d > floor
    if ok.sum() <= d.size / 2:
        raise UnderflowError("differences are below the floor on most of the grid")
    slope = np.polyfit(np.log1p(g[ok]), np.log(d[ok]), 1)[0]
    return float(-slope)


def write_qiterate_csv(path, q):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "re_q", "im_q", "abs_q"])
        for x, v in zip(q.grid, q.values):
            w.writerow([repr(float(x)), repr(float(v.real)), repr(float(v.imag)), repr(float(abs(v)))])
