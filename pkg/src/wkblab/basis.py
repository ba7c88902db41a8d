"""Bounded solutions of the unperturbed equation ``-y'' + U y = lam y``.

Two constructions are provided: the free exponential
``theta = exp(i sqrt(lam) x)`` and, for periodic ``U``, the Floquet (Bloch)
solution built from the monodromy matrix over one period.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import BandEdgeError, ConfigurationError, DegenerateBasisError, DomainError

__all__ = [
    "ThetaBasis",
    "theta_basis",
    "monodromy",
    "wronskian",
    "wronskian_drift",
    "band_edges",
    "band_scan",
    "write_band_scan_csv",
    "EDGE_MARGIN",
]

EDGE_MARGIN = 1e-6
_RTOL = 1e-12


def _fundamental(U, lam, T, dense=False):
    """Cosine- and sine-type solutions over one period (real, 4 components)."""
    def rhs(x, y):
        q = float(U(np.array([x]))[0]) - lam
        return [y[1], q * y[0], y[3], q * y[2]]

    sol = solve_ivp(rhs, (0.0, T), [1.0, 0.0, 0.0, 1.0], method="DOP853",
                    rtol=_RTOL, atol=1e-14, dense_output=dense)
    if not sol.success:
        raise DomainError(f"period integration failed: {sol.message}")
    return sol


def monodromy(U, lam, T=None):
    """Transfer matrix over one period for ``(y, y')``.

    Returns a 2x2 array ``[[c(T), s(T)], [c'(T), s'(T)]]`` where ``c`` and
    ``s`` are the solutions with ``(c, c') = (1, 0)`` and ``(s, s') = (0, 1)``
    at the origin.
    """
    T = U.period if T is None else T
    if T is None:
        raise ConfigurationError("monodromy needs a periodic potential", key="T")
    yT = _fundamental(U, lam, T).y[:, -1]
    return np.array([[yT[0], yT[2]], [yT[1], yT[3]]])


@dataclass
class ThetaBasis:
    """Bounded solution family ``theta(x, lam)`` with its derivative.

    Attributes
    ----------
    lam : float
        Energy.
    kind : {'free', 'bloch'}
    imw : float
        ``Im(theta * conj(theta'))``, constant in ``x``.
    bound : float
        Supremum of ``|theta|`` (1 for both constructions).
    period, multiplier, trace, monodromy_matrix :
        Floquet data, ``None`` for the free kind.
    """

    lam: float
    kind: str
    imw: float
    bound: float = 1.0
    period: float | None = None
    multiplier: complex | None = None
    trace: float | None = None
    monodromy_matrix: np.ndarray | None = field(default=None, repr=False)
    _coef: tuple = field(default=(), repr=False)
    _sol: object = field(default=None, repr=False)

    @property
    def k(self):
        return math.sqrt(self.lam)

    def eval(self, x):
        """Return ``(theta(x), theta'(x))`` as complex arrays."""
        x = np.asarray(x, dtype=float)
        if self.kind == "free":
            th = np.exp(1j * self.k * x)
            return th, 1j * self.k * th
        T = self.period
        n = np.floor(x / T)
        r = x - n * T
        # keep r inside [0, T] despite rounding
        r = np.clip(r, 0.0, T)
        Y = self._sol.sol(r.ravel())
        a, b = self._coef
        th = (a * Y[0] + b * Y[2]).reshape(x.shape)
        dth = (a * Y[1] + b * Y[3]).reshape(x.shape)
        phase = np.exp(1j * np.angle(self.multiplier) * n)
        return phase * th, phase * dth

    __call__ = eval

    def abs2(self, x):
        th, _ = self.eval(x)
        return np.abs(th) ** 2


def theta_basis(kind, U=None, lam=1.0, *, margin=EDGE_MARGIN):
    """Build the bounded basis for energy ``lam``.

    Parameters
    ----------
    kind : {'free', 'bloch'}
    U : PotentialSpec, optional
        Periodic background, required for ``'bloch'``.
    lam : float
        Energy, must be positive.

    Raises
    ------
    DomainError
        ``lam <= 0``.
    BandEdgeError
        ``|trace| > 2 - margin``: ``lam`` is at or outside a band edge.
    """
    lam = float(lam)
    if not lam > 0:
        raise DomainError(f"lam must be positive, got {lam}")
    if kind == "free":
        return ThetaBasis(lam=lam, kind="free", imw=-math.sqrt(lam))
    if kind != "bloch":
        raise ConfigurationError(f"unknown basis kind {kind!r}", key="basis")
    if U is None or U.period is None:
        raise ConfigurationError("bloch basis needs a periodic U", key="U")
    T = U.period
    sol = _fundamental(U, lam, T, dense=True)
    yT = sol.y[:, -1]
    M = np.array([[yT[0], yT[2]], [yT[1], yT[3]]])
    D = float(np.trace(M))
    if abs(D) > 2.0 - margin:
        raise BandEdgeError(
            f"lam={lam:g} is not inside a band (|trace|={abs(D):.10f})", trace=D)
    phi = math.acos(D / 2.0)
    best = None
    for sgn in (1.0, -1.0):
        rho = complex(math.cos(phi), sgn * math.sin(phi))
        # (M - rho) v = 0
        if abs(M[0, 1]) >= abs(M[1, 0]):
            v = np.array([M[0, 1], rho - M[0, 0]], dtype=complex)
        else:
            v = np.array([rho - M[1, 1], M[1, 0]], dtype=complex)
        w = (v[0] * np.conj(v[1])).imag
        if w < 0:
            best = (rho, v)
            break
    if best is None:
        raise DegenerateBasisError("Floquet eigenvectors are linearly dependent")
    rho, v = best
    # normalize: sup of |theta| over one period equals 1
    r = np.linspace(0.0, T, 4097)
    Y = sol.sol(r)
    th = v[0] * Y[0] + v[1] * Y[2]
    j = int(np.argmax(np.abs(th)))
    lo, hi = r[max(j - 1, 0)], r[min(j + 1, r.size - 1)]
    rr = np.linspace(lo, hi, 257)
    Yr = sol.sol(rr)
    peak = np.max(np.abs(v[0] * Yr[0] + v[1] * Yr[2]))
    v = v / max(peak, np.max(np.abs(th)))
    imw = float((v[0] * np.conj(v[1])).imag)
    if abs(imw) < 1e-12:
        raise DegenerateBasisError("Im(theta conj(theta')) vanishes")
    return ThetaBasis(lam=lam, kind="bloch", imw=imw, bound=1.0, period=T,
                      multiplier=rho, trace=D, monodromy_matrix=M,
                      _coef=(v[0], v[1]), _sol=sol)


def wronskian(basis, x):
    """``theta * conj(theta') - theta' * conj(theta)`` (purely imaginary)."""
    th, dth = basis.eval(x)
    return th * np.conj(dth) - dth * np.conj(th)


def wronskian_drift(basis, x_grid):
    """Largest relative deviation of the Wronskian from its value at 0.

    Raises
    ------
    DegenerateBasisError
        when ``|W(0)| < 1e-12``.
    """
    W0 = wronskian(basis, np.array([0.0]))[0]
    if abs(W0) < 1e-12:
        raise DegenerateBasisError(f"|W(0)| = {abs(W0):.3e} is below 1e-12")
    W = wronskian(basis, np.asarray(x_grid, dtype=float))
    return float(np.max(np.abs(W - W0)) / abs(W0))


def _trace(U, lam):
    return float(np.trace(monodromy(U, lam)))


def band_edges(U, lam_lo, lam_hi, n=400, tol=1e-8):
    """Energies in ``[lam_lo, lam_hi]`` where ``|trace| = 2``.

    The trace is sampled on ``n`` points and every crossing of ``+-2`` is
    refined by bisection to width ``tol``.  Edges of bands that close up
    between two samples may be missed; increase ``n`` for narrow gaps.
    """
    lams = np.linspace(lam_lo, lam_hi, n)
    f = np.array([abs(_trace(U, l)) - 2.0 for l in lams])
    edges = []
    for i in range(n - 1):
        if f[i] == 0.0:
            edges.append(float(lams[i]))
            continue
        if f[i] * f[i + 1] < 0:
            a, b, fa = lams[i], lams[i + 1], f[i]
            while b - a > tol:
                m = 0.5 * (a + b)
                fm = abs(_trace(U, m)) - 2.0
                if fm == 0.0:
                    a = b = m
                    break
                if (fm < 0) == (fa < 0):
                    a, fa = m, fm
                else:
                    b = m
            edges.append(float(0.5 * (a + b)))
    return edges


@dataclass
class BandRow:
    lam: float
    trace: float
    in_band: bool


def band_scan(U, lam_grid, margin=EDGE_MARGIN):
    """Trace of the monodromy and in-band flag for each energy."""
    rows = []
    for lam in np.asarray(lam_grid, dtype=float):
        D = _trace(U, lam)
        rows.append(BandRow(float(lam), D, abs(D) <= 2.0 - margin))
    return rows


def write_band_scan_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "trace", "in_band"])
        for r in rows:
            w.writerow([repr(r.lam), repr(r.trace), int(r.in_band)])
