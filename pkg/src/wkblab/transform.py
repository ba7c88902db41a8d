"""Phase function, WKB prediction and the chain of changes of variables.

With ``theta`` a bounded solution of the unperturbed equation and
``w = Im(theta conj(theta'))`` the stages are

``y2``
    variation of parameters, ``(y, y') = Phi y2`` with
    ``Phi = [[theta, conj(theta)], [theta', conj(theta')]]``;
``y3``
    ``y2 = diag(e^{ip}, e^{-ip}) y3`` with the phase
    ``p(x) = (1 / 2w) int_0^x V |theta|^2``;
``y4``
    ``y3 = (1 - |q|^2)^{-1/2} (I + Q) y4`` with ``Q = [[0, q], [conj(q), 0]]``.

Writing ``c = i / (2w)`` and ``a = V conj(theta)^2 e^{-2ip}``, the ``y3``
system is ``y3' = [[0, c a], [-c conj(a), 0]] y3``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConditioningError, DomainError, InsufficientRangeError, SingularTransformError
from .quadrature import LegendreMesh, cell_integrals

__all__ = [
    "PhaseAccumulator",
    "phase_p",
    "wkb_predict",
    "kernel_a",
    "StageTrajectory",
    "transform_chain",
    "stage_matrix",
    "stage_residual",
    "cumbersome_phase",
    "Deviation",
    "wkb_deviation",
    "write_deviation_csv",
]

STAGES = ("y1", "y2", "y3", "y4")


class PhaseAccumulator:
    """Running integral ``F(x) = int_0^x V |theta|^2`` with lazy extension.

    Cell totals come from adaptive Gauss quadrature at relative tolerance
    ``rtol`` (with grading at singular points of ``V``); values inside a
    cell use the Legendre interpolant of the integrand.  The cache grows
    geometrically when points beyond it are requested.
    """

    def __init__(self, basis, V, rtol=1e-10, order=16):
        self.basis = basis
        self.V = V
        self.rtol = rtol
        self.order = order
        self._segs = []
        self._hi = 0.0
        self._zero = V.is_zero
        width = 1.0
        if basis.kind == "bloch":
            width = min(width, basis.period / 8.0)
        width = min(width, math.pi / (2.0 * math.sqrt(basis.lam)) * 4.0)
        self._width = width

    def _integrand(self, x):
        return self.V(x) * self.basis.abs2(x)

    def _extend(self, X):
        lo = self._hi
        hi = max(float(X), 2.0 * lo, 16.0)
        n = max(1, int(math.ceil((hi - lo) / self._width)))
        edges = np.linspace(lo, hi, n + 1)
        bp = self.V.breakpoints(lo, hi)
        sing = self.V.singular_points()
        if bp.size or len(sing):
            edges = np.unique(np.concatenate([edges, bp, np.asarray(sing, dtype=float)]))
            edges = edges[(edges >= lo) & (edges <= hi)]
        mesh = LegendreMesh(edges, self.order)
        vals = self._integrand(mesh.nodes.ravel()).reshape(mesh.ncell, self.order)
        totals = cell_integrals(self._integrand, edges, rtol=self.rtol,
                                singular_points=[s for s in sing if lo <= s <= hi])
        offset = self._segs[-1][3][-1] if self._segs else 0.0
        cum = offset + np.concatenate([[0.0], np.cumsum(totals)])
        self._segs.append((lo, hi, mesh, cum, vals, mesh.coefficients(vals)))
        self._hi = hi

    def integral(self, x):
        """``int_0^x V |theta|^2`` (vectorized)."""
        x = np.asarray(x, dtype=float)
        if self._zero:
            return np.zeros(x.shape)
        if np.any(x < 0):
            raise DomainError("phase is defined for x >= 0")
        xmax = float(x.max()) if x.size else 0.0
        while xmax > self._hi:
            self._extend(xmax)
        out = np.empty(x.shape)
        flat = x.ravel()
        res = np.empty(flat.size)
        for lo, hi, mesh, cum, vals, coef in self._segs:
            sel = (flat >= lo) & (flat <= hi)
            if not np.any(sel):
                continue
            cell, s = mesh.locate(flat[sel])
            part = mesh._partial_from_left(coef, cell, s)
            res[sel] = cum[cell] + part
        out[...] = res.reshape(x.shape)
        return out

    def between(self, x1, x2):
        return self.integral(x2) - self.integral(x1)

    def __call__(self, x):
        """The phase ``p(x) = F(x) / (2 w)``."""
        return self.integral(x) / (2.0 * self.basis.imw)


def phase_p(acc, x):
    """Phase ``p(x, lam) = (1 / (2 Im(theta conj(theta')))) int_0^x V |theta|^2``."""
    return acc(x)


def wkb_predict(basis, V, x, acc=None):
    """WKB solution ``theta(x) exp(i p(x))``."""
    acc = PhaseAccumulator(basis, V) if acc is None else acc
    th, _ = basis.eval(x)
    return th * np.exp(1j * acc(x))


def kernel_a(basis, V, acc, x):
    """``a(x) = V conj(theta)^2 exp(-2ip)`` and ``c = i / (2w)``."""
    th, _ = basis.eval(x)
    a = V(x) * np.conj(th) ** 2 * np.exp(-2j * acc(x))
    return a, 1j / (2.0 * basis.imw)


def _q_eval(q, x):
    out = q(x)
    if isinstance(out, tuple):
        return out
    raise TypeError("q handle must return (q, dq)")


@dataclass
class StageTrajectory:
    """A trajectory expressed in one of the stage variables."""

    stage: str
    lam: float
    x: np.ndarray
    Y: np.ndarray
    meta: dict = field(default_factory=dict)


def _phi_inv_apply(th, dth, w, Y):
    det = 2j * w
    y, dy = Y[:, 0], Y[:, 1]
    return np.stack([(np.conj(dth) * y - np.conj(th) * dy) / det,
                     (-dth * y + th * dy) / det], axis=1)


def _phi_apply(th, dth, Y):
    return np.stack([th * Y[:, 0] + np.conj(th) * Y[:, 1],
                     dth * Y[:, 0] + np.conj(dth) * Y[:, 1]], axis=1)


def _check_q(q, x):
    m = np.abs(q)
    if np.any(m >= 1.0):
        j = int(np.argmax(m >= 1.0))
        raise SingularTransformError(f"|q| = {m[j]:.4g} >= 1 at x={x[j]:.6g}", location=float(x[j]))


def transform_chain(traj, basis, V, stage="y4", q=None, direction="forward", acc=None):
    """Move a trajectory between ``y1 = (y, y')`` and a stage variable.

    Parameters
    ----------
    traj : Trajectory or StageTrajectory
        ``forward`` takes a :class:`~wkblab.schrod.Trajectory` (stage ``y1``)
        and returns the requested stage.  ``backward`` takes a
        :class:`StageTrajectory` and returns the ``y1`` representation.
    q : callable, optional
        Returns ``(q(x), q'(x))``; required for stage ``y4``.

    Raises
    ------
    SingularTransformError
        ``|q| >= 1`` somewhere on the grid.
    DomainError
        Energy mismatch between trajectory and basis.
    """
    if abs(traj.lam - basis.lam) > 1e-12 * basis.lam:
        raise DomainError(f"trajectory energy {traj.lam} differs from basis energy {basis.lam}")
    acc = PhaseAccumulator(basis, V) if acc is None else acc
    if stage not in STAGES[1:]:
        raise DomainError(f"unknown stage {stage!r}")
    if stage == "y4" and q is None:
        raise DomainError("stage y4 needs a q handle")
    x = traj.x
    th, dth = basis.eval(x)
    w = basis.imw
    depth = STAGES.index(stage)
    if direction == "forward":
        Y = np.stack([traj.y, traj.dy], axis=1)
        Y = _phi_inv_apply(th, dth, w, Y)
        if depth >= 2:
            e = np.exp(1j * acc(x))
            Y = np.stack([Y[:, 0] / e, Y[:, 1] * e], axis=1)
        if depth >= 3:
            qv, _ = _q_eval(q, x)
            _check_q(qv, x)
            s = 1.0 / np.sqrt(1.0 - np.abs(qv) ** 2)
            Y = s[:, None] * np.stack([Y[:, 0] - qv * Y[:, 1], -np.conj(qv) * Y[:, 0] + Y[:, 1]], axis=1)
        return StageTrajectory(stage, traj.lam, x, Y)
    if direction != "backward":
        raise DomainError(f"unknown direction {direction!r}")
    if getattr(traj, "stage", None) != stage:
        raise DomainError("backward transform needs a StageTrajectory of the requested stage")
    Y = traj.Y
    if depth >= 3:
        qv, _ = _q_eval(q, x)
        _check_q(qv, x)
        s = 1.0 / np.sqrt(1.0 - np.abs(qv) ** 2)
        Y = s[:, None] * np.stack([Y[:, 0] + qv * Y[:, 1], np.conj(qv) * Y[:, 0] + Y[:, 1]], axis=1)
    if depth >= 2:
        e = np.exp(1j * acc(x))
        Y = np.stack([Y[:, 0] * e, Y[:, 1] / e], axis=1)
    Y = _phi_apply(th, dth, Y)
    from .schrod import Trajectory
    return Trajectory(traj.lam, x, Y[:, 0].copy(), Y[:, 1].copy(), (complex(Y[0, 0]), complex(Y[0, 1])),
                      {"from_stage": stage})


def stage_matrix(stage, x, basis, V, acc, q=None):
    """Coefficient matrices ``A(x)`` of the stage system ``Y' = A Y``.

    ``stage`` is one of ``'y2'``, ``'y3'``, ``'y4'``.

    Returns an array of shape ``x.shape + (2, 2)``.  For ``y4`` the
    diagonal is purely imaginary by construction.
    """
    x = np.asarray(x, dtype=float)
    A = np.zeros(x.shape + (2, 2), dtype=complex)
    c = 1j / (2.0 * basis.imw)
    th, _ = basis.eval(x)
    Vx = V(x)
    if stage == "y2":
        m = np.abs(th) ** 2
        A[..., 0, 0] = c * Vx * m
        A[..., 0, 1] = c * Vx * np.conj(th) ** 2
        A[..., 1, 0] = -c * Vx * th ** 2
        A[..., 1, 1] = -c * Vx * m
        return A
    a = Vx * np.conj(th) ** 2 * np.exp(-2j * acc(x))
    if stage == "y3":
        A[..., 0, 1] = c * a
        A[..., 1, 0] = -c * np.conj(a)
        return A
    if stage != "y4":
        raise DomainError(f"unknown stage {stage!r}")
    qv, dq = _q_eval(q, x)
    g = 1.0 / (1.0 - np.abs(qv) ** 2)
    cross = c * (2.0 * (a * np.conj(qv)).real)  # purely imaginary
    skew = qv * np.conj(dq)                       # (z - conj z)/2 = i Im z
    A[..., 0, 0] = g * (cross + 1j * skew.imag)
    A[..., 1, 1] = -A[..., 0, 0]
    A[..., 0, 1] = g * (c * a - dq + c * np.conj(a) * qv ** 2)
    A[..., 1, 0] = -g * (c * np.conj(a) + c * a * np.conj(qv) ** 2 + np.conj(dq))
    return A


def stage_residual(st, basis, V, acc, q=None, chunks=4, span=None, rtol=1e-12):
    """Relative mismatch between a stage trajectory and its own ODE.

    Short stretches are re-integrated from the stored values with the
    stage coefficient matrix (``DOP853``); the worst relative difference
    at the stretch ends is returned.
    """
    x = st.x
    n = x.size
    if span is None:
        span = 10.0 * 2 * math.pi / math.sqrt(basis.lam)
    picks = np.unique(np.linspace(0, n - 2, chunks).astype(int))
    worst = 0.0

    def rhs(t, y):
        A = stage_matrix(st.stage, np.array([t]), basis, V, acc, q)[0]
        return A @ y

    for i in picks:
        j = int(np.searchsorted(x, min(x[i] + span, x[-1]), side="right") - 1)
        j = max(j, i + 1)
        sol = solve_ivp(rhs, (x[i], x[j]), st.Y[i].astype(complex), method="DOP853",
                        rtol=rtol, atol=1e-15 * max(1.0, np.abs(st.Y[i]).max()))
        ref = sol.y[:, -1]
        nrm = max(np.abs(st.Y[j]).max(), 1e-300)
        worst = max(worst, float(np.abs(ref - st.Y[j]).max() / nrm))
    return worst


def cumbersome_phase(x, basis, V, acc, q, order=16):
    """``Im int_0^x A11`` for the ``y4`` system (``A11`` is imaginary).

    This is the exponent that multiplies the WKB form once the
    off-diagonal coupling has been made integrable; it converges as
    ``x -> inf`` when the iteration is deep enough.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    hi = float(x.max())
    edges = np.linspace(0.0, hi, max(2, int(math.ceil(hi)) + 1))
    bp = V.breakpoints(0.0, hi)
    if bp.size:
        edges = np.unique(np.concatenate([edges, bp]))
    mesh = LegendreMesh(edges, order)
    A = stage_matrix("y4", mesh.nodes.ravel(), basis, V, acc, q)
    vals = A[:, 0, 0].imag.reshape(mesh.ncell, order)
    return mesh.cumulative(vals, x)


# ------------------------------------------------------------------- deviation
@dataclass
class Deviation:
    """Window-wise WKB coefficients of a trajectory.

    ``c1``, ``c2`` are the complex least-squares coefficients on the window
    ``[x/2, x]`` ending at each ``x``; ``residual`` is the relative fit
    residual.  ``variation`` is the spread of ``|c1|`` and ``|c2|`` over
    the last decade relative to the norm of ``(|c1|, |c2|)`` at the end;
    ``phase_drift`` is the spread of the unwrapped ``arg c1`` over the same
    range.
    """

    x: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    residual: np.ndarray
    variation: tuple
    phase_drift: float
    stable: bool
    meta: dict = field(default_factory=dict)

    def drift_over(self, lo, hi, extra_phase=None):
        """Spread of ``arg c1`` over windows ending in ``[lo, hi]``.

        ``extra_phase`` (evaluated at the window ends) is subtracted first,
        e.g. a higher-order phase correction.
        """
        sel = (self.x >= lo) & (self.x <= hi)
        if not np.any(sel):
            raise InsufficientRangeError("no windows in the requested range")
        ph = np.unwrap(np.angle(self.c1[sel]))
        if extra_phase is not None:
            ph = ph - np.asarray(extra_phase)[sel]
        return float(ph.max() - ph.min())


def wkb_deviation(traj, basis, V, acc=None, tol=0.05, min_samples=32,
                  steps_per_octave=4, decade=10.0, cond_max=1e8, max_samples=4096):
    """Fit ``y = c1 w + c2 conj(w)`` with ``w = theta e^{ip}`` on sliding windows.

    Windows are ``[x/2, x]`` with ``x`` running down from the end of the
    trajectory in steps of ``2^(1/steps_per_octave)``; each must hold at
    least ``min_samples`` points; windows holding more than ``max_samples``
    points are thinned by a uniform index stride.  The verdict ``stable`` holds when the
    variation of ``|c1|`` and ``|c2|`` over the last decade is below ``tol``.

    Raises
    ------
    InsufficientRangeError
        fewer than three dyadic windows fit.
    ConditioningError
        ``w`` and ``conj(w)`` nearly parallel on a window.
    """
    acc = PhaseAccumulator(basis, V) if acc is None else acc
    x = traj.x
    X = x[-1]
    x_lo = max(x[0], 1e-300)
    n_oct = math.log2(X / x_lo) if x[0] > 0 else 60.0
    if n_oct < 3:
        raise InsufficientRangeError("need at least three dyadic windows")
    ends = X * 2.0 ** (-np.arange(0, int(steps_per_octave * (min(n_oct, 40) - 1)) + 1) / steps_per_octave)
    ends = ends[::-1]
    picks = []
    for e in ends:
        i0 = np.searchsorted(x, e / 2, side="left")
        i1 = np.searchsorted(x, e, side="right")
        if i1 - i0 < min_samples:
            picks.append(None)
            continue
        picks.append(np.arange(i0, i1, max(1, (i1 - i0) // max_samples)))
    used = np.unique(np.concatenate([p for p in picks if p is not None] or [np.zeros(0, int)]))
    wv_used = wkb_predict(basis, V, x[used], acc)
    y = traj.y
    xs, c1s, c2s, res = [], [], [], []
    for e, sel in zip(ends, picks):
        if sel is None:
            continue
        w = wv_used[np.searchsorted(used, sel)]
        A = np.stack([w, np.conj(w)], axis=1)
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] <= 0 or sv[0] / sv[-1] > cond_max:
            raise ConditioningError(
                f"WKB fit ill-conditioned on [{e / 2:.4g}, {e:.4g}] (cond={sv[0] / max(sv[-1], 1e-300):.3g})")
        coef, *_ = np.linalg.lstsq(A, y[sel], rcond=None)
        r = y[sel] - A @ coef
        xs.append(e)
        c1s.append(coef[0])
        c2s.append(coef[1])
        res.append(float(np.linalg.norm(r) / max(np.linalg.norm(y[sel]), 1e-300)))
    if len(xs) < 2 * steps_per_octave + 1:
        raise InsufficientRangeError("too few populated windows for a deviation curve")
    xs = np.asarray(xs)
    c1s = np.asarray(c1s)
    c2s = np.asarray(c2s)
    res = np.asarray(res)
    last = xs >= X / decade
    ref = math.hypot(abs(c1s[-1]), abs(c2s[-1]))
    ref = ref if ref > 0 else 1.0
    v1 = float(np.ptp(np.abs(c1s[last])) / ref)
    v2 = float(np.ptp(np.abs(c2s[last])) / ref)
    ph = np.unwrap(np.angle(c1s[last]))
    drift = float(ph.max() - ph.min())
    stable = v1 < tol and v2 < tol
    return Deviation(xs, c1s, c2s, res, (v1, v2), drift, stable,
                     {"lam": traj.lam, "windows": int(xs.size)})


def write_deviation_csv(path, dev):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "abs_c1", "abs_c2", "residual"])
        for i in range(dev.x.size):
            w.writerow([repr(float(dev.x[i])), repr(float(abs(dev.c1[i]))),
                        repr(float(abs(dev.c2[i]))), repr(float(dev.residual[i]))])
