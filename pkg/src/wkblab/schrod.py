"""Integration of ``-y'' + W y = lam y`` and boundedness diagnostics.

The default integrator is a fourth-order Magnus scheme for the first-order
system ``(y, y')' = [[0, 1], [W - lam, 0]] (y, y')``.  Each step is an
exact 2x2 matrix exponential, so steps can span a sizeable fraction of a
wavelength and long ranges (``x ~ 1e4 - 1e6``) are cheap.  Step sizes are
adapted by comparing one step with two half steps.  An explicit
``DOP853`` integrator is available as ``method='rk'``.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .errors import (DomainError, GrowthOverflow, InsufficientRangeError,
                     IntegrationError, ResourceError)

__all__ = [
    "Trajectory",
    "integrate_eigenfunction",
    "propagate",
    "verify_residual",
    "BoundednessReport",
    "boundedness_metrics",
    "ScanRow",
    "ScanResult",
    "subordinacy_score",
    "subordinate_solution",
    "embedded_eigenvalue_scan",
    "write_trajectory_csv",
    "write_scan_csv",
]

_G = math.sqrt(3.0) / 6.0
OVERFLOW = 1e300
MAX_STEPS = 50_000_000
_trapz = getattr(np, "trapezoid", None) or np.trapz


def _magnus(W, lam, x, h):
    """Fourth-order Magnus propagators for steps ``[x, x + h]`` (arrays)."""
    x1 = x + (0.5 - _G) * h
    x2 = x + (0.5 + _G) * h
    w1 = W(x1) - lam
    w2 = W(x2) - lam
    a = (math.sqrt(3.0) / 12.0) * h * h * (w1 - w2)
    b = h
    c = 0.5 * h * (w1 + w2)
    z2 = a * a + b * c
    # exp([[a, b], [c, -a]]) = ch I + sh * Omega with Omega^2 = z2 I
    r = np.sqrt(np.abs(z2))
    with np.errstate(over="ignore", invalid="ignore"):
        ch = np.where(z2 >= 0, np.cosh(r), np.cos(r))
        small = r < 1e-4
        rs = np.where(small, 1.0, r)
        sh = np.where(z2 >= 0, np.sinh(r) / rs, np.sin(r) / rs)
        sh = np.where(small, 1.0 + z2 / 6.0 + z2 * z2 / 120.0, sh)
    M = np.empty(x.shape + (2, 2))
    M[..., 0, 0] = ch + sh * a
    M[..., 0, 1] = sh * b
    M[..., 1, 0] = sh * c
    M[..., 1, 1] = ch - sh * a
    return M


def _chain(M, y0):
    """States after each propagator: ``Y[0] = y0``, ``Y[j+1] = M[j] Y[j]``.

    Block-wise cumulative products keep the Python loop length near
    ``sqrt(n)``.
    """
    n = len(M)
    y0 = np.asarray(y0, dtype=complex)
    if n == 0:
        return y0[None, :].copy()
    B = max(1, int(math.sqrt(n)))
    nb = -(-n // B)
    pad = nb * B - n
    if pad:
        M = np.concatenate([M, np.broadcast_to(np.eye(2), (pad, 2, 2))])
    Mb = M.reshape(nb, B, 2, 2)
    P = np.empty((nb, B, 2, 2))
    P[:, 0] = Mb[:, 0]
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, B):
            P[:, j] = Mb[:, j] @ P[:, j - 1]
        starts = np.empty((nb + 1, 2), dtype=complex)
        starts[0] = y0
        for blk in range(nb):
            starts[blk + 1] = P[blk, -1] @ starts[blk]
        Y = np.einsum("bjkl,bl->bjk", P, starts[:-1]).reshape(-1, 2)[:n]
    return np.vstack([y0[None, :], Y])


def _initial_steps(W, lam, x0, x1, h_max):
    """Uniform steps between the breakpoints of ``W``."""
    lo, hi = min(x0, x1), max(x0, x1)
    bp = W.breakpoints(lo, hi) if hasattr(W, "breakpoints") else np.zeros(0)
    knots = np.unique(np.concatenate([[lo, hi], bp]))
    probe = np.linspace(lo, hi, 2049)
    scale = math.sqrt(max(lam, float(np.max(np.abs(W(probe) - lam))), 1e-300))
    h = min(h_max, 1.0 / scale) if h_max else 1.0 / scale
    seg = np.diff(knots)
    counts = np.maximum(1, np.ceil(seg / h).astype(np.int64))
    if counts.sum() > MAX_STEPS:
        raise ResourceError(f"more than {MAX_STEPS} steps required")
    hs = np.repeat(seg / counts, counts)
    starts = np.repeat(knots[:-1], counts) + (
        np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)) * hs
    if x1 < x0:
        starts = (starts + hs)[::-1]
        hs = -hs[::-1]
    return starts, hs


def _adaptive_steps(W, lam, x0, x1, tol, h_max, max_depth=30):
    xs, hs = _initial_steps(W, lam, x0, x1, h_max)
    L = max(abs(x1 - x0), 1.0)
    k = math.sqrt(lam)
    keep_x, keep_h, keep_M = [], [], []
    floor = 64 * np.finfo(float).eps
    for depth in range(max_depth + 1):
        if xs.size == 0:
            break
        M1 = _magnus(W, lam, xs, hs)
        Ma = _magnus(W, lam, xs, 0.5 * hs)
        Mb = _magnus(W, lam, xs + 0.5 * hs, 0.5 * hs)
        M2 = Mb @ Ma
        D = M2 - M1
        # compare in the scaled variables (y, y'/k)
        D[:, 0, 1] *= k
        D[:, 1, 0] /= k
        scale = np.maximum(1.0, np.abs(M2).max(axis=(1, 2)))
        err = np.abs(D).max(axis=(1, 2)) / scale
        ok = err <= np.maximum(tol * np.abs(hs) / L, floor)
        ok |= ~np.isfinite(err)  # overflow is reported by the caller
        if np.any(ok):
            keep_x += [xs[ok], xs[ok] + 0.5 * hs[ok]]
            keep_h += [0.5 * hs[ok]] * 2
            keep_M += [Ma[ok], Mb[ok]]
        bad = ~ok
        if not np.any(bad):
            xs = xs[:0]
            break
        hs_b = hs[bad]
        tiny = np.abs(hs_b) < 1e-12 * (1.0 + np.abs(xs[bad]))
        if np.any(tiny) or depth == max_depth:
            where = float(xs[bad][np.argmax(tiny)] if np.any(tiny) else xs[bad][0])
            raise IntegrationError(
                f"step size underflow near x={where:.6g}; the potential is too singular "
                "for the requested tolerance", location=where)
        xs = np.concatenate([xs[bad], xs[bad] + 0.5 * hs_b])
        hs = np.concatenate([0.5 * hs_b, 0.5 * hs_b])
        if keep_h and sum(a.size for a in keep_h) + xs.size > MAX_STEPS:
            raise ResourceError(f"more than {MAX_STEPS} steps required")
    x = np.concatenate(keep_x)
    h = np.concatenate(keep_h)
    M = np.concatenate(keep_M)
    order = np.argsort(x if x1 >= x0 else -x, kind="stable")
    return x[order], h[order], M[order]


def _check_growth(x, Y):
    mag = np.abs(Y).max(axis=1)
    bad = ~np.isfinite(mag) | (mag > OVERFLOW)
    if np.any(bad):
        j = int(np.argmax(bad))
        raise GrowthOverflow(
            f"|y| exceeded {OVERFLOW:.0e} near x={x[j]:.6g} (solution is not bounded)",
            location=float(x[j]))


def _propagate_magnus(W, lam, y0, x0, x1, tol, h_max):
    xs, hs, M = _adaptive_steps(W, lam, x0, x1, tol, h_max)
    Y = _chain(M, y0)
    x = np.concatenate([[x0], xs + hs])
    x[-1] = x1
    _check_growth(x, Y)
    return x, Y


def _propagate_rk(W, lam, y0, x0, x1, tol, h_max):
    def rhs(t, y):
        return np.array([y[1], (W(np.array([t]))[0] - lam) * y[0]])

    k = math.sqrt(lam)
    step = h_max if h_max else np.inf
    sol = solve_ivp(rhs, (x0, x1), np.asarray(y0, dtype=complex), method="DOP853",
                    rtol=tol, atol=tol * 1e-3, max_step=min(step, 1.0 / k))
    if not sol.success:
        loc = float(sol.t[-1])
        raise IntegrationError(f"integration failed near x={loc:.6g}: {sol.message}", location=loc)
    Y = sol.y.T
    _check_growth(sol.t, Y)
    return sol.t, Y


def propagate(W, lam, y0, x0, x1, tol=1e-10, method="magnus", h_max=None):
    """Solve from ``x0`` to ``x1`` (either direction).

    Returns
    -------
    x : ndarray
        Step points, starting at ``x0`` and ending at ``x1``.
    Y : ndarray, shape (len(x), 2)
        ``(y, y')`` at the step points.
    """
    if x1 == x0:
        return np.array([x0]), np.asarray(y0, dtype=complex)[None, :]
    if method == "magnus":
        return _propagate_magnus(W, lam, y0, x0, x1, tol, h_max)
    if method == "rk":
        return _propagate_rk(W, lam, y0, x0, x1, tol, h_max)
    raise DomainError(f"unknown method {method!r}")


@dataclass
class Trajectory:
    """Solution of the eigenfunction equation at one energy.

    Attributes
    ----------
    lam : float
    x : ndarray
        Strictly increasing grid.
    y, dy : ndarray
        Complex values of ``y`` and ``y'`` on ``x``.
    init : tuple
        ``(y(x0), y'(x0))``.
    meta : dict
        Method, tolerance, step count and the verification residual.
    """

    lam: float
    x: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    init: tuple
    meta: dict = field(default_factory=dict)

    @property
    def amp(self):
        return np.abs(self.y) ** 2 + np.abs(self.dy) ** 2 / self.lam

    @property
    def X(self):
        return float(self.x[-1])

    def state(self):
        return np.stack([self.y, self.dy], axis=1)


def _choose_method(W, lam, X):
    # a handful of wavelengths: explicit RK is accurate and cheap enough
    return "rk" if X * math.sqrt(lam) < 20.0 else "magnus"


def integrate_eigenfunction(W, lam, init, X_max, tol=1e-10, method="auto",
                            x0=0.0, h_max=None, verify=True):
    """Integrate ``-y'' + W y = lam y`` from ``x0`` to ``X_max``.

    Parameters
    ----------
    W : PotentialSpec
        Total potential.
    lam : float
        Energy, must be positive.
    init : pair of complex
        ``(y(x0), y'(x0))``.
    tol : float
        Target accuracy in ``[1e-13, 1e-6]``.
    method : {'auto', 'magnus', 'rk'}

    Raises
    ------
    GrowthOverflow
        ``|y|`` exceeded 1e300.
    IntegrationError
        Step size underflow at a strong singularity.
    """
    lam = float(lam)
    if not lam > 0:
        raise DomainError(f"lam must be positive, got {lam}")
    if not 1e-13 <= tol <= 1e-6:
        raise DomainError("tol must lie in [1e-13, 1e-6]")
    if not x0 < X_max < 1e7:
        raise DomainError("need x0 < X_max < 1e7")
    if method == "auto":
        method = _choose_method(W, lam, X_max - x0)
    y0 = np.asarray(init, dtype=complex)
    x, Y = propagate(W, lam, y0, x0, X_max, tol, method, h_max)
    traj = Trajectory(lam, x, Y[:, 0].copy(), Y[:, 1].copy(), (complex(y0[0]), complex(y0[1])),
                      {"method": method, "tol": tol, "steps": int(x.size - 1)})
    if verify:
        res = verify_residual(traj, W)
        traj.meta["residual"] = res
        traj.meta["verified"] = bool(res < 100 * tol)
    return traj


def verify_residual(traj, W, chunks=4, span=None):
    """Relative defect against an independent high-accuracy re-integration.

    ``chunks`` stretches of the trajectory (each at most ``span`` long,
    default 10 wavelengths) are re-integrated with ``DOP853`` at tight
    tolerance from the stored state; the largest relative mismatch in the
    scaled state ``(y, y'/sqrt(lam))`` is returned.
    """
    k = math.sqrt(traj.lam)
    if span is None:
        span = 10 * 2 * math.pi / k
    x = traj.x
    n = x.size
    picks = np.unique(np.linspace(0, n - 2, chunks).astype(int))
    worst = 0.0

    def rhs(t, y):
        return np.array([y[1], (W(np.array([t]))[0] - traj.lam) * y[0]])

    for i in picks:
        j = int(np.searchsorted(x, min(x[i] + span, x[-1]), side="right") - 1)
        j = max(j, i + 1)
        sol = solve_ivp(rhs, (x[i], x[j]), np.array([traj.y[i], traj.dy[i]]),
                        method="DOP853", rtol=1e-13, atol=1e-16 * max(1.0, abs(traj.y[i])))
        ref = sol.y[:, -1]
        got = np.array([traj.y[j], traj.dy[j]])
        d = np.array([abs(ref[0] - got[0]), abs(ref[1] - got[1]) / k])
        nrm = max(abs(got[0]), abs(got[1]) / k, 1e-300)
        worst = max(worst, float(d.max() / nrm))
    return worst


# ------------------------------------------------------------------ boundedness
@dataclass
class BoundednessReport:
    sup_amp: float
    growth_exponent: float
    window_ratios: np.ndarray
    windows: np.ndarray
    bounded: bool


def boundedness_metrics(traj, n_windows=None, min_windows=3):
    """Growth of ``amp`` over the dyadic windows ``[X/2^(j+1), X/2^j]``.

    The growth exponent is the least-squares slope of ``log(sup amp)``
    against ``log x`` over the windows; ``bounded`` requires a slope below
    0.05 and every consecutive window ratio below 2.

    Raises
    ------
    InsufficientRangeError
        when fewer than ``min_windows`` windows fit in the trajectory.
    """
    x = traj.x
    X = x[-1]
    lo = max(x[0], 0.0)
    # windows must start past the initial point and hold a few samples
    avail = int(math.floor(math.log2(X / lo))) if lo > 0 else 60
    nw = avail if n_windows is None else min(n_windows, avail)
    nw = min(nw, 8)
    if nw < min_windows:
        raise InsufficientRangeError(
            f"trajectory covers {nw} dyadic windows, need {min_windows}")
    amp = traj.amp
    sups, mids = [], []
    for j in range(nw - 1, -1, -1):
        a, b = X / 2 ** (j + 1), X / 2 ** j
        s = (x >= a) & (x <= b)
        if not np.any(s):
            raise InsufficientRangeError(f"no samples in window [{a:g}, {b:g}]")
        sups.append(float(amp[s].max()))
        mids.append(math.sqrt(a * b))
    sups = np.asarray(sups)
    mids = np.asarray(mids)
    slope = float(np.polyfit(np.log(mids), np.log(sups), 1)[0])
    rat = sups[1:] / sups[:-1]
    rat = np.maximum(rat, 1.0 / rat)
    bounded = slope < 0.05 and bool(np.all(rat < 2.0))
    wins = np.stack([mids / math.sqrt(2), mids * math.sqrt(2)], axis=1)
    return BoundednessReport(float(sups.max()), slope, rat, wins, bounded)


# ------------------------------------------------------- embedded eigenvalues
def subordinacy_score(W, lam, X_max, tol=1e-9, decade=10.0, return_init=False):
    """Minimum over initial conditions of ``<amp>[X/2, X] / <amp>[X/(2d), X/d]``.

    Mean ``amp`` over each window is a quadratic form in the initial data,
    so the minimum is the smallest generalized eigenvalue of the pair of
    2x2 Gram matrices.  Solutions are parametrized at ``X/d`` and
    integrated both ways from there, which keeps both Gram matrices well
    conditioned even when one solution grows strongly relative to the
    other.
    """
    xr = X_max / decade
    early = (X_max / (2 * decade), xr)
    late = (0.5 * X_max, X_max)
    grams = []
    sols = []
    for e in np.eye(2):
        xb, Yb = propagate(W, lam, e, xr, early[0], tol)
        xf, Yf = propagate(W, lam, e, xr, X_max, tol)
        sols.append(((xb, Yb), (xf, Yf)))
    for (lo, hi), which in ((early, 0), (late, 1)):
        S = []
        for s in sols:
            xs, Y = s[which]
            m = (xs >= lo - 1e-12) & (xs <= hi + 1e-12)
            xs, Y = xs[m], Y[m]
            if which == 0:
                xs, Y = xs[::-1], Y[::-1]
            S.append((xs, Y))
        G = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                xi, Yi = S[i]
                xj, Yj = S[j]
                if xi.size != xj.size or np.any(xi != xj):
                    Yj = np.stack([np.interp(xi, xj, Yj[:, c].real) for c in range(2)], axis=1)
                f = (Yi[:, 0] * np.conj(Yj[:, 0])).real + (Yi[:, 1] * np.conj(Yj[:, 1])).real / lam
                G[i, j] = _trapz(f, xi) / (xi[-1] - xi[0])
        grams.append(0.5 * (G + G.T))
    vals, vecs = sla.eigh(grams[1], grams[0])
    score = float(vals[0])
    if return_init:
        # state at X/d -> initial data at 0 is obtained by the caller if needed
        return score, vecs[:, 0]
    return score


def subordinate_solution(W, lam, X_max, tol=1e-10, decade=10.0):
    """Trajectory on ``[0, X_max]`` of the most subordinate solution.

    The minimizing combination from :func:`subordinacy_score` is carried
    back to the origin and integrated forward again, normalized so that
    ``|y(0)|^2 + |y'(0)|^2 / lam = 1``.
    """
    _, v = subordinacy_score(W, lam, X_max, tol, decade, return_init=True)
    xb, Yb = propagate(W, lam, v.astype(complex), X_max / decade, 0.0, tol)
    y0 = Yb[-1]
    y0 = y0 / math.sqrt(abs(y0[0]) ** 2 + abs(y0[1]) ** 2 / lam)
    return integrate_eigenfunction(W, lam, (y0[0].real, y0[1].real), X_max, tol)


@dataclass
class ScanRow:
    lam: float
    score: float
    verdict: str
    error: str = ""


@dataclass
class ScanResult:
    rows: list
    candidates: list

    @property
    def scores(self):
        return np.array([r.score for r in self.rows])


def _score_task(args):
    W, lam, X, tol, decade = args
    try:
        return subordinacy_score(W, lam, X, tol, decade), ""
    except Exception as exc:  # isolated per energy, reported in the row
        return math.nan, f"{type(exc).__name__}: {exc}"


def embedded_eigenvalue_scan(W, lam_grid, X_max, threshold=0.1, tol=1e-7,
                             decade=10.0, workers=1, refine=True):
    """Subordinacy scan over an energy grid.

    Every energy whose score falls below ``threshold`` is marked
    ``'subordinate'``.  A contiguous run of such grid points is the
    signature of a single eigenvalue seen through the finite range, so each
    run contributes one candidate: the grid point with the smallest score,
    marked ``'candidate'``.  With ``refine`` the candidate energy is then
    polished by a bounded scalar minimization of the score between the
    neighbouring grid points.

    Returns
    -------
    ScanResult
        ``rows`` in grid order and the list of candidate energies.
    """
    lam_grid = np.asarray(lam_grid, dtype=float)
    if np.any(lam_grid <= 0):
        raise DomainError("energies must be positive")
    tasks = [(W, float(l), float(X_max), tol, decade) for l in lam_grid]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_score_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        out = [_score_task(t) for t in tasks]
    rows = []
    for lam, (score, err) in zip(lam_grid, out):
        verdict = "error" if err else ("subordinate" if score < threshold else "regular")
        rows.append(ScanRow(float(lam), score, verdict, err))
    candidates = []
    i = 0
    while i < len(rows):
        if rows[i].verdict != "subordinate":
            i += 1
            continue
        j = i
        while j + 1 < len(rows) and rows[j + 1].verdict == "subordinate":
            j += 1
        best = min(range(i, j + 1), key=lambda t: rows[t].score)
        rows[best].verdict = "candidate"
        lam_c = rows[best].lam
        if refine and 0 < best < len(rows) - 1:
            lo, hi = rows[best - 1].lam, rows[best + 1].lam
            opt = minimize_scalar(lambda l: subordinacy_score(W, l, X_max, tol, decade),
                                  bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-6 * (hi - lo)})
            if opt.success and opt.fun <= rows[best].score:
                lam_c = float(opt.x)
        candidates.append(lam_c)
        i = j + 1
    return ScanResult(rows, candidates)


# -------------------------------------------------------------------- export
def write_trajectory_csv(path, traj, stride=1):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "re_y", "im_y", "re_dy", "im_dy", "amp"])
        amp = traj.amp
        for i in range(0, traj.x.size, stride):
            w.writerow([repr(float(traj.x[i])), repr(float(traj.y[i].real)),
                        repr(float(traj.y[i].imag)), repr(float(traj.dy[i].real)),
                        repr(float(traj.dy[i].imag)), repr(float(amp[i]))])


def write_scan_csv(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "score", "verdict"])
        for r in result.rows:
            w.writerow([repr(r.lam), repr(r.score), r.verdict])
