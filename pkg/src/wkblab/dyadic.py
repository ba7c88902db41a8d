"""Mass-bisection dyadic families of intervals.

For a normalizing function ``f`` the family ``E(m, l)``, ``m = 0..M``,
``l = 1..2^m``, is built by splitting every interval into a left and a
right part of equal mass.  Lower ``l`` lies to the left.  Intervals are
half open, ``(lo, hi]``, except that the first interval of each generation
also contains the left end point.

Two mass notions are supported: ``'lp'`` uses ``int_E |f|^p`` and
``'lp_l1'`` uses ``sum_n (int_{E cap [n, n+1)} |f|)^p``, which is only
subadditive under splitting.  Masses are reported for ``f`` scaled to unit
norm, so every node of generation ``m`` has mass at most ``2^-m``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .stepfn import StepFunction

__all__ = [
    "DyadicTree",
    "build_tree",
    "node_masses",
    "IdentityReport",
    "decomposition_identity_check",
    "dump_tree_json",
    "load_tree_json",
]

MAX_DEPTH = 24


class _Mass:
    """Mass of ``(a, b]`` for a step function, vectorized over intervals."""

    def __init__(self, f, p, kind, X):
        self.p = p
        self.kind = kind
        g = f.refine(np.arange(0.0, math.floor(X) + 1.0)) if kind == "lp_l1" else f
        self.f = g
        if kind == "lp":
            self._cum = lambda x: g.cumulative(x, p)
        else:
            self._l1 = lambda x: g.cumulative(x, 1.0)
            n = int(math.ceil(X))
            cells = self._l1(np.arange(1, n + 1, dtype=float)) - self._l1(np.arange(0, n, dtype=float))
            self._cellp = np.concatenate([[0.0], np.cumsum(cells ** p)])
            self._ncell = n

    def __call__(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind == "lp":
            return np.maximum(self._cum(b) - self._cum(a), 0.0)
        p = self.p
        na = np.floor(a)
        nb = np.floor(b)
        same = na == nb
        out = np.empty(np.broadcast(a, b).shape)
        # both ends in one unit cell
        part = self._l1(b) - self._l1(a)
        out[...] = np.where(same, np.maximum(part, 0.0) ** p, 0.0)
        # first partial cell, whole cells, last partial cell
        first = np.maximum(self._l1(np.minimum(na + 1, b)) - self._l1(a), 0.0) ** p
        ia = np.clip((na + 1).astype(np.int64), 0, self._ncell)
        ib = np.clip(nb.astype(np.int64), 0, self._ncell)
        whole = self._cellp[np.maximum(ib, ia)] - self._cellp[ia]
        last = np.maximum(self._l1(b) - self._l1(np.maximum(nb, a)), 0.0) ** p
        out = np.where(same, out, first + whole + last)
        return out


@dataclass
class DyadicTree:
    """Nested interval family with per-node masses.

    Attributes
    ----------
    norm_kind : {'lp', 'lp_l1'}
    p : float
    depth : int
    X_max : float
    lo, hi, mass : list of ndarray
        Per generation ``m`` arrays of length ``2^m``.
    scale : float
        ``||f||`` (in the tree's norm); masses refer to ``f / scale``.
    """

    norm_kind: str
    p: float
    depth: int
    X_max: float
    lo: list
    hi: list
    mass: list
    scale: float
    f: StepFunction = field(repr=False, default=None)

    def node(self, m, l):
        """``(lo, hi, mass)`` of ``E(m, l)`` with ``l`` starting at 1."""
        return float(self.lo[m][l - 1]), float(self.hi[m][l - 1]), float(self.mass[m][l - 1])

    def locate(self, m, x):
        """Index ``l`` (1-based) of the generation-``m`` interval containing ``x``."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.hi[m], x, side="left")
        # the rightmost interval absorbs everything beyond X_max
        return np.clip(idx, 0, 2 ** m - 1) + 1

    def records(self):
        out = []
        for m in range(self.depth + 1):
            for l in range(2 ** m):
                out.append({"m": m, "l": l + 1, "lo": float(self.lo[m][l]),
                            "hi": float(self.hi[m][l]), "mass": float(self.mass[m][l])})
        return out


def build_tree(f, p=1.0, depth=8, norm_kind="lp", X_max=None, tol=1e-15):
    """Mass-bisection tree for the step function ``f`` on ``[0, X_max]``.

    In ``'lp'`` mode the split point of ``(a, b]`` is the leftmost ``s`` with
    ``mass(a, s) = mass(a, b) / 2`` (exact for step functions).  In
    ``'lp_l1'`` mode ``s`` is found by bisection so that
    ``mass(a, s) = mass(a, b) / 2``; the right part then carries at most
    half of the parent's mass.  Splits are exact inside grid cells, so no
    depth clipping is needed for coarse step functions.

    Raises
    ------
    DomainError
        zero total mass, ``depth`` outside ``[0, 24]``, bad ``norm_kind``.
    """
    if not 0 <= depth <= MAX_DEPTH or int(depth) != depth:
        raise DomainError(f"depth must be an integer in [0, {MAX_DEPTH}]")
    if norm_kind not in ("lp", "lp_l1"):
        raise DomainError(f"unknown norm kind {norm_kind!r}")
    if p < 1:
        raise DomainError("p must be >= 1")
    X = float(f.edges[-1]) if X_max is None else float(X_max)
    if f.edges[0] < 0 or X <= 0:
        raise DomainError("f must live on [0, X_max] with X_max > 0")
    mass = _Mass(f, p, norm_kind, X)
    total = float(mass(np.array(0.0), np.array(X)))
    if not total > 0:
        raise DomainError("f has zero mass; the tree is undefined")
    los = [np.array([0.0])]
    his = [np.array([X])]
    masses = [np.array([1.0])]
    for m in range(1, depth + 1):
        a, b = los[-1], his[-1]
        half = 0.5 * mass(a, b)
        if norm_kind == "lp":
            s = _invert_lp(mass, a, b, half)
        else:
            s = _bisect(mass, a, b, half, tol)
        lo = np.empty(2 * a.size)
        hi = np.empty(2 * a.size)
        lo[0::2], hi[0::2] = a, s
        lo[1::2], hi[1::2] = s, b
        los.append(lo)
        his.append(hi)
        masses.append(mass(lo, hi) / total)
    return DyadicTree(norm_kind, float(p), int(depth), X, los, his, masses,
                      total ** (1.0 / p), f)


def _invert_lp(mass, a, b, half):
    g = mass.f
    dens = np.abs(g.values) ** mass.p
    cum = np.concatenate([[0.0], np.cumsum(dens * g.widths)])
    target = mass._cum(a) + half
    # leftmost cell edge index where the cumulative reaches the target
    j = np.searchsorted(cum, target, side="left")
    j = np.clip(j, 1, cum.size - 1)
    i = j - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        s = g.edges[i] + np.where(dens[i] > 0, (target - cum[i]) / dens[i], 0.0)
    s = np.where(target <= cum[i], g.edges[i], s)
    s = np.clip(s, a, b)
    # leftmost admissible point: skip back over zero-density cells
    return np.where(half <= 0, a, s)


def _bisect(mass, a, b, half, tol):
    lo = a.copy()
    hi = b.copy()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        left = mass(a, mid)
        go_right = left < half
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(hi))):
            break
    return hi


def node_masses(tree, g):
    """Masses of every node for another function ``g`` (same norm, same scale).

    When ``|g| <= |f|`` pointwise the masses obey the same ``2^-m`` bound.
    """
    mass = _Mass(g, tree.p, tree.norm_kind, tree.X_max)
    tot = tree.scale ** tree.p
    return [mass(tree.lo[m], tree.hi[m]) / tot for m in range(tree.depth + 1)]


@dataclass
class IdentityReport:
    max_error: float
    pairs: int
    excluded: int


def decomposition_identity_check(tree, f, x1, x2=None):
    """Compare both sides of the pair-splitting identity on a grid of pairs.

    For ``x1 < x2`` the left side is ``f(x1) f(x2)``; the right side is
    ``f(x1) f(x2)`` times the number of ``(m, l)``, ``l`` odd, with
    ``x1 in E(m, l)`` and ``x2 in E(m, l+1)``.  Pairs whose separating mass
    does not exceed ``2^-depth`` are not resolved by a finite tree and are
    excluded (and counted).

    Raises
    ------
    DomainError
        when ``f`` is not the tree's normalizer.
    """
    tf = tree.f
    if tf is None or tf.edges.shape != f.edges.shape or not (
            np.array_equal(tf.edges, f.edges) and np.array_equal(tf.values, f.values)):
        raise DomainError("f is not the normalizer this tree was built from")
    x1 = np.asarray(x1, dtype=float)
    x2 = x1 if x2 is None else np.asarray(x2, dtype=float)
    A, B = np.meshgrid(x1, x2, indexing="ij")
    A = A.ravel()
    B = B.ravel()
    fa = f(A)
    fb = f(B)
    lhs = np.where(B > A, fa * fb, 0.0)
    count = np.zeros(A.shape)
    for m in range(1, tree.depth + 1):
        la = tree.locate(m, A)
        lb = tree.locate(m, B)
        count += ((la % 2 == 1) & (lb == la + 1))
    rhs = count * fa * fb
    mass = _Mass(f, tree.p, tree.norm_kind, tree.X_max)
    lo = np.minimum(A, B)
    hi = np.maximum(A, B)
    between = mass(lo, hi) / tree.scale ** tree.p
    resolved = between > 2.0 ** -tree.depth
    err = np.abs(lhs - rhs)
    excluded = int(np.count_nonzero(~resolved & (err > 0)))
    err = np.where(resolved | (err == 0), err, 0.0)
    return IdentityReport(float(err.max()) if err.size else 0.0, int(A.size), excluded)


def dump_tree_json(tree, path=None):
    """Tree as a JSON list of ``{m, l, lo, hi, mass}`` records."""
    text = json.dumps({"norm_kind": tree.norm_kind, "p": tree.p, "depth": tree.depth,
                       "X_max": tree.X_max, "nodes": tree.records()}, indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_tree_json(text):
    """Node records and header from :func:`dump_tree_json` output."""
    return json.loads(text)
