"""Piecewise-constant functions on a partition of ``[0, X]``."""
from __future__ import annotations

import numpy as np

__all__ = ["StepFunction", "Restricted", "random_step_function"]


class StepFunction:
    """``f(x) = values[i]`` for ``x`` in ``(edges[i], edges[i+1]]``.

    The first cell also contains ``edges[0]``; ``f`` vanishes outside
    ``[edges[0], edges[-1]]``.  Values may be complex.
    """

    def __init__(self, edges, values):
        edges = np.asarray(edges, dtype=float)
        values = np.asarray(values)
        if edges.ndim != 1 or edges.size != values.size + 1:
            raise ValueError("need len(edges) == len(values) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        self.edges = edges
        self.values = values

    @classmethod
    def indicator(cls, a, b, height=1.0):
        return cls([a, b], [height])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="left") - 1
        idx = np.where(x == self.edges[0], 0, idx)
        inside = (idx >= 0) & (idx < self.values.size)
        out = np.zeros(x.shape, dtype=self.values.dtype)
        out[inside] = self.values[idx[inside]]
        return out

    def __mul__(self, c):
        return StepFunction(self.edges, self.values * c)

    __rmul__ = __mul__

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def support(self):
        return float(self.edges[0]), float(self.edges[-1])

    def lp_norm(self, p):
        return float(np.sum(np.abs(self.values) ** p * self.widths) ** (1.0 / p))

    def cumulative(self, x, p=1.0):
        """``int_{edges[0]}^{x} |f|^p`` (piecewise linear in ``x``)."""
        x = np.clip(np.asarray(x, dtype=float), self.edges[0], self.edges[-1])
        dens = np.abs(self.values) ** p
        cum = np.concatenate([[0.0], np.cumsum(dens * self.widths)])
        i = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.values.size - 1)
        return cum[i] + dens[i] * (x - self.edges[i])

    def refine(self, points):
        """Same function on a partition that contains ``points``."""
        pts = np.asarray(points, dtype=float)
        pts = pts[(pts > self.edges[0]) & (pts < self.edges[-1])]
        edges = np.unique(np.concatenate([self.edges, pts]))
        mids = 0.5 * (edges[1:] + edges[:-1])
        return StepFunction(edges, self(mids))

    def truncate(self, N):
        """``f * 1[0, N]``."""
        if N >= self.edges[-1]:
            return self
        if N <= self.edges[0]:
            return StepFunction(self.edges[:2], np.zeros(1, dtype=self.values.dtype))
        g = self.refine([N])
        vals = np.where(g.edges[1:] <= N, g.values, 0)
        return StepFunction(g.edges, vals)

    def tail(self, N):
        """``f - f * 1[0, N]``."""
        if N <= self.edges[0]:
            return self
        g = self.refine([N])
        vals = np.where(g.edges[:-1] >= N, g.values, 0)
        return StepFunction(g.edges, vals)


class Restricted:
    """A vectorized callable restricted to ``[a, b]`` (zero outside).

    Used where a test function is smooth rather than piecewise constant,
    for example a potential and its tails ``f - f 1[0, N]``.
    """

    def __init__(self, func, a, b):
        if not b > a:
            raise ValueError("need b > a")
        self.func = func
        self.edges = np.array([float(a), float(b)])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.edges[0]) & (x <= self.edges[1])
        return np.where(inside, self.func(np.where(inside, x, self.edges[0])), 0.0)

    def __mul__(self, c):
        f = self.func
        return Restricted(lambda x: c * f(x), *self.edges)

    __rmul__ = __mul__

    @property
    def support(self):
        return float(self.edges[0]), float(self.edges[1])

    def _zero(self):
        return Restricted(np.zeros_like, *self.edges)

    def truncate(self, N):
        a, b = self.edges
        if N >= b:
            return self
        return self._zero() if N <= a else Restricted(self.func, a, N)

    def tail(self, N):
        a, b = self.edges
        if N <= a:
            return self
        return self._zero() if N >= b else Restricted(self.func, N, b)


def random_step_function(rng, ncell, X=None, p=None, positive=False, complex_values=False):
    """Random step function on ``ncell`` unit cells (or cells of ``[0, X]``).

    Values are uniform on ``[-1, 1]`` (``[0, 1]`` when ``positive``);
    the result is scaled to unit ``L^p`` norm when ``p`` is given.
    """
    X = float(ncell) if X is None else float(X)
    edges = np.linspace(0.0, X, ncell + 1)
    lo = 0.0 if positive else -1.0
    vals = rng.uniform(lo, 1.0, ncell)
    if complex_values:
        vals = vals + 1j * rng.uniform(lo, 1.0, ncell)
    f = StepFunction(edges, vals)
    if p is not None:
        nrm = f.lp_norm(p)
        if nrm > 0:
            f = f * (1.0 / nrm)
    return f
