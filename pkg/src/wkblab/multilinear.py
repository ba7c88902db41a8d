"""Kernel operators, truncated multilinear transforms and maximal functions.

A multilinear transform of order ``n`` is

    T(lam) = int prod_i k_i(lam, x_i) f_i(x_i) 1[x_i < D_i]
                 prod_{(i, i') in A} 1[x_i > x_{i'}]  dx_1 ... dx_n,

with slots numbered from 1.  Class ``M_n`` transforms have the constraints
``x_j > x_{sigma(j)}`` with ``sigma(j) < j``.

All evaluators share one discretization: a common partition of the support
(the union of all function breakpoints and truncation points, refined to a
minimum resolution), exact per-cell integrals ``w_i[c] = int_c k_i f_i``, and
the ordering indicator replaced by ``1`` above the diagonal and ``1/2`` on
it.  The nested evaluator sums along the constraint forest in
``O(n * cells)``; the dense evaluator builds the full tensor.  Both compute
the same discrete sum, so they agree to rounding.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import theta_basis
from .errors import ConfigurationError, DomainError, ResourceError
from .potential import weighted_norm
from .quadrature import cell_integrals, filon_legendre
from .stepfn import StepFunction, random_step_function
from .transform import PhaseAccumulator

__all__ = [
    "KernelSpec",
    "MultilinearSpec",
    "TruncationVector",
    "dyadic_ladder",
    "common_edges",
    "apply_kernel_truncated",
    "t_n_eval",
    "MaximalResult",
    "t_n_maximal",
    "TailDecay",
    "tail_decay",
    "ProbeResult",
    "empirical_norm_constant",
    "write_probe_csv",
    "Cutoff",
    "z_kernel",
    "ZDecayReport",
    "z_kernel_decay",
    "dumps_probe_summary",
]

FORMS = ("theta_sq_phase", "conj_theta_sq_phase", "custom_tabulated")


class KernelSpec:
    """Bounded kernel ``k(lam, x)``.

    ``theta_sq_phase`` is ``theta^2 exp(2ip)`` and ``conj_theta_sq_phase``
    its conjugate, built from the bounded basis for ``lam`` and the phase of
    ``V``; both are bounded by 1.  ``custom_tabulated`` wraps a callable
    ``func(lam, x)`` (see :meth:`tabulated` and :meth:`custom`).

    Evaluation raises :class:`DomainError` if a sampled value exceeds the
    declared ``bound``.
    """

    def __init__(self, id, form, *, V=None, basis_kind="free", U=None, func=None, bound=None):
        if form not in FORMS:
            raise ConfigurationError(f"unknown kernel form {form!r}", key="form")
        if form == "custom_tabulated" and func is None:
            raise ConfigurationError("custom kernels need a function", key="func")
        if form != "custom_tabulated" and V is None:
            raise ConfigurationError("theta kernels need a potential", key="V")
        self.id = id
        self.form = form
        self.V = V
        self.basis_kind = basis_kind
        self.U = U
        self.func = func
        self.bound = 1.0 if bound is None and form != "custom_tabulated" else bound
        self._cache = {}

    def __repr__(self):
        return f"KernelSpec({self.id!r}, {self.form!r})"

    @classmethod
    def custom(cls, func, id="custom", bound=None):
        return cls(id, "custom_tabulated", func=func, bound=bound)

    @classmethod
    def tabulated(cls, x, values, id="tabulated", bound=None):
        """``lam``-independent kernel interpolated linearly from samples."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(values, dtype=complex)
        if x.size == 1:
            const = v[0]
            return cls.custom(lambda lam, t: np.full(np.shape(t), const), id, bound)

        def func(lam, t):
            return np.interp(t, x, v.real) + 1j * np.interp(t, x, v.imag)

        return cls.custom(func, id, bound)

    def _basis(self, lam):
        lam = float(lam)
        if lam not in self._cache:
            b = theta_basis(self.basis_kind, self.U, lam)
            self._cache[lam] = (b, PhaseAccumulator(b, self.V))
        return self._cache[lam]

    def __call__(self, lam, x):
        x = np.asarray(x, dtype=float)
        if self.form == "custom_tabulated":
            out = np.asarray(self.func(lam, x), dtype=complex)
        else:
            b, acc = self._basis(lam)
            th, _ = b.eval(x)
            out = th ** 2 * np.exp(2j * acc(x))
            if self.form == "conj_theta_sq_phase":
                out = np.conj(out)
        if self.bound is not None and out.size and np.max(np.abs(out)) > self.bound * (1 + 1e-9):
            raise DomainError(f"kernel {self.id!r} exceeds its bound {self.bound}")
        return out

    def cell_integrals(self, lam, edges, rtol=1e-10):
        return cell_integrals(lambda x: self(lam, x), np.asarray(edges, dtype=float), rtol=rtol)


def _sigma_pairs(sigma):
    if isinstance(sigma, dict):
        items = sorted(sigma.items())
    else:
        items = [(j + 2, s) for j, s in enumerate(sigma)]
    return tuple((int(j), int(s)) for j, s in items)


@dataclass(frozen=True)
class MultilinearSpec:
    """Order, kernels per slot, ordering constraints and exponents.

    ``pairs`` holds ``(i, i')`` meaning ``x_i > x_{i'}`` with 1-based slots.
    Build class ``M_n`` specs with :meth:`class_m`.
    """

    n: int
    kernels: tuple
    pairs: tuple = ()
    p: float = 2.0
    sigma: tuple | None = None

    def __post_init__(self):
        if self.n < 1 or len(self.kernels) != self.n:
            raise ConfigurationError("need one kernel per slot", key="kernels")
        for i, j in self.pairs:
            if not (1 <= i <= self.n and 1 <= j <= self.n):
                raise ConfigurationError(f"pair {(i, j)} refers to a missing slot", key="pairs")
        if self.sigma is not None:
            for j, s in self.sigma:
                if not 1 <= s < j:
                    raise ConfigurationError("class M_n needs sigma(j) < j", key="sigma")
        if not self.p >= 1:
            raise ConfigurationError("p must be >= 1", key="p")

    @classmethod
    def class_m(cls, kernels, sigma, p=2.0):
        """Class ``M_n`` spec; ``sigma`` maps ``j`` to ``sigma(j)`` for ``j >= 2``
        (a dict, or a sequence listing ``sigma(2), sigma(3), ...``)."""
        kernels = tuple(kernels)
        sp = _sigma_pairs(sigma)
        if sorted(j for j, _ in sp) != list(range(2, len(kernels) + 1)):
            raise ConfigurationError("sigma must be given for every slot j >= 2", key="sigma")
        return cls(len(kernels), kernels, sp, p, sp)

    @property
    def is_class_m(self):
        return self.sigma is not None

    @property
    def q(self):
        return math.inf if self.p == 1 else self.p / (self.p - 1.0)

    @property
    def s_n(self):
        return self.q / self.n


@dataclass(frozen=True)
class TruncationVector:
    """Upper limits ``D_i`` (``inf`` means no truncation).

    ``monotone`` marks the prefix-set mode in which all slots share one
    nested family of sets ``[0, D]``.
    """

    D: tuple
    monotone: bool = False

    def __post_init__(self):
        if any(not d >= 0 for d in self.D):
            raise DomainError("truncation points must be >= 0")

    @classmethod
    def full(cls, n):
        return cls((math.inf,) * n)


def dyadic_ladder(lo, hi, base=2.0):
    """Points ``base^j`` inside ``(lo, hi)`` followed by ``inf``."""
    lo = max(lo, 1e-300)
    j0 = math.floor(math.log(lo, base)) + 1
    j1 = math.ceil(math.log(hi, base)) - 1
    pts = [base ** j for j in range(j0, j1 + 1) if lo < base ** j < hi]
    return tuple(pts) + (math.inf,)


def _subdivide(edges, parts):
    parts = np.broadcast_to(np.asarray(parts, dtype=np.int64), (edges.size - 1,))
    if np.all(parts == 1):
        return edges
    out = [edges[:1]]
    for a, b, m in zip(edges[:-1], edges[1:], parts):
        out.append(np.linspace(a, b, m + 1)[1:])
    return np.concatenate(out)


def common_edges(f_list, points=(), resolution=64, max_width=None):
    """Shared partition for a list of test functions.

    Contains every function breakpoint and every finite entry of ``points``
    inside the support; cells are then split to at most ``max_width`` and
    to at least ``resolution`` cells in total.
    """
    lo = min(float(f.edges[0]) for f in f_list)
    hi = max(float(f.edges[-1]) for f in f_list)
    pts = [np.asarray(f.edges, dtype=float) for f in f_list]
    extra = np.array([p for p in points if math.isfinite(p) and lo < p < hi], dtype=float)
    e = np.unique(np.concatenate(pts + [extra, [lo, hi]]))
    if max_width is not None:
        e = _subdivide(e, np.maximum(1, np.ceil(np.diff(e) / max_width).astype(np.int64)))
    ncell = e.size - 1
    if ncell < resolution:
        e = _subdivide(e, int(math.ceil(resolution / ncell)))
    return e


def _slot_weights(kernels, f_list, lam, edges, rtol, kcache=None):
    mids = 0.5 * (edges[1:] + edges[:-1])
    kcache = {} if kcache is None else kcache
    out = []
    for k, f in zip(kernels, f_list):
        if isinstance(f, StepFunction):
            if id(k) not in kcache:
                kcache[id(k)] = k.cell_integrals(lam, edges, rtol)
            out.append(f(mids) * kcache[id(k)])
        else:
            out.append(cell_integrals(lambda x, k=k, f=f: k(lam, x) * f(x), edges, rtol=rtol))
    return out


def _mask(w, edges, D):
    if not math.isfinite(D):
        return w
    return np.where(edges[1:] <= D * (1 + 1e-14), w, 0.0)


# ordering structure

def _structure(n, pairs):
    """``('empty', None)``, ``('forest', adjacency)`` or ``('general', None)``."""
    pairs = set(pairs)
    if any(i == j for i, j in pairs):
        return "empty", None
    # directed cycle => contradictory constraints
    succ = {i: [] for i in range(1, n + 1)}
    indeg = {i: 0 for i in range(1, n + 1)}
    for i, j in pairs:
        succ[j].append(i)
        indeg[i] += 1
    ready = [i for i in indeg if indeg[i] == 0]
    seen = 0
    while ready:
        v = ready.pop()
        seen += 1
        for u in succ[v]:
            indeg[u] -= 1
            if indeg[u] == 0:
                ready.append(u)
    if seen < n:
        return "empty", None
    parent = list(range(n + 1))

    def root(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    adj = {i: [] for i in range(1, n + 1)}
    for i, j in pairs:
        ri, rj = root(i), root(j)
        if ri == rj:
            return "general", None
        parent[ri] = rj
        # neighbour, +1 if the neighbour is the larger variable
        adj[j].append((i, 1))
        adj[i].append((j, -1))
    return "forest", adj


def _nested(ws, adj):
    n = len(ws)
    done = set()
    total = 1.0 + 0.0j

    def visit(v, parent):
        h = ws[v - 1].astype(complex)
        for u, sign in adj[v]:
            if u == parent:
                continue
            hu = visit(u, v)
            if sign > 0:
                # x_u > x_v: cells strictly above plus half the diagonal
                inc = np.cumsum(hu[::-1])[::-1]
            else:
                inc = np.cumsum(hu)
            h = h * (inc - 0.5 * hu)
        done.add(v)
        return h

    for v in range(1, n + 1):
        if v not in done:
            total *= visit(v, None).sum()
    return complex(total)


def _dense(ws, pairs, max_elements):
    n = len(ws)
    G = ws[0].size
    if float(G) ** n > max_elements:
        raise ResourceError(f"dense evaluation needs {G}^{n} cells (limit {max_elements:.3g})")
    T = np.ones((G,) * n, dtype=complex)
    for i, w in enumerate(ws):
        shape = [1] * n
        shape[i] = G
        T = T * w.reshape(shape)
    idx = np.arange(G)
    chi = (idx[:, None] > idx[None, :]) + 0.5 * (idx[:, None] == idx[None, :])
    for i, j in set(pairs):
        shape = [1] * n
        shape[i - 1] = G
        shape[j - 1] = G
        c = chi if i < j else chi.T
        T = T * c.reshape(shape)
    return complex(T.sum())


def _evaluate(ws, n, pairs, method, max_elements, structure=None):
    kind, adj = _structure(n, pairs) if structure is None else structure
    if kind == "empty":
        return 0.0 + 0.0j
    if method == "auto":
        method = "nested" if kind == "forest" else "dense"
    if method == "nested":
        if kind != "forest":
            raise DomainError("nested evaluation needs a forest of constraints")
        return _nested(ws, adj)
    if method == "dense":
        if n > 4:
            raise ResourceError("dense evaluation is limited to n <= 4")
        return _dense(ws, pairs, max_elements)
    raise ConfigurationError(f"unknown method {method!r}", key="method")


def apply_kernel_truncated(k, f, lambda_grid, N=math.inf, *, sup=False, ladder=None, rtol=1e-10):
    """``int_0^N k(lam, x) f(x) dx`` for each ``lam``.

    With ``sup=True`` returns ``max_N |int_0^N k f|`` over ``ladder``
    (default: the dyadic ladder of the support), a discrete maximal function.
    """
    lams = np.atleast_1d(np.asarray(lambda_grid, dtype=float))
    lo, hi = float(f.edges[0]), float(f.edges[-1])
    if sup:
        ladder = dyadic_ladder(max(lo, 1e-3), hi) if ladder is None else tuple(ladder)
        pts = ladder
    else:
        pts = (N,)
    edges = common_edges([f], pts, resolution=1)
    out = np.empty(lams.size, dtype=float if sup else complex)
    for n, lam in enumerate(lams):
        w = _slot_weights([k], [f], lam, edges, rtol)[0]
        cum = np.concatenate([[0.0], np.cumsum(w)])
        if sup:
            idx = [np.searchsorted(edges, min(d, hi), side="right") - 1 for d in pts]
            out[n] = max(abs(cum[i]) for i in idx)
        else:
            i = np.searchsorted(edges, min(N, hi), side="right") - 1
            out[n] = cum[i]
    return out


def _prepare(spec, f_list, D, edges, resolution, points=()):
    if len(f_list) != spec.n:
        raise DomainError(f"need {spec.n} functions, got {len(f_list)}")
    D = TruncationVector.full(spec.n) if D is None else D
    if not isinstance(D, TruncationVector):
        D = TruncationVector(tuple(D))
    if len(D.D) != spec.n:
        raise DomainError("truncation vector has the wrong length")
    if edges is None:
        edges = common_edges(f_list, tuple(D.D) + tuple(points), resolution)
    return D, np.asarray(edges, dtype=float)


def t_n_eval(spec, f_list, lam, D=None, *, method="auto", edges=None, resolution=64,
             rtol=1e-10, max_elements=2e7):
    """Truncated multilinear transform at one energy.

    Parameters
    ----------
    spec : MultilinearSpec
    f_list : sequence of StepFunction or Restricted
    lam : float
    D : TruncationVector or sequence, optional
        Defaults to no truncation.
    method : {'auto', 'nested', 'dense'}
        ``'auto'`` picks the nested evaluator whenever the constraints form
        a forest (always the case for class ``M_n``).
    edges : array_like, optional
        Shared partition; pass the same edges to compare evaluations exactly.

    Returns
    -------
    complex
        Zero when the constraints are contradictory.
    """
    D, edges = _prepare(spec, f_list, D, edges, resolution)
    ws = _slot_weights(spec.kernels, f_list, lam, edges, rtol)
    ws = [_mask(w, edges, d) for w, d in zip(ws, D.D)]
    return _evaluate(ws, spec.n, spec.pairs, method, max_elements)


@dataclass
class MaximalResult:
    value: float
    argmax: tuple
    evaluations: int


def t_n_maximal(spec, f_list, lam, ladder=None, *, mode="independent", method="auto",
                resolution=64, rtol=1e-10, max_elements=2e7):
    """``sup |T^{D_1..D_n}|`` over truncation points from ``ladder``.

    ``mode='independent'`` draws every ``D_i`` from the ladder separately;
    ``mode='prefix'`` uses one common ``D`` for all slots (nested prefix
    sets).
    """
    lo = min(float(f.edges[0]) for f in f_list)
    hi = max(float(f.edges[-1]) for f in f_list)
    ladder = dyadic_ladder(max(lo, 1e-3), hi) if ladder is None else tuple(ladder)
    edges = common_edges(f_list, ladder, resolution)
    ws = _slot_weights(spec.kernels, f_list, lam, edges, rtol)
    masked = [[_mask(w, edges, d) for d in ladder] for w in ws]
    structure = _structure(spec.n, spec.pairs)
    if mode == "independent":
        combos = np.ndindex(*(len(ladder),) * spec.n)
    elif mode == "prefix":
        combos = ((i,) * spec.n for i in range(len(ladder)))
    else:
        raise ConfigurationError(f"unknown mode {mode!r}", key="mode")
    best, arg, count = -1.0, None, 0
    for idx in combos:
        v = abs(_evaluate([masked[s][i] for s, i in enumerate(idx)], spec.n, spec.pairs,
                          method, max_elements, structure))
        count += 1
        if v > best:
            best, arg = v, tuple(ladder[i] for i in idx)
    return MaximalResult(float(best), arg, count)


@dataclass
class TailDecay:
    N: np.ndarray
    values: np.ndarray
    slope: float


def tail_decay(spec, f, lam, Ns, *, edges=None, max_width=0.25, rtol=1e-10):
    """``|T(f - f_N, ..., f - f_N)|`` for each ``N`` and the log-log slope
    against ``1 + N``.

    The same ``f`` fills every slot; slot weights are computed once on a
    shared partition containing all ``N``.
    """
    Ns = np.asarray(Ns, dtype=float)
    fl = [f] * spec.n
    if edges is None:
        edges = common_edges(fl, tuple(Ns), resolution=64, max_width=max_width)
    ws = _slot_weights(spec.kernels, fl, lam, edges, rtol)
    structure = _structure(spec.n, spec.pairs)
    vals = []
    for N in Ns:
        keep = edges[:-1] >= N * (1 - 1e-14)
        vals.append(abs(_evaluate([np.where(keep, w, 0.0) for w in ws], spec.n, spec.pairs,
                                  "auto", 2e7, structure)))
    vals = np.array(vals)
    ok = vals > 0
    slope = float(np.polyfit(np.log1p(Ns[ok]), np.log(vals[ok]), 1)[0]) if ok.sum() >= 2 else math.nan
    return TailDecay(Ns, vals, slope)


@dataclass
class ProbeResult:
    ratios: np.ndarray
    p: float
    q: float
    s_n: float
    n: int

    @property
    def max_ratio(self):
        return float(np.max(self.ratios))

    @property
    def median(self):
        return float(np.median(self.ratios))

    def summary(self):
        r = self.ratios
        return {"max": self.max_ratio, "median": self.median, "min": float(np.min(r)),
                "mean": float(np.mean(r)), "std": float(np.std(r)), "trials": int(r.size),
                "max_over_median": self.max_ratio / self.median if self.median > 0 else math.inf,
                "s_n": self.s_n, "p": self.p, "q": self.q, "n": self.n}


def _quasinorm(values, grid, s):
    v = np.abs(values)
    if math.isinf(s):
        return float(v.max())
    dl = np.gradient(grid) if grid.size > 1 else np.ones(1)
    return float(np.sum(v ** s * dl) ** (1.0 / s))


def empirical_norm_constant(spec, p=None, trials=50, seed=0, lambda_grid=None, *, ncell=32,
                            subdivide=4, positive=True, same_f=True, rtol=1e-10):
    """Ratios ``||T(f_1..f_n)||_{s_n} / prod ||f_i||_p`` over random test functions.

    Test functions are step functions on ``ncell`` unit cells with seeded
    uniform values, scaled to unit norm (on unit cells the ``L^p`` and
    ``l^p(L^1)`` norms coincide).  The ``s_n`` quasinorm over the energy grid
    is ``(sum |T|^s_n dlam)^(1/s_n)`` also when ``s_n < 1``.  Each trial uses
    its own child seed, so results do not depend on execution order.
    """
    if trials < 10:
        raise DomainError("the probe needs at least 10 trials")
    if p is not None and p != spec.p:
        spec = MultilinearSpec(spec.n, spec.kernels, spec.pairs, p, spec.sigma)
    grid = np.asarray(lambda_grid if lambda_grid is not None else np.linspace(0.5, 2.0, 32), float)
    base = np.linspace(0.0, float(ncell), ncell + 1)
    edges = _subdivide(base, subdivide)
    kints = [{} for _ in grid]
    for kc, lam in zip(kints, grid):
        for k in spec.kernels:
            if id(k) not in kc:
                kc[id(k)] = k.cell_integrals(lam, edges, rtol)
    structure = _structure(spec.n, spec.pairs)
    children = np.random.SeedSequence(seed).spawn(trials)
    ratios = np.empty(trials)
    for t, child in enumerate(children):
        rng = np.random.default_rng(child)
        nf = 1 if same_f else spec.n
        fs = [random_step_function(rng, ncell, p=spec.p, positive=positive) for _ in range(nf)]
        if same_f:
            fs = fs * spec.n
        denom = float(np.prod([f.lp_norm(spec.p) for f in fs]))
        vals = np.empty(grid.size, dtype=complex)
        for i, lam in enumerate(grid):
            ws = _slot_weights(spec.kernels, fs, lam, edges, rtol, kints[i])
            vals[i] = _evaluate(ws, spec.n, spec.pairs, "auto", 2e7, structure)
        ratios[t] = _quasinorm(vals, grid, spec.s_n) / denom
    return ProbeResult(ratios, spec.p, spec.q, spec.s_n, spec.n)


def write_probe_csv(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "ratio"])
        for i, r in enumerate(result.ratios):
            w.writerow([i, repr(float(r))])


# oscillatory kernel Z

def _smooth_step(u):
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class Cutoff:
    """Cutoff ``phi(lam)``: 0 below ``lo``, 1 on ``[a, b]``, 0 above ``hi``.

    The left ramp is infinitely smooth.  With ``order=None`` so is the right
    ramp; with an integer ``order = r`` the right ramp is
    ``(1 - t^(r+1)) S(1 - t)``, which is ``C^r`` but has a jump in the
    ``(r+1)``-th derivative at ``b``.  That single kink makes
    ``|Z| ~ |x - y|^-(r+2)``.
    """

    a: float
    b: float
    lo: float | None = None
    hi: float | None = None
    order: int | None = None

    def __post_init__(self):
        lo = 0.5 * self.a if self.lo is None else self.lo
        hi = self.b + 0.5 * (self.b - self.a) if self.hi is None else self.hi
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not 0 < lo < self.a < self.b < hi:
            raise ConfigurationError("need 0 < lo < a < b < hi", key="phi")
        if self.order is not None and self.order < 0:
            raise ConfigurationError("order must be >= 0", key="phi")

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        left = _smooth_step((lam - self.lo) / (self.a - self.lo))
        t = np.clip((lam - self.b) / (self.hi - self.b), 0.0, 1.0)
        right = _smooth_step(1.0 - t)
        if self.order is not None:
            right = right * (1.0 - t ** (self.order + 1))
        return np.where(lam <= self.b, left, right) * ((lam > self.lo) & (lam < self.hi))

    def breakpoints(self):
        return (self.lo, self.a, self.b, self.hi)


def _phi_int(V, x, y):
    if V.is_zero or x == y:
        return 0.0
    lo, hi = min(x, y), max(x, y)
    bp = V.breakpoints(lo, hi)
    edges = np.unique(np.concatenate([[lo, hi], bp]))
    val = float(np.sum(cell_integrals(V, edges, rtol=1e-12)))
    return val if x > y else -val


def z_kernel(phi, V, x, y, *, panels=None, order=16, fallback_at=1e5):
    """``Z(x, y) = int phi(lam) exp(2i sqrt(lam)(x - y) - (i / sqrt(lam)) int_y^x V) dlam``.

    Evaluated as a Filon integral in ``k = sqrt(lam)`` on panels aligned
    with the cutoff breakpoints.  For ``|x - y| > fallback_at`` the leading
    endpoint term of the kink at ``b`` is returned instead.

    Returns
    -------
    (complex, bool)
        The value and whether the asymptotic fallback was used.
    """
    d = float(x) - float(y)
    Phi = _phi_int(V, float(x), float(y))

    def G(k):
        return phi(k * k) * 2.0 * k * np.exp(-1j * Phi / k)

    if abs(d) > fallback_at:
        if phi.order is None:
            return 0.0j, True
        r = phi.order
        kb = math.sqrt(phi.b)
        w = phi.hi - phi.b
        E = 2.0 * kb * np.exp(-1j * Phi / kb)
        om = 2.0 * d
        val = (-1) ** (r + 1) * math.factorial(r + 1) * (2.0 * kb / w) ** (r + 1) * E \
            * np.exp(1j * om * kb) / (1j * om) ** (r + 2)
        return complex(val), True
    ks = np.sqrt(np.array(phi.breakpoints()))
    if panels is None:
        # resolve the V phase and the steep ends of the smooth ramps
        panels = int(max(48, 4 * abs(Phi) / phi.lo))
    edges = _subdivide(ks, panels)
    return complex(np.sum(filon_legendre(G, 2.0 * d, edges, order))), False


@dataclass
class ZDecayReport:
    rows: list
    C: float
    exponent: float
    slope: float
    norm_V: float
    all_bounded: bool = field(default=False)


def z_kernel_decay(phi, V, pairs, N=4, p=2.0, *, safety=1.25, fit_min=10.0, fallback_at=1e5):
    """Compare ``|Z(x, y)|`` with ``C min(1, |x - y|^-e) (1 + ||V||_p)``, ``e = N (1 - 1/q)``.

    Pairs are sorted by distance and split alternately into a calibration
    and a verification half; ``C`` is ``safety`` times the largest
    calibration ratio.  The slope is fitted to ``log |Z|`` against
    ``log |x - y|`` over pairs with ``|x - y| >= fit_min``.
    """
    q = math.inf if p == 1 else p / (p - 1.0)
    e = N * (1.0 - 1.0 / q)
    if not e > 1:
        raise DomainError("need N (1 - 1/q) > 1")
    nv = 0.0 if V.is_zero else weighted_norm(V, p)
    pairs = sorted(((float(x), float(y)) for x, y in pairs), key=lambda t: abs(t[0] - t[1]))
    rows = []
    for i, (x, y) in enumerate(pairs):
        z, fb = z_kernel(phi, V, x, y, fallback_at=fallback_at)
        d = abs(x - y)
        shape = min(1.0, d ** -e) if d > 0 else 1.0
        rows.append({"x": x, "y": y, "d": d, "Z": z, "absZ": abs(z), "shape": shape * (1 + nv),
                     "role": "calibrate" if i % 2 == 0 else "verify", "fallback": fb})
    cal = [r["absZ"] / r["shape"] for r in rows if r["role"] == "calibrate"]
    C = safety * max(cal)
    for r in rows:
        r["bound"] = C * r["shape"]
        r["ok"] = r["absZ"] <= r["bound"]
    fit = [(r["d"], r["absZ"]) for r in rows if r["d"] >= fit_min and r["absZ"] > 0]
    slope = math.nan
    if len(fit) >= 2:
        dd, zz = np.array(fit).T
        slope = float(np.polyfit(np.log(dd), np.log(zz), 1)[0])
    ok = all(r["ok"] for r in rows if r["role"] == "verify")
    return ZDecayReport(rows, float(C), e, slope, float(nv), ok)


def dumps_probe_summary(result):
    return json.dumps(result.summary(), indent=2, sort_keys=True)
