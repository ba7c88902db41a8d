"""Potential families, weights and their norms.

A :class:`PotentialSpec` is an immutable, evaluable description of a real
potential on the half line.  Specs are built with :func:`make_potential`
and serialized to a sectioned ``key = value`` text block (see
:func:`dumps_spec` / :func:`loads_spec`).
"""
from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from .errors import ConfigurationError, DomainError, NonIntegrableError
from .quadrature import cell_integrals

__all__ = [
    "KINDS",
    "PotentialSpec",
    "WeightSpec",
    "make_potential",
    "combine",
    "weighted_norm",
    "verify_d_weight",
    "NormReport",
    "dumps_spec",
    "loads_spec",
    "spec_from_mapping",
    "read_table_csv",
    "write_table_csv",
]

KINDS = (
    "zero",
    "power_decay",
    "wigner_von_neumann",
    "periodic",
    "periodic_plus_decay",
    "random_decay",
    "gap_inserted",
    "singular_lp_l1",
    "tabulated",
)

# required and optional (with defaults) parameters per kind
_REQUIRED = {
    "zero": (),
    "power_decay": ("c", "r"),
    "wigner_von_neumann": ("a", "k"),
    "periodic": ("c", "T"),
    "periodic_plus_decay": ("c_per", "T", "c", "r"),
    "random_decay": ("c", "r", "seed"),
    "gap_inserted": ("base", "gaps"),
    "singular_lp_l1": ("s", "x0", "beta"),
    "tabulated": ("x", "v"),
    "sum": ("terms",),
}
_OPTIONAL = {
    "singular_lp_l1": {"c": 0.0, "r": 1.0, "width": 0.5},
    "tabulated": {"interp": "linear"},
}

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(z):
    z = (z + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return z ^ (z >> np.uint64(31))


def _cell_signs(seed, n):
    """Deterministic +-1 for integer cell indices ``n`` (hash, not a stream)."""
    n = np.asarray(n, dtype=np.int64).astype(np.uint64)
    key = _splitmix64(np.asarray([seed], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        h = _splitmix64(n ^ key)
    return np.where((h >> np.uint64(63)) == 0, 1.0, -1.0)


def _finite(params, key, kind):
    try:
        val = float(params[key])
    except (TypeError, ValueError):
        raise ConfigurationError(f"{kind}: parameter {key!r} must be a real number", key=key)
    if not math.isfinite(val):
        raise ConfigurationError(f"{kind}: parameter {key!r} must be finite", key=key)
    return val


class PotentialSpec:
    """Immutable descriptor of a real potential ``V(x)`` on ``x >= 0``.

    Instances are callable on arrays.  Use :func:`make_potential` rather
    than the constructor, which performs no validation.

    Attributes
    ----------
    kind : str
    params : mapping
        Read-only view of the parameters.
    support_cutoff : float
        ``V`` is zero for ``x > support_cutoff``.
    """

    __slots__ = ("kind", "params", "support_cutoff", "_eval", "_gap")

    def __init__(self, kind, params, support_cutoff=math.inf):
        self.kind = kind
        self.params = MappingProxyType(dict(params))
        self.support_cutoff = float(support_cutoff)
        self._gap = None
        self._eval = getattr(self, "_eval_" + kind)
        if kind == "gap_inserted":
            self._gap = _GapMap(self.params["gaps"])

    def __setattr__(self, name, value):
        if hasattr(self, "_eval") and name != "_gap":
            raise AttributeError("PotentialSpec is immutable")
        object.__setattr__(self, name, value)

    def __reduce__(self):
        return (PotentialSpec, (self.kind, dict(self.params), self.support_cutoff))

    def __repr__(self):
        shown = {k: v for k, v in self.params.items() if k not in ("x", "v", "terms", "base")}
        cut = "" if math.isinf(self.support_cutoff) else f", support_cutoff={self.support_cutoff:g}"
        return f"PotentialSpec({self.kind!r}, {shown}{cut})"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self._eval(x), dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).copy()
        if math.isfinite(self.support_cutoff):
            out = np.where(x > self.support_cutoff, 0.0, out)
        return out

    # ----------------------------------------------------------------- kinds
    def _eval_zero(self, x):
        return np.zeros_like(x)

    def _eval_power_decay(self, x):
        p = self.params
        return p["c"] * (1.0 + x) ** (-p["r"])

    def _eval_wigner_von_neumann(self, x):
        p = self.params
        return p["a"] * np.sin(p["k"] * x) / (1.0 + x)

    def _eval_periodic(self, x):
        p = self.params
        # reduce first so that V(x + T) == V(x) holds bitwise
        return p["c"] * np.cos(2.0 * np.pi * np.mod(x, p["T"]) / p["T"])

    def _eval_periodic_plus_decay(self, x):
        p = self.params
        per = np.cos(2.0 * np.pi * np.mod(x, p["T"]) / p["T"])
        return p["c_per"] * per + p["c"] * (1.0 + x) ** (-p["r"])

    def _eval_random_decay(self, x):
        p = self.params
        signs = _cell_signs(int(p["seed"]), np.floor(x))
        return p["c"] * (1.0 + x) ** (-p["r"]) * signs

    def _eval_gap_inserted(self, x):
        t, inside = self._gap.to_base(x)
        return np.where(inside, 0.0, self.params["base"](t))

    def _eval_singular_lp_l1(self, x):
        p = self.params
        d = np.abs(x - p["x0"])
        with np.errstate(divide="ignore"):
            spike = np.where(d < p["width"], p["s"] * d ** (-p["beta"]), 0.0)
        return p["c"] * (1.0 + x) ** (-p["r"]) + spike

    def _eval_tabulated(self, x):
        p = self.params
        xs, vs = p["x"], p["v"]
        inside = (x >= xs[0]) & (x <= xs[-1])
        if p["interp"] == "step":
            idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 1)
            val = vs[idx]
            # the last sample only closes the table
            val = np.where(x >= xs[-1], 0.0, val) if xs.size > 1 else val
        else:
            val = np.interp(x, xs, vs)
        return np.where(inside, val, 0.0)

    def _eval_sum(self, x):
        out = np.zeros_like(x)
        for w, spec in self.params["terms"]:
            out = out + w * spec(x)
        return out

    # ------------------------------------------------------------ structure
    def breakpoints(self, a, b):
        """Points in ``(a, b)`` where ``V`` is not smooth (sorted)."""
        pts = self._breaks(a, b)
        if math.isfinite(self.support_cutoff):
            pts = np.append(pts, self.support_cutoff)
        pts = np.unique(np.asarray(pts, dtype=float))
        return pts[(pts > a) & (pts < b)]

    def _breaks(self, a, b):
        kind = self.kind
        p = self.params
        if kind == "random_decay":
            lo = max(math.ceil(a), 0)
            hi = math.floor(b)
            if hi - lo > 5_000_000:
                raise DomainError("too many sign cells requested")
            return np.arange(lo, hi + 1, dtype=float)
        if kind == "tabulated":
            return np.asarray(p["x"])
        if kind == "singular_lp_l1":
            return np.array([p["x0"] - p["width"], p["x0"], p["x0"] + p["width"]])
        if kind == "gap_inserted":
            g = self._gap
            own = np.concatenate([g.starts, g.starts + g.lengths])
            tb = g.to_base(np.array([a]))[0][0], g.to_base(np.array([b]))[0][0]
            inner = p["base"].breakpoints(tb[0] - 1.0, tb[1] + 1.0)
            return np.concatenate([own, g.from_base(inner)])
        if kind == "sum":
            parts = [s.breakpoints(a, b) for _, s in p["terms"]]
            return np.concatenate(parts) if parts else np.zeros(0)
        return np.zeros(0)

    def singular_points(self):
        """Points where ``|V|`` may be unbounded."""
        if self.kind == "singular_lp_l1":
            return (float(self.params["x0"]),)
        if self.kind == "gap_inserted":
            inner = np.asarray(self.params["base"].singular_points(), dtype=float)
            return tuple(self._gap.from_base(inner).tolist())
        if self.kind == "sum":
            return tuple(sorted({s for _, t in self.params["terms"] for s in t.singular_points()}))
        return ()

    @property
    def is_zero(self):
        if self.kind == "zero":
            return True
        if self.kind == "power_decay":
            return self.params["c"] == 0.0
        if self.kind == "wigner_von_neumann":
            return self.params["a"] == 0.0
        if self.kind == "sum":
            return all(w == 0.0 or s.is_zero for w, s in self.params["terms"])
        return False

    @property
    def period(self):
        """Period of the periodic part, or ``None``."""
        if self.kind in ("periodic", "periodic_plus_decay"):
            return float(self.params["T"])
        return None

    def with_cutoff(self, X):
        """Same potential truncated to ``[0, X]``."""
        spec = PotentialSpec(self.kind, self.params, min(X, self.support_cutoff))
        return spec

    def scaled(self, factor):
        """``factor * V`` as a new spec."""
        return combine([(factor, self)])


class _GapMap:
    """Monotone reparametrization for inserted zero gaps.

    ``gaps`` lists ``(position, length)`` in the base coordinate.  In the
    new coordinate the base point ``position`` is followed by an interval
    of ``length`` where the potential vanishes.
    """

    def __init__(self, gaps):
        gaps = np.asarray(gaps, dtype=float).reshape(-1, 2)
        order = np.argsort(gaps[:, 0], kind="stable")
        base_pos = gaps[order, 0]
        lengths = gaps[order, 1]
        shift = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        self.base_pos = base_pos
        self.lengths = lengths
        self.starts = base_pos + shift          # gap starts, new coordinate
        self.cum = np.cumsum(lengths)           # shift after each gap

    def to_base(self, x):
        x = np.asarray(x, dtype=float)
        if self.starts.size == 0:
            return x.copy(), np.zeros(x.shape, dtype=bool)
        j = np.searchsorted(self.starts, x, side="right") - 1
        jj = np.clip(j, 0, None)
        has = j >= 0
        inside = has & (x - self.starts[jj] < self.lengths[jj])
        t = np.where(has, np.where(inside, self.base_pos[jj], x - self.cum[jj]), x)
        return t, inside

    def from_base(self, t):
        t = np.asarray(t, dtype=float)
        j = np.searchsorted(self.base_pos, t, side="left")
        shift = np.concatenate([[0.0], self.cum])[j]
        return t + shift


def _as_array(values, key):
    if isinstance(values, str):
        values = [float(v) for v in values.replace(";", ",").split(",") if v.strip()]
    arr = np.array(values, dtype=float).ravel()
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"tabulated: {key!r} must be a non-empty finite list", key=key)
    arr.setflags(write=False)
    return arr


def _parse_gaps(gaps):
    if isinstance(gaps, str):
        out = []
        for item in gaps.split(","):
            item = item.strip()
            if not item:
                continue
            try:
                pos, length = item.split(":")
                out.append((float(pos), float(length)))
            except ValueError:
                raise ConfigurationError("gap_inserted: gaps must look like 'pos:len, ...'", key="gaps")
        gaps = out
    gaps = tuple((float(a), float(b)) for a, b in gaps)
    for pos, length in gaps:
        if not (math.isfinite(pos) and math.isfinite(length)) or pos < 0 or length < 0:
            raise ConfigurationError("gap_inserted: gap positions and lengths must be finite and >= 0",
                                     key="gaps")
    return gaps


def make_potential(kind, params=None, support_cutoff=math.inf):
    """Validate parameters and build a :class:`PotentialSpec`.

    Parameters
    ----------
    kind : str
        One of :data:`KINDS`.
    params : mapping, optional
        Kind-specific parameters: ``c, r`` for ``power_decay``
        (``V = c (1+x)^-r``); ``a, k`` for ``wigner_von_neumann``
        (``V = a sin(kx) / (1+x)``); ``c, T`` for ``periodic``
        (``V = c cos(2 pi x / T)``); ``c_per, T, c, r`` for
        ``periodic_plus_decay``; ``c, r, seed`` for ``random_decay``
        (decaying envelope times a +-1 sign per unit cell);
        ``base, gaps`` for ``gap_inserted``; ``s, x0, beta`` (and optional
        ``c, r, width``) for ``singular_lp_l1``, a power background plus the
        spike ``s |x - x0|^-beta`` on ``|x - x0| < width``; ``x, v`` (and
        ``interp`` of ``'linear'`` or ``'step'``) for ``tabulated``.
    support_cutoff : float
        Evaluation returns 0 beyond this point.

    Raises
    ------
    ConfigurationError
        Unknown kind, missing or invalid parameter.
    """
    params = dict(params or {})
    if kind not in _REQUIRED:
        raise ConfigurationError(f"unknown potential kind {kind!r}", key="kind")
    for key in _REQUIRED[kind]:
        if key not in params:
            raise ConfigurationError(f"{kind}: missing parameter {key!r}", key=key)
    for key, default in _OPTIONAL.get(kind, {}).items():
        params.setdefault(key, default)
    allowed = set(_REQUIRED[kind]) | set(_OPTIONAL.get(kind, {}))
    extra = set(params) - allowed
    if extra:
        key = sorted(extra)[0]
        raise ConfigurationError(f"{kind}: unexpected parameter {key!r}", key=key)
    try:
        support_cutoff = float(support_cutoff)
    except (TypeError, ValueError):
        raise ConfigurationError("support_cutoff must be a real number", key="support_cutoff")
    if math.isnan(support_cutoff) or support_cutoff < 0:
        raise ConfigurationError("support_cutoff must be >= 0", key="support_cutoff")

    clean = {}
    if kind == "tabulated":
        xs = _as_array(params["x"], "x")
        vs = _as_array(params["v"], "v")
        if xs.size != vs.size:
            raise ConfigurationError("tabulated: x and v differ in length", key="v")
        if np.any(np.diff(xs) <= 0):
            raise ConfigurationError("tabulated: x must be strictly increasing", key="x")
        if xs[0] < 0:
            raise ConfigurationError("tabulated: x must be >= 0", key="x")
        interp = str(params["interp"])
        if interp not in ("linear", "step"):
            raise ConfigurationError("tabulated: interp must be 'linear' or 'step'", key="interp")
        clean = {"x": xs, "v": vs, "interp": interp}
    elif kind == "gap_inserted":
        base = params["base"]
        if not isinstance(base, PotentialSpec):
            raise ConfigurationError("gap_inserted: base must be a PotentialSpec", key="base")
        clean = {"base": base, "gaps": _parse_gaps(params["gaps"])}
    elif kind == "sum":
        terms = tuple((float(w), s) for w, s in params["terms"])
        clean = {"terms": terms}
    else:
        for key in allowed:
            clean[key] = _finite(params, key, kind)
        if kind in ("periodic", "periodic_plus_decay") and clean["T"] <= 0:
            raise ConfigurationError(f"{kind}: period T must be positive", key="T")
        if kind == "random_decay":
            if clean["seed"] != int(clean["seed"]) or clean["seed"] < 0:
                raise ConfigurationError("random_decay: seed must be a non-negative integer", key="seed")
            clean["seed"] = int(clean["seed"])
        if kind == "singular_lp_l1":
            if clean["beta"] <= 0:
                raise ConfigurationError("singular_lp_l1: beta must be positive", key="beta")
            if clean["width"] <= 0:
                raise ConfigurationError("singular_lp_l1: width must be positive", key="width")
            if clean["x0"] < 0:
                raise ConfigurationError("singular_lp_l1: x0 must be >= 0", key="x0")
    return PotentialSpec(kind, clean, support_cutoff)


def combine(terms):
    """Linear combination ``sum w_i V_i`` of specs, e.g. a background plus a perturbation."""
    terms = [(float(w), s) for w, s in terms]
    nonzero = [(w, s) for w, s in terms if w != 0.0 and not s.is_zero]
    if not nonzero:
        return make_potential("zero")
    if len(nonzero) == 1 and nonzero[0][0] == 1.0:
        return nonzero[0][1]
    return make_potential("sum", {"terms": nonzero})


# --------------------------------------------------------------------- weights
@dataclass(frozen=True)
class WeightSpec:
    """Monotone weight ``d(x) > 0`` with ``d' <= 0``.

    ``form='power'`` gives ``d(x) = (1 + tau(x))^-delta`` where ``tau`` is the
    identity, or the gap-compressing map of a ``gap_inserted`` potential when
    ``gaps`` is given.  ``form='tabulated_monotone'`` interpolates samples
    linearly and holds the last value beyond the grid.
    """

    form: str = "power"
    delta: float = 0.0
    x: tuple = ()
    d: tuple = ()
    gaps: tuple = ()

    def __post_init__(self):
        if self.form == "power":
            if not math.isfinite(self.delta) or self.delta < 0:
                raise ConfigurationError("weight: delta must be finite and >= 0", key="delta")
            object.__setattr__(self, "gaps", _parse_gaps(self.gaps) if self.gaps else ())
        elif self.form == "tabulated_monotone":
            xs = np.asarray(self.x, dtype=float)
            ds = np.asarray(self.d, dtype=float)
            if xs.size < 2 or xs.size != ds.size or np.any(np.diff(xs) <= 0):
                raise ConfigurationError("weight: need increasing x and matching d samples", key="x")
            if np.any(ds <= 0):
                raise ConfigurationError("weight: d must be strictly positive", key="d")
            if np.any(np.diff(ds) > 0):
                raise ConfigurationError("weight: d must be nonincreasing", key="d")
            object.__setattr__(self, "x", tuple(xs.tolist()))
            object.__setattr__(self, "d", tuple(ds.tolist()))
        else:
            raise ConfigurationError(f"unknown weight form {self.form!r}", key="form")

    @classmethod
    def for_gaps(cls, spec, delta):
        """Power weight in the base coordinate of a ``gap_inserted`` spec."""
        if spec.kind != "gap_inserted":
            raise ConfigurationError("for_gaps needs a gap_inserted potential", key="kind")
        return cls(form="power", delta=delta, gaps=spec.params["gaps"])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.form == "power":
            t = _GapMap(self.gaps).to_base(x)[0] if self.gaps else x
            return (1.0 + t) ** (-self.delta)
        return np.interp(x, self.x, self.d)


# ----------------------------------------------------------------------- norms
def _power_tail_ok(spec):
    return spec.kind in ("zero", "power_decay") or spec.is_zero


def _cells(spec, a, b):
    unit = np.arange(math.ceil(a), math.floor(b) + 1, dtype=float)
    pts = np.concatenate([[a, b], unit, spec.breakpoints(a, b)])
    pts = np.unique(pts)
    return pts[(pts >= a) & (pts <= b)]


def _cell_masses(spec, integrand, X, rtol):
    edges = _cells(spec, 0.0, X)
    vals = cell_integrals(integrand, edges, rtol=rtol,
                          singular_points=spec.singular_points())
    return edges, vals


def weighted_norm(spec, p, epsilon=0.0, norm_kind="lp_weighted", X_max=math.inf,
                  rtol=1e-10):
    """Weighted ``L^p`` or ``l^p(L^1)`` norm of a potential on ``[0, X_max]``.

    ``lp_weighted`` is ``(int_0^X |(1+x)^eps V|^p)^(1/p)``.  ``lp_l1`` is
    ``(sum_n (int_n^{n+1} (1+x)^eps |V|)^p)^(1/p)`` over unit cells, the last
    cell being cut at ``X_max``.  ``X_max = inf`` is supported for the power
    families, whose tails are summed analytically.

    Raises
    ------
    NonIntegrableError
        ``lp_weighted`` with a non ``p``-integrable local singularity; the
        message suggests ``lp_l1``.
    QuadratureError
        The cell quadrature did not reach ``rtol``.
    """
    p = float(p)
    if not 1.0 <= p <= 2.0:
        raise DomainError(f"p must lie in [1, 2], got {p}")
    if epsilon < 0:
        raise DomainError("epsilon must be >= 0")
    if norm_kind not in ("lp_weighted", "lp_l1"):
        raise ConfigurationError(f"unknown norm kind {norm_kind!r}", key="norm_kind")
    X = min(float(X_max), spec.support_cutoff)
    if spec.is_zero or X <= 0:
        return 0.0
    if math.isinf(X):
        if not _power_tail_ok(spec):
            raise DomainError("X_max = inf is only available for the power-decay families")
        return _power_norm_inf(spec, p, epsilon, norm_kind, rtol)

    if norm_kind == "lp_weighted":
        def integrand(x):
            return np.abs((1.0 + x) ** epsilon * spec(x)) ** p
        try:
            _, vals = _cell_masses(spec, integrand, X, rtol)
        except NonIntegrableError as exc:
            raise NonIntegrableError(
                f"|V|^p is not integrable near x={exc.location:g}; "
                "the l^p(L^1) norm (norm_kind='lp_l1') admits such local singularities",
                location=exc.location, achieved=exc.achieved) from exc
        return float(vals.sum()) ** (1.0 / p)

    def integrand(x):
        return (1.0 + x) ** epsilon * np.abs(spec(x))
    edges, vals = _cell_masses(spec, integrand, X, rtol)
    unit = np.floor(edges[:-1] + 1e-12).astype(np.int64)
    starts = np.flatnonzero(np.r_[True, unit[1:] != unit[:-1]])
    masses = np.add.reduceat(vals, starts)
    return float(np.sum(masses ** p)) ** (1.0 / p)


def _power_norm_inf(spec, p, eps, norm_kind, rtol):
    if spec.is_zero:
        return 0.0
    c, r = spec.params["c"], spec.params["r"]
    e = r - eps  # decay exponent of the weighted potential
    if norm_kind == "lp_weighted":
        if e * p <= 1.0:
            return math.inf
        return abs(c) * (1.0 / (e * p - 1.0)) ** (1.0 / p)
    if e * p <= 1.0:
        return math.inf
    # cell masses in closed form, summed directly up to N
    N = 10 ** 6

    def mass(n):
        n = np.asarray(n, dtype=float)
        if abs(1.0 - e) < 1e-14:
            return abs(c) * (np.log1p(n + 1.0) - np.log1p(n))
        a = 1.0 - e
        return abs(c) * ((n + 2.0) ** a - (n + 1.0) ** a) / a

    head = float(np.sum(mass(np.arange(N)) ** p))
    # mass(n) = |c| (n + 3/2)^-e (1 + O(n^-2)); midpoint rule for the rest
    tail = abs(c) ** p * (N + 1.0) ** (1.0 - e * p) / (e * p - 1.0)
    return (head + tail) ** (1.0 / p)


@dataclass
class NormReport:
    """Outcome of :func:`verify_d_weight`."""

    ok: bool
    norm_Vd_inv: float
    norm_VdN: float
    growth: float = 0.0
    detail: str = ""


def _plain_norm(spec, weight_fn, p, X, rtol):
    def integrand(x):
        return np.abs(spec(x) * weight_fn(x)) ** p
    _, vals = _cell_masses(spec, integrand, X, rtol)
    return float(vals.sum()) ** (1.0 / p)


def verify_d_weight(spec, d, p, N, X_max, tol=0.01, rtol=1e-10):
    """Check ``V / d`` in ``L^p`` and ``V d^N`` in ``L^1`` on ``[0, X_max]``.

    Both norms are also computed on ``[0, 2 X_max]``; the report is ``ok``
    when both are finite and change by less than ``tol`` (relative) under
    the doubling.  Otherwise ``growth`` holds the apparent power-law growth
    exponent ``log2(norm(2X) / norm(X))`` of the worse of the two.
    """
    if not p < 2:
        raise DomainError("verify_d_weight needs p < 2")
    if N < 1 or int(N) != N:
        raise DomainError("N must be a positive integer")
    if spec.is_zero:
        return NormReport(True, 0.0, 0.0, 0.0, "zero potential")
    inv = lambda x: 1.0 / d(x)
    powN = lambda x: d(x) ** N
    a1 = _plain_norm(spec, inv, p, X_max, rtol)
    b1 = _plain_norm(spec, powN, 1.0, X_max, rtol)
    a2 = _plain_norm(spec, inv, p, 2 * X_max, rtol)
    b2 = _plain_norm(spec, powN, 1.0, 2 * X_max, rtol)
    growth = 0.0
    msgs = []
    ok = True
    for name, lo, hi in (("V/d in L^p", a1, a2), ("V d^N in L^1", b1, b2)):
        if not (math.isfinite(lo) and math.isfinite(hi)):
            ok = False
            msgs.append(f"{name}: non-finite")
            growth = math.inf
            continue
        change = (hi - lo) / hi if hi > 0 else 0.0
        if change > tol:
            ok = False
            g = math.log2(hi / lo) if lo > 0 else math.inf
            growth = max(growth, g)
            msgs.append(f"{name}: grows by {100 * change:.2f}% on doubling X (exponent ~{g:.3f})")
    return NormReport(ok, a1, b1, growth, "; ".join(msgs) or "stable")


# --------------------------------------------------------------- serialization
def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_section(cp, name, spec):
    items = {"kind": spec.kind}
    p = spec.params
    if spec.kind == "tabulated":
        items["x"] = ", ".join(repr(float(t)) for t in p["x"])
        items["v"] = ", ".join(repr(float(t)) for t in p["v"])
        items["interp"] = p["interp"]
    elif spec.kind == "gap_inserted":
        items["gaps"] = ", ".join(f"{a!r}:{b!r}" for a, b in p["gaps"])
        _write_section(cp, name + ".base", p["base"])
    elif spec.kind == "sum":
        items["terms"] = str(len(p["terms"]))
        for i, (w, s) in enumerate(p["terms"]):
            _write_section(cp, f"{name}.term{i}", s)
            cp[f"{name}.term{i}"]["weight"] = repr(w)
    else:
        for k, v in p.items():
            items[k] = _fmt(v)
    if math.isfinite(spec.support_cutoff):
        items["support_cutoff"] = repr(spec.support_cutoff)
    if name in cp:
        cp[name].update(items)
    else:
        cp[name] = items


def dumps_spec(spec, section="potential"):
    """Serialize to a sectioned ``key = value`` text block."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    _write_section(cp, section, spec)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def spec_from_mapping(items, sections=None, name="potential", base_dir=None):
    """Build a spec from one config section.

    ``sections`` gives access to sibling sections (``<name>.base`` for gap
    insertion).  A tabulated kind may reference a two-column CSV with
    ``file = path``.
    """
    items = {k: v for k, v in dict(items).items()}
    kind = items.pop("kind", None)
    if kind is None:
        raise ConfigurationError(f"[{name}] needs a 'kind' entry", key="kind")
    kind = kind.strip()
    cutoff = items.pop("support_cutoff", math.inf)
    items.pop("weight", None)
    if kind == "tabulated" and "file" in items:
        path = items.pop("file")
        if base_dir is not None:
            import os
            path = os.path.join(base_dir, path)
        xs, vs = read_table_csv(path)
        items["x"], items["v"] = xs, vs
    if kind == "gap_inserted":
        sub = f"{name}.base"
        if sections is None or sub not in sections:
            raise ConfigurationError(f"gap_inserted needs a [{sub}] section", key="base")
        items["base"] = spec_from_mapping(sections[sub], sections, sub, base_dir)
    if kind == "sum":
        n = int(items.pop("terms"))
        terms = []
        for i in range(n):
            sub = f"{name}.term{i}"
            if sections is None or sub not in sections:
                raise ConfigurationError(f"missing [{sub}] section", key="terms")
            w = float(sections[sub].get("weight", 1.0))
            terms.append((w, spec_from_mapping(sections[sub], sections, sub, base_dir)))
        items["terms"] = terms
    return make_potential(kind, items, cutoff)


def loads_spec(text, section="potential"):
    """Inverse of :func:`dumps_spec`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable potential block: {exc}")
    if section not in cp:
        raise ConfigurationError(f"missing [{section}] section", key=section)
    return spec_from_mapping(cp[section], cp, section)


def read_table_csv(path):
    """Two-column ``x, V`` CSV (an optional header row is skipped)."""
    xs, vs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                x, v = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if not xs:
                    continue  # header
                raise ConfigurationError(f"{path}: bad row {row!r}", key="file")
            xs.append(x)
            vs.append(v)
    if not xs:
        raise ConfigurationError(f"{path}: no data rows", key="file")
    return np.array(xs), np.array(vs)


def write_table_csv(path, x, v):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "V"])
        for a, b in zip(np.asarray(x, dtype=float), np.asarray(v, dtype=float)):
            w.writerow([repr(float(a)), repr(float(b))])
