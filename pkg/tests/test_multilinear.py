import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from wkblab.errors import ConfigurationError, DomainError, ResourceError
from wkblab.multilinear import (Cutoff, KernelSpec, MultilinearSpec, TruncationVector,
                                apply_kernel_truncated, common_edges, dyadic_ladder,
                                dumps_probe_summary, empirical_norm_constant, t_n_eval,
                                t_n_maximal, tail_decay, write_probe_csv, z_kernel,
                                z_kernel_decay)
from wkblab.potential import make_potential
from wkblab.stepfn import Restricted, StepFunction, random_step_function

ONE = KernelSpec.tabulated([0.0], [1.0], id="one")
OSC = KernelSpec.custom(lambda lam, x: np.exp(2j * lam * x), id="osc", bound=1.0)
UNIT = StepFunction.indicator(0, 1)
ZERO = make_potential("zero")


def _pair_spec(k1=ONE, k2=ONE):
    return MultilinearSpec.class_m([k1, k2], [1])


# ------------------------------------------------------------ single kernel
def test_constant_kernel_on_indicator():
    assert apply_kernel_truncated(ONE, UNIT, [1.0], N=1)[0] == pytest.approx(1.0, abs=1e-15)


def test_oscillatory_kernel_closed_form():
    lams = np.array([0.3, 1.0, 2.7])
    got = apply_kernel_truncated(OSC, UNIT, lams, N=1)
    ref = (np.exp(2j * lams) - 1) / (2j * lams)
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_truncation_point_inside_support():
    got = apply_kernel_truncated(OSC, UNIT, [1.5], N=0.4)[0]
    assert got == pytest.approx((cmath.exp(2j * 1.5 * 0.4) - 1) / 3j, rel=1e-12)


def test_sup_mode_dominates():
    f = StepFunction(np.arange(9.0), [1, -1] * 4)
    lams = np.linspace(0.2, 3, 15)
    full = np.abs(apply_kernel_truncated(OSC, f, lams))
    sup = apply_kernel_truncated(OSC, f, lams, sup=True)
    assert np.all(sup >= full - 1e-15)


def test_kernel_bound_enforced():
    k = KernelSpec.custom(lambda lam, x: np.full(np.shape(x), 2.0 + 0j), bound=1.0)
    with pytest.raises(DomainError):
        apply_kernel_truncated(k, UNIT, [1.0])


def test_free_theta_kernels_are_conjugate():
    V = make_potential("power_decay", {"c": 1, "r": 0.6})
    ka = KernelSpec("a", "conj_theta_sq_phase", V=V)
    kb = KernelSpec("b", "theta_sq_phase", V=V)
    x = np.linspace(0, 30, 61)
    np.testing.assert_allclose(ka(1.2, x), np.conj(kb(1.2, x)))
    np.testing.assert_allclose(np.abs(ka(1.2, x)), 1.0, rtol=1e-14)


# --------------------------------------------------------------- transforms
def test_ordered_pair_gives_half():
    assert t_n_eval(_pair_spec(), [UNIT, UNIT], 1.0) == pytest.approx(0.5, abs=1e-15)


def test_contradictory_constraints_vanish():
    spec = MultilinearSpec(3, (ONE, ONE, ONE), ((2, 1), (3, 1), (1, 3)))
    assert t_n_eval(spec, [UNIT] * 3, 1.0) == 0


def test_factorization_without_constraints(rng):
    f1 = random_step_function(rng, 6, complex_values=True)
    f2 = random_step_function(rng, 4)
    spec = MultilinearSpec(2, (OSC, ONE))
    got = t_n_eval(spec, [f1, f2], 0.8)
    ref = apply_kernel_truncated(OSC, f1, [0.8])[0] * apply_kernel_truncated(ONE, f2, [0.8])[0]
    assert abs(got - ref) < 1e-13 * max(1.0, abs(ref))


def test_multilinearity(rng):
    fs = [random_step_function(rng, 5, complex_values=True) for _ in range(3)]
    spec = MultilinearSpec.class_m([OSC, ONE, OSC], [1, 2])
    edges = common_edges(fs)
    base = t_n_eval(spec, fs, 1.1, edges=edges)
    c = 2.5 - 0.75j
    scaled = t_n_eval(spec, [fs[0] * c, fs[1], fs[2]], 1.1, edges=edges)
    assert abs(scaled - c * base) < 1e-14 * abs(c * base)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 3), data=st.data())
def test_nested_equals_dense(seed, n, data):
    rng = np.random.default_rng(seed)
    sigma = [data.draw(st.integers(1, j - 1)) for j in range(2, n + 1)]
    spec = MultilinearSpec.class_m([OSC] * n, sigma)
    fs = [random_step_function(rng, int(rng.integers(2, 8)), complex_values=True) for _ in range(n)]
    edges = common_edges(fs, resolution=32)
    a = t_n_eval(spec, fs, 0.9, method="nested", edges=edges)
    b = t_n_eval(spec, fs, 0.9, method="dense", edges=edges)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def test_telescoping_identity(rng):
    f = random_step_function(rng, 8, complex_values=True)
    N = 3.0
    fN, g = f.truncate(N), f.tail(N)
    spec = _pair_spec(OSC, OSC)
    edges = common_edges([f], (N,))
    T = lambda a, b: t_n_eval(spec, [a, b], 1.3, edges=edges)
    assert abs((T(f, f) - T(fN, fN)) - (T(g, f) + T(fN, g))) < 1e-14


def test_truncation_vector_masks_slots():
    spec = _pair_spec()
    # x2 > x1 with x1 < 0.5 and x2 < 1: 1/2 - 1/8
    val = t_n_eval(spec, [UNIT, UNIT], 1.0, D=(0.5, math.inf))
    assert val == pytest.approx(0.375, abs=1e-15)
    with pytest.raises(DomainError):
        TruncationVector((-1.0, 1.0))
    with pytest.raises(DomainError):
        t_n_eval(spec, [UNIT, UNIT], 1.0, D=(1.0,))


def test_dense_limits():
    # acyclic but not a forest: only the dense evaluator applies
    spec = MultilinearSpec(5, (ONE,) * 5, ((2, 1), (3, 1), (3, 2)))
    with pytest.raises(ResourceError):
        t_n_eval(spec, [UNIT] * 5, 1.0)
    spec3 = MultilinearSpec(3, (ONE,) * 3, ((2, 1), (3, 1), (3, 2)))
    # x3 > x2 > x1 on the unit square: 1/6
    assert t_n_eval(spec3, [UNIT] * 3, 1.0, resolution=256) == pytest.approx(1 / 6, abs=1e-5)
    with pytest.raises(ResourceError):
        t_n_eval(spec3, [UNIT] * 3, 1.0, resolution=64, max_elements=1e3)


def test_wrong_function_count():
    with pytest.raises(DomainError):
        t_n_eval(_pair_spec(), [UNIT], 1.0)


# ------------------------------------------------------------------ maximal
def test_maximal_dominates_full_value():
    res = t_n_maximal(_pair_spec(), [UNIT, UNIT], 1.0, ladder=(0.25, 0.5, math.inf))
    assert res.value >= 0.5 - 1e-15
    assert res.evaluations == 9


def test_maximal_zero_function():
    f0 = StepFunction([0, 1, 2], [0.0, 0.0])
    assert t_n_maximal(_pair_spec(OSC, OSC), [f0, UNIT], 1.0).value == 0.0


def test_prefix_mode_below_independent(rng):
    fs = [random_step_function(rng, 8) for _ in range(2)]
    spec = _pair_spec(OSC, OSC)
    ind = t_n_maximal(spec, fs, 1.4)
    pre = t_n_maximal(spec, fs, 1.4, mode="prefix")
    full = abs(t_n_eval(spec, fs, 1.4))
    assert full <= pre.value + 1e-15 <= ind.value + 2e-15
    # refining the prefix family can only increase the supremum
    finer = t_n_maximal(spec, fs, 1.4, ladder=dyadic_ladder(0.5, 8, base=math.sqrt(2)), mode="prefix")
    assert finer.value >= pre.value - 1e-15


def test_ladder():
    assert dyadic_ladder(1, 10) == (2.0, 4.0, 8.0, math.inf)


# --------------------------------------------------------------- tail decay
def test_tail_decay_power_law():
    V = make_potential("power_decay", {"c": 1, "r": 1.5})
    spec = _pair_spec(OSC, OSC)
    f = Restricted(V, 0, 2000)
    td = tail_decay(spec, f, 1.0, 2.0 ** np.arange(2, 9))
    assert np.all(np.diff(td.values) < 0)
    assert td.slope < -1.0


def test_truncation_converges():
    V = make_potential("power_decay", {"c": 1, "r": 0.8})
    f = Restricted(V, 0, 512)
    spec = MultilinearSpec.class_m([OSC, OSC], [1])
    D = 2.0 ** np.arange(2, 9)
    vals = [abs(t_n_eval(spec, [f, f], 1.0, D=(d, d), resolution=2048)) for d in D]
    inc = np.abs(np.diff(vals))
    assert inc[-1] < inc[0]


# -------------------------------------------------------------------- probe
def test_s_n_arithmetic():
    spec = MultilinearSpec.class_m([ONE, ONE], [1], p=4 / 3)
    assert spec.q == pytest.approx(4.0)
    assert spec.s_n == pytest.approx(2.0)
    assert MultilinearSpec(1, (ONE,), p=1).q == math.inf


def test_sigma_validation():
    with pytest.raises(ConfigurationError):
        MultilinearSpec.class_m([ONE, ONE], {2: 2})
    with pytest.raises(ConfigurationError):
        MultilinearSpec.class_m([ONE, ONE, ONE], [1])
    with pytest.raises(ConfigurationError):
        MultilinearSpec(2, (ONE,))


def test_probe_single_kernel_bound(tmp_path):
    spec = MultilinearSpec(1, (OSC,), p=1.0)
    res = empirical_norm_constant(spec, trials=12, seed=4, ncell=8)
    # p = 1: sup over the grid of |K f| is at most ||f||_1
    assert res.max_ratio <= 1.0 + 1e-12
    path = tmp_path / "probe.csv"
    write_probe_csv(path, res)
    assert path.read_text().splitlines()[0] == "trial,ratio"
    assert '"s_n"' in dumps_probe_summary(res)


def test_probe_seeded():
    spec = _pair_spec(OSC, OSC)
    a = empirical_norm_constant(spec, trials=10, seed=7, ncell=8)
    b = empirical_norm_constant(spec, trials=10, seed=7, ncell=8)
    np.testing.assert_array_equal(a.ratios, b.ratios)
    with pytest.raises(DomainError):
        empirical_norm_constant(spec, trials=5)


# ------------------------------------------------------------------ Z kernel
PHI = Cutoff(1.0, 2.0, order=2)


def test_z_on_diagonal_is_cutoff_mass():
    z, fb = z_kernel(PHI, ZERO, 3.0, 3.0)
    ref = quad(lambda l: PHI(l), PHI.lo, PHI.hi, points=PHI.breakpoints(), epsabs=1e-13)[0]
    assert not fb
    assert z == pytest.approx(ref, abs=1e-10)


def test_z_decay_slope_for_kinked_cutoff():
    ds = np.geomspace(20, 2000, 9)
    z = [abs(z_kernel(PHI, ZERO, d, 0.0)[0]) for d in ds]
    slope = np.polyfit(np.log(ds), np.log(z), 1)[0]
    assert slope <= -4 + 0.2


def test_z_bound_with_potential():
    V = make_potential("power_decay", {"c": 1, "r": 0.6})
    pairs = [(x, y) for x, y in zip(np.geomspace(5, 3000, 12), np.linspace(0, 3, 12))]
    rep = z_kernel_decay(PHI, V, pairs, N=4, p=2.0)
    assert rep.exponent == 2.0
    assert rep.all_bounded


def test_cutoff_validation():
    with pytest.raises(ConfigurationError):
        Cutoff(2.0, 1.0)
    with pytest.raises(DomainError):
        z_kernel_decay(PHI, ZERO, [(1, 0)], N=2, p=2.0)
