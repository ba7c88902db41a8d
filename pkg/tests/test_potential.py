import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wkblab.errors import ConfigurationError, DomainError, NonIntegrableError
from wkblab.potential import (WeightSpec, combine, dumps_spec, loads_spec, make_potential,
                              read_table_csv, verify_d_weight, weighted_norm, write_table_csv)

POWER = make_potential("power_decay", {"c": 1, "r": 0.6})


def test_zero_kind_vanishes():
    V = make_potential("zero")
    assert V(5.0) == 0.0
    assert V.is_zero


def test_power_decay_formula():
    x = np.array([0.0, 1.0, 10.0, 1e4])
    assert POWER(0.0) == 1.0
    np.testing.assert_allclose(POWER(x), (1 + x) ** -0.6, rtol=1e-15)


def test_wigner_von_neumann_form():
    V = make_potential("wigner_von_neumann", {"a": -8, "k": 2})
    x = np.array([0.0, 0.3, 7.0, 123.4])
    ref = np.array([-8 * math.sin(2 * t) / (1 + t) for t in x])
    np.testing.assert_allclose(V(x), ref, rtol=1e-14, atol=1e-15)
    # a sin(kx) / x at large x
    x = np.array([1e6 + 0.4])
    assert abs(V(x)[0] / (-8 * math.sin(2 * x[0]) / x[0]) - 1) < 2e-6


def test_periodic_is_exactly_periodic():
    U = make_potential("periodic", {"c": 2, "T": 2.0})
    x = np.arange(0, 4096) / 64.0  # x + T is exact for these
    np.testing.assert_array_equal(U(x), U(x + 2.0))
    U = make_potential("periodic", {"c": 2, "T": 2 * math.pi})
    x = np.linspace(0, 1e4, 1001)
    np.testing.assert_allclose(U(x + 2 * math.pi), U(x), atol=1e-11)


def test_random_kind_deterministic_per_seed():
    a = make_potential("random_decay", {"c": 1, "r": 0.4, "seed": 3})
    b = make_potential("random_decay", {"c": 1, "r": 0.4, "seed": 3})
    c = make_potential("random_decay", {"c": 1, "r": 0.4, "seed": 4})
    x = np.linspace(0, 200, 4001)
    np.testing.assert_array_equal(a(x), b(x))
    assert np.any(a(x) != c(x))
    # constant sign on each unit cell
    cells = np.floor(x[:-1])
    s = np.sign(a(x[:-1]))
    for n in range(5):
        assert len(set(s[cells == n])) == 1


def test_support_cutoff():
    V = make_potential("power_decay", {"c": 1, "r": 0.6}, support_cutoff=10)
    assert V(9.0) > 0
    assert V(10.5) == 0.0


def test_missing_parameter_names_key():
    with pytest.raises(ConfigurationError) as exc:
        make_potential("power_decay", {"c": 1})
    assert exc.value.key == "r"


def test_negative_period_rejected():
    with pytest.raises(ConfigurationError) as exc:
        make_potential("periodic", {"c": 1, "T": -1})
    assert exc.value.key == "T"


def test_non_finite_parameter_rejected():
    with pytest.raises(ConfigurationError):
        make_potential("power_decay", {"c": float("inf"), "r": 1})


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        make_potential("coulomb", {})


def test_gap_insertion_shifts_base():
    base = POWER
    G = make_potential("gap_inserted", {"base": base, "gaps": [(5.0, 3.0)]})
    assert G(2.0) == pytest.approx(base(2.0))
    assert G(6.5) == 0.0
    # after the gap the base profile resumes, shifted by the gap length
    assert G(9.0) == pytest.approx(base(6.0))


def test_combine_sums_terms():
    U = make_potential("periodic", {"c": 2, "T": 2 * math.pi})
    W = combine([(1, U), (1, POWER)])
    x = np.linspace(0, 30, 31)
    np.testing.assert_allclose(W(x), U(x) + POWER(x))
    assert combine([(1, POWER), (1, make_potential("zero"))]) is POWER


# ------------------------------------------------------------------ norms
def test_weighted_norm_closed_form_infinite_range():
    val = weighted_norm(POWER, 2, 0.05, "lp_weighted", X_max=math.inf)
    assert val == pytest.approx(math.sqrt(10.0), rel=1e-10)


def test_weighted_norm_finite_range_matches_antiderivative():
    X = 1e3
    exact = math.sqrt((1 - (1 + X) ** -0.1) / 0.1)
    assert weighted_norm(POWER, 2, 0.05, X_max=X) == pytest.approx(exact, rel=1e-10)


@pytest.mark.parametrize("kind", ["lp_weighted", "lp_l1"])
def test_zero_potential_norm(kind):
    assert weighted_norm(make_potential("zero"), 1.5, 0.2, kind, X_max=100) == 0.0


def test_lp_l1_single_cell():
    V = make_potential("tabulated", {"x": [0, 1, 4], "v": [1, 0, 0], "interp": "step"})
    assert weighted_norm(V, 2, 0, "lp_l1", X_max=4) == pytest.approx(1.0, rel=1e-12)


def test_lp_l1_cell_sums():
    # cell masses 2, 1, 0.5 on unit cells
    V = make_potential("tabulated", {"x": [0, 1, 2, 3], "v": [2, 1, 0.5, 0.5], "interp": "step"})
    assert weighted_norm(V, 2, 0, "lp_l1", X_max=3) == pytest.approx(math.sqrt(4 + 1 + 0.25))


def test_singular_potential_flagged_by_lp_weighted():
    S = make_potential("singular_lp_l1", {"s": 1, "x0": 3.5, "beta": 0.7})
    assert math.isfinite(weighted_norm(S, 2, 0, "lp_l1", X_max=10))
    with pytest.raises(NonIntegrableError, match="lp_l1"):
        weighted_norm(S, 2, 0, "lp_weighted", X_max=10)


def test_p_outside_range():
    with pytest.raises(DomainError):
        weighted_norm(POWER, 2.5, X_max=10)


@settings(max_examples=20, deadline=None)
@given(X=st.floats(1.0, 200.0), dX=st.floats(0.5, 100.0), seed=st.integers(0, 1000))
def test_norm_nondecreasing_in_range(X, dX, seed):
    V = make_potential("random_decay", {"c": 1, "r": 0.5, "seed": seed})
    for kind in ("lp_weighted", "lp_l1"):
        assert weighted_norm(V, 1.5, 0.1, kind, X_max=X) <= weighted_norm(V, 1.5, 0.1, kind, X_max=X + dX) * (1 + 1e-12)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), p=st.floats(1, 2), eps=st.floats(0, 0.3))
def test_norm_homogeneous(c, p, eps):
    V = make_potential("power_decay", {"c": 1, "r": 0.8})
    cV = make_potential("power_decay", {"c": c, "r": 0.8})
    for kind in ("lp_weighted", "lp_l1"):
        a = weighted_norm(cV, p, eps, kind, X_max=50)
        b = weighted_norm(V, p, eps, kind, X_max=50)
        assert a == pytest.approx(abs(c) * b, rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), X=st.integers(2, 60))
def test_l1_norms_agree_for_p_one(seed, X):
    V = make_potential("random_decay", {"c": 2, "r": 0.3, "seed": seed})
    a = weighted_norm(V, 1, 0, "lp_weighted", X_max=X)
    b = weighted_norm(V, 1, 0, "lp_l1", X_max=X)
    assert a == pytest.approx(b, rel=1e-10)


# ------------------------------------------------------------ d weights
def test_d_weight_slow_divergence_detected():
    # (0.6 - 0.05) * 1.8 = 0.99 < 1: V/d is not in L^1.8, its norm creeps up
    rep = verify_d_weight(POWER, WeightSpec(delta=0.05), p=1.8, N=20, X_max=1e4)
    assert not rep.ok
    assert 0 < rep.growth < 0.1
    assert math.isfinite(rep.norm_Vd_inv)


def test_d_weight_zero_potential():
    rep = verify_d_weight(make_potential("zero"), WeightSpec(delta=0.3), p=1.5, N=3, X_max=100)
    assert rep.ok and rep.norm_Vd_inv == 0.0 and rep.norm_VdN == 0.0


def test_d_weight_convergent_case():
    V = make_potential("power_decay", {"c": 1, "r": 1.5})
    rep = verify_d_weight(V, WeightSpec(delta=0.1), p=1.5, N=2, X_max=1e4)
    assert rep.ok, rep.detail


def test_d_weight_gap_inserted():
    base = make_potential("power_decay", {"c": 1, "r": 1.0})
    G = make_potential("gap_inserted", {"base": base, "gaps": [(10.0, 50.0), (200.0, 500.0)]})
    d = WeightSpec.for_gaps(G, 0.1)
    rep = verify_d_weight(G, d, p=1.9, N=30, X_max=1e4)
    assert rep.ok, rep.detail


def test_d_weight_requires_p_below_two():
    with pytest.raises(DomainError):
        verify_d_weight(POWER, WeightSpec(delta=0.1), p=2, N=1, X_max=10)


def test_weight_validation():
    with pytest.raises(ConfigurationError):
        WeightSpec(form="tabulated_monotone", x=(0, 1, 2), d=(1, 2, 0.5))
    with pytest.raises(ConfigurationError):
        WeightSpec(delta=-1)
    w = WeightSpec(form="tabulated_monotone", x=(0, 1, 2), d=(1, 0.5, 0.25))
    assert w(1.5) == pytest.approx(0.375)


# ---------------------------------------------------------- serialization
@pytest.mark.parametrize("V", [
    POWER,
    make_potential("wigner_von_neumann", {"a": -8, "k": 2}),
    make_potential("random_decay", {"c": 1, "r": 0.5, "seed": 9}, support_cutoff=100),
    make_potential("singular_lp_l1", {"s": 1, "x0": 2, "beta": 0.5}),
    make_potential("gap_inserted", {"base": POWER, "gaps": [(3, 1)]}),
    combine([(1, make_potential("periodic", {"c": 2, "T": 6.0})), (0.5, POWER)]),
])
def test_spec_text_round_trip(V):
    text = dumps_spec(V)
    W = loads_spec(text)
    x = np.linspace(0, 40, 801)
    np.testing.assert_array_equal(V(x), W(x))
    assert dumps_spec(W) == text


def test_tabulated_csv_round_trip(tmp_path):
    x = np.linspace(0, 5, 11)
    v = np.cos(x)
    path = tmp_path / "v.csv"
    write_table_csv(path, x, v)
    assert path.read_text().splitlines()[0] == "x,V"
    xs, vs = read_table_csv(path)
    np.testing.assert_array_equal(xs, x)
    np.testing.assert_array_equal(vs, v)
    T = make_potential("tabulated", {"x": xs, "v": vs})
    assert T(0.25) == pytest.approx(0.5 * (math.cos(0) + math.cos(0.5)))
