import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wkblab.errors import DomainError, GrowthOverflow, InsufficientRangeError
from wkblab.potential import make_potential
from wkblab.schrod import (boundedness_metrics, embedded_eigenvalue_scan, integrate_eigenfunction,
                           propagate, subordinacy_score, subordinate_solution, write_scan_csv,
                           write_trajectory_csv)

ZERO = make_potential("zero")
WVN = make_potential("wigner_von_neumann", {"a": -8, "k": 2})


def test_free_plane_wave():
    tr = integrate_eigenfunction(ZERO, 1.0, (1, 1j), 100.0, tol=1e-10)
    np.testing.assert_allclose(tr.y, np.exp(1j * tr.x), atol=1e-8)
    np.testing.assert_allclose(tr.amp, 2.0, atol=1e-8)


def test_free_cosine():
    tr = integrate_eigenfunction(ZERO, 4.0, (1, 0), 30.0, tol=1e-11)
    np.testing.assert_allclose(tr.y, np.cos(2 * tr.x), atol=1e-8)
    assert np.max(np.abs(tr.y.imag)) == 0.0


@pytest.mark.parametrize("method", ["rk", "magnus"])
def test_methods_verified(method):
    W = make_potential("power_decay", {"c": 1, "r": 0.6})
    tr = integrate_eigenfunction(W, 1.0, (1, 0), 200.0, tol=1e-10, method=method)
    assert tr.meta["verified"], tr.meta


def test_decaying_potential_bounded_amplitude():
    W = make_potential("power_decay", {"c": 1, "r": 0.6})
    tr = integrate_eigenfunction(W, 1.0, (1, 1j), 1e4, tol=1e-9)
    late = tr.amp[tr.x >= 1e3]
    assert late.max() / late.min() < 3


def test_free_growth_exponent_near_zero():
    tr = integrate_eigenfunction(ZERO, 2.0, (1, 0.3), 2000.0, tol=1e-10)
    rep = boundedness_metrics(tr)
    assert abs(rep.growth_exponent) < 0.01
    assert rep.bounded


def test_wigner_von_neumann_subordinate_decays():
    tr = subordinate_solution(WVN, 0.99993, 1e3, tol=1e-10)
    rep = boundedness_metrics(tr)
    assert rep.growth_exponent < -0.2


def test_barrier_below_threshold_grows():
    # lam = 0.01 is below the barrier (1 + x)^-0.3 until x ~ 4.6e6
    W = make_potential("power_decay", {"c": 1, "r": 0.3})
    tr = integrate_eigenfunction(W, 0.01, (1, 0), 300.0, tol=1e-9)
    rep = boundedness_metrics(tr)
    assert rep.growth_exponent > 0.2
    assert not rep.bounded


def test_scan_zero_potential_has_no_candidates():
    res = embedded_eigenvalue_scan(ZERO, np.linspace(0.5, 2, 6), 300.0, threshold=0.1)
    assert res.candidates == []
    assert all(r.verdict == "regular" for r in res.rows)


def test_scan_power_decay_has_no_candidates():
    W = make_potential("power_decay", {"c": 1, "r": 0.6})
    res = embedded_eigenvalue_scan(W, np.linspace(0.5, 2, 5), 1000.0, threshold=0.1)
    assert res.candidates == []


def test_wigner_von_neumann_score_small_at_eigenvalue():
    on = subordinacy_score(WVN, 1.0, 1e3)
    off = subordinacy_score(WVN, 1.5, 1e3)
    assert on < 0.1 < off


def test_scan_csv(tmp_path):
    res = embedded_eigenvalue_scan(ZERO, [1.0, 2.0], 100.0)
    path = tmp_path / "scan.csv"
    write_scan_csv(path, res)
    lines = path.read_text().splitlines()
    assert lines[0] == "lambda,score,verdict"
    assert len(lines) == 3


def test_trajectory_csv(tmp_path):
    tr = integrate_eigenfunction(ZERO, 1.0, (1, 0), 10.0)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, tr, stride=3)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,re_y,im_y,re_dy,im_dy,amp"
    assert float(lines[1].split(",")[5]) == 1.0


# ------------------------------------------------------------- invariants
@settings(max_examples=10, deadline=None)
@given(a=st.complex_numbers(max_magnitude=3, allow_nan=False),
       b=st.complex_numbers(max_magnitude=3, allow_nan=False))
def test_linearity_in_initial_data(a, b):
    W = make_potential("power_decay", {"c": 1, "r": 0.6})
    _, Y1 = propagate(W, 1.3, np.array([1, 0], complex), 0.0, 40.0, 1e-11)
    _, Y2 = propagate(W, 1.3, np.array([0, 1], complex), 0.0, 40.0, 1e-11)
    _, Y = propagate(W, 1.3, np.array([a, b]), 0.0, 40.0, 1e-11)
    np.testing.assert_allclose(Y[-1], a * Y1[-1] + b * Y2[-1], atol=1e-8 * (1 + abs(a) + abs(b)))


def test_wronskian_constant():
    W = make_potential("random_decay", {"c": 1, "r": 0.5, "seed": 2})
    _, Y1 = propagate(W, 0.8, np.array([1, 0], complex), 0.0, 200.0, 1e-11)
    _, Y2 = propagate(W, 0.8, np.array([0, 1], complex), 0.0, 200.0, 1e-11)
    wr = Y1[:, 0] * Y2[:, 1] - Y1[:, 1] * Y2[:, 0]
    assert np.max(np.abs(wr - 1)) < 1e-8


def test_real_data_stay_real():
    tr = integrate_eigenfunction(WVN, 1.2, (0.3, -1.0), 100.0)
    assert np.max(np.abs(tr.y.imag)) == 0.0


def test_time_reversal():
    W = make_potential("power_decay", {"c": 1, "r": 0.8})
    x, Y = propagate(W, 1.0, np.array([1, 0.5j]), 0.0, 50.0, 1e-12)
    xb, Yb = propagate(W, 1.0, Y[-1], 50.0, 0.0, 1e-12)
    assert xb[-1] == 0.0
    np.testing.assert_allclose(Yb[-1], [1, 0.5j], atol=1e-8)


# ------------------------------------------------------------------ errors
def test_short_trajectory_rejected():
    tr = integrate_eigenfunction(ZERO, 1.0, (1, 0), 3.0, x0=1.0)
    with pytest.raises(InsufficientRangeError):
        boundedness_metrics(tr)


def test_overflow_is_reported():
    wall = make_potential("tabulated", {"x": [0, 1e3], "v": [1e3, 1e3], "interp": "step"})
    with pytest.raises(GrowthOverflow) as exc:
        integrate_eigenfunction(wall, 1.0, (1, 0), 100.0)
    assert 0 < exc.value.location < 100


@pytest.mark.parametrize("kw", [{"lam": 0}, {"lam": -1}, {"tol": 1e-3}, {"X_max": 0.0}])
def test_bad_arguments(kw):
    args = {"W": ZERO, "lam": 1.0, "init": (1, 0), "X_max": 10.0}
    args.update(kw)
    with pytest.raises(DomainError):
        integrate_eigenfunction(**args)


def test_scan_rejects_nonpositive_energy():
    with pytest.raises(DomainError):
        embedded_eigenvalue_scan(ZERO, [0.0, 1.0], 100.0)


def test_amp_scales_with_energy():
    tr = integrate_eigenfunction(ZERO, 9.0, (0, 3), 5.0)
    np.testing.assert_allclose(tr.amp, 1.0, atol=1e-9)
    assert tr.X == 5.0
    assert tr.state().shape == (tr.x.size, 2)
    assert math.isclose(tr.lam, 9.0)
