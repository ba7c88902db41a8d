import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from wkblab.basis import theta_basis
from wkblab.errors import DomainError, InsufficientRangeError, SingularTransformError
from wkblab.potential import make_potential
from wkblab.qiter import q_iterate
from wkblab.schrod import integrate_eigenfunction
from wkblab.transform import (PhaseAccumulator, cumbersome_phase, phase_p, stage_matrix,
                              stage_residual, transform_chain, wkb_deviation, wkb_predict,
                              write_deviation_csv)

ZERO = make_potential("zero")
POWER = make_potential("power_decay", {"c": 1, "r": 0.6})
MATHIEU = make_potential("periodic", {"c": 2, "T": 2 * math.pi})


@pytest.fixture(scope="module")
def free_setup():
    b = theta_basis("free", lam=1.0)
    acc = PhaseAccumulator(b, POWER)
    q = q_iterate(POWER, b, 1, X_cut=4000, acc=acc)
    return b, acc, q


@pytest.fixture(scope="module")
def traj():
    return integrate_eigenfunction(POWER, 1.0, (1, 0.4j), 200.0, tol=1e-11)


def test_phase_free_closed_form():
    lam = 2.25
    b = theta_basis("free", lam=lam)
    acc = PhaseAccumulator(b, POWER)
    x = np.array([0.0, 1.0, 17.5, 400.0])
    ref = -((1 + x) ** 0.4 - 1) / 0.4 / (2 * math.sqrt(lam))
    np.testing.assert_allclose(phase_p(acc, x), ref, rtol=1e-10, atol=1e-15)


def test_phase_bloch_against_quad():
    b = theta_basis("bloch", MATHIEU, 2.0)
    V = make_potential("power_decay", {"c": 0.5, "r": 1.0})
    acc = PhaseAccumulator(b, V)
    X = 9.0
    ref = quad(lambda t: V(np.array([t]))[0] * b.abs2(np.array([t]))[0], 0, X, limit=200,
               epsabs=1e-13, epsrel=1e-12)[0] / (2 * b.imw)
    assert acc(np.array([X]))[0] == pytest.approx(ref, rel=1e-9)


def test_zero_potential_phase_vanishes():
    b = theta_basis("free", lam=1.0)
    x = np.linspace(0, 50, 11)
    np.testing.assert_array_equal(phase_p(PhaseAccumulator(b, ZERO), x), 0.0)
    np.testing.assert_allclose(wkb_predict(b, ZERO, x), np.exp(1j * x), atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(x1=st.floats(0, 300), x2=st.floats(0, 300))
def test_phase_additive(x1, x2):
    b = theta_basis("free", lam=1.3)
    acc = PhaseAccumulator(b, POWER)
    lo, hi = sorted((x1, x2))
    total = acc.integral(np.array([hi]))[0]
    parts = acc.integral(np.array([lo]))[0] + acc.between(np.array([lo]), np.array([hi]))[0]
    assert parts == pytest.approx(total, rel=1e-12, abs=1e-12)


def test_negative_x_rejected():
    acc = PhaseAccumulator(theta_basis("free", lam=1.0), POWER)
    with pytest.raises(DomainError):
        acc.integral(np.array([-1.0]))


# ------------------------------------------------------------------ stages
def test_y2_constant_without_perturbation():
    b = theta_basis("free", lam=1.0)
    tr = integrate_eigenfunction(ZERO, 1.0, (0.3, 2j), 100.0)
    st2 = transform_chain(tr, b, ZERO, "y2")
    assert np.max(np.abs(st2.Y - st2.Y[0])) < 1e-8


def test_y3_off_diagonal_modulus(free_setup):
    b, acc, _ = free_setup
    x = np.linspace(0, 40, 81)
    A = stage_matrix("y3", x, b, POWER, acc)
    np.testing.assert_allclose(np.abs(A[:, 0, 1]), POWER(x) / 2, rtol=1e-13)
    np.testing.assert_array_equal(A[:, 0, 0], 0)


def test_y4_diagonal_imaginary(free_setup):
    b, acc, q = free_setup
    A = stage_matrix("y4", np.linspace(0, 100, 201), b, POWER, acc, q)
    assert np.max(np.abs(A[:, 0, 0].real)) == 0.0
    np.testing.assert_allclose(A[:, 1, 1], -A[:, 0, 0])


def test_y4_coupling_integrable(free_setup):
    b, acc, q = free_setup
    m3, m4 = [], []
    for lo in (10.0, 100.0, 1000.0):
        x = np.linspace(lo, 2 * lo, 4001)
        m3.append(np.trapezoid(np.abs(stage_matrix("y3", x, b, POWER, acc)[:, 0, 1]), x))
        m4.append(np.trapezoid(np.abs(stage_matrix("y4", x, b, POWER, acc, q)[:, 0, 1]), x))
    # dyadic masses grow for y3 (V is not integrable) and shrink for y4
    assert m3[0] < m3[1] < m3[2]
    assert m4[0] > m4[1] > m4[2]
    assert m4[2] < 1e-6


@pytest.mark.parametrize("stage", ["y2", "y3", "y4"])
def test_stage_satisfies_own_equation(traj, free_setup, stage):
    b, acc, q = free_setup
    st_ = transform_chain(traj, b, POWER, stage, q=q, acc=acc)
    assert stage_residual(st_, b, POWER, acc, q) < 1e-8


def test_y3_gronwall_bound(traj, free_setup):
    b, acc, _ = free_setup
    st3 = transform_chain(traj, b, POWER, "y3", acc=acc)
    nrm = np.linalg.norm(st3.Y, axis=1)
    mass = ((1 + traj.x) ** 0.4 - 1) / 0.4 / 2  # int_0^x |c a|
    assert np.all(nrm <= nrm[0] * np.exp(mass) * (1 + 1e-9))


def test_round_trip(traj, free_setup):
    b, acc, q = free_setup
    for stage in ("y2", "y3", "y4"):
        back = transform_chain(transform_chain(traj, b, POWER, stage, q=q, acc=acc),
                               b, POWER, stage, q=q, direction="backward", acc=acc)
        err = np.max(np.abs(back.y - traj.y)) / np.max(np.abs(traj.y))
        assert err < 1e-12


def test_singular_q_rejected(traj, free_setup):
    b, acc, _ = free_setup

    def fake(x):
        return np.full(np.shape(x), 1.2 + 0j), np.zeros(np.shape(x), complex)

    with pytest.raises(SingularTransformError) as exc:
        transform_chain(traj, b, POWER, "y4", q=fake, acc=acc)
    assert exc.value.location == 0.0


def test_energy_mismatch(traj):
    with pytest.raises(DomainError):
        transform_chain(traj, theta_basis("free", lam=1.1), POWER, "y3")


def test_y4_needs_q(traj, free_setup):
    b, acc, _ = free_setup
    with pytest.raises(DomainError):
        transform_chain(traj, b, POWER, "y4", acc=acc)


def test_cumbersome_phase_settles(free_setup):
    b, acc, q = free_setup
    vals = cumbersome_phase([250.0, 500.0, 1000.0, 2000.0], b, POWER, acc, q)
    inc = np.abs(np.diff(vals))
    assert inc[0] > inc[1] > inc[2]
    assert inc[2] / inc[1] < 0.95


# --------------------------------------------------------------- deviation
def test_deviation_free_plane_wave(tmp_path):
    b = theta_basis("free", lam=1.0)
    tr = integrate_eigenfunction(ZERO, 1.0, (1, 1j), 2000.0, tol=1e-10)
    dev = wkb_deviation(tr, b, ZERO)
    assert dev.stable
    np.testing.assert_allclose(dev.c1, 1.0, atol=1e-7)
    np.testing.assert_allclose(dev.c2, 0.0, atol=1e-7)
    path = tmp_path / "dev.csv"
    write_deviation_csv(path, dev)
    assert path.read_text().splitlines()[0] == "x,abs_c1,abs_c2,residual"


def test_deviation_decaying_potential_stable():
    b = theta_basis("free", lam=1.0)
    tr = integrate_eigenfunction(POWER, 1.0, (1, 0), 5000.0, tol=1e-9)
    dev = wkb_deviation(tr, b, POWER)
    assert dev.stable, dev.variation
    assert np.max(dev.residual[dev.x > 500]) < 0.05


def test_deviation_needs_range():
    b = theta_basis("free", lam=1.0)
    tr = integrate_eigenfunction(ZERO, 1.0, (1, 0), 5.0, x0=1.0)
    with pytest.raises(InsufficientRangeError):
        wkb_deviation(tr, b, ZERO)
