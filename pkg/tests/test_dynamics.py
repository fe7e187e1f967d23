import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elsg.dynamics import (ModelConstants, Planar2Dof, QuadraticPlaneMap, SystemModel, TransformedSystem,
                           eval_dynamics, estimate_constants, mat_inf_norm, unit_sphere_inf)
from elsg.errors import ConfigurationError, DomainError

angles = st.floats(-math.pi, math.pi)
speeds = st.floats(-3, 3)


def geometric_inertia(arm: Planar2Dof, q):
    """Inertia matrix assembled from the link centre-of-mass Jacobians."""
    if arm.mass_mode == "uniform-rod":
        lc1, lc2 = arm.l1 / 2, arm.l2 / 2
        I1, I2 = arm.m1 * arm.l1**2 / 12, arm.m2 * arm.l2**2 / 12
    else:
        lc1, lc2, I1, I2 = arm.l1, arm.l2, 0.0, 0.0
    q1, q2 = q
    s1, c1 = math.sin(q1), math.cos(q1)
    s12, c12 = math.sin(q1 + q2), math.cos(q1 + q2)
    J1 = np.array([[-lc1 * s1, 0.0], [lc1 * c1, 0.0]])
    J2 = np.array([[-arm.l1 * s1 - lc2 * s12, -lc2 * s12], [arm.l1 * c1 + lc2 * c12, lc2 * c12]])
    W1, W2 = np.array([[1.0, 0.0]]), np.array([[1.0, 1.0]])
    return arm.m1 * J1.T @ J1 + arm.m2 * J2.T @ J2 + I1 * W1.T @ W1 + I2 * W2.T @ W2


def potential(arm, q):
    if not arm.gravity:
        return 0.0
    lc1, lc2 = (arm.l1 / 2, arm.l2 / 2) if arm.mass_mode == "uniform-rod" else (arm.l1, arm.l2)
    return arm.g * ((arm.m1 * lc1 + arm.m2 * arm.l1) * math.sin(q[0]) + arm.m2 * lc2 * math.sin(q[0] + q[1]))


def lagrange_accel(arm, q, v, u, h=1e-6):
    """Solve M vdot = u - F v + dT/dq - dV/dq - Mdot v with numeric derivatives of the energies."""
    q, v = np.asarray(q, float), np.asarray(v, float)
    M = geometric_inertia(arm, q)
    dT, dV, Mdot = np.zeros(2), np.zeros(2), np.zeros((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        Mp, Mm = geometric_inertia(arm, q + e), geometric_inertia(arm, q - e)
        dT[k] = 0.5 * v @ ((Mp - Mm) / (2 * h)) @ v
        dV[k] = (potential(arm, q + e) - potential(arm, q - e)) / (2 * h)
        Mdot += (Mp - Mm) / (2 * h) * v[k]
    rhs = u - np.asarray(arm.F_diag) * v + dT - dV - Mdot @ v
    return np.linalg.solve(M, rhs)


@pytest.mark.parametrize("mode", ["uniform-rod", "point-mass-at-tip"])
@given(q1=angles, q2=angles)
def test_inertia_matches_geometry(mode, q1, q2):
    arm = Planar2Dof(mass_mode=mode, m1=1.3, m2=0.7, l1=0.9, l2=1.1)
    np.testing.assert_allclose(arm.M(np.array([q1, q2])), geometric_inertia(arm, (q1, q2)), atol=1e-12)


@pytest.mark.parametrize("gravity", [False, True])
@pytest.mark.parametrize("mode", ["uniform-rod", "point-mass-at-tip"])
@settings(max_examples=40)
@given(q1=angles, q2=angles, v1=speeds, v2=speeds, u1=st.floats(-10, 10), u2=st.floats(-10, 10))
def test_accel_matches_lagrange(gravity, mode, q1, q2, v1, v2, u1, u2):
    arm = Planar2Dof(mass_mode=mode, gravity=gravity, F_diag=(0.3, 0.1))
    q, v, u = np.array([q1, q2]), np.array([v1, v2]), np.array([u1, u2])
    ref = lagrange_accel(arm, q, v, u)
    np.testing.assert_allclose(arm.accel(q, v, u), ref, rtol=1e-6, atol=1e-6)
    # batched path agrees with the scalar path
    np.testing.assert_allclose(arm.accel(q[None], v[None], u[None])[0], arm.accel(q, v, u), atol=1e-12)


@given(q2=angles, v1=speeds, v2=speeds)
def test_coriolis_skew_property(q2, v1, v2):
    arm = Planar2Dof()
    q, v = np.array([0.3, q2]), np.array([v1, v2])
    h = 1e-6
    Mdot = (arm.M(q + h * v) - arm.M(q - h * v)) / (2 * h)
    S = Mdot - 2 * arm.C(q, v)
    np.testing.assert_allclose(S, -S.T, atol=1e-8)


def test_rest_state_has_zero_acceleration():
    arm = Planar2Dof()
    a = eval_dynamics(arm, [0.0, math.pi / 2], [0.0, 0.0], [0.0, 0.0])
    np.testing.assert_array_equal(a, [0.0, 0.0])


@given(q2=angles)
def test_unit_torque_gives_inverse_inertia_column(q2):
    arm = Planar2Dof()
    q = np.array([0.4, q2])
    a = eval_dynamics(arm, q, [0.0, 0.0], [1.0, 0.0])
    np.testing.assert_allclose(a, np.linalg.inv(arm.M(q))[:, 0], rtol=1e-12)


def test_G_and_G_plus_are_inverse():
    arm = Planar2Dof()
    q = np.random.default_rng(0).uniform(-3, 3, (100, 2))
    np.testing.assert_allclose(arm.G(q) @ arm.G_plus(q), np.broadcast_to(np.eye(2), (100, 2, 2)), atol=1e-12)


def test_eval_dynamics_validation():
    arm = Planar2Dof()
    with pytest.raises(ConfigurationError):
        eval_dynamics(arm, [0.0], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(DomainError):
        eval_dynamics(arm, [0.0, math.nan], [0.0, 0.0], [0.0, 0.0])


def test_model_validation():
    with pytest.raises(ConfigurationError):
        Planar2Dof(mass_mode="lumped")
    with pytest.raises(ConfigurationError):
        Planar2Dof(m1=0.0)


def test_float_rk4_matches_generic_step():
    arm = Planar2Dof(F_diag=(0.2, 0.1))
    x = np.array([0.3, 1.9, 0.7, -1.1])
    u = np.array([2.0, -1.0])
    np.testing.assert_allclose(arm.rk4_step(x, u, 1e-3), SystemModel.rk4_step(arm, x, u, 1e-3), atol=1e-15)


def test_rk4_fourth_order():
    arm = Planar2Dof()
    x0 = np.array([0.1, 1.5, 1.0, -0.5])
    u = np.array([1.0, 0.5])

    def run(h, T=0.5):
        x = x0.copy()
        for _ in range(int(round(T / h))):
            x = arm.rk4_step(x, u, h)
        return x

    ref = run(1e-4)
    e1, e2 = np.abs(run(0.05) - ref).max(), np.abs(run(0.025) - ref).max()
    assert math.log2(e1 / e2) >= 3.5


def test_constants_damping_and_gravity_free():
    arm = Planar2Dof()
    c = estimate_constants(arm, [-1.7, 1.4], [1.7, 2.7], grid=21)
    np.testing.assert_allclose(c.f_bound, [0.001, 0.001], rtol=1e-12)
    assert c.k_g == 0.0
    assert Planar2Dof(gravity=True).f3(np.array([0.0, 0.0]))[0] != 0.0


def test_k_c_against_dense_grid():
    arm = Planar2Dof()
    lo, hi = np.array([-1.7, 1.4]), np.array([1.7, 2.7])
    c = estimate_constants(arm, lo, hi, grid=21)
    q2 = np.linspace(lo[1], hi[1], 801)
    dirs = unit_sphere_inf(2, 401)
    Q = np.stack([np.zeros(len(q2) * len(dirs)), np.repeat(q2, len(dirs))], axis=1)
    V = np.tile(dirs, (len(q2), 1))
    grid_max = np.max(np.abs(arm.f1(Q, V)))
    assert c.k_c >= grid_max - 1e-9
    assert c.k_c <= grid_max * (1 + 1e-6)
    # the uniform rod gives p3 sin(q2) (2 v1 v2 + v2^2) <= 3 p3 with p3 = 1/2
    assert c.k_c == pytest.approx(1.5, rel=1e-6)


def test_k_m_inf_against_grid():
    arm = Planar2Dof()
    lo, hi = np.array([-1.7, 1.4]), np.array([1.7, 2.7])
    c = estimate_constants(arm, lo, hi, grid=21)
    # the inertia depends on q2 only
    q2 = np.linspace(lo[1], hi[1], 5001)
    q = np.stack([np.zeros_like(q2), q2], axis=1)
    ref = np.max(mat_inf_norm(arm.G(q)))
    assert c.k_m_inf == pytest.approx(ref, rel=1e-6)


def test_constants_roundtrip_dict():
    c = ModelConstants(1.0, np.array([0.1, 0.2]), 3.0, 0.0, 4.0, 5.0, 6.0)
    d = c.to_dict()
    assert d["f_bound"] == [0.1, 0.2] and c.k_f == 0.2


# coordinate map and transformed model


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_map_jacobian_matches_difference(a, b):
    cmap = QuadraticPlaneMap()
    qt = np.array([a, b])
    h = 1e-6
    J = np.stack([(cmap.c(qt + h * e) - cmap.c(qt - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
    np.testing.assert_allclose(cmap.jacobian(qt), J, atol=1e-7)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), v1=speeds, v2=speeds)
def test_map_jdot_matches_difference(a, b, v1, v2):
    cmap = QuadraticPlaneMap()
    qt, vt = np.array([a, b]), np.array([v1, v2])
    h = 1e-6
    Jdot = (cmap.jacobian(qt + h * vt) - cmap.jacobian(qt - h * vt)) / (2 * h)
    np.testing.assert_allclose(cmap.jdot_v(qt, vt), Jdot @ vt, atol=1e-7)


def test_map_rejects_asymmetric_P():
    with pytest.raises(ConfigurationError):
        QuadraticPlaneMap(P=((1.0, 2.0), (0.0, 1.0)))


@pytest.fixture(scope="module")
def transformed():
    return TransformedSystem(Planar2Dof(), QuadraticPlaneMap(), seed=(0.8, 2.0))


def test_inverse_roundtrip(transformed):
    rng = np.random.default_rng(5)
    qt = np.stack([rng.uniform(0.3, 1.3, 500), rng.uniform(1.5, 2.5, 500)], 1)
    q = transformed.cmap.c(qt)
    np.testing.assert_allclose(transformed.inverse(q), qt, atol=1e-10)
    for k in range(5):
        np.testing.assert_allclose(transformed.inverse(q[k]), qt[k], atol=1e-10)


def test_to_base_inverts_from_base(transformed):
    qt, vt = np.array([0.9, 2.1]), np.array([0.3, -0.4])
    q, v = transformed.from_base(qt, vt)
    back = transformed.to_base(q, v)
    np.testing.assert_allclose(back[0], qt, atol=1e-12)
    np.testing.assert_allclose(back[1], vt, atol=1e-12)


def test_transformed_G_plus_is_inverse(transformed):
    q = transformed.cmap.c(np.array([[0.8, 2.0], [1.1, 1.7]]))
    np.testing.assert_allclose(transformed.G(q) @ transformed.G_plus(q), np.broadcast_to(np.eye(2), (2, 2, 2)),
                               atol=1e-10)


def test_transformed_accel_matches_base_flow(transformed):
    base = transformed.base
    rng = np.random.default_rng(6)
    for _ in range(20):
        qt = np.array([rng.uniform(0.4, 1.2), rng.uniform(1.6, 2.4)])
        vt = rng.uniform(-1, 1, 2)
        u = rng.uniform(-5, 5, 2)
        x = np.concatenate([qt, vt])
        h = 1e-4
        xp, xm = base.rk4_step(x, u, h), base.rk4_step(x, u, -h)
        qp, vp = transformed.from_base(xp[:2], xp[2:])
        qm, vm = transformed.from_base(xm[:2], xm[2:])
        q, v = transformed.from_base(qt, vt)
        a = transformed.accel(q, v, u)
        fd_a, fd_v = (vp - vm) / (2 * h), (qp - qm) / (2 * h)
        assert np.max(np.abs(a - fd_a)) <= 1e-6 * max(1.0, np.max(np.abs(fd_a)))
        assert np.max(np.abs(v - fd_v)) <= 1e-6 * max(1.0, np.max(np.abs(fd_v)))


def test_inverse_failure_is_domain_error(transformed):
    # c1 >= -1 everywhere, so c1 = -5 has no preimage
    with pytest.raises(DomainError):
        transformed.inverse(np.array([[-5.0, 2.0]]))
