import json
from importlib import resources

import numpy as np
import pytest
from scipy.integrate import trapezoid

import oracles
from sigkin import robot_model as rm
from sigkin.kernels import kinematics as K


def _bundled():
    return json.loads(resources.files("sigkin.data").joinpath("ur5e.json").read_text())


def test_dh_identity():
    np.testing.assert_array_equal(rm.dh_transform(rm.DHLink(0, 0, 0, 0), 0.0), np.eye(4))


def test_dh_pure_translation():
    T = rm.dh_transform(rm.DHLink(0, 0, 0.1625, 0), 0.0)
    np.testing.assert_allclose(T, oracles.transl(z=0.1625), atol=1e-15)


def test_dh_matches_atomic_product():
    T = rm.dh_transform(rm.DHLink(1.0, np.pi / 2, 0.0, 0.0), np.pi / 2)
    np.testing.assert_allclose(T, oracles.dh_atomic(1.0, np.pi / 2, 0.0, np.pi / 2), atol=1e-15)


def test_fk_is_fold_of_dh(chain, rng):
    for _ in range(100):
        q = rng.uniform(-np.pi, np.pi, 6)
        T = np.eye(4)
        for link, qi in zip(chain.links, q):
            T = T @ rm.dh_transform(link, qi)
        np.testing.assert_array_equal(rm.forward_kinematics(chain, q), T)
        np.testing.assert_allclose(T, oracles.fk_atomic(chain.dh, q)[-1], atol=1e-12)


def test_fk_zero_configuration(chain):
    # hand sum for the bundled table: x = a2 + a3, y = -(d4 + d6), z = d1 - d5
    dh = chain.dh
    expected = [dh[1, 0] + dh[2, 0], -(dh[3, 2] + dh[5, 2]), dh[0, 2] - dh[4, 2]]
    np.testing.assert_allclose(rm.forward_kinematics(chain, np.zeros(6))[:3, 3], expected,
                               atol=1e-12)


def test_reach(chain):
    assert abs(rm.max_horizontal_reach(chain) - 0.85) <= 0.02 * 0.85


def test_poses_orthonormal(chain, rng):
    for _ in range(50):
        assert rm.is_pose(rm.forward_kinematics(chain, rng.uniform(-6, 6, 6)))


def test_orthonormalize_repairs_drift():
    T = np.eye(4)
    T[:3, :3] += 1e-6 * np.arange(9).reshape(3, 3)
    assert not rm.is_pose(T)
    assert rm.is_pose(rm.orthonormalize(T))


def test_jacobian_finite_differences(chain, rng):
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 6)
        np.testing.assert_allclose(rm.geometric_jacobian(chain, q),
                                   oracles.fd_jacobian(chain.dh, q), atol=1e-6)


def test_jacobian_columns_nonzero(chain, rng):
    for _ in range(20):
        J = rm.geometric_jacobian(chain, rng.uniform(-np.pi, np.pi, 6))
        assert np.all(np.linalg.norm(J, axis=0) > 0)


def test_jacobian_first_order(chain, rng):
    q = rng.uniform(-np.pi, np.pi, 6)
    dq = rng.normal(size=6)
    dq *= 1e-5 / np.linalg.norm(dq)
    dp = rm.forward_kinematics(chain, q + dq)[:3, 3] - rm.forward_kinematics(chain, q)[:3, 3]
    pred = rm.geometric_jacobian(chain, q)[:3] @ dq
    assert np.linalg.norm(dp - pred) < 1e-9


def test_ik_fixed_point(chain, rng):
    q = rng.uniform(-np.pi, np.pi, 6)
    np.testing.assert_allclose(rm.solve_ik(chain, rm.forward_kinematics(chain, q), q), q,
                               atol=1e-12)


def test_ik_round_trip(chain, rng):
    seed = np.zeros(6)
    for _ in range(200):
        target = rm.forward_kinematics(chain, rng.uniform(-np.pi, np.pi, 6))
        q = rm.solve_ik(chain, target, seed)
        dp, dr = rm.pose_error(rm.forward_kinematics(chain, q), target)
        assert dp <= 1e-5 and dr <= 1e-4
        assert np.all(np.abs(q) <= 2 * np.pi)


def test_ik_unreachable(chain):
    target = np.eye(4)
    target[:3, 3] = (2.0, 0.0, 0.2)
    with pytest.raises(rm.IKError) as exc:
        rm.solve_ik(chain, target, chain.home, restarts=2)
    assert exc.value.pos_err > 1.0


def test_pen_ik_keeps_axis_and_last_joint(chain):
    q = rm.solve_pen_ik(chain, (0.4, 0.05, 0.1), (0, 0, -1), chain.home)
    T = rm.forward_kinematics(chain, q)
    np.testing.assert_allclose(T[:3, 3], (0.4, 0.05, 0.1), atol=1e-6)
    np.testing.assert_allclose(T[:3, 2], (0, 0, -1), atol=1e-6)
    assert q[5] == chain.home[5]


def test_pen_track_reports_failing_index(chain):
    pts = np.array([[0.4, 0.0, 0.1], [0.41, 0.0, 0.1], [3.0, 0.0, 0.1]])
    with pytest.raises(rm.IKError) as exc:
        rm.solve_pen_track(chain, pts, (0, 0, -1), chain.home)
    assert exc.value.index == 2


def test_zero_mass_zero_torque(chain, rng):
    light = chain.replace(masses=np.zeros(6), inertias=np.zeros((6, 3, 3)))
    tau = rm.inverse_dynamics(light, *rng.normal(size=(3, 6)))
    np.testing.assert_array_equal(tau, 0.0)


def test_gravity_matches_potential_gradient(chain, rng):
    for _ in range(100):
        q = rng.uniform(-np.pi, np.pi, 6)
        tau = rm.inverse_dynamics(chain, q, np.zeros(6), np.zeros(6))
        grad = oracles.fd_gravity_torque(chain.dh, chain.masses, chain.coms, q)
        assert np.linalg.norm(tau - grad) <= 1e-4 * np.linalg.norm(grad)


def test_energy_balance(chain):
    q0 = np.array([0.3, -1.2, 1.4, -1.8, -1.5, 0.2])
    amp = np.array([0.8, 0.5, 0.6, 0.7, 0.9, 1.0])
    freq = np.array([0.9, 1.1, 1.3, 0.7, 1.7, 1.9])

    def theta(t):
        return q0 + amp * np.sin(freq * t)

    t = np.linspace(0.0, 1.5, 3001)
    th = q0 + amp * np.sin(freq * t[:, None])
    om = amp * freq * np.cos(freq * t[:, None])
    ac = -amp * freq ** 2 * np.sin(freq * t[:, None])
    power = np.einsum("ij,ij->i", rm.inverse_dynamics(chain, th, om, ac), om)
    work = trapezoid(power, t)
    args = (chain.dh, chain.masses, chain.coms, chain.inertias, theta)
    delta = oracles.mechanical_energy(*args, t[-1]) - oracles.mechanical_energy(*args, t[0])
    assert abs(work - delta) <= 0.01 * abs(delta)


def test_batch_matches_single(chain, rng):
    th, om, ac = rng.normal(size=(3, 5, 6))
    batch = rm.inverse_dynamics(chain, th, om, ac)
    for k in range(5):
        np.testing.assert_array_equal(batch[k], rm.inverse_dynamics(chain, th[k], om[k], ac[k]))


def test_torque_constants(chain):
    assert rm.torque_from_current(chain, [1, 0, 0, 0, 0, 0])[0] == pytest.approx(11.0494, abs=1e-12)
    assert rm.torque_from_current(chain, [0, 0, 0, 1, 0, 0])[3] == pytest.approx(8.282, abs=1e-12)
    np.testing.assert_array_equal(rm.torque_from_current(chain, np.zeros(6)), 0.0)
    np.testing.assert_array_equal(chain.gear_ratios, 101.0)
    np.testing.assert_array_equal(chain.torque_constants,
                                  [0.1094, 0.1100, 0.1097, 0.0820, 0.0822, 0.0824])


def test_current_inverse(chain, rng):
    assert rm.current_from_torque(chain, [11.0494, 0, 0, 0, 0, 0])[0] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(rm.current_from_torque(chain, np.zeros(6)), 0.0)
    for _ in range(100):
        tau = rng.normal(scale=50, size=6)
        back = rm.torque_from_current(chain, rm.current_from_torque(chain, tau))
        np.testing.assert_allclose(back, tau, rtol=1e-12, atol=1e-12)


def test_torque_linear(chain, rng):
    i1, i2 = rng.normal(size=(2, 6))
    np.testing.assert_allclose(rm.torque_from_current(chain, 2 * i1 - 3 * i2),
                               2 * rm.torque_from_current(chain, i1)
                               - 3 * rm.torque_from_current(chain, i2), rtol=1e-14, atol=1e-13)


def test_zero_coefficient_rejected(chain):
    bad = chain.replace(torque_constants=np.array([0.1, 0.1, 0.0, 0.1, 0.1, 0.1]))
    with pytest.raises(rm.ChainConfigError):
        rm.current_from_torque(bad, np.ones(6))


def test_chain_env_and_validation(tmp_path, monkeypatch):
    data = _bundled()
    data["dh"]["rows"][1][0] = -0.9
    path = tmp_path / "long.json"
    path.write_text(json.dumps(data))
    monkeypatch.setenv(rm.CHAIN_ENV, str(path))
    with pytest.raises(rm.ChainConfigError):
        rm.load_chain()
    assert rm.load_chain(validate_reach=False).dh[1, 0] == -0.9


def test_chain_needs_six_links():
    data = _bundled()
    data["dh"]["rows"] = data["dh"]["rows"][:5]
    with pytest.raises(rm.ChainConfigError):
        rm.chain_from_dict(data)


def test_python_fallback_matches_compiled(chain, rng):
    if not hasattr(K.fk, "py_func"):
        pytest.skip("kernels already running in pure-numpy mode")
    q, w, a = rng.normal(size=(3, 6))
    np.testing.assert_allclose(K.fk.py_func(chain.dh, q), K.fk(chain.dh, q), atol=1e-14)
    args = (chain.dh, chain.masses.copy(), chain.coms.copy(), chain.inertias.copy(), q, w, a,
            np.array([0, 0, -9.81]))
    np.testing.assert_allclose(K.rnea.py_func(*args), K.rnea(*args), rtol=1e-12, atol=1e-10)
