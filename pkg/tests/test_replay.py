import numpy as np
import pytest

from sigkin import replay as rp
from sigkin import robot_model as rm
from sigkin.signature_io import SignatureTrajectory


def _square_sig(pressure=None):
    t = np.arange(5) * 0.01
    return SignatureTrajectory(t=t, x=[0, 1, 1, 0, 0.5], y=[0, 0, 1, 1, 0.5], pressure=pressure)


def test_map_scales_and_centres():
    placement = rp.WorkspacePlacement()
    wp = rp.map_to_workspace(_square_sig(), placement)
    np.testing.assert_array_equal(wp[:, 0], _square_sig().t)
    assert np.ptp(wp[:, 1]) == pytest.approx(0.10, abs=1e-15)
    assert np.ptp(wp[:, 2]) == pytest.approx(0.10, abs=1e-15)
    centre = 0.5 * (wp[:, 1:].max(0) + wp[:, 1:].min(0))
    np.testing.assert_allclose(centre, placement.surface_center, atol=1e-15)
    np.testing.assert_allclose(wp[:, 3], 0.10, atol=1e-15)


def test_map_longer_axis_spans_box():
    sig = SignatureTrajectory(t=[0, 0.01, 0.02], x=[0, 4, 2], y=[0, 1, 2])
    wp = rp.map_to_workspace(sig, rp.WorkspacePlacement())
    assert np.ptp(wp[:, 1]) == pytest.approx(0.10)
    assert np.ptp(wp[:, 2]) == pytest.approx(0.05)


def test_pen_up_lifted():
    placement = rp.WorkspacePlacement()
    wp = rp.map_to_workspace(_square_sig(pressure=np.zeros(5)), placement)
    np.testing.assert_allclose(wp[:, 3], 0.10 + placement.pen_lift)
    wp = rp.map_to_workspace(_square_sig(pressure=[1, 0, 0, 1, 1]), placement)
    np.testing.assert_allclose(wp[:, 3], [0.1, 0.105, 0.105, 0.1, 0.1])


def test_degenerate_signature():
    sig = SignatureTrajectory(t=[0, 0.01], x=[1, 1], y=[2, 2])
    with pytest.raises(rp.DegenerateInputError):
        rp.map_to_workspace(sig, rp.WorkspacePlacement())


def test_placement_validation(chain):
    rp.WorkspacePlacement().validate(chain)
    with pytest.raises(rp.PlanningError):
        rp.WorkspacePlacement(surface_center=(0.9, 0.0, 0.1)).validate(chain)
    with pytest.raises(ValueError):
        rp.WorkspacePlacement(pen_lift=0.0)


def test_two_waypoints_126_ticks(chain):
    wp = np.array([[0.0, 0.40, 0.0, 0.1], [1.0, 0.42, 0.01, 0.1]])
    traj = rp.plan_joint_trajectory(chain, wp)
    assert traj.t.size == 126
    assert traj.t[0] == 0.0 and traj.t[-1] == pytest.approx(1.0, abs=1e-12)


def test_constant_waypoints_constant_theta(chain):
    wp = np.column_stack((np.arange(6) * 0.1, np.tile([0.4, 0.0, 0.1], (6, 1))))
    traj = rp.plan_joint_trajectory(chain, wp)
    assert np.abs(traj.omega).max() <= 1e-9
    assert np.ptp(traj.theta, axis=0).max() <= 1e-9


def test_spline_hits_waypoints(chain, small_corpus):
    sig = small_corpus.users["u001"].genuine[0]
    placement = rp.WorkspacePlacement()
    wp = rp.map_to_workspace(sig, placement)
    traj = rp.plan_joint_trajectory(chain, wp, seed=rp.home_posture(chain, placement))
    np.testing.assert_allclose(traj.spline(traj.waypoint_t), traj.waypoint_theta, atol=1e-9)
    for q, p in zip(traj.waypoint_theta[::25], wp[::25, 1:]):
        T = rm.forward_kinematics(chain, q)
        np.testing.assert_allclose(T[:3, 3], p, atol=1e-6)
        np.testing.assert_allclose(T[:3, 2], (0, 0, -1), atol=1e-6)


def test_unreachable_waypoint_named(chain):
    wp = np.array([[0.0, 0.4, 0.0, 0.1], [0.1, 0.4, 0.0, 0.1], [0.2, 2.0, 0.0, 0.1]])
    with pytest.raises(rp.PlanningError) as exc:
        rp.plan_joint_trajectory(chain, wp)
    assert exc.value.index == 2


def test_replay_alignment_and_invariants(small_corpus, small_features):
    for key, sig in small_corpus.items():
        f = small_features[key]
        assert len(f) == len(sig)
        np.testing.assert_array_equal(f.t, sig.t)
        assert f.source == rp.SIMULATED and f.user_id == sig.user_id and f.label == sig.label
        assert np.ptp(f.omega[:, 5]) == 0.0
        assert np.abs(np.diff(f.theta, axis=0)).max() < 0.2


def test_theta_derivative_matches_omega(small_corpus, small_features):
    worst = 0.0
    for key, sig in small_corpus.items():
        f = small_features[key]
        h = f.t[1] - f.t[0]
        th = f.theta
        fd = np.full_like(th, np.nan)
        fd[2:-2] = (-th[4:] + 8 * th[3:-1] - 8 * th[1:-3] + th[:-4]) / (12 * h)
        # away from the ends and from pen-down/pen-up switches
        ok = np.ones(len(sig), bool)
        ok[:5] = ok[-5:] = False
        for k in np.flatnonzero(np.diff(sig.pen_down.astype(int))):
            ok[max(0, k - 4):k + 5] = False
        w = f.omega[:, :4]
        moving = (np.abs(w) > 0.2 * np.abs(w).max(0)) & ok[:, None]
        rel = np.abs(fd[:, :4] - w)[moving] / np.abs(w[moving])
        worst = max(worst, rel.max())
    assert worst <= 0.05


def test_measurement_loop_identity(chain, small_features):
    f = small_features["u001/g_01"]
    back = rm.torque_from_current(chain, rm.current_from_torque(chain, f.tau))
    np.testing.assert_allclose(back, f.tau, rtol=1e-12, atol=1e-12)


def test_replay_deterministic(chain, small_corpus, small_features):
    sig = small_corpus.users["u003"].forgeries[0]
    again = rp.replay(chain, sig)
    np.testing.assert_array_equal(again.matrix, small_features["u003/f_01"].matrix)


def test_feature_files_round_trip(tmp_path, small_features):
    subset = {k: small_features[k] for k in list(small_features)[:3]}
    rp.write_feature_dir(subset, tmp_path)
    back = rp.read_feature_dir(tmp_path)
    assert back.keys() == subset.keys()
    for k in subset:
        np.testing.assert_array_equal(back[k].matrix, subset[k].matrix)
        assert back[k].label == subset[k].label


def test_feature_series_shape_checked():
    with pytest.raises(ValueError):
        rp.JointFeatureSeries(np.arange(3.0), np.zeros((3, 6)), np.zeros((2, 6)), np.zeros((3, 6)))
