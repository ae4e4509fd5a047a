"""Six-joint serial arm: D-H kinematics, numerical IK, inverse dynamics, motor model."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .kernels import kinematics as K

CHAIN_ENV = "SIGKIN_CHAIN"
GRAVITY = 9.81
N_JOINTS = 6
REACH_TOLERANCE = 0.02

IK_DAMPING = 1e-3
IK_MAX_ITER = 200
IK_STEP_CLAMP = 0.2
# iteration stops at IK_*_TOL; an attempt is accepted outright at IK_ACCEPT_*, and
# if no restart gets there the best one is still returned when it meets the
# IK_LIMIT_* contract (slow convergence near singularities)
IK_POS_TOL = 1e-9
IK_ROT_TOL = 1e-9
IK_ACCEPT_POS = 1e-6
IK_ACCEPT_ROT = 1e-6
IK_LIMIT_POS = 1e-5
IK_LIMIT_ROT = 1e-4


class ChainConfigError(ValueError):
    pass


class IKError(RuntimeError):
    """IK did not converge; carries the best iterate and its residuals."""

    def __init__(self, message, theta, pos_err, rot_err):
        super().__init__(f"{message} (best residual {pos_err:.3g} m, {rot_err:.3g} rad)")
        self.theta = theta
        self.pos_err = pos_err
        self.rot_err = rot_err


@dataclass(frozen=True)
class DHLink:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.a, self.alpha, self.d, self.theta_offset])):
            raise ChainConfigError(f"non-finite D-H parameter in {self}")


def _frozen(a, shape=None):
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ChainConfigError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ChainConfigError("non-finite chain parameter")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class KinematicChain:
    links: tuple
    joint_limits: np.ndarray
    masses: np.ndarray
    coms: np.ndarray
    inertias: np.ndarray
    gear_ratios: np.ndarray
    torque_constants: np.ndarray
    home: np.ndarray
    name: str = "arm"
    nominal_reach: float | None = None

    def __post_init__(self):
        if len(self.links) != N_JOINTS:
            raise ChainConfigError(f"chain must have exactly {N_JOINTS} links, got {len(self.links)}")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("joint_limits", _frozen(self.joint_limits, (N_JOINTS, 2)))
        set_("masses", _frozen(self.masses, (N_JOINTS,)))
        set_("coms", _frozen(self.coms, (N_JOINTS, 3)))
        set_("inertias", _frozen(self.inertias, (N_JOINTS, 3, 3)))
        set_("gear_ratios", _frozen(self.gear_ratios, (N_JOINTS,)))
        set_("torque_constants", _frozen(self.torque_constants, (N_JOINTS,)))
        set_("home", _frozen(self.home, (N_JOINTS,)))
        set_("dh", _frozen([[l.a, l.alpha, l.d, l.theta_offset] for l in self.links]))
        if np.any(self.joint_limits[:, 0] > self.joint_limits[:, 1]):
            raise ChainConfigError("joint limit min exceeds max")
        if np.any(self.masses < 0):
            raise ChainConfigError("negative link mass")

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return KinematicChain(**fields)


def chain_from_dict(d):
    try:
        rows = d["dh"]["rows"] if isinstance(d["dh"], dict) else d["dh"]
        return KinematicChain(
            links=tuple(DHLink(*map(float, r)) for r in rows),
            joint_limits=d.get("joint_limits", [[-2 * np.pi, 2 * np.pi]] * N_JOINTS),
            masses=d["masses"],
            coms=d["coms"],
            inertias=d["inertias"],
            gear_ratios=d["gear_ratios"],
            torque_constants=d["torque_constants"],
            home=d.get("home", [0.0] * N_JOINTS),
            name=d.get("name", "arm"),
            nominal_reach=d.get("nominal_reach"),
        )
    except KeyError as exc:
        raise ChainConfigError(f"chain description is missing {exc.args[0]!r}") from None


def load_chain(path=None, validate_reach=True):
    """Load a chain description (JSON); defaults to ``$SIGKIN_CHAIN`` or the bundled UR5e."""
    path = path or os.environ.get(CHAIN_ENV)
    if path:
        text = Path(path).read_text()
    else:
        text = resources.files("sigkin.data").joinpath("ur5e.json").read_text()
    chain = chain_from_dict(json.loads(text))
    if validate_reach and chain.nominal_reach is not None:
        reach = max_horizontal_reach(chain)
        if abs(reach - chain.nominal_reach) > REACH_TOLERANCE * chain.nominal_reach:
            raise ChainConfigError(
                f"computed reach {reach:.4f} m disagrees with nominal {chain.nominal_reach} m")
    return chain


# ------------------------------------------------------------------ kinematics

def dh_transform(link, theta):
    return K.dh_matrix(float(link.a), float(link.alpha), float(link.d), float(theta + link.theta_offset))


def forward_kinematics(chain, theta):
    return K.fk(chain.dh, np.asarray(theta, dtype=float))


def link_frames(chain, theta):
    """All seven base-to-frame transforms (base first, flange last)."""
    return K.fk_frames(chain.dh, np.asarray(theta, dtype=float))


def geometric_jacobian(chain, theta):
    """6x6 Jacobian; rows are linear then angular velocity in the base frame."""
    return K.jacobian(chain.dh, np.asarray(theta, dtype=float))


def orthonormalize(pose, tol=1e-9):
    """Project the rotation block back onto SO(3) when it has drifted by more than ``tol``."""
    R = pose[:3, :3]
    if np.abs(R.T @ R - np.eye(3)).max() <= tol:
        return pose
    U, _, Vt = np.linalg.svd(R)
    out = pose.copy()
    out[:3, :3] = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    return out


def is_pose(T, tol=1e-9):
    T = np.asarray(T)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    R = T[:3, :3]
    return (np.allclose(T[3], [0, 0, 0, 1], atol=tol)
            and np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def pose_error(T_a, T_b):
    """(translation distance, rotation angle) between two poses."""
    dp = float(np.linalg.norm(T_a[:3, 3] - T_b[:3, 3]))
    dr = float(np.linalg.norm(K.rotation_log(T_b[:3, :3] @ T_a[:3, :3].T)))
    return dp, dr


def max_horizontal_reach(chain, samples=361):
    """Largest horizontal distance from the base axis to the flange.

    Shoulder and elbow sweep a ``samples x samples`` grid over a full turn
    with the other joints at zero, i.e. the outstretched-arm envelope.
    """
    grid = np.linspace(-np.pi, np.pi, samples)
    q2, q3 = (g.ravel() for g in np.meshgrid(grid, grid, indexing="ij"))
    theta = np.zeros((q2.size, N_JOINTS))
    theta[:, 1], theta[:, 2] = q2, q3
    T = np.broadcast_to(np.eye(4), (q2.size, 4, 4))
    for i, (a, alpha, d, off) in enumerate(chain.dh):
        q = theta[:, i] + off
        ct, st, ca, sa = np.cos(q), np.sin(q), np.cos(alpha), np.sin(alpha)
        A = np.zeros((q.size, 4, 4))
        A[:, 0] = np.column_stack((ct, -st * ca, st * sa, a * ct))
        A[:, 1] = np.column_stack((st, ct * ca, -ct * sa, a * st))
        A[:, 2, 1:] = (sa, ca, d)
        A[:, 3, 3] = 1.0
        T = T @ A
    return float(np.hypot(T[:, 0, 3], T[:, 1, 3]).max())


def _check_ik(theta, pos_err, rot_err, iters, status, what):
    if pos_err > IK_ACCEPT_POS or rot_err > IK_ACCEPT_ROT:
        reason = "singular Jacobian" if status == K.IK_SINGULAR else f"no convergence in {iters} iterations"
        raise IKError(f"{what}: {reason}", theta, pos_err, rot_err)
    return theta


def solve_ik(chain, target, seed, *, restarts=32, damping=IK_DAMPING, max_iter=IK_MAX_ITER,
             step_clamp=IK_STEP_CLAMP, pos_tol=IK_POS_TOL, rot_tol=IK_ROT_TOL):
    """Damped least-squares IK for a full target pose, iterated from ``seed``.

    If the iteration from ``seed`` stalls, up to ``restarts`` further attempts
    start from deterministic perturbations of it. When none reaches
    ``IK_ACCEPT_*``, the best attempt is returned if it is within
    ``IK_LIMIT_*``; otherwise :class:`IKError` carries its residual.
    """
    target = np.ascontiguousarray(target, dtype=float)
    seed = np.array(seed, dtype=float)
    lo, hi = chain.joint_limits[:, 0].copy(), chain.joint_limits[:, 1].copy()
    best = None
    rng = None
    for attempt in range(restarts + 1):
        start = seed
        if attempt:
            rng = rng or np.random.default_rng(attempt)
            start = np.clip(seed + rng.uniform(-np.pi, np.pi, N_JOINTS), lo, hi)
        theta, pos_err, rot_err, iters, status = K.ik_dls(
            chain.dh, target, start, lo, hi, False, damping, max_iter, step_clamp, pos_tol, rot_tol)
        if pos_err <= IK_ACCEPT_POS and rot_err <= IK_ACCEPT_ROT:
            return theta
        if best is None or pos_err + rot_err < best[1] + best[2]:
            best = (theta, pos_err, rot_err)
    if best[1] <= IK_LIMIT_POS and best[2] <= IK_LIMIT_ROT:
        return best[0]
    raise IKError(f"IK failed after {restarts + 1} attempts", *best)


def solve_pen_ik(chain, position, axis, seed, *, damping=IK_DAMPING, max_iter=IK_MAX_ITER,
                 step_clamp=IK_STEP_CLAMP, pos_tol=IK_POS_TOL, rot_tol=IK_ROT_TOL):
    """IK for a pen tip at ``position`` with the tool z-axis along ``axis``.

    Rotation about the pen axis is left free, so the last joint keeps its
    seed value.
    """
    target = np.eye(4)
    axis = np.asarray(axis, dtype=float)
    target[:3, 2] = axis / np.linalg.norm(axis)
    target[:3, 3] = position
    res = K.ik_dls(chain.dh, target, np.array(seed, dtype=float),
                   chain.joint_limits[:, 0].copy(), chain.joint_limits[:, 1].copy(), True,
                   damping, max_iter, step_clamp, pos_tol, rot_tol)
    return _check_ik(*res, "pen IK failed")


# -------------------------------------------------------------------- dynamics

def inverse_dynamics(chain, theta, omega, accel, gravity=GRAVITY):
    """Joint torques (N m) from recursive Newton-Euler, gravity along -z of the base.

    Accepts single 6-vectors or ``(T, 6)`` stacks.
    """
    g = np.array([0.0, 0.0, -gravity])
    theta, omega, accel = (np.ascontiguousarray(v, dtype=float) for v in (theta, omega, accel))
    args = (chain.dh, np.array(chain.masses), np.array(chain.coms), np.array(chain.inertias))
    if theta.ndim == 1:
        return K.rnea(*args, theta, omega, accel, g)
    return K.rnea_batch(*args, theta, omega, accel, g)


def torque_from_current(chain, current):
    """tau_i = r_i * K_i * I_i."""
    return chain.gear_ratios * chain.torque_constants * np.asarray(current, dtype=float)


def current_from_torque(chain, tau):
    coeff = chain.gear_ratios * chain.torque_constants
    if np.any(coeff == 0):
        raise ChainConfigError("zero gear ratio or torque constant; torque cannot be inverted")
    return np.asarray(tau, dtype=float) / coeff


def solve_pen_track(chain, positions, axis, seed):
    """Pen IK for each row of ``positions`` in order; returns an ``(M, 6)`` array.

    Raises :class:`IKError` naming the first waypoint that was not reached.
    """
    axis = np.asarray(axis, dtype=float)
    thetas, errs = K.ik_pen_track(
        chain.dh, np.ascontiguousarray(positions, dtype=float), axis / np.linalg.norm(axis),
        np.array(seed, dtype=float), chain.joint_limits[:, 0].copy(),
        chain.joint_limits[:, 1].copy(), IK_DAMPING, IK_MAX_ITER, IK_STEP_CLAMP,
        IK_POS_TOL, IK_ROT_TOL)
    bad = np.flatnonzero((errs[:, 0] > IK_ACCEPT_POS) | (errs[:, 1] > IK_ACCEPT_ROT))
    if bad.size:
        k = int(bad[0])
        err = IKError(f"pen IK failed at waypoint {k}", thetas[k], errs[k, 0], errs[k, 1])
        err.index = k
        raise err
    return thetas
