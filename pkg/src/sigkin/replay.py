"""Replay a signature on the simulated arm and record joint features per pen sample."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import robot_model as rm
from .signature_io import GENUINE, SignatureValidationError, parse_key

SIMULATED = "simulated"
ESTIMATED = "estimated"
CONTROL_RATE = 125.0
GROUPS = ("theta", "omega", "tau")


class PlanningError(RuntimeError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class WorkspacePlacement:
    surface_center: tuple = (0.40, 0.00, 0.10)
    box_size: float = 0.10
    pen_lift: float = 0.005
    pen_axis: tuple = (0.0, 0.0, -1.0)

    def __post_init__(self):
        if self.pen_lift <= 0:
            raise ValueError("pen_lift must be > 0")
        if self.box_size <= 0:
            raise ValueError("box_size must be > 0")
        n = np.linalg.norm(self.pen_axis)
        if not np.isfinite(n) or n == 0:
            raise ValueError("pen_axis must be a non-zero vector")

    @property
    def axis(self):
        a = np.asarray(self.pen_axis, dtype=float)
        return a / np.linalg.norm(a)

    def surface_basis(self):
        """Two in-surface unit vectors (u, v) playing the role of the pen x and y axes."""
        n = -self.axis
        ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = ref - n * (ref @ n)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u)

    def corners(self):
        u, v = self.surface_basis()
        c = np.asarray(self.surface_center, dtype=float)
        h = 0.5 * self.box_size
        return [c + su * h * u + sv * h * v for su in (-1, 1) for sv in (-1, 1)]

    def validate(self, chain):
        """Check the whole writing square is reachable with the pen perpendicular."""
        seed = home_posture(chain, self)
        for k, corner in enumerate(self.corners()):
            try:
                rm.solve_pen_track(chain, [corner + self.pen_lift * -self.axis], self.axis, seed)
                rm.solve_pen_track(chain, [corner], self.axis, seed)
            except rm.IKError as exc:
                raise PlanningError(f"placement corner {k} unreachable: {exc}") from exc


@dataclass(eq=False)
class JointFeatureSeries:
    """Per-sample joint angles, velocities and torques aligned with a signature."""

    t: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    tau: np.ndarray
    source: str = SIMULATED
    user_id: str = "u000"
    label: str = GENUINE
    session: int = 1

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        m = self.t.size
        for name in GROUPS:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (m, 6):
                raise SignatureValidationError(f"{name} has shape {arr.shape}, expected ({m}, 6)")
            if not np.all(np.isfinite(arr)):
                raise SignatureValidationError(f"non-finite {name} value")
            setattr(self, name, arr)

    def __len__(self):
        return self.t.size

    def group(self, name):
        return getattr(self, name)

    @property
    def matrix(self):
        """``(M, 18)`` block of theta, omega, tau."""
        return np.hstack((self.theta, self.omega, self.tau))


@dataclass(eq=False)
class JointTrajectory:
    t: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    accel: np.ndarray
    waypoint_t: np.ndarray
    waypoint_theta: np.ndarray
    spline: object = field(repr=False, default=None)


# ---------------------------------------------------------------------- pipeline

def map_to_workspace(signature, placement):
    """Timed waypoints ``[t, x, y, z]`` (base frame) for a signature.

    The signature is scaled isotropically so its longer side spans
    ``box_size`` and centred on ``surface_center``; pen-up samples sit
    ``pen_lift`` above the surface.
    """
    x, y = signature.x, signature.y
    extent = max(np.ptp(x), np.ptp(y))
    if not extent > 0:
        raise DegenerateInputError("signature has zero spatial extent")
    scale = placement.box_size / extent
    cx = 0.5 * (x.max() + x.min())
    cy = 0.5 * (y.max() + y.min())
    u, v = placement.surface_basis()
    pts = (np.asarray(placement.surface_center, dtype=float)
           + np.outer((x - cx) * scale, u) + np.outer((y - cy) * scale, v))
    lifted = ~signature.pen_down
    pts[lifted] += placement.pen_lift * -placement.axis
    return np.column_stack((signature.t, pts))


_HOME_CACHE = {}


def home_posture(chain, placement):
    """Pen-down posture over the surface centre, reached from the chain's home."""
    key = (id(chain), placement)
    if key not in _HOME_CACHE:
        _HOME_CACHE[key] = rm.solve_pen_ik(chain, placement.surface_center, placement.axis,
                                           chain.home)
    return _HOME_CACHE[key]


def control_ticks(t0, t1, rate):
    n = int(np.floor((t1 - t0) * rate + 1e-9)) + 1
    ticks = t0 + np.arange(n) / rate
    if t1 - ticks[-1] > 1e-9:
        # keep the final waypoint inside the sampled span
        ticks = np.append(ticks, t1)
    return ticks


def plan_joint_trajectory(chain, waypoints, control_rate=CONTROL_RATE,
                          pen_axis=(0.0, 0.0, -1.0), seed=None):
    """Solve IK per waypoint and fit a joint-space cubic spline sampled at ``control_rate``.

    Each IK solve is seeded with the previous solution so the joint path
    stays on one branch.
    """
    waypoints = np.asarray(waypoints, dtype=float)
    if waypoints.ndim != 2 or waypoints.shape[1] != 4 or waypoints.shape[0] < 2:
        raise PlanningError("waypoints must be an (M >= 2, 4) array of [t, x, y, z]")
    seed = chain.home if seed is None else seed
    try:
        knots = rm.solve_pen_track(chain, waypoints[:, 1:], pen_axis, seed)
    except rm.IKError as exc:
        raise PlanningError(f"IK failed at waypoint {exc.index}: {exc}", exc.index) from exc
    tw = waypoints[:, 0]
    spline = CubicSpline(tw, knots, axis=0, bc_type="natural")
    ticks = control_ticks(tw[0], tw[-1], control_rate)
    return JointTrajectory(ticks, spline(ticks), spline(ticks, 1), spline(ticks, 2), tw, knots,
                           spline)


def _resample(t_src, values, t_dst):
    return np.column_stack([np.interp(t_dst, t_src, values[:, j]) for j in range(values.shape[1])])


def replay(chain, signature, placement=None):
    """Ground-truth joint features for ``signature``, one row per pen sample."""
    placement = placement or WorkspacePlacement()
    waypoints = map_to_workspace(signature, placement)
    traj = plan_joint_trajectory(chain, waypoints, CONTROL_RATE, placement.axis,
                                 home_posture(chain, placement))
    tau_id = rm.inverse_dynamics(chain, traj.theta, traj.omega, traj.accel)
    # the arm reports currents; torques are recovered through the motor model
    current = rm.current_from_torque(chain, tau_id)
    tau = rm.torque_from_current(chain, current)
    t = signature.t
    return JointFeatureSeries(
        t=t.copy(),
        theta=_resample(traj.t, traj.theta, t),
        omega=_resample(traj.t, traj.omega, t),
        tau=_resample(traj.t, tau, t),
        source=SIMULATED, user_id=signature.user_id, label=signature.label,
        session=signature.session,
    )


def replay_corpus(chain, corpus, placement=None):
    """``{signature key: JointFeatureSeries}`` for every signature of a corpus."""
    return {key: replay(chain, sig, placement) for key, sig in corpus.items()}


# ------------------------------------------------------------------------- files

_FEATURE_COLS = (["t"] + [f"theta{i}" for i in range(1, 7)] + [f"omega{i}" for i in range(1, 7)]
                 + [f"tau{i}" for i in range(1, 7)])


def write_feature_file(series):
    lines = [f"#cols: {' '.join(_FEATURE_COLS)}", f"# source: {series.source}",
             f"# user: {series.user_id}", f"# label: {series.label}",
             f"# session: {series.session}"]
    block = np.column_stack((series.t, series.matrix))
    lines += [" ".join(repr(float(v)) for v in row) for row in block]
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_feature_file(data):
    meta = {}
    rows = []
    for lineno, raw in enumerate(data.decode("utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
            continue
        vals = line.split()
        if len(vals) != 19:
            raise SignatureValidationError(f"row {lineno}: expected 19 columns, found {len(vals)}")
        rows.append([float(v) for v in vals])
    if not rows:
        raise SignatureValidationError("feature file has no rows")
    a = np.array(rows)
    return JointFeatureSeries(a[:, 0], a[:, 1:7], a[:, 7:13], a[:, 13:19],
                              source=meta.get("source", SIMULATED),
                              user_id=meta.get("user", "u000"),
                              label=meta.get("label", GENUINE),
                              session=int(meta.get("session", 1)))


def write_feature_dir(features, root):
    root = Path(root)
    for key, series in features.items():
        path = root / f"{key}.feat"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_feature_file(series))


def read_feature_dir(root):
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"feature directory {root} does not exist")
    out = {}
    for path in sorted(root.glob("*/*.feat")):
        key = f"{path.parent.name}/{path.stem}"
        parse_key(key)
        out[key] = parse_feature_file(path.read_bytes())
    if not out:
        raise SignatureValidationError(f"no feature files under {root}")
    return out
