"""Kinematic and dynamic kernels for a 6-joint standard D-H chain.

The D-H table is passed as a ``(6, 4)`` array with columns
``(a, alpha, d, theta_offset)``. Every function here is numba-compatible and
is compiled through :func:`maybe_njit`, so the same source is the pure-numpy
fallback when ``SIGKIN_PURE_NUMPY`` is set.
"""
import numpy as np

from ._accel import maybe_njit

IK_CONVERGED = 0
IK_MAX_ITER = 1
IK_SINGULAR = 2


@maybe_njit
def cross3(u, v):
    out = np.empty(3)
    out[0] = u[1] * v[2] - u[2] * v[1]
    out[1] = u[2] * v[0] - u[0] * v[2]
    out[2] = u[0] * v[1] - u[1] * v[0]
    return out


@maybe_njit
def dh_matrix(a, alpha, d, theta):
    """Rot_z(theta) Transl_z(d) Transl_x(a) Rot_x(alpha) in closed form."""
    ct = np.cos(theta)
    st = np.sin(theta)
    ca = np.cos(alpha)
    sa = np.sin(alpha)
    T = np.zeros((4, 4))
    T[0, 0] = ct
    T[0, 1] = -st * ca
    T[0, 2] = st * sa
    T[0, 3] = a * ct
    T[1, 0] = st
    T[1, 1] = ct * ca
    T[1, 2] = -ct * sa
    T[1, 3] = a * st
    T[2, 1] = sa
    T[2, 2] = ca
    T[2, 3] = d
    T[3, 3] = 1.0
    return T


@maybe_njit
def fk_frames(dh, theta):
    """Base-to-frame transforms; ``frames[0]`` is the base, ``frames[6]`` the flange."""
    n = dh.shape[0]
    frames = np.zeros((n + 1, 4, 4))
    frames[0] = np.eye(4)
    for i in range(n):
        frames[i + 1] = frames[i] @ dh_matrix(dh[i, 0], dh[i, 1], dh[i, 2], theta[i] + dh[i, 3])
    return frames


@maybe_njit
def fk(dh, theta):
    return fk_frames(dh, theta)[dh.shape[0]]


@maybe_njit
def jacobian_from_frames(frames):
    n = frames.shape[0] - 1
    J = np.zeros((6, n))
    pe = frames[n, :3, 3].copy()
    for i in range(n):
        z = frames[i, :3, 2].copy()
        o = frames[i, :3, 3].copy()
        J[:3, i] = cross3(z, pe - o)
        J[3:, i] = z
    return J


@maybe_njit
def jacobian(dh, theta):
    return jacobian_from_frames(fk_frames(dh, theta))


@maybe_njit
def rotation_log(R):
    """Rotation vector (axis * angle) of a rotation matrix."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    c = (tr - 1.0) * 0.5
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    angle = np.arccos(c)
    v = np.empty(3)
    v[0] = R[2, 1] - R[1, 2]
    v[1] = R[0, 2] - R[2, 0]
    v[2] = R[1, 0] - R[0, 1]
    if angle < 1e-6:
        # first-order expansion; exact to O(angle^3)
        return 0.5 * v
    if np.pi - angle > 1e-4:
        return v * (angle / (2.0 * np.sin(angle)))
    # near pi: axis from the symmetric part
    k = 0
    if R[1, 1] > R[k, k]:
        k = 1
    if R[2, 2] > R[k, k]:
        k = 2
    axis = np.empty(3)
    denom = np.sqrt(max(1.0 + 2.0 * R[k, k] - tr, 0.0))
    for j in range(3):
        if j == k:
            axis[j] = 0.5 * denom
        else:
            axis[j] = (R[j, k] + R[k, j]) / (2.0 * denom)
    # sign fixed by the antisymmetric part
    if axis[0] * v[0] + axis[1] * v[1] + axis[2] * v[2] < 0.0:
        axis = -axis
    return axis * angle


@maybe_njit
def _pose_error(frames, target, pen_mode):
    n = frames.shape[0] - 1
    T = frames[n]
    e = np.zeros(6)
    e[:3] = target[:3, 3] - T[:3, 3]
    if pen_mode:
        # only the tool axis is constrained; rotation about it is free
        zc = T[:3, 2].copy()
        zd = target[:3, 2].copy()
        c = cross3(zc, zd)
        s = _norm3(c, 0)
        dot = zc[0] * zd[0] + zc[1] * zd[1] + zc[2] * zd[2]
        angle = np.arctan2(s, dot)
        if s > 1e-12:
            e[3:] = c * (angle / s)
        elif dot < 0.0:
            e[3:] = T[:3, 0] * np.pi
    else:
        e[3:] = rotation_log(target[:3, :3].copy() @ T[:3, :3].T.copy())
    return e


@maybe_njit
def _norm3(v, start):
    return np.sqrt(v[start] ** 2 + v[start + 1] ** 2 + v[start + 2] ** 2)


@maybe_njit
def ik_dls(dh, target, seed, lower, upper, pen_mode, damping, max_iter, step_clamp,
           pos_tol, rot_tol):
    """Damped least-squares IK.

    With ``pen_mode`` only the target position and tool z-axis are matched and
    the last joint is held at its seed value.

    Returns ``(theta, pos_err, rot_err, iterations, status)``.
    """
    n = dh.shape[0]
    theta = seed.copy()
    n_active = n - 1 if pen_mode else n
    lam2 = damping * damping
    best = theta.copy()
    best_pos = np.inf
    best_rot = np.inf
    status = IK_MAX_ITER
    it = 0
    while True:
        frames = fk_frames(dh, theta)
        e = _pose_error(frames, target, pen_mode)
        pos_err = _norm3(e, 0)
        rot_err = _norm3(e, 3)
        if pos_err + rot_err < best_pos + best_rot:
            best = theta.copy()
            best_pos = pos_err
            best_rot = rot_err
        if pos_err <= pos_tol and rot_err <= rot_tol:
            status = IK_CONVERGED
            break
        if it >= max_iter:
            break
        J = jacobian_from_frames(frames)[:, :n_active].copy()
        Jt = J.T.copy()
        A = Jt @ J
        for k in range(n_active):
            A[k, k] += lam2
        step = np.linalg.solve(A, Jt @ e)
        biggest = np.max(np.abs(step))
        if not np.isfinite(biggest):
            status = IK_SINGULAR
            break
        if biggest > step_clamp:
            step = step * (step_clamp / biggest)
        for k in range(n_active):
            v = theta[k] + step[k]
            if v < lower[k]:
                v = lower[k]
            elif v > upper[k]:
                v = upper[k]
            theta[k] = v
        it += 1
    return best, best_pos, best_rot, it, status


@maybe_njit
def rnea(dh, masses, coms, inertias, theta, omega, accel, gravity):
    """Recursive Newton-Euler inverse dynamics in base-frame coordinates.

    ``coms[i]`` is link i's centre of mass in frame i, ``inertias[i]`` its
    inertia tensor about the COM in frame i axes. ``gravity`` is the
    acceleration vector, e.g. ``(0, 0, -9.81)``.
    """
    n = dh.shape[0]
    frames = fk_frames(dh, theta)
    w = np.zeros(3)
    dw = np.zeros(3)
    # base accelerating upwards stands in for gravity
    ao = -gravity.copy()
    wl = np.zeros((n, 3))
    dwl = np.zeros((n, 3))
    ac = np.zeros((n, 3))
    cw = np.zeros((n, 3))
    for i in range(n):
        z = frames[i, :3, 2].copy()
        o_prev = frames[i, :3, 3].copy()
        R = frames[i + 1, :3, :3].copy()
        o = frames[i + 1, :3, 3].copy()
        qd = omega[i] * z
        dw = dw + accel[i] * z + cross3(w, qd)
        w = w + qd
        r = o - o_prev
        ao = ao + cross3(dw, r) + cross3(w, cross3(w, r))
        rc = R @ coms[i]
        ac[i] = ao + cross3(dw, rc) + cross3(w, cross3(w, rc))
        cw[i] = o + rc
        wl[i] = w
        dwl[i] = dw
    tau = np.zeros(n)
    f_next = np.zeros(3)
    m_next = np.zeros(3)
    for i in range(n - 1, -1, -1):
        R = frames[i + 1, :3, :3].copy()
        Iw = R @ inertias[i] @ R.T.copy()
        o_prev = frames[i, :3, 3].copy()
        o = frames[i + 1, :3, 3].copy()
        F = masses[i] * ac[i]
        N = Iw @ dwl[i] + cross3(wl[i], Iw @ wl[i])
        m_i = m_next + cross3(o - o_prev, f_next) + cross3(cw[i] - o_prev, F) + N
        f_i = f_next + F
        tau[i] = m_i[0] * frames[i, 0, 2] + m_i[1] * frames[i, 1, 2] + m_i[2] * frames[i, 2, 2]
        f_next = f_i
        m_next = m_i
    return tau


@maybe_njit
def rnea_batch(dh, masses, coms, inertias, thetas, omegas, accels, gravity):
    out = np.empty_like(thetas)
    for k in range(thetas.shape[0]):
        out[k] = rnea(dh, masses, coms, inertias, thetas[k], omegas[k], accels[k], gravity)
    return out


@maybe_njit
def ik_pen_track(dh, positions, axis, seed, lower, upper, damping, max_iter, step_clamp,
                 pos_tol, rot_tol):
    """Pen IK along a waypoint sequence, each solve seeded by the previous one."""
    m = positions.shape[0]
    thetas = np.zeros((m, dh.shape[0]))
    errs = np.zeros((m, 2))
    target = np.eye(4)
    target[:3, 2] = axis
    current = seed.copy()
    for k in range(m):
        target[:3, 3] = positions[k]
        theta, pe, re, _, _ = ik_dls(dh, target, current, lower, upper, True, damping,
                                     max_iter, step_clamp, pos_tol, rot_tol)
        thetas[k] = theta
        errs[k, 0] = pe
        errs[k, 1] = re
        current = theta
    return thetas, errs
