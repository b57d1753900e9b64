"""Low-level dynamics kernels.

Everything here works on packed float arrays so that numba can compile it.
Layout conventions:

* configuration ``q``: arm joint angles, then per body either
  ``(x, y, heading)`` (planar) or ``(x, y, z, qw, qx, qy, qz)`` (spatial);
* velocity ``v``: arm joint rates, then per body ``(vx, vy, wz)`` or
  ``(vx, vy, vz, wx, wy, wz)`` with the spatial angular rate in the body frame.

Absolute link angles are cumulative sums of the joint angles and link
centres of mass sit at mid-length (uniform rods).
"""
import math

import numpy as np

from gfmsim._jit import kernel

# scalar parameter slots in the packed ``fp`` vector
P_GRAVITY = 0
P_GAIN = 1
P_DAMPING = 2
P_STIFFNESS = 3
P_CONTACT_DAMPING = 4
P_MU = 5
P_MU_PADDLE = 6
P_PADDLE_RADIUS = 7
P_BASE_X = 8
P_BASE_Y = 9
P_ARM_GX = 10
P_ARM_GY = 11
P_LAG = 12
P_FMAP_JOINT = 13
P_FMAP_OBJECT = 14
P_FMAP_K = 15
P_WALL_XMIN = 16
P_WALL_XMAX = 17
P_WALL_YMIN = 18
P_WALL_YMAX = 19
P_HAS_WALLS = 20
P_SLIP_EPS = 21
P_JOINT_EPS = 22
N_SCALARS = 23

# per-link columns of the packed ``arm`` matrix
A_MASS = 0
A_LENGTH = 1
A_INERTIA = 2
A_VISCOUS = 3
A_DRY = 4
A_TORQUE_LIMIT = 5
A_VELOCITY_LIMIT = 6
N_ARM_COLS = 7

# per-body columns of the packed ``bodies`` matrix
B_KIND = 0  # 0 planar, 1 spatial
B_MASS = 1
B_IXX = 2
B_IYY = 3
B_IZZ = 4
B_HX = 5
B_HY = 6
B_HZ = 7
N_BODY_COLS = 8

MODE_TORQUE = 0
MODE_VELOCITY = 1

DIVERGENCE_LIMIT = 1e6


@kernel
def dims(arm, bodies):
    nq = arm.shape[0]
    nv = arm.shape[0]
    for b in range(bodies.shape[0]):
        if bodies[b, B_KIND] > 0.5:
            nq += 7
            nv += 6
        else:
            nq += 3
            nv += 3
    return nq, nv


@kernel
def quat_mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@kernel
def quat_to_matrix(qt):
    w, x, y, z = qt[0], qt[1], qt[2], qt[3]
    R = np.empty((3, 3))
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - w * z)
    R[0, 2] = 2.0 * (x * z + w * y)
    R[1, 0] = 2.0 * (x * y + w * z)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - w * x)
    R[2, 0] = 2.0 * (x * z - w * y)
    R[2, 1] = 2.0 * (y * z + w * x)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


@kernel
def quat_exp(w, h):
    """Unit quaternion for rotating by body rate ``w`` over time ``h``."""
    out = np.empty(4)
    n = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    half = 0.5 * n * h
    if n < 1e-300:
        out[0] = 1.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
        return out
    s = math.sin(half) / n
    out[0] = math.cos(half)
    out[1] = w[0] * s
    out[2] = w[1] * s
    out[3] = w[2] * s
    return out


@kernel
def quat_yaw(qt):
    w, x, y, z = qt[0], qt[1], qt[2], qt[3]
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


@kernel
def arm_kinematics(q, arm, fp):
    """Link COM Jacobians and velocity-product accelerations.

    Returns ``(abs_angles, com_jac, tip_pos, tip_jac)`` where ``com_jac`` has
    shape ``(n, 2, n)``.
    """
    n = arm.shape[0]
    theta = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc += q[i]
        theta[i] = acc
    com_jac = np.zeros((n, 2, n))
    for i in range(n):
        for k in range(i + 1):
            jx = 0.0
            jy = 0.0
            for j in range(k, i):
                jx -= arm[j, A_LENGTH] * math.sin(theta[j])
                jy += arm[j, A_LENGTH] * math.cos(theta[j])
            jx -= 0.5 * arm[i, A_LENGTH] * math.sin(theta[i])
            jy += 0.5 * arm[i, A_LENGTH] * math.cos(theta[i])
            com_jac[i, 0, k] = jx
            com_jac[i, 1, k] = jy
    tip = np.empty(2)
    tip[0] = fp[P_BASE_X]
    tip[1] = fp[P_BASE_Y]
    for j in range(n):
        tip[0] += arm[j, A_LENGTH] * math.cos(theta[j])
        tip[1] += arm[j, A_LENGTH] * math.sin(theta[j])
    tip_jac = np.zeros((2, n))
    for k in range(n):
        for j in range(k, n):
            tip_jac[0, k] -= arm[j, A_LENGTH] * math.sin(theta[j])
            tip_jac[1, k] += arm[j, A_LENGTH] * math.cos(theta[j])
    return theta, com_jac, tip, tip_jac


@kernel
def mass_matrix_kernel(q, arm, bodies, fp):
    nq, nv = dims(arm, bodies)
    n = arm.shape[0]
    M = np.zeros((nv, nv))
    theta, com_jac, tip, tip_jac = arm_kinematics(q, arm, fp)
    for i in range(n):
        m = arm[i, A_MASS]
        inertia = arm[i, A_INERTIA]
        for a in range(i + 1):
            for b in range(i + 1):
                M[a, b] += m * (com_jac[i, 0, a] * com_jac[i, 0, b] + com_jac[i, 1, a] * com_jac[i, 1, b]) + inertia
    iv = n
    for b in range(bodies.shape[0]):
        m = bodies[b, B_MASS]
        if bodies[b, B_KIND] > 0.5:
            for k in range(3):
                M[iv + k, iv + k] = m
            M[iv + 3, iv + 3] = bodies[b, B_IXX]
            M[iv + 4, iv + 4] = bodies[b, B_IYY]
            M[iv + 5, iv + 5] = bodies[b, B_IZZ]
            iv += 6
        else:
            M[iv, iv] = m
            M[iv + 1, iv + 1] = m
            M[iv + 2, iv + 2] = bodies[b, B_IZZ]
            iv += 3
    return M


@kernel
def bias_kernel(q, v, arm, bodies, fp):
    """Coriolis/centrifugal, gravity, gyroscopic and joint friction terms."""
    nq, nv = dims(arm, bodies)
    n = arm.shape[0]
    c = np.zeros(nv)
    theta, com_jac, tip, tip_jac = arm_kinematics(q, arm, fp)
    thetad = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc += v[i]
        thetad[i] = acc
    gx = fp[P_ARM_GX]
    gy = fp[P_ARM_GY]
    for i in range(n):
        # velocity-product acceleration of the link COM
        ax = 0.0
        ay = 0.0
        for j in range(i):
            w2 = thetad[j] * thetad[j]
            ax -= arm[j, A_LENGTH] * math.cos(theta[j]) * w2
            ay -= arm[j, A_LENGTH] * math.sin(theta[j]) * w2
        w2 = thetad[i] * thetad[i]
        ax -= 0.5 * arm[i, A_LENGTH] * math.cos(theta[i]) * w2
        ay -= 0.5 * arm[i, A_LENGTH] * math.sin(theta[i]) * w2
        m = arm[i, A_MASS]
        for k in range(i + 1):
            c[k] += m * (com_jac[i, 0, k] * (ax - gx) + com_jac[i, 1, k] * (ay - gy))
    eps = fp[P_JOINT_EPS]
    for i in range(n):
        dry = arm[i, A_DRY] + fp[P_FMAP_JOINT] * 0.5 * (1.0 + math.sin(fp[P_FMAP_K] * q[i]))
        c[i] += arm[i, A_VISCOUS] * v[i] + dry * math.tanh(v[i] / eps)
    iq = n
    iv = n
    for b in range(bodies.shape[0]):
        m = bodies[b, B_MASS]
        if bodies[b, B_KIND] > 0.5:
            c[iv + 2] += m * fp[P_GRAVITY]
            wx = v[iv + 3]
            wy = v[iv + 4]
            wz = v[iv + 5]
            lx = bodies[b, B_IXX] * wx
            ly = bodies[b, B_IYY] * wy
            lz = bodies[b, B_IZZ] * wz
            c[iv + 3] += wy * lz - wz * ly
            c[iv + 4] += wz * lx - wx * lz
            c[iv + 5] += wx * ly - wy * lx
            iq += 7
            iv += 6
        else:
            iq += 3
            iv += 3
    return c


@kernel
def _surface_mu(fp, x, y):
    k = fp[P_FMAP_K]
    return fp[P_MU] * (1.0 + fp[P_FMAP_OBJECT] * math.sin(k * x) * math.sin(k * y))


@kernel
def _capped_friction(normal, mu, vx, vy, eps, out):
    """Regularised Coulomb force opposing slip; magnitude stays below mu*normal."""
    speed = math.sqrt(vx * vx + vy * vy + eps * eps)
    out[0] = -mu * normal * vx / speed
    out[1] = -mu * normal * vy / speed


@kernel
def contact_kernel(q, v, arm, bodies, fp, telemetry):
    """Generalised contact forces (paddle-body, body-surface, body-wall).

    ``telemetry`` (length 3) accumulates max normal force, max
    tangential/normal ratio and the number of active contacts.
    """
    nq, nv = dims(arm, bodies)
    n = arm.shape[0]
    f = np.zeros(nv)
    k_c = fp[P_STIFFNESS]
    d_c = fp[P_CONTACT_DAMPING]
    eps = fp[P_SLIP_EPS]
    g = fp[P_GRAVITY]
    radius = fp[P_PADDLE_RADIUS]
    theta, com_jac, tip, tip_jac = arm_kinematics(q, arm, fp)
    tip_vel = np.zeros(2)
    for k in range(n):
        tip_vel[0] += tip_jac[0, k] * v[k]
        tip_vel[1] += tip_jac[1, k] * v[k]
    tip_rate = 0.0
    for k in range(n):
        tip_rate += v[k]
    ft = np.empty(2)
    iq = n
    iv = n
    for b in range(bodies.shape[0]):
        spatial = bodies[b, B_KIND] > 0.5
        m = bodies[b, B_MASS]
        hx = bodies[b, B_HX]
        hy = bodies[b, B_HY]
        hz = bodies[b, B_HZ]
        cx = q[iq]
        cy = q[iq + 1]
        if spatial:
            cz = q[iq + 2]
            quat = q[iq + 3:iq + 7]
            R = quat_to_matrix(quat)
            yaw = quat_yaw(quat)
            bvx = v[iv]
            bvy = v[iv + 1]
            bvz = v[iv + 2]
            wb = v[iv + 3:iv + 6]
            ww = R @ wb
            yaw_rate = ww[2]
        else:
            cz = 0.0
            yaw = q[iq + 2]
            R = np.eye(3)
            bvx = v[iv]
            bvy = v[iv + 1]
            bvz = 0.0
            yaw_rate = v[iv + 2]
            ww = np.zeros(3)
            ww[2] = yaw_rate
        # world-frame force/torque accumulated about the COM
        F = np.zeros(3)
        T = np.zeros(3)

        # paddle (disk at the arm tip) against the body footprint
        if radius > 0.0 and n > 0:
            cs = math.cos(yaw)
            sn = math.sin(yaw)
            rx = tip[0] - cx
            ry = tip[1] - cy
            dx = cs * rx + sn * ry
            dy = -sn * rx + cs * ry
            clx = min(max(dx, -hx), hx)
            cly = min(max(dy, -hy), hy)
            ex = dx - clx
            ey = dy - cly
            dist = math.sqrt(ex * ex + ey * ey)
            active = False
            if dist > 1e-12:
                if dist < radius:
                    depth = radius - dist
                    nlx = ex / dist
                    nly = ey / dist
                    active = True
            else:
                gapx = hx - abs(dx)
                gapy = hy - abs(dy)
                if gapx < gapy:
                    depth = radius + gapx
                    nlx = 1.0 if dx >= 0.0 else -1.0
                    nly = 0.0
                    clx = hx * nlx
                else:
                    depth = radius + gapy
                    nlx = 0.0
                    nly = 1.0 if dy >= 0.0 else -1.0
                    cly = hy * nly
                active = True
            if active:
                nx = cs * nlx - sn * nly
                ny = sn * nlx + cs * nly
                px = cx + cs * clx - sn * cly
                py = cy + sn * clx + cs * cly
                # contact point velocities on paddle and body
                vpx = tip_vel[0] - tip_rate * (py - tip[1])
                vpy = tip_vel[1] + tip_rate * (px - tip[0])
                vbx = bvx - yaw_rate * (py - cy)
                vby = bvy + yaw_rate * (px - cx)
                relx = vpx - vbx
                rely = vpy - vby
                vn = relx * nx + rely * ny
                normal = k_c * depth - d_c * vn
                if normal > 0.0:
                    tx = relx - vn * nx
                    ty = rely - vn * ny
                    _capped_friction(normal, fp[P_MU_PADDLE], tx, ty, eps, ft)
                    fpx = normal * nx + ft[0]
                    fpy = normal * ny + ft[1]
                    for k in range(n):
                        f[k] += tip_jac[0, k] * fpx + tip_jac[1, k] * fpy
                        f[k] += (px - tip[0]) * fpy - (py - tip[1]) * fpx
                    F[0] -= fpx
                    F[1] -= fpy
                    T[2] -= (px - cx) * fpy - (py - cy) * fpx
                    telemetry[0] = max(telemetry[0], normal)
                    telemetry[1] = max(telemetry[1], math.sqrt(ft[0] ** 2 + ft[1] ** 2) / normal)
                    telemetry[2] += 1.0

        if spatial:
            # penalty support at the eight corners against the plane z = 0
            for sx in (-1.0, 1.0):
                for sy in (-1.0, 1.0):
                    for sz in (-1.0, 1.0):
                        lc0 = sx * hx
                        lc1 = sy * hy
                        lc2 = sz * hz
                        wx_ = R[0, 0] * lc0 + R[0, 1] * lc1 + R[0, 2] * lc2
                        wy_ = R[1, 0] * lc0 + R[1, 1] * lc1 + R[1, 2] * lc2
                        wz_ = R[2, 0] * lc0 + R[2, 1] * lc1 + R[2, 2] * lc2
                        pz = cz + wz_
                        if pz < 0.0:
                            pvx = bvx + ww[1] * wz_ - ww[2] * wy_
                            pvy = bvy + ww[2] * wx_ - ww[0] * wz_
                            pvz = bvz + ww[0] * wy_ - ww[1] * wx_
                            normal = 0.25 * k_c * (-pz) - 0.25 * d_c * pvz
                            if normal > 0.0:
                                mu = _surface_mu(fp, cx + wx_, cy + wy_)
                                _capped_friction(normal, mu, pvx, pvy, eps, ft)
                                fx = ft[0]
                                fy = ft[1]
                                fz = normal
                                F[0] += fx
                                F[1] += fy
                                F[2] += fz
                                T[0] += wy_ * fz - wz_ * fy
                                T[1] += wz_ * fx - wx_ * fz
                                T[2] += wx_ * fy - wy_ * fx
                                telemetry[0] = max(telemetry[0], normal)
                                telemetry[1] = max(telemetry[1], math.sqrt(fx * fx + fy * fy) / normal)
                                telemetry[2] += 1.0
        else:
            # planar body resting on the surface: normal load is m*g
            normal = m * g
            if normal > 0.0:
                mu = _surface_mu(fp, cx, cy)
                _capped_friction(normal, mu, bvx, bvy, eps, ft)
                F[0] += ft[0]
                F[1] += ft[1]
                r_eff = (hx + hy) / 3.0
                s = r_eff * yaw_rate
                T[2] -= mu * normal * r_eff * s / math.sqrt(s * s + eps * eps)
                telemetry[0] = max(telemetry[0], normal)
                telemetry[1] = max(telemetry[1], math.sqrt(ft[0] ** 2 + ft[1] ** 2) / normal)
                telemetry[2] += 1.0

        # frictionless side walls acting on the footprint corners
        if fp[P_HAS_WALLS] > 0.5:
            cs = math.cos(yaw)
            sn = math.sin(yaw)
            for sx in (-1.0, 1.0):
                for sy in (-1.0, 1.0):
                    ox = cs * sx * hx - sn * sy * hy
                    oy = sn * sx * hx + cs * sy * hy
                    px = cx + ox
                    py = cy + oy
                    pvx = bvx - yaw_rate * oy
                    pvy = bvy + yaw_rate * ox
                    fx = 0.0
                    fy = 0.0
                    if px < fp[P_WALL_XMIN]:
                        fx = max(0.0, k_c * (fp[P_WALL_XMIN] - px) - d_c * pvx)
                    elif px > fp[P_WALL_XMAX]:
                        fx = -max(0.0, k_c * (px - fp[P_WALL_XMAX]) + d_c * pvx)
                    if py < fp[P_WALL_YMIN]:
                        fy = max(0.0, k_c * (fp[P_WALL_YMIN] - py) - d_c * pvy)
                    elif py > fp[P_WALL_YMAX]:
                        fy = -max(0.0, k_c * (py - fp[P_WALL_YMAX]) + d_c * pvy)
                    if fx != 0.0 or fy != 0.0:
                        F[0] += fx
                        F[1] += fy
                        T[2] += ox * fy - oy * fx
                        telemetry[2] += 1.0

        if spatial:
            f[iv] += F[0]
            f[iv + 1] += F[1]
            f[iv + 2] += F[2]
            tb = R.T @ T
            f[iv + 3] += tb[0]
            f[iv + 4] += tb[1]
            f[iv + 5] += tb[2]
            iq += 7
            iv += 6
        else:
            f[iv] += F[0]
            f[iv + 1] += F[1]
            f[iv + 2] += T[2]
            iq += 3
            iv += 3
    return f


@kernel
def solve_block_diagonal(M, rhs, n_arm):
    """Solve ``M x = rhs`` with a Cholesky on the arm block, diagonal elsewhere.

    Returns ``(x, ok)``; ``ok`` is False if the arm block is not positive definite.
    """
    nv = rhs.shape[0]
    x = np.zeros(nv)
    L = np.zeros((n_arm, n_arm))
    for i in range(n_arm):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return x, False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.zeros(n_arm)
    for i in range(n_arm):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(n_arm - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n_arm):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    for i in range(n_arm, nv):
        if M[i, i] <= 0.0:
            return x, False
        x[i] = rhs[i] / M[i, i]
    return x, True


@kernel
def controller_kernel(v, setpoint, gain_multiplier, arm, fp, telemetry):
    n = arm.shape[0]
    tau = np.empty(n)
    for i in range(n):
        vlim = arm[i, A_VELOCITY_LIMIT]
        sp = setpoint[i]
        if sp > vlim:
            sp = vlim
            telemetry[3] += 1.0
        elif sp < -vlim:
            sp = -vlim
            telemetry[3] += 1.0
        t = fp[P_GAIN] * (gain_multiplier * sp - v[i]) - fp[P_DAMPING] * v[i]
        lim = arm[i, A_TORQUE_LIMIT]
        if t > lim:
            t = lim
            telemetry[4] += 1.0
        elif t < -lim:
            t = -lim
            telemetry[4] += 1.0
        tau[i] = t
    return tau


@kernel
def accel_kernel(q, v, tau, extra, arm, bodies, fp, telemetry):
    n = arm.shape[0]
    M = mass_matrix_kernel(q, arm, bodies, fp)
    rhs = contact_kernel(q, v, arm, bodies, fp, telemetry) + extra - bias_kernel(q, v, arm, bodies, fp)
    for i in range(n):
        rhs[i] += tau[i]
    return solve_block_diagonal(M, rhs, n)


@kernel
def integrate_kernel(q, v, act, command, mode, gain_multiplier, extra, dt, substeps, arm, bodies, fp, telemetry):
    """Run ``substeps`` semi-implicit Euler steps with the command held.

    Returns ``(q, v, act, status)`` with status 0 ok, 1 singular mass
    matrix, 2 divergence.
    """
    n = arm.shape[0]
    q = q.copy()
    v = v.copy()
    act = act.copy()
    lag = fp[P_LAG]
    alpha = 1.0
    if lag > 0.0:
        alpha = 1.0 - math.exp(-dt / lag)
    for _ in range(substeps):
        if mode == MODE_VELOCITY:
            tau_cmd = controller_kernel(v, command, gain_multiplier, arm, fp, telemetry)
        else:
            tau_cmd = command.copy()
        for i in range(n):
            act[i] += alpha * (tau_cmd[i] - act[i])
        a, ok = accel_kernel(q, v, act, extra, arm, bodies, fp, telemetry)
        if not ok:
            return q, v, act, 1
        for i in range(n):
            v[i] += dt * a[i]
            q[i] += dt * v[i]
        iq = n
        iv = n
        for b in range(bodies.shape[0]):
            if bodies[b, B_KIND] > 0.5:
                for k in range(3):
                    v[iv + k] += dt * a[iv + k]
                    q[iq + k] += dt * v[iv + k]
                # body-frame angular momentum update that conserves the
                # world-frame momentum exactly when no torque acts
                inertia = bodies[b, B_IXX:B_IZZ + 1]
                rhs_ang = np.empty(3)
                # recover the applied torque by undoing the gyroscopic term
                w = v[iv + 3:iv + 6].copy()
                gyro = np.empty(3)
                gyro[0] = w[1] * inertia[2] * w[2] - w[2] * inertia[1] * w[1]
                gyro[1] = w[2] * inertia[0] * w[0] - w[0] * inertia[2] * w[2]
                gyro[2] = w[0] * inertia[1] * w[1] - w[1] * inertia[0] * w[0]
                for k in range(3):
                    rhs_ang[k] = inertia[k] * a[iv + 3 + k] + gyro[k]
                lb = np.empty(3)
                for k in range(3):
                    lb[k] = inertia[k] * w[k] + dt * rhs_ang[k]
                w_new = w.copy()
                w_used = w.copy()
                for _it in range(3):
                    w_used = w_new.copy()
                    Rd = quat_to_matrix(quat_exp(w_used, dt))
                    rl = Rd.T @ lb
                    for k in range(3):
                        w_new[k] = rl[k] / inertia[k]
                for k in range(3):
                    v[iv + 3 + k] = w_new[k]
                qn = quat_mul(q[iq + 3:iq + 7], quat_exp(w_used, dt))
                norm = math.sqrt(qn[0] ** 2 + qn[1] ** 2 + qn[2] ** 2 + qn[3] ** 2)
                for k in range(4):
                    q[iq + 3 + k] = qn[k] / norm
                iq += 7
                iv += 6
            else:
                for k in range(3):
                    v[iv + k] += dt * a[iv + k]
                    q[iq + k] += dt * v[iv + k]
                iq += 3
                iv += 3
        for i in range(q.shape[0]):
            if not abs(q[i]) <= DIVERGENCE_LIMIT:
                return q, v, act, 2
        for i in range(v.shape[0]):
            if not abs(v[i]) <= DIVERGENCE_LIMIT:
                return q, v, act, 2
    return q, v, act, 0


@kernel
def tip_position(q, arm, fp):
    theta, com_jac, tip, tip_jac = arm_kinematics(q, arm, fp)
    return tip
