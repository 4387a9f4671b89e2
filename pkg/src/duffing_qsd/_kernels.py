"""Compiled inner loops (numba) for the classical engine and frame shifts.

All kernels are nogil so trajectory ensembles can fan out over threads; they
take plain float/complex arrays and never touch global state.  Status codes:
0 = ok, 1 = overflow (|x| ran past the divergence guard).
"""

import numpy as np
from numba import njit, prange

DIVERGENCE_LIMIT = 1.0e6


@njit(cache=True, nogil=True, inline="always")
def _accel(x, p, t, m, gamma, q, om):
    """Right-hand side of the forced damped Duffing flow, p = m*xdot."""
    dx = p / m
    dp = x - x * x * x - 2.0 * gamma * p + q * m * np.cos(om * t)
    return dx, dp


@njit(cache=True, nogil=True, inline="always")
def _rk4_point(x, p, t, dt, m, gamma, q, om):
    k1x, k1p = _accel(x, p, t, m, gamma, q, om)
    k2x, k2p = _accel(x + 0.5 * dt * k1x, p + 0.5 * dt * k1p, t + 0.5 * dt, m, gamma, q, om)
    k3x, k3p = _accel(x + 0.5 * dt * k2x, p + 0.5 * dt * k2p, t + 0.5 * dt, m, gamma, q, om)
    k4x, k4p = _accel(x + dt * k3x, p + dt * k3p, t + dt, m, gamma, q, om)
    xn = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    pn = p + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return xn, pn


@njit(cache=True, nogil=True)
def rk4_record(x, p, t0, dt, nsteps, stride, m, gamma, q, om, xs, ps):
    """RK4 trajectory, recording the state every `stride` steps.

    Slot 0 holds the initial state; xs/ps must have nsteps//stride + 1 slots.
    """
    xs[0] = x
    ps[0] = p
    for i in range(nsteps):
        x, p = _rk4_point(x, p, t0 + i * dt, dt, m, gamma, q, om)
        if np.abs(x) > DIVERGENCE_LIMIT:
            return 1
        if (i + 1) % stride == 0:
            j = (i + 1) // stride
            xs[j] = x
            ps[j] = p
    return 0


@njit(cache=True, nogil=True)
def langevin_record(x, p, t0, dt, nsteps, stride, m, gamma, q, om, kick, noise, xs, ps):
    """Euler-Maruyama trajectory with per-step momentum kick of std `kick`.

    `noise` holds nsteps standard normal draws (pregenerated from the caller's
    stream so trajectories stay reproducible).
    """
    xs[0] = x
    ps[0] = p
    for i in range(nsteps):
        t = t0 + i * dt
        dx, dp = _accel(x, p, t, m, gamma, q, om)
        x = x + dx * dt
        p = p + dp * dt + kick * noise[i]
        if np.abs(x) > DIVERGENCE_LIMIT:
            return 1
        if (i + 1) % stride == 0:
            j = (i + 1) // stride
            xs[j] = x
            ps[j] = p
    return 0


@njit(cache=True, nogil=True)
def benettin_logs(x, p, t0, dt, nsteps, renorm_stride, m, gamma, q, om, logs):
    """Benettin tangent-vector method: log growth factors per renormalization.

    The tangent vector follows the variational equations
    d(dx)/dt = dp/m, d(dp)/dt = (1 - 3x^2) dx - 2*gamma*dp
    linearized about the reference trajectory, integrated with the same RK4
    stepping; logs must have nsteps // renorm_stride slots.
    """
    vx = 1.0
    vp = 0.0
    k = 0
    for i in range(nsteps):
        t = t0 + i * dt
        # reference substages, reused by the tangent RK4
        x1, p1 = x, p
        x2 = x + 0.5 * dt * (p1 / m)
        p2 = p + 0.5 * dt * (x1 - x1 ** 3 - 2.0 * gamma * p1 + q * m * np.cos(om * t))
        x3 = x + 0.5 * dt * (p2 / m)
        p3 = p + 0.5 * dt * (x2 - x2 ** 3 - 2.0 * gamma * p2 + q * m * np.cos(om * (t + 0.5 * dt)))
        x4 = x + dt * (p3 / m)
        p4 = p + dt * (x3 - x3 ** 3 - 2.0 * gamma * p3 + q * m * np.cos(om * (t + 0.5 * dt)))

        k1x = vx
        k1p = vp
        a1x = k1p / m
        a1p = (1.0 - 3.0 * x1 * x1) * k1x - 2.0 * gamma * k1p
        k2x = vx + 0.5 * dt * a1x
        k2p = vp + 0.5 * dt * a1p
        a2x = k2p / m
        a2p = (1.0 - 3.0 * x2 * x2) * k2x - 2.0 * gamma * k2p
        k3x = vx + 0.5 * dt * a2x
        k3p = vp + 0.5 * dt * a2p
        a3x = k3p / m
        a3p = (1.0 - 3.0 * x3 * x3) * k3x - 2.0 * gamma * k3p
        k4x = vx + dt * a3x
        k4p = vp + dt * a3p
        a4x = k4p / m
        a4p = (1.0 - 3.0 * x4 * x4) * k4x - 2.0 * gamma * k4p
        vx = vx + (dt / 6.0) * (a1x + 2.0 * a2x + 2.0 * a3x + a4x)
        vp = vp + (dt / 6.0) * (a1p + 2.0 * a2p + 2.0 * a3p + a4p)

        x, p = _rk4_point(x, p, t, dt, m, gamma, q, om)
        if np.abs(x) > DIVERGENCE_LIMIT:
            return 1
        if (i + 1) % renorm_stride == 0:
            r = np.sqrt(vx * vx + vp * vp)
            logs[k] = np.log(r)
            vx /= r
            vp /= r
            k += 1
    return 0


@njit(cache=True, nogil=True)
def pair_divergence_logs(x, p, t0, dt, nsteps, renorm_stride, d0, m, gamma, q, om, logs):
    """Finite-separation two-trajectory divergence (independent Lyapunov oracle).

    A shadow trajectory starts offset by d0 in x; every renorm_stride steps the
    log of the separation growth is recorded and the shadow is pulled back to
    distance d0 along the current separation direction.
    """
    xb = x + d0
    pb = p
    k = 0
    for i in range(nsteps):
        t = t0 + i * dt
        x, p = _rk4_point(x, p, t, dt, m, gamma, q, om)
        xb, pb = _rk4_point(xb, pb, t, dt, m, gamma, q, om)
        if np.abs(x) > DIVERGENCE_LIMIT or np.abs(xb) > DIVERGENCE_LIMIT:
            return 1
        if (i + 1) % renorm_stride == 0:
            sx = xb - x
            sp = pb - p
            r = np.sqrt(sx * sx + sp * sp) / d0
            logs[k] = np.log(r)
            xb = x + sx / r
            pb = p + sp / r
            k += 1
    return 0


@njit(cache=True, nogil=True)
def displace_apply(psi, alpha):
    """Apply the displacement exp(alpha*adag - conj(alpha)*a) to psi.

    Uses scaling plus a Taylor series of the tridiagonal generator; exact
    unitarity on the truncated basis (the truncated generator is still
    anti-Hermitian).  Returns a new array.
    """
    n = psi.shape[0]
    if n < 2:
        return psi.copy()
    # ||K||_1 <= 2|alpha|*sqrt(n); halve until the scaled norm is modest
    nrm = 2.0 * np.abs(alpha) * np.sqrt(n)
    s = 0
    while nrm > 0.5:
        nrm *= 0.5
        s += 1
    a = alpha / (2.0 ** s)
    ac = np.conj(a)
    out = psi.copy()
    term = np.empty(n, dtype=np.complex128)
    nxt = np.empty(n, dtype=np.complex128)
    for _ in range(2 ** s):
        # out <- exp(K_scaled) @ out via Taylor
        for i in range(n):
            term[i] = out[i]
        fac = 1.0
        for k in range(1, 60):
            # nxt = K term:  (K v)_j = a*sqrt(j)*v_{j-1} - conj(a)*sqrt(j+1)*v_{j+1}
            nxt[0] = -ac * np.sqrt(1.0) * term[1]
            for j in range(1, n - 1):
                nxt[j] = a * np.sqrt(j) * term[j - 1] - ac * np.sqrt(j + 1.0) * term[j + 1]
            nxt[n - 1] = a * np.sqrt(n - 1.0) * term[n - 2]
            fac /= k
            tmax = 0.0
            for j in range(n):
                term[j] = nxt[j]
                out[j] += fac * nxt[j]
                v = np.abs(fac * nxt[j])
                if v > tmax:
                    tmax = v
            if tmax < 1e-18:
                break
    return out


@njit(cache=True, nogil=True)
def _frame_stage(v, t, ac, m, gamma, q, om, hbar, xs, ps, g1, g2,
                 w, ap, ad, bx, bx2, blo, bhi, hp, out):
    """Nonlinear QSD drift in the displaced frame, written into `out`.

    The frame Hamiltonian is the Duffing one expanded about the center
    alpha_c = ac plus the damping compensation i*hbar*Gamma*(conj(ac)*a -
    ac*adag); the sign of the compensation is fixed by requiring a
    recentered coherent state under pure damping to decay as exp(-Gamma*t).
    Returns <a> in the (unnormalized) stage state.
    """
    n = v.shape[0]
    xc = 2.0 * xs * ac.real
    pc = 2.0 * ps * ac.imag
    c1 = xc * xc * xc - xc - q * m * np.cos(om * t)
    c2 = 0.5 * (3.0 * xc * xc - 1.0)
    # ladder applications
    for i in range(n - 1):
        ap[i] = w[i] * v[i + 1]
    ap[n - 1] = 0.0
    ad[0] = 0.0
    for i in range(1, n):
        ad[i] = w[i - 1] * v[i - 1]
    n2 = 0.0
    ea = 0.0 + 0.0j
    for i in range(n):
        n2 += v[i].real * v[i].real + v[i].imag * v[i].imag
        ea += np.conj(v[i]) * ap[i]
    ea /= n2
    # damping compensation + momentum terms accumulate into hp
    ihg = 1j * hbar * gamma
    acc = np.conj(ac)
    for i in range(n):
        hp[i] = ihg * (acc * ap[i] - ac * ad[i])
        bx[i] = 1j * ps * (ad[i] - ap[i])        # p on v
        hp[i] += (pc / m) * bx[i]
    # p^2: raise/lower of bx
    for i in range(n - 1):
        blo[i] = w[i] * bx[i + 1]
    blo[n - 1] = 0.0
    bhi[0] = 0.0
    for i in range(1, n):
        bhi[i] = w[i - 1] * bx[i - 1]
    half_m = 1.0 / (2.0 * m)
    for i in range(n):
        hp[i] += half_m * 1j * ps * (bhi[i] - blo[i])
    # x chain: x, x^2, x^3, x^4
    for i in range(n):
        bx[i] = xs * (ap[i] + ad[i])
        hp[i] += c1 * bx[i]
    for i in range(n - 1):
        blo[i] = w[i] * bx[i + 1]
    blo[n - 1] = 0.0
    bhi[0] = 0.0
    for i in range(1, n):
        bhi[i] = w[i - 1] * bx[i - 1]
    for i in range(n):
        bx2[i] = xs * (blo[i] + bhi[i])
        hp[i] += c2 * bx2[i]
    for i in range(n - 1):
        blo[i] = w[i] * bx2[i + 1]
    blo[n - 1] = 0.0
    bhi[0] = 0.0
    for i in range(1, n):
        bhi[i] = w[i - 1] * bx2[i - 1]
    for i in range(n):
        bx[i] = xs * (blo[i] + bhi[i])
        hp[i] += xc * bx[i]
    for i in range(n - 1):
        blo[i] = w[i] * bx[i + 1]
    blo[n - 1] = 0.0
    bhi[0] = 0.0
    for i in range(1, n):
        bhi[i] = w[i - 1] * bx[i - 1]
    for i in range(n):
        bx2[i] = xs * (blo[i] + bhi[i])
        hp[i] += 0.25 * bx2[i]
    # assemble drift
    mi_h = -1j / hbar
    eac = np.conj(ea)
    ea2 = ea.real * ea.real + ea.imag * ea.imag
    g1s = g1 * g1
    g2s = g2 * g2
    for i in range(n):
        out[i] = mi_h * hp[i]
    if g1 > 0.0:
        for i in range(n):
            out[i] += g1s * (eac * ap[i] - 0.5 * i * v[i] - 0.5 * ea2 * v[i])
    if g2 > 0.0:
        for i in range(n):
            out[i] += g2s * (ea * ad[i] - 0.5 * (i + 1.0) * v[i] - 0.5 * ea2 * v[i])
    return ea


@njit(cache=True, nogil=True)
def _qsd_frame_row(v, ac0, w, z1, z2, t0, dt, m, gamma, q, om, hbar,
                   xs, ps, g1, g2, gate, tail_tol, lim):
    """Advance one trajectory row through len(z1) QSD steps in place.

    RK4 on the nonlinear drift, Euler (Ito) noise with coefficients frozen
    at the step start, exact renormalization, then recentering whenever
    |<a>| crosses `gate`.  Returns (status, alpha_c, <a>): status 0 = ok,
    1 = top-level weight exceeded tail_tol, 2 = recentering displacement
    unsafe (|<a>|^2 >= lim).
    """
    n = v.shape[0]
    spp = z1.shape[0]
    ac = ac0
    ap0 = np.empty(n, dtype=np.complex128)
    ad0 = np.empty(n, dtype=np.complex128)
    ap = np.empty(n, dtype=np.complex128)
    ad = np.empty(n, dtype=np.complex128)
    bx = np.empty(n, dtype=np.complex128)
    bx2 = np.empty(n, dtype=np.complex128)
    blo = np.empty(n, dtype=np.complex128)
    bhi = np.empty(n, dtype=np.complex128)
    hp = np.empty(n, dtype=np.complex128)
    k1 = np.empty(n, dtype=np.complex128)
    k2 = np.empty(n, dtype=np.complex128)
    k3 = np.empty(n, dtype=np.complex128)
    k4 = np.empty(n, dtype=np.complex128)
    vs = np.empty(n, dtype=np.complex128)
    ea = 0.0 + 0.0j
    for j in range(spp):
        t = t0 + j * dt
        ea0 = _frame_stage(v, t, ac, m, gamma, q, om, hbar, xs, ps, g1, g2,
                           w, ap0, ad0, bx, bx2, blo, bhi, hp, k1)
        for i in range(n):
            vs[i] = v[i] + 0.5 * dt * k1[i]
        _frame_stage(vs, t + 0.5 * dt, ac, m, gamma, q, om, hbar, xs, ps, g1, g2,
                     w, ap, ad, bx, bx2, blo, bhi, hp, k2)
        for i in range(n):
            vs[i] = v[i] + 0.5 * dt * k2[i]
        _frame_stage(vs, t + 0.5 * dt, ac, m, gamma, q, om, hbar, xs, ps, g1, g2,
                     w, ap, ad, bx, bx2, blo, bhi, hp, k3)
        for i in range(n):
            vs[i] = v[i] + dt * k3[i]
        _frame_stage(vs, t + dt, ac, m, gamma, q, om, hbar, xs, ps, g1, g2,
                     w, ap, ad, bx, bx2, blo, bhi, hp, k4)
        sixth = dt / 6.0
        if g1 > 0.0:
            zz1 = z1[j]
            if g2 > 0.0:
                zz2 = z2[j]
                for i in range(n):
                    vs[i] = (v[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                             + g1 * (ap0[i] - ea0 * v[i]) * zz1
                             + g2 * (ad0[i] - np.conj(ea0) * v[i]) * zz2)
            else:
                for i in range(n):
                    vs[i] = (v[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                             + g1 * (ap0[i] - ea0 * v[i]) * zz1)
        else:
            for i in range(n):
                vs[i] = v[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        nrm = 0.0
        for i in range(n):
            nrm += vs[i].real * vs[i].real + vs[i].imag * vs[i].imag
        inrm = 1.0 / np.sqrt(nrm)
        for i in range(n):
            v[i] = vs[i] * inrm
        tail = (v[n - 1].real * v[n - 1].real + v[n - 1].imag * v[n - 1].imag
                + v[n - 2].real * v[n - 2].real + v[n - 2].imag * v[n - 2].imag)
        if tail > tail_tol:
            return 1, ac, ea
        ea = 0.0 + 0.0j
        for i in range(n - 1):
            ea += np.conj(v[i]) * w[i] * v[i + 1]
        if np.abs(ea) > gate:
            if ea.real * ea.real + ea.imag * ea.imag >= lim:
                return 2, ac, ea
            shifted = displace_apply(v, -ea)
            for i in range(n):
                v[i] = shifted[i]
            ac += ea
            ea = 0.0 + 0.0j
    return 0, ac, ea


@njit(cache=True, nogil=True, parallel=True)
def qsd_frame_block(psi, alpha_c, w, z1, z2, t0, dt, m, gamma, q, om, hbar,
                    xs, ps, g1, g2, gate, tail_tol, lim, ea_out, status):
    """Advance every trajectory row independently through one noise block.

    Rows never couple, so the batch fans out over threads.  psi, alpha_c,
    ea_out and status are updated in place.
    """
    nb = psi.shape[0]
    for b in prange(nb):
        st, ac, ea = _qsd_frame_row(psi[b], alpha_c[b], w, z1[b], z2[b], t0, dt,
                                    m, gamma, q, om, hbar, xs, ps, g1, g2,
                                    gate, tail_tol, lim)
        status[b] = st
        alpha_c[b] = ac
        ea_out[b] = ea
