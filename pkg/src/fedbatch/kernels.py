"""Hot numerical kernels: growth-law evaluation, the Dormand-Prince 5(4)
integrator with dense output and level-crossing events, the right-hand sides
of every ODE the package integrates, and batched polyline intersection tests.

Everything here is backend-neutral: compiled with numba when available (see
:mod:`fedbatch.backend`), executed as plain Python/NumPy otherwise.  Kernels
take raw float64 arrays only; the object-level API lives in the sibling
modules.

Growth models are passed as a ``(n, 3)`` array of Haldane coefficients
``[mu_bar, K, L]`` per row, process constants as a flat ``pars`` vector with
the layout given by the ``P_*`` indices below.
"""

import math

import numpy as np

from .backend import maybe_njit

# ---------------------------------------------------------------------------
# parameter vector layout and RHS modes

P_SIN = 0    # feed concentration S_in
P_M0 = 1     # conserved mass offset M0
P_QMAX = 2   # maximal flow
P_A = 3      # mode-specific: Q | S_bar | epsilon
P_B = 4      # mode-specific: flow clamp | V_max (sigma mode)
P_Y = 5      # yield (3-D mode)
P_FDJAC = 6  # 1.0 -> finite-difference Jacobian in the Hamiltonian flow
NPARS = 8

MODE_PLANAR_CONST = 0   # y = (S, V), constant Q = pars[P_A]
MODE_PLANAR_QS = 1      # y = (S, V), Q = singular feedback at S_bar = pars[P_A]
MODE_PLANAR_PIN = 2     # y = (S, V), S frozen, dV = singular feedback flow
MODE_FULL_CONST = 3     # y = (S, B, V), constant Q
MODE_HAM_BACKWARD = 4   # y = (S, V, pS, pV), regularized flow, backward time
MODE_SIGMA = 5          # y = (sigma,), t = V_max - v
MODE_HAM_FORWARD = 6    # y = (S, V, lS, lV), original problem, constant Q

STATUS_T_BOUND = 0
STATUS_EVENT = 1
STATUS_STEP_UNDERFLOW = -1
STATUS_BUFFER_FULL = -2
STATUS_RHS_FAILURE = -3


# ---------------------------------------------------------------------------
# Haldane sums

@maybe_njit(cache=True)
def mu_scalar(terms, S):
    tot = 0.0
    for i in range(terms.shape[0]):
        mb = terms[i, 0]
        K = terms[i, 1]
        L = terms[i, 2]
        tot += mb * S / (K + S + S * S / L)
    return tot


@maybe_njit(cache=True)
def mu_d1_scalar(terms, S):
    tot = 0.0
    for i in range(terms.shape[0]):
        mb = terms[i, 0]
        K = terms[i, 1]
        L = terms[i, 2]
        D = K + S + S * S / L
        tot += mb * (K - S * S / L) / (D * D)
    return tot


@maybe_njit(cache=True)
def mu_d2_scalar(terms, S):
    tot = 0.0
    for i in range(terms.shape[0]):
        mb = terms[i, 0]
        K = terms[i, 1]
        L = terms[i, 2]
        D = K + S + S * S / L
        N = K - S * S / L
        Dp = 1.0 + 2.0 * S / L
        tot += mb * (-2.0 * S / L * D - 2.0 * N * Dp) / (D * D * D)
    return tot


@maybe_njit(cache=True)
def mu_array(terms, S, out):
    for k in range(S.shape[0]):
        out[k] = mu_scalar(terms, S[k])


@maybe_njit(cache=True)
def mu_d1_array(terms, S, out):
    for k in range(S.shape[0]):
        out[k] = mu_d1_scalar(terms, S[k])


@maybe_njit(cache=True)
def mu_d2_array(terms, S, out):
    for k in range(S.shape[0]):
        out[k] = mu_d2_scalar(terms, S[k])


# ---------------------------------------------------------------------------
# right-hand sides

@maybe_njit(cache=True)
def singular_flow(terms, S_in, M0, S_bar, V):
    return mu_scalar(terms, S_bar) * (M0 / (S_in - S_bar) + V)


@maybe_njit(cache=True)
def rhs(mode, t, y, terms, pars, out):
    """Evaluate dy/dt for the selected mode.  Returns 0, or 1 on a
    degenerate adjoint (maximizer of the regularized Hamiltonian undefined).
    """
    S_in = pars[P_SIN]
    M0 = pars[P_M0]

    if mode == MODE_PLANAR_CONST or mode == MODE_PLANAR_QS:
        S = y[0]
        V = y[1]
        if mode == MODE_PLANAR_CONST:
            Q = pars[P_A]
        else:
            Q = singular_flow(terms, S_in, M0, pars[P_A], V)
            if Q > pars[P_B]:
                Q = pars[P_B]
            if Q < 0.0:
                Q = 0.0
        X = M0 / V + S_in - S
        out[0] = -mu_scalar(terms, S) * X + (Q / V) * (S_in - S)
        out[1] = Q
        return 0

    if mode == MODE_PLANAR_PIN:
        V = y[1]
        Q = singular_flow(terms, S_in, M0, pars[P_A], V)
        if Q > pars[P_B]:
            Q = pars[P_B]
        out[0] = 0.0
        out[1] = Q
        return 0

    if mode == MODE_FULL_CONST:
        S = y[0]
        B = y[1]
        V = y[2]
        Q = pars[P_A]
        yld = pars[P_Y]
        m = mu_scalar(terms, S)
        out[0] = -m * B / yld + (Q / V) * (S_in - S)
        out[1] = m * B - (Q / V) * B
        out[2] = Q
        return 0

    if mode == MODE_HAM_BACKWARD:
        S = y[0]
        V = y[1]
        pS = y[2]
        pV = y[3]
        eps = pars[P_A]
        half_q = 0.5 * pars[P_QMAX]
        X = M0 / V + S_in - S
        m = mu_scalar(terms, S)
        G1S = half_q * (S_in - S) / V
        FS = -m * X + G1S
        g1 = pS * G1S + pV * half_q
        g2 = pS
        rho = math.sqrt(g1 * g1 + (eps * g2) * (eps * g2))
        if rho < 1e-30:
            out[0] = np.nan
            return 1
        u1 = g1 / rho
        u2 = eps * g2 / rho
        if pars[P_FDJAC] != 0.0:
            hS = 1e-6 * max(1.0, abs(S))
            hV = 1e-6 * max(1.0, abs(V))
            Xp = M0 / V + S_in - (S + hS)
            Xm = M0 / V + S_in - (S - hS)
            FSp = -mu_scalar(terms, S + hS) * Xp + half_q * (S_in - (S + hS)) / V
            FSm = -mu_scalar(terms, S - hS) * Xm + half_q * (S_in - (S - hS)) / V
            dFS_dS = (FSp - FSm) / (2.0 * hS)
            Xp = M0 / (V + hV) + S_in - S
            Xm = M0 / (V - hV) + S_in - S
            FSp = -m * Xp + half_q * (S_in - S) / (V + hV)
            FSm = -m * Xm + half_q * (S_in - S) / (V - hV)
            dFS_dV = (FSp - FSm) / (2.0 * hV)
            dG1S_dS = (half_q * (S_in - (S + hS)) / V
                       - half_q * (S_in - (S - hS)) / V) / (2.0 * hS)
            dG1S_dV = (half_q * (S_in - S) / (V + hV)
                       - half_q * (S_in - S) / (V - hV)) / (2.0 * hV)
        else:
            md = mu_d1_scalar(terms, S)
            dFS_dS = -md * X + m - half_q / V
            dFS_dV = m * M0 / (V * V) - G1S / V
            dG1S_dS = -half_q / V
            dG1S_dV = -G1S / V
        out[0] = -(FS + G1S * u1 + eps * u2)
        out[1] = -(half_q * (1.0 + u1))
        out[2] = pS * (dFS_dS + u1 * dG1S_dS)
        out[3] = pS * (dFS_dV + u1 * dG1S_dV)
        return 0

    if mode == MODE_SIGMA:
        sig = y[0]
        v = pars[P_B] - t
        m = mu_scalar(terms, sig)
        out[0] = (m / pars[P_QMAX]) * (M0 / v + S_in - sig) - (S_in - sig) / v
        return 0

    # MODE_HAM_FORWARD
    S = y[0]
    V = y[1]
    lS = y[2]
    Q = pars[P_A]
    X = M0 / V + S_in - S
    m = mu_scalar(terms, S)
    md = mu_d1_scalar(terms, S)
    out[0] = -m * X + (Q / V) * (S_in - S)
    out[1] = Q
    out[2] = lS * (md * X - m + Q / V)
    out[3] = lS * (-m * M0 + Q * (S_in - S)) / (V * V)
    return 0


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) with dense output and level-crossing events

_C = np.array([0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0])
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0,
     -212.0 / 729.0, 0.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
     -5103.0 / 18656.0, 0.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
     11.0 / 84.0, 0.0],
])
_B = np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0,
               -2187.0 / 6784.0, 11.0 / 84.0, 0.0])
_E = np.array([71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
               -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0])
# quartic dense-output matrix for the tableau above
_P = np.array([
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0,
     -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0,
     87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0,
     -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0,
     701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0,
     -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0,
     69997945.0 / 29380423.0],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


@maybe_njit(cache=True)
def _dense_eval(y_old, h, K, theta, out):
    n = y_old.shape[0]
    th2 = theta * theta
    for c in range(n):
        acc = 0.0
        for s in range(7):
            q = (_P[s, 0] * theta + _P[s, 1] * th2 + _P[s, 2] * th2 * theta
                 + _P[s, 3] * th2 * th2)
            acc += K[s, c] * q
        out[c] = y_old[c] + h * acc


@maybe_njit(cache=True)
def _dense_eval_component(y_old, h, K, theta, idx):
    th2 = theta * theta
    acc = 0.0
    for s in range(7):
        q = (_P[s, 0] * theta + _P[s, 1] * th2 + _P[s, 2] * th2 * theta
             + _P[s, 3] * th2 * th2)
        acc += K[s, idx] * q
    return y_old[idx] + h * acc


@maybe_njit(cache=True)
def _initial_step(mode, t0, y0, f0, t_bound, terms, pars, rtol, atol, max_step):
    n = y0.shape[0]
    d0 = 0.0
    d1 = 0.0
    for c in range(n):
        sc = atol + rtol * abs(y0[c])
        d0 += (y0[c] / sc) ** 2
        d1 += (f0[c] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    span = t_bound - t0
    if h0 > span:
        h0 = span
    y1 = np.empty(n)
    f1 = np.empty(n)
    for c in range(n):
        y1[c] = y0[c] + h0 * f0[c]
    st = rhs(mode, t0 + h0, y1, terms, pars, f1)
    if st != 0:
        return min(h0, max_step)
    d2 = 0.0
    for c in range(n):
        sc = atol + rtol * abs(y0[c])
        d2 += ((f1[c] - f0[c]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    h = min(100.0 * h0, h1)
    if h > max_step:
        h = max_step
    if h > span:
        h = span
    return h


@maybe_njit(cache=True)
def rk45_integrate(mode, terms, pars, t0, y0, t_bound, rtol, atol, max_step,
                   ev_idx, ev_level, ev_dir, ev_tol, t_out, y_out):
    """Adaptive DP5(4) integration recording every accepted step.

    Events are level crossings of single state components, located by
    bisection on the dense-output interpolant to time tolerance ``ev_tol``;
    every event terminates the run.  Returns ``(status, n_samples, event)``
    where ``event`` is the index into ``ev_idx`` of the crossing that fired
    (-1 otherwise) and the first ``n_samples`` rows of ``t_out``/``y_out``
    hold the trajectory, event point included.
    """
    n = y0.shape[0]
    cap = t_out.shape[0]
    n_ev = ev_idx.shape[0]

    t = t0
    y = y0.copy()
    f = np.empty(n)
    st = rhs(mode, t, y, terms, pars, f)
    if st != 0:
        return STATUS_RHS_FAILURE, 0, -1

    t_out[0] = t
    for c in range(n):
        y_out[0, c] = y[c]
    nrec = 1

    if t_bound <= t0:
        return STATUS_T_BOUND, nrec, -1

    h = _initial_step(mode, t0, y0, f, t_bound, terms, pars, rtol, atol, max_step)
    K = np.empty((7, n))
    y_stage = np.empty(n)
    y_new = np.empty(n)
    f_new = np.empty(n)
    err_vec = np.empty(n)
    y_ev = np.empty(n)

    while t < t_bound:
        if h > max_step:
            h = max_step
        if t + h > t_bound:
            h = t_bound - t
        h_min = 10.0 * abs(t) * 2.220446049250313e-16
        if h < h_min or h <= 0.0:
            return STATUS_STEP_UNDERFLOW, nrec, -1

        # stages
        for c in range(n):
            K[0, c] = f[c]
        failed_stage = False
        for s in range(1, 7):
            for c in range(n):
                acc = 0.0
                for ss in range(s):
                    acc += _A[s, ss] * K[ss, c]
                y_stage[c] = y[c] + h * acc
            st = rhs(mode, t + _C[s] * h, y_stage, terms, pars, K[s])
            if st != 0:
                failed_stage = True
                break
        if failed_stage:
            h *= 0.5
            if h < h_min:
                return STATUS_RHS_FAILURE, nrec, -1
            continue

        finite = True
        err = 0.0
        for c in range(n):
            acc = 0.0
            eacc = 0.0
            for s in range(7):
                acc += _B[s] * K[s, c]
                eacc += _E[s] * K[s, c]
            y_new[c] = y[c] + h * acc
            err_vec[c] = h * eacc
            if not math.isfinite(y_new[c]):
                finite = False
        if not finite:
            h *= 0.5
            continue
        # K[6] is f(t+h, y_new) already (FSAL tableau)
        for c in range(n):
            sc = atol + rtol * max(abs(y[c]), abs(y_new[c]))
            err += (err_vec[c] / sc) ** 2
        err = math.sqrt(err / n)

        if err > 1.0:
            fac = _SAFETY * err ** -0.2
            if fac < _MIN_FACTOR:
                fac = _MIN_FACTOR
            h *= fac
            continue

        # accepted
        t_new = t + h

        # event scan on this step
        fired = -1
        theta_best = 2.0
        for e in range(n_ev):
            idx = ev_idx[e]
            lvl = ev_level[e]
            d = ev_dir[e]
            g0 = y[idx] - lvl
            g1 = y_new[idx] - lvl
            up = g0 < 0.0 and g1 >= 0.0
            down = g0 > 0.0 and g1 <= 0.0
            hit = (up and d >= 0.0) or (down and d <= 0.0)
            if not hit:
                continue
            lo = 0.0
            hi = 1.0
            while h * (hi - lo) > ev_tol:
                mid = 0.5 * (lo + hi)
                gm = _dense_eval_component(y, h, K, mid, idx) - lvl
                crossed = (gm >= 0.0) if up else (gm <= 0.0)
                if crossed:
                    hi = mid
                else:
                    lo = mid
            if hi < theta_best:
                theta_best = hi
                fired = e

        if fired >= 0:
            _dense_eval(y, h, K, theta_best, y_ev)
            y_ev[ev_idx[fired]] = ev_level[fired]
            if nrec >= cap:
                return STATUS_BUFFER_FULL, nrec, -1
            t_out[nrec] = t + theta_best * h
            for c in range(n):
                y_out[nrec, c] = y_ev[c]
            nrec += 1
            return STATUS_EVENT, nrec, fired

        if nrec >= cap:
            return STATUS_BUFFER_FULL, nrec, -1
        t_out[nrec] = t_new
        for c in range(n):
            y_out[nrec, c] = y_new[c]
        nrec += 1

        t = t_new
        for c in range(n):
            y[c] = y_new[c]
            f[c] = K[6, c]

        if err == 0.0:
            fac = _MAX_FACTOR
        else:
            fac = _SAFETY * err ** -0.2
            if fac > _MAX_FACTOR:
                fac = _MAX_FACTOR
            if fac < _MIN_FACTOR:
                fac = _MIN_FACTOR
        h *= fac

    return STATUS_T_BOUND, nrec, -1


# ---------------------------------------------------------------------------
# polyline segment intersections (normalized coordinates)

_CHUNK = 64


@maybe_njit(cache=True)
def polyline_intersections(ax, ay, bx, by, snap, out):
    """All transversal crossings between two polylines.

    ``out`` rows receive ``[i, j, ti, tj, px, py]`` with segment indices,
    parameters along each segment and the crossing point.  Near-parallel
    pairs (|denominator| <= snap * bbox scale) are skipped.  Returns the
    number of crossings found, or -1 if ``out`` is too small.
    """
    na = ax.shape[0] - 1
    nb = bx.shape[0] - 1
    cap = out.shape[0]
    count = 0

    nca = (na + _CHUNK - 1) // _CHUNK
    ncb = (nb + _CHUNK - 1) // _CHUNK
    a_lo_x = np.empty(nca)
    a_hi_x = np.empty(nca)
    a_lo_y = np.empty(nca)
    a_hi_y = np.empty(nca)
    for c in range(nca):
        s0 = c * _CHUNK
        s1 = min(na, s0 + _CHUNK)
        lx = hx = ax[s0]
        ly = hy = ay[s0]
        for k in range(s0, s1 + 1):
            lx = min(lx, ax[k])
            hx = max(hx, ax[k])
            ly = min(ly, ay[k])
            hy = max(hy, ay[k])
        a_lo_x[c] = lx
        a_hi_x[c] = hx
        a_lo_y[c] = ly
        a_hi_y[c] = hy
    b_lo_x = np.empty(ncb)
    b_hi_x = np.empty(ncb)
    b_lo_y = np.empty(ncb)
    b_hi_y = np.empty(ncb)
    for c in range(ncb):
        s0 = c * _CHUNK
        s1 = min(nb, s0 + _CHUNK)
        lx = hx = bx[s0]
        ly = hy = by[s0]
        for k in range(s0, s1 + 1):
            lx = min(lx, bx[k])
            hx = max(hx, bx[k])
            ly = min(ly, by[k])
            hy = max(hy, by[k])
        b_lo_x[c] = lx
        b_hi_x[c] = hx
        b_lo_y[c] = ly
        b_hi_y[c] = hy

    for ca in range(nca):
        for cb in range(ncb):
            if (a_lo_x[ca] > b_hi_x[cb] or b_lo_x[cb] > a_hi_x[ca]
                    or a_lo_y[ca] > b_hi_y[cb] or b_lo_y[cb] > a_hi_y[ca]):
                continue
            i0 = ca * _CHUNK
            i1 = min(na, i0 + _CHUNK)
            j0 = cb * _CHUNK
            j1 = min(nb, j0 + _CHUNK)
            for i in range(i0, i1):
                x1 = ax[i]
                y1 = ay[i]
                x2 = ax[i + 1]
                y2 = ay[i + 1]
                sxlo = min(x1, x2)
                sxhi = max(x1, x2)
                sylo = min(y1, y2)
                syhi = max(y1, y2)
                for j in range(j0, j1):
                    x3 = bx[j]
                    y3 = by[j]
                    x4 = bx[j + 1]
                    y4 = by[j + 1]
                    if (sxlo > max(x3, x4) or min(x3, x4) > sxhi
                            or sylo > max(y3, y4) or min(y3, y4) > syhi):
                        continue
                    d1x = x2 - x1
                    d1y = y2 - y1
                    d2x = x4 - x3
                    d2y = y4 - y3
                    den = d1x * d2y - d1y * d2x
                    scale = (abs(d1x) + abs(d1y)) * (abs(d2x) + abs(d2y))
                    if abs(den) <= snap * scale:
                        continue
                    rx = x3 - x1
                    ry = y3 - y1
                    ti = (rx * d2y - ry * d2x) / den
                    tj = (rx * d1y - ry * d1x) / den
                    if (-snap <= ti <= 1.0 + snap
                            and -snap <= tj <= 1.0 + snap):
                        if count >= cap:
                            return -1
                        out[count, 0] = i
                        out[count, 1] = j
                        out[count, 2] = ti
                        out[count, 3] = tj
                        out[count, 4] = x1 + ti * d1x
                        out[count, 5] = y1 + ti * d1y
                        count += 1
    return count
