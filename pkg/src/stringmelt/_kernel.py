"""Compiled Dormand-Prince 5(4) propagation of controlled device dynamics.

Integrates, in the idle rotating frame and without rotating-wave
approximation,

    i dU/dt        = H(t) U,
    i d(dU_p)/dt   = (dH/dp) U + H(t) dU_p,
    d(leak)/dt     = Tr(P_c U^dag P_d U P_c),

for a batch of parameter derivatives, on one shared adaptive grid.  The
wide state [U | dU_1 | ... | dU_nd] is stored as a (D, (1+nd) D) complex
matrix.  Error control is per unit step over the U block only, so the
accepted grid is independent of which derivatives ride along (exact
derivative-batching invariance) and the requested tolerances bound the
accumulated error at the final time.

All matrix products are explicit loops with a fixed summation order, so
results are bit-reproducible on one platform.
"""

import numpy as np
from numba import njit

# Dormand-Prince 5(4) tableau (the classic ode45 pair, FSAL)
_C_NODES = np.array([0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0])
_A_TAB = np.zeros((7, 7))
_A_TAB[1, 0] = 1.0 / 5
_A_TAB[2, :2] = (3.0 / 40, 9.0 / 40)
_A_TAB[3, :3] = (44.0 / 45, -56.0 / 15, 32.0 / 9)
_A_TAB[4, :4] = (19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729)
_A_TAB[5, :5] = (9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656)
_A_TAB[6, :6] = (35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84)
_B5 = np.array([35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0])
_B4 = np.array(
    [5179.0 / 57600, 0.0, 7571.0 / 16695, 393.0 / 640, -92097.0 / 339200, 187.0 / 2100, 1.0 / 40]
)
_E_TAB = _B5 - _B4

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2
STATUS_RECORD_OVERFLOW = 3


@njit(cache=True)
def _eval_fields(
    t,
    params,
    param_off,
    carrier_ang,
    bound,
    tau_r,
    tau_c,
    omega_m,
    sat_mode,
    fvals,
    gpref,
    sinbuf,
    cosbuf,
):
    """Per-channel field values and the shared gradient prefactor.

    fvals[c] = window * cos(carrier t) * S(h_c);
    gpref[c] = window * cos(carrier t) * S'(h_c).
    sinbuf/cosbuf cache sin and cos of each term's argument.
    """
    n_channels = param_off.size - 1
    tc = t
    if tc > tau_c:
        tc = tau_c
    if tc < 0.0:
        tc = 0.0
    for c in range(n_channels):
        nterms = (param_off[c + 1] - param_off[c]) // 3
        h = 0.0
        for n in range(nterms):
            base = param_off[c] + 3 * n
            arg = params[base + 1] * tc + params[base + 2]
            s = np.sin(arg)
            co = np.cos(arg)
            sinbuf[c, n] = s
            cosbuf[c, n] = co
            h += params[base] * s
        tr = tau_r[c]
        if tc <= tr:
            win = 0.5 * (1.0 - np.cos(np.pi * tc / tr)) * omega_m[c]
        elif tc >= tau_c - tr:
            win = 0.5 * (1.0 - np.cos(np.pi * (tau_c - tc) / tr)) * omega_m[c]
        else:
            win = omega_m[c]
        w = win * np.cos(carrier_ang[c] * tc)
        b = bound[c]
        if sat_mode == 0:
            th = np.tanh(2.0 * h / b)
            sat = b * th
            satd = 2.0 * (1.0 - th * th)
        else:
            e = np.exp(-4.0 * h / b)
            denom = 1.0 - 3.0 * e
            sat = -b - 2.0 * b / denom
            satd = 24.0 * e / (denom * denom)
        fvals[c] = w * sat
        gpref[c] = w * satd


@njit(cache=True)
def _rhs(
    t,
    Y,
    K,
    kleak,
    H0,
    S_stack,
    A_stack,
    has_A,
    wfreq,
    params,
    param_off,
    carrier_ang,
    bound,
    tau_r,
    tau_c,
    omega_m,
    sat_mode,
    dpar,
    dpar_channel,
    do_leak,
    pd_idx,
    pd_val,
    comp_idx,
    Hwork,
    OPwork,
    OUwork,
    fvals,
    gpref,
    sinbuf,
    cosbuf,
):
    """Write -i H Y (plus derivative couplings) into K, leak rates into kleak."""
    D = H0.shape[0]
    W = Y.shape[1]
    n_channels = param_off.size - 1
    nd = dpar.size

    _eval_fields(
        t, params, param_off, carrier_ang, bound, tau_r, tau_c, omega_m,
        sat_mode, fvals, gpref, sinbuf, cosbuf,
    )

    # channel operators at time t and the total Hamiltonian
    for c in range(n_channels):
        ph = np.cos(wfreq[c] * t) + 1j * np.sin(wfreq[c] * t)
        for i in range(D):
            for j in range(D):
                val = S_stack[c, i, j]
                if has_A[c] != 0:
                    val = val + ph * A_stack[c, i, j] + np.conj(ph * A_stack[c, j, i])
                OPwork[c, i, j] = val
    for i in range(D):
        for j in range(D):
            acc = H0[i, j]
            for c in range(n_channels):
                acc = acc + fvals[c] * OPwork[c, i, j]
            Hwork[i, j] = acc

    # K = -i H Y over the whole wide matrix.  Large derivative-free systems
    # go through BLAS; anything carrying derivative blocks uses the fixed
    # summation order so that batching stays bit-exact.
    if nd == 0 and D >= 12:
        for i in range(D):
            for j in range(D):
                Hwork[i, j] *= -1j
        K[:, :] = np.dot(Hwork, Y)
    else:
        for i in range(D):
            for col in range(W):
                K[i, col] = 0.0
            for k in range(D):
                hval = Hwork[i, k]
                if hval != 0.0:
                    for col in range(W):
                        K[i, col] += hval * Y[k, col]
            for col in range(W):
                K[i, col] *= -1j

    # inhomogeneous derivative terms: -i (df/dp) O_c U
    if nd > 0:
        for c in range(n_channels):
            for i in range(D):
                for j in range(D):
                    acc = 0.0 + 0.0j
                    for k in range(D):
                        acc += OPwork[c, i, k] * Y[k, j]
                    OUwork[c, i, j] = acc
        for b in range(nd):
            p = dpar[b]
            c = dpar_channel[b]
            q = p - param_off[c]
            n = q // 3
            comp = q - 3 * n
            base = param_off[c] + 3 * n
            if comp == 0:
                g = gpref[c] * sinbuf[c, n]
            elif comp == 1:
                g = gpref[c] * params[base] * t * cosbuf[c, n]
            else:
                g = gpref[c] * params[base] * cosbuf[c, n]
            off = (1 + b) * D
            if g != 0.0:
                for i in range(D):
                    for j in range(D):
                        K[i, off + j] += -1j * g * OUwork[c, i, j]

    # leakage integrand and its parameter derivatives
    if do_leak != 0:
        acc0 = 0.0
        for jj in range(comp_idx.size):
            j = comp_idx[jj]
            for kk in range(pd_idx.size):
                i = pd_idx[kk]
                u = Y[i, j]
                acc0 += pd_val[kk] * (u.real * u.real + u.imag * u.imag)
        kleak[0] = acc0
        for b in range(nd):
            off = (1 + b) * D
            accb = 0.0
            for jj in range(comp_idx.size):
                j = comp_idx[jj]
                for kk in range(pd_idx.size):
                    i = pd_idx[kk]
                    u = Y[i, j]
                    du = Y[i, off + j]
                    accb += pd_val[kk] * (u.real * du.real + u.imag * du.imag)
            kleak[1 + b] = 2.0 * accb


@njit(cache=True)
def dp5_propagate(
    H0,
    S_stack,
    A_stack,
    has_A,
    wfreq,
    params,
    param_off,
    carrier_ang,
    bound,
    tau_r,
    tau_c,
    omega_m,
    sat_mode,
    dpar,
    dpar_channel,
    do_leak,
    pd_idx,
    pd_val,
    comp_idx,
    t_end,
    rtol,
    atol,
    h_init,
    max_steps,
    c_nodes,
    a_tab,
    b5,
    e_tab,
    replay,
    step_record,
):
    """Adaptive propagation from t=0 to t_end.  Returns (Y, leak, stats).

    stats = (status, accepted, rejected).  Error control is per unit step
    on the propagator block, so rtol/atol bound the accumulated error.

    A non-empty `replay` array bypasses the error control and walks that
    exact sequence of step sizes (used for finite-difference checks where
    both evaluations must share one grid).  A non-empty `step_record`
    buffer collects the accepted step sizes.
    """
    D = H0.shape[0]
    nd = dpar.size
    W = (1 + nd) * D

    Y = np.zeros((D, W), dtype=np.complex128)
    for i in range(D):
        Y[i, i] = 1.0
    leak = np.zeros(1 + nd)

    K = np.zeros((7, D, W), dtype=np.complex128)
    kleak = np.zeros((7, 1 + nd))
    Ytmp = np.zeros((D, W), dtype=np.complex128)
    Y5 = np.zeros((D, W), dtype=np.complex128)
    leak5 = np.zeros(1 + nd)

    n_channels = param_off.size - 1
    Hwork = np.zeros((D, D), dtype=np.complex128)
    OPwork = np.zeros((n_channels, D, D), dtype=np.complex128)
    OUwork = np.zeros((n_channels, D, D), dtype=np.complex128)
    fvals = np.zeros(n_channels)
    gpref = np.zeros(n_channels)
    max_terms = 0
    for c in range(n_channels):
        nt = (param_off[c + 1] - param_off[c]) // 3
        if nt > max_terms:
            max_terms = nt
    sinbuf = np.zeros((n_channels, max_terms))
    cosbuf = np.zeros((n_channels, max_terms))

    t = 0.0
    h = h_init
    h_min = 1e-13 * t_end
    accepted = 0
    rejected = 0
    status = STATUS_OK
    use_replay = replay.size > 0
    do_record = step_record.size > 0

    _rhs(
        t, Y, K[0], kleak[0], H0, S_stack, A_stack, has_A, wfreq, params,
        param_off, carrier_ang, bound, tau_r, tau_c, omega_m, sat_mode,
        dpar, dpar_channel, do_leak, pd_idx, pd_val, comp_idx,
        Hwork, OPwork, OUwork, fvals, gpref, sinbuf, cosbuf,
    )

    while t < t_end * (1.0 - 1e-14):
        if accepted + rejected >= max_steps:
            status = STATUS_MAX_STEPS
            break
        if use_replay:
            if accepted >= replay.size:
                break
            h = replay[accepted]
        else:
            if h > t_end - t:
                h = t_end - t
        if h < h_min:
            status = STATUS_STEP_UNDERFLOW
            break

        for s in range(1, 7):
            for i in range(D):
                for col in range(W):
                    acc = Y[i, col]
                    for j in range(s):
                        aij = a_tab[s, j]
                        if aij != 0.0:
                            acc = acc + h * aij * K[j, i, col]
                    Ytmp[i, col] = acc
            _rhs(
                t + c_nodes[s] * h, Ytmp, K[s], kleak[s], H0, S_stack, A_stack,
                has_A, wfreq, params, param_off, carrier_ang, bound, tau_r,
                tau_c, omega_m, sat_mode, dpar, dpar_channel, do_leak,
                pd_idx, pd_val, comp_idx, Hwork, OPwork, OUwork, fvals,
                gpref, sinbuf, cosbuf,
            )

        for i in range(D):
            for col in range(W):
                acc = Y[i, col]
                for s in range(7):
                    if b5[s] != 0.0:
                        acc = acc + h * b5[s] * K[s, i, col]
                Y5[i, col] = acc
        for b in range(1 + nd):
            acc = leak[b]
            for s in range(7):
                if b5[s] != 0.0:
                    acc = acc + h * b5[s] * kleak[s, b]
            leak5[b] = acc

        if use_replay:
            enorm = 0.0
        else:
            # error per unit step, measured on the propagator block only
            err_sq = 0.0
            scale_t = h / t_end
            for i in range(D):
                for col in range(D):
                    e = 0.0 + 0.0j
                    for s in range(7):
                        if e_tab[s] != 0.0:
                            e = e + e_tab[s] * K[s, i, col]
                    emag = h * np.abs(e)
                    y0 = np.abs(Y[i, col])
                    y1 = np.abs(Y5[i, col])
                    ymax = y0 if y0 > y1 else y1
                    sc = (atol + rtol * ymax) * scale_t
                    r = emag / sc
                    err_sq += r * r
            enorm = np.sqrt(err_sq / (D * D))

            if not np.isfinite(enorm):
                rejected += 1
                h *= 0.2
                continue

        if enorm <= 1.0:
            if do_record:
                if accepted >= step_record.size:
                    status = STATUS_RECORD_OVERFLOW
                    break
                step_record[accepted] = h
            t += h
            for i in range(D):
                for col in range(W):
                    Y[i, col] = Y5[i, col]
                    K[0, i, col] = K[6, i, col]
            for b in range(1 + nd):
                leak[b] = leak5[b]
                kleak[0, b] = kleak[6, b]
            accepted += 1
        else:
            rejected += 1

        if not use_replay:
            if enorm > 1e-30:
                fac = 0.9 * enorm ** -0.25
            else:
                fac = 5.0
            if fac < 0.2:
                fac = 0.2
            elif fac > 5.0:
                fac = 5.0
            h *= fac

    return Y, leak, status, accepted, rejected


def butcher_tables():
    """The tableau arrays handed to the kernel (shared by the numpy engine)."""
    return _C_NODES, _A_TAB, _B5, _E_TAB
