"""Hot numeric kernels: the closed-loop tick loop and fine-grid plant stepping.

Kernels are written as scalar-unrolled loops so the same source runs either
JIT-compiled through numba or as plain Python. Selection happens at import
time: numba is used when importable unless the environment variable
``TIVALOOP_NUMBA`` is set to ``0``/``false``/``off``. ``benchmarks/`` times
both paths.
"""

import os


def _numba_enabled() -> bool:
    flag = os.environ.get("TIVALOOP_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _numba_enabled()

if USE_NUMBA:
    from numba import njit

    def _maybe_jit(fn):
        return njit(cache=True)(fn)
else:
    def _maybe_jit(fn):
        return fn


@_maybe_jit
def rk4_step(a, b, x, u, dt, out):
    """One classical Runge-Kutta step of the 4-state plant, ZOH input."""
    a00 = a[0, 0]; a01 = a[0, 1]; a02 = a[0, 2]; a03 = a[0, 3]
    a10 = a[1, 0]; a11 = a[1, 1]; a12 = a[1, 2]; a13 = a[1, 3]
    a20 = a[2, 0]; a21 = a[2, 1]; a22 = a[2, 2]; a23 = a[2, 3]
    a30 = a[3, 0]; a31 = a[3, 1]; a32 = a[3, 2]; a33 = a[3, 3]
    b0 = b[0]; b1 = b[1]; b2 = b[2]; b3 = b[3]
    y0 = x[0]; y1 = x[1]; y2 = x[2]; y3 = x[3]

    k10 = a00 * y0 + a01 * y1 + a02 * y2 + a03 * y3 + b0 * u
    k11 = a10 * y0 + a11 * y1 + a12 * y2 + a13 * y3 + b1 * u
    k12 = a20 * y0 + a21 * y1 + a22 * y2 + a23 * y3 + b2 * u
    k13 = a30 * y0 + a31 * y1 + a32 * y2 + a33 * y3 + b3 * u

    h2 = 0.5 * dt
    z0 = y0 + h2 * k10; z1 = y1 + h2 * k11; z2 = y2 + h2 * k12; z3 = y3 + h2 * k13
    k20 = a00 * z0 + a01 * z1 + a02 * z2 + a03 * z3 + b0 * u
    k21 = a10 * z0 + a11 * z1 + a12 * z2 + a13 * z3 + b1 * u
    k22 = a20 * z0 + a21 * z1 + a22 * z2 + a23 * z3 + b2 * u
    k23 = a30 * z0 + a31 * z1 + a32 * z2 + a33 * z3 + b3 * u

    z0 = y0 + h2 * k20; z1 = y1 + h2 * k21; z2 = y2 + h2 * k22; z3 = y3 + h2 * k23
    k30 = a00 * z0 + a01 * z1 + a02 * z2 + a03 * z3 + b0 * u
    k31 = a10 * z0 + a11 * z1 + a12 * z2 + a13 * z3 + b1 * u
    k32 = a20 * z0 + a21 * z1 + a22 * z2 + a23 * z3 + b2 * u
    k33 = a30 * z0 + a31 * z1 + a32 * z2 + a33 * z3 + b3 * u

    z0 = y0 + dt * k30; z1 = y1 + dt * k31; z2 = y2 + dt * k32; z3 = y3 + dt * k33
    k40 = a00 * z0 + a01 * z1 + a02 * z2 + a03 * z3 + b0 * u
    k41 = a10 * z0 + a11 * z1 + a12 * z2 + a13 * z3 + b1 * u
    k42 = a20 * z0 + a21 * z1 + a22 * z2 + a23 * z3 + b2 * u
    k43 = a30 * z0 + a31 * z1 + a32 * z2 + a33 * z3 + b3 * u

    h6 = dt / 6.0
    out[0] = y0 + h6 * (k10 + 2.0 * k20 + 2.0 * k30 + k40)
    out[1] = y1 + h6 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
    out[2] = y2 + h6 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
    out[3] = y3 + h6 * (k13 + 2.0 * k23 + 2.0 * k33 + k43)


@_maybe_jit
def open_loop(ad, bd, a, b, use_rk4, dt, u, x):
    """Fill x[1:] from x[0] under the per-step ZOH rates u[i] on [t_i, t_{i+1})."""
    n = u.shape[0] - 1
    scratch = x[0].copy()
    for i in range(n):
        ui = u[i]
        if use_rk4 == 1:
            scratch[0] = x[i, 0]; scratch[1] = x[i, 1]
            scratch[2] = x[i, 2]; scratch[3] = x[i, 3]
            rk4_step(a, b, scratch, ui, dt, x[i + 1])
        else:
            y0 = x[i, 0]; y1 = x[i, 1]; y2 = x[i, 2]; y3 = x[i, 3]
            x[i + 1, 0] = ad[0, 0] * y0 + ad[0, 1] * y1 + ad[0, 2] * y2 + ad[0, 3] * y3 + bd[0] * ui
            x[i + 1, 1] = ad[1, 0] * y0 + ad[1, 1] * y1 + ad[1, 2] * y2 + ad[1, 3] * y3 + bd[1] * ui
            x[i + 1, 2] = ad[2, 0] * y0 + ad[2, 1] * y1 + ad[2, 2] * y2 + ad[2, 3] * y3 + bd[2] * ui
            x[i + 1, 3] = ad[3, 0] * y0 + ad[3, 1] * y1 + ad[3, 2] * y2 + ad[3, 3] * y3 + bd[3] * ui


@_maybe_jit
def closed_loop(ad, bd, a, b, use_rk4, n_sub, dt_sub,
                n_ctrl, n_total,
                e0, emax, ec50, gamma,
                alpha,
                eta, k_err, k_u, em, u_min, u_max, dt_ctrl, target,
                sign, antiwindup, dead_zone, closing_eps, closing_band,
                disturbance, noise,
                xs, us, uraws, es, rs, js,
                bis_clean, bis_dist, bis_meas, alphas):
    """Full closed-loop run at the controller period.

    Record n holds the plant state at tick n, the BIS channels derived from
    it, the controller diagnostics, the consequent matrix *used* at that tick,
    and the infusion held over [t_n, t_{n+1}). Ticks at or beyond n_ctrl coast
    with zero infusion and frozen parameters. Returns -1 on completion, or the
    tick index at which the parameter matrix diverged (records up to and
    including that tick are valid).
    """
    ec50_pow = ec50 ** gamma
    y0 = xs[0, 0]; y1 = xs[0, 1]; y2 = xs[0, 2]; y3 = xs[0, 3]
    last_abs_e = 0.0

    for n in range(n_total + 1):
        xs[n, 0] = y0; xs[n, 1] = y1; xs[n, 2] = y2; xs[n, 3] = y3

        ce = y3
        cg = ce ** gamma
        clean = e0 - emax * cg / (cg + ec50_pow)
        disturbed = clean + disturbance[n]
        meas = disturbed + noise[n]
        if meas < 0.0:
            meas = 0.0
        elif meas > 100.0:
            meas = 100.0
        bis_clean[n] = clean
        bis_dist[n] = disturbed
        bis_meas[n] = meas

        e = (target - meas) / 100.0
        g_ze = max(0.0, 1.0 - abs(e) / em)
        g_ne = min(1.0, max(0.0, -e / em))
        g_po = min(1.0, max(0.0, e / em))
        u_raw = (g_ne * (alpha[0, 0] * e + alpha[0, 1])
                 + g_ze * (alpha[1, 0] * e + alpha[1, 1])
                 + g_po * (alpha[2, 0] * e + alpha[2, 1]))
        u = min(u_max, max(u_min, u_raw))
        if n >= n_ctrl and n_ctrl < n_total:
            # coasting (or controller disabled): no drug is delivered
            u = 0.0
        r = e
        j = 0.5 * k_err * r * r + 0.5 * k_u * u * u

        us[n] = u
        uraws[n] = u_raw
        es[n] = e
        rs[n] = r
        js[n] = j
        alphas[n, 0] = alpha[0, 0]; alphas[n, 1] = alpha[1, 0]; alphas[n, 2] = alpha[2, 0]
        alphas[n, 3] = alpha[0, 1]; alphas[n, 4] = alpha[1, 1]; alphas[n, 5] = alpha[2, 1]

        if n < n_ctrl:
            g = sign * k_err * r + k_u * u
            closing = abs(e) < closing_band and (abs(e) - last_abs_e) < -closing_eps
            frozen = closing or abs(e) < dead_zone or (
                antiwindup and ((u_raw >= u_max and g < 0.0)
                                or (u_raw <= u_min and g > 0.0)))
            if not frozen:
                coef = eta * dt_ctrl * g
                alpha[0, 0] = alpha[0, 0] - coef * (g_ne * e)
                alpha[0, 1] = alpha[0, 1] - coef * (g_ne * 1.0)
                alpha[1, 0] = alpha[1, 0] - coef * (g_ze * e)
                alpha[1, 1] = alpha[1, 1] - coef * (g_ze * 1.0)
                alpha[2, 0] = alpha[2, 0] - coef * (g_po * e)
                alpha[2, 1] = alpha[2, 1] - coef * (g_po * 1.0)
                ok = True
                for i in range(3):
                    for jj in range(2):
                        v = alpha[i, jj]
                        if v != v or v > 1e6 or v < -1e6:
                            ok = False
                if not ok:
                    return n

        last_abs_e = abs(e)
        if n == n_total:
            break

        for _ in range(n_sub):
            if use_rk4 == 1:
                a00 = a[0, 0]; a01 = a[0, 1]; a02 = a[0, 2]; a03 = a[0, 3]
                a10 = a[1, 0]; a11 = a[1, 1]; a12 = a[1, 2]; a13 = a[1, 3]
                a20 = a[2, 0]; a21 = a[2, 1]; a22 = a[2, 2]; a23 = a[2, 3]
                a30 = a[3, 0]; a31 = a[3, 1]; a32 = a[3, 2]; a33 = a[3, 3]
                b0 = b[0]; b1 = b[1]; b2 = b[2]; b3 = b[3]

                k10 = a00 * y0 + a01 * y1 + a02 * y2 + a03 * y3 + b0 * u
                k11 = a10 * y0 + a11 * y1 + a12 * y2 + a13 * y3 + b1 * u
                k12 = a20 * y0 + a21 * y1 + a22 * y2 + a23 * y3 + b2 * u
                k13 = a30 * y0 + a31 * y1 + a32 * y2 + a33 * y3 + b3 * u

                h2 = 0.5 * dt_sub
                z0 = y0 + h2 * k10; z1 = y1 + h2 * k11
                z2 = y2 + h2 * k12; z3 = y3 + h2 * k13
                k20 = a00 * z0 + a01 * z1 + a02 * z2 + a03 * z3 + b0 * u
                k21 = a10 * z0 + a11 * z1 + a12 * z2 + a13 * z3 + b1 * u
                k22 = a20 * z0 + a21 * z1 + a22 * z2 + a23 * z3 + b2 * u
                k23 = a30 * z0 + a31 * z1 + a32 * z2 + a33 * z3 + b3 * u

                z0 = y0 + h2 * k20; z1 = y1 + h2 * k21
                z2 = y2 + h2 * k22; z3 = y3 + h2 * k23
                k30 = a00 * z0 + a01 * z1 + a02 * z2 + a03 * z3 + b0 * u
                k31 = a10 * z0 + a11 * z1 + a12 * z2 + a13 * z3 + b1 * u
                k32 = a20 * z0 + a21 * z1 + a22 * z2 + a23 * z3 + b2 * u
                k33 = a30 * z0 + a31 * z1 + a32 * z2 + a33 * z3 + b3 * u

                z0 = y0 + dt_sub * k30; z1 = y1 + dt_sub * k31
                z2 = y2 + dt_sub * k32; z3 = y3 + dt_sub * k33
                k40 = a00 * z0 + a01 * z1 + a02 * z2 + a03 * z3 + b0 * u
                k41 = a10 * z0 + a11 * z1 + a12 * z2 + a13 * z3 + b1 * u
                k42 = a20 * z0 + a21 * z1 + a22 * z2 + a23 * z3 + b2 * u
                k43 = a30 * z0 + a31 * z1 + a32 * z2 + a33 * z3 + b3 * u

                h6 = dt_sub / 6.0
                y0 = y0 + h6 * (k10 + 2.0 * k20 + 2.0 * k30 + k40)
                y1 = y1 + h6 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
                y2 = y2 + h6 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
                y3 = y3 + h6 * (k13 + 2.0 * k23 + 2.0 * k33 + k43)
            else:
                t0 = ad[0, 0] * y0 + ad[0, 1] * y1 + ad[0, 2] * y2 + ad[0, 3] * y3 + bd[0] * u
                t1 = ad[1, 0] * y0 + ad[1, 1] * y1 + ad[1, 2] * y2 + ad[1, 3] * y3 + bd[1] * u
                t2 = ad[2, 0] * y0 + ad[2, 1] * y1 + ad[2, 2] * y2 + ad[2, 3] * y3 + bd[2] * u
                t3 = ad[3, 0] * y0 + ad[3, 1] * y1 + ad[3, 2] * y2 + ad[3, 3] * y3 + bd[3] * u
                y0 = t0; y1 = t1; y2 = t2; y3 = t3

    return -1
