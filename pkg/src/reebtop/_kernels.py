"""Compiled kernels: defining functions, flow fields and the adaptive integrator.

Bodies are passed to the kernels as a packed tuple
``(kind, base_kind, scal, mat, tc, tk, tp)``:

* ``kind``/``base_kind`` are the integer codes below (``base_kind`` is only
  read for radial graphs),
* ``scal`` holds scalar parameters: ``[p | q | beta, degree, log(m)]``,
* ``mat`` is the quadric matrix or the facet matrix with rows ``a_i / b_i``,
* ``tc``, ``tk``, ``tp`` are coefficients, integer frequencies (as floats,
  shape ``(n, 4)``) and phases of a trigonometric perturbation.

The geodesic system reuses the same slots: ``tc``/``tk``/``tp`` hold the
Fourier modes of the conformal factor (only the first two frequency columns
are read).
"""

import math

import numba as nb
import numpy as np

KIND_PNORM_CUBE = 0
KIND_QUADRIC = 1
KIND_POLY_PNORM = 2
KIND_POLY_LSE = 3
KIND_RADIAL_GRAPH = 4

SYS_HAMILTONIAN = 0
SYS_REEB = 1
SYS_GEODESIC = 2

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_DEGENERATE = 2
STATUS_MAX_STEPS = 3
STATUS_NONFINITE = 4

TWO_PI = 2.0 * math.pi

_jit = nb.njit(cache=True, nogil=True, fastmath=False)


# --------------------------------------------------------------------------
# defining functions
# --------------------------------------------------------------------------


@_jit
def _ipow(x, n):
    if n == 0:
        return 1.0
    return x**n


@_jit
def _base_eval(kind, scal, mat, x, grad, hess):
    for i in range(4):
        grad[i] = 0.0
        for j in range(4):
            hess[i, j] = 0.0
    if kind == KIND_PNORM_CUBE:
        p = int(scal[0])
        val = 0.0
        for i in range(4):
            xi = x[i]
            val += _ipow(xi, p)
            grad[i] = p * _ipow(xi, p - 1)
            hess[i, i] = p * (p - 1) * _ipow(xi, p - 2)
        return val
    if kind == KIND_QUADRIC:
        val = 0.0
        for i in range(4):
            acc = 0.0
            for j in range(4):
                acc += mat[i, j] * x[j]
                hess[i, j] = 2.0 * mat[i, j]
            grad[i] = 2.0 * acc
            val += x[i] * acc
        return val
    if kind == KIND_POLY_PNORM:
        q = int(scal[0])
        m = mat.shape[0]
        total = 0.0
        w1 = np.zeros(m)
        w2 = np.zeros(m)
        for i in range(m):
            s = 0.0
            for j in range(4):
                s += mat[i, j] * x[j]
            if s > 0.0:
                total += _ipow(s, q)
                w1[i] = _ipow(s, q - 1)
                w2[i] = _ipow(s, q - 2)
        if total <= 0.0:
            return 0.0
        val = total ** (1.0 / q)
        scale = val ** (1 - q)
        for i in range(m):
            if w1[i] != 0.0:
                for j in range(4):
                    grad[j] += scale * w1[i] * mat[i, j]
        for i in range(m):
            if w2[i] != 0.0:
                for a in range(4):
                    for b in range(4):
                        hess[a, b] += scale * w2[i] * mat[i, a] * mat[i, b]
        for a in range(4):
            for b in range(4):
                hess[a, b] = (q - 1) * (hess[a, b] - grad[a] * grad[b] / val)
        return val
    if kind == KIND_POLY_LSE:
        beta = scal[0]
        logm = scal[2]
        m = mat.shape[0]
        z = np.empty(m)
        zmax = -np.inf
        for i in range(m):
            s = 0.0
            for j in range(4):
                s += mat[i, j] * x[j]
            z[i] = beta * s
            if z[i] > zmax:
                zmax = z[i]
        total = 0.0
        for i in range(m):
            z[i] = math.exp(z[i] - zmax)
            total += z[i]
        for i in range(m):
            wi = z[i] / total
            for a in range(4):
                grad[a] += wi * mat[i, a]
            for a in range(4):
                for b in range(4):
                    hess[a, b] += wi * mat[i, a] * mat[i, b]
        for a in range(4):
            for b in range(4):
                hess[a, b] = beta * (hess[a, b] - grad[a] * grad[b])
        return (zmax + math.log(total) - logm) / beta
    return np.nan


@_jit
def _sphere_trig(tc, tk, tp, x, grad, hess):
    """Value, gradient and Hessian of x -> sum c cos(k . x/|x| + phase)."""
    r2 = 0.0
    for i in range(4):
        r2 += x[i] * x[i]
    r = math.sqrt(r2)
    u = x / r
    val = 0.0
    gu = np.zeros(4)
    hu = np.zeros((4, 4))
    for t in range(tc.shape[0]):
        arg = tp[t]
        for i in range(4):
            arg += tk[t, i] * u[i]
        c = tc[t] * math.cos(arg)
        s = tc[t] * math.sin(arg)
        val += c
        for i in range(4):
            gu[i] -= s * tk[t, i]
            for j in range(4):
                hu[i, j] -= c * tk[t, i] * tk[t, j]
    # tangential projector P = I - u u^T
    proj = np.eye(4)
    for i in range(4):
        for j in range(4):
            proj[i, j] -= u[i] * u[j]
    pg = proj @ gu
    for i in range(4):
        grad[i] = pg[i] / r
    wu = 0.0
    for i in range(4):
        wu += gu[i] * u[i]
    php = proj @ hu @ proj
    for i in range(4):
        for j in range(4):
            corr = -gu[i] * u[j] - gu[j] * u[i] + 3.0 * wu * u[i] * u[j]
            if i == j:
                corr -= wu
            hess[i, j] = (php[i, j] + corr) / r2
    return val


@_jit
def body_eval(kind, base_kind, scal, mat, tc, tk, tp, x, grad, hess):
    """Defining value G(x); fills ``grad`` and ``hess`` in place."""
    if kind != KIND_RADIAL_GRAPH:
        return _base_eval(kind, scal, mat, x, grad, hess)
    # G = G_base(x) * exp(-k f(u) / 2) for a k-homogeneous base
    gb = np.empty(4)
    hb = np.empty((4, 4))
    gf = np.empty(4)
    hf = np.empty((4, 4))
    val_b = _base_eval(base_kind, scal, mat, x, gb, hb)
    fval = _sphere_trig(tc, tk, tp, x, gf, hf)
    half_k = 0.5 * scal[1]
    e = math.exp(-half_k * fval)
    for i in range(4):
        ge_i = -half_k * e * gf[i]
        grad[i] = e * gb[i] + val_b * ge_i
    for i in range(4):
        for j in range(4):
            he = e * (half_k * half_k * gf[i] * gf[j] - half_k * hf[i, j])
            hess[i, j] = (
                e * hb[i, j]
                - half_k * e * (gb[i] * gf[j] + gf[i] * gb[j])
                + val_b * he
            )
    return val_b * e


@_jit
def body_eval_many(kind, base_kind, scal, mat, tc, tk, tp, pts):
    n = pts.shape[0]
    vals = np.empty(n)
    grads = np.empty((n, 4))
    hesss = np.empty((n, 4, 4))
    g = np.empty(4)
    h = np.empty((4, 4))
    for i in range(n):
        vals[i] = body_eval(kind, base_kind, scal, mat, tc, tk, tp, pts[i], g, h)
        grads[i] = g
        hesss[i] = h
    return vals, grads, hesss


@_jit
def radial_many(kind, base_kind, scal, mat, tc, tk, tp, dirs, lo0, hi0, rtol):
    """Solve G(t u) = 1 for t in [lo0, hi0]; Newton safeguarded by bisection.

    Returns (rho, status) with status 0 ok, 1 no sign change in the bracket.
    """
    n = dirs.shape[0]
    rho = np.empty(n)
    status = np.zeros(n, dtype=np.int64)
    g = np.empty(4)
    h = np.empty((4, 4))
    for idx in range(n):
        u = dirs[idx]
        lo = lo0
        hi = hi0
        flo = body_eval(kind, base_kind, scal, mat, tc, tk, tp, lo * u, g, h) - 1.0
        fhi = body_eval(kind, base_kind, scal, mat, tc, tk, tp, hi * u, g, h) - 1.0
        if not (flo < 0.0 and fhi > 0.0):
            rho[idx] = np.nan
            status[idx] = 1
            continue
        deg = scal[1]
        if deg > 0.0 and kind != KIND_POLY_LSE:
            gu = body_eval(kind, base_kind, scal, mat, tc, tk, tp, u, g, h)
            t = gu ** (-1.0 / deg) if gu > 0.0 else math.sqrt(lo * hi)
        else:
            t = 1.0
        if not (lo < t < hi):
            t = math.sqrt(lo * hi)
        for _ in range(300):
            ft = body_eval(kind, base_kind, scal, mat, tc, tk, tp, t * u, g, h) - 1.0
            if ft == 0.0:
                break
            if ft < 0.0:
                lo = t
            else:
                hi = t
            dft = 0.0
            for i in range(4):
                dft += g[i] * u[i]
            t_new = t - ft / dft if dft > 0.0 else -1.0
            if dft > 0.0 and abs(t_new - t) <= rtol * t:
                t = t_new
                break
            if not (lo < t_new < hi):
                if hi > 4.0 * lo:
                    t_new = math.sqrt(lo * hi)
                else:
                    t_new = 0.5 * (lo + hi)
            if abs(t_new - t) <= rtol * t_new:
                t = t_new
                break
            t = t_new
        rho[idx] = t
    return rho, status


# --------------------------------------------------------------------------
# flow fields
# --------------------------------------------------------------------------


@_jit
def _factor_eval(tc, tk, tp, q, grad, hess):
    """Fourier conformal factor f(q) = sum c cos(2 pi k.q + phase) on T^2."""
    val = 0.0
    for i in range(2):
        grad[i] = 0.0
        for j in range(2):
            hess[i, j] = 0.0
    for t in range(tc.shape[0]):
        k1 = tk[t, 0]
        k2 = tk[t, 1]
        arg = TWO_PI * (k1 * q[0] + k2 * q[1]) + tp[t]
        c = tc[t] * math.cos(arg)
        s = tc[t] * math.sin(arg)
        val += c
        grad[0] -= TWO_PI * k1 * s
        grad[1] -= TWO_PI * k2 * s
        w = TWO_PI * TWO_PI * c
        hess[0, 0] -= w * k1 * k1
        hess[0, 1] -= w * k1 * k2
        hess[1, 1] -= w * k2 * k2
    hess[1, 0] = hess[0, 1]
    return val


@_jit
def factor_eval_many(tc, tk, tp, qs):
    n = qs.shape[0]
    vals = np.empty(n)
    grads = np.empty((n, 2))
    hesss = np.empty((n, 2, 2))
    g = np.empty(2)
    h = np.empty((2, 2))
    for i in range(n):
        vals[i] = _factor_eval(tc, tk, tp, qs[i], g, h)
        grads[i] = g
        hesss[i] = h
    return vals, grads, hesss


@_jit
def _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, y, out):
    """Write the field into ``out``; return (clock rate, level value, ok).

    The clock rate is the factor converting this field's time into the
    companion time: Reeb time per Hamiltonian time for the Hamiltonian
    field and the reciprocal for the Reeb field.
    """
    dim = y.shape[0]
    if sys == SYS_GEODESIC:
        g = np.empty(2)
        h = np.empty((2, 2))
        f = _factor_eval(tc, tk, tp, y[:2], g, h)
        e = math.exp(-2.0 * f)
        p0 = y[2]
        p1 = y[3]
        pp = p0 * p0 + p1 * p1
        out[0] = e * p0
        out[1] = e * p1
        out[2] = pp * e * g[0]
        out[3] = pp * e * g[1]
        if dim == 8:
            dq0 = y[4]
            dq1 = y[5]
            dp0 = y[6]
            dp1 = y[7]
            gdq = g[0] * dq0 + g[1] * dq1
            pdp = p0 * dp0 + p1 * dp1
            out[4] = -2.0 * e * p0 * gdq + e * dp0
            out[5] = -2.0 * e * p1 * gdq + e * dp1
            for i in range(2):
                hdq = h[i, 0] * dq0 + h[i, 1] * dq1
                out[6 + i] = pp * e * (hdq - 2.0 * g[i] * gdq) + 2.0 * e * g[i] * pdp
        return 0.0, 0.5 * e * pp, True

    g = np.empty(4)
    h = np.empty((4, 4))
    x = y[:4]
    val = body_eval(kind, base_kind, scal, mat, tc, tk, tp, x, g, h)
    # X_G = (-G_y1, G_x1, -G_y2, G_x2): lambda_0(X_G) = <grad G, x> / 2
    xg0 = -g[1]
    xg1 = g[0]
    xg2 = -g[3]
    xg3 = g[2]
    s = 0.0
    gnorm = 0.0
    xnorm = 0.0
    for i in range(4):
        s += g[i] * x[i]
        gnorm += g[i] * g[i]
        xnorm += x[i] * x[i]
    s *= 0.5
    if sys == SYS_HAMILTONIAN:
        out[0] = xg0
        out[1] = xg1
        out[2] = xg2
        out[3] = xg3
        if dim == 8:
            hv = h @ y[4:]
            out[4] = -hv[1]
            out[5] = hv[0]
            out[6] = -hv[3]
            out[7] = hv[2]
        return s, val, True
    # Reeb field R = X_G / s
    if not (s > 1e-12 * math.sqrt(gnorm * xnorm)):
        for i in range(dim):
            out[i] = 0.0
        return 0.0, val, False
    out[0] = xg0 / s
    out[1] = xg1 / s
    out[2] = xg2 / s
    out[3] = xg3 / s
    if dim == 8:
        v = y[4:]
        hv = h @ v
        hx = h @ x
        # Ds = (H x + grad G) / 2, contracted with v
        ds_v = 0.0
        for i in range(4):
            ds_v += 0.5 * (hx[i] + g[i]) * v[i]
        inv_s2 = ds_v / (s * s)
        out[4] = -hv[1] / s - xg0 * inv_s2
        out[5] = hv[0] / s - xg1 * inv_s2
        out[6] = -hv[3] / s - xg2 * inv_s2
        out[7] = hv[2] / s - xg3 * inv_s2
    return 1.0 / s, val, True


@_jit
def rhs_eval(sys, kind, base_kind, scal, mat, tc, tk, tp, y):
    out = np.empty(y.shape[0])
    rate, level, ok = _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, y, out)
    return out, rate, level, ok


@_jit
def _project(sys, kind, base_kind, scal, mat, tc, tk, tp, y, level, homog_deg):
    """Pull the base point back onto the level set (in place)."""
    if sys == SYS_GEODESIC:
        if level > 0.0:
            c = math.sqrt(0.5 / level)
            y[2] *= c
            y[3] *= c
        return
    if homog_deg > 0.0:
        if level > 0.0:
            c = level ** (-1.0 / homog_deg)
            for i in range(4):
                y[i] *= c
        return
    g = np.empty(4)
    h = np.empty((4, 4))
    val = body_eval(kind, base_kind, scal, mat, tc, tk, tp, y[:4], g, h)
    gg = 0.0
    for i in range(4):
        gg += g[i] * g[i]
    if gg > 0.0:
        c = (val - 1.0) / gg
        for i in range(4):
            y[i] -= c * g[i]


@_jit
def _tangency(sys, kind, base_kind, scal, mat, tc, tk, tp, y):
    """|dL(v)| / (|dL| |v|) for the level function L at the base point."""
    if sys == SYS_GEODESIC:
        g = np.empty(2)
        h = np.empty((2, 2))
        f = _factor_eval(tc, tk, tp, y[:2], g, h)
        e = math.exp(-2.0 * f)
        pp = y[2] * y[2] + y[3] * y[3]
        d = np.array([-e * pp * g[0], -e * pp * g[1], e * y[2], e * y[3]])
    else:
        d = np.empty(4)
        h = np.empty((4, 4))
        body_eval(kind, base_kind, scal, mat, tc, tk, tp, y[:4], d, h)
    dv = 0.0
    dd = 0.0
    vv = 0.0
    for i in range(4):
        dv += d[i] * y[4 + i]
        dd += d[i] * d[i]
        vv += y[4 + i] * y[4 + i]
    if vv == 0.0 or dd == 0.0:
        return 0.0
    return abs(dv) / math.sqrt(dd * vv)


# Dormand-Prince 5(4)
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1 = 71.0 / 57600.0
_E3 = -71.0 / 16695.0
_E4 = 71.0 / 1920.0
_E5 = -17253.0 / 339200.0
_E6 = 22.0 / 525.0
_E7 = -1.0 / 40.0


@_jit
def _grow(arr, n_cols):
    new = np.empty((arr.shape[0] * 2 + 16, n_cols))
    new[: arr.shape[0]] = arr
    return new


@_jit
def integrate(
    sys,
    kind,
    base_kind,
    scal,
    mat,
    tc,
    tk,
    tp,
    y0,
    t_end,
    rtol,
    atol,
    h_max,
    tau,
    level_target,
    proj_thresh,
    homog_deg,
    t_out,
    record_every,
    max_steps,
):
    """Adaptive Dormand-Prince 5(4) integration with projection and renormalization.

    Steps are clipped to land exactly on output times, renormalization times
    (multiples of ``tau``, tangent runs only) and ``t_end``.  Recorded rows
    hold ``[t, y..., level_pre, clock, cumulative log-stretch, x_pre...]``
    where ``x_pre`` is the base point before any projection.
    """
    dim = y0.shape[0]
    tangent = dim == 8
    direction = 1.0 if t_end >= 0.0 else -1.0
    span = abs(t_end)
    n_cols = 1 + dim + 3 + 4
    rec = np.empty((64, n_cols))
    n_rec = 0
    out_rows = np.empty((t_out.shape[0], n_cols))
    n_out = 0
    logs = np.empty(64)
    n_logs = 0

    y = y0.copy()
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    k5 = np.empty(dim)
    k6 = np.empty(dim)
    k7 = np.empty(dim)
    ytmp = np.empty(dim)
    ynew = np.empty(dim)
    xpre = y0[:4].copy()

    clock = 0.0
    logsum = 0.0
    max_drift = 0.0
    max_tan = 0.0
    n_acc = 0
    n_rej = 0
    n_proj = 0
    status = STATUS_OK
    degenerate_tangent = False

    r1, lev, ok = _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, y, k1)
    if not ok:
        status = STATUS_DEGENERATE
    d0 = abs(lev - level_target)
    if d0 > max_drift:
        max_drift = d0
    if tangent:
        max_tan = _tangency(sys, kind, base_kind, scal, mat, tc, tk, tp, y)

    # t = 0 row
    if record_every > 0:
        rec[0, 0] = 0.0
        rec[0, 1 : 1 + dim] = y
        rec[0, 1 + dim] = lev
        rec[0, 2 + dim] = 0.0
        rec[0, 3 + dim] = 0.0
        rec[0, 4 + dim : 8 + dim] = y[:4]
        n_rec = 1
    out_idx = 0
    while out_idx < t_out.shape[0] and abs(t_out[out_idx]) <= 0.0:
        out_rows[n_out, 0] = 0.0
        out_rows[n_out, 1 : 1 + dim] = y
        out_rows[n_out, 1 + dim] = lev
        out_rows[n_out, 2 + dim] = 0.0
        out_rows[n_out, 3 + dim] = 0.0
        out_rows[n_out, 4 + dim : 8 + dim] = y[:4]
        n_out += 1
        out_idx += 1

    # initial step guess
    ynorm = 0.0
    fnorm = 0.0
    for i in range(dim):
        sc = atol + rtol * abs(y[i])
        ynorm += (y[i] / sc) ** 2
        fnorm += (k1[i] / sc) ** 2
    ynorm = math.sqrt(ynorm / dim)
    fnorm = math.sqrt(fnorm / dim)
    if ynorm < 1e-5 or fnorm < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * ynorm / fnorm
    h = min(h, h_max, span if span > 0.0 else h)

    t = 0.0  # absolute elapsed time |t|
    next_renorm = tau if tangent else np.inf
    steps_since_rec = 0
    total_steps = 0

    while status == STATUS_OK and t < span:
        if total_steps >= max_steps:
            status = STATUS_MAX_STEPS
            break
        total_steps += 1
        target = span
        if out_idx < t_out.shape[0]:
            target = min(target, abs(t_out[out_idx]))
        if tangent:
            target = min(target, next_renorm)
        hit = False
        if t + h >= target * (1.0 - 1e-15) or t + h >= target - 1e-14:
            h_use = target - t
            hit = True
        else:
            h_use = h
        if h_use <= 1e-14 * max(1.0, t):
            if hit:
                h_use = max(h_use, 0.0)
            else:
                status = STATUS_STEP_UNDERFLOW
                break
        hs = direction * h_use

        for i in range(dim):
            ytmp[i] = y[i] + hs * _A21 * k1[i]
        r2, _, ok2 = _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, ytmp, k2)
        for i in range(dim):
            ytmp[i] = y[i] + hs * (_A31 * k1[i] + _A32 * k2[i])
        r3, _, ok3 = _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, ytmp, k3)
        for i in range(dim):
            ytmp[i] = y[i] + hs * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        r4, _, ok4 = _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, ytmp, k4)
        for i in range(dim):
            ytmp[i] = y[i] + hs * (
                _A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i]
            )
        r5, _, ok5 = _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, ytmp, k5)
        for i in range(dim):
            ytmp[i] = y[i] + hs * (
                _A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i] + _A64 * k4[i] + _A65 * k5[i]
            )
        r6, _, ok6 = _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, ytmp, k6)
        for i in range(dim):
            ynew[i] = y[i] + hs * (
                _B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i] + _B5 * k5[i] + _B6 * k6[i]
            )
        r7, lev_new, ok7 = _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, ynew, k7)
        stages_ok = ok2 and ok3 and ok4 and ok5 and ok6 and ok7

        err = 0.0
        finite = True
        for i in range(dim):
            e = hs * (
                _E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i]
            )
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            err += (e / sc) ** 2
            if not math.isfinite(ynew[i]):
                finite = False
        err = math.sqrt(err / dim)
        if not finite or not math.isfinite(err) or not stages_ok:
            if not stages_ok and h_use <= 1e-10:
                status = STATUS_DEGENERATE
                break
            n_rej += 1
            h = 0.25 * h_use
            if h <= 1e-14 * max(1.0, t):
                status = STATUS_NONFINITE if not finite else STATUS_DEGENERATE
            continue

        if err <= 1.0 or h_use <= 1e-14 * max(1.0, t):
            # accept
            n_acc += 1
            clock += hs * (_B1 * r1 + _B3 * r3 + _B4 * r4 + _B5 * r5 + _B6 * r6)
            if hit:
                t = target
            else:
                t += h_use
            drift = abs(lev_new - level_target)
            if drift > max_drift:
                max_drift = drift
            lev_pre = lev_new
            for i in range(4):
                xpre[i] = ynew[i]
            for i in range(dim):
                y[i] = ynew[i]
                k1[i] = k7[i]
            r1 = r7
            if drift > proj_thresh:
                _project(sys, kind, base_kind, scal, mat, tc, tk, tp, y, lev_new, homog_deg)
                r1, lev, ok = _rhs(sys, kind, base_kind, scal, mat, tc, tk, tp, y, k1)
                n_proj += 1
            if tangent:
                td = _tangency(sys, kind, base_kind, scal, mat, tc, tk, tp, y)
                if td > max_tan:
                    max_tan = td
                if t >= next_renorm or t >= span:
                    if t >= next_renorm:
                        nv = 0.0
                        for i in range(4):
                            nv += y[4 + i] * y[4 + i]
                        nv = math.sqrt(nv)
                        if n_logs >= logs.shape[0]:
                            new_logs = np.empty(logs.shape[0] * 2)
                            new_logs[:n_logs] = logs[:n_logs]
                            logs = new_logs
                        if nv > 0.0:
                            inc = math.log(nv)
                            for i in range(4):
                                y[4 + i] /= nv
                            r1, lev, ok = _rhs(
                                sys, kind, base_kind, scal, mat, tc, tk, tp, y, k1
                            )
                        else:
                            inc = 0.0
                            degenerate_tangent = True
                        logs[n_logs] = inc
                        n_logs += 1
                        logsum += inc
                        next_renorm += tau
            steps_since_rec += 1
            if record_every > 0 and steps_since_rec >= record_every:
                steps_since_rec = 0
                if n_rec >= rec.shape[0]:
                    rec = _grow(rec, n_cols)
                rec[n_rec, 0] = direction * t
                rec[n_rec, 1 : 1 + dim] = y
                rec[n_rec, 1 + dim] = lev_pre
                rec[n_rec, 2 + dim] = clock
                rec[n_rec, 3 + dim] = logsum
                rec[n_rec, 4 + dim : 8 + dim] = xpre
                n_rec += 1
            while out_idx < t_out.shape[0] and abs(t_out[out_idx]) <= t:
                out_rows[n_out, 0] = t_out[out_idx]
                out_rows[n_out, 1 : 1 + dim] = y
                out_rows[n_out, 1 + dim] = lev_pre
                out_rows[n_out, 2 + dim] = clock
                out_rows[n_out, 3 + dim] = logsum
                out_rows[n_out, 4 + dim : 8 + dim] = xpre
                n_out += 1
                out_idx += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** (-0.2)))
            if not hit or fac < 1.0:
                h = min(h_max, h_use * fac)
            else:
                h = min(h_max, max(h, h_use * fac))
        else:
            n_rej += 1
            h = h_use * max(0.2, 0.9 * err ** (-0.2))

    # keep the final state even when it was not on the record cadence
    if record_every > 0 and status == STATUS_OK and n_rec > 0 and rec[n_rec - 1, 0] != direction * t:
        if n_rec >= rec.shape[0]:
            rec = _grow(rec, n_cols)
        rec[n_rec, 0] = direction * t
        rec[n_rec, 1 : 1 + dim] = y
        rec[n_rec, 1 + dim] = lev
        rec[n_rec, 2 + dim] = clock
        rec[n_rec, 3 + dim] = logsum
        rec[n_rec, 4 + dim : 8 + dim] = xpre
        n_rec += 1

    counters = np.array([n_acc, n_rej, n_proj, status, 1 if degenerate_tangent else 0], dtype=np.int64)
    stats = np.array([max_drift, max_tan, direction * t, clock, logsum])
    return rec[:n_rec].copy(), out_rows[:n_out].copy(), logs[:n_logs].copy(), y, counters, stats
