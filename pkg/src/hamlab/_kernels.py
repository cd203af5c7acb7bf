"""Compiled inner loops for polynomial Hamiltonians.

Every kernel takes the polynomial as ``(exps, coefs)`` arrays so that it can
be compiled once and reused for any coefficient table.  Kernels release the
GIL so independent trajectories can run on a thread pool.
"""

import numba as nb
import numpy as np

STATUS_OK = 0
STATUS_ESCAPE = 1
STATUS_STIFF = 2


@nb.njit(cache=True, nogil=True)
def poly_gradient(exps, coefs, x, out):
    out[:] = 0.0
    for k in range(exps.shape[0]):
        for i in range(4):
            ei = exps[k, i]
            if ei == 0:
                continue
            t = coefs[k] * ei
            for j in range(4):
                ej = exps[k, j] - (1 if j == i else 0)
                if ej > 0:
                    t *= x[j] ** ej
            out[i] += t


@nb.njit(cache=True, nogil=True)
def poly_hessian(exps, coefs, x, out):
    out[:, :] = 0.0
    for k in range(exps.shape[0]):
        for i in range(4):
            ei = exps[k, i]
            if ei == 0:
                continue
            for l in range(i, 4):
                el = exps[k, l] - (1 if l == i else 0)
                if el <= 0:
                    continue
                t = coefs[k] * ei * el
                for j in range(4):
                    ej = exps[k, j] - (1 if j == i else 0) - (1 if j == l else 0)
                    if ej > 0:
                        t *= x[j] ** ej
                out[i, l] += t
                if l != i:
                    out[l, i] += t


@nb.njit(cache=True, nogil=True)
def _jmul(v, out):
    out[0] = v[2]
    out[1] = v[3]
    out[2] = -v[0]
    out[3] = -v[1]


@nb.njit(cache=True, nogil=True)
def _jmat(m, out):
    for c in range(4):
        out[0, c] = m[2, c]
        out[1, c] = m[3, c]
        out[2, c] = -m[0, c]
        out[3, c] = -m[1, c]


@nb.njit(cache=True, nogil=True)
def midpoint_run(exps, coefs, x0, h, n, tol, max_iter, radius, tangent):
    """Implicit midpoint for ``n`` steps of size ``h``.

    Returns ``(states, step_jacobians, status, last_index)``.  ``status`` is
    STATUS_OK, STATUS_ESCAPE or STATUS_STIFF; ``last_index`` is the index of
    the last valid state.  The step Jacobian is the exact derivative of the
    discrete map, the Cayley transform of ``h J Hess H`` at the stage value.
    """
    states = np.empty((n + 1, 4))
    nj = n if tangent else 0
    steps = np.empty((nj, 4, 4))
    states[0, :] = x0
    x = x0.copy()
    g = np.empty(4)
    jg = np.empty(4)
    hm = np.empty((4, 4))
    jh = np.empty((4, 4))
    eye = np.eye(4)
    for k in range(n):
        poly_gradient(exps, coefs, x, g)
        _jmul(g, jg)
        y = x + 0.5 * h * jg
        converged = False
        for it in range(max_iter):
            poly_gradient(exps, coefs, y, g)
            _jmul(g, jg)
            poly_hessian(exps, coefs, y, hm)
            _jmat(hm, jh)
            res = y - x - 0.5 * h * jg
            d = np.linalg.solve(eye - 0.5 * h * jh, res)
            y = y - d
            scale = 1.0
            for i in range(4):
                if abs(y[i]) > scale:
                    scale = abs(y[i])
            dmax = 0.0
            for i in range(4):
                if abs(d[i]) > dmax:
                    dmax = abs(d[i])
            if not np.isfinite(dmax):
                break
            if dmax <= tol * scale:
                converged = True
                break
        if not converged:
            return states, steps, STATUS_STIFF, k
        xn = 2.0 * y - x
        r2 = 0.0
        for i in range(4):
            r2 += xn[i] * xn[i]
        if not (r2 <= radius * radius):
            return states, steps, STATUS_ESCAPE, k
        if tangent:
            poly_hessian(exps, coefs, y, hm)
            _jmat(hm, jh)
            a = 0.5 * h * jh
            steps[k] = np.linalg.solve(eye - a, eye + a)
        states[k + 1, :] = xn
        x = xn
    return states, steps, STATUS_OK, n


@nb.njit(cache=True, nogil=True)
def cumulative_products(steps):
    """D[0] = I, D[k] = steps[k-1] @ D[k-1]."""
    n = steps.shape[0]
    d = steps.shape[1]
    out = np.empty((n + 1, d, d))
    out[0] = np.eye(d)
    for k in range(n):
        out[k + 1] = steps[k] @ out[k]
    return out


@nb.njit(cache=True, nogil=True)
def log_norm_series(steps, renorm_every):
    """log of the spectral norm of the accumulated 2x2 product after each step.

    The running product is rescaled every ``renorm_every`` steps; the scale
    is carried in log form so arbitrarily long products do not overflow.
    """
    n = steps.shape[0]
    out = np.empty(n)
    m = np.eye(2)
    logscale = 0.0
    for k in range(n):
        m = steps[k] @ m
        a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
        # sigma_max = (|conformal part| + |anticonformal part|) / 2, free of
        # the cancellation in the s +- sqrt(s^2 - 4 det^2) form
        nrm = 0.5 * (np.hypot(a + d, c - b) + np.hypot(a - d, b + c))
        out[k] = logscale + np.log(nrm)
        if (k + 1) % renorm_every == 0:
            if nrm > 0.0 and np.isfinite(nrm):
                m = m / nrm
                logscale += np.log(nrm)
    return out


@nb.njit(cache=True, nogil=True)
def poly_gradients(exps, coefs, states):
    out = np.empty_like(states)
    g = np.empty(4)
    for k in range(states.shape[0]):
        poly_gradient(exps, coefs, states[k], g)
        out[k, :] = g
    return out


@nb.njit(cache=True, nogil=True)
def _complement_e1(u1, u2, hint, use_hint):
    # Orthogonal projector onto the complement of span{u1, u2}.
    p = np.eye(4)
    for i in range(4):
        for j in range(4):
            p[i, j] -= u1[i] * u1[j] + u2[i] * u2[j]
    if use_hint:
        v = p @ hint
        nv = np.sqrt(np.sum(v * v))
        if nv > 1e-8:
            return v / nv
    best = -1.0
    col = 0
    for j in range(4):
        nj = np.sqrt(np.sum(p[:, j] * p[:, j]))
        if nj > best + 1e-12:
            best = nj
            col = j
    return p[:, col] / best


@nb.njit(cache=True, nogil=True)
def frames_along(grads, first_hint, use_first_hint):
    """Continuous orthonormal frames (e1, e2 = -J e1) of the normal planes.

    Each e1 is the projection of the previous e1 onto the new plane, so the
    frame never flips sign between neighbouring samples.
    """
    n = grads.shape[0]
    e1 = np.empty((n, 4))
    e2 = np.empty((n, 4))
    u2 = np.empty(4)
    hint = first_hint.copy()
    use = use_first_hint
    for k in range(n):
        g = grads[k]
        ng = np.sqrt(np.sum(g * g))
        u1 = g / ng
        _jmul(u1, u2)
        v = _complement_e1(u1, u2, hint, use)
        e1[k, :] = v
        # e2 = -J e1
        e2[k, 0] = -v[2]
        e2[k, 1] = -v[3]
        e2[k, 2] = v[0]
        e2[k, 3] = v[1]
        hint = v
        use = True
    return e1, e2


@nb.njit(cache=True, nogil=True)
def ratio_table(steps, samples, plus, minus, m_max, periodic):
    """ratio[r, m-1] = |A minus_r| / |A plus_r| with A the m-step product from samples[r].

    Windows running past the end are NaN unless ``periodic``.
    """
    n = steps.shape[0]
    out = np.full((samples.shape[0], m_max), np.nan)
    for r in range(samples.shape[0]):
        i = samples[r]
        vp = plus[r].copy()
        vm = minus[r].copy()
        lp = 0.0
        lm = 0.0
        for m in range(1, m_max + 1):
            k = i + m - 1
            if k >= n:
                if not periodic:
                    break
                k = k % n
            a = steps[k]
            wp0 = a[0, 0] * vp[0] + a[0, 1] * vp[1]
            wp1 = a[1, 0] * vp[0] + a[1, 1] * vp[1]
            wm0 = a[0, 0] * vm[0] + a[0, 1] * vm[1]
            wm1 = a[1, 0] * vm[0] + a[1, 1] * vm[1]
            np_ = np.sqrt(wp0 * wp0 + wp1 * wp1)
            nm_ = np.sqrt(wm0 * wm0 + wm1 * wm1)
            lp += np.log(np_)
            lm += np.log(nm_)
            vp[0] = wp0 / np_
            vp[1] = wp1 / np_
            vm[0] = wm0 / nm_
            vm[1] = wm1 / nm_
            out[r, m - 1] = np.exp(lm - lp)
    return out
