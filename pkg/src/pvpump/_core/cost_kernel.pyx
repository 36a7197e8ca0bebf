# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled horizon cost kernel.

Mirrors ``cost_numpy.expected_cost_grad`` branch for branch; see that
module for the contract.  The hot path is the triple loop over scenarios,
steps and sub-slots plus the adjoint sweep, all on typed memoryviews.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p, sqrt, fabs

cnp.import_array()


def expected_cost_grad(double[::1] z, double[::1] h0,
                       double[:, ::1] ad, double[:, ::1] bd1,
                       double[::1] bd2, double[::1] d_seq,
                       double[::1] price, double[:, :, ::1] pv,
                       double[:, ::1] cp, double[:, ::1] dp,
                       double[::1] p_in, double beta, double power_factor,
                       double dt_pv, double[::1] a_low, double[::1] a_high,
                       double[::1] b_low, double[::1] b_high,
                       double[::1] h_low, double[::1] h_high,
                       double[::1] h_star, double w_term, double r_term,
                       double exp_clamp, double[::1] grad_out):
    cdef Py_ssize_t n_steps = price.shape[0]
    cdef Py_ssize_t n = h0.shape[0]
    cdef Py_ssize_t m = bd1.shape[1]
    cdef Py_ssize_t n_scen = pv.shape[0]
    cdef Py_ssize_t n_sub = pv.shape[2]
    cdef Py_ssize_t i, l, j, s, k

    cdef cnp.ndarray[cnp.float64_t, ndim=2] states_arr = \
        np.empty((n_steps + 1, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] head_arr = np.empty((n_steps, m))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_pump_arr = np.empty(n_steps)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w_arr = np.empty(n_steps)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gbar_arr = np.empty((n_steps, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lam_arr = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lam_next_arr = np.zeros(n)
    cdef double[:, ::1] states = states_arr
    cdef double[:, ::1] head = head_arr
    cdef double[::1] p_pump = p_pump_arr
    cdef double[::1] w = w_arr
    cdef double[:, ::1] gbar = gbar_arr
    cdef double[::1] lam = lam_arr
    cdef double[::1] lam_next = lam_next_arr

    cdef double acc, pp, x, t, e, sg, v, inner_v, inner_s, sum_v, sum_s
    cdef double el, eh, bl, bh, diff, dist2, dist, excess, coef
    cdef double f = 0.0
    cdef int n_saturated = 0

    for i in range(n):
        states[0, i] = h0[i]
    for j in range(n_steps):
        for i in range(n):
            acc = bd2[i] * d_seq[j]
            for l in range(n):
                acc += ad[i, l] * states[j, l]
            for l in range(m):
                acc += bd1[i, l] * z[j * m + l]
            states[j + 1, i] = acc
        pp = 0.0
        for i in range(m):
            acc = -p_in[i]
            for l in range(n):
                acc += cp[i, l] * states[j, l]
            for l in range(m):
                acc += dp[i, l] * z[j * m + l]
            head[j, i] = acc
            pp += z[j * m + i] * acc
        p_pump[j] = power_factor * pp

    for j in range(n_steps):
        sum_v = 0.0
        sum_s = 0.0
        for s in range(n_scen):
            inner_v = 0.0
            inner_s = 0.0
            for k in range(n_sub):
                x = p_pump[j] - pv[s, j, k]
                t = beta * x
                e = exp(-fabs(t))
                if t >= 0.0:
                    sg = 1.0 / (1.0 + e)
                    v = x + log1p(e) / beta
                else:
                    sg = e / (1.0 + e)
                    v = log1p(e) / beta
                inner_s += sg
                inner_v += v
            sum_v += inner_v
            sum_s += inner_s
        f += price[j] * dt_pv * (sum_v / n_scen)
        w[j] = power_factor * price[j] * dt_pv * (sum_s / n_scen)

    for j in range(n_steps):
        for i in range(n):
            el = a_low[i] * ((h_low[i] - states[j, i]) + b_low[i])
            eh = a_high[i] * ((states[j, i] - h_high[i]) + b_high[i])
            if el > exp_clamp:
                f += exp(exp_clamp)
                n_saturated += 1
                acc = 0.0
            else:
                bl = exp(el)
                f += bl
                acc = -a_low[i] * bl
            if eh > exp_clamp:
                f += exp(exp_clamp)
                n_saturated += 1
            else:
                bh = exp(eh)
                f += bh
                acc += a_high[i] * bh
            gbar[j, i] = acc

    dist2 = 0.0
    for i in range(n):
        diff = states[n_steps, i] - h_star[i]
        dist2 += diff * diff
        lam[i] = 0.0
    dist = sqrt(dist2)
    excess = dist - r_term
    if excess > 0.0:
        f += w_term * excess * excess
        coef = 2.0 * w_term * excess / dist
        for i in range(n):
            lam[i] = coef * (states[n_steps, i] - h_star[i])

    for j in range(n_steps - 1, -1, -1):
        for i in range(m):
            acc = head[j, i]
            for l in range(m):
                acc += dp[l, i] * z[j * m + l]
            acc *= w[j]
            for l in range(n):
                acc += bd1[l, i] * lam[l]
            grad_out[j * m + i] = acc
        for i in range(n):
            acc = 0.0
            for l in range(m):
                acc += cp[l, i] * z[j * m + l]
            acc *= w[j]
            for l in range(n):
                acc += ad[l, i] * lam[l]
            lam_next[i] = acc
        for i in range(n):
            lam[i] = lam_next[i]
            if j >= 1:
                lam[i] += gbar[j, i]
    return f, n_saturated
