"""NumPy implementation of the horizon cost and its gradient.

This is the reference for the compiled kernel in ``cost_kernel.pyx``; both
evaluate the same function with the same branch structure so they agree to
rounding.  The decision vector is the stacked pump-flow sequence; tank
states are eliminated through the linear recursion, and the gradient comes
from one adjoint sweep instead of finite differences.

Cost terms per horizon step ``j``:

* expected electricity: ``price_j * dt_pv * mean_s sum_k softplus(P_pump_j
  - pv[s, j, k])`` with a smooth softplus of sharpness ``beta``; pump power
  uses the tank state at the start of the step,
* exponential level barriers on the state at the start of the step, two
  terms per tank, with the exponent clamped at ``exp_clamp`` (a clamped
  term contributes a constant and no gradient; the count of clamped terms
  is returned so callers can detect saturation),
* terminal penalty ``w_term * max(0, ||h_N - h_star|| - r_term)^2`` on the
  state after the last step.

Scenario reduction is ordered per scenario first (sum over sub-slots, then
average across scenarios) so duplicated scenarios reproduce the
single-scenario cost bit for bit.
"""

from __future__ import annotations

import numpy as np


def expected_cost_grad(z, h0, ad, bd1, bd2, d_seq, price, pv, cp, dp, p_in,
                       beta, power_factor, dt_pv, a_low, a_high, b_low,
                       b_high, h_low, h_high, h_star, w_term, r_term,
                       exp_clamp, grad_out):
    """Evaluate the horizon cost and write its gradient into ``grad_out``.

    Parameters
    ----------
    z : ndarray, shape (N*m,)
        Stacked pump flows ``u_0 .. u_{N-1}``.
    h0 : ndarray, shape (n,)
        Tank levels at the start of the horizon.
    ad, bd1, bd2 : ndarray
        Discrete-time dynamics: ``h_{j+1} = ad h_j + bd1 u_j + bd2 d_j``.
    d_seq : ndarray, shape (N,)
        Demand per step.
    price : ndarray, shape (N,)
        Electricity price per step.
    pv : ndarray, shape (S, N, K)
        Scenario photovoltaic power on the sub-slot grid.
    cp, dp, p_in : ndarray
        Outlet-pressure map ``p_out = cp h + dp u`` and effective inlet
        pressures.
    beta, power_factor, dt_pv : float
        Softplus sharpness, kW per (m3/h * m), sub-slot length in hours.
    a_low, a_high, b_low, b_high : ndarray, shape (n,)
        Barrier steepness and margin per tank and side.
    h_low, h_high, h_star : ndarray, shape (n,)
        Soft level bounds and terminal target.
    w_term, r_term, exp_clamp : float
        Terminal weight and dead-band radius, barrier exponent clamp.
    grad_out : ndarray, shape (N*m,)
        Output buffer, overwritten with the gradient.

    Returns
    -------
    (float, int)
        Cost value and the number of clamped barrier exponent terms.
    """
    n_steps = price.shape[0]
    n = h0.shape[0]
    m = bd1.shape[1]
    n_scen = pv.shape[0]
    u = z.reshape(n_steps, m)

    states = np.empty((n_steps + 1, n))
    states[0] = h0
    for j in range(n_steps):
        states[j + 1] = ad @ states[j] + bd1 @ u[j] + bd2 * d_seq[j]
    head = states[:-1] @ cp.T + u @ dp.T - p_in
    p_pump = power_factor * np.sum(u * head, axis=1)

    x = p_pump[None, :, None] - pv
    t = beta * x
    e_abs = np.exp(-np.abs(t))
    sigma = np.where(t >= 0.0, 1.0 / (1.0 + e_abs), e_abs / (1.0 + e_abs))
    val = np.maximum(x, 0.0) + np.log1p(e_abs) / beta
    val_step = val.sum(axis=2).sum(axis=0) / n_scen
    sig_step = sigma.sum(axis=2).sum(axis=0) / n_scen
    f = float(np.dot(price, val_step)) * dt_pv
    w = power_factor * price * dt_pv * sig_step

    current = states[:-1]
    exp_low = a_low * ((h_low - current) + b_low)
    exp_high = a_high * ((current - h_high) + b_high)
    sat_low = exp_low > exp_clamp
    sat_high = exp_high > exp_clamp
    bar_low = np.exp(np.where(sat_low, exp_clamp, exp_low))
    bar_high = np.exp(np.where(sat_high, exp_clamp, exp_high))
    f += float(bar_low.sum() + bar_high.sum())
    n_saturated = int(sat_low.sum() + sat_high.sum())
    gbar = (np.where(sat_high, 0.0, a_high * bar_high)
            - np.where(sat_low, 0.0, a_low * bar_low))

    lam = np.zeros(n)
    diff = states[-1] - h_star
    dist = float(np.sqrt(np.dot(diff, diff)))
    excess = dist - r_term
    if excess > 0.0:
        f += w_term * excess * excess
        lam += (2.0 * w_term * excess / dist) * diff

    grad = grad_out.reshape(n_steps, m)
    for j in range(n_steps - 1, -1, -1):
        grad[j] = w[j] * (head[j] + dp.T @ u[j]) + bd1.T @ lam
        lam = w[j] * (cp.T @ u[j]) + ad.T @ lam
        if j >= 1:
            lam += gbar[j]
    return f, n_saturated
