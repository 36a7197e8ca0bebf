"""Shrinking-horizon pump scheduling over photovoltaic scenarios.

Every hour the controller minimizes, over the steps left until midnight,
the expected grid electricity cost across a set of PV scenarios plus
exponential barriers that keep predicted tank levels inside their band and
a terminal penalty steering the final state into a ball around the
periodic reference anchor.  Tank states are affine in the pump flows
through the identified linear model, so the decision variable is just the
stacked input sequence and the only hard constraints are input boxes.

Cost and gradient are evaluated by the compiled kernel (or its NumPy twin,
see ``pvpump._core``); this module owns problem assembly, the periodic
reference program, and the fallback rule used when a solve fails.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _core
from .optimizer import NlpProblem, minimize
from .plant import LinearPlantModel
from .scenarios import ScenarioSet


class PeriodicityGap(RuntimeError):
    """Periodic solve converged with start and end levels still apart."""


class NoHistory(RuntimeError):
    """Fallback input requested before any solution exists."""


def horizon_length(t_hours: float, day_hours: float = 24.0,
                   dt_hours: float = 1.0) -> int:
    """Number of steps from ``t`` to the next midnight.

    Exactly at midnight the horizon covers the full next day, never 0.
    """
    if t_hours < 0:
        raise ValueError("time must be nonnegative")
    steps_per_day = int(round(day_hours / dt_hours))
    step = int(round((t_hours % day_hours) / dt_hours)) % steps_per_day
    return steps_per_day - step


def softplus(x, beta: float):
    """Smooth maximum ``log(1 + exp(beta*x)) / beta``, stable for any x.

    Evaluated as ``max(x, 0) + log1p(exp(-|beta*x|)) / beta`` so neither
    tail overflows.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(beta * x))) / beta
    return float(out) if out.ndim == 0 else out


def _split_barrier(values, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Broadcast a scalar or a 2n-vector (lower terms first) to two sides."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(2 * n, arr[0])
    elif arr.size != 2 * n:
        raise ValueError(f"barrier parameters need 1 or {2 * n} entries")
    if np.any(arr <= 0):
        raise ValueError("barrier parameters must be positive")
    return np.ascontiguousarray(arr[:n]), np.ascontiguousarray(arr[n:])


def barrier_cost(h, bounds, a, b, exp_clamp: float = 500.0) -> float:
    """Exponential penalty over the 2n one-sided level constraints.

    ``bounds`` is the ``(h_low, h_high)`` pair; ``a`` and ``b`` are scalars
    or per-constraint vectors ordered lower terms first.  Each term is
    ``exp(a * (C(h) + b))`` with ``C`` the signed constraint value
    (positive when violated); exponents are clamped at ``exp_clamp`` so the
    result stays finite arbitrarily far outside the band.
    """
    h = np.asarray(h, dtype=float)
    h_low = np.asarray(bounds[0], dtype=float)
    h_high = np.asarray(bounds[1], dtype=float)
    n = h.shape[0]
    a_low, a_high = _split_barrier(a, n)
    b_low, b_high = _split_barrier(b, n)
    exponents = np.concatenate([a_low * ((h_low - h) + b_low),
                                a_high * ((h - h_high) + b_high)])
    return float(np.exp(np.minimum(exponents, exp_clamp)).sum())


@dataclass(frozen=True)
class MpcConfig:
    """Controller tuning: bounds, barrier and softplus parameters, solver.

    ``barrier_a`` and ``barrier_b`` accept a scalar applied to all 2n level
    constraints or a 2n-vector (lower constraints first, then upper).
    ``power_factor`` converts flow times head into electrical power,
    kW per (m3/h * m).

    ``solver_tol`` is the projected-gradient norm accepted as converged.
    The terminal-ball penalty changes curvature exactly on the ball
    boundary, where the optimum typically sits, so day-length horizons
    rarely reach tolerances much below 1e-3; the objective is flat to
    a few parts in 1e4 by that point.
    """

    u_max: tuple = (100.0, 100.0)
    h_min: tuple = (1.5, 1.4)
    h_max: tuple = (3.0, 2.8)
    barrier_a: tuple = (80.0,)
    barrier_b: tuple = (0.3,)
    softplus_beta: float = 0.3
    terminal_radius: float = 0.1
    terminal_weight: float = 1e4
    terminal_penalty_threshold: float = 1.0
    periodic_weight: float = 1e4
    n_scenarios: int = 50
    dt_hours: float = 1.0
    dt_pv_hours: float = 0.25
    day_hours: float = 24.0
    power_factor: float = 0.002725
    exp_clamp: float = 500.0
    solver_tol: float = 1e-3
    solver_max_iter: int = 3000

    def __post_init__(self):
        for name in ("u_max", "h_min", "h_max", "barrier_a", "barrier_b"):
            value = getattr(self, name)
            if np.isscalar(value):
                value = (float(value),)
            object.__setattr__(self, name, tuple(float(v) for v in value))
        if any(v <= 0 for v in self.u_max):
            raise ValueError("u_max must be positive")
        if len(self.h_min) != len(self.h_max):
            raise ValueError("h_min and h_max must have the same length")
        if any(lo >= hi for lo, hi in zip(self.h_min, self.h_max)):
            raise ValueError("h_min must be below h_max componentwise")
        if any(v <= 0 for v in self.barrier_a + self.barrier_b):
            raise ValueError("barrier parameters must be positive")
        if self.softplus_beta <= 0:
            raise ValueError("softplus_beta must be positive")
        if self.terminal_radius < 0:
            raise ValueError("terminal_radius must be nonnegative")
        if self.terminal_weight <= 0 or self.periodic_weight <= 0:
            raise ValueError("penalty weights must be positive")
        if not 0 < self.exp_clamp < 700:
            raise ValueError("exp_clamp must lie in (0, 700)")
        if self.n_scenarios < 1:
            raise ValueError("n_scenarios must be at least 1")
        if self.dt_hours <= 0 or self.dt_pv_hours <= 0:
            raise ValueError("step lengths must be positive")
        ratio = self.dt_hours / self.dt_pv_hours
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt_hours must be a multiple of dt_pv_hours")
        ratio = self.day_hours / self.dt_hours
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("day_hours must be a multiple of dt_hours")
        if self.solver_tol <= 0 or self.solver_max_iter < 1:
            raise ValueError("solver settings out of range")

    @property
    def steps_per_day(self) -> int:
        return int(round(self.day_hours / self.dt_hours))

    @property
    def subslots_per_step(self) -> int:
        return int(round(self.dt_hours / self.dt_pv_hours))

    @property
    def pv_slots_per_day(self) -> int:
        return self.steps_per_day * self.subslots_per_step

    def barrier_arrays(self, n: int):
        a_low, a_high = _split_barrier(self.barrier_a, n)
        b_low, b_high = _split_barrier(self.barrier_b, n)
        return a_low, a_high, b_low, b_high

    def to_dict(self) -> dict:
        return {
            "u_max": list(self.u_max), "h_min": list(self.h_min),
            "h_max": list(self.h_max), "barrier_a": list(self.barrier_a),
            "barrier_b": list(self.barrier_b),
            "softplus_beta": self.softplus_beta,
            "terminal_radius": self.terminal_radius,
            "terminal_weight": self.terminal_weight,
            "terminal_penalty_threshold": self.terminal_penalty_threshold,
            "periodic_weight": self.periodic_weight,
            "n_scenarios": self.n_scenarios,
            "dt_hours": self.dt_hours, "dt_pv_hours": self.dt_pv_hours,
            "day_hours": self.day_hours, "power_factor": self.power_factor,
            "exp_clamp": self.exp_clamp, "solver_tol": self.solver_tol,
            "solver_max_iter": self.solver_max_iter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MpcConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown controller settings: {sorted(unknown)}")
        return cls(**data)


def stage_cost(h, u, pv_window, price: float, model: LinearPlantModel,
               config: MpcConfig) -> float:
    """One-step cost: energy-weighted grid electricity plus level barriers.

    ``pv_window`` holds the PV power on the sub-slots of this step; the
    pump power (from the linear outlet-pressure map and the current state)
    is compared against each sub-slot separately.
    """
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    pout = model.outlet_pressure(h, u)
    p_pump = config.power_factor * float(np.dot(u, pout - model.p_in))
    window = np.asarray(pv_window, dtype=float)
    elec = float(price) * config.dt_pv_hours \
        * float(np.sum(softplus(p_pump - window, config.softplus_beta)))
    return elec + barrier_cost(h, (config.h_min, config.h_max),
                               config.barrier_a, config.barrier_b,
                               config.exp_clamp)


@dataclass
class MpcProblem:
    """One solve instance: model, tuning, state, and horizon data.

    ``pv`` has shape (scenarios, horizon steps, sub-slots per step);
    ``demand`` and ``price`` cover exactly the horizon.
    """

    model: LinearPlantModel
    config: MpcConfig
    h0: np.ndarray
    t_hours: float
    demand: np.ndarray
    price: np.ndarray
    pv: np.ndarray
    h_star: np.ndarray

    def __post_init__(self):
        self.h0 = np.ascontiguousarray(self.h0, dtype=float)
        self.demand = np.ascontiguousarray(self.demand, dtype=float)
        self.price = np.ascontiguousarray(self.price, dtype=float)
        self.pv = np.ascontiguousarray(self.pv, dtype=float)
        self.h_star = np.ascontiguousarray(self.h_star, dtype=float)
        n = self.model.n_states
        horizon = self.horizon
        if self.h0.shape != (n,) or self.h_star.shape != (n,):
            raise ValueError("state vectors must match the model dimension")
        if len(self.config.h_min) != n:
            raise ValueError("config level bounds must match the model")
        if self.demand.shape != (horizon,) or self.price.shape != (horizon,):
            raise ValueError("demand and price must cover the horizon")
        expected = (self.pv.shape[0], horizon, self.config.subslots_per_step)
        if self.pv.ndim != 3 or self.pv.shape != expected:
            raise ValueError(
                f"pv tensor must have shape {expected}, got {self.pv.shape}")

    @property
    def horizon(self) -> int:
        return horizon_length(self.t_hours, self.config.day_hours,
                              self.config.dt_hours)

    @classmethod
    def from_scenarios(cls, model: LinearPlantModel, config: MpcConfig,
                       h0, t_hours: float, demand, price,
                       scenario_set: ScenarioSet, h_star) -> "MpcProblem":
        """Assemble a problem from a sampled scenario set.

        The set must start at the sub-slot of ``t`` and run to midnight;
        its vectors are reshaped onto the (scenario, step, sub-slot) grid.
        """
        horizon = horizon_length(t_hours, config.day_hours, config.dt_hours)
        sub = config.subslots_per_step
        expected_start = config.pv_slots_per_day - horizon * sub
        if scenario_set.start_slot != expected_start:
            raise ValueError(
                f"scenario set starts at slot {scenario_set.start_slot}, "
                f"expected {expected_start} for t={t_hours}")
        flat = scenario_set.as_array()
        if flat.shape[1] != horizon * sub:
            raise ValueError("scenario length does not cover the horizon")
        pv = flat.reshape(flat.shape[0], horizon, sub)
        return cls(model=model, config=config, h0=h0, t_hours=t_hours,
                   demand=demand, price=price, pv=pv, h_star=h_star)


def _kernel_args(problem: MpcProblem) -> tuple:
    model, cfg = problem.model, problem.config
    n = model.n_states
    a_low, a_high, b_low, b_high = cfg.barrier_arrays(n)
    c = np.ascontiguousarray
    return (problem.h0, c(model.ad), c(model.bd1), c(model.bd2),
            problem.demand, problem.price, problem.pv, c(model.cp),
            c(model.dp), c(model.p_in), cfg.softplus_beta, cfg.power_factor,
            cfg.dt_pv_hours, a_low, a_high, b_low, b_high,
            c(np.asarray(cfg.h_min, dtype=float)),
            c(np.asarray(cfg.h_max, dtype=float)), problem.h_star,
            cfg.terminal_weight, cfg.terminal_radius, cfg.exp_clamp)


def expected_cost(u_sequence, problem: MpcProblem) -> float:
    """Scenario-averaged horizon cost of an input sequence."""
    f, _, _ = expected_cost_grad(u_sequence, problem)
    return f


def expected_cost_grad(u_sequence, problem: MpcProblem):
    """Cost, its gradient w.r.t. the stacked inputs, and saturation count."""
    z = np.ascontiguousarray(u_sequence, dtype=float).ravel()
    m = problem.model.n_pumps
    if z.size != problem.horizon * m:
        raise ValueError("input sequence does not match the horizon")
    grad = np.empty(z.size)
    f, n_saturated = _core.expected_cost_grad(z, *_kernel_args(problem), grad)
    return f, grad.reshape(problem.horizon, m), n_saturated


def predict_states(model: LinearPlantModel, h0, u, demand) -> np.ndarray:
    """Roll the discrete model forward; returns states h_0..h_N stacked."""
    u = np.asarray(u, dtype=float)
    demand = np.asarray(demand, dtype=float)
    states = np.empty((u.shape[0] + 1, model.n_states))
    states[0] = np.asarray(h0, dtype=float)
    for j in range(u.shape[0]):
        states[j + 1] = model.step(states[j], u[j], float(demand[j]))
    return states


def cost_breakdown(problem: MpcProblem, u):
    """Per-step and per-scenario cost decomposition at a given sequence.

    Returns ``(per_step, per_scenario, total)``.  Steps carry their
    expected electricity plus the barrier at the step's starting state;
    the terminal penalty is folded into the last step.  Scenario entries
    are full-horizon costs under that scenario alone, so their mean equals
    the total.
    """
    cfg, model = problem.config, problem.model
    u = np.asarray(u, dtype=float).reshape(problem.horizon, model.n_pumps)
    states = predict_states(model, problem.h0, u, problem.demand)
    head = states[:-1] @ model.cp.T + u @ model.dp.T - model.p_in
    p_pump = cfg.power_factor * np.sum(u * head, axis=1)
    val = softplus(p_pump[None, :, None] - problem.pv, cfg.softplus_beta)
    scen_sums = val.sum(axis=2)
    elec_step = cfg.dt_pv_hours * problem.price \
        * (scen_sums.sum(axis=0) / problem.pv.shape[0])
    elec_scen = cfg.dt_pv_hours * (scen_sums * problem.price).sum(axis=1)
    bar_step = np.array([
        barrier_cost(states[j], (cfg.h_min, cfg.h_max), cfg.barrier_a,
                     cfg.barrier_b, cfg.exp_clamp)
        for j in range(problem.horizon)])
    diff = states[-1] - problem.h_star
    excess = float(np.linalg.norm(diff)) - cfg.terminal_radius
    penalty = cfg.terminal_weight * excess * excess if excess > 0 else 0.0
    per_step = elec_step + bar_step
    per_step[-1] += penalty
    per_scenario = elec_scen + bar_step.sum() + penalty
    return per_step, per_scenario, float(per_step.sum())


@dataclass
class ControlSolution:
    """Optimized input sequence with its predicted consequences.

    ``h_pred`` includes the current state as row 0, so row ``j + 1`` is
    the level after applying ``u[j]``.  ``status`` is ``converged`` or
    ``fallback``; a fallback solution is still box-feasible and usable,
    but the caller should prefer the stored fallback rule.
    """

    u: np.ndarray
    h_pred: np.ndarray
    objective: float
    per_scenario_costs: np.ndarray
    per_step_costs: np.ndarray
    status: str
    iterations: int
    grad_proj_norm: float
    n_saturated: int

    def to_csv(self, path) -> None:
        """Write `step,u1,u2,h1_pred,h2_pred,cost` rows (one per step)."""
        m = self.u.shape[1]
        n = self.h_pred.shape[1]
        header = (["step"] + [f"u{i + 1}" for i in range(m)]
                  + [f"h{i + 1}_pred" for i in range(n)] + ["cost"])
        lines = [",".join(header)]
        for j in range(self.u.shape[0]):
            cells = [str(j)]
            cells += [repr(float(v)) for v in self.u[j]]
            cells += [repr(float(v)) for v in self.h_pred[j + 1]]
            cells.append(repr(float(self.per_step_costs[j])))
            lines.append(",".join(cells))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def _hold_level_inputs(model: LinearPlantModel, h0, demand) -> np.ndarray:
    """Inputs that keep levels roughly steady; the cold-start guess."""
    n = model.n_states
    pinv = np.linalg.pinv(model.bd1)
    drift = (np.eye(n) - model.ad) @ np.asarray(h0, dtype=float)
    u = np.empty((len(demand), model.n_pumps))
    for j, d in enumerate(np.asarray(demand, dtype=float)):
        u[j] = pinv @ (drift - model.bd2 * d)
    return u


def solve_mpc(problem: MpcProblem, warm_start=None,
              trace_path=None) -> ControlSolution:
    """Minimize the expected horizon cost over the input box.

    Never raises on a poor solve: if the optimizer fails to converge or
    the predicted terminal state misses the target ball by more than the
    penalty threshold, the solution is returned with ``status=fallback``.
    """
    cfg, model = problem.config, problem.model
    horizon, m = problem.horizon, model.n_pumps
    dim = horizon * m
    u_max = np.asarray(cfg.u_max, dtype=float)
    if warm_start is None:
        start = _hold_level_inputs(model, problem.h0, problem.demand)
        start = np.clip(start, 0.0, u_max)
    else:
        start = np.asarray(warm_start, dtype=float).reshape(horizon, m)
    args = _kernel_args(problem)

    def objective(z):
        grad = np.empty(dim)
        f, _ = _core.expected_cost_grad(np.ascontiguousarray(z), *args, grad)
        return f, grad

    nlp = NlpProblem(dim=dim, lower=np.zeros(dim), upper=np.tile(u_max, horizon),
                     objective=objective, x0=start.ravel())
    report = minimize(nlp, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter,
                      trace_path=trace_path)
    u = report.x.reshape(horizon, m)
    grad = np.empty(dim)
    _, n_saturated = _core.expected_cost_grad(report.x, *args, grad)
    states = predict_states(model, problem.h0, u, problem.demand)
    per_step, per_scenario, _ = cost_breakdown(problem, u)
    excess = float(np.linalg.norm(states[-1] - problem.h_star)) \
        - cfg.terminal_radius
    penalty = cfg.terminal_weight * excess * excess if excess > 0 else 0.0
    ok = (report.status == "converged"
          and penalty <= cfg.terminal_penalty_threshold)
    return ControlSolution(
        u=u, h_pred=states, objective=report.f,
        per_scenario_costs=per_scenario, per_step_costs=per_step,
        status="converged" if ok else "fallback",
        iterations=report.iterations, grad_proj_norm=report.grad_proj_norm,
        n_saturated=n_saturated)


def solve_deterministic(problem: MpcProblem, warm_start=None,
                        trace_path=None) -> ControlSolution:
    """Point-forecast variant: same program on a single scenario."""
    if problem.pv.shape[0] != 1:
        raise ValueError("deterministic solve expects exactly one scenario")
    return solve_mpc(problem, warm_start=warm_start, trace_path=trace_path)


@dataclass
class PeriodicReference:
    """One-day trajectory with matching start and end levels.

    ``h`` has ``steps + 1`` rows; ``anchor`` (the final row) is the
    terminal target the hourly solves steer toward.
    """

    u: np.ndarray
    h: np.ndarray
    objective: float
    residual: float

    @property
    def anchor(self) -> np.ndarray:
        return self.h[-1].copy()

    def to_json(self) -> str:
        return json.dumps({
            "u": self.u.tolist(), "h": self.h.tolist(),
            "objective": self.objective, "residual": self.residual,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PeriodicReference":
        data = json.loads(text)
        return cls(u=np.asarray(data["u"], dtype=float),
                   h=np.asarray(data["h"], dtype=float),
                   objective=float(data["objective"]),
                   residual=float(data["residual"]))


def solve_periodic(model: LinearPlantModel, demand_day, price_day,
                   config: MpcConfig) -> PeriodicReference:
    """Optimal one-day cycle without PV, start level free but periodic.

    Decision variables are the initial level and the full-day input
    sequence; periodicity ``h_0 = h_T`` is enforced by a quadratic penalty
    starting at weight ``periodic_weight``.  A pure penalty optimum leaves
    a gap of roughly (marginal water value)/(2 w_P), so the weight is
    escalated tenfold, warm started, until the cycle closes within 1e-3 m.

    Raises
    ------
    PeriodicityGap
        If the cycle still opens by more than 1e-3 m after escalation.
    """
    steps = config.steps_per_day
    demand_day = np.asarray(demand_day, dtype=float)
    price_day = np.asarray(price_day, dtype=float)
    if demand_day.shape != (steps,) or price_day.shape != (steps,):
        raise ValueError("demand and price must cover one day of steps")
    n, m = model.n_states, model.n_pumps
    a_low, a_high, b_low, b_high = config.barrier_arrays(n)
    h_low = np.asarray(config.h_min, dtype=float)
    h_high = np.asarray(config.h_max, dtype=float)
    u_max = np.asarray(config.u_max, dtype=float)
    beta = config.softplus_beta
    pf = config.power_factor
    dt = config.dt_hours
    clamp = config.exp_clamp

    def make_objective(w_p):
        def objective(x):
            h0 = x[:n]
            u = x[n:].reshape(steps, m)
            states = predict_states(model, h0, u, demand_day)
            head = states[:-1] @ model.cp.T + u @ model.dp.T - model.p_in
            p_pump = pf * np.sum(u * head, axis=1)
            t = beta * p_pump
            e_abs = np.exp(-np.abs(t))
            sig = np.where(t >= 0.0, 1.0 / (1.0 + e_abs),
                           e_abs / (1.0 + e_abs))
            val = np.maximum(p_pump, 0.0) + np.log1p(e_abs) / beta
            f = float(np.dot(price_day, val)) * dt
            w = pf * price_day * dt * sig

            current = states[:-1]
            exp_low = a_low * ((h_low - current) + b_low)
            exp_high = a_high * ((current - h_high) + b_high)
            sat_low = exp_low > clamp
            sat_high = exp_high > clamp
            bar_low = np.exp(np.where(sat_low, clamp, exp_low))
            bar_high = np.exp(np.where(sat_high, clamp, exp_high))
            f += float(bar_low.sum() + bar_high.sum())
            gbar = (np.where(sat_high, 0.0, a_high * bar_high)
                    - np.where(sat_low, 0.0, a_low * bar_low))

            gap = states[-1] - h0
            f += w_p * float(np.dot(gap, gap))
            lam = 2.0 * w_p * gap
            grad_u = np.empty((steps, m))
            for j in range(steps - 1, -1, -1):
                grad_u[j] = w[j] * (head[j] + model.dp.T @ u[j]) \
                    + model.bd1.T @ lam
                lam = w[j] * (model.cp.T @ u[j]) + model.ad.T @ lam + gbar[j]
            grad_h0 = lam - 2.0 * w_p * gap
            return f, np.concatenate([grad_h0, grad_u.ravel()])
        return objective

    mid = 0.5 * (h_low + h_high)
    u_start = np.clip(_hold_level_inputs(model, mid, demand_day), 0.0, u_max)
    x0 = np.concatenate([mid, u_start.ravel()])
    lower = np.concatenate([h_low, np.zeros(steps * m)])
    upper = np.concatenate([h_high, np.tile(u_max, steps)])
    w_p = config.periodic_weight
    report = None
    residual = np.inf
    for _ in range(5):
        nlp = NlpProblem(dim=n + steps * m, lower=lower, upper=upper,
                         objective=make_objective(w_p), x0=x0)
        report = minimize(nlp, tol=config.solver_tol,
                          max_iter=2 * config.solver_max_iter)
        h0 = report.x[:n]
        u = report.x[n:].reshape(steps, m)
        states = predict_states(model, h0, u, demand_day)
        residual = float(np.linalg.norm(states[-1] - h0))
        if residual <= 1e-3:
            break
        w_p *= 10.0
        x0 = report.x
    if residual > 1e-3:
        raise PeriodicityGap(
            f"periodic cycle opens by {residual:.3e} m (status "
            f"{report.status})")
    return PeriodicReference(u=u, h=states, objective=report.f,
                             residual=residual)


def fallback_input(previous: Optional[ControlSolution],
                   periodic: Optional[PeriodicReference] = None,
                   step_of_day: Optional[int] = None) -> np.ndarray:
    """Input to apply when the current solve is unusable.

    The second element of the previous solution's sequence; when the
    previous horizon had a single step there is no second element, so the
    periodic reference input for the current step of the day is used.

    Raises
    ------
    NoHistory
        With no previous solution, or no periodic reference when one is
        needed.
    """
    if previous is None:
        raise NoHistory("no previous solution to fall back on")
    if previous.u.shape[0] >= 2:
        return previous.u[1].copy()
    if periodic is None or step_of_day is None:
        raise NoHistory(
            "previous horizon had one step; periodic reference required")
    return periodic.u[int(step_of_day) % periodic.u.shape[0]].copy()
