"""Water network surrogate and linear model identification.

The truth plant is a reduced two-zone network: each zone has one pump
injecting flow from a reservoir and one elevated tank, the aggregate demand
is split between the zones, and the zones exchange water through a pipe
whose flow follows a signed power law on the head difference.  Tank levels
integrate the net inflows (RK4, substeps of at most one minute) and are
clipped at the physical bounds with the violation recorded.

Pump outlet pressure is affine in the associated tank level and quadratic in
the pump flow; pump electrical power is flow times head, converted to kW by
a fixed factor.

``identify_linear_model`` excites the nonlinear plant with piecewise-
constant inputs from random initial levels, regresses finite-difference
level derivatives on [levels; pump flows; demand], regresses outlet
pressures on [levels; flows] (intercept absorbed into an effective inlet
pressure), and discretizes the result exactly under zero-order hold.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

__all__ = [
    "NonlinearNetwork", "PlantState", "ViolationFlags", "LinearPlantModel",
    "IdentificationReport", "ExcitationDesign", "IllConditioned",
    "tank_net_inflow", "simulate_step", "pump_outlet_pressure", "pump_power",
    "discretize", "identify_linear_model", "default_network",
    "write_plant_trace_csv",
]


class IllConditioned(RuntimeError):
    """The identification regressor matrix is numerically rank deficient."""


@dataclass(frozen=True)
class NonlinearNetwork:
    """Two-zone surrogate; pump j feeds the zone of tank j (so m == n).

    Levels are in meters, flows in m^3/h, pressures in meters of head.
    ``exchange_conductance`` couples tanks 0 and 1 through
    ``q = c * sign(dpsi) * |dpsi|^gamma`` on the head difference
    ``psi = h + elevation``; a single-tank network has no exchange.
    """

    tank_area: np.ndarray
    tank_height: np.ndarray
    tank_elevation: np.ndarray
    demand_split: np.ndarray
    exchange_conductance: float = 40.0
    flow_exponent: float = 0.54
    pump_inlet_pressure: np.ndarray = field(default=None)
    pump_static_head: np.ndarray = field(default=None)
    pump_level_gain: np.ndarray = field(default=None)
    pump_flow_gain: np.ndarray = field(default=None)
    pump_flow_quad: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("tank_area", "tank_height", "tank_elevation",
                     "demand_split", "pump_inlet_pressure", "pump_static_head",
                     "pump_level_gain", "pump_flow_gain", "pump_flow_quad"):
            value = getattr(self, name)
            if value is None:
                raise ValueError(f"{name} is required")
            object.__setattr__(self, name, np.asarray(value, dtype=float))
        n = self.tank_area.size
        if any(getattr(self, name).size != n for name in
               ("tank_height", "tank_elevation", "demand_split",
                "pump_inlet_pressure", "pump_static_head", "pump_level_gain",
                "pump_flow_gain", "pump_flow_quad")):
            raise ValueError("all per-tank/per-pump vectors must share length")
        if np.any(self.tank_area <= 0) or np.any(self.tank_height <= 0):
            raise ValueError("tank areas and heights must be positive")
        if self.flow_exponent <= 0:
            raise ValueError("flow exponent must be positive")
        if self.exchange_conductance < 0:
            raise ValueError("exchange conductance must be >= 0")
        if abs(float(np.sum(self.demand_split)) - 1.0) > 1e-9:
            raise ValueError("demand split must sum to 1")

    @property
    def n_tanks(self) -> int:
        return self.tank_area.size

    @property
    def n_pumps(self) -> int:
        return self.tank_area.size

    def to_json(self) -> str:
        payload = {name: getattr(self, name).tolist() for name in
                   ("tank_area", "tank_height", "tank_elevation",
                    "demand_split", "pump_inlet_pressure", "pump_static_head",
                    "pump_level_gain", "pump_flow_gain", "pump_flow_quad")}
        payload["exchange_conductance"] = self.exchange_conductance
        payload["flow_exponent"] = self.flow_exponent
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NonlinearNetwork":
        data = json.loads(text)
        return cls(**data)


@dataclass(frozen=True)
class PlantState:
    """Tank levels in meters."""

    h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))


@dataclass(frozen=True)
class ViolationFlags:
    """Physical clipping events during one integration step."""

    empty: tuple = ()
    overflow: tuple = ()

    def __bool__(self) -> bool:
        return bool(self.empty or self.overflow)


def _pipe_flow(conductance: float, dpsi: float, exponent: float) -> float:
    """Signed power-law pipe flow on a head difference."""
    if dpsi == 0.0 or conductance == 0.0:
        return 0.0
    return conductance * np.sign(dpsi) * abs(dpsi) ** exponent


def tank_net_inflow(net: NonlinearNetwork, h: np.ndarray, u: np.ndarray,
                    d_a: float) -> np.ndarray:
    """Net volumetric inflow per tank (m^3/h) at levels ``h``.

    Pump j injects ``u_j`` into zone j, the zone draws its demand share,
    and the inter-zone pipe moves water down the head gradient.  Summing
    over tanks cancels the exchange term, so total storage change equals
    pumped-in minus demand (mass conservation).
    """
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    inflow = u - net.demand_split * d_a
    if net.n_tanks >= 2:
        psi = h + net.tank_elevation
        q_x = _pipe_flow(net.exchange_conductance, psi[0] - psi[1],
                         net.flow_exponent)
        inflow = inflow + np.concatenate(([-q_x, q_x], np.zeros(net.n_tanks - 2)))
    return inflow


def _rhs(net: NonlinearNetwork, h: np.ndarray, u: np.ndarray,
         d_a: float) -> np.ndarray:
    return tank_net_inflow(net, h, u, d_a) / net.tank_area


def simulate_step(net: NonlinearNetwork, state: PlantState, u: np.ndarray,
                  d_a: float, dt_hours: float,
                  max_substep_hours: float = 1.0 / 60.0,
                  record: Optional[list] = None
                  ) -> tuple[PlantState, ViolationFlags]:
    """Advance the plant by ``dt_hours`` under constant inputs.

    RK4 with substeps no longer than ``max_substep_hours``.  Levels are
    clipped to ``[0, tank_height]`` after every substep; clipped tanks are
    reported in the returned flags while integration continues.  When
    ``record`` is a list, the level vector after each substep is appended
    (used by the identification experiments).
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("pump flows must be non-negative")
    if dt_hours <= 0:
        raise ValueError("dt must be positive")
    n_sub = max(1, int(np.ceil(dt_hours / max_substep_hours - 1e-12)))
    dt = dt_hours / n_sub
    h = state.h.copy()
    empty: set[int] = set()
    overflow: set[int] = set()
    for _ in range(n_sub):
        k1 = _rhs(net, h, u, d_a)
        k2 = _rhs(net, h + 0.5 * dt * k1, u, d_a)
        k3 = _rhs(net, h + 0.5 * dt * k2, u, d_a)
        k4 = _rhs(net, h + dt * k3, u, d_a)
        h = h + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        low = h < 0.0
        high = h > net.tank_height
        if np.any(low):
            empty.update(np.flatnonzero(low).tolist())
            h = np.where(low, 0.0, h)
        if np.any(high):
            overflow.update(np.flatnonzero(high).tolist())
            h = np.where(high, net.tank_height, h)
        if record is not None:
            record.append(h.copy())
    return PlantState(h=h), ViolationFlags(empty=tuple(sorted(empty)),
                                           overflow=tuple(sorted(overflow)))


def pump_outlet_pressure(net: NonlinearNetwork, h: np.ndarray,
                         u: np.ndarray) -> np.ndarray:
    """Truth outlet pressure (m head) per pump.

    ``p_out_j = static + level_gain * h_j + flow_gain * u_j +
    flow_quad * u_j^2``; the quadratic term is the nonlinearity the linear
    output model has to approximate.
    """
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    return (net.pump_static_head + net.pump_level_gain * h
            + net.pump_flow_gain * u + net.pump_flow_quad * u ** 2)


def pump_power(u: np.ndarray, p_out: np.ndarray, p_in: np.ndarray,
               kw_factor: float = 1.0) -> float:
    """Electrical pump power ``kw_factor * u . (p_out - p_in)``.

    With flows in m^3/h and heads in m, ``kw_factor = rho*g/3.6e6 ~ 0.002725``
    converts to kW; the default 1.0 keeps pre-conversion units.
    """
    u = np.asarray(u, dtype=float)
    return kw_factor * float(np.dot(u, np.asarray(p_out) - np.asarray(p_in)))


def default_network() -> NonlinearNetwork:
    """Stock surrogate sized like a small-town two-zone system."""
    return NonlinearNetwork(
        tank_area=np.array([1400.0, 600.0]),
        tank_height=np.array([3.5, 3.2]),
        tank_elevation=np.array([0.0, 0.0]),
        demand_split=np.array([0.75, 0.25]),
        exchange_conductance=40.0,
        flow_exponent=0.54,
        pump_inlet_pressure=np.array([2.0, 2.0]),
        pump_static_head=np.array([35.0, 30.0]),
        pump_level_gain=np.array([0.8, 0.9]),
        pump_flow_gain=np.array([0.02, 0.025]),
        pump_flow_quad=np.array([4.0e-4, 5.0e-4]),
    )


# ---------------------------------------------------------------------------
# Linear model


@dataclass(frozen=True)
class LinearPlantModel:
    """Identified linear tank/pressure model with its ZOH discretization.

    Continuous dynamics ``h' = a h + b1 u + b2 d_a`` and output
    ``p_out = cp h + dp u`` with effective inlet pressure ``p_in`` (the
    physical inlet pressure minus the pressure-regression intercept, so that
    pump power ``u . (p_out - p_in)`` matches the intercept model exactly).
    ``ad, bd1, bd2`` are the exact zero-order-hold discretization at
    ``dt_hours``.
    """

    a: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    cp: np.ndarray
    dp: np.ndarray
    p_in: np.ndarray
    dt_hours: float
    ad: np.ndarray = None
    bd1: np.ndarray = None
    bd2: np.ndarray = None

    def __post_init__(self):
        for name in ("a", "b1", "b2", "cp", "dp", "p_in"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        if self.ad is None:
            ad, bd1, bd2 = discretize(self.a, self.b1, self.b2, self.dt_hours)
            object.__setattr__(self, "ad", ad)
            object.__setattr__(self, "bd1", bd1)
            object.__setattr__(self, "bd2", bd2)
        else:
            for name in ("ad", "bd1", "bd2"):
                object.__setattr__(self, name,
                                   np.asarray(getattr(self, name), dtype=float))

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_pumps(self) -> int:
        return self.b1.shape[1]

    def outlet_pressure(self, h: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.cp @ np.asarray(h, dtype=float) + self.dp @ np.asarray(u, dtype=float)

    def step(self, h: np.ndarray, u: np.ndarray, d_a: float) -> np.ndarray:
        """One discrete step of the ZOH model."""
        return self.ad @ np.asarray(h, dtype=float) \
            + self.bd1 @ np.asarray(u, dtype=float) + self.bd2 * d_a

    def to_json(self) -> str:
        payload = {
            "a": self.a.tolist(), "b1": self.b1.tolist(), "b2": self.b2.tolist(),
            "cp": self.cp.tolist(), "dp": self.dp.tolist(),
            "p_in": self.p_in.tolist(), "dt_hours": self.dt_hours,
            "ad": self.ad.tolist(), "bd1": self.bd1.tolist(),
            "bd2": self.bd2.tolist(),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LinearPlantModel":
        data = json.loads(text)
        return cls(a=data["a"], b1=data["b1"], b2=data["b2"], cp=data["cp"],
                   dp=data["dp"], p_in=data["p_in"], dt_hours=data["dt_hours"],
                   ad=data["ad"], bd1=data["bd1"], bd2=data["bd2"])


def discretize(a: np.ndarray, b1: np.ndarray, b2: np.ndarray,
               dt_hours: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the augmented exponential.

    ``expm([[A, B], [0, 0]] * dt)`` yields ``[[Ad, Bd], [0, I]]`` for the
    stacked input matrix ``B = [b1 | b2]``.
    """
    a = np.asarray(a, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float).reshape(a.shape[0], -1)
    if dt_hours <= 0:
        raise ValueError("dt must be positive")
    n = a.shape[0]
    b = np.hstack([b1, b2])
    aug = np.zeros((n + b.shape[1], n + b.shape[1]))
    aug[:n, :n] = a
    aug[:n, n:] = b
    phi = expm(aug * dt_hours)
    ad = phi[:n, :n]
    bd = phi[:n, n:]
    return ad, bd[:, :b1.shape[1]], bd[:, b1.shape[1]:].ravel()


@dataclass(frozen=True)
class ExcitationDesign:
    """Piecewise-constant excitation protocol for identification.

    Each segment restarts from random levels inside ``level_box`` and holds
    random constant pump flows / demand for ``substeps_per_segment`` RK4
    substeps of ``substep_hours``.
    """

    n_segments: int = 80
    substeps_per_segment: int = 20
    substep_hours: float = 1.0 / 60.0
    level_box: tuple = ((1.2, 3.1), (1.1, 2.9))
    u_max: tuple = (100.0, 100.0)
    demand_range: tuple = (40.0, 220.0)
    holdout_segments: int = 20
    seed: int = 2024


@dataclass(frozen=True)
class IdentificationReport:
    """Identified model with fit/holdout quality metrics."""

    model: LinearPlantModel
    r2_levels: np.ndarray
    r2_pressure: np.ndarray
    rmse_onestep: np.ndarray
    condition_number: float
    n_samples: int


def _segment_samples(net: NonlinearNetwork, design: ExcitationDesign,
                     rng: np.random.Generator):
    """Simulate one excitation segment; yield central-difference samples."""
    n = net.n_tanks
    h0 = np.array([rng.uniform(lo, hi) for lo, hi in design.level_box[:n]])
    u = rng.uniform(0.0, np.asarray(design.u_max[:n], dtype=float))
    d_a = float(rng.uniform(*design.demand_range))
    levels = [h0.copy()]
    state = PlantState(h=h0)
    state, flags = simulate_step(
        net, state, u, d_a,
        dt_hours=design.substep_hours * design.substeps_per_segment,
        max_substep_hours=design.substep_hours, record=levels)
    rows = []
    if flags:
        return rows, u, d_a, levels
    dt = design.substep_hours
    for k in range(1, len(levels) - 1):
        hdot = (levels[k + 1] - levels[k - 1]) / (2.0 * dt)
        rows.append((levels[k], u, d_a, hdot))
    return rows, u, d_a, levels


def identify_linear_model(net: NonlinearNetwork, design: ExcitationDesign,
                          dt_hours: float) -> IdentificationReport:
    """Least-squares linear identification of the nonlinear plant.

    Level derivatives are estimated by central differences of recorded
    levels over the excitation substep and regressed on ``[h; u; d_a]``;
    outlet pressures are regressed on ``[h; u]`` plus an intercept that is
    absorbed into the effective inlet pressure.  One-step (``dt_hours``)
    level predictions and pressure fits are scored on held-out segments.

    Raises
    ------
    IllConditioned
        If the regressor matrix condition number exceeds 1e8 (e.g. constant
        excitation).
    """
    rng = np.random.default_rng(design.seed)
    n = net.n_tanks
    m = net.n_pumps

    regressors, targets = [], []
    p_regressors, p_targets = [], []
    for _ in range(design.n_segments):
        rows, u, d_a, _ = _segment_samples(net, design, rng)
        for h, u_row, d_row, hdot in rows:
            regressors.append(np.concatenate([h, u_row, [d_row]]))
            targets.append(hdot)
            p_regressors.append(np.concatenate([h, u_row, [1.0]]))
            p_targets.append(pump_outlet_pressure(net, h, u_row))
    x = np.asarray(regressors)
    y = np.asarray(targets)
    if x.shape[0] < x.shape[1]:
        raise IllConditioned("not enough excitation samples")
    cond = float(np.linalg.cond(x))
    if cond > 1e8:
        raise IllConditioned(f"regressor condition number {cond:.3g}")

    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    a = coef[:n].T
    b1 = coef[n:n + m].T
    b2 = coef[n + m].ravel()

    fit = x @ coef
    ss_res = np.sum((y - fit) ** 2, axis=0)
    ss_tot = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    r2_levels = 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0)

    xp = np.asarray(p_regressors)
    yp = np.asarray(p_targets)
    coef_p, *_ = np.linalg.lstsq(xp, yp, rcond=None)
    cp = coef_p[:n].T
    dp = coef_p[n:n + m].T
    intercept = coef_p[n + m].ravel()
    p_in_eff = net.pump_inlet_pressure - intercept

    model = LinearPlantModel(a=a, b1=b1, b2=b2, cp=cp, dp=dp, p_in=p_in_eff,
                             dt_hours=dt_hours)

    # Holdout: fresh segments score one-step level predictions over the
    # control interval and the pressure fit.
    h_true, h_pred = [], []
    p_true, p_pred = [], []
    for _ in range(design.holdout_segments):
        h0 = np.array([rng.uniform(lo, hi) for lo, hi in design.level_box[:n]])
        u = rng.uniform(0.0, np.asarray(design.u_max[:n], dtype=float))
        d_a = float(rng.uniform(*design.demand_range))
        state, flags = simulate_step(net, PlantState(h=h0), u, d_a, dt_hours,
                                     max_substep_hours=design.substep_hours)
        if flags:
            continue
        h_true.append(state.h)
        h_pred.append(model.step(h0, u, d_a))
        p_true.append(pump_outlet_pressure(net, h0, u))
        p_pred.append(model.outlet_pressure(h0, u) + intercept)
    h_true = np.asarray(h_true)
    h_pred = np.asarray(h_pred)
    rmse = np.sqrt(np.mean((h_true - h_pred) ** 2, axis=0))
    p_true = np.asarray(p_true)
    p_pred = np.asarray(p_pred)
    ssr = np.sum((p_true - p_pred) ** 2, axis=0)
    sst = np.sum((p_true - p_true.mean(axis=0)) ** 2, axis=0)
    r2_pressure = 1.0 - ssr / np.where(sst > 0, sst, 1.0)

    return IdentificationReport(model=model, r2_levels=r2_levels,
                                r2_pressure=r2_pressure, rmse_onestep=rmse,
                                condition_number=cond, n_samples=x.shape[0])


def write_plant_trace_csv(path, rows: Sequence[dict]) -> None:
    """Write a plant simulation trace.

    Rows are dicts with keys ``t, h1, h2_state, u1, u2, d_a, pout1, pout2``
    (the fixed export schema for two-tank traces).
    """
    header = ["t", "h1", "h2_state", "u1", "u2", "d_a", "pout1", "pout2"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(row[k])) for k in header])
