"""Closed-loop experiments: synthetic data, matched runs, metric reports.

Everything a benchmark campaign needs in one place: a synthetic PV
generator standing in for measured panel data, demand-day perturbation, PV
scaling against a rule-based pump baseline, the hourly control loop on the
nonlinear truth plant, and the stochastic-versus-deterministic comparison
campaign.  The two methods always share identified model, periodic
reference, PV days, demand days, and forecaster history, so their traces
differ only through the controller itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .controller import (ControlSolution, MpcConfig, MpcProblem, NoHistory,
                         PeriodicReference, fallback_input,
                         solve_deterministic, solve_mpc, solve_periodic)
from .forecast import (DailyProfile, Forecaster, GaussianBelief,
                       InsufficientHistory, SamplingGrid, detect_sunrise)
from .plant import (ExcitationDesign, IdentificationReport, NonlinearNetwork,
                    PlantState, default_network, identify_linear_model,
                    pump_outlet_pressure, pump_power, simulate_step)
from .scenarios import (build_delta_chain, mean_scenario,
                        posterior_after_observations, sample_day,
                        sample_night)

_METHOD_ALIASES = {
    "so": "so", "stochastic": "so",
    "do": "do", "deterministic": "do",
}


def default_demand_profile(mean_m3ph: float = 120.0) -> np.ndarray:
    """Hourly demand with morning and evening peaks, scaled to a mean."""
    shape = np.array([
        0.62, 0.55, 0.50, 0.50, 0.56, 0.70, 0.92, 1.18,
        1.32, 1.27, 1.16, 1.10, 1.05, 1.00, 0.96, 1.00,
        1.10, 1.26, 1.38, 1.32, 1.15, 0.95, 0.80, 0.68,
    ])
    return mean_m3ph * shape / shape.mean()


def default_price_profile() -> np.ndarray:
    """Two-level tariff: cheap night hours, expensive daytime block."""
    price = np.full(24, 0.22)
    price[:7] = 0.08
    price[23] = 0.08
    return price


@dataclass(frozen=True)
class SyntheticPvGenerator:
    """Synthetic PV days: a clear-sky bell with clouds and drifting amplitude.

    The clear-sky curve is ``sin(pi * (t - sunrise) / span) ** bell_power``
    inside the daylight window and exactly zero outside.  Day-to-day
    amplitude follows an AR(1) in log-ish deviations around ``peak_kw``;
    cloudy days (Bernoulli draw) overlay multiplicative Gaussian dips.
    """

    peak_kw: float = 30.0
    sunrise_hour: float = 6.5
    sunset_hour: float = 20.5
    bell_power: float = 1.3
    amplitude_rho: float = 0.7
    amplitude_sigma: float = 0.12
    amplitude_floor: float = 0.35
    cloudy_probability: float = 0.3
    dips_min: int = 2
    dips_max: int = 5
    dip_depth: tuple = (0.35, 0.85)
    dip_width_hours: tuple = (0.4, 1.6)

    def __post_init__(self):
        if self.peak_kw <= 0:
            raise ValueError("peak_kw must be positive")
        if not self.sunrise_hour < self.sunset_hour:
            raise ValueError("sunrise must precede sunset")
        if not 0.0 <= self.cloudy_probability <= 1.0:
            raise ValueError("cloudy_probability must lie in [0, 1]")
        if self.dips_min < 0 or self.dips_max < self.dips_min:
            raise ValueError("dip count range is invalid")

    def generate(self, n_days: int, grid: SamplingGrid,
                 seed: int) -> list[DailyProfile]:
        rng = np.random.default_rng(seed)
        times = (np.arange(grid.slots_per_day) + 0.5) * grid.step_hours
        span = self.sunset_hour - self.sunrise_hour
        inside = (times > self.sunrise_hour) & (times < self.sunset_hour)
        phase = np.clip((times - self.sunrise_hour) / span, 0.0, 1.0)
        bell = np.where(inside, np.sin(np.pi * phase) ** self.bell_power, 0.0)
        days = []
        drift = 0.0
        for d in range(n_days):
            drift = self.amplitude_rho * drift \
                + self.amplitude_sigma * rng.standard_normal()
            amplitude = self.peak_kw * max(self.amplitude_floor, 1.0 + drift)
            mult = np.ones_like(times)
            if rng.random() < self.cloudy_probability:
                n_dips = int(rng.integers(self.dips_min, self.dips_max + 1))
                for _ in range(n_dips):
                    center = rng.uniform(self.sunrise_hour, self.sunset_hour)
                    width = rng.uniform(*self.dip_width_hours)
                    depth = rng.uniform(*self.dip_depth)
                    mult = mult * (1.0 - depth
                                   * np.exp(-((times - center) / width) ** 2))
            power = np.maximum(0.0, amplitude * bell * mult)
            days.append(DailyProfile(samples=power, day_index=d))
        return days

    def to_dict(self) -> dict:
        return {
            "peak_kw": self.peak_kw, "sunrise_hour": self.sunrise_hour,
            "sunset_hour": self.sunset_hour, "bell_power": self.bell_power,
            "amplitude_rho": self.amplitude_rho,
            "amplitude_sigma": self.amplitude_sigma,
            "amplitude_floor": self.amplitude_floor,
            "cloudy_probability": self.cloudy_probability,
            "dips_min": self.dips_min, "dips_max": self.dips_max,
            "dip_depth": list(self.dip_depth),
            "dip_width_hours": list(self.dip_width_hours),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticPvGenerator":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown PV generator settings: {sorted(unknown)}")
        data = dict(data)
        for key in ("dip_depth", "dip_width_hours"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def rule_based_baseline(net: NonlinearNetwork, demand_day, initial_levels,
                        power_factor: float = 0.002725,
                        u_max=(100.0, 100.0)) -> float:
    """Daily pump energy (kWh) of a simple level-restoring controller.

    Each hour every pump covers its zone's demand share plus whatever flow
    would close the gap to 60% tank height within the hour, clipped to the
    pump box.  This is the consumption anchor the PV dataset is scaled to.
    """
    demand_day = np.asarray(demand_day, dtype=float)
    u_max = np.asarray(u_max, dtype=float)
    target = 0.6 * net.tank_height
    state = PlantState(h=np.asarray(initial_levels, dtype=float))
    energy = 0.0
    for d in demand_day:
        refill = (target - state.h) * net.tank_area
        u = np.clip(net.demand_split * d + refill, 0.0, u_max)
        pout = pump_outlet_pressure(net, state.h, u)
        energy += pump_power(u, pout, net.pump_inlet_pressure, power_factor)
        state, _ = simulate_step(net, state, u, float(d), 1.0)
    return energy


def scale_pv_to_pump_average(profiles, baseline_kwh_per_day: float,
                             grid: SamplingGrid):
    """Scale a PV dataset so its mean daily energy matches the baseline.

    Returns ``(scaled profiles, multiplier)``.
    """
    energies = [float(np.sum(p.samples)) * grid.step_hours for p in profiles]
    mean_daily = float(np.mean(energies))
    if mean_daily <= 0:
        raise ValueError("PV dataset carries no energy")
    multiplier = baseline_kwh_per_day / mean_daily
    scaled = [DailyProfile(samples=p.samples * multiplier,
                           day_index=p.day_index) for p in profiles]
    return scaled, multiplier


def perturbed_demand(base_profile, day_sample, sample_mean) -> np.ndarray:
    """Shift the base demand by a sampled day's deviation from the mean day."""
    base = np.asarray(base_profile, dtype=float)
    day = np.asarray(day_sample, dtype=float)
    mean = np.asarray(sample_mean, dtype=float)
    if base.shape != day.shape or base.shape != mean.shape:
        raise ValueError("demand profiles must share one shape")
    return np.maximum(0.0, base + (day - mean))


def sample_demand_days(base_profile, n_days: int, seed: int) -> np.ndarray:
    """Draw daily demand realizations around the base profile.

    Each day gets a global scale and slot-level noise, both clipped to stay
    physically plausible; the result feeds :func:`perturbed_demand`.
    """
    rng = np.random.default_rng(seed)
    base = np.asarray(base_profile, dtype=float)
    days = np.empty((n_days, base.size))
    for d in range(n_days):
        scale = np.clip(1.0 + 0.15 * rng.standard_normal(), 0.7, 1.3)
        slot_noise = np.clip(1.0 + 0.08 * rng.standard_normal(base.size),
                             0.7, 1.3)
        days[d] = base * scale * slot_noise
    return days


@dataclass
class ExperimentConfig:
    """Everything one closed-loop experiment depends on.

    ``pv_start_day`` offsets the window into the synthetic PV dataset
    (history plus experiment days); the comparison campaign varies it per
    case via ``cases``.  ``zero_forecast_variance`` switches every forecast
    distribution to its point mass, which collapses the stochastic method
    onto the deterministic one.
    """

    days: int = 1
    history_days: int = 30
    seed: int = 2024
    pv_start_day: int = 0
    initial_levels: tuple = (2.2, 2.1)
    zero_forecast_variance: bool = False
    cases: tuple = (0, 7, 14, 21)
    controller: MpcConfig = field(default_factory=MpcConfig)
    pv: SyntheticPvGenerator = field(default_factory=SyntheticPvGenerator)
    network: NonlinearNetwork = field(default_factory=default_network)
    price: tuple = ()
    demand_base: tuple = ()

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be at least 1")
        if self.history_days < 5:
            raise ValueError("history_days must be at least 5")
        if self.pv_start_day < 0 or any(c < 0 for c in self.cases):
            raise ValueError("PV day offsets must be nonnegative")
        if not self.cases:
            raise ValueError("cases must not be empty")
        steps = self.controller.steps_per_day
        if not self.price:
            self.price = tuple(float(v) for v in default_price_profile())
        if not self.demand_base:
            self.demand_base = tuple(float(v) for v in default_demand_profile())
        self.price = tuple(float(v) for v in self.price)
        self.demand_base = tuple(float(v) for v in self.demand_base)
        if len(self.price) != steps or len(self.demand_base) != steps:
            raise ValueError("price and demand profiles must cover one day")
        self.initial_levels = tuple(float(v) for v in self.initial_levels)
        if len(self.initial_levels) != self.network.n_tanks:
            raise ValueError("initial levels must match the tank count")

    def to_dict(self) -> dict:
        return {
            "days": self.days, "history_days": self.history_days,
            "seed": self.seed, "pv_start_day": self.pv_start_day,
            "initial_levels": list(self.initial_levels),
            "zero_forecast_variance": self.zero_forecast_variance,
            "cases": list(self.cases),
            "controller": self.controller.to_dict(),
            "pv": self.pv.to_dict(),
            "network": json.loads(self.network.to_json()),
            "price": list(self.price),
            "demand_base": list(self.demand_base),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment settings: {sorted(unknown)}")
        data = dict(data)
        if "controller" in data:
            data["controller"] = MpcConfig.from_dict(data["controller"])
        if "pv" in data:
            data["pv"] = SyntheticPvGenerator.from_dict(data["pv"])
        if "network" in data:
            data["network"] = NonlinearNetwork.from_json(
                json.dumps(data["network"]))
        for key in ("initial_levels", "cases", "price", "demand_base"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass
class Metrics:
    """Realized performance of one closed-loop run on the truth plant."""

    method: str
    total_cost: float
    grid_energy_kwh: float
    pv_used_kwh: float
    pump_energy_kwh: float
    pv_share: float
    violations: int
    fallback_steps: int
    level_min: tuple
    level_max: tuple
    per_day: tuple

    def __post_init__(self):
        if not -1e-9 <= self.pv_share <= 1.0 + 1e-9:
            raise ValueError("pv_share must lie in [0, 1]")
        if self.grid_energy_kwh > self.pump_energy_kwh * (1.0 + 1e-9) + 1e-9:
            raise ValueError("grid energy cannot exceed pump energy")

    def to_json(self) -> str:
        payload = {
            "method": self.method,
            "total_cost": self.total_cost,
            "grid_energy_kwh": self.grid_energy_kwh,
            "pv_used_kwh": self.pv_used_kwh,
            "pump_energy_kwh": self.pump_energy_kwh,
            "pv_share": self.pv_share,
            "violations": self.violations,
            "fallback_steps": self.fallback_steps,
            "level_min": list(self.level_min),
            "level_max": list(self.level_max),
            "per_day": [dict(day) for day in self.per_day],
        }
        return json.dumps(payload, sort_keys=True, indent=2)


@dataclass
class RunResult:
    """Metrics plus the raw per-step trace of one closed-loop run."""

    method: str
    metrics: Metrics
    trace: list
    inputs: np.ndarray
    objectives: np.ndarray


@dataclass
class ExperimentSetup:
    """Shared, method-independent state of one experiment case.

    Built once by :func:`prepare_experiment` and passed to both closed-loop
    runs so stochastic and deterministic control face identical data.  The
    forecaster is stored as a serialized snapshot; each run restores its
    own copy because the midnight roll mutates it.
    """

    config: ExperimentConfig
    identification: IdentificationReport
    periodic: PeriodicReference
    pv_days: list
    demand_days: np.ndarray
    forecaster_snapshot: str
    pv_multiplier: float
    baseline_kwh: float

    def fresh_forecaster(self) -> Forecaster:
        return Forecaster.from_json(self.forecaster_snapshot)


def _scenario_seed(seed: int, day: int, hour: int) -> int:
    entropy = (int(seed), int(day), int(hour))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def derived_seeds(seed: int) -> tuple[int, int, int]:
    """Independent (pv, demand, identification) seeds from the master seed.

    Split out so tools that run a single stage (say, identification alone)
    land on the same streams as the full experiment.
    """
    children = np.random.SeedSequence(seed).spawn(3)
    pv_seed, demand_seed, ident_seed = (
        int(s.generate_state(1)[0]) for s in children)
    return pv_seed, demand_seed, ident_seed


def prepare_experiment(config: ExperimentConfig) -> ExperimentSetup:
    """Identify, anchor, generate and scale everything a run needs."""
    cfg = config.controller
    grid = SamplingGrid(day_hours=cfg.day_hours, step_hours=cfg.dt_pv_hours)
    pv_seed, demand_seed, ident_seed = derived_seeds(config.seed)

    design = ExcitationDesign(seed=ident_seed, u_max=cfg.u_max)
    identification = identify_linear_model(config.network, design,
                                           cfg.dt_hours)
    demand_base = np.asarray(config.demand_base, dtype=float)
    price = np.asarray(config.price, dtype=float)
    periodic = solve_periodic(identification.model, demand_base, price, cfg)

    total_days = config.pv_start_day + config.history_days + config.days
    raw = config.pv.generate(total_days, grid, pv_seed)
    baseline = rule_based_baseline(config.network, demand_base,
                                   config.initial_levels, cfg.power_factor,
                                   cfg.u_max)
    scaled, multiplier = scale_pv_to_pump_average(raw, baseline, grid)

    forecaster = Forecaster(grid=grid)
    history = scaled[config.pv_start_day:
                     config.pv_start_day + config.history_days]
    for i, day in enumerate(history):
        forecaster.observe_day(DailyProfile(samples=day.samples, day_index=i))
    if (forecaster.arma is None or forecaster.error_model is None
            or forecaster.obs_variance is None):
        raise InsufficientHistory(
            "history window too short or too dark to fit forecast models")

    first = config.pv_start_day + config.history_days
    pv_days = [DailyProfile(samples=scaled[first + d].samples, day_index=d)
               for d in range(config.days)]
    pool = sample_demand_days(demand_base, config.days, demand_seed)
    pool_mean = pool.mean(axis=0)
    demand_days = np.stack([
        perturbed_demand(demand_base, pool[d], pool_mean)
        for d in range(config.days)])

    return ExperimentSetup(config=config, identification=identification,
                           periodic=periodic, pv_days=pv_days,
                           demand_days=demand_days,
                           forecaster_snapshot=forecaster.to_json(),
                           pv_multiplier=multiplier, baseline_kwh=baseline)


def _build_scenarios(method, forecaster, config, pv_day, day, hour):
    """Scenario set (stochastic) or conditional-mean set (deterministic)."""
    cfg = config.controller
    sub = cfg.subslots_per_step
    start_slot = hour * sub
    prior = forecaster.night_belief()
    error_model = forecaster.error_model
    if config.zero_forecast_variance:
        prior = GaussianBelief(mean=prior.mean, variance=0.0)
        error_model = error_model.zero_variance_copy()
    shape = forecaster.shape
    observed = pv_day[:start_slot]
    rise = detect_sunrise(observed, forecaster.sunrise_limit,
                          forecaster.sunrise_run)
    base_seed = _scenario_seed(config.seed, day, hour)
    current = start_slot - 1

    if method == "so":
        if rise is None:
            return sample_night(prior, shape, error_model, cfg.n_scenarios,
                                base_seed, start_slot=start_slot)
        chain = build_delta_chain(prior.mean, shape, observed, rise, current)
        posterior = posterior_after_observations(
            prior, shape, error_model, observed[rise + 1:current + 1],
            chain, first_slot=rise + 1)
        return sample_day(posterior, shape, error_model, observed, current,
                          cfg.n_scenarios, base_seed, start_slot=start_slot)

    if rise is None:
        return mean_scenario(prior.mean, shape, error_model,
                             start_slot=start_slot)
    if config.zero_forecast_variance:
        center = prior.mean
    else:
        fused, _ = forecaster.intraday_belief(observed)
        center = fused.mean
    return mean_scenario(center, shape, error_model, observed_day=observed,
                         current_slot=current, start_slot=start_slot)


def run_closed_loop(config: ExperimentConfig, method: str,
                    setup: Optional[ExperimentSetup] = None) -> RunResult:
    """Hourly receding-horizon control of the truth plant over the campaign.

    ``method`` is ``so``/``stochastic`` or ``do``/``deterministic``.  Every
    step solves the remaining-day problem, applies the first input to the
    nonlinear plant (or the fallback rule when the solve is unusable), and
    accrues realized cost against true PV on the quarter-hour grid, with
    grid power ``max(0, P_pump - P_pv)`` and the pump power evaluated at
    the step's starting truth state.
    """
    method = _METHOD_ALIASES.get(str(method).lower())
    if method is None:
        raise ValueError("method must be 'so' or 'do'")
    if setup is None:
        setup = prepare_experiment(config)
    cfg = config.controller
    net = config.network
    model = setup.identification.model
    sub = cfg.subslots_per_step
    steps_per_day = cfg.steps_per_day
    price = np.asarray(config.price, dtype=float)
    anchor = setup.periodic.anchor

    forecaster = setup.fresh_forecaster()
    h_true = np.asarray(config.initial_levels, dtype=float).copy()
    previous: Optional[ControlSolution] = None
    trace: list[dict] = []
    inputs: list[np.ndarray] = []
    objectives: list[float] = []
    per_day: list[dict] = []
    level_min = h_true.copy()
    level_max = h_true.copy()
    violations = 0
    fallbacks = 0
    totals = {"cost": 0.0, "grid": 0.0, "pv": 0.0, "pump": 0.0}

    for day in range(config.days):
        pv_day = setup.pv_days[day].samples
        demand_day = setup.demand_days[day]
        if day > 0:
            forecaster.observe_day(DailyProfile(
                samples=setup.pv_days[day - 1].samples,
                day_index=forecaster.shape_state.day_index))
        day_totals = {"cost": 0.0, "grid": 0.0, "pv": 0.0, "pump": 0.0}

        for hour in range(steps_per_day):
            scen = _build_scenarios(method, forecaster, config, pv_day,
                                    day, hour)
            t_abs = day * cfg.day_hours + hour * cfg.dt_hours
            problem = MpcProblem.from_scenarios(
                model, cfg, h_true, t_abs, demand_day[hour:], price[hour:],
                scen, anchor)
            if hour == 0:
                warm = setup.periodic.u
            elif previous is not None \
                    and previous.u.shape[0] == problem.horizon + 1:
                warm = previous.u[1:]
            else:
                warm = None
            solver = solve_mpc if method == "so" else solve_deterministic
            solution = solver(problem, warm_start=warm)
            objectives.append(solution.objective)

            if solution.status == "converged":
                u_apply = solution.u[0].copy()
            else:
                fallbacks += 1
                try:
                    u_apply = fallback_input(previous, setup.periodic, hour)
                except NoHistory:
                    u_apply = setup.periodic.u[hour % steps_per_day].copy()

            pout = pump_outlet_pressure(net, h_true, u_apply)
            pump_kw = pump_power(u_apply, pout, net.pump_inlet_pressure,
                                 cfg.power_factor)
            window = pv_day[hour * sub:(hour + 1) * sub]
            step = {"cost": 0.0, "grid": 0.0, "pv": 0.0,
                    "pump": pump_kw * cfg.dt_hours}
            for pv_kw in window:
                grid_kw = max(0.0, pump_kw - pv_kw)
                step["grid"] += grid_kw * cfg.dt_pv_hours
                step["pv"] += min(pump_kw, pv_kw) * cfg.dt_pv_hours
                step["cost"] += price[hour] * grid_kw * cfg.dt_pv_hours

            state, flags = simulate_step(net, PlantState(h=h_true), u_apply,
                                         float(demand_day[hour]),
                                         cfg.dt_hours)
            violations += len(flags.empty) + len(flags.overflow)

            row = {"t": t_abs, "day": day, "hour": hour, "method": method}
            for i, v in enumerate(u_apply):
                row[f"u{i + 1}"] = float(v)
            for i, v in enumerate(h_true):
                row[f"h{i + 1}"] = float(v)
            row.update({
                "demand": float(demand_day[hour]),
                "price": float(price[hour]),
                "pv_kw_mean": float(np.mean(window)),
                "pump_kw": pump_kw,
                "grid_kwh": step["grid"],
                "pv_used_kwh": step["pv"],
                "cost": step["cost"],
                "status": solution.status,
                "iterations": solution.iterations,
            })
            trace.append(row)
            inputs.append(u_apply)
            for key in day_totals:
                day_totals[key] += step[key]

            previous = solution
            h_true = state.h
            level_min = np.minimum(level_min, h_true)
            level_max = np.maximum(level_max, h_true)

        share = day_totals["pv"] / day_totals["pump"] \
            if day_totals["pump"] > 0 else 0.0
        per_day.append({
            "day": day, "cost": day_totals["cost"],
            "grid_kwh": day_totals["grid"], "pv_used_kwh": day_totals["pv"],
            "pump_kwh": day_totals["pump"], "pv_share": share,
        })
        for key in totals:
            totals[key] += day_totals[key]

    share = totals["pv"] / totals["pump"] if totals["pump"] > 0 else 0.0
    metrics = Metrics(
        method=method, total_cost=totals["cost"],
        grid_energy_kwh=totals["grid"], pv_used_kwh=totals["pv"],
        pump_energy_kwh=totals["pump"], pv_share=share,
        violations=violations, fallback_steps=fallbacks,
        level_min=tuple(float(v) for v in level_min),
        level_max=tuple(float(v) for v in level_max),
        per_day=tuple(per_day))
    return RunResult(method=method, metrics=metrics, trace=trace,
                     inputs=np.asarray(inputs), objectives=np.asarray(objectives))


def write_trace_csv(path, rows) -> None:
    """Write closed-loop trace rows with a stable column order."""
    if not rows:
        raise ValueError("trace is empty")
    header = list(rows[0])
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for key in header:
            value = row[key]
            cells.append(repr(float(value)) if isinstance(value, float)
                         else str(value))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class ComparisonReport:
    """Per-case and aggregate stochastic/deterministic ratio table."""

    rows: tuple
    metrics: dict

    def to_csv(self, path) -> None:
        lines = ["case,cost_ratio,grid_energy_ratio"]
        for label, cost_ratio, grid_ratio in self.rows:
            lines.append(f"{label},{repr(float(cost_ratio))},"
                         f"{repr(float(grid_ratio))}")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def _ratio(numerator: float, denominator: float) -> float:
    if denominator == 0.0:
        return 1.0 if numerator == 0.0 else float("inf")
    return numerator / denominator


def compare_so_do(config: ExperimentConfig,
                  methods: tuple = ("so", "do")) -> ComparisonReport:
    """Matched-seed campaign over the configured PV cases.

    Each case shifts the PV window (``config.cases``), shares one setup
    between both methods, and contributes a ratio row
    ``methods[0] / methods[1]``; the final row aggregates energy and cost
    over all cases before taking ratios.
    """
    if len(methods) != 2:
        raise ValueError("exactly two methods are compared")
    rows = []
    metrics: dict = {}
    sums = {m: {"cost": 0.0, "grid": 0.0} for m in range(2)}
    for index, offset in enumerate(config.cases, start=1):
        case_config = replace(config, pv_start_day=offset)
        setup = prepare_experiment(case_config)
        results = [run_closed_loop(case_config, method, setup)
                   for method in methods]
        for slot, result in enumerate(results):
            sums[slot]["cost"] += result.metrics.total_cost
            sums[slot]["grid"] += result.metrics.grid_energy_kwh
        rows.append((str(index),
                     _ratio(results[0].metrics.total_cost,
                            results[1].metrics.total_cost),
                     _ratio(results[0].metrics.grid_energy_kwh,
                            results[1].metrics.grid_energy_kwh)))
        metrics[str(index)] = {m: r.metrics for m, r in zip(methods, results)}
    rows.append(("total",
                 _ratio(sums[0]["cost"], sums[1]["cost"]),
                 _ratio(sums[0]["grid"], sums[1]["grid"])))
    return ComparisonReport(rows=tuple(rows), metrics=metrics)
