"""Day-ahead and intra-day probabilistic forecasting of PV production.

The model factors a day of PV power into a slow-moving normalized daily
*shape* and a scalar daily *multiplier*:

* the shape is an exponentially weighted moving average of max-normalized
  daily profiles,
* the multiplier follows an ARMA(1,1) process fitted by conditional sum of
  squares, giving a Gaussian night-ahead belief,
* after sunrise, windowed least squares on the samples observed so far gives
  an intra-day multiplier estimate that is fused with the prior by
  precision-weighted Gaussian conjugacy,
* slot-wise residuals around the multiplied shape follow per-slot AR(1)
  models used for scenario generation and conditional updates.

All model containers are plain frozen dataclasses and serialize to JSON
losslessly (floats round-trip exactly through ``repr``).
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .optimizer import NlpProblem, minimize

__all__ = [
    "AllZeroDay", "DegenerateShape", "InsufficientHistory", "NonStationaryFit",
    "SamplingGrid", "DailyProfile", "ShapeState", "GaussianBelief",
    "MultiplierModel", "ErrorModel", "ObservationVarianceTable",
    "normalize_day", "update_shape", "optimal_multiplier", "fit_arma11",
    "predict_night", "detect_sunrise", "daytime_multiplier_estimate",
    "fuse_bayes", "fit_error_model", "daytime_mask", "point_forecast",
    "Forecaster", "load_pv_csv", "save_pv_csv",
]

_VAR_FLOOR = 1e-12


class AllZeroDay(ValueError):
    """A daily profile with no positive sample cannot be normalized."""


class DegenerateShape(ValueError):
    """The shape is identically zero on the requested window."""


class InsufficientHistory(ValueError):
    """Not enough complete days to fit the requested model."""


class NonStationaryFit(UserWarning):
    """The ARMA fit converged on the stationarity box boundary."""


@dataclass(frozen=True)
class SamplingGrid:
    """Uniform within-day sampling grid.

    ``day_hours / step_hours`` must be an integer; ``slots_per_day`` is that
    count.  Slot ``i`` is the instantaneous sample at ``i * step_hours``
    hours past midnight, available from that instant on.
    """

    day_hours: float = 24.0
    step_hours: float = 0.25

    def __post_init__(self):
        if self.day_hours <= 0 or self.step_hours <= 0:
            raise ValueError("grid lengths must be positive")
        ratio = self.day_hours / self.step_hours
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("day_hours must be an integer multiple of step_hours")

    @property
    def slots_per_day(self) -> int:
        return int(round(self.day_hours / self.step_hours))

    def slot_of(self, t_hours: float) -> int:
        """Within-day slot index of wall-clock time ``t_hours``."""
        return int(math.floor(t_hours / self.step_hours + 1e-9)) % self.slots_per_day

    def day_of(self, t_hours: float) -> int:
        return int(math.floor(t_hours / self.day_hours + 1e-9))


@dataclass(frozen=True)
class DailyProfile:
    """One complete day of non-negative PV power samples."""

    samples: np.ndarray
    day_index: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if np.any(samples < 0) or not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite and non-negative")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class ShapeState:
    """EWMA state of the normalized daily shape, valid for day ``day_index``."""

    shape: np.ndarray
    alpha: float
    day_index: int

    def __post_init__(self):
        shape = np.asarray(self.shape, dtype=float)
        if np.any(shape < 0) or np.any(shape > 1.0 + 1e-12):
            raise ValueError("shape values must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        object.__setattr__(self, "shape", shape)


@dataclass(frozen=True)
class GaussianBelief:
    """Scalar Gaussian belief.

    ``variance == 0`` denotes a point mass; it occurs only in the
    zero-variance degeneracy mode where all forecast uncertainty is switched
    off, and fusion/conditioning then leave the belief unchanged.
    """

    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be >= 0")


def normalize_day(day: DailyProfile) -> np.ndarray:
    """Scale a day to peak 1.

    Raises
    ------
    AllZeroDay
        If the day's maximum is 0 (nothing to normalize against).
    """
    peak = float(np.max(day.samples)) if day.samples.size else 0.0
    if peak <= 0.0:
        raise AllZeroDay(f"day {day.day_index} has no positive samples")
    return day.samples / peak


def update_shape(state: ShapeState, day: DailyProfile) -> ShapeState:
    """EWMA step: blend yesterday's normalized profile into the shape.

    ``shape_new = alpha * normalize(day) + (1 - alpha) * shape``.  A day
    rejected by :class:`AllZeroDay` leaves the shape untouched (only the day
    counter advances), so dark days do not erode the learned shape.
    """
    try:
        x = normalize_day(day)
    except AllZeroDay:
        return replace(state, day_index=state.day_index + 1)
    if x.shape != state.shape.shape:
        raise ValueError("profile length does not match shape length")
    blended = state.alpha * x + (1.0 - state.alpha) * state.shape
    return ShapeState(shape=np.minimum(blended, 1.0), alpha=state.alpha,
                      day_index=state.day_index + 1)


def optimal_multiplier(shape: np.ndarray, day: DailyProfile | np.ndarray) -> float:
    """Least-squares scale of ``shape`` onto a day's samples.

    Closed form of ``argmin_p sum_i (p*Y_i - X_i)^2``:
    ``p = sum(Y*X) / sum(Y*Y)``.

    Raises
    ------
    DegenerateShape
        If the shape is identically zero (zero denominator).
    """
    y = np.asarray(shape, dtype=float)
    x = day.samples if isinstance(day, DailyProfile) else np.asarray(day, dtype=float)
    denom = float(np.dot(y, y))
    if denom <= 0.0:
        raise DegenerateShape("shape has no support on the window")
    return float(np.dot(y, x) / denom)


@dataclass(frozen=True)
class MultiplierModel:
    """ARMA(1,1) model of the daily multiplier sequence.

    ``p_t = mu + phi * p_{t-1} + theta * eps_{t-1} + eps_t`` with iid
    Gaussian innovations.  ``residuals`` are the in-sample innovations from
    the conditional-sum-of-squares recursion (``residuals[0] == 0`` by
    convention) and ``sigma2_prior`` is their sample variance, used as the
    night-ahead predictive variance.
    """

    mu: float
    phi: float
    theta: float
    residuals: np.ndarray
    sigma2_prior: float

    def __post_init__(self):
        if abs(self.phi) >= 1.0 or abs(self.theta) >= 1.0:
            raise ValueError("phi and theta must satisfy |.| < 1")
        if self.sigma2_prior <= 0.0:
            raise ValueError("sigma2_prior must be > 0")
        object.__setattr__(self, "residuals",
                           np.asarray(self.residuals, dtype=float))


def _css_residuals(series: np.ndarray, mu: float, phi: float,
                   theta: float) -> np.ndarray:
    """Innovation recursion ``eps_t = p_t - mu - phi p_{t-1} - theta eps_{t-1}``.

    Returns the full-length residual vector with ``eps[0] = 0``.
    """
    rhs = series[1:] - mu - phi * series[:-1]
    eps_tail = lfilter([1.0], [1.0, theta], rhs)
    return np.concatenate(([0.0], eps_tail))


def _css_objective(series: np.ndarray):
    """Sum-of-squares objective with analytic gradient for the CSS fit."""
    p_prev = series[:-1]

    def objective(x: np.ndarray):
        mu, phi, theta = x
        a = [1.0, theta]
        rhs = series[1:] - mu - phi * p_prev
        eps = lfilter([1.0], a, rhs)
        # Sensitivities satisfy the same linear recursion driven by the
        # partial derivatives of the right-hand side.
        d_mu = lfilter([1.0], a, -np.ones_like(rhs))
        d_phi = lfilter([1.0], a, -p_prev)
        eps_prev = np.concatenate(([0.0], eps[:-1]))
        d_theta = lfilter([1.0], a, -eps_prev)
        f = float(np.dot(eps, eps))
        grad = 2.0 * np.array([np.dot(eps, d_mu), np.dot(eps, d_phi),
                               np.dot(eps, d_theta)])
        return f, grad

    return objective


def fit_arma11(series: Sequence[float]) -> MultiplierModel:
    """Fit the ARMA(1,1) multiplier model by conditional sum of squares.

    The recursion is conditioned on ``eps_1 = 0``; (mu, phi, theta) minimize
    the summed squared innovations over a box ``|phi|, |theta| <= 0.999``
    with a small multistart to avoid CSS local minima.  Series shorter than
    10 observations fall back to ``(mean, 0, 0)``.

    Warns
    -----
    NonStationaryFit
        When the minimizer lands on the stationarity box boundary; the
        clamped value 0.999 is kept.
    """
    p = np.asarray(series, dtype=float)
    if p.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if p.size < 10:
        mu = float(np.mean(p)) if p.size else 0.0
        residuals = _css_residuals(p, mu, 0.0, 0.0) if p.size else np.zeros(0)
        tail = residuals[1:]
        sigma2 = float(np.var(tail, ddof=1)) if tail.size >= 2 else 0.0
        return MultiplierModel(mu=mu, phi=0.0, theta=0.0, residuals=residuals,
                               sigma2_prior=max(sigma2, _VAR_FLOOR))

    mean = float(np.mean(p))
    spread = float(np.std(p)) + abs(mean) + 1.0
    lower = np.array([mean - 10.0 * spread, -0.999, -0.999])
    upper = np.array([mean + 10.0 * spread, 0.999, 0.999])
    objective = _css_objective(p)

    best = None
    for phi0, theta0 in ((0.0, 0.0), (0.5, 0.0), (0.8, 0.2), (-0.5, 0.0),
                         (0.3, -0.3), (0.9, 0.3)):
        x0 = np.array([mean * (1.0 - phi0), phi0, theta0])
        report = minimize(NlpProblem(3, lower, upper, objective, x0),
                          tol=1e-10, max_iter=300)
        if best is None or report.f < best.f:
            best = report

    mu, phi, theta = (float(v) for v in best.x)
    if abs(phi) >= 0.999 - 1e-9 or abs(theta) >= 0.999 - 1e-9:
        warnings.warn("ARMA fit on the stationarity boundary; clamped at 0.999",
                      NonStationaryFit)
    residuals = _css_residuals(p, mu, phi, theta)
    tail = residuals[1:]
    sigma2 = float(np.var(tail, ddof=1)) if tail.size >= 2 else 0.0
    return MultiplierModel(mu=mu, phi=phi, theta=theta, residuals=residuals,
                           sigma2_prior=max(sigma2, _VAR_FLOOR))


def predict_night(model: MultiplierModel, p_prev: float) -> GaussianBelief:
    """Night-ahead belief over tomorrow's multiplier.

    Mean is the one-step ARMA prediction from the last observed multiplier
    and the last in-sample innovation; variance is the innovation variance.
    """
    eps_prev = float(model.residuals[-1]) if model.residuals.size else 0.0
    mean = model.mu + model.phi * p_prev + model.theta * eps_prev
    return GaussianBelief(mean=mean, variance=model.sigma2_prior)


def detect_sunrise(samples: Sequence[float], limit: float,
                   run_length: int = 3) -> Optional[int]:
    """First index where ``run_length`` consecutive samples exceed ``limit``.

    Returns ``None`` when no such run exists in the (possibly partial) day.
    """
    x = np.asarray(samples, dtype=float)
    if run_length < 1:
        raise ValueError("run_length must be >= 1")
    above = x > limit
    run = 0
    for i, flag in enumerate(above):
        run = run + 1 if flag else 0
        if run >= run_length:
            return i - run_length + 1
    return None


def daytime_mask(samples: Sequence[float], limit: float,
                 run_length: int = 3) -> np.ndarray:
    """Boolean mask of the day's production window ``[sunrise, sunset]``.

    Sunset is detected symmetrically on the reversed profile.  All-false
    when no sunrise run exists.
    """
    x = np.asarray(samples, dtype=float)
    mask = np.zeros(x.size, dtype=bool)
    rise = detect_sunrise(x, limit, run_length)
    if rise is None:
        return mask
    rev = detect_sunrise(x[::-1], limit, run_length)
    sunset = x.size - 1 - rev
    mask[rise:sunset + 1] = True
    return mask


def daytime_multiplier_estimate(shape: np.ndarray, observed: Sequence[float],
                                sunrise: int) -> float:
    """Windowed least-squares multiplier from the samples seen since sunrise.

    ``observed`` holds the samples at slots ``sunrise .. sunrise+m``; the
    estimate is the closed-form least squares of the matching shape window.
    """
    obs = np.asarray(observed, dtype=float)
    window = np.asarray(shape, dtype=float)[sunrise:sunrise + obs.size]
    if window.size != obs.size:
        raise ValueError("observation window exceeds the day")
    return optimal_multiplier(window, obs)


def fuse_bayes(prior: GaussianBelief, observation: float,
               sigma2_m: float) -> GaussianBelief:
    """Precision-weighted fusion of a Gaussian prior with a noisy estimate.

    Conjugate update for a Gaussian observation of the multiplier with
    variance ``sigma2_m``.  A point-mass prior (variance 0) is returned
    unchanged; a zero observation variance yields a point mass at the
    observation.
    """
    if prior.variance == 0.0:
        return prior
    if sigma2_m < 0.0:
        raise ValueError("observation variance must be >= 0")
    if sigma2_m == 0.0:
        return GaussianBelief(mean=float(observation), variance=0.0)
    precision = 1.0 / prior.variance + 1.0 / sigma2_m
    variance = 1.0 / precision
    mean = variance * (prior.mean / prior.variance + observation / sigma2_m)
    return GaussianBelief(mean=mean, variance=variance)


@dataclass(frozen=True)
class ErrorModel:
    """Per-slot AR(1) models of residuals around the multiplied shape.

    ``daytime[i]`` marks the slots of the typical production window; the
    first of them (the sunrise anchor) carries error exactly 0 by
    convention, and every later daytime slot is *modeled*: its residual
    follows ``delta_i = phi[i] * delta_{i-1} + eps``, ``eps ~ N(0,
    sigma2[i])``.  Nighttime slots carry no model (errors are identically
    zero).
    """

    phi: np.ndarray
    sigma2: np.ndarray
    daytime: np.ndarray
    modeled: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        object.__setattr__(self, "sigma2", np.asarray(self.sigma2, dtype=float))
        object.__setattr__(self, "daytime", np.asarray(self.daytime, dtype=bool))
        object.__setattr__(self, "modeled", np.asarray(self.modeled, dtype=bool))
        if np.any(self.sigma2[self.modeled] < 0.0):
            raise ValueError("modeled slots need sigma2 >= 0")

    @property
    def anchor(self) -> Optional[int]:
        idx = np.flatnonzero(self.daytime)
        return int(idx[0]) if idx.size else None

    def zero_variance_copy(self) -> "ErrorModel":
        """Same structure and AR coefficients with every variance zeroed.

        Under this copy scenario draws collapse onto the conditional mean,
        which is how the sampler is forced degenerate in experiments.
        """
        return ErrorModel(phi=self.phi, sigma2=np.zeros_like(self.sigma2),
                          daytime=self.daytime, modeled=self.modeled)

    def has(self, slot: int) -> bool:
        return bool(self.modeled[slot])


def fit_error_model(deltas: np.ndarray, daytime: np.ndarray,
                    min_days: int = 5) -> ErrorModel:
    """Fit per-slot AR(1) residual models across historical days.

    Parameters
    ----------
    deltas : ndarray, shape (days, slots)
        Residuals ``X - p*Y`` per day and slot.
    daytime : ndarray of bool, same shape
        Per-day production-window classification.
    min_days : int
        Minimum number of usable days.

    A slot belongs to the typical window when it is daytime on more than
    half of the days.  For each such slot past the anchor, ``phi`` is the
    no-intercept least squares of ``delta_i`` on ``delta_{i-1}`` over days
    where both slots are daytime, and ``sigma2`` the residual variance.
    Slots of the window that lack regression pairs inherit the nearest
    fitted slot's parameters.

    Raises
    ------
    InsufficientHistory
        With fewer than ``min_days`` days of history.
    """
    deltas = np.asarray(deltas, dtype=float)
    daytime = np.asarray(daytime, dtype=bool)
    if deltas.ndim != 2 or deltas.shape != daytime.shape:
        raise ValueError("deltas and daytime must share shape (days, slots)")
    n_days, n_slots = deltas.shape
    if n_days < min_days:
        raise InsufficientHistory(
            f"need >= {min_days} days, have {n_days}")

    typical = daytime.sum(axis=0) > n_days / 2.0
    phi = np.zeros(n_slots)
    sigma2 = np.zeros(n_slots)
    modeled = np.zeros(n_slots, dtype=bool)
    fitted = np.zeros(n_slots, dtype=bool)

    window = np.flatnonzero(typical)
    for i in window[1:]:
        usable = daytime[:, i] & daytime[:, i - 1]
        if usable.sum() < min_days:
            continue
        x = deltas[usable, i - 1]
        y = deltas[usable, i]
        sxx = float(np.dot(x, x))
        if sxx <= 0.0:
            continue
        phi_i = float(np.dot(x, y) / sxx)
        resid = y - phi_i * x
        var = float(np.var(resid, ddof=1)) if resid.size >= 2 else 0.0
        phi[i] = phi_i
        sigma2[i] = max(var, _VAR_FLOOR)
        fitted[i] = True
        modeled[i] = True

    # Window slots beyond the anchor that could not be regressed borrow the
    # nearest fitted slot so every modeled slot has positive variance.
    fitted_idx = np.flatnonzero(fitted)
    if fitted_idx.size:
        for i in window[1:]:
            if not fitted[i]:
                j = fitted_idx[np.argmin(np.abs(fitted_idx - i))]
                phi[i] = phi[j]
                sigma2[i] = sigma2[j]
                modeled[i] = True

    return ErrorModel(phi=phi, sigma2=sigma2, daytime=typical, modeled=modeled)


@dataclass(frozen=True)
class ObservationVarianceTable:
    """Historical variance of the windowed estimate error by elapsed steps.

    Entry ``m`` is the sample variance of ``p_day - estimate_after_m_steps``
    across history.  ``counts`` records how many days populated each entry;
    entries with fewer than 2 samples borrow the nearest populated one at
    query time (queries beyond the table reuse the last entry).
    """

    sigma2: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma2", np.asarray(self.sigma2, dtype=float))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=int))

    def variance_at(self, m: int) -> float:
        if self.sigma2.size == 0:
            raise InsufficientHistory("empty observation-variance table")
        populated = np.flatnonzero(self.counts >= 2)
        if populated.size == 0:
            raise InsufficientHistory("no populated variance entries")
        m = min(max(m, 0), self.sigma2.size - 1)
        if self.counts[m] >= 2:
            return float(self.sigma2[m])
        j = populated[np.argmin(np.abs(populated - m))]
        return float(self.sigma2[j])

    @staticmethod
    def from_samples(errors_by_m: Sequence[Sequence[float]]) -> "ObservationVarianceTable":
        sigma2 = np.zeros(len(errors_by_m))
        counts = np.zeros(len(errors_by_m), dtype=int)
        for m, errs in enumerate(errors_by_m):
            arr = np.asarray(errs, dtype=float)
            counts[m] = arr.size
            if arr.size >= 2:
                sigma2[m] = max(float(np.var(arr, ddof=1)), _VAR_FLOOR)
        return ObservationVarianceTable(sigma2=sigma2, counts=counts)


def point_forecast(shape: np.ndarray, belief: GaussianBelief) -> np.ndarray:
    """Expected day profile ``max(0, mean * shape)``."""
    return np.maximum(belief.mean * np.asarray(shape, dtype=float), 0.0)


def load_pv_csv(path) -> list[DailyProfile]:
    """Read ``day,slot,power_kw`` rows into per-day profiles.

    Days must be contiguous from 0 and each day must cover slots
    ``0..n-1`` exactly once; all days must share the same slot count.
    """
    by_day: dict[int, dict[int, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"day", "slot", "power_kw"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"PV CSV must have columns {sorted(required)}")
        for row in reader:
            by_day.setdefault(int(row["day"]), {})[int(row["slot"])] = float(row["power_kw"])
    if not by_day:
        raise ValueError("PV CSV holds no rows")
    days = sorted(by_day)
    n_slots = len(by_day[days[0]])
    profiles = []
    for expect, day in enumerate(days):
        if day != expect:
            raise ValueError("PV CSV days must be contiguous from 0")
        slots = by_day[day]
        if sorted(slots) != list(range(n_slots)):
            raise ValueError(f"day {day} does not cover slots 0..{n_slots - 1}")
        profiles.append(DailyProfile(
            samples=np.array([slots[i] for i in range(n_slots)]), day_index=day))
    return profiles


def save_pv_csv(path, profiles: Sequence[DailyProfile]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "slot", "power_kw"])
        for day in profiles:
            for slot, value in enumerate(day.samples):
                writer.writerow([day.day_index, slot, repr(float(value))])


class Forecaster:
    """Stateful orchestrator of the full forecasting stack.

    Feed completed days through :meth:`observe_day` (the midnight roll);
    query :meth:`night_belief` for the day-ahead prior, and
    :meth:`intraday_belief` during the day for the fused estimate.  The
    residual history needed by the scenario engine (per-slot error model,
    current shape, prior) is exposed as attributes.
    """

    def __init__(self, grid: SamplingGrid, alpha: float = 0.3,
                 sunrise_limit_fraction: float = 0.01, sunrise_run: int = 3,
                 min_error_days: int = 5):
        self.grid = grid
        self.alpha = float(alpha)
        self.sunrise_limit_fraction = float(sunrise_limit_fraction)
        self.sunrise_run = int(sunrise_run)
        self.min_error_days = int(min_error_days)

        self.shape_state: Optional[ShapeState] = None
        self.running_max = 0.0
        self.multipliers: list[float] = []
        self.multiplier_valid: list[bool] = []
        self.deltas: list[np.ndarray] = []
        self.daytime_rows: list[np.ndarray] = []
        self.window_errors: list[list[float]] = []
        self.arma: Optional[MultiplierModel] = None
        self.error_model: Optional[ErrorModel] = None
        self.obs_variance: Optional[ObservationVarianceTable] = None

    # -- properties ---------------------------------------------------------

    @property
    def n_days(self) -> int:
        return len(self.multipliers)

    @property
    def sunrise_limit(self) -> float:
        return self.sunrise_limit_fraction * self.running_max

    @property
    def shape(self) -> np.ndarray:
        if self.shape_state is None:
            raise InsufficientHistory("no observed days yet")
        return self.shape_state.shape

    # -- midnight roll ------------------------------------------------------

    def observe_day(self, day: DailyProfile) -> None:
        """Absorb a completed day: multiplier, residuals, refits, shape EWMA."""
        x = day.samples
        if self.shape_state is not None and x.size != self.shape.size:
            raise ValueError("profile length changed mid-history")
        self.running_max = max(self.running_max, float(np.max(x)) if x.size else 0.0)

        if self.shape_state is None:
            # First day bootstraps the shape directly.
            try:
                shape0 = normalize_day(day)
            except AllZeroDay:
                shape0 = np.zeros_like(x)
            self.shape_state = ShapeState(shape=shape0, alpha=self.alpha,
                                          day_index=1)
            self._record_day(x, self.shape_state.shape)
            self._refit()
            return

        shape_today = self.shape  # the shape that was valid for this day
        self._record_day(x, shape_today)
        self.shape_state = update_shape(self.shape_state, day)
        self._refit()

    def _record_day(self, x: np.ndarray, shape: np.ndarray) -> None:
        mask = daytime_mask(x, self.sunrise_limit, self.sunrise_run)
        try:
            p = optimal_multiplier(shape, x)
            valid = bool(np.any(x > 0))
        except DegenerateShape:
            p, valid = 0.0, False
        if not np.any(x > 0):
            p, valid = 0.0, False
        self.multipliers.append(p)
        self.multiplier_valid.append(valid)
        self.deltas.append(x - p * shape)
        self.daytime_rows.append(mask)

        # Windowed-estimate errors for each elapsed-step count m, via prefix
        # sums of Y*X and Y*Y over the window that starts at sunrise.
        if valid:
            rise = detect_sunrise(x, self.sunrise_limit, self.sunrise_run)
            if rise is not None:
                y_win = shape[rise:]
                x_win = x[rise:]
                num = np.cumsum(y_win * x_win)
                den = np.cumsum(y_win * y_win)
                ok = den > 0
                estimates = np.where(ok, num / np.where(ok, den, 1.0), np.nan)
                for m, est in enumerate(estimates):
                    if not np.isfinite(est):
                        continue
                    while len(self.window_errors) <= m:
                        self.window_errors.append([])
                    self.window_errors[m].append(p - float(est))

    def _refit(self) -> None:
        valid_p = [p for p, ok in zip(self.multipliers, self.multiplier_valid) if ok]
        if valid_p:
            self.arma = fit_arma11(valid_p)
        rows = [(d, m) for d, m, ok in zip(self.deltas, self.daytime_rows,
                                           self.multiplier_valid) if ok]
        if len(rows) >= self.min_error_days:
            deltas = np.stack([r[0] for r in rows])
            masks = np.stack([r[1] for r in rows])
            try:
                self.error_model = fit_error_model(deltas, masks,
                                                   self.min_error_days)
            except InsufficientHistory:
                self.error_model = None
        if self.window_errors:
            self.obs_variance = ObservationVarianceTable.from_samples(
                self.window_errors)

    # -- queries ------------------------------------------------------------

    def night_belief(self) -> GaussianBelief:
        """Day-ahead prior from the ARMA model and the last valid multiplier."""
        if self.arma is None:
            raise InsufficientHistory("no multiplier history")
        p_prev = 0.0
        for p, ok in zip(reversed(self.multipliers),
                         reversed(self.multiplier_valid)):
            if ok:
                p_prev = p
                break
        return predict_night(self.arma, p_prev)

    def intraday_belief(self, observed: np.ndarray) -> tuple[GaussianBelief, Optional[int]]:
        """Fused belief given today's samples so far; also reports sunrise.

        Before sunrise (or without variance history) this is the night
        prior.  After sunrise the windowed least-squares estimate is fused
        with the prior using the historical variance for the elapsed window
        length.
        """
        prior = self.night_belief()
        observed = np.asarray(observed, dtype=float)
        rise = detect_sunrise(observed, self.sunrise_limit, self.sunrise_run)
        if rise is None or self.obs_variance is None:
            return prior, rise
        m = observed.size - 1 - rise
        try:
            estimate = daytime_multiplier_estimate(self.shape, observed[rise:], rise)
        except DegenerateShape:
            return prior, rise
        try:
            sigma2_m = self.obs_variance.variance_at(m)
        except InsufficientHistory:
            return prior, rise
        return fuse_bayes(prior, estimate, sigma2_m), rise

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        state = {
            "grid": {"day_hours": self.grid.day_hours,
                     "step_hours": self.grid.step_hours},
            "alpha": self.alpha,
            "sunrise_limit_fraction": self.sunrise_limit_fraction,
            "sunrise_run": self.sunrise_run,
            "min_error_days": self.min_error_days,
            "running_max": self.running_max,
            "shape": None if self.shape_state is None else {
                "shape": self.shape_state.shape.tolist(),
                "alpha": self.shape_state.alpha,
                "day_index": self.shape_state.day_index,
            },
            "multipliers": self.multipliers,
            "multiplier_valid": self.multiplier_valid,
            "deltas": [d.tolist() for d in self.deltas],
            "daytime_rows": [m.astype(int).tolist() for m in self.daytime_rows],
            "window_errors": self.window_errors,
            "arma": None if self.arma is None else {
                "mu": self.arma.mu, "phi": self.arma.phi,
                "theta": self.arma.theta,
                "residuals": self.arma.residuals.tolist(),
                "sigma2_prior": self.arma.sigma2_prior,
            },
            "error_model": None if self.error_model is None else {
                "phi": self.error_model.phi.tolist(),
                "sigma2": self.error_model.sigma2.tolist(),
                "daytime": self.error_model.daytime.astype(int).tolist(),
                "modeled": self.error_model.modeled.astype(int).tolist(),
            },
            "obs_variance": None if self.obs_variance is None else {
                "sigma2": self.obs_variance.sigma2.tolist(),
                "counts": self.obs_variance.counts.tolist(),
            },
        }
        return json.dumps(state, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Forecaster":
        state = json.loads(text)
        grid = SamplingGrid(day_hours=state["grid"]["day_hours"],
                            step_hours=state["grid"]["step_hours"])
        self = cls(grid, alpha=state["alpha"],
                   sunrise_limit_fraction=state["sunrise_limit_fraction"],
                   sunrise_run=state["sunrise_run"],
                   min_error_days=state["min_error_days"])
        self.running_max = state["running_max"]
        if state["shape"] is not None:
            self.shape_state = ShapeState(
                shape=np.array(state["shape"]["shape"]),
                alpha=state["shape"]["alpha"],
                day_index=state["shape"]["day_index"])
        self.multipliers = [float(v) for v in state["multipliers"]]
        self.multiplier_valid = [bool(v) for v in state["multiplier_valid"]]
        self.deltas = [np.array(d) for d in state["deltas"]]
        self.daytime_rows = [np.array(m, dtype=bool) for m in state["daytime_rows"]]
        self.window_errors = [list(map(float, e)) for e in state["window_errors"]]
        if state["arma"] is not None:
            self.arma = MultiplierModel(
                mu=state["arma"]["mu"], phi=state["arma"]["phi"],
                theta=state["arma"]["theta"],
                residuals=np.array(state["arma"]["residuals"]),
                sigma2_prior=state["arma"]["sigma2_prior"])
        if state["error_model"] is not None:
            self.error_model = ErrorModel(
                phi=np.array(state["error_model"]["phi"]),
                sigma2=np.array(state["error_model"]["sigma2"]),
                daytime=np.array(state["error_model"]["daytime"], dtype=bool),
                modeled=np.array(state["error_model"]["modeled"], dtype=bool))
        if state["obs_variance"] is not None:
            self.obs_variance = ObservationVarianceTable(
                sigma2=np.array(state["obs_variance"]["sigma2"]),
                counts=np.array(state["obs_variance"]["counts"], dtype=int))
        return self
