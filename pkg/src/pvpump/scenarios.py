"""Monte Carlo PV scenario generation for the stochastic controller.

A scenario is one possible remaining-day PV trajectory on the fine grid:
a daily multiplier drawn from the current belief, slot-wise AR(1) residuals
recursed from the sunrise anchor (error exactly 0 there), observed slots
frozen to their measured values, nighttime slots exactly 0, and everything
clamped at zero power.

Per-scenario RNG streams are seeded from ``(base_seed, scenario_index)`` so
scenario ``k`` does not depend on how many scenarios are requested.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .forecast import ErrorModel, GaussianBelief, SamplingGrid, DailyProfile

__all__ = [
    "Scenario", "ScenarioSet", "MultiplierPosterior", "OutOfRange",
    "posterior_after_observations", "build_delta_chain", "sample_night",
    "sample_day", "mean_scenario", "pv_power_at",
]


class OutOfRange(IndexError):
    """Time lookup outside the data's covered range."""


@dataclass(frozen=True)
class MultiplierPosterior:
    """Gaussian belief over the daily multiplier after conditioning."""

    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be >= 0")


@dataclass(frozen=True)
class Scenario:
    """One sampled remaining-day trajectory.

    ``pv_power[k]`` is the power at absolute slot ``start_slot + k``;
    ``seed`` records the stream identity and ``multiplier_draw`` the daily
    multiplier realization behind the trajectory.
    """

    pv_power: np.ndarray
    seed: int
    multiplier_draw: float

    def __post_init__(self):
        object.__setattr__(self, "pv_power",
                           np.asarray(self.pv_power, dtype=float))


@dataclass(frozen=True)
class ScenarioSet:
    """Scenarios generated at slot ``start_slot`` (``mode`` night or day)."""

    scenarios: tuple
    start_slot: int
    mode: str
    n_slots_day: int

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if self.mode not in ("night", "day"):
            raise ValueError("mode must be 'night' or 'day'")
        for sc in self.scenarios:
            if sc.pv_power.size != self.n_slots_day - self.start_slot:
                raise ValueError("scenario length must cover the remaining day")

    def __len__(self) -> int:
        return len(self.scenarios)

    def as_array(self) -> np.ndarray:
        """(S, remaining_slots) matrix of powers."""
        return np.stack([sc.pv_power for sc in self.scenarios])

    def to_csv(self, path) -> None:
        """Export as ``scenario,slot,power_kw`` rows (absolute slot index)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scenario", "slot", "power_kw"])
            for k, sc in enumerate(self.scenarios):
                for j, value in enumerate(sc.pv_power):
                    writer.writerow([k, self.start_slot + j, repr(float(value))])


def _scenario_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng((int(base_seed), int(index)))


def _scenario_tag(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((int(base_seed), int(index)))
               .generate_state(1)[0])


def posterior_after_observations(prior: GaussianBelief, shape: np.ndarray,
                                 error_model: ErrorModel,
                                 observed: Sequence[float],
                                 delta_chain: Sequence[float],
                                 first_slot: int) -> MultiplierPosterior:
    """Condition the multiplier prior on post-sunrise observations.

    Each observation at slot ``i`` contributes a Gaussian likelihood factor
    with mean ``p*Y_i + phi_i*delta_{i-1}`` (the chain value is a fixed
    input) and variance ``sigma2_i``, giving the conjugate closed form::

        precision = 1/var_prior + sum_i Y_i^2 / sigma2_i
        mean = var_post * (mean_prior/var_prior
                           + sum_i Y_i (X_i - phi_i delta_{i-1}) / sigma2_i)

    Parameters
    ----------
    observed : sequence
        ``X`` at slots ``first_slot .. first_slot + len - 1``.
    delta_chain : sequence
        Realized residuals at slots ``first_slot - 1 .. first_slot + len - 2``
        (see :func:`build_delta_chain`).
    first_slot : int
        Absolute slot of the first observation (sunrise slot + 1).

    Slots without an error-model entry are skipped.  A point-mass prior is
    returned unchanged.
    """
    observed = np.asarray(observed, dtype=float)
    delta_chain = np.asarray(delta_chain, dtype=float)
    if delta_chain.size != observed.size:
        raise ValueError("delta_chain must align one slot behind observed")
    if prior.variance == 0.0:
        return MultiplierPosterior(mean=prior.mean, variance=0.0)
    shape = np.asarray(shape, dtype=float)
    precision = 1.0 / prior.variance
    weighted = prior.mean / prior.variance
    for k, x in enumerate(observed):
        slot = first_slot + k
        if slot >= shape.size or not error_model.has(slot):
            continue
        y = shape[slot]
        s2 = error_model.sigma2[slot]
        innovation = x - error_model.phi[slot] * delta_chain[k]
        precision += y * y / s2
        weighted += y * innovation / s2
    variance = 1.0 / precision
    return MultiplierPosterior(mean=variance * weighted, variance=variance)


def build_delta_chain(p_ref: float, shape: np.ndarray,
                      observed_day: Sequence[float], sunrise: int,
                      current_slot: int) -> np.ndarray:
    """Residual chain implied by the observations under a reference multiplier.

    Returns ``delta`` at slots ``sunrise .. current_slot - 1`` with the
    sunrise anchor pinned to 0 and ``delta_i = X_i - p_ref * Y_i``
    afterwards; this is the fixed chain the conditional posterior consumes.
    """
    observed_day = np.asarray(observed_day, dtype=float)
    shape = np.asarray(shape, dtype=float)
    slots = np.arange(sunrise, current_slot)
    chain = observed_day[slots] - p_ref * shape[slots]
    if chain.size:
        chain[0] = 0.0
    return chain


def _trajectories(center: float, spread: float, shape: np.ndarray,
                  error_model: ErrorModel, observed: Optional[np.ndarray],
                  last_observed_slot: int, start_slot: int, base_seed: int,
                  n_scenarios: int,
                  zero_noise: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized sampler shared by night, day and mean trajectories.

    Returns ``(powers (S, L), multiplier draws (S,))``.  Slots up to
    ``last_observed_slot`` are frozen to ``observed`` and their residuals
    reconstructed as ``X - p*Y`` (except at the sunrise anchor, whose error
    is identically 0); later modeled slots recurse the AR(1) residuals per
    scenario; nighttime slots are exactly 0.  ``zero_noise`` pins all
    innovations to 0 for the conditional-mean trajectory.
    """
    n_slots = shape.size
    length = n_slots - start_slot
    draws = np.empty(n_scenarios)
    n_future = int(np.sum(error_model.modeled[max(last_observed_slot + 1, 0):]))
    eps = np.empty((n_scenarios, n_future))
    sd = np.sqrt(spread)
    for k in range(n_scenarios):
        rng = _scenario_rng(base_seed, k)
        draws[k] = center + sd * rng.standard_normal()
        eps[k] = rng.standard_normal(n_future)
    if zero_noise:
        eps[:] = 0.0

    powers = np.zeros((n_scenarios, length))
    delta = np.zeros(n_scenarios)
    anchor = error_model.anchor
    j = 0  # future-noise column
    for slot in range(n_slots):
        y = shape[slot]
        if observed is not None and slot <= last_observed_slot:
            x_col = np.full(n_scenarios, float(observed[slot]))
            if anchor is not None and slot == anchor:
                delta = np.zeros(n_scenarios)
            elif error_model.daytime[slot]:
                delta = observed[slot] - draws * y
        elif error_model.has(slot):
            sigma = np.sqrt(error_model.sigma2[slot])
            delta = error_model.phi[slot] * delta + sigma * eps[:, j]
            j += 1
            x_col = np.maximum(0.0, draws * y + delta)
        elif anchor is not None and slot == anchor:
            # Sunrise anchor: error identically zero.
            delta = np.zeros(n_scenarios)
            x_col = np.maximum(0.0, draws * y)
        else:
            x_col = np.zeros(n_scenarios)
        if slot >= start_slot:
            powers[:, slot - start_slot] = x_col
    return powers, draws


def _finalize(powers, draws, base_seed, start_slot, mode, n_slots):
    scenarios = tuple(
        Scenario(pv_power=powers[k], seed=_scenario_tag(base_seed, k),
                 multiplier_draw=float(draws[k]))
        for k in range(powers.shape[0]))
    return ScenarioSet(scenarios=scenarios, start_slot=start_slot, mode=mode,
                       n_slots_day=n_slots)


def sample_night(prior: GaussianBelief, shape: np.ndarray,
                 error_model: ErrorModel, n_scenarios: int, base_seed: int,
                 start_slot: int = 0) -> ScenarioSet:
    """Sample remaining-day scenarios before sunrise.

    Each scenario draws its multiplier from ``prior`` and recurses the
    slot-error AR(1) from the sunrise anchor (zero error there); nighttime
    slots are exactly 0 and power is clamped at 0.
    """
    if n_scenarios < 1:
        raise ValueError("need at least one scenario")
    shape = np.asarray(shape, dtype=float)
    powers, draws = _trajectories(prior.mean, prior.variance, shape,
                                  error_model, None, -1, start_slot,
                                  base_seed, n_scenarios)
    return _finalize(powers, draws, base_seed, start_slot, "night", shape.size)


def sample_day(posterior: MultiplierPosterior, shape: np.ndarray,
               error_model: ErrorModel, observed_day: Sequence[float],
               current_slot: int, n_scenarios: int, base_seed: int,
               start_slot: Optional[int] = None) -> ScenarioSet:
    """Sample remaining-day scenarios after sunrise.

    Slots up to ``current_slot`` are frozen to the observations; the
    residual at those slots is reconstructed per scenario as
    ``X - p * Y`` so the future recursion continues from the realized
    error; future modeled slots are sampled as at night.
    """
    if n_scenarios < 1:
        raise ValueError("need at least one scenario")
    shape = np.asarray(shape, dtype=float)
    observed_day = np.asarray(observed_day, dtype=float)
    if observed_day.size <= current_slot:
        raise ValueError("observations must cover slots 0..current_slot")
    if start_slot is None:
        start_slot = current_slot
    powers, draws = _trajectories(posterior.mean, posterior.variance, shape,
                                  error_model, observed_day, current_slot,
                                  start_slot, base_seed, n_scenarios)
    return _finalize(powers, draws, base_seed, start_slot, "day", shape.size)


def mean_scenario(center: float, shape: np.ndarray, error_model: ErrorModel,
                  observed_day: Optional[Sequence[float]] = None,
                  current_slot: int = -1,
                  start_slot: int = 0) -> ScenarioSet:
    """Single conditional-mean trajectory (the deterministic controller's PV).

    The multiplier is fixed at ``center`` and all innovations at zero, so
    future residuals decay as ``phi_i * delta_{i-1}`` from the residual
    reconstructed at the last observed slot.  Without observations this is
    exactly the clamped point forecast ``max(0, center * shape)``.
    """
    shape = np.asarray(shape, dtype=float)
    observed = None
    if observed_day is not None and current_slot >= 0:
        observed = np.asarray(observed_day, dtype=float)
        mode = "day"
    else:
        current_slot = -1
        mode = "night"
    powers, draws = _trajectories(center, 0.0, shape, error_model,
                                  observed, current_slot, start_slot,
                                  base_seed=0, n_scenarios=1, zero_noise=True)
    return _finalize(powers, draws, 0, start_slot, mode, shape.size)


def pv_power_at(profiles: Sequence[DailyProfile], t_hours: float,
                grid: SamplingGrid) -> float:
    """Exact slot lookup (no interpolation) into a multi-day dataset.

    ``t`` maps to day ``floor(t/day)`` and within-day slot
    ``floor(t/step) mod slots_per_day``.

    Raises
    ------
    OutOfRange
        For negative times or days beyond the dataset.
    """
    if t_hours < 0:
        raise OutOfRange("negative time")
    day = grid.day_of(t_hours)
    if day >= len(profiles):
        raise OutOfRange(f"day {day} beyond dataset of {len(profiles)} days")
    slot = grid.slot_of(t_hours)
    return float(profiles[day].samples[slot])
