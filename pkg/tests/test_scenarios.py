"""Scenario sampling: conditional posterior, night/day draws, mean trajectory."""

import numpy as np
import pytest
from scipy import stats

from pvpump.forecast import (
    DailyProfile,
    ErrorModel,
    GaussianBelief,
    SamplingGrid,
    fuse_bayes,
)
from pvpump.scenarios import (
    MultiplierPosterior,
    OutOfRange,
    ScenarioSet,
    build_delta_chain,
    mean_scenario,
    posterior_after_observations,
    pv_power_at,
    sample_day,
    sample_night,
)

N_SLOTS = 16
RISE = 4          # sunrise anchor slot
SET_ = 11         # last daytime slot


@pytest.fixture(scope="module")
def shape():
    s = np.zeros(N_SLOTS)
    s[RISE:SET_ + 1] = [0.15, 0.4, 0.7, 0.9, 1.0, 0.85, 0.5, 0.2]
    return s


@pytest.fixture(scope="module")
def error_model():
    phi = np.zeros(N_SLOTS)
    sigma2 = np.zeros(N_SLOTS)
    daytime = np.zeros(N_SLOTS, dtype=bool)
    modeled = np.zeros(N_SLOTS, dtype=bool)
    daytime[RISE:SET_ + 1] = True
    modeled[RISE + 1:SET_ + 1] = True
    phi[modeled] = 0.5
    sigma2[modeled] = 0.01
    return ErrorModel(phi=phi, sigma2=sigma2, daytime=daytime, modeled=modeled)


@pytest.fixture(scope="module")
def prior():
    return GaussianBelief(mean=2.0, variance=0.04)


def observed_day(shape, p=2.1, wiggle=0.03):
    """A plausible realized day: p*shape plus a deterministic ripple."""
    ripple = wiggle * np.sin(np.arange(N_SLOTS))
    x = p * shape + np.where(shape > 0, ripple, 0.0)
    return np.maximum(x, 0.0)


# -- conditional posterior ------------------------------------------------------


def test_single_observation_reduces_to_scalar_fusion(shape, error_model, prior):
    # with a zero chain entry the slot-8 factor is exactly a unit-gain
    # Gaussian observation (Y=1), i.e. scalar Bayes fusion
    post = posterior_after_observations(prior, shape, error_model,
                                        observed=[1.9], delta_chain=[0.0],
                                        first_slot=8)
    ref = fuse_bayes(prior, 1.9, error_model.sigma2[8])
    assert post.mean == pytest.approx(ref.mean, abs=1e-12)
    assert post.variance == pytest.approx(ref.variance, abs=1e-12)


def test_posterior_matches_grid_normalization_oracle():
    em = ErrorModel(phi=np.zeros(2), sigma2=np.array([0.0, 0.01]),
                    daytime=np.array([True, True]),
                    modeled=np.array([False, True]))
    prior = GaussianBelief(mean=2.0, variance=0.25)
    post = posterior_after_observations(prior, np.array([1.0, 0.9]), em,
                                        observed=[1.9], delta_chain=[0.0],
                                        first_slot=1)
    p = np.arange(0.0, 10.0 + 1e-12, 1e-4)
    log_w = (-(p - 2.0) ** 2 / (2 * 0.25)
             - (1.9 - 0.9 * p) ** 2 / (2 * 0.01))
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    mean = float(np.dot(w, p))
    var = float(np.dot(w, (p - mean) ** 2))
    assert post.mean == pytest.approx(mean, abs=1e-4)
    assert post.variance == pytest.approx(var, abs=1e-4)


def test_posterior_without_observations_is_prior(shape, error_model, prior):
    post = posterior_after_observations(prior, shape, error_model,
                                        observed=[], delta_chain=[],
                                        first_slot=RISE + 1)
    assert (post.mean, post.variance) == (prior.mean, prior.variance)


def test_posterior_precision_grows_with_observations(shape, error_model, prior):
    day = observed_day(shape)
    chain_full = build_delta_chain(prior.mean, shape, day, RISE, SET_ + 1)
    last_var = prior.variance
    for m in range(1, SET_ - RISE + 1):
        post = posterior_after_observations(
            prior, shape, error_model, observed=day[RISE + 1:RISE + 1 + m],
            delta_chain=chain_full[:m], first_slot=RISE + 1)
        assert post.variance <= last_var + 1e-15
        last_var = post.variance


def test_point_mass_prior_passes_through(shape, error_model):
    post = posterior_after_observations(GaussianBelief(1.5, 0.0), shape,
                                        error_model, observed=[1.0],
                                        delta_chain=[0.0], first_slot=8)
    assert (post.mean, post.variance) == (1.5, 0.0)


def test_posterior_rejects_misaligned_chain(shape, error_model, prior):
    with pytest.raises(ValueError):
        posterior_after_observations(prior, shape, error_model,
                                     observed=[1.0, 2.0], delta_chain=[0.0],
                                     first_slot=5)


def test_delta_chain_arithmetic(shape):
    day = observed_day(shape, p=2.1)
    chain = build_delta_chain(2.0, shape, day, RISE, RISE + 3)
    assert chain[0] == 0.0  # anchor pinned regardless of the data
    np.testing.assert_allclose(
        chain[1:], day[RISE + 1:RISE + 3] - 2.0 * shape[RISE + 1:RISE + 3],
        rtol=1e-15)
    assert build_delta_chain(2.0, shape, day, RISE, RISE).size == 0


# -- night sampling ----------------------------------------------------------------


def test_night_zero_variance_equals_point_forecast(shape, error_model):
    frozen = error_model.zero_variance_copy()
    out = sample_night(GaussianBelief(mean=2.0, variance=0.0), shape, frozen,
                       n_scenarios=1, base_seed=9)
    np.testing.assert_array_equal(out.scenarios[0].pv_power,
                                  np.maximum(2.0 * shape, 0.0))


def test_night_sampling_is_deterministic(shape, error_model, prior):
    a = sample_night(prior, shape, error_model, n_scenarios=8, base_seed=123)
    b = sample_night(prior, shape, error_model, n_scenarios=8, base_seed=123)
    np.testing.assert_array_equal(a.as_array(), b.as_array())
    assert [s.seed for s in a.scenarios] == [s.seed for s in b.scenarios]
    assert [s.multiplier_draw for s in a.scenarios] == \
        [s.multiplier_draw for s in b.scenarios]


def test_scenario_k_does_not_depend_on_set_size(shape, error_model, prior):
    small = sample_night(prior, shape, error_model, n_scenarios=4, base_seed=5)
    large = sample_night(prior, shape, error_model, n_scenarios=12, base_seed=5)
    np.testing.assert_array_equal(small.as_array(), large.as_array()[:4])


def test_night_slots_are_exactly_zero(shape, error_model, prior):
    out = sample_night(prior, shape, error_model, n_scenarios=20, base_seed=3)
    arr = out.as_array()
    night = ~error_model.daytime
    assert np.all(arr[:, night] == 0.0)


def test_sampled_power_is_clamped_nonnegative(shape, error_model):
    wild = GaussianBelief(mean=0.1, variance=4.0)  # negative draws likely
    out = sample_night(wild, shape, error_model, n_scenarios=200, base_seed=1)
    assert out.as_array().min() >= 0.0


def test_night_slot_mean_matches_independent_oracle(shape, error_model, prior):
    slot = 8
    n = 10_000
    out = sample_night(prior, shape, error_model, n_scenarios=n, base_seed=77)
    sample = out.as_array()[:, slot]

    rng = np.random.default_rng(987654321)  # oracle stream, unrelated seed
    p = prior.mean + np.sqrt(prior.variance) * rng.standard_normal(n)
    delta = np.zeros(n)
    for s in range(RISE + 1, slot + 1):
        delta = error_model.phi[s] * delta \
            + np.sqrt(error_model.sigma2[s]) * rng.standard_normal(n)
    oracle = np.maximum(0.0, p * shape[slot] + delta)

    se = np.hypot(sample.std(ddof=1) / np.sqrt(n), oracle.std(ddof=1) / np.sqrt(n))
    assert abs(sample.mean() - oracle.mean()) <= 3.0 * se


def test_night_sampling_needs_a_scenario(shape, error_model, prior):
    with pytest.raises(ValueError):
        sample_night(prior, shape, error_model, n_scenarios=0, base_seed=1)


# -- day sampling -------------------------------------------------------------------


def test_day_scenarios_freeze_the_observed_prefix(shape, error_model, prior):
    day = observed_day(shape)
    i_c = 7
    post = MultiplierPosterior(mean=2.05, variance=0.01)
    out = sample_day(post, shape, error_model, day, i_c, n_scenarios=15,
                     base_seed=11, start_slot=0)
    arr = out.as_array()
    for k in range(15):
        np.testing.assert_array_equal(arr[k, :i_c + 1], day[:i_c + 1])
    # futures differ across scenarios (the noise is live past i_c)
    assert np.ptp(arr[:, i_c + 1]) > 0


def test_day_zero_variances_collapse_to_one_trajectory(shape, error_model):
    day = observed_day(shape)
    post = MultiplierPosterior(mean=2.05, variance=0.0)
    out = sample_day(post, shape, error_model.zero_variance_copy(), day, 7,
                     n_scenarios=6, base_seed=2)
    arr = out.as_array()
    for k in range(1, 6):
        np.testing.assert_array_equal(arr[k], arr[0])


def test_day_at_sunrise_matches_night_distribution(shape, error_model, prior):
    """Conditioning on the anchor alone adds no information (its error is
    pinned to 0), so day sampling from the prior must match night sampling
    in distribution at any later slot."""
    day = observed_day(shape)
    slot = 9
    n = 10_000
    night = sample_night(prior, shape, error_model, n_scenarios=n, base_seed=21)
    by_day = sample_day(MultiplierPosterior(prior.mean, prior.variance), shape,
                        error_model, day, RISE, n_scenarios=n, base_seed=22,
                        start_slot=0)
    a = night.as_array()[:, slot]
    b = by_day.as_array()[:, slot]
    assert stats.ks_2samp(a, b).pvalue > 0.05


def test_day_sampling_requires_covering_observations(shape, error_model):
    post = MultiplierPosterior(mean=2.0, variance=0.01)
    with pytest.raises(ValueError):
        sample_day(post, shape, error_model, np.zeros(5), current_slot=7,
                   n_scenarios=2, base_seed=0)


def test_day_default_window_starts_at_current_slot(shape, error_model):
    day = observed_day(shape)
    post = MultiplierPosterior(mean=2.0, variance=0.01)
    out = sample_day(post, shape, error_model, day, 6, n_scenarios=3,
                     base_seed=4)
    assert out.start_slot == 6
    assert out.scenarios[0].pv_power.size == N_SLOTS - 6


# -- conditional-mean trajectory -------------------------------------------------------


def test_mean_scenario_without_observations_is_point_forecast(shape, error_model):
    out = mean_scenario(1.8, shape, error_model)
    assert len(out) == 1
    assert out.mode == "night"
    np.testing.assert_array_equal(out.scenarios[0].pv_power,
                                  np.maximum(1.8 * shape, 0.0))


def test_mean_scenario_decays_the_last_observed_residual(shape, error_model):
    day = observed_day(shape, p=2.3)
    i_c = 7
    center = 2.0
    out = mean_scenario(center, shape, error_model, observed_day=day,
                        current_slot=i_c, start_slot=0)
    traj = out.scenarios[0].pv_power
    np.testing.assert_array_equal(traj[:i_c + 1], day[:i_c + 1])
    delta = day[i_c] - center * shape[i_c]
    expect = center * shape[i_c + 1] + error_model.phi[i_c + 1] * delta
    assert traj[i_c + 1] == pytest.approx(max(0.0, expect), abs=1e-12)
    assert out.mode == "day"


# -- time lookup -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def dataset():
    grid = SamplingGrid(day_hours=24.0, step_hours=0.25)
    days = []
    for d in range(2):
        samples = np.arange(grid.slots_per_day, dtype=float) + 100.0 * d
        days.append(DailyProfile(samples=samples, day_index=d))
    return days, grid


def test_pv_power_lookup(dataset):
    days, grid = dataset
    assert pv_power_at(days, 0.0, grid) == 0.0
    assert pv_power_at(days, 24.0 + 3 * 0.25, grid) == 103.0
    assert pv_power_at(days, 23.999, grid) == 95.0   # last slot of day 0


def test_pv_power_out_of_range(dataset):
    days, grid = dataset
    with pytest.raises(OutOfRange):
        pv_power_at(days, -0.5, grid)
    with pytest.raises(OutOfRange):
        pv_power_at(days, 48.0, grid)


# -- export ------------------------------------------------------------------------------


def test_scenario_csv_uses_absolute_slots(tmp_path, shape, error_model, prior):
    out = sample_night(prior, shape, error_model, n_scenarios=2, base_seed=6,
                       start_slot=3)
    path = tmp_path / "scen.csv"
    out.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "scenario,slot,power_kw"
    first = lines[1].split(",")
    assert first[0] == "0" and first[1] == "3"
    assert len(lines) == 1 + 2 * (N_SLOTS - 3)
    # values round-trip through repr
    value = float(lines[1].split(",")[2])
    assert value == out.scenarios[0].pv_power[0]


def test_scenario_set_validates_mode_and_lengths(shape, error_model, prior):
    good = sample_night(prior, shape, error_model, n_scenarios=2, base_seed=6)
    with pytest.raises(ValueError):
        ScenarioSet(scenarios=good.scenarios, start_slot=0, mode="noon",
                    n_slots_day=N_SLOTS)
    with pytest.raises(ValueError):
        ScenarioSet(scenarios=good.scenarios, start_slot=2, mode="night",
                    n_slots_day=N_SLOTS)
