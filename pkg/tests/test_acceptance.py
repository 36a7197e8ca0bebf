"""End-to-end acceptance gate.

One test per shipped guarantee, each passing or failing on its own line
under ``pytest -v``.  The heavy closed-loop and campaign checks share the
session-wide default experiment setup where they can.
"""

import json
import time

import numpy as np
import pytest

from pvpump.cli import EXIT_OK, main
from pvpump.controller import (MpcConfig, MpcProblem, expected_cost,
                               expected_cost_grad, horizon_length, solve_mpc)
from pvpump.forecast import GaussianBelief, fit_arma11, fuse_bayes
from pvpump.harness import (ExperimentConfig, compare_so_do,
                            prepare_experiment, run_closed_loop)
from pvpump.plant import ExcitationDesign, identify_linear_model
from pvpump.scenarios import ErrorModel, posterior_after_observations
from tests.test_plant import linearized_network


def test_field_scale_benchmark_needs_external_datasets():
    pytest.skip("field-scale results require the utility's hydraulic model "
                "and the measured panel dataset, neither of which ships "
                "here; the synthetic closed-loop and campaign tests below "
                "cover the same behavior at desk scale")


def test_gaussian_fusion_matches_grid_normalized_products():
    start = time.monotonic()
    rng = np.random.default_rng(314)
    # grids reach past every posterior's 8-sigma tail, so truncation
    # error stays far below the 1e-4 gate
    x_grid = np.arange(-14.0, 14.0 + 1e-9, 1e-3)
    p_grid = np.arange(-10.0, 15.0 + 1e-9, 1e-4)
    for _ in range(100):
        prior_mean = rng.uniform(0.5, 4.0)
        prior_var = rng.uniform(0.04, 1.0)
        obs = rng.uniform(-2.0, 6.0)
        obs_var = rng.uniform(0.02, 2.0)
        fused = fuse_bayes(GaussianBelief(prior_mean, prior_var), obs,
                           obs_var)
        log_w = (-(x_grid - prior_mean) ** 2 / (2 * prior_var)
                 - (x_grid - obs) ** 2 / (2 * obs_var))
        w = np.exp(log_w - log_w.max())
        w /= w.sum()
        mean = float(w @ x_grid)
        var = float(w @ (x_grid - mean) ** 2)
        assert abs(fused.mean - mean) < 1e-4
        assert abs(fused.variance - var) / var < 1e-4

        m = int(rng.integers(1, 7))
        y = rng.uniform(0.2, 1.0, m)
        sigma2 = rng.uniform(0.005, 0.1, m)
        phi = rng.uniform(-0.8, 0.8, m)
        chain = rng.normal(0.0, 0.1, m)
        p_true = rng.uniform(1.0, 3.0)
        x_obs = p_true * y + phi * chain + rng.normal(0.0, 0.05, m)
        model = ErrorModel(phi=phi, sigma2=sigma2,
                           daytime=np.ones(m, dtype=bool),
                           modeled=np.ones(m, dtype=bool))
        post = posterior_after_observations(
            GaussianBelief(prior_mean, prior_var), y, model, x_obs, chain,
            first_slot=0)
        log_w = -(p_grid - prior_mean) ** 2 / (2 * prior_var)
        for i in range(m):
            log_w = log_w - (x_obs[i] - phi[i] * chain[i]
                             - p_grid * y[i]) ** 2 / (2 * sigma2[i])
        w = np.exp(log_w - log_w.max())
        w /= w.sum()
        mean = float(w @ p_grid)
        var = float(w @ (p_grid - mean) ** 2)
        assert abs(post.mean - mean) < 1e-4
        assert abs(post.variance - var) / var < 1e-4
    assert time.monotonic() - start < 10.0


def test_multiplier_model_recovery_rate_across_seeds():
    start = time.monotonic()
    mu, phi, theta, sigma = 0.1, 0.8, 0.3, 0.1
    hits = 0
    for seed in range(100, 120):
        rng = np.random.default_rng(seed)
        x = np.empty(500)
        prev_x, prev_e = mu / (1.0 - phi), 0.0
        for i in range(500):
            e = rng.normal(0.0, sigma)
            x[i] = mu + phi * prev_x + theta * prev_e + e
            prev_x, prev_e = x[i], e
        fit = fit_arma11(x)
        if (abs(fit.mu - mu) <= 0.1 and abs(fit.phi - phi) <= 0.1
                and abs(fit.theta - theta) <= 0.1):
            hits += 1
    assert hits >= 18
    assert time.monotonic() - start < 30.0


def test_identification_recovers_linear_truth_and_generalizes(network,
                                                              identified):
    net = linearized_network()
    report = identify_linear_model(net, ExcitationDesign(seed=7),
                                   dt_hours=1.0)
    c = net.exchange_conductance
    a1, a2 = net.tank_area
    a_true = np.array([[-c / a1, c / a1], [c / a2, -c / a2]])
    b1_true = np.diag(1.0 / net.tank_area)
    b2_true = -net.demand_split / net.tank_area
    assert np.max(np.abs(report.model.a - a_true)) / np.max(np.abs(a_true)) \
        < 1e-6
    assert np.max(np.abs(report.model.b1 - b1_true)) \
        / np.max(np.abs(b1_true)) < 1e-6
    assert np.max(np.abs(report.model.b2 - b2_true)) \
        / np.max(np.abs(b2_true)) < 1e-6
    # and on the curved plant the holdout one-step error stays small
    assert np.all(identified.rmse_onestep <= 0.05 * network.tank_height)


def default_day_problem(model, seed):
    cfg = MpcConfig()
    n = horizon_length(0.0, cfg.day_hours, cfg.dt_hours)
    rng = np.random.default_rng(seed)
    demand = rng.uniform(80.0, 160.0, n)
    price = np.where((np.arange(n) >= 7) & (np.arange(n) <= 22), 0.22, 0.08)
    pv = np.clip(rng.normal(15.0, 10.0, (cfg.n_scenarios, n,
                                         cfg.subslots_per_step)), 0.0, None)
    h0 = np.array([2.2, 2.1])
    return MpcProblem(model, cfg, h0, 0.0, demand, price, pv, h0)


def test_expected_cost_gradient_matches_finite_differences(model):
    problem = default_day_problem(model, seed=99)
    dim = problem.horizon * 2
    rng = np.random.default_rng(17)
    step = 1e-5
    for _ in range(20):
        z = rng.uniform(5.0, 95.0, dim)
        _, grad, _ = expected_cost_grad(z, problem)
        grad = grad.ravel()
        fd = np.empty(dim)
        for i in range(dim):
            zp, zm = z.copy(), z.copy()
            zp[i] += step
            zm[i] -= step
            fd[i] = (expected_cost(zp, problem)
                     - expected_cost(zm, problem)) / (2.0 * step)
        assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1.0) \
            <= 1e-4
        scale = np.maximum(np.maximum(np.abs(fd), np.abs(grad)), 1e-6)
        assert np.max(np.abs(grad - fd) / scale) <= 1e-4


def test_short_horizon_solver_beats_exhaustive_grid(model):
    cfg = MpcConfig(n_scenarios=1, solver_tol=1e-9, solver_max_iter=5000)
    rng = np.random.default_rng(5)
    demand = rng.uniform(80.0, 160.0, 2)
    price = np.array([0.22, 0.22])
    pv = np.clip(rng.normal(15.0, 10.0, (1, 2, 4)), 0.0, None)
    h0 = np.array([2.2, 2.1])
    problem = MpcProblem(model, cfg, h0, 22.0, demand, price, pv, h0)
    sol = solve_mpc(problem)

    vals = np.arange(0.0, 100.0 + 1e-9, 5.0)
    g = np.meshgrid(vals, vals, vals, vals, indexing="ij")
    grid = np.stack([gi.ravel() for gi in g], axis=1)
    # vectorized objective over all 21^4 input combinations
    u0, u1 = grid[:, :2], grid[:, 2:]
    beta, pf = cfg.softplus_beta, cfg.power_factor
    a_low, a_high, b_low, b_high = cfg.barrier_arrays(2)
    h_low, h_high = np.array(cfg.h_min), np.array(cfg.h_max)

    def sp(x):
        return np.maximum(x, 0.0) + np.log1p(np.exp(-beta * np.abs(x))) / beta

    def bar(h):
        low = np.exp(np.minimum(a_low * (h_low - h + b_low), cfg.exp_clamp))
        high = np.exp(np.minimum(a_high * (h - h_high + b_high),
                                 cfg.exp_clamp))
        return low.sum(axis=1) + high.sum(axis=1)

    h1 = h0 @ model.ad.T + u0 @ model.bd1.T + model.bd2 * demand[0]
    h2 = h1 @ model.ad.T + u1 @ model.bd1.T + model.bd2 * demand[1]
    f = np.zeros(len(grid))
    for j, (hj, uj) in enumerate(((np.broadcast_to(h0, h1.shape), u0),
                                  (h1, u1))):
        head = hj @ model.cp.T + uj @ model.dp.T - model.p_in
        p_pump = pf * np.sum(uj * head, axis=1)
        for k in range(4):
            f += price[j] * cfg.dt_pv_hours * sp(p_pump - pv[0, j, k])
    f += bar(h1) + bar(h2)
    dist = np.linalg.norm(h2 - h0, axis=1)
    f += cfg.terminal_weight * np.maximum(0.0, dist - cfg.terminal_radius) ** 2

    assert sol.objective <= float(f.min()) + 1e-6


def test_one_day_closed_loop_regression(default_setup):
    start = time.monotonic()
    result = run_closed_loop(default_setup.config, "so", default_setup)
    m = result.metrics
    assert m.violations == 0
    assert abs(m.grid_energy_kwh + m.pv_used_kwh - m.pump_energy_kwh) \
        <= 1e-6 * m.pump_energy_kwh
    night_kwh = sum(row["pump_kw"] for row in result.trace
                    if row["price"] == 0.08)
    assert night_kwh > 0.0
    assert m.pv_share >= 0.5
    assert time.monotonic() - start < 300.0


def test_zero_variance_collapses_stochastic_onto_deterministic():
    config = ExperimentConfig(zero_forecast_variance=True,
                              controller=MpcConfig(n_scenarios=2))
    setup = prepare_experiment(config)
    so = run_closed_loop(config, "so", setup)
    do = run_closed_loop(config, "do", setup)
    assert np.array_equal(so.inputs, do.inputs)
    assert abs(so.metrics.total_cost - do.metrics.total_cost) <= 1e-9
    assert abs(so.metrics.grid_energy_kwh - do.metrics.grid_energy_kwh) \
        <= 1e-9


def test_multi_case_campaign_produces_ratio_table(tmp_path):
    start = time.monotonic()
    config = ExperimentConfig(days=10, cases=(0, 7, 14, 21))
    report = compare_so_do(config)
    path = tmp_path / "comparison.csv"
    report.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "case,cost_ratio,grid_energy_ratio"
    assert len(lines) == 1 + len(config.cases) + 1
    labels = [line.split(",")[0] for line in lines[1:]]
    assert labels == ["1", "2", "3", "4", "total"]
    total = report.rows[-1]
    assert np.isfinite(total[1]) and total[1] > 0.0
    assert np.isfinite(total[2]) and total[2] > 0.0
    # direction is data-dependent; report it without asserting it
    print(f"aggregate cost ratio (stochastic/deterministic): {total[1]:.4f}")
    print(f"aggregate grid energy ratio: {total[2]:.4f}")
    assert time.monotonic() - start < 3600.0


def test_reruns_write_byte_identical_outputs(tmp_path):
    run_dirs = [tmp_path / "run_a", tmp_path / "run_b"]
    for out in run_dirs:
        assert main(["--out", str(out), "run"]) == EXIT_OK
    for name in ("metrics.json", "trace.csv"):
        assert (run_dirs[0] / name).read_bytes() \
            == (run_dirs[1] / name).read_bytes()

    config = tmp_path / "small.json"
    config.write_text(json.dumps({"days": 1, "cases": [0]}))
    cmp_dirs = [tmp_path / "cmp_a", tmp_path / "cmp_b"]
    for out in cmp_dirs:
        assert main(["--config", str(config), "--out", str(out),
                     "compare"]) == EXIT_OK
    assert (cmp_dirs[0] / "comparison.csv").read_bytes() \
        == (cmp_dirs[1] / "comparison.csv").read_bytes()
