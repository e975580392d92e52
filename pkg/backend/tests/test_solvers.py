import numpy as np
import pytest

import solvers
from distributions import RepairVector, Support, make_simplex, tv_distance
from errors import ConfigError, NonFiniteCoupling, NumericalError, SupportMismatch, UnevenSupport
from projection import projected_marginal
from solvers import (
    DEFAULT_SCALING,
    DykstraState,
    EpsilonScaling,
    SolverTrace,
    StopReason,
    barycentre_coupling,
    barycentre_maps,
    bregman_baseline,
    capacity_transport,
    dykstra_repair,
    generalized_dykstra,
    partial_transport,
    shifted_schedule,
)
from transport_core import BandConstraint, Coupling, cost_matrix, log_prox_cols, log_prox_rows


def _uniform(n):
    support = Support.grid(0, n - 1)
    return make_simplex(np.full(n, 1.0 / n), support)


# ---------- baseline ----------
def test_baseline_point_mass():
    support = Support.grid(0, 0)
    delta = make_simplex([1.0], support)
    gamma, trace = bregman_baseline(delta, delta, cost_matrix(support, support), 0.01, 5)
    assert gamma.entries.tolist() == [[1.0]]
    assert trace.iterations == 5


def test_baseline_two_points_stays_on_diagonal():
    p = _uniform(2)
    gamma, _ = bregman_baseline(p, p, cost_matrix(p.support, p.support), 0.05, 20)
    assert gamma.entries == pytest.approx(np.diag([0.5, 0.5]), abs=1e-6)


def test_baseline_alternates_columns_first():
    p = make_simplex([0.3, 0.7], Support.grid(0, 1))
    q = make_simplex([0.6, 0.4], Support.grid(0, 1))
    cost = cost_matrix(p.support, q.support)
    gamma, _ = bregman_baseline(p, q, cost, 1.0, 1)
    assert gamma.col_sums == pytest.approx(q.values, abs=1e-15)
    gamma, _ = bregman_baseline(p, q, cost, 1.0, 2)
    assert gamma.row_sums == pytest.approx(p.values, abs=1e-15)


def test_baseline_rejects_zero_iterations():
    p = _uniform(2)
    with pytest.raises(ConfigError):
        bregman_baseline(p, p, cost_matrix(p.support, p.support), 0.1, 0)


def test_baseline_synthetic_marginals(synthetic_runs):
    trace = synthetic_runs["baseline"].trace
    assert trace.iterations == 400
    assert trace.row_residuals[-1] <= 1e-12
    assert trace.col_residuals[-1] <= 1e-6


def test_baseline_synthetic_plateau(synthetic_runs):
    fit = synthetic_runs["baseline"].fit
    cost = cost_matrix(fit.support, fit.target.support)
    longer, _ = bregman_baseline(fit.px, fit.target, cost, 0.01, 402)
    assert np.abs(longer.entries - fit.coupling.entries).sum() <= 1e-8


# ---------- dykstra ----------
def test_dykstra_zero_vector_matches_baseline(rng, random_simplex):
    p, q = random_simplex(rng, 5), random_simplex(rng, 5)
    cost = cost_matrix(p.support, q.support)
    bc = BandConstraint.broadcast(RepairVector.zeros(p.support), 0.0, 5)
    repaired, trace = dykstra_repair(p, q, bc, cost, 0.5, 600, 1e-4)
    baseline, _ = bregman_baseline(p, q, cost, 0.5, 400)
    assert trace.stop_reason == StopReason.BAND_RESIDUAL
    assert np.abs(repaired.entries - baseline.entries).sum() <= 1e-5


def test_dykstra_huge_band_matches_baseline(rng, random_groups, random_simplex):
    p, _, _, v = random_groups(rng, 5)
    q = random_simplex(rng, 5)
    cost = cost_matrix(p.support, q.support)
    repaired, _ = dykstra_repair(p, q, BandConstraint.broadcast(v, 1e9, 5), cost, 0.5, 600, 1e-4,
                                 marginal_tolerance=1e-9)
    baseline, _ = bregman_baseline(p, q, cost, 0.5, 400)
    assert np.abs(repaired.entries - baseline.entries).sum() <= 1e-7


def test_dykstra_total_repair_is_feasible(rng, random_groups, random_simplex):
    for _ in range(10):
        p, p0, p1, v = random_groups(rng, 4)
        q = random_simplex(rng, 4)
        bc = BandConstraint.broadcast(v, 0.0, 4)
        gamma, trace = dykstra_repair(p, q, bc, cost_matrix(p.support, q.support), 0.5, 3000, 1e-6)
        assert trace.stop_reason == StopReason.BAND_RESIDUAL
        assert gamma.band_residual(v) < 1e-6
        assert gamma.is_feasible(p, q, tol=1e-6)
        tv = tv_distance(make_simplex(projected_marginal(gamma, p, p0), q.support),
                         make_simplex(projected_marginal(gamma, p, p1), q.support))
        assert tv <= 0.5e-6 + 1e-6


def test_dykstra_partial_repair_tv_bound(rng, random_groups, random_simplex):
    p, p0, p1, v = random_groups(rng, 5)
    q = random_simplex(rng, 5)
    lam = np.full(5, 0.01)
    gamma, _ = dykstra_repair(p, q, BandConstraint(v, lam), cost_matrix(p.support, q.support), 0.5, 3000, 1e-6)
    tv = tv_distance(make_simplex(projected_marginal(gamma, p, p0), q.support),
                     make_simplex(projected_marginal(gamma, p, p1), q.support))
    assert tv <= lam.sum() / 2 + 1e-6


def test_dykstra_is_deterministic(rng, random_groups, random_simplex):
    p, _, _, v = random_groups(rng, 6)
    q = random_simplex(rng, 6)
    args = (p, q, BandConstraint.broadcast(v, 0.0, 6), cost_matrix(p.support, q.support), 0.2, 200, 1e-8)
    a, _ = dykstra_repair(*args)
    b, _ = dykstra_repair(*args)
    assert a.entries.tobytes() == b.entries.tobytes()


def test_dykstra_trace_lengths_match_iterations(rng, random_groups, random_simplex):
    p, _, _, v = random_groups(rng, 4)
    q = random_simplex(rng, 4)
    for pairing, k in (("dykstra", 40), ("shifted", 12)):
        gamma, trace = dykstra_repair(p, q, BandConstraint.broadcast(v, 0.0, 4),
                                      cost_matrix(p.support, q.support), 1.0, k, 1e-12, pairing=pairing)
        assert len(trace.band_residuals) == trace.iterations == len(trace.row_residuals)
        assert np.all(np.isfinite(gamma.entries))
        assert np.all(gamma.entries >= 0)
        frame = trace.to_frame()
        assert list(frame.columns) == ["iteration", "band_residual", "row_residual", "col_residual"]
        assert frame["iteration"].tolist() == list(range(1, trace.iterations + 1))


def test_dykstra_bare_band_test_stops_no_later(rng, random_groups, random_simplex):
    p, _, _, v = random_groups(rng, 4)
    q = random_simplex(rng, 4)
    args = (p, q, BandConstraint.broadcast(v, 0.0, 4), cost_matrix(p.support, q.support), 1.0, 600, 1e-4)
    _, bare = dykstra_repair(*args, marginal_tolerance=None)
    _, full = dykstra_repair(*args)
    assert bare.stop_reason == StopReason.BAND_RESIDUAL
    assert bare.band_residuals[-1] < 1e-4
    assert bare.iterations <= full.iterations


@pytest.mark.parametrize("kwargs", [{"iterations": 3}, {"varepsilon": 0.0}, {"pairing": "other"}])
def test_dykstra_config_errors(kwargs):
    p = _uniform(2)
    args = dict(p=p, q=p, bc=BandConstraint.broadcast(RepairVector.zeros(p.support), 0.0, 2),
                cost=cost_matrix(p.support, p.support), epsilon=0.1, iterations=10, varepsilon=1e-4)
    args.update(kwargs)
    with pytest.raises(ConfigError):
        dykstra_repair(**args)


def test_dykstra_band_support_mismatch():
    p = _uniform(2)
    bc = BandConstraint.broadcast(RepairVector.zeros(Support.grid(5, 6)), 0.0, 2)
    with pytest.raises(SupportMismatch):
        dykstra_repair(p, p, bc, cost_matrix(p.support, p.support), 0.1, 10, 1e-4)


def test_synthetic_total_repair_terminates(synthetic_runs):
    result = synthetic_runs[0.0]
    trace = result.trace
    assert trace.stop_reason == StopReason.BAND_RESIDUAL
    assert trace.band_residuals[-1] < 1e-4
    assert trace.row_residuals[-1] <= 1e-6
    assert trace.col_residuals[-1] <= 1e-6
    assert np.all(np.isfinite(result.fit.coupling.entries))


@pytest.mark.parametrize("lam", [1e-3, 1e-2])
def test_synthetic_partial_repair_runs_the_budget_with_tight_marginals(synthetic_runs, lam):
    trace = synthetic_runs[lam].trace
    # the band is slack by ||Lambda||_1, so only the iteration budget ends the run
    assert trace.stop_reason == StopReason.MAX_ITERATIONS
    assert trace.iterations == 600
    assert np.abs(synthetic_runs[lam].fit.coupling.row_sums - synthetic_runs[lam].fit.px.values).max() <= 1e-6
    assert trace.col_residuals[-1] <= 1e-6


def test_synthetic_runs_spend_their_warm_start(synthetic_runs):
    assert synthetic_runs["baseline"].trace.warm_start_cycles > 0
    assert synthetic_runs[0.0].trace.warm_start_cycles > 0


def test_dykstra_cold_start_is_finite_on_synthetic_kernel(synthetic_runs):
    """exp(-C / 0.01) underflows on the 41-point grid; the log iterates do not."""
    fit = synthetic_runs[0.0].fit
    bc = BandConstraint.broadcast(fit.v, 0.0, fit.target.support.size)
    gamma, trace = dykstra_repair(fit.px, fit.target, bc, cost_matrix(fit.support, fit.target.support),
                                  0.01, 60, 1e-4, scaling=None)
    assert trace.warm_start_cycles == 0
    assert np.all(np.isfinite(gamma.entries))
    assert np.all(np.isfinite(trace.band_residuals))


def test_shifted_pairing_fails_loudly_on_synthetic_instance(synthetic_runs):
    """Chaining corrections four steps back mixes the sets; the run must not hand back NaN."""
    fit = synthetic_runs[0.0].fit
    bc = BandConstraint.broadcast(fit.v, 0.0, fit.target.support.size)
    with pytest.raises(NumericalError):
        dykstra_repair(fit.px, fit.target, bc, cost_matrix(fit.support, fit.target.support),
                       0.01, 600, 1e-4, pairing="shifted")


def test_baseline_cold_start_plateaus_above_tolerance(synthetic_runs):
    fit = synthetic_runs["baseline"].fit
    cold, trace = bregman_baseline(fit.px, fit.target, cost_matrix(fit.support, fit.target.support),
                                   0.01, 400, scaling=None)
    assert trace.warm_start_cycles == 0
    assert np.all(np.isfinite(cold.entries))
    assert trace.col_residuals[-1] > 1e-6


def test_overflowing_iterate_raises_instead_of_returning_inf(monkeypatch):
    monkeypatch.setattr(solvers, "log_prox_rows", lambda lg, p: np.full_like(lg, 1000.0))
    p = _uniform(2)
    bc = BandConstraint.broadcast(RepairVector.zeros(p.support), 0.0, 2)
    with pytest.raises(NonFiniteCoupling):
        dykstra_repair(p, p, bc, cost_matrix(p.support, p.support), 0.1, 10, 1e-4, scaling=None)


# ---------- epsilon scaling ----------
def test_epsilon_scaling_schedule():
    assert EpsilonScaling(start=1.0, factor=0.5).schedule(0.2) == [1.0, 0.5, 0.25, 0.2]
    assert EpsilonScaling(start=1.0, factor=0.5).schedule(0.25) == [1.0, 0.5, 0.25]
    assert EpsilonScaling(start=1.0).schedule(2.0) == [2.0]
    assert DEFAULT_SCALING.schedule(0.01)[-1] == 0.01


@pytest.mark.parametrize("kwargs", [{"start": 0.0}, {"factor": 1.0}, {"factor": 0.0}, {"cycles": 0},
                                    {"final_cycles": 0}])
def test_epsilon_scaling_rejects_settings(kwargs):
    with pytest.raises(ConfigError):
        EpsilonScaling(**kwargs)


def test_warm_start_keeps_the_fixed_point(rng, random_groups, random_simplex):
    """Row/column rescalings of the kernel do not move the projection onto Pi_Lambda(P, Q)."""
    p, _, _, v = random_groups(rng, 5)
    q = random_simplex(rng, 5)
    cost = cost_matrix(p.support, q.support)
    bc = BandConstraint.broadcast(v, 0.01, 5)
    warm, _ = dykstra_repair(p, q, bc, cost, 0.5, 3000, 1e-8, marginal_tolerance=1e-12)
    cold, _ = dykstra_repair(p, q, bc, cost, 0.5, 3000, 1e-8, marginal_tolerance=1e-12, scaling=None)
    assert np.abs(warm.entries - cold.entries).sum() <= 1e-7


# ---------- generic loop and variants ----------
def test_generalized_dykstra_on_affine_sets_reaches_both_marginals(rng):
    p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
    log_gamma, steps, stopped = generalized_dykstra(
        np.log(rng.uniform(0.1, 1.0, size=(4, 4))),
        [lambda lg: log_prox_rows(lg, p), lambda lg: log_prox_cols(lg, q)],
        400,
    )
    assert steps == 400 and not stopped
    assert np.exp(log_gamma).sum(axis=1) == pytest.approx(p, abs=1e-9)
    assert np.exp(log_gamma).sum(axis=0) == pytest.approx(q, abs=1e-9)


def test_generalized_dykstra_stop_is_checked_after_first_cycle():
    seen = []
    _, steps, stopped = generalized_dykstra(np.zeros((2, 2)), [lambda lg: lg - np.log(2.0), lambda lg: lg], 50,
                                            stop=lambda lg: True, on_iteration=seen.append)
    assert stopped
    assert steps == len(seen) == 3


def _recording_sets(shifts, inputs, order):
    """Projections that log their input and set index, then add a set-specific constant."""
    def make(index, shift):
        def proj(lg):
            inputs.append(lg.item())
            order.append(index)
            return lg + shift
        return proj
    return [make(i, s) for i, s in enumerate(shifts)]


def test_shifted_schedule_order_and_correction_indexing():
    inputs, order = [], []
    generalized_dykstra(np.zeros((1, 1)), _recording_sets([1.0, 10.0, 100.0], inputs, order), 9,
                        schedule=shifted_schedule, lag=4)
    assert order == [0, 1, 2, 1, 2, 0, 1, 2, 0]
    # gamma = 0, 1, 11, 111, 120, 210, 111, 112, 121; steps 4-7 use the bare ratio
    # gamma^(k-4) / gamma^(k-3), step k >= 8 also the correction applied at step k - 4
    assert inputs == [0.0, 1.0, 11.0, 110.0, 110.0, 110.0, 102.0, 21.0, 210.0]


def test_cyclic_schedule_corrections_cancel_constant_shifts():
    inputs, order = [], []
    generalized_dykstra(np.zeros((1, 1)), _recording_sets([1.0, 10.0, 100.0], inputs, order), 9)
    assert order == [0, 1, 2] * 3
    assert inputs == [0.0, 1.0, 11.0] + [110.0, 101.0, 11.0] * 2


def test_generalized_dykstra_seeds_the_first_cycle():
    inputs, order = [], []
    generalized_dykstra(np.zeros((1, 1)), _recording_sets([1.0, 10.0], inputs, order), 4, seeds=[0.5, -2.0])
    # seeded steps see gamma^(k-1) + seed; step 3 uses seed_1 + gamma^(0) - gamma^(1)
    assert inputs == [0.5, -0.5, 8.5, -0.5]
    with pytest.raises(ConfigError):
        generalized_dykstra(np.zeros((1, 1)), _recording_sets([1.0], [], []), 2, seeds=[0.0, 0.0])


def test_dykstra_state_pairs_each_set_with_its_previous_step():
    state = DykstraState(n_sets=2, lag=2)
    for value in (1.0, 2.0, 4.0, 8.0, 16.0):
        state.push(np.log(np.full((1, 1), value)))
    # log(gamma^(k-3) / gamma^(k-2)) for k = 6
    assert state.next_correction().item() == pytest.approx(np.log(0.5))
    state.push(np.log(np.full((1, 1), 32.0)))
    assert state.next_correction().item() == pytest.approx(np.log(0.5))
    state.push(np.log(np.full((1, 1), 64.0)))
    # the third correction reaches back two corrections
    assert state.next_correction().item() == pytest.approx(np.log(0.25))


def test_dykstra_state_treats_hard_zeros_as_unit_ratio():
    state = DykstraState(n_sets=1, lag=1)
    state.push(np.array([[-np.inf, 0.0]]))
    state.push(np.array([[-np.inf, np.log(2.0)]]))
    assert state.next_correction() == pytest.approx(np.array([[0.0, -np.log(2.0)]]))


def test_partial_transport_moves_eta(rng, random_simplex):
    p, q = random_simplex(rng, 3), random_simplex(rng, 3)
    gamma = partial_transport(p, q, 0.6, cost_matrix(p.support, q.support), 0.5, 600)
    assert gamma.total_mass == pytest.approx(0.6, abs=1e-9)
    assert np.all(gamma.row_sums <= p.values + 1e-4)
    assert np.all(gamma.col_sums <= q.values + 1e-4)


def test_partial_transport_rejects_eta():
    p = _uniform(2)
    with pytest.raises(ConfigError):
        partial_transport(p, p, 1.5, cost_matrix(p.support, p.support), 0.5, 10)


def test_capacity_transport_caps_entries():
    p = _uniform(3)
    gamma = capacity_transport(p, p, 0.2, cost_matrix(p.support, p.support), 0.1, 900)
    assert gamma.entries.max() <= 0.2 + 1e-12
    assert gamma.row_sums == pytest.approx(p.values, abs=1e-4)
    assert gamma.col_sums == pytest.approx(p.values, abs=1e-4)


# ---------- barycentre ----------
def test_barycentre_coupling_point_mass():
    support = Support.grid(0, 0)
    delta = make_simplex([1.0], support)
    gamma, _ = barycentre_coupling(delta, delta, cost_matrix(support, support), 0.01, 400)
    assert gamma.entries.tolist() == [[1.0]]


def test_barycentre_coupling_equal_groups_is_near_diagonal():
    p = _uniform(3)
    gamma, _ = barycentre_coupling(p, p, cost_matrix(p.support, p.support), 0.05, 400)
    assert np.diag(gamma.entries) == pytest.approx(np.full(3, 1 / 3), abs=1e-6)


def test_barycentre_coupling_support_mismatch():
    with pytest.raises(SupportMismatch):
        barycentre_coupling(_uniform(2), make_simplex([0.5, 0.5], Support.grid(3, 4)),
                            cost_matrix(Support.grid(0, 1), Support.grid(0, 1)), 0.1, 10)


def test_barycentre_maps_full_weight_keeps_group_zero(rng):
    support = Support.grid(0, 2)
    gamma_b = Coupling(rng.dirichlet(np.ones(9)).reshape(3, 3), support, support)
    to_b0, to_b1 = barycentre_maps(gamma_b, 1.0, 0.0, support)
    assert to_b0.entries == pytest.approx(np.diag(gamma_b.row_sums))
    assert to_b1.row_sums == pytest.approx(gamma_b.col_sums)


def test_barycentre_maps_midpoint_rounding():
    support = Support.grid(0, 2)
    entries = np.zeros((3, 3))
    entries[0, 2] = 0.6
    entries[1, 1] = 0.4
    to_b0, to_b1 = barycentre_maps(Coupling(entries, support, support), 0.5, 0.5, support)
    assert to_b0.entries[0, 1] == 0.6
    assert to_b1.entries[2, 1] == 0.6
    assert to_b0.entries[1, 1] == 0.4
    assert to_b0.total_mass == pytest.approx(1.0)


def test_barycentre_maps_need_even_scalar_support():
    uneven = Support.from_values([0, 1, 3])
    with pytest.raises(UnevenSupport):
        barycentre_maps(Coupling(np.eye(3) / 3, uneven, uneven), 0.5, 0.5, uneven)
    tuples = Support.from_values([(0, 0), (0, 1)])
    with pytest.raises(UnevenSupport):
        barycentre_maps(Coupling(np.eye(2) / 2, tuples, tuples), 0.5, 0.5, tuples)


def test_barycentre_maps_weights_must_sum_to_one():
    support = Support.grid(0, 1)
    with pytest.raises(ConfigError):
        barycentre_maps(Coupling(np.eye(2) / 2, support, support), 0.5, 0.6, support)


def test_solver_trace_defaults():
    trace = SolverTrace()
    assert trace.iterations == 0
    assert trace.stop_reason == StopReason.MAX_ITERATIONS
    assert trace.to_frame().empty
