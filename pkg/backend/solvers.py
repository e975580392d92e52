"""
Entropic OT solvers: Dykstra repair, the iterative Bregman baseline, the barycentre
baseline and the generic Dykstra loop used by the partial/capacity variants.

Iterates are kept as log matrices so that kernels like exp(-C / 0.01) never
underflow; couplings are exponentiated only when handed back.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from config import (
    MARGINAL_TOLERANCE,
    SCALING_CYCLES,
    SCALING_FACTOR,
    SCALING_FINAL_CYCLES,
    SCALING_START,
    SCALING_TOLERANCE,
)
from distributions import RepairVector, SimplexVector, Support
from errors import ConfigError, NonFiniteCoupling, NonPositiveEpsilon, SupportMismatch, UnevenSupport
from transport_core import (
    BandConstraint,
    CostMatrix,
    Coupling,
    band_duals,
    log_gibbs_kernel,
    log_prox_band,
    log_prox_capacity,
    log_prox_cols,
    log_prox_cols_leq,
    log_prox_rows,
    log_prox_rows_leq,
    log_prox_total_mass,
)

logger = logging.getLogger(__name__)

Projection = Callable[[np.ndarray], np.ndarray]


class StopReason(str, Enum):
    MAX_ITERATIONS = "MaxIterations"
    BAND_RESIDUAL = "BandResidualBelowVarepsilon"
    NO_SOLVE = "NoSolve"


@dataclass
class SolverTrace:
    iterations: int = 0
    band_residuals: List[float] = field(default_factory=list)
    row_residuals: List[float] = field(default_factory=list)
    col_residuals: List[float] = field(default_factory=list)
    stop_reason: StopReason = StopReason.MAX_ITERATIONS
    warm_start_cycles: int = 0

    def record(self, gamma: np.ndarray, p: np.ndarray, q: np.ndarray, v: Optional[np.ndarray]):
        self.iterations += 1
        self.band_residuals.append(float(np.abs(gamma.T @ v).sum()) if v is not None else float("nan"))
        self.row_residuals.append(float(np.abs(gamma.sum(axis=1) - p).sum()))
        self.col_residuals.append(float(np.abs(gamma.sum(axis=0) - q).sum()))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "iteration": np.arange(1, self.iterations + 1),
            "band_residual": self.band_residuals,
            "row_residual": self.row_residuals,
            "col_residual": self.col_residuals,
        })


def _coupling_values(log_gamma: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        gamma = np.exp(log_gamma)
    if not np.all(np.isfinite(gamma)):
        raise NonFiniteCoupling("The iterate left the float range (non-finite coupling entries)")
    return gamma


# ---------- generic Dykstra ----------
def _log_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """log(num / den), read as 0 wherever either side is a hard zero."""
    with np.errstate(invalid="ignore"):
        ratio = num - den
    ratio[np.isneginf(num) | np.isneginf(den)] = 0.0
    return ratio


@dataclass
class DykstraState:
    """Rolling window of log iterates gamma^(k-L-1..k-1) and of the last `lag` applied corrections."""
    n_sets: int
    lag: int
    gammas: Deque[np.ndarray] = field(init=False)
    corrections: Deque[np.ndarray] = field(init=False)
    k: int = 0

    def __post_init__(self):
        self.gammas = deque(maxlen=self.n_sets + 1)
        self.corrections = deque(maxlen=self.lag)

    def push(self, log_gamma: np.ndarray):
        self.gammas.append(log_gamma)
        self.k += 1

    @property
    def current(self) -> np.ndarray:
        return self.gammas[-1]

    def seed(self, correction) -> np.ndarray:
        """Correction of one of the first L steps (0 for a plain projection)."""
        correction = np.zeros_like(self.current) + correction
        self.corrections.append(correction)
        return correction

    def next_correction(self) -> np.ndarray:
        """log q = log q_{lag back} + log(gamma^(k-L-1) / gamma^(k-L)) for the step about to run."""
        ratio = _log_ratio(self.gammas[-self.n_sets - 1], self.gammas[-self.n_sets])
        if len(self.corrections) == self.lag:
            ratio = self.corrections[0] + ratio
        self.corrections.append(ratio)
        return ratio


def cyclic_schedule(n_sets: int) -> Callable[[int], int]:
    return lambda k: (k - 1) % n_sets


def shifted_schedule(k: int) -> int:
    """C1, C2, C3, then C_{1 + (k mod 3)}: C2, C3, C1, C2, ..."""
    if k <= 3:
        return k - 1
    return k % 3


def generalized_dykstra(log_gamma0: np.ndarray, projections: Sequence[Projection], iterations: int,
                        schedule: Optional[Callable[[int], int]] = None, lag: Optional[int] = None,
                        stop: Optional[Callable[[np.ndarray], bool]] = None,
                        on_iteration: Optional[Callable[[np.ndarray], None]] = None,
                        seeds: Optional[Sequence] = None) -> Tuple[np.ndarray, int, bool]:
    """KL-Dykstra over L convex sets, on log matrices.

    Step k applies its projection to log gamma^(k-1) + log q, where q multiplies
    the correction used `lag` steps earlier (default L) by gamma^(k-L-1) / gamma^(k-L).
    The first L steps use `seeds` (one log correction per step, 0 when omitted, which
    makes them plain projections); seeding with the corrections of an earlier run
    continues that run. `schedule(k)` gives the 0-based set index of step k (default
    cyclic) and `stop` is evaluated from step L + 1 on.
    Returns (log gamma, steps executed, stopped early).
    """
    n_sets = len(projections)
    schedule = schedule or cyclic_schedule(n_sets)
    seeds = list(seeds) if seeds is not None else [0.0] * n_sets
    if len(seeds) != n_sets:
        raise ConfigError(f"Expected {n_sets} seed corrections, got {len(seeds)}")
    state = DykstraState(n_sets=n_sets, lag=lag or n_sets)
    state.push(np.asarray(log_gamma0, dtype=float))
    for k in range(1, iterations + 1):
        proj = projections[schedule(k)]
        q = state.seed(seeds[k - 1]) if k <= n_sets else state.next_correction()
        log_gamma = proj(state.current + q)
        state.push(log_gamma)
        if on_iteration is not None:
            on_iteration(log_gamma)
        if k > n_sets and stop is not None and stop(log_gamma):
            return log_gamma, k, True
    return state.current, iterations, False


# ---------- epsilon scaling warm start ----------
@dataclass(frozen=True)
class EpsilonScaling:
    """Anneal the dual potentials over epsilon_t = start * factor^t, ending at the target epsilon.

    Every stage runs until the L1 marginal residual falls below `tolerance`, or
    for at most `cycles` sweeps (`final_cycles` on the target epsilon).
    """
    start: float = SCALING_START
    factor: float = SCALING_FACTOR
    tolerance: float = SCALING_TOLERANCE
    cycles: int = SCALING_CYCLES
    final_cycles: int = SCALING_FINAL_CYCLES

    def __post_init__(self):
        if not self.start > 0:
            raise ConfigError(f"The scaling start must be positive, got {self.start}")
        if not 0 < self.factor < 1:
            raise ConfigError(f"The scaling factor must lie in (0, 1), got {self.factor}")
        if self.cycles < 1 or self.final_cycles < 1:
            raise ConfigError("Scaling stages need at least one cycle")

    def schedule(self, epsilon: float) -> List[float]:
        stages = []
        eps = self.start
        while eps > epsilon * (1 + 1e-12):
            stages.append(eps)
            eps *= self.factor
        stages.append(epsilon)
        return stages


DEFAULT_SCALING = EpsilonScaling()


@dataclass
class DualPotentials:
    """log gamma = (f_i + g_j - C_ij - V_i h_j) / epsilon."""
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    cycles: int = 0

    @classmethod
    def zeros(cls, n: int, m: int) -> "DualPotentials":
        return cls(np.zeros(n), np.zeros(m), np.zeros(m))

    def log_coupling(self, cost: np.ndarray, epsilon: float, v: Optional[np.ndarray] = None) -> np.ndarray:
        log_gamma = (self.f[:, None] + self.g[None, :] - cost) / epsilon
        if v is not None:
            log_gamma = log_gamma - np.outer(v, self.h) / epsilon
        return log_gamma

    def residual(self, cost: np.ndarray, epsilon: float, p: np.ndarray, q: np.ndarray,
                 v: Optional[np.ndarray] = None) -> float:
        gamma = np.exp(self.log_coupling(cost, epsilon, v))
        return float(np.abs(gamma.sum(axis=1) - p).sum() + np.abs(gamma.sum(axis=0) - q).sum())


def _log_marginal(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(values)


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return logsumexp(a, axis=axis)


def anneal_potentials(p: np.ndarray, q: np.ndarray, cost: np.ndarray, epsilon: float, scaling: EpsilonScaling,
                      bc: Optional[BandConstraint] = None) -> DualPotentials:
    """Dual potentials of the rows/cols(/band) Dykstra cycle, annealed down to `epsilon`.

    Each sweep rescales the rows, then the columns, then (with a band) recomputes the
    band multipliers from the band-free kernel, warm-started from the previous ones.
    Potentials carry over from one stage to the next.
    """
    log_p, log_q = _log_marginal(p), _log_marginal(q)
    v = bc.v.values if bc is not None else None
    pot = DualPotentials.zeros(len(p), len(q))
    stages = scaling.schedule(epsilon)
    for t, eps in enumerate(stages):
        cap = scaling.final_cycles if t == len(stages) - 1 else scaling.cycles
        residual = float("inf")
        for n in range(1, cap + 1):
            shift = cost if v is None else cost + np.outer(v, pot.h)
            pot.f = eps * (log_p - _lse((pot.g[None, :] - shift) / eps, axis=1))
            pot.g = eps * (log_q - _lse((pot.f[:, None] - shift) / eps, axis=0))
            if bc is not None:
                pot.h = eps * band_duals(pot.log_coupling(cost, eps), bc, nu0=pot.h / eps)
            pot.cycles += 1
            if n % 10 == 0 or n == cap:
                residual = pot.residual(cost, eps, p, q, v)
                if residual <= scaling.tolerance:
                    break
        logger.debug("Scaling stage epsilon=%.4g: %d cycles, marginal residual %.3e", eps, n, residual)
    return pot


def _warm_start(p: SimplexVector, q: SimplexVector, cost: CostMatrix, epsilon: float,
                scaling: Optional[EpsilonScaling], bc: Optional[BandConstraint] = None):
    """Starting log iterate, the band correction to seed and the sweeps spent annealing.

    Without scaling this is log exp(-C / epsilon). With scaling the start is the annealed
    iterate diag(a) exp(-C / epsilon) diag(b) exp(-V h / epsilon); the row and column
    factors leave every KL projection onto a subset of Pi(P, Q) unchanged and
    exp(V h / epsilon) is the band correction already accumulated.
    """
    if scaling is None:
        return log_gibbs_kernel(cost, epsilon), 0.0, 0
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")
    pot = anneal_potentials(p.values, q.values, cost.entries, epsilon, scaling, bc)
    if bc is None:
        return pot.log_coupling(cost.entries, epsilon), 0.0, pot.cycles
    v = bc.v.values
    return pot.log_coupling(cost.entries, epsilon, v), np.outer(v, pot.h) / epsilon, pot.cycles


def _check_iterations(k: int, minimum: int):
    if k < minimum:
        raise ConfigError(f"Need at least {minimum} iterations, got {k}")


def bregman_baseline(p: SimplexVector, q: SimplexVector, cost: CostMatrix, epsilon: float, iterations: int,
                     v: Optional[RepairVector] = None,
                     scaling: Optional[EpsilonScaling] = DEFAULT_SCALING) -> Tuple[Coupling, SolverTrace]:
    """Iterative Bregman projections onto {gamma 1 = P} and {gamma' 1 = Q}.

    Step k projects onto C_{1 + (k mod 2)}, so odd steps fix the columns.
    `v` is only used to report band residuals; `scaling=None` starts from exp(-C / epsilon).
    """
    _check_iterations(iterations, 1)
    trace = SolverTrace()
    pv, qv = p.values, q.values
    vv = v.values if v is not None else None
    logger.info("Bregman baseline: N=%d, M=%d, epsilon=%g, K=%d", len(pv), len(qv), epsilon, iterations)
    log_gamma, _, trace.warm_start_cycles = _warm_start(p, q, cost, epsilon, scaling)
    for k in range(1, iterations + 1):
        log_gamma = log_prox_cols(log_gamma, qv) if k % 2 == 1 else log_prox_rows(log_gamma, pv)
        trace.record(_coupling_values(log_gamma), pv, qv, vv)
    logger.debug("Baseline residuals: rows=%.3e cols=%.3e", trace.row_residuals[-1], trace.col_residuals[-1])
    return Coupling(_coupling_values(log_gamma), p.support, q.support), trace


def dykstra_repair(p: SimplexVector, q: SimplexVector, bc: BandConstraint, cost: CostMatrix, epsilon: float,
                   iterations: int, varepsilon: float, marginal_tolerance: Optional[float] = MARGINAL_TOLERANCE,
                   pairing: str = "dykstra",
                   scaling: Optional[EpsilonScaling] = DEFAULT_SCALING) -> Tuple[Coupling, SolverTrace]:
    """KL projection of exp(-C/epsilon) onto Pi_Lambda(P, Q) by Dykstra's algorithm.

    Stops early once ||gamma' V||_1 < varepsilon (and, unless `marginal_tolerance`
    is None, both marginal residuals are within it). `pairing="shifted"` runs the
    C1, C2, C3, C2, C3, C1, ... order with corrections chained four steps back,
    always from the plain kernel; it raises NonFiniteCoupling once the iterates diverge.
    """
    _check_iterations(iterations, 4)
    if not varepsilon > 0:
        raise ConfigError(f"varepsilon must be positive, got {varepsilon}")
    if pairing not in ("dykstra", "shifted"):
        raise ConfigError(f"Unknown Dykstra pairing '{pairing}'")
    if bc.v.support != p.support or bc.lam.size != q.support.size:
        raise SupportMismatch("Band constraint does not match the source/target supports")

    pv, qv, vv = p.values, q.values, bc.v.values
    trace = SolverTrace()
    projections = [
        lambda lg: log_prox_rows(lg, pv),
        lambda lg: log_prox_cols(lg, qv),
        lambda lg: log_prox_band(lg, bc),
    ]

    def converged(log_gamma: np.ndarray) -> bool:
        if trace.band_residuals[-1] >= varepsilon:
            return False
        if marginal_tolerance is None:
            return True
        return trace.row_residuals[-1] <= marginal_tolerance and trace.col_residuals[-1] <= marginal_tolerance

    logger.info("Dykstra repair: N=%d, epsilon=%g, K=%d, ||Lambda||_1=%g, pairing=%s",
                len(pv), epsilon, iterations, float(bc.lam.sum()), pairing)
    if pairing == "shifted":
        log_gamma0, seeds = log_gibbs_kernel(cost, epsilon), None
        schedule, lag = shifted_schedule, 4
    else:
        log_gamma0, band_seed, trace.warm_start_cycles = _warm_start(p, q, cost, epsilon, scaling, bc)
        seeds = [0.0, 0.0, band_seed]
        schedule, lag = None, 3
    log_gamma, _, stopped = generalized_dykstra(
        log_gamma0, projections, iterations,
        schedule=schedule, lag=lag, stop=converged, seeds=seeds,
        on_iteration=lambda lg: trace.record(_coupling_values(lg), pv, qv, vv),
    )
    trace.stop_reason = StopReason.BAND_RESIDUAL if stopped else StopReason.MAX_ITERATIONS
    logger.info("Dykstra repair stopped after %d iterations (%s, %d warm-start sweeps), band residual %.3e",
                trace.iterations, trace.stop_reason.value, trace.warm_start_cycles, trace.band_residuals[-1])
    return Coupling(_coupling_values(log_gamma), p.support, q.support), trace


def partial_transport(p: SimplexVector, q: SimplexVector, eta: float, cost: CostMatrix, epsilon: float,
                      iterations: int) -> Coupling:
    """Entropic partial OT: gamma 1 <= P, gamma' 1 <= Q, total mass eta."""
    if not 0 <= eta <= min(p.values.sum(), q.values.sum()) + 1e-12:
        raise ConfigError(f"eta must lie in [0, min(|P|, |Q|)], got {eta}")
    projections = [
        lambda lg: log_prox_rows_leq(lg, p.values),
        lambda lg: log_prox_cols_leq(lg, q.values),
        lambda lg: log_prox_total_mass(lg, eta),
    ]
    log_gamma, _, _ = generalized_dykstra(log_gibbs_kernel(cost, epsilon), projections, iterations)
    return Coupling(_coupling_values(log_gamma), p.support, q.support)


def capacity_transport(p: SimplexVector, q: SimplexVector, capacity, cost: CostMatrix, epsilon: float,
                       iterations: int) -> Coupling:
    """Entropic capacity-constrained OT: Pi(P, Q) with gamma <= capacity entrywise."""
    cap = np.asarray(capacity, dtype=float)
    if cap.ndim == 0:
        cap = np.full((p.support.size, q.support.size), float(cap))
    projections = [
        lambda lg: log_prox_rows(lg, p.values),
        lambda lg: log_prox_cols(lg, q.values),
        lambda lg: log_prox_capacity(lg, cap),
    ]
    log_gamma, _, _ = generalized_dykstra(log_gibbs_kernel(cost, epsilon), projections, iterations)
    return Coupling(_coupling_values(log_gamma), p.support, q.support)


def barycentre_coupling(p0: SimplexVector, p1: SimplexVector, cost: CostMatrix, epsilon: float,
                        iterations: int,
                        scaling: Optional[EpsilonScaling] = DEFAULT_SCALING) -> Tuple[Coupling, SolverTrace]:
    """Entropic coupling between the two group conditionals (rows: s0, columns: s1)."""
    if not p0.same_support(p1):
        raise SupportMismatch("Both group distributions must live on the same support")
    return bregman_baseline(p0, p1, cost, epsilon, iterations, scaling=scaling)


def _check_even(support: Support):
    if not support.is_scalar:
        raise UnevenSupport("Barycentric index arithmetic needs a scalar support")
    if support.size > 2:
        steps = np.diff(support.as_array()[:, 0])
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise UnevenSupport("Barycentric index arithmetic needs an evenly spaced support")


def barycentre_maps(gamma_b: Coupling, pi0: float, pi1: float, support: Support) -> Tuple[Coupling, Coupling]:
    """Push gamma^B onto the barycentric grid.

    Mass at (i, k) lands at index round(pi0 * i + pi1 * k) (half to even) in row i
    of gamma^{0->B} and in row k of gamma^{1->B}; collisions accumulate.
    """
    if pi0 < 0 or pi1 < 0 or abs(pi0 + pi1 - 1.0) > 1e-9:
        raise ConfigError(f"Barycentric weights must be nonnegative and sum to 1, got {pi0}, {pi1}")
    _check_even(support)
    g = gamma_b.entries
    n = support.size
    rows, cols = np.nonzero(g)
    mass = g[rows, cols]
    targets = np.clip(np.rint(pi0 * rows + pi1 * cols).astype(np.int64), 0, n - 1)
    to_b0 = np.zeros((n, n))
    to_b1 = np.zeros((n, n))
    np.add.at(to_b0, (rows, targets), mass)
    np.add.at(to_b1, (cols, targets), mass)
    return Coupling(to_b0, support, support), Coupling(to_b1, support, support)
