"""
Cost matrices, the Gibbs kernel, entropy/KL functionals and the KL projections
(closed-form proxes plus the iterative band projection)
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, rel_entr, xlogy

from config import EXP_BOUNDARY, KERNEL_FLOOR, LOG_ROOT_TOL, ROOT_TOL
from distributions import RepairVector, SimplexVector, Support
from errors import (
    DimensionMismatch,
    LengthMismatch,
    NonPositiveEpsilon,
    NonPositiveReference,
    NonPositiveWeight,
    RootNotBracketed,
    RootNotConverged,
    ZeroRowWithMass,
    ZeroTotalMass,
)

logger = logging.getLogger(__name__)

VectorLike = Union[SimplexVector, Sequence[float], np.ndarray]


def _vector(v: VectorLike) -> np.ndarray:
    if isinstance(v, SimplexVector):
        return np.asarray(v.values, dtype=float)
    return np.asarray(v, dtype=float).ravel()


def _matrix(m) -> np.ndarray:
    if isinstance(m, (Coupling, CostMatrix)):
        return m.entries
    return np.asarray(m, dtype=float)


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray
    weights: np.ndarray
    source: Support
    target: Support


def cost_matrix(src: Support, tgt: Support, weights: Optional[Sequence[float]] = None) -> CostMatrix:
    """Weighted L1 cost C_ij = ||rho * (x_i - y_j)||_1."""
    if src.dim != tgt.dim:
        raise DimensionMismatch(f"Source points are {src.dim}-d, target points are {tgt.dim}-d")
    rho = np.ones(src.dim) if weights is None else np.asarray(weights, dtype=float).ravel()
    if rho.shape != (src.dim,):
        raise DimensionMismatch(f"Expected {src.dim} cost weights, got {rho.size}")
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise NonPositiveWeight(f"Cost weights must be strictly positive, got {rho.tolist()}")
    entries = cdist(src.as_array(), tgt.as_array(), metric="cityblock", w=rho)
    return CostMatrix(entries, rho, src, tgt)


def gibbs_kernel(cost, epsilon: float) -> np.ndarray:
    """xi = exp(-C / epsilon), floored so that it stays strictly positive."""
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")
    return np.maximum(np.exp(-_matrix(cost) / epsilon), KERNEL_FLOOR)


@dataclass(frozen=True)
class Coupling:
    entries: np.ndarray
    source: Support
    target: Support

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.shape != (self.source.size, self.target.size):
            raise LengthMismatch(
                f"Coupling shape {entries.shape} does not match supports "
                f"({self.source.size}, {self.target.size})"
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def product(cls, p: SimplexVector, q: SimplexVector) -> "Coupling":
        return cls(np.outer(p.values, q.values), p.support, q.support)

    @property
    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    @property
    def total_mass(self) -> float:
        return float(self.entries.sum())

    def band_residual(self, v: RepairVector) -> float:
        return float(np.abs(self.entries.T @ v.values).sum())

    def is_feasible(self, p: VectorLike, q: VectorLike, bc: Optional["BandConstraint"] = None,
                    tol: float = 1e-12) -> bool:
        """Membership in Pi_Lambda(P, Q) (or Pi(P, Q) without a band)."""
        if np.any(self.entries < 0):
            return False
        if np.abs(self.row_sums - _vector(p)).max() > tol:
            return False
        if np.abs(self.col_sums - _vector(q)).max() > tol:
            return False
        if bc is not None:
            return bool(np.all(np.abs(self.entries.T @ bc.v.values) <= bc.lam + tol))
        return True


@dataclass(frozen=True)
class BandConstraint:
    """-Lambda <= gamma' V <= Lambda, one bound per target point."""
    v: RepairVector
    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float).ravel()
        if np.any(np.isnan(lam)) or np.any(lam < 0):
            raise DimensionMismatch("Lambda entries must be nonnegative")
        object.__setattr__(self, "lam", lam)

    @classmethod
    def broadcast(cls, v: RepairVector, lam, size: int) -> "BandConstraint":
        lam = np.asarray(lam, dtype=float)
        if lam.ndim == 0:
            lam = np.full(size, float(lam))
        if lam.shape != (size,):
            raise LengthMismatch(f"Lambda has {lam.size} entries, target support has {size}")
        return cls(v, lam)


# ---------- functionals ----------
def entropy(gamma) -> float:
    """E(gamma) = -sum gamma (log gamma - 1), with 0 log 0 = 0."""
    g = _matrix(gamma)
    return float(-(xlogy(g, g) - g).sum())


def kl_divergence(gamma, xi) -> float:
    """KL(gamma | xi) = sum gamma (log(gamma / xi) - 1)."""
    g = _matrix(gamma)
    ref = _matrix(xi)
    if np.any(ref <= 0):
        raise NonPositiveReference("The reference matrix must be strictly positive")
    return float((rel_entr(g, ref) - g).sum())


def transport_cost(gamma, cost) -> float:
    return float((_matrix(gamma) * _matrix(cost)).sum())


def entropic_objective(gamma, cost, epsilon: float) -> float:
    return transport_cost(gamma, cost) - epsilon * entropy(gamma)


# ---------- closed-form KL projections ----------
def prox_rows(gamma_bar, p: VectorLike) -> np.ndarray:
    """KL projection onto {gamma 1 = P}."""
    g = _matrix(gamma_bar)
    target = _vector(p)
    rows = g.sum(axis=1)
    if np.any((rows <= 0) & (target > 0)):
        raise ZeroRowWithMass(f"Rows {np.flatnonzero((rows <= 0) & (target > 0)).tolist()} are empty")
    scale = np.divide(target, rows, out=np.zeros_like(target), where=rows > 0)
    return g * scale[:, None]


def prox_cols(gamma_bar, q: VectorLike) -> np.ndarray:
    """KL projection onto {gamma' 1 = Q}."""
    return prox_rows(_matrix(gamma_bar).T, q).T


def prox_rows_leq(gamma_bar, p: VectorLike) -> np.ndarray:
    """KL projection onto {gamma 1 <= P}."""
    g = _matrix(gamma_bar)
    target = _vector(p)
    rows = g.sum(axis=1)
    scale = np.ones_like(rows)
    np.divide(target, rows, out=scale, where=rows > 0)
    return g * np.minimum(1.0, scale)[:, None]


def prox_cols_leq(gamma_bar, q: VectorLike) -> np.ndarray:
    """KL projection onto {gamma' 1 <= Q}."""
    return prox_rows_leq(_matrix(gamma_bar).T, q).T


def prox_total_mass(gamma_bar, eta: float) -> np.ndarray:
    """KL projection onto {1' gamma 1 = eta}."""
    g = _matrix(gamma_bar)
    total = g.sum()
    if total <= 0:
        if eta > 0:
            raise ZeroTotalMass("Cannot rescale an all-zero matrix to positive mass")
        return g.copy()
    return g * (eta / total)


def prox_capacity(gamma_bar, capacity) -> np.ndarray:
    """KL projection onto {gamma <= Lambda_cap}."""
    return np.minimum(_matrix(gamma_bar), _matrix(capacity))


# ---------- band projection ----------
def solve_nu(col: np.ndarray, v: np.ndarray, target: float, maxiter: int = 200) -> float:
    """Root of F(x) = sum col_i V_i exp(-V_i x) - target.

    F is non-increasing, so the root is bracketed by doubling away from 0 in the
    direction of the sign of F(0); Newton steps that leave the bracket or stall
    fall back to bisection.
    """
    col = np.asarray(col, dtype=float)
    v = np.asarray(v, dtype=float)
    keep = (col > 0) & (v != 0)
    col, v = col[keep], v[keep]
    tol = ROOT_TOL * max(1.0, abs(target))

    def f_and_df(x: float):
        with np.errstate(over="ignore"):
            terms = col * v * np.exp(-v * x)
            return float(terms.sum() - target), float(-(terms * v).sum())

    f0, _ = f_and_df(0.0)
    if abs(f0) <= tol:
        return 0.0
    if col.size == 0:
        raise RootNotBracketed(f"No active mass can move gamma'V to {target}")
    # F ranges over (0, inf) when every active V_i > 0 and over (-inf, 0) when every V_i < 0
    if (np.all(v > 0) and target <= 0) or (np.all(v < 0) and target >= 0):
        raise RootNotBracketed(f"Active mass is one-signed in V; gamma'V cannot reach {target}")

    limit = EXP_BOUNDARY / np.abs(v).max()
    direction = 1.0 if f0 > 0 else -1.0
    near, far = 0.0, direction * min(1.0, limit)
    f_far, _ = f_and_df(far)
    while np.sign(f_far) == np.sign(f0) and abs(f_far) > tol:
        if abs(far) >= limit:
            raise RootNotBracketed(
                f"F keeps the sign of F(0)={f0:.3e} up to |x|={limit:.3e} (target {target})"
            )
        near = far
        far = direction * min(2.0 * abs(far), limit)
        f_far, _ = f_and_df(far)
    if abs(f_far) <= tol:
        return far

    # F(lo) > 0 > F(hi) since F is decreasing
    lo, hi = min(near, far), max(near, far)
    x = 0.5 * (lo + hi)
    dx_old = hi - lo
    dx = dx_old
    f, df = f_and_df(x)
    for _ in range(maxiter):
        if abs(f) <= tol:
            return x
        if f > 0:
            lo = x
        else:
            hi = x
        newton_escapes = df == 0 or not (lo < x - f / df < hi)
        if newton_escapes or abs(2.0 * f) > abs(dx_old * df):
            dx_old = dx
            dx = 0.5 * (hi - lo)
            x = lo + dx
        else:
            dx_old = dx
            dx = f / df
            x = x - dx
        if hi - lo <= np.finfo(float).eps * max(1.0, abs(x)):
            f, _ = f_and_df(x)
            if abs(f) <= tol:
                return x
            raise RootNotConverged(
                f"Bracket collapsed at x={x:.6g} with |F|={abs(f):.3e} above {tol:.1e} (target {target})"
            )
        f, df = f_and_df(x)
    if abs(f) <= tol:
        return x
    raise RootNotConverged(f"No root within {maxiter} steps: |F|={abs(f):.3e} at x={x:.6g} (target {target})")


def prox_band(gamma_bar, bc: BandConstraint) -> np.ndarray:
    """KL projection onto {-Lambda <= gamma' V <= Lambda}.

    Columns inside the band and rows with V_i = 0 are returned untouched.
    """
    g = _matrix(gamma_bar)
    out = g.copy()
    active = bc.v.active
    if active.size == 0:
        return out
    v_active = bc.v.values[active]
    s = g[active].T @ v_active
    above = s > bc.lam
    below = s < -bc.lam
    for j in np.flatnonzero(above | below):
        target = bc.lam[j] if above[j] else -bc.lam[j]
        col = g[active, j]
        nu = solve_nu(col, v_active, target)
        out[active, j] = col * np.exp(-v_active * nu)
    return out


# ---------- log-domain projections ----------
def log_gibbs_kernel(cost, epsilon: float) -> np.ndarray:
    """log xi = -C / epsilon, exact (no floor)."""
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")
    return -_matrix(cost) / epsilon


def _log(x) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=float))


def _lse(log_gamma: np.ndarray, axis=None, **kwargs):
    with np.errstate(divide="ignore", invalid="ignore"):
        return logsumexp(log_gamma, axis=axis, **kwargs)


def log_prox_rows(log_gamma_bar, p: VectorLike) -> np.ndarray:
    """Log of the KL projection onto {gamma 1 = P}; -inf entries stay -inf."""
    lg = _matrix(log_gamma_bar)
    target = _vector(p)
    rows = _lse(lg, axis=1)
    empty = np.isneginf(rows)
    if np.any(empty & (target > 0)):
        raise ZeroRowWithMass(f"Rows {np.flatnonzero(empty & (target > 0)).tolist()} are empty")
    return lg + (_log(target) - np.where(empty, 0.0, rows))[:, None]


def log_prox_cols(log_gamma_bar, q: VectorLike) -> np.ndarray:
    return log_prox_rows(_matrix(log_gamma_bar).T, q).T


def log_prox_rows_leq(log_gamma_bar, p: VectorLike) -> np.ndarray:
    lg = _matrix(log_gamma_bar)
    target = _vector(p)
    rows = _lse(lg, axis=1)
    shift = np.zeros_like(rows)
    filled = ~np.isneginf(rows)
    shift[filled] = np.minimum(0.0, _log(target[filled]) - rows[filled])
    return lg + shift[:, None]


def log_prox_cols_leq(log_gamma_bar, q: VectorLike) -> np.ndarray:
    return log_prox_rows_leq(_matrix(log_gamma_bar).T, q).T


def log_prox_total_mass(log_gamma_bar, eta: float) -> np.ndarray:
    lg = _matrix(log_gamma_bar)
    total = _lse(lg)
    if np.isneginf(total):
        if eta > 0:
            raise ZeroTotalMass("Cannot rescale an all-zero matrix to positive mass")
        return lg.copy()
    return lg + (_log(eta) - total)


def log_prox_capacity(log_gamma_bar, capacity) -> np.ndarray:
    return np.minimum(_matrix(log_gamma_bar), _log(_matrix(capacity)))


def _lse_and_slope(exponents: np.ndarray, slopes: np.ndarray):
    """Column-wise logsumexp of exponents_ij = a_ij + slopes_i x_j and its x-derivative."""
    if exponents.shape[0] == 0:
        return np.full(exponents.shape[1], -np.inf), np.zeros(exponents.shape[1])
    lse = _lse(exponents, axis=0)
    with np.errstate(invalid="ignore"):
        weights = np.exp(exponents - np.where(np.isfinite(lse), lse, 0.0))
    return lse, np.where(np.isfinite(lse), (weights * slopes[:, None]).sum(axis=0), 0.0)


def _share(part: np.ndarray, whole: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(whole), np.exp(part - whole), 0.0)


def solve_log_nu(log_cols, v, targets, x0=None, maxiter: int = 200) -> np.ndarray:
    """Roots x_j of sum_i exp(log_cols_ij) V_i exp(-V_i x_j) = targets_j, one per column.

    The positive and negative V parts are summed separately in log space, with the
    target added to the side carrying its sign, so column j solves
    G(x) = log(positive side) - log(negative side) = 0. G is decreasing; each root
    is bracketed by doubling away from x0 and refined by Newton steps that fall
    back to bisection when they leave the bracket.
    """
    lc = np.asarray(log_cols, dtype=float)
    lc = lc.reshape(lc.shape[0], -1)
    v = np.asarray(v, dtype=float).ravel()
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    keep = v != 0
    lc, v = lc[keep], v[keep]
    n_cols = lc.shape[1]
    x = np.zeros(n_cols) if x0 is None else np.array(x0, dtype=float).reshape(n_cols)
    x[~np.isfinite(x)] = 0.0

    pos, neg = v > 0, v < 0
    log_v = np.log(np.abs(v))
    log_t = _log(np.abs(targets))
    upper = targets >= 0

    has_pos = np.isfinite(lc[pos]).any(axis=0) if pos.any() else np.zeros(n_cols, dtype=bool)
    has_neg = np.isfinite(lc[neg]).any(axis=0) if neg.any() else np.zeros(n_cols, dtype=bool)
    reachable = np.where(targets > 0, has_pos, np.where(targets < 0, has_neg, has_pos & has_neg))
    if not reachable.all():
        bad = np.flatnonzero(~reachable).tolist()
        raise RootNotBracketed(f"Active mass is one-signed in V; gamma'V cannot reach the band in columns {bad}")

    def evaluate(xs: np.ndarray, cols: np.ndarray):
        block = lc[:, cols]
        a, da = _lse_and_slope(block[pos] + log_v[pos, None] - v[pos, None] * xs[None, :], -v[pos])
        b, db = _lse_and_slope(block[neg] + log_v[neg, None] - v[neg, None] * xs[None, :], -v[neg])
        up, lt = upper[cols], log_t[cols]
        rhs = np.logaddexp(b, lt)
        lhs = np.logaddexp(a, lt)
        with np.errstate(invalid="ignore"):
            g = np.where(up, a - rhs, lhs - b)
            dg = np.where(up, da - db * _share(b, rhs), da * _share(a, lhs) - db)
        # absolute floor plus the rounding of log sums of size |A|
        scale = np.maximum(np.abs(np.where(up, a, lhs)), np.abs(np.where(up, rhs, b)))
        return g, dg, LOG_ROOT_TOL + 8 * np.finfo(float).eps * scale

    every = np.arange(n_cols)
    g, dg, tol = evaluate(x, every)
    done = np.abs(g) <= tol
    lo = np.where(g > 0, x, -np.inf)
    hi = np.where(g > 0, np.inf, x)

    # bracket: walk away from x0 with doubling steps until G changes sign, starting
    # from twice the Newton distance so that a good x0 brackets on the first try
    with np.errstate(divide="ignore", invalid="ignore"):
        newton_gap = np.abs(g / dg)
    step = np.where((dg < 0) & np.isfinite(newton_gap), np.minimum(1.0, 2.0 * newton_gap), 1.0)
    step = np.maximum(step, 1e-12 * np.maximum(1.0, np.abs(x)))
    for _ in range(200):
        open_ = ~done & (np.isinf(lo) | np.isinf(hi))
        if not open_.any():
            break
        cols = np.flatnonzero(open_)
        trial = np.where(np.isinf(hi[cols]), lo[cols] + step[cols], hi[cols] - step[cols])
        gt, _, tt = evaluate(trial, cols)
        hit = np.abs(gt) <= tt
        x[cols[hit]] = trial[hit]
        done[cols[hit]] = True
        lo[cols] = np.where(gt > 0, trial, lo[cols])
        hi[cols] = np.where(gt > 0, hi[cols], trial)
        step[cols] *= 2.0
    else:
        raise RootNotBracketed("G keeps one sign over the whole float range")

    todo = np.flatnonzero(~done)
    if todo.size:
        inside = (x[todo] >= lo[todo]) & (x[todo] <= hi[todo])
        x[todo] = np.where(inside, x[todo], 0.5 * (lo[todo] + hi[todo]))
        g_t, dg_t, _ = evaluate(x[todo], todo)
    for _ in range(maxiter):
        if todo.size == 0:
            return x
        newton = x[todo] - g_t / np.where(dg_t < 0, dg_t, -1.0)
        ok = (dg_t < 0) & (newton > lo[todo]) & (newton < hi[todo])
        x[todo] = np.where(ok, newton, 0.5 * (lo[todo] + hi[todo]))
        g_t, dg_t, tol_t = evaluate(x[todo], todo)
        conv = np.abs(g_t) <= tol_t
        lo[todo] = np.where(g_t > 0, x[todo], lo[todo])
        hi[todo] = np.where(g_t > 0, hi[todo], x[todo])
        collapsed = ~conv & (hi[todo] - lo[todo] <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(x[todo])))
        if collapsed.any():
            raise RootNotConverged(
                f"Bracket collapsed with |G|={np.abs(g_t[collapsed]).max():.3e} in columns {todo[collapsed].tolist()}"
            )
        todo, g_t, dg_t = todo[~conv], g_t[~conv], dg_t[~conv]
    if todo.size == 0:
        return x
    raise RootNotConverged(f"No root within {maxiter} steps in columns {todo.tolist()}")


def band_duals(log_gamma_bar, bc: BandConstraint, nu0=None) -> np.ndarray:
    """Per-column multipliers nu of the band projection; 0 where the column is inside the band."""
    lg = _matrix(log_gamma_bar)
    nu = np.zeros(lg.shape[1])
    active = bc.v.active
    if active.size == 0:
        return nu
    v_active = bc.v.values[active]
    la = lg[active]
    log_s, sign = _lse(la, axis=0, b=v_active[:, None], return_sign=True)
    violated = np.flatnonzero(np.isfinite(log_s) & (log_s > _log(bc.lam)))
    if violated.size:
        targets = np.where(sign[violated] > 0, bc.lam[violated], -bc.lam[violated])
        start = None if nu0 is None else np.asarray(nu0, dtype=float)[violated]
        nu[violated] = solve_log_nu(la[:, violated], v_active, targets, x0=start)
    return nu


def log_prox_band(log_gamma_bar, bc: BandConstraint) -> np.ndarray:
    """Log of the KL projection onto {-Lambda <= gamma' V <= Lambda}.

    Columns inside the band and rows with V_i = 0 come back bit-identical.
    """
    lg = _matrix(log_gamma_bar)
    return lg - np.outer(bc.v.values, band_duals(lg, bc))
