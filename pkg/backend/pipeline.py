"""
End-to-end runs: CSV ingestion, synthetic data, feature selection, repair,
evaluation and the output files
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, Hashable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit, logit
from scipy.stats import norm
from sklearn.model_selection import train_test_split

from config import CLASSIFIER_THRESHOLD
from distributions import (
    RepairVector,
    SimplexVector,
    Support,
    as_point,
    empirical_from_indices,
    groupwise_from_indices,
    make_simplex,
    repair_vector,
    tv_distance,
)
from errors import ConfigError, MarginalMismatch, MissingColumn, OutputError, ParseError, SolverNotConverged
from metrics import MetricsReport, classify_projected, evaluate, split_groups
from models import RunConfig, SyntheticSpec
from projection import (
    SOURCE_ROW,
    WEIGHT,
    ProjectionMap,
    WeightedDataset,
    apply_group_maps,
    apply_map,
    build_map,
    group_maps,
    identity_map,
    tuple_support,
)
from solvers import (
    DEFAULT_SCALING,
    EpsilonScaling,
    SolverTrace,
    StopReason,
    barycentre_coupling,
    barycentre_maps,
    bregman_baseline,
    dykstra_repair,
)
from transport_core import BandConstraint, Coupling, cost_matrix

logger = logging.getLogger(__name__)

METHODS = ("none", "baseline", "dykstra", "barycentre")
DEMO_SCORE = "demo_score"
INDEX_COLUMNS = ["f1_micro", "f1_macro", "f1_weighted", "disparate_impact", "swise_tv"]
FLOAT_FORMAT = "%.17g"

DataSource = Union[WeightedDataset, SyntheticSpec]


# ---------- ingestion ----------
def _numeric(frame: pd.DataFrame, column: str) -> pd.Series:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = np.flatnonzero(values.isna().to_numpy())
    if bad.size:
        first = bad[0]
        raise ParseError(int(frame.index[first]) + 1, column, frame[column].iloc[first])
    return values.astype(float)


def ingest_csv(path: str, config: RunConfig) -> WeightedDataset:
    """Read a headered CSV into a WeightedDataset.

    Rows are filtered to `group_values`, labels are mapped to 0/1 (via
    `positive_label` when given), adjusted columns are rounded per `rounding`
    and the weight column defaults to 1. Row numbers in ParseError are 1-based
    data rows of the file.
    """
    frame = pd.read_csv(path, skipinitialspace=True)
    frame.columns = [str(c).strip() for c in frame.columns]
    dataset = dataset_from_frame(frame, config, origin=path)
    logger.info("Ingested %d rows from %s", len(dataset), path)
    return dataset


def dataset_from_records(records: Sequence[dict], config: RunConfig) -> WeightedDataset:
    """Rows posted as JSON records, validated like a CSV file."""
    return dataset_from_frame(pd.DataFrame.from_records(list(records)), config, origin="rows")


def dataset_from_frame(frame: pd.DataFrame, config: RunConfig, origin: str = "frame") -> WeightedDataset:
    optional = (config.group_column, config.label_column, config.score_column, config.weight_column)
    required = [*config.adjusted_columns, *(c for c in optional if c)]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise MissingColumn(f"{origin}: missing columns {missing}")

    if config.group_values is not None:
        if not config.group_column:
            raise ConfigError("group_values needs a group column")
        keep = frame[config.group_column].astype(str).str.strip().isin(config.group_values)
        frame = frame.loc[keep]
    frame = frame.copy()

    for column in [*config.adjusted_columns, *(c for c in (config.score_column, config.weight_column) if c)]:
        frame[column] = _numeric(frame, column)
    if config.label_column:
        label = config.label_column
        if config.positive_label is not None:
            frame[label] = (frame[label].astype(str).str.strip() == config.positive_label).astype(np.int64)
        else:
            frame[label] = _numeric(frame, label).astype(np.int64)
    for column, digits in config.rounding.items():
        if column not in frame.columns:
            raise MissingColumn(f"Rounding configured for unknown column '{column}'")
        frame[column] = frame[column].round(digits)

    frame = frame.reset_index(drop=True)
    if config.weight_column and config.weight_column != WEIGHT:
        frame = frame.drop(columns=[WEIGHT], errors="ignore").rename(columns={config.weight_column: WEIGHT})
    return WeightedDataset(frame, tuple(config.adjusted_columns), config.group_column,
                           config.label_column, config.score_column)


def load_repair_vector(path: str, support: Support) -> RepairVector:
    """V from a CSV whose `v` column is preceded by the point coordinates; unlisted points get 0."""
    frame = pd.read_csv(path)
    if "v" not in frame.columns:
        raise MissingColumn(f"{path}: no 'v' column")
    coords = frame.drop(columns=["v"]).to_numpy(dtype=float)
    values = np.zeros(support.size)
    values[support.indices_of(coords)] = frame["v"].to_numpy(dtype=float)
    logger.info("Loaded repair vector for %d points from %s", len(frame), path)
    return RepairVector(values, support)


def load_target(path: str) -> SimplexVector:
    """Target distribution from a CSV of point coordinates plus a `probability` column."""
    frame = pd.read_csv(path)
    if "probability" not in frame.columns:
        raise MissingColumn(f"{path}: no 'probability' column")
    coords = frame.drop(columns=["probability"]).to_numpy(dtype=float)
    support = Support(tuple(as_point(c) for c in coords))
    values = np.zeros(support.size)
    values[support.indices_of(coords)] = frame["probability"].to_numpy(dtype=float)
    return make_simplex(values, support)


# ---------- synthetic data ----------
def synthetic_support(spec: SyntheticSpec) -> Support:
    return Support.grid(spec.lo, spec.hi)


def generate_synthetic(spec: SyntheticSpec) -> WeightedDataset:
    """Groups by a uniform draw against P(s0); x = floor of the group Gaussian, clamped to [lo, hi].

    The label is 1{x + N(0, label_noise^2) >= target mean}.
    """
    rng = np.random.default_rng(spec.seed)
    s = (rng.uniform(size=spec.samples) >= spec.group_probs[0]).astype(np.int64)
    mu = np.where(s == 0, spec.group0[0], spec.group1[0])
    sigma = np.where(s == 0, spec.group0[1], spec.group1[1])
    x = np.clip(np.floor(mu + sigma * rng.standard_normal(spec.samples)), spec.lo, spec.hi)
    y = (x + rng.normal(0.0, spec.label_noise, spec.samples) >= spec.target[0]).astype(np.int64)
    logger.info("Generated %d synthetic rows (seed %d), group-0 share %.4f", spec.samples, spec.seed, 1 - s.mean())
    return WeightedDataset(pd.DataFrame({"x": x, "s": s, "y": y}), ("x",), "s", "y")


def synthetic_target(spec: SyntheticSpec, support: Optional[Support] = None) -> SimplexVector:
    """Target Gaussian binned like the sampler: point j holds [j, j+1), tails folded into the end points."""
    support = support or synthetic_support(spec)
    mu, sigma = spec.target
    points = support.as_array()[:, 0]
    upper = norm.cdf(points[1:], mu, sigma)
    cdf = np.concatenate([[0.0], upper, [1.0]])
    return make_simplex(np.diff(cdf), support)


# ---------- feature selection ----------
def select_adjusted_features(data: Union[WeightedDataset, pd.DataFrame], group_column: str, threshold: float,
                             columns: Optional[Sequence[str]] = None,
                             unprivileged: Optional[Hashable] = None) -> Tuple[List[str], pd.DataFrame]:
    """Group-wise TV per column; columns strictly above `threshold` are selected."""
    frame = data.frame if isinstance(data, WeightedDataset) else data
    if group_column not in frame.columns:
        raise MissingColumn(f"No group column '{group_column}'")
    if columns is None:
        skip = {group_column, WEIGHT, SOURCE_ROW}
        columns = [c for c in frame.select_dtypes("number").columns if c not in skip]
    weights = frame[WEIGHT].to_numpy(dtype=float) if WEIGHT in frame.columns else np.ones(len(frame))
    groups = frame[group_column].to_numpy()
    s0, s1 = split_groups(groups, unprivileged)
    rows = []
    for column in columns:
        if column not in frame.columns:
            raise MissingColumn(f"No column '{column}'")
        values = _numeric(frame, column).to_numpy()
        support = Support.from_values(values)
        dists = groupwise_from_indices(support.indices_of(values), weights, groups, support)
        rows.append({"feature": column, "tv": tv_distance(dists[s0], dists[s1])})
    table = pd.DataFrame(rows, columns=["feature", "tv"])
    table["selected"] = table["tv"] > threshold
    selected = table.loc[table["selected"], "feature"].tolist()
    logger.info("TV selection (threshold %g, groups %r vs %r): %s", threshold, s0, s1, selected)
    return selected, table


# ---------- scoring ----------
@dataclass
class DemoScorer:
    """Logistic score of the mean standardised adjusted feature.

    Stands in for a trained classifier: with the default threshold the decision
    boundary sits at the training mean.
    """
    columns: Tuple[str, ...]
    threshold: float = CLASSIFIER_THRESHOLD
    mean: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def fit(self, data: WeightedDataset) -> "DemoScorer":
        x = data.frame[list(self.columns)].to_numpy(dtype=float)
        self.mean = np.average(x, axis=0, weights=data.weights)
        std = np.sqrt(np.average((x - self.mean) ** 2, axis=0, weights=data.weights))
        self.scale = np.where(std > 0, std, 1.0)
        return self

    def score(self, frame: pd.DataFrame) -> np.ndarray:
        if self.mean is None:
            raise ConfigError("DemoScorer must be fitted before scoring")
        z = ((frame[list(self.columns)].to_numpy(dtype=float) - self.mean) / self.scale).mean(axis=1)
        return expit(z + logit(self.threshold))


# ---------- repair ----------
@dataclass
class RepairFit:
    method: str
    support: Support
    px: SimplexVector
    target: SimplexVector
    coupling: Coupling
    trace: SolverTrace
    pmap: Optional[ProjectionMap] = None
    group_pmaps: Optional[Dict[Hashable, ProjectionMap]] = None
    v: Optional[RepairVector] = None

    def reachable(self, data: WeightedDataset) -> np.ndarray:
        idx = data.indices(self.support)
        if self.pmap is not None:
            return self.pmap.reachable[idx]
        out = np.zeros(len(data), dtype=bool)
        for g, pmap in self.group_pmaps.items():
            mask = data.groups == g
            out[mask] = pmap.reachable[idx[mask]]
        return out

    def project(self, data: WeightedDataset) -> WeightedDataset:
        if self.pmap is not None:
            return apply_map(self.pmap, data)
        return apply_group_maps(self.group_pmaps, data)


@dataclass
class RepairResult:
    fit: RepairFit
    original: WeightedDataset
    projected: WeightedDataset
    report: MetricsReport
    distributions: pd.DataFrame

    @property
    def coupling(self) -> Coupling:
        return self.fit.coupling

    @property
    def trace(self) -> SolverTrace:
        return self.fit.trace


def resolve_cost_weights(data: WeightedDataset, config: RunConfig, tabular: bool) -> np.ndarray:
    mode = config.resolved_cost_weights(tabular)
    if mode == "unit":
        return np.ones(len(data.adjusted))
    if mode == "explicit":
        return np.asarray(config.explicit_weights, dtype=float)
    points = data.points()
    span = points.max(axis=0) - points.min(axis=0)
    return np.divide(1.0, span, out=np.ones_like(span), where=span > 0)


def _groupwise(data: WeightedDataset, support: Support, unprivileged: Optional[Hashable]):
    if data.group is None:
        raise MissingColumn("This step needs the group column")
    s0, s1 = split_groups(data.groups, unprivileged)
    dists = groupwise_from_indices(data.indices(support), data.weights, data.groups, support)
    return s0, s1, dists[s0], dists[s1]


def _checked_map(coupling: Coupling, px: SimplexVector, trace: SolverTrace) -> ProjectionMap:
    try:
        return build_map(coupling, px)
    except MarginalMismatch as e:
        if trace.stop_reason != StopReason.MAX_ITERATIONS:
            raise
        raise SolverNotConverged(
            f"{e} after {trace.iterations} iterations without convergence; raise the iteration budget"
        ) from e


def _scaling(config: RunConfig) -> Optional[EpsilonScaling]:
    return DEFAULT_SCALING if config.warm_start else None


def fit_repair(data: WeightedDataset, config: RunConfig, method: str, support: Support,
               target: Optional[SimplexVector] = None, tabular: bool = True) -> RepairFit:
    """Solve for the coupling of `method` and the maps that project rows with it.

    Only `none`/`baseline`/`dykstra` are group-blind; their fit reads the group
    column solely to estimate V, and not at all when `v_file` is configured.
    """
    if method not in METHODS:
        raise ConfigError(f"Unknown method '{method}', expected one of {METHODS}")
    px = empirical_from_indices(data.indices(support), data.weights, support)
    unprivileged = config.unprivileged_group

    if method == "none":
        trace = SolverTrace(stop_reason=StopReason.NO_SOLVE)
        coupling = Coupling(np.diag(px.values), support, support)
        return RepairFit(method, support, px, px, coupling, trace, pmap=identity_map(px))

    rho = resolve_cost_weights(data, config, tabular)
    if method == "barycentre":
        s0, s1, p0, p1 = _groupwise(data, support, unprivileged)
        pi0 = config.pi0
        if pi0 is None:
            pi0 = float(data.weights[data.groups == s0].sum() / data.total_weight)
        gamma_b, trace = barycentre_coupling(p0, p1, cost_matrix(support, support, rho), config.epsilon,
                                             config.baseline_iterations, scaling=_scaling(config))
        to_b0, to_b1 = barycentre_maps(gamma_b, pi0, 1.0 - pi0, support)
        maps = group_maps(to_b0, to_b1, p0, p1)
        coupling = Coupling(pi0 * to_b0.entries + (1.0 - pi0) * to_b1.entries, support, support)
        cols = coupling.col_sums
        barycentre = SimplexVector(cols / cols.sum(), support)
        return RepairFit(method, support, px, barycentre, coupling, trace,
                         group_pmaps={s0: maps[0], s1: maps[1]}, v=repair_vector(px, p0, p1))

    target = target or px
    if config.v_file:
        v = load_repair_vector(config.v_file, support)
    elif data.group is not None:
        _, _, p0, p1 = _groupwise(data, support, unprivileged)
        v = repair_vector(px, p0, p1)
    elif method == "dykstra":
        raise ConfigError("Dykstra repair needs a group column or a v_file to build V")
    else:
        v = None
    cost = cost_matrix(support, target.support, rho)

    if method == "baseline":
        coupling, trace = bregman_baseline(px, target, cost, config.epsilon, config.baseline_iterations, v,
                                           scaling=_scaling(config))
    else:
        bc = BandConstraint.broadcast(v, config.lam, target.support.size)
        coupling, trace = dykstra_repair(px, target, bc, cost, config.epsilon, config.iterations,
                                         config.resolved_varepsilon(tabular), config.marginal_tolerance,
                                         config.pairing, scaling=_scaling(config))
    return RepairFit(method, support, px, target, coupling, trace, pmap=_checked_map(coupling, px, trace), v=v)


def _scored(train: WeightedDataset, projected: WeightedDataset, config: RunConfig) -> WeightedDataset:
    """Projected rows carrying a score column (the configured one, else the demo scorer's)."""
    if projected.score is not None:
        return projected
    scorer = DemoScorer(train.adjusted, config.classifier_threshold).fit(train)
    frame = projected.frame.assign(**{DEMO_SCORE: scorer.score(projected.frame)})
    return WeightedDataset(frame, projected.adjusted, projected.group, projected.label, DEMO_SCORE)


def _report(fit: RepairFit, train: WeightedDataset, original: WeightedDataset, projected: WeightedDataset,
            config: RunConfig) -> Tuple[WeightedDataset, MetricsReport]:
    projected = _scored(train, projected, config)
    predictions = classify_projected(projected.frame, projected.score, config.classifier_threshold)
    report = evaluate(projected, fit.target.support, predictions, original=original,
                      unprivileged=config.unprivileged_group)
    report.iterations = fit.trace.iterations
    report.stop_reason = fit.trace.stop_reason.value
    return projected, report


def distribution_table(fit: RepairFit, original: WeightedDataset, projected: WeightedDataset,
                       unprivileged: Optional[Hashable] = None) -> pd.DataFrame:
    """Per support point: P^X, its group conditionals, and the same after projection."""
    source = pd.DataFrame({"point": fit.support.labels(), "p_x": fit.px.values})
    tsupport = fit.target.support
    t_idx = projected.indices(tsupport)
    target = pd.DataFrame({
        "point": tsupport.labels(),
        "p_xt": empirical_from_indices(t_idx, projected.weights, tsupport).values,
    })
    if original.group is not None:
        _, _, p0, p1 = _groupwise(original, fit.support, unprivileged)
        source["p_x_s0"], source["p_x_s1"] = p0.values, p1.values
        _, _, q0, q1 = _groupwise(projected, tsupport, unprivileged)
        target["p_xt_s0"], target["p_xt_s1"] = q0.values, q1.values
    else:
        source["p_x_s0"] = source["p_x_s1"] = np.nan
        target["p_xt_s0"] = target["p_xt_s1"] = np.nan
    if tsupport == fit.support:
        table = pd.concat([source, target.drop(columns=["point"])], axis=1)
    else:
        table = source.merge(target, on="point", how="outer").fillna(0.0)
    return table[["point", "p_x", "p_x_s0", "p_x_s1", "p_xt", "p_xt_s0", "p_xt_s1"]]


def _prepare(source: DataSource, config: RunConfig):
    """(dataset, support, target, tabular) for a dataset or a synthetic spec."""
    if isinstance(source, SyntheticSpec):
        data = generate_synthetic(source)
        support = synthetic_support(source)
        target = synthetic_target(source, support)
        tabular = False
    else:
        data, target, tabular = source, None, True
        support = tuple_support(data)
    if config.target_file:
        target = load_target(config.target_file)
    return data, support, target, tabular


def run_repair(source: DataSource, config: RunConfig, method: str = "dykstra") -> RepairResult:
    """Fit on all rows, project them and evaluate with the group tags."""
    data, support, target, tabular = _prepare(source, config)
    logger.info("Running %s on %d rows over %d support points", method, len(data), support.size)
    fit = fit_repair(data, config, method, support, target, tabular)
    projected = fit.project(data)
    logger.info("Projected %d rows into %d weighted rows", len(data), len(projected))
    projected, report = _report(fit, data, data, projected, config)
    logger.info("Evaluation: %s", report.flat())
    table = distribution_table(fit, data, projected, config.unprivileged_group)
    return RepairResult(fit, data, projected, report, table)


def run_trials(source: DataSource, config: RunConfig, method: str = "dykstra") -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Repeated train/test splits; fit on the train part, evaluate on the projected test part.

    Returns (per-trial reports, mean/std per index).
    """
    data, support, target, tabular = _prepare(source, config)
    children = np.random.SeedSequence(config.seed).spawn(config.trials)
    records = []
    for t, child in enumerate(children):
        state = int(child.generate_state(1)[0])
        train_idx, test_idx = train_test_split(np.arange(len(data)), train_size=config.train_frac,
                                               random_state=state)
        train = data.subset(np.isin(np.arange(len(data)), train_idx))
        test = data.subset(np.isin(np.arange(len(data)), test_idx))
        fit = fit_repair(train, config, method, support, target, tabular)
        keep = fit.reachable(test)
        if not keep.all():
            logger.warning("Trial %d: dropping %d test rows at points without training mass", t, int((~keep).sum()))
            test = test.subset(keep)
        _, report = _report(fit, train, test, fit.project(test), config)
        records.append({"trial": t, **report.flat()})
    per_trial = pd.DataFrame(records)
    summary = per_trial[INDEX_COLUMNS].astype(float).agg(["mean", "std"]).T
    summary.index.name = "index"
    return per_trial, summary.reset_index()


def compare_methods(source: DataSource, config: RunConfig,
                    lambdas: Sequence[float] = (1e-2, 1e-3, 0.0)) -> pd.DataFrame:
    """Unrepaired data, the baseline, the barycentre and Lambda-repairs side by side."""
    runs = [("none", "origin", config), ("baseline", "baseline", config)]
    has_groups = isinstance(source, SyntheticSpec) or source.group is not None
    if has_groups:
        runs.append(("barycentre", "barycentre", config))
    runs += [("dykstra", f"dykstra(lambda={lam:g})", config.model_copy(update={"lam": lam})) for lam in lambdas]
    rows = []
    for method, label, cfg in runs:
        result = run_repair(source, cfg, method)
        rows.append({"method": label, **result.report.flat()})
    return pd.DataFrame(rows)


# ---------- outputs ----------
def emit_outputs(result: RepairResult, out_dir: str) -> Dict[str, str]:
    """Write coupling.csv, metrics.json, distributions.csv, trace.csv and projected.csv."""
    paths = {name: os.path.join(out_dir, name) for name in
             ("coupling.csv", "metrics.json", "distributions.csv", "trace.csv", "projected.csv")}
    coupling = pd.DataFrame(result.coupling.entries, index=result.coupling.source.labels(),
                            columns=result.coupling.target.labels())
    coupling.index.name = "point"
    try:
        os.makedirs(out_dir, exist_ok=True)
        coupling.to_csv(paths["coupling.csv"], float_format=FLOAT_FORMAT)
        with open(paths["metrics.json"], "w", encoding="utf-8") as f:
            json.dump(result.report.flat(), f, indent=2)
            f.write("\n")
        result.distributions.to_csv(paths["distributions.csv"], index=False, float_format=FLOAT_FORMAT)
        result.trace.to_frame().to_csv(paths["trace.csv"], index=False, float_format=FLOAT_FORMAT)
        result.projected.frame.to_csv(paths["projected.csv"], index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise OutputError(f"Cannot write outputs to {out_dir}: {e}") from e
    logger.info("Wrote outputs to %s", out_dir)
    return paths


def read_coupling(path: str) -> np.ndarray:
    return pd.read_csv(path, index_col=0).to_numpy(dtype=float)
