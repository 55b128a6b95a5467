"""Synthetic uplift benchmark: data generation, baselines and evaluation metrics."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .causal_tree import GrowthConfig, design_matrix, grow_tree, honest_estimate, tree_axes
from .data import CONTROL, DataError, Dataset, FeatureSpec, KindError, TREATMENT_KINDS, split_honest
from .pipeline import allocate, derive_seed, draw_treatments, fit_gct
from .tree import DecisionTree

CATEGORY_LABELS = ("a", "b", "c", "d")
ORDINAL_LEVELS = (1, 2, 3, 4, 5, 6)
# CT-M discretises a continuous Z into these bins, each represented by its midpoint
CONTINUOUS_BINS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
CONTINUOUS_MSE_PROBES = (np.arange(50) + 0.5) / 50
METHODS = ("GCT", "CT-B", "CT-M")

# Published average outcomes (mean, SE) for methods this package does not
# implement. Reported next to our numbers for context only.
TRANSCRIBED_OUTCOMES = {
    "KL": {"continuous": (2.519, 0.033), "ordinal": (2.519, 0.033), "categorical": (2.502, 0.039)},
    "ED": {"continuous": (0.548, 0.036), "ordinal": (0.417, 0.041), "categorical": (0.466, 0.033)},
    "CHI": {"continuous": (0.698, 0.038), "ordinal": (0.843, 0.050), "categorical": (0.626, 0.037)},
    "CTS": {"continuous": (0.598, 0.035), "ordinal": (0.818, 0.050), "categorical": (0.510, 0.035)},
}
PUBLISHED_OUTCOMES = {
    "GCT": {"continuous": (5.744, 0.051), "ordinal": (5.321, 0.048), "categorical": (4.480, 0.045)},
    "CT-B": {"continuous": (0.188, 0.013), "ordinal": (0.581, 0.017), "categorical": (-0.008, 0.012)},
    "CT-M": {"continuous": (4.880, 0.092), "ordinal": (3.904, 0.033), "categorical": (3.618, 0.057)},
}

# Tree settings used by the benchmark for all three tree methods.
BENCH_CONFIG = GrowthConfig(max_depth=6, min_arm_samples_leaf=5)


@dataclass(frozen=True)
class SimSetting:
    """One synthetic design.

    Attributes:
        treatment_kind: continuous, ordinal or categorical.
        n: rows in each of the training and test halves.
        noise_sd: standard deviation of the additive Gaussian noise.
        reps: number of replications in a benchmark run.
        seed: root seed; replication seeds are derived from it.
        control_prob: probability a training unit lands in the control arm.
    """

    treatment_kind: str = "continuous"
    n: int = 1000
    noise_sd: float = 1.0
    reps: int = 100
    seed: int = 0
    control_prob: float = 0.5

    def __post_init__(self):
        if self.treatment_kind not in TREATMENT_KINDS:
            raise KindError(f"unknown treatment kind {self.treatment_kind!r}")
        if self.n < 2 or self.n % 2:
            raise ValueError("n must be even and at least 2")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 0.0 <= self.control_prob < 1.0:
            raise ValueError("control_prob must lie in [0, 1)")

    @property
    def labels(self) -> tuple[str, ...]:
        return CATEGORY_LABELS if self.treatment_kind == "categorical" else ()

    def rep_seed(self, rep: int) -> int:
        return derive_seed(self.seed, "rep", self.treatment_kind, rep)

    def to_dict(self) -> dict:
        return {
            "treatment_kind": self.treatment_kind,
            "n": self.n,
            "noise_sd": self.noise_sd,
            "reps": self.reps,
            "seed": self.seed,
            "control_prob": self.control_prob,
        }


# ---------------------------------------------------------------------------
# Response surface


def eta(x1, x2):
    """Smooth sign-changing building block of the response surface."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    out = -2.0 + 4.0 / ((1.0 + np.exp(-12.0 * (x1 - 0.2))) * (1.0 + np.exp(-12.0 * (x2 - 0.2))))
    return float(out) if out.ndim == 0 else out


def _band(kind: str, codes: np.ndarray) -> np.ndarray:
    """Band index 0..3 for (5η, −5η, η′, −η′); −1 for control."""
    band = np.full(codes.shape, -1, dtype=int)
    ok = ~np.isnan(codes)
    c = codes[ok]
    if kind == "continuous":
        if ((c <= 0) | (c > 1)).any():
            raise KindError("continuous treatments must lie in (0, 1]")
        b = np.select([c <= 0.3, c <= 0.5, c <= 0.7], [0, 1, 2], 3)
    elif kind == "ordinal":
        lut = {1: 0, 2: 0, 5: 1, 3: 2, 4: 2, 6: 3}
        if not np.isin(c, list(lut)).all():
            raise KindError("ordinal treatments must be integers 1..6")
        b = np.array([lut[int(v)] for v in c], dtype=int)
    else:
        if not np.isin(c, [0, 1, 2, 3]).all():
            raise KindError("categorical treatment codes must be 0..3")
        b = c.astype(int)
    band[ok] = b
    return band


def effect_from_codes(kind: str, x1, x2, codes) -> np.ndarray:
    """Vectorised f(x1, x2, t) on treatment codes (NaN meaning control)."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    codes = np.broadcast_to(np.asarray(codes, dtype=float), np.broadcast(x1, x2).shape)
    band = _band(kind, np.asarray(codes))
    e, ep = eta(x1, x2), eta(x1, 1.0 - x2)
    options = np.stack(np.broadcast_arrays(5 * e, -5 * e, ep, -ep))
    picked = np.take_along_axis(options, np.maximum(band, 0)[None], axis=0)[0]
    return np.where(band < 0, 0.0, picked)


def true_effect(setting: SimSetting | str, x, t) -> float:
    """f(x1, x2, t) for one unit; ``t`` is CONTROL or a value of the setting's kind."""
    kind = setting if isinstance(setting, str) else setting.treatment_kind
    if t is CONTROL:
        return 0.0
    if kind == "categorical":
        if not isinstance(t, str) or t not in CATEGORY_LABELS:
            raise KindError(f"expected a label in {CATEGORY_LABELS}, got {t!r}")
        code = float(CATEGORY_LABELS.index(t))
    else:
        if isinstance(t, str):
            raise KindError(f"expected a numeric treatment, got {t!r}")
        if kind == "ordinal" and float(t) != int(t):
            raise KindError(f"ordinal treatment must be an integer, got {t!r}")
        code = float(t)
    return float(effect_from_codes(kind, x[0], x[1], code))


def oracle_effect(kind: str, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best achievable effect per row and a treatment code attaining it (NaN = control)."""
    probes = representative_codes(kind)
    vals = np.stack([effect_from_codes(kind, X[:, 0], X[:, 1], c) for c in probes], axis=1)
    j = np.argmax(vals, axis=1)
    best = vals[np.arange(len(X)), j]
    code = np.where(best > 0, probes[j], np.nan)
    return np.maximum(best, 0.0), code


def representative_codes(kind: str) -> np.ndarray:
    """One code per response band (continuous) or every level (discrete)."""
    if kind == "continuous":
        return np.array([0.15, 0.4, 0.6, 0.85])
    if kind == "ordinal":
        return np.array(ORDINAL_LEVELS, dtype=float)
    return np.arange(len(CATEGORY_LABELS), dtype=float)


def mse_probes(kind: str) -> np.ndarray:
    if kind == "continuous":
        return CONTINUOUS_MSE_PROBES
    return representative_codes(kind)


# ---------------------------------------------------------------------------
# Data generation


def draw_treatment_codes(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "continuous":
        return 1.0 - rng.random(size)  # U(0, 1]
    if kind == "ordinal":
        return rng.integers(1, 7, size=size).astype(float)
    return rng.integers(0, len(CATEGORY_LABELS), size=size).astype(float)


def generate(setting: SimSetting, rep_seed: int) -> tuple[Dataset, np.ndarray]:
    """Draw 2n units; return the training half as a Dataset and the test covariates.

    Each training unit is control with probability ``setting.control_prob``;
    the rest get a treatment drawn uniformly from the setting's design.
    """
    rng = np.random.default_rng(derive_seed(rep_seed, "generate"))
    N = 2 * setting.n
    X = rng.random((N, 2))
    perm = rng.permutation(N)
    train_idx, test_idx = np.sort(perm[: setting.n]), np.sort(perm[setting.n:])
    Xtr = X[train_idx]
    w = rng.random(setting.n) >= setting.control_prob
    z = np.full(setting.n, np.nan)
    z[w] = draw_treatment_codes(setting.treatment_kind, int(w.sum()), rng)
    y = effect_from_codes(setting.treatment_kind, Xtr[:, 0], Xtr[:, 1], z)
    y = y + setting.noise_sd * rng.standard_normal(setting.n)
    train = Dataset(
        Xtr, w, z, y,
        (FeatureSpec("X1"), FeatureSpec("X2")),
        setting.treatment_kind, setting.labels, "training",
    )
    return train, X[test_idx]


# ---------------------------------------------------------------------------
# Metrics


def evaluate_outcome(
    allocations, setting: SimSetting, test_covariates: np.ndarray, rep_seed: int
) -> float:
    """Mean realised response on test units under an allocation.

    Args:
        allocations: treatment code per test unit, NaN meaning control.
        setting: design providing f and the noise level.
        test_covariates: (m, 2) array.
        rep_seed: noise is drawn from a stream derived from it, so methods
            evaluated in the same replication share the noise draw.
    """
    codes = np.asarray(allocations, dtype=float)
    X = np.asarray(test_covariates, dtype=float)
    if codes.shape != (len(X),):
        raise DataError(f"need one allocation per test unit ({len(X)}), got {codes.shape}")
    rng = np.random.default_rng(derive_seed(rep_seed, "outcome-noise"))
    f = effect_from_codes(setting.treatment_kind, X[:, 0], X[:, 1], codes)
    return float(np.mean(f + setting.noise_sd * rng.standard_normal(len(X))))


def evaluate_mse(
    predict: Callable[[np.ndarray, float], np.ndarray],
    setting: SimSetting | str,
    test_covariates: np.ndarray,
    probes: Sequence[float] | None = None,
) -> float:
    """Mean squared effect error over test covariates crossed with treatment probes.

    Args:
        predict: maps (covariates (m, 2), treatment code) to m predicted effects.
    """
    kind = setting if isinstance(setting, str) else setting.treatment_kind
    X = np.asarray(test_covariates, dtype=float)
    probes = mse_probes(kind) if probes is None else np.asarray(probes, dtype=float)
    total = 0.0
    for t in probes:
        err = np.asarray(predict(X, float(t)), dtype=float) - effect_from_codes(kind, X[:, 0], X[:, 1], t)
        total += float(np.sum(err**2))
    return total / (len(X) * len(probes))


def expected_response(allocation, data: Dataset) -> float:
    """Inverse-propensity estimate of the mean response under an allocation.

    Control counts as its own level. P_k is the empirical share of level k.

    Args:
        allocation: treatment code per unit (NaN for control), or a callable
            mapping the covariate matrix to such an array.

    Raises:
        DataError: if a unit is allocated a level that never occurs in ``data``.
    """
    v = allocation(data.X) if callable(allocation) else allocation
    return expected_response_levels(v, np.where(data.w, data.z, np.nan), data.y)


def expected_response_levels(allocation, observed, y) -> float:
    """:func:`expected_response` on raw arrays of allocated and observed levels.

    NaN stands for control in both arrays.
    """
    v = np.asarray(allocation, dtype=float)
    observed = np.asarray(observed, dtype=float)
    y = np.asarray(y, dtype=float)
    if v.shape != y.shape or observed.shape != y.shape:
        raise DataError(f"need one allocation per unit ({len(y)}), got {v.shape}")
    # control shares one key so NaN compares equal to itself
    obs = np.where(np.isnan(observed), -np.inf, observed)
    alloc = np.where(np.isnan(v), -np.inf, v)
    levels, counts = np.unique(obs, return_counts=True)
    share = dict(zip(levels.tolist(), (counts / len(y)).tolist()))
    missing = set(np.unique(alloc).tolist()) - set(share)
    if missing:
        shown = sorted("control" if m == -np.inf else m for m in missing)
        raise DataError(f"allocated level(s) {shown} never observed; P_k undefined")
    p = np.array([share[a] for a in alloc.tolist()])
    return float(np.mean(np.where(alloc == obs, y / p, 0.0)))


# ---------------------------------------------------------------------------
# Baselines


def _cohort_keys_and_index(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    pos = {k: i for i, k in enumerate(tree.leaves())}
    return np.array([pos[k] for k in tree.apply(X)], dtype=int)


@dataclass
class BinaryTreeModel:
    """Causal tree on the treated/control indicator only (Z ignored)."""

    tree: DecisionTree
    effects: np.ndarray
    treatment_dist_values: np.ndarray
    treatment_kind: str

    def cohorts(self, X: np.ndarray) -> np.ndarray:
        return _cohort_keys_and_index(self.tree, X)

    def predict(self, X: np.ndarray, code: float = math.nan) -> np.ndarray:
        return self.effects[self.cohorts(X)]

    def allocate(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Random treatment from the design when the cohort effect is positive."""
        pos = self.predict(X) > 0
        out = np.full(len(X), np.nan)
        out[pos] = draw_treatment_codes(self.treatment_kind, int(pos.sum()), rng)
        return out


@dataclass
class MultiLevelModel:
    """CT-B's partition with one honest effect per (cohort, treatment level)."""

    tree: DecisionTree
    level_codes: np.ndarray
    effects: np.ndarray  # (cohorts, levels), NaN when a level is unobserved
    treatment_kind: str

    def cohorts(self, X: np.ndarray) -> np.ndarray:
        return _cohort_keys_and_index(self.tree, X)

    def level_of(self, code: float) -> int:
        if self.treatment_kind == "continuous":
            return int(np.clip(np.searchsorted(CONTINUOUS_BINS, code, side="left") - 1, 0, 3))
        return int(np.flatnonzero(self.level_codes == code)[0])

    def predict(self, X: np.ndarray, code: float) -> np.ndarray:
        col = self.effects[:, self.level_of(code)]
        return np.nan_to_num(col[self.cohorts(X)], nan=0.0)

    def allocate(self, X: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Best positive level per cohort (lowest level on ties), control otherwise."""
        eff = np.where(np.isnan(self.effects), -np.inf, self.effects)
        j = np.argmax(eff, axis=1)
        best = eff[np.arange(len(eff)), j]
        choice = np.where(best > 0, self.level_codes[j], np.nan)
        return choice[self.cohorts(X)]


def _binary_tree(train: Dataset, estimation: Dataset, config: GrowthConfig) -> DecisionTree:
    tree = grow_tree(train, include_z_axis=False, config=config)
    return honest_estimate(tree, estimation if config.honest else train)


def ct_b(train: Dataset, estimation: Dataset, config: GrowthConfig = GrowthConfig()) -> BinaryTreeModel:
    tree = _binary_tree(train, estimation, config)
    effects = np.array([tree[k].effect for k in tree.leaves()], dtype=float)
    return BinaryTreeModel(tree, effects, train.z[train.w], train.treatment_kind)


def _level_index(kind: str, z: np.ndarray, level_codes: np.ndarray) -> np.ndarray:
    if kind == "continuous":
        return np.clip(np.searchsorted(CONTINUOUS_BINS, z, side="left") - 1, 0, 3)
    return np.searchsorted(level_codes, z)


def ct_m(
    train: Dataset,
    estimation: Dataset,
    config: GrowthConfig = GrowthConfig(),
    base: BinaryTreeModel | None = None,
) -> MultiLevelModel:
    """Per-cohort, per-level effects on CT-B's partition.

    Args:
        base: a fitted CT-B model to reuse; grown from scratch when omitted.
    """
    tree = base.tree if base is not None else _binary_tree(train, estimation, config)
    est = estimation if config.honest else train
    kind = train.treatment_kind
    if kind == "continuous":
        level_codes = (CONTINUOUS_BINS[:-1] + CONTINUOUS_BINS[1:]) / 2
    else:
        level_codes = np.unique(train.z[train.w])
    cohorts = _cohort_keys_and_index(tree, design_matrix(est, tree_axes(est, False)))
    K, L = len(tree.leaves()), len(level_codes)
    effects = np.full((K, L), np.nan)
    lev = np.full(len(est), -1)
    lev[est.w] = _level_index(kind, est.z[est.w], level_codes)
    for c in range(K):
        in_c = cohorts == c
        ctrl = in_c & ~est.w
        if not ctrl.any():
            continue
        base_mean = est.y[ctrl].mean()
        for j in range(L):
            m = in_c & (lev == j)
            if m.any():
                effects[c, j] = est.y[m].mean() - base_mean
    return MultiLevelModel(tree, level_codes, effects, kind)


# ---------------------------------------------------------------------------
# Benchmark


@dataclass
class MethodSummary:
    outcome_mean: float
    outcome_se: float
    mse_mean: float
    mse_se: float

    def to_dict(self) -> dict:
        return {
            "outcome_mean": self.outcome_mean,
            "outcome_se": self.outcome_se,
            "mse_mean": self.mse_mean,
            "mse_se": self.mse_se,
        }


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se


@dataclass
class BenchResult:
    """Per-replication metrics for each method in one setting."""

    setting: SimSetting
    config: GrowthConfig
    outcomes: dict[str, np.ndarray]
    mses: dict[str, np.ndarray]
    oracle_outcomes: np.ndarray
    seconds: float = 0.0

    def summary(self, method: str) -> MethodSummary:
        om, os_ = _mean_se(self.outcomes[method])
        mm, ms = _mean_se(self.mses[method])
        return MethodSummary(om, os_, mm, ms)

    def to_dict(self) -> dict:
        return {
            "setting": self.setting.to_dict(),
            "config": self.config.to_dict(),
            "methods": {m: self.summary(m).to_dict() for m in self.outcomes},
            "oracle_outcome": dict(zip(("mean", "se"), _mean_se(self.oracle_outcomes))),
            "per_rep": {
                "outcome": {m: v.tolist() for m, v in self.outcomes.items()},
                "mse": {m: v.tolist() for m, v in self.mses.items()},
                "oracle_outcome": self.oracle_outcomes.tolist(),
            },
        }


def fit_rep(setting: SimSetting, rep: int, config: GrowthConfig = BENCH_CONFIG) -> dict:
    """Fit and score all three methods on one replication."""
    rs = setting.rep_seed(rep)
    train_full, test_X = generate(setting, rs)
    train, est = split_honest(train_full, 0.5, seed=derive_seed(rs, "honest-split"))
    cfg = replace(config, seed=derive_seed(rs, "fit"))
    gct = fit_gct(train, est, cfg)
    ctb = ct_b(train, est, cfg)
    ctm = ct_m(train, est, cfg, base=ctb)

    rule = allocate(gct)
    alloc_rng = np.random.default_rng(derive_seed(rs, "allocation"))
    allocations = {
        "GCT": draw_treatments(rule, gct, test_X, alloc_rng),
        "CT-B": ctb.allocate(test_X, alloc_rng),
        "CT-M": ctm.allocate(test_X),
    }
    outcomes = {m: evaluate_outcome(a, setting, test_X, rs) for m, a in allocations.items()}
    mses = {
        "GCT": evaluate_mse(lambda X, t: gct.predict(X, t), setting, test_X),
        "CT-B": evaluate_mse(ctb.predict, setting, test_X),
        "CT-M": evaluate_mse(ctm.predict, setting, test_X),
    }
    _, oracle_codes = oracle_effect(setting.treatment_kind, test_X)
    oracle = evaluate_outcome(oracle_codes, setting, test_X, rs)
    return {"outcomes": outcomes, "mses": mses, "oracle": oracle}


def run_bench(setting: SimSetting, config: GrowthConfig = BENCH_CONFIG) -> BenchResult:
    """Replicate :func:`fit_rep` ``setting.reps`` times (seeds derived per replication)."""
    t0 = time.perf_counter()
    outs = {m: np.empty(setting.reps) for m in METHODS}
    mses = {m: np.empty(setting.reps) for m in METHODS}
    oracle = np.empty(setting.reps)
    for r in range(setting.reps):
        res = fit_rep(setting, r, config)
        for m in METHODS:
            outs[m][r] = res["outcomes"][m]
            mses[m][r] = res["mses"][m]
        oracle[r] = res["oracle"]
    return BenchResult(setting, config, outs, mses, oracle, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Reports


def report_json(results: Sequence[BenchResult]) -> str:
    body = {
        "results": [r.to_dict() for r in results],
        "transcribed_outcomes": {
            "note": "published values for methods not implemented here; not recomputed",
            "values": {m: {k: list(v) for k, v in d.items()} for m, d in TRANSCRIBED_OUTCOMES.items()},
        },
    }
    return json.dumps(body, indent=2, sort_keys=True)


def report_text(results: Sequence[BenchResult]) -> str:
    """Method x setting table of mean average outcome (SE), then MSE."""
    kinds = [r.setting.treatment_kind for r in results]
    by = {r.setting.treatment_kind: r for r in results}
    width = 17

    def table(title, cell):
        lines = [title, "Method".ljust(10) + "".join(k.rjust(width) for k in kinds)]
        for m in METHODS:
            lines.append(m.ljust(10) + "".join(cell(by[k], m).rjust(width) for k in kinds))
        return lines

    lines = table("Average outcome, mean (SE)", lambda r, m: "%.3f (%.3f)" % (
        r.summary(m).outcome_mean, r.summary(m).outcome_se))
    lines.append("Oracle".ljust(10) + "".join(
        ("%.3f (%.3f)" % _mean_se(by[k].oracle_outcomes)).rjust(width) for k in kinds))
    lines.append("")
    lines.append("Transcribed (published, not recomputed)")
    for m, d in TRANSCRIBED_OUTCOMES.items():
        lines.append(m.ljust(10) + "".join(
            ("%.3f (%.3f)" % d[k]).rjust(width) for k in kinds))
    lines.append("")
    lines += table("Effect MSE, mean (SE)", lambda r, m: "%.3f (%.3f)" % (
        r.summary(m).mse_mean, r.summary(m).mse_se))
    return "\n".join(lines)


def report_csv(results: Sequence[BenchResult]) -> str:
    """One row per (setting, replication, method) for box plots."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["setting", "rep", "method", "outcome", "mse"])
    for r in results:
        for i in range(r.setting.reps):
            for m in METHODS:
                out.writerow([r.setting.treatment_kind, i, m,
                              repr(float(r.outcomes[m][i])), repr(float(r.mses[m][i]))])
    return buf.getvalue()
