"""Honest causal-tree growth on a binary treated/control indicator.

The tree may split on covariates and, optionally, on a treatment-value axis
``Z`` (ordered last). Each leaf's utility is its squared effect estimate
minus the estimate's squared standard error; the tree objective weights every
leaf by its share of the training rows, so refining a leaf whose effect is
homogeneous never pays for itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, DegenerateArmError
from .tree import Axis, DecisionTree, Node, Split, TreeError, Z_AXIS_NAME

# relative slack used both for the strict-improvement gate and for tie detection
GAIN_TOL = 1e-10


@dataclass(frozen=True)
class SummaryStats:
    count: int
    mean: float
    variance: float

    @property
    def empty(self) -> bool:
        return self.count == 0


EMPTY_STATS = SummaryStats(0, 0.0, 0.0)


def summarize(responses) -> SummaryStats:
    """Count, mean and unbiased variance (0 below two observations)."""
    y = np.asarray(responses, dtype=float).reshape(-1)
    n = y.size
    if n == 0:
        return EMPTY_STATS
    mean = float(y.mean())
    var = float(y.var(ddof=1)) if n > 1 else 0.0
    return SummaryStats(n, mean, var)


def leaf_utility(treated: SummaryStats, control: SummaryStats) -> float:
    """Squared effect estimate minus its squared standard error.

    Returns ``-inf`` when either arm is empty, which marks the leaf as
    ineligible rather than neutral.
    """
    if treated.empty or control.empty:
        return -math.inf
    tau = treated.mean - control.mean
    se2 = treated.variance / treated.count + control.variance / control.count
    return tau * tau - se2


@dataclass(frozen=True)
class GrowthConfig:
    max_depth: int = 6
    min_arm_samples_leaf: int = 10
    max_threshold_candidates: int = 32
    honest: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.min_arm_samples_leaf < 2:
            raise ValueError("min_arm_samples_leaf must be at least 2")
        if self.max_threshold_candidates < 1:
            raise ValueError("max_threshold_candidates must be positive")

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_arm_samples_leaf": self.min_arm_samples_leaf,
            "max_threshold_candidates": self.max_threshold_candidates,
            "honest": self.honest,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# Axes and design matrices


def tree_axes(data: Dataset, include_z_axis: bool) -> tuple[Axis, ...]:
    axes = [
        Axis(f.name, "categorical" if f.kind == "categorical" else "real", f.categories)
        for f in data.features
    ]
    if include_z_axis:
        kind = {"continuous": "real", "ordinal": "ordinal", "categorical": "categorical"}[
            data.treatment_kind
        ]
        axes.append(Axis(Z_AXIS_NAME, kind, data.treatment_labels))
    return tuple(axes)


def design_matrix(data: Dataset, axes: Sequence[Axis]) -> np.ndarray:
    """Stack covariates (and the Z column when the axes include it)."""
    names = [f.name for f in data.features]
    has_z = len(axes) > 0 and axes[-1].name == Z_AXIS_NAME
    n_feat = len(axes) - int(has_z)
    if [a.name for a in axes[:n_feat]] != names:
        raise TreeError(
            f"axis mismatch: tree axes {[a.name for a in axes]} vs dataset features {names}"
        )
    if not has_z:
        return data.X
    if np.isnan(data.z).any():
        raise TreeError("data must carry a Z value on every row for a tree with a Z axis")
    return np.column_stack([data.X, data.z])


# ---------------------------------------------------------------------------
# Objective


def _arm_stats(y: np.ndarray, w: np.ndarray) -> tuple[SummaryStats, SummaryStats]:
    return summarize(y[w]), summarize(y[~w])


def leaf_contributions(tree: DecisionTree, train: Dataset) -> dict[int, float]:
    """Per-leaf share-weighted utility on the training rows."""
    P = design_matrix(train, tree.axes)
    keys = tree.apply(P)
    n = len(train)
    out = {}
    for k in tree.leaves():
        m = keys == k
        t, c = _arm_stats(train.y[m], train.w[m])
        u = leaf_utility(t, c)
        out[k] = -math.inf if u == -math.inf else (m.sum() / n) * u
    return out


def objective(tree: DecisionTree, train: Dataset) -> float:
    """Sum over leaves of (leaf share) x leaf utility; ``-inf`` if any leaf lacks an arm."""
    return float(sum(leaf_contributions(tree, train).values()))


# ---------------------------------------------------------------------------
# Candidate splits


def candidate_splits(values, axis_index: int, axis: Axis, config: GrowthConfig) -> list[Split]:
    """Candidate predicates for one axis at one node.

    Real axes use midpoints between consecutive distinct values, thinned to
    at most ``config.max_threshold_candidates`` evenly spaced ones. Ordinal
    axes use the prefix splits ``{<= level}`` for every observed level but the
    largest. Categorical axes use one label against the rest.
    """
    v = np.asarray(values, dtype=float)
    levels = np.unique(v)
    if levels.size < 2:
        return []
    if axis.kind == "categorical":
        return [Split(axis_index, subset=frozenset({int(c)})) for c in levels]
    if axis.kind == "ordinal":
        return [Split(axis_index, threshold=float(c)) for c in levels[:-1]]
    mids = (levels[:-1] + levels[1:]) / 2.0
    k = config.max_threshold_candidates
    if mids.size > k:
        pos = np.unique(np.round(np.linspace(0, mids.size - 1, k)).astype(int))
        mids = mids[pos]
    return [Split(axis_index, threshold=float(s)) for s in mids]


# ---------------------------------------------------------------------------
# Vectorised split scoring


def _utility_from_moments(nt, st, qt, nc, sc, qc):
    """Share-free utility from counts, centred sums and centred sums of squares."""
    with np.errstate(divide="ignore", invalid="ignore"):
        mt = st / nt
        mc = sc / nc
        vt = np.where(nt > 1, (qt - st * mt) / (nt - 1), 0.0)
        vc = np.where(nc > 1, (qc - sc * mc) / (nc - 1), 0.0)
        vt = np.maximum(vt, 0.0)
        vc = np.maximum(vc, 0.0)
        u = (mt - mc) ** 2 - vt / nt - vc / nc
    return np.where((nt > 0) & (nc > 0), u, -np.inf)


@dataclass
class _Scored:
    split: Split
    gain: float
    left_value: float
    right_value: float


def _score_axis(
    v: np.ndarray, y: np.ndarray, w: np.ndarray, splits: list[Split], n_total: int,
    min_arm: int,
) -> list[_Scored]:
    """Score candidate splits on one axis; returns admissible ones only."""
    if not splits:
        return []
    share = 1.0 / n_total
    if splits[0].subset is not None:
        masks = np.stack([s.goes_left(v) for s in splits])
    else:
        thr = np.array([s.threshold for s in splits])
        masks = None
    out = []
    yt, yc = y[w], y[~w]
    vt, vc = v[w], v[~w]
    nt_all, nc_all = yt.size, yc.size
    st_all, sc_all = yt.sum(), yc.sum()
    qt_all, qc_all = (yt**2).sum(), (yc**2).sum()
    if masks is None:
        ot, oc = np.argsort(vt, kind="stable"), np.argsort(vc, kind="stable")
        svt, svc = vt[ot], vc[oc]
        cst = np.concatenate([[0.0], np.cumsum(yt[ot])])
        csc = np.concatenate([[0.0], np.cumsum(yc[oc])])
        cqt = np.concatenate([[0.0], np.cumsum(yt[ot] ** 2)])
        cqc = np.concatenate([[0.0], np.cumsum(yc[oc] ** 2)])
        kt = np.searchsorted(svt, thr, side="right")
        kc = np.searchsorted(svc, thr, side="right")
        nt_l, nc_l = kt.astype(float), kc.astype(float)
        st_l, sc_l, qt_l, qc_l = cst[kt], csc[kc], cqt[kt], cqc[kc]
    else:
        mt, mc = masks[:, w], masks[:, ~w]
        nt_l, nc_l = mt.sum(1).astype(float), mc.sum(1).astype(float)
        st_l, sc_l = mt @ yt, mc @ yc
        qt_l, qc_l = mt @ (yt**2), mc @ (yc**2)
    nt_r, nc_r = nt_all - nt_l, nc_all - nc_l
    st_r, sc_r = st_all - st_l, sc_all - sc_l
    qt_r, qc_r = qt_all - qt_l, qc_all - qc_l
    ul = _utility_from_moments(nt_l, st_l, qt_l, nc_l, sc_l, qc_l)
    ur = _utility_from_moments(nt_r, st_r, qt_r, nc_r, sc_r, qc_r)
    ok = (nt_l >= min_arm) & (nc_l >= min_arm) & (nt_r >= min_arm) & (nc_r >= min_arm)
    left = share * (nt_l + nc_l) * ul
    right = share * (nt_r + nc_r) * ur
    for i, s in enumerate(splits):
        if ok[i]:
            out.append(_Scored(s, float(left[i] + right[i]), float(left[i]), float(right[i])))
    return out


def node_value(y: np.ndarray, w: np.ndarray, n_total: int) -> float:
    t, c = _arm_stats(y, w)
    u = leaf_utility(t, c)
    return -math.inf if u == -math.inf else (y.size / n_total) * u


def choose_split(cands: list[_Scored], parent_value: float) -> _Scored | None:
    """Apply the strict-improvement gate and the documented tie-break.

    Among candidates whose children value is within ``GAIN_TOL`` (relative)
    of the best, the one with the smallest ``Split.sort_key`` wins: lowest
    axis index, then smallest threshold or lexicographically smallest subset.
    """
    if not cands:
        return None
    best = max(c.gain for c in cands)
    scale = 1.0 + abs(best) + (abs(parent_value) if math.isfinite(parent_value) else 0.0)
    if not best > parent_value + GAIN_TOL * scale:
        return None
    ties = [c for c in cands if c.gain >= best - GAIN_TOL * scale]
    return min(ties, key=lambda c: c.split.sort_key())


def best_split(
    P: np.ndarray, y: np.ndarray, w: np.ndarray, axes: Sequence[Axis], config: GrowthConfig,
    n_total: int,
) -> _Scored | None:
    """Best admissible, strictly improving split of one node's rows (or None)."""
    # centring keeps the sums-of-squares variance formula well conditioned
    yc = y - y.mean()
    parent = node_value(yc, w, n_total)
    cands: list[_Scored] = []
    for a, ax in enumerate(axes):
        splits = candidate_splits(P[:, a], a, ax, config)
        cands.extend(_score_axis(P[:, a], yc, w, splits, n_total, config.min_arm_samples_leaf))
    return choose_split(cands, parent)


# ---------------------------------------------------------------------------
# Growth


def grow_tree(train: Dataset, include_z_axis: bool, config: GrowthConfig = GrowthConfig()) -> DecisionTree:
    """Greedy recursive partitioning maximising the share-weighted objective.

    A node is split only when its best admissible split strictly increases
    the objective restricted to it and both children keep at least
    ``config.min_arm_samples_leaf`` rows of each arm. Leaves are numbered
    1..K from left to right; each leaf's ``effect`` starts as the training
    estimate until :func:`honest_estimate` replaces it.

    Raises:
        DegenerateArmError: if the training data lacks an arm.
    """
    if train.n_treated == 0 or train.n_control == 0:
        raise DegenerateArmError("training data needs both arms")
    axes = tree_axes(train, include_z_axis)
    P = design_matrix(train, axes)
    y, w = train.y, train.w
    n = len(train)
    nodes: dict[int, Node] = {}
    next_key = [0]

    def new_node() -> Node:
        node = Node(next_key[0])
        nodes[node.key] = node
        next_key[0] += 1
        return node

    root = new_node()
    yc_all = y - y.mean()
    current = node_value(yc_all, w, n)
    trace = [current]
    # breadth-first keeps the objective trace ordered by depth
    queue = [(root, np.arange(n), 0)]
    while queue:
        node, idx, depth = queue.pop(0)
        node.n_treated = int(w[idx].sum())
        node.n_control = int((~w[idx]).sum())
        t, c = _arm_stats(y[idx], w[idx])
        node.effect = t.mean - c.mean if not (t.empty or c.empty) else None
        if depth >= config.max_depth:
            continue
        found = best_split(P[idx], y[idx], w[idx], axes, config, n)
        if found is None:
            continue
        yc = y[idx] - y[idx].mean()
        current += found.gain - node_value(yc, w[idx], n)
        trace.append(current)
        node.split = found.split
        m = found.split.goes_left(P[idx, found.split.axis])
        left, right = new_node(), new_node()
        node.left, node.right = left.key, right.key
        queue.append((left, idx[m], depth + 1))
        queue.append((right, idx[~m], depth + 1))

    tree = DecisionTree(nodes, root.key, axes, objective_path=trace)
    for i, k in enumerate(tree.leaves(), start=1):
        tree[k].ids = frozenset({i})
    for k, node in nodes.items():
        if not node.is_leaf:
            node.effect = None
    return tree


# ---------------------------------------------------------------------------
# Honest estimation


def honest_estimate(tree: DecisionTree, estimation: Dataset) -> DecisionTree:
    """Re-estimate leaf effects as treated mean minus control mean on ``estimation``.

    A leaf whose estimation slice misses an arm takes the estimate of its
    deepest ancestor that has both arms and is flagged with ``fallback``.

    Raises:
        DegenerateArmError: if the estimation data lacks an arm altogether.
    """
    if estimation.n_treated == 0 or estimation.n_control == 0:
        raise DegenerateArmError("estimation data needs both arms")
    out = tree.copy()
    P = design_matrix(estimation, tree.axes)
    keys = out.apply(P)
    y, w = estimation.y, estimation.w
    # (n_t, sum_t, n_c, sum_c) per node, accumulated bottom-up
    acc: dict[int, np.ndarray] = {}
    for k in out.postorder():
        node = out[k]
        if node.is_leaf:
            m = keys == k
            acc[k] = np.array([w[m].sum(), y[m & w].sum(), (~w[m]).sum(), y[m & ~w].sum()], float)
        else:
            acc[k] = acc[node.left] + acc[node.right]
    par = out.parents()

    def estimate(k):
        nt, st, nc, sc = acc[k]
        return None if nt == 0 or nc == 0 else st / nt - sc / nc

    for k in out.leaves():
        node = out[k]
        node.n_treated, node.n_control = int(acc[k][0]), int(acc[k][2])
        eff = estimate(k)
        node.fallback = eff is None
        a = k
        while eff is None:
            a = par[a]
            eff = estimate(a)
        node.effect = float(eff)
    for k in out.nodes:
        if not out[k].is_leaf:
            out[k].n_treated, out[k].n_control = int(acc[k][0]), int(acc[k][2])
    return out
