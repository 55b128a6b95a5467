"""Shared fixtures and independent oracles for the test suite."""
from __future__ import annotations

import itertools
import math

import numpy as np

from gctree.tree import Axis, DecisionTree, Interval, Node, Split, build_tree

INF = math.inf

# ---------------------------------------------------------------------------
# Worked example: a 13-leaf joint tree over (X1, X2, Z)

APPENDIX_AXES = (Axis("X1"), Axis("X2"), Axis("Z"))
APPENDIX_SPEC = (
    "X1", 1,
    ("Z", 5,
        ("X2", 3, ("X1", 0, 1, 2), 3),
        ("Z", 10, ("X2", 2, 4, 5), 6)),
    ("X2", 4,
        ("Z", 3, ("X2", 1, 7, ("Z", 2, 8, 9)), 10),
        ("X1", 5, ("Z", 7, 11, 12), 13)),
)

# leaf id -> {axis: (lower, upper]}; unlisted axes are unconstrained
LEAF_REGIONS = {
    1: {"X1": (-INF, 0), "X2": (-INF, 3), "Z": (-INF, 5)},
    2: {"X1": (0, 1), "X2": (-INF, 3), "Z": (-INF, 5)},
    3: {"X1": (-INF, 1), "X2": (3, INF), "Z": (-INF, 5)},
    4: {"X1": (-INF, 1), "X2": (-INF, 2), "Z": (5, 10)},
    5: {"X1": (-INF, 1), "X2": (2, INF), "Z": (5, 10)},
    6: {"X1": (-INF, 1), "Z": (10, INF)},
    7: {"X1": (1, INF), "X2": (-INF, 1), "Z": (-INF, 3)},
    8: {"X1": (1, INF), "X2": (1, 4), "Z": (-INF, 2)},
    9: {"X1": (1, INF), "X2": (1, 4), "Z": (2, 3)},
    10: {"X1": (1, INF), "X2": (-INF, 4), "Z": (3, INF)},
    11: {"X1": (1, 5), "X2": (4, INF), "Z": (-INF, 7)},
    12: {"X1": (1, 5), "X2": (4, INF), "Z": (7, INF)},
    13: {"X1": (5, INF), "X2": (4, INF)},
}

# X-cohorts in left-to-right order: (id set, region)
X_COHORTS = [
    ({1, 4, 6}, {"X1": (-INF, 0), "X2": (-INF, 2)}),
    ({1, 5, 6}, {"X1": (-INF, 0), "X2": (2, 3)}),
    ({2, 4, 6}, {"X1": (0, 1), "X2": (-INF, 2)}),
    ({2, 5, 6}, {"X1": (0, 1), "X2": (2, 3)}),
    ({3, 5, 6}, {"X1": (-INF, 1), "X2": (3, INF)}),
    ({7, 10}, {"X1": (1, INF), "X2": (-INF, 1)}),
    ({8, 9, 10}, {"X1": (1, INF), "X2": (1, 4)}),
    ({11, 12}, {"X1": (1, 5), "X2": (4, INF)}),
    ({13}, {"X1": (5, INF), "X2": (4, INF)}),
]

Z_COHORTS = [(-INF, 2), (2, 3), (3, 5), (5, 7), (7, 10), (10, INF)]

# source leaf for each (X-cohort, Z-cohort) cell
EFFECT_GRID = [
    [1, 1, 1, 4, 4, 6],
    [1, 1, 1, 5, 5, 6],
    [2, 2, 2, 4, 4, 6],
    [2, 2, 2, 5, 5, 6],
    [3, 3, 3, 5, 5, 6],
    [7, 7, 10, 10, 10, 10],
    [8, 9, 10, 10, 10, 10],
    [11, 11, 11, 11, 12, 12],
    [13, 13, 13, 13, 13, 13],
]


def appendix_tree(with_effects: bool = True) -> DecisionTree:
    """The worked example; leaf ``i`` gets effect ``i / 10`` when requested."""
    t = build_tree(APPENDIX_SPEC, APPENDIX_AXES)
    if with_effects:
        for k in t.leaves():
            (i,) = t[k].ids
            t[k].effect = i / 10
            t[k].n_treated, t[k].n_control = 10 * i, 10 * i + 1
    return t


def region_of(box, axes_names) -> dict:
    """Box -> {axis: (lower, upper]} with unconstrained axes dropped."""
    out = {}
    for a, name in enumerate(box.axes):
        if name.name not in axes_names:
            continue
        c = box.get(a)
        if isinstance(c, Interval) and not c.is_full():
            out[name.name] = (c.lower, c.upper)
    return out


# ---------------------------------------------------------------------------
# Random small trees on an integer lattice

GRID_REAL = np.arange(-0.5, 11.0, 1.0)  # half-integers bracket every cut 0..10
CAT_LABELS = ("p", "q", "r")


def random_axes(rng: np.random.Generator, with_categorical: bool | None = None) -> tuple[Axis, ...]:
    if with_categorical is None:
        with_categorical = bool(rng.integers(2))
    axes = [Axis("A"), Axis("B")]
    if with_categorical:
        axes.append(Axis("C", "categorical", CAT_LABELS))
    axes.append(Axis("Z"))
    return tuple(axes)


def random_tree(rng: np.random.Generator, axes, max_depth: int = 4, p_leaf: float = 0.25) -> DecisionTree:
    """Random full binary tree whose every split cuts its node's box.

    Real thresholds are integers in 1..9; categorical splits take a proper
    non-empty subset of the labels still allowed at the node.
    """
    nodes: dict[int, Node] = {}
    counter = itertools.count()

    def make(depth: int, box: dict) -> int:
        key = next(counter)
        node = Node(key)
        nodes[key] = node
        if depth < max_depth and not (depth > 0 and rng.random() < p_leaf):
            for a in rng.permutation(len(axes)):
                a = int(a)
                if axes[a].is_categorical:
                    allowed = sorted(box[a])
                    if len(allowed) < 2:
                        continue
                    size = int(rng.integers(1, len(allowed)))
                    sub = frozenset(int(c) for c in rng.choice(allowed, size=size, replace=False))
                    split = Split(a, subset=sub)
                    lbox, rbox = dict(box), dict(box)
                    lbox[a], rbox[a] = box[a] & sub, box[a] - sub
                else:
                    lo, hi = box[a]
                    cands = [s for s in range(1, 10) if lo < s < hi]
                    if not cands:
                        continue
                    s = int(rng.choice(cands))
                    split = Split(a, threshold=float(s))
                    lbox, rbox = dict(box), dict(box)
                    lbox[a], rbox[a] = (lo, s), (s, hi)
                node.split = split
                node.left = make(depth + 1, lbox)
                node.right = make(depth + 1, rbox)
                break
        return key

    start = {
        a: (frozenset(range(len(ax.categories))) if ax.is_categorical else (0, 10))
        for a, ax in enumerate(axes)
    }
    root = make(0, start)
    tree = DecisionTree(nodes, root, tuple(axes))
    for i, k in enumerate(tree.leaves(), start=1):
        tree[k].ids = frozenset({i})
    return tree


def lattice(axes, keep=None) -> np.ndarray:
    """All grid points over ``keep`` axes (others NaN); one point per lattice cell."""
    keep = range(len(axes)) if keep is None else keep
    cols = []
    for a, ax in enumerate(axes):
        if a in keep:
            cols.append(np.arange(len(ax.categories), dtype=float) if ax.is_categorical else GRID_REAL)
        else:
            cols.append(np.array([np.nan]))
    return np.array(list(itertools.product(*cols)), dtype=float)


def extend(points: np.ndarray, axes, removed) -> np.ndarray:
    """Cartesian extension of ``points`` over the lattice of the removed axes."""
    sub = lattice(axes, keep=removed)
    out = np.repeat(points, len(sub), axis=0)
    tiled = np.tile(sub, (len(points), 1))
    for a in removed:
        out[:, a] = tiled[:, a]
    return out


def id_signatures(tree: DecisionTree, points: np.ndarray, removed) -> list[frozenset]:
    """Oracle: ids of input leaves reached by ``points`` extended over removed axes."""
    ext = extend(points, tree.axes, removed)
    keys = tree.apply(ext)
    per = len(ext) // len(points)
    ids = [frozenset().union(*(tree[k].ids for k in keys[i * per:(i + 1) * per])) for i in range(len(points))]
    return ids


def enumerate_splits(P: np.ndarray, axes) -> list[Split]:
    """Every candidate split of a small sample, without thinning."""
    out = []
    for a, ax in enumerate(axes):
        levels = np.unique(P[:, a])
        if levels.size < 2:
            continue
        if ax.is_categorical:
            out += [Split(a, subset={int(c)}) for c in levels]
        elif ax.kind == "ordinal":
            out += [Split(a, threshold=float(c)) for c in levels[:-1]]
        else:
            out += [Split(a, threshold=float(s)) for s in (levels[:-1] + levels[1:]) / 2]
    return out


def brute_force_first_split(P, y, w, axes, min_arm, tol=1e-10):
    """Exhaustive first-split search with the documented tie-break.

    Children are scored by share-weighted utility recomputed from raw
    responses. The best value must beat the root by a relative ``tol``;
    candidates within ``tol`` of the best count as tied and the smallest
    (axis, threshold, subset) key wins.

    Returns:
        (split, value) or ``None`` when the root stays a leaf.
    """
    n = len(y)

    def value(mask):
        return mask.sum() / n * naive_utility(y[mask & w], y[mask & ~w])

    root = value(np.ones(n, dtype=bool))
    scored = []
    for split in enumerate_splits(P, axes):
        m = split.goes_left(P[:, split.axis])
        if min((m & w).sum(), (m & ~w).sum(), (~m & w).sum(), (~m & ~w).sum()) < min_arm:
            continue
        scored.append((split, value(m) + value(~m)))
    if not scored:
        return None
    best = max(v for _, v in scored)
    scale = 1 + abs(best) + (abs(root) if math.isfinite(root) else 0)
    if not best > root + tol * scale:
        return None
    ties = [(s, v) for s, v in scored if v >= best - tol * scale]
    return min(ties, key=lambda sv: sv[0].sort_key())


def naive_utility(yt, yc) -> float:
    """tau_hat^2 - SE^2 from raw responses (independent of the package)."""
    if len(yt) == 0 or len(yc) == 0:
        return -math.inf
    vt = float(np.var(yt, ddof=1)) if len(yt) > 1 else 0.0
    vc = float(np.var(yc, ddof=1)) if len(yc) > 1 else 0.0
    tau = float(np.mean(yt) - np.mean(yc))
    return tau * tau - (vt / len(yt) + vc / len(yc))


# ---------------------------------------------------------------------------
# Structural property suite for remove_features / cross_product_effects


def _removal_failures(tree: DecisionTree, removed: set, tag: str) -> list[str]:
    from gctree.transform import remove_features

    bad = []
    axes = tree.axes
    kept = [a for a in range(len(axes)) if a not in removed]
    out = remove_features(tree, removed)
    if out.split_axes() & removed:
        bad.append(f"{tag}: predicate on a removed axis survived")
    leaves = out.leaves()
    boxes = out.boxes()
    pts = lattice(axes, keep=kept)
    # routing uniqueness: every lattice point lies in exactly one leaf box
    inside = np.stack([boxes[k].contains(pts) for k in leaves])
    if not (inside.sum(0) == 1).all():
        bad.append(f"{tag}: leaf boxes are not a partition")
    if (inside.sum(1) == 0).any() or any(boxes[k].is_empty() for k in leaves):
        bad.append(f"{tag}: empty output leaf")
    routed = out.apply(pts)
    if not all(inside[leaves.index(k), i] for i, k in enumerate(routed)):
        bad.append(f"{tag}: routing disagrees with geometry")
    # super-cohort ids: routing oracle and exact projected containment
    sig = id_signatures(tree, pts, sorted(removed))
    for i, k in enumerate(routed):
        if sig[i] != out[k].ids:
            bad.append(f"{tag}: ids {sorted(out[k].ids)} != oracle {sorted(sig[i])}")
            break
    src_boxes = tree.boxes()
    for k in leaves:
        want = {i for leaf in tree.leaves() for i in tree[leaf].ids
                if boxes[k].issubset(src_boxes[leaf], kept)}
        if want != set(out[k].ids):
            bad.append(f"{tag}: containment ids {sorted(want)} != {sorted(out[k].ids)}")
            break
    # boundary provenance
    for a in kept:
        if not out.predicates(a) <= tree.predicates(a):
            bad.append(f"{tag}: new predicate on axis {axes[a].name}")
    # idempotence
    if remove_features(out, removed).to_json() != out.to_json():
        bad.append(f"{tag}: not idempotent")
    return bad


def structural_failures(tree: DecisionTree, rng: np.random.Generator | None = None) -> list[str]:
    """All structural properties for one tree; returns human-readable failures."""
    from gctree.transform import cross_product_effects, remove_features

    bad = []
    z = tree.z_axis
    feats = set(tree.feature_axes)
    bad += _removal_failures(tree, {z}, "remove Z")
    bad += _removal_failures(tree, feats, "remove X")
    # composition: removing A then B partitions like removing A and B at once
    if rng is not None and len(feats) >= 2:
        a, b = (int(v) for v in rng.choice(sorted(feats), size=2, replace=False))
        two = remove_features(remove_features(tree, {a}), {b})
        one = remove_features(tree, {a, b})
        kept = [i for i in range(len(tree.axes)) if i not in (a, b)]
        pts = lattice(tree.axes, keep=kept)
        ids_two = [two[k].ids for k in two.apply(pts)]
        ids_one = [one[k].ids for k in one.apply(pts)]
        if ids_two != ids_one:
            bad.append("composition: sequential removal differs from joint removal")
    # cross-product cells
    xt, zt = remove_features(tree, {z}), remove_features(tree, feats)
    for k in tree.leaves():
        tree[k].effect = float(min(tree[k].ids))
    table = cross_product_effects(tree, xt, zt)
    src = tree.boxes()
    by_id = tree.leaf_by_id()
    pts = lattice(tree.axes)
    owner = tree.apply(pts)
    x_keys = xt.apply(np.where(np.isin(np.arange(len(tree.axes)), [z]), np.nan, pts))
    z_keys = zt.apply(np.where(np.isin(np.arange(len(tree.axes)), sorted(feats)), np.nan, pts))
    xpos = {k: i for i, k in enumerate(table.x_leaf_keys)}
    zpos = {k: j for j, k in enumerate(table.z_leaf_keys)}
    for p, (kx, kz) in enumerate(zip(x_keys, z_keys)):
        i, j = xpos[kx], zpos[kz]
        lid = table.source_leaf[i, j]
        if owner[p] != by_id[lid]:
            bad.append(f"cross product: cell ({i}, {j}) maps to leaf {lid}, point lies in another")
            break
        if table.effects[i, j] != tree[by_id[lid]].effect:
            bad.append("cross product: effect does not match the source leaf")
            break
    for i, bx in enumerate(table.x_partition):
        for j, bz in enumerate(table.z_partition):
            if not bx.intersect(bz).issubset(src[by_id[table.source_leaf[i, j]]]):
                bad.append(f"cross product: cell ({i}, {j}) not inside its source leaf")
    return bad
