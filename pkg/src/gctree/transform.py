"""Removing axes from a decision tree and assembling the cross-product effect table.

Removal walks the tree in post-order and, at every node split on a removed
axis, merges its two children in one of three ways depending on which of them
are leaves. Leaves keep track of the original leaves they descend from (their
super-cohorts) in ``Node.ids``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tree import CohortBox, DecisionTree, Interval, LabelSet, Node, TreeError, format_ids

log = logging.getLogger(__name__)


class TransformError(TreeError):
    code = "model"


# ---------------------------------------------------------------------------
# Merges. Each takes a tree and returns a rewritten copy.


def _check_internal(tree: DecisionTree, key: int) -> Node:
    node = tree[key]
    if node.is_leaf:
        raise TransformError(f"node {key} is a leaf")
    return node


def _drop_subtree(tree: DecisionTree, key: int) -> None:
    for k in list(tree.preorder(key)):
        del tree.nodes[k]


def _leaves_of(tree: DecisionTree, key: int) -> list[int]:
    return [k for k in tree.bfs(key) if tree[k].is_leaf]


def _merge_leaves(tree: DecisionTree, key: int) -> None:
    node = _check_internal(tree, key)
    left, right = tree[node.left], tree[node.right]
    if not (left.is_leaf and right.is_leaf):
        raise TransformError(f"node {key}: both children must be leaves")
    node.ids = left.ids | right.ids
    del tree.nodes[left.key], tree.nodes[right.key]
    node.split = node.left = node.right = None


def _adopt(tree: DecisionTree, node: Node, child: Node) -> None:
    node.split, node.left, node.right = child.split, child.left, child.right
    del tree.nodes[child.key]


def _merge_leaf_and_nonleaf(tree: DecisionTree, key: int) -> None:
    node = _check_internal(tree, key)
    left, right = tree[node.left], tree[node.right]
    if left.is_leaf == right.is_leaf:
        raise TransformError(f"node {key}: exactly one child must be a leaf")
    sub, gone = (right, left) if left.is_leaf else (left, right)
    _adopt(tree, node, sub)
    del tree.nodes[gone.key]
    for k in _leaves_of(tree, key):
        tree[k].ids = tree[k].ids | gone.ids


def _graft_copy(tree: DecisionTree, src: int, at: Node, extra_ids: frozenset) -> None:
    """Give leaf ``at`` the children of ``src`` (copied with fresh keys)."""
    fresh = [tree.next_key()]

    def clone(k: int) -> int:
        old = tree[k]
        nk = fresh[0]
        fresh[0] += 1
        new = Node(nk, split=old.split, ids=old.ids, effect=old.effect)
        tree.nodes[nk] = new
        if not old.is_leaf:
            new.left = clone(old.left)
            new.right = clone(old.right)
        else:
            new.ids = old.ids | extra_ids
        return nk

    s = tree[src]
    at.split = s.split
    at.left = clone(s.left)
    at.right = clone(s.right)
    at.ids = frozenset()
    at.effect = None


def prune_empty(tree: DecisionTree, key: int | None = None, box: CohortBox | None = None) -> None:
    """Splice out children with contradictory constraints until none remain."""
    key = tree.root if key is None else key
    if box is None:
        box = tree.box(key)
    stack = [(key, box)]
    while stack:
        k, b = stack.pop()
        node = tree[k]
        if node.is_leaf:
            continue
        ax = tree.axes[node.split.axis]
        lb = b.restrict(node.split.axis, node.split.left_constraint(ax))
        rb = b.restrict(node.split.axis, node.split.right_constraint(ax))
        if lb.is_empty() or rb.is_empty():
            dead, keep = (node.left, node.right) if lb.is_empty() else (node.right, node.left)
            kept = tree[keep]
            _drop_subtree(tree, dead)
            node.split, node.left, node.right = kept.split, kept.left, kept.right
            if kept.is_leaf:
                node.ids, node.effect = kept.ids, kept.effect
            del tree.nodes[keep]
            # the spliced-in split may itself be contradictory
            stack.append((k, b))
        else:
            stack.append((node.left, lb))
            stack.append((node.right, rb))


def _merge_nonleaves(tree: DecisionTree, key: int) -> None:
    node = _check_internal(tree, key)
    c1, c2 = tree[node.left], tree[node.right]
    if c1.is_leaf or c2.is_leaf:
        raise TransformError(f"node {key}: both children must be non-leaves")
    box = tree.box(key)
    _adopt(tree, node, c1)
    for k in _leaves_of(tree, key):
        a1 = tree[k]
        _graft_copy(tree, c2.key, a1, a1.ids)
    _drop_subtree(tree, c2.key)
    prune_empty(tree, key, box)


def merge_leaves(tree: DecisionTree, node: int) -> DecisionTree:
    """Collapse two leaf children into their parent, uniting their id sets."""
    out = tree.copy()
    _merge_leaves(out, node)
    return out


def merge_leaf_and_nonleaf(tree: DecisionTree, node: int) -> DecisionTree:
    """Replace ``node``'s split by its non-leaf child's; the leaf child's ids
    spread to every leaf of the surviving sub-tree."""
    out = tree.copy()
    _merge_leaf_and_nonleaf(out, node)
    return out


def merge_nonleaves(tree: DecisionTree, node: int) -> DecisionTree:
    """Adopt the left child's sub-tree, graft a copy of the right child's
    sub-tree below each of its leaves, then prune contradictory branches."""
    out = tree.copy()
    _merge_nonleaves(out, node)
    return out


def _axis_indices(tree: DecisionTree, axes: Iterable) -> set[int]:
    names = [a.name for a in tree.axes]
    out = set()
    for a in axes:
        if isinstance(a, (int, np.integer)):
            if not 0 <= a < len(names):
                raise TransformError(f"axis index {a} out of range")
            out.add(int(a))
        else:
            if a not in names:
                raise TransformError(f"unknown axis {a!r}")
            out.add(names.index(a))
    return out


def remove_features(tree: DecisionTree, removed_axes: Iterable) -> DecisionTree:
    """Rewrite ``tree`` so that no split constrains any of ``removed_axes``.

    ``removed_axes`` holds axis names or indices. The result partitions the
    remaining axes; each of its leaves lists, in ``ids``, the original leaves
    whose projected cohort contains it.
    """
    removed = _axis_indices(tree, removed_axes)
    out = tree.copy()
    out.objective_path = []
    merged = False
    for k in tree.postorder():
        if k not in out.nodes:
            continue
        node = out[k]
        if node.is_leaf or node.split.axis not in removed:
            continue
        merged = True
        left, right = out[node.left], out[node.right]
        if left.is_leaf and right.is_leaf:
            _merge_leaves(out, k)
        elif left.is_leaf or right.is_leaf:
            _merge_leaf_and_nonleaf(out, k)
        else:
            _merge_nonleaves(out, k)
    if merged:
        # estimates belong to original leaves; rewritten leaves only carry ids
        for node in out.nodes.values():
            node.effect, node.n_treated, node.n_control, node.fallback = None, 0, 0, False
            if not node.is_leaf:
                node.ids = frozenset()
    out.validate()
    return out


# ---------------------------------------------------------------------------
# Cross-product effect table


@dataclass
class EffectTable:
    """Effects on the grid of X-cohorts (rows) by Z-cohorts (columns)."""

    x_partition: list[CohortBox]
    z_partition: list[CohortBox]
    effects: np.ndarray
    source_leaf: np.ndarray
    counts: np.ndarray
    x_leaf_keys: list[int] = field(default_factory=list)
    z_leaf_keys: list[int] = field(default_factory=list)
    x_axes: list[int] = field(default_factory=list)
    z_axes: list[int] = field(default_factory=list)
    anomalies: list[dict] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.effects.shape

    def to_dict(self) -> dict:
        return {
            "x_partition": [b.to_dict(self.x_axes) for b in self.x_partition],
            "z_partition": [b.to_dict(self.z_axes) for b in self.z_partition],
            "effects": [[_num(v) for v in row] for row in self.effects],
            "source_leaf": self.source_leaf.astype(int).tolist(),
            "counts": self.counts.astype(int).tolist(),
            "x_leaf_keys": list(self.x_leaf_keys),
            "z_leaf_keys": list(self.z_leaf_keys),
            "anomalies": self.anomalies,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, axes) -> "EffectTable":
        names = [a.name for a in axes]

        def box(rec):
            cons = {}
            for name, c in rec.items():
                a = names.index(name)
                if "labels" in c:
                    cons[a] = LabelSet(frozenset(axes[a].categories.index(s) for s in c["labels"]))
                else:
                    cons[a] = Interval.from_dict(c)
            return CohortBox(axes, cons)

        return cls(
            [box(r) for r in d["x_partition"]],
            [box(r) for r in d["z_partition"]],
            np.array([[math.nan if v is None else v for v in row] for row in d["effects"]], float),
            np.array(d["source_leaf"], dtype=int),
            np.array(d["counts"], dtype=int),
            list(d.get("x_leaf_keys", [])),
            list(d.get("z_leaf_keys", [])),
            [names.index(n) for n in d["x_partition"][0]] if d["x_partition"] else [],
            [names.index(n) for n in d["z_partition"][0]] if d["z_partition"] else [],
            list(d.get("anomalies", [])),
        )

    def render(self, effects: bool = False) -> str:
        """Aligned text grid; cells show the source leaf (or the effect)."""
        cols = [f"G{j + 1}" for j in range(self.shape[1])]
        rows = []
        for i in range(self.shape[0]):
            cells = []
            for j in range(self.shape[1]):
                if effects:
                    cells.append(f"{self.effects[i, j]:.3f}")
                else:
                    cells.append(f"L{self.source_leaf[i, j]}")
            rows.append([f"P{i + 1}"] + cells)
        header = [""] + cols
        width = max(len(c) for r in rows + [header] for c in r)
        lines = [" ".join(c.rjust(width) for c in header)]
        lines += [" ".join(c.rjust(width) for c in r) for r in rows]
        legend = [f"P{i + 1} = {b.describe(self.x_axes)}" for i, b in enumerate(self.x_partition)]
        legend += [f"G{j + 1} = {b.describe(self.z_axes)}" for j, b in enumerate(self.z_partition)]
        return "\n".join(lines + [""] + legend)


def _num(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def cross_product_effects(
    original: DecisionTree, x_tree: DecisionTree, z_tree: DecisionTree
) -> EffectTable:
    """Map every (X-cohort, Z-cohort) cell to its original leaf and effect.

    The cell's leaf is the single original id shared by both cohorts' id sets.
    If the intersection is not a singleton, the cell is resolved by
    geometric containment and an anomaly is recorded.

    Raises:
        TransformError: if no original leaf contains the cell.
    """
    z = original.z_axis
    if z is None:
        raise TransformError("original tree has no Z axis")
    x_axes = original.feature_axes
    z_axes = [z]
    by_id = original.leaf_by_id()
    boxes = original.boxes()
    xl, zl = x_tree.leaves(), z_tree.leaves()
    xb, zb = x_tree.boxes(), z_tree.boxes()
    kx, kz = len(xl), len(zl)
    effects = np.full((kx, kz), np.nan)
    source = np.zeros((kx, kz), dtype=int)
    counts = np.zeros((kx, kz, 2), dtype=int)
    anomalies = []
    for i, a in enumerate(xl):
        for j, b in enumerate(zl):
            common = x_tree[a].ids & z_tree[b].ids
            cell = xb[a].project(x_axes).intersect(zb[b].project(z_axes))
            if len(common) == 1:
                lid = next(iter(common))
            else:
                hits = [
                    i_ for i_, k in by_id.items() if cell.issubset(boxes[k])
                ]
                if len(hits) != 1:
                    raise TransformError(
                        f"cell ({i + 1}, {j + 1}) maps to no unique original leaf "
                        f"(ids {sorted(common)}, containers {hits})"
                    )
                lid = hits[0]
                anomalies.append({"cell": [i, j], "ids": sorted(common), "resolved": lid})
                log.warning("cell (%d, %d): id intersection %s resolved geometrically to %d",
                            i + 1, j + 1, format_ids(common), lid)
            leaf = original[by_id[lid]]
            source[i, j] = lid
            effects[i, j] = math.nan if leaf.effect is None else leaf.effect
            counts[i, j] = (leaf.n_treated, leaf.n_control)
    return EffectTable(
        [xb[a].project(x_axes) for a in xl],
        [zb[b].project(z_axes) for b in zl],
        effects, source, counts, xl, zl, x_axes, z_axes, anomalies,
    )
