"""Binary decision trees over covariate and treatment axes.

Every internal node holds one :class:`Split`; points with ``value <= threshold``
(or ``value in subset`` on a categorical axis) go left. Leaves carry the set of
original-leaf identifiers they stand for, which is a singleton on a freshly
grown tree and grows as rewriting merges leaves.
"""
from __future__ import annotations

import copy
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

Z_AXIS_NAME = "Z"
AXIS_KINDS = ("real", "ordinal", "categorical")


class TreeError(ValueError):
    code = "model"


@dataclass(frozen=True)
class Axis:
    name: str
    kind: str = "real"
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in AXIS_KINDS:
            raise TreeError(f"axis {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and not self.categories:
            raise TreeError(f"categorical axis {self.name!r} needs categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    def full(self) -> "Interval | LabelSet":
        if self.is_categorical:
            return LabelSet(frozenset(range(len(self.categories))))
        return Interval()

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.categories:
            d["categories"] = list(self.categories)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Axis":
        return cls(d["name"], d.get("kind", "real"), tuple(d.get("categories", ())))


# ---------------------------------------------------------------------------
# Per-axis constraints and boxes


@dataclass(frozen=True)
class Interval:
    """Half-open interval ``(lower, upper]``."""

    lower: float = -math.inf
    upper: float = math.inf

    def intersect(self, other: "Interval") -> "Interval":
        return Interval(max(self.lower, other.lower), min(self.upper, other.upper))

    def is_empty(self) -> bool:
        return self.lower >= self.upper

    def contains(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return (v > self.lower) & (v <= self.upper)

    def issubset(self, other: "Interval") -> bool:
        return self.is_empty() or (other.lower <= self.lower and self.upper <= other.upper)

    def is_full(self) -> bool:
        return self.lower == -math.inf and self.upper == math.inf

    def describe(self, name: str) -> str:
        lo, hi = self.lower, self.upper
        if lo == -math.inf and hi == math.inf:
            return f"{name} any"
        if lo == -math.inf:
            return f"{name} <= {_fmt(hi)}"
        if hi == math.inf:
            return f"{name} > {_fmt(lo)}"
        return f"{_fmt(lo)} < {name} <= {_fmt(hi)}"

    def to_dict(self) -> dict:
        return {"lower": _enc(self.lower), "upper": _enc(self.upper)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Interval":
        return cls(_dec(d["lower"]), _dec(d["upper"]))


@dataclass(frozen=True)
class LabelSet:
    """Allowed label codes on a categorical axis."""

    codes: frozenset

    def intersect(self, other: "LabelSet") -> "LabelSet":
        return LabelSet(self.codes & other.codes)

    def is_empty(self) -> bool:
        return not self.codes

    def contains(self, values) -> np.ndarray:
        return np.isin(np.asarray(values, dtype=float), sorted(self.codes))

    def issubset(self, other: "LabelSet") -> bool:
        return self.codes <= other.codes

    def describe(self, name: str, categories: Sequence[str] = ()) -> str:
        labels = [categories[c] if categories else str(c) for c in sorted(self.codes)]
        return f"{name} in {{{', '.join(labels)}}}"

    def to_dict(self, categories: Sequence[str] = ()) -> dict:
        return {"labels": [categories[c] if categories else c for c in sorted(self.codes)]}


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _enc(v: float):
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return float(v)


def _dec(v) -> float:
    return float(v)


class CohortBox:
    """Axis-aligned region: a conjunction of per-axis constraints.

    Axes without an explicit constraint are unconstrained.
    """

    def __init__(self, axes: Sequence[Axis], constraints: Mapping[int, object] | None = None):
        self.axes = tuple(axes)
        self.constraints = dict(constraints or {})

    def get(self, axis: int):
        return self.constraints.get(axis, self.axes[axis].full())

    def restrict(self, axis: int, constraint) -> "CohortBox":
        out = dict(self.constraints)
        out[axis] = self.get(axis).intersect(constraint)
        return CohortBox(self.axes, out)

    def is_empty(self) -> bool:
        return any(c.is_empty() for c in self.constraints.values())

    def project(self, keep: Sequence[int]) -> "CohortBox":
        keep = set(keep)
        return CohortBox(self.axes, {a: c for a, c in self.constraints.items() if a in keep})

    def intersect(self, other: "CohortBox") -> "CohortBox":
        out = dict(self.constraints)
        for a, c in other.constraints.items():
            out[a] = self.get(a).intersect(c)
        return CohortBox(self.axes, out)

    def issubset(self, other: "CohortBox", axes: Sequence[int] | None = None) -> bool:
        if self.is_empty():
            return True
        axes = range(len(self.axes)) if axes is None else axes
        return all(self.get(a).issubset(other.get(a)) for a in axes)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership mask for an (n, n_axes) array; NaN only allowed on free axes."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        mask = np.ones(points.shape[0], dtype=bool)
        for a, c in self.constraints.items():
            mask &= c.contains(points[:, a])
        return mask

    def canonical(self) -> tuple:
        """Hashable normal form with full constraints dropped."""
        items = []
        for a in sorted(self.constraints):
            c = self.constraints[a]
            if c == self.axes[a].full():
                continue
            if isinstance(c, Interval):
                items.append((a, "i", c.lower, c.upper))
            else:
                items.append((a, "s", tuple(sorted(c.codes))))
        return tuple(items)

    def __eq__(self, other) -> bool:
        return isinstance(other, CohortBox) and self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    def describe(self, axes: Sequence[int] | None = None) -> str:
        axes = sorted(self.constraints) if axes is None else axes
        parts = []
        for a in axes:
            c = self.get(a)
            if c == self.axes[a].full():
                continue
            if isinstance(c, Interval):
                parts.append(c.describe(self.axes[a].name))
            else:
                parts.append(c.describe(self.axes[a].name, self.axes[a].categories))
        return "{" + ", ".join(parts) + "}" if parts else "{all}"

    def to_dict(self, axes: Sequence[int] | None = None) -> dict:
        axes = sorted(self.constraints) if axes is None else axes
        out = {}
        for a in axes:
            c = self.get(a)
            ax = self.axes[a]
            out[ax.name] = c.to_dict(ax.categories) if isinstance(c, LabelSet) else c.to_dict()
        return out

    def __repr__(self) -> str:
        return f"CohortBox{self.describe()}"


# ---------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class Split:
    """Split predicate: ``threshold`` on ordered axes, ``subset`` on categorical ones."""

    axis: int
    threshold: float | None = None
    subset: frozenset | None = None

    def __post_init__(self):
        if (self.threshold is None) == (self.subset is None):
            raise TreeError("a split needs exactly one of threshold or subset")
        if self.subset is not None:
            object.__setattr__(self, "subset", frozenset(int(c) for c in self.subset))
        else:
            object.__setattr__(self, "threshold", float(self.threshold))

    def goes_left(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if self.threshold is not None:
            return v <= self.threshold
        return np.isin(v, sorted(self.subset))

    def left_constraint(self, axis: Axis):
        if self.threshold is not None:
            return Interval(upper=self.threshold)
        return LabelSet(self.subset)

    def right_constraint(self, axis: Axis):
        if self.threshold is not None:
            return Interval(lower=self.threshold)
        return LabelSet(frozenset(range(len(axis.categories))) - self.subset)

    def sort_key(self) -> tuple:
        if self.threshold is not None:
            return (self.axis, self.threshold, ())
        return (self.axis, 0.0, tuple(sorted(self.subset)))

    def to_dict(self, axes: Sequence[Axis]) -> dict:
        ax = axes[self.axis]
        if self.threshold is not None:
            return {"axis": ax.name, "threshold": self.threshold}
        return {"axis": ax.name, "subset": sorted(ax.categories[c] for c in self.subset)}

    @classmethod
    def from_dict(cls, d: Mapping, axes: Sequence[Axis]) -> "Split":
        names = [a.name for a in axes]
        if d["axis"] not in names:
            raise TreeError(f"unknown axis {d['axis']!r}")
        a = names.index(d["axis"])
        if "threshold" in d:
            return cls(a, threshold=float(d["threshold"]))
        cats = axes[a].categories
        return cls(a, subset=frozenset(cats.index(s) for s in d["subset"]))

    def describe(self, axes: Sequence[Axis]) -> str:
        ax = axes[self.axis]
        if self.threshold is not None:
            return f"{ax.name} <= {_fmt(self.threshold)}"
        return f"{ax.name} in {{{', '.join(sorted(ax.categories[c] for c in self.subset))}}}"


# ---------------------------------------------------------------------------
# Nodes and trees


@dataclass
class Node:
    key: int
    split: Split | None = None
    left: int | None = None
    right: int | None = None
    ids: frozenset = frozenset()
    effect: float | None = None
    n_treated: int = 0
    n_control: int = 0
    fallback: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self, axes: Sequence[Axis]) -> dict:
        return {
            "key": self.key,
            "predicate": None if self.split is None else self.split.to_dict(axes),
            "left": self.left,
            "right": self.right,
            "id_set": sorted(self.ids),
            "effect": self.effect,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "fallback": self.fallback,
        }


@dataclass
class DecisionTree:
    """Full binary tree stored as a keyed node table."""

    nodes: dict[int, Node]
    root: int
    axes: tuple[Axis, ...]
    objective_path: list[float] = field(default_factory=list, compare=False)

    # -- structure ---------------------------------------------------------
    def __getitem__(self, key: int) -> Node:
        return self.nodes[key]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def z_axis(self) -> int | None:
        for i, a in enumerate(self.axes):
            if a.name == Z_AXIS_NAME:
                return i
        return None

    @property
    def feature_axes(self) -> list[int]:
        return [i for i, a in enumerate(self.axes) if a.name != Z_AXIS_NAME]

    def next_key(self) -> int:
        return max(self.nodes) + 1

    def children(self, key: int) -> tuple[int, int] | None:
        n = self.nodes[key]
        return None if n.is_leaf else (n.left, n.right)

    def preorder(self, start: int | None = None) -> Iterator[int]:
        stack = [self.root if start is None else start]
        while stack:
            k = stack.pop()
            yield k
            n = self.nodes[k]
            if not n.is_leaf:
                stack.append(n.right)
                stack.append(n.left)

    def postorder(self, start: int | None = None) -> list[int]:
        out: list[int] = []

        def visit(k: int):
            n = self.nodes[k]
            if not n.is_leaf:
                visit(n.left)
                visit(n.right)
            out.append(k)

        visit(self.root if start is None else start)
        return out

    def bfs(self, start: int | None = None) -> Iterator[int]:
        q = deque([self.root if start is None else start])
        while q:
            k = q.popleft()
            yield k
            n = self.nodes[k]
            if not n.is_leaf:
                q.append(n.left)
                q.append(n.right)

    def leaves(self, start: int | None = None) -> list[int]:
        """Leaf keys in left-to-right order."""
        return [k for k in self.preorder(start) if self.nodes[k].is_leaf]

    def parents(self) -> dict[int, int]:
        out = {}
        for k in self.preorder():
            n = self.nodes[k]
            if not n.is_leaf:
                out[n.left] = k
                out[n.right] = k
        return out

    def depth(self) -> int:
        def d(k):
            n = self.nodes[k]
            return 0 if n.is_leaf else 1 + max(d(n.left), d(n.right))

        return d(self.root)

    def validate(self) -> None:
        seen = set()
        for k in self.preorder():
            if k in seen:
                raise TreeError(f"node {k} reachable twice")
            seen.add(k)
            n = self.nodes[k]
            if (n.left is None) != (n.right is None):
                raise TreeError(f"node {k} has exactly one child")
            if n.is_leaf and n.split is not None:
                raise TreeError(f"leaf {k} carries a split")
            if not n.is_leaf and n.split is None:
                raise TreeError(f"internal node {k} has no split")
        if seen != set(self.nodes):
            raise TreeError("node table contains unreachable nodes")

    # -- geometry ----------------------------------------------------------
    def full_box(self) -> CohortBox:
        return CohortBox(self.axes)

    def boxes(self) -> dict[int, CohortBox]:
        """Cohort box of every node (intersection of predicates on the root path)."""
        out = {self.root: self.full_box()}
        for k in self.preorder():
            n = self.nodes[k]
            if n.is_leaf:
                continue
            b = out[k]
            ax = self.axes[n.split.axis]
            out[n.left] = b.restrict(n.split.axis, n.split.left_constraint(ax))
            out[n.right] = b.restrict(n.split.axis, n.split.right_constraint(ax))
        return out

    def box(self, key: int) -> CohortBox:
        path = []
        par = self.parents()
        k = key
        while k != self.root:
            path.append(k)
            k = par[k]
        b = self.full_box()
        cur = self.root
        for child in reversed(path):
            n = self.nodes[cur]
            ax = self.axes[n.split.axis]
            c = n.split.left_constraint(ax) if child == n.left else n.split.right_constraint(ax)
            b = b.restrict(n.split.axis, c)
            cur = child
        return b

    def split_axes(self) -> set[int]:
        return {n.split.axis for n in self.nodes.values() if n.split is not None}

    def predicates(self, axis: int | None = None) -> set:
        out = set()
        for n in self.nodes.values():
            if n.split is not None and (axis is None or n.split.axis == axis):
                s = n.split
                out.add((s.axis, s.threshold if s.threshold is not None else tuple(sorted(s.subset))))
        return out

    # -- routing -----------------------------------------------------------
    def route(self, point) -> int:
        """Leaf key reached by one point (a vector over ``axes``)."""
        p = np.asarray(point, dtype=float)
        k = self.root
        while True:
            n = self.nodes[k]
            if n.is_leaf:
                return k
            k = n.left if n.split.goes_left(p[n.split.axis]) else n.right

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Leaf key for every row of an (n, n_axes) array."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0], dtype=np.int64)
        stack = [(self.root, np.arange(points.shape[0]))]
        while stack:
            k, idx = stack.pop()
            n = self.nodes[k]
            if n.is_leaf:
                out[idx] = k
                continue
            m = n.split.goes_left(points[idx, n.split.axis])
            stack.append((n.left, idx[m]))
            stack.append((n.right, idx[~m]))
        return out

    # -- identity ----------------------------------------------------------
    def leaf_by_id(self) -> dict[int, int]:
        """Map from original-leaf identifier to node key (fresh trees only)."""
        out = {}
        for k in self.leaves():
            for i in self.nodes[k].ids:
                out[i] = k
        return out

    def copy(self) -> "DecisionTree":
        return copy.deepcopy(self)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "axes": [a.to_dict() for a in self.axes],
            "root": self.root,
            "nodes": [self.nodes[k].to_dict(self.axes) for k in sorted(self.nodes)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DecisionTree":
        axes = tuple(Axis.from_dict(a) for a in d["axes"])
        nodes = {}
        for rec in d["nodes"]:
            pred = rec.get("predicate")
            nodes[int(rec["key"])] = Node(
                key=int(rec["key"]),
                split=None if pred is None else Split.from_dict(pred, axes),
                left=rec.get("left"),
                right=rec.get("right"),
                ids=frozenset(int(i) for i in rec.get("id_set", ())),
                effect=rec.get("effect"),
                n_treated=int(rec.get("n_treated", 0)),
                n_control=int(rec.get("n_control", 0)),
                fallback=bool(rec.get("fallback", False)),
            )
        tree = cls(nodes, int(d["root"]), axes)
        tree.validate()
        return tree

    @classmethod
    def from_json(cls, text: str) -> "DecisionTree":
        return cls.from_dict(json.loads(text))

    def describe(self) -> str:
        """Indented text rendering, one node per line."""
        lines = []

        def visit(k, depth, label):
            n = self.nodes[k]
            pad = "  " * depth
            if n.is_leaf:
                eff = "" if n.effect is None else f" effect={n.effect:.4g}"
                lines.append(f"{pad}{label}leaf id={format_ids(n.ids)}{eff}")
            else:
                lines.append(f"{pad}{label}[{n.split.describe(self.axes)}]")
                visit(n.left, depth + 1, "yes: ")
                visit(n.right, depth + 1, "no:  ")

        visit(self.root, 0, "")
        return "\n".join(lines)


def format_ids(ids) -> str:
    """Human-readable id set such as ``1∪4∪6``."""
    return "∪".join(str(i) for i in sorted(ids))


def leaf(key: int, ids=(), **kw) -> Node:
    return Node(key, ids=frozenset(ids), **kw)


def build_tree(spec, axes: Sequence[Axis]) -> DecisionTree:
    """Build a tree from a nested literal.

    ``spec`` is either an int (a leaf with that id) or a tuple
    ``(axis_name, threshold_or_labels, left_spec, right_spec)``; keys are
    assigned in preorder starting at 0.
    """
    axes = tuple(axes)
    names = [a.name for a in axes]
    nodes: dict[int, Node] = {}
    counter = [0]

    def make(s) -> int:
        k = counter[0]
        counter[0] += 1
        if isinstance(s, (int, np.integer)):
            nodes[k] = leaf(k, {int(s)})
            return k
        name, cut, lspec, rspec = s
        a = names.index(name)
        if axes[a].is_categorical:
            split = Split(a, subset=frozenset(axes[a].categories.index(c) for c in cut))
        else:
            split = Split(a, threshold=cut)
        nodes[k] = Node(k, split=split)
        nodes[k].left = make(lspec)
        nodes[k].right = make(rspec)
        return k

    root = make(spec)
    tree = DecisionTree(nodes, root, axes)
    tree.validate()
    return tree
