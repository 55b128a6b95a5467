"""End-to-end generalized causal tree: augment, grow, estimate, rewrite, allocate."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .causal_tree import GrowthConfig, grow_tree, honest_estimate
from .data import (
    CONTROL,
    Dataset,
    FeatureSpec,
    KindError,
    TreatmentDistribution,
    decode_treatment,
    encode_treatment,
)
from .transform import EffectTable, cross_product_effects, remove_features
from .tree import DecisionTree, Interval, TreeError


class FallbackWarning(UserWarning):
    """A treatment was drawn from a cohort with no observed treatment values."""


def derive_seed(seed: int, *labels) -> int:
    """Deterministic sub-seed from a root seed and a label path."""
    text = ":".join([str(int(seed))] + [str(l) for l in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def augment_control(train: Dataset, dist: TreatmentDistribution, seed: int) -> Dataset:
    """Give every control row a Z drawn i.i.d. from ``dist``; treated rows keep theirs."""
    if len(dist) == 0:
        raise KindError("empty treatment distribution")
    rng = np.random.default_rng(seed)
    z = np.array(train.z, copy=True)
    ctrl = ~train.w
    z[ctrl] = dist.sample(int(ctrl.sum()), rng)
    return train.with_z(z)


@dataclass
class GctModel:
    joint_tree: DecisionTree
    x_tree: DecisionTree
    z_tree: DecisionTree
    effect_table: EffectTable
    treatment_dist: TreatmentDistribution
    config: GrowthConfig
    features: tuple[FeatureSpec, ...]
    augmentation_seeds: tuple[int, int] = (0, 0)

    @property
    def treatment_kind(self) -> str:
        return self.treatment_dist.kind

    @property
    def treatment_labels(self) -> tuple[str, ...]:
        return self.treatment_dist.labels

    # -- encoding helpers --------------------------------------------------
    def encode_x(self, x) -> np.ndarray:
        if len(x) != len(self.features):
            raise TreeError(f"expected {len(self.features)} covariates, got {len(x)}")
        out = np.empty(len(self.features))
        for j, (v, spec) in enumerate(zip(x, self.features)):
            if spec.kind == "categorical" and isinstance(v, str):
                if v not in spec.categories:
                    raise TreeError(f"unknown label {v!r} for {spec.name!r}")
                out[j] = spec.categories.index(v)
            else:
                out[j] = float(v)
        return out

    def encode_z(self, z) -> float:
        if isinstance(z, (float, np.floating)) and self.treatment_kind != "categorical":
            return float(z)
        return encode_treatment(z, self.treatment_kind, self.treatment_labels)

    def _points(self, X: np.ndarray, zcodes: np.ndarray | float = math.nan) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.features):
            raise TreeError(f"expected {len(self.features)} covariate columns, got {X.shape[1]}")
        zc = np.broadcast_to(np.asarray(zcodes, dtype=float), (X.shape[0],))
        return np.column_stack([X, zc])

    # -- cohort lookup -----------------------------------------------------
    def x_cohorts(self, X: np.ndarray) -> np.ndarray:
        """Row index into the effect table for each covariate row."""
        keys = self.x_tree.apply(self._points(X))
        pos = {k: i for i, k in enumerate(self.effect_table.x_leaf_keys)}
        return np.array([pos[k] for k in keys], dtype=int)

    def z_cohorts(self, zcodes) -> np.ndarray:
        zcodes = np.atleast_1d(np.asarray(zcodes, dtype=float))
        pts = np.column_stack([np.zeros((zcodes.size, len(self.features))), zcodes])
        keys = self.z_tree.apply(pts)
        pos = {k: j for j, k in enumerate(self.effect_table.z_leaf_keys)}
        return np.array([pos[k] for k in keys], dtype=int)

    def predict(self, X: np.ndarray, zcodes) -> np.ndarray:
        """Vectorised effect lookup for covariate rows and treatment codes."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        zcodes = np.broadcast_to(np.asarray(zcodes, dtype=float), (X.shape[0],))
        return self.effect_table.effects[self.x_cohorts(X), self.z_cohorts(zcodes)]

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "gct-model/1",
            "config": self.config.to_dict(),
            "augmentation_seeds": list(self.augmentation_seeds),
            "features": [
                {"name": f.name, "kind": f.kind, "categories": list(f.categories)}
                for f in self.features
            ],
            "treatment": {
                "kind": self.treatment_kind,
                "labels": list(self.treatment_labels),
                "values": [float(v) for v in self.treatment_dist.values],
            },
            "joint_tree": self.joint_tree.to_dict(),
            "x_tree": self.x_tree.to_dict(),
            "z_tree": self.z_tree.to_dict(),
            "effect_table": self.effect_table.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GctModel":
        joint = DecisionTree.from_dict(d["joint_tree"])
        tr = d["treatment"]
        return cls(
            joint_tree=joint,
            x_tree=DecisionTree.from_dict(d["x_tree"]),
            z_tree=DecisionTree.from_dict(d["z_tree"]),
            effect_table=EffectTable.from_dict(d["effect_table"], joint.axes),
            treatment_dist=TreatmentDistribution(tr["values"], tr["kind"], tr["labels"]),
            config=GrowthConfig(**d["config"]),
            features=tuple(
                FeatureSpec(f["name"], f["kind"], tuple(f.get("categories", ())))
                for f in d["features"]
            ),
            augmentation_seeds=tuple(d.get("augmentation_seeds", (0, 0))),
        )

    @classmethod
    def from_json(cls, text: str) -> "GctModel":
        return cls.from_dict(json.loads(text))


def fit_gct(
    train: Dataset,
    estimation: Dataset | None = None,
    config: GrowthConfig = GrowthConfig(),
) -> GctModel:
    """Fit the joint (X, Z) causal tree and derive the cross-product effect table.

    Control rows of both datasets receive Z values drawn from the training
    treated arm's empirical distribution, using independent seed streams.
    With ``config.honest`` false (or no estimation data), leaf effects are
    estimated on the training rows.
    """
    if estimation is not None and estimation.features != train.features:
        raise TreeError("training and estimation schemas differ")
    dist = train.treatment_distribution()
    s_train = derive_seed(config.seed, "augment", "training")
    s_est = derive_seed(config.seed, "augment", "estimation")
    train_aug = augment_control(train, dist, s_train)
    joint = grow_tree(train_aug, include_z_axis=True, config=config)
    if config.honest and estimation is not None:
        est_aug = augment_control(estimation, dist, s_est)
        joint = honest_estimate(joint, est_aug)
    else:
        joint = honest_estimate(joint, train_aug)
    x_tree = remove_features(joint, [joint.z_axis])
    z_tree = remove_features(joint, joint.feature_axes)
    table = cross_product_effects(joint, x_tree, z_tree)
    return GctModel(joint, x_tree, z_tree, table, dist, config, train.features, (s_train, s_est))


def predict_effect(model: GctModel, x, z) -> float:
    """Estimated effect of treatment value ``z`` for covariates ``x``."""
    xv = model.encode_x(x)
    zc = model.encode_z(z)
    return float(model.predict(xv[None, :], zc)[0])


# ---------------------------------------------------------------------------
# Allocation


@dataclass(frozen=True)
class Decision:
    cohort: int
    column: int | None
    effect: float

    @property
    def is_control(self) -> bool:
        return self.column is None


@dataclass
class AllocationRule:
    decisions: list[Decision]

    def __getitem__(self, i: int) -> Decision:
        return self.decisions[i]

    def __len__(self) -> int:
        return len(self.decisions)

    def to_dict(self, model: GctModel | None = None) -> dict:
        rows = []
        for d in self.decisions:
            rec = {"cohort": d.cohort, "column": d.column, "effect": d.effect}
            if model is not None:
                t = model.effect_table
                rec["x_cohort"] = t.x_partition[d.cohort].describe(t.x_axes)
                rec["treatment_cohort"] = (
                    "control" if d.column is None else t.z_partition[d.column].describe(t.z_axes)
                )
            rows.append(rec)
        return {"decisions": rows}


def allocate(model: GctModel) -> AllocationRule:
    """Best Z-cohort per X-cohort when its effect is positive, control otherwise."""
    eff = model.effect_table.effects
    out = []
    for i in range(eff.shape[0]):
        row = np.where(np.isnan(eff[i]), -np.inf, eff[i])
        j = int(np.argmax(row))
        if row[j] > 0:
            out.append(Decision(i, j, float(row[j])))
        else:
            out.append(Decision(i, None, float(row[j]) if np.isfinite(row[j]) else math.nan))
    return AllocationRule(out)


def _cohort_values(model: GctModel, column: int) -> np.ndarray:
    gamma = model.effect_table.z_partition[column]
    z = model.joint_tree.z_axis
    return model.treatment_dist.values[gamma.get(z).contains(model.treatment_dist.values)]


def _fallback_value(model: GctModel, column: int) -> float:
    gamma = model.effect_table.z_partition[column].get(model.joint_tree.z_axis)
    if model.treatment_kind != "continuous" or not isinstance(gamma, Interval):
        raise KindError(f"treatment cohort {column + 1} holds no observed treatment value")
    vals = model.treatment_dist.values
    lo = gamma.lower if math.isfinite(gamma.lower) else float(vals.min())
    hi = gamma.upper if math.isfinite(gamma.upper) else float(vals.max())
    warnings.warn(
        f"treatment cohort {column + 1} has no observed values; using midpoint",
        FallbackWarning,
        stacklevel=3,
    )
    return (lo + hi) / 2.0


def draw_treatment(rule: AllocationRule, model: GctModel, x, seed: int, draw_index: int = 0):
    """Draw a treatment for covariates ``x`` from the allocated cohort.

    The draw is a function of (X-cohort, seed, draw_index).
    """
    i = int(model.x_cohorts(model.encode_x(x)[None, :])[0])
    d = rule[i]
    if d.is_control:
        return CONTROL
    vals = _cohort_values(model, d.column)
    if vals.size == 0:
        code = _fallback_value(model, d.column)
    else:
        rng = np.random.default_rng(derive_seed(seed, "draw", i, draw_index))
        code = float(vals[rng.integers(0, vals.size)])
    return decode_treatment(code, model.treatment_kind, model.treatment_labels)


def draw_treatments(
    rule: AllocationRule, model: GctModel, X: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Vectorised draws: treatment codes per row, NaN for control."""
    cohorts = model.x_cohorts(X)
    out = np.full(len(cohorts), np.nan)
    for i in np.unique(cohorts):
        d = rule[int(i)]
        if d.is_control:
            continue
        rows = np.flatnonzero(cohorts == i)
        vals = _cohort_values(model, d.column)
        if vals.size == 0:
            out[rows] = _fallback_value(model, d.column)
        else:
            out[rows] = vals[rng.integers(0, vals.size, size=rows.size)]
    return out
