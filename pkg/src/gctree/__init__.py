"""Generalized causal trees for uplift modeling with continuous, ordinal and categorical treatments."""
from .causal_tree import GrowthConfig, grow_tree, honest_estimate, leaf_utility, summarize
from .data import (
    CONTROL,
    CsvSchema,
    DataError,
    Dataset,
    FeatureSpec,
    TreatmentDistribution,
    load_dataset,
    save_dataset,
    split_honest,
)
from .pipeline import (
    AllocationRule,
    GctModel,
    allocate,
    augment_control,
    derive_seed,
    draw_treatment,
    fit_gct,
    predict_effect,
)
from .simulation import BENCH_CONFIG, SimSetting, expected_response, generate, run_bench
from .transform import EffectTable, TransformError, cross_product_effects, remove_features
from .tree import Axis, CohortBox, DecisionTree, Interval, LabelSet, Split, TreeError, build_tree

__all__ = [
    "BENCH_CONFIG", "CONTROL", "AllocationRule", "Axis", "CohortBox", "CsvSchema", "DataError", "Dataset",
    "DecisionTree", "EffectTable", "FeatureSpec", "GctModel", "GrowthConfig", "Interval",
    "LabelSet", "SimSetting", "Split", "TransformError", "TreatmentDistribution", "TreeError", "allocate",
    "augment_control", "build_tree", "cross_product_effects", "derive_seed", "draw_treatment", "expected_response",
    "fit_gct", "generate", "grow_tree", "honest_estimate", "leaf_utility", "load_dataset", "predict_effect",
    "remove_features", "run_bench", "save_dataset", "split_honest", "summarize",
]
