"""Fit, inspect and apply a model on one simulated continuous-dose replication.

Run: python3 demos/continuous_walkthrough.py
"""
import numpy as np

from gctree import GrowthConfig, allocate, fit_gct, split_honest
from gctree.pipeline import draw_treatments
from gctree.simulation import SimSetting, evaluate_outcome, generate, oracle_effect

setting = SimSetting("continuous", n=1000)
train, test_X = generate(setting, rep_seed=0)
tr, est = split_honest(train, 0.5, seed=0)

model = fit_gct(tr, est, GrowthConfig(max_depth=6, min_arm_samples_leaf=5, seed=0))
print(f"joint tree: {len(model.joint_tree.leaves())} leaves")
print(f"effect table: {model.effect_table.shape[0]} X cohorts x {model.effect_table.shape[1]} dose cohorts")
cuts = sorted(t for _, t in model.z_tree.predicates(model.z_tree.z_axis))
print("dose cut points:", ", ".join(f"{t:.3f}" for t in cuts), "(true breakpoints 0.3, 0.5, 0.7)")

rule = allocate(model)
x_leaves = model.x_tree.leaves()
print("first five X cohorts and their allocation:")
for d in rule.decisions[:5]:
    what = "control" if d.is_control else f"dose cohort {d.column + 1} (effect {d.effect:.2f})"
    print(f"  {model.x_tree.box(x_leaves[d.cohort]).describe()}: {what}")

codes = draw_treatments(rule, model, test_X, np.random.default_rng(1))
print(f"\naverage test outcome, GCT allocation: {evaluate_outcome(codes, setting, test_X, 0):.3f}")
_, best = oracle_effect("continuous", test_X)
print(f"average test outcome, oracle:         {evaluate_outcome(best, setting, test_X, 0):.3f}")
print(f"predicted effect at x=(0.8, 0.8), dose 0.2: {model.predict(np.array([[0.8, 0.8]]), 0.2)[0]:.2f}"
      " (true value 9.97)")
