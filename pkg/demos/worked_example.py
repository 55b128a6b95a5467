"""Rewrite a 13-leaf joint tree into X cohorts, Z cohorts and an effect table.

Run: python3 demos/worked_example.py
"""
from gctree import Axis, build_tree, cross_product_effects, remove_features

axes = (Axis("X1"), Axis("X2"), Axis("Z"))
# (axis, threshold, left, right); a bare integer is a leaf, numbered left to right
spec = (
    "X1", 1,
    ("Z", 5,
        ("X2", 3, ("X1", 0, 1, 2), 3),
        ("Z", 10, ("X2", 2, 4, 5), 6)),
    ("X2", 4,
        ("Z", 3, ("X2", 1, 7, ("Z", 2, 8, 9)), 10),
        ("X1", 5, ("Z", 7, 11, 12), 13)),
)
joint = build_tree(spec, axes)
for k in joint.leaves():
    (i,) = joint[k].ids
    joint[k].effect = i / 10  # stand-in estimates so the table is readable

print("joint tree")
print(joint.describe())

x_tree = remove_features(joint, ["Z"])
print("\nX cohorts (super-cohort id sets)")
print(x_tree.describe())

z_tree = remove_features(joint, ["X1", "X2"])
print("\nZ cohorts")
print(z_tree.describe())

table = cross_product_effects(joint, x_tree, z_tree)
print("\neffect table: each cell names the joint leaf it comes from")
print(table.render())
