import json

import numpy as np
import pytest

from gctree.transform import (
    EffectTable,
    TransformError,
    cross_product_effects,
    merge_leaf_and_nonleaf,
    merge_leaves,
    merge_nonleaves,
    remove_features,
)
from gctree.tree import Axis, build_tree, format_ids

import helpers
from helpers import (
    EFFECT_GRID,
    LEAF_REGIONS,
    X_COHORTS,
    Z_COHORTS,
    appendix_tree,
    random_axes,
    random_tree,
    region_of,
    structural_failures,
)

AXES3 = (Axis("A"), Axis("B"), Axis("Z"))


def leaf_ids(tree):
    return [set(tree[k].ids) for k in tree.leaves()]


def node_with_split(tree, axis_name, threshold):
    a = [x.name for x in tree.axes].index(axis_name)
    (k,) = [k for k, n in tree.nodes.items() if n.split and n.split.axis == a and n.split.threshold == threshold]
    return k


# -- worked example ---------------------------------------------------------------


def test_worked_example_leaf_regions():
    t = appendix_tree()
    boxes = t.boxes()
    got = {next(iter(t[k].ids)): region_of(boxes[k], ("X1", "X2", "Z")) for k in t.leaves()}
    assert got == LEAF_REGIONS


def test_removing_z_gives_the_nine_x_cohorts():
    x_tree = remove_features(appendix_tree(), ["Z"])
    boxes = x_tree.boxes()
    got = [(set(x_tree[k].ids), region_of(boxes[k], ("X1", "X2"))) for k in x_tree.leaves()]
    assert got == X_COHORTS
    assert "1∪4∪6" == format_ids(x_tree[x_tree.leaves()[0]].ids)


def test_removing_x_gives_the_six_z_cohorts():
    z_tree = remove_features(appendix_tree(), ["X1", "X2"])
    boxes = z_tree.boxes()
    got = [region_of(boxes[k], ("Z",))["Z"] for k in z_tree.leaves()]
    assert got == Z_COHORTS


def test_cross_product_grid():
    t = appendix_tree()
    table = cross_product_effects(t, remove_features(t, ["Z"]), remove_features(t, ["X1", "X2"]))
    assert table.shape == (9, 6)
    assert table.source_leaf.tolist() == EFFECT_GRID
    assert np.allclose(table.effects, np.array(EFFECT_GRID) / 10)
    assert table.anomalies == []
    assert table.counts[0, 3].tolist() == [40, 41]
    text = table.render()
    assert "L13" in text and "P9" in text and "G6" in text


def test_effect_table_json_round_trip():
    t = appendix_tree()
    table = cross_product_effects(t, remove_features(t, ["Z"]), remove_features(t, ["X1", "X2"]))
    back = EffectTable.from_dict(json.loads(table.to_json()), t.axes)
    assert back.to_json() == table.to_json()
    assert back.x_partition == table.x_partition and back.z_partition == table.z_partition


# -- the three merges -------------------------------------------------------------


def test_merge_leaves_unions_ids():
    t = build_tree(("A", 1, 1, 2), AXES3)
    out = merge_leaves(t, t.root)
    assert len(out) == 1 and out[out.root].ids == {1, 2}
    t[1].ids, t[2].ids = frozenset({1, 2}), frozenset({2, 3})
    assert merge_leaves(t, t.root)[t.root].ids == {1, 2, 3}


def test_merge_leaves_rejects_nonleaf_child():
    t = build_tree(("A", 1, ("B", 2, 1, 2), 3), AXES3)
    with pytest.raises(TransformError):
        merge_leaves(t, t.root)
    with pytest.raises(TransformError):
        merge_nonleaves(t, t.root)
    with pytest.raises(TransformError):
        merge_leaf_and_nonleaf(build_tree(("A", 1, 1, 2), AXES3), 0)


def test_leaf_and_nonleaf_step_one():
    t = appendix_tree(False)
    out = merge_leaf_and_nonleaf(t, node_with_split(t, "Z", 10))
    assert leaf_ids(out)[3:5] == [{4, 6}, {5, 6}]
    assert len(out.leaves()) == 12


def test_leaf_id_reaches_deep_leaves():
    t = build_tree(("Z", 5, ("A", 1, ("B", 2, 1, 2), 3), 4), AXES3)
    out = merge_leaf_and_nonleaf(t, t.root)
    assert leaf_ids(out) == [{1, 4}, {2, 4}, {3, 4}]
    t = build_tree(("Z", 5, 1, ("A", 1, 2, 3)), AXES3)
    assert leaf_ids(merge_leaf_and_nonleaf(t, t.root)) == [{1, 2}, {1, 3}]


def test_nonleaves_step_two_prunes_contradiction():
    t = appendix_tree(False)
    t = merge_leaf_and_nonleaf(t, node_with_split(t, "Z", 10))
    out = merge_nonleaves(t, node_with_split(t, "Z", 5))
    assert leaf_ids(out)[:5] == [{1, 4, 6}, {1, 5, 6}, {2, 4, 6}, {2, 5, 6}, {3, 5, 6}]


def test_graft_with_disjoint_axes_multiplies_leaves():
    t = build_tree(("Z", 5, ("A", 1, 1, 2), ("B", 2, 3, 4)), AXES3)
    out = merge_nonleaves(t, t.root)
    assert leaf_ids(out) == [{1, 3}, {1, 4}, {2, 3}, {2, 4}]


def test_graft_cascading_prune():
    # right sub-tree repeats the left cut twice; both copies must collapse
    t = build_tree(("Z", 5, ("A", 3, 1, 2), ("A", 3, ("A", 1, 3, 4), 5)), AXES3)
    out = merge_nonleaves(t, t.root)
    assert leaf_ids(out) == [{1, 3}, {1, 4}, {2, 5}]
    assert all(not out.box(k).is_empty() for k in out.leaves())


def test_remove_nothing_returns_tree_unchanged():
    t = appendix_tree()
    no_z = remove_features(t, ["Z"])
    again = remove_features(no_z, ["Z"])
    assert again.to_json() == no_z.to_json()
    t2 = build_tree(("A", 1, 1, 2), AXES3)
    t2[1].effect = 0.3
    assert remove_features(t2, ["Z"]).to_json() == t2.to_json()


def test_remove_unknown_axis():
    with pytest.raises(TransformError):
        remove_features(appendix_tree(), ["W"])


def test_no_z_split_gives_single_z_column():
    t = build_tree(("A", 1, 1, ("B", 2, 2, 3)), AXES3)
    for i, k in enumerate(t.leaves()):
        t[k].effect = float(i)
    table = cross_product_effects(t, remove_features(t, ["Z"]), remove_features(t, ["A", "B"]))
    assert table.shape == (3, 1)
    assert table.effects[:, 0].tolist() == [0.0, 1.0, 2.0]


def test_input_tree_is_not_mutated():
    t = appendix_tree()
    before = t.to_json()
    remove_features(t, ["Z"])
    remove_features(t, ["X1", "X2"])
    assert t.to_json() == before


# -- random small trees ----------------------------------------------------------


@pytest.mark.parametrize("seed", range(4))
def test_structural_properties_random_trees(seed):
    rng = np.random.default_rng(1000 + seed)
    for _ in range(40):
        tree = random_tree(rng, random_axes(rng))
        assert structural_failures(tree, rng) == []


def test_structural_properties_with_categorical_axis():
    rng = np.random.default_rng(77)
    for _ in range(40):
        tree = random_tree(rng, random_axes(rng, with_categorical=True), max_depth=5)
        assert structural_failures(tree, rng) == []


def test_oracle_detects_a_corrupted_id_set():
    rng = np.random.default_rng(5)
    tree = random_tree(rng, random_axes(rng, False), max_depth=3, p_leaf=0.0)
    out = remove_features(tree, {tree.z_axis})
    k = out.leaves()[0]
    out[k].ids = out[k].ids | {999}
    pts = helpers.lattice(tree.axes, keep=tree.feature_axes)
    sig = helpers.id_signatures(tree, pts, [tree.z_axis])
    routed = out.apply(pts)
    assert any(sig[i] != out[r].ids for i, r in enumerate(routed))
