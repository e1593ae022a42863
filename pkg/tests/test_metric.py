import numpy as np
import pytest

from eqsearch.metric import TreeDistanceConfig, tree_distance, tree_score
from eqsearch.tree import (
    ExpressionTree,
    Node,
    NodeKind,
    VariableSchema,
    binary,
    constant,
    parse,
    random_tree,
    unary,
    variable,
)

from oracles import brute_distance, restricted_trees

XY = VariableSchema.simple(["x", "y"])


def t(node):
    return ExpressionTree(node)


def _swap_commutative(node: Node, rng) -> Node:
    children = tuple(_swap_commutative(c, rng) for c in node.children)
    if node.kind is NodeKind.BINARY and node.op in ("add", "mul") and rng.random() < 0.5:
        children = (children[1], children[0])
    return Node(node.kind, op=node.op, value=node.value, var_index=node.var_index,
                children=children)


class TestDistanceExamples:
    def test_identical_trees(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            tree = random_tree(rng, 2, max_depth=4)
            assert tree_distance(tree, tree) == 0.0

    def test_commutative_swap_is_zero(self):
        assert tree_distance(parse("x + y", XY), parse("y + x", XY)) == 0.0

    def test_numeric_leaf_rule(self):
        # min(alpha * |2 - 3|, 1) with alpha 0.5
        cfg = TreeDistanceConfig(alpha=0.5)
        assert tree_distance(t(constant(2.0)), t(constant(3.0)), cfg) == 0.5

    def test_numeric_leaf_cap(self):
        cfg = TreeDistanceConfig(alpha=1.0)
        assert tree_distance(t(constant(0.0)), t(constant(50.0)), cfg) == 1.0

    def test_differing_variables(self):
        assert tree_distance(t(variable(0)), t(variable(1))) == 1.0

    def test_constant_vs_variable(self):
        assert tree_distance(t(constant(1.0)), t(variable(0))) == 1.0

    def test_leaf_vs_internal_counts_subtree(self):
        # mismatched node costs 1 plus one per remaining unmatched node
        internal = parse("x + y", XY)
        assert tree_distance(t(variable(0)), internal) == 3.0

    def test_different_operators_recurse_positionally(self):
        a = parse("x + y", XY)
        b = parse("x - y", XY)
        assert tree_distance(a, b) == 1.0

    def test_unary_vs_binary_arity_mismatch(self):
        a = t(unary("cos", variable(0)))
        b = parse("x + y", XY)
        # operator mismatch 1, positional child x~x 0, extra leaf y 1
        assert tree_distance(a, b) == 2.0

    def test_cross_matching_is_minimal(self):
        a = parse("(x * x) + y", XY)
        b = parse("y + (x * x)", XY)
        assert tree_distance(a, b) == 0.0


class TestScoreExamples:
    def test_self_score(self):
        gt = parse("(2 * 9.81 * x) ^ 0.5", XY)
        assert tree_score(gt, gt) == 1.0

    def test_commutative_equivalence(self):
        assert tree_score(parse("x + y", XY), parse("y + x", XY)) == 1.0

    def test_single_constant_nodes(self):
        cfg = TreeDistanceConfig(alpha=0.5, normalize=True)
        assert tree_score(t(constant(2.0)), t(constant(3.0)), cfg) == 0.5

    def test_unnormalized_score(self):
        cfg = TreeDistanceConfig(alpha=0.5, normalize=False)
        assert tree_score(t(constant(2.0)), t(constant(3.0)), cfg) == 0.5
        big_a = parse("x + y", XY)
        big_b = parse("x * x", XY)
        assert tree_score(big_a, big_b, cfg) == 0.0  # clamped at zero

    def test_bounds_on_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a = random_tree(rng, 2, max_depth=4)
            b = random_tree(rng, 2, max_depth=4)
            s = tree_score(a, b)
            assert 0.0 <= s <= 1.0
            if tree_distance(a, b) > 0:
                assert s < 1.0


class TestProperties:
    def test_symmetry(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            a = random_tree(rng, 2, max_depth=4)
            b = random_tree(rng, 2, max_depth=4)
            assert tree_distance(a, b) == tree_distance(b, a)

    def test_swap_invariance_against_reference(self):
        rng = np.random.default_rng(12)
        reference = parse("(x + y) * (x - 2)", XY)
        for _ in range(200):
            tree = random_tree(rng, 2, max_depth=4)
            swapped = ExpressionTree(_swap_commutative(tree.root, rng))
            assert tree_distance(tree, reference) == tree_distance(swapped, reference)
            assert tree_score(tree, swapped) == 1.0

    def test_matches_bruteforce_on_random_pairs(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            a = random_tree(rng, 2, max_depth=3)
            b = random_tree(rng, 2, max_depth=3)
            assert tree_distance(a, b) == pytest.approx(brute_distance(a.root, b.root), abs=1e-12)

    def test_matches_bruteforce_on_restricted_grammar_sample(self):
        trees = restricted_trees(4)
        for a in trees[::3]:
            for b in trees[::7]:
                got = tree_distance(ExpressionTree(a), ExpressionTree(b))
                assert got == pytest.approx(brute_distance(a, b), abs=1e-12)


class TestConfig:
    def test_alpha_range(self):
        with pytest.raises(ValueError):
            TreeDistanceConfig(alpha=1.5)
        with pytest.raises(ValueError):
            TreeDistanceConfig(alpha=-0.1)
