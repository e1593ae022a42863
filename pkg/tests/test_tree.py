import math

import numpy as np
import pytest

from eqsearch.tree import (
    OPERATORS,
    ExpressionSyntaxError,
    ExpressionTree,
    Node,
    NodeKind,
    UnknownIdentifierError,
    VariableSchema,
    binary,
    canonical_key,
    constant,
    depth,
    evaluate,
    evaluate_batch,
    parse,
    random_tree,
    render,
    size,
    unary,
    variable,
)

XY = VariableSchema.simple(["x", "y"])


def t(node):
    return ExpressionTree(node)


class TestEvaluate:
    def test_constant_leaf(self):
        assert evaluate(t(constant(3.5)), []) == (3.5, False)

    def test_identity_arithmetic(self):
        tree = t(binary("add", variable(0), constant(1.0)))
        assert evaluate(tree, [2.0]) == (3.0, False)

    def test_protected_division(self):
        tree = t(binary("div", constant(1.0), constant(0.0)))
        assert evaluate(tree, []) == (1.0, False)

    def test_protected_division_threshold(self):
        tree = parse("1 / x", XY)
        value, degenerate = evaluate(tree, [1e-12, 0.0])
        assert value == 1.0 and not degenerate
        value, _ = evaluate(tree, [1e-3, 0.0])
        assert value == pytest.approx(1e3)

    def test_protected_log(self):
        assert evaluate(parse("log(x)", XY), [0.0, 0.0]) == (0.0, False)
        value, _ = evaluate(parse("log(x)", XY), [-math.e, 0.0])
        assert value == pytest.approx(1.0)

    def test_pow_clamps_magnitude(self):
        value, degenerate = evaluate(parse("10 ^ x", XY), [20.0, 0.0])
        assert value == 1e12 and not degenerate

    def test_nonfinite_becomes_sentinel(self):
        value, degenerate = evaluate(parse("exp(exp(x))", XY), [10.0, 0.0])
        assert value == 0.0 and degenerate

    def test_negative_base_fractional_pow_flagged(self):
        value, degenerate = evaluate(parse("x ^ 0.5", XY), [-4.0, 0.0])
        assert value == 0.0 and degenerate

    def test_batch_shape_and_flag(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        values, degenerate = evaluate_batch(parse("x + y", XY), X)
        assert values.tolist() == [3.0, 7.0, 11.0]
        assert degenerate is False

    def test_row_too_short(self):
        with pytest.raises(ValueError):
            evaluate(parse("x + y", XY), [1.0])


class TestSizeDepth:
    def test_single_constant(self):
        assert size(t(constant(2.0))) == 1

    def test_three_nodes(self):
        assert size(t(binary("add", variable(0), constant(1.0)))) == 3

    def test_five_nodes(self):
        tree = t(binary("mul", constant(0.5), binary("mul", variable(0), variable(0))))
        assert size(tree) == 5

    def test_size_recurrence(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            tree = random_tree(rng, 3, max_depth=4)
            root = tree.root
            assert size(tree) == 1 + sum(size(c) for c in root.children)

    def test_depth_of_leaf_is_zero(self):
        assert depth(t(variable(0))) == 0
        assert depth(t(binary("add", variable(0), constant(1.0)))) == 1


class TestParse:
    def test_left_associative_chain(self):
        gh = VariableSchema.simple(["g", "h"])
        tree = parse("2*g*h", gh)
        assert tree.root == binary("mul", binary("mul", constant(2.0), variable(0)), variable(1))

    def test_wave_phase(self):
        schema = VariableSchema.simple(["k", "x", "w", "t"])
        tree = parse("cos(k*x - w*t)", schema)
        expected = unary(
            "cos",
            binary(
                "sub",
                binary("mul", variable(0), variable(1)),
                binary("mul", variable(2), variable(3)),
            ),
        )
        assert tree.root == expected

    def test_unknown_identifier(self):
        with pytest.raises(UnknownIdentifierError) as err:
            parse("foo(x)", XY)
        assert "foo" in str(err.value)

    def test_syntax_error_carries_position(self):
        with pytest.raises(ExpressionSyntaxError) as err:
            parse("x + ", XY)
        assert err.value.position == 4

    def test_unexpected_character(self):
        with pytest.raises(ExpressionSyntaxError):
            parse("x ? y", XY)

    def test_trailing_input_rejected(self):
        with pytest.raises(ExpressionSyntaxError):
            parse("x 1", XY)

    def test_power_is_right_associative(self):
        tree = parse("2^3^2", XY)
        assert tree.root == binary("pow", constant(2.0), binary("pow", constant(3.0), constant(2.0)))

    def test_subtraction_is_left_associative(self):
        tree = parse("x - y - 1", XY)
        assert tree.root == binary("sub", binary("sub", variable(0), variable(1)), constant(1.0))

    def test_unary_minus_binds_below_power(self):
        tree = parse("-x^2", XY)
        assert tree.root == unary("neg", binary("pow", variable(0), constant(2.0)))

    def test_unary_minus_binds_above_mul(self):
        tree = parse("-x*y", XY)
        assert tree.root == binary("mul", unary("neg", variable(0)), variable(1))

    def test_minus_before_literal_is_negative_constant(self):
        tree = parse("2 * -3.5", XY)
        assert tree.root == binary("mul", constant(2.0), constant(-3.5))

    def test_scientific_notation(self):
        assert parse("1.5e-3", XY).root == constant(1.5e-3)


class TestRender:
    def test_simple_sum(self):
        tree = t(binary("add", variable(0), constant(1.0)))
        assert render(tree, XY) == "(x + 1)"

    def test_negation(self):
        assert render(t(unary("neg", variable(0))), XY) == "(-(x))"

    def test_var_index_out_of_range(self):
        with pytest.raises(ValueError):
            render(t(variable(5)), XY)

    def test_roundtrip_random_trees(self):
        # parse(render(t)) must rebuild a structurally identical tree
        rng = np.random.default_rng(42)
        schema = VariableSchema.simple(["a", "b", "c"])
        for _ in range(1000):
            tree = random_tree(rng, 3, OPERATORS, max_depth=5)
            again = parse(render(tree, schema), schema)
            assert again.root == tree.root

    def test_roundtrip_negative_constant(self):
        tree = t(constant(-1.53))
        assert parse(render(tree, XY), XY).root == tree.root

    def test_roundtrip_17_digits(self):
        tree = t(constant(9.81))
        text = render(tree, XY)
        assert parse(text, XY).root.value == 9.81


def _swap_commutative(node: Node, rng) -> Node:
    children = tuple(_swap_commutative(c, rng) for c in node.children)
    if node.kind is NodeKind.BINARY and node.op in ("add", "mul") and rng.random() < 0.5:
        children = (children[1], children[0])
    return Node(node.kind, op=node.op, value=node.value, var_index=node.var_index,
                children=children)


class TestCanonicalKey:
    def test_commutative_addition(self):
        a = parse("x + y", XY)
        b = parse("y + x", XY)
        assert canonical_key(a) == canonical_key(b)

    def test_subtraction_is_ordered(self):
        assert canonical_key(parse("x - y", XY)) != canonical_key(parse("y - x", XY))

    def test_recursive_reordering(self):
        schema = VariableSchema.simple(["a", "b", "c"])
        lhs = parse("(b + a) * c", schema)
        rhs = parse("c * (a + b)", schema)
        assert canonical_key(lhs) == canonical_key(rhs)

    def test_key_invariant_under_random_swaps(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            tree = random_tree(rng, 3, OPERATORS, max_depth=4)
            swapped = ExpressionTree(_swap_commutative(tree.root, rng))
            assert canonical_key(tree) == canonical_key(swapped)

    def test_constants_rounded_to_12_digits(self):
        a = t(constant(0.1234567890123456))
        b = t(constant(0.1234567890123999))
        assert canonical_key(a) == canonical_key(b)


class TestRandomTree:
    def test_respects_depth_cap(self):
        rng = np.random.default_rng(3)
        for d in range(5):
            for _ in range(20)                :
                assert depth(random_tree(rng, 2, max_depth=d)) <= d

    def test_respects_operator_subset(self):
        rng = np.random.default_rng(4)
        ops = frozenset({"add", "mul"})
        for _ in range(50):
            tree = random_tree(rng, 2, ops, max_depth=4)
            for node in [tree.root, *tree.root.children]:
                if node.op is not None:
                    assert node.op in ops

    def test_empty_operator_set_rejected(self):
        with pytest.raises(ValueError):
            random_tree(np.random.default_rng(0), 2, frozenset(), max_depth=2)


class TestNodeValidation:
    def test_nonfinite_constant_rejected(self):
        with pytest.raises(ValueError):
            constant(math.inf)

    def test_arity_enforced(self):
        with pytest.raises(ValueError):
            Node(NodeKind.BINARY, op="add", children=(constant(1.0),))
        with pytest.raises(ValueError):
            Node(NodeKind.UNARY, op="sin", children=())

    def test_unknown_operator_rejected(self):
        with pytest.raises(ValueError):
            Node(NodeKind.UNARY, op="tan", children=(constant(1.0),))


class TestVariableSchema:
    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            VariableSchema(("a", "b"), ("1",), ("", ""))

    def test_duplicate_names(self):
        with pytest.raises(ValueError):
            VariableSchema.simple(["a", "a"])

    def test_dict_roundtrip(self):
        schema = VariableSchema(("m", "t"), ("kg", "s"), ("mass", "time"))
        assert VariableSchema.from_dict(schema.to_dict()) == schema
