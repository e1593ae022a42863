"""Structural distance and similarity score between expression trees.

Two trees are compared simultaneously from the root.  Matching is positional
except under a shared commutative operator (add, mul), where the child
pairing with the minimum total distance is chosen.  The derived score maps
distance into [0, 1] with 1 meaning structural equivalence up to
commutativity.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

from .tree import COMMUTATIVE_OPS, ExpressionTree, Node, NodeKind, size

__all__ = ["TreeDistanceConfig", "tree_distance", "tree_score"]


@dataclass(frozen=True)
class TreeDistanceConfig:
    """``alpha`` scales the distance between differing numeric leaves
    (capped at one); ``normalize`` divides the summed distance by the larger
    tree size before scoring."""

    alpha: float = 0.5
    normalize: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


def _leaf_distance(a: Node, b: Node, alpha: float) -> float:
    if a.kind is NodeKind.CONSTANT and b.kind is NodeKind.CONSTANT:
        return min(alpha * abs(a.value - b.value), 1.0)
    if a.kind is NodeKind.VARIABLE and b.kind is NodeKind.VARIABLE:
        return 0.0 if a.var_index == b.var_index else 1.0
    return 1.0


def _match_children(
    xs: tuple[Node, ...], ys: tuple[Node, ...], alpha: float, allow_swap: bool
) -> float:
    if not allow_swap:
        matched = min(len(xs), len(ys))
        total = sum(_node_distance(xs[i], ys[i], alpha) for i in range(matched))
        total += sum(size(extra) for extra in xs[matched:])
        total += sum(size(extra) for extra in ys[matched:])
        return total
    small, big = (xs, ys) if len(xs) <= len(ys) else (ys, xs)
    best = None
    for assignment in permutations(range(len(big)), len(small)):
        total = sum(
            _node_distance(small[i], big[j], alpha) for i, j in enumerate(assignment)
        )
        total += sum(size(big[j]) for j in range(len(big)) if j not in assignment)
        if best is None or total < best:
            best = total
    return best


def _node_distance(a: Node, b: Node, alpha: float) -> float:
    a_leaf = a.is_leaf
    b_leaf = b.is_leaf
    if a_leaf and b_leaf:
        return _leaf_distance(a, b, alpha)
    if a_leaf or b_leaf:
        # Mismatched node costs 1; every further node of the unmatched
        # subtree costs 1, so pruning a large subtree is penalized more
        # than pruning a leaf.
        internal = b if a_leaf else a
        return float(size(internal))
    base = 0.0 if a.op == b.op else 1.0
    # Child order is free on the commutative side of a match, so a recursive
    # swap of add/mul children can never change the distance.
    allow_swap = a.op in COMMUTATIVE_OPS or b.op in COMMUTATIVE_OPS
    return base + _match_children(a.children, b.children, alpha, allow_swap)


def tree_distance(
    a: ExpressionTree, b: ExpressionTree, cfg: TreeDistanceConfig | None = None
) -> float:
    """Summed root-to-leaves structural distance; 0 means equivalence up to
    commutative child order."""
    cfg = cfg or TreeDistanceConfig()
    return _node_distance(a.root, b.root, cfg.alpha)


def tree_score(
    a: ExpressionTree, b: ExpressionTree, cfg: TreeDistanceConfig | None = None
) -> float:
    """Similarity in [0, 1]; 1 exactly when the distance is 0."""
    cfg = cfg or TreeDistanceConfig()
    d = tree_distance(a, b, cfg)
    if cfg.normalize:
        d = d / max(size(a), size(b))
    return max(0.0, 1.0 - d)
