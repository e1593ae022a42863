"""Expression trees: the shared representation for every candidate and
reference equation.

A tree is an immutable recursive :class:`Node` structure wrapped in
:class:`ExpressionTree`.  Internal nodes carry an operator tag, leaves are
either finite constants or variable references (indices into a
:class:`VariableSchema`).  The module provides evaluation with protected
numerics, node counting, an infix parser/renderer, and a canonical key that
identifies trees up to commutative child reordering.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum, auto
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "BINARY_OPS",
    "UNARY_OPS",
    "OPERATORS",
    "COMMUTATIVE_OPS",
    "NodeKind",
    "Node",
    "ExpressionTree",
    "VariableSchema",
    "ExpressionError",
    "ExpressionSyntaxError",
    "UnknownIdentifierError",
    "constant",
    "variable",
    "unary",
    "binary",
    "evaluate",
    "evaluate_batch",
    "size",
    "depth",
    "parse",
    "render",
    "canonical_key",
    "random_tree",
    "iter_nodes",
]

_BINARY_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_FUNCTION_NAMES = ("exp", "log", "sin", "cos")

BINARY_OPS = frozenset(_BINARY_SYMBOLS)
UNARY_OPS = frozenset({"neg", *_FUNCTION_NAMES})
OPERATORS = BINARY_OPS | UNARY_OPS
COMMUTATIVE_OPS = frozenset({"add", "mul"})

# Protected-operator thresholds: division by a near-zero denominator yields
# 1.0 and log of a near-zero magnitude yields 0.0 (gplearn convention);
# power results are clamped in magnitude.
EPS_DIV = 1e-9
EPS_LOG = 1e-9
POW_CAP = 1e12


class ExpressionError(ValueError):
    """Base class for parse and render failures."""


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(ExpressionError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier {name!r} (at position {position})")
        self.name = name
        self.position = position


class NodeKind(Enum):
    CONSTANT = auto()
    VARIABLE = auto()
    UNARY = auto()
    BINARY = auto()


@dataclass(frozen=True)
class Node:
    """A single node.  Nodes are immutable and safe to share between trees.

    Exactly one of the payload fields is meaningful per kind: ``value`` for
    constants, ``var_index`` for variables, ``op`` for operators.
    """

    kind: NodeKind
    op: str | None = None
    value: float | None = None
    var_index: int | None = None
    children: tuple["Node", ...] = ()

    def __post_init__(self):
        if self.kind is NodeKind.CONSTANT:
            if self.value is None or not math.isfinite(self.value):
                raise ValueError(f"constant value must be finite, got {self.value!r}")
            if self.children:
                raise ValueError("constant node cannot have children")
        elif self.kind is NodeKind.VARIABLE:
            if self.var_index is None or self.var_index < 0:
                raise ValueError(f"variable index must be >= 0, got {self.var_index!r}")
            if self.children:
                raise ValueError("variable node cannot have children")
        elif self.kind is NodeKind.UNARY:
            if self.op not in UNARY_OPS:
                raise ValueError(f"unknown unary operator {self.op!r}")
            if len(self.children) != 1:
                raise ValueError(f"unary node needs exactly 1 child, got {len(self.children)}")
        elif self.kind is NodeKind.BINARY:
            if self.op not in BINARY_OPS:
                raise ValueError(f"unknown binary operator {self.op!r}")
            if len(self.children) != 2:
                raise ValueError(f"binary node needs exactly 2 children, got {len(self.children)}")

    @property
    def is_leaf(self) -> bool:
        return not self.children


def constant(value: float) -> Node:
    return Node(NodeKind.CONSTANT, value=float(value))


def variable(index: int) -> Node:
    return Node(NodeKind.VARIABLE, var_index=int(index))


def unary(op: str, child: Node) -> Node:
    return Node(NodeKind.UNARY, op=op, children=(child,))


def binary(op: str, left: Node, right: Node) -> Node:
    return Node(NodeKind.BINARY, op=op, children=(left, right))


@dataclass(frozen=True)
class ExpressionTree:
    """A complete expression, addressed through its root node."""

    root: Node

    def size(self) -> int:
        return size(self)

    def depth(self) -> int:
        return depth(self)


@dataclass(frozen=True)
class VariableSchema:
    """Ordered variable names with SI unit strings and descriptions."""

    names: tuple[str, ...]
    units: tuple[str, ...]
    descriptions: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "descriptions", tuple(self.descriptions))
        if not (len(self.names) == len(self.units) == len(self.descriptions)):
            raise ValueError("names, units and descriptions must have equal length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("variable names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def simple(cls, names: Sequence[str]) -> "VariableSchema":
        names = tuple(names)
        return cls(names, ("1",) * len(names), ("",) * len(names))

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "units": list(self.units),
            "descriptions": list(self.descriptions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariableSchema":
        return cls(tuple(d["names"]), tuple(d["units"]), tuple(d["descriptions"]))


def iter_nodes(node: Node) -> Iterator[Node]:
    """Preorder iteration over a subtree."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children))


def size(tree: ExpressionTree | Node) -> int:
    """Total node count, internal plus leaves."""
    node = tree.root if isinstance(tree, ExpressionTree) else tree
    return sum(1 for _ in iter_nodes(node))


def depth(tree: ExpressionTree | Node) -> int:
    """Edge depth: a bare leaf has depth 0."""
    node = tree.root if isinstance(tree, ExpressionTree) else tree
    if not node.children:
        return 0
    return 1 + max(depth(c) for c in node.children)


def _max_var_index(node: Node) -> int:
    best = -1
    for n in iter_nodes(node):
        if n.kind is NodeKind.VARIABLE:
            best = max(best, n.var_index)
    return best


def _eval_node(node: Node, X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    if node.kind is NodeKind.CONSTANT:
        return np.full(n, node.value)
    if node.kind is NodeKind.VARIABLE:
        return X[:, node.var_index]
    if node.kind is NodeKind.UNARY:
        a = _eval_node(node.children[0], X)
        if node.op == "neg":
            return -a
        if node.op == "exp":
            return np.exp(a)
        if node.op == "log":
            mag = np.abs(a)
            ok = mag > EPS_LOG
            return np.where(ok, np.log(np.where(ok, mag, 1.0)), 0.0)
        if node.op == "sin":
            return np.sin(a)
        return np.cos(a)
    a = _eval_node(node.children[0], X)
    b = _eval_node(node.children[1], X)
    if node.op == "add":
        return a + b
    if node.op == "sub":
        return a - b
    if node.op == "mul":
        return a * b
    if node.op == "div":
        ok = np.abs(b) > EPS_DIV
        return np.where(ok, a / np.where(ok, b, 1.0), 1.0)
    # pow: clamp magnitude; NaN from complex results passes through and is
    # caught by the final sentinel replacement.
    return np.clip(np.power(a, b), -POW_CAP, POW_CAP)


def evaluate_batch(tree: ExpressionTree, X: np.ndarray) -> tuple[np.ndarray, bool]:
    """Evaluate a tree over a row matrix.

    Returns ``(values, degenerate)``.  Values are always finite: protected
    division/log/pow handle their singular inputs, and any remaining
    non-finite entry (e.g. exp overflow) is replaced by 0.0 with the
    ``degenerate`` flag set so the fitness function can assign worst-case
    fit.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    needed = _max_var_index(tree.root) + 1
    if X.shape[1] < needed:
        raise ValueError(f"tree references variable {needed - 1} but rows have {X.shape[1]} columns")
    with np.errstate(all="ignore"):
        values = _eval_node(tree.root, X)
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    degenerate = bool(bad.any())
    if degenerate:
        values = np.where(bad, 0.0, values)
    return values, degenerate


def evaluate(tree: ExpressionTree, row: Sequence[float]) -> tuple[float, bool]:
    """Evaluate a tree at a single row; returns ``(value, degenerate)``."""
    X = np.asarray(row, dtype=float).reshape(1, -1)
    values, degenerate = evaluate_batch(tree, X)
    return float(values[0]), degenerate


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _format_constant(value: float, digits: int = 17) -> str:
    return format(value, f".{digits}g")


def _render_node(node: Node, names: Sequence[str]) -> str:
    if node.kind is NodeKind.CONSTANT:
        return _format_constant(node.value)
    if node.kind is NodeKind.VARIABLE:
        if node.var_index >= len(names):
            raise ExpressionError(
                f"variable index {node.var_index} out of schema range (have {len(names)} names)"
            )
        return names[node.var_index]
    if node.kind is NodeKind.UNARY:
        inner = _render_node(node.children[0], names)
        if node.op == "neg":
            return f"(-({inner}))"
        return f"{node.op}({inner})"
    left = _render_node(node.children[0], names)
    right = _render_node(node.children[1], names)
    return f"({left} {_BINARY_SYMBOLS[node.op]} {right})"


def render(tree: ExpressionTree, schema: VariableSchema) -> str:
    """Deterministic fully parenthesized infix form.

    Constants carry 17 significant digits so ``parse(render(t))`` rebuilds a
    structurally identical tree.
    """
    return _render_node(tree.root, schema.names)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)

# Binding powers: ^ > unary minus > * / > + -.  ^ is right-associative, the
# rest left-associative.  A minus directly before a numeric literal is part
# of the literal, so negative constants round-trip ("-2 ^ 2" therefore means
# (-2)^2; a negated power renders as "(-((...)))" and is unambiguous).
_BP_ADD = 10
_BP_MUL = 20
_BP_UNARY = 30
_BP_POW = 40


class _Token:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind: str, text: str, pos: int):
        self.kind = kind
        self.text = text
        self.pos = pos


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad_pos = len(text) - len(stripped)
            raise ExpressionSyntaxError(f"unexpected character {stripped[0]!r}", bad_pos)
        if m.group("num") is not None:
            tokens.append(_Token("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(_Token("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(_Token("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, schema: VariableSchema):
        self.tokens = _tokenize(text)
        self.schema = schema
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        tok = self.advance()
        if tok.kind != "op" or tok.text != text:
            raise ExpressionSyntaxError(f"expected {text!r}, got {tok.text!r}", tok.pos)

    def parse_expression(self, min_bp: int = 0) -> Node:
        node = self.parse_prefix()
        while True:
            tok = self.peek()
            if tok.kind != "op" or tok.text not in "+-*/^":
                break
            if tok.text in "+-":
                lbp, rbp, op = _BP_ADD, _BP_ADD + 1, ("add" if tok.text == "+" else "sub")
            elif tok.text in "*/":
                lbp, rbp, op = _BP_MUL, _BP_MUL + 1, ("mul" if tok.text == "*" else "div")
            else:
                lbp, rbp, op = _BP_POW, _BP_POW - 1, "pow"
            if lbp < min_bp:
                break
            self.advance()
            right = self.parse_expression(rbp)
            node = binary(op, node, right)
        return node

    def parse_prefix(self) -> Node:
        tok = self.advance()
        if tok.kind == "num":
            return constant(float(tok.text))
        if tok.kind == "ident":
            if tok.text in _FUNCTION_NAMES:
                self.expect("(")
                arg = self.parse_expression(0)
                self.expect(")")
                return unary(tok.text, arg)
            if tok.text in self.schema.names:
                return variable(self.schema.index(tok.text))
            raise UnknownIdentifierError(tok.text, tok.pos)
        if tok.kind == "op" and tok.text == "(":
            node = self.parse_expression(0)
            self.expect(")")
            return node
        if tok.kind == "op" and tok.text == "-":
            nxt = self.peek()
            if nxt.kind == "num":
                self.advance()
                return constant(-float(nxt.text))
            return unary("neg", self.parse_expression(_BP_UNARY))
        if tok.kind == "end":
            raise ExpressionSyntaxError("unexpected end of input", tok.pos)
        raise ExpressionSyntaxError(f"unexpected token {tok.text!r}", tok.pos)


def parse(text: str, schema: VariableSchema) -> ExpressionTree:
    """Parse an infix expression over the schema's variable names.

    Grammar: binary ``+ - * / ^``, the functions exp/log/sin/cos, unary
    minus, parentheses and decimal literals.  Precedence is
    ``^ > unary minus > * / > + -`` with left associativity except for the
    right-associative ``^``.
    """
    parser = _Parser(text, schema)
    root = parser.parse_expression(0)
    trailing = parser.peek()
    if trailing.kind != "end":
        raise ExpressionSyntaxError(f"unexpected trailing input {trailing.text!r}", trailing.pos)
    return ExpressionTree(root)


# ---------------------------------------------------------------------------
# Canonical key
# ---------------------------------------------------------------------------

def _key_node(node: Node) -> str:
    if node.kind is NodeKind.CONSTANT:
        return "c:" + _format_constant(node.value, digits=12)
    if node.kind is NodeKind.VARIABLE:
        return f"v:{node.var_index}"
    child_keys = [_key_node(c) for c in node.children]
    if node.op in COMMUTATIVE_OPS:
        child_keys.sort()
    return f"{node.op}({','.join(child_keys)})"


def canonical_key(tree: ExpressionTree) -> str:
    """A string identical for trees equal up to recursive reordering of
    add/mul children.  Constants are rounded to 12 significant digits."""
    return _key_node(tree.root)


# ---------------------------------------------------------------------------
# Random trees (used for GP initialization and property tests)
# ---------------------------------------------------------------------------

def random_tree(
    rng: np.random.Generator,
    n_vars: int,
    operators: frozenset[str] | set[str] = OPERATORS,
    max_depth: int = 4,
    method: str = "grow",
    const_range: tuple[float, float] = (-5.0, 5.0),
    p_leaf: float = 0.2,
    p_const: float = 0.3,
) -> ExpressionTree:
    """Generate a random tree with edge depth <= max_depth.

    ``grow`` may place leaves anywhere; ``full`` expands operators until the
    depth limit.  Operator and leaf choices are drawn from ``rng`` only, so
    generation is reproducible.
    """
    unary_ops = sorted(op for op in operators if op in UNARY_OPS)
    binary_ops = sorted(op for op in operators if op in BINARY_OPS)
    if not unary_ops and not binary_ops:
        raise ValueError("operator set is empty")

    def leaf() -> Node:
        if n_vars > 0 and rng.random() >= p_const:
            return variable(int(rng.integers(n_vars)))
        return constant(float(rng.uniform(*const_range)))

    def build(remaining: int) -> Node:
        if remaining <= 0 or (method == "grow" and rng.random() < p_leaf):
            return leaf()
        pool = binary_ops + unary_ops
        op = pool[int(rng.integers(len(pool)))]
        if op in BINARY_OPS:
            return binary(op, build(remaining - 1), build(remaining - 1))
        return unary(op, build(remaining - 1))

    return ExpressionTree(build(max_depth))
