"""Genetic-programming search for equations minimizing a composite loss.

The loss blends three normalized terms: data-fit error e (inner squared or
Huber loss over target variance, clamped to [0, 1]), a size term s (node
count over the depth-implied cap), and the knowledge critic's aggregate c
(neutral 0.5 for unscored candidates).  Search is generational with
tournament selection, subtree crossover, subtree/point mutation, elitism of
one, a hard depth cap, and relative-improvement early stopping.

Per-individual RNG streams are derived from (seed, generation, index), so
results are reproducible and independent of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .critic import CriticError
from .datasets import Dataset
from .tree import (
    BINARY_OPS,
    OPERATORS,
    UNARY_OPS,
    ExpressionTree,
    Node,
    NodeKind,
    binary,
    canonical_key,
    constant,
    depth,
    evaluate_batch,
    random_tree,
    render,
    size,
    unary,
    variable,
)

__all__ = [
    "PRESET_IDS",
    "FitnessWeights",
    "EarlyStopPolicy",
    "EngineConfig",
    "FitnessBreakdown",
    "SearchResult",
    "preset",
    "size_cap",
    "composite_loss",
    "run",
    "best_trace",
]


@dataclass(frozen=True)
class FitnessWeights:
    """Loss weights; must lie in [0, 1] and sum to 1 (within 1e-9)."""

    w1: float
    w2: float
    w3: float

    def __post_init__(self):
        for name in ("w1", "w2", "w3"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        total = self.w1 + self.w2 + self.w3
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")

    @classmethod
    def normalized(cls, w1: float, w2: float, w3: float) -> "FitnessWeights":
        total = w1 + w2 + w3
        if total <= 0:
            raise ValueError("weights must have a positive sum")
        return cls(w1 / total, w2 / total, w3 / total)

    @classmethod
    def parse(cls, text: str) -> "FitnessWeights":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated weights, got {text!r}")
        return cls(*(float(p) for p in parts))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w1, self.w2, self.w3)


@dataclass(frozen=True)
class EarlyStopPolicy:
    """Stop when the best loss improves by less than ``rel_improvement``
    (relative) for ``patience_generations`` consecutive generations."""

    rel_improvement: float = 0.001
    patience_generations: int = 3

    def __post_init__(self):
        if self.rel_improvement < 0:
            raise ValueError("rel_improvement must be >= 0")
        if self.patience_generations < 1:
            raise ValueError("patience_generations must be >= 1")


@dataclass(frozen=True)
class EngineConfig:
    population_size: int = 100
    generations: int = 50
    crossover_prob: float = 0.6
    mutation_prob: float = 0.05
    tournament_size: int = 3
    max_depth: int = 8
    init_depth: int = 1
    operator_set: frozenset = OPERATORS
    weights: FitnessWeights = field(default_factory=lambda: FitnessWeights(0.6, 0.1, 0.3))
    early_stop: EarlyStopPolicy = field(default_factory=EarlyStopPolicy)
    inner_loss: str = "squared"
    huber_delta: float = 1.0
    critic_budget: int = 10
    const_range: tuple[float, float] = (-5.0, 5.0)
    restart_after: int = 12
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "operator_set", frozenset(self.operator_set))
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for name in ("crossover_prob", "mutation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.crossover_prob + self.mutation_prob > 1.0 + 1e-12:
            raise ValueError("crossover_prob + mutation_prob must not exceed 1")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if not 0 <= self.init_depth <= self.max_depth:
            raise ValueError("need 0 <= init_depth <= max_depth")
        if not self.operator_set:
            raise ValueError("operator_set must not be empty")
        unknown = self.operator_set - OPERATORS
        if unknown:
            raise ValueError(f"unknown operators: {sorted(unknown)}")
        if self.inner_loss not in ("squared", "huber"):
            raise ValueError(f"inner_loss must be 'squared' or 'huber', got {self.inner_loss!r}")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be > 0")
        if self.critic_budget < 0:
            raise ValueError("critic_budget must be >= 0")
        if self.const_range[0] >= self.const_range[1]:
            raise ValueError("const_range must be a non-degenerate (low, high) pair")
        if self.restart_after < 0:
            raise ValueError("restart_after must be >= 0 (0 disables restarts)")

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "generations": self.generations,
            "crossover_prob": self.crossover_prob,
            "mutation_prob": self.mutation_prob,
            "tournament_size": self.tournament_size,
            "max_depth": self.max_depth,
            "init_depth": self.init_depth,
            "operator_set": sorted(self.operator_set),
            "weights": list(self.weights.as_tuple()),
            "early_stop": {
                "rel_improvement": self.early_stop.rel_improvement,
                "patience_generations": self.early_stop.patience_generations,
            },
            "inner_loss": self.inner_loss,
            "huber_delta": self.huber_delta,
            "critic_budget": self.critic_budget,
            "const_range": list(self.const_range),
            "restart_after": self.restart_after,
            "seed": self.seed,
        }


PRESET_IDS = ("deap_like", "gplearn_like", "pysr_like")


def preset(preset_id: str) -> EngineConfig:
    """Engine configurations emulating the three tool setups.

    deap_like drops exp and pow and uses crossover/mutation 0.6/0.05 (the
    narrative rates; the tabulated 0.05/0.01 remain selectable by replacing
    those fields).  gplearn_like drops pow and carries a heavier size weight.
    pysr_like keeps pow and scores data fit with the Huber inner loss.
    """
    if preset_id == "deap_like":
        return EngineConfig(
            operator_set=frozenset({"add", "sub", "mul", "div", "neg", "log", "sin", "cos"}),
            crossover_prob=0.6,
            mutation_prob=0.05,
        )
    if preset_id == "gplearn_like":
        return EngineConfig(
            operator_set=frozenset({"add", "sub", "mul", "div", "neg", "exp", "log", "sin", "cos"}),
            weights=FitnessWeights(0.5, 0.2, 0.3),
        )
    if preset_id == "pysr_like":
        return EngineConfig(operator_set=OPERATORS, inner_loss="huber")
    raise ValueError(f"unknown preset {preset_id!r}; expected one of {PRESET_IDS}")


@dataclass(frozen=True)
class FitnessBreakdown:
    e: float
    s: float
    c: float
    L: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"e": self.e, "s": self.s, "c": self.c, "L": self.L, "degenerate": self.degenerate}


def size_cap(max_depth: int) -> int:
    """Node count of a full binary tree at the depth cap."""
    return 2 ** (max_depth + 1) - 1


def _inner_error(pred: np.ndarray, y: np.ndarray, var_y: float, inner_loss: str, delta: float) -> float:
    # residuals can reach the pow clamp (1e12); squaring may overflow to
    # inf, which correctly clamps to worst-case below
    with np.errstate(over="ignore"):
        residual = pred - y
        if inner_loss == "squared":
            raw = float(np.mean(residual * residual))
        else:
            a = np.abs(residual)
            raw = float(
                np.mean(np.where(a <= delta, 0.5 * residual * residual, delta * (a - 0.5 * delta)))
            )
    if not math.isfinite(raw):
        return 1.0
    if var_y <= 0:
        return 0.0 if raw == 0.0 else 1.0
    return min(1.0, max(0.0, raw / var_y))


def composite_loss(
    tree: ExpressionTree,
    data: Dataset,
    weights: FitnessWeights,
    critic_c: float | None = None,
    cfg: EngineConfig | None = None,
) -> FitnessBreakdown:
    """Evaluate one candidate: e over the dataset, s from node count, c from
    the critic (neutral 0.5 when absent).  Degenerate evaluations force the
    worst-case loss of 1."""
    cfg = cfg or EngineConfig()
    if critic_c is not None and not 0.0 <= critic_c <= 1.0:
        raise ValueError(f"critic_c must be in [0, 1], got {critic_c}")
    pred, degenerate = evaluate_batch(tree, data.X)
    s = min(1.0, size(tree) / size_cap(cfg.max_depth))
    c = 0.5 if critic_c is None else critic_c
    if degenerate:
        return FitnessBreakdown(e=1.0, s=s, c=c, L=1.0, degenerate=True)
    e = _inner_error(pred, data.y, float(np.var(data.y)), cfg.inner_loss, cfg.huber_delta)
    L = weights.w1 * e + weights.w2 * s + weights.w3 * c
    return FitnessBreakdown(e=e, s=s, c=c, L=L)


@dataclass
class SearchResult:
    best_tree: ExpressionTree
    best: FitnessBreakdown
    best_expression: str
    trace: list[tuple[int, float]]
    generations_used: int
    critic_calls: int
    critic_cache_hits: int
    incidents: list[str]
    config: EngineConfig
    seed: int
    restarts: int = 0

    def to_dict(self) -> dict:
        return {
            "best_expression": self.best_expression,
            "best": self.best.to_dict(),
            "trace": [[g, loss] for g, loss in self.trace],
            "generations_used": self.generations_used,
            "critic": {
                "calls": self.critic_calls,
                "cache_hits": self.critic_cache_hits,
                "incidents": list(self.incidents),
            },
            "restarts": self.restarts,
            "config": self.config.to_dict(),
            "seed": self.seed,
        }


def best_trace(result: SearchResult) -> list[tuple[int, float]]:
    """Per-generation best-loss trace; non-increasing by elitism."""
    return list(result.trace)


# ---------------------------------------------------------------------------
# Search internals
# ---------------------------------------------------------------------------

class _Member:
    __slots__ = ("tree", "e", "s", "degenerate", "key", "c", "loss")

    def __init__(self, tree, e, s, degenerate, key):
        self.tree = tree
        self.e = e
        self.s = s
        self.degenerate = degenerate
        self.key = key
        self.c = 0.5
        self.loss = 1.0


def _member_rng(seed: int, generation: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed % 2**63, spawn_key=(generation, index))
    return np.random.Generator(np.random.PCG64(ss))


def _order(member: _Member) -> tuple[float, str]:
    return (member.loss, member.key)


def _paths(root: Node) -> list[tuple[tuple[int, ...], Node, int]]:
    out = []

    def walk(node, path, d):
        out.append((path, node, d))
        for i, child in enumerate(node.children):
            walk(child, path + (i,), d + 1)

    walk(root, (), 0)
    return out


def _replace_at(node: Node, path: tuple[int, ...], new: Node) -> Node:
    if not path:
        return new
    children = list(node.children)
    children[path[0]] = _replace_at(children[path[0]], path[1:], new)
    return Node(node.kind, op=node.op, value=node.value, var_index=node.var_index,
                children=tuple(children))


def _pick_point(points, rng: np.random.Generator, internal_bias: float = 0.9):
    """Koza-style point choice: prefer internal nodes so crossover exchanges
    compound structure rather than single leaves."""
    internal = [p for p in points if p[1].children]
    if internal and rng.random() < internal_bias:
        return internal[int(rng.integers(len(internal)))]
    return points[int(rng.integers(len(points)))]


def _crossover(a: Node, b: Node, rng: np.random.Generator, max_depth: int) -> Node | None:
    a_points = _paths(a)
    b_points = _paths(b)
    for _ in range(8):
        pa, _na, da = _pick_point(a_points, rng)
        _pb, nb, _db = _pick_point(b_points, rng)
        if da + depth(nb) <= max_depth:
            return _replace_at(a, pa, nb)
    return None


def _subtree_mutation(root: Node, rng: np.random.Generator, cfg: EngineConfig, n_vars: int) -> Node:
    points = _paths(root)
    path, _node, d = points[int(rng.integers(len(points)))]
    budget = min(cfg.max_depth - d, 3)
    sub = random_tree(rng, n_vars, cfg.operator_set, max_depth=budget,
                      method="grow", const_range=cfg.const_range)
    return _replace_at(root, path, sub.root)


def _random_leaf(rng: np.random.Generator, n_vars: int, const_range) -> Node:
    if n_vars > 0 and rng.random() >= 0.2:
        return variable(int(rng.integers(n_vars)))
    return constant(float(rng.uniform(*const_range)))


def _point_mutation(
    root: Node,
    rng: np.random.Generator,
    cfg: EngineConfig,
    binary_pool: tuple[str, ...],
    unary_pool: tuple[str, ...],
    n_vars: int,
) -> Node:
    points = _paths(root)
    path, node, _d = points[int(rng.integers(len(points)))]
    if node.kind is NodeKind.BINARY:
        options = [op for op in binary_pool if op != node.op]
        if not options:
            return root
        new = binary(options[int(rng.integers(len(options)))], *node.children)
    elif node.kind is NodeKind.UNARY:
        options = [op for op in unary_pool if op != node.op]
        if not options:
            return root
        new = unary(options[int(rng.integers(len(options)))], node.children[0])
    elif node.kind is NodeKind.CONSTANT and rng.random() < 0.5:
        new = constant(node.value + rng.normal(0.0, 0.5 * (abs(node.value) + 1.0)))
    else:
        # terminals may swap kind: a constant can become a variable and
        # vice versa, which lets tuned constants graduate into columns
        new = _random_leaf(rng, n_vars, cfg.const_range)
    return _replace_at(root, path, new)


def _insert_mutation(
    root: Node,
    rng: np.random.Generator,
    cfg: EngineConfig,
    binary_pool: tuple[str, ...],
    unary_pool: tuple[str, ...],
    n_vars: int,
) -> Node:
    """Wrap a subtree in a fresh operator node (the old subtree becomes an
    operand), subject to the depth cap.  Leaf positions are favored: wrapping
    a terminal is how compound terms grow one operator at a time."""
    valid = [p for p in _paths(root) if p[2] + 1 + depth(p[1]) <= cfg.max_depth]
    if not valid:
        return root
    leaves = [p for p in valid if not p[1].children]
    if leaves and rng.random() < 0.6:
        path, node, _d = leaves[int(rng.integers(len(leaves)))]
    else:
        path, node, _d = valid[int(rng.integers(len(valid)))]
    pool = binary_pool + unary_pool
    op = pool[int(rng.integers(len(pool)))]
    if op in BINARY_OPS:
        other = _random_leaf(rng, n_vars, cfg.const_range)
        wrapped = binary(op, node, other) if rng.random() < 0.5 else binary(op, other, node)
    else:
        wrapped = unary(op, node)
    return _replace_at(root, path, wrapped)


def _hoist_mutation(root: Node, rng: np.random.Generator) -> Node:
    """Replace a subtree with one of its own subtrees (bloat control)."""
    points = _paths(root)
    internal = [p for p in points if p[1].children]
    if not internal:
        return root
    path, node, _d = internal[int(rng.integers(len(internal)))]
    descendants = _paths(node)[1:]
    pick = descendants[int(rng.integers(len(descendants)))][1]
    return _replace_at(root, path, pick)


def run(data: Dataset, cfg: EngineConfig, critic=None, on_generation=None) -> SearchResult:
    """Run the generational search over a dataset.

    The critic scores at most ``critic_budget`` distinct candidates per
    generation, picked best-first by (e, s); verdicts are cached by canonical
    key for the whole run and critic failures leave c neutral without ever
    aborting the search.  The trace records the running best loss, which
    elitism keeps non-increasing.  ``on_generation(generation, members)`` is
    an optional observer for progress monitoring.
    """
    if data.X.shape[0] == 0:
        raise ValueError("dataset is empty")
    n_vars = len(data.schema)
    var_y = float(np.var(data.y))
    cap = size_cap(cfg.max_depth)
    w = cfg.weights
    use_critic = (
        critic is not None
        and not getattr(critic, "is_null", False)
        and w.w3 > 0
        and cfg.critic_budget > 0
    )
    binary_pool = tuple(sorted(op for op in cfg.operator_set if op in BINARY_OPS))
    unary_pool = tuple(sorted(op for op in cfg.operator_set if op in UNARY_OPS))

    verdicts: dict[str, float] = {}
    incidents: list[str] = []
    stats = {"calls": 0, "cache_hits": 0}
    seen_keys: set[str] = set()

    def evaluate_tree(tree: ExpressionTree) -> _Member:
        pred, degenerate = evaluate_batch(tree, data.X)
        s = min(1.0, size(tree) / cap)
        e = 1.0 if degenerate else _inner_error(pred, data.y, var_y, cfg.inner_loss, cfg.huber_delta)
        return _Member(tree, e, s, degenerate, canonical_key(tree))

    def assign_losses(pop: list[_Member]):
        if use_critic:
            ranked = sorted((m for m in pop if not m.degenerate), key=lambda m: (m.e, m.s, m.key))
            seen: set[str] = set()
            scored = 0
            for m in ranked:
                if scored >= cfg.critic_budget:
                    break
                if m.key in seen:
                    continue
                seen.add(m.key)
                if m.key in verdicts:
                    stats["cache_hits"] += 1
                    continue
                scored += 1
                stats["calls"] += 1
                try:
                    verdict = critic.score_tree(m.tree)
                except CriticError as exc:
                    incidents.append(f"critic failure for {m.key}: {exc}")
                    verdicts[m.key] = 0.5
                    continue
                if verdict is not None:
                    verdicts[m.key] = verdict.c
        for m in pop:
            m.c = verdicts.get(m.key, 0.5)
            m.loss = 1.0 if m.degenerate else w.w1 * m.e + w.w2 * m.s + w.w3 * m.c

    def check_depths(pop: list[_Member], generation: int):
        for m in pop:
            if depth(m.tree) > cfg.max_depth:
                raise RuntimeError(f"depth cap violated at generation {generation}")

    def make_child(
        pop: list[_Member], rng: np.random.Generator, taken: set[str]
    ) -> ExpressionTree:
        def tournament() -> _Member:
            idx = rng.integers(0, len(pop), size=cfg.tournament_size)
            return min((pop[int(j)] for j in idx), key=_order)

        tree = None
        # Retry variation a few times when the child duplicates an
        # individual already placed in this generation or already evaluated
        # earlier in the run; clones add nothing to the search.
        for _attempt in range(4):
            roll = rng.random()
            if roll < cfg.crossover_prob:
                parent = tournament()
                donor = tournament()
                child = _crossover(parent.tree.root, donor.tree.root, rng, cfg.max_depth)
                tree = ExpressionTree(child) if child is not None else parent.tree
            elif roll < cfg.crossover_prob + cfg.mutation_prob:
                parent = tournament()
                kind = rng.random()
                if kind < 0.20:
                    root = _subtree_mutation(parent.tree.root, rng, cfg, n_vars)
                elif kind < 0.35:
                    root = _point_mutation(parent.tree.root, rng, cfg, binary_pool, unary_pool, n_vars)
                elif kind < 0.85:
                    root = _insert_mutation(parent.tree.root, rng, cfg, binary_pool, unary_pool, n_vars)
                else:
                    root = _hoist_mutation(parent.tree.root, rng)
                tree = ExpressionTree(root)
            else:
                tree = tournament().tree
            key = canonical_key(tree)
            if key not in taken and key not in seen_keys:
                break
        return tree

    # Ramped initialization: depths cycle init_depth..max_depth, alternating
    # grow and full construction.
    depths = list(range(cfg.init_depth, cfg.max_depth + 1))
    members: list[_Member] = []
    for i in range(cfg.population_size):
        rng = _member_rng(cfg.seed, 0, i)
        d = depths[(i // 2) % len(depths)]
        method = "grow" if i % 2 == 0 else "full"
        tree = random_tree(rng, n_vars, cfg.operator_set, max_depth=d, method=method,
                           const_range=cfg.const_range)
        members.append(evaluate_tree(tree))
    assign_losses(members)
    check_depths(members, 1)
    seen_keys.update(m.key for m in members)
    if on_generation is not None:
        on_generation(1, members)

    generation = 1
    best_member = min(members, key=_order)
    best_loss = best_member.loss
    best_breakdown = FitnessBreakdown(
        e=best_member.e, s=best_member.s, c=best_member.c,
        L=best_member.loss, degenerate=best_member.degenerate,
    )
    best_tree = best_member.tree
    trace: list[tuple[int, float]] = [(1, best_loss)]
    streak = 0

    stagnant = 0
    restarts = 0
    while generation < cfg.generations:
        if cfg.restart_after > 0 and stagnant >= cfg.restart_after:
            restarts += 1
            # Stagnation restart: take an independent shot with a fresh
            # random population.  The running best is never lost (the trace
            # tracks it), and with the default early-stopping policy runs
            # halt long before a restart can trigger.
            child_trees = []
            for i in range(cfg.population_size):
                rng = _member_rng(cfg.seed, generation, i)
                d = depths[(i // 2) % len(depths)]
                method = "grow" if i % 2 == 0 else "full"
                child_trees.append(
                    random_tree(rng, n_vars, cfg.operator_set, max_depth=d,
                                method=method, const_range=cfg.const_range)
                )
            stagnant = 0
        else:
            elite = min(members, key=_order)
            child_trees = [elite.tree]
            taken = {elite.key}
            for i in range(1, cfg.population_size):
                rng = _member_rng(cfg.seed, generation, i)
                child = make_child(members, rng, taken)
                taken.add(canonical_key(child))
                child_trees.append(child)
        generation += 1
        members = [evaluate_tree(t) for t in child_trees]
        assign_losses(members)
        check_depths(members, generation)
        seen_keys.update(m.key for m in members)
        if on_generation is not None:
            on_generation(generation, members)

        gen_best = min(members, key=_order)
        previous = best_loss
        if gen_best.loss < best_loss:
            best_loss = gen_best.loss
            best_tree = gen_best.tree
            best_breakdown = FitnessBreakdown(
                e=gen_best.e, s=gen_best.s, c=gen_best.c,
                L=gen_best.loss, degenerate=gen_best.degenerate,
            )
        trace.append((generation, best_loss))
        improvement = (previous - best_loss) / previous if previous > 0 else 0.0
        # Restarts demand real progress, not the slow grind of stacking
        # correction terms onto an overgrown incumbent.
        stagnant = 0 if improvement >= 0.002 else stagnant + 1
        streak = streak + 1 if improvement < cfg.early_stop.rel_improvement else 0
        if streak >= cfg.early_stop.patience_generations:
            break

    return SearchResult(
        best_tree=best_tree,
        best=best_breakdown,
        best_expression=render(best_tree, data.schema),
        trace=trace,
        generations_used=generation,
        critic_calls=stats["calls"],
        critic_cache_hits=stats["cache_hits"],
        incidents=incidents,
        config=cfg,
        seed=cfg.seed,
        restarts=restarts,
    )
