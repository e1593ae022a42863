"""Acceptance suite: one test per criterion, each printing a pass/fail line
in the terminal summary (see conftest).  Run with `pytest tests/test_acceptance.py -v`.
"""

import json

import numpy as np
import pytest

import eqsearch.cli as cli
from eqsearch.critic import MockCritic, NullCritic, PromptContext, build_prompt, parse_verdict
from eqsearch.datasets import Dataset, NoiseSpec, SamplingRanges, generate, scenario_spec
from eqsearch.engine import (
    EarlyStopPolicy,
    EngineConfig,
    FitnessWeights,
    composite_loss,
    run,
)
from eqsearch.bench import fit_metrics
from eqsearch.metric import tree_distance, tree_score
from eqsearch.tree import (
    ExpressionTree,
    Node,
    NodeKind,
    OPERATORS,
    VariableSchema,
    constant,
    evaluate_batch,
    parse,
    random_tree,
)

from oracles import brute_distance, ref_fit_metrics, restricted_trees


def _swap_commutative(node: Node, rng) -> Node:
    children = tuple(_swap_commutative(c, rng) for c in node.children)
    if node.kind is NodeKind.BINARY and node.op in ("add", "mul") and rng.random() < 0.5:
        children = (children[1], children[0])
    return Node(node.kind, op=node.op, value=node.value, var_index=node.var_index,
                children=children)


def _linear_dataset(n=500, n_vars=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-5.0, 5.0, size=(n, n_vars))
    return Dataset(
        X=X,
        y=X[:, 0].copy(),
        schema=VariableSchema.simple([f"x{i}" for i in range(n_vars)]),
        scenario="linear",
        noise=NoiseSpec(0.0, "none"),
        seed=seed,
    )


def _iter(node):
    yield node
    for c in node.children:
        yield from _iter(c)


@pytest.mark.acceptance(1, "tree-metric identity and commutative invariance")
def test_criterion_1_tree_metric_identity_and_commutativity():
    rng = np.random.default_rng(101)
    for _ in range(500):
        tree = random_tree(rng, 3, OPERATORS, max_depth=5)
        assert tree_score(tree, tree) == 1.0
    checked = 0
    while checked < 500:
        tree = random_tree(rng, 3, OPERATORS, max_depth=5)
        if not any(n.op in ("add", "mul") for n in _iter(tree.root) if n.op):
            continue
        swapped = ExpressionTree(_swap_commutative(tree.root, rng))
        assert tree_score(tree, swapped) == 1.0
        assert tree_distance(tree, swapped) == 0.0
        reference = random_tree(rng, 3, OPERATORS, max_depth=4)
        assert tree_distance(tree, reference) == tree_distance(swapped, reference)
        checked += 1


@pytest.mark.acceptance(2, "tree-metric equals brute-force pairing oracle on all small trees")
def test_criterion_2_tree_metric_oracle_exhaustive():
    trees = restricted_trees(5)
    assert len(trees) == 237
    wrapped = [ExpressionTree(t) for t in trees]
    for i, a in enumerate(wrapped):
        for b in wrapped:
            assert tree_distance(a, b) == pytest.approx(
                brute_distance(a.root, b.root), abs=1e-12
            )


@pytest.mark.acceptance(3, "1% target noise yields ~40 dB SNR across seeds")
def test_criterion_3_noise_anchor():
    for scenario_id in ("drop_ball", "shm", "em_wave"):
        spec = scenario_spec(scenario_id)
        hits = 0
        for seed in range(100):
            d = generate(spec, SamplingRanges(n_samples=500), NoiseSpec(0.01, "target"), seed=seed)
            if 39.0 <= d.snr_db <= 41.0:
                hits += 1
        assert hits >= 95, f"{scenario_id}: only {hits}/100 seeds in [39, 41] dB"


@pytest.mark.acceptance(4, "verdict parser reproduces the few-shot scores and aggregation")
def test_criterion_4_critic_aggregation_anchor():
    cases = [
        ('[0.95, 0.80, 0.92, "Classic kinematics"]', (0.95, 0.80, 0.92)),
        ('[0.05, 0.70, 0.15, "Units mismatch"]', (0.05, 0.70, 0.15)),
        ('[0.90, 0.10, 0.40, "Needless nesting"]', (0.90, 0.10, 0.40)),
    ]
    for raw, expected in cases:
        v = parse_verdict(raw)
        assert (v.dim_corr, v.simp, v.sim) == expected
        assert abs(v.c - (1.0 - sum(expected) / 3.0)) <= 1e-12
    assert abs(parse_verdict(cases[0][0]).c - 0.11) <= 1e-9
    assert abs(parse_verdict(cases[1][0]).c - 0.70) <= 1e-9
    assert abs(parse_verdict(cases[2][0]).c - (1.0 - 1.4 / 3.0)) <= 1e-9


@pytest.mark.acceptance(5, "prompt variants A-H inject exactly their assigned components")
def test_criterion_5_prompt_variant_completeness():
    spec = scenario_spec("shm")
    equation = spec.gt_equation()
    expectations = {
        "A": (False, False, False),
        "B": (True, False, False),
        "C": (False, True, False),
        "D": (False, False, True),
        "E": (True, True, False),
        "F": (True, False, True),
        "G": (False, True, True),
        "H": (True, True, True),
    }
    for variant, (wants_vars, wants_exp, wants_gt) in expectations.items():
        prompt = build_prompt(equation, PromptContext.for_scenario(variant, spec))
        assert ("Variable descriptions:" in prompt) == wants_vars, variant
        assert ("Experiment description:" in prompt) == wants_exp, variant
        assert ("Ground-truth formula:" in prompt) == wants_gt, variant
        assert ("Context:" in prompt) == (variant != "A"), variant
    h_prompt = build_prompt(equation, PromptContext.for_scenario("H", spec))
    assert (
        h_prompt.index("Variable descriptions:")
        < h_prompt.index("Experiment description:")
        < h_prompt.index("Ground-truth formula:")
    )


@pytest.mark.acceptance(6, "composite-loss weights isolate e, s and c; degenerate L = 1")
def test_criterion_6_composite_loss_arithmetic():
    data = _linear_dataset(n=200)
    perfect = parse("x0", data.schema)
    b = composite_loss(perfect, data, FitnessWeights(1, 0, 0))
    assert abs(b.L - b.e) <= 1e-12 and b.e == 0.0

    single = ExpressionTree(constant(1.0))
    b = composite_loss(single, data, FitnessWeights(0, 1, 0))
    assert abs(b.L - 1.0 / 511.0) <= 1e-12

    b = composite_loss(perfect, data, FitnessWeights(0, 0, 1), critic_c=0.0)
    assert abs(b.L - 0.0) <= 1e-12
    b = composite_loss(perfect, data, FitnessWeights(0, 0, 1), critic_c=0.25)
    assert abs(b.L - 0.25) <= 1e-12

    degenerate = parse("exp(exp(exp(x0)))", data.schema)
    b = composite_loss(degenerate, data, FitnessWeights(1, 0, 0))
    assert b.degenerate and b.L == 1.0


@pytest.mark.acceptance(7, "engine runs are deterministic with non-increasing traces")
def test_criterion_7_engine_determinism_and_monotonicity():
    spec = scenario_spec("drop_ball")
    data = generate(spec, SamplingRanges(n_samples=500), NoiseSpec(0.01, "target"), seed=5)
    cfg = EngineConfig(
        population_size=100,
        generations=50,
        seed=11,
        early_stop=EarlyStopPolicy(rel_improvement=0.0, patience_generations=3),
    )
    first = run(data, cfg, MockCritic(spec))
    second = run(data, cfg, MockCritic(spec))
    assert first.best_expression == second.best_expression
    assert first.trace == second.trace
    assert first.critic_calls == second.critic_calls
    assert first.generations_used == second.generations_used == 50
    losses = [l for _, l in first.trace]
    assert all(a >= b for a, b in zip(losses, losses[1:]))


@pytest.mark.acceptance(8, "constant-fitness population halts after exactly patience + 1 generations")
def test_criterion_8_early_stopping():
    data = _linear_dataset(n=100)
    cfg = EngineConfig(
        population_size=20,
        generations=50,
        max_depth=0,
        init_depth=0,
        weights=FitnessWeights(0, 1, 0),
        operator_set=frozenset({"add", "sub", "mul"}),
        seed=3,
    )
    res = run(data, cfg, NullCritic())
    assert res.generations_used == cfg.early_stop.patience_generations + 1


@pytest.mark.acceptance(9, "desk-scale recovery: oscillator and exact linear targets")
def test_criterion_9_desk_scale_recovery():
    # Oscillator data uses the ratio-frequency generation flag: this
    # operator set has no power operator, so the square-root form is not
    # even expressible in the search space.
    spec = scenario_spec("shm", shm_frequency="ratio")
    ops = frozenset({"add", "sub", "mul", "div", "cos"})
    weights = FitnessWeights.normalized(1.0, 0.05, 0.0)
    wins = 0
    for seed in (0, 1, 2):
        data = generate(spec, SamplingRanges(n_samples=500), NoiseSpec(0.0, "none"), seed=seed)
        cfg = EngineConfig(
            population_size=200,
            generations=100,
            operator_set=ops,
            weights=weights,
            seed=seed,
            max_depth=5,
            tournament_size=5,
            crossover_prob=0.0,
            mutation_prob=1.0,
            restart_after=0,
            early_stop=EarlyStopPolicy(rel_improvement=0.0, patience_generations=3),
        )
        res = run(data, cfg, NullCritic())
        holdout = generate(spec, SamplingRanges(n_samples=500), NoiseSpec(0.0, "none"),
                           seed=seed + 10_000)
        pred, _ = evaluate_batch(res.best_tree, holdout.X)
        _, _, r2 = fit_metrics(pred, holdout.y)
        wins += r2 >= 0.95
    assert wins >= 2, f"oscillator recovered on only {wins}/3 seeds"

    linear_wins = 0
    data = _linear_dataset(n=500, seed=0)
    for seed in (0, 1, 2):
        cfg = EngineConfig(
            population_size=100,
            generations=50,
            operator_set=frozenset({"add", "sub", "mul"}),
            weights=FitnessWeights(1, 0, 0),
            seed=seed,
        )
        res = run(data, cfg, NullCritic())
        linear_wins += res.best.L <= 1e-6
    assert linear_wins >= 2, f"linear target recovered on only {linear_wins}/3 seeds"


@pytest.mark.acceptance(10, "mock-critic guidance does not trail the null critic on structure")
def test_criterion_10_critic_guidance_smoke():
    spec = scenario_spec("drop_ball")
    ops = frozenset({"add", "sub", "mul", "div", "pow"})
    weights = FitnessWeights(0.6, 0.1, 0.3)

    def best_structure(seed, critic):
        data = generate(spec, SamplingRanges(n_samples=500), NoiseSpec(0.01, "target"), seed=seed)
        cfg = EngineConfig(
            population_size=200,
            generations=100,
            operator_set=ops,
            weights=weights,
            seed=seed,
            max_depth=5,
            tournament_size=5,
            crossover_prob=0.0,
            mutation_prob=1.0,
            restart_after=0,
            early_stop=EarlyStopPolicy(rel_improvement=0.0, patience_generations=3),
        )
        res = run(data, cfg, critic)
        return tree_score(res.best_tree, spec.gt_tree)

    seeds = range(5)
    null_mean = float(np.mean([best_structure(s, NullCritic()) for s in seeds]))
    mock_mean = float(np.mean([best_structure(s, MockCritic(spec)) for s in seeds]))
    assert mock_mean >= null_mean, f"mock {mock_mean:.4f} < null {null_mean:.4f}"


@pytest.mark.acceptance(11, "fit metrics match an independent reference to 1e-12")
def test_criterion_11_fit_metric_oracle():
    assert fit_metrics(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0])) == (0.0, 0.0, 1.0)
    rng = np.random.default_rng(7)
    for _ in range(1000):
        pred = rng.normal(0.0, 5.0, 10)
        truth = rng.normal(0.0, 5.0, 10)
        got = fit_metrics(pred, truth)
        want = ref_fit_metrics(pred.tolist(), truth.tolist())
        for g, w in zip(got, want):
            assert g == pytest.approx(w, rel=1e-12, abs=1e-15)


@pytest.mark.acceptance(12, "nine-cell baseline bench is byte-identical across reruns")
def test_criterion_12_bench_reproducibility(tmp_path):
    plan = {
        "scenarios": ["drop_ball", "shm", "em_wave"],
        "presets": ["deap_like", "gplearn_like", "pysr_like"],
        "critics": [{"kind": "null"}],
        "repeats": 1,
        "base_seed": 42,
    }
    plan_path = tmp_path / "baseline_plan.json"
    plan_path.write_text(json.dumps(plan, indent=2))

    codes = []
    for name in ("run1", "run2"):
        codes.append(cli.main(["bench", "--plan", str(plan_path), "--out-dir", str(tmp_path / name)]))
    assert codes == [0, 0]

    first = (tmp_path / "run1/reports.jsonl").read_text()
    second = (tmp_path / "run2/reports.jsonl").read_text()
    assert len(first.splitlines()) == 9
    assert first == second
    for artifact in ("benchmark.csv", "summary.txt"):
        assert (tmp_path / "run1" / artifact).read_bytes() == (tmp_path / "run2" / artifact).read_bytes()
    statuses = {json.loads(line)["status"] for line in first.splitlines()}
    assert statuses == {"ok"}
