"""eqsearch: a symbolic regression workbench for physics equation discovery.

Searches for analytic equations fitting synthetic physics data with a
genetic-programming engine whose loss combines data fit, expression size,
and a plausibility score from a pluggable knowledge critic, then grades
recovered equations against the ground truth with a structural tree score.
"""

from .bench import ExperimentPlan, RunReport, fit_metrics, render_tables, run_plan
from .critic import (
    CriticError,
    CriticTransportError,
    CriticVerdict,
    LlmCritic,
    LlmEndpoint,
    MockCritic,
    NullCritic,
    PromptContext,
    VerdictCache,
    VerdictParseError,
    build_prompt,
    mock_score,
    parse_verdict,
    score,
)
from .datasets import (
    Dataset,
    DatasetFormatError,
    NoiseSpec,
    SamplingRanges,
    ScenarioSpec,
    generate,
    read_dataset,
    scenario_from_dataset,
    scenario_spec,
    snr_db,
    write_dataset,
)
from .engine import (
    EarlyStopPolicy,
    EngineConfig,
    FitnessBreakdown,
    FitnessWeights,
    SearchResult,
    best_trace,
    composite_loss,
    preset,
    run,
    size_cap,
)
from .estimator import SymbolicRegressor
from .metric import TreeDistanceConfig, tree_distance, tree_score
from .tree import (
    ExpressionError,
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

__version__ = "0.1.0"
