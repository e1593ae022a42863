"""scikit-learn estimator facade over the search engine.

``SymbolicRegressor`` exposes the genetic search as a regular fit/predict
regressor so it composes with pipelines, grid search and model selection
utilities; the functional engine API remains available for workflows that
operate on :class:`~eqsearch.datasets.Dataset` objects directly.
"""

from __future__ import annotations

import math

from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datasets import Dataset, NoiseSpec
from .engine import EarlyStopPolicy, EngineConfig, FitnessWeights, preset, run
from .tree import VariableSchema, evaluate_batch

__all__ = ["SymbolicRegressor"]


class SymbolicRegressor(RegressorMixin, BaseEstimator):
    """Genetic-programming symbolic regression estimator.

    Parameters mirror the engine configuration; ``preset`` (one of
    deap_like, gplearn_like, pysr_like) supplies the operator set and inner
    loss when ``operator_set``/``inner_loss`` are left as None.  ``critic``
    accepts any critic handle (mock, LLM-backed, or None for no critic).

    Attributes after fit: ``best_tree_``, ``best_expression_``, ``result_``.
    """

    def __init__(
        self,
        preset=None,
        population_size=100,
        generations=50,
        crossover_prob=0.6,
        mutation_prob=0.05,
        tournament_size=3,
        max_depth=8,
        init_depth=1,
        operator_set=None,
        weights=(0.6, 0.1, 0.3),
        inner_loss=None,
        critic=None,
        critic_budget=10,
        early_stop_rel_improvement=0.001,
        early_stop_patience=3,
        const_range=(-5.0, 5.0),
        feature_names=None,
        feature_units=None,
        random_state=0,
    ):
        self.preset = preset
        self.population_size = population_size
        self.generations = generations
        self.crossover_prob = crossover_prob
        self.mutation_prob = mutation_prob
        self.tournament_size = tournament_size
        self.max_depth = max_depth
        self.init_depth = init_depth
        self.operator_set = operator_set
        self.weights = weights
        self.inner_loss = inner_loss
        self.critic = critic
        self.critic_budget = critic_budget
        self.early_stop_rel_improvement = early_stop_rel_improvement
        self.early_stop_patience = early_stop_patience
        self.const_range = const_range
        self.feature_names = feature_names
        self.feature_units = feature_units
        self.random_state = random_state

    def _build_config(self) -> EngineConfig:
        base = preset(self.preset) if self.preset is not None else EngineConfig()
        operator_set = self.operator_set if self.operator_set is not None else base.operator_set
        inner_loss = self.inner_loss if self.inner_loss is not None else base.inner_loss
        weights = (
            self.weights
            if isinstance(self.weights, FitnessWeights)
            else FitnessWeights(*self.weights)
        )
        return EngineConfig(
            population_size=self.population_size,
            generations=self.generations,
            crossover_prob=self.crossover_prob,
            mutation_prob=self.mutation_prob,
            tournament_size=self.tournament_size,
            max_depth=self.max_depth,
            init_depth=self.init_depth,
            operator_set=frozenset(operator_set),
            weights=weights,
            early_stop=EarlyStopPolicy(
                rel_improvement=self.early_stop_rel_improvement,
                patience_generations=self.early_stop_patience,
            ),
            inner_loss=inner_loss,
            critic_budget=self.critic_budget,
            const_range=tuple(self.const_range),
            seed=self.random_state,
        )

    def _build_schema(self, n_features: int) -> VariableSchema:
        names = self.feature_names or [f"x{i}" for i in range(n_features)]
        if len(names) != n_features:
            raise ValueError(f"feature_names has {len(names)} entries for {n_features} features")
        units = self.feature_units or ["1"] * n_features
        if len(units) != n_features:
            raise ValueError(f"feature_units has {len(units)} entries for {n_features} features")
        return VariableSchema(tuple(names), tuple(units), ("",) * n_features)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        schema = self._build_schema(X.shape[1])
        data = Dataset(
            X=X,
            y=y,
            schema=schema,
            scenario="user",
            noise=NoiseSpec(level=0.0, target="none"),
            seed=self.random_state,
            snr_db=math.inf,
        )
        result = run(data, self._build_config(), critic=self.critic)
        self.n_features_in_ = X.shape[1]
        self.schema_ = schema
        self.result_ = result
        self.best_tree_ = result.best_tree
        self.best_expression_ = result.best_expression
        return self

    def predict(self, X):
        check_is_fitted(self, "best_tree_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        values, _degenerate = evaluate_batch(self.best_tree_, X)
        return values
