"""Experiment harness: runs scenario x engine-preset x critic x noise
matrices, evaluates every recovered equation on a fresh noiseless holdout,
and writes machine- and human-readable reports.

Outputs are byte-reproducible for mock/null critics: anything time-dependent
goes to a separate run_meta.json that is excluded from golden comparisons.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .critic import LlmCritic, LlmEndpoint, MockCritic, NullCritic, PromptContext, VerdictCache
from .datasets import (
    NOISE_TARGETS,
    NoiseSpec,
    SamplingRanges,
    SCENARIO_IDS,
    generate,
    scenario_spec,
)
from .engine import EarlyStopPolicy, EngineConfig, FitnessWeights, PRESET_IDS, preset, run
from .metric import tree_score
from .tree import evaluate_batch

__all__ = [
    "CriticSetting",
    "ExperimentPlan",
    "RunReport",
    "fit_metrics",
    "run_plan",
    "render_tables",
]

_DEFAULT_NOISE_CELL = ("target", 0.01)


def fit_metrics(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float, float]:
    """Mean absolute error, mean squared error and R^2."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.size < 2:
        raise ValueError("pred and truth must have equal length >= 2")
    residual = pred - truth
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("zero truth variance: R^2 undefined")
    mae = float(np.mean(np.abs(residual)))
    mse = float(np.mean(residual * residual))
    r2 = 1.0 - float(np.sum(residual * residual)) / ss_tot
    return mae, mse, r2


@dataclass(frozen=True)
class CriticSetting:
    kind: str
    variant: str = "A"
    base_url: str | None = None
    model_name: str = "local"

    def __post_init__(self):
        if self.kind not in ("null", "mock", "http"):
            raise ValueError(f"critic kind must be null, mock or http, got {self.kind!r}")
        if self.kind == "http" and not self.base_url:
            raise ValueError("http critic requires a base_url")

    @property
    def label(self) -> str:
        if self.kind == "http":
            return self.model_name
        return self.kind

    @classmethod
    def from_dict(cls, d: dict) -> "CriticSetting":
        if "kind" not in d:
            raise ValueError("critic entry missing field 'kind'")
        return cls(
            kind=d["kind"],
            variant=d.get("variant", "A"),
            base_url=d.get("base_url"),
            model_name=d.get("model_name", d.get("model", "local")),
        )

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "variant": self.variant}
        if self.kind == "http":
            out["base_url"] = self.base_url
            out["model_name"] = self.model_name
        return out


@dataclass(frozen=True)
class ExperimentPlan:
    scenarios: tuple[str, ...]
    presets: tuple[str, ...]
    critics: tuple[CriticSetting, ...]
    noise_axis: tuple[tuple[str, float], ...] = ()
    repeats: int = 3
    base_seed: int = 0
    n_samples: int = 500
    shm_frequency: str = "sqrt_ratio"
    engine: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenarios:
            raise ValueError("plan needs at least one scenario")
        if not self.presets:
            raise ValueError("plan needs at least one preset")
        if not self.critics:
            raise ValueError("plan needs at least one critic")
        for s in self.scenarios:
            if s not in SCENARIO_IDS:
                raise ValueError(f"unknown scenario {s!r}")
        for p in self.presets:
            if p not in PRESET_IDS:
                raise ValueError(f"unknown preset {p!r}")
        for target, level in self.noise_axis:
            if target not in NOISE_TARGETS:
                raise ValueError(f"unknown noise target {target!r}")
            if level < 0:
                raise ValueError(f"noise level must be >= 0, got {level}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        for name in ("scenarios", "presets", "critics", "base_seed"):
            if name not in d:
                raise ValueError(f"plan missing field {name!r}")
        return cls(
            scenarios=tuple(d["scenarios"]),
            presets=tuple(d["presets"]),
            critics=tuple(CriticSetting.from_dict(c) for c in d["critics"]),
            noise_axis=tuple((str(n["target"]), float(n["level"])) for n in d.get("noise_axis", [])),
            repeats=int(d.get("repeats", 3)),
            base_seed=int(d["base_seed"]),
            n_samples=int(d.get("n_samples", 500)),
            shm_frequency=str(d.get("shm_frequency", "sqrt_ratio")),
            engine=dict(d.get("engine", {})),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentPlan":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"plan file is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ValueError("plan file must contain a JSON object")
        return cls.from_dict(payload)


@dataclass
class RunReport:
    scenario: str
    preset: str
    critic_label: str
    variant: str
    noise_target: str
    noise_level: float
    repeat: int
    seed: int
    mae: float | None = None
    mse: float | None = None
    r2: float | None = None
    tree_score: float | None = None
    best_equation: str = ""
    generations_used: int = 0
    critic_calls: int = 0
    status: str = "ok"
    failure: str = ""
    config: dict = field(default_factory=dict)
    config_sources: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def cell_key(self) -> tuple:
        return (
            self.scenario,
            self.critic_label,
            self.variant,
            self.preset,
            self.noise_target,
            self.noise_level,
            self.repeat,
        )

    def to_jsonl_dict(self) -> dict:
        # wall_time_s deliberately omitted: report files must be
        # byte-identical across reruns of the same plan.
        return {
            "scenario": self.scenario,
            "preset": self.preset,
            "critic": self.critic_label,
            "variant": self.variant,
            "noise_target": self.noise_target,
            "noise_level": self.noise_level,
            "repeat": self.repeat,
            "seed": self.seed,
            "mae": self.mae,
            "mse": self.mse,
            "r2": self.r2,
            "tree_score": self.tree_score,
            "best_equation": self.best_equation,
            "generations_used": self.generations_used,
            "critic_calls": self.critic_calls,
            "status": self.status,
            "failure": self.failure,
            "config": self.config,
            "config_sources": self.config_sources,
        }


def _derive_seed(base_seed: int, *parts) -> int:
    text = "|".join(str(p) for p in (base_seed, *parts))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % 2**63


def _apply_engine_overrides(cfg: EngineConfig, overrides: dict) -> tuple[EngineConfig, dict]:
    """Apply plan-level engine overrides; returns the config and a map of
    field name -> provenance."""
    sources = {name: "preset" for name in cfg.to_dict()}
    if not overrides:
        return cfg, sources
    kwargs = {}
    for name, value in overrides.items():
        if name == "weights":
            kwargs[name] = value if isinstance(value, FitnessWeights) else FitnessWeights(*value)
        elif name == "early_stop":
            kwargs[name] = EarlyStopPolicy(**value) if isinstance(value, dict) else value
        elif name == "operator_set":
            kwargs[name] = frozenset(value)
        elif name == "const_range":
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
        sources[name] = "plan"
    return replace(cfg, **kwargs), sources


def _build_critic(setting: CriticSetting, spec, cache: VerdictCache):
    if setting.kind == "null":
        return NullCritic()
    if setting.kind == "mock":
        return MockCritic(spec)
    endpoint = LlmEndpoint(base_url=setting.base_url, model_name=setting.model_name)
    ctx = PromptContext.for_scenario(setting.variant, spec)
    return LlmCritic(endpoint, ctx, spec.schema, cache)


def run_plan(plan: ExperimentPlan) -> list[RunReport]:
    """Execute every plan cell x repeat; failures in one cell never abort the
    others.  Per-cell seeds are derived from the base seed and the cell
    identifiers, and metrics are computed on a freshly generated noiseless
    holdout of the same scenario."""
    noise_cells = plan.noise_axis if plan.noise_axis else (_DEFAULT_NOISE_CELL,)
    cache = VerdictCache()
    reports: list[RunReport] = []
    for scenario_id, preset_id, setting, (noise_target, noise_level), repeat in itertools.product(
        plan.scenarios, plan.presets, plan.critics, noise_cells, range(plan.repeats)
    ):
        cell = (scenario_id, preset_id, setting.label, setting.variant, noise_target, noise_level, repeat)
        train_seed = _derive_seed(plan.base_seed, *cell, "train")
        report = RunReport(
            scenario=scenario_id,
            preset=preset_id,
            critic_label=setting.label,
            variant=setting.variant,
            noise_target=noise_target,
            noise_level=noise_level,
            repeat=repeat,
            seed=train_seed,
        )
        started = time.perf_counter()
        try:
            spec = scenario_spec(scenario_id, plan.shm_frequency)
            ranges = SamplingRanges(n_samples=plan.n_samples)
            data = generate(spec, ranges, NoiseSpec(level=noise_level, target=noise_target), train_seed)
            cfg, sources = _apply_engine_overrides(preset(preset_id), plan.engine)
            cfg = replace(cfg, seed=_derive_seed(plan.base_seed, *cell, "search"))
            sources["seed"] = "derived"
            critic = _build_critic(setting, spec, cache)
            result = run(data, cfg, critic)

            holdout = generate(
                spec, ranges, NoiseSpec(level=0.0, target="none"),
                _derive_seed(plan.base_seed, *cell, "holdout"),
            )
            pred, _ = evaluate_batch(result.best_tree, holdout.X)
            mae, mse, r2 = fit_metrics(pred, holdout.y)
            report.mae = mae
            report.mse = mse
            report.r2 = r2
            report.tree_score = tree_score(result.best_tree, spec.gt_tree)
            report.best_equation = result.best_expression
            report.generations_used = result.generations_used
            report.critic_calls = result.critic_calls
            report.config = cfg.to_dict()
            report.config_sources = sources
        except Exception as exc:  # per-cell isolation
            report.status = "failed"
            report.failure = f"{type(exc).__name__}: {exc}"
        report.wall_time_s = time.perf_counter() - started
        reports.append(report)
    return reports


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

_METRIC_COLUMNS = ("mae", "mse", "r2", "tree_score")


def _median_cell(reports: list[RunReport], metric: str) -> float | None:
    values = [getattr(r, metric) for r in reports if r.status == "ok" and getattr(r, metric) is not None]
    if not values:
        return None
    return statistics.median(values)


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.6f}"


def _group(reports, key_fn) -> dict:
    groups: dict = {}
    for r in reports:
        groups.setdefault(key_fn(r), []).append(r)
    return groups


def render_tables(reports: list[RunReport], out_dir: str | Path, plan: ExperimentPlan) -> dict[str, Path]:
    """Write the JSON-lines report, the pivot CSVs and a text summary.

    Cells are medians over repeats; groups follow the three experiment
    shapes (benchmark, prompt sensitivity, noise robustness).
    """
    if not reports:
        raise ValueError("no reports to render")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = sorted(reports, key=lambda r: r.cell_key())
    paths: dict[str, Path] = {}

    jsonl = out_dir / "reports.jsonl"
    with jsonl.open("w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_jsonl_dict()) + "\n")
    paths["reports"] = jsonl

    # Benchmark pivot: scenario x critic x preset -> metric medians.
    bench_rows = ["scenario,critic,preset,mae,mse,r2,tree_score"]
    bench_groups = _group(reports, lambda r: (r.scenario, r.critic_label, r.preset))
    for key in sorted(bench_groups):
        cells = [_fmt(_median_cell(bench_groups[key], m)) for m in _METRIC_COLUMNS]
        bench_rows.append(",".join([*key, *cells]))
    bench_csv = out_dir / "benchmark.csv"
    bench_csv.write_text("\n".join(bench_rows) + "\n", encoding="utf-8", newline="\n")
    paths["benchmark"] = bench_csv

    # Prompt-sensitivity pivot, only when several variants were exercised.
    variants = sorted({r.variant for r in reports})
    if len(variants) > 1:
        prompt_rows = ["variant,critic,preset,mae,mse,r2,tree_score"]
        prompt_groups = _group(reports, lambda r: (r.variant, r.critic_label, r.preset))
        for key in sorted(prompt_groups):
            cells = [_fmt(_median_cell(prompt_groups[key], m)) for m in _METRIC_COLUMNS]
            prompt_rows.append(",".join([*key, *cells]))
        prompt_csv = out_dir / "prompts.csv"
        prompt_csv.write_text("\n".join(prompt_rows) + "\n", encoding="utf-8", newline="\n")
        paths["prompts"] = prompt_csv

    # Noise pivot: tree score per scenario x preset across noise cells.
    if plan.noise_axis:
        noise_cells = sorted({(r.noise_target, r.noise_level) for r in reports})
        header = ["scenario,preset"] + [f"{t}_{level:g}" for t, level in noise_cells]
        noise_rows = [",".join(header)]
        noise_groups = _group(reports, lambda r: (r.scenario, r.preset))
        for key in sorted(noise_groups):
            row = list(key)
            for cell in noise_cells:
                sub = [r for r in noise_groups[key] if (r.noise_target, r.noise_level) == cell]
                row.append(_fmt(_median_cell(sub, "tree_score")))
            noise_rows.append(",".join(row))
        noise_csv = out_dir / "noise.csv"
        noise_csv.write_text("\n".join(noise_rows) + "\n", encoding="utf-8", newline="\n")
        paths["noise"] = noise_csv

    # Text summary with per-scenario best cells (max tree score, mae ties).
    lines = [f"reports: {len(reports)}  ok: {sum(r.status == 'ok' for r in reports)}  "
             f"failed: {sum(r.status != 'ok' for r in reports)}"]
    for scenario in sorted({r.scenario for r in reports}):
        keys = sorted(k for k in bench_groups if k[0] == scenario)
        scored = []
        for key in keys:
            ts = _median_cell(bench_groups[key], "tree_score")
            mae = _median_cell(bench_groups[key], "mae")
            if ts is not None:
                scored.append((-ts, mae if mae is not None else math.inf, key))
        if scored:
            _nts, _mae, best_key = min(scored)
            lines.append(
                f"{scenario}: best critic={best_key[1]} preset={best_key[2]} "
                f"tree_score={_fmt(-_nts)} mae={_fmt(_mae if _mae != math.inf else None)}"
            )
        else:
            lines.append(f"{scenario}: no successful cells")
    for r in reports:
        if r.status != "ok":
            lines.append(f"FAILED {r.cell_key()}: {r.failure}")
    summary = out_dir / "summary.txt"
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    paths["summary"] = summary

    # Timing and other non-reproducible run facts live here, excluded from
    # golden comparisons.
    meta = {
        "written_at": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": {str(r.cell_key()): round(r.wall_time_s, 3) for r in reports},
    }
    meta_path = out_dir / "run_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8", newline="\n")
    paths["meta"] = meta_path
    return paths
