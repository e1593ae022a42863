"""Command-line entry point: dataset generation, single searches, equation
comparison, critic probing, and experiment plans.

Every subcommand accepts ``--config FILE`` (JSON) supplying defaults that
explicit flags override, and echoes the fully resolved configuration into
its output metadata.  Exit codes: 0 success, 1 validation error, 2 critic
transport error, 3 partial bench failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .bench import ExperimentPlan, render_tables, run_plan
from .critic import (
    CriticTransportError,
    LlmCritic,
    LlmEndpoint,
    MockCritic,
    NullCritic,
    PromptContext,
    VerdictCache,
    build_prompt,
    mock_score,
    score,
)
from .datasets import (
    DatasetFormatError,
    NoiseSpec,
    SamplingRanges,
    generate,
    read_dataset,
    scenario_from_dataset,
    scenario_spec,
    write_dataset,
)
from .engine import EngineConfig, FitnessWeights, preset, run
from .metric import TreeDistanceConfig, tree_distance, tree_score
from .tree import ExpressionError, VariableSchema, parse, render

__all__ = ["main", "entrypoint"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route through the CLI's
    # own exit-code convention instead (validation errors are 1).
    def error(self, message):
        raise _UsageError(message)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise _UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise _UsageError(f"config file {path} must contain a JSON object")
    return payload


class _Resolver:
    """Flags override config-file values, which override defaults; the
    source of every resolved option is recorded for output metadata."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        self.config = config
        self.provenance: dict[str, dict] = {}

    def get(self, name: str, default=None, required: bool = False):
        flag = getattr(self.args, name, None)
        if flag is not None:
            value, source = flag, "flag"
        elif name in self.config:
            value, source = self.config[name], "config"
        else:
            value, source = default, "default"
        if required and value is None:
            raise _UsageError(f"missing required option --{name.replace('_', '-')}")
        self.provenance[name] = {"value": value, "source": source}
        return value


def _build_parser() -> _Parser:
    parser = _Parser(prog="eqsearch", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen", parents=[], help="generate a synthetic dataset")
    p.add_argument("--scenario", choices=["drop_ball", "shm", "em_wave"])
    p.add_argument("--n", type=int)
    p.add_argument("--noise-level", dest="noise_level", type=float)
    p.add_argument("--noise-target", dest="noise_target",
                   choices=["features", "target", "both", "none"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--shm-frequency", dest="shm_frequency", choices=["sqrt_ratio", "ratio"])
    p.add_argument("--config")

    p = sub.add_parser("search", help="run one symbolic-regression search")
    p.add_argument("--data")
    p.add_argument("--preset", choices=["deap_like", "gplearn_like", "pysr_like"])
    p.add_argument("--weights", help="three comma-separated loss weights summing to 1")
    p.add_argument("--critic", help="null, mock, or an endpoint base URL")
    p.add_argument("--variant", choices=list("ABCDEFGH"))
    p.add_argument("--model", dest="model")
    p.add_argument("--seed", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--population-size", dest="population_size", type=int)
    p.add_argument("--cache")
    p.add_argument("--out")
    p.add_argument("--config")

    p = sub.add_parser("compare", help="compare two equations structurally")
    p.add_argument("--eq-a", dest="eq_a")
    p.add_argument("--eq-b", dest="eq_b")
    p.add_argument("--schema", help="comma-separated variable names")
    p.add_argument("--alpha", type=float)
    p.add_argument("--no-normalize", dest="no_normalize", action="store_true", default=None)
    p.add_argument("--config")

    p = sub.add_parser("critic", help="score one equation with a critic")
    p.add_argument("--eq")
    p.add_argument("--variant", choices=list("ABCDEFGH"))
    p.add_argument("--endpoint", help="mock or an endpoint base URL")
    p.add_argument("--scenario", choices=["drop_ball", "shm", "em_wave"])
    p.add_argument("--model", dest="model")
    p.add_argument("--shm-frequency", dest="shm_frequency", choices=["sqrt_ratio", "ratio"])
    p.add_argument("--show-prompt", dest="show_prompt", action="store_true", default=None)
    p.add_argument("--config")

    p = sub.add_parser("bench", help="run an experiment plan")
    p.add_argument("--plan")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--config")

    return parser


def _cmd_gen(args) -> int:
    r = _Resolver(args, _load_config(args.config))
    scenario_id = r.get("scenario", required=True)
    n = int(r.get("n", 500))
    level = float(r.get("noise_level", 0.01))
    target = r.get("noise_target", "target")
    seed = int(r.get("seed", 0))
    out = r.get("out", required=True)
    shm_frequency = r.get("shm_frequency", "sqrt_ratio")

    spec = scenario_spec(scenario_id, shm_frequency)
    dataset = generate(spec, SamplingRanges(n_samples=n), NoiseSpec(level=level, target=target), seed)
    dataset.meta["resolved_options"] = r.provenance
    path = write_dataset(dataset, out)
    snr = "noiseless" if dataset.snr_db == float("inf") else f"{dataset.snr_db:.2f} dB"
    print(f"wrote {path} ({n} rows, {len(spec.schema)} feature columns); snr: {snr}")
    return 0


def _cmd_search(args) -> int:
    r = _Resolver(args, _load_config(args.config))
    data_path = r.get("data", required=True)
    preset_id = r.get("preset")
    weights_text = r.get("weights")
    critic_name = r.get("critic", "null")
    variant = r.get("variant", "A")
    model = r.get("model", "local")
    seed = int(r.get("seed", 0))
    generations = r.get("generations")
    population_size = r.get("population_size")
    cache_path = r.get("cache")
    out = r.get("out")

    dataset = read_dataset(data_path)
    cfg = preset(preset_id) if preset_id else EngineConfig()
    overrides = {"seed": seed}
    if weights_text is not None:
        overrides["weights"] = FitnessWeights.parse(str(weights_text))
    if generations is not None:
        overrides["generations"] = int(generations)
    if population_size is not None:
        overrides["population_size"] = int(population_size)
    cfg = replace(cfg, **overrides)

    if critic_name == "null":
        critic = NullCritic()
    elif critic_name == "mock":
        critic = MockCritic(scenario_from_dataset(dataset))
    else:
        try:
            scenario = scenario_from_dataset(dataset)
            ctx = PromptContext.for_scenario(variant, scenario)
        except ValueError:
            if variant != "A":
                raise _UsageError(
                    f"variant {variant} needs scenario metadata the dataset does not carry"
                ) from None
            ctx = PromptContext(variant="A")
        critic = LlmCritic(
            LlmEndpoint(base_url=critic_name, model_name=model),
            ctx,
            dataset.schema,
            VerdictCache(cache_path),
        )

    result = run(dataset, cfg, critic)
    payload = result.to_dict()
    payload["resolved_options"] = r.provenance
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8", newline="\n")
    b = result.best
    print(f"best: {result.best_expression}")
    print(f"e={b.e:.6g} s={b.s:.6g} c={b.c:.6g} L={b.L:.6g} degenerate={b.degenerate}")
    print(f"generations: {result.generations_used}  critic calls: {result.critic_calls}")
    if out:
        print(f"wrote {out}")
    return 0


def _cmd_compare(args) -> int:
    r = _Resolver(args, _load_config(args.config))
    eq_a = r.get("eq_a", required=True)
    eq_b = r.get("eq_b", required=True)
    schema_text = r.get("schema", required=True)
    alpha = float(r.get("alpha", 0.5))
    raw = bool(r.get("no_normalize", False))

    schema = VariableSchema.simple([s.strip() for s in str(schema_text).split(",") if s.strip()])
    cfg = TreeDistanceConfig(alpha=alpha, normalize=not raw)
    a = parse(str(eq_a), schema)
    b = parse(str(eq_b), schema)
    print(f"distance: {tree_distance(a, b, cfg):.6g}")
    print(f"score: {tree_score(a, b, cfg):.6g}")
    return 0


def _cmd_critic(args) -> int:
    r = _Resolver(args, _load_config(args.config))
    eq = r.get("eq", required=True)
    variant = r.get("variant", "A")
    endpoint_name = r.get("endpoint")
    scenario_id = r.get("scenario", required=True)
    model = r.get("model", "local")
    shm_frequency = r.get("shm_frequency", "sqrt_ratio")
    show_prompt = bool(r.get("show_prompt", False))

    spec = scenario_spec(scenario_id, shm_frequency)
    tree = parse(str(eq), spec.schema)
    ctx = PromptContext.for_scenario(variant, spec)
    if show_prompt:
        print(build_prompt(render(tree, spec.schema), ctx))
        if endpoint_name is None:
            return 0
    if endpoint_name is None:
        raise _UsageError("missing required option --endpoint (or use --show-prompt)")
    if endpoint_name == "mock":
        verdict = mock_score(tree, spec)
    else:
        endpoint = LlmEndpoint(base_url=str(endpoint_name), model_name=model)
        verdict = score(tree, spec.schema, ctx, endpoint, VerdictCache())
    print(f"[{verdict.dim_corr:.4g}, {verdict.simp:.4g}, {verdict.sim:.4g}] c={verdict.c:.6g}")
    print(f"feedback: {verdict.feedback}")
    if verdict.flags:
        print(f"flags: {', '.join(verdict.flags)}")
    return 0


def _cmd_bench(args) -> int:
    r = _Resolver(args, _load_config(args.config))
    plan_path = r.get("plan", required=True)
    out_dir = r.get("out_dir", required=True)

    plan = ExperimentPlan.from_json(plan_path)
    reports = run_plan(plan)
    paths = render_tables(reports, out_dir, plan)
    failed = sum(1 for rep in reports if rep.status != "ok")
    print(f"{len(reports)} reports ({failed} failed)")
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 3 if failed else 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        handler = {
            "gen": _cmd_gen,
            "search": _cmd_search,
            "compare": _cmd_compare,
            "critic": _cmd_critic,
            "bench": _cmd_bench,
        }[args.command]
        return handler(args)
    except CriticTransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 2
    except (_UsageError, ExpressionError, DatasetFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
