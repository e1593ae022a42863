"""The pluggable knowledge critic.

A critic scores a candidate equation on three axes (dimensional consistency,
simplicity, physical realism) and aggregates them into a loss contribution
c = 1 - mean(scores), so 0 is best.  Three implementations share one
protocol: an HTTP client speaking the chat-completion wire format to any
LLM server, a deterministic rule-based mock for offline runs, and a null
critic that scores nothing.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import requests

from .datasets import ScenarioSpec
from .metric import tree_score
from .tree import (
    ExpressionTree,
    Node,
    NodeKind,
    VariableSchema,
    canonical_key,
    evaluate,
    iter_nodes,
    render,
    size,
)

__all__ = [
    "PROMPT_VARIANTS",
    "CriticError",
    "CriticTransportError",
    "VerdictParseError",
    "CriticVerdict",
    "PromptContext",
    "LlmEndpoint",
    "VerdictCache",
    "build_prompt",
    "parse_verdict",
    "score",
    "mock_score",
    "LlmCritic",
    "MockCritic",
    "NullCritic",
]

PROMPT_VARIANTS = ("A", "B", "C", "D", "E", "F", "G", "H")

# Which optional context components each prompt variant injects:
# vars = data-column descriptions, exp = experiment description,
# gt = the ground-truth formula.
_VARIANT_COMPONENTS: dict[str, tuple[str, ...]] = {
    "A": (),
    "B": ("vars",),
    "C": ("exp",),
    "D": ("gt",),
    "E": ("vars", "exp"),
    "F": ("vars", "gt"),
    "G": ("exp", "gt"),
    "H": ("vars", "exp", "gt"),
}


class CriticError(Exception):
    """Base class for critic failures the search must survive."""


class CriticTransportError(CriticError):
    pass


class VerdictParseError(CriticError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class CriticVerdict:
    """Scores in [0, 1] plus the aggregate c = 1 - (c1 + c2 + c3) / 3."""

    dim_corr: float
    simp: float
    sim: float
    feedback: str
    c: float
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("dim_corr", "simp", "sim"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        expected = 1.0 - (self.dim_corr + self.simp + self.sim) / 3.0
        if abs(self.c - expected) > 1e-12:
            raise ValueError(f"aggregate c {self.c} inconsistent with scores (expected {expected})")

    @classmethod
    def from_scores(
        cls, dim_corr: float, simp: float, sim: float, feedback: str, flags: tuple[str, ...] = ()
    ) -> "CriticVerdict":
        c = 1.0 - (dim_corr + simp + sim) / 3.0
        return cls(dim_corr, simp, sim, feedback, c, flags)

    def to_dict(self) -> dict:
        return {
            "dim_corr": self.dim_corr,
            "simp": self.simp,
            "sim": self.sim,
            "feedback": self.feedback,
            "c": self.c,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class PromptContext:
    """Optional context texts; the variant controls which ones are injected."""

    variant: str = "A"
    variable_descriptions: str | None = None
    experiment_description: str | None = None
    gt_formula: str | None = None

    def __post_init__(self):
        if self.variant not in PROMPT_VARIANTS:
            raise ValueError(f"variant must be one of {PROMPT_VARIANTS}, got {self.variant!r}")

    @classmethod
    def for_scenario(cls, variant: str, scenario: ScenarioSpec) -> "PromptContext":
        lines = []
        for name, unit, desc in zip(
            scenario.schema.names, scenario.schema.units, scenario.schema.descriptions
        ):
            lines.append(f"- {name}: {desc}" if desc else f"- {name} [{unit}]")
        lines.append(f"- y: {scenario.y_description}" if scenario.y_description else "- y")
        return cls(
            variant=variant,
            variable_descriptions="\n".join(lines),
            experiment_description=scenario.description,
            gt_formula=f"{scenario.y_name} = {scenario.gt_equation()}",
        )


@dataclass(frozen=True)
class LlmEndpoint:
    """Connection settings for a chat-completion server.

    Sampling temperature is pinned to zero so plausibility scores depend on
    model knowledge only; the auth token, if any, is read from the
    environment variable named by ``auth_env``.
    """

    base_url: str
    model_name: str = "local"
    temperature: float = 0.0
    timeout_s: float = 30.0
    max_retries: int = 3
    retry_backoff_s: float = 0.5
    auth_env: str = "EQSEARCH_LLM_TOKEN"

    def __post_init__(self):
        if self.temperature != 0.0:
            raise ValueError("temperature is fixed at 0 so verdicts are deterministic")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------

_PROMPT_HEAD = """
### ROLE
You are an expert *scientific-reasoning* assistant.
Return **ONLY** a Python-style list:
[dim_corr, simp, sim, "feedback"].

### METRICS
dim_corr . 0 (wrong) -> 1 (perfect)
simp     . 0 (complex) -> 1 (simple)
sim      . 0 (unrealistic) -> 1 (realistic)


### FEW-SHOT EXAMPLES
#1  Equation:  x = v0 * t + 0.5 * g * t^2
    Output:    [0.95, 0.80, 0.92, "Classic kinematics"]
#2  Equation:  E = m + c
    Output:    [0.05, 0.70, 0.15, "Units mismatch"]
#3  Equation:  y = sin(sin(x))
    Output:    [0.90, 0.10, 0.40, "Needless nesting"]

### TASK
Equation to evaluate:
"""

_CONTEXT_LABELS = {
    "vars": "Variable descriptions:",
    "exp": "Experiment description:",
    "gt": "Ground-truth formula:",
}


def build_prompt(equation: str, ctx: PromptContext) -> str:
    """Assemble the scoring prompt; byte-stable for identical inputs.

    The context block contains exactly the components assigned to the
    variant, in the order: variable descriptions, experiment description,
    ground-truth formula.
    """
    if not equation:
        raise ValueError("equation must be non-empty")
    parts = []
    available = {
        "vars": ctx.variable_descriptions,
        "exp": ctx.experiment_description,
        "gt": ctx.gt_formula,
    }
    for component in _VARIANT_COMPONENTS[ctx.variant]:
        text = available[component]
        if text is None:
            raise ValueError(f"variant {ctx.variant} requires the {component!r} context component")
        parts.append(f"{_CONTEXT_LABELS[component]}\n{text}")
    context = "\n\n".join(parts)
    context_block = f"Context:\n{context}" if context else ""
    return (
        f"{_PROMPT_HEAD}{equation}\n\n{context_block}\n\n"
        "Think step-by-step silently, then output the list only.\n"
    )


# ---------------------------------------------------------------------------
# Verdict parsing
# ---------------------------------------------------------------------------

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_VERDICT_RE = re.compile(
    rf"\[\s*({_NUM})\s*,\s*({_NUM})\s*,\s*({_NUM})\s*,\s*"
    r"(?:\"((?:[^\"\\]|\\.)*)\"|'((?:[^'\\]|\\.)*)')\s*\]"
)


def parse_verdict(raw: str) -> CriticVerdict:
    """Extract the first well-formed [num, num, num, "feedback"] list from a
    model response.  Out-of-range scores are clamped into [0, 1] and flagged;
    a response with no such list raises :class:`VerdictParseError`.
    """
    if not isinstance(raw, str):
        raise VerdictParseError("response is not text", raw=repr(raw))
    m = _VERDICT_RE.search(raw)
    if m is None:
        raise VerdictParseError("no well-formed score list in response", raw=raw)
    values = [float(m.group(i)) for i in (1, 2, 3)]
    feedback = m.group(4) if m.group(4) is not None else m.group(5)
    feedback = re.sub(r"\\(.)", r"\1", feedback or "")
    flags = []
    clamped = [min(1.0, max(0.0, v)) for v in values]
    if clamped != values:
        flags.append("clamped")
    if raw.strip() != m.group(0):
        flags.append("extra_text")
    return CriticVerdict.from_scores(*clamped, feedback=feedback, flags=tuple(flags))


# ---------------------------------------------------------------------------
# Verdict cache (persisted as JSON lines, one verdict per line)
# ---------------------------------------------------------------------------

class VerdictCache:
    """In-memory verdict store keyed by (canonical key, variant, model),
    optionally persisted as a JSON-lines file.  Safe for concurrent use."""

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[str, CriticVerdict] = {}
        if self._path is not None and self._path.exists():
            self._load()

    def _load(self):
        for line in self._path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                verdict = CriticVerdict(
                    dim_corr=d["dim_corr"],
                    simp=d["simp"],
                    sim=d["sim"],
                    feedback=d["feedback"],
                    c=d["c"],
                    flags=tuple(d.get("flags", [])),
                )
                self._entries[d["key"]] = verdict
            except (KeyError, TypeError, ValueError, json.JSONDecodeError):
                continue  # skip corrupt lines, the cache is advisory

    @staticmethod
    def make_key(tree_key: str, variant: str, model_name: str) -> str:
        return f"{tree_key}|{variant}|{model_name}"

    def get(self, key: str) -> CriticVerdict | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, verdict: CriticVerdict):
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = verdict
            if self._path is not None:
                record = {"key": key, **verdict.to_dict(),
                          "model": key.rsplit("|", 1)[-1],
                          "timestamp": datetime.now(timezone.utc).isoformat()}
                with self._path.open("a", encoding="utf-8", newline="\n") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


# ---------------------------------------------------------------------------
# Wire client
# ---------------------------------------------------------------------------

def _auth_headers(endpoint: LlmEndpoint) -> dict[str, str]:
    import os

    headers = {"Content-Type": "application/json"}
    token = os.environ.get(endpoint.auth_env, "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return headers


def request_completion(endpoint: LlmEndpoint, prompt: str) -> str:
    """POST one chat-completion request; retries transient transport errors
    with exponential backoff and raises :class:`CriticTransportError` once
    retries are exhausted."""
    url = endpoint.base_url.rstrip("/") + "/v1/chat/completions"
    payload = {
        "model": endpoint.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": 0,
        "max_tokens": 256,
    }
    last_error: Exception | None = None
    for attempt in range(endpoint.max_retries + 1):
        if attempt > 0:
            time.sleep(endpoint.retry_backoff_s * 2 ** (attempt - 1))
        try:
            resp = requests.post(
                url, json=payload, headers=_auth_headers(endpoint), timeout=endpoint.timeout_s
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_error = exc
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last_error = CriticTransportError(f"server returned HTTP {resp.status_code}")
            continue
        if resp.status_code != 200:
            raise CriticTransportError(f"server returned HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise CriticTransportError(f"malformed completion response: {exc}") from exc
    raise CriticTransportError(f"transport failed after {endpoint.max_retries + 1} attempts: {last_error}")


def score(
    tree: ExpressionTree,
    schema: VariableSchema,
    ctx: PromptContext,
    endpoint: LlmEndpoint,
    cache: VerdictCache | None = None,
) -> CriticVerdict:
    """Score one equation via the endpoint, reusing cached verdicts.

    A cache hit returns without any network traffic.
    """
    key = VerdictCache.make_key(canonical_key(tree), ctx.variant, endpoint.model_name)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    prompt = build_prompt(render(tree, schema), ctx)
    raw = request_completion(endpoint, prompt)
    verdict = parse_verdict(raw)
    if cache is not None:
        cache.put(key, verdict)
    return verdict


# ---------------------------------------------------------------------------
# Unit propagation for the mock critic
# ---------------------------------------------------------------------------

_DIMENSIONLESS = (0.0, 0.0, 0.0)
_WILD = None  # constants may absorb any units
_BASE_DIMS = {"kg": (1.0, 0.0, 0.0), "m": (0.0, 1.0, 0.0), "s": (0.0, 0.0, 1.0)}


def _parse_unit(text: str) -> tuple[float, float, float]:
    text = text.strip()
    if text in ("", "1", "rad"):
        return _DIMENSIONLESS
    dims = [0.0, 0.0, 0.0]
    for i, segment in enumerate(text.split("/")):
        sign = 1.0 if i == 0 else -1.0
        for factor in segment.split("*"):
            factor = factor.strip()
            if not factor or factor == "1":
                continue
            sym, _, exp_text = factor.partition("^")
            sym = sym.strip()
            if sym == "rad":
                continue
            if sym not in _BASE_DIMS:
                raise ValueError(f"unsupported unit symbol {sym!r} in {text!r}")
            exp = float(exp_text) if exp_text else 1.0
            base = _BASE_DIMS[sym]
            for j in range(3):
                dims[j] += sign * exp * base[j]
    return tuple(dims)


def _dims_equal(a, b) -> bool:
    return all(abs(x - y) <= 1e-9 for x, y in zip(a, b))


def _combine(a, b, sign: float):
    return tuple(x + sign * y for x, y in zip(a, b))


def _propagate_units(node: Node, units: list[tuple]) -> tuple:
    """Returns (dims or wildcard, violation count) for a subtree."""
    if node.kind is NodeKind.CONSTANT:
        return _WILD, 0
    if node.kind is NodeKind.VARIABLE:
        return units[node.var_index], 0
    if node.kind is NodeKind.UNARY:
        dims, violations = _propagate_units(node.children[0], units)
        if node.op == "neg":
            return dims, violations
        # exp/log/sin/cos require dimensionless arguments and are
        # dimensionless themselves.
        if dims is not _WILD and not _dims_equal(dims, _DIMENSIONLESS):
            violations += 1
        return _DIMENSIONLESS, violations
    left, lv = _propagate_units(node.children[0], units)
    right, rv = _propagate_units(node.children[1], units)
    violations = lv + rv
    if node.op in ("add", "sub"):
        if left is not _WILD and right is not _WILD:
            if not _dims_equal(left, right):
                violations += 1
            return left, violations
        if left is not _WILD:
            return left, violations
        if right is not _WILD:
            return right, violations
        return _WILD, violations
    if node.op in ("mul", "div"):
        if left is _WILD or right is _WILD:
            return _WILD, violations
        return _combine(left, right, 1.0 if node.op == "mul" else -1.0), violations
    # pow: the exponent must be dimensionless; a constant exponent scales the
    # base dimensions, a variable exponent demands a dimensionless base.
    if right is not _WILD and not _dims_equal(right, _DIMENSIONLESS):
        violations += 1
    exponent_value = None
    exponent_node = node.children[1]
    if all(n.kind is not NodeKind.VARIABLE for n in iter_nodes(exponent_node)):
        value, degenerate = evaluate(ExpressionTree(exponent_node), [])
        if not degenerate:
            exponent_value = value
    if left is _WILD:
        return _WILD, violations
    if exponent_value is not None:
        return tuple(d * exponent_value for d in left), violations
    if _dims_equal(left, _DIMENSIONLESS):
        return _DIMENSIONLESS, violations
    return _WILD, violations + 1


def mock_score(tree: ExpressionTree, scenario: ScenarioSpec) -> CriticVerdict:
    """Deterministic rule-based verdict standing in for an LLM.

    Dimensional consistency is checked by propagating the schema units up the
    tree (a quarter point off per violation); simplicity decays linearly with
    node count; realism is approximated by structural similarity to the
    scenario's ground truth.
    """
    units = [_parse_unit(u) for u in scenario.schema.units]
    dims, violations = _propagate_units(tree.root, units)
    target = _parse_unit(scenario.y_unit)
    if dims is not _WILD and not _dims_equal(dims, target):
        violations += 1
    dim_corr = max(0.0, 1.0 - 0.25 * violations)
    n_nodes = size(tree)
    simp = max(0.0, 1.0 - n_nodes / 31.0)
    sim = tree_score(tree, scenario.gt_tree)
    feedback = f"units: {violations} violation(s); {n_nodes} nodes; structure match {sim:.3f}"
    return CriticVerdict.from_scores(dim_corr, simp, sim, feedback=feedback)


# ---------------------------------------------------------------------------
# Critic handles (the protocol the search engine consumes)
# ---------------------------------------------------------------------------

class NullCritic:
    """A critic that declines to score; the engine keeps c neutral."""

    is_null = True

    def score_tree(self, tree: ExpressionTree) -> CriticVerdict | None:
        return None


class MockCritic:
    """Offline deterministic critic bound to a scenario."""

    is_null = False

    def __init__(self, scenario: ScenarioSpec):
        self.scenario = scenario

    def score_tree(self, tree: ExpressionTree) -> CriticVerdict:
        return mock_score(tree, self.scenario)


class LlmCritic:
    """Wire-backed critic bound to an endpoint, prompt context and cache."""

    is_null = False

    def __init__(
        self,
        endpoint: LlmEndpoint,
        ctx: PromptContext,
        schema: VariableSchema,
        cache: VerdictCache | None = None,
    ):
        self.endpoint = endpoint
        self.ctx = ctx
        self.schema = schema
        self.cache = cache if cache is not None else VerdictCache()

    def score_tree(self, tree: ExpressionTree) -> CriticVerdict:
        return score(tree, self.schema, self.ctx, self.endpoint, self.cache)
