"""Synthetic physics datasets: free fall, simple harmonic motion, and a
damped electromagnetic wave.

Every scenario samples the same five independent parameters per row (mass,
characteristic length, initial height/displacement, damping coefficient,
time bounded by sqrt(2h/g)) and computes the clean target by evaluating the
scenario's ground-truth tree on the row, so generated data and the reference
equation can never drift apart.  Zero-mean Gaussian noise scaled by the
clean signal's standard deviation is then applied to the requested columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tree import ExpressionTree, VariableSchema, evaluate_batch, parse, render

__all__ = [
    "GRAVITY",
    "SCENARIO_IDS",
    "NOISE_TARGETS",
    "ScenarioSpec",
    "SamplingRanges",
    "NoiseSpec",
    "Dataset",
    "DatasetFormatError",
    "scenario_spec",
    "scenario_from_dataset",
    "generate",
    "snr_db",
    "write_dataset",
    "read_dataset",
]

GRAVITY = 9.81

SCENARIO_IDS = ("drop_ball", "shm", "em_wave")
NOISE_TARGETS = ("features", "target", "both", "none")


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files."""


@dataclass(frozen=True)
class ScenarioSpec:
    """A physical scenario: its ground-truth equation, column schema, and the
    natural-language experiment description used by critic prompts."""

    id: str
    gt_tree: ExpressionTree
    schema: VariableSchema
    description: str
    y_name: str
    y_unit: str
    y_description: str
    extras: dict = field(default_factory=dict)

    def gt_equation(self) -> str:
        return render(self.gt_tree, self.schema)


@dataclass(frozen=True)
class SamplingRanges:
    """Uniform sampling ranges for the five per-row parameters.

    The time column is sampled within [0, sqrt(2 h / g)] per row, where h is
    that row's third parameter; ``max_steps`` is kept as a compatibility cap
    on per-row resampling but direct bounded sampling never needs it.
    """

    mass_kg: tuple[float, float] = (0.1, 10.0)
    char_length_m: tuple[float, float] = (0.01, 0.5)
    initial_height_m: tuple[float, float] = (1.0, 100.0)
    damping_kg_per_s: tuple[float, float] = (0.0, 1.0)
    n_samples: int = 500
    max_steps: int = 1000

    def __post_init__(self):
        for name in ("mass_kg", "char_length_m", "initial_height_m", "damping_kg_per_s"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ValueError(f"degenerate range for {name}: ({lo}, {hi})")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def to_dict(self) -> dict:
        return {
            "mass_kg": list(self.mass_kg),
            "char_length_m": list(self.char_length_m),
            "initial_height_m": list(self.initial_height_m),
            "damping_kg_per_s": list(self.damping_kg_per_s),
            "n_samples": self.n_samples,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingRanges":
        return cls(
            mass_kg=tuple(d["mass_kg"]),
            char_length_m=tuple(d["char_length_m"]),
            initial_height_m=tuple(d["initial_height_m"]),
            damping_kg_per_s=tuple(d["damping_kg_per_s"]),
            n_samples=int(d["n_samples"]),
            max_steps=int(d["max_steps"]),
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Noise level as a fraction of the clean signal's standard deviation,
    applied to the columns named by ``target``."""

    level: float = 0.01
    target: str = "target"

    def __post_init__(self):
        if self.level < 0 or not math.isfinite(self.level):
            raise ValueError(f"noise level must be >= 0, got {self.level}")
        if self.target not in NOISE_TARGETS:
            raise ValueError(f"noise target must be one of {NOISE_TARGETS}, got {self.target!r}")

    def to_dict(self) -> dict:
        return {"level": self.level, "target": self.target}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(level=float(d["level"]), target=str(d["target"]))


@dataclass
class Dataset:
    """Predictor matrix plus target vector with provenance metadata."""

    X: np.ndarray
    y: np.ndarray
    schema: VariableSchema
    scenario: str
    noise: NoiseSpec
    seed: int
    snr_db: float = math.inf
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be n x m and y length n")
        if self.X.shape[1] != len(self.schema):
            raise ValueError("X column count must match the schema")
        if not np.isfinite(self.X).all() or not np.isfinite(self.y).all():
            raise ValueError("dataset contains non-finite entries")


# ---------------------------------------------------------------------------
# Scenario definitions
#
# The five sampled parameters keep their positional ranges in every scenario;
# each scenario names the columns by the role they play in its ground truth.
# Columns a scenario does not use act as distractor features.
# ---------------------------------------------------------------------------

_DROP_BALL_SCHEMA = VariableSchema(
    names=("m", "l", "h", "b", "t"),
    units=("kg", "m", "m", "kg/s", "s"),
    descriptions=(
        "mass of the object [kg]",
        "characteristic length of the object [m]",
        "drop height above the ground [m]",
        "linear drag coefficient [kg/s]",
        "time since release [s]",
    ),
)

_SHM_SCHEMA = VariableSchema(
    names=("m", "k", "A", "phi", "t"),
    units=("kg", "kg/s^2", "m", "1", "s"),
    descriptions=(
        "oscillating mass [kg]",
        "spring stiffness [N/m]",
        "initial displacement amplitude [m]",
        "phase offset [rad]",
        "time since release [s]",
    ),
)

_EM_WAVE_SCHEMA = VariableSchema(
    names=("m", "x", "k", "b", "t"),
    units=("kg", "s", "kg/s^2", "kg/s", "s"),
    descriptions=(
        "effective oscillator mass of the medium [kg]",
        "position along the propagation axis, normalized units with wave speed 1 [s]",
        "oscillator stiffness of the medium [N/m]",
        "damping coefficient [kg/s]",
        "observation time [s]",
    ),
)

_DESCRIPTIONS = {
    "drop_ball": (
        "Free fall: an object of mass m is released from rest at height h near "
        "the Earth's surface and falls under constant gravity with negligible "
        "air resistance. The target signal is the object's speed at the end of "
        "the drop. A characteristic length l, a linear drag coefficient b, and "
        "a sampled time t are logged with each trial."
    ),
    "shm": (
        "Simple harmonic motion: a mass m attached to an ideal spring of "
        "stiffness k oscillates without friction after being displaced by A "
        "from equilibrium, with phase offset phi. The target signal is the "
        "displacement measured at time t."
    ),
    "em_wave": (
        "Damped electromagnetic wave: a plane wave of unit initial amplitude "
        "propagates through a weakly absorbing medium, in units normalized so "
        "the wave speed is 1. The medium responds like an oscillator of mass m "
        "and stiffness k with damping coefficient b. The target signal is the "
        "field measured at position x and time t."
    ),
}


def scenario_spec(scenario_id: str, shm_frequency: str = "sqrt_ratio") -> ScenarioSpec:
    """Build the spec for one of the three scenarios.

    ``shm_frequency`` selects the oscillator's angular frequency: the
    physically standard ``sqrt_ratio`` (sqrt(k/m), default) or ``ratio``
    (k/m), which drives the phase by the raw stiffness-to-mass ratio.
    """
    if scenario_id == "drop_ball":
        schema = _DROP_BALL_SCHEMA
        gt = parse("(2 * 9.81 * h) ^ 0.5", schema)
        return ScenarioSpec(
            id=scenario_id,
            gt_tree=gt,
            schema=schema,
            description=_DESCRIPTIONS[scenario_id],
            y_name="v",
            y_unit="m/s",
            y_description="speed of the object at the end of the drop [m/s]",
        )
    if scenario_id == "shm":
        if shm_frequency not in ("sqrt_ratio", "ratio"):
            raise ValueError(f"shm_frequency must be 'sqrt_ratio' or 'ratio', got {shm_frequency!r}")
        schema = _SHM_SCHEMA
        if shm_frequency == "sqrt_ratio":
            gt = parse("A * cos((k / m) ^ 0.5 * t + phi)", schema)
        else:
            gt = parse("A * cos(k / m * t + phi)", schema)
        return ScenarioSpec(
            id=scenario_id,
            gt_tree=gt,
            schema=schema,
            description=_DESCRIPTIONS[scenario_id],
            y_name="x_t",
            y_unit="m",
            y_description="displacement of the mass at time t [m]",
            extras={"frequency_form": shm_frequency},
        )
    if scenario_id == "em_wave":
        schema = _EM_WAVE_SCHEMA
        gt = parse(
            "exp(-(b * t) / (2 * m)) * cos((k / m) ^ 0.5 * x - (k / m) ^ 0.5 * t)",
            schema,
        )
        return ScenarioSpec(
            id=scenario_id,
            gt_tree=gt,
            schema=schema,
            description=_DESCRIPTIONS[scenario_id],
            y_name="E",
            y_unit="1",
            y_description="field amplitude in normalized units [1]",
            extras={
                "angular_frequency": "(k / m) ^ 0.5",
                "wavenumber": "angular_frequency / c_norm",
                "c_norm": 1.0,
                "field_amplitude": 1.0,
                "damping_rate": "b / m",
            },
        )
    raise ValueError(f"unknown scenario {scenario_id!r}; expected one of {SCENARIO_IDS}")


def scenario_from_dataset(dataset: Dataset) -> ScenarioSpec:
    """Rebuild a ScenarioSpec from a dataset's embedded metadata."""
    meta = dataset.meta
    if "gt_equation" not in meta:
        raise ValueError("dataset metadata carries no ground-truth equation")
    y = meta.get("y", {})
    return ScenarioSpec(
        id=dataset.scenario,
        gt_tree=parse(meta["gt_equation"], dataset.schema),
        schema=dataset.schema,
        description=meta.get("description", ""),
        y_name=y.get("name", "y"),
        y_unit=y.get("unit", "1"),
        y_description=y.get("description", ""),
        extras=dict(meta.get("extras", {})),
    )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _rng_for_seed(seed: int) -> np.random.Generator:
    # PCG64 with an explicit SeedSequence: the stream is fully determined by
    # the integer seed and portable across platforms.
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed % 2**63)))


def generate(
    scenario: ScenarioSpec,
    ranges: SamplingRanges | None = None,
    noise: NoiseSpec | None = None,
    seed: int = 0,
) -> Dataset:
    """Sample a dataset for a scenario; deterministic for a fixed seed.

    Parameters are drawn uniformly and independently per row, the clean
    target is the ground-truth tree evaluated on the clean rows, and noise
    with sigma = level * std(clean signal) is added to the columns selected
    by ``noise.target``.
    """
    ranges = ranges or SamplingRanges()
    noise = noise or NoiseSpec()
    rng = _rng_for_seed(seed)
    n = ranges.n_samples

    cols = [
        rng.uniform(*ranges.mass_kg, n),
        rng.uniform(*ranges.char_length_m, n),
        rng.uniform(*ranges.initial_height_m, n),
        rng.uniform(*ranges.damping_kg_per_s, n),
    ]
    t_bound = np.sqrt(2.0 * cols[2] / GRAVITY)
    cols.append(rng.uniform(0.0, 1.0, n) * t_bound)
    X_clean = np.column_stack(cols)

    y_clean, degenerate = evaluate_batch(scenario.gt_tree, X_clean)
    if degenerate:
        raise RuntimeError(f"ground-truth evaluation degenerate for scenario {scenario.id}")

    X = X_clean
    y = y_clean
    if noise.level > 0 and noise.target in ("features", "both"):
        X = X_clean.copy()
        for j in range(X.shape[1]):
            sd = float(np.std(X_clean[:, j]))
            if sd > 0:
                X[:, j] = X[:, j] + rng.normal(0.0, noise.level * sd, n)
    if noise.level > 0 and noise.target in ("target", "both"):
        sd = float(np.std(y_clean))
        if sd > 0:
            y = y_clean + rng.normal(0.0, noise.level * sd, n)

    measured_snr = snr_db(y_clean, y)
    meta = {
        "gt_equation": scenario.gt_equation(),
        "description": scenario.description,
        "y": {
            "name": scenario.y_name,
            "unit": scenario.y_unit,
            "description": scenario.y_description,
        },
        "ranges": ranges.to_dict(),
        "extras": dict(scenario.extras),
    }
    return Dataset(
        X=X,
        y=y,
        schema=scenario.schema,
        scenario=scenario.id,
        noise=noise,
        seed=seed,
        snr_db=measured_snr,
        meta=meta,
    )


def snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    """10 log10 of clean-signal variance over noise variance.

    Returns +inf (the "noiseless" sentinel) when the two signals are
    identical.
    """
    clean = np.asarray(clean, dtype=float)
    noisy = np.asarray(noisy, dtype=float)
    if clean.shape != noisy.shape or clean.size < 2:
        raise ValueError("signals must have equal length >= 2")
    noise_var = float(np.var(noisy - clean))
    if noise_var == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.var(clean)) / noise_var)


# ---------------------------------------------------------------------------
# Persistence: CSV with a JSON sidecar
# ---------------------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def _format_float(v: float) -> str:
    return format(v, ".17g")


def write_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write ``<path>`` as CSV (header = schema names + "y", 17 significant
    digits, LF endings) and ``<path stem>.meta.json`` alongside it."""
    path = Path(path)
    header = ",".join((*dataset.schema.names, "y"))
    lines = [header]
    for i in range(dataset.X.shape[0]):
        row = [_format_float(v) for v in dataset.X[i]]
        row.append(_format_float(dataset.y[i]))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    sidecar = {
        "scenario": dataset.scenario,
        "seed": dataset.seed,
        "noise": dataset.noise.to_dict(),
        "snr_db": "noiseless" if math.isinf(dataset.snr_db) else dataset.snr_db,
        "schema": dataset.schema.to_dict(),
        **dataset.meta,
    }
    _sidecar_path(path).write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )
    return path


def read_dataset(path: str | Path) -> Dataset:
    """Read a dataset written by :func:`write_dataset`; lossless round-trip."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"dataset file not found: {path}")
    sidecar_path = _sidecar_path(path)
    if not sidecar_path.exists():
        raise DatasetFormatError(f"missing sidecar metadata file: {sidecar_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        schema = VariableSchema.from_dict(sidecar["schema"])
        noise = NoiseSpec.from_dict(sidecar["noise"])
        seed = int(sidecar["seed"])
        scenario = str(sidecar["scenario"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"malformed sidecar {sidecar_path}: {exc}") from exc

    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    expected_header = ",".join((*schema.names, "y"))
    if lines[0] != expected_header:
        raise DatasetFormatError(
            f"{path}: malformed header {lines[0]!r}, expected {expected_header!r}"
        )
    width = len(schema) + 1
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != width:
            raise DatasetFormatError(f"{path}: line {lineno} has {len(cells)} cells, expected {width}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: non-numeric cell on line {lineno}: {exc}") from exc
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)

    snr = sidecar.get("snr_db", "noiseless")
    snr_value = math.inf if snr == "noiseless" else float(snr)
    meta = {
        k: v
        for k, v in sidecar.items()
        if k not in ("scenario", "seed", "noise", "snr_db", "schema")
    }
    return Dataset(
        X=data[:, :-1],
        y=data[:, -1],
        schema=schema,
        scenario=scenario,
        noise=noise,
        seed=seed,
        snr_db=snr_value,
        meta=meta,
    )
