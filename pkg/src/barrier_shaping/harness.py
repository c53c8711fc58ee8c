"""Experiment configuration, orchestration, grid search and result export.

An experiment is described by one YAML file (see :class:`ExperimentConfig`).
:func:`run_experiment` trains one TD3 agent per ``variant x seed`` job,
evaluates it on a fixed schedule and writes a results bundle::

    <output_dir>/
        config.resolved.yaml     every constant the run used
        curve.csv                one row per evaluation point
        sweep.csv                one row per stabilization-sweep start angle
        summary.json             aggregates and cross-variant ratios
        jobs/<variant>_seed<k>.json
        checkpoints/<variant>_seed<k>.ckpt
        trajectories/<variant>_seed<k>.npz

Jobs share nothing mutable.  Each job writes its own file under ``jobs/``
and the merge into the CSVs happens afterwards in a fixed order, so the
bundle does not depend on the worker count or on job completion order.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, create_model, field_validator, model_validator

from . import barrier
from .barrier import BarrierKind, BoundSpec
from .envs import ENVIRONMENTS, ShapedEnv, make_env
from .errors import ConfigurationError, DataError
from .metrics import StabilizationCriterion, aggregate_over_seeds, convergence_step, energy_ratio, stabilization_energy_sweep
from .nn import load_checkpoint, save_checkpoint
from .td3 import Td3Agent, Td3Config, evaluate, train

log = logging.getLogger(__name__)

VARIANTS = ("vanilla", "quad", "exp", "multi")
Variant = Literal["vanilla", "quad", "exp", "multi"]
METRICS = ("convergence_step", "final_vanilla_return", "stabilization_energy")

CURVE_COLUMNS = ("variant", "seed", "train_step", "eval_vanilla_return", "eval_shaped_return",
                 "episode_energy_signed", "episode_energy_unsigned")
SWEEP_COLUMNS = ("variant", "seed", "init_angle_rad", "stabilized", "steps", "energy_signed", "energy_unsigned")
GRID_COLUMNS = ("rank", "delta_a", "delta_b", "barrier_gain", "metric")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _section_model(dc, name: str, exclude: tuple[str, ...] = ()) -> type[BaseModel]:
    """Strict pydantic model with the same fields and defaults as dataclass ``dc``."""
    hints = typing.get_type_hints(dc)
    fields = {}
    for f in dataclasses.fields(dc):
        if f.name in exclude:
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        fields[f.name] = (hints[f.name], default)
    return create_model(name, __base__=_Strict, **fields)


Td3Section = _section_model(Td3Config, "Td3Section")
_ENV_SECTIONS = {name: _section_model(cfg_cls, f"{cls.__name__}Section") for name, (cls, cfg_cls) in ENVIRONMENTS.items()}
_StabilizationBase = _section_model(StabilizationCriterion, "StabilizationBase", exclude=("angle_index", "omega_index"))


@model_validator(mode="after")
def _check_td3(self):
    try:
        Td3Config(**self.model_dump())
    except ConfigurationError as exc:
        raise ValueError(str(exc)) from None
    return self


Td3Section = create_model("Td3Section", __base__=Td3Section, __validators__={"check": _check_td3})


class EnvSection(_Strict):
    """Environment name plus overrides of its physical/episode constants."""

    name: Literal["cartpole", "pendulum"]
    overrides: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_overrides(self):
        section = _ENV_SECTIONS[self.name]
        try:
            params = section.model_validate(self.overrides)
            make_env(self.name, **params.model_dump())
        except ValidationError as exc:
            raise ValueError("; ".join(f"overrides.{_loc(e)}: {e['msg']}" for e in exc.errors())) from None
        except ConfigurationError as exc:
            raise ValueError(f"overrides: {exc}") from None
        return self

    def resolved(self) -> dict[str, Any]:
        """All environment constants, defaults filled in."""
        return _ENV_SECTIONS[self.name].model_validate(self.overrides).model_dump()

    def build(self, **extra):
        return make_env(self.name, **{**self.resolved(), **extra})


class BoundSection(_Strict):
    state: str
    min: float
    max: float

    @model_validator(mode="after")
    def _ordered(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max) and self.min < self.max):
            raise ValueError(f"need finite min < max, got min={self.min}, max={self.max}")
        return self


class BarrierSection(_Strict):
    """Barrier for one reward variant.

    ``kind`` is fixed by the variant for ``quad`` and ``exp`` and selectable
    (default quadratic) for ``multi``.  ``delta_b`` is required for, and only
    allowed with, the exponential kind.
    """

    kind: Optional[Literal["quad", "exp"]] = None
    bounds: list[BoundSection] = Field(min_length=1)
    delta_a: float = Field(1.0, gt=0)
    delta_b: Optional[float] = Field(None, gt=0)
    barrier_gain: float = Field(1.0, gt=0)


class StabilizationSection(_StabilizationBase):
    """Stabilization sweep: start angles (rad) and what counts as stabilized."""

    angles: list[float] = Field(default_factory=lambda: [math.radians(d) for d in (-30, -20, -10, 10, 20, 30)])
    seed: int = 0


class ConvergenceSection(_Strict):
    """Vanilla-return threshold and trailing window (in evaluations) for convergence steps."""

    threshold: Optional[float] = None
    window: int = Field(5, ge=1)


class ExperimentConfig(_Strict):
    """Complete description of an experiment; see the module docstring for outputs."""

    name: str = "experiment"
    env: EnvSection
    variants: list[Variant] = Field(min_length=1)
    barriers: dict[Literal["quad", "exp", "multi"], BarrierSection] = Field(default_factory=dict)
    seeds: list[int] = Field(min_length=1)
    output_dir: str = "results"
    td3: Td3Section = Field(default_factory=Td3Section)
    stabilization: StabilizationSection = Field(default_factory=StabilizationSection)
    convergence: ConvergenceSection = Field(default_factory=ConvergenceSection)
    workers: int = Field(1, ge=1)
    save_checkpoints: bool = True
    save_trajectories: bool = True

    @model_validator(mode="before")
    @classmethod
    def _single_variant(cls, data):
        if isinstance(data, dict) and "variant" in data:
            if "variants" in data:
                raise ValueError("give either 'variant' or 'variants', not both")
            data = {**data, "variants": [data["variant"]]}
            del data["variant"]
        return data

    @field_validator("variants", "seeds")
    @classmethod
    def _distinct(cls, v):
        if len(set(v)) != len(v):
            raise ValueError(f"entries must be distinct, got {v}")
        return v

    @model_validator(mode="after")
    def _check_barriers(self):
        descriptor = self.env.build().descriptor
        for variant in self.variants:
            if variant == "vanilla":
                continue
            if variant not in self.barriers:
                raise ValueError(f"barriers.{variant}: required by variant {variant!r}")
        for variant, section in self.barriers.items():
            kind = _barrier_kind(variant, section)
            if section.kind is not None and section.kind != kind:
                raise ValueError(f"barriers.{variant}.kind: variant {variant!r} needs kind {kind!r}")
            if kind == "exp" and section.delta_b is None:
                raise ValueError(f"barriers.{variant}.delta_b: required for exponential barriers")
            if kind == "quad" and section.delta_b is not None:
                raise ValueError(f"barriers.{variant}.delta_b: only allowed for exponential barriers")
            labels = [b.state for b in section.bounds]
            for i, label in enumerate(labels):
                if label not in descriptor.state_labels:
                    raise ValueError(f"barriers.{variant}.bounds.{i}.state: unknown state {label!r}; "
                                     f"expected one of {list(descriptor.state_labels)}")
            if len(set(labels)) != len(labels):
                raise ValueError(f"barriers.{variant}.bounds: each state may be bounded once")
        return self

    def td3_config(self) -> Td3Config:
        return Td3Config(**self.td3.model_dump())

    def criterion(self) -> StabilizationCriterion:
        s = self.stabilization
        return StabilizationCriterion(angle_tol=s.angle_tol, omega_tol=s.omega_tol, hold=s.hold)

    def barrier_spec(self, variant: str):
        """The :class:`~barrier_shaping.barrier.BarrierSpec` of ``variant`` (None for vanilla)."""
        if variant == "vanilla":
            return None
        section = self.barriers[variant]
        descriptor = self.env.build().descriptor
        bounds = [BoundSpec(descriptor.label_index(b.state), b.min, b.max) for b in section.bounds]
        if _barrier_kind(variant, section) == "exp":
            return barrier.exponential(bounds, section.delta_a, section.delta_b, section.barrier_gain)
        return barrier.quadratic(bounds, section.delta_a, section.barrier_gain)

    def make_env(self, variant: str, **extra):
        env = self.env.build(**extra)
        spec = self.barrier_spec(variant)
        return env if spec is None else ShapedEnv(env, spec)

    def with_overrides(self, *, seed: int | None = None, out: str | None = None,
                       variant: str | None = None) -> "ExperimentConfig":
        """Copy with command-line style overrides applied and re-validated."""
        data = self.model_dump(mode="json")
        if seed is not None:
            data["seeds"] = [seed]
        if out is not None:
            data["output_dir"] = str(out)
        if variant is not None:
            data["variants"] = [variant]
        return parse_config(data)


def _barrier_kind(variant: str, section: BarrierSection) -> str:
    if variant == "multi":
        return section.kind or "quad"
    return variant


def _loc(err) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def _format_validation_error(exc: ValidationError) -> str:
    lines = []
    for e in exc.errors():
        msg = e["msg"].removeprefix("Value error, ")
        lines.append(f"{_loc(e)}: {msg}" if e["loc"] else msg)
    return "invalid experiment config:\n  " + "\n  ".join(lines)


def parse_config(data: Any) -> ExperimentConfig:
    """Validate a plain mapping into an :class:`ExperimentConfig`."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_validation_error(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Read, default and validate a YAML experiment file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: YAML parse error: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return parse_config(data)


def config_to_dict(config: ExperimentConfig) -> dict:
    return config.model_dump(mode="json")


def dump_config(config: ExperimentConfig, path=None) -> str:
    """Serialize to YAML that :func:`load_config` parses back to an equal config."""
    text = yaml.safe_dump(config_to_dict(config), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def resolved_constants(config: ExperimentConfig) -> dict:
    """Every constant a run of ``config`` uses, with all defaults made explicit."""
    data = config_to_dict(config)
    data["env"] = {"name": config.env.name, "overrides": config.env.resolved()}
    for variant, section in data["barriers"].items():
        section["kind"] = _barrier_kind(variant, config.barriers[variant])
    return data


# ---------------------------------------------------------------------------
# running

@dataclass
class JobOutcome:
    variant: str
    seed: int
    curve: list[dict]
    sweep: list[dict]
    diverged: bool
    error: str | None


def _job_name(variant: str, seed: int) -> str:
    return f"{variant}_seed{seed}"


def _records_to_arrays(prefix: str, records) -> dict[str, np.ndarray]:
    out = {}
    for i, rec in enumerate(records):
        out[f"{prefix}{i}_states"] = rec.states
        out[f"{prefix}{i}_vanilla"] = rec.vanilla_rewards
        out[f"{prefix}{i}_shaped"] = rec.shaped_rewards
        out[f"{prefix}{i}_shaping"] = rec.shaping
    return out


def sweep_policy(config: ExperimentConfig, variant: str, policy, keep_records: bool = False):
    """Stabilization sweep of ``policy`` over the configured start angles."""
    return stabilization_energy_sweep(
        policy, lambda angle: config.make_env(variant, initial_angle=angle), config.stabilization.angles,
        config.criterion(), seed=config.stabilization.seed, keep_records=keep_records)


def run_job(config: ExperimentConfig, variant: str, seed: int, out_dir) -> JobOutcome:
    """Train and evaluate one ``variant x seed`` pair; writes its per-job files."""
    out_dir = Path(out_dir)
    td3_cfg = config.td3_config()
    train_env = config.make_env(variant)
    eval_env = config.make_env(variant)
    agent = Td3Agent(train_env.descriptor, td3_cfg, seed=seed)
    log.info("job %s: training %d steps", _job_name(variant, seed), td3_cfg.train_steps)
    result = train(agent, train_env, eval_env)
    curve = [{"variant": variant, "seed": seed, "train_step": p.train_step, "eval_vanilla_return": p.vanilla_return,
              "eval_shaped_return": p.shaped_return, "episode_energy_signed": p.energy_signed,
              "episode_energy_unsigned": p.energy_unsigned} for p in result.curve]
    sweep, trajectories = [], {}
    if not result.diverged:
        if config.stabilization.angles:
            rows = sweep_policy(config, variant, agent.policy, keep_records=config.save_trajectories)
            sweep = [sweep_row(variant, seed, r) for r in rows]
            trajectories.update(_records_to_arrays("sweep", [r.record for r in rows if r.record is not None]))
        if config.save_trajectories:
            final = evaluate(agent, eval_env, td3_cfg.eval_episodes, td3_cfg.eval_seed)
            trajectories.update(_records_to_arrays("eval", final.records))
        if config.save_checkpoints:
            save_checkpoint(out_dir / "checkpoints" / f"{_job_name(variant, seed)}.ckpt", agent.networks(),
                            {"config": config_to_dict(config), "variant": variant, "seed": seed,
                             "env_steps": agent.env_steps, "updates": agent.updates})
    if trajectories:
        path = out_dir / "trajectories" / f"{_job_name(variant, seed)}.npz"
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, dt=np.array(train_env.descriptor.dt), **trajectories)
    outcome = JobOutcome(variant, seed, curve, sweep, result.diverged, result.error)
    job_file = out_dir / "jobs" / f"{_job_name(variant, seed)}.json"
    job_file.parent.mkdir(parents=True, exist_ok=True)
    job_file.write_text(json.dumps(dataclasses.asdict(outcome), sort_keys=True))
    return outcome


def sweep_row(variant: str, seed: int, row) -> dict:
    return {"variant": variant, "seed": seed, "init_angle_rad": row.init_angle, "stabilized": row.stabilized,
            "steps": row.steps, "energy_signed": row.energy_signed, "energy_unsigned": row.energy_unsigned}


def _run_job_from_dict(args) -> str:
    data, variant, seed, out_dir = args
    run_job(parse_config(data), variant, seed, out_dir)
    return _job_name(variant, seed)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _finite_or_none(x):
    return x if x is not None and math.isfinite(x) else None


def _ratio(num, den):
    """``num / den`` with infinities allowed; None when undefined."""
    if num is None or den is None or (math.isinf(num) and math.isinf(den)):
        return None
    if den == 0:
        return None if num == 0 else math.inf
    return num / den


def median_convergence(steps: list) -> float:
    """Median of per-seed convergence steps, counting never-converged seeds as infinitely late."""
    return float(np.median([math.inf if s is None else s for s in steps]))


def summarize(config: ExperimentConfig, outcomes: list[JobOutcome]) -> dict:
    """Per-variant aggregates and cross-variant ratios of a finished run."""
    threshold, window = config.convergence.threshold, config.convergence.window
    variants = {}
    for variant in config.variants:
        jobs = [o for o in outcomes if o.variant == variant]
        ok = [o for o in jobs if not o.diverged]
        entry = {
            "seeds": [o.seed for o in jobs],
            "failed_seeds": [{"seed": o.seed, "error": o.error} for o in jobs if o.diverged],
        }
        if ok:
            runs = [([p["train_step"] for p in o.curve], [p["eval_vanilla_return"] for p in o.curve]) for o in ok]
            agg = aggregate_over_seeds(runs)
            final = [y[-1] for _, y in runs]
            entry["final_vanilla_return"] = {"mean": float(np.mean(final)), "std": float(np.std(final)),
                                             "per_seed": {str(o.seed): f for o, f in zip(ok, final)}}
            entry["curve"] = {"train_step": agg.x.tolist(), "mean": agg.mean.tolist(), "std": agg.std.tolist()}
            if threshold is not None:
                per_seed = [convergence_step(aggregate_over_seeds([r]), threshold, window) for r in runs]
                entry["convergence_step"] = convergence_step(agg, threshold, window)
                entry["convergence_step_per_seed"] = {str(o.seed): s for o, s in zip(ok, per_seed)}
                entry["median_convergence_step"] = _finite_or_none(median_convergence(per_seed))
                entry["_median"] = median_convergence(per_seed)
            rows = [r for o in ok for r in o.sweep]
            if rows:
                entry["stabilization"] = {
                    "energy_unsigned_mean": float(np.mean([r["energy_unsigned"] for r in rows])),
                    "energy_signed_mean": float(np.mean([r["energy_signed"] for r in rows])),
                    "stabilized_fraction": float(np.mean([r["stabilized"] for r in rows])),
                    "_unsigned": [r["energy_unsigned"] for r in rows],
                    "_signed": [r["energy_signed"] for r in rows],
                }
        variants[variant] = entry
    base = variants.get("vanilla")
    for variant, entry in variants.items():
        if base is None or variant == "vanilla":
            continue
        if "_median" in entry and "_median" in base:
            entry["speedup_vs_vanilla"] = _finite_or_none(_ratio(base["_median"], entry["_median"]))
        if "stabilization" in entry and "stabilization" in base:
            try:
                entry["energy_ratio_vs_vanilla"] = energy_ratio(entry["stabilization"]["_unsigned"],
                                                                base["stabilization"]["_unsigned"])
            except ArithmeticError:
                entry["energy_ratio_vs_vanilla"] = None
            try:
                entry["signed_energy_ratio_vs_vanilla"] = energy_ratio(entry["stabilization"]["_signed"],
                                                                       base["stabilization"]["_signed"])
            except ArithmeticError:
                entry["signed_energy_ratio_vs_vanilla"] = None
    for entry in variants.values():
        entry.pop("_median", None)
        if "stabilization" in entry:
            entry["stabilization"].pop("_unsigned")
            entry["stabilization"].pop("_signed")
    return {"name": config.name, "env": config.env.name, "convergence_threshold": threshold,
            "convergence_window": window, "variants": variants}


@dataclass
class ExperimentResult:
    out_dir: Path
    summary: dict
    outcomes: list[JobOutcome]

    @property
    def curve_csv(self) -> Path:
        return self.out_dir / "curve.csv"

    @property
    def sweep_csv(self) -> Path:
        return self.out_dir / "sweep.csv"

    @property
    def summary_json(self) -> Path:
        return self.out_dir / "summary.json"


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Train every ``variant x seed`` job of ``config`` and write the results bundle."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(yaml.safe_dump(resolved_constants(config), sort_keys=False))
    jobs = [(v, s) for v in config.variants for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        data = config_to_dict(config)
        with ProcessPoolExecutor(max_workers=min(config.workers, len(jobs))) as pool:
            list(pool.map(_run_job_from_dict, [(data, v, s, str(out)) for v, s in jobs]))
    else:
        for v, s in jobs:
            run_job(config, v, s, out)
    outcomes = []
    for v, s in jobs:
        raw = json.loads((out / "jobs" / f"{_job_name(v, s)}.json").read_text())
        outcomes.append(JobOutcome(**raw))
    write_csv(out / "curve.csv", CURVE_COLUMNS, [r for o in outcomes for r in o.curve])
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, [r for o in outcomes for r in o.sweep])
    summary = summarize(config, outcomes)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(out, summary, outcomes)


def audit_trajectories(out_dir) -> int:
    """Recompute the shaping term of every saved trajectory from its states.

    Returns the number of audited steps.  Raises ``DataError`` on the first
    step whose logged shaping term or shaped reward differs (bitwise) from
    the recomputation.
    """
    out = Path(out_dir)
    config = parse_config(yaml.safe_load((out / "config.resolved.yaml").read_text()))
    checked = 0
    for path in sorted((out / "trajectories").glob("*.npz")):
        variant = path.stem.rsplit("_seed", 1)[0]
        spec = config.barrier_spec(variant)
        with np.load(path) as data:
            dt = float(data["dt"])
            for key in sorted(k for k in data.files if k.endswith("_states")):
                prefix = key[: -len("_states")]
                states, shaping = data[key], data[prefix + "_shaping"]
                vanilla, shaped = data[prefix + "_vanilla"], data[prefix + "_shaped"]
                if spec is None:
                    recomputed = np.zeros(len(vanilla))
                else:
                    recomputed = np.asarray(barrier.reward_bf(spec, states[:-1], states[1:], dt), dtype=float)
                bad = np.flatnonzero((recomputed != shaping) | (vanilla + recomputed != shaped))
                if bad.size:
                    raise DataError(f"{path.name}:{prefix} step {bad[0]}: logged shaping {shaping[bad[0]]!r} "
                                    f"!= recomputed {recomputed[bad[0]]!r}")
                checked += len(vanilla)
    return checked


# ---------------------------------------------------------------------------
# checkpoints

def load_policy(checkpoint):
    """Rebuild the agent, config and variant stored in a run checkpoint."""
    nets, meta = load_checkpoint(checkpoint)
    if "config" not in meta or "variant" not in meta:
        raise DataError(f"{checkpoint} was not written by run_experiment")
    config = parse_config(meta["config"])
    env = config.make_env(meta["variant"])
    agent = Td3Agent(env.descriptor, config.td3_config(), seed=int(meta.get("seed", 0)))
    for name, net in agent.networks().items():
        if name in nets:
            if not nets[name].same_architecture(net):
                raise DataError(f"{checkpoint}: network {name!r} does not match the stored config")
            net.set_flat(nets[name].get_flat())
    return agent, config, meta["variant"]


# ---------------------------------------------------------------------------
# grid search

class BudgetExceeded(ConfigurationError):
    """A grid search would need more runs than its budget allows."""


class GridSearchSpec(_Strict):
    """Full-factorial grid over barrier parameters of one variant.

    ``delta_b`` values are only used for exponential barriers.  The budget
    counts training runs (grid points x seeds); ``seconds_per_step`` only
    feeds the time estimate printed when a grid is refused.
    """

    variant: Optional[Literal["quad", "exp", "multi"]] = None
    delta_a: list[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0], min_length=1)
    delta_b: list[float] = Field(default_factory=lambda: [1.0, 5.0, 10.0, 20.0], min_length=1)
    barrier_gain: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0], min_length=1)
    metric: Literal["convergence_step", "final_vanilla_return", "stabilization_energy"] = "convergence_step"
    max_runs: int = Field(200, ge=1)
    seconds_per_step: float = Field(0.003, gt=0)

    @field_validator("delta_a", "delta_b", "barrier_gain")
    @classmethod
    def _positive(cls, v):
        if any(not (math.isfinite(x) and x > 0) for x in v):
            raise ValueError("grid values must be positive")
        return v


def load_grid(path) -> GridSearchSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text()) or {}
        return GridSearchSpec.model_validate(data)
    except FileNotFoundError:
        raise ConfigurationError(f"grid file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: YAML parse error: {exc}") from None
    except ValidationError as exc:
        raise ConfigurationError(_format_validation_error(exc).replace("experiment config", "grid spec")) from None


@dataclass
class GridResult:
    table: list[dict]
    best_config: ExperimentConfig
    higher_is_better: bool


def metric_from_summary(summary: dict, variant: str, metric: str) -> float:
    """Scalar selection metric of ``variant`` from a run summary (worst value if undefined)."""
    entry = summary["variants"][variant]
    if metric == "convergence_step":
        steps = entry.get("convergence_step_per_seed")
        if steps is None:
            raise ConfigurationError("metric convergence_step needs convergence.threshold in the config")
        return median_convergence(list(steps.values()))
    if metric == "final_vanilla_return":
        return entry["final_vanilla_return"]["mean"] if "final_vanilla_return" in entry else -math.inf
    if "stabilization" not in entry:
        return math.inf
    return entry["stabilization"]["energy_unsigned_mean"]


def grid_points(config: ExperimentConfig, grid: GridSearchSpec) -> tuple[str, list[tuple[float, float | None, float]]]:
    variant = grid.variant or next((v for v in config.variants if v != "vanilla"), None)
    if variant is None or variant not in config.barriers:
        raise ConfigurationError("grid search needs a shaped variant with a barriers entry in the config")
    is_exp = _barrier_kind(variant, config.barriers[variant]) == "exp"
    dbs = grid.delta_b if is_exp else [None]
    return variant, list(itertools.product(grid.delta_a, dbs, grid.barrier_gain))


def grid_search(config: ExperimentConfig, grid: GridSearchSpec, out_dir=None,
                metric_fn: Callable[[ExperimentConfig], float] | None = None) -> GridResult:
    """Evaluate every grid point, rank them and return the best as a runnable config.

    ``metric_fn`` replaces training with a closed-form metric; it receives
    the candidate config (single shaped variant) and returns the score.
    """
    variant, points = grid_points(config, grid)
    n_runs = len(points) * len(config.seeds)
    if n_runs > grid.max_runs:
        hours = n_runs * config.td3.train_steps * grid.seconds_per_step / 3600
        raise BudgetExceeded(f"grid needs {n_runs} training runs (~{hours:.1f} h estimated), "
                             f"budget is {grid.max_runs} runs")
    out = Path(out_dir if out_dir is not None else config.output_dir)
    higher = grid.metric == "final_vanilla_return"
    scored = []
    for i, (da, db, gain) in enumerate(points):
        data = config_to_dict(config)
        data["variants"] = [variant]
        data["barriers"] = {variant: {**data["barriers"][variant], "delta_a": da, "delta_b": db,
                                      "barrier_gain": gain}}
        candidate = parse_config(data)
        if metric_fn is not None:
            score = float(metric_fn(candidate))
        else:
            res = run_experiment(candidate, out / "grid" / f"point{i:03d}")
            score = metric_from_summary(res.summary, variant, grid.metric)
        scored.append((i, da, db, gain, score, candidate))
    order = sorted(scored, key=lambda t: ((-t[4] if higher else t[4]), t[0]))
    table = [{"rank": r + 1, "delta_a": da, "delta_b": db, "barrier_gain": g, "metric": s}
             for r, (_, da, db, g, s, _) in enumerate(order)]
    best_data = config_to_dict(order[0][5])
    best_data["variants"] = list(config.variants)
    best_data["barriers"] = {**config_to_dict(config)["barriers"], variant: best_data["barriers"][variant]}
    best = parse_config(best_data)
    if out_dir is not None or metric_fn is None:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "grid.csv", GRID_COLUMNS, [{**row, "delta_b": "" if row["delta_b"] is None else row["delta_b"]}
                                                    for row in table])
        dump_config(best, out / "best_config.yaml")
    return GridResult(table, best, higher)
