"""Episode records, energy accounting, convergence extraction and aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, UndefinedMetricError

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass
class RunRecord:
    """Time series of one episode.

    ``states`` has one more row than the per-step arrays: row ``t`` is the
    state before step ``t`` and the last row is the final state.
    ``shaping`` holds the barrier term paid at each step (zero for vanilla
    environments) so it can be audited against the states.
    """

    states: np.ndarray
    actions: np.ndarray
    vanilla_rewards: np.ndarray
    shaped_rewards: np.ndarray
    shaping: np.ndarray
    torques: np.ndarray
    angle_deltas: np.ndarray
    dt: float
    terminated: bool = False
    velocity_index: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n = len(self.actions)
        if len(self.states) != n + 1:
            raise DataError(f"expected {n + 1} states for {n} steps, got {len(self.states)}")
        for name in ("vanilla_rewards", "shaped_rewards", "shaping", "torques", "angle_deltas"):
            if len(getattr(self, name)) != n:
                raise DataError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if np.shape(self.torques) != np.shape(self.angle_deltas):
            raise DataError("torque and angle-delta arrays must have the same shape")

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def vanilla_return(self) -> float:
        return float(np.sum(self.vanilla_rewards))

    @property
    def shaped_return(self) -> float:
        return float(np.sum(self.shaped_rewards))

    @property
    def v_mean(self) -> float | None:
        """Mean of the progress-velocity state element, when the env defines one."""
        if self.velocity_index is None:
            return None
        return float(np.mean(self.states[1:, self.velocity_index]))


def rollout(env, policy: Policy, seed: int, velocity_index: int | None = None) -> RunRecord:
    """Run one full episode of ``policy`` from ``env.reset(seed)``."""
    states = [env.reset(seed)]
    actions, vr, sr, sh, tq, da = [], [], [], [], [], []
    terminated = False
    while not env.done:
        a = policy(states[-1])
        res = env.step(a)
        states.append(res.next_state)
        actions.append(res.info["action"])
        vr.append(res.vanilla_reward)
        sr.append(res.shaped_reward)
        sh.append(res.info["shaping"])
        tq.append(res.info["torque"])
        da.append(res.info["angle_delta"])
        terminated = res.info["terminated"]
    return RunRecord(
        states=np.array(states), actions=np.array(actions), vanilla_rewards=np.array(vr),
        shaped_rewards=np.array(sr), shaping=np.array(sh), torques=np.array(tq),
        angle_deltas=np.array(da), dt=env.descriptor.dt, terminated=terminated,
        velocity_index=velocity_index,
    )


def episode_energy(record: RunRecord, signed: bool = False, upto: int | None = None) -> float:
    """Sum over steps and joints of ``angle_delta * torque``.

    ``signed=False`` accumulates the absolute value of each product so that
    work done against motion is counted as spent.  ``upto`` limits the sum
    to the first ``upto`` steps.
    """
    tq = np.asarray(record.torques, dtype=np.float64)
    da = np.asarray(record.angle_deltas, dtype=np.float64)
    if tq.shape != da.shape:
        raise DataError(f"torque shape {tq.shape} does not match angle-delta shape {da.shape}")
    if upto is not None:
        tq, da = tq[:upto], da[:upto]
    work = da * tq
    return float(np.sum(work) if signed else np.sum(np.abs(work)))


def actuation_coefficient(episodic_energy: float, v_mean: float) -> float:
    """Energy per squared mean velocity."""
    if v_mean == 0 or not math.isfinite(v_mean):
        raise UndefinedMetricError("actuation coefficient needs a finite, non-zero mean velocity")
    return episodic_energy / (v_mean * v_mean)


@dataclass(frozen=True)
class AggregateCurve:
    x: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_seeds: int = 1

    @classmethod
    def single(cls, x, y) -> "AggregateCurve":
        return aggregate_over_seeds([(x, y)])


def aggregate_over_seeds(runs: Sequence[tuple[Sequence[float], Sequence[float]]]) -> AggregateCurve:
    """Pointwise mean and population std of per-seed ``(x, y)`` curves on a shared grid."""
    if not runs:
        raise DataError("need at least one curve")
    x0 = np.asarray(runs[0][0], dtype=np.float64)
    ys = []
    for x, y in runs:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != x0.shape or not np.array_equal(x, x0):
            raise DataError("curves do not share a common x grid")
        if y.shape != x.shape:
            raise DataError("curve y values must match its x grid")
        ys.append(y)
    Y = np.stack(ys)
    # sort rows so the result does not depend on seed order at the last-bit level
    Y = np.sort(Y, axis=0)
    return AggregateCurve(x0, Y.mean(axis=0), Y.std(axis=0), len(ys))


def convergence_step(curve: AggregateCurve, threshold: float, window: int = 5) -> float | None:
    """First x at which the trailing mean of ``window`` evaluations reaches ``threshold``.

    At the start of the curve the trailing window holds all points seen so
    far.  Returns None when the threshold is never reached.
    """
    if window < 1:
        raise DataError("window must be at least 1")
    y = np.asarray(curve.mean, dtype=np.float64)
    if y.size == 0:
        raise DataError("empty curve")
    c = np.concatenate([[0.0], np.cumsum(y)])
    idx = np.arange(1, y.size + 1)
    lo = np.maximum(idx - window, 0)
    rolling = (c[idx] - c[lo]) / (idx - lo)
    hits = np.flatnonzero(rolling >= threshold)
    return None if hits.size == 0 else float(curve.x[hits[0]])


@dataclass(frozen=True)
class StabilizationCriterion:
    angle_tol: float = 0.05
    omega_tol: float = 0.2
    hold: int = 50
    angle_index: int = 0
    omega_index: int = 1


@dataclass
class SweepRow:
    init_angle: float
    stabilized: bool
    steps: int
    energy_signed: float
    energy_unsigned: float
    record: RunRecord | None = field(default=None, repr=False)


def stabilization_step(record: RunRecord, crit: StabilizationCriterion = StabilizationCriterion()) -> int | None:
    """First step index from which the pole stays inside the tolerance box for ``hold`` states."""
    s = record.states
    inside = (np.abs(s[:, crit.angle_index]) < crit.angle_tol) & (np.abs(s[:, crit.omega_index]) < crit.omega_tol)
    run = 0
    for t, ok in enumerate(inside):
        run = run + 1 if ok else 0
        if run >= crit.hold:
            return t - crit.hold + 1
    return None


def stabilization_energy_sweep(policy: Policy, make_env: Callable[[float], object], angles: Sequence[float],
                               crit: StabilizationCriterion = StabilizationCriterion(),
                               seed: int = 0, keep_records: bool = False) -> list[SweepRow]:
    """Energy spent bringing the pole to rest from each initial angle.

    Args:
        policy: deterministic map from state to action.
        make_env: builds a fresh environment whose reset pins the given initial angle.
        angles: initial pole angles in radians.
        crit: what counts as stabilized.
        seed: reset seed shared by all angles.
    """
    rows = []
    for angle in angles:
        rec = rollout(make_env(float(angle)), policy, seed)
        k = stabilization_step(rec, crit)
        upto = rec.length if k is None else k
        rows.append(SweepRow(
            init_angle=float(angle),
            stabilized=k is not None,
            steps=upto,
            energy_signed=episode_energy(rec, signed=True, upto=upto),
            energy_unsigned=episode_energy(rec, signed=False, upto=upto),
            record=rec if keep_records else None,
        ))
    return rows


def energy_ratio(variant_energies: Sequence[float], vanilla_energies: Sequence[float]) -> float:
    """Mean variant energy per unit of mean vanilla energy."""
    v = float(np.mean(vanilla_energies))
    if v == 0:
        raise UndefinedMetricError("vanilla energy is zero")
    return float(np.mean(variant_energies)) / v
