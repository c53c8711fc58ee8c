"""Barrier functions over box constraints and the shaped reward built on them.

A barrier is declared by a :class:`BarrierSpec`: which state elements are
constrained, their bounds, the barrier kind and its parameters.  Every
function here is pure and accepts either a single state vector of shape
``(n,)`` or a stack of states of shape ``(..., n)``.

The shaping term paid for a transition is ``hdot + gain * h`` where ``hdot``
is the time derivative of the barrier, and the shaped reward is the vanilla
reward plus that term.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericInputError

#: Upper clamp applied to exponent arguments so far-out states stay finite.
EXP_ARG_CLAMP = 60.0

#: Steepness used when ``delta_b`` is left unspecified: ``10 / (s_max - s_min)``.
DEFAULT_STEEPNESS_SPAN = 10.0


class BarrierKind(str, enum.Enum):
    QUADRATIC = "quad"
    EXPONENTIAL = "exp"


@dataclass(frozen=True)
class BoundSpec:
    """Box bound ``(s_min, s_max)`` on state element ``index``."""

    index: int
    s_min: float
    s_max: float

    def __post_init__(self):
        if isinstance(self.index, bool) or int(self.index) != self.index or self.index < 0:
            raise ConfigurationError(f"bound index must be a non-negative integer, got {self.index!r}")
        if not (math.isfinite(self.s_min) and math.isfinite(self.s_max)):
            raise ConfigurationError("bounds must be finite")
        if not self.s_min < self.s_max:
            raise ConfigurationError(
                f"bound on index {self.index} needs s_min < s_max, got ({self.s_min}, {self.s_max})"
            )

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.s_min + self.s_max)


@dataclass(frozen=True)
class BarrierParams:
    """Amplitude ``delta_a`` and exponential steepness ``delta_b``.

    ``delta_b=None`` selects ``10 / (s_max - s_min)`` separately for each
    bound.  The quadratic barrier ignores ``delta_b``.
    """

    delta_a: float = 1.0
    delta_b: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.delta_a) and self.delta_a > 0):
            raise ConfigurationError(f"delta_a must be positive, got {self.delta_a!r}")
        if self.delta_b is not None and not (math.isfinite(self.delta_b) and self.delta_b > 0):
            raise ConfigurationError(f"delta_b must be positive, got {self.delta_b!r}")


@dataclass(frozen=True)
class BarrierSpec:
    """Declarative barrier over a set of bounded state elements.

    Args:
        kind: quadratic or exponential barrier.
        bounds: non-empty list of bounds with pairwise distinct indices.
        params: barrier amplitude and steepness.
        barrier_gain: slope of the linear class-K function ``kappa(m) = gain * m``.
            Unrelated to the MDP discount factor.
    """

    kind: BarrierKind
    bounds: tuple[BoundSpec, ...]
    params: BarrierParams = field(default_factory=BarrierParams)
    barrier_gain: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BarrierKind(self.kind))
        object.__setattr__(self, "bounds", tuple(self.bounds))
        if not self.bounds:
            raise ConfigurationError("a barrier needs at least one bound")
        idx = [b.index for b in self.bounds]
        if len(set(idx)) != len(idx):
            raise ConfigurationError(f"bound indices must be distinct, got {idx}")
        if not (math.isfinite(self.barrier_gain) and self.barrier_gain > 0):
            raise ConfigurationError(f"barrier_gain must be positive, got {self.barrier_gain!r}")

    @cached_property
    def indices(self) -> np.ndarray:
        return np.array([b.index for b in self.bounds], dtype=np.intp)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([b.s_min for b in self.bounds], dtype=np.float64)

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([b.s_max for b in self.bounds], dtype=np.float64)

    @cached_property
    def steepness(self) -> np.ndarray:
        """Per-bound ``delta_b``, after resolving the span-based default."""
        if self.params.delta_b is not None:
            return np.full(len(self.bounds), float(self.params.delta_b))
        return DEFAULT_STEEPNESS_SPAN / (self.upper - self.lower)

    def max_index(self) -> int:
        return max(b.index for b in self.bounds)

    def check_dim(self, state_dim: int) -> None:
        if self.max_index() >= state_dim:
            raise ConfigurationError(
                f"bound index {self.max_index()} out of range for state of length {state_dim}"
            )


@dataclass(frozen=True)
class BarrierEval:
    """Barrier value and its dense gradient at one state."""

    h: float
    grad: np.ndarray


def quadratic(bounds: Sequence[BoundSpec] | BoundSpec, delta_a: float = 1.0,
              barrier_gain: float = 1.0) -> BarrierSpec:
    """Shorthand for a quadratic :class:`BarrierSpec`."""
    bounds = (bounds,) if isinstance(bounds, BoundSpec) else tuple(bounds)
    return BarrierSpec(BarrierKind.QUADRATIC, bounds, BarrierParams(delta_a), barrier_gain)


def exponential(bounds: Sequence[BoundSpec] | BoundSpec, delta_a: float = 1.0,
                delta_b: float | None = None, barrier_gain: float = 1.0) -> BarrierSpec:
    """Shorthand for an exponential :class:`BarrierSpec`."""
    bounds = (bounds,) if isinstance(bounds, BoundSpec) else tuple(bounds)
    return BarrierSpec(BarrierKind.EXPONENTIAL, bounds, BarrierParams(delta_a, delta_b), barrier_gain)


def _as_state(spec: BarrierSpec, state, name: str = "state") -> np.ndarray:
    s = np.asarray(state, dtype=np.float64)
    if s.ndim == 0:
        raise NumericInputError(f"{name} must be a vector, got a scalar")
    if spec.max_index() >= s.shape[-1]:
        raise ConfigurationError(
            f"bound index {spec.max_index()} out of range for {name} of length {s.shape[-1]}"
        )
    if not np.all(np.isfinite(s)):
        raise NumericInputError(f"{name} contains non-finite values")
    return s


def _clamped_exp(x: np.ndarray) -> np.ndarray:
    return np.exp(np.minimum(x, EXP_ARG_CLAMP))


def _terms_and_slopes(spec: BarrierSpec, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-bound barrier terms and their derivatives, shape ``(..., len(bounds))``."""
    x = s[..., spec.indices]
    lo, hi = spec.lower, spec.upper
    a = spec.params.delta_a
    if spec.kind is BarrierKind.QUADRATIC:
        terms = a * (x - hi) * (lo - x)
        slopes = a * (lo + hi - 2.0 * x)
    else:
        b = spec.steepness
        e_hi = _clamped_exp(b * (x - hi))
        e_lo = _clamped_exp(b * (lo - x))
        terms = a * (1.0 - (e_hi + e_lo))
        slopes = a * b * (e_lo - e_hi)
    return terms, slopes


def eval_h(spec: BarrierSpec, state) -> float | np.ndarray:
    """Barrier value ``h(s)``: the sum of per-bound terms."""
    s = _as_state(spec, state)
    terms, _ = _terms_and_slopes(spec, s)
    h = terms.sum(axis=-1)
    return float(h) if h.ndim == 0 else h


def grad_h(spec: BarrierSpec, state) -> np.ndarray:
    """Dense gradient ``dh/ds``; zero on unconstrained elements."""
    s = _as_state(spec, state)
    _, slopes = _terms_and_slopes(spec, s)
    g = np.zeros_like(s)
    g[..., spec.indices] = slopes
    return g


def evaluate(spec: BarrierSpec, state) -> BarrierEval:
    """Value and gradient of a single state in one pass."""
    s = _as_state(spec, state)
    if s.ndim != 1:
        raise NumericInputError("evaluate() takes a single state vector")
    terms, slopes = _terms_and_slopes(spec, s)
    g = np.zeros_like(s)
    g[spec.indices] = slopes
    return BarrierEval(h=float(terms.sum()), grad=g)


def hdot_analytic(spec: BarrierSpec, state, state_dot) -> float | np.ndarray:
    """Chain-rule derivative ``dh/ds . ds/dt``."""
    s = _as_state(spec, state)
    sd = np.asarray(state_dot, dtype=np.float64)
    if sd.shape != s.shape:
        raise NumericInputError(f"state_dot shape {sd.shape} does not match state shape {s.shape}")
    if not np.all(np.isfinite(sd)):
        raise NumericInputError("state_dot contains non-finite values")
    _, slopes = _terms_and_slopes(spec, s)
    out = (slopes * sd[..., spec.indices]).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def hdot_finite_difference(spec: BarrierSpec, state_prev, state_curr, dt: float) -> float | np.ndarray:
    """Backward-difference estimate of ``hdot`` with the gradient taken at ``state_curr``."""
    if not (math.isfinite(dt) and dt > 0):
        raise ConfigurationError(f"dt must be positive, got {dt!r}")
    prev = _as_state(spec, state_prev, "state_prev")
    curr = _as_state(spec, state_curr, "state_curr")
    if prev.shape != curr.shape:
        raise NumericInputError(f"state_prev shape {prev.shape} does not match state_curr {curr.shape}")
    return hdot_analytic(spec, curr, (curr - prev) / dt)


def reward_bf(spec: BarrierSpec, state_prev, state_curr, dt: float) -> float | np.ndarray:
    """Shaping term for the transition ``state_prev -> state_curr``."""
    return hdot_finite_difference(spec, state_prev, state_curr, dt) + spec.barrier_gain * eval_h(spec, state_curr)


def reward_bf_analytic(spec: BarrierSpec, state, state_dot) -> float | np.ndarray:
    """Shaping term with an exact state derivative instead of a difference."""
    return hdot_analytic(spec, state, state_dot) + spec.barrier_gain * eval_h(spec, state)


def shape_reward(vanilla_r: float, r_bf: float) -> float:
    """Shaped reward: vanilla reward plus the barrier term."""
    if not (math.isfinite(vanilla_r) and math.isfinite(r_bf)):
        raise NumericInputError(f"rewards must be finite, got ({vanilla_r!r}, {r_bf!r})")
    return vanilla_r + r_bf


def cartpole_quad_reward_closed_form(theta, omega, phi: float, delta_a: float):
    """Quadratic shaped CartPole reward for a symmetric bound ``phi`` and unit gain.

    ``1 + delta_a * ((phi**2 - theta**2) - 2 * theta * omega)``
    """
    if not phi > 0 or not delta_a > 0:
        raise ConfigurationError("phi and delta_a must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(omega))):
        raise NumericInputError("theta and omega must be finite")
    r = 1.0 + delta_a * ((phi * phi - theta * theta) - 2.0 * theta * omega)
    return float(r) if r.ndim == 0 else r
