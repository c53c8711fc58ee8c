"""Self-contained continuous-control environments and the shaping wrapper.

Both environments share one stepping contract: ``reset(seed)`` returns the
initial state, ``step(action)`` returns a :class:`StepResult`.  Every call to
``step`` reports, through ``info``, the generalized force applied at each
joint (``"torque"``) and the joint displacement it acted through
(``"angle_delta"``) so episode energy can be computed afterwards.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .barrier import BarrierSpec, reward_bf, shape_reward
from .errors import ConfigurationError, UsageError


@dataclass(frozen=True)
class EnvDescriptor:
    name: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    dt: float
    state_labels: tuple[str, ...]
    joint_labels: tuple[str, ...]
    max_episode_steps: int

    def __post_init__(self):
        if not np.all(self.action_low < self.action_high):
            raise ConfigurationError("action_low must be below action_high elementwise")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")

    def label_index(self, label: str) -> int:
        try:
            return self.state_labels.index(label)
        except ValueError:
            raise ConfigurationError(
                f"unknown state label {label!r} for {self.name}; expected one of {list(self.state_labels)}"
            ) from None


@dataclass
class StepResult:
    next_state: np.ndarray
    vanilla_reward: float
    shaped_reward: float
    done: bool
    info: dict[str, Any] = field(default_factory=dict)


class Env:
    """Common bookkeeping: seeding, step counting, termination guard."""

    descriptor: EnvDescriptor

    def __init__(self):
        self.state: np.ndarray | None = None
        self.steps = 0
        self.done = True

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.state = self._initial_state(rng)
        self.steps = 0
        self.done = False
        return self.state.copy()

    def step(self, action) -> StepResult:
        if self.state is None:
            raise UsageError("call reset() before step()")
        if self.done:
            raise UsageError("episode has terminated; call reset()")
        d = self.descriptor
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(d.action_dim), d.action_low, d.action_high)
        next_state, reward, terminated, torque, delta = self._advance(self.state, a)
        self.steps += 1
        truncated = not terminated and self.steps >= d.max_episode_steps
        self.state = next_state
        self.done = terminated or truncated
        info = {
            "torque": torque,
            "angle_delta": delta,
            "terminated": terminated,
            "truncated": truncated,
            "action": a,
            "shaping": 0.0,
        }
        return StepResult(next_state.copy(), reward, reward, self.done, info)

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _advance(self, state, action):
        raise NotImplementedError


@dataclass(frozen=True)
class CartPoleConfig:
    """Physical and episode constants of the continuous-force cart-pole.

    Angles are in radians with 0 upright.  ``initial_angle`` pins the pole
    angle at reset (noise is still added to the other components);
    ``init_angle_spread`` widens the uniform reset range of the pole angle.
    Each control step of length ``dt`` is integrated as ``substeps`` equal
    semi-implicit Euler steps under a constant force.
    """

    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    gravity: float = 9.8
    dt: float = 0.02
    substeps: int = 10
    force_max: float = 10.0
    track_limit: float = 2.4
    termination_angle: float = 12 * math.pi / 180
    max_episode_steps: int = 500
    init_noise: float = 0.05
    init_angle_spread: float = 0.0
    initial_angle: float | None = None


class CartPole(Env):
    """Cart-pole balancing with a continuous horizontal force.

    State order is ``(theta_p, omega_p, x_c, v_c)``.  The pole is a uniform
    rod, the track is frictionless and the integrator is semi-implicit Euler.
    Vanilla reward is +1 for every step that does not terminate the episode.
    """

    def __init__(self, config: CartPoleConfig | None = None, **overrides):
        super().__init__()
        c = config or CartPoleConfig()
        self.config = dataclasses.replace(c, **overrides) if overrides else c
        c = self.config
        if min(c.cart_mass, c.pole_mass, c.pole_half_length, c.dt, c.force_max, c.track_limit,
               c.termination_angle) <= 0:
            raise ConfigurationError("cart-pole constants must be positive")
        if c.max_episode_steps < 1 or c.substeps < 1:
            raise ConfigurationError("max_episode_steps and substeps must be at least 1")
        self.descriptor = EnvDescriptor(
            name="cartpole",
            state_dim=4,
            action_dim=1,
            action_low=np.array([-c.force_max]),
            action_high=np.array([c.force_max]),
            dt=c.dt,
            state_labels=("theta_p", "omega_p", "x_c", "v_c"),
            joint_labels=("cart", "pole"),
            max_episode_steps=c.max_episode_steps,
        )

    def _initial_state(self, rng):
        c = self.config
        s = rng.uniform(-c.init_noise, c.init_noise, size=4)
        if c.init_angle_spread > 0:
            s[0] = rng.uniform(-c.init_angle_spread, c.init_angle_spread)
        if c.initial_angle is not None:
            s[0] = c.initial_angle
        return s

    def accelerations(self, state, force: float) -> tuple[float, float]:
        """Pole angular and cart linear acceleration for a given applied force."""
        c = self.config
        theta, omega = state[0], state[1]
        total = c.cart_mass + c.pole_mass
        sin, cos = math.sin(theta), math.cos(theta)
        temp = (force + c.pole_mass * c.pole_half_length * omega * omega * sin) / total
        alpha = (c.gravity * sin - cos * temp) / (
            c.pole_half_length * (4.0 / 3.0 - c.pole_mass * cos * cos / total)
        )
        acc = temp - c.pole_mass * c.pole_half_length * alpha * cos / total
        return alpha, acc

    def mechanical_energy(self, state) -> float:
        """Kinetic plus gravitational potential energy (J), rod inertia m l^2 / 3."""
        c = self.config
        theta, omega, _, v = state
        m, l = c.pole_mass, c.pole_half_length
        kinetic = (0.5 * (c.cart_mass + m) * v * v + m * l * v * omega * math.cos(theta)
                   + 0.5 * (4.0 / 3.0) * m * l * l * omega * omega)
        return kinetic + m * c.gravity * l * math.cos(theta)

    def _advance(self, state, action):
        c = self.config
        force = float(action[0])
        h = c.dt / c.substeps
        theta, omega, x, v = (float(z) for z in state)
        for _ in range(c.substeps):
            alpha, acc = self.accelerations((theta, omega), force)
            omega += h * alpha
            v += h * acc
            theta += h * omega
            x += h * v
        nxt = np.array([theta, omega, x, v])
        terminated = bool(abs(theta) > c.termination_angle or abs(x) > c.track_limit)
        reward = 0.0 if terminated else 1.0
        torque = np.array([force, 0.0])
        delta = np.array([x - state[2], theta - state[0]])
        return nxt, reward, terminated, torque, delta


def wrap_angle(theta):
    """Map angles to ``(-pi, pi]``."""
    return math.pi - np.mod(math.pi - theta, 2 * math.pi)


@dataclass(frozen=True)
class PendulumConfig:
    """Torque-limited swing-up pendulum; 0 rad is upright."""

    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    dt: float = 0.05
    max_speed: float = 8.0
    max_torque: float = 2.0
    max_episode_steps: int = 200
    init_omega: float = 1.0
    initial_angle: float | None = None


class Pendulum(Env):
    """Inverted-pendulum swing-up with state ``(theta, omega)``.

    Reward is ``-(theta**2 + 0.1 omega**2 + 0.001 u**2)`` evaluated before
    the step; episodes only end by truncation.
    """

    def __init__(self, config: PendulumConfig | None = None, **overrides):
        super().__init__()
        c = config or PendulumConfig()
        self.config = dataclasses.replace(c, **overrides) if overrides else c
        c = self.config
        if min(c.mass, c.length, c.dt, c.max_speed, c.max_torque) <= 0:
            raise ConfigurationError("pendulum constants must be positive")
        if c.max_episode_steps < 1:
            raise ConfigurationError("max_episode_steps must be at least 1")
        self.descriptor = EnvDescriptor(
            name="pendulum",
            state_dim=2,
            action_dim=1,
            action_low=np.array([-c.max_torque]),
            action_high=np.array([c.max_torque]),
            dt=c.dt,
            state_labels=("theta", "omega"),
            joint_labels=("hinge",),
            max_episode_steps=c.max_episode_steps,
        )

    def _initial_state(self, rng):
        c = self.config
        theta = wrap_angle(rng.uniform(-math.pi, math.pi))
        omega = rng.uniform(-c.init_omega, c.init_omega)
        if c.initial_angle is not None:
            theta = wrap_angle(c.initial_angle)
        return np.array([theta, omega])

    def _advance(self, state, action):
        c = self.config
        theta, omega = float(state[0]), float(state[1])
        u = float(action[0])
        cost = theta * theta + 0.1 * omega * omega + 0.001 * u * u
        omega_new = omega + (3 * c.gravity / (2 * c.length) * math.sin(theta)
                             + 3.0 / (c.mass * c.length ** 2) * u) * c.dt
        omega_new = min(max(omega_new, -c.max_speed), c.max_speed)
        step = omega_new * c.dt
        nxt = np.array([wrap_angle(theta + step), omega_new])
        return nxt, -cost, False, np.array([u]), np.array([step])


class ShapedEnv:
    """Environment wrapper whose steps also pay the barrier shaping term.

    The shaping term for the transition ``s_t -> s_{t+1}`` is
    ``reward_bf(spec, s_t, s_{t+1}, dt)``; ``vanilla_reward`` is left as the
    wrapped environment produced it.
    """

    def __init__(self, env: Env, spec: BarrierSpec):
        spec.check_dim(env.descriptor.state_dim)
        self.env = env
        self.spec = spec
        self._prev: np.ndarray | None = None

    @property
    def descriptor(self) -> EnvDescriptor:
        return self.env.descriptor

    @property
    def done(self) -> bool:
        return self.env.done

    @property
    def state(self):
        return self.env.state

    def reset(self, seed: int) -> np.ndarray:
        s = self.env.reset(seed)
        self._prev = s.copy()
        return s

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        r_bf = reward_bf(self.spec, self._prev, res.next_state, self.descriptor.dt)
        res.shaped_reward = shape_reward(res.vanilla_reward, r_bf)
        res.info["shaping"] = r_bf
        self._prev = res.next_state.copy()
        return res


def attach_shaping(env: Env, spec: BarrierSpec) -> ShapedEnv:
    return ShapedEnv(env, spec)


ENVIRONMENTS = {
    "cartpole": (CartPole, CartPoleConfig),
    "pendulum": (Pendulum, PendulumConfig),
}


def make_env(name: str, **overrides) -> Env:
    """Build an environment by name with optional constant overrides."""
    try:
        cls, cfg_cls = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigurationError(f"unknown environment {name!r}; expected one of {sorted(ENVIRONMENTS)}") from None
    known = {f.name for f in dataclasses.fields(cfg_cls)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ConfigurationError(f"unknown {name} constant(s): {unknown}")
    return cls(cfg_cls(**overrides))
