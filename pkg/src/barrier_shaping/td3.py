"""Twin Delayed DDPG on top of :mod:`barrier_shaping.nn`.

The replay buffer stores whatever reward the environment pays to the
learner (the shaped reward when a barrier is attached); evaluation reports
both the shaped and the vanilla return so that policies trained under
different reward variants can be compared on the vanilla one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvDescriptor
from .errors import BarrierShapingError, ConfigurationError, NumericInputError, UsageError
from .metrics import RunRecord, episode_energy, rollout
from .nn import Adam, Mlp, polyak_update

log = logging.getLogger(__name__)


class TrainingDiverged(BarrierShapingError):
    """Losses or parameters became non-finite during training."""


@dataclass(frozen=True)
class Td3Config:
    """TD3 hyperparameters.

    Noise scales are fractions of the half action range, so
    ``exploration_noise_sigma=0.1`` on a ``[-10, 10]`` force gives a 1 N
    standard deviation.
    """

    discount_factor: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    exploration_noise_sigma: float = 0.1
    batch_size: int = 256
    warmup_steps: int = 1000
    buffer_capacity: int = 100_000
    train_steps: int = 30_000
    eval_interval: int = 2000
    eval_episodes: int = 5
    eval_seed: int = 10_000
    actor_hidden: tuple[int, ...] = (256, 256)
    critic_hidden: tuple[int, ...] = (256, 256)
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    actor_final_scale: float = 0.01

    def __post_init__(self):
        if not 0 < self.discount_factor < 1:
            raise ConfigurationError("discount_factor must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ConfigurationError("tau must lie in (0, 1]")
        if self.policy_delay < 1:
            raise ConfigurationError("policy_delay must be at least 1")
        if min(self.target_noise_sigma, self.target_noise_clip, self.exploration_noise_sigma) < 0:
            raise ConfigurationError("noise scales must be non-negative")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigurationError("buffer_capacity must be at least batch_size >= 1")
        if self.train_steps < 0 or self.eval_interval < 1 or self.eval_episodes < 1 or self.warmup_steps < 0:
            raise ConfigurationError("invalid training schedule")
        object.__setattr__(self, "actor_hidden", tuple(int(h) for h in self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(int(h) for h in self.critic_hidden))


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer with a seeded uniform sampler."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, seed: int | np.random.Generator = 0):
        if capacity < 1:
            raise ConfigurationError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.size = 0
        self._pos = 0
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def add(self, state, action, reward: float, next_state, done: bool) -> None:
        i = self._pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_transition(self, t: Transition) -> None:
        self.add(t.state, t.action, t.reward, t.next_state, t.done)

    def sample(self, batch_size: int):
        if self.size < batch_size:
            raise UsageError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx]


def _child_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class Td3Agent:
    """Actor, twin critics, their target copies and the three optimizers."""

    def __init__(self, descriptor: EnvDescriptor, config: Td3Config = Td3Config(), seed: int = 0):
        self.descriptor = descriptor
        self.config = config
        self.seed = seed
        init_rng, self.noise_rng, self.buffer_rng = _child_rngs(seed, 3)
        sd, ad = descriptor.state_dim, descriptor.action_dim
        self.low = np.asarray(descriptor.action_low, dtype=np.float64)
        self.high = np.asarray(descriptor.action_high, dtype=np.float64)
        self.half_range = 0.5 * (self.high - self.low)
        c = config
        self.actor = Mlp([sd, *c.actor_hidden, ad], "tanh", self.low, self.high, rng=init_rng,
                         final_scale=c.actor_final_scale)
        self.critic1 = Mlp([sd + ad, *c.critic_hidden, 1], rng=init_rng)
        self.critic2 = Mlp([sd + ad, *c.critic_hidden, 1], rng=init_rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        adam = dict(beta1=c.adam_beta1, beta2=c.adam_beta2, eps=c.adam_eps)
        self.actor_opt = Adam(self.actor, lr=c.actor_lr, **adam)
        self.critic1_opt = Adam(self.critic1, lr=c.critic_lr, **adam)
        self.critic2_opt = Adam(self.critic2, lr=c.critic_lr, **adam)
        self.updates = 0
        self.env_steps = 0

    def networks(self) -> dict[str, Mlp]:
        return {
            "actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
            "actor_target": self.actor_target, "critic1_target": self.critic1_target,
            "critic2_target": self.critic2_target,
        }

    def make_buffer(self) -> ReplayBuffer:
        d = self.descriptor
        return ReplayBuffer(self.config.buffer_capacity, d.state_dim, d.action_dim, self.buffer_rng)

    def policy(self, state) -> np.ndarray:
        return self.actor(state)

    def select_action(self, state, explore: bool = False) -> np.ndarray:
        """Deterministic actor output, or an exploratory action when ``explore``.

        While fewer than ``warmup_steps`` environment steps have been taken,
        exploratory actions are uniform over the action box.
        """
        if not explore:
            return np.clip(self.actor(state), self.low, self.high)
        if self.env_steps < self.config.warmup_steps:
            return self.noise_rng.uniform(self.low, self.high)
        noise = self.noise_rng.normal(size=self.low.shape) * self.config.exploration_noise_sigma * self.half_range
        return np.clip(self.actor(state) + noise, self.low, self.high)

    def target_values(self, rewards, next_states, dones, noise=None) -> np.ndarray:
        """Clipped double-Q bootstrap targets with target policy smoothing."""
        c = self.config
        a2 = self.actor_target(next_states)
        if noise is None:
            noise = self.noise_rng.normal(size=a2.shape) * c.target_noise_sigma * self.half_range
        lim = c.target_noise_clip * self.half_range
        a2 = np.clip(a2 + np.clip(noise, -lim, lim), self.low, self.high)
        x2 = np.concatenate([next_states, a2], axis=1)
        q_next = np.minimum(self.critic1_target(x2), self.critic2_target(x2))[:, 0]
        return rewards + c.discount_factor * (1.0 - dones) * q_next

    def update(self, buffer: ReplayBuffer) -> dict[str, float]:
        """One TD3 gradient step; returns critic (and, when due, actor) losses."""
        c = self.config
        s, a, r, s2, d = buffer.sample(c.batch_size)
        return self.update_on_batch(s, a, r, s2, d)

    def update_on_batch(self, s, a, r, s2, d, target_noise=None) -> dict[str, float]:
        c = self.config
        n = len(r)
        y = self.target_values(r, s2, d, target_noise)[:, None]
        x = np.concatenate([s, a], axis=1)
        diag = {}
        for name, critic, opt in (("critic1_loss", self.critic1, self.critic1_opt),
                                  ("critic2_loss", self.critic2, self.critic2_opt)):
            q, cache = critic.forward(x)
            err = q - y
            diag[name] = float(np.mean(err * err))
            grads, _ = critic.backward(cache, 2.0 * err / n)
            opt.step(critic, grads)
        self.updates += 1
        if self.updates % c.policy_delay == 0:
            a_pi, actor_cache = self.actor.forward(s)
            q, critic_cache = self.critic1.forward(np.concatenate([s, a_pi], axis=1))
            diag["actor_loss"] = -float(np.mean(q))
            _, dx = self.critic1.backward(critic_cache, np.full_like(q, -1.0 / n), param_grads=False)
            grads, _ = self.actor.backward(actor_cache, dx[:, s.shape[1]:])
            self.actor_opt.step(self.actor, grads)
            polyak_update(self.actor_target, self.actor, c.tau)
            polyak_update(self.critic1_target, self.critic1, c.tau)
            polyak_update(self.critic2_target, self.critic2, c.tau)
        if not all(math.isfinite(v) for v in diag.values()):
            raise TrainingDiverged(f"non-finite loss after update {self.updates}: {diag}")
        return diag


@dataclass
class EvalResult:
    mean_return: float
    mean_vanilla_return: float
    records: list[RunRecord]

    @property
    def mean_energy_signed(self) -> float:
        return float(np.mean([episode_energy(r, signed=True) for r in self.records]))

    @property
    def mean_energy_unsigned(self) -> float:
        return float(np.mean([episode_energy(r) for r in self.records]))


def evaluate(agent: Td3Agent, env, episodes: int, seed: int) -> EvalResult:
    """Noise-free episodes from reset seeds ``seed, seed + 1, ...``."""
    if episodes < 1:
        raise UsageError("evaluate needs at least one episode")
    policy = lambda s: agent.select_action(s, explore=False)  # noqa: E731
    records = [rollout(env, policy, seed + i) for i in range(episodes)]
    return EvalResult(
        mean_return=float(np.mean([r.shaped_return for r in records])),
        mean_vanilla_return=float(np.mean([r.vanilla_return for r in records])),
        records=records,
    )


@dataclass
class EvalPoint:
    train_step: int
    vanilla_return: float
    shaped_return: float
    energy_signed: float
    energy_unsigned: float


@dataclass
class TrainResult:
    curve: list[EvalPoint] = field(default_factory=list)
    diverged: bool = False
    error: str | None = None
    episodes: int = 0


def episode_seed(seed: int, episode: int) -> int:
    """Reset seed for training episode ``episode`` of run ``seed``."""
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


def train(agent: Td3Agent, env, eval_env=None, config: Td3Config | None = None) -> TrainResult:
    """Train ``agent`` on ``env`` and evaluate every ``eval_interval`` steps.

    Evaluation happens at step 0, at every multiple of ``eval_interval`` and
    after the final step.  Divergence is reported in the result rather than
    raised.
    """
    c = config or agent.config
    eval_env = eval_env if eval_env is not None else env
    buffer = agent.make_buffer()
    result = TrainResult()

    def record_eval(step):
        ev = evaluate(agent, eval_env, c.eval_episodes, c.eval_seed)
        result.curve.append(EvalPoint(step, ev.mean_vanilla_return, ev.mean_return,
                                      ev.mean_energy_signed, ev.mean_energy_unsigned))

    state = env.reset(episode_seed(agent.seed, 0))
    try:
        for step in range(c.train_steps):
            if step % c.eval_interval == 0:
                record_eval(step)
            action = agent.select_action(state, explore=True)
            res = env.step(action)
            agent.env_steps += 1
            buffer.add(state, res.info["action"], res.shaped_reward, res.next_state, res.info["terminated"])
            if agent.env_steps > c.warmup_steps and len(buffer) >= c.batch_size:
                agent.update(buffer)
            if res.done:
                result.episodes += 1
                state = env.reset(episode_seed(agent.seed, result.episodes))
            else:
                state = res.next_state
        record_eval(c.train_steps)
    except (TrainingDiverged, FloatingPointError, NumericInputError) as exc:
        log.warning("seed %s diverged: %s", agent.seed, exc)
        result.diverged = True
        result.error = str(exc)
    return result
