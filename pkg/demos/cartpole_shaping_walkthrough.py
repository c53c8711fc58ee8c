"""
Shaping TD3 on continuous CartPole
==================================

Trains a vanilla and a barrier-shaped TD3 agent on the same CartPole task,
compares them on the *vanilla* return (the shaped return is not comparable
across reward variants) and measures the energy each spends stabilizing
the pole from tilted starts.

Set ``DEMO_STEPS`` to change the training budget (default 15000 steps per
agent, a few minutes on one core).
"""

import os

import numpy as np

from barrier_shaping import barrier as bf
from barrier_shaping.barrier import BoundSpec
from barrier_shaping.envs import CartPole, ShapedEnv
from barrier_shaping.metrics import convergence_step, aggregate_over_seeds, stabilization_energy_sweep
from barrier_shaping.td3 import Td3Agent, Td3Config, train

steps = int(os.environ.get("DEMO_STEPS", 15000))

# A wider termination angle and randomized start angles let the agents
# practise recovering from the +-30 degree starts used in the sweep below.
env_kw = dict(termination_angle=0.8, init_angle_spread=0.55, max_episode_steps=250)
spec = bf.quadratic(BoundSpec(0, -0.2094, 0.2094), delta_a=1.0)
cfg = Td3Config(actor_hidden=(64, 64), critic_hidden=(64, 64), actor_lr=1e-3, critic_lr=1e-3, batch_size=128,
                train_steps=steps, eval_interval=max(steps // 10, 1), eval_episodes=3,
                warmup_steps=min(1000, steps // 2))

agents, curves = {}, {}
for name in ("vanilla", "quad"):
    base = CartPole(**env_kw)
    env = base if name == "vanilla" else ShapedEnv(base, spec)
    eval_env = CartPole(**env_kw) if name == "vanilla" else ShapedEnv(CartPole(**env_kw), spec)
    agent = Td3Agent(base.descriptor, cfg, seed=0)
    result = train(agent, env, eval_env)
    agents[name] = agent
    curves[name] = result.curve
    print(name, "vanilla return per evaluation:", [round(p.vanilla_return) for p in result.curve])

# Convergence step: first evaluation where the trailing mean of five
# evaluations reaches the threshold.
for name, curve in curves.items():
    agg = aggregate_over_seeds([([p.train_step for p in curve], [p.vanilla_return for p in curve])])
    print(f"{name}: converges to return 175 at step {convergence_step(agg, 175.0, window=5)}")

# Stabilization sweep: start tilted and count |force x displacement| until
# the pole has been held near upright for 50 steps.
angles = np.radians([-30, -20, -10, 10, 20, 30])
energy = {}
for name, agent in agents.items():
    rows = stabilization_energy_sweep(agent.policy, lambda a: CartPole(**{**env_kw, "initial_angle": a}), angles)
    energy[name] = np.mean([r.energy_unsigned for r in rows])
    print(name, "stabilized:", [r.stabilized for r in rows], f"mean energy {energy[name]:.2f} J")
print(f"energy ratio quad/vanilla: {energy['quad'] / energy['vanilla']:.3f}")
