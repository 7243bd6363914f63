"""TRPO warm-up on the built-in point-mass reach task (about 15 seconds).

The task has a closed-form optimum (walk each axis at full speed, then sit),
so the learning curve can be read against an absolute yardstick.
Run with `python3 demos/train_point_mass.py`.
"""

import numpy as np

from donning.trainer import (LinearFeatureBaseline, PointMassEnv, PolicyNet,
                             TrainerConfig, train)


def make_env():
    return PointMassEnv()


cfg = TrainerConfig(iterations=15, samples_per_iter=1200, seed=0, hidden=(16, 16))
policy = PolicyNet(2, 2, hidden=cfg.hidden, seed=cfg.seed)
print(f"policy: 2 -> {cfg.hidden} -> 2, {policy.n_params} parameters")
print(f"{cfg.iterations} iterations x {cfg.samples_per_iter} samples, "
      f"trust region KL <= {cfg.kl_step}\n")


def report(it, pol, base, stats):
    if it % 3 == 0 or it == cfg.iterations - 1:
        print(f"iter {stats.iteration:2d}  mean return {stats.mean_return:7.2f}  "
              f"kl {stats.kl:.4f}  surrogate gain {stats.surrogate_improvement:+.4f}")


train(make_env, cfg, policy=policy, baseline=LinearFeatureBaseline(), callback=report)

# deterministic rollouts against the analytic optimum on a few fixed goals
env = PointMassEnv()
print("\ngoal            achieved   optimal")
for seed in (11, 12, 13):
    obs, info = env.reset(seed=seed)
    total, done = 0.0, False
    while not done:
        obs, r, done, _ = env.step(policy.mean(obs))
        total += r
    print(f"{np.round(info['goal'], 2)!s:14s}  {total:8.3f}  "
          f"{PointMassEnv.optimal_return(info['goal']):8.3f}")
