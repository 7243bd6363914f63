"""TRPO with a diagonal-Gaussian MLP policy, all in numpy.

Policy: obs -> 64 tanh -> 64 tanh -> linear means, plus a state-independent
log-std vector.  The natural-gradient direction comes from conjugate gradient
on Fisher-vector products (exact for the Gaussian: JVP through the mean net,
scaled by 1/sigma^2, pulled back by the VJP; the log-std block is 2*I), then
a backtracking line search keeps measured mean KL within the trust region.
Sampling draws per-trajectory seeds from (root seed, iteration, trajectory
index) so batches are identical for any worker count and training can resume
from a checkpoint bit-exactly.
"""

import json
import struct
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .errors import ConfigError, IncompatibleCheckpointError

CHECKPOINT_MAGIC = b"DONC"
CHECKPOINT_VERSION = 1


# -- policy ----------------------------------------------------------------------

class PolicyNet:
    """Two-hidden-layer tanh Gaussian policy over flat parameter storage."""

    def __init__(self, obs_dim=163, act_dim=11, hidden=(64, 64), seed=0,
                 init_std=1.0, out_scale=0.1):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        dims = [obs_dim, *self.hidden, act_dim]
        self.shapes = []
        for i in range(len(dims) - 1):
            self.shapes.append((dims[i + 1], dims[i]))  # W
            self.shapes.append((dims[i + 1],))          # b
        self.shapes.append((act_dim,))                  # log_std
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.n_params = int(self.offsets[-1])
        self.params = np.zeros(self.n_params)
        self._init_params(seed, init_std, out_scale)

    def _init_params(self, seed, init_std, out_scale):
        rng = np.random.default_rng(seed)
        n_layers = len(self.hidden) + 1
        for layer in range(n_layers):
            w = self._view(2 * layer)
            a = rng.normal(size=w.shape)
            # orthogonal rows (scaled), small final layer
            if w.shape[0] <= w.shape[1]:
                q, _ = np.linalg.qr(a.T)
                q = q.T
            else:
                q, _ = np.linalg.qr(a)
            scale = out_scale if layer == n_layers - 1 else 1.0
            w[:] = scale * q
            self._view(2 * layer + 1)[:] = 0.0
        self._view(-1)[:] = np.log(init_std)

    def _view(self, i, params=None):
        p = self.params if params is None else params
        if i < 0:
            i += len(self.shapes)
        return p[self.offsets[i]:self.offsets[i + 1]].reshape(self.shapes[i])

    def layers(self, params=None):
        n_layers = len(self.hidden) + 1
        return [(self._view(2 * i, params), self._view(2 * i + 1, params))
                for i in range(n_layers)]

    @property
    def log_std(self):
        return self._view(-1)

    def get_params(self):
        return self.params.copy()

    def set_params(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params.copy()

    def forward(self, obs, params=None):
        """Mean actions with cached activations: (mu, [obs, a1, a2, ...])."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        acts = [obs]
        h = obs
        layers = self.layers(params)
        for w, b in layers[:-1]:
            h = np.tanh(h @ w.T + b)
            acts.append(h)
        w, b = layers[-1]
        mu = h @ w.T + b
        return mu, acts

    def mean(self, obs):
        mu, _ = self.forward(obs)
        return mu[0] if np.asarray(obs).ndim == 1 else mu

    def sample(self, obs, rng):
        mu = self.mean(obs)
        return mu + np.exp(self.log_std) * rng.standard_normal(self.act_dim)

    def distribution(self, obs, params=None):
        mu, _ = self.forward(obs, params)
        log_std = self._view(-1, params).copy()
        return mu, log_std

    def log_prob(self, obs, actions, params=None):
        mu, log_std = self.distribution(obs, params)
        return gaussian_log_prob(actions, mu, log_std)

    # reverse mode: sum_t grad_mu[t] pulled back to flat parameter space
    def vjp(self, acts, grad_mu, grad_log_std=None, params=None):
        out = np.zeros(self.n_params)
        layers = self.layers(params)
        g = grad_mu
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            self._view(2 * i, out)[:] = g.T @ acts[i]
            self._view(2 * i + 1, out)[:] = g.sum(axis=0)
            if i > 0:
                g = (g @ w) * (1.0 - acts[i] ** 2)
        if grad_log_std is not None:
            self._view(-1, out)[:] = grad_log_std
        return out

    # forward mode: directional derivative of mu along a flat tangent vector
    def jvp(self, acts, tangent, params=None):
        layers = self.layers(params)
        dh = None
        for i, (w, _) in enumerate(layers):
            dw = self._view(2 * i, tangent)
            db = self._view(2 * i + 1, tangent)
            dz = acts[i] @ dw.T + db
            if dh is not None:
                dz = dz + dh @ w.T
            if i < len(layers) - 1:
                dh = (1.0 - acts[i + 1] ** 2) * dz
            else:
                return dz
        return dz


def gaussian_log_prob(actions, mu, log_std):
    std = np.exp(log_std)
    z = (actions - mu) / std
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) \
        - 0.5 * mu.shape[-1] * np.log(2.0 * np.pi)


def gaussian_kl(mu_old, log_std_old, mu_new, log_std_new):
    """Mean over states of KL(old || new) for diagonal Gaussians."""
    var_old = np.exp(2.0 * log_std_old)
    var_new = np.exp(2.0 * log_std_new)
    per = (log_std_new - log_std_old
           + (var_old + (mu_old - mu_new) ** 2) / (2.0 * var_new) - 0.5)
    return float(np.mean(np.sum(per, axis=-1)))


# -- baseline --------------------------------------------------------------------

class LinearFeatureBaseline:
    """Least-squares value baseline on [obs, obs^2, t/100, (t/100)^2, (t/100)^3, 1]."""

    def __init__(self, reg=1e-5):
        self.reg = reg
        self.coeffs = None

    def _features(self, obs, length):
        o = np.clip(obs, -10.0, 10.0)
        t = np.arange(length).reshape(-1, 1) / 100.0
        return np.concatenate([o, o * o, t, t * t, t * t * t, np.ones_like(t)], axis=1)

    def predict(self, obs, length):
        if self.coeffs is None:
            return np.zeros(length)
        return self._features(obs, length) @ self.coeffs

    def fit(self, obs_list, return_list):
        feats = np.concatenate([self._features(o, len(r))
                                for o, r in zip(obs_list, return_list)])
        target = np.concatenate(return_list)
        a = feats.T @ feats + self.reg * np.eye(feats.shape[1])
        b = feats.T @ target
        self.coeffs = np.linalg.solve(a, b)

    def mse(self, obs_list, return_list):
        pred = np.concatenate([self.predict(o, len(r))
                               for o, r in zip(obs_list, return_list)])
        target = np.concatenate(return_list)
        return float(np.mean((pred - target) ** 2))


# -- rollouts --------------------------------------------------------------------

@dataclass
class Trajectory:
    observations: np.ndarray   # (T, obs_dim)
    actions: np.ndarray        # (T, act_dim)
    rewards: np.ndarray        # (T,)
    final_progress: float
    max_deformation: float
    diverged: bool
    seed_key: tuple


def discounted_returns(rewards, gamma):
    out = np.empty(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def run_trajectory(env, policy, seed_key):
    """One seeded episode; environment and action noise derive from seed_key."""
    ss = np.random.SeedSequence(seed_key)
    env_seed, act_seed = ss.spawn(2)
    rng = np.random.default_rng(act_seed)
    obs, _ = env.reset(seed=env_seed)
    horizon = env.horizon
    obs_buf = np.empty((horizon, env.obs_dim))
    act_buf = np.empty((horizon, env.act_dim))
    rew_buf = np.empty(horizon)
    final_p, max_d, diverged = 0.0, 0.0, False
    t = 0
    while t < horizon:
        action = policy.sample(obs, rng)
        obs_buf[t] = obs
        act_buf[t] = action
        obs, reward, done, diag = env.step(action)
        rew_buf[t] = getattr(reward, "total", reward)
        final_p = diag.get("r_p", 0.0)
        max_d = max(max_d, diag.get("max_deformation", 0.0))
        diverged = diag.get("diverged", False)
        t += 1
        if done:
            break
    return Trajectory(obs_buf[:t].copy(), act_buf[:t].copy(), rew_buf[:t].copy(),
                      final_p, max_d, diverged, seed_key)


def _pool_worker(args):
    make_env, policy_spec, keys = args
    env = make_env()
    policy = PolicyNet(**policy_spec["init"])
    policy.set_params(np.asarray(policy_spec["params"]))
    return [run_trajectory(env, policy, k) for k in keys]


def sample_rollouts(policy, make_env, budget, iteration=0, root_seed=0,
                    workers=1, _env_cache={}):
    """Collect whole trajectories until at least ``budget`` steps.

    Trajectory j of iteration i is seeded by (root_seed, i, j); batches are
    therefore identical for any worker split, assembled in seed order.
    """
    if make_env not in _env_cache:
        _env_cache.clear()
        _env_cache[make_env] = make_env()
    env = _env_cache[make_env]
    n_traj = max(1, int(np.ceil(budget / env.horizon)))
    keys = [(root_seed, iteration, j) for j in range(n_traj)]
    if workers <= 1 or n_traj == 1:
        return [run_trajectory(env, policy, k) for k in keys]
    spec = {"init": {"obs_dim": policy.obs_dim, "act_dim": policy.act_dim,
                     "hidden": policy.hidden},
            "params": policy.get_params()}
    chunks = [keys[w::workers] for w in range(workers)]
    ctx = get_context("spawn")
    with ctx.Pool(workers) as pool:
        parts = pool.map(_pool_worker, [(make_env, spec, c) for c in chunks if c])
    by_key = {t.seed_key: t for part in parts for t in part}
    return [by_key[k] for k in keys]


def compute_advantages(batch, baseline, gamma):
    """Standardized (discounted return - baseline) advantages per batch."""
    advs = []
    for traj in batch:
        ret = discounted_returns(traj.rewards, gamma)
        advs.append(ret - baseline.predict(traj.observations, len(ret)))
    flat = np.concatenate(advs)
    flat = (flat - flat.mean()) / (flat.std() + 1e-8)
    return flat


# -- TRPO update -----------------------------------------------------------------

@dataclass
class TrainerConfig:
    discount: float = 0.995
    kl_step: float = 0.01
    cg_iterations: int = 10
    cg_damping: float = 1e-5
    backtrack_ratio: float = 0.8
    max_backtracks: int = 15
    samples_per_iter: int = 5000
    iterations: int = 100
    seed: int = 0
    workers: int = 1
    hidden: tuple = (64, 64)
    init_std: float = 1.0
    checkpoint_every: int = 10

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("discount must lie in (0, 1)")
        if self.kl_step <= 0.0:
            raise ConfigError("kl_step must be positive")


@dataclass
class StepDiagnostics:
    accepted: bool
    improvement: float
    kl: float
    cg_residual: float
    step_scale: float
    grad_norm: float
    backtracks: int


def conjugate_gradient(matvec, b, iterations=10, tol=1e-10):
    """Plain CG for SPD systems; returns (solution, final residual norm)."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    for _ in range(iterations):
        if np.sqrt(rr) < tol:
            break
        ap = matvec(p)
        alpha = rr / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, float(np.sqrt(rr))


def surrogate_loss(policy, params, obs, actions, advantages, logp_old):
    """Importance-weighted objective E[exp(logp - logp_old) * A] at params."""
    logp = policy.log_prob(obs, actions, params)
    return float(np.mean(np.exp(logp - logp_old) * advantages))


def surrogate_grad(policy, obs, actions, advantages):
    """Analytic gradient of the surrogate at the policy's own parameters."""
    mu, acts = policy.forward(obs)
    log_std = policy.log_std
    var = np.exp(2.0 * log_std)
    n = len(obs)
    delta = actions - mu
    g_mu = advantages[:, None] * delta / var / n
    g_log = np.sum(advantages[:, None] * (delta * delta / var - 1.0), axis=0) / n
    return policy.vjp(acts, g_mu, g_log)


def fisher_vector_product(policy, obs, damping=0.0):
    """Matvec closure for the Gaussian Fisher of the mean KL over obs."""
    mu, acts = policy.forward(obs)
    var = np.exp(2.0 * policy.log_std)
    n = len(obs)
    n_logstd = policy.act_dim

    def matvec(v):
        dmu = policy.jvp(acts, v)
        out = policy.vjp(acts, dmu / var / n)
        out[-n_logstd:] += 2.0 * v[-n_logstd:]
        return out + damping * v

    return matvec


def trpo_step(policy, obs, actions, advantages, config):
    """One KL-constrained natural-gradient update in place."""
    obs = np.asarray(obs)
    actions = np.asarray(actions)
    advantages = np.asarray(advantages)
    old_params = policy.get_params()
    mu_old, log_std_old = policy.distribution(obs)
    logp_old = gaussian_log_prob(actions, mu_old, log_std_old)
    loss_before = float(np.mean(advantages))  # ratio = 1 at the old parameters

    g = surrogate_grad(policy, obs, actions, advantages)
    if not np.all(np.isfinite(g)):
        return StepDiagnostics(False, 0.0, 0.0, np.inf, 0.0, float(np.nan), 0)
    matvec = fisher_vector_product(policy, obs, damping=config.cg_damping)
    step_dir, residual = conjugate_gradient(matvec, g, config.cg_iterations)
    shs = float(step_dir @ matvec(step_dir))
    if shs <= 0.0 or not np.isfinite(shs):
        return StepDiagnostics(False, 0.0, 0.0, residual, 0.0, float(np.linalg.norm(g)), 0)
    beta = np.sqrt(2.0 * config.kl_step / shs)
    full_step = beta * step_dir

    for i in range(config.max_backtracks + 1):
        scale = config.backtrack_ratio ** i
        candidate = old_params + scale * full_step
        mu_new, log_std_new = policy.distribution(obs, candidate)
        kl = gaussian_kl(mu_old, log_std_old, mu_new, log_std_new)
        loss = float(np.mean(np.exp(
            gaussian_log_prob(actions, mu_new, log_std_new) - logp_old) * advantages))
        improvement = loss - loss_before
        if np.isfinite(loss) and improvement > 0.0 and kl <= config.kl_step:
            policy.set_params(candidate)
            return StepDiagnostics(True, improvement, kl, residual, scale,
                                   float(np.linalg.norm(g)), i)
    policy.set_params(old_params)
    return StepDiagnostics(False, 0.0, 0.0, residual, 0.0, float(np.linalg.norm(g)),
                           config.max_backtracks + 1)


# -- training loop ----------------------------------------------------------------

@dataclass
class IterationStats:
    iteration: int
    mean_return: float
    std_return: float
    mean_final_progress: float
    mean_max_deformation: float
    kl: float
    surrogate_improvement: float


def train(make_env, config, policy=None, baseline=None, start_iteration=0,
          callback=None):
    """sample -> advantages -> refit baseline -> TRPO step, per iteration.

    Returns (policy, baseline, history).  Iteration i draws its trajectory
    seeds from (config.seed, i), so a run resumed at iteration k reproduces
    the uninterrupted run exactly (the baseline state travels in the
    checkpoint).
    """
    env = make_env()
    if policy is None:
        policy = PolicyNet(env.obs_dim, env.act_dim, hidden=config.hidden,
                           seed=config.seed, init_std=config.init_std)
    if baseline is None:
        baseline = LinearFeatureBaseline()
    history = []
    for it in range(start_iteration, config.iterations):
        batch = sample_rollouts(policy, make_env, config.samples_per_iter,
                                iteration=it, root_seed=config.seed,
                                workers=config.workers)
        advantages = compute_advantages(batch, baseline, config.discount)
        obs_list = [t.observations for t in batch]
        ret_list = [discounted_returns(t.rewards, config.discount) for t in batch]
        baseline.fit(obs_list, ret_list)
        obs = np.concatenate(obs_list)
        actions = np.concatenate([t.actions for t in batch])
        diag = trpo_step(policy, obs, actions, advantages, config)
        returns = np.array([t.rewards.sum() for t in batch])
        stats = IterationStats(
            iteration=it,
            mean_return=float(returns.mean()),
            std_return=float(returns.std()),
            mean_final_progress=float(np.mean([t.final_progress for t in batch])),
            mean_max_deformation=float(np.mean([t.max_deformation for t in batch])),
            kl=diag.kl,
            surrogate_improvement=diag.improvement,
        )
        history.append(stats)
        if callback is not None:
            callback(it, policy, baseline, stats)
    return policy, baseline, history


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(path, policy, baseline, iteration, config_doc):
    """Versioned binary: header, float64 LE params, baseline, config echo."""
    params = policy.get_params().astype("<f8")
    coeffs = (np.zeros(0) if baseline is None or baseline.coeffs is None
              else np.asarray(baseline.coeffs, dtype="<f8"))
    doc = dict(config_doc)
    doc.setdefault("policy", {})
    doc["policy"] = {"obs_dim": policy.obs_dim, "act_dim": policy.act_dim,
                     "hidden": list(policy.hidden), **doc["policy"]}
    blob = json.dumps(doc, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIQQQ", CHECKPOINT_VERSION, iteration,
                             params.size, coeffs.size, len(blob)))
        fh.write(params.tobytes())
        fh.write(coeffs.tobytes())
        fh.write(blob)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise IncompatibleCheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, iteration, n_params, n_coeffs, n_blob = struct.unpack("<IIQQQ", raw[4:36])
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(f"{path}: unsupported version {version}")
    off = 36
    params = np.frombuffer(raw[off:off + 8 * n_params], dtype="<f8").copy()
    off += 8 * n_params
    coeffs = np.frombuffer(raw[off:off + 8 * n_coeffs], dtype="<f8").copy()
    off += 8 * n_coeffs
    doc = json.loads(raw[off:off + n_blob].decode())
    return {"iteration": int(iteration), "params": params,
            "baseline_coeffs": coeffs if n_coeffs else None, "config": doc}


def restore_policy(ckpt, obs_dim=None, act_dim=None):
    """Rebuild (policy, baseline) from a loaded checkpoint dict."""
    meta = ckpt["config"].get("policy", {})
    p_obs = int(meta.get("obs_dim", obs_dim or 0))
    p_act = int(meta.get("act_dim", act_dim or 0))
    if obs_dim is not None and p_obs != obs_dim:
        raise IncompatibleCheckpointError(
            f"checkpoint observation dim {p_obs} does not match environment {obs_dim}")
    if act_dim is not None and p_act != act_dim:
        raise IncompatibleCheckpointError(
            f"checkpoint action dim {p_act} does not match environment {act_dim}")
    policy = PolicyNet(p_obs, p_act, hidden=tuple(meta.get("hidden", (64, 64))))
    policy.set_params(ckpt["params"])
    baseline = LinearFeatureBaseline()
    if ckpt["baseline_coeffs"] is not None:
        baseline.coeffs = ckpt["baseline_coeffs"].copy()
    return policy, baseline


# -- built-in toy task -------------------------------------------------------------

class PointMassEnv:
    """2D reach task: velocity-command point mass, reward -(dist to goal)^2.

    Per-axis dynamics are independent and actions clamp to [-1, 1], so the
    optimal return has a closed form (walk each axis at full speed, then sit).
    """

    SPEED = 0.1
    horizon = 40
    obs_dim = 2
    act_dim = 2

    def __init__(self, goal_box=1.0):
        self.goal_box = goal_box
        self._active = False

    def reset(self, seed=None):
        rng = np.random.default_rng(seed)
        self.goal = (rng.random(2) - 0.5) * 2.0 * self.goal_box
        self.pos = np.zeros(2)
        self.t = 0
        self._active = True
        return self.goal - self.pos, {"goal": self.goal.copy()}

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        self.pos = self.pos + self.SPEED * a
        self.t += 1
        err = self.goal - self.pos
        reward = -float(err @ err)
        done = self.t >= self.horizon
        if done:
            self._active = False
        return err.copy(), reward, done, {}

    @staticmethod
    def optimal_return(goal, horizon=None, speed=None):
        """Closed-form best achievable undiscounted return for one goal."""
        horizon = horizon or PointMassEnv.horizon
        speed = speed or PointMassEnv.SPEED
        total = 0.0
        for t in range(1, horizon + 1):
            res = np.maximum(np.abs(np.asarray(goal, dtype=float)) - t * speed, 0.0)
            total -= float(res @ res)
        return total
