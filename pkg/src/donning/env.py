"""Dressing POMDP: tasks, gripper trajectories, and the step loop.

A scripted gripper holds a sleeve by pinned rim vertices; the simulated human
controls 11 joint accelerations and is rewarded for threading the right arm
through the sleeve's feature loop.  Episodes run 400 control steps at 0.04 s
(frame skip 4 over the 0.01 s cloth/body substep), no early termination
except solver divergence.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import body as bodymod
from . import clothsim, garment, percept, rewards
from .errors import ConfigError, SolverDivergenceError, UsageError

TASK_KINDS = ("FixedGown", "FrontLinear", "SideLinear")

HORIZON = 400
FRAME_SKIP = 4
SIM_DT = 0.01
DISCOUNT = 0.995
WARMUP_TIME = 0.5
TRAVEL_TIME = 10.0
PIN_COUNT = 4


@dataclass
class TaskSpec:
    """Gripper start/target boxes and garment orientation for one task.

    Box dimensions follow the published setups: FixedGown [0.6, 0.35, 0.1];
    FrontLinear start [0.4, 0.45, 0.1], target [0.3, 0.3, 0.1]; SideLinear
    start [0.1, 0.3, 0.5], target [0.1, 0.3, 0.3].  Linear tasks travel at
    constant velocity for 10 s, then hold.  The garment tube is oriented
    along ``orientation_normal`` (feature plane normal pointing into the
    garment); for linear tasks that is the XZ-projected travel direction.
    """

    kind: str
    start_center: np.ndarray
    start_dims: np.ndarray
    target_center: np.ndarray = None
    target_dims: np.ndarray = None
    travel_time: float = TRAVEL_TIME

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        self.start_center = np.asarray(self.start_center, dtype=float)
        self.start_dims = np.asarray(self.start_dims, dtype=float)
        if self.kind == "FixedGown":
            self.target_center = None
            self.target_dims = None
        else:
            if self.target_center is None or self.target_dims is None:
                raise ConfigError(f"{self.kind} requires a target box")
            self.target_center = np.asarray(self.target_center, dtype=float)
            self.target_dims = np.asarray(self.target_dims, dtype=float)
            if self.travel_time <= 0.0:
                raise ConfigError("travel_time must be positive")
        if np.any(self.start_dims < 0.0):
            raise ConfigError("box dimensions must be nonnegative")

    @property
    def moving(self):
        return self.kind != "FixedGown"

    def orientation_normal(self, start=None, target=None):
        """Unit feature-plane normal used to place the garment.

        SideLinear rotates the sleeve so the inner-opening direction matches
        the XZ projection of the gripper trajectory (the sampled one when
        start/target are given, the box center line otherwise); the other
        tasks keep the default orientation with the opening facing the
        character (+z tube).
        """
        if self.kind != "SideLinear":
            return np.array([0.0, 0.0, 1.0])
        if start is None:
            start, target = self.start_center, self.target_center
        d = np.asarray(target, dtype=float) - np.asarray(start, dtype=float)
        d = np.array([d[0], 0.0, d[2]])
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ConfigError(f"{self.kind}: XZ-projected trajectory has zero length")
        return d / n

    def sample(self, rng):
        """Draw (start, target-or-None) gripper positions."""
        start = self.start_center + (rng.random(3) - 0.5) * self.start_dims
        if not self.moving:
            return start, None
        target = self.target_center + (rng.random(3) - 0.5) * self.target_dims
        return start, target


def default_task(kind, shoulder):
    """Task boxes placed around the body's zero-pose right shoulder."""
    sx, sy = float(shoulder[0]), float(shoulder[1])
    if kind == "FixedGown":
        return TaskSpec(kind, start_center=[sx, sy, 0.40], start_dims=[0.6, 0.35, 0.1])
    if kind == "FrontLinear":
        return TaskSpec(kind, start_center=[0.0, sy, 0.6], start_dims=[0.4, 0.45, 0.1],
                        target_center=[0.0, sy, 0.2], target_dims=[0.3, 0.3, 0.1])
    if kind == "SideLinear":
        return TaskSpec(kind, start_center=[0.75, sy, 0.0], start_dims=[0.1, 0.3, 0.5],
                        target_center=[0.35, sy, 0.0], target_dims=[0.1, 0.3, 0.3])
    raise ConfigError(f"unknown task kind {kind!r}; expected one of {TASK_KINDS}")


@dataclass
class EpisodeConfig:
    horizon: int = HORIZON
    frame_skip: int = FRAME_SKIP
    sim_dt: float = SIM_DT
    discount: float = DISCOUNT
    warmup_time: float = WARMUP_TIME
    pin_count: int = PIN_COUNT

    @property
    def control_dt(self):
        return self.frame_skip * self.sim_dt


@dataclass
class EnvConfig:
    task: str = "FixedGown"
    seed: int = 0
    garment_path: str = None      # None -> built-in procedural sleeve
    body_path: str = None         # None -> built-in default body
    start_center: list = None     # box overrides, None -> task defaults
    start_dims: list = None
    target_center: list = None
    target_dims: list = None
    travel_time: float = TRAVEL_TIME
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    cloth: clothsim.ClothParams = field(default_factory=lambda: clothsim.ClothParams(damping=1.0))
    weights: rewards.RewardWeights = field(default_factory=rewards.RewardWeights)
    ablation: str = "none"        # none | no_haptics | no_task
    qdot_scale: float = 1.0       # observation joint-velocity scaling (off)
    accel_scale: float = 10.0
    actuation_damping: float = 2.0
    vel_limit: float = 4.0

    def __post_init__(self):
        if self.ablation not in ("none", "no_haptics", "no_task"):
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.ablation == "no_haptics":
            # haptics-unaware baseline also drops the deformation reward term
            self.weights = replace(self.weights, deformation=0.0)


_CONFIG_SCALARS = ["task", "seed", "garment_path", "body_path", "travel_time",
                   "ablation", "qdot_scale", "accel_scale", "actuation_damping",
                   "vel_limit"]
_CONFIG_BOXES = ["start_center", "start_dims", "target_center", "target_dims"]


def config_to_json(cfg):
    doc = {k: getattr(cfg, k) for k in _CONFIG_SCALARS}
    for k in _CONFIG_BOXES:
        v = getattr(cfg, k)
        doc[k] = None if v is None else list(v)
    doc["episode"] = {k: getattr(cfg.episode, k) for k in
                      ("horizon", "frame_skip", "sim_dt", "discount", "warmup_time", "pin_count")}
    doc["cloth"] = {k: getattr(cfg.cloth, k) for k in
                    ("iterations", "stretch_stiffness", "bend_stiffness", "thickness",
                     "damping", "mass_total", "collision_passes")}
    doc["weights"] = {k: getattr(cfg.weights, k) for k in
                      ("progress", "deformation", "geodesic", "upright")}
    return doc


def config_from_json(doc):
    known = set(_CONFIG_SCALARS) | set(_CONFIG_BOXES) | {"episode", "cloth", "weights"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: doc[k] for k in _CONFIG_SCALARS if k in doc}
    for k in _CONFIG_BOXES:
        if k in doc:
            kwargs[k] = doc[k]
    if "episode" in doc:
        kwargs["episode"] = EpisodeConfig(**doc["episode"])
    if "cloth" in doc:
        kwargs["cloth"] = clothsim.ClothParams(**doc["cloth"])
    if "weights" in doc:
        kwargs["weights"] = rewards.RewardWeights(**doc["weights"])
    return EnvConfig(**kwargs)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    try:
        return config_from_json(doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def save_config(cfg, path):
    Path(path).write_text(json.dumps(config_to_json(cfg), indent=1) + "\n")


def _rotation_to(direction):
    """Rotation matrix taking +z to the given unit direction."""
    z = np.array([0.0, 0.0, 1.0])
    d = np.asarray(direction, dtype=float)
    c = float(np.dot(z, d))
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        return np.diag([-1.0, 1.0, -1.0])  # 180 degrees about y
    axis = np.cross(z, d)
    s = np.linalg.norm(axis)
    axis = axis / s
    k = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _top_rim_pins(mesh, feature, count):
    """The rim vertices nearest the top seam (largest y), count of them."""
    idx = feature.vertex_indices
    pos = mesh.vertices[idx]
    top = pos[np.argmax(pos[:, 1])].copy()
    order = np.argsort(np.linalg.norm(pos - top, axis=1), kind="stable")
    return np.sort(idx[order[:count]])


class DressingEnv:
    """One episode-owning environment instance (single-threaded)."""

    def __init__(self, config=None):
        self.config = config or EnvConfig()
        cfg = self.config
        if cfg.body_path:
            self.model = bodymod.load_body(cfg.body_path)
        else:
            self.model = bodymod.default_body(accel_scale=cfg.accel_scale,
                                              damping=cfg.actuation_damping,
                                              vel_limit=cfg.vel_limit)
        rest = bodymod.forward_kinematics(self.model, np.zeros(bodymod.N_DOF))
        shoulder = rest.site_world[self.model.site_names.index("r_shoulder")]
        task = default_task(cfg.task, shoulder)
        for name in ("start_center", "start_dims", "target_center", "target_dims"):
            v = getattr(cfg, name)
            if v is not None:
                setattr(task, name, np.asarray(v, dtype=float))
        task.travel_time = cfg.travel_time
        self.task = TaskSpec(task.kind, task.start_center, task.start_dims,
                             task.target_center, task.target_dims, task.travel_time)
        if cfg.garment_path:
            self.base_mesh = garment.load_garment(cfg.garment_path)
        else:
            self.base_mesh = garment.sleeve_mesh()
        self.obs_dim = percept.OBS_DIM
        self.act_dim = bodymod.N_ACTUATED
        self._active = False

    @property
    def horizon(self):
        return self.config.episode.horizon

    # -- episode control -------------------------------------------------------

    def reset(self, seed=None):
        cfg = self.config
        ep = cfg.episode
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        g0, g1 = self.task.sample(rng)
        normal = self.task.orientation_normal(g0, g1)

        rot = _rotation_to(normal)
        base = self.base_mesh
        pins = _top_rim_pins(base, base.active_feature, ep.pin_count)
        verts = base.vertices @ rot.T
        offset = g0 - verts[pins].mean(axis=0)
        verts = verts + offset
        self.mesh = garment.GarmentMesh(verts, base.triangles,
                                        [lp.vertex_indices for lp in base.features],
                                        active=base.active, validate=False)
        garment.build_geodesic_field(self.mesh)
        self.placement_feature = garment.fit_feature_plane(self.mesh, self.mesh.active_feature)

        self.body = bodymod.forward_kinematics(self.model, np.zeros(bodymod.N_DOF))
        self.cloth = clothsim.rest_cloth(self.mesh, pins)
        self._pin_rest = self.mesh.vertices[self.cloth.pin_ids].copy()
        self._grip0, self._grip1 = g0, g1

        warm_steps = int(round(ep.warmup_time / ep.sim_dt))
        for _ in range(warm_steps):
            self.cloth = clothsim.step_cloth(self.mesh, self.cloth, self.body,
                                             self._pin_targets(0.0), ep.sim_dt, cfg.cloth)
        self.feature = garment.fit_feature_plane(self.mesh, self.mesh.active_feature,
                                                 positions=self.cloth.positions)
        self.t = 0
        self._substeps = 0
        self._active = True
        self._diverged = False
        obs, breakdown, diag = self._observe()
        info = {
            "gripper_start": g0.copy(),
            "gripper_target": None if g1 is None else g1.copy(),
            "placement_normal": self.placement_feature.plane_normal.copy(),
            **diag,
        }
        self._last = (obs, breakdown, diag)
        return obs, info

    def gripper_position(self, t):
        """Scripted grasp point at episode time t (affine, then fixed)."""
        if not self.task.moving:
            return self._grip0.copy()
        a = min(t, self.task.travel_time) / self.task.travel_time
        return self._grip0 + a * (self._grip1 - self._grip0)

    def _pin_targets(self, t):
        return self._pin_rest + (self.gripper_position(t) - self._grip0)

    def step(self, action):
        if not self._active:
            raise UsageError("step called on an inactive episode; call reset first")
        cfg = self.config
        ep = cfg.episode
        try:
            for _ in range(ep.frame_skip):
                self.body = bodymod.integrate_action(self.model, self.body, action, ep.sim_dt)
                self._substeps += 1
                t = self._substeps * ep.sim_dt
                self.cloth = clothsim.step_cloth(self.mesh, self.cloth, self.body,
                                                 self._pin_targets(t), ep.sim_dt, cfg.cloth)
        except SolverDivergenceError:
            self._diverged = True
        if not self._diverged:
            self.feature = garment.fit_feature_plane(self.mesh, self.mesh.active_feature,
                                                     positions=self.cloth.positions)
            self._last = self._observe()
        obs, breakdown, diag = self._last
        self.t += 1
        done = self.t >= ep.horizon or self._diverged
        diag = dict(diag, step=self.t, diverged=self._diverged)
        if done:
            self._active = False
        return obs, breakdown, done, diag

    def _observe(self):
        breakdown = rewards.full_reward(self.mesh, self.feature, self.cloth, self.body,
                                        self.model.hand_capsule, weights=self.config.weights,
                                        torso_dofs=self.model.torso_dofs)
        ob = percept.build_observation(self.body, self.mesh, self.cloth, self.feature,
                                       self.cloth.contacts, breakdown.k_int,
                                       self.model.hand_capsule)
        vec = ob.vector
        if self.config.qdot_scale != 1.0:
            off, n = percept.SEGMENTS["proprio"]
            vec[off + 44:off + 66] *= self.config.qdot_scale
        vec = percept.apply_ablation(vec, self.config.ablation)
        diag = {
            "k_int": breakdown.k_int,
            "containment_depth": breakdown.containment_depth,
            "max_deformation": breakdown.max_deformation,
            "task_case": ob.task_case,
            "r_p": breakdown.r_p,
        }
        return vec, breakdown, diag

    def observation_spec(self):
        segs = [{"name": k, "offset": off, "length": n}
                for k, (off, n) in percept.SEGMENTS.items()]
        return {"obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "horizon": self.config.episode.horizon, "segments": segs}


def evaluate(policy, env, episodes=100, base_seed=0, stochastic=False, rng_seed=None):
    """Roll the policy for N seeded episodes; per-step progress/deformation stats.

    ``policy`` maps an observation vector to an 11-dim action (its ``mean``
    unless ``stochastic``).  Episode seeds derive from ``base_seed`` so two
    calls produce identical curves.  Returns a dict of (horizon,) mean/std
    arrays plus scalar summaries.
    """
    hor = env.config.episode.horizon
    prog = np.zeros((episodes, hor))
    deform = np.zeros((episodes, hor))
    finals, maxima, returns = [], [], []
    for e in range(episodes):
        seeds = np.random.SeedSequence((base_seed, e))
        ep_seed, act_seed = seeds.spawn(2)
        rng = np.random.default_rng(act_seed if rng_seed is None else (rng_seed, e))
        obs, _ = env.reset(seed=ep_seed)
        total = 0.0
        last_p = 0.0
        max_d = 1.0
        for t in range(hor):
            act = policy.sample(obs, rng) if stochastic else policy.mean(obs)
            obs, breakdown, done, diag = env.step(act)
            prog[e, t] = diag["r_p"]
            deform[e, t] = diag["max_deformation"]
            total += breakdown.total
            last_p = diag["r_p"]
            max_d = max(max_d, diag["max_deformation"])
            if done:
                if t < hor - 1:
                    prog[e, t + 1:] = prog[e, t]
                    deform[e, t + 1:] = deform[e, t]
                break
        finals.append(last_p)
        maxima.append(max_d)
        returns.append(total)
    return {
        "progress_mean": prog.mean(axis=0),
        "progress_std": prog.std(axis=0),
        "deformation_mean": deform.mean(axis=0),
        "deformation_std": deform.std(axis=0),
        "final_progress": np.asarray(finals),
        "episode_max_deformation": np.asarray(maxima),
        "returns": np.asarray(returns),
        "mean_final_progress": float(np.mean(finals)),
        "mean_max_deformation": float(np.mean(maxima)),
        "mean_return": float(np.mean(returns)),
    }
