"""One test per release criterion, each printing a single pass/fail line.

Criteria 1-7, 10, and 11 form the fast tier (a few minutes, dominated by the
determinism check).  Criteria 8 and 9 retrain the dressing policy at desk
scale, three runs of 100 iterations x 5,000 samples on one core (roughly 80
minutes), and carry the ``slow`` marker; skip them with ``-m "not slow"``
when iterating.  Criterion pass/fail lines and desk training progress lift
output capture, so they stay visible even under the default capture mode.
"""

import dataclasses
import math
import sys
import threading
import time
from contextlib import contextmanager, nullcontext
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from donning import clothsim, garment, harness, percept, rewards, trainer
from donning import env as envmod
from donning.body import bone_segments, default_body, forward_kinematics
from donning.clothsim import ContactRecord, rest_cloth, step_cloth
from donning.garment import FeatureLoop, sleeve_mesh
from donning.harness import EnvClient, EnvFactory, EnvServer, RandomPolicy
from donning.trainer import (LinearFeatureBaseline, PointMassEnv, PolicyNet,
                             TrainerConfig, compute_advantages,
                             conjugate_gradient, discounted_returns,
                             fisher_vector_product, gaussian_kl,
                             sample_rollouts, surrogate_grad, surrogate_loss,
                             train, trpo_step)

from _oracles import (dense_containment, explicit_fisher, fd_gradient,
                      naive_geodesic_field)


_CAPMAN = None


@pytest.fixture(scope="module", autouse=True)
def _capture_handle(request):
    """Keep a handle on the capture manager so announce() can lift capture."""
    global _CAPMAN
    _CAPMAN = request.config.pluginmanager.getplugin("capturemanager")


def announce(text):
    """Print on the real stderr even under pytest's default fd capture."""
    lifted = (_CAPMAN.global_and_fixture_disabled() if _CAPMAN is not None
              else nullcontext())
    with lifted:
        print(text, file=sys.stderr, flush=True)


@contextmanager
def criterion(num, label, budget=None):
    """Wrap one criterion; print `criterion NN PASS/FAIL label: notes`."""
    notes = []
    t0 = time.perf_counter()
    try:
        yield notes
        elapsed = time.perf_counter() - t0
        if budget is not None and elapsed >= budget:
            raise AssertionError(f"{elapsed:.1f}s exceeded the {budget:.0f}s budget")
    except BaseException:
        announce(f"criterion {num:02d} FAIL {label}")
        raise
    notes.append(f"{elapsed:.1f}s")
    announce(f"criterion {num:02d} PASS {label}: " + "; ".join(notes))


# -- 1: observation contract -------------------------------------------------------

def test_criterion_01_observation_contract():
    with criterion(1, "163-entry observation, layout [66, 6, 66, 22, 3]", budget=10.0) as notes:
        layout = {"proprio": (0, 66), "feature_loc": (66, 6), "haptics": (72, 66),
                  "surface": (138, 22), "task": (160, 3)}
        assert percept.SEGMENTS == layout
        assert percept.OBS_DIM == 163
        model = default_body()
        mesh = garment.build_geodesic_field(sleeve_mesh())
        rest = np.array(mesh.vertices)
        rng = np.random.default_rng(0)
        cases = np.zeros(4, dtype=int)
        for _ in range(1000):
            q = rng.uniform(model.q_lo, model.q_hi)
            qdot = rng.uniform(-model.vel_limit, model.vel_limit)
            state = forward_kinematics(model, q, qdot)
            cloth = rest_cloth(mesh)
            cloth.positions = rest + rng.uniform(-0.01, 0.01, rest.shape)
            feature = garment.fit_feature_plane(mesh, mesh.active_feature,
                                                positions=cloth.positions)
            contacts = [ContactRecord(cloth_vertex=int(v),
                                      point=cloth.positions[int(v)].copy(),
                                      force=rng.normal(size=3) * 0.4,
                                      body_capsule=int(rng.integers(0, len(state.capsule_radius))),
                                      sensor_bin=0)
                        for v in rng.integers(0, len(rest), size=rng.integers(0, 6))]
            k_int, _ = rewards.containment(state, feature)
            obs = percept.build_observation(state, mesh, cloth, feature, contacts,
                                            k_int, model.hand_capsule)
            v = obs.vector
            assert v.shape == (163,)
            assert np.all(np.isfinite(v))
            for name, seg in (("proprio", obs.proprio), ("feature_loc", obs.feature_loc),
                              ("haptics", obs.haptics), ("surface", obs.surface),
                              ("task", obs.task)):
                off, n = layout[name]
                assert seg.shape == (n,)
                assert np.array_equal(v[off:off + n], seg)
            cases[obs.task_case] += 1
        assert cases[1] > 0 and cases[3] > 0  # approach and contact cases both exercised
        notes.append(f"1000 states exact, task cases {cases[1:].tolist()}")


# -- 2: deformation penalty --------------------------------------------------------

def test_criterion_02_deformation_penalty_curve():
    with criterion(2, "penalty anchors within 1e-9, monotone, in (-2, 0]", budget=1.0) as notes:
        mesh = sleeve_mesh()
        rest = np.array(mesh.vertices)

        def r_d(max_d):
            # uniform scaling by sqrt(max_d) multiplies every triangle area by max_d
            val, measured = rewards.deformation_penalty(
                mesh, SimpleNamespace(positions=rest * math.sqrt(max_d)))
            assert abs(measured - max_d) <= 1e-9 * max(1.0, max_d)
            return val

        worst = 0.0
        for m in (1.0, 13.0, 15.0, 17.0, 20.0):
            want = math.tanh(0.7 * (15.0 - m + 2.0)) - 1.0
            worst = max(worst, abs(r_d(m) - want))
        assert worst <= 1e-9
        sweep = np.array([r_d(m) for m in np.linspace(0.25, 25.0, 1000)])
        assert np.all(np.diff(sweep) < 0.0)
        assert np.all(sweep > -2.0)
        assert np.all(sweep <= 0.0)
        notes.append(f"anchor error {worst:.1e}, 1000-point sweep strictly decreasing")


# -- 3: geodesic field -------------------------------------------------------------

def test_criterion_03_geodesic_field_matches_naive_dijkstra():
    with criterion(3, "field vs naive Dijkstra on 10 random sleeves", budget=30.0) as notes:
        rng = np.random.default_rng(7)
        worst = 0.0
        for i in range(10):
            segments = int(rng.integers(6, 17))
            panel = i % 3 == 0
            cap = (500 - (45 if panel else 0)) // segments
            rings = int(rng.integers(4, min(20, cap) + 1))
            mesh = sleeve_mesh(rings=rings, segments=segments,
                               radius=float(rng.uniform(0.04, 0.12)),
                               length=float(rng.uniform(0.2, 0.6)), panel=panel)
            assert len(mesh.vertices) <= 500
            garment.build_geodesic_field(mesh)
            loop = mesh.active_feature.vertex_indices
            diff = float(np.max(np.abs(mesh.geodesic - naive_geodesic_field(mesh, loop))))
            worst = max(worst, diff)
            assert diff <= 1e-9
            assert np.all(mesh.geodesic[loop] == 0.0)
            assert float(mesh.geodesic.min()) == 0.0
            assert float(mesh.geodesic.max()) == 1.0
        notes.append(f"max |field - oracle| {worst:.1e}")


# -- 4: containment ----------------------------------------------------------------

def _tilted_loop():
    """Fixed circular feature polygon placed inside the arm's reachable shell."""
    ang = np.linspace(0.0, 2.0 * np.pi, 24, endpoint=False)
    polygon = 0.28 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    normal = np.array([0.25, 0.85, 0.45])
    normal /= np.linalg.norm(normal)
    b1 = np.cross(normal, np.array([1.0, 0.0, 0.0]))
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(normal, b1)
    return FeatureLoop(vertex_indices=np.arange(24),
                       plane_point=np.array([0.19, 0.18, 0.22]),
                       plane_normal=normal, basis=np.stack([b1, b2]),
                       polygon2d=polygon)


def test_criterion_04_containment_matches_dense_sampling():
    with criterion(4, "k_int vs dense sampling on 1000 random poses", budget=60.0) as notes:
        model = default_body()
        loop = _tilted_loop()
        rng = np.random.default_rng(11)
        checked = skipped = 0
        hits = np.zeros(4, dtype=int)
        for _ in range(1000):
            state = forward_kinematics(model, rng.uniform(model.q_lo, model.q_hi))
            k_impl, _ = rewards.containment(state, loop)
            k_oracle, boundary = dense_containment(bone_segments(state), loop)
            if boundary <= 1e-6:
                skipped += 1
                continue
            assert k_impl == k_oracle
            checked += 1
            hits[k_impl] += 1
        assert checked >= 950
        assert hits[0] >= 100 and hits[1:].sum() >= 100  # both outcomes well exercised
        notes.append(f"{checked} agree, {skipped} near-boundary skipped, "
                     f"k_int counts {hits.tolist()}")


# -- 5: cloth solver invariants ----------------------------------------------------

def _point_segment_distance(points, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def test_criterion_05_cloth_solver_invariants(monkeypatch):
    with criterion(5, "pins exact, penetration, free fall, momentum", budget=60.0) as notes:
        mesh = sleeve_mesh()
        rest = np.array(mesh.vertices)
        empty = SimpleNamespace(capsule_a=np.zeros((0, 3)), capsule_b=np.zeros((0, 3)),
                                capsule_radius=np.zeros(0), sensor_world=np.zeros((22, 3)))
        no_pins = np.zeros((0, 3))

        # free fall with a fine step: CoM drop tracks g t^2 / 2 within 1e-3 m at t = 1 s
        cloth = rest_cloth(mesh)
        y0 = float(cloth.positions[:, 1].mean())
        for _ in range(10_000):
            cloth = step_cloth(mesh, cloth, empty, no_pins, 1e-4)
        fall_err = abs((y0 - float(cloth.positions[:, 1].mean())) - 0.5 * 9.81)
        assert fall_err <= 1e-3

        # zero gravity, no contacts: per-step momentum drift below 1e-9
        monkeypatch.setattr(clothsim, "GRAVITY", 0.0)
        cloth = rest_cloth(mesh)
        cloth.velocities = np.random.default_rng(5).normal(size=rest.shape) * 0.2
        vertex_mass = 0.3 / len(rest)
        drift = 0.0
        for _ in range(50):
            before = cloth.velocities.sum(axis=0)
            cloth = step_cloth(mesh, cloth, empty, no_pins, 0.01)
            delta = np.abs(cloth.velocities.sum(axis=0) - before)
            drift = max(drift, float(vertex_mass * delta.max()))
        assert drift <= 1e-9
        monkeypatch.undo()

        # sleeve draped over the horizontal arm, four pins on moving targets
        model = default_body()
        q = np.zeros(22)
        q[8] = -np.pi / 2  # r_shoulder_rx: arm points forward, along the tube axis
        state = forward_kinematics(model, q)
        cloth = rest_cloth(mesh, pin_ids=np.argsort(rest[:, 1])[-4:])
        cloth.positions = rest + np.array([0.19, 0.43, 0.10])
        cloth.prev_positions = cloth.positions.copy()
        base_targets = cloth.positions[cloth.pin_ids].copy()
        pin_err = pen = 0.0
        touched = 0
        free = np.setdiff1d(np.arange(len(rest)), cloth.pin_ids)
        for k in range(120):
            targets = base_targets + np.array([0.02 * math.sin(0.05 * k), 0.0, 0.0])
            cloth = step_cloth(mesh, cloth, state, targets, 0.01)
            pin_err = max(pin_err, float(np.max(np.abs(cloth.positions[cloth.pin_ids] - targets))))
            for c in range(len(state.capsule_radius)):
                d = _point_segment_distance(cloth.positions[free],
                                            state.capsule_a[c], state.capsule_b[c])
                pen = max(pen, float(np.max(state.capsule_radius[c] - d)))
            touched += len(cloth.contacts)
        assert pin_err <= 1e-6
        assert pen <= 1e-4
        assert touched > 100
        notes.append(f"fall error {fall_err:.1e} m, momentum drift {drift:.1e}, "
                     f"pin error {pin_err:.1e} m, penetration {pen:.1e} m, "
                     f"{touched} contacts")


# -- 6: TRPO mechanics -------------------------------------------------------------

def _point_env():
    return PointMassEnv()


def test_criterion_06_trpo_mechanics():
    with criterion(6, "CG, Fisher-vector product, trust region, gradient", budget=120.0) as notes:
        rng = np.random.default_rng(3)
        q_mat, _ = np.linalg.qr(rng.normal(size=(8, 8)))
        a_mat = q_mat @ np.diag(rng.uniform(0.5, 5.0, 8)) @ q_mat.T
        b = rng.normal(size=8)
        x_dense = np.linalg.solve(a_mat, b)
        x_cg, _ = conjugate_gradient(lambda v: a_mat @ v, b)
        cg_rel = float(np.linalg.norm(x_cg - x_dense) / np.linalg.norm(x_dense))
        assert cg_rel <= 1e-6

        tiny = PolicyNet(3, 2, hidden=(4, 4), seed=1)
        obs = rng.normal(size=(20, 3))
        fisher = explicit_fisher(tiny, obs)
        matvec = fisher_vector_product(tiny, obs, damping=0.0)
        fvp_err = max(float(np.max(np.abs(matvec(v) - fisher @ v)))
                      for v in rng.normal(size=(5, tiny.n_params)))
        assert fvp_err <= 1e-5

        actions = rng.normal(size=(20, 2))
        adv = rng.normal(size=20)
        grad = surrogate_grad(tiny, obs, actions, adv)
        logp_old = tiny.log_prob(obs, actions)
        fd = fd_gradient(lambda p: surrogate_loss(tiny, p, obs, actions, adv, logp_old),
                         tiny.get_params())
        grad_rel = float(np.linalg.norm(grad - fd) / np.linalg.norm(fd))
        assert grad_rel <= 1e-4

        # accepted updates respect the trust region when the KL is re-measured
        cfg = TrainerConfig(iterations=5, samples_per_iter=600, seed=2, hidden=(16, 16))
        policy = PolicyNet(2, 2, hidden=cfg.hidden, seed=cfg.seed)
        baseline = LinearFeatureBaseline()
        accepted, worst_kl = 0, 0.0
        for it in range(cfg.iterations):
            batch = sample_rollouts(policy, _point_env, cfg.samples_per_iter,
                                    iteration=it, root_seed=cfg.seed)
            adv_b = compute_advantages(batch, baseline, cfg.discount)
            baseline.fit([t.observations for t in batch],
                         [discounted_returns(t.rewards, cfg.discount) for t in batch])
            obs_b = np.concatenate([t.observations for t in batch])
            act_b = np.concatenate([t.actions for t in batch])
            mu_old, log_std_old = policy.distribution(obs_b)
            diag = trpo_step(policy, obs_b, act_b, adv_b, cfg)
            if diag.accepted:
                mu_new, log_std_new = policy.distribution(obs_b)
                kl = float(np.mean(gaussian_kl(mu_old, log_std_old, mu_new, log_std_new)))
                worst_kl = max(worst_kl, kl)
                assert kl <= cfg.kl_step + 1e-12
                accepted += 1
        assert accepted >= 3
        notes.append(f"cg rel {cg_rel:.1e}, fvp {fvp_err:.1e}, grad rel {grad_rel:.1e}, "
                     f"worst KL {worst_kl:.4f} over {accepted} accepted steps")


# -- 7: point-mass learning --------------------------------------------------------

def _point_mass_returns(policy, episodes, base_seed):
    """Stochastic seeded rollouts; returns (mean return, mean analytic optimum)."""
    env = PointMassEnv()
    returns, optima = [], []
    for e in range(episodes):
        ep_seed, act_seed = np.random.SeedSequence((base_seed, e)).spawn(2)
        rng = np.random.default_rng(act_seed)
        obs, info = env.reset(seed=ep_seed)
        optima.append(PointMassEnv.optimal_return(info["goal"]))
        total, done = 0.0, False
        while not done:
            obs, r, done, _ = env.step(policy.sample(obs, rng))
            total += r
        returns.append(total)
    return float(np.mean(returns)), float(np.mean(optima))


def test_criterion_07_point_mass_gap_closure():
    with criterion(7, "30 iterations close >= 50% of the return gap", budget=300.0) as notes:
        cfg = TrainerConfig(iterations=30, samples_per_iter=1500, seed=0, hidden=(16, 16))
        floor = PolicyNet(2, 2, hidden=cfg.hidden, seed=cfg.seed, init_std=cfg.init_std)
        r_floor, r_opt = _point_mass_returns(floor, 100, base_seed=900)
        policy = PolicyNet(2, 2, hidden=cfg.hidden, seed=cfg.seed, init_std=cfg.init_std)
        train(_point_env, cfg, policy=policy, baseline=LinearFeatureBaseline())
        r_final, _ = _point_mass_returns(policy, 100, base_seed=900)
        gap = r_opt - r_floor
        closed = r_final - r_floor
        assert gap > 0.0
        assert closed >= 0.5 * gap
        notes.append(f"random {r_floor:.2f}, trained {r_final:.2f}, optimal {r_opt:.2f}, "
                     f"{100.0 * closed / gap:.0f}% closed")


# -- 8 + 9: desk-scale dressing runs -------------------------------------------------

DESK_ITERATIONS = 100
DESK_SAMPLES = 5000
DESK_EPISODES = 100
DESK_EVAL_SEED = 1000


@pytest.fixture(scope="module")
def desk_runs():
    """Complete, no_haptics, and no_task training runs plus the random floor.

    All runs share environment seed 0, trainer seed 0, and the evaluation
    seed, so the ablation comparisons differ only in the observation/reward
    wiring.  Progress goes through announce() (capture would otherwise hide
    an hour of work).
    """
    results = {}
    for key in ("complete", "no_haptics", "no_task"):
        cfg = envmod.EnvConfig(task="FixedGown", seed=0,
                               ablation="none" if key == "complete" else key)
        t0 = time.time()

        def live(it, pol, base, stats, key=key, t0=t0):
            if it % 10 == 0 or it == DESK_ITERATIONS - 1:
                announce(f"[desk {key}] iter {it} return {stats.mean_return:.0f} "
                         f"progress {stats.mean_final_progress:.3f} "
                         f"deformation {stats.mean_max_deformation:.2f} "
                         f"({time.time() - t0:.0f}s)")

        policy, _, _ = train(EnvFactory(cfg),
                             TrainerConfig(iterations=DESK_ITERATIONS,
                                           samples_per_iter=DESK_SAMPLES, seed=0),
                             callback=live)
        results[key] = envmod.evaluate(policy, envmod.DressingEnv(cfg),
                                       episodes=DESK_EPISODES, base_seed=DESK_EVAL_SEED)
        announce(f"[desk {key}] eval progress {results[key]['mean_final_progress']:.3f} "
                 f"deformation {results[key]['mean_max_deformation']:.2f}")
    floor_env = envmod.DressingEnv(envmod.EnvConfig(task="FixedGown", seed=0))
    results["random"] = envmod.evaluate(RandomPolicy(floor_env.act_dim), floor_env,
                                        episodes=DESK_EPISODES, base_seed=DESK_EVAL_SEED,
                                        stochastic=True)
    announce(f"[desk random] eval progress {results['random']['mean_final_progress']:.3f} "
             f"deformation {results['random']['mean_max_deformation']:.2f}")
    return results


@pytest.mark.slow
def test_criterion_08_desk_scale_dressing(desk_runs):
    with criterion(8, "trained policy beats the random floor, deformation < 20") as notes:
        pol = desk_runs["complete"]["final_progress"]
        floor = desk_runs["random"]["final_progress"]
        lift = float(pol.mean() - floor.mean())
        se = float(np.sqrt(pol.var(ddof=1) / len(pol) + floor.var(ddof=1) / len(floor)))
        deform = desk_runs["complete"]["mean_max_deformation"]
        assert lift > 0.0
        assert lift >= 3.0 * se
        assert deform < 20.0
        notes.append(f"progress lift {lift:.3f} ({lift / se:.1f} standard errors), "
                     f"mean max deformation {deform:.2f}")


@pytest.mark.slow
def test_criterion_09_ablation_ordering(desk_runs):
    with criterion(9, "no_task progress <= complete, no_haptics deformation >= complete") as notes:
        prog_c = desk_runs["complete"]["mean_final_progress"]
        prog_nt = desk_runs["no_task"]["mean_final_progress"]
        def_c = desk_runs["complete"]["mean_max_deformation"]
        def_nh = desk_runs["no_haptics"]["mean_max_deformation"]
        assert prog_nt <= prog_c
        assert def_nh >= def_c
        notes.append(f"progress {prog_nt:.3f} <= {prog_c:.3f}, "
                     f"deformation {def_nh:.2f} >= {def_c:.2f}")


# -- 10: deterministic artifacts -----------------------------------------------------

def _csv_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(Path(root).rglob("*.csv"))}


def test_criterion_10_byte_identical_artifacts(tmp_path):
    with criterion(10, "repeated train and eval runs write identical CSVs", budget=600.0) as notes:
        cfg_path = tmp_path / "env.json"
        envmod.save_config(envmod.EnvConfig(task="FixedGown", seed=5), cfg_path)
        train_dirs = [tmp_path / "train_a", tmp_path / "train_b"]
        for d in train_dirs:
            assert harness.main(["train", "--config", str(cfg_path), "--out", str(d),
                                 "--iters", "3"]) == 0
        t_a, t_b = (_csv_bytes(d) for d in train_dirs)
        assert t_a and t_a == t_b
        ckpt = train_dirs[0] / "checkpoints" / "final.ckpt"
        eval_dirs = [tmp_path / "eval_a", tmp_path / "eval_b"]
        for d in eval_dirs:
            assert harness.main(["eval", "--config", str(cfg_path), "--checkpoint",
                                 str(ckpt), "--out", str(d)]) == 0
        e_a, e_b = (_csv_bytes(d) for d in eval_dirs)
        assert len(e_a) == 4 and e_a == e_b
        notes.append(f"{len(t_a)} train and {len(e_a)} eval CSVs byte-identical "
                     f"across repeated runs")


# -- 11: wire protocol ---------------------------------------------------------------

def test_criterion_11_wire_protocol_equivalence():
    with criterion(11, "400-step TCP episode equals in-process", budget=60.0) as notes:
        cfg = envmod.EnvConfig(task="FixedGown", seed=9)
        server = EnvServer(("127.0.0.1", 0), cfg)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            local = envmod.DressingEnv(cfg)
            client = EnvClient("127.0.0.1", server.server_address[1])
            obs_l, info_l = local.reset(seed=4)
            reply = client.reset(seed=4)
            assert np.array_equal(np.asarray(reply["observation"]), obs_l)
            assert np.array_equal(np.asarray(reply["info"]["gripper_start"]),
                                  info_l["gripper_start"])
            rng = np.random.default_rng(2024)
            done_l = False
            for _ in range(local.horizon):
                action = rng.uniform(-1.0, 1.0, local.act_dim)
                obs_l, breakdown, done_l, diag_l = local.step(action)
                reply = client.step(action)
                assert np.array_equal(np.asarray(reply["observation"]), obs_l)
                for f in dataclasses.fields(breakdown):
                    assert reply["reward"][f.name] == getattr(breakdown, f.name)
                assert reply["done"] == done_l
                assert set(reply["diagnostics"]) == set(diag_l)
                for k, v in diag_l.items():
                    assert reply["diagnostics"][k] == v
            assert done_l
            client.close()
        finally:
            server.shutdown()
            server.server_close()
            thread.join(timeout=10.0)
        notes.append(f"{local.horizon} steps exact: observations, rewards, diagnostics")
