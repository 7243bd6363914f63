"""Experiment harness: CLI, manifests, CSV export, and the TCP env server.

Subcommands: train, eval, serve, gen-garment, export-frames.  Train and eval
write under an output directory with a manifest recorded before any compute so
runs can be regenerated exactly; gen-garment and export-frames write single
files.  CSV numbers carry 17 significant digits and
wire JSON uses Python's shortest-round-trip float formatting, so equality
checks against in-process values are exact.
"""

import argparse
import json
import os
import signal
import socket
import socketserver
import struct
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import clothsim, env as envmod, garment, trainer
from .errors import ConfigError, DonningError

CURVE_COLUMNS = ["iteration", "mean_return", "std_return", "mean_final_progress",
                 "mean_max_deformation", "kl", "surrogate_improvement"]
EPISODE_COLUMNS = ["step", "r_p", "r_d", "r_g", "r_u", "total", "k_int",
                   "max_deformation"]


def fmt(x):
    """17-significant-digit decimal for floats; plain repr for ints."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    cols = lines[0].split(",")
    data = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    return cols, np.asarray(data)


class ZeroPolicy:
    def __init__(self, act_dim):
        self.act_dim = act_dim

    def mean(self, obs):
        return np.zeros(self.act_dim)

    def sample(self, obs, rng):
        return np.zeros(self.act_dim)


class RandomPolicy:
    """Unit-Gaussian action noise; the evaluation floor."""

    def __init__(self, act_dim):
        self.act_dim = act_dim

    def mean(self, obs):
        return np.zeros(self.act_dim)

    def sample(self, obs, rng):
        return rng.standard_normal(self.act_dim)


class EnvFactory:
    """Picklable, hashable environment builder for the rollout sampler."""

    def __init__(self, config):
        self.doc = json.dumps(envmod.config_to_json(config), sort_keys=True)

    def __call__(self):
        return envmod.DressingEnv(envmod.config_from_json(json.loads(self.doc)))

    def __hash__(self):
        return hash(self.doc)

    def __eq__(self, other):
        return isinstance(other, EnvFactory) and self.doc == other.doc


# -- manifest ----------------------------------------------------------------------

def write_manifest(outdir, command, env_config, extra):
    outdir = Path(outdir)
    for sub in ("checkpoints", "curves", "eval", "frames"):
        (outdir / sub).mkdir(parents=True, exist_ok=True)
    doc = {
        "experiment_id": f"{command}-{extra.get('seed', 0)}-{int(time.time())}",
        "command": command,
        "task": env_config.task,
        "config": envmod.config_to_json(env_config),
        **extra,
    }
    (outdir / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return doc


# -- train -------------------------------------------------------------------------

def _workers(args):
    raw = os.environ.get("DONNING_WORKERS")
    if raw is not None:
        return max(1, int(raw))
    return max(1, getattr(args, "workers", 1) or 1)


def cli_train(args):
    cfg = envmod.load_config(args.config) if args.config else envmod.EnvConfig()
    if args.task:
        cfg = replace(cfg, task=args.task)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.no_haptics:
        cfg = replace(cfg, ablation="no_haptics")
    if args.no_task:
        cfg = replace(cfg, ablation="no_task")
    tcfg = trainer.TrainerConfig(
        iterations=args.iters, samples_per_iter=args.samples, seed=cfg.seed,
        workers=_workers(args), checkpoint_every=args.checkpoint_every,
        discount=cfg.episode.discount)
    outdir = Path(args.out)
    write_manifest(outdir, "train", cfg, {
        "seed": cfg.seed, "iterations": tcfg.iterations,
        "samples_per_iter": tcfg.samples_per_iter, "workers": tcfg.workers,
    })
    make_env = EnvFactory(cfg)
    policy = baseline = None
    start = 0
    if args.resume:
        ckpt = trainer.load_checkpoint(args.resume)
        probe = make_env()
        policy, baseline = trainer.restore_policy(ckpt, probe.obs_dim, probe.act_dim)
        start = ckpt["iteration"]

    curve_path = outdir / "curves" / "learning_curve.csv"
    rows = []
    config_doc = envmod.config_to_json(cfg)

    def on_iteration(it, pol, base, stats):
        rows.append([stats.iteration, stats.mean_return, stats.std_return,
                     stats.mean_final_progress, stats.mean_max_deformation,
                     stats.kl, stats.surrogate_improvement])
        write_csv(curve_path, CURVE_COLUMNS, rows)
        if (it + 1) % tcfg.checkpoint_every == 0:
            trainer.save_checkpoint(outdir / "checkpoints" / f"iter_{it + 1:05d}.ckpt",
                                    pol, base, it + 1, {"env": config_doc})
        print(f"iter {stats.iteration}: return {stats.mean_return:.3f} "
              f"progress {stats.mean_final_progress:.4f} "
              f"deform {stats.mean_max_deformation:.3f} kl {stats.kl:.5f}")

    policy, baseline, _ = trainer.train(make_env, tcfg, policy=policy,
                                        baseline=baseline, start_iteration=start,
                                        callback=on_iteration)
    trainer.save_checkpoint(outdir / "checkpoints" / "final.ckpt", policy, baseline,
                            tcfg.iterations, {"env": config_doc})
    return 0


# -- eval --------------------------------------------------------------------------

def run_eval(policy, cfg, episodes, base_seed, stochastic, outdir, label):
    """Evaluate one policy; write per-step curves, per-episode rows, summary."""
    e = envmod.DressingEnv(cfg)
    res = envmod.evaluate(policy, e, episodes=episodes, base_seed=base_seed,
                          stochastic=stochastic)
    outdir = Path(outdir)
    steps = np.arange(1, e.horizon + 1)
    write_csv(outdir / "eval" / f"{label}_progress.csv",
              ["step", "mean", "std"],
              np.column_stack([steps, res["progress_mean"], res["progress_std"]]))
    write_csv(outdir / "eval" / f"{label}_deformation.csv",
              ["step", "mean", "std"],
              np.column_stack([steps, res["deformation_mean"], res["deformation_std"]]))
    write_csv(outdir / "eval" / f"{label}_episodes.csv",
              ["episode", "final_progress", "max_deformation", "return"],
              np.column_stack([np.arange(episodes), res["final_progress"],
                               res["episode_max_deformation"], res["returns"]]))
    write_csv(outdir / "eval" / f"{label}_summary.csv",
              ["mean_final_progress", "mean_max_deformation", "mean_return"],
              [[res["mean_final_progress"], res["mean_max_deformation"],
                res["mean_return"]]])
    return res


def cli_eval(args):
    cfg = envmod.load_config(args.config) if args.config else envmod.EnvConfig()
    if args.task:
        cfg = replace(cfg, task=args.task)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.no_haptics:
        cfg = replace(cfg, ablation="no_haptics")
    if args.no_task:
        cfg = replace(cfg, ablation="no_task")
    probe = envmod.DressingEnv(cfg)
    if args.random:
        policy = RandomPolicy(probe.act_dim)
        label = args.label or "random"
        stochastic = True
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --random")
        ckpt = trainer.load_checkpoint(args.checkpoint)
        policy, _ = trainer.restore_policy(ckpt, probe.obs_dim, probe.act_dim)
        label = args.label or Path(args.checkpoint).stem
        stochastic = args.stochastic
    write_manifest(args.out, "eval", cfg, {
        "seed": cfg.seed, "episodes": args.episodes, "label": label,
        "checkpoint": args.checkpoint, "stochastic": stochastic,
    })
    res = run_eval(policy, cfg, args.episodes, cfg.seed, stochastic, args.out, label)
    print(f"{label}: mean final progress {res['mean_final_progress']:.4f}, "
          f"mean max deformation {res['mean_max_deformation']:.3f}")
    return 0


def write_episode_log(path, breakdowns):
    rows = [[i + 1, b.r_p, b.r_d, b.r_g, b.r_u, b.total, b.k_int, b.max_deformation]
            for i, b in enumerate(breakdowns)]
    write_csv(path, EPISODE_COLUMNS, rows)


# -- env server ---------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def send_message(sock, doc):
    blob = json.dumps(_jsonable(doc)).encode()
    sock.sendall(struct.pack("!I", len(blob)) + blob)


def recv_message(sock):
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (n,) = struct.unpack("!I", head)
    body = _recv_exact(sock, n)
    if body is None:
        return None
    return json.loads(body.decode())


def _recv_exact(sock, n):
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class _EnvHandler(socketserver.BaseRequestHandler):
    """One environment per connection; errors reply without disconnecting."""

    def handle(self):
        cfg = self.server.env_config
        instance = None
        while True:
            try:
                msg = recv_message(self.request)
            except (ConnectionError, json.JSONDecodeError) as e:
                if isinstance(e, json.JSONDecodeError):
                    send_message(self.request, {"error": f"bad json: {e.msg}"})
                    continue
                return
            if msg is None:
                return
            try:
                cmd = msg.get("cmd") if isinstance(msg, dict) else None
                if cmd == "spec":
                    probe = instance or envmod.DressingEnv(cfg)
                    reply = dict(probe.observation_spec())
                    reply["protocol"] = {"length_prefix": "u32 big-endian",
                                         "payload": "utf-8 json"}
                    send_message(self.request, reply)
                elif cmd == "reset":
                    use = cfg if not msg.get("task") else replace(cfg, task=msg["task"])
                    if instance is None or msg.get("task"):
                        instance = envmod.DressingEnv(use)
                    obs, info = instance.reset(seed=msg.get("seed"))
                    send_message(self.request, {"observation": obs, "info": info})
                elif cmd == "step":
                    if instance is None:
                        raise ConfigError("step before reset")
                    action = np.asarray(msg.get("action", []), dtype=float)
                    obs, breakdown, done, diag = instance.step(action)
                    send_message(self.request, {
                        "observation": obs, "reward": asdict(breakdown),
                        "done": bool(done), "diagnostics": diag,
                    })
                elif cmd == "close":
                    send_message(self.request, {"ok": True})
                    return
                else:
                    send_message(self.request, {"error": f"unknown cmd: {cmd!r}"})
            except DonningError as e:
                send_message(self.request, {"error": str(e)})
            except (TypeError, ValueError, KeyError) as e:
                send_message(self.request, {"error": f"{type(e).__name__}: {e}"})


class EnvServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = False  # drain active episodes on shutdown

    def __init__(self, address, env_config):
        super().__init__(address, _EnvHandler)
        self.env_config = env_config


class EnvClient:
    """Blocking client for the env server; mirrors the in-process API."""

    def __init__(self, host, port, timeout=300.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)

    def call(self, **doc):
        send_message(self.sock, doc)
        reply = recv_message(self.sock)
        if reply is None:
            raise ConnectionError("server closed the connection")
        return reply

    def spec(self):
        return self.call(cmd="spec")

    def reset(self, task=None, seed=None):
        return self.call(cmd="reset", task=task, seed=seed)

    def step(self, action):
        return self.call(cmd="step", action=list(np.asarray(action, dtype=float)))

    def close(self):
        try:
            self.call(cmd="close")
        finally:
            self.sock.close()


def cli_serve(args):
    cfg = envmod.load_config(args.config) if args.config else envmod.EnvConfig()
    server = EnvServer((args.host, args.port), cfg)
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: server.shutdown())
    print(f"env server on {args.host}:{server.server_address[1]}")
    sys.stdout.flush()
    server.serve_forever()
    server.server_close()
    return 0


# -- garment / frame utilities ---------------------------------------------------

def cli_gen_garment(args):
    mesh = garment.sleeve_mesh(rings=args.rings, segments=args.segments,
                               radius=args.radius, length=args.length,
                               panel=args.panel)
    garment.save_garment(mesh, args.out)
    print(f"wrote {args.out} ({len(mesh.vertices)} vertices, "
          f"{len(mesh.triangles)} triangles)")
    return 0


def cli_export_frames(args):
    cfg = envmod.load_config(args.config) if args.config else envmod.EnvConfig()
    if args.task:
        cfg = replace(cfg, task=args.task)
    e = envmod.DressingEnv(cfg)
    if args.checkpoint:
        ckpt = trainer.load_checkpoint(args.checkpoint)
        policy, _ = trainer.restore_policy(ckpt, e.obs_dim, e.act_dim)
    else:
        policy = ZeroPolicy(e.act_dim)
    steps = args.steps or e.horizon
    obs, _ = e.reset(seed=args.seed)
    frames = [e.cloth.positions.copy()]
    for _ in range(steps):
        obs, _, done, _ = e.step(policy.mean(obs))
        frames.append(e.cloth.positions.copy())
        if done:
            break
    out = Path(args.out)
    if out.is_dir():
        raise ConfigError(f"--out names the frame file itself, not a directory: "
                          f"{out} (try {out / 'rollout.frames'})")
    out.parent.mkdir(parents=True, exist_ok=True)
    clothsim.write_frames(out, np.asarray(frames))
    print(f"wrote {out} ({len(frames)} frames)")
    return 0


# -- entry point -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="donning",
                                description="dressing simulator and TRPO harness")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="env config JSON")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="runs/out")
        sp.add_argument("--task", default=None, choices=envmod.TASK_KINDS)

    t = sub.add_parser("train", help="train a policy with TRPO")
    common(t)
    t.add_argument("--iters", type=int, default=100)
    t.add_argument("--samples", type=int, default=5000)
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--checkpoint-every", type=int, default=10)
    t.add_argument("--no-haptics", action="store_true")
    t.add_argument("--no-task", action="store_true")
    t.set_defaults(fn=cli_train)

    ev = sub.add_parser("eval", help="roll a policy and export metric curves")
    common(ev)
    ev.add_argument("--checkpoint", default=None)
    ev.add_argument("--random", action="store_true", help="random-policy floor")
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--stochastic", action="store_true")
    ev.add_argument("--label", default=None)
    ev.add_argument("--no-haptics", action="store_true")
    ev.add_argument("--no-task", action="store_true")
    ev.set_defaults(fn=cli_eval)

    sv = sub.add_parser("serve", help="run the TCP env server")
    sv.add_argument("--config", default=None)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=7712)
    sv.set_defaults(fn=cli_serve)

    gg = sub.add_parser("gen-garment", help="procedural sleeve to OBJ + sidecar")
    gg.add_argument("--out", required=True)
    gg.add_argument("--rings", type=int, default=20)
    gg.add_argument("--segments", type=int, default=16)
    gg.add_argument("--radius", type=float, default=0.07)
    gg.add_argument("--length", type=float, default=0.45)
    gg.add_argument("--panel", action="store_true")
    gg.set_defaults(fn=cli_gen_garment)

    xf = sub.add_parser("export-frames", help="cloth snapshots to a frame file")
    common(xf)
    xf.add_argument("--checkpoint", default=None)
    xf.add_argument("--steps", type=int, default=None)
    xf.set_defaults(fn=cli_export_frames)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DonningError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
