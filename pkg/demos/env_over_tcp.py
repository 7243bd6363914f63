"""The dressing environment over TCP: length-prefixed JSON, byte-exact floats.

Starts the server on an ephemeral port, runs a short episode through the
client, and checks every reply against an in-process environment stepping the
same actions.  Run with `python3 demos/env_over_tcp.py`.
"""

import threading
from dataclasses import replace

import numpy as np

from donning.env import DressingEnv, EnvConfig
from donning.harness import EnvClient, EnvServer

cfg = EnvConfig(task="FixedGown", seed=0)
cfg = replace(cfg, episode=replace(cfg.episode, horizon=25))

server = EnvServer(("127.0.0.1", 0), cfg)
thread = threading.Thread(target=server.serve_forever, daemon=True)
thread.start()
host, port = server.server_address
print(f"server on {host}:{port} (one environment per connection)")

client = EnvClient(host, port)
spec = client.spec()
print(f"spec: obs {spec['obs_dim']}, act {spec['act_dim']}, "
      f"horizon {spec['horizon']}, protocol {spec['protocol']}")

local = DressingEnv(cfg)
obs_l, _ = local.reset(seed=1)
remote = client.reset(seed=1)
print(f"reset observation identical: "
      f"{np.array_equal(np.asarray(remote['observation']), obs_l)}")

rng = np.random.default_rng(1)
exact = 0
done = False
while not done:
    action = rng.uniform(-1.0, 1.0, 11)
    obs_l, breakdown, done, _ = local.step(action)
    reply = client.step(action)
    exact += (np.array_equal(np.asarray(reply["observation"]), obs_l)
              and reply["reward"]["total"] == breakdown.total)
print(f"{exact}/{local.horizon} steps byte-exact over the wire "
      "(JSON floats round-trip float64)")

client.close()
server.shutdown()
server.server_close()
thread.join(timeout=5.0)
