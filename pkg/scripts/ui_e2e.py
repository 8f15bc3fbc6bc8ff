#!/usr/bin/env python3
"""Drive the frontend end-to-end suite against a live service.

Trains (or reuses) a desk checkpoint, starts the HTTP service on an ephemeral
port, then runs `npm run test:e2e` in frontend/ with SEGSYNTH_API pointing at
it. Exit status is the vitest status.
"""
import argparse
import os
import subprocess
import sys
import threading
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

import segsynth as ss
from segsynth.checkpoint import save_checkpoint
from segsynth.service import start_server
from segsynth.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", help="reuse an existing checkpoint")
    ap.add_argument("--steps", type=int, default=400, help="training steps when building one")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ckpt_path = args.checkpoint
    if ckpt_path is None:
        ws = ROOT / "frontend" / ".e2e"
        ws.mkdir(parents=True, exist_ok=True)
        ckpt_path = ws / f"desk_{args.steps}.sschk"
        if not Path(ckpt_path).exists():
            print(f"training a desk checkpoint ({args.steps} steps)...", flush=True)
            dataset = ss.synthesize(ss.SynthSpec(n_examples=400, seed=args.seed))
            cfg = ss.desk_config(dataset.catalog)
            tc = TrainConfig(
                learning_rate=1e-3,
                batch_size=4,
                lambda_kl=1e-4,
                max_steps=args.steps,
                seed=args.seed,
                eval_every=0,
            )
            result = train(dataset, cfg, tc)
            save_checkpoint(ckpt_path, result.model, extra={"steps": args.steps})
        print(f"checkpoint: {ckpt_path}")

    server = start_server(ckpt_path, "127.0.0.1", 0)
    host, port = server.server_address
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://{host}:{port}"
    print(f"service on {base}")

    env = dict(os.environ, SEGSYNTH_API=base)
    proc = subprocess.run(
        ["npm", "run", "test:e2e"], cwd=ROOT / "frontend", env=env
    )
    server.shutdown()
    sys.exit(proc.returncode)


if __name__ == "__main__":
    main()
