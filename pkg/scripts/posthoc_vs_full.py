"""Sigma-only tuning versus full ELBO training after a short low-rate warmup."""

import argparse
from dataclasses import replace
from pathlib import Path

from viking.config import load_config
from viking.experiments import posthoc_vs_full

ROOT = Path(__file__).resolve().parents[1]

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--config", default=ROOT / "configs" / "blobs.yaml")
p.add_argument("--seeds", type=int, default=10)
p.add_argument("--warmup-epochs", type=int, default=20)
p.add_argument("--warmup-lr", type=float, default=1e-3)
p.add_argument("--epochs", type=int, default=100, help="epochs after warmup, both arms")
p.add_argument("--sigma-epochs", type=int, default=20, help="sigma-only epochs of the full arm")
args = p.parse_args()

cfg = load_config(args.config)
cfg = replace(cfg, train=replace(cfg.train, warmup_epochs=args.warmup_epochs,
                                 warmup_lr=args.warmup_lr))
r = posthoc_vs_full(cfg, range(args.seeds), args.epochs, args.sigma_epochs)
print(f"post-hoc val NLL  {r['posthoc_val_nll']:.4f}")
print(f"full ELBO val NLL {r['full_val_nll']:.4f}")
