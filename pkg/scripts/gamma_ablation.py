"""Compare noise-reinjection settings of the stochastic projection on the blobs preset."""

import argparse
from pathlib import Path

from viking.config import load_config
from viking.experiments import gamma_ablation

ROOT = Path(__file__).resolve().parents[1]

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--config", default=ROOT / "configs" / "blobs.yaml")
p.add_argument("--gammas", type=float, nargs="+", default=[0.0, 0.5, 1.0])
p.add_argument("--seeds", type=int, default=10)
args = p.parse_args()

res = gamma_ablation(load_config(args.config), args.gammas, range(args.seeds))
print(f"{'gamma':>6s} {'train acc':>10s} {'val acc':>8s} {'gap':>7s}")
for g, r in res.items():
    print(f"{g:6.2f} {r['train_accuracy']:10.3f} {r['val_accuracy']:8.3f} {r['gap']:7.3f}")
