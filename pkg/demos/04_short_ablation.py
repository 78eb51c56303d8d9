"""A few-minute version of the ablation: Base vs Base+MSFM vs Full on a small synthetic set.

The full-size comparison lives in ``farmamba ablate``; this one shrinks the data,
epochs and model so it finishes quickly. Expect noisy differences.

Run: python demos/04_short_ablation.py [--epochs 6]
"""
import argparse

from farmamba.config import ABLATION_ROWS, from_dict
from farmamba.train import ablation_suite

parser = argparse.ArgumentParser()
parser.add_argument("--epochs", type=int, default=6)
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
args = parser.parse_args()

base = from_dict(
    {
        "encoder": {"base_channels": 8, "depths": [1, 1, 1, 1], "state_dim": 4},
        "data": {"synthetic": {"size": 32, "n_train": 128, "n_val": 32}},
        "schedule": {"warmup": 1, "ramp": 2},
        "epochs": args.epochs,
        "eval_interval": args.epochs,
        "output_dir": "runs/demo_ablation",
    }
)
rows = {k: ABLATION_ROWS[k] for k in ("Base", "Base+MSFM", "Full")}
records = ablation_suite(base, rows, variants=("dwt",), seeds=args.seeds)

print(f"{'row':<12}" + "".join(f"seed {s:<6}" for s in args.seeds) + "mean")
for name in rows:
    vals = [r["DSC"] for r in records if r["row"] == name]
    print(f"{name:<12}" + "".join(f"{v:<11.4f}" for v in vals) + f"{sum(vals) / len(vals):.4f}")
print("\nper-run logs under runs/demo_ablation/")
