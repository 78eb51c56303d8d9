"""``farmamba`` command line: train, eval, verify, ablate, gen-data."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ABLATION_ROWS, load_config
from .data import SyntheticSpec, generate_synthetic, load_folder_dataset, save_folder_dataset, spec_to_json


def _train(args) -> int:
    from .train import cross_validate, train

    cfg = load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    folds = args.folds or cfg.folds
    if folds > 1:
        reports = cross_validate(cfg, folds)
        for i, r in enumerate(reports):
            print(f"fold {i}: DSC {r.dsc:.4f}  MIoU {r.miou:.4f}")
        return 0
    res = train(cfg, resume=args.resume, stop_after=args.stop_after)
    if res.final is not None:
        print(f"final val DSC {res.final.dsc:.4f}  MIoU {res.final.miou:.4f}  best DSC {res.best_dsc:.4f}")
    print(f"outputs in {res.output_dir}")
    return 0


def _eval(args) -> int:
    from .train import load_model, evaluate

    model, _ = load_model(args.ckpt)
    data = load_folder_dataset(args.data, model.cfg.data.size)
    rep = evaluate(model, data)
    out = {
        "DSC": rep.dsc,
        "MIoU": rep.miou,
        "dice": [None if v != v else float(v) for v in rep.dice],
        "iou": [None if v != v else float(v) for v in rep.iou],
        "images": len(data),
    }
    print(json.dumps(out, indent=2))
    return 0


def _verify(args) -> int:
    from . import verify

    failed = 0
    checks = verify.run_all(include_ablation=args.ablation)
    for c in checks:
        print(c.line())
        failed += not c.passed
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def _ablate(args) -> int:
    from .train import VARIANTS, ablation_suite, summarize

    cfg = load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    names = args.rows or list(ABLATION_ROWS)
    unknown = [n for n in names if n not in ABLATION_ROWS]
    if unknown:
        raise SystemExit(f"unknown ablation rows {unknown}; choose from {list(ABLATION_ROWS)}")
    variants = tuple(args.variants or VARIANTS)
    records = ablation_suite(cfg, {n: ABLATION_ROWS[n] for n in names}, variants, args.seeds)
    for rec in summarize(records, variants):
        cells = "  ".join(f"{v}: DSC {rec[f'{v}_DSC']:.4f} MIoU {rec[f'{v}_MIoU']:.4f}" for v in variants)
        print(f"{rec['row']:<28} {cells}")
    print(f"tables in {cfg.output_dir}")
    return 0


def _gen_data(args) -> int:
    d = json.loads(Path(args.spec).read_text()) if args.spec else {}
    spec = SyntheticSpec(**d)
    train, val = generate_synthetic(spec)
    out = Path(args.out)
    save_folder_dataset(train, out / "train")
    save_folder_dataset(val, out / "val")
    (out / "spec.json").write_text(spec_to_json(spec))
    print(f"wrote {len(train)} train / {len(val)} val pairs to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="farmamba", description="Frequency-aware Mamba segmentation on numpy.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint (last.farm) to continue from")
    t.add_argument("--stop-after", type=int, help="stop after this epoch index (for split runs)")
    t.add_argument("--folds", type=int, help="k-fold cross validation over train+val")
    t.add_argument("--output-dir")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a folder of PNG/PGM pairs")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=_eval)

    v = sub.add_parser("verify", help="run the property and oracle suites")
    v.add_argument("--ablation", action="store_true", help="also run the (slow) ablation trend check")
    v.set_defaults(func=_verify)

    a = sub.add_parser("ablate", help="train the ablation rows and write seed-averaged tables")
    a.add_argument("--config", required=True)
    a.add_argument("--rows", nargs="+", help=f"subset of {list(ABLATION_ROWS)}")
    a.add_argument("--variants", nargs="+", choices=["dwt", "fft", "dct"])
    a.add_argument("--seeds", nargs="+", type=int)
    a.add_argument("--output-dir")
    a.set_defaults(func=_ablate)

    g = sub.add_parser("gen-data", help="render the synthetic dataset to PNG/PGM folders")
    g.add_argument("--spec", help="JSON with SyntheticSpec fields (defaults if omitted)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_gen_data)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
