"""Training loop, evaluation, checkpoints and the ablation runner."""
from __future__ import annotations

import csv
import ctypes
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import params as farm
from .config import ABLATION_ROWS, Ablation, RunConfig, dumps_config, from_dict
from .data import Dataset, generate_synthetic, load_folder_dataset
from .losses import ConfusionCounts, LossSchedule, MetricReport, joint_weight, recon_loss, seg_loss
from .model import FaRMamba
from .optim import Adam
from .tensor import Tensor, add, mul

log = logging.getLogger("farmamba")

METRIC_COLUMNS = ["epoch", "split", "DSC", "MIoU", "seg_loss", "recon_loss", "joint_weight"]
STEP_COLUMNS = ["step", "epoch", "seg_loss", "recon_loss", "joint_weight", "total"]


def keep_heap_memory() -> None:
    """Ask glibc to reuse freed heap pages instead of unmapping them.

    Every op allocates fresh multi-megabyte arrays; without this each one is
    a new mmap and the page faults cost more than the arithmetic. No-op where
    glibc is unavailable.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return
    M_TRIM_THRESHOLD, M_MMAP_THRESHOLD = -1, -3
    libc.mallopt(M_MMAP_THRESHOLD, 1 << 30)
    libc.mallopt(M_TRIM_THRESHOLD, (1 << 31) - 1)


def epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    """Independent stream per (seed, epoch, purpose): resuming at an epoch boundary replays exactly."""
    return np.random.default_rng([seed, epoch, stream])


SHUFFLE, NOISE = 0, 1


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.data.train_dir:
        train = load_folder_dataset(cfg.data.train_dir, cfg.data.size)
        val = load_folder_dataset(cfg.data.val_dir, cfg.data.size) if cfg.data.val_dir else train
        return train, val
    return generate_synthetic(cfg.data.synthetic)


# -- checkpoints --------------------------------------------------------------


def _config_array(cfg: RunConfig, dtype) -> np.ndarray:
    return np.frombuffer(dumps_config(cfg).encode("utf-8"), dtype=np.uint8).astype(dtype)


def save_checkpoint(path, model: FaRMamba, opt: Adam | None, epoch: int, schedule: LossSchedule, best_dsc: float) -> None:
    dtype = model.cfg.dtype
    entries = dict(model.param_tree().arrays())
    if opt is not None:
        entries.update(opt.state_arrays(dtype))
    entries["meta.epoch"] = np.array([epoch], dtype=dtype)
    entries["meta.schedule_epoch"] = np.array([schedule.epoch], dtype=dtype)
    entries["meta.ema_state"] = np.array([schedule.ema_state], dtype=dtype)
    entries["meta.best_dsc"] = np.array([best_dsc if math.isfinite(best_dsc) else -1.0], dtype=dtype)
    entries["meta.config"] = _config_array(model.cfg, dtype)
    farm.save(path, entries, version=1 if model.cfg.precision == 32 else 2)


def checkpoint_config(arrays) -> RunConfig:
    raw = np.asarray(arrays["meta.config"]).astype(np.uint8).tobytes()
    return from_dict(json.loads(raw.decode("utf-8")))


def load_model(path) -> tuple[FaRMamba, dict]:
    arrays = farm.load(path)
    cfg = checkpoint_config(arrays)
    model = FaRMamba(cfg)
    model.param_tree().load_arrays(arrays)
    return model, arrays


# -- evaluation ---------------------------------------------------------------


def evaluate(model: FaRMamba, data: Dataset, batch_size: int = 16) -> MetricReport:
    """Argmax inference over ``data`` (reconstruction branch unused) with pooled confusion counts."""
    K = model.cfg.encoder.num_classes
    if data.num_classes != K:
        raise ValueError(f"dataset has {data.num_classes} classes, model predicts {K}")
    if data.images.shape[1] != model.cfg.encoder.in_channels:
        raise ValueError(f"dataset images have {data.images.shape[1]} channels, model expects {model.cfg.encoder.in_channels}")
    counts = ConfusionCounts(K)
    for idx in data.batches(batch_size):
        counts.update(model.predict(data.images[idx]), data.labels[idx])
    return counts.report()


def evaluate_checkpoint(path, data: Dataset) -> MetricReport:
    model, _ = load_model(path)
    return evaluate(model, data)


# -- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    rows: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    best_dsc: float = float("nan")
    final: MetricReport | None = None
    model: FaRMamba | None = None
    output_dir: Path | None = None
    seconds: float = 0.0


class NonFiniteLoss(FloatingPointError):
    pass


def _stats(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    finite = np.isfinite(a)
    return {
        "shape": list(a.shape),
        "nonfinite": int((~finite).sum()),
        "min": float(a[finite].min()) if finite.any() else None,
        "max": float(a[finite].max()) if finite.any() else None,
        "mean": float(a[finite].mean()) if finite.any() else None,
    }


def _abort(out: Path | None, epoch: int, step: int, images, labels, logits, seg, rec) -> None:
    diag = {
        "epoch": epoch,
        "step": step,
        "seg_loss": seg,
        "recon_loss": rec,
        "images": _stats(images),
        "labels": {"shape": list(labels.shape), "classes": np.unique(labels).tolist()},
        "logits": _stats(logits),
    }
    text = json.dumps(diag, indent=2)
    if out is not None:
        (out / "nan_diagnostics.json").write_text(text)
    raise NonFiniteLoss(f"non-finite loss at epoch {epoch} step {step}:\n{text}")


def _parse_row(r: dict) -> dict:
    out = {}
    for k, v in r.items():
        if k in ("epoch", "step"):
            out[k] = int(v)
        elif k == "split" or v == "":
            out[k] = v
        else:
            out[k] = float(v)
    return out


def _write_csv(path: Path, columns, rows) -> None:
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in columns})


def train(
    cfg: RunConfig,
    data: tuple[Dataset, Dataset] | None = None,
    resume: str | Path | None = None,
    stop_after: int | None = None,
    write: bool = True,
) -> TrainResult:
    """Train from scratch or resume from a checkpoint written at an epoch boundary.

    ``stop_after`` ends early after that many epochs (counted from 0) so a run
    can be split and resumed; ``write=False`` keeps everything in memory.
    """
    keep_heap_memory()
    t0 = time.perf_counter()
    train_set, val_set = data if data is not None else load_datasets(cfg)
    dtype = cfg.dtype
    model = FaRMamba(cfg)
    tree = model.param_tree()
    o = cfg.optim
    opt = Adam(tree, o.lr, (o.beta1, o.beta2), o.eps)
    schedule = cfg.schedule.build(cfg.epochs)
    start, best = 0, -math.inf
    out = Path(cfg.output_dir) if write else None
    result = TrainResult(model=model, output_dir=out)
    if resume is not None:
        arrays = farm.load(resume)
        tree.load_arrays(arrays)
        opt.load_state_arrays(arrays)
        start = int(arrays["meta.epoch"][0]) + 1
        best = float(arrays["meta.best_dsc"][0])
        # the EMA is a pure function of the epoch count; replaying it avoids 32-bit storage error
        for e in range(int(arrays["meta.schedule_epoch"][0]) + 1):
            joint_weight(schedule, e)
        if out is not None and (out / "metrics.csv").exists():
            with (out / "metrics.csv").open() as f:
                result.rows = [r for r in map(_parse_row, csv.DictReader(f)) if r["epoch"] < start]
            with (out / "loss_curve.csv").open() as f:
                result.steps = [r for r in map(_parse_row, csv.DictReader(f)) if r["epoch"] < start]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(dumps_config(cfg))
        log.info("run %s: %d parameters", out, model.num_parameters())

    K = cfg.encoder.num_classes
    L = cfg.loss
    tstage = cfg.ssrae.target_stage
    step = len(result.steps)
    last = cfg.epochs - 1 if stop_after is None else min(cfg.epochs - 1, stop_after)
    for epoch in range(start, last + 1):
        w = joint_weight(schedule, epoch)
        shuffle, noise = epoch_rng(cfg.seed, epoch, SHUFFLE), epoch_rng(cfg.seed, epoch, NOISE)
        counts = ConfusionCounts(K)
        seg_sum = rec_sum = 0.0
        rec_n = n = 0
        for idx in train_set.batches(o.batch_size, shuffle):
            x = Tensor(train_set.images[idx].astype(dtype))
            y = train_set.labels[idx]
            logits, feats = model(x)
            ls = seg_loss(logits, y, L.lambda_dice, L.lambda_ce)
            total, rec_val = ls, float("nan")
            # with weight 0 the branch cannot change the loss or any gradient, so it is skipped
            if model.has_ssrae and w > 0:
                target = feats[tstage - 1].detach()
                pred = model.ssrae(x, y, noise)
                lr_ = recon_loss(pred, target, L.lambda_l1, L.lambda_cos, L.lambda_grad)
                rec_val = lr_.item()
                total = add(ls, mul(lr_, w))
            seg_val = ls.item()
            if not (math.isfinite(seg_val) and math.isfinite(total.item())):
                _abort(out, epoch, step, x.data, y, logits.data, seg_val, rec_val)
            opt.zero_grad()
            total.backward()
            opt.step()
            counts.update(logits.data.argmax(axis=1), y)
            m = len(idx)
            seg_sum += seg_val * m
            n += m
            if math.isfinite(rec_val):
                rec_sum += rec_val * m
                rec_n += m
            result.steps.append(
                {"step": step, "epoch": epoch, "seg_loss": seg_val, "recon_loss": rec_val, "joint_weight": w, "total": total.item()}
            )
            step += 1
        rep = counts.report()
        rec_mean = rec_sum / rec_n if rec_n else float("nan")
        result.rows.append(
            {"epoch": epoch, "split": "train", "DSC": rep.dsc, "MIoU": rep.miou, "seg_loss": seg_sum / n, "recon_loss": rec_mean, "joint_weight": w}
        )
        is_eval = (epoch + 1) % cfg.eval_interval == 0 or epoch == cfg.epochs - 1
        if is_eval:
            vrep = evaluate(model, val_set, o.batch_size)
            result.rows.append(
                {"epoch": epoch, "split": "val", "DSC": vrep.dsc, "MIoU": vrep.miou, "seg_loss": "", "recon_loss": "", "joint_weight": w}
            )
            result.final = vrep
            log.info("epoch %d  train seg %.4f  val DSC %.4f  MIoU %.4f", epoch, seg_sum / n, vrep.dsc, vrep.miou)
            if vrep.dsc > best:
                best = vrep.dsc
                if out is not None:
                    save_checkpoint(out / "best.farm", model, opt, epoch, schedule, best)
        if out is not None:
            save_checkpoint(out / "last.farm", model, opt, epoch, schedule, best)
            _write_csv(out / "metrics.csv", METRIC_COLUMNS, result.rows)
            _write_csv(out / "loss_curve.csv", STEP_COLUMNS, result.steps)
    result.best_dsc = best if math.isfinite(best) else float("nan")
    result.seconds = time.perf_counter() - t0
    return result


def cross_validate(cfg: RunConfig, folds: int | None = None) -> list[MetricReport]:
    """k-fold over train+val pooled; each fold trains from the same seed."""
    k = folds or cfg.folds
    train_set, val_set = load_datasets(cfg)
    pool = Dataset(
        np.concatenate([train_set.images, val_set.images]), np.concatenate([train_set.labels, val_set.labels]), train_set.num_classes
    )
    parts = np.array_split(np.arange(len(pool)), k)
    reports = []
    for i, held in enumerate(parts):
        keep = np.setdiff1d(np.arange(len(pool)), held)
        fold_cfg = from_dict(json.loads(dumps_config(cfg)))
        fold_cfg.output_dir = str(Path(cfg.output_dir) / f"fold{i}")
        res = train(fold_cfg, data=(pool.subset(keep), pool.subset(held)))
        reports.append(res.final)
    return reports


# -- ablations ----------------------------------------------------------------

VARIANTS = ("dwt", "fft", "dct")


def _uses_variant(row: Ablation) -> bool:
    return row.msfm_main or (row.ssrae and row.msfm_recon)


def ablation_suite(
    base: RunConfig,
    rows: dict[str, Ablation] | None = None,
    variants=VARIANTS,
    seeds=None,
    write: bool = True,
) -> list[dict]:
    """Train every (row, variant, seed); rows without any MSFM are trained once per seed
    and reported under every variant. Returns one record per (row, variant, seed)."""
    keep_heap_memory()
    rows = rows or ABLATION_ROWS
    seeds = list(seeds) if seeds is not None else [base.seed]
    data = load_datasets(base)
    records, cache = [], {}
    for name, row in rows.items():
        for variant in variants:
            for seed in seeds:
                key = (name, variant if _uses_variant(row) else None, seed)
                if key not in cache:
                    cfg = base.with_ablation(row, seed=seed)
                    cfg.msfm.variant = variant
                    slug = name.replace("+", "_").replace(" ", "").replace("/", "")
                    cfg.output_dir = str(Path(base.output_dir) / f"{slug}-{key[1] or 'none'}-s{seed}")
                    res = train(cfg, data=data, write=write)
                    cache[key] = res
                    log.info("%s [%s] seed %d: DSC %.4f (%.0fs)", name, variant, seed, res.final.dsc, res.seconds)
                res = cache[key]
                records.append({"row": name, "variant": variant, "seed": seed, "DSC": res.final.dsc, "MIoU": res.final.miou})
    if write:
        out = Path(base.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "ablation_runs.csv", ["row", "variant", "seed", "DSC", "MIoU"], records)
        _write_csv(out / "ablation_table.csv", ["row"] + [f"{v}_{m}" for v in variants for m in ("DSC", "MIoU")], summarize(records, variants))
    return records


def summarize(records: list[dict], variants=VARIANTS) -> list[dict]:
    """Seed-averaged table: one row per ablation row, {variant}_{DSC,MIoU} columns."""
    table = {}
    for r in records:
        table.setdefault(r["row"], {}).setdefault(r["variant"], []).append((r["DSC"], r["MIoU"]))
    out = []
    for name, by_var in table.items():
        rec = {"row": name}
        for v in variants:
            if v in by_var:
                vals = np.array(by_var[v])
                rec[f"{v}_DSC"], rec[f"{v}_MIoU"] = vals.mean(axis=0).tolist()
        out.append(rec)
    return out
