"""Segmentation and reconstruction losses, the joint-weight schedule, and DSC/MIoU."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .tensor import (
    ShapeError,
    Tensor,
    abs_,
    add,
    div,
    getitem,
    mean,
    mul,
    mul_const,
    neg,
    sqrt,
    sub,
    sum_,
    where_const,
)

DICE_EPS = 1e-5


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    return labels


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    """[B,H,W] -> [B,K,H,W]."""
    labels = _check_labels(labels, num_classes)
    return np.moveaxis(np.eye(num_classes, dtype=dtype)[labels], -1, 1)


def soft_dice(probs: Tensor, onehot: np.ndarray, eps: float = DICE_EPS) -> Tensor:
    """Per-class soft Dice [K], pooled over batch and pixels."""
    axes = (0, 2, 3)
    inter = sum_(mul_const(probs, onehot), axis=axes)
    denom = add(sum_(probs, axis=axes), Tensor(onehot.sum(axis=axes) + eps))
    return div(add(mul(inter, 2.0), eps), denom)


def cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    logp = F.log_softmax(logits, axis=1)
    B, _, H, W = logits.shape
    return mul(sum_(mul_const(logp, onehot)), -1.0 / (B * H * W))


def seg_loss(logits: Tensor, labels: np.ndarray, lambda_dice: float = 1.0, lambda_ce: float = 1.0) -> Tensor:
    """``lambda_dice * (1 - mean soft Dice) + lambda_ce * mean cross-entropy``."""
    if logits.ndim != 4:
        raise ShapeError(f"seg_loss: logits must be [B,K,H,W], got {logits.shape}")
    B, K, H, W = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (B, H, W):
        raise ShapeError(f"seg_loss: labels {labels.shape} vs logits {logits.shape}")
    onehot = one_hot(labels, K, logits.dtype)
    dice = mean(soft_dice(F.softmax(logits, axis=1), onehot))
    return add(mul(add(neg(dice), 1.0), lambda_dice), mul(cross_entropy(logits, onehot), lambda_ce))


def cosine_term(pred: Tensor, target: Tensor) -> Tensor:
    """mean(1 - cos) over per-pixel channel vectors; a zero vector on either side counts as cos = 1."""
    dot = sum_(mul(pred, target), axis=1)
    pp = sum_(mul(pred, pred), axis=1)
    tt = sum_(mul(target, target), axis=1)
    ok = (pp.data > 0) & (tt.data > 0)
    norm = mul(sqrt(where_const(ok, pp, 1.0)), sqrt(where_const(ok, tt, 1.0)))
    cos = where_const(ok, div(dot, norm), 1.0)
    return add(neg(mean(cos)), 1.0)


def gradient_term(pred: Tensor, target: Tensor) -> Tensor:
    """Forward-difference edge loss: mean|dx(p - t)| + mean|dy(p - t)|."""
    d = sub(pred, target)
    dx = sub(getitem(d, (Ellipsis, slice(1, None))), getitem(d, (Ellipsis, slice(None, -1))))
    dy = sub(getitem(d, (Ellipsis, slice(1, None), slice(None))), getitem(d, (Ellipsis, slice(None, -1), slice(None))))
    return add(mean(abs_(dx)), mean(abs_(dy)))


def recon_loss(
    pred: Tensor,
    target: Tensor,
    lambda_l1: float = 1.0,
    lambda_cos: float = 0.5,
    lambda_grad: float = 0.5,
) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"recon_loss: pred {pred.shape} vs target {target.shape}")
    if pred.ndim != 4:
        raise ShapeError(f"recon_loss: expected [B,C,H,W] features, got {pred.shape}")
    l1 = mean(abs_(sub(pred, target)))
    total = mul(l1, lambda_l1)
    total = add(total, mul(cosine_term(pred, target), lambda_cos))
    return add(total, mul(gradient_term(pred, target), lambda_grad))


@dataclass
class LossSchedule:
    """Warmup, linear ramp, linear decay, then EMA smoothing of the reconstruction weight.

    ``epoch`` is the last epoch folded into ``ema_state`` (-1 before the first).
    """

    warmup: int = 10
    ramp: int = 10
    w_max: float = 1.0
    w_min: float = 0.1
    ema_beta: float = 0.9
    total_epochs: int = 30
    ema_state: float = 0.0
    epoch: int = -1

    def __post_init__(self):
        if self.warmup < 0 or self.ramp < 1:
            raise ValueError("schedule needs warmup >= 0 and ramp >= 1")
        if not 0.0 <= self.ema_beta < 1.0:
            raise ValueError(f"ema_beta must be in [0, 1), got {self.ema_beta}")

    def raw(self, epoch: int) -> float:
        if epoch < self.warmup:
            return 0.0
        peak = self.warmup + self.ramp
        if epoch < peak:
            return self.w_max * (epoch - self.warmup) / self.ramp
        last = self.total_epochs - 1
        if last <= peak or epoch >= last:
            return self.w_max if last <= peak else self.w_min
        return self.w_max + (self.w_min - self.w_max) * (epoch - peak) / (last - peak)


def joint_weight(schedule: LossSchedule, epoch: int) -> float:
    """Advance the EMA to ``epoch`` (one step per epoch) and return it.

    Asking again for the current epoch returns the stored value; skipping or
    rewinding epochs raises.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch == schedule.epoch:
        return schedule.ema_state
    if epoch != schedule.epoch + 1:
        raise ValueError(f"schedule is at epoch {schedule.epoch}; cannot jump to {epoch}")
    b = schedule.ema_beta
    schedule.ema_state = b * schedule.ema_state + (1.0 - b) * schedule.raw(epoch)
    schedule.epoch = epoch
    return schedule.ema_state


@dataclass
class ConfusionCounts:
    num_classes: int
    tp: np.ndarray = field(default=None)
    fp: np.ndarray = field(default=None)
    fn: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.num_classes, dtype=np.int64))

    def update(self, pred: np.ndarray, gt: np.ndarray) -> None:
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"metrics: pred {pred.shape} vs gt {gt.shape}")
        K = self.num_classes
        _check_labels(pred, K)
        _check_labels(gt, K)
        conf = np.bincount(gt.ravel() * K + pred.ravel(), minlength=K * K).reshape(K, K)
        tp = np.diag(conf)
        self.tp += tp
        self.fp += conf.sum(axis=0) - tp
        self.fn += conf.sum(axis=1) - tp

    def report(self) -> "MetricReport":
        tp, fp, fn = self.tp.astype(np.float64), self.fp.astype(np.float64), self.fn.astype(np.float64)
        seen = (tp + fp + fn) > 0  # per-class score is undefined only when absent in both
        present = (tp + fn) > 0  # the means run over classes present in ground truth
        with np.errstate(invalid="ignore", divide="ignore"):
            dice = np.where(seen, 2 * tp / (2 * tp + fp + fn), np.nan)
            iou = np.where(seen, tp / (tp + fp + fn), np.nan)
        dsc = float(dice[present].mean()) if present.any() else float("nan")
        miou = float(iou[present].mean()) if present.any() else float("nan")
        return MetricReport(dice, iou, dsc, miou, self.tp.copy(), self.fp.copy(), self.fn.copy())


@dataclass
class MetricReport:
    dice: np.ndarray
    iou: np.ndarray
    dsc: float
    miou: float
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray


def metrics(pred_labels: np.ndarray, gt_labels: np.ndarray, num_classes: int) -> MetricReport:
    counts = ConfusionCounts(num_classes)
    counts.update(pred_labels, gt_labels)
    return counts.report()
