"""Property and oracle suites behind ``farmamba verify`` and the acceptance tests.

Each ``check_*`` returns a :class:`Check`. Oracles here are deliberately
naive (direct sums, per-step loops) and share no code with what they test.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import freq
from . import functional as F
from .config import ABLATION_ROWS, RunConfig, from_dict
from .gradcheck import max_relative_error, weighted_sum
from .losses import LossSchedule, joint_weight, metrics, recon_loss, seg_loss
from .model import FaRMamba
from .msfm import MSFM, MsfmConfig
from .nn import Module
from .params import dumps, load
from .ssm import SS2D, SsmParams, VSSBlock, selective_scan, ss2d, ss2d_directions
from .ssrae import DegradeConfig, RegionAttention, RegionMask, attention_weights, blur, degrade, region_attention
from .tensor import Tensor


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _t(a, grad=False) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- oracles ------------------------------------------------------------------------


def haar_oracle(x: np.ndarray) -> dict[str, np.ndarray]:
    """Direct filter sums with h = [1, 1]/sqrt2 and g = [1, -1]/sqrt2 (rows use the second letter)."""
    s = 1 / math.sqrt(2)
    h, g = (s, s), (s, -s)
    H, W = x.shape
    out = {k: np.zeros((H // 2, W // 2)) for k in ("ll", "lh", "hl", "hh")}
    filt = {"ll": (h, h), "lh": (g, h), "hl": (h, g), "hh": (g, g)}  # (row filter, column filter)
    for k, (fr, fc) in filt.items():
        for i in range(H // 2):
            for j in range(W // 2):
                acc = 0.0
                for m in range(2):
                    for n in range(2):
                        acc += fr[m] * fc[n] * x[2 * i + m, 2 * j + n]
                out[k][i, j] = acc
    return out


def dft_oracle(x: np.ndarray) -> np.ndarray:
    H, W = x.shape
    out = np.zeros((H, W), dtype=complex)
    for u in range(H):
        for v in range(W):
            acc = 0j
            for h in range(H):
                for w in range(W):
                    acc += x[h, w] * np.exp(-2j * np.pi * (u * h / H + v * w / W))
            out[u, v] = acc
    return out


def dct_oracle(x: np.ndarray) -> np.ndarray:
    H, W = x.shape
    out = np.zeros((H, W))
    for u in range(H):
        for v in range(W):
            au = math.sqrt((1 if u == 0 else 2) / H)
            av = math.sqrt((1 if v == 0 else 2) / W)
            acc = 0.0
            for h in range(H):
                for w in range(W):
                    acc += x[h, w] * math.cos(math.pi * (2 * h + 1) * u / (2 * H)) * math.cos(math.pi * (2 * w + 1) * v / (2 * W))
            out[u, v] = au * av * acc
    return out


def scan_oracle(u, x_proj, dt_proj, dt_bias, A_log, D):
    """Per-step, per-channel, per-state loop for one direction. ``u`` [B,L,E]."""
    Bsz, L, E = u.shape
    R = dt_proj.shape[0]
    N = A_log.shape[1]
    y = np.zeros_like(u)
    for b in range(Bsz):
        h = np.zeros((E, N))
        for t in range(L):
            proj = [sum(u[b, t, e] * x_proj[e, k] for e in range(E)) for k in range(x_proj.shape[1])]
            dt_low, Bt, Ct = proj[:R], proj[R : R + N], proj[R + N :]
            for e in range(E):
                z = sum(dt_low[r] * dt_proj[r, e] for r in range(R)) + dt_bias[e]
                delta = math.log1p(math.exp(z))
                acc = 0.0
                for n in range(N):
                    a = -math.exp(A_log[e, n])
                    h[e, n] = math.exp(delta * a) * h[e, n] + delta * Bt[n] * u[b, t, e]
                    acc += Ct[n] * h[e, n]
                y[b, t, e] = acc + D[e] * u[b, t, e]
    return y


def serial_positions(H: int, W: int) -> list[list[tuple[int, int]]]:
    """The four scan routes written out cell by cell."""
    row = [(i, j) for i in range(H) for j in range(W)]
    col = [(i, j) for j in range(W) for i in range(H)]
    return [row, row[::-1], col, col[::-1]]


# -- criterion checks ----------------------------------------------------------------------


def check_transforms(seed: int = 0) -> Check:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 8))
    xt = _t(x[None, None])
    errs = {}
    s = freq.dwt2(xt)
    ref = haar_oracle(x)
    errs["dwt_vs_oracle"] = max(np.abs(getattr(s, k).data[0, 0] - ref[k]).max() for k in ref)
    spec = freq.fft2(xt)
    F_ref = dft_oracle(x)
    errs["fft_vs_oracle"] = max(np.abs(spec.re.data[0, 0] - F_ref.real).max(), np.abs(spec.im.data[0, 0] - F_ref.imag).max())
    d = freq.dct2(xt)
    errs["dct_vs_oracle"] = np.abs(d.coef.data[0, 0] - dct_oracle(x)).max()
    recon = {
        "dwt_roundtrip": np.abs(freq.idwt2(s).data[0, 0] - x).max(),
        "fft_roundtrip": np.abs(freq.ifft2(spec).data[0, 0] - x).max(),
        "dct_roundtrip": np.abs(freq.idct2(d).data[0, 0] - x).max(),
    }
    e = float((x**2).sum())
    energy = {
        "dwt_parseval": abs(sum(float((t.data**2).sum()) for t in s.as_list()) - e) / e,
        "fft_parseval": abs(float((spec.re.data**2 + spec.im.data**2).sum()) / 64 - e) / e,
        "dct_parseval": abs(float((d.coef.data**2).sum()) - e) / e,
    }
    dt = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-9 and max(recon.values()) <= 1e-10 and max(energy.values()) <= 1e-8 and dt < 10
    worst = f"oracle {max(errs.values()):.1e} (<=1e-9), roundtrip {max(recon.values()):.1e} (<=1e-10), energy {max(energy.values()):.1e} (<=1e-8), {dt:.2f}s (<10s)"
    return Check("transform correctness", ok, worst, {**errs, **recon, **energy, "seconds": dt})


def check_mask_partition(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst_recon = 0.0
    partition_ok = True
    cases = 0
    for kind in ("ring", "wedge"):
        for H in (8, 16, 32):
            for W in (8, 16, 32):
                x = _t(rng.normal(size=(1, 2, H, W)))
                for K in range(1, 5):
                    m = freq.make_band_masks(kind, H, W, K)
                    cover = m.masks.sum(axis=0)
                    partition_ok &= bool((cover == 1).all())
                    for bands in (freq.fft_bands(x, m), freq.dct_bands(x, m)):
                        total = sum(b.data for b in bands)
                        worst_recon = max(worst_recon, float(np.abs(total - x.data).max()))
                    cases += 1
    ok = partition_ok and worst_recon <= 1e-8
    return Check(
        "mask partition",
        ok,
        f"{cases} (kind,H,W,K) cases, disjoint+exhaustive={partition_ok}, band-sum error {worst_recon:.1e} (<=1e-8)",
        {"recon": worst_recon},
    )


def _perturb(m: Module, rng: np.random.Generator, scale: float = 0.2) -> list[Tensor]:
    ps = m.parameters()
    for p in ps:
        p.data += scale * rng.normal(size=p.shape)
    return ps


def gradient_cases(seed: int = 0):
    """(name, fn, inputs) triples covering every parameterised op at 64-bit."""
    rng = np.random.default_rng(seed)
    cases = []

    x = _t(rng.normal(size=(2, 4, 6, 6)), True)
    for name, w_shape, kw in (
        ("conv2d", (3, 4, 3, 3), dict(padding=1)),
        ("conv2d stride 2", (3, 4, 3, 3), dict(padding=1, stride=2)),
        ("conv2d depthwise", (4, 1, 3, 3), dict(padding=1, groups=4)),
        ("conv2d grouped", (4, 2, 5, 5), dict(padding=2, groups=2)),
    ):
        w = _t(rng.normal(size=w_shape), True)
        b = _t(rng.normal(size=w_shape[0]), True)
        out_shape = F.conv2d(x, w, b, **kw).shape
        wts = rng.normal(size=out_shape)
        cases.append((name, (lambda w=w, b=b, kw=kw, wts=wts: weighted_sum(F.conv2d(x, w, b, **kw), wts)), [x, w, b]))

    xl = _t(rng.normal(size=(3, 5)), True)
    wl, bl = _t(rng.normal(size=(5, 4)), True), _t(rng.normal(size=4), True)
    wts_l = rng.normal(size=(3, 4))
    cases.append(("linear", lambda: weighted_sum(F.linear(xl, wl, bl), wts_l), [xl, wl, bl]))

    xn = _t(rng.normal(size=(2, 3, 6)), True)
    g, bb = _t(1 + 0.1 * rng.normal(size=6), True), _t(rng.normal(size=6), True)
    wts_n = rng.normal(size=(2, 3, 6))
    cases.append(("layer_norm", lambda: weighted_sum(F.layer_norm(xn, g, bb), wts_n), [xn, g, bb]))

    p1 = SsmParams(3, 2, rng, np.float64, G=1)
    _perturb(p1, rng, 0.1)
    us = _t(rng.normal(size=(2, 6, 3)), True)
    wts_s = rng.normal(size=(2, 6, 3))
    cases.append(("selective_scan", lambda: weighted_sum(selective_scan(us, p1), wts_s), [us] + p1.parameters()))

    blk = SS2D(4, rng, np.float64, state_dim=2)
    _perturb(blk, rng, 0.1)
    x2 = _t(rng.normal(size=(1, 4, 3, 3)), True)
    wts_2 = rng.normal(size=(1, 4, 3, 3))
    cases.append(("ss2d", lambda: weighted_sum(ss2d(x2, blk), wts_2), [x2] + blk.parameters()))

    vss = VSSBlock(4, rng, np.float64, state_dim=2)
    _perturb(vss, rng, 0.1)
    xv = _t(rng.normal(size=(1, 4, 4, 4)), True)
    wts_v = rng.normal(size=(1, 4, 4, 4))
    cases.append(("vss_block", lambda: weighted_sum(vss(xv), wts_v), [xv] + vss.parameters()))

    for variant in ("dwt", "fft", "dct"):
        m = MSFM(MsfmConfig(variant=variant, channels=4, kernel_scales=(1, 3)), rng, np.float64)
        _perturb(m, rng, 0.2)
        xm = _t(rng.normal(size=(1, 4, 8, 8)), True)
        wts_m = rng.normal(size=(1, 4, 8, 8))
        cases.append((f"msfm {variant}", (lambda m=m, xm=xm, wts_m=wts_m: weighted_sum(m(xm), wts_m)), [xm] + m.parameters()))

    att = RegionAttention(4, rng, np.float64, heads=2, zero_init=False)
    xa = _t(rng.normal(size=(2, 6, 4)), True)
    bias = RegionMask(rng.integers(0, 2, (2, 2, 3))).bias(2, 3)
    wts_a = rng.normal(size=(2, 6, 4))
    cases.append(("region_attention", lambda: weighted_sum(region_attention(xa, bias, att), wts_a), [xa] + att.parameters()))

    lg = _t(rng.normal(size=(2, 3, 4, 4)), True)
    lab = rng.integers(0, 3, (2, 4, 4))
    cases.append(("seg_loss", lambda: seg_loss(lg, lab), [lg]))

    pr = _t(rng.normal(size=(2, 3, 4, 4)), True)
    tg = _t(rng.normal(size=(2, 3, 4, 4)))
    cases.append(("recon_loss", lambda: recon_loss(pr, tg), [pr]))
    return cases


def check_gradients(seed: int = 0, tol: float = 1e-4) -> Check:
    t0 = time.perf_counter()
    errs = {}
    for name, fn, inputs in gradient_cases(seed):
        errs[name] = max_relative_error(fn, inputs, max_entries=20)
    dt = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] <= tol and dt < 300
    return Check(
        "gradient suite",
        ok,
        f"{len(errs)} ops, worst {worst} {errs[worst]:.1e} (<={tol:g}), {dt:.1f}s (<300s)",
        {**errs, "seconds": dt},
    )


def check_scan_oracle(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    errs = {}
    p = SsmParams(3, 4, rng, np.float64, G=1)
    _perturb(p, rng, 0.1)
    u = rng.normal(size=(2, 7, 3))
    y = selective_scan(_t(u), p).data
    ref = scan_oracle(u, p.x_proj.data[0], p.dt_proj.data[0], p.dt_bias.data[0], p.A_log.data[0], p.D.data[0])
    errs["selective_scan"] = float(np.abs(y - ref).max())
    for H, W in ((1, 1), (2, 3), (4, 4)):
        p4 = SsmParams(3, 4, rng, np.float64, G=4)
        _perturb(p4, rng, 0.1)
        x = rng.normal(size=(2, H, W, 3))
        parts = ss2d_directions(_t(x), p4)
        total = np.zeros_like(x)
        for g, route in enumerate(serial_positions(H, W)):
            seq = np.stack([x[:, i, j] for i, j in route], axis=1)
            ys = scan_oracle(seq, p4.x_proj.data[g], p4.dt_proj.data[g], p4.dt_bias.data[g], p4.A_log.data[g], p4.D.data[g])
            grid = np.zeros_like(x)
            for k, (i, j) in enumerate(route):
                grid[:, i, j] = ys[:, k]
            errs[f"ss2d {H}x{W} dir{g}"] = float(np.abs(parts[g].data - grid).max())
            total += grid
        errs[f"ss2d {H}x{W} sum"] = float(np.abs(sum(q.data for q in parts) - total).max())
    worst = max(errs.values())
    return Check("selective-scan oracle", worst <= 1e-10, f"max deviation {worst:.1e} over {len(errs)} comparisons (<=1e-10)", errs)


def check_ssrae_contracts(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    out = {}
    x = _t(rng.random((2, 3, 16, 16)))
    out["shape_ok"] = degrade(x, DegradeConfig(), rng).shape == (2, 3, 4, 4)

    sigma, noise = 0.01, []
    xs = Tensor(rng.random((16, 4, 256, 256)).astype(np.float32))
    clean = blur(F.avg_pool2d(xs, 4)).data
    for k in range(4):
        noisy = degrade(xs, DegradeConfig(sigma_noise=sigma), np.random.default_rng(seed + k)).data
        noise.append((noisy.astype(np.float64) - clean).ravel())
    n = np.concatenate(noise)
    out["samples"] = n.size
    out["mean"] = float(n.mean())
    out["std_rel_err"] = float(abs(n.std() / sigma - 1))
    stats_ok = n.size >= 10**6 and abs(out["mean"]) <= 3 * sigma / math.sqrt(n.size) and out["std_rel_err"] <= 0.02

    leak = 0.0
    for trial in range(5):
        h, w = 6, 5
        labels = rng.integers(0, 1 + trial % 4 + 1, (2, h, w))
        att = RegionAttention(8, rng, np.float64, heads=2, zero_init=False)
        feat = _t(3 * rng.normal(size=(2, h * w, 8)))
        bias = RegionMask(labels).bias(h, w)
        wts = attention_weights(feat, bias, att)
        cross = bias[:, None] < 0
        leak = max(leak, float(wts[np.broadcast_to(cross, wts.shape)].max(initial=0.0)))
    out["leak"] = leak

    cfg = tiny_config(seed)
    model = FaRMamba(cfg)
    img = _t(rng.random((2, 3, 32, 32)))
    lab = rng.integers(0, 3, (2, 32, 32))
    _, feats = model(img)
    pred = model.ssrae(img, lab, rng)
    recon_loss(pred, feats[0].detach()).backward()
    main_touched = [k for k, p in model.encoder.param_tree().items() if p.grad is not None and np.any(p.grad != 0)]
    aux_touched = [k for k, p in model.ssrae.param_tree().items() if p.grad is not None and np.any(p.grad != 0)]
    out["main_grads"] = len(main_touched)
    out["aux_grads"] = len(aux_touched)
    isolation_ok = not main_touched and len(aux_touched) > 0

    ok = out["shape_ok"] and stats_ok and leak < 1e-8 and isolation_ok
    detail = (
        f"shape ok={out['shape_ok']}; noise n={n.size} mean {out['mean']:.2e} (|.|<={3 * sigma / math.sqrt(n.size):.1e}), "
        f"std rel err {out['std_rel_err']:.3%} (<=2%); leakage {leak:.1e} (<1e-8); "
        f"main-encoder params with grad {len(main_touched)} (aux {len(aux_touched)})"
    )
    return Check("reconstruction-branch contracts", ok, detail, out)


def schedule_oracle(warmup, ramp, w_max, w_min, beta, epochs):
    """Spreadsheet-style columns: raw weight by case, then the EMA row by row."""
    peak, last = warmup + ramp, epochs - 1
    raw, ema, s = [], [], 0.0
    for e in range(epochs):
        if e < warmup:
            r = 0.0
        elif e < peak:
            r = w_max * (e - warmup) / ramp
        elif e >= last:
            r = w_min
        else:
            r = w_max + (w_min - w_max) * (e - peak) / (last - peak)
        s = beta * s + (1 - beta) * r
        raw.append(r)
        ema.append(s)
    return raw, ema


def check_schedule() -> Check:
    warmup, ramp, w_max, w_min, beta, epochs = 10, 10, 1.0, 0.1, 0.9, 100
    sched = LossSchedule(warmup, ramp, w_max, w_min, beta, epochs)
    got = [joint_weight(sched, e) for e in range(epochs)]
    _, want = schedule_oracle(warmup, ramp, w_max, w_min, beta, epochs)
    exact = got == want
    zero_ok = all(w == 0.0 for w in got[:warmup])
    probe = LossSchedule(warmup, ramp, w_max, w_min, beta, epochs)
    jumps = [abs(probe.raw(k + 1e-9) - probe.raw(k - 1e-9)) for k in (warmup, warmup + ramp, epochs - 1)]
    steps = np.abs(np.diff([probe.raw(e) for e in np.linspace(0, epochs - 1, 20001)]))
    cont_ok = max(jumps) < 1e-6 and steps.max() < 1e-3
    ok = exact and zero_ok and cont_ok
    diff = max(abs(a - b) for a, b in zip(got, want))
    return Check(
        "schedule",
        ok,
        f"zero during warmup={zero_ok}, max jump at breakpoints {max(jumps):.1e}, oracle match exact={exact} (max diff {diff:.1e})",
        {"max_diff": diff},
    )


def tiny_config(seed: int = 0, **top) -> RunConfig:
    """A fast 64-bit configuration that still exercises every branch."""
    d = {
        "encoder": {"base_channels": 8, "depths": [1, 1, 1, 1], "state_dim": 4},
        "data": {"synthetic": {"size": 32, "n_train": 8, "n_val": 4, "seed": seed}},
        "optim": {"batch_size": 4},
        "schedule": {"warmup": 1, "ramp": 1},
        "epochs": 3,
        "eval_interval": 1,
        "precision": 64,
        "seed": seed,
    }
    d.update(top)
    return from_dict(d)


def _same_rows(a, b) -> bool:
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        for k in ra:
            va, vb = ra[k], rb.get(k)
            if isinstance(va, float) and isinstance(vb, float) and math.isnan(va) and math.isnan(vb):
                continue
            if va != vb:
                return False
    return True


def _same_params(m1, m2) -> bool:
    t1, t2 = m1.param_tree(), m2.param_tree()
    return list(t1) == list(t2) and all(np.array_equal(t1[k].data, t2[k].data) for k in t1)


def check_determinism(seed: int = 0) -> Check:
    from .train import load_model, save_checkpoint, train

    cfg = tiny_config(seed)
    r1 = train(cfg, write=False)
    r2 = train(tiny_config(seed), write=False)
    logs_ok = _same_rows(r1.rows, r2.rows) and _same_rows(r1.steps, r2.steps) and _same_params(r1.model, r2.model)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        path = tmp / "a.farm"
        save_checkpoint(path, r1.model, None, 2, cfg.schedule.build(cfg.epochs), r1.best_dsc)
        model, _ = load_model(path)
        path2 = tmp / "b.farm"
        save_checkpoint(path2, model, None, 2, cfg.schedule.build(cfg.epochs), r1.best_dsc)
        bytes_ok = path.read_bytes() == path2.read_bytes() and dumps(load(path)) == path.read_bytes()

        full = train(tiny_config(seed, output_dir=str(tmp / "full")))
        part_cfg = tiny_config(seed, output_dir=str(tmp / "part"))
        train(part_cfg, stop_after=1)
        resumed = train(part_cfg, resume=tmp / "part" / "last.farm")
        resume_ok = _same_rows(full.rows, resumed.rows) and _same_rows(full.steps, resumed.steps) and _same_params(full.model, resumed.model)
    ok = logs_ok and bytes_ok and resume_ok
    return Check(
        "determinism & persistence",
        ok,
        f"repeat run identical={logs_ok}, save/load/save byte-identical={bytes_ok}, resume == uninterrupted={resume_ok} (64-bit)",
    )


def check_metric_identities(seed: int = 0) -> tuple[Check, Check]:
    """(Dice >= IoU on random pairs plus hand-counted cases, the literal quoted example)."""
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(1000):
        K = int(rng.integers(2, 5))
        shape = tuple(rng.integers(1, 9, 2))
        rep = metrics(rng.integers(0, K, shape), rng.integers(0, K, shape), K)
        seen = ~np.isnan(rep.dice)
        violations += int((rep.dice[seen] < rep.iou[seen] - 1e-15).sum())
    gt = np.zeros((4, 4), dtype=int)
    gt[0, :] = 1
    gt[1, :2] = 1  # 6 positives
    pred = np.zeros((4, 4), dtype=int)
    pred[0, :] = 1  # TP 4
    pred[2, :2] = 1  # FP 2; FN = row-1 pair = 2
    rep = metrics(pred, gt, 2)
    counts = (int(rep.tp[1]), int(rep.fp[1]), int(rep.fn[1]))
    formula_ok = counts == (4, 2, 2) and rep.dice[1] == 2 * 4 / (2 * 4 + 2 + 2) and rep.iou[1] == 4 / (4 + 2 + 2)
    # TP = FP = FN is the configuration whose Dice/IoU are 1/2 and 1/3
    pred_b = np.zeros((4, 4), dtype=int)
    pred_b[0, :2] = 1
    pred_b[2, :2] = 1
    gt_b = np.zeros((4, 4), dtype=int)
    gt_b[0, :2] = 1
    gt_b[1, :2] = 1
    rb = metrics(pred_b, gt_b, 2)
    half_ok = rb.dice[1] == 0.5 and rb.iou[1] == 1 / 3
    identity = Check(
        "metric identities",
        violations == 0 and formula_ok and half_ok,
        f"Dice<IoU violations {violations}/1000 pairs; TP,FP,FN={counts} -> Dice {rep.dice[1]:.4f}, IoU {rep.iou[1]:.4f}; "
        f"TP=FP=FN=2 -> Dice {rb.dice[1]:.4f}, IoU {rb.iou[1]:.4f}",
    )
    literal = Check(
        "metric hand example as quoted (TP=4,FP=2,FN=2 -> Dice 0.5, IoU 1/3)",
        rep.dice[1] == 0.5 and rep.iou[1] == 1 / 3,
        f"Dice = 2TP/(2TP+FP+FN) gives {rep.dice[1]:.4f} and IoU = TP/(TP+FP+FN) gives {rep.iou[1]:.4f} for these counts",
    )
    return identity, literal


def check_ablation_trend(base: RunConfig | None = None, seeds=(0, 1, 2), write: bool = True) -> tuple[Check, Check]:
    """(DSC ordering, runtime target) from Base / Base+MSFM / Full with the wavelet variant."""
    from .train import ablation_suite

    base = base or from_dict({"output_dir": "runs/acceptance_ablation"})
    rows = {k: ABLATION_ROWS[k] for k in ("Base", "Base+MSFM", "Full")}
    t0 = time.perf_counter()
    records = ablation_suite(base, rows=rows, variants=("dwt",), seeds=seeds, write=write)
    dt = time.perf_counter() - t0
    mean = {k: float(np.mean([r["DSC"] for r in records if r["row"] == k])) for k in rows}
    per_seed = {k: [round(r["DSC"], 4) for r in records if r["row"] == k] for k in rows}
    ok = mean["Full"] >= mean["Base"] + 0.005 and mean["Base+MSFM"] >= mean["Base"]
    trend = Check(
        "ablation trend",
        ok,
        f"mean val DSC Base {mean['Base']:.4f}, +MSFM {mean['Base+MSFM']:.4f}, Full {mean['Full']:.4f} "
        f"(need Full >= Base+0.005 and +MSFM >= Base); per seed {per_seed}",
        {"mean": mean, "per_seed": per_seed, "seconds": dt},
    )
    runtime = Check("ablation runtime target", dt < 1800, f"{dt / 60:.1f} min for {3 * len(seeds)} runs (target < 30 min)", {"seconds": dt})
    return trend, runtime


def run_all(include_ablation: bool = False) -> list[Check]:
    checks = [check_transforms(), check_mask_partition(), check_gradients(), check_scan_oracle(), check_ssrae_contracts(), check_schedule()]
    if include_ablation:
        checks.extend(check_ablation_trend())
    checks.append(check_determinism())
    checks.extend(check_metric_identities())
    return checks

