"""Run configuration: nested JSON sections mapped onto the module configs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import SyntheticSpec
from .encoder import EncoderConfig
from .losses import LossSchedule
from .msfm import MsfmConfig
from .ssrae import SsraeConfig


@dataclass
class LossConfig:
    lambda_dice: float = 1.0
    lambda_ce: float = 1.0
    lambda_l1: float = 1.0
    lambda_cos: float = 0.5
    lambda_grad: float = 0.5


@dataclass
class ScheduleConfig:
    warmup: int = 10
    ramp: int = 10
    w_max: float = 1.0
    w_min: float = 0.1
    ema_beta: float = 0.9

    def build(self, total_epochs: int) -> LossSchedule:
        return LossSchedule(self.warmup, self.ramp, self.w_max, self.w_min, self.ema_beta, total_epochs)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1:
            raise ValueError("optim.lr must be > 0 and optim.batch_size >= 1")


@dataclass
class MsfmSection(MsfmConfig):
    insert_stage: int = 1


@dataclass
class Ablation:
    """The three switches behind every ablation row."""

    msfm_main: bool = True
    ssrae: bool = True
    msfm_recon: bool = True


ABLATION_ROWS = {
    "Base": Ablation(False, False, False),
    "Base+MSFM": Ablation(True, False, False),
    "Base+SSRAE": Ablation(False, True, True),
    "Base+SSRAE w/o MSFM": Ablation(False, True, False),
    "Base+MSFM+SSRAE w/o MSFM": Ablation(True, True, False),
    "Full": Ablation(True, True, True),
}


@dataclass
class DataConfig:
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    train_dir: str | None = None
    val_dir: str | None = None
    size: int | None = None


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    msfm: MsfmSection = field(default_factory=MsfmSection)
    ssrae: SsraeConfig = field(default_factory=SsraeConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    ablation: Ablation = field(default_factory=Ablation)
    epochs: int = 30
    eval_interval: int = 10
    seed: int = 0
    precision: int = 32
    folds: int = 1
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")
        if self.epochs < 1 or self.eval_interval < 1 or self.folds < 1:
            raise ValueError("epochs, eval_interval and folds must be >= 1")
        self.ssrae.enabled = self.ablation.ssrae
        self.ssrae.msfm = self.ablation.msfm_recon

    @property
    def dtype(self):
        import numpy as np

        return np.float32 if self.precision == 32 else np.float64

    def with_ablation(self, row: Ablation, **overrides) -> "RunConfig":
        cfg = from_dict(to_dict(self))
        cfg.ablation = replace(row)
        for k, v in overrides.items():
            setattr(cfg, k, v)
        cfg.__post_init__()
        return cfg


_SECTIONS = {
    "encoder": EncoderConfig,
    "msfm": MsfmSection,
    "ssrae": SsraeConfig,
    "loss": LossConfig,
    "schedule": ScheduleConfig,
    "optim": OptimConfig,
    "ablation": Ablation,
}


def _build(cls, d: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown keys in '{section}': {sorted(unknown)}")
    return cls(**d)


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    unknown = set(d) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    # ssrae.enabled / ssrae.msfm are accepted as spellings of the ablation flags
    ss = dict(d.get("ssrae", {}))
    abl = dict(d.get("ablation", {}))
    for key, flag in (("enabled", "ssrae"), ("msfm", "msfm_recon")):
        if key in ss:
            if flag in abl and abl[flag] != ss[key]:
                raise ValueError(f"ssrae.{key}={ss[key]} contradicts ablation.{flag}={abl[flag]}")
            abl[flag] = ss.pop(key)
    d["ssrae"], d["ablation"] = ss, abl
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in d:
            kwargs[name] = _build(cls, d.pop(name), name)
    if "data" in d:
        data = dict(d.pop("data"))
        syn = _build(SyntheticSpec, data.pop("synthetic", {}), "data.synthetic")
        kwargs["data"] = _build(DataConfig, {**data, "synthetic": syn}, "data")
    return RunConfig(**kwargs, **d)


def to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["ssrae"].pop("enabled")
    d["ssrae"].pop("msfm")
    return d


def load_config(path) -> RunConfig:
    return from_dict(json.loads(Path(path).read_text()))


def dumps_config(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)
