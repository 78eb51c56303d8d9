"""Full network: main encoder (+MSFM), U-shaped decoder, optional reconstruction branch."""
from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .config import RunConfig
from .encoder import Decoder, Encoder
from .msfm import MsfmConfig
from .nn import Module
from .ssrae import SSRAE
from .tensor import Tensor, no_grad


def msfm_config(cfg: RunConfig) -> MsfmConfig:
    d = asdict(cfg.msfm)
    d.pop("insert_stage")
    return MsfmConfig(**d)


class FaRMamba(Module):
    """Each component draws its initial weights from its own stream spawned
    from ``seed``, so switching a branch on or off leaves the others unchanged."""

    def __init__(self, cfg: RunConfig, seed: int | None = None):
        self.cfg = cfg
        dtype = cfg.dtype
        seed = cfg.seed if seed is None else seed
        enc_rng, dec_rng, aux_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
        mcfg = msfm_config(cfg)
        stage = cfg.msfm.insert_stage
        self.encoder = Encoder(
            cfg.encoder, enc_rng, dtype, msfm=mcfg if cfg.ablation.msfm_main else None, msfm_stages=(stage,)
        )
        self.decoder = Decoder(cfg.encoder, dec_rng, dtype)
        if cfg.ablation.ssrae:
            self.ssrae = SSRAE(cfg.encoder, cfg.ssrae, aux_rng, dtype, msfm=mcfg, msfm_stage=stage, main_encoder=self.encoder)

    @property
    def has_ssrae(self) -> bool:
        return getattr(self, "ssrae", None) is not None

    def forward(self, images: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Segmentation path only: (logits [B,K,H,W], stage features)."""
        feats, stem = self.encoder(images)
        return self.decoder(feats, stem), feats

    def predict(self, images: np.ndarray) -> np.ndarray:
        with no_grad():
            logits, _ = self(Tensor(np.asarray(images, dtype=self.cfg.dtype)))
        return logits.data.argmax(axis=1)
