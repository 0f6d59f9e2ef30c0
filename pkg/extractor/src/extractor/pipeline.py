"""End-to-end extraction: frames in, FSEQ file and manifest entry out."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .fseq import save_fseq
from .frames import InputError, iter_frames
from .network import DEFAULT_CUT, FeatureExtractor, build_network, output_dim

BATCH = 8


@dataclass(frozen=True)
class ExtractConfig:
    input: Path
    out: Path
    cut: str = DEFAULT_CUT
    stack: bool = False
    stride: int = 1
    crop: tuple[int, int, int, int] | None = None
    weights: Path | None = None
    seed: int = 0
    split: str = "train"
    max_dim: int = 8_000_000  # refuse absurd stacked outputs before inference

    def __post_init__(self):
        if self.stride < 1:
            raise InputError(f"stride must be >= 1, got {self.stride}")
        if self.split not in ("train", "test"):
            raise InputError(f"split must be train or test, got {self.split!r}")


def extract(cfg: ExtractConfig) -> dict:
    """Run the pipeline and return the manifest entry for the written file."""
    dim = output_dim(cfg.cut, cfg.stack)
    if dim > cfg.max_dim:
        raise InputError(
            f"cut {cfg.cut}{' stacked' if cfg.stack else ''} produces {dim} features "
            f"per frame, above the configured limit {cfg.max_dim}"
        )
    net = FeatureExtractor(build_network(cfg.weights, cfg.seed), cfg.cut, cfg.stack)
    rows: list[np.ndarray] = []
    batch: list[torch.Tensor] = []
    for frame in iter_frames(cfg.input, cfg.stride, cfg.crop):
        batch.append(frame)
        if len(batch) == BATCH:
            rows.append(net.features(torch.stack(batch)))
            batch.clear()
    if batch:
        rows.append(net.features(torch.stack(batch)))
    if not rows:
        raise InputError(f"no frames decoded from {cfg.input} at stride {cfg.stride}")
    save_fseq(np.concatenate(rows, axis=0), cfg.out)
    return {"fseq": str(cfg.out), "labels": None, "split": cfg.split}
