"""Backbone activations at a configurable mixed-block cut.

The backbone is torchvision's Inception v3. Cut names mixed1..mixed11 map
to its eleven mixed blocks in forward order; a cut either takes that single
block's activation map or, in stack mode, the concatenation of that block
and every later one. Activations are flattened per frame (channel-major)
into one row of the output matrix.

Weights come from a local state-dict file when given; otherwise the
network is built with seeded random weights, which keeps every run of the
pipeline deterministic and dependency-light at the cost of untrained
features. See the package README for the pretrained-weights download step.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torchvision.models import inception_v3

# mixed blocks in forward order; the stem layers run before all of them
_MIXED = (
    "Mixed_5b",
    "Mixed_5c",
    "Mixed_5d",
    "Mixed_6a",
    "Mixed_6b",
    "Mixed_6c",
    "Mixed_6d",
    "Mixed_6e",
    "Mixed_7a",
    "Mixed_7b",
    "Mixed_7c",
)
_STEM = (
    "Conv2d_1a_3x3",
    "Conv2d_2a_3x3",
    "Conv2d_2b_3x3",
    "maxpool1",
    "Conv2d_3b_1x1",
    "Conv2d_4a_3x3",
    "maxpool2",
)
CUT_NAMES = tuple(f"mixed{i + 1}" for i in range(len(_MIXED)))
# activation sizes per block at 299 x 299 input (channels * height * width)
CUT_DIMS = dict(
    zip(
        CUT_NAMES,
        (313600, 352800, 352800, 221952, 221952, 221952, 221952, 221952, 81920, 131072, 131072),
    )
)
DEFAULT_CUT = "mixed1"


class WeightsError(ValueError):
    """Raised when a weights file is missing or does not fit the backbone."""


def resolve_cut(name: str) -> int:
    """Cut name -> index into the mixed-block sequence."""
    key = name.lower()
    if key in CUT_NAMES:
        return CUT_NAMES.index(key)
    native = {m.lower(): i for i, m in enumerate(_MIXED)}
    if key in native:
        return native[key]
    raise WeightsError(
        f"unknown cut {name!r}; expected one of {', '.join(CUT_NAMES)}"
    )


def output_dim(cut: str, stack: bool = False) -> int:
    start = resolve_cut(cut)
    dims = list(CUT_DIMS.values())
    return sum(dims[start:]) if stack else dims[start]


def build_network(weights: Path | None = None, seed: int = 0) -> torch.nn.Module:
    torch.manual_seed(seed)
    net = inception_v3(weights=None, aux_logits=True, init_weights=True)
    if weights is not None:
        if not Path(weights).is_file():
            raise WeightsError(f"weights file {weights} does not exist")
        state = torch.load(weights, map_location="cpu", weights_only=True)
        try:
            net.load_state_dict(state)
        except RuntimeError as exc:
            raise WeightsError(f"weights file {weights} does not fit: {exc}") from exc
    net.eval()
    return net


class FeatureExtractor:
    """Maps batches of preprocessed frames to flattened activation rows."""

    def __init__(self, net: torch.nn.Module, cut: str = DEFAULT_CUT, stack: bool = False):
        self.net = net
        self.start = resolve_cut(cut)
        self.stop = len(_MIXED) if stack else self.start + 1
        self.dim = output_dim(cut, stack)

    def features(self, batch: torch.Tensor) -> np.ndarray:
        if batch.ndim != 4 or batch.shape[1:] != (3, 299, 299):
            raise ValueError(f"expected N x 3 x 299 x 299 frames, got {tuple(batch.shape)}")
        collected = []
        with torch.inference_mode():
            x = batch
            for name in _STEM:
                x = getattr(self.net, name)(x)
            for i, name in enumerate(_MIXED[: self.stop]):
                x = getattr(self.net, name)(x)
                if i >= self.start:
                    collected.append(torch.flatten(x, start_dim=1))
        out = torch.cat(collected, dim=1).numpy().astype(np.float32, copy=False)
        assert out.shape[1] == self.dim
        return out
