"""Frame decoding and preprocessing.

Inputs are either a video file (decoded with OpenCV) or a directory of
image files (decoded with Pillow, sorted by name). Every frame goes through
the same pipeline: optional fixed crop box, resize so the shortest side is
299 with aspect preserved, 299 x 299 center crop, then per-channel
standardization with the ImageNet statistics the backbone was designed for.
"""

from __future__ import annotations

from collections.abc import Iterator
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image

SIDE = 299
# channel statistics of the backbone's training corpus
CHANNEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
CHANNEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


class InputError(ValueError):
    """Raised when the input cannot be decoded into frames."""


def _check_crop(crop: tuple[int, int, int, int], width: int, height: int) -> None:
    left, top, right, bottom = crop
    if not (0 <= left < right <= width and 0 <= top < bottom <= height):
        raise InputError(
            f"crop box {crop} does not fit inside a {width}x{height} frame"
        )


def _prepare(rgb: np.ndarray, crop: tuple[int, int, int, int] | None) -> torch.Tensor:
    """uint8 HxWx3 RGB frame -> standardized 3x299x299 float tensor."""
    if crop is not None:
        _check_crop(crop, rgb.shape[1], rgb.shape[0])
        left, top, right, bottom = crop
        rgb = rgb[top:bottom, left:right]
    h, w = rgb.shape[:2]
    scale = SIDE / min(h, w)
    new_w, new_h = max(SIDE, round(w * scale)), max(SIDE, round(h * scale))
    # Pillow's resampling is identical for video and image inputs, which
    # keeps the two decode paths byte-comparable after this point
    resized = np.asarray(
        Image.fromarray(rgb).resize((new_w, new_h), Image.Resampling.BILINEAR)
    )
    top_off = (new_h - SIDE) // 2
    left_off = (new_w - SIDE) // 2
    patch = resized[top_off : top_off + SIDE, left_off : left_off + SIDE]
    x = patch.astype(np.float32) / 255.0
    x = (x - CHANNEL_MEAN) / CHANNEL_STD
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))


def _iter_video(path: Path) -> Iterator[np.ndarray]:
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise InputError(f"cannot decode video {path}")
    try:
        while True:
            ok, bgr = cap.read()
            if not ok:
                return
            yield cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    finally:
        cap.release()


def _iter_image_dir(path: Path) -> Iterator[np.ndarray]:
    files = sorted(
        p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not files:
        raise InputError(f"no image files in {path}")
    for p in files:
        with Image.open(p) as img:
            yield np.asarray(img.convert("RGB"))


def iter_frames(
    source: Path,
    stride: int = 1,
    crop: tuple[int, int, int, int] | None = None,
) -> Iterator[torch.Tensor]:
    """Yield preprocessed frames, keeping every stride-th one (0, stride, ...)."""
    if stride < 1:
        raise InputError(f"stride must be >= 1, got {stride}")
    if not source.exists():
        raise InputError(f"input {source} does not exist")
    raw = _iter_image_dir(source) if source.is_dir() else _iter_video(source)
    for index, rgb in enumerate(raw):
        if index % stride == 0:
            yield _prepare(rgb, crop)
