"""Binary portable pixel-map output for inference overlays."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

CROSS_ARM = 1   # 3x3 cross


def to_u8(gray) -> np.ndarray:
    """Float image in [0, 1] (H, W) or (H, W, 1) -> uint8 grayscale."""
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim == 3:
        g = g.mean(axis=2)
    return np.clip(np.round(g * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary PPM (P6)."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ParameterError(f"expected (H, W, 3) uint8, got {rgb.shape} {rgb.dtype}")
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def _draw_cross(rgb, cx: float, cy: float, channel: int) -> None:
    h, w, _ = rgb.shape
    col = min(w - 1, max(0, int(round(cx * w - 0.5))))
    row = min(h - 1, max(0, int(round(cy * h - 0.5))))
    for dr in range(-CROSS_ARM, CROSS_ARM + 1):
        r = row + dr
        if 0 <= r < h:
            rgb[r, col] = 0
            rgb[r, col, channel] = 255
    for dc in range(-CROSS_ARM, CROSS_ARM + 1):
        c = col + dc
        if 0 <= c < w:
            rgb[row, c] = 0
            rgb[row, c, channel] = 255


def overlay_image(image, predicted=None, truth=None) -> np.ndarray:
    """Grayscale base with predicted centers marked red, truth green."""
    base = to_u8(image)
    rgb = np.stack([base, base, base], axis=2).copy()
    if truth is not None:
        for cx, cy in np.asarray(truth, dtype=np.float64).reshape(-1, 2):
            _draw_cross(rgb, cx, cy, channel=1)
    if predicted is not None:
        for cx, cy in np.asarray(predicted, dtype=np.float64).reshape(-1, 2):
            _draw_cross(rgb, cx, cy, channel=0)
    return rgb
