"""Seeded synthetic sources: natural-statistics images and AR(1) blocks.

The image generator composes the ingredients that drive intra prediction and
transform choice in photographic content: a 1/f^alpha spectral base (natural
images show power spectra close to 1/f^2), smooth illumination gradients,
and occluding shapes whose boundaries create the directional edges the
angular modes exist for.  It is not a substitute for photographs in any
perceptual sense, but it produces residual statistics with the right broad
shape while staying bit-reproducible from a single seed.

AR(1) blocks (separable exponential correlation) are the classic analytic
test source: their covariance is known in closed form and their
Karhunen-Loeve basis is approximated well by the DCT at high correlation.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

from .dataset import write_pgm


def ar1_blocks(count: int, n: int, rho: float = 0.95, sigma: float = 20.0, seed: int = 0) -> np.ndarray:
    """int16 blocks with separable AR(1) row/column correlation ``rho``."""
    if not 0 <= rho < 1:
        raise ValueError(f"correlation must be in [0, 1), got {rho}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((count, n, n))
    decay = np.sqrt(1.0 - rho * rho)
    for axis in (1, 2):
        x = np.moveaxis(x, axis, 0)
        for i in range(1, n):
            x[i] = rho * x[i - 1] + decay * x[i]
        x = np.moveaxis(x, 0, axis)
    out = np.rint(sigma * x).astype(np.int64)
    return np.clip(out, -(1 << 15), (1 << 15) - 1).astype(np.int16).reshape(count, n * n)


def _spectral_noise(rng: np.random.Generator, shape, alpha: float) -> np.ndarray:
    """Real field with isotropic power spectrum ~ 1/f^alpha, unit variance."""
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = 1.0
    spectrum = radius ** (-alpha / 2.0)
    spectrum[0, 0] = 0.0
    phases = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    field = np.fft.ifft2(phases * spectrum).real
    std = field.std()
    return field / std if std > 0 else field


def synthetic_image(seed: int, height: int = 176, width: int = 176) -> np.ndarray:
    """One grayscale image combining texture, gradients and occluding shapes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yn = yy / height
    xn = xx / width

    base = float(rng.uniform(60, 190))
    gx, gy = rng.uniform(-70, 70, size=2)
    img = base + gx * xn + gy * yn
    img = img + rng.uniform(8, 45) * _spectral_noise(rng, (height, width), float(rng.uniform(1.6, 2.4)))

    for _ in range(int(rng.integers(3, 9))):
        kind = int(rng.integers(0, 3))
        if kind == 0:  # half plane: a hard oriented edge across the frame
            theta = rng.uniform(0, 2 * np.pi)
            offset = rng.uniform(0.2, 0.8)
            mask = (np.cos(theta) * xn + np.sin(theta) * yn) > offset * (abs(np.cos(theta)) + abs(np.sin(theta)))
        elif kind == 1:  # ellipse
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            ry, rx = rng.uniform(0.05, 0.35, size=2)
            mask = ((yn - cy) / ry) ** 2 + ((xn - cx) / rx) ** 2 < 1.0
        else:  # rectangle
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            hh, hw = rng.uniform(0.04, 0.3, size=2)
            mask = (np.abs(yn - cy) < hh) & (np.abs(xn - cx) < hw)
        if not mask.any():
            continue
        level = float(rng.uniform(40, 215))
        ogx, ogy = rng.uniform(-60, 60, size=2)
        tex = rng.uniform(2, 25) * _spectral_noise(rng, (height, width), float(rng.uniform(1.5, 2.2)))
        img = np.where(mask, level + ogx * xn + ogy * yn + tex, img)

    if rng.uniform() < 0.35:  # some images are softer than others
        img = ndimage.uniform_filter(img, size=3, mode="nearest")
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_corpus(outdir: str, count: int = 120, height: int = 176, width: int = 176, seed: int = 0) -> list[str]:
    """Write ``count`` synthetic images as PGM files; returns their paths."""
    if count < 1:
        raise ValueError("corpus needs at least one image")
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for i in range(count):
        img = synthetic_image(seed * 1_000_003 + i, height, width)
        path = os.path.join(outdir, f"synth_{i:04d}.pgm")
        write_pgm(img, path)
        paths.append(path)
    return paths


def natural_tiles(sources: list[str], outdir: str, tile: int = 176,
                  scales: tuple = (1.0, 0.5), mirror: bool = True) -> list[str]:
    """Cut photographs into grayscale tiles, written as PGM files.

    Each source image is converted to grayscale, optionally downscaled, and
    carved into non-overlapping tile x tile views; mirror adds the
    horizontally flipped counterpart of every tile.  Sources too small for
    even one tile at a given scale are skipped at that scale.  Deterministic
    for a fixed source list.
    """
    from PIL import Image

    from .dataset import load_image

    if tile < 8:
        raise ValueError(f"tile side must be at least 8, got {tile}")
    os.makedirs(outdir, exist_ok=True)
    paths = []
    index = 0
    for src in sources:
        base = load_image(src)
        for scale in scales:
            if scale <= 0 or scale > 1:
                raise ValueError(f"scales must lie in (0, 1], got {scale}")
            if scale == 1.0:
                img = base
            else:
                h = int(round(base.shape[0] * scale))
                w = int(round(base.shape[1] * scale))
                if min(h, w) < tile:
                    continue
                resized = Image.fromarray(base).resize((w, h), Image.LANCZOS)
                img = np.asarray(resized, dtype=np.uint8)
            rows = img.shape[0] // tile
            cols = img.shape[1] // tile
            for r in range(rows):
                for c in range(cols):
                    view = img[r * tile:(r + 1) * tile, c * tile:(c + 1) * tile]
                    variants = [view, view[:, ::-1]] if mirror else [view]
                    for v in variants:
                        path = os.path.join(outdir, f"tile_{index:04d}.pgm")
                        write_pgm(np.ascontiguousarray(v), path)
                        paths.append(path)
                        index += 1
    return paths
