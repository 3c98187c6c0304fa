"""Intra prediction over image tiles, producing the residual training corpus.

The predictor follows the HEVC geometry: 35 modes (planar, DC, 33 angular
directions), references taken from the row above and column left of each
block, angular projection in 1/32-sample steps with two-tap linear
interpolation, and inverse-angle projection of the side reference for
negative angles.  Deliberate simplifications relative to a real encoder
loop: prediction is open loop (references come from the original image, not
reconstructions), unavailable reference samples are the mid-level constant
128, and there is no reference smoothing and no DC/edge post-filter, so
e.g. pure horizontal prediction yields exactly constant rows.

Blocks are the non-overlapping n x n tiles of the image; a trailing partial
row or column of pixels is ignored.  Mode selection is exhaustive by sum of
squared prediction error, ties broken toward the lower mode index.
"""

from __future__ import annotations

import numpy as np

PLANAR = 0
DC = 1
NUM_MODES = 35
MID_LEVEL = 128

# intraPredAngle for modes 2..34: horizontal 2..17, vertical 18..34.
_ANGLES = (
    32, 26, 21, 17, 13, 9, 5, 2, 0, -2, -5, -9, -13, -17, -21, -26, -32,
    -26, -21, -17, -13, -9, -5, -2, 0, 2, 5, 9, 13, 17, 21, 26, 32,
)
# invAngle = round(8192 / |angle|) for the negative angles, keyed by |angle|.
_INV_ANGLE = {2: -4096, 5: -1638, 9: -910, 13: -630, 17: -482, 21: -390, 26: -315, 32: -256}


def mode_angle(mode: int) -> int:
    if not 2 <= mode < NUM_MODES:
        raise ValueError(f"mode {mode} has no angle")
    return _ANGLES[mode - 2]


def block_grid(height: int, width: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-left corners (rows, cols) of the full n x n tiles, row-major order."""
    rows = np.arange(0, height - n + 1, n)
    cols = np.arange(0, width - n + 1, n)
    r0 = np.repeat(rows, len(cols))
    c0 = np.tile(cols, len(rows))
    return r0, c0


def _gather_references(image: np.ndarray, r0: np.ndarray, c0: np.ndarray, n: int):
    """Reference arrays for each block: (corner+top, corner+left), length 2n+1 each.

    Index 0 is the corner sample; indices 1..2n run right along the row above
    (for tops) or down along the column left (for lefts).  Samples outside
    the image are MID_LEVEL.
    """
    h, w = image.shape
    span = 2 * n + 1
    tp = np.full((h + 1, w + 2 * n), MID_LEVEL, dtype=np.int32)
    tp[1 : h + 1, 1 : w + 1] = image
    lp = np.full((h + 2 * n, w + 1), MID_LEVEL, dtype=np.int32)
    lp[1 : h + 1, 1 : w + 1] = image
    offs = np.arange(span)
    tops = tp[r0[:, None], c0[:, None] + offs[None, :]]
    lefts = lp[r0[:, None] + offs[None, :], c0[:, None]]
    return tops, lefts


def _predict_planar(tops, lefts, n):
    top = tops[:, 1 : n + 1]
    left = lefts[:, 1 : n + 1]
    top_right = tops[:, n + 1]
    bottom_left = lefts[:, n + 1]
    x = np.arange(n)
    y = np.arange(n)
    horiz = (n - 1 - x)[None, None, :] * left[:, :, None] + (x + 1)[None, None, :] * top_right[:, None, None]
    vert = (n - 1 - y)[None, :, None] * top[:, None, :] + (y + 1)[None, :, None] * bottom_left[:, None, None]
    return (horiz + vert + n) // (2 * n)


def _predict_dc(tops, lefts, n):
    total = tops[:, 1 : n + 1].sum(axis=1) + lefts[:, 1 : n + 1].sum(axis=1)
    dc = (total + n) // (2 * n)
    return np.broadcast_to(dc[:, None, None], (len(dc), n, n)).copy()


def _predict_angular(main, side, n, angle):
    """Directional prediction with main reference along the top (vertical form).

    main/side are the (corner+run) arrays from ``_gather_references``; the
    horizontal modes call this with the roles swapped and transpose the
    result.  Returns (count, n, n) int32 predictions.
    """
    count = main.shape[0]
    # refs[x] for x in -n..2n+1 lives at refs[:, x + n]; the final slot only
    # pads two-tap gathers whose weight is zero (angle 32, fraction 0).
    refs = np.empty((count, 3 * n + 2), dtype=np.int32)
    refs[:, n : 3 * n + 1] = main
    refs[:, 3 * n + 1] = main[:, 2 * n]
    if angle < 0:
        bottom = (n * angle) >> 5
        # The projection is only defined (and only needed) when the row loop
        # can step below the corner; at bottom == -1 the corner itself covers it.
        if bottom < -1:
            inv = _INV_ANGLE[-angle]
            for x in range(-1, bottom - 1, -1):
                side_idx = ((x * inv + 128) >> 8) - 1
                refs[:, x + n] = side[:, side_idx + 1]
    pred = np.empty((count, n, n), dtype=np.int32)
    for y in range(n):
        delta = (y + 1) * angle
        idx = delta >> 5
        fact = delta & 31
        lo = refs[:, idx + n + 1 : idx + 2 * n + 1]
        if fact == 0:
            pred[:, y, :] = lo
        else:
            hi = refs[:, idx + n + 2 : idx + 2 * n + 2]
            pred[:, y, :] = ((32 - fact) * lo + fact * hi + 16) >> 5
    return pred


def predict_mode(tops, lefts, n: int, mode: int) -> np.ndarray:
    """Predict every block for one mode from gathered references."""
    if mode == PLANAR:
        return _predict_planar(tops, lefts, n)
    if mode == DC:
        return _predict_dc(tops, lefts, n)
    angle = mode_angle(mode)
    if mode >= 18:
        return _predict_angular(tops, lefts, n, angle)
    pred = _predict_angular(lefts, tops, n, angle)
    return pred.transpose(0, 2, 1)


def predict_block(image: np.ndarray, r0: int, c0: int, n: int, mode: int) -> np.ndarray:
    """Single-block convenience wrapper around the batch path."""
    tops, lefts = _gather_references(
        np.asarray(image), np.asarray([r0]), np.asarray([c0]), n
    )
    return predict_mode(tops, lefts, n, mode)[0]


def best_mode_residuals(image: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Residuals of the SSE-best prediction mode for every tile of an image.

    Returns (residuals, modes): residuals is (count, n^2) int16 in row-major
    block order, modes is (count,) uint8.  Images smaller than one tile
    yield empty arrays.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    h, w = img.shape
    if h < n or w < n:
        return np.empty((0, n * n), dtype=np.int16), np.empty(0, dtype=np.uint8)
    r0, c0 = block_grid(h, w, n)
    tops, lefts = _gather_references(img, r0, c0, n)
    rows = r0[:, None, None] + np.arange(n)[None, :, None]
    cols = c0[:, None, None] + np.arange(n)[None, None, :]
    tiles = img[rows, cols].astype(np.int32)
    best_sse = None
    best_mode = None
    best_pred = None
    for mode in range(NUM_MODES):
        pred = predict_mode(tops, lefts, n, mode)
        sse = ((tiles - pred) ** 2).sum(axis=(1, 2))
        if best_sse is None:
            best_sse = sse
            best_mode = np.zeros(len(sse), dtype=np.uint8)
            best_pred = pred.copy()
        else:
            better = sse < best_sse
            if better.any():
                best_sse = np.where(better, sse, best_sse)
                best_mode[better] = mode
                best_pred[better] = pred[better]
    residuals = (tiles - best_pred).reshape(len(r0), n * n)
    return residuals.astype(np.int16), best_mode
