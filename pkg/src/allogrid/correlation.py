"""Patch-based displacement search by zero-normalized cross-correlation.

Shared by the filter's motion classifier and the advection predictor. For a
set of anchor cells, the patch around each anchor in a reference array is
compared against patches in a current array displaced by every offset within
a square search radius; the best-scoring offset is the apparent displacement
from reference time to current time.

Scores are zero-mean normalized cross-correlations in [-1, 1]; a patch with
(near-)zero variance scores 0 against everything, so uniform regions never
produce confident displacements. Ties break toward the smallest displacement
magnitude, then lexicographically by (dx, dy): offsets are scored in that
order and the first maximum wins.

The search is vectorized: one enlarged patch per anchor covers every
displaced window, window sums come from integral images, and the cross terms
from one batched matmul against the centered reference patch.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

_VAR_EPS = 1e-12
# A zero-displacement score this high means the patch is unchanged up to the
# interpolation blur that frame re-centering introduces; genuinely moving
# content (>= 1 cell of true displacement) decorrelates far below this.
_STATIC_SHORTCUT = 0.995
# Scores are quantized before the ordered argmax so the documented tie-break
# (smallest magnitude, then lexicographic (dx, dy)) wins over float noise.
_SCORE_DECIMALS = 9
_CHUNK = 512


def search_offsets(radius: int) -> np.ndarray:
    """All (dx, dy) with |dx|,|dy| <= radius, in tie-break order."""
    r = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(r, r)
    offs = np.stack([dx.ravel(), dy.ravel()], axis=1)
    order = np.lexsort((offs[:, 1], offs[:, 0], (offs**2).sum(axis=1)))
    return offs[order]


def extract_patches(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray, window: int) -> np.ndarray:
    """(N, S, S) patches centered on (rows, cols); outside the array reads 0."""
    dr = np.arange(-window, window + 1)
    rr = rows[:, None, None] + dr[None, :, None]
    cc = cols[:, None, None] + dr[None, None, :]
    valid = (rr >= 0) & (rr < arr.shape[0]) & (cc >= 0) & (cc < arr.shape[1])
    patches = arr[np.clip(rr, 0, arr.shape[0] - 1), np.clip(cc, 0, arr.shape[1] - 1)]
    return np.where(valid, patches, 0.0)


def _window_sums(big: np.ndarray, side: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding (side x side) window sums of big and big**2 via integral images."""
    n, h, w = big.shape
    out_h, out_w = h - side + 1, w - side + 1
    s1 = np.zeros((n, h + 1, w + 1))
    s2 = np.zeros((n, h + 1, w + 1))
    s1[:, 1:, 1:] = big.cumsum(axis=1).cumsum(axis=2)
    s2[:, 1:, 1:] = (big * big).cumsum(axis=1).cumsum(axis=2)

    def box(acc):
        return (
            acc[:, side : side + out_h, side : side + out_w]
            - acc[:, :out_h, side : side + out_w]
            - acc[:, side : side + out_h, :out_w]
            + acc[:, :out_h, :out_w]
        )

    return box(s1), box(s2)


def zncc_displacement_search(
    ref: np.ndarray,
    cur: np.ndarray,
    rows: np.ndarray,
    cols: np.ndarray,
    window: int,
    radius: int,
    static_shortcut: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Best displacement of content from `ref` to `cur` around each anchor.

    Returns (dx, dy, peak, peak0): column/row displacements in cells, the
    winning correlation score, and the zero-displacement score per anchor.
    Callers deciding whether an anchor really moved should demand a clear
    margin of peak over peak0: elongated structure is near-invariant to
    sliding along itself (aperture problem), so a sliver of noise can
    otherwise win a nonzero offset on perfectly static content.

    With `static_shortcut`, anchors whose zero-displacement score already
    clears 0.995 skip the search and report (0, 0); the full search would
    pick (0, 0) for them anyway under the smallest-magnitude tie-break,
    real motion of a cell's content decorrelates far below that.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    n = len(rows)
    dx_out = np.zeros(n, dtype=np.int64)
    dy_out = np.zeros(n, dtype=np.int64)
    peak_out = np.zeros(n)
    peak0_out = np.zeros(n)
    if n == 0:
        return dx_out, dy_out, peak_out, peak0_out

    side = 2 * window + 1
    px = side * side
    ref_p = extract_patches(ref, rows, cols, window).reshape(n, px)
    ref_c = ref_p - ref_p.mean(axis=1, keepdims=True)
    ref_n = np.sqrt((ref_c**2).sum(axis=1))
    alive = ref_n > _VAR_EPS  # zero-variance reference patches stay at (0,0,0)

    if static_shortcut and np.any(alive):
        cur0 = extract_patches(cur, rows, cols, window).reshape(n, px)
        cur0_c = cur0 - cur0.mean(axis=1, keepdims=True)
        cur0_n = np.sqrt((cur0_c**2).sum(axis=1))
        ok = alive & (cur0_n > _VAR_EPS)
        score0 = np.zeros(n)
        score0[ok] = (ref_c[ok] * cur0_c[ok]).sum(axis=1) / (ref_n[ok] * cur0_n[ok])
        frozen = score0 > _STATIC_SHORTCUT
        peak_out[frozen] = score0[frozen]
        peak0_out[frozen] = score0[frozen]
        alive &= ~frozen

    idx = np.nonzero(alive)[0]
    if len(idx) == 0:
        return dx_out, dy_out, peak_out, peak0_out

    offs = search_offsets(radius)
    span = 2 * radius + 1
    # offset (dx, dy) lives at scores[:, dy + radius, dx + radius]
    flat_order = (offs[:, 1] + radius) * span + (offs[:, 0] + radius)

    for lo in range(0, len(idx), _CHUNK):
        sel = idx[lo : lo + _CHUNK]
        m = len(sel)
        big = extract_patches(cur, rows[sel], cols[sel], window + radius)
        s1, s2 = _window_sums(big, side)  # (m, span, span)
        kernel = ref_c[sel].reshape(m, side, side)[:, ::-1, ::-1]
        cross = fftconvolve(big, kernel, mode="valid", axes=(1, 2))
        var = s2 - s1 * s1 / px
        norm = np.sqrt(np.maximum(var, 0.0))
        denom = ref_n[sel][:, None, None] * norm
        scores = np.where(denom > _VAR_EPS, cross / np.where(denom > 0, denom, 1.0), 0.0)
        ordered = np.round(scores.reshape(m, span * span)[:, flat_order], _SCORE_DECIMALS)
        best = np.argmax(ordered, axis=1)  # first max -> tie-break order
        dx_out[sel] = offs[best, 0]
        dy_out[sel] = offs[best, 1]
        peak_out[sel] = ordered[np.arange(m), best]
        peak0_out[sel] = ordered[:, 0]  # tie-break order starts at (0, 0)
    return dx_out, dy_out, peak_out, peak0_out
