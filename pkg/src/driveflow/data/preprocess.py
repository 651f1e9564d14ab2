"""Frame-rate reduction, image resizing, and dataset subsetting."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..errors import ContractError


def resample_to_1fps(manifest):
    """Keep one record per integer second.

    For each second ``s`` between ``floor(first)`` and ``floor(last)`` the
    record nearest ``s`` is kept (earlier wins ties) if it lies within half a
    second of ``s``. A record chosen for two seconds is kept once, and a pick
    closer than 0.5 s to the previous kept record is skipped, so the output
    cadence never exceeds 2 Hz.
    """
    records = manifest.records
    if not records:
        return replace(manifest, records=[])
    ts = np.array([r.timestamp_s for r in records])
    if np.any(np.diff(ts) <= 0):
        bad = int(np.argmax(np.diff(ts) <= 0)) + 1
        raise ContractError(f"timestamps must be strictly increasing (record {bad}: {ts[bad]} after {ts[bad - 1]})")

    kept: list[int] = []
    for s in range(math.floor(ts[0]), math.floor(ts[-1]) + 1):
        # ts is sorted: nearest is one of the two neighbours of s
        j = int(np.searchsorted(ts, s))
        cands = [i for i in (j - 1, j) if 0 <= i < len(ts)]
        best = min(cands, key=lambda i: (abs(ts[i] - s), ts[i]))
        if abs(ts[best] - s) > 0.5:
            continue
        if kept and (best == kept[-1] or ts[best] - ts[kept[-1]] < 0.5):
            continue
        kept.append(best)
    meta = dict(manifest.metadata)
    meta["fps"] = 1
    return replace(manifest, records=[records[i] for i in kept], metadata=meta)


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling of a ``C x H x W`` array with pixel-center alignment."""
    if height < 1 or width < 1:
        raise ContractError(f"target size must be positive, got {height}x{width}")
    img = np.asarray(image, dtype=np.float64)
    _, h, w = img.shape
    if (h, w) == (height, width):
        return img.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, fr = axis(h, height)
    c0, c1, fc = axis(w, width)
    top = img[:, r0][:, :, c0] * (1 - fc) + img[:, r0][:, :, c1] * fc
    bot = img[:, r1][:, :, c0] * (1 - fc) + img[:, r1][:, :, c1] * fc
    out = top * (1 - fr)[:, None] + bot * fr[:, None]
    return np.clip(out, 0.0, 1.0)


def select_fraction(manifest, fraction: float, seed: int = 0, mode: str = "head"):
    """Keep ``fraction`` of the records, either the first ones or a seeded random subset (order kept)."""
    if not 0 < fraction <= 1:
        raise ContractError(f"fraction must be in (0, 1], got {fraction}")
    n = len(manifest.records)
    k = max(1, round(n * fraction)) if n else 0
    if mode == "head":
        idx = range(k)
    elif mode == "random":
        idx = np.sort(np.random.default_rng(seed).choice(n, size=k, replace=False))
    else:
        raise ContractError(f"unknown fraction mode {mode!r}; expected head or random")
    return replace(manifest, records=[manifest.records[i] for i in idx])
