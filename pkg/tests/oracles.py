"""Independent brute-force reference implementations used by the tests.

Everything here is written from the definitions with plain Python loops
and sets, sharing no code with the package beyond its data types.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction

import numpy as np


def flood_fill_components(mask, connectivity=4):
    """Set of frozensets of (row, col), one per connected foreground region."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    seen = set()
    out = set()
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or (r, c) in seen:
                continue
            comp = set()
            queue = deque([(r, c)])
            seen.add((r, c))
            while queue:
                y, x = queue.popleft()
                comp.add((y, x))
                for dy, dx in steps:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and (ny, nx) not in seen:
                        seen.add((ny, nx))
                        queue.append((ny, nx))
            out.add(frozenset(comp))
    return out


def box_pixels(x, y, w, h):
    return {(r, c) for r in range(y, y + h) for c in range(x, x + w)}


def iou_fraction(a: set, b: set) -> Fraction:
    return Fraction(len(a & b), len(a | b))


def brute_match(det_sets, truth_sets, beta):
    """Enumerate every (detection, truth) pair; exact rational IOU."""
    b = Fraction(str(beta))
    flags = [any(iou_fraction(d, t) >= b for d in det_sets) for t in truth_sets]
    fp = sum(1 for d in det_sets if all(iou_fraction(d, t) < b for t in truth_sets))
    return flags, fp


def brute_rates(frames_dets, tracks, num_frames, alpha, beta):
    """(TBDR, RBDR, FP count) for one threshold over one video.

    ``frames_dets``: per frame, list of pixel sets.
    ``tracks``: dict track id -> dict frame -> pixel set.
    """
    a = Fraction(str(alpha))
    fp_total = 0
    hits = {tid: 0 for tid in tracks}
    for fi in range(num_frames):
        owners = [(tid, boxes[fi]) for tid, boxes in tracks.items() if fi in boxes]
        flags, fp = brute_match(frames_dets[fi], [t for _, t in owners], beta)
        fp_total += fp
        for (tid, _), f in zip(owners, flags):
            hits[tid] += f
    detected_tracks = sum(1 for tid, boxes in tracks.items() if Fraction(hits[tid], len(boxes)) >= a)
    regions = sum(len(b) for b in tracks.values())
    return Fraction(detected_tracks, len(tracks)), Fraction(sum(hits.values()), regions), fp_total


def dense_convolve_clamped(img, kernel2d):
    """Direct 2-D correlation with clamp-to-edge borders, one output pixel at a time."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    kh, kw = kernel2d.shape
    ry, rx = kh // 2, kw // 2
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for i in range(kh):
                for j in range(kw):
                    y = min(max(r + i - ry, 0), h - 1)
                    x = min(max(c + j - rx, 0), w - 1)
                    acc += kernel2d[i, j] * img[y, x]
            out[r, c] = acc
    return out


def sum_l2(u, v):
    return sum((float(a) - float(b)) ** 2 for a, b in zip(u, v)) ** 0.5


def sum_norm_l1(u, v, eps):
    return sum(abs(float(a) - float(b)) / (abs(float(a)) + abs(float(b)) + eps) for a, b in zip(u, v))


def trapezoid_auc_dense(points, samples=200001):
    """AUC for fpr in [0, 1] by dense sampling of the piecewise-linear curve."""
    pts = sorted(points)
    if pts[0][0] > 0:
        pts = [(0.0, 0.0)] + pts
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    grid = np.linspace(0.0, 1.0, samples)
    vals = np.interp(grid, xs, ys, right=ys[-1])
    return float(np.trapezoid(vals, grid)) if hasattr(np, "trapezoid") else float(np.trapz(vals, grid))


def sequential_lcg(seed, n, a=6364136223846793005, c=1442695040888963407):
    x = seed % 2 ** 64
    out = []
    for _ in range(n):
        x = (a * x + c) % 2 ** 64
        out.append(x >> 33)
    return out
