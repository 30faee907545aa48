"""Shared test helpers.

The brute-force reference implementations here are deliberately written in
the most literal style possible (explicit loops, no shared code with the
package) so they can serve as independent oracles.
"""

from __future__ import annotations

import math
import re

import numpy as np
import pytest


# ---------------------------------------------------------------------------
# Brute-force metric references


def bf_nmse(pred, truth):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    num = 0.0
    den = 0.0
    for pv, tv in zip(p.ravel(), t.ravel()):
        num += (pv - tv) ** 2
        den += tv * tv
    return num / den


def bf_rmse(pred, truth):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    acc = 0.0
    for pv, tv in zip(p.ravel(), t.ravel()):
        acc += (pv - tv) ** 2
    return math.sqrt(acc / p.size)


def bf_psnr(pred, truth, peak=1.0):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    err = 0.0
    for pv, tv in zip(p.ravel(), t.ravel()):
        err += (pv - tv) ** 2
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(p.size * peak * peak / err)


def bf_ssim3d(pred, truth, window=7, dynamic_range=1.0):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    vals = []
    ni, nj, nk = p.shape
    for i in range(ni - window + 1):
        for j in range(nj - window + 1):
            for k in range(nk - window + 1):
                pw = p[i : i + window, j : j + window, k : k + window]
                tw = t[i : i + window, j : j + window, k : k + window]
                mp = pw.mean()
                mt = tw.mean()
                vp = (pw * pw).mean() - mp * mp
                vt = (tw * tw).mean() - mt * mt
                cov = (pw * tw).mean() - mp * mt
                num = (2 * mp * mt + c1) * (2 * cov + c2)
                den = (mp * mp + mt * mt + c1) * (vp + vt + c2)
                vals.append(num / den)
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Independent segment-vs-box geometry (slab method written from scratch)


def seg_box_interval(a, b, lo, hi):
    """Parameter interval [t0, t1] of segment a..b inside box [lo, hi].

    Returns (t0, t1) clipped to [0, 1]; empty intervals come back with
    t0 >= t1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    t_enter = 0.0
    t_exit = 1.0
    for ax in range(3):
        d = b[ax] - a[ax]
        if d == 0.0:
            if a[ax] < lo[ax] or a[ax] > hi[ax]:
                return 1.0, 0.0
            continue
        u = (lo[ax] - a[ax]) / d
        v = (hi[ax] - a[ax]) / d
        if u > v:
            u, v = v, u
        t_enter = max(t_enter, u)
        t_exit = min(t_exit, v)
    return t_enter, t_exit


def bf_obstruction_length(boxes, a, b):
    """Union length of segment a..b inside the boxes, via interval merging."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    seg = float(np.linalg.norm(b - a))
    ivals = []
    for lo, hi in boxes:
        t0, t1 = seg_box_interval(a, b, lo, hi)
        if t1 > t0:
            ivals.append((t0, t1))
    ivals.sort()
    total = 0.0
    end = 0.0
    for t0, t1 in ivals:
        t0 = max(t0, end)
        if t1 > t0:
            total += t1 - t0
            end = t1
    return total * seg


def mc_obstruction_length(boxes, a, b, n=100_000):
    """Monte-Carlo estimate: fraction of midpoint samples inside any box."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ts = (np.arange(n) + 0.5) / n
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    inside = np.zeros(n, dtype=bool)
    for lo, hi in boxes:
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        inside |= ((pts >= lo) & (pts <= hi)).all(axis=1)
    return inside.mean() * float(np.linalg.norm(b - a))


# ---------------------------------------------------------------------------
# Robust-ray classification for line-of-sight agreement checks


def robust_los_expectation(boxes, a, b, delta, eps=1e-9):
    """(is_robust, expected_clear) for the segment a..b at voxel side delta.

    A ray is robust when every box is either clearly missed (the segment
    stays strictly outside the box inflated by delta/2) or clearly hit (the
    segment crosses the box deflated by delta/2 along a sub-interval some
    point of which is at Chebyshev distance >= delta from both endpoints, so
    the blockage must register in a voxel other than the excluded endpoint
    voxels). Expected LoS on a robust ray: clear iff no box is clearly hit.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dmax = float(np.max(np.abs(b - a)))
    blocked = False
    for lo, hi in boxes:
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        t0, t1 = seg_box_interval(a, b, lo - delta / 2, hi + delta / 2)
        if t1 <= t0 + eps:
            continue  # clearly missed
        if np.any((hi - delta / 2) - (lo + delta / 2) <= eps):
            return False, None  # box too thin to deflate
        t0, t1 = seg_box_interval(a, b, lo + delta / 2, hi - delta / 2)
        if t1 <= t0 + eps:
            return False, None  # grazes the inflated box only
        if dmax == 0.0:
            return False, None
        t_lo = max(t0, delta / dmax)
        t_hi = min(t1, 1.0 - delta / dmax)
        if t_hi <= t_lo + eps:
            return False, None  # hit too close to an endpoint voxel
        blocked = True
    return True, not blocked


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)


# ---------------------------------------------------------------------------
# Acceptance verdict summary: one line per criterion at the end of the run,
# outside pytest's capture so it is always visible.

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts: dict[int, tuple[str, str]] = {}
    for category, label in (
        ("passed", "PASS"),
        ("failed", "FAIL"),
        ("error", "FAIL"),
        ("skipped", "SKIP"),
    ):
        for rep in terminalreporter.stats.get(category, []):
            match = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not match:
                continue
            num = int(match.group(1))
            if num not in verdicts or label == "FAIL":
                verdicts[num] = (label, match.group(2).replace("_", "-"))
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(verdicts):
        label, name = verdicts[num]
        terminalreporter.write_line(f"criterion {num:02d} {name}: {label}")
