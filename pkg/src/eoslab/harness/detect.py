"""Detectors for Edge-of-Stability entry and period-2 oscillation."""

import numpy as np

__all__ = ["eos_mask", "detect_eos_entry", "detect_period2", "MIN_EOS_ROWS"]

MIN_EOS_ROWS = 20


def eos_mask(two_over_eff_lr, sharpness, rel_tol=0.05):
    a = np.asarray(two_over_eff_lr, dtype=float)
    lam = np.asarray(sharpness, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.abs(a - lam) <= rel_tol * lam


def detect_eos_entry(trace, rel_tol=0.05, min_rows=MIN_EOS_ROWS):
    """Step of the first row opening a run of ``min_rows`` consecutive
    measured rows with ``|2/eff_lr - sharpness| <= rel_tol * sharpness``.

    ``trace`` is a sequence of rows; rows without a sharpness measurement
    are skipped.  Returns ``None`` when no such window exists.
    """
    rows = [r for r in trace if r.sph_sharpness is not None and r.two_over_eff_lr is not None]
    if not rows:
        return None
    ok = eos_mask([r.two_over_eff_lr for r in rows], [r.sph_sharpness for r in rows], rel_tol)
    run = 0
    for i, flag in enumerate(ok):
        run = run + 1 if flag else 0
        if run >= min_rows:
            return rows[i - min_rows + 1].t
    return None


def detect_period2(trace_window):
    """Fraction of consecutive-step pairs ``(t, t+1)`` whose ``h`` flips sign.

    Accepts rows (pairs are formed only between rows exactly one step
    apart) or a plain array of ``h`` values, in which case every adjacent
    pair counts.  Returns ``None`` when there are no pairs.
    """
    if len(trace_window) == 0:
        return None
    first = trace_window[0]
    if hasattr(first, "h"):
        rows = [r for r in trace_window if r.h is not None]
        pairs = [(a.h, b.h) for a, b in zip(rows, rows[1:]) if b.t == a.t + 1]
    else:
        h = np.asarray(trace_window, dtype=float)
        pairs = list(zip(h[:-1], h[1:]))
    if not pairs:
        return None
    flips = sum(1 for a, b in pairs if a * b < 0)
    return flips / len(pairs)
