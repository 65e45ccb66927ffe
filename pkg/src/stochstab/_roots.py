"""Bisection on monotone brackets (vectorized and scalar)."""

import numpy as np

XTOL = 1e-13


def bisect_monotone(func, lo, hi, target, xtol=XTOL, maxiter=200):
    """Solve ``func(x) == target`` on ``[lo, hi]`` elementwise.

    ``func`` must accept arrays and be monotone on every bracket.  When the
    target lies outside ``func``'s range on a bracket the result is clipped to
    the endpoint whose value is closest to the target.
    """
    lo, hi, target = np.broadcast_arrays(
        np.asarray(lo, dtype=float), np.asarray(hi, dtype=float),
        np.asarray(target, dtype=float))
    lo0, hi0 = lo, hi
    lo = lo.copy()
    hi = hi.copy()
    flo = func(lo) - target
    fhi = func(hi) - target
    increasing = fhi >= flo
    for _ in range(maxiter):
        if np.all(hi - lo <= xtol):
            break
        mid = 0.5 * (lo + hi)
        fm = func(mid) - target
        go_right = np.where(increasing, fm < 0, fm > 0)
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    out = 0.5 * (lo + hi)
    # unattained targets: clip to the bracket end
    past_lo = np.where(increasing, flo >= 0, flo <= 0)
    short_hi = np.where(increasing, fhi <= 0, fhi >= 0)
    out = np.where(past_lo, lo0, out)
    out = np.where(short_hi & ~past_lo, hi0, out)
    return out


def bisect_scalar(func, lo, hi, target, xtol=XTOL, maxiter=200):
    """Scalar version of :func:`bisect_monotone`; raises if not bracketed."""
    flo = func(lo) - target
    fhi = func(hi) - target
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise ValueError("target not bracketed")
    increasing = fhi > flo
    for _ in range(maxiter):
        if hi - lo <= xtol:
            break
        mid = 0.5 * (lo + hi)
        fm = func(mid) - target
        if fm == 0.0:
            return mid
        if (fm < 0) == increasing:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
