"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from ..errors import GradCheckError


def numerical_gradient(f, x, h=1e-5, indices=None):
    """Central differences of the scalar ``f()`` w.r.t. entries of ``x``.

    ``x`` is perturbed in place and restored. ``indices`` selects flat
    positions; all of them by default.
    """
    flat = x.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def grad_check(f, inputs, grads, h=1e-5, max_coords=None, rng=None):
    """Max of ``|analytic - numeric| / max(1, |numeric|)`` over checked coordinates.

    Parameters
    ----------
    f : callable
        Zero-argument function returning a scalar; must read ``inputs`` live.
    inputs, grads : sequences of arrays
        Float64 arrays and their analytic gradients, in matching order.
    max_coords : int, optional
        Check a random subset of at most this many entries per input.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for x, g in zip(inputs, grads):
        if x.dtype != np.float64:
            raise GradCheckError("gradient checks must run in 64-bit mode")
        if g.shape != x.shape:
            raise GradCheckError(f"gradient shape {g.shape} != input shape {x.shape}")
        idx = np.arange(x.size)
        if max_coords is not None and x.size > max_coords:
            idx = rng.choice(x.size, size=max_coords, replace=False)
        num = numerical_gradient(f, x, h, idx)
        ana = g.reshape(-1)[idx]
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(ana))):
            raise GradCheckError("non-finite value encountered during gradient check")
        if idx.size:
            worst = max(worst, float(np.max(np.abs(ana - num) / np.maximum(1.0, np.abs(num)))))
    return worst


def grad_check_smooth(f, x, g, h=1e-5, n_coords=4, rng=None, kink_tol=1e-4, max_tries=64):
    """Like :func:`grad_check` on ``n_coords`` random entries of one array, but
    skips entries where a ReLU or max-pool switch lies within ``h``.

    Such an entry is detected by its central difference at ``h`` disagreeing
    with the one at ``h / 10`` by more than ``kink_tol`` (relative); on a smooth
    stretch the two agree to O(h^2). The error itself is always measured at
    ``h``. Returns ``(worst_error, n_skipped)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if x.dtype != np.float64:
        raise GradCheckError("gradient checks must run in 64-bit mode")
    flat, ana = x.reshape(-1), np.asarray(g).reshape(-1)
    want = min(n_coords, flat.size)
    worst, skipped, done = 0.0, 0, 0
    for i in rng.permutation(flat.size)[:max_tries]:
        if done == want:
            break
        num, fine = numerical_gradient(f, x, h, [i])[0], numerical_gradient(f, x, h / 10, [i])[0]
        if not np.isfinite([num, fine, ana[i]]).all():
            raise GradCheckError("non-finite value encountered during gradient check")
        if abs(num - fine) > kink_tol * max(1.0, abs(num)):
            skipped += 1
            continue
        worst = max(worst, abs(ana[i] - num) / max(1.0, abs(num)))
        done += 1
    if done < want:
        raise GradCheckError(f"only {done} kink-free coordinates found in {max_tries} tries")
    return worst, skipped
