"""Finite-difference gradient verification.

The oracle is independent of the tape: it only re-evaluates the primal
loss at perturbed parameter values and forms central differences. All
stochastic draws must be frozen by the caller (the loss function closes
over a fixed noise record).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFrozenStochasticityError(RuntimeError):
    """Two primal evaluations at the same point disagreed."""


@dataclass
class FiniteDiffResult:
    param_name: str
    max_rel_error: float
    n_checked: int
    n_kinks_excluded: int
    n_below_resolution: int = 0


def _rel_error(g_ad: float, g_fd: float) -> float:
    return abs(g_ad - g_fd) / max(1e-8, abs(g_ad) + abs(g_fd))


def finite_diff_check(param_name, params, grads, loss_fn, step=1e-5,
                      max_coords=32, rng=None) -> FiniteDiffResult:
    """Compare an autodiff gradient against central finite differences.

    params: dict of parameter arrays, mutated in place during probing and
        restored afterwards. loss_fn() -> float re-evaluates the frozen
        primal. grads: autodiff GradStore for the same loss.

    Kink handling: at a non-smooth point the forward and backward
    one-sided differences disagree by the slope jump, and that gap does
    not shrink when the step is halved (for a smooth function it shrinks
    linearly). Such coordinates are flagged and excluded, as are
    coordinates whose derivative is below the cancellation noise floor of
    the difference quotient itself.
    """
    p = params[param_name]
    g_ad = grads[param_name]
    f0 = float(loss_fn())
    if float(loss_fn()) != f0:
        raise NonFrozenStochasticityError(
            "primal loss is not deterministic; freeze all noise before checking")

    flat = p.reshape(-1)
    n = flat.size
    if n <= max_coords:
        coords = np.arange(n)
    else:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(n, size=max_coords, replace=False)

    g_flat = g_ad.reshape(-1)
    # cancellation noise of (f(x+h)-f(x-h))/2h at the parameter's precision
    eps = np.finfo(p.dtype if p.dtype.kind == "f" else np.float64).eps
    noise_floor = 32.0 * eps * max(abs(f0), 1.0) / step
    max_err = 0.0
    kinks = 0
    checked = 0
    unresolved = 0
    for idx in coords:
        orig = flat[idx]
        central = []
        onesided_gap = []
        for h in (step, step / 2.0):
            flat[idx] = orig + h
            f_plus = float(loss_fn())
            flat[idx] = orig - h
            f_minus = float(loss_fn())
            central.append((f_plus - f_minus) / (2.0 * h))
            onesided_gap.append(abs((f_plus - f0) / h - (f0 - f_minus) / h))
        flat[idx] = orig
        d1, d2 = central
        g1, g2 = onesided_gap
        scale = max(abs(d1), abs(d2), 1e-6)
        if max(abs(d2), abs(float(g_flat[idx]))) < noise_floor:
            unresolved += 1  # derivative below finite-difference resolution
            continue
        if g1 > 0.05 * scale and g2 > 0.6 * g1:
            kinks += 1  # slope jump that does not shrink with h: kink
            continue
        if abs(d1 - d2) > 0.05 * scale:
            kinks += 1  # inconsistent central differences
            continue
        checked += 1
        if abs(float(g_flat[idx]) - d2) <= noise_floor:
            continue  # agreement to within the difference quotient's resolution
        max_err = max(max_err, _rel_error(float(g_flat[idx]), d2))
    return FiniteDiffResult(param_name, max_err, checked, kinks, unresolved)
