"""End-to-end gradient verification on a small toy model.

The primal used for finite differences runs the binarization in its soft
(relaxed) form, which is exactly the function whose Jacobian the
straight-through backward pass propagates; the hard forward is piecewise
constant and carries no finite-difference signal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from . import stgc_net
from .autodiff import backward, finite_diff_check
from .autodiff.check import FiniteDiffResult
from .rng import substream

TOL_DOUBLE = 1e-4
TOL_SINGLE = 1e-2  # looser contract for float32
STEP_DOUBLE = 1e-5
STEP_SINGLE = 1e-3


@dataclass
class GradcheckReport:
    results: List[FiniteDiffResult]
    tolerance: float
    passed: bool


def build_toy(seed: int = 0, n_rois: int = 6, window: int = 6,
              batch: int = 2, channels: int = 8, dropout: float = 0.5):
    hyper = stgc_net.ModelHyper(n_rois=n_rois, channels=channels,
                                window=window, dropout=dropout)
    model = stgc_net.init_model(n_rois, seed=seed, hyper=hyper)
    data_rng = substream(seed, "windows")
    batch_values = data_rng.normal(size=(batch, 1, n_rois, window))
    labels = data_rng.integers(0, 2, size=batch).astype(float)
    noise = stgc_net.draw_noise(model, batch, window,
                                substream(seed, "gumbel"),
                                substream(seed, "dropout"))
    return model, batch_values, labels, noise


def run_gradcheck(seed: int = 0, precision: str = "double",
                  break_st: bool = False, max_coords: int = 32,
                  verbose_print=None) -> GradcheckReport:
    model, batch_values, labels, noise = build_toy(seed=seed)
    if precision == "single":
        model = model.astype(np.float32)
        batch_values = batch_values.astype(np.float32)
        noise = stgc_net.NoiseRecord(
            gumbel=tuple(g.astype(np.float32) for g in noise.gumbel),
            dropout_masks=[m.astype(np.float32) for m in noise.dropout_masks])
        tol, step = TOL_SINGLE, STEP_SINGLE
    elif precision == "double":
        tol, step = TOL_DOUBLE, STEP_DOUBLE
    else:
        raise ValueError(f"unknown precision '{precision}'")

    def loss_fn():
        _, total, _, _, _ = stgc_net.evaluate_loss(
            model, batch_values, labels, mode="train", noise=noise,
            hard=False, break_st=break_st)
        return float(total.value)

    tape, total, _, _, _ = stgc_net.evaluate_loss(
        model, batch_values, labels, mode="train", noise=noise,
        hard=False, break_st=break_st)
    grads = backward(tape, total)

    results = []
    coord_rng = substream(seed, "fdcheck")
    for name in model.param_names():
        if name not in grads:
            grads[name] = np.zeros_like(model.params[name])
        res = finite_diff_check(name, model.params, grads, loss_fn,
                                step=step, max_coords=max_coords, rng=coord_rng)
        results.append(res)
        if verbose_print:
            status = "ok" if res.max_rel_error <= tol else "FAIL"
            verbose_print(f"{res.param_name:24s} max_rel_err={res.max_rel_error:.3e} "
                          f"checked={res.n_checked} kinks={res.n_kinks_excluded} {status}")
    passed = all(r.max_rel_error <= tol for r in results)
    return GradcheckReport(results=results, tolerance=tol, passed=passed)
