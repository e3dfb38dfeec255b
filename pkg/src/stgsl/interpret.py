"""Salience scoring of graph nodes from the learned structure and weights.

Per block, the eval-mode binary adjacency is reweighted by the rectified
block weight matrix and Min-Max scaled; the scaled matrices are summed
over blocks, collapsed per ROI (incoming/column sums by default), and the
resulting vector is Min-Max scaled into [0, 1].
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import graph_learn
from .autodiff import Tensor
from .stgc_net import StgcModel


@dataclass
class SalienceReport:
    scores: np.ndarray                       # (N,), in [0, 1]
    ranking: List[Tuple[int, str, float]]    # (0-based index, name, score), descending
    layer_matrices: List[np.ndarray]         # Min-Max scaled per-block matrices
    degenerate: bool = False                 # all-equal inputs collapsed to zeros


def minmax_scale(values: np.ndarray) -> np.ndarray:
    """Scale into [0,1]; a constant array maps to all zeros."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def aal116_names() -> List[str]:
    with resources.files("stgsl").joinpath("aal116.csv").open() as fh:
        rows = list(csv.reader(fh))
    return [name for _, name in rows]


def default_roi_names(n: int) -> List[str]:
    if n == 116:
        return aal116_names()
    return [f"ROI{i + 1}" for i in range(n)]


def salience_scores(model: StgcModel, roi_names: Optional[Sequence[str]] = None,
                    sum_rows: bool = False) -> SalienceReport:
    """Score every ROI from the deterministic eval-mode structure."""
    h = model.hyper
    a_full = graph_learn.expand_symmetric(Tensor(model.params["theta"]), h.n_rois)
    prob = graph_learn.sparsify(a_full, Tensor(model.params["alpha"])).value
    binary = (prob > 0.5).astype(float)

    layer_matrices = []
    total = np.zeros((h.n_rois, h.n_rois))
    for l in range(h.n_blocks):
        effective = binary * np.maximum(model.params[f"M.{l}"], 0.0)
        scaled = minmax_scale(effective)
        layer_matrices.append(scaled)
        total += scaled
    collapsed = total.sum(axis=1) if sum_rows else total.sum(axis=0)
    degenerate = bool(collapsed.max() == collapsed.min())
    scores = minmax_scale(collapsed)

    names = list(roi_names) if roi_names is not None else default_roi_names(h.n_rois)
    if len(names) != h.n_rois:
        raise ValueError(f"expected {h.n_rois} ROI names, got {len(names)}")
    order = sorted(range(h.n_rois), key=lambda i: (-scores[i], i))
    ranking = [(i, names[i], float(scores[i])) for i in order]
    return SalienceReport(scores=scores, ranking=ranking,
                          layer_matrices=layer_matrices, degenerate=degenerate)


def top_fraction(report: SalienceReport, fraction: float = 0.10,
                 roi_names: Optional[Sequence[str]] = None
                 ) -> List[Tuple[int, str, float]]:
    """Highest-scoring ceil(fraction * N) ROIs."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(report.scores)
    if roi_names is not None:
        if len(roi_names) != n:
            raise ValueError(f"expected {n} ROI names, got {len(roi_names)}")
        ranked = [(i, roi_names[i], score) for i, _, score in report.ranking]
    else:
        ranked = report.ranking
    return ranked[:math.ceil(fraction * n)]


def write_salience(report: SalienceReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    js = os.path.join(out_dir, "salience.json")
    tmp = js + ".tmp"
    with open(tmp, "w") as fh:
        json.dump({
            "scores": report.scores.tolist(),
            "ranking": [{"roi_index": i + 1, "roi_name": name, "score": score}
                        for i, name, score in report.ranking],
            "degenerate": report.degenerate,
        }, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, js)

    cs = os.path.join(out_dir, "salience.csv")
    tmp = cs + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["roi_name", "roi_index", "score"])
        for i, name, score in report.ranking:
            writer.writerow([name, i + 1, f"{score:.3f}"])
    os.replace(tmp, cs)

    for l, mat in enumerate(report.layer_matrices):
        path = os.path.join(out_dir, f"layer_weights_{l}.csv")
        np.savetxt(path + ".tmp", mat, delimiter=",", fmt="%.10g")
        os.replace(path + ".tmp", path)
