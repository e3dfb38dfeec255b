"""ROI time-series ingestion, windowing, synthesis and CV splitting.

File formats:
  manifest CSV with header ``subject_id,label,path`` (paths relative to
  the manifest's directory), one headerless CSV per subject with N rows
  (ROIs) by Z columns (time points).
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .rng import substream

DEFAULT_TIMEPOINTS = 140


class DataError(ValueError):
    pass


@dataclass
class BoldSeries:
    """One subject's ROI-by-time signal matrix."""
    subject_id: str
    label: int  # 0 = NC, 1 = EMCI
    values: np.ndarray  # (n_rois, n_timepoints)

    @property
    def n_rois(self) -> int:
        return self.values.shape[0]

    @property
    def n_timepoints(self) -> int:
        return self.values.shape[1]


def zscore_rows(values: np.ndarray) -> np.ndarray:
    """Per-row z-scores with population (1/Z) std.

    Zero-variance rows are centered but not divided, leaving all-zeros.
    """
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=1, keepdims=True)
    std = values.std(axis=1, keepdims=True)  # numpy default ddof=0
    centered = values - mean
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, centered / safe, centered)


def _read_series_csv(path: str) -> np.ndarray:
    try:
        values = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError as exc:
        raise DataError(f"non-numeric cell in series file {path}: {exc}") from exc
    return values


def load_dataset(manifest_path: str,
                 n_timepoints: int = DEFAULT_TIMEPOINTS) -> List[BoldSeries]:
    """Load a manifest of subjects; truncate to ``n_timepoints`` then z-score."""
    if not os.path.isfile(manifest_path):
        raise DataError(f"manifest not found: {manifest_path}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    out: List[BoldSeries] = []
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["subject_id", "label", "path"]:
            raise DataError(
                f"manifest header must be subject_id,label,path, got {reader.fieldnames}")
        for row in reader:
            path = row["path"]
            if not os.path.isabs(path):
                path = os.path.join(base, path)
            if not os.path.isfile(path):
                raise DataError(f"series file not found: {path}")
            label = int(row["label"])
            if label not in (0, 1):
                raise DataError(f"label must be 0 or 1, got {row['label']}")
            values = _read_series_csv(path)
            if values.shape[1] < n_timepoints:
                raise DataError(
                    f"series {row['subject_id']} has {values.shape[1]} time points, "
                    f"need >= {n_timepoints}")
            values = values[:, :n_timepoints]  # truncate first, then z-score
            out.append(BoldSeries(row["subject_id"], label, zscore_rows(values)))
    if not out:
        raise DataError("manifest is empty")
    n_rois = {s.n_rois for s in out}
    if len(n_rois) != 1:
        raise DataError(f"ROI-count mismatch across subjects: {sorted(n_rois)}")
    return out


def write_dataset(series: Sequence[BoldSeries], out_dir: str,
                  fmt: str = "%.17g") -> str:
    """Write subjects as per-subject CSVs plus a manifest; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.csv")
    tmp = manifest + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label", "path"])
        for s in series:
            fname = f"{s.subject_id}.csv"
            np.savetxt(os.path.join(out_dir, fname), s.values,
                       delimiter=",", fmt=fmt)
            writer.writerow([s.subject_id, s.label, fname])
    os.replace(tmp, manifest)
    return manifest


def sample_window(series: BoldSeries, window: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Uniform random contiguous slice of length ``window``."""
    z = series.n_timepoints
    if z < window:
        raise DataError(f"series length {z} shorter than window {window}")
    start = int(rng.integers(0, z - window + 1))
    return series.values[:, start:start + window]


def enumerate_windows(series: BoldSeries, window: int,
                      stride: int = 1) -> List[np.ndarray]:
    """All contiguous slices starting at 0, stride, 2*stride, ..."""
    if stride < 1:
        raise DataError("stride must be >= 1")
    z = series.n_timepoints
    if z < window:
        raise DataError(f"series length {z} shorter than window {window}")
    return [series.values[:, s:s + window]
            for s in range(0, z - window + 1, stride)]


# ---------------------------------------------------------------------------
# synthetic data with a planted graph

@dataclass
class SynthSpec:
    n_rois: int = 16
    n_timepoints: int = DEFAULT_TIMEPOINTS
    n_subjects_per_class: int = 40
    edge_density: float = 0.2     # Bernoulli rate for planted edges
    coupling: float = 0.9         # spectral scale of the propagation matrix
    noise_std: float = 0.1
    n_diff_edges: int = 8         # class-1 flips this many edges
    seed: int = 0
    burn_in: int = 20


@dataclass
class SynthResult:
    series: List[BoldSeries]
    adjacency_class0: np.ndarray  # binary symmetric, zero diagonal
    adjacency_class1: np.ndarray
    diff_edges: List[Tuple[int, int]]  # 0-based (i, j), i < j
    spec: SynthSpec


def _degree_normalize(adj: np.ndarray) -> np.ndarray:
    deg = adj.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-12)), 0.0)
    return inv_sqrt[:, None] * adj * inv_sqrt[None, :]


def synth_generate(spec: SynthSpec) -> SynthResult:
    """Linear autoregressive series driven by a planted symmetric graph.

    x_{t+1} = coupling * A_hat_class @ x_t + noise, with A_hat the
    degree-normalized planted adjacency. Class 1 differs from class 0 by
    flipping ``n_diff_edges`` uniformly chosen node pairs.
    """
    n = spec.n_rois
    if not 0.0 < spec.edge_density < 1.0:
        raise DataError("edge_density must be in (0,1)")
    if not 0.0 < spec.coupling < 1.0:
        raise DataError("coupling must be in (0,1)")
    rng = substream(spec.seed, "synth")

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    adj0 = np.zeros((n, n))
    for (i, j) in pairs:
        if rng.random() < spec.edge_density:
            adj0[i, j] = adj0[j, i] = 1.0
    if spec.n_diff_edges > len(pairs):
        raise DataError("n_diff_edges exceeds the number of node pairs")
    flip_idx = rng.choice(len(pairs), size=spec.n_diff_edges, replace=False)
    diff_edges = sorted(pairs[k] for k in flip_idx)
    adj1 = adj0.copy()
    for (i, j) in diff_edges:
        adj1[i, j] = adj1[j, i] = 1.0 - adj1[i, j]

    props = []
    for adj in (adj0, adj1):
        prop = spec.coupling * _degree_normalize(adj)
        radius = float(np.max(np.abs(np.linalg.eigvalsh(prop)))) if n else 0.0
        if radius >= 1.0:
            raise DataError(f"unstable propagation matrix (spectral radius {radius:.3f})")
        props.append(prop)

    series: List[BoldSeries] = []
    sid = 0
    for label, prop in enumerate(props):
        for _ in range(spec.n_subjects_per_class):
            sub_rng = substream(spec.seed, "synth", index=1 + sid)
            x = np.zeros(n)
            values = np.empty((n, spec.n_timepoints))
            for t in range(spec.burn_in + spec.n_timepoints):
                noise = (sub_rng.normal(0.0, spec.noise_std, size=n)
                         if spec.noise_std > 0 else np.zeros(n))
                x = prop @ x + noise
                if t >= spec.burn_in:
                    values[:, t - spec.burn_in] = x
            series.append(BoldSeries(f"synth{sid:04d}", label, values))
            sid += 1
    return SynthResult(series, adj0, adj1, list(diff_edges), spec)


def write_planted(result: SynthResult, out_dir: str) -> str:
    path = os.path.join(out_dir, "planted.json")
    payload = {
        "n_rois": result.spec.n_rois,
        "adjacency_class0": result.adjacency_class0.tolist(),
        "adjacency_class1": result.adjacency_class1.tolist(),
        "diff_edges": [list(e) for e in result.diff_edges],
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


# ---------------------------------------------------------------------------
# stratified k-fold with validation carve-out

@dataclass
class FoldPlan:
    n_folds: int
    folds: List[Dict[str, List[int]]] = field(default_factory=list)
    # each fold: {"train": [...], "val": [...], "test": [...]}


def stratified_kfold(labels: Sequence[int], k: int,
                     validation_fraction: float = 0.1,
                     seed: int = 0) -> FoldPlan:
    """Stratified test folds plus a stratified validation carve-out.

    Per class, subjects are shuffled and dealt round-robin into k test
    folds, so per-fold class counts are balanced within one subject.
    """
    labels = np.asarray(labels, dtype=int)
    rng = substream(seed, "folds")
    per_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    for c, idx in per_class.items():
        if len(idx) < k:
            raise DataError(f"class {c} has {len(idx)} members, fewer than k={k}")

    test_folds: List[List[int]] = [[] for _ in range(k)]
    for c in sorted(per_class):
        idx = per_class[c].copy()
        rng.shuffle(idx)
        for pos, subject in enumerate(idx):
            test_folds[pos % k].append(int(subject))

    plan = FoldPlan(n_folds=k)
    all_idx = set(range(len(labels)))
    for f in range(k):
        test = sorted(test_folds[f])
        pool = sorted(all_idx - set(test))
        # stratified validation carve-out from the training pool
        val: List[int] = []
        n_val = max(1, int(round(validation_fraction * len(pool))))
        by_class = {c: [i for i in pool if labels[i] == c] for c in sorted(per_class)}
        # proportional allocation, at least the rounded share per class
        remaining = n_val
        classes = sorted(by_class)
        for pos, c in enumerate(classes):
            share = (remaining if pos == len(classes) - 1
                     else int(round(n_val * len(by_class[c]) / len(pool))))
            share = min(share, remaining, len(by_class[c]))
            members = np.array(by_class[c])
            rng_f = substream(seed, "folds", index=1 + f * len(classes) + pos)
            chosen = rng_f.choice(members, size=share, replace=False)
            val.extend(int(i) for i in chosen)
            remaining -= share
        val = sorted(val)
        train = sorted(set(pool) - set(val))
        plan.folds.append({"train": train, "val": val, "test": test})
    return plan
