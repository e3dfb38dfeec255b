"""Training loop, slice-averaged subject prediction, CV and metrics."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from . import graph_learn, stgc_net
from .autodiff import AdamState, adam_step, backward
from .autodiff.ops import _sigmoid as sigmoid_np
from .data import BoldSeries, enumerate_windows, sample_window, stratified_kfold
from .rng import substream

# Subject-level predictions average over this many binary graphs drawn from
# the learned keep-probabilities with frozen, seed-independent noise. The
# network is trained under sampled graphs, so evaluating it under the same
# distribution (Monte Carlo with fixed draws, hence deterministic) is
# consistent; graph_samples=0 falls back to the single thresholded graph,
# which at desk scale is typically empty and therefore uninformative.
EVAL_GRAPH_SEED = 0


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 16
    lr: float = 3e-4
    weight_decay: float = 1e-3
    window: int = 12
    sparsity_weight: float = 1e-4
    temperature: float = 0.2
    dropout: float = 0.5
    seed: int = 0
    patience: int = 100
    eval_stride: int = 1
    val_stride: int = 12  # coarser stride keeps per-epoch validation cheap
    eval_graph_samples: int = 4
    val_graph_samples: int = 1
    threshold_mode: str = "prevalence"  # "fixed", "holdout", or "prevalence"
    model_selection: str = "final"  # "final" or "best_val"
    val_every: int = 5  # validate every k-th epoch (plus first and last)
    channels: int = 64
    n_blocks: int = 3
    folds: int = 10
    validation_fraction: float = 0.1
    decoupled_weight_decay: bool = True
    threshold: float = 0.5

    def hyper(self, n_rois: int) -> stgc_net.ModelHyper:
        return stgc_net.ModelHyper(
            n_rois=n_rois, n_blocks=self.n_blocks, channels=self.channels,
            window=self.window, sparsity_weight=self.sparsity_weight,
            temperature=self.temperature, dropout=self.dropout)


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    train_bce: float
    train_sp: float
    val_acc: float
    val_loss: float


def predict_subject(model: stgc_net.StgcModel, series: BoldSeries,
                    window: int, stride: int = 1,
                    graph_samples: int = 4) -> float:
    """Slice-averaged subject probability.

    The sigmoid of every window logit is averaged over all windows and over
    ``graph_samples`` binary adjacencies sampled from the learned
    probabilities with frozen noise (deterministic across calls). With
    graph_samples=0 the single deterministic thresholded graph is used.
    """
    windows = enumerate_windows(series, window, stride)
    batch = np.stack(windows)[:, None, :, :]  # (n_windows, 1, N, T)
    if graph_samples <= 0:
        logits = stgc_net.predict_logits(model, batch)
        return float(np.mean(sigmoid_np(logits)))
    probs = []
    for draw in range(graph_samples):
        gumbel = graph_learn.draw_gumbel_pair(
            series.n_rois, substream(EVAL_GRAPH_SEED, "evalgraph", draw))
        noise = stgc_net.NoiseRecord(gumbel=gumbel, dropout_masks=None)
        # train-mode forward with no dropout masks: sampled graph, no noise
        logits, _ = stgc_net.forward(model, batch, mode="train", noise=noise)
        probs.append(sigmoid_np(logits.value))
    return float(np.mean(probs))


def calibrate_threshold(probabilities: Sequence[float],
                        labels: Sequence[int]) -> float:
    """Decision threshold maximizing accuracy on a labeled holdout.

    Candidates are midpoints between adjacent sorted probabilities plus the
    default 0.5; ties prefer the candidate closest to 0.5 (then the lower
    one), so a well-calibrated model keeps its natural threshold.
    """
    probs = np.asarray(probabilities, dtype=float)
    labels = np.asarray(labels, dtype=int)
    order = np.argsort(probs)
    sorted_p = probs[order]
    candidates = [0.5]
    candidates += [float((a + b) / 2.0) for a, b in zip(sorted_p, sorted_p[1:])]
    candidates += [float(sorted_p[0] - 1e-6), float(sorted_p[-1] + 1e-6)]
    best = None
    for cand in candidates:
        acc = float(np.mean((probs > cand).astype(int) == labels))
        key = (acc, -abs(cand - 0.5), -cand)
        if best is None or key > best[0]:
            best = (key, cand)
    return best[1]


def prevalence_threshold(probabilities: Sequence[float],
                         negative_fraction: float) -> float:
    """Quantile-matched decision threshold for a cohort of known prevalence.

    Places the threshold so that the fraction of the cohort predicted
    negative equals ``negative_fraction`` (estimated from training labels).
    Uses only the cohort's unlabeled probabilities; subject probabilities
    cluster tightly around 0.5, where a small cohort-level offset would
    otherwise dominate any absolute threshold.
    """
    probs = np.sort(np.asarray(probabilities, dtype=float))
    n = len(probs)
    if n == 0:
        raise ValueError("need at least one probability")
    k = int(round(negative_fraction * n))
    if k <= 0:
        return float(probs[0] - 1e-6)
    if k >= n:
        return float(probs[-1] + 1e-6)
    return float((probs[k - 1] + probs[k]) / 2.0)


def _validate(model, subjects: Sequence[BoldSeries], window: int,
              stride: int, threshold: float,
              graph_samples: int = 1) -> Tuple[float, Optional[float], float]:
    probs = np.array([predict_subject(model, s, window, stride, graph_samples)
                      for s in subjects])
    labels = np.array([s.label for s in subjects], dtype=float)
    acc = float(np.mean((probs > threshold).astype(float) == labels))
    auc = compute_metrics(probs, labels.astype(int), threshold)["AUC"]
    p = np.clip(probs, 1e-12, 1 - 1e-12)
    val_loss = float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))
    return acc, auc, val_loss


def train(config: TrainConfig, train_subjects: Sequence[BoldSeries],
          val_subjects: Sequence[BoldSeries], seed: Optional[int] = None
          ) -> Tuple[stgc_net.StgcModel, List[HistoryRow]]:
    """Mini-batch training with one fresh random window per subject per
    iteration and one fresh adjacency sample per forward pass.

    Checkpoint choice follows ``config.model_selection``: "final" returns the
    model at the last completed epoch (validation drives only early
    stopping), while "best_val" returns the checkpoint with the best
    validation ranking (AUC, then accuracy, then lower loss). Small
    validation splits rank checkpoints too noisily for "best_val" to be a
    good default."""
    if not train_subjects or not val_subjects:
        raise ValueError("train and validation splits must be non-empty")
    if config.model_selection not in ("final", "best_val"):
        raise ValueError(
            f"unknown model_selection: {config.model_selection!r}")
    if config.val_every < 1:
        raise ValueError("val_every must be >= 1")
    seed = config.seed if seed is None else seed
    n_rois = train_subjects[0].n_rois
    model = stgc_net.init_model(n_rois, seed=seed, hyper=config.hyper(n_rois))
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay,
                      decoupled=config.decoupled_weight_decay)

    window_rng = substream(seed, "windows")
    gumbel_rng = substream(seed, "gumbel")
    dropout_rng = substream(seed, "dropout")

    history: List[HistoryRow] = []
    best = None  # (acc, -val_loss, -epoch) maximized
    best_model = model.copy()
    since_best = 0

    for epoch in range(1, config.epochs + 1):
        order = np.arange(len(train_subjects))
        substream(seed, "shuffle", index=epoch).shuffle(order)
        losses, bces, sps = [], [], []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = np.stack([
                sample_window(train_subjects[i], config.window, window_rng)
                for i in idx])[:, None, :, :]
            labels = np.array([train_subjects[i].label for i in idx], dtype=float)
            noise = stgc_net.draw_noise(model, len(idx), config.window,
                                        gumbel_rng, dropout_rng)
            tape, total, bce, sp, _ = stgc_net.evaluate_loss(
                model, batch, labels, mode="train", noise=noise)
            if not np.isfinite(total.value):
                raise TrainingDivergedError(
                    f"loss is not finite at epoch {epoch}")
            grads = backward(tape, total)
            adam_step(model.params, grads, state)
            losses.append(float(total.value))
            bces.append(float(bce.value))
            sps.append(float(sp.value))

        validated = (epoch == 1 or epoch == config.epochs
                     or epoch % config.val_every == 0)
        if validated:
            val_acc, val_auc, val_loss = _validate(
                model, val_subjects, config.window, config.val_stride,
                config.threshold, config.val_graph_samples)
        history.append(HistoryRow(epoch, float(np.mean(losses)),
                                  float(np.mean(bces)), float(np.mean(sps)),
                                  val_acc, val_loss))
        if not validated:
            continue
        key = (val_auc if val_auc is not None else val_acc, val_acc, -val_loss)
        if best is None or key > best:
            best = key
            best_model = model.copy()
            since_best = 0
        else:
            if key == best:
                # same validation score: keep the more-trained checkpoint
                best_model = model.copy()
            since_best += 1
            if since_best >= config.patience:
                break
    if config.model_selection == "final":
        return model, history
    return best_model, history


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsReport:
    per_fold: List[Dict[str, Optional[float]]]
    mean: Dict[str, Optional[float]] = field(default_factory=dict)
    std: Dict[str, Optional[float]] = field(default_factory=dict)

    def summarize(self) -> None:
        keys = ["ACC", "AUC", "SEN", "SPE"]
        for key in keys:
            vals = [f[key] for f in self.per_fold if f.get(key) is not None]
            self.mean[key] = float(np.mean(vals)) if vals else None
            self.std[key] = float(np.std(vals)) if vals else None

    def format_row(self, key: str) -> str:
        # mirrors the "92.2 ± 2.3" percent presentation
        if self.mean.get(key) is None:
            return f"{key}: n/a"
        return f"{key}: {100 * self.mean[key]:.1f} ± {100 * self.std[key]:.1f}"


def compute_metrics(probabilities: Sequence[float], labels: Sequence[int],
                    threshold: float = 0.5) -> Dict[str, Optional[float]]:
    """ACC/SEN/SPE from the thresholded confusion matrix (class 1 = EMCI
    positive), AUC by the Mann-Whitney rank statistic with ties counted half."""
    probs = np.asarray(probabilities, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if probs.shape != labels.shape:
        raise ValueError("probabilities and labels must have equal length")
    pred = (probs > threshold).astype(int)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    tn = int(np.sum((pred == 0) & (labels == 0)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    n_pos, n_neg = tp + fn, tn + fp
    acc = (tp + tn) / len(labels)
    sen = tp / n_pos if n_pos else None
    spe = tn / n_neg if n_neg else None
    if n_pos and n_neg:
        ranks = rankdata(probs)  # average ranks: ties count half
        auc = (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
        auc = float(auc)
    else:
        auc = None
    return {"ACC": float(acc), "AUC": auc,
            "SEN": float(sen) if sen is not None else None,
            "SPE": float(spe) if spe is not None else None}


# ---------------------------------------------------------------------------
# cross-validation

def _run_fold(args) -> Tuple[Dict[str, Optional[float]], stgc_net.StgcModel,
                             List[HistoryRow]]:
    config, dataset, fold, fold_seed = args
    train_set = [dataset[i] for i in fold["train"]]
    val_set = [dataset[i] for i in fold["val"]]
    test_set = [dataset[i] for i in fold["test"]]
    test_ids = {s.subject_id for s in test_set}
    leak = test_ids & {s.subject_id for s in train_set + val_set}
    if leak:
        raise RuntimeError(f"test subjects leaked into training: {sorted(leak)}")
    model, history = train(config, train_set, val_set, seed=fold_seed)
    probs = [predict_subject(model, s, config.window, config.eval_stride,
                             config.eval_graph_samples)
             for s in test_set]
    labels = [s.label for s in test_set]
    threshold = config.threshold
    if config.threshold_mode == "holdout":
        # calibrate on every non-test subject: the validation split alone is
        # too small to place a stable decision threshold
        calib_set = list(train_set) + list(val_set)
        calib_probs = [predict_subject(model, s, config.window,
                                       config.val_stride,
                                       config.eval_graph_samples)
                       for s in calib_set]
        threshold = calibrate_threshold(calib_probs,
                                        [s.label for s in calib_set])
    elif config.threshold_mode == "prevalence":
        neg = np.mean([s.label == 0 for s in train_set + val_set])
        threshold = prevalence_threshold(probs, float(neg))
    elif config.threshold_mode != "fixed":
        raise ValueError(f"unknown threshold_mode: {config.threshold_mode!r}")
    return compute_metrics(probs, labels, threshold), model, history


def crossval(config: TrainConfig, dataset: Sequence[BoldSeries], jobs: int = 1
             ) -> Tuple[MetricsReport, List[stgc_net.StgcModel],
                        List[List[HistoryRow]]]:
    labels = [s.label for s in dataset]
    plan = stratified_kfold(labels, config.folds, config.validation_fraction,
                            seed=config.seed)
    tasks = [(config, list(dataset), fold, config.seed * 10007 + f)
             for f, fold in enumerate(plan.folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    report = MetricsReport(per_fold=[r[0] for r in results])
    report.summarize()
    models = [r[1] for r in results]
    histories = [r[2] for r in results]
    return report, models, histories


# ---------------------------------------------------------------------------
# result files

def write_metrics(report: MetricsReport, config: TrainConfig, path: str,
                  version: str) -> None:
    payload = {
        "per_fold": report.per_fold,
        "mean": report.mean,
        "std": report.std,
        "config": asdict(config),
        "seed": config.seed,
        "version": version,
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def write_history(history: List[HistoryRow], path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_bce", "train_sp",
                         "val_acc", "val_loss"])
        for row in history:
            writer.writerow([row.epoch, row.train_loss, row.train_bce,
                             row.train_sp, row.val_acc, row.val_loss])
    os.replace(tmp, path)
