"""Spatio-temporal graph convolution with self-learned sparse structure."""

__version__ = "0.1.0"

from .data import (BoldSeries, FoldPlan, SynthSpec, SynthResult, DataError,
                   enumerate_windows, load_dataset, sample_window,
                   stratified_kfold, synth_generate, write_dataset, zscore_rows)
from .estimator import StgcClassifier
from .graph_learn import (GraphParams, expand_symmetric, gumbel_binarize,
                          sparsify, sparsity_loss, theta_index, theta_length)
from .interpret import SalienceReport, salience_scores, top_fraction
from .stgc_net import (ModelHyper, StgcModel, forward, init_model,
                       load_checkpoint, save_checkpoint)
from .train_eval import (MetricsReport, TrainConfig, compute_metrics, crossval,
                         predict_subject, train)

__all__ = [
    "__version__", "BoldSeries", "FoldPlan", "SynthSpec", "SynthResult",
    "DataError", "enumerate_windows", "load_dataset", "sample_window",
    "stratified_kfold", "synth_generate", "write_dataset", "zscore_rows",
    "StgcClassifier", "GraphParams", "expand_symmetric", "gumbel_binarize",
    "sparsify", "sparsity_loss", "theta_index", "theta_length",
    "SalienceReport", "salience_scores", "top_fraction", "ModelHyper",
    "StgcModel", "forward", "init_model", "load_checkpoint",
    "save_checkpoint", "MetricsReport", "TrainConfig", "compute_metrics",
    "crossval", "predict_subject", "train",
]
