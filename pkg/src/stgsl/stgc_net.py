"""Spatio-temporal graph convolutional network.

One block = degree-normalized spatial graph convolution over the sampled
binary adjacency (reweighted per block), followed by a four-branch 1-D
temporal inception module and dropout. Blocks are stacked, features are
mean-pooled over nodes and time, and a linear head emits one logit per
window.
"""
from __future__ import annotations

import io
import json
import os
import zipfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import graph_learn
from .autodiff import Tape, Tensor, backward, leaf, ops
from .rng import substream

CHECKPOINT_FORMAT_VERSION = 1
DEGREE_EPS = 1e-6  # keeps isolated nodes invertible in D^{-1/2}

# (branch, [(kernel, takes_block_input)]): a = pointwise; b/c = pointwise
# then k3/k5; d = maxpool(3) then pointwise
BRANCHES: List[Tuple[str, List[int]]] = [
    ("a", [1]),
    ("b", [1, 3]),
    ("c", [1, 5]),
    ("d", [1]),  # preceded by max pooling
]


@dataclass
class ModelHyper:
    n_rois: int
    n_blocks: int = 3
    channels: int = 64
    window: int = 12
    sparsity_weight: float = 1e-4
    temperature: float = 0.2
    dropout: float = 0.5


@dataclass
class StgcModel:
    hyper: ModelHyper
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def param_names(self) -> List[str]:
        return list(self.params)

    def copy(self) -> "StgcModel":
        return StgcModel(self.hyper, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "StgcModel":
        return StgcModel(self.hyper,
                         {k: v.astype(dtype) for k, v in self.params.items()})


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_model(n_rois: int, seed: int = 0, hyper: Optional[ModelHyper] = None) -> StgcModel:
    hyper = hyper or ModelHyper(n_rois=n_rois)
    if hyper.channels % 4 != 0:
        raise ValueError("channel width must be divisible by 4")
    rng = substream(seed, "init")
    n, h2, width = n_rois, hyper.channels, hyper.channels // 4
    params: Dict[str, np.ndarray] = {}

    graph = graph_learn.init_graph_params(n, hyper.n_blocks, rng)
    params["theta"] = graph.theta
    params["alpha"] = graph.alpha
    for l in range(hyper.n_blocks):
        params[f"M.{l}"] = graph.per_layer_weights[l]

    for l in range(hyper.n_blocks):
        h1 = 1 if l == 0 else h2
        params[f"W.{l}"] = _glorot(rng, (h1, h2), h1, h2)
        for branch, kernels in BRANCHES:
            cin = h2
            for k_idx, ksize in enumerate(kernels):
                cout = width
                params[f"incep.{l}.{branch}.{k_idx}.w"] = _glorot(
                    rng, (cout, cin, ksize), cin * ksize, cout * ksize)
                params[f"incep.{l}.{branch}.{k_idx}.b"] = np.zeros(cout)
                cin = cout
    params["head.w"] = _glorot(rng, (h2, 1), h2, 1)
    params["head.b"] = np.zeros(1)
    return StgcModel(hyper, params)


@dataclass
class NoiseRecord:
    """Frozen stochastic draws for one forward pass."""
    gumbel: Optional[Tuple[np.ndarray, np.ndarray]] = None
    dropout_masks: Optional[List[np.ndarray]] = None


def draw_noise(model: StgcModel, batch_size: int, n_timepoints: int,
               gumbel_rng: np.random.Generator,
               dropout_rng: np.random.Generator) -> NoiseRecord:
    h = model.hyper
    gumbel = graph_learn.draw_gumbel_pair(h.n_rois, gumbel_rng)
    masks = []
    for _ in range(h.n_blocks):
        if h.dropout > 0:
            keep = (dropout_rng.random((batch_size, h.channels, h.n_rois,
                                        n_timepoints)) >= h.dropout)
            masks.append(keep.astype(float) / (1.0 - h.dropout))
        else:
            masks.append(None)
    return NoiseRecord(gumbel=gumbel, dropout_masks=masks)


# ---------------------------------------------------------------------------
# network pieces

def normalized_adjacency(adj_sample, layer_weight):
    """D^{-1/2} (A * ReLU(M)) D^{-1/2} with the degree taken from the
    weighted effective matrix."""
    effective = ops.mul(adj_sample, ops.relu(layer_weight))
    n = effective.shape[0]
    degree = ops.sum(effective, axis=1) + DEGREE_EPS
    inv_sqrt = ops.power(degree, -0.5)
    row = ops.reshape(inv_sqrt, (n, 1))
    col = ops.reshape(inv_sqrt, (1, n))
    return ops.mul(ops.mul(row, effective), col)


def spatial_conv(x, a_norm, weight):
    """Node mixing by a_norm then channel mixing by weight, per time point.

    x: (B, H1, N, T) -> (B, H2, N, T).
    """
    mixed = ops.einsum("nm,bhmt->bhnt", a_norm, x)
    return ops.einsum("hk,bhnt->bknt", weight, mixed)


def temporal_inception(x, params_t: Dict[str, Tensor], block: int):
    """Four parallel 1-D branches per ROI, concatenated then ReLU."""
    outs = []
    for branch, kernels in BRANCHES:
        h = ops.maxpool1d_same(x, 3) if branch == "d" else x
        for k_idx in range(len(kernels)):
            h = ops.conv1d_same(h,
                                params_t[f"incep.{block}.{branch}.{k_idx}.w"],
                                params_t[f"incep.{block}.{branch}.{k_idx}.b"])
        outs.append(h)
    return ops.relu(ops.concat(outs, axis=1))


def stgc_block(x, adj_sample, params_t, block: int, mode: str,
               dropout_mask: Optional[np.ndarray]):
    a_norm = normalized_adjacency(adj_sample, params_t[f"M.{block}"])
    h = spatial_conv(x, a_norm, params_t[f"W.{block}"])
    h = temporal_inception(h, params_t, block)
    if mode == "train" and dropout_mask is not None:
        h = ops.mul(h, Tensor(dropout_mask))
    return h


def wrap_params(model: StgcModel) -> Dict[str, Tensor]:
    return {name: leaf(value, name=name) for name, value in model.params.items()}


def forward(model: StgcModel, batch_values: np.ndarray, mode: str = "eval",
            noise: Optional[NoiseRecord] = None,
            params_t: Optional[Dict[str, Tensor]] = None,
            hard: bool = True, break_st: bool = False):
    """Run the network on a (B, 1, N, T) batch; returns (logits, aux).

    One adjacency sample is drawn per call and shared by every block and
    every batch element. Must run under an active Tape when gradients are
    wanted.
    """
    batch_values = np.asarray(batch_values)
    if batch_values.ndim != 4 or batch_values.shape[1] != 1:
        raise ValueError(f"expected (B, 1, N, T) input, got {batch_values.shape}")
    h = model.hyper
    if batch_values.shape[3] < 5:
        raise ValueError("window too short for the largest inception kernel")
    params_t = params_t or wrap_params(model)

    a_full = graph_learn.expand_symmetric(params_t["theta"], h.n_rois)
    prob = graph_learn.sparsify(a_full, params_t["alpha"])
    if mode == "eval":
        adj_sample = graph_learn.gumbel_binarize(prob, h.temperature, mode="eval")
    else:
        if noise is None or noise.gumbel is None:
            raise ValueError("train-mode forward needs a NoiseRecord with gumbel draws")
        adj_sample = graph_learn.gumbel_binarize(
            prob, h.temperature, mode="train", noise=noise.gumbel,
            hard=hard, break_st=break_st)

    x = Tensor(batch_values)
    for l in range(h.n_blocks):
        mask = None
        if mode == "train" and noise is not None and noise.dropout_masks is not None:
            mask = noise.dropout_masks[l]
        x = stgc_block(x, adj_sample, params_t, l, mode, mask)
    pooled = ops.mean(x, axis=(2, 3))  # (B, H2)
    logits2d = ops.add(ops.matmul(pooled, params_t["head.w"]),
                       params_t["head.b"])
    logits = ops.reshape(logits2d, (batch_values.shape[0],))
    aux = {"prob": prob, "adj_sample": adj_sample, "params_t": params_t}
    return logits, aux


def loss(logits, labels: np.ndarray, theta, sparsity_weight: float):
    """Mean BCE on logits (log-sum-exp form) plus the sparsity penalty."""
    labels = np.asarray(labels, dtype=float)
    bce = ops.mean(ops.softplus(logits) - ops.mul(logits, Tensor(labels)))
    sp = graph_learn.sparsity_loss(theta)
    return ops.add(bce, ops.mul(sp, sparsity_weight)), bce, sp


def evaluate_loss(model: StgcModel, batch_values, labels, mode: str = "train",
                  noise: Optional[NoiseRecord] = None, hard: bool = True,
                  break_st: bool = False):
    """Build one tape for forward + loss; returns (tape, total, bce, sp, aux)."""
    tape = Tape()
    with tape.active():
        params_t = wrap_params(model)
        logits, aux = forward(model, batch_values, mode=mode, noise=noise,
                              params_t=params_t, hard=hard, break_st=break_st)
        total, bce, sp = loss(logits, labels, params_t["theta"],
                              model.hyper.sparsity_weight)
    return tape, total, bce, sp, aux


def predict_logits(model: StgcModel, batch_values: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, batch_values, mode="eval")
    return logits.value


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(model: StgcModel, path: str) -> None:
    """Zip archive of little-endian float64 .npy arrays plus a JSON header."""
    h = model.hyper
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "n_rois": h.n_rois,
        "n_blocks": h.n_blocks,
        "channels": h.channels,
        "window": h.window,
        "sparsity_weight": h.sparsity_weight,
        "temperature": h.temperature,
        "dropout": h.dropout,
        "params": model.param_names(),
    }
    tmp = path + ".tmp"
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr("header.json", json.dumps(header, indent=1, sort_keys=True))
        for name, value in model.params.items():
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(value, dtype="<f8"))
            zf.writestr(name + ".npy", buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> StgcModel:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format: "
                             f"{header.get('format_version')}")
        hyper = ModelHyper(
            n_rois=header["n_rois"], n_blocks=header["n_blocks"],
            channels=header["channels"], window=header["window"],
            sparsity_weight=header["sparsity_weight"],
            temperature=header["temperature"], dropout=header["dropout"])
        params = {}
        for name in header["params"]:
            params[name] = np.load(io.BytesIO(zf.read(name + ".npy")))
    return StgcModel(hyper, params)


def export_adjacency(model: StgcModel, path: str) -> None:
    """Learned structure: keep-probabilities, eval-mode binary adjacency,
    and each block's rectified weight matrix."""
    h = model.hyper
    a_full = graph_learn.expand_symmetric(Tensor(model.params["theta"]), h.n_rois)
    prob = graph_learn.sparsify(a_full, Tensor(model.params["alpha"])).value
    binary = (prob > 0.5).astype(float)
    payload = {
        "n_rois": h.n_rois,
        "n_blocks": h.n_blocks,
        "probabilities": prob.tolist(),
        "binary_eval": binary.tolist(),
        "layer_weights": [np.maximum(model.params[f"M.{l}"], 0.0).tolist()
                          for l in range(h.n_blocks)],
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
