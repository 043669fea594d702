"""Stacked model, losses, optimizer, training loop, and checkpoints.

A model is a complex lift of the real input features, ``num_layers``
message-passing layers sharing one graph, and a real readout that
concatenates real and imaginary parts, layer-normalizes, applies dropout,
and classifies linearly.

The training objective per epoch is

    total = CE(clean pass) + lambda_js * JS(two edge-dropped passes)

where CE is the masked cross entropy of a pass over the intact graph
(feature dropout active) and JS is the Jensen-Shannon divergence between
the temperature-softened predictions of two passes over independently
edge-dropped graphs.  Parameters update with bias-corrected
adaptive-moment steps plus decoupled weight decay on the linear maps only
(lift, W/Q, classifier); transport phases, gate scalars, temperatures,
norm parameters, and biases are never decayed, so the decay cannot bias
edge transport toward the identity.

Parameters live in a flat ``{name: float64 array}`` dict ("lift.w",
"layers.{l}.theta", "layers.{l}.heads.{m}.w", ..., "readout.w"), which
keeps tape leaves, optimizer state, and checkpoints trivially aligned.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from . import autodiff as ad
from .graphs import ArcSet, Dataset, make_rng, sample_edge_drop_mask
from .layer import LayerConfig, complex_lift, init_layer_params, layer_forward

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "TrainingError",
    "CheckpointError",
    "init_model_params",
    "layer_params_view",
    "model_forward",
    "readout_logits",
    "layer_norm",
    "cross_entropy",
    "js_consistency",
    "total_loss",
    "evaluate",
    "accuracy_from_logits",
    "predict_logits",
    "train",
    "AdamState",
    "adam_init",
    "adam_step",
    "is_decayed",
    "save_checkpoint",
    "load_checkpoint",
]

LOG_FLOOR = 1e-300          # keeps p * log(p) finite when probabilities underflow
CHECKPOINT_MAGIC = b"GESC"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Training aborted; the message carries the epoch index."""


class CheckpointError(ValueError):
    """A checkpoint file failed validation."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and objective hyperparameters.

    ``in_dim`` and ``num_classes`` come from the dataset; everything else
    has library defaults.  ``ce_edge_drop`` optionally applies edge dropout
    to the cross-entropy pass as well (off by default: the clean-graph pass
    sees every edge).
    """

    in_dim: int
    num_classes: int
    dim: int = 64
    heads: int = 4
    num_layers: int = 2
    lambda_js: float = 0.5
    temperature: float = 1.0
    p_edge_drop: float = 0.2
    dropout: float = 0.5
    ce_edge_drop: bool = False
    eta_sic: float = 0.5
    epsilon: float = 1e-4
    norm_epsilon: float = 1e-6
    lambda_mix: float = 0.5
    attention_mode: str = "hybrid"
    kappa: float = 0.5
    delta: float = 1.0
    param_mode: str = "full"
    mode: str = "full"
    sic_position: str = "pre"
    sic_rank: int = 1

    def __post_init__(self) -> None:
        if self.in_dim < 1 or self.num_classes < 2 or self.num_layers < 1:
            raise ValueError("need in_dim >= 1, num_classes >= 2, num_layers >= 1")
        if self.lambda_js < 0:
            raise ValueError(f"lambda_js must be >= 0, got {self.lambda_js}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not (0.0 <= self.p_edge_drop < 1.0):
            raise ValueError(f"p_edge_drop must be in [0,1), got {self.p_edge_drop}")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must be in [0,1), got {self.dropout}")
        self.layer_config()  # validates the shared layer fields

    def layer_config(self) -> LayerConfig:
        return LayerConfig(
            dim=self.dim, heads=self.heads, eta_sic=self.eta_sic,
            epsilon=self.epsilon, norm_epsilon=self.norm_epsilon,
            lambda_mix=self.lambda_mix, attention_mode=self.attention_mode,
            kappa=self.kappa, delta=self.delta, param_mode=self.param_mode,
            mode=self.mode, sic_position=self.sic_position,
            sic_rank=self.sic_rank,
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings; ``lr = 0`` is allowed (frozen run)."""

    lr: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 100
    max_epochs: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0 or self.weight_decay < 0 or self.adam_eps <= 0:
            raise ValueError("lr/weight_decay must be >= 0 and adam_eps > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must be in [0,1)")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")


def init_model_params(
    cfg: ModelConfig, num_edges: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Fresh flat parameter dict for a model over a graph with ``num_edges``."""
    d = cfg.dim
    lift_bound = np.sqrt(3.0 / (2.0 * cfg.in_dim))
    params: dict[str, np.ndarray] = {
        "lift.w": rng.uniform(-lift_bound, lift_bound, size=(cfg.in_dim, d, 2)),
    }
    lcfg = cfg.layer_config()
    for layer in range(cfg.num_layers):
        for name, arr in init_layer_params(lcfg, num_edges, rng).items():
            params[f"layers.{layer}.{name}"] = arr
    cls_bound = np.sqrt(3.0 / (2.0 * d))
    params["readout.ln_scale"] = np.ones(2 * d)
    params["readout.ln_shift"] = np.zeros(2 * d)
    params["readout.w"] = rng.uniform(-cls_bound, cls_bound, size=(2 * d, cfg.num_classes))
    params["readout.b"] = np.zeros(cfg.num_classes)
    return params


def layer_params_view(params: dict, layer: int) -> dict:
    """Sub-dict for one layer with the ``layers.{l}.`` prefix stripped.

    Values are shared, not copied, so tape gradients flow to the original
    leaves.
    """
    prefix = f"layers.{layer}."
    view = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
    if not view:
        raise KeyError(f"no parameters for layer {layer}")
    return view


def layer_norm(z, scale, shift, eps: float):
    """Standard per-row normalization over the feature axis."""
    mu = ad.reduce_mean(z, axis=-1, keepdims=True)
    cent = ad.sub(z, mu)
    var = ad.reduce_mean(ad.mul(cent, cent), axis=-1, keepdims=True)
    zhat = ad.div(cent, ad.sqrt(ad.add(var, eps)))
    return ad.add(ad.mul(zhat, scale), shift)


def readout_logits(
    params: dict,
    h,
    cfg: ModelConfig,
    training: bool = False,
    drop_rng: np.random.Generator | None = None,
):
    """Complex states to class logits.

    The 2d real view is all real parts followed by all imaginary parts,
    then layer norm, inverted dropout (training only), and a linear map.
    """
    n = ad.value_of(h).shape[0]
    z = ad.reshape(ad.transpose(h, (0, 2, 1)), (n, 2 * cfg.dim))
    z = layer_norm(z, params["readout.ln_scale"], params["readout.ln_shift"],
                   cfg.norm_epsilon)
    if training and cfg.dropout > 0.0:
        if drop_rng is None:
            raise ValueError("training forward with dropout needs drop_rng")
        keep = drop_rng.random(ad.value_of(z).shape) >= cfg.dropout
        z = ad.mul(z, keep / (1.0 - cfg.dropout))
    return ad.add(ad.matmul(z, params["readout.w"]), params["readout.b"])


def model_forward(
    params: dict,
    features,
    arcs: ArcSet,
    cfg: ModelConfig,
    training: bool = False,
    drop_rng: np.random.Generator | None = None,
):
    """Features to class logits; ``arcs`` already reflects any edge dropout.

    Readout dropout requires ``training=True`` together with ``drop_rng``;
    inference never consumes randomness.
    """
    lcfg = cfg.layer_config()
    h = complex_lift(features, params["lift.w"])
    for layer in range(cfg.num_layers):
        h = layer_forward(layer_params_view(params, layer), arcs, h, lcfg)["h_out"]
    return readout_logits(params, h, cfg, training, drop_rng)


def cross_entropy(logits, labels: np.ndarray, mask: np.ndarray):
    """Mean negative log-probability of the true class over masked rows."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("cross_entropy over an empty mask")
    sel = ad.gather(logits, idx)
    mx = np.max(ad.value_of(sel), axis=-1, keepdims=True)  # shift under stop-gradient
    shifted = ad.sub(sel, mx)
    lse = ad.log(ad.reduce_sum(ad.exp(shifted), axis=-1))
    true = ad.select_rc(shifted, np.arange(idx.size), labels[idx])
    return ad.reduce_mean(ad.sub(lse, true))


def _softmax_rows(logits, temperature: float):
    scaled = ad.scale(logits, 1.0 / temperature)
    mx = np.max(ad.value_of(scaled), axis=-1, keepdims=True)
    e = ad.exp(ad.sub(scaled, mx))
    return ad.div(e, ad.reduce_sum(e, axis=-1, keepdims=True))


def js_consistency(logits1, logits2, temperature: float):
    """Mean Jensen-Shannon divergence between softened predictions.

    Natural log, so the value lies in [0, ln 2]; probabilities are floored
    inside the logs only, keeping p*log(p) exact at underflow.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    p = _softmax_rows(logits1, temperature)
    q = _softmax_rows(logits2, temperature)
    m = ad.scale(ad.add(p, q), 0.5)
    log_m = ad.log(ad.maximum_const(m, LOG_FLOOR))
    kl_p = ad.reduce_sum(ad.mul(p, ad.sub(ad.log(ad.maximum_const(p, LOG_FLOOR)), log_m)),
                         axis=-1)
    kl_q = ad.reduce_sum(ad.mul(q, ad.sub(ad.log(ad.maximum_const(q, LOG_FLOOR)), log_m)),
                         axis=-1)
    return ad.reduce_mean(ad.scale(ad.add(kl_p, kl_q), 0.5))


def total_loss(
    params: dict,
    data: Dataset,
    cfg: ModelConfig,
    drop_rng: np.random.Generator,
    edge_rng: np.random.Generator,
):
    """One objective evaluation: (total, ce, js) as tape values.

    ``js`` is None when ``lambda_js == 0`` (the stochastic passes are
    skipped entirely, so total == ce exactly).
    """
    graph = data.graph
    if cfg.ce_edge_drop and cfg.p_edge_drop > 0.0:
        keep = sample_edge_drop_mask(graph, cfg.p_edge_drop, edge_rng)
        ce_arcs = graph.masked_arcs(keep)
    else:
        ce_arcs = graph.arcs
    logits = model_forward(params, data.features, ce_arcs, cfg,
                           training=True, drop_rng=drop_rng)
    ce = cross_entropy(logits, data.labels, data.train_mask)
    if cfg.lambda_js == 0.0:
        return ce, ce, None
    dropped = []
    for _ in range(2):
        keep = sample_edge_drop_mask(graph, cfg.p_edge_drop, edge_rng)
        arcs = graph.masked_arcs(keep)
        dropped.append(model_forward(params, data.features, arcs, cfg,
                                     training=True, drop_rng=drop_rng))
    js = js_consistency(dropped[0], dropped[1], cfg.temperature)
    total = ad.add(ce, ad.scale(js, cfg.lambda_js))
    return total, ce, js


def predict_logits(params: dict, data: Dataset, cfg: ModelConfig) -> np.ndarray:
    """Deterministic clean-graph logits (no dropout, full edge set)."""
    values = {k: np.asarray(ad.value_of(v)) for k, v in params.items()}
    return np.asarray(model_forward(values, data.features, data.graph.arcs, cfg))


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Argmax accuracy over masked rows; ties resolve to the lowest class."""
    if not np.any(mask):
        raise ValueError("accuracy over an empty mask")
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred[mask] == labels[mask]))


def evaluate(params: dict, data: Dataset, mask: np.ndarray, cfg: ModelConfig) -> float:
    """Clean-graph accuracy of the model on the masked nodes."""
    return accuracy_from_logits(predict_logits(params, data, cfg), data.labels, mask)


def is_decayed(name: str) -> bool:
    """Weight decay hits linear maps only; phases and scalars are exempt."""
    return name.endswith((".w", ".q", "w_mag", "q_mag"))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
    )


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    tcfg: TrainConfig,
) -> None:
    """In-place bias-corrected moment update with decoupled weight decay.

    Diagonal-transform magnitudes are clipped at zero afterwards so the
    nonnegative-magnitude invariant survives optimization.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - tcfg.beta1 ** t
    bc2 = 1.0 - tcfg.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= tcfg.beta1
        m += (1.0 - tcfg.beta1) * g
        v *= tcfg.beta2
        v += (1.0 - tcfg.beta2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + tcfg.adam_eps)
        p -= tcfg.lr * update
        if tcfg.weight_decay > 0.0 and is_decayed(name):
            p -= tcfg.lr * tcfg.weight_decay * p
        if name.endswith("_mag"):
            np.maximum(p, 0.0, out=p)


def train(
    data: Dataset,
    cfg: ModelConfig,
    tcfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Full-graph training with early stopping on validation accuracy.

    Returns the best-validation parameter snapshot and one metrics record
    per epoch: {epoch, loss_ce, loss_js, train_acc, val_acc, test_acc}.
    Randomness derives entirely from ``tcfg.seed`` through named streams
    (0: init, 2: readout dropout, 3: edge dropout), so reruns match
    bit for bit.
    """
    if cfg.in_dim != data.features.shape[1]:
        raise ValueError("cfg.in_dim does not match dataset features")
    if cfg.num_classes != data.num_classes:
        raise ValueError("cfg.num_classes does not match dataset labels")
    for name, mask in (("train", data.train_mask), ("val", data.val_mask),
                       ("test", data.test_mask)):
        if not np.any(mask):
            raise ValueError(f"training requires a nonempty {name} mask")
    num_edges = data.graph.edges.shape[0]
    params = init_model_params(cfg, num_edges, make_rng(tcfg.seed, 0))
    state = adam_init(params)
    drop_rng = make_rng(tcfg.seed, 2)
    edge_rng = make_rng(tcfg.seed, 3)

    best = {k: v.copy() for k, v in params.items()}
    best_val = -np.inf
    stale = 0
    history: list[dict] = []
    for epoch in range(1, tcfg.max_epochs + 1):
        try:
            leaves = ad.leaves_from(params)
            total, ce, js = total_loss(leaves, data, cfg, drop_rng, edge_rng)
            total_value = float(np.asarray(ad.value_of(total)))
            if not np.isfinite(total_value):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            grads = ad.GradientTape(total, leaves).gradients()
            adam_step(state, params, grads, tcfg)
            logits = predict_logits(params, data, cfg)
            record = {
                "epoch": epoch,
                "loss_ce": float(np.asarray(ad.value_of(ce))),
                "loss_js": float(np.asarray(ad.value_of(js))) if js is not None else 0.0,
                "train_acc": accuracy_from_logits(logits, data.labels, data.train_mask),
                "val_acc": accuracy_from_logits(logits, data.labels, data.val_mask),
                "test_acc": accuracy_from_logits(logits, data.labels, data.test_mask),
            }
        except TrainingError:
            raise
        except RuntimeError as err:
            raise TrainingError(f"training failed at epoch {epoch}: {err}") from err
        history.append(record)
        if record["val_acc"] > best_val:
            best_val = record["val_acc"]
            best = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    return best, history


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict) -> None:
    """Binary snapshot: magic, JSON header, little-endian float64 payload.

    The header records format version, the model config dict, and the
    name/shape table in payload order, so a checkpoint is self-describing.
    """
    names = sorted(params)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": config,
        "arrays": [{"name": k, "shape": list(params[k].shape)} for k in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of ``save_checkpoint``; returns (params, config)."""
    try:
        fh: BinaryIO = open(path, "rb")
    except OSError as err:
        raise CheckpointError(f"cannot open checkpoint {path}: {err}") from err
    with fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint (bad magic)")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, hlen, "header"))
        except json.JSONDecodeError as err:
            raise CheckpointError(f"corrupt checkpoint header: {err}") from err
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {header.get('format_version')!r}"
            )
        params: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 8 * count, f"array {entry['name']}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        extra = fh.read(1)
        if extra:
            raise CheckpointError("trailing bytes after checkpoint payload")
    return params, header.get("config", {})
