"""Deep knowledge tracing with a simple tanh RNN.

Each step feeds the one-hot encoding of the previous (skill, correct) pair::

    h_t = tanh(W_hx x_t + W_hh h_{t-1} + b_h)
    y_t = sigmoid(W_yh h_t + b_y)

and the loss is binary cross-entropy of ``y_t[next skill]`` against the next answer.
Gradients are exact BPTT through the batched kernel in :mod:`dktgen.kernels`.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import kernels
from .data import EncodedWindow, StudentSequence, encode_sequence
from .metrics import EvaluationError, auc
from .numerics import AdamState, Rng, TrainingError, adam_step, clip_by_global_norm

log = logging.getLogger(__name__)

PARAM_NAMES = ("W_hx", "W_hh", "W_yh", "b_h", "b_y", "h_0")
CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-7


class ModelError(ValueError):
    """Parameters and data disagree on shapes or vocabulary."""


@dataclass
class DktConfig:
    hidden_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    max_grad_norm: float = 5.0
    seed: int = 0
    patience: int = 5
    max_len: int = 200

    def __post_init__(self):
        if self.hidden_size < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hidden_size, epochs and batch_size must be >= 1")


@dataclass
class DktParams:
    W_hx: np.ndarray
    W_hh: np.ndarray
    W_yh: np.ndarray
    b_h: np.ndarray
    b_y: np.ndarray
    h_0: np.ndarray

    @property
    def num_skills(self) -> int:
        return self.W_yh.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.W_hh.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d) -> "DktParams":
        return cls(**{n: np.asarray(d[n], dtype=np.float64) for n in PARAM_NAMES})

    def check(self) -> None:
        S, H = self.num_skills, self.hidden_size
        expected = {"W_hx": (H, 2 * S), "W_hh": (H, H), "W_yh": (S, H), "b_h": (H,), "b_y": (S,), "h_0": (H,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ModelError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @classmethod
    def zeros(cls, num_skills: int, hidden_size: int) -> "DktParams":
        S, H = num_skills, hidden_size
        return cls(np.zeros((H, 2 * S)), np.zeros((H, H)), np.zeros((S, H)), np.zeros(H), np.zeros(S), np.zeros(H))


def init_params(num_skills: int, hidden_size: int, rng: Rng) -> DktParams:
    """Uniform in +-1/sqrt(fan_in); zero initial state."""
    S, H = num_skills, hidden_size

    def u(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return (2.0 * rng.uniform(shape) - 1.0) * bound

    return DktParams(
        W_hx=u((H, 2 * S), 2 * S),
        W_hh=u((H, H), H),
        W_yh=u((S, H), H),
        b_h=u((H,), H),
        b_y=u((S,), H),
        h_0=np.zeros(H),
    )


@dataclass
class Batch:
    inputs: np.ndarray  # (B, L) int64, padded with 0
    targets: np.ndarray  # (B, L) int64
    labels: np.ndarray  # (B, L) float
    mask: np.ndarray  # (B, L) bool

    @property
    def num_records(self) -> int:
        return int(self.mask.sum())


def pack(windows: Sequence[EncodedWindow]) -> Batch:
    B = len(windows)
    L = max((len(w) for w in windows), default=0)
    inputs = np.zeros((B, L), dtype=np.int64)
    targets = np.zeros((B, L), dtype=np.int64)
    labels = np.zeros((B, L))
    mask = np.zeros((B, L), dtype=bool)
    for i, w in enumerate(windows):
        n = len(w)
        inputs[i, :n] = w.input_index
        targets[i, :n] = w.target_skill
        labels[i, :n] = w.target_correct
        mask[i, :n] = True
    return Batch(inputs, targets, labels, mask)


def _check_batch(params: DktParams, batch: Batch) -> None:
    S = params.num_skills
    if batch.inputs.size and (batch.inputs.max() >= 2 * S or batch.inputs.min() < 0):
        raise ModelError(f"input index outside [0, {2 * S})")
    if batch.targets.size and (batch.targets.max() >= S or batch.targets.min() < 0):
        raise ModelError(f"target skill outside [0, {S})")


def _run(params: DktParams, batch: Batch):
    p = params
    return kernels.rnn.forward(p.W_hx, p.W_hh, p.W_yh, p.b_h, p.b_y, p.h_0, batch.inputs, batch.targets)


def dkt_forward(params: DktParams, window: EncodedWindow) -> tuple[np.ndarray, np.ndarray]:
    """Full readout ``(y, h)`` for one window: ``y`` is ``(L, S)``, ``h`` is ``(L, H)``."""
    params.check()
    if len(window) == 0:
        raise ModelError("empty window")
    batch = pack([window])
    _check_batch(params, batch)
    hs, _ = _run(params, batch)
    h = hs[1:, 0, :]
    y = expit(h @ params.W_yh.T + params.b_y)
    return y, h


def dkt_loss(probs, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("dkt_loss of an empty prediction list")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))))


def loss_and_grads(params: DktParams, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BCE over the batch's records and its exact gradient for all six groups."""
    _check_batch(params, batch)
    n = batch.num_records
    if n == 0:
        raise ModelError("batch holds no prediction records")
    hs, logits = _run(params, batch)
    prob = expit(logits)
    loss = dkt_loss(prob[batch.mask], batch.labels[batch.mask])
    inside = (prob > PROB_CLAMP) & (prob < 1.0 - PROB_CLAMP)
    dlogits = np.where(batch.mask & inside, (prob - batch.labels) / n, 0.0)
    p = params
    grads = kernels.rnn.backward(
        p.W_hx, p.W_hh, p.W_yh, p.b_h, p.b_y, p.h_0, batch.inputs, batch.targets, hs, dlogits
    )
    return loss, dict(zip(PARAM_NAMES, grads))


def dkt_backward(params: DktParams, window: EncodedWindow) -> dict[str, np.ndarray]:
    """Gradient of :func:`dkt_loss` over one window's records."""
    return loss_and_grads(params, pack([window]))[1]


@dataclass
class Predictions:
    probability: np.ndarray
    label: np.ndarray

    def __len__(self) -> int:
        return len(self.label)


def _windows(seqs: Sequence[StudentSequence], num_skills: int, max_len: int) -> list[EncodedWindow]:
    out = []
    for s in seqs:
        out.extend(encode_sequence(s, num_skills, max_len))
    return out


def _predict_windows(params: DktParams, windows: list[EncodedWindow], chunk: int = 512) -> Predictions:
    probs, labels = [], []
    for start in range(0, len(windows), chunk):
        batch = pack(windows[start : start + chunk])
        _check_batch(params, batch)
        _, logits = _run(params, batch)
        probs.append(expit(logits)[batch.mask])
        labels.append(batch.labels[batch.mask].astype(np.int64))
    if not probs:
        return Predictions(np.zeros(0), np.zeros(0, dtype=np.int64))
    return Predictions(np.concatenate(probs), np.concatenate(labels))


def dkt_predict(
    params: DktParams, seqs: Sequence[StudentSequence], num_skills: int, max_len: int = 200
) -> Predictions:
    """Next-answer probabilities for every step, students in sorted ``user_id`` order."""
    params.check()
    if num_skills != params.num_skills:
        raise ModelError(f"model trained on {params.num_skills} skills, data encoded with {num_skills}")
    ordered = sorted(seqs, key=lambda s: s.user_id)
    return _predict_windows(params, _windows(ordered, num_skills, max_len))


@dataclass
class TrainingLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_auc: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def _valid_score(preds: Predictions) -> tuple[float, float]:
    loss = dkt_loss(preds.probability, preds.label)
    try:
        score = auc(preds.label, preds.probability)
    except EvaluationError:
        score = float("nan")
    return score, loss


def dkt_train(
    train_seqs: Sequence[StudentSequence],
    valid_seqs: Sequence[StudentSequence],
    num_skills: int,
    config: DktConfig,
    rng: Rng | None = None,
) -> tuple[DktParams, TrainingLog]:
    """Mini-batch Adam with global-norm clipping and validation-AUC early stopping.

    Returns the parameters of the best validation epoch. Training stops once
    ``patience`` consecutive epochs pass without a new best. When validation labels
    are single-class, validation loss is used as the selection score instead.
    """
    rng = rng if rng is not None else Rng(config.seed)
    train_windows = _windows(train_seqs, num_skills, config.max_len)
    valid_windows = _windows(sorted(valid_seqs, key=lambda s: s.user_id), num_skills, config.max_len)
    if not train_windows:
        raise TrainingError("no training windows (every sequence shorter than 2)")
    if not valid_windows:
        raise TrainingError("no validation predictions possible (every sequence shorter than 2)")

    params = init_params(num_skills, config.hidden_size, rng)
    state = AdamState.for_params(params.as_dict(), learning_rate=config.learning_rate)
    log_ = TrainingLog()
    best_key = -np.inf
    best = copy.deepcopy(params)
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_windows))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = pack([train_windows[i] for i in order[start : start + config.batch_size]])
            loss, grads = loss_and_grads(params, batch)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite DKT loss in epoch {epoch}")
            clip_by_global_norm(grads, config.max_grad_norm)
            adam_step(params.as_dict(), grads, state)
            total += loss * batch.num_records
            count += batch.num_records
        v_auc, v_loss = _valid_score(_predict_windows(params, valid_windows))
        key = v_auc if not np.isnan(v_auc) else -v_loss
        log_.epochs.append(
            {"epoch": epoch, "train_loss": total / count, "valid_auc": v_auc, "valid_loss": v_loss}
        )
        log.debug("epoch %d train %.4f valid auc %.2f", epoch, total / count, v_auc)
        if key > best_key:
            best_key = key
            best = copy.deepcopy(params)
            log_.best_epoch, log_.best_valid_auc = epoch, v_auc
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break
    return best, log_


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    params: DktParams,
    config: DktConfig,
    skill_tokens: Sequence[str],
    training_log: TrainingLog | None = None,
) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "kind": "dkt",
        "config": asdict(config),
        "num_skills": params.num_skills,
        "hidden_size": params.hidden_size,
        "skill_vocabulary": list(skill_tokens),
        "params": {n: {"shape": list(a.shape), "data": a.ravel().tolist()} for n, a in params.as_dict().items()},
    }
    if training_log is not None:
        doc["training_log"] = training_log.to_dict()
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[DktParams, DktConfig, list[str]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION or doc.get("kind") != "dkt":
        raise ModelError(f"{path} is not a version-{CHECKPOINT_VERSION} DKT checkpoint")
    arrays = {
        n: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for n, v in doc["params"].items()
    }
    params = DktParams.from_dict(arrays)
    params.check()
    return params, DktConfig(**doc["config"]), list(doc["skill_vocabulary"])
