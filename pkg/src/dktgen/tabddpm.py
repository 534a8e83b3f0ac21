"""Mixed-type tabular diffusion: Gaussian chains for numeric columns, multinomial chains
for categorical ones, one MLP denoiser, and ancestral sampling.

Rows are held column-wise: ``x_num`` is ``(n, d_num)`` in quantile-transformed space and
``x_cat`` is ``(n, C)`` of category indices. Timesteps run ``1..T``; ``alpha_bar[0]`` is 1.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import log_softmax, ndtr, ndtri, softmax

from .data import Vocabulary, canonicalize
from .numerics import AdamState, Rng, TrainingError, adam_step

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CDF_CLIP = 1e-6


class ModelError(ValueError):
    pass


# --- schema -------------------------------------------------------------------


@dataclass
class TabSchema:
    numeric_cols: list[str]
    categorical_cols: list[str]
    categories: list[int]  # K_i per categorical column

    def __post_init__(self):
        if len(self.categories) != len(self.categorical_cols):
            raise ValueError("one category count per categorical column")
        if any(k < 2 for k in self.categories):
            raise ValueError(f"every categorical column needs >= 2 categories, got {self.categories}")

    @property
    def C(self) -> int:
        return len(self.categorical_cols)

    @property
    def d_num(self) -> int:
        return len(self.numeric_cols)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.categories)]).astype(np.int64)

    @property
    def onehot_dim(self) -> int:
        return int(sum(self.categories))


def one_hot(indices: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((len(indices), K))
    out[np.arange(len(indices)), indices] = 1.0
    return out


# --- numeric preprocessing ------------------------------------------------------


@dataclass
class QuantileTransform:
    """Per-column map data -> empirical CDF -> standard-normal quantile.

    ``references[j]`` holds the sorted distinct training values of column ``j`` and
    ``positions[j]`` the mid-step CDF value of each.
    """

    references: list[np.ndarray]
    positions: list[np.ndarray]
    constant: list[bool]

    @classmethod
    def fit(cls, x: np.ndarray) -> "QuantileTransform":
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        refs, pos, const = [], [], []
        for j in range(x.shape[1]):
            vals, counts = np.unique(x[:, j], return_counts=True)
            cum = np.cumsum(counts)
            refs.append(vals)
            pos.append((cum - counts / 2.0) / cum[-1])
            const.append(len(vals) == 1)
            if len(vals) == 1:
                warnings.warn(f"numeric column {j} is constant; it is encoded as zeros", RuntimeWarning)
        return cls(refs, pos, const)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        out = np.zeros_like(x)
        for j, (r, p, c) in enumerate(zip(self.references, self.positions, self.constant)):
            if c:
                continue
            q = np.interp(x[:, j], r, p)
            out[:, j] = ndtri(np.clip(q, CDF_CLIP, 1.0 - CDF_CLIP))
        return out

    def inverse(self, z: np.ndarray) -> np.ndarray:
        """Back to data space; results are clamped to the training range."""
        z = np.asarray(z, dtype=np.float64).reshape(len(z), -1)
        out = np.empty_like(z)
        for j, (r, p, c) in enumerate(zip(self.references, self.positions, self.constant)):
            if c:
                out[:, j] = r[0]
            else:
                out[:, j] = np.interp(ndtr(z[:, j]), p, r)
        return out

    def to_dict(self) -> dict:
        return {
            "references": [r.tolist() for r in self.references],
            "positions": [p.tolist() for p in self.positions],
            "constant": list(self.constant),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileTransform":
        return cls(
            [np.asarray(r, dtype=np.float64) for r in d["references"]],
            [np.asarray(p, dtype=np.float64) for p in d["positions"]],
            [bool(c) for c in d["constant"]],
        )


def fit_transform_numeric(x_num: np.ndarray) -> tuple[QuantileTransform, np.ndarray]:
    x_num = np.asarray(x_num, dtype=np.float64)
    if len(x_num) < 10:
        raise ValueError(f"need at least 10 rows to fit the quantile transform, got {len(x_num)}")
    qt = QuantileTransform.fit(x_num)
    return qt, qt.transform(x_num)


# --- noise schedule -------------------------------------------------------------


@dataclass
class DiffusionSchedule:
    beta: np.ndarray  # index t in 1..T; beta[0] unused (0)
    alpha: np.ndarray
    alpha_bar: np.ndarray  # alpha_bar[0] = 1

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    @property
    def posterior_variance(self) -> np.ndarray:
        var = np.zeros_like(self.beta)
        t = np.arange(1, self.T + 1)
        var[t] = self.beta[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
        return var


def make_schedule(T: int, beta_min: float, beta_max: float) -> DiffusionSchedule:
    """Linearly spaced betas over ``t = 1..T``."""
    if T < 1 or not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"invalid schedule T={T}, beta=({beta_min}, {beta_max})")
    beta = np.concatenate([[0.0], np.linspace(beta_min, beta_max, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return DiffusionSchedule(beta, alpha, alpha_bar)


def gaussian_forward_sample(x0: np.ndarray, t, schedule: DiffusionSchedule, rng: Rng):
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; returns ``(x_t, eps)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.normal(x0.shape)
    return _gaussian_qsample(x0, t, schedule, eps), eps


def _gaussian_qsample(x0, t, schedule, eps):
    ab = schedule.alpha_bar[np.asarray(t)]
    if x0.ndim == 2 and np.ndim(ab) == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def multinomial_forward_probs(x0: np.ndarray, t, schedule: DiffusionSchedule) -> np.ndarray:
    """t-step marginal ``abar_t x0 + (1 - abar_t)/K`` of the uniform-mixing kernel."""
    x0 = np.asarray(x0, dtype=np.float64)
    K = x0.shape[-1]
    ab = schedule.alpha_bar[np.asarray(t)]
    if x0.ndim == 2:
        ab = np.broadcast_to(ab, (x0.shape[0],))[:, None]
    return ab * x0 + (1.0 - ab) / K


def _posterior_factors(x_t, x0, t, schedule):
    K = x_t.shape[-1]
    t = np.asarray(t)
    a_t, b_t, ab_prev = schedule.alpha[t], schedule.beta[t], schedule.alpha_bar[t - 1]
    if x_t.ndim == 2:
        n = x_t.shape[0]
        a_t, b_t, ab_prev = (np.broadcast_to(v, (n,))[:, None] for v in (a_t, b_t, ab_prev))
    fa = a_t * x_t + b_t / K
    fb = ab_prev * x0 + (1.0 - ab_prev) / K
    return fa, fb, ab_prev


def multinomial_posterior(x_t: np.ndarray, x0: np.ndarray, t, schedule: DiffusionSchedule) -> np.ndarray:
    """``q(x_{t-1} | x_t, x0)`` for ``t >= 2``; ``x0`` may be a probability vector."""
    x_t = np.asarray(x_t, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if np.any(np.asarray(t) < 2):
        raise ValueError("the categorical posterior is defined for t >= 2")
    fa, fb, _ = _posterior_factors(x_t, x0, t, schedule)
    un = fa * fb
    z = un.sum(axis=-1, keepdims=True)
    if np.any(z <= 0):
        raise FloatingPointError("zero normalizer in categorical posterior")
    return un / z


# --- denoiser -------------------------------------------------------------------


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features ``[cos(t w_k), sin(t w_k)]`` with geometric frequencies."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


@dataclass
class DenoiserParams:
    weights: list[np.ndarray]  # W_l is (fan_in, fan_out); rows of W_0 are [num | one-hots | time]
    biases: list[np.ndarray]
    schema: TabSchema
    time_dim: int

    @property
    def in_dim(self) -> int:
        return self.schema.d_num + self.schema.onehot_dim + self.time_dim

    @property
    def out_dim(self) -> int:
        return self.schema.d_num + self.schema.onehot_dim

    def as_dict(self) -> dict[str, np.ndarray]:
        d = {f"W{i}": w for i, w in enumerate(self.weights)}
        d.update({f"b{i}": b for i, b in enumerate(self.biases)})
        return d

    def with_arrays(self, d) -> "DenoiserParams":
        n = len(self.weights)
        return DenoiserParams(
            [d[f"W{i}"] for i in range(n)], [d[f"b{i}"] for i in range(n)], self.schema, self.time_dim
        )


def init_denoiser(schema: TabSchema, hidden: Sequence[int], time_dim: int, rng: Rng) -> DenoiserParams:
    dims = [schema.d_num + schema.onehot_dim + time_dim, *hidden, schema.d_num + schema.onehot_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append((2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * bound)
        biases.append((2.0 * rng.uniform(fan_out) - 1.0) * bound)
    return DenoiserParams(weights, biases, schema, time_dim)


def _first_layer(params: DenoiserParams, x_num, x_cat, t):
    s = params.schema
    W0 = params.weights[0]
    h = params.biases[0] + (x_num @ W0[: s.d_num] if s.d_num else 0.0)
    base = s.d_num
    for i, K in enumerate(s.categories):
        h = h + W0[base + s.offsets[i] + x_cat[:, i]]
    W_time = W0[base + s.onehot_dim :]
    t = np.atleast_1d(t)
    if params.time_dim:
        uniq, inv = np.unique(t, return_inverse=True)
        h = h + (timestep_embedding(uniq, params.time_dim) @ W_time)[inv]
    return h


def _mlp(params: DenoiserParams, x_num, x_cat, t, keep=False):
    pre = [_first_layer(params, x_num, x_cat, t)]
    acts = []
    for W, b in zip(params.weights[1:], params.biases[1:]):
        a = np.maximum(pre[-1], 0.0)
        acts.append(a)
        pre.append(a @ W + b)
    out = pre[-1]
    return (out, (pre, acts)) if keep else out


def _split_heads(schema: TabSchema, out: np.ndarray):
    eps_hat = out[:, : schema.d_num]
    logits = [out[:, schema.d_num + schema.offsets[i] : schema.d_num + schema.offsets[i + 1]] for i in range(schema.C)]
    return eps_hat, logits


def denoiser_forward(params: DenoiserParams, x_t_num, x_t_cat, t):
    """Predicted noise and per-column logits.

    ``x_t_cat`` is ``(n, C)`` category indices (the one-hot input is applied as a row
    gather of the first weight matrix); ``t`` is a scalar or per-row array.
    """
    s = params.schema
    x_t_num = np.atleast_2d(np.asarray(x_t_num, dtype=np.float64))
    x_t_cat = np.atleast_2d(np.asarray(x_t_cat, dtype=np.int64))
    if x_t_num.shape[1] != s.d_num or x_t_cat.shape[1] != s.C:
        raise ModelError(
            f"expected {s.d_num} numeric and {s.C} categorical columns, "
            f"got {x_t_num.shape[1]} and {x_t_cat.shape[1]}"
        )
    if len(x_t_num) != len(x_t_cat):
        raise ModelError(f"numeric block has {len(x_t_num)} rows, categorical {len(x_t_cat)}")
    if s.C and (np.any(x_t_cat < 0) or np.any(x_t_cat >= np.asarray(s.categories))):
        raise ModelError("category index outside its column's range")
    t = np.broadcast_to(np.asarray(t), (len(x_t_num),))
    return _split_heads(s, _mlp(params, x_t_num, x_t_cat, t))


def _mlp_backward(params: DenoiserParams, x_num, x_cat, t, cache, dout):
    pre, acts = cache
    s = params.schema
    n_layers = len(params.weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    d = dout
    for layer in range(n_layers - 1, 0, -1):
        a = acts[layer - 1]
        gW[layer] = a.T @ d
        gb[layer] = d.sum(axis=0)
        d = (d @ params.weights[layer].T) * (pre[layer - 1] > 0)
    g0 = np.zeros_like(params.weights[0])
    if s.d_num:
        g0[: s.d_num] = x_num.T @ d
    base = s.d_num
    for i in range(s.C):
        np.add.at(g0, base + s.offsets[i] + x_cat[:, i], d)
    if params.time_dim:
        uniq, inv = np.unique(t, return_inverse=True)
        summed = np.zeros((len(uniq), d.shape[1]))
        np.add.at(summed, inv, d)
        g0[base + s.onehot_dim :] = timestep_embedding(uniq, params.time_dim).T @ summed
    gW[0] = g0
    gb[0] = d.sum(axis=0)
    grads = {f"W{i}": g for i, g in enumerate(gW)}
    grads.update({f"b{i}": g for i, g in enumerate(gb)})
    return grads


# --- loss -----------------------------------------------------------------------


@dataclass
class LossBreakdown:
    l_simple: float
    l_cat: list[float]
    total: float


def combined_total(l_simple: float, l_cat: Sequence[float]) -> float:
    """``l_simple + sum(l_cat) / C``; without categorical columns just ``l_simple``."""
    return l_simple + (sum(l_cat) / len(l_cat) if len(l_cat) else 0.0)


@dataclass
class NoiseDraw:
    """Everything random in one loss evaluation; holding it fixed makes the loss deterministic."""

    t: np.ndarray  # (n,)
    eps: np.ndarray  # (n, d_num)
    x_t_cat: np.ndarray  # (n, C)


def draw_noise(x_cat0: np.ndarray, schema: TabSchema, schedule: DiffusionSchedule, rng: Rng) -> NoiseDraw:
    n = len(x_cat0)
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.normal((n, schema.d_num))
    x_t_cat = np.zeros((n, schema.C), dtype=np.int64)
    for i, K in enumerate(schema.categories):
        probs = multinomial_forward_probs(one_hot(x_cat0[:, i], K), t, schedule)
        x_t_cat[:, i] = rng.categorical(probs)
    return NoiseDraw(t, eps, x_t_cat)


def loss_given_noise(
    params: DenoiserParams,
    x_num0: np.ndarray,
    x_cat0: np.ndarray,
    noise: NoiseDraw,
    schedule: DiffusionSchedule,
    with_grads: bool = False,
):
    """Batch-mean loss ``l_simple + sum_i l_cat_i / C`` for fixed noise, optionally with gradients.

    The categorical term is the KL between the true and model posteriors for
    ``t >= 2`` and the decoder negative log-likelihood at ``t = 1``.
    """
    s = params.schema
    n = len(x_cat0)
    if n == 0:
        raise ValueError("empty batch")
    t = noise.t
    x_t_num = _gaussian_qsample(np.asarray(x_num0, dtype=np.float64).reshape(n, s.d_num), t, schedule, noise.eps)
    out, cache = _mlp(params, x_t_num, noise.x_t_cat, t, keep=True)
    eps_hat, logits = _split_heads(s, out)
    dout = np.zeros_like(out) if with_grads else None

    if s.d_num:
        diff = eps_hat - noise.eps
        l_simple = float(np.mean(diff * diff))
        if with_grads:
            dout[:, : s.d_num] = 2.0 * diff / diff.size
    else:
        l_simple = 0.0

    first = t == 1
    later = ~first
    l_cat = []
    for i, K in enumerate(s.categories):
        z = logits[i]
        log_pi = log_softmax(z, axis=1)
        pi = np.exp(log_pi)
        x0 = one_hot(x_cat0[:, i], K)
        row_loss = np.zeros(n)
        g_z = np.zeros((n, K))
        if first.any():
            row_loss[first] = -log_pi[first, x_cat0[first, i]]
            g_z[first] = pi[first] - x0[first]
        if later.any():
            tl = t[later]
            xt = one_hot(noise.x_t_cat[later, i], K)
            fa, fb_true, ab_prev = _posterior_factors(xt, x0[later], tl, schedule)
            q = fa * fb_true
            q /= q.sum(axis=1, keepdims=True)
            _, fb_model, _ = _posterior_factors(xt, pi[later], tl, schedule)
            un = fa * fb_model
            norm = un.sum(axis=1, keepdims=True)
            log_p = np.log(fa) + np.log(fb_model) - np.log(norm)
            row_loss[later] = np.sum(q * (np.log(q) - log_p), axis=1)
            if with_grads:
                g_pi = ab_prev * (fa / norm - q / fb_model)
                p_l = pi[later]
                g_z[later] = p_l * (g_pi - np.sum(p_l * g_pi, axis=1, keepdims=True))
        l_cat.append(float(np.mean(row_loss)))
        if with_grads:
            lo = s.d_num + s.offsets[i]
            dout[:, lo : lo + K] = g_z / (n * s.C)

    breakdown = LossBreakdown(l_simple, l_cat, combined_total(l_simple, l_cat))
    if not with_grads:
        return breakdown
    return breakdown, _mlp_backward(params, x_t_num, noise.x_t_cat, t, cache, dout)


def tabddpm_loss(params, x_num0, x_cat0, schedule, rng: Rng, with_grads: bool = False):
    """Loss with a fresh draw of ``t``, Gaussian noise and noisy categories."""
    noise = draw_noise(np.asarray(x_cat0, dtype=np.int64), params.schema, schedule, rng)
    return loss_given_noise(params, x_num0, x_cat0, noise, schedule, with_grads)


# --- training and sampling -------------------------------------------------------


@dataclass
class GeneratorConfig:
    T: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.02
    scale_betas: bool = True  # multiply the bounds by 1000 / T
    hidden: list[int] = field(default_factory=lambda: [256, 256])
    time_dim: int = 64
    learning_rate: float = 1e-3
    steps: int = 10_000
    batch_size: int = 256
    seed: int = 0
    sample_block: int = 2048

    def schedule(self) -> DiffusionSchedule:
        scale = 1000.0 / self.T if self.scale_betas else 1.0
        return make_schedule(self.T, min(self.beta_min * scale, 0.999), min(self.beta_max * scale, 0.999))


@dataclass
class TabularCodec:
    """Maps interaction frames to diffusion rows and back."""

    users: Vocabulary
    skills: Vocabulary
    transform: QuantileTransform

    @property
    def schema(self) -> TabSchema:
        return TabSchema(
            numeric_cols=["overlap_time"],
            categorical_cols=["user_id", "skill_id", "correct"],
            categories=[max(len(self.users), 2), max(len(self.skills), 2), 2],
        )

    @classmethod
    def fit(cls, interactions: pd.DataFrame) -> tuple["TabularCodec", np.ndarray, np.ndarray]:
        if len(interactions) < 10:
            raise ValueError("need at least 10 interactions to fit the generator codec")
        users = Vocabulary(sorted(set(interactions["user_id"])))
        skills = Vocabulary(sorted(set(interactions["skill_id"])))
        qt, x_num = fit_transform_numeric(interactions[["overlap_time"]].to_numpy())
        codec = cls(users, skills, qt)
        return codec, x_num, codec.encode_categorical(interactions)

    def encode_categorical(self, interactions: pd.DataFrame) -> np.ndarray:
        return np.stack(
            [
                self.users.encode(interactions["user_id"].to_numpy(dtype=object)),
                self.skills.encode(interactions["skill_id"].to_numpy(dtype=object)),
                interactions["correct"].to_numpy(dtype=np.int64),
            ],
            axis=1,
        )

    def decode(self, x_num: np.ndarray, x_cat: np.ndarray) -> pd.DataFrame:
        # padded second category of a single-token vocabulary folds back onto the token
        u = np.minimum(x_cat[:, 0], len(self.users) - 1)
        k = np.minimum(x_cat[:, 1], len(self.skills) - 1)
        return canonicalize(
            pd.DataFrame(
                {
                    "user_id": self.users.decode(u),
                    "skill_id": self.skills.decode(k),
                    "correct": x_cat[:, 2],
                    "overlap_time": self.transform.inverse(x_num)[:, 0],
                }
            )
        )

    def to_dict(self) -> dict:
        return {"users": self.users.tokens, "skills": self.skills.tokens, "transform": self.transform.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TabularCodec":
        return cls(Vocabulary(list(d["users"])), Vocabulary(list(d["skills"])), QuantileTransform.from_dict(d["transform"]))


@dataclass
class Generator:
    params: DenoiserParams
    codec: TabularCodec
    config: GeneratorConfig
    loss_curve: list[float] = field(default_factory=list)

    @property
    def schedule(self) -> DiffusionSchedule:
        return self.config.schedule()


def train_denoiser(
    x_num: np.ndarray, x_cat: np.ndarray, schema: TabSchema, config: GeneratorConfig
) -> tuple[DenoiserParams, DiffusionSchedule, list[float]]:
    """Adam on the combined loss for ``config.steps`` mini-batches drawn with replacement."""
    n = len(x_cat)
    if n < 100:
        raise ValueError(f"need at least 100 training rows, got {n}")
    schedule = config.schedule()
    rng = Rng(config.seed)
    params = init_denoiser(schema, config.hidden, config.time_dim, rng.child(0))
    arrays = params.as_dict()
    state = AdamState.for_params(arrays, learning_rate=config.learning_rate)
    batch_rng = rng.child(1)
    curve = []
    x_num = np.asarray(x_num, dtype=np.float64).reshape(n, schema.d_num)
    for step in range(config.steps):
        idx = batch_rng.integers(0, n, size=min(config.batch_size, n))
        loss, grads = tabddpm_loss(params, x_num[idx], x_cat[idx], schedule, batch_rng, with_grads=True)
        if not np.isfinite(loss.total):
            raise TrainingError(f"non-finite diffusion loss at step {step}")
        adam_step(arrays, grads, state)
        curve.append(loss.total)
    return params.with_arrays(arrays), schedule, curve


def tabddpm_train(interactions: pd.DataFrame, config: GeneratorConfig) -> Generator:
    codec, x_num, x_cat = TabularCodec.fit(interactions)
    params, _, curve = train_denoiser(x_num, x_cat, codec.schema, config)
    return Generator(params, codec, config, curve)


def sample_rows(
    params: DenoiserParams, schedule: DiffusionSchedule, n: int, rng: Rng
) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling of ``n`` rows in the model's encoded space."""
    s = params.schema
    x = rng.normal((n, s.d_num))
    x_cat = np.stack([rng.integers(0, K, size=n) for K in s.categories], axis=1) if s.C else np.zeros((n, 0), np.int64)
    post_var = schedule.posterior_variance
    for t in range(schedule.T, 0, -1):
        eps_hat, logits = _split_heads(s, _mlp(params, x, x_cat, np.full(n, t)))
        a, ab, b = schedule.alpha[t], schedule.alpha_bar[t], schedule.beta[t]
        mean = (x - b / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
        x = mean + np.sqrt(post_var[t]) * rng.normal(mean.shape) if t > 1 else mean
        new_cat = np.empty_like(x_cat)
        for i, K in enumerate(s.categories):
            pi = softmax(logits[i], axis=1)
            if t > 1:
                pi = multinomial_posterior(one_hot(x_cat[:, i], K), pi, t, schedule)
            new_cat[:, i] = rng.categorical(pi)
        x_cat = new_cat
    return x, x_cat


def tabddpm_sample(generator: Generator, n: int, seed: int) -> pd.DataFrame:
    """``n`` synthetic interactions.

    Rows come from fixed-size blocks, each with its own stream derived from ``seed``
    and the block index, so the first ``m`` rows of a request for ``n >= m`` rows equal
    a request for ``m`` rows.
    """
    from .data import empty_interactions

    if n <= 0:
        return empty_interactions()
    block = generator.config.sample_block
    schedule = generator.schedule
    root = Rng(seed)
    nums, cats = [], []
    for b in range(-(-n // block)):
        x_num, x_cat = sample_rows(generator.params, schedule, block, root.child(b))
        nums.append(x_num)
        cats.append(x_cat)
    x_num = np.concatenate(nums)[:n]
    x_cat = np.concatenate(cats)[:n]
    return generator.codec.decode(x_num, x_cat)


# --- checkpoints --------------------------------------------------------------------


def save_generator(path: str | Path, gen: Generator) -> str:
    """Write a JSON checkpoint and return its sha256."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "kind": "tabddpm",
        "config": asdict(gen.config),
        "schema": asdict(gen.params.schema),
        "codec": gen.codec.to_dict(),
        "weights": [{"shape": list(w.shape), "data": w.ravel().tolist()} for w in gen.params.weights],
        "biases": [b.tolist() for b in gen.params.biases],
        "loss_curve": list(gen.loss_curve),
    }
    blob = json.dumps(doc).encode()
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_generator(path: str | Path) -> Generator:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION or doc.get("kind") != "tabddpm":
        raise ModelError(f"{path} is not a version-{CHECKPOINT_VERSION} generator checkpoint")
    config = GeneratorConfig(**doc["config"])
    schema = TabSchema(**doc["schema"])
    weights = [np.asarray(w["data"], dtype=np.float64).reshape(w["shape"]) for w in doc["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
    params = DenoiserParams(weights, biases, schema, config.time_dim)
    return Generator(params, TabularCodec.from_dict(doc["codec"]), config, list(doc.get("loss_curve", [])))
