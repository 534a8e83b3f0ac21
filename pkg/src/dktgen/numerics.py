"""Dense linear algebra helpers, Adam, seeded random streams and gradient checking.

Matrices are plain ``float64`` numpy arrays; parameter sets are ``dict[str, ndarray]``.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

Params = dict[str, np.ndarray]


class ShapeError(ValueError):
    """Operands with non-conforming dimensions."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite value."""


def affine(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``W @ x + b``.

    ``x`` may be a single vector ``(n,)`` or a row batch ``(m, n)``; the batched form
    returns ``(m, rows)``.
    """
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(
            f"cannot apply W{W.shape} with b{b.shape} to x{x.shape}"
        )
    if x.ndim == 1:
        return W @ x + b
    return x @ W.T + b


class Rng:
    """Counter-based (Philox) random stream.

    Gaussian draws use Box-Muller on the uniform stream and categorical draws invert
    the CDF, so every variate is a deterministic function of ``seed`` and the number
    of uniforms consumed so far.
    """

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *key: int) -> "Rng":
        """Independent stream derived from this one's seed and ``key``."""
        return Rng(self.seed, self.spawn_key + tuple(key))

    def uniform(self, size=None) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        size = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(size))
        half = (n + 1) // 2
        u = self._gen.random(2 * half)
        r = np.sqrt(-2.0 * np.log1p(-u[:half]))
        theta = 2.0 * np.pi * u[half:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Uniform integers on ``[low, high)``."""
        return self._gen.integers(low, high, size=size)

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """One index per row of ``probs`` (rows must sum to 1)."""
        probs = np.atleast_2d(probs)
        cdf = np.cumsum(probs, axis=1)
        u = self._gen.random(probs.shape[0]) * cdf[:, -1]
        idx = (cdf <= u[:, None]).sum(axis=1)
        return np.minimum(idx, probs.shape[1] - 1)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def log_normal(self, mean: float, sigma: float, size) -> np.ndarray:
        return np.exp(mean + sigma * self.normal(size))


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Params = field(default_factory=dict)
    second_moment: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(p, dtype=np.float64)
            state.second_moment[name] = np.zeros_like(p, dtype=np.float64)
        return state


def adam_step(params: Params, grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update of ``params`` and ``state``, in place."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name}{g.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step_count += 1
    bc1 = 1.0 - state.beta1**state.step_count
    bc2 = 1.0 - state.beta2**state.step_count
    for name, g in grads.items():
        m = state.first_moment.setdefault(name, np.zeros_like(params[name]))
        v = state.second_moment.setdefault(name, np.zeros_like(params[name]))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Params, max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def grad_check(
    loss_fn: Callable[[Params], float],
    params: Mapping[str, np.ndarray],
    analytic_grads: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    The relative error of one coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    worst = 0.0
    for name, p in work.items():
        flat = p.reshape(-1)
        ga = np.asarray(analytic_grads[name], dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(work)
            flat[i] = orig - h
            down = loss_fn(work)
            flat[i] = orig
            num = (up - down) / (2.0 * h)
            err = abs(ga[i] - num) / max(1e-8, abs(ga[i]) + abs(num))
            worst = max(worst, err)
    return worst
