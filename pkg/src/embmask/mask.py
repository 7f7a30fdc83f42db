"""Gumbel noise and the temperature-controlled embedding mask.

The mask generator network G maps an input x to logits whose sigmoid gives
per-dimension drop probabilities p in (0,1)^d. A soft keep-mask is then

    m_i = exp((log(1-p_i) + h_i)/tau)
          / [exp((log(1-p_i) + h_i)/tau) + exp((log p_i + h'_i)/tau)]

with h, h' standard Gumbel noise -log(-log u), u ~ Uniform(0,1). Computed in
log space as sigmoid(((log(1-p) - log p) + (h - h')) / tau), which cannot
overflow for any tau >= 1e-4. As tau -> 0 the mask approaches a Bernoulli
draw with keep probability 1-p; tau is the only knob controlling how discrete
the relaxation is. Gradients flow to G through p only; noise is a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeMismatchError
from .nn import Mlp

Array = np.ndarray

INFERENCE_MODES = ("noise_free", "expected", "sample_avg")


@dataclass
class MaskGenConfig:
    tau: float = 0.1
    inference_mode: str = "noise_free"
    sample_count: int = 8  # S, only used by sample_avg
    clamp_eps: float = 1e-12

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.inference_mode not in INFERENCE_MODES:
            raise ConfigError(f"unknown inference mode {self.inference_mode!r}")
        if self.inference_mode == "sample_avg" and self.sample_count < 1:
            raise ConfigError("sample_avg needs sample_count >= 1")
        if not (0.0 < self.clamp_eps < 0.5):
            raise ConfigError(f"clamp_eps out of range: {self.clamp_eps}")


@dataclass
class MaskSample:
    """One stochastic mask draw: probabilities, the noise used, and the mask.

    ``m`` stays a graph tensor so the EMG objective can differentiate
    through it; ``p`` likewise. Noise vectors are raw arrays (constants).
    """

    p: T.Tensor
    h: Array | None
    h_prime: Array | None
    m: T.Tensor


def gumbel_sample(
    rng: np.random.Generator, shape: tuple[int, ...], clamp_eps: float = 1e-12
) -> Array:
    """i.i.d. standard Gumbel draws -log(-log u), u clamped away from {0,1}."""
    u = np.clip(rng.random(shape), clamp_eps, 1.0 - clamp_eps)
    return -np.log(-np.log(u))


_P_EPS = 1e-12  # probabilities clamped to [eps, 1-eps] before logs


def gumbel_softmax_mask(
    p: T.Tensor | Array, h: Array, h_prime: Array, tau: float
) -> T.Tensor | Array:
    """Soft keep-mask from drop probabilities p and Gumbel noise h, h'.

    Accepts either a graph tensor (differentiable wrt p) or a raw array
    (returns a raw array).
    """
    if isinstance(p, T.Tensor):
        pc = T.clip(p, _P_EPS, 1.0 - _P_EPS)
        logits = T.sub(T.log(T.sub(1.0, pc)), T.log(pc))
        noise = np.asarray(h, dtype=np.float64) - np.asarray(h_prime, dtype=np.float64)
        if noise.shape != pc.shape:
            raise ShapeMismatchError(
                f"noise shape {noise.shape} != p shape {pc.shape}"
            )
        m = T.sigmoid(T.mul(T.add(logits, T.Tensor(noise)), 1.0 / tau))
        # keep the mask strictly inside (0,1) even where sigmoid saturates
        return T.clip(m, _P_EPS, 1.0 - _P_EPS)
    p_arr = np.clip(np.asarray(p, dtype=np.float64), _P_EPS, 1.0 - _P_EPS)
    z = (np.log1p(-p_arr) - np.log(p_arr) + np.asarray(h) - np.asarray(h_prime)) / tau
    return np.clip(T.sigmoid_np(z), _P_EPS, 1.0 - _P_EPS)


def training_mask(
    generator: Mlp,
    x: Array,
    leaves,
    cfg: MaskGenConfig,
    rng: np.random.Generator,
) -> MaskSample:
    """Stochastic mask for a training batch; fresh Gumbel noise per call."""
    logits = generator.forward(T.Tensor(x), leaves)
    p = T.sigmoid(logits)
    h = gumbel_sample(rng, p.shape, cfg.clamp_eps)
    h_prime = gumbel_sample(rng, p.shape, cfg.clamp_eps)
    m = gumbel_softmax_mask(p, h, h_prime, cfg.tau)
    return MaskSample(p=p, h=h, h_prime=h_prime, m=m)


def inference_mask(
    p: Array, cfg: MaskGenConfig, rng: np.random.Generator | None = None
) -> Array:
    """Deterministic (or seed-scoped averaged) mask for evaluation.

    noise_free: the mask formula with h = h' = 0, i.e.
        m_i = (1-p_i)^(1/tau) / ((1-p_i)^(1/tau) + p_i^(1/tau)),
    which reduces to exactly 1-p at tau = 1 (special-cased to keep the
    identity exact in floating point).
    expected: the Bernoulli keep probability 1-p.
    sample_avg: mean of sample_count stochastic masks under the given rng.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), _P_EPS, 1.0 - _P_EPS)
    if cfg.inference_mode == "noise_free":
        if cfg.tau == 1.0:
            return 1.0 - p
        a = np.log1p(-p) / cfg.tau
        b = np.log(p) / cfg.tau
        return np.clip(np.exp(a - np.logaddexp(a, b)), _P_EPS, 1.0 - _P_EPS)
    if cfg.inference_mode == "expected":
        return 1.0 - p
    if rng is None:
        raise ConfigError("sample_avg inference mode requires an rng")
    acc = np.zeros_like(p)
    for _ in range(cfg.sample_count):
        h = gumbel_sample(rng, p.shape, cfg.clamp_eps)
        hp = gumbel_sample(rng, p.shape, cfg.clamp_eps)
        acc += gumbel_softmax_mask(p, h, hp, cfg.tau)
    return acc / cfg.sample_count


def apply_mask(m, z):
    """Elementwise product m * z; works on tensors or raw arrays."""
    if isinstance(m, T.Tensor) or isinstance(z, T.Tensor):
        return T.mul(m, z)
    m = np.asarray(m, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if m.shape != z.shape:
        raise ShapeMismatchError(f"apply_mask: shapes {m.shape} and {z.shape}")
    return m * z


def drop_probabilities(generator: Mlp, x: Array) -> Array:
    """p = sigmoid(G(x)) on raw arrays, for evaluation paths."""
    return T.sigmoid_np(generator.forward_np(x))
