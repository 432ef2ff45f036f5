"""Small numerical toolkit for the actor and critic.

Dense feed-forward networks with hand-written backpropagation, a Gaussian
policy head, Fourier-basis state features, the Huber loss and seeded random
streams. Everything is plain numpy; vectors are 1-D float64 arrays and
matrices are 2-D float64 arrays.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

@dataclass
class Streams:
    """Independent generators for environment noise, policy sampling and search."""

    seed: int
    env: np.random.Generator
    policy: np.random.Generator
    search: np.random.Generator
    init: np.random.Generator


def make_streams(seed: int) -> Streams:
    env, policy, search, init = np.random.SeedSequence(seed).spawn(4)
    return Streams(
        seed=seed,
        env=np.random.default_rng(env),
        policy=np.random.default_rng(policy),
        search=np.random.default_rng(search),
        init=np.random.default_rng(init),
    )


# ---------------------------------------------------------------------------
# Fourier basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FourierBasisConfig:
    order: int
    coupled: bool
    input_dim: int
    input_bounds: tuple  # ((low, high), ...) one pair per input dimension

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("Fourier order must be >= 1")
        if len(self.input_bounds) != self.input_dim:
            raise ValueError("need one (low, high) pair per input dimension")
        for low, high in self.input_bounds:
            if not low < high:
                raise ValueError(f"bad bounds ({low}, {high})")

    @property
    def n_features(self) -> int:
        if self.coupled:
            return (self.order + 1) ** self.input_dim
        return 1 + self.order * self.input_dim


class FourierBasis:
    """Precomputed coefficient matrix for repeated featurization."""

    def __init__(self, cfg: FourierBasisConfig):
        self.cfg = cfg
        bounds = np.asarray(cfg.input_bounds, dtype=np.float64)
        self.low = bounds[:, 0]
        self.span = bounds[:, 1] - bounds[:, 0]
        n, m = cfg.order, cfg.input_dim
        if cfg.coupled:
            coeffs = np.array(list(itertools.product(range(n + 1), repeat=m)), dtype=np.float64)
        else:
            coeffs = np.zeros((1 + n * m, m))
            for dim in range(m):
                for c in range(1, n + 1):
                    coeffs[1 + dim * n + (c - 1), dim] = c
        self.coeffs = coeffs

    @property
    def n_features(self) -> int:
        return self.coeffs.shape[0]

    def __call__(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.cfg.input_dim,):
            raise ValueError(f"state has shape {state.shape}, expected ({self.cfg.input_dim},)")
        s = (state - self.low) / self.span
        tol = 1e-9
        if np.any(s < -tol / self.span) or np.any(s > 1 + tol / self.span):
            raise ValueError(f"state {state} outside the basis bounds")
        s = np.clip(s, 0.0, 1.0)
        return np.cos(np.pi * (self.coeffs @ s))


def fourier_features(state, cfg: FourierBasisConfig) -> np.ndarray:
    return FourierBasis(cfg)(state)


# ---------------------------------------------------------------------------
# feed-forward networks
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    """Weights ``W[l]`` have shape (out, in); a layer computes ``W @ x + b``."""

    layer_sizes: tuple
    weights: list
    biases: list
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        if self.hidden_activation != "relu":
            raise ValueError("only relu hidden layers are supported")
        if self.output_activation not in ("identity", "tanh"):
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != expected or b.shape != (expected[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape}, expected {expected}")

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator, output_activation="identity"):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(tuple(layer_sizes), weights, biases, output_activation=output_activation)

    @classmethod
    def zeros_like(cls, p: "MlpParams") -> "MlpParams":
        return cls(p.layer_sizes, [np.zeros_like(w) for w in p.weights],
                   [np.zeros_like(b) for b in p.biases], p.hidden_activation, p.output_activation)

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.hidden_activation,
                         self.output_activation)

    def flat(self) -> np.ndarray:
        """Per layer: the weight matrix row-major, then the bias."""
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    @classmethod
    def from_flat(cls, layer_sizes, flat, output_activation="identity") -> "MlpParams":
        weights, biases, off = [], [], 0
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(flat[off:off + n_in * n_out].reshape(n_out, n_in).copy())
            off += n_in * n_out
            biases.append(flat[off:off + n_out].copy())
            off += n_out
        if off != len(flat):
            raise ValueError(f"flat vector has {len(flat)} entries, layers need {off}")
        return cls(tuple(layer_sizes), weights, biases, output_activation=output_activation)

    def allclose(self, other: "MlpParams", atol=0.0) -> bool:
        return all(np.allclose(a, b, rtol=0, atol=atol) for a, b in
                   zip(self.weights + self.biases, other.weights + other.biases))


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)     # pre-activation of each layer
    output: np.ndarray | None = None


def mlp_forward(p: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on one input (1-D) or a batch (2-D, one row each)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.layer_sizes[0]:
        raise ValueError(f"input dimension {x.shape[-1]} != {p.layer_sizes[0]}")
    cache = ForwardCache()
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        cache.inputs.append(h)
        z = h @ w.T + b
        cache.pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
        elif p.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
    cache.output = h
    return h, cache


def mlp_grad(p: MlpParams, cache: ForwardCache, upstream) -> MlpParams:
    """Gradient of ``sum(output * upstream)`` with respect to every parameter.

    For a batched forward pass the per-row contributions are summed.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {cache.output.shape}")
    if p.output_activation == "tanh":
        g = g * (1.0 - cache.output ** 2)
    n = len(p.weights)
    dws, dbs = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        h = cache.inputs[i]
        if g.ndim == 1:
            dws[i] = np.outer(g, h)
            dbs[i] = g.copy()
        else:
            dws[i] = g.T @ h
            dbs[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ p.weights[i]) * (cache.pre[i - 1] > 0.0)
    return MlpParams(p.layer_sizes, dws, dbs, p.hidden_activation, p.output_activation)


def sgd_step(p: MlpParams, grad: MlpParams, lr: float) -> MlpParams:
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for a in grad.weights + grad.biases:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite gradient entry")
    return MlpParams(
        p.layer_sizes,
        [w - lr * dw for w, dw in zip(p.weights, grad.weights)],
        [b - lr * db for b, db in zip(p.biases, grad.biases)],
        p.hidden_activation,
        p.output_activation,
    )


# ---------------------------------------------------------------------------
# losses and the Gaussian head
# ---------------------------------------------------------------------------

def huber_loss_grad(pred: float, target: float, delta: float = 1.0) -> tuple[float, float]:
    """Huber loss of ``pred - target`` and its derivative with respect to ``pred``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not (math.isfinite(pred) and math.isfinite(target)):
        raise FloatingPointError("non-finite Huber input")
    e = pred - target
    if abs(e) <= delta:
        return 0.5 * e * e, e
    return delta * (abs(e) - 0.5 * delta), math.copysign(delta, e)


@dataclass
class GaussianPolicyParams:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), self.mu.shape)
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be strictly positive")


def gaussian_sample(p: GaussianPolicyParams, rng: np.random.Generator) -> np.ndarray:
    return p.mu + p.sigma * rng.standard_normal(p.mu.shape)


def gaussian_log_prob_grad(p: GaussianPolicyParams, a_hat) -> tuple[float, np.ndarray, np.ndarray]:
    """Log density of ``a_hat`` plus its gradients with respect to mu and sigma."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    diff = a_hat - p.mu
    inv_var = 1.0 / (p.sigma * p.sigma)
    logp = float(np.sum(-0.5 * diff * diff * inv_var - np.log(p.sigma)) - LOG_SQRT_2PI * diff.size)
    dmu = diff * inv_var
    dsigma = diff * diff * inv_var / p.sigma - 1.0 / p.sigma
    return logp, dmu, dsigma


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))
