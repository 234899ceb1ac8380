"""Small feed-forward networks with hand-written backpropagation.

Used twice: as the supervised generator ``y -> phi`` trained with mean squared
error on labeled pairs, and as a time-conditioned score network trained with
denoising score matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DivergenceError, ParameterError
from .score_diffusion import DiffusionSchedule, LabeledPairs

__all__ = [
    "ACTIVATIONS",
    "MLP",
    "Architecture",
    "TrainConfig",
    "TrainResult",
    "ScoreNetwork",
    "init_mlp",
    "mlp_forward",
    "mse_loss_and_grads",
    "mlp_grad_check",
    "Adam",
    "mlp_train_mse",
    "train_score_matching",
    "nn_sample",
]

ACTIVATIONS = ("tanh", "softplus")
WEIGHTINGS = ("beta2", "constant")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.logaddexp(0.0, z)


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    return 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic sigmoid, overflow-free


@dataclass
class MLP:
    """Weights are stored as (out, in) matrices; the last layer is affine."""

    layer_sizes: tuple
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ParameterError("layer count does not match layer_sizes")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_sizes[i + 1], self.layer_sizes[i]) or b.shape != (self.layer_sizes[i + 1],):
                raise ParameterError(f"layer {i} has incompatible shapes {W.shape}, {b.shape}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MLP":
        return MLP(self.layer_sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                   self.activation)

    def __call__(self, x):
        return mlp_forward(self, x)

    def to_dict(self) -> dict:
        flat = np.concatenate([p.ravel() for p in self.params()]) if self.weights else np.empty(0)
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation, "params": flat.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        sizes = [int(s) for s in d["layer_sizes"]]
        flat = np.asarray(d["params"], dtype=float)
        weights, biases, pos = [], [], 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[pos : pos + n_in * n_out].reshape(n_out, n_in))
            pos += n_in * n_out
            biases.append(flat[pos : pos + n_out].copy())
            pos += n_out
        if pos != flat.size:
            raise ParameterError("parameter vector length does not match layer sizes")
        return cls(tuple(sizes), weights, biases, d.get("activation", "tanh"))


@dataclass(frozen=True)
class Architecture:
    hidden: tuple = (64, 64, 64)
    activation: str = "tanh"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 128
    rng_seed: int = 0
    weighting: str = "beta2"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.epochs) < 0:
            raise ParameterError(f"epochs must be nonnegative, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ParameterError(f"batch_size must be positive, got {self.batch_size}")
        if self.weighting not in WEIGHTINGS:
            raise ParameterError(f"unknown weighting {self.weighting!r}")


@dataclass
class TrainResult:
    net: MLP
    losses: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def init_mlp(layer_sizes: Sequence[int], activation: str = "tanh", seed=0) -> MLP:
    """Glorot-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ParameterError(f"invalid layer sizes {sizes}")
    weights = [rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_out, n_in))
               for n_in, n_out in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(n) for n in sizes[1:]]
    return MLP(tuple(sizes), weights, biases, activation)


def _forward(net: MLP, X):
    """Forward pass keeping pre-activations and activations for backprop."""
    acts, pre = [X], []
    a = X
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = z if i == last else _act(net.activation, z)
        acts.append(a)
    return acts, pre


def mlp_forward(net: MLP, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != net.n_in:
        raise ParameterError(f"input width {X.shape[1]} does not match network input {net.n_in}")
    out = _forward(net, X)[0][-1]
    return out[0] if single else out


def _backward(net: MLP, acts, pre, grad_out):
    grads_W, grads_b = [], []
    g = grad_out
    for i in range(len(net.weights) - 1, -1, -1):
        if i != len(net.weights) - 1:
            g = g * _act_grad(net.activation, pre[i], acts[i + 1])
        grads_W.append(g.T @ acts[i])
        grads_b.append(g.sum(axis=0))
        if i > 0:
            g = g @ net.weights[i]
    grads_W.reverse()
    grads_b.reverse()
    return [p for pair in zip(grads_W, grads_b) for p in pair]


def mse_loss_and_grads(net: MLP, X, Y, sample_weights=None):
    """Mean over samples of the (weighted) squared error summed over outputs.

    Returns ``(loss, grads)`` with ``grads`` ordered like :meth:`MLP.params`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    # Overflow shows up as a non-finite loss, which training reports.
    with np.errstate(over="ignore", invalid="ignore"):
        acts, pre = _forward(net, X)
        r = acts[-1] - Y
        n = X.shape[0]
        if sample_weights is None:
            loss = float(np.sum(r * r) / n)
            grad_out = 2.0 * r / n
        else:
            w = np.asarray(sample_weights, dtype=float)[:, None]
            loss = float(np.sum(w * r * r) / n)
            grad_out = 2.0 * w * r / n
        return loss, _backward(net, acts, pre, grad_out)


def mlp_grad_check(net: MLP, probe_batch, h: float = 1e-5) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    ``probe_batch`` is ``(inputs, targets)``; the relative error of a scalar
    pair is ``|a - b| / max(|a|, |b|)`` (zero when both vanish).
    """
    X, Y = probe_batch
    _, grads = mse_loss_and_grads(net, X, Y)
    worst = 0.0
    probe = net.copy()
    for p, g in zip(probe.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            lp, _ = mse_loss_and_grads(probe, X, Y)
            flat[j] = old - h
            lm, _ = mse_loss_and_grads(probe, X, Y)
            flat[j] = old
            fd = (lp - lm) / (2.0 * h)
            scale = max(abs(fd), abs(gflat[j]))
            if scale > 0:
                worst = max(worst, abs(fd - gflat[j]) / scale)
    return worst


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _layer_sizes(n_in, n_out, arch: Architecture):
    return (int(n_in), *[int(h) for h in arch.hidden], int(n_out))


def mlp_train_mse(pairs: LabeledPairs, arch: Optional[Architecture] = None,
                  cfg: Optional[TrainConfig] = None) -> TrainResult:
    """Fit ``outputs ~ net(inputs)`` by mini-batch Adam on the mean squared error."""
    arch = arch or Architecture()
    cfg = cfg or TrainConfig()
    X, Y = np.asarray(pairs.inputs, dtype=float), np.asarray(pairs.outputs, dtype=float)
    if X.shape[0] < 1:
        raise ParameterError("training needs at least one pair")
    rng = np.random.default_rng(cfg.rng_seed)
    net = init_mlp(_layer_sizes(X.shape[1], Y.shape[1], arch), arch.activation, rng)
    opt = Adam(net.params(), cfg.learning_rate)
    losses = []
    n = X.shape[0]
    for epoch in range(int(cfg.epochs)):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            loss, grads = mse_loss_and_grads(net, X[idx], Y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, f"non-finite loss in epoch {epoch}")
            opt.step(net.params(), grads)
            total += loss * idx.size
        losses.append(total / n)
    return TrainResult(net, losses)


class ScoreNetwork:
    """Time-conditioned score model ``s(x, t) = net([x, t])`` usable as a score function."""

    def __init__(self, net: MLP):
        self.net = net

    @property
    def dim(self) -> int:
        return self.net.n_out

    def __call__(self, x, t, step=0):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inp = np.hstack([x, np.full((x.shape[0], 1), float(t))])
        return mlp_forward(self.net, inp)

    def to_dict(self) -> dict:
        return {"kind": "score_network", **self.net.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreNetwork":
        return cls(MLP.from_dict(d))


def train_score_matching(data, arch: Optional[Architecture] = None, cfg: Optional[TrainConfig] = None,
                         schedule: Optional[DiffusionSchedule] = None):
    """Denoising score matching on the forward process.

    Each mini-batch draws ``t ~ U(t_min, t_max)`` and ``eps ~ N(0, I)``, forms
    ``x_t = alpha_t x0 + beta_t eps`` and regresses the network onto
    ``-eps / beta_t`` with weight ``beta_t^2`` (or 1). Returns
    ``(ScoreNetwork, losses)``.
    """
    arch = arch or Architecture()
    cfg = cfg or TrainConfig()
    s = schedule or DiffusionSchedule()
    X0 = np.atleast_2d(np.asarray(data, dtype=float))
    n, k = X0.shape
    if n < 1:
        raise ParameterError("score matching needs data")
    rng = np.random.default_rng(cfg.rng_seed)
    net = init_mlp(_layer_sizes(k + 1, k, arch), arch.activation, rng)
    opt = Adam(net.params(), cfg.learning_rate)
    losses = []
    for epoch in range(int(cfg.epochs)):
        perm = rng.permutation(n)
        total = 0.0
        for st in range(0, n, cfg.batch_size):
            x0 = X0[perm[st : st + cfg.batch_size]]
            m = x0.shape[0]
            t = rng.uniform(s.t_min, s.t_max, size=m)
            eps = rng.standard_normal((m, k))
            beta = np.sqrt(s.beta2(t))
            xt = s.alpha(t)[:, None] * x0 + beta[:, None] * eps
            target = -eps / beta[:, None]
            w = s.beta2(t) if cfg.weighting == "beta2" else None
            loss, grads = mse_loss_and_grads(net, np.hstack([xt, t[:, None]]), target, w)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, f"non-finite loss in epoch {epoch}")
            opt.step(net.params(), grads)
            total += loss * m
        losses.append(total / n)
    return ScoreNetwork(net), losses


def nn_sample(net: MLP, M: int, seed=0) -> np.ndarray:
    """Push ``M`` standard-normal draws through ``net``."""
    M = int(M)
    if M < 0:
        raise ParameterError(f"M must be nonnegative, got {M}")
    if M == 0:
        return np.empty((0, net.n_out))
    rng = np.random.default_rng(seed)
    return mlp_forward(net, rng.standard_normal((M, net.n_in)))
