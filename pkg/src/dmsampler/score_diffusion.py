"""Forward-SDE schedule, Monte-Carlo score estimation and reverse-time integration.

Schedule: ``alpha_t = 1 - t`` and ``beta_t^2 = t``, so the forward drift is
``b(t) x`` with ``b = -1/(1-t)`` and the squared diffusion is
``sigma^2(t) = (1+t)/(1-t)``. Time runs backwards from ``t_max`` to ``t_min``
during sampling.

A score function is any callable ``score_fn(x, t, step)`` taking an (M, k)
state, the scalar time and the integer grid step, returning an (M, k) array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DivergenceError, ParameterError

__all__ = [
    "DiffusionSchedule",
    "ScoreConfig",
    "LabeledPairs",
    "INTEGRATORS",
    "schedule_eval",
    "conditional_score",
    "mc_weights",
    "mc_score",
    "MCScore",
    "reverse_ode_integrate",
    "reverse_sde_integrate",
    "reverse_integrate",
    "generate_labeled_pairs",
]

INTEGRATORS = ("ode_rk4", "ode_euler", "sde_euler_maruyama")
GRIDS = ("sqrt", "uniform")
DEFAULT_MINIBATCH = 256

ScoreFn = Callable[[np.ndarray, float, int], np.ndarray]


@dataclass(frozen=True)
class DiffusionSchedule:
    t_min: float = 1e-3
    t_max: float = 1.0 - 1e-3

    def __post_init__(self):
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ParameterError(f"need 0 < t_min < t_max < 1, got [{self.t_min}, {self.t_max}]")

    def alpha(self, t):
        return 1.0 - t

    def beta2(self, t):
        return t

    def b(self, t):
        return -1.0 / (1.0 - t)

    def sigma2(self, t):
        return (1.0 + t) / (1.0 - t)

    def check(self, t: float) -> float:
        t = float(t)
        # Allow round-off from grid arithmetic at the ends.
        tol = 1e-12
        if not (self.t_min - tol <= t <= self.t_max + tol):
            raise ParameterError(f"t = {t} outside [{self.t_min}, {self.t_max}]")
        return t

    def grid(self, steps: int, kind: str = "sqrt") -> np.ndarray:
        """Decreasing time grid from ``t_max`` to ``t_min`` with ``steps`` intervals.

        ``"uniform"`` spaces the nodes evenly in ``t``; ``"sqrt"`` spaces them
        evenly in ``beta_t = sqrt(t)``, which refines the grid near ``t_min``
        where the flow Jacobian grows like ``1/(2t)``.
        """
        n = int(steps) + 1
        if kind == "uniform":
            return np.linspace(self.t_max, self.t_min, n)
        if kind == "sqrt":
            g = np.linspace(np.sqrt(self.t_max), np.sqrt(self.t_min), n) ** 2
            g[0], g[-1] = self.t_max, self.t_min
            return g
        raise ParameterError(f"unknown time grid {kind!r}")


def schedule_eval(t: float, schedule: Optional[DiffusionSchedule] = None):
    """``(alpha, beta, b, sigma^2)`` at time ``t``."""
    s = schedule or DiffusionSchedule()
    t = s.check(t)
    return s.alpha(t), float(np.sqrt(s.beta2(t))), s.b(t), s.sigma2(t)


@dataclass(frozen=True)
class ScoreConfig:
    minibatch_size: int = DEFAULT_MINIBATCH
    rng_seed: int = 0
    steps: int = 500
    integrator: str = "ode_rk4"
    grid: str = "sqrt"

    def __post_init__(self):
        if self.grid not in GRIDS:
            raise ParameterError(f"unknown time grid {self.grid!r}; choose from {GRIDS}")
        if int(self.steps) < 10:
            raise ParameterError(f"steps must be >= 10, got {self.steps}")
        if int(self.minibatch_size) < 1:
            raise ParameterError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if self.integrator not in INTEGRATORS:
            raise ParameterError(f"unknown integrator {self.integrator!r}; choose from {INTEGRATORS}")


@dataclass(frozen=True)
class LabeledPairs:
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ParameterError("inputs and outputs must have the same number of rows")

    def __len__(self):
        return self.inputs.shape[0]


def conditional_score(x_t, x0, t: float, schedule: Optional[DiffusionSchedule] = None):
    """Gradient of ``log f(x_t | x0)`` for the Gaussian transition kernel."""
    s = schedule or DiffusionSchedule()
    if not 0.0 < t < 1.0:
        raise ParameterError(f"conditional score is singular at t = {t}")
    x_t = np.asarray(x_t, dtype=float)
    return -(x_t - s.alpha(t) * np.asarray(x0, dtype=float)) / s.beta2(t)


def mc_weights(data_batch, x_t, t: float, schedule: Optional[DiffusionSchedule] = None):
    """Normalized mixture weights of each data point given noisy states ``x_t``.

    Returns an (M, B) matrix whose rows sum to one, computed in log space.
    """
    s = schedule or DiffusionSchedule()
    xb = np.atleast_2d(np.asarray(data_batch, dtype=float))
    x = np.atleast_2d(np.asarray(x_t, dtype=float))
    a, b2 = s.alpha(t), s.beta2(t)
    # |x - a x_n|^2 expanded so the pairwise part is a single matrix product.
    sq = (x * x).sum(axis=1)[:, None] + a * a * (xb * xb).sum(axis=1)[None, :] - 2.0 * a * (x @ xb.T)
    logw = -np.maximum(sq, 0.0) / (2.0 * b2)
    logw -= logsumexp(logw, axis=1, keepdims=True)
    return np.exp(logw)


def _mc_score_batch(xb, x, t, s):
    w = mc_weights(xb, x, t, s)
    return -(x - s.alpha(t) * (w @ xb)) / s.beta2(t)


def _draw_minibatch(n: int, size: int, seed: int, step: int) -> Optional[np.ndarray]:
    size = min(int(size), n)
    if size >= n:
        return None
    rng = np.random.default_rng([int(seed), int(step)])
    return np.sort(rng.choice(n, size=size, replace=False))


def mc_score(data, x_t, t: float, cfg: Optional[ScoreConfig] = None, step: int = 0,
             schedule: Optional[DiffusionSchedule] = None):
    """Monte-Carlo estimate of the score of the noised data density.

    The mini-batch is drawn without replacement from a seed derived from
    ``(cfg.rng_seed, step)``; a batch at least as large as the data uses every
    point.
    """
    s = schedule or DiffusionSchedule()
    cfg = cfg or ScoreConfig()
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise ParameterError("score estimation needs at least one data point")
    if not 0.0 < t < 1.0:
        raise ParameterError(f"score is singular at t = {t}")
    x = np.asarray(x_t, dtype=float)
    single = x.ndim == 1
    idx = _draw_minibatch(data.shape[0], cfg.minibatch_size, cfg.rng_seed, step)
    xb = data if idx is None else data[idx]
    out = _mc_score_batch(xb, np.atleast_2d(x), t, s)
    return out[0] if single else out


class MCScore:
    """Score callable backed by :func:`mc_score` over a fixed dataset."""

    def __init__(self, data, cfg: Optional[ScoreConfig] = None, schedule: Optional[DiffusionSchedule] = None,
                 chunk: int = 2048):
        self.data = np.atleast_2d(np.asarray(data, dtype=float))
        if self.data.shape[0] == 0:
            raise ParameterError("score estimation needs at least one data point")
        self.cfg = cfg or ScoreConfig()
        self.schedule = schedule or DiffusionSchedule()
        self.chunk = chunk
        self._batch_step = None
        self._batch = None

    def _batch_for(self, step):
        if step != self._batch_step:
            idx = _draw_minibatch(self.data.shape[0], self.cfg.minibatch_size, self.cfg.rng_seed, step)
            self._batch = self.data if idx is None else self.data[idx]
            self._batch_step = step
        return self._batch

    def __call__(self, x, t, step=0):
        xb = self._batch_for(step)
        x = np.atleast_2d(x)
        if x.shape[0] <= self.chunk:
            return _mc_score_batch(xb, x, t, self.schedule)
        return np.vstack([_mc_score_batch(xb, x[i : i + self.chunk], t, self.schedule)
                          for i in range(0, x.shape[0], self.chunk)])


def _check_finite(x, step):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(step)


def reverse_ode_integrate(score_fn: ScoreFn, y, cfg: Optional[ScoreConfig] = None,
                          schedule: Optional[DiffusionSchedule] = None):
    """Integrate the probability-flow ODE ``dx/dt = b x - sigma^2 S / 2`` from t_max to t_min.

    ``y`` is one state vector or an (M, k) batch. Uses RK4 unless
    ``cfg.integrator`` is ``"ode_euler"``; the grid follows ``cfg.grid``.
    """
    cfg = cfg or ScoreConfig()
    s = schedule or DiffusionSchedule()
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    x = np.atleast_2d(y).copy()
    _check_finite(x, 0)
    ts = s.grid(cfg.steps, cfg.grid)

    def f(x, t, step):
        return s.b(t) * x - 0.5 * s.sigma2(t) * score_fn(x, t, step)

    for n in range(cfg.steps):
        t, dt = ts[n], ts[n + 1] - ts[n]
        if cfg.integrator == "ode_euler":
            x = x + dt * f(x, t, n)
        else:
            k1 = f(x, t, n)
            k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt, n)
            k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt, n)
            k4 = f(x + dt * k3, ts[n + 1], n)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_finite(x, n + 1)
    return x[0] if single else x


def reverse_sde_integrate(score_fn: ScoreFn, y, cfg: Optional[ScoreConfig] = None, rng=None,
                          schedule: Optional[DiffusionSchedule] = None):
    """Euler–Maruyama on ``dx = [b x - sigma^2 S] dt + sigma dW`` from t_max to t_min."""
    cfg = cfg or ScoreConfig()
    s = schedule or DiffusionSchedule()
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(cfg.rng_seed if rng is None else rng)
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    x = np.atleast_2d(y).copy()
    _check_finite(x, 0)
    ts = s.grid(cfg.steps, cfg.grid)
    for n in range(cfg.steps):
        t, dt = ts[n], ts[n + 1] - ts[n]
        sig2 = s.sigma2(t)
        drift = s.b(t) * x - sig2 * score_fn(x, t, n)
        noise = rng.standard_normal(x.shape)
        x = x + dt * drift + np.sqrt(sig2 * abs(dt)) * noise
        _check_finite(x, n + 1)
    return x[0] if single else x


def reverse_integrate(score_fn: ScoreFn, y, cfg: ScoreConfig, rng=None,
                      schedule: Optional[DiffusionSchedule] = None):
    """Dispatch on ``cfg.integrator``."""
    if cfg.integrator == "sde_euler_maruyama":
        return reverse_sde_integrate(score_fn, y, cfg, rng, schedule)
    return reverse_ode_integrate(score_fn, y, cfg, schedule)


def generate_labeled_pairs(data, M: int, cfg: Optional[ScoreConfig] = None,
                           schedule: Optional[DiffusionSchedule] = None) -> LabeledPairs:
    """Map ``M`` standard-normal draws through the reverse flow driven by the MC score."""
    cfg = cfg or ScoreConfig()
    data = np.atleast_2d(np.asarray(data, dtype=float))
    k = data.shape[1]
    if int(M) < 0:
        raise ParameterError(f"M must be nonnegative, got {M}")
    if int(M) == 0:
        return LabeledPairs(np.empty((0, k)), np.empty((0, k)))
    rng = np.random.default_rng(cfg.rng_seed)
    y = rng.standard_normal((int(M), k))
    score = MCScore(data, cfg, schedule)
    x = reverse_integrate(score, y, cfg, rng, schedule)
    return LabeledPairs(y, x)
