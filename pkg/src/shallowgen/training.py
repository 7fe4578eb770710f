"""Fitting shallow generators by stochastic ascent.

Two objectives are supported:

* VAE-MC: the Monte-Carlo log-likelihood ``log((1/m) sum_j phi_sigma(x - g(Z_j)))``
  with uniform latents, differentiated exactly with the draws held fixed.
* VAE-AEVB: the single-draw evidence lower bound with a Gaussian encoder
  ``q(z | x) = N(mu(x), s(x))`` on a standard-normal latent that is pushed
  through ``Phi`` before entering the generator.

Both use Adam in ascent form.  ``sigma`` is optimized as ``log sigma`` and
clamped to ``[sigma_min, sigma_max]`` after every step.  The parameters that
are returned are the best ones seen at the checkpoints, ranked by the exact
training log-likelihood.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml
from scipy.special import ndtr

from .errors import NumericError
from .gen_density import GenerativeDensity, exact_log_density, mc_objective_and_grad
from .networks import ShallowGenerator

LOG_2PI = math.log(2 * math.pi)


class TrainingAborted(NumericError):
    """The objective or its gradient stopped being finite; ``trace`` holds the epochs completed."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = np.asarray(trace, dtype=float)


@dataclass(frozen=True)
class AdamState:
    """Moment estimates and step count of an Adam optimizer."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **hyper) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, **hyper)


def adam_step(state: AdamState, params, grad):
    """One bias-corrected Adam step uphill; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape or grad.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_params = params + state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, t=t)


def standard_normal_cdf(z):
    """``Phi(z)``, evaluated with the complementary error function (accurate in both tails)."""
    return ndtr(z)


@dataclass(frozen=True)
class TrainConfig:
    """Training settings; defaults are the full-scale values (1000 epochs, batch 20, m = 10^5)."""

    epochs: int = 1000
    batch_size: int = 20
    mc_samples: int = 100_000
    lr: float = 2e-4
    seed: int = 0
    train_sigma: bool = True
    sigma_init: float = 1.0
    sigma_min: float = 0.05
    sigma_max: float = 1.0
    hidden: int = 50
    encoder_hidden: int = 50
    fixed_latents: bool = False
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if not 0 < self.sigma_min <= self.sigma_init <= self.sigma_max:
            raise ValueError("need 0 < sigma_min <= sigma_init <= sigma_max")
        if self.hidden < 1 or self.encoder_hidden < 1 or self.checkpoint_every < 1:
            raise ValueError("hidden, encoder_hidden and checkpoint_every must be positive")

    def check_data(self, n: int):
        if n < 1:
            raise ValueError("data must be nonempty")
        if self.batch_size > n:
            raise ValueError(f"batch_size {self.batch_size} exceeds the sample size {n}")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            values = yaml.safe_load(fh) or {}
        return cls.from_mapping(values)

    def to_mapping(self) -> dict:
        return asdict(self)


def init_generator(d: int, d1: int, rng: np.random.Generator) -> ShallowGenerator:
    """Uniform init on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for every layer."""
    w_in = rng.uniform(-1.0, 1.0, size=d1)
    b = rng.uniform(-1.0, 1.0, size=d1)
    bound = 1.0 / math.sqrt(d1)
    w_out = rng.uniform(-bound, bound, size=(d, d1))
    return ShallowGenerator(w_in, b, w_out)


@dataclass(frozen=True)
class _Head:
    """Scalar ReLU network ``x -> a . relu(W x + c) + c0``."""

    W: np.ndarray
    c: np.ndarray
    a: np.ndarray
    c0: float

    @property
    def size(self) -> int:
        return self.W.size + self.c.size + self.a.size + 1

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.c, self.a, [self.c0]])

    @classmethod
    def unflat(cls, vec, d: int, k: int) -> "_Head":
        W = vec[: k * d].reshape(k, d)
        c = vec[k * d : k * d + k]
        a = vec[k * d + k : k * d + 2 * k]
        return cls(W, c, a, float(vec[k * d + 2 * k]))

    def forward(self, x):
        pre = x @ self.W.T + self.c
        h = np.maximum(pre, 0.0)
        return h @ self.a + self.c0, h, pre > 0

    def backward(self, x, h, on, g_out):
        """Gradient of ``sum_i g_out[i] * head(x_i)`` as a flat vector."""
        g_pre = (g_out[:, None] * self.a) * on
        return np.concatenate([(g_pre.T @ x).ravel(), g_pre.sum(axis=0), h.T @ g_out, [g_out.sum()]])


@dataclass(frozen=True)
class GaussianEncoder:
    """``q(z | x) = N(mu(x), exp(s(x)))`` with ``mu`` and ``s = 2 log sd`` shallow ReLU networks."""

    mean_head: _Head
    logvar_head: _Head

    @property
    def d(self) -> int:
        return self.mean_head.W.shape[1]

    @property
    def width(self) -> int:
        return self.mean_head.W.shape[0]

    @classmethod
    def init(cls, d: int, width: int, rng: np.random.Generator) -> "GaussianEncoder":
        def head():
            b_in = 1.0 / math.sqrt(d)
            b_out = 1.0 / math.sqrt(width)
            return _Head(
                rng.uniform(-b_in, b_in, size=(width, d)),
                rng.uniform(-b_in, b_in, size=width),
                rng.uniform(-b_out, b_out, size=width),
                float(rng.uniform(-b_out, b_out)),
            )

        return cls(head(), head())

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.mean_head.flat(), self.logvar_head.flat()])

    @classmethod
    def from_parameters(cls, vec, d: int, width: int) -> "GaussianEncoder":
        vec = np.asarray(vec, dtype=float)
        size = width * d + 2 * width + 1
        if vec.size != 2 * size:
            raise ValueError(f"expected {2 * size} encoder parameters, got {vec.size}")
        return cls(_Head.unflat(vec[:size], d, width), _Head.unflat(vec[size:], d, width))

    def __call__(self, x):
        """Mean and standard deviation of ``q(. | x)`` for each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mu = self.mean_head.forward(x)[0]
        s = self.logvar_head.forward(x)[0]
        return mu, np.exp(0.5 * s)


def aevb_objective(p: GenerativeDensity, encoder: GaussianEncoder, x, rng: np.random.Generator, eps=None):
    """Single-draw ELBO summed over the rows of ``x``, with its exact gradient.

    ``value = log phi_sigma(x - g(Phi(Z))) + log phi(Z) - log q(Z | x)`` with
    ``Z = mu(x) + sd(x) * eps``.  The gradient is a flat vector ordered as
    generator parameters, ``sigma``, encoder parameters.  Pass ``eps`` to fix
    the draw.
    """
    g = p.generator
    sigma = p.sigma
    x = np.asarray(x, dtype=float).reshape(-1, g.d)
    n, d = x.shape
    if eps is None:
        eps = rng.standard_normal(n)
    eps = np.asarray(eps, dtype=float).reshape(-1)

    mu, h_mu, on_mu = encoder.mean_head.forward(x)
    s, h_s, on_s = encoder.logvar_head.forward(x)
    sd = np.exp(0.5 * s)
    z = mu + sd * eps
    u = standard_normal_cdf(z)

    pre = u[:, None] * g.w_in - g.b
    on = pre > 0
    hidden = pre * on
    err = x - (hidden @ g.w_out.T + g.bias)
    sq = np.einsum("nd,nd->n", err, err)
    value = math.fsum(
        -0.5 * sq / sigma**2 - d * math.log(sigma) - 0.5 * d * LOG_2PI - 0.5 * z * z + 0.5 * eps * eps + 0.5 * s
    )

    d_out = err / sigma**2
    g_wout = d_out.T @ hidden
    d_pre = (d_out @ g.w_out) * on
    g_win = u @ d_pre
    g_b = -d_pre.sum(axis=0)
    g_sigma = float(np.sum(sq)) / sigma**3 - n * d / sigma

    d_u = d_pre @ g.w_in
    d_z = d_u * np.exp(-0.5 * z * z - 0.5 * LOG_2PI) - z
    g_mu = encoder.mean_head.backward(x, h_mu, on_mu, d_z)
    g_s = encoder.logvar_head.backward(x, h_s, on_s, d_z * eps * sd * 0.5 + 0.5)
    grad = np.concatenate([g_win, g_b, g_wout.ravel(), [g_sigma], g_mu, g_s])
    return float(value), grad


@dataclass
class TrainRun:
    """Outcome of a fit: best and last parameters, objective trace and checkpoints."""

    method: str
    density: GenerativeDensity
    final_density: GenerativeDensity
    trace: np.ndarray
    checkpoints: list
    best_loglik: float
    wall_clock: float
    seed: int
    config: TrainConfig
    encoder: GaussianEncoder | None = None
    extras: dict = field(default_factory=dict)

    def write_trace_csv(self, path) -> None:
        write_trace_csv(path, self.trace)


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "objective"])
        for i, v in enumerate(trace, start=1):
            writer.writerow([i, repr(float(v))])


def mean_loglik(p: GenerativeDensity, data) -> float:
    return float(np.mean(exact_log_density(p, data)))


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


class _Tracker:
    """Keeps the best parameters seen at checkpoints, ranked by exact mean log-likelihood."""

    def __init__(self, data, every, epochs):
        self.data = data
        self.every = every
        self.epochs = epochs
        self.best = None
        self.best_value = -math.inf
        self.checkpoints = []

    def offer(self, epoch, p, extra=None):
        if epoch != 0 and epoch % self.every != 0 and epoch != self.epochs:
            return
        value = mean_loglik(p, self.data)
        self.checkpoints.append((epoch, value))
        if value > self.best_value:
            self.best_value = value
            self.best = (p, extra)


def _split(theta, n_gen):
    return theta[:n_gen], theta[n_gen]


def fit_mc(data, init: GenerativeDensity, cfg: TrainConfig, rng: np.random.Generator) -> TrainRun:
    """Maximize the Monte-Carlo log-likelihood with Adam over shuffled mini-batches."""
    start = time.perf_counter()
    data = np.asarray(data, dtype=float).reshape(-1, init.d)
    n = data.shape[0]
    cfg.check_data(n)
    g0 = init.generator
    d, d1 = g0.d, g0.d1
    n_gen = g0.parameters().size
    lo, hi = math.log(cfg.sigma_min), math.log(cfg.sigma_max)
    theta = np.concatenate([g0.parameters(), [min(max(math.log(init.sigma), lo), hi)]])
    state = AdamState.zeros(theta.size, lr=cfg.lr)
    fixed = rng.uniform(size=cfg.mc_samples) if cfg.fixed_latents else None

    def density(th):
        gp, ls = _split(th, n_gen)
        return GenerativeDensity(ShallowGenerator.from_parameters(gp, d, d1, g0.out_bias), math.exp(ls))

    tracker = _Tracker(data, cfg.checkpoint_every, cfg.epochs)
    tracker.offer(0, density(theta))
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in _batches(n, cfg.batch_size, rng):
            gp, ls = _split(theta, n_gen)
            sigma = math.exp(ls)
            g = ShallowGenerator.from_parameters(gp, d, d1, g0.out_bias)
            z = fixed if fixed is not None else rng.uniform(size=cfg.mc_samples)
            value, grad = mc_objective_and_grad(g, sigma, data[idx], z)
            if not (math.isfinite(value) and np.all(np.isfinite(grad))):
                raise TrainingAborted(f"non-finite objective in epoch {epoch}", trace)
            total += value
            step = grad / idx.size
            step[n_gen] = step[n_gen] * sigma if cfg.train_sigma else 0.0
            theta, state = adam_step(state, theta, step)
            theta[n_gen] = min(max(theta[n_gen], lo), hi)
        trace.append(total / n)
        tracker.offer(epoch, density(theta))
    best, _ = tracker.best
    return TrainRun(
        method="vae-mc",
        density=best,
        final_density=density(theta),
        trace=np.array(trace),
        checkpoints=tracker.checkpoints,
        best_loglik=tracker.best_value,
        wall_clock=time.perf_counter() - start,
        seed=cfg.seed,
        config=cfg,
    )


def fit_aevb(
    data,
    init: GenerativeDensity,
    encoder: GaussianEncoder,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainRun:
    """Joint Adam ascent of the ELBO over generator, ``sigma`` and encoder, one draw per datum."""
    start = time.perf_counter()
    data = np.asarray(data, dtype=float).reshape(-1, init.d)
    n = data.shape[0]
    cfg.check_data(n)
    g0 = init.generator
    d, d1 = g0.d, g0.d1
    width = encoder.width
    n_gen = g0.parameters().size
    lo, hi = math.log(cfg.sigma_min), math.log(cfg.sigma_max)
    theta = np.concatenate(
        [g0.parameters(), [min(max(math.log(init.sigma), lo), hi)], encoder.parameters()]
    )
    state = AdamState.zeros(theta.size, lr=cfg.lr)

    def unpack(th):
        g = ShallowGenerator.from_parameters(th[:n_gen], d, d1, g0.out_bias)
        enc = GaussianEncoder.from_parameters(th[n_gen + 1 :], d, width)
        return GenerativeDensity(g, math.exp(th[n_gen])), enc

    tracker = _Tracker(data, cfg.checkpoint_every, cfg.epochs)
    p, enc = unpack(theta)
    tracker.offer(0, p, enc)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in _batches(n, cfg.batch_size, rng):
            p, enc = unpack(theta)
            value, grad = aevb_objective(p, enc, data[idx], rng)
            if not (math.isfinite(value) and np.all(np.isfinite(grad))):
                raise TrainingAborted(f"non-finite objective in epoch {epoch}", trace)
            total += value
            step = grad / idx.size
            step[n_gen] = step[n_gen] * p.sigma if cfg.train_sigma else 0.0
            theta, state = adam_step(state, theta, step)
            theta[n_gen] = min(max(theta[n_gen], lo), hi)
        trace.append(total / n)
        p, enc = unpack(theta)
        tracker.offer(epoch, p, enc)
    best, best_enc = tracker.best
    final, _ = unpack(theta)
    return TrainRun(
        method="vae-aevb",
        density=best,
        final_density=final,
        trace=np.array(trace),
        checkpoints=tracker.checkpoints,
        best_loglik=tracker.best_value,
        wall_clock=time.perf_counter() - start,
        seed=cfg.seed,
        config=cfg,
        encoder=best_enc,
    )
