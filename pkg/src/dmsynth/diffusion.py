"""DDPM machinery on low-dimensional vectors.

Timesteps run from 1 to T. Schedule arrays are stored 0-based, so the value
for timestep ``t`` lives at index ``t - 1``; use the accessor methods rather
than indexing by hand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .nets import DenseNet, NetSpec, ParamGrads, Tape, net_backward, net_forward, net_init, time_embedding

EpsModel = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def ab(self, t) -> np.ndarray:
        """alpha_bar at timestep(s) ``t``; ``t = 0`` gives 1."""
        t = np.asarray(t)
        return np.where(t == 0, 1.0, self.alpha_bar[np.maximum(t, 1) - 1])


def make_schedule(T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; posterior std ``sigma_t = sqrt(beta_t)`` with ``sigma_1 = 0``."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if np.any(np.diff(alpha_bar) >= 0):
        raise ValueError("alpha_bar must be strictly decreasing; betas too small to resolve")
    sigma = np.sqrt(beta)
    sigma[0] = 0.0
    for a in (beta, alpha, alpha_bar, sigma):
        a.setflags(write=False)
    return NoiseSchedule(T, beta, alpha, alpha_bar, sigma)


@dataclass(frozen=True)
class SamplerConfig:
    guidance_scale: float = 2.0
    num_steps: int = 30
    prior: str = "gaussian"  # or "latent"
    strength: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be >= 0")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.prior not in ("gaussian", "latent"):
            raise ValueError(f"unknown prior {self.prior!r}")
        if not 0.0 < self.strength <= 1.0:
            raise ValueError("strength must lie in (0, 1]")


class Denoiser:
    """Noise predictor eps(x_t, t, cond) backed by a DenseNet on
    ``[x_t, time_embedding(t), cond]``."""

    def __init__(self, net: DenseNet, data_dim: int, cond_dim: int, T: int, time_dim: int):
        if net.spec.input_dim != data_dim + time_dim + cond_dim or net.spec.output_dim != data_dim:
            raise ValueError("network shape does not fit data/time/cond widths")
        if net.spec.final_activation != "identity":
            raise ValueError("denoiser head must be linear")
        self.net = net
        self.data_dim = data_dim
        self.cond_dim = cond_dim
        self.T = T
        self.time_dim = time_dim

    def _inputs(self, x_t, t, cond):
        x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
        n = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=int), (n,))
        cond = np.broadcast_to(np.asarray(cond, dtype=float), (n, self.cond_dim))
        return np.concatenate([x_t, time_embedding(t, self.time_dim, self.T), cond], axis=1)

    def forward(self, x_t, t, cond) -> tuple[np.ndarray, Tape]:
        return net_forward(self.net, self._inputs(x_t, t, cond))

    def __call__(self, x_t, t, cond) -> np.ndarray:
        return self.forward(x_t, t, cond)[0]

    def backward(self, tape: Tape, grad_eps: np.ndarray) -> tuple[ParamGrads, np.ndarray]:
        """Parameter gradients and the gradient w.r.t. the condition rows."""
        g = net_backward(self.net, tape, grad_eps)
        return g, g.input[:, self.data_dim + self.time_dim:]


def make_denoiser(
    data_dim: int, cond_dim: int, T: int, hidden=(128, 128), time_dim: int = 16, seed: int = 0
) -> Denoiser:
    spec = NetSpec(data_dim + time_dim + cond_dim, tuple(hidden), data_dim, "silu", "identity")
    return Denoiser(net_init(spec, seed), data_dim, cond_dim, T, time_dim)


def _check_t(sched: NoiseSchedule, t) -> None:
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.T):
        raise ValueError(f"timestep out of range [1, {sched.T}]")


def forward_marginal_sample(sched: NoiseSchedule, x0, t, eps) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps."""
    _check_t(sched, t)
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    ab = sched.ab(t)
    if x0.ndim == 2 and np.ndim(t) == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def forward_step_sample(sched: NoiseSchedule, x_prev, t: int, z) -> np.ndarray:
    """One forward transition q(x_t | x_{t-1})."""
    _check_t(sched, t)
    b = sched.beta[t - 1]
    return np.sqrt(1.0 - b) * np.asarray(x_prev, dtype=float) + np.sqrt(b) * np.asarray(z, dtype=float)


def loss_weights(sched: NoiseSchedule, t: np.ndarray, weighting: str) -> np.ndarray:
    """Per-sample weights: ones for ``simple``; beta^2 / (2 sigma^2 alpha (1 - alpha_bar))
    with sigma^2 = beta for ``snr``."""
    if weighting == "simple":
        return np.ones(len(t))
    if weighting == "snr":
        b = sched.beta[t - 1]
        return b / (2.0 * sched.alpha[t - 1] * (1.0 - sched.alpha_bar[t - 1]))
    raise ValueError(f"unknown weighting {weighting!r}")


@dataclass
class DiffusionLoss:
    loss: float
    residuals: np.ndarray  # eps - eps_theta, shape (n, d)
    weights: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    x_t: np.ndarray
    tape: Tape | None = None


def diffusion_loss(
    model, sched: NoiseSchedule, x0: np.ndarray, cond: np.ndarray, rng: np.random.Generator,
    weighting: str = "simple",
) -> DiffusionLoss:
    """Denoising loss mean_i w_i ||eps_i - eps_theta(x_t_i, t_i, cond_i)||^2.

    ``model`` is a :class:`Denoiser` (the tape is kept for backprop) or any
    callable ``(x_t, t, cond) -> eps``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    if n == 0:
        raise ValueError("empty batch")
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal((n, d))
    x_t = forward_marginal_sample(sched, x0, t, eps)
    tape = None
    if isinstance(model, Denoiser):
        pred, tape = model.forward(x_t, t, cond)
    else:
        pred = np.asarray(model(x_t, t, cond), dtype=float)
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError("denoiser produced non-finite output")
    r = eps - pred
    w = loss_weights(sched, t, weighting)
    loss = float(np.mean(w * np.sum(r * r, axis=1)))
    return DiffusionLoss(loss, r, w, t, eps, x_t, tape)


@dataclass
class GuidedNoise:
    eps: np.ndarray
    eps_cond: np.ndarray
    eps_uncond: np.ndarray


def guided_noise_parts(model: EpsModel, x_t, t, cond, null_cond, w: float) -> GuidedNoise:
    eps_c = np.asarray(model(x_t, t, cond), dtype=float)
    eps_u = np.asarray(model(x_t, t, null_cond), dtype=float)
    if eps_c.shape != eps_u.shape:
        raise ValueError("conditional and unconditional predictions differ in shape")
    # (1 - w) * u + w * c keeps the w = 0 and w = 1 cases exact
    return GuidedNoise((1.0 - w) * eps_u + w * eps_c, eps_c, eps_u)


def guided_noise(model: EpsModel, x_t, t, cond, null_cond, w: float) -> np.ndarray:
    """Classifier-free guidance: eps(x, null) + w (eps(x, y) - eps(x, null))."""
    return guided_noise_parts(model, x_t, t, cond, null_cond, w).eps


def conditional_score(sched: NoiseSchedule, t, eps_cond, eps_uncond) -> np.ndarray:
    """Class-likelihood score implied by the two branches: (eps_c - eps_u) / sqrt(1 - alpha_bar_t)."""
    _check_t(sched, t)
    ab = sched.ab(t)
    diff = np.asarray(eps_cond, dtype=float) - np.asarray(eps_uncond, dtype=float)
    if diff.ndim == 2 and np.ndim(t) == 1:
        ab = ab[:, None]
    return diff / np.sqrt(1.0 - ab)


def ancestral_step(
    model: EpsModel, sched: NoiseSchedule, x_t, t: int, cond, null_cond, w: float,
    rng: np.random.Generator | None, t_prev: int | None = None,
) -> np.ndarray:
    """One reverse step x_t -> x_{t_prev} (default t_prev = t - 1).

    For strided chains the step uses the effective schedule
    alpha' = alpha_bar_t / alpha_bar_prev. Noise is injected with std
    sqrt(beta') except when the chain lands on timestep 0, when t = 1, or
    when ``rng`` is None.
    """
    _check_t(sched, t)
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev must lie in [0, {t}), got {t_prev}")
    if t_prev == t - 1:
        a, b, sig = sched.alpha[t - 1], sched.beta[t - 1], sched.sigma[t - 1]
    else:
        a = sched.alpha_bar[t - 1] / sched.ab(t_prev)
        b = 1.0 - a
        sig = np.sqrt(b) if t_prev >= 1 else 0.0
    x_t = np.asarray(x_t, dtype=float)
    eps_hat = guided_noise(model, x_t, t, cond, null_cond, w)
    x = (x_t - b / np.sqrt(1.0 - sched.alpha_bar[t - 1]) * eps_hat) / np.sqrt(a)
    if rng is not None and sig > 0:
        x = x + sig * rng.standard_normal(x.shape)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite sampler state at t={t}")
    return x


def latent_start(T: int, strength: float) -> int:
    if not 0.0 < strength <= 1.0:
        raise ValueError("strength must lie in (0, 1]")
    return int(min(max(np.floor(strength * T + 0.5), 1), T))


def latent_prior_init(sched: NoiseSchedule, x_real, strength: float, rng: np.random.Generator):
    """Partially noise real samples to t0 = round(strength * T)."""
    t0 = latent_start(sched.T, strength)
    x_real = np.asarray(x_real, dtype=float)
    eps = rng.standard_normal(x_real.shape)
    return forward_marginal_sample(sched, x_real, t0, eps), t0


def strided_timesteps(t_start: int, num_steps: int, T: int) -> np.ndarray:
    """Descending timesteps from ``t_start`` to 1, evenly strided.

    The step budget scales with t_start / T, so ``num_steps = T`` visits
    every timestep of a chain started at any t_start.
    """
    n = int(np.floor(num_steps * t_start / T + 0.5))
    n = max(1, min(t_start, n))
    ts = np.floor(np.linspace(t_start, 1, n) + 0.5).astype(int)
    return np.unique(ts)[::-1]


def sample(
    model: EpsModel, sched: NoiseSchedule, cfg: SamplerConfig, cond, null_cond,
    prior_pool: np.ndarray | None = None, n: int | None = None, data_dim: int | None = None,
) -> np.ndarray:
    """Run the guided reverse chain for a batch of conditions.

    The batch size is ``len(cond)``. With ``cfg.prior == "latent"``,
    ``prior_pool`` holds the real sources; if it has one row per chain the
    rows are used in order, otherwise rows are drawn uniformly.
    """
    rng = np.random.default_rng(cfg.seed)
    cond = np.atleast_2d(np.asarray(cond, dtype=float))
    null_cond = np.atleast_2d(np.asarray(null_cond, dtype=float))
    n = cond.shape[0] if n is None else n
    if cfg.prior == "latent":
        if prior_pool is None or len(prior_pool) == 0:
            raise ValueError("latent prior needs a nonempty prior_pool")
        pool = np.atleast_2d(np.asarray(prior_pool, dtype=float))
        src = pool if pool.shape[0] == n else pool[rng.integers(0, pool.shape[0], size=n)]
        x, t_start = latent_prior_init(sched, src, cfg.strength, rng)
    else:
        if data_dim is None:
            data_dim = getattr(model, "data_dim", None)
        if data_dim is None:
            raise ValueError("data_dim is required for a Gaussian prior with a plain callable")
        x = rng.standard_normal((n, data_dim))
        t_start = sched.T
    ts = strided_timesteps(t_start, cfg.num_steps, sched.T)
    for i, t in enumerate(ts):
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        x = ancestral_step(model, sched, x, int(t), cond, null_cond, cfg.guidance_scale, rng, t_prev)
    return x
