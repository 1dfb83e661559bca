"""Distribution discrepancy estimators and the MMD-augmented denoising loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .diffusion import Denoiser, DiffusionLoss, NoiseSchedule, diffusion_loss
from .nets import ParamGrads


@dataclass(frozen=True)
class FeatureBatch:
    features: np.ndarray
    source: str = "real"

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if f.ndim != 2 or f.shape[0] == 0:
            raise ValueError("feature batch must be a nonempty (n, d) array")
        if self.source not in ("real", "synthetic"):
            raise ValueError(f"unknown source tag {self.source!r}")
        object.__setattr__(self, "features", f)


def _as_features(a) -> np.ndarray:
    if isinstance(a, FeatureBatch):
        return a.features
    f = np.asarray(a, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("feature batch must be a nonempty (n, d) array")
    return f


def _pair(a, b):
    fa, fb = _as_features(a), _as_features(b)
    if fa.shape[1] != fb.shape[1]:
        raise ValueError(f"feature widths differ: {fa.shape[1]} vs {fb.shape[1]}")
    return fa, fb


def mmd_sq_linear(a, b) -> float:
    """Squared distance between the two feature means (linear-kernel MMD^2)."""
    fa, fb = _pair(a, b)
    diff = fa.mean(axis=0) - fb.mean(axis=0)
    return float(diff @ diff)


def mmd_sq_rbf(a, b, bandwidth: float = 1.0) -> float:
    """Biased (V-statistic) MMD^2 with k(u, v) = exp(-||u - v||^2 / (2 h^2))."""
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    fa, fb = _pair(a, b)
    g = -0.5 / bandwidth**2
    kaa = np.exp(g * cdist(fa, fa, "sqeuclidean")).mean()
    kbb = np.exp(g * cdist(fb, fb, "sqeuclidean")).mean()
    kab = np.exp(g * cdist(fa, fb, "sqeuclidean")).mean()
    return float(kaa + kbb - 2.0 * kab)


def batch_mmd_loss(residuals) -> float:
    """||mean_i r_i||^2. Never exceeds mean_i ||r_i||^2 (Jensen)."""
    r = _as_features(residuals)
    m = r.mean(axis=0)
    return float(m @ m)


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.05
    weighting: str = "simple"

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        if self.weighting not in ("simple", "snr"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


@dataclass
class CombinedLoss:
    total: float
    simple: float
    mmd: float
    terms: DiffusionLoss


def combined_loss(
    model, sched: NoiseSchedule, x0, cond, cfg: LossConfig, rng: np.random.Generator
) -> CombinedLoss:
    """L_simple + gamma * L_MMD over one shared draw of (t, eps) per sample."""
    terms = diffusion_loss(model, sched, x0, cond, rng, cfg.weighting)
    mmd = batch_mmd_loss(terms.residuals)
    return CombinedLoss(terms.loss + cfg.gamma * mmd, terms.loss, mmd, terms)


def combined_loss_grads(
    model: Denoiser, out: CombinedLoss, gamma: float
) -> tuple[ParamGrads, np.ndarray]:
    """Backprop the combined loss; returns parameter grads and condition-row grads."""
    terms = out.terms
    if terms.tape is None:
        raise ValueError("loss was computed without a tape")
    r = terms.residuals
    n = r.shape[0]
    d_r = (2.0 / n) * terms.weights[:, None] * r
    if gamma:
        d_r = d_r + (2.0 * gamma / n) * r.mean(axis=0)
    return model.backward(terms.tape, -d_r)


@dataclass(frozen=True)
class ObjectiveReport:
    mmd_sq: float
    conditional_divergence: float
    cardinality_term: float
    lam: float
    combined: float

    CSV_COLUMNS = ("mmd_sq", "conditional_divergence", "cardinality", "lambda", "combined")

    def row(self) -> list[float]:
        return [self.mmd_sq, self.conditional_divergence, self.cardinality_term, self.lam, self.combined]


def synthesis_objective_report(real, syn, encoder, probe, lam: float = 0.0) -> ObjectiveReport:
    """Data-discrepancy + label-discrepancy - lam * |S| for a synthetic set.

    The data term is linear MMD^2 between encoder features of ``real`` and
    ``syn``. The label term is the mean of -log p_probe(y | x) over synthetic
    points, i.e. KL(onehot(y) || probe(x)), with the probe trained on real
    data. ``encoder=None`` uses raw coordinates.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if real.num_classes != syn.num_classes or real.dim != syn.dim:
        raise ValueError("real and synthetic datasets disagree on classes or dimension")
    if not set(np.unique(syn.y)) <= set(np.unique(real.y)):
        raise ValueError("synthetic labels not present in the real dataset")
    fr = real.x if encoder is None else encoder(real.x)
    fs = syn.x if encoder is None else encoder(syn.x)
    mmd = mmd_sq_linear(fr, fs)
    p = probe(syn.x)
    py = np.clip(p[np.arange(len(syn.y)), syn.y], 1e-12, 1.0)
    cdiv = float(np.mean(-np.log(py)))
    card = float(len(syn.y))
    return ObjectiveReport(mmd, cdiv, card, lam, mmd + cdiv - lam * card)
