"""Likelihood-ratio membership inference (LiRA) against downstream classifiers.

Shadow models are trained on random halves of a privacy pool; for every
pool example the logit-scaled confidences of IN and OUT shadows are fit with
Gaussians, and the target model's confidence is scored against them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.stats import nhypergeom, norm

from .taskbench import (
    FULL_METHOD, BenchConfig, ClassifierConfig, LabeledDataset, PipelineToggles, TaskSpec,
    derive_seed, make_task, synthesize_dataset, train_classifier, train_generator,
)
from .parallel import pmap

CLAMP = 1e-6
SD_FLOOR = 1e-3


class LiraVariant(str, Enum):
    ONLINE = "online"
    OFFLINE = "offline"
    FIXED_VARIANCE = "fixed-variance"


def logit_confidence(prob):
    """log(p / (1 - p)) with p clamped to [1e-6, 1 - 1e-6]."""
    p = np.clip(np.asarray(prob, dtype=float), CLAMP, 1.0 - CLAMP)
    if np.any(np.isnan(p)):
        raise ValueError("probabilities must not be NaN")
    out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out


@dataclass
class ShadowEnsemble:
    membership: np.ndarray  # (num_shadows, n_examples) bool
    confidences: np.ndarray  # (num_shadows, n_examples) logit-scaled

    def __post_init__(self):
        self.membership = np.asarray(self.membership, dtype=bool)
        self.confidences = np.asarray(self.confidences, dtype=float)
        if self.membership.shape != self.confidences.shape:
            raise ValueError("membership and confidences must have the same shape")
        n_in = self.membership.sum(axis=0)
        if np.any(n_in < 1) or np.any(n_in > self.num_shadows - 1):
            raise ValueError("every example needs at least one IN and one OUT shadow")
        if not np.all(np.isfinite(self.confidences)):
            raise ValueError("confidences must be finite")

    @property
    def num_shadows(self) -> int:
        return self.membership.shape[0]

    @property
    def num_examples(self) -> int:
        return self.membership.shape[1]


@dataclass
class LiraFit:
    mu_in: np.ndarray
    sd_in: np.ndarray
    mu_out: np.ndarray
    sd_out: np.ndarray


def fit_gaussian(values) -> tuple[float, float]:
    """Sample mean and population std (floored at 1e-3)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot fit a Gaussian to an empty list")
    return float(v.mean()), max(float(v.std()), SD_FLOOR)


def fit_lira(ensemble: ShadowEnsemble, variant: LiraVariant = LiraVariant.ONLINE) -> LiraFit:
    m, c = ensemble.membership, ensemble.confidences
    n_in = m.sum(axis=0)
    n_out = (~m).sum(axis=0)
    mu_in = np.where(m, c, 0.0).sum(axis=0) / n_in
    mu_out = np.where(~m, c, 0.0).sum(axis=0) / n_out
    r = np.where(m, c - mu_in, c - mu_out)
    if LiraVariant(variant) is LiraVariant.FIXED_VARIANCE:
        pooled = max(float(np.sqrt(np.mean(r * r))), SD_FLOOR)
        sd = np.full(ensemble.num_examples, pooled)
        return LiraFit(mu_in, sd, mu_out, sd.copy())
    sd_in = np.maximum(np.sqrt(np.where(m, r * r, 0.0).sum(axis=0) / n_in), SD_FLOOR)
    sd_out = np.maximum(np.sqrt(np.where(~m, r * r, 0.0).sum(axis=0) / n_out), SD_FLOOR)
    return LiraFit(mu_in, sd_in, mu_out, sd_out)


def lira_score(target_conf, fit: LiraFit, variant: LiraVariant = LiraVariant.ONLINE):
    """Membership score; larger means more likely a member.

    online / fixed-variance: log N(c; mu_in, sd_in) - log N(c; mu_out, sd_out).
    offline: standardized distance above the OUT mean, (c - mu_out) / sd_out.
    """
    c = np.asarray(target_conf, dtype=float)
    if LiraVariant(variant) is LiraVariant.OFFLINE:
        return (c - fit.mu_out) / fit.sd_out
    return norm.logpdf(c, fit.mu_in, fit.sd_in) - norm.logpdf(c, fit.mu_out, fit.sd_out)


@dataclass
class RocResult:
    fpr: np.ndarray
    tpr: np.ndarray
    tpr_at_target: float
    target_fpr: float


def roc_curve(scores, membership) -> tuple[np.ndarray, np.ndarray]:
    """Exact ROC by sweeping the threshold down through the distinct scores.

    Tied scores are crossed together, so each tie group contributes one point.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(membership, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and membership must be 1-D and of equal length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both members and non-members")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return fpr, tpr


def roc_low_fpr(scores, membership, target_fpr: float = 1e-3) -> RocResult:
    """ROC plus the best TPR reachable with FPR <= ``target_fpr``."""
    fpr, tpr = roc_curve(scores, membership)
    return RocResult(fpr, tpr, float(tpr[fpr <= target_fpr].max()), target_fpr)


# ---------------------------------------------------------------------------
# experiment

# Higher-dimensional, overlapping classes: with few points per region the
# direct classifier has individual examples to memorize.
DEFAULT_MIA_TASK = TaskSpec(dim=20, separation=1.0)


@dataclass(frozen=True)
class MiaConfig:
    num_shadows: int = 8
    arm: str = "direct"  # or "synthetic"
    seeds: tuple[int, ...] = (0, 1, 2)
    pool_size: int = 500
    epoch_multiplier: int = 10
    variant: LiraVariant = LiraVariant.FIXED_VARIANCE
    target_fpr: float = 1e-3
    toggles: PipelineToggles = FULL_METHOD
    bench: BenchConfig = field(default_factory=BenchConfig)

    def __post_init__(self):
        if self.num_shadows < 4 or self.num_shadows % 2:
            raise ValueError("num_shadows must be even and >= 4")
        if self.arm not in ("direct", "synthetic"):
            raise ValueError(f"unknown arm {self.arm!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.pool_size < 4:
            raise ValueError("pool_size must be >= 4")


def _half_split(n: int, rng: np.random.Generator) -> np.ndarray:
    m = np.zeros(n, dtype=bool)
    m[rng.permutation(n)[: n // 2]] = True
    return m


def _shadow_membership(num_shadows: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Each example is IN for exactly half of the shadows."""
    m = np.zeros((num_shadows, n), dtype=bool)
    for j in range(n):
        m[rng.permutation(num_shadows)[: num_shadows // 2], j] = True
    return m


def _fit_model(members: LabeledDataset, cfg: MiaConfig, pool_task, seed: int, pretrain_seed: int):
    ccfg = cfg.bench.classifier
    ccfg = replace(ccfg, epochs=ccfg.epochs * cfg.epoch_multiplier)
    if cfg.arm == "direct":
        return train_classifier(members, ccfg, seed)
    gen = train_generator(members, cfg.toggles, cfg.bench.generator, derive_seed(seed, 1),
                          pool_task.pretrain_pool, pretrain_seed)
    syn = synthesize_dataset(gen, len(members), cfg.toggles, members, derive_seed(seed, 2),
                             cfg.bench.sampler, cfg.bench.synth_batch)
    return train_classifier(syn, ccfg, derive_seed(seed, 3))


def _true_class_conf(net, data: LabeledDataset) -> np.ndarray:
    p = net(data.x)
    return logit_confidence(p[np.arange(len(data)), data.y])


@dataclass
class MiaSeedResult:
    seed: int
    scores: np.ndarray
    membership: np.ndarray
    roc: RocResult
    shuffled_roc: RocResult


@dataclass
class MiaReport:
    cfg: MiaConfig
    results: list[MiaSeedResult]

    @property
    def tprs(self) -> list[float]:
        return [r.roc.tpr_at_target for r in self.results]

    @property
    def mean_tpr(self) -> float:
        return float(np.mean(self.tprs))

    @property
    def shuffled_tprs(self) -> list[float]:
        return [r.shuffled_roc.tpr_at_target for r in self.results]

    def pooled_roc(self) -> RocResult:
        s = np.concatenate([r.scores for r in self.results])
        m = np.concatenate([r.membership for r in self.results])
        return roc_low_fpr(s, m, self.cfg.target_fpr)


def _mia_pool(spec: TaskSpec, cfg: MiaConfig, seed: int):
    task = make_task(spec, cfg.bench.task_seed)
    rng = np.random.default_rng(derive_seed(seed, 51))
    idx = rng.choice(len(task.train), size=min(cfg.pool_size, len(task.train)), replace=False)
    return task, task.train.subset(np.sort(idx), "privacy")


def _check_classes(members: LabeledDataset) -> bool:
    return bool(np.all(members.class_counts() > 0))


def _mia_seed(args) -> MiaSeedResult:
    spec, cfg, seed = args
    task, pool = _mia_pool(spec, cfg, seed)
    n = len(pool)
    rng = np.random.default_rng(derive_seed(seed, 52))
    target_in = _half_split(n, rng)
    shadow_in = _shadow_membership(cfg.num_shadows, n, rng)
    conf = np.zeros((cfg.num_shadows, n))
    for k in range(cfg.num_shadows):
        members = pool.subset(shadow_in[k])
        if not _check_classes(members):
            raise ValueError("a shadow split lost a class; increase pool_size")
        net = _fit_model(members, cfg, task, derive_seed(seed, 100 + k), derive_seed(seed, 53))
        conf[k] = _true_class_conf(net, pool)
    target = _fit_model(pool.subset(target_in), cfg, task, derive_seed(seed, 99), derive_seed(seed, 53))
    fit = fit_lira(ShadowEnsemble(shadow_in, conf), cfg.variant)
    scores = lira_score(_true_class_conf(target, pool), fit, cfg.variant)
    shuffled = rng.permutation(target_in)
    return MiaSeedResult(
        seed, scores, target_in,
        roc_low_fpr(scores, target_in, cfg.target_fpr),
        roc_low_fpr(scores, shuffled, cfg.target_fpr),
    )


def run_mia_experiment(spec: TaskSpec, cfg: MiaConfig) -> MiaReport:
    """LiRA against a classifier trained on member data (``direct``) or on data
    synthesized by a generator finetuned on member data (``synthetic``)."""
    return MiaReport(cfg, pmap(_mia_seed, [(spec, cfg, s) for s in cfg.seeds]))


def null_tpr_tolerance(
    n_members: int, n_nonmembers: int, target_fpr: float = 1e-3, level: float = 0.99865
) -> float:
    """Upper ``level`` quantile of TPR@target for membership-independent scores.

    With f = floor(target_fpr * n_nonmembers) false positives allowed, the
    operating point admits every member ranked above the (f + 1)-th
    non-member. Under a random ranking that count is negative
    hypergeometric. The default level is the one-sided 3-sigma point.
    """
    f = int(np.floor(target_fpr * n_nonmembers + 1e-12))
    k = nhypergeom(n_members + n_nonmembers, n_members, f + 1).ppf(level)
    return float(k) / n_members
