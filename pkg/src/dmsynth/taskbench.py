"""Synthetic target tasks and the replace / augment / scale / ablation experiments.

A task is a class-conditional mixture in R^d. Each experiment seed trains a
small conditional diffusion model (pretrained on a deliberately perturbed
pool, optionally finetuned on the target train split), synthesizes a
labeled set with it, and measures how well a fixed-budget classifier trained
on that set does on real test data.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import conditioning as cnd
from .diffusion import Denoiser, NoiseSchedule, SamplerConfig, make_denoiser, make_schedule, sample
from .matching import LossConfig, ObjectiveReport, combined_loss, combined_loss_grads, mmd_sq_linear, synthesis_objective_report
from .nets import (
    DenseNet, NetSpec, apply_update, load_checkpoint, net_backward, net_forward, net_init,
    optimizer_init, round_to_f32, save_checkpoint,
)
from .parallel import pmap

# ---------------------------------------------------------------------------
# tasks and datasets


@dataclass(frozen=True)
class OODShift:
    mean_shift: tuple[float, ...] | None = None  # None: 0.5 * separation along axis 0
    scale: float = 1.0


@dataclass(frozen=True)
class TaskSpec:
    num_classes: int = 3
    dim: int = 2
    family: str = "gaussian-mixture"
    components_per_class: int = 2
    separation: float = 4.0
    n_train: int = 3000
    n_test: int = 2000
    n_pretrain: int = 3000
    ood_shift: OODShift | None = field(default_factory=OODShift)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.family not in ("gaussian-mixture", "ring-mixture"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "ring-mixture" and self.dim < 2:
            raise ValueError("ring-mixture needs dim >= 2")
        if self.components_per_class < 1:
            raise ValueError("components_per_class must be >= 1")
        if not self.separation > 0:
            raise ValueError("separation must be > 0")
        for name in ("n_train", "n_test", "n_pretrain"):
            if getattr(self, name) < self.num_classes:
                raise ValueError(f"{name} must be >= num_classes")
        if self.ood_shift is not None:
            ms = self.ood_shift.mean_shift
            if ms is not None and len(ms) != self.dim:
                raise ValueError("ood mean_shift length must equal dim")
            if not self.ood_shift.scale > 0:
                raise ValueError("ood scale must be > 0")

    def resolved_shift(self) -> np.ndarray:
        ms = self.ood_shift.mean_shift if self.ood_shift else None
        if ms is None:
            v = np.zeros(self.dim)
            v[0] = 0.5 * self.separation
            return v
        return np.asarray(ms, dtype=float)


@dataclass
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=int)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y lengths differ")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("labels out of range")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite coordinates")

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)

    def of_class(self, c: int) -> np.ndarray:
        return self.x[self.y == c]

    def subset(self, idx, split: str | None = None) -> "LabeledDataset":
        return LabeledDataset(self.x[idx], self.y[idx], self.num_classes, split or self.split)

    def to_csv(self, path: str | Path) -> None:
        """First line ``dim,num_classes``; then one ``x_1,...,x_d,y`` row per point."""
        lines = [f"{self.dim},{self.num_classes}"]
        for xi, yi in zip(self.x, self.y):
            lines.append(",".join(format(v, ".9g") for v in xi) + f",{int(yi)}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path, split: str = "train") -> "LabeledDataset":
        rows = Path(path).read_text().strip().splitlines()
        dim, k = (int(v) for v in rows[0].split(","))
        data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]]).reshape(-1, dim + 1)
        return cls(data[:, :dim], data[:, dim].astype(int), k, split)


def concat(a: LabeledDataset, b: LabeledDataset, split: str) -> LabeledDataset:
    if a.num_classes != b.num_classes or a.dim != b.dim:
        raise ValueError("datasets disagree on classes or dimension")
    return LabeledDataset(np.vstack([a.x, b.x]), np.concatenate([a.y, b.y]), a.num_classes, split)


@dataclass
class TaskData:
    spec: TaskSpec
    train: LabeledDataset
    test: LabeledDataset
    ood_test: LabeledDataset | None
    pretrain_pool: LabeledDataset
    means: np.ndarray  # (num_classes, components_per_class, dim)


def _component_means(spec: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    k, c, d, sep = spec.num_classes, spec.components_per_class, spec.dim, spec.separation
    total = k * c
    if spec.family == "ring-mixture":
        radius = sep / (2.0 * math.sin(math.pi / total)) if total > 1 else 0.0
        ang = 2.0 * math.pi * np.arange(total) / total
        pts = np.zeros((total, d))
        pts[:, 0], pts[:, 1] = radius * np.cos(ang), radius * np.sin(ang)
        # slot i belongs to class i % k, so neighbours differ in class
        return np.stack([pts[np.arange(cls, total, k)] for cls in range(k)])
    half = 0.75 * sep * total ** (1.0 / d)
    while True:
        pts: list[np.ndarray] = []
        for _ in range(total):
            for _attempt in range(2000):
                p = rng.uniform(-half, half, size=d)
                if all(np.linalg.norm(p - q) >= sep for q in pts):
                    pts.append(p)
                    break
            else:
                break
        if len(pts) == total:
            return np.array(pts).reshape(k, c, d)
        half *= 1.2


def _draw(means: np.ndarray, n: int, std: float, rng: np.random.Generator, offset=None):
    k, c, d = means.shape
    y = np.arange(n) % k
    rng.shuffle(y)
    comp = rng.integers(0, c, size=n)
    mu = means[y, comp]
    if offset is not None:
        mu = mu + offset
    return mu + std * rng.standard_normal((n, d)), y


def make_task(spec: TaskSpec, seed: int) -> TaskData:
    """Deterministic train/test/OOD splits and a perturbed pretraining pool.

    The pool uses every component mean jittered by a random vector of norm
    0.5 * separation, with per-coordinate std sqrt(2) (covariance x2).
    """
    ss = np.random.SeedSequence([int(seed), 0x7A5C])
    r_means, r_train, r_test, r_ood, r_pool = (np.random.default_rng(s) for s in ss.spawn(5))
    means = _component_means(spec, r_means)
    k = spec.num_classes
    x, y = _draw(means, spec.n_train, 1.0, r_train)
    train = LabeledDataset(x, y, k, "train")
    x, y = _draw(means, spec.n_test, 1.0, r_test)
    test = LabeledDataset(x, y, k, "test")
    ood = None
    if spec.ood_shift is not None:
        x, y = _draw(means, spec.n_test, spec.ood_shift.scale, r_ood, spec.resolved_shift())
        ood = LabeledDataset(x, y, k, "ood_test")
    jitter = r_pool.standard_normal(means.shape)
    jitter *= 0.5 * spec.separation / np.linalg.norm(jitter, axis=-1, keepdims=True)
    x, y = _draw(means + jitter, spec.n_pretrain, math.sqrt(2.0), r_pool)
    pool = LabeledDataset(x, y, k, "pretrain")
    return TaskData(spec, train, test, ood, pool, means)


# ---------------------------------------------------------------------------
# toggles and configuration


@dataclass(frozen=True)
class PipelineToggles:
    finetune: bool = False
    latent_prior: bool = False
    visual_guidance: bool = False
    mmd_loss: bool = False

    def __post_init__(self):
        if (self.mmd_loss or self.visual_guidance) and not self.finetune:
            raise ValueError("mmd_loss and visual_guidance require finetune")

    def label(self) -> str:
        on = [n for n in ("latent_prior", "visual_guidance", "mmd_loss", "finetune") if getattr(self, n)]
        return "+".join(on) if on else "baseline"


ALL_OFF = PipelineToggles()
FULL_METHOD = PipelineToggles(finetune=True, latent_prior=True, visual_guidance=True, mmd_loss=True)

# (latent prior, visual guidance, distribution matching, finetune), in table order
ABLATION_ROWS: tuple[tuple[bool, bool, bool, bool], ...] = (
    (False, False, False, False),
    (False, False, False, True),
    (False, True, False, True),
    (False, False, True, True),
    (False, True, True, True),
    (True, False, False, False),
    (True, False, False, True),
    (True, True, False, True),
    (True, False, True, True),
    (True, True, True, True),
)


def ablation_toggles() -> list[PipelineToggles]:
    return [PipelineToggles(finetune=f, latent_prior=lp, visual_guidance=vg, mmd_loss=dm)
            for lp, vg, dm, f in ABLATION_ROWS]


@dataclass(frozen=True)
class GeneratorConfig:
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: tuple[int, ...] = (128, 128)
    time_dim: int = 16
    embed_dim: int = 16
    encoder_hidden: tuple[int, ...] = (64, 64)
    encoder_dim: int = 8
    encoder_epochs: int = 30
    pretrain_steps: int = 4000
    finetune_steps: int = 3000
    batch_size: int = 256
    lr: float = 1e-3
    cond_drop: float = 0.1
    visual_m: int = 32
    gamma: float = 0.05
    weighting: str = "simple"


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: tuple[int, ...] = (64,)
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3


@dataclass(frozen=True)
class BenchConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    synth_batch: int = 1000
    task_seed: int = 0


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# stream tags for derive_seed
_PRETRAIN, _ENCODER, _FINETUNE, _SYNTH, _CLF_REAL, _CLF_SYN, _CLF_COMB = range(1, 8)


# ---------------------------------------------------------------------------
# downstream classifier


def train_classifier(data: LabeledDataset, cfg: ClassifierConfig, seed: int) -> DenseNet:
    missing = np.flatnonzero(data.class_counts() == 0)
    if missing.size:
        raise ValueError(f"training set is missing classes {missing.tolist()}")
    spec = NetSpec(data.dim, cfg.hidden, data.num_classes, "silu", "softmax")
    net = net_init(spec, derive_seed(seed, 11))
    opt = optimizer_init(net.params(), lr=cfg.lr)
    rng = np.random.default_rng(derive_seed(seed, 12))
    onehot = np.eye(data.num_classes)[data.y]
    n = len(data)
    params, names = net.params(), net.param_names()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            p, tape = net_forward(net, data.x[idx])
            g = net_backward(net, tape, (p - onehot[idx]) / len(idx), through_head=False)
            apply_update(params, g.as_list(), opt, names)
            net.version += 1
    return net


def accuracy(net: DenseNet, data: LabeledDataset) -> float:
    return float(np.mean(np.argmax(net(data.x), axis=1) == data.y))


def train_and_eval_classifier(
    train: LabeledDataset, test_sets: list[LabeledDataset], cfg: ClassifierConfig, seed: int
) -> list[float]:
    """Top-1 accuracy on each test set of a classifier trained with a fixed budget."""
    net = train_classifier(train, cfg, seed)
    return [accuracy(net, t) for t in test_sets]


# ---------------------------------------------------------------------------
# generator


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, curves: dict):
        super().__init__(message)
        self.curves = curves


@dataclass
class Generator:
    denoiser: Denoiser
    table: cnd.ConditionTable
    encoder: DenseNet
    sched: NoiseSchedule
    cfg: GeneratorConfig
    toggles: PipelineToggles
    seed: int
    curves: dict = field(default_factory=dict)  # phase -> {"simple","mmd","total"} arrays

    @property
    def num_classes(self) -> int:
        return self.table.num_classes

    @property
    def data_dim(self) -> int:
        return self.denoiser.data_dim

    def save(self, path: str | Path) -> None:
        meta = {
            "cfg": _jsonable(asdict(self.cfg)),
            "toggles": asdict(self.toggles),
            "seed": int(self.seed),
            "data_dim": self.data_dim,
            "num_classes": self.num_classes,
            "visual_dim": self.table.visual_dim,
        }
        save_checkpoint(
            path,
            nets={"denoiser": self.denoiser.net, "encoder": self.encoder},
            arrays={"class_embeddings": self.table.class_embeddings, "null_embedding": self.table.null_embedding},
            meta=meta,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Generator":
        nets, arrays, meta = load_checkpoint(path)
        c = meta["cfg"]
        cfg = GeneratorConfig(**{**c, "hidden": tuple(c["hidden"]), "encoder_hidden": tuple(c["encoder_hidden"])})
        table = cnd.ConditionTable(
            meta["num_classes"], arrays["class_embeddings"], arrays["null_embedding"], meta["visual_dim"]
        )
        den = Denoiser(nets["denoiser"], meta["data_dim"], table.cond_dim, cfg.T, cfg.time_dim)
        return cls(den, table, nets["encoder"], make_schedule(cfg.T, cfg.beta_start, cfg.beta_end),
                   cfg, PipelineToggles(**meta["toggles"]), meta["seed"])

    def checkpoint_bytes(self) -> bytes:
        import tempfile
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "g.ckpt"
            self.save(p)
            return p.read_bytes()


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    return d


def train_encoder(pool: LabeledDataset, cfg: GeneratorConfig, seed: int) -> DenseNet:
    """Feature map psi: an MLP trained on the pretraining pool through a linear softmax head."""
    enc = net_init(NetSpec(pool.dim, cfg.encoder_hidden, cfg.encoder_dim, "silu", "identity"), derive_seed(seed, 21))
    head = net_init(NetSpec(cfg.encoder_dim, (), pool.num_classes, "identity", "softmax"), derive_seed(seed, 22))
    params = enc.params() + head.params()
    opt = optimizer_init(params, lr=cfg.lr)
    rng = np.random.default_rng(derive_seed(seed, 23))
    onehot = np.eye(pool.num_classes)[pool.y]
    n = len(pool)
    for _ in range(cfg.encoder_epochs):
        order = rng.permutation(n)
        for start in range(0, n, 64):
            idx = order[start:start + 64]
            f, t_enc = net_forward(enc, pool.x[idx])
            p, t_head = net_forward(head, f)
            gh = net_backward(head, t_head, (p - onehot[idx]) / len(idx), through_head=False)
            ge = net_backward(enc, t_enc, gh.input)
            apply_update(params, ge.as_list() + gh.as_list(), opt)
            enc.version += 1
            head.version += 1
    return round_to_f32(enc)


def _train_steps(
    gen: Generator, data: LabeledDataset, steps: int, seed: int, gamma: float, visual: bool, phase: str
) -> None:
    cfg = gen.cfg
    den, table = gen.denoiser, gen.table
    params = den.net.params() + [table.class_embeddings, table.null_embedding]
    names = den.net.param_names() + ["class embeddings", "null embedding"]
    opt = optimizer_init(params, lr=cfg.lr)
    rng = np.random.default_rng(seed)
    loss_cfg = LossConfig(gamma, cfg.weighting)
    per_class = [data.of_class(c) for c in range(gen.num_classes)]
    log = {k: np.zeros(steps) for k in ("simple", "mmd", "total")}
    n = len(data)
    for step in range(steps):
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        labels = data.y[idx]
        drop = cnd.drop_mask(len(idx), cfg.cond_drop, rng)
        vis = None
        if visual:
            bank = np.zeros((gen.num_classes, table.visual_dim))
            for c in np.unique(labels):
                bank[c] = cnd.visual_guidance(gen.encoder, per_class[c], cfg.visual_m, rng)
            vis = bank[labels]
        cond = cnd.condition_matrix(table, labels, vis, drop)
        out = combined_loss(den, gen.sched, data.x[idx], cond, loss_cfg, rng)
        log["simple"][step], log["mmd"][step], log["total"][step] = out.simple, out.mmd, out.total
        if not math.isfinite(out.total):
            gen.curves[phase] = {k: v[: step + 1] for k, v in log.items()}
            raise TrainingDiverged(f"non-finite loss at {phase} step {step}", gen.curves)
        g, g_cond = combined_loss_grads(den, out, gamma)
        g_cls, g_null = cnd.embedding_grads(table, labels, drop, g_cond)
        apply_update(params, g.as_list() + [g_cls, g_null], opt, names)
        den.net.version += 1
    gen.curves[phase] = log


_PRETRAIN_CACHE: dict[tuple, Generator] = {}


def _pool_key(pool: LabeledDataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(pool.x).tobytes())
    h.update(np.ascontiguousarray(pool.y).tobytes())
    return h.hexdigest()


def pretrain_generator(pool: LabeledDataset, cfg: GeneratorConfig, seed: int) -> Generator:
    """Encoder + denoiser trained on the pretraining pool (plain loss, no visual slot).

    Results are memoised per (pool, cfg, seed); callers get a deep copy.
    """
    key = (_pool_key(pool), cfg, int(seed))
    if key not in _PRETRAIN_CACHE:
        encoder = train_encoder(pool, cfg, derive_seed(seed, _ENCODER))
        sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
        table = cnd.init_condition_table(pool.num_classes, cfg.embed_dim, cfg.encoder_dim, derive_seed(seed, 31))
        den = make_denoiser(pool.dim, table.cond_dim, cfg.T, cfg.hidden, cfg.time_dim, derive_seed(seed, 32))
        gen = Generator(den, table, encoder, sched, cfg, ALL_OFF, int(seed))
        _train_steps(gen, pool, cfg.pretrain_steps, derive_seed(seed, _PRETRAIN), 0.0, False, "pretrain")
        _finalize(gen)
        _PRETRAIN_CACHE[key] = gen
    return _copy_generator(_PRETRAIN_CACHE[key])


def _finalize(gen: Generator) -> None:
    round_to_f32(gen.denoiser.net)
    for a in (gen.table.class_embeddings, gen.table.null_embedding):
        a[...] = a.astype(np.float32)


def _copy_generator(g: Generator) -> Generator:
    net = g.denoiser.net.copy()
    den = Denoiser(net, g.denoiser.data_dim, g.denoiser.cond_dim, g.denoiser.T, g.denoiser.time_dim)
    curves = {ph: {k: v.copy() for k, v in c.items()} for ph, c in g.curves.items()}
    return Generator(den, g.table.copy(), g.encoder.copy(), g.sched, g.cfg, g.toggles, g.seed, curves)


def train_generator(
    data: LabeledDataset, toggles: PipelineToggles, cfg: GeneratorConfig, seed: int,
    pretrain_pool: LabeledDataset, pretrain_seed: int | None = None,
) -> Generator:
    """Pretrain on ``pretrain_pool``; if ``toggles.finetune``, continue on ``data``.

    Finetuning uses L_simple + gamma * L_MMD when ``toggles.mmd_loss`` and the
    plain loss otherwise; the visual-guidance slot is filled iff
    ``toggles.visual_guidance``. ``pretrain_seed`` defaults to ``seed``.
    """
    if len(data) == 0:
        raise ValueError("empty training data")
    gen = pretrain_generator(pretrain_pool, cfg, seed if pretrain_seed is None else pretrain_seed)
    gen.seed = int(seed)
    gen.toggles = toggles
    if toggles.finetune:
        gamma = cfg.gamma if toggles.mmd_loss else 0.0
        _train_steps(gen, data, cfg.finetune_steps, derive_seed(seed, _FINETUNE), gamma,
                     toggles.visual_guidance, "finetune")
        _finalize(gen)
    return gen


def balanced_labels(n: int, num_classes: int) -> np.ndarray:
    return np.arange(n) % num_classes


def synthesize_dataset(
    gen: Generator, n: int, toggles: PipelineToggles, real_pool: LabeledDataset, seed: int,
    sampler: SamplerConfig | None = None, synth_batch: int = 1000, frozen_visual: bool = False,
) -> LabeledDataset:
    """Class-balanced synthetic set of size ``n``.

    With ``toggles.latent_prior`` every chain starts from a partially noised
    real point of its own class; otherwise from N(0, I). Visual guidance is
    drawn afresh from ``real_pool`` for each synthesis batch, or once per
    class when ``frozen_visual`` is set.
    """
    k = gen.num_classes
    if n < k:
        raise ValueError(f"need n >= num_classes ({k})")
    if (toggles.latent_prior or toggles.visual_guidance) and len(real_pool) == 0:
        raise ValueError("real_pool is empty")
    base = sampler or SamplerConfig()
    per_class = [real_pool.of_class(c) for c in range(k)]
    if (toggles.latent_prior or toggles.visual_guidance) and any(len(p) == 0 for p in per_class):
        raise ValueError("real_pool lacks some classes")
    labels = balanced_labels(n, k)
    rng = np.random.default_rng(derive_seed(seed, 41))
    table = gen.table

    def draw_bank():
        return np.stack([cnd.visual_guidance(gen.encoder, per_class[c], gen.cfg.visual_m, rng) for c in range(k)])

    frozen = draw_bank() if toggles.visual_guidance and frozen_visual else None
    xs = []
    for start in range(0, n, synth_batch):
        lab = labels[start:start + synth_batch]
        vis = None
        if toggles.visual_guidance:
            vis = (frozen if frozen is not None else draw_bank())[lab]
        cond = cnd.condition_matrix(table, lab, vis)
        null = cnd.null_matrix(table, len(lab))
        prior_src = None
        if toggles.latent_prior:
            prior_src = np.stack([per_class[c][rng.integers(len(per_class[c]))] for c in lab])
        cfg = replace(base, prior="latent" if toggles.latent_prior else "gaussian",
                      seed=int(rng.integers(2**31)))
        xs.append(sample(gen.denoiser, gen.sched, cfg, cond, null, prior_src))
    return LabeledDataset(np.vstack(xs), labels, k, "synthetic")


# ---------------------------------------------------------------------------
# experiments


def _mean_std(v) -> tuple[float, float]:
    a = np.asarray(v, dtype=float)
    return float(a.mean()), float(a.std())


@dataclass
class SeedOutcome:
    seed: int
    real: float
    synthetic: float
    combined: float
    mmd: float
    ood_real: float | None = None
    ood_synthetic: float | None = None
    objective: ObjectiveReport | None = None


@dataclass
class ExperimentResult:
    toggles: PipelineToggles
    seeds: list[int]
    outcomes: list[SeedOutcome]

    def arm(self, name: str) -> list[float]:
        return [getattr(o, name) for o in self.outcomes]

    def mean(self, name: str) -> float:
        return _mean_std(self.arm(name))[0]

    def std(self, name: str) -> float:
        return _mean_std(self.arm(name))[1]


def _setup(spec: TaskSpec, cfg: BenchConfig) -> TaskData:
    return make_task(spec, cfg.task_seed)


def _replace_augment_job(args) -> SeedOutcome:
    task, toggles, cfg, seed = args
    gcfg, ccfg = cfg.generator, cfg.classifier
    tests = [task.test] + ([task.ood_test] if task.ood_test is not None else [])
    gen = train_generator(task.train, toggles, gcfg, seed, task.pretrain_pool)
    syn = synthesize_dataset(gen, len(task.train), toggles, task.train, derive_seed(seed, _SYNTH),
                             cfg.sampler, cfg.synth_batch)
    real_net = train_classifier(task.train, ccfg, derive_seed(seed, _CLF_REAL))
    syn_acc = train_and_eval_classifier(syn, tests, ccfg, derive_seed(seed, _CLF_SYN))
    comb_acc = train_and_eval_classifier(concat(task.train, syn, "combined"), [task.test], ccfg,
                                         derive_seed(seed, _CLF_COMB))
    real_acc = [accuracy(real_net, t) for t in tests]
    mmd = mmd_sq_linear(gen.encoder(task.test.x), gen.encoder(syn.x))
    report = synthesis_objective_report(task.train, syn, gen.encoder, real_net, 0.0)
    return SeedOutcome(
        seed, real_acc[0], syn_acc[0], comb_acc[0], mmd,
        real_acc[1] if len(tests) > 1 else None, syn_acc[1] if len(tests) > 1 else None, report,
    )


def run_replace_augment(
    spec: TaskSpec, toggles: PipelineToggles, seeds: list[int], cfg: BenchConfig | None = None,
    task: TaskData | None = None,
) -> ExperimentResult:
    """Real-only, synthetic-only and real+synthetic (1x, concatenated) arms per seed."""
    if not seeds:
        raise ValueError("need at least one seed")
    cfg = cfg or BenchConfig()
    task = task or _setup(spec, cfg)
    outcomes = pmap(_replace_augment_job, [(task, toggles, cfg, s) for s in seeds])
    return ExperimentResult(toggles, list(seeds), outcomes)


@dataclass
class ScalePoint:
    k: float
    accuracies: list[float]
    ood_accuracies: list[float] | None

    @property
    def mean(self) -> float:
        return _mean_std(self.accuracies)[0]

    @property
    def std(self) -> float:
        return _mean_std(self.accuracies)[1]


@dataclass
class ScaleCurve:
    toggles: PipelineToggles
    seeds: list[int]
    points: list[ScalePoint]
    real_accuracies: list[float]
    real_ood_accuracies: list[float] | None

    def spearman(self) -> float:
        ks = [p.k for p in self.points]
        if len(ks) < 2:
            return float("nan")
        return float(spearmanr(ks, [p.mean for p in self.points]).statistic)


def _scale_job(args):
    task, toggles, cfg, seed, k_list = args
    gcfg, ccfg = cfg.generator, cfg.classifier
    tests = [task.test] + ([task.ood_test] if task.ood_test is not None else [])
    gen = train_generator(task.train, toggles, gcfg, seed, task.pretrain_pool)
    accs = []
    for k in k_list:
        n = max(task.spec.num_classes, int(round(k * len(task.train))))
        syn = synthesize_dataset(gen, n, toggles, task.train, derive_seed(seed, _SYNTH), cfg.sampler, cfg.synth_batch)
        accs.append(train_and_eval_classifier(syn, tests, ccfg, derive_seed(seed, _CLF_SYN)))
    real = train_and_eval_classifier(task.train, tests, ccfg, derive_seed(seed, _CLF_REAL))
    return accs, real


def run_scale_sweep(
    spec: TaskSpec, toggles: PipelineToggles, k_list: list[float], seeds: list[int],
    cfg: BenchConfig | None = None, task: TaskData | None = None,
) -> ScaleCurve:
    """Synthetic-only accuracy when training on k x |real| synthetic points."""
    if not k_list or any(k <= 0 for k in k_list):
        raise ValueError("k_list must be nonempty and positive")
    if not seeds:
        raise ValueError("need at least one seed")
    cfg = cfg or BenchConfig()
    task = task or _setup(spec, cfg)
    jobs = pmap(_scale_job, [(task, toggles, cfg, s, list(k_list)) for s in seeds])
    has_ood = task.ood_test is not None
    points = []
    for i, k in enumerate(k_list):
        points.append(ScalePoint(
            float(k),
            [j[0][i][0] for j in jobs],
            [j[0][i][1] for j in jobs] if has_ood else None,
        ))
    return ScaleCurve(
        toggles, list(seeds), points,
        [j[1][0] for j in jobs], [j[1][1] for j in jobs] if has_ood else None,
    )


@dataclass
class AblationRow:
    toggles: PipelineToggles
    accuracies: list[float]
    mmd: list[float]

    @property
    def mean(self) -> float:
        return _mean_std(self.accuracies)[0]

    @property
    def std(self) -> float:
        return _mean_std(self.accuracies)[1]


def _ablation_job(args):
    task, cfg, seed = args
    out = []
    for toggles in ablation_toggles():
        gen = train_generator(task.train, toggles, cfg.generator, seed, task.pretrain_pool)
        syn = synthesize_dataset(gen, len(task.train), toggles, task.train, derive_seed(seed, _SYNTH),
                                 cfg.sampler, cfg.synth_batch)
        acc = train_and_eval_classifier(syn, [task.test], cfg.classifier, derive_seed(seed, _CLF_SYN))[0]
        out.append((acc, mmd_sq_linear(gen.encoder(task.test.x), gen.encoder(syn.x))))
    return out


def run_ablation_grid(
    spec: TaskSpec, seeds: list[int], cfg: BenchConfig | None = None, task: TaskData | None = None
) -> list[AblationRow]:
    """Synthetic-only accuracy for the ten toggle rows of the ablation table."""
    if not seeds:
        raise ValueError("need at least one seed")
    cfg = cfg or BenchConfig()
    task = task or _setup(spec, cfg)
    per_seed = pmap(_ablation_job, [(task, cfg, s) for s in seeds])
    rows = []
    for i, toggles in enumerate(ablation_toggles()):
        rows.append(AblationRow(toggles, [r[i][0] for r in per_seed], [r[i][1] for r in per_seed]))
    return rows
