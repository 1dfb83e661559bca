"""Command-line entry point: ``dmsynth <command> --config PATH --seed N --out DIR``.

Every command validates its JSON config before doing any work, writes the
resolved config (all defaults filled in) next to its outputs, and finishes
with a ``manifest.json`` of SHA-256 hashes. Exit status is 0 on success, 1
when the config or arguments are invalid and 2 when the run itself fails.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .diffusion import SamplerConfig
from .matching import ObjectiveReport, mmd_sq_rbf, synthesis_objective_report
from .nets import NetSpec, round_to_f32, save_checkpoint
from .parallel import worker_count
from .privacy import DEFAULT_MIA_TASK, LiraVariant, MiaConfig, null_tpr_tolerance, run_mia_experiment
from .svg import line_plot_svg
from .taskbench import (
    ABLATION_ROWS, BenchConfig, ClassifierConfig, Generator, GeneratorConfig, LabeledDataset, OODShift,
    PipelineToggles, TaskSpec, TrainingDiverged, accuracy, derive_seed, make_task, run_ablation_grid,
    run_replace_augment, run_scale_sweep, synthesize_dataset, train_classifier, train_generator,
    _CLF_REAL, _SYNTH,
)
from .theory import BoundParams, FiniteClassExperiment, bound_violation_mc, gen_bound

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class ConfigError(Exception):
    """Validation failure; the message is already formatted for the user."""


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Field:
    default: Any
    kind: str  # int, float, bool, str, ints, floats, strs
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    choices: tuple[str, ...] = ()
    nullable: bool = False


@dataclass(frozen=True)
class Section:
    fields: dict
    nullable: bool = False


def _ge(v):
    return (lambda x: x >= v), f"must be >= {v}"


def _gt(v):
    return (lambda x: x > v), f"must be > {v}"


def _unit_open():
    return (lambda x: 0 < x < 1), "must lie strictly between 0 and 1"


def F(default, kind, bound=None, **kw) -> Field:
    check, rule = bound if bound else (None, "")
    return Field(default, kind, check, rule, **kw)


SCHEMA = Section({
    "run": Section({
        "command": F(None, "str", nullable=True, choices=(
            "gen-task", "train-gen", "synth", "eval-mmd", "train-clf", "replace-augment", "scale-sweep",
            "ablate", "bound", "mia")),
        "seed": F(None, "int", _ge(0), nullable=True),
    }),
    "task": Section({
        "seed": F(None, "int", _ge(0), nullable=True),
        "num_classes": F(3, "int", _ge(2)),
        "dim": F(2, "int", _ge(1)),
        "family": F("gaussian-mixture", "str", choices=("gaussian-mixture", "ring-mixture")),
        "components_per_class": F(2, "int", _ge(1)),
        "separation": F(4.0, "float", _gt(0)),
        "n_train": F(3000, "int", _ge(1)),
        "n_test": F(2000, "int", _ge(1)),
        "n_pretrain": F(3000, "int", _ge(1)),
        "ood_shift": Section({
            "mean_shift": F(None, "floats", nullable=True),
            "scale": F(1.0, "float", _gt(0)),
        }, nullable=True),
    }),
    "schedule": Section({
        "T": F(200, "int", _ge(1)),
        "beta_start": F(1e-4, "float", _unit_open()),
        "beta_end": F(0.02, "float", _unit_open()),
    }),
    "nets": Section({
        "denoiser_hidden": F([128, 128], "ints", _ge(1)),
        "time_dim": F(16, "int", ((lambda x: x >= 2 and x % 2 == 0), "must be an even integer >= 2")),
        "embed_dim": F(16, "int", _ge(1)),
        "encoder_hidden": F([64, 64], "ints", _ge(1)),
        "encoder_dim": F(8, "int", _ge(1)),
        "classifier_hidden": F([64], "ints", _ge(1)),
    }),
    "training": Section({
        "encoder_epochs": F(30, "int", _ge(1)),
        "pretrain_steps": F(4000, "int", _ge(1)),
        "finetune_steps": F(3000, "int", _ge(1)),
        "batch_size": F(256, "int", _ge(1)),
        "lr": F(1e-3, "float", _gt(0)),
        "cond_drop": F(0.1, "float", ((lambda x: 0 <= x <= 1), "must lie in [0, 1]")),
        "visual_m": F(32, "int", _ge(1)),
    }),
    "classifier": Section({
        "epochs": F(200, "int", _ge(1)),
        "batch_size": F(64, "int", _ge(1)),
        "lr": F(1e-3, "float", _gt(0)),
    }),
    "loss": Section({
        "gamma": F(0.05, "float", _ge(0)),
        "weighting": F("simple", "str", choices=("simple", "snr")),
    }),
    "sampler": Section({
        "guidance_scale": F(2.0, "float", _ge(0)),
        "num_steps": F(30, "int", _ge(1)),
        "strength": F(0.75, "float", ((lambda x: 0 < x <= 1), "must lie in (0, 1]")),
        "synth_batch": F(1000, "int", _ge(1)),
    }),
    "toggles": Section({
        "finetune": F(True, "bool"),
        "latent_prior": F(True, "bool"),
        "visual_guidance": F(True, "bool"),
        "mmd_loss": F(True, "bool"),
    }),
    "experiment": Section({
        "num_seeds": F(5, "int", _ge(1)),
        "scale_k": F([1.0, 2.0, 5.0, 10.0], "floats", _gt(0)),
        "lambda": F(0.0, "float", _ge(0)),
        "rbf_bandwidth": F(1.0, "float", _gt(0)),
    }),
    "bound": Section({
        "log_cardinality": F(math.log(50), "float", _ge(0)),
        "delta": F(0.05, "float", _unit_open()),
        "sample_size": F(500, "int", _ge(1)),
        "mc_enabled": F(True, "bool"),
        "mc_num_thresholds": F(50, "int", _ge(1)),
        "mc_sample_size": F(500, "int", _ge(1)),
        "mc_t": F(0.1, "float", _gt(0)),
        "mc_trials": F(1000, "int", _ge(1)),
        "mc_label_noise": F(0.1, "float", ((lambda x: 0 <= x <= 0.5), "must lie in [0, 0.5]")),
        "mc_population_size": F(100_000, "int", _ge(1)),
    }),
    "mia": Section({
        "arms": F(["direct", "synthetic"], "strs", choices=("direct", "synthetic")),
        "dim": F(DEFAULT_MIA_TASK.dim, "int", _ge(1)),
        "separation": F(DEFAULT_MIA_TASK.separation, "float", _gt(0)),
        "num_seeds": F(3, "int", _ge(1)),
        "num_shadows": F(8, "int", ((lambda x: x >= 4 and x % 2 == 0), "must be an even integer >= 4")),
        "pool_size": F(500, "int", _ge(4)),
        "epoch_multiplier": F(10, "int", _ge(1)),
        "variant": F(LiraVariant.FIXED_VARIANCE.value, "str", choices=tuple(v.value for v in LiraVariant)),
        "target_fpr": F(1e-3, "float", _unit_open()),
    }),
})


def default_values(section: Section = SCHEMA) -> dict:
    out = {}
    for k, f in section.fields.items():
        out[k] = default_values(f) if isinstance(f, Section) else copy.deepcopy(f.default)
    return out


# ---------------------------------------------------------------------------
# parsing


def _key_lines(text: str) -> dict[tuple[str, ...], int]:
    """Line number of every object key, by key path. ``text`` must be valid JSON."""
    lines: dict[tuple[str, ...], int] = {}
    stack: list[list] = []  # [kind, current key]
    expect_key = False
    line, i, n = 1, 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
        elif ch == '"':
            j = i + 1
            while text[j] != '"':
                j += 2 if text[j] == "\\" else 1
            if expect_key and stack and stack[-1][0] == "obj":
                key = json.loads(text[i:j + 1])
                stack[-1][1] = key
                path = tuple(f[1] for f in stack[:-1] if f[0] == "obj") + (key,)
                lines.setdefault(path, line)
            i = j
        elif ch == "{":
            stack.append(["obj", None])
            expect_key = True
        elif ch == "[":
            stack.append(["arr", None])
            expect_key = False
        elif ch in "}]":
            stack.pop()
            expect_key = False
        elif ch == ":":
            expect_key = False
        elif ch == ",":
            expect_key = bool(stack) and stack[-1][0] == "obj"
        i += 1
    return lines


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


_KIND_NAMES = {
    "int": "an integer", "float": "a number", "bool": "true or false", "str": "a string",
    "ints": "a list of integers", "floats": "a list of numbers", "strs": "a list of strings",
}


def _coerce(f: Field, v):
    """Return the normalized value or raise ValueError with a reason."""
    if v is None:
        if f.nullable:
            return None
        raise ValueError("must not be null")
    k = f.kind
    if k == "int":
        ok = _is_int(v)
    elif k == "float":
        ok = _is_num(v)
        v = float(v) if ok else v
    elif k == "bool":
        ok = isinstance(v, bool)
    elif k == "str":
        ok = isinstance(v, str)
    elif k == "ints":
        ok = isinstance(v, list) and all(_is_int(x) for x in v)
    elif k == "floats":
        ok = isinstance(v, list) and len(v) > 0 and all(_is_num(x) for x in v)
        v = [float(x) for x in v] if ok else v
    elif k == "strs":
        ok = isinstance(v, list) and len(v) > 0 and all(isinstance(x, str) for x in v)
    else:  # pragma: no cover
        raise AssertionError(k)
    if not ok:
        raise ValueError(f"expected {_KIND_NAMES[k]}, got {json.dumps(v)}")
    items = v if isinstance(v, list) else [v]
    if f.choices:
        bad = [x for x in items if x not in f.choices]
        if bad:
            raise ValueError(f"{bad[0]!r} is not one of {', '.join(f.choices)}")
        if k == "strs" and len(set(items)) != len(items):
            raise ValueError("entries must be distinct")
    if f.check is not None:
        for x in items:
            if not f.check(x):
                raise ValueError(f"{f.rule} (got {json.dumps(x)})")
    return v


class _Errors:
    def __init__(self, source: str, lines: dict):
        self.source, self.lines, self.items = source, lines, []

    def add(self, path: tuple[str, ...], msg: str) -> None:
        line = None
        p = path
        while p and line is None:
            line = self.lines.get(p)
            p = p[:-1]
        self.items.append(f"{self.source}:{line or 1}: {'.'.join(path)}: {msg}")


def _resolve(section: Section, raw, path: tuple[str, ...], err: _Errors):
    if not isinstance(raw, dict):
        err.add(path, f"expected an object, got {json.dumps(raw)}")
        return default_values(section)
    out = {}
    for key in raw:
        if key not in section.fields:
            err.add(path + (key,), f"unknown key (allowed: {', '.join(section.fields)})")
    for key, f in section.fields.items():
        p = path + (key,)
        if isinstance(f, Section):
            if key not in raw:
                out[key] = default_values(f)
            elif raw[key] is None and f.nullable:
                out[key] = None
            else:
                out[key] = _resolve(f, raw[key], p, err)
            continue
        if key not in raw:
            out[key] = copy.deepcopy(f.default)
            continue
        try:
            out[key] = _coerce(f, raw[key])
        except ValueError as e:
            err.add(p, str(e))
            out[key] = copy.deepcopy(f.default)
    return out


def _cross_checks(v: dict, err: _Errors) -> None:
    t = v["task"]
    for name in ("n_train", "n_test", "n_pretrain"):
        if t[name] < t["num_classes"]:
            err.add(("task", name), f"must be >= task.num_classes ({t['num_classes']})")
    if t["family"] == "ring-mixture" and t["dim"] < 2:
        err.add(("task", "family"), "ring-mixture needs task.dim >= 2")
    ood = t["ood_shift"]
    if ood is not None and ood["mean_shift"] is not None and len(ood["mean_shift"]) != t["dim"]:
        err.add(("task", "ood_shift", "mean_shift"), f"length must equal task.dim ({t['dim']})")
    s = v["schedule"]
    if s["beta_start"] > s["beta_end"]:
        err.add(("schedule", "beta_end"), "must be >= schedule.beta_start")
    if v["sampler"]["num_steps"] > s["T"]:
        err.add(("sampler", "num_steps"), f"must be <= schedule.T ({s['T']})")
    tg = v["toggles"]
    for name in ("mmd_loss", "visual_guidance"):
        if tg[name] and not tg["finetune"]:
            err.add(("toggles", name), "requires toggles.finetune")
    if v["mia"]["pool_size"] > t["n_train"]:
        err.add(("mia", "pool_size"), f"must be <= task.n_train ({t['n_train']})")


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration. ``values`` holds every setting, defaults included."""

    values: dict

    def snapshot(self) -> str:
        return json.dumps(self.values, indent=2) + "\n"

    def task_spec(self) -> TaskSpec:
        t = self.values["task"]
        ood = t["ood_shift"]
        shift = None
        if ood is not None:
            ms = ood["mean_shift"]
            shift = OODShift(None if ms is None else tuple(ms), ood["scale"])
        return TaskSpec(t["num_classes"], t["dim"], t["family"], t["components_per_class"], t["separation"],
                        t["n_train"], t["n_test"], t["n_pretrain"], shift)

    def task_seed(self, seed: int) -> int:
        s = self.values["task"]["seed"]
        return seed if s is None else s

    def generator(self) -> GeneratorConfig:
        v = self.values
        s, n, tr, lo = v["schedule"], v["nets"], v["training"], v["loss"]
        return GeneratorConfig(
            T=s["T"], beta_start=s["beta_start"], beta_end=s["beta_end"],
            hidden=tuple(n["denoiser_hidden"]), time_dim=n["time_dim"], embed_dim=n["embed_dim"],
            encoder_hidden=tuple(n["encoder_hidden"]), encoder_dim=n["encoder_dim"],
            encoder_epochs=tr["encoder_epochs"], pretrain_steps=tr["pretrain_steps"],
            finetune_steps=tr["finetune_steps"], batch_size=tr["batch_size"], lr=tr["lr"],
            cond_drop=tr["cond_drop"], visual_m=tr["visual_m"], gamma=lo["gamma"], weighting=lo["weighting"],
        )

    def classifier(self) -> ClassifierConfig:
        c = self.values["classifier"]
        return ClassifierConfig(tuple(self.values["nets"]["classifier_hidden"]), c["epochs"], c["batch_size"], c["lr"])

    def sampler(self) -> SamplerConfig:
        s = self.values["sampler"]
        return SamplerConfig(s["guidance_scale"], s["num_steps"], "gaussian", s["strength"], 0)

    def bench(self, seed: int) -> BenchConfig:
        return BenchConfig(self.generator(), self.sampler(), self.classifier(),
                           self.values["sampler"]["synth_batch"], self.task_seed(seed))

    def toggles(self) -> PipelineToggles:
        return PipelineToggles(**self.values["toggles"])

    def seeds(self, seed: int, key: str = "experiment") -> list[int]:
        return [seed + i for i in range(self.values[key]["num_seeds"])]

    def mia(self, seed: int, arm: str) -> MiaConfig:
        m = self.values["mia"]
        return MiaConfig(m["num_shadows"], arm, tuple(self.seeds(seed, "mia")), m["pool_size"],
                         m["epoch_multiplier"], LiraVariant(m["variant"]), m["target_fpr"],
                         self.toggles(), self.bench(seed))

    def mia_task_spec(self) -> TaskSpec:
        """The task with the privacy section's dimension and separation; no OOD split."""
        m = self.values["mia"]
        return replace(self.task_spec(), dim=m["dim"], separation=m["separation"], ood_shift=None)

    def bound(self) -> BoundParams:
        b = self.values["bound"]
        return BoundParams(b["log_cardinality"], b["delta"], b["sample_size"])

    def experiment(self) -> FiniteClassExperiment:
        b = self.values["bound"]
        return FiniteClassExperiment(
            thresholds=tuple(np.linspace(0.0, 1.0, b["mc_num_thresholds"])),
            label_noise=b["mc_label_noise"], population_size=b["mc_population_size"],
        )


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Validate JSON config text. Raises :class:`ConfigError` listing every problem."""
    if not text.strip():
        raw = {}
        lines = {}
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{source}:{e.lineno}: invalid JSON: {e.msg} (column {e.colno})") from None
        lines = _key_lines(text)
    err = _Errors(source, lines)
    values = _resolve(SCHEMA, raw, (), err)
    if not err.items:
        _cross_checks(values, err)
    if not err.items:
        cfg = RunConfig(values)
        try:  # the dataclasses re-check their own invariants
            cfg.task_spec(), cfg.generator(), cfg.sampler(), cfg.toggles(), cfg.bound()
            cfg.mia_task_spec()
            for arm in values["mia"]["arms"]:
                cfg.mia(0, arm)
        except ValueError as e:
            err.add((), str(e))
    if err.items:
        raise ConfigError("\n".join(err.items))
    return RunConfig(values)


def parse_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"{p}: cannot read config: {e.strerror}") from None
    return parse_config_text(text, str(p))


# ---------------------------------------------------------------------------
# output helpers


def fmt(v) -> str:
    """CSV cell: 9 significant digits, '.' decimal point, empty for missing."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def write_csv(path: Path, columns: list[str], rows: list[list]) -> None:
    out = [",".join(columns)] + [",".join(fmt(c) for c in r) for r in rows]
    path.write_text("\n".join(out) + "\n")


def write_manifest(out: Path) -> None:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out).as_posix()] = {
                "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
                "bytes": p.stat().st_size,
            }
    (out / "manifest.json").write_text(json.dumps({"files": files}, indent=2, sort_keys=True) + "\n")


def verify_manifest(out: str | Path) -> list[str]:
    """Files whose content no longer matches the manifest."""
    out = Path(out)
    files = json.loads((out / "manifest.json").read_text())["files"]
    return [name for name, e in files.items()
            if hashlib.sha256((out / name).read_bytes()).hexdigest() != e["sha256"]]


def _count_columns(k: int) -> list[str]:
    return [f"count_{c}" for c in range(k)]


def _curves_csv(path: Path, curves: dict) -> None:
    rows = []
    for phase, c in curves.items():
        for i in range(len(c["total"])):
            rows.append([phase, i, c["simple"][i], c["mmd"][i], c["total"][i]])
    write_csv(path, ["phase", "step", "simple", "mmd", "total"], rows)


# ---------------------------------------------------------------------------
# commands


@dataclass
class Ctx:
    cfg: RunConfig
    seed: int
    out: Path
    args: argparse.Namespace

    def task(self):
        return make_task(self.cfg.task_spec(), self.cfg.task_seed(self.seed))

    def train_generator(self, task) -> Generator:
        return train_generator(task.train, self.cfg.toggles(), self.cfg.generator(), self.seed, task.pretrain_pool)

    def load_or_train_generator(self, task) -> Generator:
        if getattr(self.args, "generator", None):
            return Generator.load(self.args.generator)
        return self.train_generator(task)

    def synthesize(self, gen: Generator, task) -> LabeledDataset:
        v = self.cfg.values["sampler"]
        return synthesize_dataset(gen, len(task.train), self.cfg.toggles(), task.train,
                                  derive_seed(self.seed, _SYNTH), self.cfg.sampler(), v["synth_batch"])


def cmd_gen_task(ctx: Ctx) -> None:
    task = ctx.task()
    sets = [task.train, task.test, task.ood_test, task.pretrain_pool]
    names = ["train", "test", "ood_test", "pretrain"]
    rows = []
    for name, ds in zip(names, sets):
        if ds is None:
            continue
        ds.to_csv(ctx.out / f"{name}.csv")
        rows.append([name, len(ds), *ds.class_counts()])
    write_csv(ctx.out / "metrics.csv", ["split", "n", *_count_columns(task.spec.num_classes)], rows)


def cmd_train_gen(ctx: Ctx) -> None:
    gen = ctx.train_generator(ctx.task())
    gen.save(ctx.out / "generator.ckpt")
    _curves_csv(ctx.out / "curves.csv", gen.curves)
    rows = []
    for phase, c in gen.curves.items():
        tail = slice(max(0, len(c["total"]) - 100), None)
        rows.append([phase, len(c["total"]), *(float(np.mean(c[k][tail])) for k in ("simple", "mmd", "total"))])
    write_csv(ctx.out / "metrics.csv", ["phase", "steps", "simple_last100", "mmd_last100", "total_last100"], rows)


def cmd_synth(ctx: Ctx) -> None:
    task = ctx.task()
    gen = ctx.load_or_train_generator(task)
    syn = ctx.synthesize(gen, task)
    syn.to_csv(ctx.out / "synthetic.csv")
    write_csv(ctx.out / "metrics.csv", ["split", "n", *_count_columns(syn.num_classes)],
              [["synthetic", len(syn), *syn.class_counts()]])


def cmd_eval_mmd(ctx: Ctx) -> None:
    task = ctx.task()
    gen = ctx.load_or_train_generator(task)
    syn = LabeledDataset.from_csv(ctx.args.synthetic, "synthetic") if ctx.args.synthetic else ctx.synthesize(gen, task)
    probe = train_classifier(task.train, ctx.cfg.classifier(), derive_seed(ctx.seed, _CLF_REAL))
    ex = ctx.cfg.values["experiment"]
    rep = synthesis_objective_report(task.test, syn, gen.encoder, probe, ex["lambda"])
    rbf = mmd_sq_rbf(gen.encoder(task.test.x), gen.encoder(syn.x), ex["rbf_bandwidth"])
    write_csv(ctx.out / "metrics.csv", [*ObjectiveReport.CSV_COLUMNS, "mmd_sq_rbf", "bandwidth"],
              [[*rep.row(), rbf, ex["rbf_bandwidth"]]])


def cmd_train_clf(ctx: Ctx) -> None:
    task = ctx.task()
    train = LabeledDataset.from_csv(ctx.args.train) if ctx.args.train else task.train
    net = train_classifier(train, ctx.cfg.classifier(), ctx.seed)
    save_checkpoint(ctx.out / "classifier.ckpt", {"classifier": round_to_f32(net.copy())},
                    meta={"seed": ctx.seed, "train_size": len(train)})
    rows = [["test", len(task.test), accuracy(net, task.test)]]
    if task.ood_test is not None:
        rows.append(["ood_test", len(task.ood_test), accuracy(net, task.ood_test)])
    write_csv(ctx.out / "metrics.csv", ["test_set", "n", "accuracy"], rows)


def cmd_replace_augment(ctx: Ctx) -> None:
    res = run_replace_augment(ctx.cfg.task_spec(), ctx.cfg.toggles(), ctx.cfg.seeds(ctx.seed),
                              ctx.cfg.bench(ctx.seed), ctx.task())
    arms = ["real", "synthetic", "combined", "mmd", "ood_real", "ood_synthetic"]
    write_csv(ctx.out / "seeds.csv", ["seed", *arms],
              [[o.seed, *(getattr(o, a) for a in arms)] for o in res.outcomes])
    summary = []
    for a in arms:
        vals = res.arm(a)
        if all(v is not None for v in vals):
            summary.append([a, res.mean(a), res.std(a)])
    write_csv(ctx.out / "summary.csv", ["arm", "mean", "std"], summary)
    write_csv(ctx.out / "objective.csv", ["seed", *ObjectiveReport.CSV_COLUMNS],
              [[o.seed, *o.objective.row()] for o in res.outcomes])


def cmd_scale_sweep(ctx: Ctx) -> None:
    ks = ctx.cfg.values["experiment"]["scale_k"]
    curve = run_scale_sweep(ctx.cfg.task_spec(), ctx.cfg.toggles(), ks, ctx.cfg.seeds(ctx.seed),
                            ctx.cfg.bench(ctx.seed), ctx.task())
    has_ood = curve.real_ood_accuracies is not None
    rows = []
    for p in curve.points:
        for i, s in enumerate(curve.seeds):
            rows.append([p.k, s, p.accuracies[i], p.ood_accuracies[i] if has_ood else None])
    write_csv(ctx.out / "seeds.csv", ["k", "seed", "synthetic", "ood_synthetic"], rows)
    summary = []
    for p in curve.points:
        ood = np.asarray(p.ood_accuracies) if has_ood else None
        summary.append([p.k, p.mean, p.std, None if ood is None else ood.mean(), None if ood is None else ood.std()])
    write_csv(ctx.out / "summary.csv", ["k", "mean", "std", "ood_mean", "ood_std"], summary)
    real = np.asarray(curve.real_accuracies)
    real_ood = np.asarray(curve.real_ood_accuracies) if has_ood else None
    write_csv(ctx.out / "real.csv", ["mean", "std", "ood_mean", "ood_std"],
              [[real.mean(), real.std(), None if real_ood is None else real_ood.mean(),
                None if real_ood is None else real_ood.std()]])
    spearman = curve.spearman() if len(ks) > 1 else None
    write_csv(ctx.out / "trend.csv", ["spearman", "acc_first_k", "acc_last_k"],
              [[spearman, curve.points[0].mean, curve.points[-1].mean]])
    xs = [p.k for p in curve.points]
    series = [("synthetic", xs, [p.mean for p in curve.points]),
              ("real data", xs, [float(real.mean())] * len(xs))]
    if has_ood:
        series.append(("synthetic (OOD)", xs, [float(np.mean(p.ood_accuracies)) for p in curve.points]))
    (ctx.out / "scale.svg").write_text(line_plot_svg(
        series, "synthetic set size (x real)", "test accuracy", "Accuracy vs synthetic scale"))


def cmd_ablate(ctx: Ctx) -> None:
    rows = run_ablation_grid(ctx.cfg.task_spec(), ctx.cfg.seeds(ctx.seed), ctx.cfg.bench(ctx.seed), ctx.task())
    out = []
    for i, (r, flags) in enumerate(zip(rows, ABLATION_ROWS), start=1):
        out.append([i, *flags, r.mean, r.std, float(np.mean(r.mmd))])
    write_csv(ctx.out / "ablation.csv",
              ["row", "latent_prior", "visual_guidance", "mmd_loss", "finetune", "mean", "std", "mmd_mean"], out)
    seeds = ctx.cfg.seeds(ctx.seed)
    per = [[i, s, r.accuracies[j], r.mmd[j]] for i, r in enumerate(rows, start=1) for j, s in enumerate(seeds)]
    write_csv(ctx.out / "ablation_seeds.csv", ["row", "seed", "accuracy", "mmd"], per)


def cmd_bound(ctx: Ctx) -> None:
    p = ctx.cfg.bound()
    value = gen_bound(p)
    print(repr(value))
    write_csv(ctx.out / "bound.csv", ["log_cardinality", "delta", "sample_size", "bound"],
              [[p.log_cardinality, p.delta, p.sample_size, value]])
    b = ctx.cfg.values["bound"]
    if b["mc_enabled"]:
        exp = ctx.cfg.experiment()
        r = bound_violation_mc(exp, b["mc_sample_size"], b["mc_t"], b["mc_trials"], ctx.seed)
        write_csv(ctx.out / "bound_mc.csv",
                  ["num_hypotheses", "sample_size", "t", "trials", "empirical_rate", "analytic_cap", "slack",
                   "per_hypothesis_sum"],
                  [[exp.cardinality, b["mc_sample_size"], b["mc_t"], r.trials, r.empirical_rate, r.analytic_cap,
                    r.slack, float(r.per_hypothesis_rates.sum())]])


def cmd_mia(ctx: Ctx) -> None:
    spec = ctx.cfg.mia_task_spec()
    m = ctx.cfg.values["mia"]
    per_seed, summary, series = [], [], []
    for arm in m["arms"]:
        rep = run_mia_experiment(spec, ctx.cfg.mia(ctx.seed, arm))
        for r in rep.results:
            n_in = int(r.membership.sum())
            tol = null_tpr_tolerance(n_in, len(r.membership) - n_in, m["target_fpr"])
            per_seed.append([arm, r.seed, r.roc.tpr_at_target, r.shuffled_roc.tpr_at_target, tol])
        pooled = rep.pooled_roc()
        write_csv(ctx.out / f"roc_{arm}.csv", ["fpr", "tpr"], [[a, b] for a, b in zip(pooled.fpr, pooled.tpr)])
        summary.append([arm, rep.mean_tpr, float(np.std(rep.tprs)), float(np.mean(rep.shuffled_tprs)),
                        m["target_fpr"]])
        series.append((arm, list(pooled.fpr), list(pooled.tpr)))
    write_csv(ctx.out / "mia.csv", ["arm", "seed", "tpr_at_fpr", "shuffled_tpr_at_fpr", "null_tolerance"], per_seed)
    write_csv(ctx.out / "summary.csv", ["arm", "mean_tpr_at_fpr", "std_tpr_at_fpr", "mean_shuffled_tpr", "target_fpr"],
              summary)
    series.append(("chance", [1e-3, 1.0], [1e-3, 1.0]))
    (ctx.out / "roc.svg").write_text(line_plot_svg(
        series, "false positive rate", "true positive rate", "LiRA ROC", log=True, floor=1e-3))


COMMANDS: dict[str, tuple[Callable[[Ctx], None], str]] = {
    "gen-task": (cmd_gen_task, "write the train/test/OOD/pretraining splits as CSV"),
    "train-gen": (cmd_train_gen, "train a generator and save its checkpoint and loss curves"),
    "synth": (cmd_synth, "synthesize a class-balanced dataset"),
    "eval-mmd": (cmd_eval_mmd, "MMD and objective report between real test data and a synthetic set"),
    "train-clf": (cmd_train_clf, "train the downstream classifier and report test accuracy"),
    "replace-augment": (cmd_replace_augment, "real-only, synthetic-only and combined arms over seeds"),
    "scale-sweep": (cmd_scale_sweep, "synthetic-only accuracy versus synthetic set size"),
    "ablate": (cmd_ablate, "the ten-row toggle ablation"),
    "bound": (cmd_bound, "generalization bound value and its Monte-Carlo check"),
    "mia": (cmd_mia, "LiRA membership inference against direct and synthetic arms"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems count as validation errors
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dmsynth", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"dmsynth {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", required=True, help="JSON config file (empty file = all defaults)")
        p.add_argument("--seed", type=int, help="base seed (default: run.seed from the config, else 0)")
        p.add_argument("--out", required=True, help="output directory")
        if name in ("synth", "eval-mmd"):
            p.add_argument("--generator", help="generator checkpoint to use instead of training one")
        if name == "eval-mmd":
            p.add_argument("--synthetic", help="synthetic dataset CSV to evaluate instead of sampling one")
        if name == "train-clf":
            p.add_argument("--train", help="training set CSV (default: the task's train split)")
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        worker_count()  # reject a malformed DMSYNTH_THREADS early
        cfg = parse_config(args.config)
        if args.seed is None:
            args.seed = cfg.values["run"]["seed"] or 0
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        values = copy.deepcopy(cfg.values)
        values["run"] = {"command": args.command, "seed": args.seed}
        cfg = RunConfig(values)
        for opt in ("generator", "synthetic", "train"):
            path = getattr(args, opt, None)
            if path and not Path(path).is_file():
                raise ConfigError(f"--{opt}: no such file: {path}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as e:  # DMSYNTH_THREADS
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.snapshot())
        COMMANDS[args.command][0](Ctx(cfg, args.seed, out, args))
        write_manifest(out)
    except TrainingDiverged as e:
        _curves_csv(out / "curves_diverged.csv", e.curves)
        print(f"error: {e} (curves written to {out / 'curves_diverged.csv'})", file=sys.stderr)
        return EXIT_FAILED
    except Exception as e:  # noqa: BLE001 - any failure past validation is a runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
