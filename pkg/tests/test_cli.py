import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmsynth.cli import (
    ConfigError, default_values, fmt, main, parse_config, parse_config_text, verify_manifest,
)
from dmsynth.privacy import roc_curve
from dmsynth.svg import LEFT, TOP, line_plot_svg, polyline_points

TINY = {
    "task": {"n_train": 120, "n_test": 120, "n_pretrain": 120},
    "nets": {"denoiser_hidden": [16, 16], "encoder_hidden": [8], "classifier_hidden": [8]},
    "training": {"encoder_epochs": 1, "pretrain_steps": 40, "finetune_steps": 20, "batch_size": 32},
    "classifier": {"epochs": 3},
    "sampler": {"num_steps": 5, "synth_batch": 64},
    "experiment": {"num_seeds": 2, "scale_k": [1.0, 2.0]},
    "bound": {"mc_trials": 50, "mc_population_size": 2000},
    "mia": {"num_seeds": 1, "num_shadows": 4, "pool_size": 40, "epoch_multiplier": 1, "dim": 2},
}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj, indent=2))
    return p


def read_csv(path):
    with open(path) as f:
        return list(csv.reader(f))


# ---------------------------------------------------------------- parsing

@pytest.mark.parametrize("text", ["", "  \n\t", "{}"])
def test_empty_config_gives_all_defaults(text):
    cfg = parse_config_text(text)
    assert cfg.values == default_values()
    snap = json.loads(cfg.snapshot())
    assert snap["loss"]["gamma"] == 0.05 and snap["sampler"]["guidance_scale"] == 2.0
    assert snap["sampler"]["strength"] == 0.75 and snap["sampler"]["num_steps"] == 30
    assert snap["task"]["ood_shift"] == {"mean_shift": None, "scale": 1.0}


def test_negative_gamma_names_field_and_line():
    text = '{\n  "loss": {\n    "gamma": -1\n  }\n}\n'
    with pytest.raises(ConfigError) as info:
        parse_config_text(text, "c.json")
    assert str(info.value).startswith("c.json:3: loss.gamma:")


@pytest.mark.parametrize("text,where", [
    ('{"task": {\n"colour": 1}}', "2: task.colour: unknown key"),
    ('{"schedule":\n {"T": "200"}}', "2: schedule.T: expected an integer"),
    ('{"toggles": {"finetune": 1}}', "toggles.finetune: expected true or false"),
    ('{"loss": {"weighting": "cubic"}}', "loss.weighting: 'cubic' is not one of"),
    ('{"nets": {"time_dim": 7}}', "nets.time_dim: must be an even integer"),
    ('{"toggles": {"finetune": false}}', "toggles.mmd_loss: requires toggles.finetune"),
    ('{"schedule": {"beta_start": 0.5, "beta_end": 0.1}}', "schedule.beta_end: must be >= schedule.beta_start"),
    ('{"task": {"ood_shift": {"mean_shift": [1, 2, 3]}}}', "task.ood_shift.mean_shift: length"),
    ('{"mia": {"arms": ["direct", "direct"]}}', "mia.arms: entries must be distinct"),
    ('{"sampler": {"num_steps": 500}}', "sampler.num_steps: must be <= schedule.T"),
    ('{"loss": 3}', "loss: expected an object"),
    ('{"loss": {"gamma": NaN}}', "loss.gamma: expected a number"),
])
def test_invalid_configs_rejected(text, where):
    with pytest.raises(ConfigError, match=None) as info:
        parse_config_text(text, "c.json")
    assert where in str(info.value)


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError, match=r"c.json:3: invalid JSON"):
        parse_config_text('{\n "a": 1,\n }', "c.json")


def test_all_errors_reported_together():
    with pytest.raises(ConfigError) as info:
        parse_config_text('{"loss": {"gamma": -1}, "extra": 2}')
    assert len(str(info.value).splitlines()) == 2


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "none.json")


overrides = st.fixed_dictionaries({}, optional={
    "loss": st.fixed_dictionaries({"gamma": st.floats(0, 10), "weighting": st.sampled_from(["simple", "snr"])}),
    "schedule": st.fixed_dictionaries({"T": st.integers(30, 1000)}),
    "sampler": st.fixed_dictionaries({"guidance_scale": st.integers(0, 5), "strength": st.floats(0.01, 1.0)}),
    "experiment": st.fixed_dictionaries({"scale_k": st.lists(st.integers(1, 20), min_size=1, max_size=5),
                                         "num_seeds": st.integers(1, 9)}),
    "task": st.fixed_dictionaries({"seed": st.none() | st.integers(0, 99),
                                   "ood_shift": st.none() | st.just({"mean_shift": [0.5, -1]})}),
    "mia": st.fixed_dictionaries({"arms": st.sampled_from([["direct"], ["synthetic", "direct"]])}),
    "run": st.fixed_dictionaries({"seed": st.none() | st.integers(0, 5)}),
})


@settings(max_examples=100, deadline=None)
@given(raw=overrides)
def test_snapshot_round_trip(raw):
    cfg = parse_config_text(json.dumps(raw))
    again = parse_config_text(cfg.snapshot())
    assert again == cfg
    assert again.snapshot() == cfg.snapshot()


def test_config_builds_library_objects():
    cfg = parse_config_text(json.dumps(TINY))
    assert cfg.generator().hidden == (16, 16)
    assert cfg.classifier().epochs == 3
    assert cfg.seeds(4) == [4, 5]
    assert cfg.mia(0, "synthetic").arm == "synthetic"
    assert cfg.mia_task_spec().ood_shift is None


# ---------------------------------------------------------------- formatting

def test_csv_number_format():
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(123456789012.0) == "1.23456789e+11"
    assert fmt(2.0) == "2" and fmt(7) == "7" and fmt(True) == "1" and fmt(None) == ""
    assert fmt(np.float64(-1e-10)) == "-1e-10"
    assert float(fmt(math.pi)) == pytest.approx(math.pi, rel=5e-9)


def test_scale_plot_two_points_per_series():
    svg = line_plot_svg([("a", [1, 2], [0.5, 0.7]), ("b", [1, 2], [0.6, 0.6])], "k", "acc", "t")
    lines = polyline_points(svg)
    assert [len(p) for p in lines] == [2, 2]
    assert "<text" in svg and 'data-label="b"' in svg


def test_perfect_roc_passes_through_corner():
    s = np.r_[np.ones(20), np.zeros(20)]
    fpr, tpr = roc_curve(s, np.arange(40) < 20)
    svg = line_plot_svg([("perfect", list(fpr), list(tpr))], "fpr", "tpr", "roc", log=True, floor=1e-3)
    assert (float(LEFT), float(TOP)) in polyline_points(svg)[0]  # (1e-3, 1.0)


# ---------------------------------------------------------------- commands

def test_bound_unit_example(tmp_path, capsys):
    cfg = write(tmp_path, {"bound": {"log_cardinality": 1, "delta": math.exp(-1), "sample_size": 2,
                                     "mc_enabled": False}})
    assert main(["bound", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert capsys.readouterr().out.strip() == "1.0"
    rows = read_csv(tmp_path / "o" / "bound.csv")
    assert len(rows) == 2 and float(rows[1][3]) == 1.0
    assert verify_manifest(tmp_path / "o") == []


def test_exit_codes(tmp_path, monkeypatch):
    bad = write(tmp_path, {"loss": {"gamma": -1}})
    good = write(tmp_path, TINY, "good.json")
    out = str(tmp_path / "o")
    assert main(["bound", "--config", str(bad), "--out", out]) == 1
    assert main(["bound", "--config", str(good), "--out", out, "--seed", "-1"]) == 1
    assert main(["bogus", "--config", str(good), "--out", out]) == 1
    assert main(["bound", "--config", str(good)]) == 1
    garbage = write(tmp_path, "not,a,dataset\n", "g.csv")
    assert main(["train-clf", "--config", str(good), "--out", out, "--train", str(garbage)]) == 2
    monkeypatch.setenv("DMSYNTH_THREADS", "many")
    assert main(["bound", "--config", str(good), "--out", out]) == 1


def test_snapshot_alone_reruns(tmp_path):
    cfg = write(tmp_path, TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-task", "--config", str(cfg), "--seed", "3", "--out", str(a)]) == 0
    snap = json.loads((a / "config.json").read_text())
    assert snap["run"] == {"command": "gen-task", "seed": 3}
    assert main(["gen-task", "--config", str(a / "config.json"), "--out", str(b)]) == 0
    assert (a / "train.csv").read_bytes() == (b / "train.csv").read_bytes()
    assert (a / "config.json").read_bytes() == (b / "config.json").read_bytes()


def test_manifest_detects_tampering(tmp_path):
    cfg = write(tmp_path, TINY)
    out = tmp_path / "o"
    assert main(["gen-task", "--config", str(cfg), "--out", str(out)]) == 0
    files = json.loads((out / "manifest.json").read_text())["files"]
    assert sorted(files) == ["config.json", "metrics.csv", "ood_test.csv", "pretrain.csv", "test.csv", "train.csv"]
    (out / "metrics.csv").write_text("x\n")
    assert verify_manifest(out) == ["metrics.csv"]


def test_generator_pipeline_commands(tmp_path):
    cfg = str(write(tmp_path, TINY))
    d = {k: tmp_path / k for k in ("gen", "syn", "mmd", "clf")}
    assert main(["train-gen", "--config", cfg, "--out", str(d["gen"])]) == 0
    ckpt = d["gen"] / "generator.ckpt"
    assert read_csv(d["gen"] / "curves.csv")[0] == ["phase", "step", "simple", "mmd", "total"]
    assert len(read_csv(d["gen"] / "curves.csv")) == 1 + 40 + 20
    assert main(["synth", "--config", cfg, "--out", str(d["syn"]), "--generator", str(ckpt)]) == 0
    syn = d["syn"] / "synthetic.csv"
    assert syn.read_text().splitlines()[0] == "2,3"
    assert main(["eval-mmd", "--config", cfg, "--out", str(d["mmd"]), "--generator", str(ckpt),
                 "--synthetic", str(syn)]) == 0
    head, row = read_csv(d["mmd"] / "metrics.csv")
    assert head[0] == "mmd_sq" and "mmd_sq_rbf" in head and float(row[0]) >= 0
    assert main(["train-clf", "--config", cfg, "--out", str(d["clf"]), "--train", str(syn)]) == 0
    assert [r[0] for r in read_csv(d["clf"] / "metrics.csv")] == ["test_set", "test", "ood_test"]
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "x"), "--generator", str(tmp_path / "no")]) == 1


def test_metrics_byte_identical_on_rerun(tmp_path):
    cfg = str(write(tmp_path, TINY))
    for cmd in ("train-gen", "synth", "eval-mmd", "train-clf", "replace-augment", "bound"):
        a, b = tmp_path / f"{cmd}-a", tmp_path / f"{cmd}-b"
        assert main([cmd, "--config", cfg, "--seed", "2", "--out", str(a)]) == 0
        assert main([cmd, "--config", cfg, "--seed", "2", "--out", str(b)]) == 0
        for f in sorted(a.glob("*")):
            assert f.read_bytes() == (b / f.name).read_bytes(), f"{cmd}: {f.name}"


def test_experiment_commands_emit_tables(tmp_path):
    cfg = str(write(tmp_path, TINY))
    assert main(["replace-augment", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    summary = read_csv(tmp_path / "r" / "summary.csv")
    assert [r[0] for r in summary[1:]] == ["real", "synthetic", "combined", "mmd", "ood_real", "ood_synthetic"]
    assert len(read_csv(tmp_path / "r" / "seeds.csv")) == 3
    assert main(["scale-sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert [r[0] for r in read_csv(tmp_path / "s" / "summary.csv")[1:]] == ["1", "2"]
    assert [len(p) for p in polyline_points((tmp_path / "s" / "scale.svg").read_text())] == [2, 2, 2]
    assert main(["ablate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    rows = read_csv(tmp_path / "a" / "ablation.csv")
    assert len(rows) == 11
    assert rows[0][:5] == ["row", "latent_prior", "visual_guidance", "mmd_loss", "finetune"]
    assert rows[1][1:5] == ["0", "0", "0", "0"] and rows[10][1:5] == ["1", "1", "1", "1"]


def test_mia_command(tmp_path):
    cfg = str(write(tmp_path, TINY))
    out = tmp_path / "m"
    assert main(["mia", "--config", cfg, "--out", str(out)]) == 0
    summary = read_csv(out / "summary.csv")
    assert [r[0] for r in summary[1:]] == ["direct", "synthetic"]
    roc = read_csv(out / "roc_direct.csv")
    assert roc[0] == ["fpr", "tpr"] and roc[-1] == ["1", "1"]
    assert "<polyline" in (out / "roc.svg").read_text()
