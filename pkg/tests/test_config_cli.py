import csv
import json
import subprocess
import sys

import pytest
import yaml

from progdarts import cli
from progdarts.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, aggregate, genotype_counts, main
from progdarts.config import ConfigError, ExperimentConfig, config_from_dict, load_config, prepare_data
from progdarts.genotype import Genotype
from progdarts.ops import OperationKind

K = OperationKind

TINY = {
    "space": "S2",
    "seeds": [0, 1, 2],
    "schedule": {"epochs": 4, "epochs_per_stage": 2, "stages": 2},
    "bilevel": {"batch_size": 16},
    "supernet": {"cells": 2, "channels": 4, "nodes": 2},
    "dataset": {"n": 96},
    "evaluate": {"cells": 3, "channels": 4, "epochs": 1, "batch_size": 16},
}


def write_cfg(tmp_path, **changes):
    d = json.loads(json.dumps(TINY))
    d.update(changes)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(d))
    return path


def all_skip(nodes=2):
    pairs = tuple((K.skip_connect, s) for _ in range(nodes) for s in (0, 1))
    concat = tuple(range(2, 2 + nodes))
    return Genotype(pairs, concat, pairs, concat)


# -- config ------------------------------------------------------------------------


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.space == "S2" and cfg.schedule.stages == 2


def test_shipped_configs_load():
    for name in ("s2_toy", "s4_toy", "full_desk", "cifar10"):
        load_config(f"configs/{name}.yaml")


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match=r"unknown key\(s\) bogus"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match=r"schedule\.epoch\b"):
        config_from_dict({"schedule": {"epoch": 3}})


@pytest.mark.parametrize("data, where", [
    ({"schedule": {"epochs": "x"}}, r"schedule\.epochs: expected an integer"),
    ({"seeds": [0, 1.5]}, r"seeds\[1\]"),
    ({"bilevel": {"alpha_lr": "fast"}}, r"bilevel\.alpha_lr: expected a number"),
    ({"bilevel": {"w_cosine": 1}}, r"bilevel\.w_cosine: expected true/false"),
    ({"supernet": []}, r"supernet: expected a mapping"),
])
def test_type_errors_name_the_field(data, where):
    with pytest.raises(ConfigError, match=where):
        config_from_dict(data)


def test_semantic_errors():
    with pytest.raises(ConfigError, match="3 stages exceed the 2 operations of space S2"):
        config_from_dict({"schedule": {"epochs": 6, "stages": 3}})
    with pytest.raises(ConfigError, match="exceeds epochs"):
        config_from_dict({"schedule": {"epochs": 3, "stages": 2}})
    with pytest.raises(ConfigError, match="space"):
        config_from_dict({"space": "S9"})
    with pytest.raises(ConfigError, match="dataset.path"):
        config_from_dict({"dataset": {"kind": "cifar10"}})
    with pytest.raises(ConfigError, match="bilevel"):
        config_from_dict({"bilevel": {"alpha_beta1": 2.0}})
    # darts runs a single stage, so the stage count is not checked against the space
    config_from_dict({"mode": "darts", "schedule": {"epochs": 6, "stages": 3}})


def test_prepared_data_is_disjoint_and_deterministic():
    cfg = config_from_dict(TINY)
    a, b = prepare_data(cfg), prepare_data(cfg)
    assert len(a.train) == 72 and len(a.test) == 24
    assert len(a.search_train) == len(a.search_val) == 36
    assert a.test.images.tobytes() == b.test.images.tobytes()
    train_rows = {r.tobytes() for r in a.train.images.reshape(72, -1)}
    assert not train_rows & {r.tobytes() for r in a.test.images.reshape(24, -1)}


def test_output_dir_resolution(monkeypatch):
    monkeypatch.delenv("PROGDARTS_OUT", raising=False)
    cfg = ExperimentConfig()
    assert str(cfg.resolve_output_dir()) == "runs"
    monkeypatch.setenv("PROGDARTS_OUT", "/tmp/envout")
    assert str(cfg.resolve_output_dir()) == "/tmp/envout"
    assert str(config_from_dict({"output_dir": "cfgout"}).resolve_output_dir()) == "cfgout"
    assert str(cfg.resolve_output_dir("flag")) == "flag"


# -- search command ----------------------------------------------------------------


def _read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_search_outputs_and_byte_identity(tmp_path):
    cfg = write_cfg(tmp_path)
    for d in ("a", "b"):
        assert main(["search", "--config", str(cfg), "--out", str(tmp_path / d)]) == EXIT_OK
    for name in ("genotype.json", "history.jsonl", "metrics.jsonl", "alpha_trace.csv", "config.yaml"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    metrics = _read_jsonl(tmp_path / "a" / "metrics.jsonl")
    assert len(metrics) == 4 + 2
    assert all(r["version"] == 1 and r["run_id"] == "opp-S2-seed0" and r["seed"] == 0 for r in metrics)
    epochs = [r["epoch"] for r in metrics if r["type"] == "epoch"]
    assert epochs == sorted(epochs) == [0, 1, 2, 3]
    history = _read_jsonl(tmp_path / "a" / "history.jsonl")
    assert [r["selected"] for r in history] == [["sep_conv_3x3"], ["skip_connect"]]

    with open(tmp_path / "a" / "alpha_trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["version"] == "1" for r in rows)
    assert {r["kind"] for r in rows} == {"sep_conv_3x3", "skip_connect"}


def test_darts_single_stage_event(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["search", "--config", str(cfg), "--mode", "darts", "--out", str(tmp_path)]) == EXIT_OK
    history = _read_jsonl(tmp_path / "history.jsonl")
    assert len(history) == 1 and history[0]["selected"] == ["skip_connect", "sep_conv_3x3"]
    assert history[0]["run_id"] == "darts-S2-seed0"


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PROGDARTS_OUT", str(tmp_path / "env"))
    assert main(["search", "--config", str(write_cfg(tmp_path))]) == EXIT_OK
    assert (tmp_path / "env" / "genotype.json").exists()


def test_exit_code_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schedule:\n  epochs: 12\n  stages: 5\n")
    assert main(["search", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "schedule.stages" in capsys.readouterr().err
    bad.write_text("bogus: 1\n")
    assert main(["search", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["search", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    bad.write_text("schedule: [1, 2\n")
    assert main(["search", "--config", str(bad)]) == EXIT_CONFIG


def test_exit_code_numerical_keeps_partial_log(tmp_path, monkeypatch, capsys):
    real = cli.init_state

    def poisoned(config, mode):
        st = real(config, mode)
        st.net.head_b.data[:] = float("nan")
        return st

    monkeypatch.setattr(cli, "init_state", poisoned)
    rc = main(["search", "--config", str(write_cfg(tmp_path)), "--out", str(tmp_path / "o")])
    assert rc == EXIT_NUMERICAL
    assert "non-finite" in capsys.readouterr().err
    # the stage-0 insertion happened before the abort and is on disk
    history = _read_jsonl(tmp_path / "o" / "history.jsonl")
    assert [r["selected"] for r in history] == [["sep_conv_3x3"]]


def test_module_entry_point(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("space: S7\n")
    r = subprocess.run([sys.executable, "-m", "progdarts", "search", "--config", str(bad)],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_CONFIG and "space" in r.stderr


# -- evaluate ----------------------------------------------------------------------


def test_all_skip_parameter_count(tmp_path):
    g = all_skip()
    gpath = tmp_path / "g.json"
    gpath.write_text(g.dumps())
    assert main(["evaluate", "--config", str(write_cfg(tmp_path)), "--genotype", str(gpath),
                 "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "evaluation.json").read_text())
    # 3 cells of 2 nodes, C=4, stem 12 channels, reductions at cells 1 and 2.
    # Preprocessing costs c*c_pp + c*c_p whether or not s0 is reduced;
    # a stride-2 skip is a factorized reduce with c*c weights.
    stem = 12 * 3 * 9
    cell0 = 4 * 12 + 4 * 12
    cell1 = 8 * 12 + 8 * 8 + 4 * 8 * 8
    cell2 = 16 * 8 + 16 * 16 + 4 * 16 * 16
    head = 4 * 32 + 4
    assert report["num_params"] == stem + cell0 + cell1 + cell2 + head == 2376
    assert 0.0 <= report["test_acc"] <= 1.0


def test_evaluate_rejects_genotype_outside_space(tmp_path, capsys):
    g = Genotype(((K.noise, 0), (K.skip_connect, 1)) * 2, (2, 3), all_skip().reduce, (2, 3))
    gpath = tmp_path / "g.json"
    gpath.write_text(g.dumps())
    rc = main(["evaluate", "--config", str(write_cfg(tmp_path)), "--genotype", str(gpath)])
    assert rc == EXIT_CONFIG
    assert "noise" in capsys.readouterr().err


def test_evaluate_bad_genotype_file(tmp_path):
    gpath = tmp_path / "g.json"
    gpath.write_text('{"version": 1}')
    assert main(["evaluate", "--config", str(write_cfg(tmp_path)), "--genotype", str(gpath)]) == EXIT_CONFIG


# -- compare -----------------------------------------------------------------------


def test_genotype_counts():
    assert genotype_counts(all_skip(4)) == {"skip_connect": 8, "noise": 0, "parametric": 0}
    g = Genotype(((K.sep_conv_3x3, 0), (K.noise, 1)), (2,), ((K.skip_connect, 0), (K.noise, 1)), (2,))
    assert genotype_counts(g) == {"skip_connect": 0, "noise": 1, "parametric": 1}
    assert genotype_counts(g, "reduce") == {"skip_connect": 1, "noise": 1, "parametric": 0}


def test_aggregate_medians():
    rows = [
        {"mode": "opp", "skip_connect": 2, "noise": 0, "parametric": 6, "test_acc": 0.8},
        {"mode": "opp", "skip_connect": 4, "noise": 1, "parametric": 3, "test_acc": 0.9},
        {"mode": "opp", "skip_connect": 3, "noise": 0, "parametric": 5, "test_acc": 0.7},
        {"mode": "darts", "skip_connect": 6, "noise": 2, "parametric": 0, "test_acc": 0.5},
        {"mode": "darts", "skip_connect": 8, "noise": 4, "parametric": 0, "test_acc": 0.6},
    ]
    agg = aggregate(rows)
    assert agg["opp"] == {"runs": 3, "median_skip_connect": 3, "median_noise": 0,
                          "median_parametric": 5, "median_test_acc": 0.8}
    assert agg["darts"] == {"runs": 2, "median_skip_connect": 7, "median_noise": 3,
                            "median_parametric": 0, "median_test_acc": 0.55}


def test_compare_needs_three_seeds(tmp_path, capsys):
    cfg = write_cfg(tmp_path, seeds=[0, 1])
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "at least 3 seeds" in capsys.readouterr().err


def test_compare_outputs(tmp_path):
    assert main(["compare", "--config", str(write_cfg(tmp_path)), "--out", str(tmp_path / "c")]) == EXIT_OK
    out = tmp_path / "c"
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert sorted((r["mode"], r["seed"]) for r in rows) == sorted(
        (m, str(s)) for s in (0, 1, 2) for m in ("opp", "darts"))
    assert all(r["version"] == "1" for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["aggregate"]["opp"]["runs"] == 3
    with open(out / "alpha_trace.csv") as fh:
        trace = list(csv.DictReader(fh))
    assert {r["run_id"] for r in trace} == {f"{m}-S2-seed{s}" for s in (0, 1, 2) for m in ("opp", "darts")}
    for s in (0, 1, 2):
        assert (out / "opp" / f"seed{s}" / "evaluation.json").exists()
