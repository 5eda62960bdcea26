"""Command-line interface tests: subcommands, config handling, exit codes."""

import json
import os
import subprocess
import sys

import pytest

from so3flow.cli import main


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = {
        "gen": {
            "n_train": 8,
            "n_test": 4,
            "categories": ["asymmetric_box", "cone"],
            "seed": 3,
            "points_per_instance": 128,
        },
        "train": {"epochs": 1, "batch_size": 4, "seed": 3},
        "integrator": {"n_steps": 2},
    }
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    return {"root": root, "cfg": str(cfg_path)}


def test_gen_data(cli_env, capsys):
    out = str(cli_env["root"] / "data")
    assert main(["gen-data", "--out", out, "--config", cli_env["cfg"]]) == 0
    assert os.path.exists(os.path.join(out, "manifest.json"))
    assert "8 train / 4 test" in capsys.readouterr().out


def test_gen_data_requires_out(cli_env, capsys):
    assert main(["gen-data", "--config", cli_env["cfg"]]) == 2
    assert "requires --out" in capsys.readouterr().err


def test_train_then_eval(cli_env, capsys):
    data = str(cli_env["root"] / "data")
    ckpt_dir = str(cli_env["root"] / "run")
    assert (
        main(["train", "--data", data, "--out", ckpt_dir, "--config", cli_env["cfg"]])
        == 0
    )
    ckpt = os.path.join(ckpt_dir, "checkpoint.json")
    assert os.path.exists(ckpt)
    assert os.path.exists(os.path.join(ckpt_dir, "loss_curve.csv"))
    capsys.readouterr()
    eval_dir = str(cli_env["root"] / "eval")
    code = main(
        [
            "eval",
            "--checkpoint",
            ckpt,
            "--data",
            data,
            "--out",
            eval_dir,
            "--config",
            cli_env["cfg"],
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "median_deg" in out
    assert os.path.exists(os.path.join(eval_dir, "eval_report.csv"))
    assert os.path.exists(os.path.join(eval_dir, "eval_summary.json"))


def test_eval_missing_checkpoint_is_io_error(cli_env, capsys):
    data = str(cli_env["root"] / "data")
    code = main(
        [
            "eval",
            "--checkpoint",
            str(cli_env["root"] / "nope.json"),
            "--data",
            data,
            "--out",
            str(cli_env["root"] / "e2"),
        ]
    )
    assert code == 3
    assert "error:" in capsys.readouterr().err


def test_unknown_config_key_rejected(cli_env, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"gen": {"n_trian": 8}}))
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--config", str(bad)]) == 2
    assert "n_trian" in capsys.readouterr().err


def test_malformed_config_rejected(cli_env, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--config", str(bad)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_bad_ablation_kind_exits_2(cli_env):
    with pytest.raises(SystemExit) as e:
        main(["ablate", "--kind", "widths", "--data", "x", "--out", "y"])
    assert e.value.code == 2


def test_ablate_subcommand(cli_env, capsys):
    data = str(cli_env["root"] / "data")
    out = str(cli_env["root"] / "ablate")
    code = main(
        [
            "ablate",
            "--kind",
            "steps",
            "--data",
            data,
            "--out",
            out,
            "--config",
            cli_env["cfg"],
        ]
    )
    assert code == 0
    assert os.path.exists(os.path.join(out, "ablation_steps.csv"))
    assert "steps= 1" in capsys.readouterr().out


def test_seed_flag_overrides_config(cli_env, tmp_path):
    out = str(tmp_path / "seeded")
    assert main(["gen-data", "--out", out, "--config", cli_env["cfg"], "--seed", "5"]) == 0
    with open(os.path.join(out, "manifest.json")) as f:
        manifest = json.load(f)
    assert manifest["config"]["seed"] == 5


def test_selfcheck_subcommand(capsys):
    assert main(["selfcheck"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert sum(1 for l in lines if l.startswith("PASS")) == 4


def test_module_entry_subprocess(cli_env, tmp_path):
    out = str(tmp_path / "sub")
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "so3flow.cli",
            "gen-data",
            "--out",
            out,
            "--config",
            cli_env["cfg"],
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert os.path.exists(os.path.join(out, "manifest.json"))
