import subprocess
import sys

import pytest

from klper.cli import cli_parse, main
from klper.errors import DivergenceError
from klper.harness import read_metrics

TINY = ["--steps", "200", "--warmup", "100", "--batch", "16", "--hidden", "8,8",
        "--eval-interval", "100", "--eval-episodes", "1"]


def test_train_flags_pick_up_ddpg_defaults():
    cfg = cli_parse(["train", "--algo", "ddpg", "--replay", "klper", "--env", "pendulum", "--seed", "0"])
    assert (cfg.algo, cfg.replay, cfg.env, cfg.seed) == ("ddpg", "klper", "pendulum", 0)
    assert (cfg.batch_size, cfg.n_candidates, cfg.kl_sigma, cfg.warmup) == (64, 4, 0.1, 10_000)
    assert (cfg.actor_lr, cfg.critic_lr, cfg.hidden) == (1e-4, 3e-4, (400, 300))


def test_td3_flags():
    cfg = cli_parse(["train", "--algo", "td3", "--candidates", "2", "--kl-sigma", "0.5", "--no-is-weights"])
    assert (cfg.batch_size, cfg.n_candidates, cfg.kl_sigma, cfg.per_is_weights) == (256, 2, 0.5, False)


@pytest.mark.parametrize("argv", [
    ["train", "--batch", "1"],
    ["train", "--candidates", "0"],
    ["train", "--algo", "sac"],
    ["train", "--hidden", "4,x"],
    ["compare", "--seeds", "a..b", "--steps", "10", "--warmup", "10"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_config_file_then_flag_override(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# small run\nalgo=td3\nbatch_size=32\nseed=7\n")
    cfg = cli_parse(["train", "--config", str(cfg_file), "--seed", "9"])
    assert (cfg.algo, cfg.batch_size, cfg.seed) == ("td3", 32, 9)
    cfg_file.write_text("bogus=1\n")
    with pytest.raises(SystemExit):
        cli_parse(["train", "--config", str(cfg_file)])


def test_train_then_eval(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", *TINY, "--out", str(out)]) == 0
    assert len(read_metrics(out / "metrics.csv")) == 3
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "checkpoint"), "--episodes", "2"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("mean_return=") and line.endswith("episodes=2")
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--checkpoint", str(out / "checkpoint"), "--env", "reacher2d"])
    assert exc.value.code == 2


def test_compare_writes_fifteen_files(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--seeds", "0..4", *TINY, "--steps", "120", "--out", str(out)]) == 0
    files = sorted(out.glob("*/seed*/metrics.csv"))
    assert len(files) == 15
    assert {f.parent.parent.name for f in files} == {"vanilla", "per", "klper"}


def test_divergence_exit_code_3(tmp_path, monkeypatch, capsys):
    def boom(cfg):
        raise DivergenceError("critic loss became non-finite (nan)")

    monkeypatch.setattr("klper.cli.train", boom)
    assert main(["train", *TINY, "--out", str(tmp_path / "x")]) == 3
    assert "diverged" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "klper", "train", "--batch", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "batch_size" in proc.stderr
