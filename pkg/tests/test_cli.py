import xml.etree.ElementTree as ET

import numpy as np
import pytest

from lfoeq.cli import ConfigError, main, parse_lines, resolve
from lfoeq.imitation import LearningCurve
from lfoeq.plots import curve_band, emit_plots

TINY_EXPERT = ["env=cartpole", "n_traj=3", "expert.batch_size=256", "expert.hidden=16,16",
               "expert.max_env_steps=1024", "expert.eval_every=2", "expert.eval_episodes=2"]
TINY_IMIT = ["env=cartpole", "seeds=0,1", "imitation.batch_size=256", "imitation.hidden=16,16",
             "imitation.total_env_steps=1024", "imitation.eval_every=2", "imitation.eval_episodes=2",
             "imitation.disc_minibatch=128"]


def test_parse_lines_comments_and_errors():
    raw = parse_lines(["# header", "imitation.gamma = 0.99  # trailing", "", "env=cartpole"])
    assert raw == {"imitation.gamma": "0.99", "env": "cartpole"}
    with pytest.raises(ConfigError, match="line|:2:"):
        parse_lines(["env=cartpole", "nonsense"], "cfg")


def test_resolve_types_and_aliases():
    cfg = resolve("imitate", {"imitation.lambda": "0.9", "imitation.hidden": "64,64",
                              "imitation.input_norm": "false", "env": "cartpole"})
    assert cfg.imitation.lam == 0.9 and cfg.imitation.hidden == (64, 64)
    assert cfg.imitation.input_norm is False and cfg.imitation.env == "cartpole"
    assert "imitation.lam=0.9" in cfg.lines()


def test_unknown_keys_each_reported():
    with pytest.raises(ConfigError) as info:
        resolve("imitate", {"bogus": "1", "imitation.nope": "2", "expert.gamma": "x"})
    msgs = str(info.value).splitlines()
    assert len(msgs) == 3


def test_cli_rejects_bad_config(capsys):
    assert main(["imitate", "imitation.max_kl=-1"]) != 0
    assert "max_kl" in capsys.readouterr().err
    assert main(["report", "seeds=0"]) != 0


def test_tabular_verify(capsys):
    assert main(["tabular-verify"]) == 0
    out = capsys.readouterr().out
    assert "max_residual=" in out and "passed" in out


def test_config_file_and_override(tmp_path):
    (tmp_path / "c.cfg").write_text("# tiny\nseed=3\n")
    assert main(["--output", str(tmp_path), "tabular-verify", "--config", str(tmp_path / "c.cfg")]) == 0


def test_full_pipeline(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LFOEQ_OUTPUT", str(tmp_path))
    assert main(["expert", *TINY_EXPERT]) == 0
    exp = tmp_path / "cartpole" / "expert"
    for name in ("policy.bin", "dataset.lfoeq", "curve.csv", "summary.txt", "config.txt"):
        assert (exp / name).exists()
    assert len(list((exp / "dataset_csv").glob("*.csv"))) == 3

    assert main(["imitate", *TINY_IMIT]) == 0
    env_dir = tmp_path / "cartpole"
    for mode in ("gail", "gaifo"):
        assert sorted(p.name for p in (env_dir / mode).glob("*.csv")) == ["aggregate.csv", "seed0.csv", "seed1.csv"]
    assert "imitation.total_env_steps=1024" in (env_dir / "imitate" / "config.txt").read_text()
    ET.parse(env_dir / "curves.svg")

    assert main(["report", "env=cartpole"]) == 0
    text = (env_dir / "report.txt").read_text()
    rows = [line.split()[0] for line in text.splitlines()[1:4]]
    assert rows == ["expert", "gail", "gaifo"]
    assert "±" in text and "equivalent" in text


def test_band_single_curve_has_zero_width(tmp_path):
    curve = LearningCurve([(100, 1.0, 0.0, 0.0, 0.0), (200, 2.0, 0.0, 0.0, 0.0)], {})
    steps, mean, std = curve_band([curve])
    np.testing.assert_array_equal(std, 0.0)
    path = emit_plots({"one": [curve]}, tmp_path / "one.svg", expert_return=2.5)
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")
    with pytest.raises(ValueError):
        emit_plots({}, tmp_path / "none.svg")


def test_resolved_config_round_trips():
    cfg = resolve("imitate", {"env": "pendulum", "model.m": "1.5", "imitation.max_kl": "0.02"})
    again = resolve("imitate", parse_lines(cfg.lines().splitlines()))
    assert again.imitation == cfg.imitation and again.general == cfg.general
    assert cfg.imitation.model_params == (("m", 1.5),)
    with pytest.raises(ConfigError, match="model"):
        resolve("imitate", {"model.nope": "1"})
