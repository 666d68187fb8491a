import pytest
import yaml

from gfars.benchmark import default_model_config
from gfars.config import ConfigFileError, RunConfig, load_config, parse_override, save_config


def test_defaults_round_trip(tmp_path):
    cfg = load_config()
    save_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml", env={}) == cfg
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_overrides_and_yaml_typing(tmp_path):
    (tmp_path / "c.yaml").write_text("train:\n  epochs: 3\nmodel:\n  score:\n    variant: mlp\n")
    cfg = load_config(tmp_path / "c.yaml", ["train.learning_rate=5e-4", "sampler.kind=em", "output=runs/x"], env={})
    assert cfg.train.epochs == 3 and cfg.train.learning_rate == 5e-4
    assert cfg.model.score.variant == "mlp" and cfg.sampler.kind == "em" and cfg.output == "runs/x"
    assert parse_override("a.b=[1, 2]") == ("a.b", [1, 2])


def test_seed_env_replaces_every_seed():
    cfg = load_config(None, ["train.seed=4"], env={"GFARS_SEED": "17"})
    assert cfg.data.seed == cfg.sampler.seed == cfg.train.seed == 17
    with pytest.raises(ConfigFileError):
        load_config(None, env={"GFARS_SEED": "abc"})


@pytest.mark.parametrize("text", [
    "bogus: 1\n",
    "train:\n  epochz: 3\n",
    "train: 3\n",
    "train:\n  batch_size: 0\n",
    "sde:\n  sigma: 1.0\n",
    "- a\n- b\n",
    "train: [unclosed\n",
])
def test_invalid_files(tmp_path, text):
    (tmp_path / "c.yaml").write_text(text)
    with pytest.raises(ConfigFileError):
        load_config(tmp_path / "c.yaml", env={})


def test_bad_override_and_missing_file(tmp_path):
    with pytest.raises(ConfigFileError):
        load_config(None, ["train.epochs"], env={})
    with pytest.raises(ConfigFileError):
        load_config(None, ["output.x=1"], env={})
    with pytest.raises(ConfigFileError):
        load_config(tmp_path / "nope.yaml", env={})


def test_resolved_yaml_is_plain(tmp_path):
    save_config(load_config(env={}), tmp_path / "c.yaml")
    data = yaml.safe_load((tmp_path / "c.yaml").read_text())
    assert set(data) == {"data", "model", "sde", "sampler", "train", "output"}
    assert data["data"]["mix2_prob"] == 0.7 and data["train"]["batch_size"] == 16


def test_documented_run_config_matches_benchmark_model(tmp_path):
    (tmp_path / "run.yaml").write_text(
        "model:\n  encoder: {hidden: [32, 64], feat_dim: 64}\n  score: {variant: gnn, hidden: 64, fourier_scale: 1.0}\n"
        "train: {epochs: 24, eval_every: 4, learning_rate: 1.0e-3}\n")
    cfg = load_config(tmp_path / "run.yaml", env={})
    assert cfg.model.to_dict() == default_model_config("gnn").to_dict()
