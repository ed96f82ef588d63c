import json

import pytest

from errors import ConfigError
from settings import CurveSpec, ExperimentConfig, env_defaults, load_config


def test_defaults_are_explicit(monkeypatch):
    monkeypatch.setenv("QCD_DEFAULT_TRIALS", "1234")
    config = ExperimentConfig.from_dict({})
    data = config.to_dict()
    assert data["model"] == {"pi0": 0.0, "rho": 0.1, "sigma2": 1.0, "snr_db": 0.0}
    assert data["solver"]["grid_size"] == 2001
    assert data["run"]["trials"] == 1234
    assert data["run"]["curves"] == [{"policy": "shiryaev", "rights": None, "interval": None, "table": None}]


def test_nested_blocks_parse():
    config = ExperimentConfig.from_dict({
        "model": {"rho": 0.4, "snr_db": -5.0},
        "energy": {"capacity": 3, "pmf": [0.85, 0.1, 0.03, 0.01, 0.01]},
        "run": {"curves": [{"policy": "uniform", "interval": 2}, {"policy": "limited", "rights": 15}],
                "alphas": [0.1, 0.01], "trials": 500},
    })
    assert config.run.curves == [CurveSpec("uniform", interval=2), CurveSpec("limited", rights=15)]
    assert config.energy.energy_model().mean_arrival == pytest.approx(0.23)
    assert config.model.change_model().rho == 0.4


@pytest.mark.parametrize("data", [
    {"modle": {}},
    {"model": {"rho": 0.1, "gamma": 2}},
    {"model": {"rho": 1.5}},
    {"model": {"sigma2": "one"}},
    {"energy": {"capacity": 2, "pmf": [0.5, 0.4]}},
    {"energy": {"capacity": -1}},
    {"solver": {"grid_size": 2}},
    {"solver": {"quad_initial_panels": 64, "quad_max_panels": 8}},
    {"run": {"alphas": [0.01, 0.1]}},
    {"run": {"trials": 10}},
    {"run": {"curves": [{"policy": "cusum"}]}},
    {"run": {"curves": [{"policy": "uniform"}]}},
    {"run": {"curves": []}},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    with pytest.raises(ConfigError):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"model": {"rho": 0.2}}))
    assert load_config(good).model.rho == 0.2


def test_environment_defaults(monkeypatch):
    monkeypatch.setenv("QCD_THREADS", "4")
    monkeypatch.setenv("QCD_LOG_LEVEL", "debug")
    defaults = env_defaults()
    assert defaults.threads == 4
    assert defaults.log_level == "DEBUG"
    monkeypatch.setenv("QCD_THREADS", "many")
    with pytest.raises(ConfigError):
        env_defaults()
    monkeypatch.setenv("QCD_THREADS", "1")
    monkeypatch.setenv("QCD_LOG_LEVEL", "chatty")
    with pytest.raises(ConfigError):
        env_defaults()
