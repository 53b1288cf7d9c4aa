"""
Config loading, defaults, overrides and validation.
"""

import math
import pickle

import pytest
import yaml

from experiments.config import (BENCHMARK_IDS, ConfigError, benchmark_defaults, build_config,
                                load_config)


def _write(tmp_path, doc):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def test_shipped_multi_config(config_path):
    config = load_config(config_path("car2d-multi.yaml"))
    assert config.benchmark == "car2d-multi"
    assert config.system.obstacles == ((1.0, 1.0, 0.4), (1.0, 4.0, 0.4), (3.0, 2.5, 0.6))
    assert config.system.goal == (4.0, 4.0)
    assert config.controller.type == "ClfCbf"
    assert config.qp.q_diag == (1000.0, 10.0)
    assert config.qp.p == 1000.0
    assert config.simulation.dt == 0.005
    assert config.simulation.horizon == 8.0
    assert config.ensemble.n_trajectories == 20
    assert config.barrier.gains == (1.0, 1.0)
    assert config.lyapunov.gains == (1.0,)
    assert config.lyapunov.class_k == (100.0,)
    assert config.lyapunov.decay_rate == 8.0
    assert config.lyapunov.decay_saturation == 0.5
    assert config.lyapunov.relaxation_decay == 1000.0


@pytest.mark.parametrize("name", ["car2d-single.yaml", "car2d-multi.yaml", "elastic-pendulum.yaml"])
def test_shipped_configs_equal_defaults(config_path, name):
    """Every shipped file spells out the built-in defaults."""
    config = load_config(config_path(name))
    assert config == build_config(benchmark_defaults(config.benchmark))


def test_pendulum_defaults():
    config = load_config(overrides={"system.benchmark": "elastic-pendulum"})
    assert config.barrier.relative_degree == 4
    assert config.lyapunov.relative_degree == 4
    assert config.lyapunov.gains == (1.0, 1.0, 1.0)
    assert config.lyapunov.decay_rate == 0.0
    assert config.lyapunov.decay_saturation is None
    assert config.lyapunov.relaxation_decay == 0.0
    assert config.system.theta1_limit == math.pi
    assert config.system.initial_state[0] == -math.pi / 2
    assert config.simulation.horizon == 60.0
    assert config.system.obstacles == ()


def test_overrides_win_over_file(config_path):
    config = load_config(config_path("car2d-single.yaml"), {
        "ensemble.n_trajectories": 3,
        "simulation.dt": 0.01,
        "controller.type": "clf",
        "ensemble.base_seed": None,
    })
    assert config.ensemble.n_trajectories == 3
    assert config.simulation.dt == 0.01
    assert config.controller.type == "ClfOnly"
    assert not config.controller.enforce_barriers
    assert config.ensemble.base_seed == 0


def test_system_override_switches_benchmark():
    config = load_config(overrides={"system.benchmark": "car2d-multi"})
    assert len(config.system.obstacles) == 3


@pytest.mark.parametrize("alias, expected", [
    ("clf", "ClfOnly"), ("ClfOnly", "ClfOnly"), ("clf-cbf", "ClfCbf"), ("ClfCbf", "ClfCbf"),
])
def test_controller_aliases(alias, expected):
    config = load_config(overrides={"system.benchmark": "car2d-single", "controller.type": alias})
    assert config.controller.type == expected


def test_scalar_gain_broadcasts(tmp_path):
    path = _write(tmp_path, {"system": {"benchmark": "car2d-single"}, "barrier": {"gains": 2.0}})
    assert load_config(path).barrier.gains == (2.0, 2.0)


@pytest.mark.parametrize("doc, field", [
    ({"qp": {"q_diag": [1.0, 1.0], "weight": 3}}, "qp.weight"),
    ({"plotting": {"dpi": 100}}, "plotting"),
    ({"system": {"J1": 1.0}}, "system.J1"),
    ({"simulation": {"dt": -0.1}}, "simulation.dt"),
    ({"simulation": {"horizon": "long"}}, "simulation.horizon"),
    ({"barrier": {"gains": [1.0]}}, "barrier.gains"),
    ({"barrier": {"class_k": [1.0, 0.0]}}, "barrier.class_k"),
    ({"qp": {"u_lower": [10.0, -10.0]}}, "qp.u_lower"),
    ({"qp": {"q_diag": [1.0, -1.0]}}, "qp.q_diag"),
    ({"ensemble": {"n_trajectories": 0}}, "ensemble.n_trajectories"),
    ({"ensemble": {"workers": 1.5}}, "ensemble.workers"),
    ({"controller": {"type": "mpc"}}, "controller.type"),
    ({"system": {"obstacles": [[1.0, 1.0]]}}, "system.obstacles[0]"),
    ({"system": {"initial_state": [0.0, 0.0]}}, "system.initial_state"),
    ({"lyapunov": {"base_relaxation": "yes"}}, "lyapunov.base_relaxation"),
    ({"lyapunov": {"decay_rate": -1.0}}, "lyapunov.decay_rate"),
    ({"lyapunov": {"decay_saturation": 0.0}}, "lyapunov.decay_saturation"),
    ({"lyapunov": {"relaxation_decay": "fast"}}, "lyapunov.relaxation_decay"),
])
def test_invalid_fields_named(tmp_path, doc, field):
    doc.setdefault("system", {})["benchmark"] = "car2d-single"
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, doc))
    assert info.value.field == field
    assert field in str(info.value)


def test_unknown_benchmark():
    with pytest.raises(ConfigError) as info:
        load_config(overrides={"system.benchmark": "quadrotor"})
    assert info.value.field == "system.benchmark"


def test_missing_benchmark():
    with pytest.raises(ConfigError):
        load_config()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(tmp_path / "absent.yaml")
    assert info.value.field == "config"


def test_invalid_yaml(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("system: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_pendulum_inertia_order(tmp_path):
    path = _write(tmp_path, {"system": {"benchmark": "elastic-pendulum", "J1": 0.2}})
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "system.J1"


def test_metadata_excludes_run_layout(config_path):
    config = load_config(config_path("car2d-multi.yaml"))
    meta = config.metadata()
    assert "output" not in meta
    assert "workers" not in meta["ensemble"]
    assert meta["ensemble"]["base_seed"] == 0
    assert "J1" not in meta["system"]
    parallel = load_config(config_path("car2d-multi.yaml"), {"ensemble.workers": 4, "output.path": "elsewhere"})
    assert parallel.metadata() == meta


def test_config_picklable_and_hashable(config_path):
    config = load_config(config_path("car2d-multi.yaml"))
    assert pickle.loads(pickle.dumps(config)) == config
    assert hash(config) == hash(load_config(config_path("car2d-multi.yaml")))


def test_to_dict_round_trips_through_yaml(config_path):
    config = load_config(config_path("elastic-pendulum.yaml"))
    assert build_config(yaml.safe_load(yaml.safe_dump(config.to_dict()))) == config


def test_every_benchmark_has_defaults():
    for benchmark in BENCHMARK_IDS:
        assert build_config(benchmark_defaults(benchmark)).benchmark == benchmark
