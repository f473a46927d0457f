import pytest

from hedgebench import config
from hedgebench.errors import ConfigError


class TestDefaults:
    def test_empty_source_gives_experiment_defaults(self):
        cfg = config.load_config_text("")
        assert cfg.heston.s0 == 100.0
        assert cfg.heston.v0 == 0.04
        assert cfg.heston.theta == 0.04
        assert cfg.heston.kappa == 2.0
        assert cfg.heston.xi == 0.5
        assert cfg.heston.rho == -0.7
        assert cfg.heston.dt == pytest.approx(1.0 / 250.0)
        assert cfg.heston.n_steps == 250
        assert cfg.training.epochs == 100
        assert cfg.training.batch_size == 32
        assert cfg.training.learning_rate == 1e-3
        assert cfg.training.weight_decay == 1e-4
        assert cfg.sim.n_train_paths == 10000
        assert cfg.sim.n_val_paths == 2000
        assert cfg.arch.hidden_dim == 32
        assert cfg.option.strike == 100.0
        assert cfg.cost_model.rate == 0.001

    def test_overrides_and_comments(self):
        cfg = config.load_config_text(
            "# comment line\n"
            "heston.kappa = 3.5   # inline comment\n"
            "\n"
            "train.epochs = 7\n"
        )
        assert cfg.heston.kappa == 3.5
        assert cfg.training.epochs == 7
        assert cfg.heston.theta == 0.04  # untouched default


class TestErrors:
    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as err:
            config.load_config_text("heston.gamma = 1.0\n")
        assert "heston.gamma" in str(err.value)
        assert err.value.line == 1

    def test_invariant_violation_names_key(self):
        with pytest.raises(ConfigError) as err:
            config.load_config_text("heston.rho = -1.5\n")
        assert "heston.rho" in str(err.value)

    def test_type_error_names_key_and_line(self):
        with pytest.raises(ConfigError) as err:
            config.load_config_text("# pad\ntrain.epochs = soon\n")
        assert err.value.key == "train.epochs"
        assert err.value.line == 2

    def test_bad_syntax(self):
        with pytest.raises(ConfigError):
            config.load_config_text("just words\n")

    def test_bad_optimizer_kind(self):
        with pytest.raises(ConfigError) as err:
            config.load_config_text("optim.kind = sgd\n")
        assert err.value.key == "optim.kind"

    def test_bad_option_side(self):
        with pytest.raises(ConfigError) as err:
            config.load_config_text("option.side = diagonal\n")
        assert err.value.key == "option.side"


class TestHash:
    def test_identical_sources_identical_hashes(self):
        text = "heston.kappa = 3.0\ntrain.epochs = 9\n"
        assert config.load_config_text(text).content_hash == \
            config.load_config_text(text).content_hash

    def test_semantically_identical_sources_identical_hashes(self):
        a = config.load_config_text("heston.kappa = 3.0  # fast reversion\n")
        b = config.load_config_text("# other comment\nheston.kappa = 3.0\n")
        assert a.content_hash == b.content_hash

    def test_value_changes_hash(self):
        a = config.load_config_text("heston.kappa = 3.0\n")
        b = config.load_config_text("heston.kappa = 3.1\n")
        assert a.content_hash != b.content_hash

    def test_defaults_differ_from_overridden(self):
        a = config.load_config_text("")
        b = config.load_config_text("train.epochs = 100\n")  # same as default
        assert a.content_hash == b.content_hash


def test_convergence_threshold_optional():
    cfg = config.load_config_text("train.convergence_threshold = none\n")
    assert cfg.training.convergence_threshold is None
    cfg = config.load_config_text("train.convergence_threshold = 2.5\n")
    assert cfg.training.convergence_threshold == 2.5


def test_load_config_from_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("sim.seed = 99\n")
    cfg = config.load_config(path)
    assert cfg.sim.seed == 99
    assert config.load_config(None).sim.seed == 42
