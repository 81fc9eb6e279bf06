"""Configuration loading, validation, and snapshot round-trips."""

import pytest

from shflab.config import (ConfigError, RunConfig, load_config,
                           parse_overrides, snapshot)


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


class TestDefaults:

    def test_defaults_are_valid(self):
        cfg = load_config()
        assert cfg.master_seed == 1234
        assert cfg.epsilon == 0.05
        assert cfg.grid_n == 128

    def test_default_grid_resolves_default_epsilon(self):
        cfg = load_config()
        assert cfg.grid_l / cfg.grid_n <= cfg.epsilon / 2


class TestFileLoading:

    def test_file_overrides_defaults(self, tmp_path):
        path = write(tmp_path, "[coupling]\ntheta = -1.0\nepsilon = 0.1\n"
                               "\n[run]\nmaster_seed = 7\n")
        cfg = load_config(path)
        assert cfg.theta == -1.0
        assert cfg.epsilon == 0.1
        assert cfg.master_seed == 7
        # untouched keys keep their defaults
        assert cfg.sigma == 0.5

    def test_list_values(self, tmp_path):
        path = write(tmp_path, "[coupling]\nepsilons = 0.1, 0.05\n")
        cfg = load_config(path)
        assert cfg.epsilons == (0.1, 0.05)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.cfg")

    def test_unknown_key_is_field_error(self, tmp_path):
        path = write(tmp_path, "[coupling]\nthetta = 1\n")
        with pytest.raises(ConfigError) as exc:
            load_config(path)
        assert "[coupling] thetta: unknown key" in exc.value.problems[0]

    def test_unknown_section_is_field_error(self, tmp_path):
        path = write(tmp_path, "[couplings]\ntheta = 1\n")
        with pytest.raises(ConfigError) as exc:
            load_config(path)
        assert "unknown key" in str(exc.value)

    def test_all_problems_reported_together(self, tmp_path):
        path = write(tmp_path, "[coupling]\nepsilon = 2\n"
                               "[grid]\nn = 63\n[bogus]\nkey = 1\n")
        with pytest.raises(ConfigError) as exc:
            load_config(path)
        assert len(exc.value.problems) == 3


class TestValidation:

    @pytest.mark.parametrize("override,fragment", [
        ("run.master_seed=-1", "nonnegative"),
        ("coupling.epsilon=0", "(0, 1)"),
        ("coupling.epsilon=nope", "(0, 1)"),
        ("grid.n=48", "power of two"),
        ("grid.l=-2", "positive"),
        ("moment.n=5", "1..4"),
        ("spde.n_samples=4", ">= 8"),
        ("mollifier.profile=box", "one of"),
        ("jfun.t_values=", "positive times"),
        ("coupling.theta=inf", "finite"),
    ])
    def test_bad_values(self, override, fragment):
        with pytest.raises(ConfigError) as exc:
            load_config(None, [override])
        assert fragment in str(exc.value)

    def test_t_must_exceed_s(self):
        with pytest.raises(ConfigError) as exc:
            load_config(None, ["times.s=0.5", "times.t=0.25"])
        assert "must exceed" in str(exc.value)

    def test_grid_must_resolve_epsilon(self):
        with pytest.raises(ConfigError) as exc:
            load_config(None, ["grid.n=16", "coupling.epsilon=0.05"])
        assert "epsilon/2" in str(exc.value)

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            parse_overrides(["no_equals_sign"])
        with pytest.raises(ConfigError):
            parse_overrides(["nodot=3"])


class TestSnapshot:

    def test_snapshot_covers_every_field(self):
        cfg = RunConfig()
        snap = snapshot(cfg)
        import dataclasses
        assert len(snap) == len(dataclasses.fields(cfg))
        assert snap["run.master_seed"] == "1234"
        assert snap["coupling.epsilons"] == "0.1,0.05,0.025,0.0125"

    def test_snapshot_roundtrips_through_overrides(self):
        cfg = load_config(None, ["coupling.theta=-0.75",
                                 "scaling.r_values=0.5 2 10"])
        overrides = [f"{k}={v}" for k, v in snapshot(cfg).items()]
        again = load_config(None, overrides)
        assert again == cfg
