from pathlib import Path

import pytest

from errfilt.config import DEFAULT_SIGMA2_GRID, ExperimentConfig, Mode, load_config, read_config_file
from errfilt.errors import ConfigError
from errfilt.sim.apparatus import ApparatusConfig, Port


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def no_env_workers(monkeypatch):
    monkeypatch.delenv("ERRFILT_WORKERS", raising=False)


class TestMode:
    def test_commands(self):
        assert Mode.VISIBILITY_SWEEP.command == "sweep"
        assert Mode.parse("qkd") is Mode.QKD_SESSION
        assert Mode.parse("EVE_ANALYSIS") is Mode.EVE_ANALYSIS

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown mode"):
            Mode.parse("scan")


class TestDefaults:
    def test_defaults(self):
        config = load_config()
        assert config.mode is Mode.VISIBILITY_SWEEP
        assert config.sigma2_grid == DEFAULT_SIGMA2_GRID
        assert len(config.sigma2_grid) == 16 and config.sigma2_grid[-1] == 1.5
        assert config.seed == 0 and config.workers == 1
        assert config.output_path == Path("results/sweep.csv")
        assert config.apparatus == ApparatusConfig()

    def test_output_follows_mode(self):
        assert ExperimentConfig(mode=Mode.QKD_SESSION).output_path == Path("results/qkd.csv")

    def test_validation_collects_everything(self):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig(sigma2_grid=(-1.0,), n_list=(3,), trials=0, rounds=0, workers=0, seed=-1)
        assert len(info.value.problems) == 6


class TestReadFile:
    def test_comments_blank_lines_and_sections(self, tmp_path):
        path = write(
            tmp_path,
            "# headline run\n"
            "\n"
            "mode = qkd_session\n"
            "\n"
            "\n"
            "apparatus.n_pairs = 4   # two stages\n"
            "detector.port = P2\n",
        )
        assert read_config_file(path) == [
            ("mode", "qkd_session", 3),
            ("apparatus.n_pairs", "4", 6),
            ("detector.port", "P2", 7),
        ]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            read_config_file(tmp_path / "absent.cfg")

    def test_syntax_errors_carry_line_numbers(self, tmp_path):
        path = write(tmp_path, "trials = 10\n= 5\nrounds\n")
        with pytest.raises(ConfigError) as info:
            read_config_file(path)
        assert info.value.problems == [
            f"{path}:2: cannot parse '= 5'",
            f"{path}:3: rounds: missing '= value'",
        ]


class TestLoadConfig:
    def test_file_values(self, tmp_path):
        path = write(
            tmp_path,
            "mode = qkd_session\n"
            "seed = 18446744073709551615\n"
            "sigma2_grid = 0:0.3:0.1\n"
            "paired = no\n"
            "apparatus.fringe_factor = 0.972\n"
            "detector.efficiency = 0.2\n"
            "detector.target_raw_error = 0.3\n"
            "eve.p_replace = 0.1\n",
        )
        config = load_config(path)
        assert config.mode is Mode.QKD_SESSION
        assert config.seed == 2**64 - 1
        assert config.sigma2_grid == (0.0, 0.1, 0.2, 0.3)
        assert config.paired is False
        assert config.apparatus.fringe_factor == 0.972
        assert config.detector.efficiency == 0.2
        assert config.target_raw_error == 0.3
        assert config.eve.p_replace == 0.1

    def test_every_problem_is_reported(self, tmp_path):
        path = write(tmp_path, "trials = many\nbogus = 1\ntrials = 5\napparatus.source_mu = x\n")
        with pytest.raises(ConfigError) as info:
            load_config(path)
        problems = info.value.problems
        assert len(problems) == 4
        assert problems[0].startswith(f"{path}:1: trials:")
        assert f"{path}:2: unknown key 'bogus'" in problems
        assert f"{path}:3: trials is already set on line 1" in problems
        assert problems[3].startswith(f"{path}:4: apparatus.source_mu:")

    def test_section_and_top_level_problems_together(self, tmp_path):
        path = write(tmp_path, "apparatus.n_pairs = 3\ntrials = 0\ndetector.dark_prob = 2\n")
        with pytest.raises(ConfigError) as info:
            load_config(path)
        text = str(info.value)
        assert "power of two" in text
        assert "trials must be >= 1" in text
        assert "detector.dark_prob" in text

    def test_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ERRFILT_WORKERS", "3")
        assert load_config().workers == 3
        path = write(tmp_path, "workers = 2\n")
        assert load_config(path).workers == 2
        assert load_config(path, {"workers": 5}).workers == 5
        assert load_config(path, {"workers": None}).workers == 2

    def test_flag_errors_name_the_flag(self):
        with pytest.raises(ConfigError, match="--trials: trials: expected an integer"):
            load_config(None, {"trials": "lots"})

    def test_single_noise_value(self, tmp_path):
        path = write(tmp_path, "noise.sigma2 = 0.3655\n")
        assert load_config(path).sigma2_grid == (0.3655,)
        assert load_config(path, {"sigma2_grid": "0.1, 0.2"}).sigma2_grid == (0.1, 0.2)

    def test_noise_value_and_grid_conflict(self, tmp_path):
        path = write(tmp_path, "noise.sigma2 = 0.3\nsigma2_grid = 0.1, 0.2\n")
        with pytest.raises(ConfigError, match="either noise.sigma2 or sigma2_grid"):
            load_config(path)

    def test_dark_prob_and_target_conflict(self, tmp_path):
        path = write(tmp_path, "detector.dark_prob = 0.01\ndetector.target_raw_error = 0.3\n")
        with pytest.raises(ConfigError, match="not both"):
            load_config(path)

    def test_plain_setup_ignores_pairs(self):
        config = load_config(None, {"apparatus.filtration": "false", "apparatus.n_pairs": 8})
        assert config.apparatus.n_pairs == 1

    def test_port_values(self, tmp_path):
        assert load_config(write(tmp_path, "detector.port = p2\n")).detector.port is Port.P2
        with pytest.raises(ConfigError, match="expected P1 or P2"):
            load_config(write(tmp_path, "detector.port = P3\n", "bad.cfg"))

    def test_resolved_text_reads_back(self, tmp_path):
        config = load_config(
            None,
            {
                "mode": "qkd",
                "seed": 42,
                "sigma2_grid": "0.3655",
                "apparatus.n_pairs": 4,
                "detector.gate_bin": 6,
                "eve.p_replace": 0.25,
            },
        )
        path = write(tmp_path, config.to_text(), "resolved.cfg")
        assert load_config(path) == config


class TestShippedConfigs:
    @pytest.mark.parametrize("name", ["headline.cfg", "sweep.cfg", "dark_counts.cfg"])
    def test_loads(self, name):
        config = load_config(Path(__file__).resolve().parent.parent / "configs" / name)
        assert config.seed > 0

    def test_headline(self):
        config = load_config(Path(__file__).resolve().parent.parent / "configs" / "headline.cfg")
        assert config.mode is Mode.QKD_SESSION
        assert config.sigma2_grid == (0.3655,)
        assert config.apparatus.fringe_factor == 0.972
        assert config.apparatus.single_photon and config.detector.efficiency == 1.0
        assert config.paired and config.rounds == 8_000_000
