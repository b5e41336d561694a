import asyncio
import csv
import math
from pathlib import Path

import pytest

from errfilt.config import ExperimentConfig, Mode, load_config
from errfilt.database import Database
from errfilt.errors import ConfigError
from errfilt.harness import (
    ERROR_VERDICT,
    EVE_COLUMNS,
    QKD_COLUMNS,
    SWEEP_COLUMNS,
    Ledger,
    _session_apparatus,
    render_csv,
    run_eve,
    run_experiment,
    run_qkd,
    run_visibility_sweep,
    sidecar_path,
    sweep_variants,
    zones_report,
)
from errfilt.sim.apparatus import ApparatusConfig
from errfilt.sim.detection import DetectorConfig
from errfilt.sim.noise import NoiseModel, ber_unfiltered, visibility_filtered
from errfilt.sim.protocol import EveModel, run_session, session_summary
from errfilt.utils.rng import RandomStreams
from main import build_parser, main

HEADLINE_SIGMA2 = 0.3655
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def sweep_config(tmp_path, **changes):
    base = dict(mode=Mode.VISIBILITY_SWEEP, sigma2_grid=(0.0, 0.5), trials=5_000,
                output_path=tmp_path / "sweep.csv")
    base.update(changes)
    return ExperimentConfig(**base)


class TestCsv:
    def test_format(self):
        text = render_csv(["a", "b", "c", "d"], [(True, 0.1, 3, math.nan), (False, 1e-20, 0, "Secure")])
        assert text == "a,b,c,d\ntrue,0.1,3,nan\nfalse,1e-20,0,Secure\n"

    def test_numbers_read_back_exactly(self):
        value = 0.8190217573624358
        text = render_csv(["v"], [(value,)])
        assert float(text.splitlines()[1]) == value

    def test_sidecar_name(self):
        assert sidecar_path(Path("results/sweep.csv"), "zones.txt") == Path("results/sweep.csv.zones.txt")


class TestSweep:
    def test_rows_and_columns(self, tmp_path):
        config = sweep_config(tmp_path)
        output = asyncio.run(run_visibility_sweep(config))
        rows = read_rows(output)
        assert rows[0] == SWEEP_COLUMNS
        assert [(r[0], r[1]) for r in rows[1:]] == [
            ("0.0", "unfiltered"), ("0.5", "unfiltered"), ("0.0", "filtered_N2"), ("0.5", "filtered_N2"),
        ]
        for row in rows[1:]:
            v_mc, stderr, exact, diff = (float(x) for x in row[2:])
            assert diff == pytest.approx(abs(v_mc - exact))
            assert diff < max(0.01, 4 * stderr)
        assert float(rows[1][2]) == pytest.approx(1.0, abs=1e-12)

    def test_independent_of_worker_count(self, tmp_path):
        one = sweep_config(tmp_path, trials=9_000, output_path=tmp_path / "one.csv", workers=1)
        three = sweep_config(tmp_path, trials=9_000, output_path=tmp_path / "three.csv", workers=3)
        asyncio.run(run_visibility_sweep(one))
        asyncio.run(run_visibility_sweep(three))
        assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "three.csv").read_bytes()

    def test_same_seed_same_bytes(self, tmp_path):
        config = sweep_config(tmp_path, seed=77)
        first = asyncio.run(run_visibility_sweep(config)).read_bytes()
        second = asyncio.run(run_visibility_sweep(config)).read_bytes()
        assert first == second
        other = asyncio.run(run_visibility_sweep(config.with_changes(seed=78))).read_bytes()
        assert other != first

    def test_extra_pair_counts(self, tmp_path):
        config = sweep_config(tmp_path, n_list=(1, 2, 4))
        assert [v.name for v in sweep_variants(config)] == ["unfiltered", "filtered_N2", "filtered_N4"]
        assert sweep_variants(config)[2].apparatus.stages == 2

    def test_zones_sidecar(self, tmp_path):
        config = sweep_config(tmp_path)
        asyncio.run(run_visibility_sweep(config))
        report = sidecar_path(config.output_path, "zones.txt").read_text(encoding="utf-8")
        assert "[unfiltered]" in report and "[filtered_N2]" in report and "[inset]" in report

    def test_zone_crossings_on_default_grid(self, tmp_path):
        report = zones_report(ExperimentConfig(output_path=tmp_path / "x.csv"))
        section = report.split("[unfiltered]")[1]
        secure_line = next(line for line in section.splitlines() if line.startswith("secure_limit"))
        assert float(secure_line.rsplit("= ", 1)[1]) == pytest.approx(-math.log(0.78), abs=0.005)

    def test_fringe_factor_scales_closed_form(self, tmp_path):
        config = sweep_config(tmp_path, apparatus=ApparatusConfig(fringe_factor=0.9))
        variants = sweep_variants(config)
        assert variants[0].closed_form(0.0) == pytest.approx(0.9)
        assert variants[1].closed_form(0.0) == pytest.approx(0.9)

    def test_wrong_mode(self, tmp_path):
        with pytest.raises(ConfigError, match="visibility_sweep"):
            asyncio.run(run_visibility_sweep(sweep_config(tmp_path, mode=Mode.QKD_SESSION)))


class TestQkd:
    def qkd_config(self, tmp_path, **changes):
        base = dict(mode=Mode.QKD_SESSION, sigma2_grid=(HEADLINE_SIGMA2,), rounds=30_000,
                    output_path=tmp_path / "qkd.csv")
        base.update(changes)
        return ExperimentConfig(**base)

    def test_paired_rows(self, tmp_path):
        config = self.qkd_config(tmp_path, detector=DetectorConfig(efficiency=1.0))
        rows = read_rows(asyncio.run(run_qkd(config)))
        assert rows[0] == QKD_COLUMNS
        assert [r[0] for r in rows[1:]] == ["false", "true"]
        for row in rows[1:]:
            assert row[1] == "0.3655" and row[2] == "0.8" and row[3] == "0.0"
            assert int(row[4]) > 0
            assert row[7] in ("Secure", "Unknown", "Insecure")
        assert float(rows[1][5]) > float(rows[2][5])

    def test_report_states_transition(self, tmp_path):
        config = self.qkd_config(tmp_path, detector=DetectorConfig(efficiency=1.0))
        asyncio.run(run_qkd(config))
        report = sidecar_path(config.output_path, "report.txt").read_text(encoding="utf-8")
        assert "transition at sigma2=0.3655:" in report

    def test_single_arm(self, tmp_path):
        config = self.qkd_config(tmp_path, paired=False, apparatus=ApparatusConfig(n_pairs=4))
        rows = read_rows(asyncio.run(run_qkd(config)))
        assert len(rows) == 2 and rows[1][0] == "true"

    def test_no_sifted_bits_gives_error_row(self, tmp_path):
        config = self.qkd_config(tmp_path, rounds=2_000, apparatus=ApparatusConfig(source_mu=0.0))
        rows = read_rows(asyncio.run(run_qkd(config)))
        for row in rows[1:]:
            assert row[4] == "0"
            assert row[5] == "nan" and row[6] == "nan"
            assert row[7] == ERROR_VERDICT

    def test_calibrated_dark_counts(self, tmp_path):
        config = self.qkd_config(tmp_path, paired=False, apparatus=ApparatusConfig(filtration=False),
                                 target_raw_error=0.3, rounds=200_000)
        rows = read_rows(asyncio.run(run_qkd(config)))
        dark = float(rows[1][3])
        assert 0.0 < dark < 0.1
        assert float(rows[1][5]) == pytest.approx(0.30, abs=0.03)

    def test_fringe_factor_stays_on_filtered_arm(self, tmp_path):
        config = self.qkd_config(tmp_path, apparatus=ApparatusConfig(fringe_factor=0.972))
        assert _session_apparatus(config, False).fringe_factor == 1.0
        assert _session_apparatus(config, True).fringe_factor == 0.972
        single = config.with_changes(paired=False, apparatus=ApparatusConfig(filtration=False, fringe_factor=0.9))
        assert _session_apparatus(single, False).fringe_factor == 0.9

    def test_paired_headline_arms(self, tmp_path):
        config = self.qkd_config(
            tmp_path,
            rounds=1_000_000,
            workers=4,
            apparatus=ApparatusConfig(single_photon=True, fringe_factor=0.972),
            detector=DetectorConfig(efficiency=1.0),
        )
        rows = read_rows(asyncio.run(run_qkd(config)))
        off, on = rows[1:]
        assert off[0] == "false" and on[0] == "true"

        off_ber, off_ci = float(off[5]), float(off[6])
        assert abs(off_ber - 0.153) < 0.005
        assert abs(off_ber - ber_unfiltered(HEADLINE_SIGMA2)) < 4 * off_ci / 1.96

        on_ber, on_ci = float(on[5]), float(on[6])
        expected = (1 - 0.972 * visibility_filtered(2, HEADLINE_SIGMA2)) / 2
        assert 0.100 < expected < 0.115
        assert abs(on_ber - expected) < 4 * on_ci / 1.96

        assert (off[7], on[7]) == ("Insecure", "Secure")
        report = sidecar_path(config.output_path, "report.txt").read_text(encoding="utf-8")
        assert "transition at sigma2=0.3655: Insecure -> Secure" in report

    def test_headline_rounds_resolve_the_filtered_window(self):
        config = load_config(CONFIGS / "headline.cfg")
        assert config.paired
        sigma2 = config.sigma2_grid[0]
        sample_rounds = 200_000
        summary = session_summary(
            run_session(_session_apparatus(config, True), NoiseModel(sigma2), config.detector,
                        rounds=sample_rounds, rng=RandomStreams(config.seed))
        )
        sifted = summary.sifted * config.rounds / sample_rounds
        expected = (1 - config.apparatus.fringe_factor * visibility_filtered(2, sigma2)) / 2
        stderr = math.sqrt(expected * (1 - expected) / sifted)
        assert 0.100 + 3 * stderr < expected < 0.110 - 3 * stderr
        assert abs(ber_unfiltered(sigma2) - 0.153) < 0.001


class TestEve:
    def test_rows(self, tmp_path):
        config = ExperimentConfig(mode=Mode.EVE_ANALYSIS, sigma2_grid=(0.0, 0.3), trials=4_000,
                                  eve=EveModel(0.5), output_path=tmp_path / "eve.csv")
        rows = read_rows(asyncio.run(run_eve(config)))
        assert rows[0] == EVE_COLUMNS
        assert len(rows) == 3
        for row in rows[1:]:
            assert row[1] == "2" and row[2] == "0.5"
            assert 0.0 < float(row[6]) < 1.0


class TestLedger:
    def test_rows_are_mirrored(self, tmp_path):
        async def scenario():
            database = Database(tmp_path / "runs.db")
            await database.initialize()
            try:
                config = sweep_config(tmp_path, trials=500)
                run_id = await database.start_run(config.mode.value, config.seed, config.to_text())
                await run_experiment(config, Ledger(database, run_id))
                await database.finish_run(run_id)
                return await database.get_run(run_id), await database.get_sweep_points(run_id)
            finally:
                await database.close()

        run, points = asyncio.run(scenario())
        assert run["status"] == "finished"
        assert len(points) == 4
        assert points[0]["variant"] == "unfiltered"


class TestMain:
    def test_sweep_without_ledger(self, workdir):
        code = asyncio.run(main(["sweep", "--sigma2", "0, 0.2", "--trials", "500", "--out", "s.csv", "--no-ledger"]))
        assert code == 0
        assert len(read_rows(workdir / "s.csv")) == 5
        assert not (workdir / "data" / "runs.db").exists()

    def test_run_is_recorded(self, workdir):
        code = asyncio.run(main(["eve", "--sigma2", "0.1", "--trials", "500", "--seed", "5"]))
        assert code == 0
        assert (workdir / "results" / "eve.csv").exists()

        async def runs():
            database = Database()
            await database.initialize()
            try:
                return await database.get_recent_runs()
            finally:
                await database.close()

        (run,) = asyncio.run(runs())
        assert run["mode"] == "eve_analysis" and run["seed"] == "5"
        assert run["status"] == "finished" and run["exit_code"] == 0

    def test_config_error_exit_code(self, workdir):
        assert asyncio.run(main(["qkd", "--trials", "0", "--no-ledger"])) == 2
        assert asyncio.run(main(["qkd", "--config", "missing.cfg", "--no-ledger"])) == 2

    def test_bad_flag_exits_with_usage_error(self, workdir):
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args(["sweep", "--trials", "many"])
        assert info.value.code == 2

    def test_runtime_error_exit_code(self, workdir):
        (workdir / "bad.cfg").write_text("noise.sigma2 = 1.0\ndetector.target_raw_error = 0.01\n", encoding="utf-8")
        code = asyncio.run(main(["qkd", "--config", "bad.cfg", "--rounds", "1000"]))
        assert code == 3

        async def last_run():
            database = Database()
            await database.initialize()
            try:
                return (await database.get_recent_runs(1))[0]
            finally:
                await database.close()

        run = asyncio.run(last_run())
        assert run["status"] == "failed" and run["exit_code"] == 3
        assert run["error"].startswith("CalibrationError")
