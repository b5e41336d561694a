"""Experiment orchestration: sweeps, QKD sessions and the eavesdropper study.

Each runner computes its rows off the event loop, writes a CSV (header row,
UTF-8, '\\n' line endings, round-trip exact numbers) and a plain-text
sidecar with aiofiles, and mirrors the rows into the run ledger when one is
attached. Outputs depend only on the configuration, never on worker count.
"""

import asyncio
import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import aiofiles

from errfilt.config import ExperimentConfig, Mode
from errfilt.database import Database
from errfilt.errors import ConfigError
from errfilt.sim.apparatus import ApparatusConfig, estimate_visibility
from errfilt.sim.detection import calibrate_dark_for_raw_error
from errfilt.sim.noise import (
    NoiseModel,
    sigma2_for_visibility,
    visibility_filtered,
    visibility_unfiltered,
)
from errfilt.sim.protocol import (
    V_INSECURE,
    V_SECURE,
    SessionSummary,
    eve_replacement_analysis,
    run_session,
    session_summary,
)
from errfilt.utils.logger import log_session_summary
from errfilt.utils.rng import RandomStreams
from errfilt.utils.utils import Utils

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["sigma2", "variant", "V_mc", "stderr", "V_closed_form", "abs_diff"]
QKD_COLUMNS = ["filtration", "sigma2", "mu", "dark_prob", "n_sifted", "ber", "ci95", "verdict"]
EVE_COLUMNS = [
    "sigma2", "n_pairs", "p_replace", "ber_with_eve", "yield_legit", "yield_replaced", "yield_ratio",
]

ERROR_VERDICT = "error:no_sifted_bits"

# Unfiltered visibilities whose filtered image the zones report quotes
INSET_RANGE = (0.65, 0.78)


@dataclass(frozen=True)
class Ledger:
    """Where to mirror emitted rows"""

    database: Database
    run_id: int


def sidecar_path(output_path: Path, suffix: str) -> Path:
    return output_path.with_name(f"{output_path.name}.{suffix}")


def render_csv(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([value if isinstance(value, str) else Utils.format_number(value) for value in row])
    return buffer.getvalue()


async def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8", newline="\n") as f:
        await f.write(text)


# Visibility sweep

@dataclass(frozen=True)
class Variant:
    name: str
    apparatus: ApparatusConfig

    def closed_form(self, sigma2: float) -> float:
        if self.apparatus.filtration:
            v = visibility_filtered(self.apparatus.n_pairs, sigma2)
        else:
            v = visibility_unfiltered(sigma2)
        return self.apparatus.fringe_factor * v


def sweep_variants(config: ExperimentConfig) -> List[Variant]:
    """Unfiltered, filtered N=2, then any extra N from n_list"""
    base = config.apparatus
    variants = [Variant("unfiltered", base.with_changes(filtration=False, n_pairs=1))]
    for n in (2, *config.n_list):
        name = "unfiltered" if n == 1 else f"filtered_N{n}"
        if name not in {v.name for v in variants}:
            variants.append(Variant(name, base.with_changes(filtration=True, n_pairs=n)))
    return variants


def compute_sweep_rows(config: ExperimentConfig) -> List[Tuple]:
    rows = []
    streams = RandomStreams(config.seed, "sweep")
    for variant in sweep_variants(config):
        for sigma2 in config.sigma2_grid:
            estimate = estimate_visibility(
                variant.apparatus, sigma2, config.trials,
                streams.child(f"{variant.name}/{Utils.format_number(sigma2)}"), config.workers,
            )
            exact = variant.closed_form(sigma2)
            rows.append((sigma2, variant.name, estimate.visibility, estimate.stderr, exact,
                         abs(estimate.visibility - exact)))
            logger.debug(f"{variant.name} sigma2={sigma2:g}: V={estimate.visibility:.5f} (closed form {exact:.5f})")
    return rows


def zones_report(config: ExperimentConfig) -> str:
    """Security-zone crossings of every variant's closed-form curve on the grid"""
    grid = list(config.sigma2_grid)
    lines = [f"# security zones: V > {V_SECURE} secure, V <= {V_INSECURE} insecure", ""]
    for variant in sweep_variants(config):
        curve = [variant.closed_form(s) for s in grid]
        lines.append(f"[{variant.name}]")
        for label, level in (("secure_limit", V_SECURE), ("insecure_limit", V_INSECURE)):
            crossing = Utils.crossing(grid, curve, level)
            where = "not crossed on grid" if crossing is None else Utils.format_number(crossing)
            lines.append(f"{label} V={level}: sigma2 = {where}")
        lines.append("")

    low, high = (sigma2_for_visibility(v) for v in INSET_RANGE)
    mapped = [visibility_filtered(2, s) for s in (low, high)]
    f = config.apparatus.fringe_factor
    lines.append("[inset]")
    lines.append(
        f"unfiltered V in [{INSET_RANGE[0]:.3f}, {INSET_RANGE[1]:.3f}] "
        f"(sigma2 in [{high:.4f}, {low:.4f}]) -> filtered N=2 V in [{f * mapped[0]:.4f}, {f * mapped[1]:.4f}]"
    )
    return "\n".join(lines) + "\n"


async def run_visibility_sweep(config: ExperimentConfig, ledger: Optional[Ledger] = None) -> Path:
    if config.mode is not Mode.VISIBILITY_SWEEP:
        raise ConfigError(f"run_visibility_sweep needs mode visibility_sweep, got {config.mode.value}")
    logger.info(f"Starting visibility sweep over {len(config.sigma2_grid)} noise levels")

    rows = await asyncio.to_thread(compute_sweep_rows, config)
    await write_text(config.output_path, render_csv(SWEEP_COLUMNS, rows))
    await write_text(sidecar_path(config.output_path, "zones.txt"), zones_report(config))

    if ledger:
        for row in rows:
            await ledger.database.add_sweep_point(ledger.run_id, *row)
    logger.info(f"Wrote {len(rows)} sweep rows to {config.output_path}")
    return config.output_path


# QKD sessions

def _session_apparatus(config: ExperimentConfig, filtration: bool) -> ApparatusConfig:
    """Apparatus for one arm; the fringe factor belongs to the filtered arm of a pair"""
    if not filtration:
        fringe = 1.0 if config.paired else config.apparatus.fringe_factor
        return config.apparatus.with_changes(filtration=False, n_pairs=1, fringe_factor=fringe)
    n_pairs = config.apparatus.n_pairs if config.apparatus.filtration else 2
    return config.apparatus.with_changes(filtration=True, n_pairs=n_pairs)


def compute_qkd_sessions(config: ExperimentConfig) -> List[Tuple[bool, float, float, SessionSummary]]:
    """(filtration, sigma2, dark_prob, summary) per session"""
    variants = (False, True) if config.paired else (config.apparatus.filtration,)
    streams = RandomStreams(config.seed, "qkd")
    results = []
    for sigma2 in config.sigma2_grid:
        for filtration in variants:
            apparatus = _session_apparatus(config, filtration)
            tag = f"{'on' if filtration else 'off'}/{Utils.format_number(sigma2)}"
            det = config.detector
            if config.target_raw_error is not None:
                dark = calibrate_dark_for_raw_error(
                    config.target_raw_error, apparatus, sigma2, det, rng=streams.child(f"calibration/{tag}")
                )
                det = det.with_dark_prob(dark)
            log = run_session(apparatus, NoiseModel(sigma2), det, config.eve, config.rounds,
                              streams.child(tag), config.workers)
            summary = session_summary(log)
            log_session_summary(f"{apparatus.describe()} sigma2={sigma2:g}", summary)
            results.append((filtration, sigma2, det.dark_prob, summary))
    return results


def qkd_row(config: ExperimentConfig, filtration: bool, sigma2: float, dark_prob: float,
            summary: SessionSummary) -> Tuple:
    mu = config.apparatus.source_mu
    if summary.sifted == 0:
        return (filtration, sigma2, mu, dark_prob, 0, math.nan, math.nan, ERROR_VERDICT)
    return (filtration, sigma2, mu, dark_prob, summary.sifted, summary.ber, summary.ci95, summary.verdict.value)


def qkd_report(config: ExperimentConfig, sessions) -> str:
    lines = [f"# BB84 sessions, {config.rounds} rounds each, seed {config.seed}", ""]
    by_sigma2 = {}
    for filtration, sigma2, dark_prob, summary in sessions:
        by_sigma2.setdefault(sigma2, {})[filtration] = summary
        verdict = summary.verdict.value if summary.verdict else ERROR_VERDICT
        ber = "n/a" if summary.sifted == 0 else f"{summary.ber:.4f} +/- {summary.ci95:.4f}"
        lines.append(
            f"sigma2={Utils.format_number(sigma2)} filtration={'on' if filtration else 'off'}: "
            f"BER {ber}, sifted {summary.sifted}, dark_prob {dark_prob:.6g}, verdict {verdict}"
        )
    if config.paired:
        lines.append("")
        for sigma2, pair in by_sigma2.items():
            before, after = (pair[k].verdict for k in (False, True))
            names = [v.value if v else ERROR_VERDICT for v in (before, after)]
            lines.append(f"transition at sigma2={Utils.format_number(sigma2)}: {names[0]} -> {names[1]}")
    return "\n".join(lines) + "\n"


async def run_qkd(config: ExperimentConfig, ledger: Optional[Ledger] = None) -> Path:
    if config.mode is not Mode.QKD_SESSION:
        raise ConfigError(f"run_qkd needs mode qkd_session, got {config.mode.value}")
    logger.info(
        f"Starting {'paired ' if config.paired else ''}QKD sessions over {len(config.sigma2_grid)} noise levels"
    )

    sessions = await asyncio.to_thread(compute_qkd_sessions, config)
    rows = [qkd_row(config, *session) for session in sessions]
    for row in rows:
        if row[-1] == ERROR_VERDICT:
            logger.warning(f"No sifted bits at sigma2={row[1]:g} (filtration {row[0]}); wrote an error row")

    await write_text(config.output_path, render_csv(QKD_COLUMNS, rows))
    await write_text(sidecar_path(config.output_path, "report.txt"), qkd_report(config, sessions))

    if ledger:
        for row in rows:
            await ledger.database.add_session_result(ledger.run_id, *row)
    logger.info(f"Wrote {len(rows)} session rows to {config.output_path}")
    return config.output_path


# Eavesdropper study

def compute_eve_rows(config: ExperimentConfig) -> List[Tuple]:
    streams = RandomStreams(config.seed, "eve")
    rows = []
    for sigma2 in config.sigma2_grid:
        report = eve_replacement_analysis(
            config.apparatus, sigma2, config.eve.p_replace, config.trials,
            streams.child(Utils.format_number(sigma2)), config.workers,
        )
        rows.append((sigma2, report.n_pairs, report.p_replace, report.ber_with_eve,
                     report.yield_legit, report.yield_replaced, report.yield_ratio))
    return rows


async def run_eve(config: ExperimentConfig, ledger: Optional[Ledger] = None) -> Path:
    if config.mode is not Mode.EVE_ANALYSIS:
        raise ConfigError(f"run_eve needs mode eve_analysis, got {config.mode.value}")
    logger.info(f"Starting eavesdropper analysis with p_replace={config.eve.p_replace:g}")

    rows = await asyncio.to_thread(compute_eve_rows, config)
    await write_text(config.output_path, render_csv(EVE_COLUMNS, rows))

    if ledger:
        for sigma2, n_pairs, p_replace, ber, _, _, ratio in rows:
            await ledger.database.add_session_result(
                ledger.run_id, config.apparatus.filtration, sigma2, mu=config.apparatus.source_mu,
                ber=ber, verdict=None, p_replace=p_replace, yield_ratio=ratio,
            )
    logger.info(f"Wrote {len(rows)} eavesdropper rows to {config.output_path}")
    return config.output_path


RUNNERS = {
    Mode.VISIBILITY_SWEEP: run_visibility_sweep,
    Mode.QKD_SESSION: run_qkd,
    Mode.EVE_ANALYSIS: run_eve,
}


async def run_experiment(config: ExperimentConfig, ledger: Optional[Ledger] = None) -> Path:
    return await RUNNERS[config.mode](config, ledger)
