"""Gated threshold detector: intensities to clicks."""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.optimize import bisect

from errfilt.errors import CalibrationError, ConfigError, OpticsError
from errfilt.sim.apparatus import (
    Apparatus,
    ApparatusConfig,
    Port,
    alice_phase,
    bob_phase,
    decode_bit,
)
from errfilt.sim.noise import NoiseModel, sample_phase_block
from errfilt.utils.rng import RandomStreams

logger = logging.getLogger(__name__)

CALIBRATION_TRIALS = 20_000


@dataclass(frozen=True)
class DetectorConfig:
    """Single gated avalanche detector watching one output port"""

    efficiency: float = 0.1
    dark_prob: float = 0.0
    gate_bin: Optional[int] = None
    port: Port = Port.P1

    def __post_init__(self):
        object.__setattr__(self, "port", Port.parse(self.port))
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    def validate(self) -> List[str]:
        problems = []
        if not 0.0 <= self.efficiency <= 1.0:
            problems.append(f"detector.efficiency must lie in [0, 1], got {self.efficiency}")
        if not 0.0 <= self.dark_prob <= 1.0:
            problems.append(f"detector.dark_prob must lie in [0, 1], got {self.dark_prob}")
        if self.gate_bin is not None and self.gate_bin < 0:
            problems.append(f"detector.gate_bin must be >= 0, got {self.gate_bin}")
        return problems

    def with_dark_prob(self, dark_prob: float) -> "DetectorConfig":
        return DetectorConfig(self.efficiency, dark_prob, self.gate_bin, self.port)


def click_probability(intensity, mu: float, det: DetectorConfig, single_photon: bool = False):
    """Probability of at least one count in the gate

    Coherent light: 1 - (1 - d) exp(-eta mu I). A single-photon source
    replaces the Poisson factor by (1 - eta I). Works elementwise on arrays.
    """
    values = np.asarray(intensity, dtype=float)
    if np.any(values < -1e-12) or np.any(values > 1 + 1e-9) or np.any(np.isnan(values)):
        raise OpticsError("Gate intensity must lie in [0, 1]")
    if not mu >= 0:
        raise OpticsError(f"Mean photon number must be >= 0, got {mu}")
    values = np.clip(values, 0.0, 1.0)

    if single_photon:
        no_photon = 1.0 - det.efficiency * values
    else:
        no_photon = np.exp(-det.efficiency * mu * values)
    p = 1.0 - (1.0 - det.dark_prob) * no_photon
    return float(p) if np.ndim(p) == 0 else p


def sample_click(p, rng: np.random.Generator):
    """Bernoulli draw(s) with success probability p"""
    probs = np.asarray(p, dtype=float)
    if np.any(probs < 0) or np.any(probs > 1):
        raise OpticsError("Click probability must lie in [0, 1]")
    draws = rng.random(probs.shape) < probs
    return bool(draws) if draws.ndim == 0 else draws


def _sifted_click_means(config: ApparatusConfig, det: DetectorConfig, sigma2: float,
                        trials: int, rng: RandomStreams):
    """Mean dark-free click probability per matched-basis (basis, bit) and whether it errs"""
    apparatus = Apparatus(config)
    gate = apparatus.gate if det.gate_bin is None else det.gate_bin
    phases = sample_phase_block(NoiseModel(sigma2), apparatus.noise_bins,
                                rng.child("calibration").generator(), trials)
    dark_free = det.with_dark_prob(0.0)

    means, wrong = [], []
    for basis in (0, 1):
        for bit in (0, 1):
            x = apparatus.channel_vectors(alice_phase(basis, bit), phases)
            level = apparatus.gate_intensity(x, bob_phase(basis), det.port, gate)
            p = click_probability(level, config.source_mu, dark_free, config.single_photon)
            means.append(float(np.mean(p)))
            wrong.append(decode_bit(det.port, basis) != bit)
    return np.array(means), np.array(wrong)


def _raw_error(means: np.ndarray, wrong: np.ndarray, dark_prob: float) -> float:
    with_dark = dark_prob + (1.0 - dark_prob) * means
    total = with_dark.sum()
    return float(with_dark[wrong].sum() / total) if total > 0 else 0.5


def expected_raw_error(config: ApparatusConfig, det: DetectorConfig, sigma2: float,
                       trials: int = CALIBRATION_TRIALS, rng: Optional[RandomStreams] = None) -> float:
    """Expected error rate of sifted clicks, dark counts included

    Uses one fixed noise block (common random numbers), so the value is
    deterministic for a seed and nondecreasing in the dark-count probability.
    """
    means, wrong = _sifted_click_means(config, det, sigma2, trials, rng or RandomStreams(0))
    return _raw_error(means, wrong, det.dark_prob)


def calibrate_dark_for_raw_error(
    target_raw_error: float,
    config: ApparatusConfig,
    sigma2: float,
    det: Optional[DetectorConfig] = None,
    trials: int = CALIBRATION_TRIALS,
    rng: Optional[RandomStreams] = None,
    xtol: float = 1e-6,
) -> float:
    """Dark-count probability per gate that yields the target raw error rate"""
    det = det or DetectorConfig()
    if not 0.0 <= target_raw_error <= 0.5:
        raise CalibrationError(f"Raw error target must lie in [0, 0.5], got {target_raw_error}")

    means, wrong = _sifted_click_means(config, det, sigma2, trials, rng or RandomStreams(0))
    floor = _raw_error(means, wrong, 0.0)

    if math.isclose(target_raw_error, floor, abs_tol=1e-12):
        return 0.0
    if target_raw_error < floor:
        raise CalibrationError(
            f"Raw error {target_raw_error:.4f} is below the dark-free floor {floor:.4f} "
            f"for {config.describe()} at sigma2={sigma2:g}"
        )
    if target_raw_error >= 0.5:
        return 1.0

    dark = bisect(lambda d: _raw_error(means, wrong, d) - target_raw_error, 0.0, 1.0, xtol=xtol)
    logger.info(
        f"Calibrated dark-count probability {dark:.6g} for raw error {target_raw_error:.3f} "
        f"(floor {floor:.4f}, {config.describe()}, sigma2={sigma2:g})"
    )
    return float(dark)
