"""Gaussian phase noise and its closed-form predictions.

Each time bin leaving Alice's station picks up an independent phase drawn
from an unwrapped N(0, sigma2). Averaged over the noise, a d-dimensional
encoded state becomes exp(-sigma2)|psi><psi| + (1 - exp(-sigma2)) 1/d, which
fixes the fringe visibilities used as oracles throughout the test suite.
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from errfilt.errors import OpticsError
from errfilt.sim.elements import PhaseSchedule, phase_modulator
from errfilt.sim.state import FieldState


def _check_sigma2(sigma2: float) -> float:
    sigma2 = float(sigma2)
    if not sigma2 >= 0 or math.isinf(sigma2):
        raise OpticsError(f"Noise variance must be finite and >= 0, got {sigma2}")
    return sigma2


@dataclass(frozen=True)
class NoiseModel:
    """Independent Gaussian phase per time bin with variance sigma2 (rad^2)"""

    sigma2: float = 0.0

    def __post_init__(self):
        _check_sigma2(self.sigma2)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def validate(self) -> list:
        return [] if self.sigma2 >= 0 else [f"noise.sigma2 must be >= 0, got {self.sigma2}"]


@dataclass(frozen=True)
class NoiseSample:
    """One draw of channel phases, keyed by time bin"""

    phases: Mapping[int, float] = field(default_factory=dict)

    @classmethod
    def zero(cls, bins: Iterable[int]) -> "NoiseSample":
        return cls({b: 0.0 for b in bins})

    @classmethod
    def from_row(cls, bins: Sequence[int], row: Sequence[float]) -> "NoiseSample":
        return cls({int(b): float(p) for b, p in zip(bins, row)})

    def schedule(self) -> PhaseSchedule:
        return PhaseSchedule(dict(self.phases))

    def shifted(self, offset: float) -> "NoiseSample":
        return NoiseSample({b: p + offset for b, p in self.phases.items()})

    def covers(self, bins: Iterable[int]) -> bool:
        return set(bins) <= set(self.phases)


def sample_phase_block(model: NoiseModel, bins: Sequence[int], rng: np.random.Generator,
                       trials: int) -> np.ndarray:
    """Draw a (trials, len(bins)) array of i.i.d. N(0, sigma2) phases"""
    shape = (int(trials), len(bins))
    if model.sigma2 == 0:
        return np.zeros(shape)
    return rng.normal(0.0, model.sigma, size=shape)


def sample_phases(model: NoiseModel, bins: Iterable[int], rng: np.random.Generator) -> NoiseSample:
    """One independent Gaussian phase per bin"""
    ordered = sorted(set(bins))
    return NoiseSample.from_row(ordered, sample_phase_block(model, ordered, rng, 1)[0])


def apply_noise(s: FieldState, sample: NoiseSample, path: str) -> FieldState:
    return phase_modulator(s, path, sample.schedule())


# Closed forms

def mixing_coefficient(sigma2: float) -> float:
    """Weight exp(-sigma2) of the undisturbed state in the dephased mixture"""
    return math.exp(-_check_sigma2(sigma2))


def visibility_unfiltered(sigma2: float) -> float:
    return mixing_coefficient(sigma2)


def ber_unfiltered(sigma2: float) -> float:
    return (1.0 - mixing_coefficient(sigma2)) / 2.0


def visibility_filtered(n_pairs: int, sigma2: float) -> float:
    """Central-bin visibility N / (N - 1 + exp(sigma2)) for a 2N-bin encoding"""
    if int(n_pairs) != n_pairs or n_pairs < 1:
        raise OpticsError(f"Number of bin pairs must be a positive integer, got {n_pairs}")
    sigma2 = _check_sigma2(sigma2)
    if sigma2 > 700:
        return 0.0
    return n_pairs / (n_pairs - 1 + math.exp(sigma2))


def ber_filtered(n_pairs: int, sigma2: float) -> float:
    return ber_from_visibility(visibility_filtered(n_pairs, sigma2))


def ber_from_visibility(visibility: float) -> float:
    return (1.0 - visibility) / 2.0


def visibility_from_ber(ber: float) -> float:
    return 1.0 - 2.0 * ber


def sigma2_for_visibility(visibility: float) -> float:
    """Noise variance at which the unfiltered visibility equals the target"""
    if not 0.0 < visibility <= 1.0:
        raise OpticsError(f"Visibility must lie in (0, 1], got {visibility}")
    return -math.log(visibility)


def dephased_density_matrix(psi: np.ndarray, sigma2: float) -> np.ndarray:
    """exp(-sigma2)|psi><psi| + (1 - exp(-sigma2)) 1/d for a normalized psi"""
    psi = np.asarray(psi, dtype=complex)
    weight = mixing_coefficient(sigma2)
    dim = psi.size
    return weight * np.outer(psi, psi.conj()) + (1.0 - weight) * np.eye(dim) / dim
