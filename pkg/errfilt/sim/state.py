"""Mode-indexed complex amplitudes for time-bin pulses.

A FieldState is a sparse map from optical modes (time bin, polarization,
fiber path) to complex amplitudes. Time lives on a lattice of bin spacing
Delta, so interference only happens between pulses sharing a bin, a
polarization and a path. Amplitudes are not renormalized after lossy
elements: the loss shows up as a total probability below one.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from errfilt.errors import OpticsError

PRUNE_THRESHOLD = 1e-15
NORM_TOLERANCE = 1e-12


class Polarization(str, Enum):
    """Linear polarization label"""

    H = "H"
    V = "V"

    def complement(self) -> "Polarization":
        return Polarization.V if self is Polarization.H else Polarization.H


@dataclass(frozen=True, order=True)
class Mode:
    """A single optical mode: (time bin, polarization, spatial path)"""

    time_bin: int
    pol: Polarization
    path: str

    def moved(self, time_bin: Optional[int] = None, pol: Optional[Polarization] = None,
              path: Optional[str] = None) -> "Mode":
        """Return a copy with some labels replaced"""
        return Mode(
            self.time_bin if time_bin is None else time_bin,
            self.pol if pol is None else pol,
            self.path if path is None else path,
        )


@dataclass(frozen=True)
class SinglePhoton:
    """Fock-state source: amplitudes are single-photon probability amplitudes"""

    def __str__(self):
        return "single-photon"


@dataclass(frozen=True)
class Coherent:
    """Attenuated laser pulse with mean photon number mu at the source"""

    mu: float

    def __post_init__(self):
        if not self.mu >= 0 or not np.isfinite(self.mu):
            raise OpticsError(f"Mean photon number must be finite and >= 0, got {self.mu}")

    def __str__(self):
        return f"coherent(mu={self.mu:g})"


Statistics = Union[SinglePhoton, Coherent]
SINGLE_PHOTON = SinglePhoton()


class FieldState:
    """Immutable sparse map Mode -> complex amplitude with a statistics tag"""

    __slots__ = ("_amplitudes", "_statistics")

    def __init__(
        self,
        amplitudes: Optional[Mapping[Mode, complex]] = None,
        statistics: Statistics = SINGLE_PHOTON,
        prune: bool = True,
    ):
        cleaned = {}
        for mode, amp in (amplitudes or {}).items():
            if mode.time_bin < 0:
                raise OpticsError(f"Negative time bin in mode {mode}")
            amp = complex(amp)
            if prune and abs(amp) < PRUNE_THRESHOLD:
                continue
            cleaned[mode] = amp

        self._amplitudes = cleaned
        self._statistics = statistics

        if isinstance(statistics, SinglePhoton):
            norm = sum(abs(a) ** 2 for a in cleaned.values())
            if norm > 1 + NORM_TOLERANCE:
                raise OpticsError(f"Single-photon state has total probability {norm:.15g} > 1")

    # Mapping-style access
    @property
    def amplitudes(self) -> Mapping[Mode, complex]:
        return MappingProxyType(self._amplitudes)

    @property
    def statistics(self) -> Statistics:
        return self._statistics

    def __getitem__(self, mode: Mode) -> complex:
        return self._amplitudes.get(mode, 0j)

    def __iter__(self) -> Iterator[Mode]:
        return iter(sorted(self._amplitudes))

    def __len__(self) -> int:
        return len(self._amplitudes)

    def items(self):
        return sorted(self._amplitudes.items())

    def paths(self) -> set:
        return {mode.path for mode in self._amplitudes}

    def bins(self, path: Optional[str] = None) -> list:
        return sorted({m.time_bin for m in self._amplitudes if path is None or m.path == path})

    # Linear structure
    def _check_compatible(self, other: "FieldState"):
        if self._statistics != other._statistics:
            raise OpticsError(
                f"Statistics mismatch: {self._statistics} vs {other._statistics}"
            )

    def __add__(self, other: "FieldState") -> "FieldState":
        if not isinstance(other, FieldState):
            return NotImplemented
        self._check_compatible(other)
        merged = dict(self._amplitudes)
        for mode, amp in other._amplitudes.items():
            merged[mode] = merged.get(mode, 0j) + amp
        return FieldState(merged, self._statistics)

    def __mul__(self, scalar: complex) -> "FieldState":
        return FieldState(
            {mode: scalar * amp for mode, amp in self._amplitudes.items()}, self._statistics
        )

    __rmul__ = __mul__

    def with_amplitudes(self, amplitudes: Mapping[Mode, complex]) -> "FieldState":
        """New state with the same statistics tag"""
        return FieldState(amplitudes, self._statistics)

    def pruned(self, threshold: float = PRUNE_THRESHOLD) -> "FieldState":
        return FieldState(
            {m: a for m, a in self._amplitudes.items() if abs(a) >= threshold},
            self._statistics,
        )

    # Dense conversion, used by transfer-matrix builders and oracles
    def to_vector(self, modes: Sequence[Mode]) -> np.ndarray:
        return np.array([self[m] for m in modes], dtype=complex)

    @classmethod
    def from_vector(cls, modes: Sequence[Mode], vector: Iterable[complex],
                    statistics: Statistics = SINGLE_PHOTON) -> "FieldState":
        return cls(dict(zip(modes, vector)), statistics)

    def isclose(self, other: "FieldState", atol: float = 1e-12) -> bool:
        modes = set(self._amplitudes) | set(other._amplitudes)
        return all(abs(self[m] - other[m]) <= atol for m in modes)

    def __repr__(self):
        terms = ", ".join(
            f"t{m.time_bin}{m.pol.value}@{m.path}: {a:.4g}" for m, a in self.items()
        )
        return f"FieldState({self._statistics}; {terms})"


def new_pulse(time_bin: int, pol: Polarization, path: str, amp: complex = 1.0,
              statistics: Statistics = SINGLE_PHOTON) -> FieldState:
    """Create a state holding one pulse"""
    if time_bin < 0:
        raise OpticsError(f"Pulse time bin must be >= 0, got {time_bin}")
    if isinstance(statistics, SinglePhoton) and abs(amp) > 1 + NORM_TOLERANCE:
        raise OpticsError(f"Single-photon amplitude must satisfy |amp| <= 1, got {amp}")
    return FieldState({Mode(time_bin, Polarization(pol), path): amp}, statistics, prune=False)


def coherent(mu: float) -> Coherent:
    return Coherent(mu)


def total_probability(s: FieldState) -> float:
    """Sum of |a|^2 over all modes"""
    return float(sum(abs(a) ** 2 for a in s.amplitudes.values()))


def project_window(s: FieldState, bins: Iterable[int], path: str) -> FieldState:
    """Post-select the modes in the given time bins on one path, without renormalizing"""
    wanted = set(bins)
    return s.with_amplitudes(
        {m: a for m, a in s.amplitudes.items() if m.time_bin in wanted and m.path == path}
    )


def overlap(a: FieldState, b: FieldState) -> complex:
    """Inner product <a|b>"""
    if a.statistics != b.statistics:
        raise OpticsError(f"Cannot overlap {a.statistics} with {b.statistics}")
    # fixed summation order keeps overlap(a, b) == conj(overlap(b, a)) bit for bit
    shared = sorted(set(a.amplitudes) & set(b.amplitudes))
    return complex(sum((a[m].conjugate() * b[m] for m in shared), 0j))


def phase_factor(phase: float) -> complex:
    return cmath.exp(1j * phase)
