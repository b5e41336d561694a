"""Optical elements of the plug-and-play network.

Every element is a pure linear map FieldState -> FieldState. Reflection at a
coupler or a polarizing beamsplitter picks up a factor i relative to
transmission, so two reflections give the -1 in front of the late pulse.
Couplers act in place on a pair of path labels: the labels name the input
ports before the call and the output ports after it.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Tuple

import numpy as np

from errfilt.errors import OpticsError
from errfilt.sim.state import FieldState, Mode, Polarization, phase_factor, total_probability

HALF_PI = math.pi / 2


@dataclass(frozen=True)
class CouplerSpec:
    """A lossless 2x2 fiber coupler acting on two path labels"""

    port_a: str
    port_b: str
    transmittance: float = 0.5

    def __post_init__(self):
        if self.port_a == self.port_b:
            raise OpticsError(f"Coupler ports must differ, got {self.port_a!r} twice")
        if not 0.0 <= self.transmittance <= 1.0:
            raise OpticsError(f"Coupler transmittance must lie in [0, 1], got {self.transmittance}")

    def matrix(self) -> np.ndarray:
        t = math.sqrt(self.transmittance)
        r = 1j * math.sqrt(1.0 - self.transmittance)
        return np.array([[t, r], [r, t]], dtype=complex)


@dataclass(frozen=True)
class PhaseSchedule:
    """Phases (radians) applied per time bin; unlisted bins get 0

    ``error`` is a systematic extra phase on every bin programmed to an odd
    multiple of pi/2, the setting that needs a drive voltage on the
    polarization-sensitive modulator.
    """

    phases: Mapping[int, float] = field(default_factory=dict)
    error: float = 0.0

    def __post_init__(self):
        for time_bin, phase in self.phases.items():
            if not math.isfinite(phase):
                raise OpticsError(f"Phase for bin {time_bin} is not finite: {phase}")

    def phase(self, time_bin: int) -> float:
        base = self.phases.get(time_bin, 0.0)
        if self.error and is_odd_quarter_turn(base):
            return base + self.error
        return base

    def negated(self) -> "PhaseSchedule":
        return PhaseSchedule({b: -p for b, p in self.phases.items()}, -self.error)

    @classmethod
    def uniform(cls, bins: Iterable[int], phase: float, error: float = 0.0) -> "PhaseSchedule":
        return cls({b: phase for b in bins}, error)


def is_odd_quarter_turn(phase: float) -> bool:
    """True when phase is an odd multiple of pi/2"""
    turns = phase / HALF_PI
    nearest = round(turns)
    return abs(turns - nearest) < 1e-9 and nearest % 2 == 1


def _remap(s: FieldState, fn: Callable[[Mode, complex], Iterable[Tuple[Mode, complex]]]) -> FieldState:
    out = defaultdict(complex)
    for mode, amp in s.amplitudes.items():
        for new_mode, new_amp in fn(mode, amp):
            out[new_mode] += new_amp
    return s.with_amplitudes(out)


def coupler(s: FieldState, spec: CouplerSpec) -> FieldState:
    """Mix the amplitude pairs on (port_a, port_b) for every (bin, pol)"""
    m = spec.matrix()
    out = defaultdict(complex)
    pairs = defaultdict(lambda: [0j, 0j])

    for mode, amp in s.amplitudes.items():
        if mode.path == spec.port_a:
            pairs[(mode.time_bin, mode.pol)][0] += amp
        elif mode.path == spec.port_b:
            pairs[(mode.time_bin, mode.pol)][1] += amp
        else:
            out[mode] += amp

    for (time_bin, pol), (a_in, b_in) in pairs.items():
        out[Mode(time_bin, pol, spec.port_a)] += m[0, 0] * a_in + m[0, 1] * b_in
        out[Mode(time_bin, pol, spec.port_b)] += m[1, 0] * a_in + m[1, 1] * b_in

    return s.with_amplitudes(out)


def pbs(s: FieldState, port_h: str, port_v: str, port_out: str, reverse: bool = False) -> FieldState:
    """Polarizing beamsplitter: H is transmitted, V is reflected (factor i)

    Forward, H light on port_h and V light on port_v merge onto port_out.
    With ``reverse`` the element is traversed backward and port_out is split
    by polarization onto port_h and port_v.
    """
    if len({port_h, port_v, port_out}) != 3:
        raise OpticsError(f"PBS ports must be distinct: {port_h}, {port_v}, {port_out}")

    def forward(mode: Mode, amp: complex):
        if mode.path == port_h:
            if mode.pol is not Polarization.H:
                raise OpticsError(f"V-polarized light on the PBS H port: {mode}")
            yield mode.moved(path=port_out), amp
        elif mode.path == port_v:
            if mode.pol is not Polarization.V:
                raise OpticsError(f"H-polarized light on the PBS V port: {mode}")
            yield mode.moved(path=port_out), 1j * amp
        else:
            yield mode, amp

    def backward(mode: Mode, amp: complex):
        if mode.path != port_out:
            yield mode, amp
        elif mode.pol is Polarization.H:
            yield mode.moved(path=port_h), amp
        else:
            yield mode.moved(path=port_v), 1j * amp

    return _remap(s, backward if reverse else forward)


def delay(s: FieldState, path: str, bins: int) -> FieldState:
    """Shift every pulse on path later by a whole number of bins"""
    if bins < 0:
        raise OpticsError(f"Delay must be non-negative, got {bins}")
    if bins == 0:
        return s
    return _remap(
        s,
        lambda mode, amp: [(mode.moved(time_bin=mode.time_bin + bins) if mode.path == path else mode, amp)],
    )


def phase_modulator(s: FieldState, path: str, sched: PhaseSchedule) -> FieldState:
    """Multiply each mode on path by exp(i * sched(bin))"""
    def apply(mode: Mode, amp: complex):
        if mode.path == path:
            phase = sched.phase(mode.time_bin)
            if phase:
                amp = amp * phase_factor(phase)
        yield mode, amp

    return _remap(s, apply)


def _swap_polarization(s: FieldState, path: str) -> FieldState:
    return _remap(
        s,
        lambda mode, amp: [(mode.moved(pol=mode.pol.complement()) if mode.path == path else mode, amp)],
    )


def faraday_mirror(s: FieldState, path: str) -> FieldState:
    """Reflect the pulses on path with H and V interchanged"""
    return _swap_polarization(s, path)


def polarization_controller(s: FieldState, path: str) -> FieldState:
    """Pre-aligned controller rotating H <-> V on one arm"""
    return _swap_polarization(s, path)


def attenuator(s: FieldState, factor: float, path: Optional[str] = None) -> FieldState:
    """Scale probabilities by factor (amplitudes by its square root)"""
    if not 0.0 <= factor <= 1.0:
        raise OpticsError(f"Attenuation factor must lie in [0, 1], got {factor}")
    if factor == 1.0:
        return s
    scale = math.sqrt(factor)
    return _remap(
        s, lambda mode, amp: [(mode, amp * scale if path is None or mode.path == path else amp)]
    )


def route(s: FieldState, src: str, dst: str) -> FieldState:
    """Ideal fiber link or circulator: move everything on src to dst"""
    if src == dst:
        return s
    if dst in s.paths():
        raise OpticsError(f"Cannot route {src!r} onto occupied path {dst!r}")
    return _remap(s, lambda mode, amp: [(mode.moved(path=dst) if mode.path == src else mode, amp)])


def discard(s: FieldState, path: str) -> Tuple[FieldState, float]:
    """Drop the light leaving an unconnected port and report how much was lost"""
    kept = s.with_amplitudes({m: a for m, a in s.amplitudes.items() if m.path != path})
    lost = s.with_amplitudes({m: a for m, a in s.amplitudes.items() if m.path == path})
    return kept, total_probability(lost)
