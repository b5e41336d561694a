"""The plug-and-play network with an error-filtration interferometer.

Light path (forward, Bob to Alice):

    source -> C1 -> short arm ------------------> PBS(H) --+
                 -> long arm (1 bin, H->V) -----> PBS(V) --+-> [MZ stage]* -> line
    line -> Alice: phase modulator, channel noise, Faraday mirror

and back (Alice to Bob):

    line -> [MZ stage]* (reverse order) -> Bob's modulator -> PBS
         -> short arm / long arm (1 bin, V->H) -> C1 -> ports P1, P2

Each MZ stage splits at C2, delays the long arm by mz_delay_bins * 2**k
bins and recombines at C3; the second C3 (C2 on the way back) output is an
unconnected port whose light is counted as lost. Filtration with N pairs
uses log2(N) stages, and the central output bin collects the coherent sum
of all N replicas.

Output bins are labelled like the experiment's t'_k: label k is lattice
bin k + 1 at the detector, so the plain setup gates t'_0 and the two-stage
setup has outputs t'_0, t'_2, t'_4 with the filtered one in the middle.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from errfilt.errors import ConfigError, OpticsError
from errfilt.sim.elements import (
    CouplerSpec,
    PhaseSchedule,
    attenuator,
    coupler,
    delay,
    discard,
    faraday_mirror,
    is_odd_quarter_turn,
    pbs,
    phase_modulator,
    polarization_controller,
    route,
)
from errfilt.sim.noise import NoiseModel, NoiseSample, apply_noise, sample_phase_block
from errfilt.sim.state import (
    SINGLE_PHOTON,
    Coherent,
    FieldState,
    Mode,
    Polarization,
    Statistics,
    new_pulse,
    total_probability,
)
from errfilt.utils.rng import RandomStreams, run_blocks

logger = logging.getLogger(__name__)

# Fiber segments
C1_SHORT = "c1.short"
C1_LONG = "c1.long"
LINE = "line"
MZ_SHORT = "mz.short"
MZ_LONG = "mz.long"

C1_DELAY_BINS = 1

C1 = CouplerSpec(C1_SHORT, C1_LONG)
MZ = CouplerSpec(MZ_SHORT, MZ_LONG)


class Port(str, Enum):
    P1 = "P1"
    P2 = "P2"

    @classmethod
    def parse(cls, value: Union[str, "Port"]) -> "Port":
        try:
            return cls(str(value.value if isinstance(value, Port) else value).upper())
        except ValueError:
            raise OpticsError(f"Unknown detector port {value!r}; expected P1 or P2") from None


# C1 output fibers leading to each detector port
_PORT_PATHS = {Port.P1: C1_SHORT, Port.P2: C1_LONG}


@dataclass(frozen=True)
class ApparatusConfig:
    """Description of the optical network"""

    filtration: bool = True
    n_pairs: int = 2
    bin_spacing_ns: float = 60.0
    mz_delay_bins: int = 2
    source_mu: float = 0.8
    single_photon: bool = False
    fringe_factor: float = 1.0
    modulator_phase_error: float = 0.0
    channel_transmittance: float = 1.0

    def __post_init__(self):
        # without the interferometer there is exactly one bin pair
        if not self.filtration and self.n_pairs != 1:
            object.__setattr__(self, "n_pairs", 1)
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    def validate(self) -> List[str]:
        problems = []
        n = self.n_pairs
        if not isinstance(n, int) or n < 1:
            problems.append(f"apparatus.n_pairs must be a positive integer, got {n!r}")
        elif n & (n - 1):
            problems.append(f"apparatus.n_pairs must be a power of two (cascade of MZ stages), got {n}")
        if not isinstance(self.mz_delay_bins, int) or self.mz_delay_bins < 1:
            problems.append(f"apparatus.mz_delay_bins must be an integer >= 1, got {self.mz_delay_bins!r}")
        if not self.bin_spacing_ns > 0:
            problems.append(f"apparatus.bin_spacing_ns must be > 0, got {self.bin_spacing_ns}")
        if not self.source_mu >= 0:
            problems.append(f"apparatus.source_mu must be >= 0, got {self.source_mu}")
        if not 0.0 <= self.fringe_factor <= 1.0:
            problems.append(f"apparatus.fringe_factor must lie in [0, 1], got {self.fringe_factor}")
        if not math.isfinite(self.modulator_phase_error):
            problems.append("apparatus.modulator_phase_error must be finite")
        if not 0.0 <= self.channel_transmittance <= 1.0:
            problems.append(
                f"apparatus.channel_transmittance must lie in [0, 1], got {self.channel_transmittance}"
            )
        return problems

    def with_changes(self, **changes) -> "ApparatusConfig":
        return replace(self, **changes)

    @property
    def stages(self) -> int:
        return self.n_pairs.bit_length() - 1 if self.filtration else 0

    @property
    def statistics(self) -> Statistics:
        return SINGLE_PHOTON if self.single_photon else Coherent(self.source_mu)

    def stage_delays(self) -> List[int]:
        return [self.mz_delay_bins * 2**k for k in range(self.stages)]

    def replica_offsets(self) -> List[int]:
        """Bin offsets of the 2N-bin encoding's pair copies"""
        return [self.mz_delay_bins * j for j in range(self.n_pairs)]

    def channel_bins(self) -> List[int]:
        """Bins occupied on the channel; each needs a noise phase"""
        return sorted({o + k for o in self.replica_offsets() for k in (0, 1)})

    def alice_bins(self) -> List[int]:
        return sorted({o + 1 for o in self.replica_offsets()})

    def bob_bins(self) -> List[int]:
        return sorted({self.mz_delay_bins * m + 1 for m in range(2 * self.n_pairs - 1)})

    def output_gates(self) -> List[int]:
        return sorted({self.mz_delay_bins * m for m in range(2 * self.n_pairs - 1)})

    def bin_time_ns(self, time_bin: int) -> float:
        return time_bin * self.bin_spacing_ns

    def describe(self) -> str:
        name = f"filtered N={self.n_pairs}" if self.filtration else "unfiltered"
        return f"{name} ({self.statistics}, fringe factor {self.fringe_factor:g})"


# BB84 on the fringe: basis 0 = {0, pi}, basis 1 = {pi/2, 3pi/2}; P1 is bright
# when phi_a + phi_b = 0 (mod 2pi).

def alice_phase(basis, bit):
    return basis * (math.pi / 2) + bit * math.pi


def bob_phase(basis):
    return basis * (math.pi / 2)


# 0, pi/2, pi, 3pi/2
BB84_PHASES = tuple(alice_phase(basis, bit) for bit in (0, 1) for basis in (0, 1))


def decode_bit(port: Union[str, Port], bob_basis):
    """Bit Bob assigns to a click at port for his basis choice"""
    return bob_basis if Port.parse(port) is Port.P1 else 1 - bob_basis


def central_gate(config: ApparatusConfig) -> int:
    """Label of the output bin carrying the filtered state"""
    return config.mz_delay_bins * (config.n_pairs - 1)


def alice_schedule(config: ApparatusConfig, phi_a: float) -> PhaseSchedule:
    return PhaseSchedule.uniform(config.alice_bins(), phi_a, config.modulator_phase_error)


def bob_schedule(config: ApparatusConfig, phi_b: float) -> PhaseSchedule:
    return PhaseSchedule.uniform(config.bob_bins(), phi_b, config.modulator_phase_error)


@dataclass(frozen=True)
class RoundTripResult:
    """Detector-plane state of one round trip plus loss bookkeeping"""

    detector_state: FieldState
    pre_c1_state: FieldState
    bob_input_state: FieldState
    input_probability: float
    lost_probability: float
    fringe_factor: float = 1.0
    gates: Tuple[int, ...] = field(default_factory=tuple)

    def detected_probability(self) -> float:
        return total_probability(self.detector_state)

    def ungated_probability(self, gate_bin: int) -> float:
        """Probability reaching the detector outside the given gate"""
        lattice = gate_bin + C1_DELAY_BINS
        return sum(abs(a) ** 2 for m, a in self.detector_state.items() if m.time_bin != lattice)


# Network sections

def _mz_stage(s: FieldState, delay_bins: int) -> Tuple[FieldState, float]:
    s = route(s, LINE, MZ_SHORT)
    s = coupler(s, MZ)
    s = delay(s, MZ_LONG, delay_bins)
    s = coupler(s, MZ)
    s, dumped = discard(s, MZ_LONG)
    return route(s, MZ_SHORT, LINE), dumped


def _attenuate(s: FieldState, factor: float) -> Tuple[FieldState, float]:
    if factor == 1.0:
        return s, 0.0
    before = total_probability(s)
    s = attenuator(s, factor, LINE)
    return s, before - total_probability(s)


def forward_pass(config: ApparatusConfig) -> Tuple[FieldState, float]:
    """Source to Alice's station: the state entering her modulator and the light lost on the way"""
    s = new_pulse(0, Polarization.H, C1_SHORT, 1.0, config.statistics)
    s = coupler(s, C1)
    s = delay(s, C1_LONG, C1_DELAY_BINS)
    s = polarization_controller(s, C1_LONG)
    s = pbs(s, port_h=C1_SHORT, port_v=C1_LONG, port_out=LINE)

    lost = 0.0
    for delay_bins in config.stage_delays():
        s, dumped = _mz_stage(s, delay_bins)
        lost += dumped
    s, absorbed = _attenuate(s, config.channel_transmittance)
    return s, lost + absorbed


def return_pass(config: ApparatusConfig, s: FieldState, phi_b: float):
    """Alice's reflected state back to the detector

    Returns (bob_input_state, pre_c1_state, detector_state, lost).
    """
    s, lost = _attenuate(s, config.channel_transmittance)
    for delay_bins in reversed(config.stage_delays()):
        s, dumped = _mz_stage(s, delay_bins)
        lost += dumped
    bob_input = s

    s = phase_modulator(s, LINE, bob_schedule(config, phi_b))
    s = pbs(s, port_h=C1_SHORT, port_v=C1_LONG, port_out=LINE, reverse=True)
    s = polarization_controller(s, C1_LONG)
    s = delay(s, C1_LONG, C1_DELAY_BINS)
    pre_c1 = s

    s = coupler(s, C1)
    s = route(s, C1_SHORT, Port.P1.value)
    s = route(s, C1_LONG, Port.P2.value)
    return bob_input, pre_c1, s, lost


def propagate(config: ApparatusConfig, phi_a: float, phi_b: float, noise: NoiseSample) -> RoundTripResult:
    """Exact linear-optics round trip for one noise sample"""
    bins = config.channel_bins()
    if not noise.covers(bins):
        missing = sorted(set(bins) - set(noise.phases))
        raise OpticsError(f"Noise sample is missing channel bins {missing} for {config.describe()}")

    s, lost = forward_pass(config)
    s = phase_modulator(s, LINE, alice_schedule(config, phi_a))
    s = apply_noise(s, noise, LINE)
    s = faraday_mirror(s, LINE)
    bob_input, pre_c1, detector, lost_back = return_pass(config, s, phi_b)

    return RoundTripResult(
        detector_state=detector,
        pre_c1_state=pre_c1,
        bob_input_state=bob_input,
        input_probability=1.0,
        lost_probability=lost + lost_back,
        fringe_factor=config.fringe_factor,
        gates=tuple(config.output_gates()),
    )


def intensity(result: RoundTripResult, port: Union[str, Port], gate_bin: int) -> float:
    """Fraction of the source light in one gated output bin at one port

    A fringe factor f < 1 treats a fraction 1 - f of the light as
    distinguishable at C1, where it splits evenly between the ports.
    """
    port = Port.parse(port)
    lattice = gate_bin + C1_DELAY_BINS
    coherent = sum(
        abs(result.detector_state[Mode(lattice, pol, port.value)]) ** 2 for pol in Polarization
    )
    f = result.fringe_factor
    if f < 1.0:
        split = 0.5 * sum(
            abs(result.pre_c1_state[Mode(lattice, pol, path)]) ** 2
            for pol in Polarization
            for path in (C1_SHORT, C1_LONG)
        )
        coherent = f * coherent + (1.0 - f) * split
    return coherent / result.input_probability


# Vectorised Monte Carlo

class VisibilityEstimate(NamedTuple):
    visibility: float
    stderr: float


@dataclass
class _Response:
    """Linear map from Alice's channel modes to the detector for one phi_b"""

    coherent: Dict[Tuple[Port, int], np.ndarray]
    split: Dict[int, np.ndarray]


class Apparatus:
    """Transfer-matrix view of the network for blocks of trials

    The forward channel vector and the return-trip response are built once
    by pushing unit pulses through the same element functions that
    ``propagate`` uses; a trial then costs one small matrix product.
    """

    def __init__(self, config: ApparatusConfig):
        self.config = config
        self.logger = logging.getLogger(__name__)

        forward, self.forward_lost = forward_pass(config)
        self.channel_modes = list(forward)
        self.channel_amplitudes = forward.to_vector(self.channel_modes)
        self.noise_bins = config.channel_bins()

        index = {b: i for i, b in enumerate(self.noise_bins)}
        self._noise_columns = np.array([index[m.time_bin] for m in self.channel_modes])
        alice = set(config.alice_bins())
        self._alice_mask = np.array([m.time_bin in alice for m in self.channel_modes])
        self._responses: Dict[float, _Response] = {}

        self.logger.debug(
            f"Built apparatus {config.describe()}: {len(self.channel_modes)} channel modes, "
            f"forward survival {float(np.vdot(self.channel_amplitudes, self.channel_amplitudes).real):.6g}"
        )

    @property
    def gate(self) -> int:
        return central_gate(self.config)

    @property
    def channel_norm(self) -> float:
        return float(np.linalg.norm(self.channel_amplitudes))

    def _response(self, phi_b: float) -> _Response:
        key = float(phi_b)
        if key in self._responses:
            return self._responses[key]

        stats = self.config.statistics
        gates = self.config.output_gates()
        coherent = {(port, g): np.zeros((len(Polarization), len(self.channel_modes)), dtype=complex)
                    for port in Port for g in gates}
        split = {g: np.zeros((2 * len(Polarization), len(self.channel_modes)), dtype=complex) for g in gates}

        for col, mode in enumerate(self.channel_modes):
            unit = faraday_mirror(FieldState({mode: 1.0}, stats), LINE)
            _, pre_c1, detector, _ = return_pass(self.config, unit, key)
            for g in gates:
                lattice = g + C1_DELAY_BINS
                for row, pol in enumerate(Polarization):
                    for port in Port:
                        coherent[(port, g)][row, col] = detector[Mode(lattice, pol, port.value)]
                    split[g][2 * row, col] = pre_c1[Mode(lattice, pol, C1_SHORT)]
                    split[g][2 * row + 1, col] = pre_c1[Mode(lattice, pol, C1_LONG)]

        response = _Response(coherent, split)
        self._responses[key] = response
        return response

    def channel_vectors(self, phi_a: Union[float, np.ndarray], phases: np.ndarray) -> np.ndarray:
        """(trials, modes) amplitudes leaving Alice, before the mirror"""
        phases = np.atleast_2d(phases)
        phi_a = np.broadcast_to(np.asarray(phi_a, dtype=float), (phases.shape[0],))
        drive = np.where(self._alice_mask[None, :], phi_a[:, None], 0.0)
        error = self.config.modulator_phase_error
        if error:
            odd = np.array([is_odd_quarter_turn(p) for p in phi_a])
            drive = drive + np.where(self._alice_mask[None, :] & odd[:, None], error, 0.0)
        total = drive + phases[:, self._noise_columns]
        return self.channel_amplitudes[None, :] * np.exp(1j * total)

    def haar_vectors(self, rng: np.random.Generator, trials: int) -> np.ndarray:
        """Uniformly random pure states on the channel modes, scaled to the legitimate intensity"""
        raw = rng.normal(size=(trials, len(self.channel_modes))) + 1j * rng.normal(
            size=(trials, len(self.channel_modes))
        )
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        return raw * self.channel_norm

    def _gate_intensity_fixed(self, x: np.ndarray, phi_b: float, port: Port, gate: int) -> np.ndarray:
        response = self._response(phi_b)
        if (port, gate) not in response.coherent:
            raise OpticsError(f"Gate t'_{gate} is not an output bin of {self.config.describe()}")
        amps = x @ response.coherent[(port, gate)].T
        result = np.sum(np.abs(amps) ** 2, axis=1)
        f = self.config.fringe_factor
        if f < 1.0:
            arms = x @ response.split[gate].T
            result = f * result + (1.0 - f) * 0.5 * np.sum(np.abs(arms) ** 2, axis=1)
        return result

    def gate_intensity(self, x: np.ndarray, phi_b: Union[float, np.ndarray],
                       port: Union[str, Port] = Port.P1, gate: Optional[int] = None) -> np.ndarray:
        """Gated intensity per trial for channel vectors x

        ``phi_b`` may be a scalar or one value per trial.
        """
        port = Port.parse(port)
        gate = self.gate if gate is None else gate
        phi_b = np.asarray(phi_b, dtype=float)
        if phi_b.ndim == 0:
            return self._gate_intensity_fixed(x, float(phi_b), port, gate)

        out = np.empty(x.shape[0])
        for value in np.unique(phi_b):
            mask = phi_b == value
            out[mask] = self._gate_intensity_fixed(x[mask], float(value), port, gate)
        return out

    def gate_yield(self, x: np.ndarray, phi_b: Union[float, np.ndarray], gate: Optional[int] = None) -> np.ndarray:
        """Light in the gate summed over both ports"""
        return self.gate_intensity(x, phi_b, Port.P1, gate) + self.gate_intensity(x, phi_b, Port.P2, gate)


def _fringe_settings(averaged: bool, port: Port):
    """(phi_a, phi_b at the maximum, port) triples"""
    if not averaged:
        return [(0.0, 0.0 if port is Port.P1 else math.pi, port)]
    settings = []
    for phi_a in BB84_PHASES:
        for p in Port:
            phi_b = (-phi_a + (0.0 if p is Port.P1 else math.pi)) % (2 * math.pi)
            settings.append((phi_a, phi_b, p))
    return settings


def estimate_visibility(
    config: ApparatusConfig,
    sigma2: float,
    trials: int,
    rng: RandomStreams,
    workers: int = 1,
    averaged: bool = False,
    port: Union[str, Port] = Port.P1,
) -> VisibilityEstimate:
    """Monte Carlo fringe visibility (Imax - Imin) / (Imax + Imin) in the central bin

    Imax and Imin share each noise sample; the standard error comes from the
    delta method on the per-trial differences and sums. With ``averaged``
    the fringe extremes are averaged over all four BB84 phases of Alice and
    both ports.
    """
    if trials < 1:
        raise OpticsError(f"Trial count must be >= 1, got {trials}")
    apparatus = Apparatus(config)
    model = NoiseModel(sigma2)
    settings = _fringe_settings(averaged, Port.parse(port))
    streams = rng.child("visibility")

    def block(index: int, size: int):
        phases = sample_phase_block(model, apparatus.noise_bins, streams.block(index), size)
        diff = np.zeros(size)
        total = np.zeros(size)
        for phi_a, phi_b, p in settings:
            x = apparatus.channel_vectors(phi_a, phases)
            i_max = apparatus.gate_intensity(x, phi_b, p)
            i_min = apparatus.gate_intensity(x, (phi_b + math.pi) % (2 * math.pi), p)
            diff += i_max - i_min
            total += i_max + i_min
        diff /= len(settings)
        total /= len(settings)
        return np.array([size, diff.sum(), total.sum(), (diff**2).sum(), (total**2).sum(), (diff * total).sum()])

    sums = np.sum(run_blocks(block, trials, workers), axis=0)
    n, sd, ss, sdd, sss, sds = sums
    if ss <= 0:
        raise OpticsError(f"No light reaches the gate of {config.describe()}")
    v = sd / ss
    if n < 2:
        return VisibilityEstimate(float(v), float("nan"))
    g2 = max(sdd - 2 * v * sds + v * v * sss, 0.0)
    stderr = math.sqrt(g2 / (n * (n - 1))) / (ss / n)
    return VisibilityEstimate(float(v), float(stderr))


def fringe_scan(
    config: ApparatusConfig,
    sigma2: float,
    phases: Sequence[float],
    trials: int,
    rng: RandomStreams,
    workers: int = 1,
) -> List[float]:
    """Mean central-bin intensity at P1 for each total phase phi_a + phi_b"""
    apparatus = Apparatus(config)
    model = NoiseModel(sigma2)
    streams = rng.child("fringe")

    def block(index: int, size: int):
        noise = sample_phase_block(model, apparatus.noise_bins, streams.block(index), size)
        x = apparatus.channel_vectors(0.0, noise)
        return np.array([apparatus.gate_intensity(x, theta, Port.P1).sum() for theta in phases])

    return [float(v) for v in np.sum(run_blocks(block, trials, workers), axis=0) / trials]
