"""BB84 sessions over the simulated apparatus.

Alice picks a basis and a bit, Bob picks a basis, one detector watches one
output port in the central gate. Sifting keeps clicked rounds with matching
bases; the mismatch fraction of the sifted key is the bit error rate, and
the three-zone classifier turns it into a security verdict.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.stats import norm

from errfilt.errors import ConfigError, EstimationError
from errfilt.sim.apparatus import (
    BB84_PHASES,
    Apparatus,
    ApparatusConfig,
    Port,
    alice_phase,
    bob_phase,
    decode_bit,
)
from errfilt.sim.detection import DetectorConfig, click_probability, sample_click
from errfilt.sim.noise import (
    NoiseModel,
    ber_filtered,
    ber_unfiltered,
    sample_phase_block,
    visibility_from_ber,
)
from errfilt.utils.rng import RandomStreams, run_blocks

logger = logging.getLogger(__name__)

BER_SECURE = 0.110
BER_INSECURE = 0.146
V_SECURE = 0.780
V_INSECURE = 0.707

CONFIDENCE = 0.95


class SecurityVerdict(str, Enum):
    SECURE = "Secure"
    UNKNOWN = "Unknown"
    INSECURE = "Insecure"

    @classmethod
    def classify(cls, ber: float) -> "SecurityVerdict":
        """Secure below 11.0%, Insecure from 14.6% on, Unknown in between"""
        if not 0.0 <= ber <= 0.5:
            raise EstimationError(f"Bit error rate must lie in [0, 0.5], got {ber}")
        if ber < BER_SECURE:
            return cls.SECURE
        if ber >= BER_INSECURE:
            return cls.INSECURE
        return cls.UNKNOWN

    @classmethod
    def classify_visibility(cls, visibility: float) -> "SecurityVerdict":
        if not 0.0 <= visibility <= 1.0:
            raise EstimationError(f"Visibility must lie in [0, 1], got {visibility}")
        if visibility > V_SECURE:
            return cls.SECURE
        if visibility <= V_INSECURE:
            return cls.INSECURE
        return cls.UNKNOWN


def classify(ber: float) -> SecurityVerdict:
    return SecurityVerdict.classify(ber)


def classify_visibility(visibility: float) -> SecurityVerdict:
    return SecurityVerdict.classify_visibility(visibility)


@dataclass(frozen=True)
class EveModel:
    """Random-replacement eavesdropper: with probability p_replace she keeps
    the pulse and forwards a Haar-random state of the same intensity."""

    p_replace: float = 0.0

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    def validate(self) -> List[str]:
        if not 0.0 <= self.p_replace <= 1.0:
            return [f"eve.p_replace must lie in [0, 1], got {self.p_replace}"]
        return []

    @property
    def active(self) -> bool:
        return self.p_replace > 0

    @property
    def strategy(self) -> str:
        return f"RandomReplacement(p={self.p_replace:g})" if self.active else "None"

    @classmethod
    def none(cls) -> "EveModel":
        return cls(0.0)

    @classmethod
    def random_replacement(cls, p_replace: float) -> "EveModel":
        return cls(p_replace)


@dataclass(frozen=True)
class RoundRecord:
    alice_basis: int
    alice_bit: int
    bob_basis: int
    monitored_port: Port
    clicked: bool
    replaced: bool = False

    def __post_init__(self):
        for name in ("alice_basis", "alice_bit", "bob_basis"):
            if getattr(self, name) not in (0, 1):
                raise EstimationError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")
        object.__setattr__(self, "monitored_port", Port.parse(self.monitored_port))

    @property
    def phi_a(self) -> float:
        return alice_phase(self.alice_basis, self.alice_bit)

    @property
    def phi_b(self) -> float:
        return bob_phase(self.bob_basis)

    @property
    def matched(self) -> bool:
        return self.alice_basis == self.bob_basis


@dataclass
class RoundLog:
    """Columnar record of a session; iterating yields RoundRecord values"""

    alice_basis: np.ndarray
    alice_bit: np.ndarray
    bob_basis: np.ndarray
    clicked: np.ndarray
    monitored_port: Port = Port.P1
    replaced: np.ndarray = field(default=None)
    intensity: np.ndarray = field(default=None)

    def __post_init__(self):
        self.alice_basis = np.asarray(self.alice_basis, dtype=np.int8)
        self.alice_bit = np.asarray(self.alice_bit, dtype=np.int8)
        self.bob_basis = np.asarray(self.bob_basis, dtype=np.int8)
        self.clicked = np.asarray(self.clicked, dtype=bool)
        self.monitored_port = Port.parse(self.monitored_port)
        n = self.clicked.size
        if self.replaced is None:
            self.replaced = np.zeros(n, dtype=bool)
        if self.intensity is None:
            self.intensity = np.full(n, np.nan)
        self.replaced = np.asarray(self.replaced, dtype=bool)
        self.intensity = np.asarray(self.intensity, dtype=float)

        sizes = {a.size for a in (self.alice_basis, self.alice_bit, self.bob_basis, self.replaced, self.intensity)}
        if sizes != {n}:
            raise EstimationError(f"Round log columns have mismatched lengths: {sorted(sizes | {n})}")

    def __len__(self):
        return int(self.clicked.size)

    def __getitem__(self, index: int) -> RoundRecord:
        return RoundRecord(
            int(self.alice_basis[index]),
            int(self.alice_bit[index]),
            int(self.bob_basis[index]),
            self.monitored_port,
            bool(self.clicked[index]),
            bool(self.replaced[index]),
        )

    def __iter__(self) -> Iterator[RoundRecord]:
        return (self[i] for i in range(len(self)))

    @property
    def phi_a(self) -> np.ndarray:
        return alice_phase(self.alice_basis, self.alice_bit)

    @property
    def matched(self) -> np.ndarray:
        return self.alice_basis == self.bob_basis

    @classmethod
    def from_records(cls, records: Iterable[RoundRecord]) -> "RoundLog":
        records = list(records)
        ports = {r.monitored_port for r in records}
        if len(ports) > 1:
            raise EstimationError("A round log monitors a single port; got records for both")
        return cls(
            [r.alice_basis for r in records],
            [r.alice_bit for r in records],
            [r.bob_basis for r in records],
            [r.clicked for r in records],
            ports.pop() if ports else Port.P1,
            [r.replaced for r in records],
        )

    @classmethod
    def concat(cls, logs: List["RoundLog"]) -> "RoundLog":
        if not logs:
            raise EstimationError("Nothing to concatenate")
        return cls(
            np.concatenate([l.alice_basis for l in logs]),
            np.concatenate([l.alice_bit for l in logs]),
            np.concatenate([l.bob_basis for l in logs]),
            np.concatenate([l.clicked for l in logs]),
            logs[0].monitored_port,
            np.concatenate([l.replaced for l in logs]),
            np.concatenate([l.intensity for l in logs]),
        )


def run_session(
    apparatus_cfg: ApparatusConfig,
    noise: NoiseModel,
    det: DetectorConfig,
    eve: Optional[EveModel] = None,
    rounds: int = 100_000,
    rng: Optional[RandomStreams] = None,
    workers: int = 1,
) -> RoundLog:
    """Simulate a BB84 session round by round, one block of rounds at a time

    Choices, noise and clicks come from the "session" substreams and Eve's
    coins and states from the "eve" substreams, so switching Eve off leaves
    every other draw unchanged.
    """
    eve = eve or EveModel.none()
    rng = rng or RandomStreams(0)
    if rounds < 1:
        raise EstimationError(f"Round count must be >= 1, got {rounds}")

    apparatus = Apparatus(apparatus_cfg)
    gate = apparatus.gate if det.gate_bin is None else det.gate_bin
    session_streams = rng.child("session")
    eve_streams = rng.child("eve")

    def block(index: int, size: int) -> RoundLog:
        gen = session_streams.block(index)
        a_basis = gen.integers(0, 2, size)
        a_bit = gen.integers(0, 2, size)
        b_basis = gen.integers(0, 2, size)
        phases = sample_phase_block(noise, apparatus.noise_bins, gen, size)

        x = apparatus.channel_vectors(alice_phase(a_basis, a_bit), phases)
        replaced = np.zeros(size, dtype=bool)
        if eve.active:
            eve_gen = eve_streams.block(index)
            replaced = eve_gen.random(size) < eve.p_replace
            x = np.where(replaced[:, None], apparatus.haar_vectors(eve_gen, size), x)

        level = apparatus.gate_intensity(x, bob_phase(b_basis), det.port, gate)
        p = click_probability(level, apparatus_cfg.source_mu, det, apparatus_cfg.single_photon)
        clicked = sample_click(p, gen)
        return RoundLog(a_basis, a_bit, b_basis, clicked, det.port, replaced, level)

    log = RoundLog.concat(run_blocks(block, rounds, workers))
    logger.debug(
        f"Session on {apparatus_cfg.describe()}: {len(log)} rounds, {int(log.clicked.sum())} clicks, "
        f"eve {eve.strategy}"
    )
    return log


def sift(records: Union[RoundLog, Iterable[RoundRecord]]) -> np.ndarray:
    """(alice_bit, bob_bit) rows for clicked rounds with matching bases"""
    log = records if isinstance(records, RoundLog) else RoundLog.from_records(records)
    keep = log.clicked & log.matched
    bob_bits = decode_bit(log.monitored_port, log.bob_basis[keep].astype(int))
    return np.column_stack([log.alice_bit[keep].astype(int), np.asarray(bob_bits, dtype=int)])


class BerEstimate(NamedTuple):
    ber: float
    ci95: float
    low: float
    high: float
    n: int


def wilson_interval(errors: int, n: int, confidence: float = CONFIDENCE) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion"""
    z = norm.ppf(0.5 + confidence / 2)
    p = errors / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def estimate_ber(sifted) -> BerEstimate:
    """Mismatch fraction of the sifted key with its 95% Wilson half-width"""
    pairs = np.asarray(sifted, dtype=int).reshape(-1, 2)
    n = int(pairs.shape[0])
    if n == 0:
        raise EstimationError("Cannot estimate a bit error rate from an empty sifted key")
    errors = int(np.count_nonzero(pairs[:, 0] != pairs[:, 1]))
    low, high = wilson_interval(errors, n)
    return BerEstimate(errors / n, (high - low) / 2, low, high, n)


@dataclass(frozen=True)
class SessionSummary:
    rounds: int
    clicks: int
    sifted: int
    errors: int
    ber: float
    ci95: float
    verdict: Optional[SecurityVerdict]

    @property
    def click_rate(self) -> float:
        return self.clicks / self.rounds if self.rounds else 0.0

    @property
    def visibility(self) -> float:
        return visibility_from_ber(self.ber) if self.sifted else float("nan")


def session_summary(log: RoundLog) -> SessionSummary:
    pairs = sift(log)
    clicks = int(log.clicked.sum())
    if len(pairs) == 0:
        return SessionSummary(len(log), clicks, 0, 0, float("nan"), float("nan"), None)
    estimate = estimate_ber(pairs)
    errors = int(np.count_nonzero(pairs[:, 0] != pairs[:, 1]))
    return SessionSummary(
        len(log), clicks, estimate.n, errors, estimate.ber, estimate.ci95, classify(estimate.ber)
    )


# Eavesdropper comparison

class DetectionStat(NamedTuple):
    mean: float
    stderr: float


@dataclass(frozen=True)
class EveReport:
    sigma2: float
    n_pairs: int
    p_replace: float
    trials: int
    ber_with_eve: float
    yield_legit: float
    yield_replaced: float
    detection: Dict[Tuple[float, float, Port], DetectionStat] = field(default_factory=dict)

    @property
    def yield_ratio(self) -> float:
        if math.isnan(self.yield_legit) or math.isnan(self.yield_replaced) or self.yield_legit == 0:
            return float("nan")
        return self.yield_replaced / self.yield_legit

    @property
    def visibility_with_eve(self) -> float:
        return visibility_from_ber(self.ber_with_eve)


def _eve_settings():
    return [(phi_a, bob_phase(b), port) for phi_a in BB84_PHASES for b in (0, 1) for port in Port]


def eve_replacement_analysis(
    apparatus_cfg: ApparatusConfig,
    sigma2: float,
    p_replace: float,
    trials: int,
    rng: RandomStreams,
    workers: int = 1,
) -> EveReport:
    """Expected detection statistics when Eve replaces a fraction of the pulses

    Every trial draws one channel-noise sample, one replacement coin and one
    Haar-random state, then evaluates the central-gate intensity for all four
    phases of Alice, both phases of Bob and both ports. The error rate is the
    wrong-port share of the matched-basis light, the yield the light reaching
    the gate at either port.
    """
    eve = EveModel.random_replacement(p_replace)
    if trials < 1:
        raise EstimationError(f"Trial count must be >= 1, got {trials}")
    apparatus = Apparatus(apparatus_cfg)
    model = NoiseModel(sigma2)
    settings = _eve_settings()
    streams = rng.child("eve-analysis")

    def block(index: int, size: int):
        gen = streams.block(index)
        phases = sample_phase_block(model, apparatus.noise_bins, gen, size)
        replaced = gen.random(size) < eve.p_replace
        haar = apparatus.haar_vectors(gen, size)

        levels = np.empty((len(settings), size))
        for phi_a in BB84_PHASES:
            x = np.where(replaced[:, None], haar, apparatus.channel_vectors(phi_a, phases))
            for k, (a, phi_b, port) in enumerate(settings):
                if a == phi_a:
                    levels[k] = apparatus.gate_intensity(x, phi_b, port)
        per_trial_yield = levels.sum(axis=0) / (len(BB84_PHASES) * 2)
        return (
            levels.sum(axis=1),
            (levels**2).sum(axis=1),
            np.array([per_trial_yield[~replaced].sum(), np.count_nonzero(~replaced),
                      per_trial_yield[replaced].sum(), np.count_nonzero(replaced)]),
        )

    results = run_blocks(block, trials, workers)
    sums = np.sum([r[0] for r in results], axis=0)
    squares = np.sum([r[1] for r in results], axis=0)
    legit_sum, legit_n, replaced_sum, replaced_n = np.sum([r[2] for r in results], axis=0)

    means = sums / trials
    if trials > 1:
        variances = np.maximum(squares - trials * means**2, 0.0) / (trials - 1)
        stderrs = np.sqrt(variances / trials)
    else:
        stderrs = np.full(len(settings), np.nan)
    detection = {s: DetectionStat(float(m), float(e)) for s, m, e in zip(settings, means, stderrs)}

    wrong = right = 0.0
    for basis in (0, 1):
        for bit in (0, 1):
            for port in Port:
                level = detection[(alice_phase(basis, bit), bob_phase(basis), port)].mean
                if decode_bit(port, basis) == bit:
                    right += level
                else:
                    wrong += level
    ber = wrong / (wrong + right) if wrong + right > 0 else 0.5

    report = EveReport(
        sigma2=float(sigma2),
        n_pairs=apparatus_cfg.n_pairs,
        p_replace=float(p_replace),
        trials=int(trials),
        ber_with_eve=float(ber),
        yield_legit=float(legit_sum / legit_n) if legit_n else float("nan"),
        yield_replaced=float(replaced_sum / replaced_n) if replaced_n else float("nan"),
        detection=detection,
    )
    logger.info(
        f"Eve analysis {apparatus_cfg.describe()} sigma2={sigma2:g} p={p_replace:g}: "
        f"BER {report.ber_with_eve:.4f}, yield ratio {report.yield_ratio:.4f}"
    )
    return report


def expected_ber(n_pairs: int, sigma2: float, filtration: bool = True) -> float:
    """Closed-form sifted error rate of the ideal apparatus without dark counts"""
    return ber_filtered(n_pairs, sigma2) if filtration else ber_unfiltered(sigma2)
