import cmath
import math

import numpy as np
import pytest

from errfilt.errors import OpticsError
from errfilt.sim.state import (
    SINGLE_PHOTON,
    Coherent,
    FieldState,
    Mode,
    Polarization,
    new_pulse,
    overlap,
    project_window,
    total_probability,
)

H, V = Polarization.H, Polarization.V


def random_state(gen, n_modes=6, scale=0.3):
    modes = [Mode(b, pol, path) for b in range(3) for pol in (H, V) for path in ("a",)][:n_modes]
    amps = scale * (gen.normal(size=len(modes)) + 1j * gen.normal(size=len(modes)))
    amps /= max(1.0, np.linalg.norm(amps))
    return FieldState(dict(zip(modes, amps)))


class TestPolarization:
    def test_complement_is_involution(self):
        for pol in Polarization:
            assert pol.complement() is not pol
            assert pol.complement().complement() is pol

    def test_exactly_two_values(self):
        assert {p.value for p in Polarization} == {"H", "V"}


class TestNewPulse:
    def test_unit_single_photon(self):
        s = new_pulse(0, H, "src", 1 + 0j, SINGLE_PHOTON)
        assert len(s) == 1
        assert total_probability(s) == pytest.approx(1.0)

    def test_half_amplitude(self):
        s = new_pulse(0, H, "src", 0.5 + 0j)
        assert total_probability(s) == pytest.approx(0.25)

    def test_coherent_records_mu(self):
        s = new_pulse(0, H, "src", 1 + 0j, Coherent(0.8))
        assert s.statistics.mu == 0.8

    def test_negative_bin_rejected(self):
        with pytest.raises(OpticsError, match="time bin"):
            new_pulse(-1, H, "src")

    def test_negative_mu_rejected(self):
        with pytest.raises(OpticsError, match="Mean photon number"):
            new_pulse(0, H, "src", 1.0, Coherent(-0.1))

    def test_single_photon_amplitude_above_one_rejected(self):
        with pytest.raises(OpticsError, match="amp"):
            new_pulse(0, H, "src", 1.5)

    def test_coherent_amplitude_is_not_bounded(self):
        s = new_pulse(0, H, "src", 2.0, Coherent(0.8))
        assert total_probability(s) == pytest.approx(4.0)


class TestFieldState:
    def test_empty_state_has_zero_probability(self):
        assert total_probability(FieldState()) == 0

    def test_unitary_pair(self):
        s = FieldState({Mode(0, H, "a"): 1 / math.sqrt(2), Mode(0, H, "b"): 1j / math.sqrt(2)})
        assert total_probability(s) == pytest.approx(1.0, abs=1e-15)

    def test_missing_mode_reads_zero(self):
        assert new_pulse(0, H, "a")[Mode(1, H, "a")] == 0j

    def test_pruning_drops_tiny_amplitudes(self):
        s = FieldState({Mode(0, H, "a"): 1.0, Mode(1, H, "a"): 1e-17})
        assert len(s) == 1
        assert abs(total_probability(s) - 1.0) < 1e-12

    def test_pruning_does_not_change_probability(self, gen):
        s = random_state(gen)
        noisy = dict(s.amplitudes)
        noisy.update({Mode(9, H, "a"): 1e-16, Mode(9, V, "a"): 5e-16j})
        unpruned = FieldState(noisy, prune=False)
        assert abs(total_probability(unpruned.pruned()) - total_probability(unpruned)) < 1e-12

    def test_single_photon_norm_bound(self):
        with pytest.raises(OpticsError, match="total probability"):
            FieldState({Mode(0, H, "a"): 0.8, Mode(0, V, "a"): 0.8})

    def test_negative_bin_rejected(self):
        with pytest.raises(OpticsError):
            FieldState({Mode(-2, H, "a"): 0.1})

    def test_iteration_is_sorted(self):
        s = FieldState({Mode(2, H, "a"): 0.1, Mode(0, V, "a"): 0.1, Mode(0, H, "a"): 0.1})
        assert [m.time_bin for m in s] == [0, 0, 2]

    def test_addition_and_scaling(self):
        a = new_pulse(0, H, "a", 0.5)
        b = new_pulse(0, H, "a", 0.25)
        assert (a + b)[Mode(0, H, "a")] == pytest.approx(0.75)
        assert (2 * b)[Mode(0, H, "a")] == pytest.approx(0.5)

    def test_addition_needs_same_statistics(self):
        with pytest.raises(OpticsError, match="Statistics mismatch"):
            new_pulse(0, H, "a", 0.5) + new_pulse(0, H, "a", 0.5, Coherent(1.0))

    def test_vector_round_trip(self, gen):
        s = random_state(gen)
        modes = list(s)
        assert FieldState.from_vector(modes, s.to_vector(modes)).isclose(s)

    def test_bins_and_paths(self):
        s = FieldState({Mode(0, H, "a"): 0.5, Mode(3, V, "b"): 0.5})
        assert s.paths() == {"a", "b"}
        assert s.bins() == [0, 3]
        assert s.bins("b") == [3]


class TestProjectWindow:
    def test_full_support_is_identity(self, gen):
        s = random_state(gen)
        assert project_window(s, s.bins(), "a").isclose(s)

    def test_disjoint_bins_give_vacuum(self, gen):
        s = random_state(gen)
        projected = project_window(s, {7, 8}, "a")
        assert len(projected) == 0
        assert total_probability(projected) == 0

    def test_other_path_is_dropped(self):
        s = FieldState({Mode(0, H, "a"): 0.6, Mode(0, H, "b"): 0.8})
        assert total_probability(project_window(s, {0}, "a")) == pytest.approx(0.36)

    def test_amplitudes_not_renormalized(self):
        s = FieldState({Mode(0, H, "a"): 0.6, Mode(1, H, "a"): 0.8j})
        assert project_window(s, {1}, "a")[Mode(1, H, "a")] == 0.8j


class TestOverlap:
    def test_self_overlap_is_probability(self, gen):
        s = random_state(gen)
        assert overlap(s, s).real == pytest.approx(total_probability(s), abs=1e-15)
        assert overlap(s, s).imag == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_modes(self):
        assert overlap(new_pulse(0, H, "a"), new_pulse(0, V, "a")) == 0

    def test_normalized_time_bin_qubit(self):
        phi_a = 0.7
        s = FieldState({Mode(0, H, "line"): 1 / math.sqrt(2), Mode(1, V, "line"): -cmath.exp(1j * phi_a) / math.sqrt(2)})
        assert overlap(s, s) == pytest.approx(1.0)

    def test_conjugate_symmetry_is_exact(self, gen):
        for _ in range(20):
            a, b = random_state(gen), random_state(gen)
            assert overlap(a, b) == overlap(b, a).conjugate()

    def test_statistics_must_match(self):
        with pytest.raises(OpticsError, match="Cannot overlap"):
            overlap(new_pulse(0, H, "a"), new_pulse(0, H, "a", 1.0, Coherent(0.8)))
