import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from momentdd.dynamics import (
    ClassicalNoiseModel,
    QuantumNoiseModel,
    evolve,
    evolve_classical,
    first_magnus_norm,
    haar_product_states,
    operator_norm,
    plus_state,
    reduced_error,
    sample_classical_model,
    sample_model,
    trace_distance,
)
from momentdd.generators import qdd_schedule, table_s1_schedule, xy4_schedule
from momentdd.pauli import SINGLE_QUBIT_GROUP, DecouplingGroup, PauliString
from momentdd.schedule import PulseSchedule

from oracles import integrate_schrodinger

NO_PULSES = PulseSchedule((), (0,), SINGLE_QUBIT_GROUP)


def random_schedule(rng):
    kind = rng.integers(3)
    if kind == 0:
        return table_s1_schedule(int(rng.integers(1, 9)))
    if kind == 1:
        return qdd_schedule(int(rng.integers(1, 4)))
    L = int(rng.integers(1, 10))
    cuts = np.sort(rng.uniform(0.02, 0.98, L))
    labels = [0]
    for _ in range(L):
        labels.append(int(rng.choice([g for g in range(4) if g != labels[-1]])))
    return PulseSchedule(tuple(cuts), tuple(labels), SINGLE_QUBIT_GROUP)


class TestModel:
    def test_reproducible(self):
        a, b = sample_model(5, 1e-3), sample_model(5, 1e-3)
        assert np.array_equal(a.bath_hamiltonian, b.bath_hamiltonian)
        assert all(np.array_equal(x[1], y[1]) for x, y in zip(a.interaction, b.interaction))

    @pytest.mark.parametrize("seed", range(5))
    def test_normalization(self, seed):
        J = 10.0 ** -(seed + 1)
        m = sample_model(seed, J)
        assert abs(operator_norm(m.bath_hamiltonian) - 1.0) <= 1e-12
        assert abs(m.coupling_norm() - J) <= 1e-12 * J
        assert np.allclose(m.total(), m.total().conj().T)

    def test_negative_coupling(self):
        with pytest.raises(ValueError):
            sample_model(0, -1.0)

    def test_dimension_mismatch(self):
        m = sample_model(0, 1e-3)
        g = DecouplingGroup.from_strings(["II", "XX", "YY", "ZZ"])
        with pytest.raises(ValueError):
            evolve(PulseSchedule((0.5,), (0, 1), g), m, 1.0)


class TestEvolve:
    def test_zero_coupling(self, rng):
        m = sample_model(1, 0.0)
        for _ in range(5):
            assert evolve(random_schedule(rng), m, float(rng.uniform(0.1, 5))).error <= 1e-13

    def test_oracle(self, rng):
        """Propagator agrees with an adaptive integrator on 50 random instances."""
        worst = 0.0
        for i in range(50):
            sched = random_schedule(rng)
            m = sample_model(int(rng.integers(1 << 30)), float(10 ** rng.uniform(-3, 0)))
            T = float(rng.uniform(0.05, 1.0))
            rep = evolve(sched, m, T)
            U = integrate_schrodinger(sched, m, T)
            worst = max(worst, operator_norm(rep.U - U),
                        abs(rep.error - operator_norm(U - rep.U0)))
        assert worst <= 1e-10

    def test_free_evolution_bound(self):
        m = sample_model(2, 1e-3)
        for T in (1e-3, 1e-2):
            rep = evolve(NO_PULSES, m, T)
            U = integrate_schrodinger(NO_PULSES, m, T)
            assert rep.error <= 2 * m.J * T
            assert abs(rep.error - operator_norm(U - rep.U0)) <= 1e-10

    def test_unitary(self, rng):
        for _ in range(10):
            rep = evolve(random_schedule(rng), sample_model(int(rng.integers(100)), 0.5), 2.0)
            assert rep.unitarity_defect <= 1e-12
            assert 0.0 <= rep.error <= 2.0

    def test_reference_is_free_bath_evolution(self):
        m = sample_model(3, 1e-3)
        rep = evolve(table_s1_schedule(2), m, 0.7)
        ref = np.kron(np.eye(2), expm(-1j * m.bath_hamiltonian * 0.7))
        # closure makes U_c(T) a phase times identity
        phase = rep.U0[0, 0] / ref[0, 0]
        assert abs(abs(phase) - 1) < 1e-12 and np.allclose(rep.U0, phase * ref)

    def test_phase_convention_invariance(self):
        m = sample_model(4, 1e-2)
        s = table_s1_schedule(3)
        a = evolve(s, m, 0.5).error
        b = evolve(s, m, 0.5, pulse_unitary=lambda p: 1j * p.to_matrix()).error
        c = evolve(s, m, 0.5, pulse_unitary=lambda p: np.exp(0.3j) * p.to_matrix()).error
        assert a == pytest.approx(b, rel=1e-12) and a == pytest.approx(c, rel=1e-12)

    def test_xy4_self_scaling(self):
        m = sample_model(0, 1e-3)
        s = xy4_schedule()
        r = evolve(s, m, 0.2).error / evolve(s, m, 0.1).error
        assert r == pytest.approx(4.0, rel=0.2)

    @pytest.mark.parametrize("K", [2, 3, 4])
    def test_order_scaling(self, K):
        m = sample_model(0, 1e-5)
        s = table_s1_schedule(K)
        r = evolve(s, m, 0.4).error / evolve(s, m, 0.2).error
        assert r == pytest.approx(2 ** (K + 1), rel=0.2)

    def test_resolves_tiny_errors(self):
        # J^2 T^2 regime: 1e-10 * 1e-12 far below machine epsilon relative to U
        m = sample_model(0, 1e-5)
        s = table_s1_schedule(3)
        e1, e2 = evolve(s, m, 1e-6).error, evolve(s, m, 2e-6).error
        assert 0 < e1 < 1e-20
        assert e2 / e1 == pytest.approx(4.0, rel=0.05)

    def test_regime_warning(self):
        m = sample_model(0, 1.0)
        with pytest.warns(RuntimeWarning):
            evolve(xy4_schedule(), m, 4.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            evolve(xy4_schedule(), m, 1.0)


class TestReducedError:
    def test_zero_coupling(self):
        m = sample_model(0, 0.0)
        d = reduced_error(table_s1_schedule(2), m, 1.0, haar_product_states(10, 0))
        assert max(d) <= 1e-14

    def test_bounds(self):
        m = sample_model(0, 0.8)
        d = reduced_error(random_schedule(np.random.default_rng(0)), m, 3.0, haar_product_states(50, 1))
        assert all(0.0 <= x <= 1.0 for x in d)

    def test_matches_dense(self, rng):
        for _ in range(10):
            s = random_schedule(rng)
            m = sample_model(int(rng.integers(1000)), 0.3)
            T = float(rng.uniform(0.1, 1.0))
            states = haar_product_states(5, int(rng.integers(1000)))
            rep = evolve(s, m, T)
            got = reduced_error(s, m, T, states)
            for (a, b), x in zip(states, got):
                psi = np.kron(a, b)
                r1 = np.outer(rep.U @ psi, (rep.U @ psi).conj()).reshape(2, 2, 2, 2).trace(axis1=1, axis2=3)
                r0 = np.outer(rep.U0 @ psi, (rep.U0 @ psi).conj()).reshape(2, 2, 2, 2).trace(axis1=1, axis2=3)
                assert x == pytest.approx(trace_distance(r1, r0), abs=1e-12)

    def test_unnormalized(self):
        with pytest.raises(ValueError):
            reduced_error(xy4_schedule(), sample_model(0, 1e-3), 1.0, [(np.array([1.0, 1.0]), plus_state())])

    def test_haar_reproducible(self):
        a, b = haar_product_states(3, 9), haar_product_states(3, 9)
        assert all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) for x, y in zip(a, b))


class TestFirstMagnus:
    def test_zero_coupling(self):
        assert first_magnus_norm(table_s1_schedule(2), sample_model(0, 0.0), 1.0) == 0.0

    def test_constant_integrand(self):
        m = sample_model(0, 1e-2)
        m0 = QuantumNoiseModel(np.zeros((2, 2)), m.interaction, m.J)
        assert first_magnus_norm(NO_PULSES, m0, 0.7) == pytest.approx(operator_norm(m0.h_sb()) * 0.7, rel=1e-12)

    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_self_scaling(self, K):
        m = sample_model(1, 1e-3)
        s = table_s1_schedule(K)
        r = first_magnus_norm(s, m, 0.1) / first_magnus_norm(s, m, 0.05)
        assert r == pytest.approx(2 ** (K + 1), rel=0.1)


class TestClassical:
    def test_zero_amplitude(self):
        m = ClassicalNoiseModel(np.zeros(3), np.ones(3), np.zeros(3))
        assert evolve_classical(table_s1_schedule(2), m, 1.0) == 0.0

    def test_static_matches_quantum(self, rng):
        for _ in range(5):
            a = rng.uniform(0, 0.1, 3)
            ph = rng.uniform(0, 2 * np.pi, 3)
            cm = ClassicalNoiseModel(a, np.zeros(3), ph)
            coeff = a * np.cos(ph)
            qm = QuantumNoiseModel(np.zeros((2, 2)),
                                   tuple((PauliString(c), x * np.eye(2)) for c, x in zip("XYZ", coeff)),
                                   float(np.abs(coeff).sum()))
            s = random_schedule(rng)
            T = float(rng.uniform(0.1, 2.0))
            assert evolve_classical(s, cm, T) == pytest.approx(evolve(s, qm, T).error, abs=1e-10)

    def test_cutoff_validation(self):
        with pytest.raises(ValueError):
            ClassicalNoiseModel(np.ones(3), [1.0, 2.0, 5.0], np.zeros(3), cutoff=2.0)

    def test_sampled_model(self):
        m = sample_classical_model(0, 1e-5, 30.0)
        assert np.isclose(np.abs(m.amplitudes).sum(), 1e-5)
        assert m.beta_max(1.0) <= 1e-5 + 1e-18
        assert m.derivative_bound(3) <= 1e-5 * 30.0 ** 3

    @pytest.mark.parametrize("K", [2, 3])
    def test_self_scaling(self, K):
        m = sample_classical_model(3, 1e-5, 30.0)
        s = table_s1_schedule(K)
        r = evolve_classical(s, m, 0.01) / evolve_classical(s, m, 0.005)
        assert r == pytest.approx(2 ** (K + 1), rel=0.2)

    def test_single_qubit_only(self):
        g = DecouplingGroup.from_strings(["II", "XX", "YY", "ZZ"])
        with pytest.raises(ValueError):
            evolve_classical(PulseSchedule((0.5,), (0, 1), g), sample_classical_model(0, 1e-3, 1.0), 1.0)
