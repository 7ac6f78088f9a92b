"""Piecewise-constant evolution of one system qubit coupled to one bath qubit,
plus the classical time-dependent noise model.

The total propagator is built from exact eigendecomposition exponentials.
The error ``U(T) - U_0(T)`` is accumulated directly as a difference, with
each segment's ``exp(-i(H0+V)dt) - exp(-i H0 dt)`` taken from a block
triangular exponential, so errors far below machine epsilon relative to
``U`` remain resolvable.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad_vec, solve_ivp
from scipy.linalg import expm

from .pauli import PauliString
from .schedule import PulseSchedule, compile_pulses, switching_profile

__all__ = [
    "QuantumNoiseModel",
    "ClassicalNoiseModel",
    "EvolutionReport",
    "sample_model",
    "sample_classical_model",
    "evolve",
    "propagator_difference",
    "reduced_error",
    "haar_product_states",
    "plus_state",
    "first_magnus_norm",
    "evolve_classical",
    "trace_distance",
    "operator_norm",
]

log = logging.getLogger(__name__)

_PAULIS = [PauliString(c).to_matrix() for c in "XYZ"]
_AXES = tuple(PauliString(c) for c in "XYZ")


def operator_norm(a: np.ndarray) -> float:
    """Largest singular value."""
    return float(np.linalg.norm(a, 2))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.linalg.svd(rho - sigma, compute_uv=False)))


def _expmh(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i h t)`` for Hermitian ``h`` via unitary diagonalization."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


@dataclass
class QuantumNoiseModel:
    """System qubit(s) coupled to a single bath qubit.

    ``interaction`` pairs each system Pauli ``sigma_a`` with a Hermitian
    bath operator ``B_a``.
    """

    bath_hamiltonian: np.ndarray
    interaction: tuple[tuple[PauliString, np.ndarray], ...]
    J: float
    beta: float = 1.0
    system_hamiltonian: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.bath_hamiltonian = np.asarray(self.bath_hamiltonian, dtype=complex)
        self.interaction = tuple((PauliString(str(s)) if not isinstance(s, PauliString) else s,
                                  np.asarray(b, dtype=complex)) for s, b in self.interaction)
        n = self.n_system
        if self.system_hamiltonian is None:
            self.system_hamiltonian = np.zeros((2 ** n, 2 ** n), dtype=complex)
        for s, b in self.interaction:
            if s.n != n or b.shape != self.bath_hamiltonian.shape:
                raise ValueError("interaction term dimensions do not match the model")

    @property
    def n_system(self) -> int:
        return self.interaction[0][0].n if self.interaction else 1

    @property
    def d_system(self) -> int:
        return 2 ** self.n_system

    @property
    def d_bath(self) -> int:
        return self.bath_hamiltonian.shape[0]

    def h0(self) -> np.ndarray:
        return (np.kron(self.system_hamiltonian, np.eye(self.d_bath))
                + np.kron(np.eye(self.d_system), self.bath_hamiltonian))

    def h_sb(self) -> np.ndarray:
        out = np.zeros((self.d_system * self.d_bath,) * 2, dtype=complex)
        for s, b in self.interaction:
            out += np.kron(s.to_matrix(), b)
        return out

    def total(self) -> np.ndarray:
        return self.h0() + self.h_sb()

    def coupling_norm(self) -> float:
        return sum(operator_norm(b) for _, b in self.interaction)


def sample_model(seed: int, J: float) -> QuantumNoiseModel:
    """Random single-qubit model: ``H_B = sum c_a sigma_a`` and
    ``B_a = sum_mu c_{a,mu} sigma_mu`` with coefficients uniform in [0, 1].

    ``H_B`` is rescaled to unit operator norm and the couplings jointly so
    that ``sum_a ||B_a|| = J``; ``H_S = 0``.
    """
    if J < 0:
        raise ValueError("J must be non-negative")
    rng = np.random.default_rng(seed)
    while True:
        c = rng.uniform(0.0, 1.0, 3)
        cb = rng.uniform(0.0, 1.0, (3, 3))
        if np.any(c > 0) and np.any(cb > 0):
            break
    hb = np.einsum("a,aij->ij", c, _PAULIS)
    hb /= operator_norm(hb)
    bs = [np.einsum("m,mij->ij", cb[a], _PAULIS) for a in range(3)]
    total = sum(operator_norm(b) for b in bs)
    bs = [b * (J / total) for b in bs]
    return QuantumNoiseModel(hb, tuple(zip(_AXES, bs)), J, 1.0, None, seed)


@dataclass
class EvolutionReport:
    U: np.ndarray
    U0: np.ndarray
    error: float
    difference: np.ndarray
    trace_distances: Optional[list] = None
    omega1_norm: Optional[float] = None

    @property
    def unitarity_defect(self) -> float:
        d = self.U.shape[0]
        return operator_norm(self.U.conj().T @ self.U - np.eye(d))


def _segment_difference(h0: np.ndarray, v: np.ndarray, dt: float) -> np.ndarray:
    """``exp(-i(h0+v)dt) - exp(-i h0 dt)`` without cancellation.

    The top-right block of ``exp([[X+Y, Y], [0, X]])`` is
    ``exp(X+Y) - exp(X)``, and it stays accurate relative to ``||Y||``.
    """
    d = h0.shape[0]
    x = -1j * h0 * dt
    y = -1j * v * dt
    blk = np.zeros((2 * d, 2 * d), dtype=complex)
    blk[:d, :d] = x + y
    blk[:d, d:] = y
    blk[d:, d:] = x
    return expm(blk)[:d, d:]


def _check_dims(schedule: PulseSchedule, model: QuantumNoiseModel) -> None:
    if schedule.group.n != model.n_system:
        raise ValueError(
            f"schedule acts on {schedule.group.n} qubits, model has {model.n_system} system qubits"
        )


def _regime_guard(model: QuantumNoiseModel, T: float) -> None:
    if model.J * T >= np.pi:
        warnings.warn(f"J*T = {model.J * T:.3g} >= pi: outside Magnus convergence guarantee",
                      RuntimeWarning, stacklevel=3)


def propagator_difference(schedule: PulseSchedule, model: QuantumNoiseModel, T: float,
                          pulse_unitary: Optional[Callable[[PauliString], np.ndarray]] = None):
    """Return ``(A, D, Uc)``: ideal propagator, ``U - A``, and the control propagator.

    ``A`` interleaves the pulses with ``exp(-i H0 dt)``; when every pulse
    commutes with ``H0`` it equals ``U_c(T) exp(-i H0 T)`` exactly.
    """
    _check_dims(schedule, model)
    pulse_unitary = pulse_unitary or PauliString.to_matrix
    h0, v = model.h0(), model.h_sb()
    d = h0.shape[0]
    eye_b = np.eye(model.d_bath)
    pulses = compile_pulses(schedule)
    at_cut = {t: p for t, p in pulses}
    A = np.eye(d, dtype=complex)
    D = np.zeros((d, d), dtype=complex)
    Uc = np.eye(model.d_system, dtype=complex)
    b = schedule.boundaries
    for lo, hi in zip(b, b[1:]):
        dt = (hi - lo) * T
        a_seg = _expmh(h0, dt)
        e_seg = _segment_difference(h0, v, dt)
        D = a_seg @ D + e_seg @ (A + D)
        A = a_seg @ A
        if hi in at_cut:
            pm = pulse_unitary(at_cut[hi])
            Uc = pm @ Uc
            P = np.kron(pm, eye_b)
            A, D = P @ A, P @ D
    return A, D, Uc


def evolve(schedule: PulseSchedule, model: QuantumNoiseModel, T: float,
           pulse_unitary: Optional[Callable[[PauliString], np.ndarray]] = None) -> EvolutionReport:
    """Evolve under ideal instantaneous pulses and report ``||U(T) - U_0(T)||``.

    ``U_0(T) = U_c(T) exp(-i H0 T)``; the error is spectral-norm. The
    ``pulse_unitary`` hook allows alternative phase conventions for pulses.
    """
    _check_dims(schedule, model)
    _regime_guard(model, T)
    pulse_unitary = pulse_unitary or PauliString.to_matrix
    h = model.total()
    h0 = model.h0()
    eye_b = np.eye(model.d_bath)
    at_cut = dict(compile_pulses(schedule))
    U = np.eye(h.shape[0], dtype=complex)
    b = schedule.boundaries
    for lo, hi in zip(b, b[1:]):
        U = _expmh(h, (hi - lo) * T) @ U
        if hi in at_cut:
            U = np.kron(pulse_unitary(at_cut[hi]), eye_b) @ U
    A, D, Uc = propagator_difference(schedule, model, T, pulse_unitary)
    U0 = np.kron(Uc, eye_b) @ _expmh(h0, T)
    commuting = all(
        operator_norm(np.kron(pulse_unitary(p), eye_b) @ h0 - h0 @ np.kron(pulse_unitary(p), eye_b)) < 1e-14
        for _, p in compile_pulses(schedule)
    )
    diff = D if commuting else (A - U0) + D
    return EvolutionReport(U, U0, operator_norm(diff), diff)


def plus_state() -> np.ndarray:
    return np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)


def haar_product_states(count: int, seed: int, d_system: int = 2, d_bath: int = 2):
    """``count`` pairs of independent Haar-random pure states (system, bath)."""
    rng = np.random.default_rng(seed)

    def haar(d):
        z = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        return z / np.linalg.norm(z)

    return [(haar(d_system), haar(d_bath)) for _ in range(count)]


def _partial_trace_bath(rho: np.ndarray, ds: int, db: int) -> np.ndarray:
    return np.trace(rho.reshape(ds, db, ds, db), axis1=1, axis2=3)


def reduced_error(schedule: PulseSchedule, model: QuantumNoiseModel, T: float,
                  initial_states: Sequence) -> list[float]:
    """Trace distance between the reduced system state and its coupling-free ideal.

    Each initial state is a ``(system_vector, bath_vector)`` product pair.
    The ideal evolution is ``U_0``; the difference of reduced states is
    formed from ``U - U_0`` directly.
    """
    _check_dims(schedule, model)
    _regime_guard(model, T)
    A, D, Uc = propagator_difference(schedule, model, T)
    h0 = model.h0()
    eye_b = np.eye(model.d_bath)
    U0 = np.kron(Uc, eye_b) @ _expmh(h0, T)
    commuting = all(
        operator_norm(np.kron(p.to_matrix(), eye_b) @ h0 - h0 @ np.kron(p.to_matrix(), eye_b)) < 1e-14
        for _, p in compile_pulses(schedule)
    )
    ref = A if commuting else U0
    diff = D if commuting else (A - U0) + D
    ds, db = model.d_system, model.d_bath
    out = []
    for psi_s, psi_b in initial_states:
        psi_s = np.asarray(psi_s, dtype=complex)
        psi_b = np.asarray(psi_b, dtype=complex)
        for v in (psi_s, psi_b):
            if abs(np.linalg.norm(v) - 1.0) > 1e-10:
                raise ValueError("initial states must be normalized")
        psi = np.kron(psi_s, psi_b)
        ideal = ref @ psi
        dpsi = diff @ psi
        # (ideal + dpsi)(ideal + dpsi)^+ - ideal ideal^+
        drho = np.outer(dpsi, ideal.conj()) + np.outer(ideal, dpsi.conj()) + np.outer(dpsi, dpsi.conj())
        red = _partial_trace_bath(drho, ds, db)
        out.append(0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(red)))))
    return out


def first_magnus_norm(schedule: PulseSchedule, model: QuantumNoiseModel, T: float,
                      epsrel: float = 1e-12) -> float:
    """``||Omega_1(T)||`` by adaptive quadrature of the toggling-frame integrand.

    ``Omega_1 = -i sum_a int_0^T y_a(t) e^{i H0 t} (sigma_a x B_a) e^{-i H0 t} dt``,
    integrated segment by segment.
    """
    _check_dims(schedule, model)
    h0 = model.h0()
    w, vecs = np.linalg.eigh(h0)
    eye_b = np.eye(model.d_bath)
    axes = [s for s, _ in model.interaction]
    terms = [vecs.conj().T @ np.kron(s.to_matrix(), b) @ vecs for s, b in model.interaction]
    prof = switching_profile(schedule, axes, strict=False)
    total = np.zeros_like(h0)
    b = schedule.boundaries * T
    for l, (lo, hi) in enumerate(zip(b, b[1:])):
        op = sum(int(prof.signs[a, l]) * terms[a] for a in range(len(terms)))
        if not np.any(op):
            continue

        def integrand(t, op=op):
            ph = np.exp(1j * w * t)
            return (ph[:, None] * op * ph.conj()[None, :]).ravel()

        val, err, info = quad_vec(integrand, lo, hi, epsabs=0.0, epsrel=epsrel, full_output=True)
        if not info.success:
            raise RuntimeError(f"quadrature did not converge on segment {l}: {info.message}")
        total += val.reshape(h0.shape)
    omega1 = -1j * vecs @ total @ vecs.conj().T
    return operator_norm(omega1)


@dataclass
class ClassicalNoiseModel:
    """``beta_a(t) = A_a cos(omega_a t + phi_a)`` on each Pauli axis of one qubit."""

    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    cutoff: Optional[float] = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.phases = np.asarray(self.phases, dtype=float)
        if self.cutoff is None:
            self.cutoff = float(np.max(np.abs(self.frequencies)))
        if np.any(np.abs(self.frequencies) > self.cutoff * (1 + 1e-12)):
            raise ValueError("noise frequency above the declared cutoff")

    def coefficients(self, t: float) -> np.ndarray:
        return self.amplitudes * np.cos(self.frequencies * t + self.phases)

    def beta_max(self, T: float, samples: int = 4001) -> float:
        """``sup_{t in [0,T]} sum_a |beta_a(t)|`` on a dense grid."""
        t = np.linspace(0.0, T, samples)
        vals = np.abs(self.amplitudes[:, None] * np.cos(self.frequencies[:, None] * t + self.phases[:, None]))
        return float(vals.sum(axis=0).max())

    def derivative_bound(self, K: int) -> float:
        """``max_a |A_a| |omega_a|^K``, the sup of the K-th derivative of each component."""
        return float(np.max(np.abs(self.amplitudes) * np.abs(self.frequencies) ** K))


def sample_classical_model(seed: int, beta_max: float, cutoff: float) -> ClassicalNoiseModel:
    """Random amplitudes, phases and frequencies up to ``cutoff``; ``sum |A_a| = beta_max``."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, 1.0, 3)
    a *= beta_max / a.sum()
    return ClassicalNoiseModel(a, rng.uniform(0.0, cutoff, 3), rng.uniform(0.0, 2 * np.pi, 3), cutoff)


def evolve_classical(schedule: PulseSchedule, model: ClassicalNoiseModel, T: float,
                     rtol: float = 1e-12) -> float:
    """``||U~(T) - I||`` for the toggling-frame Hamiltonian ``sum_a y_a beta_a(t) sigma_a``.

    Integrates ``dW/dt = -i H~(t)(I + W)`` for ``W = U~ - I`` with an
    adaptive 8th-order Runge-Kutta scheme, one call per segment.
    """
    if schedule.group.n != 1:
        raise ValueError("classical noise model is single-qubit")
    prof = switching_profile(schedule, _AXES, strict=False)
    scale = max(float(np.sum(np.abs(model.amplitudes))), 1e-300) * T
    atol = rtol * scale * 1e-6
    eye = np.eye(2, dtype=complex)
    W = np.zeros((2, 2), dtype=complex)
    b = schedule.boundaries * T

    for l, (lo, hi) in enumerate(zip(b, b[1:])):
        s = prof.signs[:, l].astype(float)

        def rhs(t, y, s=s):
            w = (y[:4] + 1j * y[4:]).reshape(2, 2)
            h = np.einsum("a,aij->ij", s * model.coefficients(t), _PAULIS)
            dw = (-1j * h @ (eye + w)).ravel()
            return np.concatenate((dw.real, dw.imag))

        y0 = np.concatenate((W.ravel().real, W.ravel().imag))
        sol = solve_ivp(rhs, (lo, hi), y0, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(f"integrator failed on segment {l}: {sol.message}")
        W = (sol.y[:4, -1] + 1j * sol.y[4:, -1]).reshape(2, 2)
    return operator_norm(W)
