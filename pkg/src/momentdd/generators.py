"""Schedule generators: moment-cancelling least squares, group traversals,
and the reference sequences (XY4, UDD, QDD).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .pauli import (
    SINGLE_QUBIT_GROUP,
    DecouplingGroup,
    PauliString,
    _coerce,
    _sign_matrix,
    pauli_product,
    sign_character,
)
from .schedule import PulseSchedule, ScheduleError, compile_pulses, verify_order

__all__ = [
    "OptimizerConfig",
    "OptimizationResult",
    "softmax_map",
    "residual_vector",
    "traversal_pattern",
    "default_generators",
    "default_axes",
    "optimize_schedule",
    "udd_times",
    "udd_schedule",
    "qdd_schedule",
    "xy4_schedule",
    "table_s1",
    "table_s1_intervals",
    "table_s1_schedule",
    "COLLAPSE_THRESHOLD",
]

log = logging.getLogger(__name__)

COLLAPSE_THRESHOLD = 1e-12


def softmax_map(theta) -> np.ndarray:
    """Map an unconstrained vector onto the open simplex (max-shifted for overflow)."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    e = np.exp(theta - theta.max())
    return e / e.sum()


def default_axes(n: int) -> tuple[PauliString, ...]:
    """All weight-one Paulis on ``n`` qubits (general 1-local noise)."""
    return tuple(
        PauliString("I" * q + c + "I" * (n - q - 1)) for q in range(n) for c in "XYZ"
    )


def _generator_key(p: PauliString):
    rank = {"I": 0, "X": 1, "Z": 2, "Y": 3}
    return (p.weight, [rank[c] for c in p.axes])


def default_generators(group: DecouplingGroup) -> tuple[PauliString, ...]:
    """Cyclic Gray-code generator sequence over a basis of ``group``.

    The basis is picked greedily, preferring low weight and X before Z
    before Y, so the single-qubit group gets the alternating X, Z pattern.
    """
    basis: list[PauliString] = []
    span = {PauliString.identity(group.n)}
    for g in sorted(group.elements[1:], key=_generator_key):
        if g not in span:
            basis.append(g)
            span |= {pauli_product(g, s) for s in span}
    if len(span) != len(group):
        raise ValueError("group order is not a power of two")
    k = len(basis)
    if k == 0:
        return ()
    # bit flipped between consecutive cyclic Gray codes i-1 -> i
    seq = []
    for i in range(1, 2 ** k + 1):
        i_mod = i % (2 ** k)
        g_prev, g_cur = (i - 1) ^ ((i - 1) >> 1), i_mod ^ (i_mod >> 1)
        seq.append(basis[(g_prev ^ g_cur).bit_length() - 1])
    return tuple(seq)


def traversal_pattern(group: DecouplingGroup, segments: int, generators: Optional[Sequence] = None) -> list[int]:
    """Frame labels obtained by applying ``generators`` cyclically from the identity.

    One pass over the generators must visit every group element exactly
    once and come back to the identity.
    """
    if segments < 1:
        raise ValueError("need at least one segment")
    gens = tuple(map(_coerce, generators)) if generators is not None else default_generators(group)
    if not gens:
        raise ValueError("trivial group has no traversal")
    period = len(group)
    frame = group[0]
    seen = [0]
    for i in range(period):
        frame = pauli_product(gens[i % len(gens)], frame)
        seen.append(group.index(frame))
    if sorted(seen[:-1]) != list(range(period)) or seen[-1] != 0:
        raise ValueError(
            f"generators {[g.axes for g in gens]} do not cycle through the group "
            f"(visited {seen})"
        )
    labels = [0]
    frame = group[0]
    for i in range(1, segments):
        frame = pauli_product(gens[(i - 1) % len(gens)], frame)
        labels.append(group.index(frame))
    return labels


def _residuals_from_signs(intervals: np.ndarray, signs: np.ndarray, K: int) -> np.ndarray:
    t = np.concatenate(([0.0], np.cumsum(intervals)))
    t /= t[-1]
    diffs = np.diff(t[None, :] ** np.arange(1, K + 1)[:, None], axis=1)
    return (signs @ diffs.T).ravel()


def residual_vector(intervals, pattern=None, group: DecouplingGroup = SINGLE_QUBIT_GROUP,
                    axes: Optional[Sequence] = None, K: int = 1) -> np.ndarray:
    """Unscaled moment residuals ``r[a*K + m]`` for the traversal ``pattern``.

    ``pattern`` is the generator sequence (default: X, Z alternation for
    the single-qubit group). Entries are ordered axis-major.
    """
    iv = np.asarray(intervals, dtype=float)
    axes = tuple(map(_coerce, axes)) if axes is not None else default_axes(group.n)
    labels = traversal_pattern(group, len(iv), pattern)
    signs = _sign_matrix(group, axes)[:, labels].astype(float)
    return _residuals_from_signs(iv, signs, K)


@dataclass
class OptimizerConfig:
    K: int
    pattern: Optional[tuple[str, ...]] = None
    max_evaluations: int = 100_000
    ftol: float = 1e-15
    xtol: float = 1e-15
    gtol: float = 1e-15
    restarts: int = 1
    seed: int = 0
    jac: str = "2-point"
    verify_tolerance: float = 1e-12

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.restarts < 1:
            raise ValueError("need at least one start")


@dataclass
class OptimizationResult:
    intervals: np.ndarray
    phi: float
    evaluations: int
    converged: bool
    collapsed: bool = False
    start: int = 0
    starts_run: int = 1
    per_start_phi: list = field(default_factory=list)
    message: str = ""


def optimize_schedule(config: OptimizerConfig, group: DecouplingGroup = SINGLE_QUBIT_GROUP,
                      axes: Optional[Sequence] = None) -> tuple[OptimizationResult, PulseSchedule]:
    """Minimize the squared moment residuals over the interval simplex.

    The intervals are parametrized as ``softmax(theta)`` and the residuals
    are solved with trust-region-reflective least squares. The first start
    is ``theta = 0``; later starts are standard-normal draws from
    ``config.seed``. Starts whose smallest interval collapses below
    ``COLLAPSE_THRESHOLD`` are discarded. The best start wins by
    ``(phi, intervals)``.
    """
    axes = tuple(map(_coerce, axes)) if axes is not None else default_axes(group.n)
    n_seg = (len(group) - 1) * config.K + 1
    labels = traversal_pattern(group, n_seg, config.pattern)
    signs = _sign_matrix(group, axes)[:, labels].astype(float)
    K = config.K

    def fun(theta):
        return _residuals_from_signs(softmax_map(theta), signs, K)

    rng = np.random.default_rng(config.seed)
    candidates = []
    evaluations = 0
    for start in range(config.restarts):
        theta0 = np.zeros(n_seg) if start == 0 else rng.standard_normal(n_seg)
        sol = least_squares(
            fun, theta0, jac=config.jac, method="trf",
            ftol=config.ftol, xtol=config.xtol, gtol=config.gtol,
            max_nfev=config.max_evaluations,
        )
        evaluations += sol.nfev
        iv = softmax_map(sol.x)
        phi = float(np.sum(fun(sol.x) ** 2))
        collapsed = bool(iv.min() < COLLAPSE_THRESHOLD)
        log.debug("start %d: phi=%.3e nfev=%d collapsed=%s", start, phi, sol.nfev, collapsed)
        candidates.append((collapsed, phi, tuple(iv), start, sol.message))

    per_start = [c[1] for c in candidates]
    collapsed, phi, iv, start, message = min(candidates)
    iv = np.array(iv)
    schedule = PulseSchedule.from_intervals(iv, labels, group, cyclic_closure=True, order=K)
    report = verify_order(schedule, axes, K, config.verify_tolerance)
    converged = report.passed and not collapsed
    result = OptimizationResult(iv, phi, evaluations, converged, collapsed, start,
                                config.restarts, per_start, str(message))
    return result, schedule


def udd_times(N: int) -> np.ndarray:
    """Uhrig pulse times ``sin^2(j pi / (2N + 2))`` for ``j = 1..N``."""
    if N < 1:
        raise ValueError("UDD order must be >= 1")
    j = np.arange(1, N + 1)
    return np.sin(j * np.pi / (2 * N + 2)) ** 2


def _assert_order(schedule: PulseSchedule, axes, K: int, tol: float = 1e-12) -> None:
    rep = verify_order(schedule, axes, K, tol)
    if not rep.passed:
        raise RuntimeError(
            f"generated schedule fails order {K}: |M| = {rep.worst_residual:.3e} "
            f"on axis {rep.worst_axis}, m={rep.worst_m}"
        )


def udd_schedule(N: int, axis="X") -> PulseSchedule:
    """Single-axis Uhrig sequence with ``N`` pulses about ``axis``."""
    axis = _coerce(axis)
    group = DecouplingGroup((PauliString.identity(axis.n), axis))
    times = udd_times(N)
    sched = PulseSchedule(tuple(times), tuple(i % 2 for i in range(N + 1)), group, True, N)
    flipped = [a for a in default_axes(axis.n) if sign_character(a, axis) == -1]
    _assert_order(sched, flipped, N)
    return sched


def _schedule_from_pulses(pulses: list[tuple[float, PauliString]], group: DecouplingGroup,
                          order: Optional[int]) -> PulseSchedule:
    # merge coincident pulses projectively, in time order
    merged: list[tuple[float, PauliString]] = []
    for t, p in pulses:
        if merged and merged[-1][0] == t:
            merged[-1] = (t, pauli_product(p, merged[-1][1]))
        else:
            merged.append((t, p))
    merged = [(t, p) for t, p in merged if not p.is_identity()]
    frame = group[0]
    cuts, labels = [], [0]
    for t, p in merged:
        frame = pauli_product(p, frame)
        if t < 1.0:
            cuts.append(t)
            labels.append(group.index(frame))
    if not frame.is_identity():
        raise ScheduleError("pulse list does not close to the identity frame")
    return PulseSchedule(tuple(cuts), tuple(labels), group, True, order)


def qdd_schedule(K: int, inner_order: Optional[int] = None) -> PulseSchedule:
    """Quadratic DD: outer X-type UDD with Z-type UDD nested in every outer interval.

    Inner sequences are mapped affinely onto their outer interval. An odd
    order gets a closing pulse at the end of each block; coincident pulses
    are merged into one.
    """
    if K < 1:
        raise ValueError("QDD order must be >= 1")
    M = K if inner_order is None else inner_order
    x, z = PauliString("X"), PauliString("Z")
    edges = np.concatenate(([0.0], udd_times(K), [1.0]))
    pulses: list[tuple[float, PauliString]] = []
    for j, (a, b) in enumerate(zip(edges, edges[1:])):
        for s in udd_times(M):
            pulses.append((a + (b - a) * s, z))
        if M % 2:
            pulses.append((b, z))
        if j < K or K % 2:
            pulses.append((b, x))
    sched = _schedule_from_pulses(pulses, SINGLE_QUBIT_GROUP, min(K, M))
    _assert_order(sched, default_axes(1), min(K, M))
    return sched


def xy4_schedule(repetitions: int = 1) -> PulseSchedule:
    """``repetitions`` back-to-back XY4 blocks of equal spacing."""
    n_seg = 4 * repetitions
    labels = traversal_pattern(SINGLE_QUBIT_GROUP, n_seg)
    return PulseSchedule.from_intervals(np.full(n_seg, 1.0 / n_seg), labels, SINGLE_QUBIT_GROUP, True, 1)


@lru_cache(maxsize=None)
def table_s1() -> dict[int, tuple[str, ...]]:
    """Published interval lists, verbatim decimal strings keyed by order."""
    text = resources.files("momentdd").joinpath("data/table_s1.json").read_text()
    rows = json.loads(text)["rows"]
    return {int(k): tuple(v) for k, v in rows.items()}


def table_s1_intervals(K: int) -> np.ndarray:
    rows = table_s1()
    if K not in rows:
        raise KeyError(f"no published timings for K={K} (available: {sorted(rows)})")
    return np.array([float(v) for v in rows[K]])


def table_s1_schedule(K: int) -> PulseSchedule:
    """Published timings with the alternating X, Z pattern, renormalized to sum to one."""
    iv = table_s1_intervals(K)
    labels = traversal_pattern(SINGLE_QUBIT_GROUP, len(iv))
    return PulseSchedule.from_intervals(iv, labels, SINGLE_QUBIT_GROUP, True, K)
