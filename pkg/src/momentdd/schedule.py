"""Pulse schedules, switching profiles and closed-form generalized moments.

Time is normalized to [0, 1]. A schedule is a list of cut times plus the
group-element label (control frame) active on each segment; the physical
pulse at a cut is the projective quotient of consecutive frames.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .pauli import (
    DecouplingGroup,
    PauliString,
    _coerce,
    _sign_matrix,
    character_table,
    pauli_product,
)

__all__ = [
    "ScheduleError",
    "SchemaError",
    "PulseSchedule",
    "SwitchingProfile",
    "MomentVector",
    "OrderReport",
    "compile_pulses",
    "pulse_count",
    "switching_profile",
    "moments",
    "moment_residuals",
    "verify_order",
    "assemble_from_bins",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


class ScheduleError(ValueError):
    """Invalid schedule construction (ordering, labels, identity pulses)."""


class SchemaError(ValueError):
    """Malformed or unsupported schedule JSON."""


@dataclass(frozen=True)
class PulseSchedule:
    """Cut times in (0, 1) and the frame label of every segment.

    ``labels[0]`` is the identity frame. Adjacent labels must differ, since
    an identity pulse would silently inflate the pulse count. With
    ``cyclic_closure`` the frame is restored to identity by an extra pulse at
    ``tau = 1`` whenever the last frame is not already the identity.
    """

    cut_times: tuple[float, ...]
    labels: tuple[int, ...]
    group: DecouplingGroup
    cyclic_closure: bool = True
    order: Optional[int] = None

    def __post_init__(self):
        cuts = tuple(float(t) for t in self.cut_times)
        labels = tuple(int(g) for g in self.labels)
        object.__setattr__(self, "cut_times", cuts)
        object.__setattr__(self, "labels", labels)
        if len(labels) != len(cuts) + 1:
            raise ScheduleError(f"{len(cuts)} cuts need {len(cuts) + 1} labels, got {len(labels)}")
        if not all(np.isfinite(cuts)):
            raise ScheduleError("cut times must be finite")
        if cuts and not (0.0 < cuts[0] and cuts[-1] < 1.0):
            raise ScheduleError("cut times must lie strictly inside (0, 1)")
        for a, b in zip(cuts, cuts[1:]):
            if not a < b:
                raise ScheduleError(f"cut times not strictly increasing at {a!r}, {b!r}")
        if not self.group[labels[0]].is_identity():
            raise ScheduleError("first segment must be the identity frame")
        for i, g in enumerate(labels):
            if not 0 <= g < len(self.group):
                raise ScheduleError(f"label {g} out of range for group of order {len(self.group)}")
            if i and g == labels[i - 1]:
                raise ScheduleError(f"adjacent segments {i - 1}, {i} share label {g} (identity pulse)")

    @property
    def n_cuts(self) -> int:
        return len(self.cut_times)

    @property
    def boundaries(self) -> np.ndarray:
        return np.array((0.0, *self.cut_times, 1.0))

    @property
    def intervals(self) -> np.ndarray:
        return np.diff(self.boundaries)

    @property
    def frames(self) -> tuple[PauliString, ...]:
        return tuple(self.group[g] for g in self.labels)

    def needs_closure(self) -> bool:
        return self.cyclic_closure and not self.group[self.labels[-1]].is_identity()

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "K": self.order,
            "group": [e.axes for e in self.group.elements],
            "cut_times": list(self.cut_times),
            "labels": list(self.labels),
            "cyclic_closure": self.cyclic_closure,
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "PulseSchedule":
        if not isinstance(data, dict):
            raise SchemaError("schedule JSON must be an object")
        if data.get("version") != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schedule version {data.get('version')!r}")
        missing = {"group", "cut_times", "labels", "cyclic_closure"} - set(data)
        if missing:
            raise SchemaError(f"schedule JSON missing keys {sorted(missing)}")
        try:
            group = DecouplingGroup.from_strings(data["group"])
            return cls(
                tuple(data["cut_times"]),
                tuple(data["labels"]),
                group,
                bool(data["cyclic_closure"]),
                data.get("K"),
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "PulseSchedule":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_intervals(cls, intervals, labels, group, cyclic_closure=True, order=None) -> "PulseSchedule":
        """Build from segment lengths; they are renormalized to sum to one."""
        iv = np.asarray(intervals, dtype=float)
        if np.any(iv <= 0):
            raise ScheduleError("segment lengths must be positive")
        cuts = np.cumsum(iv)[:-1] / iv.sum()
        return cls(tuple(cuts), tuple(labels), group, cyclic_closure, order)


def compile_pulses(schedule: PulseSchedule) -> list[tuple[float, PauliString]]:
    """Physical pulses ``P_l = g_l g_{l-1}^dagger`` at each cut.

    With cyclic closure a final pulse at ``tau = 1`` returns the frame to
    identity; it is omitted when the last frame already is the identity.
    """
    frames = schedule.frames
    pulses = []
    for t, prev, cur in zip(schedule.cut_times, frames, frames[1:]):
        p = pauli_product(cur, prev)
        if p.is_identity():
            raise ScheduleError(f"identity pulse at tau={t}")
        pulses.append((t, p))
    if schedule.needs_closure():
        pulses.append((1.0, frames[-1]))
    return pulses


def pulse_count(schedule: PulseSchedule) -> int:
    return len(compile_pulses(schedule))


@dataclass(frozen=True)
class SwitchingProfile:
    """Piecewise-constant toggling-frame signs on a common partition of [0, 1].

    ``signs[a, l]`` is ``y_a`` on ``[boundaries[l], boundaries[l + 1])``.
    """

    boundaries: np.ndarray
    signs: np.ndarray
    axes: tuple[PauliString, ...]

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        s = np.asarray(self.signs, dtype=np.int8)
        if s.ndim == 1:
            s = s[None, :]
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "signs", s)
        if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise ScheduleError("profile boundaries must increase strictly from 0 to 1")
        if s.shape[1] != len(b) - 1:
            raise ScheduleError("one sign per segment required")
        if not np.all(np.abs(s) == 1):
            raise ScheduleError("signs must be +1 or -1")

    def __call__(self, tau) -> np.ndarray:
        """Evaluate ``y_a(tau)`` for every axis (right-continuous, ``y(1)`` = last segment)."""
        idx = np.clip(np.searchsorted(self.boundaries, tau, side="right") - 1, 0, self.signs.shape[1] - 1)
        return self.signs[:, idx]


def switching_profile(schedule: PulseSchedule, axes: Sequence, strict: bool = True) -> SwitchingProfile:
    """Toggling-frame signs of ``axes`` on each segment of ``schedule``.

    With ``strict`` the group must cancel every axis (zero character sums);
    set it to False to get the signs of axes the group leaves uncancelled.
    """
    axes = tuple(map(_coerce, axes))
    if strict:
        table = character_table(schedule.group, axes).table
    else:
        table = _sign_matrix(schedule.group, axes)
    return SwitchingProfile(schedule.boundaries, table[:, list(schedule.labels)], axes)


@dataclass(frozen=True)
class MomentVector:
    """``values[a, m] = int_0^1 y_a(tau) tau^m dtau`` for ``m < order``."""

    values: np.ndarray
    axes: tuple[PauliString, ...]

    @property
    def order(self) -> int:
        return self.values.shape[1]

    def unscaled(self) -> np.ndarray:
        """Residuals without the ``1/(m+1)`` factor, as used by the optimizer."""
        return self.values * np.arange(1, self.order + 1)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def __getitem__(self, key):
        return self.values[key]


def _power_differences(boundaries: np.ndarray, K: int) -> np.ndarray:
    # rows m = 0..K-1: t_l^{m+1} - t_{l-1}^{m+1}
    powers = boundaries[None, :] ** np.arange(1, K + 1)[:, None]
    return np.diff(powers, axis=1)


def moment_residuals(profile: SwitchingProfile, K: int) -> np.ndarray:
    """Unscaled residuals ``sum_l s_l (t_l^{m+1} - t_{l-1}^{m+1})``, shape (axes, K)."""
    if K < 1:
        raise ValueError("order K must be >= 1")
    return profile.signs.astype(float) @ _power_differences(profile.boundaries, K).T


def moments(profile: SwitchingProfile, K: int) -> MomentVector:
    """Exact generalized moments through ``m = K - 1``; no quadrature."""
    r = moment_residuals(profile, K)
    return MomentVector(r / np.arange(1, K + 1), profile.axes)


@dataclass(frozen=True)
class OrderReport:
    passed: bool
    worst_residual: float
    worst_axis: Optional[str]
    worst_m: Optional[int]
    tolerance: float
    moments: MomentVector


def verify_order(schedule: PulseSchedule, axes: Sequence, K: int, tolerance: float = 1e-12) -> OrderReport:
    """Pass iff every ``|M_{a,m}|`` with ``m < K`` is within ``tolerance``.

    Use ``tolerance=1e-9`` for published 15-digit timings.
    """
    prof = switching_profile(schedule, axes)
    mv = moments(prof, K)
    a, m = np.unravel_index(np.argmax(np.abs(mv.values)), mv.values.shape)
    worst = float(abs(mv.values[a, m]))
    return OrderReport(worst <= tolerance, worst, prof.axes[a].axes, int(m), tolerance, mv)


def assemble_from_bins(bins: Sequence[tuple[float, float, int]], group: DecouplingGroup,
                       cyclic_closure: bool = True, order: Optional[int] = None,
                       atol: float = 1e-12) -> PulseSchedule:
    """Turn a labeled tiling of [0, 1] into a schedule.

    ``bins`` holds ``(start, end, label)`` triples. Adjacent pieces with the
    same label are merged. Every frame is left-multiplied by the inverse of
    the first piece's label so the schedule starts in the identity frame;
    this flips each axis' switching function by a global sign, which leaves
    vanishing moments vanishing.
    """
    if not bins:
        raise ScheduleError("no bins given")
    pieces = sorted((float(a), float(b), int(g)) for a, b, g in bins)
    if abs(pieces[0][0]) > atol or abs(pieces[-1][1] - 1.0) > atol:
        raise ScheduleError("bins must cover [0, 1]")
    for a, b, _ in pieces:
        if not b > a:
            raise ScheduleError(f"empty or reversed bin [{a}, {b})")
    for (_, b0, _), (a1, _, _) in zip(pieces, pieces[1:]):
        if a1 > b0 + atol:
            raise ScheduleError(f"gap between {b0} and {a1}")
        if a1 < b0 - atol:
            raise ScheduleError(f"overlap between {a1} and {b0}")
    first = group[pieces[0][2]]
    relabel = [group.index(pauli_product(first, g)) for g in group.elements]
    cuts, labels = [], [relabel[pieces[0][2]]]
    for (_, _, g_prev), (a, _, g) in zip(pieces, pieces[1:]):
        if g != g_prev:
            cuts.append(a)
            labels.append(relabel[g])
    return PulseSchedule(tuple(cuts), tuple(labels), group, cyclic_closure, order)
