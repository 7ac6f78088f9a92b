"""Experiment harnesses: error-scaling sweeps, log-log slope and crossover
fits, QDD comparisons, timing-truncation studies and the lower-bound
certificate for sequences with too few sign flips.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .dynamics import (
    evolve,
    haar_product_states,
    plus_state,
    reduced_error,
    sample_model,
)
from .generators import (
    OptimizerConfig,
    optimize_schedule,
    qdd_schedule,
    table_s1_schedule,
    xy4_schedule,
)
from .schedule import PulseSchedule, ScheduleError, pulse_count

__all__ = [
    "SweepSpec",
    "ErrorCurve",
    "SlopeFit",
    "stable_seed",
    "log_grid",
    "resolve_schedule",
    "scaling_sweep",
    "write_curves_csv",
    "write_summary_json",
    "fit_slopes",
    "compare_qdd",
    "ComparisonTable",
    "truncate_schedule",
    "jitter_study",
    "JitterResult",
    "divergence_time",
    "perturb_schedule",
    "certify_lower_bound",
    "Certificate",
    "grid_lower_bound",
    "CSV_COLUMNS",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = ("sequence_id", "K", "J", "T", "seed", "metric", "value")


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from arbitrary printable parts."""
    h = hashlib.sha256("/".join(repr(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def log_grid(t_min: float, t_max: float, count: int) -> np.ndarray:
    if count < 2 or not 0 < t_min < t_max:
        raise ValueError("T grid needs 0 < t_min < t_max and at least two points")
    return np.logspace(np.log10(t_min), np.log10(t_max), count)


@dataclass
class SweepSpec:
    """A scaling-sweep recipe.

    ``source`` is one of ``generated``, ``table-s1``, ``qdd``, ``xy4`` or
    ``file``; ``orders`` lists K values (ignored for ``file``).
    """

    source: str
    orders: Sequence[int]
    J_values: Sequence[float]
    t_min: float
    t_max: float
    t_count: int
    model_seeds: Sequence[int] = (0,)
    states: int = 0
    metric: str = "operator-norm"
    master_seed: int = 0
    path: Optional[str] = None

    def __post_init__(self):
        if self.source not in ("generated", "table-s1", "qdd", "xy4", "file"):
            raise ValueError(f"unknown schedule source {self.source!r}")
        if self.metric not in ("operator-norm", "trace-distance"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.source == "file" and not self.path:
            raise ValueError("file source needs a path")
        if self.source != "file" and not self.orders:
            raise ValueError("no orders given")
        if not self.J_values or not self.model_seeds:
            raise ValueError("J values and model seeds must be non-empty")
        for name, seq in (("orders", self.orders), ("J_values", self.J_values)):
            if list(seq) != sorted(set(seq)):
                raise ValueError(f"{name} must be strictly increasing")
        if self.metric == "trace-distance" and self.states < 1:
            raise ValueError("trace-distance metric needs states >= 1")

    @property
    def T(self) -> np.ndarray:
        return log_grid(self.t_min, self.t_max, self.t_count)


@dataclass
class SlopeFit:
    small_slope: float
    small_se: float
    small_intercept: float
    small_window: tuple[float, float]
    large_slope: float
    large_se: float
    large_intercept: float
    large_window: tuple[float, float]
    crossover: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ErrorCurve:
    sequence_id: str
    K: Optional[int]
    J: float
    T: np.ndarray
    error: np.ndarray
    pulses: Optional[int] = None
    fit: Optional[SlopeFit] = None
    fit_error: Optional[str] = None

    def summary(self) -> dict:
        out = {"sequence_id": self.sequence_id, "K": self.K, "J": self.J, "pulses": self.pulses}
        if self.fit is not None:
            out.update(self.fit.to_dict())
            if self.K is not None:
                out["small_slope_minus_K_plus_1"] = self.fit.small_slope - (self.K + 1)
                out["large_slope_minus_K_plus_1"] = self.fit.large_slope - (self.K + 1)
        else:
            out["fit_error"] = self.fit_error
        return out


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line; returns slope, its standard error, intercept."""
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    n = len(x)
    resid = y - A @ coef
    s2 = float(resid @ resid) / max(n - 2, 1)
    se = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    return float(coef[0]), se, float(coef[1])


def fit_slopes(T, error, decades: float = 1.0, min_points: int = 6, floor: float = 0.0,
               saturation: float = 1.0, min_gap: float = 0.2) -> SlopeFit:
    """Fit log-log lines on the lowest and highest decades of usable data.

    Usable data starts at the first point above ``floor`` and stops before
    the first point that is non-finite, at or below ``floor``, at or above
    ``saturation``, or smaller than its predecessor (pre-saturation). The
    crossover is the intersection of the two lines, reported as ``None``
    when the slopes differ by less than ``min_gap``.
    """
    T = np.asarray(T, dtype=float)
    e = np.asarray(error, dtype=float)
    ok = np.isfinite(e) & (e > floor) & (e < saturation)
    if not ok.any():
        raise ValueError("no usable points (all errors at or below the floor or saturated)")
    start = int(np.argmax(ok))
    stop = start + 1
    while stop < len(e) and ok[stop] and e[stop] >= e[stop - 1]:
        stop += 1
    x, y = np.log(T[start:stop]), np.log(e[start:stop])
    span = math.log(10.0) * decades
    lo = x <= x[0] + span + 1e-12
    hi = x >= x[-1] - span - 1e-12
    if lo.sum() < min_points or hi.sum() < min_points:
        raise ValueError(
            f"fit windows too short ({int(lo.sum())}, {int(hi.sum())} points; need {min_points})"
        )
    s1, se1, b1 = _linfit(x[lo], y[lo])
    s2, se2, b2 = _linfit(x[hi], y[hi])
    cross = None
    if abs(s1 - s2) >= min_gap:
        cross = float(math.exp((b2 - b1) / (s1 - s2)))
    return SlopeFit(s1, se1, b1, (float(T[start:stop][lo][0]), float(T[start:stop][lo][-1])),
                    s2, se2, b2, (float(T[start:stop][hi][0]), float(T[start:stop][hi][-1])),
                    cross)


def resolve_schedule(source: str, K: Optional[int] = None, path: Optional[str] = None,
                     restarts: int = 1, seed: int = 0) -> tuple[str, PulseSchedule]:
    """Return ``(sequence_id, schedule)`` for a named schedule source."""
    if source == "generated":
        res, sched = optimize_schedule(OptimizerConfig(K, restarts=restarts, seed=seed))
        if not res.converged:
            raise RuntimeError(f"optimizer did not converge for K={K} (phi={res.phi:.3e})")
        return f"opt-K{K}", sched
    if source == "table-s1":
        return f"tableS1-K{K}", table_s1_schedule(K)
    if source == "qdd":
        return f"qdd-K{K}", qdd_schedule(K)
    if source == "xy4":
        return f"xy4x{K}", xy4_schedule(K)
    if source == "file":
        sched = PulseSchedule.from_json(Path(path).read_text())
        return f"file-{Path(path).stem}", sched
    raise ValueError(f"unknown schedule source {source!r}")


def _point_value(args) -> tuple[int, float, Optional[str]]:
    idx, sched_json, J, T, model_seed, master, metric, states = args
    sched = PulseSchedule.from_json(sched_json)
    try:
        model = sample_model(stable_seed(master, "model", model_seed), J)
        if metric == "operator-norm":
            val = evolve(sched, model, T).error
        else:
            st = haar_product_states(states, stable_seed(master, "states", model_seed))
            val = float(np.mean(reduced_error(sched, model, T, st)))
        return idx, val, None
    except Exception as exc:  # recorded per point, not fatal
        return idx, float("nan"), f"{type(exc).__name__}: {exc}"


def _run_points(tasks: list, jobs: int) -> list:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_point_value, tasks, chunksize=8))
    else:
        out = [_point_value(t) for t in tasks]
    return sorted(out)


@dataclass
class SweepResult:
    curves: list[ErrorCurve]
    rows: list[tuple]
    failures: list[dict] = field(default_factory=list)


def scaling_sweep(spec: SweepSpec, jobs: int = 1, fit: bool = True, **fit_kwargs) -> SweepResult:
    """Error versus T for every (schedule, J), averaged over model seeds.

    Per-point randomness derives from ``spec.master_seed`` by stable hashing,
    so the output does not depend on ``jobs`` or execution order.
    """
    orders = [None] if spec.source == "file" else list(spec.orders)
    scheds = [(K, *resolve_schedule(spec.source, K, spec.path)) for K in orders]
    T = spec.T
    tasks, keys = [], []
    for (K, sid, sched), J, s, t in itertools.product(scheds, spec.J_values, spec.model_seeds, T):
        tasks.append((len(tasks), sched.to_json(None), float(J), float(t), int(s),
                      spec.master_seed, spec.metric, spec.states))
        keys.append((sid, K, float(J), float(t), int(s)))
    results = _run_points(tasks, jobs)
    rows, failures = [], []
    values: dict = {}
    for (idx, val, err), (sid, K, J, t, s) in zip(results, keys):
        rows.append((sid, K, J, t, s, spec.metric, val))
        values.setdefault((sid, K, J), []).append(val)
        if err:
            failures.append({"sequence_id": sid, "K": K, "J": J, "T": t, "seed": s, "error": err})
    curves = []
    n_seeds = len(spec.model_seeds)
    for K, sid, sched in scheds:
        for J in spec.J_values:
            v = np.array(values[(sid, K, float(J))]).reshape(n_seeds, len(T))
            curve = ErrorCurve(sid, K if K is not None else sched.order, float(J), T, v.mean(axis=0),
                               pulse_count(sched))
            if fit:
                try:
                    curve.fit = fit_slopes(T, curve.error, **fit_kwargs)
                except ValueError as exc:
                    curve.fit_error = str(exc)
            curves.append(curve)
    return SweepResult(curves, rows, failures)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}" if math.isfinite(x) else "nan"
    return "" if x is None else str(x)


def write_curves_csv(rows: Sequence[tuple], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def write_summary_json(summary: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


@dataclass
class ComparisonTable:
    ours_id: str
    qdd_id: str
    ours_pulses: int
    qdd_pulses: int
    J_values: list
    T: np.ndarray
    ours: np.ndarray  # shape (J, T)
    qdd: np.ndarray

    def wins(self) -> np.ndarray:
        return self.ours < self.qdd

    def win_fraction(self, j_index: int, t_lo: float = 0.0, t_hi: float = np.inf) -> float:
        sel = (self.T >= t_lo) & (self.T <= t_hi)
        if not sel.any():
            raise ValueError("no T points in the requested window")
        return float(np.mean(self.wins()[j_index, sel]))

    def rows(self) -> list[tuple]:
        out = []
        for j, J in enumerate(self.J_values):
            for t, (a, b) in enumerate(zip(self.ours[j], self.qdd[j])):
                out.append((J, float(self.T[t]), float(a), float(b)))
        return out

    def summary(self) -> dict:
        return {
            "ours": self.ours_id, "qdd": self.qdd_id,
            "ours_pulses": self.ours_pulses, "qdd_pulses": self.qdd_pulses,
            "win_fraction": {str(J): self.win_fraction(j) for j, J in enumerate(self.J_values)},
            "upper_decade_win_fraction": {
                str(J): self.win_fraction(j, self.T[-1] / 10.0) for j, J in enumerate(self.J_values)
            },
        }


def compare_qdd(our_K: int, qdd_K: int, J_values: Sequence[float], T: Sequence[float],
                samples: int = 100, model_seed: int = 0, master_seed: int = 0,
                ours: Optional[PulseSchedule] = None, qdd: Optional[PulseSchedule] = None) -> ComparisonTable:
    """Mean reduced-state trace distance for our order-K schedule and QDD.

    Both sequences see the same sampled model and the same Haar product
    states. ``ours`` and ``qdd`` override the default schedules (Table S1
    timings and nested UDD).
    """
    ours = ours if ours is not None else table_s1_schedule(our_K)
    qdd = qdd if qdd is not None else qdd_schedule(qdd_K)
    T = np.asarray(T, dtype=float)
    states = haar_product_states(samples, stable_seed(master_seed, "states", model_seed))
    a = np.empty((len(J_values), len(T)))
    b = np.empty_like(a)
    for j, J in enumerate(J_values):
        model = sample_model(stable_seed(master_seed, "model", model_seed), J)
        for i, t in enumerate(T):
            a[j, i] = np.mean(reduced_error(ours, model, t, states))
            b[j, i] = np.mean(reduced_error(qdd, model, t, states))
    return ComparisonTable(f"K{our_K}", f"qdd-K{qdd_K}", pulse_count(ours), pulse_count(qdd),
                           list(J_values), T, a, b)


def truncate_schedule(schedule: PulseSchedule, digits: int) -> PulseSchedule:
    """Keep ``digits`` decimal digits of every cut time (truncation toward zero)."""
    if digits < 1:
        raise ValueError("digits must be >= 1")
    scale = 10 ** digits
    cuts = tuple(math.floor(t * scale) / scale for t in schedule.cut_times)
    try:
        return PulseSchedule(cuts, schedule.labels, schedule.group, schedule.cyclic_closure, schedule.order)
    except ScheduleError as exc:
        raise ScheduleError(f"truncation to {digits} digits breaks the schedule: {exc}") from exc


def perturb_schedule(schedule: PulseSchedule, epsilon: float, seed: int = 0) -> PulseSchedule:
    """Shift every cut time by an independent uniform draw from ``[-epsilon, epsilon]``."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    rng = np.random.default_rng(seed)
    cuts = np.asarray(schedule.cut_times) + rng.uniform(-1.0, 1.0, schedule.n_cuts) * epsilon
    try:
        return PulseSchedule(tuple(float(c) for c in cuts), schedule.labels, schedule.group,
                             schedule.cyclic_closure, schedule.order)
    except ScheduleError as exc:
        raise ScheduleError(f"timing noise {epsilon:g} breaks the schedule: {exc}") from exc


def divergence_time(T, reference, perturbed, factor: float = 2.0) -> Optional[float]:
    """Largest T at which the curves differ by more than ``factor`` in ratio.

    Scans from the largest T downwards and returns the first T whose ratio
    exceeds ``factor`` (``None`` if none does).
    """
    T = np.asarray(T, dtype=float)
    r = np.abs(np.log(np.asarray(perturbed) / np.asarray(reference)))
    for i in range(len(T) - 1, -1, -1):
        if r[i] > math.log(factor):
            return float(T[i])
    return None


@dataclass
class JitterResult:
    digits: int
    T: np.ndarray
    full: np.ndarray
    truncated: np.ndarray
    divergence_time: Optional[float]
    max_timing_error: float
    schedule: PulseSchedule


def _curve(schedule, model, T, metric, states) -> np.ndarray:
    if metric == "operator-norm":
        return np.array([evolve(schedule, model, t).error for t in T])
    return np.array([np.mean(reduced_error(schedule, model, t, states)) for t in T])


def jitter_study(schedule: PulseSchedule, digits: int, J: float, T: Sequence[float],
                 model_seed: int = 0, master_seed: int = 0, metric: str = "trace-distance",
                 states: Optional[list] = None, full: Optional[np.ndarray] = None,
                 mode: str = "truncate", noise_seed: int = 0) -> JitterResult:
    """Re-simulate with imprecise cut times and locate the divergence from
    the full-precision curve.

    ``mode="truncate"`` keeps ``digits`` decimals of each cut time;
    ``mode="uniform"`` instead adds independent uniform noise of size
    ``10**-digits``. Truncation preserves the reflection symmetry of
    symmetric schedules, which keeps the zeroth moment cancelled, while
    uniform noise does not. The default metric is the reduced trace
    distance for the initial state |+>|+>. ``full`` may pass a precomputed
    full-precision curve.
    """
    if mode == "truncate":
        trunc = truncate_schedule(schedule, digits)
    elif mode == "uniform":
        if digits < 1:
            raise ValueError("digits must be >= 1")
        trunc = perturb_schedule(schedule, 10.0 ** -digits, noise_seed)
    else:
        raise ValueError(f"unknown jitter mode {mode!r}")
    T = np.asarray(T, dtype=float)
    model = sample_model(stable_seed(master_seed, "model", model_seed), J)
    if states is None:
        states = [(plus_state(), plus_state())]
    if full is None:
        full = _curve(schedule, model, T, metric, states)
    pert = _curve(trunc, model, T, metric, states)
    eps = float(np.max(np.abs(np.subtract(schedule.cut_times, trunc.cut_times)))) if schedule.n_cuts else 0.0
    return JitterResult(digits, T, np.asarray(full), pert, divergence_time(T, full, pert), eps, trunc)


@dataclass
class Certificate:
    """Witness that a sign pattern with ``r < K`` flips cannot cancel ``K`` moments.

    ``value`` is the telescoped ``int y P'``; ``pairing`` recomputes it as
    ``sum_m a_m M_m`` from the exact moments, where ``coefficients`` are the
    ``a_m`` of ``P'``.
    """

    flips: tuple[float, ...]
    K: int
    value: float
    pairing: float
    coefficients: np.ndarray
    moments: np.ndarray


def certify_lower_bound(flip_points: Sequence[float], K: int, last_sign: int = 1) -> Certificate:
    """Build the polynomial certificate ``P(t) = a t prod(t - t_j)``.

    ``a`` is chosen so that ``P(1)`` equals the sign of the last segment;
    then ``int_0^1 y P' dt`` telescopes to exactly one while ``P'`` has
    degree ``r <= K - 1``.
    """
    flips = tuple(float(t) for t in flip_points)
    r = len(flips)
    if r >= K:
        raise ValueError(f"{r} flips with K={K}: certificate needs r <= K-1")
    if any(not 0 < t < 1 for t in flips) or any(b <= a for a, b in zip(flips, flips[1:])):
        raise ValueError("flip points must be strictly increasing inside (0, 1)")
    if last_sign not in (1, -1):
        raise ValueError("last_sign must be +1 or -1")
    a = last_sign / math.prod(1.0 - t for t in flips)
    p = a * npoly.polyfromroots((0.0, *flips))
    dp = npoly.polyder(p)
    edges = (0.0, *flips, 1.0)
    # s_k on (t_k, t_{k+1}); last one is last_sign
    signs = [last_sign * (-1) ** (r - k) for k in range(r + 1)]
    # P in product form vanishes exactly at 0 and at every flip
    pv = [a * t * math.prod(t - tj for tj in flips) for t in edges]
    value = float(sum(s * (pv[k + 1] - pv[k]) for k, s in enumerate(signs)))
    e = np.array(edges)
    m = np.arange(K)
    mom = np.array([sum(s * (e[k + 1] ** (mm + 1) - e[k] ** (mm + 1)) for k, s in enumerate(signs)) / (mm + 1)
                    for mm in m])
    coeffs = np.zeros(K)
    coeffs[: len(dp)] = dp
    return Certificate(flips, K, value, float(coeffs @ mom), coeffs, mom)


def grid_lower_bound(K: int, grid: int = 200, r: Optional[int] = None) -> tuple[float, tuple[float, ...]]:
    """Exhaustive search over flip placements on the grid ``j / grid``.

    Returns the smallest achievable ``max_m |M_m|`` (m < K) with ``r``
    flips (default ``K - 1``) and the placement attaining it. The overall
    sign of ``y`` does not change the value, so only ``y(0) = +1`` is tried.
    """
    r = K - 1 if r is None else r
    if r < 0:
        raise ValueError("r must be non-negative")
    pts = np.arange(1, grid) / grid
    m = np.arange(1, K + 1)
    best, arg = np.inf, ()
    if r == 0:
        return float(np.max(1.0 / m)), ()
    combos = np.array(list(itertools.combinations(range(len(pts)), r)))
    for chunk in np.array_split(combos, max(1, len(combos) // 200_000)):
        t = pts[chunk]  # (n, r)
        edges = np.concatenate([np.zeros((len(t), 1)), t, np.ones((len(t), 1))], axis=1)
        pw = edges[:, :, None] ** m[None, None, :]  # (n, r+2, K)
        seg = np.diff(pw, axis=1)  # (n, r+1, K)
        signs = (-1.0) ** np.arange(r + 1)
        mom = np.einsum("k,nkm->nm", signs, seg) / m
        worst = np.max(np.abs(mom), axis=1)
        i = int(np.argmin(worst))
        if worst[i] < best:
            best, arg = float(worst[i]), tuple(float(x) for x in t[i])
    return best, arg
