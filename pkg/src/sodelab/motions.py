"""Motion extraction and frequency-true matching across systems.

A motion here is one periodic orbit together with its measured clock: the
initial state, the integrated period, and the frequency observables that
label it.  Kepler shells and deformed oscillator levels both reduce to such
records, and a matching pairs the two families off by measured frequency.
The grid builder chooses oscillator levels so the Kepler-matching profile
reproduces each shell frequency exactly; matching by raw energy labels is
kept as an alternative mode, and fails loudly when the clocks disagree.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import kepler as kp
from .dynamics import estimate_period, integrate
from .errors import CardinalityMismatchError, FrequencyMismatchError
from .fields import VectorField
from .foscillator import Deformation, OscillatorSystem, deformed_field, shell_state

__all__ = [
    "MotionRecord",
    "MatchedPair",
    "MotionMatching",
    "extract_kepler_motions",
    "extract_oscillator_motions",
    "matched_oscillator_grid",
    "match_motions",
    "record_curve",
    "figure_rows",
    "write_figure_csv",
    "angle_flow_residual",
]


@dataclass(frozen=True, eq=False)
class MotionRecord:
    """One periodic orbit with its measured period and frequency labels."""

    label: str
    kind: str  # "kepler" | "oscillator"
    parameter: float  # shell energy or oscillator level
    field: VectorField
    state: np.ndarray
    n: int  # base dimension: |Q| uses state[:n], |V| the rest
    period: float
    observables: dict[str, float] = dataclass_field(default_factory=dict)

    @property
    def frequency(self) -> float:
        return self.observables["measured"]

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "kind": self.kind,
            "parameter": self.parameter,
            "period": self.period,
            "observables": dict(sorted(self.observables.items())),
        }


def extract_kepler_motions(
    energies,
    params: kp.KeplerParams = kp.KeplerParams(),
    *,
    radius_scale: float = 0.8,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> tuple[MotionRecord, ...]:
    """Measure one chart-side shell orbit per negative energy.

    ``radius_scale`` < 1 starts inside the equipartition radius, so the
    curves genuinely oscillate; the measured frequency is radius-independent
    on the shell.
    """
    if not 0 < radius_scale < 1.4142135623730951:
        raise ValueError("radius_scale must sit in (0, sqrt(2))")
    field = kp.chart_field(params)
    records = []
    for e in energies:
        e = float(e)
        radius = radius_scale * np.sqrt(params.g / (2.0 * abs(e)))
        state = kp.shell_state(e, float(radius), params)
        est = estimate_period(field.ode_rhs, state, rtol=rtol, atol=atol)
        measured = 2.0 * np.pi / est.period
        records.append(
            MotionRecord(
                label=f"kepler-E{e:g}",
                kind="kepler",
                parameter=e,
                field=field,
                state=state,
                n=4,
                period=est.period,
                observables={
                    "measured": float(measured),
                    "shell": kp.shell_frequency(e),
                    "mean_motion": kp.mean_motion(e, params),
                    "half_mean_motion": kp.half_mean_motion(e, params),
                },
            )
        )
    return tuple(records)


def extract_oscillator_motions(
    system: OscillatorSystem,
    deformation: Deformation,
    levels,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> tuple[MotionRecord, ...]:
    """Measure one deformed-oscillator orbit per energy level."""
    gamma = deformed_field(system, deformation)
    records = []
    for c in levels:
        c = float(c)
        state = shell_state(system, c)
        est = estimate_period(gamma.ode_rhs, state, rtol=rtol, atol=atol)
        measured = 2.0 * np.pi / est.period
        records.append(
            MotionRecord(
                label=f"osc-{deformation.name}-c{c:g}",
                kind="oscillator",
                parameter=c,
                field=gamma,
                state=state,
                n=system.n,
                period=est.period,
                observables={
                    "measured": float(measured),
                    "assigned": deformation.slope_at(c),
                },
            )
        )
    return tuple(records)


def matched_oscillator_grid(
    energies, g: float = 1.0, mode: str = "frequency"
) -> tuple[float, ...]:
    """Oscillator levels for a Kepler energy grid.

    ``frequency`` mode solves slope(level) = shell frequency for the
    Kepler-matching profile, giving level = (g^2 |E|)^(1/3), so measured
    clocks agree.  ``energy`` mode copies |E| directly; the labels then
    match but the clocks generally do not.
    """
    if g <= 0:
        raise ValueError("coupling g must be positive")
    levels = []
    for e in energies:
        depth = -float(e)
        if depth <= 0:
            raise ValueError(f"energy {e} is not negative")
        if mode == "frequency":
            levels.append(float((g * g * depth) ** (1.0 / 3.0)))
        elif mode == "energy":
            levels.append(depth)
        else:
            raise ValueError(f"unknown grid mode {mode!r}")
    return tuple(levels)


@dataclass(frozen=True, eq=False)
class MatchedPair:
    record_a: MotionRecord
    record_b: MotionRecord
    rel_mismatch: float

    def to_json(self) -> dict:
        return {
            "label_A": self.record_a.label,
            "label_B": self.record_b.label,
            "omega_A": self.record_a.frequency,
            "omega_B": self.record_b.frequency,
            "rel_mismatch": self.rel_mismatch,
        }


@dataclass(frozen=True, eq=False)
class MotionMatching:
    pairs: tuple[MatchedPair, ...]
    tolerance: float

    def to_json(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "pairs": [p.to_json() for p in self.pairs],
        }


def match_motions(
    records_a, records_b, *, tol: float = 1e-3
) -> MotionMatching:
    """Pair two motion families bijectively by measured frequency.

    Both families are sorted by frequency and paired in order; a cardinality
    gap or a pair whose relative frequency mismatch exceeds ``tol`` raises.
    """
    a = list(records_a)
    b = list(records_b)
    if len(a) != len(b):
        raise CardinalityMismatchError(
            f"cannot match {len(a)} motions against {len(b)}"
        )
    a.sort(key=lambda r: r.frequency)
    b.sort(key=lambda r: r.frequency)
    pairs = []
    worst: MatchedPair | None = None
    for ra, rb in zip(a, b):
        gap = abs(ra.frequency - rb.frequency) / max(ra.frequency, rb.frequency)
        pair = MatchedPair(ra, rb, float(gap))
        pairs.append(pair)
        if worst is None or pair.rel_mismatch > worst.rel_mismatch:
            worst = pair
    if worst is not None and worst.rel_mismatch > tol:
        raise FrequencyMismatchError(
            f"pair {worst.record_a.label} ~ {worst.record_b.label} "
            f"misses by {worst.rel_mismatch:.3e} (tol {tol:g})"
        )
    return MotionMatching(tuple(pairs), tol)


def record_curve(
    record: MotionRecord,
    samples_per_period: int = 512,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-12,
):
    """Integrate one period of a motion and sample it uniformly.

    Returns (times, states, closure): closure is the gap |x(T) - x(0)|
    in the max norm, the periodicity certificate for the emitted curve.
    """
    traj = integrate(
        record.field.ode_rhs, record.state, record.period, rtol=rtol, atol=atol
    )
    times = np.linspace(0.0, record.period, samples_per_period)
    states = traj.sample_many(times)
    closure = float(np.max(np.abs(traj.final_state - record.state)))
    return times, states, closure


def figure_rows(records, samples_per_period: int = 512):
    """Rows (t, |Q|, |V|, label) for every record, plus closure residuals."""
    rows = []
    closures = {}
    for rec in records:
        times, states, closure = record_curve(rec, samples_per_period)
        closures[rec.label] = closure
        base = np.linalg.norm(states[:, : rec.n], axis=1)
        fiber = np.linalg.norm(states[:, rec.n :], axis=1)
        for t, q, v in zip(times, base, fiber):
            rows.append((float(t), float(q), float(v), rec.label))
    return rows, closures


def write_figure_csv(path, records, samples_per_period: int = 512) -> dict:
    """One flat CSV with columns t, absQ, absV, label; returns closures."""
    rows, closures = figure_rows(records, samples_per_period)
    with open(path, "w") as fh:
        fh.write("t,absQ,absV,label\n")
        for t, q, v, label in rows:
            fh.write(f"{t:.17g},{q:.17g},{v:.17g},{label}\n")
    return closures


def angle_flow_residual(times, x, y, omega: float) -> float:
    """Max wrapped gap between atan2(y, x) and a uniform rotation.

    Zero exactly when the planar curve (x, y) turns at constant rate omega:
    the factorization of a motion through a circle, checked pointwise.
    """
    times = np.asarray(times, dtype=float)
    theta = np.arctan2(np.asarray(y, float), np.asarray(x, float))
    drift = theta - theta[0] - omega * (times - times[0])
    wrapped = (drift + np.pi) % (2.0 * np.pi) - np.pi
    return float(np.max(np.abs(wrapped)))
