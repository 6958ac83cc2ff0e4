"""Adaptive explicit integration, dense output, and period detection.

The integrator is the Dormand-Prince embedded 5(4) pair with FSAL, a PI
step-size controller, and cubic Hermite interpolation between accepted steps.
It only runs forward in time; backward flows are handled upstream by negating
the field.  Finite-time escape is reported, not raised: a trajectory whose
norm passes the blow-up threshold (or whose step size underflows) comes back
with ``status == "blow_up"`` and a time bracket around the failure, keeping
the last finite sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationDomainError, NotPeriodicError

__all__ = [
    "Trajectory",
    "integrate",
    "PeriodEstimate",
    "estimate_period",
    "conserved_drift",
]

# Dormand-Prince 5(4) tableau; row 7 equals the 5th-order weights (FSAL)
_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_B = np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0])
# difference between the 5th- and 4th-order weights
_E = np.array(
    [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
# PI controller exponents for a 5th-order advancing method
_ALPHA = 0.7 / 5.0
_BETA = 0.4 / 5.0


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def _safe_rhs(f: Callable, t: float, y: np.ndarray, dim: int) -> np.ndarray:
    try:
        out = np.asarray(f(t, y), dtype=float)
    except EvaluationDomainError:
        return np.full(dim, np.nan)
    if out.shape != (dim,):
        raise ValueError(f"field returned shape {out.shape}, expected ({dim},)")
    return out


def _initial_step(
    rhs, t0: float, y0: np.ndarray, f0: np.ndarray, t_end: float, rtol: float, atol: float
) -> float:
    span = t_end - t0
    scale = atol + rtol * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = rhs(t0 + h0, y0 + h0 * f0)
    if np.all(np.isfinite(f1)):
        d2 = _rms((f1 - f0) / scale) / h0
    else:
        d2 = math.inf
    dm = max(d1, d2)
    if not math.isfinite(dm):
        h1 = h0 * 1e-3
    elif dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    return min(100.0 * h0, h1, span)


@dataclass
class Trajectory:
    """Accepted integration nodes plus derivatives for dense evaluation."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    status: str  # "completed" | "blow_up" | "step_limit"
    accepted: int
    rejected: int
    blow_up_bracket: tuple[float, float] | None = None

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def sample(self, t: float) -> np.ndarray:
        """Cubic Hermite value at time ``t`` within the covered range."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(
                f"t = {t} outside the covered range [{times[0]}, {times[-1]}]"
            )
        if t >= times[-1]:
            return self.states[-1].copy()
        if t <= times[0]:
            return self.states[0].copy()
        i = int(np.searchsorted(times, t, side="right")) - 1
        h = times[i + 1] - times[i]
        theta = (t - times[i]) / h
        t2 = theta * theta
        t3 = t2 * theta
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = t3 - 2 * t2 + theta
        h01 = -2 * t3 + 3 * t2
        h11 = t3 - t2
        return (
            h00 * self.states[i]
            + h10 * h * self.derivs[i]
            + h01 * self.states[i + 1]
            + h11 * h * self.derivs[i + 1]
        )

    def sample_many(self, ts: Sequence[float]) -> np.ndarray:
        return np.array([self.sample(float(t)) for t in ts])

    def write_csv(self, path, names: Sequence[str] | None = None) -> None:
        dim = self.states.shape[1]
        if names is None:
            names = [f"x{k + 1}" for k in range(dim)]
        if len(names) != dim:
            raise ValueError(f"need {dim} column names, got {len(names)}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t," + ",".join(names) + "\n")
            for t, row in zip(self.times, self.states):
                cells = [f"{t:.17g}"] + [f"{v:.17g}" for v in row]
                fh.write(",".join(cells) + "\n")


def integrate(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t_end: float,
    *,
    t0: float = 0.0,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_steps: int = 200_000,
    blow_up_norm: float = 1e8,
) -> Trajectory:
    """Integrate dy/dt = f(t, y) from t0 forward to t_end."""
    y = np.array(y0, dtype=float)
    dim = y.shape[0]
    if not t_end > t0:
        raise ValueError("integration runs forward: t_end must exceed t0")
    if not (np.all(np.isfinite(y)) and np.max(np.abs(y)) <= blow_up_norm):
        raise ValueError("initial state is not finite within the blow-up threshold")

    rhs = lambda t, state: _safe_rhs(f, t, state, dim)
    t = float(t0)
    f_now = rhs(t, y)
    if not np.all(np.isfinite(f_now)):
        raise ValueError("field is not finite at the initial state")

    times = [t]
    states = [y.copy()]
    derivs = [f_now.copy()]
    accepted = 0
    rejected = 0
    status = "step_limit"
    bracket: tuple[float, float] | None = None

    h = _initial_step(rhs, t, y, f_now, t_end, rtol, atol)
    h_floor = 1e-14 * max(1.0, abs(t_end))
    err_prev = 1.0
    k = np.empty((7, dim))

    for _ in range(max_steps):
        if t >= t_end:
            status = "completed"
            break
        if h < h_floor:
            status = "blow_up"
            bracket = (t, t + h)
            break
        h = min(h, t_end - t)

        k[0] = f_now
        for stage in range(1, 7):
            coeffs = _A[stage]
            increment = coeffs[0] * k[0]
            for j in range(1, stage):
                increment = increment + coeffs[j] * k[j]
            k[stage] = rhs(t + _C[stage] * h, y + h * increment)
        y_new = y + h * (_B @ k)
        err_vec = h * (_E @ k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(invalid="ignore", over="ignore"):
            err = _rms(err_vec / scale)
        if not math.isfinite(err):
            err = math.inf

        if err <= 1.0:
            t_new = t + h
            if not (np.all(np.isfinite(y_new)) and np.max(np.abs(y_new)) <= blow_up_norm):
                status = "blow_up"
                bracket = (t, t_new)
                break
            t = t_new
            y = y_new
            f_now = k[6].copy()  # FSAL: stage 7 sits at (t + h, y_new)
            times.append(t)
            states.append(y.copy())
            derivs.append(f_now.copy())
            accepted += 1
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * err ** (-_ALPHA) * err_prev ** _BETA
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = max(err, 1e-10)
            h *= factor
        else:
            rejected += 1
            if err == math.inf:
                factor = _MIN_FACTOR
            else:
                factor = max(_MIN_FACTOR, min(1.0, _SAFETY * err ** (-0.2)))
            h *= factor

    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        derivs=np.array(derivs),
        status=status,
        accepted=accepted,
        rejected=rejected,
        blow_up_bracket=bracket,
    )


@dataclass
class PeriodEstimate:
    """A detected orbital period with its return accuracy."""

    period: float
    residual: float
    second_return: float

    def to_json(self) -> dict:
        return {
            "period": self.period,
            "return_residual": self.residual,
            "second_return": self.second_return,
        }


def _refine_crossing(
    traj: Trajectory, index: int, x0: np.ndarray, normal: np.ndarray
) -> float:
    a = float(traj.times[index])
    b = float(traj.times[index + 1])
    for _ in range(80):
        mid = 0.5 * (a + b)
        if float((traj.sample(mid) - x0) @ normal) < 0.0:
            a = mid
        else:
            b = mid
        if b - a < 1e-15 * max(1.0, abs(b)):
            break
    return 0.5 * (a + b)


def estimate_period(
    f: Callable[[float, np.ndarray], np.ndarray],
    x0,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    t_max: float = 1000.0,
    chunk: float = 100.0,
    ball_radius: float | None = None,
    return_tol: float = 1e-4,
    consistency_tol: float = 5e-3,
) -> PeriodEstimate:
    """Detect the period of the orbit through ``x0``.

    The return section is the hyperplane through ``x0`` normal to the initial
    velocity; candidate returns are negative-to-positive crossings refined by
    bisection on the dense output, accepted only inside a ball around ``x0``
    and within ``return_tol`` of the start.  A second return at twice the
    first (to ``consistency_tol``) is required before reporting a period.
    """
    x0 = np.asarray(x0, dtype=float)
    f0 = np.asarray(f(0.0, x0), dtype=float)
    speed = float(np.linalg.norm(f0))
    if speed < 1e-12:
        raise NotPeriodicError("the starting point is an equilibrium")
    normal = f0 / speed
    if ball_radius is None:
        ball_radius = 0.25 * (1.0 + float(np.linalg.norm(x0)))

    returns: list[tuple[float, float]] = []
    t_start = 0.0
    y_start = x0
    while t_start < t_max and len(returns) < 2:
        t_stop = min(t_start + chunk, t_max)
        traj = integrate(f, y_start, t_stop, t0=t_start, rtol=rtol, atol=atol)
        if traj.status != "completed":
            raise NotPeriodicError(
                f"integration stopped with status '{traj.status}' at t = {traj.final_time}"
            )
        g = (traj.states - x0) @ normal
        for i in range(len(g) - 1):
            if g[i] < 0.0 <= g[i + 1]:
                t_star = _refine_crossing(traj, i, x0, normal)
                residual = float(np.linalg.norm(traj.sample(t_star) - x0))
                if residual > ball_radius or residual > return_tol:
                    continue  # crosses the section away from the start
                if returns and t_star <= returns[-1][0] + 1e-9:
                    continue
                returns.append((t_star, residual))
                if len(returns) == 2:
                    break
        t_start = traj.final_time
        y_start = traj.final_state

    if not returns:
        raise NotPeriodicError(f"no return to the start within t = {t_max}")
    if len(returns) < 2:
        raise NotPeriodicError(
            "found a single return but no second pass to confirm the period"
        )
    first, residual = returns[0]
    second, _ = returns[1]
    if abs(second / 2.0 - first) > consistency_tol * first:
        raise NotPeriodicError(
            f"returns at t = {first:.6g} and t = {second:.6g} do not agree on a period"
        )
    return PeriodEstimate(period=first, residual=residual, second_return=second)


def conserved_drift(quantity: Callable[[np.ndarray], float], traj: Trajectory) -> float:
    """Largest absolute drift of ``quantity`` along the accepted nodes."""
    reference = float(quantity(traj.states[0]))
    worst = 0.0
    for row in traj.states:
        worst = max(worst, abs(float(quantity(row)) - reference))
    return worst
