"""Adaptive time integration of the weight-profile master equation.

The linear equation db/dt = M b is integrated with an embedded
Dormand-Prince 5(4) pair and step control on a mixed absolute/relative
error norm.  Three behaviors are layered on top of the plain stepper
because of the problem structure:

* Exact dynamics preserves b_w >= 0, so small negative components produced
  by floating-point cancellation (within ``positivity_clamp``) are clamped
  to zero; larger violations reject the step and halve it.
* The total mass sum_w b_w (the echo) decays exponentially without bound
  for r < 1 or kappa > 0.  Whenever it drops below ``renorm_threshold``
  the profile is rescaled to unit mass and the extracted log accumulates in
  ``log_mass_offset``, so runs deep into the metastable regime never
  underflow.
* Sample times are hit exactly by shortening steps, not by dense-output
  interpolation.

Normalization c_w = b_w / sum b_w commutes with the linear flow, so
observables are always taken from the renormalized linear solution.  A
direct integration of the nonlinear equation for c_w (with the mass-loss
feedback term) is provided as a cross-check path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import ObservableRecord, Trajectory, WeightProfile

__all__ = [
    "IntegrationConfig",
    "StiffnessError",
    "StationarityError",
    "integrate",
    "integrate_nonlinear",
    "steady_state_mean_weight",
]

# Dormand-Prince 5(4) tableau; row 7 doubles as the 5th-order weights (FSAL).
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# 5th-order minus 4th-order weights over the seven stages.
_ERR = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_MAX_GROW = 10.0
_MIN_SHRINK = 0.2
_SAFETY = 0.9
_LN10 = math.log(10.0)


class StiffnessError(RuntimeError):
    """Step size underflowed; the explicit scheme cannot proceed."""


class StationarityError(RuntimeError):
    """Mean weight did not become stationary before t_max."""


@dataclass(frozen=True)
class IntegrationConfig:
    dt_init: float = 0.01
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    t_max: float = 10.0
    sample_times: np.ndarray | None = None
    positivity_clamp: float = 1e-14
    renorm_threshold: float = 1e-3

    def __post_init__(self):
        if not (self.dt_init > 0 and self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("dt_init, rel_tol and abs_tol must be positive")
        if not (self.t_max > 0 and self.positivity_clamp >= 0):
            raise ValueError("t_max must be positive and positivity_clamp >= 0")
        if not 0.0 < self.renorm_threshold < 1.0:
            raise ValueError("renorm_threshold must lie in (0, 1)")
        if self.sample_times is not None:
            st = np.asarray(self.sample_times, dtype=float)
            if st.ndim != 1 or st.size == 0 or np.any(np.diff(st) <= 0):
                raise ValueError("sample_times must be a strictly increasing 1-d array")
            if st[0] < 0 or st[-1] > self.t_max:
                raise ValueError("sample_times must lie within [0, t_max]")
            st = st.copy()
            st.setflags(write=False)
            object.__setattr__(self, "sample_times", st)

    def resolved_sample_times(self) -> np.ndarray:
        if self.sample_times is not None:
            return self.sample_times
        return np.linspace(0.0, self.t_max, 101)


def _error_norm(err, y0, y1, cfg: IntegrationConfig) -> float:
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _advance(rhs, y, t_end: float, cfg: IntegrationConfig, dt0: float, on_step,
             renormalize: bool, stop_points: np.ndarray) -> None:
    """Drive the DP54 stepper from t=0 to t_end.

    ``on_step(t, y, log_offset)`` runs once with the initial state and after
    every accepted step; returning True stops the integration early.
    ``stop_points`` (sorted, within [0, t_end]) are hit exactly.
    """
    t = 0.0
    log_offset = 0.0
    dt = dt0
    k = [None] * 7
    k[0] = rhs(y)
    if on_step(t, y, log_offset):
        return
    stop_idx = int(np.searchsorted(stop_points, t, side="right"))

    while t < t_end:
        target = stop_points[stop_idx] if stop_idx < stop_points.size else t_end
        landing = dt >= target - t
        h = target - t if landing else dt

        y_new = None
        for i in range(1, 7):
            yi = y + h * sum(a * k[j] for j, a in enumerate(_A[i]) if a != 0.0)
            k[i] = rhs(yi)
            if i == 6:
                y_new = yi  # row 7 coefficients are the 5th-order weights
        err = h * sum(e * k[j] for j, e in enumerate(_ERR) if e != 0.0)
        enorm = _error_norm(err, y, y_new, cfg)
        too_negative = float(y_new.min()) < -cfg.positivity_clamp

        if enorm <= 1.0 and not too_negative:
            t = target if landing else t + h
            np.clip(y_new, 0.0, None, out=y_new)
            if renormalize:
                mass = y_new.sum()
                if mass <= 0.0:
                    raise StiffnessError("profile mass vanished during integration")
                if mass < cfg.renorm_threshold:
                    y_new /= mass
                    log_offset += math.log(mass)
            y = y_new
            k[0] = rhs(y)
            if landing and stop_idx < stop_points.size:
                stop_idx += 1
            factor = _MAX_GROW if enorm == 0.0 else min(
                _MAX_GROW, max(_MIN_SHRINK, _SAFETY * enorm ** -0.2))
            if not landing:
                dt = h * factor
            # on a landing step keep the previous proposal so a short hop
            # to a sample time does not collapse the step size
            if on_step(t, y, log_offset):
                return
        elif too_negative:
            dt = h / 2.0
        else:
            dt = h * max(_MIN_SHRINK, _SAFETY * enorm ** -0.2)
        if dt < 1e-14 * max(1.0, abs(t)):
            raise StiffnessError(f"step size underflow at t={t!r} (dt={dt!r})")


def _initial_dt(op, cfg: IntegrationConfig) -> float:
    return min(cfg.dt_init, 0.05 / op.stiffest_rate())


def _record(values: np.ndarray, log_offset: float, rotoc_qubits: int) -> ObservableRecord:
    mass = float(values.sum())
    w = np.arange(1.0, values.size + 1.0)
    mean_w = float(w @ values) / mass
    rotoc = 8.0 * mean_w / (3.0 * rotoc_qubits)
    echo_true = mass * math.exp(log_offset)
    return ObservableRecord(
        echo_mantissa=mass,
        echo_log10=log_offset / _LN10,
        mean_weight=mean_w,
        rotoc=rotoc,
        dressed_otoc=rotoc * echo_true,
    )


def _as_values(b0, n: int) -> np.ndarray:
    if isinstance(b0, WeightProfile):
        y0 = b0.values.astype(float).copy()
    else:
        y0 = np.asarray(b0, dtype=float).copy()
    if y0.shape != (n,):
        raise ValueError(f"initial profile length {y0.shape} does not match N={n}")
    return y0


def integrate(op, b0, cfg: IntegrationConfig, rotoc_qubits: int | None = None) -> Trajectory:
    """Integrate db/dt = M b and return sampled profiles and observables.

    ``op`` is any generator object exposing ``apply(values)``, ``n`` and
    ``stiffest_rate()``.  ``rotoc_qubits`` sets the N in the 8<w>/3N
    normalization of the ROTOC (defaults to the generator's N, which for a
    truncated dilute generator is the weight cutoff).
    """
    y0 = _as_values(b0, op.n)
    if np.any(y0 < 0) or y0.sum() <= 0:
        raise ValueError("initial profile must be nonnegative with positive mass")

    samples = cfg.resolved_sample_times()
    n_rotoc = op.n if rotoc_qubits is None else int(rotoc_qubits)

    times: list[float] = []
    profiles: list[WeightProfile] = []
    records: list[ObservableRecord] = []
    sample_idx = 0

    def on_step(t, y, log_offset):
        nonlocal sample_idx
        while sample_idx < samples.size and t >= samples[sample_idx]:
            times.append(float(samples[sample_idx]))
            profiles.append(WeightProfile(y, log_offset))
            records.append(_record(y, log_offset, n_rotoc))
            sample_idx += 1
        return False

    _advance(op.apply, y0, float(samples[-1]), cfg, _initial_dt(op, cfg),
             on_step, renormalize=True, stop_points=samples)
    return Trajectory(np.array(times), tuple(profiles), tuple(records))


def integrate_nonlinear(op, c0, cfg: IntegrationConfig) -> tuple[np.ndarray, np.ndarray]:
    """Directly integrate the normalized distribution's nonlinear equation
    dc/dt = M c + mu c with mu = -u^T M c (cross-check path).

    Returns (times, mean_weights).  Agrees with normalizing the linear
    solution because normalization commutes with the linear flow.
    """
    y0 = _as_values(c0, op.n)
    if abs(y0.sum() - 1.0) > 1e-12:
        raise ValueError("initial distribution must be normalized")

    def rhs(c):
        mc = op.apply(c)
        return mc - mc.sum() * c

    samples = cfg.resolved_sample_times()
    w = np.arange(1.0, op.n + 1.0)
    times: list[float] = []
    means: list[float] = []
    sample_idx = 0

    def on_step(t, y, log_offset):
        nonlocal sample_idx
        while sample_idx < samples.size and t >= samples[sample_idx]:
            times.append(float(samples[sample_idx]))
            means.append(float(w @ y) / float(y.sum()))
            sample_idx += 1
        return False

    _advance(rhs, y0, float(samples[-1]), cfg, _initial_dt(op, cfg),
             on_step, renormalize=False, stop_points=samples)
    return np.array(times), np.array(means)


def steady_state_mean_weight(op, b0, cfg: IntegrationConfig, dwell: float = 5.0) -> float:
    """Mean weight <w>_c once stationary.

    Stationarity: across a trailing window of ``dwell`` time units, every
    accepted step changed <w>_c by less than ``cfg.rel_tol`` relative per
    unit time.  Raises :class:`StationarityError` if that never happens
    before ``cfg.t_max``.
    """
    y0 = _as_values(b0, op.n)
    w = np.arange(1.0, op.n + 1.0)
    window: list[tuple[float, float]] = []
    result: list[float] = []

    def on_step(t, y, log_offset):
        mean_w = float(w @ y) / float(y.sum())
        if window:
            t_prev, w_prev = window[-1]
            if t > t_prev and abs(mean_w - w_prev) / ((t - t_prev) * mean_w) >= cfg.rel_tol:
                window.clear()
        window.append((t, mean_w))
        if t - window[0][0] >= dwell:
            result.append(mean_w)
            return True
        return False

    _advance(op.apply, y0, cfg.t_max, cfg, _initial_dt(op, cfg),
             on_step, renormalize=True, stop_points=np.array([]))
    if not result:
        raise StationarityError(
            f"mean weight not stationary within t_max={cfg.t_max} (dwell={dwell})")
    return result[0]
