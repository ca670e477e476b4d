"""Higher-level analyses built on the integrator and the dilute closed forms.

* Metastable states: an initial weight w0 > 1 parks the distribution at
  <w>_c = w0/(1-r) until the occupation that leaks down to weight 1 (through
  the 1/N-suppressed down-flow) is amplified by the echo reweighting and
  takes over.  ``MetastableOperator`` integrates the dilute stencil with
  that down-flow restored, with the truncation length (n_cut) and the N in
  the coefficient denominators (n_eff) decoupled so large-N scaling can be
  probed at fixed state size.
* Finite-time crossover: the correlation r* at which the mean-weight curve
  has an inflection exactly at the horizon time T, in closed/root-found form
  and in the large-T asymptote 1 - 2 e^{-2T} = 1 - 2/w_max.
* Scaling collapse: the exact rewriting of the dilute mean weight against
  the r = r_crit trajectory, which sends every (r, t) point onto one of the
  two branches y = 1/(1 +- x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .integrate import IntegrationConfig, integrate
from .params import WeightProfile

__all__ = [
    "MetastableSpec",
    "CrossoverSpec",
    "MetastableOperator",
    "LifetimeMeasurement",
    "PlateauNeverEnteredError",
    "lifetime_estimate",
    "lifetime_measure",
    "crossover_r_star",
    "horizon_from_ideal_curve",
    "scaling_collapse",
    "collapse_residual",
    "suggested_cutoff",
]


class PlateauNeverEnteredError(RuntimeError):
    """The trajectory never entered the metastable plateau band."""


@dataclass(frozen=True)
class MetastableSpec:
    """Setup for a metastable-lifetime run.

    ``n_cut`` is the number of weight slots actually integrated; ``n_eff``
    is the N appearing in the 1/(N-1) down-flow coefficient.  Keeping
    n_eff >= n_cut stays in the dilute regime where the decoupling is valid.
    """

    n_cut: int
    n_eff: float
    correlation: float
    initial_weight: int
    plateau_tolerance: float = 0.02

    def __post_init__(self):
        if self.n_cut < 2:
            raise ValueError("n_cut must be >= 2")
        if self.n_eff < self.n_cut:
            raise ValueError("n_eff must be >= n_cut (dilute regime)")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must lie in [0, 1]")
        if not 1 <= self.initial_weight <= self.n_cut:
            raise ValueError("initial_weight must lie in 1..n_cut")
        if not 0.0 < self.plateau_tolerance < 1.0:
            raise ValueError("plateau_tolerance must lie in (0, 1)")


@dataclass(frozen=True)
class CrossoverSpec:
    """Horizon of a finite-time experiment: give either the time T or the
    maximum mean weight w_max = e^{2T} reached by the ideal r=1 dynamics."""

    horizon_time: float | None = None
    max_weight: float | None = None

    def __post_init__(self):
        if (self.horizon_time is None) == (self.max_weight is None):
            raise ValueError("provide exactly one of horizon_time and max_weight")
        if self.horizon_time is None:
            if self.max_weight <= 1.0:
                raise ValueError("max_weight must exceed 1")
            object.__setattr__(self, "horizon_time", 0.5 * math.log(self.max_weight))
        else:
            if self.horizon_time <= 0.0:
                raise ValueError("horizon_time must be positive")
            object.__setattr__(self, "max_weight", math.exp(2.0 * self.horizon_time))


@dataclass(frozen=True)
class MetastableOperator:
    """Dilute stencil with the 1/N-suppressed down-flow restored:

        db_w/dt = -2w b_w + 2r(w-1) b_{w-1} + 2r w(w+1)/(3(n_eff-1)) b_{w+1}

    for w = 1..n_cut with b_{n_cut+1} = 0.
    """

    n_cut: int
    n_eff: float
    correlation: float

    @classmethod
    def from_spec(cls, spec: MetastableSpec) -> "MetastableOperator":
        return cls(spec.n_cut, spec.n_eff, spec.correlation)

    @property
    def n(self) -> int:
        return self.n_cut

    def apply(self, values: np.ndarray) -> np.ndarray:
        b = np.asarray(values, dtype=float)
        if b.shape != (self.n_cut,):
            raise ValueError(f"profile length {b.shape} does not match n_cut={self.n_cut}")
        w = np.arange(1.0, self.n_cut + 1.0)
        r = self.correlation
        out = -2.0 * w * b
        out[1:] += 2.0 * r * w[:-1] * b[:-1]
        out[:-1] += 2.0 * r * w[:-1] * (w[:-1] + 1.0) / (3.0 * (self.n_eff - 1.0)) * b[1:]
        return out

    def stiffest_rate(self) -> float:
        return 2.0 * self.n_cut


def lifetime_estimate(spec: MetastableSpec) -> float:
    """Closed-form lifetime estimate of the metastable state,

        tau = w0/(2(w0-1)) * ln(3 e N_eff / (r w0)),

    valid for w0 >= 2 and r > 0 (order of magnitude; the per-doubling shift
    w0/(2(w0-1)) * ln 2 with N_eff is the sharp prediction).
    """
    w0 = spec.initial_weight
    if w0 < 2:
        raise ValueError("no metastable state to leave for initial_weight < 2")
    if spec.correlation <= 0.0:
        raise ValueError("lifetime estimate requires correlation > 0")
    return w0 / (2.0 * (w0 - 1.0)) * math.log(3.0 * math.e * spec.n_eff / (spec.correlation * w0))


@dataclass(frozen=True)
class LifetimeMeasurement:
    """Plateau entry/exit times measured from an integrated trajectory.

    ``t_exit`` is ``inf`` when the system never departs the plateau within
    the integration horizon (e.g. at r = 1 where no reweighting occurs).
    """

    t_enter: float
    t_exit: float
    plateau_value: float

    @property
    def duration(self) -> float:
        return self.t_exit - self.t_enter


def lifetime_measure(spec: MetastableSpec, cfg: IntegrationConfig) -> LifetimeMeasurement:
    """Measure plateau entry and exit times for a metastable run.

    Entry: first sample with <w>_c inside the relative tolerance band around
    the predicted plateau w0/(1-r) and with |d<w>/dt| below tolerance (per
    unit time, scaled by the plateau value).  For w0 = 1 or r = 1 there is
    no distinct plateau prediction and entry is the time of maximum <w>_c.
    Exit: first later sample departing the band.  Raises
    :class:`PlateauNeverEnteredError` if the band is never reached.
    """
    op = MetastableOperator.from_spec(spec)
    b0 = WeightProfile.delta(spec.n_cut, spec.initial_weight)
    traj = integrate(op, b0, cfg)
    times = traj.times
    means = traj.mean_weights()
    tol = spec.plateau_tolerance

    if spec.initial_weight == 1 or spec.correlation >= 1.0:
        i_enter = int(np.argmax(means))
        plateau = float(means[i_enter])
    else:
        plateau = spec.initial_weight / (1.0 - spec.correlation)
        slope = np.gradient(means, times)
        in_band = (np.abs(means - plateau) <= tol * plateau) & \
                  (np.abs(slope) <= tol * plateau)
        hits = np.flatnonzero(in_band)
        if hits.size == 0:
            raise PlateauNeverEnteredError(
                f"<w>_c never settled within {tol:.0%} of {plateau}")
        i_enter = int(hits[0])

    departed = np.flatnonzero(np.abs(means[i_enter:] - plateau) > tol * plateau)
    t_exit = float(times[i_enter + departed[0]]) if departed.size else math.inf
    return LifetimeMeasurement(float(times[i_enter]), t_exit, plateau)


def _mean_weight_accel(r: float, decay: float) -> float:
    """Second time derivative of the dilute mean weight, up to positive
    factors: 4 r E (r E - (1 - r)) / (1 - r + r E)^3 with E = e^{-2t}."""
    denom = 1.0 - r + r * decay
    return 4.0 * r * decay * (r * decay - (1.0 - r)) / denom ** 3


def crossover_r_star(spec: CrossoverSpec, solver_mode: str = "exact") -> float:
    """Correlation r* whose mean-weight curve has an inflection at time T.

    ``asymptotic`` returns the large-T form 1 - 2 e^{-2T} = 1 - 2/w_max;
    ``exact`` solves d^2<w>_c/dt^2 (T) = 0 by bracketed root finding (the
    root satisfies 1 - r* = r* e^{-2T}).  The two differ at order e^{-2T}.
    """
    T = spec.horizon_time
    decay = math.exp(-2.0 * T)
    if solver_mode == "asymptotic":
        r_star = 1.0 - 2.0 * decay
        if not 0.0 < r_star < 1.0:
            raise ValueError(f"no crossover in (0, 1) at horizon T={T}")
        return r_star
    if solver_mode == "exact":
        lo, hi = 1e-12, 1.0
        flo, fhi = _mean_weight_accel(lo, decay), _mean_weight_accel(hi, decay)
        if flo * fhi >= 0.0:
            raise ValueError(f"inflection root not bracketed at horizon T={T}")
        return float(brentq(_mean_weight_accel, lo, hi, args=(decay,),
                            xtol=1e-14, rtol=8.9e-16))
    raise ValueError(f"unknown solver_mode {solver_mode!r}")


def horizon_from_ideal_curve(times: np.ndarray, mean_weights: np.ndarray) -> float:
    """Horizon time at which the ideal (r=1) mean-weight curve accelerates
    fastest, i.e. the maximum of d^2<w>/dt^2, with quadratic refinement of
    the grid maximum."""
    times = np.asarray(times, dtype=float)
    accel = np.gradient(np.gradient(mean_weights, times), times)
    i = int(np.argmax(accel))
    if 0 < i < times.size - 1:
        # vertex of the parabola through the three points around the max
        t0, t1, t2 = times[i - 1:i + 2]
        a0, a1, a2 = accel[i - 1:i + 2]
        denom = (a0 - 2.0 * a1 + a2)
        if denom < 0.0:
            return float(t1 + 0.5 * (a0 - a2) / denom * (t2 - t1))
    return float(times[i])


def scaling_collapse(mean_weights: dict[float, np.ndarray], r_crit: float
                     ) -> dict[float, tuple[np.ndarray, np.ndarray]]:
    """Collapse mean-weight trajectories against the r_crit trajectory.

    Input: mapping r -> <w>_c series on a shared time grid, which must
    include r_crit.  Output per r: arrays (x, y) with

        x = |A| w_crit / B,   y = B w / w_crit,
        A = 1 - r/r_crit,     B = r/r_crit,

    where w_crit is the r = r_crit series.  Dilute closed-form inputs land
    exactly on y = 1/(1+x) for r < r_crit and y = 1/(1-x) for r > r_crit.
    """
    if not 0.0 < r_crit <= 1.0:
        raise ValueError("r_crit must lie in (0, 1]")
    crit_key = None
    for key in mean_weights:
        if key == r_crit or math.isclose(key, r_crit, rel_tol=0.0, abs_tol=1e-12):
            crit_key = key
            break
    if crit_key is None:
        raise ValueError(f"trajectory at r_crit={r_crit} missing from input")
    w_crit = np.asarray(mean_weights[crit_key], dtype=float)

    out: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    for r, series in mean_weights.items():
        w = np.asarray(series, dtype=float)
        if w.shape != w_crit.shape:
            raise ValueError("trajectories must share sample times")
        a = 1.0 - r / r_crit
        b = r / r_crit
        out[r] = (abs(a) * w_crit / b, b * w / w_crit)
    return out


def collapse_residual(collapsed: dict[float, tuple[np.ndarray, np.ndarray]]) -> float:
    """Largest distance of any collapsed point from the nearer of the two
    branch curves y = 1/(1 +- x)."""
    worst = 0.0
    for x, y in collapsed.values():
        with np.errstate(divide="ignore"):
            d_plus = np.abs(y - 1.0 / (1.0 + x))
            d_minus = np.abs(y - 1.0 / (1.0 - x))
        worst = max(worst, float(np.min([d_plus, d_minus], axis=0).max()))
    return worst


def suggested_cutoff(w0: int, r: float, relative_loss: float = 1e-10) -> int:
    """Smallest truncation for which the stationary dilute distribution's
    current past the cutoff stays below ``relative_loss`` of the mass.

    The stationary tail is the shifted negative binomial with argument r, so
    the cutoff grows like (w0 + const)/(1-r).
    """
    if not 0.0 < r < 1.0:
        raise ValueError("cutoff sizing requires 0 < r < 1")
    log_r = math.log(r)
    n = max(w0 + 1, int((w0 + 1.0) / (1.0 - r)))
    while True:
        # stationary c_n times the upward rate 2 r n
        log_c = (math.lgamma(n) - math.lgamma(w0) - math.lgamma(n - w0 + 1)
                 + w0 * math.log1p(-r) + (n - w0) * log_r)
        if log_c + math.log(2.0 * r * n) < math.log(relative_loss):
            return n
        n = int(n * 1.25) + 1
