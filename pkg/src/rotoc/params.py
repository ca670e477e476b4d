"""Shared domain types and parameter maps for the Brownian cluster model.

Conventions used throughout the package:

* ``correlation`` (r in [0, 1]) is the normalized covariance between the
  forward and backward coupling noises; r = 1 means perfect time reversal.
* ``noise_rate`` (kappa >= 0) is the per-qubit depolarizing rate; a weight-w
  Pauli coefficient is damped at rate kappa*w, its squared overlap at
  2*kappa*w.
* ``gamma`` (> 0) sets the time unit: the autocorrelator of a single Pauli
  decays at rate gamma.  All generators scale linearly with gamma.
* Weight profiles are indexed by operator weight w = 1..N; array slot
  ``values[w-1]`` holds the overlap at weight w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParams",
    "DiluteParams",
    "WeightProfile",
    "ObservableRecord",
    "Trajectory",
    "correlation_from_perturbation",
    "perturbation_from_correlation",
    "effective_params",
]


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the finite-N master equation generator."""

    n_qubits: int
    correlation: float = 1.0
    noise_rate: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        _check(isinstance(self.n_qubits, (int, np.integer)) and self.n_qubits >= 2,
               f"n_qubits must be an integer >= 2, got {self.n_qubits!r}")
        _check(0.0 <= self.correlation <= 1.0,
               f"correlation must lie in [0, 1], got {self.correlation!r}")
        _check(self.noise_rate >= 0.0,
               f"noise_rate must be >= 0, got {self.noise_rate!r}")
        _check(self.gamma > 0.0, f"gamma must be > 0, got {self.gamma!r}")

    @property
    def r_eff(self) -> float:
        """Effective correlation r/(1+kappa); always in [0, 1]."""
        return self.correlation / (1.0 + self.noise_rate)


@dataclass(frozen=True)
class DiluteParams:
    """Parameters of the dilute-limit (N -> infinity) dynamics.

    ``initial_weight`` is the weight w0 on which the initial operator is
    concentrated.  The dilute dynamics depends on (correlation, noise_rate)
    only through r_eff and the rescaled time (1+kappa)*t.
    """

    correlation: float
    noise_rate: float = 0.0
    initial_weight: int = 1

    def __post_init__(self):
        _check(0.0 <= self.correlation <= 1.0,
               f"correlation must lie in [0, 1], got {self.correlation!r}")
        _check(self.noise_rate >= 0.0,
               f"noise_rate must be >= 0, got {self.noise_rate!r}")
        _check(isinstance(self.initial_weight, (int, np.integer)) and self.initial_weight >= 1,
               f"initial_weight must be an integer >= 1, got {self.initial_weight!r}")

    @property
    def r_eff(self) -> float:
        return self.correlation / (1.0 + self.noise_rate)

    @property
    def time_scale(self) -> float:
        """Factor (1+kappa) multiplying time in the effective dynamics."""
        return 1.0 + self.noise_rate


def effective_params(params) -> tuple[float, float]:
    """Map (r, kappa) onto the single effective pair (r_eff, time_scale).

    The generator with noise equals (1+kappa) times the noiseless generator
    evaluated at r_eff = r/(1+kappa), so any trajectory at (r, kappa, t)
    equals the trajectory at (r_eff, 0, (1+kappa)*t).
    """
    return params.r_eff, 1.0 + params.noise_rate


def correlation_from_perturbation(p: float) -> float:
    """Correlation r between branches when a fraction p of the coupling
    noise is replaced by an independent draw (backward couplings
    ((1-p)*J + p*X) / sqrt(1 - 2p + 2p^2)).

    Monotone decreasing, with r(0) = 1 and r(1) = 0; near p = 0 the
    deficit behaves as 1 - r = p^2/2 + O(p^3).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"perturbation strength must lie in [0, 1], got {p!r}")
    return (1.0 - p) / math.sqrt(1.0 - 2.0 * p + 2.0 * p * p)


def perturbation_from_correlation(r: float) -> float:
    """Inverse of :func:`correlation_from_perturbation` on [0, 1].

    Uses the algebraically equivalent form p = s/(r+s) with s = sqrt(1-r^2),
    which is smooth across r = 1/sqrt(2) where the naive quadratic-root
    expression degenerates.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"correlation must lie in [0, 1], got {r!r}")
    s = math.sqrt(max(0.0, (1.0 - r) * (1.0 + r)))
    return s / (r + s)


@dataclass(frozen=True)
class WeightProfile:
    """Unnormalized overlap profile b_w over weights w = 1..N.

    ``values[w-1]`` holds a mantissa; the true overlap is
    ``exp(log_mass_offset) * values[w-1]``.  The offset absorbs the
    exponential echo decay so that profiles never underflow.
    """

    values: np.ndarray
    log_mass_offset: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        _check(vals.ndim == 1 and vals.size >= 1, "values must be a 1-d array")
        _check(np.all(np.isfinite(vals)), "values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def delta(cls, n: int, w0: int = 1) -> "WeightProfile":
        """Profile concentrated on a single weight w0."""
        _check(1 <= w0 <= n, f"initial weight {w0} outside 1..{n}")
        vals = np.zeros(n)
        vals[w0 - 1] = 1.0
        return cls(vals)

    @property
    def n(self) -> int:
        return self.values.size

    def total_mass_mantissa(self) -> float:
        return float(self.values.sum())

    def log_total_mass(self) -> float:
        """Natural log of the true total mass sum_w b_w."""
        s = self.total_mass_mantissa()
        _check(s > 0.0, "profile has no mass")
        return math.log(s) + self.log_mass_offset

    def normalized(self) -> np.ndarray:
        """The probability distribution c_w = b_w / sum b_w."""
        s = self.total_mass_mantissa()
        _check(s > 0.0, "profile has no mass")
        return self.values / s

    def mean_weight(self) -> float:
        c = self.normalized()
        return float(np.arange(1, self.n + 1) @ c)


@dataclass(frozen=True)
class ObservableRecord:
    """Derived observables at one sample time.

    ``echo_mantissa * 10**echo_log10`` is the true echo sum_w b_w;
    ``dressed_otoc`` = rotoc * echo may underflow to 0.0 in raw units for
    deeply decayed states (the mantissa/log pair never does).
    """

    echo_mantissa: float
    echo_log10: float
    mean_weight: float
    rotoc: float
    dressed_otoc: float


@dataclass(frozen=True)
class Trajectory:
    """Time series of weight profiles and derived observables.

    ``profiles`` may be None for observable-only records (e.g. read back
    from a CSV written without the per-weight columns); when present there
    is exactly one profile per sample time.
    """

    times: np.ndarray
    profiles: tuple[WeightProfile, ...] | None
    observables: tuple[ObservableRecord, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        _check(t.ndim == 1, "times must be a 1-d array")
        _check(np.all(np.diff(t) > 0), "times must be strictly increasing")
        _check(len(self.observables) == t.size, "one observable record per time")
        if self.profiles is not None:
            _check(len(self.profiles) == t.size, "one profile per time")
            object.__setattr__(self, "profiles", tuple(self.profiles))
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "observables", tuple(self.observables))

    def __len__(self) -> int:
        return self.times.size

    def mean_weights(self) -> np.ndarray:
        return np.array([o.mean_weight for o in self.observables])

    def echoes(self) -> np.ndarray:
        """True echo values; may underflow to 0.0 for deeply decayed runs."""
        return np.array([o.echo_mantissa * 10.0 ** o.echo_log10 for o in self.observables])

    def log10_echoes(self) -> np.ndarray:
        return np.array([math.log10(o.echo_mantissa) + o.echo_log10 for o in self.observables])

    def rotocs(self) -> np.ndarray:
        return np.array([o.rotoc for o in self.observables])
