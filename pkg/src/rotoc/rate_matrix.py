"""Matrix-free application of the operator-weight master-equation generator.

Two stencils are provided:

* ``Form.FULL`` -- the finite-N three-band generator

      db_w/dt = -2w((w-1) + 3(N-w))/(3(N-1)) b_w - 2 w kappa b_w
                + 2r [ (N-w+1)(w-1)/(N-1) b_{w-1} + w(w+1)/(3(N-1)) b_{w+1} ]

  with boundary convention b_0 = b_{N+1} = 0.  At r=1, kappa=0 the column
  sums vanish identically and sum_w b_w is conserved.

* ``Form.DILUTE`` -- the N -> infinity lower-bidiagonal limit

      db_w/dt = -2w(1+kappa) b_w + 2r(w-1) b_{w-1}

  truncated at a finite cutoff (the ``n_qubits`` of the supplied params).
  Upward flow out of the last slot is dropped; ``cutoff_loss_rate``
  reports the current that would cross the truncation boundary so callers
  can detect an under-sized cutoff.

Both apply in O(N) time and never materialize the generator.  Rates carry
an overall factor gamma.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .params import ModelParams, WeightProfile

__all__ = ["Form", "RateOperator", "mass_loss_rate"]


class Form(enum.Enum):
    FULL = "full"
    DILUTE = "dilute"


@dataclass(frozen=True)
class RateOperator:
    """The generator M(r, kappa) in full or dilute form."""

    params: ModelParams
    form: Form = Form.FULL

    @classmethod
    def full(cls, params: ModelParams) -> "RateOperator":
        return cls(params, Form.FULL)

    @classmethod
    def dilute(cls, params: ModelParams) -> "RateOperator":
        """Dilute stencil truncated at n_qubits slots (n_qubits acts as the
        weight cutoff; the dilute coefficients do not otherwise involve N)."""
        return cls(params, Form.DILUTE)

    @property
    def n(self) -> int:
        """Length of the weight profiles this operator acts on."""
        return self.params.n_qubits

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Return db/dt for a raw profile array (slot w-1 holds b_w)."""
        b = np.asarray(values, dtype=float)
        if b.shape != (self.n,):
            raise ValueError(f"profile length {b.shape} does not match N={self.n}")
        p = self.params
        w = np.arange(1.0, self.n + 1.0)
        if self.form is Form.DILUTE:
            out = -2.0 * w * (1.0 + p.noise_rate) * b
            out[1:] += 2.0 * p.correlation * w[:-1] * b[:-1]
        else:
            nn = float(self.n)
            denom = 3.0 * (nn - 1.0)
            out = -(2.0 * w * ((w - 1.0) + 3.0 * (nn - w)) / denom + 2.0 * w * p.noise_rate) * b
            # gain into w from w-1 and from w+1
            out[1:] += 2.0 * p.correlation * (nn - w[1:] + 1.0) * (w[1:] - 1.0) / (nn - 1.0) * b[:-1]
            out[:-1] += 2.0 * p.correlation * w[:-1] * (w[:-1] + 1.0) / denom * b[1:]
        if p.gamma != 1.0:
            out *= p.gamma
        return out

    def apply_profile(self, profile: WeightProfile) -> WeightProfile:
        """Derivative of a WeightProfile (same log-mass offset)."""
        return WeightProfile(self.apply(profile.values), profile.log_mass_offset)

    def cutoff_loss_rate(self, values: np.ndarray) -> float:
        """Rate at which mass crosses the truncation boundary.

        Zero for the full form (truncation at w = N is exact).  For the
        dilute form this is the upward current 2 r n_cut b_{n_cut} that the
        truncated stencil silently drops.
        """
        if self.form is Form.FULL:
            return 0.0
        p = self.params
        return float(2.0 * p.gamma * p.correlation * self.n * values[-1])

    def stiffest_rate(self) -> float:
        """Magnitude of the fastest decay rate, used to size initial steps."""
        p = self.params
        return 2.0 * p.gamma * self.n * (1.0 + p.noise_rate)


def mass_loss_rate(op, c: np.ndarray, tol: float = 1e-9) -> float:
    """Instantaneous loss rate mu = -u^T M c for a normalized profile c.

    mu >= 0 whenever r <= 1 and kappa >= 0; for the dilute form it equals
    2(1 + kappa - r) <w>_c exactly.
    """
    c = np.asarray(c, dtype=float)
    s = c.sum()
    if abs(s - 1.0) > tol:
        raise ValueError(f"profile is not normalized: sum = {s!r}")
    return float(-op.apply(c).sum())
