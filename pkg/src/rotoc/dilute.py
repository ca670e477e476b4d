"""Closed-form solutions of the dilute-limit weight dynamics.

With db_w/dt = -2w(1+kappa) b_w + 2r(w-1) b_{w-1} and an initial profile
concentrated on weight w0, everything is expressible through

    g(t) = r_eff * (1 - exp(-2(1+kappa)t)),      r_eff = r/(1+kappa),

the argument of the generating function (z / (1 - g z))^{w0}:

* normalized distribution   c_w(t) = C(w-1, w0-1) (1-g)^{w0} g^{w-w0}
  (a negative binomial shifted by w0),
* mean weight               <w>_c(t) = w0 / (1 - g),
* total mass (echo)         sum_w b_w(t) = [E / (1 - g)]^{w0},
  E = exp(-2(1+kappa)t), obtained by integrating the mass-loss rate
  mu = 2(1+kappa-r) <w>_c in closed form,
* ROTOC                     (8 / 3N) <w>_c.

The generator's eigensystem is also closed-form: v_1 = (1, r, r^2, ...)
with eigenvalue -2(1+kappa), and the derivative tower v_l built from it
with eigenvalues -2l(1+kappa).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import DiluteParams

__all__ = [
    "DiluteSolution",
    "eigenvector",
    "delta_expansion_coefficient",
]


@dataclass(frozen=True)
class DiluteSolution:
    """Evaluator for the closed-form dilute dynamics at given parameters."""

    params: DiluteParams

    def _growth_argument(self, t):
        """g(t) and E(t) = exp(-2(1+kappa)t)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("time must be >= 0")
        decay = np.exp(-2.0 * self.params.time_scale * t)
        return self.params.r_eff * (1.0 - decay), decay

    def mean_weight(self, t):
        """<w>_c(t) = w0 / (1 - r_eff + r_eff e^{-2(1+kappa)t}).

        Monotone non-decreasing; saturates at w0/(1-r_eff) for r_eff < 1
        and grows as w0 e^{2(1+kappa)t} at r_eff = 1.
        """
        g, _ = self._growth_argument(t)
        return self.params.initial_weight / (1.0 - g)

    def total_mass(self, t):
        """The echo sum_w b_w(t); equals 1 at t = 0.

        Closed form [E/(1-g)]^{w0} from integrating the mass-loss rate
        mu(t) = 2(1+kappa-r) <w>_c(t) and exponentiating.
        """
        g, decay = self._growth_argument(t)
        return (decay / (1.0 - g)) ** self.params.initial_weight

    def log_total_mass(self, t):
        """Natural log of the echo, safe against underflow at large t."""
        g, _ = self._growth_argument(t)
        t = np.asarray(t, dtype=float)
        w0 = self.params.initial_weight
        return -w0 * (2.0 * self.params.time_scale * t + np.log1p(-g))

    def rotoc(self, t, n_qubits: int):
        """Renormalized OTOC (8/3N) <w>_c(t)."""
        if n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        return 8.0 * self.mean_weight(t) / (3.0 * n_qubits)

    def mass_loss_rate(self, t):
        """mu(t) = 2(1+kappa-r) <w>_c(t), the instantaneous echo decay rate."""
        p = self.params
        return 2.0 * (1.0 + p.noise_rate - p.correlation) * self.mean_weight(t)

    def coefficient(self, w: int, t: float) -> float:
        """Normalized distribution value c_w(t).

        Vanishes for w < w0 (the dilute flow only increases weight); at
        t = 0 the distribution is concentrated at w0.
        """
        if w < 1:
            raise ValueError("weight must be >= 1")
        w0 = self.params.initial_weight
        if w < w0:
            return 0.0
        g, _ = self._growth_argument(t)
        g = float(g)
        if g == 0.0:
            return 1.0 if w == w0 else 0.0
        # log-space evaluation keeps large-w tails finite
        log_binom = math.lgamma(w) - math.lgamma(w0) - math.lgamma(w - w0 + 1)
        return math.exp(log_binom + w0 * math.log1p(-g) + (w - w0) * math.log(g))

    def coefficients(self, n_cut: int, t: float) -> np.ndarray:
        """c_w(t) for w = 1..n_cut via a stable forward recursion."""
        w0 = self.params.initial_weight
        if n_cut < w0:
            raise ValueError(f"n_cut={n_cut} below initial weight {w0}")
        g, _ = self._growth_argument(t)
        g = float(g)
        out = np.zeros(n_cut)
        out[w0 - 1] = (1.0 - g) ** w0
        for w in range(w0, n_cut):
            # ratio c_{w+1}/c_w of the shifted negative binomial
            out[w] = out[w - 1] * g * w / (w + 1 - w0)
        return out


def eigenvector(ell: int, r: float, n_cut: int) -> np.ndarray:
    """Eigenvector v_ell of the dilute generator, truncated at n_cut.

    v_1 = (1, r, r^2, ...) has eigenvalue -2(1+kappa); differentiating
    l-1 times with respect to r gives v_ell with eigenvalue -2*ell*(1+kappa),
    i.e. entry (w-1)!/(w-ell)! * r^{w-ell} for w >= ell and 0 below.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if n_cut < ell:
        raise ValueError(f"n_cut={n_cut} below ell={ell}")
    v = np.zeros(n_cut)
    v[ell - 1] = math.factorial(ell - 1)
    for w in range(ell, n_cut):
        # entry ratio v[w+1]/v[w] = r * w / (w + 1 - ell)
        v[w] = v[w - 1] * r * w / (w + 1 - ell)
    return v


def delta_expansion_coefficient(ell: int, r: float) -> float:
    """Coefficient of v_ell in the expansion of the weight-1 delta profile:
    the (ell-1)-th Taylor term of exp(-r), (-r)^{ell-1}/(ell-1)!."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    return (-r) ** (ell - 1) / math.factorial(ell - 1)
