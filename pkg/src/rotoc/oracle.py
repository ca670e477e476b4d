"""Exact Monte Carlo simulation of the discrete Brownian cluster circuit.

Small systems (N <= 6) are evolved with dense 2^N x 2^N step unitaries
built by exact Hermitian eigendecomposition, so the only approximations are
the finite Trotter step and the finite sample count.  Per time step of
length dt:

* fresh Gaussian couplings J_A (and an independent copy X_A) are drawn for
  all 9 N(N-1)/2 two-site Pauli pairs with variance 1/(12(N-1) dt);
* the forward branch evolves with H = sum_A J_A O_A and the backward branch
  with the partially refreshed couplings ((1-p) J_A + p X_A)/S,
  S = sqrt(1 - 2p + 2p^2), giving branch correlation r = (1-p)/S;
* depolarizing noise damps every weight-w Pauli coefficient of both
  branches by exp(-kappa w dt) (the channel's exact action, applied
  deterministically rather than sampled).

Pauli strings are encoded base 4 (digit 0 = identity, 1/2/3 = X/Y/Z, site 0
most significant), and operators move between the dense matrix and the
Pauli coefficient vector with per-qubit tensor contractions.

Observables over the sample ensemble: the echo sum_P c_P c~_P, the dressed
OTOC 4 sum_{ {P,W}=0 } c_P c~_P, the weight-binned overlap profile b_w, and
the bare autocorrelator (the coefficient remaining on the initial string),
each with standard errors.  Per-sample RNG streams are spawned from the
master seed, so parallel execution is bit-identical to serial.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .params import correlation_from_perturbation, perturbation_from_correlation

__all__ = [
    "PAULI_MATRICES",
    "PauliOperator",
    "CircuitConfig",
    "CouplingSample",
    "sample_step_couplings",
    "evolve_step",
    "run_protocol",
    "estimate_observables",
    "OracleEstimates",
    "pauli_weights",
    "anticommutation_mask",
]

PAULI_MATRICES = np.array([
    [[1, 0], [0, 1]],
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

_AXIS_NAMES = {1: "X", 2: "Y", 3: "Z"}


def pauli_weights(n: int) -> np.ndarray:
    """Operator weight (count of non-identity digits) for every base-4 code."""
    codes = np.arange(4 ** n)
    digits = (codes[:, None] // 4 ** np.arange(n - 1, -1, -1)) % 4
    return (digits != 0).sum(axis=1)


def _digit(code: int, site: int, n: int) -> int:
    return (code // 4 ** (n - 1 - site)) % 4


def anticommutation_mask(n: int, site: int, axis: int) -> np.ndarray:
    """Boolean mask over codes of strings anticommuting with the single-site
    Pauli ``axis`` on ``site`` (they do iff their digit there is a different
    non-identity Pauli)."""
    codes = np.arange(4 ** n)
    digits = (codes // 4 ** (n - 1 - site)) % 4
    return (digits != 0) & (digits != axis)


def _matrix_to_coeffs(mat: np.ndarray, n: int) -> np.ndarray:
    """Pauli coefficients c_P = Tr(P mat)/2^N as a length-4^N vector."""
    contract = PAULI_MATRICES / 2.0
    t = mat.reshape((2,) * (2 * n))
    for k in range(n):
        # contract qubit k's (row of P = col of mat, col of P = row of mat)
        t = np.tensordot(contract, t, axes=([1, 2], [n, k]))
    # p-axes accumulated newest-first
    t = t.transpose(tuple(range(n - 1, -1, -1)))
    return t.reshape(4 ** n)


def _coeffs_to_matrix(coeffs: np.ndarray, n: int) -> np.ndarray:
    t = coeffs.astype(complex).reshape((4,) * n)
    for _ in range(n):
        t = np.tensordot(PAULI_MATRICES, t, axes=(0, 0))
    # axes are (x_{n-1}, y_{n-1}, ..., x_0, y_0); bring to (x_0..x_{n-1}, y_0..)
    perm = [2 * (n - 1 - i) for i in range(n)] + [2 * (n - 1 - i) + 1 for i in range(n)]
    return t.transpose(perm).reshape(2 ** n, 2 ** n)


@dataclass(frozen=True)
class PauliOperator:
    """Sparse real-coefficient operator in the Pauli-string basis."""

    n_qubits: int
    coefficients: dict[int, float]

    def __post_init__(self):
        if not 1 <= self.n_qubits:
            raise ValueError("n_qubits must be >= 1")
        top = 4 ** self.n_qubits
        for code in self.coefficients:
            if not 0 <= code < top:
                raise ValueError(f"Pauli code {code} out of range for {self.n_qubits} qubits")

    @classmethod
    def single_site(cls, n: int, site: int, axis: int = 1) -> "PauliOperator":
        """Weight-1 Pauli (axis 1/2/3 = X/Y/Z) on the given site."""
        if not 0 <= site < n:
            raise ValueError(f"site {site} out of range")
        if axis not in (1, 2, 3):
            raise ValueError("axis must be 1 (X), 2 (Y) or 3 (Z)")
        return cls(n, {axis * 4 ** (n - 1 - site): 1.0})

    @classmethod
    def from_label(cls, label: str) -> "PauliOperator":
        """Build from a string like ``"XIZ"`` (site 0 first)."""
        lookup = {"I": 0, "X": 1, "Y": 2, "Z": 3}
        try:
            digits = [lookup[ch] for ch in label.upper()]
        except KeyError as exc:
            raise ValueError(f"invalid Pauli label {label!r}") from exc
        code = 0
        for d in digits:
            code = 4 * code + d
        return cls(len(digits), {code: 1.0})

    @classmethod
    def from_dense_coeffs(cls, n: int, coeffs: np.ndarray, tol: float = 0.0) -> "PauliOperator":
        idx = np.flatnonzero(np.abs(coeffs) > tol)
        return cls(n, {int(i): float(coeffs[i]) for i in idx})

    def to_dense_coeffs(self) -> np.ndarray:
        out = np.zeros(4 ** self.n_qubits)
        for code, amp in self.coefficients.items():
            out[code] = amp
        return out

    def to_matrix(self) -> np.ndarray:
        return _coeffs_to_matrix(self.to_dense_coeffs(), self.n_qubits)

    @classmethod
    def from_matrix(cls, mat: np.ndarray, n: int, tol: float = 1e-12) -> "PauliOperator":
        coeffs = _matrix_to_coeffs(np.asarray(mat, dtype=complex), n)
        if np.abs(coeffs.imag).max(initial=0.0) > 1e-9:
            raise ValueError("operator is not Hermitian: complex Pauli coefficients")
        return cls.from_dense_coeffs(n, coeffs.real, tol)

    def weight_of(self, code: int) -> int:
        return sum(1 for s in range(self.n_qubits) if _digit(code, s, self.n_qubits) != 0)

    def norm_squared(self) -> float:
        return float(sum(a * a for a in self.coefficients.values()))

    def single_code(self) -> int:
        """Code of the unique string (error if not a single Pauli)."""
        if len(self.coefficients) != 1:
            raise ValueError("operator is not a single Pauli string")
        return next(iter(self.coefficients))


@dataclass(frozen=True)
class CircuitConfig:
    """Discrete Brownian circuit setup.

    Exactly one of ``correlation``/``perturbation`` may be given (the other
    is derived via r = (1-p)/sqrt(1-2p+2p^2)); both default to the
    unperturbed circuit.
    """

    n_qubits: int
    total_time: float
    dt: float = 0.01
    correlation: float | None = None
    perturbation: float | None = None
    noise_rate: float = 0.0
    n_samples: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.n_qubits <= 6:
            raise ValueError("oracle supports 2..6 qubits (dense 2^N evolution)")
        if self.total_time <= 0:
            raise ValueError("total_time must be positive")
        if not 0 < self.dt <= 0.05:
            raise ValueError("dt must lie in (0, 0.05] to keep Trotter bias small")
        if self.noise_rate < 0:
            raise ValueError("noise_rate must be >= 0")
        if self.n_samples < 100:
            raise ValueError("n_samples must be >= 100")
        if self.correlation is not None and self.perturbation is not None:
            raise ValueError("give correlation or perturbation, not both")
        if self.correlation is None and self.perturbation is None:
            object.__setattr__(self, "correlation", 1.0)
        if self.perturbation is None:
            object.__setattr__(self, "perturbation",
                               perturbation_from_correlation(self.correlation))
        else:
            object.__setattr__(self, "correlation",
                               correlation_from_perturbation(self.perturbation))

    @property
    def n_steps(self) -> int:
        steps = round(self.total_time / self.dt)
        if abs(steps * self.dt - self.total_time) > 1e-9:
            raise ValueError("total_time must be a multiple of dt")
        return steps

    @property
    def coupling_sigma(self) -> float:
        """Per-step standard deviation of each coupling."""
        return math.sqrt(1.0 / (12.0 * (self.n_qubits - 1) * self.dt))

    @property
    def mix_norm(self) -> float:
        """S = sqrt(1-2p+2p^2) normalizing the backward couplings."""
        p = self.perturbation
        return math.sqrt(1.0 - 2.0 * p + 2.0 * p * p)


def _pair_operators(n: int) -> np.ndarray:
    """Stack of all two-site Pauli products sigma^a_i sigma^b_j (i < j,
    a,b in {X,Y,Z}) as dense matrices, shape (9 n(n-1)/2, 2^n, 2^n)."""
    mats = []
    eye = [np.eye(2, dtype=complex)] * n
    for i in range(n):
        for j in range(i + 1, n):
            for a in range(1, 4):
                for b in range(1, 4):
                    factors = list(eye)
                    factors[i] = PAULI_MATRICES[a]
                    factors[j] = PAULI_MATRICES[b]
                    m = factors[0]
                    for f in factors[1:]:
                        m = np.kron(m, f)
                    mats.append(m)
    return np.array(mats)


@dataclass(frozen=True)
class CouplingSample:
    """One step's forward couplings and their independent refresh partner."""

    forward: np.ndarray
    refresh: np.ndarray
    perturbation: float
    mix_norm: float

    @property
    def backward(self) -> np.ndarray:
        p = self.perturbation
        return ((1.0 - p) * self.forward + p * self.refresh) / self.mix_norm


def sample_step_couplings(cfg: CircuitConfig, rng: np.random.Generator) -> CouplingSample:
    """Draw one step's (J_A, X_A); ``backward`` mixes them with strength p.

    Both marginals are Gaussian with variance 1/(12(N-1) dt); the
    forward/backward cross-correlation is r = (1-p)/S.
    """
    n_coup = 9 * cfg.n_qubits * (cfg.n_qubits - 1) // 2
    sigma = cfg.coupling_sigma
    j = rng.normal(0.0, sigma, size=n_coup)
    x = rng.normal(0.0, sigma, size=n_coup)
    return CouplingSample(j, x, cfg.perturbation, cfg.mix_norm)


def _step_unitary(h: np.ndarray, dt: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(-1j * dt * vals)) @ vecs.conj().T


def _damp(mat: np.ndarray, damp_factors: np.ndarray, n: int) -> np.ndarray:
    coeffs = _matrix_to_coeffs(mat, n)
    return _coeffs_to_matrix(coeffs * damp_factors, n)


def evolve_step(w: PauliOperator, couplings: CouplingSample, dt: float,
                kappa: float, branch: str = "forward",
                operators: np.ndarray | None = None) -> PauliOperator:
    """One exact circuit step: conjugate by the step unitary of the chosen
    branch, then damp each Pauli coefficient by exp(-kappa w dt).

    The pre-damping coefficient norm must be preserved to 1e-8 (unitarity);
    drift beyond that raises, signaling a linear-algebra failure.
    """
    n = w.n_qubits
    ops = _pair_operators(n) if operators is None else operators
    if branch == "forward":
        j = couplings.forward
    elif branch == "backward":
        j = couplings.backward
    else:
        raise ValueError(f"unknown branch {branch!r}")
    u = _step_unitary(np.tensordot(j, ops, axes=(0, 0)), dt)
    mat = u @ w.to_matrix().astype(complex) @ u.conj().T
    coeffs = _matrix_to_coeffs(mat, n).real
    norm0 = w.norm_squared()
    drift = abs(float(coeffs @ coeffs) - norm0)
    if drift > 1e-8 * max(1.0, norm0):
        raise RuntimeError(f"unitarity violated: coefficient norm drifted by {drift}")
    if kappa > 0.0:
        coeffs = coeffs * np.exp(-kappa * dt * pauli_weights(n))
    return PauliOperator.from_dense_coeffs(n, coeffs, tol=0.0)


def _evolve_branches(cfg: CircuitConfig, v0: np.ndarray, rng: np.random.Generator,
                     ops: np.ndarray, damp_factors: np.ndarray | None,
                     record_steps: set[int], on_record) -> None:
    """Evolve both branches of D_U(V), D_U~(V) for one sample, invoking
    ``on_record(step, forward_matrix, backward_matrix)`` at the requested
    steps (0 means the initial operator)."""
    n = cfg.n_qubits
    vf = v0.astype(complex)
    vb = v0.astype(complex)
    if 0 in record_steps:
        on_record(0, vf, vb)
    for step in range(1, cfg.n_steps + 1):
        cs = sample_step_couplings(cfg, rng)
        uf = _step_unitary(np.tensordot(cs.forward, ops, axes=(0, 0)), cfg.dt)
        ub = _step_unitary(np.tensordot(cs.backward, ops, axes=(0, 0)), cfg.dt)
        vf = uf @ vf @ uf.conj().T
        vb = ub @ vb @ ub.conj().T
        if damp_factors is not None:
            vf = _damp(vf, damp_factors, n)
            vb = _damp(vb, damp_factors, n)
        if step in record_steps:
            on_record(step, vf, vb)


def run_protocol(cfg: CircuitConfig, w: PauliOperator, v: PauliOperator,
                 phi: float, rng: np.random.Generator | None = None) -> float:
    """One Monte Carlo sample of the full noisy protocol value

        f(phi) = < D_U~(V) e^{i phi W} D_U(V) e^{-i phi W} >

    at infinite temperature.  The epsilon prefactor of the initial state is
    factored out analytically; V is evolved directly through both noisy
    branches.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n = cfg.n_qubits
    ops = _pair_operators(n)
    kappa = cfg.noise_rate
    damp = np.exp(-kappa * cfg.dt * pauli_weights(n)) if kappa > 0 else None
    final: dict[str, np.ndarray] = {}

    def on_record(step, vf, vb):
        final["f"], final["b"] = vf, vb

    _evolve_branches(cfg, v.to_matrix(), rng, ops, damp, {cfg.n_steps}, on_record)
    w_mat = w.to_matrix().astype(complex)
    rot = math.cos(phi) * np.eye(2 ** n) + 1j * math.sin(phi) * w_mat
    val = np.trace(final["b"] @ rot @ final["f"] @ rot.conj().T) / 2 ** n
    return float(val.real)


def dressed_commutator_sample(cfg: CircuitConfig, w: PauliOperator, v: PauliOperator,
                              rng: np.random.Generator | None = None) -> float:
    """Direct per-sample evaluation of <[W, D_U~(V)] [W, D_U(V)]>, the
    second phi-derivative of the protocol value at phi = 0."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n = cfg.n_qubits
    ops = _pair_operators(n)
    kappa = cfg.noise_rate
    damp = np.exp(-kappa * cfg.dt * pauli_weights(n)) if kappa > 0 else None
    final: dict[str, np.ndarray] = {}

    def on_record(step, vf, vb):
        final["f"], final["b"] = vf, vb

    _evolve_branches(cfg, v.to_matrix(), rng, ops, damp, {cfg.n_steps}, on_record)
    w_mat = w.to_matrix().astype(complex)
    comm_f = w_mat @ final["f"] - final["f"] @ w_mat
    comm_b = w_mat @ final["b"] - final["b"] @ w_mat
    return float((np.trace(comm_b @ comm_f) / 2 ** n).real)


@dataclass(frozen=True)
class OracleEstimates:
    """Ensemble means and standard errors at the requested sample times."""

    times: np.ndarray
    echo: np.ndarray
    echo_err: np.ndarray
    dressed_otoc: np.ndarray
    dressed_otoc_err: np.ndarray
    weight_profile: np.ndarray       # shape (n_times, N)
    weight_profile_err: np.ndarray
    autocorrelator: np.ndarray       # forward-branch coefficient on the initial string
    autocorrelator_err: np.ndarray
    n_samples: int


def _sample_block(cfg: CircuitConfig, v_code: int, w_site: int, w_axis: int,
                  record_steps: list[int], sample_range: tuple[int, int]):
    """Raw per-sample observables for samples [start, stop)."""
    n = cfg.n_qubits
    ops = _pair_operators(n)
    weights = pauli_weights(n)
    anti = anticommutation_mask(n, w_site, w_axis)
    damp = np.exp(-cfg.noise_rate * cfg.dt * weights) if cfg.noise_rate > 0 else None
    v0 = _coeffs_to_matrix(np.eye(4 ** n)[v_code] + 0.0, n)
    steps = set(record_steps)
    step_index = {s: i for i, s in enumerate(record_steps)}
    start, stop = sample_range
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_samples)

    n_rec = len(record_steps)
    echo = np.empty((stop - start, n_rec))
    dotoc = np.empty((stop - start, n_rec))
    auto = np.empty((stop - start, n_rec))
    bw = np.empty((stop - start, n_rec, n))

    for s in range(start, stop):
        rng = np.random.default_rng(seeds[s])
        row = s - start

        def on_record(step, vf, vb):
            i = step_index[step]
            cf = _matrix_to_coeffs(vf, n).real
            cb = _matrix_to_coeffs(vb, n).real
            prod = cf * cb
            echo[row, i] = prod.sum()
            dotoc[row, i] = 4.0 * prod[anti].sum()
            auto[row, i] = cf[v_code]
            bw[row, i] = np.bincount(weights, weights=prod, minlength=n + 1)[1:]

        _evolve_branches(cfg, v0, rng, ops, damp, steps, on_record)
    return echo, dotoc, auto, bw


def estimate_observables(cfg: CircuitConfig, w: PauliOperator, v: PauliOperator,
                         sample_times, n_jobs: int = 1) -> OracleEstimates:
    """Monte Carlo estimates of echo, dressed OTOC, weight-binned overlap
    profile b_w, and the initial-string autocorrelator.

    ``v`` (a single Pauli string) is the evolved operator; ``w`` (a weight-1
    Pauli) is the static rotation the dressed OTOC counts anticommutation
    against.  Sample times snap to the nearest circuit step.  Results are
    bit-identical for any ``n_jobs``.
    """
    v_code = v.single_code()
    w_code = w.single_code()
    w_weight = sum(1 for s in range(cfg.n_qubits) if _digit(w_code, s, cfg.n_qubits) != 0)
    if w_weight != 1:
        raise ValueError("static operator W must have weight 1")
    w_site = next(s for s in range(cfg.n_qubits) if _digit(w_code, s, cfg.n_qubits) != 0)
    w_axis = _digit(w_code, w_site, cfg.n_qubits)

    times = np.atleast_1d(np.asarray(sample_times, dtype=float))
    record_steps = sorted({int(round(t / cfg.dt)) for t in times})
    if record_steps[0] < 0 or record_steps[-1] > cfg.n_steps:
        raise ValueError("sample times outside [0, total_time]")

    if n_jobs <= 1:
        blocks = [_sample_block(cfg, v_code, w_site, w_axis, record_steps,
                                (0, cfg.n_samples))]
    else:
        bounds = np.linspace(0, cfg.n_samples, n_jobs + 1).astype(int)
        ranges = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=len(ranges)) as pool:
            blocks = list(pool.map(_sample_block,
                                   *zip(*[(cfg, v_code, w_site, w_axis, record_steps, rg)
                                          for rg in ranges])))

    echo, dotoc, auto, bw = (np.concatenate(parts) for parts in zip(*blocks))
    ns = cfg.n_samples
    root = math.sqrt(ns)

    def stats(arr):
        return arr.mean(axis=0), arr.std(axis=0, ddof=1) / root

    echo_m, echo_e = stats(echo)
    dotoc_m, dotoc_e = stats(dotoc)
    auto_m, auto_e = stats(auto)
    bw_m, bw_e = stats(bw)
    return OracleEstimates(
        times=np.array(record_steps, dtype=float) * cfg.dt,
        echo=echo_m, echo_err=echo_e,
        dressed_otoc=dotoc_m, dressed_otoc_err=dotoc_e,
        weight_profile=bw_m, weight_profile_err=bw_e,
        autocorrelator=auto_m, autocorrelator_err=auto_e,
        n_samples=ns,
    )
