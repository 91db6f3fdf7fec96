"""Exact references: dense channel evolution, doubled-space Krylov, enumerations.

The decomposed channel applies, per slice, exactly the same Kraus branches
and the same ordered product of drift factors as the trajectory engine, so
trajectory averages must match it with no splitting gap.  The exact-slice
channel and the doubled-space Krylov evolution instead apply the full slice
generator exactly; comparing the two cross-checks the decomposition, the
vectorization dictionary and both correlator formulas through independent
linear algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .engine import Schedule, propagate
from .errors import (
    BilayerError,
    KrylovConvergenceError,
    NumericalFailure,
    SizeLimitExceeded,
)
from .mapping import (
    DynamicsSpec,
    antiunitary_conjugate,
    bilayer_operator_sum,
    lindblad_superoperator,
)
from .paulis import OperatorSum, PauliString, StateVector, pauli_apply_amps

ENUM_MAX_BITS = 12


@dataclass
class DensityMatrix:
    """Unnormalized monolayer density matrix; the channel shrinks its trace."""

    n_sites: int
    mat: np.ndarray

    def __post_init__(self):
        self.mat = np.asarray(self.mat, dtype=complex)
        dim = 1 << self.n_sites
        if self.mat.shape != (dim, dim):
            raise BilayerError("density matrix shape does not match n_sites")

    @classmethod
    def from_state(cls, state: StateVector) -> "DensityMatrix":
        return cls(state.n_sites, np.outer(state.amps, state.amps.conj()))

    @classmethod
    def from_bitstring(cls, bits: str) -> "DensityMatrix":
        return cls.from_state(StateVector.from_bitstring(bits))

    def trace(self) -> float:
        return float(np.trace(self.mat).real)

    def purity(self) -> float:
        return float(np.vdot(self.mat, self.mat).real)  # Tr(rho^dag rho) = Tr(rho^2)

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.n_sites, self.mat.copy())


class ChannelOperators:
    """Dense matrices for one decomposed channel slice of a given dynamics.

    ``apply_trace_scale=False`` drops the scalar exp(-2 dt c) of h_eff's
    identity component; every reported quantity is a ratio in which that
    factor cancels, and omitting it makes sweeps bitwise invariant under
    decay-rate shifts (and immune to deep-beta underflow).
    """

    def __init__(self, dyn: DynamicsSpec, dt: float, apply_trace_scale: bool = True):
        self.dyn = dyn
        self.dt = dt
        self.jump_ops = []
        for a, p in dyn.jumps:
            pmat = p.to_matrix()
            if dyn.mode == "weak":
                theta = math.sqrt(dt) * a
                u = math.cos(theta) * np.eye(pmat.shape[0]) + 1j * math.sin(theta) * pmat
                self.jump_ops.append(("weak", u))
            else:
                s0 = 1.0 - dt * a * a / 2.0
                if s0 <= 0.0:
                    raise BilayerError("dt too large for the strong unraveling")
                k1 = math.sqrt(dt) * a * pmat
                self.jump_ops.append(("strong", s0, k1))
        self.drift_factors = []
        for c, p in dyn.h_eff.terms:
            if p.is_identity:
                continue
            tau = dt * c
            f = math.cosh(tau) * np.eye(1 << dyn.n_sites) - math.sinh(tau) * p.to_matrix()
            self.drift_factors.append(f)
        self.trace_scale = (
            math.exp(-2.0 * dt * dyn.h_eff.identity_coefficient)
            if apply_trace_scale
            else 1.0
        )

    def step(self, mat: np.ndarray) -> np.ndarray:
        for op in self.jump_ops:
            if op[0] == "weak":
                u = op[1]
                mat = 0.5 * (u @ mat @ u.conj().T + u.conj().T @ mat @ u)
            else:
                _, s0, k1 = op
                mat = (s0 * s0) * mat + k1 @ mat @ k1.conj().T
        for f in self.drift_factors:
            mat = f @ mat @ f  # factors are Hermitian
        return self.trace_scale * mat


def channel_step(rho: DensityMatrix, dyn: DynamicsSpec, dt: float) -> DensityMatrix:
    """One decomposed slice: every jump's Kraus pair, then the drift product."""
    if rho.n_sites != dyn.n_sites:
        raise BilayerError("density matrix size does not match dynamics")
    return DensityMatrix(rho.n_sites, ChannelOperators(dyn, dt).step(rho.mat))


def renyi2_correlator(rho: DensityMatrix, a: OperatorSum, b: OperatorSum | None = None) -> float:
    """Tr(rho A rho B) / Tr(rho^2); B = identity when omitted."""
    p2 = rho.purity()
    if p2 <= 0.0:
        raise NumericalFailure("vanishing purity in renyi2_correlator")
    amat = a.to_matrix()
    if b is None:
        val = np.vdot(rho.mat, amat @ rho.mat)  # Tr(rho A rho) = Tr(rho^2 A)
    else:
        val = np.trace(rho.mat @ amat @ rho.mat @ b.to_matrix())
    val = complex(val)
    if abs(val.imag) > 1e-9 * max(1.0, abs(val.real)) * max(p2, 1.0):
        raise NumericalFailure(f"renyi2 value has imaginary part {val.imag:.3g}")
    return float(val.real) / p2


# --- exact-slice channel (no splitting) ------------------------------------


def exact_slice_propagator(dyn: DynamicsSpec, dt: float) -> np.ndarray:
    """expm(dt * generator) in the doubled space; limited to n_sites <= 4."""
    if dyn.n_sites > 4:
        raise SizeLimitExceeded("exact-slice propagator limited to n_sites <= 4")
    return scipy.linalg.expm(dt * lindblad_superoperator(dyn))


def vectorize_density(rho: DensityMatrix) -> StateVector:
    """Doubled-space vector of rho: layer l carries the ket index (low bits),
    layer r the conjugated bra index (high bits)."""
    n = rho.n_sites
    vec_f = rho.mat.T.reshape(-1)  # component j*2^n + i  <-  rho[i, j]
    ybar = PauliString(2 * n, ((1 << n) - 1) << n, ((1 << n) - 1) << n)
    amps = (1j ** n) * pauli_apply_amps(ybar, vec_f)
    return StateVector(2 * n, amps)


def unvectorize_density(psi: StateVector, n_sites: int) -> DensityMatrix:
    n = n_sites
    ybar = PauliString(2 * n, ((1 << n) - 1) << n, ((1 << n) - 1) << n)
    vec_f = ((-1j) ** n) * pauli_apply_amps(ybar, psi.amps)
    mat = vec_f.reshape(1 << n, 1 << n).T
    return DensityMatrix(n, mat)


def exact_channel_step(rho: DensityMatrix, dyn: DynamicsSpec, dt: float) -> DensityMatrix:
    prop = exact_slice_propagator(dyn, dt)
    psi = vectorize_density(rho)
    return unvectorize_density(StateVector(psi.n_sites, prop @ psi.amps), rho.n_sites)


# --- doubled-space Krylov evolution ----------------------------------------


def lanczos_expm_apply(apply_h, v: np.ndarray, tau: float, subspace: int = 30, tol: float = 1e-10):
    """Approximate expm(-tau * H) v for Hermitian H given as a matvec.

    Lanczos with full reorthogonalization; stops when the standard residual
    estimate drops below tol * ||v||, raises KrylovConvergenceError at the
    subspace cap otherwise.
    """
    norm0 = np.linalg.norm(v)
    if norm0 == 0.0:
        return v.copy()
    basis = [v / norm0]
    alphas: list[float] = []
    betas: list[float] = []
    w = None
    for k in range(subspace):
        w = apply_h(basis[k])
        alpha = float(np.vdot(basis[k], w).real)
        alphas.append(alpha)
        w = w - alpha * basis[k]
        if k > 0:
            w = w - betas[k - 1] * basis[k - 1]
        for q in basis:  # full reorthogonalization
            w = w - np.vdot(q, w) * q
        beta = float(np.linalg.norm(w))
        t_mat = np.diag(alphas)
        for j, b in enumerate(betas):
            t_mat[j, j + 1] = t_mat[j + 1, j] = b
        y = scipy.linalg.expm(-tau * t_mat)[:, 0]
        residual = beta * abs(y[-1])
        if residual <= tol or beta <= 1e-14:
            out = np.zeros_like(v)
            for j in range(len(basis)):
                out += y[j] * basis[j]
            return norm0 * out
        betas.append(beta)
        basis.append(w / beta)
    raise KrylovConvergenceError(
        f"Lanczos did not reach tol={tol} within subspace {subspace}"
    )


def bilayer_krylov_evolve(
    terms,
    n_sites: int,
    sched: Schedule,
    init: StateVector,
    subspace: int = 30,
    tol: float = 1e-10,
) -> list[StateVector]:
    """Apply expm(-dt * H_total) per slice on the doubled space, normalizing
    each step.  Returns the states after 0..n_steps steps."""
    if 2 * n_sites > 16:
        raise SizeLimitExceeded("doubled-space Krylov limited to 2*n_sites <= 16")
    ham = bilayer_operator_sum(terms, n_sites)
    if init.n_sites != 2 * n_sites:
        raise BilayerError("initial state must live on 2*n_sites qubits")
    out = [init.normalized()]
    for _ in range(sched.n_steps):
        amps = lanczos_expm_apply(ham.apply_amps, out[-1].amps, sched.dt, subspace, tol)
        out.append(StateVector(2 * n_sites, amps).normalized())
    return out


def bilayer_correlators(psi: StateVector, a: OperatorSum, n_sites: int):
    """(C1, C2) evaluated directly on a doubled-space state.

    C1 uses A on layer l alone; C2 additionally applies the layer conjugate
    of A on layer r, which requires A to be a single Pauli string.
    """
    n = n_sites
    a_l = OperatorSum(
        2 * n, [(c, PauliString(2 * n, p.x_mask, p.z_mask)) for c, p in a.terms]
    )
    nrm2 = float(np.vdot(psi.amps, psi.amps).real)
    c1 = float(np.vdot(psi.amps, a_l.apply_amps(psi.amps)).real) / nrm2
    if len(a.terms) != 1:
        raise BilayerError("interlayer correlator needs a single-Pauli observable")
    coeff, p = a.terms[0]
    pair = PauliString(
        2 * n, p.x_mask | (p.x_mask << n), p.z_mask | (p.z_mask << n)
    )
    sign = (-1.0) ** p.weight  # layer conjugation of the r factor
    val = sign * coeff * coeff * np.vdot(psi.amps, pauli_apply_amps(pair, psi.amps))
    c2 = float(val.real) / nrm2
    return c1, c2


# --- exhaustive pair sums ---------------------------------------------------


def enumerate_pair_sums(
    dyn: DynamicsSpec,
    sched: Schedule,
    a: OperatorSum,
    init: StateVector,
    max_bits: int = ENUM_MAX_BITS,
):
    """Sums over all trajectory pairs: (sum |I|^2, sum A conj(I), sum |A|^2)
    with I = <psi_s|psi_s'> and A = <psi_s|A|psi_s'>, in log-safe arithmetic.

    The number of labels is 2**(n_steps * n_jumps); requests beyond
    ``max_bits`` label bits raise SizeLimitExceeded with the count.
    """
    bits = sched.n_steps * dyn.n_jumps
    if bits > max_bits:
        raise SizeLimitExceeded(
            f"enumeration would need 2**{bits} = {2 ** bits} labels "
            f"({4 ** bits} pairs); limit is 2**{max_bits}"
        )
    n_labels = 1 << bits
    dim = 1 << dyn.n_sites
    states = np.zeros((n_labels, dim), dtype=complex)
    logw = np.zeros(n_labels)
    for idx in range(n_labels):
        label = _label_from_index(idx, sched.n_steps, dyn.n_jumps)
        traj = propagate(dyn, sched, label, init)
        states[idx] = traj.state.amps
        logw[idx] = traj.log_weight
    finite = np.isfinite(logw)
    scale = float(np.max(logw[finite])) if finite.any() else 0.0
    w = np.where(finite, np.exp(logw - scale), 0.0)
    weighted = states * w[:, None]
    gram_i = weighted.conj() @ weighted.T
    applied = np.asarray([a.apply_amps(row) for row in weighted])
    gram_a = weighted.conj() @ applied.T
    back = math.exp(4.0 * scale)
    sum_i2 = float(np.sum(np.abs(gram_i) ** 2)) * back
    cross = complex(np.sum(gram_a * np.conj(gram_i))) * back
    if abs(cross.imag) > 1e-9 * max(1.0, abs(cross.real)):
        raise NumericalFailure("pair sum A conj(I) is not real")
    sum_a2 = float(np.sum(np.abs(gram_a) ** 2)) * back
    return sum_i2, float(cross.real), sum_a2


def _label_from_index(idx: int, n_steps: int, n_jumps: int) -> np.ndarray:
    label = np.zeros((n_steps, n_jumps), dtype=np.uint8)
    for t in range(n_steps):
        for i in range(n_jumps):
            label[t, i] = (idx >> (t * n_jumps + i)) & 1
    return label


# --- two-site dimer ----------------------------------------------------------


@dataclass(frozen=True)
class DimerParams:
    """X-coupled dimer with opposite longitudinal fields on the two layers."""

    J: float
    h: float
    beta: float
    dt: float

    def __post_init__(self):
        if self.J < 0:
            raise BilayerError("J must be non-negative")
        if self.h < 0:
            raise BilayerError("h must be non-negative")
        if self.dt <= 0:
            raise BilayerError("dt must be positive")
        Schedule.for_beta(self.beta, self.dt)  # validates the grid

    def schedule(self) -> Schedule:
        return Schedule.for_beta(self.beta, self.dt)


def dimer_dynamics(J: float, h: float, mode: str = "strong") -> DynamicsSpec:
    """Monolayer dynamics of the dimer: one X jump, drift h|0><0| = h(I+Z)/2.

    Matches build_dynamics(decompose_bilayer(dimer_terms(J, h/2))) exactly,
    including the one-norm kappa = J + h; the h in this helper is the drift
    gap, twice the Zeeman coefficient of the two-qubit term list.

    The strong unraveling is the one whose pair statistics reduce to the
    classical chain of dimer_transfer_matrix.  Its trajectories are basis
    states with Kronecker-delta overlaps, which disconnects single-bit-flip
    pair sampling, so Metropolis estimates should use mode='weak' (identical
    generator, channels agree to O(dt^2) per slice).
    """
    n = 1
    h_eff = OperatorSum(
        n, [(h / 2.0, PauliString(n)), (h / 2.0, PauliString(n, 0, 1))]
    )
    return DynamicsSpec(
        n_sites=n,
        mode=mode,
        jumps=((math.sqrt(J), PauliString(n, 1, 0)),),
        h_eff=h_eff,
        kappa_total=J + h,
        kappas=(J + h,),
    )


def dimer_exact(params: DimerParams) -> float:
    """Tr(rho^2 Z)/Tr(rho^2) from the decomposed dimer channel, init |0>."""
    dyn = dimer_dynamics(params.J, params.h)
    sched = params.schedule()
    rho = DensityMatrix.from_bitstring("0")
    ops = ChannelOperators(dyn, sched.dt)
    mat = rho.mat
    for _ in range(sched.n_steps):
        mat = ops.step(mat)
    z = OperatorSum(1, [(1.0, PauliString(1, 0, 1))])
    return renyi2_correlator(DensityMatrix(1, mat), z)


def dimer_transfer_matrix(params: DimerParams) -> float:
    """Same quantity as dimer_exact through the classical chain of the pair.

    A trajectory pair maps onto 2n bonds of Ising spins pinned to +1 (the
    initial |0>) at both ends.  Bond weights come from the squared Kraus
    amplitudes (flip: J dt, stay: (1 - J dt/2)^2); every post-jump position
    carries the squared drift factor exp(-2 h dt) when it sits in |0>, and
    the middle position collects it from both halves.  The returned value is
    the middle-spin average.
    """
    sched = params.schedule()
    n = sched.n_steps
    if n == 0:
        return 1.0
    dt = params.dt
    stay = (1.0 - dt * params.J / 2.0) ** 2
    flip = dt * params.J
    bond = np.array([[stay, flip], [flip, stay]])
    sojourn = np.diag([math.exp(-2.0 * params.h * dt), 1.0])
    half = np.array([1.0, 0.0])
    for _ in range(n):
        half = sojourn @ (bond @ half)
    weights = half * half  # both halves propagate identically from |0>
    total = weights.sum()
    if total <= 0.0:
        raise NumericalFailure("transfer-matrix weights sum to zero")
    return float((weights[0] - weights[1]) / total)


def dimer_dephasing_exact(J: float, beta: float) -> float:
    """Continuum h = 0 answer: sech(2 J beta)."""
    return 1.0 / math.cosh(2.0 * J * beta)
