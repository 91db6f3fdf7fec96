"""Kraus-unraveled imaginary-time trajectories with per-step checkpoints.

A trajectory is labeled by a bit matrix of shape (n_steps, n_jumps).  One
step applies, in order, the selected Kraus branch of every jump and then the
non-unitary drift exp(-dt * h_eff).  States are kept normalized; the true
(unnormalized) trajectory is exp(log_weight) times the stored state.

Two unravelings are supported:

* weak:   K(b) = 2**-0.5 * exp(+/- i sqrt(dt) a P), sign (+ for b=0);
* strong: K(0) = (1 - dt a^2 / 2) I,  K(1) = sqrt(dt) a P.

The identity component of h_eff only ever touches log_weight, never the
amplitudes, so normalized states are exactly invariant under shifts of the
kappa constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BilayerError
from .mapping import DynamicsSpec
from .paulis import (
    StateVector,
    imaginary_term_apply,
    pauli_apply,
    pauli_rotation_apply,
)

_HALF_LOG2 = 0.5 * math.log(2.0)


@dataclass(frozen=True)
class Schedule:
    """Imaginary-time grid: n_steps slices of width dt (beta = n_steps * dt)."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0.0 or not np.isfinite(self.dt):
            raise BilayerError("dt must be positive and finite")
        if self.n_steps < 0:
            raise BilayerError("n_steps must be non-negative")

    @property
    def beta(self) -> float:
        return self.dt * self.n_steps

    @classmethod
    def for_beta(cls, beta: float, dt: float) -> "Schedule":
        steps = beta / dt
        n = int(round(steps))
        if abs(steps - n) > 1e-9:
            raise BilayerError(f"beta={beta} is not an integer multiple of dt={dt}")
        return cls(dt, n)


def blank_label(sched: Schedule, dyn: DynamicsSpec) -> np.ndarray:
    return np.zeros((sched.n_steps, dyn.n_jumps), dtype=np.uint8)


def random_label(sched: Schedule, dyn: DynamicsSpec, rng) -> np.ndarray:
    return rng.integers(0, 2, size=(sched.n_steps, dyn.n_jumps), dtype=np.uint8)


@dataclass
class TrajectoryState:
    """Final normalized state plus log weight and per-step checkpoints.

    checkpoints[k] is (normalized state, cumulative log weight) after k full
    steps, or None where the checkpoint stride skipped it; indices 0 and
    n_steps are always present.
    """

    label: np.ndarray
    state: StateVector
    log_weight: float
    checkpoints: list

    @property
    def n_steps(self) -> int:
        return self.label.shape[0]


def kraus_apply(state: StateVector, dyn: DynamicsSpec, jump_index: int, bit: int, dt: float):
    """Apply Kraus branch ``bit`` of jump ``jump_index``.

    Returns (normalized state, log norm increment).  The increment can be
    -inf for a zero-amplitude strong jump (annihilated branch).
    """
    if bit not in (0, 1):
        raise BilayerError("bit must be 0 or 1")
    a, p = dyn.jumps[jump_index]
    if dyn.mode == "weak":
        theta = math.sqrt(dt) * a
        new = pauli_rotation_apply(state, p, theta, sign=1 if bit == 0 else -1)
        nrm = new.norm()
        return StateVector(new.n_sites, new.amps / nrm), math.log(nrm) - _HALF_LOG2
    # strong
    if bit == 0:
        scal = 1.0 - dt * a * a / 2.0
        if scal <= 0.0:
            raise BilayerError("dt too large for the strong unraveling (1 - dt a^2/2 <= 0)")
        return state.copy(), math.log(scal)
    new = pauli_apply(p, state)
    inc = -math.inf if a == 0.0 else 0.5 * math.log(dt) + math.log(a)
    return new, inc


def heff_apply(state: StateVector, dyn: DynamicsSpec, dt: float, exact: bool = False):
    """Apply exp(-dt * h_eff) and renormalize; returns (state, log increment).

    Default is the term-split product over h_eff's canonical term order; the
    identity component contributes only to the log increment.  ``exact``
    applies the dense matrix exponential of the non-identity part instead
    (small systems; used to measure the splitting error).
    """
    shift = dyn.h_eff.identity_coefficient
    work = state
    if exact:
        mat = scipy.linalg.expm(-dt * dyn.h_eff.non_identity().to_matrix())
        work = StateVector(state.n_sites, mat @ state.amps)
    else:
        for c, p in dyn.h_eff.terms:
            if p.is_identity:
                continue
            work = imaginary_term_apply(work, p, dt * c)
    nrm = work.norm()
    return StateVector(work.n_sites, work.amps / nrm), math.log(nrm) - dt * shift


def _step(state: StateVector, lw: float, dyn: DynamicsSpec, dt: float, bits) -> tuple:
    for i in range(dyn.n_jumps):
        state, inc = kraus_apply(state, dyn, i, int(bits[i]), dt)
        lw += inc
    state, inc = heff_apply(state, dyn, dt)
    return state, lw + inc


def propagate(
    dyn: DynamicsSpec,
    sched: Schedule,
    label: np.ndarray,
    init: StateVector,
    checkpoint_stride: int = 1,
) -> TrajectoryState:
    """Run all steps of ``label`` from ``init``; deterministic and pure."""
    label = np.asarray(label, dtype=np.uint8)
    if label.shape != (sched.n_steps, dyn.n_jumps):
        raise BilayerError(
            f"label shape {label.shape} does not match (n_steps, n_jumps)="
            f"({sched.n_steps}, {dyn.n_jumps})"
        )
    if checkpoint_stride < 1:
        raise BilayerError("checkpoint_stride must be >= 1")
    nrm = init.norm()
    state = StateVector(init.n_sites, init.amps / nrm)
    lw = math.log(nrm)
    n = sched.n_steps
    checkpoints: list = [None] * (n + 1)
    checkpoints[0] = (state.copy(), lw)
    for t in range(n):
        state, lw = _step(state, lw, dyn, sched.dt, label[t])
        if (t + 1) % checkpoint_stride == 0 or t + 1 == n:
            checkpoints[t + 1] = (state.copy(), lw)
    return TrajectoryState(label.copy(), state, lw, checkpoints)


def recompute_from(
    traj: TrajectoryState,
    dyn: DynamicsSpec,
    sched: Schedule,
    from_step: int,
) -> TrajectoryState:
    """Replay steps from_step..n_steps-1 of traj.label, reusing checkpoints.

    Call after editing traj.label at step index ``from_step`` (0-based).  The
    replay starts at the nearest stored checkpoint at or before from_step, so
    the result is identical (to rounding) to a full propagate of the edited
    label.
    """
    n = traj.n_steps
    if not 0 <= from_step <= n:
        raise BilayerError(f"from_step {from_step} outside 0..{n}")
    start = from_step
    while traj.checkpoints[start] is None:
        start -= 1
    state, lw = traj.checkpoints[start]
    state = state.copy()
    checkpoints = [
        (cp[0].copy(), cp[1]) if cp is not None else None
        for cp in traj.checkpoints[: start + 1]
    ] + [None] * (n - start)
    for t in range(start, n):
        state, lw = _step(state, lw, dyn, sched.dt, traj.label[t])
        if traj.checkpoints[t + 1] is not None or t + 1 == n:
            checkpoints[t + 1] = (state.copy(), lw)
    return TrajectoryState(traj.label.copy(), state, lw, checkpoints)


def sequential_sample(
    dyn: DynamicsSpec,
    sched: Schedule,
    init: StateVector,
    rng: np.random.Generator,
) -> TrajectoryState:
    """Draw a label bit-by-bit from the per-branch norms of the current state.

    p(b) is proportional to <psi|K_b^dag K_b|psi>; in the non-postselected
    regime (constant h_eff) this samples trajectories from their physical
    weights, which makes it a cheap proposal initializer elsewhere.
    """
    nrm = init.norm()
    state = StateVector(init.n_sites, init.amps / nrm)
    lw = math.log(nrm)
    n, m = sched.n_steps, dyn.n_jumps
    label = np.zeros((n, m), dtype=np.uint8)
    checkpoints: list = [None] * (n + 1)
    checkpoints[0] = (state.copy(), lw)
    for t in range(n):
        for i in range(m):
            cand = [kraus_apply(state, dyn, i, b, sched.dt) for b in (0, 1)]
            w = np.array([math.exp(2.0 * inc) if np.isfinite(inc) else 0.0 for _, inc in cand])
            total = w.sum()
            if total == 0.0:
                raise BilayerError("both Kraus branches annihilate the state")
            bit = 1 if rng.random() < w[1] / total else 0
            label[t, i] = bit
            state, inc = cand[bit]
            lw += inc
        state, inc = heff_apply(state, dyn, sched.dt)
        lw += inc
        checkpoints[t + 1] = (state.copy(), lw)
    return TrajectoryState(label, state, lw, checkpoints)
