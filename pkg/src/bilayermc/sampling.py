"""Metropolis pair chains and the two Renyi-2 estimators.

Both estimators average simple functions of trajectory pairs (s, s'):

* intralayer   C1 = E_p[ A(s,s') / I(s,s') ],    p ~ |I|^2
* interlayer   C2 = C1 / E_q[ I(s,s') / A(s,s') ],  q ~ |A|^2

with I = <psi_s|psi_s'> and A = <psi_s|A|psi_s'>.  Chains are independent
given (seed, suite, chain index); merging concatenates per-chain batch
means, so results do not depend on execution order or thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .engine import Schedule, TrajectoryState, propagate, random_label, recompute_from
from .errors import DegenerateChain, NumericalFailure, SamplerError
from .kernels import build_tables, drive_pair_chain
from .mapping import DynamicsSpec
from .paulis import OperatorSum, StateVector, inner

# suite codes keep the rng streams of every estimator component disjoint
SUITE_INTRA_P = 0
SUITE_INTER_P = 1
SUITE_INTER_Q = 2


@dataclass(frozen=True)
class MCConfig:
    """Per-estimator Monte Carlo budget and reproducibility knobs.

    burn_in defaults to 10% of n_updates; thinning to one sweep (n_steps *
    n_jumps proposals); n_batches is per chain.
    """

    n_chains: int = 8
    n_updates: int = 10_000
    burn_in: int | None = None
    thinning: int | None = None
    n_batches: int = 16
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.n_chains < 1:
            raise SamplerError("n_chains must be >= 1")
        if self.n_updates < 1:
            raise SamplerError("n_updates must be >= 1")
        if self.threads < 1:
            raise SamplerError("threads must be >= 1")

    def resolved_burn_in(self) -> int:
        if self.burn_in is not None:
            if not 0 <= self.burn_in < self.n_updates:
                raise SamplerError("burn_in must lie in [0, n_updates)")
            return self.burn_in
        return self.n_updates // 10

    def resolved_thinning(self, sched: Schedule, dyn: DynamicsSpec) -> int:
        if self.thinning is not None:
            if self.thinning < 1:
                raise SamplerError("thinning must be >= 1")
            return self.thinning
        return max(1, sched.n_steps * dyn.n_jumps)


@dataclass
class EstimatorResult:
    mean: float
    stderr: float
    n_samples: int
    n_batches: int
    acceptance_rate: float
    reliable: bool


def batch_means(series, n_batches: int):
    """Grand mean and batch-means stderr of a correlated series.

    Splits into n_batches contiguous equal batches, truncating the remainder
    at the front; stderr is the sample std of batch means over sqrt(n).
    """
    arr = np.asarray(series, dtype=float)
    if n_batches < 2:
        raise SamplerError("n_batches must be >= 2")
    if arr.size < 2 * n_batches:
        raise SamplerError(
            f"series of length {arr.size} too short for {n_batches} batches"
        )
    size = arr.size // n_batches
    trimmed = arr[arr.size - size * n_batches :]
    means = trimmed.reshape(n_batches, size).mean(axis=1)
    return float(trimmed.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def _batch_mean_list(series: np.ndarray, n_batches: int) -> np.ndarray:
    """Batch means with the batch count relaxed for short series."""
    if series.size == 0:
        return np.empty(0)
    nb = min(n_batches, max(1, series.size // 2)) if series.size > 1 else 1
    size = series.size // nb
    trimmed = series[series.size - size * nb :]
    return trimmed.reshape(nb, size).mean(axis=1)


# --- reference Metropolis step on engine objects -----------------------------


@dataclass
class PairChainState:
    """A trajectory pair plus its cached log target value.

    target 'P' weights pairs by |<psi_s|psi_s'>|^2, 'Q' by the observable
    matrix element; log_overlap_sq is the P-form 2l_s + 2l_s' + 2 ln|<phi|phi>|.
    """

    traj: TrajectoryState
    traj_prime: TrajectoryState
    log_overlap_sq: float
    target: str
    observable: OperatorSum | None = None
    log_target: float = -math.inf
    rng_state: object = None


def _pair_log_form(traj: TrajectoryState, traj_prime: TrajectoryState, val: complex) -> float:
    if abs(val) == 0.0 or not (np.isfinite(traj.log_weight) and np.isfinite(traj_prime.log_weight)):
        return -math.inf
    return 2.0 * (traj.log_weight + traj_prime.log_weight) + 2.0 * math.log(abs(val))


def _pair_target(traj, traj_prime, target: str, observable) -> tuple[float, float]:
    """(log_overlap_sq, log_target) for a pair."""
    ov = inner(traj.state, traj_prime.state)
    log_ov = _pair_log_form(traj, traj_prime, ov)
    if target == "P":
        return log_ov, log_ov
    av = observable.matrix_element(traj.state, traj_prime.state)
    return log_ov, _pair_log_form(traj, traj_prime, av)


def pair_chain_init(
    dyn: DynamicsSpec,
    sched: Schedule,
    init: StateVector,
    target: str,
    rng,
    observable: OperatorSum | None = None,
) -> PairChainState:
    """Fresh pair chain from uniform random labels."""
    if target not in ("P", "Q"):
        raise SamplerError("target must be 'P' or 'Q'")
    if target == "Q" and observable is None:
        raise SamplerError("Q target needs an observable")
    traj = propagate(dyn, sched, random_label(sched, dyn, rng), init)
    traj_prime = propagate(dyn, sched, random_label(sched, dyn, rng), init)
    log_ov, log_t = _pair_target(traj, traj_prime, target, observable)
    return PairChainState(traj, traj_prime, log_ov, target, observable, log_t)


def metropolis_step(
    chain: PairChainState,
    dyn: DynamicsSpec,
    sched: Schedule,
    rng,
    observable: OperatorSum | None = None,
) -> PairChainState:
    """One single-bit-flip proposal with min(1, target ratio) acceptance.

    A chain whose current target is exactly zero accepts any proposal with a
    nonzero target (degenerate-start escape).  Rejected moves restore the
    cached suffix untouched.
    """
    obs = observable if observable is not None else chain.observable
    n, m = sched.n_steps, dyn.n_jumps
    if n * m == 0:
        raise SamplerError("no bits to flip at n_steps * n_jumps = 0")
    pos = int(rng.integers(0, 2 * n * m))
    side, rem = divmod(pos, n * m)
    t, i = divmod(rem, m)
    victim = chain.traj if side == 0 else chain.traj_prime
    edited = TrajectoryState(
        victim.label.copy(), victim.state, victim.log_weight, victim.checkpoints
    )
    edited.label[t, i] ^= 1
    edited = recompute_from(edited, dyn, sched, t)
    pair = (edited, chain.traj_prime) if side == 0 else (chain.traj, edited)
    log_ov, log_t = _pair_target(pair[0], pair[1], chain.target, obs)
    if chain.log_target == -math.inf:
        accept = log_t > -math.inf
    else:
        u = float(rng.random())
        accept = True if u <= 0.0 else math.log(u) < log_t - chain.log_target
    if not accept:
        return chain
    return replace(
        chain,
        traj=pair[0],
        traj_prime=pair[1],
        log_overlap_sq=log_ov,
        log_target=log_t,
        observable=obs,
    )


# --- kernel-backed suites -----------------------------------------------------


@dataclass
class SuiteResult:
    """Raw per-chain output of one chain suite (one target kind)."""

    values: list  # per chain, complex retained samples
    ok: list  # per chain, uint8 evaluation mask
    n_accepted: int
    n_proposals: int

    def flat_ok_values(self) -> np.ndarray:
        kept = [v[o == 1] for v, o in zip(self.values, self.ok)]
        return np.concatenate(kept) if kept else np.empty(0, dtype=complex)

    @property
    def n_retained(self) -> int:
        return int(sum(len(v) for v in self.values))

    @property
    def n_eval_rejected(self) -> int:
        return int(sum(int(np.sum(o == 0)) for o in self.ok))

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposals if self.n_proposals else 0.0


def _chain_rng(seed: int, suite: int, chain_index: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed), suite, chain_index]))


def run_pair_suite(
    dyn: DynamicsSpec,
    sched: Schedule,
    observable: OperatorSum,
    init: StateVector,
    mc: MCConfig,
    suite: int,
) -> SuiteResult:
    """Run mc.n_chains independent chains of one target kind.

    The suite code selects both the target (P for *_P, Q for *_Q) and the
    rng stream family.  Chains are merged by index, so the result is
    identical for any thread count.
    """
    if init.n_sites != dyn.n_sites:
        raise SamplerError("initial state size does not match dynamics")
    target_kind = 1 if suite == SUITE_INTER_Q else 0
    tables = build_tables(dyn, sched, observable)
    nrm = init.norm()
    if not np.isfinite(nrm) or nrm == 0.0:
        raise SamplerError("initial state has zero or non-finite norm")
    init_amps = np.ascontiguousarray(init.amps / nrm, dtype=np.complex128)
    burn_in = mc.resolved_burn_in()
    thinning = mc.resolved_thinning(sched, dyn)
    dummy_visits = np.zeros(1, dtype=np.int64)

    def one_chain(chain_index: int):
        rng = _chain_rng(mc.seed, suite, chain_index)
        labels = rng.integers(0, 2, size=(2, sched.n_steps, dyn.n_jumps)).astype(np.uint8)
        positions = rng.integers(
            0, 2 * sched.n_steps * dyn.n_jumps, size=mc.n_updates
        ).astype(np.int64)
        uniforms = rng.random(mc.n_updates)
        return drive_pair_chain(
            tables.mode, tables.dim, tables.n_steps, tables.n_jumps,
            tables.jprm, tables.jpc, tables.jcos, tables.jsin,
            tables.jlog0, tables.jlog1,
            tables.hprm, tables.hpc, tables.hch, tables.hsh,
            tables.aprm, tables.apc, tables.acoef,
            init_amps, labels, positions, uniforms,
            target_kind, burn_in, thinning,
            dummy_visits, False,
        )
    if mc.threads == 1 or mc.n_chains == 1:
        outs = [one_chain(c) for c in range(mc.n_chains)]
    else:
        with ThreadPoolExecutor(max_workers=mc.threads) as pool:
            outs = list(pool.map(one_chain, range(mc.n_chains)))
    values = [o[0] for o in outs]
    ok = [o[1] for o in outs]
    accepted = int(sum(o[2] for o in outs))
    suite_result = SuiteResult(values, ok, accepted, mc.n_chains * mc.n_updates)
    if suite_result.n_retained == 0:
        raise SamplerError(
            "no retained samples; increase n_updates or reduce burn_in/thinning"
        )
    if suite_result.n_eval_rejected > 0.5 * suite_result.n_retained:
        raise DegenerateChain(
            f"{suite_result.n_eval_rejected} of {suite_result.n_retained} retained "
            "samples were evaluation-rejected"
        )
    return suite_result


def _aggregate(suite_result: SuiteResult, n_batches: int):
    """(mean, stderr, n_batches_total) of the real part, with the imaginary
    part asserted consistent with zero."""
    real_bm = []
    imag_bm = []
    for vals, okk in zip(suite_result.values, suite_result.ok):
        kept = vals[okk == 1]
        real_bm.append(_batch_mean_list(kept.real, n_batches))
        imag_bm.append(_batch_mean_list(kept.imag, n_batches))
    real_bm = np.concatenate(real_bm)
    imag_bm = np.concatenate(imag_bm)
    mean = float(real_bm.mean())
    if real_bm.size >= 2:
        stderr = float(real_bm.std(ddof=1) / math.sqrt(real_bm.size))
        i_err = float(imag_bm.std(ddof=1) / math.sqrt(imag_bm.size))
    else:
        stderr = math.inf
        i_err = math.inf
    i_mean = float(imag_bm.mean())
    if np.isfinite(i_err) and abs(i_mean) > 5.0 * i_err + 1e-12:
        raise NumericalFailure(
            f"imaginary part {i_mean:.3g} inconsistent with zero (stderr {i_err:.3g})"
        )
    return mean, stderr, int(real_bm.size)


def _exact_endpoint(a: OperatorSum, init: StateVector, squared: bool) -> EstimatorResult:
    nrm2 = init.norm() ** 2
    val = float(a.expectation(init).real) / nrm2
    if squared:
        val = val * val
    return EstimatorResult(val, 0.0, 0, 0, 1.0, True)


def _require_hermitian(a: OperatorSum):
    for c, _ in a.terms:
        if abs(complex(c).imag) > 1e-12:
            raise SamplerError("observable must be Hermitian (real Pauli coefficients)")


def estimate_intralayer(
    dyn: DynamicsSpec,
    sched: Schedule,
    a: OperatorSum,
    init: StateVector,
    mc: MCConfig,
    rng=None,
) -> EstimatorResult:
    """C1 = Tr(rho^2 A)/Tr(rho^2) by P-chain Metropolis sampling.

    With no bits to sample (n_steps * n_jumps = 0) the value is evaluated
    exactly from the initial state.  An optional rng only supplies a seed
    when mc.seed is left at 0 and reproducibility is not required.
    """
    _require_hermitian(a)
    mc = _fold_rng_seed(mc, rng)
    if sched.n_steps * dyn.n_jumps == 0:
        return _exact_endpoint(a, init, squared=False)
    suite_result = run_pair_suite(dyn, sched, a, init, mc, SUITE_INTRA_P)
    mean, stderr, nb = _aggregate(suite_result, mc.n_batches)
    n_ok = suite_result.n_retained - suite_result.n_eval_rejected
    return EstimatorResult(mean, stderr, n_ok, nb, suite_result.acceptance_rate, True)


def estimate_interlayer(
    dyn: DynamicsSpec,
    sched: Schedule,
    a: OperatorSum,
    init: StateVector,
    mc: MCConfig,
    rng=None,
) -> EstimatorResult:
    """C2 = Tr(rho A rho A)/Tr(rho^2) via C1 / E_q[I/A].

    Runs an independent P suite (for C1) and Q suite (for the denominator);
    stderr combines both by first-order propagation.  The result is flagged
    unreliable when |C1| < 3 stderr(C1): the ratio estimator loses control
    exactly where the intralayer correlator crosses zero.
    """
    _require_hermitian(a)
    if len(a.terms) != 1:
        raise SamplerError("interlayer observable must be a single Pauli string")
    coeff = float(a.terms[0][0])
    if abs(abs(coeff) - 1.0) > 1e-12:
        raise SamplerError("interlayer observable must square to the identity")
    mc = _fold_rng_seed(mc, rng)
    if sched.n_steps * dyn.n_jumps == 0:
        return _exact_endpoint(a, init, squared=True)
    p_suite = run_pair_suite(dyn, sched, a, init, mc, SUITE_INTER_P)
    q_suite = run_pair_suite(dyn, sched, a, init, mc, SUITE_INTER_Q)
    c1, c1_err, nb_p = _aggregate(p_suite, mc.n_batches)
    den, den_err, nb_q = _aggregate(q_suite, mc.n_batches)
    if den == 0.0:
        raise NumericalFailure("interlayer denominator E_q[I/A] vanished")
    mean = c1 / den
    stderr = math.sqrt((c1_err / den) ** 2 + (c1 * den_err / den**2) ** 2)
    reliable = abs(c1) >= 3.0 * c1_err
    n_ok = (
        p_suite.n_retained - p_suite.n_eval_rejected
        + q_suite.n_retained - q_suite.n_eval_rejected
    )
    prop = p_suite.n_proposals + q_suite.n_proposals
    acc = (p_suite.n_accepted + q_suite.n_accepted) / prop
    return EstimatorResult(mean, stderr, n_ok, nb_p + nb_q, acc, reliable)


def _fold_rng_seed(mc: MCConfig, rng) -> MCConfig:
    if rng is None or mc.seed != 0:
        return mc
    return replace(mc, seed=int(rng.integers(0, 2**63 - 1)))
