"""Trajectory propagation: step semantics, checkpoints, identity resolution."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilayermc import BilayerError, DensityMatrix, Schedule, StateVector, dimer_dynamics
from bilayermc.engine import (
    blank_label,
    heff_apply,
    kraus_apply,
    propagate,
    random_label,
    recompute_from,
    sequential_sample,
)
from bilayermc.oracle import ChannelOperators

from conftest import make_at_dynamics


def all_labels(n_steps, n_jumps):
    for bits in itertools.product((0, 1), repeat=n_steps * n_jumps):
        yield np.array(bits, dtype=np.uint8).reshape(n_steps, n_jumps)


def resolved_channel(dyn, sched, init):
    """Sum of weighted trajectory projectors over every label."""
    dim = 1 << dyn.n_sites
    out = np.zeros((dim, dim), dtype=complex)
    for label in all_labels(sched.n_steps, dyn.n_jumps):
        traj = propagate(dyn, sched, label, init)
        if not np.isfinite(traj.log_weight):
            continue
        w = math.exp(2.0 * traj.log_weight)
        out += w * np.outer(traj.state.amps, traj.state.amps.conj())
    return out


def test_schedule_grid():
    s = Schedule.for_beta(0.5, 0.1)
    assert s.n_steps == 5 and s.beta == pytest.approx(0.5)
    with pytest.raises(BilayerError):
        Schedule.for_beta(0.55, 0.1)
    with pytest.raises(BilayerError):
        Schedule(dt=-0.1, n_steps=3)


def test_label_helpers(rng):
    dyn = dimer_dynamics(1.0, 0.3, mode="weak")
    sched = Schedule(dt=0.1, n_steps=4)
    assert blank_label(sched, dyn).shape == (4, 1)
    lab = random_label(sched, dyn, rng)
    assert lab.shape == (4, 1) and set(np.unique(lab)) <= {0, 1}


def test_weak_branch_norms_sum_to_one():
    dyn = make_at_dynamics(2)
    psi = StateVector.from_bitstring("10")
    for i in range(dyn.n_jumps):
        w = 0.0
        for b in (0, 1):
            _, inc = kraus_apply(psi, dyn, i, b, dt=0.1)
            w += math.exp(2.0 * inc)
        assert w == pytest.approx(1.0, abs=1e-12)


def test_strong_branch_weights():
    dyn = dimer_dynamics(1.0, 0.0)  # strong mode
    psi = StateVector.from_bitstring("0")
    _, inc0 = kraus_apply(psi, dyn, 0, 0, dt=0.1)
    _, inc1 = kraus_apply(psi, dyn, 0, 1, dt=0.1)
    assert math.exp(inc0) == pytest.approx(1.0 - 0.1 / 2.0)
    assert math.exp(2.0 * inc1) == pytest.approx(0.1)  # squared amplitude = J dt


def test_strong_dt_limit():
    dyn = dimer_dynamics(1.0, 0.0)
    psi = StateVector.from_bitstring("0")
    with pytest.raises(BilayerError):
        kraus_apply(psi, dyn, 0, 0, dt=3.0)


def test_heff_identity_only_shifts_log_weight():
    dyn = dimer_dynamics(1.0, 0.8, mode="weak")
    psi = StateVector.from_bitstring("1")  # h_eff annihilates nothing
    out, inc = heff_apply(psi, dyn, dt=0.2)
    assert out.norm() == pytest.approx(1.0)
    # |1> is the zero eigenvector of h(I+Z)/2, so only normalization bookkeeping
    assert inc == pytest.approx(0.0, abs=1e-12)


def test_heff_split_matches_exact_for_single_term():
    dyn = dimer_dynamics(1.0, 0.8, mode="weak")
    rngs = np.random.default_rng(3)
    amps = rngs.normal(size=2) + 1j * rngs.normal(size=2)
    psi = StateVector(1, amps / np.linalg.norm(amps))
    split, inc_s = heff_apply(psi, dyn, dt=0.2)
    exact, inc_e = heff_apply(psi, dyn, dt=0.2, exact=True)
    assert np.allclose(split.amps, exact.amps, atol=1e-12)
    assert inc_s == pytest.approx(inc_e, abs=1e-12)


def test_propagate_rejects_bad_label_shape():
    dyn = dimer_dynamics(1.0, 0.3, mode="weak")
    sched = Schedule(dt=0.1, n_steps=3)
    with pytest.raises(BilayerError):
        propagate(dyn, sched, np.zeros((2, 1), dtype=np.uint8), StateVector.from_bitstring("0"))


@pytest.mark.parametrize("mode", ["weak", "strong"])
def test_identity_resolution_matches_channel(mode):
    """Summing weighted trajectories over all labels rebuilds the channel."""
    dyn = make_at_dynamics(2, mode=mode)
    sched = Schedule(dt=0.1, n_steps=2)
    init = StateVector.from_bitstring("10")
    resolved = resolved_channel(dyn, sched, init)
    ops = ChannelOperators(dyn, sched.dt)
    mat = DensityMatrix.from_state(init).mat
    for _ in range(sched.n_steps):
        mat = ops.step(mat)
    assert np.max(np.abs(resolved - mat)) < 1e-12


@given(flip=st.integers(0, 5), seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_recompute_matches_full_propagate(flip, seed):
    dyn = dimer_dynamics(1.0, 0.3, mode="weak")
    sched = Schedule(dt=0.1, n_steps=6)
    init = StateVector.from_bitstring("0")
    label = random_label(sched, dyn, np.random.default_rng(seed))
    traj = propagate(dyn, sched, label, init)
    t, i = flip, 0
    traj.label[t, i] ^= 1
    edited = recompute_from(traj, dyn, sched, t)
    fresh = propagate(dyn, sched, traj.label, init)
    assert np.allclose(edited.state.amps, fresh.state.amps, atol=1e-12)
    assert edited.log_weight == pytest.approx(fresh.log_weight, abs=1e-12)


def test_recompute_respects_sparse_checkpoints():
    dyn = make_at_dynamics(2)
    sched = Schedule(dt=0.1, n_steps=7)
    init = StateVector.from_bitstring("10")
    label = random_label(sched, dyn, np.random.default_rng(11))
    traj = propagate(dyn, sched, label, init, checkpoint_stride=3)
    assert traj.checkpoints[1] is None and traj.checkpoints[3] is not None
    traj.label[4, 2] ^= 1
    edited = recompute_from(traj, dyn, sched, 4)
    fresh = propagate(dyn, sched, traj.label, init)
    assert np.allclose(edited.state.amps, fresh.state.amps, atol=1e-12)
    assert edited.log_weight == pytest.approx(fresh.log_weight, abs=1e-12)


def test_sequential_sample_weight_matches_propagate(rng):
    dyn = dimer_dynamics(1.0, 0.3, mode="strong")
    sched = Schedule(dt=0.1, n_steps=5)
    init = StateVector.from_bitstring("0")
    traj = sequential_sample(dyn, sched, init, rng)
    replay = propagate(dyn, sched, traj.label, init)
    assert traj.log_weight == pytest.approx(replay.log_weight, abs=1e-12)
    assert np.allclose(traj.state.amps, replay.state.amps, atol=1e-12)


def test_propagate_weights_sum_to_decayed_trace():
    """Total trajectory weight equals the trace of the scaled channel state."""
    dyn = make_at_dynamics(2, mode="weak")
    sched = Schedule(dt=0.1, n_steps=2)
    init = StateVector.from_bitstring("10")
    total = sum(
        math.exp(2.0 * propagate(dyn, sched, lab, init).log_weight)
        for lab in all_labels(sched.n_steps, dyn.n_jumps)
    )
    ops = ChannelOperators(dyn, sched.dt)
    mat = DensityMatrix.from_state(init).mat
    for _ in range(sched.n_steps):
        mat = ops.step(mat)
    assert total == pytest.approx(float(np.trace(mat).real), rel=1e-12)
