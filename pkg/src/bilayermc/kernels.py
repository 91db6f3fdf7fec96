"""Compiled inner loop for pair-chain Metropolis sampling.

The kernel mirrors engine.propagate step for step (same branch formulas,
same normalization points, same factor order) but keeps its log-weights free
of label-independent constants: the weak -ln(2)/2 per branch, and the whole
identity component of h_eff.  Those constants cancel in every acceptance
ratio and every retained sample, so dropping them makes the sampler output
bitwise invariant under decay-rate shifts.

A pure-numpy twin (`drive_pair_chain_python`) consumes identical inputs and
exists only so tests can diff the compiled path against readable code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .engine import Schedule
from .errors import BilayerError
from .mapping import DynamicsSpec
from .paulis import OperatorSum, _sign_table

EVAL_EPS = 1e-14


@dataclass
class ChainTables:
    """Flat array form of (dyn, sched, observable) consumed by the kernel."""

    mode: int  # 0 weak, 1 strong
    dim: int
    n_steps: int
    n_jumps: int
    jprm: np.ndarray  # (m, dim) int64, index permutation of each jump Pauli
    jpc: np.ndarray  # (m, dim) complex128, phase*sign of each jump Pauli
    jcos: np.ndarray  # (m,) cos(sqrt(dt) a)  (weak)
    jsin: np.ndarray  # (m,) sin(sqrt(dt) a)  (weak)
    jlog0: np.ndarray  # (m,) ln(1 - dt a^2/2) (strong)
    jlog1: np.ndarray  # (m,) ln(sqrt(dt) a)   (strong)
    hprm: np.ndarray  # (K, dim) drift factor permutations
    hpc: np.ndarray  # (K, dim)
    hch: np.ndarray  # (K,) cosh(dt c)
    hsh: np.ndarray  # (K,) sinh(dt c)
    aprm: np.ndarray  # (T, dim) observable term permutations
    apc: np.ndarray  # (T, dim)
    acoef: np.ndarray  # (T,) float64


def _pauli_tables(paulis, dim):
    count = len(paulis)
    prm = np.empty((count, dim), dtype=np.int64)
    pc = np.empty((count, dim), dtype=np.complex128)
    idx = np.arange(dim)
    for row, p in enumerate(paulis):
        prm[row] = idx ^ p.x_mask
        pc[row] = p.phase * _sign_table(p.x_mask, p.z_mask, dim)
    return prm, pc


def build_tables(dyn: DynamicsSpec, sched: Schedule, observable: OperatorSum) -> ChainTables:
    if observable.n_sites != dyn.n_sites:
        raise BilayerError("observable size does not match dynamics")
    dim = 1 << dyn.n_sites
    dt = sched.dt
    m = dyn.n_jumps
    jprm, jpc = _pauli_tables([p for _, p in dyn.jumps], dim)
    amp = np.array([a for a, _ in dyn.jumps], dtype=np.float64)
    theta = np.sqrt(dt) * amp
    scal0 = 1.0 - dt * amp * amp / 2.0
    if dyn.mode == "strong" and np.any(scal0 <= 0.0):
        raise BilayerError("dt too large for the strong unraveling")
    with np.errstate(divide="ignore"):
        jlog0 = np.log(np.maximum(scal0, 1e-300))
        jlog1 = np.where(amp > 0.0, 0.5 * math.log(dt) + np.log(np.maximum(amp, 1e-300)), -np.inf)
    drift = dyn.h_eff.non_identity().terms
    hprm, hpc = _pauli_tables([p for _, p in drift], dim)
    hc = np.array([c for c, _ in drift], dtype=np.float64)
    aprm, apc = _pauli_tables([p for _, p in observable.terms], dim)
    acoef = np.array([c for c, _ in observable.terms], dtype=np.float64)
    return ChainTables(
        mode=0 if dyn.mode == "weak" else 1,
        dim=dim,
        n_steps=sched.n_steps,
        n_jumps=m,
        jprm=jprm,
        jpc=jpc,
        jcos=np.cos(theta),
        jsin=np.sin(theta),
        jlog0=jlog0,
        jlog1=jlog1,
        hprm=hprm,
        hpc=hpc,
        hch=np.cosh(dt * hc),
        hsh=np.sinh(dt * hc),
        aprm=aprm,
        apc=apc,
        acoef=acoef,
    )


@njit(cache=True, nogil=True)
def _replay(
    mode, dim, n_steps, n_jumps,
    jprm, jpc, jcos, jsin, jlog0, jlog1,
    hprm, hpc, hch, hsh,
    bits, start, chk, lws, cur, nxt,
):
    """Replay steps start..n_steps-1 of one trajectory into chk/lws rows."""
    for k in range(dim):
        cur[k] = chk[start, k]
    lw = lws[start]
    for t in range(start, n_steps):
        for i in range(n_jumps):
            b = bits[t, i]
            if mode == 0:
                sgn = 1.0 if b == 0 else -1.0
                acc = 0.0
                for k in range(dim):
                    v = jcos[i] * cur[k] + 1j * (sgn * jsin[i]) * jpc[i, k] * cur[jprm[i, k]]
                    nxt[k] = v
                    acc += v.real * v.real + v.imag * v.imag
                nrm = math.sqrt(acc)
                inv = 1.0 / nrm
                for k in range(dim):
                    cur[k] = nxt[k] * inv
                lw += math.log(nrm)
            else:
                if b == 0:
                    lw += jlog0[i]
                else:
                    for k in range(dim):
                        nxt[k] = jpc[i, k] * cur[jprm[i, k]]
                    for k in range(dim):
                        cur[k] = nxt[k]
                    lw += jlog1[i]
        for kt in range(hch.shape[0]):
            for k in range(dim):
                nxt[k] = hch[kt] * cur[k] - hsh[kt] * hpc[kt, k] * cur[hprm[kt, k]]
            for k in range(dim):
                cur[k] = nxt[k]
        acc = 0.0
        for k in range(dim):
            acc += cur[k].real * cur[k].real + cur[k].imag * cur[k].imag
        nrm = math.sqrt(acc)
        inv = 1.0 / nrm
        for k in range(dim):
            cur[k] *= inv
            chk[t + 1, k] = cur[k]
        lw += math.log(nrm)
        lws[t + 1] = lw


@njit(cache=True, nogil=True)
def _pair_values(bra, ket, aprm, apc, acoef, dim):
    """(<bra|ket>, <bra|A|ket>) for normalized final states."""
    ov = 0.0 + 0.0j
    for k in range(dim):
        ov += np.conj(bra[k]) * ket[k]
    av = 0.0 + 0.0j
    for t in range(acoef.shape[0]):
        acc = 0.0 + 0.0j
        for k in range(dim):
            acc += np.conj(bra[k]) * apc[t, k] * ket[aprm[t, k]]
        av += acoef[t] * acc
    return ov, av


@njit(cache=True, nogil=True)
def _log_target(lw_s, lw_sp, val):
    a = abs(val)
    if a == 0.0 or math.isinf(lw_s) or math.isinf(lw_sp):
        return -np.inf
    return 2.0 * (lw_s + lw_sp) + 2.0 * math.log(a)


@njit(cache=True, nogil=True)
def _pair_index(labels, n_steps, n_jumps):
    idx = 0
    bit = 0
    for side in range(2):
        for t in range(n_steps):
            for i in range(n_jumps):
                if labels[side, t, i] != 0:
                    idx |= 1 << bit
                bit += 1
    return idx


@njit(cache=True, nogil=True)
def drive_pair_chain(
    mode, dim, n_steps, n_jumps,
    jprm, jpc, jcos, jsin, jlog0, jlog1,
    hprm, hpc, hch, hsh,
    aprm, apc, acoef,
    init_amps,
    labels,
    positions,
    uniforms,
    target_kind,  # 0: |<s|s'>|^2, 1: |<s|A|s'>|^2
    burn_in,
    thinning,
    visit_counts,
    record_visits,
):
    """Run one Metropolis pair chain; returns retained samples.

    Retained sample values are A/I for target_kind 0 and I/A for target_kind
    1; slots whose denominator is below EVAL_EPS are flagged in the ok array.
    Returns (values, ok, n_accepted).
    """
    n_updates = positions.shape[0]
    chk = np.empty((2, n_steps + 1, dim), dtype=np.complex128)
    lws = np.zeros((2, n_steps + 1), dtype=np.float64)
    prop_chk = np.empty((n_steps + 1, dim), dtype=np.complex128)
    prop_lws = np.zeros(n_steps + 1, dtype=np.float64)
    cur = np.empty(dim, dtype=np.complex128)
    nxt = np.empty(dim, dtype=np.complex128)
    for side in range(2):
        for k in range(dim):
            chk[side, 0, k] = init_amps[k]
        lws[side, 0] = 0.0
        _replay(
            mode, dim, n_steps, n_jumps,
            jprm, jpc, jcos, jsin, jlog0, jlog1,
            hprm, hpc, hch, hsh,
            labels[side], 0, chk[side], lws[side], cur, nxt,
        )
    ov, av = _pair_values(chk[0, n_steps], chk[1, n_steps], aprm, apc, acoef, dim)
    cur_lt = _log_target(lws[0, n_steps], lws[1, n_steps], ov if target_kind == 0 else av)

    n_retained = 0
    if thinning > 0 and n_updates > burn_in:
        n_retained = (n_updates - burn_in) // thinning
    values = np.zeros(n_retained, dtype=np.complex128)
    ok = np.zeros(n_retained, dtype=np.uint8)
    out = 0
    n_accepted = 0
    half = n_steps * n_jumps

    for idx in range(n_updates):
        pos = positions[idx]
        side = 0
        rem = pos
        if pos >= half:
            side = 1
            rem = pos - half
        t = rem // n_jumps
        i = rem - t * n_jumps
        labels[side, t, i] ^= 1
        for k in range(dim):
            prop_chk[t, k] = chk[side, t, k]
        prop_lws[t] = lws[side, t]
        _replay(
            mode, dim, n_steps, n_jumps,
            jprm, jpc, jcos, jsin, jlog0, jlog1,
            hprm, hpc, hch, hsh,
            labels[side], t, prop_chk, prop_lws, cur, nxt,
        )
        if side == 0:
            ov, av = _pair_values(prop_chk[n_steps], chk[1, n_steps], aprm, apc, acoef, dim)
            new_lt = _log_target(prop_lws[n_steps], lws[1, n_steps], ov if target_kind == 0 else av)
        else:
            ov, av = _pair_values(chk[0, n_steps], prop_chk[n_steps], aprm, apc, acoef, dim)
            new_lt = _log_target(lws[0, n_steps], prop_lws[n_steps], ov if target_kind == 0 else av)
        if math.isinf(cur_lt) and cur_lt < 0.0:
            accept = not (math.isinf(new_lt) and new_lt < 0.0)
        else:
            u = uniforms[idx]
            if u <= 0.0:
                accept = True
            else:
                accept = math.log(u) < new_lt - cur_lt
        if accept:
            n_accepted += 1
            cur_lt = new_lt
            for tt in range(t + 1, n_steps + 1):
                for k in range(dim):
                    chk[side, tt, k] = prop_chk[tt, k]
                lws[side, tt] = prop_lws[tt]
        else:
            labels[side, t, i] ^= 1
        if record_visits:
            visit_counts[_pair_index(labels, n_steps, n_jumps)] += 1
        if idx >= burn_in and thinning > 0 and (idx - burn_in + 1) % thinning == 0:
            ov, av = _pair_values(chk[0, n_steps], chk[1, n_steps], aprm, apc, acoef, dim)
            if target_kind == 0:
                num, den = av, ov
            else:
                num, den = ov, av
            if abs(den) < EVAL_EPS:
                values[out] = 0.0
                ok[out] = 0
            else:
                values[out] = num / den
                ok[out] = 1
            out += 1
    return values, ok, n_accepted


def drive_pair_chain_python(
    tables: ChainTables,
    init_amps: np.ndarray,
    labels: np.ndarray,
    positions: np.ndarray,
    uniforms: np.ndarray,
    target_kind: int,
    burn_in: int,
    thinning: int,
    visit_counts: np.ndarray | None = None,
):
    """Readable twin of drive_pair_chain on the same flat inputs."""
    tb = tables
    n, m, dim = tb.n_steps, tb.n_jumps, tb.dim

    def replay(bits, start, chk, lws):
        cur = chk[start].copy()
        lw = lws[start]
        for t in range(start, n):
            for i in range(m):
                if tb.mode == 0:
                    sgn = 1.0 if bits[t, i] == 0 else -1.0
                    cur = tb.jcos[i] * cur + 1j * sgn * tb.jsin[i] * tb.jpc[i] * cur[tb.jprm[i]]
                    nrm = float(np.linalg.norm(cur))
                    cur /= nrm
                    lw += math.log(nrm)
                elif bits[t, i] == 0:
                    lw += tb.jlog0[i]
                else:
                    cur = tb.jpc[i] * cur[tb.jprm[i]]
                    lw += tb.jlog1[i]
            for kt in range(tb.hch.shape[0]):
                cur = tb.hch[kt] * cur - tb.hsh[kt] * tb.hpc[kt] * cur[tb.hprm[kt]]
            nrm = float(np.linalg.norm(cur))
            cur /= nrm
            lw += math.log(nrm)
            chk[t + 1] = cur
            lws[t + 1] = lw

    def pair_values(bra, ket):
        ov = complex(np.vdot(bra, ket))
        av = 0.0j
        for tt in range(tb.acoef.shape[0]):
            av += tb.acoef[tt] * complex(np.vdot(bra, tb.apc[tt] * ket[tb.aprm[tt]]))
        return ov, av

    def log_target(lw_s, lw_sp, val):
        a = abs(val)
        if a == 0.0 or math.isinf(lw_s) or math.isinf(lw_sp):
            return -math.inf
        return 2.0 * (lw_s + lw_sp) + 2.0 * math.log(a)

    chk = np.empty((2, n + 1, dim), dtype=np.complex128)
    lws = np.zeros((2, n + 1), dtype=np.float64)
    for side in range(2):
        chk[side, 0] = init_amps
        replay(labels[side], 0, chk[side], lws[side])
    ov, av = pair_values(chk[0, n], chk[1, n])
    cur_lt = log_target(lws[0, n], lws[1, n], ov if target_kind == 0 else av)

    n_updates = positions.shape[0]
    n_retained = (n_updates - burn_in) // thinning if thinning > 0 and n_updates > burn_in else 0
    values = np.zeros(n_retained, dtype=np.complex128)
    ok = np.zeros(n_retained, dtype=np.uint8)
    out = 0
    n_accepted = 0
    half = n * m
    for idx in range(n_updates):
        pos = int(positions[idx])
        side, rem = divmod(pos, half)
        t, i = divmod(rem, m)
        labels[side, t, i] ^= 1
        prop_chk = chk[side].copy()
        prop_lws = lws[side].copy()
        replay(labels[side], t, prop_chk, prop_lws)
        if side == 0:
            ov, av = pair_values(prop_chk[n], chk[1, n])
            new_lt = log_target(prop_lws[n], lws[1, n], ov if target_kind == 0 else av)
        else:
            ov, av = pair_values(chk[0, n], prop_chk[n])
            new_lt = log_target(lws[0, n], prop_lws[n], ov if target_kind == 0 else av)
        if cur_lt == -math.inf:
            accept = new_lt > -math.inf
        else:
            u = float(uniforms[idx])
            accept = True if u <= 0.0 else math.log(u) < new_lt - cur_lt
        if accept:
            n_accepted += 1
            cur_lt = new_lt
            chk[side] = prop_chk
            lws[side] = prop_lws
        else:
            labels[side, t, i] ^= 1
        if visit_counts is not None:
            bits = np.concatenate([labels[0].ravel(), labels[1].ravel()])
            visit_counts[int(np.dot(bits, 1 << np.arange(bits.size)))] += 1
        if idx >= burn_in and thinning > 0 and (idx - burn_in + 1) % thinning == 0:
            ov, av = pair_values(chk[0, n], chk[1, n])
            num, den = (av, ov) if target_kind == 0 else (ov, av)
            if abs(den) < EVAL_EPS:
                values[out] = 0.0
                ok[out] = 0
            else:
                values[out] = num / den
                ok[out] = 1
            out += 1
    return values, ok, n_accepted
