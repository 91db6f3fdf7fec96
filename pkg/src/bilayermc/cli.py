"""Command-line surface: map / exact / sample / dimer / enumerate.

Results are CSV rows `beta,observable,kind,mean,stderr,n_samples,n_batches,
acceptance_rate,reliable`; floats are written with repr so identical runs
are byte-identical.  Exit codes: 0 clean, 2 config/size error, 3 model or
decomposition error, 4 at least one row flagged unreliable, 5 numerical
failure (including any non-finite value and degenerate chains).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_summary_lines, load_config
from .engine import Schedule
from .errors import (
    BilayerError,
    ConfigError,
    DegenerateChain,
    MappingError,
    NumericalFailure,
    SamplerError,
    SizeLimitExceeded,
)
from .mapping import build_dynamics, decompose_bilayer, validate_mapping
from .oracle import (
    ENUM_MAX_BITS,
    ChannelOperators,
    DensityMatrix,
    DimerParams,
    dimer_dynamics,
    dimer_exact,
    dimer_transfer_matrix,
    enumerate_pair_sums,
    renyi2_correlator,
)
from .paulis import OperatorSum, PauliString, StateVector
from .sampling import MCConfig, estimate_intralayer, estimate_interlayer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_UNRELIABLE = 4
EXIT_NUMERICAL = 5

CSV_HEADER = "beta,observable,kind,mean,stderr,n_samples,n_batches,acceptance_rate,reliable"

EXACT_SWEEP_MAX_SITES = 8


def _fmt_bool(flag: bool) -> str:
    return "true" if flag else "false"


def _csv_line(beta_text, obs_text, kind, mean, stderr, n_samples, n_batches, acc, reliable):
    return ",".join(
        [
            beta_text,
            obs_text,
            kind,
            repr(float(mean)),
            repr(float(stderr)),
            str(int(n_samples)),
            str(int(n_batches)),
            repr(float(acc)),
            _fmt_bool(reliable),
        ]
    )


def _dynamics_lines(dyn) -> list:
    lines = [
        f"n_sites = {dyn.n_sites}",
        f"mode = {dyn.mode}",
        f"n_jumps = {dyn.n_jumps}",
        f"kappa_total = {dyn.kappa_total!r}",
    ]
    for k, (a, p) in enumerate(dyn.jumps):
        lines.append(f"jump[{k}] = sqrt_rate {a!r} pauli {p.to_text()} kappa {dyn.kappas[k]!r}")
    if len(dyn.kappas) == dyn.n_jumps + 1:
        lines.append(f"kappa_catch_all = {dyn.kappas[-1]!r}")
    for c, p in dyn.h_eff.terms:
        lines.append(f"h_eff_term = {float(c.real)!r} {p.to_text()}")
    return lines


def _write_manifest(path: Path, cfg: RunConfig | None, dyn, wall_seconds, row_lines):
    lines = [f"tool = bilayermc {__version__}", f"wall_clock_seconds = {wall_seconds:.3f}"]
    if cfg is not None:
        lines.append("")
        lines.append("[resolved config]")
        lines.extend(config_summary_lines(cfg))
    if dyn is not None:
        lines.append("")
        lines.append("[dynamics]")
        lines.extend(_dynamics_lines(dyn))
    if row_lines:
        lines.append("")
        lines.append("[rows]")
        lines.extend(row_lines)
    path.write_text("\n".join(lines) + "\n")


def _build(cfg: RunConfig):
    terms = cfg.bilayer_terms()
    spec = decompose_bilayer(terms, n_sites=cfg.resolved_n_sites())
    dyn = build_dynamics(spec, cfg.kappa_policy, mode=cfg.mode)
    return terms, dyn


def _observable(cfg: RunConfig, text: str) -> OperatorSum:
    return OperatorSum.from_text(text, cfg.resolved_n_sites())


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.output_dir) if args.output_dir else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    return cfg


def _row_seed(master_seed: int, row_index: int) -> int:
    return int(np.random.SeedSequence([master_seed, row_index]).generate_state(1, np.uint64)[0])


def cmd_map(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    t0 = time.time()
    terms, dyn = _build(cfg)
    report = []
    if dyn.n_sites <= 6:
        dev = validate_mapping(dyn, terms)
        report.append(f"superoperator_deviation = {dev:.3e}")
        print(f"mapping validated: max superoperator deviation {dev:.3e}")
    else:
        report.append("superoperator_deviation = skipped (n_sites > 6)")
        print("mapping built (dense validation skipped beyond 6 sites)")
    print(f"jumps: {dyn.n_jumps}, kappa_total = {dyn.kappa_total:.6g}")
    out = _out_dir(cfg, args)
    _write_manifest(out / "mapping_manifest.txt", cfg, dyn, time.time() - t0, report)
    print(f"manifest written to {out / 'mapping_manifest.txt'}")
    return EXIT_OK


def _exact_sweep(cfg: RunConfig, dyn):
    """Channel states at every configured beta, keyed by step count."""
    n = dyn.n_sites
    if n > EXACT_SWEEP_MAX_SITES:
        raise SizeLimitExceeded(
            f"exact sweep limited to {EXACT_SWEEP_MAX_SITES} sites, got {n}"
        )
    steps_needed = {}
    for text, beta in cfg.beta_list:
        steps_needed[Schedule.for_beta(beta, cfg.dt).n_steps] = None
    ops = ChannelOperators(dyn, cfg.dt, apply_trace_scale=False)
    rho = DensityMatrix.from_bitstring(cfg.init)
    mat = rho.mat
    snapshots = {}
    if 0 in steps_needed:
        snapshots[0] = DensityMatrix(n, mat.copy())
    for k in range(1, max(steps_needed, default=0) + 1):
        mat = ops.step(mat)
        if k in steps_needed:
            snapshots[k] = DensityMatrix(n, mat.copy())
    return snapshots


def cmd_exact(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    t0 = time.time()
    _, dyn = _build(cfg)
    snapshots = _exact_sweep(cfg, dyn)
    rows = []
    bad = False
    for text, beta in cfg.beta_list:
        k = Schedule.for_beta(beta, cfg.dt).n_steps
        rho = snapshots[k]
        for kind, obs_text in cfg.observables:
            a = _observable(cfg, obs_text)
            if kind == "intralayer":
                val = renyi2_correlator(rho, a)
            else:
                val = renyi2_correlator(rho, a, a)
            bad = bad or not math.isfinite(val)
            rows.append(_csv_line(text, obs_text, kind, val, 0.0, 0, 0, 1.0, True))
    out = _out_dir(cfg, args)
    csv_path = out / "exact.csv"
    csv_path.write_text("\n".join([CSV_HEADER] + rows) + "\n")
    _write_manifest(out / "exact_manifest.txt", cfg, dyn, time.time() - t0, [])
    print(f"{len(rows)} exact rows written to {csv_path}")
    if bad:
        print("error: non-finite value in exact sweep", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    t0 = time.time()
    _, dyn = _build(cfg)
    init = cfg.init_state()
    rows = []
    row_notes = []
    any_unreliable = False
    bad = False
    row_index = 0
    for text, beta in cfg.beta_list:
        sched = Schedule.for_beta(beta, cfg.dt)
        for kind, obs_text in cfg.observables:
            a = _observable(cfg, obs_text)
            mc = MCConfig(
                n_chains=cfg.n_chains,
                n_updates=cfg.n_updates,
                burn_in=cfg.burn_in,
                thinning=cfg.thinning,
                n_batches=cfg.n_batches,
                seed=_row_seed(cfg.master_seed, row_index),
                threads=cfg.threads,
            )
            if kind == "intralayer":
                res = estimate_intralayer(dyn, sched, a, init, mc)
            else:
                res = estimate_interlayer(dyn, sched, a, init, mc)
            rows.append(
                _csv_line(
                    text, obs_text, kind, res.mean, res.stderr,
                    res.n_samples, res.n_batches, res.acceptance_rate, res.reliable,
                )
            )
            row_notes.append(
                f"beta {text} {kind} {obs_text}: acceptance = {res.acceptance_rate:.4f},"
                f" reliable = {_fmt_bool(res.reliable)}"
            )
            any_unreliable = any_unreliable or not res.reliable
            bad = bad or not (math.isfinite(res.mean) and math.isfinite(res.stderr))
            row_index += 1
    out = _out_dir(cfg, args)
    csv_path = out / "results.csv"
    csv_path.write_text("\n".join([CSV_HEADER] + rows) + "\n")
    _write_manifest(out / "run_manifest.txt", cfg, dyn, time.time() - t0, row_notes)
    print(f"{len(rows)} sampled rows written to {csv_path}")
    if bad:
        print("error: non-finite estimate in results", file=sys.stderr)
        return EXIT_NUMERICAL
    if any_unreliable:
        print("warning: at least one row is flagged unreliable", file=sys.stderr)
        return EXIT_UNRELIABLE
    return EXIT_OK


def cmd_enumerate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    _, dyn = _build(cfg)
    init = cfg.init_state()
    worst_bits = max(
        Schedule.for_beta(beta, cfg.dt).n_steps * dyn.n_jumps for _, beta in cfg.beta_list
    )
    if worst_bits > ENUM_MAX_BITS:
        raise SizeLimitExceeded(
            f"enumeration would need 2**{worst_bits} = {2 ** worst_bits} labels"
            f" ({4 ** worst_bits} pairs); limit is 2**{ENUM_MAX_BITS}"
        )
    obs_texts = []
    for _, obs_text in cfg.observables:
        if obs_text not in obs_texts:
            obs_texts.append(obs_text)
    worst = 0.0
    ops = ChannelOperators(dyn, cfg.dt)
    print("beta  observable    sum|I|^2      Tr(rho^2)     C1_enum      C1_oracle    C2_enum      C2_oracle")
    for text, beta in cfg.beta_list:
        sched = Schedule.for_beta(beta, cfg.dt)
        mat = DensityMatrix.from_state(init).mat
        for _ in range(sched.n_steps):
            mat = ops.step(mat)
        rho = DensityMatrix(dyn.n_sites, mat)
        purity = rho.purity()
        for obs_text in obs_texts:
            a = _observable(cfg, obs_text)
            si2, sai, sa2 = enumerate_pair_sums(dyn, sched, a, init)
            c1_e, c2_e = sai / si2, sa2 / si2
            c1_o = renyi2_correlator(rho, a)
            c2_o = renyi2_correlator(rho, a, a)
            worst = max(
                worst, abs(si2 - purity), abs(c1_e - c1_o), abs(c2_e - c2_o)
            )
            print(
                f"{text:<5} {obs_text:<13} {si2:<13.6e} {purity:<13.6e} {c1_e:<+12.8f}"
                f" {c1_o:<+12.8f} {c2_e:<+12.8f} {c2_o:<+12.8f}"
            )
            if not all(math.isfinite(v) for v in (si2, sai, sa2, purity, c1_o, c2_o)):
                print("error: non-finite value in enumeration", file=sys.stderr)
                return EXIT_NUMERICAL
    print(f"max deviation from oracle: {worst:.3e}")
    return EXIT_OK


def cmd_dimer(args) -> int:
    params = DimerParams(args.J, args.h, args.beta, args.dt)
    transfer = dimer_transfer_matrix(params)
    exact = dimer_exact(params)
    sched = params.schedule()
    dyn = dimer_dynamics(args.J, args.h, mode="weak")
    z = OperatorSum(1, [(1.0, PauliString(1, 0, 1))])
    init = StateVector.from_bitstring("0")
    mc = MCConfig(n_chains=16, n_updates=max(1, args.samples), seed=args.seed or 0)
    res = estimate_intralayer(dyn, sched, z, init, mc)
    print(f"dimer J={args.J} h={args.h} beta={args.beta} dt={args.dt}")
    print(f"  transfer matrix : {transfer:+.8f}")
    print(f"  exact channel   : {exact:+.8f}")
    print(f"  sampled         : {res.mean:+.8f} +- {res.stderr:.8f}  (acceptance {res.acceptance_rate:.3f})")
    if args.h == 0.0:
        print(f"  closed form     : {1.0 / math.cosh(2.0 * args.J * args.beta):+.8f}  (dt -> 0 limit)")
    if not (math.isfinite(res.mean) and math.isfinite(res.stderr)):
        return EXIT_NUMERICAL
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilayermc",
        description="Bilayer spin models as monitored monolayer trajectories: "
        "mapping, exact references, and importance-sampled estimates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to INI run config")
        p.add_argument("--output-dir", default=None, help="override [output] output_dir")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads for chains")

    p_map = sub.add_parser("map", help="compile and validate the monolayer dynamics")
    add_common(p_map)
    p_map.set_defaults(func=cmd_map)

    p_exact = sub.add_parser("exact", help="dense channel sweep over the beta grid")
    add_common(p_exact)
    p_exact.set_defaults(func=cmd_exact)

    p_sample = sub.add_parser("sample", help="Metropolis pair-chain estimates")
    add_common(p_sample)
    p_sample.set_defaults(func=cmd_sample)

    p_enum = sub.add_parser("enumerate", help="exhaustive pair sums vs the oracle")
    add_common(p_enum)
    p_enum.set_defaults(func=cmd_enumerate)

    p_dimer = sub.add_parser("dimer", help="single-site worked example, three methods")
    p_dimer.add_argument("--J", type=float, default=1.0)
    p_dimer.add_argument("--h", type=float, default=0.0)
    p_dimer.add_argument("--beta", type=float, default=1.0)
    p_dimer.add_argument("--dt", type=float, default=0.01)
    p_dimer.add_argument("--samples", type=int, default=50_000,
                         help="Metropolis updates per chain (16 chains)")
    p_dimer.add_argument("--seed", type=int, default=0)
    p_dimer.set_defaults(func=cmd_dimer)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SizeLimitExceeded) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateChain, NumericalFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SamplerError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MappingError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except BilayerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
