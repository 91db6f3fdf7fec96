"""Run configuration: INI-style sections, strictly validated.

Example:

    [config]
    schema_version = 1

    [model]
    type = ashkin_teller
    L = 8
    J = 1.0
    h = 0.3
    lambda_J = 0.5
    lambda_h = 0.5
    boundary = open
    init = 11000000

    [schedule]
    dt = 0.1
    beta_list = 0.1:2.0:0.1

    [sampler]
    mode = weak
    n_chains = 128
    n_updates = 200000
    n_batches = 16
    master_seed = 20240901

    [observables]
    observables =
        intralayer Z0 Z1
        interlayer Z0 Z1

    [mapping]
    kappa_policy = one_norm
    kappa_shift = 0.0

    [output]
    output_dir = runs/example

beta_list entries are either explicit values or start:stop:step ranges
(inclusive endpoints); every beta must sit on the dt grid.  A generic model
replaces the ashkin_teller keys with `terms_file = path` and `n_sites = N`.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .mapping import KappaPolicy, parse_bilayer_terms
from .models import ashkin_teller_terms
from .paulis import StateVector

_KNOWN_KEYS = {
    "config": {"schema_version"},
    "model": {
        "type", "l", "j", "h", "lambda_j", "lambda_h", "boundary", "init",
        "terms_file", "n_sites",
    },
    "schedule": {"dt", "beta_list"},
    "sampler": {
        "mode", "n_chains", "n_updates", "burn_in", "thinning", "n_batches",
        "master_seed", "threads",
    },
    "observables": {"observables"},
    "mapping": {"kappa_policy", "kappa_shift"},
    "output": {"output_dir"},
}


@dataclass
class RunConfig:
    model_type: str
    init: str
    dt: float
    beta_list: list  # of (text, float)
    mode: str = "weak"
    n_chains: int = 8
    n_updates: int = 10_000
    burn_in: int | None = None
    thinning: int | None = None
    n_batches: int = 16
    master_seed: int = 0
    threads: int = 1
    observables: list = field(default_factory=list)  # of (kind, text)
    kappa_policy: KappaPolicy = field(default_factory=KappaPolicy)
    output_dir: str = "runs/out"
    # ashkin_teller
    L: int = 0
    J: float = 1.0
    h: float = 0.3
    lambda_J: float = 0.5
    lambda_h: float = 0.5
    boundary: str = "open"
    # generic
    terms_file: str = ""
    n_sites: int | None = None

    def bilayer_terms(self):
        if self.model_type == "ashkin_teller":
            return ashkin_teller_terms(
                self.L, self.J, self.h, self.lambda_J, self.lambda_h, self.boundary
            )
        text = Path(self.terms_file).read_text()
        return parse_bilayer_terms(text).terms

    def resolved_n_sites(self) -> int:
        if self.model_type == "ashkin_teller":
            return self.L
        if self.n_sites is not None:
            return self.n_sites
        terms = self.bilayer_terms()
        return max((t.max_site for t in terms if t.factors), default=-1) + 1

    def init_state(self) -> StateVector:
        n = self.resolved_n_sites()
        if len(self.init) != n:
            raise ConfigError(
                f"init bitstring length {len(self.init)} does not match {n} sites"
            )
        return StateVector.from_bitstring(self.init)


def _parse_beta_list(text: str, dt: float) -> list:
    out = []
    for token in text.replace(",", " ").split():
        if ":" in token:
            parts = token.split(":")
            if len(parts) != 3:
                raise ConfigError(f"bad beta range {token!r}; expected start:stop:step")
            start, stop, step = (float(p) for p in parts)
            if step <= 0:
                raise ConfigError(f"beta range step must be positive in {token!r}")
            count = int(round((stop - start) / step))
            vals = [round(start + k * step, 10) for k in range(count + 1)]
        else:
            vals = [round(float(token), 10)]
        for v in vals:
            if v < 0:
                raise ConfigError(f"beta must be non-negative, got {v}")
            steps = v / dt
            if abs(steps - round(steps)) > 1e-9:
                raise ConfigError(f"beta={v} is not a multiple of dt={dt}")
            out.append((repr(v), v))
    if not out:
        raise ConfigError("beta_list is empty")
    return out


def _parse_observables(text: str) -> list:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        kind, _, rest = line.partition(" ")
        if kind not in ("intralayer", "interlayer"):
            raise ConfigError(f"observable kind must be intralayer/interlayer: {line!r}")
        if not rest.strip():
            raise ConfigError(f"observable line missing Pauli text: {line!r}")
        out.append((kind, " ".join(rest.split())))
    if not out:
        raise ConfigError("no observables configured")
    return out


def load_config(path: str | Path) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    version = get("config", "schema_version")
    if version is None:
        raise ConfigError("missing [config] schema_version")
    if version.strip() != "1":
        raise ConfigError(f"unsupported schema_version {version!r}")

    model_type = (get("model", "type") or "").strip()
    if model_type not in ("ashkin_teller", "generic"):
        raise ConfigError(f"model type must be ashkin_teller or generic, got {model_type!r}")

    try:
        dt = float(get("schedule", "dt", ""))
    except ValueError as exc:
        raise ConfigError(f"bad or missing schedule dt: {exc}") from None
    if dt <= 0:
        raise ConfigError("dt must be positive")
    beta_text = get("schedule", "beta_list")
    if beta_text is None:
        raise ConfigError("missing schedule beta_list")

    def get_int(section, key, default):
        raw = get(section, key)
        if raw is None or not raw.strip():
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key} must be an integer, got {raw!r}") from None

    def get_float(section, key, default):
        raw = get(section, key)
        if raw is None or not raw.strip():
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key} must be a number, got {raw!r}") from None

    mode = (get("sampler", "mode", "weak") or "weak").strip()
    if mode not in ("weak", "strong"):
        raise ConfigError(f"sampler mode must be weak or strong, got {mode!r}")

    master_seed = get_int("sampler", "master_seed", 0)
    if not 0 <= master_seed < 2**64:
        raise ConfigError("master_seed must fit in 64 bits")

    policy_name = (get("mapping", "kappa_policy", "one_norm") or "one_norm").strip()
    kappa_shift = get_float("mapping", "kappa_shift", 0.0)
    try:
        policy = KappaPolicy(policy_name, kappa_shift)
    except Exception as exc:
        raise ConfigError(str(exc)) from None

    obs_text = get("observables", "observables")
    if obs_text is None:
        raise ConfigError("missing [observables] observables")

    init = (get("model", "init", "") or "").strip()
    if not init or any(ch not in "01" for ch in init):
        raise ConfigError("model init must be a nonempty bitstring of 0/1")

    cfg = RunConfig(
        model_type=model_type,
        init=init,
        dt=dt,
        beta_list=_parse_beta_list(beta_text, dt),
        mode=mode,
        n_chains=get_int("sampler", "n_chains", 8),
        n_updates=get_int("sampler", "n_updates", 10_000),
        burn_in=get_int("sampler", "burn_in", None),
        thinning=get_int("sampler", "thinning", None),
        n_batches=get_int("sampler", "n_batches", 16),
        master_seed=master_seed,
        threads=get_int("sampler", "threads", 1),
        observables=_parse_observables(obs_text),
        kappa_policy=policy,
        output_dir=(get("output", "output_dir", "runs/out") or "runs/out").strip(),
        L=get_int("model", "l", 0),
        J=get_float("model", "j", 1.0),
        h=get_float("model", "h", 0.3),
        lambda_J=get_float("model", "lambda_j", 0.5),
        lambda_h=get_float("model", "lambda_h", 0.5),
        boundary=(get("model", "boundary", "open") or "open").strip(),
        terms_file=(get("model", "terms_file", "") or "").strip(),
        n_sites=get_int("model", "n_sites", None),
    )
    if cfg.model_type == "ashkin_teller":
        if cfg.L < 2:
            raise ConfigError("ashkin_teller model needs L >= 2")
        if cfg.boundary not in ("open", "periodic"):
            raise ConfigError("boundary must be open or periodic")
    else:
        if not cfg.terms_file:
            raise ConfigError("generic model needs terms_file")
    if cfg.n_chains < 1:
        raise ConfigError("n_chains must be >= 1")
    if cfg.n_updates < 1:
        raise ConfigError("n_updates must be >= 1")
    return cfg


def config_summary_lines(cfg: RunConfig) -> list:
    """Resolved key = value lines for the manifest."""
    pairs = [
        ("model.type", cfg.model_type),
        ("model.init", cfg.init),
        ("schedule.dt", repr(cfg.dt)),
        ("schedule.beta_list", " ".join(t for t, _ in cfg.beta_list)),
        ("sampler.mode", cfg.mode),
        ("sampler.n_chains", cfg.n_chains),
        ("sampler.n_updates", cfg.n_updates),
        ("sampler.burn_in", "default" if cfg.burn_in is None else cfg.burn_in),
        ("sampler.thinning", "default" if cfg.thinning is None else cfg.thinning),
        ("sampler.n_batches", cfg.n_batches),
        ("sampler.master_seed", cfg.master_seed),
        ("sampler.threads", cfg.threads),
        ("mapping.kappa_policy", cfg.kappa_policy.name),
        ("mapping.kappa_shift", repr(cfg.kappa_policy.shift)),
        ("output.output_dir", cfg.output_dir),
    ]
    if cfg.model_type == "ashkin_teller":
        pairs += [
            ("model.L", cfg.L),
            ("model.J", repr(cfg.J)),
            ("model.h", repr(cfg.h)),
            ("model.lambda_J", repr(cfg.lambda_J)),
            ("model.lambda_h", repr(cfg.lambda_h)),
            ("model.boundary", cfg.boundary),
        ]
    else:
        pairs += [
            ("model.terms_file", cfg.terms_file),
            ("model.n_sites", cfg.resolved_n_sites()),
        ]
    pairs += [("observable." + kind, text) for kind, text in cfg.observables]
    return [f"{k} = {v}" for k, v in pairs]
