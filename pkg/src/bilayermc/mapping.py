"""Decomposition of bilayer Hamiltonians into monolayer open-system dynamics.

A valid bilayer operator has the shape

    H_total = H (layer l) + conj(H) (layer r) - sum_i J_i * O_i(l) * conj(O_i)(r)

with J_i >= 0, where conj() is the antiunitary single-layer conjugation that
sends every Pauli letter to minus itself (so a string of weight w picks up
(-1)**w).  Such an operator maps onto monolayer dynamics with Pauli jump
operators sqrt(J_i) O_i and a non-Hermitian drift h_eff; the generator of the
monolayer channel then equals -(kappa_total + H_total) in the doubled-space
representation, which validate_mapping checks matrix-for-matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BilayerError,
    NonFactorizable,
    PositivityFailure,
    SignViolation,
    SizeLimitExceeded,
    SymmetryViolation,
)
from .paulis import OperatorSum, PauliString

_LETTER_BITS = {"X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


@dataclass(frozen=True)
class BilayerTerm:
    """One product term: real coefficient times single-site letters on (site, layer)."""

    coefficient: float
    factors: tuple  # of (site, layer, letter)

    def __post_init__(self):
        seen = set()
        for site, layer, letter in self.factors:
            if layer not in ("l", "r"):
                raise BilayerError(f"layer must be 'l' or 'r', got {layer!r}")
            if letter not in _LETTER_BITS:
                raise BilayerError(f"letter must be X, Y or Z, got {letter!r}")
            if site < 0:
                raise BilayerError("negative site index")
            if (site, layer) in seen:
                raise BilayerError(f"duplicate factor on site {site}, layer {layer}")
            seen.add((site, layer))

    def layer_masks(self, layer: str) -> tuple[int, int]:
        x = z = 0
        for site, lay, letter in self.factors:
            if lay != layer:
                continue
            bx, bz = _LETTER_BITS[letter]
            x |= bx << site
            z |= bz << site
        return x, z

    def max_site(self) -> int:
        return max((site for site, _, _ in self.factors), default=-1)

    def describe(self) -> str:
        if not self.factors:
            return f"{self.coefficient:+.12g}"
        toks = " ".join(f"{letter}{site}{layer}" for site, layer, letter in self.factors)
        return f"{self.coefficient:+.12g} {toks}"


def term(coefficient: float, *factor_tokens: str) -> BilayerTerm:
    """Build a BilayerTerm from tokens like ``"Z0l"``, ``"X3r"``."""
    factors = []
    for tok in factor_tokens:
        factors.append(_parse_factor(tok))
    return BilayerTerm(float(coefficient), tuple(factors))


def _parse_factor(tok: str):
    tok = tok.strip()
    if len(tok) < 3 or tok[0].upper() not in _LETTER_BITS or tok[-1] not in ("l", "r"):
        raise BilayerError(f"bad factor token {tok!r}; expected e.g. Z0l")
    sitestr = tok[1:-1]
    if not sitestr.isdigit():
        raise BilayerError(f"bad site in factor token {tok!r}")
    return (int(sitestr), tok[-1], tok[0].upper())


@dataclass
class TermFile:
    """Parsed generic-model term list plus source line numbers for diagnostics."""

    terms: list
    lines: list

    def line_of(self, t: BilayerTerm):
        for candidate, line in zip(self.terms, self.lines):
            if candidate is t:
                return line
        return None


def parse_bilayer_terms(text: str) -> TermFile:
    """Parse the term-list format: one term per line,
    ``<coefficient> <letter><site><layer> ...``; '#' comments, blanks ignored.

    A line holding only a coefficient denotes an identity term.
    """
    terms, lines = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            coeff = float(parts[0])
        except ValueError:
            raise BilayerError(f"line {lineno}: first token must be a coefficient: {raw!r}")
        try:
            factors = tuple(_parse_factor(tok) for tok in parts[1:])
            terms.append(BilayerTerm(coeff, factors))
        except BilayerError as exc:
            raise BilayerError(f"line {lineno}: {exc}") from exc
        lines.append(lineno)
    return TermFile(terms, lines)


def antiunitary_conjugate(op: OperatorSum) -> OperatorSum:
    """Layer conjugation: every Pauli string of weight w maps to (-1)**w times itself.

    Involution; real coefficients stay real.
    """
    return OperatorSum(
        op.n_sites, [((-1.0) ** p.weight * c, p) for c, p in op.terms]
    )


@dataclass(frozen=True)
class BilayerSpec:
    """Decomposed bilayer operator: single-layer H plus non-negative couplings."""

    n_sites: int
    intralayer: OperatorSum
    couplings: tuple  # of (J_i, PauliString), J_i > 0

    def __post_init__(self):
        for J, p in self.couplings:
            if J < 0:
                raise SignViolation(f"coupling {p.to_text()} has negative rate {J}")
            if p.is_identity:
                raise BilayerError("identity coupling operator")


def infer_n_sites(terms) -> int:
    m = -1
    for t in terms:
        m = max(m, t.max_site())
    if m < 0:
        raise BilayerError("term list has no sites; cannot infer system size")
    return m + 1


def decompose_bilayer(terms, n_sites: int | None = None, tol: float = 1e-12) -> BilayerSpec:
    """Split bilayer terms into (H, couplings); raise if the shape is violated.

    Layer-r-only terms must equal the antiunitary image of the layer-l-only
    terms (SymmetryViolation otherwise).  Every cross-layer term must read
    O on layer l times the same pattern on layer r (NonFactorizable
    otherwise), with extracted rate J = -coefficient * (-1)**weight required
    non-negative (SignViolation otherwise).  Identity terms are split evenly
    between the two layers.
    """
    if n_sites is None:
        n_sites = infer_n_sites(terms)

    l_terms, r_terms, cross, ident = [], [], [], 0.0
    for t in terms:
        xl, zl = t.layer_masks("l")
        xr, zr = t.layer_masks("r")
        on_l = xl | zl != 0
        on_r = xr | zr != 0
        if t.max_site() >= n_sites:
            raise BilayerError(f"term {t.describe()} exceeds n_sites={n_sites}")
        if not on_l and not on_r:
            ident += t.coefficient
        elif on_l and not on_r:
            l_terms.append((t.coefficient, PauliString(n_sites, xl, zl)))
        elif on_r and not on_l:
            r_terms.append((t.coefficient, PauliString(n_sites, xr, zr)))
        else:
            cross.append((t, PauliString(n_sites, xl, zl), PauliString(n_sites, xr, zr)))

    intralayer = OperatorSum(n_sites, l_terms).plus_identity(ident / 2.0)
    r_input = OperatorSum(n_sites, r_terms).plus_identity(ident / 2.0)
    expected_r = antiunitary_conjugate(intralayer)
    _check_symmetry(r_input, expected_r, tol)

    merged: dict[tuple[int, int], float] = {}
    owners: dict[tuple[int, int], BilayerTerm] = {}
    for t, pl, pr in cross:
        if (pl.x_mask, pl.z_mask) != (pr.x_mask, pr.z_mask):
            raise NonFactorizable(
                f"cross term {t.describe()} is not of the form O(l) * conj(O)(r): "
                f"layer patterns {pl.to_text()} vs {pr.to_text()} differ",
                term=t,
            )
        key = (pl.x_mask, pl.z_mask)
        merged[key] = merged.get(key, 0.0) + t.coefficient
        owners.setdefault(key, t)

    couplings = []
    for (x, z), c in sorted(merged.items()):
        p = PauliString(n_sites, x, z)
        J = -c * (-1.0) ** p.weight
        if J < -tol:
            raise SignViolation(
                f"coupling on {p.to_text()} has extracted rate {J:.6g} < 0 "
                f"(from term {owners[(x, z)].describe()})",
                term=owners[(x, z)],
            )
        if J > tol:
            couplings.append((float(J), p))
    return BilayerSpec(n_sites, intralayer, tuple(couplings))


def _check_symmetry(r_input: OperatorSum, expected: OperatorSum, tol: float):
    have = {(p.x_mask, p.z_mask): c for c, p in r_input.terms}
    want = {(p.x_mask, p.z_mask): c for c, p in expected.terms}
    for key in sorted(set(have) | set(want)):
        a, b = have.get(key, 0.0), want.get(key, 0.0)
        if abs(a - b) > tol:
            p = PauliString(expected.n_sites, *key)
            raise SymmetryViolation(
                f"layer-r coefficient of {p.to_text()} is {a:.12g}, but the "
                f"antiunitary image of layer l requires {b:.12g}"
            )


# --- kappa policies -------------------------------------------------------


@dataclass(frozen=True)
class KappaPolicy:
    """Rule assigning the decay constant kappa_i to every coupling.

    name = 'one_norm': kappa_i = 1-norm of the coefficients of 2 h_i plus J_i
    (always certifies positivity).  name = 'zero': kappa_i = 0, valid only
    when the positivity check already passes without a shift.  ``shift`` is
    added uniformly to every kappa_i; estimator ratios are invariant under it.
    """

    name: str = "one_norm"
    shift: float = 0.0

    def kappa(self, h_i: OperatorSum, J_i: float) -> float:
        if self.name == "one_norm":
            base = h_i.scaled(2.0).one_norm() + J_i
        elif self.name == "zero":
            base = 0.0
        else:
            raise BilayerError(f"unknown kappa policy {self.name!r}")
        return base + self.shift


@dataclass(frozen=True)
class DynamicsSpec:
    """Monolayer open-system data: Pauli jumps, drift h_eff, total decay rate."""

    n_sites: int
    mode: str  # 'weak' or 'strong'
    jumps: tuple  # of (amplitude, PauliString); amplitude = sqrt(J_i)
    h_eff: OperatorSum
    kappa_total: float
    kappas: tuple = field(default=())  # per-coupling kappa_i, catch-all last

    def __post_init__(self):
        if self.mode not in ("weak", "strong"):
            raise BilayerError(f"mode must be 'weak' or 'strong', got {self.mode!r}")

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)


def partition_drift(spec: BilayerSpec):
    """Assign the intralayer terms to couplings by support intersection.

    A term intersecting k coupling supports contributes coefficient/k to each
    of those couplings' h_i.  Identity terms are split across couplings in
    proportion to J_i (so the locked case h_i = J_i/2 * I needs no kappa).
    Terms intersecting no coupling go to a trailing catch-all with no jump.
    Returns a list of OperatorSum of length len(couplings) + 1.
    """
    n = spec.n_sites
    supports = [(p.x_mask | p.z_mask) for _, p in spec.couplings]
    parts: list[list] = [[] for _ in range(len(supports) + 1)]
    total_J = sum(J for J, _ in spec.couplings)
    for c, p in spec.intralayer.terms:
        if p.is_identity:
            if total_J > 0.0:
                for i, (J, _) in enumerate(spec.couplings):
                    parts[i].append((c * J / total_J, p))
            else:
                parts[-1].append((c, p))
            continue
        mask = p.x_mask | p.z_mask
        hits = [i for i, s in enumerate(supports) if s & mask]
        if not hits:
            parts[-1].append((c, p))
        else:
            for i in hits:
                parts[i].append((c / len(hits), p))
    return [OperatorSum(n, terms) for terms in parts]


def _support_restricted_matrix(op: OperatorSum) -> np.ndarray:
    """Dense matrix of ``op`` on its non-identity support sites only."""
    mask = 0
    for _, p in op.terms:
        mask |= p.x_mask | p.z_mask
    sites = [s for s in range(op.n_sites) if (mask >> s) & 1]
    k = len(sites)
    remap = {site: j for j, site in enumerate(sites)}

    def squeeze(m):
        out = 0
        for site, j in remap.items():
            if (m >> site) & 1:
                out |= 1 << j
        return out

    compact = OperatorSum(
        k, [(c, PauliString(k, squeeze(p.x_mask), squeeze(p.z_mask))) for c, p in op.terms]
    )
    return compact.to_matrix()


def check_positivity(kappa_i: float, h_i: OperatorSum, J_i: float, tol: float = 1e-10):
    """Verify kappa_i + 2 h_i - J_i * I >= 0.

    Uses exact diagonalization on the support of h_i when that support has at
    most 10 sites (always at target sizes), the coefficient 1-norm bound
    otherwise.  Raises PositivityFailure when the check fails.
    """
    m = h_i.scaled(2.0).plus_identity(kappa_i - J_i)
    support = 0
    for _, p in m.terms:
        support |= p.x_mask | p.z_mask
    if support.bit_count() <= 10:
        mat = _support_restricted_matrix(m)
        lo = float(np.linalg.eigvalsh(mat)[0]) if mat.size else m.identity_coefficient
        if lo < -tol:
            raise PositivityFailure(
                f"kappa + 2 h_i - J_i is not PSD (min eigenvalue {lo:.6g}); "
                f"increase kappa for this coupling"
            )
    else:
        certified = m.identity_coefficient - m.non_identity().one_norm()
        if certified < -tol:
            raise PositivityFailure(
                "1-norm bound cannot certify positivity of kappa + 2 h_i - J_i; "
                "increase kappa for this coupling"
            )


def build_dynamics(
    spec: BilayerSpec,
    kappa_policy: KappaPolicy | None = None,
    mode: str = "weak",
) -> DynamicsSpec:
    """Assemble jump amplitudes, h_eff and kappa_total from a decomposition.

    h_eff = sum_i (kappa_i + 2 h_i - J_i * I) / 2; its non-identity part
    always equals the intralayer H regardless of the kappa policy.
    """
    policy = kappa_policy or KappaPolicy()
    parts = partition_drift(spec)
    n = spec.n_sites
    jumps = []
    kappas = []
    h_eff = OperatorSum.zero(n)
    rates = [J for J, _ in spec.couplings] + [0.0]
    for (h_i, J_i) in zip(parts, rates):
        kappa_i = policy.kappa(h_i, J_i)
        check_positivity(kappa_i, h_i, J_i)
        kappas.append(kappa_i)
        h_eff = h_eff + h_i.plus_identity((kappa_i - J_i) / 2.0)
    for J, p in spec.couplings:
        jumps.append((float(np.sqrt(J)), p))
    return DynamicsSpec(
        n_sites=n,
        mode=mode,
        jumps=tuple(jumps),
        h_eff=h_eff,
        kappa_total=float(sum(kappas)),
        kappas=tuple(kappas),
    )


# --- validation against the doubled space ---------------------------------


def bilayer_operator_sum(terms, n_sites: int) -> OperatorSum:
    """Bilayer terms as an OperatorSum on 2*n_sites qubits.

    Layer l occupies sites 0..n-1 (low bits), layer r sites n..2n-1.
    """
    out = []
    for t in terms:
        xl, zl = t.layer_masks("l")
        xr, zr = t.layer_masks("r")
        if t.max_site() >= n_sites:
            raise BilayerError(f"term {t.describe()} exceeds n_sites={n_sites}")
        p = PauliString(2 * n_sites, xl | (xr << n_sites), zl | (zr << n_sites))
        out.append((t.coefficient, p))
    return OperatorSum(2 * n_sites, out)


def lindblad_superoperator(dyn: DynamicsSpec) -> np.ndarray:
    """Dense generator of the monolayer channel in the doubled space.

    The vectorization sends  A rho B  to  A (x) conj_T(B^T)  acting on layer l
    (low bits) and layer r (high bits) respectively; for the Hermitian pieces
    appearing here the r factor is the antiunitary layer conjugate.
    """
    n = dyn.n_sites
    if n > 6:
        raise SizeLimitExceeded("dense superoperator limited to n_sites <= 6")
    dim2 = 1 << (2 * n)
    eye = np.eye(1 << n, dtype=complex)
    out = np.zeros((dim2, dim2), dtype=complex)
    total_rate = 0.0
    for a, p in dyn.jumps:
        J = a * a
        total_rate += J
        omat = p.to_matrix()
        obar = (-1.0) ** p.weight * omat
        out += J * np.kron(obar, omat)
    hmat = dyn.h_eff.to_matrix()
    hbar = antiunitary_conjugate(dyn.h_eff).to_matrix()
    out -= np.kron(eye, hmat) + np.kron(hbar, eye)
    out -= total_rate * np.eye(dim2)
    return out


def validate_mapping(dyn: DynamicsSpec, terms) -> float:
    """Max absolute deviation between the channel generator and -(kappa + H_total).

    Small (< 1e-10) deviation certifies that the decomposition together with
    the kappa bookkeeping reproduces the doubled-space operator exactly.
    """
    n = dyn.n_sites
    if n > 6:
        raise SizeLimitExceeded("validate_mapping limited to n_sites <= 6")
    lhs = lindblad_superoperator(dyn)
    ham = bilayer_operator_sum(terms, n).to_matrix()
    rhs = -dyn.kappa_total * np.eye(1 << (2 * n)) - ham
    return float(np.max(np.abs(lhs - rhs)))
