"""Pauli strings, real-coefficient operator sums, and dense statevector kernels.

Conventions used throughout the package:

* Site 0 is the least significant bit of a computational basis index.
* A Pauli string is stored as an (x_mask, z_mask) pair.  Site ``j`` carries
  X if only bit ``j`` of ``x_mask`` is set, Z if only bit ``j`` of ``z_mask``
  is set, and Y if both are set.  The represented operator is the Hermitian
  product of the single-site letters, i.e. ``i**popcount(x & z) * X^x * Z^z``.
* Operator sums keep real coefficients only; everything in this package is
  built from Hermitian strings with real weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import BilayerError

_SINGLE_SITE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}


@dataclass(frozen=True, order=True)
class PauliString:
    """Hermitian Pauli string on ``n_sites`` qubits, encoded as bit masks."""

    n_sites: int
    x_mask: int = 0
    z_mask: int = 0

    def __post_init__(self):
        if self.n_sites < 0:
            raise ValueError("n_sites must be non-negative")
        top = 1 << self.n_sites
        if not (0 <= self.x_mask < top and 0 <= self.z_mask < top):
            raise ValueError("mask outside of site range")

    @property
    def weight(self) -> int:
        """Number of non-identity sites."""
        return (self.x_mask | self.z_mask).bit_count()

    @property
    def is_identity(self) -> bool:
        return self.x_mask == 0 and self.z_mask == 0

    @property
    def phase(self) -> complex:
        """Global phase i**(#Y sites) making the X^x Z^z product Hermitian."""
        return 1j ** ((self.x_mask & self.z_mask).bit_count() % 4)

    def letter(self, site: int) -> str:
        x = (self.x_mask >> site) & 1
        z = (self.z_mask >> site) & 1
        return "IXZY"[x + 2 * z]

    @classmethod
    def from_text(cls, text: str, n_sites: int) -> "PauliString":
        """Parse ``"X3 Z0 Y7"`` style token lists; ``"I"`` is the identity."""
        text = text.strip()
        if text == "I" or text == "":
            return cls(n_sites)
        x = z = 0
        seen = set()
        for tok in text.split():
            letter, sitestr = tok[0].upper(), tok[1:]
            if letter not in "XYZ" or not sitestr.isdigit():
                raise BilayerError(f"bad Pauli token {tok!r}")
            site = int(sitestr)
            if site >= n_sites:
                raise BilayerError(f"site {site} out of range for n_sites={n_sites}")
            if site in seen:
                raise BilayerError(f"duplicate site {site} in {text!r}")
            seen.add(site)
            if letter in ("X", "Y"):
                x |= 1 << site
            if letter in ("Z", "Y"):
                z |= 1 << site
        return cls(n_sites, x, z)

    def to_text(self) -> str:
        if self.is_identity:
            return "I"
        toks = []
        mask = self.x_mask | self.z_mask
        for site in range(self.n_sites):
            if (mask >> site) & 1:
                toks.append(f"{self.letter(site)}{site}")
        return " ".join(toks)

    def to_matrix(self) -> np.ndarray:
        """Dense matrix, built by Kronecker products (site 0 fastest index)."""
        mats = [_SINGLE_SITE[self.letter(s)] for s in range(self.n_sites)]
        return reduce(np.kron, reversed(mats), np.eye(1, dtype=complex))

    def __str__(self) -> str:
        return self.to_text()


def _sign_table(x_mask: int, z_mask: int, dim: int) -> np.ndarray:
    """(-1)**parity(z & (c ^ x)) for every basis index c."""
    idx = np.arange(dim, dtype=np.uint32)
    par = np.bitwise_count((idx ^ np.uint32(x_mask)) & np.uint32(z_mask)) & 1
    return 1.0 - 2.0 * par.astype(np.float64)


def pauli_apply_amps(p: PauliString, amps: np.ndarray) -> np.ndarray:
    """Apply ``p`` to an amplitude array along its last axis.

    ``(P psi)[c] = phase * (-1)**parity(z & (c ^ x)) * psi[c ^ x]``.
    """
    dim = amps.shape[-1]
    if p.is_identity:
        return amps.copy()
    idx = np.arange(dim)
    src = idx ^ p.x_mask
    fac = p.phase * _sign_table(p.x_mask, p.z_mask, dim)
    return fac * amps[..., src]


@dataclass
class StateVector:
    """Dense state on ``n_sites`` qubits; ``amps`` has length 2**n_sites."""

    n_sites: int
    amps: np.ndarray

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=complex)
        if self.amps.shape != (1 << self.n_sites,):
            raise BilayerError(
                f"amplitude length {self.amps.shape} does not match n_sites={self.n_sites}"
            )

    @classmethod
    def from_bitstring(cls, bits: str) -> "StateVector":
        """Product basis state; character k of ``bits`` is site k."""
        if bits == "":
            return cls(0, np.ones(1, dtype=complex))
        if set(bits) - {"0", "1"}:
            raise BilayerError(f"init bitstring must be 0/1, got {bits!r}")
        n = len(bits)
        amps = np.zeros(1 << n, dtype=complex)
        index = sum((1 << k) for k, c in enumerate(bits) if c == "1")
        amps[index] = 1.0
        return cls(n, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise BilayerError("cannot normalize the zero vector")
        return StateVector(self.n_sites, self.amps / n)

    def copy(self) -> "StateVector":
        return StateVector(self.n_sites, self.amps.copy())


def inner(bra: StateVector, ket: StateVector) -> complex:
    """<bra|ket> with conjugation on the first argument."""
    if bra.n_sites != ket.n_sites:
        raise BilayerError("inner product between states of different size")
    return complex(np.vdot(bra.amps, ket.amps))


def pauli_apply(p: PauliString, state: StateVector) -> StateVector:
    if p.n_sites != state.n_sites:
        raise BilayerError("Pauli and state sizes differ")
    return StateVector(state.n_sites, pauli_apply_amps(p, state.amps))


def pauli_rotation_apply(state: StateVector, p: PauliString, theta: float, sign: int = 1) -> StateVector:
    """exp(i * sign * theta * P) |state>; unitary since P**2 = I.

    ``sign`` must be +1 or -1 and selects the two Kraus branches of the
    weak-jump unraveling.
    """
    if sign not in (1, -1):
        raise BilayerError("sign must be +1 or -1")
    rotated = pauli_apply_amps(p, state.amps)
    amps = np.cos(theta) * state.amps + (1j * sign * np.sin(theta)) * rotated
    return StateVector(state.n_sites, amps)


def imaginary_term_apply(state: StateVector, p: PauliString, tau: float) -> StateVector:
    """exp(-tau * P) |state| = cosh(tau)|psi> - sinh(tau) P|psi> (unnormalized)."""
    if not np.isfinite(tau):
        raise BilayerError("tau must be finite")
    rotated = pauli_apply_amps(p, state.amps)
    amps = np.cosh(tau) * state.amps - np.sinh(tau) * rotated
    return StateVector(state.n_sites, amps)


class OperatorSum:
    """Real-weighted sum of Hermitian Pauli strings in a canonical term order.

    Terms are merged, zero coefficients dropped, and the remainder sorted by
    (x_mask, z_mask).  The canonical order matters: the term-split propagators
    in the trajectory engine and in the exact channel apply factors in exactly
    this order.
    """

    __slots__ = ("n_sites", "terms")

    def __init__(self, n_sites: int, terms=()):
        merged: dict[tuple[int, int], float] = {}
        for coeff, p in terms:
            if p.n_sites != n_sites:
                raise BilayerError("term size differs from operator size")
            c = float(coeff)
            key = (p.x_mask, p.z_mask)
            merged[key] = merged.get(key, 0.0) + c
        self.n_sites = n_sites
        self.terms = tuple(
            (c, PauliString(n_sites, x, z))
            for (x, z), c in sorted(merged.items())
            if c != 0.0
        )

    @classmethod
    def zero(cls, n_sites: int) -> "OperatorSum":
        return cls(n_sites)

    @classmethod
    def from_text(cls, text: str, n_sites: int, coeff: float = 1.0) -> "OperatorSum":
        return cls(n_sites, [(coeff, PauliString.from_text(text, n_sites))])

    def __add__(self, other: "OperatorSum") -> "OperatorSum":
        if other.n_sites != self.n_sites:
            raise BilayerError("operator sizes differ")
        return OperatorSum(self.n_sites, list(self.terms) + list(other.terms))

    def scaled(self, factor: float) -> "OperatorSum":
        return OperatorSum(self.n_sites, [(factor * c, p) for c, p in self.terms])

    def plus_identity(self, shift: float) -> "OperatorSum":
        return OperatorSum(
            self.n_sites, list(self.terms) + [(shift, PauliString(self.n_sites))]
        )

    @property
    def identity_coefficient(self) -> float:
        for c, p in self.terms:
            if p.is_identity:
                return c
        return 0.0

    def non_identity(self) -> "OperatorSum":
        return OperatorSum(self.n_sites, [(c, p) for c, p in self.terms if not p.is_identity])

    def one_norm(self) -> float:
        """Sum of |coefficients|; bounds the operator norm from above."""
        return float(sum(abs(c) for c, _ in self.terms))

    def is_zero(self) -> bool:
        return not self.terms

    def apply_amps(self, amps: np.ndarray) -> np.ndarray:
        out = np.zeros_like(amps, dtype=complex)
        for c, p in self.terms:
            out += c * pauli_apply_amps(p, amps)
        return out

    def apply(self, state: StateVector) -> StateVector:
        return StateVector(state.n_sites, self.apply_amps(state.amps))

    def matrix_element(self, bra: StateVector, ket: StateVector) -> complex:
        """sum_k c_k <bra|P_k|ket>."""
        return complex(np.vdot(bra.amps, self.apply_amps(ket.amps)))

    def expectation(self, state: StateVector) -> float:
        val = self.matrix_element(state, state)
        return float(val.real)

    def to_matrix(self) -> np.ndarray:
        dim = 1 << self.n_sites
        out = np.zeros((dim, dim), dtype=complex)
        for c, p in self.terms:
            out += c * p.to_matrix()
        return out

    def describe(self) -> str:
        if not self.terms:
            return "0"
        return " + ".join(f"{c:+.12g} * {p.to_text()}" for c, p in self.terms)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, OperatorSum)
            and self.n_sites == other.n_sites
            and self.terms == other.terms
        )

    def __repr__(self) -> str:
        return f"OperatorSum({self.n_sites}, {self.describe()})"
