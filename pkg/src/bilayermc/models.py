"""Built-in bilayer models: the coupled-chain benchmark and the two-site dimer."""

from __future__ import annotations

from .errors import BilayerError
from .mapping import BilayerTerm, term


def ashkin_teller_terms(
    L: int,
    J: float = 1.0,
    h: float = 0.3,
    lambda_J: float = 0.5,
    lambda_h: float = 0.5,
    boundary: str = "open",
) -> list[BilayerTerm]:
    """Two coupled transverse-field Ising chains with four-spin interlayer terms.

    Per bond:  J (Z_i Z_{i+1} on each layer) - J*lambda_J (Z_i Z_{i+1} on both);
    per site:  h X_i on layer l, -h X_i on layer r, +h*lambda_h X_i X_i across.
    """
    if L < 2:
        raise BilayerError("need at least two sites")
    if boundary not in ("open", "periodic"):
        raise BilayerError(f"boundary must be open or periodic, got {boundary!r}")
    bonds = [(i, i + 1) for i in range(L - 1)]
    if boundary == "periodic":
        bonds.append((L - 1, 0))
    terms = []
    for i, j in bonds:
        terms.append(term(J, f"Z{i}l", f"Z{j}l"))
        terms.append(term(J, f"Z{i}r", f"Z{j}r"))
        terms.append(term(-J * lambda_J, f"Z{i}l", f"Z{j}l", f"Z{i}r", f"Z{j}r"))
    for i in range(L):
        terms.append(term(h, f"X{i}l"))
        terms.append(term(-h, f"X{i}r"))
        terms.append(term(h * lambda_h, f"X{i}l", f"X{i}r"))
    return terms


def dimer_terms(J: float, h: float) -> list[BilayerTerm]:
    """Single-site pair: J X_l X_r + h Z_l - h Z_r."""
    return [term(J, "X0l", "X0r"), term(h, "Z0l"), term(-h, "Z0r")]
