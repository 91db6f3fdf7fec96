import numpy as np
import pytest

from bilayermc import (
    KappaPolicy,
    ashkin_teller_terms,
    build_dynamics,
    decompose_bilayer,
    dimer_terms,
)


@pytest.fixture
def at2_dynamics():
    """L = 2 coupled-chain dynamics, weak unraveling, default kappa policy."""
    terms = ashkin_teller_terms(2, 1.0, 0.3, 0.5, 0.5, "open")
    return build_dynamics(decompose_bilayer(terms))


@pytest.fixture
def dimer_spec():
    return decompose_bilayer(dimer_terms(1.0, 0.3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_at_dynamics(L, lam=0.5, mode="weak", J=1.0, h=0.3, boundary="open", shift=0.0):
    terms = ashkin_teller_terms(L, J, h, lam, lam, boundary)
    policy = KappaPolicy(shift=shift)
    return build_dynamics(decompose_bilayer(terms), policy, mode=mode)
