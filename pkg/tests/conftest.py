import math

import numpy as np
import pytest

from fracsource.disc_spectrum import ModeCoefficients, build_spectrum
from fracsource.forward_model import SourceModel, flux_trace


@pytest.fixture(scope="session")
def spectrum30():
    return build_spectrum(30.0)


@pytest.fixture(scope="session")
def spectrum50():
    return build_spectrum(50.0)


def make_coeffs(spectrum, entries):
    """entries: {(m, k): complex} with m >= 0; pairs filled conjugate."""
    vals = np.zeros(len(spectrum), dtype=complex)
    for (m, k), c in entries.items():
        vals[spectrum.index_of(m, k)] = c
        if m != 0:
            vals[spectrum.index_of(-m, k)] = np.conj(c)
    return ModeCoefficients(values=vals)


REF_PIECE_1 = {(0, 1): 1.0, (1, 1): 0.5 + 0.3j, (2, 1): -0.4 + 0.2j}
REF_PIECE_2 = {(0, 1): -0.6, (1, 1): 0.8 - 0.1j, (2, 1): 0.25 + 0.45j}


@pytest.fixture(scope="session")
def reference_model(spectrum30):
    """The acceptance K=2 model: alpha=0.75, cuts=(0.2, 1.2, inf)."""
    p1 = make_coeffs(spectrum30, REF_PIECE_1)
    p2 = make_coeffs(spectrum30, REF_PIECE_2)
    return SourceModel(alpha=0.75, cuts=(0.2, 1.2, math.inf),
                       piece_coeffs=(p1, p2), spectrum=spectrum30)


@pytest.fixture(scope="session")
def reference_grid():
    return np.linspace(0.0, 4.0, 4001)


@pytest.fixture(scope="session")
def reference_traces(reference_model, reference_grid):
    return tuple(flux_trace(reference_model, th, reference_grid)
                 for th in (0.3, 1.3))


def random_source_model(spectrum, rng, k_pieces=None):
    """A random valid conjugate-symmetric model for property tests."""
    k_pieces = k_pieces or int(rng.integers(1, 4))
    alpha = float(rng.uniform(0.55, 0.95))
    c0 = float(rng.uniform(0.0, 0.4))
    cuts = [c0]
    for _ in range(k_pieces - 1):
        cuts.append(cuts[-1] + float(rng.uniform(0.5, 1.2)))
    cuts.append(math.inf)
    pieces = []
    for _ in range(k_pieces):
        vals = np.zeros(len(spectrum), dtype=complex)
        for lam, idx in spectrum.distinct_eigenvalues:
            c = complex(rng.normal(), rng.normal() if len(idx) == 2 else 0.0)
            vals[idx[0]] = c
            if len(idx) == 2:
                vals[idx[1]] = np.conj(c)
        pieces.append(ModeCoefficients(values=vals))
    return SourceModel(alpha=alpha, cuts=tuple(cuts), piece_coeffs=tuple(pieces),
                       spectrum=spectrum)
